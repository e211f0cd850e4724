use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tanglesim::config::{ExperimentConfig, Overrides, Scenario};
use tanglesim::metrics::orphanage_walk;
use tanglesim::runner::{load_record, run_experiment, RunnerError};
use tanglesim::theory;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "sim", about = "DAG ledger attack simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment scenario and export per-cell metrics.
    Run {
        /// TOML config file; flags override file values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenario: 1, 2, 3 or custom.
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(long)]
        k: Option<usize>,
        /// Maximum parent age in seconds, or "inf".
        #[arg(long, value_parser = parse_zeta)]
        zeta: Option<f64>,
        /// Comma-separated adversary fractions, e.g. 0.5 or 0.35,0.5,0.55.
        #[arg(long, value_delimiter = ',')]
        q: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        /// Total throughput in messages per second.
        #[arg(long)]
        lambda: Option<f64>,
        /// Output directory (falls back to $SIM_OUT_DIR, then the config).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print critical points and predicted tip-pool slopes.
    Theory {
        /// Comma-separated parent counts.
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 50.0)]
        lambda: f64,
        /// Also print the growth-law slope for these q values.
        #[arg(long, value_delimiter = ',')]
        q: Option<Vec<f64>>,
    },
    /// Re-run the orphanage walk on a stored run record.
    Walk {
        /// A per-cell output directory containing record.json.
        #[arg(long, value_name = "RUN_DIR")]
        input: PathBuf,
    },
}

fn parse_zeta(s: &str) -> Result<f64, String> {
    if s == "inf" {
        return Ok(f64::INFINITY);
    }
    s.parse::<f64>().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            scenario,
            k,
            zeta,
            q,
            seed,
            lambda,
            out_dir,
        } => {
            let out_dir = out_dir.or_else(|| std::env::var_os("SIM_OUT_DIR").map(PathBuf::from));
            let overrides = Overrides {
                scenario,
                k,
                zeta,
                q,
                seed,
                lambda_total: lambda,
                out_dir,
            };
            let experiment = match ExperimentConfig::parse(config.as_deref(), &overrides) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match run_experiment(&experiment) {
                Ok(dirs) => {
                    for dir in dirs {
                        println!("cell written: {}", dir.display());
                    }
                    println!("grid written: {}", experiment.out_dir.join("grid.json").display());
                    ExitCode::SUCCESS
                }
                Err(e @ RunnerError::Config(_)) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_CONFIG)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
        Command::Theory { k, lambda, q } => {
            println!("{:>4}  {:>8}", "k", "q_crit");
            for k in &k {
                match theory::critical_q(*k) {
                    Ok(qc) => println!("{k:>4}  {qc:>8.4}"),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(EXIT_CONFIG);
                    }
                }
            }
            if let Some(qs) = q {
                println!();
                println!("{:>4}  {:>6}  {:>8}  {:>16}", "k", "q", "lambda", "slope [tips/s]");
                for k in &k {
                    for q in &qs {
                        let slope = theory::tip_pool_slope(lambda, *q, *k);
                        println!("{k:>4}  {q:>6.3}  {lambda:>8.2}  {slope:>16.4}");
                    }
                }
            }
            ExitCode::SUCCESS
        }
        Command::Walk { input } => match load_record(&input) {
            Ok(versioned) => {
                let record = versioned.record;
                let report = orphanage_walk(
                    &record.canonical_store,
                    record.end_time,
                    record.params.protocol.zeta,
                );
                println!("run_id:            {}", record.params.run_id);
                println!("evaluated_at:      {:.6}", report.evaluated_at);
                println!("zeta:              {}", record.params.protocol.zeta);
                println!("total_eligible:    {}", report.total_eligible);
                println!("orphaned:          {}", report.orphaned);
                println!("rate:              {:.6}", report.rate);
                println!("confirmed_orphans: {}", report.confirmed_orphans.len());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_RUNTIME)
            }
        },
    }
}
