//! Experiment orchestration: config parsing, the three experiment
//! scenarios, parameter sweeps, and cell expansion.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryStrategy;
use crate::protocol::ProtocolParams;
use crate::simnet::{attack_then_idle, CellParams, IssuanceMode, Phase, TopologyKind};
use crate::theory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scenario {
    #[default]
    One,
    Two,
    Three,
    Custom,
}

impl Scenario {
    pub fn label(&self) -> &'static str {
        match self {
            Scenario::One => "1",
            Scenario::Two => "2",
            Scenario::Three => "3",
            Scenario::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Scenario::One),
            "2" => Ok(Scenario::Two),
            "3" => Ok(Scenario::Three),
            "custom" => Ok(Scenario::Custom),
            other => Err(format!("scenario must be 1, 2, 3 or custom, got {other}")),
        }
    }
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Str(String),
        }
        let raw = Raw::deserialize(d)?;
        let text = match &raw {
            Raw::Num(n) => n.to_string(),
            Raw::Str(s) => s.clone(),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryConfig {
    pub strategy: AdversaryStrategy,
    pub min_parents: usize,
    /// Own-tip memory cap; 0 means the default 10·k·λ·h.
    pub cap: usize,
    /// Messages per blowball; 0 means λ_A·interval.
    pub blowball_size: usize,
    /// Seconds between ball releases; 0 means ζ/2.
    pub blowball_interval: f64,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig {
            strategy: AdversaryStrategy::Orphanage,
            min_parents: 1,
            cap: 0,
            blowball_size: 0,
            blowball_interval: 0.0,
        }
    }
}

/// All protocol and scenario parameters for one experiment sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub k: usize,
    #[serde(with = "crate::serde_inf")]
    pub zeta: f64,
    pub theta: f64,
    pub lambda_total: f64,
    /// Adversary fractions to sweep; empty selects the built-in schedule
    /// for k ∈ {2, 4, 8, 16}, else [q_crit(k)].
    pub q_list: Vec<f64>,
    /// ζ values for scenario 3.
    pub zeta_list: Vec<f64>,
    pub honest_nodes: usize,
    pub adversary_nodes: usize,
    /// Attack length in multiples of ζ.
    pub attack_duration: f64,
    /// Idle recovery length in multiples of ζ.
    pub idle_duration: f64,
    pub topology: TopologyKind,
    /// Per-link delay bounds in milliseconds.
    pub delay_ms: (f64, f64),
    pub issuance: IssuanceMode,
    pub adversary: AdversaryConfig,
    pub seed: u64,
    pub sample_interval: f64,
    pub out_dir: PathBuf,
    /// Annotate when the mean honest tip pool crosses this value.
    pub tip_cap_warn: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::One,
            k: 2,
            zeta: 60.0,
            theta: 0.5,
            lambda_total: 50.0,
            q_list: Vec::new(),
            zeta_list: vec![30.0, 60.0, 120.0],
            honest_nodes: 7,
            adversary_nodes: 1,
            attack_duration: 12.0,
            idle_duration: 3.0,
            topology: TopologyKind::Complete,
            delay_ms: (50.0, 150.0),
            issuance: IssuanceMode::Poisson,
            adversary: AdversaryConfig::default(),
            seed: 1,
            sample_interval: 1.0,
            out_dir: PathBuf::from("out"),
            tip_cap_warn: 1200,
        }
    }
}

/// Per-k adversary-fraction schedules from the reference experiments; the
/// bold critical entries are 0.5, 0.75, 0.88, 0.94.
pub fn default_q_schedule(k: usize) -> Option<&'static [f64]> {
    match k {
        2 => Some(&[0.35, 0.40, 0.45, 0.50, 0.55]),
        4 => Some(&[0.60, 0.65, 0.70, 0.75, 0.80]),
        8 => Some(&[0.70, 0.75, 0.80, 0.88, 0.93]),
        16 => Some(&[0.80, 0.85, 0.90, 0.94, 0.99]),
        _ => None,
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("config key `{key}`: {message}")]
pub struct ConfigError {
    pub key: &'static str,
    pub message: String,
}

fn err(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key,
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses a TOML file and applies flag overrides on top.
    pub fn parse(
        file: Option<&Path>,
        overrides: &Overrides,
    ) -> Result<ExperimentConfig, ConfigError> {
        let mut config = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| err("config", format!("cannot read {}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| err("config", e.to_string()))?
            }
            None => ExperimentConfig::default(),
        };
        overrides.apply(&mut config);
        config.fill_defaults();
        config.validate()?;
        Ok(config)
    }

    /// Fills derived defaults (q schedule).
    pub fn fill_defaults(&mut self) {
        if self.q_list.is_empty() {
            self.q_list = match default_q_schedule(self.k) {
                Some(qs) => qs.to_vec(),
                None => theory::critical_q(self.k).map(|q| vec![q]).unwrap_or_default(),
            };
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k < 1 {
            return Err(err("k", format!("must be >= 1, got {}", self.k)));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(err("theta", format!("must be in (0, 1], got {}", self.theta)));
        }
        if self.lambda_total <= 0.0 {
            return Err(err(
                "lambda_total",
                format!("must be > 0, got {}", self.lambda_total),
            ));
        }
        if self.q_list.is_empty() {
            return Err(err("q_list", "must not be empty"));
        }
        for q in &self.q_list {
            if !(0.0..1.0).contains(q) {
                return Err(err("q_list", format!("q must be in [0, 1), got {q}")));
            }
        }
        if self.honest_nodes < 1 {
            return Err(err("honest_nodes", "need at least one honest node"));
        }
        if self.honest_nodes + self.adversary_nodes > 64 {
            return Err(err("honest_nodes", "at most 64 nodes are supported"));
        }
        if self.scenario == Scenario::One && self.zeta.is_infinite() {
            return Err(err("zeta", "scenario 1 requires finite zeta"));
        }
        if self.zeta < 0.0 {
            return Err(err("zeta", "must be >= 0"));
        }
        if self.scenario == Scenario::Three {
            if self.zeta_list.is_empty() {
                return Err(err("zeta_list", "scenario 3 needs at least one zeta"));
            }
            if self.zeta_list.iter().any(|z| !z.is_finite() || *z <= 0.0) {
                return Err(err("zeta_list", "zeta values must be finite and > 0"));
            }
            if self.q_list.len() != 1 {
                return Err(err("q_list", "scenario 3 sweeps zeta at a single q"));
            }
        }
        if self.delay_ms.0 < 0.0 || self.delay_ms.1 < self.delay_ms.0 {
            return Err(err("delay_ms", format!("invalid range {:?}", self.delay_ms)));
        }
        if self.attack_duration <= 0.0 {
            return Err(err("attack_duration", "must be > 0"));
        }
        if self.idle_duration < 0.0 {
            return Err(err("idle_duration", "must be >= 0"));
        }
        if self.sample_interval <= 0.0 {
            return Err(err("sample_interval", "must be > 0"));
        }
        if self.adversary.min_parents < 1 {
            return Err(err("adversary.min_parents", "must be >= 1"));
        }
        Ok(())
    }

    /// Mean end-to-end delay in seconds, the `h` bridging theory rates.
    pub fn mean_delay(&self) -> f64 {
        (self.delay_ms.0 + self.delay_ms.1) / 2.0 / 1000.0
    }

    fn delay_range_s(&self) -> (f64, f64) {
        (self.delay_ms.0 / 1000.0, self.delay_ms.1 / 1000.0)
    }

    fn adversary_cap(&self, zeta: f64) -> usize {
        if self.adversary.cap > 0 {
            return self.adversary.cap;
        }
        let h = self.mean_delay();
        let _ = zeta;
        ((10.0 * self.k as f64 * self.lambda_total * h).ceil() as usize).max(10)
    }

    fn cell(&self, q: f64, zeta: f64, phases: Vec<Phase>) -> CellParams {
        let seed = cell_seed(self.seed, self.k, q);
        let blowball_interval = if self.adversary.blowball_interval > 0.0 {
            self.adversary.blowball_interval
        } else if zeta.is_finite() {
            zeta / 2.0
        } else {
            30.0
        };
        let blowball_size = if self.adversary.blowball_size > 0 {
            self.adversary.blowball_size
        } else {
            ((q * self.lambda_total * blowball_interval).round() as usize).max(1)
        };
        CellParams {
            run_id: run_id(self.scenario, self.k, q, zeta, self.seed),
            protocol: ProtocolParams {
                k: self.k,
                zeta,
                theta: self.theta,
            },
            lambda_total: self.lambda_total,
            honest_nodes: self.honest_nodes,
            adversary_nodes: self.adversary_nodes,
            phases,
            topology: self.topology,
            delay_range: self.delay_range_s(),
            issuance: self.issuance,
            strategy: self.adversary.strategy,
            min_parents: self.adversary.min_parents,
            adversary_cap: self.adversary_cap(zeta),
            blowball_size,
            blowball_interval,
            seed,
            sample_interval: self.sample_interval,
            q,
        }
    }

    /// Expands the scenario into independent simulation cells.
    pub fn cells(&self) -> Result<Vec<CellParams>, ConfigError> {
        self.validate()?;
        let lambda = self.lambda_total;
        match self.scenario {
            Scenario::One | Scenario::Custom => Ok(self
                .q_list
                .iter()
                .map(|q| {
                    let phases = attack_then_idle(
                        *q,
                        lambda,
                        self.attack_duration * self.zeta,
                        self.idle_duration * self.zeta,
                    );
                    self.cell(*q, self.zeta, phases)
                })
                .collect()),
            Scenario::Two => {
                let q = theory::critical_q(self.k)
                    .map_err(|e| err("k", e.to_string()))?;
                let phases = vec![Phase {
                    start: 0.0,
                    end: 3600.0,
                    q,
                    honest_rate: (1.0 - q) * lambda,
                    adversary_rate: q * lambda,
                }];
                Ok(vec![self.cell(q, f64::INFINITY, phases)])
            }
            Scenario::Three => {
                let q = self.q_list[0];
                Ok(self
                    .zeta_list
                    .iter()
                    .map(|zeta| {
                        let phases = vec![Phase {
                            start: 0.0,
                            end: 10.0 * zeta,
                            q,
                            honest_rate: (1.0 - q) * lambda,
                            adversary_rate: q * lambda,
                        }];
                        self.cell(q, *zeta, phases)
                    })
                    .collect())
            }
        }
    }
}

/// Flag overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<Scenario>,
    pub k: Option<usize>,
    pub zeta: Option<f64>,
    pub q: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub lambda_total: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(v) = self.scenario {
            config.scenario = v;
        }
        if let Some(v) = self.k {
            config.k = v;
        }
        if let Some(v) = self.zeta {
            config.zeta = v;
        }
        if let Some(v) = &self.q {
            config.q_list = v.clone();
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.lambda_total {
            config.lambda_total = v;
        }
        if let Some(v) = &self.out_dir {
            config.out_dir = v.clone();
        }
    }
}

/// Cell seed derivation: a splitmix64 mix of the base seed and the (k, q)
/// cell key, so adding cells never perturbs existing cells' outputs. ζ is
/// deliberately excluded: ζ-sweep cells share a seed, which makes their
/// trajectories identical until the first ζ-dependent decision.
pub fn cell_seed(base: u64, k: usize, q: f64) -> u64 {
    let mut x = base
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(k as u64)
        .wrapping_add(q.to_bits().rotate_left(17));
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

pub fn run_id(scenario: Scenario, k: usize, q: f64, zeta: f64, seed: u64) -> String {
    format!(
        "run_{}_{}_{}_{}_{}",
        scenario.label(),
        k,
        fmt_num(q),
        fmt_num(zeta),
        seed
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_fills_builtin_defaults() {
        let dir = std::env::temp_dir().join("tanglesim-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("minimal.toml");
        std::fs::write(&path, "scenario = 1\nk = 2\n").unwrap();
        let config = ExperimentConfig::parse(Some(&path), &Overrides::default()).unwrap();
        assert_eq!(config.zeta, 60.0);
        assert_eq!(config.lambda_total, 50.0);
        assert_eq!(config.q_list, vec![0.35, 0.40, 0.45, 0.50, 0.55]);
        assert_eq!(config.honest_nodes, 7);
    }

    #[test]
    fn scenario_one_rejects_infinite_zeta() {
        let overrides = Overrides {
            zeta: Some(f64::INFINITY),
            ..Default::default()
        };
        let e = ExperimentConfig::parse(None, &overrides).unwrap_err();
        assert_eq!(e.key, "zeta");
    }

    #[test]
    fn parse_is_pure() {
        let overrides = Overrides {
            seed: Some(7),
            ..Default::default()
        };
        let a = ExperimentConfig::parse(None, &overrides).unwrap();
        let b = ExperimentConfig::parse(None, &overrides).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn named_validation_errors() {
        let mut c = ExperimentConfig::default();
        c.fill_defaults();
        c.q_list = vec![1.0];
        assert_eq!(c.validate().unwrap_err().key, "q_list");
        c.q_list = vec![0.5];
        c.k = 0;
        assert_eq!(c.validate().unwrap_err().key, "k");
        c.k = 2;
        c.q_list = Vec::new();
        assert_eq!(c.validate().unwrap_err().key, "q_list");
    }

    #[test]
    fn scenario_two_forces_critical_and_infinite_zeta() {
        let mut c = ExperimentConfig {
            scenario: Scenario::Two,
            ..Default::default()
        };
        c.fill_defaults();
        let cells = c.cells().unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].q, 0.5);
        assert!(cells[0].protocol.zeta.is_infinite());
        assert_eq!(cells[0].horizon(), 3600.0);
    }

    #[test]
    fn scenario_three_sweeps_zeta_with_ten_zeta_cells() {
        let mut c = ExperimentConfig {
            scenario: Scenario::Three,
            q_list: vec![0.5],
            zeta_list: vec![30.0, 60.0, 120.0],
            ..Default::default()
        };
        c.fill_defaults();
        let cells = c.cells().unwrap();
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[0].horizon(), 300.0);
        assert_eq!(cells[1].horizon(), 600.0);
        assert_eq!(cells[2].horizon(), 1200.0);
        // shared seed across the zeta sweep
        assert_eq!(cells[0].seed, cells[1].seed);
    }

    #[test]
    fn scenario_one_cells_are_attack_plus_idle() {
        let mut c = ExperimentConfig::default();
        c.q_list = vec![0.5];
        let cells = c.cells().unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].phases.len(), 2);
        assert_eq!(cells[0].phases[0].end, 720.0);
        assert_eq!(cells[0].horizon(), 900.0);
    }

    #[test]
    fn cell_seeds_differ_per_q_but_not_zeta() {
        let a = cell_seed(1, 2, 0.5);
        let b = cell_seed(1, 2, 0.55);
        let c = cell_seed(2, 2, 0.5);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut c = ExperimentConfig::default();
        c.zeta = f64::INFINITY;
        c.scenario = Scenario::Two;
        c.fill_defaults();
        let json = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(c, back);
    }
}
