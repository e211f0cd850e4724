//! Closed-form predictions for tip-pool behavior under an orphanage attack,
//! used for overlays and acceptance checks.
//!
//! Rate units: `lambda` arguments here are messages per delay interval `h`
//! unless a `_per_s` suffix says otherwise. Experiments quote rates per
//! second; convert with [`lambda_per_interval`].

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TheoryError {
    #[error("k must be >= 1, got {0}")]
    InvalidK(usize),
    #[error("q={q} must exceed the critical point {q_crit}")]
    BelowCritical { q: f64, q_crit: f64 },
}

/// Adversary throughput fraction beyond which honest nodes can no longer
/// shrink the tip pool: (k - 1) / k.
pub fn critical_q(k: usize) -> Result<f64, TheoryError> {
    if k < 1 {
        return Err(TheoryError::InvalidK(k));
    }
    Ok((k as f64 - 1.0) / k as f64)
}

/// Per-interval tip-pool drift during an attack: λq − λ(1−q)(k−1).
pub fn tip_pool_slope(lambda: f64, q: f64, k: usize) -> f64 {
    lambda * q - lambda * (1.0 - q) * (k as f64 - 1.0)
}

/// Expected tip pool after `i` intervals of attack, starting from a single
/// tip: i·(λq − λ(1−q)(k−1)) + 1. Clamped at 1 from below — the pool never
/// shrinks past the single-tip state (a practical extension, the raw
/// formula goes negative for sub-critical q).
pub fn predicted_tip_pool(i: u64, lambda: f64, q: f64, k: usize) -> f64 {
    (i as f64 * tip_pool_slope(lambda, q, k) + 1.0).max(1.0)
}

/// Honest-regime steady state: k·λ + 1 with λ in messages per interval.
pub fn steady_state_tip_pool(k: usize, lambda_per_h: f64) -> f64 {
    k as f64 * lambda_per_h + 1.0
}

/// Converts a per-second rate to the per-interval rate the growth law uses.
pub fn lambda_per_interval(lambda_per_s: f64, h: f64) -> f64 {
    lambda_per_s * h
}

/// Net tip inflow before the oldest tips start expiring, valid only above
/// the critical point. Past the first ζ the oldest tips expire and offset
/// this rate; that regime has no closed form and is only annotated
/// qualitatively in exports.
pub fn post_zeta_removal_rate(lambda: f64, q: f64, k: usize) -> Result<f64, TheoryError> {
    let q_crit = critical_q(k)?;
    if q <= q_crit {
        return Err(TheoryError::BelowCritical { q, q_crit });
    }
    Ok(tip_pool_slope(lambda, q, k))
}
