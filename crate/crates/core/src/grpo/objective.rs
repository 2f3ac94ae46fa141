//! Group-relative advantages and the clipped surrogate.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdvantageError {
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("non-finite reward in group")]
    NonFinite,
}

/// `Â_i = (R_i − mean) / (σ + eps_std)` with the population σ.
pub fn group_advantages(rewards: &[f64], eps_std: f64) -> Result<Vec<f64>, AdvantageError> {
    let g = rewards.len();
    if g < 2 {
        return Err(AdvantageError::GroupTooSmall(g));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(AdvantageError::NonFinite);
    }
    // exact check: a rounded mean can leave a constant group with a tiny
    // nonzero spread that eps_std = 0 would blow up
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; g]);
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let denom = var.sqrt() + eps_std;
    if denom == 0.0 {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Whether the clipped branch of [`clipped_term`] is the active one, which
/// zeroes the term's gradient.
pub fn is_clipped(ratio: f64, advantage: f64, eps: f64) -> bool {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    clipped * advantage < ratio * advantage
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_group() {
        assert_eq!(group_advantages(&[1.0; 4], 1e-4).unwrap(), vec![0.0; 4]);
        assert_eq!(group_advantages(&[2.0; 4], 0.0).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn hand_computed_group() {
        let a = group_advantages(&[0.0, 0.0, 0.0, 4.0], 0.0).unwrap();
        let s3 = 3f64.sqrt();
        for (x, want) in a.iter().zip([-1.0 / s3, -1.0 / s3, -1.0 / s3, 3.0 / s3]) {
            assert!((x - want).abs() < 1e-12);
        }
    }

    #[test]
    fn small_group_rejected() {
        assert_eq!(group_advantages(&[1.0], 0.0), Err(AdvantageError::GroupTooSmall(1)));
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clipped_term(1.0, 0.7, 0.2), 0.7);
        assert!((clipped_term(2.0, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert_eq!(clipped_term(2.0, -1.0, 0.2), -2.0);
        assert!(is_clipped(2.0, 1.0, 0.2));
        assert!(!is_clipped(2.0, -1.0, 0.2));
        assert!(!is_clipped(1.1, 1.0, 0.2));
    }
}
