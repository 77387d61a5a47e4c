//! Combination of the text-space label `p*` and the vision-space prediction `p'`.
//!
//! `p~ = lambda p' + (1 - lambda) p*`. The text-space label carries a fixed
//! bias while the vision prediction's variance shrinks as the proxies are
//! learned, so lambda grows with the step index: `lambda_i = beta sqrt(i / n)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::ProbabilityVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixSchedule {
    pub beta: f64,
    /// Declared total number of steps (stream length times epochs).
    pub n_total: u64,
}

impl MixSchedule {
    pub fn new(beta: f64, n_total: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("beta = {beta} is outside [0, 1]")));
        }
        if n_total == 0 {
            return Err(Error::InvalidParameter("declared sample count must be positive".into()));
        }
        Ok(Self { beta, n_total })
    }
}

/// `min(beta, beta * sqrt(step_index / n_total))`; clamps once the stream
/// runs past its declared length.
pub fn mixing_weight(step_index: u64, schedule: &MixSchedule) -> f64 {
    let ratio = step_index as f64 / schedule.n_total as f64;
    (schedule.beta * ratio.sqrt()).min(schedule.beta)
}

pub fn combine_predictions(
    p_prime: &ProbabilityVector,
    p_star: &ProbabilityVector,
    lambda: f64,
) -> Result<ProbabilityVector> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} is outside [0, 1]")));
    }
    if p_prime.len() != p_star.len() {
        return Err(Error::Shape(format!(
            "cannot mix {} and {} classes",
            p_prime.len(),
            p_star.len()
        )));
    }
    let mixed = p_prime
        .as_slice()
        .iter()
        .zip(p_star.as_slice())
        .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Ok(ProbabilityVector::from_raw(mixed))
}

/// MSE-optimal weight on an unbiased, noisy estimate versus a biased,
/// noiseless one: `bias² / (bias² + variance)`.
pub fn optimal_lambda(bias_sq: f64, variance: f64) -> Result<f64> {
    if bias_sq < 0.0 || variance < 0.0 || !bias_sq.is_finite() || !variance.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "bias² = {bias_sq} and variance = {variance} must be finite and nonnegative"
        )));
    }
    let total = bias_sq + variance;
    if total == 0.0 {
        return Err(Error::InvalidParameter(
            "optimal mixing weight is undefined when bias and variance are both zero".into(),
        ));
    }
    Ok(bias_sq / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let s = MixSchedule::new(0.8, 10_000).unwrap();
        assert_eq!(mixing_weight(10_000, &s), 0.8);
        assert!((mixing_weight(1, &s) - 0.008).abs() < 1e-15);
        assert_eq!(mixing_weight(50_000, &s), 0.8);

        let s = MixSchedule::new(0.0, 100).unwrap();
        assert!((1..=200).all(|i| mixing_weight(i, &s) == 0.0));

        let s = MixSchedule::new(0.4, 400).unwrap();
        assert!((mixing_weight(100, &s) - 0.2).abs() < 1e-15);

        assert!(MixSchedule::new(1.1, 10).is_err());
        assert!(MixSchedule::new(0.5, 0).is_err());
    }

    #[test]
    fn combine_examples() {
        let a = pv(&[0.2, 0.8]);
        let b = pv(&[0.6, 0.4]);
        assert_eq!(combine_predictions(&a, &b, 0.0).unwrap(), b);
        assert_eq!(combine_predictions(&a, &b, 1.0).unwrap(), a);
        let mid = combine_predictions(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0]), 0.5).unwrap();
        assert_eq!(mid.as_slice(), &[0.5, 0.5]);
        assert!(combine_predictions(&a, &b, 1.5).is_err());
        assert!(combine_predictions(&a, &pv(&[1.0]), 0.5).is_err());
    }

    #[test]
    fn optimal_lambda_examples() {
        assert_eq!(optimal_lambda(0.3, 0.3).unwrap(), 0.5);
        assert_eq!(optimal_lambda(0.3, 0.0).unwrap(), 1.0);
        assert_eq!(optimal_lambda(3.0, 1.0).unwrap(), 0.75);
        assert!(optimal_lambda(0.0, 0.0).is_err());
        assert!(optimal_lambda(-1.0, 2.0).is_err());
    }
}
