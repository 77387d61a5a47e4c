//! Online label learning: text-space prediction, closed-form reweighting by
//! the class-balance duals, and projected dual ascent.
//!
//! For a fixed dual vector `rho`, the per-sample problem
//! `min_p KL(p || q) - rho . p` over the simplex is solved by
//! `p*_j ∝ q_j exp(rho_j)`. After predicting, each dual moves against its
//! constraint residual `p*_j - alpha / C` with step `c_rho / sqrt(i)` and is
//! clipped at zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::onproxy::ProxyMatrix;
use crate::params::HyperParams;
use crate::simplex::{self, ProbabilityVector};

/// Nonnegative class-balance multipliers plus the number of samples they have absorbed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    rho: Vec<f64>,
    steps: u64,
}

impl DualState {
    pub fn zeros(classes: usize) -> Self {
        Self {
            rho: vec![0.0; classes],
            steps: 0,
        }
    }

    /// Builds a state from explicit multipliers, e.g. to resume a stream.
    pub fn from_parts(rho: Vec<f64>, steps: u64) -> Result<Self> {
        if rho.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidParameter(
                "dual variables must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { rho, steps })
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn classes(&self) -> usize {
        self.rho.len()
    }

    /// Samples processed so far; the next update uses index `steps() + 1`.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One projected ascent step on the dual of the balance constraint.
    pub fn ascend(&mut self, p_star: &ProbabilityVector, alpha: f64, c_rho: f64) -> Result<()> {
        let classes = self.rho.len();
        if p_star.len() != classes {
            return Err(Error::Shape(format!(
                "prediction has {} classes, duals have {classes}",
                p_star.len()
            )));
        }
        self.steps += 1;
        let eta = c_rho / (self.steps as f64).sqrt();
        let floor = alpha / classes as f64;
        for (r, &p) in self.rho.iter_mut().zip(p_star.as_slice()) {
            *r = (*r - eta * (p - floor)).max(0.0);
        }
        Ok(())
    }
}

/// Text-space class distribution: softmax of `x . proxy_j / tau`.
pub fn softmax_similarity(x: &[f64], proxies: &ProxyMatrix, tau: f64) -> Result<ProbabilityVector> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("temperature {tau} must be positive")));
    }
    let logits = proxies.similarities(x)?;
    let scaled: Vec<f64> = logits.iter().map(|s| s / tau).collect();
    Ok(simplex::softmax(&scaled))
}

/// Closed-form minimizer of `KL(p || q) - rho . p` over the simplex.
pub fn reweight_with_duals(q: &ProbabilityVector, duals: &DualState) -> Result<ProbabilityVector> {
    reweight(q, duals.rho())
}

pub(crate) fn reweight(q: &ProbabilityVector, rho: &[f64]) -> Result<ProbabilityVector> {
    if q.len() != rho.len() {
        return Err(Error::Shape(format!(
            "distribution has {} classes, duals have {}",
            q.len(),
            rho.len()
        )));
    }
    let max_rho = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if rho.iter().all(|&r| r == max_rho) {
        // uniform boost is a no-op; skip the renormalization round-off
        return Ok(q.clone());
    }
    let mut out: Vec<f64> = q
        .as_slice()
        .iter()
        .zip(rho)
        .map(|(&qj, &r)| qj * (r - max_rho).exp())
        .collect();
    let total: f64 = out.iter().sum();
    if !(total > 0.0) {
        // every boosted class has zero mass in q; fall back to log space
        let logits: Vec<f64> = q.as_slice().iter().zip(rho).map(|(&qj, &r)| qj.ln() + r).collect();
        return Ok(simplex::softmax(&logits));
    }
    for v in &mut out {
        *v /= total;
    }
    Ok(ProbabilityVector::from_raw(out))
}

/// Functional form of [`DualState::ascend`] using the step constants in `params`.
pub fn update_duals(
    mut duals: DualState,
    p_star: &ProbabilityVector,
    params: &HyperParams,
) -> Result<DualState> {
    duals.ascend(p_star, params.alpha, params.c_rho)?;
    Ok(duals)
}

/// Per-sample objective minimized by [`reweight_with_duals`].
pub fn reweight_objective(p: &[f64], q: &[f64], rho: &[f64]) -> f64 {
    simplex::kl_divergence(p, q) - simplex::dot(rho, p)
}
