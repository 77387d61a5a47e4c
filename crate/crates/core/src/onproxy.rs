//! Online vision-proxy learning.
//!
//! Each class keeps a unit vector `w_j` in the image-embedding space. For a
//! sample `x` with target distribution `p*`, the loss is the cross-entropy
//! `-sum_j p*_j log p'_j` where `p' = softmax(x . w / tau_i)`. Its gradient
//! with respect to row `j` is `(p'_j - p*_j) x / tau_i`; the step
//! `w_j - eta g_j` is renormalized back onto the unit sphere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{self, ProbabilityVector};

/// Rows whose post-step norm falls below this are left untouched.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// `C x d` matrix of unit-norm class proxies, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyMatrix {
    classes: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ProxyMatrix {
    /// Builds the matrix from rows, L2-normalizing each one.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let classes = rows.len();
        if classes == 0 {
            return Err(Error::Shape("proxy matrix needs at least one row".into()));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::Shape("proxy rows must be non-empty".into()));
        }
        let mut data = Vec::with_capacity(classes * dim);
        for (j, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Shape(format!(
                    "row {j} has dimension {}, expected {dim}",
                    row.len()
                )));
            }
            let n = simplex::norm(&row);
            if !(n > DEGENERATE_NORM) || !n.is_finite() {
                return Err(Error::InvalidParameter(format!("proxy row {j} has norm {n}")));
            }
            data.extend(row.iter().map(|v| v / n));
        }
        Ok(Self { classes, dim, data })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// `x . w_j` for every class.
    pub fn similarities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "embedding has dimension {}, proxies have {}",
                x.len(),
                self.dim
            )));
        }
        Ok(self.rows().map(|w| simplex::dot(w, x)).collect())
    }

    /// Projected step `w_j <- (w_j - eta g_j) / ||.||`, in place. Returns the
    /// rows that were skipped because the step nearly annihilated them.
    pub fn apply_step(&mut self, grad: &ProxyGradient, eta: f64) -> Result<Vec<usize>> {
        if grad.classes != self.classes || grad.dim != self.dim {
            return Err(Error::Shape(format!(
                "gradient is {}x{}, proxies are {}x{}",
                grad.classes, grad.dim, self.classes, self.dim
            )));
        }
        let mut skipped = Vec::new();
        let mut buf = vec![0.0; self.dim];
        for j in 0..self.classes {
            let w = &mut self.data[j * self.dim..(j + 1) * self.dim];
            for ((b, &wk), &gk) in buf.iter_mut().zip(w.iter()).zip(grad.row(j)) {
                *b = wk - eta * gk;
            }
            let n = simplex::norm(&buf);
            if n < DEGENERATE_NORM {
                skipped.push(j);
                continue;
            }
            for (wk, &b) in w.iter_mut().zip(&buf) {
                *wk = b / n;
            }
        }
        Ok(skipped)
    }

    /// Row-major view of all rows.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Largest deviation of a row norm from one.
    pub fn max_norm_error(&self) -> f64 {
        self.rows()
            .map(|w| (simplex::norm(w) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Gradient of the per-sample proxy loss, one row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyGradient {
    classes: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ProxyGradient {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            data: vec![0.0; classes * dim],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let classes = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("gradient rows differ in length".into()));
        }
        Ok(Self {
            classes,
            dim,
            data: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        simplex::norm(&self.data)
    }
}

/// Vision-space class distribution `softmax(x . w / tau_i)`.
pub fn proxy_probabilities(x: &[f64], proxies: &ProxyMatrix, tau_i: f64) -> Result<ProbabilityVector> {
    crate::onlab::softmax_similarity(x, proxies, tau_i)
}

/// Cross-entropy of `p_prime` against target `p_star`.
pub fn proxy_loss(p_star: &ProbabilityVector, p_prime: &ProbabilityVector) -> f64 {
    cross_entropy(p_star.as_slice(), p_prime.as_slice())
}

pub(crate) fn cross_entropy(target: &[f64], probs: &[f64]) -> f64 {
    -target
        .iter()
        .zip(probs)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &p)| t * p.ln())
        .sum::<f64>()
}

pub fn proxy_gradient(
    x: &[f64],
    p_star: &ProbabilityVector,
    p_prime: &ProbabilityVector,
    tau_i: f64,
) -> Result<ProxyGradient> {
    if p_star.len() != p_prime.len() {
        return Err(Error::Shape(format!(
            "target has {} classes, prediction has {}",
            p_star.len(),
            p_prime.len()
        )));
    }
    let mut grad = ProxyGradient::zeros(p_star.len(), x.len());
    accumulate_gradient(&mut grad, x, p_star.as_slice(), p_prime.as_slice(), tau_i, 1.0);
    Ok(grad)
}

/// `grad += scale * (p' - p*) x^T / tau_i`
pub(crate) fn accumulate_gradient(
    grad: &mut ProxyGradient,
    x: &[f64],
    p_star: &[f64],
    p_prime: &[f64],
    tau_i: f64,
    scale: f64,
) {
    for (j, (&ps, &pp)) in p_star.iter().zip(p_prime).enumerate() {
        let coef = scale * (pp - ps) / tau_i;
        if coef == 0.0 {
            continue;
        }
        for (g, &xk) in grad.row_mut(j).iter_mut().zip(x) {
            *g += coef * xk;
        }
    }
}

/// One projected gradient step with `eta = c_w / sqrt(step_index)`.
///
/// Unlike [`ProxyMatrix::apply_step`], a row that would collapse to the
/// origin is reported as an error.
pub fn update_proxy(
    proxies: &ProxyMatrix,
    grad: &ProxyGradient,
    step_index: u64,
    c_w: f64,
) -> Result<ProxyMatrix> {
    if step_index == 0 {
        return Err(Error::InvalidParameter("step index starts at 1".into()));
    }
    let eta = proxy_step_size(step_index, c_w);
    let mut next = proxies.clone();
    let skipped = next.apply_step(grad, eta)?;
    if let Some(&row) = skipped.first() {
        let w = proxies.row(row);
        let g = grad.row(row);
        let residual: Vec<f64> = w.iter().zip(g).map(|(a, b)| a - eta * b).collect();
        return Err(Error::DegenerateProjection {
            row,
            norm: simplex::norm(&residual),
        });
    }
    Ok(next)
}

pub fn proxy_step_size(step_index: u64, c_w: f64) -> f64 {
    c_w / (step_index as f64).sqrt()
}
