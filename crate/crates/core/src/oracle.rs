//! Offline reference solvers and the regret / duality-gap harness.
//!
//! The online learners are checked against full-batch optima computed here:
//! the balanced-label problem is solved through its concave dual, the proxy
//! problem by Riemannian gradient descent on a product of unit spheres.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::onlab::{self, DualState};
use crate::onproxy::{self, ProxyGradient, ProxyMatrix};
use crate::simplex::{self, ProbabilityVector};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// Upper end of the dual box used when evaluating duality gaps.
pub const DEFAULT_DUAL_BOUND: f64 = 10.0;

/// Duals beyond this magnitude are treated as divergence (infeasible constraints).
const DUAL_DIVERGENCE: f64 = 1e4;

// ---------------------------------------------------------------------------
// Balanced labels
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// Largest deviation between returned labels and the closed form at the final duals.
    pub stationarity: f64,
    /// `max_j (alpha / C - mean_i p_ij)`, clipped at zero.
    pub primal: f64,
    /// `max_j (-rho_j)`, clipped at zero.
    pub dual: f64,
    /// `max_j |rho_j (mean_i p_ij - alpha / C)|`.
    pub complementary: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementary)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OfflineLabelSolution {
    pub labels: Vec<ProbabilityVector>,
    pub duals: Vec<f64>,
    /// `sum_i KL(p_i || q_i)`.
    pub objective: f64,
    /// `max_j (alpha / C - mean_i p_ij)`; negative when every constraint has slack.
    pub max_violation: f64,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

#[derive(Clone, Copy, Debug)]
pub struct LabelSolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LabelSolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

fn check_stream(q: &[ProbabilityVector]) -> Result<usize> {
    let classes = q.first().ok_or(Error::EmptyStream)?.len();
    if let Some(i) = q.iter().position(|p| p.len() != classes) {
        return Err(Error::Shape(format!(
            "distribution {i} has {} classes, expected {classes}",
            q[i].len()
        )));
    }
    Ok(classes)
}

/// Dual value, gradient, and mean reweighted labels at `rho`.
struct DualEval {
    value: f64,
    grad: Vec<f64>,
    mean: Vec<f64>,
}

fn log_partition(q: &[f64], rho: &[f64]) -> f64 {
    let logits: Vec<f64> = q
        .iter()
        .zip(rho)
        .map(|(&qj, &r)| if qj > 0.0 { qj.ln() + r } else { f64::NEG_INFINITY })
        .collect();
    simplex::log_sum_exp(&logits)
}

fn eval_dual(q: &[ProbabilityVector], rho: &[f64], alpha: f64) -> Result<DualEval> {
    let c = rho.len();
    let n = q.len() as f64;
    let floor = alpha / c as f64;
    let mut mean = vec![0.0; c];
    let mut lz = 0.0;
    for qi in q {
        lz += log_partition(qi.as_slice(), rho);
        let p = onlab::reweight(qi, rho)?;
        for (m, &v) in mean.iter_mut().zip(p.as_slice()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let value = -lz / n + floor * rho.iter().sum::<f64>();
    let grad = mean.iter().map(|m| floor - m).collect();
    Ok(DualEval { value, grad, mean })
}

/// Average per-sample covariance `mean_i (diag(p_i) - p_i p_i^T)`, row-major.
fn dual_curvature(q: &[ProbabilityVector], rho: &[f64]) -> Result<Vec<f64>> {
    let c = rho.len();
    let mut h = vec![0.0; c * c];
    for qi in q {
        let p = onlab::reweight(qi, rho)?;
        let p = p.as_slice();
        for a in 0..c {
            h[a * c + a] += p[a];
            for b in 0..c {
                h[a * c + b] -= p[a] * p[b];
            }
        }
    }
    let n = q.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    Ok(h)
}

/// Solves `(A + shift I) x = b` for symmetric positive semidefinite `A` by Cholesky.
fn solve_spd(a: &[f64], n: usize, b: &[f64], shift: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j] + if i == j { shift } else { 0.0 };
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}

fn kkt_residuals(labels: &[ProbabilityVector], q: &[ProbabilityVector], rho: &[f64], alpha: f64) -> Result<KktResiduals> {
    let c = rho.len();
    let floor = alpha / c as f64;
    let n = labels.len() as f64;
    let mut mean = vec![0.0; c];
    let mut stationarity: f64 = 0.0;
    for (p, qi) in labels.iter().zip(q) {
        let closed = onlab::reweight(qi, rho)?;
        for j in 0..c {
            mean[j] += p[j];
            stationarity = stationarity.max((p[j] - closed[j]).abs());
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(KktResiduals {
        stationarity,
        primal: mean.iter().map(|m| floor - m).fold(0.0, f64::max),
        dual: rho.iter().map(|r| -r).fold(0.0, f64::max),
        complementary: rho
            .iter()
            .zip(&mean)
            .map(|(r, m)| (r * (m - floor)).abs())
            .fold(0.0, f64::max),
    })
}

/// Balanced relabeling `min sum_i KL(p_i || q_i)` subject to
/// `mean_i p_ij >= alpha / C` for every class.
pub fn solve_offline_labels(q: &[ProbabilityVector], alpha: f64, tol: f64) -> Result<OfflineLabelSolution> {
    solve_offline_labels_with(q, alpha, LabelSolverOptions { tol, ..Default::default() })
}

/// Projected Newton ascent on the concave dual
/// `D(rho) = -mean_i log sum_j q_ij e^{rho_j} + (alpha / C) sum_j rho_j`, `rho >= 0`.
/// Each primal label is the closed-form reweighting of `q_i` at the current duals.
pub fn solve_offline_labels_with(
    q: &[ProbabilityVector],
    alpha: f64,
    opts: LabelSolverOptions,
) -> Result<OfflineLabelSolution> {
    let c = check_stream(q)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} is outside [0, 1]")));
    }
    let tol = opts.tol;
    let mut rho = vec![0.0; c];
    let mut eval = eval_dual(q, &rho, alpha)?;
    let mut iterations = 0;

    let converged = |rho: &[f64], eval: &DualEval| {
        // projected gradient of the box-constrained dual, scaled so that the
        // complementary-slackness residual is also below tol
        let scale = rho.iter().copied().fold(1.0, f64::max);
        rho.iter().zip(&eval.grad).all(|(&r, &g)| {
            let pg = if r > 0.0 { g } else { g.max(0.0) };
            pg.abs() * scale < tol
        })
    };

    while !converged(&rho, &eval) {
        if iterations >= opts.max_iter {
            let residual = eval.grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
            return Err(Error::NonConvergence {
                solver: "offline label solver",
                iterations,
                residual,
            });
        }
        iterations += 1;

        // variables held at the bound: rho_j = 0 with the gradient pushing outward
        let free: Vec<usize> = (0..c)
            .filter(|&j| rho[j] > 1e-12 || eval.grad[j] > 0.0)
            .collect();
        let mut direction = vec![0.0; c];
        if !free.is_empty() {
            let h = dual_curvature(q, &rho)?;
            let k = free.len();
            let sub: Vec<f64> = free
                .iter()
                .flat_map(|&a| free.iter().map(move |&b| (a, b)))
                .map(|(a, b)| h[a * c + b])
                .collect();
            let rhs: Vec<f64> = free.iter().map(|&j| eval.grad[j]).collect();
            let trace: f64 = (0..k).map(|i| sub[i * k + i]).sum();
            let mut shift = 1e-10 * trace.max(1e-12);
            let step = loop {
                if let Some(s) = solve_spd(&sub, k, &rhs, shift) {
                    break s;
                }
                shift *= 10.0;
            };
            for (&j, s) in free.iter().zip(step) {
                direction[j] = s;
            }
        }

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..60 {
            let trial: Vec<f64> = rho
                .iter()
                .zip(&direction)
                .map(|(r, d)| (r + t * d).max(0.0))
                .collect();
            let ev = eval_dual(q, &trial, alpha)?;
            let predicted: f64 = eval
                .grad
                .iter()
                .zip(trial.iter().zip(&rho))
                .map(|(g, (a, b))| g * (a - b))
                .sum();
            if ev.value >= eval.value + 1e-4 * predicted {
                accepted = Some((trial, ev));
                break;
            }
            t *= 0.5;
        }
        let (next, ev) = match accepted {
            Some(pair) => pair,
            None => {
                // the dual is 1/2-smooth, so a unit projected gradient step ascends
                let trial: Vec<f64> = rho
                    .iter()
                    .zip(&eval.grad)
                    .map(|(r, g)| (r + g).max(0.0))
                    .collect();
                let ev = eval_dual(q, &trial, alpha)?;
                (trial, ev)
            }
        };
        let moved = next
            .iter()
            .zip(&rho)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        rho = next;
        eval = ev;
        if rho.iter().any(|&r| r > DUAL_DIVERGENCE) {
            return Err(Error::NonConvergence {
                solver: "offline label solver (duals diverging; constraints infeasible?)",
                iterations,
                residual: eval.grad.iter().map(|g| g.abs()).fold(0.0, f64::max),
            });
        }
        if moved == 0.0 && !converged(&rho, &eval) {
            return Err(Error::NonConvergence {
                solver: "offline label solver (stalled)",
                iterations,
                residual: eval.grad.iter().map(|g| g.abs()).fold(0.0, f64::max),
            });
        }
    }

    let labels: Vec<ProbabilityVector> = q
        .iter()
        .map(|qi| onlab::reweight(qi, &rho))
        .collect::<Result<_>>()?;
    let objective = labels
        .iter()
        .zip(q)
        .map(|(p, qi)| simplex::kl_divergence(p.as_slice(), qi.as_slice()))
        .sum();
    let floor = alpha / c as f64;
    let max_violation = eval
        .mean
        .iter()
        .map(|m| floor - m)
        .fold(f64::NEG_INFINITY, f64::max);
    let kkt = kkt_residuals(&labels, q, &rho, alpha)?;
    Ok(OfflineLabelSolution {
        labels,
        duals: rho,
        objective,
        max_violation,
        iterations,
        kkt,
    })
}

// ---------------------------------------------------------------------------
// Duality gap
// ---------------------------------------------------------------------------

/// Duals in force when each label was produced.
#[derive(Clone, Copy, Debug)]
pub enum DualTrajectory<'a> {
    /// The same duals for every sample (e.g. an offline saddle point).
    Fixed(&'a [f64]),
    /// `rho^{i-1}` for sample `i`.
    PerStep(&'a [Vec<f64>]),
}

/// Incremental duality-gap bookkeeping for a label stream.
///
/// After `n` samples the gap is
/// `(1/n) [ max_{rho in [0,R]^C} sum_i L_i(rho, p_i) - sum_i min_p L_i(rho^{i-1}, p) ]`
/// with `L_i(rho, p) = KL(p || q_i) - sum_j rho_j (p_j - alpha / C)`.
#[derive(Clone, Debug)]
pub struct GapAccumulator {
    alpha: f64,
    bound: f64,
    count: usize,
    kl_sum: f64,
    min_sum: f64,
    mass: Vec<f64>,
}

impl GapAccumulator {
    pub fn new(classes: usize, alpha: f64, bound: f64) -> Self {
        Self {
            alpha,
            bound,
            count: 0,
            kl_sum: 0.0,
            min_sum: 0.0,
            mass: vec![0.0; classes],
        }
    }

    pub fn push(&mut self, q: &ProbabilityVector, label: &ProbabilityVector, rho: &[f64]) {
        let floor = self.alpha / self.mass.len() as f64;
        self.count += 1;
        self.kl_sum += simplex::kl_divergence(label.as_slice(), q.as_slice());
        self.min_sum += -log_partition(q.as_slice(), rho) + floor * rho.iter().sum::<f64>();
        for (m, &p) in self.mass.iter_mut().zip(label.as_slice()) {
            *m += p;
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn gap(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        let target = n * self.alpha / self.mass.len() as f64;
        let penalty: f64 = self.mass.iter().map(|&s| (target - s).max(0.0)).sum();
        (self.kl_sum + self.bound * penalty - self.min_sum) / n
    }
}

pub fn duality_gap(
    rho: DualTrajectory<'_>,
    labels: &[ProbabilityVector],
    q: &[ProbabilityVector],
    alpha: f64,
    bound: f64,
) -> Result<f64> {
    let c = check_stream(q)?;
    if labels.len() != q.len() {
        return Err(Error::Shape(format!("{} labels for {} distributions", labels.len(), q.len())));
    }
    if let DualTrajectory::PerStep(steps) = rho {
        if steps.len() != q.len() {
            return Err(Error::Shape(format!("{} dual vectors for {} samples", steps.len(), q.len())));
        }
    }
    let mut acc = GapAccumulator::new(c, alpha, bound);
    for (i, (p, qi)) in labels.iter().zip(q).enumerate() {
        let r = match rho {
            DualTrajectory::Fixed(r) => r,
            DualTrajectory::PerStep(steps) => &steps[i],
        };
        if r.len() != c || p.len() != c {
            return Err(Error::Shape(format!("sample {i} disagrees on the class count")));
        }
        acc.push(qi, p, r);
    }
    Ok(acc.gap())
}

// ---------------------------------------------------------------------------
// Offline proxies
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ProxySolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Starting point; defaults to the normalized class means weighted by the targets.
    pub init: Option<ProxyMatrix>,
}

impl Default for ProxySolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            init: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OfflineProxySolution {
    pub proxies: ProxyMatrix,
    /// Mean per-sample cross-entropy at `proxies`.
    pub mean_loss: f64,
    /// Norm of the Riemannian gradient of the mean loss at `proxies`.
    pub grad_norm: f64,
    pub iterations: usize,
}

const CHUNK: usize = 512;

/// Mean cross-entropy of the whole batch at `w`.
pub fn mean_proxy_loss(x: &EmbeddingMatrix, p_star: &[ProbabilityVector], w: &ProxyMatrix, tau_i: f64) -> Result<f64> {
    Ok(batch_loss_grad(x, p_star, w, tau_i, false)?.0)
}

/// Mean loss and (optionally) its Euclidean gradient, summed chunk by chunk
/// in a fixed order so the result does not depend on the thread schedule.
fn batch_loss_grad(
    x: &EmbeddingMatrix,
    p_star: &[ProbabilityVector],
    w: &ProxyMatrix,
    tau_i: f64,
    with_grad: bool,
) -> Result<(f64, Option<ProxyGradient>)> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::EmptyStream);
    }
    if p_star.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} samples", p_star.len())));
    }
    let (c, d) = (w.classes(), w.dim());
    let chunks: Vec<(f64, Option<ProxyGradient>)> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| -> Result<_> {
            let mut loss = 0.0;
            let mut grad = with_grad.then(|| ProxyGradient::zeros(c, d));
            for &i in idx {
                let xi = x.row_f64(i);
                let pp = onproxy::proxy_probabilities(&xi, w, tau_i)?;
                loss += onproxy::proxy_loss(&p_star[i], &pp);
                if let Some(g) = grad.as_mut() {
                    onproxy::accumulate_gradient(g, &xi, p_star[i].as_slice(), pp.as_slice(), tau_i, 1.0);
                }
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = with_grad.then(|| ProxyGradient::zeros(c, d));
    for (l, g) in chunks {
        loss += l;
        if let (Some(total), Some(g)) = (grad.as_mut(), g) {
            for j in 0..c {
                for (a, b) in total.row_mut(j).iter_mut().zip(g.row(j)) {
                    *a += b;
                }
            }
        }
    }
    let inv = 1.0 / n as f64;
    if let Some(g) = grad.as_mut() {
        for j in 0..c {
            g.row_mut(j).iter_mut().for_each(|v| *v *= inv);
        }
    }
    Ok((loss * inv, grad))
}

/// Projects each gradient row onto the tangent space of its proxy's sphere.
fn tangent(grad: &ProxyGradient, w: &ProxyMatrix) -> ProxyGradient {
    let mut out = grad.clone();
    for j in 0..w.classes() {
        let wj = w.row(j);
        let radial = simplex::dot(grad.row(j), wj);
        for (g, &wk) in out.row_mut(j).iter_mut().zip(wj) {
            *g -= radial * wk;
        }
    }
    out
}

fn weighted_means(x: &EmbeddingMatrix, p_star: &[ProbabilityVector], classes: usize) -> Result<ProxyMatrix> {
    let d = x.dim();
    let mut rows = vec![vec![0.0; d]; classes];
    for (i, p) in p_star.iter().enumerate() {
        for (j, row) in rows.iter_mut().enumerate() {
            let pj = p[j];
            for (r, &v) in row.iter_mut().zip(x.row(i)) {
                *r += pj * f64::from(v);
            }
        }
    }
    // a class with no target mass gets an arbitrary unit direction
    for (j, row) in rows.iter_mut().enumerate() {
        if simplex::norm(row) < 1e-12 {
            row.iter_mut().for_each(|v| *v = 0.0);
            row[j % d] = 1.0;
        }
    }
    ProxyMatrix::from_rows(rows)
}

/// Full-batch minimizer of the mean proxy cross-entropy over unit-norm proxies.
pub fn solve_offline_proxies(
    x: &EmbeddingMatrix,
    p_star: &[ProbabilityVector],
    tau_i: f64,
    tol: f64,
) -> Result<OfflineProxySolution> {
    solve_offline_proxies_with(x, p_star, tau_i, ProxySolverOptions { tol, ..Default::default() })
}

/// Riemannian gradient descent with Armijo backtracking; the trial step
/// doubles after each accepted step and halves on rejection.
pub fn solve_offline_proxies_with(
    x: &EmbeddingMatrix,
    p_star: &[ProbabilityVector],
    tau_i: f64,
    opts: ProxySolverOptions,
) -> Result<OfflineProxySolution> {
    let classes = check_stream(p_star)?;
    if !(tau_i > 0.0) {
        return Err(Error::InvalidParameter(format!("temperature {tau_i} must be positive")));
    }
    let mut w = match opts.init {
        Some(w) => w,
        None => weighted_means(x, p_star, classes)?,
    };
    if w.classes() != classes || w.dim() != x.dim() {
        return Err(Error::Shape("initial proxies do not match the data".into()));
    }
    let (mut loss, grad) = batch_loss_grad(x, p_star, &w, tau_i, true)?;
    let mut rgrad = tangent(&grad.expect("gradient requested"), &w);
    let mut step = tau_i;
    let mut iterations = 0;
    while rgrad.norm() >= opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                solver: "offline proxy solver",
                iterations,
                residual: rgrad.norm(),
            });
        }
        iterations += 1;
        let g2 = rgrad.norm().powi(2);
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = w.clone();
            trial.apply_step(&rgrad, step)?;
            let trial_loss = mean_proxy_loss(x, p_star, &trial, tau_i)?;
            if trial_loss <= loss - 1e-4 * step * g2 {
                accepted = Some((trial, trial_loss));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, _)) => {
                w = trial;
                let (l, g) = batch_loss_grad(x, p_star, &w, tau_i, true)?;
                loss = l;
                rgrad = tangent(&g.expect("gradient requested"), &w);
                step *= 2.0;
            }
            // no decrease representable at this precision; accept if close
            None if rgrad.norm() <= 1e3 * opts.tol => break,
            None => {
                return Err(Error::NonConvergence {
                    solver: "offline proxy solver (line search failed)",
                    iterations,
                    residual: rgrad.norm(),
                })
            }
        }
    }
    let grad_norm = rgrad.norm();
    Ok(OfflineProxySolution {
        proxies: w,
        mean_loss: loss,
        grad_norm,
        iterations,
    })
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central-difference gradient of `loss` at the row-major `classes x dim` point.
pub fn finite_difference_gradient<F>(loss: F, point: &[f64], classes: usize, dim: usize, h: f64) -> Result<ProxyGradient>
where
    F: Fn(&[f64]) -> f64,
{
    if !(1e-8..=1e-4).contains(&h) {
        return Err(Error::InvalidParameter(format!("step {h} is outside [1e-8, 1e-4]")));
    }
    if point.len() != classes * dim {
        return Err(Error::Shape(format!("{} values for {classes} x {dim}", point.len())));
    }
    let mut work = point.to_vec();
    let mut grad = ProxyGradient::zeros(classes, dim);
    for j in 0..classes {
        for k in 0..dim {
            let idx = j * dim + k;
            let orig = work[idx];
            work[idx] = orig + h;
            let up = loss(&work);
            work[idx] = orig - h;
            let down = loss(&work);
            work[idx] = orig;
            grad.row_mut(j)[k] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// The per-sample proxy loss as a function of an unconstrained row-major matrix.
pub fn unconstrained_proxy_loss<'a>(
    x: &'a [f64],
    p_star: &'a ProbabilityVector,
    tau_i: f64,
) -> impl Fn(&[f64]) -> f64 + 'a {
    move |w: &[f64]| {
        let logits: Vec<f64> = w.chunks_exact(x.len()).map(|row| simplex::dot(row, x) / tau_i).collect();
        let lse = simplex::log_sum_exp(&logits);
        p_star
            .as_slice()
            .iter()
            .zip(&logits)
            .map(|(&t, &l)| t * (lse - l))
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Regret curves
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    /// `(n, value)` pairs, strictly increasing in `n`.
    pub checkpoints: Vec<(usize, f64)>,
    /// Least-squares slope of `ln value` against `ln n`. `None` with fewer
    /// than two checkpoints or when a value is not positive, which happens
    /// when the online learner does better than the fixed comparator.
    pub fitted_slope: Option<f64>,
}

impl RegretCurve {
    pub fn new(checkpoints: Vec<(usize, f64)>) -> Self {
        let fitted_slope = fit_log_log_slope(&checkpoints).ok();
        Self {
            checkpoints,
            fitted_slope,
        }
    }
}

pub fn fit_log_log_slope(points: &[(usize, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidParameter("slope fit needs at least two checkpoints".into()));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidParameter("checkpoints must be strictly increasing".into()));
    }
    if let Some((n, v)) = points.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "checkpoint n = {n} has non-positive value {v}; cannot take logs"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, v)| v.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

fn validate_checkpoints(checkpoints: &[usize], available: usize) -> Result<()> {
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[1] <= w[0]) || checkpoints[0] == 0 {
        return Err(Error::InvalidParameter("checkpoints must be positive and strictly increasing".into()));
    }
    if *checkpoints.last().unwrap() > available {
        return Err(Error::InvalidParameter(format!(
            "checkpoint {} exceeds the {available} available samples",
            checkpoints.last().unwrap()
        )));
    }
    Ok(())
}

/// Runs online label learning over `q` and records the duality gap at each checkpoint.
pub fn label_gap_curve(
    q: &[ProbabilityVector],
    alpha: f64,
    c_rho: f64,
    checkpoints: &[usize],
    bound: f64,
) -> Result<RegretCurve> {
    let c = check_stream(q)?;
    validate_checkpoints(checkpoints, q.len())?;
    let mut duals = DualState::zeros(c);
    let mut acc = GapAccumulator::new(c, alpha, bound);
    let mut points = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    for qi in q {
        let p = onlab::reweight_with_duals(qi, &duals)?;
        acc.push(qi, &p, duals.rho());
        duals.ascend(&p, alpha, c_rho)?;
        if next.peek().is_some_and(|&&n| n == acc.count()) {
            points.push((acc.count(), acc.gap()));
            next.next();
        }
        if next.peek().is_none() {
            break;
        }
    }
    Ok(RegretCurve::new(points))
}

/// Per-sample record of an online proxy run, kept for regret evaluation.
#[derive(Clone, Debug)]
pub struct ProxyTrace {
    pub targets: Vec<ProbabilityVector>,
    /// Loss of sample `i` under the proxies in force before its update.
    pub online_losses: Vec<f64>,
    pub max_grad_norm: f64,
}

/// Online label learning feeding online proxy learning, as in the full
/// pipeline, with the targets and pre-update losses recorded.
pub fn trace_online_proxies(
    x: &EmbeddingMatrix,
    text: &ProxyMatrix,
    alpha: f64,
    c_rho: f64,
    c_w: f64,
    tau_t: f64,
    tau_i: f64,
) -> Result<ProxyTrace> {
    let c = text.classes();
    let mut duals = DualState::zeros(c);
    let mut w = text.clone();
    let mut targets = Vec::with_capacity(x.rows());
    let mut online_losses = Vec::with_capacity(x.rows());
    let mut max_grad_norm: f64 = 0.0;
    for i in 0..x.rows() {
        let xi = x.row_f64(i);
        let q = onlab::softmax_similarity(&xi, text, tau_t)?;
        let p_star = onlab::reweight_with_duals(&q, &duals)?;
        let p_prime = onproxy::proxy_probabilities(&xi, &w, tau_i)?;
        online_losses.push(onproxy::proxy_loss(&p_star, &p_prime));
        duals.ascend(&p_star, alpha, c_rho)?;
        let g = onproxy::proxy_gradient(&xi, &p_star, &p_prime, tau_i)?;
        max_grad_norm = max_grad_norm.max(g.norm());
        w.apply_step(&g, onproxy::proxy_step_size(i as u64 + 1, c_w))?;
        targets.push(p_star);
    }
    Ok(ProxyTrace {
        targets,
        online_losses,
        max_grad_norm,
    })
}

/// Average online proxy loss minus the best fixed proxies' average loss, at each checkpoint.
pub fn proxy_regret_curve(
    x: &EmbeddingMatrix,
    trace: &ProxyTrace,
    tau_i: f64,
    checkpoints: &[usize],
    tol: f64,
) -> Result<RegretCurve> {
    validate_checkpoints(checkpoints, trace.online_losses.len())?;
    let points = checkpoints
        .iter()
        .map(|&n| {
            let online = trace.online_losses[..n].iter().sum::<f64>() / n as f64;
            let best = solve_offline_proxies(&x.head(n), &trace.targets[..n], tau_i, tol)?;
            Ok((n, online - best.mean_loss))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegretCurve::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn alpha_zero_is_identity() {
        let q = vec![pv(&[0.6, 0.3, 0.1]), pv(&[0.2, 0.2, 0.6])];
        let sol = solve_offline_labels(&q, 0.0, 1e-6).unwrap();
        assert_eq!(sol.labels, q);
        assert_eq!(sol.duals, vec![0.0; 3]);
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn inactive_constraints() {
        let q = vec![pv(&[1.0, 0.0]), pv(&[0.0, 1.0])];
        let sol = solve_offline_labels(&q, 1.0, 1e-6).unwrap();
        assert_eq!(sol.labels, q);
        assert_eq!(sol.duals, vec![0.0, 0.0]);
    }

    /// Oracle: a 1e-4 grid over the shared label (the optimum is symmetric in the two samples).
    #[test]
    fn skewed_pair_matches_grid() {
        let q = vec![pv(&[0.9, 0.1]), pv(&[0.9, 0.1])];
        let mut best = f64::INFINITY;
        for k in 0..=10_000 {
            let t = k as f64 * 1e-4;
            if t < 0.5 - 1e-12 {
                continue;
            }
            // second coordinate mean must be >= 1/2
            let p = [1.0 - t, t];
            best = best.min(2.0 * simplex::kl_divergence(&p, &[0.9, 0.1]));
        }
        assert!((best - 2.0 * 0.510_825_623_765_990_7).abs() < 1e-9);
        let sol = solve_offline_labels(&q, 1.0, 1e-6).unwrap();
        for p in &sol.labels {
            assert!((p[0] - 0.5).abs() < 1e-6, "{p:?}");
        }
        assert!((sol.objective - best).abs() < 1e-5);
        assert!(sol.kkt.max() < 1e-6, "{:?}", sol.kkt);
    }

    #[test]
    fn infeasible_reports_non_convergence() {
        let q = vec![pv(&[1.0, 0.0]), pv(&[1.0, 0.0])];
        let err = solve_offline_labels(&q, 1.0, 1e-6).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }

    #[test]
    fn gap_zero_without_balancing() {
        let q = vec![pv(&[0.6, 0.4]), pv(&[0.1, 0.9])];
        let gap = duality_gap(DualTrajectory::Fixed(&[0.0, 0.0]), &q, &q, 0.0, 10.0).unwrap();
        assert!(gap.abs() < 1e-15, "{gap}");
    }

    #[test]
    fn gap_at_saddle_point_is_small() {
        let q = vec![pv(&[0.9, 0.1]), pv(&[0.7, 0.3]), pv(&[0.6, 0.4])];
        let sol = solve_offline_labels(&q, 1.0, 1e-9).unwrap();
        let gap = duality_gap(DualTrajectory::Fixed(&sol.duals), &sol.labels, &q, 1.0, 10.0).unwrap();
        assert!(gap.abs() < 1e-6, "{gap}");
    }

    #[test]
    fn per_step_gap_matches_accumulator() {
        let q = vec![pv(&[0.9, 0.1]), pv(&[0.7, 0.3]), pv(&[0.2, 0.8])];
        let rhos = vec![vec![0.0, 0.0], vec![0.0, 0.5], vec![0.1, 0.2]];
        let labels: Vec<_> = q
            .iter()
            .zip(&rhos)
            .map(|(qi, r)| onlab::reweight(qi, r).unwrap())
            .collect();
        let gap = duality_gap(DualTrajectory::PerStep(&rhos), &labels, &q, 1.0, 10.0).unwrap();
        // hand form: R * violation + mean_i rho^{i-1} . (p_i - alpha/C)
        let mut mass = [0.0; 2];
        let mut inner = 0.0;
        for (p, r) in labels.iter().zip(&rhos) {
            mass[0] += p[0];
            mass[1] += p[1];
            inner += r[0] * (p[0] - 0.5) + r[1] * (p[1] - 0.5);
        }
        let viol: f64 = mass.iter().map(|s| (1.5 - s).max(0.0)).sum();
        let expected = (10.0 * viol + inner) / 3.0;
        assert!((gap - expected).abs() < 1e-12, "{gap} vs {expected}");
    }

    #[test]
    fn fd_exact_on_quadratic() {
        let f = |w: &[f64]| w.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum::<f64>();
        let point = [0.3, -0.2, 1.0, 0.5];
        let g = finite_difference_gradient(f, &point, 2, 2, 1e-5).unwrap();
        for (i, (&gi, &p)) in g.as_slice().iter().zip(&point).enumerate() {
            assert!((gi - 2.0 * (i as f64 + 1.0) * p).abs() < 1e-8);
        }
        let g = finite_difference_gradient(|_| 3.0, &point, 2, 2, 1e-5).unwrap();
        assert_eq!(g.norm(), 0.0);
        assert!(finite_difference_gradient(f, &point, 2, 2, 1e-2).is_err());
    }

    #[test]
    fn slope_fit() {
        let pts: Vec<(usize, f64)> = [100, 1000, 10_000].iter().map(|&n| (n, 3.0 / (n as f64).sqrt())).collect();
        assert!((fit_log_log_slope(&pts).unwrap() + 0.5).abs() < 1e-12);
        assert!(fit_log_log_slope(&[(10, 1.0), (5, 1.0)]).is_err());
        assert!(fit_log_log_slope(&[(10, 1.0), (20, -1.0)]).is_err());
    }

    #[test]
    fn single_sample_proxy_separates_classes() {
        let x = EmbeddingMatrix::new(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let init = ProxyMatrix::from_rows(vec![vec![1.0, 0.2, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let targets = vec![pv(&[1.0, 0.0])];
        let before = mean_proxy_loss(&x, &targets, &init, 0.04).unwrap();
        let sol = solve_offline_proxies_with(
            &x,
            &targets,
            0.04,
            ProxySolverOptions { tol: 1e-8, init: Some(init), ..Default::default() },
        )
        .unwrap();
        assert!(sol.mean_loss < before && sol.mean_loss < 1e-8, "{sol:?}");
        assert!(sol.proxies.row(0)[1] - sol.proxies.row(1)[1] > 0.5);
    }

    #[test]
    fn proxy_solver_fixpoint() {
        let x = EmbeddingMatrix::new(4, 2, vec![1.0, 0.0, 0.8, 0.6, 0.0, 1.0, -0.6, 0.8]).unwrap();
        let targets = vec![pv(&[0.9, 0.1]), pv(&[0.7, 0.3]), pv(&[0.2, 0.8]), pv(&[0.1, 0.9])];
        let first = solve_offline_proxies(&x, &targets, 0.5, 1e-9).unwrap();
        let again = solve_offline_proxies_with(
            &x,
            &targets,
            0.5,
            ProxySolverOptions { tol: 1e-9, init: Some(first.proxies.clone()), ..Default::default() },
        )
        .unwrap();
        assert_eq!(again.iterations, 0);
        assert_eq!(again.proxies, first.proxies);
    }
}
