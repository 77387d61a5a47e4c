//! The streaming driver.
//!
//! Each arriving embedding is classified from the current state and then
//! used once to update it:
//!
//! 1. `q = softmax(x . z / tau_t)` against the fixed text proxies,
//! 2. `p*` = `q` reweighted by the class-balance duals,
//! 3. `p' = softmax(x . w / tau_i)` against the learned vision proxies,
//! 4. `p~ = lambda p' + (1 - lambda) p*`, prediction `argmax p~`,
//! 5. dual ascent with `p*`, then a projected proxy step toward `p*`.
//!
//! The embedding is dropped after the step; the state is `O(C d)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::mixing::{self, MixSchedule};
use crate::onlab::{self, DualState};
use crate::onproxy::{self, ProxyMatrix};
use crate::oracle::{GapAccumulator, DEFAULT_DUAL_BOUND};
use crate::params::HyperParams;
use crate::simplex::{self, ProbabilityVector};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Input rows whose norm is off by more than this are counted as renormalized.
const INPUT_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// Row of the sample in the source.
    pub sample_index: usize,
    pub epoch: usize,
    pub predicted_class: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_tilde: Option<ProbabilityVector>,
    pub lambda_used: f64,
    pub true_class: Option<usize>,
}

/// What one step produced.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub predicted_class: usize,
    pub p_tilde: ProbabilityVector,
    pub p_star: ProbabilityVector,
    pub lambda: f64,
}

/// Online zero-shot classifier state: duals, vision proxies, and counters.
#[derive(Clone, Debug)]
pub struct OnZeta {
    text: ProxyMatrix,
    duals: DualState,
    proxies: ProxyMatrix,
    params: HyperParams,
    schedule: MixSchedule,
    gap: GapAccumulator,
    renormalized: usize,
    degenerate: usize,
}

impl OnZeta {
    /// Starts from zero duals and vision proxies equal to the text proxies.
    /// `n_total` is the declared number of steps for the mixing schedule.
    pub fn new(text: ProxyMatrix, params: HyperParams, n_total: u64) -> Result<Self> {
        params.validate()?;
        let c = text.classes();
        Ok(Self {
            duals: DualState::zeros(c),
            proxies: text.clone(),
            schedule: MixSchedule::new(params.beta, n_total)?,
            gap: GapAccumulator::new(c, params.alpha, DEFAULT_DUAL_BOUND),
            text,
            params,
            renormalized: 0,
            degenerate: 0,
        })
    }

    pub fn duals(&self) -> &DualState {
        &self.duals
    }

    pub fn vision_proxies(&self) -> &ProxyMatrix {
        &self.proxies
    }

    pub fn text_proxies(&self) -> &ProxyMatrix {
        &self.text
    }

    pub fn params(&self) -> &HyperParams {
        &self.params
    }

    /// Samples processed so far.
    pub fn steps(&self) -> u64 {
        self.duals.steps()
    }

    /// Duality gap of the label learner over everything seen so far.
    pub fn label_gap(&self) -> f64 {
        self.gap.gap()
    }

    pub fn renormalized_inputs(&self) -> usize {
        self.renormalized
    }

    pub fn degenerate_projections(&self) -> usize {
        self.degenerate
    }

    /// Classifies `x` with the current state, then updates duals and proxies.
    pub fn step(&mut self, x: &[f64]) -> Result<StepOutcome> {
        if x.len() != self.text.dim() {
            return Err(Error::Shape(format!(
                "embedding has dimension {}, proxies have {}",
                x.len(),
                self.text.dim()
            )));
        }
        let norm = simplex::norm(x);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidParameter(format!("embedding has norm {norm}")));
        }
        let unit;
        let x = if norm == 1.0 {
            x
        } else {
            if (norm - 1.0).abs() > INPUT_NORM_TOLERANCE {
                self.renormalized += 1;
            }
            unit = x.iter().map(|v| v / norm).collect::<Vec<_>>();
            &unit
        };

        let p = &self.params;
        let index = self.duals.steps() + 1;
        let q = onlab::softmax_similarity(x, &self.text, p.tau_t)?;
        let p_star = onlab::reweight_with_duals(&q, &self.duals)?;
        let p_prime = onproxy::proxy_probabilities(x, &self.proxies, p.tau_i)?;
        let lambda = match p.fixed_lambda {
            Some(l) => l,
            None => mixing::mixing_weight(index, &self.schedule),
        };
        let p_tilde = mixing::combine_predictions(&p_prime, &p_star, lambda)?;
        let predicted_class = p_tilde.argmax();

        self.gap.push(&q, &p_star, self.duals.rho());
        self.duals.ascend(&p_star, p.alpha, p.c_rho)?;
        let grad = onproxy::proxy_gradient(x, &p_star, &p_prime, p.tau_i)?;
        let skipped = self
            .proxies
            .apply_step(&grad, onproxy::proxy_step_size(index, p.c_w))?;
        self.degenerate += skipped.len();

        Ok(StepOutcome {
            predicted_class,
            p_tilde,
            p_star,
            lambda,
        })
    }
}

/// Vanilla zero-shot prediction: the proxy with the largest cosine.
pub fn zero_shot_predict(x: &[f64], text: &ProxyMatrix) -> Result<usize> {
    Ok(simplex::argmax(&text.similarities(x)?))
}

/// Mean over samples of the best cosine to any proxy.
pub fn mean_nearest_proxy_cosine(embeddings: &EmbeddingMatrix, proxies: &ProxyMatrix) -> Result<f64> {
    if embeddings.rows() == 0 {
        return Err(Error::EmptyStream);
    }
    let mut total = 0.0;
    for i in 0..embeddings.rows() {
        let sims = proxies.similarities(&embeddings.row_f64(i))?;
        total += sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(total / embeddings.rows() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// Steps taken across all epochs.
    pub num_processed: usize,
    /// Samples in the evaluated (final) epoch.
    pub num_evaluated: usize,
    /// Fraction of correct on-the-fly predictions in the evaluated epoch;
    /// `None` without ground truth.
    pub accumulated_accuracy: Option<f64>,
    pub labeled_samples: usize,
    /// Smallest predicted-class share in the evaluated epoch.
    pub min_class_proportion: f64,
    pub per_class_counts: Vec<usize>,
    pub mean_text_cosine: f64,
    pub mean_vision_cosine: f64,
    /// Label-learner duality gap at steps 10, 100, 1000, ... and at the last step.
    pub regret_trace: Vec<(usize, f64)>,
    pub final_duals: Vec<f64>,
    pub renormalized_inputs: usize,
    pub degenerate_projections: usize,
    pub config_echo: HyperParams,
}

/// Arrival order for `epoch`: the source order first, then seeded reshuffles.
pub fn epoch_order(n: usize, epoch: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if epoch > 0 {
        let sub_seed = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed));
    }
    order
}

/// Runs the stream for `params.epochs` passes, handing each record to `sink`.
/// Returns the report and the final state.
pub fn run_stream_with_state<F>(dataset: &Dataset, params: &HyperParams, mut sink: F) -> Result<(RunReport, OnZeta)>
where
    F: FnMut(&PredictionRecord) -> Result<()>,
{
    params.validate()?;
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyStream);
    }
    dataset.check()?;
    let c = dataset.classes();
    let declared = params.num_samples.unwrap_or(n) as u64;
    let n_total = declared * params.epochs as u64;
    let mut engine = OnZeta::new(dataset.text_proxies.clone(), params.clone(), n_total)?;

    let total_steps = n * params.epochs;
    let mut counts = vec![0usize; c];
    let mut correct = 0usize;
    let mut labeled = 0usize;
    let mut trace = Vec::new();
    let mut next_checkpoint = 10usize;

    for epoch in 0..params.epochs {
        let last = epoch + 1 == params.epochs;
        for i in epoch_order(n, epoch, params.seed) {
            let outcome = engine.step(&dataset.embeddings.row_f64(i))?;
            let true_class = dataset.label(i);
            let record = PredictionRecord {
                sample_index: i,
                epoch,
                predicted_class: outcome.predicted_class,
                p_tilde: Some(outcome.p_tilde),
                lambda_used: outcome.lambda,
                true_class,
            };
            sink(&record)?;
            if last {
                counts[record.predicted_class] += 1;
                if let Some(y) = true_class {
                    labeled += 1;
                    correct += usize::from(y == record.predicted_class);
                }
            }
            let step = engine.steps() as usize;
            if step == next_checkpoint || step == total_steps {
                trace.push((step, engine.label_gap()));
                if step == next_checkpoint {
                    next_checkpoint *= 10;
                }
            }
        }
    }

    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        num_processed: total_steps,
        num_evaluated: n,
        accumulated_accuracy: (labeled > 0).then(|| correct as f64 / labeled as f64),
        labeled_samples: labeled,
        min_class_proportion: counts.iter().copied().min().unwrap_or(0) as f64 / n as f64,
        per_class_counts: counts,
        mean_text_cosine: mean_nearest_proxy_cosine(&dataset.embeddings, &dataset.text_proxies)?,
        mean_vision_cosine: mean_nearest_proxy_cosine(&dataset.embeddings, engine.vision_proxies())?,
        regret_trace: trace,
        final_duals: engine.duals().rho().to_vec(),
        renormalized_inputs: dataset.renormalized + engine.renormalized_inputs(),
        degenerate_projections: engine.degenerate_projections(),
        config_echo: params.clone(),
    };
    Ok((report, engine))
}

pub fn run_stream<F>(dataset: &Dataset, params: &HyperParams, sink: F) -> Result<RunReport>
where
    F: FnMut(&PredictionRecord) -> Result<()>,
{
    Ok(run_stream_with_state(dataset, params, sink)?.0)
}

/// Accuracy and per-class prediction counts of plain zero-shot prediction.
pub fn baseline_predictions(dataset: &Dataset) -> Result<Vec<usize>> {
    (0..dataset.len())
        .map(|i| zero_shot_predict(&dataset.embeddings.row_f64(i), &dataset.text_proxies))
        .collect()
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let hits = predictions.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticSpec};

    fn small() -> Dataset {
        generate_synthetic(&SyntheticSpec {
            classes: 4,
            dim: 8,
            samples: 200,
            ..Default::default()
        })
        .unwrap()
        .to_dataset()
        .unwrap()
    }

    #[test]
    fn first_lambda() {
        let ds = small();
        let mut engine = OnZeta::new(ds.text_proxies.clone(), HyperParams::default(), 10_000).unwrap();
        let out = engine.step(&ds.embeddings.row_f64(0)).unwrap();
        assert!((out.lambda - 0.008).abs() < 1e-15);
        assert_eq!(engine.steps(), 1);
    }

    #[test]
    fn inert_learners_give_baseline() {
        let ds = small();
        let params = HyperParams { alpha: 0.0, beta: 0.0, ..Default::default() };
        let base = baseline_predictions(&ds).unwrap();
        let mut preds = vec![usize::MAX; ds.len()];
        let report = run_stream(&ds, &params, |r| {
            preds[r.sample_index] = r.predicted_class;
            Ok(())
        })
        .unwrap();
        assert_eq!(preds, base);
        assert!(report.final_duals.iter().all(|&r| r == 0.0));
        assert!(report.regret_trace.iter().all(|&(_, g)| g.abs() < 1e-12));
    }

    #[test]
    fn single_sample_stream() {
        let mut ds = small();
        ds.embeddings = ds.embeddings.head(1);
        ds.labels.as_mut().unwrap().truncate(1);
        let report = run_stream(&ds, &HyperParams::default(), |_| Ok(())).unwrap();
        assert_eq!(report.num_processed, 1);
        assert_eq!(report.per_class_counts.iter().sum::<usize>(), 1);
        let acc = report.accumulated_accuracy.unwrap();
        assert!(acc == 0.0 || acc == 1.0);
    }

    #[test]
    fn unlabeled_samples_skip_accuracy() {
        let mut ds = small();
        ds.labels = None;
        let report = run_stream(&ds, &HyperParams::default(), |_| Ok(())).unwrap();
        assert!(report.accumulated_accuracy.is_none());
        assert_eq!(report.per_class_counts.iter().sum::<usize>(), ds.len());
    }

    #[test]
    fn renormalizes_drifted_input() {
        let ds = small();
        let mut engine = OnZeta::new(ds.text_proxies.clone(), HyperParams::default(), 10).unwrap();
        let x: Vec<f64> = ds.embeddings.row_f64(0).iter().map(|v| v * 3.0).collect();
        let scaled = engine.step(&x).unwrap();
        let mut fresh = OnZeta::new(ds.text_proxies.clone(), HyperParams::default(), 10).unwrap();
        let plain = fresh.step(&ds.embeddings.row_f64(0)).unwrap();
        assert_eq!(engine.renormalized_inputs(), 1);
        assert_eq!(scaled.predicted_class, plain.predicted_class);
        assert!(engine.step(&[0.0; 8]).is_err());
        assert!(engine.step(&[1.0; 3]).is_err());
    }

    #[test]
    fn epoch_orders() {
        assert_eq!(epoch_order(5, 0, 9), vec![0, 1, 2, 3, 4]);
        let a = epoch_order(50, 1, 9);
        assert_eq!(a, epoch_order(50, 1, 9));
        assert_ne!(a, epoch_order(50, 2, 9));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn cosine_metric_edges() {
        let w = ProxyMatrix::from_rows(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let on = EmbeddingMatrix::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((mean_nearest_proxy_cosine(&on, &w).unwrap() - 1.0).abs() < 1e-15);
        let off = EmbeddingMatrix::new(1, 3, vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(mean_nearest_proxy_cosine(&off, &w).unwrap(), 0.0);
        let empty = EmbeddingMatrix::new(0, 3, vec![]).unwrap();
        assert!(mean_nearest_proxy_cosine(&empty, &w).is_err());
    }
}
