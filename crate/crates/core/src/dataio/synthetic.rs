//! Seeded synthetic zero-shot tasks with a controlled text/vision offset.
//!
//! Class centroids are uniform on the unit sphere. Each sample is its class
//! centroid plus isotropic Gaussian noise with standard deviation
//! `1 / concentration` per coordinate, renormalized. The "text proxy" of a
//! class is its centroid rotated by `bias_angle` toward a random direction
//! orthogonal to it, so every text proxy has cosine `cos(bias_angle)` with
//! the true centroid.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::simplex::SIMPLEX_TOL;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples: usize,
    pub concentration: f64,
    /// Angle in radians between each text proxy and its class centroid.
    pub bias_angle: f64,
    /// Class frequencies; empty means uniform.
    pub class_prior: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 32,
            samples: 10_000,
            concentration: 4.0,
            bias_angle: 0.3,
            class_prior: Vec::new(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Prior where class 0 is `factor` times as likely as each other class.
    pub fn skewed_prior(classes: usize, factor: f64) -> Vec<f64> {
        let total = factor + (classes - 1) as f64;
        (0..classes)
            .map(|j| if j == 0 { factor / total } else { 1.0 / total })
            .collect()
    }

    pub fn prior(&self) -> Vec<f64> {
        if self.class_prior.is_empty() {
            vec![1.0 / self.classes as f64; self.classes]
        } else {
            self.class_prior.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::InvalidParameter("need at least one class".into()));
        }
        if self.classes > self.samples {
            return Err(Error::InvalidParameter(format!(
                "{} classes exceed {} samples",
                self.classes, self.samples
            )));
        }
        if self.dim < 2 {
            return Err(Error::InvalidParameter("dimension must be at least 2".into()));
        }
        if !(self.concentration > 0.0) || !self.concentration.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "concentration {} must be positive",
                self.concentration
            )));
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.bias_angle) {
            return Err(Error::InvalidParameter(format!(
                "bias angle {} is outside [0, pi/2]",
                self.bias_angle
            )));
        }
        let prior = self.prior();
        if prior.len() != self.classes {
            return Err(Error::InvalidParameter(format!(
                "prior has {} entries for {} classes",
                prior.len(),
                self.classes
            )));
        }
        let sum: f64 = prior.iter().sum();
        if prior.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL.max(1e-6) {
            return Err(Error::InvalidParameter("class prior is not a distribution".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    /// Samples in arrival order.
    pub embeddings: EmbeddingMatrix,
    pub labels: Vec<usize>,
    /// Biased class proxies, one row per class.
    pub text_proxies: EmbeddingMatrix,
    /// True class centroids.
    pub centroids: EmbeddingMatrix,
}

impl SyntheticData {
    pub fn to_dataset(&self) -> Result<Dataset> {
        Ok(Dataset {
            embeddings: self.embeddings.clone(),
            text_proxies: self.text_proxies.to_proxies()?,
            labels: Some(self.labels.clone()),
            class_names: (0..self.spec.classes).map(|j| format!("class_{j}")).collect(),
            n_declared: self.spec.samples,
            renormalized: 0,
        })
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, dim);
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            normalize(&mut v);
            return v;
        }
    }
}

/// Unit vector orthogonal to the unit vector `mu`.
fn orthogonal_unit(rng: &mut ChaCha8Rng, mu: &[f64]) -> Vec<f64> {
    loop {
        let mut u = gaussian(rng, mu.len());
        let proj: f64 = u.iter().zip(mu).map(|(a, b)| a * b).sum();
        u.iter_mut().zip(mu).for_each(|(a, b)| *a -= proj * b);
        if u.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            normalize(&mut u);
            return u;
        }
    }
}

/// Per-class sample counts by largest remainder, summing to `n`.
pub fn class_quotas(prior: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = prior.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..prior.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &j in order.iter().take(n.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

fn to_f32_rows(rows: &[Vec<f64>]) -> Result<EmbeddingMatrix> {
    let rows32: Vec<Vec<f32>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| v as f32).collect())
        .collect();
    EmbeddingMatrix::from_rows(&rows32)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, d) = (spec.classes, spec.dim);

    let centroids: Vec<Vec<f64>> = (0..c).map(|_| random_unit(&mut rng, d)).collect();
    let (cos, sin) = (spec.bias_angle.cos(), spec.bias_angle.sin());
    let proxies: Vec<Vec<f64>> = centroids
        .iter()
        .map(|mu| {
            let u = orthogonal_unit(&mut rng, mu);
            let mut z: Vec<f64> = mu.iter().zip(&u).map(|(m, v)| cos * m + sin * v).collect();
            normalize(&mut z);
            z
        })
        .collect();

    let counts = class_quotas(&spec.prior(), spec.samples);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(j, &k)| std::iter::repeat_n(j, k))
        .collect();
    labels.shuffle(&mut rng);

    let sigma = 1.0 / spec.concentration;
    let mut data = Vec::with_capacity(spec.samples * d);
    for &y in &labels {
        let mut x: Vec<f64> = centroids[y]
            .iter()
            .map(|&m| {
                let e: f64 = StandardNormal.sample(&mut rng);
                m + sigma * e
            })
            .collect();
        normalize(&mut x);
        data.extend(x.iter().map(|&v| v as f32));
    }

    Ok(SyntheticData {
        spec: spec.clone(),
        embeddings: EmbeddingMatrix::new(spec.samples, d, data)?,
        labels,
        text_proxies: to_f32_rows(&proxies)?,
        centroids: to_f32_rows(&centroids)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotas_sum_and_follow_prior() {
        let q = class_quotas(&[0.5, 0.25, 0.25], 10);
        assert_eq!(q.iter().sum::<usize>(), 10);
        assert_eq!(q[0], 5);
        let q = class_quotas(&SyntheticSpec::skewed_prior(10, 5.0), 10_000);
        assert_eq!(q.iter().sum::<usize>(), 10_000);
        assert_eq!(q[0], 3572);
    }

    #[test]
    fn rejects_bad_specs() {
        let base = SyntheticSpec { samples: 100, ..Default::default() };
        assert!(SyntheticSpec { classes: 200, ..base.clone() }.validate().is_err());
        assert!(SyntheticSpec { bias_angle: 2.0, ..base.clone() }.validate().is_err());
        assert!(SyntheticSpec { bias_angle: -0.1, ..base.clone() }.validate().is_err());
        assert!(SyntheticSpec { concentration: 0.0, ..base.clone() }.validate().is_err());
        assert!(SyntheticSpec { class_prior: vec![0.5, 0.5], ..base.clone() }.validate().is_err());
        base.validate().unwrap();
    }

    #[test]
    fn proxies_sit_at_the_bias_angle() {
        let spec = SyntheticSpec { samples: 50, bias_angle: 0.4, ..Default::default() };
        let data = generate_synthetic(&spec).unwrap();
        for j in 0..spec.classes {
            let cos: f64 = data
                .text_proxies
                .row(j)
                .iter()
                .zip(data.centroids.row(j))
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum();
            assert!((cos - 0.4f64.cos()).abs() < 1e-6, "class {j}: {cos}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec { samples: 300, ..Default::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.labels, b.labels);
        let c = generate_synthetic(&SyntheticSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.embeddings, c.embeddings);
    }

    #[test]
    fn rows_are_unit_norm() {
        let data = generate_synthetic(&SyntheticSpec { samples: 200, ..Default::default() }).unwrap();
        for r in data.embeddings.iter_rows() {
            let n: f64 = r.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
}
