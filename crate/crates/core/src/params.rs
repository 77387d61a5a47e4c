use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tunable constants of the online learner.
///
/// Defaults are the reference configuration: full class balance (`alpha = 1`),
/// mixing cap `beta = 0.8`, step constants `c_rho = 20`, `c_w = 0.5`, and
/// temperatures `tau_t = 0.01` (text space) / `tau_i = 0.04` (vision space).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Fraction of the uniform mass every class is guaranteed.
    pub alpha: f64,
    /// Cap on the vision-space mixing weight.
    pub beta: f64,
    pub c_rho: f64,
    pub c_w: f64,
    pub tau_t: f64,
    pub tau_i: f64,
    /// Declared stream length used by the mixing schedule. `None` means the
    /// length of the stream being processed.
    pub num_samples: Option<usize>,
    pub epochs: usize,
    pub seed: u64,
    /// Replace the growing mixing schedule by a constant weight (ablation only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_lambda: Option<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.8,
            c_rho: 20.0,
            c_w: 0.5,
            tau_t: 0.01,
            tau_i: 0.04,
            num_samples: None,
            epochs: 1,
            seed: 0,
            fixed_lambda: None,
        }
    }
}

/// Named parameter bundles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// The reference configuration.
    Default,
    /// Smaller target sets: lean more on the text-space label (`beta = 0.4`).
    SmallDataset,
    /// Small sets where the zero-shot baseline is already strong: also relax balancing.
    SmallDatasetSaturated,
}

impl Preset {
    pub fn params(self) -> HyperParams {
        let base = HyperParams::default();
        match self {
            Preset::Default => base,
            Preset::SmallDataset => HyperParams { beta: 0.4, ..base },
            Preset::SmallDatasetSaturated => HyperParams {
                alpha: 0.4,
                beta: 0.4,
                ..base
            },
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Preset::Default),
            "small-dataset" => Ok(Preset::SmallDataset),
            "small-dataset-saturated" => Ok(Preset::SmallDatasetSaturated),
            other => Err(Error::InvalidParameter(format!("unknown preset {other:?}"))),
        }
    }
}

impl HyperParams {
    /// Rejects out-of-range values. Returns soft warnings (currently only a
    /// vision temperature that is not above the text temperature).
    pub fn validate(&self) -> Result<Vec<String>> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} must be positive")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("beta", self.beta)?;
        if let Some(l) = self.fixed_lambda {
            unit("fixed_lambda", l)?;
        }
        positive("c_rho", self.c_rho)?;
        positive("c_w", self.c_w)?;
        positive("tau_t", self.tau_t)?;
        positive("tau_i", self.tau_i)?;
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if self.num_samples == Some(0) {
            return Err(Error::InvalidParameter("num_samples must be at least 1".into()));
        }
        let mut warnings = Vec::new();
        if self.tau_i <= self.tau_t {
            warnings.push(format!(
                "tau_i = {} is not larger than tau_t = {}; vision proxies will be learned at text-space sharpness",
                self.tau_i, self.tau_t
            ));
        }
        Ok(warnings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_reference_values() {
        let p = HyperParams::default();
        assert_eq!((p.alpha, p.beta), (1.0, 0.8));
        assert_eq!((p.c_rho, p.c_w), (20.0, 0.5));
        assert_eq!((p.tau_t, p.tau_i), (0.01, 0.04));
        assert!(p.validate().unwrap().is_empty());
    }

    #[test]
    fn presets() {
        let small: Preset = "small-dataset".parse().unwrap();
        assert_eq!(small.params().beta, 0.4);
        assert_eq!(small.params().alpha, 1.0);
        let sat = Preset::SmallDatasetSaturated.params();
        assert_eq!((sat.alpha, sat.beta), (0.4, 0.4));
        assert!("bogus".parse::<Preset>().is_err());
    }

    #[test]
    fn range_checks() {
        let bad = HyperParams { alpha: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = HyperParams { beta: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = HyperParams { tau_t: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let warn = HyperParams { tau_i: 0.01, ..Default::default() };
        assert_eq!(warn.validate().unwrap().len(), 1);
    }
}
