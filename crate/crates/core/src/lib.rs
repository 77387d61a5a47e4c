//! Streaming zero-shot classification.
//!
//! Embeddings arrive one at a time, are labeled immediately, and are never
//! stored. Two online learners refine the zero-shot prediction as the stream
//! goes by:
//!
//! * [`onlab`] keeps one dual variable per class and reweights the text-space
//!   prediction so that no class is starved (class-balance constraint);
//! * [`onproxy`] learns class proxies in the image-embedding space by
//!   projected online gradient descent on the unit sphere.
//!
//! [`mixing`] blends the two predictions with a weight that grows as the
//! vision proxies mature, and [`pipeline`] wires everything into a per-sample
//! step. [`oracle`] holds offline reference solvers and the regret harness;
//! [`dataio`] the file formats and a synthetic task generator.
//!
//! ```
//! use onzeta::dataio::{generate_synthetic, SyntheticSpec};
//! use onzeta::{run_stream, HyperParams};
//!
//! let data = generate_synthetic(&SyntheticSpec { samples: 500, ..Default::default() })?;
//! let report = run_stream(&data.to_dataset()?, &HyperParams::default(), |_| Ok(()))?;
//! assert!(report.accumulated_accuracy.unwrap() > 0.5);
//! # Ok::<(), onzeta::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataio;
mod error;
pub mod mixing;
pub mod onlab;
pub mod onproxy;
pub mod oracle;
mod params;
pub mod pipeline;
pub mod simplex;

pub use error::{Error, Result};
pub use params::{HyperParams, Preset};
pub use pipeline::{run_stream, OnZeta, PredictionRecord, RunReport};
pub use simplex::ProbabilityVector;
