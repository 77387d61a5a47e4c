//! On-disk formats: `ONZ1` embedding files, plain-text labels, and the JSON
//! manifest tying them together. Also hosts the synthetic stream generator.

mod format;
pub mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use format::{
    decode, decode_header, encode, encode_header, read_embeddings, read_embeddings_raw,
    read_proxies, write_embeddings, write_proxies, EmbeddingMatrix, EmbeddingStream,
    LoadedEmbeddings, HEADER_LEN, MAGIC, NORM_TOLERANCE,
};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

use crate::error::{Error, Result};
use crate::onproxy::ProxyMatrix;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Describes one classification task on disk. Relative paths are resolved
/// against the directory holding the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub embeddings_path: PathBuf,
    pub proxies_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_path: Option<PathBuf>,
    pub class_names: Vec<String>,
    pub n_declared: usize,
    #[serde(default)]
    pub notes: String,
}

fn default_schema() -> u32 {
    MANIFEST_SCHEMA_VERSION
}

impl Manifest {
    /// Reads a manifest and rewrites its relative paths against `path`'s directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest schema_version {}",
                m.schema_version
            )));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
        m.embeddings_path = resolve(&m.embeddings_path);
        m.proxies_path = resolve(&m.proxies_path);
        m.labels_path = m.labels_path.as_ref().map(resolve);
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Writes one base-10 label per line.
pub fn write_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads a labels file. Blank lines are skipped.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    parse_labels(&text)
}

pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| Error::Format(format!("labels line {}: {e}", i + 1)))
        })
        .collect()
}

/// Everything needed to run a stream: text proxies, embeddings in arrival
/// order, and optional ground truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub embeddings: EmbeddingMatrix,
    pub text_proxies: ProxyMatrix,
    pub labels: Option<Vec<usize>>,
    pub class_names: Vec<String>,
    pub n_declared: usize,
    /// Embedding rows rescaled on load.
    pub renormalized: usize,
}

impl Dataset {
    pub fn load(manifest: &Manifest) -> Result<Self> {
        let loaded = read_embeddings(&manifest.embeddings_path)?;
        let text_proxies = read_proxies(&manifest.proxies_path)?;
        let labels = manifest.labels_path.as_ref().map(read_labels).transpose()?;
        let dataset = Self {
            embeddings: loaded.matrix,
            text_proxies,
            labels,
            class_names: manifest.class_names.clone(),
            n_declared: manifest.n_declared,
            renormalized: loaded.renormalized,
        };
        dataset.check()?;
        Ok(dataset)
    }

    pub fn check(&self) -> Result<()> {
        let c = self.text_proxies.classes();
        if !self.class_names.is_empty() && self.class_names.len() != c {
            return Err(Error::Shape(format!(
                "{} class names but {c} proxy rows",
                self.class_names.len()
            )));
        }
        if self.embeddings.dim() != self.text_proxies.dim() {
            return Err(Error::Shape(format!(
                "embeddings have dimension {}, proxies {}",
                self.embeddings.dim(),
                self.text_proxies.dim()
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.embeddings.rows() {
                return Err(Error::Shape(format!(
                    "{} labels for {} embeddings",
                    labels.len(),
                    self.embeddings.rows()
                )));
            }
            if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
                return Err(Error::LabelOutOfRange {
                    index,
                    label,
                    classes: c,
                });
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.text_proxies.classes()
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows() == 0
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }
}

/// Writes a synthetic task as `embeddings.onz`, `proxies.onz`,
/// `centroids.onz`, `labels.txt` and `manifest.json` under `dir`.
pub fn write_synthetic(data: &SyntheticData, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_embeddings(&data.embeddings, dir.join("embeddings.onz"))?;
    write_embeddings(&data.text_proxies, dir.join("proxies.onz"))?;
    write_embeddings(&data.centroids, dir.join("centroids.onz"))?;
    write_labels(&data.labels, dir.join("labels.txt"))?;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        embeddings_path: "embeddings.onz".into(),
        proxies_path: "proxies.onz".into(),
        labels_path: Some("labels.txt".into()),
        class_names: (0..data.spec.classes).map(|j| format!("class_{j}")).collect(),
        n_declared: data.spec.samples,
        notes: format!(
            "synthetic: d={}, concentration={}, bias_angle={}, seed={}",
            data.spec.dim, data.spec.concentration, data.spec.bias_angle, data.spec.seed
        ),
    };
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}
