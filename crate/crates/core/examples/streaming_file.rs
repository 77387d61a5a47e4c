//! Files on disk: write a task as ONZ1 embeddings, proxies, labels and a
//! manifest, then classify it by streaming rows from the file one at a time.

use onzeta::dataio::{
    generate_synthetic, read_labels, read_proxies, write_embeddings, write_labels, write_proxies,
    EmbeddingStream, Manifest, SyntheticSpec, MANIFEST_SCHEMA_VERSION,
};
use onzeta::{HyperParams, OnZeta};

fn main() -> onzeta::Result<()> {
    let dir = std::env::temp_dir().join(format!("onzeta-stream-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    let data = generate_synthetic(&SyntheticSpec { samples: 3_000, ..Default::default() })?;
    write_embeddings(&data.embeddings, dir.join("embeddings.onz"))?;
    write_proxies(&data.text_proxies.to_proxies()?, dir.join("proxies.onz"))?;
    write_labels(&data.labels, dir.join("labels.txt"))?;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        embeddings_path: "embeddings.onz".into(),
        proxies_path: "proxies.onz".into(),
        labels_path: Some("labels.txt".into()),
        class_names: (0..10).map(|j| format!("class_{j}")).collect(),
        n_declared: data.labels.len(),
        notes: "synthetic".into(),
    };
    manifest.save(dir.join("manifest.json"))?;
    println!("wrote task to {}", dir.display());

    // Only the proxies and one row at a time are held in memory.
    let text = read_proxies(dir.join("proxies.onz"))?;
    let labels = read_labels(dir.join("labels.txt"))?;
    let stream = EmbeddingStream::open(dir.join("embeddings.onz"))?;
    println!("streaming {} rows of dimension {}", stream.rows(), stream.dim());
    let mut engine = OnZeta::new(text, HyperParams::default(), stream.rows() as u64)?;
    let mut correct = 0;
    for (i, row) in stream.enumerate() {
        let out = engine.step(&row?)?;
        correct += usize::from(out.predicted_class == labels[i]);
    }
    println!("accuracy {:.4} over {} steps", correct as f64 / labels.len() as f64, engine.steps());

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
