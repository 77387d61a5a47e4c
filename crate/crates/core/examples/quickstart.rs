//! Generate a synthetic task, stream it once, and compare against the
//! plain zero-shot rule.

use onzeta::dataio::{generate_synthetic, SyntheticSpec};
use onzeta::pipeline::{accuracy, baseline_predictions};
use onzeta::{run_stream, HyperParams};

fn main() -> onzeta::Result<()> {
    let spec = SyntheticSpec {
        classes: 10,
        dim: 256,
        samples: 10_000,
        concentration: 3.0,
        bias_angle: 0.5,
        class_prior: vec![0.1; 10],
        seed: 1,
    };
    let data = generate_synthetic(&spec)?;
    let dataset = data.to_dataset()?;

    let baseline = accuracy(&baseline_predictions(&dataset)?, &data.labels);
    let report = run_stream(&dataset, &HyperParams::default(), |_| Ok(()))?;

    println!("zero-shot accuracy  {baseline:.4}");
    println!("online accuracy     {:.4}", report.accumulated_accuracy.unwrap_or(f64::NAN));
    println!("smallest class share {:.4}", report.min_class_proportion);
    println!("text / vision cosine {:.4} / {:.4}", report.mean_text_cosine, report.mean_vision_cosine);
    Ok(())
}
