//! Named parameter presets and multi-epoch runs on a small task.

use onzeta::dataio::{generate_synthetic, SyntheticSpec};
use onzeta::{run_stream, Preset};

fn main() -> onzeta::Result<()> {
    let dataset = generate_synthetic(&SyntheticSpec {
        dim: 64,
        samples: 800,
        concentration: 3.0,
        bias_angle: 0.4,
        seed: 11,
        ..Default::default()
    })?
    .to_dataset()?;

    for preset in [Preset::Default, Preset::SmallDataset, Preset::SmallDatasetSaturated] {
        for epochs in [1, 3] {
            let params = onzeta::HyperParams { epochs, ..preset.params() };
            let report = run_stream(&dataset, &params, |_| Ok(()))?;
            println!(
                "{:<22} alpha {:.1} beta {:.1} epochs {epochs}  accuracy {:.4}",
                format!("{preset:?}"),
                params.alpha,
                params.beta,
                report.accumulated_accuracy.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}
