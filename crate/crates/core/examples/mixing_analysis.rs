//! The mixing weight: the growing schedule, the closed-form optimum for a
//! biased versus a noisy estimate, and a fixed-weight sweep on a task.

use onzeta::dataio::{generate_synthetic, SyntheticSpec};
use onzeta::mixing::{mixing_weight, optimal_lambda, MixSchedule};
use onzeta::{run_stream, HyperParams};

fn main() -> onzeta::Result<()> {
    let schedule = MixSchedule::new(0.8, 10_000)?;
    println!("schedule with beta 0.8 over 10000 steps:");
    for step in [1, 10, 100, 1_000, 5_000, 10_000, 20_000] {
        println!("  step {step:<6} lambda {:.4}", mixing_weight(step, &schedule));
    }

    println!("\nweight on the noisy estimate, bias^2 / (bias^2 + variance):");
    for (bias_sq, variance) in [(0.01, 0.01), (0.01, 0.04), (0.04, 0.01), (0.0, 0.02)] {
        println!("  bias^2 {bias_sq:<5} variance {variance:<5} -> {:.3}", optimal_lambda(bias_sq, variance)?);
    }

    let dataset = generate_synthetic(&SyntheticSpec {
        dim: 256,
        samples: 6_000,
        concentration: 3.0,
        bias_angle: 0.5,
        ..Default::default()
    })?
    .to_dataset()?;
    println!("\nfixed weight sweep:");
    for lambda in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let params = HyperParams { fixed_lambda: Some(lambda), ..Default::default() };
        let report = run_stream(&dataset, &params, |_| Ok(()))?;
        println!("  lambda {lambda:.1} accuracy {:.4}", report.accumulated_accuracy.unwrap_or(f64::NAN));
    }
    let report = run_stream(&dataset, &HyperParams::default(), |_| Ok(()))?;
    println!("  schedule   accuracy {:.4}", report.accumulated_accuracy.unwrap_or(f64::NAN));
    Ok(())
}
