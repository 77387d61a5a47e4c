//! Online label learning on its own: how the balance weight `alpha` moves
//! predictions toward under-predicted classes, checked against the offline
//! balanced relabeling.

use onzeta::dataio::{generate_synthetic, SyntheticSpec};
use onzeta::onlab::{reweight_with_duals, softmax_similarity, DualState};
use onzeta::oracle::solve_offline_labels;
use onzeta::HyperParams;

fn main() -> onzeta::Result<()> {
    let data = generate_synthetic(&SyntheticSpec {
        dim: 16,
        samples: 4_000,
        bias_angle: 0.5,
        class_prior: SyntheticSpec::skewed_prior(10, 8.0),
        ..Default::default()
    })?;
    let text = data.text_proxies.to_proxies()?;
    let tau_t = HyperParams::default().tau_t;
    let q: Vec<_> = (0..data.embeddings.rows())
        .map(|i| softmax_similarity(&data.embeddings.row_f64(i), &text, tau_t))
        .collect::<onzeta::Result<_>>()?;

    println!("alpha  accuracy  min share  max dual");
    for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let mut duals = DualState::zeros(text.classes());
        let mut counts = vec![0usize; text.classes()];
        let mut correct = 0;
        for (qi, &y) in q.iter().zip(&data.labels) {
            let p = reweight_with_duals(qi, &duals)?;
            let k = p.argmax();
            counts[k] += 1;
            correct += usize::from(k == y);
            duals.ascend(&p, alpha, HyperParams::default().c_rho)?;
        }
        let n = q.len() as f64;
        let min_share = *counts.iter().min().unwrap() as f64 / n;
        let max_dual = duals.rho().iter().copied().fold(0.0, f64::max);
        println!("{alpha:<6} {:<9.4} {min_share:<10.4} {max_dual:.3}", correct as f64 / n);
    }

    let offline = solve_offline_labels(&q, 1.0, 1e-8)?;
    println!("\noffline duals at alpha = 1:");
    for (j, r) in offline.duals.iter().enumerate() {
        println!("  class {j}: {r:.4}");
    }
    println!("KKT residual {:.2e} after {} iterations", offline.kkt.max(), offline.iterations);
    Ok(())
}
