//! Regret of both online learners against their offline optima at growing
//! stream lengths, with the fitted log-log slope.

use onzeta::dataio::{generate_synthetic, SyntheticSpec};
use onzeta::onlab::softmax_similarity;
use onzeta::oracle::{label_gap_curve, proxy_regret_curve, trace_online_proxies, RegretCurve, DEFAULT_DUAL_BOUND};
use onzeta::HyperParams;

fn show(name: &str, curve: &RegretCurve) {
    println!("{name}:");
    for (n, v) in &curve.checkpoints {
        println!("  n {n:<6} {v:.5}");
    }
    match curve.fitted_slope {
        Some(s) => println!("  slope {s:.3}"),
        None => println!("  slope undefined (non-positive value)"),
    }
}

fn main() -> onzeta::Result<()> {
    let p = HyperParams::default();
    let data = generate_synthetic(&SyntheticSpec {
        dim: 256,
        samples: 10_000,
        concentration: 3.0,
        bias_angle: 0.5,
        class_prior: SyntheticSpec::skewed_prior(10, 4.0),
        ..Default::default()
    })?;
    let x = &data.embeddings;
    let text = data.text_proxies.to_proxies()?;
    let q: Vec<_> = (0..x.rows())
        .map(|i| softmax_similarity(&x.row_f64(i), &text, p.tau_t))
        .collect::<onzeta::Result<_>>()?;

    let checkpoints = [100, 1_000, 10_000];
    show("label duality gap", &label_gap_curve(&q, p.alpha, p.c_rho, &checkpoints, DEFAULT_DUAL_BOUND)?);

    let short = x.head(2_000);
    let trace = trace_online_proxies(&short, &text, p.alpha, p.c_rho, p.c_w, p.tau_t, p.tau_i)?;
    show("proxy regret", &proxy_regret_curve(&short, &trace, p.tau_i, &[100, 500, 2_000], 1e-5)?);
    println!("largest online gradient norm {:.2}", trace.max_grad_norm);
    Ok(())
}
