//! Vision proxies learned on the fly. Drives the per-sample engine by hand and
//! reports how the learned proxies compare with the text proxies as the stream
//! goes by.

use onzeta::dataio::{generate_synthetic, SyntheticSpec};
use onzeta::pipeline::{mean_nearest_proxy_cosine, zero_shot_predict};
use onzeta::{HyperParams, OnZeta};

fn main() -> onzeta::Result<()> {
    let data = generate_synthetic(&SyntheticSpec {
        dim: 128,
        samples: 8_000,
        concentration: 3.0,
        bias_angle: 0.6,
        seed: 3,
        ..Default::default()
    })?;
    let x = &data.embeddings;
    let text = data.text_proxies.to_proxies()?;
    let n = x.rows();
    let mut engine = OnZeta::new(text.clone(), HyperParams::default(), n as u64)?;

    println!("step   lambda  window acc");
    let mut window = 0;
    for i in 0..n {
        let out = engine.step(&x.row_f64(i))?;
        window += usize::from(out.predicted_class == data.labels[i]);
        if (i + 1) % 1_000 == 0 {
            println!("{:<6} {:<7.3} {:.3}", i + 1, out.lambda, window as f64 / 1_000.0);
            window = 0;
        }
    }

    // Score every sample with each proxy set alone, after the pass.
    let learned = engine.vision_proxies();
    let score = |w: &onzeta::onproxy::ProxyMatrix| -> onzeta::Result<f64> {
        let mut hits = 0;
        for i in 0..n {
            hits += usize::from(zero_shot_predict(&x.row_f64(i), w)? == data.labels[i]);
        }
        Ok(hits as f64 / n as f64)
    };
    println!("\nnearest-proxy accuracy: text {:.4}, learned {:.4}", score(&text)?, score(learned)?);
    println!(
        "mean nearest cosine:    text {:.4}, learned {:.4}",
        mean_nearest_proxy_cosine(x, &text)?,
        mean_nearest_proxy_cosine(x, learned)?
    );
    println!("max row-norm error {:.1e}", learned.max_norm_error());
    Ok(())
}
