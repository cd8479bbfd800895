//! Sampling exchangeable annotator panels and checking their moments.

use ptlens::annotator::{self, AnnotatorSpec};
use ptlens::rng;

fn main() -> ptlens::Result<()> {
    let spec = AnnotatorSpec::new(0.05, 0.02, 0.01, 0.01, 0.02, 0.004, 0.3)?;
    let f_star = 0.4;
    let k = 5;
    println!("total bias {:.3}, residual variance {:.4}, gamma {}", spec.total_bias(), spec.total_variance(), spec.gamma());

    let mut r = rng::substream(7, &["example", "panels"]);
    let n = 100_000;
    let aggs: Vec<f64> = (0..n)
        .map(|_| annotator::sample_panel(&spec, f_star, k, &mut r, false).map(|p| p.aggregate()))
        .collect::<ptlens::Result<_>>()?;
    let mean = aggs.iter().sum::<f64>() / n as f64;
    let var = aggs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let v = spec.total_variance();
    println!("panel of {k}: mean {mean:.4} (model {:.4})", f_star + spec.total_bias());
    println!("aggregate variance {var:.5} (model {:.5})", spec.gamma() * v + (1.0 - spec.gamma()) * v / k as f64);

    let draws = annotator::sample_panel_components(&spec, 3, &mut r)?;
    for d in draws {
        println!("b_W {:+.3}  b_C {:+.3}  eps {:+.3}  -> {:.3}", d.b_w, d.b_c, d.eps, d.prediction(f_star));
    }
    Ok(())
}
