//! The per-item bootstrap pipeline on a synthetic pool set: ground truth,
//! budget curves and a method-of-moments fit.

use ptlens::bootstrap::{self, BootstrapConfig};
use ptlens::scenarios;

fn main() -> ptlens::Result<()> {
    let scenario = scenarios::preset("h1_budget_regime")?;
    let (pools, truth) = scenario.synthesize(8, 11)?;
    println!("{} pools over {} items", pools.len(), truth.len());

    let cfg = BootstrapConfig::new(bootstrap::DEFAULT_RESAMPLES, 42);
    let curve = bootstrap::budget_curve(&pools, &truth, &[1, 2, 4, 8], &cfg)?;
    for est in pools.estimators() {
        let points: Vec<String> = curve
            .mse_curve(&scenario.name, &est)
            .iter()
            .map(|(k, m)| format!("k={k}: {m:.4}"))
            .collect();
        println!("{est:<14} {}", points.join("  "));
    }
    println!("monotonicity flags: {}", curve.flags.len());

    for fit in bootstrap::fit_spec(&pools, &truth)? {
        println!(
            "fit {:<14} mu {:+.3}  V {:.4}  gamma {:?}",
            fit.estimator, fit.mu_hat, fit.v_hat, fit.gamma_hat.map(|g| (g * 1000.0).round() / 1000.0)
        );
    }
    Ok(())
}
