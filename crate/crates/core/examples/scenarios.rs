//! Runs a shipped scenario preset and compares simulated and closed-form MSE.
//!
//! `cargo run --release --example scenarios -- h3_representation`

use ptlens::analytics::{self, Budget};
use ptlens::scenarios;

fn main() -> ptlens::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "h1_budget_regime".into());
    let scenario = scenarios::preset(&name)?;
    println!("{}: {}", scenario.name, scenario.description);
    let report = scenarios::run_scenario(&scenario)?;

    println!("{:<16} {:>4} {:>10} {:>10} {:>8}", "estimator", "k", "simulated", "analytic", "gap");
    for a in &report.agreement {
        println!("{:<16} {:>4} {:>10.5} {:>10.5} {:>7.2}%", a.estimator, a.k, a.empirical, a.analytic, 100.0 * a.rel_gap);
    }
    for s in &report.estimators {
        println!("{:<16} floor {:.5}  chi2 {:?}", s.estimator, s.floor, s.mean_chi2);
    }

    if name == "h1_budget_regime" {
        let llm = scenario.effective_spec("llm")?;
        for human in ["human_direct", "human_pt"] {
            let h = scenario.effective_spec(human)?;
            println!(
                "{human}: crossover vs one LLM sample, closed form {:?}, simulated {:?}",
                analytics::budget_crossover(&llm, &h, Budget::Finite(1))?,
                scenarios::empirical_crossover(&report, "llm", human, 1)
            );
        }
    }
    Ok(())
}
