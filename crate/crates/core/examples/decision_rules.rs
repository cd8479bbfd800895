//! Closed-form MSE curves and the LLM-versus-human decision.

use ptlens::analytics::{self, Budget};
use ptlens::annotator::AnnotatorSpec;

fn main() -> ptlens::Result<()> {
    let llm = AnnotatorSpec::simple(0.15, 0.02, 0.0)?;
    let human = AnnotatorSpec::simple(0.02, 0.08, 0.25)?;

    println!("{:>3} {:>10} {:>10}", "k", "llm", "human");
    for k in 1..=8 {
        let l = analytics::analytic_mse(&llm, Budget::Finite(1))?.total;
        let h = analytics::analytic_mse(&human, Budget::Finite(k))?;
        println!("{k:>3} {l:>10.5} {:>10.5}  (bias^2 {:.4}, floor {:.4}, reducible {:.4})",
            h.total, h.bias_sq, h.correlation_floor, h.reducible_variance);
    }

    let d = analytics::superiority(&llm, &human, Budget::Finite(1), Budget::Finite(1))?;
    println!("\none LLM sample vs one PT annotator: {} (margin {:+.4})", d.winner, d.margin);
    let d = analytics::superiority(&llm, &human, Budget::Infinite, Budget::Infinite)?;
    println!("floors: {} (llm {:.4}, human {:.4})", d.winner, d.llm_mse, d.human_mse);
    println!("human panel needed to beat one LLM sample: {:?}", analytics::budget_crossover(&llm, &human, Budget::Finite(1))?);

    let d = analytics::single_direct_vs_llm(0.1558, &llm)?;
    println!("one direct label (spread 0.1558) vs one LLM sample: {}", d.winner);

    let c = analytics::coupling(&AnnotatorSpec::new(0.08, 0.06, 0.01, 0.01, 0.03, 0.005, 0.2)?);
    println!("same-sign lenses: i_mean {:+.4}, i_var {:+.4}", c.i_mean, c.i_var);
    Ok(())
}
