//! Randomized verification ledger, clean and with a perturbed floor.

use ptlens::scenarios::{self, InjectedFault, VerifyOptions};

fn main() -> ptlens::Result<()> {
    let opts = VerifyOptions::new(2024, 10_000);
    let ledger = scenarios::verify_theory(&opts)?;
    print!("{}", ledger.to_text());

    let broken = scenarios::verify_theory(&opts.with_fault(InjectedFault::FloorOffset(1e-3)))?;
    let failing: Vec<&str> = broken.rows.iter().filter(|r| !r.passed).map(|r| r.property.as_str()).collect();
    println!("\nwith floor + 1e-3, failing rows: {}", failing.join(", "));
    Ok(())
}
