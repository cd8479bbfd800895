//! Differential perspective-taking: does an estimator track how two groups
//! disagree item by item?

use std::collections::BTreeMap;

use ptlens::data::{GroundTruth, GroundTruthTable, ItemGroup};
use ptlens::dpt::{self, Sided};
use ptlens::rng;
use rand_distr::{Distribution, Normal};

fn main() -> ptlens::Result<()> {
    let mut r = rng::substream(1, &["example", "dpt"]);
    let noise = Normal::new(0.0, 0.08).expect("valid sd");
    let mut truth = Vec::new();
    let mut sensitive = BTreeMap::new();
    let mut blind = BTreeMap::new();
    for i in 0..120 {
        let item = format!("x{i:03}");
        let a: f64 = 0.2 + 0.6 * (i as f64 / 119.0);
        let b: f64 = (a + noise.sample(&mut r) * 2.0).clamp(0.0, 1.0);
        for (g, f) in [("f", a), ("m", b)] {
            truth.push((ItemGroup::new(&item, g), GroundTruth { f_star: f, support_count: 5 }));
            let est = (f + noise.sample(&mut r)).clamp(0.0, 1.0);
            sensitive.insert(ItemGroup::new(&item, g), est);
        }
        // ignores group identity
        let pooled = ((a + b) / 2.0 + noise.sample(&mut r)).clamp(0.0, 1.0);
        blind.insert(ItemGroup::new(&item, "f"), pooled);
        blind.insert(ItemGroup::new(&item, "m"), pooled + noise.sample(&mut r) * 0.1);
    }
    let truth = GroundTruthTable::from_entries(truth)?;

    let mut rhos = Vec::new();
    for (name, est) in [("sensitive", &sensitive), ("blind", &blind)] {
        let series = dpt::differentials(&truth, est, "f", "m")?;
        let rep = dpt::dpt_report(&series, dpt::DEFAULT_RESAMPLES, 9, 0.0)?;
        println!(
            "{name:<10} rho {:.3} [{:.3}, {:.3}]  DA {:.3}  n {}",
            rep.rho, rep.ci_low, rep.ci_high, rep.directional_accuracy, rep.n_items
        );
        rhos.push((rep.rho, rep.n_items));
    }
    let z = dpt::fisher_z_test(rhos[0].0, rhos[0].1, rhos[1].0, rhos[1].1, Sided::Greater)?;
    println!("sensitive > blind: z {:.2}, one-sided p {:.2e}", z.z_stat, z.p_value);
    Ok(())
}
