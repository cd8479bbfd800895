//! Averaging two estimators sample by sample and measuring the mixture.

use ptlens::bootstrap::{self, BootstrapConfig};
use ptlens::data::{PredictionPools, PredictionTable};
use ptlens::scenarios;

fn main() -> ptlens::Result<()> {
    let scenario = scenarios::preset("h4_engineerability")?;
    let (pools, truth) = scenario.synthesize(10, 3)?;
    let mut records = Vec::new();
    for (key, pool) in pools.iter() {
        for (i, &value) in pool.iter().enumerate() {
            records.push(ptlens::data::PredictionRecord {
                item_id: key.item.clone(),
                group_id: key.group.clone(),
                estimator_id: key.estimator.clone(),
                sample_idx: i as u64,
                value,
            });
        }
    }
    let table = PredictionTable::new(records)?;
    let members = vec!["llm_persona".to_string(), "human_pt".to_string()];
    let mixed = bootstrap::mix_estimators(&table, &members, Some(&[0.5, 0.5]), "persona_plus_human")?;
    println!("mixed records: {}, truncated pools: {}", mixed.table.len(), mixed.truncations.len());

    let mut all = PredictionPools::from_predictions(&table).filtered(&[], &members);
    all.merge(PredictionPools::from_predictions(&mixed.table))?;
    let report = bootstrap::bootstrap_metrics(&all, &truth, 4, &BootstrapConfig::new(1000, 5))?;
    for a in &report.aggregates {
        println!("{:<20} k=4  mse {:.5}  bias {:+.4}  var {:.5}", a.estimator, a.mean_mse, a.mean_signed_bias, a.mean_variance);
    }
    Ok(())
}
