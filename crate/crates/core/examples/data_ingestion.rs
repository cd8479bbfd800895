//! Reading annotation and prediction CSVs, deriving ground truth and
//! building per-estimator pools.

use ptlens::data::{self, AnnotationTable, Binarizer, PredictionPools, PredictionTable};

const ANNOTATIONS: &str = "\
item_id,group_id,annotator_id,kind,value
c1,women,a1,direct,Very Toxic
c1,women,a2,direct,neither
c1,women,a3,direct,toxic
c1,women,a4,perspective,70%
c1,women,a5,perspective,0.55
c1,men,a6,direct,healthy
c1,men,a7,direct,very_toxic
c1,men,a8,perspective,40%
c2,women,a1,direct,healthy
c2,women,a2,direct,very healthy
c2,women,a4,perspective,10%
";

const PREDICTIONS: &str = "\
item_id,group_id,estimator_id,sample_idx,value
c1,women,llm,0,0.6
c1,women,llm,1,65%
c1,men,llm,0,0.3
c2,women,llm,0,0.05
";

fn main() -> ptlens::Result<()> {
    let annotations = AnnotationTable::read(ANNOTATIONS.as_bytes())?;
    let predictions = PredictionTable::read(PREDICTIONS.as_bytes())?;
    println!("{} annotations, {} predictions", annotations.len(), predictions.len());

    let truth = data::derive_ground_truth(&annotations, &Binarizer::default())?;
    for (key, t) in truth.iter() {
        println!("f*({}, {}) = {} from {} direct labels", key.item, key.group, data::format_fraction(t.f_star), t.support_count);
    }

    let mut pools = PredictionPools::from_perspective(&annotations, "human_pt");
    pools.merge(PredictionPools::from_predictions(&predictions))?;
    for (key, pool) in pools.iter() {
        println!("{:<9} {:<3} {:<6} {:?}", key.estimator, key.item, key.group, pool);
    }

    // malformed rows are reported with their line number
    let bad = "item_id,group_id,annotator_id,kind,value\nc1,women,a1,direct,somewhat\n";
    if let Err(e) = AnnotationTable::read(bad.as_bytes()) {
        println!("rejected: {e}");
    }
    Ok(())
}
