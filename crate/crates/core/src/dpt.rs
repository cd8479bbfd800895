//! Differential perspective-taking.
//!
//! For groups `g1`, `g2` the true per-item disagreement is
//! `delta* = f*(x, g1) - f*(x, g2)` and an estimator's is
//! `delta_hat = fhat(x, g1) - fhat(x, g2)`. An estimator that ignores group
//! identity produces `delta_hat ~ 0` whatever the truth, so correlation and
//! sign agreement between the two series measure group-specific sensitivity.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{GroundTruthTable, ItemGroup};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_RESAMPLES: usize = 2000;
const CI_LEVEL: f64 = 0.95;
/// Give up when this many consecutive constant resamples are drawn.
const MAX_REDRAWS_PER_RESAMPLE: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaPoint {
    pub item: String,
    pub delta_star: f64,
    pub delta_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferentialSeries {
    pub g1: String,
    pub g2: String,
    pub points: Vec<DeltaPoint>,
}

impl DifferentialSeries {
    pub fn n_items(&self) -> usize {
        self.points.len()
    }

    pub fn delta_star(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.delta_star).collect()
    }

    pub fn delta_hat(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.delta_hat).collect()
    }

    /// Scatter data, one row per item.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["item_id", "delta_star", "delta_hat"])?;
        for p in &self.points {
            wtr.write_record([p.item.clone(), format!("{:.9}", p.delta_star), format!("{:.9}", p.delta_hat)])?;
        }
        wtr.flush().map_err(|e| Error::io("<scatter>", e))?;
        Ok(())
    }
}

/// Pairs items that have a ground truth and an estimate for both groups.
pub fn differentials(
    truth: &GroundTruthTable,
    est_means: &BTreeMap<ItemGroup, f64>,
    g1: &str,
    g2: &str,
) -> Result<DifferentialSeries> {
    if g1 == g2 {
        return Err(Error::param("differential needs two distinct groups"));
    }
    let mut items: Vec<&str> = truth
        .iter()
        .filter(|(k, _)| k.group == g1)
        .map(|(k, _)| k.item.as_str())
        .collect();
    items.sort_unstable();
    let mut points = Vec::new();
    for item in items {
        let k1 = ItemGroup::new(item, g1);
        let k2 = ItemGroup::new(item, g2);
        let (Some(t1), Some(t2), Some(e1), Some(e2)) =
            (truth.f_star(&k1), truth.f_star(&k2), est_means.get(&k1), est_means.get(&k2))
        else {
            continue;
        };
        points.push(DeltaPoint {
            item: item.to_string(),
            delta_star: t1 - t2,
            delta_hat: e1 - e2,
        });
    }
    Ok(DifferentialSeries {
        g1: g1.to_string(),
        g2: g2.to_string(),
        points,
    })
}

fn is_constant(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] == w[1])
}

/// Product-moment correlation of two equally long series.
pub fn pearson_xy(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::param("series lengths differ"));
    }
    if x.len() < 3 {
        return Err(Error::Insufficient(format!("correlation needs at least 3 items, got {}", x.len())));
    }
    if is_constant(x) || is_constant(y) {
        return Err(Error::UndefinedCorrelation("constant series".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance after centering".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn pearson(series: &DifferentialSeries) -> Result<f64> {
    pearson_xy(&series.delta_star(), &series.delta_hat())
}

fn sign(v: f64, zero_tol: f64) -> i8 {
    if v.abs() <= zero_tol {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

/// Fraction of items where the signs of `delta_hat` and `delta*` agree;
/// values within `zero_tol` of zero have sign 0 and only match each other.
pub fn directional_accuracy(series: &DifferentialSeries, zero_tol: f64) -> Result<f64> {
    if series.points.is_empty() {
        return Err(Error::Insufficient("no items".into()));
    }
    if !(zero_tol >= 0.0) {
        return Err(Error::param("zero tolerance must be non-negative"));
    }
    let hits = series
        .points
        .iter()
        .filter(|p| sign(p.delta_star, zero_tol) == sign(p.delta_hat, zero_tol))
        .count();
    Ok(hits as f64 / series.points.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
    /// Resamples redrawn because one side came out constant.
    pub redraws: usize,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile 95% interval of the correlation over item-level resamples.
/// The interval is widened, if needed, to contain the point estimate.
pub fn bootstrap_ci_xy(x: &[f64], y: &[f64], resamples: usize, seed: u64) -> Result<BootstrapCi> {
    let rho = pearson_xy(x, y)?;
    if resamples == 0 {
        return Err(Error::param("resample count must be at least 1"));
    }
    let n = x.len();
    let draws: Vec<(f64, usize)> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            use rand::Rng;
            let mut rng = rng::indexed(seed, "dpt-ci", b as u64);
            let mut xs = vec![0.0; n];
            let mut ys = vec![0.0; n];
            for redraw in 0..=MAX_REDRAWS_PER_RESAMPLE {
                for i in 0..n {
                    let j = rng.random_range(0..n);
                    xs[i] = x[j];
                    ys[i] = y[j];
                }
                if let Ok(r) = pearson_xy(&xs, &ys) {
                    return Ok((r, redraw));
                }
            }
            Err(Error::UndefinedCorrelation(
                "bootstrap resamples are persistently constant".into(),
            ))
        })
        .collect::<Result<_>>()?;
    let redraws = draws.iter().map(|d| d.1).sum();
    let mut rhos: Vec<f64> = draws.into_iter().map(|d| d.0).collect();
    rhos.sort_by(f64::total_cmp);
    let alpha = (1.0 - CI_LEVEL) / 2.0;
    Ok(BootstrapCi {
        ci_low: quantile_sorted(&rhos, alpha).min(rho),
        ci_high: quantile_sorted(&rhos, 1.0 - alpha).max(rho),
        resamples,
        redraws,
    })
}

pub fn bootstrap_ci(series: &DifferentialSeries, resamples: usize, seed: u64) -> Result<BootstrapCi> {
    bootstrap_ci_xy(&series.delta_star(), &series.delta_hat(), resamples, seed)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    #[default]
    TwoSided,
    /// Alternative `rho1 > rho2`.
    Greater,
    /// Alternative `rho1 < rho2`.
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherZ {
    pub z_stat: f64,
    pub p_value: f64,
}

/// Upper tail of the standard normal, accurate far into the tail.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Compares two independent correlations via Fisher's z transform.
pub fn fisher_z_test(rho1: f64, n1: usize, rho2: f64, n2: usize, sided: Sided) -> Result<FisherZ> {
    if n1 < 4 || n2 < 4 {
        return Err(Error::Insufficient("Fisher z test needs at least 4 items per series".into()));
    }
    if !(rho1.abs() < 1.0 && rho2.abs() < 1.0) {
        return Err(Error::param("correlations must lie strictly inside (-1, 1)"));
    }
    let se = (1.0 / (n1 - 3) as f64 + 1.0 / (n2 - 3) as f64).sqrt();
    let z_stat = (rho1.atanh() - rho2.atanh()) / se;
    let p_value = match sided {
        Sided::TwoSided => (2.0 * normal_sf(z_stat.abs())).min(1.0),
        Sided::Greater => normal_sf(z_stat),
        Sided::Less => normal_sf(-z_stat),
    };
    Ok(FisherZ { z_stat, p_value })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DptReport {
    pub g1: String,
    pub g2: String,
    pub n_items: usize,
    pub rho: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub directional_accuracy: f64,
    /// Sample standard deviation of `delta*`.
    pub sigma_delta_star: f64,
    pub resamples: usize,
    pub redraws: usize,
}

pub fn dpt_report(series: &DifferentialSeries, resamples: usize, seed: u64, zero_tol: f64) -> Result<DptReport> {
    let rho = pearson(series)?;
    let ci = bootstrap_ci(series, resamples, seed)?;
    let da = directional_accuracy(series, zero_tol)?;
    let ds = series.delta_star();
    let n = ds.len() as f64;
    let mean = ds.iter().sum::<f64>() / n;
    let sigma = (ds.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(DptReport {
        g1: series.g1.clone(),
        g2: series.g2.clone(),
        n_items: series.n_items(),
        rho,
        ci_low: ci.ci_low,
        ci_high: ci.ci_high,
        directional_accuracy: da,
        sigma_delta_star: sigma,
        resamples,
        redraws: ci.redraws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroundTruth;
    use proptest::prelude::*;

    fn series(star: &[f64], hat: &[f64]) -> DifferentialSeries {
        DifferentialSeries {
            g1: "a".into(),
            g2: "b".into(),
            points: star
                .iter()
                .zip(hat)
                .enumerate()
                .map(|(i, (&s, &h))| DeltaPoint {
                    item: format!("x{i}"),
                    delta_star: s,
                    delta_hat: h,
                })
                .collect(),
        }
    }

    fn truth(entries: &[(&str, &str, f64)]) -> GroundTruthTable {
        GroundTruthTable::from_entries(entries.iter().map(|&(i, g, f)| {
            (
                ItemGroup::new(i, g),
                GroundTruth {
                    f_star: f,
                    support_count: 1,
                },
            )
        }))
        .unwrap()
    }

    #[test]
    fn differential_examples() {
        let t = truth(&[("x1", "a", 0.8), ("x1", "b", 0.5), ("x2", "a", 0.3), ("x2", "b", 0.6), ("x3", "a", 0.1)]);
        let est: BTreeMap<_, _> = [
            (ItemGroup::new("x1", "a"), 0.7),
            (ItemGroup::new("x1", "b"), 0.6),
            (ItemGroup::new("x2", "a"), 0.4),
            (ItemGroup::new("x2", "b"), 0.4),
            (ItemGroup::new("x3", "a"), 0.2),
        ]
        .into_iter()
        .collect();
        let s = differentials(&t, &est, "a", "b").unwrap();
        assert_eq!(s.n_items(), 2);
        assert!((s.points[0].delta_star - 0.3).abs() < 1e-15);
        assert!((s.points[1].delta_star + 0.3).abs() < 1e-15);
        assert!((s.points[0].delta_hat - 0.1).abs() < 1e-15);

        let t = truth(&[("x1", "a", 0.4), ("x1", "b", 0.4), ("x2", "a", 0.7), ("x2", "b", 0.7)]);
        let s = differentials(&t, &est, "a", "b").unwrap();
        assert!(s.points.iter().all(|p| p.delta_star == 0.0));
    }

    #[test]
    fn pearson_examples() {
        let x = [0.1, -0.2, 0.05, 0.3];
        assert!((pearson(&series(&x, &x)).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&series(&x, &neg)).unwrap() + 1.0).abs() < 1e-15);
        // sxy = 5, sxx = 2, syy = 12.6667: 5 / sqrt(25.3333)
        let oracle = 5.0 / (2.0f64 * (38.0 / 3.0)).sqrt();
        let r = pearson_xy(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap();
        assert!((r - oracle).abs() < 1e-14);
        assert!((r - 0.9934).abs() < 1e-4);
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(
            pearson_xy(&[0.1, 0.1, 0.1], &[0.1, 0.2, 0.3]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(pearson_xy(&[0.1, 0.2], &[0.1, 0.2]), Err(Error::Insufficient(_))));
    }

    #[test]
    fn directional_accuracy_examples() {
        let s = series(&[0.1, -0.2, 0.3], &[0.05, -0.01, 0.9]);
        assert_eq!(directional_accuracy(&s, 0.0).unwrap(), 1.0);
        let s = series(&[0.1, -0.2, 0.3], &[0.0, 0.0, 0.0]);
        assert_eq!(directional_accuracy(&s, 0.0).unwrap(), 0.0);
        let s = series(&[0.1, -0.2, 0.3, -0.1], &[0.2, 0.1, 0.1, -0.3]);
        assert_eq!(directional_accuracy(&s, 0.0).unwrap(), 0.75);
        // zero matches only zero
        let s = series(&[0.0, 0.01], &[0.0, 0.005]);
        assert_eq!(directional_accuracy(&s, 0.0).unwrap(), 1.0);
        assert_eq!(directional_accuracy(&s, 0.006).unwrap(), 0.5);
    }

    #[test]
    fn bootstrap_ci_examples() {
        let x = [0.1, -0.2, 0.05, 0.3, -0.15, 0.22];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 0.1).collect();
        let ci = bootstrap_ci(&series(&x, &y), 500, 4).unwrap();
        assert!((ci.ci_low - 1.0).abs() < 1e-12 && (ci.ci_high - 1.0).abs() < 1e-12, "{ci:?}");
        assert!(matches!(
            bootstrap_ci(&series(&[0.1, 0.2], &[0.1, 0.3]), 100, 0),
            Err(Error::Insufficient(_))
        ));
    }

    #[test]
    fn small_samples_get_redrawn() {
        let ci = bootstrap_ci_xy(&[0.0, 0.1, 0.3], &[0.2, 0.0, 0.1], 200, 8).unwrap();
        assert!(ci.redraws > 0);
        assert!(ci.ci_low <= ci.ci_high);
    }

    #[test]
    fn fisher_examples() {
        let f = fisher_z_test(0.3, 50, 0.3, 50, Sided::TwoSided).unwrap();
        assert_eq!(f.z_stat, 0.0);
        assert_eq!(f.p_value, 1.0);
        let f = fisher_z_test(0.99, 50, 0.0, 50, Sided::TwoSided).unwrap();
        assert!(f.p_value < 1e-10);
        assert!(fisher_z_test(1.0, 50, 0.0, 50, Sided::TwoSided).is_err());
        assert!(fisher_z_test(0.2, 3, 0.0, 50, Sided::TwoSided).is_err());
        let g = fisher_z_test(0.312, 120, 0.053, 120, Sided::Greater).unwrap();
        let l = fisher_z_test(0.312, 120, 0.053, 120, Sided::Less).unwrap();
        assert!((g.p_value + l.p_value - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn correlation_invariances(
            pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3..40),
            shift in -1.0f64..1.0,
            scale in 0.1f64..10.0,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let Ok(r) = pearson_xy(&x, &y) else { return Ok(()) };
            let ys: Vec<f64> = y.iter().map(|v| scale * v + shift).collect();
            let yn: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert!((pearson_xy(&x, &ys).unwrap() - r).abs() < 1e-9);
            prop_assert!((pearson_xy(&x, &yn).unwrap() + r).abs() < 1e-12);
            let s = series(&x, &y);
            let scaled = series(&x, &y.iter().map(|v| v * scale).collect::<Vec<_>>());
            prop_assert_eq!(directional_accuracy(&s, 0.0).unwrap(), directional_accuracy(&scaled, 0.0).unwrap());
        }

        #[test]
        fn ci_contains_estimate(
            pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4..25),
            seed in any::<u64>(),
        ) {
            let s = series(&pts.iter().map(|p| p.0).collect::<Vec<_>>(), &pts.iter().map(|p| p.1).collect::<Vec<_>>());
            if let Ok(r) = pearson(&s) {
                let ci = bootstrap_ci(&s, 200, seed).unwrap();
                prop_assert!(ci.ci_low <= r && r <= ci.ci_high);
            }
        }

        #[test]
        fn fisher_antisymmetry(r1 in -0.95f64..0.95, r2 in -0.95f64..0.95, n1 in 4usize..500, n2 in 4usize..500) {
            let a = fisher_z_test(r1, n1, r2, n2, Sided::TwoSided).unwrap();
            let b = fisher_z_test(r2, n2, r1, n1, Sided::TwoSided).unwrap();
            prop_assert!((a.z_stat + b.z_stat).abs() < 1e-12);
            prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
        }
    }
}
