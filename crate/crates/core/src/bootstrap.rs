//! Bootstrap evaluation of estimators against ground truth.
//!
//! For each (item, group, estimator) pool and budget `k`, resamples of `k`
//! predictions are drawn with replacement and averaged. Per item:
//!
//! * `mse  = mean_b (fhat_b - f*)^2`
//! * `bias = mean_b fhat_b - f*`
//! * `var  = mean_b (fhat_b - mean_b fhat_b)^2`
//!
//! so `mse = bias^2 + var` for every item. Dataset-level numbers are plain
//! averages over items; since the mean signed bias squared is not the mean
//! squared bias, both are reported.
//!
//! When `pool_size^k` is small the resampling distribution is evaluated
//! exactly instead of by Monte Carlo.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotator::AnnotatorSpec;
use crate::data::{GroundTruthTable, ItemGroup, PoolKey, PredictionPools, PredictionRecord, PredictionTable};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_K_MAX: usize = 10;
/// Exact evaluation is used when `pool_size^k` is at most this.
pub const EXACT_LIMIT: f64 = 1e6;
/// Relative tolerance for the per-item `mse = bias^2 + var` check.
pub const IDENTITY_TOL: f64 = 1e-9;
/// Residual variances at or below this are rounding noise.
const ZERO_VARIANCE: f64 = 1e-24;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    /// Exact when `pool_size^k <= EXACT_LIMIT`, Monte Carlo otherwise.
    #[default]
    Auto,
    MonteCarlo,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
    pub mode: ResampleMode,
}

impl BootstrapConfig {
    pub fn new(resamples: usize, seed: u64) -> Self {
        Self {
            resamples,
            seed,
            mode: ResampleMode::Auto,
        }
    }

    pub fn with_mode(self, mode: ResampleMode) -> Self {
        Self { mode, ..self }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub item: String,
    pub group: String,
    pub estimator: String,
    pub k: usize,
    pub pool_size: usize,
    pub method: Method,
    pub f_star: f64,
    pub mse: f64,
    pub bias: f64,
    pub variance: f64,
    pub bootstrap_mean: f64,
    /// Monte Carlo standard error of `mse`; zero for exact evaluation.
    pub mse_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub group: String,
    pub estimator: String,
    pub k: usize,
    pub n_items: usize,
    pub mean_mse: f64,
    pub mean_signed_bias: f64,
    pub mean_sq_bias: f64,
    pub mean_variance: f64,
    pub mse_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub resamples: usize,
    pub seed: u64,
    pub k_range: Vec<usize>,
    pub mode: ResampleMode,
    pub exact_limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub provenance: Provenance,
    pub items: Vec<ItemMetrics>,
    pub aggregates: Vec<AggregateMetrics>,
}

impl MetricsReport {
    pub fn aggregate(&self, group: &str, estimator: &str, k: usize) -> Option<&AggregateMetrics> {
        self.aggregates
            .iter()
            .find(|a| a.group == group && a.estimator == estimator && a.k == k)
    }

    /// One row per (item, group, estimator, k).
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "item_id",
            "group_id",
            "estimator_id",
            "k",
            "pool_size",
            "method",
            "f_star",
            "mse",
            "bias",
            "variance",
            "bootstrap_mean",
            "mse_se",
        ])?;
        for m in &self.items {
            let method = match m.method {
                Method::Exact => "exact",
                Method::MonteCarlo => "monte_carlo",
            };
            wtr.write_record([
                m.item.clone(),
                m.group.clone(),
                m.estimator.clone(),
                m.k.to_string(),
                m.pool_size.to_string(),
                method.to_string(),
                format!("{:.9}", m.f_star),
                format!("{:.9}", m.mse),
                format!("{:.9}", m.bias),
                format!("{:.9}", m.variance),
                format!("{:.9}", m.bootstrap_mean),
                format!("{:.9}", m.mse_se),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<metrics>", e))?;
        Ok(())
    }
}

pub(crate) fn check_identity(mse: f64, bias: f64, variance: f64, context: impl FnOnce() -> String) -> Result<()> {
    let gap = (mse - (bias * bias + variance)).abs();
    if gap <= IDENTITY_TOL * mse.abs() + 1e-15 {
        Ok(())
    } else {
        Err(Error::Identity(format!(
            "{}: mse {mse} != bias^2 {} + var {variance}",
            context(),
            bias * bias
        )))
    }
}

pub(crate) struct Moments {
    pub mse: f64,
    pub bias: f64,
    pub variance: f64,
    pub mean: f64,
    pub mse_se: f64,
    pub method: Method,
}

fn use_exact(pool_size: usize, k: usize, mode: ResampleMode) -> bool {
    match mode {
        ResampleMode::Exact => true,
        ResampleMode::MonteCarlo => false,
        ResampleMode::Auto => (pool_size as f64).powi(k.min(i32::MAX as usize) as i32) <= EXACT_LIMIT,
    }
}

/// Expectations over the full resampling distribution (`B -> infinity`).
fn exact_moments(pool: &[f64], f_star: f64, k: usize) -> Moments {
    let n = pool.len() as f64;
    let mean = pool.iter().sum::<f64>() / n;
    let spread = pool.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let raw = pool.iter().map(|x| (x - f_star).powi(2)).sum::<f64>() / n;
    let bias = mean - f_star;
    // E(mean of k draws - f*)^2 = bias^2 + (E(x - f*)^2 - bias^2) / k
    let mse = bias * bias + (raw - bias * bias).max(0.0) / k as f64;
    Moments {
        mse,
        bias,
        variance: spread / k as f64,
        mean,
        mse_se: 0.0,
        method: Method::Exact,
    }
}

fn monte_carlo_moments<R: Rng>(pool: &[f64], f_star: f64, k: usize, resamples: usize, rng: &mut R) -> Moments {
    let n = pool.len();
    let estimates: Vec<f64> = (0..resamples)
        .map(|_| (0..k).map(|_| pool[rng.random_range(0..n)]).sum::<f64>() / k as f64)
        .collect();
    summarize(&estimates, f_star)
}

/// MSE, bias and variance of a set of replicate estimates around `f_star`.
pub(crate) fn summarize(estimates: &[f64], f_star: f64) -> Moments {
    let b = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / b;
    let mse = estimates.iter().map(|e| (e - f_star).powi(2)).sum::<f64>() / b;
    let variance = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / b;
    let mse_se = if estimates.len() > 1 {
        let s2 = estimates
            .iter()
            .map(|e| ((e - f_star).powi(2) - mse).powi(2))
            .sum::<f64>()
            / (b - 1.0);
        (s2 / b).sqrt()
    } else {
        0.0
    };
    Moments {
        mse,
        bias: mean - f_star,
        variance,
        mean,
        mse_se,
        method: Method::MonteCarlo,
    }
}

/// Metrics for a single pool. Exposed for callers that manage their own pools.
pub fn pool_metrics(key: &PoolKey, pool: &[f64], f_star: f64, k: usize, cfg: &BootstrapConfig) -> Result<ItemMetrics> {
    if pool.is_empty() {
        return Err(Error::EmptyPool {
            item: key.item.clone(),
            group: key.group.clone(),
            estimator: key.estimator.clone(),
        });
    }
    if k == 0 {
        return Err(Error::param("budget k must be at least 1"));
    }
    if cfg.resamples == 0 {
        return Err(Error::param("bootstrap resample count must be at least 1"));
    }
    let m = if use_exact(pool.len(), k, cfg.mode) {
        exact_moments(pool, f_star, k)
    } else {
        let mut rng = rng::substream(
            cfg.seed,
            &["bootstrap", &key.item, &key.group, &key.estimator, &k.to_string()],
        );
        monte_carlo_moments(pool, f_star, k, cfg.resamples, &mut rng)
    };
    check_identity(m.mse, m.bias, m.variance, || {
        format!("item `{}`, group `{}`, estimator `{}`, k={k}", key.item, key.group, key.estimator)
    })?;
    Ok(ItemMetrics {
        item: key.item.clone(),
        group: key.group.clone(),
        estimator: key.estimator.clone(),
        k,
        pool_size: pool.len(),
        method: m.method,
        f_star,
        mse: m.mse,
        bias: m.bias,
        variance: m.variance,
        bootstrap_mean: m.mean,
        mse_se: m.mse_se,
    })
}

pub(crate) fn aggregate_items(items: &[ItemMetrics]) -> Result<Vec<AggregateMetrics>> {
    let mut groups: BTreeMap<(&str, &str, usize), Vec<&ItemMetrics>> = BTreeMap::new();
    for m in items {
        groups.entry((&m.group, &m.estimator, m.k)).or_default().push(m);
    }
    groups
        .into_iter()
        .map(|((group, estimator, k), ms)| {
            let n = ms.len() as f64;
            let avg = |f: &dyn Fn(&ItemMetrics) -> f64| ms.iter().map(|m| f(m)).sum::<f64>() / n;
            let agg = AggregateMetrics {
                group: group.to_string(),
                estimator: estimator.to_string(),
                k,
                n_items: ms.len(),
                mean_mse: avg(&|m| m.mse),
                mean_signed_bias: avg(&|m| m.bias),
                mean_sq_bias: avg(&|m| m.bias * m.bias),
                mean_variance: avg(&|m| m.variance),
                mse_se: ms.iter().map(|m| m.mse_se * m.mse_se).sum::<f64>().sqrt() / n,
            };
            let gap = (agg.mean_mse - (agg.mean_sq_bias + agg.mean_variance)).abs();
            if gap > IDENTITY_TOL * agg.mean_mse.abs() + 1e-15 {
                return Err(Error::Identity(format!(
                    "group `{group}`, estimator `{estimator}`, k={k}: mean mse {} != mean bias^2 {} + mean var {}",
                    agg.mean_mse, agg.mean_sq_bias, agg.mean_variance
                )));
            }
            Ok(agg)
        })
        .collect()
}

/// Bootstrap metrics for every pool in `pools` at each budget in `ks`.
/// Every pool needs a ground-truth entry.
pub fn bootstrap_metrics_range(
    pools: &PredictionPools,
    truth: &GroundTruthTable,
    ks: &[usize],
    cfg: &BootstrapConfig,
) -> Result<MetricsReport> {
    if ks.is_empty() {
        return Err(Error::param("empty budget range"));
    }
    if let Some(k) = ks.iter().find(|&&k| k == 0) {
        return Err(Error::param(format!("budget k must be at least 1, got {k}")));
    }
    if cfg.resamples == 0 {
        return Err(Error::param("bootstrap resample count must be at least 1"));
    }
    let mut tasks = Vec::new();
    for (key, pool) in pools.iter() {
        let f_star = truth.f_star(&key.item_group()).ok_or_else(|| {
            Error::EmptyJoin(format!("no ground truth for item `{}`, group `{}`", key.item, key.group))
        })?;
        for &k in ks {
            tasks.push((key, pool, f_star, k));
        }
    }
    let items: Vec<ItemMetrics> = tasks
        .into_par_iter()
        .map(|(key, pool, f_star, k)| pool_metrics(key, pool, f_star, k, cfg))
        .collect::<Result<_>>()?;
    let aggregates = aggregate_items(&items)?;
    Ok(MetricsReport {
        provenance: Provenance {
            resamples: cfg.resamples,
            seed: cfg.seed,
            k_range: ks.to_vec(),
            mode: cfg.mode,
            exact_limit: EXACT_LIMIT,
        },
        items,
        aggregates,
    })
}

pub fn bootstrap_metrics(
    pools: &PredictionPools,
    truth: &GroundTruthTable,
    k: usize,
    cfg: &BootstrapConfig,
) -> Result<MetricsReport> {
    bootstrap_metrics_range(pools, truth, &[k], cfg)
}

/// An MSE increase between consecutive budgets larger than twice the
/// combined bootstrap standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityFlag {
    pub group: String,
    pub estimator: String,
    pub k_from: usize,
    pub k_to: usize,
    pub increase: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurve {
    pub report: MetricsReport,
    pub flags: Vec<MonotonicityFlag>,
}

impl BudgetCurve {
    /// `(k, mean_mse)` for one (group, estimator).
    pub fn mse_curve(&self, group: &str, estimator: &str) -> Vec<(usize, f64)> {
        self.report
            .aggregates
            .iter()
            .filter(|a| a.group == group && a.estimator == estimator)
            .map(|a| (a.k, a.mean_mse))
            .collect()
    }
}

pub fn budget_curve(
    pools: &PredictionPools,
    truth: &GroundTruthTable,
    k_range: &[usize],
    cfg: &BootstrapConfig,
) -> Result<BudgetCurve> {
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let report = bootstrap_metrics_range(pools, truth, &ks, cfg)?;
    let mut flags = Vec::new();
    // aggregates are sorted by (group, estimator, k)
    for pair in report.aggregates.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.group != b.group || a.estimator != b.estimator {
            continue;
        }
        let increase = b.mean_mse - a.mean_mse;
        let threshold = 2.0 * (a.mse_se.powi(2) + b.mse_se.powi(2)).sqrt();
        if increase > threshold.max(1e-12) {
            flags.push(MonotonicityFlag {
                group: a.group.clone(),
                estimator: a.estimator.clone(),
                k_from: a.k,
                k_to: b.k,
                increase,
                threshold,
            });
        }
    }
    Ok(BudgetCurve { report, flags })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub item: String,
    pub group: String,
    pub member_counts: Vec<usize>,
    pub kept: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixOutcome {
    /// Records of the mixed estimator only.
    pub table: PredictionTable,
    pub truncations: Vec<Truncation>,
    /// (item, group) pairs where some member had no predictions.
    pub skipped: Vec<ItemGroup>,
}

/// Builds a synthetic estimator `name` whose sample `i` is the weighted mean
/// of the members' samples `i` (by ascending `sample_idx`) per (item, group).
/// Pools of unequal size are truncated to the shortest one.
pub fn mix_estimators(
    table: &PredictionTable,
    members: &[String],
    weights: Option<&[f64]>,
    name: &str,
) -> Result<MixOutcome> {
    if members.is_empty() {
        return Err(Error::param("mixture needs at least one member"));
    }
    let mut distinct = members.to_vec();
    distinct.sort();
    distinct.dedup();
    if distinct.len() != members.len() {
        return Err(Error::param("mixture members must be distinct"));
    }
    let known = table.estimators();
    if let Some(missing) = members.iter().find(|m| !known.contains(*m)) {
        return Err(Error::param(format!("unknown estimator `{missing}`")));
    }
    if known.contains(name) {
        return Err(Error::param(format!("estimator `{name}` already exists")));
    }
    let weights: Vec<f64> = match weights {
        None => vec![1.0; members.len()],
        Some(w) => {
            if w.len() != members.len() {
                return Err(Error::param("one weight per member required"));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::param("mixture weights must be non-negative"));
            }
            w.to_vec()
        }
    };
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::param("mixture weights sum to zero"));
    }
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();

    let pools = PredictionPools::from_predictions(table);
    let keys: std::collections::BTreeSet<ItemGroup> = pools
        .iter()
        .filter(|(k, _)| members.contains(&k.estimator))
        .map(|(k, _)| k.item_group())
        .collect();
    let mut records = Vec::new();
    let mut truncations = Vec::new();
    let mut skipped = Vec::new();
    for ig in keys {
        let member_pools: Option<Vec<&[f64]>> = members
            .iter()
            .map(|m| pools.get(&PoolKey::new(&ig.item, &ig.group, m)))
            .collect();
        let Some(member_pools) = member_pools else {
            skipped.push(ig);
            continue;
        };
        let counts: Vec<usize> = member_pools.iter().map(|p| p.len()).collect();
        let kept = counts.iter().copied().min().unwrap_or(0);
        if counts.iter().any(|&c| c != kept) {
            truncations.push(Truncation {
                item: ig.item.clone(),
                group: ig.group.clone(),
                member_counts: counts.clone(),
                kept,
            });
        }
        for i in 0..kept {
            let value: f64 = member_pools.iter().zip(&weights).map(|(p, w)| w * p[i]).sum();
            records.push(PredictionRecord {
                item_id: ig.item.clone(),
                group_id: ig.group.clone(),
                estimator_id: name.to_string(),
                sample_idx: i as u64,
                value: value.clamp(0.0, 1.0),
            });
        }
    }
    Ok(MixOutcome {
        table: PredictionTable::new(records)?,
        truncations,
        skipped,
    })
}

/// Method-of-moments fit of the generative model to one estimator in one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedSpec {
    pub group: String,
    pub estimator: String,
    pub n_items: usize,
    /// Items with at least two predictions, used for `gamma_hat`.
    pub n_paired_items: usize,
    /// Total bias; the Wide/Clear split is not identifiable from pools.
    pub mu_hat: f64,
    pub v_hat: f64,
    pub gamma_hat: Option<f64>,
    /// Set when `gamma_hat` falls outside [0, 1).
    pub gamma_out_of_range: bool,
    pub gamma_issue: Option<String>,
}

impl FittedSpec {
    pub fn gamma(&self) -> Result<f64> {
        self.gamma_hat.ok_or_else(|| {
            Error::Insufficient(
                self.gamma_issue
                    .clone()
                    .unwrap_or_else(|| "gamma could not be estimated".into()),
            )
        })
    }

    /// The fit as an annotator spec (bias stored as `mu_w`).
    pub fn to_annotator_spec(&self) -> Result<AnnotatorSpec> {
        let gamma = self.gamma()?;
        if self.gamma_out_of_range {
            return Err(Error::param(format!(
                "fitted gamma {gamma} for `{}` in group `{}` is outside [0, 1)",
                self.estimator, self.group
            )));
        }
        AnnotatorSpec::simple(self.mu_hat, self.v_hat, gamma)
    }
}

/// Fits `(mu, V, gamma)` from `(pool, f*)` pairs of one estimator.
///
/// * `mu_hat` is the mean over items of `pool mean - f*`.
/// * Residuals are `e = x - f* - mu_hat`; `v_hat` is the mean over items of
///   the mean squared residual.
/// * `gamma_hat` is the mean over items with two or more predictions of the
///   average cross product `e_i e_j` (`i != j`), divided by `v_hat`.
///
/// Residuals are taken around `f* + mu_hat`, not the pool mean, so shared
/// (correlated) deviations count towards `V` as they do in the model.
pub fn fit_pools(pools: &[(&[f64], f64)]) -> Result<(f64, f64, std::result::Result<f64, String>, usize)> {
    if pools.is_empty() {
        return Err(Error::Insufficient("no items to fit".into()));
    }
    if pools.iter().any(|(p, _)| p.is_empty()) {
        return Err(Error::Insufficient("empty prediction pool".into()));
    }
    let n_items = pools.len() as f64;
    let mu_hat = pools
        .iter()
        .map(|(p, f)| p.iter().sum::<f64>() / p.len() as f64 - f)
        .sum::<f64>()
        / n_items;
    let v_hat = pools
        .iter()
        .map(|(p, f)| p.iter().map(|x| (x - f - mu_hat).powi(2)).sum::<f64>() / p.len() as f64)
        .sum::<f64>()
        / n_items;
    let cross: Vec<f64> = pools
        .iter()
        .filter(|(p, _)| p.len() >= 2)
        .map(|(p, f)| {
            let n = p.len() as f64;
            let e: Vec<f64> = p.iter().map(|x| x - f - mu_hat).collect();
            let s: f64 = e.iter().sum();
            let s2: f64 = e.iter().map(|x| x * x).sum();
            (s * s - s2) / (n * (n - 1.0))
        })
        .collect();
    let paired = cross.len();
    let gamma = if paired == 0 {
        Err("gamma needs at least one item with two or more predictions".to_string())
    } else if v_hat <= ZERO_VARIANCE {
        Err("gamma undefined: residual variance is zero".to_string())
    } else {
        Ok(cross.iter().sum::<f64>() / paired as f64 / v_hat)
    };
    Ok((mu_hat, v_hat, gamma, paired))
}

/// Fits every (group, estimator) in `pools` against `truth`.
pub fn fit_spec(pools: &PredictionPools, truth: &GroundTruthTable) -> Result<Vec<FittedSpec>> {
    let mut by_series: BTreeMap<(String, String), Vec<(&[f64], f64)>> = BTreeMap::new();
    for (key, pool) in pools.iter() {
        let f = truth.f_star(&key.item_group()).ok_or_else(|| {
            Error::EmptyJoin(format!("no ground truth for item `{}`, group `{}`", key.item, key.group))
        })?;
        by_series
            .entry((key.group.clone(), key.estimator.clone()))
            .or_default()
            .push((pool, f));
    }
    by_series
        .into_iter()
        .map(|((group, estimator), series)| {
            let (mu_hat, v_hat, gamma, paired) = fit_pools(&series)?;
            let (gamma_hat, gamma_issue) = match gamma {
                Ok(g) => (Some(g), None),
                Err(e) => (None, Some(e)),
            };
            Ok(FittedSpec {
                group,
                estimator,
                n_items: series.len(),
                n_paired_items: paired,
                mu_hat,
                v_hat,
                gamma_out_of_range: gamma_hat.is_some_and(|g| !(0.0..1.0).contains(&g)),
                gamma_hat,
                gamma_issue,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroundTruth;

    /// Brute force over every ordered k-tuple of the pool.
    fn enumerate(pool: &[f64], f_star: f64, k: usize) -> (f64, f64, f64) {
        let n = pool.len();
        let total = n.pow(k as u32);
        let mut estimates = Vec::with_capacity(total);
        for code in 0..total {
            let mut c = code;
            let mut s = 0.0;
            for _ in 0..k {
                s += pool[c % n];
                c /= n;
            }
            estimates.push(s / k as f64);
        }
        let t = total as f64;
        let mean = estimates.iter().sum::<f64>() / t;
        let mse = estimates.iter().map(|e| (e - f_star).powi(2)).sum::<f64>() / t;
        let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / t;
        (mse, mean - f_star, var)
    }

    fn single(pool: &[f64], f_star: f64) -> (PredictionPools, GroundTruthTable) {
        let mut pools = PredictionPools::default();
        pools.insert(PoolKey::new("x", "g", "e"), pool.to_vec()).unwrap();
        let truth = GroundTruthTable::from_entries([(
            ItemGroup::new("x", "g"),
            GroundTruth {
                f_star,
                support_count: 1,
            },
        )])
        .unwrap();
        (pools, truth)
    }

    #[test]
    fn enumeration_fixture() {
        let (mse, bias, var) = enumerate(&[0.5, 0.9], 0.75, 1);
        assert!((mse - 0.0425).abs() < 1e-15);
        assert!((bias + 0.05).abs() < 1e-15);
        assert!((var - 0.04).abs() < 1e-15);

        let (pools, truth) = single(&[0.5, 0.9], 0.75);
        let r = bootstrap_metrics(&pools, &truth, 1, &BootstrapConfig::new(1000, 1)).unwrap();
        let m = &r.items[0];
        assert_eq!(m.method, Method::Exact);
        assert!((m.mse - 0.0425).abs() < 1e-15);
        assert!((m.bias + 0.05).abs() < 1e-15);
        assert!((m.variance - 0.04).abs() < 1e-15);
    }

    #[test]
    fn exact_mode_matches_enumeration() {
        let pools = [
            vec![0.1, 0.4, 0.45, 0.8],
            vec![0.0, 1.0, 0.3],
            vec![0.2, 0.25, 0.3, 0.9, 0.95, 0.5],
            vec![0.6],
        ];
        for pool in &pools {
            for k in 1..=3 {
                let (mse, bias, var) = enumerate(pool, 0.42, k);
                let m = pool_metrics(&PoolKey::new("x", "g", "e"), pool, 0.42, k, &BootstrapConfig::new(10, 0)).unwrap();
                assert_eq!(m.method, Method::Exact);
                assert!((m.mse - mse).abs() < 1e-14, "{pool:?} k={k}");
                assert!((m.bias - bias).abs() < 1e-14);
                assert!((m.variance - var).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn monte_carlo_converges_to_enumeration() {
        let pool = [0.2, 0.25, 0.3, 0.9, 0.95, 0.5];
        let cfg = BootstrapConfig::new(100_000, 3).with_mode(ResampleMode::MonteCarlo);
        for k in 1..=3 {
            let (mse, _, _) = enumerate(&pool, 0.42, k);
            let m = pool_metrics(&PoolKey::new("x", "g", "e"), &pool, 0.42, k, &cfg).unwrap();
            assert_eq!(m.method, Method::MonteCarlo);
            assert!((m.mse - mse).abs() < 3.0 * m.mse_se, "k={k}: {} vs {mse} (se {})", m.mse, m.mse_se);
            let pool_mean = pool.iter().sum::<f64>() / pool.len() as f64;
            let mean_se = (m.variance / 100_000.0).sqrt();
            assert!((m.bootstrap_mean - pool_mean).abs() < 3.0 * mean_se);
        }
    }

    #[test]
    fn degenerate_pools() {
        let (pools, truth) = single(&[0.3], 0.5);
        for k in [1, 4, 12] {
            let r = bootstrap_metrics(&pools, &truth, k, &BootstrapConfig::new(50, 0)).unwrap();
            assert!((r.items[0].mse - 0.04).abs() < 1e-15);
            assert_eq!(r.items[0].variance, 0.0);
        }
        let (pools, truth) = single(&[0.5, 0.5, 0.5], 0.5);
        let r = bootstrap_metrics(&pools, &truth, 2, &BootstrapConfig::new(50, 0)).unwrap();
        let m = &r.items[0];
        assert_eq!((m.mse, m.bias, m.variance), (0.0, 0.0, 0.0));
    }

    #[test]
    fn argument_errors() {
        let (pools, truth) = single(&[0.3], 0.5);
        let cfg = BootstrapConfig::new(10, 0);
        assert!(bootstrap_metrics(&pools, &truth, 0, &cfg).is_err());
        assert!(bootstrap_metrics(&pools, &truth, 1, &BootstrapConfig::new(0, 0)).is_err());
        let (empty, truth) = single(&[], 0.5);
        assert!(matches!(bootstrap_metrics(&empty, &truth, 1, &cfg), Err(Error::EmptyPool { .. })));
        let (pools, _) = single(&[0.3], 0.5);
        assert!(matches!(
            bootstrap_metrics(&pools, &GroundTruthTable::default(), 1, &cfg),
            Err(Error::EmptyJoin(_))
        ));
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let mut pools = PredictionPools::default();
        let mut truth = Vec::new();
        for i in 0..40 {
            let pool: Vec<f64> = (0..12).map(|j| ((i * 7 + j * 13) % 100) as f64 / 100.0).collect();
            pools.insert(PoolKey::new(format!("x{i}"), "g", "e"), pool).unwrap();
            truth.push((
                ItemGroup::new(format!("x{i}"), "g"),
                GroundTruth {
                    f_star: 0.4,
                    support_count: 3,
                },
            ));
        }
        let truth = GroundTruthTable::from_entries(truth).unwrap();
        let cfg = BootstrapConfig::new(300, 99);
        let ks: Vec<usize> = (1..=10).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = one.install(|| bootstrap_metrics_range(&pools, &truth, &ks, &cfg)).unwrap();
        let b = bootstrap_metrics_range(&pools, &truth, &ks, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flat_curve_for_constant_pool() {
        let (pools, truth) = single(&[0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7], 0.5);
        let curve = budget_curve(&pools, &truth, &(1..=10).collect::<Vec<_>>(), &BootstrapConfig::new(100, 1)).unwrap();
        for (_, mse) in curve.mse_curve("g", "e") {
            assert!((mse - 0.04).abs() < 1e-12);
        }
        assert!(curve.flags.is_empty());
    }

    #[test]
    fn mixing_examples() {
        let t = PredictionTable::new(
            [("a", 0.2), ("b", 0.6)]
                .iter()
                .flat_map(|&(e, v)| {
                    (0..3).map(move |i| PredictionRecord {
                        item_id: "x".into(),
                        group_id: "g".into(),
                        estimator_id: e.into(),
                        sample_idx: i,
                        value: v,
                    })
                })
                .collect(),
        )
        .unwrap();
        let mix = mix_estimators(&t, &["a".into(), "b".into()], None, "ab").unwrap();
        assert_eq!(mix.table.len(), 3);
        assert!(mix.table.records().iter().all(|r| (r.value - 0.4).abs() < 1e-15));
        assert!(mix.truncations.is_empty());

        let w = mix_estimators(&t, &["a".into(), "b".into()], Some(&[3.0, 1.0]), "w").unwrap();
        assert!(w.table.records().iter().all(|r| (r.value - 0.3).abs() < 1e-15));

        assert!(mix_estimators(&t, &["a".into(), "zz".into()], None, "m").is_err());
        assert!(mix_estimators(&t, &["a".into()], None, "b").is_err());
        assert!(mix_estimators(&t, &["a".into(), "a".into()], None, "m").is_err());
    }

    #[test]
    fn fit_errors_for_degenerate_inputs() {
        let pool = [0.4, 0.4, 0.4];
        let (mu, v, gamma, _) = fit_pools(&[(&pool, 0.4), (&pool, 0.4)]).unwrap();
        assert!(mu.abs() < 1e-15 && v < 1e-24);
        assert!(gamma.is_err());

        let (mu, v, gamma, paired) = fit_pools(&[(&[0.5], 0.4), (&[0.3], 0.4)]).unwrap();
        assert!(mu.abs() < 1e-15);
        assert!((v - 0.01).abs() < 1e-15);
        assert!(gamma.is_err());
        assert_eq!(paired, 0);
    }
}
