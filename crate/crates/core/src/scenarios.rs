//! Named synthetic experiments and the theory verification ledger.
//!
//! A [`Scenario`] is a set of synthetic items (each a [`MixtureSpec`]) and a
//! set of estimator models. Running it simulates fresh panels for every
//! (estimator, item, budget), summarizes them with the same MSE/bias/variance
//! definitions as the bootstrap pipeline, and sets the result beside the
//! closed-form curves.
//!
//! Presets live in `presets/*.json` and are compiled in; see [`preset`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{self, Budget, CouplingReport, MseBreakdown};
use crate::annotator::{self, AnnotatorSpec};
use crate::bootstrap::{self, AggregateMetrics, ItemMetrics, Method, MetricsReport, Provenance, ResampleMode};
use crate::data::{GroundTruth, GroundTruthTable, ItemGroup, PoolKey, PredictionPools};
use crate::error::{Error, Result};
use crate::mixture::{self, InternalMixture, MixtureSpec};
use crate::rng;

/// How a scenario estimator produces its predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorModel {
    /// Perspective-taking annotator with a fixed spec on every item.
    Annotator { spec: AnnotatorSpec },
    /// Direct labels drawn from the item's own mixture.
    Direct,
    /// Annotator whose Wide Lens bias comes from an internal mixture over
    /// the item's communities; `spec.mu_w` is ignored.
    Represented {
        internal_weights: InternalMixture,
        spec: AnnotatorSpec,
    },
}

impl EstimatorModel {
    fn kind(&self) -> &'static str {
        match self {
            EstimatorModel::Annotator { .. } => "annotator",
            EstimatorModel::Direct => "direct",
            EstimatorModel::Represented { .. } => "represented",
        }
    }

    /// The annotator spec that describes this estimator on `item`.
    pub fn item_spec(&self, item: &MixtureSpec) -> Result<AnnotatorSpec> {
        match self {
            EstimatorModel::Annotator { spec } => Ok(*spec),
            EstimatorModel::Direct => AnnotatorSpec::simple(0.0, mixture::total_spread(item), 0.0),
            EstimatorModel::Represented { internal_weights, spec } => {
                Ok(spec.with_mu_w(mixture::repr_bias(item, internal_weights)?))
            }
        }
    }

    fn sample_estimate<R: Rng>(&self, item: &MixtureSpec, f_star: f64, k: usize, rng: &mut R, clip: bool) -> Result<f64> {
        match self {
            EstimatorModel::Direct => {
                let labels = mixture::sample_direct_labels(item, k, rng)?;
                Ok(labels.iter().map(|&y| y as f64).sum::<f64>() / k as f64)
            }
            _ => {
                let spec = self.item_spec(item)?;
                Ok(annotator::sample_panel(&spec, f_star, k, rng, clip)?.aggregate())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_version")]
    pub version: u32,
    pub seed: u64,
    /// Fresh panels simulated per (estimator, item, budget).
    pub replications: usize,
    pub budgets: Vec<usize>,
    #[serde(default)]
    pub clip: bool,
    pub items: Vec<MixtureSpec>,
    pub estimators: BTreeMap<String, EstimatorModel>,
}

fn default_version() -> u32 {
    1
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::param("scenario needs at least one item"));
        }
        if self.estimators.is_empty() {
            return Err(Error::param("scenario needs at least one estimator"));
        }
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return Err(Error::param("scenario budgets must be non-empty and at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::param("scenario replications must be at least 1"));
        }
        for (id, model) in &self.estimators {
            for (i, item) in self.items.iter().enumerate() {
                model
                    .item_spec(item)
                    .map_err(|e| Error::param(format!("estimator `{id}` on item {i}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn item_id(index: usize) -> String {
        format!("item{index:03}")
    }

    /// One spec whose closed-form MSE equals the item-averaged MSE of
    /// `estimator`: bias magnitude `sqrt(mean mu^2)` (sign of the mean
    /// bias), mean residual variance and the estimator's gamma.
    pub fn effective_spec(&self, estimator: &str) -> Result<AnnotatorSpec> {
        let model = self
            .estimators
            .get(estimator)
            .ok_or_else(|| Error::param(format!("unknown estimator `{estimator}`")))?;
        let specs: Vec<AnnotatorSpec> = self.items.iter().map(|m| model.item_spec(m)).collect::<Result<_>>()?;
        let n = specs.len() as f64;
        let mean_bias = specs.iter().map(|s| s.total_bias()).sum::<f64>() / n;
        let rms_bias = (specs.iter().map(|s| s.total_bias().powi(2)).sum::<f64>() / n).sqrt();
        let v = specs.iter().map(|s| s.total_variance()).sum::<f64>() / n;
        AnnotatorSpec::simple(rms_bias.copysign(mean_bias), v, specs[0].gamma())
    }

    /// Draws one exchangeable panel of `pool_size` predictions per
    /// (item, estimator), as if collected once. Ground truth is each item's
    /// target mean; the group id is the scenario name. Predictions are
    /// always clipped to [0, 1] so the pools can be written as tables.
    pub fn synthesize(&self, pool_size: usize, seed: u64) -> Result<(PredictionPools, GroundTruthTable)> {
        self.validate()?;
        if pool_size == 0 {
            return Err(Error::param("pool size must be at least 1"));
        }
        let mut pools = PredictionPools::default();
        let mut truth = Vec::new();
        for (i, item) in self.items.iter().enumerate() {
            let id = Self::item_id(i);
            let f_star = mixture::target_mean(item);
            truth.push((
                ItemGroup::new(&id, &self.name),
                GroundTruth {
                    f_star,
                    support_count: pool_size,
                },
            ));
            for (est, model) in &self.estimators {
                let mut rng = rng::substream(seed, &["synthesize", &self.name, est, &id]);
                let values = match model {
                    EstimatorModel::Direct => mixture::sample_direct_labels(item, pool_size, &mut rng)?
                        .into_iter()
                        .map(f64::from)
                        .collect(),
                    _ => {
                        let spec = model.item_spec(item)?;
                        annotator::sample_panel(&spec, f_star, pool_size, &mut rng, true)?
                            .predictions()
                            .to_vec()
                    }
                };
                pools.insert(PoolKey::new(&id, &self.name, est), values)?;
            }
        }
        Ok((pools, GroundTruthTable::from_entries(truth)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPoint {
    pub estimator: String,
    pub k: usize,
    #[serde(flatten)]
    pub breakdown: MseBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub estimator: String,
    pub k: usize,
    pub empirical: f64,
    pub analytic: f64,
    /// `|empirical - analytic| / analytic` (absolute gap when analytic is 0).
    pub rel_gap: f64,
    /// Gap in Monte Carlo standard errors.
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub kind: String,
    /// Item-averaged error floor.
    pub floor: f64,
    /// Present when the estimator has the same spec on every item.
    pub coupling: Option<CouplingReport>,
    /// Item-averaged chi-squared divergence of the internal mixture.
    pub mean_chi2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub version: u32,
    pub seed: u64,
    /// Set when predictions were clipped, so closed-form moments are approximate.
    pub approximate: bool,
    pub empirical: MetricsReport,
    pub analytic: Vec<AnalyticPoint>,
    pub agreement: Vec<Agreement>,
    pub estimators: Vec<EstimatorSummary>,
}

impl ScenarioReport {
    pub fn empirical_mse(&self, estimator: &str, k: usize) -> Option<f64> {
        self.empirical.aggregate(&self.name, estimator, k).map(|a| a.mean_mse)
    }

    pub fn analytic_mse(&self, estimator: &str, k: usize) -> Option<f64> {
        self.analytic
            .iter()
            .find(|p| p.estimator == estimator && p.k == k)
            .map(|p| p.breakdown.total)
    }

    pub fn max_rel_gap(&self) -> f64 {
        self.agreement.iter().map(|a| a.rel_gap).fold(0.0, f64::max)
    }

    /// Tidy curves: one row per (estimator, k).
    pub fn write_curves_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "estimator_id",
            "k",
            "empirical_mse",
            "empirical_mse_se",
            "mean_signed_bias",
            "mean_variance",
            "analytic_mse",
            "bias_sq",
            "correlation_floor",
            "reducible_variance",
            "rel_gap",
        ])?;
        for a in &self.agreement {
            let emp = self.empirical.aggregate(&self.name, &a.estimator, a.k);
            let ana = self.analytic.iter().find(|p| p.estimator == a.estimator && p.k == a.k);
            let (Some(emp), Some(ana)) = (emp, ana) else { continue };
            wtr.write_record([
                a.estimator.clone(),
                a.k.to_string(),
                format!("{:.9}", emp.mean_mse),
                format!("{:.9}", emp.mse_se),
                format!("{:.9}", emp.mean_signed_bias),
                format!("{:.9}", emp.mean_variance),
                format!("{:.9}", ana.breakdown.total),
                format!("{:.9}", ana.breakdown.bias_sq),
                format!("{:.9}", ana.breakdown.correlation_floor),
                format!("{:.9}", ana.breakdown.reducible_variance),
                format!("{:.6}", a.rel_gap),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<curves>", e))?;
        Ok(())
    }
}

pub fn run_scenario(s: &Scenario) -> Result<ScenarioReport> {
    s.validate()?;
    let mut budgets = s.budgets.clone();
    budgets.sort_unstable();
    budgets.dedup();

    let f_stars: Vec<f64> = s.items.iter().map(mixture::target_mean).collect();
    let mut tasks = Vec::new();
    for (est, model) in &s.estimators {
        for (i, item) in s.items.iter().enumerate() {
            for &k in &budgets {
                tasks.push((est.as_str(), model, i, item, k));
            }
        }
    }
    let items: Vec<ItemMetrics> = tasks
        .into_par_iter()
        .map(|(est, model, i, item, k)| {
            let id = Scenario::item_id(i);
            let mut rng = rng::substream(s.seed, &["scenario", &s.name, est, &id, &k.to_string()]);
            let f_star = f_stars[i];
            let estimates: Vec<f64> = (0..s.replications)
                .map(|_| model.sample_estimate(item, f_star, k, &mut rng, s.clip))
                .collect::<Result<_>>()?;
            let m = bootstrap::summarize(&estimates, f_star);
            bootstrap::check_identity(m.mse, m.bias, m.variance, || format!("scenario `{}` {est} {id} k={k}", s.name))?;
            Ok(ItemMetrics {
                item: id,
                group: s.name.clone(),
                estimator: est.to_string(),
                k,
                pool_size: k,
                method: Method::MonteCarlo,
                f_star,
                mse: m.mse,
                bias: m.bias,
                variance: m.variance,
                bootstrap_mean: m.mean,
                mse_se: m.mse_se,
            })
        })
        .collect::<Result<_>>()?;
    let aggregates: Vec<AggregateMetrics> = bootstrap::aggregate_items(&items)?;
    let empirical = MetricsReport {
        provenance: Provenance {
            resamples: s.replications,
            seed: s.seed,
            k_range: budgets.clone(),
            mode: ResampleMode::MonteCarlo,
            exact_limit: bootstrap::EXACT_LIMIT,
        },
        items,
        aggregates,
    };

    let mut analytic = Vec::new();
    let mut agreement = Vec::new();
    let mut summaries = Vec::new();
    for (est, model) in &s.estimators {
        let specs: Vec<AnnotatorSpec> = s.items.iter().map(|m| model.item_spec(m)).collect::<Result<_>>()?;
        let n = specs.len() as f64;
        for &k in &budgets {
            let mut sum = MseBreakdown {
                bias_sq: 0.0,
                correlation_floor: 0.0,
                reducible_variance: 0.0,
                total: 0.0,
            };
            for spec in &specs {
                let b = analytics::analytic_mse(spec, Budget::Finite(k))?;
                sum.bias_sq += b.bias_sq / n;
                sum.correlation_floor += b.correlation_floor / n;
                sum.reducible_variance += b.reducible_variance / n;
                sum.total += b.total / n;
            }
            let emp = empirical
                .aggregate(&s.name, est, k)
                .ok_or_else(|| Error::param("missing empirical aggregate"))?;
            let gap = (emp.mean_mse - sum.total).abs();
            agreement.push(Agreement {
                estimator: est.clone(),
                k,
                empirical: emp.mean_mse,
                analytic: sum.total,
                rel_gap: if sum.total > 0.0 { gap / sum.total } else { gap },
                z: if emp.mse_se > 0.0 { gap / emp.mse_se } else { 0.0 },
            });
            analytic.push(AnalyticPoint {
                estimator: est.clone(),
                k,
                breakdown: sum,
            });
        }
        let floor = specs.iter().map(analytics::error_floor).sum::<f64>() / n;
        let uniform = specs.windows(2).all(|w| w[0] == w[1]);
        let mean_chi2 = match model {
            EstimatorModel::Represented { internal_weights, .. } => Some(
                s.items
                    .iter()
                    .map(|m| mixture::chi2_divergence(internal_weights, m))
                    .sum::<Result<f64>>()?
                    / n,
            ),
            _ => None,
        };
        summaries.push(EstimatorSummary {
            estimator: est.clone(),
            kind: model.kind().to_string(),
            floor,
            coupling: uniform.then(|| analytics::coupling(&specs[0])),
            mean_chi2,
        });
    }

    Ok(ScenarioReport {
        name: s.name.clone(),
        version: s.version,
        seed: s.seed,
        approximate: s.clip,
        empirical,
        analytic,
        agreement,
        estimators: summaries,
    })
}

/// Smallest budget in the report at which `human`'s empirical MSE drops
/// below `llm`'s empirical MSE at budget `m`.
pub fn empirical_crossover(report: &ScenarioReport, llm: &str, human: &str, m: usize) -> Option<usize> {
    let target = report.empirical_mse(llm, m)?;
    report.empirical.provenance.k_range.iter().copied().find(|&k| {
        report
            .empirical_mse(human, k)
            .is_some_and(|h| h < target)
    })
}

const PRESETS: [(&str, &str); 5] = [
    ("h1_budget_regime", include_str!("../presets/h1_budget_regime.json")),
    ("h2_coupling", include_str!("../presets/h2_coupling.json")),
    ("h3_representation", include_str!("../presets/h3_representation.json")),
    ("h4_engineerability", include_str!("../presets/h4_engineerability.json")),
    ("degenerate", include_str!("../presets/degenerate.json")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset(name: &str) -> Result<Scenario> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::param(format!("unknown preset `{name}`; known: {}", preset_names().join(", "))))?;
    Scenario::from_json(text)
}

// ---------------------------------------------------------------------------
// Theory verification ledger

/// Deliberate defects for checking that the ledger catches errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectedFault {
    /// Adds a constant to every error floor.
    FloorOffset(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub trials: usize,
    /// Panels per Monte Carlo check.
    pub panels: usize,
    /// Number of random specs that get a Monte Carlo check.
    pub mc_specs: usize,
    pub fault: Option<InjectedFault>,
}

impl VerifyOptions {
    pub fn new(seed: u64, trials: usize) -> Self {
        Self {
            seed,
            trials,
            panels: 20_000,
            mc_specs: 40,
            fault: None,
        }
    }

    pub fn with_fault(self, fault: InjectedFault) -> Self {
        Self {
            fault: Some(fault),
            ..self
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub property: String,
    pub checks: usize,
    pub failures: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub seed: u64,
    pub trials: usize,
    pub rows: Vec<LedgerRow>,
    pub passed: bool,
}

impl Ledger {
    pub fn row(&self, property: &str) -> Option<&LedgerRow> {
        self.rows.iter().find(|r| r.property == property)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self.rows.iter().map(|r| r.property.len()).max().unwrap_or(8);
        let _ = writeln!(out, "theory verification: seed {} trials {}", self.seed, self.trials);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {}  checks {:>6}  failures {:>4}  max violation {:.3e}  tolerance {:.1e}",
                r.property,
                if r.passed { "PASS" } else { "FAIL" },
                r.checks,
                r.failures,
                r.max_violation,
                r.tolerance,
            );
        }
        let _ = writeln!(out, "overall: {}", if self.passed { "PASS" } else { "FAIL" });
        out
    }
}

fn random_mixture(rng: &mut ChaCha8Rng) -> MixtureSpec {
    let n = rng.random_range(1..=6);
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let pairs: Vec<(f64, f64)> = raw.iter().map(|w| (w / total, rng.random::<f64>())).collect();
    MixtureSpec::new(&pairs).expect("normalized weights")
}

fn random_internal(rng: &mut ChaCha8Rng, n: usize) -> InternalMixture {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0) + 1e-9).collect();
    let total: f64 = raw.iter().sum();
    InternalMixture::new(raw.iter().map(|q| q / total).collect()).expect("normalized weights")
}

/// Random valid annotator spec.
pub fn random_spec<R: Rng>(rng: &mut R) -> AnnotatorSpec {
    let var_w = rng.random_range(0.0..0.05);
    let var_c = rng.random_range(0.0..0.05);
    let rho: f64 = rng.random_range(-1.0..1.0);
    AnnotatorSpec::new(
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
        var_w,
        var_c,
        rng.random_range(0.0..0.05),
        rho * (var_w * var_c).sqrt(),
        rng.random_range(0.0..0.95),
    )
    .expect("valid random spec")
}

struct RowBuilder {
    property: &'static str,
    tolerance: f64,
    checks: usize,
    failures: usize,
    max_violation: f64,
}

impl RowBuilder {
    fn new(property: &'static str, tolerance: f64) -> Self {
        Self {
            property,
            tolerance,
            checks: 0,
            failures: 0,
            max_violation: 0.0,
        }
    }

    fn record(&mut self, violation: f64) {
        self.checks += 1;
        let v = if violation.is_nan() { f64::INFINITY } else { violation };
        if v > self.tolerance {
            self.failures += 1;
        }
        self.max_violation = self.max_violation.max(v);
    }

    fn finish(self) -> LedgerRow {
        LedgerRow {
            property: self.property.to_string(),
            checks: self.checks,
            failures: self.failures,
            max_violation: self.max_violation,
            tolerance: self.tolerance,
            passed: self.failures == 0 && self.checks > 0,
        }
    }
}

/// Violations of every deterministic property for one random draw.
fn deterministic_trial(seed: u64, t: usize, floor: &dyn Fn(&AnnotatorSpec) -> f64) -> Vec<(usize, f64)> {
    let mut rng = rng::indexed(seed, "verify", t as u64);
    let mut out = Vec::new();

    let m = random_mixture(&mut rng);
    let q = random_internal(&mut rng, m.len());
    let f = mixture::target_mean(&m);
    let lo = m.communities().iter().map(|c| c.mean).fold(f64::INFINITY, f64::min);
    let hi = m.communities().iter().map(|c| c.mean).fold(f64::NEG_INFINITY, f64::max);
    out.push((0, (lo - f).max(f - hi).max(0.0)));
    out.push((1, (mixture::v_hetero(&m) - 0.25).max(0.0)));
    let b = mixture::repr_bias(&m, &q).expect("supported");
    let bc = mixture::repr_bias_centered(&m, &q).expect("supported");
    out.push((2, (b - bc).abs()));
    let check = mixture::check_repr_bound(&m, &q).expect("supported");
    out.push((3, (check.lhs - check.rhs).max(0.0)));
    // equality family: scale lambda inside the feasible range
    let f_star = mixture::target_mean(&m);
    let max_neg = m
        .communities()
        .iter()
        .map(|c| c.mean - f_star)
        .filter(|d| d.abs() > 1e-12)
        .map(|d| 1.0 / d.abs())
        .fold(f64::INFINITY, f64::min);
    let lambda = rng.random_range(-1.0..1.0) * max_neg.min(1e6) * 0.99;
    if let Ok(qe) = mixture::equality_mixture(&m, lambda) {
        let c = mixture::check_repr_bound(&m, &qe).expect("supported");
        out.push((4, c.slack.abs()));
    }

    let a = random_spec(&mut rng);
    let c = analytics::coupling(&a);
    let base = a.mu_w().powi(2) + a.mu_c().powi(2);
    let scale = base.max(f64::MIN_POSITIVE);
    out.push((5, (a.total_bias().powi(2) - (base + c.i_mean)).abs() / scale));
    let fl = floor(&a);
    let e = analytics::expanded_floor(&a);
    out.push((6, relative(e.total, fl)));
    let far = analytics::analytic_mse(&a, Budget::Finite(1_000_000_000_000)).expect("k >= 1").total;
    out.push((7, (far - fl).abs()));
    let k = rng.random_range(1..=50usize);
    let mk = analytics::analytic_mse(&a, Budget::Finite(k)).expect("k >= 1");
    let gap = (1.0 - a.gamma()) * a.total_variance() / k as f64;
    out.push((8, relative(mk.total - fl, gap).min((mk.total - fl - gap).abs() / mk.total.max(1e-300))));
    let mut prev = f64::INFINITY;
    let mut worst: f64 = 0.0;
    for k in 1..=20 {
        let cur = analytics::analytic_mse(&a, Budget::Finite(k)).expect("k >= 1").total;
        worst = worst.max(cur - prev);
        prev = cur;
    }
    out.push((9, worst.max(0.0)));

    let other = random_spec(&mut rng);
    let asym = analytics::superiority(&a, &other, Budget::Infinite, Budget::Infinite).expect("both infinite");
    let by_floor = floor(&other) - floor(&a);
    out.push((10, decision_mismatch(asym.winner, by_floor)));
    let (mm, nn) = (rng.random_range(1..=20usize), rng.random_range(1..=20usize));
    let fin = analytics::superiority(&a, &other, Budget::Finite(mm), Budget::Finite(nn)).expect("finite");
    let direct = |s: &AnnotatorSpec, k: usize| {
        s.total_bias().powi(2) + s.gamma() * s.total_variance() + (1.0 - s.gamma()) / k as f64 * s.total_variance()
    };
    out.push((11, decision_mismatch(fin.winner, direct(&other, nn) - direct(&a, mm))));

    let kk = rng.random_range(1..=30usize);
    let gamma = rng.random_range(0.0..1.0);
    out.push((12, cholesky_failure(kk, gamma)));
    out
}

fn relative(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

fn decision_mismatch(winner: analytics::Winner, margin: f64) -> f64 {
    use analytics::Winner;
    let expected = if margin.abs() <= analytics::TIE_MARGIN {
        Winner::Tie
    } else if margin > 0.0 {
        Winner::Llm
    } else {
        Winner::Human
    };
    if expected == winner {
        0.0
    } else {
        1.0
    }
}

/// Returns 1 if the exchangeable correlation matrix `(1-gamma) I + gamma J`
/// of size `k` fails a Cholesky factorization, else 0.
fn cholesky_failure(k: usize, gamma: f64) -> f64 {
    let at = |i: usize, j: usize| if i == j { 1.0 } else { gamma };
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i * k + p] * l[j * k + p]).sum();
            if i == j {
                let d = at(i, i) - s;
                if d < -1e-12 {
                    return 1.0;
                }
                l[i * k + j] = d.max(0.0).sqrt();
            } else if l[j * k + j] > 0.0 {
                l[i * k + j] = (at(i, j) - s) / l[j * k + j];
            } else if (at(i, j) - s).abs() > 1e-12 {
                return 1.0;
            }
        }
    }
    0.0
}

const DETERMINISTIC_ROWS: [(&str, f64); 13] = [
    ("target_mean_within_community_range", 1e-12),
    ("heterogeneity_at_most_quarter", 1e-12),
    ("representation_bias_centered_form", 1e-12),
    ("representation_bias_bound", 1e-12),
    ("representation_bound_equality", 1e-12),
    ("mean_coupling_identity", 1e-14),
    ("expanded_floor_identity", 1e-15),
    ("floor_is_large_budget_limit", 1e-9),
    ("mse_minus_floor_is_reducible_variance", 1e-12),
    ("mse_nonincreasing_in_budget", 0.0),
    ("asymptotic_superiority_rule", 0.0),
    ("finite_budget_rule", 0.0),
    ("exchangeable_correlation_psd", 0.0),
];

/// z-score bound for the Monte Carlo rows.
const MC_Z: f64 = 5.0;

/// Monte Carlo checks on one random spec; returns (row, |z|) pairs.
fn monte_carlo_trial(opts: &VerifyOptions, t: usize) -> Vec<(usize, f64)> {
    let mut rng = rng::indexed(opts.seed, "verify-mc", t as u64);
    let a = random_spec(&mut rng);
    let k = rng.random_range(1..=10usize);
    let f_star: f64 = rng.random();
    let n = opts.panels as f64;
    let v = a.total_variance();
    let mut out = Vec::new();

    let aggs: Vec<f64> = (0..opts.panels)
        .map(|_| annotator::sample_panel(&a, f_star, k, &mut rng, false).expect("k >= 1").aggregate())
        .collect();
    let mean = aggs.iter().sum::<f64>() / n;
    let var = aggs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let var_formula = v * (1.0 - a.gamma()) / k as f64 + a.gamma() * v;
    // aggregate bias
    out.push((0, ((mean - f_star) - a.total_bias()).abs() / (var / n).sqrt().max(1e-300)));
    // aggregate variance, Gaussian SE of the sample variance
    out.push((1, (var - var_formula).abs() / (var_formula * (2.0 / (n - 1.0)).sqrt()).max(1e-300)));
    // aggregate MSE
    let sq: Vec<f64> = aggs.iter().map(|x| (x - f_star).powi(2)).collect();
    let mse = sq.iter().sum::<f64>() / n;
    let mse_sd = (sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let analytic = analytics::analytic_mse(&a, Budget::Finite(k)).expect("k >= 1").total;
    out.push((2, (mse - analytic).abs() / (mse_sd / n.sqrt()).max(1e-300)));

    // component-level draws: variance expansion and noise orthogonality
    let draws: Vec<annotator::ComponentDraw> = (0..opts.panels)
        .map(|_| annotator::sample_panel_components(&a, 1, &mut rng).expect("k >= 1")[0])
        .collect();
    let resid: Vec<f64> = draws.iter().map(|d| d.b_w + d.b_c + d.eps - a.total_bias()).collect();
    let rmean = resid.iter().sum::<f64>() / n;
    let rvar = resid.iter().map(|r| (r - rmean).powi(2)).sum::<f64>() / (n - 1.0);
    out.push((3, (rvar - v).abs() / (v * (2.0 / (n - 1.0)).sqrt()).max(1e-300)));
    let bias_part: Vec<f64> = draws.iter().map(|d| d.b_w + d.b_c).collect();
    let corr = sample_corr(&bias_part, &draws.iter().map(|d| d.eps).collect::<Vec<_>>());
    out.push((4, corr.abs() * n.sqrt()));

    // direct-label variance equals the total spread
    let m = random_mixture(&mut rng);
    let labels = mixture::sample_direct_labels(&m, opts.panels, &mut rng).expect("bernoulli");
    let f = mixture::target_mean(&m);
    // (y - f*)^2 averages to Var(y) without estimating the mean
    let sq: Vec<f64> = labels.iter().map(|&y| (y as f64 - f).powi(2)).collect();
    let lv = sq.iter().sum::<f64>() / n;
    let sd = (sq.iter().map(|d| (d - lv).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let spread = mixture::total_spread(&m);
    let se = (sd / n.sqrt()).max(1.0 / n);
    out.push((5, (lv - spread).abs() / se));
    out
}

fn sample_corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

const MC_ROWS: [&str; 6] = [
    "aggregate_bias_monte_carlo",
    "aggregate_variance_monte_carlo",
    "aggregate_mse_monte_carlo",
    "variance_expansion_monte_carlo",
    "noise_orthogonality_monte_carlo",
    "direct_label_variance_monte_carlo",
];

/// Runs every model property on randomized inputs and reports one row per
/// property with its worst observed violation.
pub fn verify_theory(opts: &VerifyOptions) -> Result<Ledger> {
    if opts.trials == 0 {
        return Err(Error::param("verification needs at least one trial"));
    }
    if opts.panels < 2 {
        return Err(Error::param("Monte Carlo checks need at least two panels"));
    }
    let offset = match opts.fault {
        Some(InjectedFault::FloorOffset(d)) => d,
        None => 0.0,
    };
    let floor = move |a: &AnnotatorSpec| analytics::error_floor(a) + offset;

    let det: Vec<Vec<(usize, f64)>> = (0..opts.trials)
        .into_par_iter()
        .map(|t| deterministic_trial(opts.seed, t, &floor))
        .collect();
    let mut rows: Vec<RowBuilder> = DETERMINISTIC_ROWS.iter().map(|&(p, tol)| RowBuilder::new(p, tol)).collect();
    for trial in det {
        for (row, v) in trial {
            rows[row].record(v);
        }
    }

    let mc_specs = opts.mc_specs.min(opts.trials).max(1);
    let mc: Vec<Vec<(usize, f64)>> = (0..mc_specs)
        .into_par_iter()
        .map(|t| monte_carlo_trial(opts, t))
        .collect();
    let mut mc_rows: Vec<RowBuilder> = MC_ROWS.iter().map(|&p| RowBuilder::new(p, MC_Z)).collect();
    for trial in mc {
        for (row, v) in trial {
            mc_rows[row].record(v);
        }
    }

    let rows: Vec<LedgerRow> = rows.into_iter().chain(mc_rows).map(RowBuilder::finish).collect();
    let passed = rows.iter().all(|r| r.passed);
    Ok(Ledger {
        seed: opts.seed,
        trials: opts.trials,
        rows,
        passed,
    })
}
