//! Closed-form error decompositions and the estimator decision rules.
//!
//! For an aggregate of `k` exchangeable predictions,
//! `MSE(k) = mu^2 + gamma * V + (1 - gamma) * V / k`. The first two terms
//! survive any amount of aggregation and form the error floor.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::annotator::AnnotatorSpec;
use crate::error::{Error, Result};

/// MSE differences at or below this are reported as ties.
pub const TIE_MARGIN: f64 = 1e-12;

/// Aggregation budget: a finite number of annotations or the k -> infinity limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BudgetRepr", into = "BudgetRepr")]
pub enum Budget {
    Finite(usize),
    Infinite,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BudgetRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<BudgetRepr> for Budget {
    type Error = Error;

    fn try_from(r: BudgetRepr) -> Result<Self> {
        match r {
            BudgetRepr::Count(k) => Budget::finite(k),
            BudgetRepr::Word(w) if matches!(w.as_str(), "inf" | "infinite" | "infinity") => Ok(Budget::Infinite),
            BudgetRepr::Word(w) => Err(Error::param(format!("budget `{w}` is neither a count nor \"inf\""))),
        }
    }
}

impl From<Budget> for BudgetRepr {
    fn from(b: Budget) -> Self {
        match b {
            Budget::Finite(k) => BudgetRepr::Count(k),
            Budget::Infinite => BudgetRepr::Word("inf".into()),
        }
    }
}

impl Budget {
    pub fn finite(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("budget must be at least 1"));
        }
        Ok(Budget::Finite(k))
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Finite(k) => write!(f, "{k}"),
            Budget::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseBreakdown {
    pub bias_sq: f64,
    pub correlation_floor: f64,
    pub reducible_variance: f64,
    pub total: f64,
}

pub fn analytic_mse(a: &AnnotatorSpec, k: Budget) -> Result<MseBreakdown> {
    let v = a.total_variance();
    let bias_sq = a.total_bias().powi(2);
    let correlation_floor = a.gamma() * v;
    let reducible_variance = match k {
        Budget::Finite(0) => return Err(Error::param("budget must be at least 1")),
        Budget::Finite(k) => (1.0 - a.gamma()) * v / k as f64,
        Budget::Infinite => 0.0,
    };
    Ok(MseBreakdown {
        bias_sq,
        correlation_floor,
        reducible_variance,
        total: bias_sq + correlation_floor + reducible_variance,
    })
}

/// `mu^2 + gamma * V`, the limit of [`analytic_mse`] as the budget grows.
///
/// Evaluated in double-double arithmetic so that it and
/// [`expanded_floor`] are both correctly rounded and agree to an ulp.
pub fn error_floor(a: &AnnotatorSpec) -> f64 {
    let g = Dd::from(a.gamma());
    let mu = Dd::from(a.mu_w()) + Dd::from(a.mu_c());
    let v = Dd::from(a.var_w()) + Dd::from(a.var_c()) + Dd::from(2.0 * a.cov_wc()) + Dd::from(a.var_eps());
    (mu * mu + g * v).value()
}

/// Unevaluated sum `hi + lo` with about 106 bits of precision.
#[derive(Clone, Copy, Debug)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd {
            hi: s,
            lo: (a - (s - bb)) + (b - bb),
        }
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }
}

impl std::ops::Add for Dd {
    type Output = Dd;

    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.hi, o.hi);
        let t = Dd::two_sum(self.lo, o.lo);
        let r = Dd::two_sum(s.hi, s.lo + t.hi);
        Dd::two_sum(r.hi, r.lo + t.lo)
    }
}

impl std::ops::Mul for Dd {
    type Output = Dd;

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Dd::two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    /// `2 mu_W mu_C`
    pub i_mean: f64,
    /// `2 Cov(b_W, b_C)`
    pub i_var: f64,
    pub superadditive_mean: bool,
    pub superadditive_var: bool,
}

pub fn coupling(a: &AnnotatorSpec) -> CouplingReport {
    let i_mean = 2.0 * a.mu_w() * a.mu_c();
    let i_var = 2.0 * a.cov_wc();
    CouplingReport {
        i_mean,
        i_var,
        superadditive_mean: i_mean > 0.0,
        superadditive_var: i_var > 0.0,
    }
}

/// The error floor split into magnitude and coupling terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpandedFloor {
    /// `mu_W^2 + mu_C^2`
    pub base_magnitudes: f64,
    /// `2 mu_W mu_C`
    pub systematic_coupling: f64,
    /// `gamma (Var b_W + Var b_C + Var eps)`
    pub floor_marginals: f64,
    /// `gamma * 2 Cov(b_W, b_C)`
    pub variance_coupling: f64,
    pub total: f64,
}

pub fn expanded_floor(a: &AnnotatorSpec) -> ExpandedFloor {
    let (mw, mc, g) = (Dd::from(a.mu_w()), Dd::from(a.mu_c()), Dd::from(a.gamma()));
    let base = mw * mw + mc * mc;
    let systematic = Dd::from(2.0) * mw * mc;
    let marginals = g * (Dd::from(a.var_w()) + Dd::from(a.var_c()) + Dd::from(a.var_eps()));
    let var_coupling = g * Dd::from(2.0 * a.cov_wc());
    ExpandedFloor {
        base_magnitudes: base.value(),
        systematic_coupling: systematic.value(),
        floor_marginals: marginals.value(),
        variance_coupling: var_coupling.value(),
        total: (base + systematic + marginals + var_coupling).value(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    Llm,
    Human,
    Tie,
}

impl fmt::Display for Winner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Winner::Llm => "llm",
            Winner::Human => "human",
            Winner::Tie => "tie",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub winner: Winner,
    pub llm_mse: f64,
    pub human_mse: f64,
    /// `human_mse - llm_mse`; positive favours the LLM.
    pub margin: f64,
    pub llm_budget: Budget,
    pub human_budget: Budget,
}

fn decide(llm_mse: f64, human_mse: f64, llm_budget: Budget, human_budget: Budget) -> DecisionReport {
    let margin = human_mse - llm_mse;
    let winner = if margin.abs() <= TIE_MARGIN {
        Winner::Tie
    } else if margin > 0.0 {
        Winner::Llm
    } else {
        Winner::Human
    };
    DecisionReport {
        winner,
        llm_mse,
        human_mse,
        margin,
        llm_budget,
        human_budget,
    }
}

/// Compares an LLM ensemble of `m` samples with a human panel of `n`
/// annotators. Both budgets finite, or both infinite for the floor comparison.
pub fn superiority(a_llm: &AnnotatorSpec, a_human: &AnnotatorSpec, m: Budget, n: Budget) -> Result<DecisionReport> {
    if matches!(
        (m, n),
        (Budget::Infinite, Budget::Finite(_)) | (Budget::Finite(_), Budget::Infinite)
    ) {
        return Err(Error::param("budgets must be both finite or both infinite"));
    }
    let llm = analytic_mse(a_llm, m)?.total;
    let human = analytic_mse(a_human, n)?.total;
    Ok(decide(llm, human, m, n))
}

/// Smallest human budget `n` whose MSE beats the LLM at budget `m`, or
/// `None` when the human floor never gets there.
pub fn budget_crossover(a_llm: &AnnotatorSpec, a_human: &AnnotatorSpec, m: Budget) -> Result<Option<usize>> {
    let target = analytic_mse(a_llm, m)?.total;
    let wins = |n: usize| -> Result<bool> {
        let h = analytic_mse(a_human, Budget::Finite(n))?.total;
        Ok(target - h > TIE_MARGIN)
    };
    if wins(1)? {
        return Ok(Some(1));
    }
    let floor = error_floor(a_human);
    let gap = target - floor;
    if gap <= TIE_MARGIN {
        return Ok(None);
    }
    let reducible = (1.0 - a_human.gamma()) * a_human.total_variance();
    // need reducible / n < gap (up to the tie margin)
    let estimate = (reducible / gap).floor();
    if !estimate.is_finite() || estimate > usize::MAX as f64 / 2.0 {
        return Ok(None);
    }
    let mut n = (estimate as usize).max(1);
    while n > 1 && wins(n - 1)? {
        n -= 1;
    }
    let limit = n.saturating_add(1024);
    while !wins(n)? {
        // only reachable when the gap sits at the tie margin
        if n >= limit {
            return Ok(None);
        }
        n += 1;
    }
    Ok(Some(n))
}

/// One direct human label (MSE = the population spread) against one LLM
/// sample (MSE = `mu_L^2 + V_L`).
pub fn single_direct_vs_llm(v_population_spread: f64, a_llm: &AnnotatorSpec) -> Result<DecisionReport> {
    if !(v_population_spread.is_finite() && v_population_spread >= 0.0) {
        return Err(Error::param("population spread must be non-negative"));
    }
    let llm = a_llm.total_bias().powi(2) + a_llm.total_variance();
    Ok(decide(llm, v_population_spread, Budget::Finite(1), Budget::Finite(1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple(mu: f64, v: f64, gamma: f64) -> AnnotatorSpec {
        AnnotatorSpec::simple(mu, v, gamma).unwrap()
    }

    #[test]
    fn analytic_mse_examples() {
        let b = analytic_mse(&simple(0.0, 1.0, 0.0), Budget::Finite(1)).unwrap();
        assert_eq!(b.total, 1.0);
        let b = analytic_mse(&simple(0.1, 0.5, 0.2), Budget::Finite(5)).unwrap();
        assert!((b.bias_sq - 0.01).abs() < 1e-15);
        assert!((b.correlation_floor - 0.10).abs() < 1e-15);
        assert!((b.reducible_variance - 0.08).abs() < 1e-15);
        assert!((b.total - 0.19).abs() < 1e-15);
        assert!(analytic_mse(&simple(0.0, 1.0, 0.0), Budget::Finite(0)).is_err());
        let inf = analytic_mse(&simple(0.1, 0.5, 0.2), Budget::Infinite).unwrap().total;
        assert!((inf - error_floor(&simple(0.1, 0.5, 0.2))).abs() < 1e-16);
    }

    #[test]
    fn error_floor_examples() {
        assert!((error_floor(&simple(0.2, 0.5, 0.0)) - 0.04).abs() < 1e-15);
        assert!((error_floor(&simple(0.0, 1.0, 0.3)) - 0.3).abs() < 1e-15);
        let a = simple(0.1, 0.5, 0.2);
        let big = analytic_mse(&a, Budget::Finite(1_000_000)).unwrap().total;
        assert!((big - error_floor(&a)).abs() < 1e-5);
    }

    #[test]
    fn coupling_examples() {
        let a = AnnotatorSpec::new(-0.1, -0.1, 0., 0., 0., 0., 0.).unwrap();
        let c = coupling(&a);
        assert!((c.i_mean - 0.02).abs() < 1e-15 && c.superadditive_mean);
        let a = AnnotatorSpec::new(0.1, -0.1, 0., 0., 0., 0., 0.).unwrap();
        let c = coupling(&a);
        assert!((c.i_mean + 0.02).abs() < 1e-15 && !c.superadditive_mean);
        let a = AnnotatorSpec::new(0.1, 0.0, 0.01, 0.04, 0., 0.01, 0.).unwrap();
        let c = coupling(&a);
        assert_eq!(c.i_mean, 0.0);
        assert!((c.i_var - 0.02).abs() < 1e-15 && c.superadditive_var);
    }

    #[test]
    fn expanded_floor_matches_floor() {
        let a = AnnotatorSpec::new(0.07, -0.03, 0.01, 0.02, 0.03, 0.005, 0.4).unwrap();
        let e = expanded_floor(&a);
        assert!((e.total - error_floor(&a)).abs() <= 1e-15 * error_floor(&a));
        let a = AnnotatorSpec::new(0.07, -0.03, 0.01, 0.02, 0.03, 0.0, 0.5).unwrap();
        assert_eq!(expanded_floor(&a).variance_coupling, 0.0);
    }

    #[test]
    fn superiority_examples() {
        let a = simple(0.05, 0.01, 0.2);
        let r = superiority(&a, &a, Budget::Finite(3), Budget::Finite(3)).unwrap();
        assert_eq!(r.winner, Winner::Tie);

        let llm = simple(0.05, 0.001, 0.0);
        let human = simple(0.0, 0.09, 0.3);
        let r = superiority(&llm, &human, Budget::Finite(1), Budget::Finite(1)).unwrap();
        assert_eq!(r.winner, Winner::Llm);
        assert!((r.llm_mse - 0.0035).abs() < 1e-15);
        assert!((r.human_mse - 0.09).abs() < 1e-15);

        let r = superiority(&llm, &human, Budget::Infinite, Budget::Infinite).unwrap();
        assert!((r.human_mse - 0.027).abs() < 1e-15);
        assert!(superiority(&llm, &human, Budget::Infinite, Budget::Finite(2)).is_err());
    }

    #[test]
    fn crossover_examples() {
        let llm = simple(0.15, 0.001, 0.0);
        let human = simple(0.0, 0.09, 0.1);
        // scan oracle straight from the closed form
        let l = 0.15f64.powi(2) + 0.001;
        let scan = (1..=100).find(|&n| 0.1 * 0.09 + 0.9 * 0.09 / (n as f64) < l);
        assert_eq!(scan, Some(6));
        assert_eq!(budget_crossover(&llm, &human, Budget::Finite(1)).unwrap(), Some(6));
        let r = superiority(&llm, &human, Budget::Finite(1), Budget::Finite(6)).unwrap();
        assert_eq!(r.winner, Winner::Human);
        let r = superiority(&llm, &human, Budget::Finite(1), Budget::Finite(5)).unwrap();
        assert_eq!(r.winner, Winner::Llm);

        // human floor above the LLM: never crosses
        assert_eq!(budget_crossover(&simple(0.0, 0.001, 0.0), &simple(0.1, 0.05, 0.5), Budget::Finite(1)).unwrap(), None);
        // LLM already worse at n = 1
        assert_eq!(budget_crossover(&simple(0.5, 0.1, 0.0), &simple(0.0, 0.05, 0.0), Budget::Finite(1)).unwrap(), Some(1));
    }

    #[test]
    fn crossover_matches_scan_on_grid() {
        for &mu in &[0.0, 0.05, 0.1, 0.2] {
            for &vl in &[0.0, 0.002, 0.01] {
                for &vh in &[0.01, 0.05, 0.2] {
                    for &g in &[0.0, 0.05, 0.2] {
                        let llm = simple(mu, vl, 0.0);
                        let human = simple(0.0, vh, g);
                        let l = analytic_mse(&llm, Budget::Finite(1)).unwrap().total;
                        let scan = (1..=100_000).find(|&n| {
                            l - analytic_mse(&human, Budget::Finite(n)).unwrap().total > TIE_MARGIN
                        });
                        let got = budget_crossover(&llm, &human, Budget::Finite(1)).unwrap();
                        if let Some(n) = got {
                            assert_eq!(Some(n), scan, "mu {mu} vl {vl} vh {vh} g {g}");
                        } else {
                            assert_eq!(scan, None, "mu {mu} vl {vl} vh {vh} g {g}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn single_direct_examples() {
        let llm = simple(0.1, 0.01, 0.0);
        assert_eq!(single_direct_vs_llm(0.25, &llm).unwrap().winner, Winner::Llm);
        assert_eq!(single_direct_vs_llm(0.005, &llm).unwrap().winner, Winner::Human);
        let spread = 0.1f64.powi(2) + 0.01;
        assert_eq!(single_direct_vs_llm(spread, &llm).unwrap().winner, Winner::Tie);
        assert!(single_direct_vs_llm(-1.0, &llm).is_err());
    }

    #[test]
    fn mirrored_bias_changes_nothing() {
        let a = AnnotatorSpec::new(0.07, 0.02, 0.01, 0.02, 0.03, -0.005, 0.3).unwrap();
        let b = simple(-0.03, 0.05, 0.1);
        for k in [1, 2, 7] {
            let x = analytic_mse(&a, Budget::Finite(k)).unwrap();
            let y = analytic_mse(&a.mirrored(), Budget::Finite(k)).unwrap();
            assert_eq!(x, y);
            let r1 = superiority(&a, &b, Budget::Finite(k), Budget::Finite(k)).unwrap();
            let r2 = superiority(&a.mirrored(), &b.mirrored(), Budget::Finite(k), Budget::Finite(k)).unwrap();
            assert_eq!(r1.winner, r2.winner);
        }
        assert_eq!(error_floor(&a), error_floor(&a.mirrored()));
    }

    #[test]
    fn budget_json() {
        assert_eq!(serde_json::from_str::<Budget>("5").unwrap(), Budget::Finite(5));
        assert_eq!(serde_json::from_str::<Budget>("\"inf\"").unwrap(), Budget::Infinite);
        assert!(serde_json::from_str::<Budget>("0").is_err());
        assert_eq!(serde_json::to_string(&Budget::Infinite).unwrap(), "\"inf\"");
    }
}
