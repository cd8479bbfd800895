//! Latent subcommunity mixtures and representation bias.
//!
//! A group's judgment of an item is modelled as a mixture of subcommunities,
//! each with its own mean judgment. An estimator that reasons about the group
//! through its own internal weights `q` instead of the population weights `w`
//! picks up a representation (Wide Lens) bias bounded by
//! `b_W^2 <= V_hetero * chi2(q || w)`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum(w) == 1`. Weights are never renormalized.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Slack allowed when checking the representation bias bound.
pub const BOUND_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Community {
    pub weight: f64,
    pub mean: f64,
}

/// How individual direct labels are drawn inside a community.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WithinCommunityModel {
    /// Every member of community `c` answers exactly `f*_c`; requires binary means.
    Deterministic,
    /// Members answer `Bernoulli(f*_c)`.
    #[default]
    Bernoulli,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture", into = "RawMixture")]
pub struct MixtureSpec {
    communities: Vec<Community>,
    within: WithinCommunityModel,
}

#[derive(Serialize, Deserialize)]
struct RawMixture {
    communities: Vec<Community>,
    #[serde(default)]
    within_community_model: WithinCommunityModel,
}

impl TryFrom<RawMixture> for MixtureSpec {
    type Error = Error;

    fn try_from(raw: RawMixture) -> Result<Self> {
        MixtureSpec::with_model(raw.communities, raw.within_community_model)
    }
}

impl From<MixtureSpec> for RawMixture {
    fn from(m: MixtureSpec) -> Self {
        RawMixture {
            communities: m.communities,
            within_community_model: m.within,
        }
    }
}

impl MixtureSpec {
    /// Mixture from `(weight, mean)` pairs with the Bernoulli within-community model.
    pub fn new(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::with_model(
            pairs.iter().map(|&(weight, mean)| Community { weight, mean }).collect(),
            WithinCommunityModel::Bernoulli,
        )
    }

    pub fn with_model(communities: Vec<Community>, within: WithinCommunityModel) -> Result<Self> {
        if communities.is_empty() {
            return Err(Error::param("mixture needs at least one community"));
        }
        for (i, c) in communities.iter().enumerate() {
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(Error::param(format!("community {i}: weight {} is negative", c.weight)));
            }
            if !(0.0..=1.0).contains(&c.mean) {
                return Err(Error::param(format!("community {i}: mean {} outside [0, 1]", c.mean)));
            }
        }
        let total: f64 = communities.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::param(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self { communities, within })
    }

    pub fn communities(&self) -> &[Community] {
        &self.communities
    }

    pub fn within_model(&self) -> WithinCommunityModel {
        self.within
    }

    pub fn len(&self) -> usize {
        self.communities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.communities.is_empty()
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.communities.iter().map(|c| c.weight)
    }
}

/// An estimator's internal weighting of the same communities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct InternalMixture {
    weights: Vec<f64>,
}

impl TryFrom<Vec<f64>> for InternalMixture {
    type Error = Error;

    fn try_from(weights: Vec<f64>) -> Result<Self> {
        InternalMixture::new(weights)
    }
}

impl From<InternalMixture> for Vec<f64> {
    fn from(q: InternalMixture) -> Self {
        q.weights
    }
}

impl InternalMixture {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(Error::param("internal weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::param(format!("internal weights sum to {total}, not 1")));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The internal mixture that reproduces the population weights exactly.
    pub fn matching(m: &MixtureSpec) -> Self {
        Self {
            weights: m.weights().collect(),
        }
    }

    /// Checks alignment with `m` and absolute continuity (`q_c > 0 => w_c > 0`).
    pub fn check_support(&self, m: &MixtureSpec) -> Result<()> {
        if self.weights.len() != m.len() {
            return Err(Error::param(format!(
                "internal mixture has {} weights, population has {} communities",
                self.weights.len(),
                m.len()
            )));
        }
        for (index, (&q, c)) in self.weights.iter().zip(m.communities()).enumerate() {
            if q > 0.0 && c.weight == 0.0 {
                return Err(Error::UnboundedDivergence { index, q });
            }
        }
        Ok(())
    }
}

/// `f* = sum_c w_c f*_c`.
pub fn target_mean(m: &MixtureSpec) -> f64 {
    m.communities.iter().map(|c| c.weight * c.mean).sum()
}

/// Between-community variance `sum_c w_c (f*_c - f*)^2`.
pub fn v_hetero(m: &MixtureSpec) -> f64 {
    let f = target_mean(m);
    m.communities
        .iter()
        .map(|c| c.weight * (c.mean - f).powi(2))
        .sum()
}

/// Variance of a single direct label `Y_h`: between-community spread plus
/// the within-community part (`sum_c w_c f*_c (1 - f*_c)` under the
/// Bernoulli model, zero under the deterministic one).
///
/// This is the MSE of one direct label as an estimate of `f*`. It equals
/// [`v_hetero`] only for the deterministic model.
pub fn total_spread(m: &MixtureSpec) -> f64 {
    let within = match m.within {
        WithinCommunityModel::Deterministic => 0.0,
        WithinCommunityModel::Bernoulli => m
            .communities
            .iter()
            .map(|c| c.weight * c.mean * (1.0 - c.mean))
            .sum(),
    };
    v_hetero(m) + within
}

/// Representation bias `sum_c (q_c - w_c) f*_c`.
pub fn repr_bias(m: &MixtureSpec, q: &InternalMixture) -> Result<f64> {
    q.check_support(m)?;
    Ok(q.weights
        .iter()
        .zip(&m.communities)
        .map(|(qc, c)| (qc - c.weight) * c.mean)
        .sum())
}

/// Centered form `sum_c (q_c - w_c)(f*_c - f*)`; equal to [`repr_bias`]
/// because the weight differences sum to zero.
pub fn repr_bias_centered(m: &MixtureSpec, q: &InternalMixture) -> Result<f64> {
    q.check_support(m)?;
    let f = target_mean(m);
    Ok(q.weights
        .iter()
        .zip(&m.communities)
        .map(|(qc, c)| (qc - c.weight) * (c.mean - f))
        .sum())
}

/// `chi2(q || w) = sum_c (q_c - w_c)^2 / w_c` over communities with `w_c > 0`.
pub fn chi2_divergence(q: &InternalMixture, m: &MixtureSpec) -> Result<f64> {
    q.check_support(m)?;
    Ok(q.weights
        .iter()
        .zip(&m.communities)
        .filter(|(_, c)| c.weight > 0.0)
        .map(|(qc, c)| (qc - c.weight).powi(2) / c.weight)
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReprBoundCheck {
    /// `b_W^2`
    pub lhs: f64,
    /// `V_hetero * chi2(q || w)`
    pub rhs: f64,
    pub holds: bool,
    /// `rhs - lhs`; zero in the equality case.
    pub slack: f64,
}

pub fn check_repr_bound(m: &MixtureSpec, q: &InternalMixture) -> Result<ReprBoundCheck> {
    let lhs = repr_bias(m, q)?.powi(2);
    let rhs = v_hetero(m) * chi2_divergence(q, m)?;
    Ok(ReprBoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + BOUND_TOL,
        slack: rhs - lhs,
    })
}

/// Internal mixture `q_c = w_c + lambda * w_c (f*_c - f*)`, the family that
/// attains the representation bound with equality. Fails if `lambda` pushes
/// a weight below zero.
pub fn equality_mixture(m: &MixtureSpec, lambda: f64) -> Result<InternalMixture> {
    let f = target_mean(m);
    let weights: Vec<f64> = m
        .communities
        .iter()
        .map(|c| c.weight + lambda * c.weight * (c.mean - f))
        .collect();
    if weights.iter().any(|q| *q < 0.0) {
        return Err(Error::param(format!("lambda {lambda} produces negative weights")));
    }
    // The perturbation sums to zero analytically; absorb rounding so the
    // result passes the weight-sum check.
    let total: f64 = weights.iter().sum();
    InternalMixture::new(weights.into_iter().map(|q| q / total).collect())
}

/// Draws `n` direct labels: a community with probability `w_c`, then a label
/// according to the within-community model.
pub fn sample_direct_labels<R: Rng + ?Sized>(m: &MixtureSpec, n: usize, rng: &mut R) -> Result<Vec<u8>> {
    if m.within == WithinCommunityModel::Deterministic {
        if let Some(c) = m.communities.iter().find(|c| c.mean != 0.0 && c.mean != 1.0) {
            return Err(Error::param(format!(
                "deterministic within-community model needs binary community means, got {}",
                c.mean
            )));
        }
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let picker = WeightedIndex::new(m.weights())
        .map_err(|e| Error::param(format!("mixture weights: {e}")))?;
    let labels = (0..n)
        .map(|_| {
            let c = &m.communities[picker.sample(rng)];
            match m.within {
                WithinCommunityModel::Deterministic => c.mean as u8,
                WithinCommunityModel::Bernoulli => u8::from(rng.random::<f64>() < c.mean),
            }
        })
        .collect();
    Ok(labels)
}
