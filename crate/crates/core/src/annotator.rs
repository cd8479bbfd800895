//! Generative annotator model.
//!
//! One prediction is `f* + b_W + b_C + eps`. The two bias components have
//! means `mu_w`, `mu_c`, variances `var_w`, `var_c` and covariance `cov_wc`;
//! `eps` is zero-mean noise independent of both. Within a panel the total
//! residuals are exchangeable with common pairwise correlation `gamma`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack on the Cauchy-Schwarz check for `cov_wc`.
const COV_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct AnnotatorSpec {
    mu_w: f64,
    mu_c: f64,
    var_w: f64,
    var_c: f64,
    var_eps: f64,
    cov_wc: f64,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    #[serde(default)]
    mu_w: f64,
    #[serde(default)]
    mu_c: f64,
    #[serde(default)]
    var_w: f64,
    #[serde(default)]
    var_c: f64,
    #[serde(default)]
    var_eps: f64,
    #[serde(default)]
    cov_wc: f64,
    #[serde(default)]
    gamma: f64,
}

impl TryFrom<RawSpec> for AnnotatorSpec {
    type Error = Error;

    fn try_from(r: RawSpec) -> Result<Self> {
        AnnotatorSpec::new(r.mu_w, r.mu_c, r.var_w, r.var_c, r.var_eps, r.cov_wc, r.gamma)
    }
}

impl From<AnnotatorSpec> for RawSpec {
    fn from(a: AnnotatorSpec) -> Self {
        RawSpec {
            mu_w: a.mu_w,
            mu_c: a.mu_c,
            var_w: a.var_w,
            var_c: a.var_c,
            var_eps: a.var_eps,
            cov_wc: a.cov_wc,
            gamma: a.gamma,
        }
    }
}

impl AnnotatorSpec {
    pub fn new(
        mu_w: f64,
        mu_c: f64,
        var_w: f64,
        var_c: f64,
        var_eps: f64,
        cov_wc: f64,
        gamma: f64,
    ) -> Result<Self> {
        let all = [mu_w, mu_c, var_w, var_c, var_eps, cov_wc, gamma];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("annotator parameters must be finite"));
        }
        if var_w < 0.0 || var_c < 0.0 || var_eps < 0.0 {
            return Err(Error::param("variances must be non-negative"));
        }
        if cov_wc.abs() > (var_w * var_c).sqrt() + COV_TOL {
            return Err(Error::param(format!(
                "|cov_wc| = {} exceeds sqrt(var_w * var_c) = {}",
                cov_wc.abs(),
                (var_w * var_c).sqrt()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::param(format!("gamma {gamma} outside [0, 1)")));
        }
        let spec = Self {
            mu_w,
            mu_c,
            var_w,
            var_c,
            var_eps,
            cov_wc,
            gamma,
        };
        if spec.total_variance() < 0.0 {
            return Err(Error::param("total residual variance is negative"));
        }
        Ok(spec)
    }

    /// Spec with a single (unsplit) bias and all variance in the noise term.
    pub fn simple(mu: f64, v: f64, gamma: f64) -> Result<Self> {
        Self::new(mu, 0.0, 0.0, 0.0, v, 0.0, gamma)
    }

    pub fn mu_w(&self) -> f64 {
        self.mu_w
    }
    pub fn mu_c(&self) -> f64 {
        self.mu_c
    }
    pub fn var_w(&self) -> f64 {
        self.var_w
    }
    pub fn var_c(&self) -> f64 {
        self.var_c
    }
    pub fn var_eps(&self) -> f64 {
        self.var_eps
    }
    pub fn cov_wc(&self) -> f64 {
        self.cov_wc
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_mu_w(self, mu_w: f64) -> Self {
        Self { mu_w, ..self }
    }

    /// Same spec with both mean biases negated.
    pub fn mirrored(self) -> Self {
        Self {
            mu_w: -self.mu_w,
            mu_c: -self.mu_c,
            ..self
        }
    }

    /// `mu = mu_w + mu_c`.
    pub fn total_bias(&self) -> f64 {
        self.mu_w + self.mu_c
    }

    /// Per-annotator residual variance `var_w + var_c + 2 cov_wc + var_eps`.
    pub fn total_variance(&self) -> f64 {
        self.var_w + self.var_c + 2.0 * self.cov_wc + self.var_eps
    }
}

/// Predictions of `k` annotators for one (item, group).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    predictions: Vec<f64>,
}

impl Panel {
    pub fn new(predictions: Vec<f64>) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::param("panel budget k must be at least 1"));
        }
        Ok(Self { predictions })
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn k(&self) -> usize {
        self.predictions.len()
    }

    /// Arithmetic mean of the panel.
    pub fn aggregate(&self) -> f64 {
        self.predictions.iter().sum::<f64>() / self.predictions.len() as f64
    }
}

/// Mean of a panel's predictions.
pub fn aggregate(p: &Panel) -> f64 {
    p.aggregate()
}

/// Samples one panel. Residuals are
/// `sqrt(V) * (sqrt(gamma) * z0 + sqrt(1 - gamma) * z_i)` with a shared
/// `z0` per panel, giving variance `V` and pairwise correlation `gamma`.
/// With `clip` the predictions are clamped to [0, 1] and the moments above
/// only hold approximately.
pub fn sample_panel<R: Rng + ?Sized>(
    a: &AnnotatorSpec,
    f_star: f64,
    k: usize,
    rng: &mut R,
    clip: bool,
) -> Result<Panel> {
    if k == 0 {
        return Err(Error::param("panel budget k must be at least 1"));
    }
    let center = f_star + a.total_bias();
    let sd = a.total_variance().sqrt();
    let shared = a.gamma.sqrt();
    let own = (1.0 - a.gamma).sqrt();
    let z0: f64 = rng.sample(StandardNormal);
    let predictions = (0..k)
        .map(|_| {
            let zi: f64 = rng.sample(StandardNormal);
            let p = center + sd * (shared * z0 + own * zi);
            if clip {
                p.clamp(0.0, 1.0)
            } else {
                p
            }
        })
        .collect();
    Ok(Panel { predictions })
}

/// One annotator's draw split into its components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentDraw {
    pub b_w: f64,
    pub b_c: f64,
    pub eps: f64,
}

impl ComponentDraw {
    pub fn prediction(&self, f_star: f64) -> f64 {
        f_star + self.b_w + self.b_c + self.eps
    }
}

/// Samples a panel component-wise: `(b_W, b_C)` jointly Gaussian with the
/// spec's covariance, `eps` independent. Each component vector is
/// `sqrt(gamma) * shared + sqrt(1 - gamma) * own`, so the summed residuals
/// have the same exchangeable structure as [`sample_panel`].
pub fn sample_panel_components<R: Rng + ?Sized>(
    a: &AnnotatorSpec,
    k: usize,
    rng: &mut R,
) -> Result<Vec<ComponentDraw>> {
    if k == 0 {
        return Err(Error::param("panel budget k must be at least 1"));
    }
    let sd_w = a.var_w.sqrt();
    let sd_c = a.var_c.sqrt();
    let rho = if sd_w > 0.0 && sd_c > 0.0 {
        (a.cov_wc / (sd_w * sd_c)).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let rho_perp = (1.0 - rho * rho).sqrt();
    let sd_eps = a.var_eps.sqrt();
    let draw = |rng: &mut R| {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let z3: f64 = rng.sample(StandardNormal);
        [sd_w * z1, sd_c * (rho * z1 + rho_perp * z2), sd_eps * z3]
    };
    let shared = draw(rng);
    let (s, o) = (a.gamma.sqrt(), (1.0 - a.gamma).sqrt());
    Ok((0..k)
        .map(|_| {
            let own = draw(rng);
            ComponentDraw {
                b_w: a.mu_w + s * shared[0] + o * own[0],
                b_c: a.mu_c + s * shared[1] + o * own[1],
                eps: s * shared[2] + o * own[2],
            }
        })
        .collect())
}
