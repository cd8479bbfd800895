//! Perspective-taking as estimation.
//!
//! Human annotators and LLMs that estimate how a target group would judge an
//! item are treated as statistical estimators of the group mean `f*(x, g)`.
//! Their error splits into squared bias, a correlation floor that survives
//! aggregation, and variance that shrinks with the annotation budget.
//!
//! * [`data`]: CSV ingestion of annotations and predictions, ground truth.
//! * [`mixture`]: latent subcommunity mixtures and representation bias.
//! * [`annotator`]: generative annotator model and panel sampling.
//! * [`analytics`]: closed-form MSE, floors, coupling, decision rules.
//! * [`bootstrap`]: bootstrap metrics over real pools, estimator mixing, moment fits.
//! * [`dpt`]: differential perspective-taking diagnostics.
//! * [`scenarios`]: named synthetic experiments and the theory verification ledger.
//! * [`cli`]: the command implementations behind the `ptlens` binary.

pub mod analytics;
pub mod annotator;
pub mod bootstrap;
pub mod cli;
pub mod data;
pub mod dpt;
pub mod error;
pub mod mixture;
pub mod rng;
pub mod scenarios;

pub use error::{Error, Result};
