//! Command implementations behind the `ptlens` binary.
//!
//! Every command writes its outputs plus a `manifest.json` into `--out`.
//! The manifest carries a hash over the resolved configuration and the
//! contents of every input file, so equal manifests mean equal outputs.
//!
//! Exit codes: 0 on success, 2 on any validation or input error, 3 when the
//! theory ledger has a failing row.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{self, Budget, DecisionReport};
use crate::annotator::AnnotatorSpec;
use crate::bootstrap::{self, BootstrapConfig, FittedSpec, ResampleMode};
use crate::data::{self, AnnotationTable, Binarizer, GroundTruthTable, PredictionPools, PredictionTable};
use crate::dpt::{self, DptReport};
use crate::error::{Error, Result};
use crate::scenarios::{self, InjectedFault, Scenario, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_LEDGER_FAILED: i32 = 3;

/// Largest budget accepted on the command line.
pub const MAX_K: usize = 1_000_000;

#[derive(Debug, Parser)]
#[command(name = "ptlens", version, about = "Perspective-taking estimators: bias, variance and budget decisions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bootstrap MSE/bias/variance curves for human and LLM estimators.
    Analyze(AnalyzeArgs),
    /// LLM-versus-human decision from explicit or fitted specs.
    Decide(DecideArgs),
    /// Differential perspective-taking diagnostics per group pair.
    Dpt(DptArgs),
    /// Run a synthetic scenario (preset or JSON file).
    Simulate(SimulateArgs),
    /// Randomized verification of the model's identities and bounds.
    Verify(VerifyArgs),
    /// Build a mixed estimator from existing prediction pools.
    Mix(MixArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct Inputs {
    /// Human annotation CSV (direct and perspective rows).
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Prediction CSVs; may be repeated.
    #[arg(long, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
    /// Keep only these groups.
    #[arg(long = "group", num_args = 1..)]
    pub groups: Vec<String>,
    /// Keep only these estimators.
    #[arg(long = "estimator", num_args = 1..)]
    pub estimators: Vec<String>,
    /// Estimator id given to perspective annotations.
    #[arg(long, default_value = "human_pt")]
    pub perspective_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Auto,
    MonteCarlo,
    Exact,
}

impl From<ModeArg> for ResampleMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Auto => ResampleMode::Auto,
            ModeArg::MonteCarlo => ResampleMode::MonteCarlo,
            ModeArg::Exact => ResampleMode::Exact,
        }
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = bootstrap::DEFAULT_RESAMPLES)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    pub k_min: usize,
    #[arg(long, default_value_t = bootstrap::DEFAULT_K_MAX)]
    pub k_max: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    pub mode: ModeArg,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct DecideArgs {
    #[command(flatten)]
    pub common: Common,
    /// JSON decision config with explicit specs.
    #[arg(long, conflicts_with_all = ["annotations", "predictions"])]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub inputs: Inputs,
    /// LLM estimator id when fitting from tables.
    #[arg(long)]
    pub llm: Option<String>,
    /// Human estimator id when fitting from tables.
    #[arg(long)]
    pub human: Option<String>,
    /// LLM budget (number or `inf`) when fitting from tables.
    #[arg(long, default_value = "1")]
    pub llm_budget: String,
    /// Human budget (number or `inf`) when fitting from tables.
    #[arg(long, default_value = "1")]
    pub human_budget: String,
    /// Largest budget on the emitted curves.
    #[arg(long, default_value_t = 20)]
    pub k_max: usize,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct DptArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = dpt::DEFAULT_RESAMPLES)]
    pub bootstrap: usize,
    /// Group pairs as `g1:g2`; default is every pair of observed groups.
    #[arg(long = "pair", num_args = 1..)]
    pub pairs: Vec<String>,
    /// Differentials with |delta| at or below this count as zero.
    #[arg(long, default_value_t = 0.0)]
    pub zero_tol: f64,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Shipped preset name.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    pub preset: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the scenario's replication count.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Also write one synthetic pool of this size per item and estimator.
    #[arg(long)]
    pub synthesize: Option<usize>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    /// Panels per Monte Carlo check.
    #[arg(long, default_value_t = 20_000)]
    pub panels: usize,
    /// Perturb the floor formula by this amount (harness sensitivity check).
    #[arg(long)]
    pub inject_floor_offset: Option<f64>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct MixArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, num_args = 1.., required = true)]
    pub predictions: Vec<PathBuf>,
    /// Member estimator ids.
    #[arg(long, num_args = 1.., required = true, value_delimiter = ',')]
    pub members: Vec<String>,
    /// Member weights (default uniform).
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub weights: Vec<f64>,
    /// Id of the mixed estimator.
    #[arg(long, default_value = "mixed")]
    pub name: String,
}

/// What a successful command produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub manifest: Manifest,
    /// False only for a verify run with failing rows.
    pub passed: bool,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Messages go to stdout/stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(outcome) if outcome.passed => EXIT_OK,
        Ok(_) => EXIT_LEDGER_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_VALIDATION
        }
    }
}

pub fn run(command: &Command) -> Result<Outcome> {
    match command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Decide(a) => cmd_decide(a),
        Command::Dpt(a) => cmd_dpt(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Mix(a) => cmd_mix(a),
    }
}

fn require_seed(seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| Error::param("--seed is required for commands that draw random numbers"))
}

/// Collects written files and finishes with the manifest.
struct Run {
    dir: PathBuf,
    command: &'static str,
    outputs: Vec<String>,
}

impl Run {
    fn start(command: &'static str, common: &Common) -> Result<Self> {
        fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
        Ok(Self {
            dir: common.out.clone(),
            command,
            outputs: Vec::new(),
        })
    }

    fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        use std::io::Write;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(self.dir.join(name), e))
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish<C: Serialize>(mut self, config: &C, seed: Option<u64>, inputs: &[&Path], passed: bool) -> Result<Outcome> {
        let mut config = serde_json::to_value(config)?;
        // where outputs go does not change them
        if let Some(common) = config.get_mut("common").and_then(|c| c.as_object_mut()) {
            common.remove("out");
        }
        let mut digests = Vec::new();
        for p in inputs {
            let bytes = fs::read(p).map_err(|e| Error::io(*p, e))?;
            digests.push(InputDigest {
                path: p.to_path_buf(),
                sha256: hex(&Sha256::digest(&bytes)),
            });
        }
        let mut hasher = Sha256::new();
        hasher.update(self.command.as_bytes());
        hasher.update(env!("CARGO_PKG_VERSION").as_bytes());
        hasher.update(serde_json::to_vec(&config)?);
        for d in &digests {
            hasher.update(d.sha256.as_bytes());
        }
        self.outputs.push("manifest.json".into());
        let manifest = Manifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: hex(&hasher.finalize()),
            config,
            inputs: digests,
            outputs: self.outputs.clone(),
        };
        self.outputs.pop();
        self.json("manifest.json", &manifest)?;
        Ok(Outcome { manifest, passed })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn input_paths(inputs: &Inputs) -> Vec<&Path> {
    inputs
        .annotations
        .iter()
        .chain(&inputs.predictions)
        .map(PathBuf::as_path)
        .collect()
}

/// Loaded tables with filters applied.
struct Loaded {
    pools: PredictionPools,
    truth: GroundTruthTable,
    /// Pools dropped because their (item, group) has no ground truth.
    unmatched: usize,
}

fn load_inputs(inputs: &Inputs) -> Result<Loaded> {
    let annotations = inputs
        .annotations
        .as_ref()
        .ok_or_else(|| Error::param("--annotations is required"))?;
    let table = AnnotationTable::load(annotations)?;
    let truth = data::derive_ground_truth(&table, &Binarizer::default())?;
    let mut pools = PredictionPools::from_perspective(&table, &inputs.perspective_id);
    for p in &inputs.predictions {
        pools.merge(PredictionPools::from_predictions(&PredictionTable::load(p)?))?;
    }
    let pools = pools.filtered(&inputs.groups, &inputs.estimators);
    let total = pools.len();
    let mut joined = PredictionPools::default();
    for (key, pool) in pools.iter() {
        if truth.get(&key.item_group()).is_some() {
            joined.insert(key.clone(), pool.to_vec())?;
        }
    }
    if joined.is_empty() {
        return Err(Error::EmptyJoin(format!(
            "0 of {total} prediction pools after filters have ground truth ({} (item, group) pairs with direct annotations)",
            truth.len()
        )));
    }
    Ok(Loaded {
        unmatched: total - joined.len(),
        pools: joined,
        truth,
    })
}

fn k_range(k_min: usize, k_max: usize) -> Result<Vec<usize>> {
    if k_min < 1 || k_max > MAX_K || k_min > k_max {
        return Err(Error::param(format!("budget range {k_min}..={k_max} must lie within 1..={MAX_K}")));
    }
    Ok((k_min..=k_max).collect())
}

#[derive(Serialize)]
struct AnalyzeSummary<'a> {
    pools: usize,
    unmatched_pools: usize,
    groups: BTreeSet<String>,
    estimators: BTreeSet<String>,
    flags: &'a [bootstrap::MonotonicityFlag],
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Outcome> {
    let seed = require_seed(args.seed)?;
    let ks = k_range(args.k_min, args.k_max)?;
    let loaded = load_inputs(&args.inputs)?;
    let cfg = BootstrapConfig::new(args.bootstrap, seed).with_mode(args.mode.into());
    let curve = bootstrap::budget_curve(&loaded.pools, &loaded.truth, &ks, &cfg)?;

    let mut run = Run::start("analyze", &args.common)?;
    match args.common.format {
        Format::Json => run.json("metrics.json", &curve)?,
        Format::Csv => {
            curve.report.write_csv(run.file("metrics_items.csv")?)?;
            write_aggregates_csv(&curve.report.aggregates, run.file("metrics_aggregates.csv")?)?;
        }
    }
    run.json(
        "summary.json",
        &AnalyzeSummary {
            pools: loaded.pools.len(),
            unmatched_pools: loaded.unmatched,
            groups: loaded.pools.groups(),
            estimators: loaded.pools.estimators(),
            flags: &curve.flags,
        },
    )?;
    run.finish(args, Some(seed), &input_paths(&args.inputs), true)
}

fn write_aggregates_csv<W: std::io::Write>(aggs: &[bootstrap::AggregateMetrics], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "group_id",
        "estimator_id",
        "k",
        "n_items",
        "mean_mse",
        "mean_signed_bias",
        "mean_sq_bias",
        "mean_variance",
        "mse_se",
    ])?;
    for a in aggs {
        wtr.write_record([
            a.group.clone(),
            a.estimator.clone(),
            a.k.to_string(),
            a.n_items.to_string(),
            format!("{:.9}", a.mean_mse),
            format!("{:.9}", a.mean_signed_bias),
            format!("{:.9}", a.mean_sq_bias),
            format!("{:.9}", a.mean_variance),
            format!("{:.9}", a.mse_se),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<aggregates>", e))?;
    Ok(())
}

/// Explicit-spec input for `decide`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionConfig {
    pub llm: AnnotatorSpec,
    pub human: AnnotatorSpec,
    #[serde(default = "one")]
    pub llm_budget: Budget,
    #[serde(default = "one")]
    pub human_budget: Budget,
    /// Variance of a single direct human label, for the one-label comparison.
    #[serde(default)]
    pub population_spread: Option<f64>,
}

fn one() -> Budget {
    Budget::Finite(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub llm_mse: f64,
    pub human_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// Set when the specs were fitted from tables.
    pub group: Option<String>,
    pub llm: AnnotatorSpec,
    pub human: AnnotatorSpec,
    pub decision: DecisionReport,
    pub asymptotic: DecisionReport,
    /// Smallest human budget beating the LLM at its budget (finite LLM budgets only).
    pub crossover: Option<usize>,
    pub single_direct: Option<DecisionReport>,
    pub curves: Vec<CurvePoint>,
    pub fitted: Vec<FittedSpec>,
}

fn parse_budget(raw: &str) -> Result<Budget> {
    serde_json::from_str(raw)
        .or_else(|_| serde_json::from_value(serde_json::Value::String(raw.to_string())))
        .map_err(|_| Error::param(format!("budget `{raw}` is neither a positive integer nor `inf`")))
}

pub fn decide_from_config(cfg: &DecisionConfig, k_max: usize) -> Result<Decision> {
    decide_specs(None, cfg, k_max, Vec::new())
}

fn decide_specs(group: Option<String>, cfg: &DecisionConfig, k_max: usize, fitted: Vec<FittedSpec>) -> Result<Decision> {
    if k_max < 1 || k_max > MAX_K {
        return Err(Error::param(format!("curve budget {k_max} must lie within 1..={MAX_K}")));
    }
    let decision = analytics::superiority(&cfg.llm, &cfg.human, cfg.llm_budget, cfg.human_budget)?;
    let asymptotic = analytics::superiority(&cfg.llm, &cfg.human, Budget::Infinite, Budget::Infinite)?;
    let crossover = match cfg.llm_budget {
        Budget::Finite(_) => analytics::budget_crossover(&cfg.llm, &cfg.human, cfg.llm_budget)?,
        Budget::Infinite => None,
    };
    let single_direct = cfg
        .population_spread
        .map(|v| analytics::single_direct_vs_llm(v, &cfg.llm))
        .transpose()?;
    let curves = (1..=k_max)
        .map(|k| {
            Ok(CurvePoint {
                k,
                llm_mse: analytics::analytic_mse(&cfg.llm, Budget::Finite(k))?.total,
                human_mse: analytics::analytic_mse(&cfg.human, Budget::Finite(k))?.total,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Decision {
        group,
        llm: cfg.llm,
        human: cfg.human,
        decision,
        asymptotic,
        crossover,
        single_direct,
        curves,
        fitted,
    })
}

pub fn cmd_decide(args: &DecideArgs) -> Result<Outcome> {
    let decisions = if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: DecisionConfig = serde_json::from_str(&text)?;
        vec![decide_from_config(&cfg, args.k_max)?]
    } else {
        let llm = args.llm.as_deref().ok_or_else(|| Error::param("--llm is required without --config"))?;
        let human = args.human.as_deref().ok_or_else(|| Error::param("--human is required without --config"))?;
        let loaded = load_inputs(&args.inputs)?;
        let fits = bootstrap::fit_spec(&loaded.pools, &loaded.truth)?;
        let mut by_group: BTreeMap<&str, (Option<&FittedSpec>, Option<&FittedSpec>)> = BTreeMap::new();
        for f in &fits {
            let slot = by_group.entry(&f.group).or_default();
            if f.estimator == llm {
                slot.0 = Some(f);
            } else if f.estimator == human {
                slot.1 = Some(f);
            }
        }
        let mut out = Vec::new();
        for (group, pair) in by_group {
            let (Some(l), Some(h)) = pair else { continue };
            let cfg = DecisionConfig {
                llm: l.to_annotator_spec()?,
                human: h.to_annotator_spec()?,
                llm_budget: parse_budget(&args.llm_budget)?,
                human_budget: parse_budget(&args.human_budget)?,
                population_spread: None,
            };
            out.push(decide_specs(Some(group.to_string()), &cfg, args.k_max, vec![l.clone(), h.clone()])?);
        }
        if out.is_empty() {
            return Err(Error::EmptyJoin(format!("no group has fitted pools for both `{llm}` and `{human}`")));
        }
        out
    };

    let mut run = Run::start("decide", &args.common)?;
    match args.common.format {
        Format::Json => run.json("decision.json", &decisions)?,
        Format::Csv => {
            let mut wtr = csv::Writer::from_writer(run.file("decision_curves.csv")?);
            wtr.write_record(["group_id", "k", "llm_mse", "human_mse"])?;
            for d in &decisions {
                for c in &d.curves {
                    wtr.write_record([
                        d.group.clone().unwrap_or_default(),
                        c.k.to_string(),
                        format!("{:.9}", c.llm_mse),
                        format!("{:.9}", c.human_mse),
                    ])?;
                }
            }
            wtr.flush().map_err(|e| Error::io("decision_curves.csv", e))?;
            run.json("decision.json", &decisions)?;
        }
    }
    let mut inputs = input_paths(&args.inputs);
    inputs.extend(args.config.as_deref());
    run.finish(args, None, &inputs, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DptEntry {
    pub estimator: String,
    pub g1: String,
    pub g2: String,
    pub report: Option<DptReport>,
    /// Why this pair produced no report; other pairs are unaffected.
    pub error: Option<String>,
}

fn parse_pairs(raw: &[String], groups: &BTreeSet<String>) -> Result<Vec<(String, String)>> {
    if raw.is_empty() {
        let g: Vec<&String> = groups.iter().collect();
        let mut out = Vec::new();
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                out.push((g[i].clone(), g[j].clone()));
            }
        }
        return Ok(out);
    }
    raw.iter()
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| Error::param(format!("group pair `{p}` must look like g1:g2")))?;
            if a.is_empty() || b.is_empty() || a == b {
                return Err(Error::param(format!("group pair `{p}` needs two distinct groups")));
            }
            Ok((a.to_string(), b.to_string()))
        })
        .collect()
}

pub fn cmd_dpt(args: &DptArgs) -> Result<Outcome> {
    let seed = require_seed(args.seed)?;
    if args.bootstrap == 0 {
        return Err(Error::param("--bootstrap must be at least 1"));
    }
    let loaded = load_inputs(&args.inputs)?;
    let pairs = parse_pairs(&args.pairs, &loaded.pools.groups())?;
    if pairs.is_empty() {
        return Err(Error::Insufficient("differentials need at least two groups".into()));
    }
    let mut entries = Vec::new();
    let mut series_out = Vec::new();
    for est in loaded.pools.estimators() {
        let means = loaded.pools.means(&est);
        for (g1, g2) in &pairs {
            let result = dpt::differentials(&loaded.truth, &means, g1, g2).and_then(|s| {
                let pair_seed = crate::rng::substream(seed, &["dpt", &est, g1, g2]);
                use rand::RngCore;
                let mut r = pair_seed;
                let report = dpt::dpt_report(&s, args.bootstrap, r.next_u64(), args.zero_tol)?;
                Ok((s, report))
            });
            let (report, error) = match result {
                Ok((s, report)) => {
                    series_out.push((est.clone(), s));
                    (Some(report), None)
                }
                Err(e) => (None, Some(e.to_string())),
            };
            entries.push(DptEntry {
                estimator: est.clone(),
                g1: g1.clone(),
                g2: g2.clone(),
                report,
                error,
            });
        }
    }

    let mut run = Run::start("dpt", &args.common)?;
    match args.common.format {
        Format::Json => run.json("dpt.json", &entries)?,
        Format::Csv => {
            let mut wtr = csv::Writer::from_writer(run.file("dpt.csv")?);
            wtr.write_record([
                "estimator_id",
                "g1",
                "g2",
                "n_items",
                "rho",
                "ci_low",
                "ci_high",
                "directional_accuracy",
                "sigma_delta_star",
                "error",
            ])?;
            for e in &entries {
                let num = |f: fn(&DptReport) -> f64| e.report.as_ref().map(|r| format!("{:.9}", f(r))).unwrap_or_default();
                wtr.write_record([
                    e.estimator.clone(),
                    e.g1.clone(),
                    e.g2.clone(),
                    e.report.as_ref().map(|r| r.n_items.to_string()).unwrap_or_default(),
                    num(|r| r.rho),
                    num(|r| r.ci_low),
                    num(|r| r.ci_high),
                    num(|r| r.directional_accuracy),
                    num(|r| r.sigma_delta_star),
                    e.error.clone().unwrap_or_default(),
                ])?;
            }
            wtr.flush().map_err(|e| Error::io("dpt.csv", e))?;
        }
    }
    for (est, s) in &series_out {
        let name = format!("scatter_{}_{}_{}.csv", sanitize(est), sanitize(&s.g1), sanitize(&s.g2));
        s.write_csv(run.file(&name)?)?;
    }
    run.finish(args, Some(seed), &input_paths(&args.inputs), true)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Outcome> {
    let seed = require_seed(args.seed)?;
    let mut scenario = match (&args.preset, &args.scenario) {
        (Some(name), None) => scenarios::preset(name)?,
        (None, Some(path)) => Scenario::load(path)?,
        _ => return Err(Error::param("give exactly one of --preset or --scenario")),
    };
    scenario.seed = seed;
    if let Some(r) = args.replications {
        scenario.replications = r;
    }
    scenario.validate()?;
    let report = scenarios::run_scenario(&scenario)?;

    let mut run = Run::start("simulate", &args.common)?;
    run.json("scenario.json", &scenario)?;
    match args.common.format {
        Format::Json => run.json("scenario_report.json", &report)?,
        Format::Csv => {
            report.write_curves_csv(run.file("scenario_curves.csv")?)?;
            report.empirical.write_csv(run.file("scenario_items.csv")?)?;
        }
    }
    if let Some(n) = args.synthesize {
        let (pools, truth) = scenario.synthesize(n, seed)?;
        let mut records = Vec::new();
        for (key, pool) in pools.iter() {
            for (i, &v) in pool.iter().enumerate() {
                records.push(data::PredictionRecord {
                    item_id: key.item.clone(),
                    group_id: key.group.clone(),
                    estimator_id: key.estimator.clone(),
                    sample_idx: i as u64,
                    value: v,
                });
            }
        }
        PredictionTable::new(records)?.write(run.file("synthetic_predictions.csv")?)?;
        let mut wtr = csv::Writer::from_writer(run.file("synthetic_truth.csv")?);
        wtr.write_record(["item_id", "group_id", "f_star"])?;
        for (k, t) in truth.iter() {
            wtr.write_record([k.item.clone(), k.group.clone(), format!("{:.9}", t.f_star)])?;
        }
        wtr.flush().map_err(|e| Error::io("synthetic_truth.csv", e))?;
    }
    let inputs: Vec<&Path> = args.scenario.iter().map(PathBuf::as_path).collect();
    run.finish(args, Some(seed), &inputs, true)
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<Outcome> {
    let seed = require_seed(args.seed)?;
    let mut opts = VerifyOptions::new(seed, args.trials);
    opts.panels = args.panels;
    if let Some(d) = args.inject_floor_offset {
        opts = opts.with_fault(InjectedFault::FloorOffset(d));
    }
    let ledger = scenarios::verify_theory(&opts)?;
    let text = ledger.to_text();
    print!("{text}");
    let mut run = Run::start("verify", &args.common)?;
    run.json("ledger.json", &ledger)?;
    run.text("ledger.txt", &text)?;
    run.finish(args, Some(seed), &[], ledger.passed)
}

#[derive(Serialize)]
struct MixSummary<'a> {
    name: &'a str,
    members: &'a [String],
    weights: &'a [f64],
    records: usize,
    truncations: &'a [bootstrap::Truncation],
    skipped: &'a [data::ItemGroup],
}

pub fn cmd_mix(args: &MixArgs) -> Result<Outcome> {
    let mut records = Vec::new();
    for p in &args.predictions {
        records.extend(PredictionTable::load(p)?.records().iter().cloned());
    }
    let table = PredictionTable::new(records)?;
    let weights = (!args.weights.is_empty()).then_some(args.weights.as_slice());
    let outcome = bootstrap::mix_estimators(&table, &args.members, weights, &args.name)?;
    let mut all = table.records().to_vec();
    all.extend(outcome.table.records().iter().cloned());
    let combined = PredictionTable::new(all)?;

    let mut run = Run::start("mix", &args.common)?;
    combined.write(run.file("predictions_mixed.csv")?)?;
    let uniform;
    let shown = match weights {
        Some(w) => w,
        None => {
            uniform = vec![1.0 / args.members.len() as f64; args.members.len()];
            &uniform
        }
    };
    run.json(
        "mix_summary.json",
        &MixSummary {
            name: &args.name,
            members: &args.members,
            weights: shown,
            records: outcome.table.len(),
            truncations: &outcome.truncations,
            skipped: &outcome.skipped,
        },
    )?;
    let inputs: Vec<&Path> = args.predictions.iter().map(PathBuf::as_path).collect();
    run.finish(args, None, &inputs, true)
}
