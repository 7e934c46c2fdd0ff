//! Sweep harness for the capacity, comparison, scaling and sensitivity
//! experiments plus the learning-curve and dynamics audits.
//!
//! A run is a grid of trained models (N × load × rule × c × λ) times master
//! seeds. Each (model, seed) task generates its patterns from
//! `derive_seed(master, "patterns", 0)`, trains once, then runs
//! `trials_per_pattern × P` recalls for every similarity on the grid. Trial
//! `r` of pattern `ν` corrupts with `derive_seed(master, "trial", ν·T + r)`,
//! so output depends only on the config, never on worker scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{aggregate, MetricsSummary, Stat, TrialContext, TrialRecord};
use crate::dynamics::{DynParams, Network, Outcome};
use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::learning::{train_klr, train_rule, LearnConfig, LearningCurve, Model, Rule};
use crate::patterns::{corrupt, generate_patterns, PatternSet};
use crate::rng::{derive_seed, TAG_PATTERNS, TAG_TRIAL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Landscape,
    Compare,
    Scaling,
    Sensitivity,
    GammaSearch,
    LearningCurve,
    DynamicsAudit,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Landscape,
        ExperimentKind::Compare,
        ExperimentKind::Scaling,
        ExperimentKind::Sensitivity,
        ExperimentKind::GammaSearch,
        ExperimentKind::LearningCurve,
        ExperimentKind::DynamicsAudit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Landscape => "landscape",
            ExperimentKind::Compare => "compare",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Sensitivity => "sensitivity",
            ExperimentKind::GammaSearch => "gamma-search",
            ExperimentKind::LearningCurve => "learning-curve",
            ExperimentKind::DynamicsAudit => "dynamics-audit",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown experiment kind `{s}`")))
    }
}

/// Kernel scaling factor used when none is configured for a network size:
/// c = 2 up to N = 250, c = 5 above.
pub fn default_scaling(n: usize) -> f64 {
    if n <= 250 {
        2.0
    } else {
        5.0
    }
}

fn default_rules() -> Vec<Rule> {
    vec![Rule::Klr]
}
fn default_c() -> Vec<f64> {
    vec![2.0]
}
fn default_lambdas() -> Vec<f64> {
    vec![0.01]
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn default_trials() -> usize {
    5
}
fn default_max_steps() -> usize {
    30
}
fn default_beta() -> f64 {
    0.1
}
fn default_m_updates() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Network sizes.
    pub n: Vec<usize>,
    /// Storage loads P/N; P = round(load·N).
    pub loads: Vec<f64>,
    /// Initial overlaps with the target pattern.
    pub similarities: Vec<f64>,
    #[serde(default = "default_rules")]
    pub rules: Vec<Rule>,
    /// Kernel scaling factors, γ = c/N.
    #[serde(default = "default_c")]
    pub c: Vec<f64>,
    /// One scaling factor per entry of `n`; replaces the `c` grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_by_n: Option<Vec<f64>>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_trials")]
    pub trials_per_pattern: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_m_updates")]
    pub m_updates: usize,
}

impl ExperimentConfig {
    /// Desk-scale defaults for each experiment kind.
    pub fn preset(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            kind,
            n: vec![100],
            loads: vec![],
            similarities: vec![],
            rules: default_rules(),
            c: default_c(),
            c_by_n: None,
            lambdas: default_lambdas(),
            seeds: default_seeds(),
            trials_per_pattern: default_trials(),
            max_steps: default_max_steps(),
            beta: default_beta(),
            m_updates: default_m_updates(),
        };
        match kind {
            ExperimentKind::Landscape | ExperimentKind::DynamicsAudit => ExperimentConfig {
                loads: vec![
                    0.05, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0,
                ],
                similarities: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
                ..base
            },
            ExperimentKind::Compare => ExperimentConfig {
                loads: vec![
                    0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0,
                ],
                similarities: vec![0.6],
                rules: vec![Rule::Klr, Rule::Krr],
                ..base
            },
            ExperimentKind::Scaling => ExperimentConfig {
                n: vec![100, 250],
                loads: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
                similarities: vec![0.8],
                c_by_n: Some(vec![2.0, 2.0]),
                ..base
            },
            ExperimentKind::Sensitivity => ExperimentConfig {
                loads: vec![1.5, 3.0],
                similarities: vec![0.8],
                c: vec![0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0],
                lambdas: vec![1e-4, 1e-3, 1e-2, 1e-1],
                ..base
            },
            ExperimentKind::GammaSearch => ExperimentConfig {
                loads: vec![1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
                similarities: vec![1.0],
                c: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0],
                ..base
            },
            ExperimentKind::LearningCurve => ExperimentConfig {
                loads: vec![4.0],
                similarities: vec![1.0],
                seeds: vec![1],
                ..base
            },
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn learn_config(&self, lambda: f64) -> LearnConfig {
        LearnConfig {
            beta: self.beta,
            m_updates: self.m_updates,
            lambda,
        }
    }

    pub fn dyn_params(&self) -> DynParams {
        DynParams {
            max_steps: self.max_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, empty) in [
            ("n", self.n.is_empty()),
            ("loads", self.loads.is_empty()),
            ("similarities", self.similarities.is_empty()),
            ("rules", self.rules.is_empty()),
            ("c", self.c.is_empty() && self.c_by_n.is_none()),
            ("lambdas", self.lambdas.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return bad(format!("grid `{name}` is empty"));
            }
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return bad("master seeds must be distinct".into());
        }
        if let Some(&n) = self.n.iter().find(|&&n| n < 2) {
            return bad(format!("network size {n} is below 2"));
        }
        for &load in &self.loads {
            if !(load > 0.0 && load.is_finite()) {
                return bad(format!("load {load} must be positive"));
            }
            for &n in &self.n {
                if pattern_count(n, load) == 0 {
                    return bad(format!("load {load} gives P = 0 at N = {n}"));
                }
            }
        }
        if let Some(s) = self.similarities.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return bad(format!("similarity {s} outside [0, 1]"));
        }
        if let Some(c) = self.c.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return bad(format!("scaling factor {c} must be positive"));
        }
        if let Some(cs) = &self.c_by_n {
            if cs.len() != self.n.len() {
                return bad(format!(
                    "c_by_n has {} entries for {} network sizes",
                    cs.len(),
                    self.n.len()
                ));
            }
            if let Some(c) = cs.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
                return bad(format!("scaling factor {c} must be positive"));
            }
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return bad(format!("lambda {l} must be >= 0"));
        }
        if self.rules.contains(&Rule::Krr) && self.lambdas.iter().any(|&l| l <= 0.0) {
            return bad("krr requires every lambda > 0".into());
        }
        if self.trials_per_pattern == 0 {
            return bad("trials_per_pattern must be >= 1".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be >= 1".into());
        }
        self.learn_config(0.0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        match self.kind {
            ExperimentKind::Landscape
            | ExperimentKind::DynamicsAudit
            | ExperimentKind::LearningCurve
                if self.rules != [Rule::Klr] =>
            {
                bad(format!("{} runs the klr rule only", self.kind))
            }
            ExperimentKind::Landscape if self.n.len() != 1 => {
                bad("landscape takes a single network size".into())
            }
            ExperimentKind::Compare => {
                let mut r = self.rules.clone();
                r.sort();
                if r != [Rule::Klr, Rule::Krr] {
                    return bad("compare runs exactly the klr and krr rules".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Trained-model grid in canonical order.
    pub fn model_specs(&self) -> Vec<ModelSpec> {
        let mut specs = Vec::new();
        for (ni, &n) in self.n.iter().enumerate() {
            let cs: Vec<f64> = match &self.c_by_n {
                Some(cs) => vec![cs[ni]],
                None => self.c.clone(),
            };
            for &load in &self.loads {
                for &rule in &self.rules {
                    let (cs, lambdas): (Vec<f64>, Vec<f64>) = match rule {
                        Rule::Hebbian => (vec![0.0], vec![0.0]),
                        Rule::Llr => (vec![0.0], self.lambdas.clone()),
                        Rule::Klr | Rule::Krr => (cs.clone(), self.lambdas.clone()),
                    };
                    for &c in &cs {
                        for &lambda in &lambdas {
                            specs.push(ModelSpec {
                                n,
                                p: pattern_count(n, load),
                                load,
                                rule,
                                c,
                                lambda,
                            });
                        }
                    }
                }
            }
        }
        specs
    }
}

pub fn pattern_count(n: usize, load: f64) -> usize {
    (load * n as f64).round() as usize
}

/// One trained-model configuration. Non-kernel rules carry `c = 0`, and the
/// Hebbian rule `lambda = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n: usize,
    pub p: usize,
    pub load: f64,
    pub rule: Rule,
    pub c: f64,
    pub lambda: f64,
}

impl ModelSpec {
    pub fn gamma(&self) -> f64 {
        if self.rule.is_kernel() {
            self.c / self.n as f64
        } else {
            0.0
        }
    }

    pub fn kernel_params(&self) -> Result<Option<KernelParams>> {
        if self.rule.is_kernel() {
            KernelParams::from_scaling(self.c, self.n).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{} N={} P/N={} c={} lambda={}",
            self.rule, self.n, self.load, self.c, self.lambda
        )
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    /// Re-check every fixed point and cycle after detection.
    pub verify_dynamics: bool,
}

/// Trials of one (model, similarity) pair across all master seeds.
#[derive(Clone, Debug)]
pub struct ConditionResult {
    pub spec: ModelSpec,
    pub similarity: f64,
    pub metrics: MetricsSummary,
    /// Training wall-clock seconds per master seed.
    pub train_seconds: Vec<f64>,
    /// Sorted by (seed, pattern, trial).
    pub records: Vec<TrialRecord>,
    /// Fixed points or cycles that failed re-verification.
    pub dynamics_violations: usize,
}

impl ConditionResult {
    /// Mean and sample standard deviation of the training time.
    pub fn train_seconds_stats(&self) -> (f64, f64) {
        mean_sd(&self.train_seconds)
    }
}

pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub conditions: Vec<ConditionResult>,
}

impl SweepResult {
    /// All trial records in canonical order.
    pub fn records(&self) -> Vec<TrialRecord> {
        let mut all: Vec<TrialRecord> = self
            .conditions
            .iter()
            .flat_map(|c| c.records.iter().cloned())
            .collect();
        sort_records(&mut all);
        all
    }

    pub fn dynamics_violations(&self) -> usize {
        self.conditions.iter().map(|c| c.dynamics_violations).sum()
    }

    pub fn find(&self, pred: impl Fn(&ConditionResult) -> bool) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| pred(c))
    }
}

/// Sort by (master_seed, load, similarity, pattern, trial), then by the
/// remaining condition fields.
pub fn sort_records(records: &mut [TrialRecord]) {
    records.sort_by(|a, b| {
        a.master_seed
            .cmp(&b.master_seed)
            .then(a.load.total_cmp(&b.load))
            .then(a.similarity.total_cmp(&b.similarity))
            .then(a.pattern_idx.cmp(&b.pattern_idx))
            .then(a.trial_idx.cmp(&b.trial_idx))
            .then(a.n.cmp(&b.n))
            .then(a.rule.cmp(&b.rule))
            .then(a.gamma.total_cmp(&b.gamma))
            .then(a.lambda.total_cmp(&b.lambda))
    });
}

pub(crate) fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()?)
}

/// Runs `trials_per_pattern × P` recalls from corrupted copies of every
/// stored pattern against one trained model.
pub fn run_trials(
    model: &Model,
    patterns: &PatternSet,
    ctx: &TrialContext,
    trials_per_pattern: usize,
    dyn_params: DynParams,
    verify: bool,
) -> Result<(Vec<TrialRecord>, usize)> {
    let net = Network::new(model);
    let theta = model.theta();
    let total = patterns.p() * trials_per_pattern;
    let results: Vec<(TrialRecord, bool)> = (0..total)
        .into_par_iter()
        .map(|g| {
            let (nu, r) = (g / trials_per_pattern, g % trials_per_pattern);
            let seed = derive_seed(ctx.master_seed, TAG_TRIAL, g as u64);
            let cue = corrupt(patterns.row(nu), ctx.similarity, seed)?;
            let trace = net.recall(&cue, dyn_params)?;
            let ok = if verify {
                match trace.outcome {
                    Outcome::FixedPoint => {
                        net.step(&trace.final_state, theta)? == trace.final_state
                    }
                    Outcome::LimitCycle { period } => {
                        let mut s = trace.final_state.clone();
                        for _ in 0..period {
                            s = net.step(&s, theta)?;
                        }
                        s == trace.final_state
                    }
                    Outcome::NotConverged => true,
                }
            } else {
                true
            };
            Ok((TrialRecord::from_trace(ctx, patterns, nu, r, &trace), ok))
        })
        .collect::<Result<_>>()?;
    let violations = results.iter().filter(|(_, ok)| !ok).count();
    Ok((results.into_iter().map(|(r, _)| r).collect(), violations))
}

struct TaskOutput {
    seconds: f64,
    per_similarity: Vec<(Vec<TrialRecord>, usize)>,
}

fn run_task(
    spec: &ModelSpec,
    master: u64,
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<TaskOutput> {
    let patterns = generate_patterns(spec.n, spec.p, derive_seed(master, TAG_PATTERNS, 0))?;
    let trained = train_rule(
        spec.rule,
        &patterns,
        spec.kernel_params()?,
        &cfg.learn_config(spec.lambda),
    )?;
    let per_similarity = cfg
        .similarities
        .iter()
        .map(|&similarity| {
            let ctx = TrialContext {
                master_seed: master,
                load: spec.load,
                similarity,
                rule: spec.rule,
                gamma: spec.gamma(),
                lambda: spec.lambda,
            };
            run_trials(
                &trained.model,
                &patterns,
                &ctx,
                cfg.trials_per_pattern,
                cfg.dyn_params(),
                opts.verify_dynamics,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskOutput {
        seconds: trained.seconds,
        per_similarity,
    })
}

/// Runs the full (model × seed × similarity) grid of a config.
pub fn run_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepResult> {
    cfg.validate()?;
    let specs = cfg.model_specs();
    let tasks: Vec<(usize, u64)> = (0..specs.len())
        .flat_map(|si| cfg.seeds.iter().map(move |&seed| (si, seed)))
        .collect();
    let pool = thread_pool(opts.threads)?;
    let outputs: Vec<TaskOutput> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(si, seed)| {
                run_task(&specs[si], seed, cfg, opts).map_err(|e| Error::Condition {
                    condition: format!("{} seed={seed}", specs[si].label()),
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let seeds = cfg.seeds.len();
    let mut conditions = Vec::with_capacity(specs.len() * cfg.similarities.len());
    for (si, spec) in specs.iter().enumerate() {
        let outs = &outputs[si * seeds..(si + 1) * seeds];
        for (k, &similarity) in cfg.similarities.iter().enumerate() {
            let mut records: Vec<TrialRecord> = outs
                .iter()
                .flat_map(|o| o.per_similarity[k].0.iter().cloned())
                .collect();
            sort_records(&mut records);
            let dynamics_violations = outs.iter().map(|o| o.per_similarity[k].1).sum();
            conditions.push(ConditionResult {
                spec: *spec,
                similarity,
                metrics: aggregate(&records)?,
                train_seconds: outs.iter().map(|o| o.seconds).collect(),
                records,
                dynamics_violations,
            });
        }
    }
    Ok(SweepResult {
        config: cfg.clone(),
        conditions,
    })
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::Config(format!(
            "expected a {kind} config, got {}",
            cfg.kind
        )));
    }
    Ok(())
}

/// Load × similarity grid for a single KLR network.
pub fn landscape_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepResult> {
    expect_kind(cfg, ExperimentKind::Landscape)?;
    run_sweep(cfg, opts)
}

/// Paired KLR/KRR recall curves with training times.
pub fn compare_klr_krr(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepResult> {
    expect_kind(cfg, ExperimentKind::Compare)?;
    run_sweep(cfg, opts)
}

/// Recall and convergence speed across network sizes.
pub fn scaling_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepResult> {
    expect_kind(cfg, ExperimentKind::Scaling)?;
    let mut cfg = cfg.clone();
    if cfg.c_by_n.is_none() {
        cfg.c_by_n = Some(cfg.n.iter().map(|&n| default_scaling(n)).collect());
    }
    run_sweep(&cfg, opts)
}

/// Recall over the (c, λ) grid.
pub fn sensitivity_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepResult> {
    expect_kind(cfg, ExperimentKind::Sensitivity)?;
    run_sweep(cfg, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaScore {
    pub n: usize,
    pub c: f64,
    /// Target recall averaged over the load (and similarity) grid.
    pub mean_recall: f64,
}

#[derive(Clone, Debug)]
pub struct GammaSearchResult {
    pub sweep: SweepResult,
    pub scores: Vec<GammaScore>,
    /// Best scaling factor per network size, ties to the smaller c.
    pub best: Vec<(usize, f64)>,
}

pub fn gamma_grid_search(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<GammaSearchResult> {
    expect_kind(cfg, ExperimentKind::GammaSearch)?;
    let sweep = run_sweep(cfg, opts)?;
    let mut cs = cfg.c.clone();
    cs.sort_by(f64::total_cmp);
    cs.dedup();
    let mut scores = Vec::new();
    let mut best = Vec::new();
    for &n in &cfg.n {
        let mut winner: Option<(f64, f64)> = None;
        for &c in &cs {
            let recalls: Vec<f64> = sweep
                .conditions
                .iter()
                .filter(|r| r.spec.n == n && r.spec.c == c)
                .map(|r| r.metrics.target_recall_rate.mean)
                .collect();
            let mean_recall = recalls.iter().sum::<f64>() / recalls.len() as f64;
            scores.push(GammaScore { n, c, mean_recall });
            if winner.is_none_or(|(_, m)| mean_recall > m) {
                winner = Some((c, mean_recall));
            }
        }
        best.push((n, winner.expect("non-empty c grid").0));
    }
    Ok(GammaSearchResult {
        sweep,
        scores,
        best,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveReport {
    pub n: usize,
    pub p: usize,
    pub c: f64,
    pub lambda: f64,
    pub master_seed: u64,
    pub curve: LearningCurve,
    /// Update index at three quarters of the run (150 of 200).
    pub checkpoint: usize,
    /// loss(M) / loss(checkpoint).
    pub final_over_checkpoint: f64,
    /// loss(checkpoint) / loss(0).
    pub checkpoint_over_initial: f64,
    /// The last quarter of the run contributes at most 5% of the total decrease.
    pub plateau: bool,
    pub nonincreasing_after_first: bool,
}

/// KLR learning curve for the first (N, load, c, λ, seed) of the config.
pub fn learning_curve_capture(cfg: &ExperimentConfig) -> Result<LearningCurveReport> {
    expect_kind(cfg, ExperimentKind::LearningCurve)?;
    cfg.validate()?;
    let n = cfg.n[0];
    let p = pattern_count(n, cfg.loads[0]);
    let c = cfg.c_by_n.as_ref().map_or(cfg.c[0], |cs| cs[0]);
    let lambda = cfg.lambdas[0];
    let master_seed = cfg.seeds[0];
    let patterns = generate_patterns(n, p, derive_seed(master_seed, TAG_PATTERNS, 0))?;
    let (_, curve) = train_klr(
        &patterns,
        KernelParams::from_scaling(c, n)?,
        &cfg.learn_config(lambda),
    )?;
    let m = cfg.m_updates;
    let checkpoint = ((m as f64) * 0.75).round() as usize;
    let l = &curve.losses;
    let (l0, lc, lm) = (l[0], l[checkpoint], l[m]);
    Ok(LearningCurveReport {
        n,
        p,
        c,
        lambda,
        master_seed,
        checkpoint,
        final_over_checkpoint: lm / lc,
        checkpoint_over_initial: lc / l0,
        plateau: (lc - lm) <= 0.05 * (l0 - lm),
        nonincreasing_after_first: curve.is_nonincreasing_after_first(),
        curve,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub n: usize,
    pub rule: Rule,
    pub load: f64,
    pub trials: usize,
    pub cycles: usize,
    pub not_converged: usize,
    pub cycle_rate: Stat,
    pub not_converged_rate: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    pub total_trials: usize,
    pub total_cycles: usize,
    pub total_not_converged: usize,
}

impl AuditReport {
    /// Fraction of all trials that cycled or failed to converge.
    pub fn non_fixed_fraction(&self) -> f64 {
        (self.total_cycles + self.total_not_converged) as f64 / self.total_trials as f64
    }
}

/// Per-load cycle and non-convergence rates, pooling similarities.
pub fn audit_records(records: &[TrialRecord]) -> Result<AuditReport> {
    if records.is_empty() {
        return Err(Error::invalid("dynamics audit needs at least one trial"));
    }
    let mut groups: BTreeMap<(usize, Rule, u64), Vec<TrialRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.n, r.rule, r.load.to_bits()))
            .or_default()
            .push(r.clone());
    }
    let mut rows = Vec::new();
    for ((n, rule, load), recs) in groups {
        let m = aggregate(&recs)?;
        let cycles = recs
            .iter()
            .filter(|r| matches!(r.outcome, Outcome::LimitCycle { .. }))
            .count();
        let not_converged = recs
            .iter()
            .filter(|r| r.outcome == Outcome::NotConverged)
            .count();
        rows.push(AuditRow {
            n,
            rule,
            load: f64::from_bits(load),
            trials: recs.len(),
            cycles,
            not_converged,
            cycle_rate: m.cycle_rate,
            not_converged_rate: m.not_converged_rate,
        });
    }
    rows.sort_by(|a, b| {
        (a.n, a.rule)
            .cmp(&(b.n, b.rule))
            .then(a.load.total_cmp(&b.load))
    });
    Ok(AuditReport {
        total_trials: rows.iter().map(|r| r.trials).sum(),
        total_cycles: rows.iter().map(|r| r.cycles).sum(),
        total_not_converged: rows.iter().map(|r| r.not_converged).sum(),
        rows,
    })
}

/// Runs the landscape grid and audits its dynamics.
pub fn dynamics_audit(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<(SweepResult, AuditReport)> {
    expect_kind(cfg, ExperimentKind::DynamicsAudit)?;
    let sweep = run_sweep(cfg, opts)?;
    let report = audit_records(&sweep.records())?;
    Ok((sweep, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::Classification;
    use crate::learning::WeightMatrix;
    use nalgebra::{DMatrix, DVector};

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            n: vec![40],
            loads: vec![0.25, 0.5],
            similarities: vec![0.8, 1.0],
            seeds: vec![1, 2],
            trials_per_pattern: 2,
            ..ExperimentConfig::preset(kind)
        }
    }

    #[test]
    fn presets_validate() {
        for kind in ExperimentKind::ALL {
            ExperimentConfig::preset(kind).validate().unwrap();
            assert_eq!(kind.as_str().parse::<ExperimentKind>().unwrap(), kind);
        }
    }

    #[test]
    fn toml_roundtrip_and_defaults() {
        let cfg = ExperimentConfig::preset(ExperimentKind::Sensitivity);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);

        let minimal = "kind = \"compare\"\nn = [100]\nloads = [1.0]\nsimilarities = [0.6]\nrules = [\"klr\", \"krr\"]\n";
        let cfg = ExperimentConfig::from_toml_str(minimal).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.trials_per_pattern, 5);
        assert_eq!(cfg.learn_config(0.01), LearnConfig::default());
        assert!(ExperimentConfig::from_toml_str("kind = \"compare\"\nbogus = 1").is_err());
    }

    #[test]
    fn validation_errors() {
        let base = small(ExperimentKind::Sensitivity);
        let cases: [fn(&mut ExperimentConfig); 8] = [
            |c: &mut ExperimentConfig| c.loads.clear(),
            |c: &mut ExperimentConfig| c.seeds = vec![3, 3],
            |c: &mut ExperimentConfig| c.loads = vec![0.001],
            |c: &mut ExperimentConfig| c.similarities = vec![1.5],
            |c: &mut ExperimentConfig| c.c = vec![0.0],
            |c: &mut ExperimentConfig| {
                c.rules = vec![Rule::Krr];
                c.lambdas = vec![0.0, 0.01];
            },
            |c: &mut ExperimentConfig| c.c_by_n = Some(vec![1.0, 2.0]),
            |c: &mut ExperimentConfig| c.max_steps = 0,
        ];
        for (i, mutate) in cases.iter().enumerate() {
            let mut cfg = base.clone();
            mutate(&mut cfg);
            assert!(cfg.validate().is_err(), "case {i} accepted");
        }
        let mut cfg = small(ExperimentKind::Compare);
        cfg.rules = vec![Rule::Klr];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn trial_counts_and_partition() {
        let cfg = small(ExperimentKind::Landscape);
        let sweep = landscape_experiment(
            &cfg,
            &RunOptions {
                threads: Some(2),
                verify_dynamics: true,
            },
        )
        .unwrap();
        assert_eq!(sweep.conditions.len(), 4);
        for c in &sweep.conditions {
            assert_eq!(c.records.len(), 2 * 2 * c.spec.p);
            assert_eq!(c.metrics.trials_per_seed, vec![2 * c.spec.p; 2]);
        }
        assert_eq!(sweep.dynamics_violations(), 0);
        // similarity 1.0 cues are the stored patterns themselves
        for c in sweep.conditions.iter().filter(|c| c.similarity == 1.0) {
            assert_eq!(c.metrics.target_recall_rate.mean, 1.0);
            assert!(c.records.iter().all(|r| r.steps == 1));
        }
    }

    #[test]
    fn output_is_independent_of_thread_count() {
        let cfg = small(ExperimentKind::Compare);
        let a = run_sweep(
            &cfg,
            &RunOptions {
                threads: Some(1),
                verify_dynamics: false,
            },
        )
        .unwrap();
        let b = run_sweep(
            &cfg,
            &RunOptions {
                threads: Some(3),
                verify_dynamics: false,
            },
        )
        .unwrap();
        assert_eq!(a.records(), b.records());
    }

    #[test]
    fn hebbian_ignores_kernel_grid() {
        let mut cfg = small(ExperimentKind::Sensitivity);
        cfg.rules = vec![Rule::Hebbian, Rule::Klr];
        let specs = cfg.model_specs();
        let hebb = specs.iter().filter(|s| s.rule == Rule::Hebbian).count();
        assert_eq!(hebb, cfg.loads.len());
        assert!(specs
            .iter()
            .filter(|s| s.rule == Rule::Hebbian)
            .all(|s| s.gamma() == 0.0));
    }

    #[test]
    fn gamma_search_single_point_grid() {
        let mut cfg = small(ExperimentKind::GammaSearch);
        cfg.c = vec![3.0];
        cfg.similarities = vec![1.0];
        let r = gamma_grid_search(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(r.best, vec![(40, 3.0)]);
    }

    #[test]
    fn gamma_search_ties_go_to_smaller_c() {
        // at tiny load every c recalls perfectly from an exact cue
        let mut cfg = small(ExperimentKind::GammaSearch);
        cfg.loads = vec![0.05];
        cfg.c = vec![5.0, 3.0, 4.0];
        let r = gamma_grid_search(&cfg, &RunOptions::default()).unwrap();
        assert!(r.scores.iter().all(|s| s.mean_recall == 1.0));
        assert_eq!(r.best, vec![(40, 3.0)]);
    }

    #[test]
    fn learning_curve_starts_at_np_log2() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::LearningCurve);
        cfg.n = vec![50];
        cfg.loads = vec![1.0];
        let r = learning_curve_capture(&cfg).unwrap();
        assert_eq!(r.curve.losses.len(), 201);
        approx::assert_relative_eq!(
            r.curve.losses[0],
            50.0 * 50.0 * std::f64::consts::LN_2,
            max_relative = 1e-12
        );
        assert_eq!(r.checkpoint, 150);
        assert!(r.nonincreasing_after_first);
    }

    #[test]
    fn audit_reports_injected_cycle() {
        // mutual excitation of two neurons: (+,-) <-> (-,+)
        let model = Model::Weights(WeightMatrix {
            w: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            theta: DVector::zeros(2),
        });
        // one flip from (+,+) lands on the cycle
        let patterns = PatternSet::from_rows(vec![crate::patterns::State::all_plus(2)], 0).unwrap();
        let ctx = TrialContext {
            master_seed: 1,
            load: 0.5,
            similarity: 0.5,
            rule: Rule::Hebbian,
            gamma: 0.0,
            lambda: 0.0,
        };
        let (recs, violations) =
            run_trials(&model, &patterns, &ctx, 3, DynParams::default(), true).unwrap();
        assert_eq!(violations, 0);
        assert!(recs
            .iter()
            .all(|r| r.classification == Classification::SpuriousCycle));
        let report = audit_records(&recs).unwrap();
        assert_eq!(report.total_cycles, 3);
        assert_eq!(report.rows[0].cycle_rate.mean, 1.0);
        assert_eq!(report.non_fixed_fraction(), 1.0);
        assert!(audit_records(&[]).is_err());
    }
}
