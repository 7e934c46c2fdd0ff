//! `khop`: train, recall, run experiments, plot and self-check.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use kernel_hopfield::analysis::{classify, Classification};
use kernel_hopfield::dynamics::{DynParams, Network};
use kernel_hopfield::experiments::{
    compare_klr_krr, default_scaling, dynamics_audit, gamma_grid_search, landscape_experiment,
    learning_curve_capture, pattern_count, scaling_experiment, sensitivity_sweep, ExperimentConfig,
    ExperimentKind, RunOptions, SweepResult,
};
use kernel_hopfield::kernel::KernelParams;
use kernel_hopfield::learning::{train_rule, LearnConfig, Rule};
use kernel_hopfield::model_io::ModelFile;
use kernel_hopfield::patterns::{corrupt, generate_patterns, PatternSet, State};
use kernel_hopfield::report::{self, Figure, Filter, OutputFile, RunManifest, Table};
use kernel_hopfield::rng::{derive_seed, TAG_PATTERNS, TAG_TRIAL};
use kernel_hopfield::validate;

/// Network size from which runs need `--large`.
const LARGE_N: usize = 500;

#[derive(Parser)]
#[command(
    name = "khop",
    version,
    about = "Kernel-trained Hopfield associative memory experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on random patterns and write it as JSON.
    Train(TrainArgs),
    /// Recall once from a model dump.
    Recall(RecallArgs),
    /// Run an experiment sweep and write CSV tables plus a manifest.
    Experiment(ExperimentArgs),
    /// Render a CSV table as an SVG figure.
    Plot(PlotArgs),
    /// Run the invariant self-check suite.
    Validate(ValidateArgs),
}

fn rule_parser() -> impl TypedValueParser<Value = Rule> {
    PossibleValuesParser::new(["hebbian", "llr", "klr", "krr"])
        .map(|s| s.parse::<Rule>().expect("listed value"))
}

fn kind_parser() -> impl TypedValueParser<Value = ExperimentKind> {
    PossibleValuesParser::new(ExperimentKind::ALL.map(|k| k.as_str()))
        .map(|s| s.parse::<ExperimentKind>().expect("listed value"))
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = rule_parser(), default_value = "klr")]
    rule: Rule,
    /// Number of neurons.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Storage load P/N.
    #[arg(long, default_value_t = 1.0, conflicts_with = "p")]
    load: f64,
    /// Number of patterns; overrides --load.
    #[arg(long)]
    p: Option<usize>,
    /// Kernel scaling factor c (gamma = c/N); defaults to 2 for N <= 250, 5 above.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 200)]
    m_updates: usize,
    /// Master seed; patterns come from its "patterns" stream.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Output file name inside --out-dir.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    #[arg(long)]
    large: bool,
}

#[derive(Args)]
struct RecallArgs {
    /// Model dump written by `train`.
    model: PathBuf,
    /// Stored pattern to corrupt and recall.
    #[arg(long, default_value_t = 0)]
    pattern: usize,
    /// Initial overlap with the pattern.
    #[arg(long, default_value_t = 1.0)]
    similarity: f64,
    /// Explicit initial state as a string of + and -; replaces --similarity.
    #[arg(long, conflicts_with = "similarity")]
    state: Option<String>,
    /// Seed of the corruption stream.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    max_steps: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_parser = kind_parser())]
    kind: ExperimentKind,
    /// TOML config; the kind's desk-scale preset when omitted.
    #[arg(long, conflicts_with = "from_manifest")]
    config: Option<PathBuf>,
    /// Rerun exactly the configuration recorded in a manifest.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    /// Master seed(s), replacing the configured list.
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    /// Worker threads; all cores when omitted. Output does not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Allow network sizes of 500 and above.
    #[arg(long)]
    large: bool,
    /// Skip re-verifying every detected fixed point and cycle.
    #[arg(long)]
    no_verify: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Condition, trial, curve or audit CSV.
    table: PathBuf,
    /// One of 1a 1b 1c 1d 2a 2b 3a 3b 4 A B C.
    #[arg(long)]
    fig: String,
    /// Keep only rows with column=value; repeatable.
    #[arg(long = "where")]
    filters: Vec<String>,
    /// Output path; defaults to the table path with the figure name and .svg.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    threads: Option<usize>,
}

/// Bad input on the command line or in a config file.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn check_large(n: &[usize], large: bool) -> Result<()> {
    if let Some(&big) = n.iter().find(|&&n| n >= LARGE_N) {
        if !large {
            return Err(usage(format!(
                "N = {big} runs take minutes to hours per condition; pass --large to allow them"
            )));
        }
        log::warn!(
            "running N = {big}; kernel logistic training at this size is minutes-scale per model"
        );
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    check_large(&[args.n], args.large)?;
    let p = args.p.unwrap_or_else(|| pattern_count(args.n, args.load));
    let patterns = generate_patterns(args.n, p, derive_seed(args.seed, TAG_PATTERNS, 0))
        .map_err(|e| usage(e.to_string()))?;
    let c = if args.rule.is_kernel() {
        args.c.unwrap_or_else(|| default_scaling(args.n))
    } else {
        0.0
    };
    let params = if args.rule.is_kernel() {
        Some(KernelParams::from_scaling(c, args.n).map_err(|e| usage(e.to_string()))?)
    } else {
        None
    };
    let config = LearnConfig {
        beta: args.beta,
        m_updates: args.m_updates,
        lambda: args.lambda,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let trained = train_rule(args.rule, &patterns, params, &config)?;
    let lambda = if args.rule == Rule::Hebbian {
        0.0
    } else {
        args.lambda
    };
    let file = ModelFile::new(args.rule, c, lambda, patterns, trained.model);
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let path = args.out_dir.join(&args.out);
    file.save(&path)?;
    println!("rule: {}", args.rule);
    println!(
        "n: {}  p: {}  load: {}",
        args.n,
        p,
        p as f64 / args.n as f64
    );
    if args.rule.is_kernel() {
        println!("c: {c}  gamma: {}", c / args.n as f64);
    }
    println!("train_seconds: {:.6}", trained.seconds);
    if let Some(curve) = &trained.curve {
        println!(
            "loss: {:.6e} -> {:.6e}",
            curve.losses[0],
            curve.losses.last().expect("initial loss recorded")
        );
    }
    println!("model: {}", path.display());
    Ok(())
}

fn recall(args: RecallArgs) -> Result<()> {
    let file = ModelFile::load(&args.model)?;
    let patterns: &PatternSet = &file.patterns;
    if args.pattern >= patterns.p() {
        return Err(usage(format!(
            "pattern {} out of range (P = {})",
            args.pattern,
            patterns.p()
        )));
    }
    let initial = match &args.state {
        Some(s) => {
            let s = State::parse_signs(s).map_err(|e| usage(e.to_string()))?;
            if s.len() != patterns.n() {
                return Err(usage(format!(
                    "state has {} entries, model has N = {}",
                    s.len(),
                    patterns.n()
                )));
            }
            s
        }
        None => corrupt(
            patterns.row(args.pattern),
            args.similarity,
            derive_seed(args.seed, TAG_TRIAL, 0),
        )
        .map_err(|e| usage(e.to_string()))?,
    };
    let net = Network::new(&file.model);
    let trace = net.recall(
        &initial,
        DynParams {
            max_steps: args.max_steps,
        },
    )?;
    let class: Classification = classify(&trace, patterns, args.pattern);
    let (dist, nearest) = patterns.nearest(&trace.final_state, args.pattern);
    println!("classification: {class}");
    println!("outcome: {}", trace.outcome);
    println!("steps: {}", trace.steps);
    println!("hamming_nearest: {dist} (pattern {nearest})");
    println!("initial: {}", trace.initial);
    println!("final:   {}", trace.final_state);
    Ok(())
}

fn load_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = if let Some(path) = &args.from_manifest {
        RunManifest::read(path)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?
            .config
    } else if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_toml_str(&text)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?
    } else {
        ExperimentConfig::preset(args.kind)
    };
    if cfg.kind != args.kind {
        return Err(usage(format!(
            "config is for `{}`, not `{}`",
            cfg.kind, args.kind
        )));
    }
    if !args.seed.is_empty() {
        cfg.seeds = args.seed.clone();
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn fmt_stat(s: &kernel_hopfield::analysis::Stat) -> String {
    if s.half_width.is_nan() {
        format!("{:.4}", s.mean)
    } else {
        format!("{:.4}±{:.4}", s.mean, s.half_width)
    }
}

fn print_sweep(sweep: &SweepResult, timing: bool) {
    print!(
        "{:>7} {:>5} {:>6} {:>5} {:>5} {:>8} {:>16} {:>8} {:>16}",
        "rule", "n", "load", "sim", "c", "lambda", "target_recall", "spur_fp", "steps"
    );
    if timing {
        print!(" {:>12}", "train_s");
    }
    println!();
    for c in &sweep.conditions {
        let m = &c.metrics;
        print!(
            "{:>7} {:>5} {:>6} {:>5} {:>5} {:>8} {:>16} {:>8.4} {:>16}",
            c.spec.rule.to_string(),
            c.spec.n,
            c.spec.load,
            c.similarity,
            c.spec.c,
            c.spec.lambda,
            fmt_stat(&m.target_recall_rate),
            m.spurious_fixed_point_rate.mean,
            fmt_stat(&m.avg_steps_to_converge)
        );
        if timing {
            let (mean, sd) = c.train_seconds_stats();
            print!(" {mean:>7.4}±{sd:.4}");
        }
        println!();
    }
    if sweep.dynamics_violations() > 0 {
        println!("re-verification failures: {}", sweep.dynamics_violations());
    }
}

fn write_sweep(
    dir: &Path,
    stem: &str,
    sweep: &SweepResult,
    outputs: &mut Vec<OutputFile>,
) -> Result<()> {
    let conditions = dir.join(format!("{stem}.csv"));
    report::write_condition_csv(&conditions, &sweep.conditions)?;
    outputs.push(OutputFile {
        role: "conditions".into(),
        path: conditions.display().to_string(),
    });
    let trials = dir.join(format!("{stem}_trials.csv"));
    report::write_trial_csv(&trials, &sweep.records())?;
    outputs.push(OutputFile {
        role: "trials".into(),
        path: trials.display().to_string(),
    });
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    check_large(&cfg.n, args.large)?;
    let opts = RunOptions {
        threads: args.threads,
        verify_dynamics: !args.no_verify,
    };
    let started = chrono::Utc::now();
    let mut manifest = RunManifest::new(&cfg, started);
    let dir = &args.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = cfg.kind.as_str();
    let outputs = &mut manifest.outputs;
    log::info!("running {stem} over {} seeds", cfg.seeds.len());
    match cfg.kind {
        ExperimentKind::Landscape
        | ExperimentKind::Scaling
        | ExperimentKind::Sensitivity
        | ExperimentKind::Compare => {
            let sweep = match cfg.kind {
                ExperimentKind::Landscape => landscape_experiment(&cfg, &opts)?,
                ExperimentKind::Scaling => scaling_experiment(&cfg, &opts)?,
                ExperimentKind::Sensitivity => sensitivity_sweep(&cfg, &opts)?,
                _ => compare_klr_krr(&cfg, &opts)?,
            };
            print_sweep(&sweep, cfg.kind == ExperimentKind::Compare);
            write_sweep(dir, stem, &sweep, outputs)?;
        }
        ExperimentKind::GammaSearch => {
            let r = gamma_grid_search(&cfg, &opts)?;
            println!("{:>5} {:>6} {:>12}", "n", "c", "mean_recall");
            for s in &r.scores {
                println!("{:>5} {:>6} {:>12.4}", s.n, s.c, s.mean_recall);
            }
            for (n, c) in &r.best {
                println!("best c for N = {n}: {c}");
            }
            write_sweep(dir, stem, &r.sweep, outputs)?;
            let scores = dir.join(format!("{stem}_scores.csv"));
            report::write_gamma_csv(&scores, &r.scores)?;
            outputs.push(OutputFile {
                role: "scores".into(),
                path: scores.display().to_string(),
            });
        }
        ExperimentKind::LearningCurve => {
            let r = learning_curve_capture(&cfg)?;
            let m = r.curve.losses.len() - 1;
            println!(
                "n: {}  p: {}  c: {}  lambda: {}  seed: {}",
                r.n, r.p, r.c, r.lambda, r.master_seed
            );
            println!("loss(0) = {:.6e}", r.curve.losses[0]);
            println!(
                "loss({}) = {:.6e}",
                r.checkpoint, r.curve.losses[r.checkpoint]
            );
            println!("loss({m}) = {:.6e}", r.curve.losses[m]);
            println!(
                "loss({m})/loss({}) = {:.6}",
                r.checkpoint, r.final_over_checkpoint
            );
            println!(
                "loss({})/loss(0) = {:.6e}",
                r.checkpoint, r.checkpoint_over_initial
            );
            println!("plateau: {}", r.plateau);
            println!(
                "non-increasing after first update: {}",
                r.nonincreasing_after_first
            );
            let path = dir.join(format!("{stem}.csv"));
            report::write_learning_curve_csv(&path, &r)?;
            outputs.push(OutputFile {
                role: "curve".into(),
                path: path.display().to_string(),
            });
        }
        ExperimentKind::DynamicsAudit => {
            let (sweep, audit) = dynamics_audit(&cfg, &opts)?;
            println!(
                "{:>5} {:>6} {:>8} {:>7} {:>14} {:>9}",
                "n", "load", "trials", "cycles", "not_converged", "rate"
            );
            for r in &audit.rows {
                println!(
                    "{:>5} {:>6} {:>8} {:>7} {:>14} {:>9.2e}",
                    r.n,
                    r.load,
                    r.trials,
                    r.cycles,
                    r.not_converged,
                    (r.cycles + r.not_converged) as f64 / r.trials as f64
                );
            }
            println!(
                "total: {} trials, {} cycles, {} not converged, fraction {:.3e}",
                audit.total_trials,
                audit.total_cycles,
                audit.total_not_converged,
                audit.non_fixed_fraction()
            );
            println!("re-verification failures: {}", sweep.dynamics_violations());
            let path = dir.join(format!("{stem}.csv"));
            report::write_audit_csv(&path, &audit)?;
            outputs.push(OutputFile {
                role: "audit".into(),
                path: path.display().to_string(),
            });
            write_sweep(dir, &format!("{stem}_landscape"), &sweep, outputs)?;
        }
    }
    manifest.finished = chrono::Utc::now().to_rfc3339();
    let path = dir.join(format!("{stem}_manifest.json"));
    manifest.write(&path)?;
    println!("manifest: {}", path.display());
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let fig: Figure = args
        .fig
        .parse()
        .map_err(|e: kernel_hopfield::Error| usage(e.to_string()))?;
    let filters = args
        .filters
        .iter()
        .map(|f| f.parse::<Filter>())
        .collect::<kernel_hopfield::Result<Vec<_>>>()
        .map_err(|e| usage(e.to_string()))?;
    let table = Table::read(&args.table)?;
    let svg = report::figure_svg(&table, fig, &filters)
        .with_context(|| format!("{}", args.table.display()))?;
    let out = args.out.unwrap_or_else(|| {
        let stem = args
            .table
            .file_stem()
            .map_or("figure".into(), |s| s.to_string_lossy().into_owned());
        args.table
            .with_file_name(format!("{stem}_fig{}.svg", args.fig.to_ascii_lowercase()))
    });
    fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
    println!("{}", out.display());
    Ok(())
}

fn run_validate(args: ValidateArgs) -> Result<bool> {
    let checks = validate::run_all(args.threads)?;
    let mut ok = true;
    for c in &checks {
        println!(
            "{} {:<26} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        ok &= c.passed;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Recall(a) => recall(a).map(|_| true),
        Command::Experiment(a) => experiment(a).map(|_| true),
        Command::Plot(a) => plot(a).map(|_| true),
        Command::Validate(a) => run_validate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("khop: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
