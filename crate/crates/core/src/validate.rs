//! Self-check suite behind `khop validate`: gradients against central
//! differences, KRR residuals, exhaustive fixed-point enumeration, the KLR
//! starting loss, and the sweep's partition, re-verification, determinism
//! and CSV round-trip properties.

use std::collections::BTreeSet;

use nalgebra::DVector;
use rand::Rng;

use crate::analysis::{enumerate_fixed_points, fixed_point_inventory};
use crate::error::Result;
use crate::experiments::{run_sweep, ExperimentConfig, ExperimentKind, RunOptions};
use crate::kernel::{gram, KernelParams};
use crate::learning::{
    klr_neuron_gradient, klr_neuron_loss, krr_residual, llr_neuron_gradient, llr_neuron_loss,
    train_hebbian, train_klr, train_krr, LearnConfig, Model,
};
use crate::patterns::generate_patterns;
use crate::report::{read_trial_rows, write_trial_rows, TrialRow};
use crate::rng::{derive_seed, stream};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        name,
        passed,
        detail,
    }
}

fn central_diff(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |j, _| {
        let mut a = x.clone();
        let mut b = x.clone();
        a[j] += h;
        b[j] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    })
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-12)
}

/// Worst relative error of the KLR and LLR gradients over `instances`
/// random small problems.
pub fn gradient_errors(master: u64, instances: usize) -> Result<(f64, f64)> {
    let (mut klr, mut llr) = (0f64, 0f64);
    for i in 0..instances {
        let mut rng = stream(derive_seed(master, "validate", i as u64));
        let n = rng.gen_range(3..9);
        let p = rng.gen_range(2..7);
        let lambda = [0.0, 0.01, 0.1][i % 3];
        let patterns = generate_patterns(n, p, rng.gen())?;
        let params = KernelParams::from_scaling(rng.gen_range(0.5..4.0), n)?;
        let k = gram(&patterns, params).into_inner();
        let neuron = rng.gen_range(0..n);
        let t = DVector::from_fn(p, |mu, _| {
            f64::from(u8::from(patterns.row(mu).values()[neuron] > 0))
        });
        let alpha = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
        let fd = central_diff(|a| klr_neuron_loss(&k, a, &t, lambda), &alpha, 1e-5);
        klr = klr.max(rel_err(&klr_neuron_gradient(&k, &alpha, &t, lambda), &fd));

        let mut w = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        w[neuron] = 0.0;
        let fd = central_diff(|w| llr_neuron_loss(&patterns, neuron, w, lambda), &w, 1e-5);
        let mut g = llr_neuron_gradient(&patterns, neuron, &w, lambda);
        let mut fd = fd;
        // the self-connection is pinned to zero
        g[neuron] = 0.0;
        fd[neuron] = 0.0;
        llr = llr.max(rel_err(&g, &fd));
    }
    Ok((klr, llr))
}

pub fn run_all(threads: Option<usize>) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let (klr, llr) = gradient_errors(1, 20)?;
    checks.push(check(
        "klr-gradient",
        klr < 1e-5,
        format!("max relative error {klr:.3e} over 20 instances"),
    ));
    checks.push(check(
        "llr-gradient",
        llr < 1e-5,
        format!("max relative error {llr:.3e} over 20 instances"),
    ));

    let mut worst = 0f64;
    for (n, p, lambda) in [(30, 10, 1e-4), (50, 75, 0.01), (100, 150, 0.1)] {
        let patterns = generate_patterns(n, p, derive_seed(2, "validate", n as u64))?;
        let model = train_krr(&patterns, KernelParams::from_scaling(2.0, n)?, lambda)?;
        worst = worst.max(krr_residual(&model, lambda));
    }
    checks.push(check(
        "krr-residual",
        worst < 1e-8,
        format!("max |(K+lambda I)alpha - Y| = {worst:.3e}"),
    ));

    let (n, p) = (40, 60);
    let patterns = generate_patterns(n, p, 3)?;
    let (_, curve) = train_klr(
        &patterns,
        KernelParams::from_scaling(2.0, n)?,
        &LearnConfig::default(),
    )?;
    let expected = (n * p) as f64 * std::f64::consts::LN_2;
    let rel = (curve.losses[0] - expected).abs() / expected;
    checks.push(check(
        "klr-initial-loss",
        rel < 1e-9,
        format!("relative deviation {rel:.3e} from N*P*ln 2"),
    ));

    let mut mismatches = Vec::new();
    for n in [8usize, 10, 12] {
        let patterns = generate_patterns(n, 3, derive_seed(4, "validate", n as u64))?;
        let (klr_model, _) = train_klr(
            &patterns,
            KernelParams::from_scaling(2.0, n)?,
            &LearnConfig::default(),
        )?;
        for (label, model) in [
            ("hebbian", Model::Weights(train_hebbian(&patterns))),
            ("klr", Model::Dual(klr_model.clone())),
        ] {
            let all: BTreeSet<_> = enumerate_fixed_points(&model)?.into_iter().collect();
            let found = fixed_point_inventory(&model, &patterns, 30)?.states(&patterns);
            if all != found {
                mismatches.push(format!("{label} N={n}"));
            }
        }
    }
    checks.push(check(
        "fixed-point-enumeration",
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "inventory equals exhaustive enumeration at N = 8, 10, 12".into()
        } else {
            format!("mismatch for {}", mismatches.join(", "))
        },
    ));

    let cfg = ExperimentConfig {
        n: vec![50],
        loads: vec![0.5, 1.5],
        similarities: vec![0.6, 0.9],
        seeds: vec![1, 2, 3],
        trials_per_pattern: 2,
        ..ExperimentConfig::preset(ExperimentKind::Compare)
    };
    let sweep = run_sweep(
        &cfg,
        &RunOptions {
            threads,
            verify_dynamics: true,
        },
    )?;
    let mut worst = 0f64;
    let mut identity = true;
    for c in &sweep.conditions {
        let m = &c.metrics;
        for s in 0..m.seeds.len() {
            let total = m.target_recall_rate.per_seed[s]
                + m.other_learned_rate.per_seed[s]
                + m.spurious_fixed_point_rate.per_seed[s]
                + m.spurious_cycle_rate.per_seed[s]
                + m.not_converged_rate.per_seed[s];
            worst = worst.max((total - 1.0).abs());
            identity &= m.fixed_point_rate.per_seed[s]
                == 1.0 - (m.cycle_rate.per_seed[s] + m.not_converged_rate.per_seed[s]);
        }
    }
    checks.push(check(
        "rate-partition",
        worst <= 1e-12 && identity,
        format!(
            "max |sum of class rates - 1| = {worst:.1e}, fixed-point identity exact: {identity}"
        ),
    ));
    let v = sweep.dynamics_violations();
    checks.push(check(
        "attractor-reverification",
        v == 0,
        format!("{v} fixed points or cycles failed re-verification"),
    ));

    let other = run_sweep(
        &cfg,
        &RunOptions {
            threads: Some(1),
            verify_dynamics: false,
        },
    )?;
    let records = sweep.records();
    let same = records == other.records();
    checks.push(check(
        "thread-independence",
        same,
        format!(
            "{} records compared against a single-threaded run",
            records.len()
        ),
    ));

    let rows: Vec<TrialRow> = records.iter().map(TrialRow::from).collect();
    let mut buf = Vec::new();
    write_trial_rows(&mut buf, &rows).map_err(|e| crate::Error::invalid(e.to_string()))?;
    let back = read_trial_rows(buf.as_slice())?;
    checks.push(check(
        "csv-roundtrip",
        back == rows,
        format!("{} rows", rows.len()),
    ));

    Ok(checks)
}
