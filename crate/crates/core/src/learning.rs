//! Training rules: Hebbian outer products, linear logistic regression, kernel
//! logistic regression (gradient descent on the dual coefficients) and kernel
//! ridge regression (one Cholesky solve shared by all neurons).
//!
//! Dual models store `alpha` as a P×N matrix whose column `i` holds neuron
//! `i`'s coefficients, so `h(s) = alphaᵀ k(s)`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gram, GramMatrix, KernelParams};
use crate::patterns::PatternSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Hebbian,
    Llr,
    Klr,
    Krr,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Hebbian => "hebbian",
            Rule::Llr => "llr",
            Rule::Klr => "klr",
            Rule::Krr => "krr",
        }
    }

    pub fn is_kernel(self) -> bool {
        matches!(self, Rule::Klr | Rule::Krr)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hebbian" => Ok(Rule::Hebbian),
            "llr" => Ok(Rule::Llr),
            "klr" => Ok(Rule::Klr),
            "krr" => Ok(Rule::Krr),
            other => Err(Error::invalid(format!("unknown rule `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    /// Gradient-descent step size.
    pub beta: f64,
    /// Number of gradient updates.
    pub m_updates: usize,
    /// L2 regularization strength.
    pub lambda: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            beta: 0.1,
            m_updates: 200,
            lambda: 0.01,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if self.m_updates == 0 {
            return Err(Error::invalid("m_updates must be >= 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Explicit synaptic weights with zero diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub w: DMatrix<f64>,
    pub theta: DVector<f64>,
}

impl WeightMatrix {
    pub fn n(&self) -> usize {
        self.w.nrows()
    }
}

/// Dual coefficients over the stored patterns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualModel {
    /// P×N; column `i` belongs to neuron `i`.
    pub alpha: DMatrix<f64>,
    pub patterns: PatternSet,
    pub params: KernelParams,
    pub theta: DVector<f64>,
}

impl DualModel {
    pub fn n(&self) -> usize {
        self.patterns.n()
    }

    pub fn p(&self) -> usize {
        self.patterns.p()
    }
}

/// Any trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum Model {
    Weights(WeightMatrix),
    Dual(DualModel),
}

impl Model {
    pub fn n(&self) -> usize {
        match self {
            Model::Weights(w) => w.n(),
            Model::Dual(d) => d.n(),
        }
    }

    pub fn theta(&self) -> &DVector<f64> {
        match self {
            Model::Weights(w) => &w.theta,
            Model::Dual(d) => &d.theta,
        }
    }
}

/// Total loss recorded at initialization and after every update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub losses: Vec<f64>,
}

impl LearningCurve {
    /// True when no recorded loss exceeds its predecessor, ignoring the first
    /// update.
    pub fn is_nonincreasing_after_first(&self) -> bool {
        self.losses
            .windows(2)
            .skip(1)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-12))
    }
}

/// Patterns as a P×N real matrix.
pub(crate) fn pattern_matrix(patterns: &PatternSet) -> DMatrix<f64> {
    DMatrix::from_fn(patterns.p(), patterns.n(), |mu, i| {
        f64::from(patterns.row(mu).values()[i])
    })
}

/// 0/1 targets `t[μ, i] = (ξ_i^μ + 1) / 2`.
pub(crate) fn target_matrix(patterns: &PatternSet) -> DMatrix<f64> {
    DMatrix::from_fn(patterns.p(), patterns.n(), |mu, i| {
        if patterns.row(mu).values()[i] > 0 {
            1.0
        } else {
            0.0
        }
    })
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Logistic negative log-likelihood of logit `h` for a 0/1 target.
#[inline]
fn logistic_nll(h: f64, t: f64) -> f64 {
    softplus(h) - t * h
}

pub fn train_hebbian(patterns: &PatternSet) -> WeightMatrix {
    let xi = pattern_matrix(patterns);
    let n = patterns.n();
    let mut w = xi.tr_mul(&xi) / n as f64;
    w.fill_diagonal(0.0);
    WeightMatrix {
        w,
        theta: DVector::zeros(n),
    }
}

/// Loss of neuron `i` in the linear logistic model; `w_i[i]` is ignored.
pub fn llr_neuron_loss(patterns: &PatternSet, i: usize, w_i: &DVector<f64>, lambda: f64) -> f64 {
    let mut w = w_i.clone();
    w[i] = 0.0;
    let mut loss = 0.5 * lambda * w.norm_squared();
    for xi in patterns.rows() {
        let h: f64 = xi
            .values()
            .iter()
            .zip(w.iter())
            .map(|(&s, wj)| f64::from(s) * wj)
            .sum();
        let t = if xi.values()[i] > 0 { 1.0 } else { 0.0 };
        loss += logistic_nll(h, t);
    }
    loss
}

/// Gradient of [`llr_neuron_loss`]; the self-connection entry is zero.
pub fn llr_neuron_gradient(
    patterns: &PatternSet,
    i: usize,
    w_i: &DVector<f64>,
    lambda: f64,
) -> DVector<f64> {
    let mut w = w_i.clone();
    w[i] = 0.0;
    let mut g = &w * lambda;
    for xi in patterns.rows() {
        let h: f64 = xi
            .values()
            .iter()
            .zip(w.iter())
            .map(|(&s, wj)| f64::from(s) * wj)
            .sum();
        let t = if xi.values()[i] > 0 { 1.0 } else { 0.0 };
        let r = sigmoid(h) - t;
        for (gj, &s) in g.iter_mut().zip(xi.values()) {
            *gj += r * f64::from(s);
        }
    }
    g[i] = 0.0;
    g
}

/// Per-neuron logistic fits over the other N−1 neurons, trained jointly as
/// one full-batch gradient descent (neurons never interact). The result is
/// not symmetrized.
pub fn train_llr(patterns: &PatternSet, config: &LearnConfig) -> Result<WeightMatrix> {
    config.validate()?;
    let n = patterns.n();
    let xi = pattern_matrix(patterns);
    let targets = target_matrix(patterns);
    let mut w = DMatrix::<f64>::zeros(n, n);
    for update in 0..=config.m_updates {
        // h[μ, i] = Σ_j W[i, j] ξ_j^μ
        let h = &xi * w.transpose();
        let loss = h
            .iter()
            .zip(targets.iter())
            .map(|(&h, &t)| logistic_nll(h, t))
            .sum::<f64>()
            + 0.5 * config.lambda * w.norm_squared();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                rule: "llr",
                update,
            });
        }
        if update == config.m_updates {
            break;
        }
        let residual = h.zip_map(&targets, |h, t| sigmoid(h) - t);
        let mut grad = residual.tr_mul(&xi) + &w * config.lambda;
        grad.fill_diagonal(0.0);
        w -= grad * config.beta;
    }
    Ok(WeightMatrix {
        w,
        theta: DVector::zeros(n),
    })
}

/// `L_i(α_i)`: logistic NLL over the stored patterns plus `(λ/2) α_iᵀ K α_i`.
pub fn klr_neuron_loss(
    k: &DMatrix<f64>,
    alpha_i: &DVector<f64>,
    targets_i: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let h = k * alpha_i;
    let nll: f64 = h
        .iter()
        .zip(targets_i.iter())
        .map(|(&h, &t)| logistic_nll(h, t))
        .sum();
    nll + 0.5 * lambda * alpha_i.dot(&h)
}

/// `∇L_i = K(σ(Kα_i) − t_i) + λKα_i`.
pub fn klr_neuron_gradient(
    k: &DMatrix<f64>,
    alpha_i: &DVector<f64>,
    targets_i: &DVector<f64>,
    lambda: f64,
) -> DVector<f64> {
    let h = k * alpha_i;
    let inner = DVector::from_iterator(
        h.len(),
        h.iter()
            .zip(targets_i.iter())
            .zip(alpha_i.iter())
            .map(|((&h, &t), &a)| sigmoid(h) - t + lambda * a),
    );
    k * inner
}

/// Sum of per-neuron losses for the coefficient matrix `alpha` (P×N).
fn klr_loss_from_logits(
    h: &DMatrix<f64>,
    alpha: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let nll: f64 = h
        .iter()
        .zip(targets.iter())
        .map(|(&h, &t)| logistic_nll(h, t))
        .sum();
    nll + 0.5 * lambda * alpha.dot(h)
}

/// Kernel logistic regression from zero coefficients with `m_updates` steps
/// of full-batch gradient descent. All N neuron problems share the Gram
/// matrix and are updated together as the columns of `alpha`.
pub fn train_klr(
    patterns: &PatternSet,
    params: KernelParams,
    config: &LearnConfig,
) -> Result<(DualModel, LearningCurve)> {
    let k = gram(patterns, params);
    train_klr_with_gram(patterns, params, &k, config)
}

pub fn train_klr_with_gram(
    patterns: &PatternSet,
    params: KernelParams,
    k: &GramMatrix,
    config: &LearnConfig,
) -> Result<(DualModel, LearningCurve)> {
    config.validate()?;
    let k = k.matrix();
    let (p, n) = (patterns.p(), patterns.n());
    let targets = target_matrix(patterns);
    let mut alpha = DMatrix::<f64>::zeros(p, n);
    let mut losses = Vec::with_capacity(config.m_updates + 1);
    for update in 0..=config.m_updates {
        let h = k * &alpha;
        let loss = klr_loss_from_logits(&h, &alpha, &targets, config.lambda);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                rule: "klr",
                update,
            });
        }
        losses.push(loss);
        if update == config.m_updates {
            break;
        }
        let mut inner = h;
        for ((v, &t), &a) in inner.iter_mut().zip(targets.iter()).zip(alpha.iter()) {
            *v = sigmoid(*v) - t + config.lambda * a;
        }
        let grad = k * inner;
        alpha -= grad * config.beta;
    }
    let model = DualModel {
        alpha,
        patterns: patterns.clone(),
        params,
        theta: DVector::zeros(n),
    };
    Ok((model, LearningCurve { losses }))
}

pub fn klr_total_loss(model: &DualModel, patterns: &PatternSet, lambda: f64) -> f64 {
    let k = gram(patterns, model.params);
    let h = k.matrix() * &model.alpha;
    klr_loss_from_logits(&h, &model.alpha, &target_matrix(patterns), lambda)
}

/// Kernel ridge regression: solves `(K + λI) α = Y` with one Cholesky
/// factorization reused for all N right-hand sides.
pub fn train_krr(patterns: &PatternSet, params: KernelParams, lambda: f64) -> Result<DualModel> {
    let k = gram(patterns, params);
    train_krr_with_gram(patterns, params, k, lambda)
}

pub fn train_krr_with_gram(
    patterns: &PatternSet,
    params: KernelParams,
    k: GramMatrix,
    lambda: f64,
) -> Result<DualModel> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "KRR requires lambda > 0, got {lambda}"
        )));
    }
    let mut a = k.into_inner();
    for d in 0..a.nrows() {
        a[(d, d)] += lambda;
    }
    let chol = a.cholesky().ok_or(Error::Factorization { lambda })?;
    let alpha = chol.solve(&pattern_matrix(patterns));
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization { lambda });
    }
    Ok(DualModel {
        alpha,
        patterns: patterns.clone(),
        params,
        theta: DVector::zeros(patterns.n()),
    })
}

/// `max |(K + λI) α − Y|` for a KRR model.
pub fn krr_residual(model: &DualModel, lambda: f64) -> f64 {
    let k = gram(&model.patterns, model.params).into_inner();
    let lhs = &k * &model.alpha + &model.alpha * lambda;
    (lhs - pattern_matrix(&model.patterns)).amax()
}

/// Result of a timed training call.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    /// Wall-clock seconds, including the rule's own Gram construction.
    pub seconds: f64,
    pub curve: Option<LearningCurve>,
}

/// Trains any rule; kernel rules require `params`.
pub fn train_rule(
    rule: Rule,
    patterns: &PatternSet,
    params: Option<KernelParams>,
    config: &LearnConfig,
) -> Result<Trained> {
    let kernel = || params.ok_or_else(|| Error::invalid(format!("{rule} needs kernel parameters")));
    let start = Instant::now();
    let (model, curve) = match rule {
        Rule::Hebbian => (Model::Weights(train_hebbian(patterns)), None),
        Rule::Llr => (Model::Weights(train_llr(patterns, config)?), None),
        Rule::Klr => {
            let (m, c) = train_klr(patterns, kernel()?, config)?;
            (Model::Dual(m), Some(c))
        }
        Rule::Krr => (
            Model::Dual(train_krr(patterns, kernel()?, config.lambda)?),
            None,
        ),
    };
    Ok(Trained {
        model,
        seconds: start.elapsed().as_secs_f64(),
        curve,
    })
}

/// Times a kernel training call.
pub fn measure_training(
    rule: Rule,
    patterns: &PatternSet,
    params: KernelParams,
    config: &LearnConfig,
) -> Result<(Model, f64)> {
    if !rule.is_kernel() {
        return Err(Error::invalid(format!(
            "measure_training expects klr or krr, got {rule}"
        )));
    }
    let t = train_rule(rule, patterns, Some(params), config)?;
    Ok((t.model, t.seconds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::{generate_patterns, State};
    use approx::assert_relative_eq;
    use std::f64::consts::LN_2;

    /// Term-by-term loss with explicit logs, independent of the softplus path.
    fn naive_klr_total(
        patterns: &PatternSet,
        k: &DMatrix<f64>,
        alpha: &DMatrix<f64>,
        lambda: f64,
    ) -> f64 {
        let (p, n) = (patterns.p(), patterns.n());
        let mut total = 0.0;
        for i in 0..n {
            let mut li = 0.0;
            for mu in 0..p {
                let mut h = 0.0;
                for nu in 0..p {
                    h += alpha[(nu, i)] * k[(mu, nu)];
                }
                let t = (f64::from(patterns.row(mu).values()[i]) + 1.0) / 2.0;
                let s = 1.0 / (1.0 + (-h).exp());
                li -= t * s.ln() + (1.0 - t) * (1.0 - s).ln();
            }
            let mut reg = 0.0;
            for mu in 0..p {
                for nu in 0..p {
                    reg += alpha[(mu, i)] * k[(mu, nu)] * alpha[(nu, i)];
                }
            }
            total += li + 0.5 * lambda * reg;
        }
        total
    }

    fn central_diff(
        f: impl Fn(&DVector<f64>) -> f64,
        x: &DVector<f64>,
        skip: Option<usize>,
    ) -> DVector<f64> {
        let h = 1e-5;
        DVector::from_fn(x.len(), |j, _| {
            if Some(j) == skip {
                return 0.0;
            }
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
    }

    fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-12)
    }

    #[test]
    fn hebbian_two_neurons() {
        let ps = PatternSet::from_rows(vec![State::new(vec![1, -1]).unwrap()], 0).unwrap();
        let w = train_hebbian(&ps);
        assert_eq!(w.w, DMatrix::from_row_slice(2, 2, &[0.0, -0.5, -0.5, 0.0]));
    }

    #[test]
    fn hebbian_matches_triple_loop() {
        let ps = generate_patterns(100, 5, 11).unwrap();
        let w = train_hebbian(&ps);
        for i in 0..100 {
            for j in 0..100 {
                let mut acc = 0.0;
                if i != j {
                    for mu in 0..5 {
                        acc +=
                            f64::from(ps.row(mu).values()[i]) * f64::from(ps.row(mu).values()[j]);
                    }
                    acc /= 100.0;
                }
                assert_relative_eq!(w.w[(i, j)], acc, epsilon = 1e-15);
                assert_eq!(w.w[(i, j)], w.w[(j, i)]);
            }
        }
    }

    #[test]
    fn llr_single_pattern_is_stable() {
        let ps = generate_patterns(30, 1, 5).unwrap();
        let w = train_llr(&ps, &LearnConfig::default()).unwrap();
        let xi = ps.row(0).to_f64();
        for i in 0..30 {
            assert_eq!(w.w[(i, i)], 0.0);
            let h: f64 = (0..30).map(|j| w.w[(i, j)] * xi[j]).sum();
            assert_eq!(h >= 0.0, xi[i] > 0.0);
        }
    }

    #[test]
    fn llr_zero_step_stays_zero() {
        let ps = generate_patterns(12, 4, 5).unwrap();
        let cfg = LearnConfig {
            beta: 0.0,
            m_updates: 17,
            lambda: 0.01,
        };
        let w = train_llr(&ps, &cfg).unwrap();
        assert!(w.w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn llr_gradient_matches_finite_differences() {
        let ps = generate_patterns(20, 2, 3).unwrap();
        let lambda = 0.01;
        let w = train_llr(&ps, &LearnConfig::default()).unwrap();
        for i in [0, 7, 19] {
            // at zero and at the trained weights
            for w_i in [DVector::zeros(20), w.w.row(i).transpose()] {
                let g = llr_neuron_gradient(&ps, i, &w_i, lambda);
                let fd = central_diff(|x| llr_neuron_loss(&ps, i, x, lambda), &w_i, Some(i));
                assert!(rel_err(&g, &fd) < 1e-5, "neuron {i}: {}", rel_err(&g, &fd));
            }
        }
    }

    #[test]
    fn llr_batched_gradient_matches_per_neuron() {
        let ps = generate_patterns(15, 6, 8).unwrap();
        let cfg = LearnConfig {
            beta: 0.05,
            m_updates: 1,
            lambda: 0.3,
        };
        // one step from zero: W = −β·G(0)
        let w = train_llr(&ps, &cfg).unwrap();
        for i in 0..15 {
            let g = llr_neuron_gradient(&ps, i, &DVector::zeros(15), 0.3);
            for j in 0..15 {
                assert_relative_eq!(w.w[(i, j)], -0.05 * g[j], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn klr_zero_step_and_initial_loss() {
        let ps = generate_patterns(20, 5, 1).unwrap();
        let params = KernelParams::new(0.1).unwrap();
        let cfg = LearnConfig {
            beta: 0.0,
            m_updates: 5,
            lambda: 0.01,
        };
        let (m, curve) = train_klr(&ps, params, &cfg).unwrap();
        assert!(m.alpha.iter().all(|&v| v == 0.0));
        let expected = 20.0 * 5.0 * LN_2;
        assert_eq!(curve.losses.len(), 6);
        for l in curve.losses {
            assert_relative_eq!(l, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn klr_single_pattern_signs() {
        let ps = generate_patterns(25, 1, 9).unwrap();
        let (m, _) = train_klr(
            &ps,
            KernelParams::new(0.7).unwrap(),
            &LearnConfig::default(),
        )
        .unwrap();
        for i in 0..25 {
            assert_eq!(m.alpha[(0, i)] > 0.0, ps.row(0).values()[i] > 0);
        }
    }

    #[test]
    fn klr_gradient_matches_finite_differences() {
        let ps = generate_patterns(20, 5, 4).unwrap();
        let params = KernelParams::new(0.1).unwrap();
        let lambda = 0.01;
        let k = gram(&ps, params).into_inner();
        let t = target_matrix(&ps);
        let cfg = LearnConfig {
            m_updates: 10,
            ..LearnConfig::default()
        };
        let (trained, _) = train_klr(&ps, params, &cfg).unwrap();
        for i in 0..20 {
            let ti = t.column(i).into_owned();
            for a in [DVector::zeros(5), trained.alpha.column(i).into_owned()] {
                let g = klr_neuron_gradient(&k, &a, &ti, lambda);
                let fd = central_diff(|x| klr_neuron_loss(&k, x, &ti, lambda), &a, None);
                assert!(rel_err(&g, &fd) < 1e-5, "neuron {i}: {}", rel_err(&g, &fd));
            }
        }
    }

    #[test]
    fn klr_total_loss_matches_naive_sum() {
        let ps = generate_patterns(20, 5, 6).unwrap();
        let params = KernelParams::new(0.05).unwrap();
        let (m, curve) = train_klr(&ps, params, &LearnConfig::default()).unwrap();
        let k = gram(&ps, params).into_inner();
        let naive = naive_klr_total(&ps, &k, &m.alpha, 0.01);
        let fast = klr_total_loss(&m, &ps, 0.01);
        assert_relative_eq!(fast, naive, max_relative = 1e-10);
        assert_relative_eq!(*curve.losses.last().unwrap(), fast, max_relative = 1e-12);
        assert!(curve.is_nonincreasing_after_first());

        let zero = DualModel {
            alpha: DMatrix::zeros(5, 20),
            ..m.clone()
        };
        assert_relative_eq!(
            klr_total_loss(&zero, &ps, 0.01),
            100.0 * LN_2,
            max_relative = 1e-12
        );
        assert!(klr_total_loss(&m, &ps, 0.0) > 0.0);
    }

    #[test]
    fn krr_scalar_case() {
        let ps = generate_patterns(9, 1, 2).unwrap();
        let lambda = 0.25;
        let m = train_krr(&ps, KernelParams::new(0.1).unwrap(), lambda).unwrap();
        for i in 0..9 {
            assert_relative_eq!(
                m.alpha[(0, i)],
                f64::from(ps.row(0).values()[i]) / 1.25,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn krr_large_lambda_limit() {
        let ps = generate_patterns(30, 8, 2).unwrap();
        let lambda = 1e6;
        let m = train_krr(&ps, KernelParams::new(0.05).unwrap(), lambda).unwrap();
        let y = pattern_matrix(&ps);
        // α = (K + λI)^{-1} Y ≈ Y/λ with relative error O(‖K‖/λ)
        let err = (&m.alpha * lambda - y).amax();
        assert!(err < 1e-4, "{err}");
    }

    /// Gaussian elimination with partial pivoting, one RHS at a time.
    #[allow(clippy::needless_range_loop)]
    fn dense_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut out = DMatrix::zeros(n, b.ncols());
        for col in 0..b.ncols() {
            let mut m: Vec<Vec<f64>> = (0..n)
                .map(|r| (0..n).map(|c| a[(r, c)]).chain([b[(r, col)]]).collect())
                .collect();
            for piv in 0..n {
                let best = (piv..n)
                    .max_by(|&x, &y| m[x][piv].abs().total_cmp(&m[y][piv].abs()))
                    .unwrap();
                m.swap(piv, best);
                for r in (piv + 1)..n {
                    let f = m[r][piv] / m[piv][piv];
                    for c in piv..=n {
                        m[r][c] -= f * m[piv][c];
                    }
                }
            }
            for r in (0..n).rev() {
                let mut s = m[r][n];
                for c in (r + 1)..n {
                    s -= m[r][c] * out[(c, col)];
                }
                out[(r, col)] = s / m[r][r];
            }
        }
        out
    }

    #[test]
    fn krr_matches_independent_solver() {
        let ps = generate_patterns(50, 20, 2).unwrap();
        let params = KernelParams::new(0.04).unwrap();
        let m = train_krr(&ps, params, 0.01).unwrap();
        let mut a = gram(&ps, params).into_inner();
        for d in 0..20 {
            a[(d, d)] += 0.01;
        }
        let oracle = dense_solve(&a, &pattern_matrix(&ps));
        assert!((&m.alpha - oracle).amax() < 1e-8);
        assert!(krr_residual(&m, 0.01) < 1e-8);
    }

    #[test]
    fn krr_rejects_nonpositive_lambda() {
        let ps = generate_patterns(10, 3, 2).unwrap();
        let params = KernelParams::new(0.1).unwrap();
        assert!(train_krr(&ps, params, 0.0).is_err());
        assert!(train_krr(&ps, params, -1.0).is_err());
    }

    #[test]
    fn timing_is_deterministic_in_model() {
        let ps = generate_patterns(100, 1, 2).unwrap();
        let params = KernelParams::new(0.02).unwrap();
        let cfg = LearnConfig::default();
        for rule in [Rule::Klr, Rule::Krr] {
            let (a, ta) = measure_training(rule, &ps, params, &cfg).unwrap();
            let (b, tb) = measure_training(rule, &ps, params, &cfg).unwrap();
            assert_eq!(a, b);
            assert!(ta < 1.0 && tb < 1.0);
        }
        assert!(measure_training(Rule::Hebbian, &ps, params, &cfg).is_err());
    }

    #[test]
    fn rule_parsing() {
        for r in [Rule::Hebbian, Rule::Llr, Rule::Klr, Rule::Krr] {
            assert_eq!(r.as_str().parse::<Rule>().unwrap(), r);
        }
        assert!("svm".parse::<Rule>().is_err());
    }
}
