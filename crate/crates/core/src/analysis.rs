//! Final-state classification and trial statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dynamics::{Network, Outcome, RecallTrace};
use crate::error::{Error, Result};
use crate::learning::{Model, Rule};
use crate::patterns::{PatternSet, State};

/// Strict, equality-based class of a recall trial's final state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Target,
    OtherLearned,
    SpuriousFixedPoint,
    SpuriousCycle,
    NotConverged,
}

impl Classification {
    pub const ALL: [Classification; 5] = [
        Classification::Target,
        Classification::OtherLearned,
        Classification::SpuriousFixedPoint,
        Classification::SpuriousCycle,
        Classification::NotConverged,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Target => "target",
            Classification::OtherLearned => "other_learned",
            Classification::SpuriousFixedPoint => "spurious_fixed_point",
            Classification::SpuriousCycle => "spurious_cycle",
            Classification::NotConverged => "not_converged",
        }
    }

    pub fn is_spurious(self) -> bool {
        matches!(
            self,
            Classification::SpuriousFixedPoint | Classification::SpuriousCycle
        )
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Classification {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Classification::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown classification `{s}`")))
    }
}

/// Not-converged trials stay `NotConverged`; otherwise the detected final
/// state is compared for exact equality with the stored patterns (target
/// first), and unmatched finals are spurious by outcome kind.
pub fn classify(trace: &RecallTrace, patterns: &PatternSet, target: usize) -> Classification {
    if trace.outcome == Outcome::NotConverged {
        return Classification::NotConverged;
    }
    if &trace.final_state == patterns.row(target) {
        return Classification::Target;
    }
    if patterns.find_exact(&trace.final_state, target).is_some() {
        return Classification::OtherLearned;
    }
    match trace.outcome {
        Outcome::FixedPoint => Classification::SpuriousFixedPoint,
        Outcome::LimitCycle { .. } => Classification::SpuriousCycle,
        Outcome::NotConverged => unreachable!(),
    }
}

/// One recall trial with the condition it ran under.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub master_seed: u64,
    pub n: usize,
    pub p: usize,
    pub load: f64,
    pub similarity: f64,
    pub rule: Rule,
    pub gamma: f64,
    pub lambda: f64,
    pub pattern_idx: usize,
    pub trial_idx: usize,
    pub classification: Classification,
    pub outcome: Outcome,
    pub steps: usize,
    pub hamming_nearest: usize,
    pub nearest_idx: usize,
}

/// Condition fields shared by every trial of a (model, similarity) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialContext {
    pub master_seed: u64,
    pub load: f64,
    pub similarity: f64,
    pub rule: Rule,
    pub gamma: f64,
    pub lambda: f64,
}

impl TrialRecord {
    pub fn from_trace(
        ctx: &TrialContext,
        patterns: &PatternSet,
        pattern_idx: usize,
        trial_idx: usize,
        trace: &RecallTrace,
    ) -> Self {
        let classification = classify(trace, patterns, pattern_idx);
        let (hamming_nearest, nearest_idx) = patterns.nearest(&trace.final_state, pattern_idx);
        TrialRecord {
            master_seed: ctx.master_seed,
            n: patterns.n(),
            p: patterns.p(),
            load: ctx.load,
            similarity: ctx.similarity,
            rule: ctx.rule,
            gamma: ctx.gamma,
            lambda: ctx.lambda,
            pattern_idx,
            trial_idx,
            classification,
            outcome: trace.outcome,
            steps: trace.steps,
            hamming_nearest,
            nearest_idx,
        }
    }
}

/// Mean over master seeds with a 95% Student-t half-width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// NaN when fewer than two seeds contribute.
    pub half_width: f64,
    pub per_seed: Vec<f64>,
}

impl Stat {
    fn from_per_seed(per_seed: Vec<f64>) -> Self {
        let finite: Vec<f64> = per_seed.iter().copied().filter(|v| v.is_finite()).collect();
        let (mean, half_width) = match finite.len() {
            0 => (f64::NAN, f64::NAN),
            1 => (finite[0], f64::NAN),
            _ => confidence_interval(&finite).expect("two or more values"),
        };
        Stat {
            mean,
            half_width,
            per_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub seeds: Vec<u64>,
    pub trials_per_seed: Vec<usize>,
    pub target_recall_rate: Stat,
    pub other_learned_rate: Stat,
    pub spurious_fixed_point_rate: Stat,
    pub spurious_cycle_rate: Stat,
    /// Trials whose dynamics ended in a limit cycle, whatever the final state.
    pub cycle_rate: Stat,
    pub not_converged_rate: Stat,
    pub fixed_point_rate: Stat,
    /// Averaged over converged trials only; NaN for a seed without any.
    pub avg_steps_to_converge: Stat,
}

/// `mean ± t_{0.975, n−1} · sd / √n` with the sample standard deviation.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::invalid(
            "confidence interval needs at least two values",
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("valid degrees of freedom")
        .inverse_cdf(0.975);
    Ok((mean, t * var.sqrt() / n.sqrt()))
}

#[derive(Default)]
struct SeedCounts {
    trials: usize,
    classes: BTreeMap<Classification, usize>,
    cycles: usize,
    not_converged: usize,
    converged_steps: usize,
    converged: usize,
}

/// Per-seed trial proportions folded into across-seed statistics.
pub fn aggregate(records: &[TrialRecord]) -> Result<MetricsSummary> {
    if records.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty record set"));
    }
    let mut by_seed: BTreeMap<u64, SeedCounts> = BTreeMap::new();
    for r in records {
        let c = by_seed.entry(r.master_seed).or_default();
        c.trials += 1;
        *c.classes.entry(r.classification).or_default() += 1;
        match r.outcome {
            Outcome::FixedPoint => {}
            Outcome::LimitCycle { .. } => c.cycles += 1,
            Outcome::NotConverged => c.not_converged += 1,
        }
        if r.outcome.converged() {
            c.converged += 1;
            c.converged_steps += r.steps;
        }
    }
    let rate = |f: &dyn Fn(&SeedCounts) -> usize| -> Stat {
        Stat::from_per_seed(
            by_seed
                .values()
                .map(|c| f(c) as f64 / c.trials as f64)
                .collect(),
        )
    };
    let class = |k: Classification| move |c: &SeedCounts| c.classes.get(&k).copied().unwrap_or(0);
    Ok(MetricsSummary {
        seeds: by_seed.keys().copied().collect(),
        trials_per_seed: by_seed.values().map(|c| c.trials).collect(),
        target_recall_rate: rate(&class(Classification::Target)),
        other_learned_rate: rate(&class(Classification::OtherLearned)),
        spurious_fixed_point_rate: rate(&class(Classification::SpuriousFixedPoint)),
        spurious_cycle_rate: rate(&class(Classification::SpuriousCycle)),
        cycle_rate: rate(&|c| c.cycles),
        not_converged_rate: rate(&|c| c.not_converged),
        fixed_point_rate: Stat::from_per_seed(
            by_seed
                .values()
                .map(|c| {
                    1.0 - (c.cycles as f64 / c.trials as f64
                        + c.not_converged as f64 / c.trials as f64)
                })
                .collect(),
        ),
        avg_steps_to_converge: Stat::from_per_seed(
            by_seed
                .values()
                .map(|c| {
                    if c.converged == 0 {
                        f64::NAN
                    } else {
                        c.converged_steps as f64 / c.converged as f64
                    }
                })
                .collect(),
        ),
    })
}

/// Distance-to-nearest-pattern distributions of failed (non-target) trials.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HammingHistogram {
    pub by_class: BTreeMap<Classification, BTreeMap<usize, usize>>,
    pub min_spurious_distance: Option<usize>,
}

impl HammingHistogram {
    pub fn is_empty(&self) -> bool {
        self.by_class.is_empty()
    }

    pub fn count(&self, class: Classification) -> usize {
        self.by_class
            .get(&class)
            .map(|h| h.values().sum())
            .unwrap_or(0)
    }
}

pub fn hamming_validation<'a>(
    records: impl IntoIterator<Item = &'a TrialRecord>,
) -> HammingHistogram {
    let mut out = HammingHistogram::default();
    for r in records {
        if r.classification == Classification::Target {
            continue;
        }
        *out.by_class
            .entry(r.classification)
            .or_default()
            .entry(r.hamming_nearest)
            .or_default() += 1;
        if r.classification.is_spurious() {
            out.min_spurious_distance = Some(
                out.min_spurious_distance
                    .map_or(r.hamming_nearest, |m| m.min(r.hamming_nearest)),
            );
        }
    }
    out
}

/// Every state `s` of an N ≤ 24 network with `step(s) = s`, by exhaustive
/// enumeration in bit order.
pub fn enumerate_fixed_points(model: &Model) -> Result<Vec<State>> {
    let n = model.n();
    if n > 24 {
        return Err(Error::invalid(format!(
            "exhaustive enumeration limited to N <= 24, got {n}"
        )));
    }
    let net = Network::new(model);
    let theta = model.theta();
    let mut out = Vec::new();
    for bits in 0..(1u64 << n) {
        let s = State::from_bits(bits, n);
        if net.step(&s, theta)? == s {
            out.push(s);
        }
    }
    Ok(out)
}

/// Fixed points reached by recall from every one of the 2^N states, split
/// into learned patterns and spurious states.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FixedPointInventory {
    pub learned: BTreeSet<usize>,
    pub spurious: BTreeSet<State>,
}

impl FixedPointInventory {
    pub fn states(&self, patterns: &PatternSet) -> BTreeSet<State> {
        self.learned
            .iter()
            .map(|&mu| patterns.row(mu).clone())
            .chain(self.spurious.iter().cloned())
            .collect()
    }
}

pub fn fixed_point_inventory(
    model: &Model,
    patterns: &PatternSet,
    max_steps: usize,
) -> Result<FixedPointInventory> {
    let n = model.n();
    if n > 24 {
        return Err(Error::invalid(format!(
            "exhaustive inventory limited to N <= 24, got {n}"
        )));
    }
    let net = Network::new(model);
    let dyn_params = crate::dynamics::DynParams { max_steps };
    let mut inv = FixedPointInventory::default();
    for bits in 0..(1u64 << n) {
        let trace = net.recall(&State::from_bits(bits, n), dyn_params)?;
        if trace.outcome != Outcome::FixedPoint {
            continue;
        }
        match patterns.find_exact(&trace.final_state, 0) {
            Some(mu) => {
                inv.learned.insert(mu);
            }
            None => {
                inv.spurious.insert(trace.final_state);
            }
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynParams;
    use crate::kernel::KernelParams;
    use crate::learning::{train_hebbian, train_klr, LearnConfig};
    use crate::patterns::{corrupt, generate_patterns};
    use approx::assert_relative_eq;

    fn trace(final_state: State, outcome: Outcome) -> RecallTrace {
        RecallTrace {
            initial: final_state.clone(),
            final_state,
            outcome,
            steps: 1,
            visited_count: 1,
        }
    }

    fn record(seed: u64, class: Classification, outcome: Outcome, steps: usize) -> TrialRecord {
        TrialRecord {
            master_seed: seed,
            n: 10,
            p: 2,
            load: 0.2,
            similarity: 1.0,
            rule: Rule::Klr,
            gamma: 0.1,
            lambda: 0.01,
            pattern_idx: 0,
            trial_idx: 0,
            classification: class,
            outcome,
            steps,
            hamming_nearest: 0,
            nearest_idx: 0,
        }
    }

    #[test]
    fn classify_examples() {
        let ps = generate_patterns(30, 4, 2).unwrap();
        let fp = Outcome::FixedPoint;
        assert_eq!(
            classify(&trace(ps.row(1).clone(), fp), &ps, 1),
            Classification::Target
        );
        assert_eq!(
            classify(&trace(ps.row(3).clone(), fp), &ps, 1),
            Classification::OtherLearned
        );
        let near = corrupt(ps.row(1), 1.0 - 2.0 / 30.0, 5).unwrap();
        assert_eq!(crate::patterns::hamming(&near, ps.row(1)).unwrap(), 1);
        assert_eq!(
            classify(&trace(near.clone(), fp), &ps, 1),
            Classification::SpuriousFixedPoint
        );
        assert_eq!(
            classify(
                &trace(near.clone(), Outcome::LimitCycle { period: 2 }),
                &ps,
                1
            ),
            Classification::SpuriousCycle
        );
        assert_eq!(
            classify(&trace(ps.row(1).clone(), Outcome::NotConverged), &ps, 1),
            Classification::NotConverged
        );
    }

    #[test]
    fn record_consistency() {
        let ps = generate_patterns(30, 4, 2).unwrap();
        let ctx = TrialContext {
            master_seed: 1,
            load: 0.1,
            similarity: 1.0,
            rule: Rule::Hebbian,
            gamma: f64::NAN,
            lambda: 0.0,
        };
        let r = TrialRecord::from_trace(
            &ctx,
            &ps,
            2,
            0,
            &trace(ps.row(2).clone(), Outcome::FixedPoint),
        );
        assert_eq!(
            (r.classification, r.hamming_nearest, r.nearest_idx),
            (Classification::Target, 0, 2)
        );
        let r = TrialRecord::from_trace(
            &ctx,
            &ps,
            2,
            0,
            &trace(ps.row(0).clone(), Outcome::FixedPoint),
        );
        assert_eq!(
            (r.classification, r.hamming_nearest, r.nearest_idx),
            (Classification::OtherLearned, 0, 0)
        );
    }

    #[test]
    fn ci_examples() {
        let (m, hw) = confidence_interval(&[0.3, 0.3, 0.3]).unwrap();
        assert_eq!((m, hw), (0.3, 0.0));

        let (m, hw) = confidence_interval(&[0.0, 1.0]).unwrap();
        assert_eq!(m, 0.5);
        // t_{0.975,1} = 12.7062047, sd = 0.7071068
        assert_relative_eq!(
            hw,
            12.706_204_736 * 0.5f64.sqrt() / 2f64.sqrt(),
            max_relative = 1e-8
        );
        assert_relative_eq!(hw, 6.353, max_relative = 1e-4);

        let (m, hw) = confidence_interval(&[1.0, 1.0, 1.0, 1.0, 0.9]).unwrap();
        assert_relative_eq!(m, 0.98, max_relative = 1e-12);
        // sd = 0.0447214, t_{0.975,4} = 2.7764451
        assert_relative_eq!(
            hw,
            2.776_445_105 * 0.002f64.sqrt() / 5f64.sqrt(),
            max_relative = 1e-8
        );
        assert!((hw - 0.0555).abs() < 1e-4);

        assert!(confidence_interval(&[1.0]).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let recs: Vec<_> = (0..5)
            .flat_map(|s| {
                (0..4).map(move |_| record(s, Classification::Target, Outcome::FixedPoint, 2))
            })
            .collect();
        let m = aggregate(&recs).unwrap();
        assert_eq!(m.target_recall_rate.mean, 1.0);
        assert_eq!(m.target_recall_rate.half_width, 0.0);
        assert_eq!(m.avg_steps_to_converge.mean, 2.0);

        // per-seed rates {1,1,1,1,0.9}
        let mut recs = Vec::new();
        for s in 0..5u64 {
            for t in 0..10 {
                let class = if s == 4 && t == 0 {
                    Classification::OtherLearned
                } else {
                    Classification::Target
                };
                recs.push(record(s, class, Outcome::FixedPoint, 1));
            }
        }
        let m = aggregate(&recs).unwrap();
        assert_relative_eq!(m.target_recall_rate.mean, 0.98, max_relative = 1e-12);
        assert!((m.target_recall_rate.half_width - 0.0555).abs() < 1e-4);

        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn aggregate_without_converged_trials() {
        let recs: Vec<_> = (0..3)
            .map(|s| record(s, Classification::NotConverged, Outcome::NotConverged, 30))
            .collect();
        let m = aggregate(&recs).unwrap();
        assert!(m.avg_steps_to_converge.mean.is_nan());
        assert_eq!(m.not_converged_rate.mean, 1.0);
        assert_eq!(m.fixed_point_rate.mean, 0.0);
    }

    #[test]
    fn rates_partition_per_seed() {
        let classes = [
            (Classification::Target, Outcome::FixedPoint),
            (Classification::OtherLearned, Outcome::FixedPoint),
            (Classification::SpuriousFixedPoint, Outcome::FixedPoint),
            (
                Classification::SpuriousCycle,
                Outcome::LimitCycle { period: 2 },
            ),
            (Classification::NotConverged, Outcome::NotConverged),
        ];
        let mut recs = Vec::new();
        for s in 0..4u64 {
            for i in 0..(17 + s as usize) {
                let (c, o) = classes[(i * 7 + s as usize) % 5];
                recs.push(record(s, c, o, 3));
            }
        }
        let m = aggregate(&recs).unwrap();
        for k in 0..4 {
            let sum = m.target_recall_rate.per_seed[k]
                + m.other_learned_rate.per_seed[k]
                + m.spurious_fixed_point_rate.per_seed[k]
                + m.spurious_cycle_rate.per_seed[k]
                + m.not_converged_rate.per_seed[k];
            assert!((sum - 1.0).abs() < 1e-12);
            assert_eq!(
                m.fixed_point_rate.per_seed[k],
                1.0 - (m.cycle_rate.per_seed[k] + m.not_converged_rate.per_seed[k])
            );
            let fixed = recs
                .iter()
                .filter(|r| r.master_seed == k as u64 && r.outcome == Outcome::FixedPoint)
                .count();
            let total = recs.iter().filter(|r| r.master_seed == k as u64).count();
            assert!((m.fixed_point_rate.per_seed[k] - fixed as f64 / total as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_examples() {
        assert!(hamming_validation(&[]).is_empty());
        let mut a = record(1, Classification::OtherLearned, Outcome::FixedPoint, 1);
        a.nearest_idx = 1;
        let mut b = record(
            1,
            Classification::SpuriousFixedPoint,
            Outcome::FixedPoint,
            1,
        );
        b.hamming_nearest = 17;
        let mut c = record(
            1,
            Classification::SpuriousFixedPoint,
            Outcome::FixedPoint,
            1,
        );
        c.hamming_nearest = 12;
        let t = record(1, Classification::Target, Outcome::FixedPoint, 1);
        let h = hamming_validation(&[a, b, c, t]);
        assert_eq!(
            h.by_class[&Classification::OtherLearned]
                .keys()
                .collect::<Vec<_>>(),
            vec![&0]
        );
        assert_eq!(h.count(Classification::SpuriousFixedPoint), 2);
        assert_eq!(h.count(Classification::Target), 0);
        assert_eq!(h.min_spurious_distance, Some(12));
    }

    #[test]
    fn inventory_matches_enumeration() {
        for (n, p, seed) in [(8, 2, 1), (10, 3, 2), (12, 4, 3)] {
            let ps = generate_patterns(n, p, seed).unwrap();
            let models = [
                Model::Weights(train_hebbian(&ps)),
                Model::Dual(
                    train_klr(
                        &ps,
                        KernelParams::from_scaling(2.0, n).unwrap(),
                        &LearnConfig::default(),
                    )
                    .unwrap()
                    .0,
                ),
            ];
            for m in &models {
                let all: BTreeSet<State> = enumerate_fixed_points(m).unwrap().into_iter().collect();
                let inv = fixed_point_inventory(m, &ps, DynParams::default().max_steps).unwrap();
                assert_eq!(inv.states(&ps), all);
            }
        }
    }

    #[test]
    fn classification_names_roundtrip() {
        for c in Classification::ALL {
            assert_eq!(c.as_str().parse::<Classification>().unwrap(), c);
        }
    }
}
