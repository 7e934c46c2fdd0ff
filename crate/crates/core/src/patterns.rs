//! Bipolar states, random pattern sets and controlled corruption.

use std::fmt;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A network state: one entry in {-1, +1} per neuron.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct State(Vec<i8>);

impl State {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::invalid(format!("state entry {bad} is not bipolar")));
        }
        Ok(State(values))
    }

    pub fn all_plus(n: usize) -> Self {
        State(vec![1; n])
    }

    /// Bipolar state from signs, with sign(0) = +1.
    pub fn from_signs(values: impl IntoIterator<Item = f64>) -> Self {
        State(
            values
                .into_iter()
                .map(|v| if v >= 0.0 { 1 } else { -1 })
                .collect(),
        )
    }

    /// Decode bit `i` of `bits` as neuron `i` (1 => +1).
    pub fn from_bits(bits: u64, n: usize) -> Self {
        State(
            (0..n)
                .map(|i| if bits >> i & 1 == 1 { 1 } else { -1 })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn negated(&self) -> Self {
        State(self.0.iter().map(|v| -v).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn packed(&self) -> Vec<u64> {
        pack(&self.0)
    }

    /// Parse a `+`/`-` string such as `"+-++-"`.
    pub fn parse_signs(s: &str) -> Result<Self> {
        s.trim()
            .chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(Error::invalid(format!(
                    "unexpected character {other:?} in state"
                ))),
            })
            .collect::<Result<Vec<i8>>>()
            .map(State)
    }
}

impl TryFrom<Vec<i8>> for State {
    type Error = Error;
    fn try_from(v: Vec<i8>) -> Result<Self> {
        State::new(v)
    }
}

impl From<State> for Vec<i8> {
    fn from(s: State) -> Self {
        s.0
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &v in &self.0 {
            f.write_str(if v > 0 { "+" } else { "-" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "State({self})")
    }
}

/// Packs a bipolar vector into words, bit set iff the entry is +1.
pub(crate) fn pack(values: &[i8]) -> Vec<u64> {
    let mut words = vec![0u64; values.len().div_ceil(64)];
    for (i, &v) in values.iter().enumerate() {
        if v > 0 {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

pub(crate) fn packed_hamming(a: &[u64], b: &[u64]) -> usize {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x ^ y).count_ones() as usize)
        .sum()
}

/// P stored bipolar patterns of dimension N.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PatternSetRepr", into = "PatternSetRepr")]
pub struct PatternSet {
    n: usize,
    p: usize,
    seed: u64,
    rows: Vec<State>,
    packed: Vec<Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
struct PatternSetRepr {
    n: usize,
    p: usize,
    seed: u64,
    rows: Vec<String>,
}

impl TryFrom<PatternSetRepr> for PatternSet {
    type Error = Error;
    fn try_from(r: PatternSetRepr) -> Result<Self> {
        let rows = r
            .rows
            .iter()
            .map(|s| State::parse_signs(s))
            .collect::<Result<Vec<_>>>()?;
        if rows.len() != r.p {
            return Err(Error::DimensionMismatch {
                expected: r.p,
                found: rows.len(),
            });
        }
        PatternSet::from_rows(rows, r.seed)
    }
}

impl From<PatternSet> for PatternSetRepr {
    fn from(ps: PatternSet) -> Self {
        PatternSetRepr {
            n: ps.n,
            p: ps.p,
            seed: ps.seed,
            rows: ps.rows.iter().map(|r| r.to_string()).collect(),
        }
    }
}

impl fmt::Debug for PatternSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PatternSet")
            .field("n", &self.n)
            .field("p", &self.p)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl PatternSet {
    /// Builds a set from explicit rows. `seed` is recorded but not used.
    pub fn from_rows(rows: Vec<State>, seed: u64) -> Result<Self> {
        let n = rows.first().map(State::len).unwrap_or(0);
        if n < 2 || rows.is_empty() {
            return Err(Error::invalid("pattern set needs n >= 2 and p >= 1"));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bad.len(),
            });
        }
        let packed = rows.iter().map(State::packed).collect();
        Ok(PatternSet {
            n,
            p: rows.len(),
            seed,
            rows,
            packed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rows(&self) -> &[State] {
        &self.rows
    }

    pub fn row(&self, mu: usize) -> &State {
        &self.rows[mu]
    }

    pub(crate) fn packed_row(&self, mu: usize) -> &[u64] {
        &self.packed[mu]
    }

    /// Index of the exactly matching pattern, preferring `prefer` on duplicates.
    pub fn find_exact(&self, state: &State, prefer: usize) -> Option<usize> {
        if prefer < self.p && &self.rows[prefer] == state {
            return Some(prefer);
        }
        self.rows.iter().position(|r| r == state)
    }

    /// `(distance, index)` of the nearest stored pattern. Ties go to `prefer`,
    /// then to the lowest index.
    pub fn nearest(&self, state: &State, prefer: usize) -> (usize, usize) {
        let packed = state.packed();
        let mut best = (usize::MAX, usize::MAX);
        for mu in 0..self.p {
            let d = packed_hamming(&packed, &self.packed[mu]);
            if d < best.0 || (d == best.0 && mu == prefer) {
                best = (d, mu);
            }
        }
        best
    }
}

/// Draws P patterns of N i.i.d. fair ±1 entries.
///
/// The stream for `seed` is consumed row by row, 64 entries per `u64` draw,
/// least significant bit first (bit 1 => +1).
pub fn generate_patterns(n: usize, p: usize, seed: u64) -> Result<PatternSet> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "pattern dimension must be >= 2, got {n}"
        )));
    }
    if p == 0 {
        return Err(Error::invalid("pattern count must be >= 1"));
    }
    let mut rng = rng::stream(seed);
    let rows = (0..p)
        .map(|_| {
            let mut values = Vec::with_capacity(n);
            while values.len() < n {
                let word = rng.next_u64();
                let take = (n - values.len()).min(64);
                values.extend((0..take).map(|b| if word >> b & 1 == 1 { 1i8 } else { -1 }));
            }
            State(values)
        })
        .collect();
    PatternSet::from_rows(rows, seed)
}

/// Number of bits flipped to reach `similarity`: round-half-up of N(1-m)/2.
pub fn flip_count(n: usize, similarity: f64) -> usize {
    let k = (n as f64 * (1.0 - similarity) / 2.0 + 0.5).floor() as usize;
    k.min(n)
}

/// Copy of `pattern` with exactly `flip_count(N, similarity)` distinct entries
/// sign-flipped, positions drawn uniformly without replacement.
pub fn corrupt(pattern: &State, similarity: f64, seed: u64) -> Result<State> {
    if !(0.0..=1.0).contains(&similarity) {
        return Err(Error::invalid(format!(
            "similarity must lie in [0, 1], got {similarity}"
        )));
    }
    let n = pattern.len();
    let k = flip_count(n, similarity);
    let mut out = pattern.clone();
    if k == 0 {
        return Ok(out);
    }
    let mut rng = rng::stream(seed);
    let mut positions: Vec<usize> = (0..n).collect();
    let (chosen, _) = positions.partial_shuffle(&mut rng, k);
    for &i in chosen.iter() {
        out.0[i] = -out.0[i];
    }
    Ok(out)
}

pub fn hamming(a: &State, b: &State) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.0.iter().zip(&b.0).filter(|(x, y)| x != y).count())
}

pub fn overlap(a: &State, b: &State) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let dot: i64 = a.0.iter().zip(&b.0).map(|(&x, &y)| i64::from(x * y)).sum();
    Ok(dot as f64 / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(v: &[i8]) -> State {
        State::new(v.to_vec()).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_patterns(100, 50, 7).unwrap();
        let b = generate_patterns(100, 50, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_patterns(100, 50, 8).unwrap());
    }

    #[test]
    fn generation_is_balanced() {
        let ps = generate_patterns(1000, 1, 3).unwrap();
        let mean: f64 = ps
            .row(0)
            .values()
            .iter()
            .map(|&v| f64::from(v))
            .sum::<f64>()
            / 1000.0;
        assert!(mean.abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn generation_codomain_n2() {
        for seed in 0..20 {
            let ps = generate_patterns(2, 1, seed).unwrap();
            assert!(ps.row(0).values().iter().all(|&v| v == 1 || v == -1));
            assert_eq!(ps.row(0).len(), 2);
        }
    }

    #[test]
    fn generation_rejects_empty() {
        assert!(generate_patterns(0, 3, 1).is_err());
        assert!(generate_patterns(1, 3, 1).is_err());
        assert!(generate_patterns(10, 0, 1).is_err());
    }

    #[test]
    fn corrupt_exact_flip_counts() {
        let ps = generate_patterns(100, 1, 5).unwrap();
        let xi = ps.row(0);
        assert_eq!(&corrupt(xi, 1.0, 9).unwrap(), xi);

        let c = corrupt(xi, 0.6, 9).unwrap();
        assert_eq!(hamming(xi, &c).unwrap(), 20);
        assert_eq!(overlap(xi, &c).unwrap(), 0.6);

        let c = corrupt(xi, 0.0, 9).unwrap();
        assert_eq!(hamming(xi, &c).unwrap(), 50);
        assert_eq!(overlap(xi, &c).unwrap(), 0.0);
    }

    #[test]
    fn flip_count_rounds_half_up() {
        assert_eq!(flip_count(500, 0.05), 238);
        assert_eq!(flip_count(10, 0.5), 3); // 2.5 -> 3
        assert_eq!(flip_count(100, 0.0), 50);
    }

    #[test]
    fn corrupt_rejects_out_of_range() {
        let s = State::all_plus(4);
        assert!(corrupt(&s, -0.01, 1).is_err());
        assert!(corrupt(&s, 1.01, 1).is_err());
        assert!(corrupt(&s, f64::NAN, 1).is_err());
    }

    #[test]
    fn corrupt_flips_on_similarity_grid() {
        let ps = generate_patterns(137, 1, 11).unwrap();
        for step in 0..=20 {
            let sim = f64::from(step) * 0.05;
            let c = corrupt(ps.row(0), sim, step as u64).unwrap();
            assert_eq!(hamming(ps.row(0), &c).unwrap(), flip_count(137, sim));
        }
    }

    #[test]
    fn overlap_examples() {
        let a = st(&[1, 1, 1, 1]);
        assert_eq!(overlap(&a, &a).unwrap(), 1.0);
        assert_eq!(overlap(&a, &a.negated()).unwrap(), -1.0);
        assert_eq!(overlap(&a, &st(&[1, 1, -1, -1])).unwrap(), 0.0);
        assert!(overlap(&a, &st(&[1, 1])).is_err());
    }

    #[test]
    fn hamming_examples() {
        let ps = generate_patterns(100, 1, 2).unwrap();
        let a = ps.row(0);
        assert_eq!(hamming(a, a).unwrap(), 0);
        assert_eq!(hamming(a, &a.negated()).unwrap(), 100);
        assert!(hamming(a, &st(&[1, -1])).is_err());
    }

    #[test]
    fn state_rejects_non_bipolar() {
        assert!(State::new(vec![1, 0, -1]).is_err());
        assert_eq!(State::from_signs([0.0, -0.5, 2.0]), st(&[1, -1, 1]));
    }

    #[test]
    fn nearest_prefers_target_on_ties() {
        let rows = vec![st(&[1, 1, 1, 1]), st(&[1, 1, 1, 1]), st(&[-1, -1, -1, -1])];
        let ps = PatternSet::from_rows(rows, 0).unwrap();
        assert_eq!(ps.nearest(&st(&[1, 1, 1, 1]), 1), (0, 1));
        assert_eq!(ps.nearest(&st(&[1, 1, 1, 1]), 2), (0, 0));
        assert_eq!(ps.find_exact(&st(&[1, 1, 1, 1]), 1), Some(1));
    }

    #[test]
    fn pattern_set_serde_roundtrip() {
        let ps = generate_patterns(70, 3, 4).unwrap();
        let json = serde_json::to_string(&ps).unwrap();
        let back: PatternSet = serde_json::from_str(&json).unwrap();
        assert_eq!(ps, back);
    }

    fn bipolar(n: usize) -> impl Strategy<Value = State> {
        proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], n)
            .prop_map(|v| State::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn overlap_hamming_identity((a, b) in (1usize..200).prop_flat_map(|n| (bipolar(n), bipolar(n)))) {
            let n = a.len() as i64;
            let d = hamming(&a, &b).unwrap() as i64;
            let dot: i64 = a.values().iter().zip(b.values()).map(|(&x, &y)| i64::from(x * y)).sum();
            // exact integer form of overlap = 1 - 2d/N
            prop_assert_eq!(dot, n - 2 * d);
            prop_assert_eq!(overlap(&a, &b).unwrap(), (n - 2 * d) as f64 / n as f64);
            prop_assert_eq!(packed_hamming(&a.packed(), &b.packed()) as i64, d);
        }
    }
}
