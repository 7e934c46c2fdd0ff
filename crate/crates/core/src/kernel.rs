//! RBF kernel on bipolar states.
//!
//! For bipolar vectors `‖x − y‖² = 4·d_H(x, y)`, so every kernel value is
//! `exp(−4γ·d)` for an integer Hamming distance `d`. All evaluations go
//! through [`kernel_of_distance`] so that Gram rows and kernel vectors agree
//! bit for bit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patterns::{packed_hamming, PatternSet, State};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub gamma: f64,
}

impl KernelParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel gamma must be > 0, got {gamma}"
            )));
        }
        Ok(KernelParams { gamma })
    }

    /// γ = c / N.
    pub fn from_scaling(c: f64, n: usize) -> Result<Self> {
        Self::new(c / n as f64)
    }

    /// c = γ·N.
    pub fn scaling(&self, n: usize) -> f64 {
        self.gamma * n as f64
    }
}

#[inline]
pub fn kernel_of_distance(distance: usize, gamma: f64) -> f64 {
    (-4.0 * gamma * distance as f64).exp()
}

pub fn rbf(x: &State, y: &State, params: KernelParams) -> Result<f64> {
    let d = crate::patterns::hamming(x, y)?;
    Ok(kernel_of_distance(d, params.gamma))
}

/// P×P kernel matrix of a pattern set. Symmetric with unit diagonal.
#[derive(Clone, Debug)]
pub struct GramMatrix(DMatrix<f64>);

impl GramMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

pub fn gram(patterns: &PatternSet, params: KernelParams) -> GramMatrix {
    let p = patterns.p();
    let table = DistanceTable::new(patterns.n(), params);
    let mut k = DMatrix::from_element(p, p, 1.0);
    for mu in 0..p {
        for nu in (mu + 1)..p {
            let d = packed_hamming(patterns.packed_row(mu), patterns.packed_row(nu));
            let v = table.get(d);
            k[(mu, nu)] = v;
            k[(nu, mu)] = v;
        }
    }
    GramMatrix(k)
}

pub fn kernel_vector(
    state: &State,
    patterns: &PatternSet,
    params: KernelParams,
) -> Result<DVector<f64>> {
    let table = DistanceTable::new(patterns.n(), params);
    table.kernel_vector(state, patterns)
}

/// Precomputed `exp(−4γd)` for `d = 0..=N`.
#[derive(Clone, Debug)]
pub(crate) struct DistanceTable {
    values: Vec<f64>,
}

impl DistanceTable {
    pub(crate) fn new(n: usize, params: KernelParams) -> Self {
        DistanceTable {
            values: (0..=n)
                .map(|d| kernel_of_distance(d, params.gamma))
                .collect(),
        }
    }

    #[inline]
    pub(crate) fn get(&self, d: usize) -> f64 {
        self.values[d]
    }

    pub(crate) fn kernel_vector(
        &self,
        state: &State,
        patterns: &PatternSet,
    ) -> Result<DVector<f64>> {
        if state.len() != patterns.n() {
            return Err(Error::DimensionMismatch {
                expected: patterns.n(),
                found: state.len(),
            });
        }
        let packed = state.packed();
        Ok(DVector::from_iterator(
            patterns.p(),
            (0..patterns.p()).map(|mu| self.get(packed_hamming(&packed, patterns.packed_row(mu)))),
        ))
    }
}
