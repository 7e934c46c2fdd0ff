//! Synchronous recall dynamics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::DistanceTable;
use crate::learning::{DualModel, Model, WeightMatrix};
use crate::patterns::State;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynParams {
    pub max_steps: usize,
}

impl Default for DynParams {
    fn default() -> Self {
        DynParams { max_steps: 30 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    FixedPoint,
    LimitCycle { period: usize },
    NotConverged,
}

impl Outcome {
    pub fn converged(self) -> bool {
        !matches!(self, Outcome::NotConverged)
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::FixedPoint => f.write_str("fixed_point"),
            Outcome::LimitCycle { period } => write!(f, "limit_cycle(period={period})"),
            Outcome::NotConverged => f.write_str("not_converged"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecallTrace {
    pub initial: State,
    pub final_state: State,
    pub outcome: Outcome,
    /// Updates executed until detection, or the budget.
    pub steps: usize,
    pub visited_count: usize,
}

/// A model prepared for repeated evaluation. Dual models get a kernel lookup
/// table so each step costs one popcount pass plus an N×P product.
pub struct Network<'a> {
    form: Form<'a>,
}

enum Form<'a> {
    Weights(&'a WeightMatrix),
    Dual(&'a DualModel, DistanceTable),
}

impl<'a> Network<'a> {
    pub fn new(model: &'a Model) -> Self {
        match model {
            Model::Weights(w) => Network {
                form: Form::Weights(w),
            },
            Model::Dual(d) => Self::dual(d),
        }
    }

    pub fn dual(model: &'a DualModel) -> Self {
        Network {
            form: Form::Dual(model, DistanceTable::new(model.n(), model.params)),
        }
    }

    pub fn n(&self) -> usize {
        match &self.form {
            Form::Weights(w) => w.n(),
            Form::Dual(d, _) => d.n(),
        }
    }

    fn theta(&self) -> &DVector<f64> {
        match &self.form {
            Form::Weights(w) => &w.theta,
            Form::Dual(d, _) => &d.theta,
        }
    }

    pub fn potentials(&self, state: &State) -> Result<DVector<f64>> {
        let n = self.n();
        if state.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: state.len(),
            });
        }
        match &self.form {
            Form::Weights(w) => {
                let s = DVector::from_vec(state.to_f64());
                Ok(&w.w * s)
            }
            Form::Dual(d, table) => {
                let k = table.kernel_vector(state, &d.patterns)?;
                Ok(d.alpha.tr_mul(&k))
            }
        }
    }

    /// One synchronous update `s_i ← sign(h_i − θ_i)` with sign(0) = +1.
    pub fn step(&self, state: &State, theta: &DVector<f64>) -> Result<State> {
        let h = self.potentials(state)?;
        if theta.len() != h.len() {
            return Err(Error::DimensionMismatch {
                expected: h.len(),
                found: theta.len(),
            });
        }
        Ok(State::from_signs(
            h.iter().zip(theta.iter()).map(|(h, t)| h - t),
        ))
    }

    pub fn recall(&self, initial: &State, dyn_params: DynParams) -> Result<RecallTrace> {
        let theta = self.theta();
        let mut visited: Vec<State> = vec![initial.clone()];
        for t in 1..=dyn_params.max_steps {
            let next = self.step(visited.last().unwrap(), theta)?;
            let outcome = if &next == visited.last().unwrap() {
                Some(Outcome::FixedPoint)
            } else {
                visited
                    .iter()
                    .position(|s| s == &next)
                    .map(|first| Outcome::LimitCycle { period: t - first })
            };
            if let Some(outcome) = outcome {
                return Ok(RecallTrace {
                    initial: initial.clone(),
                    final_state: next,
                    outcome,
                    steps: t,
                    visited_count: visited.len(),
                });
            }
            visited.push(next);
        }
        Ok(RecallTrace {
            initial: initial.clone(),
            final_state: visited.last().unwrap().clone(),
            outcome: Outcome::NotConverged,
            steps: dyn_params.max_steps,
            visited_count: visited.len(),
        })
    }

    /// `V(s) = −Σ_k s_k h_k(s)`.
    pub fn lyapunov(&self, state: &State) -> Result<f64> {
        let h = self.potentials(state)?;
        Ok(-state
            .to_f64()
            .iter()
            .zip(h.iter())
            .map(|(s, h)| s * h)
            .sum::<f64>())
    }
}

pub fn potentials(state: &State, model: &Model) -> Result<DVector<f64>> {
    Network::new(model).potentials(state)
}

pub fn step(state: &State, model: &Model, theta: &DVector<f64>) -> Result<State> {
    Network::new(model).step(state, theta)
}

pub fn recall(initial: &State, model: &Model, dyn_params: DynParams) -> Result<RecallTrace> {
    Network::new(model).recall(initial, dyn_params)
}

pub fn lyapunov(state: &State, model: &DualModel) -> Result<f64> {
    Network::dual(model).lyapunov(state)
}
