//! Physics-informed observable dictionary.
//!
//! The lifted vector is `[1, p, theta, p_dot, theta_dot, vec(R w), vec(R w^2), ..., vec(R w^p)]`
//! where `R = R(theta)`, `w = theta_dot` and `vec` stacks the matrix columns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::srb::{rotation_matrix, SrbState, STATE_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    /// Highest pitch-rate power in the rotation blocks.
    pub p_order: usize,
}

impl Default for ObservableConfig {
    fn default() -> Self {
        Self { p_order: 4 }
    }
}

impl ObservableConfig {
    pub fn new(p_order: usize) -> Result<Self> {
        let cfg = Self { p_order };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_order == 0 {
            return Err(Error::InvalidParameter("p_order must be >= 1".into()));
        }
        Ok(())
    }

    /// `N = 7 + 4 p`.
    pub fn lifted_dim(&self) -> usize {
        7 + 4 * self.p_order
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiftedState(pub DVector<f64>);

impl LiftedState {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn lift(x: &SrbState, config: &ObservableConfig) -> LiftedState {
    let mut z = DVector::zeros(config.lifted_dim());
    lift_into(x, config, z.as_mut_slice());
    LiftedState(z)
}

pub(crate) fn lift_into(x: &SrbState, config: &ObservableConfig, out: &mut [f64]) {
    debug_assert!(out.len() >= config.lifted_dim());
    out[0] = 1.0;
    out[1..=STATE_DIM].copy_from_slice(&x.to_array());
    let r = rotation_matrix(x.theta);
    // column-major: [R00, R10, R01, R11]
    let cols = [r[(0, 0)], r[(1, 0)], r[(0, 1)], r[(1, 1)]];
    let mut w_pow = 1.0;
    for k in 0..config.p_order {
        w_pow *= x.theta_dot;
        let base = 7 + 4 * k;
        for (o, c) in out[base..base + 4].iter_mut().zip(cols) {
            *o = c * w_pow;
        }
    }
}

/// Reads elements `1..=6`; the constant slot is ignored.
pub fn recover_state(z: &LiftedState) -> SrbState {
    let v = &z.0;
    SrbState::from_array([v[1], v[2], v[3], v[4], v[5], v[6]])
}

/// `C_x`: the 6 x N selection of the embedded state block.
pub fn selection_matrix(config: &ObservableConfig) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(STATE_DIM, config.lifted_dim());
    for k in 0..STATE_DIM {
        c[(k, k + 1)] = 1.0;
    }
    c
}
