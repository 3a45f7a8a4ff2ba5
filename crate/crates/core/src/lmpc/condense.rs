use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::koopman::{selection_matrix, KoopmanModel, LiftedState};
use crate::lmpc::MpcConfig;
use crate::srb::{SrbState, INPUT_DIM, STATE_DIM};

/// Desired states over the horizon, one per predicted step.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTrajectory {
    pub states: Vec<SrbState>,
}

impl ReferenceTrajectory {
    /// The same target at every step of a `k`-step horizon.
    pub fn constant(target: SrbState, k: usize) -> Self {
        Self {
            states: vec![target; k],
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.states.len() * STATE_DIM,
            self.states.iter().flat_map(|s| s.to_array()),
        )
    }
}

/// Dense QP over the stacked input sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct CondensedQp {
    /// `(6k) x N`: stacked states from the initial lifted state.
    pub a_qp: DMatrix<f64>,
    /// `(6k) x (4k)`: stacked states from the stacked inputs.
    pub b_qp: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// Linear term, stored as a column (`P^T`).
    pub p: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// `A_qp` block `i` is `C_x A^i`; `B_qp` block `(i, j)` is `C_x A^(i-j-1) B`
/// for `j < i` (1-indexed `i`, 0-indexed `j`) and zero otherwise.
pub fn build_prediction_matrices(model: &KoopmanModel, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = model.lifted_dim();
    let c = selection_matrix(&model.config);
    // c_pows[d] = C_x A^d
    let mut c_pows = Vec::with_capacity(k + 1);
    c_pows.push(c);
    for d in 1..=k {
        let next = &c_pows[d - 1] * &model.a;
        c_pows.push(next);
    }
    let mut a_qp = DMatrix::zeros(STATE_DIM * k, n);
    for (i, cp) in c_pows.iter().enumerate().skip(1) {
        a_qp.rows_mut(STATE_DIM * (i - 1), STATE_DIM).copy_from(cp);
    }
    let cab: Vec<DMatrix<f64>> = (0..k).map(|d| &c_pows[d] * &model.b).collect();
    let mut b_qp = DMatrix::zeros(STATE_DIM * k, INPUT_DIM * k);
    for i in 1..=k {
        for j in 0..i {
            b_qp.view_mut((STATE_DIM * (i - 1), INPUT_DIM * j), (STATE_DIM, INPUT_DIM))
                .copy_from(&cab[i - j - 1]);
        }
    }
    (a_qp, b_qp)
}

fn repeat_diag(d: &[f64], k: usize) -> DVector<f64> {
    DVector::from_iterator(d.len() * k, (0..k).flat_map(|_| d.iter().copied()))
}

/// Quadratic and linear terms of the condensed objective `1/2 U'HU + P U`:
///
/// ```text
///     H = 2 (B_qp' Q_qp B_qp + R_qp)
///     P = 2 (z0' A_qp' Q_qp B_qp - X_d' Q_qp B_qp)
/// ```
pub fn build_cost(
    a_qp: &DMatrix<f64>,
    b_qp: &DMatrix<f64>,
    z0: &LiftedState,
    reference: &ReferenceTrajectory,
    config: &MpcConfig,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let k = config.horizon;
    if reference.len() != k || a_qp.nrows() != STATE_DIM * k || b_qp.nrows() != STATE_DIM * k {
        return Err(Error::DimensionMismatch(format!(
            "horizon {k}, reference {}, A_qp {:?}, B_qp {:?}",
            reference.len(),
            a_qp.shape(),
            b_qp.shape()
        )));
    }
    if a_qp.ncols() != z0.len() {
        return Err(Error::DimensionMismatch(format!(
            "A_qp has {} columns but lifted state has {}",
            a_qp.ncols(),
            z0.len()
        )));
    }
    let q = repeat_diag(&config.q_diag, k);
    let r = repeat_diag(&config.r_diag, k);
    let mut qb = b_qp.clone();
    for (row, w) in q.iter().enumerate() {
        qb.row_mut(row).scale_mut(*w);
    }
    let mut h = b_qp.transpose() * &qb;
    for (i, w) in r.iter().enumerate() {
        h[(i, i)] += w;
    }
    h *= 2.0;
    // Exact symmetry regardless of summation order.
    let h = (&h + h.transpose()) * 0.5;
    let err = a_qp * z0.as_vector() - reference.stacked();
    let p = qb.transpose() * err * 2.0;
    Ok((h, p))
}
