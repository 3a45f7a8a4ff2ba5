//! Linear MPC on a lifted Koopman predictor, condensed into a dense box QP.

mod condense;
mod dump;
mod qp;

pub use condense::{build_cost, build_prediction_matrices, CondensedQp, ReferenceTrajectory};
pub use dump::{parse_qp_dump_line, read_qp_dump, QpDump, QpDumpWriter};
pub use qp::{kkt_residual, objective, solve_qp, solve_qp_warm, QpSolution};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koopman::{lift, KoopmanModel};
use crate::srb::{ContactMode, SrbState, INPUT_DIM, STATE_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Steps in the prediction horizon.
    pub horizon: usize,
    /// Model sampling period, seconds.
    pub dt: f64,
    /// `[p_x, p_z, theta, v_x, v_z, omega]`
    pub q_diag: [f64; STATE_DIM],
    /// `[F_ix, F_iz, F_jx, F_jz]`
    pub r_diag: [f64; INPUT_DIM],
    pub u_min: [f64; INPUT_DIM],
    pub u_max: [f64; INPUT_DIM],
    /// Forbid pulling on the ground: vertical force lower bounds are raised to 0.
    pub nonnegative_normal_force: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.006,
            q_diag: [10.0, 1000.0, 300.0, 30.0, 50.0, 3.0],
            r_diag: [1e-6; INPUT_DIM],
            u_min: [-150.0, 0.0, -150.0, 0.0],
            u_max: [150.0, 300.0, 150.0, 300.0],
            nonnegative_normal_force: true,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("MPC horizon must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "MPC dt must be > 0, got {}",
                self.dt
            )));
        }
        if self
            .q_diag
            .iter()
            .chain(&self.r_diag)
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(Error::InvalidParameter(
                "MPC weights must be finite and >= 0".into(),
            ));
        }
        if !self.q_diag.iter().any(|w| *w > 0.0) {
            return Err(Error::InvalidParameter(
                "at least one state weight must be > 0".into(),
            ));
        }
        for k in 0..INPUT_DIM {
            if !(self.u_min[k] <= self.u_max[k]) {
                return Err(Error::InvalidParameter(format!(
                    "MPC u_min[{k}] = {} exceeds u_max[{k}] = {}",
                    self.u_min[k], self.u_max[k]
                )));
            }
        }
        Ok(())
    }

    /// Stacked input bounds for a horizon in `mode`. Force pairs the mode does
    /// not load are pinned to zero.
    pub fn bounds_for(&self, mode: ContactMode) -> (DVector<f64>, DVector<f64>) {
        let (ai, aj) = mode.alphas();
        let mut lo = self.u_min;
        let mut hi = self.u_max;
        if self.nonnegative_normal_force {
            lo[1] = lo[1].max(0.0);
            lo[3] = lo[3].max(0.0);
            hi[1] = hi[1].max(lo[1]);
            hi[3] = hi[3].max(lo[3]);
        }
        for (pair, alpha) in [(0usize, ai), (2, aj)] {
            if alpha == 0.0 {
                for c in pair..pair + 2 {
                    lo[c] = 0.0;
                    hi[c] = 0.0;
                }
            }
        }
        let k = self.horizon;
        (
            DVector::from_iterator(INPUT_DIM * k, (0..k).flat_map(|_| lo)),
            DVector::from_iterator(INPUT_DIM * k, (0..k).flat_map(|_| hi)),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcOutput {
    /// First input block `[F_ix, F_iz, F_jx, F_jz]`.
    pub forces: [f64; INPUT_DIM],
    pub solution: QpSolution,
}

/// Receding-horizon controller with the condensed prediction matrices and the
/// state-weighted part of `H` precomputed for one model.
#[derive(Clone, Debug)]
pub struct LinearMpc {
    model: KoopmanModel,
    config: MpcConfig,
    a_qp: DMatrix<f64>,
    b_qp: DMatrix<f64>,
    /// `Q_qp B_qp`
    qb: DMatrix<f64>,
    h: DMatrix<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    warm: Option<DVector<f64>>,
    /// Leading horizon steps whose state error is penalised.
    weighted: usize,
}

/// `(Q_qp B_qp, H)` with state weights only on the first `weighted` steps.
fn weighted_cost(
    b_qp: &DMatrix<f64>,
    config: &MpcConfig,
    weighted: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut qb = b_qp.clone();
    for i in 0..config.horizon {
        for (s, w) in config.q_diag.iter().enumerate() {
            let w = if i < weighted { *w } else { 0.0 };
            qb.row_mut(i * STATE_DIM + s).scale_mut(w);
        }
    }
    let mut h = b_qp.tr_mul(&qb);
    for i in 0..config.horizon {
        for (c, r) in config.r_diag.iter().enumerate() {
            h[(i * INPUT_DIM + c, i * INPUT_DIM + c)] += r;
        }
    }
    h *= 2.0;
    let h = (&h + h.transpose()) * 0.5;
    (qb, h)
}

impl LinearMpc {
    pub fn new(model: KoopmanModel, config: MpcConfig) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        if (model.dt - config.dt).abs() > 1e-9 {
            return Err(Error::ModelMismatch(format!(
                "model dt {} s differs from MPC dt {} s",
                model.dt, config.dt
            )));
        }
        let (a_qp, b_qp) = build_prediction_matrices(&model, config.horizon);
        let (qb, h) = weighted_cost(&b_qp, &config, config.horizon);
        let (lower, upper) = config.bounds_for(model.mode);
        let weighted = config.horizon;
        Ok(Self {
            model,
            config,
            a_qp,
            b_qp,
            qb,
            h,
            lower,
            upper,
            warm: None,
            weighted,
        })
    }

    pub fn model(&self) -> &KoopmanModel {
        &self.model
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn a_qp(&self) -> &DMatrix<f64> {
        &self.a_qp
    }

    pub fn b_qp(&self) -> &DMatrix<f64> {
        &self.b_qp
    }

    /// Penalise state error only over the first `steps` predictions (clamped
    /// to `1..=horizon`), e.g. when the contact mode ends inside the horizon
    /// and later predictions of this model no longer apply.
    pub fn set_weighted_steps(&mut self, steps: usize) {
        let steps = steps.clamp(1, self.config.horizon);
        if steps != self.weighted {
            (self.qb, self.h) = weighted_cost(&self.b_qp, &self.config, steps);
            self.weighted = steps;
        }
    }

    pub fn weighted_steps(&self) -> usize {
        self.weighted
    }

    /// Forget the previous solution used as warm start.
    pub fn reset(&mut self) {
        self.warm = None;
    }

    fn linear_term_for(
        &self,
        x: &SrbState,
        reference: &ReferenceTrajectory,
    ) -> Result<DVector<f64>> {
        if reference.len() != self.config.horizon {
            return Err(Error::DimensionMismatch(format!(
                "reference has {} states, horizon is {}",
                reference.len(),
                self.config.horizon
            )));
        }
        let z0 = lift(x, &self.model.config);
        let xd = DVector::from_iterator(
            reference.len() * STATE_DIM,
            reference.states.iter().flat_map(|s| s.to_array()),
        );
        let err = &self.a_qp * z0.as_vector() - xd;
        Ok(self.qb.tr_mul(&err) * 2.0)
    }

    /// Condensed QP for state `x` tracking `reference`.
    pub fn condense(&self, x: &SrbState, reference: &ReferenceTrajectory) -> Result<CondensedQp> {
        Ok(CondensedQp {
            a_qp: self.a_qp.clone(),
            b_qp: self.b_qp.clone(),
            h: self.h.clone(),
            p: self.linear_term_for(x, reference)?,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        })
    }

    pub fn step(&mut self, x: &SrbState, reference: &ReferenceTrajectory) -> Result<MpcOutput> {
        let p = self.linear_term_for(x, reference)?;
        let solution = solve_qp_warm(&self.h, &p, &self.lower, &self.upper, self.warm.as_ref())?;
        let forces = std::array::from_fn(|c| solution.u[c]);
        // Shift by one block for the next call.
        let n = solution.u.len();
        let mut shifted = solution.u.clone();
        shifted.as_mut_slice().copy_within(INPUT_DIM..n, 0);
        self.warm = Some(shifted);
        Ok(MpcOutput { forces, solution })
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn bounds(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.lower, &self.upper)
    }

    pub fn linear_term(
        &self,
        x: &SrbState,
        reference: &ReferenceTrajectory,
    ) -> Result<DVector<f64>> {
        self.linear_term_for(x, reference)
    }
}

/// One receding-horizon step: lift, condense, solve, and return the first
/// input block. Callers running a loop should keep a [`LinearMpc`] instead.
pub fn mpc_step(
    model: &KoopmanModel,
    x: &SrbState,
    reference: &ReferenceTrajectory,
    config: &MpcConfig,
) -> Result<MpcOutput> {
    LinearMpc::new(model.clone(), config.clone())?.step(x, reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::{FitStats, ObservableConfig};

    #[test]
    fn zero_state_weight_gives_zero_forces() {
        let cfg = ObservableConfig::default();
        let n = cfg.lifted_dim();
        let model = KoopmanModel {
            a: DMatrix::identity(n, n),
            b: DMatrix::from_element(n, 4, 1e-3),
            mode: ContactMode::Trot,
            config: cfg,
            dt: 0.006,
            fit_stats: FitStats {
                residual: 0.0,
                condition_number: 1.0,
                samples: 0,
                ridge: 0.0,
            },
        };
        let mut config = MpcConfig {
            u_min: [-100.0; 4],
            u_max: [100.0; 4],
            nonnegative_normal_force: false,
            ..MpcConfig::default()
        };
        // validate() insists on one positive state weight, so go through the
        // cost directly for Q = 0.
        config.q_diag = [0.0; 6];
        let (aq, bq) = build_prediction_matrices(&model, config.horizon);
        let x = SrbState::from_array([0.0, 0.3, 0.1, 0.2, 0.0, 0.0]);
        let (h, p) = build_cost(
            &aq,
            &bq,
            &lift(&x, &cfg),
            &ReferenceTrajectory::constant(SrbState::default(), config.horizon),
            &config,
        )
        .unwrap();
        let (lo, hi) = config.bounds_for(ContactMode::Trot);
        let sol = solve_qp(&h, &p, &lo, &hi).unwrap();
        assert!(sol.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inactive_pairs_are_pinned() {
        let config = MpcConfig::default();
        let (lo, hi) = config.bounds_for(ContactMode::FrontStance);
        for step in 0..config.horizon {
            assert_eq!(lo[4 * step + 2], 0.0);
            assert_eq!(hi[4 * step + 3], 0.0);
            assert_eq!(lo[4 * step + 1], 0.0);
            assert_eq!(hi[4 * step + 1], 300.0);
        }
        let (lo, hi) = config.bounds_for(ContactMode::Flight);
        assert!(lo.iter().chain(hi.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn dt_mismatch_rejected() {
        let cfg = ObservableConfig::default();
        let n = cfg.lifted_dim();
        let model = KoopmanModel {
            a: DMatrix::identity(n, n),
            b: DMatrix::zeros(n, 4),
            mode: ContactMode::Trot,
            config: cfg,
            dt: 0.001,
            fit_stats: FitStats {
                residual: 0.0,
                condition_number: 1.0,
                samples: 0,
                ridge: 0.0,
            },
        };
        assert!(matches!(
            LinearMpc::new(model, MpcConfig::default()),
            Err(Error::ModelMismatch(_))
        ));
    }

    #[test]
    fn weighted_steps_drop_late_state_error() {
        let cfg = ObservableConfig::default();
        let n = cfg.lifted_dim();
        let model = KoopmanModel {
            a: DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    1.0
                } else {
                    0.001 * ((i + 2 * j) % 5) as f64
                }
            }),
            b: DMatrix::from_fn(n, 4, |i, j| 1e-3 * ((i * 3 + j) % 7) as f64 - 2e-3),
            mode: ContactMode::Trot,
            config: cfg,
            dt: 0.006,
            fit_stats: FitStats {
                residual: 0.0,
                condition_number: 1.0,
                samples: 0,
                ridge: 0.0,
            },
        };
        let config = MpcConfig {
            horizon: 5,
            ..MpcConfig::default()
        };
        let mut mpc = LinearMpc::new(model, config.clone()).unwrap();
        assert_eq!(mpc.weighted_steps(), 5);
        let full = mpc.hessian().clone();

        mpc.set_weighted_steps(2);
        assert_eq!(mpc.weighted_steps(), 2);
        // Oracle: H from explicit sums over the first two predictions only.
        let b = mpc.b_qp().clone();
        let mut want = DMatrix::<f64>::zeros(20, 20);
        for row in 0..STATE_DIM * 2 {
            let q = config.q_diag[row % STATE_DIM];
            want += b.row(row).transpose() * b.row(row) * (2.0 * q);
        }
        for i in 0..20 {
            want[(i, i)] += 2.0 * config.r_diag[i % INPUT_DIM];
        }
        approx::assert_relative_eq!(
            mpc.hessian().clone(),
            want,
            max_relative = 1e-12,
            epsilon = 1e-12
        );

        mpc.set_weighted_steps(0);
        assert_eq!(mpc.weighted_steps(), 1);
        mpc.set_weighted_steps(99);
        assert_eq!(mpc.weighted_steps(), 5);
        assert_eq!(mpc.hessian(), &full);
    }
}
