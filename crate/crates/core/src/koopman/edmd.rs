//! EDMD fitting of per-contact-mode lifted linear predictors.
//!
//! With the sample-averaged Gram matrices
//!
//! ```text
//!     G1 = 1/M sum Pi(y_k) Pi_hat(x_k, u_k)^T
//!     G2 = 1/M sum Pi_hat(x_k, u_k) Pi_hat(x_k, u_k)^T
//! ```
//!
//! the fitted operator is `K = [A, B] = G1 (G2 + ridge I)^-1`. The dictionary
//! repeats entries of `R(theta)` (its first and last column-major entries are
//! equal, the middle two are negatives), so `G2` is singular by construction
//! and a positive ridge is needed in practice. The product is evaluated through
//! a QR factorisation of the data matrix and an SVD of its triangular factor so
//! the conditioning of `G2` is never squared.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::observables::{lift, lift_into, recover_state, LiftedState, ObservableConfig};
use crate::error::{Error, Result};
use crate::srb::{ContactMode, SrbState, INPUT_DIM};

/// Above this condition number an unregularised fit is refused.
pub const MAX_UNREGULARIZED_CONDITION: f64 = 1e12;

pub const DEFAULT_RIDGE: f64 = 1e-12;

/// Paired snapshots `(x_k, u_k) -> y_k` recorded in a single contact mode.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    pub mode: ContactMode,
    pub dt: f64,
    pub x: Vec<SrbState>,
    pub u: Vec<[f64; INPUT_DIM]>,
    pub y: Vec<SrbState>,
}

impl SnapshotSet {
    pub fn new(mode: ContactMode, dt: f64) -> Self {
        Self {
            mode,
            dt,
            x: Vec::new(),
            u: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn push(&mut self, x: SrbState, u: [f64; INPUT_DIM], y: SrbState) {
        self.x.push(x);
        self.u.push(u);
        self.y.push(y);
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.u.len() || self.x.len() != self.y.len() {
            return Err(Error::DimensionMismatch(format!(
                "snapshot columns differ in length: x {}, u {}, y {}",
                self.x.len(),
                self.u.len(),
                self.y.len()
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "snapshot dt must be > 0, got {}",
                self.dt
            )));
        }
        Ok(())
    }

    /// Appends every sample of `other` (same mode and dt required).
    pub fn extend_from(&mut self, other: &SnapshotSet) -> Result<()> {
        if other.mode != self.mode || other.dt != self.dt {
            return Err(Error::ModelMismatch(format!(
                "cannot merge {} @ {} s into {} @ {} s",
                other.mode, other.dt, self.mode, self.dt
            )));
        }
        self.x.extend_from_slice(&other.x);
        self.u.extend_from_slice(&other.u);
        self.y.extend_from_slice(&other.y);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    /// `||Pi(Y) - K Pi_hat(X, U)||_F` over all samples.
    pub residual: f64,
    /// Condition number of the regularised, sample-averaged Gram matrix.
    pub condition_number: f64,
    pub samples: usize,
    pub ridge: f64,
}

/// Lifted linear predictor `z+ = A z + B u` for one contact mode.
#[derive(Clone, Debug, PartialEq)]
pub struct KoopmanModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub mode: ContactMode,
    pub config: ObservableConfig,
    pub dt: f64,
    pub fit_stats: FitStats,
}

impl KoopmanModel {
    pub fn lifted_dim(&self) -> usize {
        self.config.lifted_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.config.lifted_dim();
        if self.a.shape() != (n, n) || self.b.shape() != (n, INPUT_DIM) {
            return Err(Error::DimensionMismatch(format!(
                "expected A {n}x{n} and B {n}x{INPUT_DIM}, got A {:?} and B {:?}",
                self.a.shape(),
                self.b.shape()
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "model dt must be > 0, got {}",
                self.dt
            )));
        }
        Ok(())
    }

    /// The same predictor applied `steps` times with the input held:
    /// `A^s` and `sum_{i<s} A^i B`.
    pub fn resampled(&self, steps: usize) -> Result<KoopmanModel> {
        if steps == 0 {
            return Err(Error::InvalidParameter(
                "resample factor must be >= 1".into(),
            ));
        }
        let mut a_pow = self.a.clone();
        let mut b_acc = self.b.clone();
        for _ in 1..steps {
            b_acc = &self.a * b_acc + &self.b;
            a_pow = &self.a * a_pow;
        }
        Ok(KoopmanModel {
            a: a_pow,
            b: b_acc,
            dt: self.dt * steps as f64,
            ..self.clone()
        })
    }
}

/// Sample-averaged `(G1, G2)` for the data set. Exposed for inspection; the
/// fit itself never forms `G2`.
pub fn gram_matrices(
    data: &SnapshotSet,
    config: &ObservableConfig,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (phi, psi) = data_matrices(data, config);
    let m = data.len().max(1) as f64;
    (psi.transpose() * &phi / m, phi.transpose() * &phi / m)
}

fn data_matrices(data: &SnapshotSet, config: &ObservableConfig) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = config.lifted_dim();
    let cols = n + INPUT_DIM;
    let rows = data.len();
    let mut phi = DMatrix::zeros(rows, cols);
    let mut psi = DMatrix::zeros(rows, n);
    let mut buf = vec![0.0; n];
    for k in 0..rows {
        lift_into(&data.x[k], config, &mut buf);
        for (c, v) in buf.iter().enumerate() {
            phi[(k, c)] = *v;
        }
        for (c, v) in data.u[k].iter().enumerate() {
            phi[(k, n + c)] = *v;
        }
        lift_into(&data.y[k], config, &mut buf);
        for (c, v) in buf.iter().enumerate() {
            psi[(k, c)] = *v;
        }
    }
    (phi, psi)
}

pub fn edmd_fit(data: &SnapshotSet, config: &ObservableConfig, ridge: f64) -> Result<KoopmanModel> {
    config.validate()?;
    data.validate()?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "ridge must be >= 0, got {ridge}"
        )));
    }
    let n = config.lifted_dim();
    let cols = n + INPUT_DIM;
    if data.len() < cols {
        return Err(Error::InsufficientSamples {
            have: data.len(),
            need: cols,
        });
    }

    let (phi_raw, psi_raw) = data_matrices(data, config);
    let scale = 1.0 / (data.len() as f64).sqrt();
    let phi = &phi_raw * scale;
    let mut psi = &psi_raw * scale;

    let qr = phi.qr();
    let r = qr.r();
    qr.q_tr_mul(&mut psi);
    let qt_psi = psi.rows(0, cols).into_owned();

    let svd = r.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(Error::IllConditioned {
                condition: f64::INFINITY,
            })
        }
    };
    let s = svd.singular_values;
    let s_max = s.max();
    let s_min = s.min();

    if ridge == 0.0 {
        let condition = if s_min > 0.0 {
            (s_max / s_min).powi(2)
        } else {
            f64::INFINITY
        };
        if !(condition <= MAX_UNREGULARIZED_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }
    }

    let gain = DVector::from_iterator(s.len(), s.iter().map(|&si| si / (si * si + ridge)));
    // K = (Q^T Psi)^T U diag(gain) V^T
    let mut u_scaled = u;
    for (j, g) in gain.iter().enumerate() {
        u_scaled.column_mut(j).scale_mut(*g);
    }
    let k = qt_psi.transpose() * u_scaled * v_t;

    let a = k.columns(0, n).into_owned();
    let b = k.columns(n, INPUT_DIM).into_owned();

    let resid = &psi_raw - &phi_raw * k.transpose();
    let condition_number = (s_max * s_max + ridge) / (s_min * s_min + ridge);

    Ok(KoopmanModel {
        a,
        b,
        mode: data.mode,
        config: *config,
        dt: data.dt,
        fit_stats: FitStats {
            residual: resid.norm(),
            condition_number,
            samples: data.len(),
            ridge,
        },
    })
}

/// One lifted step `A z + B u`.
pub fn predict(model: &KoopmanModel, z: &LiftedState, u: &[f64; INPUT_DIM]) -> LiftedState {
    let u = DVector::from_column_slice(u);
    LiftedState(&model.a * &z.0 + &model.b * u)
}

/// Lifts `x0` once and iterates the predictor; the first entry is `x0`.
pub fn multi_step_predict(
    model: &KoopmanModel,
    x0: &SrbState,
    u_seq: &[[f64; INPUT_DIM]],
) -> Vec<SrbState> {
    let mut out = Vec::with_capacity(u_seq.len() + 1);
    out.push(*x0);
    let mut z = lift(x0, &model.config);
    for u in u_seq {
        z = predict(model, &z, u);
        out.push(recover_state(&z));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srb::{rk4_step, ControlInput, MomentArms, SrbParams};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Linear in lifted coordinates by construction: pitch and pitch rate are
    /// frozen, so every rotation block of `y` equals that of `x`, and the
    /// remaining rows are affine in `[1, x, u]`.
    fn frozen_pitch_step(x: &SrbState, u: &[f64; 4], dt: f64) -> SrbState {
        SrbState::from_array([
            x.p.x + dt * x.p_dot.x,
            x.p.y + dt * x.p_dot.y,
            x.theta,
            x.p_dot.x + dt * (0.05 * u[0] - 0.02 * u[2]),
            x.p_dot.y + dt * (0.08 * (u[1] + u[3]) - 9.81),
            x.theta_dot,
        ])
    }

    fn frozen_pitch_data(samples: usize, seed: u64) -> SnapshotSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = SnapshotSet::new(ContactMode::Trot, 0.001);
        for _ in 0..samples {
            let x = SrbState::from_array(std::array::from_fn(|k| {
                if k == 2 {
                    rng.random_range(-1.0..1.0)
                } else {
                    rng.random_range(-2.0..2.0)
                }
            }));
            let u = std::array::from_fn(|_| rng.random_range(-50.0..50.0));
            set.push(x, u, frozen_pitch_step(&x, &u, 0.001));
        }
        set
    }

    #[test]
    fn exact_recovery_of_lifted_linear_system() {
        let data = frozen_pitch_data(2000, 3);
        let cfg = ObservableConfig::default();
        let model = edmd_fit(&data, &cfg, 1e-14).unwrap();
        assert!(
            model.fit_stats.residual <= 1e-10,
            "residual {}",
            model.fit_stats.residual
        );

        // A, B restricted to the range of lift(): compare predictions on fresh points.
        let fresh = frozen_pitch_data(200, 99);
        for k in 0..fresh.len() {
            let z = lift(&fresh.x[k], &cfg);
            let want = lift(&fresh.y[k], &cfg);
            let got = predict(&model, &z, &fresh.u[k]);
            assert_abs_diff_eq!(got.0, want.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn gram_form_agrees_with_solution() {
        let data = frozen_pitch_data(500, 5);
        let cfg = ObservableConfig::new(2).unwrap();
        let ridge = 1e-6;
        let model = edmd_fit(&data, &cfg, ridge).unwrap();
        let (g1, g2) = gram_matrices(&data, &cfg);
        let mut k = DMatrix::zeros(cfg.lifted_dim(), cfg.lifted_dim() + 4);
        k.columns_mut(0, cfg.lifted_dim()).copy_from(&model.a);
        k.columns_mut(cfg.lifted_dim(), 4).copy_from(&model.b);
        let n = g2.nrows();
        let lhs = k * (g2 + DMatrix::identity(n, n) * ridge);
        assert_abs_diff_eq!(lhs, g1, epsilon = 1e-9);
    }

    #[test]
    fn duplicated_samples_leave_fit_unchanged() {
        let data = frozen_pitch_data(600, 7);
        let mut doubled = data.clone();
        doubled.extend_from(&data).unwrap();
        let cfg = ObservableConfig::default();
        let a = edmd_fit(&data, &cfg, DEFAULT_RIDGE).unwrap();
        let b = edmd_fit(&doubled, &cfg, DEFAULT_RIDGE).unwrap();
        assert_abs_diff_eq!(a.a, b.a, epsilon = 1e-12);
        assert_abs_diff_eq!(a.b, b.b, epsilon = 1e-12);
    }

    #[test]
    fn unregularized_singular_dictionary_is_refused() {
        let data = frozen_pitch_data(400, 1);
        match edmd_fit(&data, &ObservableConfig::default(), 0.0) {
            Err(Error::IllConditioned { condition }) => assert!(condition > 1e12),
            other => panic!("expected ill-conditioning error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_samples() {
        let data = frozen_pitch_data(20, 1);
        assert!(matches!(
            edmd_fit(&data, &ObservableConfig::default(), 1e-8),
            Err(Error::InsufficientSamples { have: 20, need: 27 })
        ));
    }

    #[test]
    fn flight_inputs_are_not_causal() {
        let params = SrbParams::default();
        let arms = MomentArms::symmetric(0.19, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut data = SnapshotSet::new(ContactMode::Flight, 0.001);
        for _ in 0..40 {
            let mut x = SrbState::from_array([
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.03..0.03),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.5..0.5),
            ]);
            for _ in 0..100 {
                let u: [f64; 4] =
                    std::array::from_fn(|k| rng.random_range(params.u_min[k]..=params.u_max[k]));
                let y = rk4_step(
                    &x,
                    &ControlInput::new(u, arms),
                    ContactMode::Flight,
                    &params,
                    0.001,
                );
                data.push(x, u, y);
                x = y;
            }
        }
        let model = edmd_fit(&data, &ObservableConfig::default(), 1e-9).unwrap();
        assert!(model.b.norm() <= 1e-8, "|B|_F = {}", model.b.norm());
    }

    #[test]
    fn resampling_matches_repeated_prediction() {
        let data = frozen_pitch_data(800, 2);
        let cfg = ObservableConfig::default();
        let model = edmd_fit(&data, &cfg, DEFAULT_RIDGE).unwrap();
        let six = model.resampled(6).unwrap();
        assert_abs_diff_eq!(six.dt, 0.006, epsilon = 1e-15);
        let x = data.x[17];
        let u = data.u[17];
        let stepped = multi_step_predict(&model, &x, &[u; 6]);
        let once = recover_state(&predict(&six, &lift(&x, &cfg), &u));
        for (a, b) in once.to_array().iter().zip(stepped[6].to_array()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn identity_and_zero_models() {
        let cfg = ObservableConfig::default();
        let n = cfg.lifted_dim();
        let mut model = KoopmanModel {
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
        let z = lift(&SrbState::from_array([1.0, 2.0, 0.1, 0.0, -1.0, 0.4]), &cfg);
        assert_eq!(predict(&model, &z, &[1.0, 2.0, 3.0, 4.0]), z);

        model.a = DMatrix::from_fn(n, n, |i, j| (i * n + j) as f64 * 0.01);
        let zero = LiftedState(DVector::zeros(n));
        assert_eq!(predict(&model, &zero, &[0.0; 4]).0, DVector::zeros(n));
    }

    #[test]
    fn single_step_consistency() {
        let data = frozen_pitch_data(300, 4);
        let cfg = ObservableConfig::default();
        let model = edmd_fit(&data, &cfg, DEFAULT_RIDGE).unwrap();
        let traj = multi_step_predict(&model, &data.x[0], &[data.u[0]]);
        assert_eq!(traj.len(), 2);
        assert_eq!(traj[0], data.x[0]);
        assert_eq!(
            traj[1],
            recover_state(&predict(&model, &lift(&data.x[0], &cfg), &data.u[0]))
        );
    }
}
