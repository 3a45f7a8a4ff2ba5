//! Planar single-rigid-body (SRB) torso model.
//!
//! State is `[p_x, p_z, theta, v_x, v_z, omega]` with positions in the world
//! frame. Ground reaction forces are given per foot pair in the body frame and
//! scaled by the mode scalars of the active [`ContactMode`]:
//!
//! ```text
//!     p'' = R(theta) (a_i F_i + a_j F_j) / m - g
//!     theta'' = (r_i x a_i F_i + r_j x a_j F_j) / I,    a x b = a_x b_z - a_z b_x
//! ```
//!
//! Foot pair `i` is the front pair and `j` the rear pair.

use nalgebra::{Matrix2, Vector2, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 6;
pub const INPUT_DIM: usize = 4;

/// Any state component beyond this magnitude aborts a rollout.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct SrbState {
    pub p: Vector2<f64>,
    pub theta: f64,
    pub p_dot: Vector2<f64>,
    pub theta_dot: f64,
}

impl SrbState {
    pub fn new(p: Vector2<f64>, theta: f64, p_dot: Vector2<f64>, theta_dot: f64) -> Self {
        Self {
            p,
            theta,
            p_dot,
            theta_dot,
        }
    }

    pub fn from_array(x: [f64; STATE_DIM]) -> Self {
        Self {
            p: Vector2::new(x[0], x[1]),
            theta: x[2],
            p_dot: Vector2::new(x[3], x[4]),
            theta_dot: x[5],
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.p.x,
            self.p.y,
            self.theta,
            self.p_dot.x,
            self.p_dot.y,
            self.theta_dot,
        ]
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::from(self.to_array())
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::from_array([v[0], v[1], v[2], v[3], v[4], v[5]])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    /// Pitch wrapped to (-pi, pi]. Integration always uses the raw value.
    pub fn wrapped_theta(&self) -> f64 {
        wrap_angle(self.theta)
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrbParams {
    /// Torso mass, kg.
    pub mass: f64,
    /// Torso pitch inertia, kg m^2.
    pub inertia: f64,
    /// Gravity in the world frame; `p''` subtracts this vector.
    pub gravity: [f64; 2],
    /// Per-component force bounds `[F_ix, F_iz, F_jx, F_jz]`, N.
    pub u_min: [f64; INPUT_DIM],
    pub u_max: [f64; INPUT_DIM],
}

impl Default for SrbParams {
    fn default() -> Self {
        Self {
            mass: 12.0,
            inertia: 0.42,
            gravity: [0.0, 9.81],
            u_min: [-150.0, 0.0, -150.0, 0.0],
            u_max: [150.0, 300.0, 150.0, 300.0],
        }
    }
}

impl SrbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mass must be > 0, got {}",
                self.mass
            )));
        }
        if !(self.inertia > 0.0 && self.inertia.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "inertia must be > 0, got {}",
                self.inertia
            )));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::InvalidParameter("gravity must be finite".into()));
        }
        for k in 0..INPUT_DIM {
            if !(self.u_min[k] <= self.u_max[k]) {
                return Err(Error::InvalidParameter(format!(
                    "u_min[{k}] = {} exceeds u_max[{k}] = {}",
                    self.u_min[k], self.u_max[k]
                )));
            }
        }
        Ok(())
    }

    pub fn gravity(&self) -> Vector2<f64> {
        Vector2::new(self.gravity[0], self.gravity[1])
    }

    /// Weight magnitude `m * |g|`.
    pub fn weight(&self) -> f64 {
        self.mass * self.gravity().norm()
    }
}

/// Which foot pairs carry load. Only the four legal mode-scalar tuples exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContactMode {
    Trot,
    FrontStance,
    RearStance,
    Flight,
}

impl ContactMode {
    pub const ALL: [ContactMode; 4] = [
        ContactMode::Trot,
        ContactMode::FrontStance,
        ContactMode::RearStance,
        ContactMode::Flight,
    ];

    /// Mode scalars `(alpha_i, alpha_j)` for the front and rear pair.
    pub fn alphas(self) -> (f64, f64) {
        match self {
            ContactMode::Trot => (1.0, 1.0),
            ContactMode::FrontStance => (2.0, 0.0),
            ContactMode::RearStance => (0.0, 2.0),
            ContactMode::Flight => (0.0, 0.0),
        }
    }

    pub fn is_stance(self) -> bool {
        self != ContactMode::Flight
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContactMode::Trot => "trot",
            ContactMode::FrontStance => "front-stance",
            ContactMode::RearStance => "rear-stance",
            ContactMode::Flight => "flight",
        }
    }
}

impl std::fmt::Display for ContactMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ContactMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "trot" => Ok(ContactMode::Trot),
            "front-stance" | "front" => Ok(ContactMode::FrontStance),
            "rear-stance" | "rear" => Ok(ContactMode::RearStance),
            "flight" => Ok(ContactMode::Flight),
            other => Err(Error::InvalidParameter(format!(
                "unknown contact mode '{other}'"
            ))),
        }
    }
}

/// Body-frame ground reaction forces of the front (`i`) and rear (`j`) pair
/// together with the body-frame foot-to-CoM moment arms they act through.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ControlInput {
    pub f_i: Vector2<f64>,
    pub f_j: Vector2<f64>,
    pub r_i: Vector2<f64>,
    pub r_j: Vector2<f64>,
}

impl ControlInput {
    pub fn new(forces: [f64; INPUT_DIM], arms: MomentArms) -> Self {
        Self {
            f_i: Vector2::new(forces[0], forces[1]),
            f_j: Vector2::new(forces[2], forces[3]),
            r_i: arms.front,
            r_j: arms.rear,
        }
    }

    pub fn forces(&self) -> [f64; INPUT_DIM] {
        [self.f_i.x, self.f_i.y, self.f_j.x, self.f_j.y]
    }

    pub fn force_vector(&self) -> Vector4<f64> {
        Vector4::from(self.forces())
    }
}

/// Body-frame moment arms of the front and rear foot pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentArms {
    pub front: Vector2<f64>,
    pub rear: Vector2<f64>,
}

impl MomentArms {
    /// Feet directly below hips at `±hip_x` with the CoM `height` above ground.
    pub fn symmetric(hip_x: f64, height: f64) -> Self {
        Self {
            front: Vector2::new(hip_x, -height),
            rear: Vector2::new(-hip_x, -height),
        }
    }
}

pub fn rotation_matrix(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Planar cross product `a_x b_z - a_z b_x`.
#[inline]
pub fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Time derivative of the state, laid out like the state itself.
pub fn continuous_dynamics(
    x: &SrbState,
    u: &ControlInput,
    mode: ContactMode,
    params: &SrbParams,
) -> SrbState {
    let (ai, aj) = mode.alphas();
    let fi = u.f_i * ai;
    let fj = u.f_j * aj;
    let p_ddot = rotation_matrix(x.theta) * (fi + fj) / params.mass - params.gravity();
    let theta_ddot = (cross2(&u.r_i, &fi) + cross2(&u.r_j, &fj)) / params.inertia;
    SrbState {
        p: x.p_dot,
        theta: x.theta_dot,
        p_dot: p_ddot,
        theta_dot: theta_ddot,
    }
}

/// Classical RK4 with `u` and `mode` held over the step.
pub fn rk4_step(
    x: &SrbState,
    u: &ControlInput,
    mode: ContactMode,
    params: &SrbParams,
    dt: f64,
) -> SrbState {
    let f = |v: &Vector6<f64>| {
        continuous_dynamics(&SrbState::from_vector(v), u, mode, params).to_vector()
    };
    let x0 = x.to_vector();
    let k1 = f(&x0);
    let k2 = f(&(x0 + k1 * (dt / 2.0)));
    let k3 = f(&(x0 + k2 * (dt / 2.0)));
    let k4 = f(&(x0 + k3 * dt));
    SrbState::from_vector(&(x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)))
}

pub(crate) fn is_diverged(x: &SrbState) -> bool {
    x.to_array()
        .iter()
        .any(|c| !c.is_finite() || c.abs() > DIVERGENCE_LIMIT)
}

/// Integrates `u_seq` from `x0`; returns `x0` followed by one state per input.
pub fn rollout(
    x0: &SrbState,
    u_seq: &[ControlInput],
    mode: ContactMode,
    params: &SrbParams,
    dt: f64,
) -> Result<Vec<SrbState>> {
    if u_seq.is_empty() {
        return Err(Error::InvalidParameter(
            "rollout needs at least one input".into(),
        ));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let mut out = Vec::with_capacity(u_seq.len() + 1);
    out.push(*x0);
    let mut x = *x0;
    for (step, u) in u_seq.iter().enumerate() {
        x = rk4_step(&x, u, mode, params, dt);
        if is_diverged(&x) {
            return Err(Error::Diverged {
                step: step + 1,
                limit: DIVERGENCE_LIMIT,
            });
        }
        out.push(x);
    }
    Ok(out)
}
