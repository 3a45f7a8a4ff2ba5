//! Planar two-link leg: hip pitch `q1`, knee `q2`. Both zero is straight
//! down, positive angles swing the foot backwards (towards -x), and IK
//! returns the knee-back branch `q2` in `(-pi, 0]`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegParams {
    pub l1: f64,
    pub l2: f64,
    /// Hip position relative to the CoM, body frame.
    pub hip_offset: Vector2<f64>,
    pub kp: [f64; 2],
    pub kd: [f64; 2],
}

impl Default for LegParams {
    fn default() -> Self {
        Self {
            l1: 0.213,
            l2: 0.213,
            hip_offset: Vector2::new(0.1881, 0.0),
            kp: [30.0, 30.0],
            kd: [1.0, 1.0],
        }
    }
}

impl LegParams {
    pub fn with_hip(hip_offset: Vector2<f64>) -> Self {
        Self {
            hip_offset,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l1 > 0.0 && self.l2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "link lengths must be > 0, got {} and {}",
                self.l1, self.l2
            )));
        }
        if self.kp.iter().chain(&self.kd).any(|g| !(*g >= 0.0)) {
            return Err(Error::InvalidParameter("PD gains must be >= 0".into()));
        }
        Ok(())
    }

    pub fn reach(&self) -> (f64, f64) {
        ((self.l1 - self.l2).abs(), self.l1 + self.l2)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vector2<f64>,
    pub q_dot: Vector2<f64>,
}

impl JointState {
    pub fn at(q: Vector2<f64>) -> Self {
        Self {
            q,
            q_dot: Vector2::zeros(),
        }
    }
}

/// Foot position in the hip frame.
pub fn forward_kinematics(q: &JointState, params: &LegParams) -> Vector2<f64> {
    let (q1, q12) = (q.q[0], q.q[0] + q.q[1]);
    -Vector2::new(
        params.l1 * q1.sin() + params.l2 * q12.sin(),
        params.l1 * q1.cos() + params.l2 * q12.cos(),
    )
}

pub fn leg_jacobian(q: &JointState, params: &LegParams) -> Matrix2<f64> {
    let (q1, q12) = (q.q[0], q.q[0] + q.q[1]);
    let (s1, c1, s12, c12) = (q1.sin(), q1.cos(), q12.sin(), q12.cos());
    let (l1, l2) = (params.l1, params.l2);
    Matrix2::new(-l1 * c1 - l2 * c12, -l2 * c12, l1 * s1 + l2 * s12, l2 * s12)
}

/// Joint angles placing the foot at `foot` (hip frame). Targets within 1e-12 of
/// the annulus edge are accepted and snapped onto it.
pub fn analytic_ik(foot: &Vector2<f64>, params: &LegParams) -> Result<JointState> {
    let (min, max) = params.reach();
    let d = foot.norm();
    let slack = 1e-12 * max;
    if !d.is_finite() || d > max + slack || d < min - slack {
        return Err(Error::OutOfWorkspace {
            distance: d,
            min,
            max,
        });
    }
    let (l1, l2) = (params.l1, params.l2);
    let c = ((d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let q2 = -c.acos();
    let q1 = (-foot.x).atan2(-foot.y) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
    Ok(JointState::at(Vector2::new(q1, q2)))
}

/// IK for position and velocity. At a singular posture the joint-rate target
/// is zero.
pub fn analytic_ik_with_rate(
    foot: &Vector2<f64>,
    foot_vel: &Vector2<f64>,
    params: &LegParams,
) -> Result<JointState> {
    let mut js = analytic_ik(foot, params)?;
    js.q_dot = leg_jacobian(&js, params)
        .try_inverse()
        .map(|ji| ji * foot_vel)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .unwrap_or_else(Vector2::zeros);
    Ok(js)
}

pub fn swing_pd_torque(
    current: &JointState,
    desired: &JointState,
    params: &LegParams,
) -> Vector2<f64> {
    let kp = Matrix2::from_diagonal(&Vector2::from(params.kp));
    let kd = Matrix2::from_diagonal(&Vector2::from(params.kd));
    -kp * (current.q - desired.q) - kd * (current.q_dot - desired.q_dot)
}

pub fn stance_torque(q: &JointState, f: &Vector2<f64>, params: &LegParams) -> Vector2<f64> {
    leg_jacobian(q, params).transpose() * f
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn short() -> LegParams {
        LegParams {
            l1: 0.2,
            l2: 0.2,
            ..LegParams::default()
        }
    }

    #[test]
    fn fk_zero_and_quarter_turn() {
        let p = short();
        assert_abs_diff_eq!(
            forward_kinematics(&JointState::default(), &p),
            Vector2::new(0.0, -0.4),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            forward_kinematics(&JointState::at(Vector2::new(FRAC_PI_2, 0.0)), &p),
            Vector2::new(-0.4, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn ik_boundary_and_right_angle_knee() {
        let p = short();
        let q = analytic_ik(&Vector2::new(0.0, -0.4), &p).unwrap();
        assert_abs_diff_eq!(q.q, Vector2::zeros(), epsilon = 1e-7);
        // d^2 = l1^2 + l2^2 puts the cosine term at zero.
        let d = (0.08f64).sqrt();
        let q = analytic_ik(&Vector2::new(0.05, -(d * d - 0.0025).sqrt()), &p).unwrap();
        assert_abs_diff_eq!(q.q[1], -FRAC_PI_2, epsilon = 1e-12);
        assert!(matches!(
            analytic_ik(&Vector2::new(0.0, -0.41), &p),
            Err(Error::OutOfWorkspace { .. })
        ));
    }

    #[test]
    fn jacobian_hand_values() {
        // q = (0, -pi/2): c1 = 1, s1 = 0, c12 = 0, s12 = -1.
        let j = leg_jacobian(&JointState::at(Vector2::new(0.0, -FRAC_PI_2)), &short());
        assert_abs_diff_eq!(j, Matrix2::new(-0.2, 0.0, -0.2, -0.2), epsilon = 1e-15);
    }

    #[test]
    fn jacobian_singular_at_full_extension() {
        let p = LegParams::default();
        for q1 in [-1.0, 0.0, 0.3, 2.0] {
            let j = leg_jacobian(&JointState::at(Vector2::new(q1, 0.0)), &p);
            assert_abs_diff_eq!(j.determinant(), 0.0, epsilon = 1e-15);
        }
        let j = leg_jacobian(&JointState::at(Vector2::new(0.2, -0.7)), &p);
        assert!(j.determinant().abs() > 1e-3);
    }

    #[test]
    fn pd_examples() {
        let p = LegParams {
            kp: [20.0, 20.0],
            kd: [0.0, 0.0],
            ..LegParams::default()
        };
        let des = JointState::at(Vector2::new(0.3, -1.0));
        assert_eq!(swing_pd_torque(&des, &des, &p), Vector2::zeros());
        let cur = JointState::at(Vector2::new(0.4, -1.0));
        assert_abs_diff_eq!(
            swing_pd_torque(&cur, &des, &p),
            Vector2::new(-2.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ik_rate_inverts_jacobian() {
        let p = LegParams::default();
        let foot = Vector2::new(0.05, -0.3);
        let v = Vector2::new(0.4, -0.2);
        let js = analytic_ik_with_rate(&foot, &v, &p).unwrap();
        assert_abs_diff_eq!(leg_jacobian(&js, &p) * js.q_dot, v, epsilon = 1e-12);
        assert!(js.q[1] <= 0.0 && js.q[1] > -PI);
    }
}
