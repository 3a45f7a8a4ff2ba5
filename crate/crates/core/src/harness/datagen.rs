//! Random-rollout training data for the per-mode EDMD fits.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koopman::{edmd_fit, KoopmanModel, ObservableConfig, SnapshotSet, DEFAULT_RIDGE};
use crate::srb::{
    is_diverged, rk4_step, ContactMode, ControlInput, MomentArms, SrbParams, SrbState, INPUT_DIM,
};

/// Sampling box for initial conditions and inputs. Stance-mode forces are
/// drawn around the mode's nominal support force; flight forces span the full
/// actuator range since the plant ignores them.
///
/// The default covers the attitudes and rates a bounding body passes through,
/// which the closed-loop controller needs. [`TrainingDistribution::near_hover`]
/// is a tight box around level stance where the lifted model is accurate to
/// about 1e-4 over 50 ms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingDistribution {
    /// Half-widths of the uniform initial-state box `[p, theta, p_dot, theta_dot]`.
    pub position: f64,
    pub pitch: f64,
    pub velocity: f64,
    pub pitch_rate: f64,
    /// Half-width of the per-component force jitter around nominal, N.
    pub force_jitter: f64,
    /// Nominal moment arms: feet at `±hip_x`, `height` below the CoM.
    pub hip_x: f64,
    pub height: f64,
    /// Half-width of the per-rollout moment-arm jitter, meters.
    pub arm_jitter: f64,
}

impl Default for TrainingDistribution {
    fn default() -> Self {
        Self {
            position: 0.5,
            pitch: 0.5,
            velocity: 1.5,
            pitch_rate: 6.0,
            force_jitter: 100.0,
            hip_x: 0.1881,
            height: 0.30,
            arm_jitter: 0.0,
        }
    }
}

impl TrainingDistribution {
    /// Small pitch, pitch rate and force excursions around level stance.
    pub fn near_hover() -> Self {
        Self {
            pitch: 0.03,
            velocity: 1.0,
            pitch_rate: 0.5,
            force_jitter: 5.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position,
            self.pitch,
            self.velocity,
            self.pitch_rate,
            self.force_jitter,
            self.arm_jitter,
        ];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(
                "training distribution widths must be finite and >= 0".into(),
            ));
        }
        if !(self.height > 0.0) {
            return Err(Error::InvalidParameter(
                "nominal stance height must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn nominal_arms(&self) -> MomentArms {
        MomentArms::symmetric(self.hip_x, self.height)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub n_rollouts: usize,
    pub rollout_len: usize,
    pub dt: f64,
    pub ridge: f64,
    pub distribution: TrainingDistribution,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 100,
            rollout_len: 100,
            dt: 0.001,
            ridge: DEFAULT_RIDGE,
            distribution: TrainingDistribution::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rollouts == 0 || self.rollout_len == 0 {
            return Err(Error::InvalidParameter(
                "n_rollouts and rollout_len must be >= 1".into(),
            ));
        }
        if !(self.dt > 0.0) || !(self.ridge >= 0.0) {
            return Err(Error::InvalidParameter(
                "dt must be > 0 and ridge >= 0".into(),
            ));
        }
        self.distribution.validate()
    }
}

/// Support forces that hold the body still at zero pitch with the given arms:
/// weight shared evenly in trot, and in single-pair stance the loaded pair
/// pushes along its foot-to-CoM line so that it produces no pitch torque.
pub fn nominal_forces(
    mode: ContactMode,
    params: &SrbParams,
    arms: &MomentArms,
) -> [f64; INPUT_DIM] {
    let half = params.weight() / 2.0;
    let along = |r: &Vector2<f64>| {
        // Pair force scaled so its vertical part is half the weight.
        let s = half / -r.y;
        [-r.x * s, half]
    };
    match mode {
        ContactMode::Trot => [0.0, half, 0.0, half],
        ContactMode::FrontStance => {
            let f = along(&arms.front);
            [f[0], f[1], 0.0, 0.0]
        }
        ContactMode::RearStance => {
            let f = along(&arms.rear);
            [0.0, 0.0, f[0], f[1]]
        }
        ContactMode::Flight => [0.0; INPUT_DIM],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingData {
    pub snapshots: SnapshotSet,
    /// Rollouts thrown away because they diverged.
    pub redrawn: usize,
}

fn sample_state(rng: &mut ChaCha8Rng, d: &TrainingDistribution) -> SrbState {
    let mut u = |w: f64| {
        if w > 0.0 {
            rng.random_range(-w..=w)
        } else {
            0.0
        }
    };
    SrbState::from_array([
        u(d.position),
        u(d.position),
        u(d.pitch),
        u(d.velocity),
        u(d.velocity),
        u(d.pitch_rate),
    ])
}

fn sample_forces(
    rng: &mut ChaCha8Rng,
    mode: ContactMode,
    params: &SrbParams,
    nominal: &[f64; INPUT_DIM],
    jitter: f64,
) -> [f64; INPUT_DIM] {
    std::array::from_fn(|c| {
        if mode == ContactMode::Flight {
            let (lo, hi) = (params.u_min[c], params.u_max[c]);
            if lo < hi {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        } else if jitter > 0.0 {
            nominal[c] + rng.random_range(-jitter..=jitter)
        } else {
            nominal[c]
        }
    })
}

/// `n_rollouts` rollouts of `rollout_len` RK4 steps from random initial
/// states with a fresh random input every step, pooled into one snapshot set.
pub fn generate_training_data(
    params: &SrbParams,
    training: &TrainingConfig,
    mode: ContactMode,
    seed: u64,
) -> Result<TrainingData> {
    params.validate()?;
    training.validate()?;
    let d = &training.distribution;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut snapshots = SnapshotSet::new(mode, training.dt);
    let mut redrawn = 0;
    let max_redraws = 100 * training.n_rollouts;
    let mut accepted = 0;
    while accepted < training.n_rollouts {
        let mut arms = d.nominal_arms();
        if d.arm_jitter > 0.0 {
            for r in [&mut arms.front, &mut arms.rear] {
                r.x += rng.random_range(-d.arm_jitter..=d.arm_jitter);
                r.y += rng.random_range(-d.arm_jitter..=d.arm_jitter);
            }
        }
        let nominal = nominal_forces(mode, params, &arms);
        let mut x = sample_state(&mut rng, d);
        let mut rollout = SnapshotSet::new(mode, training.dt);
        let mut ok = true;
        for _ in 0..training.rollout_len {
            let f = sample_forces(&mut rng, mode, params, &nominal, d.force_jitter);
            let y = rk4_step(&x, &ControlInput::new(f, arms), mode, params, training.dt);
            if is_diverged(&y) {
                ok = false;
                break;
            }
            rollout.push(x, f, y);
            x = y;
        }
        if ok {
            snapshots.extend_from(&rollout)?;
            accepted += 1;
        } else {
            redrawn += 1;
            if redrawn > max_redraws {
                return Err(Error::InvalidParameter(format!(
                    "{redrawn} rollouts diverged; narrow the training distribution"
                )));
            }
        }
    }
    Ok(TrainingData { snapshots, redrawn })
}

/// Data generation plus EDMD fit for one mode. Each mode draws from its own
/// stream derived from `seed`.
pub fn fit_mode(
    params: &SrbParams,
    training: &TrainingConfig,
    observables: &ObservableConfig,
    mode: ContactMode,
    seed: u64,
) -> Result<KoopmanModel> {
    let data = generate_training_data(params, training, mode, mode_seed(seed, mode))?;
    edmd_fit(&data.snapshots, observables, training.ridge)
}

/// Per-mode stream offset so fits of different modes never share draws.
pub fn mode_seed(seed: u64, mode: ContactMode) -> u64 {
    let k = ContactMode::ALL
        .iter()
        .position(|m| *m == mode)
        .unwrap_or(0) as u64;
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k + 1)
}
