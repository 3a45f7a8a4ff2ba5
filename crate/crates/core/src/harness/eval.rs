//! Held-out multi-step prediction error of a fitted model against the plant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::datagen::{nominal_forces, TrainingDistribution};
use crate::koopman::{multi_step_predict, KoopmanModel};
use crate::srb::{rk4_step, ContactMode, ControlInput, SrbParams, SrbState, INPUT_DIM, STATE_DIM};

/// Error statistics over test pairs, indexed `[step][component]`; step 0 is
/// the shared initial condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitEvaluation {
    pub mode: ContactMode,
    pub dt: f64,
    pub n_tests: usize,
    /// Mean of the signed error `predicted - actual`.
    pub mean: Vec<[f64; STATE_DIM]>,
    pub variance: Vec<[f64; STATE_DIM]>,
    pub mean_abs: Vec<[f64; STATE_DIM]>,
}

impl FitEvaluation {
    /// Largest mean absolute error over all steps and components.
    pub fn max_mean_abs(&self) -> f64 {
        self.mean_abs
            .iter()
            .flat_map(|r| r.iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn steps(&self) -> usize {
        self.mean_abs.len().saturating_sub(1)
    }
}

/// Plant stepping function used as ground truth, so that toy plants can stand
/// in for the rigid body.
pub trait Plant {
    fn step(&self, x: &SrbState, u: &[f64; INPUT_DIM], dt: f64) -> SrbState;
}

/// The rigid body in one contact mode with fixed moment arms.
pub struct SrbPlant<'a> {
    pub params: &'a SrbParams,
    pub mode: ContactMode,
    pub distribution: &'a TrainingDistribution,
}

impl Plant for SrbPlant<'_> {
    fn step(&self, x: &SrbState, u: &[f64; INPUT_DIM], dt: f64) -> SrbState {
        let input = ControlInput::new(*u, self.distribution.nominal_arms());
        rk4_step(x, &input, self.mode, self.params, dt)
    }
}

/// Draws `n_tests` initial conditions and force profiles from `distribution`,
/// rolls out the plant and the model for `horizon_steps` model steps, and
/// reports per-step error statistics.
pub fn evaluate_fit(
    model: &KoopmanModel,
    params: &SrbParams,
    distribution: &TrainingDistribution,
    n_tests: usize,
    horizon_steps: usize,
    seed: u64,
) -> Result<FitEvaluation> {
    let plant = SrbPlant {
        params,
        mode: model.mode,
        distribution,
    };
    evaluate_against(
        model,
        &plant,
        params,
        distribution,
        n_tests,
        horizon_steps,
        seed,
    )
}

pub fn evaluate_against(
    model: &KoopmanModel,
    plant: &dyn Plant,
    params: &SrbParams,
    distribution: &TrainingDistribution,
    n_tests: usize,
    horizon_steps: usize,
    seed: u64,
) -> Result<FitEvaluation> {
    if n_tests == 0 {
        return Err(Error::InvalidParameter("n_tests must be >= 1".into()));
    }
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nominal = nominal_forces(model.mode, params, &distribution.nominal_arms());
    let steps = horizon_steps + 1;
    let mut sum = vec![[0.0; STATE_DIM]; steps];
    let mut sum_sq = vec![[0.0; STATE_DIM]; steps];
    let mut sum_abs = vec![[0.0; STATE_DIM]; steps];
    let draw = |w: f64, rng: &mut ChaCha8Rng| {
        if w > 0.0 {
            rng.random_range(-w..=w)
        } else {
            0.0
        }
    };
    for _ in 0..n_tests {
        let d = distribution;
        let x0 = SrbState::from_array([
            draw(d.position, &mut rng),
            draw(d.position, &mut rng),
            draw(d.pitch, &mut rng),
            draw(d.velocity, &mut rng),
            draw(d.velocity, &mut rng),
            draw(d.pitch_rate, &mut rng),
        ]);
        let u_seq: Vec<[f64; INPUT_DIM]> = (0..horizon_steps)
            .map(|_| {
                std::array::from_fn(|c| {
                    if model.mode == ContactMode::Flight {
                        let (lo, hi) = (params.u_min[c], params.u_max[c]);
                        if lo < hi {
                            rng.random_range(lo..=hi)
                        } else {
                            lo
                        }
                    } else {
                        nominal[c] + draw(d.force_jitter, &mut rng)
                    }
                })
            })
            .collect();
        let predicted = multi_step_predict(model, &x0, &u_seq);
        let mut x = x0;
        for k in 0..steps {
            if k > 0 {
                x = plant.step(&x, &u_seq[k - 1], model.dt);
            }
            let (p, a) = (predicted[k].to_array(), x.to_array());
            for c in 0..STATE_DIM {
                let e = p[c] - a[c];
                sum[k][c] += e;
                sum_sq[k][c] += e * e;
                sum_abs[k][c] += e.abs();
            }
        }
    }
    let n = n_tests as f64;
    let mean: Vec<[f64; STATE_DIM]> = sum.iter().map(|r| r.map(|v| v / n)).collect();
    let variance = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| std::array::from_fn(|c| (sq[c] / n - m[c] * m[c]).max(0.0)))
        .collect();
    Ok(FitEvaluation {
        mode: model.mode,
        dt: model.dt,
        n_tests,
        mean,
        variance,
        mean_abs: sum_abs.iter().map(|r| r.map(|v| v / n)).collect(),
    })
}
