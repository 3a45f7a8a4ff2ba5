use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::{Gait, GaitSchedule};
use crate::harness::datagen::TrainingConfig;
use crate::koopman::ObservableConfig;
use crate::leg::LegParams;
use crate::lmpc::MpcConfig;
use crate::srb::SrbParams;
use crate::terrain::{Block, RoughTerrainSpec, TerrainProfile};

/// Closed-loop controller settings that are not part of the MPC itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Plant integration step, seconds.
    pub plant_dt: f64,
    /// Plant steps per control tick.
    pub control_every: usize,
    /// CoM height above the stance feet, meters.
    pub nominal_height: f64,
    /// Hip position along the body x axis; front at `+hip_x`, rear at `-hip_x`.
    pub hip_x: f64,
    pub swing_apex: f64,
    pub raibert_kv: f64,
    /// Extra forward offset of the position reference, as a fraction of the
    /// horizon length travelled at the commanded speed.
    pub position_lookahead: f64,
    /// Track the nominal periodic height and pitch motion while bounding
    /// instead of a level, constant-height body.
    pub bound_periodic_reference: bool,
    /// Treat MPC forces as world-frame (ground normal along +z) and rotate
    /// them into the body frame before they reach the plant.
    pub world_frame_forces: bool,
    /// Pitch limit that counts as a fall, radians.
    pub fall_pitch: f64,
    /// Record wall-clock QP time in the log. Off gives byte-identical logs.
    pub log_solve_time: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            plant_dt: 0.001,
            control_every: 5,
            nominal_height: 0.30,
            hip_x: 0.1881,
            swing_apex: 0.08,
            raibert_kv: 0.03,
            position_lookahead: 0.5,
            bound_periodic_reference: true,
            world_frame_forces: true,
            fall_pitch: 0.8,
            log_solve_time: true,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.plant_dt > 0.0) || self.control_every == 0 {
            return Err(Error::InvalidParameter(
                "plant_dt must be > 0 and control_every >= 1".into(),
            ));
        }
        if !(self.nominal_height > 0.0 && self.hip_x > 0.0 && self.fall_pitch > 0.0) {
            return Err(Error::InvalidParameter(
                "nominal_height, hip_x and fall_pitch must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn control_dt(&self) -> f64 {
        self.plant_dt * self.control_every as f64
    }

    pub fn hip_offset(&self, front: bool) -> Vector2<f64> {
        Vector2::new(if front { self.hip_x } else { -self.hip_x }, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerrainConfig {
    Flat,
    Rough {
        #[serde(default)]
        spec: RoughTerrainSpec,
        seed: u64,
    },
    Blocks {
        blocks: Vec<Block>,
    },
}

impl TerrainConfig {
    pub fn build(&self) -> Result<TerrainProfile> {
        match self {
            TerrainConfig::Flat => Ok(TerrainProfile::flat()),
            TerrainConfig::Rough { spec, seed } => TerrainProfile::rough(spec, *seed),
            TerrainConfig::Blocks { blocks } => TerrainProfile::new(blocks.clone()),
        }
    }
}

/// Scripted force reduction standing in for a foot slip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slip {
    pub t: f64,
    pub duration: f64,
    /// Multiplier applied to the commanded forces during the window.
    pub factor: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityStep {
    pub t: f64,
    pub v: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitRequest {
    pub t: f64,
    pub gait: Gait,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub gait: Gait,
    pub duration: f64,
    /// Forward velocity command, piecewise constant, zero before the first step.
    pub velocity_steps: Vec<VelocityStep>,
    pub gait_requests: Vec<GaitRequest>,
    pub terrain: TerrainConfig,
    pub slips: Vec<Slip>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "trot-in-place".into(),
            gait: Gait::Trot,
            duration: 5.0,
            velocity_steps: Vec::new(),
            gait_requests: Vec::new(),
            terrain: TerrainConfig::Flat,
            slips: Vec::new(),
        }
    }
}

pub const SCENARIO_PRESETS: [&str; 7] = [
    "trot-in-place",
    "trot-steps",
    "bound-steps",
    "trot-rough",
    "bound-rough",
    "trot-to-bound",
    "bound-to-trot",
];

impl Scenario {
    pub fn preset(name: &str) -> Result<Self> {
        let steps = |v: &[(f64, f64)]| v.iter().map(|&(t, v)| VelocityStep { t, v }).collect();
        let rough = TerrainConfig::Rough {
            spec: RoughTerrainSpec::default(),
            seed: 7,
        };
        let s = match name {
            "trot-in-place" => Scenario::default(),
            "trot-steps" => Scenario {
                name: name.into(),
                gait: Gait::Trot,
                duration: 22.0,
                velocity_steps: steps(&[(6.0, 0.1), (10.0, 0.3), (14.0, 0.2), (18.0, 0.0)]),
                ..Scenario::default()
            },
            "bound-steps" => Scenario {
                name: name.into(),
                gait: Gait::Bound,
                duration: 19.0,
                velocity_steps: steps(&[(2.0, 0.1), (7.0, 0.8), (11.0, 0.3), (15.0, 0.0)]),
                ..Scenario::default()
            },
            "trot-rough" => Scenario {
                name: name.into(),
                gait: Gait::Trot,
                duration: 16.0,
                velocity_steps: steps(&[(0.0, 0.3)]),
                terrain: rough,
                slips: vec![
                    Slip {
                        t: 3.0,
                        duration: 0.03,
                        factor: 0.3,
                    },
                    Slip {
                        t: 9.0,
                        duration: 0.03,
                        factor: 0.3,
                    },
                ],
                ..Scenario::default()
            },
            "bound-rough" => Scenario {
                name: name.into(),
                gait: Gait::Bound,
                duration: 8.0,
                velocity_steps: steps(&[(0.0, 0.75)]),
                terrain: rough,
                ..Scenario::default()
            },
            "trot-to-bound" | "bound-to-trot" => {
                let (from, to) = if name == "trot-to-bound" {
                    (Gait::Trot, Gait::Bound)
                } else {
                    (Gait::Bound, Gait::Trot)
                };
                Scenario {
                    name: name.into(),
                    gait: from,
                    duration: 6.0,
                    gait_requests: vec![GaitRequest { t: 3.0, gait: to }],
                    ..Scenario::default()
                }
            }
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown scenario '{other}' (expected one of {})",
                    SCENARIO_PRESETS.join(", ")
                )))
            }
        };
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scenario duration must be > 0, got {}",
                self.duration
            )));
        }
        if self.velocity_steps.windows(2).any(|w| !(w[0].t <= w[1].t))
            || self.gait_requests.windows(2).any(|w| !(w[0].t <= w[1].t))
        {
            return Err(Error::InvalidParameter(
                "velocity steps and gait requests must be sorted by time".into(),
            ));
        }
        if self
            .slips
            .iter()
            .any(|s| !(s.duration >= 0.0 && (0.0..=1.0).contains(&s.factor)))
        {
            return Err(Error::InvalidParameter(
                "slip windows need duration >= 0 and factor in [0, 1]".into(),
            ));
        }
        self.terrain.build()?;
        Ok(())
    }

    pub fn velocity_at(&self, t: f64) -> f64 {
        self.velocity_steps
            .iter()
            .take_while(|s| s.t <= t)
            .last()
            .map_or(0.0, |s| s.v)
    }

    pub fn slip_factor(&self, t: f64) -> Option<f64> {
        self.slips
            .iter()
            .find(|s| s.t <= t && t < s.t + s.duration)
            .map(|s| s.factor)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub srb: SrbParams,
    pub observables: ObservableConfig,
    pub training: TrainingConfig,
    pub mpc: MpcConfig,
    pub schedule: GaitSchedule,
    pub leg: LegParams,
    pub controller: ControllerConfig,
    pub scenario: Scenario,
    pub seed: u64,
}

impl SimConfig {
    pub fn with_scenario(name: &str) -> Result<Self> {
        Ok(Self {
            scenario: Scenario::preset(name)?,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.srb.validate()?;
        self.observables.validate()?;
        self.training.validate()?;
        self.mpc.validate()?;
        self.schedule.validate()?;
        self.leg.validate()?;
        self.controller.validate()?;
        self.scenario.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            serde_json::from_str(text).map_err(|e| Error::malformed("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in SCENARIO_PRESETS {
            let cfg = SimConfig::with_scenario(name).unwrap();
            cfg.validate().unwrap();
            assert_eq!(SimConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
        assert!(Scenario::preset("moonwalk").is_err());
    }

    #[test]
    fn velocity_profile() {
        let s = Scenario::preset("trot-steps").unwrap();
        assert_eq!(s.velocity_at(0.0), 0.0);
        assert_eq!(s.velocity_at(6.0), 0.1);
        assert_eq!(s.velocity_at(12.0), 0.3);
        assert_eq!(s.velocity_at(21.9), 0.0);
    }

    #[test]
    fn partial_config_takes_defaults() {
        let cfg = SimConfig::from_json(r#"{"seed": 5, "mpc": {"horizon": 4}}"#).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.mpc.horizon, 4);
        assert_eq!(cfg.mpc.dt, MpcConfig::default().dt);
        assert!(matches!(
            SimConfig::from_json(r#"{"sede": 5}"#),
            Err(Error::Malformed { .. })
        ));
    }
}
