//! Closed-loop simulation: gait FSM, Koopman MPC in stance, swing-foot
//! references, leg torques, and the rigid-body plant.

use std::path::Path;
use std::time::Instant;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::gait::{
    contact_obstacle_check, raibert_foot_placement, swing_trajectory, BoundProfile, FsmState,
    FsmTraceRow, Gait, Leg,
};
use crate::harness::config::SimConfig;
use crate::harness::datagen::fit_mode;
use crate::harness::log::{LogRecord, QpStats, RunLog};
use crate::koopman::{load_model, save_model, KoopmanModel};
use crate::leg::{
    analytic_ik, analytic_ik_with_rate, stance_torque, swing_pd_torque, JointState, LegParams,
};
use crate::lmpc::{LinearMpc, QpDump, QpDumpWriter, ReferenceTrajectory};
use crate::srb::{rk4_step, rotation_matrix, ContactMode, ControlInput, SrbState};
use crate::terrain::TerrainProfile;

/// One fitted model per stance mode, plus the optional flight model that the
/// controller never queries.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSet {
    pub trot: KoopmanModel,
    pub front_stance: KoopmanModel,
    pub rear_stance: KoopmanModel,
    pub flight: Option<KoopmanModel>,
}

impl ModelSet {
    pub const STANCE_MODES: [ContactMode; 3] = [
        ContactMode::Trot,
        ContactMode::FrontStance,
        ContactMode::RearStance,
    ];

    /// Generates data and fits every mode from `config.seed`.
    pub fn fit(config: &SimConfig) -> Result<Self> {
        let fit = |mode| {
            fit_mode(
                &config.srb,
                &config.training,
                &config.observables,
                mode,
                config.seed,
            )
        };
        Ok(Self {
            trot: fit(ContactMode::Trot)?,
            front_stance: fit(ContactMode::FrontStance)?,
            rear_stance: fit(ContactMode::RearStance)?,
            flight: Some(fit(ContactMode::Flight)?),
        })
    }

    pub fn get(&self, mode: ContactMode) -> Option<&KoopmanModel> {
        match mode {
            ContactMode::Trot => Some(&self.trot),
            ContactMode::FrontStance => Some(&self.front_stance),
            ContactMode::RearStance => Some(&self.rear_stance),
            ContactMode::Flight => self.flight.as_ref(),
        }
    }

    pub fn file_name(mode: ContactMode) -> String {
        format!("{mode}.json")
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for mode in ContactMode::ALL {
            if let Some(m) = self.get(mode) {
                save_model(m, dir.join(Self::file_name(mode)))?;
            }
        }
        Ok(())
    }

    /// Loads the three stance models (required) and the flight model if present.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let load = |mode: ContactMode| -> Result<KoopmanModel> {
            let m = load_model(dir.join(Self::file_name(mode)))?;
            if m.mode != mode {
                return Err(Error::ModelMismatch(format!(
                    "{} holds a {} model",
                    Self::file_name(mode),
                    m.mode
                )));
            }
            Ok(m)
        };
        let flight_path = dir.join(Self::file_name(ContactMode::Flight));
        Ok(Self {
            trot: load(ContactMode::Trot)?,
            front_stance: load(ContactMode::FrontStance)?,
            rear_stance: load(ContactMode::RearStance)?,
            flight: if flight_path.exists() {
                Some(load(ContactMode::Flight)?)
            } else {
                None
            },
        })
    }
}

/// Log of a closed-loop run together with the FSM trace it followed.
#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub log: RunLog,
    pub trace: Vec<FsmTraceRow>,
    pub terrain: TerrainProfile,
}

#[derive(Clone, Debug)]
struct Foot {
    pos: Vector2<f64>,
    in_contact: bool,
    liftoff: Vector2<f64>,
    liftoff_t: f64,
    /// Foot position frozen by the obstacle-hold rule, relative to the hip
    /// in the body frame: the leg holds its pose while the body moves on.
    held: Option<Vector2<f64>>,
    /// Swing reference from the previous tick, world frame.
    desired: Vector2<f64>,
    q_prev: Option<Vector2<f64>>,
}

fn clamp_to_workspace(rel: Vector2<f64>, leg: &LegParams) -> Vector2<f64> {
    let (min, max) = leg.reach();
    let d = rel.norm();
    let lo = min + 1e-6 * max;
    let hi = max * (1.0 - 1e-6);
    if d < 1e-12 {
        Vector2::new(0.0, -lo)
    } else {
        rel * (d.clamp(lo, hi) / d)
    }
}

fn interpolate_mpc(models: &ModelSet, config: &SimConfig) -> Result<[LinearMpc; 3]> {
    let build = |mode: ContactMode| -> Result<LinearMpc> {
        let m = models
            .get(mode)
            .ok_or_else(|| Error::ModelMismatch(format!("no {mode} model")))?;
        let ratio = config.mpc.dt / m.dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-6 {
            return Err(Error::ModelMismatch(format!(
                "MPC dt {} s is not a whole multiple of the {mode} model dt {} s",
                config.mpc.dt, m.dt
            )));
        }
        let resampled = m.resampled(steps as usize)?;
        let mut mpc_cfg = config.mpc.clone();
        mpc_cfg.dt = resampled.dt;
        LinearMpc::new(resampled, mpc_cfg)
    };
    Ok([
        build(ContactMode::Trot)?,
        build(ContactMode::FrontStance)?,
        build(ContactMode::RearStance)?,
    ])
}

fn mpc_index(mode: ContactMode) -> Option<usize> {
    match mode {
        ContactMode::Trot => Some(0),
        ContactMode::FrontStance => Some(1),
        ContactMode::RearStance => Some(2),
        ContactMode::Flight => None,
    }
}

fn push_event(events: &mut String, tag: impl AsRef<str>) {
    if !events.is_empty() {
        events.push(';');
    }
    events.push_str(tag.as_ref());
}

/// Derivative of `R(theta)` divided by `theta_dot`.
fn rot_rate(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(-s, -c, c, -s)
}

pub fn run_closed_loop(config: &SimConfig, models: &ModelSet) -> Result<SimOutput> {
    run_closed_loop_with_dump(config, models, None)
}

/// As [`run_closed_loop`], writing every QP instance to `dump` when given.
pub fn run_closed_loop_with_dump(
    config: &SimConfig,
    models: &ModelSet,
    mut dump: Option<&mut QpDumpWriter>,
) -> Result<SimOutput> {
    config.validate()?;
    let ctl = &config.controller;
    let sched = &config.schedule;
    let scenario = &config.scenario;
    let terrain = scenario.terrain.build()?;
    let mut mpcs = interpolate_mpc(models, config)?;
    let dt_ctrl = ctl.control_dt();
    let n_ticks = (scenario.duration / dt_ctrl).round() as usize;
    let horizon_time = config.mpc.horizon as f64 * config.mpc.dt;
    let leg_params: [LegParams; 4] = std::array::from_fn(|k| LegParams {
        hip_offset: ctl.hip_offset(Leg::ALL[k].is_front()),
        ..config.leg.clone()
    });

    let ground0 = terrain.height_at(0.0);
    let mut x = SrbState::from_array([0.0, ground0 + ctl.nominal_height, 0.0, 0.0, 0.0, 0.0]);
    let mut fsm = FsmState::new(scenario.gait, sched);
    let mut feet: [Foot; 4] = std::array::from_fn(|k| {
        let hx = leg_params[k].hip_offset.x;
        let pos = Vector2::new(hx, terrain.height_at(hx));
        Foot {
            pos,
            in_contact: true,
            liftoff: pos,
            liftoff_t: 0.0,
            held: None,
            desired: pos,
            q_prev: None,
        }
    });
    let mut log = RunLog::new(config.to_json());
    let mut trace = Vec::with_capacity(n_ticks);
    let mut next_request = 0;
    let mut ground = ground0;
    let profile = BoundProfile::new(
        sched,
        config.srb.mass,
        config.srb.inertia,
        config.srb.gravity[1],
        ctl.hip_x,
    );

    for tick in 0..n_ticks {
        let t = tick as f64 * dt_ctrl;
        let mut events = String::new();
        let v_des = scenario.velocity_at(t);

        while let Some(req) = scenario.gait_requests.get(next_request) {
            if req.t > t + 1e-9 {
                break;
            }
            fsm.handle_transition(req.gait);
            push_event(&mut events, format!("request:{}", req.gait));
            next_request += 1;
        }
        if tick > 0 {
            let step = fsm.advance(dt_ctrl, sched);
            if let Some(sw) = step.switched {
                push_event(&mut events, format!("switch:{}->{}", sw.from, sw.to));
            }
            if step.phase_changed {
                if let Some(k) = mpc_index(step.mode) {
                    mpcs[k].reset();
                }
            }
        }
        let mode = fsm.mode(sched);

        // Touchdowns and liftoffs from the schedule.
        let rot = rotation_matrix(x.theta);
        let hip_world = |k: usize| x.p + rot * leg_params[k].hip_offset;
        let held_world = |k: usize, rel: &Vector2<f64>| hip_world(k) + rot * rel;
        for leg in Leg::ALL {
            let k = leg.index();
            let hip = hip_world(k);
            let foot = &mut feet[k];
            if fsm.contacts[k] && !foot.in_contact {
                let mut p = foot
                    .held
                    .as_ref()
                    .map_or(foot.desired, |h| held_world(k, h));
                // A foot cannot land beyond the leg's reach.
                let (_, reach) = leg_params[k].reach();
                let d = p - hip;
                if d.norm() > reach {
                    p = hip + d * (reach / d.norm());
                }
                p.y = terrain.height_at(p.x);
                foot.pos = p;
                foot.in_contact = true;
                foot.held = None;
                push_event(
                    &mut events,
                    format!("touchdown:{}:{}:{}", leg.as_str(), p.x, p.y),
                );
            } else if !fsm.contacts[k] && foot.in_contact {
                foot.in_contact = false;
                foot.liftoff = foot.pos;
                foot.liftoff_t = t;
                foot.desired = foot.pos;
            }
        }

        // Swing references and the obstacle-hold rule.
        let mut swing_vel = [Vector2::zeros(); 4];
        let mut swing_pos: [Option<Vector2<f64>>; 4] = [None; 4];
        for leg in Leg::ALL {
            let k = leg.index();
            if feet[k].in_contact {
                continue;
            }
            let remaining = fsm.time_to_touchdown(leg, sched);
            let elapsed = t - feet[k].liftoff_t;
            let total = elapsed + remaining;
            let s = if total > 0.0 { elapsed / total } else { 1.0 };
            let mut at_touchdown = x;
            at_touchdown.p += x.p_dot * remaining;
            let target = raibert_foot_placement(
                &at_touchdown,
                &leg_params[k].hip_offset,
                v_des,
                fsm.stance_duration(leg, sched),
                ctl.raibert_kv,
                &terrain,
            );
            let held = feet[k].held.as_ref().map(|h| held_world(k, h));
            let st = swing_trajectory(&feet[k].liftoff, &target, s, ctl.swing_apex, held.as_ref());
            swing_pos[k] = Some(st.position);
            swing_vel[k] = if total > 0.0 {
                st.velocity / total
            } else {
                Vector2::zeros()
            };
        }
        let hold = contact_obstacle_check(&swing_pos, &terrain, fsm.hold);
        for leg in Leg::ALL {
            let k = leg.index();
            if hold[k] && !fsm.hold[k] {
                feet[k].held = swing_pos[k].map(|p| rot.transpose() * (p - hip_world(k)));
                swing_vel[k] = Vector2::zeros();
                push_event(&mut events, format!("hold:{}", leg.as_str()));
            }
        }
        fsm.hold = hold;

        // Stance forces.
        let arm = |legs: [Leg; 2], fallback: Vector2<f64>| {
            let pts: Vec<_> = legs
                .iter()
                .filter(|l| feet[l.index()].in_contact)
                .map(|l| feet[l.index()].pos)
                .collect();
            if pts.is_empty() {
                fallback
            } else {
                let mean = pts.iter().sum::<Vector2<f64>>() / pts.len() as f64;
                rot.transpose() * (mean - x.p)
            }
        };
        let r_i = arm(
            [Leg::FR, Leg::FL],
            Vector2::new(ctl.hip_x, -ctl.nominal_height),
        );
        let r_j = arm(
            [Leg::RR, Leg::RL],
            Vector2::new(-ctl.hip_x, -ctl.nominal_height),
        );
        let mut forces = [0.0; 4];
        let mut qp = None;
        let stance_heights: Vec<f64> = feet
            .iter()
            .filter(|f| f.in_contact)
            .map(|f| f.pos.y)
            .collect();
        if !stance_heights.is_empty() {
            ground = stance_heights.iter().sum::<f64>() / stance_heights.len() as f64;
        }
        let bounding = fsm.gait == Gait::Bound && ctl.bound_periodic_reference;
        let cycle_t = fsm.cycle_time(sched);
        let reference_at = |ahead: f64| {
            let [dz, vz, th, w] = if bounding {
                profile.sample(cycle_t + ahead)
            } else {
                [0.0; 4]
            };
            [
                x.p.x + ctl.position_lookahead * v_des * horizon_time + v_des * ahead,
                ground + ctl.nominal_height + dz,
                th,
                v_des,
                vz,
                w,
            ]
        };
        let reference = reference_at(0.0);
        if let Some(k) = mpc_index(mode) {
            let traj = ReferenceTrajectory {
                states: (1..=config.mpc.horizon)
                    .map(|i| SrbState::from_array(reference_at(i as f64 * config.mpc.dt)))
                    .collect(),
            };
            // Predictions past a change of contact mode use the wrong model.
            let phase = fsm.current_phase(sched);
            let next = sched.phase(fsm.gait, fsm.phase + 1);
            let steps = if next.mode == mode {
                config.mpc.horizon
            } else {
                ((phase.duration - fsm.clock) / config.mpc.dt - 1e-9).ceil() as usize
            };
            mpcs[k].set_weighted_steps(steps);
            let started = Instant::now();
            match mpcs[k].step(&x, &traj) {
                Ok(out) => {
                    let ms = started.elapsed().as_secs_f64() * 1e3;
                    forces = out.forces;
                    if let Some(w) = dump.as_deref_mut() {
                        let p = mpcs[k].linear_term(&x, &traj)?;
                        let (lo, hi) = mpcs[k].bounds();
                        w.write(&QpDump::new(
                            t,
                            mode,
                            mpcs[k].hessian(),
                            &p,
                            lo,
                            hi,
                            &out.solution,
                        ))?;
                    }
                    qp = Some(QpStats {
                        objective: out.solution.objective,
                        kkt_residual: out.solution.kkt_residual,
                        solve_ms: ctl.log_solve_time.then_some(ms),
                        iterations: out.solution.iterations,
                    });
                }
                Err(e) => {
                    // Hold the previous command.
                    forces = log.records.last().map_or([0.0; 4], |r| r.forces);
                    push_event(
                        &mut events,
                        format!("qp-error:{}", e.to_string().replace([',', ';'], " ")),
                    );
                }
            }
        }
        if ctl.world_frame_forces {
            let to_body = |fx: f64, fz: f64| rot.transpose() * Vector2::new(fx, fz);
            let (fi, fj) = (to_body(forces[0], forces[1]), to_body(forces[2], forces[3]));
            forces = [fi.x, fi.y, fj.x, fj.y];
        }
        let slip = scenario.slip_factor(t);
        if let Some(f) = slip {
            forces = forces.map(|v| v * f);
            push_event(&mut events, "slip");
        }

        // Leg torques, logged only.
        let mut torques = [0.0; 8];
        for leg in Leg::ALL {
            let k = leg.index();
            let lp = &leg_params[k];
            let hip_world = x.p + rot * lp.hip_offset;
            let to_hip =
                |w: Vector2<f64>| clamp_to_workspace(rot.transpose() * (w - hip_world), lp);
            let tau = if feet[k].in_contact {
                let q = analytic_ik(&to_hip(feet[k].pos), lp)?;
                feet[k].q_prev = Some(q.q);
                let f = if leg.is_front() {
                    Vector2::new(forces[0], forces[1])
                } else {
                    Vector2::new(forces[2], forces[3])
                };
                stance_torque(&q, &f, lp)
            } else {
                let target = swing_pos[k].expect("swing leg has a reference");
                let rel = to_hip(target);
                let rel_vel = if feet[k].held.is_some() {
                    Vector2::zeros()
                } else {
                    rot.transpose() * (swing_vel[k] - x.p_dot)
                        - x.theta_dot
                            * (rot.transpose() * rot_rate(x.theta))
                            * (rel + lp.hip_offset)
                };
                let desired = analytic_ik_with_rate(&rel, &rel_vel, lp)?;
                let q_now = analytic_ik(&to_hip(feet[k].desired), lp)?.q;
                let q_dot = feet[k]
                    .q_prev
                    .map_or(Vector2::zeros(), |qp| (q_now - qp) / dt_ctrl);
                feet[k].q_prev = Some(q_now);
                feet[k].desired = target;
                swing_pd_torque(&JointState { q: q_now, q_dot }, &desired, lp)
            };
            torques[2 * k] = tau[0];
            torques[2 * k + 1] = tau[1];
        }

        trace.push(FsmTraceRow {
            t,
            gait: fsm.gait,
            phase: fsm.phase,
            mode,
            contacts: fsm.contacts,
        });
        log.records.push(LogRecord {
            t,
            state: x.to_array(),
            mode,
            contacts: fsm.contacts,
            forces,
            torques,
            qp,
            events,
            reference,
            gait: fsm.gait,
            phase: fsm.phase,
            phase_clock: fsm.clock,
            pending: fsm.pending,
            slip,
        });

        // Plant.
        let input = ControlInput {
            f_i: Vector2::new(forces[0], forces[1]),
            f_j: Vector2::new(forces[2], forces[3]),
            r_i,
            r_j,
        };
        for sub in 0..ctl.control_every {
            x = rk4_step(&x, &input, mode, &config.srb, ctl.plant_dt);
            let reason = if !x.is_finite() {
                Some("state became non-finite".to_string())
            } else if x.theta.abs() > ctl.fall_pitch {
                Some(format!("pitch {} exceeded {}", x.theta, ctl.fall_pitch))
            } else if x.p.y < terrain.height_at(x.p.x) {
                Some(format!("CoM height {} below terrain", x.p.y))
            } else {
                None
            };
            if let Some(reason) = reason {
                let t_fall = t + (sub + 1) as f64 * ctl.plant_dt;
                log.failure = Some(format!("fall at t = {t_fall}: {reason}"));
                log.records.push(LogRecord {
                    t: t_fall,
                    state: x.to_array(),
                    mode,
                    contacts: fsm.contacts,
                    forces,
                    torques,
                    qp: None,
                    events: "fall".into(),
                    reference,
                    gait: fsm.gait,
                    phase: fsm.phase,
                    phase_clock: fsm.clock,
                    pending: fsm.pending,
                    slip,
                });
                return Ok(SimOutput {
                    log,
                    trace,
                    terrain,
                });
            }
        }
    }
    Ok(SimOutput {
        log,
        trace,
        terrain,
    })
}

/// A run whose scenario must request at least one gait switch.
pub fn run_transition_scenario(config: &SimConfig, models: &ModelSet) -> Result<SimOutput> {
    if config.scenario.gait_requests.is_empty() {
        return Err(Error::InvalidParameter(
            "transition scenario has no gait requests".into(),
        ));
    }
    run_closed_loop(config, models)
}
