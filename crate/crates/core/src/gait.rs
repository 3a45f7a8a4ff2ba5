//! Trot and bound contact scheduling, swing-foot references and the
//! obstacle-hold rule.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::srb::{rotation_matrix, ContactMode, SrbState};
use crate::terrain::TerrainProfile;

/// Clock slack when comparing against phase durations, seconds.
const CLOCK_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gait {
    Trot,
    Bound,
}

impl Gait {
    pub fn as_str(self) -> &'static str {
        match self {
            Gait::Trot => "trot",
            Gait::Bound => "bound",
        }
    }
}

impl fmt::Display for Gait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gait {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trot" => Ok(Gait::Trot),
            "bound" => Ok(Gait::Bound),
            other => Err(Error::InvalidParameter(format!("unknown gait '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Leg {
    FR,
    FL,
    RR,
    RL,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::FR, Leg::FL, Leg::RR, Leg::RL];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_front(self) -> bool {
        matches!(self, Leg::FR | Leg::FL)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Leg::FR => "FR",
            Leg::FL => "FL",
            Leg::RR => "RR",
            Leg::RL => "RL",
        }
    }
}

/// Contact flags in `[FR, FL, RR, RL]` order.
pub type Contacts = [bool; 4];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Phase {
    pub mode: ContactMode,
    pub duration: f64,
    pub contacts: Contacts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitSchedule {
    /// Duration of each diagonal-pair stance, seconds.
    pub trot_half_period: f64,
    pub bound_front_stance: f64,
    pub bound_flight: f64,
    pub bound_rear_stance: f64,
}

impl Default for GaitSchedule {
    fn default() -> Self {
        Self {
            trot_half_period: 0.25,
            bound_front_stance: 0.1,
            bound_flight: 0.1,
            bound_rear_stance: 0.05,
        }
    }
}

impl GaitSchedule {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.trot_half_period,
            self.bound_front_stance,
            self.bound_flight,
            self.bound_rear_stance,
        ];
        if all.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "gait durations must be > 0: {all:?}"
            )));
        }
        Ok(())
    }

    pub fn phase_count(&self, gait: Gait) -> usize {
        match gait {
            Gait::Trot => 2,
            Gait::Bound => 4,
        }
    }

    pub fn phase(&self, gait: Gait, index: usize) -> Phase {
        match (gait, index % self.phase_count(gait)) {
            (Gait::Trot, 0) => Phase {
                mode: ContactMode::Trot,
                duration: self.trot_half_period,
                contacts: [true, false, false, true],
            },
            (Gait::Trot, _) => Phase {
                mode: ContactMode::Trot,
                duration: self.trot_half_period,
                contacts: [false, true, true, false],
            },
            (Gait::Bound, 0) => Phase {
                mode: ContactMode::FrontStance,
                duration: self.bound_front_stance,
                contacts: [true, true, false, false],
            },
            (Gait::Bound, 2) => Phase {
                mode: ContactMode::RearStance,
                duration: self.bound_rear_stance,
                contacts: [false, false, true, true],
            },
            (Gait::Bound, _) => Phase {
                mode: ContactMode::Flight,
                duration: self.bound_flight,
                contacts: [false; 4],
            },
        }
    }

    pub fn cycle_duration(&self, gait: Gait) -> f64 {
        (0..self.phase_count(gait))
            .map(|k| self.phase(gait, k).duration)
            .sum()
    }
}

/// Nominal periodic bound motion: the vertical and pitch trajectory produced
/// by constant vertical stance forces that carry the body weight over the
/// cycle and leave zero net pitch impulse. Pitch oscillation is inherent to
/// bounding, so tracking this instead of a level body keeps the MPC from
/// spending horizontal force on cancelling stance torque.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundProfile {
    cycle: f64,
    /// `(start, duration, vertical accel, pitch accel)` per phase.
    segments: Vec<(f64, f64, f64, f64)>,
    /// Height, vertical velocity, pitch and pitch rate at each segment start.
    starts: Vec<[f64; 4]>,
}

impl BoundProfile {
    /// `mass`, `inertia`, `gravity` (magnitude) and the hip lever arm `hip_x`
    /// set the accelerations; the trajectory has zero mean in every channel.
    pub fn new(schedule: &GaitSchedule, mass: f64, inertia: f64, gravity: f64, hip_x: f64) -> Self {
        let cycle = schedule.cycle_duration(Gait::Bound);
        // Equal lever arms: each stance pair delivers half the cycle impulse.
        let impulse = 0.5 * mass * gravity * cycle;
        let mut segments = Vec::with_capacity(4);
        let mut start = 0.0;
        for k in 0..4 {
            let ph = schedule.phase(Gait::Bound, k);
            let (fz, lever) = match ph.mode {
                ContactMode::FrontStance => (impulse / ph.duration, hip_x),
                ContactMode::RearStance => (impulse / ph.duration, -hip_x),
                _ => (0.0, 0.0),
            };
            segments.push((
                start,
                ph.duration,
                fz / mass - gravity,
                lever * fz / inertia,
            ));
            start += ph.duration;
        }
        // Integrate from zero initial values, then shift so each channel's
        // position and velocity have zero cycle mean.
        type Segment = (f64, f64, f64, f64);
        let integrate = |acc: &dyn Fn(&Segment) -> f64| {
            let (mut p, mut v) = (0.0, 0.0);
            let (mut p_area, mut v_area) = (0.0, 0.0);
            let mut out = Vec::with_capacity(4);
            for seg in &segments {
                let (d, a) = (seg.1, acc(seg));
                out.push((p, v));
                v_area += v * d + 0.5 * a * d * d;
                p_area += p * d + 0.5 * v * d * d + a * d * d * d / 6.0;
                p += v * d + 0.5 * a * d * d;
                v += a * d;
            }
            // Offsets: v0 with mean(v) = 0, then p0 with mean(p) = 0.
            let v0 = -v_area / cycle;
            let p0 = -(p_area + 0.5 * v0 * cycle * cycle) / cycle;
            out.into_iter()
                .zip(&segments)
                .map(|((p, v), seg)| (p + p0 + v0 * seg.0, v + v0))
                .collect::<Vec<_>>()
        };
        let z = integrate(&|s| s.2);
        let th = integrate(&|s| s.3);
        let starts = z
            .iter()
            .zip(&th)
            .map(|(a, b)| [a.0, a.1, b.0, b.1])
            .collect();
        Self {
            cycle,
            segments,
            starts,
        }
    }

    pub fn cycle(&self) -> f64 {
        self.cycle
    }

    /// `[height offset, vertical velocity, pitch, pitch rate]` at cycle time `t`
    /// (wrapped into one cycle).
    pub fn sample(&self, t: f64) -> [f64; 4] {
        let t = t.rem_euclid(self.cycle);
        let k = self.segments.iter().rposition(|s| s.0 <= t).unwrap_or(0);
        let (start, _, az, aw) = self.segments[k];
        let tau = t - start;
        let [z, vz, th, w] = self.starts[k];
        [
            z + vz * tau + 0.5 * az * tau * tau,
            vz + az * tau,
            th + w * tau + 0.5 * aw * tau * tau,
            w + aw * tau,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Switch {
    pub from: Gait,
    pub to: Gait,
}

/// Result of one [`FsmState::advance`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FsmStep {
    /// Mode the controller must use for the coming tick.
    pub mode: ContactMode,
    pub phase_changed: bool,
    pub switched: Option<Switch>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FsmState {
    pub gait: Gait,
    pub phase: usize,
    pub clock: f64,
    pub contacts: Contacts,
    pub pending: Option<Gait>,
    pub hold: [bool; 4],
}

impl FsmState {
    pub fn new(gait: Gait, schedule: &GaitSchedule) -> Self {
        Self {
            gait,
            phase: 0,
            clock: 0.0,
            contacts: schedule.phase(gait, 0).contacts,
            pending: None,
            hold: [false; 4],
        }
    }

    pub fn current_phase(&self, schedule: &GaitSchedule) -> Phase {
        schedule.phase(self.gait, self.phase)
    }

    pub fn mode(&self, schedule: &GaitSchedule) -> ContactMode {
        self.current_phase(schedule).mode
    }

    /// Register a gait request. Asking for the active gait cancels any pending
    /// switch. Activation itself happens in [`FsmState::advance`]: trot to
    /// bound at the next trot phase boundary, bound to trot only while the
    /// body is already airborne.
    /// Time since the start of the current gait cycle.
    pub fn cycle_time(&self, schedule: &GaitSchedule) -> f64 {
        (0..self.phase)
            .map(|k| schedule.phase(self.gait, k).duration)
            .sum::<f64>()
            + self.clock
    }

    pub fn handle_transition(&mut self, request: Gait) {
        self.pending = (request != self.gait).then_some(request);
    }

    pub fn advance(&mut self, dt: f64, schedule: &GaitSchedule) -> FsmStep {
        let was_flight = self.mode(schedule) == ContactMode::Flight;
        self.clock += dt;
        let mut phase_changed = false;
        loop {
            let d = self.current_phase(schedule).duration;
            if self.clock + CLOCK_EPS < d {
                break;
            }
            self.clock = (self.clock - d).max(0.0);
            self.phase = (self.phase + 1) % schedule.phase_count(self.gait);
            phase_changed = true;
        }

        let mut switched = None;
        match (self.gait, self.pending) {
            (Gait::Trot, Some(Gait::Bound)) if phase_changed => {
                self.gait = Gait::Bound;
                self.phase = 0;
                switched = Some(Switch {
                    from: Gait::Trot,
                    to: Gait::Bound,
                });
            }
            // Still in the flight phase that was running during the elapsed
            // tick, so the switch instant lies strictly inside it.
            (Gait::Bound, Some(Gait::Trot))
                if was_flight && !phase_changed && self.mode(schedule) == ContactMode::Flight =>
            {
                self.gait = Gait::Trot;
                self.phase = 0;
                self.clock = 0.0;
                phase_changed = true;
                switched = Some(Switch {
                    from: Gait::Bound,
                    to: Gait::Trot,
                });
            }
            _ => {}
        }
        if switched.is_some() {
            self.pending = None;
        }

        let phase = self.current_phase(schedule);
        if phase_changed {
            for k in 0..4 {
                if phase.contacts[k] {
                    self.hold[k] = false;
                }
            }
        }
        self.contacts = phase.contacts;
        FsmStep {
            mode: phase.mode,
            phase_changed,
            switched,
        }
    }

    /// Time until `leg` is next scheduled in contact, assuming no switch. Zero
    /// for a leg in contact now.
    pub fn time_to_touchdown(&self, leg: Leg, schedule: &GaitSchedule) -> f64 {
        let k = leg.index();
        if self.contacts[k] {
            return 0.0;
        }
        let n = schedule.phase_count(self.gait);
        let mut t = self.current_phase(schedule).duration - self.clock;
        for step in 1..=n {
            let next = schedule.phase(self.gait, self.phase + step);
            if next.contacts[k] {
                return t.max(0.0);
            }
            t += next.duration;
        }
        t
    }

    /// Length of the next stance of `leg` (the current one if in contact).
    pub fn stance_duration(&self, leg: Leg, schedule: &GaitSchedule) -> f64 {
        let k = leg.index();
        let n = schedule.phase_count(self.gait);
        (0..n)
            .map(|step| schedule.phase(self.gait, self.phase + step))
            .find(|p| p.contacts[k])
            .map_or(0.0, |p| p.duration)
    }
}

/// Raibert-style touchdown point in the world frame:
/// `hip_x + v_x T/2 + k_v (v_x - v_des)`, at the terrain height there.
pub fn raibert_foot_placement(
    x: &SrbState,
    hip_offset: &Vector2<f64>,
    v_des: f64,
    t_stance: f64,
    k_v: f64,
    terrain: &TerrainProfile,
) -> Vector2<f64> {
    let hip = x.p + rotation_matrix(x.theta) * hip_offset;
    let vx = x.p_dot.x;
    let tx = hip.x + vx * t_stance / 2.0 + k_v * (vx - v_des);
    Vector2::new(tx, terrain.height_at(tx))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwingTarget {
    pub position: Vector2<f64>,
    /// Derivative with respect to the phase fraction; divide by the swing
    /// duration for a world velocity.
    pub velocity: Vector2<f64>,
}

/// Swing arc at phase fraction `s`: cubic smoothstep horizontally and between
/// endpoint heights, plus a `sin^2` arch reaching `apex` above the endpoint
/// mean at `s = 1/2`. A held foot stays put.
pub fn swing_trajectory(
    start: &Vector2<f64>,
    target: &Vector2<f64>,
    s: f64,
    apex: f64,
    held: Option<&Vector2<f64>>,
) -> SwingTarget {
    if let Some(h) = held {
        return SwingTarget {
            position: *h,
            velocity: Vector2::zeros(),
        };
    }
    let s = s.clamp(0.0, 1.0);
    let h = s * s * (3.0 - 2.0 * s);
    let dh = 6.0 * s * (1.0 - s);
    let arch = (std::f64::consts::PI * s).sin().powi(2);
    let darch = std::f64::consts::PI * (2.0 * std::f64::consts::PI * s).sin();
    let delta = target - start;
    SwingTarget {
        position: Vector2::new(start.x + delta.x * h, start.y + delta.y * h + apex * arch),
        velocity: Vector2::new(delta.x * dh, delta.y * dh + apex * darch),
    }
}

/// Hold flags after one contact-sensor sample. `swing_feet[k]` is `None` for a
/// stance foot, which clears its flag; an airborne foot below the terrain
/// surface latches its flag.
pub fn contact_obstacle_check(
    swing_feet: &[Option<Vector2<f64>>; 4],
    terrain: &TerrainProfile,
    hold: [bool; 4],
) -> [bool; 4] {
    std::array::from_fn(|k| match swing_feet[k] {
        None => false,
        Some(p) => hold[k] || p.y < terrain.height_at(p.x),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FsmTraceRow {
    pub t: f64,
    pub gait: Gait,
    pub phase: usize,
    pub mode: ContactMode,
    pub contacts: Contacts,
}

pub const FSM_TRACE_HEADER: &str = "t,gait,phase,mode,FR,FL,RR,RL";

pub fn write_fsm_trace<W: Write>(out: W, rows: &[FsmTraceRow]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "{FSM_TRACE_HEADER}")?;
    for r in rows {
        let c = r.contacts.map(u8::from);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t, r.gait, r.phase, r.mode, c[0], c[1], c[2], c[3]
        )?;
    }
    out.flush()
}

pub fn save_fsm_trace(path: &Path, rows: &[FsmTraceRow]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_fsm_trace(f, rows).map_err(|e| Error::io(path, e))
}
