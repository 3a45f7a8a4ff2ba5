use nalgebra::Vector2;
use proptest::prelude::*;

use koopman_quad::gait::{contact_obstacle_check, swing_trajectory, FsmState, Gait, GaitSchedule};
use koopman_quad::leg::{
    analytic_ik, forward_kinematics, leg_jacobian, stance_torque, JointState, LegParams,
};
use koopman_quad::srb::ContactMode;
use koopman_quad::terrain::{Block, TerrainProfile};

fn schedule() -> impl Strategy<Value = GaitSchedule> {
    (0.2f64..0.5, 0.05f64..0.15, 0.05f64..0.15, 0.04f64..0.12).prop_map(|(t, f, fl, r)| {
        GaitSchedule {
            trot_half_period: t,
            bound_front_stance: f,
            bound_flight: fl,
            bound_rear_stance: r,
        }
    })
}

#[derive(Clone, Debug)]
enum Event {
    Tick(f64),
    Request(Gait),
}

fn events() -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec(
        prop_oneof![
            8 => (0.001f64..0.02).prop_map(Event::Tick),
            1 => prop::sample::select(vec![Gait::Trot, Gait::Bound]).prop_map(Event::Request),
        ],
        1..400,
    )
}

fn bound_order(prev: ContactMode, next: ContactMode) -> bool {
    use ContactMode::*;
    matches!(
        (prev, next),
        (FrontStance, Flight) | (Flight, RearStance) | (RearStance, Flight) | (Flight, FrontStance)
    )
}

proptest! {
    #[test]
    fn fsm_invariants(sched in schedule(), start in prop::sample::select(vec![Gait::Trot, Gait::Bound]), evs in events()) {
        let mut fsm = FsmState::new(start, &sched);
        let mut last_mode = fsm.mode(&sched);
        let mut seen_flight_before_rear = false;
        for ev in evs {
            match ev {
                Event::Request(g) => fsm.handle_transition(g),
                Event::Tick(dt) => {
                    let gait_before = fsm.gait;
                    let step = fsm.advance(dt, &sched);
                    let phase = fsm.current_phase(&sched);
                    prop_assert!(fsm.clock >= 0.0 && fsm.clock < phase.duration + 1e-9);
                    prop_assert_eq!(step.mode, phase.mode);
                    prop_assert_eq!(fsm.contacts, phase.contacts);
                    let c = fsm.contacts;
                    match fsm.gait {
                        Gait::Trot => {
                            prop_assert_eq!(step.mode, ContactMode::Trot);
                            prop_assert!(c == [true, false, false, true] || c == [false, true, true, false]);
                        }
                        Gait::Bound => {
                            prop_assert_eq!(c[0], c[1]);
                            prop_assert_eq!(c[2], c[3]);
                            prop_assert!(!(c[0] && c[2]));
                            if gait_before == Gait::Bound && step.mode != last_mode && step.switched.is_none() {
                                prop_assert!(bound_order(last_mode, step.mode), "{last_mode} -> {}", step.mode);
                            }
                        }
                    }
                    if let Some(sw) = step.switched {
                        prop_assert_ne!(sw.from, sw.to);
                        if sw.from == Gait::Bound {
                            // Activation only from a flight phase.
                            prop_assert_eq!(last_mode, ContactMode::Flight);
                        }
                    }
                    seen_flight_before_rear |= step.mode == ContactMode::Flight;
                    last_mode = step.mode;
                }
            }
        }
        let _ = seen_flight_before_rear;
    }

    #[test]
    fn ik_inverts_fk(q1 in -1.2f64..1.2, q2 in -2.8f64..-0.1) {
        let params = LegParams::default();
        let foot = forward_kinematics(&JointState::at(Vector2::new(q1, q2)), &params);
        let back = analytic_ik(&foot, &params).unwrap();
        prop_assert!((back.q - Vector2::new(q1, q2)).amax() <= 1e-9);
    }

    #[test]
    fn jacobian_matches_finite_difference(q1 in -1.5f64..1.5, q2 in -2.8f64..2.8) {
        let params = LegParams::default();
        let q = JointState::at(Vector2::new(q1, q2));
        let j = leg_jacobian(&q, &params);
        let h = 1e-6;
        for c in 0..2 {
            let mut qp = q.q;
            let mut qm = q.q;
            qp[c] += h;
            qm[c] -= h;
            let d = (forward_kinematics(&JointState::at(qp), &params)
                - forward_kinematics(&JointState::at(qm), &params)) / (2.0 * h);
            prop_assert!((d - j.column(c)).amax() <= 1e-8);
        }
    }

    #[test]
    fn stance_torque_does_the_same_work(q1 in -1.0f64..1.0, q2 in -2.5f64..-0.2, fx in -100.0f64..100.0, fz in 0.0f64..200.0, v1 in -1.0f64..1.0, v2 in -1.0f64..1.0) {
        // Virtual work: tau . q_dot = F . (J q_dot).
        let params = LegParams::default();
        let q = JointState::at(Vector2::new(q1, q2));
        let f = Vector2::new(fx, fz);
        let qd = Vector2::new(v1, v2);
        let tau = stance_torque(&q, &f, &params);
        let lhs = tau.dot(&qd);
        let rhs = f.dot(&(leg_jacobian(&q, &params) * qd));
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn swing_stays_between_endpoints(
        sx in -1.0f64..1.0, sz in 0.0f64..0.07, tx in -1.0f64..1.0, tz in 0.0f64..0.07,
        s in 0.0f64..=1.0, apex in 0.0f64..0.15,
    ) {
        let (a, b) = (Vector2::new(sx, sz), Vector2::new(tx, tz));
        let w = swing_trajectory(&a, &b, s, apex, None);
        prop_assert!(w.position.iter().all(|v| v.is_finite()));
        prop_assert!(w.position.x >= sx.min(tx) - 1e-12 && w.position.x <= sx.max(tx) + 1e-12);
        prop_assert!(w.position.y >= sz.min(tz) - 1e-12);
        prop_assert!(w.position.y <= sz.max(tz) + apex + 1e-12);
        let held = Vector2::new(0.3, 0.05);
        prop_assert_eq!(swing_trajectory(&a, &b, s, apex, Some(&held)).position, held);
    }

    #[test]
    fn hold_flags_latch_until_stance(z in -0.05f64..0.2, prior in any::<bool>()) {
        let terrain = TerrainProfile::new(vec![Block { x_start: 0.0, x_end: 1.0, height: 0.06 }]).unwrap();
        let foot = Some(Vector2::new(0.5, z));
        let flags = contact_obstacle_check(&[foot, None, foot, None], &terrain, [prior, true, false, false]);
        prop_assert_eq!(flags[0], prior || z < 0.06);
        prop_assert!(!flags[1]);
        prop_assert_eq!(flags[2], z < 0.06);
    }
}
