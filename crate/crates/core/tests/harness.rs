use std::sync::OnceLock;

use nalgebra::DMatrix;

use koopman_quad::gait::{Gait, FSM_TRACE_HEADER};
use koopman_quad::harness::{
    compute_metrics, emit_outputs, evaluate_against, fit_mode, run_closed_loop,
    run_transition_scenario, GaitRequest, ModelSet, OutputPaths, Plant, RunLog, Scenario,
    SimConfig, TrainingConfig, TrainingDistribution,
};
use koopman_quad::koopman::{FitStats, KoopmanModel, ObservableConfig};
use koopman_quad::lmpc::{mpc_step, LinearMpc, MpcConfig, ReferenceTrajectory};
use koopman_quad::srb::{ContactMode, SrbParams, SrbState, INPUT_DIM};
use koopman_quad::Error;

fn models() -> &'static ModelSet {
    static MODELS: OnceLock<ModelSet> = OnceLock::new();
    MODELS.get_or_init(|| ModelSet::fit(&SimConfig::default()).unwrap())
}

fn run(name: &str) -> koopman_quad::harness::SimOutput {
    let mut cfg = SimConfig::with_scenario(name).unwrap();
    cfg.controller.log_solve_time = false;
    run_closed_loop(&cfg, models()).unwrap()
}

#[test]
fn trot_in_place_regulates() {
    let out = run("trot-in-place");
    let m = compute_metrics(&out.log, None).unwrap();
    assert!(!m.fell);
    assert!(m.mean_abs_vx <= 0.02, "mean |vx| {}", m.mean_abs_vx);
}

#[test]
fn tick_structure_and_flight_forces() {
    let out = run("bound-to-trot");
    let cfg = SimConfig::default();
    let dt = cfg.controller.plant_dt * cfg.controller.control_every as f64;
    assert_eq!(out.log.records.len(), (6.0 / dt).round() as usize);
    for (k, r) in out.log.records.iter().enumerate() {
        assert!((r.t - k as f64 * dt).abs() < 1e-12);
        if r.mode == ContactMode::Flight {
            assert_eq!(r.forces, [0.0; INPUT_DIM], "t = {}", r.t);
            assert!(r.qp.is_none(), "QP solved in flight at t = {}", r.t);
        } else {
            assert!(r.qp.is_some(), "no QP in stance at t = {}", r.t);
        }
    }
    for w in out.log.records.windows(2) {
        assert!(w[1].t > w[0].t);
    }
}

#[test]
fn touchdowns_sit_on_the_terrain() {
    let out = run("trot-rough");
    let mut seen = 0;
    let mut on_blocks = 0;
    for r in &out.log.records {
        for tag in r.event_tags().filter(|e| e.starts_with("touchdown:")) {
            let parts: Vec<&str> = tag.split(':').collect();
            let (x, y): (f64, f64) = (parts[2].parse().unwrap(), parts[3].parse().unwrap());
            assert_eq!(y, out.terrain.height_at(x), "{tag}");
            seen += 1;
            on_blocks += usize::from(y > 0.0);
        }
    }
    assert!(seen > 50);
    assert!(on_blocks > 0, "no foot landed on an obstacle");
}

#[test]
fn same_gait_request_changes_nothing() {
    let mut cfg = SimConfig {
        scenario: Scenario {
            name: "trot-request-trot".into(),
            duration: 4.0,
            gait_requests: vec![GaitRequest {
                t: 3.0,
                gait: Gait::Trot,
            }],
            ..Scenario::default()
        },
        ..SimConfig::default()
    };
    cfg.controller.log_solve_time = false;
    let out = run_transition_scenario(&cfg, models()).unwrap();
    assert!(out.log.records.iter().any(|r| r.has_event("request:")));
    assert!(!out.log.records.iter().any(|r| r.has_event("switch:")));
    assert!(out
        .log
        .records
        .iter()
        .all(|r| r.gait == Gait::Trot && r.mode == ContactMode::Trot));

    cfg.scenario.gait_requests.clear();
    assert!(matches!(
        run_transition_scenario(&cfg, models()),
        Err(Error::InvalidParameter(_))
    ));
}

#[test]
fn outputs_round_trip_and_match_the_trace() {
    let out = run("trot-to-bound");
    let metrics = compute_metrics(&out.log, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = OutputPaths::in_dir(&dir.path().join("nested"), "tb");
    emit_outputs(&out, &metrics, &paths).unwrap();

    let back = RunLog::load(&paths.log).unwrap();
    assert_eq!(back, out.log);

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&paths.metrics).unwrap()).unwrap();
    assert_eq!(doc["metrics"]["rmse_vx"].as_f64().unwrap(), metrics.rmse_vx);
    assert_eq!(doc["config"]["scenario"]["name"], "trot-to-bound");

    let gait = std::fs::read_to_string(&paths.gait).unwrap();
    let mut lines = gait.lines();
    assert_eq!(lines.next().unwrap(), FSM_TRACE_HEADER);
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), out.trace.len());
    // Contact pairs alternate at the configured periods: trot pairs swap every
    // half period, bound legs move in front/rear pairs.
    let sched = SimConfig::default().schedule;
    let mut last_swap = None;
    for (row, tr) in rows.iter().zip(&out.trace) {
        let c: Vec<bool> = row[4..8].iter().map(|v| v == "1").collect();
        assert_eq!(c, tr.contacts.to_vec());
        match tr.gait {
            Gait::Trot => {
                assert!(c == [true, false, false, true] || c == [false, true, true, false])
            }
            Gait::Bound => assert!(c[0] == c[1] && c[2] == c[3]),
        }
    }
    for w in out.trace.windows(2) {
        if w[0].gait == Gait::Trot && w[1].gait == Gait::Trot && w[0].contacts != w[1].contacts {
            if let Some(t0) = last_swap {
                let gap: f64 = w[1].t - t0;
                assert!(
                    (gap - sched.trot_half_period).abs() < 1e-9,
                    "trot swap gap {gap}"
                );
            }
            last_swap = Some(w[1].t);
        }
    }
    assert!(last_swap.is_some());

    for (path, header) in [
        (&paths.velocity, "t,vx,ref_vx"),
        (&paths.pitch, "t,theta,ref_theta"),
    ] {
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# config: "));
        assert_eq!(lines.next().unwrap(), header);
        assert_eq!(lines.count(), out.log.records.len());
    }
}

#[test]
fn output_errors_name_the_path() {
    let out = run("trot-in-place");
    let metrics = compute_metrics(&out.log, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let paths = OutputPaths::in_dir(&blocker.join("sub"), "x");
    let err = emit_outputs(&out, &metrics, &paths).unwrap_err();
    assert!(err.to_string().contains(blocker.to_str().unwrap()), "{err}");
}

#[test]
fn hover_forces_carry_the_weight() {
    // A model fitted around stance; the control-envelope fit trades hover
    // accuracy for coverage of large pitch motion.
    let params = SrbParams::default();
    let training = TrainingConfig {
        distribution: TrainingDistribution::near_hover(),
        ..TrainingConfig::default()
    };
    let model = fit_mode(
        &params,
        &training,
        &ObservableConfig::default(),
        ContactMode::Trot,
        0,
    )
    .unwrap()
    .resampled(6)
    .unwrap();
    let config = MpcConfig {
        dt: model.dt,
        ..MpcConfig::default()
    };
    let hover = SrbState::from_array([0.0, 0.3, 0.0, 0.0, 0.0, 0.0]);
    let out = mpc_step(
        &model,
        &hover,
        &ReferenceTrajectory::constant(hover, config.horizon),
        &config,
    )
    .unwrap();
    let lift = out.forces[1] + out.forces[3];
    let weight = params.mass * params.gravity[1];
    assert!(
        (lift - weight).abs() <= 0.02 * weight,
        "lift {lift} vs weight {weight}"
    );
}

/// Exactly linear plant in lifted coordinates: a planar point mass driven by
/// the summed forces, with gravity entering through the constant observable.
fn point_mass_model(dt: f64) -> KoopmanModel {
    let cfg = ObservableConfig::default();
    let n = cfg.lifted_dim();
    let m = 12.0;
    let mut a = DMatrix::identity(n, n);
    a[(1, 4)] = dt;
    a[(2, 5)] = dt;
    a[(5, 0)] = -9.81 * dt;
    let mut b = DMatrix::zeros(n, INPUT_DIM);
    for c in [0, 2] {
        b[(4, c)] = dt / m;
        b[(1, c)] = 0.5 * dt * dt / m;
    }
    for c in [1, 3] {
        b[(5, c)] = dt / m;
        b[(2, c)] = 0.5 * dt * dt / m;
    }
    KoopmanModel {
        a,
        b,
        mode: ContactMode::Trot,
        config: cfg,
        dt,
        fit_stats: FitStats {
            residual: 0.0,
            condition_number: 1.0,
            samples: 0,
            ridge: 0.0,
        },
    }
}

#[test]
fn velocity_step_converges_on_an_exact_linear_plant() {
    let model = point_mass_model(0.006);
    let config = MpcConfig {
        q_diag: [0.0, 100.0, 0.0, 10.0, 10.0, 0.0],
        r_diag: [1e-6; INPUT_DIM],
        dt: 0.006,
        ..MpcConfig::default()
    };
    let target = SrbState::from_array([0.0, 0.3, 0.0, 0.3, 0.0, 0.0]);
    let reference = ReferenceTrajectory::constant(target, config.horizon);
    let mut mpc = LinearMpc::new(model.clone(), config).unwrap();
    let mut z = koopman_quad::koopman::lift(
        &SrbState::from_array([0.0, 0.3, 0.0, 0.0, 0.0, 0.0]),
        &model.config,
    );
    let mut errors = Vec::new();
    for _ in 0..150 {
        let x = koopman_quad::koopman::recover_state(&z);
        errors.push((x.p_dot.x - 0.3).abs());
        let u = mpc.step(&x, &reference).unwrap().forces;
        z = koopman_quad::koopman::predict(&model, &z, &u);
    }
    // Geometric decay: the error shrinks by a fixed factor over each window.
    for w in errors.chunks(30).collect::<Vec<_>>().windows(2) {
        let (a, b) = (w[0][0], w[1][0]);
        assert!(b <= 0.5 * a + 1e-9, "{a} -> {b}");
    }
    assert!(*errors.last().unwrap() < 1e-3);
}

struct LiftedLinearPlant;

impl Plant for LiftedLinearPlant {
    fn step(&self, x: &SrbState, u: &[f64; INPUT_DIM], dt: f64) -> SrbState {
        SrbState::from_array([
            x.p.x + dt * x.p_dot.x,
            x.p.y + dt * x.p_dot.y,
            x.theta,
            x.p_dot.x + dt * 0.01 * (u[0] + u[2]),
            x.p_dot.y + dt * (0.01 * (u[1] + u[3]) - 9.81),
            x.theta_dot,
        ])
    }
}

#[test]
fn evaluation_on_the_generating_linear_plant_is_exact() {
    use koopman_quad::koopman::{edmd_fit, SnapshotSet};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut data = SnapshotSet::new(ContactMode::Trot, 0.001);
    for _ in 0..2000 {
        let x = SrbState::from_array(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        let u: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..100.0));
        data.push(x, u, LiftedLinearPlant.step(&x, &u, 0.001));
    }
    let model = edmd_fit(&data, &ObservableConfig::default(), 1e-14).unwrap();
    let params = SrbParams::default();
    // Inside the sampled training box; far outside it the high pitch-rate
    // powers amplify round-off in the fitted coefficients.
    let dist = TrainingDistribution::near_hover();
    let ev = evaluate_against(&model, &LiftedLinearPlant, &params, &dist, 50, 50, 3).unwrap();
    assert!(ev.max_mean_abs() <= 1e-10, "{}", ev.max_mean_abs());
}

#[test]
fn fits_are_deterministic_per_seed() {
    let params = SrbParams::default();
    let training = TrainingConfig {
        n_rollouts: 10,
        ..TrainingConfig::default()
    };
    let obs = ObservableConfig::default();
    let a = fit_mode(&params, &training, &obs, ContactMode::FrontStance, 5).unwrap();
    let b = fit_mode(&params, &training, &obs, ContactMode::FrontStance, 5).unwrap();
    let c = fit_mode(&params, &training, &obs, ContactMode::FrontStance, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.a, c.a);
}
