//! Acceptance criteria 1-12. Prints one line per criterion and exits non-zero
//! if a criterion fails that is not listed in `KNOWN_UNMET`.
//!
//! Criteria 10 and 11 evaluate the committed training artifacts in
//! `artifacts/ppo_a1_uncertainty` (produced by `rlmpc train --seed 0`). Set
//! `RLMPC_RETRAIN=1` to retrain from scratch first; this takes hours.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DVector, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rlmpc::bench::bench;
use rlmpc::checkpoint;
use rlmpc::episode::{run_episode, Env, Mode, NetResidual, OracleResidual, ZeroResidual};
use rlmpc::gait::{foot_placement_heuristic, GaitTable, PLACEMENT_GAIN};
use rlmpc::kinematics::{fk, ik, jacobian, stance_torques};
use rlmpc::metrics::MetricsReport;
use rlmpc::model::{build_continuous_dynamics, discretize, AugmentedState, BodyState, Compensation};
use rlmpc::mpc::{build_qp, build_reference, forces_by_step, select_stance, Command, FrictionParams, MpcWeights};
use rlmpc::policy::{PolicyAction, PolicyNet};
use rlmpc::ppo::{train, LearningCurve, PpoConfig, TrainConfig};
use rlmpc::qp::solve_qp;
use rlmpc::robot::{leg_side, RobotParams, RobotPreset, NUM_LEGS};
use rlmpc::scenario::ScenarioConfig;
use rlmpc::sim::Payload;

/// Criteria that do not currently pass; each is explained in the decisions ledger.
const KNOWN_UNMET: &[u32] = &[];

const BUDGET: u64 = 2_000_000;
const HELD_OUT: std::ops::Range<u64> = 1_000_000..1_000_020;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn artifacts() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../artifacts/ppo_a1_uncertainty")
}

fn random_state(rng: &mut ChaCha8Rng, z0: f64) -> BodyState {
    let mut r = |a: f64| rng.random_range(-a..=a);
    BodyState {
        theta: Vector3::new(r(0.2), r(0.2), r(3.1)),
        p: Vector3::new(r(1.0), r(1.0), z0 + r(0.05)),
        omega: Vector3::new(r(1.0), r(1.0), r(2.0)),
        pdot: Vector3::new(r(1.0), r(0.5), r(0.3)),
    }
}

fn random_feet(rng: &mut ChaCha8Rng, params: &RobotParams, s: &BodyState) -> [Vector3<f64>; NUM_LEGS] {
    let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), s.theta.z);
    std::array::from_fn(|l| {
        let h = params.hip_offsets[l] + Vector3::new(0.0, leg_side(l) * params.leg.l_abd, 0.0);
        let local = Vector3::new(h.x + rng.random_range(-0.06..=0.06), h.y + rng.random_range(-0.04..=0.04), 0.0);
        let w = yaw * local;
        Vector3::new(s.p.x + w.x, s.p.y + w.y, 0.0)
    })
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let params = RobotPreset::A1.params();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_rel, mut worst_cube) = (0.0_f64, 0.0_f64);
    let dt = 0.03;
    for _ in 0..1000 {
        let s = random_state(&mut rng, params.z0);
        let feet = random_feet(&mut rng, &params, &s);
        let stance: [bool; NUM_LEGS] = std::array::from_fn(|_| rng.random_bool(0.7));
        let comp = Compensation {
            dalpha: Vector3::from_fn(|_, _| rng.random_range(-5.0..=5.0)),
            da: Vector3::from_fn(|_, _| rng.random_range(-3.0..=3.0)),
        };
        let cont = build_continuous_dynamics(&s, &feet, stance, &params, &comp).unwrap();
        let cube = cont.a * cont.a * cont.a;
        worst_cube = worst_cube.max(cube.amax());
        let d = discretize(&cont, dt);
        let x0 = AugmentedState::from_body(&s);
        let u = DVector::from_fn(cont.b.ncols(), |_, _| rng.random_range(-20.0..=80.0));
        let bu = if u.is_empty() { DVector::zeros(13) } else { &cont.b * &u };
        // RK4 with 3000 substeps on xdot = A x + B u.
        let f = |x: &DVector<f64>| DVector::from_iterator(13, (cont.a * nalgebra::SVector::<f64, 13>::from_column_slice(x.as_slice())).iter().copied()) + &bu;
        let mut x = DVector::from_column_slice(x0.as_vector().as_slice());
        let n = 3000;
        let h = dt / n as f64;
        for _ in 0..n {
            let k1 = f(&x);
            let k2 = f(&(&x + &k1 * (h / 2.0)));
            let k3 = f(&(&x + &k2 * (h / 2.0)));
            let k4 = f(&(&x + &k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        let mut pred = DVector::from_column_slice((d.a * x0.as_vector()).as_slice());
        if !u.is_empty() {
            pred += &d.b * &u;
        }
        let rel = (&pred - &x).amax() / x.amax().max(1.0);
        worst_rel = worst_rel.max(rel);
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst_rel <= 1e-8 && worst_cube == 0.0 && secs < 10.0,
        format!("max rel err {worst_rel:.2e}, max |A^3| {worst_cube:.1e}, {secs:.1} s"),
    )
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_kkt, mut worst_fric) = (0.0_f64, 0.0_f64);
    let mut uncertified = 0;
    for i in 0..500 {
        let preset = RobotPreset::ALL[i % 3];
        let params = preset.params();
        let friction = FrictionParams::for_robot(&params);
        let s = random_state(&mut rng, params.z0);
        let feet = random_feet(&mut rng, &params, &s);
        let gait = GaitTable {
            contact: (0..10).map(|_| std::array::from_fn(|_| rng.random_bool(0.6))).collect(),
        };
        let cont = build_continuous_dynamics(&s, &feet, [true; 4], &params, &Compensation::zero()).unwrap();
        let full = discretize(&cont, 0.03);
        let per_step: Vec<_> = gait.contact.iter().map(|r| select_stance(&full, *r)).collect();
        let cmd = Command {
            v_des: Vector3::new(rng.random_range(-1.0..=1.0), rng.random_range(-0.5..=0.5), 0.0),
            yaw_rate: rng.random_range(-2.0..=2.0),
            z0: params.z0,
        };
        let reference = build_reference(&s, &cmd, 0.03, 10);
        let p = build_qp(&per_step, &AugmentedState::from_body(&s), &reference, &gait, &MpcWeights::default(), &friction).unwrap();
        let sol = solve_qp(&p, 1e-6).unwrap();
        if !sol.certified {
            uncertified += 1;
        }
        worst_kkt = worst_kkt.max(sol.kkt.max());
        for (k, row) in forces_by_step(&p, &sol.x).iter().enumerate() {
            for (l, f) in row.iter().enumerate() {
                let v = if gait.contact[k][l] {
                    [
                        f.x.abs() - friction.mu * f.z,
                        f.y.abs() - friction.mu * f.z,
                        friction.f_min - f.z,
                        f.z - friction.f_max,
                    ]
                    .into_iter()
                    .fold(0.0, f64::max)
                } else {
                    f.amax()
                };
                worst_fric = worst_fric.max(v);
            }
        }
    }
    let params = RobotPreset::A1.params();
    let s = BodyState { p: Vector3::new(0.0, 0.0, params.z0), ..Default::default() };
    let feet = std::array::from_fn(|l| {
        let h = params.hip_offsets[l];
        Vector3::new(h.x, h.y + leg_side(l) * params.leg.l_abd, 0.0)
    });
    let cont = build_continuous_dynamics(&s, &feet, [true; 4], &params, &Compensation::zero()).unwrap();
    let full = discretize(&cont, 0.03);
    let gait = GaitTable::all(10, true);
    let per_step: Vec<_> = gait.contact.iter().map(|r| select_stance(&full, *r)).collect();
    let reference = build_reference(&s, &Command { z0: params.z0, ..Default::default() }, 0.03, 10);
    let p = build_qp(&per_step, &AugmentedState::from_body(&s), &reference, &gait, &MpcWeights::default(), &FrictionParams::for_robot(&params)).unwrap();
    let sol = solve_qp(&p, 1e-6).unwrap();
    let fz: f64 = forces_by_step(&p, &sol.x)[0].iter().map(|f| f.z).sum();
    let stand_err = (fz - params.weight()).abs();
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst_kkt <= 1e-6 && worst_fric <= 1e-8 && uncertified == 0 && stand_err <= 1e-4 && secs < 60.0,
        format!(
            "max KKT {worst_kkt:.1e}, max pyramid violation {worst_fric:.1e}, uncertified {uncertified}, standing |sum fz - mg| {stand_err:.1e} N, {secs:.1} s"
        ),
    )
}

fn criterion_3() -> Outcome {
    let g: f64 = 9.81;
    let mut worst = 0.0_f64;
    let hip = Vector3::new(0.18, -0.05, 0.3);
    // Hand-evaluated components.
    let cases = [
        (Vector3::new(1.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), 0.0, 0.15, 0.3, Vector3::new(0.075, 0.0, 0.0)),
        (Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), 0.0, 0.15, 0.3, Vector3::new(-0.03, 0.0, 0.0)),
        (
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            2.0,
            0.0,
            0.3,
            Vector3::new(0.0, -0.5 * (0.3 / g).sqrt() * 2.0, 0.0),
        ),
    ];
    for (v, v_cmd, wz, t, z0, offset) in cases {
        let p = foot_placement_heuristic(&hip, &v, &v_cmd, wz, t, z0);
        let expect = Vector3::new(hip.x + offset.x, hip.y + offset.y, 0.0);
        worst = worst.max((p - expect).amax());
    }
    let cross = foot_placement_heuristic(&Vector3::zeros(), &Vector3::new(1.0, 0.0, 0.0), &Vector3::new(1.0, 0.0, 0.0), 2.0, 0.0, 0.3);
    let near = (cross.y - (-0.1749)).abs() < 5e-5;
    // Random inputs against a term-by-term scalar evaluation.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let mut r = |a: f64| rng.random_range(-a..=a);
        let hip = Vector3::new(r(1.0), r(1.0), r(0.5) + 0.3);
        let v = Vector3::new(r(2.0), r(1.0), r(0.3));
        let vc = Vector3::new(r(2.0), r(1.0), 0.0);
        let (wz, t, z0) = (r(3.0), 0.1 + r(0.1).abs(), 0.2 + r(0.15).abs());
        let c = 0.5 * (z0 / g).sqrt();
        let ex = hip.x + t / 2.0 * v.x + PLACEMENT_GAIN * (v.x - vc.x) + c * (v.y * wz);
        let ey = hip.y + t / 2.0 * v.y + PLACEMENT_GAIN * (v.y - vc.y) + c * (-v.x * wz);
        let p = foot_placement_heuristic(&hip, &v, &vc, wz, t, z0);
        worst = worst.max((p.x - ex).abs()).max((p.y - ey).abs()).max(p.z.abs());
    }
    outcome(
        worst <= 1e-12 && near && PLACEMENT_GAIN == 0.03,
        format!("max deviation {worst:.1e}, cross term y = {:.5}", cross.y),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut rt, mut jac, mut vw) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut exact = 0;
    for preset in RobotPreset::ALL {
        let params = preset.params();
        for leg in 0..NUM_LEGS {
            let cfg = params.leg_config(leg);
            for _ in 0..300 {
                let q: Vector3<f64> = Vector3::from_fn(|j, _| {
                    let [lo, hi] = cfg.joint_limits[j];
                    let (lo, hi) = (lo.max(-1.0), hi.min(1.0));
                    let span = hi - lo;
                    rng.random_range(lo + 0.1 * span..=hi - 0.1 * span)
                });
                let q = Vector3::new(q.x, q.y, q.z.min(-0.3));
                let p = fk(&cfg, &q);
                let sol = ik(&cfg, &p);
                if sol.is_exact() {
                    exact += 1;
                    rt = rt.max((fk(&cfg, &sol.q) - p).norm());
                }
                let j = jacobian(&cfg, &q);
                let h = 1e-6;
                for c in 0..3 {
                    let mut qp = q;
                    let mut qm = q;
                    qp[c] += h;
                    qm[c] -= h;
                    let fd = (fk(&cfg, &qp) - fk(&cfg, &qm)) / (2.0 * h);
                    jac = jac.max((j.column(c) - fd).amax());
                }
                let f = Vector3::new(rng.random_range(-30.0..=30.0), rng.random_range(-30.0..=30.0), rng.random_range(0.0..=120.0));
                let qd = Vector3::from_fn(|_, _| rng.random_range(-5.0..=5.0));
                let rot = Rotation3::from_euler_angles(rng.random_range(-0.3..=0.3), rng.random_range(-0.3..=0.3), rng.random_range(-3.0..=3.0));
                let tau = stance_torques(&cfg, &q, &f, &rot);
                let foot_vel: Vector3<f64> = rot * (j * qd);
                vw = vw.max((f.dot(&foot_vel) + tau.dot(&qd)).abs());
            }
        }
    }
    outcome(
        rt <= 1e-9 && jac <= 1e-6 && vw <= 1e-8 && exact > 3000,
        format!("round trip {rt:.1e} m over {exact} exact solves, Jacobian vs FD {jac:.1e}, virtual work {vw:.1e}"),
    )
}

fn criterion_5() -> Outcome {
    let zero = PolicyNet::zeros(rlmpc::policy::BoundsPreset::Uncertainty);
    let mut worst = 0.0_f64;
    let mut all_same = true;
    for (sc, seed) in [
        (ScenarioConfig::flat_trot(RobotPreset::A1), 0),
        (ScenarioConfig::uncertainty(RobotPreset::A1), 3),
        (ScenarioConfig::payload_trot(RobotPreset::Go1, 3.0), 1),
    ] {
        let a = run_episode(&sc, Mode::Baseline, &mut ZeroResidual, seed).unwrap();
        let b = run_episode(&sc, Mode::Augmented, &mut NetResidual(&zero), seed).unwrap();
        all_same &= a.same_trajectory(&b);
        worst = worst.max(a.max_row_diff(&b).unwrap_or(f64::INFINITY));
    }
    outcome(worst <= 1e-12 && all_same, format!("max per-field difference {worst:.1e} over 3 scenarios"))
}

fn criterion_6() -> Outcome {
    let sc = ScenarioConfig::flat_trot(RobotPreset::A1);
    let log = run_episode(&sc, Mode::Baseline, &mut ZeroResidual, 0).unwrap();
    let r = MetricsReport::from_log(&log);
    outcome(
        !r.fall && r.survival_time >= sc.duration - 0.02 && r.mean_speed_error <= 0.15,
        format!(
            "survived {:.2} s, mean speed error {:.3} m/s, peak speed {:.2} m/s",
            r.survival_time, r.mean_speed_error, r.peak_speed
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut sc = ScenarioConfig::payload_trot(RobotPreset::A1, 3.0);
    sc.disturbance.payload = Some(Payload { mass: 3.0, offset: Vector3::new(0.05, 0.0, 0.0) });
    let b = MetricsReport::from_log(&run_episode(&sc, Mode::Baseline, &mut ZeroResidual, 0).unwrap());
    let o = MetricsReport::from_log(&run_episode(&sc, Mode::Oracle, &mut OracleResidual, 0).unwrap());
    let dh = 1.0 - o.steady_height_error / b.steady_height_error;
    let dp = 1.0 - o.steady_pitch_error / b.steady_pitch_error;
    outcome(
        !b.fall && !o.fall && dh >= 0.5 && dp >= 0.5,
        format!(
            "height bias {:.4} -> {:.4} m ({:.0}% less), pitch bias {:.4} -> {:.4} rad ({:.0}% less)",
            b.steady_height_error,
            o.steady_height_error,
            dh * 100.0,
            b.steady_pitch_error,
            o.steady_pitch_error,
            dp * 100.0
        ),
    )
}

fn criterion_8() -> Outcome {
    let sc = ScenarioConfig::stairs(RobotPreset::A1);
    // A trap counts as eliminated when the trapped leg records no trap within
    // one swing phase of the baseline trap time.
    let window = sc.gait.schedule().swing_time();
    let mut trapped = 0;
    let mut eliminated = 0;
    let mut retrapped_later = 0;
    for seed in 0..5 {
        let base = run_episode(&sc, Mode::Baseline, &mut ZeroResidual, seed).unwrap();
        let Some(first) = base.traps.first().copied() else {
            continue;
        };
        trapped += 1;
        let mut script = |_env: &Env, _obs: &DVector<f64>| {
            let mut a = PolicyAction::zero();
            a.dq[first.leg][1] = 0.2;
            a
        };
        let lifted = run_episode(&sc, Mode::Augmented, &mut script, seed).unwrap();
        let same_leg: Vec<f64> = lifted.traps.iter().filter(|t| t.leg == first.leg).map(|t| t.time).collect();
        if !same_leg.iter().any(|t| (t - first.time).abs() <= window) {
            eliminated += 1;
        }
        if same_leg.iter().any(|t| *t > first.time + window) {
            retrapped_later += 1;
        }
    }
    outcome(
        trapped == 5 && eliminated >= 4,
        format!(
            "baseline trapped in {trapped}/5 seeds; +0.2 rad hip pitch removed the trap in {eliminated}/5 (the same leg traps again at a later riser in {retrapped_later}/5)"
        ),
    )
}

fn criterion_9() -> Outcome {
    let m = RobotPreset::A1.params().mass;
    let share = 10.0 / m;
    outcome(
        (11.9..=12.2).contains(&m) && (share - 0.83).abs() <= 0.01,
        format!("A1 mass {m} kg, 10 kg = {:.1}% of body mass", share * 100.0),
    )
}

struct EvalSummary {
    mean_return: f64,
    falls: usize,
    n: usize,
}

fn evaluate(sc: &ScenarioConfig, net: Option<&PolicyNet>, seeds: impl Iterator<Item = u64>) -> EvalSummary {
    let mut total = 0.0;
    let mut falls = 0;
    let mut n = 0;
    for seed in seeds {
        let log = match net {
            Some(net) => run_episode(sc, Mode::Augmented, &mut NetResidual(net), seed),
            None => run_episode(sc, Mode::Baseline, &mut ZeroResidual, seed),
        }
        .unwrap();
        total += log.rewards.iter().map(|r| r.value).sum::<f64>();
        falls += log.fell() as usize;
        n += 1;
    }
    EvalSummary { mean_return: total / n as f64, falls, n }
}

fn trained_policy() -> Result<(PolicyNet, LearningCurve), String> {
    let dir = artifacts();
    if std::env::var("RLMPC_RETRAIN").is_ok_and(|v| v == "1") {
        let sc = ScenarioConfig::uncertainty(RobotPreset::A1);
        let cfg = TrainConfig { ppo: PpoConfig::default(), budget: BUDGET, seed: 0, out_dir: Some(dir.clone()) };
        return train(&sc, &cfg, |_| {}).map_err(|e| e.to_string());
    }
    let net = checkpoint::load(&dir.join("policy.ckpt")).map_err(|e| format!("no trained checkpoint ({e})"))?;
    let curve = LearningCurve::load(&dir.join("learning_curve.csv")).map_err(|e| format!("no learning curve ({e})"))?;
    Ok((net, curve))
}

fn criterion_10(trained: &Result<(PolicyNet, LearningCurve), String>) -> Outcome {
    let (net, curve) = match trained {
        Ok(t) => t,
        Err(e) => return outcome(false, e.clone()),
    };
    let steps = curve.points.last().map_or(0, |p| p.env_steps);
    let sc = ScenarioConfig::uncertainty(RobotPreset::A1);
    let base = evaluate(&sc, None, HELD_OUT);
    let pol = evaluate(&sc, Some(net), HELD_OUT);
    let gain = (pol.mean_return - base.mean_return) / base.mean_return.abs();
    outcome(
        steps <= BUDGET && steps > 0 && gain >= 0.2 && pol.falls <= base.falls,
        format!(
            "{steps} env steps; held-out return {:.1} -> {:.1} ({:+.0}% of |baseline|), falls {}/{} -> {}/{}",
            base.mean_return,
            pol.mean_return,
            gain * 100.0,
            base.falls,
            base.n,
            pol.falls,
            pol.n
        ),
    )
}

fn criterion_11(trained: &Result<(PolicyNet, LearningCurve), String>) -> Outcome {
    let net = match trained {
        Ok((n, _)) => n,
        Err(e) => return outcome(false, e.clone()),
    };
    let mut pass = true;
    let mut detail = Vec::new();
    for preset in [RobotPreset::Go1, RobotPreset::AlienGo] {
        let sc = ScenarioConfig::payload_trot(preset, 1.0);
        let base = evaluate(&sc, None, 0..5);
        let pol = evaluate(&sc, Some(net), 0..5);
        pass &= pol.falls <= base.falls;
        detail.push(format!("{preset}: falls {}/{} -> {}/{}", base.falls, base.n, pol.falls, pol.n));
    }
    outcome(pass, detail.join(", "))
}

fn criterion_12(trained: &Result<(PolicyNet, LearningCurve), String>) -> Outcome {
    let sc = ScenarioConfig::flat_trot(RobotPreset::A1);
    let fresh = PolicyNet::new(sc.bounds, 0);
    let net = trained.as_ref().map(|(n, _)| n).unwrap_or(&fresh);
    let r = bench(&sc, 300, net, 0).unwrap();
    outcome(
        r.mpc.mean_ms <= 5.0 && r.policy.mean_ms <= 2.0,
        format!(
            "MPC mean {:.3} ms (p99 {:.3}), policy mean {:.3} ms (p99 {:.3})",
            r.mpc.mean_ms, r.mpc.p99_ms, r.policy.mean_ms, r.policy.p99_ms
        ),
    )
}

fn main() {
    // Behave like an empty test binary when the harness only lists tests.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let trained = trained_policy();
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "model exactness", Box::new(criterion_1)),
        (2, "QP certification", Box::new(criterion_2)),
        (3, "foot placement heuristic", Box::new(criterion_3)),
        (4, "kinematics", Box::new(criterion_4)),
        (5, "zero-residual equivalence", Box::new(criterion_5)),
        (6, "baseline locomotion", Box::new(criterion_6)),
        (7, "oracle compensation ablation", Box::new(criterion_7)),
        (8, "foot-trap reproduction", Box::new(criterion_8)),
        (9, "mass consistency", Box::new(criterion_9)),
        (10, "desk-scale learning", Box::new(|| criterion_10(&trained))),
        (11, "robot-agnostic transfer", Box::new(|| criterion_11(&trained))),
        (12, "timing", Box::new(|| criterion_12(&trained))),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in &criteria {
        let t0 = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let known = KNOWN_UNMET.contains(id);
        let note = match (o.pass, known) {
            (false, true) => " [known, see decisions ledger]",
            (true, true) => " [listed as unmet but passed]",
            _ => "",
        };
        println!(
            "criterion {id:>2} {tag} {name}: {} ({:.1} s){note}",
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        if !o.pass && !known {
            unexpected.push(*id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
