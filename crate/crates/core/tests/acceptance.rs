//! End-to-end acceptance checks.
//!
//! Each test prints one `PASS`/`FAIL` line with the measured figure and the
//! wall time, then asserts both the criterion and its time budget. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use approx::relative_eq;
use dronepida::dynamics::{state_derivative, step, ControlVector, Disturbance, QuadParams, RigidBodyState};
use dronepida::linear::{eigenvalues, solve_lyapunov, LinearError};
use dronepida::perception::{
    camera_to_body, focal_loss, iou_loss, observe, project, reconstruct, relative_position, BoundingBox, CameraRig,
    PixelNoise,
};
use dronepida::pida::{Channel, GainSet};
use dronepida::scenario::Scenario;
use dronepida::sdsa::{minimize, Bounds, MinimizeResult, SdsaConfig};
use dronepida::sim::{certify, run_mission, run_step_response};
use dronepida::tuning::tune;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn verdict(id: u32, name: &str, ok: bool, detail: String, elapsed: Duration, budget: Duration) {
    let in_time = elapsed <= budget;
    let status = if ok && in_time { "PASS" } else { "FAIL" };
    println!(
        "{status} criterion {id:>2} {name}: {detail} [{:.3} s / {:.0} s budget]",
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
    assert!(in_time, "criterion {id} ({name}) over time budget: {elapsed:?} > {budget:?}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn criterion_01_hover_is_a_fixed_point() {
    let t0 = Instant::now();
    let p = QuadParams::default();
    let hover = RigidBodyState::at_position(Vector3::new(0.0, 0.0, -10.0));
    let u = ControlVector::hover(&p);
    let d = Disturbance::none();
    let deriv = state_derivative(&hover, &u, &d, &p).unwrap().to_vector();
    let exact_zero = deriv.iter().all(|v| *v == 0.0);

    let x0 = hover.to_vector();
    let mut s = hover;
    for _ in 0..10_000 {
        s = step(&s, &u, &d, &p, 0.001).unwrap();
    }
    let drift = (s.to_vector() - x0).amax();
    verdict(
        1,
        "hover fixed point",
        exact_zero && drift < 1e-10,
        format!("|f(hover)| = {:e}, 10 s drift = {drift:e}", deriv.norm()),
        t0.elapsed(),
        Duration::from_secs(1),
    );
}

/// The six body-frame equations of motion written out component by
/// component, independent of the library's vector code.
fn oracle_rates(x: &[f64; 12], u: &[f64; 4], d: &[f64; 3], p: &QuadParams) -> [f64; 6] {
    let [phi, theta, _psi, pr, qr, rr, uu, vv, ww, ..] = *x;
    let g = p.gravity;
    let m = p.mass;
    let (ixx, iyy, izz) = (p.inertia_xx, p.inertia_yy, p.inertia_zz);
    [
        rr * vv - qr * ww - g * theta.sin(),
        pr * ww - rr * uu + g * phi.sin() * theta.cos(),
        qr * uu - pr * vv + g * theta.cos() * phi.cos() - u[3] / m,
        ((iyy - izz) * qr * rr + u[0] + d[0]) / ixx,
        ((izz - ixx) * pr * rr + u[1] + d[1]) / iyy,
        ((ixx - iyy) * pr * qr + u[2] + d[2]) / izz,
    ]
}

#[test]
fn criterion_02_dynamics_match_oracle() {
    let t0 = Instant::now();
    let p = QuadParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x: [f64; 12] = [
            rng.random_range(-1.2..1.2),
            rng.random_range(-1.4..1.4),
            rng.random_range(-3.1..3.1),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..0.0),
        ];
        let u = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.1..0.1),
            rng.random_range(0.0..20.0),
        ];
        let dist = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0];
        let state = RigidBodyState::from_vector(&x.into());
        let control = ControlVector::new(u[0], u[1], u[2], u[3]);
        let disturbance = Disturbance {
            d_phi: dist[0],
            d_theta: dist[1],
            d_psi: dist[2],
            residual_speed: 0.0,
        };
        let got = state_derivative(&state, &control, &disturbance, &p).unwrap();
        let want = oracle_rates(&x, &u, &dist, &p);
        let lib = [
            got.body_accel.x,
            got.body_accel.y,
            got.body_accel.z,
            got.angular_accel.x,
            got.angular_accel.y,
            got.angular_accel.z,
        ];
        for (a, b) in lib.iter().zip(&want) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    verdict(
        2,
        "dynamics oracle equivalence",
        worst <= 1e-12,
        format!("worst scaled deviation {worst:e} over 10^4 samples"),
        t0.elapsed(),
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_03_lyapunov_eigenvalue_duality() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 6;
    let q = DMatrix::<f64>::identity(n, n);
    let (mut agree, mut stable_count, mut rayleigh_ok) = (0, 0, true);
    for _ in 0..200 {
        let shift = rng.random_range(0.0..5.0);
        let a = DMatrix::from_fn(n, n, |i, j| {
            let z: f64 = rng.sample(StandardNormal);
            z - if i == j { shift } else { 0.0 }
        });
        let max_re = eigenvalues(&a).unwrap().iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        let result = solve_lyapunov(&a, &q);
        let pd = match &result {
            Ok(pm) => pm.clone().cholesky().is_some(),
            Err(LinearError::Unstable | LinearError::SingularPencil) => false,
            Err(e) => panic!("unexpected {e}"),
        };
        if pd == (max_re < 0.0) {
            agree += 1;
        }
        if let Ok(pm) = result {
            stable_count += 1;
            let sym = (&pm + pm.transpose()) * 0.5;
            let ev = sym.symmetric_eigenvalues();
            let (lo, hi) = (ev.min(), ev.max());
            for _ in 0..1000 {
                let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let xx = x.norm_squared();
                let quad = (x.transpose() * &pm * &x)[(0, 0)];
                let tol = 1e-12 * hi * xx;
                if !(lo * xx - tol <= quad && quad <= hi * xx + tol) {
                    rayleigh_ok = false;
                }
            }
        }
    }
    verdict(
        3,
        "Lyapunov/eigenvalue duality",
        agree == 200 && rayleigh_ok && stable_count > 20 && stable_count < 180,
        format!("{agree}/200 agree ({stable_count} stable), Rayleigh bounds {}", if rayleigh_ok { "hold" } else { "violated" }),
        t0.elapsed(),
        Duration::from_secs(10),
    );
}

fn monotone(r: &MinimizeResult) -> bool {
    r.history.windows(2).all(|w| w[1].best_value <= w[0].best_value)
}

#[test]
fn criterion_04_sdsa_benchmarks() {
    let t0 = Instant::now();
    let sphere = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let rosen = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
    let b5 = Bounds::cube(5, -10.0, 10.0).unwrap();
    let b2 = Bounds::cube(2, -5.0, 5.0).unwrap();
    let (mut s_vals, mut r_vals, mut mono) = (Vec::new(), Vec::new(), true);
    for seed in 0..20 {
        let cfg = SdsaConfig::with_seed(seed);
        assert_eq!(cfg.i_max, 979);
        let s = minimize(sphere, &b5, &cfg).unwrap();
        let r = minimize(rosen, &b2, &cfg).unwrap();
        mono &= monotone(&s) && monotone(&r);
        s_vals.push(s.best_value);
        r_vals.push(r.best_value);
    }
    let (ms, mr) = (median(s_vals), median(r_vals));
    verdict(
        4,
        "SDSA sphere/Rosenbrock",
        ms < 1e-6 && mr < 1e-3 && mono,
        format!("median sphere {ms:e}, median Rosenbrock {mr:e}, monotone {mono}"),
        t0.elapsed(),
        Duration::from_secs(30),
    );
}

struct Tuned {
    gains: GainSet,
    elapsed: Duration,
}

/// Roll and altitude tuned once on the default step scenario; shared by the
/// tuning and certification criteria.
fn tuned() -> &'static Tuned {
    static TUNED: OnceLock<Tuned> = OnceLock::new();
    TUNED.get_or_init(|| {
        let t0 = Instant::now();
        let sc = Scenario::step_default();
        let r = tune(&sc, &[Channel::Roll, Channel::Altitude]).unwrap();
        Tuned {
            gains: r.gains,
            elapsed: t0.elapsed(),
        }
    })
}

#[test]
fn criterion_05_tuned_step_response() {
    let t = tuned();
    let t0 = Instant::now();
    let mut sc = Scenario::step_default();
    sc.gains = t.gains;
    assert!(sc.noise.attitude_sigma > 0.0 && sc.noise.altitude_sigma > 0.0);
    let run = run_step_response(&sc).unwrap();
    let step = run.report.step.unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for c in [Channel::Roll, Channel::Altitude] {
        match step.get(c).metrics() {
            Some(m) => {
                ok &= (0.0..=10.0).contains(&m.overshoot_pct) && m.settling_time <= 3.0;
                detail.push(format!("{c} overshoot {:.2} % settling {:.3} s", m.overshoot_pct, m.settling_time));
            }
            None => {
                ok = false;
                detail.push(format!("{c} {:?}", step.get(c)));
            }
        }
    }
    verdict(
        5,
        "SDSA-tuned roll and altitude",
        ok,
        detail.join("; "),
        t.elapsed + t0.elapsed(),
        Duration::from_secs(300),
    );
}

#[test]
fn criterion_06_tuned_loop_certifies() {
    let t = tuned();
    let t0 = Instant::now();
    let mut sc = Scenario::step_default();
    sc.gains = t.gains;
    let report = certify(&sc).unwrap();
    let p_pd = report.lyapunov_p.as_ref().is_some_and(|p| {
        let n = p.len();
        DMatrix::from_fn(n, n, |i, j| p[i][j]).cholesky().is_some()
    });
    verdict(
        6,
        "tuned closed loop certifies",
        report.is_stable && report.max_real_part < 0.0 && p_pd,
        format!("max Re(lambda) = {:.4e}, P positive definite {p_pd}", report.max_real_part),
        t0.elapsed(),
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_07_stereo_round_trip() {
    let t0 = Instant::now();
    let rig = CameraRig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noiseless = PixelNoise { sigma: 0.0, dropout: 0.0 };
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut s = RigidBodyState::at_position(Vector3::new(
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-30.0..-1.0),
        ));
        s.euler = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-3.1..3.1));
        let z = rng.random_range(1.0..15.0);
        let cam = Vector3::new(rng.random_range(-0.5..0.5) * z, rng.random_range(-0.4..0.4) * z, z);
        let target = s.position + s.body_to_earth() * camera_to_body(&cam);
        let obs = observe(&target, &s, &rig, &noiseless, &mut rng).unwrap();
        let rel = relative_position(&obs, &s, &rig).unwrap();
        worst = worst.max((rel - (target - s.position)).norm());
    }
    let wide = CameraRig {
        f_u: 1000.0,
        f_v: 1000.0,
        baseline: 0.15,
        ..CameraRig::default()
    };
    let obs = project(&Vector3::new(0.0, 0.0, 2.0), &wide).unwrap();
    let back = reconstruct(&obs, &wide).unwrap();
    let spot = relative_eq!(obs.disparity, 75.0, epsilon = 1e-12)
        && (back - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12;
    verdict(
        7,
        "stereo round trip",
        worst < 1e-9 && spot,
        format!("worst error {worst:e} m; disparity {} px, reconstruction {:?}", obs.disparity, back.as_slice()),
        t0.elapsed(),
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_08_loss_spot_values() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for k in 1..1000 {
        let p = k as f64 / 1000.0;
        worst = worst.max((focal_loss(p, true, 1.0, 0.0).unwrap() + p.ln()).abs());
        worst = worst.max((focal_loss(p, false, 1.0, 0.0).unwrap() + (1.0 - p).ln()).abs());
    }
    let a = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let b = BoundingBox::new(0.5, 0.0, 1.5, 1.0).unwrap();
    let iou = iou_loss(&a, &b).unwrap();
    let iou_err = (iou - 3f64.ln()).abs();
    verdict(
        8,
        "focal and IoU loss spot values",
        worst <= 1e-12 && iou_err <= 1e-12,
        format!("focal vs cross-entropy {worst:e}; IoU loss {iou} (ln 3 error {iou_err:e})"),
        t0.elapsed(),
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_09_mission() {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    let mut arrivals = Vec::new();
    for seed in 0..10 {
        let mut sc = Scenario::mission_default();
        sc.seed = seed;
        let run = match run_mission(&sc) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let m = run.report.mission.unwrap();
        let Some(arrive) = m.time_to_arrive else {
            failures.push(format!("seed {seed}: never arrived"));
            continue;
        };
        arrivals.push(arrive);
        let (lo, hi) = (m.min_hold_distance.unwrap(), m.max_hold_distance.unwrap());
        let [h_lo, h_hi] = m.final_height_range;
        let att = m.final_attitude_error.unwrap().iter().fold(0.0f64, |a, e| a.max(*e)).to_degrees();
        let ok = (2.0..=6.0).contains(&arrive)
            && lo >= 1.8
            && hi <= 2.2
            && h_lo >= 1.7
            && h_hi <= 1.9
            && att < 2.0;
        if !ok {
            failures.push(format!(
                "seed {seed}: arrive {arrive:.3} s, hold [{lo:.3}, {hi:.3}] m, height [{h_lo:.3}, {h_hi:.3}] m, attitude {att:.3} deg"
            ));
        }
    }
    let detail = if failures.is_empty() {
        format!(
            "10/10 seeds; arrival {:.2}..{:.2} s",
            arrivals.iter().cloned().fold(f64::INFINITY, f64::min),
            arrivals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        )
    } else {
        failures.join("; ")
    };
    verdict(9, "mission approach and hold", failures.is_empty(), detail, t0.elapsed(), Duration::from_secs(120));
}

#[test]
fn criterion_10_determinism() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for k in 0..2 {
        let mut sc = Scenario::mission_default();
        sc.seed = 3;
        let run = run_mission(&sc).unwrap();
        let path = dir.path().join(format!("run{k}.csv"));
        run.trajectory.save(&path).unwrap();
        bytes.push(std::fs::read(&path).unwrap());
    }
    verdict(
        10,
        "bit-identical reruns",
        bytes[0] == bytes[1] && !bytes[0].is_empty(),
        format!("{} bytes each, identical {}", bytes[0].len(), bytes[0] == bytes[1]),
        t0.elapsed(),
        Duration::from_secs(120),
    );
}
