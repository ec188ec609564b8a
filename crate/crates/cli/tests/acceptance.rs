//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so every criterion reports even when an
//! earlier one fails; the process exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use tensegrity_cli::config::RunConfig;
use tensegrity_cli::pipeline::{merge, run_estimator, Event};
use tensegrity_cli::run;
use tensegrity_core::eval::{drift_metrics, evaluate, Pose, Trajectory};
use tensegrity_core::inekf::{
    augment_contact, correct_contact, error_dynamics, propagate, ContactCovariance, ContactNoiseModel, Estimator,
    EstimatorState, FilterConfig, ImuBias, ImuSample, InitialState, NoiseConfig,
};
use tensegrity_core::liegroup::{sek3_exp, sek3_log, so3_exp, GroupElement, Rotation, TangentVector};
use tensegrity_core::shape::{
    body_frame_from_world, check_constraints, pairwise_distance_rmse, reconstruct_shape, reconstruct_shape_warm,
    CableMeasurements, EndcapId, PrismParams, RobotShape, ShapeSolverConfig,
};
use tensegrity_core::simulator::{corrupt, generate, Maneuver, SimConfig};

/// Outcome of one criterion: pass flag and a short measured summary.
type Outcome = (bool, String);

fn id(i: usize) -> EndcapId {
    EndcapId::new(i).unwrap()
}

fn vec3(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-s..s))
}

// ---------------------------------------------------------------- shape

fn shape_over_forward_roll() -> [Outcome; 3] {
    // 3 s dwell + 14 pivots with settles + 1 s dwell = 60 s
    let sc = SimConfig {
        script: vec![Maneuver::RollForward(14)],
        ..Default::default()
    };
    let sim = generate(&sc).unwrap();
    let noisy = corrupt(&sim.streams, &sc.noise, 11);
    let cfg = ShapeSolverConfig::default();

    let run = |cables: &[CableMeasurements]| {
        let (mut prior, mut mult) = (None::<RobotShape>, None);
        let (mut sq, mut n, mut secs) = (0.0, 0usize, 0.0);
        let mut k = 0;
        for m in cables {
            let clock = Instant::now();
            let (s, mu, _) = reconstruct_shape_warm(m, prior.as_ref(), mult.as_ref(), &cfg).unwrap();
            secs += clock.elapsed().as_secs_f64();
            while sim.truth[k].timestamp < m.timestamp - 1e-9 {
                k += 1;
            }
            sq += pairwise_distance_rmse(&s.q, &sim.truth[k].shape.q).powi(2);
            n += 1;
            prior = Some(s);
            mult = Some(mu);
        }
        ((sq / n as f64).sqrt(), secs / n as f64, n)
    };
    let (clean, _, _) = run(&sim.streams.cables);
    let (rmse, mean_solve, frames) = run(&noisy.cables);
    [
        (rmse <= 0.05, format!("pairwise RMSE {:.2} cm over {frames} frames, {:.0} s", rmse * 100.0, sim.duration)),
        (clean <= 1e-3, format!("noise-free pairwise RMSE {:.3} mm", clean * 1e3)),
        (mean_solve <= 0.01, format!("mean solve {:.3} ms", mean_solve * 1e3)),
    ]
}

// ---------------------------------------------------------------- drift

fn drift(scenario: &str) -> Outcome {
    let cfg = RunConfig {
        scenario: scenario.into(),
        seed: 1,
        ..Default::default()
    };
    let clock = Instant::now();
    let (sim, events) = run::simulate_streams(&cfg).unwrap();
    let out = run_estimator(&events, &cfg.filter_config().unwrap(), cfg.calibration_window).unwrap();
    let (_, m) = evaluate(&out.trajectory, &run::truth_trajectory(&sim.truth), cfg.align_window).unwrap();
    let wall = clock.elapsed().as_secs_f64();
    (
        m.drift_percent <= 8.0 && wall < 60.0,
        format!(
            "drift {:.2}% ({:.3} m over {:.2} m), wall {:.1} s",
            m.drift_percent, m.final_drift, m.length, wall
        ),
    )
}

// ---------------------------------------------------------------- latency

fn three_contact_state(rng: &mut ChaCha8Rng) -> EstimatorState {
    let cfg = FilterConfig::default();
    let mut s = EstimatorState::new(
        so3_exp(&vec3(rng, 1.0)),
        vec3(rng, 0.5),
        vec3(rng, 1.0),
        ImuBias::default(),
        cfg.initial_covariance(),
        0.0,
    )
    .unwrap();
    for k in 0..3 {
        augment_contact(&mut s, id(2 * k), &vec3(rng, 0.7), &ContactCovariance::isotropic(0.01)).unwrap();
    }
    s
}

fn latency() -> [Outcome; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = NoiseConfig::default();
    let frame = so3_exp(&Vector3::new(0.2, -0.1, 0.4));
    let imu = ImuSample {
        timestamp: 0.0,
        accel: Vector3::new(0.1, -0.2, 9.8),
        gyro: Vector3::new(0.05, 0.3, -0.1),
    };
    let n = 20_000;

    let mut s = three_contact_state(&mut rng);
    let clock = Instant::now();
    for _ in 0..n {
        propagate(&mut s, &imu, 0.005, &noise, &frame).unwrap();
    }
    let prop = clock.elapsed().as_secs_f64() / n as f64;

    let mut s = three_contact_state(&mut rng);
    let fk = ContactCovariance::isotropic(0.01);
    let clock = Instant::now();
    for k in 0..n {
        let c = s.active_contacts[k % 3];
        let h = s.rotation().inverse().apply(&(s.contact_position(c).unwrap() - s.position()));
        correct_contact(&mut s, c, &(h + Vector3::new(1e-3, 0.0, -1e-3)), &fk, None, 1e12).unwrap();
    }
    let corr = clock.elapsed().as_secs_f64() / n as f64;
    [
        (prop < 100e-6, format!("propagate mean {:.1} µs with 3 contacts", prop * 1e6)),
        (corr < 200e-6, format!("correct_contact mean {:.1} µs with 3 contacts", corr * 1e6)),
    ]
}

// ---------------------------------------------------------------- properties

fn dense_expm(a: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for i in 1..terms {
        term = &term * a / i as f64;
        out += &term;
    }
    out
}

fn liegroup_exp_log() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut exp_err, mut log_err) = (0.0f64, 0.0f64);
    let mut n = 0;
    for k in 2..6 {
        for _ in 0..250 {
            let mut xi = DVector::from_fn(3 * (1 + k), |_, _| rng.random_range(-1.0..1.0));
            let norm = xi.norm();
            if norm > 1.0 {
                xi /= norm;
            }
            let tv = TangentVector::new(xi).unwrap();
            let x = sek3_exp(&tv).unwrap();
            exp_err = exp_err.max((x.embedding() - dense_expm(&tv.hat(), 30)).amax());
            log_err = log_err.max((sek3_log(&x).as_vector() - tv.as_vector()).amax());
            n += 1;
        }
    }
    (
        exp_err < 1e-9 && log_err < 1e-9,
        format!("{n} samples, max |exp - expm| {exp_err:.1e}, max |log(exp ξ) - ξ| {log_err:.1e}"),
    )
}

fn quiet() -> NoiseConfig {
    NoiseConfig {
        gyro: Matrix3::zeros(),
        accel: Matrix3::zeros(),
        gyro_bias: Matrix3::zeros(),
        accel_bias: Matrix3::zeros(),
        contact: Matrix3::zeros(),
        ..Default::default()
    }
}

/// Propagates an estimate and a truth offset from it by `(ξ, ζ)` with the
/// same IMU sample and returns the error afterwards.
fn propagated_error(est: &EstimatorState, err: &DVector<f64>, imu: &ImuSample, dt: f64) -> DVector<f64> {
    let b = est.dim() - 6;
    let eta = GroupElement::exp(&TangentVector::new(err.rows(0, b).into_owned()).unwrap()).unwrap();
    let mut truth = est.clone();
    truth.group = eta.inverse().compose(&est.group).unwrap();
    truth.bias.gyro -= err.fixed_rows::<3>(b).into_owned();
    truth.bias.accel -= err.fixed_rows::<3>(b + 3).into_owned();
    let mut e = est.clone();
    propagate(&mut e, imu, dt, &quiet(), &Rotation::identity()).unwrap();
    propagate(&mut truth, imu, dt, &quiet(), &Rotation::identity()).unwrap();
    let mut out = DVector::zeros(est.dim());
    out.rows_mut(0, b)
        .copy_from(sek3_log(&e.group.compose(&truth.group.inverse()).unwrap()).as_vector());
    out.fixed_rows_mut::<3>(b).copy_from(&(e.bias.gyro - truth.bias.gyro));
    out.fixed_rows_mut::<3>(b + 3).copy_from(&(e.bias.accel - truth.bias.accel));
    out
}

fn linearization_order() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut min_slope = f64::INFINITY;
    for _ in 0..20 {
        let est = three_contact_state(&mut rng);
        let imu = ImuSample {
            timestamp: 0.0,
            accel: vec3(&mut rng, 5.0),
            gyro: vec3(&mut rng, 2.0),
        };
        let n = est.dim();
        let err = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0f64)).normalize() * 1e-6;
        let a = error_dynamics(&est, &quiet().gravity);
        let points: Vec<(f64, f64)> = [1e-2, 5e-3, 2.5e-3, 1.25e-3]
            .iter()
            .map(|&dt| {
                let residual = propagated_error(&est, &err, &imu, dt) - (&a * dt).exp() * &err;
                (dt.ln(), residual.norm().ln())
            })
            .collect();
        let m = points.len() as f64;
        let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / m, b + y / m));
        let num: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        min_slope = min_slope.min(num / den);
    }
    (min_slope >= 1.9, format!("min log-log slope {min_slope:.3} over 20 states"))
}

/// One Monte Carlo run: 9-dof NEES of `[R, v, p]` after every frame.
fn nees_run(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut g = |s: f64| Vector3::from_fn(|_, _| unit.sample(&mut rng)) * s;

    let mut sc = SimConfig {
        script: vec![Maneuver::RollForward(2)],
        ..Default::default()
    };
    let mut cfg = FilterConfig {
        init_std_position: 0.01,
        ..Default::default()
    };
    sc.noise.initial_bias = ImuBias {
        gyro: g(cfg.init_std_bias),
        accel: g(cfg.init_std_bias),
    };
    // simulated contacts never slip, so the contact random walk only has to
    // absorb lift-off within the debounce window; 3e-4 m/√s puts the
    // average NEES closest to its 9 degrees of freedom
    cfg.noise.contact = Matrix3::identity() * 9e-8;
    cfg.contact_noise = ContactNoiseModel::Jacobian {
        cable_std: sc.noise.cable_std,
    };
    let sim = generate(&sc).unwrap();
    let noisy = corrupt(&sim.streams, &sc.noise, seed);

    let f0 = &sim.truth[0];
    let xi0 = TangentVector::from_blocks(
        g(cfg.init_std_rotation),
        &[g(cfg.init_std_velocity), g(cfg.init_std_position)],
    );
    let truth0 = GroupElement::new(f0.rotation, vec![f0.velocity, f0.position]).unwrap();
    let x0 = GroupElement::exp(&xi0).unwrap().compose(&truth0).unwrap();
    let mut est = Estimator::new(
        cfg,
        InitialState {
            rotation: *x0.rotation(),
            velocity: *x0.velocity(),
            position: *x0.position(),
            bias: ImuBias::default(),
            timestamp: 0.0,
        },
    )
    .unwrap();

    let mut out = Vec::new();
    let (mut cable, mut contact) = (None, None);
    let mut k = 0;
    for e in &merge(&noisy) {
        match e {
            Event::Imu(s) => est.process_imu(s).unwrap(),
            Event::Cable(c) => cable = Some(c.clone()),
            Event::Contact(c) => contact = Some(*c),
        }
        let (Some(m), Some(c)) = (&cable, &contact) else {
            continue;
        };
        est.process_frame(m, c).unwrap();
        while sim.truth[k].timestamp < m.timestamp - 1e-9 {
            k += 1;
        }
        let f = &sim.truth[k];
        let s = est.state();
        let xt = GroupElement::new(f.rotation, vec![f.velocity, f.position]).unwrap();
        let xe = GroupElement::new(*s.rotation(), vec![*s.velocity(), *s.position()]).unwrap();
        let xi = DVector::from_column_slice(sek3_log(&xe.compose(&xt.inverse()).unwrap()).as_vector().as_slice());
        let p = s.covariance.view((0, 0), (9, 9)).into_owned();
        out.push((xi.transpose() * p.try_inverse().unwrap() * &xi)[(0, 0)]);
        cable = None;
        contact = None;
    }
    out
}

fn nees_consistency() -> Outcome {
    let runs: Vec<Vec<f64>> = (0..50).map(nees_run).collect();
    let chi2 = ChiSquared::new(9.0).unwrap();
    let (lo, hi) = (chi2.inverse_cdf(0.025), chi2.inverse_cdf(0.975));
    let all: Vec<f64> = runs.iter().flatten().copied().collect();
    let inside = all.iter().filter(|&&e| e >= lo && e <= hi).count() as f64 / all.len() as f64;

    // the stricter run-averaged test, reported for reference
    let steps = runs.iter().map(Vec::len).min().unwrap();
    let pooled = ChiSquared::new(9.0 * 50.0).unwrap();
    let (alo, ahi) = (pooled.inverse_cdf(0.025) / 50.0, pooled.inverse_cdf(0.975) / 50.0);
    let avg: Vec<f64> = (0..steps).map(|t| runs.iter().map(|r| r[t]).sum::<f64>() / 50.0).collect();
    let avg_inside = avg.iter().filter(|&&a| a >= alo && a <= ahi).count() as f64 / steps as f64;
    let anees = avg.iter().sum::<f64>() / steps as f64;
    (
        inside >= 0.8,
        format!(
            "{:.1}% of {} NEES values in [{lo:.2}, {hi:.2}] (50 runs, 9 dof); ANEES {anees:.2}, \
             run-averaged NEES in [{alo:.2}, {ahi:.2}] at {:.1}% of timesteps",
            inside * 100.0,
            all.len(),
            avg_inside * 100.0
        ),
    )
}

fn random_prism(rng: &mut ChaCha8Rng, l: f64) -> RobotShape {
    let mut w = PrismParams {
        bottom_radius: rng.random_range(0.42..0.58),
        top_radius: rng.random_range(0.42..0.58),
        twist: rng.random_range(1.85..2.4),
    }
    .world_endcaps(l);
    for k in 0..3 {
        let (top, bottom) = (2 * k, 2 * k + 1);
        let mut d = w[top] - w[bottom];
        d.x += rng.random_range(-0.04..0.04);
        d.y += rng.random_range(-0.04..0.04);
        w[top] = w[bottom] + d.normalize() * l;
    }
    body_frame_from_world(&w, l, 0.0).2
}

fn chirality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = ShapeSolverConfig::default();
    let l = cfg.rod_length;
    let (mut solves, mut mirrored, mut failed) = (0, 0, 0);
    let mut worst = 0.0f64;
    while solves < 10_000 {
        let truth = random_prism(&mut rng, l);
        if !check_constraints(&truth, &cfg).passed {
            continue;
        }
        let mut lengths = truth.cable_lengths();
        for x in &mut lengths {
            *x += rng.random_range(-0.005..0.005);
        }
        solves += 1;
        match reconstruct_shape(&CableMeasurements::new(0.0, lengths, l).unwrap(), None, &cfg) {
            Ok(s) if !check_constraints(&s, &cfg).crossing_ok() => mirrored += 1,
            Ok(s) => worst = worst.max(pairwise_distance_rmse(&s.q, &truth.q)),
            Err(_) => failed += 1,
        }
    }
    (
        mirrored == 0,
        format!(
            "{mirrored} of {solves} cold-start solves mirrored, {failed} failed, worst pairwise RMSE {:.1} mm",
            worst * 1e3
        ),
    )
}

fn zero_innovation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let noise = NoiseConfig::default();
    let fk = ContactCovariance::isotropic(0.01);
    let (mut moved, mut grew) = (0.0f64, 0.0f64);
    let n = 1000;
    for _ in 0..n {
        let mut s = three_contact_state(&mut rng);
        for _ in 0..rng.random_range(0..20) {
            let imu = ImuSample {
                timestamp: 0.0,
                accel: Vector3::new(0.0, 0.0, 9.81) + vec3(&mut rng, 2.0),
                gyro: vec3(&mut rng, 1.0),
            };
            propagate(&mut s, &imu, 0.005, &noise, &so3_exp(&vec3(&mut rng, 3.0))).unwrap();
        }
        let c = s.active_contacts[rng.random_range(0..3)];
        let h = s.rotation().inverse().apply(&(s.contact_position(c).unwrap() - s.position()));
        let before = s.clone();
        correct_contact(&mut s, c, &h, &fk, None, 1e12).unwrap();
        moved = moved.max((s.group.embedding() - before.group.embedding()).amax());
        moved = moved.max((s.bias.gyro - before.bias.gyro).amax().max((s.bias.accel - before.bias.accel).amax()));
        grew = grew.max(s.covariance.trace() - before.covariance.trace());
    }
    (
        moved < 1e-12 && grew <= 0.0,
        format!("{n} states: max mean change {moved:.1e}, max trace(P) increase {grew:.1e}"),
    )
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != run::TIMING)
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let cfg = RunConfig {
            script: "forward:2".into(),
            seed: 7,
            out_dir: d.path().to_path_buf(),
            ..Default::default()
        };
        run::pipeline(&cfg).unwrap();
    }
    let (a, b) = (read_outputs(dirs[0].path()), read_outputs(dirs[1].path()));
    let mut names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    let mut expected = [
        run::SENSOR_LOG,
        run::GROUND_TRUTH,
        run::ESTIMATE,
        run::SHAPE_RESIDUALS,
        run::METRICS,
        run::PLOT,
    ];
    names.sort();
    expected.sort();
    (
        a == b && names == expected,
        format!("{} files byte-identical across two runs: {}", a.len(), names.join(", ")),
    )
}

// ---------------------------------------------------------------- metrics

fn metrics_oracle() -> Outcome {
    let pose = |t: f64, x: f64, y: f64| Pose {
        timestamp: t,
        rotation: Rotation::identity(),
        position: Vector3::new(x, y, 0.0),
    };
    let gt = Trajectory::new((0..=75).map(|k| pose(k as f64 * 0.1, k as f64 * 0.1, 0.0)).collect()).unwrap();
    let est = Trajectory::new(
        (0..=75)
            .map(|k| pose(k as f64 * 0.1, k as f64 * 0.1, if k == 75 { 0.3275 } else { 0.0 }))
            .collect(),
    )
    .unwrap();
    let m = drift_metrics(&est, &gt).unwrap();
    let rounded = (m.drift_percent * 100.0).round() / 100.0;
    (
        rounded == 4.37,
        format!("{:.4} m over {:.2} m -> {rounded:.2}%", m.final_drift, m.length),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |names: &[&str], f: &dyn Fn() -> Vec<Outcome>| {
        let clock = Instant::now();
        let outcomes = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            names.iter().map(|_| (false, format!("panicked: {msg}"))).collect()
        });
        let secs = clock.elapsed().as_secs_f64();
        for (name, (pass, detail)) in names.iter().zip(&outcomes) {
            println!("{} {name}: {detail} ({secs:.1} s)", if *pass { "PASS" } else { "FAIL" });
            failures += usize::from(!pass);
        }
    };

    report(&["shape_accuracy_noisy", "shape_accuracy_noise_free", "shape_solve_time"], &|| shape_over_forward_roll().to_vec());
    report(&["drift_forward"], &|| vec![drift("forward")]);
    report(&["drift_backward"], &|| vec![drift("backward")]);
    report(&["drift_right_turn"], &|| vec![drift("right_turn")]);
    report(&["propagate_latency", "correction_latency"], &|| latency().to_vec());
    report(&["liegroup_exp_log"], &|| vec![liegroup_exp_log()]);
    report(&["linearization_order"], &|| vec![linearization_order()]);
    report(&["nees_consistency"], &|| vec![nees_consistency()]);
    report(&["chirality_preserved"], &|| vec![chirality()]);
    report(&["zero_innovation_fixed_point"], &|| vec![zero_innovation()]);
    report(&["determinism"], &|| vec![determinism()]);
    report(&["drift_metric_oracle"], &|| vec![metrics_oracle()]);

    println!("{failures} criteria failed");
    if failures > 0 {
        std::process::exit(1);
    }
}
