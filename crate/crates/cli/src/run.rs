//! The four verbs and the files they write.

use std::fmt::Write as _;
use std::path::PathBuf;

use log::info;

use tensegrity_core::eval::{evaluate as eval_metrics, MetricsReport, Pose, RigidTransform, Trajectory};
use tensegrity_core::shape::pairwise_distance_rmse;
use tensegrity_core::simulator::{corrupt, generate, GroundTruthFrame, Simulation};

use crate::config::RunConfig;
use crate::io::{self, Header};
use crate::pipeline::{merge, run_estimator, EstimateOutput, Event};
use crate::CliError;

pub const SENSOR_LOG: &str = "sensor_log.jsonl";
pub const GROUND_TRUTH: &str = "ground_truth.txt";
pub const ESTIMATE: &str = "estimate.txt";
pub const SHAPE_RESIDUALS: &str = "shape_residuals.csv";
pub const METRICS: &str = "metrics.txt";
pub const PLOT: &str = "plot.csv";
/// Wall-clock timings; the only output that differs between identical runs.
pub const TIMING: &str = "timing.txt";

pub fn header(cfg: &RunConfig) -> Header {
    Header::new(cfg.hash(), cfg.seed)
}

fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    Ok(cfg.out_dir.join(name))
}

pub fn truth_trajectory(truth: &[GroundTruthFrame]) -> Trajectory {
    Trajectory::new(
        truth
            .iter()
            .map(|f| Pose {
                timestamp: f.timestamp,
                rotation: f.rotation,
                position: f.position,
            })
            .collect(),
    )
    .expect("simulator timestamps increase")
}

/// Generates the scenario and corrupts the streams with the run seed.
pub fn simulate_streams(cfg: &RunConfig) -> Result<(Simulation, Vec<Event>), CliError> {
    let sc = cfg.sim_config()?;
    let sim = generate(&sc)?;
    let noisy = corrupt(&sim.streams, &sc.noise, sc.seed);
    let events = merge(&noisy);
    Ok((sim, events))
}

pub fn simulate(cfg: &RunConfig) -> Result<(Simulation, Vec<Event>), CliError> {
    let (sim, events) = simulate_streams(cfg)?;
    let h = header(cfg);
    io::write(&out_path(cfg, SENSOR_LOG)?, &io::sensor_log_string(&h, &events))?;
    io::write(&out_path(cfg, GROUND_TRUTH)?, &io::trajectory_string(&h, &truth_trajectory(&sim.truth)))?;
    info!(
        "simulated {:.1} s: {} IMU samples, {} frames",
        sim.duration,
        sim.streams.imu.len(),
        sim.truth.len()
    );
    Ok((sim, events))
}

/// Filters `events` and writes the estimate, per-frame shape residuals and
/// timings. With ground truth the residual file also carries the distance
/// error of each reconstructed shape.
pub fn estimate(cfg: &RunConfig, events: &[Event], truth: Option<&[GroundTruthFrame]>) -> Result<EstimateOutput, CliError> {
    let fcfg = cfg.filter_config()?;
    let out = run_estimator(events, &fcfg, cfg.calibration_window)?;
    let h = header(cfg);
    io::write(&out_path(cfg, ESTIMATE)?, &io::trajectory_string(&h, &out.trajectory))?;

    let mut csv = h.comment();
    csv.push_str("timestamp,residual_m2,active_contacts,distance_rmse_m,status\n");
    let mut k = 0;
    for f in &out.frames {
        let gt = truth.and_then(|t| {
            while k + 1 < t.len() && t[k].timestamp < f.timestamp - 1e-9 {
                k += 1;
            }
            t.get(k).filter(|g| (g.timestamp - f.timestamp).abs() < 1e-6)
        });
        let rmse = match (gt, &f.q) {
            (Some(g), Some(q)) => format!("{}", pairwise_distance_rmse(q, &g.shape.q)),
            _ => String::new(),
        };
        let residual = f.residual.map(|r| format!("{r:e}")).unwrap_or_default();
        let status = f.error.as_deref().map_or("ok".to_string(), |e| format!("\"{}\"", e.replace('"', "'")));
        writeln!(csv, "{},{},{},{},{}", f.timestamp, residual, f.contacts, rmse, status).unwrap();
    }
    io::write(&out_path(cfg, SHAPE_RESIDUALS)?, &csv)?;

    let n = out.frames.len().max(1) as f64;
    let mean_ms = out.frames.iter().map(|f| f.solve_seconds).sum::<f64>() / n * 1e3;
    let max_ms = out.frames.iter().map(|f| f.solve_seconds).fold(0.0, f64::max) * 1e3;
    io::write(
        &out_path(cfg, TIMING)?,
        &format!("{}mean_frame_ms = {mean_ms:.4}\nmax_frame_ms = {max_ms:.4}\nframes = {}\n", h.comment(), out.frames.len()),
    )?;
    let failures = out.frames.iter().filter(|f| f.error.is_some()).count();
    info!("estimated {} frames, {failures} shape failures, mean frame {mean_ms:.3} ms", out.frames.len());
    Ok(out)
}

/// Shape error summary over matched frames.
pub fn shape_rmse(out: &EstimateOutput, truth: &[GroundTruthFrame]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut k = 0;
    for f in &out.frames {
        while k + 1 < truth.len() && truth[k].timestamp < f.timestamp - 1e-9 {
            k += 1;
        }
        if let (Some(q), Some(g)) = (&f.q, truth.get(k)) {
            if (g.timestamp - f.timestamp).abs() < 1e-6 {
                sum += pairwise_distance_rmse(q, &g.shape.q).powi(2);
                n += 1;
            }
        }
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

fn metrics_string(h: &Header, m: &MetricsReport, shape: Option<(f64, usize)>) -> String {
    let mut s = h.comment();
    writeln!(s, "trajectory_length_m = {}", m.length).unwrap();
    writeln!(s, "final_drift_m = {}", m.final_drift).unwrap();
    writeln!(s, "drift_percent = {}", m.drift_percent).unwrap();
    writeln!(s, "rpe_translation_m_per_m = {}", m.rpe_translation).unwrap();
    writeln!(s, "rpe_rotation_deg_per_m = {}", m.rpe_rotation).unwrap();
    writeln!(s, "rpe_segments = {}", m.rpe_segments).unwrap();
    if let Some((rmse, failures)) = shape {
        writeln!(s, "shape_distance_rmse_m = {rmse}").unwrap();
        writeln!(s, "shape_failures = {failures}").unwrap();
    }
    s
}

fn plot_string(h: &Header, est: &Trajectory, gt: &Trajectory) -> String {
    let mut s = h.comment();
    s.push_str("timestamp,gt_x,gt_y,gt_z,est_x,est_y,est_z,gt_roll_deg,gt_pitch_deg,gt_yaw_deg,est_roll_deg,est_pitch_deg,est_yaw_deg\n");
    for (i, j) in tensegrity_core::eval::associate(est, gt) {
        let (e, g) = (&est.poses()[i], &gt.poses()[j]);
        let (gr, gp, gy) = g.rotation.euler();
        let (er, ep, ey) = e.rotation.euler();
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            g.timestamp,
            g.position.x,
            g.position.y,
            g.position.z,
            e.position.x,
            e.position.y,
            e.position.z,
            gr.to_degrees(),
            gp.to_degrees(),
            gy.to_degrees(),
            er.to_degrees(),
            ep.to_degrees(),
            ey.to_degrees()
        )
        .unwrap();
    }
    s
}

/// Aligns, computes the metrics and writes the report and plot table.
pub fn evaluate(
    cfg: &RunConfig,
    est: &Trajectory,
    gt: &Trajectory,
    shape: Option<(f64, usize)>,
) -> Result<(RigidTransform, MetricsReport), CliError> {
    let (t, m) = eval_metrics(est, gt, cfg.align_window)?;
    let h = header(cfg);
    io::write(&out_path(cfg, METRICS)?, &metrics_string(&h, &m, shape))?;
    let aligned = est.transformed(&t);
    io::write(&out_path(cfg, PLOT)?, &plot_string(&h, &aligned, gt))?;
    info!(
        "length {:.3} m, drift {:.4} m ({:.2}%), RPE {:.4} m/m {:.3} deg/m",
        m.length, m.final_drift, m.drift_percent, m.rpe_translation, m.rpe_rotation
    );
    Ok((t, m))
}

pub fn estimate_from_files(cfg: &RunConfig) -> Result<EstimateOutput, CliError> {
    let events = io::ingest(&cfg.sensor_log_path(), cfg.rod_length)?;
    estimate(cfg, &events, None)
}

pub fn evaluate_from_files(cfg: &RunConfig) -> Result<MetricsReport, CliError> {
    let est = io::parse_trajectory(&io::read(&cfg.estimate_path())?)?;
    let gt = io::parse_trajectory(&io::read(&cfg.ground_truth_path())?)?;
    Ok(evaluate(cfg, &est, &gt, None)?.1)
}

/// simulate → estimate → evaluate.
pub fn pipeline(cfg: &RunConfig) -> Result<MetricsReport, CliError> {
    let (sim, events) = simulate(cfg)?;
    let out = estimate(cfg, &events, Some(&sim.truth))?;
    let failures = out.frames.iter().filter(|f| f.error.is_some()).count();
    let shape = shape_rmse(&out, &sim.truth).map(|r| (r, failures));
    Ok(evaluate(cfg, &out.trajectory, &truth_trajectory(&sim.truth), shape)?.1)
}
