//! Augmented-Lagrangian shape solver.
//!
//! The decision vector holds `q2..q5` (twelve coordinates); `q0` and `q1` are
//! constants. Rod lengths are equality constraints and the ten strict
//! inequalities are enforced as `g(q) >= margin`. Every penalty term is
//! written as a squared residual so the inner problem is a plain nonlinear
//! least-squares solved with damped Gauss-Newton.

use log::debug;
use nalgebra::{SMatrix, SVector, Vector3};

use super::geometry::{check_constraints, fix_gauge, mirror, INEQUALITIES};
use super::{CableMeasurements, RobotShape, ShapeError, ShapeSolverConfig, CABLES};

type Vec12 = SVector<f64, 12>;
type Mat12 = SMatrix<f64, 12, 12>;

const NUM_INEQ: usize = 10;
const FREE_RODS: [(usize, usize); 2] = [(2, 3), (4, 5)];

/// Lagrange multipliers and penalty from a finished solve; passing them to
/// the next nearby solve skips most outer iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub rods: [f64; 2],
    pub inequalities: [f64; NUM_INEQ],
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveStats {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Infinity norm of the Lagrangian gradient at the returned point.
    pub kkt_residual: f64,
    pub max_violation: f64,
    /// Whether the warm start was abandoned in favour of the cold start.
    pub cold_restart: bool,
    /// Whether the warm start had the wrong twist and was reflected.
    pub mirrored_start: bool,
}

fn pack(q: &[Vector3<f64>; 6]) -> Vec12 {
    let mut x = Vec12::zeros();
    for k in 0..4 {
        x.fixed_rows_mut::<3>(3 * k).copy_from(&q[k + 2]);
    }
    x
}

fn unpack(x: &Vec12, cfg: &ShapeSolverConfig) -> [Vector3<f64>; 6] {
    let mut q = [cfg.q0(), cfg.q1(), Vector3::zeros(), Vector3::zeros(), Vector3::zeros(), Vector3::zeros()];
    for k in 0..4 {
        q[k + 2] = x.fixed_rows::<3>(3 * k).into();
    }
    q
}

/// Scatter a per-endcap gradient into decision-vector coordinates.
fn to_free(g: &[Vector3<f64>; 6]) -> Vec12 {
    let mut out = Vec12::zeros();
    for k in 0..4 {
        out.fixed_rows_mut::<3>(3 * k).copy_from(&g[k + 2]);
    }
    out
}

fn distance_grad(q: &[Vector3<f64>; 6], i: usize, j: usize) -> (f64, [Vector3<f64>; 6]) {
    let d = q[i] - q[j];
    let n = d.norm();
    let mut g = [Vector3::zeros(); 6];
    if n > 0.0 {
        g[i] = d / n;
        g[j] = -d / n;
    }
    (n, g)
}

struct Problem<'a> {
    lengths: [f64; 9],
    cfg: &'a ShapeSolverConfig,
}

struct State {
    rods: [f64; 2],
    ineq: [f64; NUM_INEQ],
    penalty: f64,
}

impl Problem<'_> {
    /// Merit value and, optionally, the Gauss-Newton system `(JᵀJ, Jᵀr)`.
    fn merit(&self, x: &Vec12, st: &State, system: bool) -> (f64, Mat12, Vec12) {
        let q = unpack(x, self.cfg);
        let mut m = 0.0;
        let mut jtj = Mat12::zeros();
        let mut jtr = Vec12::zeros();
        let mut add = |r: f64, g: Option<Vec12>| {
            m += r * r;
            if let Some(g) = g {
                jtj.ger(1.0, &g, &g, 1.0);
                jtr.axpy(r, &g, 1.0);
            }
        };
        for (k, &(i, j)) in CABLES.iter().enumerate() {
            let (d, g) = distance_grad(&q, i, j);
            add(d - self.lengths[k], system.then(|| to_free(&g)));
        }
        let s = (0.5 * st.penalty).sqrt();
        for (k, &(i, j)) in FREE_RODS.iter().enumerate() {
            let (d, g) = distance_grad(&q, i, j);
            let h = d - self.cfg.rod_length;
            add(s * (h + st.rods[k] / st.penalty), system.then(|| to_free(&g) * s));
        }
        for (k, c) in INEQUALITIES.iter().enumerate() {
            let (v, g) = c.value_grad(&q);
            let t = st.ineq[k] / st.penalty - (v - self.cfg.inequality_margin);
            if t > 0.0 {
                add(s * t, system.then(|| to_free(&g) * -s));
            }
        }
        (m, jtj, jtr)
    }

    /// Objective, rod residuals, inequality slacks and their gradients.
    #[allow(clippy::type_complexity)]
    fn parts(&self, x: &Vec12) -> (f64, Vec12, [(f64, Vec12); 2], [(f64, Vec12); NUM_INEQ]) {
        let q = unpack(x, self.cfg);
        let mut f = 0.0;
        let mut gf = Vec12::zeros();
        for (k, &(i, j)) in CABLES.iter().enumerate() {
            let (d, g) = distance_grad(&q, i, j);
            let r = d - self.lengths[k];
            f += r * r;
            gf += to_free(&g) * (2.0 * r);
        }
        let rods = FREE_RODS.map(|(i, j)| {
            let (d, g) = distance_grad(&q, i, j);
            (d - self.cfg.rod_length, to_free(&g))
        });
        let ineq = INEQUALITIES.map(|c| {
            let (v, g) = c.value_grad(&q);
            (v - self.cfg.inequality_margin, to_free(&g))
        });
        (f, gf, rods, ineq)
    }

    /// Damped Gauss-Newton on the merit function. Returns iterations used.
    fn inner(&self, x: &mut Vec12, st: &State) -> usize {
        let mut damping = 1e-6;
        let mut iters = 0;
        let (mut m, mut a, mut b) = self.merit(x, st, true);
        while iters < self.cfg.max_inner_iterations {
            iters += 1;
            if 2.0 * b.amax() < 0.1 * self.cfg.convergence_tol {
                break;
            }
            let mut accepted = false;
            for _ in 0..30 {
                let mut lhs = a;
                for d in 0..12 {
                    lhs[(d, d)] += damping * (1.0 + a[(d, d)]);
                }
                let Some(chol) = lhs.cholesky() else {
                    damping *= 10.0;
                    continue;
                };
                let step = chol.solve(&(-b));
                let cand = *x + step;
                let (mc, _, _) = self.merit(&cand, st, false);
                if mc <= m {
                    let tiny = step.amax() <= 1e-15 * (1.0 + x.amax());
                    *x = cand;
                    damping = (damping / 5.0).max(1e-15);
                    accepted = true;
                    if tiny {
                        return iters;
                    }
                    break;
                }
                damping *= 6.0;
            }
            if !accepted {
                break;
            }
            (m, a, b) = self.merit(x, st, true);
        }
        iters
    }

    fn solve(&self, start: &[Vector3<f64>; 6], warm: Option<&Multipliers>) -> (Vec12, State, SolveStats, bool) {
        let mut x = pack(start);
        let mut st = match warm {
            Some(w) => State {
                rods: w.rods,
                ineq: w.inequalities,
                penalty: w.penalty,
            },
            None => State {
                rods: [0.0; 2],
                ineq: [0.0; NUM_INEQ],
                penalty: self.cfg.initial_penalty,
            },
        };
        let feas_target = 1e-3 * self.cfg.rod_tol;
        let mut stats = SolveStats::default();
        let mut prev_viol = f64::INFINITY;
        let mut converged = false;
        while stats.outer_iterations < self.cfg.max_outer_iterations {
            stats.outer_iterations += 1;
            stats.inner_iterations += self.inner(&mut x, &st);

            let (_, gf, rods, ineq) = self.parts(&x);
            let mut viol: f64 = 0.0;
            let mut grad_l = gf;
            for (k, (h, g)) in rods.iter().enumerate() {
                st.rods[k] += st.penalty * h;
                grad_l += g * st.rods[k];
                viol = viol.max(h.abs());
            }
            for (k, (c, g)) in ineq.iter().enumerate() {
                st.ineq[k] = (st.ineq[k] - st.penalty * c).max(0.0);
                grad_l -= g * st.ineq[k];
                viol = viol.max((-c).max(0.0));
            }
            stats.kkt_residual = grad_l.amax();
            stats.max_violation = viol;
            if viol <= feas_target && stats.kkt_residual <= self.cfg.convergence_tol {
                converged = true;
                break;
            }
            if viol > 0.25 * prev_viol {
                st.penalty = (st.penalty * self.cfg.penalty_growth).min(self.cfg.max_penalty);
            }
            prev_viol = viol;
        }
        (x, st, stats, converged)
    }
}

/// Rejects cable sets that cannot close a triangle with each other or a rod.
fn check_triangles(l: &[f64; 9], cfg: &ShapeSolverConfig) -> Result<(), ShapeError> {
    let rod = cfg.rod_length;
    let get = |i, j| l[super::cable_index(i, j).expect("cable")];
    let tris: [(&str, f64, f64, f64); 8] = [
        ("top 0-2-4", get(0, 2), get(2, 4), get(0, 4)),
        ("bottom 1-3-5", get(1, 3), get(3, 5), get(1, 5)),
        ("rod01/s4", get(0, 4), get(1, 4), rod),
        ("rod01/s3", get(0, 3), get(1, 3), rod),
        ("rod23/s0", get(0, 2), get(0, 3), rod),
        ("rod23/s5", get(2, 5), get(3, 5), rod),
        ("rod45/s1", get(1, 4), get(1, 5), rod),
        ("rod45/s2", get(2, 4), get(2, 5), rod),
    ];
    for (name, a, b, c) in tris {
        let longest = a.max(b).max(c);
        if longest > a + b + c - longest + cfg.triangle_tol {
            return Err(ShapeError::MeasurementRejected(format!(
                "triangle {name} violated: sides {a:.4}, {b:.4}, {c:.4}"
            )));
        }
    }
    Ok(())
}

/// Turns a prior shape into a usable start, or `None` if it is unusable.
fn prepare_prior(prior: &RobotShape, cfg: &ShapeSolverConfig) -> Option<([Vector3<f64>; 6], bool)> {
    let mut q = prior.q;
    q[0] = cfg.q0();
    q[1] = cfg.q1();
    let mut mirrored = false;
    let rep = check_constraints(&RobotShape::new(0.0, q), cfg);
    if !rep.crossing_ok() {
        q = mirror(&q);
        mirrored = true;
    }
    fix_gauge(&mut q);
    let rep = check_constraints(&RobotShape::new(0.0, q), cfg);
    rep.inequalities_ok().then_some((q, mirrored))
}

/// Reconstructs the six endcap positions from one cable reading.
///
/// `prior`, usually the previous frame's shape, is the warm start; without
/// it the symmetric prism from the config is used.
pub fn reconstruct_shape(
    meas: &CableMeasurements,
    prior: Option<&RobotShape>,
    cfg: &ShapeSolverConfig,
) -> Result<RobotShape, ShapeError> {
    reconstruct_shape_warm(meas, prior, None, cfg).map(|(s, _, _)| s)
}

/// Like [`reconstruct_shape`] but also accepts and returns multipliers.
pub fn reconstruct_shape_warm(
    meas: &CableMeasurements,
    prior: Option<&RobotShape>,
    multipliers: Option<&Multipliers>,
    cfg: &ShapeSolverConfig,
) -> Result<(RobotShape, Multipliers, SolveStats), ShapeError> {
    cfg.validate()?;
    let mut lengths = *meas.lengths();
    for (l, off) in lengths.iter_mut().zip(&cfg.cable_offsets) {
        *l += off;
    }
    if let Some(k) = lengths.iter().position(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(ShapeError::MeasurementRejected(format!(
            "cable ({},{}) has non-positive corrected length",
            CABLES[k].0, CABLES[k].1
        )));
    }
    check_triangles(&lengths, cfg)?;

    let problem = Problem { lengths, cfg };
    let mut starts: Vec<([Vector3<f64>; 6], bool, bool)> = Vec::with_capacity(2);
    if let Some((q, mirrored)) = prior.and_then(|p| prepare_prior(p, cfg)) {
        starts.push((q, mirrored, false));
    }
    starts.push((cfg.canonical_shape().q, false, prior.is_some()));

    let mut best: Option<(RobotShape, SolveStats)> = None;
    for (k, (start, mirrored, cold_restart)) in starts.into_iter().enumerate() {
        let warm = if k == 0 { multipliers } else { None };
        let (x, st, mut stats, converged) = problem.solve(&start, warm);
        stats.mirrored_start = mirrored;
        stats.cold_restart = cold_restart;
        let mut q = unpack(&x, cfg);
        fix_gauge(&mut q);
        let shape = RobotShape {
            timestamp: meas.timestamp,
            residual: 0.0,
            q,
        };
        let shape = RobotShape {
            residual: shape.objective(&lengths),
            ..shape
        };
        let report = check_constraints(&shape, cfg);
        if converged && report.passed {
            let mult = Multipliers {
                rods: st.rods,
                inequalities: st.ineq,
                penalty: st.penalty,
            };
            return Ok((shape, mult, stats));
        }
        debug!(
            "shape solve from start {k} failed: converged={converged} kkt={:.3e} viol={:.3e} violations={:?}",
            stats.kkt_residual,
            stats.max_violation,
            report.violations()
        );
        let better = best.as_ref().is_none_or(|(b, bs)| {
            (stats.max_violation, shape.residual) < (bs.max_violation, b.residual)
        });
        if better {
            best = Some((shape, stats));
        }
    }
    let (best, stats) = best.expect("at least one start");
    let report = check_constraints(&best, cfg);
    Err(ShapeError::SolverFailure {
        reason: format!(
            "no start converged (kkt {:.3e}, violation {:.3e}, failing {:?})",
            stats.kkt_residual,
            stats.max_violation,
            report.violations()
        ),
        best: Box::new(best),
        report: Box::new(report),
    })
}
