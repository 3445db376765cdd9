//! Experiment drivers built on top of single runs.

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use super::problems::{Problem, ProblemSpec};
use super::run::{l2_difference, l2_error, setup};
use crate::error::{Error, Result};
use crate::euler::NVARS;
use crate::knapsack::{solve_linear, solve_quadratic, KnapsackInstance, Objective, DEFAULT_TOL};
use crate::operators::OperatorSet;
use crate::rhs::{DiagnosticSummary, Discretization, SchemeConfig, SchemeKind, SemiDiscrete};
use crate::timestep::{integrate, IntegrateOptions, IntegrationStats, RkScheme, StepController, MAX_STEPS};

/// Largest Jacobian handled by the dense eigensolver.
pub const MAX_JACOBIAN_DOFS: usize = 4096;

/// Integrate a problem with a fixed step and return the final state.
pub fn fixed_dt_solution(
    spec: &ProblemSpec,
    degree: usize,
    scheme: SchemeConfig,
    stepper: RkScheme,
    dt: f64,
    t_end: f64,
) -> Result<(Discretization, Vec<f64>, DiagnosticSummary)> {
    let (disc, u0) = setup(spec, degree, scheme)?;
    let mut sys = SemiDiscrete::new(&disc);
    let (u, _) = integrate(
        &mut sys,
        &u0,
        (0.0, t_end),
        stepper,
        StepController::Fixed { dt },
        IntegrateOptions::default(),
        |_, _, _| {},
    )?;
    let summary = sys.summary;
    Ok((disc, u, summary))
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub degree: usize,
    pub cells: usize,
    pub error: f64,
    /// `log2(e_{M/2} / e_M)`, absent for the coarsest mesh.
    pub rate: Option<f64>,
}

/// Density-wave L2 errors at the final time for every `(N, M)` pair.
pub fn convergence_study(
    kind: SchemeKind,
    degrees: &[usize],
    cells: &[usize],
    dt: f64,
) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::new();
    for &degree in degrees {
        let mut prev: Option<(usize, f64)> = None;
        for &m in cells {
            let spec = ProblemSpec::new(Problem::DensityWave, m);
            let t = spec.t_final;
            let (disc, u, _) =
                fixed_dt_solution(&spec, degree, SchemeConfig::new(kind), RkScheme::Rk4, dt, t)?;
            let error = l2_error(&disc, &u, |x| {
                let w = spec.exact_primitive(x, t).expect("density wave has an exact solution");
                spec.gas.prim_to_cons(&w)
            });
            let rate = prev.map(|(pm, pe)| (pe / error).ln() / (m as f64 / pm as f64).ln());
            rows.push(ConvergenceRow {
                degree,
                cells: m,
                error,
                rate,
            });
            prev = Some((m, error));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeConvergence {
    pub scheme: SchemeKind,
    /// `(dt, ||S(dt_ref) - S(dt)||)`; `None` when the run crashed.
    pub points: Vec<(f64, Option<f64>)>,
    pub slope: Option<f64>,
    /// Set when the reference run itself failed.
    pub reference_failed: bool,
}

/// Fixed-step self-convergence against a reference step `dt_ref`.
pub fn time_convergence_study(
    spec: &ProblemSpec,
    degree: usize,
    kinds: &[SchemeKind],
    dt_list: &[f64],
    dt_ref: f64,
    stepper: RkScheme,
) -> Result<Vec<TimeConvergence>> {
    let min_dt = dt_list.iter().copied().fold(f64::INFINITY, f64::min);
    if !(dt_ref > 0.0) || dt_ref > min_dt / 5.0 * (1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "reference step {dt_ref} must be at most a fifth of the smallest step {min_dt}"
        )));
    }
    let t_end = spec.t_final;
    let mut out = Vec::new();
    for &kind in kinds {
        let scheme = SchemeConfig::new(kind);
        let reference = match fixed_dt_solution(spec, degree, scheme, stepper, dt_ref, t_end) {
            Ok(r) => r,
            Err(e) if e.is_solver_failure() => {
                out.push(TimeConvergence {
                    scheme: kind,
                    points: dt_list.iter().map(|&dt| (dt, None)).collect(),
                    slope: None,
                    reference_failed: true,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let (disc, u_ref, _) = reference;
        let mut points = Vec::new();
        for &dt in dt_list {
            let err = match fixed_dt_solution(spec, degree, scheme, stepper, dt, t_end) {
                Ok((_, u, _)) => Some(l2_difference(&disc, &u_ref, &u)),
                Err(e) if e.is_solver_failure() => None,
                Err(e) => return Err(e),
            };
            points.push((dt, err));
        }
        let ok: Vec<(f64, f64)> = points.iter().filter_map(|&(d, e)| e.map(|e| (d, e))).collect();
        out.push(TimeConvergence {
            scheme: kind,
            points,
            slope: loglog_slope(&ok),
            reference_failed: false,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StepCount {
    Completed { accepted: usize, rejected: usize },
    /// More than `MAX_STEPS` steps.
    Dnf,
    Crashed { message: String },
}

impl StepCount {
    pub fn total(&self) -> Option<usize> {
        match self {
            StepCount::Completed { accepted, rejected } => Some(accepted + rejected),
            _ => None,
        }
    }
}

impl std::fmt::Display for StepCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepCount::Completed { .. } => write!(f, "{}", self.total().unwrap_or(0)),
            StepCount::Dnf => f.write_str("DNF"),
            StepCount::Crashed { .. } => f.write_str("crashed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveRow {
    pub scheme: SchemeKind,
    pub degree: usize,
    pub cells: usize,
    pub abstol: f64,
    pub reltol: f64,
    pub steps: StepCount,
}

/// Count accepted plus rejected adaptive steps to reach the final time.
pub fn adaptive_steps(
    spec: &ProblemSpec,
    degree: usize,
    scheme: SchemeConfig,
    stepper: RkScheme,
    abstol: f64,
    reltol: f64,
    max_steps: usize,
) -> Result<StepCount> {
    let (disc, u0) = setup(spec, degree, scheme)?;
    let mut sys = SemiDiscrete::new(&disc);
    let result = integrate(
        &mut sys,
        &u0,
        (0.0, spec.t_final),
        stepper,
        StepController::Adaptive { abstol, reltol },
        IntegrateOptions { max_steps },
        |_, _, _| {},
    );
    match result {
        Ok((_, IntegrationStats { accepted_steps, rejected_steps, .. })) => Ok(StepCount::Completed {
            accepted: accepted_steps,
            rejected: rejected_steps,
        }),
        Err(Error::MaxStepsExceeded(_)) => Ok(StepCount::Dnf),
        Err(e) if e.is_solver_failure() => Ok(StepCount::Crashed {
            message: e.to_string(),
        }),
        Err(e) => Err(e),
    }
}

pub fn adaptive_step_study(
    problem: Problem,
    kinds: &[SchemeKind],
    tolerances: &[(f64, f64)],
    meshes: &[(usize, usize)],
) -> Result<Vec<AdaptiveRow>> {
    let mut rows = Vec::new();
    for &(degree, cells) in meshes {
        let spec = ProblemSpec::new(problem, cells);
        for &(abstol, reltol) in tolerances {
            for &kind in kinds {
                let steps = adaptive_steps(
                    &spec,
                    degree,
                    SchemeConfig::new(kind),
                    RkScheme::Rk4,
                    abstol,
                    reltol,
                    MAX_STEPS,
                )?;
                rows.push(AdaptiveRow {
                    scheme: kind,
                    degree,
                    cells,
                    abstol,
                    reltol,
                    steps,
                });
            }
        }
    }
    Ok(rows)
}

/// Dense Jacobian of `f` at `u` by central differences, step `1e-7 max(|u_j|, 1)`.
pub fn jacobian_fd<F>(mut f: F, u: &[f64]) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = u.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut x = u.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = 1e-7 * u[j].abs().max(1.0);
        x[j] = u[j] + h;
        f(&x, &mut fp)?;
        x[j] = u[j] - h;
        f(&x, &mut fm)?;
        x[j] = u[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

pub fn max_real_eigenvalue(jac: DMatrix<f64>) -> Result<f64> {
    let m = faer::Mat::<f64>::from_fn(jac.nrows(), jac.ncols(), |i, j| jac[(i, j)]);
    let eig = m
        .eigenvalues()
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    Ok(eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Spectral abscissa of the semi-discrete right-hand side at `u`.
///
/// The padded second momentum of 1D runs is dropped so it does not add zero eigenvalues.
pub fn spectral_abscissa(disc: &Discretization, u: &[f64]) -> Result<f64> {
    let active: Vec<usize> = (0..u.len())
        .filter(|idx| disc.ops.dim == 2 || idx % NVARS != 2)
        .collect();
    if active.len() > MAX_JACOBIAN_DOFS {
        return Err(Error::DofCap(active.len(), MAX_JACOBIAN_DOFS));
    }
    let reduced: Vec<f64> = active.iter().map(|&i| u[i]).collect();
    let mut full = u.to_vec();
    let mut du = vec![0.0; u.len()];
    let jac = jacobian_fd(
        |x, out| {
            for (&i, &v) in active.iter().zip(x) {
                full[i] = v;
            }
            disc.rhs(&full, None, &mut du)?;
            for (o, &i) in out.iter_mut().zip(&active) {
                *o = du[i];
            }
            Ok(())
        },
        &reduced,
    )?;
    max_real_eigenvalue(jac)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub scheme: SchemeKind,
    pub degree: usize,
    pub cells: usize,
    pub max_real: f64,
}

/// Spectral abscissa of each scheme at a problem's initial state.
pub fn spectra_study(
    spec: &ProblemSpec,
    degree: usize,
    kinds: &[SchemeKind],
) -> Result<Vec<SpectrumRow>> {
    kinds
        .iter()
        .map(|&kind| {
            let (disc, u0) = setup(spec, degree, SchemeConfig::new(kind))?;
            Ok(SpectrumRow {
                scheme: kind,
                degree,
                cells: spec.cells,
                max_real: spectral_abscissa(&disc, &u0)?,
            })
        })
        .collect()
}

/// Trailing rolling mean: each sample averages all samples within `width` before it.
pub fn rolling_mean(t: &[f64], y: &[f64], width: f64) -> Vec<f64> {
    let mut start = 0;
    let mut sum = 0.0;
    let mut out = Vec::with_capacity(y.len());
    for i in 0..y.len() {
        sum += y[i];
        while t[i] - t[start] >= width * (1.0 - 1e-12) {
            sum -= y[start];
            start += 1;
        }
        out.push(sum / (i + 1 - start) as f64);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSeries {
    pub scheme: SchemeKind,
    pub t: Vec<f64>,
    pub error: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// The run failed before the final time; the series stops there.
    pub crashed: bool,
}

/// L2 error against the exact Sod solution, sampled every `interval` and smoothed.
pub fn error_over_time(
    cells: usize,
    degree: usize,
    kinds: &[SchemeKind],
    dt: f64,
    interval: f64,
    window: f64,
) -> Result<Vec<ErrorSeries>> {
    let spec = ProblemSpec::new(Problem::Sod, cells);
    let mut out = Vec::new();
    for &kind in kinds {
        let (disc, u0) = setup(&spec, degree, SchemeConfig::new(kind))?;
        let mut sys = SemiDiscrete::new(&disc);
        let (mut ts, mut errs) = (vec![0.0], vec![0.0]);
        let mut next = interval;
        let result = integrate(
            &mut sys,
            &u0,
            (0.0, spec.t_final),
            RkScheme::Rk4,
            StepController::Fixed { dt },
            IntegrateOptions::default(),
            |rec, u, _| {
                if rec.t >= next * (1.0 - 1e-9) || rec.t >= spec.t_final {
                    let e = l2_error(&disc, u, |x| {
                        let w = spec
                            .exact_primitive(x, rec.t)
                            .expect("sod has an exact solution");
                        spec.gas.prim_to_cons(&w)
                    });
                    ts.push(rec.t);
                    errs.push(e);
                    while next <= rec.t * (1.0 + 1e-9) {
                        next += interval;
                    }
                }
            },
        );
        let crashed = match result {
            Ok(_) => false,
            Err(e) if e.is_solver_failure() => true,
            Err(e) => return Err(e),
        };
        let smoothed = rolling_mean(&ts, &errs, window);
        out.push(ErrorSeries {
            scheme: kind,
            t: ts,
            error: errs,
            smoothed,
            crashed,
        });
    }
    Ok(out)
}

/// Knapsack solutions over a square grid of weight vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSurface {
    pub objective: Objective,
    pub axis: Vec<f64>,
    /// Row-major over `(a1, a2)`: index `i1 * n + i2`.
    pub theta: Vec<[f64; 2]>,
    pub infeasible: Vec<bool>,
}

impl SweepSurface {
    pub fn solver_name(&self) -> &'static str {
        match self.objective {
            Objective::L1 => "linear",
            Objective::L2 => "quadratic",
        }
    }

    fn at(&self, i1: usize, i2: usize) -> [f64; 2] {
        self.theta[i1 * self.axis.len() + i2]
    }

    /// Largest componentwise change between grid neighbours, optionally only across `a1 = a2`.
    fn max_jump_where(&self, keep: impl Fn(f64, f64, f64, f64) -> bool) -> f64 {
        let n = self.axis.len();
        let mut best: f64 = 0.0;
        for i1 in 0..n {
            for i2 in 0..n {
                let here = self.at(i1, i2);
                for (j1, j2) in [(i1 + 1, i2), (i1, i2 + 1)] {
                    if j1 >= n || j2 >= n {
                        continue;
                    }
                    if !keep(self.axis[i1], self.axis[i2], self.axis[j1], self.axis[j2]) {
                        continue;
                    }
                    let there = self.at(j1, j2);
                    best = best.max((here[0] - there[0]).abs()).max((here[1] - there[1]).abs());
                }
            }
        }
        best
    }

    pub fn max_adjacent_jump(&self) -> f64 {
        self.max_jump_where(|_, _, _, _| true)
    }

    /// Jumps between neighbours on opposite sides of the diagonal.
    pub fn max_diagonal_jump(&self) -> f64 {
        self.max_jump_where(|a1, a2, b1, b2| (a1 - a2).signum() * (b1 - b2).signum() <= 0.0)
    }

    /// Jumps between neighbours that are both feasible.
    pub fn max_feasible_jump(&self) -> f64 {
        let n = self.axis.len();
        let idx = |a: f64| self.axis.iter().position(|&x| x == a).unwrap_or(0);
        self.max_jump_where(|a1, a2, b1, b2| {
            !self.infeasible[idx(a1) * n + idx(a2)] && !self.infeasible[idx(b1) * n + idx(b2)]
        })
    }
}

/// Solve the two-variable knapsack over an `n x n` grid of `a` in `[lo, hi]^2`.
///
/// Infeasible instances take `theta = caps`, as in the right-hand side.
pub fn knapsack_sweep(
    objective: Objective,
    n: usize,
    (lo, hi): (f64, f64),
    b: f64,
    caps: [f64; 2],
) -> Result<SweepSurface> {
    if n < 2 || !(hi > lo) {
        return Err(Error::Config(format!("sweep needs n >= 2 and lo < hi, got {n}, [{lo}, {hi}]")));
    }
    let axis: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    let mut theta = Vec::with_capacity(n * n);
    let mut infeasible = Vec::with_capacity(n * n);
    for &a1 in &axis {
        for &a2 in &axis {
            let inst = KnapsackInstance::new(vec![a1, a2], b, caps.to_vec())?;
            let sol = match objective {
                Objective::L1 => solve_linear(&inst),
                Objective::L2 => solve_quadratic(&inst, DEFAULT_TOL),
            };
            match sol {
                Ok(s) => {
                    theta.push([s.theta[0], s.theta[1]]);
                    infeasible.push(false);
                }
                Err(Error::InfeasibleInstance { .. }) => {
                    theta.push(caps);
                    infeasible.push(true);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(SweepSurface {
        objective,
        axis,
        theta,
        infeasible,
    })
}

/// Write sweep surfaces as CSV with columns a1, a2, theta1, theta2, solver.
pub fn write_sweep_csv<W: std::io::Write>(surfaces: &[SweepSurface], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["a1", "a2", "theta1", "theta2", "solver"])?;
    for s in surfaces {
        let n = s.axis.len();
        for (k, th) in s.theta.iter().enumerate() {
            w.write_record([
                s.axis[k / n].to_string(),
                s.axis[k % n].to_string(),
                th[0].to_string(),
                th[1].to_string(),
                s.solver_name().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Reference operators of degree `N` as JSON.
pub fn dump_operators(degree: usize, dim: usize) -> Result<Value> {
    let ops = OperatorSet::new(degree, dim, &[2.0, 2.0])?;
    Ok(json!({
        "degree": degree,
        "dim": dim,
        "nodes": ops.rule.nodes,
        "weights": ops.rule.weights,
        "mass": ops.mass,
        "D": matrix_rows(&ops.d_ref),
        "Q": ops.q.iter().map(matrix_rows).collect::<Vec<_>>(),
        "Q_low": ops.q_low.iter().map(matrix_rows).collect::<Vec<_>>(),
        "E": matrix_rows(&ops.e),
        "B": ops.b,
        "Delta": matrix_rows(&ops.subcell.delta_matrix()),
        "R": matrix_rows(&ops.subcell.r_matrix()),
    }))
}

/// `count` logarithmically spaced values in `[lo, hi]`.
pub fn log_levels(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo * (hi / lo).powf(k as f64 / (count - 1) as f64))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContourSegment {
    pub level: f64,
    pub start: [f64; 2],
    pub end: [f64; 2],
}

/// Marching squares over the tensor node grid of each 2D element.
pub fn contour_segments(
    disc: &Discretization,
    field: &[f64],
    levels: &[f64],
) -> Result<Vec<ContourSegment>> {
    let ops = &disc.ops;
    if ops.dim != 2 {
        return Err(Error::Config("contours need a 2D run".into()));
    }
    let n1 = ops.n1;
    let mut out = Vec::new();
    for e in 0..disc.num_elements() {
        let val = |ix: usize, iy: usize| field[e * ops.n + iy * n1 + ix];
        let pos = |ix: usize, iy: usize| disc.mesh.node_coords(ops, e, iy * n1 + ix);
        for iy in 0..n1 - 1 {
            for ix in 0..n1 - 1 {
                let corners = [(ix, iy), (ix + 1, iy), (ix + 1, iy + 1), (ix, iy + 1)];
                for &level in levels {
                    let mut cuts = Vec::with_capacity(4);
                    for k in 0..4 {
                        let (a, b) = (corners[k], corners[(k + 1) % 4]);
                        let (fa, fb) = (val(a.0, a.1) - level, val(b.0, b.1) - level);
                        if (fa < 0.0) != (fb < 0.0) {
                            let s = fa / (fa - fb);
                            let (pa, pb) = (pos(a.0, a.1), pos(b.0, b.1));
                            cuts.push([pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])]);
                        }
                    }
                    for pair in cuts.chunks_exact(2) {
                        out.push(ContourSegment {
                            level,
                            start: pair[0],
                            end: pair[1],
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn write_contours_csv<W: std::io::Write>(segments: &[ContourSegment], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "segment", "x", "y"])?;
    for (k, s) in segments.iter().enumerate() {
        for p in [s.start, s.end] {
            w.write_record([
                s.level.to_string(),
                k.to_string(),
                p[0].to_string(),
                p[1].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
