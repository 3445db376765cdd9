//! Single-run driver: discretize, integrate, record and write outputs.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::problems::{Problem, ProblemSpec};
use crate::error::{Error, Result};
use crate::euler::{ConsState, NVARS};
use crate::rhs::{DiagnosticSummary, Discretization, SchemeConfig, SchemeKind, SemiDiscrete};
use crate::timestep::{
    effective_cfl, integrate, IntegrateOptions, IntegrationStats, RkScheme, StepController,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub problem: Problem,
    pub degree: usize,
    pub cells: usize,
    pub scheme: SchemeConfig,
    pub stepper: RkScheme,
    pub controller: StepController,
    pub gamma: f64,
    /// Overrides the problem's final time when set.
    pub t_final: Option<f64>,
    /// Number of evenly spaced snapshots after the initial one.
    pub snapshots: usize,
    pub max_steps: usize,
}

impl RunConfig {
    pub fn new(problem: Problem, degree: usize, cells: usize, kind: SchemeKind) -> Self {
        RunConfig {
            problem,
            degree,
            cells,
            scheme: SchemeConfig::new(kind),
            stepper: RkScheme::Rk4,
            controller: StepController::Adaptive {
                abstol: 1e-6,
                reltol: 1e-4,
            },
            gamma: 1.4,
            t_final: None,
            snapshots: 1,
            max_steps: crate::timestep::MAX_STEPS,
        }
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        ProblemSpec::new(self.problem, self.cells).with_gamma(self.gamma)
    }

    pub fn final_time(&self) -> Result<f64> {
        Ok(self.t_final.unwrap_or(self.spec()?.t_final))
    }
}

/// Discretization and initial state for a problem; Dirichlet data frozen to the initial trace.
pub fn setup(spec: &ProblemSpec, degree: usize, scheme: SchemeConfig) -> Result<(Discretization, Vec<f64>)> {
    let mut disc = Discretization::new(spec.mesh()?, degree, spec.gas, scheme)?;
    let u0 = disc.project(|x| spec.initial_state(x));
    disc.node_states(&u0)?;
    disc.set_boundary_data(&u0)?;
    Ok((disc, u0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub state: Vec<f64>,
    /// Mean effective blending per element at the last evaluation before the snapshot.
    pub theta_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesEntry {
    pub t: f64,
    pub dt: f64,
    pub accepted: bool,
    pub error: f64,
    pub cfl: f64,
    pub max_cei_residual: f64,
    pub mean_theta: f64,
    pub max_theta: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub version: String,
    pub snapshots: Vec<Snapshot>,
    pub series: Vec<SeriesEntry>,
    pub stats: IntegrationStats,
    pub diagnostics: DiagnosticSummary,
    pub node_coords: Vec<[f64; 2]>,
    pub nodes_per_element: usize,
    pub dim: usize,
}

/// `sqrt(sum_vars sum_nodes M_ii (u - w)^2)` with the LGL mass matrix.
pub fn l2_difference(disc: &Discretization, u: &[f64], w: &[f64]) -> f64 {
    let n = disc.ops.n;
    u.chunks_exact(NVARS)
        .zip(w.chunks_exact(NVARS))
        .enumerate()
        .map(|(idx, (a, b))| {
            let m = disc.ops.mass[idx % n];
            m * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// L2 error against a pointwise exact solution.
pub fn l2_error<F: Fn([f64; 2]) -> ConsState>(disc: &Discretization, u: &[f64], exact: F) -> f64 {
    let w = disc.project(exact);
    l2_difference(disc, u, &w)
}

/// `sum_i M_ii u_i` per conserved variable.
pub fn totals(disc: &Discretization, u: &[f64]) -> [f64; NVARS] {
    let n = disc.ops.n;
    let mut t = [0.0; NVARS];
    for (idx, c) in u.chunks_exact(NVARS).enumerate() {
        let m = disc.ops.mass[idx % n];
        for k in 0..NVARS {
            t[k] += m * c[k];
        }
    }
    t
}

/// Global entropy `sum_i M_ii eta(u_i)`.
pub fn total_entropy(disc: &Discretization, u: &[f64]) -> Result<f64> {
    let n = disc.ops.n;
    disc.nodes(u)
        .enumerate()
        .map(|(idx, c)| Ok(disc.ops.mass[idx % n] * disc.gas.entropy(&c)?))
        .sum()
}

/// Per-node LGL weights used by the effective CFL (smallest 1D weight in 2D).
pub fn cfl_weights(disc: &Discretization) -> Vec<f64> {
    let ops = &disc.ops;
    let w = &ops.rule.weights;
    (0..ops.n)
        .map(|i| match ops.dim {
            1 => w[i],
            _ => w[i % ops.n1].min(w[i / ops.n1]),
        })
        .collect()
}

pub fn run(config: &RunConfig) -> Result<RunRecord> {
    let spec = config.spec()?;
    let t_end = config.final_time()?;
    let (disc, u0) = setup(&spec, config.degree, config.scheme)?;
    let weights = cfl_weights(&disc);
    let dx = disc.mesh.dx();
    let mut sys = SemiDiscrete::new(&disc);
    let n_snap = config.snapshots.max(1);
    let mut snapshots = vec![Snapshot {
        t: 0.0,
        state: u0.clone(),
        theta_mean: vec![0.0; disc.num_elements()],
    }];
    let mut series = Vec::new();
    let mut next_snap = 1;
    let mut steps = 0usize;
    let mut observe_err: Option<Error> = None;
    let result = integrate(
        &mut sys,
        &u0,
        (0.0, t_end),
        config.stepper,
        config.controller,
        IntegrateOptions {
            max_steps: config.max_steps,
        },
        |rec, u, sys: &mut SemiDiscrete| {
            steps += 1;
            let window = sys.take_window();
            if !rec.accepted {
                return;
            }
            let cfl = effective_cfl(sys.disc.nodes(u), &weights, rec.dt, dx, &sys.disc.gas);
            let entropy = total_entropy(sys.disc, u);
            let (cfl, entropy) = match (cfl, entropy) {
                (Ok(c), Ok(e)) => (c, e),
                (Err(e), _) | (_, Err(e)) => {
                    observe_err.get_or_insert(e);
                    return;
                }
            };
            series.push(SeriesEntry {
                t: rec.t,
                dt: rec.dt,
                accepted: rec.accepted,
                error: rec.error,
                cfl,
                max_cei_residual: window.max_cei_residual,
                mean_theta: window.mean_theta,
                max_theta: window.max_theta,
                entropy,
            });
            let due = next_snap as f64 * t_end / n_snap as f64;
            if rec.t >= due * (1.0 - 1e-12) || rec.t >= t_end {
                snapshots.push(Snapshot {
                    t: rec.t,
                    state: u.to_vec(),
                    theta_mean: sys
                        .last
                        .as_ref()
                        .map(|d| d.theta_mean.clone())
                        .unwrap_or_default(),
                });
                while next_snap as f64 * t_end / n_snap as f64 <= rec.t * (1.0 + 1e-12) {
                    next_snap += 1;
                }
            }
        },
    );
    let (_, stats) = result.map_err(|e| Error::AtStep {
        step: steps,
        t: series.last().map_or(0.0, |s| s.t),
        source: Box::new(e),
    })?;
    if let Some(e) = observe_err {
        return Err(e);
    }
    Ok(RunRecord {
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        snapshots,
        series,
        stats,
        diagnostics: sys.summary,
        node_coords: disc.mesh.all_node_coords(&disc.ops),
        nodes_per_element: disc.ops.n,
        dim: disc.mesh.dim,
    })
}

/// Write one snapshot as CSV: element, node, x, (y), rho, mom1, (mom2), E, p, theta_mean.
pub fn write_snapshot_csv<W: std::io::Write>(
    record: &RunRecord,
    snap: &Snapshot,
    gamma: f64,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let two = record.dim == 2;
    let mut header = vec!["element", "node", "x"];
    if two {
        header.push("y");
    }
    header.extend(["rho", "mom1"]);
    if two {
        header.push("mom2");
    }
    header.extend(["E", "p", "theta_mean"]);
    w.write_record(&header)?;
    let n = record.nodes_per_element;
    for (idx, c) in snap.state.chunks_exact(NVARS).enumerate() {
        let (e, i) = (idx / n, idx % n);
        let u = ConsState([c[0], c[1], c[2], c[3]]);
        let p = (gamma - 1.0) * (u.energy() - 0.5 * (c[1] * c[1] + c[2] * c[2]) / c[0]);
        let x = record.node_coords[idx];
        let mut row = vec![e.to_string(), i.to_string(), x[0].to_string()];
        if two {
            row.push(x[1].to_string());
        }
        row.extend([c[0].to_string(), c[1].to_string()]);
        if two {
            row.push(c[2].to_string());
        }
        let theta = snap.theta_mean.get(e).copied().unwrap_or(0.0);
        row.extend([c[3].to_string(), p.to_string(), theta.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_series_csv<W: std::io::Write>(series: &[SeriesEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in series {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a RunConfig,
    version: &'a str,
    stats: &'a IntegrationStats,
    diagnostics: &'a DiagnosticSummary,
    final_time: f64,
    snapshot_times: Vec<f64>,
}

/// Write `snapshot_XXXX.csv`, `series.csv` and `summary.json` into `dir`.
pub fn write_run(record: &RunRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, snap) in record.snapshots.iter().enumerate() {
        let f = fs::File::create(dir.join(format!("snapshot_{k:04}.csv")))?;
        write_snapshot_csv(record, snap, record.config.gamma, f)?;
    }
    write_series_csv(&record.series, fs::File::create(dir.join("series.csv"))?)?;
    let summary = Summary {
        config: &record.config,
        version: &record.version,
        stats: &record.stats,
        diagnostics: &record.diagnostics,
        final_time: record.snapshots.last().map_or(0.0, |s| s.t),
        snapshot_times: record.snapshots.iter().map(|s| s.t).collect(),
    };
    let f = fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(f, &summary)?;
    Ok(())
}
