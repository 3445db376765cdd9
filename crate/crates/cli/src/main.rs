//! `kdg` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use kdg::euler::FluxKind;
use kdg::experiments::problems::{Problem, ProblemSpec};
use kdg::experiments::run::{run, setup, write_run, RunConfig};
use kdg::experiments::studies::{
    adaptive_step_study, contour_segments, convergence_study, dump_operators, error_over_time,
    knapsack_sweep, log_levels, spectra_study, time_convergence_study, write_contours_csv,
    write_sweep_csv,
};
use kdg::knapsack::Objective;
use kdg::rhs::{Granularity, SchemeConfig, SchemeKind};
use kdg::timestep::{RkScheme, StepController, MAX_STEPS};
use kdg::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "kdg", version, about = "Knapsack-limited DG solver for the Euler equations")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one problem and write snapshots, series and summary.
    Run(Opts),
    /// Density-wave errors and rates over N and M.
    Convergence(Opts),
    /// Fixed-step self-convergence in time.
    TimeConvergence(Opts),
    /// Adaptive step counts per scheme, degree and mesh.
    AdaptiveSteps(Opts),
    /// Spectral abscissa of the linearized right-hand side at t = 0.
    Spectra(Opts),
    /// Sod L2 error against the exact solution over time.
    ErrorOverTime(Opts),
    /// Two-variable knapsack solution surfaces.
    KnapsackSweep(Opts),
    /// Reference operators as JSON.
    DumpOperators(Opts),
}

#[derive(Args, Debug, Clone)]
struct Opts {
    #[arg(long)]
    problem: Option<Problem>,
    /// Scheme, or comma-separated list for studies (dgsem, esfd, low, lk, qk).
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    scheme: Vec<SchemeKind>,
    /// Polynomial degree(s).
    #[arg(long = "N", value_delimiter = ',', action = ArgAction::Set)]
    degree: Vec<usize>,
    /// Elements per axis.
    #[arg(long = "M", value_delimiter = ',', action = ArgAction::Set)]
    cells: Vec<usize>,
    /// Fixed step(s); omit for adaptive stepping.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    dt: Vec<f64>,
    #[arg(long)]
    dt_ref: Option<f64>,
    #[arg(long)]
    abstol: Option<f64>,
    #[arg(long)]
    reltol: Option<f64>,
    #[arg(long)]
    stepper: Option<RkScheme>,
    /// Relative positivity parameter; enables positivity limiting.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    granularity: Option<Granularity>,
    #[arg(long)]
    surface_flux: Option<FluxKind>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    snapshots: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Rolling-mean width for error-over-time.
    #[arg(long)]
    window: Option<f64>,
    /// Sampling interval for error-over-time.
    #[arg(long)]
    interval: Option<f64>,
    /// Grid points per axis for knapsack-sweep.
    #[arg(long)]
    grid: Option<usize>,
    /// Right-hand side of the knapsack constraint for knapsack-sweep.
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `key = value` file; its entries override command-line flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Opts {
    fn schemes(&self, default: &[SchemeKind]) -> Vec<SchemeKind> {
        if self.scheme.is_empty() {
            default.to_vec()
        } else {
            self.scheme.clone()
        }
    }

    fn degrees(&self, default: &[usize]) -> Vec<usize> {
        if self.degree.is_empty() {
            default.to_vec()
        } else {
            self.degree.clone()
        }
    }

    fn meshes(&self, default: &[usize]) -> Vec<usize> {
        if self.cells.is_empty() {
            default.to_vec()
        } else {
            self.cells.clone()
        }
    }

    fn scheme_config(&self, kind: SchemeKind) -> Result<SchemeConfig> {
        let mut c = SchemeConfig::new(kind);
        if let Some(f) = self.surface_flux {
            c = c.with_surface_flux(f);
        }
        if let Some(alpha) = self.alpha {
            c = c.with_positivity(alpha, self.granularity.unwrap_or(Granularity::Nodewise));
        } else if self.granularity.is_some() {
            return Err(Error::Config("--granularity needs --alpha".into()));
        }
        c.validate()?;
        Ok(c)
    }

    fn spec(&self, default: Problem, cells: usize) -> Result<ProblemSpec> {
        let mut spec = ProblemSpec::new(self.problem.unwrap_or(default), cells);
        if let Some(g) = self.gamma {
            spec = spec.with_gamma(g)?;
        }
        if let Some(t) = self.t_final {
            spec.t_final = t;
        }
        Ok(spec)
    }

    fn tolerances(&self) -> (f64, f64) {
        (self.abstol.unwrap_or(1e-6), self.reltol.unwrap_or(1e-4))
    }

    fn single<T: Copy>(list: &[T], default: T, what: &str) -> Result<T> {
        match list {
            [] => Ok(default),
            [x] => Ok(*x),
            _ => Err(Error::Config(format!("`run` takes a single {what}"))),
        }
    }
}

/// Parse `key = value` lines into `--key=value` arguments.
fn config_args(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut args = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}:{}: expected `key = value`", path.display(), k + 1))
        })?;
        let key = key.trim();
        if key == "config" {
            return Err(Error::Config("nested config files are not supported".into()));
        }
        args.push(format!("--{key}={}", value.trim()));
    }
    Ok(args)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_writer(fs::File::create(path)?))
}

fn cmd_run(o: &Opts) -> Result<()> {
    let kind = Opts::single(&o.scheme, SchemeKind::Qk, "scheme")?;
    let degree = Opts::single(&o.degree, 3, "degree")?;
    let cells = Opts::single(&o.cells, 64, "mesh size")?;
    let problem = o
        .problem
        .ok_or_else(|| Error::Config("`run` needs --problem".into()))?;
    let mut config = RunConfig::new(problem, degree, cells, kind);
    config.scheme = o.scheme_config(kind)?;
    config.stepper = o.stepper.unwrap_or(RkScheme::Rk4);
    config.controller = match o.dt.as_slice() {
        [] => {
            let (abstol, reltol) = o.tolerances();
            StepController::Adaptive { abstol, reltol }
        }
        [dt] => StepController::Fixed { dt: *dt },
        _ => return Err(Error::Config("`run` takes a single --dt".into())),
    };
    config.controller.validate()?;
    config.gamma = o.gamma.unwrap_or(1.4);
    config.t_final = o.t_final;
    config.snapshots = o.snapshots.unwrap_or(1);
    config.max_steps = o.max_steps.unwrap_or(MAX_STEPS);
    let record = run(&config)?;
    write_run(&record, &o.out)?;
    if record.dim == 2 {
        let spec = config.spec()?;
        let (disc, _) = setup(&spec, degree, config.scheme)?;
        let last = record.snapshots.last().expect("initial snapshot is always present");
        let rho: Vec<f64> = last.state.chunks_exact(4).map(|c| c[0]).collect();
        let segments = contour_segments(&disc, &rho, &log_levels(0.01, 6.0, 10))?;
        write_contours_csv(&segments, fs::File::create(o.out.join("contours.csv"))?)?;
    }
    println!(
        "{} {} N={} M={}: t = {}, {} accepted / {} rejected steps, max CEI residual {:e}",
        problem,
        kind,
        degree,
        cells,
        record.snapshots.last().map_or(0.0, |s| s.t),
        record.stats.accepted_steps,
        record.stats.rejected_steps,
        record.diagnostics.max_cei_residual,
    );
    Ok(())
}

fn cmd_convergence(o: &Opts) -> Result<()> {
    let kind = Opts::single(&o.scheme, SchemeKind::Qk, "scheme")?;
    let dt = Opts::single(&o.dt, 1e-4, "dt")?;
    let rows = convergence_study(kind, &o.degrees(&[1, 2, 3, 4]), &o.meshes(&[2, 4, 8, 16, 32]), dt)?;
    fs::create_dir_all(&o.out)?;
    let mut w = csv_writer(&o.out.join("convergence.csv"))?;
    w.write_record(["scheme", "N", "M", "error", "rate"])?;
    for r in &rows {
        let rate = r.rate.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([kind.to_string(), r.degree.to_string(), r.cells.to_string(), r.error.to_string(), rate.clone()])?;
        println!("N={} M={:>4} error {:.3e} rate {}", r.degree, r.cells, r.error, rate);
    }
    w.flush()?;
    Ok(())
}

fn cmd_time_convergence(o: &Opts) -> Result<()> {
    let degree = Opts::single(&o.degree, 3, "degree")?;
    let cells = Opts::single(&o.cells, 64, "mesh size")?;
    let spec = o.spec(Problem::ModifiedSod, cells)?;
    let dts = if o.dt.is_empty() {
        vec![1e-3, 5e-4, 2.5e-4, 1e-4, 5e-5]
    } else {
        o.dt.clone()
    };
    let kinds = o.schemes(&[SchemeKind::Lk, SchemeKind::Qk, SchemeKind::Esfd]);
    let rows = time_convergence_study(
        &spec,
        degree,
        &kinds,
        &dts,
        o.dt_ref.unwrap_or(1e-5),
        o.stepper.unwrap_or(RkScheme::Rk4),
    )?;
    fs::create_dir_all(&o.out)?;
    let mut w = csv_writer(&o.out.join("time_convergence.csv"))?;
    w.write_record(["scheme", "dt", "error"])?;
    for r in &rows {
        for (dt, e) in &r.points {
            w.write_record([r.scheme.to_string(), dt.to_string(), e.map(|x| x.to_string()).unwrap_or_default()])?;
        }
        match r.slope {
            Some(s) => println!("{}: slope {s:.3}", r.scheme),
            None => println!("{}: no slope (too few completed runs)", r.scheme),
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_adaptive(o: &Opts) -> Result<()> {
    let degrees = o.degrees(&[3, 7]);
    let cells = o.meshes(&[32, 64]);
    let meshes: Vec<(usize, usize)> = degrees
        .iter()
        .flat_map(|&n| cells.iter().map(move |&m| (n, m)))
        .collect();
    let kinds = o.schemes(&[SchemeKind::Lk, SchemeKind::Qk, SchemeKind::Esfd]);
    let rows = adaptive_step_study(o.problem.unwrap_or(Problem::ModifiedSod), &kinds, &[o.tolerances()], &meshes)?;
    fs::create_dir_all(&o.out)?;
    let mut w = csv_writer(&o.out.join("adaptive_steps.csv"))?;
    w.write_record(["scheme", "N", "M", "abstol", "reltol", "steps"])?;
    for r in &rows {
        w.write_record([
            r.scheme.to_string(),
            r.degree.to_string(),
            r.cells.to_string(),
            r.abstol.to_string(),
            r.reltol.to_string(),
            r.steps.to_string(),
        ])?;
        println!("{} N={} M={}: {}", r.scheme, r.degree, r.cells, r.steps);
    }
    w.flush()?;
    Ok(())
}

fn cmd_spectra(o: &Opts) -> Result<()> {
    let degree = Opts::single(&o.degree, 3, "degree")?;
    let cells = Opts::single(&o.cells, 16, "mesh size")?;
    let spec = o.spec(Problem::ModifiedSod, cells)?;
    let kinds = o.schemes(&[SchemeKind::Lk, SchemeKind::Qk, SchemeKind::Esfd, SchemeKind::Dgsem]);
    let rows = spectra_study(&spec, degree, &kinds)?;
    fs::create_dir_all(&o.out)?;
    let mut w = csv_writer(&o.out.join("spectra.csv"))?;
    w.write_record(["scheme", "N", "M", "max_real"])?;
    for r in &rows {
        w.write_record([r.scheme.to_string(), r.degree.to_string(), r.cells.to_string(), r.max_real.to_string()])?;
        println!("{}: max Re = {:e}", r.scheme, r.max_real);
    }
    w.flush()?;
    Ok(())
}

fn cmd_error_over_time(o: &Opts) -> Result<()> {
    let degree = Opts::single(&o.degree, 3, "degree")?;
    let cells = Opts::single(&o.cells, 64, "mesh size")?;
    let dt = Opts::single(&o.dt, 1e-5, "dt")?;
    let kinds = o.schemes(&[SchemeKind::Lk, SchemeKind::Qk, SchemeKind::Esfd, SchemeKind::Dgsem]);
    let series = error_over_time(
        cells,
        degree,
        &kinds,
        dt,
        o.interval.unwrap_or(1e-3),
        o.window.unwrap_or(0.01024),
    )?;
    fs::create_dir_all(&o.out)?;
    let mut w = csv_writer(&o.out.join("error_over_time.csv"))?;
    w.write_record(["scheme", "t", "error", "rolling_mean", "crashed"])?;
    for s in &series {
        for k in 0..s.t.len() {
            w.write_record([
                s.scheme.to_string(),
                s.t[k].to_string(),
                s.error[k].to_string(),
                s.smoothed[k].to_string(),
                s.crashed.to_string(),
            ])?;
        }
        let last = s.t.last().copied().unwrap_or(0.0);
        println!("{}: {} samples to t = {last}{}", s.scheme, s.t.len(), if s.crashed { " (crashed)" } else { "" });
    }
    w.flush()?;
    Ok(())
}

fn cmd_sweep(o: &Opts) -> Result<()> {
    let n = o.grid.unwrap_or(100);
    let b = o.b.unwrap_or(0.8);
    let surfaces = [Objective::L1, Objective::L2]
        .into_iter()
        .map(|obj| knapsack_sweep(obj, n, (0.1, 2.0), b, [1.0, 1.0]))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&o.out)?;
    write_sweep_csv(&surfaces, fs::File::create(o.out.join("knapsack_sweep.csv"))?)?;
    for s in &surfaces {
        println!(
            "{}: max adjacent jump {:.4}, across a1 = a2 {:.4}",
            s.solver_name(),
            s.max_adjacent_jump(),
            s.max_diagonal_jump()
        );
    }
    Ok(())
}

fn cmd_dump(o: &Opts) -> Result<()> {
    let degree = Opts::single(&o.degree, 3, "degree")?;
    let value = dump_operators(degree, o.dim.unwrap_or(1))?;
    fs::create_dir_all(&o.out)?;
    let path = o.out.join(format!("operators_N{degree}.json"));
    serde_json::to_writer_pretty(fs::File::create(&path)?, &value)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn opts(cmd: &Command) -> &Opts {
    match cmd {
        Command::Run(o)
        | Command::Convergence(o)
        | Command::TimeConvergence(o)
        | Command::AdaptiveSteps(o)
        | Command::Spectra(o)
        | Command::ErrorOverTime(o)
        | Command::KnapsackSweep(o)
        | Command::DumpOperators(o) => o,
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let o = opts(&cli.command);
    match &cli.command {
        Command::Run(_) => cmd_run(o),
        Command::Convergence(_) => cmd_convergence(o),
        Command::TimeConvergence(_) => cmd_time_convergence(o),
        Command::AdaptiveSteps(_) => cmd_adaptive(o),
        Command::Spectra(_) => cmd_spectra(o),
        Command::ErrorOverTime(_) => cmd_error_over_time(o),
        Command::KnapsackSweep(_) => cmd_sweep(o),
        Command::DumpOperators(_) => cmd_dump(o),
    }
}

fn parse(argv: Vec<String>) -> std::result::Result<Cli, ExitCode> {
    let fail = |e: clap::Error| {
        let _ = e.print();
        if e.use_stderr() {
            ExitCode::from(2)
        } else {
            ExitCode::SUCCESS
        }
    };
    let cli = Cli::try_parse_from(&argv).map_err(fail)?;
    let Some(path) = opts(&cli.command).config.clone() else {
        return Ok(cli);
    };
    let extra = config_args(&path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })?;
    Cli::try_parse_from(argv.into_iter().chain(extra)).map_err(fail)
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args().collect()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_solver_failure() {
                ExitCode::from(3)
            } else if matches!(e, Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Eigensolver(_)) {
                ExitCode::FAILURE
            } else {
                ExitCode::from(2)
            }
        }
    }
}
