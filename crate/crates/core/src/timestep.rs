//! Explicit Runge-Kutta integration with fixed or step-doubling adaptive steps.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euler::{ConsState, GasModel, NodeState};

pub const MAX_STEPS: usize = 1_000_000;
const MAX_CONSECUTIVE_REJECTIONS: usize = 40;
const SAFETY: f64 = 0.9;
const GROWTH_CLAMP: (f64, f64) = (0.2, 5.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RkScheme {
    Rk4,
    Ssprk43,
}

impl RkScheme {
    pub fn order(self) -> u32 {
        match self {
            RkScheme::Rk4 => 4,
            RkScheme::Ssprk43 => 3,
        }
    }

    pub fn stages(self) -> usize {
        4
    }

    pub fn is_ssp(self) -> bool {
        matches!(self, RkScheme::Ssprk43)
    }

    pub fn name(self) -> &'static str {
        match self {
            RkScheme::Rk4 => "rk4",
            RkScheme::Ssprk43 => "ssprk43",
        }
    }
}

impl fmt::Display for RkScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RkScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rk4" => Ok(RkScheme::Rk4),
            "ssprk43" => Ok(RkScheme::Ssprk43),
            other => Err(Error::Config(format!("unknown time stepper '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepController {
    Fixed { dt: f64 },
    Adaptive { abstol: f64, reltol: f64 },
}

impl StepController {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepController::Fixed { dt } if dt > 0.0 => Ok(()),
            StepController::Adaptive { abstol, reltol } if abstol >= 0.0 && reltol >= 0.0 && abstol + reltol > 0.0 => {
                Ok(())
            }
            other => Err(Error::Config(format!("invalid step controller {other:?}"))),
        }
    }
}

/// A semi-discrete system `du/dt = L(u)`.
///
/// `dt_stage` is the forward-Euler step size the stage corresponds to.
pub trait OdeSystem {
    fn rhs(&mut self, u: &[f64], dt_stage: f64, du: &mut [f64]) -> Result<()>;

    /// Reject states the right-hand side cannot be evaluated on.
    fn check(&self, _u: &[f64]) -> Result<()> {
        Ok(())
    }

    /// Components that take part in the error norm; padding slots can opt out.
    fn is_active(&self, _index: usize) -> bool {
        true
    }
}

/// Wraps a closure as an [`OdeSystem`].
pub struct FnSystem<F>(pub F);

impl<F> OdeSystem for FnSystem<F>
where
    F: FnMut(&[f64], f64, &mut [f64]) -> Result<()>,
{
    fn rhs(&mut self, u: &[f64], dt_stage: f64, du: &mut [f64]) -> Result<()> {
        (self.0)(u, dt_stage, du)
    }
}

fn axpy(out: &mut [f64], x: &[f64], a: f64, y: &[f64]) {
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + a * yi;
    }
}

/// One explicit step of size `dt`.
pub fn step<S: OdeSystem + ?Sized>(sys: &mut S, u: &[f64], dt: f64, scheme: RkScheme) -> Result<Vec<f64>> {
    let n = u.len();
    let mut k = vec![0.0; n];
    let mut out = vec![0.0; n];
    match scheme {
        RkScheme::Rk4 => {
            let mut stage = vec![0.0; n];
            sys.rhs(u, dt, &mut k)?;
            axpy(&mut out, u, dt / 6.0, &k);
            axpy(&mut stage, u, 0.5 * dt, &k);
            sys.rhs(&stage, dt, &mut k)?;
            out.iter_mut().zip(&k).for_each(|(o, ki)| *o += dt / 3.0 * ki);
            axpy(&mut stage, u, 0.5 * dt, &k);
            sys.rhs(&stage, dt, &mut k)?;
            out.iter_mut().zip(&k).for_each(|(o, ki)| *o += dt / 3.0 * ki);
            axpy(&mut stage, u, dt, &k);
            sys.rhs(&stage, dt, &mut k)?;
            out.iter_mut().zip(&k).for_each(|(o, ki)| *o += dt / 6.0 * ki);
        }
        RkScheme::Ssprk43 => {
            let h = 0.5 * dt;
            let mut u1 = vec![0.0; n];
            let mut u2 = vec![0.0; n];
            sys.rhs(u, h, &mut k)?;
            axpy(&mut u1, u, h, &k);
            sys.check(&u1)?;
            sys.rhs(&u1, h, &mut k)?;
            axpy(&mut u2, &u1, h, &k);
            sys.check(&u2)?;
            sys.rhs(&u2, h, &mut k)?;
            for i in 0..n {
                u1[i] = 2.0 / 3.0 * u[i] + 1.0 / 3.0 * (u2[i] + h * k[i]);
            }
            sys.check(&u1)?;
            sys.rhs(&u1, h, &mut k)?;
            axpy(&mut out, &u1, h, &k);
        }
    }
    sys.check(&out)?;
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IntegrationStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub dt_history: Vec<f64>,
    pub wall_time: f64,
}

impl IntegrationStats {
    pub fn total_steps(&self) -> usize {
        self.accepted_steps + self.rejected_steps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    /// Time after the step (or at the attempted step start when rejected).
    pub t: f64,
    pub dt: f64,
    pub accepted: bool,
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions { max_steps: MAX_STEPS }
    }
}

/// Weighted RMS norm `sqrt(mean((e_i / (abstol + reltol max(|u_i|, |w_i|)))^2))`.
pub fn error_norm(e: &[f64], u: &[f64], w: &[f64], abstol: f64, reltol: f64) -> f64 {
    error_norm_masked(e, u, w, abstol, reltol, |_| true)
}

/// [`error_norm`] restricted to the indices accepted by `active`.
pub fn error_norm_masked<F: Fn(usize) -> bool>(
    e: &[f64],
    u: &[f64],
    w: &[f64],
    abstol: f64,
    reltol: f64,
    active: F,
) -> f64 {
    let (sum, count) = e
        .iter()
        .zip(u.iter().zip(w))
        .enumerate()
        .filter(|(i, _)| active(*i))
        .fold((0.0, 0usize), |(s, c), (_, (ei, (ui, wi)))| {
            let sc = abstol + reltol * ui.abs().max(wi.abs());
            (s + (ei / sc).powi(2), c + 1)
        });
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Starting step from the usual two-evaluation heuristic.
fn initial_dt<S: OdeSystem + ?Sized>(
    sys: &mut S,
    u0: &[f64],
    order: u32,
    abstol: f64,
    reltol: f64,
    span: f64,
) -> Result<f64> {
    let n = u0.len();
    let active: Vec<bool> = (0..n).map(|i| sys.is_active(i)).collect();
    let weighted = |x: &[f64]| error_norm_masked(x, u0, u0, abstol, reltol, |i| active[i]);
    let mut f0 = vec![0.0; n];
    let guess = (1e-6 * span).max(f64::MIN_POSITIVE);
    sys.rhs(u0, guess, &mut f0)?;
    let d0 = weighted(u0);
    let d1 = weighted(&f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let mut u1 = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    let mut tries = 0;
    loop {
        axpy(&mut u1, u0, h0, &f0);
        match sys.check(&u1).and_then(|_| sys.rhs(&u1, h0, &mut f1)) {
            Ok(()) => break,
            Err(e) if e.is_solver_failure() && tries < MAX_CONSECUTIVE_REJECTIONS => {
                h0 *= 0.1;
                tries += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let diff: Vec<f64> = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
    let d2 = weighted(&diff) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (1e-6f64).max(h0 * 1e-3)
    } else {
        (0.01 / dmax).powf(1.0 / (order as f64 + 1.0))
    };
    Ok((100.0 * h0).min(h1).min(span))
}

/// Integrate from `t0` to `t_end`. The observer sees every attempted step and the
/// state after it (the unchanged state for rejected steps), plus the system itself.
pub fn integrate<S, O>(
    sys: &mut S,
    u0: &[f64],
    t_span: (f64, f64),
    scheme: RkScheme,
    controller: StepController,
    options: IntegrateOptions,
    mut observer: O,
) -> Result<(Vec<f64>, IntegrationStats)>
where
    S: OdeSystem + ?Sized,
    O: FnMut(&StepRecord, &[f64], &mut S),
{
    controller.validate()?;
    let (t0, t_end) = t_span;
    if !(t_end > t0) {
        return Err(Error::Config(format!("empty time span [{t0}, {t_end}]")));
    }
    let started = Instant::now();
    let mut stats = IntegrationStats::default();
    let mut u = u0.to_vec();
    let mut t = t0;
    match controller {
        StepController::Fixed { dt } => {
            while t < t_end {
                if stats.total_steps() >= options.max_steps {
                    return Err(Error::MaxStepsExceeded(options.max_steps));
                }
                let remaining = t_end - t;
                let last = remaining <= dt * (1.0 + 1e-9);
                let h = if last { remaining } else { dt };
                u = step(sys, &u, h, scheme)?;
                t = if last { t_end } else { t + h };
                stats.accepted_steps += 1;
                stats.dt_history.push(h);
                observer(&StepRecord { t, dt: h, accepted: true, error: 0.0 }, &u, sys);
            }
        }
        StepController::Adaptive { abstol, reltol } => {
            let order = scheme.order();
            let mut h = initial_dt(sys, &u, order, abstol, reltol, t_end - t0)?;
            let mut consecutive = 0;
            while t < t_end {
                if stats.total_steps() >= options.max_steps {
                    return Err(Error::MaxStepsExceeded(options.max_steps));
                }
                let remaining = t_end - t;
                let last = remaining <= h * (1.0 + 1e-9);
                let dt = if last { remaining } else { h };
                let attempt = step(sys, &u, dt, scheme).and_then(|full| {
                    let half = step(sys, &u, 0.5 * dt, scheme)?;
                    let two = step(sys, &half, 0.5 * dt, scheme)?;
                    Ok((full, two))
                });
                match attempt {
                    Ok((full, two)) => {
                        let e: Vec<f64> = two.iter().zip(&full).map(|(a, b)| a - b).collect();
                        let err = error_norm_masked(&e, &u, &two, abstol, reltol, |i| sys.is_active(i));
                        let factor = if err == 0.0 {
                            GROWTH_CLAMP.1
                        } else {
                            (SAFETY * err.powf(-1.0 / (order as f64 + 1.0)))
                                .clamp(GROWTH_CLAMP.0, GROWTH_CLAMP.1)
                        };
                        if err <= 1.0 {
                            u = two;
                            t = if last { t_end } else { t + dt };
                            stats.accepted_steps += 1;
                            stats.dt_history.push(dt);
                            consecutive = 0;
                            observer(&StepRecord { t, dt, accepted: true, error: err }, &u, sys);
                        } else {
                            stats.rejected_steps += 1;
                            consecutive += 1;
                            observer(&StepRecord { t, dt, accepted: false, error: err }, &u, sys);
                        }
                        h = dt * factor;
                    }
                    Err(e) if e.is_solver_failure() => {
                        stats.rejected_steps += 1;
                        consecutive += 1;
                        observer(
                            &StepRecord { t, dt, accepted: false, error: f64::INFINITY },
                            &u,
                            sys,
                        );
                        h = 0.5 * dt;
                    }
                    Err(e) => return Err(e),
                }
                if consecutive > MAX_CONSECUTIVE_REJECTIONS {
                    return Err(Error::StepRejected(consecutive, t));
                }
            }
        }
    }
    stats.wall_time = started.elapsed().as_secs_f64();
    Ok((u, stats))
}

/// `4 (dt / dx) max_i (|v_i| + c_i) / w_i` over nodes with LGL weights `w_i`.
pub fn effective_cfl<I>(states: I, weights: &[f64], dt: f64, dx: f64, gas: &GasModel) -> Result<f64>
where
    I: IntoIterator<Item = ConsState>,
{
    let mut worst: f64 = 0.0;
    for (idx, u) in states.into_iter().enumerate() {
        let s = NodeState::new(u, gas)?;
        let lambda = s.speed() + s.c;
        worst = worst.max(lambda / weights[idx % weights.len()]);
    }
    Ok(4.0 * dt / dx * worst)
}
