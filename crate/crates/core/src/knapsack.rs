//! Continuous knapsack solvers for the blending coefficients.
//!
//! Both problems share the constraint `a . theta >= b`, `0 <= theta <= caps`.
//! The quadratic one minimizes `|theta|^2`, the linear one `1 . theta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackInstance {
    pub a: Vec<f64>,
    pub b: f64,
    pub caps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackSolution {
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub residual: f64,
    /// False when the Newton loop ran out of iterations before meeting the tolerance.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    L1,
    L2,
}

impl KnapsackInstance {
    pub fn new(a: Vec<f64>, b: f64, caps: Vec<f64>) -> Result<Self> {
        if a.len() != caps.len() {
            return Err(Error::Config(format!(
                "knapsack weight length {} differs from caps length {}",
                a.len(),
                caps.len()
            )));
        }
        if let Some(c) = caps.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Config(format!("knapsack cap {c} outside [0, 1]")));
        }
        Ok(KnapsackInstance { a, b, caps })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Largest attainable `a . theta`.
    pub fn reach(&self) -> f64 {
        self.a
            .iter()
            .zip(&self.caps)
            .map(|(a, c)| a.max(0.0) * c)
            .sum()
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.b <= 0.0 || self.reach() >= self.b - tol
    }

    fn theta_at(&self, lambda: f64) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.caps)
            .map(|(a, c)| (lambda * a).clamp(0.0, *c))
            .collect()
    }

    fn residual(&self, theta: &[f64]) -> f64 {
        dot(&self.a, theta) - self.b
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Componentwise median of `lo`, `x`, `hi`.
pub fn clip(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(x, (l, h))| x.max(*l).min(*h))
        .collect()
}

/// Value and right derivative of `lambda -> a . clip(lambda a, 0, caps) - b`.
pub fn f_and_df(inst: &KnapsackInstance, lambda: f64) -> (f64, f64) {
    let mut f = -inst.b;
    let mut df = 0.0;
    for (&a, &c) in inst.a.iter().zip(&inst.caps) {
        let x = lambda * a;
        f += a * x.clamp(0.0, c);
        if a > 0.0 && x < c {
            df += a * a;
        }
    }
    (f, df)
}

/// Newton iteration on the multiplier, started from zero.
pub fn solve_quadratic(inst: &KnapsackInstance, tol: f64) -> Result<KnapsackSolution> {
    let n = inst.len();
    if inst.b <= 0.0 {
        let theta = vec![0.0; n];
        return Ok(KnapsackSolution {
            residual: inst.residual(&theta),
            theta,
            lambda: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let mut lambda = 0.0;
    let (mut f, mut df) = f_and_df(inst, lambda);
    let mut iterations = 0;
    let mut converged = -f < tol;
    while !converged && iterations <= n {
        if df == 0.0 {
            if f >= -tol {
                converged = true;
                break;
            }
            return Err(Error::InfeasibleInstance {
                reach: inst.reach(),
                b: inst.b,
            });
        }
        lambda -= f / df;
        (f, df) = f_and_df(inst, lambda);
        iterations += 1;
        converged = -f < tol;
    }
    let theta = inst.theta_at(lambda);
    Ok(KnapsackSolution {
        residual: inst.residual(&theta),
        theta,
        lambda,
        iterations,
        converged,
    })
}

/// Greedy fill in order of decreasing weight; equal weights go lowest index first.
pub fn solve_linear(inst: &KnapsackInstance) -> Result<KnapsackSolution> {
    let mut theta = vec![0.0; inst.len()];
    if inst.b <= 0.0 {
        return Ok(KnapsackSolution {
            residual: inst.residual(&theta),
            theta,
            lambda: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let mut order: Vec<usize> = (0..inst.len()).filter(|&i| inst.a[i] > 0.0).collect();
    order.sort_by(|&i, &j| inst.a[j].total_cmp(&inst.a[i]));
    let mut remaining = inst.b;
    let mut iterations = 0;
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        theta[i] = inst.caps[i].min(remaining / inst.a[i]);
        remaining -= inst.a[i] * theta[i];
        iterations += 1;
    }
    if remaining > DEFAULT_TOL * inst.b.abs().max(1.0) {
        return Err(Error::InfeasibleInstance {
            reach: inst.reach(),
            b: inst.b,
        });
    }
    Ok(KnapsackSolution {
        residual: inst.residual(&theta),
        theta,
        lambda: 0.0,
        iterations,
        converged: true,
    })
}

/// Exhaustive search over a uniform grid of `[0, caps]`; `None` if no grid point is feasible.
pub fn brute_force_oracle(
    inst: &KnapsackInstance,
    objective: Objective,
    grid: usize,
) -> Result<Option<Vec<f64>>> {
    let dims = inst.len();
    if dims > 4 || !(2..=201).contains(&grid) {
        return Err(Error::Config(format!(
            "oracle supports L <= 4 and 2 <= grid <= 201, got L = {dims}, grid = {grid}"
        )));
    }
    let total = grid.pow(dims as u32);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut point = vec![0.0; dims];
    for flat in 0..total {
        let mut rest = flat;
        for (k, p) in point.iter_mut().enumerate() {
            let idx = rest % grid;
            rest /= grid;
            *p = inst.caps[k] * idx as f64 / (grid - 1) as f64;
        }
        if dot(&inst.a, &point) < inst.b {
            continue;
        }
        let value = match objective {
            Objective::L1 => point.iter().sum(),
            Objective::L2 => point.iter().map(|t| t * t).sum::<f64>(),
        };
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, point.clone()));
        }
    }
    Ok(best.map(|(_, p)| p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(a: &[f64], b: f64, caps: &[f64]) -> KnapsackInstance {
        KnapsackInstance::new(a.to_vec(), b, caps.to_vec()).unwrap()
    }

    #[test]
    fn clip_basic() {
        assert_eq!(
            clip(&[-1.0, 0.5, 2.0], &[0.0; 3], &[1.0; 3]),
            vec![0.0, 0.5, 1.0]
        );
    }

    #[test]
    fn f_df_values() {
        let k = inst(&[1.0, 2.0], 1.0, &[1.0, 1.0]);
        let (f, df) = f_and_df(&k, 0.0);
        assert_eq!((f, df), (-1.0, 5.0));
        let (f, df) = f_and_df(&k, 0.2);
        assert!(f.abs() < 1e-15);
        assert_eq!(df, 5.0);
        let (f, df) = f_and_df(&k, 10.0);
        assert_eq!((f, df), (2.0, 0.0));
    }

    #[test]
    fn zero_cap_excluded_from_derivative() {
        let k = inst(&[1.0, 2.0], 1.0, &[0.0, 1.0]);
        assert_eq!(f_and_df(&k, 0.0).1, 4.0);
    }

    #[test]
    fn quadratic_nonpositive_b() {
        let s = solve_quadratic(&inst(&[3.0, -1.0], -0.3, &[1.0, 1.0]), DEFAULT_TOL).unwrap();
        assert_eq!(s.theta, vec![0.0, 0.0]);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn quadratic_unsaturated() {
        let s = solve_quadratic(&inst(&[1.0, 2.0], 1.0, &[1.0, 1.0]), DEFAULT_TOL).unwrap();
        assert!((s.lambda - 0.2).abs() < 1e-15);
        assert!((s.theta[0] - 0.2).abs() < 1e-15 && (s.theta[1] - 0.4).abs() < 1e-15);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn quadratic_one_breakpoint() {
        let s = solve_quadratic(&inst(&[2.0, 1.0], 1.0, &[0.25, 1.0]), DEFAULT_TOL).unwrap();
        assert!((s.theta[0] - 0.25).abs() < 1e-15);
        assert!((s.theta[1] - 0.5).abs() < 1e-14);
        assert_eq!(s.iterations, 2);
        assert!(s.converged);
    }

    #[test]
    fn quadratic_infeasible() {
        let r = solve_quadratic(&inst(&[1.0, 1.0], 3.0, &[1.0, 1.0]), DEFAULT_TOL);
        assert!(matches!(r, Err(Error::InfeasibleInstance { .. })));
    }

    #[test]
    fn linear_examples() {
        let s = solve_linear(&inst(&[1.0, 2.0], 1.0, &[1.0, 1.0])).unwrap();
        assert_eq!(s.theta, vec![0.0, 0.5]);
        let s = solve_linear(&inst(&[2.0, 1.0], 1.0, &[0.25, 1.0])).unwrap();
        assert_eq!(s.theta, vec![0.25, 0.5]);
        let s = solve_linear(&inst(&[1.0, 1.0], 0.7, &[1.0, 1.0])).unwrap();
        assert_eq!(s.theta, vec![0.7, 0.0]);
        let s = solve_linear(&inst(&[1.0, 1.0], 1.5, &[1.0, 1.0])).unwrap();
        assert_eq!(s.theta, vec![1.0, 0.5]);
    }

    #[test]
    fn linear_infeasible() {
        assert!(solve_linear(&inst(&[1.0, -1.0], 2.0, &[1.0, 1.0])).is_err());
    }

    #[test]
    fn oracle_examples() {
        let k = inst(&[1.0, 2.0], 1.0, &[1.0, 1.0]);
        let q = brute_force_oracle(&k, Objective::L2, 201).unwrap().unwrap();
        assert!((q[0] - 0.2).abs() <= 0.01 && (q[1] - 0.4).abs() <= 0.01);
        let l = brute_force_oracle(&k, Objective::L1, 201).unwrap().unwrap();
        assert!((l.iter().sum::<f64>() - 0.5).abs() <= 0.01);
        let bad = inst(&[1.0, 1.0], 3.0, &[1.0, 1.0]);
        assert!(brute_force_oracle(&bad, Objective::L2, 21).unwrap().is_none());
    }

    #[test]
    fn caps_validated() {
        assert!(KnapsackInstance::new(vec![1.0], 1.0, vec![1.5]).is_err());
        assert!(KnapsackInstance::new(vec![1.0, 2.0], 1.0, vec![1.0]).is_err());
    }
}
