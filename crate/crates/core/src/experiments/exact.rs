//! Exact solution of the one-dimensional Riemann problem for an ideal gas.

use crate::error::{Error, Result};
use crate::euler::{GasModel, Primitive};

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX: usize = 100;

/// Pressure function of one side and its derivative.
fn side_function(p: f64, w: &Primitive, gamma: f64) -> (f64, f64) {
    let c = (gamma * w.p / w.rho).sqrt();
    if p > w.p {
        let a = 2.0 / ((gamma + 1.0) * w.rho);
        let b = (gamma - 1.0) / (gamma + 1.0) * w.p;
        let q = (a / (p + b)).sqrt();
        ((p - w.p) * q, q * (1.0 - 0.5 * (p - w.p) / (b + p)))
    } else {
        let ratio = p / w.p;
        let g1 = (gamma - 1.0) / (2.0 * gamma);
        (
            2.0 * c / (gamma - 1.0) * (ratio.powf(g1) - 1.0),
            ratio.powf(-(gamma + 1.0) / (2.0 * gamma)) / (w.rho * c),
        )
    }
}

/// Star-region pressure and velocity.
pub fn star_state(left: &Primitive, right: &Primitive, gas: &GasModel) -> Result<(f64, f64)> {
    let g = gas.gamma;
    let cl = (g * left.p / left.rho).sqrt();
    let cr = (g * right.p / right.rho).sqrt();
    let du = right.vel[0] - left.vel[0];
    if 2.0 / (g - 1.0) * (cl + cr) <= du {
        return Err(Error::Vacuum);
    }
    let pv = 0.5 * (left.p + right.p) - 0.125 * du * (left.rho + right.rho) * (cl + cr);
    let mut p = pv.max(1e-8 * left.p.min(right.p));
    for _ in 0..NEWTON_MAX {
        let (fl, dl) = side_function(p, left, g);
        let (fr, dr) = side_function(p, right, g);
        let next = (p - (fl + fr + du) / (dl + dr)).max(1e-3 * p);
        let change = 2.0 * (next - p).abs() / (next + p);
        p = next;
        if change < NEWTON_TOL {
            break;
        }
    }
    let (fl, _) = side_function(p, left, g);
    let (fr, _) = side_function(p, right, g);
    Ok((p, 0.5 * (left.vel[0] + right.vel[0]) + 0.5 * (fr - fl)))
}

fn state(rho: f64, v: f64, p: f64) -> Primitive {
    Primitive {
        rho,
        vel: [v, 0.0],
        p,
    }
}

/// Solution at position `x` (relative to the initial discontinuity) and time `t`.
pub fn exact_sod(
    x: f64,
    t: f64,
    left: &Primitive,
    right: &Primitive,
    gas: &GasModel,
) -> Result<Primitive> {
    let (p_star, u_star) = star_state(left, right, gas)?;
    if t <= 0.0 {
        return Ok(if x < 0.0 { *left } else { *right });
    }
    let s = x / t;
    let g = gas.gamma;
    let g1 = (g - 1.0) / (2.0 * g);
    let g6 = (g - 1.0) / (g + 1.0);
    let fan = 2.0 / (g + 1.0);
    if s <= u_star {
        let (rho, u, p) = (left.rho, left.vel[0], left.p);
        let c = (g * p / rho).sqrt();
        if p_star > p {
            let speed = u - c * ((g + 1.0) / (2.0 * g) * p_star / p + g1).sqrt();
            if s <= speed {
                return Ok(*left);
            }
            let ratio = p_star / p;
            return Ok(state(rho * (ratio + g6) / (g6 * ratio + 1.0), u_star, p_star));
        }
        if s <= u - c {
            return Ok(*left);
        }
        let c_star = c * (p_star / p).powf(g1);
        if s > u_star - c_star {
            return Ok(state(rho * (p_star / p).powf(1.0 / g), u_star, p_star));
        }
        let cf = fan * (c + 0.5 * (g - 1.0) * (u - s));
        let uf = fan * (c + 0.5 * (g - 1.0) * u + s);
        Ok(state(
            rho * (cf / c).powf(2.0 / (g - 1.0)),
            uf,
            p * (cf / c).powf(2.0 * g / (g - 1.0)),
        ))
    } else {
        let (rho, u, p) = (right.rho, right.vel[0], right.p);
        let c = (g * p / rho).sqrt();
        if p_star > p {
            let speed = u + c * ((g + 1.0) / (2.0 * g) * p_star / p + g1).sqrt();
            if s >= speed {
                return Ok(*right);
            }
            let ratio = p_star / p;
            return Ok(state(rho * (ratio + g6) / (g6 * ratio + 1.0), u_star, p_star));
        }
        if s >= u + c {
            return Ok(*right);
        }
        let c_star = c * (p_star / p).powf(g1);
        if s <= u_star + c_star {
            return Ok(state(rho * (p_star / p).powf(1.0 / g), u_star, p_star));
        }
        let cf = fan * (c - 0.5 * (g - 1.0) * (u - s));
        let uf = fan * (-c + 0.5 * (g - 1.0) * u + s);
        Ok(state(
            rho * (cf / c).powf(2.0 / (g - 1.0)),
            uf,
            p * (cf / c).powf(2.0 * g / (g - 1.0)),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sod() -> (Primitive, Primitive) {
        (state(1.0, 0.0, 1.0), state(0.125, 0.0, 0.1))
    }

    /// Independent star pressure by bisection on the same pressure function.
    fn bisect_star(left: &Primitive, right: &Primitive, g: f64) -> f64 {
        let f = |p: f64| {
            side_function(p, left, g).0 + side_function(p, right, g).0 + right.vel[0] - left.vel[0]
        };
        let (mut lo, mut hi) = (1e-10, 10.0 * left.p.max(right.p));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn sod_star_pressure() {
        let (l, r) = sod();
        let (p, u) = star_state(&l, &r, &GasModel::default()).unwrap();
        assert!((p - 0.30313).abs() < 1e-4);
        assert!((u - 0.92745).abs() < 1e-4);
        assert!((p - bisect_star(&l, &r, 1.4)).abs() < 1e-12);
    }

    #[test]
    fn initial_time_returns_data() {
        let (l, r) = sod();
        let g = GasModel::default();
        assert_eq!(exact_sod(-0.1, 0.0, &l, &r, &g).unwrap(), l);
        assert_eq!(exact_sod(0.1, 0.0, &l, &r, &g).unwrap(), r);
    }

    #[test]
    fn self_similar() {
        let (l, r) = sod();
        let g = GasModel::default();
        for x in [-0.3, -0.1, 0.05, 0.15, 0.3] {
            let a = exact_sod(x, 0.2, &l, &r, &g).unwrap();
            let b = exact_sod(2.0 * x, 0.4, &l, &r, &g).unwrap();
            assert!((a.rho - b.rho).abs() < 1e-14 && (a.p - b.p).abs() < 1e-14);
        }
    }

    #[test]
    fn vacuum_rejected() {
        let l = state(1.0, -20.0, 1.0);
        let r = state(1.0, 20.0, 1.0);
        assert!(matches!(
            star_state(&l, &r, &GasModel::default()),
            Err(Error::Vacuum)
        ));
    }
}
