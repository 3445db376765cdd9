//! Compressible Euler physics with an ideal-gas equation of state.
//!
//! States always carry two momentum components; one-dimensional problems
//! keep the second component at zero and use normals `(±1, 0)`.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};

pub const NVARS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasModel {
    pub gamma: f64,
}

impl Default for GasModel {
    fn default() -> Self {
        GasModel { gamma: 1.4 }
    }
}

/// Conservative variables `(rho, rho v1, rho v2, E)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConsState(pub [f64; NVARS]);

impl ConsState {
    pub fn new(rho: f64, mom: [f64; 2], energy: f64) -> Self {
        ConsState([rho, mom[0], mom[1], energy])
    }

    pub fn rho(&self) -> f64 {
        self.0[0]
    }

    pub fn mom(&self) -> [f64; 2] {
        [self.0[1], self.0[2]]
    }

    pub fn energy(&self) -> f64 {
        self.0[3]
    }

    pub fn dot(&self, other: &[f64; NVARS]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

impl Index<usize> for ConsState {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ConsState {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for ConsState {
    type Output = ConsState;
    fn add(self, o: ConsState) -> ConsState {
        ConsState(std::array::from_fn(|k| self.0[k] + o.0[k]))
    }
}

impl AddAssign for ConsState {
    fn add_assign(&mut self, o: ConsState) {
        for k in 0..NVARS {
            self.0[k] += o.0[k];
        }
    }
}

impl Sub for ConsState {
    type Output = ConsState;
    fn sub(self, o: ConsState) -> ConsState {
        ConsState(std::array::from_fn(|k| self.0[k] - o.0[k]))
    }
}

impl Mul<f64> for ConsState {
    type Output = ConsState;
    fn mul(self, s: f64) -> ConsState {
        ConsState(self.0.map(|x| x * s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub rho: f64,
    pub vel: [f64; 2],
    pub p: f64,
}

/// A state together with its primitive variables and sound speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub u: ConsState,
    pub rho: f64,
    pub vel: [f64; 2],
    pub p: f64,
    pub c: f64,
}

impl NodeState {
    pub fn new(u: ConsState, gas: &GasModel) -> Result<NodeState> {
        let prim = gas.cons_to_prim(&u)?;
        Ok(NodeState {
            u,
            rho: prim.rho,
            vel: prim.vel,
            p: prim.p,
            c: (gas.gamma * prim.p / prim.rho).sqrt(),
        })
    }

    pub fn normal_velocity(&self, n: [f64; 2]) -> f64 {
        self.vel[0] * n[0] + self.vel[1] * n[1]
    }

    pub fn speed(&self) -> f64 {
        (self.vel[0] * self.vel[0] + self.vel[1] * self.vel[1]).sqrt()
    }

    /// Physical flux in direction `n`, `f(u) . n`.
    pub fn flux(&self, n: [f64; 2]) -> [f64; NVARS] {
        let vn = self.normal_velocity(n);
        let [m1, m2] = self.u.mom();
        [
            self.rho * vn,
            m1 * vn + self.p * n[0],
            m2 * vn + self.p * n[1],
            (self.u.energy() + self.p) * vn,
        ]
    }
}

/// Entropy function, variables, potentials and fluxes at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyData {
    pub eta: f64,
    pub v: [f64; NVARS],
    pub psi: [f64; 2],
    pub flux: [f64; 2],
}

impl GasModel {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 1.0 {
            Ok(GasModel { gamma })
        } else {
            Err(Error::Config(format!("gamma must exceed 1, got {gamma}")))
        }
    }

    pub fn pressure(&self, u: &ConsState) -> f64 {
        let [m1, m2] = u.mom();
        (self.gamma - 1.0) * (u.energy() - 0.5 * (m1 * m1 + m2 * m2) / u.rho())
    }

    pub fn cons_to_prim(&self, u: &ConsState) -> Result<Primitive> {
        let rho = u.rho();
        if !(rho > 0.0) {
            return Err(Error::InadmissibleState {
                rho,
                p: f64::NAN,
                loc: Location::default(),
            });
        }
        let p = self.pressure(u);
        if !(p > 0.0) {
            return Err(Error::InadmissibleState {
                rho,
                p,
                loc: Location::default(),
            });
        }
        let [m1, m2] = u.mom();
        Ok(Primitive {
            rho,
            vel: [m1 / rho, m2 / rho],
            p,
        })
    }

    pub fn prim_to_cons(&self, w: &Primitive) -> ConsState {
        let [v1, v2] = w.vel;
        let kinetic = 0.5 * w.rho * (v1 * v1 + v2 * v2);
        ConsState::new(
            w.rho,
            [w.rho * v1, w.rho * v2],
            w.p / (self.gamma - 1.0) + kinetic,
        )
    }

    pub fn is_admissible(&self, u: &ConsState) -> bool {
        u.rho() > 0.0 && self.pressure(u) > 0.0
    }

    /// Columns `f_1(u)`, `f_2(u)`.
    pub fn physical_flux(&self, u: &ConsState) -> Result<[[f64; NVARS]; 2]> {
        let s = NodeState::new(*u, self)?;
        Ok([s.flux([1.0, 0.0]), s.flux([0.0, 1.0])])
    }

    pub fn entropy_data(&self, u: &ConsState) -> Result<EntropyData> {
        let w = self.cons_to_prim(u)?;
        let g = self.gamma;
        let s = w.p.ln() - g * w.rho.ln();
        let eta = -w.rho * s / (g - 1.0);
        let v = entropy_vars(g, w.rho, w.vel, w.p);
        let psi = [w.rho * w.vel[0], w.rho * w.vel[1]];
        let ns = NodeState::new(*u, self)?;
        let mut flux = [0.0; 2];
        for (k, fk) in flux.iter_mut().enumerate() {
            let mut dir = [0.0; 2];
            dir[k] = 1.0;
            let f = ns.flux(dir);
            *fk = v.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() - psi[k];
        }
        Ok(EntropyData { eta, v, psi, flux })
    }

    pub fn entropy(&self, u: &ConsState) -> Result<f64> {
        let w = self.cons_to_prim(u)?;
        let s = w.p.ln() - self.gamma * w.rho.ln();
        Ok(-w.rho * s / (self.gamma - 1.0))
    }

    pub fn entropy_variables(&self, s: &NodeState) -> [f64; NVARS] {
        entropy_vars(self.gamma, s.rho, s.vel, s.p)
    }

    /// Davis estimate `max(|vL.n| + cL, |vR.n| + cR)`.
    pub fn max_wavespeed(&self, ul: &ConsState, ur: &ConsState, n: [f64; 2]) -> Result<f64> {
        let a = NodeState::new(*ul, self)?;
        let b = NodeState::new(*ur, self)?;
        Ok(davis_speed(&a, &b, n))
    }
}

fn entropy_vars(gamma: f64, rho: f64, vel: [f64; 2], p: f64) -> [f64; NVARS] {
    let s = p.ln() - gamma * rho.ln();
    let beta = 0.5 * rho / p;
    let v2 = vel[0] * vel[0] + vel[1] * vel[1];
    [
        (gamma - s) / (gamma - 1.0) - beta * v2,
        2.0 * beta * vel[0],
        2.0 * beta * vel[1],
        -2.0 * beta,
    ]
}

/// Entropy potential flux `psi(u) . n`.
pub fn psi_dot(s: &NodeState, n: [f64; 2]) -> f64 {
    s.rho * s.normal_velocity(n)
}

pub fn davis_speed(a: &NodeState, b: &NodeState, n: [f64; 2]) -> f64 {
    (a.normal_velocity(n).abs() + a.c).max(b.normal_velocity(n).abs() + b.c)
}

/// Logarithmic mean `(b - a) / (ln b - ln a)`.
pub fn logmean(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::NonPositiveMean(a, b));
    }
    Ok(ln_mean(a, b))
}

/// Unchecked logarithmic mean; uses a series when the arguments are close.
#[inline]
pub fn ln_mean(a: f64, b: f64) -> f64 {
    let ratio = b / a - 1.0;
    if ratio.abs() < 1e-4 {
        let f = (b - a) / (b + a);
        let u = f * f;
        0.5 * (a + b) / (1.0 + u * (1.0 / 3.0 + u * (1.0 / 5.0 + u / 7.0)))
    } else {
        (b - a) / ratio.ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluxKind {
    Central,
    #[serde(rename = "lxf")]
    LaxFriedrichs,
    Hllc,
    #[serde(rename = "ec")]
    EntropyConservative,
}

impl FluxKind {
    pub fn name(self) -> &'static str {
        match self {
            FluxKind::Central => "central",
            FluxKind::LaxFriedrichs => "lxf",
            FluxKind::Hllc => "hllc",
            FluxKind::EntropyConservative => "ec",
        }
    }
}

pub fn flux_central(a: &NodeState, b: &NodeState, n: [f64; 2]) -> [f64; NVARS] {
    let fa = a.flux(n);
    let fb = b.flux(n);
    std::array::from_fn(|k| 0.5 * (fa[k] + fb[k]))
}

pub fn flux_lxf(a: &NodeState, b: &NodeState, n: [f64; 2]) -> [f64; NVARS] {
    let lambda = davis_speed(a, b, n);
    let fa = a.flux(n);
    let fb = b.flux(n);
    std::array::from_fn(|k| 0.5 * (fa[k] + fb[k]) - 0.5 * lambda * (b.u.0[k] - a.u.0[k]))
}

pub fn flux_hllc(a: &NodeState, b: &NodeState, n: [f64; 2]) -> [f64; NVARS] {
    let vna = a.normal_velocity(n);
    let vnb = b.normal_velocity(n);
    let sl = (vna - a.c).min(vnb - b.c);
    let sr = (vna + a.c).max(vnb + b.c);
    if sl >= 0.0 {
        return a.flux(n);
    }
    if sr <= 0.0 {
        return b.flux(n);
    }
    let ma = a.rho * (sl - vna);
    let mb = b.rho * (sr - vnb);
    let s_star = (b.p - a.p + ma * vna - mb * vnb) / (ma - mb);
    let star = |s: &NodeState, sk: f64, vn: f64| -> [f64; NVARS] {
        let factor = s.rho * (sk - vn) / (sk - s_star);
        let dv = s_star - vn;
        [
            factor,
            factor * (s.vel[0] + dv * n[0]),
            factor * (s.vel[1] + dv * n[1]),
            factor * (s.u.energy() / s.rho + dv * (s_star + s.p / (s.rho * (sk - vn)))),
        ]
    };
    if s_star >= 0.0 {
        let f = a.flux(n);
        let us = star(a, sl, vna);
        std::array::from_fn(|k| f[k] + sl * (us[k] - a.u.0[k]))
    } else {
        let f = b.flux(n);
        let us = star(b, sr, vnb);
        std::array::from_fn(|k| f[k] + sr * (us[k] - b.u.0[k]))
    }
}

/// Entropy conserving and kinetic energy preserving flux.
pub fn flux_ec(gamma: f64, a: &NodeState, b: &NodeState, n: [f64; 2]) -> [f64; NVARS] {
    let rho_mean = ln_mean(a.rho, b.rho);
    let inv_rho_p_mean = 1.0 / ln_mean(a.rho / a.p, b.rho / b.p);
    let v_avg = [0.5 * (a.vel[0] + b.vel[0]), 0.5 * (a.vel[1] + b.vel[1])];
    let p_avg = 0.5 * (a.p + b.p);
    let vn_a = a.normal_velocity(n);
    let vn_b = b.normal_velocity(n);
    let vn_avg = 0.5 * (vn_a + vn_b);
    let vel_sq_avg = 0.5 * (a.vel[0] * b.vel[0] + a.vel[1] * b.vel[1]);
    let f_rho = rho_mean * vn_avg;
    [
        f_rho,
        f_rho * v_avg[0] + p_avg * n[0],
        f_rho * v_avg[1] + p_avg * n[1],
        f_rho * (vel_sq_avg + inv_rho_p_mean / (gamma - 1.0)) + 0.5 * (a.p * vn_b + b.p * vn_a),
    ]
}

impl GasModel {
    /// Two-point flux on resolved states.
    #[inline]
    pub fn flux_resolved(
        &self,
        kind: FluxKind,
        a: &NodeState,
        b: &NodeState,
        n: [f64; 2],
    ) -> [f64; NVARS] {
        match kind {
            FluxKind::Central => flux_central(a, b, n),
            FluxKind::LaxFriedrichs => flux_lxf(a, b, n),
            FluxKind::Hllc => flux_hllc(a, b, n),
            FluxKind::EntropyConservative => flux_ec(self.gamma, a, b, n),
        }
    }

    pub fn numerical_flux(
        &self,
        kind: FluxKind,
        ul: &ConsState,
        ur: &ConsState,
        n: [f64; 2],
    ) -> Result<[f64; NVARS]> {
        let a = NodeState::new(*ul, self)?;
        let b = NodeState::new(*ur, self)?;
        Ok(self.flux_resolved(kind, &a, &b, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gas() -> GasModel {
        GasModel::default()
    }

    #[test]
    fn rest_state_primitives() {
        let g = gas();
        let u = ConsState::new(1.0, [0.0, 0.0], 1.0 / (g.gamma - 1.0));
        let w = g.cons_to_prim(&u).unwrap();
        assert_eq!(w.vel, [0.0, 0.0]);
        assert!((w.p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sod_left_energy() {
        let u = gas().prim_to_cons(&Primitive {
            rho: 1.0,
            vel: [0.0, 0.0],
            p: 1.0,
        });
        assert!((u.energy() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn density_wave_state() {
        let g = gas();
        let u = g.prim_to_cons(&Primitive {
            rho: 1.0,
            vel: [1.7, 0.0],
            p: 1.0,
        });
        assert_eq!(u.mom(), [1.7, 0.0]);
        assert!((u.energy() - (2.5 + 0.5 * 1.7 * 1.7)).abs() < 1e-14);
        let w = g.cons_to_prim(&u).unwrap();
        assert!((w.p - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inadmissible_states_flagged() {
        let g = gas();
        assert!(g.cons_to_prim(&ConsState::new(-1.0, [0.0, 0.0], 1.0)).is_err());
        assert!(g.cons_to_prim(&ConsState::new(1.0, [3.0, 0.0], 1.0)).is_err());
    }

    #[test]
    fn stagnation_flux() {
        let g = gas();
        let u = ConsState::new(1.3, [0.0, 0.0], 2.0 / 0.4);
        let f = g.physical_flux(&u).unwrap();
        assert_eq!(f[0][0], 0.0);
        assert_eq!(f[0][3], 0.0);
        assert!((f[0][1] - 2.0).abs() < 1e-14 && f[0][2] == 0.0);
        assert!((f[1][2] - 2.0).abs() < 1e-14 && f[1][1] == 0.0);
    }

    #[test]
    fn density_wave_flux_values() {
        let g = gas();
        let u = g.prim_to_cons(&Primitive {
            rho: 1.0,
            vel: [1.7, 0.0],
            p: 1.0,
        });
        let f = g.physical_flux(&u).unwrap()[0];
        // E = 2.5 + 1.445 = 3.945; (E + p) v = 4.945 * 1.7
        let expect = [1.7, 3.89, 0.0, 8.4065];
        for k in 0..4 {
            assert!((f[k] - expect[k]).abs() < 1e-13, "{k}: {}", f[k]);
        }
    }

    #[test]
    fn entropy_at_rest() {
        let g = gas();
        let u = ConsState::new(1.0, [0.0, 0.0], 2.5);
        let e = g.entropy_data(&u).unwrap();
        assert!(e.eta.abs() < 1e-15);
        assert!((e.v[0] - 3.5).abs() < 1e-14);
        assert_eq!(e.v[1], 0.0);
        assert!((e.v[3] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn wavespeed_rest() {
        let g = gas();
        let u = ConsState::new(1.0, [0.0, 0.0], 2.5);
        let l = g.max_wavespeed(&u, &u, [1.0, 0.0]).unwrap();
        assert!((l - 1.4f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn wavespeed_sod_interface() {
        let g = gas();
        let ul = ConsState::new(1.0, [0.0, 0.0], 2.5);
        let ur = ConsState::new(0.125, [0.0, 0.0], 0.25);
        let l = g.max_wavespeed(&ul, &ur, [1.0, 0.0]).unwrap();
        let expect = 1.4f64.sqrt().max((1.4f64 * 0.1 / 0.125).sqrt());
        assert!((l - expect).abs() < 1e-15);
    }

    #[test]
    fn logmean_cases() {
        assert_eq!(logmean(2.0, 2.0).unwrap(), 2.0);
        let e = std::f64::consts::E;
        assert!((logmean(1.0, e).unwrap() - (e - 1.0)).abs() < 1e-15);
        assert!((logmean(1.0, 1.0 + 1e-6).unwrap() - (1.0 + 5e-7)).abs() < 1e-12);
        assert!(logmean(0.0, 1.0).is_err());
    }
}
