//! Element-local residual assembly and the blended knapsack-limited scheme.
//!
//! The global state is a flat `Vec<f64>` laid out as
//! `[(element * nodes_per_element + node) * NVARS + var]`.
//! Every scheme returns `du/dt = M^{-1}(-r - s)` per element, with `s` the
//! surface term and `r` the volume term of the chosen kind.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euler::{psi_dot, ConsState, FluxKind, GasModel, NodeState, NVARS};
use crate::knapsack::{self, KnapsackInstance, DEFAULT_TOL};
use crate::mesh::{Boundary, Mesh};
use crate::operators::{NodePair, OperatorSet};
use crate::timestep::OdeSystem;

pub type Vars = [f64; NVARS];

const BACKTRACK_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Dgsem,
    Esfd,
    #[serde(rename = "low")]
    LowOrder,
    Lk,
    Qk,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::Dgsem,
        SchemeKind::Esfd,
        SchemeKind::LowOrder,
        SchemeKind::Lk,
        SchemeKind::Qk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Dgsem => "dgsem",
            SchemeKind::Esfd => "esfd",
            SchemeKind::LowOrder => "low",
            SchemeKind::Lk => "lk",
            SchemeKind::Qk => "qk",
        }
    }

    pub fn is_blended(self) -> bool {
        matches!(self, SchemeKind::Lk | SchemeKind::Qk)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dgsem" => Ok(SchemeKind::Dgsem),
            "esfd" => Ok(SchemeKind::Esfd),
            "low" | "loworder" | "low_order" | "low-order" => Ok(SchemeKind::LowOrder),
            "lk" => Ok(SchemeKind::Lk),
            "qk" => Ok(SchemeKind::Qk),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

impl FromStr for FluxKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "central" => Ok(FluxKind::Central),
            "lxf" | "llf" | "rusanov" => Ok(FluxKind::LaxFriedrichs),
            "hllc" => Ok(FluxKind::Hllc),
            "ec" | "ranocha" => Ok(FluxKind::EntropyConservative),
            other => Err(Error::Config(format!("unknown flux '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Nodewise,
    Elementwise,
}

impl FromStr for Granularity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nodewise" | "node" => Ok(Granularity::Nodewise),
            "elementwise" | "element" => Ok(Granularity::Elementwise),
            other => Err(Error::Config(format!("unknown granularity '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Positivity {
    pub alpha: f64,
    pub granularity: Granularity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub surface_flux: FluxKind,
    pub volume_flux: FluxKind,
    pub positivity: Option<Positivity>,
    pub knapsack_tol: f64,
}

impl SchemeConfig {
    /// Defaults: LxF surface flux, the volume flux the kind requires, no positivity.
    pub fn new(kind: SchemeKind) -> Self {
        SchemeConfig {
            kind,
            surface_flux: FluxKind::LaxFriedrichs,
            volume_flux: match kind {
                SchemeKind::Esfd => FluxKind::EntropyConservative,
                _ => FluxKind::Central,
            },
            positivity: None,
            knapsack_tol: DEFAULT_TOL,
        }
    }

    pub fn with_surface_flux(mut self, flux: FluxKind) -> Self {
        self.surface_flux = flux;
        self
    }

    pub fn with_positivity(mut self, alpha: f64, granularity: Granularity) -> Self {
        self.positivity = Some(Positivity { alpha, granularity });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.surface_flux, FluxKind::LaxFriedrichs | FluxKind::Hllc) {
            return Err(Error::Config(format!(
                "surface flux must be lxf or hllc, got {}",
                self.surface_flux.name()
            )));
        }
        match (self.kind, self.volume_flux) {
            (SchemeKind::Esfd, FluxKind::EntropyConservative) => {}
            (SchemeKind::Esfd, f) => {
                return Err(Error::Config(format!("esfd needs the ec volume flux, got {}", f.name())))
            }
            (SchemeKind::Dgsem, FluxKind::Central) => {}
            (SchemeKind::Dgsem, f) => {
                return Err(Error::Config(format!("dgsem needs the central volume flux, got {}", f.name())))
            }
            (_, FluxKind::Central | FluxKind::EntropyConservative) => {}
            (_, f) => {
                return Err(Error::Config(format!("volume flux {} is not supported", f.name())))
            }
        }
        if let Some(p) = self.positivity {
            if !(0.0..=1.0).contains(&p.alpha) {
                return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", p.alpha)));
            }
            if !self.kind.is_blended() {
                return Err(Error::Config(format!(
                    "positivity limiting needs a blended scheme (lk or qk), got {}",
                    self.kind
                )));
            }
        }
        if !(self.knapsack_tol > 0.0) {
            return Err(Error::Config("knapsack tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Per-evaluation diagnostics, one entry per element where vectors are used.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RhsDiagnostics {
    /// `-v^T r - 1^T E^T (psi . n)` per element.
    pub cei_residual: Vec<f64>,
    /// Mean and max of the effective blending `theta + lc` per element.
    pub theta_mean: Vec<f64>,
    pub theta_max: Vec<f64>,
    pub knapsack_iterations: usize,
    pub max_knapsack_iterations: usize,
    pub positive_b: usize,
    pub infeasible: usize,
    pub not_converged: usize,
    pub backtracked: usize,
}

impl RhsDiagnostics {
    pub fn max_cei_residual(&self) -> f64 {
        self.cei_residual.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_theta(&self) -> f64 {
        if self.theta_mean.is_empty() {
            0.0
        } else {
            self.theta_mean.iter().sum::<f64>() / self.theta_mean.len() as f64
        }
    }

    pub fn max_theta(&self) -> f64 {
        self.theta_max.iter().copied().fold(0.0, f64::max)
    }
}

/// Volume term split by axis, so that each grid line can be blended on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisTerms(pub Vec<Vec<Vars>>);

impl AxisTerms {
    pub fn zeros(dim: usize, n: usize) -> Self {
        AxisTerms(vec![vec![[0.0; NVARS]; n]; dim])
    }

    pub fn total(&self) -> Vec<Vars> {
        let n = self.0[0].len();
        (0..n)
            .map(|i| std::array::from_fn(|k| self.0.iter().map(|ax| ax[i][k]).sum()))
            .collect()
    }
}

fn accumulate_pairs(
    gas: &GasModel,
    kind: FluxKind,
    pairs: &[NodePair],
    nodes: &[NodeState],
    out: &mut AxisTerms,
) {
    for p in pairs {
        let f = gas.flux_resolved(kind, &nodes[p.i], &nodes[p.j], p.normal);
        let axis = &mut out.0[p.axis];
        for k in 0..NVARS {
            let w = p.norm * f[k];
            axis[p.i][k] += w;
            axis[p.j][k] -= w;
        }
    }
}

/// Flux-differencing volume term `r^H_i = sum_j |n_ij| f(u_i, u_j, n_ij / |n_ij|)`.
pub fn volume_high(
    ops: &OperatorSet,
    gas: &GasModel,
    nodes: &[NodeState],
    flux: FluxKind,
) -> AxisTerms {
    let mut out = AxisTerms::zeros(ops.dim, ops.n);
    accumulate_pairs(gas, flux, &ops.pairs_high, nodes, &mut out);
    out
}

/// First-order volume term on the nearest-neighbour pairs of `Q^L`.
pub fn volume_low(
    ops: &OperatorSet,
    gas: &GasModel,
    nodes: &[NodeState],
    flux: FluxKind,
) -> AxisTerms {
    let mut out = AxisTerms::zeros(ops.dim, ops.n);
    accumulate_pairs(gas, flux, &ops.pairs_low, nodes, &mut out);
    out
}

/// Strong-form DGSEM volume term `sum_k Q_k f_k(u) - E^T B (f(u_f) . n)`.
pub fn dgsem_volume(ops: &OperatorSet, nodes: &[NodeState]) -> Vec<Vars> {
    let n = ops.n;
    let mut out = vec![[0.0; NVARS]; n];
    for k in 0..ops.dim {
        let mut dir = [0.0; 2];
        dir[k] = 1.0;
        let fk: Vec<Vars> = nodes.iter().map(|s| s.flux(dir)).collect();
        let q = &ops.q[k];
        for (i, oi) in out.iter_mut().enumerate() {
            for (j, fj) in fk.iter().enumerate() {
                let qij = q[(i, j)];
                if qij != 0.0 {
                    for v in 0..NVARS {
                        oi[v] += qij * fj[v];
                    }
                }
            }
        }
    }
    for f in &ops.faces {
        let fl = nodes[f.node].flux(f.normal);
        for v in 0..NVARS {
            out[f.node][v] -= f.weight * fl[v];
        }
    }
    out
}

/// `1^T E^T (psi(u_f) . n)` summed over the element's face nodes.
pub fn psi_face_term(ops: &OperatorSet, nodes: &[NodeState]) -> f64 {
    ops.faces
        .iter()
        .map(|f| f.weight * psi_dot(&nodes[f.node], f.normal))
        .sum()
}

pub fn entropy_residual(v: &[Vars], r: &[Vars], psi_term: f64) -> f64 {
    let vr: f64 = v
        .iter()
        .zip(r)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    -vr - psi_term
}

/// `R (r^L - r^H)` on every line, concatenated; `line * (n1 + 1) + l` indexes coefficient `l`.
pub fn line_differences(ops: &OperatorSet, rh: &AxisTerms, rl: &AxisTerms) -> Vec<Vars> {
    let l = ops.subcell.l;
    let mut g = vec![[0.0; NVARS]; ops.num_coefficients()];
    for (li, line) in ops.lines.iter().enumerate() {
        let (h, lo) = (&rh.0[line.axis], &rl.0[line.axis]);
        let block = &mut g[li * l..(li + 1) * l];
        let mut acc = [0.0; NVARS];
        block[0] = acc;
        for (p, &node) in line.nodes.iter().enumerate() {
            for k in 0..NVARS {
                acc[k] += lo[node][k] - h[node][k];
            }
            block[p + 1] = acc;
        }
    }
    g
}

/// `a = diag(R(r^L - r^H)) Delta^T v` contracted over variables, and
/// `b = -psi_term - v^T r^H - a^T lc`.
pub fn assemble_constraint(
    ops: &OperatorSet,
    v: &[Vars],
    psi_term: f64,
    rh_total: &[Vars],
    g: &[Vars],
    lc: &[f64],
) -> (Vec<f64>, f64) {
    let l = ops.subcell.l;
    let mut a = vec![0.0; g.len()];
    for (li, line) in ops.lines.iter().enumerate() {
        for c in 0..l {
            let left = (c >= 1).then(|| v[line.nodes[c - 1]]);
            let right = line.nodes.get(c).map(|&node| v[node]);
            let gl = &g[li * l + c];
            let mut sum = 0.0;
            for k in 0..NVARS {
                let dv = left.map_or(0.0, |x| x[k]) - right.map_or(0.0, |x| x[k]);
                sum += gl[k] * dv;
            }
            a[li * l + c] = sum;
        }
    }
    let vrh: f64 = v
        .iter()
        .zip(rh_total)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .sum();
    let alc: f64 = a.iter().zip(lc).map(|(x, y)| x * y).sum();
    (a, -psi_term - vrh - alc)
}

/// `r = r^H + Delta diag(phi) R (r^L - r^H)`, applied line by line.
pub fn blended_volume(ops: &OperatorSet, rh_total: &[Vars], g: &[Vars], phi: &[f64]) -> Vec<Vars> {
    let l = ops.subcell.l;
    let mut r = rh_total.to_vec();
    for (li, line) in ops.lines.iter().enumerate() {
        for (p, &node) in line.nodes.iter().enumerate() {
            let (c0, c1) = (li * l + p, li * l + p + 1);
            for k in 0..NVARS {
                r[node][k] += phi[c1] * g[c1][k] - phi[c0] * g[c0][k];
            }
        }
    }
    r
}

/// Density limiting coefficients from `h_hat = M u / dt - s - r^L` and `c = R(r^H - r^L) = -g`.
///
/// Each coefficient sits between line nodes `l - 1` and `l`. A node receives
/// contributions from `2 d` coefficients, so each gets `1 / (2 d)` of its budget.
pub fn positivity_limiting_coeffs(
    ops: &OperatorSet,
    h_hat: &[f64],
    g: &[Vars],
    alpha: f64,
    granularity: Granularity,
) -> Vec<f64> {
    let l = ops.subcell.l;
    let share = 2.0 * ops.dim as f64;
    let mut lc = vec![0.0; g.len()];
    for (li, line) in ops.lines.iter().enumerate() {
        for c in 0..l {
            let cval = -g[li * l + c][0];
            let bound = if cval > 0.0 && c >= 1 {
                (1.0 - alpha) * h_hat[line.nodes[c - 1]] / (share * cval)
            } else if cval < 0.0 && c < line.nodes.len() {
                (1.0 - alpha) * h_hat[line.nodes[c]] / (-share * cval)
            } else {
                1.0
            };
            lc[li * l + c] = (1.0 - bound.min(1.0)).clamp(0.0, 1.0);
        }
    }
    if granularity == Granularity::Elementwise {
        let m = lc.iter().copied().fold(0.0, f64::max);
        lc.iter_mut().for_each(|x| *x = m);
    }
    lc
}

/// Per-element outcome of the knapsack blending.
struct Blend {
    r: Vec<Vars>,
    phi: Vec<f64>,
    iterations: usize,
    positive_b: bool,
    infeasible: bool,
    not_converged: bool,
    backtracked: bool,
}

/// Mesh, operators, physics and scheme bundled into one semi-discretization.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub ops: OperatorSet,
    pub gas: GasModel,
    pub config: SchemeConfig,
    neighbors: Vec<[Option<usize>; 4]>,
    partner: Vec<usize>,
    ghosts: Vec<NodeState>,
}

impl Discretization {
    pub fn new(mesh: Mesh, degree: usize, gas: GasModel, config: SchemeConfig) -> Result<Self> {
        config.validate()?;
        let ops = OperatorSet::new(degree, mesh.dim, &mesh.h)?;
        let neighbors = (0..mesh.num_elements())
            .map(|e| {
                let mut nb = [None; 4];
                for f in &ops.faces {
                    nb[f.face as usize] = mesh.neighbor(e, f.face);
                }
                nb
            })
            .collect();
        let partner = ops
            .faces
            .iter()
            .map(|f| {
                ops.faces
                    .iter()
                    .position(|g| g.face == f.face.opposite() && g.index == f.index)
                    .ok_or_else(|| Error::Operator("face without partner".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Discretization {
            mesh,
            ops,
            gas,
            config,
            neighbors,
            partner,
            ghosts: Vec::new(),
        })
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_elements() * self.ops.n
    }

    /// Length of the flat state vector.
    pub fn len(&self) -> usize {
        self.num_nodes() * NVARS
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, u: &[f64], e: usize, i: usize) -> ConsState {
        let o = (e * self.ops.n + i) * NVARS;
        ConsState([u[o], u[o + 1], u[o + 2], u[o + 3]])
    }

    pub fn nodes<'a>(&'a self, u: &'a [f64]) -> impl Iterator<Item = ConsState> + 'a {
        let u = &u[..self.len()];
        u.chunks_exact(NVARS)
            .map(|c| ConsState([c[0], c[1], c[2], c[3]]))
    }

    /// Interpolate a pointwise initial condition onto the nodes.
    pub fn project<F: Fn([f64; 2]) -> ConsState>(&self, f: F) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.len());
        for x in self.mesh.all_node_coords(&self.ops) {
            u.extend_from_slice(&f(x).0);
        }
        u
    }

    /// Freeze the exterior states at domain-boundary faces to the trace of `u`.
    pub fn set_boundary_data(&mut self, u: &[f64]) -> Result<()> {
        let nf = self.ops.faces.len();
        let mut ghosts = Vec::with_capacity(self.num_elements() * nf);
        for e in 0..self.num_elements() {
            for f in &self.ops.faces {
                let s = NodeState::new(self.node(u, e, f.node), &self.gas)
                    .map_err(|err| err.at(e, Some(f.node)))?;
                ghosts.push(s);
            }
        }
        self.ghosts = ghosts;
        Ok(())
    }

    /// Resolve primitives at every node, reporting the first inadmissible one.
    pub fn node_states(&self, u: &[f64]) -> Result<Vec<NodeState>> {
        let n = self.ops.n;
        self.nodes(u)
            .enumerate()
            .map(|(idx, c)| NodeState::new(c, &self.gas).map_err(|err| err.at(idx / n, Some(idx % n))))
            .collect()
    }

    /// `E^T f*(u_f^+, u_f, n)` weighted by the face quadrature, for element `e`.
    pub fn surface_term(&self, e: usize, states: &[NodeState]) -> Result<Vec<Vars>> {
        let n = self.ops.n;
        let nf = self.ops.faces.len();
        let mut s = vec![[0.0; NVARS]; n];
        for (row, f) in self.ops.faces.iter().enumerate() {
            let inner = &states[e * n + f.node];
            let outer = match self.neighbors[e][f.face as usize] {
                Some(nb) => &states[nb * n + self.ops.faces[self.partner[row]].node],
                None => self.ghosts.get(e * nf + row).ok_or_else(|| {
                    Error::Config("Dirichlet boundary used before boundary data was set".into())
                })?,
            };
            let flux = self
                .gas
                .flux_resolved(self.config.surface_flux, inner, outer, f.normal);
            for k in 0..NVARS {
                s[f.node][k] += f.weight * flux[k];
            }
        }
        Ok(s)
    }

    /// Evaluate `du/dt`. `dt` is the forward-Euler step size of the current stage
    /// and is required when positivity limiting is on.
    pub fn rhs(&self, u: &[f64], dt: Option<f64>, dudt: &mut [f64]) -> Result<RhsDiagnostics> {
        if u.len() != self.len() || dudt.len() != self.len() {
            return Err(Error::Config(format!(
                "state length {} does not match discretization length {}",
                u.len(),
                self.len()
            )));
        }
        if self.mesh.boundary == Boundary::Dirichlet && self.ghosts.is_empty() {
            return Err(Error::Config(
                "Dirichlet boundary used before boundary data was set".into(),
            ));
        }
        let positivity = match (self.config.positivity, dt) {
            (Some(p), Some(dt)) if dt > 0.0 => Some((p, dt)),
            (Some(_), _) => {
                return Err(Error::Config("positivity limiting needs a positive stage dt".into()))
            }
            (None, _) => None,
        };
        let states = self.node_states(u)?;
        let m = self.num_elements();
        let mut diag = RhsDiagnostics {
            cei_residual: vec![0.0; m],
            theta_mean: vec![0.0; m],
            theta_max: vec![0.0; m],
            ..Default::default()
        };
        let n = self.ops.n;
        for e in 0..m {
            let nodes = &states[e * n..(e + 1) * n];
            let s = self.surface_term(e, &states)?;
            let v: Vec<Vars> = nodes.iter().map(|x| self.gas.entropy_variables(x)).collect();
            let psi = psi_face_term(&self.ops, nodes);
            let (r, phi) = match self.config.kind {
                SchemeKind::Dgsem => (dgsem_volume(&self.ops, nodes), vec![0.0]),
                SchemeKind::Esfd => (
                    volume_high(&self.ops, &self.gas, nodes, self.config.volume_flux).total(),
                    vec![0.0],
                ),
                SchemeKind::LowOrder => (
                    volume_low(&self.ops, &self.gas, nodes, self.config.surface_flux).total(),
                    vec![1.0],
                ),
                SchemeKind::Lk | SchemeKind::Qk => {
                    let blend = self
                        .blend_element(e, nodes, &s, &v, psi, positivity)
                        .map_err(|err| err.at(e, None))?;
                    diag.knapsack_iterations += blend.iterations;
                    diag.max_knapsack_iterations = diag.max_knapsack_iterations.max(blend.iterations);
                    diag.positive_b += blend.positive_b as usize;
                    diag.infeasible += blend.infeasible as usize;
                    diag.not_converged += blend.not_converged as usize;
                    diag.backtracked += blend.backtracked as usize;
                    (blend.r, blend.phi)
                }
            };
            diag.cei_residual[e] = entropy_residual(&v, &r, psi);
            diag.theta_mean[e] = phi.iter().sum::<f64>() / phi.len() as f64;
            diag.theta_max[e] = phi.iter().copied().fold(0.0, f64::max);
            let out = &mut dudt[e * n * NVARS..(e + 1) * n * NVARS];
            for i in 0..n {
                let inv = 1.0 / self.ops.mass[i];
                for k in 0..NVARS {
                    out[i * NVARS + k] = -(r[i][k] + s[i][k]) * inv;
                }
            }
        }
        Ok(diag)
    }

    fn blend_element(
        &self,
        e: usize,
        nodes: &[NodeState],
        s: &[Vars],
        v: &[Vars],
        psi: f64,
        positivity: Option<(Positivity, f64)>,
    ) -> Result<Blend> {
        let ops = &self.ops;
        let rh = volume_high(ops, &self.gas, nodes, self.config.volume_flux);
        let rl = volume_low(ops, &self.gas, nodes, self.config.surface_flux);
        let rh_total = rh.total();
        let rl_total = rl.total();
        let g = line_differences(ops, &rh, &rl);

        let solve = |lc: &[f64]| -> Result<Blend> {
            let (a, b) = assemble_constraint(ops, v, psi, &rh_total, &g, lc);
            let caps: Vec<f64> = lc.iter().map(|x| 1.0 - x).collect();
            let mut blend = Blend {
                r: Vec::new(),
                phi: Vec::new(),
                iterations: 0,
                positive_b: b > 0.0,
                infeasible: false,
                not_converged: false,
                backtracked: false,
            };
            let mut theta = vec![0.0; caps.len()];
            if b > 0.0 {
                let inst = KnapsackInstance { a, b, caps };
                let sol = match self.config.kind {
                    SchemeKind::Lk => knapsack::solve_linear(&inst),
                    _ => knapsack::solve_quadratic(&inst, self.config.knapsack_tol),
                };
                match sol {
                    Ok(sol) => {
                        blend.iterations = sol.iterations;
                        blend.not_converged = !sol.converged;
                        theta = sol.theta;
                    }
                    Err(Error::InfeasibleInstance { .. }) => {
                        blend.infeasible = true;
                        theta = inst.caps;
                    }
                    Err(other) => return Err(other),
                }
            }
            blend.phi = theta
                .iter()
                .zip(lc)
                .map(|(t, l)| (t + l).min(1.0))
                .collect();
            blend.r = blended_volume(ops, &rh_total, &g, &blend.phi);
            Ok(blend)
        };

        let Some((pos, dt)) = positivity else {
            return solve(&vec![0.0; g.len()]);
        };

        let n = ops.n;
        let mut h_hat = vec![0.0; n];
        let mut low = Vec::with_capacity(n);
        for i in 0..n {
            let scale = dt / ops.mass[i];
            let ul = ConsState(std::array::from_fn(|k| {
                nodes[i].u[k] - scale * (s[i][k] + rl_total[i][k])
            }));
            let p = self.gas.pressure(&ul);
            if !(ul.rho() > 0.0 && p > 0.0) {
                return Err(Error::InadmissibleLowOrder {
                    rho: ul.rho(),
                    p,
                    loc: Default::default(),
                }
                .at(e, Some(i)));
            }
            h_hat[i] = ul.rho() * ops.mass[i] / dt;
            low.push((ul.rho(), p));
        }
        let admissible = |r: &[Vars]| -> bool {
            (0..n).all(|i| {
                let scale = dt / ops.mass[i];
                let un = ConsState(std::array::from_fn(|k| {
                    nodes[i].u[k] - scale * (s[i][k] + r[i][k])
                }));
                let (rho_l, p_l) = low[i];
                let slack = 1.0 - 1e-12;
                un.rho() > 0.0
                    && un.rho() >= pos.alpha * rho_l * slack
                    && {
                        let p = self.gas.pressure(&un);
                        p > 0.0 && p >= pos.alpha * p_l * slack
                    }
            })
        };

        let lc0 = positivity_limiting_coeffs(ops, &h_hat, &g, pos.alpha, pos.granularity);
        let first = solve(&lc0)?;
        if admissible(&first.r) {
            return Ok(first);
        }
        // Move lc toward one (the low-order scheme) until the pressure bound holds.
        let at = |t: f64| -> Vec<f64> { lc0.iter().map(|l| l + t * (1.0 - l)).collect() };
        let mut best = solve(&at(1.0))?;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..BACKTRACK_STEPS {
            let mid = 0.5 * (lo + hi);
            let cand = solve(&at(mid))?;
            if admissible(&cand.r) {
                hi = mid;
                best = cand;
            } else {
                lo = mid;
            }
        }
        best.backtracked = true;
        Ok(best)
    }
}

/// Running totals of [`RhsDiagnostics`] over many evaluations.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DiagnosticSummary {
    pub evaluations: usize,
    pub max_cei_residual: f64,
    /// Count of element evaluations with a residual above the knapsack tolerance.
    pub cei_violations: usize,
    pub mean_theta: f64,
    pub max_theta: f64,
    pub max_knapsack_iterations: usize,
    pub positive_b: usize,
    pub infeasible: usize,
    pub not_converged: usize,
    pub backtracked: usize,
}

impl DiagnosticSummary {
    pub fn record(&mut self, d: &RhsDiagnostics, tol: f64) {
        let first = self.evaluations == 0;
        self.evaluations += 1;
        let cei = d.max_cei_residual();
        self.max_cei_residual = if first { cei } else { self.max_cei_residual.max(cei) };
        self.cei_violations += d.cei_residual.iter().filter(|&&r| r > tol).count();
        self.mean_theta += (d.mean_theta() - self.mean_theta) / self.evaluations as f64;
        self.max_theta = self.max_theta.max(d.max_theta());
        self.max_knapsack_iterations = self.max_knapsack_iterations.max(d.max_knapsack_iterations);
        self.positive_b += d.positive_b;
        self.infeasible += d.infeasible;
        self.not_converged += d.not_converged;
        self.backtracked += d.backtracked;
    }
}

/// A [`Discretization`] viewed as an ODE system, collecting diagnostics.
pub struct SemiDiscrete<'a> {
    pub disc: &'a Discretization,
    /// Totals over the whole run.
    pub summary: DiagnosticSummary,
    /// Totals since the last call to [`SemiDiscrete::take_window`].
    pub window: DiagnosticSummary,
    pub last: Option<RhsDiagnostics>,
}

impl<'a> SemiDiscrete<'a> {
    pub fn new(disc: &'a Discretization) -> Self {
        SemiDiscrete {
            disc,
            summary: DiagnosticSummary::default(),
            window: DiagnosticSummary::default(),
            last: None,
        }
    }

    pub fn take_window(&mut self) -> DiagnosticSummary {
        std::mem::take(&mut self.window)
    }
}

impl OdeSystem for SemiDiscrete<'_> {
    fn rhs(&mut self, u: &[f64], dt_stage: f64, du: &mut [f64]) -> Result<()> {
        let d = self.disc.rhs(u, Some(dt_stage), du)?;
        self.summary.record(&d, self.disc.config.knapsack_tol);
        self.window.record(&d, self.disc.config.knapsack_tol);
        self.last = Some(d);
        Ok(())
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::InadmissibleState {
                rho: f64::NAN,
                p: f64::NAN,
                loc: Default::default(),
            });
        }
        self.disc.node_states(u).map(|_| ())
    }

    fn is_active(&self, index: usize) -> bool {
        self.disc.ops.dim == 2 || index % NVARS != 2
    }
}
