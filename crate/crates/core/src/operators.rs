//! Quadrature, summation-by-parts and subcell operators on one element.
//!
//! One-dimensional operators live on Legendre-Gauss-Lobatto nodes. The
//! two-dimensional versions are tensor products with the node index
//! `iy * (N + 1) + ix`, so the x-coordinate runs fastest.
//!
//! Face nodes are always ordered west, east, south, north; each face is
//! traversed in increasing perpendicular coordinate.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Gauss-Lobatto rule with `degree + 1` points on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub degree: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Returns `(P_n(x), P_{n-1}(x))`.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

/// Legendre-Gauss-Lobatto nodes and weights for polynomial degree `n`.
///
/// Interior nodes are the roots of `P'_n`, found by Newton iteration from
/// Chebyshev-Gauss-Lobatto starting points.
pub fn lgl_rule(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::InvalidDegree(n));
    }
    let nf = n as f64;
    let mut nodes = vec![0.0; n + 1];
    nodes[0] = -1.0;
    nodes[n] = 1.0;
    for (j, node) in nodes.iter_mut().enumerate().take(n).skip(1) {
        let mut x = -(std::f64::consts::PI * j as f64 / nf).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (p, pm1) = legendre_pair(n, x);
            let one_minus_x2 = 1.0 - x * x;
            let dp = nf * (pm1 - x * p) / one_minus_x2;
            let d2p = (2.0 * x * dp - nf * (nf + 1.0) * p) / one_minus_x2;
            let dx = dp / d2p;
            x -= dx;
            if dx.abs() <= NEWTON_TOL {
                break;
            }
        }
        *node = x;
    }
    // exact antisymmetry of the node set
    for j in 0..=n / 2 {
        let m = 0.5 * (nodes[n - j] - nodes[j]);
        nodes[j] = -m;
        nodes[n - j] = m;
    }
    if n % 2 == 0 {
        nodes[n / 2] = 0.0;
    }
    let weights = nodes
        .iter()
        .map(|&x| {
            let (p, _) = legendre_pair(n, x);
            2.0 / (nf * (nf + 1.0) * p * p)
        })
        .collect();
    Ok(QuadratureRule {
        degree: n,
        nodes,
        weights,
    })
}

/// Lagrange differentiation matrix `D_ij = l_j'(x_i)` via barycentric weights.
pub fn differentiation_matrix(nodes: &[f64]) -> DMatrix<f64> {
    let n = nodes.len();
    let bary: Vec<f64> = (0..n)
        .map(|j| {
            let prod: f64 = (0..n)
                .filter(|&k| k != j)
                .map(|k| nodes[j] - nodes[k])
                .product();
            1.0 / prod
        })
        .collect();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (bary[j] / bary[i]) / (nodes[i] - nodes[j]);
                d[(i, j)] = v;
                diag -= v;
            }
        }
        d[(i, i)] = diag;
    }
    d
}

/// The low-order finite-volume matrix `1/2 * tridiag(-1, 0, 1)` with corners `-1/2`, `1/2`.
pub fn low_order_q_1d(n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        q[(i, i + 1)] = 0.5;
        q[(i + 1, i)] = -0.5;
    }
    q[(0, 0)] = -0.5;
    q[(n - 1, n - 1)] = 0.5;
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Face {
    West,
    East,
    South,
    North,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::West, Face::East, Face::South, Face::North];

    pub fn opposite(self) -> Face {
        match self {
            Face::West => Face::East,
            Face::East => Face::West,
            Face::South => Face::North,
            Face::North => Face::South,
        }
    }

    pub fn axis(self) -> usize {
        match self {
            Face::West | Face::East => 0,
            Face::South | Face::North => 1,
        }
    }

    pub fn normal(self) -> [f64; 2] {
        match self {
            Face::West => [-1.0, 0.0],
            Face::East => [1.0, 0.0],
            Face::South => [0.0, -1.0],
            Face::North => [0.0, 1.0],
        }
    }
}

/// One row of `E`: a face node with its outward normal and surface weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceNode {
    pub node: usize,
    pub face: Face,
    /// Position along the face.
    pub index: usize,
    pub weight: f64,
    pub normal: [f64; 2],
}

/// A nonzero entry `n_ij` (with `i < j`) of `Q_k - Q_k^T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodePair {
    pub i: usize,
    pub j: usize,
    pub axis: usize,
    pub norm: f64,
    pub normal: [f64; 2],
}

/// A grid line of nodes along one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub axis: usize,
    pub nodes: Vec<usize>,
}

/// Difference/cumulative-sum pair used to blend volume terms on a line of `n` nodes.
///
/// `delta` is `n x (n+1)` with rows `(-1, 1)`, `r` is `(n+1) x n` strictly
/// lower triangular ones. Both are applied matrix-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubcellOperators {
    pub n: usize,
    pub l: usize,
}

impl SubcellOperators {
    /// `y = R x`, i.e. `y_0 = 0`, `y_l = x_0 + ... + x_{l-1}`.
    pub fn apply_r(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.l);
        let mut acc = 0.0;
        y[0] = 0.0;
        for (k, &xk) in x.iter().enumerate() {
            acc += xk;
            y[k + 1] = acc;
        }
    }

    /// `y = Delta w`, i.e. `y_i = w_{i+1} - w_i`.
    pub fn apply_delta(&self, w: &[f64], y: &mut [f64]) {
        debug_assert_eq!(w.len(), self.l);
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            *yi = w[i + 1] - w[i];
        }
    }

    /// `y = Delta^T v`, i.e. `y_l = v_{l-1} - v_l` with missing entries zero.
    pub fn apply_delta_t(&self, v: &[f64], y: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n);
        for (l, yl) in y.iter_mut().enumerate().take(self.l) {
            let left = if l >= 1 { v[l - 1] } else { 0.0 };
            let right = if l < self.n { v[l] } else { 0.0 };
            *yl = left - right;
        }
    }

    pub fn delta_matrix(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.l);
        for i in 0..self.n {
            d[(i, i)] = -1.0;
            d[(i, i + 1)] = 1.0;
        }
        d
    }

    pub fn r_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.l, self.n, |l, j| if j < l { 1.0 } else { 0.0 })
    }
}

/// Basis of the null space of `1^T`: columns `e_i - e_{i+1}`.
pub fn null_space_basis(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, n - 1);
    for k in 0..n - 1 {
        d[(k, k)] = 1.0;
        d[(k + 1, k)] = -1.0;
    }
    d
}

/// Checks both subcell identities `(Delta R - I) D = 0` and `diag(Delta^T 1) R D = 0`.
pub fn subcell_identity_residuals(ops: &SubcellOperators, basis: &DMatrix<f64>) -> (f64, f64) {
    let delta = ops.delta_matrix();
    let r = ops.r_matrix();
    let n = ops.n;
    let feas = (&delta * &r - DMatrix::<f64>::identity(n, n)) * basis;
    let col_sums = delta.transpose() * DMatrix::from_element(n, 1, 1.0);
    let diag = DMatrix::from_diagonal(&col_sums.column(0).into_owned());
    let cons = diag * &r * basis;
    (feas.amax(), cons.amax())
}

pub fn build_subcell_operators(n: usize) -> Result<SubcellOperators> {
    if n < 2 {
        return Err(Error::Operator(format!(
            "subcell operators need at least 2 nodes, got {n}"
        )));
    }
    let ops = SubcellOperators { n, l: n + 1 };
    let (feas, cons) = subcell_identity_residuals(&ops, &null_space_basis(n));
    if feas > 1e-13 || cons > 1e-13 {
        return Err(Error::Operator(format!(
            "subcell identities violated: feasibility {feas:e}, conservation {cons:e}"
        )));
    }
    Ok(ops)
}

/// All element-local operators for one geometry.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub dim: usize,
    pub degree: usize,
    /// Nodes per axis, `N + 1`.
    pub n1: usize,
    /// Nodes per element.
    pub n: usize,
    pub h: [f64; 2],
    pub rule: QuadratureRule,
    /// Reference differentiation matrix on `[-1, 1]`.
    pub d_ref: DMatrix<f64>,
    /// Diagonal of the mass matrix.
    pub mass: Vec<f64>,
    pub q: Vec<DMatrix<f64>>,
    pub d: Vec<DMatrix<f64>>,
    pub q_low: Vec<DMatrix<f64>>,
    /// Face-node extraction matrix, one row per entry of `faces`.
    pub e: DMatrix<f64>,
    /// Diagonal boundary matrices `B_k` over face nodes.
    pub b: Vec<Vec<f64>>,
    pub faces: Vec<FaceNode>,
    pub pairs_high: Vec<NodePair>,
    pub pairs_low: Vec<NodePair>,
    pub lines: Vec<Line>,
    pub subcell: SubcellOperators,
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

fn pairs_from(s: &DMatrix<f64>, axis: usize) -> Vec<NodePair> {
    let scale = s.amax().max(f64::MIN_POSITIVE);
    let mut pairs = Vec::new();
    for i in 0..s.nrows() {
        for j in i + 1..s.ncols() {
            let v = s[(i, j)];
            if v.abs() > 1e-14 * scale {
                let mut normal = [0.0; 2];
                normal[axis] = v.signum();
                pairs.push(NodePair {
                    i,
                    j,
                    axis,
                    norm: v.abs(),
                    normal,
                });
            }
        }
    }
    pairs
}

impl OperatorSet {
    pub fn new(degree: usize, dim: usize, h: &[f64]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Operator(format!("dimension {dim} not supported")));
        }
        if h.len() < dim || h.iter().take(dim).any(|&x| !(x > 0.0)) {
            return Err(Error::Operator(format!("invalid element size {h:?}")));
        }
        let rule = lgl_rule(degree)?;
        let n1 = degree + 1;
        let d_ref = differentiation_matrix(&rule.nodes);
        let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(rule.weights.clone()));
        // h-independent 1D Q = diag(w) D_ref
        let q1 = &w * &d_ref;
        let ql1 = low_order_q_1d(n1);
        let subcell = build_subcell_operators(n1)?;

        let (mut q, mut q_low, mass, faces, lines, hh);
        match dim {
            1 => {
                hh = [h[0], h[0]];
                q = vec![q1.clone()];
                q_low = vec![ql1.clone()];
                mass = rule.weights.iter().map(|&wi| 0.5 * h[0] * wi).collect::<Vec<_>>();
                faces = vec![
                    FaceNode {
                        node: 0,
                        face: Face::West,
                        index: 0,
                        weight: 1.0,
                        normal: [-1.0, 0.0],
                    },
                    FaceNode {
                        node: n1 - 1,
                        face: Face::East,
                        index: 0,
                        weight: 1.0,
                        normal: [1.0, 0.0],
                    },
                ];
                lines = vec![Line {
                    axis: 0,
                    nodes: (0..n1).collect(),
                }];
            }
            _ => {
                hh = [h[0], h[1]];
                let mx = &w * (0.5 * h[0]);
                let my = &w * (0.5 * h[1]);
                // node index iy * n1 + ix: left factor acts on y, right factor on x
                q = vec![kron(&my, &q1), kron(&q1, &mx)];
                q_low = vec![kron(&my, &ql1), kron(&ql1, &mx)];
                mass = kron(&my, &mx).diagonal().iter().copied().collect();
                let mut f = Vec::with_capacity(4 * n1);
                for face in Face::ALL {
                    for k in 0..n1 {
                        let (node, weight) = match face {
                            Face::West => (k * n1, 0.5 * h[1] * rule.weights[k]),
                            Face::East => (k * n1 + n1 - 1, 0.5 * h[1] * rule.weights[k]),
                            Face::South => (k, 0.5 * h[0] * rule.weights[k]),
                            Face::North => ((n1 - 1) * n1 + k, 0.5 * h[0] * rule.weights[k]),
                        };
                        f.push(FaceNode {
                            node,
                            face,
                            index: k,
                            weight,
                            normal: face.normal(),
                        });
                    }
                }
                faces = f;
                let mut ls = Vec::with_capacity(2 * n1);
                for iy in 0..n1 {
                    ls.push(Line {
                        axis: 0,
                        nodes: (0..n1).map(|ix| iy * n1 + ix).collect(),
                    });
                }
                for ix in 0..n1 {
                    ls.push(Line {
                        axis: 1,
                        nodes: (0..n1).map(|iy| iy * n1 + ix).collect(),
                    });
                }
                lines = ls;
            }
        }
        let n = mass.len();
        let minv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            mass.iter().map(|m| 1.0 / m),
        ));
        let d = q.iter().map(|qk| &minv * qk).collect();

        let mut e = DMatrix::zeros(faces.len(), n);
        for (r, fnode) in faces.iter().enumerate() {
            e[(r, fnode.node)] = 1.0;
        }
        let b = (0..dim)
            .map(|k| {
                faces
                    .iter()
                    .map(|f| f.weight * f.normal[k])
                    .collect::<Vec<_>>()
            })
            .collect();

        let mut pairs_high = Vec::new();
        let mut pairs_low = Vec::new();
        for k in 0..dim {
            pairs_high.extend(pairs_from(&(&q[k] - q[k].transpose()), k));
            pairs_low.extend(pairs_from(&(&q_low[k] - q_low[k].transpose()), k));
        }
        // keep operators tidy for callers that only use 1D
        q.truncate(dim);
        q_low.truncate(dim);

        Ok(OperatorSet {
            dim,
            degree,
            n1,
            n,
            h: hh,
            rule,
            d_ref,
            mass,
            q,
            d,
            q_low,
            e,
            b,
            faces,
            pairs_high,
            pairs_low,
            lines,
            subcell,
        })
    }

    /// Number of blending coefficients per element (all lines concatenated).
    pub fn num_coefficients(&self) -> usize {
        self.lines.len() * self.subcell.l
    }

    /// `E^T B_k E` as a dense `n x n` matrix.
    pub fn boundary_matrix(&self, axis: usize) -> DMatrix<f64> {
        self.e.transpose() * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.b[axis].clone())) * &self.e
    }

    /// Reference coordinates of node `i` on `[-1, 1]^d`.
    pub fn reference_coords(&self, i: usize) -> [f64; 2] {
        let x = &self.rule.nodes;
        if self.dim == 1 {
            [x[i], 0.0]
        } else {
            [x[i % self.n1], x[i / self.n1]]
        }
    }

    /// Quadrature weight (reference, product in 2D) of node `i`.
    pub fn reference_weight(&self, i: usize) -> f64 {
        let w = &self.rule.weights;
        if self.dim == 1 {
            w[i]
        } else {
            w[i % self.n1] * w[i / self.n1]
        }
    }
}

/// Convenience constructor matching the operation name used in the docs.
pub fn build_operators(degree: usize, dim: usize, h: &[f64]) -> Result<OperatorSet> {
    OperatorSet::new(degree, dim, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_n1_is_trapezoid() {
        let r = lgl_rule(1).unwrap();
        assert_eq!(r.nodes, vec![-1.0, 1.0]);
        assert!((r.weights[0] - 1.0).abs() < 1e-15 && (r.weights[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rule_n2_is_simpson() {
        let r = lgl_rule(2).unwrap();
        assert_eq!(r.nodes, vec![-1.0, 0.0, 1.0]);
        for (w, e) in r.weights.iter().zip([1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0]) {
            assert!((w - e).abs() < 1e-15);
        }
    }

    #[test]
    fn rule_n0_rejected() {
        assert!(matches!(lgl_rule(0), Err(Error::InvalidDegree(0))));
    }

    #[test]
    fn rule_n4_exactness_boundary() {
        let r = lgl_rule(4).unwrap();
        let sum: f64 = r.weights.iter().sum();
        assert!((sum - 2.0).abs() < 1e-14);
        // exact through degree 2N - 1 = 7, first failure at x^8
        let x7 = r.integrate(|x| x.powi(7));
        assert!(x7.abs() < 1e-15);
        let x6 = r.integrate(|x| x.powi(6));
        assert!((x6 - 2.0 / 7.0).abs() < 1e-14);
        let x8 = r.integrate(|x| x.powi(8));
        assert!((x8 - 2.0 / 9.0).abs() > 1e-3);
    }

    #[test]
    fn d_for_linear_elements() {
        let ops = OperatorSet::new(1, 1, &[2.0]).unwrap();
        let expect = [[-0.5, 0.5], [-0.5, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((ops.d[0][(i, j)] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sbp_boundary_pattern_n3() {
        let ops = OperatorSet::new(3, 1, &[0.7]).unwrap();
        let s = &ops.q[0] + ops.q[0].transpose();
        let mut b = DMatrix::zeros(4, 4);
        b[(0, 0)] = -1.0;
        b[(3, 3)] = 1.0;
        assert!((s - b).amax() < 1e-13);
    }

    #[test]
    fn subcell_n2_matrices() {
        let s = build_subcell_operators(2).unwrap();
        let delta = s.delta_matrix();
        let r = s.r_matrix();
        assert_eq!(
            delta,
            DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0])
        );
        assert_eq!(r, DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 1.0, 1.0]));
        let basis = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let (feas, cons) = subcell_identity_residuals(&s, &basis);
        assert_eq!(feas, 0.0);
        assert_eq!(cons, 0.0);
    }

    #[test]
    fn subcell_rejects_single_node() {
        assert!(build_subcell_operators(1).is_err());
    }

    #[test]
    fn matrix_free_matches_dense() {
        let s = build_subcell_operators(5).unwrap();
        let x = [0.3, -1.0, 2.0, 0.5, 0.25];
        let w = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let mut y = [0.0; 6];
        s.apply_r(&x, &mut y);
        let dense = s.r_matrix() * nalgebra::DVector::from_row_slice(&x);
        assert!((nalgebra::DVector::from_row_slice(&y) - dense).amax() < 1e-15);
        let mut z = [0.0; 5];
        s.apply_delta(&w, &mut z);
        let dense = s.delta_matrix() * nalgebra::DVector::from_row_slice(&w);
        assert!((nalgebra::DVector::from_row_slice(&z) - dense).amax() < 1e-15);
        let mut t = [0.0; 6];
        s.apply_delta_t(&x, &mut t);
        let dense = s.delta_matrix().transpose() * nalgebra::DVector::from_row_slice(&x);
        assert!((nalgebra::DVector::from_row_slice(&t) - dense).amax() < 1e-15);
    }

    #[test]
    fn low_order_pairs_n2() {
        let ops = OperatorSet::new(2, 1, &[1.0]).unwrap();
        assert_eq!(ops.pairs_low.len(), 2);
        for p in &ops.pairs_low {
            assert_eq!(p.j, p.i + 1);
            assert!((p.norm - 1.0).abs() < 1e-15);
            assert_eq!(p.normal, [1.0, 0.0]);
        }
    }

    #[test]
    fn face_ordering_2d() {
        let ops = OperatorSet::new(2, 2, &[1.0, 1.0]).unwrap();
        let faces: Vec<_> = ops.faces.iter().map(|f| (f.face, f.node)).collect();
        assert_eq!(faces[0], (Face::West, 0));
        assert_eq!(faces[2], (Face::West, 6));
        assert_eq!(faces[3], (Face::East, 2));
        assert_eq!(faces[6], (Face::South, 0));
        assert_eq!(faces[9], (Face::North, 6));
        assert_eq!(ops.num_coefficients(), 2 * 3 * 4);
    }
}
