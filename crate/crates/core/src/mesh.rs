//! Uniform Cartesian meshes of line or quadrilateral elements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{Face, OperatorSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    /// Exterior states frozen to the initial trace.
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub dim: usize,
    /// Elements per axis; the second entry is 1 in 1D.
    pub cells: [usize; 2],
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub h: [f64; 2],
    pub boundary: Boundary,
}

impl Mesh {
    pub fn line(lower: f64, upper: f64, cells: usize, boundary: Boundary) -> Result<Mesh> {
        Mesh::new(1, [lower, 0.0], [upper, 1.0], [cells, 1], boundary)
    }

    pub fn rectangle(
        lower: [f64; 2],
        upper: [f64; 2],
        cells: [usize; 2],
        boundary: Boundary,
    ) -> Result<Mesh> {
        Mesh::new(2, lower, upper, cells, boundary)
    }

    fn new(
        dim: usize,
        lower: [f64; 2],
        upper: [f64; 2],
        cells: [usize; 2],
        boundary: Boundary,
    ) -> Result<Mesh> {
        for k in 0..dim {
            if cells[k] == 0 || !(upper[k] > lower[k]) {
                return Err(Error::Config(format!(
                    "invalid mesh along axis {k}: {} cells on [{}, {}]",
                    cells[k], lower[k], upper[k]
                )));
            }
        }
        let h = [
            (upper[0] - lower[0]) / cells[0] as f64,
            (upper[1] - lower[1]) / cells[1] as f64,
        ];
        Ok(Mesh {
            dim,
            cells,
            lower,
            upper,
            h,
            boundary,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn element_index(&self, ex: usize, ey: usize) -> usize {
        ey * self.cells[0] + ex
    }

    pub fn element_coords(&self, e: usize) -> (usize, usize) {
        (e % self.cells[0], e / self.cells[0])
    }

    /// Neighbor across `face`, or `None` on a non-periodic domain boundary.
    pub fn neighbor(&self, e: usize, face: Face) -> Option<usize> {
        let (ex, ey) = self.element_coords(e);
        let [mx, my] = self.cells;
        let periodic = self.boundary == Boundary::Periodic;
        let step = |i: usize, m: usize, forward: bool| -> Option<usize> {
            match (forward, i) {
                (true, i) if i + 1 < m => Some(i + 1),
                (true, _) => periodic.then_some(0),
                (false, 0) => periodic.then_some(m - 1),
                (false, i) => Some(i - 1),
            }
        };
        match face {
            Face::West => step(ex, mx, false).map(|x| self.element_index(x, ey)),
            Face::East => step(ex, mx, true).map(|x| self.element_index(x, ey)),
            Face::South if self.dim == 2 => step(ey, my, false).map(|y| self.element_index(ex, y)),
            Face::North if self.dim == 2 => step(ey, my, true).map(|y| self.element_index(ex, y)),
            _ => None,
        }
    }

    pub fn element_center(&self, e: usize) -> [f64; 2] {
        let (ex, ey) = self.element_coords(e);
        [
            self.lower[0] + (ex as f64 + 0.5) * self.h[0],
            self.lower[1] + (ey as f64 + 0.5) * self.h[1],
        ]
    }

    /// Physical coordinates of node `i` of element `e`.
    pub fn node_coords(&self, ops: &OperatorSet, e: usize, i: usize) -> [f64; 2] {
        let c = self.element_center(e);
        let r = ops.reference_coords(i);
        if self.dim == 1 {
            [c[0] + 0.5 * self.h[0] * r[0], 0.0]
        } else {
            [c[0] + 0.5 * self.h[0] * r[0], c[1] + 0.5 * self.h[1] * r[1]]
        }
    }

    pub fn all_node_coords(&self, ops: &OperatorSet) -> Vec<[f64; 2]> {
        (0..self.num_elements())
            .flat_map(|e| (0..ops.n).map(move |i| (e, i)))
            .map(|(e, i)| self.node_coords(ops, e, i))
            .collect()
    }

    /// Smallest element width, used as `dx` in CFL estimates.
    pub fn dx(&self) -> f64 {
        if self.dim == 1 {
            self.h[0]
        } else {
            self.h[0].min(self.h[1])
        }
    }
}
