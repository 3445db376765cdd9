//! Initial conditions, domains and boundary conditions of the benchmark problems.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euler::{ConsState, GasModel, Primitive};
use crate::mesh::{Boundary, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    DensityWave,
    Sod,
    ModifiedSod,
    ShuOsher,
    Leblanc,
    Sedov,
    Khi,
}

impl Problem {
    pub const ALL: [Problem; 7] = [
        Problem::DensityWave,
        Problem::Sod,
        Problem::ModifiedSod,
        Problem::ShuOsher,
        Problem::Leblanc,
        Problem::Sedov,
        Problem::Khi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Problem::DensityWave => "density_wave",
            Problem::Sod => "sod",
            Problem::ModifiedSod => "modified_sod",
            Problem::ShuOsher => "shu_osher",
            Problem::Leblanc => "leblanc",
            Problem::Sedov => "sedov",
            Problem::Khi => "khi",
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Problem {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Problem::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| Error::UnknownProblem(s.to_string()))
    }
}

/// A fully specified benchmark on a given mesh resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemSpec {
    pub problem: Problem,
    pub dim: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub boundary: Boundary,
    pub gas: GasModel,
    pub t_final: f64,
    /// Elements per axis.
    pub cells: usize,
    /// Blast radius for Sedov, zero otherwise.
    pub r0: f64,
}

/// Look up a problem by name at `cells` elements per axis.
pub fn problem(name: &str, cells: usize) -> Result<ProblemSpec> {
    Ok(ProblemSpec::new(name.parse()?, cells))
}

fn prim(rho: f64, v: f64, p: f64) -> Primitive {
    Primitive {
        rho,
        vel: [v, 0.0],
        p,
    }
}

impl ProblemSpec {
    pub fn new(problem: Problem, cells: usize) -> Self {
        let line = |a: f64, b: f64, boundary, t_final| ProblemSpec {
            problem,
            dim: 1,
            lower: [a, 0.0],
            upper: [b, 1.0],
            boundary,
            gas: GasModel::default(),
            t_final,
            cells,
            r0: 0.0,
        };
        match problem {
            Problem::DensityWave => line(-1.0, 1.0, Boundary::Periodic, 1.0),
            Problem::Sod | Problem::ModifiedSod => line(0.0, 1.0, Boundary::Dirichlet, 0.2),
            Problem::ShuOsher => line(-5.0, 5.0, Boundary::Dirichlet, 1.8),
            Problem::Leblanc => line(-10.0, 10.0, Boundary::Dirichlet, 1e-4),
            Problem::Sedov => ProblemSpec {
                problem,
                dim: 2,
                lower: [-1.5; 2],
                upper: [1.5; 2],
                boundary: Boundary::Periodic,
                gas: GasModel::default(),
                t_final: 1.0,
                cells,
                r0: 4.0 * 3.0 / cells.max(1) as f64,
            },
            Problem::Khi => ProblemSpec {
                problem,
                dim: 2,
                lower: [-1.0; 2],
                upper: [1.0; 2],
                boundary: Boundary::Periodic,
                gas: GasModel::default(),
                t_final: 25.0,
                cells,
                r0: 0.0,
            },
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gas = GasModel::new(gamma)?;
        Ok(self)
    }

    pub fn mesh(&self) -> Result<Mesh> {
        match self.dim {
            1 => Mesh::line(self.lower[0], self.upper[0], self.cells, self.boundary),
            _ => Mesh::rectangle(self.lower, self.upper, [self.cells; 2], self.boundary),
        }
    }

    pub fn initial_primitive(&self, x: [f64; 2]) -> Primitive {
        let split = |left: Primitive, right: Primitive, at: f64| if x[0] < at { left } else { right };
        match self.problem {
            Problem::DensityWave => prim(1.0 + 0.5 * (PI * x[0]).sin(), 1.7, 1.0),
            Problem::Sod => split(prim(1.0, 0.0, 1.0), prim(0.125, 0.0, 0.1), 0.5),
            Problem::ModifiedSod => split(prim(1.0, 0.75, 1.0), prim(0.125, 0.0, 0.1), 0.3),
            Problem::ShuOsher => split(
                prim(3.857143, 2.629369, 10.3333),
                prim(1.0 + 0.2 * (5.0 * x[0]).sin(), 0.0, 1.0),
                -4.0,
            ),
            Problem::Leblanc => split(prim(2.0, 0.0, 1e9), prim(1e-3, 0.0, 1.0), 0.0),
            Problem::Sedov => {
                let r = x[0].hypot(x[1]);
                let p = if r < self.r0 {
                    0.4 / (PI * self.r0 * self.r0)
                } else {
                    1e-5
                };
                Primitive {
                    rho: 1.0,
                    vel: [0.0, 0.0],
                    p,
                }
            }
            Problem::Khi => {
                let b = (15.0 * x[1] + 7.5).tanh() - (15.0 * x[1] - 7.5).tanh();
                Primitive {
                    rho: 0.5 + 0.75 * b,
                    vel: [0.5 * (b - 1.0), 0.1 * (2.0 * PI * x[0]).sin()],
                    p: 1.0,
                }
            }
        }
    }

    pub fn initial_state(&self, x: [f64; 2]) -> ConsState {
        self.gas.prim_to_cons(&self.initial_primitive(x))
    }

    /// Analytic solution where one is available.
    pub fn exact_primitive(&self, x: [f64; 2], t: f64) -> Option<Primitive> {
        match self.problem {
            Problem::DensityWave => {
                // periodic in [-1, 1]
                let xi = x[0] - 1.7 * t;
                Some(prim(1.0 + 0.5 * (PI * xi).sin(), 1.7, 1.0))
            }
            Problem::Sod => {
                let left = prim(1.0, 0.0, 1.0);
                let right = prim(0.125, 0.0, 0.1);
                super::exact::exact_sod(x[0] - 0.5, t, &left, &right, &self.gas).ok()
            }
            _ => None,
        }
    }
}
