//! Uniform tensor-product meshes with trilinear (Q1) elements.

use serde::{Deserialize, Serialize};

use crate::effective::Tensor3;
use crate::error::{Error, Result};
use crate::numerics::SparseOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshMode {
    /// One-dimensional fascicle along `x1`.
    Interval,
    /// Box `(0, L1) x (0, L2) x (0, L3)` with lateral boundary `Sigma`.
    Box,
}

/// Node ordering is x1-fastest: `index = i + n1 * (j + n2 * k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroMesh {
    mode: MeshMode,
    lengths: [f64; 3],
    nodes: [usize; 3],
}

impl MacroMesh {
    /// `nodes` counts both end points.
    pub fn interval(length: f64, nodes: usize) -> Result<Self> {
        Self::new(MeshMode::Interval, [length, 1.0, 1.0], [nodes, 1, 1])
    }

    pub fn cuboid(lengths: [f64; 3], nodes: [usize; 3]) -> Result<Self> {
        Self::new(MeshMode::Box, lengths, nodes)
    }

    pub fn new(mode: MeshMode, lengths: [f64; 3], nodes: [usize; 3]) -> Result<Self> {
        let axes = match mode {
            MeshMode::Interval => 1,
            MeshMode::Box => 3,
        };
        for d in 0..axes {
            if nodes[d] < 5 {
                return Err(Error::input(format!(
                    "axis {d} has {} nodes; at least 3 interior nodes are required",
                    nodes[d]
                )));
            }
            if !(lengths[d] > 0.0 && lengths[d].is_finite()) {
                return Err(Error::input(format!("length along axis {d} must be positive")));
            }
        }
        let (lengths, nodes) = match mode {
            MeshMode::Interval => ([lengths[0], 1.0, 1.0], [nodes[0], 1, 1]),
            MeshMode::Box => (lengths, nodes),
        };
        Ok(MacroMesh { mode, lengths, nodes })
    }

    pub fn mode(&self) -> MeshMode {
        self.mode
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn nodes(&self) -> [usize; 3] {
        self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.iter().product()
    }

    fn active_axes(&self) -> usize {
        match self.mode {
            MeshMode::Interval => 1,
            MeshMode::Box => 3,
        }
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        if axis >= self.active_axes() {
            return 1.0;
        }
        self.lengths[axis] / (self.nodes[axis] - 1) as f64
    }

    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.nodes[0];
        let rest = idx / self.nodes[0];
        [i, rest % self.nodes[1], rest / self.nodes[1]]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nodes[0] * (j + self.nodes[1] * k)
    }

    pub fn coord(&self, idx: usize) -> [f64; 3] {
        let ijk = self.ijk(idx);
        let mut x = [0.0; 3];
        for d in 0..self.active_axes() {
            x[d] = ijk[d] as f64 * self.spacing(d);
        }
        x
    }

    /// Node lies on one of the bases `S_0`, `S_L`.
    pub fn is_dirichlet(&self, idx: usize) -> bool {
        let i = idx % self.nodes[0];
        i == 0 || i == self.nodes[0] - 1
    }

    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&n| !self.is_dirichlet(n)).collect()
    }

    fn weight_1d(&self, axis: usize, i: usize) -> f64 {
        let h = self.spacing(axis);
        if i == 0 || i == self.nodes[axis] - 1 {
            0.5 * h
        } else {
            h
        }
    }

    /// `coef * d/dx1` stiffness with the transverse mass lumped: an
    /// independent 1D operator on every line of nodes along `x1`, weighted by
    /// the line's share of the cross section. Identical to [`Self::stiffness`]
    /// in interval mode.
    pub fn axial_stiffness(&self, coef: f64) -> Result<SparseOperator> {
        let [n1, n2, n3] = self.nodes;
        let c = coef / self.spacing(0);
        let mut t = Vec::with_capacity(4 * self.num_nodes());
        for k in 0..n3 {
            for j in 0..n2 {
                let w = match self.mode {
                    MeshMode::Interval => 1.0,
                    MeshMode::Box => self.weight_1d(1, j) * self.weight_1d(2, k),
                };
                for i in 0..n1 - 1 {
                    let (a, b) = (self.index(i, j, k), self.index(i + 1, j, k));
                    t.push((a, a, c * w));
                    t.push((b, b, c * w));
                    t.push((a, b, -c * w));
                    t.push((b, a, -c * w));
                }
            }
        }
        SparseOperator::from_triplets(self.num_nodes(), t)
    }

    /// Row sums of the consistent mass matrix.
    pub fn lumped_mass(&self) -> Vec<f64> {
        (0..self.num_nodes())
            .map(|n| {
                let ijk = self.ijk(n);
                (0..self.active_axes()).map(|d| self.weight_1d(d, ijk[d])).product()
            })
            .collect()
    }

    /// Lumped area of the lateral boundary `Sigma` carried by each node; zero
    /// in interval mode.
    pub fn lateral_area(&self) -> Vec<f64> {
        let mut area = vec![0.0; self.num_nodes()];
        if self.mode == MeshMode::Interval {
            return area;
        }
        for (n, a) in area.iter_mut().enumerate() {
            let [i, j, k] = self.ijk(n);
            let w1 = self.weight_1d(0, i);
            if j == 0 || j == self.nodes[1] - 1 {
                *a += w1 * self.weight_1d(2, k);
            }
            if k == 0 || k == self.nodes[2] - 1 {
                *a += w1 * self.weight_1d(1, j);
            }
        }
        area
    }

    /// Stiffness matrix of `-div(K grad u)` over all nodes, natural boundary
    /// conditions. In interval mode only `K[0][0]` enters.
    pub fn stiffness(&self, k: &Tensor3) -> Result<SparseOperator> {
        let n = self.num_nodes();
        if self.mode == MeshMode::Interval {
            let c = k[0][0] / self.spacing(0);
            let mut t = Vec::with_capacity(4 * n);
            for e in 0..self.nodes[0] - 1 {
                t.push((e, e, c));
                t.push((e + 1, e + 1, c));
                t.push((e, e + 1, -c));
                t.push((e + 1, e, -c));
            }
            return SparseOperator::from_triplets(n, t);
        }
        let h = [self.spacing(0), self.spacing(1), self.spacing(2)];
        // 1D element integrals on [0, h]: stiffness, mass, and int psi_a' psi_b
        let stiff = |d: usize, a: usize, b: usize| if a == b { 1.0 / h[d] } else { -1.0 / h[d] };
        let mass = |d: usize, a: usize, b: usize| if a == b { h[d] / 3.0 } else { h[d] / 6.0 };
        let mixed = |a: usize| if a == 0 { -0.5 } else { 0.5 };
        let corner = |a: usize| [a & 1, (a >> 1) & 1, (a >> 2) & 1];
        let mut local = [[0.0; 8]; 8];
        for a in 0..8 {
            for b in 0..8 {
                let (ca, cb) = (corner(a), corner(b));
                let mut sum = 0.0;
                for p in 0..3 {
                    for q in 0..3 {
                        if k[p][q] == 0.0 {
                            continue;
                        }
                        let mut prod = 1.0;
                        for d in 0..3 {
                            prod *= if d == p && d == q {
                                stiff(d, ca[d], cb[d])
                            } else if d == p {
                                mixed(ca[d])
                            } else if d == q {
                                mixed(cb[d])
                            } else {
                                mass(d, ca[d], cb[d])
                            };
                        }
                        sum += k[p][q] * prod;
                    }
                }
                local[a][b] = sum;
            }
        }
        let [n1, n2, n3] = self.nodes;
        let mut t = Vec::with_capacity(64 * (n1 - 1) * (n2 - 1) * (n3 - 1));
        for ek in 0..n3 - 1 {
            for ej in 0..n2 - 1 {
                for ei in 0..n1 - 1 {
                    let global = |a: usize| {
                        let c = corner(a);
                        self.index(ei + c[0], ej + c[1], ek + c[2])
                    };
                    for a in 0..8 {
                        for b in 0..8 {
                            if local[a][b] != 0.0 {
                                t.push((global(a), global(b), local[a][b]));
                            }
                        }
                    }
                }
            }
        }
        SparseOperator::from_triplets(n, t)
    }
}
