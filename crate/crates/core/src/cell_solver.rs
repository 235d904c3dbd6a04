//! Periodic Neumann cell problems on the voxel grid.
//!
//! For a region `D` (either `Y_e`, periodic in all directions, or `Y_i`,
//! periodic in `y1` only) and a direction `k`, the cell field `N` solves
//! `-Lap N = 0` in `D` with `grad N . nu = -nu_k` on the region boundary.
//! Discretely this is the 7-point finite-volume system
//! `a(N, phi) = sum_faces h^2 (-nu_k) phi`, where
//! `a(N, phi) = sum_links h (N_q - N_p)(phi_q - phi_p)`.
//! Equivalently `a(N + y_k, phi) = 0` when `y_k` is read through its
//! periodic link increments `h delta_{axis,k}`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CellGeometry, Region};
use crate::numerics::{cg_solve, norm2, project_zero_mean, CgOptions, Nullspace, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Extra,
    Intra,
}

impl Domain {
    pub fn region(self) -> Region {
        match self {
            Domain::Extra => Region::Extra,
            Domain::Intra => Region::Intra,
        }
    }

    pub fn wrap(self) -> [bool; 3] {
        match self {
            Domain::Extra => [true; 3],
            Domain::Intra => [true, false, false],
        }
    }
}

/// A link between two voxels of the same region, oriented along `+axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub tail: usize,
    pub head: usize,
    pub axis: usize,
}

/// Zero-mean solution of one cell problem.
#[derive(Debug, Clone)]
pub struct CellField {
    pub domain: Domain,
    /// Driving direction, 0-based.
    pub axis: usize,
    /// Global voxel index of each entry.
    pub voxels: Vec<usize>,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl CellField {
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }

    /// Same field shifted by a constant (the Neumann nullspace).
    pub fn shifted(&self, c: f64) -> CellField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v += c);
        out
    }
}

/// Discrete operator and connectivity of one region.
#[derive(Debug, Clone)]
pub struct CellSystem {
    domain: Domain,
    h: f64,
    voxels: Vec<usize>,
    links: Vec<Link>,
    /// Signed outward normal count per local voxel and axis.
    normal_sum: Vec<[i32; 3]>,
    operator: SparseOperator,
}

impl CellSystem {
    pub fn new(geom: &CellGeometry, domain: Domain) -> Result<Self> {
        let region = domain.region();
        let wrap = domain.wrap();
        let voxels: Vec<usize> = (0..geom.num_voxels())
            .filter(|&v| geom.labels()[v] == region)
            .collect();
        let mut local = vec![usize::MAX; geom.num_voxels()];
        for (l, &g) in voxels.iter().enumerate() {
            local[g] = l;
        }
        let mut links = Vec::new();
        let mut normal_sum = vec![[0i32; 3]; voxels.len()];
        for (p, &g) in voxels.iter().enumerate() {
            for axis in 0..3 {
                for sign in [1i8, -1] {
                    match geom.neighbor(g, axis, sign, wrap) {
                        Some(nb) if geom.labels()[nb] == region => {
                            if sign > 0 {
                                links.push(Link {
                                    tail: p,
                                    head: local[nb],
                                    axis,
                                });
                            }
                        }
                        Some(_) => normal_sum[p][axis] += sign as i32,
                        None => {
                            return Err(Error::geometry(format!(
                                "{domain:?} region reaches the lateral cell boundary at voxel {g}"
                            )))
                        }
                    }
                }
            }
        }
        let h = geom.voxel_size();
        let mut triplets = Vec::with_capacity(4 * links.len());
        for l in &links {
            triplets.push((l.tail, l.tail, h));
            triplets.push((l.head, l.head, h));
            triplets.push((l.tail, l.head, -h));
            triplets.push((l.head, l.tail, -h));
        }
        let operator = SparseOperator::from_triplets(voxels.len(), triplets)?.with_nullspace(Nullspace::Constants);
        Ok(CellSystem {
            domain,
            h,
            voxels,
            links,
            normal_sum,
            operator,
        })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn voxel_size(&self) -> f64 {
        self.h
    }

    pub fn voxels(&self) -> &[usize] {
        &self.voxels
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.operator
    }

    /// Neumann load `-h^2 sum_faces nu_k` for direction `axis`.
    pub fn rhs(&self, axis: usize) -> Vec<f64> {
        let w = self.h * self.h;
        self.normal_sum.iter().map(|n| -w * n[axis] as f64).collect()
    }

    /// Discrete divergence theorem: the outward normals of the region's
    /// boundary cancel exactly, face by face count.
    pub fn check_compatibility(&self, axis: usize) -> Result<()> {
        let net: i64 = self.normal_sum.iter().map(|n| n[axis] as i64).sum();
        if net != 0 {
            return Err(Error::geometry(format!(
                "Neumann data along axis {axis} does not integrate to zero ({net} unbalanced faces)"
            )));
        }
        Ok(())
    }

    /// Energy form `a(x, y)`.
    pub fn energy(&self, x: &[f64], y: &[f64]) -> f64 {
        self.links
            .iter()
            .map(|l| self.h * (x[l.head] - x[l.tail]) * (y[l.head] - y[l.tail]))
            .sum()
    }

    /// `||b - A N|| / ||b||` with the load projected to zero mean; absolute
    /// when the load vanishes.
    pub fn residual(&self, axis: usize, values: &[f64]) -> f64 {
        let mut b = self.rhs(axis);
        project_zero_mean(&mut b);
        let an = self.operator.matvec(values);
        let mut r: Vec<f64> = b.iter().zip(&an).map(|(b, a)| b - a).collect();
        project_zero_mean(&mut r);
        let bn = norm2(&b);
        if bn > 0.0 {
            norm2(&r) / bn
        } else {
            norm2(&r)
        }
    }

    pub fn solve(&self, axis: usize, tol: f64) -> Result<CellField> {
        if !(tol > 0.0) {
            return Err(Error::input(format!("cell solver tolerance {tol} must be positive")));
        }
        self.check_compatibility(axis)?;
        let opts = CgOptions {
            tol,
            nullspace: Nullspace::Constants,
            ..Default::default()
        };
        let (values, stats) = cg_solve(&self.operator, &self.rhs(axis), None, &opts)?;
        Ok(CellField {
            domain: self.domain,
            axis,
            voxels: self.voxels.clone(),
            values,
            iterations: stats.iterations,
            residual: stats.residual,
        })
    }
}

fn connected_system(geom: &CellGeometry, domain: Domain) -> Result<CellSystem> {
    if !geom.is_connected(domain.region(), domain.wrap()) {
        return Err(Error::geometry(format!("{domain:?} region is disconnected on the voxel grid")));
    }
    CellSystem::new(geom, domain)
}

/// Extracellular cell field `N_k^e` for `axis = k - 1`.
pub fn solve_cell_e(geom: &CellGeometry, axis: usize, tol: f64) -> Result<CellField> {
    if axis > 2 {
        return Err(Error::input(format!("axis {axis} out of range")));
    }
    connected_system(geom, Domain::Extra)?.solve(axis, tol)
}

/// All three extracellular cell fields, solved concurrently.
pub fn solve_cell_e_all(geom: &CellGeometry, tol: f64) -> Result<(CellSystem, [CellField; 3])> {
    let system = connected_system(geom, Domain::Extra)?;
    let mut fields: Vec<CellField> = (0..3)
        .into_par_iter()
        .map(|k| system.solve(k, tol))
        .collect::<Result<_>>()?;
    let n3 = fields.pop().unwrap();
    let n2 = fields.pop().unwrap();
    let n1 = fields.pop().unwrap();
    Ok((system, [n1, n2, n3]))
}

/// Intracellular cell field `N_1^i`.
pub fn solve_cell_i(geom: &CellGeometry, tol: f64) -> Result<(CellSystem, CellField)> {
    let system = connected_system(geom, Domain::Intra)?;
    let field = system.solve(0, tol)?;
    Ok((system, field))
}

/// Relative discrete residual of `field` on `geom`.
pub fn residual(field: &CellField, geom: &CellGeometry) -> Result<f64> {
    let system = CellSystem::new(geom, field.domain)?;
    if system.voxels() != field.voxels.as_slice() {
        return Err(Error::input("cell field does not match the geometry"));
    }
    Ok(system.residual(field.axis, &field.values))
}

/// `||grad N||_{L2}` from link differences.
pub fn gradient_norm(system: &CellSystem, field: &CellField) -> f64 {
    system.energy(&field.values, &field.values).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CellParams;

    fn lookup(field: &CellField, geom: &CellGeometry) -> Vec<Option<f64>> {
        let mut out = vec![None; geom.num_voxels()];
        for (&g, &v) in field.voxels.iter().zip(&field.values) {
            out[g] = Some(v);
        }
        out
    }

    #[test]
    fn no_inclusion_gives_zero_fields() {
        let geom = CellGeometry::without_inclusion(CellParams::canonical(16)).unwrap();
        for k in 0..3 {
            let f = solve_cell_e(&geom, k, 1e-10).unwrap();
            assert!(f.values.iter().all(|&v| v == 0.0));
            assert_eq!(residual(&f, &geom).unwrap(), 0.0);
        }
    }

    #[test]
    fn straight_cylinder_has_no_axial_corrector() {
        let mut p = CellParams::canonical(16);
        p.w_node = 1.0;
        let geom = CellGeometry::build(p).unwrap();
        let f = solve_cell_e(&geom, 0, 1e-10).unwrap();
        assert!(f.values.iter().all(|v| v.abs() < 1e-12));
        let (sys, fi) = solve_cell_i(&geom, 1e-10).unwrap();
        assert!(gradient_norm(&sys, &fi) < 1e-12);
    }

    #[test]
    fn transverse_field_has_mirror_parities() {
        let geom = CellGeometry::build(CellParams::canonical(16)).unwrap();
        let f = solve_cell_e(&geom, 1, 1e-10).unwrap();
        let vals = lookup(&f, &geom);
        let [n1, n2, n3] = geom.dims();
        let scale = f.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(scale > 1e-3);
        for k in 0..n3 {
            for j in 0..n2 {
                for i in 0..n1 {
                    let Some(v) = vals[geom.index(i, j, k)] else { continue };
                    let flip2 = vals[geom.index(i, n2 - 1 - j, k)].unwrap();
                    let flip3 = vals[geom.index(i, j, n3 - 1 - k)].unwrap();
                    assert!((v + flip2).abs() < 1e-7 * scale);
                    assert!((v - flip3).abs() < 1e-7 * scale);
                }
            }
        }
    }

    #[test]
    fn residual_is_gauge_invariant_and_below_tol() {
        let geom = CellGeometry::build(CellParams::canonical(16)).unwrap();
        let f = solve_cell_e(&geom, 0, 1e-9).unwrap();
        let r = residual(&f, &geom).unwrap();
        assert!(r <= 1e-9);
        assert!(f.mean().abs() < 1e-14);
        let r_shift = residual(&f.shifted(3.5), &geom).unwrap();
        assert!((r - r_shift).abs() < 1e-12);
    }

    #[test]
    fn compatibility_holds_for_every_axis() {
        let geom = CellGeometry::build(CellParams::canonical(16)).unwrap();
        for domain in [Domain::Extra, Domain::Intra] {
            let sys = CellSystem::new(&geom, domain).unwrap();
            for k in 0..3 {
                sys.check_compatibility(k).unwrap();
                let total: f64 = sys.rhs(k).iter().sum();
                assert!(total.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn extrema_sit_next_to_the_obstacle() {
        let geom = CellGeometry::build(CellParams::canonical(16)).unwrap();
        let sys = CellSystem::new(&geom, Domain::Extra).unwrap();
        let f = sys.solve(0, 1e-10).unwrap();
        let rhs = sys.rhs(0);
        let (imax, _) = f.values.iter().enumerate().fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        let (imin, _) = f.values.iter().enumerate().fold((0, f64::MAX), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
        // voxels with a boundary face along any axis
        let on_surface = |p: usize| {
            let g = sys.voxels()[p];
            (0..3).any(|axis| {
                [1i8, -1].iter().any(|&s| {
                    let nb = geom.neighbor(g, axis, s, [true; 3]).unwrap();
                    geom.labels()[nb] != Region::Extra
                })
            })
        };
        assert!(on_surface(imax) && on_surface(imin));
        assert!(rhs.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn disconnected_region_is_rejected() {
        // intracellular slab broken by an extracellular layer across y1
        let n = 8;
        let mut labels = vec![Region::Extra; n * n * n];
        for k in 2..6 {
            for j in 2..6 {
                for i in 0..n {
                    if i != 3 {
                        labels[i + n * (j + n * k)] = Region::Intra;
                    }
                }
            }
        }
        let geom = CellGeometry::from_labels([n, n, n], 1.0 / n as f64, labels).unwrap();
        assert!(geom.is_connected(Region::Extra, [true; 3]));
        // still connected through the periodic wrap in y1
        assert!(solve_cell_i(&geom, 1e-8).is_ok());
        let mut labels = geom.labels().to_vec();
        for k in 2..6 {
            for j in 2..6 {
                labels[5 + n * (j + n * k)] = Region::Extra;
            }
        }
        let geom = CellGeometry::from_labels([n, n, n], 1.0 / n as f64, labels).unwrap();
        assert!(matches!(solve_cell_i(&geom, 1e-8), Err(Error::Geometry(_))));
    }
}
