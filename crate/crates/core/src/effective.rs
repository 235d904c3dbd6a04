//! Effective coefficients from cell fields.
//!
//! The tensors are assembled with the link (face-centered) quadrature of the
//! cell solver:
//! `L_kl = (a / |Gamma|) sum_{links along l} h^3 (D N_k + delta_kl)`, where
//! `D N` is the link difference quotient. At convergence this equals the
//! energy form `Q_kl = (a / |Gamma|) a(N_k + y_k, N_l + y_l)`, so the
//! linear and quadratic assemblies agree up to the solver tolerance.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell_solver::{solve_cell_e_all, solve_cell_i, CellField, CellSystem, Domain};
use crate::error::{Error, Result};
use crate::geometry::{CellGeometry, CellKind};
use crate::membrane::FhnParams;

pub type Tensor3 = [[f64; 3]; 3];

/// Current version of the model file layout.
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveModel {
    pub a_i_eff: f64,
    pub a_e_eff: Tensor3,
    /// `|Gamma| / |Y|`.
    pub gamma_density: f64,
    pub fhn: FhnParams,
    /// Factor applied to the boundary flux `J^e`; `|Y| / |Gamma|` by default.
    pub boundary_scale: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    a_i_eff: f64,
    a_e_eff: Vec<f64>,
    gamma_density: f64,
    c_m: f64,
    theta: f64,
    a: f64,
    b: f64,
    boundary_scale: Option<f64>,
}

impl EffectiveModel {
    pub fn validate(&self) -> Result<()> {
        self.fhn.validate()?;
        if !(self.a_i_eff > 0.0 && self.a_i_eff.is_finite()) {
            return Err(Error::input(format!("a_i_eff = {} must be positive", self.a_i_eff)));
        }
        if !(self.gamma_density > 0.0) || !(self.boundary_scale > 0.0) {
            return Err(Error::input("gamma_density and boundary_scale must be positive"));
        }
        if symmetry_defect(&self.a_e_eff) > 1e-6 {
            return Err(Error::input("a_e_eff is not symmetric"));
        }
        if min_eigenvalue(&self.a_e_eff) <= 0.0 {
            return Err(Error::input("a_e_eff is not positive definite"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        let file = ModelFile {
            version: MODEL_VERSION,
            a_i_eff: self.a_i_eff,
            a_e_eff: self.a_e_eff.iter().flatten().copied().collect(),
            gamma_density: self.gamma_density,
            c_m: self.fhn.c_m,
            theta: self.fhn.theta,
            a: self.fhn.a,
            b: self.fhn.b,
            boundary_scale: Some(self.boundary_scale),
        };
        toml::to_string(&file).expect("model file serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| Error::Format(format!("model file: {e}")))?;
        if file.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "model file version {} is not supported (expected {MODEL_VERSION})",
                file.version
            )));
        }
        if file.a_e_eff.len() != 9 {
            return Err(Error::Format(format!(
                "a_e_eff must list 9 entries row-major, found {}",
                file.a_e_eff.len()
            )));
        }
        let mut a_e_eff = [[0.0; 3]; 3];
        for (idx, v) in file.a_e_eff.iter().enumerate() {
            a_e_eff[idx / 3][idx % 3] = *v;
        }
        let model = EffectiveModel {
            a_i_eff: file.a_i_eff,
            a_e_eff,
            gamma_density: file.gamma_density,
            fhn: FhnParams {
                theta: file.theta,
                a: file.a,
                b: file.b,
                c_m: file.c_m,
                lambda: 0.0,
            },
            boundary_scale: file.boundary_scale.unwrap_or(1.0 / file.gamma_density),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

/// Symmetrized tensor plus the raw assembly it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TensorAssembly {
    pub tensor: Tensor3,
    pub raw: Tensor3,
    /// `||A - A^T||_F / ||A||_F` of the raw assembly.
    pub asymmetry: f64,
    /// Asymmetry exceeded ten times the solver tolerance.
    pub under_converged: bool,
}

/// Linear-form and energy-form assemblies of the same coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticFormCheck {
    pub linear: Tensor3,
    pub quadratic: Tensor3,
    /// Largest entrywise difference relative to the largest entry.
    pub relative_difference: f64,
}

fn field_on(system: &CellSystem, field: &CellField) -> Result<()> {
    if field.voxels.as_slice() != system.voxels() || field.domain != system.domain() {
        return Err(Error::input("cell field does not belong to this region"));
    }
    Ok(())
}

/// `(|Gamma| / a) L` for direction pairs `(k, l)` over the fields supplied.
fn linear_form(system: &CellSystem, fields: &[&CellField]) -> Vec<Vec<f64>> {
    let h = system.voxel_size();
    let h3 = h * h * h;
    let n = fields.len();
    let mut out = vec![vec![0.0; n]; n];
    for link in system.links() {
        if link.axis >= n {
            continue;
        }
        let l = link.axis;
        for (k, f) in fields.iter().enumerate() {
            let d = (f.values[link.head] - f.values[link.tail]) / h;
            out[k][l] += h3 * (d + if k == l { 1.0 } else { 0.0 });
        }
    }
    out
}

fn quadratic_form(system: &CellSystem, fields: &[&CellField]) -> Vec<Vec<f64>> {
    let h = system.voxel_size();
    let h3 = h * h * h;
    let n = fields.len();
    let mut out = vec![vec![0.0; n]; n];
    for link in system.links() {
        let grad: Vec<f64> = fields
            .iter()
            .enumerate()
            .map(|(k, f)| (f.values[link.head] - f.values[link.tail]) / h + if k == link.axis { 1.0 } else { 0.0 })
            .collect();
        for k in 0..n {
            for l in 0..n {
                out[k][l] += h3 * grad[k] * grad[l];
            }
        }
    }
    out
}

fn to_tensor(m: &[Vec<f64>], scale: f64) -> Tensor3 {
    let mut t = [[0.0; 3]; 3];
    for (k, row) in m.iter().enumerate() {
        for (l, v) in row.iter().enumerate() {
            t[k][l] = scale * v;
        }
    }
    t
}

pub fn symmetry_defect(t: &Tensor3) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..3 {
        for l in 0..3 {
            num += (t[k][l] - t[l][k]).powi(2);
            den += t[k][l].powi(2);
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

pub fn symmetrize(t: &Tensor3) -> Tensor3 {
    let mut s = [[0.0; 3]; 3];
    for k in 0..3 {
        for l in 0..3 {
            s[k][l] = 0.5 * (t[k][l] + t[l][k]);
        }
    }
    s
}

/// Eigenvalues of a symmetric 3x3 matrix by cyclic Jacobi rotations, ascending.
pub fn eigenvalues(t: &Tensor3) -> [f64; 3] {
    let mut a = symmetrize(t);
    for _ in 0..50 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let diag = a[0][0].powi(2) + a[1][1].powi(2) + a[2][2].powi(2);
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut next = a;
            for r in 0..3 {
                next[r][p] = c * a[r][p] - s * a[r][q];
                next[r][q] = s * a[r][p] + c * a[r][q];
            }
            let tmp = next;
            for r in 0..3 {
                next[p][r] = c * tmp[p][r] - s * tmp[q][r];
                next[q][r] = s * tmp[p][r] + c * tmp[q][r];
            }
            a = next;
        }
    }
    let mut ev = [a[0][0], a[1][1], a[2][2]];
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(t: &Tensor3) -> f64 {
    eigenvalues(t)[0]
}

/// `a_e_eff` from the three extracellular fields.
pub fn assemble_a_e(geom: &CellGeometry, fields: &[CellField; 3], a_e: f64, solver_tol: f64) -> Result<TensorAssembly> {
    let system = CellSystem::new(geom, Domain::Extra)?;
    assemble_a_e_on(&system, geom.gamma_normalization(), fields, a_e, solver_tol)
}

pub fn assemble_a_e_on(
    system: &CellSystem,
    gamma: f64,
    fields: &[CellField; 3],
    a_e: f64,
    solver_tol: f64,
) -> Result<TensorAssembly> {
    for (k, f) in fields.iter().enumerate() {
        field_on(system, f)?;
        if f.axis != k {
            return Err(Error::input(format!("field {k} solves the problem for axis {}", f.axis)));
        }
    }
    let refs: Vec<&CellField> = fields.iter().collect();
    let raw = to_tensor(&linear_form(system, &refs), a_e / gamma);
    let asymmetry = symmetry_defect(&raw);
    Ok(TensorAssembly {
        tensor: symmetrize(&raw),
        raw,
        asymmetry,
        under_converged: asymmetry > 10.0 * solver_tol,
    })
}

/// `a_i_eff` from `N_1^i`.
pub fn assemble_a_i(geom: &CellGeometry, field: &CellField, a_i: f64) -> Result<f64> {
    let system = CellSystem::new(geom, Domain::Intra)?;
    assemble_a_i_on(&system, geom.gamma_normalization(), field, a_i)
}

pub fn assemble_a_i_on(system: &CellSystem, gamma: f64, field: &CellField, a_i: f64) -> Result<f64> {
    field_on(system, field)?;
    let value = a_i / gamma * linear_form(system, &[field])[0][0];
    if !(value > 0.0) {
        return Err(Error::geometry(format!(
            "a_i_eff = {value} is not positive; the intracellular field is under-converged or the geometry is invalid"
        )));
    }
    Ok(value)
}

/// Linear versus quadratic assembly on `fields` (one field gives the scalar check).
pub fn quadratic_form_check(system: &CellSystem, gamma: f64, fields: &[&CellField], a: f64) -> Result<QuadraticFormCheck> {
    for f in fields {
        field_on(system, f)?;
    }
    let linear = to_tensor(&linear_form(system, fields), a / gamma);
    let quadratic = to_tensor(&quadratic_form(system, fields), a / gamma);
    let n = fields.len();
    let mut max_entry = 0.0f64;
    let mut max_diff = 0.0f64;
    for k in 0..n {
        for l in 0..n {
            max_entry = max_entry.max(linear[k][l].abs()).max(quadratic[k][l].abs());
            max_diff = max_diff.max((linear[k][l] - quadratic[k][l]).abs());
        }
    }
    Ok(QuadraticFormCheck {
        linear,
        quadratic,
        relative_difference: if max_entry > 0.0 { max_diff / max_entry } else { 0.0 },
    })
}

/// Everything the cell stage produces.
#[derive(Debug, Clone)]
pub struct CellReport {
    pub model: EffectiveModel,
    pub a_e: TensorAssembly,
    pub a_e_check: QuadraticFormCheck,
    /// `None` when the cell has no intracellular region and the closed form
    /// `pi r0^2 a_i / |Gamma|` was used instead.
    pub a_i_check: Option<QuadraticFormCheck>,
    pub a_i_gradient_norm: Option<f64>,
    pub extra_fields: [CellField; 3],
    pub intra_field: Option<CellField>,
    pub iterations: Vec<usize>,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conductivities {
    pub a_i: f64,
    pub a_e: f64,
}

impl Default for Conductivities {
    fn default() -> Self {
        Conductivities { a_i: 1.0, a_e: 1.0 }
    }
}

/// Solves all cell problems on `geom` and assembles the effective model.
pub fn compute_model(
    geom: &CellGeometry,
    sigma: Conductivities,
    fhn: FhnParams,
    tol: f64,
    boundary_scale: Option<f64>,
) -> Result<CellReport> {
    if !(sigma.a_i > 0.0 && sigma.a_e > 0.0) {
        return Err(Error::input("microscale conductivities must be positive"));
    }
    fhn.validate()?;
    let gamma = geom.gamma_normalization();
    let (e_system, extra_fields) = solve_cell_e_all(geom, tol)?;
    let a_e = assemble_a_e_on(&e_system, gamma, &extra_fields, sigma.a_e, tol)?;
    let a_e_check = quadratic_form_check(&e_system, gamma, &extra_fields.iter().collect::<Vec<_>>(), sigma.a_e)?;
    let mut iterations: Vec<usize> = extra_fields.iter().map(|f| f.iterations).collect();
    let mut residuals: Vec<f64> = extra_fields.iter().map(|f| f.residual).collect();

    let (a_i_eff, a_i_check, a_i_gradient_norm, intra_field) = match geom.kind() {
        CellKind::NoInclusion(p) => (sigma.a_i * p.analytic_intra_volume() / gamma, None, None, None),
        _ => {
            let (i_system, field) = solve_cell_i(geom, tol)?;
            let value = assemble_a_i_on(&i_system, gamma, &field, sigma.a_i)?;
            let check = quadratic_form_check(&i_system, gamma, &[&field], sigma.a_i)?;
            let grad = crate::cell_solver::gradient_norm(&i_system, &field);
            iterations.push(field.iterations);
            residuals.push(field.residual);
            (value, Some(check), Some(grad), Some(field))
        }
    };
    let cell = geom.measures().cell;
    let model = EffectiveModel {
        a_i_eff,
        a_e_eff: a_e.tensor,
        gamma_density: gamma / cell,
        fhn,
        boundary_scale: boundary_scale.unwrap_or(cell / gamma),
    };
    Ok(CellReport {
        model,
        a_e,
        a_e_check,
        a_i_check,
        a_i_gradient_norm,
        extra_fields,
        intra_field,
        iterations,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CellParams;

    #[test]
    fn eigenvalues_of_known_matrix() {
        let t = [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]];
        let ev = eigenvalues(&t);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12 && (ev[2] - 5.0).abs() < 1e-12);
        let t = [[4.0, 1.0, 2.0], [1.0, 3.0, 0.5], [2.0, 0.5, 6.0]];
        let ev = eigenvalues(&t);
        let trace: f64 = ev.iter().sum();
        assert!((trace - 13.0).abs() < 1e-12);
    }

    #[test]
    fn no_inclusion_model_is_isotropic() {
        let geom = CellGeometry::without_inclusion(CellParams::canonical(16)).unwrap();
        let rep = compute_model(&geom, Conductivities::default(), FhnParams::default(), 1e-10, None).unwrap();
        let expect = 1.0 / (2.0 * std::f64::consts::PI * 0.25 * 0.2);
        for k in 0..3 {
            for l in 0..3 {
                let want = if k == l { expect } else { 0.0 };
                assert!((rep.model.a_e_eff[k][l] - want).abs() < 1e-10);
            }
        }
        assert!((expect - 3.1831).abs() < 1e-4);
        assert!((rep.model.a_i_eff - 0.625).abs() < 1e-12);
    }

    #[test]
    fn a_i_scales_linearly() {
        let geom = CellGeometry::build(CellParams::canonical(16)).unwrap();
        let (sys, f) = solve_cell_i(&geom, 1e-10).unwrap();
        let g = geom.gamma_normalization();
        let one = assemble_a_i_on(&sys, g, &f, 1.0).unwrap();
        let two = assemble_a_i_on(&sys, g, &f, 2.0).unwrap();
        assert_eq!(two, 2.0 * one);
    }

    #[test]
    fn model_file_roundtrip() {
        let model = EffectiveModel {
            a_i_eff: 0.6,
            a_e_eff: [[1.5, 0.0, 0.0], [0.0, 0.9, 0.0], [0.0, 0.0, 0.9]],
            gamma_density: 0.314,
            fhn: FhnParams::default(),
            boundary_scale: 1.0 / 0.314,
        };
        let text = model.to_toml();
        assert!(text.contains("version = 1"));
        let back = EffectiveModel::from_toml(&text).unwrap();
        assert_eq!(back, model);
        let bad = text.replace("version = 1", "version = 7");
        assert!(EffectiveModel::from_toml(&bad).is_err());
        let no_scale: String = text.lines().filter(|l| !l.starts_with("boundary_scale")).collect::<Vec<_>>().join("\n");
        let back = EffectiveModel::from_toml(&no_scale).unwrap();
        assert!((back.boundary_scale - 1.0 / 0.314).abs() < 1e-12);
    }

    #[test]
    fn gauge_shift_leaves_tensors_unchanged() {
        let geom = CellGeometry::build(CellParams::canonical(16)).unwrap();
        let (sys, fields) = solve_cell_e_all(&geom, 1e-10).unwrap();
        let g = geom.gamma_normalization();
        let base = assemble_a_e_on(&sys, g, &fields, 1.0, 1e-10).unwrap();
        let shifted = [fields[0].shifted(1.0), fields[1].shifted(-2.0), fields[2].shifted(0.5)];
        let moved = assemble_a_e_on(&sys, g, &shifted, 1.0, 1e-10).unwrap();
        for k in 0..3 {
            for l in 0..3 {
                assert!((base.tensor[k][l] - moved.tensor[k][l]).abs() < 1e-12);
            }
        }
    }
}
