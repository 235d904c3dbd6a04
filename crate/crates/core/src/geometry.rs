//! Voxelized periodicity cell of a myelinated fascicle.
//!
//! The cell is `[-1/2, 1/2) x [-R0, R0)^2`: an axon core of radius `r0`
//! running along `y1`, a myelin annulus `r0 < r < r_m` covering
//! `|y1| >= w_node / 2`, and extracellular space everywhere else. The
//! uncovered band of the axon surface is the Ranvier node. Voxels are
//! labeled by the region containing their center, so every surface is a
//! union of axis-aligned voxel faces.
//!
//! Voxels are stored x-fastest: `index = i + n1 * (j + n2 * k)`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Region {
    Extra = 0,
    Intra = 1,
    Myelin = 2,
}

impl Region {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Region::Extra),
            1 => Ok(Region::Intra),
            2 => Ok(Region::Myelin),
            other => Err(Error::Format(format!("unknown region tag {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    /// Axon radius.
    pub r0: f64,
    /// Half-width of the square cross-section.
    #[serde(rename = "R0")]
    pub big_r0: f64,
    /// Outer myelin radius.
    pub r_m: f64,
    /// Axial width of the Ranvier band.
    pub w_node: f64,
    /// Voxels per unit length.
    pub grid_n: usize,
}

impl CellParams {
    /// `r0 = 0.25, R0 = 0.5, r_m = 0.35, w_node = 0.2` at the given resolution.
    pub fn canonical(grid_n: usize) -> Self {
        CellParams {
            r0: 0.25,
            big_r0: 0.5,
            r_m: 0.35,
            w_node: 0.2,
            grid_n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let CellParams {
            r0,
            big_r0,
            r_m,
            w_node,
            grid_n,
        } = *self;
        if !(r0 > 0.0 && r0 < 0.5) {
            return Err(Error::input(format!("r0 = {r0} must lie in (0, 1/2)")));
        }
        if r_m >= big_r0 {
            return Err(Error::input(format!(
                "r_m = {r_m} must be below R0 = {big_r0}; myelin touching the cell boundary disconnects Y_e"
            )));
        }
        if r_m <= r0 {
            return Err(Error::input(format!("r_m = {r_m} must exceed r0 = {r0}")));
        }
        if !(w_node > 0.0 && w_node <= 1.0) {
            return Err(Error::input(format!(
                "w_node = {w_node} must lie in (0, 1]; a zero-width node degenerates the Ranvier surface"
            )));
        }
        if grid_n < 8 {
            return Err(Error::input(format!("grid_n = {grid_n} must be at least 8")));
        }
        self.lateral_voxels()?;
        Ok(())
    }

    /// Voxel count across `[-R0, R0)`; `2 R0 grid_n` must be an integer.
    pub fn lateral_voxels(&self) -> Result<usize> {
        let m = 2.0 * self.big_r0 * self.grid_n as f64;
        let rounded = m.round();
        if (m - rounded).abs() > 1e-9 || rounded < 1.0 {
            return Err(Error::input(format!(
                "2 R0 grid_n = {m} must be a positive integer"
            )));
        }
        Ok(rounded as usize)
    }

    pub fn cell_volume(&self) -> f64 {
        (2.0 * self.big_r0).powi(2)
    }

    pub fn analytic_intra_volume(&self) -> f64 {
        PI * self.r0 * self.r0
    }

    pub fn analytic_gamma_area(&self) -> f64 {
        2.0 * PI * self.r0 * self.w_node
    }
}

/// How the label grid was produced; decides which `|Gamma|` normalizes the
/// effective coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellKind {
    /// Cylinder with a myelin annulus built from [`CellParams`].
    Cylinder(CellParams),
    /// Reference cell with no inclusion (`Y_e = Y`); keeps the parameters so
    /// the normalization of the parent cylinder stays available.
    NoInclusion(CellParams),
    /// User-supplied labels.
    LabelGrid,
}

/// One voxel face separating two regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    /// Voxel on the inner side (intra for `Gamma`/`Gamma_mi`, myelin for `Gamma_me`).
    pub voxel: usize,
    pub axis: usize,
    /// Direction of the outward normal along `axis`: `+1` or `-1`.
    pub sign: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    /// Ranvier node (intra/extra contact).
    Gamma,
    /// Myelin interfaces `Gamma_mi` and `Gamma_me`.
    Myelin,
    MyelinIntra,
    MyelinExtra,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraturePoint {
    pub position: [f64; 3],
    pub normal: [f64; 3],
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measures {
    pub cell: f64,
    pub intra: f64,
    pub myelin: f64,
    pub extra: f64,
    /// Staircase measures.
    pub gamma: f64,
    pub gamma_mi: f64,
    pub gamma_me: f64,
    pub analytic_intra: Option<f64>,
    pub analytic_gamma: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CellGeometry {
    kind: CellKind,
    dims: [usize; 3],
    h: f64,
    labels: Vec<Region>,
    gamma: Vec<Face>,
    gamma_mi: Vec<Face>,
    gamma_me: Vec<Face>,
    measures: Measures,
}

impl CellGeometry {
    /// Voxelizes the canonical cylinder cell.
    pub fn build(params: CellParams) -> Result<Self> {
        params.validate()?;
        let dims = Self::dims_for(&params)?;
        let h = 1.0 / params.grid_n as f64;
        let (r0_sq, rm_sq) = (params.r0 * params.r0, params.r_m * params.r_m);
        let half_band = 0.5 * params.w_node;
        let mut labels = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let [y1, y2, y3] = center(dims, h, i, j, k);
                    let r_sq = y2 * y2 + y3 * y3;
                    let region = if r_sq < r0_sq {
                        Region::Intra
                    } else if r_sq < rm_sq && y1.abs() >= half_band {
                        Region::Myelin
                    } else {
                        Region::Extra
                    };
                    labels.push(region);
                }
            }
        }
        let geom = Self::assemble(CellKind::Cylinder(params), dims, h, labels);
        if geom.gamma.is_empty() {
            return Err(Error::geometry("the Ranvier surface is empty at this resolution"));
        }
        Ok(geom)
    }

    /// Cell with no inclusion at all (`Y_e = Y`).
    pub fn without_inclusion(params: CellParams) -> Result<Self> {
        params.validate()?;
        let dims = Self::dims_for(&params)?;
        let labels = vec![Region::Extra; dims[0] * dims[1] * dims[2]];
        Ok(Self::assemble(
            CellKind::NoInclusion(params),
            dims,
            1.0 / params.grid_n as f64,
            labels,
        ))
    }

    /// Geometry from an explicit label grid of voxel size `h`; the axial
    /// extent `dims[0] * h` must be one period.
    pub fn from_labels(dims: [usize; 3], h: f64, labels: Vec<Region>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::input(format!("label grid dims {dims:?} too small")));
        }
        if labels.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::input(format!(
                "label grid has {} voxels, dims {dims:?} need {}",
                labels.len(),
                dims[0] * dims[1] * dims[2]
            )));
        }
        if !(h > 0.0) || (dims[0] as f64 * h - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!(
                "axial extent {} must equal the unit period",
                dims[0] as f64 * h
            )));
        }
        let geom = Self::assemble(CellKind::LabelGrid, dims, h, labels);
        if geom.gamma.is_empty() {
            return Err(Error::geometry("label grid has no intra/extra contact (empty Ranvier surface)"));
        }
        Ok(geom)
    }

    fn dims_for(params: &CellParams) -> Result<[usize; 3]> {
        let m = params.lateral_voxels()?;
        Ok([params.grid_n, m, m])
    }

    fn assemble(kind: CellKind, dims: [usize; 3], h: f64, labels: Vec<Region>) -> Self {
        let mut gamma = Vec::new();
        let mut gamma_mi = Vec::new();
        let mut gamma_me = Vec::new();
        let mut counts = [0usize; 3];
        for (idx, &region) in labels.iter().enumerate() {
            counts[region as usize] += 1;
            for axis in 0..3 {
                for sign in [1i8, -1] {
                    let nb = neighbor(dims, idx, axis, sign, [true; 3]).expect("full wrap");
                    let face = Face {
                        voxel: idx,
                        axis,
                        sign,
                    };
                    match (region, labels[nb]) {
                        (Region::Intra, Region::Extra) => gamma.push(face),
                        (Region::Intra, Region::Myelin) => gamma_mi.push(face),
                        (Region::Myelin, Region::Extra) => gamma_me.push(face),
                        _ => {}
                    }
                }
            }
        }
        let vol = h * h * h;
        let area = h * h;
        let (analytic_intra, analytic_gamma) = match kind {
            CellKind::Cylinder(p) => (Some(p.analytic_intra_volume()), Some(p.analytic_gamma_area())),
            CellKind::NoInclusion(p) => (None, Some(p.analytic_gamma_area())),
            CellKind::LabelGrid => (None, None),
        };
        let measures = Measures {
            cell: labels.len() as f64 * vol,
            extra: counts[Region::Extra as usize] as f64 * vol,
            intra: counts[Region::Intra as usize] as f64 * vol,
            myelin: counts[Region::Myelin as usize] as f64 * vol,
            gamma: gamma.len() as f64 * area,
            gamma_mi: gamma_mi.len() as f64 * area,
            gamma_me: gamma_me.len() as f64 * area,
            analytic_intra,
            analytic_gamma,
        };
        CellGeometry {
            kind,
            dims,
            h,
            labels,
            gamma,
            gamma_mi,
            gamma_me,
            measures,
        }
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn params(&self) -> Option<CellParams> {
        match self.kind {
            CellKind::Cylinder(p) | CellKind::NoInclusion(p) => Some(p),
            CellKind::LabelGrid => None,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.h
    }

    pub fn num_voxels(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[Region] {
        &self.labels
    }

    pub fn label(&self, i: usize, j: usize, k: usize) -> Region {
        self.labels[self.index(i, j, k)]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn center(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.ijk(idx);
        center(self.dims, self.h, i, j, k)
    }

    /// Neighbor across the face (`axis`, `sign`), wrapping along the axes
    /// flagged in `wrap`; `None` when the face lies on a non-wrapped boundary.
    pub fn neighbor(&self, idx: usize, axis: usize, sign: i8, wrap: [bool; 3]) -> Option<usize> {
        neighbor(self.dims, idx, axis, sign, wrap)
    }

    pub fn measures(&self) -> &Measures {
        &self.measures
    }

    /// `|Gamma|` used to normalize effective coefficients: the closed form
    /// for parametric cells, the staircase measure for label grids.
    pub fn gamma_normalization(&self) -> f64 {
        self.measures.analytic_gamma.unwrap_or(self.measures.gamma)
    }

    pub fn faces(&self, surface: Surface) -> Vec<Face> {
        match surface {
            Surface::Gamma => self.gamma.clone(),
            Surface::MyelinIntra => self.gamma_mi.clone(),
            Surface::MyelinExtra => self.gamma_me.clone(),
            Surface::Myelin => self.gamma_mi.iter().chain(&self.gamma_me).copied().collect(),
        }
    }

    /// Weighted face list with outward unit normals (outward from `Y_i` on
    /// `Gamma` and `Gamma_mi`, from `Y_m` on `Gamma_me`).
    pub fn surface_quadrature(&self, surface: Surface) -> Vec<QuadraturePoint> {
        let area = self.h * self.h;
        self.faces(surface)
            .into_iter()
            .map(|f| {
                let mut position = self.center(f.voxel);
                position[f.axis] += 0.5 * self.h * f.sign as f64;
                let mut normal = [0.0; 3];
                normal[f.axis] = f.sign as f64;
                QuadraturePoint {
                    position,
                    normal,
                    weight: area,
                }
            })
            .collect()
    }

    /// Flood fill of `region` under the given wrap rules.
    pub fn is_connected(&self, region: Region, wrap: [bool; 3]) -> bool {
        let Some(start) = self.labels.iter().position(|&r| r == region) else {
            return true;
        };
        let total = self.labels.iter().filter(|&&r| r == region).count();
        let mut seen = vec![false; self.labels.len()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut reached = 0;
        while let Some(idx) = stack.pop() {
            reached += 1;
            for axis in 0..3 {
                for sign in [1i8, -1] {
                    if let Some(nb) = self.neighbor(idx, axis, sign, wrap) {
                        if !seen[nb] && self.labels[nb] == region {
                            seen[nb] = true;
                            stack.push(nb);
                        }
                    }
                }
            }
        }
        reached == total
    }

    /// Writes the label grid: 8-byte magic `FASCLBL1`, `n1 n2 n3` as
    /// little-endian `u32`, voxel size as little-endian `f64`, then one byte
    /// per voxel (0 extra, 1 intra, 2 myelin) in x-fastest order.
    pub fn write_labels(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(LABEL_HEADER_LEN + self.labels.len());
        buf.extend_from_slice(LABEL_MAGIC);
        for d in self.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&self.h.to_le_bytes());
        buf.extend(self.labels.iter().map(|&r| r as u8));
        let mut file = fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn read_labels(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::parse_labels(&bytes)
    }

    pub fn parse_labels(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < LABEL_HEADER_LEN || &bytes[..8] != LABEL_MAGIC {
            return Err(Error::Format("missing label-grid header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let dims = [u32_at(8), u32_at(12), u32_at(16)];
        let h = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let body = &bytes[LABEL_HEADER_LEN..];
        if body.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::Format(format!(
                "label body has {} bytes, header promises {}",
                body.len(),
                dims[0] * dims[1] * dims[2]
            )));
        }
        let labels = body.iter().map(|&b| Region::from_byte(b)).collect::<Result<Vec<_>>>()?;
        Self::from_labels(dims, h, labels)
    }
}

const LABEL_MAGIC: &[u8; 8] = b"FASCLBL1";
const LABEL_HEADER_LEN: usize = 28;

fn center(dims: [usize; 3], h: f64, i: usize, j: usize, k: usize) -> [f64; 3] {
    // (2i + 1 - n) h / 2 keeps mirror images exactly antisymmetric
    let c = |idx: usize, n: usize| (2.0 * idx as f64 + 1.0 - n as f64) * 0.5 * h;
    [c(i, dims[0]), c(j, dims[1]), c(k, dims[2])]
}

fn neighbor(dims: [usize; 3], idx: usize, axis: usize, sign: i8, wrap: [bool; 3]) -> Option<usize> {
    let mut ijk = [idx % dims[0], (idx / dims[0]) % dims[1], idx / (dims[0] * dims[1])];
    let n = dims[axis];
    let c = ijk[axis];
    ijk[axis] = if sign > 0 {
        if c + 1 < n {
            c + 1
        } else if wrap[axis] {
            0
        } else {
            return None;
        }
    } else if c > 0 {
        c - 1
    } else if wrap[axis] {
        n - 1
    } else {
        return None;
    };
    Some(ijk[0] + dims[0] * (ijk[1] + dims[1] * ijk[2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_cell_has_unit_volume_and_partition() {
        let g = CellGeometry::build(CellParams::canonical(64)).unwrap();
        let m = g.measures();
        assert_eq!(m.cell, 1.0);
        assert_eq!(m.intra + m.myelin + m.extra, m.cell);
        assert_eq!(g.num_voxels(), 64 * 64 * 64);
        assert!((m.analytic_intra.unwrap() - 0.196350).abs() < 1e-6);
        assert!((m.analytic_gamma.unwrap() - 0.314159).abs() < 1e-6);
    }

    #[test]
    fn wide_cross_section_scales_volume() {
        let mut p = CellParams::canonical(16);
        p.big_r0 = 0.75;
        let g = CellGeometry::build(p).unwrap();
        assert_eq!(g.dims(), [16, 24, 24]);
        assert!((g.measures().cell - 2.25).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_params() {
        let mut p = CellParams::canonical(16);
        p.r_m = 0.5;
        assert!(CellGeometry::build(p).is_err());
        let mut p = CellParams::canonical(16);
        p.w_node = 0.0;
        assert!(CellGeometry::build(p).is_err());
        let mut p = CellParams::canonical(16);
        p.grid_n = 6;
        assert!(p.validate().is_err());
        let mut p = CellParams::canonical(16);
        p.big_r0 = 0.51;
        assert!(p.validate().is_err());
    }

    #[test]
    fn fully_unmyelinated_band_covers_lateral_surface() {
        let mut p = CellParams::canonical(32);
        p.w_node = 1.0;
        let g = CellGeometry::build(p).unwrap();
        assert_eq!(g.measures().myelin, 0.0);
        assert!(g.faces(Surface::Myelin).is_empty());
        assert!((g.measures().analytic_gamma.unwrap() - 2.0 * PI * 0.25).abs() < 1e-15);
    }

    #[test]
    fn labels_are_mirror_symmetric() {
        let g = CellGeometry::build(CellParams::canonical(24)).unwrap();
        let [n1, n2, n3] = g.dims();
        for k in 0..n3 {
            for j in 0..n2 {
                for i in 0..n1 {
                    let l = g.label(i, j, k);
                    assert_eq!(l, g.label(n1 - 1 - i, j, k));
                    assert_eq!(l, g.label(i, n2 - 1 - j, k));
                    assert_eq!(l, g.label(i, j, n3 - 1 - k));
                    assert_eq!(l, g.label(i, k, j));
                }
            }
        }
    }

    #[test]
    fn closed_surface_normals_cancel() {
        let g = CellGeometry::build(CellParams::canonical(32)).unwrap();
        // boundary of Y_i is Gamma plus Gamma_mi
        let mut sum = [0.0; 3];
        for q in g
            .surface_quadrature(Surface::Gamma)
            .into_iter()
            .chain(g.surface_quadrature(Surface::MyelinIntra))
        {
            for d in 0..3 {
                sum[d] += q.weight * q.normal[d];
            }
        }
        assert!(sum.iter().all(|s| s.abs() < 1e-12), "{sum:?}");
        let gamma = g.surface_quadrature(Surface::Gamma);
        for d in 0..3 {
            let s: f64 = gamma.iter().map(|q| q.weight * q.normal[d]).sum();
            assert!(s.abs() < 1e-12);
        }
        let w: f64 = gamma.iter().map(|q| q.weight).sum();
        assert!((w - g.measures().gamma).abs() < 1e-12);
    }

    #[test]
    fn staircase_lateral_area_tends_to_four_over_pi() {
        // the L1 perimeter of a voxelized disk is 8 r0 instead of 2 pi r0
        let mut ratios = Vec::new();
        for n in [16, 32, 64, 128] {
            let mut p = CellParams::canonical(n);
            p.w_node = 1.0;
            let g = CellGeometry::build(p).unwrap();
            let total: f64 = g.surface_quadrature(Surface::Gamma).iter().map(|q| q.weight).sum();
            ratios.push(total / (2.0 * PI * p.r0));
        }
        let last = *ratios.last().unwrap();
        assert!((last - 4.0 / PI).abs() < 0.02 * 4.0 / PI, "{ratios:?}");
    }

    #[test]
    fn intra_volume_converges_under_refinement() {
        let errs: Vec<f64> = [16, 32, 64, 128]
            .iter()
            .map(|&n| {
                let g = CellGeometry::build(CellParams::canonical(n)).unwrap();
                (g.measures().intra - g.measures().analytic_intra.unwrap()).abs()
            })
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "{errs:?}");
        }
        assert!(errs[3] / (PI * 0.0625) < 5e-3, "{errs:?}");
    }

    #[test]
    fn connectivity_of_canonical_regions() {
        let g = CellGeometry::build(CellParams::canonical(16)).unwrap();
        assert!(g.is_connected(Region::Extra, [true; 3]));
        assert!(g.is_connected(Region::Intra, [true, false, false]));
    }

    #[test]
    fn label_file_roundtrip() {
        let g = CellGeometry::build(CellParams::canonical(16)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cell.lbl");
        g.write_labels(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 28 + 16 * 16 * 16);
        let back = CellGeometry::read_labels(&path).unwrap();
        assert_eq!(back.labels(), g.labels());
        assert_eq!(back.kind(), CellKind::LabelGrid);
        assert_eq!(back.measures().gamma, g.measures().gamma);
    }

    #[test]
    fn corrupt_label_files_are_rejected() {
        assert!(CellGeometry::parse_labels(b"short").is_err());
        let g = CellGeometry::build(CellParams::canonical(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cell.lbl");
        g.write_labels(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        assert!(CellGeometry::parse_labels(&bytes).is_err());
        let last = bytes.len() - 1;
        bytes.push(0);
        bytes[last] = 9;
        assert!(CellGeometry::parse_labels(&bytes).is_err());
    }
}
