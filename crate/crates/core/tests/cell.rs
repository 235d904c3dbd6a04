use fascicle::effective::{compute_model, eigenvalues, Conductivities, EffectiveModel};
use fascicle::geometry::{CellGeometry, CellParams, Region};
use fascicle::membrane::FhnParams;
use proptest::prelude::*;

fn geometry(r0: f64, r_m: f64, w: f64, n: usize) -> CellGeometry {
    CellGeometry::build(CellParams { r0, big_r0: 0.5, r_m, w_node: w, grid_n: n }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tensor_is_symmetric_positive_and_transversely_isotropic(
        r0 in 0.1f64..0.3,
        gap in 0.03f64..0.12,
        w in 0.1f64..0.8,
    ) {
        let geom = geometry(r0, (r0 + gap).min(0.45), w, 16);
        let rep = compute_model(&geom, Conductivities::default(), FhnParams::default(), 1e-10, None).unwrap();
        let t = rep.model.a_e_eff;
        prop_assert!(rep.a_e.asymmetry <= 1e-9);
        prop_assert!(eigenvalues(&t)[0] > 0.0);
        prop_assert!((t[1][1] - t[2][2]).abs() <= 1e-8 * t[1][1]);
        // the inclusion blocks transverse flux more than axial flux
        prop_assert!(t[0][0] >= t[1][1]);
        // bounded by the no-inclusion coefficient |Y| / |Gamma|
        let bound = geom.measures().cell / geom.gamma_normalization();
        prop_assert!(t[0][0] <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn coefficients_scale_with_conductivity(s in 0.1f64..10.0) {
        let geom = geometry(0.25, 0.35, 0.2, 8);
        let one = compute_model(&geom, Conductivities::default(), FhnParams::default(), 1e-11, None).unwrap().model;
        let two = compute_model(&geom, Conductivities { a_i: s, a_e: s }, FhnParams::default(), 1e-11, None).unwrap().model;
        prop_assert!((two.a_i_eff - s * one.a_i_eff).abs() <= 1e-9 * s * one.a_i_eff);
        for k in 0..3 {
            prop_assert!((two.a_e_eff[k][k] - s * one.a_e_eff[k][k]).abs() <= 1e-7 * s * one.a_e_eff[k][k]);
        }
    }
}

#[test]
fn voxel_volumes_converge_to_the_analytic_cylinder() {
    let coarse = CellGeometry::build(CellParams::canonical(16)).unwrap();
    let fine = CellGeometry::build(CellParams::canonical(64)).unwrap();
    let exact = std::f64::consts::PI * 0.25 * 0.25;
    let err = |g: &CellGeometry| (g.measures().intra - exact).abs();
    assert!(err(&fine) < err(&coarse));
    assert!(err(&fine) / exact < 0.01);
    let m = fine.measures();
    assert!((m.intra + m.myelin + m.extra - m.cell).abs() < 1e-12);
}

#[test]
fn label_grid_roundtrips_through_a_file() {
    let geom = CellGeometry::build(CellParams::canonical(16)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cell.lbl");
    geom.write_labels(&path).unwrap();
    let back = CellGeometry::read_labels(&path).unwrap();
    assert_eq!(back.dims(), geom.dims());
    assert_eq!(back.labels(), geom.labels());
    let a = compute_model(&geom, Conductivities::default(), FhnParams::default(), 1e-10, None).unwrap().model;
    let b = compute_model(&back, Conductivities::default(), FhnParams::default(), 1e-10, None).unwrap().model;
    // labels alone give staircase surface measures, so only the ratio structure matches
    let ra = a.a_e_eff[1][1] / a.a_e_eff[0][0];
    let rb = b.a_e_eff[1][1] / b.a_e_eff[0][0];
    assert!((ra - rb).abs() < 1e-9);
}

#[test]
fn truncated_label_file_is_rejected() {
    let geom = CellGeometry::build(CellParams::canonical(8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cell.lbl");
    geom.write_labels(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(CellGeometry::parse_labels(&bytes[..bytes.len() - 1]).is_err());
    assert!(CellGeometry::parse_labels(b"not a label grid").is_err());
}

#[test]
fn blocked_extracellular_region_is_rejected() {
    // myelin filling the whole cross-section leaves no connected Y_e
    let dims = [8, 8, 8];
    let labels: Vec<Region> = (0..512)
        .map(|i| if (i / 8) % 8 == 0 || i % 8 == 0 { Region::Myelin } else { Region::Intra })
        .collect();
    assert!(CellGeometry::from_labels(dims, 0.125, labels).is_err());
}

#[test]
fn model_file_roundtrip() {
    let geom = CellGeometry::build(CellParams::canonical(8)).unwrap();
    let m = compute_model(&geom, Conductivities::default(), FhnParams::default(), 1e-10, None).unwrap().model;
    let back = EffectiveModel::from_toml(&m.to_toml()).unwrap();
    assert_eq!(back.a_i_eff, m.a_i_eff);
    assert_eq!(back.a_e_eff, m.a_e_eff);
    assert_eq!(back.fhn, m.fhn);
}
