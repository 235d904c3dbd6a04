//! Randomized property suites behind `fascicle verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bidomain::{certificate_holds, run, MacroSolver, Scenario};
use crate::effective::{min_eigenvalue, CellReport, EffectiveModel};
use crate::error::Result;
use crate::membrane::{check_monotone, lambda_min, random_pairs, FhnParams, MonotoneMesh, MonotoneOp};

/// Operator-check tolerances.
pub const LINEARITY_TOL: f64 = 1e-9;
pub const SYMMETRY_TOL: f64 = 1e-8;
pub const POSITIVITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub pass: bool,
    pub detail: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub pass: bool,
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn new(seed: u64, suites: Vec<SuiteReport>) -> Self {
        VerifyReport {
            seed,
            pass: suites.iter().all(|s| s.pass),
            suites,
        }
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteReport> {
        self.suites.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct MonotoneSettings {
    /// `lambda_min` when absent.
    pub lambda: Option<f64>,
    pub time: f64,
    /// Interior node counts.
    pub meshes: Vec<usize>,
    pub pairs: usize,
    pub seed: u64,
}

/// `<Op(W1) - Op(W2), W1 - W2> >= -tol scale` for `B1`, `B2` and their sum
/// on interval meshes with the one-dimensional effective operator.
pub fn monotonicity_suite(fhn: &FhnParams, conductivity: f64, length: f64, s: &MonotoneSettings) -> Result<SuiteReport> {
    let (time, pairs, seed) = (s.time, s.pairs, s.seed);
    let meshes = &s.meshes;
    let lambda = s.lambda.unwrap_or_else(|| lambda_min(fhn));
    let mut entries = Vec::new();
    let mut pass = true;
    for (k, &nodes) in meshes.iter().enumerate() {
        let mesh = MonotoneMesh::interval(nodes, length, conductivity)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let sample = random_pairs(&mesh, pairs, &mut rng);
        for op in [MonotoneOp::B1, MonotoneOp::B2, MonotoneOp::Full] {
            let rep = check_monotone(op, fhn, lambda, time, &sample, &mesh);
            pass &= rep.pass;
            entries.push(json!({
                "nodes": nodes,
                "operator": op,
                "pass": rep.pass,
                "pairs": rep.pairs,
                "violations": rep.violations,
                "worst_ratio": rep.worst_ratio,
                "worst_pair": rep.worst_pair,
            }));
        }
    }
    Ok(SuiteReport {
        name: "monotonicity".into(),
        pass,
        detail: json!({ "lambda": lambda, "lambda_min": lambda_min(fhn), "time": time, "checks": entries }),
    })
}

/// Runs the scenario at each step size and fits one Gronwall constant that
/// certifies all of them.
pub fn energy_suite(base: &Scenario, dts: &[f64]) -> Result<SuiteReport> {
    let mut logs = Vec::new();
    let mut runs = Vec::new();
    for &dt in dts {
        let mut scn = base.clone();
        scn.dt = dt;
        scn.snapshot_every = 0;
        let result = run(&scn).map_err(|f| f.error)?;
        runs.push(json!({
            "dt": dt,
            "steps": result.steps,
            "fitted_c": result.gronwall.c,
            "peak_v": result.peak_v,
        }));
        logs.push((dt, result.energy, result.gronwall.c));
    }
    let c = logs.iter().map(|l| l.2).fold(0.0f64, f64::max);
    let holds: Vec<bool> = logs.iter().map(|(dt, e, _)| c.is_finite() && certificate_holds(e, *dt, c)).collect();
    Ok(SuiteReport {
        name: "energy_certificate".into(),
        pass: holds.iter().all(|&h| h),
        detail: json!({ "c": c, "runs": runs, "holds": holds }),
    })
}

fn random_compatible_field(solver: &MacroSolver, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mesh = solver.mesh();
    let lengths = mesh.lengths();
    let modes: Vec<(f64, f64, f64)> = (0..4)
        .map(|m| (rng.gen_range(-1.0..1.0) / (m + 1) as f64, rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)))
        .collect();
    let noise = rng.gen_range(0.0..0.5);
    (0..mesh.num_nodes())
        .map(|n| {
            if mesh.is_dirichlet(n) {
                return 0.0;
            }
            let x = mesh.coord(n);
            let smooth: f64 = modes
                .iter()
                .enumerate()
                .map(|(m, &(c, ky, kz))| {
                    c * ((m + 1) as f64 * std::f64::consts::PI * x[0] / lengths[0]).sin()
                        * (ky * x[1] / lengths[1]).cos()
                        * (kz * x[2] / lengths[2]).cos()
                })
                .sum();
            smooth + noise * rng.gen_range(-1.0..1.0)
        })
        .collect()
}

/// Linearity, symmetry and nonnegativity of `A_eff` on random fields that
/// vanish on the bases.
pub fn operator_suite(solver: &MacroSolver, samples: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a0ff);
    let mut worst_linearity = 0.0f64;
    let mut worst_symmetry = 0.0f64;
    let mut worst_positivity = f64::INFINITY;
    let norm = |x: &[f64]| solver.norm(x);
    for _ in 0..samples {
        let x = random_compatible_field(solver, &mut rng);
        let y = random_compatible_field(solver, &mut rng);
        let (a, b): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let ax = solver.apply_a_eff(&x)?;
        let ay = solver.apply_a_eff(&y)?;
        let combo: Vec<f64> = x.iter().zip(&y).map(|(x, y)| a * x + b * y).collect();
        let ac = solver.apply_a_eff(&combo)?;
        let defect: Vec<f64> = (0..x.len()).map(|n| ac[n] - a * ax[n] - b * ay[n]).collect();
        let scale = a.abs() * norm(&ax) + b.abs() * norm(&ay);
        if scale > 0.0 {
            worst_linearity = worst_linearity.max(norm(&defect) / scale);
        }
        let sym_scale = (norm(&ax) * norm(&y)).max(norm(&ay) * norm(&x));
        if sym_scale > 0.0 {
            worst_symmetry = worst_symmetry.max((solver.inner(&ax, &y) - solver.inner(&x, &ay)).abs() / sym_scale);
        }
        let pos_scale = norm(&ax) * norm(&x);
        if pos_scale > 0.0 {
            worst_positivity = worst_positivity.min(solver.inner(&ax, &x) / pos_scale);
        }
    }
    if samples == 0 {
        worst_positivity = 0.0;
    }
    let pass = worst_linearity <= LINEARITY_TOL && worst_symmetry <= SYMMETRY_TOL && worst_positivity >= -POSITIVITY_TOL;
    Ok(SuiteReport {
        name: "a_eff_operator".into(),
        pass,
        detail: json!({
            "samples": samples,
            "linearity_defect": worst_linearity,
            "linearity_tol": LINEARITY_TOL,
            "symmetry_defect": worst_symmetry,
            "symmetry_tol": SYMMETRY_TOL,
            "min_normalized_energy": worst_positivity,
        }),
    })
}

/// Linear- against energy-form assembly, tensor symmetry and definiteness.
pub fn quadratic_form_suite(report: &CellReport, tol: f64) -> SuiteReport {
    let limit = 10.0 * tol;
    let e_diff = report.a_e_check.relative_difference;
    let i_diff = report.a_i_check.map(|c| c.relative_difference);
    let lambda_min_e = min_eigenvalue(&report.model.a_e_eff);
    let pass = e_diff <= limit
        && i_diff.is_none_or(|d| d <= limit)
        && report.a_e.asymmetry <= limit
        && lambda_min_e > 0.0
        && report.model.a_i_eff > 0.0;
    SuiteReport {
        name: "quadratic_form".into(),
        pass,
        detail: json!({
            "tol": tol,
            "limit": limit,
            "a_e_relative_difference": e_diff,
            "a_i_relative_difference": i_diff,
            "a_e_asymmetry": report.a_e.asymmetry,
            "a_e_min_eigenvalue": lambda_min_e,
            "a_i_eff": report.model.a_i_eff,
        }),
    }
}

/// Conductivity of the one-dimensional effective membrane operator.
pub fn series_conductivity(model: &EffectiveModel) -> f64 {
    let (a, b) = (model.a_i_eff, model.a_e_eff[0][0]);
    a * b / (a + b)
}
