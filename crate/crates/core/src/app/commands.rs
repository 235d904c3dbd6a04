use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;

use super::config::{CellKindConfig, RunConfig};
use super::output::{Csv, RunDir, RunStatus, Vtk, VtkData};
use super::verify::{
    energy_suite, monotonicity_suite, operator_suite, quadratic_form_suite, series_conductivity, MonotoneSettings,
    VerifyReport,
};
use crate::bidomain::{run, MacroMesh, MacroState, MeshMode, RunResult};
use crate::cell_solver::Domain;
use crate::effective::{compute_model, eigenvalues, CellReport};
use crate::error::{Error, Result};
use crate::geometry::{CellGeometry, Region};
use crate::ladder::{converge_study, run_ladder, LadderInitial, LadderRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Cell,
    Solve,
    Ladder,
    Converge,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Cell => "cell",
            Command::Solve => "solve",
            Command::Ladder => "ladder",
            Command::Converge => "converge",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CommandOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Overrides the config seed.
    pub seed: Option<u64>,
    /// Worker threads; 0 keeps the default pool.
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// `verify` ran to completion and at least one suite failed.
    SuiteFailure,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_SUITE_FAILURE: i32 = 3;

pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Success) => EXIT_OK,
        Ok(Outcome::SuiteFailure) => EXIT_SUITE_FAILURE,
        Err(e) if e.is_numerical() => EXIT_NUMERICAL,
        Err(_) => EXIT_VALIDATION,
    }
}

/// Sizes the global worker pool; returns the thread count in effect.
pub fn configure_threads(threads: usize) -> Result<usize> {
    if threads > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(rayon::current_num_threads())
}

/// Loads and validates the config, then runs one subcommand.
pub fn execute(command: Command, opts: &CommandOptions) -> Result<Outcome> {
    let (mut cfg, bytes) = RunConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.seed = Some(seed);
    }
    match command {
        Command::Cell => cfg.validate_cell()?,
        Command::Solve => cfg.validate_scenario()?,
        Command::Ladder => cfg.validate_ladder()?,
        Command::Converge => cfg.validate_converge()?,
        Command::Verify => cfg.validate_verify()?,
    }
    let threads = configure_threads(opts.threads)?;
    let mut dir = RunDir::create(&opts.out, command.name(), &bytes, cfg.seed(), threads)?;
    let result = match command {
        Command::Cell => cmd_cell(&cfg, &mut dir),
        Command::Solve => cmd_solve(&cfg, &mut dir),
        Command::Ladder => cmd_ladder(&cfg, &mut dir),
        Command::Converge => cmd_converge(&cfg, &mut dir),
        Command::Verify => cmd_verify(&cfg, &mut dir),
    };
    match result {
        Ok(outcome) => {
            dir.finish(RunStatus::Complete, None)?;
            Ok(outcome)
        }
        Err(Failure { error, partial }) => {
            let status = if partial { RunStatus::Partial } else { RunStatus::Failed };
            dir.finish(status, Some(&error))?;
            Err(error)
        }
    }
}

struct Failure {
    error: Error,
    partial: bool,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure { error, partial: false }
    }
}

type CmdResult = std::result::Result<Outcome, Failure>;

fn cell_report_json(cfg: &RunConfig, geom: &CellGeometry, rep: &CellReport) -> serde_json::Value {
    let m = geom.measures();
    let gamma = geom.gamma_normalization();
    let closed = m.analytic_intra.map(|v| cfg.cell.a_i * v / gamma);
    json!({
        "kind": match cfg.cell.kind {
            CellKindConfig::Cylinder => "cylinder",
            CellKindConfig::NoInclusion => "no_inclusion",
            CellKindConfig::Labels => "labels",
        },
        "params": cfg.cell_params(),
        "dims": geom.dims(),
        "voxel_size": geom.voxel_size(),
        "measures": m,
        "gamma_normalization": gamma,
        "a_i_eff": rep.model.a_i_eff,
        "a_i_closed_form": closed,
        "a_i_relative_error": closed.map(|c| (rep.model.a_i_eff - c).abs() / c),
        "a_i_gradient_norm": rep.a_i_gradient_norm,
        "a_e_eff": rep.model.a_e_eff,
        "a_e_raw": rep.a_e.raw,
        "a_e_eigenvalues": eigenvalues(&rep.model.a_e_eff),
        "a_e_asymmetry": rep.a_e.asymmetry,
        "a_e_under_converged": rep.a_e.under_converged,
        "a_e_quadratic_form": rep.a_e_check,
        "a_i_quadratic_form": rep.a_i_check,
        "gamma_density": rep.model.gamma_density,
        "boundary_scale": rep.model.boundary_scale,
        "iterations": rep.iterations,
        "residuals": rep.residuals,
    })
}

fn region_code(r: Region) -> f64 {
    match r {
        Region::Extra => 0.0,
        Region::Intra => 1.0,
        Region::Myelin => 2.0,
    }
}

fn cell_fields(geom: &CellGeometry, rep: &CellReport) -> Vec<Vec<f64>> {
    let n = geom.labels().len();
    let mut cols = vec![vec![0.0; n]; 4];
    for (k, f) in rep.extra_fields.iter().enumerate() {
        for (&vox, &val) in f.voxels.iter().zip(&f.values) {
            cols[k][vox] = val;
        }
    }
    if let Some(f) = &rep.intra_field {
        debug_assert_eq!(f.domain, Domain::Intra);
        for (&vox, &val) in f.voxels.iter().zip(&f.values) {
            cols[3][vox] = val;
        }
    }
    cols
}

fn cmd_cell(cfg: &RunConfig, dir: &mut RunDir) -> CmdResult {
    let geom = cfg.geometry()?;
    let rep = compute_model(&geom, cfg.conductivities(), cfg.fhn(), cfg.cell.tol, cfg.cell.boundary_scale)?;
    dir.write("model.toml", rep.model.to_toml().as_bytes())?;
    let mut report = cell_report_json(cfg, &geom, &rep);
    if cfg.cell.refine && cfg.cell.kind != CellKindConfig::Labels && cfg.cell.grid_n >= 8 {
        let coarse_n = cfg.cell.grid_n / 2;
        let coarse = compute_model(
            &cfg.geometry_at(coarse_n)?,
            cfg.conductivities(),
            cfg.fhn(),
            cfg.cell.tol,
            cfg.cell.boundary_scale,
        )?;
        let mut delta_e = 0.0f64;
        for k in 0..3 {
            for l in 0..3 {
                delta_e = delta_e.max((rep.model.a_e_eff[k][l] - coarse.model.a_e_eff[k][l]).abs());
            }
        }
        report["refinement"] = json!({
            "coarse_grid_n": coarse_n,
            "coarse_a_i_eff": coarse.model.a_i_eff,
            "coarse_a_e_eff": coarse.model.a_e_eff,
            "delta_a_i": (rep.model.a_i_eff - coarse.model.a_i_eff).abs(),
            "delta_a_e_max": delta_e,
        });
    }
    dir.write_json("cell_report.json", &report)?;
    if cfg.cell.dump_fields {
        let cols = cell_fields(&geom, &rep);
        let mut csv = Csv::new(&["voxel", "i", "j", "k", "y1", "y2", "y3", "region", "chi_e1", "chi_e2", "chi_e3", "chi_i"]);
        for (idx, &label) in geom.labels().iter().enumerate() {
            let [i, j, k] = geom.ijk(idx);
            let c = geom.center(idx);
            csv.row(&[
                idx as f64,
                i as f64,
                j as f64,
                k as f64,
                c[0],
                c[1],
                c[2],
                region_code(label),
                cols[0][idx],
                cols[1][idx],
                cols[2][idx],
                cols[3][idx],
            ]);
        }
        dir.write("cell_fields.csv", &csv.into_bytes())?;
        let d = geom.dims();
        let h = geom.voxel_size();
        let origin = geom.center(0).map(|c| c - 0.5 * h);
        let mut vtk = Vtk::structured_points("fascicle cell fields", [d[0] + 1, d[1] + 1, d[2] + 1], origin, [h; 3], VtkData::Cell);
        let labels: Vec<f64> = geom.labels().iter().map(|&r| region_code(r)).collect();
        vtk.scalars("region", &labels)?;
        for (name, col) in ["chi_e1", "chi_e2", "chi_e3", "chi_i"].iter().zip(&cols) {
            vtk.scalars(name, col)?;
        }
        dir.write("cell_fields.vtk", &vtk.into_bytes())?;
    }
    Ok(Outcome::Success)
}

fn snapshot_csv(mesh: &MacroMesh, snapshots: &[MacroState]) -> Csv {
    let mut csv = Csv::new(&["t", "node", "x1", "x2", "x3", "v", "g", "u_i", "u_e"]);
    for s in snapshots {
        for n in 0..mesh.num_nodes() {
            let x = mesh.coord(n);
            csv.row(&[s.t, n as f64, x[0], x[1], x[2], s.v[n], s.g[n], s.u_i[n], s.u_e[n]]);
        }
    }
    csv
}

fn snapshot_vtk(mesh: &MacroMesh, s: &MacroState) -> Result<Vtk> {
    let nodes = mesh.nodes();
    let spacing = [0, 1, 2].map(|d| if nodes[d] > 1 { mesh.spacing(d) } else { 1.0 });
    let mut vtk = Vtk::structured_points(&format!("fascicle t = {}", s.t), nodes, [0.0; 3], spacing, VtkData::Point);
    vtk.scalars("v", &s.v)?;
    vtk.scalars("g", &s.g)?;
    vtk.scalars("u_i", &s.u_i)?;
    vtk.scalars("u_e", &s.u_e)?;
    Ok(vtk)
}

/// Position and value of the largest `v` in each snapshot.
fn front_track(mesh: &MacroMesh, snapshots: &[MacroState]) -> Vec<serde_json::Value> {
    snapshots
        .iter()
        .map(|s| {
            let (n, v) = s
                .v
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (n, &v)| if v > best.1 { (n, v) } else { best });
            json!({ "t": s.t, "x1": mesh.coord(n)[0], "max_v": v })
        })
        .collect()
}

fn write_run(dir: &mut RunDir, cfg: &RunConfig, mesh: &MacroMesh, result: &RunResult, complete: bool) -> Result<()> {
    dir.write("snapshots.csv", &snapshot_csv(mesh, &result.snapshots).into_bytes())?;
    let mut energy = Csv::new(&["step", "t", "energy", "dissipation", "source"]);
    for r in &result.energy {
        energy.row(&[r.step as f64, r.t, r.energy, r.dissipation, r.source]);
    }
    dir.write("energy.csv", &energy.into_bytes())?;
    dir.write_json(
        "summary.json",
        &json!({
            "complete": complete,
            "steps": result.steps,
            "dt": cfg.scenario.dt,
            "t_end": cfg.scenario.t_end,
            "peak_v": result.peak_v,
            "peak_time": result.peak_time,
            "final_max_v": result.final_max_v,
            "gronwall": result.gronwall,
            "max_jump_defect": result.max_jump_defect,
            "max_identity_residual": result.max_identity_residual,
            "newton_iterations": result.newton_iterations,
            "front": front_track(mesh, &result.snapshots),
        }),
    )?;
    if cfg.scenario.vtk || mesh.mode() == MeshMode::Box {
        for (k, s) in result.snapshots.iter().enumerate() {
            dir.write(&format!("snapshot_{k:04}.vtk"), &snapshot_vtk(mesh, s)?.into_bytes())?;
        }
    }
    Ok(())
}

fn cmd_solve(cfg: &RunConfig, dir: &mut RunDir) -> CmdResult {
    let model = cfg.model()?;
    dir.write("model.toml", model.to_toml().as_bytes())?;
    let scn = cfg.scenario(model)?;
    match run(&scn) {
        Ok(result) => {
            write_run(dir, cfg, &scn.mesh, &result, true)?;
            Ok(Outcome::Success)
        }
        Err(failure) => {
            let partial = failure.partial.is_some();
            if let Some(p) = &failure.partial {
                let mut snaps = p.snapshots.clone();
                if snaps.last().map(|s| s.t) != Some(p.final_state.t) {
                    snaps.push(p.final_state.clone());
                }
                let shown = RunResult {
                    snapshots: snaps,
                    ..(**p).clone()
                };
                write_run(dir, cfg, &scn.mesh, &shown, false)?;
            }
            Err(Failure {
                error: failure.error,
                partial,
            })
        }
    }
}

fn ladder_csv(run: &LadderRun, centers: &[f64]) -> Csv {
    let mut csv = Csv::new(&["t", "rung", "x1", "v", "g", "u_i", "u_e"]);
    for s in &run.snapshots {
        for (j, &x) in centers.iter().enumerate() {
            csv.row(&[s.t, j as f64, x, s.v[j], s.g[j], s.u_i[j], s.u_e[j]]);
        }
    }
    csv
}

fn cmd_ladder(cfg: &RunConfig, dir: &mut RunDir) -> CmdResult {
    let model = cfg.model()?;
    let params = cfg.ladder_params(&model)?;
    let scn = cfg.scenario(model)?;
    let steps = scn.validate()?;
    let initial = match cfg.scenario.initial {
        super::config::InitialConfig::Rest => LadderInitial::Rest,
        super::config::InitialConfig::RestPlusSine { amplitude } => LadderInitial::RestPlusSine { amplitude },
    };
    let result = run_ladder(
        params,
        &scn.stimulus,
        scn.scheme,
        scn.dt,
        steps,
        initial,
        cfg.ladder.snapshot_every,
        &mut |_| {},
    )?;
    dir.write("ladder.csv", &ladder_csv(&result, &params.centers()).into_bytes())?;
    dir.write_json(
        "summary.json",
        &json!({
            "params": params,
            "eps": params.eps(),
            "link_weights": params.link_weights(),
            "steps": result.steps,
            "peak_v": result.peak_v,
            "final_max_v": result.final_state.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            "max_kirchhoff": result.max_kirchhoff,
            "max_charge_balance": result.max_charge_balance,
        }),
    )?;
    Ok(Outcome::Success)
}

fn cmd_converge(cfg: &RunConfig, dir: &mut RunDir) -> CmdResult {
    let model = cfg.model()?;
    let mesh = MacroMesh::interval(cfg.scenario.length, cfg.converge.macro_intervals + 1)?;
    let scn = cfg.scenario_with(model, mesh);
    let table = converge_study(&cfg.converge.rungs, &scn)?;
    dir.write("converge.csv", table.to_csv().as_bytes())?;
    let min_ratio = table.min_ratio();
    let pass = table.monotone() && (table.ratios.is_empty() || min_ratio >= cfg.converge.min_ratio);
    dir.write_json(
        "verdict.json",
        &json!({
            "pass": pass,
            "monotone": table.monotone(),
            "min_ratio": if table.ratios.is_empty() { None } else { Some(min_ratio) },
            "required_ratio": cfg.converge.min_ratio,
            "macro_intervals": table.macro_intervals,
            "reference_norm": table.reference_norm,
            "rows": table.rows,
            "ratios": table.ratios,
        }),
    )?;
    Ok(Outcome::Success)
}

/// Runs every property suite with the configured seed.
pub fn verify_suites(cfg: &RunConfig) -> Result<VerifyReport> {
    let v = &cfg.verify;
    let seed = cfg.seed();
    let cell = compute_model(&cfg.geometry()?, cfg.conductivities(), cfg.fhn(), v.tol, cfg.cell.boundary_scale)?;
    let model = match cfg.model_path() {
        Some(p) => crate::effective::EffectiveModel::load(&p)?,
        None => cell.model,
    };
    let settings = MonotoneSettings {
        lambda: v.lambda,
        time: v.time,
        meshes: v.meshes.clone(),
        pairs: v.pairs,
        seed,
    };
    let mono = monotonicity_suite(&model.fhn, series_conductivity(&model), cfg.scenario.length, &settings)?;
    let scn = cfg.scenario(model)?;
    let energy = energy_suite(&scn, &v.energy_dts)?;
    let solver = scn.solver()?.with_tol(v.tol);
    let operator = operator_suite(&solver, v.fields, seed)?;
    let quadratic = quadratic_form_suite(&cell, v.tol);
    Ok(VerifyReport::new(seed, vec![mono, energy, operator, quadratic]))
}

fn cmd_verify(cfg: &RunConfig, dir: &mut RunDir) -> CmdResult {
    let report = verify_suites(cfg)?;
    dir.write_json("verify_report.json", &report)?;
    Ok(if report.pass {
        Outcome::Success
    } else {
        Outcome::SuiteFailure
    })
}
