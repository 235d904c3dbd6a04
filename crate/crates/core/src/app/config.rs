//! Run configuration: one TOML schema shared by every subcommand.
//!
//! Relative paths are resolved against the directory of the config file.
//! Every section is optional; the defaults describe the canonical cell and
//! the standard pulse scenario.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::bidomain::{InitialCondition, MacroMesh, Scenario, Scheme, SpaceProfile, Stimulus, TimeProfile};
use crate::effective::{Conductivities, EffectiveModel};
use crate::error::{Error, Result};
use crate::geometry::{CellGeometry, CellParams};
use crate::ladder::LadderParams;
use crate::membrane::{lambda_min, FhnParams, IonicModel};

pub const SCHEMA_VERSION: u32 = 1;

/// Amplitude of the standard pulse. A negative extracellular source
/// depolarizes; this value sits clearly above the excitation threshold of the
/// canonical cell.
pub const STANDARD_PULSE_AMPLITUDE: f64 = -120.0;

pub fn standard_pulse() -> Stimulus {
    Stimulus {
        amplitude: STANDARD_PULSE_AMPLITUDE,
        time: TimeProfile::Gaussian { center: 0.3, width: 0.1 },
        space: SpaceProfile::Gaussian { center: 0.5, width: 0.1 },
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    /// Seed of the randomized property suites.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub cell: CellSection,
    #[serde(default)]
    pub membrane: MembraneSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub ladder: LadderSection,
    #[serde(default)]
    pub converge: ConvergeSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKindConfig {
    #[default]
    Cylinder,
    NoInclusion,
    Labels,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellSection {
    pub kind: CellKindConfig,
    pub r0: f64,
    #[serde(rename = "R0")]
    pub big_r0: f64,
    pub r_m: f64,
    pub w_node: f64,
    pub grid_n: usize,
    /// Label grid file for `kind = "labels"`.
    pub labels: Option<PathBuf>,
    pub a_i: f64,
    pub a_e: f64,
    pub tol: f64,
    pub boundary_scale: Option<f64>,
    /// Also solve at half resolution and report the differences.
    pub refine: bool,
    /// Write the cell fields as CSV and VTK.
    pub dump_fields: bool,
}

impl Default for CellSection {
    fn default() -> Self {
        let p = CellParams::canonical(32);
        CellSection {
            kind: CellKindConfig::Cylinder,
            r0: p.r0,
            big_r0: p.big_r0,
            r_m: p.r_m,
            w_node: p.w_node,
            grid_n: p.grid_n,
            labels: None,
            a_i: 1.0,
            a_e: 1.0,
            tol: 1e-8,
            boundary_scale: None,
            refine: true,
            dump_fields: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MembraneSection {
    pub theta: f64,
    pub a: f64,
    pub b: f64,
    pub c_m: f64,
    pub ionic: IonicModel,
}

impl Default for MembraneSection {
    fn default() -> Self {
        let p = FhnParams::default();
        MembraneSection {
            theta: p.theta,
            a: p.a,
            b: p.b,
            c_m: p.c_m,
            ionic: IonicModel::FitzhughNagumo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    #[default]
    Imex,
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    #[default]
    Rest,
    RestPlusSine { amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    #[default]
    Interval,
    Box,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    /// Effective model file; computed from `[cell]` when absent.
    pub model: Option<PathBuf>,
    pub mode: ModeConfig,
    /// Interval mode: fascicle length and node count (end points included).
    pub length: f64,
    pub nodes: usize,
    /// Box mode: edge lengths and node counts per axis.
    pub box_lengths: [f64; 3],
    pub box_nodes: [usize; 3],
    pub dt: f64,
    pub t_end: f64,
    pub scheme: SchemeConfig,
    /// Shift of the implicit scheme; `lambda_min` when absent.
    pub lambda: Option<f64>,
    pub snapshot_every: usize,
    pub elliptic_tol: f64,
    pub stimulus: Stimulus,
    pub initial: InitialConfig,
    /// Write VTK snapshots next to the CSV output.
    pub vtk: bool,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            model: None,
            mode: ModeConfig::Interval,
            length: 1.0,
            nodes: 129,
            box_lengths: [1.0, 0.25, 0.25],
            box_nodes: [33, 5, 5],
            dt: 1e-3,
            t_end: 4.0,
            scheme: SchemeConfig::Imex,
            lambda: None,
            snapshot_every: 100,
            elliptic_tol: crate::bidomain::ELLIPTIC_TOL,
            stimulus: standard_pulse(),
            initial: InitialConfig::Rest,
            vtk: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LadderSection {
    pub rungs: usize,
    pub snapshot_every: usize,
}

impl Default for LadderSection {
    fn default() -> Self {
        LadderSection {
            rungs: 32,
            snapshot_every: 100,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeSection {
    /// Rung counts of the sweep, coarse to fine.
    pub rungs: Vec<usize>,
    /// Intervals of the macro reference mesh.
    pub macro_intervals: usize,
    /// Smallest acceptable consecutive error ratio.
    pub min_ratio: f64,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        ConvergeSection {
            rungs: vec![16, 32, 64],
            macro_intervals: 512,
            min_ratio: 1.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Random pairs per mesh for the monotonicity suite.
    pub pairs: usize,
    /// Interior node counts of the monotonicity meshes.
    pub meshes: Vec<usize>,
    /// Shift for the monotonicity suite; `lambda_min` when absent.
    pub lambda: Option<f64>,
    /// Time at which the cubic part is evaluated.
    pub time: f64,
    /// Steps of the energy-certificate suite.
    pub energy_dts: Vec<f64>,
    /// Random fields for the operator checks.
    pub fields: usize,
    /// Solver tolerance used by the operator and quadratic-form suites.
    pub tol: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            pairs: 1000,
            meshes: vec![16, 64, 256],
            lambda: None,
            time: 1.0,
            energy_dts: vec![1e-2, 1e-3],
            fields: 100,
            tol: 1e-12,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: SCHEMA_VERSION,
            seed: None,
            cell: CellSection::default(),
            membrane: MembraneSection::default(),
            scenario: ScenarioSection::default(),
            ladder: LadderSection::default(),
            converge: ConvergeSection::default(),
            verify: VerifySection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

pub const DEFAULT_SEED: u64 = 20_240_601;

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        if cfg.schema != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "config schema {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema
            )));
        }
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::Format("config is not UTF-8".into()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok((Self::parse(text, &base)?, bytes))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn fhn(&self) -> FhnParams {
        let m = &self.membrane;
        FhnParams {
            theta: m.theta,
            a: m.a,
            b: m.b,
            c_m: m.c_m,
            lambda: 0.0,
        }
    }

    pub fn cell_params(&self) -> CellParams {
        let c = &self.cell;
        CellParams {
            r0: c.r0,
            big_r0: c.big_r0,
            r_m: c.r_m,
            w_node: c.w_node,
            grid_n: c.grid_n,
        }
    }

    pub fn conductivities(&self) -> Conductivities {
        Conductivities {
            a_i: self.cell.a_i,
            a_e: self.cell.a_e,
        }
    }

    /// Checks the `[cell]` and `[membrane]` sections without computing.
    pub fn validate_cell(&self) -> Result<()> {
        self.fhn().validate()?;
        let c = &self.cell;
        if !(c.a_i > 0.0 && c.a_e > 0.0) {
            return Err(Error::input("cell conductivities a_i and a_e must be positive"));
        }
        if !(c.tol > 0.0 && c.tol < 1.0) {
            return Err(Error::input("cell tol must lie in (0, 1)"));
        }
        if let Some(s) = c.boundary_scale {
            if !(s > 0.0) {
                return Err(Error::input("boundary_scale must be positive"));
            }
        }
        match c.kind {
            CellKindConfig::Labels => {
                let path = c
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::input("kind = \"labels\" needs a labels path"))?;
                let path = self.resolve(path);
                if !path.is_file() {
                    return Err(Error::input(format!("label file {} does not exist", path.display())));
                }
                CellGeometry::read_labels(&path)?;
            }
            _ => self.cell_params().validate()?,
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<CellGeometry> {
        self.geometry_at(self.cell.grid_n)
    }

    pub fn geometry_at(&self, grid_n: usize) -> Result<CellGeometry> {
        let params = CellParams {
            grid_n,
            ..self.cell_params()
        };
        match self.cell.kind {
            CellKindConfig::Cylinder => CellGeometry::build(params),
            CellKindConfig::NoInclusion => CellGeometry::without_inclusion(params),
            CellKindConfig::Labels => {
                let path = self.cell.labels.as_ref().ok_or_else(|| Error::input("labels path missing"))?;
                CellGeometry::read_labels(&self.resolve(path))
            }
        }
    }

    pub fn model_path(&self) -> Option<PathBuf> {
        self.scenario.model.as_ref().map(|p| self.resolve(p))
    }

    /// Loads the configured model file, or solves the cell problems.
    pub fn model(&self) -> Result<EffectiveModel> {
        match self.model_path() {
            Some(path) => EffectiveModel::load(&path),
            None => {
                let geom = self.geometry()?;
                let rep =
                    crate::effective::compute_model(&geom, self.conductivities(), self.fhn(), self.cell.tol, self.cell.boundary_scale)?;
                Ok(rep.model)
            }
        }
    }

    pub fn mesh(&self) -> Result<MacroMesh> {
        let s = &self.scenario;
        match s.mode {
            ModeConfig::Interval => MacroMesh::interval(s.length, s.nodes),
            ModeConfig::Box => MacroMesh::cuboid(s.box_lengths, s.box_nodes),
        }
    }

    pub fn lambda(&self, model: &EffectiveModel) -> f64 {
        self.scenario.lambda.unwrap_or_else(|| lambda_min(&model.fhn))
    }

    pub fn scheme(&self, model: &EffectiveModel) -> Scheme {
        match self.scenario.scheme {
            SchemeConfig::Imex => Scheme::Imex,
            SchemeConfig::Implicit => Scheme::Implicit {
                lambda: self.lambda(model),
            },
        }
    }

    pub fn scenario_with(&self, model: EffectiveModel, mesh: MacroMesh) -> Scenario {
        let s = &self.scenario;
        let mut scn = Scenario::new(mesh, model);
        scn.ionic = self.membrane.ionic;
        scn.stimulus = s.stimulus;
        scn.scheme = self.scheme(&model);
        scn.dt = s.dt;
        scn.t_end = s.t_end;
        scn.initial = match s.initial {
            InitialConfig::Rest => InitialCondition::Rest,
            InitialConfig::RestPlusSine { amplitude } => InitialCondition::RestPlusSine { amplitude },
        };
        scn.snapshot_every = s.snapshot_every;
        scn.elliptic_tol = s.elliptic_tol;
        scn
    }

    pub fn scenario(&self, model: EffectiveModel) -> Result<Scenario> {
        Ok(self.scenario_with(model, self.mesh()?))
    }

    /// Checks the scenario-level settings that do not need the model.
    pub fn validate_scenario(&self) -> Result<()> {
        let fhn = match self.model_path() {
            None => {
                self.validate_cell()?;
                self.fhn()
            }
            Some(p) => {
                if !p.is_file() {
                    return Err(Error::input(format!("model file {} does not exist", p.display())));
                }
                EffectiveModel::load(&p)?.fhn
            }
        };
        self.mesh()?;
        self.scenario.stimulus.validate()?;
        if !(self.scenario.elliptic_tol > 0.0 && self.scenario.elliptic_tol < 1.0) {
            return Err(Error::input("elliptic_tol must lie in (0, 1)"));
        }
        if let Some(l) = self.scenario.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::input("lambda must be non-negative"));
            }
        }
        if self.scenario.scheme == SchemeConfig::Implicit {
            let lambda = self.scenario.lambda.unwrap_or_else(|| lambda_min(&fhn));
            FhnParams { lambda, ..fhn }.validate_monotone()?;
            if lambda * self.scenario.dt >= 1.0 {
                return Err(Error::input("implicit scheme needs lambda dt < 1"));
            }
        }
        // the step count check needs no model
        let mut probe = Scenario::new(self.mesh()?, placeholder_model());
        probe.dt = self.scenario.dt;
        probe.t_end = self.scenario.t_end;
        probe.steps()?;
        Ok(())
    }

    pub fn ladder_params(&self, model: &EffectiveModel) -> Result<LadderParams> {
        LadderParams::from_model(self.scenario.length, self.ladder.rungs, model, self.membrane.ionic)
    }

    pub fn validate_ladder(&self) -> Result<()> {
        self.validate_scenario()?;
        if self.scenario.mode != ModeConfig::Interval {
            return Err(Error::input("the ladder runs on the interval scenario (mode = \"interval\")"));
        }
        if self.ladder.rungs < crate::ladder::MIN_RUNGS {
            return Err(Error::input(format!(
                "ladder needs at least {} rungs",
                crate::ladder::MIN_RUNGS
            )));
        }
        Ok(())
    }

    pub fn validate_converge(&self) -> Result<()> {
        self.validate_ladder()?;
        let c = &self.converge;
        if c.rungs.is_empty() || c.rungs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::input("converge rungs must be a non-empty increasing list"));
        }
        if let Some(n) = c.rungs.iter().find(|&&n| n < crate::ladder::MIN_RUNGS || !c.macro_intervals.is_multiple_of(n)) {
            return Err(Error::input(format!(
                "rung count {n} must be >= {} and divide macro_intervals = {}",
                crate::ladder::MIN_RUNGS,
                c.macro_intervals
            )));
        }
        if self.scenario.initial != InitialConfig::Rest {
            return Err(Error::input("the converge study starts from rest"));
        }
        Ok(())
    }

    pub fn validate_verify(&self) -> Result<()> {
        self.validate_scenario()?;
        let v = &self.verify;
        if v.meshes.iter().any(|&n| n < 2) {
            return Err(Error::input("monotonicity meshes need at least 2 nodes"));
        }
        if v.energy_dts.iter().any(|&dt| !(dt > 0.0)) {
            return Err(Error::input("energy_dts must be positive"));
        }
        for &dt in &v.energy_dts {
            let mut probe = Scenario::new(self.mesh()?, placeholder_model());
            probe.dt = dt;
            probe.t_end = self.scenario.t_end;
            probe.steps()?;
        }
        if !(v.tol > 0.0 && v.tol < 1.0) {
            return Err(Error::input("verify tol must lie in (0, 1)"));
        }
        if let Some(l) = v.lambda {
            if !(l >= 0.0) {
                return Err(Error::input("verify lambda must be non-negative"));
            }
        }
        Ok(())
    }
}

fn placeholder_model() -> EffectiveModel {
    EffectiveModel {
        a_i_eff: 1.0,
        a_e_eff: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        gamma_density: 1.0,
        fhn: FhnParams::default(),
        boundary_scale: 1.0,
    }
}
