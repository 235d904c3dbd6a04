use serde::{Deserialize, Serialize};

use super::energy::{fit_gronwall, EnergyRecord, GronwallFit};
use super::mesh::MacroMesh;
use super::solver::{MacroSolver, MacroState, ELLIPTIC_TOL};
use super::stimulus::Stimulus;
use crate::effective::EffectiveModel;
use crate::error::{Error, Result};
use crate::membrane::IonicModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    Imex,
    Implicit { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// Stationary state of the unstimulated problem.
    Rest,
    /// `v = v_i - v_e`; both fields must vanish on the bases.
    Fields { v_i: Vec<f64>, v_e: Vec<f64>, g: Vec<f64> },
    /// Rest state plus `amplitude * sin(pi x1 / L)` in `v`.
    RestPlusSine { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub mesh: MacroMesh,
    pub model: EffectiveModel,
    pub ionic: IonicModel,
    pub stimulus: Stimulus,
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    pub initial: InitialCondition,
    /// Keep a snapshot every this many steps (0: initial and final only).
    pub snapshot_every: usize,
    pub elliptic_tol: f64,
}

impl Scenario {
    pub fn new(mesh: MacroMesh, model: EffectiveModel) -> Self {
        Scenario {
            mesh,
            model,
            ionic: IonicModel::FitzhughNagumo,
            stimulus: Stimulus::none(),
            scheme: Scheme::Imex,
            dt: 1e-3,
            t_end: 0.0,
            initial: InitialCondition::Rest,
            snapshot_every: 0,
            elliptic_tol: ELLIPTIC_TOL,
        }
    }

    /// Number of steps; `t_end` must be a whole multiple of `dt`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::input(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::input(format!("T = {} must be non-negative", self.t_end)));
        }
        let n = (self.t_end / self.dt).round();
        if (n * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(self.dt) {
            return Err(Error::input(format!(
                "T = {} is not a whole number of steps of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<usize> {
        self.model.validate()?;
        self.stimulus.validate()?;
        if let Scheme::Implicit { lambda } = self.scheme {
            let mut p = self.model.fhn;
            p.lambda = lambda;
            p.validate_monotone()?;
            if lambda * self.dt >= 1.0 {
                return Err(Error::input("implicit scheme needs lambda dt < 1"));
            }
        }
        if !(self.elliptic_tol > 0.0 && self.elliptic_tol < 1.0) {
            return Err(Error::input("elliptic tolerance must lie in (0, 1)"));
        }
        if let InitialCondition::Fields { v_i, v_e, g } = &self.initial {
            let n = self.mesh.num_nodes();
            if v_i.len() != n || v_e.len() != n || g.len() != n {
                return Err(Error::input(format!("initial fields must have {n} values")));
            }
        }
        self.steps()
    }

    pub fn solver(&self) -> Result<MacroSolver> {
        Ok(MacroSolver::new(self.mesh.clone(), self.model, self.ionic)?.with_tol(self.elliptic_tol))
    }

    pub fn initial_state(&self, solver: &MacroSolver) -> Result<MacroState> {
        match &self.initial {
            InitialCondition::Rest => solver.rest_state(),
            InitialCondition::Fields { v_i, v_e, g } => {
                for (name, f) in [("v_i", v_i), ("v_e", v_e)] {
                    if let Some(n) = (0..f.len()).find(|&n| self.mesh.is_dirichlet(n) && f[n] != 0.0) {
                        return Err(Error::input(format!("initial {name} must vanish on the bases (node {n})")));
                    }
                }
                let v = v_i.iter().zip(v_e).map(|(a, b)| a - b).collect();
                solver.state_from(0.0, v, g.clone(), &self.stimulus)
            }
            InitialCondition::RestPlusSine { amplitude } => {
                let rest = solver.rest_state()?;
                let length = self.mesh.lengths()[0];
                let v = (0..self.mesh.num_nodes())
                    .map(|n| {
                        if self.mesh.is_dirichlet(n) {
                            0.0
                        } else {
                            let x = self.mesh.coord(n)[0];
                            rest.v[n] + amplitude * (std::f64::consts::PI * x / length).sin()
                        }
                    })
                    .collect();
                solver.state_from(0.0, v, rest.g, &self.stimulus)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub snapshots: Vec<MacroState>,
    pub energy: Vec<EnergyRecord>,
    pub gronwall: GronwallFit,
    pub final_state: MacroState,
    pub steps: usize,
    pub max_jump_defect: f64,
    pub max_identity_residual: f64,
    pub peak_v: f64,
    pub peak_time: f64,
    pub final_max_v: f64,
    pub newton_iterations: usize,
}

/// A run that stopped early, with everything computed up to the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub partial: Option<Box<RunResult>>,
    pub error: Error,
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        RunFailure { partial: None, error }
    }
}

pub fn run(scn: &Scenario) -> std::result::Result<RunResult, RunFailure> {
    run_observed(scn, &mut |_| {})
}

/// Time loop; `observer` sees the initial state and every step.
pub fn run_observed(
    scn: &Scenario,
    observer: &mut dyn FnMut(&MacroState),
) -> std::result::Result<RunResult, RunFailure> {
    let steps = scn.validate()?;
    let solver = scn.solver()?;
    let state = scn.initial_state(&solver)?;
    observer(&state);
    let record = |step: usize, s: &MacroState| {
        let (energy, dissipation, source) = solver.energy_terms(s, &scn.stimulus);
        EnergyRecord {
            step,
            t: s.t,
            energy,
            dissipation,
            source,
        }
    };
    let max_v = |s: &MacroState| s.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let info0 = solver.step_info(&state, &scn.stimulus);
    let mut result = RunResult {
        snapshots: vec![state.clone()],
        energy: vec![record(0, &state)],
        gronwall: fit_gronwall(&[], scn.dt),
        final_state: state.clone(),
        steps: 0,
        max_jump_defect: info0.jump_defect,
        max_identity_residual: info0.identity_residual,
        peak_v: max_v(&state),
        peak_time: 0.0,
        final_max_v: max_v(&state),
        newton_iterations: 0,
    };
    let mut current = state;
    for step in 1..=steps {
        let outcome = match scn.scheme {
            Scheme::Imex => solver.step_imex(&current, &scn.stimulus, scn.dt),
            Scheme::Implicit { lambda } => solver.step_implicit(&current, &scn.stimulus, scn.dt, lambda),
        };
        let (mut next, info) = match outcome {
            Ok(ok) => ok,
            Err(error) => {
                result.gronwall = fit_gronwall(&result.energy, scn.dt);
                result.final_state = current;
                return Err(RunFailure {
                    partial: Some(Box::new(result)),
                    error,
                });
            }
        };
        // pin the clock to the grid so long runs do not accumulate drift
        next.t = step as f64 * scn.dt;
        observer(&next);
        result.energy.push(record(step, &next));
        result.max_jump_defect = result.max_jump_defect.max(info.jump_defect);
        result.max_identity_residual = result.max_identity_residual.max(info.identity_residual);
        result.newton_iterations += info.newton_iterations;
        let peak = max_v(&next);
        if peak > result.peak_v {
            result.peak_v = peak;
            result.peak_time = next.t;
        }
        result.steps = step;
        if (scn.snapshot_every > 0 && step % scn.snapshot_every == 0) || step == steps {
            result.snapshots.push(next.clone());
        }
        current = next;
    }
    result.final_max_v = max_v(&current);
    result.final_state = current;
    result.gronwall = fit_gronwall(&result.energy, scn.dt);
    Ok(result)
}
