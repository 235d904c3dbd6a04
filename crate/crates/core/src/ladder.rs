//! Two-rail resistor-membrane ladder: the reduced microscale oracle.
//!
//! One Ranvier node per cell of size `eps = L / N`, centred at
//! `x_j = (j - 1/2) eps`. Rung `j` carries
//! `c_m dv_j/dt + I(v_j, g_j) = intra D2 u_i,j = -extra D2 u_e,j - s_j`
//! with `intra = a_i |Y_i| / |Gamma|`, `extra = a_e_eff[0][0]` and `D2` the
//! centred second difference. Ghost zeros sit on the bases, half a cell from
//! the end rungs.

use serde::Serialize;

use crate::bidomain::{MacroSolver, MacroState, MeshMode, Scenario, Scheme, Stimulus};
use crate::effective::EffectiveModel;
use crate::error::{Error, Result};
use crate::geometry::CellGeometry;
use crate::membrane::{gating_equilibrium, gating_exact_step, FhnParams, IonicModel};
use crate::numerics::{BlockTridiagonal, Mat2};

pub const MIN_RUNGS: usize = 4;
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderParams {
    pub length: f64,
    pub rungs: usize,
    /// Intracellular rail coefficient `a_i |Y_i| / |Gamma|`.
    pub intra: f64,
    /// Extracellular rail coefficient.
    pub extra: f64,
    pub fhn: FhnParams,
    pub ionic: IonicModel,
}

impl LadderParams {
    pub fn new(length: f64, rungs: usize, intra: f64, extra: f64, fhn: FhnParams, ionic: IonicModel) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::input(format!("ladder length {length} must be positive")));
        }
        if rungs < MIN_RUNGS {
            return Err(Error::input(format!("a ladder needs at least {MIN_RUNGS} rungs, got {rungs}")));
        }
        if !(intra > 0.0 && intra.is_finite()) || !(extra > 0.0 && extra.is_finite()) {
            return Err(Error::input("ladder conductances must be positive"));
        }
        fhn.validate()?;
        Ok(LadderParams {
            length,
            rungs,
            intra,
            extra,
            fhn,
            ionic,
        })
    }

    /// Rails matched to a macroscopic model.
    pub fn from_model(length: f64, rungs: usize, model: &EffectiveModel, ionic: IonicModel) -> Result<Self> {
        Self::new(length, rungs, model.a_i_eff, model.a_e_eff[0][0], model.fhn, ionic)
    }

    /// Intracellular rail from the cell measures, `a_i |Y_i| / |Gamma|`.
    pub fn from_cell(
        length: f64,
        rungs: usize,
        a_i: f64,
        geom: &CellGeometry,
        model: &EffectiveModel,
        ionic: IonicModel,
    ) -> Result<Self> {
        let m = geom.measures();
        let intra = a_i * m.analytic_intra.unwrap_or(m.intra) / geom.gamma_normalization();
        Self::new(length, rungs, intra, model.a_e_eff[0][0], model.fhn, ionic)
    }

    /// Rung count for a cell size; `eps` must divide the length.
    pub fn rungs_for(length: f64, eps: f64) -> Result<usize> {
        let n = (length / eps).round();
        if !(eps > 0.0) || n < 1.0 || ((n * eps - length) / length).abs() > 1e-9 {
            return Err(Error::input(format!("cell size {eps} does not divide L = {length}")));
        }
        Ok(n as usize)
    }

    pub fn eps(&self) -> f64 {
        self.length / self.rungs as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        let eps = self.eps();
        (0..self.rungs).map(|j| (j as f64 + 0.5) * eps).collect()
    }

    /// Second-difference weights `(intra / eps^2, extra / eps^2)`.
    pub fn link_weights(&self) -> (f64, f64) {
        let e2 = self.eps() * self.eps();
        (self.intra / e2, self.extra / e2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderState {
    pub t: f64,
    pub v: Vec<f64>,
    pub g: Vec<f64>,
    pub u_i: Vec<f64>,
    pub u_e: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LadderStepInfo {
    /// Largest per-rung current imbalance over the current scale.
    pub kirchhoff: f64,
    /// Capacitive plus ionic current of all rungs against the intracellular
    /// current leaving through the bases, relative.
    pub charge_balance: f64,
    pub jump_defect: f64,
    pub newton_iterations: usize,
}

/// Ladder equations; all rung currents are scaled by the rung length `eps`.
#[derive(Debug, Clone)]
pub struct LadderSolver {
    params: LadderParams,
}

impl LadderSolver {
    pub fn new(params: LadderParams) -> Self {
        LadderSolver { params }
    }

    pub fn params(&self) -> &LadderParams {
        &self.params
    }

    fn len(&self) -> usize {
        self.params.rungs
    }

    /// `eps * (-D2 u)` with ghost zeros half a cell beyond the end rungs.
    fn laplace(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        let eps = self.params.eps();
        (0..n)
            .map(|j| {
                let left = if j == 0 { 2.0 * u[0] } else { u[j] - u[j - 1] };
                let right = if j + 1 == n { 2.0 * u[j] } else { u[j] - u[j + 1] };
                (left + right) / eps
            })
            .collect()
    }

    fn laplace_diag(&self, j: usize) -> f64 {
        let end = j == 0 || j + 1 == self.len();
        (if end { 3.0 } else { 2.0 }) / self.params.eps()
    }

    fn sources(&self, stim: &Stimulus, t: f64) -> Vec<f64> {
        let eps = self.params.eps();
        self.params.centers().iter().map(|&x| eps * stim.value(t, x)).collect()
    }

    fn pair_system(&self, coupling: &[f64]) -> BlockTridiagonal {
        let n = self.len();
        let eps = self.params.eps();
        let (a, b) = (self.params.intra, self.params.extra);
        let off: Mat2 = [[-a / eps, 0.0], [0.0, -b / eps]];
        BlockTridiagonal {
            lower: (0..n).map(|j| if j > 0 { off } else { [[0.0; 2]; 2] }).collect(),
            diag: (0..n)
                .map(|j| {
                    let k = self.laplace_diag(j);
                    let c = coupling[j];
                    [[a * k + c, -c], [-c, b * k + c]]
                })
                .collect(),
            upper: (0..n).map(|j| if j + 1 < n { off } else { [[0.0; 2]; 2] }).collect(),
        }
    }

    pub fn dt_max(&self, v: &[f64]) -> f64 {
        let slope = v.iter().fold(1.0f64, |m, &x| m.max(self.params.ionic.slope(x).abs()));
        0.5 * self.params.fhn.c_m / slope
    }

    fn finish(&self, t: f64, x: &[[f64; 2]], g: Vec<f64>) -> Result<LadderState> {
        let u_i: Vec<f64> = x.iter().map(|x| x[0]).collect();
        let u_e: Vec<f64> = x.iter().map(|x| x[1]).collect();
        let v: Vec<f64> = u_i.iter().zip(&u_e).map(|(a, b)| a - b).collect();
        if let Some(j) = v.iter().chain(&g).position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                node: j % self.len(),
                time: t,
            });
        }
        Ok(LadderState { t, v, g, u_i, u_e })
    }

    /// Per-rung bookkeeping of one step. `membrane` holds the capacitive plus
    /// ionic current of each rung (already scaled by `eps`).
    fn balance(&self, next: &LadderState, membrane: &[f64], stim: &Stimulus) -> LadderStepInfo {
        let ki = self.laplace(&next.u_i);
        let ke = self.laplace(&next.u_e);
        let src = self.sources(stim, next.t);
        let (a, b) = (self.params.intra, self.params.extra);
        let mut worst = 0.0f64;
        let mut scale = f64::MIN_POSITIVE;
        for j in 0..self.len() {
            let axial_i = a * ki[j];
            let axial_e = b * ke[j];
            scale = scale.max(membrane[j].abs()).max(axial_i.abs()).max(axial_e.abs()).max(src[j].abs());
            worst = worst.max((membrane[j] + axial_i).abs()).max((membrane[j] + src[j] - axial_e).abs());
        }
        let n = self.len();
        let eps = self.params.eps();
        // intracellular current through the two half links into the ghosts
        let outflow = a * 2.0 * (next.u_i[0] + next.u_i[n - 1]) / eps;
        let total: f64 = membrane.iter().sum();
        let jump_defect = (0..n).fold(0.0f64, |m, j| m.max((next.u_i[j] - next.u_e[j] - next.v[j]).abs()));
        LadderStepInfo {
            kirchhoff: worst / scale,
            charge_balance: (total + outflow).abs() / scale,
            jump_defect,
            newton_iterations: 0,
        }
    }

    /// Exact gating step, explicit reaction, implicit rails.
    pub fn step_imex(&self, state: &LadderState, stim: &Stimulus, dt: f64) -> Result<(LadderState, LadderStepInfo)> {
        if !(dt > 0.0) {
            return Err(Error::input("time step must be positive"));
        }
        let bound = self.dt_max(&state.v);
        if dt > bound {
            return Err(Error::input(format!(
                "dt = {dt} exceeds the explicit-reaction bound {bound:.4e}"
            )));
        }
        let p = &self.params.fhn;
        let eps = self.params.eps();
        let t_next = state.t + dt;
        let g: Vec<f64> = state
            .v
            .iter()
            .zip(&state.g)
            .map(|(&v, &g)| gating_exact_step(v, g, dt, p))
            .collect();
        let alpha = p.c_m / dt;
        let ionic: Vec<f64> = (0..self.len()).map(|j| eps * self.params.ionic.current(state.v[j], g[j])).collect();
        let src = self.sources(stim, t_next);
        let rhs: Vec<[f64; 2]> = (0..self.len())
            .map(|j| {
                let r = eps * alpha * state.v[j] - ionic[j];
                [r, src[j] - r]
            })
            .collect();
        let coupling = vec![eps * alpha; self.len()];
        let x = self.pair_system(&coupling).solve(&rhs)?;
        let next = self.finish(t_next, &x, g)?;
        let membrane: Vec<f64> = (0..self.len())
            .map(|j| eps * alpha * (next.v[j] - state.v[j]) + ionic[j])
            .collect();
        let info = self.balance(&next, &membrane, stim);
        Ok((next, info))
    }

    /// Backward Euler in `(v, g)` by Newton with the gating eliminated. The
    /// shift `lambda` only enters through the admissibility check; for
    /// backward Euler the shifted and unshifted iterations coincide.
    pub fn step_implicit(
        &self,
        state: &LadderState,
        stim: &Stimulus,
        dt: f64,
        lambda: f64,
    ) -> Result<(LadderState, LadderStepInfo)> {
        if !(dt > 0.0) {
            return Err(Error::input("time step must be positive"));
        }
        if !(lambda >= 0.0) || lambda * dt >= 1.0 {
            return Err(Error::input(format!("need 0 <= lambda dt < 1 (lambda = {lambda}, dt = {dt})")));
        }
        let p = self.params.fhn;
        let ionic = self.params.ionic;
        let eps = self.params.eps();
        let n = self.len();
        let t_next = state.t + dt;
        let gate_den = 1.0 / dt + p.b;
        let g_new = |g_old: f64, v: f64| (g_old / dt + p.a + p.theta * v) / gate_den;
        let dg_dv = p.theta / gate_den;
        let src = self.sources(stim, t_next);
        let (a, b) = (self.params.intra, self.params.extra);
        let mut ui = state.u_i.clone();
        let mut ue = state.u_e.clone();
        let mut history = Vec::new();
        let mut iterations = 0;
        let membrane = |ui: &[f64], ue: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|j| {
                    let w = ui[j] - ue[j];
                    eps * (p.c_m * (w - state.v[j]) / dt + ionic.current(w, g_new(state.g[j], w)))
                })
                .collect()
        };
        loop {
            let mem = membrane(&ui, &ue);
            let ki = self.laplace(&ui);
            let ke = self.laplace(&ue);
            let res: Vec<[f64; 2]> = (0..n)
                .map(|j| [mem[j] + a * ki[j], -mem[j] + b * ke[j] - src[j]])
                .collect();
            let strong = res.iter().fold(0.0f64, |m, r| m.max(r[0].abs().max(r[1].abs()) / eps));
            history.push(strong);
            if !strong.is_finite() {
                return Err(Error::NewtonDiverged { history });
            }
            if strong <= NEWTON_TOL {
                break;
            }
            if iterations >= NEWTON_MAX_ITER {
                return Err(Error::NewtonDiverged { history });
            }
            let coupling: Vec<f64> = (0..n)
                .map(|j| {
                    let w = ui[j] - ue[j];
                    eps * (p.c_m / dt + ionic.slope(w) + ionic.gating_slope() * dg_dv)
                })
                .collect();
            let neg: Vec<[f64; 2]> = res.iter().map(|r| [-r[0], -r[1]]).collect();
            let dx = self.pair_system(&coupling).solve(&neg)?;
            for j in 0..n {
                ui[j] += dx[j][0];
                ue[j] += dx[j][1];
            }
            iterations += 1;
        }
        let g: Vec<f64> = (0..n).map(|j| g_new(state.g[j], ui[j] - ue[j])).collect();
        let x: Vec<[f64; 2]> = ui.iter().zip(&ue).map(|(a, b)| [*a, *b]).collect();
        let next = self.finish(t_next, &x, g)?;
        let mem = membrane(&next.u_i, &next.u_e);
        let mut info = self.balance(&next, &mem, stim);
        info.newton_iterations = iterations;
        Ok((next, info))
    }

    /// Stationary unstimulated state, `eps I(v, g_inf(v)) = -intra K u_i =
    /// extra K u_e`, by damped Newton from zero.
    pub fn rest_state(&self) -> Result<LadderState> {
        let p = self.params.fhn;
        let ionic = self.params.ionic;
        let eps = self.params.eps();
        let n = self.len();
        let (a, b) = (self.params.intra, self.params.extra);
        let residual = |ui: &[f64], ue: &[f64]| -> (Vec<[f64; 2]>, f64) {
            let ki = self.laplace(ui);
            let ke = self.laplace(ue);
            let r: Vec<[f64; 2]> = (0..n)
                .map(|j| {
                    let v = ui[j] - ue[j];
                    let i = eps * ionic.current(v, gating_equilibrium(v, &p));
                    [i + a * ki[j], -i + b * ke[j]]
                })
                .collect();
            let strong = r.iter().fold(0.0f64, |m, r| m.max(r[0].abs().max(r[1].abs()) / eps));
            (r, strong)
        };
        let mut ui = vec![0.0; n];
        let mut ue = vec![0.0; n];
        let (mut r, mut strong) = residual(&ui, &ue);
        let mut history = vec![strong];
        for _ in 0..60 {
            if strong <= 1e-13 {
                break;
            }
            let coupling: Vec<f64> = (0..n)
                .map(|j| eps * (ionic.slope(ui[j] - ue[j]) + ionic.gating_slope() * p.theta / p.b))
                .collect();
            let neg: Vec<[f64; 2]> = r.iter().map(|r| [-r[0], -r[1]]).collect();
            let dx = self.pair_system(&coupling).solve(&neg)?;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let ti: Vec<f64> = (0..n).map(|j| ui[j] + step * dx[j][0]).collect();
                let te: Vec<f64> = (0..n).map(|j| ue[j] + step * dx[j][1]).collect();
                let trial = residual(&ti, &te);
                if trial.1 < strong {
                    ui = ti;
                    ue = te;
                    (r, strong) = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            history.push(strong);
            if !accepted {
                break;
            }
        }
        if strong > 1e-10 {
            return Err(Error::NewtonDiverged { history });
        }
        let v: Vec<f64> = ui.iter().zip(&ue).map(|(a, b)| a - b).collect();
        let g = v.iter().map(|&v| gating_equilibrium(v, &p)).collect();
        Ok(LadderState {
            t: 0.0,
            v,
            g,
            u_i: ui,
            u_e: ue,
        })
    }

    /// Rail potentials for given membrane fields.
    pub fn state_from(&self, t: f64, v: Vec<f64>, g: Vec<f64>, stim: &Stimulus) -> Result<LadderState> {
        let n = self.len();
        if v.len() != n || g.len() != n {
            return Err(Error::input(format!("ladder fields must have {n} values")));
        }
        // u_i = u_e + v and intra K u_i + extra K u_e = eps s
        let kv = self.laplace(&v);
        let src = self.sources(stim, t);
        let (a, b) = (self.params.intra, self.params.extra);
        let eps = self.params.eps();
        // scalar system carried in the first block slot
        let link: Mat2 = [[-(a + b) / eps, 0.0], [0.0, 0.0]];
        let sum = BlockTridiagonal {
            lower: (0..n).map(|j| if j > 0 { link } else { [[0.0; 2]; 2] }).collect(),
            diag: (0..n)
                .map(|j| [[(a + b) * self.laplace_diag(j), 0.0], [0.0, 1.0]])
                .collect(),
            upper: (0..n).map(|j| if j + 1 < n { link } else { [[0.0; 2]; 2] }).collect(),
        };
        let rhs: Vec<[f64; 2]> = (0..n).map(|j| [src[j] - a * kv[j], 0.0]).collect();
        let x = sum.solve(&rhs)?;
        let u_e: Vec<f64> = x.iter().map(|x| x[0]).collect();
        let u_i: Vec<f64> = u_e.iter().zip(&v).map(|(e, v)| e + v).collect();
        Ok(LadderState { t, v, g, u_i, u_e })
    }

    pub fn step(&self, state: &LadderState, stim: &Stimulus, dt: f64, scheme: Scheme) -> Result<(LadderState, LadderStepInfo)> {
        match scheme {
            Scheme::Imex => self.step_imex(state, stim, dt),
            Scheme::Implicit { lambda } => self.step_implicit(state, stim, dt, lambda),
        }
    }

    pub fn energy(&self, state: &LadderState) -> f64 {
        let eps = self.params.eps();
        state.v.iter().chain(&state.g).map(|x| eps * x * x).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LadderInitial {
    Rest,
    /// Rest state plus `amplitude * sin(pi x / L)` in `v`.
    RestPlusSine { amplitude: f64 },
}

#[derive(Debug, Clone)]
pub struct LadderRun {
    pub snapshots: Vec<LadderState>,
    pub final_state: LadderState,
    pub steps: usize,
    pub max_kirchhoff: f64,
    pub max_charge_balance: f64,
    pub peak_v: f64,
}

pub fn initial_state(solver: &LadderSolver, initial: LadderInitial, stim: &Stimulus) -> Result<LadderState> {
    let rest = solver.rest_state()?;
    match initial {
        LadderInitial::Rest => Ok(rest),
        LadderInitial::RestPlusSine { amplitude } => {
            let l = solver.params().length;
            let v = solver
                .params()
                .centers()
                .iter()
                .zip(&rest.v)
                .map(|(x, v)| v + amplitude * (std::f64::consts::PI * x / l).sin())
                .collect();
            solver.state_from(0.0, v, rest.g, stim)
        }
    }
}

/// Runs a ladder; `observer` sees the initial state and every step.
#[allow(clippy::too_many_arguments)]
pub fn run_ladder(
    params: LadderParams,
    stim: &Stimulus,
    scheme: Scheme,
    dt: f64,
    steps: usize,
    initial: LadderInitial,
    snapshot_every: usize,
    observer: &mut dyn FnMut(&LadderState),
) -> Result<LadderRun> {
    stim.validate()?;
    let solver = LadderSolver::new(params);
    let mut state = initial_state(&solver, initial, stim)?;
    observer(&state);
    let peak = |s: &LadderState| s.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = LadderRun {
        snapshots: vec![state.clone()],
        final_state: state.clone(),
        steps,
        max_kirchhoff: 0.0,
        max_charge_balance: 0.0,
        peak_v: peak(&state),
    };
    for step in 1..=steps {
        let (mut next, info) = solver.step(&state, stim, dt, scheme)?;
        next.t = step as f64 * dt;
        observer(&next);
        out.max_kirchhoff = out.max_kirchhoff.max(info.kirchhoff);
        out.max_charge_balance = out.max_charge_balance.max(info.charge_balance);
        out.peak_v = out.peak_v.max(peak(&next));
        if (snapshot_every > 0 && step % snapshot_every == 0) || step == steps {
            out.snapshots.push(next.clone());
        }
        state = next;
    }
    out.final_state = state;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergeRow {
    pub rungs: usize,
    pub eps: f64,
    /// `||v_ladder - v_macro||` in `L2((0,T) x Omega)`.
    pub err_v: f64,
    /// Final-time `L2(Omega)` error in `v`.
    pub err_v_final: f64,
    pub err_u_i: f64,
    pub err_u_e: f64,
    pub max_kirchhoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergeTable {
    pub rows: Vec<ConvergeRow>,
    /// Consecutive `err_v` ratios, coarse over fine.
    pub ratios: Vec<f64>,
    pub macro_intervals: usize,
    /// `L2((0,T) x Omega)` norm of the reference `v`, for scale.
    pub reference_norm: f64,
}

impl ConvergeTable {
    /// Every error column decreases strictly along the sweep.
    pub fn monotone(&self) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].err_v < w[0].err_v
                && w[1].err_v_final < w[0].err_v_final
                && w[1].err_u_i < w[0].err_u_i
                && w[1].err_u_e < w[0].err_u_e
        })
    }

    pub fn min_ratio(&self) -> f64 {
        self.ratios.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rungs,eps,err_v,err_v_final,err_u_i,err_u_e,ratio_v,max_kirchhoff\n");
        for (k, r) in self.rows.iter().enumerate() {
            let ratio = if k == 0 { String::new() } else { format!("{:?}", self.ratios[k - 1]) };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.rungs, r.eps, r.err_v, r.err_v_final, r.err_u_i, r.err_u_e, ratio, r.max_kirchhoff
            ));
        }
        out
    }
}

/// Ladder value at macro node `x`: the containing rung, the mean of the two
/// neighbours on a rung boundary, the ghost zero on the bases.
fn piecewise_constant(values: &[f64], length: f64, x: f64) -> f64 {
    let n = values.len();
    let s = x / length * n as f64;
    let k = s.round();
    if (s - k).abs() < 1e-9 {
        let k = k as usize;
        if k == 0 || k >= n {
            return 0.0;
        }
        return 0.5 * (values[k - 1] + values[k]);
    }
    values[(s.floor() as usize).min(n - 1)]
}

struct Accumulator {
    v: f64,
    u_i: f64,
    u_e: f64,
}

/// Ladder-vs-macro sweep. The macro reference is the scenario itself (an
/// interval mesh whose interval count is a multiple of every rung count); the
/// ladders share its model, ionic law, stimulus, scheme, step and horizon and
/// start from their own rest states. Everything advances in lockstep, so no
/// trajectory is stored.
pub fn converge_study(rungs: &[usize], scenario: &Scenario) -> Result<ConvergeTable> {
    if rungs.is_empty() {
        return Err(Error::input("converge study needs at least one rung count"));
    }
    if rungs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::input("cell sizes must be strictly decreasing (rung counts increasing)"));
    }
    if scenario.mesh.mode() != MeshMode::Interval {
        return Err(Error::input("the macro reference of a converge study must use interval mode"));
    }
    let intervals = scenario.mesh.nodes()[0] - 1;
    if let Some(&n) = rungs.iter().find(|&&n| !intervals.is_multiple_of(n)) {
        return Err(Error::input(format!(
            "macro reference has {intervals} intervals, not a multiple of {n} rungs"
        )));
    }
    if scenario.initial != crate::bidomain::InitialCondition::Rest {
        return Err(Error::input("converge study starts macro and ladders from rest"));
    }
    let steps = scenario.validate()?;
    let dt = scenario.dt;
    let length = scenario.mesh.lengths()[0];
    let macro_solver: MacroSolver = scenario.solver()?;
    let mass = macro_solver.mass().to_vec();
    let coords: Vec<f64> = (0..scenario.mesh.num_nodes()).map(|n| scenario.mesh.coord(n)[0]).collect();
    let solvers: Vec<LadderSolver> = rungs
        .iter()
        .map(|&n| LadderParams::from_model(length, n, &scenario.model, scenario.ionic).map(LadderSolver::new))
        .collect::<Result<_>>()?;
    let mut ladders: Vec<LadderState> = solvers.iter().map(|s| s.rest_state()).collect::<Result<_>>()?;
    let mut kirchhoff = vec![0.0f64; rungs.len()];
    let mut macro_state: MacroState = scenario.initial_state(&macro_solver)?;

    let diff = |lad: &LadderState, mac: &MacroState| -> Accumulator {
        let mut acc = Accumulator {
            v: 0.0,
            u_i: 0.0,
            u_e: 0.0,
        };
        for (k, &x) in coords.iter().enumerate() {
            let dv = piecewise_constant(&lad.v, length, x) - mac.v[k];
            let di = piecewise_constant(&lad.u_i, length, x) - mac.u_i[k];
            let de = piecewise_constant(&lad.u_e, length, x) - mac.u_e[k];
            acc.v += mass[k] * dv * dv;
            acc.u_i += mass[k] * di * di;
            acc.u_e += mass[k] * de * de;
        }
        acc
    };
    let mut totals: Vec<Accumulator> = vec![];
    let mut reference = 0.0;
    let mut finals = vec![0.0; rungs.len()];
    for step in 0..=steps {
        if step > 0 {
            let (mut next, _) = match scenario.scheme {
                Scheme::Imex => macro_solver.step_imex(&macro_state, &scenario.stimulus, dt)?,
                Scheme::Implicit { lambda } => macro_solver.step_implicit(&macro_state, &scenario.stimulus, dt, lambda)?,
            };
            next.t = step as f64 * dt;
            macro_state = next;
            for (k, solver) in solvers.iter().enumerate() {
                let (mut next, info) = solver.step(&ladders[k], &scenario.stimulus, dt, scenario.scheme)?;
                next.t = step as f64 * dt;
                kirchhoff[k] = kirchhoff[k].max(info.kirchhoff);
                ladders[k] = next;
            }
        }
        // trapezoidal weights in time
        let w = if step == 0 || step == steps { 0.5 * dt } else { dt };
        let w = if steps == 0 { 1.0 } else { w };
        reference += w * macro_solver.inner(&macro_state.v, &macro_state.v);
        for (k, lad) in ladders.iter().enumerate() {
            let d = diff(lad, &macro_state);
            if totals.len() <= k {
                totals.push(Accumulator {
                    v: 0.0,
                    u_i: 0.0,
                    u_e: 0.0,
                });
            }
            totals[k].v += w * d.v;
            totals[k].u_i += w * d.u_i;
            totals[k].u_e += w * d.u_e;
            if step == steps {
                finals[k] = d.v.sqrt();
            }
        }
    }
    let rows: Vec<ConvergeRow> = rungs
        .iter()
        .enumerate()
        .map(|(k, &n)| ConvergeRow {
            rungs: n,
            eps: length / n as f64,
            err_v: totals[k].v.sqrt(),
            err_v_final: finals[k],
            err_u_i: totals[k].u_i.sqrt(),
            err_u_e: totals[k].u_e.sqrt(),
            max_kirchhoff: kirchhoff[k],
        })
        .collect();
    let ratios = rows.windows(2).map(|w| w[0].err_v / w[1].err_v).collect();
    Ok(ConvergeTable {
        rows,
        ratios,
        macro_intervals: intervals,
        reference_norm: reference.sqrt(),
    })
}
