use serde::Serialize;

use super::mesh::{MacroMesh, MeshMode};
use super::stimulus::Stimulus;
use crate::effective::{EffectiveModel, Tensor3};
use crate::error::{Error, Result};
use crate::membrane::{gating_equilibrium, gating_exact_step, IonicModel};
use crate::numerics::{cg_solve, norm2, BlockTridiagonal, CgOptions, LinearOperator, SparseOperator};

/// Nodal fields at one time level. Every vector spans all mesh nodes;
/// `v`, `u_i` and `u_e` vanish on the bases.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub t: f64,
    pub v: Vec<f64>,
    pub g: Vec<f64>,
    pub u_i: Vec<f64>,
    pub u_e: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepInfo {
    /// `||(u_i - u_e) - v||_inf` after the step.
    pub jump_defect: f64,
    /// `||S_i u_i + S_e u_e - F|| / (||S_i u_i|| + ||S_e u_e|| + ||F||)`, the
    /// discrete statement that both bidomain equations share a left side.
    pub identity_residual: f64,
    pub linear_iterations: usize,
    pub newton_iterations: usize,
}

/// Default relative tolerance of the elliptic and pair solves.
pub const ELLIPTIC_TOL: f64 = 1e-8;
/// Absolute tolerance on the nodal residual of the implicit step.
pub const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 25;

/// `[[S_i + C, -C], [-C, S_e + C]]` on the free nodes, `C` diagonal.
struct PairOperator<'a> {
    s_i: &'a SparseOperator,
    s_e: &'a SparseOperator,
    coupling: &'a [f64],
}

impl LinearOperator for PairOperator<'_> {
    fn dim(&self) -> usize {
        2 * self.coupling.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.coupling.len();
        let (xi, xe) = x.split_at(n);
        let (yi, ye) = y.split_at_mut(n);
        self.s_i.apply(xi, yi);
        self.s_e.apply(xe, ye);
        for p in 0..n {
            let jump = self.coupling[p] * (xi[p] - xe[p]);
            yi[p] += jump;
            ye[p] -= jump;
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let di = self.s_i.diagonal()?;
        let de = self.s_e.diagonal()?;
        Some(
            di.iter()
                .zip(self.coupling)
                .map(|(d, c)| d + c)
                .chain(de.iter().zip(self.coupling).map(|(d, c)| d + c))
                .collect(),
        )
    }
}

/// Discretized homogenized bidomain system on a fixed mesh.
#[derive(Debug, Clone)]
pub struct MacroSolver {
    mesh: MacroMesh,
    model: EffectiveModel,
    ionic: IonicModel,
    tol: f64,
    free: Vec<usize>,
    mass: Vec<f64>,
    mass_free: Vec<f64>,
    lateral: Vec<f64>,
    s_i: SparseOperator,
    s_e: SparseOperator,
    s_i_free: SparseOperator,
    s_e_free: SparseOperator,
    s_sum_free: SparseOperator,
}

impl MacroSolver {
    pub fn new(mesh: MacroMesh, model: EffectiveModel, ionic: IonicModel) -> Result<Self> {
        model.validate()?;
        let k_e: Tensor3 = match mesh.mode() {
            MeshMode::Interval => [[model.a_e_eff[0][0], 0.0, 0.0], [0.0; 3], [0.0; 3]],
            MeshMode::Box => model.a_e_eff,
        };
        let s_i = mesh.axial_stiffness(model.a_i_eff)?;
        let s_e = mesh.stiffness(&k_e)?;
        let free = mesh.free_nodes();
        let s_i_free = s_i.restrict(&free)?;
        let s_e_free = s_e.restrict(&free)?;
        let s_sum_free = s_i_free.add(&s_e_free)?;
        let mass = mesh.lumped_mass();
        let mass_free = free.iter().map(|&n| mass[n]).collect();
        let lateral = mesh.lateral_area();
        Ok(MacroSolver {
            mesh,
            model,
            ionic,
            tol: ELLIPTIC_TOL,
            free,
            mass,
            mass_free,
            lateral,
            s_i,
            s_e,
            s_i_free,
            s_e_free,
            s_sum_free,
        })
    }

    /// Relative tolerance used by every linear solve.
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn mesh(&self) -> &MacroMesh {
        &self.mesh
    }

    pub fn model(&self) -> &EffectiveModel {
        &self.model
    }

    pub fn ionic(&self) -> IonicModel {
        self.ionic
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    /// Mass-weighted inner product over all nodes.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).zip(&self.mass).map(|((x, y), m)| x * y * m).sum()
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        self.inner(x, x).sqrt()
    }

    fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&n| full[n]).collect()
    }

    fn scatter(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.num_nodes()];
        for (&n, &v) in self.free.iter().zip(free) {
            out[n] = v;
        }
        out
    }

    /// Load vector of the stimulus at time `t` over all nodes: the flux
    /// `boundary_scale J` integrated against each node's lateral area in box
    /// mode, the mass-lumped source `s` in interval mode.
    pub fn loads(&self, stim: &Stimulus, t: f64) -> Vec<f64> {
        if stim.is_zero() {
            return vec![0.0; self.mesh.num_nodes()];
        }
        let weights = match self.mesh.mode() {
            MeshMode::Box => &self.lateral,
            MeshMode::Interval => &self.mass,
        };
        let scale = match self.mesh.mode() {
            MeshMode::Box => self.model.boundary_scale,
            MeshMode::Interval => 1.0,
        };
        (0..self.mesh.num_nodes())
            .map(|n| scale * weights[n] * stim.value(t, self.mesh.coord(n)[0]))
            .collect()
    }

    /// `||J||^2` on `Sigma` (box) or `||s||^2` on the interval (no boundary scale).
    pub fn source_norm_sq(&self, stim: &Stimulus, t: f64) -> f64 {
        if stim.is_zero() {
            return 0.0;
        }
        let weights = match self.mesh.mode() {
            MeshMode::Box => &self.lateral,
            MeshMode::Interval => &self.mass,
        };
        (0..self.mesh.num_nodes())
            .map(|n| weights[n] * stim.value(t, self.mesh.coord(n)[0]).powi(2))
            .sum()
    }

    pub fn check_compatible(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.mesh.num_nodes() {
            return Err(Error::input(format!(
                "field has {} values for {} nodes",
                v.len(),
                self.mesh.num_nodes()
            )));
        }
        if let Some(n) = (0..v.len()).find(|&n| self.mesh.is_dirichlet(n) && v[n] != 0.0) {
            return Err(Error::input(format!(
                "field is {} at base node {n}; it must vanish on the bases",
                v[n]
            )));
        }
        if let Some(n) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::input(format!("field is not finite at node {n}")));
        }
        Ok(())
    }

    fn cg_opts(&self, tol: f64) -> CgOptions {
        CgOptions {
            tol,
            jacobi: true,
            ..Default::default()
        }
    }

    /// Potentials for a given transmembrane field:
    /// `(S_i + S_e) u_e = F - S_i v` on the free nodes, then `u_i = u_e + v`.
    pub fn elliptic_solve(&self, v: &[f64], stim: &Stimulus, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_compatible(v)?;
        let vf = self.gather(v);
        let f = self.gather(&self.loads(stim, t));
        let siv = self.s_i_free.matvec(&vf);
        let rhs: Vec<f64> = f.iter().zip(&siv).map(|(f, s)| f - s).collect();
        let (ue, _) = cg_solve(&self.s_sum_free, &rhs, None, &self.cg_opts(self.tol))?;
        let u_e = self.scatter(&ue);
        let u_i: Vec<f64> = u_e.iter().zip(v).map(|(e, v)| e + v).collect();
        Ok((u_i, u_e))
    }

    /// The nonnegative membrane operator `A_eff v = M^{-1} S_i u_i`, where
    /// `u_i` is the intracellular potential of the pair problem with `J = 0`.
    /// It equals `-a_i d2u_i/dx1^2 = div(a_e grad u_e)` in the discrete sense,
    /// so that `c_m dv/dt + A_eff v + I = 0` without stimulus. Zero on the bases.
    pub fn apply_a_eff(&self, v: &[f64]) -> Result<Vec<f64>> {
        let (u_i, _) = self.elliptic_solve(v, &Stimulus::none(), 0.0)?;
        let s = self.s_i.matvec(&u_i);
        Ok((0..v.len())
            .map(|n| if self.mesh.is_dirichlet(n) { 0.0 } else { s[n] / self.mass[n] })
            .collect())
    }

    /// `q_0` with `(S_e + S_i) q_0 = F` on the free nodes (box mode only).
    pub fn lift_boundary(&self, stim: &Stimulus, t: f64) -> Result<Vec<f64>> {
        if self.mesh.mode() != MeshMode::Box {
            return Err(Error::input("boundary lifting needs a box mesh with a lateral boundary"));
        }
        let f = self.gather(&self.loads(stim, t));
        let (q, _) = cg_solve(&self.s_sum_free, &f, None, &self.cg_opts(self.tol))?;
        Ok(self.scatter(&q))
    }

    /// Net flux through the bases implied by `q`: minus the sum of the
    /// reactions `(S_e + S_i) q - F` on the base nodes.
    pub fn base_outflow(&self, q: &[f64], stim: &Stimulus, t: f64) -> f64 {
        let f = self.loads(stim, t);
        let se = self.s_e.matvec(q);
        let si = self.s_i.matvec(q);
        -(0..q.len())
            .filter(|&n| self.mesh.is_dirichlet(n))
            .map(|n| se[n] + si[n] - f[n])
            .sum::<f64>()
    }

    pub fn total_injection(&self, stim: &Stimulus, t: f64) -> f64 {
        self.loads(stim, t).iter().sum()
    }

    /// Explicit-reaction stability bound `0.5 c_m / max(1, max |dI/dv|)`.
    pub fn dt_max(&self, v: &[f64]) -> f64 {
        let slope = v.iter().fold(1.0f64, |m, &x| m.max(self.ionic.slope(x).abs()));
        0.5 * self.model.fhn.c_m / slope
    }

    /// Solves the pair system with diagonal coupling on the free nodes.
    fn pair_solve(
        &self,
        coupling: &[f64],
        r_i: &[f64],
        r_e: &[f64],
        warm: Option<(&[f64], &[f64])>,
        tol: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let n = coupling.len();
        if self.mesh.mode() == MeshMode::Interval {
            // nodes are consecutive along x1, so the system is block tridiagonal
            let mut sys = BlockTridiagonal {
                lower: Vec::with_capacity(n),
                diag: Vec::with_capacity(n),
                upper: Vec::with_capacity(n),
            };
            for p in 0..n {
                let c = coupling[p];
                sys.diag.push([
                    [self.s_i_free.get(p, p) + c, -c],
                    [-c, self.s_e_free.get(p, p) + c],
                ]);
                let off = |q: Option<usize>| match q {
                    Some(q) if q < n => [[self.s_i_free.get(p, q), 0.0], [0.0, self.s_e_free.get(p, q)]],
                    _ => [[0.0; 2]; 2],
                };
                sys.lower.push(off(p.checked_sub(1)));
                sys.upper.push(off(Some(p + 1)));
            }
            let rhs: Vec<[f64; 2]> = (0..n).map(|p| [r_i[p], r_e[p]]).collect();
            let x = sys.solve(&rhs)?;
            return Ok((x.iter().map(|x| x[0]).collect(), x.iter().map(|x| x[1]).collect(), 1));
        }
        let op = PairOperator {
            s_i: &self.s_i_free,
            s_e: &self.s_e_free,
            coupling,
        };
        let rhs: Vec<f64> = r_i.iter().chain(r_e).copied().collect();
        let x0: Option<Vec<f64>> = warm.map(|(a, b)| a.iter().chain(b).copied().collect());
        let jacobi = op.diagonal().is_some_and(|d| d.iter().all(|&x| x > 0.0));
        let opts = CgOptions {
            tol,
            jacobi,
            ..Default::default()
        };
        let (x, stats) = cg_solve(&op, &rhs, x0.as_deref(), &opts)?;
        let (a, b) = x.split_at(n);
        Ok((a.to_vec(), b.to_vec(), stats.iterations))
    }

    fn finish_state(&self, t: f64, u_i_free: &[f64], u_e_free: &[f64], g: Vec<f64>) -> Result<MacroState> {
        let u_i = self.scatter(u_i_free);
        let u_e = self.scatter(u_e_free);
        let v: Vec<f64> = u_i.iter().zip(&u_e).map(|(a, b)| a - b).collect();
        for (n, x) in v.iter().chain(&g).enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    node: n % self.mesh.num_nodes(),
                    time: t,
                });
            }
        }
        Ok(MacroState { t, v, g, u_i, u_e })
    }

    /// Diagnostics of `state` against the stimulus at its own time.
    pub fn step_info(&self, state: &MacroState, stim: &Stimulus) -> StepInfo {
        let jump_defect = state
            .u_i
            .iter()
            .zip(&state.u_e)
            .zip(&state.v)
            .fold(0.0f64, |m, ((a, b), v)| m.max((a - b - v).abs()));
        let f = self.gather(&self.loads(stim, state.t));
        let si = self.s_i_free.matvec(&self.gather(&state.u_i));
        let se = self.s_e_free.matvec(&self.gather(&state.u_e));
        let r: Vec<f64> = (0..f.len()).map(|p| si[p] + se[p] - f[p]).collect();
        let scale = norm2(&si) + norm2(&se) + norm2(&f);
        StepInfo {
            jump_defect,
            identity_residual: if scale > 0.0 { norm2(&r) / scale } else { 0.0 },
            ..Default::default()
        }
    }

    /// Gating by its exact frozen-`v` step, reaction explicit, diffusion and
    /// capacitive coupling implicit:
    /// `M (c_m (v+ - v)/dt + I(v, g+)) = -S_i u_i+ = S_e u_e+ - F(t + dt)`.
    pub fn step_imex(&self, state: &MacroState, stim: &Stimulus, dt: f64) -> Result<(MacroState, StepInfo)> {
        if !(dt > 0.0) {
            return Err(Error::input("time step must be positive"));
        }
        let bound = self.dt_max(&state.v);
        if dt > bound {
            return Err(Error::input(format!(
                "dt = {dt} exceeds the explicit-reaction bound {bound:.4e}"
            )));
        }
        let p = &self.model.fhn;
        let t_next = state.t + dt;
        let g: Vec<f64> = state
            .v
            .iter()
            .zip(&state.g)
            .map(|(&v, &g)| gating_exact_step(v, g, dt, p))
            .collect();
        let alpha = p.c_m / dt;
        let r: Vec<f64> = self
            .free
            .iter()
            .zip(&self.mass_free)
            .map(|(&n, &m)| m * (alpha * state.v[n] - self.ionic.current(state.v[n], g[n])))
            .collect();
        let f = self.gather(&self.loads(stim, t_next));
        let r_e: Vec<f64> = f.iter().zip(&r).map(|(f, r)| f - r).collect();
        let coupling: Vec<f64> = self.mass_free.iter().map(|m| alpha * m).collect();
        let warm_i = self.gather(&state.u_i);
        let warm_e = self.gather(&state.u_e);
        let (ui, ue, iters) = self.pair_solve(&coupling, &r, &r_e, Some((&warm_i, &warm_e)), self.tol)?;
        let next = self.finish_state(t_next, &ui, &ue, g)?;
        let mut info = self.step_info(&next, stim);
        info.linear_iterations = iters;
        Ok((next, info))
    }

    /// Backward Euler in `(v, g)` solved through the shifted unknowns
    /// `z = rho u`, `rho = 1 - lambda dt`. Over the shifted step
    /// `tau = dt / rho` the discrete shift satisfies `1/tau + lambda = 1/dt`,
    /// which makes the shifted scheme reproduce backward Euler exactly; the
    /// cubic carries the factor `kappa = rho^-2`. Newton on `z` with the
    /// gating variable eliminated; each Newton step is one SPD pair solve.
    pub fn step_implicit(
        &self,
        state: &MacroState,
        stim: &Stimulus,
        dt: f64,
        lambda: f64,
    ) -> Result<(MacroState, StepInfo)> {
        if !(dt > 0.0) {
            return Err(Error::input("time step must be positive"));
        }
        if !(lambda >= 0.0) || lambda * dt >= 1.0 {
            return Err(Error::input(format!("need 0 <= lambda dt < 1 (lambda = {lambda}, dt = {dt})")));
        }
        let p = self.model.fhn;
        let c_m = p.c_m;
        let ionic = self.ionic;
        let rho = 1.0 - lambda * dt;
        let t_next = state.t + dt;
        let n = self.free.len();
        let gate_den = 1.0 / dt + p.b;
        // backward-Euler gating as a function of the new v
        let g_new = |g_old: f64, v_new: f64| (g_old / dt + p.a + p.theta * v_new) / gate_den;
        let dg_dv = p.theta / gate_den;
        let v_old = self.gather(&state.v);
        let g_old = self.gather(&state.g);
        let f: Vec<f64> = self.gather(&self.loads(stim, t_next)).iter().map(|x| rho * x).collect();

        let mut zi: Vec<f64> = self.gather(&state.u_i).iter().map(|x| rho * x).collect();
        let mut ze: Vec<f64> = self.gather(&state.u_e).iter().map(|x| rho * x).collect();
        let mut history = Vec::new();
        let mut linear_iterations = 0;
        let mut newton_iterations = 0;
        loop {
            let mut r_w = vec![0.0; n];
            let mut d = vec![0.0; n];
            for q in 0..n {
                let w = zi[q] - ze[q];
                let v_new = w / rho;
                let g = g_new(g_old[q], v_new);
                // rho * I(w / rho, g): for the cubic this is kappa w^3 / 3 - w - rho g
                r_w[q] = self.mass_free[q] * (c_m * (w - rho * v_old[q]) / dt + rho * ionic.current(v_new, g));
                d[q] = c_m / dt + ionic.slope(v_new) + ionic.gating_slope() * dg_dv;
            }
            let si = self.s_i_free.matvec(&zi);
            let se = self.s_e_free.matvec(&ze);
            let g1: Vec<f64> = (0..n).map(|q| r_w[q] + si[q]).collect();
            let g2: Vec<f64> = (0..n).map(|q| -r_w[q] + se[q] - f[q]).collect();
            let strong = (0..n).fold(0.0f64, |m, q| m.max(g1[q].abs().max(g2[q].abs()) / self.mass_free[q]));
            history.push(strong);
            if !strong.is_finite() {
                return Err(Error::NewtonDiverged { history });
            }
            if strong <= NEWTON_TOL {
                break;
            }
            if newton_iterations >= NEWTON_MAX_ITER {
                return Err(Error::NewtonDiverged { history });
            }
            let coupling: Vec<f64> = d.iter().zip(&self.mass_free).map(|(d, m)| d * m).collect();
            let neg1: Vec<f64> = g1.iter().map(|x| -x).collect();
            let neg2: Vec<f64> = g2.iter().map(|x| -x).collect();
            let g_norm = (norm2(&g1).powi(2) + norm2(&g2).powi(2)).sqrt();
            let m_min = self.mass_free.iter().cloned().fold(f64::INFINITY, f64::min);
            let lin_tol = (0.01 * NEWTON_TOL * m_min / g_norm).clamp(1e-12, self.tol);
            let (di, de, it) = self.pair_solve(&coupling, &neg1, &neg2, None, lin_tol)?;
            linear_iterations += it;
            newton_iterations += 1;
            for q in 0..n {
                zi[q] += di[q];
                ze[q] += de[q];
            }
        }
        let ui: Vec<f64> = zi.iter().map(|z| z / rho).collect();
        let ue: Vec<f64> = ze.iter().map(|z| z / rho).collect();
        let mut g = state.g.clone();
        for (q, &node) in self.free.iter().enumerate() {
            g[node] = g_new(g_old[q], ui[q] - ue[q]);
        }
        for node in 0..g.len() {
            if self.mesh.is_dirichlet(node) {
                g[node] = g_new(state.g[node], 0.0);
            }
        }
        let next = self.finish_state(t_next, &ui, &ue, g)?;
        let mut info = self.step_info(&next, stim);
        info.linear_iterations = linear_iterations;
        info.newton_iterations = newton_iterations;
        Ok((next, info))
    }

    /// Stationary state without stimulus: `M I(v, g_inf(v)) = -S_i u_i = S_e u_e`
    /// with `g = g_inf(v)`, by damped Newton from `v = 0`. The clamped
    /// membrane rest point is not admissible here because `v` must vanish on
    /// the bases, so this is the rest state of the spatial problem.
    pub fn rest_state(&self) -> Result<MacroState> {
        let p = self.model.fhn;
        let ionic = self.ionic;
        let n = self.free.len();
        let dginf = p.theta / p.b;
        let residual = |ui: &[f64], ue: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
            let si = self.s_i_free.matvec(ui);
            let se = self.s_e_free.matvec(ue);
            let mut g1 = vec![0.0; n];
            let mut g2 = vec![0.0; n];
            let mut d = vec![0.0; n];
            let mut strong = 0.0f64;
            for q in 0..n {
                let v = ui[q] - ue[q];
                let i = self.mass_free[q] * ionic.current(v, gating_equilibrium(v, &p));
                g1[q] = i + si[q];
                g2[q] = -i + se[q];
                d[q] = ionic.slope(v) + ionic.gating_slope() * dginf;
                strong = strong.max(g1[q].abs().max(g2[q].abs()) / self.mass_free[q]);
            }
            (g1, g2, d, strong)
        };
        let mut ui = vec![0.0; n];
        let mut ue = vec![0.0; n];
        let mut history = Vec::new();
        let (mut g1, mut g2, mut d, mut strong) = residual(&ui, &ue);
        history.push(strong);
        for _ in 0..60 {
            if strong <= 1e-13 {
                break;
            }
            let coupling: Vec<f64> = d.iter().zip(&self.mass_free).map(|(d, m)| d * m).collect();
            let neg1: Vec<f64> = g1.iter().map(|x| -x).collect();
            let neg2: Vec<f64> = g2.iter().map(|x| -x).collect();
            let (di, de, _) = self.pair_solve(&coupling, &neg1, &neg2, None, 1e-10)?;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let ti: Vec<f64> = (0..n).map(|q| ui[q] + step * di[q]).collect();
                let te: Vec<f64> = (0..n).map(|q| ue[q] + step * de[q]).collect();
                let trial = residual(&ti, &te);
                if trial.3 < strong {
                    ui = ti;
                    ue = te;
                    (g1, g2, d, strong) = trial;
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
        let u_i = self.scatter(&ui);
        let u_e = self.scatter(&ue);
        let v: Vec<f64> = u_i.iter().zip(&u_e).map(|(a, b)| a - b).collect();
        let g = v.iter().map(|&v| gating_equilibrium(v, &p)).collect();
        Ok(MacroState { t: 0.0, v, g, u_i, u_e })
    }

    /// State with the given membrane fields and consistent potentials.
    pub fn state_from(&self, t: f64, v: Vec<f64>, g: Vec<f64>, stim: &Stimulus) -> Result<MacroState> {
        if g.len() != v.len() {
            return Err(Error::input("gating field length differs from v"));
        }
        let (u_i, u_e) = self.elliptic_solve(&v, stim, t)?;
        Ok(MacroState { t, v, g, u_i, u_e })
    }

    /// `(E, D, S)` for the energy log: `E = ||v||^2 + ||g||^2`,
    /// `D = u_i.S_i.u_i + u_e.S_e.u_e + ||v||_4^4` (which reduces to
    /// `<A_eff v, v> + ||v||_4^4` without stimulus), `S = ||J||^2`.
    pub fn energy_terms(&self, state: &MacroState, stim: &Stimulus) -> (f64, f64, f64) {
        let e = self.inner(&state.v, &state.v) + self.inner(&state.g, &state.g);
        let si = self.s_i.matvec(&state.u_i);
        let se = self.s_e.matvec(&state.u_e);
        let quartic: f64 = state.v.iter().zip(&self.mass).map(|(v, m)| m * v.powi(4)).sum();
        let d = state.u_i.iter().zip(&si).map(|(a, b)| a * b).sum::<f64>()
            + state.u_e.iter().zip(&se).map(|(a, b)| a * b).sum::<f64>()
            + quartic;
        (e, d, self.source_norm_sq(stim, state.t))
    }
}
