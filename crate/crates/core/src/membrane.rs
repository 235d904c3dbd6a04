//! FitzHugh-Nagumo membrane kinetics and the shifted monotone operator.
//!
//! `I_ion(v, g) = v^3/3 - v - g`, `dg/dt = theta v + a - b g`.
//!
//! With `W = e^{-lambda t} (v, g) = (w, h)` the membrane system becomes
//! `dW/dt + B1(W) + B2(t, W) = F`, where
//! `B1(W) = (A w / c_m + (lambda - 1/c_m) w - h / c_m, (b + lambda) h - theta w)`
//! and `B2(t, W) = (e^{2 lambda t} w^3 / (3 c_m), 0)`. Both are monotone once
//! `lambda >= lambda_min`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bisect, newton_scalar, LinearOperator, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FhnParams {
    pub theta: f64,
    pub a: f64,
    pub b: f64,
    pub c_m: f64,
    /// Exponential shift used by the monotone formulation.
    #[serde(default)]
    pub lambda: f64,
}

impl Default for FhnParams {
    fn default() -> Self {
        FhnParams {
            theta: 0.5,
            a: 0.1,
            b: 0.8,
            c_m: 1.0,
            lambda: 0.0,
        }
    }
}

impl FhnParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("theta", self.theta), ("a", self.a), ("b", self.b), ("c_m", self.c_m)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::input(format!("{name} = {v} must be positive and finite")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::input(format!("lambda = {} must be non-negative", self.lambda)));
        }
        Ok(())
    }

    /// Validation for the monotone formulation, which needs `lambda >= lambda_min`.
    pub fn validate_monotone(&self) -> Result<()> {
        self.validate()?;
        let min = lambda_min(self);
        if self.lambda < min {
            return Err(Error::input(format!(
                "lambda = {} is below the monotonicity threshold {min}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Which ionic current closes the membrane law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IonicModel {
    #[default]
    FitzhughNagumo,
    /// Linearization at the origin: `I = -v - g`.
    Linear,
    /// No ionic current.
    Passive,
}

impl IonicModel {
    pub fn current(self, v: f64, g: f64) -> f64 {
        match self {
            IonicModel::FitzhughNagumo => ionic_current(v, g),
            IonicModel::Linear => -v - g,
            IonicModel::Passive => 0.0,
        }
    }

    /// `dI/dv`.
    pub fn slope(self, v: f64) -> f64 {
        match self {
            IonicModel::FitzhughNagumo => v * v - 1.0,
            IonicModel::Linear => -1.0,
            IonicModel::Passive => 0.0,
        }
    }

    /// `dI/dg`.
    pub fn gating_slope(self) -> f64 {
        match self {
            IonicModel::Passive => 0.0,
            _ => -1.0,
        }
    }
}

pub fn ionic_current(v: f64, g: f64) -> f64 {
    v * v * v / 3.0 - v - g
}

pub fn gating_rhs(v: f64, g: f64, p: &FhnParams) -> f64 {
    p.theta * v + p.a - p.b * g
}

pub fn gating_equilibrium(v: f64, p: &FhnParams) -> f64 {
    (p.theta * v + p.a) / p.b
}

/// Exact solution of the gating ODE over `dt` with `v` frozen.
pub fn gating_exact_step(v_frozen: f64, g0: f64, dt: f64, p: &FhnParams) -> f64 {
    if dt == 0.0 {
        return g0;
    }
    let g_inf = gating_equilibrium(v_frozen, p);
    g_inf + (g0 - g_inf) * (-p.b * dt).exp()
}

/// Young-inequality threshold on `lambda` for which `B1` is coercive, plus
/// a margin of 0.01.
pub fn lambda_min(p: &FhnParams) -> f64 {
    let inv = 1.0 / p.c_m;
    let half = 0.5 * (p.theta + inv);
    (inv + half).max(half - p.b) + 0.01
}

/// `e^{2 lambda t} v^3 / 3 + (lambda - 1/c_m) c_m v`.
pub fn shifted_reaction(v: f64, lambda: f64, t: f64, c_m: f64) -> f64 {
    (2.0 * lambda * t).exp() * v * v * v / 3.0 + (lambda - 1.0 / c_m) * c_m * v
}

pub fn shifted_reaction_slope(v: f64, lambda: f64, t: f64, c_m: f64) -> f64 {
    (2.0 * lambda * t).exp() * v * v + (lambda - 1.0 / c_m) * c_m
}

/// All equilibria of the space-clamped membrane: real roots of
/// `v^3/3 - v - (theta v + a)/b`, ascending. Each is paired with `g = g_inf(v)`.
pub fn rest_points(p: &FhnParams) -> Result<Vec<(f64, f64)>> {
    p.validate()?;
    let f = |v: f64| v * v * v / 3.0 - v - gating_equilibrium(v, p);
    let df = |v: f64| v * v - 1.0 - p.theta / p.b;
    // Cauchy bound on the roots of v^3 - 3(1 + theta/b) v - 3a/b
    let bound = 1.0 + (3.0 * (1.0 + p.theta / p.b)).max(3.0 * p.a / p.b);
    let samples = 4096;
    let mut roots = Vec::new();
    let mut lo = -bound;
    let mut flo = f(lo);
    for s in 1..=samples {
        let hi = -bound + 2.0 * bound * s as f64 / samples as f64;
        let fhi = f(hi);
        if flo == 0.0 {
            roots.push(lo);
        } else if flo.signum() != fhi.signum() && fhi != 0.0 {
            let mid = 0.5 * (lo + hi);
            let root = newton_scalar(f, df, mid, 1e-15, Some((lo, hi)))
                .or_else(|_| bisect(f, lo, hi, 0.0))?;
            roots.push(root);
        }
        lo = hi;
        flo = fhi;
    }
    if flo == 0.0 {
        roots.push(lo);
    }
    Ok(roots.into_iter().map(|v| (v, gating_equilibrium(v, p))).collect())
}

/// The leftmost equilibrium, which is always linearly stable.
pub fn rest_point(p: &FhnParams) -> Result<(f64, f64)> {
    rest_points(p)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::input("membrane model has no equilibrium"))
}

/// Linear stability of the clamped membrane at `(v, g_inf(v))`.
pub fn is_stable(v: f64, p: &FhnParams) -> bool {
    let j11 = -(v * v - 1.0) / p.c_m;
    let j12 = 1.0 / p.c_m;
    let trace = j11 - p.b;
    let det = -j11 * p.b - j12 * p.theta;
    trace < 0.0 && det > 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonotoneOp {
    B1,
    B2,
    Full,
}

/// Shifted membrane state `(w, h)` on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MembraneField {
    pub w: Vec<f64>,
    pub h: Vec<f64>,
}

/// Membrane-space discretization: a lumped mass and a symmetric stiffness
/// `S`, so that `A w = M^{-1} S w` and `<A w, w>_M = w.S.w`.
#[derive(Debug, Clone)]
pub struct MonotoneMesh {
    mass: Vec<f64>,
    stiffness: SparseOperator,
}

impl MonotoneMesh {
    /// Linear finite elements on `(0, length)` with `nodes` interior nodes
    /// and homogeneous Dirichlet ends.
    pub fn interval(nodes: usize, length: f64, conductivity: f64) -> Result<Self> {
        if nodes < 2 || !(length > 0.0) || !(conductivity >= 0.0) {
            return Err(Error::input("interval mesh needs >= 2 nodes, positive length"));
        }
        let h = length / (nodes + 1) as f64;
        let k = conductivity / h;
        let mut t = Vec::with_capacity(3 * nodes);
        for i in 0..nodes {
            t.push((i, i, 2.0 * k));
            if i + 1 < nodes {
                t.push((i, i + 1, -k));
                t.push((i + 1, i, -k));
            }
        }
        Ok(MonotoneMesh {
            mass: vec![h; nodes],
            stiffness: SparseOperator::from_triplets(nodes, t)?,
        })
    }

    pub fn from_parts(mass: Vec<f64>, stiffness: SparseOperator) -> Result<Self> {
        if mass.len() != stiffness.dim() || mass.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::input("mass must be positive and match the stiffness"));
        }
        Ok(MonotoneMesh { mass, stiffness })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Node positions of an interval mesh, in units of the node spacing.
    fn unit_positions(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.len()).map(|i| (i as f64 + 1.0) / (n + 1.0)).collect()
    }

    pub fn apply_a(&self, w: &[f64]) -> Vec<f64> {
        self.stiffness
            .matvec(w)
            .into_iter()
            .zip(&self.mass)
            .map(|(s, m)| s / m)
            .collect()
    }

    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).zip(&self.mass).map(|((x, y), m)| x * y * m).sum()
    }
}

pub fn apply_monotone(
    op: MonotoneOp,
    p: &FhnParams,
    lambda: f64,
    t: f64,
    mesh: &MonotoneMesh,
    field: &MembraneField,
) -> MembraneField {
    let n = field.w.len();
    let mut w_out = vec![0.0; n];
    let mut h_out = vec![0.0; n];
    let inv = 1.0 / p.c_m;
    if matches!(op, MonotoneOp::B1 | MonotoneOp::Full) {
        let aw = mesh.apply_a(&field.w);
        for i in 0..n {
            w_out[i] += inv * aw[i] + (lambda - inv) * field.w[i] - inv * field.h[i];
            h_out[i] += (p.b + lambda) * field.h[i] - p.theta * field.w[i];
        }
    }
    if matches!(op, MonotoneOp::B2 | MonotoneOp::Full) {
        let factor = (2.0 * lambda * t).exp() / (3.0 * p.c_m);
        for i in 0..n {
            w_out[i] += factor * field.w[i].powi(3);
        }
    }
    MembraneField { w: w_out, h: h_out }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub pass: bool,
    pub pairs: usize,
    pub violations: usize,
    /// Smallest `<Op(W1) - Op(W2), W1 - W2> / (||Op(W1) - Op(W2)|| ||W1 - W2||)`.
    pub worst_ratio: f64,
    pub worst_pair: usize,
}

/// Relative tolerance of the monotonicity test.
pub const MONOTONE_TOL: f64 = 1e-10;

/// Checks `<Op(W1) - Op(W2), W1 - W2>_M >= -tol ||dOp|| ||dW||` on every pair.
pub fn check_monotone(
    op: MonotoneOp,
    p: &FhnParams,
    lambda: f64,
    t: f64,
    pairs: &[(MembraneField, MembraneField)],
    mesh: &MonotoneMesh,
) -> MonotoneReport {
    let mut report = MonotoneReport {
        pass: true,
        pairs: pairs.len(),
        violations: 0,
        worst_ratio: f64::INFINITY,
        worst_pair: 0,
    };
    for (idx, (w1, w2)) in pairs.iter().enumerate() {
        let o1 = apply_monotone(op, p, lambda, t, mesh, w1);
        let o2 = apply_monotone(op, p, lambda, t, mesh, w2);
        let dow: Vec<f64> = o1.w.iter().zip(&o2.w).map(|(a, b)| a - b).collect();
        let doh: Vec<f64> = o1.h.iter().zip(&o2.h).map(|(a, b)| a - b).collect();
        let dw: Vec<f64> = w1.w.iter().zip(&w2.w).map(|(a, b)| a - b).collect();
        let dh: Vec<f64> = w1.h.iter().zip(&w2.h).map(|(a, b)| a - b).collect();
        let ip = mesh.inner(&dow, &dw) + mesh.inner(&doh, &dh);
        let scale = ((mesh.inner(&dow, &dow) + mesh.inner(&doh, &doh)) * (mesh.inner(&dw, &dw) + mesh.inner(&dh, &dh))).sqrt();
        let ratio = if scale > 0.0 { ip / scale } else { 0.0 };
        if ratio < report.worst_ratio {
            report.worst_ratio = ratio;
            report.worst_pair = idx;
        }
        if ip < -MONOTONE_TOL * scale {
            report.violations += 1;
            report.pass = false;
        }
    }
    if pairs.is_empty() {
        report.worst_ratio = 0.0;
    }
    report
}

/// Smooth random membrane field: a few Dirichlet sine modes in `w`, and
/// `h` correlated with `w` plus an independent smooth part.
pub fn random_field<R: Rng>(mesh: &MonotoneMesh, rng: &mut R) -> MembraneField {
    let x = mesh.unit_positions();
    let modes = 4;
    let amp = rng.gen_range(0.0..3.0);
    let cw: Vec<f64> = (0..modes).map(|m| amp * rng.gen_range(-1.0..1.0) / (m + 1) as f64).collect();
    let ch: Vec<f64> = (0..modes).map(|m| 0.3 * amp * rng.gen_range(-1.0..1.0) / (m + 1) as f64).collect();
    let rho = rng.gen_range(-1.5..1.5);
    let mode = |c: &[f64], x: f64| -> f64 {
        c.iter()
            .enumerate()
            .map(|(m, c)| c * ((m + 1) as f64 * std::f64::consts::PI * x).sin())
            .sum()
    };
    let w: Vec<f64> = x.iter().map(|&x| mode(&cw, x)).collect();
    let h: Vec<f64> = x.iter().zip(&w).map(|(&x, &w)| rho * w + mode(&ch, x)).collect();
    MembraneField { w, h }
}

pub fn random_pairs<R: Rng>(mesh: &MonotoneMesh, count: usize, rng: &mut R) -> Vec<(MembraneField, MembraneField)> {
    (0..count)
        .map(|_| (random_field(mesh, rng), random_field(mesh, rng)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference_params() -> FhnParams {
        FhnParams::default()
    }

    #[test]
    fn ionic_current_values() {
        assert_eq!(ionic_current(0.0, 0.0), 0.0);
        assert!((ionic_current(1.0, 0.0) + 2.0 / 3.0).abs() < 1e-15);
        assert!(ionic_current(3f64.sqrt(), 0.0).abs() < 1e-15);
        for v in [-2.5, -0.3, 0.7, 1.9] {
            assert_eq!(ionic_current(-v, 0.0), -ionic_current(v, 0.0));
        }
    }

    #[test]
    fn gating_rhs_values() {
        let p = FhnParams {
            b: 0.2,
            ..reference_params()
        };
        assert_eq!(gating_rhs(0.0, p.a / p.b, &p), 0.0);
        assert!((gating_rhs(1.0, 0.0, &p) - 0.6).abs() < 1e-15);
        let g = 0.37;
        assert!((gating_rhs(0.4, g, &p) - gating_rhs(0.4, 0.0, &p) + p.b * g).abs() < 1e-15);
    }

    #[test]
    fn gating_exact_step_matches_rk4() {
        let p = reference_params();
        let (v, g0, dt) = (0.8, -0.2, 0.1);
        let mut g = g0;
        let k = 1e-4;
        for _ in 0..1000 {
            let f = |g: f64| gating_rhs(v, g, &p);
            let k1 = f(g);
            let k2 = f(g + 0.5 * k * k1);
            let k3 = f(g + 0.5 * k * k2);
            let k4 = f(g + k * k3);
            g += k / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        assert!((gating_exact_step(v, g0, dt, &p) - g).abs() < 1e-10);
        assert_eq!(gating_exact_step(v, g0, 0.0, &p), g0);
        assert!((gating_exact_step(v, g0, 1e6, &p) - gating_equilibrium(v, &p)).abs() < 1e-15);
    }

    #[test]
    fn gating_step_is_a_semigroup() {
        let p = reference_params();
        let one = gating_exact_step(0.3, 1.2, 0.7, &p);
        let two = gating_exact_step(0.3, gating_exact_step(0.3, 1.2, 0.3, &p), 0.4, &p);
        assert!((one - two).abs() < 1e-12);
    }

    #[test]
    fn lambda_min_rule() {
        assert!((lambda_min(&reference_params()) - 1.76).abs() < 1e-12);
        let p = FhnParams {
            b: 1e9,
            ..reference_params()
        };
        assert!((lambda_min(&p) - (1.0 + 0.75 + 0.01)).abs() < 1e-12);
        let p = FhnParams {
            theta: 10.0,
            c_m: 0.5,
            b: 0.1,
            ..reference_params()
        };
        assert!((lambda_min(&p) - (2.0 + 6.0 + 0.01)).abs() < 1e-12);
    }

    #[test]
    fn shifted_reaction_increasing_above_lambda_min() {
        let p = reference_params();
        let lambda = lambda_min(&p);
        for i in 0..=200 {
            let v = -4.0 + 0.04 * i as f64;
            assert!(shifted_reaction_slope(v, lambda, 0.3, p.c_m) > 0.0);
            assert!(shifted_reaction(v + 0.04, lambda, 0.3, p.c_m) > shifted_reaction(v, lambda, 0.3, p.c_m));
        }
    }

    #[test]
    fn rest_points_solve_the_algebraic_system() {
        let p = reference_params();
        let pts = rest_points(&p).unwrap();
        assert_eq!(pts.len(), 3);
        for &(v, g) in &pts {
            assert!(ionic_current(v, g).abs() < 1e-13);
            assert!(gating_rhs(v, g, &p).abs() < 1e-13);
        }
        let (v, _) = rest_point(&p).unwrap();
        assert_eq!(v, pts[0].0);
        assert!(is_stable(v, &p));
        assert!(!is_stable(pts[1].0, &p));
        // a monotone variant has a single equilibrium
        let q = FhnParams {
            theta: 3.0,
            b: 0.5,
            ..p
        };
        let pts = rest_points(&q).unwrap();
        assert!(!pts.is_empty());
    }

    #[test]
    fn b2_is_monotone_and_vanishes_on_equal_w() {
        let mesh = MonotoneMesh::interval(16, 1.0, 1.0).unwrap();
        let p = reference_params();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_field(&mesh, &mut rng);
        let mut b = random_field(&mesh, &mut rng);
        b.w = a.w.clone();
        let rep = check_monotone(MonotoneOp::B2, &p, 1.0, 0.5, &[(a.clone(), b)], &mesh);
        assert!(rep.pass);
        let pairs = random_pairs(&mesh, 200, &mut rng);
        assert!(check_monotone(MonotoneOp::B2, &p, 0.0, 0.0, &pairs, &mesh).pass);
    }

    #[test]
    fn monotone_at_lambda_min_but_not_at_zero_for_large_theta() {
        let p = FhnParams {
            theta: 20.0,
            ..reference_params()
        };
        let mesh = MonotoneMesh::interval(64, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs = random_pairs(&mesh, 300, &mut rng);
        for op in [MonotoneOp::B1, MonotoneOp::Full] {
            assert!(check_monotone(op, &p, lambda_min(&p), 0.2, &pairs, &mesh).pass);
            let bad = check_monotone(op, &p, 0.0, 0.2, &pairs, &mesh);
            assert!(!bad.pass && bad.violations > 0);
        }
    }

    #[test]
    fn monotone_mode_rejects_small_lambda() {
        let p = FhnParams {
            lambda: 1.0,
            ..reference_params()
        };
        assert!(p.validate().is_ok());
        assert!(p.validate_monotone().is_err());
        assert!(FhnParams { a: 0.0, ..p }.validate().is_err());
    }
}
