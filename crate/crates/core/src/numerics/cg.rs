use super::sparse::{dot, norm2, project_zero_mean, LinearOperator, Nullspace};
use crate::error::{Error, Result};

/// Iteration cap applied to the default `50 * n^(1/3)` rule.
pub const MAX_ITER_CAP: usize = 20_000;

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    /// Relative residual target `||b - Ax|| <= tol * ||b||`.
    pub tol: f64,
    /// Defaults to `50 * n^(1/3)`, capped at [`MAX_ITER_CAP`].
    pub max_iter: Option<usize>,
    /// Diagonal (Jacobi) scaling.
    pub jacobi: bool,
    pub nullspace: Nullspace,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-8,
            max_iter: None,
            jacobi: false,
            nullspace: Nullspace::None,
        }
    }
}

impl CgOptions {
    pub fn with_tol(tol: f64) -> Self {
        CgOptions {
            tol,
            ..Default::default()
        }
    }

    pub fn max_iter_for(&self, n: usize) -> usize {
        self.max_iter.unwrap_or_else(|| {
            let rule = (50.0 * (n as f64).cbrt()).ceil() as usize;
            rule.clamp(1, MAX_ITER_CAP)
        })
    }
}

#[derive(Debug, Clone)]
pub struct CgStats {
    pub iterations: usize,
    /// Final relative residual (absolute when the right-hand side vanishes).
    pub residual: f64,
    /// Values of `x.A.x/2 - b.x` per iterate. This equals half the squared
    /// A-norm error up to a constant, so it must be non-increasing.
    pub functional: Vec<f64>,
}

impl CgStats {
    pub fn energy_monotone(&self) -> bool {
        self.functional
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-14 * w[0].abs().max(1e-300))
    }
}

/// Conjugate gradients for symmetric positive (semi)definite operators.
///
/// With `Nullspace::Constants` the right-hand side, the iterate and every
/// residual are projected to zero mean, so the returned solution is the
/// zero-mean one.
pub fn cg_solve<A: LinearOperator + ?Sized>(
    a: &A,
    rhs: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
) -> Result<(Vec<f64>, CgStats)> {
    let n = a.dim();
    if rhs.len() != n {
        return Err(Error::input(format!(
            "right-hand side has length {} for operator of dimension {n}",
            rhs.len()
        )));
    }
    let project = opts.nullspace == Nullspace::Constants;
    let mut b = rhs.to_vec();
    if project {
        project_zero_mean(&mut b);
    }
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        Some(_) => return Err(Error::input("initial guess has wrong length")),
        None => vec![0.0; n],
    };
    if project {
        project_zero_mean(&mut x);
    }

    let inv_diag = if opts.jacobi {
        let d = a
            .diagonal()
            .ok_or_else(|| Error::input("Jacobi scaling requested without a diagonal"))?;
        if d.iter().any(|&v| v <= 0.0) {
            return Err(Error::Indefinite {
                iteration: 0,
                curvature: d.iter().cloned().fold(f64::INFINITY, f64::min),
            });
        }
        Some(d.iter().map(|v| 1.0 / v).collect::<Vec<_>>())
    } else {
        None
    };
    let precondition = |r: &[f64], z: &mut [f64]| {
        match &inv_diag {
            Some(inv) => z.iter_mut().zip(r).zip(inv).for_each(|((z, r), d)| *z = r * d),
            None => z.copy_from_slice(r),
        }
        if project {
            project_zero_mean(z);
        }
    };

    let b_norm = norm2(&b);
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let mut ax = vec![0.0; n];
    a.apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
    if project {
        project_zero_mean(&mut r);
    }
    let functional = |x: &[f64], r: &[f64]| -> f64 {
        // x.Ax/2 - b.x = -(x.b + x.r)/2 with r = b - Ax
        -0.5 * (dot(x, &b) + dot(x, r))
    };
    let mut stats = CgStats {
        iterations: 0,
        residual: norm2(&r) / scale,
        functional: vec![functional(&x, &r)],
    };
    if stats.residual <= opts.tol || n == 0 {
        return Ok((x, stats));
    }

    let max_iter = opts.max_iter_for(n);
    let diag_max = a.diagonal().map(|d| d.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 1..=max_iter {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            // curvature lost in round-off is stagnation, not indefiniteness
            let pn = norm2(&p);
            let scale_a = diag_max.unwrap_or(0.0).max(norm2(&ap) / pn.max(f64::MIN_POSITIVE));
            if pap.abs() <= 1e3 * f64::EPSILON * pn * pn * scale_a || pn == 0.0 {
                return Err(Error::NotConverged {
                    solver: "conjugate gradients",
                    iterations: it - 1,
                    residual: stats.residual,
                });
            }
            return Err(Error::Indefinite {
                iteration: it,
                curvature: pap,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if project {
            project_zero_mean(&mut r);
        }
        stats.iterations = it;
        stats.residual = norm2(&r) / scale;
        stats.functional.push(functional(&x, &r));
        if stats.residual <= opts.tol {
            if project {
                project_zero_mean(&mut x);
            }
            return Ok((x, stats));
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged {
        solver: "conjugate gradients",
        iterations: max_iter,
        residual: stats.residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SparseOperator;

    fn laplacian_1d(n: usize, h: f64, neumann: bool) -> SparseOperator {
        let mut t = Vec::new();
        for i in 0..n {
            let mut diag = 0.0;
            if i > 0 {
                t.push((i, i - 1, -1.0 / h));
                diag += 1.0 / h;
            } else if !neumann {
                diag += 1.0 / h;
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0 / h));
                diag += 1.0 / h;
            } else if !neumann {
                diag += 1.0 / h;
            }
            t.push((i, i, diag));
        }
        SparseOperator::from_triplets(n, t).unwrap()
    }

    #[test]
    fn identity_solves_in_one_iteration() {
        let a = SparseOperator::identity(6);
        let b = vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0];
        let (x, stats) = cg_solve(&a, &b, None, &CgOptions::with_tol(1e-14)).unwrap();
        assert_eq!(stats.iterations, 1);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-15);
        }
    }

    #[test]
    fn recovers_manufactured_solution_of_dirichlet_laplacian() {
        let a = laplacian_1d(5, 1.0, false);
        let x_star = vec![1.0, -0.5, 2.0, 0.25, -1.5];
        let b = a.matvec(&x_star);
        let (x, stats) = cg_solve(&a, &b, None, &CgOptions::with_tol(1e-12)).unwrap();
        for (xi, si) in x.iter().zip(&x_star) {
            assert!((xi - si).abs() < 1e-10, "{xi} vs {si}");
        }
        assert!(stats.energy_monotone());
    }

    /// Dense pseudoinverse oracle for the pure-Neumann 1D Laplacian: on the
    /// zero-mean subspace the operator is inverted through its eigenpairs,
    /// known in closed form (cosine modes).
    fn neumann_pinv_solve(n: usize, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for k in 1..n {
            let lambda = 2.0 - 2.0 * (std::f64::consts::PI * k as f64 / n as f64).cos();
            let mode: Vec<f64> = (0..n)
                .map(|j| {
                    (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n as f64).cos()
                })
                .collect();
            let norm_sq: f64 = mode.iter().map(|m| m * m).sum();
            let coeff = dot(&mode, b) / norm_sq / lambda;
            for j in 0..n {
                x[j] += coeff * mode[j];
            }
        }
        x
    }

    #[test]
    fn neumann_laplacian_matches_pseudoinverse() {
        let n = 8;
        let a = laplacian_1d(n, 1.0, true).with_nullspace(Nullspace::Constants);
        let mut b: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).sin()).collect();
        project_zero_mean(&mut b);
        let opts = CgOptions {
            tol: 1e-13,
            nullspace: Nullspace::Constants,
            ..Default::default()
        };
        let (x, stats) = cg_solve(&a, &b, None, &opts).unwrap();
        let oracle = neumann_pinv_solve(n, &b);
        let mean: f64 = x.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-14);
        for (xi, oi) in x.iter().zip(&oracle) {
            assert!((xi - oi).abs() < 1e-11, "{xi} vs {oi}");
        }
        assert!(stats.residual <= 1e-13);
    }

    #[test]
    fn negative_curvature_is_reported() {
        let a = SparseOperator::from_triplets(2, vec![(0, 0, 1.0), (1, 1, -1.0)]).unwrap();
        let err = cg_solve(&a, &[0.0, 1.0], None, &CgOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Indefinite { .. }));
    }

    #[test]
    fn iteration_budget_exhaustion_carries_residual() {
        let a = laplacian_1d(50, 1.0, false);
        let b = vec![1.0; 50];
        let opts = CgOptions {
            tol: 1e-14,
            max_iter: Some(3),
            ..Default::default()
        };
        match cg_solve(&a, &b, None, &opts) {
            Err(Error::NotConverged {
                iterations,
                residual,
                ..
            }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jacobi_scaling_converges_to_same_solution() {
        let mut t = Vec::new();
        for i in 0..20 {
            t.push((i, i, 2.0 + i as f64));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        let a = SparseOperator::from_triplets(20, t).unwrap();
        let b: Vec<f64> = (0..20).map(|i| (i as f64).cos()).collect();
        let plain = cg_solve(&a, &b, None, &CgOptions::with_tol(1e-13)).unwrap().0;
        let opts = CgOptions {
            tol: 1e-13,
            jacobi: true,
            ..Default::default()
        };
        let scaled = cg_solve(&a, &b, None, &opts).unwrap().0;
        for (p, s) in plain.iter().zip(&scaled) {
            assert!((p - s).abs() < 1e-11);
        }
    }

    #[test]
    fn identical_inputs_give_identical_iterates() {
        let a = laplacian_1d(40, 0.1, false);
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.2).sin()).collect();
        let (x1, s1) = cg_solve(&a, &b, None, &CgOptions::default()).unwrap();
        let (x2, s2) = cg_solve(&a, &b, None, &CgOptions::default()).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(s1.functional, s2.functional);
    }
}
