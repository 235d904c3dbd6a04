use crate::error::{Error, Result};

pub type Mat2 = [[f64; 2]; 2];

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn mulv(a: &Mat2, x: [f64; 2]) -> [f64; 2] {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

fn inv(a: &Mat2) -> Option<Mat2> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]])
}

/// Block-tridiagonal system with 2x2 blocks:
/// `lower[j] x[j-1] + diag[j] x[j] + upper[j] x[j+1] = rhs[j]`.
/// `lower[0]` and `upper[n-1]` are ignored.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    pub lower: Vec<Mat2>,
    pub diag: Vec<Mat2>,
    pub upper: Vec<Mat2>,
}

impl BlockTridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let n = self.len();
        (0..n)
            .map(|j| {
                let mut y = mulv(&self.diag[j], x[j]);
                if j > 0 {
                    let l = mulv(&self.lower[j], x[j - 1]);
                    y = [y[0] + l[0], y[1] + l[1]];
                }
                if j + 1 < n {
                    let u = mulv(&self.upper[j], x[j + 1]);
                    y = [y[0] + u[0], y[1] + u[1]];
                }
                y
            })
            .collect()
    }

    /// Block Thomas elimination without pivoting (valid for SPD systems).
    pub fn solve(&self, rhs: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
        let n = self.len();
        if rhs.len() != n {
            return Err(Error::input("block right-hand side has wrong length"));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let singular = |j| Error::Indefinite {
            iteration: j,
            curvature: 0.0,
        };
        let mut c_prime: Vec<Mat2> = Vec::with_capacity(n);
        let mut d_prime: Vec<[f64; 2]> = Vec::with_capacity(n);
        let inv0 = inv(&self.diag[0]).ok_or_else(|| singular(0))?;
        c_prime.push(mul(&inv0, &self.upper[0]));
        d_prime.push(mulv(&inv0, rhs[0]));
        for j in 1..n {
            let lc = mul(&self.lower[j], &c_prime[j - 1]);
            let m = [
                [self.diag[j][0][0] - lc[0][0], self.diag[j][0][1] - lc[0][1]],
                [self.diag[j][1][0] - lc[1][0], self.diag[j][1][1] - lc[1][1]],
            ];
            let m_inv = inv(&m).ok_or_else(|| singular(j))?;
            c_prime.push(mul(&m_inv, &self.upper[j]));
            let ld = mulv(&self.lower[j], d_prime[j - 1]);
            d_prime.push(mulv(&m_inv, [rhs[j][0] - ld[0], rhs[j][1] - ld[1]]));
        }
        let mut x = vec![[0.0; 2]; n];
        x[n - 1] = d_prime[n - 1];
        for j in (0..n - 1).rev() {
            let cx = mulv(&c_prime[j], x[j + 1]);
            x[j] = [d_prime[j][0] - cx[0], d_prime[j][1] - cx[1]];
        }
        Ok(x)
    }
}
