use crate::error::{Error, Result};

/// Anything that can compute `y = A x` for a square operator.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Main diagonal, when cheaply available (used for Jacobi scaling).
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Known kernel of a semidefinite operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nullspace {
    #[default]
    None,
    /// Constant vectors (pure Neumann / periodic Laplacians).
    Constants,
}

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
    nullspace: Nullspace,
}

impl SparseOperator {
    /// Assembles from `(row, col, value)` triplets, summing duplicates and
    /// dropping entries that cancel to exactly zero.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= n || c >= n) {
            return Err(Error::input(format!(
                "triplet ({r}, {c}) out of range for dimension {n}"
            )));
        }
        if triplets.iter().any(|t| !t.2.is_finite()) {
            return Err(Error::input("non-finite matrix entry"));
        }
        triplets.sort_unstable_by_key(|a| (a.0, a.1));

        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut iter = triplets.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut op = SparseOperator {
            n,
            row_ptr,
            col_idx,
            values,
            symmetric: false,
            nullspace: Nullspace::None,
        };
        op.symmetric = op.check_symmetry(0.0);
        Ok(op)
    }

    pub fn identity(n: usize) -> Self {
        SparseOperator {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
            nullspace: Nullspace::None,
        }
    }

    pub fn with_nullspace(mut self, nullspace: Nullspace) -> Self {
        self.nullspace = nullspace;
        self
    }

    pub fn nullspace(&self) -> Nullspace {
        self.nullspace
    }

    /// Symmetry flag computed at assembly (exact entrywise comparison).
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.col_idx[range.clone()].binary_search(&col) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Entrywise symmetry check with absolute tolerance `tol`.
    pub fn check_symmetry(&self, tol: f64) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, v)| (self.get(c, r) - v).abs() <= tol))
    }

    /// Principal submatrix on the given (sorted, unique) index set.
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &i) in keep.iter().enumerate() {
            pos[i] = k;
        }
        let mut triplets = Vec::new();
        for (k, &i) in keep.iter().enumerate() {
            for (c, v) in self.row(i) {
                if pos[c] != usize::MAX {
                    triplets.push((k, pos[c], v));
                }
            }
        }
        SparseOperator::from_triplets(keep.len(), triplets)
    }

    /// `self + other`, both of the same dimension.
    pub fn add(&self, other: &SparseOperator) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::input("dimension mismatch in operator sum"));
        }
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.n {
            triplets.extend(self.row(r).map(|(c, v)| (r, c, v)));
            triplets.extend(other.row(r).map(|(c, v)| (r, c, v)));
        }
        SparseOperator::from_triplets(self.n, triplets)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply(x, &mut y);
        y
    }
}

impl LinearOperator for SparseOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.n) {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some((0..self.n).map(|i| self.get(i, i)).collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Removes the mean in place.
pub fn project_zero_mean(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= mean;
    }
}
