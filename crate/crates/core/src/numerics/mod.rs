//! Sparse linear algebra and scalar root finding shared by the solvers.

mod block_tridiag;
mod cg;
mod roots;
mod sparse;

pub use block_tridiag::{BlockTridiagonal, Mat2};
pub use cg::{cg_solve, CgOptions, CgStats, MAX_ITER_CAP};
pub use roots::{bisect, newton_scalar};
pub use sparse::{dot, norm2, project_zero_mean, LinearOperator, Nullspace, SparseOperator};
