//! Small dense real-matrix numerics.

mod eigen;
mod expm;
mod matrix;

pub use eigen::{eigenvalues, is_hurwitz, max_real_part, min_real_part, ComplexScalar};
pub use expm::mat_exp;
pub use matrix::{vec_norm_inf, vec_sub, Matrix};

/// Default tolerance for [`is_hurwitz`].
pub const HURWITZ_TOL: f64 = 1e-9;

/// Max absolute row sum: the matrix norm induced by the vector L∞ norm.
pub fn induced_inf_norm<T: crate::Scalar>(m: &Matrix<T>) -> T {
    m.norm_inf()
}
