//! Dense reference implementations.
//!
//! Everything here is `O(n^2)` memory or worse and exists to check the
//! linear-cost recursion in [`crate::optim::koala`]: the full EKF over an
//! explicit covariance, closed-form and numeric minimum-Frobenius-norm
//! reconstructions of `P` from one constraint `h P = v`, the eigenvalues of
//! the symmetric reconstruction, and the one-step ground-truth matrix `M`.

pub mod dense_ekf;
pub mod diagnostics;
pub mod eigen;
pub mod min_norm;

pub use dense_ekf::{dense_ekf_step, DenseCov, DenseEkfStep};
pub use diagnostics::{ground_truth_m, psd_direction_check, DiagnosticsRow, GroundTruth};
pub use eigen::{eig_closed_form, EigPair};
pub use min_norm::{
    min_norm_p_symmetric, min_norm_p_vanilla, numeric_min_norm_solve, numeric_min_norm_solve_full,
    numeric_min_norm_solve_schur,
};
