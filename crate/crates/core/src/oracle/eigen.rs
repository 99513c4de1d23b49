use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::vector::{dot, norm_sq};

/// The two eigenvalues of the rank-<=2 symmetric reconstruction that can be
/// nonzero, sorted so `lambda1 >= lambda2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigPair {
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Closed-form eigenvalues of [`super::min_norm_p_symmetric`]`(h, v)`.
///
/// With `x = h h^T`, `y = h v^T`, `z = v v^T` the eigenvectors lie in
/// `span(h, v)` and
/// `lambda_{1,2} = (x y +- sqrt(x^2 y^2 + 4 (x z - y^2) x^2)) / (2 x^2)`.
/// The root without cancellation is computed directly and the other one from
/// the product `lambda1 lambda2 = -(x z - y^2) / x^2`.
pub fn eig_closed_form(h: &[f64], v: &[f64]) -> Result<EigPair> {
    ensure_len("eigenvalues: v", h.len(), v.len())?;
    let x = norm_sq(h);
    if !(x > 0.0) {
        return Err(Error::ZeroGradient {
            context: "eigenvalues of the symmetric reconstruction",
        });
    }
    let y = dot(h, v);
    let z = norm_sq(v);
    let mut gram_det = x * z - y * y;
    // Cauchy-Schwarz says gram_det >= 0; rounding can push it just below
    if gram_det < 0.0 {
        if gram_det < -1e-12 * (x * z).max(1.0) {
            return Err(Error::NegativeDiscriminant { value: gram_det });
        }
        gram_det = 0.0;
    }
    let root = (y * y + 4.0 * gram_det).sqrt();
    let product = if gram_det > 0.0 { -gram_det / (x * x) } else { 0.0 };
    let (lambda1, lambda2) = if y >= 0.0 {
        let big = (y + root) / (2.0 * x);
        (big, if big != 0.0 { product / big } else { 0.0 })
    } else {
        let small = (y - root) / (2.0 * x);
        (product / small, small)
    };
    Ok(EigPair { lambda1, lambda2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn general_case() {
        let e = eig_closed_form(&[1.0, 0.0], &[2.0, 3.0]).unwrap();
        let s = 10f64.sqrt();
        assert!((e.lambda1 - (1.0 + s)).abs() < 1e-14);
        assert!((e.lambda2 - (1.0 - s)).abs() < 1e-14);
    }

    #[test]
    fn zero_and_parallel_cases() {
        assert_eq!(eig_closed_form(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), EigPair { lambda1: 0.0, lambda2: 0.0 });
        let e = eig_closed_form(&[1.0, 0.0], &[4.0, 0.0]).unwrap();
        assert_eq!((e.lambda1, e.lambda2), (4.0, 0.0));
        // anti-parallel: the nonzero eigenvalue is the (negative) factor
        let e = eig_closed_form(&[0.0, 2.0], &[0.0, -6.0]).unwrap();
        assert_eq!((e.lambda1, e.lambda2), (0.0, -3.0));
    }

    #[test]
    fn zero_gradient_is_an_error() {
        assert!(eig_closed_form(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    }
}
