use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_len, Error, Result};
use crate::vector::{GradVector, ParamVector};

/// Explicit parameter covariance `P_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseCov(DMatrix<f64>);

impl DenseCov {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::InvalidArgument(format!("covariance must be square, got {}x{}", p.nrows(), p.ncols())));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
        }
        Ok(Self(p))
    }

    pub fn isotropic(n: usize, variance: f64) -> Self {
        Self(DMatrix::identity(n, n) * variance)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Largest `|P_ij - P_ji|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.0 - self.0.transpose()).amax()
    }
}

#[derive(Clone, Debug)]
pub struct DenseEkfStep {
    pub theta: ParamVector,
    pub p: DenseCov,
    /// Innovation covariance used as divisor (after flooring).
    pub s: f64,
    pub floored: bool,
}

/// One full EKF step with the loss as scalar observation.
///
/// `S = H(P+qI)H^T + r`, `K = (P+qI)H^T / S`, `P' = (I - K H)(P + qI)`,
/// `theta' = theta + K (l_target - loss)`. `P'` is re-symmetrised.
#[allow(clippy::too_many_arguments)]
pub fn dense_ekf_step(
    theta: &ParamVector,
    p: &DenseCov,
    q: f64,
    r: f64,
    loss: f64,
    l_target: f64,
    h: &GradVector,
    eps: f64,
) -> Result<DenseEkfStep> {
    let n = p.dim();
    ensure_len("dense EKF: theta", n, theta.len())?;
    ensure_len("dense EKF: gradient", n, h.len())?;
    let hv = DVector::from_column_slice(h);
    let prior = p.matrix() + DMatrix::identity(n, n) * q;
    let ph = &prior * &hv;
    let s_raw = hv.dot(&ph) + r;
    let floored = s_raw < eps;
    let s = if floored { eps } else { s_raw };
    let gain = &ph / s;
    // (I - K H) P_prior = P_prior - K (H P_prior); H P_prior = (P_prior H^T)^T by symmetry
    let mut posterior = &prior - &gain * ph.transpose();
    posterior = (&posterior + posterior.transpose()) * 0.5;
    let innovation = l_target - loss;
    let theta_next: Vec<f64> = theta.iter().zip(gain.iter()).map(|(t, k)| t + k * innovation).collect();
    if !posterior.iter().all(|x| x.is_finite()) || !theta_next.iter().all(|x| x.is_finite()) {
        return Err(Error::non_finite("dense EKF step"));
    }
    Ok(DenseEkfStep {
        theta: ParamVector::new(theta_next),
        p: DenseCov(posterior),
        s,
        floored,
    })
}
