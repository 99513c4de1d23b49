//! Scalar-covariance Kalman step (`P ~ p I`, `H^T H ~ |H|^2 I`).

use crate::error::{ensure_finite, Error, Result};
use crate::optim::koala::{KoalaHyper, RMode};
use crate::optim::r_estimator::REstimatorState;
use crate::vector::{norm_sq, GradVector, ParamVector};

/// One scalar-covariance update.
///
/// With `p_hat = p + q` and `D = p_hat |h|^2 + r`:
/// `delta = -p_hat (loss - l_target) / D * h`, `p' = r p_hat / D`.
pub fn koala_v_step(p: f64, q: f64, r: f64, loss: f64, h: &GradVector, l_target: f64) -> Result<(ParamVector, f64)> {
    if !(p > 0.0) {
        return Err(Error::InvalidArgument(format!("scalar covariance must be > 0, got {p}")));
    }
    let p_hat = p + q;
    let denom = p_hat * norm_sq(h) + r;
    let scale = -p_hat * (loss - l_target) / denom;
    let delta: Vec<f64> = h.iter().map(|hi| scale * hi).collect();
    let new_p = r * p_hat / denom;
    ensure_finite("scalar-covariance delta", &delta)?;
    if !new_p.is_finite() {
        return Err(Error::non_finite("scalar covariance"));
    }
    Ok((ParamVector::new(delta), new_p))
}

/// Stateful scalar-covariance optimizer with the same `R` handling and
/// target-loss convention (`l_target = (1 - eta) L`) as the surrogate step.
#[derive(Clone, Debug)]
pub struct KoalaV {
    pub hyper: KoalaHyper,
    pub p: f64,
    pub r_state: REstimatorState,
    pub r_last: f64,
    pub step: u64,
}

impl KoalaV {
    pub fn new(hyper: KoalaHyper) -> Result<Self> {
        hyper.validate()?;
        let alpha = match hyper.r_mode {
            RMode::Ema { alpha } => alpha,
            RMode::Fixed { .. } => 0.9,
        };
        Ok(Self {
            p: hyper.sigma0_sq(),
            hyper,
            r_state: REstimatorState::new(alpha),
            r_last: 0.0,
            step: 0,
        })
    }

    pub fn step(&mut self, loss: f64, grad: &GradVector, eta: f64) -> Result<ParamVector> {
        let r = match self.hyper.r_mode {
            RMode::Fixed { r } => r,
            RMode::Ema { .. } => self.r_state.observe(loss, self.hyper.eps),
        };
        let (delta, p) = koala_v_step(self.p, self.hyper.q, r, loss, grad, (1.0 - eta) * loss)?;
        // p' = r p_hat / D can underflow to 0 with a floored R; keep it a valid variance
        self.p = p.max(self.hyper.eps);
        self.r_last = r;
        self.step += 1;
        Ok(delta)
    }
}
