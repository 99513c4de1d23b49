//! The surrogate-covariance Kalman step.
//!
//! Instead of the `n x n` posterior `P_{k-1}` the optimizer carries
//! `v_k = H_k P_{k-1}`. One step is
//!
//! ```text
//! alpha_k  = H_k H_{k-1}^T / |H_{k-1}|^2
//! lambda_k = H_k (v_{k-1} + Q H_{k-1})^T / S_{k-1}
//! r_k      = [(H_k v_{k-1}^T)|H_{k-1}|^2 - (H_{k-1} v_{k-1}^T)(H_k H_{k-1}^T)] / |H_{k-1}|^4
//! v_k      = (alpha_k - lambda_k) v_{k-1} + Q (H_k - lambda_k H_{k-1}) + r_k H_{k-1}
//! S_k      = H_k v_k^T + Q |H_k|^2 + R
//! delta    = -eta L_k / S_k * (v_k + Q H_k)
//! ```
//!
//! `r_k` is the symmetric-reconstruction correction and is zero for
//! [`Variant::Asymmetric`]. The target loss is `(1 - eta) L_k`, so the
//! innovation is `-eta L_k` and the step scales linearly with `eta`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::optim::r_estimator::REstimatorState;
use crate::vector::{dot, norm_sq, GradVector, ParamVector, SurrogateVector};

pub const DEFAULT_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RMode {
    Fixed { r: f64 },
    Ema { alpha: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Symmetric minimum-norm reconstruction of `P_{k-2}`.
    Symmetric,
    /// Unconstrained reconstruction; `r_k = 0`.
    Asymmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KoalaHyper {
    /// Process-noise variance `Q`.
    pub q: f64,
    /// Initial uncertainty std; `v_1 = sigma0^2 H_1`.
    pub sigma0: f64,
    pub r_mode: RMode,
    pub variant: Variant,
    /// Floor for `S_k`, `|H_{k-1}|^2` and the returned `R`.
    pub eps: f64,
    /// Recorded for manifests; the coupled L2 term lives in the model.
    pub weight_decay: f64,
}

impl Default for KoalaHyper {
    fn default() -> Self {
        Self {
            q: 0.1,
            sigma0: 0.1,
            r_mode: RMode::Ema { alpha: 0.9 },
            variant: Variant::Symmetric,
            eps: DEFAULT_EPS,
            weight_decay: 0.0,
        }
    }
}

impl KoalaHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return bad(format!("q must be finite and >= 0, got {}", self.q));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad(format!("sigma0 must be finite and > 0, got {}", self.sigma0));
        }
        if !(1e-16..=1e-6).contains(&self.eps) {
            return bad(format!("eps must lie in [1e-16, 1e-6], got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        match self.r_mode {
            RMode::Fixed { r } if !(r > 0.0 && r.is_finite()) => bad(format!("fixed R must be > 0, got {r}")),
            RMode::Ema { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                bad(format!("R smoothing factor must lie in (0, 1), got {alpha}"))
            }
            _ => Ok(()),
        }
    }

    pub fn sigma0_sq(&self) -> f64 {
        self.sigma0 * self.sigma0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KoalaState {
    /// `v_k` after the most recent step.
    pub v: SurrogateVector,
    /// Gradient of the most recent step; `H_{k-1}` for the next one.
    pub h_prev: GradVector,
    /// `S_k` of the most recent step, floored at `eps`.
    pub s_prev: f64,
    pub step: u64,
    pub r_state: REstimatorState,
    /// `R` used in the most recent step.
    pub r_last: f64,
    /// Times `S_k` had to be floored.
    pub floor_hits: u64,
    /// Times a degenerate `H_{k-1}` forced `v_k = sigma0^2 H_k`.
    pub resets: u64,
}

/// `S = h v^T + q |h|^2 + r`. Not floored; callers floor before dividing.
pub fn innovation_s(h: &[f64], v: &[f64], q: f64, r: f64) -> Result<f64> {
    ensure_len("innovation: v", h.len(), v.len())?;
    let s = dot(h, v) + q * norm_sq(h) + r;
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::non_finite("innovation covariance"))
    }
}

/// `alpha_k = H_k H_{k-1}^T / max(|H_{k-1}|^2, eps)`.
pub fn compute_alpha(h_k: &[f64], h_prev: &[f64], eps: f64) -> Result<f64> {
    ensure_len("alpha: h_prev", h_k.len(), h_prev.len())?;
    Ok(dot(h_k, h_prev) / norm_sq(h_prev).max(eps))
}

/// `lambda_k = H_k (v_{k-1} + q H_{k-1})^T / S_{k-1}`.
pub fn compute_lambda(h_k: &[f64], v_prev: &[f64], h_prev: &[f64], q: f64, s_prev: f64) -> Result<f64> {
    ensure_len("lambda: v_prev", h_k.len(), v_prev.len())?;
    ensure_len("lambda: h_prev", h_k.len(), h_prev.len())?;
    let lambda = (dot(h_k, v_prev) + q * dot(h_k, h_prev)) / s_prev;
    if lambda.is_finite() {
        Ok(lambda)
    } else {
        Err(Error::non_finite("lambda"))
    }
}

/// Symmetric-reconstruction correction `r_k`; exactly zero for the asymmetric variant.
pub fn compute_r_sym(variant: Variant, h_k: &[f64], v_prev: &[f64], h_prev: &[f64], eps: f64) -> Result<f64> {
    ensure_len("r_k: v_prev", h_k.len(), v_prev.len())?;
    ensure_len("r_k: h_prev", h_k.len(), h_prev.len())?;
    if variant == Variant::Asymmetric {
        return Ok(0.0);
    }
    let hp2 = norm_sq(h_prev);
    let num = dot(h_k, v_prev) * hp2 - dot(h_prev, v_prev) * dot(h_k, h_prev);
    Ok(num / (hp2 * hp2).max(eps * eps))
}

/// `v_k = (alpha - lambda) v_{k-1} + q (h_k - lambda h_{k-1}) + r h_{k-1}`.
pub fn update_v(
    h_k: &[f64],
    h_prev: &[f64],
    v_prev: &[f64],
    alpha: f64,
    lambda: f64,
    r: f64,
    q: f64,
) -> Result<SurrogateVector> {
    ensure_len("update_v: h_prev", h_k.len(), h_prev.len())?;
    ensure_len("update_v: v_prev", h_k.len(), v_prev.len())?;
    let a = alpha - lambda;
    let v: Vec<f64> = (0..h_k.len())
        .map(|i| {
            let vanilla = a * v_prev[i] + (h_k[i] - lambda * h_prev[i]) * q;
            if r == 0.0 {
                vanilla
            } else {
                vanilla + r * h_prev[i]
            }
        })
        .collect();
    ensure_finite("v_k", &v)?;
    Ok(SurrogateVector::new(v))
}

fn measurement_noise(hyper: &KoalaHyper, r_state: &mut REstimatorState, loss: f64) -> f64 {
    match hyper.r_mode {
        RMode::Fixed { r } => r,
        RMode::Ema { .. } => r_state.observe(loss, hyper.eps),
    }
}

fn check_step_inputs(hyper: &KoalaHyper, loss: f64, eta: f64) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::non_finite("loss"));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {eta}")));
    }
    hyper.validate()
}

/// Shared tail of both steps: form `S_k` and the parameter delta and advance the state.
fn finish_step(
    hyper: &KoalaHyper,
    mut state: KoalaState,
    v: SurrogateVector,
    h_k: &GradVector,
    loss: f64,
    eta: f64,
) -> Result<(ParamVector, KoalaState)> {
    let r = measurement_noise(hyper, &mut state.r_state, loss);
    let s_raw = innovation_s(h_k, &v, hyper.q, r)?;
    let s = if s_raw < hyper.eps {
        state.floor_hits += 1;
        hyper.eps
    } else {
        s_raw
    };
    let scale = -eta * loss / s;
    let delta: Vec<f64> = v.iter().zip(h_k.iter()).map(|(vi, hi)| scale * (vi + hyper.q * hi)).collect();
    if !delta.iter().all(|d| d.is_finite()) {
        return Err(Error::NonFiniteStep {
            step: state.step + 1,
            s_k: s_raw,
            v_norm: v.norm(),
            loss,
        });
    }
    state.v = v;
    state.h_prev = h_k.clone();
    state.s_prev = s;
    state.r_last = r;
    state.step += 1;
    Ok((ParamVector::new(delta), state))
}

/// First step of a run: `v_1 = sigma0^2 H_1`, followed by one regular update.
///
/// Algebraically this is a scalar-covariance step with `p_hat = sigma0^2 + q`.
pub fn koala_init_step(hyper: &KoalaHyper, loss: f64, h_1: &GradVector, eta: f64) -> Result<(ParamVector, KoalaState)> {
    check_step_inputs(hyper, loss, eta)?;
    ensure_finite("gradient", h_1)?;
    let n = h_1.len();
    let alpha = match hyper.r_mode {
        RMode::Ema { alpha } => alpha,
        RMode::Fixed { .. } => 0.9,
    };
    let state = KoalaState {
        v: SurrogateVector::zeros(n),
        h_prev: GradVector::zeros(n),
        s_prev: hyper.eps,
        step: 0,
        r_state: REstimatorState::new(alpha),
        r_last: 0.0,
        floor_hits: 0,
        resets: 0,
    };
    let v1 = SurrogateVector::new(h_1.iter().map(|h| hyper.sigma0_sq() * h).collect());
    finish_step(hyper, state, v1, h_1, loss, eta)
}

/// One step for `k >= 2`.
pub fn koala_pp_step(
    state: &KoalaState,
    hyper: &KoalaHyper,
    loss: f64,
    h_k: &GradVector,
    eta: f64,
) -> Result<(ParamVector, KoalaState)> {
    if state.step == 0 {
        return Err(Error::InvalidArgument("state is uninitialised; call koala_init_step first".into()));
    }
    check_step_inputs(hyper, loss, eta)?;
    ensure_len("gradient", state.h_prev.len(), h_k.len())?;
    ensure_finite("gradient", h_k)?;

    let mut next = state.clone();
    let v = if norm_sq(&state.h_prev) < hyper.eps {
        next.resets += 1;
        SurrogateVector::new(h_k.iter().map(|h| hyper.sigma0_sq() * h).collect())
    } else {
        let alpha = compute_alpha(h_k, &state.h_prev, hyper.eps)?;
        let lambda = compute_lambda(h_k, &state.v, &state.h_prev, hyper.q, state.s_prev)?;
        let r = compute_r_sym(hyper.variant, h_k, &state.v, &state.h_prev, hyper.eps)?;
        update_v(h_k, &state.h_prev, &state.v, alpha, lambda, r, hyper.q).map_err(|_| Error::NonFiniteStep {
            step: state.step + 1,
            s_k: state.s_prev,
            v_norm: state.v.norm(),
            loss,
        })?
    };
    finish_step(hyper, next, v, h_k, loss, eta)
}

/// Stateful wrapper that dispatches to [`koala_init_step`] or [`koala_pp_step`].
#[derive(Clone, Debug)]
pub struct KoalaPlusPlus {
    pub hyper: KoalaHyper,
    state: Option<KoalaState>,
}

impl KoalaPlusPlus {
    pub fn new(hyper: KoalaHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(Self { hyper, state: None })
    }

    pub fn state(&self) -> Option<&KoalaState> {
        self.state.as_ref()
    }

    pub fn step(&mut self, loss: f64, grad: &GradVector, eta: f64) -> Result<ParamVector> {
        let (delta, next) = match &self.state {
            None => koala_init_step(&self.hyper, loss, grad, eta)?,
            Some(state) => koala_pp_step(state, &self.hyper, loss, grad, eta)?,
        };
        self.state = Some(next);
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fixed(q: f64, sigma0: f64, r: f64) -> KoalaHyper {
        KoalaHyper {
            q,
            sigma0,
            r_mode: RMode::Fixed { r },
            variant: Variant::Symmetric,
            eps: DEFAULT_EPS,
            weight_decay: 0.0,
        }
    }

    #[test]
    fn innovation_examples() {
        assert_eq!(innovation_s(&[0.0, 0.0], &[5.0, 1.0], 0.3, 0.25).unwrap(), 0.25);
        assert_abs_diff_eq!(innovation_s(&[1.0, 0.0], &[2.0, 3.0], 0.1, 0.25).unwrap(), 2.35, epsilon = 1e-15);
        assert_eq!(innovation_s(&[3.0, 4.0], &[3.0, 4.0], 0.0, 0.0).unwrap(), 25.0);
        assert!(innovation_s(&[f64::NAN], &[1.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(compute_alpha(&[1.5, -2.0], &[1.5, -2.0], DEFAULT_EPS).unwrap(), 1.0);
        assert_eq!(compute_alpha(&[1.0, 0.0], &[0.0, 3.0], DEFAULT_EPS).unwrap(), 0.0);
        assert_eq!(compute_alpha(&[2.0, 0.0], &[1.0, 1.0], DEFAULT_EPS).unwrap(), 1.0);
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(compute_lambda(&[0.0, 0.0], &[1.0, 2.0], &[3.0, 4.0], 0.5, 1.0).unwrap(), 0.0);
        assert_eq!(compute_lambda(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], 0.0, 2.0).unwrap(), 0.5);
        assert_eq!(compute_lambda(&[1.0, 0.0], &[0.0, 2.0], &[0.0, 1.0], 0.5, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn r_sym_examples() {
        let asym = compute_r_sym(Variant::Asymmetric, &[0.3, 1.0], &[2.0, 3.0], &[1.0, 0.5], DEFAULT_EPS);
        assert_eq!(asym.unwrap(), 0.0);
        let parallel = compute_r_sym(Variant::Symmetric, &[0.3, 1.0], &[2.0, 1.0], &[1.0, 0.5], DEFAULT_EPS);
        assert_abs_diff_eq!(parallel.unwrap(), 0.0, epsilon = 1e-15);
        let r = compute_r_sym(Variant::Symmetric, &[0.0, 1.0], &[2.0, 3.0], &[1.0, 0.0], DEFAULT_EPS);
        assert_eq!(r.unwrap(), 3.0);
    }

    #[test]
    fn update_v_examples() {
        let v = update_v(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], 1.0, 0.5, 0.0, 0.0).unwrap();
        assert_eq!(v.as_slice(), &[0.5, 0.0]);
        let v = update_v(&[0.0, 0.0], &[1.0, 2.0], &[3.0, 4.0], 0.0, 0.0, 0.0, 0.7).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0]);
        assert!(update_v(&[1.0], &[1.0], &[1.0], f64::INFINITY, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn init_step_one_dimensional() {
        let (delta, state) = koala_init_step(&fixed(0.0, 1.0, 1.0), 2.0, &GradVector::new(vec![2.0]), 0.1).unwrap();
        assert_abs_diff_eq!(delta[0], -0.08, epsilon = 1e-15);
        assert_eq!(state.s_prev, 5.0);
        assert_eq!(state.v.as_slice(), &[2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_init_and_reset() {
        let hyper = fixed(0.2, 0.5, 1.0);
        let zero = GradVector::zeros(3);
        let (delta, state) = koala_init_step(&hyper, 1.0, &zero, 0.1).unwrap();
        assert!(delta.iter().all(|d| *d == 0.0));
        assert!(state.v.iter().all(|v| *v == 0.0));

        // degenerate previous gradient triggers v_k = sigma0^2 H_k
        let h = GradVector::new(vec![1.0, -2.0, 0.5]);
        let (_, next) = koala_pp_step(&state, &hyper, 1.0, &h, 0.1).unwrap();
        assert_eq!(next.resets, 1);
        assert_eq!(next.v.as_slice(), &[0.25, -0.5, 0.125]);
    }

    #[test]
    fn uninitialised_state_is_rejected() {
        let hyper = fixed(0.0, 1.0, 1.0);
        let (_, mut state) = koala_init_step(&hyper, 1.0, &GradVector::new(vec![1.0]), 0.1).unwrap();
        state.step = 0;
        assert!(koala_pp_step(&state, &hyper, 1.0, &GradVector::new(vec![1.0]), 0.1).is_err());
    }

    #[test]
    fn negative_innovation_is_floored_and_counted() {
        let hyper = KoalaHyper {
            eps: 1e-8,
            ..fixed(0.0, 1.0, 1e-3)
        };
        let mut state = koala_init_step(&hyper, 1.0, &GradVector::new(vec![1.0, 0.0]), 0.1).unwrap().1;
        // a surrogate pointing against the next gradient drives S_k below zero
        state.v = SurrogateVector::new(vec![-5.0, 0.0]);
        state.s_prev = 1.0;
        let (delta, next) = koala_pp_step(&state, &hyper, 1.0, &GradVector::new(vec![1.0, 0.0]), 0.1).unwrap();
        assert_eq!(next.floor_hits, 1);
        assert_eq!(next.s_prev, 1e-8);
        assert!(delta.is_finite());
    }

    #[test]
    fn hyper_validation() {
        assert!(fixed(0.1, 0.1, 1.0).validate().is_ok());
        assert!(fixed(-0.1, 0.1, 1.0).validate().is_err());
        assert!(fixed(0.1, 0.0, 1.0).validate().is_err());
        assert!(fixed(0.1, 0.1, 0.0).validate().is_err());
        assert!(KoalaHyper { eps: 1e-3, ..Default::default() }.validate().is_err());
        let ema = KoalaHyper {
            r_mode: RMode::Ema { alpha: 1.0 },
            ..Default::default()
        };
        assert!(ema.validate().is_err());
    }
}
