use serde::{Deserialize, Serialize};

/// Online estimate of the measurement noise `R` as the exponentially smoothed
/// variance of the scalar minibatch loss over steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct REstimatorState {
    pub mean_ema: f64,
    pub var_ema: f64,
    pub alpha: f64,
    pub initialized: bool,
}

impl REstimatorState {
    pub fn new(alpha: f64) -> Self {
        Self {
            mean_ema: 0.0,
            var_ema: 0.0,
            alpha,
            initialized: false,
        }
    }

    /// Feed one loss and return the current `R`, floored at `eps`.
    ///
    /// The variance term uses the already-updated mean.
    pub fn observe(&mut self, loss: f64, eps: f64) -> f64 {
        if self.initialized {
            let a = self.alpha;
            self.mean_ema = a * self.mean_ema + (1.0 - a) * loss;
            let dev = loss - self.mean_ema;
            self.var_ema = a * self.var_ema + (1.0 - a) * dev * dev;
        } else {
            self.mean_ema = loss;
            self.var_ema = 0.0;
            self.initialized = true;
        }
        self.var_ema.max(eps)
    }
}

/// Functional form of [`REstimatorState::observe`].
pub fn estimate_r(state: &REstimatorState, loss: f64, eps: f64) -> (f64, REstimatorState) {
    let mut next = *state;
    let r = next.observe(loss, eps);
    (r, next)
}
