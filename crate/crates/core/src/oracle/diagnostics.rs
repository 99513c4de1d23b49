use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Result};
use crate::oracle::eigen::{eig_closed_form, EigPair};
use crate::oracle::min_norm::min_norm_p_symmetric;
use crate::vector::{dot, norm_sq};

/// Per-step record of the directional-definiteness diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub step: u64,
    /// Angle between `H_k` and `v_k` in degrees.
    pub angle_deg: f64,
    /// `H_k v_k^T`.
    pub hv: f64,
    pub s_k: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub v_norm: f64,
    pub floor_hits: u64,
}

impl DiagnosticsRow {
    /// Builds a row from the gradient and surrogate of one step. The
    /// eigenvalues are those of the symmetric reconstruction from `(h, v)`;
    /// both are zero when `h = 0`.
    pub fn from_step(step: u64, h: &[f64], v: &[f64], s_k: f64, floor_hits: u64) -> Result<Self> {
        let (hv, angle_deg) = psd_direction_check(h, v)?;
        let EigPair { lambda1, lambda2 } = if norm_sq(h) > 0.0 {
            eig_closed_form(h, v)?
        } else {
            EigPair {
                lambda1: 0.0,
                lambda2: 0.0,
            }
        };
        Ok(Self {
            step,
            angle_deg,
            hv,
            s_k,
            lambda1,
            lambda2,
            v_norm: norm_sq(v).sqrt(),
            floor_hits,
        })
    }

    pub fn is_acute(&self) -> bool {
        self.angle_deg < 90.0
    }
}

/// `(h v^T, angle(h, v))` with the angle in degrees, 90 when either vector is zero.
pub fn psd_direction_check(h: &[f64], v: &[f64]) -> Result<(f64, f64)> {
    ensure_len("direction check: v", h.len(), v.len())?;
    let hv = dot(h, v);
    let (nh, nv) = (norm_sq(h).sqrt(), norm_sq(v).sqrt());
    let angle = if nh > 0.0 && nv > 0.0 {
        let (mut diff, mut sum) = (0.0, 0.0);
        for (a, b) in h.iter().zip(v) {
            let (u, w) = (a / nh, b / nv);
            diff += (u - w) * (u - w);
            sum += (u + w) * (u + w);
        }
        (2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees()
    } else {
        90.0
    };
    Ok((hv, angle))
}

#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub m: DMatrix<f64>,
    /// Whether the denominator `h (v + q h)^T + r` had to be floored at `eps`.
    pub floored: bool,
}

/// The matrix `M` that one recursion step implicitly applies, `v_k = H_k M`:
///
/// ```text
/// M = (h^T v + v^T h)/|h|^2 - (h v^T) h^T h/|h|^4 + q I
///     - (v + q h)^T (v + q h) / (h (v + q h)^T + r)
/// ```
///
/// with `h = H_{k-1}`, `v = v_{k-1}` and `r` the measurement noise of step `k-1`.
pub fn ground_truth_m(h: &[f64], v: &[f64], q: f64, r: f64, eps: f64) -> Result<GroundTruth> {
    let n = h.len();
    let mut m = min_norm_p_symmetric(h, v)?;
    for i in 0..n {
        m[(i, i)] += q;
    }
    let u = DVector::from_iterator(n, v.iter().zip(h).map(|(vi, hi)| vi + q * hi));
    let denom_raw = dot(h, u.as_slice()) + r;
    let floored = denom_raw < eps;
    let denom = if floored { eps } else { denom_raw };
    m -= (&u * u.transpose()) / denom;
    Ok(GroundTruth { m, floored })
}
