//! Flat `f64` vectors and the handful of BLAS-1 style helpers the optimizers need.
//!
//! Parameters, gradients and the covariance surrogate are all length-`n` rows,
//! but mixing them up is a real bug (the step divides by `H v^T`, not `v v^T`),
//! so each gets its own newtype. All three deref to `[f64]`.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

macro_rules! flat_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn zeros(n: usize) -> Self {
                Self(vec![0.0; n])
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|x| x.is_finite())
            }

            pub fn norm(&self) -> f64 {
                norm_sq(&self.0).sqrt()
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(values: Vec<f64>) -> Self {
                Self(values)
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }
    };
}

flat_vector!(
    /// Flattened model parameters `theta_k`.
    ParamVector
);
flat_vector!(
    /// Row gradient `H_k = grad L_k(theta_{k-1})^T`.
    GradVector
);
flat_vector!(
    /// `v_k = H_k P_{k-1}`, the covariance projected on the current gradient.
    SurrogateVector
);

impl ParamVector {
    /// `theta += delta`, in place.
    pub fn apply(&mut self, delta: &[f64]) {
        axpy(1.0, delta, &mut self.0);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|xi| alpha * xi).collect()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
