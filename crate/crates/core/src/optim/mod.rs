//! Optimizers and the pieces they share.

pub mod baselines;
pub mod koala;
pub mod koala_v;
pub mod r_estimator;
pub mod schedule;

pub use baselines::{Adam, Sgd};
pub use koala::{
    compute_alpha, compute_lambda, compute_r_sym, innovation_s, koala_init_step, koala_pp_step, update_v, KoalaHyper,
    KoalaPlusPlus, KoalaState, RMode, Variant, DEFAULT_EPS,
};
pub use koala_v::{koala_v_step, KoalaV};
pub use r_estimator::{estimate_r, REstimatorState};
pub use schedule::{Schedule, ScheduleKind};
