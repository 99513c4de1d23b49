//! The `verify` battery: every oracle and invariant check, one row each.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::harness::config::{ModelName, OptimizerKind, RunConfig, Settings};
use crate::harness::output::metrics_csv;
use crate::harness::train::run_training;
use crate::models::{finite_diff_grad, Activation, Batch, ModelSpec};
use crate::optim::{
    compute_alpha, koala_init_step, koala_pp_step, koala_v_step, update_v, KoalaHyper, KoalaState, REstimatorState,
    RMode, Variant, DEFAULT_EPS,
};
use crate::oracle::{
    dense_ekf_step, eig_closed_form, ground_truth_m, min_norm_p_symmetric, min_norm_p_vanilla, numeric_min_norm_solve,
    DenseCov,
};
use crate::vector::{dot, max_abs, GradVector, ParamVector};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value, or the counterexample on failure.
    pub detail: String,
    pub seconds: f64,
}

/// A KOALA++ step function of the shape of [`koala_pp_step`].
pub type StepFn<'a> = &'a dyn Fn(&KoalaState, &KoalaHyper, f64, &GradVector, f64) -> Result<(ParamVector, KoalaState)>;

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn fixed_hyper(q: f64, sigma0: f64, r: f64, variant: Variant) -> KoalaHyper {
    KoalaHyper {
        q,
        sigma0,
        r_mode: RMode::Fixed { r },
        variant,
        eps: DEFAULT_EPS,
        weight_decay: 0.0,
    }
}

/// Random `(h, v)` pairs with `n` in 2..=50, shared by the min-norm checks.
pub fn min_norm_instances(count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..=50);
            (normal_vec(&mut rng, n), normal_vec(&mut rng, n))
        })
        .collect()
}

pub fn check_min_norm_vs_kkt() -> Result<(bool, String)> {
    let mut worst = 0.0_f64;
    for (h, v) in min_norm_instances(500, 1) {
        for symmetric in [false, true] {
            let closed = if symmetric {
                min_norm_p_symmetric(&h, &v)?
            } else {
                min_norm_p_vanilla(&h, &v)?
            };
            let numeric = numeric_min_norm_solve(&h, &v, symmetric)?;
            let err = (closed - numeric).norm();
            if !(err <= 1e-8) {
                return Ok((false, format!("n={} symmetric={symmetric}: |closed - kkt|_F = {err:e}", h.len())));
            }
            worst = worst.max(err);
        }
    }
    Ok((true, format!("max |closed - kkt|_F = {worst:.2e}")))
}

pub fn check_constraint_and_symmetry() -> Result<(bool, String)> {
    let (mut worst_c, mut worst_s) = (0.0_f64, 0.0_f64);
    for (h, v) in min_norm_instances(500, 1) {
        let hrow = DMatrix::from_row_slice(1, h.len(), &h);
        for symmetric in [false, true] {
            let p = if symmetric {
                min_norm_p_symmetric(&h, &v)?
            } else {
                min_norm_p_vanilla(&h, &v)?
            };
            let hp = &hrow * &p;
            let c = hp.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst_c = worst_c.max(c);
            if symmetric {
                worst_s = worst_s.max((&p - p.transpose()).abs().max());
            }
            if !(c <= 1e-10) || !(worst_s <= 1e-14) {
                return Ok((
                    false,
                    format!("n={} symmetric={symmetric}: |hP - v| = {c:e}, |P - P^T| = {worst_s:e}", h.len()),
                ));
            }
        }
    }
    Ok((true, format!("max |hP - v| = {worst_c:.2e}, max |P - P^T| = {worst_s:.2e}")))
}

pub fn check_eigenvalues() -> Result<(bool, String)> {
    let (mut worst_rel, mut worst_rest) = (0.0_f64, 0.0_f64);
    for (h, v) in min_norm_instances(500, 2) {
        let pair = eig_closed_form(&h, &v)?;
        let p = min_norm_p_symmetric(&h, &v)?;
        let mut eig: Vec<f64> = SymmetricEigen::new(p).eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
        let (top, bottom) = (eig[0], eig[eig.len() - 1]);
        let scale = pair.lambda1.abs().max(pair.lambda2.abs());
        let rel = ((top - pair.lambda1).abs()).max((bottom - pair.lambda2).abs()) / scale;
        let rest = eig[1..eig.len() - 1].iter().fold(0.0_f64, |m, e| m.max(e.abs()));
        worst_rel = worst_rel.max(rel);
        worst_rest = worst_rest.max(rest);
        if !(rel <= 1e-8) || !(rest < 1e-10) {
            return Ok((false, format!("n={}: relative error {rel:e}, other eigenvalues {rest:e}", h.len())));
        }
    }
    Ok((true, format!("max rel err {worst_rel:.2e}, max |other eig| {worst_rest:.2e}")))
}

pub fn check_step1_equivalence() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=30);
        let h = GradVector::new(normal_vec(&mut rng, n));
        let sigma0 = rng.random_range(0.01..2.0);
        let q = rng.random_range(0.0..1.0);
        let r = rng.random_range(1e-3..3.0);
        let eta = rng.random_range(1e-3..1.0);
        let loss = rng.random_range(0.01..5.0);
        let hyper = fixed_hyper(q, sigma0, r, Variant::Symmetric);
        let (koala, _) = koala_init_step(&hyper, loss, &h, eta)?;
        let (vanilla, _) = koala_v_step(sigma0 * sigma0, q, r, loss, &h, (1.0 - eta) * loss)?;
        let scale = max_abs(&vanilla).max(f64::MIN_POSITIVE);
        let rel = koala.iter().zip(vanilla.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        worst = worst.max(rel);
        if !(rel <= 1e-12) {
            return Ok((false, format!("n={n} sigma0={sigma0} q={q} r={r} eta={eta}: rel err {rel:e}")));
        }
    }
    Ok((true, format!("max rel err {worst:.2e}")))
}

/// Three steps on `L = theta^2 / 2` from `theta = 2` against the scalar EKF.
pub fn check_1d_trace() -> Result<(bool, String)> {
    let hyper = fixed_hyper(0.0, 1.0, 1.0, Variant::Symmetric);
    let eta = 0.1;
    let mut theta = 2.0_f64;
    let mut dense_theta = ParamVector::new(vec![2.0]);
    let mut dense_p = DenseCov::isotropic(1, 1.0);
    let mut state: Option<KoalaState> = None;
    let mut worst = 0.0_f64;
    for k in 1..=3 {
        let loss = 0.5 * theta * theta;
        let h = GradVector::new(vec![theta]);
        let (delta, next) = match &state {
            None => koala_init_step(&hyper, loss, &h, eta)?,
            Some(s) => koala_pp_step(s, &hyper, loss, &h, eta)?,
        };
        state = Some(next);
        let dense_loss = 0.5 * dense_theta[0] * dense_theta[0];
        let dense_h = GradVector::new(vec![dense_theta[0]]);
        let step = dense_ekf_step(&dense_theta, &dense_p, 0.0, 1.0, dense_loss, (1.0 - eta) * dense_loss, &dense_h, DEFAULT_EPS)?;
        let dense_delta = step.theta[0] - dense_theta[0];
        dense_theta = step.theta;
        dense_p = step.p;
        let err = (delta[0] - dense_delta).abs();
        worst = worst.max(err);
        if !(err <= 1e-12) {
            return Ok((false, format!("step {k}: delta {} vs scalar EKF {dense_delta}", delta[0])));
        }
        theta += delta[0];
    }
    Ok((true, format!("max |delta - ekf| = {worst:.2e}")))
}

/// `H_k v_k^T = H_k M_{k-1} H_k^T` (and `H_k M_{k-1} = v_k`) over random
/// symmetric-variant steps; `step` is the step under test.
pub fn check_surrogate_consistency(step: StepFn<'_>) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0_f64;
    for trial in 0..100 {
        let n = rng.random_range(2..=20);
        let q = rng.random_range(0.0..0.5);
        let r = rng.random_range(0.1..2.0);
        let hyper = fixed_hyper(q, rng.random_range(0.1..1.0), r, Variant::Symmetric);
        let warmup = rng.random_range(1..=4);
        let (_, mut state) = koala_init_step(&hyper, 1.0, &GradVector::new(normal_vec(&mut rng, n)), 0.1)?;
        for _ in 1..warmup {
            state = step(&state, &hyper, 1.0, &GradVector::new(normal_vec(&mut rng, n)), 0.1)?.1;
        }
        let h_k = GradVector::new(normal_vec(&mut rng, n));
        let gt = ground_truth_m(&state.h_prev, &state.v, q, r, hyper.eps)?;
        let (_, next) = step(&state, &hyper, 1.0, &h_k, 0.1)?;
        let hrow = DMatrix::from_row_slice(1, n, &h_k);
        let hm = &hrow * &gt.m;
        let scalar = dot(hm.as_slice(), &h_k);
        let want = dot(&h_k, &next.v);
        let scale = 1.0_f64.max(want.abs());
        let err = (scalar - want).abs() / scale;
        let vec_err = hm.iter().zip(next.v.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        if gt.floored || !(err <= 1e-10) || !(vec_err <= 1e-10 * scale.max(max_abs(&next.v))) {
            return Ok((
                false,
                format!("trial {trial} (n={n}): H v = {want}, H M H^T = {scalar}, |H M - v| = {vec_err:e}"),
            ));
        }
    }
    Ok((true, format!("max rel |H v - H M H^T| = {worst:.2e}")))
}

/// Step-2 surrogate against the dense EKF from `P_0 = sigma0^2 I`. The
/// dense `H_2 P_1` exceeds the recursion's `v_2` by exactly
/// `sigma0^2 (H_2 - alpha_2 H_1)`: the recursion sees `P_0` only through the
/// direction of `H_1`. The two agree when `n = 1` or `H_2` is parallel to `H_1`.
pub fn check_step2_against_dense() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    for trial in 0..100 {
        let n = rng.random_range(1..=20);
        let sigma0 = rng.random_range(0.1..1.5);
        let q = rng.random_range(0.0..0.5);
        let r = rng.random_range(0.1..2.0);
        let hyper = fixed_hyper(q, sigma0, r, Variant::Symmetric);
        let h1 = GradVector::new(normal_vec(&mut rng, n));
        let h2 = if trial % 4 == 0 {
            GradVector::new(h1.iter().map(|x| -0.7 * x).collect())
        } else {
            GradVector::new(normal_vec(&mut rng, n))
        };
        let (_, s1) = koala_init_step(&hyper, 1.0, &h1, 0.1)?;
        let (_, s2) = koala_pp_step(&s1, &hyper, 1.0, &h2, 0.1)?;
        let theta = ParamVector::zeros(n);
        let p0 = DenseCov::isotropic(n, sigma0 * sigma0);
        let dense = dense_ekf_step(&theta, &p0, q, r, 1.0, 0.9, &h1, DEFAULT_EPS)?;
        let h2row = DMatrix::from_row_slice(1, n, &h2);
        let v2_dense = &h2row * dense.p.matrix();
        let alpha = compute_alpha(&h2, &h1, DEFAULT_EPS)?;
        let s2sq = sigma0 * sigma0;
        let scale = 1.0_f64.max(max_abs(v2_dense.as_slice()));
        let err = (0..n)
            .map(|i| (v2_dense[i] - s2.v[i] - s2sq * (h2[i] - alpha * h1[i])).abs())
            .fold(0.0, f64::max)
            / scale;
        worst = worst.max(err);
        if !(err <= 1e-10) {
            return Ok((false, format!("trial {trial} (n={n}): residual {err:e}")));
        }
    }
    Ok((true, format!("max rel residual {worst:.2e}")))
}

pub fn check_asymmetric_is_vanilla_update() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let n = rng.random_range(1..=30);
        let (h_k, h_prev, v) = (normal_vec(&mut rng, n), normal_vec(&mut rng, n), normal_vec(&mut rng, n));
        let (alpha, lambda, q) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        let got = update_v(&h_k, &h_prev, &v, alpha, lambda, 0.0, q)?;
        for i in 0..n {
            let want = (alpha - lambda) * v[i] + (h_k[i] - lambda * h_prev[i]) * q;
            if got[i].to_bits() != want.to_bits() {
                return Ok((false, format!("component {i}: {} vs {want}", got[i])));
            }
        }
    }
    Ok((true, "bitwise equal on 200 draws".into()))
}

pub fn check_zero_gradient_fixpoint() -> Result<(bool, String)> {
    for variant in [Variant::Symmetric, Variant::Asymmetric] {
        let hyper = KoalaHyper {
            variant,
            ..KoalaHyper::default()
        };
        let zero = GradVector::zeros(5);
        let (delta, mut state) = koala_init_step(&hyper, 1.3, &zero, 0.5)?;
        let mut moved = max_abs(&delta);
        for k in 2..=20 {
            let (delta, next) = koala_pp_step(&state, &hyper, 1.0 + k as f64, &zero, 0.5)?;
            moved = moved.max(max_abs(&delta));
            if max_abs(&next.v) != 0.0 {
                return Ok((false, format!("{variant:?}: v_{k} = {:?}", next.v)));
            }
            state = next;
        }
        if moved != 0.0 {
            return Ok((false, format!("{variant:?}: parameters moved by {moved:e}")));
        }
    }
    Ok((true, "theta fixed, v_k = 0 for k >= 2".into()))
}

pub fn check_step_linear_in_eta() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let hyper = fixed_hyper(rng.random_range(0.0..0.5), 0.5, 1.0, Variant::Symmetric);
        let (_, state) = koala_init_step(&hyper, 1.0, &GradVector::new(normal_vec(&mut rng, n)), 0.1)?;
        let h = GradVector::new(normal_vec(&mut rng, n));
        let (eta, c) = (rng.random_range(0.01..1.0), rng.random_range(0.1..10.0));
        let (a, _) = koala_pp_step(&state, &hyper, 2.0, &h, eta)?;
        let (b, _) = koala_pp_step(&state, &hyper, 2.0, &h, c * eta)?;
        let scale = max_abs(&b).max(f64::MIN_POSITIVE);
        let err = a.iter().zip(b.iter()).map(|(x, y)| (c * x - y).abs()).fold(0.0, f64::max) / scale;
        worst = worst.max(err);
        if !(err <= 1e-13) {
            return Ok((false, format!("eta={eta} c={c}: rel err {err:e}")));
        }
    }
    Ok((true, format!("max rel err {worst:.2e}")))
}

pub fn check_r_estimator() -> Result<(bool, String)> {
    let eps = DEFAULT_EPS;
    let mut state = REstimatorState::new(0.9);
    let mut hit = None;
    for k in 1..=200 {
        let r = state.observe(1.7, eps);
        if !(r >= eps) {
            return Ok((false, format!("r = {r} below floor")));
        }
        if hit.is_none() && r == eps {
            hit = Some(k);
        }
    }
    let Some(hit) = hit else {
        return Ok((false, "constant stream never reached the floor".into()));
    };
    let mut state = REstimatorState::new(0.9);
    let mut r = 0.0;
    for k in 0..10_000 {
        r = state.observe(if k % 2 == 0 { 0.0 } else { 2.0 }, eps);
    }
    let fixed_point = 324.0 / 361.0;
    let err = (r - fixed_point).abs();
    Ok((
        err <= 1e-6,
        format!("floor after {hit} steps; alternating stream r = {r:.12} (|err| {err:.1e})"),
    ))
}

pub fn check_gradients() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let models = [
        ModelSpec::quadratic_bowl(vec![1.0, 3.0, 0.5, 10.0], vec![0.5, -1.0, 0.0, 2.0])?,
        ModelSpec::rosenbrock(4)?,
        ModelSpec::logistic_regression(3)?.with_weight_decay(0.01)?,
        ModelSpec::mlp(vec![3, 5, 4, 3], Activation::Tanh)?.with_weight_decay(1e-3)?,
        ModelSpec::mlp(vec![3, 6, 3], Activation::Relu)?,
    ];
    let mut worst = 0.0_f64;
    for model in &models {
        let width = model.input_width().unwrap_or(1);
        let classes = model.num_classes().unwrap_or(2);
        for point in 0..100 {
            let m = 6;
            let inputs = normal_vec(&mut rng, m * width);
            let targets = (0..m).map(|_| rng.random_range(0..classes) as f64).collect();
            let batch = Batch::new(inputs, width, targets)?;
            let theta = ParamVector::new(normal_vec(&mut rng, model.param_count()).iter().map(|x| 0.5 * x).collect());
            let (_, grad) = model.loss_and_grad(&theta, &batch)?;
            let fd = finite_diff_grad(model, &theta, &batch, 1e-6)?;
            let err = grad.iter().zip(fd.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                / max_abs(&grad).max(1.0);
            worst = worst.max(err);
            if !(err < 1e-5) {
                return Ok((false, format!("{} point {point}: rel err {err:e}", model.name())));
            }
        }
    }
    Ok((true, format!("max rel err {worst:.2e} over {} models", models.len())))
}

/// Settings of the acute-angle reference run: KOALA++ on a 50-dimensional
/// bowl with R from the loss EMA.
pub fn bowl_diagnostics_config() -> Result<RunConfig> {
    let layer = Settings {
        optimizer: Some(OptimizerKind::KoalaPp),
        model: Some(ModelName::QuadraticBowl),
        bowl_dim: Some(50),
        epochs: Some(5),
        diagnostics: Some(true),
        ..Settings::default()
    };
    RunConfig::from_settings(&Settings::resolve_layers(&[layer]))
}

pub fn check_acute_angle() -> Result<(bool, String)> {
    let cfg = bowl_diagnostics_config()?;
    let run = run_training(&cfg).map_err(|f| f.error)?;
    let fraction = run.acute_fraction().unwrap_or(0.0);
    Ok((
        fraction >= 0.95,
        format!("acute fraction {fraction:.4} over {} steps", run.diagnostics.len()),
    ))
}

pub fn check_determinism() -> Result<(bool, String)> {
    let layer = Settings {
        epochs: Some(3),
        n_samples: Some(200),
        diagnostics: Some(true),
        ..Settings::default()
    };
    let cfg = RunConfig::from_settings(&Settings::resolve_layers(&[layer]))?;
    let a = metrics_csv(&run_training(&cfg).map_err(|f| f.error)?.records);
    let b = metrics_csv(&run_training(&cfg).map_err(|f| f.error)?.records);
    Ok((a == b, format!("{} bytes, identical = {}", a.len(), a == b)))
}

type Check = (&'static str, fn() -> Result<(bool, String)>);

fn koala_surrogate_consistency() -> Result<(bool, String)> {
    check_surrogate_consistency(&koala_pp_step)
}

pub const CHECKS: &[Check] = &[
    ("min-norm closed forms vs KKT solve", check_min_norm_vs_kkt),
    ("min-norm constraint and symmetry", check_constraint_and_symmetry),
    ("closed-form eigenvalues vs dense", check_eigenvalues),
    ("step-1 scalar-covariance equivalence", check_step1_equivalence),
    ("1-D trace vs scalar EKF", check_1d_trace),
    ("symmetric surrogate vs ground-truth M", koala_surrogate_consistency),
    ("step-2 surrogate vs dense EKF", check_step2_against_dense),
    ("asymmetric variant is vanilla update", check_asymmetric_is_vanilla_update),
    ("zero-gradient fixpoint", check_zero_gradient_fixpoint),
    ("step linear in learning rate", check_step_linear_in_eta),
    ("R estimator floor and fixed point", check_r_estimator),
    ("analytic vs finite-difference gradients", check_gradients),
    ("acute angle on 50-dim bowl", check_acute_angle),
    ("bitwise-deterministic training", check_determinism),
];

/// Runs every check; errors count as failures.
pub fn run_verify() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let start = Instant::now();
            let (passed, detail) = match check() {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{}  {:<width$}  {:>7.2}s  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        ));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    out.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    out
}
