//! Marginal maximum likelihood estimation and inference.
//!
//! Maximizes the total marginal log-likelihood over the packed coordinates
//! under box constraints (non-negative lag coefficients, floored `log sigma`),
//! with multi-start dispersal because the mixture likelihood can be
//! multimodal. The covariance of the packed estimates is the inverse of the
//! negated numerical Hessian; Wald tests and the delta-method transform to
//! the transition-probability scale build on it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::baselines::ols_dlm;
use crate::error::{Error, Result};
use crate::likelihood::LikelihoodContext;
use crate::model::{self, ModelSpec, ParamVector, Variant};
use crate::optimize::{self, MinimizeOptions};

/// Options for [`fit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    /// Tolerance on the projected-gradient infinity norm.
    pub tol: f64,
    /// Maximum optimizer iterations per start.
    pub max_iter: usize,
    /// Number of randomized starts (the first is the warm start itself).
    pub n_starts: usize,
    /// Seed for start dispersal.
    pub seed: u64,
    /// Relative step for finite-difference gradients.
    pub fd_step: f64,
    /// Relative step for the numerical Hessian.
    pub hessian_step: f64,
    /// Packed coordinates pinned to fixed values (on the transformed scale);
    /// implemented as equal lower/upper bounds and excluded from the
    /// parameter count `k`.
    pub pin: Vec<(usize, f64)>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 600,
            n_starts: 5,
            seed: 1,
            fd_step: 1e-6,
            hessian_step: 1e-4,
            pin: Vec::new(),
        }
    }
}

/// Status of a reported standard error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeFlag {
    Ok,
    /// Coordinate sits on an active bound; the Hessian-based SE is invalid there.
    AtBound,
    /// Negative variance estimate from a non-concave Hessian direction.
    NonPositiveVariance,
    /// No covariance available (singular Hessian) or pinned coordinate.
    Unavailable,
}

/// Result of a maximum-likelihood fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: ParamVector,
    /// Estimates on the packed (transformed) scale.
    pub packed: Vec<f64>,
    pub packed_names: Vec<String>,
    pub loglik: f64,
    pub aic: f64,
    /// Covariance of the packed estimates; `None` when the negated Hessian
    /// could not be inverted.
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Per-coordinate standard errors (NaN when flagged unavailable).
    pub se: Vec<f64>,
    pub se_flags: Vec<SeFlag>,
    pub converged: bool,
    pub n_evals: usize,
    pub starts_used: usize,
    /// Free parameter count: packed dimension minus pinned coordinates.
    pub k: usize,
    /// Condition number of the negated Hessian (flat directions show up large).
    pub hessian_condition: Option<f64>,
}

impl FitResult {
    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        self.covariance.as_ref().map(|rows| {
            let n = rows.len();
            DMatrix::from_fn(n, n, |i, j| rows[i][j])
        })
    }
}

/// Akaike information criterion, `2k - 2 loglik`.
pub fn aic(k: usize, loglik: f64) -> f64 {
    2.0 * k as f64 - 2.0 * loglik
}

/// Warm start: intercept, lag coefficients, and noise scale from a fixed-lag
/// least-squares baseline; transition parameters set so `rho(0)` is about 0.2.
pub fn default_init(ctx: &LikelihoodContext) -> ParamVector {
    let spec = ctx.spec();
    let ds = ctx.dataset();
    let s = spec.n_strata();
    let (mut alpha0, mut beta, mut sigma) = match ols_dlm(ds, spec.lag_max) {
        Ok(base) => {
            let b: Vec<f64> = if spec.beta_nonneg {
                base.beta.iter().map(|v| v.max(0.0)).collect()
            } else {
                base.beta.clone()
            };
            (base.alpha0, b, base.residual_sd.max(1e-3))
        }
        Err(_) => {
            let mean = ds.response().iter().sum::<f64>() / ds.len() as f64;
            let var = ds.response().iter().map(|y| (y - mean) * (y - mean)).sum::<f64>()
                / ds.len() as f64;
            (mean, vec![0.01; spec.lag_max + 1], var.sqrt().max(1e-3))
        }
    };
    if !alpha0.is_finite() {
        alpha0 = 0.0;
    }
    if beta.iter().any(|b| !b.is_finite()) {
        beta = vec![0.01; spec.lag_max + 1];
    }
    if !sigma.is_finite() {
        sigma = 1.0;
    }
    // rho(0) ~= 0.2 on each scale: logit for the constant variant, the
    // logistic intercept ln(4) elsewhere
    let lambda0 = (4.0_f64).ln();
    let lambda = match spec.variant {
        Variant::ConstantRho => vec![vec![0.2]],
        Variant::SemiMarkov => vec![{
            let mut l = vec![lambda0];
            l.extend(std::iter::repeat(0.0).take(spec.n_periods()));
            l
        }],
        Variant::PeriodConstantRho => vec![{
            let mut l = vec![lambda0];
            l.extend(std::iter::repeat(0.0).take(spec.n_periods() - 1));
            l
        }],
        Variant::HardStratified | Variant::SoftStratified => vec![vec![lambda0, 0.0]; s],
    };
    ParamVector {
        alpha0: vec![alpha0; s],
        alpha: vec![0.0; ds.n_covariates()],
        beta_star: vec![beta; s],
        lambda,
        sigma: vec![sigma; s],
    }
}

fn disperse_start(
    packed: &[f64],
    spec: &ModelSpec,
    n_cov: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let s = spec.n_strata();
    let beta_start = s + n_cov;
    let beta_end = beta_start + s * (spec.lag_max + 1);
    let lambda_end = beta_end + s * spec.lambda_len();
    packed
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i < beta_start {
                v + (v.abs() + 1.0) * rng.gen_range(-0.5..0.5)
            } else if i < beta_end {
                // keep lag coefficients in the feasible cone
                (v.max(0.0) + 0.01) * (rng.gen_range(-0.7_f64..0.7)).exp()
            } else if i < lambda_end {
                v + rng.gen_range(-1.0..1.0)
            } else {
                v + rng.gen_range(-0.5..0.5)
            }
        })
        .collect()
}

/// Fit a model by maximizing the marginal log-likelihood.
///
/// `init` overrides the warm start; it is projected into the box before the
/// first evaluation. Deterministic given `(dataset, spec, options)`.
pub fn fit(
    ctx: &LikelihoodContext,
    init: Option<&ParamVector>,
    options: &FitOptions,
) -> Result<FitResult> {
    let spec = ctx.spec();
    let n_cov = ctx.dataset().n_covariates();
    let dim = model::packed_len(spec, n_cov);
    if ctx.dataset().len() <= dim {
        return Err(Error::InvalidDataset(format!(
            "dataset has {} days but the model needs more than its {dim} parameters",
            ctx.dataset().len()
        )));
    }

    let init_packed = match init {
        Some(p) => {
            p.check_shape(spec, n_cov)?;
            // pack without value validation: out-of-bound inputs are projected
            let mut q = p.clone();
            if spec.variant == Variant::ConstantRho {
                q.lambda[0][0] = q.lambda[0][0].clamp(1e-9, 1.0 - 1e-9);
            }
            for s in q.sigma.iter_mut() {
                *s = s.max(1e-12);
            }
            model::pack_params(&q, spec)?
        }
        None => model::pack_params(&default_init(ctx), spec)?,
    };

    let (mut lower, mut upper): (Vec<f64>, Vec<f64>) =
        model::packed_bounds(spec, n_cov).into_iter().unzip();
    for &(idx, value) in &options.pin {
        if idx >= dim {
            return Err(Error::DimensionMismatch(format!(
                "pinned coordinate {idx} out of range for dimension {dim}"
            )));
        }
        lower[idx] = value;
        upper[idx] = value;
    }

    let min_opts = MinimizeOptions {
        tol_grad: options.tol,
        tol_f: 1e-10,
        max_iter: options.max_iter,
        memory: 10,
        fd_step: options.fd_step,
        ..Default::default()
    };

    let starts: Vec<Vec<f64>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut all = vec![init_packed.clone()];
        for _ in 1..options.n_starts.max(1) {
            all.push(disperse_start(&init_packed, spec, n_cov, &mut rng));
        }
        all
    };

    let runs: Vec<(usize, Result<optimize::MinimizeResult>)> = starts
        .par_iter()
        .enumerate()
        .map(|(idx, start)| {
            let mut obj = |theta: &[f64]| -ctx.total_loglik_packed(theta);
            (idx, optimize::minimize(&mut obj, start, &lower, &upper, &min_opts))
        })
        .collect();

    let mut n_evals: usize = 0;
    let mut best: Option<(usize, optimize::MinimizeResult)> = None;
    let mut starts_used = 0;
    for (idx, run) in runs {
        match run {
            Ok(res) => {
                starts_used += 1;
                n_evals += res.n_evals;
                let better = match &best {
                    None => true,
                    Some((bidx, bres)) => {
                        res.f < bres.f || (res.f == bres.f && idx < *bidx)
                    }
                };
                if better {
                    best = Some((idx, res));
                }
            }
            Err(_) => {}
        }
    }
    let (_, best_run) =
        best.ok_or_else(|| Error::Optimizer("non-finite likelihood at every start".into()))?;

    let packed = best_run.x.clone();
    let loglik = -best_run.f;
    let theta_hat = model::unpack_params(&packed, spec)?;
    let k = dim - options.pin.len();

    // covariance from the numerical Hessian of the log-likelihood
    let mut hess_evals = 0usize;
    let hessian = {
        let mut f = |theta: &[f64]| {
            hess_evals += 1;
            ctx.total_loglik_packed(theta)
        };
        numerical_hessian(&mut f, &packed, options.hessian_step)
    };
    n_evals += hess_evals;

    let pinned: Vec<bool> = {
        let mut v = vec![false; dim];
        for &(idx, _) in &options.pin {
            v[idx] = true;
        }
        v
    };
    let at_bound: Vec<bool> = (0..dim)
        .map(|i| {
            !pinned[i]
                && ((packed[i] - lower[i]).abs() < 1e-9 || (upper[i] - packed[i]).abs() < 1e-9)
        })
        .collect();

    let (covariance, se, se_flags, condition) = match hessian {
        Ok(h) => {
            let neg_h = -h;
            let inverse = neg_h
                .clone()
                .cholesky()
                .map(|c| c.inverse())
                .or_else(|| neg_h.clone().try_inverse());
            let condition = {
                let svd = neg_h.svd(false, false);
                let smax = svd.singular_values.max();
                let smin = svd.singular_values.min();
                if smin > 0.0 {
                    Some(smax / smin)
                } else {
                    None
                }
            };
            match inverse {
                Some(v) => {
                    let mut se = vec![f64::NAN; dim];
                    let mut flags = vec![SeFlag::Unavailable; dim];
                    for i in 0..dim {
                        if pinned[i] {
                            continue;
                        }
                        if at_bound[i] {
                            flags[i] = SeFlag::AtBound;
                            continue;
                        }
                        let var = v[(i, i)];
                        if var >= 0.0 {
                            se[i] = var.sqrt();
                            flags[i] = SeFlag::Ok;
                        } else {
                            flags[i] = SeFlag::NonPositiveVariance;
                        }
                    }
                    let rows: Vec<Vec<f64>> =
                        (0..dim).map(|i| (0..dim).map(|j| v[(i, j)]).collect()).collect();
                    (Some(rows), se, flags, condition)
                }
                None => (None, vec![f64::NAN; dim], vec![SeFlag::Unavailable; dim], condition),
            }
        }
        Err(_) => (None, vec![f64::NAN; dim], vec![SeFlag::Unavailable; dim], None),
    };

    Ok(FitResult {
        theta_hat,
        packed,
        packed_names: model::packed_names(spec, n_cov, ctx.dataset().covariate_names()),
        loglik,
        aic: aic(k, loglik),
        covariance,
        se,
        se_flags,
        converged: best_run.converged,
        n_evals,
        starts_used,
        k,
        hessian_condition: condition,
    })
}

/// Central-difference Hessian with per-coordinate relative steps
/// `step * max(|theta_i|, 1)`, symmetrized as `(H + H^T) / 2`.
pub fn numerical_hessian<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    theta: &[f64],
    rel_step: f64,
) -> Result<DMatrix<f64>> {
    let n = theta.len();
    let h: Vec<f64> = theta.iter().map(|t| rel_step * t.abs().max(1.0)).collect();
    let f0 = f(theta);
    if !f0.is_finite() {
        return Err(Error::Numerical("objective not finite at the expansion point".into()));
    }
    let mut work = theta.to_vec();
    let mut eval = |w: &mut Vec<f64>, changes: &[(usize, f64)]| -> Result<f64> {
        for &(i, v) in changes {
            w[i] = theta[i] + v;
        }
        let val = f(w);
        for &(i, _) in changes {
            w[i] = theta[i];
        }
        if val.is_finite() {
            Ok(val)
        } else {
            Err(Error::Numerical("objective not finite within the Hessian stencil".into()))
        }
    };

    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let fp = eval(&mut work, &[(i, h[i])])?;
        let fm = eval(&mut work, &[(i, -h[i])])?;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in (i + 1)..n {
            let fpp = eval(&mut work, &[(i, h[i]), (j, h[j])])?;
            let fpm = eval(&mut work, &[(i, h[i]), (j, -h[j])])?;
            let fmp = eval(&mut work, &[(i, -h[i]), (j, h[j])])?;
            let fmm = eval(&mut work, &[(i, -h[i]), (j, -h[j])])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    Ok(sym)
}

/// Result of a Wald test of `H0: c' theta = null_value`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaldTest {
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

/// Wald test for a linear contrast of the packed coordinates.
pub fn wald_test(fit: &FitResult, contrast: &[f64], null_value: f64) -> Result<WaldTest> {
    let dim = fit.packed.len();
    if contrast.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "contrast has {} entries for dimension {dim}",
            contrast.len()
        )));
    }
    let cov = fit
        .covariance_matrix()
        .ok_or_else(|| Error::Numerical("fit has no covariance; cannot run a Wald test".into()))?;
    let c = DVector::from_column_slice(contrast);
    let var = (c.transpose() * &cov * &c)[(0, 0)];
    if !(var > 0.0) {
        return Err(Error::SingularContrast);
    }
    let estimate = fit
        .packed
        .iter()
        .zip(contrast.iter())
        .map(|(t, c)| t * c)
        .sum::<f64>()
        - null_value;
    let se = var.sqrt();
    let z = estimate / se;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = 2.0 * (1.0 - normal.cdf(z.abs()));
    Ok(WaldTest { estimate, se, z, p })
}

/// Contrast vector selecting `names[a] - names[b]` by coordinate name.
pub fn contrast_by_names(fit: &FitResult, a: &str, b: Option<&str>) -> Result<Vec<f64>> {
    let mut c = vec![0.0; fit.packed.len()];
    let ia = fit
        .packed_names
        .iter()
        .position(|n| n == a)
        .ok_or_else(|| Error::Input(format!("unknown coordinate name '{a}'")))?;
    c[ia] = 1.0;
    if let Some(b) = b {
        let ib = fit
            .packed_names
            .iter()
            .position(|n| n == b)
            .ok_or_else(|| Error::Input(format!("unknown coordinate name '{b}'")))?;
        c[ib] -= 1.0;
    }
    Ok(c)
}

/// Transition probability on the natural scale with a delta-method SE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaRho {
    pub rho: f64,
    pub se: f64,
}

/// Delta-method estimate of the transition probability for a period, for
/// variants where `rho` does not vary with the lag: the constant-`rho` model
/// (`period` ignored) and the period-constant model
/// (`rho_j = 1/(1+exp(l0 + off_j))`).
pub fn delta_rho(fit: &FitResult, spec: &ModelSpec, period: usize) -> Result<DeltaRho> {
    let n_cov = fit.theta_hat.alpha.len();
    let s = spec.n_strata();
    let lambda_start = s + n_cov + s * (spec.lag_max + 1);
    let cov = fit
        .covariance_matrix()
        .ok_or_else(|| Error::Numerical("fit has no covariance; cannot run the delta method".into()))?;
    match spec.variant {
        Variant::ConstantRho => {
            let z = fit.packed[lambda_start];
            let rho = 1.0 / (1.0 + (-z).exp());
            let var = cov[(lambda_start, lambda_start)];
            if var < 0.0 {
                return Err(Error::Numerical("negative variance for the transition coordinate".into()));
            }
            Ok(DeltaRho { rho, se: rho * (1.0 - rho) * var.sqrt() })
        }
        Variant::PeriodConstantRho => {
            if period >= spec.n_periods() {
                return Err(Error::Input(format!(
                    "period {period} out of range ({} periods)",
                    spec.n_periods()
                )));
            }
            let mut c = DVector::zeros(fit.packed.len());
            c[lambda_start] = 1.0;
            let mut eta = fit.packed[lambda_start];
            if period >= 1 {
                c[lambda_start + period] = 1.0;
                eta += fit.packed[lambda_start + period];
            }
            let rho = 1.0 / (1.0 + eta.exp());
            let var = (c.transpose() * &cov * &c)[(0, 0)];
            if var < 0.0 {
                return Err(Error::Numerical("negative variance for the transition contrast".into()));
            }
            Ok(DeltaRho { rho, se: rho * (1.0 - rho) * var.sqrt() })
        }
        _ => Err(Error::InvalidSpec(
            "delta-method rho is defined for the constant and period-constant variants".into(),
        )),
    }
}
