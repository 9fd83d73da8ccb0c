//! Conventional distributed-lag baselines with a fixed lasting time:
//! unrestricted least squares, polynomial (Almon) lag, and order-constrained
//! non-negative least squares.
//!
//! All three regress `y_t` on an intercept and `x_t, ..., x_{t-L}` using only
//! the days with a full history (`t >= L`), in contrast to the proposed model
//! which keeps early days on a truncated support.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};

/// Which baseline produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    Ols,
    Almon { degree: usize },
    Monotone,
}

impl BaselineMethod {
    pub fn name(&self) -> String {
        match self {
            BaselineMethod::Ols => "ols".into(),
            BaselineMethod::Almon { degree } => format!("almon{degree}"),
            BaselineMethod::Monotone => "monotone".into(),
        }
    }
}

/// A fitted conventional distributed-lag model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineFit {
    pub method: BaselineMethod,
    pub alpha0: f64,
    /// Lag coefficients over `tau = 0..=l_fixed`.
    pub beta: Vec<f64>,
    pub residual_sd: f64,
    pub rss: f64,
    /// Days actually used (those with a complete lag history).
    pub n_used: usize,
}

/// Design matrix `[1, x_t, x_{t-1}, .., x_{t-L}]` over days `t >= L`.
fn lag_design(dataset: &TimeSeriesDataset, l_fixed: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let t_len = dataset.len();
    if t_len <= l_fixed + 2 {
        return Err(Error::InvalidDataset(format!(
            "need more than {} days for a lag-{l_fixed} baseline, got {t_len}",
            l_fixed + 2
        )));
    }
    let rows = t_len - l_fixed;
    let x = dataset.exposure();
    let design = DMatrix::from_fn(rows, l_fixed + 2, |r, c| {
        if c == 0 {
            1.0
        } else {
            x[l_fixed + r - (c - 1)]
        }
    });
    let y = DVector::from_fn(rows, |r, _| dataset.response()[l_fixed + r]);
    Ok((design, y))
}

/// Least-squares solve with an explicit rank check.
fn solve_ls(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax.max(1.0);
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if rank < design.ncols() {
        return Err(Error::RankDeficient { rank, cols: design.ncols() });
    }
    svd.solve(y, tol).map_err(|e| Error::Numerical(format!("least-squares solve failed: {e}")))
}

fn finish_fit(
    method: BaselineMethod,
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha0: f64,
    beta: Vec<f64>,
    coef_for_rss: &DVector<f64>,
    df_model: usize,
) -> BaselineFit {
    let resid = y - design * coef_for_rss;
    let rss = resid.dot(&resid);
    let n = y.len();
    let dof = n.saturating_sub(df_model).max(1);
    BaselineFit {
        method,
        alpha0,
        beta,
        residual_sd: (rss / dof as f64).sqrt(),
        rss,
        n_used: n,
    }
}

/// Unrestricted fixed-lag least squares.
pub fn ols_dlm(dataset: &TimeSeriesDataset, l_fixed: usize) -> Result<BaselineFit> {
    let (design, y) = lag_design(dataset, l_fixed)?;
    let coef = solve_ls(&design, &y)?;
    let alpha0 = coef[0];
    let beta: Vec<f64> = coef.iter().skip(1).copied().collect();
    Ok(finish_fit(BaselineMethod::Ols, &design, &y, alpha0, beta, &coef, l_fixed + 2))
}

/// Polynomial-lag fit: `beta_tau = sum_d c_d tau^d` estimated on the collapsed
/// design `z_{t,d} = sum_tau tau^d x_{t-tau}`.
pub fn almon_dlm(dataset: &TimeSeriesDataset, l_fixed: usize, degree: usize) -> Result<BaselineFit> {
    if degree >= l_fixed {
        return Err(Error::InvalidSpec(format!(
            "polynomial degree {degree} must be below the fixed lag {l_fixed}"
        )));
    }
    let (design, y) = lag_design(dataset, l_fixed)?;
    let rows = design.nrows();
    // collapse the lag block through the polynomial basis, keeping the intercept
    let collapsed = DMatrix::from_fn(rows, degree + 2, |r, c| {
        if c == 0 {
            1.0
        } else {
            let d = (c - 1) as i32;
            (0..=l_fixed).map(|tau| (tau as f64).powi(d) * design[(r, tau + 1)]).sum()
        }
    });
    let coef = solve_ls(&collapsed, &y)?;
    let alpha0 = coef[0];
    let poly: Vec<f64> = coef.iter().skip(1).copied().collect();
    let beta: Vec<f64> = (0..=l_fixed)
        .map(|tau| poly.iter().enumerate().map(|(d, c)| c * (tau as f64).powi(d as i32)).sum())
        .collect();
    Ok(finish_fit(
        BaselineMethod::Almon { degree },
        &collapsed,
        &y,
        alpha0,
        beta,
        &coef,
        degree + 2,
    ))
}

/// Non-negative least squares by the Lawson-Hanson active-set method.
/// Minimizes `||y - A b||^2` subject to `b >= 0`.
pub fn nnls(a: &DMatrix<f64>, y: &DVector<f64>, max_iter: usize) -> Result<DVector<f64>> {
    let n = a.ncols();
    let mut passive = vec![false; n];
    let mut beta = DVector::zeros(n);
    let tol = 1e-10 * a.amax().max(1.0) * y.amax().max(1.0);

    for _ in 0..max_iter {
        let w = a.transpose() * (y - a * &beta);
        let candidate = (0..n)
            .filter(|&i| !passive[i])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate else { break };
        if w[t] <= tol {
            break;
        }
        passive[t] = true;

        // inner loop: solve on the passive set and back off until feasible
        loop {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = a.select_columns(idx.iter());
            let coef = sub
                .clone()
                .svd(true, true)
                .solve(y, 1e-12)
                .map_err(|e| Error::Numerical(format!("nnls inner solve failed: {e}")))?;
            if coef.iter().all(|&v| v > 0.0) {
                beta.fill(0.0);
                for (k, &i) in idx.iter().enumerate() {
                    beta[i] = coef[k];
                }
                break;
            }
            // shrink toward the last feasible point
            let mut alpha = f64::INFINITY;
            for (k, &i) in idx.iter().enumerate() {
                if coef[k] <= 0.0 {
                    let denom = beta[i] - coef[k];
                    if denom > 0.0 {
                        alpha = alpha.min(beta[i] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (k, &i) in idx.iter().enumerate() {
                beta[i] += alpha * (coef[k] - beta[i]);
                if beta[i] <= 1e-14 {
                    beta[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    Ok(beta)
}

/// Order-constrained least squares: `beta_0 >= beta_1 >= ... >= beta_L >= 0`.
///
/// Reparameterized through non-negative decrements `delta` with
/// `beta_tau = sum_{s >= tau} delta_s`, which turns the ordering cone into a
/// non-negativity cone; the intercept is profiled out by centering.
pub fn monotone_dlm(dataset: &TimeSeriesDataset, l_fixed: usize) -> Result<BaselineFit> {
    let (design, y) = lag_design(dataset, l_fixed)?;
    let rows = design.nrows();
    let k = l_fixed + 1;
    // cumulative map: column s of the transformed design is sum_{tau <= s} x_{t-tau}
    let mut a = DMatrix::zeros(rows, k);
    for r in 0..rows {
        let mut acc = 0.0;
        for s in 0..k {
            acc += design[(r, s + 1)];
            a[(r, s)] = acc;
        }
    }
    let y_mean = y.mean();
    let col_means: Vec<f64> = (0..k).map(|c| a.column(c).mean()).collect();
    let mut a_c = a.clone();
    for c in 0..k {
        for r in 0..rows {
            a_c[(r, c)] -= col_means[c];
        }
    }
    let y_c = DVector::from_fn(rows, |r, _| y[r] - y_mean);

    let delta = nnls(&a_c, &y_c, 50 * k.max(10))?;
    // beta from cumulative decrements
    let mut beta = vec![0.0; k];
    let mut acc = 0.0;
    for tau in (0..k).rev() {
        acc += delta[tau];
        beta[tau] = acc;
    }
    let alpha0 = y_mean - col_means.iter().zip(delta.iter()).map(|(m, d)| m * d).sum::<f64>();

    // KKT check: passive coordinates have (near) zero gradient, active ones
    // must not admit a feasible descent direction
    let grad = a_c.transpose() * (&y_c - &a_c * &delta);
    let scale = y_c.amax().max(1.0) * a_c.amax().max(1.0);
    for i in 0..k {
        if delta[i] > 0.0 {
            if grad[i].abs() > 1e-6 * scale {
                return Err(Error::Numerical(format!(
                    "monotone fit failed the stationarity check at decrement {i}"
                )));
            }
        } else if grad[i] > 1e-6 * scale {
            return Err(Error::Numerical(format!(
                "monotone fit failed the dual feasibility check at decrement {i}"
            )));
        }
    }

    let fitted = &a * &delta;
    let resid = DVector::from_fn(rows, |r, _| y[r] - alpha0 - fitted[r]);
    let rss = resid.dot(&resid);
    Ok(BaselineFit {
        method: BaselineMethod::Monotone,
        alpha0,
        beta,
        residual_sd: (rss / rows as f64).sqrt(),
        rss,
        n_used: rows,
    })
}
