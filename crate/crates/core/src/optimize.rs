//! Box-constrained quasi-Newton minimizer (L-BFGS-B style) with
//! finite-difference gradients.
//!
//! Implements the limited-memory BFGS update with the gradient-projection
//! generalized Cauchy point and a direct primal subspace minimization over the
//! free variables, following Byrd, Lu, Nocedal and Zhu (1995). Bounds may be
//! infinite, equal (which pins a coordinate), or one-sided. The objective is
//! treated as a black box; gradients are central finite differences.

use nalgebra::{DMatrix, DVector};
use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Options controlling the minimization.
#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    /// Convergence tolerance on the infinity norm of the projected gradient.
    pub tol_grad: f64,
    /// Convergence tolerance on the relative objective decrease.
    pub tol_f: f64,
    /// Maximum number of outer iterations.
    pub max_iter: usize,
    /// Number of limited-memory correction pairs.
    pub memory: usize,
    /// Relative step for finite-difference gradients.
    pub fd_step: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { tol_grad: 1e-5, tol_f: 1e-10, max_iter: 500, memory: 10, fd_step: 1e-6 }
    }
}

/// Outcome of a minimization run.
#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub n_evals: usize,
    pub message: String,
}

/// Project a point onto the box.
pub fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

/// Central-difference gradient with per-coordinate relative steps. The
/// stencil is allowed to cross the bounds: box constraints restrict the
/// iterates, not the objective's domain.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    rel_step: f64,
    n_evals: &mut usize,
) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut xp = x.to_vec();
    for i in 0..n {
        let h = rel_step * x[i].abs().max(1.0);
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        *n_evals += 2;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

struct LbfgsbState {
    lower: DVector<f64>,
    upper: DVector<f64>,
    theta: f64,
    s_store: VecDeque<DVector<f64>>,
    y_store: VecDeque<DVector<f64>>,
    w_mat: DMatrix<f64>,
    m_mat: DMatrix<f64>,
    memory: usize,
}

impl LbfgsbState {
    fn new(lower: Vec<f64>, upper: Vec<f64>, memory: usize) -> Self {
        let n = lower.len();
        Self {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
            theta: 1.0,
            s_store: VecDeque::new(),
            y_store: VecDeque::new(),
            w_mat: DMatrix::zeros(n, 0),
            m_mat: DMatrix::zeros(0, 0),
            memory,
        }
    }

    fn inf_norm_projected_gradient(&self, x: &DVector<f64>, g: &DVector<f64>) -> f64 {
        let mut norm = 0.0_f64;
        for i in 0..x.len() {
            let step = x[i] - g[i];
            let proj = step.clamp(self.lower[i], self.upper[i]);
            norm = norm.max((proj - x[i]).abs());
        }
        norm
    }

    /// Maintain the compact representations W and M after a curvature update.
    fn rebuild_w_m(&mut self) {
        let m = self.s_store.len();
        let n = self.lower.len();
        if m == 0 {
            self.w_mat = DMatrix::zeros(n, 0);
            self.m_mat = DMatrix::zeros(0, 0);
            return;
        }
        let s_mat = DMatrix::from_fn(n, m, |i, j| self.s_store[j][i]);
        let y_mat = DMatrix::from_fn(n, m, |i, j| self.y_store[j][i]);

        let mut w = DMatrix::zeros(n, 2 * m);
        w.view_mut((0, 0), (n, m)).copy_from(&y_mat);
        w.view_mut((0, m), (n, m)).copy_from(&(s_mat.clone() * self.theta));
        self.w_mat = w;

        let s_tr_y = s_mat.transpose() * &y_mat;
        let d_vec = s_tr_y.diagonal();
        let mut l_mat = s_tr_y.lower_triangle();
        l_mat.set_diagonal(&DVector::from_element(m, 0.0));
        let mut m_inv = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            m_inv[(i, i)] = -d_vec[i];
        }
        m_inv.view_mut((m, 0), (m, m)).copy_from(&l_mat);
        m_inv.view_mut((0, m), (m, m)).copy_from(&l_mat.transpose());
        m_inv
            .view_mut((m, m), (m, m))
            .copy_from(&(s_mat.transpose() * &s_mat * self.theta));
        match m_inv.try_inverse() {
            Some(inv) => self.m_mat = inv,
            None => {
                // drop the correction history and fall back to steepest descent
                self.s_store.clear();
                self.y_store.clear();
                self.w_mat = DMatrix::zeros(n, 0);
                self.m_mat = DMatrix::zeros(0, 0);
                self.theta = 1.0;
            }
        }
    }

    fn push_pair(&mut self, s: DVector<f64>, y: DVector<f64>) {
        let sy = s.dot(&y);
        let yy = y.dot(&y);
        if sy > 1e-10 * yy.sqrt().max(1.0) * s.norm().max(1e-300) && sy > 0.0 {
            if self.s_store.len() == self.memory {
                self.s_store.pop_front();
                self.y_store.pop_front();
            }
            self.theta = yy / sy;
            self.s_store.push_back(s);
            self.y_store.push_back(y);
            self.rebuild_w_m();
        }
    }

    /// Generalized Cauchy point along the projected steepest-descent path.
    /// Returns `(x_cp, c = W^T (x_cp - x))`.
    fn cauchy_point(&self, x: &DVector<f64>, g: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = x.len();
        let mut t = vec![0.0_f64; n];
        let mut d = DVector::zeros(n);
        for i in 0..n {
            t[i] = if g[i] < 0.0 {
                (x[i] - self.upper[i]) / g[i]
            } else if g[i] > 0.0 {
                (x[i] - self.lower[i]) / g[i]
            } else {
                f64::INFINITY
            };
            d[i] = if t[i] > f64::EPSILON { -g[i] } else { 0.0 };
        }
        let mut x_cp = x.clone();
        let mut order: Vec<usize> = (0..n).filter(|&i| t[i] > 0.0).collect();
        order.sort_by(|&a, &b| t[a].total_cmp(&t[b]));
        if order.is_empty() {
            return (x_cp, DVector::zeros(self.w_mat.ncols()));
        }

        let mut p = self.w_mat.transpose() * &d;
        let mut c: DVector<f64> = DVector::zeros(p.len());
        let mut df = -d.dot(&d);
        let mut ddf = -self.theta * df - p.dot(&(&self.m_mat * &p));
        if ddf <= 0.0 {
            ddf = 1e-16;
        }
        let mut dt_min = -df / ddf;
        let mut t_old = 0.0;
        let mut idx = 0;
        let mut b = order[0];
        let mut t_b = t[b];
        let mut dt_b = t_b - t_old;

        while dt_min >= dt_b && idx < order.len() {
            x_cp[b] = if d[b] > 0.0 { self.upper[b] } else { self.lower[b] };
            let z_b = x_cp[b] - x[b];
            c += &p * dt_b;
            let g_b = g[b];
            let w_b = self.w_mat.row(b).transpose();
            df += dt_b * ddf + g_b * (g_b + self.theta * z_b - w_b.dot(&(&self.m_mat * &c)));
            ddf -= g_b
                * (g_b * self.theta - 2.0 * w_b.dot(&(&self.m_mat * &p))
                    - g_b * w_b.dot(&(&self.m_mat * &w_b)));
            if ddf <= 0.0 {
                ddf = 1e-16;
            }
            p += &w_b * g_b;
            d[b] = 0.0;
            dt_min = -df / ddf;
            t_old = t_b;
            idx += 1;
            if idx < order.len() {
                b = order[idx];
                t_b = t[b];
                dt_b = t_b - t_old;
            } else {
                t_b = f64::INFINITY;
            }
        }

        dt_min = dt_min.max(0.0);
        t_old += dt_min;
        for i in 0..n {
            if t[i] >= t_b {
                x_cp[i] = x[i] + t_old * d[i];
                x_cp[i] = x_cp[i].clamp(self.lower[i], self.upper[i]);
            }
        }
        c += &p * dt_min;
        (x_cp, c)
    }

    /// Direct primal subspace minimization over the variables free at the
    /// Cauchy point; returns the search target `x_bar`.
    fn subspace_min(
        &self,
        x: &DVector<f64>,
        g: &DVector<f64>,
        x_cp: &DVector<f64>,
        c: &DVector<f64>,
    ) -> DVector<f64> {
        let free: Vec<usize> = (0..x.len())
            .filter(|&i| x_cp[i] > self.lower[i] && x_cp[i] < self.upper[i])
            .collect();
        if free.is_empty() {
            return x_cp.clone();
        }
        let nf = free.len();
        // reduced gradient of the quadratic model at the Cauchy point
        let mut r_c = DVector::zeros(nf);
        let wm_c = if self.w_mat.ncols() > 0 {
            &self.w_mat * (&self.m_mat * c)
        } else {
            DVector::zeros(x.len())
        };
        for (k, &i) in free.iter().enumerate() {
            r_c[k] = g[i] + self.theta * (x_cp[i] - x[i]) - wm_c[i];
        }

        let d_u = if self.w_mat.ncols() == 0 {
            -&r_c / self.theta
        } else {
            let mcols = self.w_mat.ncols();
            let mut w_z = DMatrix::zeros(mcols, nf);
            for (k, &i) in free.iter().enumerate() {
                w_z.set_column(k, &self.w_mat.row(i).transpose());
            }
            let n_mat = DMatrix::identity(mcols, mcols)
                - (&self.m_mat * (&w_z * w_z.transpose())) / self.theta;
            let rhs = &self.m_mat * (&w_z * &r_c);
            match n_mat.lu().solve(&rhs) {
                Some(v) => -(&r_c + (w_z.transpose() * v) / self.theta) / self.theta,
                None => -&r_c / self.theta,
            }
        };

        // longest feasible step along d_u for the free coordinates
        let mut alpha: f64 = 1.0;
        for (k, &i) in free.iter().enumerate() {
            if d_u[k] > 0.0 && self.upper[i].is_finite() {
                alpha = alpha.min((self.upper[i] - x_cp[i]) / d_u[k]);
            } else if d_u[k] < 0.0 && self.lower[i].is_finite() {
                alpha = alpha.min((self.lower[i] - x_cp[i]) / d_u[k]);
            }
        }
        alpha = alpha.max(0.0);
        let mut x_bar = x_cp.clone();
        for (k, &i) in free.iter().enumerate() {
            x_bar[i] = (x_cp[i] + alpha * d_u[k]).clamp(self.lower[i], self.upper[i]);
        }
        x_bar
    }
}

/// Backtracking line search with an Armijo sufficient-decrease condition and
/// a one-shot expansion attempt. Searches along `d` from `x` with steps in
/// `(0, 1]`; the segment endpoints are feasible, hence so is every trial.
fn line_search<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &DVector<f64>,
    fx: f64,
    g: &DVector<f64>,
    d: &DVector<f64>,
    n_evals: &mut usize,
) -> Option<(DVector<f64>, f64, f64)> {
    let slope = g.dot(d);
    if !(slope < 0.0) {
        return None;
    }
    const C1: f64 = 1e-4;
    let mut alpha = 1.0_f64;
    for _ in 0..40 {
        let trial = x + d * alpha;
        let ft = f(trial.as_slice());
        *n_evals += 1;
        if ft.is_finite() && ft <= fx + C1 * alpha * slope {
            return Some((trial, ft, alpha));
        }
        alpha *= 0.5;
    }
    None
}

/// Minimize `f` subject to box constraints. `x0` is projected into the box
/// before the first evaluation.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    options: &MinimizeOptions,
) -> Result<MinimizeResult> {
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "bounds have lengths {}/{} but x0 has {n}",
            lower.len(),
            upper.len()
        )));
    }
    for i in 0..n {
        if lower[i] > upper[i] {
            return Err(Error::Optimizer(format!(
                "lower bound exceeds upper bound at coordinate {i}"
            )));
        }
    }
    let mut x_vec = x0.to_vec();
    project(&mut x_vec, lower, upper);
    let mut n_evals = 0usize;
    let mut fx = f(&x_vec);
    n_evals += 1;
    if !fx.is_finite() {
        return Err(Error::Optimizer("objective is not finite at the starting point".into()));
    }

    let mut state = LbfgsbState::new(lower.to_vec(), upper.to_vec(), options.memory);
    let mut x = DVector::from_vec(x_vec);
    let mut g = DVector::from_vec(fd_gradient(f, x.as_slice(), options.fd_step, &mut n_evals));

    let mut converged = false;
    let mut message = "max iterations reached".to_string();
    let mut iterations = 0;
    for iter in 0..options.max_iter {
        iterations = iter + 1;
        if state.inf_norm_projected_gradient(&x, &g) <= options.tol_grad {
            converged = true;
            message = "projected gradient within tolerance".into();
            break;
        }

        let (x_cp, c) = state.cauchy_point(&x, &g);
        let x_bar = state.subspace_min(&x, &g, &x_cp, &c);
        let mut d = &x_bar - &x;
        if d.norm() == 0.0 {
            // projected steepest descent as a fallback direction
            let mut x_try = &x - &g;
            for i in 0..n {
                x_try[i] = x_try[i].clamp(lower[i], upper[i]);
            }
            d = &x_try - &x;
            if d.norm() == 0.0 {
                converged = true;
                message = "no feasible descent direction".into();
                break;
            }
        }

        match line_search(f, &x, fx, &g, &d, &mut n_evals) {
            Some((x_new, f_new, _alpha)) => {
                let g_new =
                    DVector::from_vec(fd_gradient(f, x_new.as_slice(), options.fd_step, &mut n_evals));
                let s = &x_new - &x;
                let y = &g_new - &g;
                let f_drop = (fx - f_new).abs();
                let scale = fx.abs().max(f_new.abs()).max(1.0);
                x = x_new;
                g = g_new;
                fx = f_new;
                state.push_pair(s, y);
                if f_drop <= options.tol_f * scale {
                    converged = true;
                    message = "objective decrease within tolerance".into();
                    break;
                }
            }
            None => {
                // try a projected-gradient rescue before giving up
                let mut x_try = &x - &g * 1e-8;
                for i in 0..n {
                    x_try[i] = x_try[i].clamp(lower[i], upper[i]);
                }
                let d2 = &x_try - &x;
                if let Some((x_new, f_new, _)) = line_search(f, &x, fx, &g, &d2, &mut n_evals) {
                    x = x_new;
                    fx = f_new;
                    g = DVector::from_vec(fd_gradient(
                        f,
                        x.as_slice(),
                        options.fd_step,
                        &mut n_evals,
                    ));
                } else {
                    converged = true;
                    message = "line search could not improve the objective".into();
                    break;
                }
            }
        }
    }

    Ok(MinimizeResult {
        x: x.as_slice().to_vec(),
        f: fx,
        grad: g.as_slice().to_vec(),
        converged,
        iterations,
        n_evals,
        message,
    })
}
