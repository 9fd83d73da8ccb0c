//! Data preparation: smoothing-spline imputation of missing days, centered
//! moving averages, mixture-weight construction, and period-indicator
//! covariates.
//!
//! The spline is a natural cubic smoothing spline on the observed
//! (day-index, value) pairs, solved through the banded second-difference
//! formulation `(R + lambda Q'Q) gamma = Q'y`, `fhat = y - lambda Q gamma`,
//! with the smoothing parameter chosen by generalized cross-validation.

use chrono::NaiveDate;

use crate::data::PeriodPartition;
use crate::error::{Error, Result};

/// Symmetric positive-definite banded matrix stored by diagonals:
/// `diag[d][i]` is the element `(i, i+d)`, `d = 0..=bw`.
struct SymBanded {
    n: usize,
    bw: usize,
    diag: Vec<Vec<f64>>,
}

impl SymBanded {
    fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, diag: (0..=bw).map(|d| vec![0.0; n.saturating_sub(d)]).collect() }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        self.diag[hi - lo][lo] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        if hi - lo > self.bw {
            0.0
        } else {
            self.diag[hi - lo][lo]
        }
    }

    /// In-place banded Cholesky factorization, `A = L L'`.
    fn cholesky(&self) -> Result<SymBanded> {
        let mut l = SymBanded::zeros(self.n, self.bw);
        for j in 0..self.n {
            let mut sum = self.get(j, j);
            for k in j.saturating_sub(self.bw)..j {
                let v = l.get(j, k);
                sum -= v * v;
            }
            if sum <= 0.0 {
                return Err(Error::Numerical(format!(
                    "banded Cholesky failed at pivot {j} (value {sum})"
                )));
            }
            let ljj = sum.sqrt();
            l.diag[0][j] = ljj;
            let end = (j + self.bw + 1).min(self.n);
            for i in (j + 1)..end {
                let mut s = self.get(i, j);
                for k in i.saturating_sub(self.bw)..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.diag[i - j][j] = s / ljj;
            }
        }
        Ok(l)
    }
}

/// Solve `L L' x = b` given the banded Cholesky factor.
fn banded_solve(l: &SymBanded, b: &[f64]) -> Vec<f64> {
    let n = l.n;
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in i.saturating_sub(l.bw)..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    let mut x = y;
    for i in (0..n).rev() {
        let mut s = x[i];
        let end = (i + l.bw + 1).min(n);
        for k in (i + 1)..end {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    x
}

/// A fitted natural cubic smoothing spline on strictly increasing knots.
pub struct SmoothingSpline {
    knots: Vec<f64>,
    fitted: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends).
    gamma: Vec<f64>,
    pub lambda: f64,
    pub gcv: f64,
    pub edf: f64,
}

/// `Q' v` for the second-difference matrix on the given spacings.
fn qt_apply(h: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n - 2)
        .map(|j| v[j] / h[j] - v[j + 1] * (1.0 / h[j] + 1.0 / h[j + 1]) + v[j + 2] / h[j + 1])
        .collect()
}

/// `Q g` (adjoint of `qt_apply`).
fn q_apply(h: &[f64], g: &[f64]) -> Vec<f64> {
    let n = g.len() + 2;
    let mut out = vec![0.0; n];
    for (j, gj) in g.iter().enumerate() {
        out[j] += gj / h[j];
        out[j + 1] -= gj * (1.0 / h[j] + 1.0 / h[j + 1]);
        out[j + 2] += gj / h[j + 1];
    }
    out
}

fn penalty_matrices(h: &[f64]) -> (SymBanded, SymBanded) {
    let m = h.len() - 1; // number of interior knots
    let mut r = SymBanded::zeros(m, 2);
    for j in 0..m {
        r.add(j, j, (h[j] + h[j + 1]) / 3.0);
        if j + 1 < m {
            r.add(j, j + 1, h[j + 1] / 6.0);
        }
    }
    // B = Q'Q is pentadiagonal; accumulate through the column overlaps
    let mut b = SymBanded::zeros(m, 2);
    let col = |j: usize| -> [(usize, f64); 3] {
        [
            (j, 1.0 / h[j]),
            (j + 1, -(1.0 / h[j] + 1.0 / h[j + 1])),
            (j + 2, 1.0 / h[j + 1]),
        ]
    };
    for j in 0..m {
        let cj = col(j);
        for k in j..(j + 3).min(m) {
            let ck = col(k);
            let mut dot = 0.0;
            for (ri, vi) in cj {
                for (rk, vk) in ck {
                    if ri == rk {
                        dot += vi * vk;
                    }
                }
            }
            b.add(j, k, dot);
        }
    }
    (r, b)
}

impl SmoothingSpline {
    /// Fit with a fixed smoothing parameter `lambda >= 0`.
    pub fn fit(knots: &[f64], values: &[f64], lambda: f64) -> Result<Self> {
        let n = knots.len();
        if n < 4 {
            return Err(Error::Input(format!("smoothing spline needs at least 4 points, got {n}")));
        }
        if values.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {n} knots",
                values.len()
            )));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("spline knots must be strictly increasing".into()));
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let (r, b) = penalty_matrices(&h);
        let m = n - 2;
        let mut a = SymBanded::zeros(m, 2);
        for d in 0..=2 {
            for i in 0..m.saturating_sub(d) {
                a.diag[d][i] = r.diag[d][i] + lambda * b.diag[d][i];
            }
        }
        let chol = a.cholesky()?;
        let qty = qt_apply(&h, values);
        let gamma_inner = banded_solve(&chol, &qty);
        let correction = q_apply(&h, &gamma_inner);
        let fitted: Vec<f64> =
            values.iter().zip(correction.iter()).map(|(y, c)| y - lambda * c).collect();
        let rss: f64 =
            fitted.iter().zip(values.iter()).map(|(f, y)| (y - f) * (y - f)).sum();

        // tr(S) = n - lambda * tr(A^{-1} B) via one banded solve per column
        let mut tr_ainv_b = 0.0;
        let mut col = vec![0.0; m];
        for j in 0..m {
            for i in 0..m {
                col[i] = b.get(i, j);
            }
            let sol = banded_solve(&chol, &col);
            tr_ainv_b += sol[j];
        }
        let edf = n as f64 - lambda * tr_ainv_b;
        let denom = n as f64 - edf;
        let gcv = if denom > 1e-10 {
            n as f64 * rss / (denom * denom)
        } else {
            f64::INFINITY
        };

        let mut gamma = vec![0.0; n];
        gamma[1..n - 1].copy_from_slice(&gamma_inner);
        Ok(Self { knots: knots.to_vec(), fitted, gamma, lambda, gcv, edf })
    }

    /// Fit with the smoothing parameter chosen by generalized cross-validation
    /// over a logarithmic grid.
    pub fn fit_gcv(knots: &[f64], values: &[f64]) -> Result<Self> {
        let mut best: Option<SmoothingSpline> = None;
        for k in 0..49 {
            let lambda = 10f64.powf(-8.0 + 0.375 * k as f64);
            let fit = SmoothingSpline::fit(knots, values, lambda)?;
            let better = match &best {
                None => true,
                Some(b) => fit.gcv < b.gcv,
            };
            if better {
                best = Some(fit);
            }
        }
        best.ok_or_else(|| Error::Numerical("GCV grid search produced no fit".into()))
    }

    /// Evaluate the spline. Inside the knot range this is the natural cubic
    /// interpolant of the fitted values; outside it extrapolates linearly,
    /// consistent with the natural boundary conditions.
    pub fn evaluate(&self, s: f64) -> f64 {
        let n = self.knots.len();
        if s <= self.knots[0] {
            let h = self.knots[1] - self.knots[0];
            let slope = (self.fitted[1] - self.fitted[0]) / h - h * self.gamma[1] / 6.0;
            return self.fitted[0] + (s - self.knots[0]) * slope;
        }
        if s >= self.knots[n - 1] {
            let h = self.knots[n - 1] - self.knots[n - 2];
            let slope =
                (self.fitted[n - 1] - self.fitted[n - 2]) / h + h * self.gamma[n - 2] / 6.0;
            return self.fitted[n - 1] + (s - self.knots[n - 1]) * slope;
        }
        let i = match self.knots.binary_search_by(|k| k.total_cmp(&s)) {
            Ok(exact) => return self.fitted[exact],
            Err(pos) => pos - 1,
        };
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - s) / h;
        let b = 1.0 - a;
        a * self.fitted[i]
            + b * self.fitted[i + 1]
            + ((a * a * a - a) * self.gamma[i] + (b * b * b - b) * self.gamma[i + 1]) * h * h / 6.0
    }

    pub fn fitted(&self) -> &[f64] {
        &self.fitted
    }
}

/// Fill missing days of a daily series by a GCV-tuned cubic smoothing spline
/// fit to the observed (day-index, value) pairs. Observed entries are never
/// altered. Returns the completed series and a mask flagging imputed days.
pub fn impute_missing(values: &[Option<f64>]) -> Result<(Vec<f64>, Vec<bool>)> {
    let n = values.len();
    let observed: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i as f64, v)))
        .collect();
    if observed.len() < 4 {
        return Err(Error::Input(format!(
            "imputation needs at least 4 observed points, got {}",
            observed.len()
        )));
    }
    let mask: Vec<bool> = values.iter().map(|v| v.is_none()).collect();
    if observed.len() == n {
        return Ok((values.iter().map(|v| v.unwrap()).collect(), mask));
    }
    let knots: Vec<f64> = observed.iter().map(|(k, _)| *k).collect();
    let obs: Vec<f64> = observed.iter().map(|(_, v)| *v).collect();
    let spline = SmoothingSpline::fit_gcv(&knots, &obs)?;
    let completed = values
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            Some(v) => *v,
            None => spline.evaluate(i as f64),
        })
        .collect();
    Ok((completed, mask))
}

/// Centered moving average with an odd window. Near the edges the radius
/// shrinks symmetrically so the filter stays centered on every day.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 1 || window % 2 == 0 {
        return Err(Error::Input(format!("moving-average window must be odd and >= 1, got {window}")));
    }
    let n = series.len();
    let k = window / 2;
    Ok((0..n)
        .map(|i| {
            let r = k.min(i).min(n - 1 - i);
            let slice = &series[i - r..=i + r];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

/// Mixing weights `(pi_old, pi_new)` per day from an observed new-variant
/// proportion series with hard anchors: all-old strictly before the first
/// anchor, all-new strictly after the second, the clamped observation in
/// between.
pub fn build_soft_weights(
    dates: &[NaiveDate],
    new_prop: &[Option<f64>],
    all_old_before: NaiveDate,
    all_new_after: NaiveDate,
) -> Result<Vec<Vec<f64>>> {
    if all_old_before > all_new_after {
        return Err(Error::Input(format!(
            "soft anchors out of order: {all_old_before} after {all_new_after}"
        )));
    }
    if new_prop.len() != dates.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} proportions for {} dates",
            new_prop.len(),
            dates.len()
        )));
    }
    dates
        .iter()
        .zip(new_prop.iter())
        .map(|(d, p)| {
            let pi_new = if *d < all_old_before {
                0.0
            } else if *d > all_new_after {
                1.0
            } else {
                match p {
                    Some(p) => p.clamp(0.0, 1.0),
                    None => {
                        return Err(Error::Input(format!(
                            "day {d} lies in the mixing window but has no observed proportion"
                        )))
                    }
                }
            };
            Ok(vec![1.0 - pi_new, pi_new])
        })
        .collect()
}

/// Indicator covariates for periods 2..J (the first period is the baseline
/// absorbed by the intercept), with the period labels as covariate names.
pub fn period_indicator_covariates(
    partition: &PeriodPartition,
    dates: &[NaiveDate],
) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let j = partition.n_periods();
    if j < 2 {
        return Ok((Vec::new(), Vec::new()));
    }
    let names: Vec<String> = (1..j).map(|p| partition.label(p).to_string()).collect();
    let rows = dates
        .iter()
        .map(|d| {
            let idx = partition.period_index(*d)?;
            let mut row = vec![0.0; j - 1];
            if idx >= 1 {
                row[idx - 1] = 1.0;
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spline_reproduces_linear_data_exactly() {
        let knots: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let values: Vec<f64> = knots.iter().map(|k| 2.0 + 0.5 * k).collect();
        let spline = SmoothingSpline::fit(&knots, &values, 10.0).unwrap();
        for (f, y) in spline.fitted().iter().zip(values.iter()) {
            assert_abs_diff_eq!(f, y, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(spline.evaluate(7.31), 2.0 + 0.5 * 7.31, epsilon = 1e-9);
        // linear extrapolation beyond the ends
        assert_abs_diff_eq!(spline.evaluate(25.0), 2.0 + 0.5 * 25.0, epsilon = 1e-8);
    }

    #[test]
    fn heavy_smoothing_approaches_the_regression_line() {
        let knots: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values: Vec<f64> =
            knots.iter().map(|k| 1.0 + 0.3 * k + rng.gen_range(-0.5..0.5)).collect();
        let spline = SmoothingSpline::fit(&knots, &values, 1e9).unwrap();
        // second differences of the fit are crushed by the penalty
        for w in spline.fitted().windows(3) {
            assert!((w[2] - 2.0 * w[1] + w[0]).abs() < 1e-4);
        }
    }

    #[test]
    fn impute_no_gaps_is_identity() {
        let values: Vec<Option<f64>> = (0..10).map(|i| Some(i as f64 * 1.5)).collect();
        let (done, mask) = impute_missing(&values).unwrap();
        assert_eq!(done, (0..10).map(|i| i as f64 * 1.5).collect::<Vec<_>>());
        assert!(mask.iter().all(|m| !m));
    }

    #[test]
    fn impute_interior_gap_on_a_line() {
        let mut values: Vec<Option<f64>> = (0..15).map(|i| Some(3.0 + 2.0 * i as f64)).collect();
        values[7] = None;
        let (done, mask) = impute_missing(&values).unwrap();
        assert_abs_diff_eq!(done[7], 3.0 + 2.0 * 7.0, epsilon = 1e-6);
        assert!(mask[7]);
        // observed values never altered
        for i in (0..15).filter(|i| *i != 7) {
            assert_eq!(done[i], 3.0 + 2.0 * i as f64);
        }
    }

    #[test]
    fn impute_rejects_fewer_than_four_points() {
        let values = vec![Some(1.0), None, Some(2.0), Some(3.0), None];
        assert!(impute_missing(&values).is_err());
    }

    #[test]
    fn impute_sinusoid_with_random_gaps() {
        // held-out reconstruction: RMSE over imputed days stays below SD/3
        let n = 200;
        let truth: Vec<f64> =
            (0..n).map(|i| (2.0 * std::f64::consts::PI * i as f64 / 50.0).sin()).collect();
        let sd = {
            let mean = truth.iter().sum::<f64>() / n as f64;
            (truth.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut values: Vec<Option<f64>> = truth.iter().map(|v| Some(*v)).collect();
        let mut dropped = Vec::new();
        for i in 1..n - 1 {
            if rng.gen::<f64>() < 0.10 {
                values[i] = None;
                dropped.push(i);
            }
        }
        let (done, _) = impute_missing(&values).unwrap();
        let rmse = (dropped.iter().map(|&i| (done[i] - truth[i]).powi(2)).sum::<f64>()
            / dropped.len() as f64)
            .sqrt();
        assert!(rmse < sd / 3.0, "rmse {rmse} vs bound {}", sd / 3.0);
    }

    #[test]
    fn moving_average_constant_series_unchanged() {
        let s = vec![4.2; 25];
        assert_eq!(moving_average(&s, 7).unwrap(), s);
    }

    #[test]
    fn moving_average_impulse_response() {
        let mut s = vec![0.0; 21];
        s[10] = 1.0;
        let out = moving_average(&s, 7).unwrap();
        for (i, v) in out.iter().enumerate() {
            if (7..=13).contains(&i) {
                assert_abs_diff_eq!(*v, 1.0 / 7.0, epsilon = 1e-12);
            } else {
                assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn moving_average_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s: Vec<f64> = (0..40).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let w = 5;
        let out = moving_average(&s, w).unwrap();
        for i in 0..s.len() {
            let r = (w / 2).min(i).min(s.len() - 1 - i);
            let direct: f64 =
                (i - r..=i + r).map(|j| s[j]).sum::<f64>() / (2 * r + 1) as f64;
            assert_abs_diff_eq!(out[i], direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn moving_average_rejects_even_window() {
        assert!(moving_average(&[1.0, 2.0], 4).is_err());
    }

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn soft_weights_anchor_rules() {
        let dates = vec![d("2021-10-15"), d("2021-12-01"), d("2022-03-01")];
        let props = vec![None, Some(0.4), None];
        let w =
            build_soft_weights(&dates, &props, d("2021-11-01"), d("2022-01-31")).unwrap();
        assert_eq!(w[0], vec![1.0, 0.0]);
        assert_eq!(w[1], vec![0.6, 0.4]);
        assert_eq!(w[2], vec![0.0, 1.0]);
    }

    #[test]
    fn soft_weights_require_observations_in_the_window() {
        let dates = vec![d("2021-12-01")];
        let props = vec![None];
        assert!(build_soft_weights(&dates, &props, d("2021-11-01"), d("2022-01-31")).is_err());
    }

    #[test]
    fn soft_weights_reject_misordered_anchors() {
        let dates = vec![d("2021-12-01")];
        let props = vec![Some(0.5)];
        assert!(build_soft_weights(&dates, &props, d("2022-01-31"), d("2021-11-01")).is_err());
    }

    #[test]
    fn soft_weights_clamp_out_of_range_proportions() {
        let dates = vec![d("2021-12-01"), d("2021-12-02")];
        let props = vec![Some(-0.2), Some(1.3)];
        let w =
            build_soft_weights(&dates, &props, d("2021-11-01"), d("2022-01-31")).unwrap();
        assert_eq!(w[0], vec![1.0, 0.0]);
        assert_eq!(w[1], vec![0.0, 1.0]);
    }

    #[test]
    fn period_indicators_baseline_omitted() {
        let part = PeriodPartition::new(
            vec![d("2021-01-01"), d("2021-01-05"), d("2021-01-10")],
            vec!["base".into(), "later".into()],
        )
        .unwrap();
        let dates: Vec<NaiveDate> =
            (0..10).map(|i| d("2021-01-01") + chrono::Duration::days(i)).collect();
        let (rows, names) = period_indicator_covariates(&part, &dates).unwrap();
        assert_eq!(names, vec!["later".to_string()]);
        assert_eq!(rows[0], vec![0.0]);
        assert_eq!(rows[4], vec![0.0]); // Jan 5 is the right endpoint of the baseline
        assert_eq!(rows[5], vec![1.0]);
    }

    #[test]
    fn gcv_picks_a_reasonable_lambda_for_noisy_data() {
        let n = 80;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let knots: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let truth: Vec<f64> = knots.iter().map(|k| (k / 12.0).sin() * 3.0).collect();
        let noisy: Vec<f64> = truth.iter().map(|v| v + rng.gen_range(-0.4..0.4)).collect();
        let spline = SmoothingSpline::fit_gcv(&knots, &noisy).unwrap();
        let rmse = (spline
            .fitted()
            .iter()
            .zip(truth.iter())
            .map(|(f, t)| (f - t) * (f - t))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        // the smoother should beat the raw noise level
        assert!(rmse < 0.2, "rmse {rmse}");
        assert!(spline.edf > 2.0 && spline.edf < n as f64);
    }
}
