//! Shared data model: aligned daily time series and period partitions.
//!
//! A [`TimeSeriesDataset`] holds the response, exposure(s), covariates and
//! calendar index on a strictly daily grid; every other module consumes it
//! read-only. A [`PeriodPartition`] splits the study span into consecutive
//! half-open intervals `(t_{j-1}, t_j]` used for period-indexed transition
//! probabilities, period indicators and stratified fits.

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aligned daily series: response `y`, exposure `x` (optionally split per
/// stratum), covariate rows `w`, and a flag per day marking imputed exposure
/// values. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    dates: Vec<NaiveDate>,
    y: Vec<f64>,
    x: Vec<f64>,
    x_strata: Option<Vec<Vec<f64>>>,
    w: Vec<Vec<f64>>,
    w_names: Vec<String>,
    mask: Vec<bool>,
}

impl TimeSeriesDataset {
    /// Build a dataset without covariates or per-stratum exposures.
    pub fn new(dates: Vec<NaiveDate>, y: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        let mask = vec![false; dates.len()];
        Self::with_parts(dates, y, x, None, Vec::new(), Vec::new(), mask)
    }

    /// Build a dataset with all optional parts. `w` is one row per day,
    /// `w_names` one name per covariate column.
    pub fn with_parts(
        dates: Vec<NaiveDate>,
        y: Vec<f64>,
        x: Vec<f64>,
        x_strata: Option<Vec<Vec<f64>>>,
        w: Vec<Vec<f64>>,
        w_names: Vec<String>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let n = dates.len();
        if n == 0 {
            return Err(Error::InvalidDataset("dataset must have at least one day".into()));
        }
        if y.len() != n || x.len() != n || mask.len() != n {
            return Err(Error::InvalidDataset(format!(
                "series lengths differ: dates={}, y={}, x={}, mask={}",
                n,
                y.len(),
                x.len(),
                mask.len()
            )));
        }
        for pair in dates.windows(2) {
            if pair[1] - pair[0] != Duration::days(1) {
                return Err(Error::InvalidDataset(format!(
                    "dates must be strictly increasing with daily spacing; got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidDataset(format!(
                "exposure values must be finite and non-negative, got {bad}"
            )));
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("response values must be finite, got {bad}")));
        }
        if let Some(ref xs) = x_strata {
            for (j, series) in xs.iter().enumerate() {
                if series.len() != n {
                    return Err(Error::InvalidDataset(format!(
                        "stratum-{j} exposure has length {}, expected {n}",
                        series.len()
                    )));
                }
                if let Some(bad) = series.iter().find(|v| !v.is_finite() || **v < 0.0) {
                    return Err(Error::InvalidDataset(format!(
                        "stratum-{j} exposure values must be finite and non-negative, got {bad}"
                    )));
                }
            }
        }
        if !w.is_empty() {
            if w.len() != n {
                return Err(Error::InvalidDataset(format!(
                    "covariate rows ({}) must match day count ({n})",
                    w.len()
                )));
            }
            let c = w_names.len();
            if w.iter().any(|row| row.len() != c) {
                return Err(Error::InvalidDataset(format!(
                    "every covariate row must have {c} entries matching w_names"
                )));
            }
        } else if !w_names.is_empty() {
            return Err(Error::InvalidDataset("covariate names given without covariate rows".into()));
        }
        Ok(Self { dates, y, x, x_strata, w, w_names, mask })
    }

    /// Number of days `T`.
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.dates[day]
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    pub fn exposure(&self) -> &[f64] {
        &self.x
    }

    /// Exposure series for a stratum; falls back to the pooled exposure when
    /// no per-stratum series were provided.
    pub fn exposure_for_stratum(&self, stratum: usize) -> &[f64] {
        match &self.x_strata {
            Some(xs) if stratum < xs.len() => &xs[stratum],
            _ => &self.x,
        }
    }

    pub fn stratum_exposures(&self) -> Option<&[Vec<f64>]> {
        self.x_strata.as_deref()
    }

    /// Covariate row for one day (empty slice when there are no covariates).
    pub fn covariates(&self, day: usize) -> &[f64] {
        if self.w.is_empty() {
            &[]
        } else {
            &self.w[day]
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.w_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.w_names
    }

    pub fn imputed_mask(&self) -> &[bool] {
        &self.mask
    }

    /// Exposure history window for `day`: `x[day-tau]` for `tau = 0..=min(day, lag_max)`,
    /// returned in chronological order as a slice.
    pub fn history(&self, day: usize, lag_max: usize) -> &[f64] {
        let m = day.min(lag_max);
        &self.x[day - m..=day]
    }
}

/// Consecutive calendar periods defined by ordered cutpoints
/// `t_0 < t_1 < ... < t_J`. Day `d` belongs to period `j` (0-based) when
/// `d` lies in `(t_j, t_{j+1}]`; the first period also contains `t_0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodPartition {
    cutpoints: Vec<NaiveDate>,
    labels: Vec<String>,
}

impl PeriodPartition {
    pub fn new(cutpoints: Vec<NaiveDate>, labels: Vec<String>) -> Result<Self> {
        if cutpoints.len() < 2 {
            return Err(Error::InvalidSpec("partition needs at least two cutpoints".into()));
        }
        if labels.len() != cutpoints.len() - 1 {
            return Err(Error::InvalidSpec(format!(
                "partition has {} intervals but {} labels",
                cutpoints.len() - 1,
                labels.len()
            )));
        }
        if cutpoints.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidSpec("partition cutpoints must be strictly increasing".into()));
        }
        Ok(Self { cutpoints, labels })
    }

    /// Number of periods `J`.
    pub fn n_periods(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, j: usize) -> &str {
        &self.labels[j]
    }

    pub fn cutpoints(&self) -> &[NaiveDate] {
        &self.cutpoints
    }

    pub fn start(&self) -> NaiveDate {
        self.cutpoints[0]
    }

    pub fn end(&self) -> NaiveDate {
        *self.cutpoints.last().unwrap()
    }

    /// 0-based period index for a date. Intervals are half-open on the left,
    /// `(t_j, t_{j+1}]`, with `t_0` itself assigned to the first period.
    pub fn period_index(&self, date: NaiveDate) -> Result<usize> {
        if date < self.start() || date > self.end() {
            return Err(Error::DateOutOfSpan(date));
        }
        if date == self.start() {
            return Ok(0);
        }
        // partition_point gives the first cutpoint >= date; its interval index is one less.
        let pos = self.cutpoints.partition_point(|c| *c < date);
        Ok(pos - 1)
    }

    /// True when the partition covers `[first, last]`.
    pub fn spans(&self, first: NaiveDate, last: NaiveDate) -> bool {
        self.start() <= first && self.end() >= last
    }
}
