//! Transition-probability families and the induced lasting-time distribution.
//!
//! The hidden process starts in the active state with probability one and can
//! only fall into the absorbing inactive state, with per-lag transition
//! probability `rho(tau, t)`. The lasting time `L(t)` is the last active lag;
//! its law over the truncated support `{0..trunc}` is
//!
//! ```text
//! P(L = tau)  = rho(tau, t) * prod_{i < tau} (1 - rho(i, t))      tau < trunc
//! P(L = trunc) = prod_{i < trunc} (1 - rho(i, t))
//! ```
//!
//! All residual tail mass beyond the truncation point is folded into the last
//! support point so the law stays proper, and `P(L >= tau)` is the running
//! product of survival factors.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::PeriodPartition;
use crate::error::Result;

/// Parametric form of the transition probability `rho(tau, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TransitionFamily {
    /// `rho(tau, t) = rho` for all lags and days.
    Constant { rho: f64 },
    /// `rho(tau, t) = 1 / (1 + exp(intercept + slope * tau))`.
    LogisticInTau { intercept: f64, slope: f64 },
    /// Shared intercept with one slope per period:
    /// `rho(tau, t) = 1 / (1 + exp(intercept + slopes[j] * tau))` for `t` in period `j`.
    PeriodLogistic { intercept: f64, slopes: Vec<f64>, partition: PeriodPartition },
    /// Constant in `tau`, stepping over periods:
    /// `rho(t) = 1 / (1 + exp(intercept + offsets[j-1]))` for `t` in period `j >= 1`,
    /// and `1 / (1 + exp(intercept))` in the baseline period.
    PeriodConstant { intercept: f64, offsets: Vec<f64>, partition: PeriodPartition },
}

#[inline]
fn inv_logit_neg(z: f64) -> f64 {
    // 1 / (1 + e^z), evaluated without overflow for large |z|
    if z <= 0.0 {
        1.0 / (1.0 + z.exp())
    } else {
        let e = (-z).exp();
        e / (1.0 + e)
    }
}

impl TransitionFamily {
    /// Transition probability at lag `tau` for a day in period `period`.
    /// The period index is ignored by families that do not step over periods.
    pub fn rho_in_period(&self, tau: usize, period: usize) -> f64 {
        match self {
            TransitionFamily::Constant { rho } => *rho,
            TransitionFamily::LogisticInTau { intercept, slope } => {
                inv_logit_neg(intercept + slope * tau as f64)
            }
            TransitionFamily::PeriodLogistic { intercept, slopes, .. } => {
                inv_logit_neg(intercept + slopes[period] * tau as f64)
            }
            TransitionFamily::PeriodConstant { intercept, offsets, .. } => {
                let off = if period == 0 { 0.0 } else { offsets[period - 1] };
                inv_logit_neg(intercept + off)
            }
        }
    }

    /// Resolve the period index of a calendar day, or 0 when the family is
    /// not period-indexed.
    pub fn resolve_period(&self, date: NaiveDate) -> Result<usize> {
        match self {
            TransitionFamily::PeriodLogistic { partition, .. }
            | TransitionFamily::PeriodConstant { partition, .. } => partition.period_index(date),
            _ => Ok(0),
        }
    }

    pub fn n_periods(&self) -> usize {
        match self {
            TransitionFamily::PeriodLogistic { slopes, .. } => slopes.len(),
            TransitionFamily::PeriodConstant { offsets, .. } => offsets.len() + 1,
            _ => 1,
        }
    }
}

/// Transition probability `rho(tau, t)` for a calendar day.
pub fn transition_prob(family: &TransitionFamily, tau: usize, date: NaiveDate) -> Result<f64> {
    let period = family.resolve_period(date)?;
    Ok(family.rho_in_period(tau, period))
}

/// Lasting-time law over the truncated support `{0..=trunc}`: the probability
/// mass function and the survival function `P(L >= tau)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastingLaw {
    pub pmf: Vec<f64>,
    pub survival: Vec<f64>,
}

impl LastingLaw {
    /// Largest supported lag.
    pub fn trunc(&self) -> usize {
        self.pmf.len() - 1
    }

    /// Law supported on the shorter truncation `{0..=trunc}` obtained by
    /// folding the remaining tail mass into the new last point. Used for
    /// early days whose exposure history is shorter than the global
    /// truncation.
    pub fn refold(&self, trunc: usize) -> LastingLaw {
        assert!(trunc <= self.trunc());
        if trunc == self.trunc() {
            return self.clone();
        }
        let mut pmf = self.pmf[..=trunc].to_vec();
        pmf[trunc] = self.survival[trunc];
        let survival = self.survival[..=trunc].to_vec();
        LastingLaw { pmf, survival }
    }

    /// `P(L <= tau)` by cumulative summation of the pmf.
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(l, p)| l as f64 * p).sum()
    }
}

/// Lasting-time law of a day in the given period.
pub fn lasting_law_in_period(family: &TransitionFamily, period: usize, trunc: usize) -> LastingLaw {
    let mut pmf = Vec::with_capacity(trunc + 1);
    let mut survival = Vec::with_capacity(trunc + 1);
    let mut surv = 1.0_f64;
    for tau in 0..trunc {
        survival.push(surv);
        let rho = family.rho_in_period(tau, period);
        pmf.push(surv * rho);
        surv *= 1.0 - rho;
    }
    // all remaining tail mass folds into the truncation point
    survival.push(surv);
    pmf.push(surv);
    LastingLaw { pmf, survival }
}

/// Lasting-time law of a calendar day over `{0..=trunc}`.
///
/// `trunc` is the effective truncation for that day: `min(day_index, lag_max)`
/// when the day's history is shorter than the global truncation.
pub fn lasting_law(family: &TransitionFamily, date: NaiveDate, trunc: usize) -> Result<LastingLaw> {
    let period = family.resolve_period(date)?;
    Ok(lasting_law_in_period(family, period, trunc))
}

/// `E(Z*_t(tau)) = P(L(t) >= tau)`, the survival factor that multiplies the
/// lag coefficient in the expected delayed effect. Always 1 at `tau = 0`.
pub fn expect_z(family: &TransitionFamily, tau: usize, date: NaiveDate) -> Result<f64> {
    let period = family.resolve_period(date)?;
    Ok(expect_z_in_period(family, tau, period))
}

/// Period-indexed version of [`expect_z`].
pub fn expect_z_in_period(family: &TransitionFamily, tau: usize, period: usize) -> f64 {
    let mut surv = 1.0_f64;
    for i in 0..tau {
        surv *= 1.0 - family.rho_in_period(i, period);
    }
    surv
}
