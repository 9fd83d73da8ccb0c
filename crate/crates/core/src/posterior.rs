//! Empirical-Bayes posterior of the daily lasting time.
//!
//! Given plugged-in parameter estimates, the posterior over the truncated
//! support `{0..min(t, lag_max)}` weighs the lasting-time prior by the
//! Gaussian emission density of the observed response:
//!
//! ```text
//! P(L(t) = l | Y_t, history) ∝ N(y_t; mu_t(l), sigma^2) * P(L(t) = l)
//! ```
//!
//! computed in log space, shift-normalized, and exponentiated. The prior is
//! the same truncated, tail-folded law the fitting likelihood uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasting::lasting_law_in_period;
use crate::likelihood::{emission_logpdf, transition_families, LikelihoodContext};
use crate::model::{ParamVector, Variant};

/// Posterior of the lasting time for one day (and one stratum, for the
/// soft-stratified variant's mixed days).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayPosterior {
    pub day: usize,
    /// Stratum whose chain this posterior describes; `None` when a single
    /// chain governs the day.
    pub stratum: Option<usize>,
    pub pmf: Vec<f64>,
    pub mean: f64,
    pub var: f64,
}

/// Per-day posterior laws with their moment summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LastingPosterior {
    pub rows: Vec<DayPosterior>,
}

/// Mean and variance of a pmf over `{0..len-1}`.
pub fn summarize_pmf(pmf: &[f64]) -> (f64, f64) {
    let mean: f64 = pmf.iter().enumerate().map(|(l, p)| l as f64 * p).sum();
    let second: f64 = pmf.iter().enumerate().map(|(l, p)| (l * l) as f64 * p).sum();
    (mean, (second - mean * mean).max(0.0))
}

fn normalize_log_weights(lw: &[f64]) -> Result<Vec<f64>> {
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Numerical("all posterior log-weights are -inf".into()));
    }
    let unnorm: Vec<f64> = lw.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|w| w / total).collect())
}

/// Posterior pmf of the lasting time for a day governed by a single chain.
pub fn posterior_law(ctx: &LikelihoodContext, day: usize, p: &ParamVector) -> Result<Vec<f64>> {
    let rows = posterior_day(ctx, day, p)?;
    match rows.into_iter().next() {
        Some(r) => Ok(r.pmf),
        None => Err(Error::Numerical("no posterior produced".into())),
    }
}

/// Posterior rows for one day: a single row for single-chain days, one row
/// per active stratum (the marginal posterior of that stratum's chain) on
/// soft-stratified mixed days.
pub fn posterior_day(ctx: &LikelihoodContext, day: usize, p: &ParamVector) -> Result<Vec<DayPosterior>> {
    let spec = ctx.spec();
    p.check_shape(spec, ctx.dataset().n_covariates())?;
    let m = ctx.trunc(day);
    let y = ctx.dataset().response()[day];
    let families = transition_families(spec, p);

    let soft_mixed = spec.variant == Variant::SoftStratified
        && spec.soft_weights.as_ref().unwrap().degenerate_stratum(day).is_none();

    if !soft_mixed {
        // the day is governed by one chain: its stratum's (or the pooled)
        // family, evaluated in the day's period slot
        let (stratum, chain_period, family) = match spec.variant {
            Variant::ConstantRho => (0usize, 0usize, &families[0]),
            Variant::SemiMarkov | Variant::PeriodConstantRho => {
                let part = spec.partition.as_ref().unwrap();
                (0, part.period_index(ctx.dataset().date(day))?, &families[0])
            }
            Variant::HardStratified => {
                let part = spec.partition.as_ref().unwrap();
                let j = part.period_index(ctx.dataset().date(day))?;
                (j, 0, &families[j])
            }
            Variant::SoftStratified => {
                let j = spec.soft_weights.as_ref().unwrap().degenerate_stratum(day).unwrap();
                (j, 0, &families[j])
            }
        };
        let prior = lasting_law_in_period(family, chain_period, m);
        let sigma = p.sigma[stratum];
        let mut lw = Vec::with_capacity(m + 1);
        for l in 0..=m {
            let mu = ctx.conditional_mean(day, l, p)?;
            lw.push(prior.pmf[l].ln() + emission_logpdf(y, mu, sigma)?);
        }
        let pmf = normalize_log_weights(&lw)?;
        let (mean, var) = summarize_pmf(&pmf);
        return Ok(vec![DayPosterior { day, stratum: None, pmf, mean, var }]);
    }

    // soft-stratified mixed day: joint posterior over the product space of
    // per-stratum lasting times, then marginalize per stratum
    let weights = spec.soft_weights.as_ref().unwrap();
    let row = weights.row(day);
    let n_strata = spec.n_strata();
    let active: Vec<usize> = (0..n_strata).filter(|&j| row[j] > 0.0).collect();
    let var_mix: f64 = active.iter().map(|&j| row[j] * p.sigma[j] * p.sigma[j]).sum();
    let sigma_mix = var_mix.sqrt();
    let priors: Vec<Vec<f64>> =
        active.iter().map(|&j| lasting_law_in_period(&families[j], 0, m).pmf).collect();

    let k = active.len();
    let mut ls = vec![0usize; k];
    let mut joint_lw: Vec<(Vec<usize>, f64)> = Vec::new();
    loop {
        let mut log_prior = 0.0;
        for (i, &l) in ls.iter().enumerate() {
            log_prior += priors[i][l].ln();
        }
        let full_ls: Vec<usize> = (0..n_strata)
            .map(|j| active.iter().position(|&a| a == j).map_or(0, |i| ls[i]))
            .collect();
        let mu = ctx.conditional_mean_mixed(day, &full_ls, p)?;
        joint_lw.push((ls.clone(), log_prior + emission_logpdf(y, mu, sigma_mix)?));

        let mut pos = k;
        loop {
            if pos == 0 {
                // normalize the joint and marginalize each active stratum
                let lw: Vec<f64> = joint_lw.iter().map(|(_, w)| *w).collect();
                let probs = normalize_log_weights(&lw)?;
                let mut out = Vec::with_capacity(k);
                for (i, &j) in active.iter().enumerate() {
                    let mut pmf = vec![0.0; m + 1];
                    for ((tuple, _), pr) in joint_lw.iter().zip(probs.iter()) {
                        pmf[tuple[i]] += pr;
                    }
                    let (mean, var) = summarize_pmf(&pmf);
                    out.push(DayPosterior { day, stratum: Some(j), pmf, mean, var });
                }
                return Ok(out);
            }
            pos -= 1;
            if ls[pos] < m {
                ls[pos] += 1;
                break;
            }
            ls[pos] = 0;
        }
    }
}

/// Posterior laws for every day of the dataset.
pub fn daily_posteriors(ctx: &LikelihoodContext, p: &ParamVector) -> Result<LastingPosterior> {
    let mut rows = Vec::with_capacity(ctx.dataset().len());
    for day in 0..ctx.dataset().len() {
        rows.extend(posterior_day(ctx, day, p)?);
    }
    Ok(LastingPosterior { rows })
}
