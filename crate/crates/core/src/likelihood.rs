//! Gaussian emission density conditional on the lasting time and the marginal
//! log-likelihood with the hidden chain integrated out.
//!
//! For a day `t` with effective truncation `m = min(t, lag_max)` the marginal
//! contribution is `log sum_{l=0}^{m} P(L(t)=l) * N(y_t; mu_t(l), sigma^2)`,
//! evaluated in log space with a streaming log-sum-exp over ascending `l`.
//! The soft-stratified variant sums over the product space of per-stratum
//! lasting times on days where at least two mixture weights are strictly
//! inside (0,1); on degenerate days it collapses to the same single-chain
//! code path the hard-stratified variant uses, so the two agree bitwise.

use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::lasting::{lasting_law_in_period, TransitionFamily};
use crate::model::{ModelSpec, ParamVector, Variant};

const LN_2PI: f64 = 1.8378770664093453_f64;

/// Log density of `Normal(mu, sigma^2)` at `y`.
pub fn emission_logpdf(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let z = (y - mu) / sigma;
    Ok(-0.5 * LN_2PI - sigma.ln() - 0.5 * z * z)
}

#[inline]
fn emission_logpdf_unchecked(y: f64, mu: f64, sigma: f64) -> f64 {
    let z = (y - mu) / sigma;
    -0.5 * LN_2PI - sigma.ln() - 0.5 * z * z
}

/// Streaming log-sum-exp accumulator; terms are pushed in canonical order.
#[derive(Debug, Clone, Copy)]
struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    fn new() -> Self {
        Self { max: f64::NEG_INFINITY, sum: 0.0 }
    }

    #[inline]
    fn push(&mut self, lw: f64) {
        if lw == f64::NEG_INFINITY {
            return;
        }
        if lw > self.max {
            self.sum = self.sum * (self.max - lw).exp() + 1.0;
            self.max = lw;
        } else {
            self.sum += (lw - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// How a day's likelihood contribution is assembled.
#[derive(Debug, Clone, PartialEq, Eq)]
enum DayMode {
    /// One hidden chain governs the day; `stratum` selects coefficients and
    /// the chain family, `chain_period` the period slot inside that family.
    Single { stratum: usize, chain_period: usize },
    /// Soft-stratified day with at least two strictly-mixed weights.
    Mixed { active: Vec<usize> },
}

/// Precomputed per-day structure shared by likelihood, posterior, and fit.
#[derive(Debug, Clone)]
pub struct LikelihoodContext {
    dataset: TimeSeriesDataset,
    spec: ModelSpec,
    modes: Vec<DayMode>,
}

/// Transition families implied by a parameter vector: one per stratum for the
/// stratified variants, a single (possibly period-indexed) family otherwise.
pub fn transition_families(spec: &ModelSpec, p: &ParamVector) -> Vec<TransitionFamily> {
    match spec.variant {
        Variant::ConstantRho => vec![TransitionFamily::Constant { rho: p.lambda[0][0] }],
        Variant::SemiMarkov => {
            let l = &p.lambda[0];
            vec![TransitionFamily::PeriodLogistic {
                intercept: l[0],
                slopes: l[1..].to_vec(),
                partition: spec.partition.clone().expect("semi-markov spec has a partition"),
            }]
        }
        Variant::PeriodConstantRho => {
            let l = &p.lambda[0];
            vec![TransitionFamily::PeriodConstant {
                intercept: l[0],
                offsets: l[1..].to_vec(),
                partition: spec.partition.clone().expect("period-constant spec has a partition"),
            }]
        }
        Variant::HardStratified | Variant::SoftStratified => p
            .lambda
            .iter()
            .map(|l| TransitionFamily::LogisticInTau { intercept: l[0], slope: l[1] })
            .collect(),
    }
}

impl LikelihoodContext {
    pub fn new(dataset: TimeSeriesDataset, spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let t_len = dataset.len();
        let period_of_day: Vec<usize> = match &spec.partition {
            Some(part) => {
                let first = dataset.dates()[0];
                let last = *dataset.dates().last().unwrap();
                if !part.spans(first, last) {
                    return Err(Error::InvalidSpec(format!(
                        "partition [{}, {}] does not span the dataset [{first}, {last}]",
                        part.start(),
                        part.end()
                    )));
                }
                dataset.dates().iter().map(|d| part.period_index(*d)).collect::<Result<_>>()?
            }
            None => vec![0; t_len],
        };
        if let Some(w) = &spec.soft_weights {
            if w.n_days() != t_len {
                return Err(Error::InvalidSpec(format!(
                    "soft weights cover {} days but the dataset has {t_len}",
                    w.n_days()
                )));
            }
        }
        if let Some(xs) = dataset.stratum_exposures() {
            if spec.variant == Variant::SoftStratified && xs.len() != spec.n_strata() {
                return Err(Error::InvalidSpec(format!(
                    "dataset has {} stratum exposures but the model defines {} strata",
                    xs.len(),
                    spec.n_strata()
                )));
            }
        }
        let modes = (0..t_len)
            .map(|t| match spec.variant {
                Variant::ConstantRho => DayMode::Single { stratum: 0, chain_period: 0 },
                Variant::SemiMarkov | Variant::PeriodConstantRho => {
                    DayMode::Single { stratum: 0, chain_period: period_of_day[t] }
                }
                Variant::HardStratified => {
                    DayMode::Single { stratum: period_of_day[t], chain_period: 0 }
                }
                Variant::SoftStratified => {
                    let weights = spec.soft_weights.as_ref().unwrap();
                    match weights.degenerate_stratum(t) {
                        Some(j) => DayMode::Single { stratum: j, chain_period: 0 },
                        None => DayMode::Mixed {
                            active: weights
                                .row(t)
                                .iter()
                                .enumerate()
                                .filter(|(_, w)| **w > 0.0)
                                .map(|(j, _)| j)
                                .collect(),
                        },
                    }
                }
            })
            .collect();
        Ok(Self { dataset, spec, modes })
    }

    pub fn dataset(&self) -> &TimeSeriesDataset {
        &self.dataset
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Effective lag truncation for a day: `min(t, lag_max)`.
    pub fn trunc(&self, day: usize) -> usize {
        day.min(self.spec.lag_max)
    }

    /// The stratum whose coefficients govern a single-chain day.
    fn single_stratum(&self, day: usize) -> Result<usize> {
        match &self.modes[day] {
            DayMode::Single { stratum, .. } => Ok(*stratum),
            DayMode::Mixed { .. } => Err(Error::InvalidSpec(format!(
                "day {day} mixes several strata; use the mixed-mean evaluation"
            ))),
        }
    }

    fn check_day(&self, day: usize) -> Result<()> {
        if day >= self.dataset.len() {
            return Err(Error::DayOutOfRange(day, self.dataset.len()));
        }
        Ok(())
    }

    /// Exposure series feeding stratum `j`: per-stratum when provided (the
    /// soft variant's variant-split signals), pooled otherwise.
    fn exposure_series(&self, stratum: usize) -> &[f64] {
        if self.spec.variant == Variant::SoftStratified {
            self.dataset.exposure_for_stratum(stratum)
        } else {
            self.dataset.exposure()
        }
    }

    #[inline]
    fn lag_sum(&self, day: usize, stratum: usize, l: usize, p: &ParamVector) -> f64 {
        let x = self.exposure_series(stratum);
        let beta = &p.beta_star[stratum];
        let mut acc = 0.0;
        for tau in 0..=l {
            acc += beta[tau] * x[day - tau];
        }
        acc
    }

    #[inline]
    fn covariate_term(&self, day: usize, p: &ParamVector) -> f64 {
        let w = self.dataset.covariates(day);
        let mut acc = 0.0;
        for (wi, ai) in w.iter().zip(p.alpha.iter()) {
            acc += wi * ai;
        }
        acc
    }

    fn mean_single(&self, day: usize, stratum: usize, l: usize, p: &ParamVector) -> f64 {
        p.alpha0[stratum] + self.covariate_term(day, p) + self.lag_sum(day, stratum, l, p)
    }

    /// Conditional mean `mu_t(l)` for a day governed by a single chain.
    pub fn conditional_mean(&self, day: usize, l: usize, p: &ParamVector) -> Result<f64> {
        self.check_day(day)?;
        p.check_shape(&self.spec, self.dataset.n_covariates())?;
        let m = self.trunc(day);
        if l > m {
            return Err(Error::LagOutOfRange(l, m));
        }
        let stratum = self.single_stratum(day)?;
        Ok(self.mean_single(day, stratum, l, p))
    }

    /// Conditional mean for the soft-stratified variant given one lasting
    /// time per stratum: `sum_j pi_j(t) (alpha0_j + S_j(l_j))` plus the
    /// shared covariate term.
    pub fn conditional_mean_mixed(&self, day: usize, ls: &[usize], p: &ParamVector) -> Result<f64> {
        self.check_day(day)?;
        p.check_shape(&self.spec, self.dataset.n_covariates())?;
        let weights = self
            .spec
            .soft_weights
            .as_ref()
            .ok_or_else(|| Error::InvalidSpec("mixed means need the soft-stratified variant".into()))?;
        if ls.len() != weights.n_strata() {
            return Err(Error::DimensionMismatch(format!(
                "got {} lasting times for {} strata",
                ls.len(),
                weights.n_strata()
            )));
        }
        let m = self.trunc(day);
        if let Some(l) = ls.iter().find(|l| **l > m) {
            return Err(Error::LagOutOfRange(*l, m));
        }
        let row = weights.row(day);
        let mut mu = self.covariate_term(day, p);
        for (j, (&pi, &lj)) in row.iter().zip(ls.iter()).enumerate() {
            if pi > 0.0 {
                mu += pi * (p.alpha0[j] + self.lag_sum(day, j, lj, p));
            }
        }
        Ok(mu)
    }

    /// Marginal log-likelihood contribution of one day.
    pub fn marginal_loglik_day(&self, day: usize, p: &ParamVector) -> Result<f64> {
        self.check_day(day)?;
        p.check_shape(&self.spec, self.dataset.n_covariates())?;
        p.check_values(&self.spec)?;
        let families = transition_families(&self.spec, p);
        Ok(self.day_loglik(day, p, &families))
    }

    fn day_loglik(&self, day: usize, p: &ParamVector, families: &[TransitionFamily]) -> f64 {
        match &self.modes[day] {
            DayMode::Single { stratum, chain_period } => {
                self.day_loglik_single(day, *stratum, *chain_period, p, families)
            }
            DayMode::Mixed { active } => self.day_loglik_mixed(day, active, p, families),
        }
    }

    fn day_loglik_single(
        &self,
        day: usize,
        stratum: usize,
        chain_period: usize,
        p: &ParamVector,
        families: &[TransitionFamily],
    ) -> f64 {
        let m = self.trunc(day);
        let y = self.dataset.response()[day];
        let sigma = p.sigma[stratum];
        // pooled variants carry a single (possibly period-indexed) family
        let family = if families.len() == 1 { &families[0] } else { &families[stratum] };
        let x = self.exposure_series(stratum);
        let beta = &p.beta_star[stratum];
        let base = p.alpha0[stratum] + self.covariate_term(day, p);

        let mut lse = LogSumExp::new();
        let mut surv = 1.0_f64;
        let mut mu = base;
        for l in 0..=m {
            mu += beta[l] * x[day - l];
            let mass = if l < m {
                let rho = family.rho_in_period(l, chain_period);
                let pm = surv * rho;
                surv *= 1.0 - rho;
                pm
            } else {
                // truncation point absorbs the remaining tail mass
                surv
            };
            lse.push(mass.ln() + emission_logpdf_unchecked(y, mu, sigma));
        }
        lse.value()
    }

    fn day_loglik_mixed(
        &self,
        day: usize,
        active: &[usize],
        p: &ParamVector,
        families: &[TransitionFamily],
    ) -> f64 {
        let m = self.trunc(day);
        let y = self.dataset.response()[day];
        let row = self.spec.soft_weights.as_ref().unwrap().row(day);

        // emission scale on a mixed day: independent per-stratum noise whose
        // variance scales with the stratum's share of the response
        let var_mix: f64 = active.iter().map(|&j| row[j] * p.sigma[j] * p.sigma[j]).sum();
        let sigma_mix = var_mix.sqrt();

        let base = self.covariate_term(day, p)
            + active.iter().map(|&j| row[j] * p.alpha0[j]).sum::<f64>();

        // weighted lag-sum prefixes and lasting laws per active stratum
        let prefixes: Vec<Vec<f64>> = active
            .iter()
            .map(|&j| {
                let x = self.exposure_series(j);
                let beta = &p.beta_star[j];
                let mut acc = 0.0;
                (0..=m)
                    .map(|tau| {
                        acc += beta[tau] * x[day - tau];
                        row[j] * acc
                    })
                    .collect()
            })
            .collect();
        let laws: Vec<Vec<f64>> = active
            .iter()
            .map(|&j| lasting_law_in_period(&families[j], 0, m).pmf)
            .collect();

        // enumerate the product space in ascending lexicographic order
        let k = active.len();
        let mut ls = vec![0usize; k];
        let mut lse = LogSumExp::new();
        loop {
            let mut mu = base;
            let mut log_prior = 0.0;
            for (i, &l) in ls.iter().enumerate() {
                mu += prefixes[i][l];
                log_prior += laws[i][l].ln();
            }
            lse.push(log_prior + emission_logpdf_unchecked(y, mu, sigma_mix));

            // odometer increment, last stratum fastest
            let mut pos = k;
            loop {
                if pos == 0 {
                    return lse.value();
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

    /// Total marginal log-likelihood: the sum of per-day contributions in
    /// ascending day order (the canonical summation order).
    pub fn total_loglik(&self, p: &ParamVector) -> Result<f64> {
        p.check_shape(&self.spec, self.dataset.n_covariates())?;
        p.check_values(&self.spec)?;
        let families = transition_families(&self.spec, p);
        let mut total = 0.0;
        for day in 0..self.dataset.len() {
            total += self.day_loglik(day, p, &families);
        }
        Ok(total)
    }

    /// Total log-likelihood for a packed coordinate vector, used by the
    /// optimizer. Returns negative infinity for un-unpackable inputs so line
    /// searches can back away.
    pub fn total_loglik_packed(&self, packed: &[f64]) -> f64 {
        match crate::model::unpack_params(packed, &self.spec) {
            Ok(p) => {
                let families = transition_families(&self.spec, &p);
                let mut total = 0.0;
                for day in 0..self.dataset.len() {
                    total += self.day_loglik(day, &p, &families);
                    if total == f64::NEG_INFINITY {
                        return total;
                    }
                }
                total
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }
}
