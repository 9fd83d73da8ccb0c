//! Model variants, parameter vectors, and the flat-packing bijection used by
//! the optimizer.
//!
//! Five variants are supported. They differ in how the transition probability
//! of the hidden chain is parameterized and in whether the regression
//! coefficients are pooled or stratified:
//!
//! * `ConstantRho` — single chain, constant transition probability `rho`.
//! * `SemiMarkov` — single chain, `rho(tau, t) = 1/(1+exp(l0 + l_j * tau))`
//!   with one slope per period and a shared intercept.
//! * `PeriodConstantRho` — single chain, `rho(t) = 1/(1+exp(l0 + off_j))`
//!   constant in `tau`, one offset per non-baseline period.
//! * `HardStratified` — one independent model per period: per-stratum
//!   intercept, lag coefficients, logistic-in-`tau` chain, and noise scale.
//! * `SoftStratified` — per-day mixture of the stratified models with known
//!   mixing weights `pi_j(t)`.

use serde::{Deserialize, Serialize};

use crate::data::PeriodPartition;
use crate::error::{Error, Result};

/// Lower bound for `log sigma` in the packed vector. Keeps the emission
/// density finite when a noiseless dataset drives `sigma` toward zero.
pub const LOG_SIGMA_FLOOR: f64 = -30.0;

/// Tolerance for validating that each soft-weight row sums to one.
pub const SOFT_WEIGHT_TOL: f64 = 1e-10;

/// Which of the model variants is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    ConstantRho,
    SemiMarkov,
    PeriodConstantRho,
    HardStratified,
    SoftStratified,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::ConstantRho => "constant-rho",
            Variant::SemiMarkov => "semi-markov",
            Variant::PeriodConstantRho => "period-constant-rho",
            Variant::HardStratified => "hard-stratified",
            Variant::SoftStratified => "soft-stratified",
        }
    }

    /// Variants whose regression coefficients and chains are per-stratum.
    pub fn is_stratified(&self) -> bool {
        matches!(self, Variant::HardStratified | Variant::SoftStratified)
    }

    /// Variants that require a period partition.
    pub fn needs_partition(&self) -> bool {
        !matches!(self, Variant::ConstantRho)
    }
}

/// Per-day mixing proportions for the soft-stratified variant; row `t` holds
/// `pi_j(t)` for each stratum `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftWeights {
    rows: Vec<Vec<f64>>,
}

impl SoftWeights {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidSpec("soft weights must cover at least one day".into()));
        }
        let j = rows[0].len();
        if j < 2 {
            return Err(Error::InvalidSpec("soft weights need at least two strata".into()));
        }
        for (t, row) in rows.iter().enumerate() {
            if row.len() != j {
                return Err(Error::InvalidSpec(format!(
                    "soft-weight row {t} has {} entries, expected {j}",
                    row.len()
                )));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "soft-weight row {t} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SOFT_WEIGHT_TOL {
                return Err(Error::InvalidSpec(format!(
                    "soft-weight row {t} sums to {sum}, expected 1 within {SOFT_WEIGHT_TOL:e}"
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn n_days(&self) -> usize {
        self.rows.len()
    }

    pub fn n_strata(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, day: usize) -> &[f64] {
        &self.rows[day]
    }

    /// Strata whose weight is exactly one/zero collapse the day to a single
    /// chain. Returns `Some(j)` when day `t` is degenerate at stratum `j`.
    pub fn degenerate_stratum(&self, day: usize) -> Option<usize> {
        let row = &self.rows[day];
        let mut active = None;
        for (j, &w) in row.iter().enumerate() {
            if w == 1.0 {
                active = Some(j);
            } else if w != 0.0 {
                return None;
            }
        }
        active
    }
}

/// Full specification of one model fit: variant, lag truncation, partition,
/// coefficient constraint, and soft weights when applicable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub lag_max: usize,
    pub partition: Option<PeriodPartition>,
    pub beta_nonneg: bool,
    pub soft_weights: Option<SoftWeights>,
}

impl ModelSpec {
    /// Build a spec. Soft weights are attached afterwards with
    /// [`ModelSpec::with_soft_weights`]; their presence is enforced when a
    /// likelihood context is built.
    pub fn new(variant: Variant, lag_max: usize, partition: Option<PeriodPartition>) -> Result<Self> {
        let spec = Self { variant, lag_max, partition, beta_nonneg: true, soft_weights: None };
        spec.validate_inner(true)?;
        Ok(spec)
    }

    pub fn with_soft_weights(mut self, weights: SoftWeights) -> Result<Self> {
        self.soft_weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn with_beta_nonneg(mut self, nonneg: bool) -> Self {
        self.beta_nonneg = nonneg;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_inner(false)
    }

    fn validate_inner(&self, allow_pending_weights: bool) -> Result<()> {
        if self.lag_max < 1 {
            return Err(Error::InvalidSpec("lag_max must be at least 1".into()));
        }
        if self.variant.needs_partition() && self.partition.is_none() {
            return Err(Error::InvalidSpec(format!(
                "variant {} requires a period partition",
                self.variant.name()
            )));
        }
        match (self.variant, &self.soft_weights) {
            (Variant::SoftStratified, None) => {
                if !allow_pending_weights {
                    return Err(Error::InvalidSpec(
                        "soft-stratified variant requires soft weights".into(),
                    ));
                }
            }
            (Variant::SoftStratified, Some(w)) => {
                let j = self.n_strata();
                if w.n_strata() != j {
                    return Err(Error::InvalidSpec(format!(
                        "soft weights have {} strata but the partition defines {j}",
                        w.n_strata()
                    )));
                }
            }
            (_, Some(_)) => {
                return Err(Error::InvalidSpec(
                    "soft weights are only meaningful for the soft-stratified variant".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    /// Number of periods `J` in the partition (1 when absent).
    pub fn n_periods(&self) -> usize {
        self.partition.as_ref().map_or(1, |p| p.n_periods())
    }

    /// Number of coefficient strata: `J` for stratified variants, else 1.
    pub fn n_strata(&self) -> usize {
        if self.variant.is_stratified() {
            self.n_periods()
        } else {
            1
        }
    }

    /// Number of transition parameters per stratum.
    pub fn lambda_len(&self) -> usize {
        match self.variant {
            Variant::ConstantRho => 1,
            // shared intercept plus one slope per period
            Variant::SemiMarkov => 1 + self.n_periods(),
            // intercept plus one offset per non-baseline period
            Variant::PeriodConstantRho => self.n_periods(),
            // per-stratum logistic intercept and slope
            Variant::HardStratified | Variant::SoftStratified => 2,
        }
    }

    /// Label used for stratum `s` in outputs ("pooled" for single-stratum variants).
    pub fn stratum_label(&self, s: usize) -> String {
        if self.variant.is_stratified() {
            self.partition.as_ref().map_or_else(|| format!("s{s}"), |p| p.label(s).to_string())
        } else {
            "pooled".to_string()
        }
    }
}

/// Model parameters on their natural scales. `lambda[s]` holds the transition
/// parameters of stratum `s` (`[rho]` for `ConstantRho`); `sigma[s]` the
/// emission standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    /// Intercepts: one entry for pooled variants, one per stratum otherwise.
    pub alpha0: Vec<f64>,
    /// Covariate coefficients (empty when the dataset carries no covariates).
    pub alpha: Vec<f64>,
    /// Lag coefficients per stratum, each of length `lag_max + 1`.
    pub beta_star: Vec<Vec<f64>>,
    /// Transition parameters per stratum.
    pub lambda: Vec<Vec<f64>>,
    /// Emission standard deviation per stratum.
    pub sigma: Vec<f64>,
}

impl ParamVector {
    /// Validate shape against a spec and covariate count.
    pub fn check_shape(&self, spec: &ModelSpec, n_covariates: usize) -> Result<()> {
        let s = spec.n_strata();
        if self.alpha0.len() != s {
            return Err(Error::DimensionMismatch(format!(
                "alpha0 has {} entries, expected {s}",
                self.alpha0.len()
            )));
        }
        if self.alpha.len() != n_covariates {
            return Err(Error::DimensionMismatch(format!(
                "alpha has {} entries, expected {n_covariates}",
                self.alpha.len()
            )));
        }
        if self.beta_star.len() != s {
            return Err(Error::DimensionMismatch(format!(
                "beta_star has {} strata, expected {s}",
                self.beta_star.len()
            )));
        }
        for (j, b) in self.beta_star.iter().enumerate() {
            if b.len() != spec.lag_max + 1 {
                return Err(Error::DimensionMismatch(format!(
                    "beta_star stratum {j} has {} lags, expected {}",
                    b.len(),
                    spec.lag_max + 1
                )));
            }
        }
        if self.lambda.len() != s {
            return Err(Error::DimensionMismatch(format!(
                "lambda has {} strata, expected {s}",
                self.lambda.len()
            )));
        }
        for (j, l) in self.lambda.iter().enumerate() {
            if l.len() != spec.lambda_len() {
                return Err(Error::DimensionMismatch(format!(
                    "lambda stratum {j} has {} entries, expected {}",
                    l.len(),
                    spec.lambda_len()
                )));
            }
        }
        if self.sigma.len() != s {
            return Err(Error::DimensionMismatch(format!(
                "sigma has {} entries, expected {s}",
                self.sigma.len()
            )));
        }
        Ok(())
    }

    /// Validate values: positive sigma, rho in (0,1), finite entries, and the
    /// non-negativity constraint when the spec demands it.
    pub fn check_values(&self, spec: &ModelSpec) -> Result<()> {
        for &s in &self.sigma {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidParameter(format!("sigma must be positive and finite, got {s}")));
            }
        }
        if spec.variant == Variant::ConstantRho {
            let rho = self.lambda[0][0];
            if !(rho > 0.0 && rho < 1.0) {
                return Err(Error::InvalidParameter(format!("rho must lie in (0,1), got {rho}")));
            }
        }
        if spec.beta_nonneg {
            for b in &self.beta_star {
                if let Some(bad) = b.iter().find(|v| **v < 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "beta_star must be non-negative under the constraint, got {bad}"
                    )));
                }
            }
        }
        let all = self
            .alpha0
            .iter()
            .chain(self.alpha.iter())
            .chain(self.beta_star.iter().flatten())
            .chain(self.lambda.iter().flatten());
        for v in all {
            if !v.is_finite() {
                return Err(Error::InvalidParameter("non-finite parameter entry".into()));
            }
        }
        Ok(())
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Packed length for a spec with `n_covariates` covariates.
pub fn packed_len(spec: &ModelSpec, n_covariates: usize) -> usize {
    let s = spec.n_strata();
    s + n_covariates + s * (spec.lag_max + 1) + s * spec.lambda_len() + s
}

/// Flatten a parameter vector into the canonical packed order:
/// intercepts, covariate coefficients, per-stratum lag coefficients,
/// per-stratum transition parameters, per-stratum `log sigma`. `rho` for the
/// constant-rho variant is packed as `logit(rho)`; lag coefficients are packed
/// unchanged (their constraint is handled by optimizer bounds).
pub fn pack_params(p: &ParamVector, spec: &ModelSpec) -> Result<Vec<f64>> {
    p.check_shape(spec, p.alpha.len())?;
    let mut out = Vec::with_capacity(packed_len(spec, p.alpha.len()));
    out.extend_from_slice(&p.alpha0);
    out.extend_from_slice(&p.alpha);
    for b in &p.beta_star {
        out.extend_from_slice(b);
    }
    for l in &p.lambda {
        if spec.variant == Variant::ConstantRho {
            out.push(logit(l[0]));
        } else {
            out.extend_from_slice(l);
        }
    }
    for &s in &p.sigma {
        if !(s > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {s}")));
        }
        out.push(s.ln());
    }
    Ok(out)
}

/// Inverse of [`pack_params`]. The covariate count is inferred from the
/// packed length; a mismatch with the spec's fixed blocks is an error.
pub fn unpack_params(packed: &[f64], spec: &ModelSpec) -> Result<ParamVector> {
    let s = spec.n_strata();
    let fixed = s + s * (spec.lag_max + 1) + s * spec.lambda_len() + s;
    let n_cov = packed
        .len()
        .checked_sub(fixed)
        .ok_or_else(|| Error::DimensionMismatch(format!(
            "packed vector has {} entries, fewer than the {fixed} required",
            packed.len()
        )))?;
    let mut it = packed.iter().copied();
    let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
    let alpha0 = take(s);
    let alpha = take(n_cov);
    let beta_star: Vec<Vec<f64>> = (0..s).map(|_| take(spec.lag_max + 1)).collect();
    let lambda: Vec<Vec<f64>> = (0..s)
        .map(|_| {
            let raw = take(spec.lambda_len());
            if spec.variant == Variant::ConstantRho {
                vec![sigmoid(raw[0])]
            } else {
                raw
            }
        })
        .collect();
    let sigma: Vec<f64> = take(s).into_iter().map(f64::exp).collect();
    Ok(ParamVector { alpha0, alpha, beta_star, lambda, sigma })
}

/// Canonical names of packed coordinates, used in reports and for addressing
/// Wald-test contrasts. `cov_names` supplies covariate labels; when shorter
/// than the covariate count the remainder are named by index.
pub fn packed_names(spec: &ModelSpec, n_covariates: usize, cov_names: &[String]) -> Vec<String> {
    let s = spec.n_strata();
    let stratified = spec.variant.is_stratified();
    let mut names = Vec::with_capacity(packed_len(spec, n_covariates));
    for j in 0..s {
        if stratified {
            names.push(format!("alpha0({})", spec.stratum_label(j)));
        } else {
            names.push("alpha0".to_string());
        }
    }
    for c in 0..n_covariates {
        match cov_names.get(c) {
            Some(n) => names.push(format!("alpha({n})")),
            None => names.push(format!("alpha({c})")),
        }
    }
    for j in 0..s {
        for tau in 0..=spec.lag_max {
            if stratified {
                names.push(format!("beta({})[{tau}]", spec.stratum_label(j)));
            } else {
                names.push(format!("beta[{tau}]"));
            }
        }
    }
    for j in 0..s {
        match spec.variant {
            Variant::ConstantRho => names.push("rho_logit".to_string()),
            Variant::SemiMarkov => {
                names.push("lambda0".to_string());
                let part = spec.partition.as_ref().expect("semi-markov spec has a partition");
                for p in 0..spec.n_periods() {
                    names.push(format!("lambda({})", part.label(p)));
                }
            }
            Variant::PeriodConstantRho => {
                names.push("lambda0".to_string());
                let part = spec.partition.as_ref().expect("period-constant spec has a partition");
                for p in 1..spec.n_periods() {
                    names.push(format!("lambda({})", part.label(p)));
                }
            }
            Variant::HardStratified | Variant::SoftStratified => {
                names.push(format!("lambda0({})", spec.stratum_label(j)));
                names.push(format!("lambda1({})", spec.stratum_label(j)));
            }
        }
    }
    for j in 0..s {
        if stratified {
            names.push(format!("log_sigma({})", spec.stratum_label(j)));
        } else {
            names.push("log_sigma".to_string());
        }
    }
    names
}

/// Box constraints per packed coordinate: lag coefficients get a lower bound
/// of zero under the non-negativity constraint, `log sigma` is floored at
/// [`LOG_SIGMA_FLOOR`], everything else is unbounded.
pub fn packed_bounds(spec: &ModelSpec, n_covariates: usize) -> Vec<(f64, f64)> {
    let s = spec.n_strata();
    let mut bounds = Vec::with_capacity(packed_len(spec, n_covariates));
    bounds.extend(std::iter::repeat((f64::NEG_INFINITY, f64::INFINITY)).take(s + n_covariates));
    let beta_lower = if spec.beta_nonneg { 0.0 } else { f64::NEG_INFINITY };
    bounds.extend(std::iter::repeat((beta_lower, f64::INFINITY)).take(s * (spec.lag_max + 1)));
    bounds.extend(std::iter::repeat((f64::NEG_INFINITY, f64::INFINITY)).take(s * spec.lambda_len()));
    bounds.extend(std::iter::repeat((LOG_SIGMA_FLOOR, f64::INFINITY)).take(s));
    bounds
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn two_period_partition() -> PeriodPartition {
        PeriodPartition::new(
            vec![d("2021-01-01"), d("2021-02-01"), d("2021-03-01")],
            vec!["early".into(), "late".into()],
        )
        .unwrap()
    }

    fn model3_spec(lag_max: usize) -> ModelSpec {
        ModelSpec::new(Variant::ConstantRho, lag_max, None).unwrap()
    }

    #[test]
    fn pack_model3_neutral_transforms() {
        // logit(0.5) = 0 and log(1) = 0, so the tail of the packed vector is zero.
        let spec = model3_spec(1);
        let p = ParamVector {
            alpha0: vec![1.0],
            alpha: vec![],
            beta_star: vec![vec![2.0, 3.0]],
            lambda: vec![vec![0.5]],
            sigma: vec![1.0],
        };
        let packed = pack_params(&p, &spec).unwrap();
        assert_eq!(packed, vec![1.0, 2.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn pack_rejects_missing_stratum_coefficients() {
        let spec = ModelSpec::new(Variant::HardStratified, 2, Some(two_period_partition())).unwrap();
        let p = ParamVector {
            alpha0: vec![1.0, 2.0],
            alpha: vec![],
            // stratum 2 lag coefficients missing
            beta_star: vec![vec![0.1, 0.2, 0.3]],
            lambda: vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            sigma: vec![1.0, 1.0],
        };
        assert!(matches!(pack_params(&p, &spec), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn soft_weights_reject_bad_row_sum() {
        let rows = vec![vec![0.5, 0.5], vec![0.7, 0.300001]];
        assert!(matches!(SoftWeights::new(rows), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn soft_weights_degenerate_detection() {
        let w = SoftWeights::new(vec![vec![1.0, 0.0], vec![0.4, 0.6], vec![0.0, 1.0]]).unwrap();
        assert_eq!(w.degenerate_stratum(0), Some(0));
        assert_eq!(w.degenerate_stratum(1), None);
        assert_eq!(w.degenerate_stratum(2), Some(1));
    }

    #[test]
    fn packed_names_cover_all_coordinates() {
        let spec = ModelSpec::new(Variant::SemiMarkov, 3, Some(two_period_partition())).unwrap();
        let names = packed_names(&spec, 1, &["late_indicator".into()]);
        assert_eq!(names.len(), packed_len(&spec, 1));
        assert!(names.contains(&"lambda(early)".to_string()));
        assert!(names.contains(&"alpha(late_indicator)".to_string()));
    }

    fn variant_strategy() -> impl Strategy<Value = ModelSpec> {
        (0usize..5, 1usize..6).prop_map(|(v, lag_max)| {
            let part = Some(two_period_partition());
            match v {
                0 => ModelSpec::new(Variant::ConstantRho, lag_max, None).unwrap(),
                1 => ModelSpec::new(Variant::SemiMarkov, lag_max, part).unwrap(),
                2 => ModelSpec::new(Variant::PeriodConstantRho, lag_max, part).unwrap(),
                3 => ModelSpec::new(Variant::HardStratified, lag_max, part).unwrap(),
                _ => ModelSpec::new(Variant::SoftStratified, lag_max, part)
                    .unwrap()
                    .with_soft_weights(SoftWeights::new(vec![vec![0.3, 0.7]; 4]).unwrap())
                    .unwrap(),
            }
        })
    }

    proptest! {
        // pack/unpack is a bijection on valid parameter vectors for every variant
        #[test]
        fn pack_unpack_roundtrip(spec in variant_strategy(), seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s = spec.n_strata();
            let n_cov = (seed % 3) as usize;
            let p = ParamVector {
                alpha0: (0..s).map(|_| rng.gen_range(-5.0..5.0)).collect(),
                alpha: (0..n_cov).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                beta_star: (0..s)
                    .map(|_| (0..=spec.lag_max).map(|_| rng.gen_range(0.0..3.0)).collect())
                    .collect(),
                lambda: (0..s)
                    .map(|_| {
                        if spec.variant == Variant::ConstantRho {
                            vec![rng.gen_range(0.05..0.95)]
                        } else {
                            (0..spec.lambda_len()).map(|_| rng.gen_range(-3.0..3.0)).collect()
                        }
                    })
                    .collect(),
                sigma: (0..s).map(|_| rng.gen_range(0.1..10.0)).collect(),
            };
            let packed = pack_params(&p, &spec).unwrap();
            prop_assert_eq!(packed.len(), packed_len(&spec, n_cov));
            let back = unpack_params(&packed, &spec).unwrap();
            prop_assert_eq!(back.alpha0.len(), p.alpha0.len());
            for (a, b) in pack_params(&back, &spec).unwrap().iter().zip(packed.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
            // natural-scale round trip within floating tolerance
            for (a, b) in back.sigma.iter().zip(p.sigma.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs());
            }
            if spec.variant == Variant::ConstantRho {
                prop_assert!((back.lambda[0][0] - p.lambda[0][0]).abs() <= 1e-12);
            }
        }
    }
}
