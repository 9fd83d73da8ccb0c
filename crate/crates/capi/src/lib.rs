//! C ABI for the distributed-lag model with a random lasting time.
//!
//! The API follows the usual opaque-handle pattern: constructors return a
//! status code and write the handle through an out-pointer; every handle has
//! a matching `_free` function; data is exchanged through caller-owned
//! buffers. `mmdlag_last_error_message` returns a thread-local description of
//! the most recent failure.
//!
//! # Safety
//!
//! All `extern "C"` functions validate pointers for null, but cannot validate
//! lengths: callers must pass buffers at least as large as stated. Handles
//! must not be used after being freed and must not be shared across threads
//! without external synchronization.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CString};
use std::ptr;

use mmdlag::baselines::{almon_dlm, monotone_dlm, ols_dlm};
use mmdlag::data::{PeriodPartition, TimeSeriesDataset};
use mmdlag::error::Error;
use mmdlag::estimation::{fit, FitOptions, FitResult};
use mmdlag::lasting::lasting_law_in_period;
use mmdlag::likelihood::{transition_families, LikelihoodContext};
use mmdlag::model::{unpack_params, ModelSpec, SoftWeights, Variant};
use mmdlag::posterior::daily_posteriors;
use mmdlag::preprocess::period_indicator_covariates;
use mmdlag::simulation::{simulate, SimulationConfig};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmdlagStatus {
    MmdlagOk = 0,
    MmdlagErrNullPointer = 1,
    MmdlagErrInvalidArgument = 2,
    MmdlagErrInvalidData = 3,
    MmdlagErrNumerical = 4,
    MmdlagErrIo = 5,
}

/// Model variants, mirroring the Rust enum.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmdlagVariant {
    MmdlagConstantRho = 0,
    MmdlagSemiMarkov = 1,
    MmdlagPeriodConstantRho = 2,
    MmdlagHardStratified = 3,
    MmdlagSoftStratified = 4,
}

impl From<MmdlagVariant> for Variant {
    fn from(v: MmdlagVariant) -> Variant {
        match v {
            MmdlagVariant::MmdlagConstantRho => Variant::ConstantRho,
            MmdlagVariant::MmdlagSemiMarkov => Variant::SemiMarkov,
            MmdlagVariant::MmdlagPeriodConstantRho => Variant::PeriodConstantRho,
            MmdlagVariant::MmdlagHardStratified => Variant::HardStratified,
            MmdlagVariant::MmdlagSoftStratified => Variant::SoftStratified,
        }
    }
}

/// Baseline method selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmdlagBaseline {
    MmdlagBaselineOls = 0,
    MmdlagBaselineAlmon = 1,
    MmdlagBaselineMonotone = 2,
}

/// Optimizer options; zero/negative fields fall back to defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MmdlagFitOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub n_starts: usize,
    pub seed: u64,
}

/// Opaque dataset handle.
pub struct MmdlagDataset {
    inner: TimeSeriesDataset,
}

/// Opaque model-spec handle.
pub struct MmdlagSpec {
    inner: ModelSpec,
}

/// Opaque fit handle: the fitted result plus the spec it was fitted under.
pub struct MmdlagFit {
    result: FitResult,
    spec: ModelSpec,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> MmdlagStatus {
    match err {
        Error::Numerical(_) | Error::Optimizer(_) | Error::RankDeficient { .. } | Error::SingularContrast => {
            MmdlagStatus::MmdlagErrNumerical
        }
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => MmdlagStatus::MmdlagErrIo,
        Error::InvalidDataset(_) | Error::DateOutOfSpan(_) => MmdlagStatus::MmdlagErrInvalidData,
        _ => MmdlagStatus::MmdlagErrInvalidArgument,
    }
}

fn fail(err: Error) -> MmdlagStatus {
    let code = status_of(&err);
    set_error(&err.to_string());
    code
}

fn null_fail(what: &str) -> MmdlagStatus {
    set_error(&format!("null pointer: {what}"));
    MmdlagStatus::MmdlagErrNullPointer
}

const EPOCH_OFFSET_DAYS: i64 = 719_163; // days from 0001-01-01 to 1970-01-01

fn date_from_epoch_days(days: i64) -> Option<chrono::NaiveDate> {
    chrono::NaiveDate::from_num_days_from_ce_opt((days + EPOCH_OFFSET_DAYS + 1) as i32)
}

/// Version string of the library (static storage).
#[no_mangle]
pub extern "C" fn mmdlag_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent error on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mmdlag_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Build a dataset from parallel arrays: days since 1970-01-01 (must be
/// consecutive), the response, and the exposure.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_dataset_new(
    epoch_days: *const i64,
    y: *const f64,
    x: *const f64,
    n: usize,
    out: *mut *mut MmdlagDataset,
) -> MmdlagStatus {
    if out.is_null() {
        return null_fail("out");
    }
    if epoch_days.is_null() || y.is_null() || x.is_null() {
        return null_fail("epoch_days/y/x");
    }
    let days = std::slice::from_raw_parts(epoch_days, n);
    let y = std::slice::from_raw_parts(y, n).to_vec();
    let x = std::slice::from_raw_parts(x, n).to_vec();
    let mut dates = Vec::with_capacity(n);
    for &d in days {
        match date_from_epoch_days(d) {
            Some(date) => dates.push(date),
            None => {
                set_error(&format!("epoch day {d} out of range"));
                return MmdlagStatus::MmdlagErrInvalidArgument;
            }
        }
    }
    match TimeSeriesDataset::new(dates, y, x) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(MmdlagDataset { inner }));
            MmdlagStatus::MmdlagOk
        }
        Err(e) => fail(e),
    }
}

/// Attach per-stratum exposure series (row-major `n_strata x n`), used by the
/// soft-stratified variant.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_dataset_set_stratum_exposures(
    dataset: *mut MmdlagDataset,
    series: *const f64,
    n_strata: usize,
    n: usize,
) -> MmdlagStatus {
    let Some(handle) = dataset.as_mut() else {
        return null_fail("dataset");
    };
    if series.is_null() {
        return null_fail("series");
    }
    if n != handle.inner.len() {
        set_error(&format!("stratum exposures have {n} days, dataset has {}", handle.inner.len()));
        return MmdlagStatus::MmdlagErrInvalidArgument;
    }
    let flat = std::slice::from_raw_parts(series, n_strata * n);
    let strata: Vec<Vec<f64>> = (0..n_strata).map(|j| flat[j * n..(j + 1) * n].to_vec()).collect();
    let d = &handle.inner;
    match TimeSeriesDataset::with_parts(
        d.dates().to_vec(),
        d.response().to_vec(),
        d.exposure().to_vec(),
        Some(strata),
        (0..d.len()).map(|t| d.covariates(t).to_vec()).filter(|_| d.n_covariates() > 0).collect(),
        d.covariate_names().to_vec(),
        d.imputed_mask().to_vec(),
    ) {
        Ok(inner) => {
            handle.inner = inner;
            MmdlagStatus::MmdlagOk
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn mmdlag_dataset_free(dataset: *mut MmdlagDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Create a model spec. Variants other than constant-rho need a partition
/// attached before use.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_spec_new(
    variant: MmdlagVariant,
    lag_max: usize,
    out: *mut *mut MmdlagSpec,
) -> MmdlagStatus {
    if out.is_null() {
        return null_fail("out");
    }
    if lag_max < 1 {
        set_error("lag_max must be at least 1");
        return MmdlagStatus::MmdlagErrInvalidArgument;
    }
    let inner = ModelSpec {
        variant: variant.into(),
        lag_max,
        partition: None,
        beta_nonneg: true,
        soft_weights: None,
    };
    *out = Box::into_raw(Box::new(MmdlagSpec { inner }));
    MmdlagStatus::MmdlagOk
}

/// Attach a period partition given its cutpoints (days since 1970-01-01,
/// strictly increasing, `n_cutpoints = n_periods + 1`). Periods are labeled
/// `p0, p1, ...` in outputs.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_spec_set_partition(
    spec: *mut MmdlagSpec,
    cutpoint_epoch_days: *const i64,
    n_cutpoints: usize,
) -> MmdlagStatus {
    let Some(handle) = spec.as_mut() else {
        return null_fail("spec");
    };
    if cutpoint_epoch_days.is_null() {
        return null_fail("cutpoint_epoch_days");
    }
    let days = std::slice::from_raw_parts(cutpoint_epoch_days, n_cutpoints);
    let mut cutpoints = Vec::with_capacity(n_cutpoints);
    for &d in days {
        match date_from_epoch_days(d) {
            Some(date) => cutpoints.push(date),
            None => {
                set_error(&format!("epoch day {d} out of range"));
                return MmdlagStatus::MmdlagErrInvalidArgument;
            }
        }
    }
    let labels = (0..n_cutpoints.saturating_sub(1)).map(|j| format!("p{j}")).collect();
    match PeriodPartition::new(cutpoints, labels) {
        Ok(part) => {
            handle.inner.partition = Some(part);
            MmdlagStatus::MmdlagOk
        }
        Err(e) => fail(e),
    }
}

/// Attach soft mixing weights (row-major `n_days x n_strata`).
#[no_mangle]
pub unsafe extern "C" fn mmdlag_spec_set_soft_weights(
    spec: *mut MmdlagSpec,
    weights: *const f64,
    n_days: usize,
    n_strata: usize,
) -> MmdlagStatus {
    let Some(handle) = spec.as_mut() else {
        return null_fail("spec");
    };
    if weights.is_null() {
        return null_fail("weights");
    }
    let flat = std::slice::from_raw_parts(weights, n_days * n_strata);
    let rows: Vec<Vec<f64>> =
        (0..n_days).map(|t| flat[t * n_strata..(t + 1) * n_strata].to_vec()).collect();
    match SoftWeights::new(rows) {
        Ok(w) => {
            handle.inner.soft_weights = Some(w);
            MmdlagStatus::MmdlagOk
        }
        Err(e) => fail(e),
    }
}

/// Enable or disable the non-negativity constraint on the lag coefficients.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_spec_set_beta_nonneg(
    spec: *mut MmdlagSpec,
    nonneg: c_int,
) -> MmdlagStatus {
    let Some(handle) = spec.as_mut() else {
        return null_fail("spec");
    };
    handle.inner.beta_nonneg = nonneg != 0;
    MmdlagStatus::MmdlagOk
}

#[no_mangle]
pub unsafe extern "C" fn mmdlag_spec_free(spec: *mut MmdlagSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Dataset with the period-indicator covariates the pooled period-indexed
/// variants expect; other variants leave the dataset untouched.
fn with_auto_covariates(dataset: &TimeSeriesDataset, spec: &ModelSpec) -> Result<TimeSeriesDataset, Error> {
    match spec.variant {
        Variant::SemiMarkov | Variant::PeriodConstantRho if dataset.n_covariates() == 0 => {
            let part = spec
                .partition
                .as_ref()
                .ok_or_else(|| Error::InvalidSpec("variant requires a partition".into()))?;
            let (w, names) = period_indicator_covariates(part, dataset.dates())?;
            TimeSeriesDataset::with_parts(
                dataset.dates().to_vec(),
                dataset.response().to_vec(),
                dataset.exposure().to_vec(),
                dataset.stratum_exposures().map(|s| s.to_vec()),
                w,
                names,
                dataset.imputed_mask().to_vec(),
            )
        }
        _ => Ok(dataset.clone()),
    }
}

/// Fit the model by marginal maximum likelihood.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_fit_run(
    dataset: *const MmdlagDataset,
    spec: *const MmdlagSpec,
    options: *const MmdlagFitOptions,
    out: *mut *mut MmdlagFit,
) -> MmdlagStatus {
    if out.is_null() {
        return null_fail("out");
    }
    let Some(ds) = dataset.as_ref() else {
        return null_fail("dataset");
    };
    let Some(sp) = spec.as_ref() else {
        return null_fail("spec");
    };
    let mut fit_options = FitOptions::default();
    if let Some(o) = options.as_ref() {
        if o.tol > 0.0 {
            fit_options.tol = o.tol;
        }
        if o.max_iter > 0 {
            fit_options.max_iter = o.max_iter;
        }
        if o.n_starts > 0 {
            fit_options.n_starts = o.n_starts;
        }
        fit_options.seed = o.seed;
    }
    let run = with_auto_covariates(&ds.inner, &sp.inner)
        .and_then(|data| LikelihoodContext::new(data, sp.inner.clone()))
        .and_then(|ctx| fit(&ctx, None, &fit_options));
    match run {
        Ok(result) => {
            *out = Box::into_raw(Box::new(MmdlagFit { result, spec: sp.inner.clone() }));
            MmdlagStatus::MmdlagOk
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn mmdlag_fit_free(fit: *mut MmdlagFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

#[no_mangle]
pub unsafe extern "C" fn mmdlag_fit_loglik(fit: *const MmdlagFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.result.loglik)
}

#[no_mangle]
pub unsafe extern "C" fn mmdlag_fit_aic(fit: *const MmdlagFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.result.aic)
}

/// 1 when the optimizer converged, 0 when it stopped early, -1 on null.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_fit_converged(fit: *const MmdlagFit) -> c_int {
    fit.as_ref().map_or(-1, |f| c_int::from(f.result.converged))
}

/// Number of packed coordinates.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_fit_param_count(fit: *const MmdlagFit) -> usize {
    fit.as_ref().map_or(0, |f| f.result.packed.len())
}

/// Copy the packed estimates into `buf` (length `len >= param_count`).
#[no_mangle]
pub unsafe extern "C" fn mmdlag_fit_params(
    fit: *const MmdlagFit,
    buf: *mut f64,
    len: usize,
) -> MmdlagStatus {
    let Some(f) = fit.as_ref() else {
        return null_fail("fit");
    };
    if buf.is_null() {
        return null_fail("buf");
    }
    if len < f.result.packed.len() {
        set_error(&format!("buffer of {len} too small for {} parameters", f.result.packed.len()));
        return MmdlagStatus::MmdlagErrInvalidArgument;
    }
    std::slice::from_raw_parts_mut(buf, f.result.packed.len()).copy_from_slice(&f.result.packed);
    MmdlagStatus::MmdlagOk
}

/// Copy the packed standard errors into `buf`; unavailable entries are NaN.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_fit_standard_errors(
    fit: *const MmdlagFit,
    buf: *mut f64,
    len: usize,
) -> MmdlagStatus {
    let Some(f) = fit.as_ref() else {
        return null_fail("fit");
    };
    if buf.is_null() {
        return null_fail("buf");
    }
    if len < f.result.se.len() {
        set_error(&format!("buffer of {len} too small for {} entries", f.result.se.len()));
        return MmdlagStatus::MmdlagErrInvalidArgument;
    }
    std::slice::from_raw_parts_mut(buf, f.result.se.len()).copy_from_slice(&f.result.se);
    MmdlagStatus::MmdlagOk
}

/// Copy the NUL-terminated name of packed coordinate `index` into `buf`.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_fit_param_name(
    fit: *const MmdlagFit,
    index: usize,
    buf: *mut c_char,
    len: usize,
) -> MmdlagStatus {
    let Some(f) = fit.as_ref() else {
        return null_fail("fit");
    };
    if buf.is_null() {
        return null_fail("buf");
    }
    let Some(name) = f.result.packed_names.get(index) else {
        set_error(&format!("parameter index {index} out of range"));
        return MmdlagStatus::MmdlagErrInvalidArgument;
    };
    let bytes = name.as_bytes();
    if len < bytes.len() + 1 {
        set_error(&format!("buffer of {len} too small for name of {} bytes", bytes.len() + 1));
        return MmdlagStatus::MmdlagErrInvalidArgument;
    }
    ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
    *buf.add(bytes.len()) = 0;
    MmdlagStatus::MmdlagOk
}

/// Lasting-time pmf of group `group` (period for pooled period-indexed
/// variants, stratum for stratified ones) over `{0..=lag_max}`.
/// `buf` must hold `lag_max + 1` entries.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_fit_lasting_pmf(
    fit: *const MmdlagFit,
    group: usize,
    buf: *mut f64,
    len: usize,
) -> MmdlagStatus {
    let Some(f) = fit.as_ref() else {
        return null_fail("fit");
    };
    if buf.is_null() {
        return null_fail("buf");
    }
    let need = f.spec.lag_max + 1;
    if len < need {
        set_error(&format!("buffer of {len} too small for {need} pmf entries"));
        return MmdlagStatus::MmdlagErrInvalidArgument;
    }
    let families = transition_families(&f.spec, &f.result.theta_hat);
    let (fam_idx, period) = if f.spec.variant.is_stratified() {
        if group >= families.len() {
            set_error(&format!("group {group} out of range ({} strata)", families.len()));
            return MmdlagStatus::MmdlagErrInvalidArgument;
        }
        (group, 0)
    } else {
        if group >= f.spec.n_periods() {
            set_error(&format!("group {group} out of range ({} periods)", f.spec.n_periods()));
            return MmdlagStatus::MmdlagErrInvalidArgument;
        }
        (0, group)
    };
    let law = lasting_law_in_period(&families[fam_idx], period, f.spec.lag_max);
    std::slice::from_raw_parts_mut(buf, need).copy_from_slice(&law.pmf);
    MmdlagStatus::MmdlagOk
}

/// Per-day posterior mean and variance of the lasting time. `means` and
/// `vars` must hold one entry per dataset day. Soft-stratified specs whose
/// weights mix two strata on some day are rejected (the posterior is then
/// per-stratum; use the CLI for the long-format table).
#[no_mangle]
pub unsafe extern "C" fn mmdlag_posterior_mean_var(
    dataset: *const MmdlagDataset,
    fit: *const MmdlagFit,
    means: *mut f64,
    vars: *mut f64,
    len: usize,
) -> MmdlagStatus {
    let Some(ds) = dataset.as_ref() else {
        return null_fail("dataset");
    };
    let Some(f) = fit.as_ref() else {
        return null_fail("fit");
    };
    if means.is_null() || vars.is_null() {
        return null_fail("means/vars");
    }
    let n = ds.inner.len();
    if len < n {
        set_error(&format!("buffer of {len} too small for {n} days"));
        return MmdlagStatus::MmdlagErrInvalidArgument;
    }
    let run = with_auto_covariates(&ds.inner, &f.spec)
        .and_then(|data| LikelihoodContext::new(data, f.spec.clone()))
        .and_then(|ctx| daily_posteriors(&ctx, &f.result.theta_hat));
    match run {
        Ok(post) => {
            if post.rows.len() != n {
                set_error("posterior has per-stratum rows; mixed soft weights are not representable here");
                return MmdlagStatus::MmdlagErrInvalidArgument;
            }
            let means = std::slice::from_raw_parts_mut(means, n);
            let vars = std::slice::from_raw_parts_mut(vars, n);
            for row in &post.rows {
                means[row.day] = row.mean;
                vars[row.day] = row.var;
            }
            MmdlagStatus::MmdlagOk
        }
        Err(e) => fail(e),
    }
}

/// Run a conventional fixed-lag baseline. `beta` must hold `l_fixed + 1`
/// entries; `degree` applies to the polynomial-lag method only.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_baseline_run(
    dataset: *const MmdlagDataset,
    method: MmdlagBaseline,
    l_fixed: usize,
    degree: usize,
    alpha0: *mut f64,
    beta: *mut f64,
    beta_len: usize,
    residual_sd: *mut f64,
) -> MmdlagStatus {
    let Some(ds) = dataset.as_ref() else {
        return null_fail("dataset");
    };
    if alpha0.is_null() || beta.is_null() || residual_sd.is_null() {
        return null_fail("alpha0/beta/residual_sd");
    }
    if beta_len < l_fixed + 1 {
        set_error(&format!("beta buffer of {beta_len} too small for {} lags", l_fixed + 1));
        return MmdlagStatus::MmdlagErrInvalidArgument;
    }
    let run = match method {
        MmdlagBaseline::MmdlagBaselineOls => ols_dlm(&ds.inner, l_fixed),
        MmdlagBaseline::MmdlagBaselineAlmon => almon_dlm(&ds.inner, l_fixed, degree),
        MmdlagBaseline::MmdlagBaselineMonotone => monotone_dlm(&ds.inner, l_fixed),
    };
    match run {
        Ok(fit) => {
            *alpha0 = fit.alpha0;
            *residual_sd = fit.residual_sd;
            std::slice::from_raw_parts_mut(beta, l_fixed + 1).copy_from_slice(&fit.beta);
            MmdlagStatus::MmdlagOk
        }
        Err(e) => fail(e),
    }
}

/// Simulate `t_len` days from the model at packed parameters `packed`
/// (layout as reported by the fit accessors). Writes the response, exposure,
/// and hidden lasting times (for single-chain days; the first active chain on
/// mixed days) into caller buffers of length `t_len`. Dates start at
/// 2020-01-01 unless the spec's partition dictates otherwise.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_simulate(
    spec: *const MmdlagSpec,
    packed: *const f64,
    packed_len: usize,
    t_len: usize,
    seed: u64,
    y_out: *mut f64,
    x_out: *mut f64,
    hidden_out: *mut i32,
) -> MmdlagStatus {
    let Some(sp) = spec.as_ref() else {
        return null_fail("spec");
    };
    if packed.is_null() || y_out.is_null() || x_out.is_null() || hidden_out.is_null() {
        return null_fail("packed/y_out/x_out/hidden_out");
    }
    let packed = std::slice::from_raw_parts(packed, packed_len);
    let theta = match unpack_params(packed, &sp.inner) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let start = sp
        .inner
        .partition
        .as_ref()
        .map(|p| p.start())
        .unwrap_or_else(|| "2020-01-01".parse().unwrap());
    let mut config = SimulationConfig::new(sp.inner.clone(), theta, t_len, seed);
    config.start_date = start;
    match simulate(&config) {
        Ok(sim) => {
            std::slice::from_raw_parts_mut(y_out, t_len).copy_from_slice(sim.dataset.response());
            std::slice::from_raw_parts_mut(x_out, t_len).copy_from_slice(sim.dataset.exposure());
            let hidden = std::slice::from_raw_parts_mut(hidden_out, t_len);
            for (day, draws) in sim.hidden.iter().enumerate() {
                hidden[day] = draws.first().map_or(-1, |(_, l)| *l as i32);
            }
            MmdlagStatus::MmdlagOk
        }
        Err(e) => fail(e),
    }
}

/// Pack a parameter vector given on the natural scale in separate arrays is
/// not exposed; instead, helpers below translate between packed vectors and
/// the canonical layout so bindings can build starting points.
///
/// Number of packed coordinates a spec implies with `n_covariates` covariates.
#[no_mangle]
pub unsafe extern "C" fn mmdlag_spec_packed_len(
    spec: *const MmdlagSpec,
    n_covariates: usize,
) -> usize {
    spec.as_ref().map_or(0, |s| mmdlag::model::packed_len(&s.inner, n_covariates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;

    unsafe fn smoke_dataset(n: usize) -> *mut MmdlagDataset {
        let days: Vec<i64> = (0..n as i64).map(|i| 18628 + i).collect(); // 2021-01-01 onward
        let x: Vec<f64> = (0..n).map(|i| 1.0 + ((i as f64) * 0.37).sin().abs()).collect();
        let y: Vec<f64> = (0..n).map(|i| 3.0 + 1.4 * x[i] + ((i * 7) % 5) as f64 * 0.1).collect();
        let mut handle: *mut MmdlagDataset = ptr::null_mut();
        let status = mmdlag_dataset_new(days.as_ptr(), y.as_ptr(), x.as_ptr(), n, &mut handle);
        assert_eq!(status, MmdlagStatus::MmdlagOk);
        handle
    }

    #[test]
    fn version_is_a_c_string() {
        let v = mmdlag_version();
        let s = unsafe { CStr::from_ptr(v) }.to_str().unwrap();
        assert!(!s.is_empty());
    }

    #[test]
    fn dataset_rejects_null_and_bad_epochs() {
        unsafe {
            let mut handle: *mut MmdlagDataset = ptr::null_mut();
            let status = mmdlag_dataset_new(
                ptr::null(),
                ptr::null(),
                ptr::null(),
                0,
                &mut handle,
            );
            assert_eq!(status, MmdlagStatus::MmdlagErrNullPointer);
            let msg = CStr::from_ptr(mmdlag_last_error_message()).to_str().unwrap();
            assert!(msg.contains("null pointer"));
        }
    }

    #[test]
    fn fit_and_inspect_through_the_c_surface() {
        unsafe {
            let ds = smoke_dataset(120);
            let mut spec: *mut MmdlagSpec = ptr::null_mut();
            assert_eq!(
                mmdlag_spec_new(MmdlagVariant::MmdlagConstantRho, 3, &mut spec),
                MmdlagStatus::MmdlagOk
            );
            let options =
                MmdlagFitOptions { tol: 1e-4, max_iter: 200, n_starts: 1, seed: 7 };
            let mut fit: *mut MmdlagFit = ptr::null_mut();
            assert_eq!(
                mmdlag_fit_run(ds, spec, &options, &mut fit),
                MmdlagStatus::MmdlagOk
            );
            assert!(mmdlag_fit_loglik(fit).is_finite());
            assert!(mmdlag_fit_aic(fit).is_finite());
            assert_eq!(mmdlag_fit_converged(fit), 1);
            let n = mmdlag_fit_param_count(fit);
            assert_eq!(n, mmdlag_spec_packed_len(spec, 0));
            let mut params = vec![0.0; n];
            assert_eq!(mmdlag_fit_params(fit, params.as_mut_ptr(), n), MmdlagStatus::MmdlagOk);
            let mut name = vec![0 as c_char; 64];
            assert_eq!(
                mmdlag_fit_param_name(fit, 0, name.as_mut_ptr(), name.len()),
                MmdlagStatus::MmdlagOk
            );
            let name = CStr::from_ptr(name.as_ptr()).to_str().unwrap();
            assert_eq!(name, "alpha0");

            let mut pmf = vec![0.0; 4];
            assert_eq!(
                mmdlag_fit_lasting_pmf(fit, 0, pmf.as_mut_ptr(), pmf.len()),
                MmdlagStatus::MmdlagOk
            );
            let total: f64 = pmf.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);

            let mut means = vec![0.0; 120];
            let mut vars = vec![0.0; 120];
            assert_eq!(
                mmdlag_posterior_mean_var(ds, fit, means.as_mut_ptr(), vars.as_mut_ptr(), 120),
                MmdlagStatus::MmdlagOk
            );
            assert!(means.iter().all(|m| m.is_finite()));

            mmdlag_fit_free(fit);
            mmdlag_spec_free(spec);
            mmdlag_dataset_free(ds);
        }
    }

    #[test]
    fn baseline_through_the_c_surface() {
        unsafe {
            let ds = smoke_dataset(80);
            let mut alpha0 = 0.0;
            let mut beta = vec![0.0; 4];
            let mut sd = 0.0;
            let status = mmdlag_baseline_run(
                ds,
                MmdlagBaseline::MmdlagBaselineOls,
                3,
                0,
                &mut alpha0,
                beta.as_mut_ptr(),
                beta.len(),
                &mut sd,
            );
            assert_eq!(status, MmdlagStatus::MmdlagOk);
            assert!(sd >= 0.0);
            mmdlag_dataset_free(ds);
        }
    }

    #[test]
    fn simulate_through_the_c_surface() {
        unsafe {
            let mut spec: *mut MmdlagSpec = ptr::null_mut();
            assert_eq!(
                mmdlag_spec_new(MmdlagVariant::MmdlagConstantRho, 4, &mut spec),
                MmdlagStatus::MmdlagOk
            );
            // packed layout: alpha0, beta[0..=4], logit rho, log sigma
            let packed = [2.0, 1.5, 1.0, 0.7, 0.4, 0.2, 0.0, 0.0];
            let t_len = 64;
            let mut y = vec![0.0; t_len];
            let mut x = vec![0.0; t_len];
            let mut hidden = vec![0i32; t_len];
            let status = mmdlag_simulate(
                spec,
                packed.as_ptr(),
                packed.len(),
                t_len,
                11,
                y.as_mut_ptr(),
                x.as_mut_ptr(),
                hidden.as_mut_ptr(),
            );
            assert_eq!(status, MmdlagStatus::MmdlagOk);
            assert!(x.iter().all(|v| *v > 0.0));
            assert!(hidden.iter().all(|l| *l >= 0 && *l <= 4));
            mmdlag_spec_free(spec);
        }
    }
}
