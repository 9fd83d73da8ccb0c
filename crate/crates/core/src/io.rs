//! File formats and run configuration: daily-series CSVs, the TOML run
//! config, the fit report JSON, and the plot-ready output tables.
//!
//! All outputs are written atomically (temp file in the target directory,
//! then rename), so a failing run never leaves partial artifacts behind.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineFit;
use crate::data::{PeriodPartition, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::estimation::{FitOptions, FitResult, SeFlag};
use crate::lasting::{expect_z_in_period, lasting_law_in_period};
use crate::likelihood::transition_families;
use crate::model::{ModelSpec, ParamVector, SoftWeights, Variant};
use crate::posterior::LastingPosterior;
use crate::preprocess::{build_soft_weights, impute_missing, moving_average, period_indicator_covariates};
use crate::simulation::ExposureGen;

// ---------------------------------------------------------------------------
// Daily series CSV (schema: date,value with empty value = missing)
// ---------------------------------------------------------------------------

/// Read a daily series CSV. Rows are sorted by date; duplicate dates are an
/// error and at least two non-missing values are required.
pub fn read_series(path: &Path) -> Result<Vec<(NaiveDate, Option<f64>)>> {
    if !path.exists() {
        return Err(Error::Input(format!("input file not found: {}", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let headers = reader.headers()?.clone();
    let date_idx = headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case("date"))
        .ok_or_else(|| Error::Input(format!("{}: missing 'date' column", path.display())))?;
    let value_idx = headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case("value"))
        .ok_or_else(|| Error::Input(format!("{}: missing 'value' column", path.display())))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let date_str = record.get(date_idx).unwrap_or("").trim();
        let date: NaiveDate = date_str
            .parse()
            .map_err(|_| Error::Input(format!("{}: bad date '{date_str}'", path.display())))?;
        let raw = record.get(value_idx).unwrap_or("").trim();
        let value = if raw.is_empty() {
            None
        } else {
            Some(raw.parse::<f64>().map_err(|_| {
                Error::Input(format!("{}: bad value '{raw}' on {date}", path.display()))
            })?)
        };
        rows.push((date, value));
    }
    rows.sort_by_key(|(d, _)| *d);
    for pair in rows.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::Input(format!("{}: duplicate date {}", path.display(), pair[0].0)));
        }
    }
    if rows.iter().filter(|(_, v)| v.is_some()).count() < 2 {
        return Err(Error::Input(format!(
            "{}: a series needs at least 2 non-missing values",
            path.display()
        )));
    }
    Ok(rows)
}

/// Write a complete daily series in the same schema [`read_series`] accepts.
pub fn write_series(path: &Path, rows: &[(NaiveDate, f64)]) -> Result<()> {
    let mut out = String::from("date,value\n");
    for (d, v) in rows {
        out.push_str(&format!("{d},{v}\n"));
    }
    atomic_write(path, out.as_bytes())
}

/// Atomic file write: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Run configuration (TOML)
// ---------------------------------------------------------------------------

fn default_true() -> bool {
    true
}
fn default_window() -> usize {
    7
}
fn default_lag_max() -> usize {
    30
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct DataConfig {
    pub response: Option<PathBuf>,
    pub exposure: Option<PathBuf>,
    pub variant_proportion: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Impute missing exposure days with the GCV smoothing spline.
    #[serde(default = "default_true")]
    pub impute: bool,
    /// Centered moving-average window for the exposure (odd; 1 disables).
    #[serde(default = "default_window")]
    pub moving_average: usize,
    /// Fit on the smoothed exposure (default) or on raw levels.
    #[serde(default = "default_true")]
    pub smooth_exposure: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { impute: true, moving_average: 7, smooth_exposure: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodsConfig {
    /// Interior boundary dates; the first/last data days close the partition.
    pub boundaries: Vec<NaiveDate>,
    /// One label per period (`boundaries.len() + 1`).
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    #[serde(default = "default_lag_max")]
    pub lag_max: usize,
    #[serde(default = "default_true")]
    pub beta_nonneg: bool,
    pub periods: Option<PeriodsConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftConfig {
    /// All response is attributed to the old stratum strictly before this day.
    pub all_old_before: NaiveDate,
    /// All response is attributed to the new stratum strictly after this day.
    pub all_new_after: NaiveDate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(default = "OptimizerConfig::default_tol")]
    pub tol: f64,
    #[serde(default = "OptimizerConfig::default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "OptimizerConfig::default_starts")]
    pub n_starts: usize,
    #[serde(default = "OptimizerConfig::default_seed")]
    pub seed: u64,
}

impl OptimizerConfig {
    fn default_tol() -> f64 {
        1e-5
    }
    fn default_max_iter() -> usize {
        600
    }
    fn default_starts() -> usize {
        5
    }
    fn default_seed() -> u64 {
        1
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            tol: Self::default_tol(),
            max_iter: Self::default_max_iter(),
            n_starts: Self::default_starts(),
            seed: Self::default_seed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub name: String,
    /// Packed coordinate name (see `packed_names` in the fit report).
    pub a: String,
    /// Optional second coordinate; the contrast is `a - b` when present.
    pub b: Option<String>,
    #[serde(default)]
    pub null_value: f64,
    /// Label of the fit the contrast applies to (defaults to the first fit).
    pub fit: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSection {
    pub t_len: usize,
    pub theta: ParamVector,
    #[serde(default)]
    pub exposure: Option<ExposureGen>,
    pub start_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub soft: Option<SoftConfig>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub contrasts: Vec<ContrastConfig>,
    pub simulate: Option<SimulateSection>,
    /// Output directory; the CLI `--out` flag overrides it.
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Input(format!("bad config: {e}")))
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            tol: self.optimizer.tol,
            max_iter: self.optimizer.max_iter,
            n_starts: self.optimizer.n_starts,
            seed: self.optimizer.seed,
            ..Default::default()
        }
    }
}

// ---------------------------------------------------------------------------
// Ingestion: from raw CSVs to an aligned dataset and model spec
// ---------------------------------------------------------------------------

fn grid_lookup(
    rows: &[(NaiveDate, Option<f64>)],
    grid: &[NaiveDate],
) -> Vec<Option<f64>> {
    let map: BTreeMap<NaiveDate, Option<f64>> = rows.iter().cloned().collect();
    grid.iter().map(|d| map.get(d).copied().flatten()).collect()
}

/// Build the partition from the config and the data span: interior boundary
/// dates are closed by the first and last grid days.
pub fn build_partition(periods: &PeriodsConfig, first: NaiveDate, last: NaiveDate) -> Result<PeriodPartition> {
    if periods.labels.len() != periods.boundaries.len() + 1 {
        return Err(Error::Input(format!(
            "{} period labels for {} boundaries (need boundaries + 1)",
            periods.labels.len(),
            periods.boundaries.len()
        )));
    }
    let mut cutpoints = Vec::with_capacity(periods.boundaries.len() + 2);
    cutpoints.push(first);
    for b in &periods.boundaries {
        if *b <= first || *b >= last {
            return Err(Error::Input(format!(
                "period boundary {b} must lie strictly inside the data span [{first}, {last}]"
            )));
        }
        cutpoints.push(*b);
    }
    cutpoints.push(last);
    PeriodPartition::new(cutpoints, periods.labels.clone())
}

/// Read, align, impute and smooth the input series, and assemble the model
/// spec. Returns the fit-ready dataset and spec.
pub fn ingest(config: &RunConfig) -> Result<(TimeSeriesDataset, ModelSpec)> {
    let response_path = config
        .data
        .response
        .as_ref()
        .ok_or_else(|| Error::Input("config is missing data.response".into()))?;
    let exposure_path = config
        .data
        .exposure
        .as_ref()
        .ok_or_else(|| Error::Input("config is missing data.exposure".into()))?;
    let response = read_series(response_path)?;
    let exposure = read_series(exposure_path)?;

    let first = response[0].0.max(exposure[0].0);
    let last = response.last().unwrap().0.min(exposure.last().unwrap().0);
    if first > last {
        return Err(Error::Input("response and exposure date ranges do not overlap".into()));
    }
    let mut grid = Vec::new();
    let mut d = first;
    while d <= last {
        grid.push(d);
        d += chrono::Duration::days(1);
    }

    let y: Vec<f64> = grid_lookup(&response, &grid)
        .into_iter()
        .zip(grid.iter())
        .map(|(v, d)| v.ok_or_else(|| Error::Input(format!("response missing on {d}; responses must be complete"))))
        .collect::<Result<_>>()?;

    let x_raw = grid_lookup(&exposure, &grid);
    let (mut x, mask) = if x_raw.iter().all(|v| v.is_some()) {
        (x_raw.iter().map(|v| v.unwrap()).collect::<Vec<_>>(), vec![false; grid.len()])
    } else if config.preprocess.impute {
        let (filled, mask) = impute_missing(&x_raw)?;
        // the spline can dip below zero in gaps; exposures are non-negative
        (filled.into_iter().map(|v| v.max(0.0)).collect(), mask)
    } else {
        return Err(Error::Input(
            "exposure has missing days and imputation is disabled".into(),
        ));
    };
    if config.preprocess.smooth_exposure && config.preprocess.moving_average > 1 {
        x = moving_average(&x, config.preprocess.moving_average)?;
    }

    let partition = match &config.model.periods {
        Some(p) => Some(build_partition(p, first, last)?),
        None => None,
    };
    let mut spec = ModelSpec::new(config.model.variant, config.model.lag_max, partition.clone())?
        .with_beta_nonneg(config.model.beta_nonneg);

    let (w, w_names) = match config.model.variant {
        Variant::SemiMarkov | Variant::PeriodConstantRho => {
            let part = partition
                .as_ref()
                .ok_or_else(|| Error::Input("this variant needs [model.periods]".into()))?;
            period_indicator_covariates(part, &grid)?
        }
        _ => (Vec::new(), Vec::new()),
    };

    let mut x_strata = None;
    if config.model.variant == Variant::SoftStratified {
        let soft = config
            .soft
            .as_ref()
            .ok_or_else(|| Error::Input("soft-stratified runs need a [soft] anchor section".into()))?;
        let prop_path = config
            .data
            .variant_proportion
            .as_ref()
            .ok_or_else(|| Error::Input("soft-stratified runs need data.variant_proportion".into()))?;
        let props = grid_lookup(&read_series(prop_path)?, &grid);
        let rows = build_soft_weights(&grid, &props, soft.all_old_before, soft.all_new_after)?;
        if spec.n_strata() != 2 {
            return Err(Error::Input(format!(
                "soft stratification from a proportion series defines 2 strata; the partition has {}",
                spec.n_strata()
            )));
        }
        // split the exposure by the same mixing weights
        x_strata = Some(vec![
            rows.iter().zip(x.iter()).map(|(r, xv)| r[0] * xv).collect::<Vec<f64>>(),
            rows.iter().zip(x.iter()).map(|(r, xv)| r[1] * xv).collect::<Vec<f64>>(),
        ]);
        spec = spec.with_soft_weights(SoftWeights::new(rows)?)?;
    }

    let dataset = TimeSeriesDataset::with_parts(grid, y, x, x_strata, w, w_names, mask)?;
    Ok((dataset, spec))
}

// ---------------------------------------------------------------------------
// Fit report (fit.json)
// ---------------------------------------------------------------------------

/// Delta-method transition probability row in the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhoReport {
    pub period: String,
    pub rho: f64,
    pub se: f64,
}

/// JSON-serializable fit report. `cov` rows align with `packed_names`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub variant: Variant,
    pub lag_max: usize,
    pub seed: u64,
    pub theta: ParamVector,
    pub packed: Vec<f64>,
    pub packed_names: Vec<String>,
    pub se: Vec<Option<f64>>,
    pub se_flags: Vec<SeFlag>,
    pub cov: Option<Vec<Vec<f64>>>,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
    pub n_evals: usize,
    pub starts_used: usize,
    pub k: usize,
    pub hessian_condition: Option<f64>,
    pub rho: Vec<RhoReport>,
}

impl FitReport {
    pub fn new(spec: &ModelSpec, fit: &FitResult, seed: u64) -> Self {
        let rho = rho_reports(spec, fit);
        FitReport {
            variant: spec.variant,
            lag_max: spec.lag_max,
            seed,
            theta: fit.theta_hat.clone(),
            packed: fit.packed.clone(),
            packed_names: fit.packed_names.clone(),
            se: fit.se.iter().map(|s| if s.is_finite() { Some(*s) } else { None }).collect(),
            se_flags: fit.se_flags.clone(),
            cov: fit.covariance.clone(),
            loglik: fit.loglik,
            aic: fit.aic,
            converged: fit.converged,
            n_evals: fit.n_evals,
            starts_used: fit.starts_used,
            k: fit.k,
            hessian_condition: fit.hessian_condition,
            rho,
        }
    }

    /// Reconstruct the fitted parameters for downstream subcommands.
    pub fn params(&self) -> ParamVector {
        self.theta.clone()
    }
}

fn rho_reports(spec: &ModelSpec, fit: &FitResult) -> Vec<RhoReport> {
    match spec.variant {
        Variant::ConstantRho => match crate::estimation::delta_rho(fit, spec, 0) {
            Ok(dr) => vec![RhoReport { period: "pooled".into(), rho: dr.rho, se: dr.se }],
            Err(_) => Vec::new(),
        },
        Variant::PeriodConstantRho => {
            let part = spec.partition.as_ref().unwrap();
            (0..spec.n_periods())
                .filter_map(|j| {
                    crate::estimation::delta_rho(fit, spec, j).ok().map(|dr| RhoReport {
                        period: part.label(j).to_string(),
                        rho: dr.rho,
                        se: dr.se,
                    })
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

pub fn write_fit_json(path: &Path, report: &FitReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    atomic_write(path, json.as_bytes())
}

pub fn read_fit_json(path: &Path) -> Result<FitReport> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read fit report {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// Output tables
// ---------------------------------------------------------------------------

/// Groups whose lasting law differs: periods for the pooled period-indexed
/// variants, strata for the stratified ones, a single pooled group otherwise.
/// Yields `(label, family_index, chain_period)`.
fn law_groups(spec: &ModelSpec) -> Vec<(String, usize, usize)> {
    match spec.variant {
        Variant::ConstantRho => vec![("pooled".into(), 0, 0)],
        Variant::SemiMarkov | Variant::PeriodConstantRho => {
            let part = spec.partition.as_ref().unwrap();
            (0..part.n_periods()).map(|j| (part.label(j).to_string(), 0, j)).collect()
        }
        Variant::HardStratified | Variant::SoftStratified => {
            (0..spec.n_strata()).map(|j| (spec.stratum_label(j), j, 0)).collect()
        }
    }
}

/// Write `betastar.csv`: the underlying lag coefficients per stratum.
pub fn write_betastar_csv(path: &Path, spec: &ModelSpec, fit: &FitResult) -> Result<()> {
    let mut out = String::from("stratum,tau,beta_star\n");
    for (s, beta) in fit.theta_hat.beta_star.iter().enumerate() {
        let label = spec.stratum_label(s);
        for (tau, b) in beta.iter().enumerate() {
            out.push_str(&format!("{label},{tau},{b}\n"));
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Write `expected_beta.csv`: the expected delayed effect
/// `beta_star[tau] * P(L >= tau)` per group and lag.
pub fn write_expected_beta_csv(path: &Path, spec: &ModelSpec, fit: &FitResult) -> Result<()> {
    let families = transition_families(spec, &fit.theta_hat);
    let mut out = String::from("group,tau,beta_star,expect_z,expected_beta\n");
    for (label, fam_idx, chain_period) in law_groups(spec) {
        let beta = if spec.variant.is_stratified() {
            &fit.theta_hat.beta_star[fam_idx]
        } else {
            &fit.theta_hat.beta_star[0]
        };
        for tau in 0..=spec.lag_max {
            let ez = expect_z_in_period(&families[fam_idx], tau, chain_period);
            let eb = beta[tau] * ez;
            out.push_str(&format!("{label},{tau},{},{ez},{eb}\n", beta[tau]));
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Write the lasting-time pmf and cdf tables per group.
pub fn write_lasting_csvs(
    pmf_path: &Path,
    cdf_path: &Path,
    spec: &ModelSpec,
    theta: &ParamVector,
) -> Result<()> {
    let families = transition_families(spec, theta);
    let mut pmf_out = String::from("group,tau,pmf\n");
    let mut cdf_out = String::from("group,tau,cdf\n");
    for (label, fam_idx, chain_period) in law_groups(spec) {
        let law = lasting_law_in_period(&families[fam_idx], chain_period, spec.lag_max);
        let cdf = law.cdf();
        for tau in 0..=spec.lag_max {
            pmf_out.push_str(&format!("{label},{tau},{}\n", law.pmf[tau]));
            cdf_out.push_str(&format!("{label},{tau},{}\n", cdf[tau]));
        }
    }
    atomic_write(pmf_path, pmf_out.as_bytes())?;
    atomic_write(cdf_path, cdf_out.as_bytes())
}

/// Band style for the posterior table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandStyle {
    /// Mean plus/minus the posterior variance.
    Variance,
    /// Mean plus/minus the posterior standard deviation.
    Sd,
}

/// Write `posterior_L.csv` with one row per day (and per stratum on soft
/// mixed days).
pub fn write_posterior_csv(
    path: &Path,
    spec: &ModelSpec,
    dataset: &TimeSeriesDataset,
    posterior: &LastingPosterior,
    band: BandStyle,
) -> Result<()> {
    let mut out = String::from("date,stratum,mean,var,lo,hi\n");
    for row in &posterior.rows {
        let date = dataset.date(row.day);
        let label = match row.stratum {
            Some(j) => spec.stratum_label(j),
            None => "all".into(),
        };
        let half = match band {
            BandStyle::Variance => row.var,
            BandStyle::Sd => row.var.sqrt(),
        };
        out.push_str(&format!(
            "{date},{label},{},{},{},{}\n",
            row.mean,
            row.var,
            row.mean - half,
            row.mean + half
        ));
    }
    atomic_write(path, out.as_bytes())
}

/// Write `baseline_beta.csv` for one or more baseline fits.
pub fn write_baseline_csv(path: &Path, fits: &[BaselineFit]) -> Result<()> {
    let mut out = String::from("method,tau,beta\n");
    for fit in fits {
        let name = fit.method.name();
        for (tau, b) in fit.beta.iter().enumerate() {
            out.push_str(&format!("{name},{tau},{b}\n"));
        }
    }
    atomic_write(path, out.as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineMeta {
    pub method: String,
    pub alpha0: f64,
    pub residual_sd: f64,
    pub rss: f64,
    pub n_used: usize,
}

pub fn write_baseline_meta(path: &Path, fits: &[BaselineFit]) -> Result<()> {
    let metas: Vec<BaselineMeta> = fits
        .iter()
        .map(|f| BaselineMeta {
            method: f.method.name(),
            alpha0: f.alpha0,
            residual_sd: f.residual_sd,
            rss: f.rss,
            n_used: f.n_used,
        })
        .collect();
    atomic_write(path, serde_json::to_string_pretty(&metas)?.as_bytes())
}

/// One row of the model-comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub label: String,
    pub variant: Variant,
    pub loglik: f64,
    pub k: usize,
    pub aic: f64,
    pub delta_aic: f64,
}

pub fn write_compare_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut out = String::from("model,variant,loglik,k,aic,delta_aic\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.label,
            r.variant.name(),
            r.loglik,
            r.k,
            r.aic,
            r.delta_aic
        ));
    }
    atomic_write(path, out.as_bytes())
}

/// One evaluated contrast in `wald.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct WaldRow {
    pub fit: String,
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

pub fn write_wald_csv(path: &Path, rows: &[WaldRow]) -> Result<()> {
    let mut out = String::from("fit,contrast,estimate,se,z,p\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.fit, r.name, r.estimate, r.se, r.z, r.p
        ));
    }
    atomic_write(path, out.as_bytes())
}

/// Write `hidden_l.csv` from a simulation: one row per drawn chain per day.
pub fn write_hidden_csv(
    path: &Path,
    spec: &ModelSpec,
    dataset: &TimeSeriesDataset,
    hidden: &[Vec<(usize, usize)>],
) -> Result<()> {
    let mut out = String::from("date,stratum,l\n");
    for (day, draws) in hidden.iter().enumerate() {
        let date = dataset.date(day);
        for (stratum, l) in draws {
            let label = if spec.variant.is_stratified() {
                spec.stratum_label(*stratum)
            } else {
                "all".to_string()
            };
            out.push_str(&format!("{date},{label},{l}\n"));
        }
    }
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn series_roundtrip_is_lossless() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("series.csv");
        let rows: Vec<(NaiveDate, f64)> = (0..10)
            .map(|i| {
                let d: NaiveDate = "2021-03-01".parse().unwrap();
                (d + chrono::Duration::days(i), (i as f64) * 0.123456789012345 + 1e-7)
            })
            .collect();
        write_series(&path, &rows).unwrap();
        let back = read_series(&path).unwrap();
        assert_eq!(back.len(), rows.len());
        for ((d1, v1), (d2, v2)) in rows.iter().zip(back.iter()) {
            assert_eq!(d1, d2);
            assert_eq!(Some(*v1), *v2, "values must round-trip exactly");
        }
    }

    #[test]
    fn read_series_handles_missing_cells() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("gappy.csv");
        std::fs::write(&path, "date,value\n2021-01-01,5.0\n2021-01-02,\n2021-01-03,7.5\n").unwrap();
        let rows = read_series(&path).unwrap();
        assert_eq!(rows[1].1, None);
        assert_eq!(rows[2].1, Some(7.5));
    }

    #[test]
    fn read_series_rejects_duplicates_and_missing_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dup.csv");
        std::fs::write(&path, "date,value\n2021-01-01,1\n2021-01-01,2\n").unwrap();
        assert!(read_series(&path).is_err());
        assert!(read_series(&dir.path().join("nope.csv")).is_err());
    }

    #[test]
    fn config_parses_with_defaults() {
        let text = r#"
[data]
response = "y.csv"
exposure = "x.csv"

[model]
variant = "constant-rho"
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.model.lag_max, 30);
        assert!(cfg.model.beta_nonneg);
        assert!(cfg.preprocess.impute);
        assert_eq!(cfg.preprocess.moving_average, 7);
        assert_eq!(cfg.optimizer.n_starts, 5);
    }

    #[test]
    fn partition_from_interior_boundaries() {
        let periods = PeriodsConfig {
            boundaries: vec!["2021-06-01".parse().unwrap()],
            labels: vec!["early".into(), "late".into()],
        };
        let part = build_partition(
            &periods,
            "2021-01-01".parse().unwrap(),
            "2021-12-31".parse().unwrap(),
        )
        .unwrap();
        assert_eq!(part.n_periods(), 2);
        assert_eq!(part.period_index("2021-06-01".parse().unwrap()).unwrap(), 0);
        assert_eq!(part.period_index("2021-06-02".parse().unwrap()).unwrap(), 1);
    }

    #[test]
    fn partition_rejects_out_of_span_boundary() {
        let periods = PeriodsConfig {
            boundaries: vec!["2022-06-01".parse().unwrap()],
            labels: vec!["a".into(), "b".into()],
        };
        assert!(build_partition(
            &periods,
            "2021-01-01".parse().unwrap(),
            "2021-12-31".parse().unwrap()
        )
        .is_err());
    }
}
