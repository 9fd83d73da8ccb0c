//! Command-line interface: simulate, fit, posterior, baseline, compare.
//!
//! Exit codes: 0 on success, 1 on input/configuration errors, 2 on numerical
//! failures. All outputs are written atomically into the output directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mmdlag::baselines::{almon_dlm, monotone_dlm, ols_dlm, BaselineFit};
use mmdlag::error::Error;
use mmdlag::estimation::{contrast_by_names, fit, wald_test};
use mmdlag::io::{
    atomic_write, ingest, read_fit_json, write_baseline_csv, write_baseline_meta,
    write_betastar_csv, write_compare_csv, write_expected_beta_csv, write_fit_json,
    write_hidden_csv, write_lasting_csvs, write_posterior_csv, write_series, write_wald_csv,
    BandStyle, CompareRow, FitReport, RunConfig, WaldRow,
};
use mmdlag::likelihood::LikelihoodContext;
use mmdlag::model::Variant;
use mmdlag::posterior::daily_posteriors;
use mmdlag::simulation::{simulate, SimulationConfig};

#[derive(Parser)]
#[command(
    name = "mmdlag",
    about = "Distributed lag regression with a random, Markov-modulated lasting time",
    version
)]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed override for fitting / simulation.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Model variant override.
    #[arg(long, global = true, value_enum)]
    variant: Option<VariantArg>,

    /// Lag truncation override.
    #[arg(long, global = true)]
    lag_max: Option<usize>,

    /// Number of optimizer starts override.
    #[arg(long, global = true)]
    starts: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    ConstantRho,
    SemiMarkov,
    PeriodConstantRho,
    HardStratified,
    SoftStratified,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::ConstantRho => Variant::ConstantRho,
            VariantArg::SemiMarkov => Variant::SemiMarkov,
            VariantArg::PeriodConstantRho => Variant::PeriodConstantRho,
            VariantArg::HardStratified => Variant::HardStratified,
            VariantArg::SoftStratified => Variant::SoftStratified,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset (and its hidden lasting times) from the model.
    Simulate,
    /// Fit the configured model by marginal maximum likelihood.
    Fit,
    /// Empirical-Bayes posterior of the daily lasting time from a prior fit.
    Posterior {
        /// Path to a fit report (defaults to `<out>/fit.json`).
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Band style for the lo/hi columns.
        #[arg(long, value_enum, default_value_t = BandArg::Variance)]
        band: BandArg,
    },
    /// Conventional fixed-lag baselines on the ingested dataset.
    Baseline {
        /// Fixed lag; defaults to the model's lag_max.
        #[arg(long)]
        lag: Option<usize>,
        /// Polynomial degree for the Almon baseline.
        #[arg(long, default_value_t = 3)]
        degree: usize,
    },
    /// Compare previously written fit reports and run declared contrasts.
    Compare {
        /// Paths to fit.json files (labels are the file stems).
        #[arg(required = true)]
        fits: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BandArg {
    Variance,
    Sd,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numerical(_)
        | Error::Optimizer(_)
        | Error::RankDeficient { .. }
        | Error::SingularContrast => 2,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Input("--config <path> is required for this subcommand".into()))?;
    let mut config = RunConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        config.optimizer.seed = seed;
    }
    if let Some(variant) = cli.variant {
        config.model.variant = variant.into();
    }
    if let Some(lag_max) = cli.lag_max {
        config.model.lag_max = lag_max;
    }
    if let Some(starts) = cli.starts {
        config.optimizer.n_starts = starts;
    }
    if let Some(out) = &cli.out {
        config.output = Some(out.clone());
    }
    Ok(config)
}

fn out_dir(config: &RunConfig) -> Result<PathBuf, Error> {
    config
        .output
        .clone()
        .ok_or_else(|| Error::Input("no output directory: set `output` in the config or pass --out".into()))
}

fn run(cli: &Cli) -> Result<(), Error> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Simulate => run_simulate(&config),
        Command::Fit => run_fit(&config),
        Command::Posterior { fit, band } => run_posterior(&config, fit.as_deref(), *band),
        Command::Baseline { lag, degree } => run_baseline(&config, *lag, *degree),
        Command::Compare { fits } => run_compare(&config, fits),
    }
}

fn run_simulate(config: &RunConfig) -> Result<(), Error> {
    let out = out_dir(config)?;
    let sim_section = config
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Input("simulate needs a [simulate] section".into()))?;

    // dates are synthetic: the partition comes straight from the config span
    let start: chrono::NaiveDate =
        sim_section.start_date.unwrap_or_else(|| "2020-01-01".parse().unwrap());
    let last = start + chrono::Duration::days(sim_section.t_len as i64 - 1);
    let partition = match &config.model.periods {
        Some(p) => Some(mmdlag::io::build_partition(p, start, last)?),
        None => None,
    };
    let mut spec = mmdlag::model::ModelSpec::new(config.model.variant, config.model.lag_max, partition)?
        .with_beta_nonneg(config.model.beta_nonneg);
    if config.model.variant == Variant::SoftStratified {
        let soft = config
            .soft
            .as_ref()
            .ok_or_else(|| Error::Input("soft-stratified simulation needs a [soft] section".into()))?;
        // linear ramp between the anchors stands in for observed proportions
        let rows: Vec<Vec<f64>> = (0..sim_section.t_len)
            .map(|i| {
                let d = start + chrono::Duration::days(i as i64);
                let pi_new = if d < soft.all_old_before {
                    0.0
                } else if d > soft.all_new_after {
                    1.0
                } else {
                    let span = (soft.all_new_after - soft.all_old_before).num_days().max(1) as f64;
                    let into = (d - soft.all_old_before).num_days() as f64;
                    (into / span).clamp(0.0, 1.0)
                };
                vec![1.0 - pi_new, pi_new]
            })
            .collect();
        spec = spec.with_soft_weights(mmdlag::model::SoftWeights::new(rows)?)?;
    }

    let sim_config = SimulationConfig {
        spec: spec.clone(),
        theta: sim_section.theta.clone(),
        t_len: sim_section.t_len,
        exposure: sim_section.exposure.clone().unwrap_or_default(),
        seed: config.optimizer.seed,
        start_date: start,
    };
    let sim = simulate(&sim_config)?;

    let dates = sim.dataset.dates();
    let y_rows: Vec<(chrono::NaiveDate, f64)> =
        dates.iter().copied().zip(sim.dataset.response().iter().copied()).collect();
    let x_rows: Vec<(chrono::NaiveDate, f64)> =
        dates.iter().copied().zip(sim.dataset.exposure().iter().copied()).collect();
    write_series(&out.join("response.csv"), &y_rows)?;
    write_series(&out.join("exposure.csv"), &x_rows)?;
    if spec.variant == Variant::SoftStratified {
        let weights = spec.soft_weights.as_ref().unwrap();
        let prop_rows: Vec<(chrono::NaiveDate, f64)> =
            dates.iter().enumerate().map(|(i, d)| (*d, weights.row(i)[1])).collect();
        write_series(&out.join("variant_prop.csv"), &prop_rows)?;
    }
    write_hidden_csv(&out.join("hidden_l.csv"), &spec, &sim.dataset, &sim.hidden)?;
    atomic_write(
        &out.join("true_params.json"),
        serde_json::to_string_pretty(&sim_section.theta)
            .map_err(Error::Json)?
            .as_bytes(),
    )?;
    println!("simulate: wrote {} days to {}", sim_section.t_len, out.display());
    Ok(())
}

fn run_fit(config: &RunConfig) -> Result<(), Error> {
    let out = out_dir(config)?;
    let (dataset, spec) = ingest(config)?;
    let ctx = LikelihoodContext::new(dataset, spec.clone())?;
    let options = config.fit_options();
    let result = fit(&ctx, None, &options)?;

    let report = FitReport::new(&spec, &result, options.seed);
    write_fit_json(&out.join("fit.json"), &report)?;
    write_betastar_csv(&out.join("betastar.csv"), &spec, &result)?;
    write_expected_beta_csv(&out.join("expected_beta.csv"), &spec, &result)?;
    write_lasting_csvs(
        &out.join("lasting_pmf.csv"),
        &out.join("lasting_cdf.csv"),
        &spec,
        &result.theta_hat,
    )?;
    println!(
        "fit: variant={} loglik={:.6} aic={:.6} converged={} (wrote {})",
        spec.variant.name(),
        result.loglik,
        result.aic,
        result.converged,
        out.join("fit.json").display()
    );
    Ok(())
}

fn run_posterior(config: &RunConfig, fit_path: Option<&Path>, band: BandArg) -> Result<(), Error> {
    let out = out_dir(config)?;
    let fit_path = fit_path.map(Path::to_path_buf).unwrap_or_else(|| out.join("fit.json"));
    let report = read_fit_json(&fit_path)?;
    let (dataset, spec) = ingest(config)?;
    if report.variant != spec.variant || report.lag_max != spec.lag_max {
        return Err(Error::Input(format!(
            "fit report is for {}/lag {}, but the config describes {}/lag {}",
            report.variant.name(),
            report.lag_max,
            spec.variant.name(),
            spec.lag_max
        )));
    }
    let ctx = LikelihoodContext::new(dataset, spec.clone())?;
    let posterior = daily_posteriors(&ctx, &report.params())?;
    let style = match band {
        BandArg::Variance => BandStyle::Variance,
        BandArg::Sd => BandStyle::Sd,
    };
    write_posterior_csv(&out.join("posterior_L.csv"), &spec, ctx.dataset(), &posterior, style)?;
    println!("posterior: wrote {}", out.join("posterior_L.csv").display());
    Ok(())
}

fn run_baseline(config: &RunConfig, lag: Option<usize>, degree: usize) -> Result<(), Error> {
    let out = out_dir(config)?;
    let (dataset, spec) = ingest(config)?;
    let l_fixed = lag.unwrap_or(spec.lag_max);
    let fits: Vec<BaselineFit> = vec![
        ols_dlm(&dataset, l_fixed)?,
        almon_dlm(&dataset, l_fixed, degree)?,
        monotone_dlm(&dataset, l_fixed)?,
    ];
    write_baseline_csv(&out.join("baseline_beta.csv"), &fits)?;
    write_baseline_meta(&out.join("baseline_meta.json"), &fits)?;
    println!(
        "baseline: ols rss={:.6}, almon{degree} rss={:.6}, monotone rss={:.6}",
        fits[0].rss, fits[1].rss, fits[2].rss
    );
    Ok(())
}

fn run_compare(config: &RunConfig, fit_paths: &[PathBuf]) -> Result<(), Error> {
    let out = out_dir(config)?;
    let mut labeled: Vec<(String, FitReport)> = Vec::new();
    for path in fit_paths {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| path.display().to_string());
        // disambiguate identical stems (e.g. out_a/fit.json, out_b/fit.json)
        let label = if labeled.iter().any(|(l, _)| *l == label) {
            format!("{label}:{}", path.display())
        } else {
            label
        };
        labeled.push((label, read_fit_json(path)?));
    }
    let best_aic = labeled.iter().map(|(_, r)| r.aic).fold(f64::INFINITY, f64::min);
    let rows: Vec<CompareRow> = labeled
        .iter()
        .map(|(label, r)| CompareRow {
            label: label.clone(),
            variant: r.variant,
            loglik: r.loglik,
            k: r.k,
            aic: r.aic,
            delta_aic: r.aic - best_aic,
        })
        .collect();
    write_compare_csv(&out.join("compare.csv"), &rows)?;

    let mut wald_rows: Vec<WaldRow> = Vec::new();
    for contrast in &config.contrasts {
        let (label, report) = match &contrast.fit {
            Some(f) => labeled.iter().find(|(l, _)| l == f).ok_or_else(|| {
                Error::Input(format!("contrast '{}' names unknown fit '{f}'", contrast.name))
            })?,
            None => &labeled[0],
        };
        let fit_result = report_to_fit(report);
        let c = contrast_by_names(&fit_result, &contrast.a, contrast.b.as_deref())?;
        let t = wald_test(&fit_result, &c, contrast.null_value)?;
        wald_rows.push(WaldRow {
            fit: label.clone(),
            name: contrast.name.clone(),
            estimate: t.estimate,
            se: t.se,
            z: t.z,
            p: t.p,
        });
    }
    if !wald_rows.is_empty() {
        write_wald_csv(&out.join("wald.csv"), &wald_rows)?;
    }
    for r in &rows {
        println!(
            "compare: {} loglik={:.6} k={} aic={:.6} delta_aic={:.6}",
            r.label, r.loglik, r.k, r.aic, r.delta_aic
        );
    }
    for w in &wald_rows {
        println!(
            "wald: {} {} estimate={:.6} se={:.6} z={:.4} p={:.6}",
            w.fit, w.name, w.estimate, w.se, w.z, w.p
        );
    }
    Ok(())
}

/// Rebuild enough of a `FitResult` from a report to evaluate contrasts.
fn report_to_fit(report: &FitReport) -> mmdlag::estimation::FitResult {
    mmdlag::estimation::FitResult {
        theta_hat: report.theta.clone(),
        packed: report.packed.clone(),
        packed_names: report.packed_names.clone(),
        loglik: report.loglik,
        aic: report.aic,
        covariance: report.cov.clone(),
        se: report.se.iter().map(|s| s.unwrap_or(f64::NAN)).collect(),
        se_flags: report.se_flags.clone(),
        converged: report.converged,
        n_evals: report.n_evals,
        starts_used: report.starts_used,
        k: report.k,
        hessian_condition: report.hessian_condition,
    }
}
