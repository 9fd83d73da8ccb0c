//! End-to-end tests of the command-line interface, driving the compiled
//! binary through temp directories.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mmdlag")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn model3_config(out: &Path) -> String {
    format!(
        r#"
output = "{out}"

[data]
response = "{out}/response.csv"
exposure = "{out}/exposure.csv"

[preprocess]
moving_average = 1
smooth_exposure = false

[model]
variant = "constant-rho"
lag_max = 4

[optimizer]
seed = 9
n_starts = 2
max_iter = 500

[simulate]
t_len = 250
theta = {{ alpha0 = [3.0], alpha = [], beta_star = [[2.0, 1.5, 1.1, 0.8, 0.6]], lambda = [[0.3]], sigma = [2.0] }}
"#,
        out = out.display()
    )
}

#[test]
fn simulate_then_fit_round_trip_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), &model3_config(&out));
    let config = config.to_str().unwrap();

    let sim = run(&["--config", config, "simulate"]);
    assert!(sim.status.success(), "simulate failed: {}", String::from_utf8_lossy(&sim.stderr));
    assert!(out.join("response.csv").exists());
    assert!(out.join("exposure.csv").exists());
    assert!(out.join("hidden_l.csv").exists());

    let fit = run(&["--config", config, "fit"]);
    assert!(fit.status.success(), "fit failed: {}", String::from_utf8_lossy(&fit.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], serde_json::Value::Bool(true));
    assert_eq!(report["variant"], "constant-rho");
    assert!(report["loglik"].as_f64().unwrap().is_finite());
    assert!(report["se"].as_array().unwrap().len() == report["packed"].as_array().unwrap().len());

    // the estimated transition probability should be in the right region
    let rho = report["rho"][0]["rho"].as_f64().unwrap();
    assert!((0.1..0.6).contains(&rho), "rho estimate {rho} far from the generator");

    // expected delayed effect at lag zero equals the raw coefficient
    let expected = std::fs::read_to_string(out.join("expected_beta.csv")).unwrap();
    let first_row: Vec<&str> = expected.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first_row[1], "0");
    let beta_star: f64 = first_row[2].parse().unwrap();
    let expect_z: f64 = first_row[3].parse().unwrap();
    let expected_beta: f64 = first_row[4].parse().unwrap();
    assert_eq!(expect_z, 1.0);
    assert_eq!(beta_star, expected_beta);

    // lasting-time tables are proper distributions
    let pmf = std::fs::read_to_string(out.join("lasting_pmf.csv")).unwrap();
    let total: f64 = pmf.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-10);
}

#[test]
fn posterior_writes_a_row_per_day() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), &model3_config(&out));
    let config = config.to_str().unwrap();
    assert!(run(&["--config", config, "simulate"]).status.success());
    assert!(run(&["--config", config, "fit"]).status.success());
    let post = run(&["--config", config, "posterior"]);
    assert!(post.status.success(), "posterior failed: {}", String::from_utf8_lossy(&post.stderr));
    let table = std::fs::read_to_string(out.join("posterior_L.csv")).unwrap();
    assert_eq!(table.lines().count(), 251, "one header plus one row per day");
    // mean stays within the effective support, variance non-negative
    for line in table.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let mean: f64 = cols[2].parse().unwrap();
        let var: f64 = cols[3].parse().unwrap();
        assert!((0.0..=4.0).contains(&mean));
        assert!(var >= 0.0);
    }

    // the sd band is narrower than the variance band whenever var > 1
    let sd = run(&["--config", config, "posterior", "--band", "sd"]);
    assert!(sd.status.success());
}

#[test]
fn baseline_emits_tables_and_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), &model3_config(&out));
    let config = config.to_str().unwrap();
    assert!(run(&["--config", config, "simulate"]).status.success());
    let base = run(&["--config", config, "baseline", "--lag", "4", "--degree", "2"]);
    assert!(base.status.success(), "baseline failed: {}", String::from_utf8_lossy(&base.stderr));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("baseline_meta.json")).unwrap())
            .unwrap();
    let rss: Vec<f64> = meta.as_array().unwrap().iter().map(|m| m["rss"].as_f64().unwrap()).collect();
    assert!(rss[0] <= rss[1] + 1e-8, "restricted polynomial fit beat least squares");
    assert!(rss[0] <= rss[2] + 1e-8, "restricted monotone fit beat least squares");
    let table = std::fs::read_to_string(out.join("baseline_beta.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 * 5);
}

#[test]
fn compare_reports_exact_aic_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config_body = model3_config(&out);
    let config = write_config(dir.path(), &config_body);
    let config = config.to_str().unwrap();
    assert!(run(&["--config", config, "simulate"]).status.success());
    assert!(run(&["--config", config, "fit"]).status.success());
    let fit_a = out.join("fit.json");
    let fit_b = out.join("fit_b.json");
    std::fs::copy(&fit_a, &fit_b).unwrap();

    let cmp = run(&[
        "--config",
        config,
        "compare",
        fit_a.to_str().unwrap(),
        fit_b.to_str().unwrap(),
    ]);
    assert!(cmp.status.success(), "compare failed: {}", String::from_utf8_lossy(&cmp.stderr));
    let table = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    let mut lines = table.lines().skip(1);
    for _ in 0..2 {
        let cols: Vec<&str> = lines.next().unwrap().split(',').collect();
        let loglik: f64 = cols[2].parse().unwrap();
        let k: f64 = cols[3].parse().unwrap();
        let aic: f64 = cols[4].parse().unwrap();
        // the identity holds exactly as written
        assert_eq!(aic, 2.0 * k - 2.0 * loglik);
    }
}

#[test]
fn missing_exposure_file_exits_nonzero_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), &model3_config(&out));
    let config = config.to_str().unwrap();
    // response exists, exposure does not
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("response.csv"), "date,value\n2021-01-01,1\n2021-01-02,2\n").unwrap();

    let fit = run(&["--config", config, "fit"]);
    assert!(!fit.status.success());
    assert_eq!(fit.status.code(), Some(1), "input errors exit with code 1");
    assert!(!out.join("fit.json").exists(), "no partial outputs on failure");
    assert!(!out.join("betastar.csv").exists());
}

#[test]
fn fit_is_deterministic_given_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), &model3_config(&out));
    let config = config.to_str().unwrap();
    assert!(run(&["--config", config, "simulate"]).status.success());
    assert!(run(&["--config", config, "fit"]).status.success());
    let first = std::fs::read_to_string(out.join("fit.json")).unwrap();
    assert!(run(&["--config", config, "fit"]).status.success());
    let second = std::fs::read_to_string(out.join("fit.json")).unwrap();
    assert_eq!(first, second, "identical config and seed must reproduce the fit bit for bit");
}

#[test]
fn soft_stratified_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let body = format!(
        r#"
output = "{out}"

[data]
response = "{out}/response.csv"
exposure = "{out}/exposure.csv"
variant_proportion = "{out}/variant_prop.csv"

[preprocess]
moving_average = 1
smooth_exposure = false

[model]
variant = "soft-stratified"
lag_max = 3

[model.periods]
boundaries = ["2020-04-10"]
labels = ["old", "new"]

[soft]
all_old_before = "2020-03-20"
all_new_after = "2020-05-01"

[optimizer]
seed = 4
n_starts = 1
max_iter = 400

[simulate]
t_len = 200
theta = {{ alpha0 = [2.0, 5.0], alpha = [], beta_star = [[1.5, 1.0, 0.6, 0.3], [0.8, 0.6, 0.4, 0.2]], lambda = [[1.2, -0.2], [0.8, 0.1]], sigma = [1.5, 1.5] }}
"#,
        out = out.display()
    );
    let config = write_config(dir.path(), &body);
    let config = config.to_str().unwrap();
    let sim = run(&["--config", config, "simulate"]);
    assert!(sim.status.success(), "simulate failed: {}", String::from_utf8_lossy(&sim.stderr));
    assert!(out.join("variant_prop.csv").exists());
    // hidden trace has two chains on mixing days
    let hidden = std::fs::read_to_string(out.join("hidden_l.csv")).unwrap();
    assert!(hidden.lines().count() > 201, "mixed days contribute one row per stratum");

    let fit = run(&["--config", config, "fit"]);
    assert!(fit.status.success(), "fit failed: {}", String::from_utf8_lossy(&fit.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(report["variant"], "soft-stratified");
    assert!(report["loglik"].as_f64().unwrap().is_finite());

    let post = run(&["--config", config, "posterior"]);
    assert!(post.status.success(), "posterior failed: {}", String::from_utf8_lossy(&post.stderr));
    let table = std::fs::read_to_string(out.join("posterior_L.csv")).unwrap();
    assert!(table.lines().count() > 201);
    assert!(table.contains(",old,") && table.contains(",new,"));
}

#[test]
fn semi_markov_with_periods_fits_via_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let body = format!(
        r#"
output = "{out}"

[data]
response = "{out}/response.csv"
exposure = "{out}/exposure.csv"

[preprocess]
moving_average = 1
smooth_exposure = false

[model]
variant = "semi-markov"
lag_max = 5

[model.periods]
boundaries = ["2020-05-20"]
labels = ["early", "late"]

[optimizer]
seed = 12
n_starts = 1
max_iter = 500

[[contrasts]]
name = "early-vs-late-slope"
a = "lambda(early)"
b = "lambda(late)"

[simulate]
t_len = 280
theta = {{ alpha0 = [3.0], alpha = [1.5], beta_star = [[2.0, 1.4, 1.0, 0.7, 0.5, 0.3]], lambda = [[2.0, -0.4, -0.1]], sigma = [2.0] }}
"#,
        out = out.display()
    );
    let config = write_config(dir.path(), &body);
    let config = config.to_str().unwrap();
    assert!(run(&["--config", config, "simulate"]).status.success());
    let fit = run(&["--config", config, "fit"]);
    assert!(fit.status.success(), "fit failed: {}", String::from_utf8_lossy(&fit.stderr));

    let cmp = run(&["--config", config, "compare", out.join("fit.json").to_str().unwrap()]);
    assert!(cmp.status.success(), "compare failed: {}", String::from_utf8_lossy(&cmp.stderr));
    let wald = std::fs::read_to_string(out.join("wald.csv")).unwrap();
    let cols: Vec<&str> = wald.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(cols[1], "early-vs-late-slope");
    let p: f64 = cols[5].parse().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn imputation_and_smoothing_are_applied_when_enabled() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    // exposure with interior gaps; response complete
    let mut exposure = String::from("date,value\n");
    let mut response = String::from("date,value\n");
    let start: chrono::NaiveDate = "2021-01-01".parse().unwrap();
    for i in 0..120i64 {
        let day = start + chrono::Duration::days(i);
        response.push_str(&format!("{day},{}\n", 5.0 + (i % 4) as f64));
        if i % 9 == 3 {
            exposure.push_str(&format!("{day},\n"));
        } else {
            exposure.push_str(&format!("{day},{}\n", 2.0 + (i % 5) as f64 * 0.4));
        }
    }
    std::fs::write(out.join("response.csv"), response).unwrap();
    std::fs::write(out.join("exposure.csv"), exposure).unwrap();
    let body = format!(
        r#"
output = "{out}"

[data]
response = "{out}/response.csv"
exposure = "{out}/exposure.csv"

[model]
variant = "constant-rho"
lag_max = 3

[optimizer]
seed = 5
n_starts = 1
max_iter = 300
"#,
        out = out.display()
    );
    let config = write_config(dir.path(), &body);
    let fit = run(&["--config", config.to_str().unwrap(), "fit"]);
    assert!(fit.status.success(), "fit failed: {}", String::from_utf8_lossy(&fit.stderr));
}
