//! Black-box tests of the `subopt` binary: subcommand plumbing, output
//! files, and the exit-code contract (0 ok, 2 config, 3 data, 4 numerical).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn subopt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subopt"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_writes_results_summary_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = subopt(
        &[
            "simulate",
            "--scenario",
            "zeroMeanNormal",
            "--N",
            "1500",
            "--n",
            "300",
            "--n1",
            "150",
            "--strategies",
            "CC_TRUE,STRAT_ORACLE",
            "--replicates",
            "5",
            "--seed",
            "7",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let results = fs::read_to_string(dir.path().join("run/results.csv")).unwrap();
    let header = results.lines().next().unwrap();
    assert_eq!(
        header,
        "scenario,p,error_level,n,n1,strategy,replicate,realized_size,converged,\
         beta_hat_0,beta_hat_1,beta_hat_2,beta_hat_3,sq_error"
    );
    assert_eq!(results.lines().count(), 1 + 5 * 2);
    assert!(dir.path().join("run/summary.csv").exists());
    assert!(dir.path().join("run/mse_zeroMeanNormal_low.svg").exists());
    assert!(stdout(&out).contains("STRAT_ORACLE"));
}

#[test]
fn config_sections_run_as_separate_experiments() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("grid.conf"),
        "# shared settings come from CLI defaults\n\
         [first]\n\
         scenario = zeroMeanNormal\n\
         N = 1200\n\
         n = 240\n\
         n1 = 120\n\
         strategies = 1\n\
         replicates = 3\n\
         seed = 5\n\
         \n\
         [second]\n\
         scenario = Exp\n\
         N = 1200\n\
         n = 240\n\
         n1 = 120\n\
         strategies = CC_TRUE,OSMAC_ORACLE\n\
         replicates = 3\n\
         seed = 5\n",
    )
    .unwrap();
    let out = subopt(
        &["simulate", "--config", "grid.conf", "--out", "grid"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(dir.path().join("grid/first/results.csv").exists());
    assert!(dir.path().join("grid/second/results.csv").exists());

    // a CLI flag overrides every section's file value
    let out = subopt(
        &[
            "simulate",
            "--config",
            "grid.conf",
            "--replicates",
            "2",
            "--out",
            "grid2",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let results = fs::read_to_string(dir.path().join("grid2/first/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2);
}

#[test]
fn analyze_runs_the_sweep_on_a_generated_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let gen = subopt(&["gen-cohort", "--seed", "3", "--out", "cohort.csv"], dir.path());
    assert!(gen.status.success(), "stderr: {}", stderr(&gen));

    let out = subopt(
        &[
            "analyze",
            "--data",
            "cohort.csv",
            "--n",
            "200",
            "--n1",
            "100",
            "--strategies",
            "2,6",
            "--replicates",
            "4",
            "--seed",
            "11",
            "--out",
            "ana",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let results = fs::read_to_string(dir.path().join("ana/results.csv")).unwrap();
    assert!(results.lines().skip(1).all(|l| l.starts_with("cohort,")));
    assert!(results.contains("STRAT_PILOT"));
}

#[test]
fn design_then_variance_roundtrip_for_all_methods() {
    let dir = tempfile::tempdir().unwrap();
    let gen = subopt(&["gen-cohort", "--seed", "4", "--out", "cohort.csv"], dir.path());
    assert!(gen.status.success());

    let osmac = subopt(
        &["design", "--data", "cohort.csv", "--method", "osmac", "--n", "150", "--out", "pi.csv"],
        dir.path(),
    );
    assert!(osmac.status.success(), "stderr: {}", stderr(&osmac));
    let pi = fs::read_to_string(dir.path().join("pi.csv")).unwrap();
    assert_eq!(pi.lines().next().unwrap(), "unit_id,pi");

    let poisson = subopt(
        &["variance", "--data", "cohort.csv", "--design", "pi.csv"],
        dir.path(),
    );
    assert!(poisson.status.success(), "stderr: {}", stderr(&poisson));
    assert!(stdout(&poisson).contains("design: poisson"));
    assert!(stdout(&poisson).contains("trace:"));

    let wr = subopt(
        &[
            "variance",
            "--data",
            "cohort.csv",
            "--design",
            "pi.csv",
            "--mechanism",
            "with-replacement",
        ],
        dir.path(),
    );
    assert!(wr.status.success(), "stderr: {}", stderr(&wr));
    assert!(stdout(&wr).contains("with-replacement"));

    for method in ["neyman", "two-wave"] {
        let design = subopt(
            &[
                "design",
                "--data",
                "cohort.csv",
                "--method",
                method,
                "--n",
                "150",
                "--n1",
                "75",
                "--out",
                "strat.csv",
            ],
            dir.path(),
        );
        assert!(design.status.success(), "{method} stderr: {}", stderr(&design));
        let text = fs::read_to_string(dir.path().join("strat.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), "unit_id,stratum,allocation");

        let var = subopt(
            &["variance", "--data", "cohort.csv", "--design", "strat.csv"],
            dir.path(),
        );
        assert!(var.status.success(), "{method} stderr: {}", stderr(&var));
        assert!(stdout(&var).contains("design: stratified"));
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // clap-level: unknown flag
    let out = subopt(&["simulate", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    // value-level: unknown scenario name
    let out = subopt(
        &["simulate", "--scenario", "noSuchScenario", "--replicates", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));

    // semantic: DiscreteX only supports three covariates
    let out = subopt(
        &[
            "simulate", "--scenario", "DiscreteX", "--p", "7", "--N", "500", "--n", "100",
            "--n1", "50", "--replicates", "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));

    // config file with an unknown key
    fs::write(dir.path().join("bad.conf"), "scenarios = typo\n").unwrap();
    let out = subopt(&["simulate", "--config", "bad.conf"], dir.path());
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("unknown config key"));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = subopt(
        &["analyze", "--data", "missing.csv", "--n", "100", "--n1", "50"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));

    fs::write(
        dir.path().join("bad.csv"),
        "y,x1\n1,0.5\n2,0.25\n0,1.5\n1,-0.5\n",
    )
    .unwrap();
    let out = subopt(
        &["analyze", "--data", "bad.csv", "--n", "3", "--n1", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("non-binary outcome"));
}

#[test]
fn numerical_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    // duplicated covariate column: the information matrix is singular, so
    // the full-cohort fit behind `variance` cannot proceed
    let mut csv = String::from("y,x1,x2\n");
    for i in 0..12 {
        let v = f64::from(i) / 4.0 - 1.5;
        csv.push_str(&format!("{},{v},{v}\n", i % 2));
    }
    fs::write(dir.path().join("collinear.csv"), csv).unwrap();
    fs::write(dir.path().join("design.csv"), {
        let mut d = String::from("unit_id,pi\n");
        for i in 0..12 {
            d.push_str(&format!("{i},0.5\n"));
        }
        d
    })
    .unwrap();
    let out = subopt(
        &["variance", "--data", "collinear.csv", "--design", "design.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
}
