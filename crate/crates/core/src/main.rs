//! `subopt` command line: simulate strategy grids, analyze external
//! cohorts, emit standalone designs, and evaluate design variances.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use subopt::designs::{
    adaptive_two_wave, build_strata, exact_cell_strata, full_stratum_sds, neyman_allocation,
    osmac, stratification_columns, IndividualizedDesign, Mechanism, StrataAssignment,
    StratifiedDesign,
};
use subopt::harness::{
    emit_plots, run_grid, run_ingested, save_results_csv, summarize_mse, ExperimentConfig,
    IngestedConfig, ResultRow, StrategyId, SummaryRow, STRATA_CUTS,
};
use subopt::logistic::{fit_weighted_mle, influence, Dataset, InfluenceMatrix};
use subopt::simgen::{
    gen_vccc_like, load_dataset_csv, save_dataset_csv, ErrorLevel, ScenarioFamily, ScenarioSpec,
};
use subopt::variance::{
    brute_force_design_variance, poisson_variance, stratified_variance, VarianceReport,
};
use subopt::{Error, Result, RngStream};

#[derive(Parser)]
#[command(
    name = "subopt",
    about = "Optimal subsampling designs for logistic regression: \
             individualized versus stratified",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated strategy-comparison grid on simulated cohorts.
    Simulate(SimulateArgs),
    /// Run the strategy comparison on a cohort loaded from CSV.
    Analyze(AnalyzeArgs),
    /// Compute a single design for a cohort and emit it as CSV.
    Design(DesignArgs),
    /// Evaluate the closed-form variance of a design on a cohort.
    Variance(VarianceArgs),
    /// Write a synthetic validation-study-like cohort to CSV.
    GenCohort(GenCohortArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Flat key = value config file; sections define experiments and CLI
    /// flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// zeroMeanNormal | rareEvent | unequalVar | mixNormal | T3 | Exp | DiscreteX
    #[arg(long)]
    scenario: Option<ScenarioFamily>,
    /// Covariate count: 3 or 7 [default: 3]
    #[arg(long)]
    p: Option<usize>,
    /// Cohort size [default: 10000]
    #[arg(long = "N")]
    n_units: Option<usize>,
    /// Subsample budgets, comma separated [default: 1200]
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Pilot sizes, comma separated [default: 600]
    #[arg(long, value_delimiter = ',')]
    n1: Option<Vec<usize>>,
    /// Surrogate error level: low | high | none [default: low]
    #[arg(long)]
    error: Option<ErrorLevel>,
    /// Strategies (names or 1-6), comma separated [default: all six]
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<StrategyId>>,
    /// Monte Carlo replicates [default: 100]
    #[arg(long)]
    replicates: Option<usize>,
    /// Base RNG seed [default: 1]
    #[arg(long)]
    seed: Option<u64>,
    /// Hold one realized dataset fixed across replicates.
    #[arg(long)]
    fixed_x: bool,
    /// Output directory [default: subopt-out]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Cohort CSV with a y column (and s for surrogate strategies).
    #[arg(long)]
    data: PathBuf,
    /// Subsample budget.
    #[arg(long)]
    n: usize,
    /// Pilot size for pilot-based strategies.
    #[arg(long)]
    n1: usize,
    /// Strategies (names or 1-6), comma separated [default: all six]
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<StrategyId>>,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "subopt-out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignMethod {
    /// Individualized Poisson intensities from the full-data influence.
    Osmac,
    /// Influence-stratified design with Neyman allocation.
    Neyman,
    /// Adaptive two-wave stratified design (draws its own pilot).
    TwoWave,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: DesignMethod,
    /// Total budget.
    #[arg(long)]
    n: usize,
    /// Pilot size (two-wave only).
    #[arg(long, default_value_t = 0)]
    n1: usize,
    /// Seed for the two-wave pilot draw.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Poisson,
    WithReplacement,
}

#[derive(Args)]
struct VarianceArgs {
    #[arg(long)]
    data: PathBuf,
    /// Design CSV: either unit_id,pi or unit_id,stratum,allocation.
    #[arg(long)]
    design: PathBuf,
    /// Sampling mechanism for intensity designs.
    #[arg(long, value_enum, default_value_t = MechanismArg::Poisson)]
    mechanism: MechanismArg,
}

#[derive(Args)]
struct GenCohortArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Design(args) => cmd_design(args),
        Command::Variance(args) => cmd_variance(args),
        Command::GenCohort(args) => cmd_gen_cohort(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// 2 = configuration error, 3 = data error, 4 = numerical failure.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::ParseError { .. }
        | Error::NonBinaryOutcome { .. }
        | Error::MissingOutcomeColumns
        | Error::EmptyInput
        | Error::Io(_)
        | Error::Csv(_) => 3,
        Error::AllReplicatesFailed
        | Error::EmptyCell(_)
        | Error::NotPositiveDefinite { .. }
        | Error::NotSymmetric
        | Error::DegenerateDesign
        | Error::AllZeroNorms
        | Error::NegativeRadicand(_)
        | Error::EnumerationTooLarge(_) => 4,
        _ => 2,
    }
}

/// One fully merged simulate experiment (defaults <- config file <- flags).
struct SimulatePlan {
    name: Option<String>,
    scenario: ScenarioFamily,
    p: usize,
    n_units: usize,
    budgets: Vec<usize>,
    pilots: Vec<usize>,
    error: ErrorLevel,
    strategies: Vec<StrategyId>,
    replicates: usize,
    seed: u64,
    fixed_x: bool,
    out: PathBuf,
}

const CONFIG_KEYS: [&str; 11] = [
    "scenario",
    "p",
    "N",
    "n",
    "n1",
    "error",
    "strategies",
    "replicates",
    "seed",
    "fixed_x",
    "out",
];

/// One `[section]` of the config file: its name (absent before the first
/// header) and its key/value settings.
type ConfigSection = (Option<String>, BTreeMap<String, String>);

/// Parses the flat key = value config dialect: optional `[section]`
/// headers naming experiments, `#` comments, unknown keys rejected.
fn parse_config_file(path: &Path) -> Result<Vec<ConfigSection>> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut sections: Vec<ConfigSection> = Vec::new();
    let mut current: Option<ConfigSection> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let row = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            if let Some(done) = current.take() {
                sections.push(done);
            }
            current = Some((Some(name.trim().to_string()), BTreeMap::new()));
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{display}:{row}: expected `key = value`, got `{line}`"))
        })?;
        let key = key.trim().to_string();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "{display}:{row}: unknown config key `{key}`"
            )));
        }
        current
            .get_or_insert_with(|| (None, BTreeMap::new()))
            .1
            .insert(key, value.trim().to_string());
    }
    if let Some(done) = current.take() {
        sections.push(done);
    }
    if sections.is_empty() {
        return Err(Error::Config(format!(
            "{display}: config file defines no settings"
        )));
    }
    Ok(sections)
}

fn config_parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("key `{key}`: {e}")))
}

fn config_parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|item| config_parse(key, item.trim()))
        .collect()
}

/// Resolves one experiment: hard defaults, then config-file values, then
/// command-line flags.
fn merge_plan(
    args: &SimulateArgs,
    name: Option<String>,
    file: &BTreeMap<String, String>,
) -> Result<SimulatePlan> {
    let mut plan = SimulatePlan {
        name,
        scenario: ScenarioFamily::ZeroMeanNormal,
        p: 3,
        n_units: 10_000,
        budgets: vec![1200],
        pilots: vec![600],
        error: ErrorLevel::Low,
        strategies: StrategyId::ALL.to_vec(),
        replicates: 100,
        seed: 1,
        fixed_x: false,
        out: PathBuf::from("subopt-out"),
    };
    for (key, value) in file {
        match key.as_str() {
            "scenario" => plan.scenario = config_parse(key, value)?,
            "p" => plan.p = config_parse(key, value)?,
            "N" => plan.n_units = config_parse(key, value)?,
            "n" => plan.budgets = config_parse_list(key, value)?,
            "n1" => plan.pilots = config_parse_list(key, value)?,
            "error" => plan.error = config_parse(key, value)?,
            "strategies" => plan.strategies = config_parse_list(key, value)?,
            "replicates" => plan.replicates = config_parse(key, value)?,
            "seed" => plan.seed = config_parse(key, value)?,
            "fixed_x" => plan.fixed_x = config_parse(key, value)?,
            "out" => plan.out = PathBuf::from(value),
            _ => unreachable!("unknown keys rejected at parse time"),
        }
    }
    if let Some(v) = args.scenario {
        plan.scenario = v;
    }
    if let Some(v) = args.p {
        plan.p = v;
    }
    if let Some(v) = args.n_units {
        plan.n_units = v;
    }
    if let Some(v) = &args.n {
        plan.budgets = v.clone();
    }
    if let Some(v) = &args.n1 {
        plan.pilots = v.clone();
    }
    if let Some(v) = args.error {
        plan.error = v;
    }
    if let Some(v) = &args.strategies {
        plan.strategies = v.clone();
    }
    if let Some(v) = args.replicates {
        plan.replicates = v;
    }
    if let Some(v) = args.seed {
        plan.seed = v;
    }
    if args.fixed_x {
        plan.fixed_x = true;
    }
    if let Some(v) = &args.out {
        plan.out = v.clone();
    }
    Ok(plan)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let sections = match &args.config {
        Some(path) => parse_config_file(path)?,
        None => vec![(None, BTreeMap::new())],
    };
    let multi = sections.len() > 1;
    for (name, file) in sections {
        let mut plan = merge_plan(&args, name, &file)?;
        if multi {
            let stem = plan.name.clone().unwrap_or_else(|| "experiment".into());
            plan.out = plan.out.join(stem);
        }
        run_simulate_plan(&plan)?;
    }
    Ok(())
}

fn run_simulate_plan(plan: &SimulatePlan) -> Result<()> {
    let scenario = ScenarioSpec::benchmark(plan.scenario, plan.p, plan.n_units, plan.error)?;
    let mut rows: Vec<ResultRow> = Vec::new();
    for &n in &plan.budgets {
        for &n1 in &plan.pilots {
            let config = ExperimentConfig {
                scenario: scenario.clone(),
                n,
                n1,
                strategies: plan.strategies.clone(),
                replicates: plan.replicates,
                base_seed: plan.seed,
                fixed_x: plan.fixed_x,
                output_dir: Some(plan.out.clone()),
            };
            rows.extend(run_grid(&config)?);
        }
    }
    finish_run(&rows, &plan.out)
}

/// Persists rows + summary + plots and prints the summary table.
fn finish_run(rows: &[ResultRow], out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let results_path = out.join("results.csv");
    save_results_csv(rows, &results_path)?;
    println!("wrote {}", results_path.display());
    if rows.iter().all(|r| !r.converged) {
        return Err(Error::AllReplicatesFailed);
    }
    let summary = summarize_mse(rows)?;
    let files = emit_plots(&summary, out)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    print_summary(&summary);
    Ok(())
}

fn print_summary(summary: &[SummaryRow]) {
    println!(
        "\n{:<16} {:>5} {:>5} {:<13} {:>13} {:>13} {:>5} {:>5}",
        "scenario", "n", "n1", "strategy", "mse", "var_sum", "used", "excl"
    );
    for row in summary {
        let vs = row
            .variance_sum
            .map(|v| format!("{v:.6e}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<16} {:>5} {:>5} {:<13} {:>13.6e} {:>13} {:>5} {:>5}",
            row.scenario, row.n, row.n1, row.strategy.to_string(), row.mse, vs,
            row.replicates_used, row.excluded
        );
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let data = load_dataset_csv(&args.data)?;
    let label = args
        .data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cohort".into());
    let config = IngestedConfig {
        label,
        n: args.n,
        n1: args.n1,
        strategies: args.strategies.unwrap_or_else(|| StrategyId::ALL.to_vec()),
        replicates: args.replicates,
        base_seed: args.seed,
    };
    let rows = run_ingested(&data, &config)?;
    finish_run(&rows, &args.out)
}

fn full_influence(data: &Dataset) -> Result<InfluenceMatrix> {
    let y = data.y.as_deref().ok_or(Error::MissingOutcomeColumns)?;
    let full = fit_weighted_mle(&data.x, y, &vec![1.0; data.n()])?;
    influence(&data.x, y, &full)
}

fn cmd_design(args: DesignArgs) -> Result<()> {
    let data = load_dataset_csv(&args.data)?;
    let y = data.y.as_deref().ok_or(Error::MissingOutcomeColumns)?;
    let mut lines = Vec::new();
    match args.method {
        DesignMethod::Osmac => {
            let inf = full_influence(&data)?;
            let design = osmac(&inf.norms, args.n)?;
            lines.push("unit_id,pi".to_string());
            for (i, pi) in design.pi.iter().enumerate() {
                lines.push(format!("{i},{pi:?}"));
            }
        }
        DesignMethod::Neyman => {
            let inf = full_influence(&data)?;
            let strata = if has_few_exact_cells(&data) {
                exact_cell_strata(&data.x, y)?
            } else {
                build_strata(y, &stratification_columns(&inf.h), STRATA_CUTS)?
            };
            let sds = full_stratum_sds(&strata, &inf.h);
            let design = neyman_allocation(&strata, &sds, args.n)?;
            push_stratified_lines(&mut lines, &design.strata, &design.allocation);
        }
        DesignMethod::TwoWave => {
            let mut rng = RngStream::new(args.seed, 0);
            let mut observe = |i: usize| y[i];
            let two = adaptive_two_wave(&data, args.n1, args.n, STRATA_CUTS, &mut rng, &mut observe)?;
            let combined = two.combined_allocation();
            push_stratified_lines(&mut lines, &two.wave1.strata, &combined);
        }
    }
    emit_lines(&lines, args.out.as_deref())
}

fn has_few_exact_cells(data: &Dataset) -> bool {
    let y = match &data.y {
        Some(y) => y,
        None => return false,
    };
    let mut seen = std::collections::BTreeSet::new();
    for (i, &yi) in y.iter().enumerate() {
        let key: (u8, Vec<u64>) = (yi, data.x.row(i).iter().map(|v| v.to_bits()).collect());
        seen.insert(key);
        if seen.len() > 54 {
            return false;
        }
    }
    true
}

fn push_stratified_lines(lines: &mut Vec<String>, strata: &StrataAssignment, allocation: &[usize]) {
    lines.push("unit_id,stratum,allocation".to_string());
    for (i, &k) in strata.stratum_of.iter().enumerate() {
        lines.push(format!("{i},{k},{}", allocation[k]));
    }
}

fn emit_lines(lines: &[String], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(fs::File::create(path)?);
            for line in lines {
                writeln!(w, "{line}")?;
            }
            w.flush()?;
            println!("wrote {}", path.display());
        }
        None => {
            for line in lines {
                println!("{line}");
            }
        }
    }
    Ok(())
}

/// A design read back from CSV: intensities or strata + allocation.
enum LoadedDesign {
    Intensities(Vec<f64>),
    Stratified(StratifiedDesign),
}

fn load_design_csv(path: &Path, n_units: usize) -> Result<LoadedDesign> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let unit_col = col("unit_id").ok_or_else(|| Error::ParseError {
        path: display.clone(),
        row: 0,
        msg: "design CSV needs a unit_id column".into(),
    })?;
    let parse_float = |field: &str, row: usize| -> Result<f64> {
        field.parse().map_err(|e| Error::ParseError {
            path: display.clone(),
            row,
            msg: format!("{e}"),
        })
    };
    let parse_index = |field: &str, row: usize| -> Result<usize> {
        field.parse().map_err(|e| Error::ParseError {
            path: display.clone(),
            row,
            msg: format!("{e}"),
        })
    };

    if let Some(pi_col) = col("pi") {
        let mut pi = vec![f64::NAN; n_units];
        for (idx, record) in reader.records().enumerate() {
            let record = record?;
            let row = idx + 1;
            let unit = parse_index(&record[unit_col], row)?;
            if unit >= n_units {
                return Err(Error::ParseError {
                    path: display.clone(),
                    row,
                    msg: format!("unit_id {unit} out of range for {n_units} units"),
                });
            }
            pi[unit] = parse_float(&record[pi_col], row)?;
        }
        if pi.iter().any(|v| v.is_nan()) {
            return Err(Error::ParseError {
                path: display,
                row: 0,
                msg: "design CSV does not cover every unit".into(),
            });
        }
        return Ok(LoadedDesign::Intensities(pi));
    }

    let stratum_col = col("stratum").ok_or_else(|| Error::ParseError {
        path: display.clone(),
        row: 0,
        msg: "design CSV needs either a pi column or stratum,allocation columns".into(),
    })?;
    let alloc_col = col("allocation").ok_or_else(|| Error::ParseError {
        path: display.clone(),
        row: 0,
        msg: "stratified design CSV needs an allocation column".into(),
    })?;
    let mut stratum_of = vec![usize::MAX; n_units];
    let mut alloc_of: BTreeMap<usize, usize> = BTreeMap::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        let unit = parse_index(&record[unit_col], row)?;
        let k = parse_index(&record[stratum_col], row)?;
        let a = parse_index(&record[alloc_col], row)?;
        if unit >= n_units {
            return Err(Error::ParseError {
                path: display.clone(),
                row,
                msg: format!("unit_id {unit} out of range for {n_units} units"),
            });
        }
        stratum_of[unit] = k;
        if let Some(prev) = alloc_of.insert(k, a) {
            if prev != a {
                return Err(Error::ParseError {
                    path: display.clone(),
                    row,
                    msg: format!("stratum {k} has conflicting allocations {prev} and {a}"),
                });
            }
        }
    }
    let k = alloc_of.keys().max().map_or(0, |m| m + 1);
    if stratum_of.contains(&usize::MAX) || alloc_of.len() != k {
        return Err(Error::ParseError {
            path: display,
            row: 0,
            msg: "design CSV must cover every unit with dense stratum ids".into(),
        });
    }
    let mut counts = vec![0usize; k];
    for &s in &stratum_of {
        counts[s] += 1;
    }
    let labels = (0..k).map(|i| format!("stratum {i}")).collect();
    let strata = StrataAssignment {
        stratum_of,
        k,
        counts,
        labels,
    };
    let allocation: Vec<usize> = (0..k).map(|i| alloc_of[&i]).collect();
    Ok(LoadedDesign::Stratified(StratifiedDesign::from_parts(
        strata, allocation,
    )?))
}

fn cmd_variance(args: VarianceArgs) -> Result<()> {
    let data = load_dataset_csv(&args.data)?;
    let inf = full_influence(&data)?;
    let report: VarianceReport = match load_design_csv(&args.design, data.n())? {
        LoadedDesign::Intensities(pi) => match args.mechanism {
            MechanismArg::Poisson => poisson_variance(&inf, &pi)?,
            MechanismArg::WithReplacement => {
                let design = IndividualizedDesign {
                    pi,
                    mechanism: Mechanism::WithReplacement,
                };
                brute_force_design_variance(&inf, &design)?
            }
        },
        LoadedDesign::Stratified(design) => stratified_variance(&inf, &design)?,
    };
    println!("design: {}", report.design_tag);
    println!("trace: {:?}", report.trace);
    let d = report.matrix.rows();
    for r in 0..d {
        let line: Vec<String> = (0..d).map(|c| format!("{:?}", report.matrix.get(r, c))).collect();
        println!("{}", line.join(","));
    }
    Ok(())
}

fn cmd_gen_cohort(args: GenCohortArgs) -> Result<()> {
    let data = gen_vccc_like(&mut RngStream::new(args.seed, 0))?;
    save_dataset_csv(&data, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
