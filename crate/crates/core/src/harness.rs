//! End-to-end subsampling strategies and the Monte Carlo experiment
//! harness: six strategy pipelines sharing one cohort, replicated grids
//! with deterministic per-replicate RNG streams, empirical-MSE summaries,
//! paired sign tests, results persistence, and static SVG charts.

use crate::designs::{
    adaptive_two_wave, build_strata, case_control, exact_cell_strata, full_stratum_sds,
    neyman_allocation, osmac, ossat, stratification_columns,
};
use crate::error::{Error, Result};
use crate::logistic::{fit_weighted_mle, influence, m_x_at, predict, Dataset};
use crate::numerics::{Matrix, RngStream};
use crate::sampling::{draw_poisson, draw_second_wave, draw_stratified, draw_with_replacement};
use crate::simgen::{gen_dataset, ScenarioSpec};
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Quantile cuts used for influence-based stratification throughout.
pub const STRATA_CUTS: (f64, f64) = (0.2, 0.8);

/// A cohort with at most this many distinct `(x, y)` patterns is treated as
/// discrete, and oracle stratification uses the exact cells instead of
/// quantile bins (54 is the most cells the quantile construction can make).
const EXACT_CELL_LIMIT: usize = 54;

/// RNG streams reserved per replicate: stream 0 generates the data, streams
/// 1-6 drive the six strategies, the eighth is spare. Fixing the layout
/// makes every (replicate, strategy) pair reproducible in isolation.
pub const STREAMS_PER_REPLICATE: u64 = 8;

/// The six subsampling strategies under comparison. Oracle strategies need
/// the true outcome for every unit up front; the others only read outcomes
/// of sampled units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyId {
    /// 1: case-control on the true outcome.
    CcTrue,
    /// 2: case-control on the surrogate.
    CcSurrogate,
    /// 3: individualized intensities from the full-data influence (Poisson).
    OsmacOracle,
    /// 4: surrogate-assisted two-step individualized design with a pilot.
    OssatPilot,
    /// 5: influence-stratified sampling with oracle Neyman allocation.
    StratOracle,
    /// 6: adaptive two-wave stratified sampling from a pilot.
    StratPilot,
}

impl StrategyId {
    pub const ALL: [StrategyId; 6] = [
        StrategyId::CcTrue,
        StrategyId::CcSurrogate,
        StrategyId::OsmacOracle,
        StrategyId::OssatPilot,
        StrategyId::StratOracle,
        StrategyId::StratPilot,
    ];

    /// Needs `y` observed for the whole cohort before sampling.
    pub fn oracle(self) -> bool {
        matches!(
            self,
            StrategyId::CcTrue | StrategyId::OsmacOracle | StrategyId::StratOracle
        )
    }

    /// Uses the surrogate outcome column.
    pub fn needs_surrogate(self) -> bool {
        matches!(
            self,
            StrategyId::CcSurrogate | StrategyId::OssatPilot | StrategyId::StratPilot
        )
    }

    /// Uses a pilot of size `n1` inside the budget.
    pub fn uses_pilot(self) -> bool {
        matches!(self, StrategyId::OssatPilot | StrategyId::StratPilot)
    }

    fn ordinal(self) -> usize {
        StrategyId::ALL.iter().position(|&s| s == self).unwrap()
    }

    fn stream_offset(self) -> u64 {
        self.ordinal() as u64 + 1
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyId::CcTrue => "CC_TRUE",
            StrategyId::CcSurrogate => "CC_SURROGATE",
            StrategyId::OsmacOracle => "OSMAC_ORACLE",
            StrategyId::OssatPilot => "OSSAT_PILOT",
            StrategyId::StratOracle => "STRAT_ORACLE",
            StrategyId::StratPilot => "STRAT_PILOT",
        })
    }
}

impl FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CC_TRUE" | "1" => Ok(StrategyId::CcTrue),
            "CC_SURROGATE" | "2" => Ok(StrategyId::CcSurrogate),
            "OSMAC_ORACLE" | "3" => Ok(StrategyId::OsmacOracle),
            "OSSAT_PILOT" | "4" => Ok(StrategyId::OssatPilot),
            "STRAT_ORACLE" | "5" => Ok(StrategyId::StratOracle),
            "STRAT_PILOT" | "6" => Ok(StrategyId::StratPilot),
            other => Err(Error::ParseError {
                path: "<strategy>".into(),
                row: 0,
                msg: format!("unknown strategy `{other}`"),
            }),
        }
    }
}

/// Access firewall for the true outcome. Strategies that must stay feasible
/// without full-cohort `y` route every read through this guard, which only
/// reveals outcomes of units unlocked by a realized draw. Reading a locked
/// unit panics, turning any leak of unobserved outcome information into a
/// loud failure instead of a silent bias.
pub struct OutcomeGuard<'a> {
    y: &'a [u8],
    unlocked: Vec<bool>,
}

impl<'a> OutcomeGuard<'a> {
    pub fn sealed(y: &'a [u8]) -> Self {
        Self {
            unlocked: vec![false; y.len()],
            y,
        }
    }

    /// Marks sampled units as measured.
    pub fn unlock(&mut self, indices: &[usize]) {
        for &i in indices {
            self.unlocked[i] = true;
        }
    }

    /// Unlocks and reads in one step — the measurement callback handed to
    /// pilot-driven designs.
    pub fn observe(&mut self, i: usize) -> u8 {
        self.unlocked[i] = true;
        self.y[i]
    }

    pub fn get(&self, i: usize) -> u8 {
        assert!(
            self.unlocked[i],
            "outcome of unit {i} read without the unit being sampled"
        );
        self.y[i]
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.get(i)).collect()
    }

    pub fn unlocked_count(&self) -> usize {
        self.unlocked.iter().filter(|&&u| u).count()
    }
}

/// Output of one strategy on one cohort.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub beta_hat: Vec<f64>,
    pub realized_size: usize,
    pub converged: bool,
}

fn need_y(data: &Dataset) -> Result<&[u8]> {
    data.y.as_deref().ok_or(Error::MissingOutcomeColumns)
}

fn need_s(data: &Dataset) -> Result<&[u8]> {
    data.s.as_deref().ok_or(Error::MissingOutcomeColumns)
}

fn subset_rows(x: &Matrix, indices: &[usize]) -> Matrix {
    let rows: Vec<Vec<f64>> = indices.iter().map(|&i| x.row(i).to_vec()).collect();
    Matrix::from_rows(&rows)
}

/// `x` with one extra trailing column holding the surrogate indicator.
fn append_surrogate_column(x: &Matrix, s: &[u8]) -> Matrix {
    let mut rows = Vec::with_capacity(x.rows());
    for (i, &si) in s.iter().enumerate() {
        let mut row = x.row(i).to_vec();
        row.push(f64::from(si));
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

fn exact_cells_feasible(x: &Matrix, y: &[u8]) -> bool {
    let mut seen: BTreeSet<(u8, Vec<u64>)> = BTreeSet::new();
    for (i, &yi) in y.iter().enumerate() {
        let key = (yi, x.row(i).iter().map(|v| v.to_bits()).collect());
        seen.insert(key);
        if seen.len() > EXACT_CELL_LIMIT {
            return false;
        }
    }
    true
}

/// Runs one strategy end to end on one cohort: design, draw, and weighted
/// fit. `n` is the total measurement budget and `n1` the pilot share for
/// the pilot-based strategies (ignored by the others). Non-convergence of
/// any fit along the way is reported through the `converged` flag, not as
/// an error.
pub fn run_strategy(
    data: &Dataset,
    strategy: StrategyId,
    n: usize,
    n1: usize,
    rng: &mut RngStream,
) -> Result<StrategyRun> {
    let x = &data.x;
    let unit = vec![1.0; data.n()];
    match strategy {
        StrategyId::CcTrue => {
            let y = need_y(data)?;
            let design = case_control(y, n)?;
            let draw = draw_stratified(&design, rng)?;
            let y_sub: Vec<u8> = draw.indices.iter().map(|&i| y[i]).collect();
            let fit = fit_weighted_mle(&subset_rows(x, &draw.indices), &y_sub, &draw.weight)?;
            Ok(StrategyRun {
                beta_hat: fit.beta,
                realized_size: draw.realized_size,
                converged: fit.converged,
            })
        }
        StrategyId::CcSurrogate => {
            let s = need_s(data)?;
            let mut guard = OutcomeGuard::sealed(need_y(data)?);
            let design = case_control(s, n)?;
            let draw = draw_stratified(&design, rng)?;
            guard.unlock(&draw.indices);
            let y_sub = guard.subset(&draw.indices);
            let fit = fit_weighted_mle(&subset_rows(x, &draw.indices), &y_sub, &draw.weight)?;
            Ok(StrategyRun {
                beta_hat: fit.beta,
                realized_size: draw.realized_size,
                converged: fit.converged,
            })
        }
        StrategyId::OsmacOracle => {
            let y = need_y(data)?;
            let full = fit_weighted_mle(x, y, &unit)?;
            let inf = influence(x, y, &full)?;
            let design = osmac(&inf.norms, n)?;
            let draw = draw_poisson(&design, rng)?;
            let y_sub: Vec<u8> = draw.indices.iter().map(|&i| y[i]).collect();
            let fit = fit_weighted_mle(&subset_rows(x, &draw.indices), &y_sub, &draw.weight)?;
            Ok(StrategyRun {
                beta_hat: fit.beta,
                realized_size: draw.realized_size,
                converged: full.converged && fit.converged,
            })
        }
        StrategyId::OssatPilot => {
            let s = need_s(data)?;
            let mut guard = OutcomeGuard::sealed(need_y(data)?);
            if n1 == 0 || n1 >= n {
                return Err(Error::InfeasibleBudget { n: n1, cap: n - 1 });
            }

            // pilot: case-control on the surrogate, outcomes measured on
            // the pilot only
            let pilot_design = case_control(s, n1)?;
            let pilot = draw_stratified(&pilot_design, rng)?;
            guard.unlock(&pilot.indices);
            let y_pilot = guard.subset(&pilot.indices);
            let x_pilot = subset_rows(x, &pilot.indices);
            let fit_p = fit_weighted_mle(&x_pilot, &y_pilot, &pilot.weight)?;

            // surrogate-informed outcome model y ~ (x, s) on the pilot
            let xs = append_surrogate_column(x, s);
            let fit_ps =
                fit_weighted_mle(&subset_rows(&xs, &pilot.indices), &y_pilot, &pilot.weight)?;

            let p_hat = predict(x, &fit_p.beta);
            let p_s_hat = predict(&xs, &fit_ps.beta);
            let m_x = m_x_at(x, &fit_p.beta);
            let n2 = n - n1;
            let design2 = ossat(&p_hat, &p_s_hat, x, &m_x, n2)?;
            let draw2 = draw_with_replacement(&design2, n2, rng)?;
            guard.unlock(&draw2.indices);

            // pooled fit: weight = draws / (expected draws across phases)
            let incl1 = pilot_design.inclusion_probabilities();
            let mut draws: BTreeMap<usize, f64> = BTreeMap::new();
            for &i in &pilot.indices {
                *draws.entry(i).or_insert(0.0) += 1.0;
            }
            for (&i, &m) in draw2.indices.iter().zip(&draw2.multiplicity) {
                *draws.entry(i).or_insert(0.0) += f64::from(m);
            }
            let indices: Vec<usize> = draws.keys().copied().collect();
            let weights: Vec<f64> = indices
                .iter()
                .map(|&i| draws[&i] / (incl1[i] + design2.pi[i]))
                .collect();
            let y_sub = guard.subset(&indices);
            let fit = fit_weighted_mle(&subset_rows(x, &indices), &y_sub, &weights)?;
            Ok(StrategyRun {
                beta_hat: fit.beta,
                realized_size: pilot.realized_size + draw2.realized_size,
                converged: fit_p.converged && fit_ps.converged && fit.converged,
            })
        }
        StrategyId::StratOracle => {
            let y = need_y(data)?;
            let full = fit_weighted_mle(x, y, &unit)?;
            let inf = influence(x, y, &full)?;
            let strata = if exact_cells_feasible(x, y) {
                exact_cell_strata(x, y)?
            } else {
                build_strata(y, &stratification_columns(&inf.h), STRATA_CUTS)?
            };
            let sds = full_stratum_sds(&strata, &inf.h);
            let design = neyman_allocation(&strata, &sds, n)?;
            let draw = draw_stratified(&design, rng)?;
            let y_sub: Vec<u8> = draw.indices.iter().map(|&i| y[i]).collect();
            let fit = fit_weighted_mle(&subset_rows(x, &draw.indices), &y_sub, &draw.weight)?;
            Ok(StrategyRun {
                beta_hat: fit.beta,
                realized_size: draw.realized_size,
                converged: full.converged && fit.converged,
            })
        }
        StrategyId::StratPilot => {
            need_s(data)?;
            let mut guard = OutcomeGuard::sealed(need_y(data)?);
            let mut requested: Vec<usize> = Vec::new();
            let two = {
                let mut observe = |i: usize| {
                    requested.push(i);
                    guard.observe(i)
                };
                adaptive_two_wave(data, n1, n, STRATA_CUTS, rng, &mut observe)?
            };
            for &i in &requested {
                assert!(
                    two.wave1_draw.indices.binary_search(&i).is_ok(),
                    "adaptive design requested the outcome of unit {i} outside its pilot"
                );
            }
            let wave2 = draw_second_wave(&two, rng)?;
            guard.unlock(&wave2.indices);

            let strata = &two.wave1.strata;
            let combined = two.combined_allocation();
            let mut indices: Vec<usize> = two
                .wave1_draw
                .indices
                .iter()
                .chain(&wave2.indices)
                .copied()
                .collect();
            indices.sort_unstable();
            let weights: Vec<f64> = indices
                .iter()
                .map(|&i| {
                    let k = strata.stratum_of[i];
                    strata.counts[k] as f64 / combined[k] as f64
                })
                .collect();
            let y_sub = guard.subset(&indices);
            let fit = fit_weighted_mle(&subset_rows(x, &indices), &y_sub, &weights)?;
            Ok(StrategyRun {
                realized_size: indices.len(),
                beta_hat: fit.beta,
                converged: fit.converged,
            })
        }
    }
}

/// One replicated experiment cell: a scenario, one budget pair, a strategy
/// set, and the RNG seed.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    /// Total measurement budget per replicate.
    pub n: usize,
    /// Pilot share of the budget for pilot-based strategies.
    pub n1: usize,
    pub strategies: Vec<StrategyId>,
    pub replicates: usize,
    pub base_seed: u64,
    /// Reuse one realized dataset across replicates, isolating the
    /// subsampling variance.
    pub fixed_x: bool,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::DimensionMismatch(
                "config: replicates must be at least 1".into(),
            ));
        }
        if self.strategies.is_empty() {
            return Err(Error::DimensionMismatch(
                "config: at least one strategy is required".into(),
            ));
        }
        if self.n1 >= self.n || self.n > self.scenario.n_units {
            return Err(Error::InfeasibleBudget {
                n: self.n,
                cap: self.scenario.n_units,
            });
        }
        self.scenario.validate()
    }
}

/// One strategy on one replicate, with everything needed to recompute the
/// summary tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub p: usize,
    pub error_level: String,
    pub n: usize,
    pub n1: usize,
    pub strategy: StrategyId,
    pub replicate: usize,
    pub realized_size: usize,
    pub converged: bool,
    pub beta_hat: Vec<f64>,
    /// Squared distance of `beta_hat` from the reference coefficients.
    pub sq_error: f64,
}

#[derive(Clone)]
struct RowTags {
    scenario: String,
    p: usize,
    error_level: String,
    n: usize,
    n1: usize,
}

fn squared_error(beta: &[f64], reference: &[f64]) -> f64 {
    debug_assert_eq!(beta.len(), reference.len());
    beta.iter()
        .zip(reference)
        .map(|(b, r)| (b - r) * (b - r))
        .sum()
}

/// Design or solver breakdowns that should mark a replicate as failed
/// rather than abort the whole grid.
fn is_numerical_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::NotPositiveDefinite { .. }
            | Error::NotSymmetric
            | Error::DegenerateDesign
            | Error::AllZeroNorms
            | Error::NegativeRadicand(_)
    )
}

#[allow(clippy::too_many_arguments)]
fn replicate_rows(
    data: &Dataset,
    beta_ref: &[f64],
    tags: &RowTags,
    strategies: &[StrategyId],
    replicate: usize,
    base_seed: u64,
    n: usize,
    n1: usize,
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let mut rng = RngStream::new(
            base_seed,
            replicate as u64 * STREAMS_PER_REPLICATE + strategy.stream_offset(),
        );
        let (beta_hat, realized_size, converged) =
            match run_strategy(data, strategy, n, n1, &mut rng) {
                Ok(run) => (run.beta_hat, run.realized_size, run.converged),
                Err(e) if is_numerical_failure(&e) => {
                    (vec![f64::NAN; beta_ref.len()], 0, false)
                }
                Err(e) => return Err(e),
            };
        rows.push(ResultRow {
            scenario: tags.scenario.clone(),
            p: tags.p,
            error_level: tags.error_level.clone(),
            n: tags.n,
            n1: tags.n1,
            strategy,
            replicate,
            realized_size,
            converged,
            sq_error: squared_error(&beta_hat, beta_ref),
            beta_hat,
        });
    }
    Ok(rows)
}

/// Runs the full replicated grid for a simulated scenario. Replicates run
/// in parallel; the output is a pure function of the config regardless of
/// the execution plan, because every (replicate, strategy) pair owns a
/// dedicated RNG stream and rows are assembled in replicate order. The
/// reference coefficients for `sq_error` are the scenario's true ones.
pub fn run_grid(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let fixed = if config.fixed_x {
        Some(gen_dataset(
            &config.scenario,
            &mut RngStream::new(config.base_seed, 0),
        )?)
    } else {
        None
    };
    let tags = RowTags {
        scenario: config.scenario.family.to_string(),
        p: config.scenario.p,
        error_level: config.scenario.error_level.to_string(),
        n: config.n,
        n1: config.n1,
    };
    let per_rep: Result<Vec<Vec<ResultRow>>> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| {
            let local;
            let data = match &fixed {
                Some(d) => d,
                None => {
                    local = gen_dataset(
                        &config.scenario,
                        &mut RngStream::new(
                            config.base_seed,
                            rep as u64 * STREAMS_PER_REPLICATE,
                        ),
                    )?;
                    &local
                }
            };
            replicate_rows(
                data,
                &config.scenario.beta,
                &tags,
                &config.strategies,
                rep,
                config.base_seed,
                config.n,
                config.n1,
            )
        })
        .collect();
    Ok(per_rep?.into_iter().flatten().collect())
}

/// Grid settings for an ingested cohort (the dataset is fixed; only the
/// subsampling varies across replicates).
#[derive(Debug, Clone)]
pub struct IngestedConfig {
    /// Scenario tag written to the results rows.
    pub label: String,
    pub n: usize,
    pub n1: usize,
    pub strategies: Vec<StrategyId>,
    pub replicates: usize,
    pub base_seed: u64,
}

/// Replicated strategy comparison on an externally supplied cohort. The
/// reference coefficients are the full-data MLE on the true outcome, so
/// `sq_error` measures the cost of subsampling alone.
pub fn run_ingested(data: &Dataset, config: &IngestedConfig) -> Result<Vec<ResultRow>> {
    if config.replicates == 0 || config.strategies.is_empty() {
        return Err(Error::DimensionMismatch(
            "config: at least one replicate and one strategy are required".into(),
        ));
    }
    if config.n1 >= config.n || config.n > data.n() {
        return Err(Error::InfeasibleBudget {
            n: config.n,
            cap: data.n(),
        });
    }
    let y = need_y(data)?;
    let full = fit_weighted_mle(&data.x, y, &vec![1.0; data.n()])?;
    let tags = RowTags {
        scenario: config.label.clone(),
        p: data.p(),
        error_level: "na".into(),
        n: config.n,
        n1: config.n1,
    };
    let per_rep: Result<Vec<Vec<ResultRow>>> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| {
            replicate_rows(
                data,
                &full.beta,
                &tags,
                &config.strategies,
                rep,
                config.base_seed,
                config.n,
                config.n1,
            )
        })
        .collect();
    Ok(per_rep?.into_iter().flatten().collect())
}

/// Writes result rows as CSV with the fixed column order
/// `scenario,p,error_level,n,n1,strategy,replicate,realized_size,converged,`
/// `beta_hat_0..beta_hat_p,sq_error`. Floats use shortest round-trip form.
pub fn write_results_csv<W: Write>(rows: &[ResultRow], mut out: W) -> Result<()> {
    let first = rows.first().ok_or(Error::NoData)?;
    let d = first.beta_hat.len();
    let mut header =
        String::from("scenario,p,error_level,n,n1,strategy,replicate,realized_size,converged");
    for j in 0..d {
        header.push_str(&format!(",beta_hat_{j}"));
    }
    header.push_str(",sq_error\n");
    out.write_all(header.as_bytes())?;
    for row in rows {
        if row.beta_hat.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "results row has {} coefficients, expected {d}",
                row.beta_hat.len()
            )));
        }
        let mut line = format!(
            "{},{},{},{},{},{},{},{},{}",
            row.scenario,
            row.p,
            row.error_level,
            row.n,
            row.n1,
            row.strategy,
            row.replicate,
            row.realized_size,
            row.converged
        );
        for b in &row.beta_hat {
            line.push_str(&format!(",{b:?}"));
        }
        line.push_str(&format!(",{:?}\n", row.sq_error));
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn save_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    write_results_csv(rows, BufWriter::new(fs::File::create(path)?))
}

/// Per-cell summary over the converged replicates of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub p: usize,
    pub error_level: String,
    pub n: usize,
    pub n1: usize,
    pub strategy: StrategyId,
    /// Mean squared coefficient error over converged replicates.
    pub mse: f64,
    /// Trace of the sample covariance of the estimates; absent with fewer
    /// than two converged replicates.
    pub variance_sum: Option<f64>,
    pub replicates_used: usize,
    pub excluded: usize,
}

/// Collapses result rows into per-(scenario, budgets, strategy) summaries.
/// Non-converged replicates are excluded and counted. A cell with no
/// converged replicates at all is an error.
pub fn summarize_mse(rows: &[ResultRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::NoData);
    }
    type Key = (String, usize, String, usize, usize, StrategyId);
    let mut cells: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        let key = (
            row.scenario.clone(),
            row.p,
            row.error_level.clone(),
            row.n,
            row.n1,
            row.strategy,
        );
        cells.entry(key).or_default().push(row);
    }
    let mut out = Vec::with_capacity(cells.len());
    for ((scenario, p, error_level, n, n1, strategy), cell) in cells {
        let used: Vec<&&ResultRow> = cell.iter().filter(|r| r.converged).collect();
        let excluded = cell.len() - used.len();
        if used.is_empty() {
            return Err(Error::EmptyCell(format!(
                "{scenario} {strategy} at n={n}: no converged replicates"
            )));
        }
        let m = used.len() as f64;
        let mse = used.iter().map(|r| r.sq_error).sum::<f64>() / m;
        let variance_sum = if used.len() < 2 {
            None
        } else {
            let d = used[0].beta_hat.len();
            let mut total = 0.0;
            for j in 0..d {
                let mean = used.iter().map(|r| r.beta_hat[j]).sum::<f64>() / m;
                total += used
                    .iter()
                    .map(|r| (r.beta_hat[j] - mean).powi(2))
                    .sum::<f64>()
                    / (m - 1.0);
            }
            Some(total)
        };
        out.push(SummaryRow {
            scenario,
            p,
            error_level,
            n,
            n1,
            strategy,
            mse,
            variance_sum,
            replicates_used: used.len(),
            excluded,
        });
    }
    Ok(out)
}

pub fn write_summary_csv<W: Write>(summary: &[SummaryRow], mut out: W) -> Result<()> {
    out.write_all(
        b"scenario,p,error_level,n,n1,strategy,mse,variance_sum,replicates_used,excluded\n",
    )?;
    for row in summary {
        let vs = row
            .variance_sum
            .map(|v| format!("{v:?}"))
            .unwrap_or_default();
        let line = format!(
            "{},{},{},{},{},{},{:?},{},{},{}\n",
            row.scenario,
            row.p,
            row.error_level,
            row.n,
            row.n1,
            row.strategy,
            row.mse,
            vs,
            row.replicates_used,
            row.excluded
        );
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Per-replicate squared errors of two strategies paired by replicate id,
/// keeping only replicates where both converged.
pub fn paired_sq_errors(rows: &[ResultRow], a: StrategyId, b: StrategyId) -> (Vec<f64>, Vec<f64>) {
    let mut pairs: BTreeMap<usize, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.converged) {
        let entry = pairs.entry(row.replicate).or_insert((None, None));
        if row.strategy == a {
            entry.0 = Some(row.sq_error);
        } else if row.strategy == b {
            entry.1 = Some(row.sq_error);
        }
    }
    let mut va = Vec::new();
    let mut vb = Vec::new();
    for (_, (ea, eb)) in pairs {
        if let (Some(x), Some(y)) = (ea, eb) {
            va.push(x);
            vb.push(y);
        }
    }
    (va, vb)
}

/// Exact one-sided paired sign test: the p-value against the alternative
/// that `a` tends to be smaller than `b`. Ties are dropped; with no
/// informative pairs the p-value is 1.
pub fn paired_sign_test_less(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "sign test: {} vs {} observations",
            a.len(),
            b.len()
        )));
    }
    let mut m = 0usize;
    let mut wins = 0usize;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            m += 1;
            wins += 1;
        } else if x > y {
            m += 1;
        }
    }
    if m == 0 {
        return Ok(1.0);
    }
    // P(Binomial(m, 1/2) >= wins), accumulated from the leading term
    let ln_choose: f64 = (1..=wins)
        .map(|i| ((m - wins + i) as f64).ln() - (i as f64).ln())
        .sum();
    let mut term = (ln_choose - m as f64 * std::f64::consts::LN_2).exp();
    let mut p = 0.0;
    for j in wins..=m {
        p += term;
        term *= (m - j) as f64 / (j + 1) as f64;
    }
    Ok(p.min(1.0))
}

fn strategy_color(s: StrategyId) -> &'static str {
    match s {
        StrategyId::CcTrue => "#1f77b4",
        StrategyId::CcSurrogate => "#ff7f0e",
        StrategyId::OsmacOracle => "#2ca02c",
        StrategyId::OssatPilot => "#d62728",
        StrategyId::StratOracle => "#9467bd",
        StrategyId::StratPilot => "#8c564b",
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn sanitize_file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect()
}

const PLOT_X_LO: f64 = 72.0;
const PLOT_X_HI: f64 = 540.0;
const PLOT_Y_TOP: f64 = 42.0;
const PLOT_Y_BOT: f64 = 396.0;

fn render_panel(
    scenario: &str,
    error_level: &str,
    rows: &[&SummaryRow],
    split_n1: bool,
) -> String {
    // series keyed by (pilot size, strategy), points (budget, mse)
    let mut series: BTreeMap<(usize, StrategyId), Vec<(f64, f64)>> = BTreeMap::new();
    for row in rows {
        if row.mse.is_finite() {
            series
                .entry((row.n1, row.strategy))
                .or_default()
                .push((row.n as f64, row.mse.max(1e-16)));
        }
    }
    for pts in series.values_mut() {
        pts.sort_by(|u, v| u.0.total_cmp(&v.0));
    }

    let budgets: BTreeSet<usize> = rows.iter().map(|r| r.n).collect();
    let (mut x_min, mut x_max) = (
        *budgets.iter().next().unwrap() as f64,
        *budgets.iter().last().unwrap() as f64,
    );
    if x_min == x_max {
        x_min -= 1.0;
        x_max += 1.0;
    }
    let mses: Vec<f64> = series.values().flatten().map(|&(_, m)| m).collect();
    let mut l_min = mses.iter().cloned().fold(f64::INFINITY, f64::min).log10().floor() as i64;
    let mut l_max = mses.iter().cloned().fold(0.0f64, f64::max).log10().ceil() as i64;
    if l_min == l_max {
        l_min -= 1;
        l_max += 1;
    }

    let x_of = |n: f64| PLOT_X_LO + (n - x_min) / (x_max - x_min) * (PLOT_X_HI - PLOT_X_LO);
    let y_of = |mse: f64| {
        let t = (mse.log10() - l_min as f64) / (l_max - l_min) as f64;
        PLOT_Y_BOT - t * (PLOT_Y_BOT - PLOT_Y_TOP)
    };

    let mut svg = String::new();
    svg.push_str(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"440\" \
         font-family=\"monospace\" font-size=\"12\">\n",
    );
    svg.push_str("<rect width=\"760\" height=\"440\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"306\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{} ({} error)</text>\n",
        xml_escape(scenario),
        xml_escape(error_level)
    ));

    // axes
    svg.push_str(&format!(
        "<line x1=\"{PLOT_X_LO}\" y1=\"{PLOT_Y_BOT}\" x2=\"{PLOT_X_HI}\" y2=\"{PLOT_Y_BOT}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{PLOT_X_LO}\" y1=\"{PLOT_Y_TOP}\" x2=\"{PLOT_X_LO}\" y2=\"{PLOT_Y_BOT}\" stroke=\"black\"/>\n"
    ));
    for &n in &budgets {
        let x = x_of(n as f64);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{PLOT_Y_BOT}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            PLOT_Y_BOT + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{n}</text>\n",
            PLOT_Y_BOT + 20.0
        ));
    }
    let step = ((l_max - l_min) as usize / 7 + 1) as i64;
    let mut e = l_min;
    while e <= l_max {
        let y = y_of(10f64.powi(e as i32));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{PLOT_X_LO}\" y2=\"{y}\" stroke=\"black\"/>\n",
            PLOT_X_LO - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">1e{e}</text>\n",
            PLOT_X_LO - 9.0,
            y + 4.0
        ));
        e += step;
    }
    svg.push_str("<text x=\"306\" y=\"432\" text-anchor=\"middle\">subsample budget n</text>\n");
    svg.push_str("<text x=\"16\" y=\"219\" text-anchor=\"middle\" transform=\"rotate(-90 16 219)\">empirical MSE (log scale)</text>\n");

    // one polyline per series; oracle strategies dashed, like the
    // known-outcome convention in the benchmark figures
    let mut legend_y = 60.0;
    for ((n1, strategy), pts) in &series {
        let color = strategy_color(*strategy);
        let dash = if strategy.oracle() {
            " stroke-dasharray=\"6,4\""
        } else {
            ""
        };
        let coords: Vec<String> = pts
            .iter()
            .map(|&(n, m)| format!("{:.2},{:.2}", x_of(n), y_of(m)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>\n",
            coords.join(" ")
        ));
        for &(n, m) in pts {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                x_of(n),
                y_of(m)
            ));
        }
        let label = if split_n1 {
            format!("{strategy} (n1={n1})")
        } else {
            strategy.to_string()
        };
        svg.push_str(&format!(
            "<line x1=\"556\" y1=\"{legend_y}\" x2=\"584\" y2=\"{legend_y}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"590\" y=\"{}\">{}</text>\n",
            legend_y + 4.0,
            xml_escape(&label)
        ));
        legend_y += 18.0;
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes one MSE-versus-budget chart per (scenario, error level) as SVG,
/// plus the summary CSV, into `output_dir`. Returns the files written.
pub fn emit_plots(summary: &[SummaryRow], output_dir: &Path) -> Result<Vec<PathBuf>> {
    if summary.is_empty() {
        return Err(Error::NoData);
    }
    fs::create_dir_all(output_dir)?;
    let split_n1 = summary.iter().map(|r| r.n1).collect::<BTreeSet<_>>().len() > 1;
    let mut panels: BTreeMap<(String, String), Vec<&SummaryRow>> = BTreeMap::new();
    for row in summary {
        panels
            .entry((row.scenario.clone(), row.error_level.clone()))
            .or_default()
            .push(row);
    }
    let mut files = Vec::new();
    for ((scenario, error_level), rows) in panels {
        let svg = render_panel(&scenario, &error_level, &rows, split_n1);
        let file = output_dir.join(format!(
            "mse_{}_{}.svg",
            sanitize_file_stem(&scenario),
            sanitize_file_stem(&error_level)
        ));
        fs::write(&file, svg)?;
        files.push(file);
    }
    let summary_path = output_dir.join("summary.csv");
    write_summary_csv(summary, BufWriter::new(fs::File::create(&summary_path)?))?;
    files.push(summary_path);
    Ok(files)
}
