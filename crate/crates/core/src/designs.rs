//! Construction of the sampling designs under comparison: case-control,
//! OSMAC (A-optimal individualized Poisson), OSSAT (surrogate-assisted
//! two-step with-replacement), Neyman-allocated stratified, and the adaptive
//! two-wave stratified design.
//!
//! A design here is a *plan*: inclusion intensities or per-stratum
//! allocations. Realizing a plan as a random subsample lives in
//! [`crate::sampling`].

use crate::error::{Error, Result};
use crate::logistic::Dataset;
use crate::numerics::{norm2, spd_solve, Matrix, RngStream};
use crate::sampling::{draw_stratified, SampleDraw};
use std::collections::BTreeMap;

/// How an individualized design turns intensities into a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    /// Independent Bernoulli(pi_i) inclusion; random realized size.
    PoissonIndependent,
    /// `n` categorical draws with probabilities `pi_i / n`; fixed size, a
    /// unit may repeat.
    WithReplacement,
}

/// Per-unit inclusion intensities summing to the budget.
#[derive(Debug, Clone)]
pub struct IndividualizedDesign {
    pub pi: Vec<f64>,
    pub mechanism: Mechanism,
}

impl IndividualizedDesign {
    pub fn n_units(&self) -> usize {
        self.pi.len()
    }

    /// Total expected draws, i.e. the budget the intensities sum to.
    pub fn budget(&self) -> f64 {
        self.pi.iter().sum()
    }
}

/// A partition of the cohort into strata.
#[derive(Debug, Clone)]
pub struct StrataAssignment {
    /// Stratum index of each unit, in `0..k`.
    pub stratum_of: Vec<usize>,
    pub k: usize,
    /// Population size per stratum; sums to N.
    pub counts: Vec<usize>,
    /// Human-readable descriptor per stratum (outcome level and bin tuple).
    pub labels: Vec<String>,
}

impl StrataAssignment {
    pub fn n_units(&self) -> usize {
        self.stratum_of.len()
    }

    /// Unit ids belonging to stratum `k`, in cohort order.
    pub fn members(&self, k: usize) -> Vec<usize> {
        self.stratum_of
            .iter()
            .enumerate()
            .filter(|&(_, &s)| s == k)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Strata plus an integer allocation; realized by SRS within each stratum.
#[derive(Debug, Clone)]
pub struct StratifiedDesign {
    pub strata: StrataAssignment,
    /// Sample size per stratum; `1 <= allocation[k] <= counts[k]`.
    pub allocation: Vec<usize>,
}

impl StratifiedDesign {
    fn validated(strata: StrataAssignment, allocation: Vec<usize>) -> Result<Self> {
        for (k, (&nk, &cap)) in allocation.iter().zip(&strata.counts).enumerate() {
            if nk < 1 || nk > cap {
                return Err(Error::DimensionMismatch(format!(
                    "stratum {k}: allocation {nk} outside [1, {cap}]"
                )));
            }
        }
        Ok(Self { strata, allocation })
    }

    /// Builds a design from externally supplied parts, enforcing the
    /// per-stratum allocation bounds.
    pub fn from_parts(strata: StrataAssignment, allocation: Vec<usize>) -> Result<Self> {
        if allocation.len() != strata.k {
            return Err(Error::DimensionMismatch(format!(
                "allocation has {} strata, assignment has {}",
                allocation.len(),
                strata.k
            )));
        }
        Self::validated(strata, allocation)
    }

    pub fn total(&self) -> usize {
        self.allocation.iter().sum()
    }

    /// First-order inclusion probability `n_k / N_k` of each unit.
    pub fn inclusion_probabilities(&self) -> Vec<f64> {
        self.strata
            .stratum_of
            .iter()
            .map(|&k| self.allocation[k] as f64 / self.strata.counts[k] as f64)
            .collect()
    }
}

/// A pilot wave already drawn plus a second-wave allocation chosen from the
/// pilot's variance estimates. The combined sample in stratum `k` has
/// `wave1.allocation[k] + wave2_allocation[k]` units and estimation weight
/// `N_k / n_k_total`.
#[derive(Debug, Clone)]
pub struct TwoWaveDesign {
    pub wave1: StratifiedDesign,
    pub wave1_draw: SampleDraw,
    pub wave2_allocation: Vec<usize>,
}

impl TwoWaveDesign {
    pub fn combined_allocation(&self) -> Vec<usize> {
        self.wave1
            .allocation
            .iter()
            .zip(&self.wave2_allocation)
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// Case-control design: half the budget to cases via SRS, the rest to
/// controls, with deficits in one arm returned to the other.
pub fn case_control(outcome: &[u8], n: usize) -> Result<StratifiedDesign> {
    let total = outcome.len();
    if n > total {
        return Err(Error::InfeasibleBudget { n, cap: total });
    }
    if n < 2 {
        return Err(Error::BudgetBelowStratumCount { n, k: 2 });
    }
    let n_cases = outcome.iter().filter(|&&y| y == 1).count();
    let n_controls = total - n_cases;
    if n_cases == 0 {
        return Err(Error::EmptyCell("no cases in cohort".into()));
    }
    if n_controls == 0 {
        return Err(Error::EmptyCell("no controls in cohort".into()));
    }

    let mut take_cases = (n / 2).min(n_cases);
    let mut take_controls = n - take_cases;
    if take_controls > n_controls {
        // return the control deficit to the case arm; n <= N makes this fit
        take_cases += take_controls - n_controls;
        take_controls = n_controls;
    }

    let strata = StrataAssignment {
        stratum_of: outcome.iter().map(|&y| usize::from(y == 0)).collect(),
        k: 2,
        counts: vec![n_cases, n_controls],
        labels: vec!["out=1".into(), "out=0".into()],
    };
    StratifiedDesign::validated(strata, vec![take_cases, take_controls])
}

/// Units whose proportional share would fall below this floor are pinned to
/// it, keeping every inclusion probability strictly positive and all
/// inverse-probability weights finite. The floor is `budget / (100 N)`.
fn intensity_floor(budget: f64, n_units: usize) -> f64 {
    budget / (100.0 * n_units as f64)
}

/// Allocates `budget` across units proportionally to `mass`, with two fixed
/// points: intensities above 1 are clamped to 1 (residual budget
/// redistributed proportionally among the rest) and intensities below the
/// positive floor are pinned to it. Deterministic; at most N passes.
fn clamped_intensities(mass: &[f64], budget: f64) -> Result<Vec<f64>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Slot {
        Free,
        Floor,
        Cap,
    }
    let n_units = mass.len();
    let floor = intensity_floor(budget, n_units);
    let mut slot: Vec<Slot> = mass
        .iter()
        .map(|&m| if m > 0.0 { Slot::Free } else { Slot::Floor })
        .collect();

    let mut scale = 0.0;
    for _ in 0..=n_units {
        let free_mass: f64 = mass
            .iter()
            .zip(&slot)
            .filter(|&(_, &s)| s == Slot::Free)
            .map(|(&m, _)| m)
            .sum();
        let fixed: f64 = slot
            .iter()
            .map(|&s| match s {
                Slot::Cap => 1.0,
                Slot::Floor => floor,
                Slot::Free => 0.0,
            })
            .sum();
        if free_mass == 0.0 {
            break;
        }
        scale = (budget - fixed) / free_mass;
        let mut changed = false;
        for (i, &m) in mass.iter().enumerate() {
            if slot[i] != Slot::Free {
                continue;
            }
            let pi = m * scale;
            if pi > 1.0 {
                slot[i] = Slot::Cap;
                changed = true;
            } else if pi < floor {
                slot[i] = Slot::Floor;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut pi: Vec<f64> = mass
        .iter()
        .zip(&slot)
        .map(|(&m, &s)| match s {
            Slot::Cap => 1.0,
            Slot::Floor => floor,
            Slot::Free => m * scale,
        })
        .collect();

    // Degenerate corner: everything pinned yet the budget not met (all-cap
    // or all-floor populations). Spread the leftover uniformly over floored
    // units, still respecting pi <= 1.
    let mut leftover = budget - pi.iter().sum::<f64>();
    if leftover.abs() > 1e-9 {
        for _ in 0..=n_units {
            let room: Vec<usize> = (0..n_units)
                .filter(|&i| slot[i] == Slot::Floor && pi[i] < 1.0)
                .collect();
            if room.is_empty() || leftover <= 0.0 {
                break;
            }
            let bump = leftover / room.len() as f64;
            for &i in &room {
                let add = bump.min(1.0 - pi[i]);
                pi[i] += add;
                leftover -= add;
            }
            if leftover.abs() <= 1e-12 {
                break;
            }
        }
        if (budget - pi.iter().sum::<f64>()).abs() > 1e-9 {
            return Err(Error::DegenerateDesign);
        }
    }
    Ok(pi)
}

/// A-optimal individualized design: intensities proportional to the
/// influence-function norms, scaled to sum to `n`, clamped to at most 1.
pub fn osmac(influence_norms: &[f64], n: usize) -> Result<IndividualizedDesign> {
    let n_units = influence_norms.len();
    if n == 0 || n > n_units {
        return Err(Error::InfeasibleBudget { n, cap: n_units });
    }
    if !influence_norms.iter().any(|&v| v > 0.0) {
        return Err(Error::AllZeroNorms);
    }
    let pi = clamped_intensities(influence_norms, n as f64)?;
    Ok(IndividualizedDesign {
        pi,
        mechanism: Mechanism::PoissonIndependent,
    })
}

/// Surrogate-assisted second-step design: intensities proportional to
/// `sqrt(ps_i - 2 ps_i p_i + p_i^2) * ||m_x^{-1} x_i||`, scaled to sum to
/// `n2`. The radicand is the mean squared residual of unit `i` given the
/// surrogate-informed outcome probabilities; a materially negative value
/// means `p_hat` and `p_s_hat` cannot both be probabilities.
pub fn ossat(
    p_hat: &[f64],
    p_s_hat: &[f64],
    x: &Matrix,
    m_x: &Matrix,
    n2: usize,
) -> Result<IndividualizedDesign> {
    let n_units = x.rows();
    if p_hat.len() != n_units || p_s_hat.len() != n_units {
        return Err(Error::DimensionMismatch(format!(
            "ossat: X has {n_units} rows, p_hat {}, p_s_hat {}",
            p_hat.len(),
            p_s_hat.len()
        )));
    }
    if n2 == 0 || n2 > n_units {
        return Err(Error::InfeasibleBudget {
            n: n2,
            cap: n_units,
        });
    }
    // ||m_x^{-1} x_i|| for all units in one solve
    let z = spd_solve(m_x, &x.transpose())?;
    let mut mass = Vec::with_capacity(n_units);
    for i in 0..n_units {
        let radicand = p_s_hat[i] - 2.0 * p_s_hat[i] * p_hat[i] + p_hat[i] * p_hat[i];
        if radicand < -1e-12 {
            return Err(Error::NegativeRadicand(radicand));
        }
        let lever = norm2(&z.col(i));
        mass.push(radicand.max(0.0).sqrt() * lever);
    }
    if !mass.iter().any(|&v| v > 0.0) {
        return Err(Error::AllZeroNorms);
    }
    let pi = clamped_intensities(&mass, n2 as f64)?;
    Ok(IndividualizedDesign {
        pi,
        mechanism: Mechanism::WithReplacement,
    })
}

/// Bin of a score value relative to the two cut points. Comparisons are
/// inclusive and checked high-first so that a column with few distinct
/// values (binary scores, constant columns) still lands in well-separated
/// bins: binary columns split into exactly two cells and constant columns
/// collapse into one.
fn quantile_bin(v: f64, q_low: f64, q_high: f64) -> usize {
    if v >= q_high {
        2
    } else if v <= q_low {
        0
    } else {
        1
    }
}

/// Cross-classifies units by outcome level and per-column quantile bins of
/// the score matrix. Empty cells are dropped; strata are numbered in
/// lexicographic (outcome-major) order of their keys.
pub fn build_strata(
    outcome_like: &[u8],
    score_columns: &Matrix,
    cuts: (f64, f64),
) -> Result<StrataAssignment> {
    let n_units = outcome_like.len();
    let d = score_columns.cols();
    if score_columns.rows() != n_units || d == 0 {
        return Err(Error::DimensionMismatch(format!(
            "build_strata: outcome length {n_units}, scores {}x{d}",
            score_columns.rows()
        )));
    }
    let (q_low, q_high) = cuts;
    if !(q_low > 0.0 && q_low < q_high && q_high < 1.0) {
        return Err(Error::InvalidQuantile(if q_low <= 0.0 || q_low >= q_high {
            q_low
        } else {
            q_high
        }));
    }

    let mut bins = vec![vec![0usize; d]; n_units];
    #[allow(clippy::needless_range_loop)] // fills column j across all row bins
    for j in 0..d {
        let col = score_columns.col(j);
        let lo = crate::numerics::empirical_quantile(&col, q_low)?;
        let hi = crate::numerics::empirical_quantile(&col, q_high)?;
        for (i, &v) in col.iter().enumerate() {
            bins[i][j] = quantile_bin(v, lo, hi);
        }
    }

    // dense stratum ids in lexicographic key order
    let mut keys: Vec<(u8, Vec<usize>)> = (0..n_units)
        .map(|i| (outcome_like[i], bins[i].clone()))
        .collect();
    let mut distinct = keys.clone();
    distinct.sort();
    distinct.dedup();
    let index_of = |key: &(u8, Vec<usize>)| distinct.binary_search(key).unwrap();

    let stratum_of: Vec<usize> = keys.drain(..).map(|key| index_of(&key)).collect();
    let k = distinct.len();
    let mut counts = vec![0usize; k];
    for &s in &stratum_of {
        counts[s] += 1;
    }
    let labels = distinct
        .iter()
        .map(|(out, b)| {
            let tags: Vec<String> = b.iter().map(|v| v.to_string()).collect();
            format!("out={out}|bins={}", tags.join(""))
        })
        .collect();
    Ok(StrataAssignment {
        stratum_of,
        k,
        counts,
        labels,
    })
}

/// Splits an integer `budget` across strata following real-valued `targets`
/// subject to per-stratum bounds, by largest remainder: floor the targets,
/// then hand out the remaining units one at a time to the stratum with the
/// largest shortfall versus its target (ties to the lower index), skipping
/// strata at capacity. Over-allocated strata (floors above target) give
/// units back by the mirror rule.
pub(crate) fn apportion(
    targets: &[f64],
    lo: &[usize],
    hi: &[usize],
    budget: usize,
) -> Result<Vec<usize>> {
    let k = targets.len();
    let min_total: usize = lo.iter().sum();
    let max_total: usize = hi.iter().sum();
    if budget < min_total {
        return Err(Error::BudgetBelowStratumCount { n: budget, k });
    }
    if budget > max_total {
        return Err(Error::InfeasibleBudget {
            n: budget,
            cap: max_total,
        });
    }

    let mut alloc: Vec<usize> = targets
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(&t, (&l, &h))| (t.floor().max(0.0) as usize).clamp(l, h))
        .collect();
    let mut total: usize = alloc.iter().sum();
    while total < budget {
        let pick = (0..k)
            .filter(|&i| alloc[i] < hi[i])
            .max_by(|&a, &b| {
                let ra = targets[a] - alloc[a] as f64;
                let rb = targets[b] - alloc[b] as f64;
                ra.partial_cmp(&rb).unwrap().then(b.cmp(&a))
            })
            .expect("budget <= sum(hi) guarantees room");
        alloc[pick] += 1;
        total += 1;
    }
    while total > budget {
        let pick = (0..k)
            .filter(|&i| alloc[i] > lo[i])
            .min_by(|&a, &b| {
                let ra = targets[a] - alloc[a] as f64;
                let rb = targets[b] - alloc[b] as f64;
                ra.partial_cmp(&rb).unwrap().then(a.cmp(&b))
            })
            .expect("budget >= sum(lo) guarantees slack");
        alloc[pick] -= 1;
        total -= 1;
    }
    Ok(alloc)
}

/// Real-valued Neyman targets `n * N_k sd_k / sum_j N_j sd_j`, with
/// zero-variance strata pinned to exactly 1 and targets clamped into
/// `[1, N_k]` by iterative redistribution. When every stratum has zero
/// variance the targets fall back to proportional-to-size: any allocation
/// is equally good there, and proportional keeps the design well defined.
fn neyman_targets(counts: &[usize], stratum_sd: &[f64], n: usize) -> Vec<f64> {
    let k = counts.len();
    let weight: Vec<f64> = counts
        .iter()
        .zip(stratum_sd)
        .map(|(&nk, &sd)| nk as f64 * sd)
        .collect();
    let all_zero = weight.iter().all(|&w| w == 0.0);
    let mass: Vec<f64> = if all_zero {
        counts.iter().map(|&nk| nk as f64).collect()
    } else {
        weight
    };

    // pinned strata: zero variance (unless everything is zero-variance)
    let mut fixed: Vec<Option<f64>> = (0..k)
        .map(|i| (!all_zero && stratum_sd[i] == 0.0).then_some(1.0))
        .collect();
    let mut targets = vec![0.0; k];
    for _ in 0..=k {
        let fixed_total: f64 = fixed.iter().flatten().sum();
        let free_mass: f64 = (0..k)
            .filter(|&i| fixed[i].is_none())
            .map(|i| mass[i])
            .sum();
        for i in 0..k {
            targets[i] = match fixed[i] {
                Some(v) => v,
                None => (n as f64 - fixed_total) * mass[i] / free_mass,
            };
        }
        let mut changed = false;
        for i in 0..k {
            if fixed[i].is_some() {
                continue;
            }
            if targets[i] > counts[i] as f64 {
                fixed[i] = Some(counts[i] as f64);
                changed = true;
            } else if targets[i] < 1.0 {
                fixed[i] = Some(1.0);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    targets
}

/// Neyman allocation: sample sizes proportional to `N_k * sd_k`, where
/// `sd_k` estimates the root trace of the within-stratum influence
/// covariance. Zero-variance strata get a single unit; targets are clamped
/// to `[1, N_k]` and integerized by largest remainder so the total is
/// exactly `n`.
pub fn neyman_allocation(
    strata: &StrataAssignment,
    stratum_sd: &[f64],
    n: usize,
) -> Result<StratifiedDesign> {
    let k = strata.k;
    if stratum_sd.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "neyman_allocation: {k} strata but {} sd entries",
            stratum_sd.len()
        )));
    }
    if stratum_sd.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::DegenerateDesign);
    }
    if n < k {
        return Err(Error::BudgetBelowStratumCount { n, k });
    }
    let targets = neyman_targets(&strata.counts, stratum_sd, n);
    let lo = vec![1usize; k];
    let alloc = apportion(&targets, &lo, &strata.counts, n)?;
    StratifiedDesign::validated(strata.clone(), alloc)
}

/// Within-stratum standard deviations (root summed column variances) of the
/// rows of `values` restricted to `subset`. Strata holding fewer than two
/// subset rows fall back to the pooled standard deviation over the whole
/// subset, so every stratum gets a usable, strictly estimable figure.
pub(crate) fn subset_stratum_sds(
    strata: &StrataAssignment,
    subset: &[usize],
    values: &Matrix,
) -> Vec<f64> {
    let d = values.cols();
    let variance = |ids: &[usize]| -> f64 {
        // summed per-column sample variance (divisor m - 1)
        let m = ids.len() as f64;
        (0..d)
            .map(|j| {
                let mean: f64 = ids.iter().map(|&i| values.get(i, j)).sum::<f64>() / m;
                ids.iter()
                    .map(|&i| (values.get(i, j) - mean).powi(2))
                    .sum::<f64>()
                    / (m - 1.0)
            })
            .sum()
    };
    let pooled_sd = if subset.len() >= 2 {
        variance(subset).sqrt()
    } else {
        0.0
    };
    (0..strata.k)
        .map(|k| {
            let ids: Vec<usize> = subset
                .iter()
                .copied()
                .filter(|&i| strata.stratum_of[i] == k)
                .collect();
            if ids.len() >= 2 {
                variance(&ids).sqrt()
            } else {
                pooled_sd
            }
        })
        .collect()
}

/// Influence-style stratification scores: the influence columns for the
/// first coefficients after the intercept, at most three of them.
pub fn stratification_columns(h: &Matrix) -> Matrix {
    let d = (h.cols() - 1).min(3);
    let mut out = Matrix::zeros(h.rows(), d);
    for r in 0..h.rows() {
        for j in 0..d {
            out.set(r, j, h.get(r, j + 1));
        }
    }
    out
}

/// Builds the adaptive two-wave design on a cohort where only the surrogate
/// outcome is observed up front.
///
/// Wave 1 stratifies on the surrogate fit — strata from the surrogate
/// outcome crossed with quantile bins of its influence columns — and
/// Neyman-allocates the pilot budget `n1` using surrogate-influence
/// standard deviations. The pilot is drawn here, and the true outcome of
/// each pilot unit is requested through `observe_y` (the only access to
/// `y` the design makes). Pilot units then yield per-stratum standard
/// deviations of the true-outcome influence values, and wave 2 tops every
/// stratum up toward the full-budget Neyman targets: shortfalls are floored
/// at zero and the remaining budget re-apportioned by largest remainder.
pub fn adaptive_two_wave(
    data: &Dataset,
    n1: usize,
    n: usize,
    cuts: (f64, f64),
    rng: &mut RngStream,
    observe_y: &mut dyn FnMut(usize) -> u8,
) -> Result<TwoWaveDesign> {
    let surrogate = data.s.as_ref().ok_or(Error::MissingOutcomeColumns)?;
    let n_units = data.n();
    if n1 >= n || n > n_units {
        return Err(Error::InfeasibleBudget { n, cap: n_units });
    }

    // wave 1: surrogate-based strata and allocation
    let fit_s = crate::logistic::fit_weighted_mle(&data.x, surrogate, &vec![1.0; n_units])?;
    let inf_s = crate::logistic::influence(&data.x, surrogate, &fit_s)?;
    let strata = build_strata(surrogate, &stratification_columns(&inf_s.h), cuts)?;
    let sd_s = full_stratum_sds(&strata, &inf_s.h);
    let wave1 = neyman_allocation(&strata, &sd_s, n1)?;
    let wave1_draw = draw_stratified(&wave1, rng)?;

    // pilot-based estimates of the true-outcome influence spread; plug-in
    // probabilities and m_x come from the surrogate fit, which is the model
    // available for the whole cohort
    let mut h_pilot = Matrix::zeros(n_units, data.x.cols());
    let probs = crate::logistic::predict(&data.x, &fit_s.beta);
    for &i in &wave1_draw.indices {
        let resid = f64::from(observe_y(i)) - probs[i];
        let mut rhs = vec![0.0; data.x.cols()];
        for (j, xj) in data.x.row(i).iter().enumerate() {
            rhs[j] = resid * xj;
        }
        let hi = crate::numerics::spd_solve_vec(&fit_s.m_x, &rhs)?;
        for (j, v) in hi.iter().enumerate() {
            h_pilot.set(i, j, *v);
        }
    }
    let sd_pilot = subset_stratum_sds(&strata, &wave1_draw.indices, &h_pilot);

    // wave 2: top up toward full-budget Neyman targets
    let targets = neyman_targets(&strata.counts, &sd_pilot, n);
    let wave2_targets: Vec<f64> = targets
        .iter()
        .zip(&wave1.allocation)
        .map(|(&t, &w1)| (t - w1 as f64).max(0.0))
        .collect();
    let room: Vec<usize> = strata
        .counts
        .iter()
        .zip(&wave1.allocation)
        .map(|(&cap, &w1)| cap - w1)
        .collect();
    let lo = vec![0usize; strata.k];
    let wave2_allocation = apportion(&wave2_targets, &lo, &room, n - n1)?;

    Ok(TwoWaveDesign {
        wave1,
        wave1_draw,
        wave2_allocation,
    })
}

/// Within-stratum standard deviations over the full cohort (every unit
/// usable), same root-trace convention as [`subset_stratum_sds`].
pub fn full_stratum_sds(strata: &StrataAssignment, values: &Matrix) -> Vec<f64> {
    let all: Vec<usize> = (0..strata.n_units()).collect();
    subset_stratum_sds(strata, &all, values)
}

/// Strata given by the distinct `(outcome, covariate-row)` patterns — the
/// exact-cell stratification available when the covariates are discrete.
/// Every stratum is internally constant in both the row of `x` and the
/// outcome, so a within-stratum SRS reproduces the full-cohort weighted
/// score exactly. Strata are numbered in lexicographic key order.
pub fn exact_cell_strata(x: &Matrix, outcome: &[u8]) -> Result<StrataAssignment> {
    let n_units = x.rows();
    if outcome.len() != n_units {
        return Err(Error::DimensionMismatch(format!(
            "exact_cell_strata: X has {n_units} rows, outcome {}",
            outcome.len()
        )));
    }
    if n_units == 0 {
        return Err(Error::EmptyInput);
    }
    let mut cells: BTreeMap<(u8, Vec<u64>), Vec<usize>> = BTreeMap::new();
    for (i, &out) in outcome.iter().enumerate() {
        let bits: Vec<u64> = x.row(i).iter().map(|v| v.to_bits()).collect();
        cells.entry((out, bits)).or_default().push(i);
    }
    let k = cells.len();
    let mut stratum_of = vec![0usize; n_units];
    let mut counts = vec![0usize; k];
    let mut labels = Vec::with_capacity(k);
    for (id, ((out, _), members)) in cells.into_iter().enumerate() {
        labels.push(format!("out={out}|cell={id}"));
        counts[id] = members.len();
        for i in members {
            stratum_of[i] = id;
        }
    }
    Ok(StrataAssignment {
        stratum_of,
        k,
        counts,
        labels,
    })
}
