//! Closed-form design variances — the variance induced purely by random
//! sample membership, conditional on the realized cohort — for each design
//! family, plus an exact enumeration oracle for tiny populations.
//!
//! All quantities concern the subsample estimator's asymptotic linear form
//! `(1/N) sum_i R_i h_i / pi_i`. Within-stratum spread uses the sample
//! covariance (divisor `N_k - 1`): that convention makes the stratified
//! closed form the *exact* finite-population variance, so it agrees with
//! the enumeration oracle to machine precision rather than up to an
//! `O(1/N_k)` factor.

use crate::designs::{IndividualizedDesign, Mechanism, StrataAssignment, StratifiedDesign};
use crate::error::{Error, Result};
use crate::logistic::InfluenceMatrix;
use crate::numerics::{Matrix, RngStream};
use rand::Rng;

/// Hard cap on the number of samples the enumeration oracle will visit.
const ENUMERATION_LIMIT: u128 = 1_000_000;

/// A design-variance matrix with its trace and a descriptor of the design
/// that produced it.
#[derive(Debug, Clone)]
pub struct VarianceReport {
    pub matrix: Matrix,
    pub trace: f64,
    pub design_tag: String,
}

impl VarianceReport {
    fn new(matrix: Matrix, tag: &str) -> Self {
        debug_assert!(matrix.asymmetry() <= 1e-10, "variance must be symmetric");
        let trace = matrix.trace();
        debug_assert!(trace >= -1e-12, "variance trace must be nonnegative");
        Self {
            matrix,
            trace,
            design_tag: tag.to_string(),
        }
    }
}

/// Variance under Poisson sampling: `(1/N^2) sum_i (1/pi_i - 1) h_i h_i'`.
/// Exact for any `pi` in `(0, 1]`, and the A-optimal (OSMAC) variance when
/// `pi` is proportional to the influence norms.
pub fn poisson_variance(h: &InfluenceMatrix, pi: &[f64]) -> Result<VarianceReport> {
    let n_units = h.n();
    if pi.len() != n_units {
        return Err(Error::DimensionMismatch(format!(
            "poisson_variance: {n_units} influence rows, {} probabilities",
            pi.len()
        )));
    }
    debug_assert!(pi.iter().all(|&p| p > 0.0 && p <= 1.0 + 1e-12));
    let d = h.dim();
    let mut m = Matrix::zeros(d, d);
    for (i, &p) in pi.iter().enumerate() {
        m.add_outer(h.h.row(i), 1.0 / p - 1.0);
    }
    let scale = 1.0 / (n_units as f64 * n_units as f64);
    Ok(VarianceReport::new(m.scaled(scale), "poisson"))
}

/// Within-stratum sample covariance matrices of the rows of `h`
/// (divisor `N_k - 1`); singleton strata contribute a zero matrix.
pub fn stratum_covariances(h: &Matrix, strata: &StrataAssignment) -> Vec<Matrix> {
    let d = h.cols();
    let mut means = vec![vec![0.0; d]; strata.k];
    for (i, &k) in strata.stratum_of.iter().enumerate() {
        for (j, v) in h.row(i).iter().enumerate() {
            means[k][j] += v;
        }
    }
    for (k, mean) in means.iter_mut().enumerate() {
        let nk = strata.counts[k] as f64;
        mean.iter_mut().for_each(|v| *v /= nk);
    }
    let mut cov = vec![Matrix::zeros(d, d); strata.k];
    let mut centered = vec![0.0; d];
    for (i, &k) in strata.stratum_of.iter().enumerate() {
        for (j, v) in h.row(i).iter().enumerate() {
            centered[j] = v - means[k][j];
        }
        cov[k].add_outer(&centered, 1.0);
    }
    for (k, c) in cov.iter_mut().enumerate() {
        let nk = strata.counts[k];
        if nk >= 2 {
            *c = c.scaled(1.0 / (nk - 1) as f64);
        } else {
            *c = Matrix::zeros(d, d);
        }
    }
    cov
}

fn stratified_variance_at(
    h: &InfluenceMatrix,
    strata: &StrataAssignment,
    allocation: &[f64],
) -> Result<VarianceReport> {
    if allocation.len() != strata.k || h.n() != strata.n_units() {
        return Err(Error::DimensionMismatch(format!(
            "stratified_variance: {} strata, {} allocations, {} influence rows, {} units",
            strata.k,
            allocation.len(),
            h.n(),
            strata.n_units()
        )));
    }
    let n_units = strata.n_units() as f64;
    let cov = stratum_covariances(&h.h, strata);
    let d = h.dim();
    let mut m = Matrix::zeros(d, d);
    for k in 0..strata.k {
        let nk = strata.counts[k] as f64;
        let ak = allocation[k];
        let factor = nk * nk * (1.0 - ak / nk) / ak;
        m = m.add(&cov[k].scaled(factor));
    }
    Ok(VarianceReport::new(
        m.scaled(1.0 / (n_units * n_units)),
        "stratified",
    ))
}

/// Variance under stratified SRS:
/// `(1/N^2) sum_k N_k^2 ((1 - n_k/N_k)/n_k) V_{h,k}`.
/// Census strata contribute zero, as do strata whose influence rows are
/// constant — so a perfectly informative stratification yields the zero
/// matrix for any allocation.
pub fn stratified_variance(
    h: &InfluenceMatrix,
    design: &StratifiedDesign,
) -> Result<VarianceReport> {
    let allocation: Vec<f64> = design.allocation.iter().map(|&a| a as f64).collect();
    stratified_variance_at(h, &design.strata, &allocation)
}

/// Same closed form evaluated at a real-valued allocation, e.g. the
/// un-integerized Neyman targets, so rounding loss is visible by contrast
/// with [`stratified_variance`].
pub fn stratified_variance_fractional(
    h: &InfluenceMatrix,
    strata: &StrataAssignment,
    allocation: &[f64],
) -> Result<VarianceReport> {
    stratified_variance_at(h, strata, allocation)
}

/// Variance of the Neyman-allocated stratified design, in its own closed
/// form: `(1/N^2) sum_k N_k V_{h,k} (sum_j N_j sqrt(Tr V_{h,j}) /
/// (n sqrt(Tr V_{h,k})) - 1)`. Evaluated at the real-valued allocation;
/// zero-trace strata contribute nothing and are skipped.
pub fn neyman_variance(
    h: &InfluenceMatrix,
    strata: &StrataAssignment,
    n: usize,
) -> Result<VarianceReport> {
    if h.n() != strata.n_units() {
        return Err(Error::DimensionMismatch(format!(
            "neyman_variance: {} influence rows, {} units",
            h.n(),
            strata.n_units()
        )));
    }
    let n_units = strata.n_units() as f64;
    let cov = stratum_covariances(&h.h, strata);
    let traces: Vec<f64> = cov.iter().map(Matrix::trace).collect();
    let denom: f64 = (0..strata.k)
        .filter(|&k| traces[k] > 0.0)
        .map(|k| strata.counts[k] as f64 * traces[k].sqrt())
        .sum();
    let d = h.dim();
    let mut m = Matrix::zeros(d, d);
    for k in 0..strata.k {
        if traces[k] <= 0.0 {
            continue;
        }
        let nk = strata.counts[k] as f64;
        let factor = nk * (denom / (n as f64 * traces[k].sqrt()) - 1.0);
        m = m.add(&cov[k].scaled(factor));
    }
    Ok(VarianceReport::new(
        m.scaled(1.0 / (n_units * n_units)),
        "neyman",
    ))
}

/// Either design family, for the enumeration oracle.
pub enum AnyDesign<'a> {
    Stratified(&'a StratifiedDesign),
    Individualized(&'a IndividualizedDesign),
}

impl<'a> From<&'a StratifiedDesign> for AnyDesign<'a> {
    fn from(d: &'a StratifiedDesign) -> Self {
        AnyDesign::Stratified(d)
    }
}

impl<'a> From<&'a IndividualizedDesign> for AnyDesign<'a> {
    fn from(d: &'a IndividualizedDesign) -> Self {
        AnyDesign::Individualized(d)
    }
}

/// Compensated (Kahan) accumulator for a `d x d` matrix sum, keeping the
/// enumeration oracle exact even over a million terms.
struct KahanMatrix {
    sum: Vec<f64>,
    comp: Vec<f64>,
    d: usize,
}

impl KahanMatrix {
    fn new(d: usize) -> Self {
        Self {
            sum: vec![0.0; d * d],
            comp: vec![0.0; d * d],
            d,
        }
    }

    fn add_outer(&mut self, v: &[f64]) {
        for r in 0..self.d {
            for c in 0..self.d {
                let term = v[r] * v[c] - self.comp[r * self.d + c];
                let t = self.sum[r * self.d + c] + term;
                self.comp[r * self.d + c] = (t - self.sum[r * self.d + c]) - term;
                self.sum[r * self.d + c] = t;
            }
        }
    }

    fn into_matrix(self, scale: f64) -> Matrix {
        Matrix::from_vec(self.d, self.d, self.sum.iter().map(|v| v * scale).collect())
    }
}

fn binomial_capped(n: usize, r: usize) -> u128 {
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if acc > ENUMERATION_LIMIT * ENUMERATION_LIMIT {
            return u128::MAX;
        }
    }
    acc
}

/// Advances `idx` to the next r-combination of `0..m` in lexicographic
/// order; returns false after the last one.
fn next_combination(idx: &mut [usize], m: usize) -> bool {
    let r = idx.len();
    let mut i = r;
    while i > 0 {
        i -= 1;
        if idx[i] < m - (r - i) {
            idx[i] += 1;
            for j in (i + 1)..r {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn brute_force_stratified(h: &InfluenceMatrix, design: &StratifiedDesign) -> Result<VarianceReport> {
    let strata = &design.strata;
    let mut total: u128 = 1;
    for k in 0..strata.k {
        total = total.saturating_mul(binomial_capped(strata.counts[k], design.allocation[k]));
        if total > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge(total));
        }
    }

    // per-stratum weighted sums over each of its combinations
    let n_units = strata.n_units() as f64;
    let d = h.dim();
    let mut parts: Vec<Vec<Vec<f64>>> = Vec::with_capacity(strata.k);
    for k in 0..strata.k {
        let members = strata.members(k);
        let n_k = design.allocation[k];
        let w = strata.counts[k] as f64 / n_k as f64;
        let mut idx: Vec<usize> = (0..n_k).collect();
        let mut sums = Vec::new();
        loop {
            let mut s = vec![0.0; d];
            for &pos in &idx {
                for (j, v) in h.h.row(members[pos]).iter().enumerate() {
                    s[j] += w * v / n_units;
                }
            }
            sums.push(s);
            if !next_combination(&mut idx, members.len()) {
                break;
            }
        }
        parts.push(sums);
    }

    // walk the full cartesian product twice: mean, then centered moments
    type Visitor<'v> = Box<dyn FnMut(&[f64]) + 'v>;
    let visit = |mut f: Visitor<'_>| {
        let mut odometer = vec![0usize; strata.k];
        let mut t = vec![0.0; d];
        loop {
            t.iter_mut().for_each(|v| *v = 0.0);
            for (k, &c) in odometer.iter().enumerate() {
                for (j, v) in parts[k][c].iter().enumerate() {
                    t[j] += v;
                }
            }
            f(&t);
            let mut pos = strata.k;
            loop {
                if pos == 0 {
                    return;
                }
                pos -= 1;
                odometer[pos] += 1;
                if odometer[pos] < parts[pos].len() {
                    break;
                }
                odometer[pos] = 0;
            }
        }
    };

    let count = total as f64;
    let mut mean = vec![0.0; d];
    {
        let mut sums = vec![0.0; d];
        let mut comp = vec![0.0; d];
        visit(Box::new(|t: &[f64]| {
            for (j, &v) in t.iter().enumerate() {
                let term = v - comp[j];
                let s = sums[j] + term;
                comp[j] = (s - sums[j]) - term;
                sums[j] = s;
            }
        }));
        for j in 0..d {
            mean[j] = sums[j] / count;
        }
    }
    let mut second = KahanMatrix::new(d);
    visit(Box::new(|t: &[f64]| {
        let centered: Vec<f64> = t.iter().zip(&mean).map(|(a, b)| a - b).collect();
        second.add_outer(&centered);
    }));
    Ok(VarianceReport::new(
        second.into_matrix(1.0 / count),
        "brute-force stratified",
    ))
}

fn brute_force_poisson(h: &InfluenceMatrix, design: &IndividualizedDesign) -> VarianceReport {
    // independence factorization: Var(sum) = sum of per-unit Bernoulli
    // variances E[(R/pi)^2] - E[R/pi]^2 = 1/pi - 1
    let n_units = h.n() as f64;
    let d = h.dim();
    let mut m = Matrix::zeros(d, d);
    for (i, &pi) in design.pi.iter().enumerate() {
        let e_sq = 1.0 / pi; // E[(R/pi)^2] = pi / pi^2
        let e = 1.0; // E[R/pi]
        m.add_outer(h.h.row(i), e_sq - e * e);
    }
    VarianceReport::new(
        m.scaled(1.0 / (n_units * n_units)),
        "brute-force poisson",
    )
}

fn brute_force_with_replacement(
    h: &InfluenceMatrix,
    design: &IndividualizedDesign,
) -> VarianceReport {
    // multinomial closed form for T = (1/N) sum_i m_i h_i / (n p_i) with
    // m ~ Multinomial(n, p): Var = (n/N^2)[sum p_i c_i c_i' - (sum p_i c_i)
    // (sum p_i c_i)'] where c_i = h_i / (n p_i)
    let n_units = h.n() as f64;
    let d = h.dim();
    let budget: f64 = design.pi.iter().sum();
    let n_draws = budget.round();
    let mut mixed = Matrix::zeros(d, d);
    let mut mean_c = vec![0.0; d];
    for (i, &pi) in design.pi.iter().enumerate() {
        let p = pi / budget;
        let c: Vec<f64> = h.h.row(i).iter().map(|v| v / (n_draws * p)).collect();
        mixed.add_outer(&c, p);
        for (j, v) in c.iter().enumerate() {
            mean_c[j] += p * v;
        }
    }
    let mut centered = mixed;
    centered.add_outer(&mean_c, -1.0);
    VarianceReport::new(
        centered.scaled(n_draws / (n_units * n_units)),
        "brute-force with-replacement",
    )
}

/// Exact design variance of `(1/N) sum_i R_i h_i / pi_i`, computed without
/// the closed forms above: full enumeration of the
/// `prod_k C(N_k, n_k)` equiprobable stratified samples, the Bernoulli
/// independence sum for Poisson designs, and the multinomial moment formula
/// for with-replacement designs.
pub fn brute_force_design_variance<'a>(
    h: &InfluenceMatrix,
    design: impl Into<AnyDesign<'a>>,
) -> Result<VarianceReport> {
    match design.into() {
        AnyDesign::Stratified(d) => brute_force_stratified(h, d),
        AnyDesign::Individualized(d) => match d.mechanism {
            Mechanism::PoissonIndependent => Ok(brute_force_poisson(h, d)),
            Mechanism::WithReplacement => Ok(brute_force_with_replacement(h, d)),
        },
    }
}

/// Assigns each unit to one of `k` strata uniformly at random, dropping
/// empty strata.
pub fn random_strata(n_units: usize, k: usize, rng: &mut RngStream) -> StrataAssignment {
    let raw: Vec<usize> = (0..n_units).map(|_| rng.gen_range(0..k)).collect();
    let mut seen: Vec<usize> = raw.clone();
    seen.sort_unstable();
    seen.dedup();
    let stratum_of: Vec<usize> = raw
        .iter()
        .map(|s| seen.binary_search(s).unwrap())
        .collect();
    let mut counts = vec![0usize; seen.len()];
    for &s in &stratum_of {
        counts[s] += 1;
    }
    StrataAssignment {
        k: seen.len(),
        labels: seen.iter().map(|s| format!("rand={s}")).collect(),
        stratum_of,
        counts,
    }
}

/// Trace of the OSMAC Poisson variance minus the trace of the Neyman
/// stratified variance under uniformly random (uninformative) strata.
/// Asymptotically nonpositive: when stratification carries no information,
/// individualized sampling is at least as efficient.
pub fn trace_gap_uninformative(
    h: &InfluenceMatrix,
    n: usize,
    k: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let design = crate::designs::osmac(&h.norms, n)?;
    let pois = poisson_variance(h, &design.pi)?;
    let strata = random_strata(h.n(), k, rng);
    let strat = neyman_variance(h, &strata, n)?;
    Ok(pois.trace - strat.trace)
}
