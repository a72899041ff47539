//! Benchmark data generation: seven covariate scenarios, logistic outcomes,
//! differentially misclassified surrogate outcomes, a synthetic cohort
//! shaped like the motivating observational study, and CSV ingest/emit for
//! external cohorts.

use crate::error::{Error, Result};
use crate::logistic::{expit, Dataset};
use crate::numerics::{cholesky, dot, empirical_quantile, Matrix, RngStream};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// The seven benchmark covariate distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioFamily {
    /// N(0, S) with S_ij = 0.5 off the unit diagonal.
    ZeroMeanNormal,
    /// N(-1.6, S): shifts the outcome toward rare events.
    RareEvent,
    /// N(0, S*) with S*_ii = 1/i^2 and correlation 0.5 preserved.
    UnequalVar,
    /// Fair mixture of N(+1, S) and N(-1, S).
    MixNormal,
    /// Multivariate t with 3 degrees of freedom, scaled by 1/10.
    T3,
    /// Independent Exponential(rate 2) covariates.
    Exp,
    /// Independent Bernoulli(0.5) covariates; three covariates only.
    DiscreteX,
}

impl ScenarioFamily {
    pub const ALL: [ScenarioFamily; 7] = [
        ScenarioFamily::ZeroMeanNormal,
        ScenarioFamily::RareEvent,
        ScenarioFamily::UnequalVar,
        ScenarioFamily::MixNormal,
        ScenarioFamily::T3,
        ScenarioFamily::Exp,
        ScenarioFamily::DiscreteX,
    ];
}

impl fmt::Display for ScenarioFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ScenarioFamily::ZeroMeanNormal => "zeroMeanNormal",
            ScenarioFamily::RareEvent => "rareEvent",
            ScenarioFamily::UnequalVar => "unequalVar",
            ScenarioFamily::MixNormal => "mixNormal",
            ScenarioFamily::T3 => "T3",
            ScenarioFamily::Exp => "Exp",
            ScenarioFamily::DiscreteX => "DiscreteX",
        };
        f.write_str(name)
    }
}

impl FromStr for ScenarioFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeroMeanNormal" => Ok(ScenarioFamily::ZeroMeanNormal),
            "rareEvent" => Ok(ScenarioFamily::RareEvent),
            "unequalVar" => Ok(ScenarioFamily::UnequalVar),
            "mixNormal" => Ok(ScenarioFamily::MixNormal),
            "T3" => Ok(ScenarioFamily::T3),
            "Exp" => Ok(ScenarioFamily::Exp),
            "DiscreteX" => Ok(ScenarioFamily::DiscreteX),
            other => Err(Error::ParseError {
                path: "<scenario>".into(),
                row: 0,
                msg: format!("unknown scenario `{other}`"),
            }),
        }
    }
}

/// Surrogate misclassification severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorLevel {
    Low,
    High,
    /// No surrogate generated.
    None,
}

impl fmt::Display for ErrorLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorLevel::Low => "low",
            ErrorLevel::High => "high",
            ErrorLevel::None => "none",
        })
    }
}

impl FromStr for ErrorLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(ErrorLevel::Low),
            "high" => Ok(ErrorLevel::High),
            "none" => Ok(ErrorLevel::None),
            other => Err(Error::ParseError {
                path: "<error-level>".into(),
                row: 0,
                msg: format!("unknown error level `{other}`"),
            }),
        }
    }
}

/// A fully specified benchmark scenario.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub family: ScenarioFamily,
    /// Covariate count excluding the intercept; 3 or 7 (DiscreteX: 3 only).
    pub p: usize,
    pub n_units: usize,
    /// True coefficients, intercept first; length `p + 1`.
    pub beta: Vec<f64>,
    pub error_level: ErrorLevel,
}

impl ScenarioSpec {
    /// The benchmark coefficient vector: all 0.5, except the Exp scenario's
    /// intercept of -0.5.
    pub fn default_beta(family: ScenarioFamily, p: usize) -> Vec<f64> {
        let mut beta = vec![0.5; p + 1];
        if family == ScenarioFamily::Exp {
            beta[0] = -0.5;
        }
        beta
    }

    pub fn benchmark(
        family: ScenarioFamily,
        p: usize,
        n_units: usize,
        error_level: ErrorLevel,
    ) -> Result<Self> {
        let spec = Self {
            family,
            p,
            n_units,
            beta: Self::default_beta(family, p),
            error_level,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p != 3 && self.p != 7 {
            return Err(Error::DimensionMismatch(format!(
                "covariate count must be 3 or 7, got {}",
                self.p
            )));
        }
        if self.family == ScenarioFamily::DiscreteX && self.p != 3 {
            return Err(Error::DimensionMismatch(
                "DiscreteX is defined for p = 3 only".into(),
            ));
        }
        if self.beta.len() != self.p + 1 {
            return Err(Error::DimensionMismatch(format!(
                "beta length {} but p + 1 = {}",
                self.beta.len(),
                self.p + 1
            )));
        }
        Ok(())
    }
}

/// Covariance with unit diagonal and 0.5 everywhere else.
fn equicorrelation(p: usize) -> Matrix {
    let mut m = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            m.set(i, j, if i == j { 1.0 } else { 0.5 });
        }
    }
    m
}

/// The unequal-variance covariance: variances 1/i^2 on the diagonal with
/// all pairwise correlations held at 0.5, i.e. S* = D R D for D = diag(1/i).
/// (Reading the stated diagonal together with a constant off-diagonal 0.5
/// covariance would not be positive semi-definite.)
fn unequal_variance(p: usize) -> Matrix {
    let mut m = equicorrelation(p);
    for i in 0..p {
        for j in 0..p {
            let d = 1.0 / ((i + 1) as f64 * (j + 1) as f64);
            m.set(i, j, m.get(i, j) * d);
        }
    }
    m
}

fn standard_normals(p: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..p).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws the covariate matrix for a scenario, with the intercept column
/// prepended: an `N x (p+1)` matrix. Deterministic given the stream.
pub fn gen_covariates(spec: &ScenarioSpec, rng: &mut RngStream) -> Result<Matrix> {
    spec.validate()?;
    let p = spec.p;
    let n = spec.n_units;
    let mut x = Matrix::zeros(n, p + 1);
    for r in 0..n {
        x.set(r, 0, 1.0);
    }

    let fill_mvn = |x: &mut Matrix, chol: &Matrix, rng: &mut RngStream, mean: f64, scale: f64, mix: bool| {
        for r in 0..n {
            let z = standard_normals(p, rng);
            let mu = if mix {
                if rng.gen_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            } else {
                mean
            };
            for j in 0..p {
                let v: f64 = (0..=j).map(|t| chol.get(j, t) * z[t]).sum();
                x.set(r, j + 1, scale * (mu + v));
            }
        }
    };

    match spec.family {
        ScenarioFamily::ZeroMeanNormal => {
            let chol = cholesky(&equicorrelation(p))?;
            fill_mvn(&mut x, &chol, rng, 0.0, 1.0, false);
        }
        ScenarioFamily::RareEvent => {
            let chol = cholesky(&equicorrelation(p))?;
            fill_mvn(&mut x, &chol, rng, -1.6, 1.0, false);
        }
        ScenarioFamily::UnequalVar => {
            let chol = cholesky(&unequal_variance(p))?;
            fill_mvn(&mut x, &chol, rng, 0.0, 1.0, false);
        }
        ScenarioFamily::MixNormal => {
            let chol = cholesky(&equicorrelation(p))?;
            fill_mvn(&mut x, &chol, rng, 0.0, 1.0, true);
        }
        ScenarioFamily::T3 => {
            // t3 = z / sqrt(w/3) with z ~ N(0, S), w ~ chi-square(3),
            // then divided by 10
            let chol = cholesky(&equicorrelation(p))?;
            let chi = ChiSquared::new(3.0).expect("valid dof");
            for r in 0..n {
                let z = standard_normals(p, rng);
                let w: f64 = chi.sample(rng);
                let denom = (w / 3.0).sqrt();
                for j in 0..p {
                    let v: f64 = (0..=j).map(|t| chol.get(j, t) * z[t]).sum();
                    x.set(r, j + 1, v / denom / 10.0);
                }
            }
        }
        ScenarioFamily::Exp => {
            // inverse CDF of Exponential(rate 2)
            for r in 0..n {
                for j in 0..p {
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    x.set(r, j + 1, -u.ln() / 2.0);
                }
            }
        }
        ScenarioFamily::DiscreteX => {
            for r in 0..n {
                for j in 0..p {
                    x.set(r, j + 1, f64::from(rng.gen_range(0..2u8)));
                }
            }
        }
    }
    Ok(x)
}

/// Independent Bernoulli outcomes with success probability
/// `expit(x_i' beta)`.
pub fn gen_outcome(x: &Matrix, beta: &[f64], rng: &mut RngStream) -> Result<Vec<u8>> {
    if beta.len() != x.cols() {
        return Err(Error::DimensionMismatch(format!(
            "gen_outcome: X has {} columns, beta length {}",
            x.cols(),
            beta.len()
        )));
    }
    Ok((0..x.rows())
        .map(|r| u8::from(rng.gen_bool(expit(dot(x.row(r), beta)))))
        .collect())
}

/// Region-dependent misclassification: sensitivity and specificity take one
/// value for units with `X_col < threshold` and another at or above it.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateSpec {
    pub sens_below: f64,
    pub sens_above: f64,
    pub spec_below: f64,
    pub spec_above: f64,
    /// Column of the covariate matrix (including intercept) carrying the
    /// thresholded variable; the benchmark uses the first covariate.
    pub threshold_variable: usize,
    pub threshold: f64,
}

impl SurrogateSpec {
    /// Low-error benchmark misclassification: sensitivity
    /// `0.04 I(X1 < c1) + 0.95`, specificity `0.1 I(X1 < c1) + 0.8`.
    pub fn low(threshold: f64) -> Self {
        Self {
            sens_below: 0.99,
            sens_above: 0.95,
            spec_below: 0.90,
            spec_above: 0.80,
            threshold_variable: 1,
            threshold,
        }
    }

    /// High-error benchmark misclassification: sensitivity
    /// `0.05 I(X1 < c1) + 0.90`, specificity `0.1 I(X1 < c1) + 0.6`.
    pub fn high(threshold: f64) -> Self {
        Self {
            sens_below: 0.95,
            sens_above: 0.90,
            spec_below: 0.70,
            spec_above: 0.60,
            threshold_variable: 1,
            threshold,
        }
    }

    pub fn for_level(level: ErrorLevel, threshold: f64) -> Option<Self> {
        match level {
            ErrorLevel::Low => Some(Self::low(threshold)),
            ErrorLevel::High => Some(Self::high(threshold)),
            ErrorLevel::None => None,
        }
    }

    fn validate(&self) -> Result<()> {
        for v in [
            self.sens_below,
            self.sens_above,
            self.spec_below,
            self.spec_above,
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidQuantile(v));
            }
        }
        Ok(())
    }
}

/// The benchmark threshold `c1`: the empirical 0.3 quantile of the first
/// covariate, except DiscreteX where it is the constant 0.5 separating the
/// two levels.
pub fn surrogate_threshold(x: &Matrix, family: ScenarioFamily) -> Result<f64> {
    if family == ScenarioFamily::DiscreteX {
        return Ok(0.5);
    }
    empirical_quantile(&x.col(1), 0.3)
}

/// Draws the surrogate outcome: `s_i = 1` with the regional sensitivity
/// when `y_i = 1`, and with one minus the regional specificity otherwise.
pub fn gen_surrogate(
    y: &[u8],
    x: &Matrix,
    spec: &SurrogateSpec,
    rng: &mut RngStream,
) -> Result<Vec<u8>> {
    spec.validate()?;
    if y.len() != x.rows() || spec.threshold_variable >= x.cols() {
        return Err(Error::DimensionMismatch(format!(
            "gen_surrogate: {} outcomes, X is {}x{}, threshold column {}",
            y.len(),
            x.rows(),
            x.cols(),
            spec.threshold_variable
        )));
    }
    Ok((0..y.len())
        .map(|i| {
            let below = x.get(i, spec.threshold_variable) < spec.threshold;
            let p_one = if y[i] == 1 {
                if below {
                    spec.sens_below
                } else {
                    spec.sens_above
                }
            } else if below {
                1.0 - spec.spec_below
            } else {
                1.0 - spec.spec_above
            };
            u8::from(rng.gen_bool(p_one))
        })
        .collect())
}

/// Full generation pipeline for a benchmark scenario: covariates, outcome,
/// and (unless the error level is `none`) the surrogate.
pub fn gen_dataset(spec: &ScenarioSpec, rng: &mut RngStream) -> Result<Dataset> {
    let x = gen_covariates(spec, rng)?;
    let y = gen_outcome(&x, &spec.beta, rng)?;
    let s = match SurrogateSpec::for_level(spec.error_level, surrogate_threshold(&x, spec.family)?)
    {
        Some(sur) => Some(gen_surrogate(&y, &x, &sur, rng)?),
        None => None,
    };
    Dataset::new(x, Some(y), s)
}

/// Population size of the synthetic validation-study cohort.
pub const VCCC_LIKE_N: usize = 1595;

/// Synthetic stand-in for the motivating cohort: 1,595 units, an age-like
/// and a CD4-like standardized covariate, outcome prevalence calibrated to
/// 6%, and a surrogate with sensitivity 0.72 below the 0.3 quantile of the
/// CD4-like covariate (0.90 above) and specificity 0.90 everywhere.
pub fn gen_vccc_like(rng: &mut RngStream) -> Result<Dataset> {
    let n = VCCC_LIKE_N;
    let mut x = Matrix::zeros(n, 3);
    for r in 0..n {
        x.set(r, 0, 1.0);
        x.set(r, 1, StandardNormal.sample(rng)); // age-like
        x.set(r, 2, StandardNormal.sample(rng)); // CD4-like
    }
    let slope = [0.3, -0.7]; // age raises risk, higher CD4 lowers it

    // calibrate the intercept so the mean fitted probability is 0.06
    let mut lo = -12.0;
    let mut hi = 2.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let prev: f64 = (0..n)
            .map(|r| expit(mid + slope[0] * x.get(r, 1) + slope[1] * x.get(r, 2)))
            .sum::<f64>()
            / n as f64;
        if prev < 0.06 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = vec![0.5 * (lo + hi), slope[0], slope[1]];
    let y = gen_outcome(&x, &beta, rng)?;

    let threshold = empirical_quantile(&x.col(2), 0.3)?;
    let spec = SurrogateSpec {
        sens_below: 0.72,
        sens_above: 0.90,
        spec_below: 0.90,
        spec_above: 0.90,
        threshold_variable: 2,
        threshold,
    };
    let s = gen_surrogate(&y, &x, &spec, rng)?;
    Dataset::new(x, Some(y), Some(s))
}

/// Reads a cohort from CSV: a mandatory header, a `y` and/or `s` binary
/// outcome column, and every other column parsed as a numeric covariate in
/// header order. An intercept column is prepended.
pub fn load_dataset_csv(path: &Path) -> Result<Dataset> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let y_col = headers.iter().position(|h| h == "y");
    let s_col = headers.iter().position(|h| h == "s");
    if y_col.is_none() && s_col.is_none() {
        return Err(Error::MissingOutcomeColumns);
    }
    let covariate_cols: Vec<usize> = (0..headers.len())
        .filter(|c| Some(*c) != y_col && Some(*c) != s_col)
        .collect();

    let parse_outcome = |field: &str, name: &str, row: usize| -> Result<u8> {
        match field {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::NonBinaryOutcome {
                column: name.to_string(),
                row,
                value: other.to_string(),
            }),
        }
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    let mut s = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        if let Some(c) = y_col {
            y.push(parse_outcome(&record[c], "y", row)?);
        }
        if let Some(c) = s_col {
            s.push(parse_outcome(&record[c], "s", row)?);
        }
        let mut covs = Vec::with_capacity(covariate_cols.len() + 1);
        covs.push(1.0);
        for &c in &covariate_cols {
            let v: f64 = record[c].parse().map_err(|e| Error::ParseError {
                path: display.clone(),
                row,
                msg: format!("column `{}`: {e}", &headers[c]),
            })?;
            covs.push(v);
        }
        rows.push(covs);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Dataset::new(
        Matrix::from_rows(&rows),
        y_col.map(|_| y),
        s_col.map(|_| s),
    )
}

/// Writes a cohort to CSV with columns `y`, `s` (whichever are present)
/// followed by `x1..xp`; floats round-trip exactly through [`load_dataset_csv`].
pub fn save_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let p = data.p();
    let mut header = Vec::new();
    if data.y.is_some() {
        header.push("y".to_string());
    }
    if data.s.is_some() {
        header.push("s".to_string());
    }
    for j in 1..=p {
        header.push(format!("x{j}"));
    }
    writer.write_record(&header)?;
    for r in 0..data.n() {
        let mut record = Vec::new();
        if let Some(y) = &data.y {
            record.push(y[r].to_string());
        }
        if let Some(s) = &data.s {
            record.push(s[r].to_string());
        }
        for j in 1..=p {
            record.push(format!("{:?}", data.x.get(r, j)));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const N_BIG: usize = 100_000;

    fn spec(family: ScenarioFamily, p: usize) -> ScenarioSpec {
        ScenarioSpec::benchmark(family, p, N_BIG, ErrorLevel::None).unwrap()
    }

    fn column_mean(x: &Matrix, j: usize) -> f64 {
        x.col(j).iter().sum::<f64>() / x.rows() as f64
    }

    fn column_var(x: &Matrix, j: usize) -> f64 {
        let m = column_mean(x, j);
        x.col(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.rows() - 1) as f64
    }

    fn column_cov(x: &Matrix, a: usize, b: usize) -> f64 {
        let (ma, mb) = (column_mean(x, a), column_mean(x, b));
        (0..x.rows())
            .map(|r| (x.get(r, a) - ma) * (x.get(r, b) - mb))
            .sum::<f64>()
            / (x.rows() - 1) as f64
    }

    #[test]
    fn zero_mean_normal_moments() {
        let mut rng = RngStream::new(60, 0);
        let x = gen_covariates(&spec(ScenarioFamily::ZeroMeanNormal, 3), &mut rng).unwrap();
        let n = N_BIG as f64;
        // sample covariance of correlated normals: SE ~ sqrt((1+rho^2)/N)
        let se_cov = (1.25f64 / n).sqrt();
        assert!((column_cov(&x, 2, 3) - 0.5).abs() <= 3.0 * se_cov);
        // sample variance of a normal: SE ~ sqrt(2/N)
        let se_var = (2.0f64 / n).sqrt();
        for j in 1..=3 {
            assert!((column_var(&x, j) - 1.0).abs() <= 3.0 * se_var, "col {j}");
        }
        for r in 0..x.rows() {
            assert_eq!(x.get(r, 0), 1.0);
        }
    }

    #[test]
    fn rare_event_mean_shift() {
        let mut rng = RngStream::new(60, 1);
        let x = gen_covariates(&spec(ScenarioFamily::RareEvent, 3), &mut rng).unwrap();
        let se = (1.0 / N_BIG as f64).sqrt();
        for j in 1..=3 {
            assert!((column_mean(&x, j) + 1.6).abs() <= 3.0 * se);
        }
    }

    #[test]
    fn unequal_variance_diagonal() {
        let mut rng = RngStream::new(60, 2);
        let x = gen_covariates(&spec(ScenarioFamily::UnequalVar, 3), &mut rng).unwrap();
        let n = N_BIG as f64;
        for j in 1..=3 {
            let target = 1.0 / (j * j) as f64;
            // Var(sample var) ~ 2 sigma^4 / N for normals
            let se = target * (2.0 / n).sqrt();
            assert!(
                (column_var(&x, j) - target).abs() <= 3.0 * se,
                "col {j}: var {}",
                column_var(&x, j)
            );
        }
        // correlation preserved at 0.5
        let corr = column_cov(&x, 1, 2) / (column_var(&x, 1) * column_var(&x, 2)).sqrt();
        assert!((corr - 0.5).abs() <= 0.02);
    }

    #[test]
    fn mix_normal_moments() {
        let mut rng = RngStream::new(60, 3);
        let x = gen_covariates(&spec(ScenarioFamily::MixNormal, 3), &mut rng).unwrap();
        let n = N_BIG as f64;
        // mixture of unit normals at +-1: mean 0, variance 2, E[X^4] = 10
        let se_mean = (2.0f64 / n).sqrt();
        assert!(column_mean(&x, 1).abs() <= 3.0 * se_mean);
        let se_var = (6.0f64 / n).sqrt(); // Var(X^2) = 10 - 4
        assert!((column_var(&x, 1) - 2.0).abs() <= 3.0 * se_var);
    }

    #[test]
    fn t3_location_and_absolute_moment() {
        let mut rng = RngStream::new(60, 4);
        let x = gen_covariates(&spec(ScenarioFamily::T3, 3), &mut rng).unwrap();
        let n = N_BIG as f64;
        // t3/10: mean 0 with variance 3/100
        let se_mean = (0.03f64 / n).sqrt();
        assert!(column_mean(&x, 1).abs() <= 3.0 * se_mean);
        // E|t3| = 2 sqrt(3) / pi, so E|X| = that / 10; Var|X| = 3/100 - E^2
        let e_abs = 2.0 * 3.0f64.sqrt() / std::f64::consts::PI / 10.0;
        let var_abs = 0.03 - e_abs * e_abs;
        let mean_abs: f64 =
            x.col(1).iter().map(|v| v.abs()).sum::<f64>() / n;
        assert!((mean_abs - e_abs).abs() <= 3.0 * (var_abs / n).sqrt());
    }

    #[test]
    fn exponential_mean() {
        let mut rng = RngStream::new(60, 5);
        let x = gen_covariates(&spec(ScenarioFamily::Exp, 3), &mut rng).unwrap();
        let n = N_BIG as f64;
        let se = (0.25f64 / n).sqrt();
        for j in 1..=3 {
            assert!((column_mean(&x, j) - 0.5).abs() <= 3.0 * se);
            assert!(x.col(j).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn discrete_x_levels_and_independence() {
        let mut rng = RngStream::new(60, 6);
        let x = gen_covariates(&spec(ScenarioFamily::DiscreteX, 3), &mut rng).unwrap();
        let n = N_BIG as f64;
        let se = (0.25f64 / n).sqrt();
        for j in 1..=3 {
            assert!(x.col(j).iter().all(|&v| v == 0.0 || v == 1.0));
            assert!((column_mean(&x, j) - 0.5).abs() <= 3.0 * se);
        }
        assert!(column_cov(&x, 1, 2).abs() <= 3.0 * se);
    }

    #[test]
    fn seven_covariate_variants_generate() {
        for family in ScenarioFamily::ALL {
            if family == ScenarioFamily::DiscreteX {
                assert!(ScenarioSpec::benchmark(family, 7, 100, ErrorLevel::None).is_err());
                continue;
            }
            let spec = ScenarioSpec::benchmark(family, 7, 500, ErrorLevel::None).unwrap();
            let mut rng = RngStream::new(61, 0);
            let x = gen_covariates(&spec, &mut rng).unwrap();
            assert_eq!(x.cols(), 8);
            assert_eq!(x.rows(), 500);
        }
    }

    #[test]
    fn outcome_prevalence_at_zero_beta() {
        let mut rng = RngStream::new(62, 0);
        let x = gen_covariates(&spec(ScenarioFamily::ZeroMeanNormal, 3), &mut rng).unwrap();
        let y = gen_outcome(&x, &[0.0; 4], &mut rng).unwrap();
        let prev = y.iter().map(|&v| f64::from(v)).sum::<f64>() / N_BIG as f64;
        let se = (0.25f64 / N_BIG as f64).sqrt();
        assert!((prev - 0.5).abs() <= 3.0 * se);
    }

    #[test]
    fn rare_event_prevalence_matches_integration_oracle() {
        // Monte Carlo integral of expit(x'beta) over fresh draws
        let beta = ScenarioSpec::default_beta(ScenarioFamily::RareEvent, 3);
        let oracle_spec = ScenarioSpec {
            n_units: 1_000_000,
            ..spec(ScenarioFamily::RareEvent, 3)
        };
        let mut oracle_rng = RngStream::new(63, 999);
        let ox = gen_covariates(&oracle_spec, &mut oracle_rng).unwrap();
        let oracle: f64 = (0..ox.rows())
            .map(|r| expit(dot(ox.row(r), &beta)))
            .sum::<f64>()
            / ox.rows() as f64;

        let mut rng = RngStream::new(63, 0);
        let x = gen_covariates(&spec(ScenarioFamily::RareEvent, 3), &mut rng).unwrap();
        let y = gen_outcome(&x, &beta, &mut rng).unwrap();
        let prev = y.iter().map(|&v| f64::from(v)).sum::<f64>() / N_BIG as f64;
        assert!(prev < 0.25, "rare-event prevalence should be low: {prev}");
        let se = (oracle * (1.0 - oracle) / N_BIG as f64).sqrt()
            + (oracle * (1.0 - oracle) / 1e6).sqrt();
        assert!((prev - oracle).abs() <= 3.0 * se, "{prev} vs {oracle}");
    }

    #[test]
    fn saturated_linear_predictor_is_deterministic() {
        let x = Matrix::from_rows(&[vec![1.0, 39.0], vec![1.0, 39.0]]);
        let mut rng = RngStream::new(64, 0);
        let y = gen_outcome(&x, &[1.0, 1.0], &mut rng).unwrap();
        assert_eq!(y, vec![1, 1]);
    }

    fn confusion_by_region(
        y: &[u8],
        s: &[u8],
        x: &Matrix,
        threshold: f64,
    ) -> [(f64, f64, usize); 4] {
        // (rate, target_placeholder, count) per (region, outcome) cell:
        // [sens_below, sens_above, spec_below, spec_above]
        let mut hits = [0usize; 4];
        let mut totals = [0usize; 4];
        for i in 0..y.len() {
            let below = x.get(i, 1) < threshold;
            let cell = match (y[i], below) {
                (1, true) => 0,
                (1, false) => 1,
                (0, true) => 2,
                (0, false) => 3,
                _ => unreachable!(),
            };
            totals[cell] += 1;
            let correct = if y[i] == 1 { s[i] == 1 } else { s[i] == 0 };
            if correct {
                hits[cell] += 1;
            }
        }
        let mut out = [(0.0, 0.0, 0usize); 4];
        for c in 0..4 {
            out[c] = (hits[c] as f64 / totals[c] as f64, 0.0, totals[c]);
        }
        out
    }

    #[test]
    fn surrogate_confusion_rates_by_region() {
        for (level, targets) in [
            (ErrorLevel::Low, [0.99, 0.95, 0.90, 0.80]),
            (ErrorLevel::High, [0.95, 0.90, 0.70, 0.60]),
        ] {
            let mut rng = RngStream::new(65, 0);
            let sc = ScenarioSpec::benchmark(
                ScenarioFamily::ZeroMeanNormal,
                3,
                N_BIG,
                level,
            )
            .unwrap();
            let x = gen_covariates(&sc, &mut rng).unwrap();
            let y = gen_outcome(&x, &sc.beta, &mut rng).unwrap();
            let threshold = surrogate_threshold(&x, sc.family).unwrap();
            let sur = SurrogateSpec::for_level(level, threshold).unwrap();
            let s = gen_surrogate(&y, &x, &sur, &mut rng).unwrap();
            let cells = confusion_by_region(&y, &s, &x, threshold);
            for (c, &(rate, _, m)) in cells.iter().enumerate() {
                let t = targets[c];
                let se = (t * (1.0 - t) / m as f64).sqrt();
                assert!(
                    (rate - t).abs() <= 3.0 * se,
                    "{level}: cell {c} rate {rate} target {t} (m = {m})"
                );
            }
        }
    }

    #[test]
    fn perfect_surrogate_copies_outcome() {
        let mut rng = RngStream::new(66, 0);
        let sc = spec(ScenarioFamily::ZeroMeanNormal, 3);
        let x = gen_covariates(&sc, &mut rng).unwrap();
        let y = gen_outcome(&x, &sc.beta, &mut rng).unwrap();
        let sur = SurrogateSpec {
            sens_below: 1.0,
            sens_above: 1.0,
            spec_below: 1.0,
            spec_above: 1.0,
            threshold_variable: 1,
            threshold: 0.0,
        };
        let s = gen_surrogate(&y, &x, &sur, &mut rng).unwrap();
        assert_eq!(s, y);
    }

    #[test]
    fn generation_is_deterministic() {
        let sc = ScenarioSpec::benchmark(
            ScenarioFamily::MixNormal,
            3,
            500,
            ErrorLevel::Low,
        )
        .unwrap();
        let a = gen_dataset(&sc, &mut RngStream::new(67, 5)).unwrap();
        let b = gen_dataset(&sc, &mut RngStream::new(67, 5)).unwrap();
        assert_eq!(a.x.data(), b.x.data());
        assert_eq!(a.y, b.y);
        assert_eq!(a.s, b.s);
        let c = gen_dataset(&sc, &mut RngStream::new(67, 6)).unwrap();
        assert!(a.x.data() != c.x.data());
    }

    #[test]
    fn vccc_like_summary_statistics() {
        let mut rng = RngStream::new(68, 0);
        let data = gen_vccc_like(&mut rng).unwrap();
        assert_eq!(data.n(), VCCC_LIKE_N);
        assert_eq!(data.p(), 2);
        let y = data.y.as_ref().unwrap();
        let s = data.s.as_ref().unwrap();
        let n = VCCC_LIKE_N as f64;

        let prev = y.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let se = (0.06f64 * 0.94 / n).sqrt();
        assert!((prev - 0.06).abs() <= 3.0 * se, "prevalence {prev}");

        let s_prev = s.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        assert!(
            (0.10..=0.18).contains(&s_prev),
            "surrogate prevalence {s_prev}"
        );

        // sensitivity below the CD4-like 0.3 quantile targets 0.72
        let threshold = empirical_quantile(&data.x.col(2), 0.3).unwrap();
        let below: Vec<usize> = (0..data.n())
            .filter(|&i| y[i] == 1 && data.x.get(i, 2) < threshold)
            .collect();
        let sens = below.iter().filter(|&&i| s[i] == 1).count() as f64 / below.len() as f64;
        let se_sens = (0.72f64 * 0.28 / below.len() as f64).sqrt();
        assert!(
            (sens - 0.72).abs() <= 3.0 * se_sens,
            "below-region sensitivity {sens} over {} units",
            below.len()
        );
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.csv");
        let mut rng = RngStream::new(69, 0);
        let data = gen_vccc_like(&mut rng).unwrap();
        save_dataset_csv(&data, &path).unwrap();
        let back = load_dataset_csv(&path).unwrap();
        assert_eq!(back.n(), data.n());
        assert_eq!(back.p(), data.p());
        assert_eq!(back.y, data.y);
        assert_eq!(back.s, data.s);
        for r in 0..data.n() {
            for c in 0..data.x.cols() {
                assert_eq!(back.x.get(r, c).to_bits(), data.x.get(r, c).to_bits());
            }
        }
    }

    #[test]
    fn csv_loader_smoke_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.csv");
        std::fs::write(
            &path,
            "y,s,age,cd4\n1,1,0.5,-0.25\n0,0,1.5,0.75\n0,1,-0.5,0.125\n1,0,0.25,2.5\n",
        )
        .unwrap();
        let data = load_dataset_csv(&path).unwrap();
        assert_eq!(data.n(), 4);
        assert_eq!(data.p(), 2);
        assert_eq!(data.y, Some(vec![1, 0, 0, 1]));
        assert_eq!(data.s, Some(vec![1, 0, 1, 0]));
        assert_abs_diff_eq!(data.x.get(0, 2), -0.25);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "y,age\n0,1.0\n2,2.0\n1,3.0\n").unwrap();
        match load_dataset_csv(&bad) {
            Err(Error::NonBinaryOutcome { row, value, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(value, "2");
            }
            other => panic!("expected NonBinaryOutcome, got {other:?}"),
        }

        let no_outcome = dir.path().join("none.csv");
        std::fs::write(&no_outcome, "a,b\n1,2\n3,4\n").unwrap();
        assert!(matches!(
            load_dataset_csv(&no_outcome),
            Err(Error::MissingOutcomeColumns)
        ));

        let unparsable = dir.path().join("nan.csv");
        std::fs::write(&unparsable, "y,age\n0,1.0\n1,oops\n").unwrap();
        assert!(matches!(
            load_dataset_csv(&unparsable),
            Err(Error::ParseError { row: 2, .. })
        ));
    }
}
