//! Logistic regression: full-data and inverse-probability-weighted fits,
//! the information-style matrix `M_x`, and per-unit influence functions.
//!
//! The estimator solved here is the weighted score equation
//! `0 = (1/N) sum_i w_i (y_i - p_i(b)) x_i` with `p_i(b) = expit(x_i' b)`.
//! Unit weights give the plain MLE; Horvitz-Thompson weights `R_i / pi_i`
//! give the subsample estimator. The influence function of unit `i` is
//! `h_i = M_x(b)^{-1} (y_i - p_i(b)) x_i`, the per-unit linear contribution
//! to the estimator; its Euclidean norm drives every design in this crate.

use crate::error::{Error, Result};
use crate::numerics::{dot, max_abs_slice, norm2, spd_solve, Matrix};

/// Maximum IRLS iterations before the fit is flagged as non-converged.
const MAX_ITERATIONS: usize = 50;
/// Maximum step-halvings per IRLS iteration.
const MAX_HALVINGS: usize = 30;
/// Convergence threshold on the max-norm of the mean weighted score. Kept
/// loose enough that float-level plateaus in the step-halving line search
/// cannot stall below it; the polish phase then drives the score to machine
/// precision with plain Newton steps.
const SCORE_TOL: f64 = 1e-8;

/// A cohort: covariates with intercept column, plus whichever of the true
/// outcome `y` and the surrogate outcome `s` are observed.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Option<Vec<u8>>,
    pub s: Option<Vec<u8>>,
}

impl Dataset {
    /// Validates the invariants: intercept column of ones, binary outcome
    /// vectors of matching length, at least one outcome present, and
    /// `N >= p + 2`.
    pub fn new(x: Matrix, y: Option<Vec<u8>>, s: Option<Vec<u8>>) -> Result<Self> {
        let n = x.rows();
        if y.is_none() && s.is_none() {
            return Err(Error::MissingOutcomeColumns);
        }
        if n < x.cols() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "need N >= p + 2, got N = {n} with {} columns",
                x.cols()
            )));
        }
        for r in 0..n {
            if x.get(r, 0) != 1.0 {
                return Err(Error::DimensionMismatch(format!(
                    "first column must be the intercept (row {r} has {})",
                    x.get(r, 0)
                )));
            }
        }
        for (name, v) in [("y", &y), ("s", &s)] {
            if let Some(v) = v {
                if v.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "outcome {name} has length {} but X has {n} rows",
                        v.len()
                    )));
                }
                if let Some(bad) = v.iter().find(|&&b| b > 1) {
                    return Err(Error::NonBinaryOutcome {
                        column: name.to_string(),
                        row: v.iter().position(|b| *b > 1).unwrap(),
                        value: bad.to_string(),
                    });
                }
            }
        }
        Ok(Self { x, y, s })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    /// Covariate count excluding the intercept.
    pub fn p(&self) -> usize {
        self.x.cols() - 1
    }
}

/// Numerically stable `1 / (1 + exp(-z))`.
#[inline]
pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Result of a (weighted) logistic fit.
#[derive(Debug, Clone)]
pub struct FittedModel {
    /// Coefficients, intercept first.
    pub beta: Vec<f64>,
    /// `(1/sum w) sum_j w_j p_j (1 - p_j) x_j x_j'` at `beta`, with the
    /// fitting weights incorporated. With unit weights this is the usual
    /// plug-in information matrix `M_x(beta)`.
    pub m_x: Matrix,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the mean weighted score at `beta`.
    pub final_score_norm: f64,
}

fn linear_predictor(x: &Matrix, beta: &[f64]) -> Vec<f64> {
    (0..x.rows()).map(|r| dot(x.row(r), beta)).collect()
}

/// Fitted probabilities `expit(x_i' beta)` for every row of `x`.
pub fn predict(x: &Matrix, beta: &[f64]) -> Vec<f64> {
    linear_predictor(x, beta).into_iter().map(expit).collect()
}

/// Information-style matrix `(1/N) sum_i p_i (1 - p_i) x_i x_i'` at `beta`
/// with unit weights, for plug-in use on a full cohort.
pub fn m_x_at(x: &Matrix, beta: &[f64]) -> Matrix {
    let n = x.rows();
    let d = x.cols();
    let mut m = Matrix::zeros(d, d);
    for r in 0..n {
        let p = expit(dot(x.row(r), beta));
        m.add_outer(x.row(r), p * (1.0 - p) / n as f64);
    }
    m
}

fn weighted_loglik(eta: &[f64], outcome: &[u8], weights: &[f64]) -> f64 {
    eta.iter()
        .zip(outcome)
        .zip(weights)
        .map(|((&e, &y), &w)| w * (f64::from(y) * e - softplus(e)))
        .sum()
}

/// Solves the weighted score equation by iteratively reweighted least
/// squares with step-halving.
///
/// Weights are normalized to mean one internally, so the solution and the
/// convergence criterion are invariant to rescaling all weights by a
/// positive constant. Non-convergence after the iteration cap is not an
/// error; it is reported through `converged = false` so a Monte Carlo
/// harness can count and exclude the replicate.
pub fn fit_weighted_mle(x: &Matrix, outcome: &[u8], weights: &[f64]) -> Result<FittedModel> {
    let n = x.rows();
    let d = x.cols();
    if outcome.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "fit: X is {n}x{d}, outcome {}, weights {}",
            outcome.len(),
            weights.len()
        )));
    }
    let wsum: f64 = weights.iter().sum();
    // `!(wsum > 0.0)` deliberately catches NaN as well as nonpositive sums
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(wsum > 0.0) || weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::DegenerateDesign);
    }
    let scale = n as f64 / wsum;
    let w: Vec<f64> = weights.iter().map(|v| v * scale).collect();

    // mean weighted score and weighted information at a linear predictor
    let score_info = |eta: &[f64]| {
        let mut score = vec![0.0; d];
        let mut info = Matrix::zeros(d, d);
        for r in 0..n {
            if w[r] == 0.0 {
                continue;
            }
            let p = expit(eta[r]);
            let resid = w[r] * (f64::from(outcome[r]) - p);
            for (j, xj) in x.row(r).iter().enumerate() {
                score[j] += resid * xj;
            }
            info.add_outer(x.row(r), w[r] * p * (1.0 - p));
        }
        let inv_n = 1.0 / n as f64;
        score.iter_mut().for_each(|v| *v *= inv_n);
        (score, info.scaled(inv_n))
    };
    let newton_direction = |info: &Matrix, score: &[f64]| -> Result<Vec<f64>> {
        match spd_solve(info, &Matrix::column_vector(score)) {
            Ok(m) => Ok(m.data().to_vec()),
            Err(Error::NotPositiveDefinite { .. }) => Err(Error::DegenerateDesign),
            Err(e) => Err(e),
        }
    };

    let mut beta = vec![0.0; d];
    let mut eta = linear_predictor(x, &beta);
    let mut loglik = weighted_loglik(&eta, outcome, &w);
    let (mut score, mut info) = score_info(&eta);
    let mut score_norm = max_abs_slice(&score);
    let mut iterations = 0;
    let mut converged = score_norm <= SCORE_TOL;

    while !converged && iterations < MAX_ITERATIONS {
        let delta = newton_direction(&info, &score)?;

        // step-halving on the weighted log-likelihood; the final halving is
        // accepted unconditionally so the iteration always makes progress
        let mut step = 1.0;
        for halving in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = beta
                .iter()
                .zip(&delta)
                .map(|(b, dl)| b + step * dl)
                .collect();
            let cand_eta = linear_predictor(x, &cand);
            let cand_ll = weighted_loglik(&cand_eta, outcome, &w);
            // non-strict comparison: near the optimum the improvement
            // underflows the likelihood's ulp, and the full Newton step must
            // still be taken for the score to reach the tolerance
            if cand_ll >= loglik || halving == MAX_HALVINGS {
                beta = cand;
                eta = cand_eta;
                loglik = cand_ll;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        (score, info) = score_info(&eta);
        score_norm = max_abs_slice(&score);
        converged = score_norm <= SCORE_TOL;
    }

    // Polish a converged solution with plain Newton steps until the score is
    // at machine precision. Quadratic convergence makes one step usually
    // enough; this pins beta-hat so tightly that the result is invariant to
    // the row order of the inputs.
    if converged {
        for _ in 0..5 {
            if score_norm <= 1e-15 {
                break;
            }
            let Ok(delta) = newton_direction(&info, &score) else {
                break;
            };
            let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, dl)| b + dl).collect();
            let cand_eta = linear_predictor(x, &cand);
            let (cand_score, cand_info) = score_info(&cand_eta);
            let cand_norm = max_abs_slice(&cand_score);
            if cand_norm >= score_norm {
                break;
            }
            beta = cand;
            eta = cand_eta;
            (score, info) = (cand_score, cand_info);
            score_norm = cand_norm;
        }
    }
    let _ = eta;

    Ok(FittedModel {
        beta,
        // the weighted information at the final beta is exactly the plug-in
        // M_x with the fitting weights incorporated
        m_x: info,
        converged,
        iterations,
        final_score_norm: score_norm,
    })
}

/// Per-unit influence functions and their Euclidean norms.
#[derive(Debug, Clone)]
pub struct InfluenceMatrix {
    /// N x (p+1); row `i` is `h_i' = [M_x^{-1} (y_i - p_i) x_i]'`.
    pub h: Matrix,
    pub norms: Vec<f64>,
}

impl InfluenceMatrix {
    /// Wraps an explicit per-unit value matrix, computing row norms.
    pub fn from_matrix(h: Matrix) -> Self {
        let norms = (0..h.rows()).map(|r| norm2(h.row(r))).collect();
        Self { h, norms }
    }

    pub fn n(&self) -> usize {
        self.h.rows()
    }

    pub fn dim(&self) -> usize {
        self.h.cols()
    }

    /// Column `j` of the influence matrix (influence for coefficient `j`).
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.h.col(j)
    }
}

/// Computes `h_i = M_x^{-1} (y_i - p_i(beta)) x_i` for every unit, using the
/// model's plug-in `m_x`.
pub fn influence(x: &Matrix, outcome: &[u8], model: &FittedModel) -> Result<InfluenceMatrix> {
    let n = x.rows();
    let d = x.cols();
    if outcome.len() != n || model.beta.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "influence: X is {n}x{d}, outcome {}, beta {}",
            outcome.len(),
            model.beta.len()
        )));
    }
    // residual-scaled X', solved against M_x in one pass: M Z = X' D
    let mut rhs = Matrix::zeros(d, n);
    for (r, &out) in outcome.iter().enumerate() {
        let resid = f64::from(out) - expit(dot(x.row(r), &model.beta));
        for (j, xj) in x.row(r).iter().enumerate() {
            rhs.set(j, r, resid * xj);
        }
    }
    let h = spd_solve(&model.m_x, &rhs)?.transpose();
    let norms = (0..n).map(|r| norm2(h.row(r))).collect();
    Ok(InfluenceMatrix { h, norms })
}
