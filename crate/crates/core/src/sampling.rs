//! Realization of designs as random draws, each carrying the estimation
//! weights for the weighted score equation: independent Bernoulli (Poisson
//! sampling), weighted with-replacement draws, and simple random sampling
//! without replacement within strata.

use crate::designs::{IndividualizedDesign, Mechanism, StratifiedDesign, TwoWaveDesign};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

/// A realized subsample: distinct unit ids, how often each was drawn (always
/// 1 except under with-replacement), and the per-unit estimation weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    pub indices: Vec<usize>,
    pub multiplicity: Vec<u32>,
    pub weight: Vec<f64>,
    /// Total draws including repeats; random under Poisson sampling, fixed
    /// at the budget for the other mechanisms.
    pub realized_size: usize,
}

impl SampleDraw {
    /// Horvitz-Thompson style total of `v` over the draw.
    pub fn weighted_total(&self, v: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.weight)
            .map(|(&i, &w)| w * v[i])
            .sum()
    }
}

/// Draws each unit independently with probability `pi_i`; weights `1/pi_i`.
/// The realized size is reported as-is, never truncated to the budget.
pub fn draw_poisson(design: &IndividualizedDesign, rng: &mut RngStream) -> Result<SampleDraw> {
    if design.mechanism != Mechanism::PoissonIndependent {
        return Err(Error::WrongMechanism("PoissonIndependent"));
    }
    let mut indices = Vec::new();
    let mut weight = Vec::new();
    for (i, &pi) in design.pi.iter().enumerate() {
        if rng.gen_bool(pi.min(1.0)) {
            indices.push(i);
            weight.push(1.0 / pi);
        }
    }
    let realized_size = indices.len();
    Ok(SampleDraw {
        multiplicity: vec![1; realized_size],
        indices,
        weight,
        realized_size,
    })
}

/// Draws exactly `n` units with replacement, unit `i` having single-draw
/// probability `pi_i / n`; weights take the Hansen-Hurwitz form
/// `multiplicity_i / (n * p_i)`.
pub fn draw_with_replacement(
    design: &IndividualizedDesign,
    n: usize,
    rng: &mut RngStream,
) -> Result<SampleDraw> {
    if design.mechanism != Mechanism::WithReplacement {
        return Err(Error::WrongMechanism("WithReplacement"));
    }
    let total: f64 = design.pi.iter().sum();
    let picker = WeightedIndex::new(&design.pi)
        .map_err(|e| Error::DimensionMismatch(format!("with-replacement intensities: {e}")))?;
    let mut count = vec![0u32; design.pi.len()];
    for _ in 0..n {
        count[picker.sample(rng)] += 1;
    }
    let mut indices = Vec::new();
    let mut multiplicity = Vec::new();
    let mut weight = Vec::new();
    for (i, &m) in count.iter().enumerate() {
        if m == 0 {
            continue;
        }
        let p_single = design.pi[i] / total;
        indices.push(i);
        multiplicity.push(m);
        weight.push(f64::from(m) / (n as f64 * p_single));
    }
    Ok(SampleDraw {
        indices,
        multiplicity,
        weight,
        realized_size: n,
    })
}

/// Uniformly random `n_k`-subset of each stratum via a partial Fisher-Yates
/// shuffle; weights `N_k / n_k`. Indices are returned in ascending order.
pub fn draw_stratified(design: &StratifiedDesign, rng: &mut RngStream) -> Result<SampleDraw> {
    let mut picked: Vec<(usize, f64)> = Vec::with_capacity(design.total());
    for k in 0..design.strata.k {
        let mut members = design.strata.members(k);
        let n_k = design.allocation[k];
        let cap = members.len();
        let w = cap as f64 / n_k as f64;
        for j in 0..n_k {
            let swap_with = rng.gen_range(j..cap);
            members.swap(j, swap_with);
            picked.push((members[j], w));
        }
    }
    picked.sort_by_key(|&(i, _)| i);
    let realized_size = picked.len();
    Ok(SampleDraw {
        indices: picked.iter().map(|&(i, _)| i).collect(),
        multiplicity: vec![1; realized_size],
        weight: picked.iter().map(|&(_, w)| w).collect(),
        realized_size,
    })
}

/// Realizes the second wave of a two-wave design: within each stratum an
/// SRS of the wave-2 allocation, drawn from the units the pilot left
/// behind. Weights on the returned draw are the combined-composition
/// weights `N_k / (n1_k + n2_k)`, which also supersede the pilot draw's own
/// weights once the two waves are pooled for estimation (the pooled sample
/// is an SRS of the combined size within each stratum).
pub fn draw_second_wave(design: &TwoWaveDesign, rng: &mut RngStream) -> Result<SampleDraw> {
    let strata = &design.wave1.strata;
    let mut in_pilot = vec![false; strata.n_units()];
    for &i in &design.wave1_draw.indices {
        in_pilot[i] = true;
    }
    let mut picked: Vec<(usize, f64)> = Vec::new();
    for k in 0..strata.k {
        let n2 = design.wave2_allocation[k];
        if n2 == 0 {
            continue;
        }
        let mut pool: Vec<usize> = strata
            .members(k)
            .into_iter()
            .filter(|&i| !in_pilot[i])
            .collect();
        let cap = pool.len();
        if n2 > cap {
            return Err(Error::DimensionMismatch(format!(
                "stratum {k}: wave-2 allocation {n2} exceeds the {cap} units \
                 left after the pilot"
            )));
        }
        let total = design.wave1.allocation[k] + n2;
        let w = strata.counts[k] as f64 / total as f64;
        for j in 0..n2 {
            let swap_with = rng.gen_range(j..cap);
            pool.swap(j, swap_with);
            picked.push((pool[j], w));
        }
    }
    picked.sort_by_key(|&(i, _)| i);
    let realized_size = picked.len();
    Ok(SampleDraw {
        indices: picked.iter().map(|&(i, _)| i).collect(),
        multiplicity: vec![1; realized_size],
        weight: picked.iter().map(|&(_, w)| w).collect(),
        realized_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{build_strata, neyman_allocation, osmac, StrataAssignment};
    use crate::numerics::Matrix;

    fn poisson_design(pi: Vec<f64>) -> IndividualizedDesign {
        IndividualizedDesign {
            pi,
            mechanism: Mechanism::PoissonIndependent,
        }
    }

    fn wr_design(pi: Vec<f64>) -> IndividualizedDesign {
        IndividualizedDesign {
            pi,
            mechanism: Mechanism::WithReplacement,
        }
    }

    fn srs_design(counts: &[usize], allocation: &[usize]) -> StratifiedDesign {
        let mut stratum_of = Vec::new();
        for (k, &c) in counts.iter().enumerate() {
            stratum_of.extend(std::iter::repeat_n(k, c));
        }
        StratifiedDesign {
            strata: StrataAssignment {
                stratum_of,
                k: counts.len(),
                counts: counts.to_vec(),
                labels: (0..counts.len()).map(|k| format!("s{k}")).collect(),
            },
            allocation: allocation.to_vec(),
        }
    }

    #[test]
    fn poisson_census_has_unit_weights() {
        let mut rng = RngStream::new(1, 0);
        let d = poisson_design(vec![1.0; 12]);
        let draw = draw_poisson(&d, &mut rng).unwrap();
        assert_eq!(draw.indices, (0..12).collect::<Vec<_>>());
        assert!(draw.weight.iter().all(|&w| w == 1.0));
        assert_eq!(draw.realized_size, 12);
    }

    #[test]
    fn poisson_realized_size_concentrates() {
        let mut rng = RngStream::new(2, 0);
        let d = poisson_design(vec![0.5; 10_000]);
        let draw = draw_poisson(&d, &mut rng).unwrap();
        // Binomial(10^4, 0.5): 4 standard deviations is 4 * 50
        assert!((draw.realized_size as f64 - 5000.0).abs() <= 200.0);
    }

    #[test]
    fn poisson_inclusion_frequencies_match_design() {
        let pi = vec![0.1, 0.35, 0.6, 0.85, 1.0, 0.05];
        let d = poisson_design(pi.clone());
        let reps = 100_000;
        let mut hits = vec![0u32; pi.len()];
        let mut rng = RngStream::new(3, 0);
        for _ in 0..reps {
            for &i in &draw_poisson(&d, &mut rng).unwrap().indices {
                hits[i] += 1;
            }
        }
        for (i, &p) in pi.iter().enumerate() {
            let freq = f64::from(hits[i]) / reps as f64;
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * se + 1e-12,
                "unit {i}: freq {freq}, pi {p}"
            );
        }
    }

    #[test]
    fn with_replacement_uniform_full_budget() {
        let d = wr_design(vec![1.0; 8]);
        let reps = 20_000;
        let mut total_mult = vec![0u64; 8];
        let mut rng = RngStream::new(4, 0);
        for _ in 0..reps {
            let draw = draw_with_replacement(&d, 8, &mut rng).unwrap();
            assert_eq!(draw.realized_size, 8);
            for (&i, &m) in draw.indices.iter().zip(&draw.multiplicity) {
                total_mult[i] += u64::from(m);
            }
        }
        for &t in &total_mult {
            let mean = t as f64 / reps as f64;
            // multiplicity ~ Binomial(8, 1/8): sd = sqrt(8 * (1/8)(7/8))
            let se = (8.0 * (1.0 / 8.0) * (7.0 / 8.0) / reps as f64).sqrt();
            assert!((mean - 1.0).abs() <= 3.0 * se, "mean multiplicity {mean}");
        }
    }

    #[test]
    fn with_replacement_frequencies_match_probabilities() {
        let p = [0.5, 0.3, 0.2];
        let d = wr_design(p.to_vec()); // single-draw probs p_i / sum = p_i
        let n = 100_000;
        let mut rng = RngStream::new(5, 0);
        let draw = draw_with_replacement(&d, n, &mut rng).unwrap();
        let mut freq = [0.0; 3];
        for (&i, &m) in draw.indices.iter().zip(&draw.multiplicity) {
            freq[i] = f64::from(m) / n as f64;
        }
        for i in 0..3 {
            let se = (p[i] * (1.0 - p[i]) / n as f64).sqrt();
            assert!((freq[i] - p[i]).abs() <= 3.0 * se, "unit {i}: {}", freq[i]);
        }
    }

    #[test]
    fn with_replacement_weights_are_unbiased() {
        let v = [3.0, -1.0, 4.0, 1.0, 5.0, -9.0, 2.0, 6.0];
        let truth: f64 = v.iter().sum();
        let d = wr_design(vec![0.4, 0.1, 0.9, 0.3, 0.7, 0.2, 0.25, 0.15]);
        let reps = 100_000;
        let mut rng = RngStream::new(6, 0);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..reps {
            let est = draw_with_replacement(&d, 5, &mut rng)
                .unwrap()
                .weighted_total(&v);
            sum += est;
            sumsq += est * est;
        }
        let mean = sum / reps as f64;
        let sd = (sumsq / reps as f64 - mean * mean).sqrt();
        let se = sd / (reps as f64).sqrt();
        assert!((mean - truth).abs() <= 3.0 * se, "mean {mean} vs {truth}");
    }

    #[test]
    fn stratified_census_is_identity() {
        let d = srs_design(&[3, 5], &[3, 5]);
        let mut rng = RngStream::new(7, 0);
        let draw = draw_stratified(&d, &mut rng).unwrap();
        assert_eq!(draw.indices, (0..8).collect::<Vec<_>>());
        assert!(draw.weight.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn single_stratum_is_plain_srs() {
        let d = srs_design(&[10], &[4]);
        let mut rng = RngStream::new(8, 0);
        for _ in 0..200 {
            let draw = draw_stratified(&d, &mut rng).unwrap();
            assert_eq!(draw.realized_size, 4);
            let mut ids = draw.indices.clone();
            ids.dedup();
            assert_eq!(ids.len(), 4, "indices distinct");
            assert!(draw.weight.iter().all(|&w| w == 2.5));
        }
    }

    #[test]
    fn stratified_joint_inclusion_matches_formula() {
        // same-stratum pair under SRS(2 of 4): P(both) = 2*1/(4*3) = 1/6
        let d = srs_design(&[4, 4], &[2, 2]);
        let reps = 100_000;
        let mut rng = RngStream::new(9, 0);
        let mut both_same = 0u32;
        let mut in0 = 0u32;
        let mut in4 = 0u32;
        let mut both_cross = 0u32;
        for _ in 0..reps {
            let draw = draw_stratified(&d, &mut rng).unwrap();
            let has = |i: usize| draw.indices.contains(&i);
            let (a, b) = (has(0), has(1));
            if a && b {
                both_same += 1;
            }
            let c = has(4);
            if a {
                in0 += 1;
            }
            if c {
                in4 += 1;
            }
            if a && c {
                both_cross += 1;
            }
        }
        let freq = f64::from(both_same) / reps as f64;
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * se, "joint freq {freq}");

        // across strata the indicators are uncorrelated: joint = product
        let cross = f64::from(both_cross) / reps as f64;
        let prod = (f64::from(in0) / reps as f64) * (f64::from(in4) / reps as f64);
        assert!((cross - prod).abs() <= 4.0 * se, "cross {cross} vs {prod}");

        // within strata they are negatively correlated: 1/6 < (1/2)^2
        assert!(freq < 0.25 - 3.0 * se);
    }

    #[test]
    fn stratified_weights_are_unbiased() {
        let v = [2.0, 7.0, 1.0, 8.0, 2.0, 8.0, 1.0, 8.0, 3.0];
        let truth: f64 = v.iter().sum();
        let d = srs_design(&[4, 5], &[2, 3]);
        let reps = 100_000;
        let mut rng = RngStream::new(10, 0);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..reps {
            let est = draw_stratified(&d, &mut rng).unwrap().weighted_total(&v);
            sum += est;
            sumsq += est * est;
        }
        let mean = sum / reps as f64;
        let sd = (sumsq / reps as f64 - mean * mean).sqrt();
        assert!((mean - truth).abs() <= 3.0 * sd / (reps as f64).sqrt());
    }

    #[test]
    fn poisson_weights_are_unbiased() {
        let v = [4.0, -2.0, 3.5, 1.0, 0.5, -1.5, 2.0];
        let truth: f64 = v.iter().sum();
        let d = poisson_design(vec![0.3, 0.5, 0.8, 0.2, 0.9, 0.4, 0.6]);
        let reps = 100_000;
        let mut rng = RngStream::new(11, 0);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..reps {
            let est = draw_poisson(&d, &mut rng).unwrap().weighted_total(&v);
            sum += est;
            sumsq += est * est;
        }
        let mean = sum / reps as f64;
        let sd = (sumsq / reps as f64 - mean * mean).sqrt();
        assert!((mean - truth).abs() <= 3.0 * sd / (reps as f64).sqrt());
    }

    #[test]
    fn identical_streams_reproduce_draws() {
        let pois = poisson_design(vec![0.2, 0.7, 0.5, 0.9, 0.1]);
        let wr = wr_design(vec![0.2, 0.7, 0.5, 0.9, 0.1]);
        let srs = srs_design(&[6, 6], &[2, 3]);
        for stream in [0u64, 9, 412] {
            let draw = |f: &dyn Fn(&mut RngStream) -> SampleDraw| {
                let mut a = RngStream::new(99, stream);
                let mut b = RngStream::new(99, stream);
                assert_eq!(f(&mut a), f(&mut b));
            };
            draw(&|r| draw_poisson(&pois, r).unwrap());
            draw(&|r| draw_with_replacement(&wr, 4, r).unwrap());
            draw(&|r| draw_stratified(&srs, r).unwrap());
        }
    }

    #[test]
    fn mechanism_mismatch_is_rejected() {
        let mut rng = RngStream::new(12, 0);
        let pois = poisson_design(vec![0.5; 4]);
        let wr = wr_design(vec![0.5; 4]);
        assert!(matches!(
            draw_poisson(&wr, &mut rng),
            Err(crate::error::Error::WrongMechanism(_))
        ));
        assert!(matches!(
            draw_with_replacement(&pois, 2, &mut rng),
            Err(crate::error::Error::WrongMechanism(_))
        ));
    }

    #[test]
    fn end_to_end_design_draw_roundtrip() {
        // osmac -> draw_poisson and build_strata -> neyman -> draw_stratified
        let norms = [0.2, 1.3, 0.8, 2.5, 0.4, 1.1, 0.9, 0.05, 1.8, 0.6];
        let design = osmac(&norms, 4).unwrap();
        let mut rng = RngStream::new(13, 0);
        let draw = draw_poisson(&design, &mut rng).unwrap();
        for (&i, &w) in draw.indices.iter().zip(&draw.weight) {
            assert_abs_diff_eq2(w, 1.0 / design.pi[i]);
        }

        let scores = Matrix::from_rows(
            &(0..10).map(|i| vec![f64::from(i as u32)]).collect::<Vec<_>>(),
        );
        let y = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let strata = build_strata(&y, &scores, (0.2, 0.8)).unwrap();
        let alloc = neyman_allocation(&strata, &vec![1.0; strata.k], strata.k).unwrap();
        let draw = draw_stratified(&alloc, &mut rng).unwrap();
        assert_eq!(draw.realized_size, strata.k);
    }

    #[test]
    fn second_wave_avoids_pilot_and_weights_by_pooled_size() {
        // two strata of 6; pilot takes 2 from each, wave 2 adds (1, 3)
        let design = srs_design(&[6, 6], &[2, 2]);
        let mut rng = RngStream::new(14, 0);
        let wave1_draw = draw_stratified(&design, &mut rng).unwrap();
        let two = crate::designs::TwoWaveDesign {
            wave1: design,
            wave1_draw: wave1_draw.clone(),
            wave2_allocation: vec![1, 3],
        };
        let wave2 = draw_second_wave(&two, &mut rng).unwrap();
        assert_eq!(wave2.realized_size, 4);
        for &i in &wave2.indices {
            assert!(!wave1_draw.indices.contains(&i), "unit {i} drawn twice");
        }
        for (&i, &w) in wave2.indices.iter().zip(&wave2.weight) {
            let expected = if i < 6 { 6.0 / 3.0 } else { 6.0 / 5.0 };
            assert_abs_diff_eq2(w, expected);
        }
    }

    #[test]
    fn second_wave_can_exhaust_a_stratum() {
        let design = srs_design(&[4, 3], &[2, 1]);
        let mut rng = RngStream::new(15, 0);
        let wave1_draw = draw_stratified(&design, &mut rng).unwrap();
        let two = crate::designs::TwoWaveDesign {
            wave1: design,
            wave1_draw,
            wave2_allocation: vec![2, 0],
        };
        let wave2 = draw_second_wave(&two, &mut rng).unwrap();
        assert_eq!(wave2.realized_size, 2);
        assert!(wave2.indices.iter().all(|&i| i < 4));
        // asking for more than the leftover pool is rejected
        let mut over = two.clone();
        over.wave2_allocation = vec![3, 0];
        assert!(draw_second_wave(&over, &mut rng).is_err());
    }

    fn assert_abs_diff_eq2(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}
