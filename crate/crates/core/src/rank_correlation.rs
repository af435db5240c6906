//! Spearman rho, Kendall tau-b and Kendall tau-c between metric scores and
//! human ratings.
//!
//! All three coefficients come out of one sorting pipeline: indices are sorted
//! lexicographically by `(score, rating)`, which yields the score ranks and the
//! score/joint tie groups; a merge sort of that order by rating then counts
//! discordant pairs (strict inversions) and yields the rating ranks and tie
//! groups. Concordant pairs follow from
//! `n_c = n_0 - n_1 - n_2 + n_joint - n_d`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pair bookkeeping shared by tau-b and tau-c.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KendallCounts {
    pub n: u64,
    /// Concordant pairs.
    pub n_c: u64,
    /// Discordant pairs.
    pub n_d: u64,
    /// `n(n-1)/2`.
    pub n_0: u64,
    /// Pairs tied in the scores.
    pub n_1: u64,
    /// Pairs tied in the ratings.
    pub n_2: u64,
    /// Pairs tied in both.
    pub n_joint: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n: u64,
    pub rho: f64,
    pub tau_b: f64,
    pub tau_c: f64,
    pub n_c: u64,
    pub n_d: u64,
    pub n_0: u64,
    pub n_1: u64,
    pub n_2: u64,
    pub m: u64,
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Precondition(format!(
            "correlation needs at least 2 observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("correlation inputs must be finite".into()));
    }
    Ok(())
}

// Inputs are checked finite before any comparison.
fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

fn pairs_in_run(len: u64) -> u64 {
    len * (len - 1) / 2
}

/// Walks `order`, writes average 1-based ranks into `ranks` (indexed by
/// original position) and returns the number of tied pairs.
fn tie_runs(order: &[usize], values: &[f64], ranks: &mut [f64]) -> u64 {
    let n = order.len();
    let mut ties = 0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        ties += pairs_in_run((end - start) as u64);
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ties
}

/// Runs at or below this length are sorted by insertion.
const INSERTION_CUTOFF: usize = 16;

/// Stable insertion sort; every shift past a strictly greater key is one
/// inversion.
fn insertion_sort_count(order: &mut [usize], key: &[f64]) -> u64 {
    let mut swaps = 0;
    for i in 1..order.len() {
        let cur = order[i];
        let mut j = i;
        while j > 0 && key[order[j - 1]] > key[cur] {
            order[j] = order[j - 1];
            j -= 1;
        }
        swaps += (i - j) as u64;
        order[j] = cur;
    }
    swaps
}

/// Stable merge sort of `order` by `key`, returning the number of strict
/// inversions encountered. `scratch` must be at least as long as `order`
/// when `order` exceeds the insertion cutoff.
fn merge_sort_count(order: &mut [usize], key: &[f64], scratch: &mut [usize]) -> u64 {
    let n = order.len();
    if n <= INSERTION_CUTOFF {
        return insertion_sort_count(order, key);
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = order.split_at_mut(mid);
        let (sl, sr) = scratch.split_at_mut(mid);
        merge_sort_count(left, key, sl) + merge_sort_count(right, key, sr)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if key[order[j]] < key[order[i]] {
            scratch[k] = order[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            scratch[k] = order[i];
            i += 1;
        }
        k += 1;
    }
    scratch[k..k + mid - i].copy_from_slice(&order[i..mid]);
    k += mid - i;
    scratch[k..k + n - j].copy_from_slice(&order[j..n]);
    order.copy_from_slice(&scratch[..n]);
    swaps
}

struct RankAnalysis {
    counts: KendallCounts,
    /// Score ranks followed by rating ranks.
    ranks: Vec<f64>,
    distinct_y: u64,
}

impl RankAnalysis {
    fn rank_columns(&self) -> (&[f64], &[f64]) {
        self.ranks.split_at(self.counts.n as usize)
    }
}

fn analyse(x: &[f64], y: &[f64]) -> Result<RankAnalysis> {
    check_inputs(x, y)?;
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp(x[a], x[b]).then_with(|| cmp(y[a], y[b])));

    let mut ranks = vec![0.0; 2 * n];
    let (x_ranks, y_ranks) = ranks.split_at_mut(n);
    let n_1 = tie_runs(&order, x, x_ranks);
    let mut n_joint = 0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && x[order[end]] == x[order[start]] && y[order[end]] == y[order[start]] {
            end += 1;
        }
        n_joint += pairs_in_run((end - start) as u64);
        start = end;
    }

    let mut scratch = if n > INSERTION_CUTOFF { vec![0; n] } else { Vec::new() };
    let n_d = merge_sort_count(&mut order, y, &mut scratch);
    let n_2 = tie_runs(&order, y, y_ranks);
    let distinct_y = 1 + order.windows(2).filter(|w| y[w[0]] != y[w[1]]).count() as u64;

    let n_0 = pairs_in_run(n as u64);
    let n_c = n_0 + n_joint - n_1 - n_2 - n_d;
    Ok(RankAnalysis {
        counts: KendallCounts {
            n: n as u64,
            n_c,
            n_d,
            n_0,
            n_1,
            n_2,
            n_joint,
        },
        ranks,
        distinct_y,
    })
}

/// Fractional (average) ranks, 1-based.
pub fn average_ranks(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("cannot rank non-finite values".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| cmp(values[a], values[b]));
    let mut ranks = vec![0.0; values.len()];
    tie_runs(&order, values, &mut ranks);
    Ok(ranks)
}

/// Pearson product-moment correlation with two-pass centering.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_inputs(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined(
            "correlation of a constant sequence".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(scores: &[f64], ratings: &[f64]) -> Result<f64> {
    let a = analyse(scores, ratings)?;
    let (x, y) = a.rank_columns();
    pearson(x, y)
}

pub fn tau_b_from_counts(c: &KendallCounts) -> Result<f64> {
    let denom = u128::from(c.n_0 - c.n_1) * u128::from(c.n_0 - c.n_2);
    if denom == 0 {
        return Err(Error::Undefined(
            "tau-b denominator is zero: one side is entirely tied".into(),
        ));
    }
    Ok(signed_diff(c) as f64 / (denom as f64).sqrt())
}

fn signed_diff(c: &KendallCounts) -> i128 {
    i128::from(c.n_c) - i128::from(c.n_d)
}

/// Stuart's tau-c for a rating scale with `m` values, evaluated as
/// `2m(n_c - n_d) / (n^2 (m - 1))` with an exact integer numerator and
/// denominator.
pub fn tau_c_from_counts(c: &KendallCounts, m: u64) -> Result<f64> {
    if m < 2 {
        return Err(Error::Undefined(format!(
            "tau-c needs a rating scale with at least 2 values, got {m}"
        )));
    }
    let num = 2 * i128::from(m) * signed_diff(c);
    let den = u128::from(c.n) * u128::from(c.n) * u128::from(m - 1);
    Ok(num as f64 / den as f64)
}

pub fn kendall_counts(scores: &[f64], ratings: &[f64]) -> Result<KendallCounts> {
    Ok(analyse(scores, ratings)?.counts)
}

pub fn kendall_tau_b(scores: &[f64], ratings: &[f64]) -> Result<(f64, KendallCounts)> {
    let counts = kendall_counts(scores, ratings)?;
    Ok((tau_b_from_counts(&counts)?, counts))
}

/// `m` defaults to the number of distinct rating values.
pub fn kendall_tau_c(scores: &[f64], ratings: &[f64], m: Option<u64>) -> Result<f64> {
    let a = analyse(scores, ratings)?;
    tau_c_from_counts(&a.counts, m.unwrap_or(a.distinct_y))
}

pub fn correlate(scores: &[f64], ratings: &[f64], m: Option<u64>) -> Result<CorrelationReport> {
    let a = analyse(scores, ratings)?;
    let m = m.unwrap_or(a.distinct_y);
    let (x_ranks, y_ranks) = a.rank_columns();
    let rho = pearson(x_ranks, y_ranks)?;
    let tau_b = tau_b_from_counts(&a.counts)?;
    let tau_c = tau_c_from_counts(&a.counts, m)?;
    let c = a.counts;
    Ok(CorrelationReport {
        n: c.n,
        rho,
        tau_b,
        tau_c,
        n_c: c.n_c,
        n_d: c.n_d,
        n_0: c.n_0,
        n_1: c.n_1,
        n_2: c.n_2,
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// O(n^2) pair classification straight from the definitions.
    fn brute_counts(x: &[f64], y: &[f64]) -> KendallCounts {
        let n = x.len();
        let mut c = KendallCounts {
            n: n as u64,
            n_0: (n * (n - 1) / 2) as u64,
            ..Default::default()
        };
        for i in 0..n {
            for j in i + 1..n {
                let dx = x[i] - x[j];
                let dy = y[i] - y[j];
                if dx == 0.0 {
                    c.n_1 += 1;
                }
                if dy == 0.0 {
                    c.n_2 += 1;
                }
                if dx == 0.0 && dy == 0.0 {
                    c.n_joint += 1;
                }
                if dx * dy > 0.0 {
                    c.n_c += 1;
                } else if dx * dy < 0.0 {
                    c.n_d += 1;
                }
            }
        }
        c
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // Ranks (1.5, 1.5, 3) vs (1, 2, 3): centered (-0.5,-0.5,1) and (-1,0,1),
        // sxy = 1.5, sxx = 1.5, syy = 2, rho = 1.5 / sqrt(3) = sqrt(3)/2.
        let rho = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((rho - 0.866_025_403_784_438_6).abs() < 1e-15, "{rho}");
    }

    #[test]
    fn spearman_constant_is_undefined() {
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn tau_b_examples() {
        assert_eq!(kendall_tau_b(&[1., 2., 3., 4.], &[1., 2., 3., 4.]).unwrap().0, 1.0);
        let (t, c) = kendall_tau_b(&[1., 1., 2.], &[1., 2., 2.]).unwrap();
        assert_eq!((c.n_c, c.n_d, c.n_0, c.n_1, c.n_2), (1, 0, 3, 1, 1));
        assert_eq!(t, 0.5);
        assert_eq!(kendall_tau_b(&[1., 2.], &[2., 1.]).unwrap().0, -1.0);
    }

    #[test]
    fn tau_b_all_tied_errors() {
        assert!(matches!(
            kendall_tau_b(&[1., 1., 1.], &[1., 2., 3.]),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn tau_c_examples() {
        let t = kendall_tau_c(&[1., 1., 2.], &[1., 2., 2.], Some(2)).unwrap();
        assert!((t - 4.0 / 9.0).abs() < 1e-15);
        let t = kendall_tau_c(&[1., 2., 3., 4.], &[1., 2., 3., 4.], Some(4)).unwrap();
        assert!((t - 1.0).abs() < 1e-15);
        assert!(kendall_tau_c(&[1., 2., 3.], &[5., 5., 5.], None).is_err());
        assert!(kendall_tau_c(&[1., 2., 3.], &[1., 2., 3.], Some(1)).is_err());
    }

    #[test]
    fn input_validation() {
        assert!(matches!(correlate(&[1.0], &[1.0], None), Err(Error::Precondition(_))));
        assert!(matches!(
            correlate(&[1.0, 2.0], &[1.0], None),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(correlate(&[1.0, f64::NAN], &[1.0, 2.0], None).is_err());
    }

    #[test]
    fn correlate_matches_components_on_toy_set() {
        // One tie among the scores, one among the ratings.
        let x = [0.61, 0.75, 0.75, 0.42, 0.90];
        let y = [2.0, 3.0, 4.0, 1.0, 4.0];
        let r = correlate(&x, &y, None).unwrap();
        assert_eq!(r.rho, spearman(&x, &y).unwrap());
        assert_eq!(r.tau_b, kendall_tau_b(&x, &y).unwrap().0);
        assert_eq!(r.tau_c, kendall_tau_c(&x, &y, None).unwrap());
        assert_eq!(r.m, 4);
        let b = brute_counts(&x, &y);
        assert_eq!((r.n_c, r.n_d, r.n_1, r.n_2), (b.n_c, b.n_d, b.n_1, b.n_2));
    }

    #[test]
    fn two_observations_agree_in_sign() {
        let r = correlate(&[0.2, 0.9], &[3.0, 1.0], None).unwrap();
        assert_eq!(r.rho, -1.0);
        assert_eq!(r.tau_b, -1.0);
    }

    #[test]
    fn report_json_keys() {
        let r = correlate(&[1., 2., 3.], &[1., 2., 3.], None).unwrap();
        let v = serde_json::to_value(r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["m", "n", "n_0", "n_1", "n_2", "n_c", "n_d", "rho", "tau_b", "tau_c"]);
    }

    fn tied_lists() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec((0i32..6).prop_map(f64::from), n),
                proptest::collection::vec((0i32..5).prop_map(f64::from), n),
            )
        })
    }

    proptest! {
        #[test]
        fn counts_match_brute_force((x, y) in tied_lists()) {
            let fast = kendall_counts(&x, &y).unwrap();
            prop_assert_eq!(fast, brute_counts(&x, &y));
        }

        #[test]
        fn antisymmetry((x, y) in tied_lists()) {
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            if let (Ok(a), Ok(b)) = (correlate(&x, &y, None), correlate(&x, &neg, None)) {
                prop_assert!((a.tau_b + b.tau_b).abs() < 1e-12);
                prop_assert!((a.rho + b.rho).abs() < 1e-12);
            }
        }

        #[test]
        fn strictly_monotone_transform_invariance((x, y) in tied_lists()) {
            let tx: Vec<f64> = x.iter().map(|v| (v * 0.7).exp() - 3.0).collect();
            if let Ok(a) = correlate(&x, &y, None) {
                let b = correlate(&tx, &y, None).unwrap();
                prop_assert_eq!(a.tau_b, b.tau_b);
                prop_assert_eq!(a.tau_c, b.tau_c);
                prop_assert_eq!(a.rho, b.rho);
            }
        }

        #[test]
        fn permutation_invariance((x, y) in tied_lists(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let px: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let py: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            if let Ok(a) = correlate(&x, &y, None) {
                let b = correlate(&px, &py, None).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn tau_c_closed_form((x, y) in tied_lists(), m in 2u64..10) {
            let c = kendall_counts(&x, &y).unwrap();
            let t = tau_c_from_counts(&c, m).unwrap();
            let (n, m) = (c.n as f64, m as f64);
            let alt = ((c.n_c as f64 - c.n_d as f64) / c.n_0 as f64) * ((n - 1.0) / n) * (m / (m - 1.0));
            prop_assert!((t - alt).abs() < 1e-12);
        }
    }

    #[test]
    fn no_ties_reduces_to_tau_a() {
        let x = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6];
        let y = [2.7, 1.8, 2.8, 1.1, 8.2, 8.1];
        let (t, c) = kendall_tau_b(&x, &y).unwrap();
        assert_eq!((c.n_1, c.n_2), (0, 0));
        assert_eq!(t, (c.n_c as f64 - c.n_d as f64) / c.n_0 as f64);
    }
}
