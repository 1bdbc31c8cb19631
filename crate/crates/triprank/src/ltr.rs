//! Ranking labels, metrics, listwise gradients, and the significance
//! test used to compare rankers.
//!
//! Labels are nonnegative; NDCG uses linear gain since the generated
//! labels 2^-i are already exponentially spaced.

use rand::Rng;
use thiserror::Error;

use crate::candidates::CandidateSet;
use crate::dataset::{Trip, Vocabs};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LtrError {
    #[error("trip with {0} checkins cannot be split into prefix and targets")]
    TripTooShort(usize),
    #[error("scores ({scores}) and labels ({labels}) differ in length")]
    LengthMismatch { scores: usize, labels: usize },
}

pub const DEFAULT_MIN_TARGET_FRAC: f64 = 0.1;
pub const DEFAULT_MAX_TARGET_FRAC: f64 = 0.5;

/// Gradient scale and metric truncation for [`lambdarank_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaConfig {
    pub sigma: f64,
    pub k: usize,
}

impl Default for LambdaConfig {
    fn default() -> Self {
        LambdaConfig { sigma: 1.0, k: 40 }
    }
}

/// A trip split into an observed prefix and held-out target cities.
#[derive(Debug, Clone)]
pub struct LabeledInstance {
    pub prefix: Trip,
    /// (city index, label), ordered outward from the prefix; the first
    /// target carries label 1.0 and each later one half the previous.
    pub targets: Vec<(u32, f64)>,
}

impl LabeledInstance {
    /// Labels aligned to the candidate list: a candidate matching a
    /// target city takes that target's label (the largest one, should
    /// the suffix revisit a city), anything else 0.
    pub fn candidate_labels(&self, candidates: &CandidateSet) -> Vec<f64> {
        candidates
            .cities()
            .map(|city| {
                self.targets
                    .iter()
                    .filter(|&&(c, _)| c == city)
                    .map(|&(_, l)| l)
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

/// Splits off a random fraction of the trailing checkins as ranking
/// targets. The fraction is drawn uniformly from
/// `[min_frac, max_frac)`, the target count is `max(1, round(f*len))`,
/// and the prefix always keeps at least one checkin.
pub fn make_labels(
    trip: &Trip,
    vocabs: &Vocabs,
    rng: &mut impl Rng,
    min_frac: f64,
    max_frac: f64,
) -> Result<LabeledInstance, LtrError> {
    let len = trip.len();
    if len < 2 {
        return Err(LtrError::TripTooShort(len));
    }
    let frac = if min_frac < max_frac {
        rng.gen_range(min_frac..max_frac)
    } else {
        min_frac
    };
    let n_targets = ((frac * len as f64).round() as usize).clamp(1, len - 1);
    let split = len - n_targets;
    let targets = trip.checkins[split..]
        .iter()
        .enumerate()
        .map(|(i, c)| (vocabs.city.index(&c.city_id), 0.5f64.powi(i as i32)))
        .collect();
    Ok(LabeledInstance {
        prefix: Trip {
            utrip_id: trip.utrip_id.clone(),
            checkins: trip.checkins[..split].to_vec(),
        },
        targets,
    })
}

/// Item indices sorted by score descending, original index ascending on
/// ties.
fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order
}

fn dcg(ordered_labels: impl Iterator<Item = f64>, k: usize) -> f64 {
    ordered_labels
        .take(k)
        .enumerate()
        .map(|(r, label)| label / ((r + 2) as f64).log2())
        .sum()
}

/// Normalized discounted cumulative gain truncated at rank k, in [0,1].
/// Instances whose labels are all zero score 1.0.
pub fn ndcg_at_k(scores: &[f64], labels: &[f64], k: usize) -> Result<f64, LtrError> {
    if scores.len() != labels.len() {
        return Err(LtrError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let mut ideal = labels.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg = dcg(ideal.into_iter(), k);
    if idcg <= 0.0 {
        return Ok(1.0);
    }
    let got = dcg(ranking_order(scores).into_iter().map(|i| labels[i]), k);
    Ok(got / idcg)
}

/// 1 iff the true city sits within the first k ranked entries.
pub fn accuracy_at_k(ranked: &[u32], true_city: u32, k: usize) -> u8 {
    ranked.iter().take(k).any(|&c| c == true_city) as u8
}

/// Gradient contributions are snapped to this grid and accumulated in
/// integers, so pairwise antisymmetry cancels exactly: the returned
/// values always sum to 0.0 even after float summation.
const LAMBDA_GRID: f64 = 4294967296.0;

/// Per-item ascent directions on NDCG@k. For every pair with
/// `label_i > label_j` the logistic factor `sigma / (1+exp(sigma*(s_i-s_j)))`
/// is scaled by the NDCG@k change a rank swap of the pair would cause,
/// pushed up on i and down on j.
pub fn lambdarank_gradients(
    scores: &[f64],
    labels: &[f64],
    cfg: &LambdaConfig,
) -> Result<Vec<f64>, LtrError> {
    let n = scores.len();
    if n != labels.len() {
        return Err(LtrError::LengthMismatch {
            scores: n,
            labels: labels.len(),
        });
    }
    let mut acc = vec![0i64; n];
    let mut rank = vec![0usize; n];
    for (r, &i) in ranking_order(scores).iter().enumerate() {
        rank[i] = r + 1;
    }
    let discount = |r: usize| {
        if r <= cfg.k {
            1.0 / ((r + 1) as f64).log2()
        } else {
            0.0
        }
    };
    let mut ideal = labels.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg = dcg(ideal.into_iter(), cfg.k);
    if idcg > 0.0 {
        for i in 0..n {
            for j in 0..n {
                if labels[i] > labels[j] {
                    let swap_gain = (labels[i] - labels[j])
                        * (discount(rank[i]) - discount(rank[j])).abs()
                        / idcg;
                    let logistic =
                        cfg.sigma / (1.0 + (cfg.sigma * (scores[i] - scores[j])).exp());
                    let q = (logistic * swap_gain * LAMBDA_GRID).round() as i64;
                    acc[i] += q;
                    acc[j] -= q;
                }
            }
        }
    }
    Ok(acc.into_iter().map(|v| v as f64 / LAMBDA_GRID).collect())
}

/// Two-tailed p-value of a pooled two-proportion z-test where both
/// samples have size n.
pub fn two_proportion_z_test(successes_a: u64, successes_b: u64, n: u64) -> f64 {
    assert!(n > 0 && successes_a <= n && successes_b <= n);
    if successes_a == successes_b {
        return 1.0;
    }
    let n = n as f64;
    let pa = successes_a as f64 / n;
    let pb = successes_b as f64 / n;
    let pool = (successes_a + successes_b) as f64 / (2.0 * n);
    let z = (pa - pb) / (pool * (1.0 - pool) * 2.0 / n).sqrt();
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}
