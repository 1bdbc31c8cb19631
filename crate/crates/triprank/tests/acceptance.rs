//! Acceptance checks, one printed verdict per criterion.
//!
//! Runs without the libtest harness so every verdict line reaches the
//! terminal; the process exits nonzero if any criterion fails. The
//! real-data checks are optional and report SKIP unless
//! TRIPRANK_BOOKING_CSV points at a challenge-format checkin CSV.

use std::collections::{HashMap, HashSet};
use std::env;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use triprank::candidates::{
    assemble_candidates, candidate_recall, fit_popularity_stats, fit_transition_matrix,
    transition_chain_scores, trip_city_indices, CandidateConfig, Source,
};
use triprank::dataset::{
    assemble_trips, build_vocabs, generate_synthetic, parse_checkins, split_dataset, ColumnMap,
    DatasetSplit, Vocabs,
};
use triprank::features::FeatureConfig;
use triprank::ltr::{lambdarank_gradients, ndcg_at_k, two_proportion_z_test, LambdaConfig};
use triprank::nn::checkpoint;
use triprank::nn::graph::{Graph, Var};
use triprank::nn::model::{ModelConfig, RerankModel, TripInstance, VocabSizes};
use triprank::nn::params::ParameterStore;
use triprank::train::{
    evaluate, fit, fit_epoch_stats, EpochReport, FeaturePipeline, FitResult, Scorer, TrainConfig,
    TrainContext,
};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Verdict::{Fail, Pass, Skip};

fn main() -> ExitCode {
    let mut n_fail = 0usize;
    let mut n_skip = 0usize;
    let mut report = |num: usize, name: &str, v: Verdict| match v {
        Pass(d) => println!("criterion {num} ({name}): PASS [{d}]"),
        Fail(d) => {
            n_fail += 1;
            println!("criterion {num} ({name}): FAIL [{d}]");
        }
        Skip(d) => {
            n_skip += 1;
            println!("criterion {num} ({name}): SKIP [{d}]");
        }
    };

    report(1, "transition counting vs brute force", criterion_1());
    report(2, "ndcg vs permutation oracle", criterion_2());
    report(3, "lambda zero-sum and ascent", criterion_3());
    report(4, "finite-difference gradient checks", criterion_4());
    report(5, "candidate pool invariants", criterion_5());
    let (v6, run) = criterion_6();
    report(6, "end-to-end learning", v6);
    report(
        7,
        "metric correlation across epochs",
        match &run {
            Some(r) => criterion_7(&r.fit.reports),
            None => Fail("no training run to correlate".into()),
        },
    );
    report(
        8,
        "rerun determinism",
        match &run {
            Some(r) => criterion_8(&r.fit),
            None => Fail("no training run to reproduce".into()),
        },
    );
    report(9, "real-data spot checks", criterion_9());

    if n_fail == 0 {
        let skipped = if n_skip > 0 {
            format!(", {n_skip} skipped")
        } else {
            String::new()
        };
        println!("acceptance: all criteria passed{skipped}");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {n_fail} criterion(s) failed");
        ExitCode::FAILURE
    }
}

/// fit_transition_matrix and transition_chain_scores against a from-
/// scratch count over (earlier city, final city) pairs, exact match on
/// 100 seeded corpora.
fn criterion_1() -> Verdict {
    let start = Instant::now();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n_trips = rng.gen_range(1..=200);
        let n_cities = rng.gen_range(8..=48);
        let n_countries = rng.gen_range(1..=8);
        let sharpness = rng.gen_range(0.0..1.0);
        let trips = assemble_trips(generate_synthetic(
            n_trips,
            n_cities,
            n_countries,
            sharpness,
            seed,
        ));
        let vocabs = build_vocabs(&trips);
        let matrix = fit_transition_matrix(&trips, &vocabs);

        let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
        for trip in &trips {
            if trip.len() < 2 {
                continue;
            }
            let last = vocabs.city.index(&trip.last().city_id);
            for checkin in &trip.checkins[..trip.len() - 1] {
                *counts
                    .entry((vocabs.city.index(&checkin.city_id), last))
                    .or_insert(0) += 1;
            }
        }
        let n_idx = vocabs.city.n_indices() as u32;
        for from in 0..n_idx {
            for to in 0..n_idx {
                let expect = counts.get(&(from, to)).copied().unwrap_or(0);
                if matrix.count(from, to) != expect {
                    return Fail(format!(
                        "corpus {seed}: count({from},{to}) = {} expected {expect}",
                        matrix.count(from, to)
                    ));
                }
            }
        }

        for _ in 0..5 {
            let trip = &trips[rng.gen_range(0..trips.len())];
            let cities = trip_city_indices(trip, &vocabs);
            let got = transition_chain_scores(&cities, &matrix);
            let mut expect: HashMap<u32, u64> = HashMap::new();
            for &from in &cities {
                for to in 0..n_idx {
                    if let Some(&c) = counts.get(&(from, to)) {
                        *expect.entry(to).or_insert(0) += c;
                    }
                }
            }
            if got != expect {
                return Fail(format!("corpus {seed}: chain scores diverge for {}", trip.utrip_id));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 10.0 {
        return Fail(format!("exact on 100 corpora but took {secs:.1} s (budget 10 s)"));
    }
    Pass(format!("100 corpora exact, {secs:.2} s"))
}

fn permutations(arr: &mut [usize], i: usize, f: &mut dyn FnMut(&[usize])) {
    if i == arr.len() {
        f(arr);
        return;
    }
    for j in i..arr.len() {
        arr.swap(i, j);
        permutations(arr, i + 1, f);
        arr.swap(i, j);
    }
}

/// ndcg_at_k against an oracle whose ideal DCG is found by enumerating
/// every permutation of the labels.
fn criterion_2() -> Verdict {
    let discount = |r: usize| ((r + 2) as f64).log2();
    for case in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + case);
        let n = rng.gen_range(1..=8);
        let labels: Vec<f64> = (0..n)
            .map(|_| match rng.gen_range(0..4) {
                0 => 0.0,
                1 => rng.gen_range(0..3) as f64,
                2 => 0.5f64.powi(rng.gen_range(0..4)),
                _ => rng.gen_range(0.0..1.0),
            })
            .collect();
        let mut scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if n > 1 && rng.gen_bool(0.2) {
            let j = rng.gen_range(1..n);
            scores[j] = scores[0];
        }
        let k = rng.gen_range(1..=10);

        let got = match ndcg_at_k(&scores, &labels, k) {
            Ok(v) => v,
            Err(e) => return Fail(format!("case {case}: {e}")),
        };

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let dcg: f64 = order
            .iter()
            .take(k)
            .enumerate()
            .map(|(r, &i)| labels[i] / discount(r))
            .sum();
        let mut ideal = f64::NEG_INFINITY;
        let mut idx: Vec<usize> = (0..n).collect();
        permutations(&mut idx, 0, &mut |perm| {
            let d: f64 = perm
                .iter()
                .take(k)
                .enumerate()
                .map(|(r, &i)| labels[i] / discount(r))
                .sum();
            if d > ideal {
                ideal = d;
            }
        });
        let oracle = if ideal <= 0.0 { 1.0 } else { dcg / ideal };
        if (got - oracle).abs() >= 1e-12 {
            return Fail(format!(
                "case {case}: ndcg {got} vs permutation oracle {oracle} (n {n}, k {k})"
            ));
        }
    }
    Pass("1000 cases within 1e-12".into())
}

/// Lambdas cancel exactly and a small step along them does not hurt
/// NDCG@40 in at least 95% of trials.
fn criterion_3() -> Verdict {
    let cfg = LambdaConfig { sigma: 1.0, k: 40 };
    let mut non_decreasing = 0usize;
    for trial in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + trial);
        let n = rng.gen_range(2..=50);
        let mut labels = vec![0.0f64; n];
        match rng.gen_range(0..3) {
            0 => labels[rng.gen_range(0..n)] = 1.0,
            1 => {
                let t = rng.gen_range(1..=n.min(4));
                let mut pos: Vec<usize> = (0..n).collect();
                pos.shuffle(&mut rng);
                for (i, &p) in pos[..t].iter().enumerate() {
                    labels[p] = 0.5f64.powi(i as i32);
                }
            }
            _ => {
                for l in labels.iter_mut() {
                    if rng.gen_bool(0.3) {
                        *l = rng.gen_range(1..=3) as f64;
                    }
                }
                if labels.iter().all(|&v| v == 0.0) {
                    labels[rng.gen_range(0..n)] = 1.0;
                }
            }
        }
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let lambdas = match lambdarank_gradients(&scores, &labels, &cfg) {
            Ok(v) => v,
            Err(e) => return Fail(format!("trial {trial}: {e}")),
        };
        let sum: f64 = lambdas.iter().sum();
        if sum != 0.0 {
            return Fail(format!("trial {trial}: lambda sum {sum:e}, expected exactly 0"));
        }

        let before = ndcg_at_k(&scores, &labels, 40).unwrap();
        let stepped: Vec<f64> = scores
            .iter()
            .zip(&lambdas)
            .map(|(s, l)| s + 1e-2 * l)
            .collect();
        let after = ndcg_at_k(&stepped, &labels, 40).unwrap();
        if after >= before {
            non_decreasing += 1;
        }
    }
    if non_decreasing < 950 {
        return Fail(format!(
            "ascent step improved or held NDCG in only {non_decreasing}/1000 trials"
        ));
    }
    Pass(format!(
        "lambda sums exactly 0 in 1000/1000, ascent non-decreasing in {non_decreasing}/1000"
    ))
}

/// Central-difference check of one op. `build` wires the op from a flat
/// value vector and returns its differentiable leaves plus the output;
/// the objective is a fixed weighting of the output entries.
fn check_op<F>(name: &'static str, n: usize, seed: u64, build: F) -> Result<f64, String>
where
    F: Fn(&mut Graph, &[f64]) -> (Vec<Var>, Var),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    for v in x.iter_mut() {
        // Keep clear of the relu kink so central differences stay valid.
        if v.abs() < 0.05 {
            *v = if *v >= 0.0 { 0.08 } else { -0.08 };
        }
    }

    let (weights, analytic) = {
        let mut g = Graph::new();
        let (leaves, out) = build(&mut g, &x);
        let m = g.value(out).len();
        let weights: Vec<f64> = (0..m)
            .map(|i| (0.3 + 0.15 * (i % 7) as f64) * if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        g.backward(out, &weights);
        let analytic: Vec<f64> = leaves.iter().flat_map(|&v| g.grad(v).to_vec()).collect();
        (weights, analytic)
    };
    assert_eq!(analytic.len(), n, "{name} leaves must cover the value vector");

    let objective = |x: &[f64]| -> f64 {
        let mut g = Graph::new();
        let (_, out) = build(&mut g, x);
        g.value(out).iter().zip(&weights).map(|(a, b)| a * b).sum()
    };
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for i in 0..n {
        let orig = x[i];
        x[i] = orig + h;
        let hi = objective(&x);
        x[i] = orig - h;
        let lo = objective(&x);
        x[i] = orig;
        let fd = (hi - lo) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        if rel > 1e-4 {
            return Err(format!("{name}: grad[{i}] analytic {a} vs central diff {fd}"));
        }
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

/// Every graph op plus the end-to-end micro model against central
/// finite differences.
fn criterion_4() -> Verdict {
    let start = Instant::now();
    let mut n_ops = 0usize;
    let mut worst = 0.0f64;
    let checks: Vec<Result<f64, String>> = vec![
        check_op("dense", 49, 41, |g, x| {
            let xin = g.input(&[2, 3, 4], x[..24].to_vec());
            let w = g.input(&[4, 5], x[24..44].to_vec());
            let b = g.input(&[5], x[44..49].to_vec());
            let out = g.dense(xin, w, b);
            (vec![xin, w, b], out)
        }),
        check_op("layer_norm", 48, 42, |g, x| {
            let xin = g.input(&[2, 3, 6], x[..36].to_vec());
            let gain = g.input(&[6], x[36..42].to_vec());
            let shift = g.input(&[6], x[42..48].to_vec());
            let out = g.layer_norm(xin, gain, shift, 1e-5);
            (vec![xin, gain, shift], out)
        }),
        check_op("relu", 21, 43, |g, x| {
            let xin = g.input(&[3, 7], x.to_vec());
            let out = g.relu(xin);
            (vec![xin], out)
        }),
        check_op("mul", 20, 44, |g, x| {
            let a = g.input(&[2, 5], x[..10].to_vec());
            let b = g.input(&[2, 5], x[10..20].to_vec());
            let out = g.mul(a, b);
            (vec![a, b], out)
        }),
        check_op("concat_last", 18, 45, |g, x| {
            let a = g.input(&[2, 3], x[..6].to_vec());
            let b = g.input(&[2, 2], x[6..10].to_vec());
            let c = g.input(&[2, 4], x[10..18].to_vec());
            let out = g.concat_last(&[a, b, c]);
            (vec![a, b, c], out)
        }),
        check_op("gather", 24, 46, |g, x| {
            let table = g.input(&[6, 4], x.to_vec());
            let out = g.gather(table, &[2, 0, 5, 2, 3, 1], &[3, 2]);
            (vec![table], out)
        }),
        check_op("mask_rows", 24, 47, |g, x| {
            let xin = g.input(&[2, 3, 4], x.to_vec());
            let out = g.mask_rows(xin, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
            (vec![xin], out)
        }),
        check_op("split_heads", 24, 48, |g, x| {
            let xin = g.input(&[2, 3, 4], x.to_vec());
            let out = g.split_heads(xin, 2);
            (vec![xin], out)
        }),
        check_op("merge_heads", 24, 49, |g, x| {
            let xin = g.input(&[4, 3, 2], x.to_vec());
            let out = g.merge_heads(xin, 2);
            (vec![xin], out)
        }),
        check_op("attention_core", 64, 50, |g, x| {
            let q = g.input(&[2, 2, 4], x[..16].to_vec());
            let k = g.input(&[2, 3, 4], x[16..40].to_vec());
            let v = g.input(&[2, 3, 4], x[40..64].to_vec());
            let out = g.attention_core(q, k, v, &[1.0, 1.0, 0.0, 1.0, 1.0, 1.0], 0.5);
            (vec![q, k, v], out)
        }),
        check_op("attention_core fully masked batch", 64, 51, |g, x| {
            let q = g.input(&[2, 2, 4], x[..16].to_vec());
            let k = g.input(&[2, 3, 4], x[16..40].to_vec());
            let v = g.input(&[2, 3, 4], x[40..64].to_vec());
            let out = g.attention_core(q, k, v, &[0.0, 0.0, 0.0, 1.0, 0.0, 1.0], 0.5);
            (vec![q, k, v], out)
        }),
        check_op("row_dot", 32, 52, |g, x| {
            let a = g.input(&[2, 3, 4], x[..24].to_vec());
            let f = g.input(&[2, 4], x[24..32].to_vec());
            let out = g.row_dot(a, f);
            (vec![a, f], out)
        }),
        check_op("mean", 12, 53, |g, x| {
            let xin = g.input(&[3, 4], x.to_vec());
            let out = g.mean(xin);
            (vec![xin], out)
        }),
    ];
    for check in checks {
        match check {
            Ok(rel) => {
                n_ops += 1;
                worst = worst.max(rel);
            }
            Err(e) => return Fail(e),
        }
    }

    let (n_params, e2e_worst) = match e2e_gradient_check() {
        Ok(v) => v,
        Err(e) => return Fail(e),
    };
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Fail(format!("checks pass but took {secs:.1} s (budget 60 s)"));
    }
    Pass(format!(
        "{n_ops} ops (worst rel {worst:.2e}) and {n_params} model parameters \
         (worst rel {e2e_worst:.2e}), {secs:.1} s"
    ))
}

/// Full micro-model gradient check: every parameter scalar against
/// central differences of a weighted score objective.
fn e2e_gradient_check() -> Result<(usize, f64), String> {
    let cfg = ModelConfig {
        city_emb_dim: 4,
        country_emb_dim: 3,
        affiliate_emb_dim: 2,
        trip_len: 3,
        model_dim: 10,
        n_trip_blocks: 1,
        n_candidate_blocks: 1,
        n_heads: 2,
        max_candidates: 4,
    };
    let vocab = VocabSizes {
        city: 9,
        country: 5,
        affiliate: 4,
    };
    let model = RerankModel::new(cfg, vocab);
    let mut store = model.init_params(42);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let instance = |rng: &mut ChaCha8Rng, len: usize, n_cand: usize| TripInstance {
        city_idx: (0..len).map(|_| rng.gen_range(0..9)).collect(),
        booker_idx: (0..len).map(|_| rng.gen_range(0..5)).collect(),
        hotel_idx: (0..len).map(|_| rng.gen_range(0..5)).collect(),
        affiliate_idx: (0..len).map(|_| rng.gen_range(0..4)).collect(),
        trip_feats: (0..len)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
            .collect(),
        cand_city_idx: (0..n_cand).map(|_| rng.gen_range(0..9)).collect(),
        cand_country_idx: (0..n_cand).map(|_| rng.gen_range(0..5)).collect(),
        cand_feats: (0..n_cand)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
            .collect(),
        target_ctx: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
    };
    // One short and one full-size example so padding paths carry
    // gradient too.
    let batch = vec![instance(&mut rng, 2, 3), instance(&mut rng, 3, 4)];

    let mut g = Graph::new();
    let sv = model.score_batch(&mut g, &store, &batch);
    let mut weights = vec![0.0; batch.len() * sv.n_slots];
    for (e, &n_cand) in sv.n_candidates.iter().enumerate() {
        for j in 0..n_cand {
            let i = e * sv.n_slots + j;
            weights[i] = (0.25 + 0.1 * (i % 5) as f64) * if (e + j) % 2 == 0 { 1.0 } else { -1.0 };
        }
    }
    g.backward(sv.scores, &weights);
    let mut grads = store.clone();
    grads.zero_grads();
    g.flush_grads(&mut grads);

    let objective = |store: &ParameterStore| -> f64 {
        let mut g = Graph::new();
        let sv = model.score_batch(&mut g, store, &batch);
        g.value(sv.scores)
            .iter()
            .zip(&weights)
            .map(|(a, b)| a * b)
            .sum()
    };

    let names: Vec<String> = store.names().map(str::to_string).collect();
    let h = 1e-5;
    let mut n_params = 0usize;
    let mut worst = 0.0f64;
    for name in &names {
        for i in 0..store.get(name).n_values() {
            let orig = store.get(name).values()[i];
            store.value_mut(name).values_mut()[i] = orig + h;
            let hi = objective(&store);
            store.value_mut(name).values_mut()[i] = orig - h;
            let lo = objective(&store);
            store.value_mut(name).values_mut()[i] = orig;
            let fd = (hi - lo) / (2.0 * h);
            let a = grads.grad(name).values()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            if rel > 1e-3 {
                return Err(format!(
                    "model parameter {name}[{i}]: analytic {a} vs central diff {fd}"
                ));
            }
            n_params += 1;
            worst = worst.max(rel);
        }
    }
    Ok((n_params, worst))
}

/// Pool invariants on 1000 trips under two quota settings, plus exact
/// recall on a fully deterministic corpus.
fn criterion_5() -> Verdict {
    let trips = assemble_trips(generate_synthetic(1500, 48, 6, 0.6, 505));
    let vocabs = build_vocabs(&trips);
    let matrix = fit_transition_matrix(&trips, &vocabs);
    let stats = fit_popularity_stats(&trips, &vocabs);
    let configs = [
        CandidateConfig {
            chain_quota: 15,
            booker_trip_quota: 30,
            limit: 50,
        },
        CandidateConfig {
            chain_quota: 2,
            booker_trip_quota: 4,
            limit: 8,
        },
    ];

    let mut checked = 0usize;
    for trip in &trips {
        if checked >= 1000 {
            break;
        }
        if trip.len() < 2 {
            continue;
        }
        let prefix = trip.prefix();
        for cfg in &configs {
            let set = assemble_candidates(&prefix, &matrix, &stats, &vocabs, cfg);
            if set.len() > cfg.limit {
                return Fail(format!(
                    "{}: {} candidates over limit {}",
                    trip.utrip_id,
                    set.len(),
                    cfg.limit
                ));
            }
            let mut seen = HashSet::new();
            for (pos, (city, source)) in set.entries.iter().enumerate() {
                if !seen.insert(*city) {
                    return Fail(format!("{}: duplicate candidate {city}", trip.utrip_id));
                }
                let over_budget = match source {
                    Source::TransitionChain => pos >= cfg.chain_quota,
                    Source::BookerTripCountryTop => pos >= cfg.booker_trip_quota,
                    _ => false,
                };
                if over_budget {
                    return Fail(format!(
                        "{}: {} candidate at position {pos} breaks its quota",
                        trip.utrip_id,
                        source.as_str()
                    ));
                }
            }
            for city in trip_city_indices(&prefix, &vocabs) {
                if !set.contains(city) {
                    return Fail(format!("{}: trip city {city} missing", trip.utrip_id));
                }
            }
        }
        checked += 1;
    }
    if checked < 1000 {
        return Fail(format!("only {checked} usable trips (needed 1000)"));
    }

    let det_trips = assemble_trips(generate_synthetic(2000, 32, 4, 1.0, 606));
    let det_vocabs = build_vocabs(&det_trips);
    let det_matrix = fit_transition_matrix(&det_trips, &det_vocabs);
    let det_stats = fit_popularity_stats(&det_trips, &det_vocabs);
    let cfg = CandidateConfig::default();
    let recall = match candidate_recall(&det_trips, &det_vocabs, |p| {
        assemble_candidates(p, &det_matrix, &det_stats, &det_vocabs, &cfg)
    }) {
        Ok(r) => r,
        Err(e) => return Fail(e.to_string()),
    };
    if recall != 1.0 {
        return Fail(format!("deterministic-corpus recall {recall}, expected 1.0"));
    }
    Pass(format!(
        "invariants hold on 1000 trips x {} quota settings, deterministic recall 1.0",
        configs.len()
    ))
}

struct RunArtifacts {
    fit: FitResult,
}

struct LearnWorld {
    split: DatasetSplit,
    vocabs: Vocabs,
    feature_cfg: FeatureConfig,
}

fn learn_world() -> LearnWorld {
    let trips = assemble_trips(generate_synthetic(5000, 64, 8, 0.9, 77));
    let split = split_dataset(trips, 500, 500, 7).expect("5000 trips split cleanly");
    let vocabs = build_vocabs(&split.train);
    let feature_cfg = FeatureConfig::from_trips(&split.train);
    LearnWorld {
        split,
        vocabs,
        feature_cfg,
    }
}

fn learn_model_cfg() -> ModelConfig {
    ModelConfig {
        city_emb_dim: 8,
        country_emb_dim: 4,
        affiliate_emb_dim: 3,
        trip_len: 8,
        model_dim: 16,
        n_trip_blocks: 1,
        n_candidate_blocks: 1,
        n_heads: 2,
        max_candidates: 64,
    }
}

fn learn_candidate_cfg() -> CandidateConfig {
    CandidateConfig {
        chain_quota: 16,
        booker_trip_quota: 32,
        limit: 64,
    }
}

fn learn_train_cfg() -> TrainConfig {
    TrainConfig {
        trips_per_epoch: 400,
        batch_size: 64,
        lr: 0.002,
        seed: 909,
        max_epochs: 30,
        patience: 6,
        single_thread_prep: true,
        ..TrainConfig::default()
    }
}

fn learn_fit(world: &LearnWorld) -> Result<FitResult, String> {
    let model = RerankModel::new(
        learn_model_cfg(),
        VocabSizes {
            city: world.vocabs.city.n_indices(),
            country: world.vocabs.country.n_indices(),
            affiliate: world.vocabs.affiliate.n_indices(),
        },
    );
    let candidate_cfg = learn_candidate_cfg();
    let cfg = learn_train_cfg();
    let ctx = TrainContext {
        model: &model,
        vocabs: &world.vocabs,
        feature_cfg: &world.feature_cfg,
        candidate_cfg: &candidate_cfg,
        cfg: &cfg,
    };
    fit(&ctx, &world.split.train, &world.split.validation, |_, _| {}).map_err(|e| e.to_string())
}

/// Micro model on a 5000-trip synthetic corpus: validation Accuracy@4
/// reaches 0.9 and clears the GlobalTop baseline by 0.3.
fn criterion_6() -> (Verdict, Option<RunArtifacts>) {
    let start = Instant::now();
    let world = learn_world();
    let fit_result = match learn_fit(&world) {
        Ok(f) => f,
        Err(e) => return (Fail(format!("training failed: {e}")), None),
    };

    let stats = fit_epoch_stats(&world.split.train, &world.vocabs);
    let candidate_cfg = learn_candidate_cfg();
    let cfg = learn_train_cfg();
    let pipe = FeaturePipeline {
        vocabs: &world.vocabs,
        feature_cfg: &world.feature_cfg,
        candidate_cfg: &candidate_cfg,
        matrix: &stats.matrix,
        stats: &stats.stats,
    };
    let baseline = match evaluate(&world.split.validation, &Scorer::GlobalTop, &pipe, &cfg) {
        Ok(b) => b,
        Err(e) => return (Fail(format!("baseline evaluation failed: {e}")), None),
    };

    let secs = start.elapsed().as_secs_f64();
    let best = fit_result.best_val_acc;
    let lift = best - baseline.accuracy;
    let detail = format!(
        "val acc@4 {best:.4} at epoch {} ({} epochs run), GlobalTop {:.4}, lift {lift:.4}, {secs:.0} s",
        fit_result.best_epoch,
        fit_result.reports.len(),
        baseline.accuracy
    );
    let verdict = if best < 0.9 {
        Fail(format!("{detail}; best val acc@4 below 0.9"))
    } else if lift < 0.3 {
        Fail(format!("{detail}; lift over GlobalTop below 0.3"))
    } else if secs >= 900.0 {
        Fail(format!("{detail}; over the 15 min budget"))
    } else {
        Pass(detail)
    };
    (verdict, Some(RunArtifacts { fit: fit_result }))
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        // Two constant series move together; one constant series cannot
        // correlate with a varying one.
        return if sxx <= 0.0 && syy <= 0.0 { 1.0 } else { 0.0 };
    }
    sxy / (sxx * syy).sqrt()
}

/// Validation NDCG@40 and Accuracy@4 move together across the epochs of
/// the learning run.
fn criterion_7(reports: &[EpochReport]) -> Verdict {
    if reports.len() < 2 {
        return Fail(format!("{} epoch(s) is too few to correlate", reports.len()));
    }
    let ndcg: Vec<f64> = reports.iter().map(|r| r.val_ndcg).collect();
    let acc: Vec<f64> = reports.iter().map(|r| r.val_acc).collect();
    let r = pearson(&ndcg, &acc);
    if r >= 0.8 {
        Pass(format!("pearson {r:.4} over {} epochs", reports.len()))
    } else {
        Fail(format!("pearson {r:.4} over {} epochs (need 0.8)", reports.len()))
    }
}

/// The learning run repeated with the same seed reproduces the epoch
/// CSV (wall-time column excluded) and the best parameters bitwise.
fn criterion_8(first: &FitResult) -> Verdict {
    let world = learn_world();
    let second = match learn_fit(&world) {
        Ok(f) => f,
        Err(e) => return Fail(format!("rerun failed: {e}")),
    };
    if first.reports.len() != second.reports.len() {
        return Fail(format!(
            "epoch counts diverge: {} vs {}",
            first.reports.len(),
            second.reports.len()
        ));
    }
    let metrics = |r: &EpochReport| {
        let line = r.csv_line();
        line.rsplit_once(',').expect("csv line has columns").0.to_string()
    };
    for (a, b) in first.reports.iter().zip(&second.reports) {
        let (la, lb) = (metrics(a), metrics(b));
        if la != lb {
            return Fail(format!("epoch {} rows diverge: {la} vs {lb}", a.epoch));
        }
        let bits = |v: f64| v.to_bits();
        if bits(a.train_ndcg) != bits(b.train_ndcg)
            || bits(a.val_ndcg) != bits(b.val_ndcg)
            || bits(a.val_acc) != bits(b.val_acc)
        {
            return Fail(format!("epoch {} metrics diverge at the bit level", a.epoch));
        }
    }
    for name in first.store.names() {
        let (a, b) = (first.store.get(name).values(), second.store.get(name).values());
        if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits()) {
            return Fail(format!("parameter {name} diverges between reruns"));
        }
    }
    Pass(format!(
        "{} epoch rows and all parameters bitwise-equal (wall-time column excluded)",
        first.reports.len()
    ))
}

/// Optional checks against the real challenge dataset; candidate recall
/// and baseline accuracies must land near their published values.
fn criterion_9() -> Verdict {
    let Some(path) = env::var_os("TRIPRANK_BOOKING_CSV") else {
        return Skip("set TRIPRANK_BOOKING_CSV to a challenge-format checkin CSV".into());
    };
    let path = Path::new(&path);
    let run = || -> Result<String, String> {
        let file = File::open(path).map_err(|e| format!("open {}: {e}", path.display()))?;
        let checkins =
            parse_checkins(BufReader::new(file), &ColumnMap::default()).map_err(|e| e.to_string())?;
        let trips = assemble_trips(checkins);
        let split = split_dataset(trips, 4000, 4000, 13).map_err(|e| e.to_string())?;
        let vocabs = build_vocabs(&split.train);
        let feature_cfg = FeatureConfig::from_trips(&split.train);
        let epoch_stats = fit_epoch_stats(&split.train, &vocabs);
        let candidate_cfg = CandidateConfig::default();

        let recall = candidate_recall(&split.holdout, &vocabs, |p| {
            assemble_candidates(p, &epoch_stats.matrix, &epoch_stats.stats, &vocabs, &candidate_cfg)
        })
        .map_err(|e| e.to_string())?;
        if (recall - 0.90).abs() > 0.03 {
            return Err(format!("candidate recall {recall:.4} outside 0.90 +/- 0.03"));
        }
        let mut detail = format!("recall {recall:.3}");

        let cfg = TrainConfig::default();
        let pipe = FeaturePipeline {
            vocabs: &vocabs,
            feature_cfg: &feature_cfg,
            candidate_cfg: &candidate_cfg,
            matrix: &epoch_stats.matrix,
            stats: &epoch_stats.stats,
        };
        let mut chain = None;
        for (scorer, published) in [
            (Scorer::GlobalTop, 0.058),
            (Scorer::LastCityCountryTop, 0.372),
            (Scorer::TransitionChain, 0.440),
        ] {
            let out = evaluate(&split.holdout, &scorer, &pipe, &cfg).map_err(|e| e.to_string())?;
            if (out.accuracy - published).abs() > 0.02 {
                return Err(format!(
                    "{} accuracy {:.4} outside {published} +/- 0.02",
                    scorer.name(),
                    out.accuracy
                ));
            }
            detail.push_str(&format!(", {} {:.3}", scorer.name(), out.accuracy));
            if matches!(scorer, Scorer::TransitionChain) {
                chain = Some(out);
            }
        }
        let chain = chain.expect("chain baseline evaluated");

        if let Some(ckpt) = env::var_os("TRIPRANK_BOOKING_CKPT") {
            let (store, model_cfg, _) =
                checkpoint::load(Path::new(&ckpt), None).map_err(|e| e.to_string())?;
            let reranker_candidates = CandidateConfig {
                limit: candidate_cfg.limit.min(model_cfg.max_candidates),
                ..candidate_cfg
            };
            let model = RerankModel::new(
                model_cfg,
                VocabSizes {
                    city: vocabs.city.n_indices(),
                    country: vocabs.country.n_indices(),
                    affiliate: vocabs.affiliate.n_indices(),
                },
            );
            let pipe = FeaturePipeline {
                candidate_cfg: &reranker_candidates,
                ..pipe
            };
            let out = evaluate(&split.holdout, &Scorer::Reranker(&model, &store), &pipe, &cfg)
                .map_err(|e| e.to_string())?;
            let gap = out.accuracy - chain.accuracy;
            if gap > 0.025 {
                let n = out.n_trips as u64;
                let p = two_proportion_z_test(
                    (out.accuracy * out.n_trips as f64).round() as u64,
                    (chain.accuracy * chain.n_trips as f64).round() as u64,
                    n,
                );
                if p >= 0.01 {
                    return Err(format!("reranker gap {gap:.4} but p {p:.4} is not below 0.01"));
                }
                detail.push_str(&format!(", reranker {:.3} (p {p:.2e})", out.accuracy));
            } else {
                detail.push_str(&format!(
                    ", reranker {:.3} within 0.025 of the chain (z-test not triggered)",
                    out.accuracy
                ));
            }
        } else {
            detail.push_str(", no reranker checkpoint supplied");
        }
        Ok(detail)
    };
    match run() {
        Ok(d) => Pass(d),
        Err(e) => Fail(e),
    }
}
