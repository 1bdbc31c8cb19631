//! Epoch orchestration: per-epoch trip sampling and label resplits, stats
//! refitting on the held-back remainder, LambdaRANK updates, validation,
//! and early stopping on validation Accuracy@4.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::candidates::{
    assemble_candidates, fit_popularity_stats, fit_transition_matrix, ranked_predictions,
    transition_chain_scores, trip_city_indices, CandidateConfig, CandidateSet, PopularityStats,
    TransitionMatrix,
};
use crate::dataset::{Checkin, Trip, Vocabs};
use crate::features::{
    candidate_features, target_context_features, trip_city_features, FeatureConfig,
};
use crate::ltr::{
    accuracy_at_k, lambdarank_gradients, make_labels, ndcg_at_k, LambdaConfig, LtrError,
};
use crate::nn::params::{ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::nn::{Graph, ParameterStore, RerankModel, TripInstance};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no trips with at least two checkins to evaluate")]
    EmptyInput,
    #[error("bad train config: {0}")]
    Config(String),
    #[error(transparent)]
    Ltr(#[from] LtrError),
}

/// Knobs for the training loop. Candidate quotas live in
/// [`CandidateConfig`] and model shape in `ModelConfig`; this covers the
/// loop itself.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Trips sampled per epoch for neural updates; the rest of the train
    /// split feeds the counting models.
    pub trips_per_epoch: usize,
    /// Epochs without a validation Accuracy@4 improvement before stopping.
    pub patience: usize,
    /// Hard epoch cap so runs terminate even while still improving.
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Bounds of the uniform draw for the held-out target fraction.
    pub min_target_frac: f64,
    pub max_target_frac: f64,
    /// Logistic steepness of the LambdaRANK pair weight.
    pub sigma: f64,
    pub ndcg_k: usize,
    pub acc_k: usize,
    /// Skip the per-epoch stats refit after the first epoch. Cheaper, but
    /// the remainder/sample separation then only holds for epoch 0.
    pub freeze_stats_after_first_epoch: bool,
    /// Prepare instances on the calling thread instead of the rayon pool.
    /// Both paths produce bitwise-identical results; this is a debugging
    /// aid, not a determinism requirement.
    pub single_thread_prep: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            trips_per_epoch: 10_000,
            patience: 50,
            max_epochs: 500,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            min_target_frac: crate::ltr::DEFAULT_MIN_TARGET_FRAC,
            max_target_frac: crate::ltr::DEFAULT_MAX_TARGET_FRAC,
            sigma: 1.0,
            ndcg_k: 40,
            acc_k: 4,
            freeze_stats_after_first_epoch: false,
            single_thread_prep: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.patience < 1 {
            return fail("patience must be >= 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if self.trips_per_epoch < self.batch_size {
            return fail("trips_per_epoch must be >= batch_size");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be >= 1");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail("lr must be finite and non-negative");
        }
        if self.ndcg_k == 0 || self.acc_k == 0 {
            return fail("ndcg_k and acc_k must be >= 1");
        }
        Ok(())
    }
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_ndcg40,val_ndcg40,val_acc4,seconds";

/// One epoch's metrics. All fields except `seconds` (wall time) are
/// reproducible bitwise under a fixed seed.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_ndcg: f64,
    pub val_ndcg: f64,
    pub val_acc: f64,
    pub seconds: f64,
    /// Sampled trips that produced no usable instance (too short, or no
    /// target city survived in the candidate pool).
    pub skipped: usize,
}

impl EpochReport {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_ndcg, self.val_ndcg, self.val_acc, self.seconds
        )
    }
}

/// Counting models fitted on the train trips held back from neural
/// updates, plus the ids of the trips they actually saw.
pub struct EpochStats {
    pub matrix: TransitionMatrix,
    pub stats: PopularityStats,
    pub fitted_trip_ids: BTreeSet<String>,
}

pub fn fit_epoch_stats<'a, I>(trips: I, vocabs: &Vocabs) -> EpochStats
where
    I: IntoIterator<Item = &'a Trip> + Clone,
{
    EpochStats {
        matrix: fit_transition_matrix(trips.clone(), vocabs),
        stats: fit_popularity_stats(trips.clone(), vocabs),
        fitted_trip_ids: trips.into_iter().map(|t| t.utrip_id.clone()).collect(),
    }
}

/// Everything needed to turn a trip prefix into model inputs.
#[derive(Clone, Copy)]
pub struct FeaturePipeline<'a> {
    pub vocabs: &'a Vocabs,
    pub feature_cfg: &'a FeatureConfig,
    pub candidate_cfg: &'a CandidateConfig,
    pub matrix: &'a TransitionMatrix,
    pub stats: &'a PopularityStats,
}

impl FeaturePipeline<'_> {
    /// Builds the numeric instance for one prefix. `target` supplies the
    /// known attributes of the checkin being predicted (dates, device,
    /// affiliate, booker country); its city and hotel-country fields are
    /// never read. Prefixes longer than the encoder keep their newest
    /// checkins.
    pub fn build_instance(
        &self,
        prefix: &Trip,
        target: &Checkin,
        model_cfg: &crate::nn::ModelConfig,
    ) -> (TripInstance, CandidateSet) {
        assert!(!prefix.is_empty(), "prefix must keep at least one checkin");
        assert!(
            self.candidate_cfg.limit <= model_cfg.max_candidates,
            "candidate limit {} exceeds model capacity {}",
            self.candidate_cfg.limit,
            model_cfg.max_candidates
        );
        let trimmed;
        let prefix = if prefix.len() > model_cfg.trip_len {
            trimmed = Trip {
                utrip_id: prefix.utrip_id.clone(),
                checkins: prefix.checkins[prefix.len() - model_cfg.trip_len..].to_vec(),
            };
            &trimmed
        } else {
            prefix
        };

        let candidates =
            assemble_candidates(prefix, self.matrix, self.stats, self.vocabs, self.candidate_cfg);
        let cand_feats = candidate_features(
            &candidates,
            prefix,
            self.matrix,
            self.stats,
            self.vocabs,
            target.checkin.month(),
            target.checkin.year(),
        );
        let instance = TripInstance {
            city_idx: prefix
                .checkins
                .iter()
                .map(|c| self.vocabs.city.index(&c.city_id) as usize)
                .collect(),
            booker_idx: prefix
                .checkins
                .iter()
                .map(|c| self.vocabs.country.index(&c.booker_country) as usize)
                .collect(),
            hotel_idx: prefix
                .checkins
                .iter()
                .map(|c| self.vocabs.country.index(&c.hotel_country) as usize)
                .collect(),
            affiliate_idx: prefix
                .checkins
                .iter()
                .map(|c| self.vocabs.affiliate.index(&c.affiliate_id) as usize)
                .collect(),
            trip_feats: prefix
                .checkins
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let prev = if i > 0 { Some(&prefix.checkins[i - 1]) } else { None };
                    trip_city_features(c, prev, self.feature_cfg)
                })
                .collect(),
            cand_city_idx: candidates.cities().map(|c| c as usize).collect(),
            cand_country_idx: candidates
                .cities()
                .map(|c| self.stats.country_of_city(c) as usize)
                .collect(),
            cand_feats,
            target_ctx: target_context_features(target, self.feature_cfg),
        };
        (instance, candidates)
    }
}

/// How a ranked city list is produced for one prefix.
pub enum Scorer<'a> {
    /// Global popularity order.
    GlobalTop,
    /// Popularity among trips whose penultimate city sits in the country
    /// of the prefix's last checkin.
    LastCityCountryTop,
    /// Transition counts accumulated from every prefix city.
    TransitionChain,
    /// Candidate pool scored by the attention model.
    Reranker(&'a RerankModel, &'a ParameterStore),
}

impl Scorer<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Scorer::GlobalTop => "GlobalTop",
            Scorer::LastCityCountryTop => "LastCityCountryTop",
            Scorer::TransitionChain => "TransitionChain",
            Scorer::Reranker(..) => "RerankingAttention",
        }
    }
}

/// NDCG@k when exactly one item is relevant (label 1.0): the ideal DCG
/// is 1, so the score is the discount at the item's rank, or 0 on a
/// miss. Agrees with [`ndcg_at_k`] on the same one-hot labels.
fn single_label_ndcg(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r < k => 1.0 / ((r + 2) as f64).log2(),
        _ => 0.0,
    }
}

/// Candidate cities reordered by score descending, candidate order on
/// ties.
fn ranked_cities(scores: &[f64], candidates: &CandidateSet) -> Vec<u32> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.into_iter().map(|i| candidates.entries[i].0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome {
    pub accuracy: f64,
    pub ndcg: f64,
    pub n_trips: usize,
}

/// Last-city-held-out evaluation: for each trip the prefix is everything
/// but the final checkin and the final city is the single relevant item.
/// A true city missing from the ranking contributes 0 to both metrics.
/// Trips shorter than two checkins are skipped.
pub fn evaluate(
    trips: &[Trip],
    scorer: &Scorer,
    pipe: &FeaturePipeline,
    cfg: &TrainConfig,
) -> Result<EvalOutcome, TrainError> {
    let eligible: Vec<&Trip> = trips.iter().filter(|t| t.len() >= 2).collect();
    if eligible.is_empty() {
        return Err(TrainError::EmptyInput);
    }

    let mut acc_sum = 0.0;
    let mut ndcg_sum = 0.0;
    let mut tally = |ranked: &[u32], truth: u32| {
        acc_sum += accuracy_at_k(ranked, truth, cfg.acc_k) as f64;
        let rank = ranked.iter().position(|&c| c == truth);
        ndcg_sum += single_label_ndcg(rank, cfg.ndcg_k);
    };

    match scorer {
        Scorer::GlobalTop => {
            for trip in &eligible {
                let truth = pipe.vocabs.city.index(&trip.last().city_id);
                tally(pipe.stats.global_top(), truth);
            }
        }
        Scorer::LastCityCountryTop => {
            for trip in &eligible {
                let truth = pipe.vocabs.city.index(&trip.last().city_id);
                let last_prefix = &trip.checkins[trip.len() - 2];
                let country = pipe.vocabs.country.index(&last_prefix.hotel_country);
                tally(pipe.stats.last_city_country_top(country), truth);
            }
        }
        Scorer::TransitionChain => {
            for trip in &eligible {
                let truth = pipe.vocabs.city.index(&trip.last().city_id);
                let cities = trip_city_indices(trip, pipe.vocabs);
                let scores = transition_chain_scores(&cities[..cities.len() - 1], pipe.matrix);
                tally(&ranked_predictions(&scores), truth);
            }
        }
        Scorer::Reranker(model, store) => {
            let prep = |trip: &&Trip| {
                let prefix = trip.prefix();
                let (instance, candidates) = pipe.build_instance(&prefix, trip.last(), &model.cfg);
                let truth = pipe.vocabs.city.index(&trip.last().city_id);
                (instance, candidates, truth)
            };
            for chunk in eligible.chunks(cfg.batch_size) {
                let built: Vec<(TripInstance, CandidateSet, u32)> = if cfg.single_thread_prep {
                    chunk.iter().map(prep).collect()
                } else {
                    chunk.par_iter().map(prep).collect()
                };
                let mut instances = Vec::with_capacity(built.len());
                let mut metas = Vec::with_capacity(built.len());
                for (instance, candidates, truth) in built {
                    instances.push(instance);
                    metas.push((candidates, truth));
                }
                let mut g = Graph::new();
                let sv = model.score_batch(&mut g, store, &instances);
                let values = g.value(sv.scores);
                for (e, (candidates, truth)) in metas.iter().enumerate() {
                    let row = &values[e * sv.n_slots..e * sv.n_slots + sv.n_candidates[e]];
                    tally(&ranked_cities(row, candidates), *truth);
                }
            }
        }
    }

    let n = eligible.len() as f64;
    Ok(EvalOutcome {
        accuracy: acc_sum / n,
        ndcg: ndcg_sum / n,
        n_trips: eligible.len(),
    })
}

/// Scores the candidate pool for one prefix with the attention model.
/// Returns (city, score) best-first, candidate order on ties.
pub fn score_prefix(
    model: &RerankModel,
    store: &ParameterStore,
    prefix: &Trip,
    target: &Checkin,
    pipe: &FeaturePipeline,
) -> Vec<(u32, f64)> {
    let (instance, candidates) = pipe.build_instance(prefix, target, &model.cfg);
    let mut g = Graph::new();
    let sv = model.score_batch(&mut g, store, std::slice::from_ref(&instance));
    let values = &g.value(sv.scores)[..sv.n_candidates[0]];
    let mut out: Vec<(u32, f64)> = candidates.cities().zip(values.iter().copied()).collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    out
}

/// Immutable inputs shared by every epoch.
pub struct TrainContext<'a> {
    pub model: &'a RerankModel,
    pub vocabs: &'a Vocabs,
    pub feature_cfg: &'a FeatureConfig,
    pub candidate_cfg: &'a CandidateConfig,
    pub cfg: &'a TrainConfig,
}

struct Prepared {
    instance: TripInstance,
    labels: Vec<f64>,
}

fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One training epoch: samples trips for neural updates, refits the
/// counting models on the unsampled remainder (an empty remainder falls
/// back to the previous epoch's stats), resplits every sampled trip into
/// prefix and targets, applies LambdaRANK updates batch by batch, and
/// evaluates on the validation split.
pub fn run_epoch(
    ctx: &TrainContext,
    store: &mut ParameterStore,
    train: &[Trip],
    val: &[Trip],
    epoch: usize,
    epoch_seed: u64,
    prev_stats: Option<EpochStats>,
) -> Result<(EpochReport, EpochStats), TrainError> {
    let cfg = ctx.cfg;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);

    let n_sample = cfg.trips_per_epoch.min(train.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let (sampled_idx, rest_idx) = order.split_at(n_sample);

    let freeze = cfg.freeze_stats_after_first_epoch && prev_stats.is_some();
    let (epoch_stats, refit) = if freeze {
        (prev_stats.unwrap(), false)
    } else if rest_idx.is_empty() {
        match prev_stats {
            Some(s) => (s, false),
            None => (fit_epoch_stats(std::iter::empty(), ctx.vocabs), true),
        }
    } else {
        (
            fit_epoch_stats(rest_idx.iter().map(|&i| &train[i]), ctx.vocabs),
            true,
        )
    };
    if refit {
        for &i in sampled_idx {
            assert!(
                !epoch_stats.fitted_trip_ids.contains(&train[i].utrip_id),
                "stats leaked a sampled trip: {}",
                train[i].utrip_id
            );
        }
    }

    let pipe = FeaturePipeline {
        vocabs: ctx.vocabs,
        feature_cfg: ctx.feature_cfg,
        candidate_cfg: ctx.candidate_cfg,
        matrix: &epoch_stats.matrix,
        stats: &epoch_stats.stats,
    };
    let prep_one = |(slot, &trip_i): (usize, &usize)| -> Option<Prepared> {
        let trip = &train[trip_i];
        if trip.len() < 2 {
            return None;
        }
        let mut inst_rng = ChaCha8Rng::seed_from_u64(mix_seed(epoch_seed, slot as u64));
        let labeled = make_labels(
            trip,
            ctx.vocabs,
            &mut inst_rng,
            cfg.min_target_frac,
            cfg.max_target_frac,
        )
        .ok()?;
        let target = &trip.checkins[labeled.prefix.len()];
        let (instance, candidates) = pipe.build_instance(&labeled.prefix, target, &ctx.model.cfg);
        let labels = labeled.candidate_labels(&candidates);
        if labels.iter().all(|&l| l == 0.0) {
            return None;
        }
        Some(Prepared { instance, labels })
    };
    let prepared: Vec<Option<Prepared>> = if cfg.single_thread_prep {
        sampled_idx.iter().enumerate().map(prep_one).collect()
    } else {
        sampled_idx.par_iter().enumerate().map(prep_one).collect()
    };
    let skipped = prepared.iter().filter(|p| p.is_none()).count();
    let mut instances = Vec::with_capacity(prepared.len() - skipped);
    let mut labelsets = Vec::with_capacity(prepared.len() - skipped);
    for p in prepared.into_iter().flatten() {
        instances.push(p.instance);
        labelsets.push(p.labels);
    }

    let lambda_cfg = LambdaConfig {
        sigma: cfg.sigma,
        k: cfg.ndcg_k,
    };
    let mut train_ndcg_sum = 0.0;
    let mut n_trained = 0usize;
    for (batch, batch_labels) in instances
        .chunks(cfg.batch_size)
        .zip(labelsets.chunks(cfg.batch_size))
    {
        let mut g = Graph::new();
        let sv = ctx.model.score_batch(&mut g, store, batch);
        let score_values = g.value(sv.scores).to_vec();
        let mut seed = vec![0.0; score_values.len()];
        for (e, labels) in batch_labels.iter().enumerate() {
            let start = e * sv.n_slots;
            let row = &score_values[start..start + sv.n_candidates[e]];
            train_ndcg_sum += ndcg_at_k(row, labels, cfg.ndcg_k)?;
            n_trained += 1;
            let lambdas = lambdarank_gradients(row, labels, &lambda_cfg)?;
            for (j, l) in lambdas.into_iter().enumerate() {
                seed[start + j] = -l;
            }
        }
        g.backward(sv.scores, &seed);
        g.flush_grads(store);
        store.adam_step(cfg.lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS);
    }

    let val_outcome = evaluate(val, &Scorer::Reranker(ctx.model, store), &pipe, cfg)?;
    let report = EpochReport {
        epoch,
        train_ndcg: if n_trained > 0 {
            train_ndcg_sum / n_trained as f64
        } else {
            0.0
        },
        val_ndcg: val_outcome.ndcg,
        val_acc: val_outcome.accuracy,
        seconds: started.elapsed().as_secs_f64(),
        skipped,
    };
    Ok((report, epoch_stats))
}

pub struct FitResult {
    /// Parameters from the best-validation epoch, not the last one.
    pub store: ParameterStore,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub reports: Vec<EpochReport>,
}

/// Runs epochs until validation Accuracy@4 stops improving for
/// `patience` consecutive epochs (or `max_epochs` is hit) and returns
/// the parameters from the best epoch. `on_epoch` fires after every
/// epoch; its second argument carries the parameter snapshot whenever
/// that epoch set a new best.
pub fn fit<F>(
    ctx: &TrainContext,
    train: &[Trip],
    val: &[Trip],
    mut on_epoch: F,
) -> Result<FitResult, TrainError>
where
    F: FnMut(&EpochReport, Option<&ParameterStore>),
{
    let cfg = ctx.cfg;
    cfg.validate()?;
    let mut store = ctx.model.init_params(cfg.seed);
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, f64, ParameterStore)> = None;
    let mut reports = Vec::new();
    let mut since_improve = 0usize;
    let mut prev_stats = None;
    for epoch in 0..cfg.max_epochs {
        let epoch_seed: u64 = master.gen();
        let (report, stats) =
            run_epoch(ctx, &mut store, train, val, epoch, epoch_seed, prev_stats.take())?;
        prev_stats = Some(stats);
        let improved = best
            .as_ref()
            .map_or(true, |&(_, acc, _)| report.val_acc > acc);
        if improved {
            best = Some((epoch, report.val_acc, store.clone()));
            since_improve = 0;
        } else {
            since_improve += 1;
        }
        on_epoch(&report, if improved { Some(&store) } else { None });
        reports.push(report);
        if since_improve >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_val_acc, best_store) = best.expect("at least one epoch ran");
    Ok(FitResult {
        store: best_store,
        best_epoch,
        best_val_acc,
        reports,
    })
}
