//! Flat key=value run configuration.
//!
//! One file drives every module: model shape (`model.*`), candidate
//! quotas (`candidates.*`), and training knobs (`train.*`). Lines are
//! `key = value`, `#` starts a comment, every key is optional and falls
//! back to its default, and unknown keys are an error so typos cannot
//! silently revert a knob to its default.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::candidates::CandidateConfig;
use crate::nn::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {0}: expected `key = value`, got `{1}`")]
    Malformed(usize, String),
    #[error("duplicate config key `{0}`")]
    DuplicateKey(String),
    #[error("config key `{0}`: expected {1}, got `{2}`")]
    BadValue(String, &'static str, String),
    #[error("unknown config keys: {0}")]
    UnknownKeys(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Parsed key=value pairs. Typed getters mark keys as consumed;
/// [`Config::finish`] then rejects anything left over.
#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || ConfigError::Malformed(i + 1, raw.trim().to_string());
            let (key, value) = line.split_once('=').ok_or_else(bad)?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(bad());
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::DuplicateKey(key.to_string()));
            }
        }
        Ok(Config {
            entries,
            used: BTreeSet::new(),
        })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        let hit = self.entries.get(key).cloned();
        if hit.is_some() {
            self.used.insert(key.to_string());
        }
        hit
    }

    fn parse_as<T: std::str::FromStr>(
        &mut self,
        key: &str,
        default: T,
        kind: &'static str,
    ) -> Result<T, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| ConfigError::BadValue(key.to_string(), kind, v)),
        }
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        self.parse_as(key, default, "a non-negative integer")
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        self.parse_as(key, default, "a non-negative integer")
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.parse_as(key, default, "a number")
    }

    pub fn bool_or(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        self.parse_as(key, default, "true or false")
    }

    /// Errors if any parsed key was never consumed by a getter.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::UnknownKeys(unknown.join(", ")))
        }
    }
}

/// Every module's knobs, read from one file.
#[derive(Debug, Clone, Default)]
pub struct FullConfig {
    pub model: ModelConfig,
    pub candidates: CandidateConfig,
    pub train: TrainConfig,
}

impl FullConfig {
    pub fn parse(text: &str) -> Result<FullConfig, ConfigError> {
        let mut c = Config::parse(text)?;
        let dm = ModelConfig::default();
        let model = ModelConfig {
            city_emb_dim: c.usize_or("model.city_emb_dim", dm.city_emb_dim)?,
            country_emb_dim: c.usize_or("model.country_emb_dim", dm.country_emb_dim)?,
            affiliate_emb_dim: c.usize_or("model.affiliate_emb_dim", dm.affiliate_emb_dim)?,
            trip_len: c.usize_or("model.trip_len", dm.trip_len)?,
            model_dim: c.usize_or("model.model_dim", dm.model_dim)?,
            n_trip_blocks: c.usize_or("model.n_trip_blocks", dm.n_trip_blocks)?,
            n_candidate_blocks: c.usize_or("model.n_candidate_blocks", dm.n_candidate_blocks)?,
            n_heads: c.usize_or("model.n_heads", dm.n_heads)?,
            max_candidates: c.usize_or("model.max_candidates", dm.max_candidates)?,
        };
        let dc = CandidateConfig::default();
        let candidates = CandidateConfig {
            chain_quota: c.usize_or("candidates.chain_quota", dc.chain_quota)?,
            booker_trip_quota: c.usize_or("candidates.booker_trip_quota", dc.booker_trip_quota)?,
            limit: c.usize_or("candidates.limit", dc.limit)?,
        };
        let dt = TrainConfig::default();
        let train = TrainConfig {
            trips_per_epoch: c.usize_or("train.trips_per_epoch", dt.trips_per_epoch)?,
            patience: c.usize_or("train.patience", dt.patience)?,
            max_epochs: c.usize_or("train.max_epochs", dt.max_epochs)?,
            batch_size: c.usize_or("train.batch_size", dt.batch_size)?,
            lr: c.f64_or("train.lr", dt.lr)?,
            seed: c.u64_or("train.seed", dt.seed)?,
            min_target_frac: c.f64_or("train.min_target_frac", dt.min_target_frac)?,
            max_target_frac: c.f64_or("train.max_target_frac", dt.max_target_frac)?,
            sigma: c.f64_or("train.sigma", dt.sigma)?,
            ndcg_k: c.usize_or("train.ndcg_k", dt.ndcg_k)?,
            acc_k: c.usize_or("train.acc_k", dt.acc_k)?,
            freeze_stats_after_first_epoch: c.bool_or(
                "train.freeze_stats_after_first_epoch",
                dt.freeze_stats_after_first_epoch,
            )?,
            single_thread_prep: c.bool_or("train.single_thread_prep", dt.single_thread_prep)?,
        };
        c.finish()?;

        model.validate().map_err(ConfigError::Invalid)?;
        train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if candidates.limit == 0 {
            return Err(ConfigError::Invalid("candidates.limit must be >= 1".into()));
        }
        if candidates.limit > model.max_candidates {
            return Err(ConfigError::Invalid(format!(
                "candidates.limit {} exceeds model.max_candidates {}",
                candidates.limit, model.max_candidates
            )));
        }
        Ok(FullConfig {
            model,
            candidates,
            train,
        })
    }

    /// Canonical dump of every knob; parses back to the same values.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let c = &self.candidates;
        let t = &self.train;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("candidates.booker_trip_quota", c.booker_trip_quota.to_string());
        kv("candidates.chain_quota", c.chain_quota.to_string());
        kv("candidates.limit", c.limit.to_string());
        kv("model.affiliate_emb_dim", m.affiliate_emb_dim.to_string());
        kv("model.city_emb_dim", m.city_emb_dim.to_string());
        kv("model.country_emb_dim", m.country_emb_dim.to_string());
        kv("model.max_candidates", m.max_candidates.to_string());
        kv("model.model_dim", m.model_dim.to_string());
        kv("model.n_candidate_blocks", m.n_candidate_blocks.to_string());
        kv("model.n_heads", m.n_heads.to_string());
        kv("model.n_trip_blocks", m.n_trip_blocks.to_string());
        kv("model.trip_len", m.trip_len.to_string());
        kv("train.acc_k", t.acc_k.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv(
            "train.freeze_stats_after_first_epoch",
            t.freeze_stats_after_first_epoch.to_string(),
        );
        kv("train.lr", t.lr.to_string());
        kv("train.max_epochs", t.max_epochs.to_string());
        kv("train.max_target_frac", t.max_target_frac.to_string());
        kv("train.min_target_frac", t.min_target_frac.to_string());
        kv("train.ndcg_k", t.ndcg_k.to_string());
        kv("train.patience", t.patience.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.sigma", t.sigma.to_string());
        kv("train.single_thread_prep", t.single_thread_prep.to_string());
        kv("train.trips_per_epoch", t.trips_per_epoch.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_an_empty_file() {
        let cfg = FullConfig::parse("").unwrap();
        assert_eq!(cfg.model.model_dim, ModelConfig::default().model_dim);
        assert_eq!(cfg.candidates.limit, 500);
        assert_eq!(cfg.train.patience, 50);
    }

    #[test]
    fn comments_and_spacing_are_ignored() {
        let text = "\n# a comment\n  train.patience = 7  # trailing note\n\nmodel.model_dim=20\nmodel.n_heads = 4\n";
        let cfg = FullConfig::parse(text).unwrap();
        assert_eq!(cfg.train.patience, 7);
        assert_eq!(cfg.model.model_dim, 20);
        assert_eq!(cfg.model.n_heads, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = FullConfig::parse("train.patince = 7\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKeys(ref k) if k.contains("train.patince")));
    }

    #[test]
    fn malformed_lines_point_at_the_line() {
        let err = FullConfig::parse("fine = 1\nnot a pair\n").unwrap_err();
        match err {
            ConfigError::Malformed(line, text) => {
                assert_eq!(line, 2);
                assert_eq!(text, "not a pair");
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = FullConfig::parse("train.seed = 1\ntrain.seed = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey(ref k) if k == "train.seed"));
    }

    #[test]
    fn typed_values_are_checked() {
        let err = FullConfig::parse("train.lr = fast\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue(ref k, _, _) if k == "train.lr"));
        let err = FullConfig::parse("model.model_dim = -3\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue(ref k, _, _) if k == "model.model_dim"));
    }

    #[test]
    fn cross_module_limits_are_enforced() {
        let err = FullConfig::parse("candidates.limit = 600\nmodel.max_candidates = 500\n")
            .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        let err = FullConfig::parse("model.model_dim = 7\nmodel.n_heads = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        let err = FullConfig::parse("train.patience = 0\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }

    #[test]
    fn canonical_text_round_trips() {
        let text = "model.model_dim = 24\nmodel.n_heads = 3\ntrain.lr = 0.005\ntrain.seed = 99\ncandidates.limit = 64\ncandidates.chain_quota = 16\ncandidates.booker_trip_quota = 32\nmodel.max_candidates = 64\n";
        let cfg = FullConfig::parse(text).unwrap();
        let dumped = cfg.to_text();
        let reparsed = FullConfig::parse(&dumped).unwrap();
        assert_eq!(dumped, reparsed.to_text());
        assert_eq!(reparsed.model.model_dim, 24);
        assert_eq!(reparsed.train.seed, 99);
        assert_eq!(reparsed.candidates.limit, 64);
    }
}
