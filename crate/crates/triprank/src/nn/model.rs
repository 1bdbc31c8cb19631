//! The attention reranker: trip encoder, candidate encoder, and the
//! cross-attention scorer joining them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParameterStore;
use crate::features::{CANDIDATE_FEATURE_DIM, TRIP_FEATURE_DIM};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub city_emb_dim: usize,
    pub country_emb_dim: usize,
    pub affiliate_emb_dim: usize,
    pub trip_len: usize,
    pub model_dim: usize,
    pub n_trip_blocks: usize,
    pub n_candidate_blocks: usize,
    pub n_heads: usize,
    pub max_candidates: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            city_emb_dim: 32,
            country_emb_dim: 32,
            affiliate_emb_dim: 5,
            trip_len: 50,
            model_dim: 115,
            n_trip_blocks: 3,
            n_candidate_blocks: 1,
            n_heads: 5,
            max_candidates: 500,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        let dims = [
            self.city_emb_dim,
            self.country_emb_dim,
            self.affiliate_emb_dim,
            self.trip_len,
            self.model_dim,
            self.n_heads,
            self.max_candidates,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err("model dimensions must be positive".into());
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(format!(
                "model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            ));
        }
        Ok(())
    }

    /// Per-head width; heads always partition model_dim exactly.
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    /// Raw trip-city width: city, booker-country, and hotel-country
    /// embeddings plus the affiliate embedding and engineered features.
    pub fn trip_raw_width(&self) -> usize {
        self.city_emb_dim + 2 * self.country_emb_dim + self.affiliate_emb_dim + TRIP_FEATURE_DIM
    }

    /// Raw candidate width: city and country embeddings plus candidate
    /// features; candidates carry no affiliate.
    pub fn cand_raw_width(&self) -> usize {
        self.city_emb_dim + self.country_emb_dim + CANDIDATE_FEATURE_DIM
    }

    pub fn pos_start_width(&self) -> usize {
        self.model_dim / 2
    }

    pub fn pos_end_width(&self) -> usize {
        self.model_dim - self.model_dim / 2
    }

    pub fn to_text(&self) -> String {
        format!(
            "city_emb_dim={}\ncountry_emb_dim={}\naffiliate_emb_dim={}\ntrip_len={}\n\
             model_dim={}\nn_trip_blocks={}\nn_candidate_blocks={}\nn_heads={}\nmax_candidates={}\n",
            self.city_emb_dim,
            self.country_emb_dim,
            self.affiliate_emb_dim,
            self.trip_len,
            self.model_dim,
            self.n_trip_blocks,
            self.n_candidate_blocks,
            self.n_heads,
            self.max_candidates
        )
    }

    pub fn from_text(text: &str) -> Result<ModelConfig, String> {
        let mut cfg = ModelConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("malformed model config line: {line}"))?;
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| format!("bad value in model config line: {line}"))?;
            let field = match key.trim() {
                "city_emb_dim" => &mut cfg.city_emb_dim,
                "country_emb_dim" => &mut cfg.country_emb_dim,
                "affiliate_emb_dim" => &mut cfg.affiliate_emb_dim,
                "trip_len" => &mut cfg.trip_len,
                "model_dim" => &mut cfg.model_dim,
                "n_trip_blocks" => &mut cfg.n_trip_blocks,
                "n_candidate_blocks" => &mut cfg.n_candidate_blocks,
                "n_heads" => &mut cfg.n_heads,
                "max_candidates" => &mut cfg.max_candidates,
                other => return Err(format!("unknown model config key: {other}")),
            };
            *field = value;
            seen.insert(key.trim().to_string());
        }
        if seen.len() != 9 {
            return Err(format!("model config has {} of 9 keys", seen.len()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Index-space sizes (including the shared out-of-vocabulary slot 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabSizes {
    pub city: usize,
    pub country: usize,
    pub affiliate: usize,
}

/// One fully numeric example: an observed trip prefix plus its
/// candidate pool and the known context of the checkin being predicted.
#[derive(Debug, Clone)]
pub struct TripInstance {
    pub city_idx: Vec<usize>,
    pub booker_idx: Vec<usize>,
    pub hotel_idx: Vec<usize>,
    pub affiliate_idx: Vec<usize>,
    pub trip_feats: Vec<[f64; TRIP_FEATURE_DIM]>,
    pub cand_city_idx: Vec<usize>,
    pub cand_country_idx: Vec<usize>,
    pub cand_feats: Vec<[f64; CANDIDATE_FEATURE_DIM]>,
    pub target_ctx: [f64; TRIP_FEATURE_DIM],
}

impl TripInstance {
    fn check(&self, cfg: &ModelConfig) {
        let len = self.city_idx.len();
        assert!(
            len >= 1 && len <= cfg.trip_len,
            "trip length {len} outside 1..={}",
            cfg.trip_len
        );
        assert_eq!(self.booker_idx.len(), len);
        assert_eq!(self.hotel_idx.len(), len);
        assert_eq!(self.affiliate_idx.len(), len);
        assert_eq!(self.trip_feats.len(), len);
        let n_cand = self.cand_city_idx.len();
        assert!(
            n_cand >= 1 && n_cand <= cfg.max_candidates,
            "candidate count {n_cand} outside 1..={}",
            cfg.max_candidates
        );
        assert_eq!(self.cand_country_idx.len(), n_cand);
        assert_eq!(self.cand_feats.len(), n_cand);
    }
}

/// Graph handles produced by a forward pass.
pub struct ScoreVars {
    /// (batch, candidate slots); slots past an example's real candidate
    /// count are padding and must be ignored.
    pub scores: Var,
    pub trip_enc: Var,
    pub cand_enc: Var,
    /// Cross-attention core node, for probe access to attention weights.
    pub cross_core: Var,
    pub n_candidates: Vec<usize>,
    pub n_slots: usize,
}

pub struct RerankModel {
    pub cfg: ModelConfig,
    pub vocab: VocabSizes,
}

impl RerankModel {
    pub fn new(cfg: ModelConfig, vocab: VocabSizes) -> RerankModel {
        cfg.validate().expect("invalid model config");
        RerankModel { cfg, vocab }
    }

    /// Creates every parameter in a fixed order from one seed.
    pub fn init_params(&self, seed: u64) -> ParameterStore {
        let cfg = &self.cfg;
        let d = cfg.model_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        store.init_embedding(&mut rng, "emb.city", self.vocab.city, cfg.city_emb_dim);
        store.init_embedding(&mut rng, "emb.country", self.vocab.country, cfg.country_emb_dim);
        store.init_embedding(&mut rng, "emb.affiliate", self.vocab.affiliate, cfg.affiliate_emb_dim);
        store.init_dense(&mut rng, "trip.input", cfg.trip_raw_width(), d);
        store.init_embedding(&mut rng, "pos.start", cfg.trip_len, cfg.pos_start_width());
        store.init_embedding(&mut rng, "pos.end", cfg.trip_len, cfg.pos_end_width());
        store.init_dense(&mut rng, "pos.combine", d, d);
        for i in 0..cfg.n_trip_blocks {
            init_block(&mut store, &mut rng, &format!("trip.block{i}"), d);
        }
        store.init_dense(&mut rng, "cand.input", cfg.cand_raw_width(), d);
        for i in 0..cfg.n_candidate_blocks {
            init_block(&mut store, &mut rng, &format!("cand.block{i}"), d);
        }
        init_attention(&mut store, &mut rng, "cross.attn", d);
        store.init_dense(&mut rng, "target", TRIP_FEATURE_DIM, d);
        store
    }

    /// Forward pass over a batch: encode trips and candidates, attend
    /// candidates over trip positions, dot with the encoded target
    /// context.
    pub fn score_batch(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        batch: &[TripInstance],
    ) -> ScoreVars {
        assert!(!batch.is_empty(), "empty batch");
        let cfg = &self.cfg;
        let b = batch.len();
        let t_len = cfg.trip_len;
        for inst in batch {
            inst.check(cfg);
        }

        let mut city_idx = Vec::with_capacity(b * t_len);
        let mut booker_idx = Vec::with_capacity(b * t_len);
        let mut hotel_idx = Vec::with_capacity(b * t_len);
        let mut affiliate_idx = Vec::with_capacity(b * t_len);
        let mut trip_feats = vec![0.0; b * t_len * TRIP_FEATURE_DIM];
        let mut trip_mask = vec![0.0; b * t_len];
        let mut lengths = Vec::with_capacity(b);
        for (e, inst) in batch.iter().enumerate() {
            let len = inst.city_idx.len();
            lengths.push(len);
            for p in 0..t_len {
                if p < len {
                    city_idx.push(inst.city_idx[p]);
                    booker_idx.push(inst.booker_idx[p]);
                    hotel_idx.push(inst.hotel_idx[p]);
                    affiliate_idx.push(inst.affiliate_idx[p]);
                    let at = (e * t_len + p) * TRIP_FEATURE_DIM;
                    trip_feats[at..at + TRIP_FEATURE_DIM].copy_from_slice(&inst.trip_feats[p]);
                    trip_mask[e * t_len + p] = 1.0;
                } else {
                    city_idx.push(0);
                    booker_idx.push(0);
                    hotel_idx.push(0);
                    affiliate_idx.push(0);
                }
            }
        }

        let city_table = g.param(store, "emb.city");
        let country_table = g.param(store, "emb.country");
        let affiliate_table = g.param(store, "emb.affiliate");

        let ce = g.gather(city_table, &city_idx, &[b, t_len]);
        let be = g.gather(country_table, &booker_idx, &[b, t_len]);
        let he = g.gather(country_table, &hotel_idx, &[b, t_len]);
        let ae = g.gather(affiliate_table, &affiliate_idx, &[b, t_len]);
        let feats = g.input(&[b, t_len, TRIP_FEATURE_DIM], trip_feats);
        let raw = g.concat_last(&[ce, be, he, ae, feats]);
        let (w, bias) = dense_params(g, store, "trip.input");
        let mut x = g.dense(raw, w, bias);
        x = g.mask_rows(x, &trip_mask);

        let (start_idx, end_idx) = positional_indices(&lengths, t_len);
        let ps_table = g.param(store, "pos.start");
        let pe_table = g.param(store, "pos.end");
        let ps = g.gather(ps_table, &start_idx, &[b, t_len]);
        let pe = g.gather(pe_table, &end_idx, &[b, t_len]);
        let pos_cat = g.concat_last(&[ps, pe]);
        let (cw, cb) = dense_params(g, store, "pos.combine");
        let pos = g.dense(pos_cat, cw, cb);
        x = g.mul(x, pos);

        for i in 0..cfg.n_trip_blocks {
            x = mul_block(g, store, &format!("trip.block{i}"), x, &trip_mask, cfg.n_heads);
        }
        let trip_enc = x;

        let n_slots = batch.iter().map(|i| i.cand_city_idx.len()).max().unwrap();
        let mut cand_city = Vec::with_capacity(b * n_slots);
        let mut cand_country = Vec::with_capacity(b * n_slots);
        let mut cand_feats = vec![0.0; b * n_slots * CANDIDATE_FEATURE_DIM];
        let mut cand_mask = vec![0.0; b * n_slots];
        let mut n_candidates = Vec::with_capacity(b);
        for (e, inst) in batch.iter().enumerate() {
            let n = inst.cand_city_idx.len();
            n_candidates.push(n);
            for s in 0..n_slots {
                if s < n {
                    cand_city.push(inst.cand_city_idx[s]);
                    cand_country.push(inst.cand_country_idx[s]);
                    let at = (e * n_slots + s) * CANDIDATE_FEATURE_DIM;
                    cand_feats[at..at + CANDIDATE_FEATURE_DIM].copy_from_slice(&inst.cand_feats[s]);
                    cand_mask[e * n_slots + s] = 1.0;
                } else {
                    cand_city.push(0);
                    cand_country.push(0);
                }
            }
        }
        let cce = g.gather(city_table, &cand_city, &[b, n_slots]);
        let cke = g.gather(country_table, &cand_country, &[b, n_slots]);
        let cf = g.input(&[b, n_slots, CANDIDATE_FEATURE_DIM], cand_feats);
        let craw = g.concat_last(&[cce, cke, cf]);
        let (cw, cb) = dense_params(g, store, "cand.input");
        let mut c = g.dense(craw, cw, cb);
        c = g.mask_rows(c, &cand_mask);
        for i in 0..cfg.n_candidate_blocks {
            c = mul_block(g, store, &format!("cand.block{i}"), c, &cand_mask, cfg.n_heads);
        }
        let cand_enc = c;

        let mut target_ctx = vec![0.0; b * TRIP_FEATURE_DIM];
        for (e, inst) in batch.iter().enumerate() {
            target_ctx[e * TRIP_FEATURE_DIM..(e + 1) * TRIP_FEATURE_DIM]
                .copy_from_slice(&inst.target_ctx);
        }
        let t_in = g.input(&[b, TRIP_FEATURE_DIM], target_ctx);
        let (tw, tb) = dense_params(g, store, "target");
        let f = g.dense(t_in, tw, tb);

        let (cross, cross_core) =
            multi_head_attention(g, store, "cross.attn", cand_enc, trip_enc, &trip_mask, cfg.n_heads);
        let scores = g.row_dot(cross, f);

        ScoreVars {
            scores,
            trip_enc,
            cand_enc,
            cross_core,
            n_candidates,
            n_slots,
        }
    }
}

fn dense_params(g: &mut Graph, store: &ParameterStore, prefix: &str) -> (Var, Var) {
    (
        g.param(store, &format!("{prefix}.w")),
        g.param(store, &format!("{prefix}.b")),
    )
}

fn init_attention(store: &mut ParameterStore, rng: &mut ChaCha8Rng, prefix: &str, d: usize) {
    for part in ["q", "k", "v", "o"] {
        store.init_dense(rng, &format!("{prefix}.{part}"), d, d);
    }
}

fn init_block(store: &mut ParameterStore, rng: &mut ChaCha8Rng, prefix: &str, d: usize) {
    init_attention(store, rng, &format!("{prefix}.attn"), d);
    store.init_layer_norm(&format!("{prefix}.ln1"), d);
    store.init_dense(rng, &format!("{prefix}.ffn.in"), d, 2 * d);
    store.init_dense(rng, &format!("{prefix}.ffn.out"), 2 * d, d);
    store.init_layer_norm(&format!("{prefix}.ln2"), d);
}

/// Start/end position table lookups for every padded slot. Start counts
/// from the first checkin; end counts back from the last real checkin,
/// so every trip's final position reads end row 0. Padded slots read
/// row 0 of both tables and are neutralized by the padding mask.
pub fn positional_indices(lengths: &[usize], trip_len: usize) -> (Vec<usize>, Vec<usize>) {
    let mut start = Vec::with_capacity(lengths.len() * trip_len);
    let mut end = Vec::with_capacity(lengths.len() * trip_len);
    for &len in lengths {
        assert!(len >= 1 && len <= trip_len);
        for p in 0..trip_len {
            if p < len {
                start.push(p);
                end.push(len - 1 - p);
            } else {
                start.push(0);
                end.push(0);
            }
        }
    }
    (start, end)
}

/// Multi-head attention with `q_src` as queries and `kv_src` as keys and
/// values; `key_mask` has one entry per key position. Returns the
/// projected output and the core node carrying attention weights.
/// Queries whose entire key set is masked produce zero rows.
fn multi_head_attention(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    q_src: Var,
    kv_src: Var,
    key_mask: &[f64],
    n_heads: usize,
) -> (Var, Var) {
    let (b, n_q, d) = {
        let s = g.shape(q_src);
        (s[0], s[1], s[2])
    };
    let n_kv = g.shape(kv_src)[1];
    assert_eq!(key_mask.len(), b * n_kv, "key mask length");
    let (wq, bq) = dense_params(g, store, &format!("{prefix}.q"));
    let (wk, bk) = dense_params(g, store, &format!("{prefix}.k"));
    let (wv, bv) = dense_params(g, store, &format!("{prefix}.v"));
    let q = g.dense(q_src, wq, bq);
    let k = g.dense(kv_src, wk, bk);
    let v = g.dense(kv_src, wv, bv);
    let qh = g.split_heads(q, n_heads);
    let kh = g.split_heads(k, n_heads);
    let vh = g.split_heads(v, n_heads);
    let mut head_mask = vec![0.0; b * n_heads * n_kv];
    for bi in 0..b {
        for h in 0..n_heads {
            head_mask[(bi * n_heads + h) * n_kv..(bi * n_heads + h + 1) * n_kv]
                .copy_from_slice(&key_mask[bi * n_kv..(bi + 1) * n_kv]);
        }
    }
    let scale = 1.0 / ((d / n_heads) as f64).sqrt();
    let core = g.attention_core(qh, kh, vh, &head_mask, scale);
    let merged = g.merge_heads(core, n_heads);
    let (wo, bo) = dense_params(g, store, &format!("{prefix}.o"));
    let out = g.dense(merged, wo, bo);
    let mut q_rows = vec![0.0; b * n_q];
    for bi in 0..b {
        if key_mask[bi * n_kv..(bi + 1) * n_kv].iter().any(|&m| m != 0.0) {
            q_rows[bi * n_q..(bi + 1) * n_q].fill(1.0);
        }
    }
    (g.mask_rows(out, &q_rows), core)
}

/// Transformer block with multiplicative residuals: each stage computes
/// LayerNorm(x ⊙ Sublayer(x)), first with masked self-attention, then
/// with a position-wise feed-forward layer (d → 2d → d, ReLU).
fn mul_block(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    x: Var,
    mask: &[f64],
    n_heads: usize,
) -> Var {
    let (attn, _) = multi_head_attention(g, store, &format!("{prefix}.attn"), x, x, mask, n_heads);
    let mixed = g.mul(x, attn);
    let gain1 = g.param(store, &format!("{prefix}.ln1.gain"));
    let shift1 = g.param(store, &format!("{prefix}.ln1.shift"));
    let y = g.layer_norm(mixed, gain1, shift1, LAYER_NORM_EPS);
    let (w1, b1) = dense_params(g, store, &format!("{prefix}.ffn.in"));
    let (w2, b2) = dense_params(g, store, &format!("{prefix}.ffn.out"));
    let hidden = g.dense(y, w1, b1);
    let hidden = g.relu(hidden);
    let ff = g.dense(hidden, w2, b2);
    let mixed2 = g.mul(y, ff);
    let gain2 = g.param(store, &format!("{prefix}.ln2.gain"));
    let shift2 = g.param(store, &format!("{prefix}.ln2.shift"));
    g.layer_norm(mixed2, gain2, shift2, LAYER_NORM_EPS)
}
