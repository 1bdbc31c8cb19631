//! Engineered numeric features for candidates, trip cities, and the
//! target context, plus the schema artifact downstream checkpoints pin.
//!
//! All functions here are pure over immutable fitted stats and never
//! produce NaN: zero-norm cosines and zero-max normalizations fall back
//! to 0.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use crate::candidates::{transition_chain_scores, CandidateSet, PopularityStats, TransitionMatrix};
use crate::dataset::{Checkin, Trip, Vocabs};

pub const CANDIDATE_FEATURE_DIM: usize = 15;
pub const TRIP_FEATURE_DIM: usize = 23;

/// How many most-recent distinct trip cities feed the equality flags and
/// cosine similarities.
pub const LAST_K: usize = 5;

const NIGHTS_CLIP: f64 = 30.0;

/// Corpus-level feature settings fixed at fit time.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureConfig {
    /// Calendar years backing the 3-slot year one-hot, ascending.
    pub years: Vec<i32>,
}

impl FeatureConfig {
    /// Reads the (at most 3) checkin years present in the trips.
    pub fn from_trips(trips: &[Trip]) -> FeatureConfig {
        let years: BTreeSet<i32> = trips
            .iter()
            .flat_map(|t| t.checkins.iter())
            .map(|c| c.checkin.year())
            .collect();
        FeatureConfig {
            years: years.into_iter().take(3).collect(),
        }
    }

    fn year_slot(&self, year: i32) -> Option<usize> {
        self.years.iter().position(|&y| y == year)
    }
}

/// Per-checkin engineered features, 23 values.
///
/// Layout: nights/30, weekend flag, same-country-as-previous flag,
/// checkin dow/7, checkout dow/7, checkin doy/366, checkout doy/366,
/// booker==hotel flag, 3-slot year one-hot, 12-slot month one-hot.
pub fn trip_city_features(
    checkin: &Checkin,
    previous: Option<&Checkin>,
    cfg: &FeatureConfig,
) -> [f64; TRIP_FEATURE_DIM] {
    let mut f = [0.0; TRIP_FEATURE_DIM];
    let nights = checkin.checkin.days_until(checkin.checkout).max(0) as f64;
    f[0] = nights.min(NIGHTS_CLIP) / NIGHTS_CLIP;
    f[1] = stay_covers_weekend(checkin) as u8 as f64;
    f[2] = previous.map_or(0.0, |p| (p.hotel_country == checkin.hotel_country) as u8 as f64);
    f[3] = checkin.checkin.weekday() as f64 / 7.0;
    f[4] = checkin.checkout.weekday() as f64 / 7.0;
    f[5] = checkin.checkin.day_of_year() as f64 / 366.0;
    f[6] = checkin.checkout.day_of_year() as f64 / 366.0;
    f[7] = (checkin.booker_country == checkin.hotel_country) as u8 as f64;
    if let Some(slot) = cfg.year_slot(checkin.checkin.year()) {
        f[8 + slot] = 1.0;
    }
    f[11 + checkin.checkin.month() as usize - 1] = 1.0;
    f
}

/// True when the stay interval `[checkin, checkout)` touches a Saturday
/// or Sunday. Zero-night stays cover nothing.
fn stay_covers_weekend(checkin: &Checkin) -> bool {
    let nights = checkin.checkin.days_until(checkin.checkout);
    if nights >= 6 {
        return true;
    }
    (0..nights).any(|d| checkin.checkin.add_days(d).is_weekend())
}

/// The 23-value context vector for the masked final checkin: same layout
/// as [`trip_city_features`] with the hotel-country-dependent flags
/// forced to 0, since that field is unknown at prediction time.
pub fn target_context_features(last_checkin: &Checkin, cfg: &FeatureConfig) -> [f64; TRIP_FEATURE_DIM] {
    let mut f = trip_city_features(last_checkin, None, cfg);
    f[2] = 0.0;
    f[7] = 0.0;
    f
}

/// Cosine similarity of two cities' co-occurrence count vectors; 0 when
/// either vector is all-zero.
pub fn cosine_cooccurrence(a: u32, b: u32, stats: &PopularityStats) -> f64 {
    let (va, vb) = match (stats.cooccurrence_vector(a), stats.cooccurrence_vector(b)) {
        (Some(va), Some(vb)) => (va, vb),
        _ => return 0.0,
    };
    let norm = |v: &std::collections::HashMap<u32, u64>| {
        v.values().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
    };
    let (na, nb) = (norm(va), norm(vb));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (small, large) = if va.len() <= vb.len() { (va, vb) } else { (vb, va) };
    let dot: f64 = small
        .iter()
        .filter_map(|(city, &ca)| large.get(city).map(|&cb| ca as f64 * cb as f64))
        .sum();
    dot / (na * nb)
}

/// The most recent distinct trip cities, newest first, at most LAST_K.
fn last_distinct_cities(trip_cities: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(LAST_K);
    for &city in trip_cities.iter().rev() {
        if !out.contains(&city) {
            out.push(city);
            if out.len() == LAST_K {
                break;
            }
        }
    }
    out
}

/// Feature matrix for a whole candidate set, 15 values per candidate.
///
/// Layout per candidate: global popularity, booker-country popularity,
/// month/year popularity, transition-chain score (each log(1+count) then
/// max-normalized over the set), first-trip-city flag, equals-last-k
/// flags (k=1..5), cosine to the last k distinct cities (k=1..5).
pub fn candidate_features(
    candidates: &CandidateSet,
    trip: &Trip,
    matrix: &TransitionMatrix,
    stats: &PopularityStats,
    vocabs: &Vocabs,
    target_month: u32,
    target_year: i32,
) -> Vec<[f64; CANDIDATE_FEATURE_DIM]> {
    let trip_cities: Vec<u32> = trip
        .checkins
        .iter()
        .map(|c| vocabs.city.index(&c.city_id))
        .collect();
    let booker = vocabs.country.index(&trip.checkins[0].booker_country);
    let first_city = trip_cities[0];
    let last = last_distinct_cities(&trip_cities);
    let chain = transition_chain_scores(&trip_cities, matrix);

    let mut rows: Vec<[f64; CANDIDATE_FEATURE_DIM]> = Vec::with_capacity(candidates.len());
    for city in candidates.cities() {
        let mut f = [0.0; CANDIDATE_FEATURE_DIM];
        f[0] = log1p_count(stats.global_count(city));
        f[1] = log1p_count(stats.booker_country_count(booker, city));
        f[2] = log1p_count(stats.month_year_count(city, target_month, target_year));
        f[3] = log1p_count(chain.get(&city).copied().unwrap_or(0));
        f[4] = (city == first_city) as u8 as f64;
        for (k, &last_city) in last.iter().enumerate() {
            f[5 + k] = (city == last_city) as u8 as f64;
            f[10 + k] = cosine_cooccurrence(city, last_city, stats);
        }
        rows.push(f);
    }
    for col in 0..4 {
        max_normalize(&mut rows, col);
    }
    rows
}

fn log1p_count(count: u64) -> f64 {
    (1.0 + count as f64).ln()
}

fn max_normalize(rows: &mut [[f64; CANDIDATE_FEATURE_DIM]], col: usize) {
    let max = rows.iter().map(|r| r[col]).fold(0.0f64, f64::max);
    if max > 0.0 {
        for r in rows.iter_mut() {
            r[col] /= max;
        }
    }
}

/// Canonical description of every feature slot plus the fitted year
/// range. Hashed together with the vocabularies into the schema digest
/// that checkpoints embed.
pub fn feature_schema(cfg: &FeatureConfig) -> String {
    let mut s = String::from("triprank feature schema v1\n");
    let candidate = [
        ("global_popularity", "[0,1]"),
        ("booker_country_popularity", "[0,1]"),
        ("month_year_popularity", "[0,1]"),
        ("transition_chain_score", "[0,1]"),
        ("is_first_trip_city", "{0,1}"),
        ("equals_last_1", "{0,1}"),
        ("equals_last_2", "{0,1}"),
        ("equals_last_3", "{0,1}"),
        ("equals_last_4", "{0,1}"),
        ("equals_last_5", "{0,1}"),
        ("cosine_last_1", "[0,1]"),
        ("cosine_last_2", "[0,1]"),
        ("cosine_last_3", "[0,1]"),
        ("cosine_last_4", "[0,1]"),
        ("cosine_last_5", "[0,1]"),
    ];
    for (i, (name, range)) in candidate.iter().enumerate() {
        s.push_str(&format!("candidate {i} {name} {range}\n"));
    }
    let mut trip: Vec<(String, &str)> = vec![
        ("n_nights".into(), "[0,1]"),
        ("weekend".into(), "{0,1}"),
        ("same_country_as_previous".into(), "{0,1}"),
        ("checkin_day_of_week".into(), "[0,1)"),
        ("checkout_day_of_week".into(), "[0,1)"),
        ("checkin_day_of_year".into(), "(0,1]"),
        ("checkout_day_of_year".into(), "(0,1]"),
        ("booker_equals_hotel_country".into(), "{0,1}"),
    ];
    for slot in 0..3 {
        trip.push((format!("year_{slot}"), "{0,1}"));
    }
    for month in 1..=12 {
        trip.push((format!("month_{month:02}"), "{0,1}"));
    }
    for (i, (name, range)) in trip.iter().enumerate() {
        s.push_str(&format!("trip {i} {name} {range}\n"));
    }
    s.push_str("target layout = trip layout with slots 2 and 7 forced to 0\n");
    let years: Vec<String> = cfg.years.iter().map(|y| y.to_string()).collect();
    s.push_str(&format!("years {}\n", years.join(",")));
    s
}

/// SHA-256 over the schema text and the vocabulary contents. A model
/// checkpoint is only valid against data with the identical digest.
pub fn schema_hash(cfg: &FeatureConfig, vocabs: &Vocabs) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(feature_schema(cfg).as_bytes());
    for (name, vocab) in [
        ("city", &vocabs.city),
        ("country", &vocabs.country),
        ("affiliate", &vocabs.affiliate),
    ] {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        for value in vocab.values() {
            hasher.update(value.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update([0xff]);
    }
    hasher.finalize().into()
}

pub fn hash_hex(hash: &[u8; 32]) -> String {
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::{fit_popularity_stats, fit_transition_matrix, CandidateSet, Source};
    use crate::dataset::{assemble_trips, build_vocabs, generate_synthetic};
    use crate::dates::Date;

    fn checkin_on(city: &str, iso_in: &str, iso_out: &str) -> Checkin {
        Checkin {
            user_id: "u".into(),
            checkin: Date::parse_iso(iso_in).unwrap(),
            checkout: Date::parse_iso(iso_out).unwrap(),
            city_id: city.into(),
            device_class: "desktop".into(),
            affiliate_id: "a".into(),
            booker_country: "X".into(),
            hotel_country: "Y".into(),
            utrip_id: "t".into(),
        }
    }

    fn cfg_2016() -> FeatureConfig {
        FeatureConfig {
            years: vec![2016, 2017, 2018],
        }
    }

    #[test]
    fn monday_to_wednesday_stay() {
        // 2016-08-01 was a Monday.
        let c = checkin_on("A", "2016-08-01", "2016-08-03");
        let f = trip_city_features(&c, None, &cfg_2016());
        assert!((f[0] - 2.0 / 30.0).abs() < 1e-15);
        assert_eq!(f[1], 0.0, "Mon-Wed stay has no weekend day");
        assert_eq!(f[8], 1.0, "year slot 2016");
        assert_eq!(f[11 + 7], 1.0, "August one-hot");
        assert_eq!(f[3], 0.0, "Monday checkin");
        assert!((f[4] - 2.0 / 7.0).abs() < 1e-15, "Wednesday checkout");
        assert!((f[5] - 214.0 / 366.0).abs() < 1e-15, "Aug 1 is day 214 of 2016");
    }

    #[test]
    fn friday_to_monday_covers_weekend() {
        let c = checkin_on("A", "2016-08-05", "2016-08-08");
        let f = trip_city_features(&c, None, &cfg_2016());
        assert_eq!(f[1], 1.0);
        // Saturday-to-Sunday single night also counts.
        let c = checkin_on("A", "2016-08-06", "2016-08-07");
        assert_eq!(trip_city_features(&c, None, &cfg_2016())[1], 1.0);
        // Zero-night stay covers nothing, even on a Saturday.
        let c = checkin_on("A", "2016-08-06", "2016-08-06");
        assert_eq!(trip_city_features(&c, None, &cfg_2016())[1], 0.0);
    }

    #[test]
    fn same_country_flag_needs_a_previous_checkin() {
        let prev = checkin_on("A", "2016-08-01", "2016-08-03");
        let mut cur = checkin_on("B", "2016-08-03", "2016-08-05");
        assert_eq!(trip_city_features(&cur, None, &cfg_2016())[2], 0.0);
        assert_eq!(trip_city_features(&cur, Some(&prev), &cfg_2016())[2], 1.0);
        cur.hotel_country = "Z".into();
        assert_eq!(trip_city_features(&cur, Some(&prev), &cfg_2016())[2], 0.0);
    }

    #[test]
    fn nights_clip_at_thirty() {
        let c = checkin_on("A", "2016-01-01", "2016-03-01");
        assert_eq!(trip_city_features(&c, None, &cfg_2016())[0], 1.0);
    }

    #[test]
    fn out_of_range_year_leaves_one_hot_empty() {
        let c = checkin_on("A", "2020-02-03", "2020-02-04");
        let f = trip_city_features(&c, None, &cfg_2016());
        assert_eq!(f[8] + f[9] + f[10], 0.0);
        assert_eq!(f[11..].iter().sum::<f64>(), 1.0, "month one-hot still set");
    }

    #[test]
    fn target_context_masks_country_flags() {
        let mut c = checkin_on("A", "2016-08-01", "2016-08-03");
        c.booker_country = "Y".into(); // would set booker==hotel
        let trip = trip_city_features(&c, Some(&c.clone()), &cfg_2016());
        let target = target_context_features(&c, &cfg_2016());
        assert_eq!(target.len(), TRIP_FEATURE_DIM);
        assert_eq!(target[2], 0.0);
        assert_eq!(target[7], 0.0);
        assert_eq!(trip[7], 1.0);
        for i in [0, 1, 3, 4, 5, 6] {
            assert_eq!(target[i], trip[i], "date-derived slot {i} must match");
        }
    }

    #[test]
    fn cosine_matches_direct_arithmetic() {
        // Build a corpus where cooc vectors over {A,B,C,D} are easy to
        // read off: each pair-trip adds 1 to both directions.
        let trips = vec![
            trip_pair("t1", "A", "B"),
            trip_pair("t2", "A", "C"),
            trip_pair("t3", "A", "C"),
            trip_pair("t4", "B", "C"),
            trip_pair("t5", "B", "C"),
            trip_pair("t6", "B", "D"),
            trip_pair("t7", "A", "D"),
            trip_pair("t8", "A", "D"),
        ];
        let vocabs = build_vocabs(&trips);
        let stats = fit_popularity_stats(&trips, &vocabs);
        let (a, b) = (vocabs.city.index("A"), vocabs.city.index("B"));
        // v_A over (B,C,D) = (1,2,2); v_B over (A,C,D) = (1,2,1).
        // dot over shared coordinates: C: 2*2 + D: 2*1 = 6.
        let expected = 6.0 / ((1.0f64 + 4.0 + 4.0).sqrt() * (1.0f64 + 4.0 + 1.0).sqrt());
        let got = cosine_cooccurrence(a, b, &stats);
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
        // Identical non-zero vectors give exactly 1.
        assert!((cosine_cooccurrence(a, a, &stats) - 1.0).abs() < 1e-12);
        // Unseen city: zero vector.
        assert_eq!(cosine_cooccurrence(a, 0, &stats), 0.0);
    }

    fn trip_pair(utrip: &str, x: &str, y: &str) -> Trip {
        let mut a = checkin_on(x, "2016-08-01", "2016-08-02");
        let mut b = checkin_on(y, "2016-08-02", "2016-08-03");
        a.utrip_id = utrip.into();
        b.utrip_id = utrip.into();
        Trip {
            utrip_id: utrip.into(),
            checkins: vec![a, b],
        }
    }

    #[test]
    fn hand_sized_cosine_example() {
        // Vectors (1,2,0) and (2,1,0) over three coordinates: 4/5.
        let trips = vec![
            trip_pair("t1", "A", "P"),
            trip_pair("t2", "A", "Q"),
            trip_pair("t3", "A", "Q"),
            trip_pair("t4", "B", "P"),
            trip_pair("t5", "B", "P"),
            trip_pair("t6", "B", "Q"),
        ];
        let vocabs = build_vocabs(&trips);
        let stats = fit_popularity_stats(&trips, &vocabs);
        let got = cosine_cooccurrence(vocabs.city.index("A"), vocabs.city.index("B"), &stats);
        assert!((got - 0.8).abs() < 1e-12, "got {got}");
    }

    fn small_world() -> (Vec<Trip>, Vocabs) {
        let trips = assemble_trips(generate_synthetic(120, 10, 2, 0.7, 77));
        let vocabs = build_vocabs(&trips);
        (trips, vocabs)
    }

    #[test]
    fn candidate_features_flags_and_normalization() {
        let (trips, vocabs) = small_world();
        let matrix = fit_transition_matrix(&trips, &vocabs);
        let stats = fit_popularity_stats(&trips, &vocabs);
        let trip = &trips[0];
        let first = vocabs.city.index(&trip.checkins[0].city_id);
        let last = vocabs.city.index(&trip.last().city_id);
        let set = CandidateSet {
            entries: (1..=10u32).map(|c| (c, Source::GlobalTop)).collect(),
        };
        let rows = candidate_features(&set, trip, &matrix, &stats, &vocabs, 8, 2016);
        assert_eq!(rows.len(), 10);
        for (row, city) in rows.iter().zip(set.cities()) {
            assert_eq!(row[4], (city == first) as u8 as f64);
            assert_eq!(row[5], (city == last) as u8 as f64);
            for v in row.iter() {
                assert!(v.is_finite());
                assert!(*v >= 0.0 && *v <= 1.0, "feature {v} out of [0,1]");
            }
        }
        // Max-normalized columns attain 1 somewhere.
        for col in [0usize, 3] {
            let max = rows.iter().map(|r| r[col]).fold(0.0f64, f64::max);
            assert!((max - 1.0).abs() < 1e-12, "column {col} max {max}");
        }
        // Self-cosine of the last city is exactly 1 when its vector is non-empty.
        let last_row = rows.iter().zip(set.cities()).find(|(_, c)| *c == last).unwrap().0;
        assert_eq!(last_row[5], 1.0);
        assert!((last_row[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unseen_candidate_has_zero_counts() {
        let (trips, vocabs) = small_world();
        let matrix = fit_transition_matrix(&trips, &vocabs);
        let stats = fit_popularity_stats(&[], &vocabs); // empty stats
        let empty_matrix = fit_transition_matrix(&[], &vocabs);
        let trip = &trips[0];
        let set = CandidateSet {
            entries: vec![(0, Source::GlobalTop)], // OOV city
        };
        let rows = candidate_features(&set, trip, &empty_matrix, &stats, &vocabs, 8, 2016);
        for col in 0..4 {
            assert_eq!(rows[0][col], 0.0);
        }
        for k in 0..LAST_K {
            assert_eq!(rows[0][10 + k], 0.0);
        }
        let _ = matrix;
    }

    #[test]
    fn last_k_slots_use_distinct_cities_newest_first() {
        assert_eq!(last_distinct_cities(&[1, 2, 1, 3]), vec![3, 1, 2]);
        assert_eq!(last_distinct_cities(&[7]), vec![7]);
        assert_eq!(
            last_distinct_cities(&[1, 2, 3, 4, 5, 6, 7]),
            vec![7, 6, 5, 4, 3]
        );
    }

    #[test]
    fn schema_hash_tracks_vocab_and_years() {
        let (trips, vocabs) = small_world();
        let cfg = FeatureConfig::from_trips(&trips);
        let h1 = schema_hash(&cfg, &vocabs);
        let h2 = schema_hash(&cfg, &vocabs);
        assert_eq!(h1, h2);
        let other_cfg = FeatureConfig { years: vec![1999] };
        assert_ne!(h1, schema_hash(&other_cfg, &vocabs));
        let other_vocabs = build_vocabs(&trips[..5].to_vec());
        assert_ne!(h1, schema_hash(&cfg, &other_vocabs));
        let text = feature_schema(&cfg);
        assert!(text.contains("candidate 3 transition_chain_score"));
        assert!(text.contains("trip 0 n_nights"));
        assert_eq!(hash_hex(&h1).len(), 64);
    }

    #[test]
    fn year_config_reads_training_years() {
        let (trips, _) = small_world();
        let cfg = FeatureConfig::from_trips(&trips);
        assert!(!cfg.years.is_empty() && cfg.years.len() <= 3);
        let mut sorted = cfg.years.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, cfg.years);
    }
}
