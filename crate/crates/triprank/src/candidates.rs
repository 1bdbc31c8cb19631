//! Counting models and the quota cascade that assembles a fixed-size
//! candidate pool per trip.
//!
//! Everything here works on dense vocab indices. Fitted structures are
//! immutable after construction; `assemble_candidates` is pure.

use std::collections::HashMap;

use thiserror::Error;

use crate::dataset::{Trip, Vocabs};

#[derive(Debug, Error)]
pub enum CandidateError {
    #[error("no trips with length >= 2 to score")]
    EmptyInput,
}

/// Which counting model first contributed a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    TripCity,
    TransitionChain,
    BookerTripCountryTop,
    LastCityCountryTop,
    BookerCountryTop,
    GlobalTop,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::TripCity => "TripCity",
            Source::TransitionChain => "TransitionChain",
            Source::BookerTripCountryTop => "BookerTripCountryTop",
            Source::LastCityCountryTop => "LastCityCountryTop",
            Source::BookerCountryTop => "BookerCountryTop",
            Source::GlobalTop => "GlobalTop",
        }
    }
}

/// Quota boundaries for the candidate fill cascade.
#[derive(Debug, Clone, Copy)]
pub struct CandidateConfig {
    /// TransitionChain predictions fill the set up to this size.
    pub chain_quota: usize,
    /// BookerTripCountryTop fills up to this size.
    pub booker_trip_quota: usize,
    /// Hard cap; the remaining models fill up to this size.
    pub limit: usize,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig {
            chain_quota: 150,
            booker_trip_quota: 350,
            limit: 500,
        }
    }
}

/// Sparse transition counts: row = earlier trip city, column = final city.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    rows: Vec<HashMap<u32, u64>>,
}

impl TransitionMatrix {
    pub fn n_cities(&self) -> usize {
        self.rows.len()
    }

    pub fn count(&self, from: u32, to: u32) -> u64 {
        self.rows
            .get(from as usize)
            .and_then(|row| row.get(&to).copied())
            .unwrap_or(0)
    }
}

/// City index sequence of a trip under a fixed vocab.
pub fn trip_city_indices(trip: &Trip, vocabs: &Vocabs) -> Vec<u32> {
    trip.checkins
        .iter()
        .map(|c| vocabs.city.index(&c.city_id))
        .collect()
}

/// Counts (earlier city, final city) pairs over all trips. Cities that
/// repeat before the final position are counted with multiplicity.
pub fn fit_transition_matrix<'a, I>(trips: I, vocabs: &Vocabs) -> TransitionMatrix
where
    I: IntoIterator<Item = &'a Trip>,
{
    let mut rows = vec![HashMap::new(); vocabs.city.n_indices()];
    for trip in trips {
        let cities = trip_city_indices(trip, vocabs);
        if cities.len() < 2 {
            continue;
        }
        let last = *cities.last().unwrap();
        for &city in &cities[..cities.len() - 1] {
            *rows[city as usize].entry(last).or_insert(0) += 1;
        }
    }
    TransitionMatrix { rows }
}

/// Sums the matrix rows of every trip city (with multiplicity).
pub fn transition_chain_scores(trip_cities: &[u32], matrix: &TransitionMatrix) -> HashMap<u32, u64> {
    let mut scores: HashMap<u32, u64> = HashMap::new();
    for &city in trip_cities {
        if let Some(row) = matrix.rows.get(city as usize) {
            for (&to, &count) in row {
                *scores.entry(to).or_insert(0) += count;
            }
        }
    }
    scores
}

/// Cities ordered by descending score, ascending city index on ties.
/// Zero-score cities are not predictions and are excluded.
pub fn ranked_predictions(scores: &HashMap<u32, u64>) -> Vec<u32> {
    let mut ranked: Vec<(u32, u64)> = scores
        .iter()
        .filter(|(_, &count)| count > 0)
        .map(|(&city, &count)| (city, count))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().map(|(city, _)| city).collect()
}

fn rank_counts(counts: &HashMap<u32, u64>) -> Vec<u32> {
    let mut ranked: Vec<(u32, u64)> = counts.iter().map(|(&c, &n)| (c, n)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().map(|(city, _)| city).collect()
}

/// Fitted popularity tables and co-occurrence vectors.
#[derive(Debug, Clone, Default)]
pub struct PopularityStats {
    global_counts: HashMap<u32, u64>,
    global_top: Vec<u32>,
    booker_counts: HashMap<u32, HashMap<u32, u64>>,
    booker_top: HashMap<u32, Vec<u32>>,
    last_city_country_top: HashMap<u32, Vec<u32>>,
    booker_trip_country_top: HashMap<(u32, u32), Vec<u32>>,
    month_year_counts: HashMap<(u32, u32, i32), u64>,
    cooccurrence: HashMap<u32, HashMap<u32, u64>>,
    /// Majority hotel country per city (ties to the lower country index).
    city_country: HashMap<u32, u32>,
}

impl PopularityStats {
    pub fn global_top(&self) -> &[u32] {
        &self.global_top
    }

    pub fn global_count(&self, city: u32) -> u64 {
        self.global_counts.get(&city).copied().unwrap_or(0)
    }

    pub fn booker_country_top(&self, booker: u32) -> &[u32] {
        self.booker_top.get(&booker).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn booker_country_count(&self, booker: u32, city: u32) -> u64 {
        self.booker_counts
            .get(&booker)
            .and_then(|m| m.get(&city).copied())
            .unwrap_or(0)
    }

    pub fn last_city_country_top(&self, country: u32) -> &[u32] {
        self.last_city_country_top
            .get(&country)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn booker_trip_country_top(&self, booker: u32, trip_country: u32) -> &[u32] {
        self.booker_trip_country_top
            .get(&(booker, trip_country))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn month_year_count(&self, city: u32, month: u32, year: i32) -> u64 {
        self.month_year_counts
            .get(&(city, month, year))
            .copied()
            .unwrap_or(0)
    }

    pub fn cooccurrence_vector(&self, city: u32) -> Option<&HashMap<u32, u64>> {
        self.cooccurrence.get(&city)
    }

    pub fn cooccurrence_count(&self, a: u32, b: u32) -> u64 {
        self.cooccurrence
            .get(&a)
            .and_then(|m| m.get(&b).copied())
            .unwrap_or(0)
    }

    /// Hotel country of a city as seen in the fitting data; 0 if unseen.
    pub fn country_of_city(&self, city: u32) -> u32 {
        self.city_country.get(&city).copied().unwrap_or(0)
    }
}

/// Counts the popularity tables of the candidate models.
///
/// Last-city tables are keyed by the hotel country of the penultimate
/// checkin, so the masked target's own country is never consulted.
pub fn fit_popularity_stats<'a, I>(trips: I, vocabs: &Vocabs) -> PopularityStats
where
    I: IntoIterator<Item = &'a Trip>,
{
    let mut global: HashMap<u32, u64> = HashMap::new();
    let mut booker: HashMap<u32, HashMap<u32, u64>> = HashMap::new();
    let mut last_by_country: HashMap<u32, HashMap<u32, u64>> = HashMap::new();
    let mut last_by_booker_country: HashMap<(u32, u32), HashMap<u32, u64>> = HashMap::new();
    let mut month_year: HashMap<(u32, u32, i32), u64> = HashMap::new();
    let mut cooc: HashMap<u32, HashMap<u32, u64>> = HashMap::new();
    let mut city_country_counts: HashMap<u32, HashMap<u32, u64>> = HashMap::new();

    for trip in trips {
        let cities = trip_city_indices(trip, vocabs);
        let booker_country = vocabs.country.index(&trip.checkins[0].booker_country);
        for (checkin, &city) in trip.checkins.iter().zip(&cities) {
            *global.entry(city).or_insert(0) += 1;
            *booker
                .entry(booker_country)
                .or_default()
                .entry(city)
                .or_insert(0) += 1;
            *month_year
                .entry((city, checkin.checkin.month(), checkin.checkin.year()))
                .or_insert(0) += 1;
            let hotel = vocabs.country.index(&checkin.hotel_country);
            *city_country_counts
                .entry(city)
                .or_default()
                .entry(hotel)
                .or_insert(0) += 1;
        }
        if cities.len() >= 2 {
            let last_city = *cities.last().unwrap();
            let penultimate = &trip.checkins[trip.checkins.len() - 2];
            let prev_country = vocabs.country.index(&penultimate.hotel_country);
            *last_by_country
                .entry(prev_country)
                .or_default()
                .entry(last_city)
                .or_insert(0) += 1;
            *last_by_booker_country
                .entry((booker_country, prev_country))
                .or_default()
                .entry(last_city)
                .or_insert(0) += 1;
        }
        // Unordered distinct pairs, once per trip.
        let mut distinct: Vec<u32> = cities.clone();
        distinct.sort_unstable();
        distinct.dedup();
        for (i, &a) in distinct.iter().enumerate() {
            for &b in &distinct[i + 1..] {
                *cooc.entry(a).or_default().entry(b).or_insert(0) += 1;
                *cooc.entry(b).or_default().entry(a).or_insert(0) += 1;
            }
        }
    }

    let city_country = city_country_counts
        .into_iter()
        .map(|(city, counts)| {
            let mut best: Vec<(u32, u64)> = counts.into_iter().collect();
            best.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            (city, best[0].0)
        })
        .collect();

    PopularityStats {
        global_top: rank_counts(&global),
        global_counts: global,
        booker_top: booker.iter().map(|(&k, v)| (k, rank_counts(v))).collect(),
        booker_counts: booker,
        last_city_country_top: last_by_country
            .iter()
            .map(|(&k, v)| (k, rank_counts(v)))
            .collect(),
        booker_trip_country_top: last_by_booker_country
            .iter()
            .map(|(&k, v)| (k, rank_counts(v)))
            .collect(),
        month_year_counts: month_year,
        cooccurrence: cooc,
        city_country,
    }
}

/// The ordered, deduplicated candidate pool with source provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub entries: Vec<(u32, Source)>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cities(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|&(c, _)| c)
    }

    pub fn contains(&self, city: u32) -> bool {
        self.entries.iter().any(|&(c, _)| c == city)
    }

    /// Debug dump: city_id, source_tag, rank.
    pub fn to_csv(&self, vocabs: &Vocabs) -> String {
        let mut out = String::from("city_id,source_tag,rank\n");
        for (rank, &(city, source)) in self.entries.iter().enumerate() {
            let id = vocabs.city.value(city).unwrap_or("<unk>");
            out.push_str(&format!("{},{},{}\n", id, source.as_str(), rank + 1));
        }
        out
    }
}

/// Fills the candidate pool: trip cities first, then each counting model
/// up to its quota boundary. Returned short when the models run dry; the
/// set is never padded with arbitrary cities.
pub fn assemble_candidates(
    trip: &Trip,
    matrix: &TransitionMatrix,
    stats: &PopularityStats,
    vocabs: &Vocabs,
    cfg: &CandidateConfig,
) -> CandidateSet {
    let cities = trip_city_indices(trip, vocabs);
    let booker = vocabs.country.index(&trip.checkins[0].booker_country);
    // At query time the whole trip is the known prefix, so the trip
    // country is read from its final checkin.
    let trip_country = vocabs.country.index(&trip.last().hotel_country);

    let mut entries: Vec<(u32, Source)> = Vec::new();
    let mut seen = vec![false; vocabs.city.n_indices()];
    let push_all = |entries: &mut Vec<(u32, Source)>,
                        seen: &mut Vec<bool>,
                        cities: &mut dyn Iterator<Item = u32>,
                        source: Source,
                        budget: usize| {
        for city in cities {
            if entries.len() >= budget {
                break;
            }
            if !seen[city as usize] {
                seen[city as usize] = true;
                entries.push((city, source));
            }
        }
    };

    push_all(&mut entries, &mut seen, &mut cities.iter().copied(), Source::TripCity, cfg.limit);

    let chain = ranked_predictions(&transition_chain_scores(&cities, matrix));
    push_all(
        &mut entries,
        &mut seen,
        &mut chain.into_iter(),
        Source::TransitionChain,
        cfg.chain_quota.min(cfg.limit),
    );
    push_all(
        &mut entries,
        &mut seen,
        &mut stats.booker_trip_country_top(booker, trip_country).iter().copied(),
        Source::BookerTripCountryTop,
        cfg.booker_trip_quota.min(cfg.limit),
    );
    push_all(
        &mut entries,
        &mut seen,
        &mut stats.last_city_country_top(trip_country).iter().copied(),
        Source::LastCityCountryTop,
        cfg.limit,
    );
    push_all(
        &mut entries,
        &mut seen,
        &mut stats.booker_country_top(booker).iter().copied(),
        Source::BookerCountryTop,
        cfg.limit,
    );
    push_all(
        &mut entries,
        &mut seen,
        &mut stats.global_top().iter().copied(),
        Source::GlobalTop,
        cfg.limit,
    );

    CandidateSet { entries }
}

/// Fraction of trips whose true last city shows up in the candidate set
/// built from the prefix. Trips shorter than 2 checkins are skipped.
pub fn candidate_recall<F>(trips: &[Trip], vocabs: &Vocabs, builder: F) -> Result<f64, CandidateError>
where
    F: Fn(&Trip) -> CandidateSet,
{
    let mut hits = 0usize;
    let mut total = 0usize;
    for trip in trips {
        if trip.len() < 2 {
            continue;
        }
        let truth = vocabs.city.index(&trip.last().city_id);
        let set = builder(&trip.prefix());
        total += 1;
        if set.contains(truth) {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(CandidateError::EmptyInput);
    }
    Ok(hits as f64 / total as f64)
}
