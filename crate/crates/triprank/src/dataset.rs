//! Checkin ingestion, trip assembly, vocabularies, splits, and the
//! synthetic corpus generator used for desk-scale verification.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dates::Date;

/// Trips longer than this keep only their most recent checkins, matching
/// the padded trip length of the model.
pub const MAX_TRIP_LEN: usize = 50;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {0}: wrong column count")]
    MalformedRow(usize),
    #[error("line {line}: bad date {value:?}")]
    BadDate { line: usize, value: String },
    #[error("line {line}: empty field {field}")]
    EmptyField { line: usize, field: &'static str },
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("need more than {needed} trips to split, got {got}")]
    TooFewTrips { needed: usize, got: usize },
}

/// One hotel reservation row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkin {
    pub user_id: String,
    pub checkin: Date,
    pub checkout: Date,
    pub city_id: String,
    pub device_class: String,
    pub affiliate_id: String,
    pub booker_country: String,
    pub hotel_country: String,
    pub utrip_id: String,
}

/// A time-ordered sequence of checkins sharing a `utrip_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trip {
    pub utrip_id: String,
    pub checkins: Vec<Checkin>,
}

impl Trip {
    pub fn len(&self) -> usize {
        self.checkins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkins.is_empty()
    }

    pub fn last(&self) -> &Checkin {
        self.checkins.last().expect("trip has at least one checkin")
    }

    /// The trip with its final checkin removed (the evaluation input).
    pub fn prefix(&self) -> Trip {
        Trip {
            utrip_id: self.utrip_id.clone(),
            checkins: self.checkins[..self.checkins.len() - 1].to_vec(),
        }
    }
}

/// Logical field -> CSV header name. Defaults follow the dataset release.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub user_id: String,
    pub checkin: String,
    pub checkout: String,
    pub city_id: String,
    pub device_class: String,
    pub affiliate_id: String,
    pub booker_country: String,
    pub hotel_country: String,
    pub utrip_id: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            user_id: "user_id".into(),
            checkin: "checkin".into(),
            checkout: "checkout".into(),
            city_id: "city_id".into(),
            device_class: "device_class".into(),
            affiliate_id: "affiliate_id".into(),
            booker_country: "booker_country".into(),
            hotel_country: "hotel_country".into(),
            utrip_id: "utrip_id".into(),
        }
    }
}

/// Reads checkins from CSV text with a header row.
pub fn parse_checkins<R: Read>(source: R, columns: &ColumnMap) -> Result<Vec<Checkin>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);

    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let c_user = col(&columns.user_id)?;
    let c_in = col(&columns.checkin)?;
    let c_out = col(&columns.checkout)?;
    let c_city = col(&columns.city_id)?;
    let c_device = col(&columns.device_class)?;
    let c_aff = col(&columns.affiliate_id)?;
    let c_booker = col(&columns.booker_country)?;
    let c_hotel = col(&columns.hotel_country)?;
    let c_trip = col(&columns.utrip_id)?;

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record?;
        if record.len() != headers.len() {
            return Err(DatasetError::MalformedRow(line));
        }
        let field = |idx: usize, name: &'static str| -> Result<String, DatasetError> {
            let v = record.get(idx).unwrap_or("").trim();
            if v.is_empty() {
                Err(DatasetError::EmptyField { line, field: name })
            } else {
                Ok(v.to_string())
            }
        };
        let date = |idx: usize| -> Result<Date, DatasetError> {
            let raw = record.get(idx).unwrap_or("").trim();
            Date::parse_iso(raw).ok_or_else(|| DatasetError::BadDate {
                line,
                value: raw.to_string(),
            })
        };
        out.push(Checkin {
            user_id: field(c_user, "user_id")?,
            checkin: date(c_in)?,
            checkout: date(c_out)?,
            city_id: field(c_city, "city_id")?,
            device_class: field(c_device, "device_class")?,
            affiliate_id: field(c_aff, "affiliate_id")?,
            booker_country: field(c_booker, "booker_country")?,
            hotel_country: field(c_hotel, "hotel_country")?,
            utrip_id: field(c_trip, "utrip_id")?,
        });
    }
    Ok(out)
}

/// Writes checkins in the same CSV format `parse_checkins` reads.
pub fn write_checkins<W: Write>(sink: &mut W, checkins: &[Checkin]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "user_id",
        "checkin",
        "checkout",
        "city_id",
        "device_class",
        "affiliate_id",
        "booker_country",
        "hotel_country",
        "utrip_id",
    ])?;
    for c in checkins {
        w.write_record([
            c.user_id.as_str(),
            &c.checkin.to_iso(),
            &c.checkout.to_iso(),
            c.city_id.as_str(),
            c.device_class.as_str(),
            c.affiliate_id.as_str(),
            c.booker_country.as_str(),
            c.hotel_country.as_str(),
            c.utrip_id.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Groups checkins into trips sorted by checkin date.
///
/// Ties break by checkout date then city id, and the trip list is ordered
/// by `utrip_id`, so the output is independent of input row order. Trips
/// longer than [`MAX_TRIP_LEN`] keep their most recent checkins.
pub fn assemble_trips(checkins: Vec<Checkin>) -> Vec<Trip> {
    let mut groups: HashMap<String, Vec<Checkin>> = HashMap::new();
    for c in checkins {
        groups.entry(c.utrip_id.clone()).or_default().push(c);
    }
    let mut trips: Vec<Trip> = groups
        .into_iter()
        .map(|(utrip_id, mut checkins)| {
            checkins.sort_by(|a, b| {
                (a.checkin, a.checkout, &a.city_id).cmp(&(b.checkin, b.checkout, &b.city_id))
            });
            if checkins.len() > MAX_TRIP_LEN {
                checkins.drain(..checkins.len() - MAX_TRIP_LEN);
            }
            Trip { utrip_id, checkins }
        })
        .collect();
    trips.sort_by(|a, b| a.utrip_id.cmp(&b.utrip_id));
    trips
}

/// Disjoint train/validation/holdout allocation driven only by the seed.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Trip>,
    pub validation: Vec<Trip>,
    pub holdout: Vec<Trip>,
}

pub fn split_dataset(
    trips: Vec<Trip>,
    n_val: usize,
    n_holdout: usize,
    seed: u64,
) -> Result<DatasetSplit, DatasetError> {
    if trips.len() <= n_val + n_holdout {
        return Err(DatasetError::TooFewTrips {
            needed: n_val + n_holdout + 1,
            got: trips.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..trips.len()).collect();
    order.shuffle(&mut rng);

    let mut slots: Vec<Option<Trip>> = trips.into_iter().map(Some).collect();
    let take = |slots: &mut Vec<Option<Trip>>, idxs: &[usize]| -> Vec<Trip> {
        idxs.iter().map(|&i| slots[i].take().unwrap()).collect()
    };
    let validation = take(&mut slots, &order[..n_val]);
    let holdout = take(&mut slots, &order[n_val..n_val + n_holdout]);
    let train = take(&mut slots, &order[n_val + n_holdout..]);
    Ok(DatasetSplit {
        train,
        validation,
        holdout,
    })
}

/// Value <-> dense index map with index 0 reserved for unknown values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    forward: HashMap<String, u32>,
    reverse: Vec<String>,
}

impl Vocab {
    /// Builds a vocab over the distinct values, sorted for determinism.
    pub fn from_values<I: IntoIterator<Item = String>>(values: I) -> Vocab {
        let distinct: BTreeSet<String> = values.into_iter().collect();
        let mut reverse = Vec::with_capacity(distinct.len() + 1);
        reverse.push(String::new()); // index 0 = unknown
        let mut forward = HashMap::with_capacity(distinct.len());
        for v in distinct {
            forward.insert(v.clone(), reverse.len() as u32);
            reverse.push(v);
        }
        Vocab { forward, reverse }
    }

    /// Dense index of a value; 0 when out of vocabulary.
    pub fn index(&self, value: &str) -> u32 {
        self.forward.get(value).copied().unwrap_or(0)
    }

    /// The value at a real index (1..=n_values).
    pub fn value(&self, index: u32) -> Option<&str> {
        if index == 0 {
            None
        } else {
            self.reverse.get(index as usize).map(|s| s.as_str())
        }
    }

    /// Number of real values (excluding the reserved index 0).
    pub fn n_values(&self) -> usize {
        self.reverse.len() - 1
    }

    /// Number of indices including the reserved 0, i.e. table row count.
    pub fn n_indices(&self) -> usize {
        self.reverse.len()
    }

    /// The real values in index order (index 1 first).
    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.reverse.iter().skip(1).map(|s| s.as_str())
    }

    pub fn from_lines(lines: impl IntoIterator<Item = String>) -> Vocab {
        let mut reverse = vec![String::new()];
        let mut forward = HashMap::new();
        for v in lines {
            forward.insert(v.clone(), reverse.len() as u32);
            reverse.push(v);
        }
        Vocab { forward, reverse }
    }
}

/// Vocabularies for the categorical fields. Booker and hotel countries
/// share one vocab because their embeddings share weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabs {
    pub city: Vocab,
    pub country: Vocab,
    pub affiliate: Vocab,
}

pub fn build_vocabs(trips: &[Trip]) -> Vocabs {
    let all = trips.iter().flat_map(|t| t.checkins.iter());
    let city = Vocab::from_values(all.clone().map(|c| c.city_id.clone()));
    let country = Vocab::from_values(
        all.clone()
            .flat_map(|c| [c.booker_country.clone(), c.hotel_country.clone()]),
    );
    let affiliate = Vocab::from_values(all.map(|c| c.affiliate_id.clone()));
    Vocabs {
        city,
        country,
        affiliate,
    }
}

/// Deterministic Markov-chain corpus for desk-scale tests.
///
/// With probability `transition_sharpness` the next city is `(city + 1)
/// mod n_cities`, otherwise uniform over all cities. Countries are
/// assigned by contiguous city blocks.
pub fn generate_synthetic(
    n_trips: usize,
    n_cities: usize,
    n_countries: usize,
    transition_sharpness: f64,
    seed: u64,
) -> Vec<Checkin> {
    assert!(n_cities >= 8, "need at least 8 cities");
    assert!(n_trips >= 1, "need at least one trip");
    assert!((0.0..=1.0).contains(&transition_sharpness));
    let n_countries = n_countries.clamp(1, n_cities);

    let country_of = |city: usize| city * n_countries / n_cities;
    let city_name = |city: usize| format!("c{city:04}");
    let country_name = |ctry: usize| format!("K{ctry:02}");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for t in 0..n_trips {
        let utrip_id = format!("t{t:06}");
        let user_id = format!("u{t:06}");
        let booker = country_name(rng.gen_range(0..n_countries));
        let device = ["desktop", "mobile", "tablet"][rng.gen_range(0..3)];
        let affiliate = format!("a{:02}", rng.gen_range(0..10));
        let len = rng.gen_range(2..=8usize);

        let mut city = rng.gen_range(0..n_cities);
        // Start somewhere in a three-year window.
        let mut date = Date::from_ymd(2016, 1, 1).unwrap().add_days(rng.gen_range(0..1095));
        for _ in 0..len {
            let nights = rng.gen_range(1..=4);
            let checkout = date.add_days(nights);
            out.push(Checkin {
                user_id: user_id.clone(),
                checkin: date,
                checkout,
                city_id: city_name(city),
                device_class: device.to_string(),
                affiliate_id: affiliate.clone(),
                booker_country: booker.clone(),
                hotel_country: country_name(country_of(city)),
                utrip_id: utrip_id.clone(),
            });
            date = checkout;
            city = if rng.gen_bool(transition_sharpness) {
                (city + 1) % n_cities
            } else {
                rng.gen_range(0..n_cities)
            };
        }
    }
    out
}
