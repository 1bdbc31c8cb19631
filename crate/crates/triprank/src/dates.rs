//! Calendar dates as days-since-epoch integers.
//!
//! All date arithmetic downstream (nights, weekday, day-of-year) runs on
//! this integer representation; chrono is only used at the parse/format
//! boundary and for calendar lookups.

use chrono::{Datelike, NaiveDate};

/// A calendar date stored as days since 1970-01-01 (may be negative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Date(pub i32);

impl Date {
    /// Parses an ISO `YYYY-MM-DD` date. Rejects impossible calendar dates.
    pub fn parse_iso(s: &str) -> Option<Date> {
        let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
        Some(Date::from_naive(d))
    }

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Option<Date> {
        NaiveDate::from_ymd_opt(year, month, day).map(Date::from_naive)
    }

    fn from_naive(d: NaiveDate) -> Date {
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
        Date((d - epoch).num_days() as i32)
    }

    fn to_naive(self) -> NaiveDate {
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
        epoch + chrono::Duration::days(self.0 as i64)
    }

    pub fn to_iso(self) -> String {
        self.to_naive().format("%Y-%m-%d").to_string()
    }

    /// Whole days from `self` to `other` (positive when `other` is later).
    pub fn days_until(self, other: Date) -> i32 {
        other.0 - self.0
    }

    pub fn add_days(self, days: i32) -> Date {
        Date(self.0 + days)
    }

    /// Weekday as 0 = Monday .. 6 = Sunday. 1970-01-01 was a Thursday.
    pub fn weekday(self) -> u32 {
        (self.0 + 3).rem_euclid(7) as u32
    }

    pub fn is_weekend(self) -> bool {
        self.weekday() >= 5
    }

    /// Day of year, 1-based (1..=366).
    pub fn day_of_year(self) -> u32 {
        self.to_naive().ordinal()
    }

    pub fn year(self) -> i32 {
        self.to_naive().year()
    }

    /// Month, 1-based (1..=12).
    pub fn month(self) -> u32 {
        self.to_naive().month()
    }
}
