//! Mapping of epoch-second timestamps onto discrete calendar units.

use chrono::{DateTime, Datelike, Timelike};
use serde::{Deserialize, Serialize};

/// A discrete calendar bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TimeUnit {
    /// Hour of day, 0..=23.
    Hour(u8),
    /// ISO-8601 week of year, 1..=53.
    WeekOfYear(u8),
    /// Day of week, 0..=6 with 0 = Sunday.
    Weekday(u8),
}

impl TimeUnit {
    pub fn kind(self) -> UnitKind {
        match self {
            TimeUnit::Hour(_) => UnitKind::Hour,
            TimeUnit::WeekOfYear(_) => UnitKind::Week,
            TimeUnit::Weekday(_) => UnitKind::Weekday,
        }
    }

    pub fn value(self) -> u8 {
        match self {
            TimeUnit::Hour(v) | TimeUnit::WeekOfYear(v) | TimeUnit::Weekday(v) => v,
        }
    }
}

/// The three periodicities the model aggregates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UnitKind {
    Hour,
    Week,
    Weekday,
}

impl UnitKind {
    pub const ALL: [UnitKind; 3] = [UnitKind::Hour, UnitKind::Week, UnitKind::Weekday];

    /// Every unit of this kind in canonical calendar order.
    pub fn domain(self) -> impl Iterator<Item = u8> {
        match self {
            UnitKind::Hour => 0..24,
            UnitKind::Week => 1..54,
            UnitKind::Weekday => 0..7,
        }
    }

    pub fn cardinality(self) -> usize {
        self.domain().count()
    }

    /// Position of `value` within [`UnitKind::domain`].
    pub fn position(self, value: u8) -> usize {
        match self {
            UnitKind::Week => value as usize - 1,
            _ => value as usize,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UnitKind::Hour => "hour",
            UnitKind::Week => "week",
            UnitKind::Weekday => "weekday",
        }
    }

    /// Parameter-name suffix, as in `W_T_h`.
    pub fn symbol(self) -> &'static str {
        match self {
            UnitKind::Hour => "h",
            UnitKind::Week => "w",
            UnitKind::Weekday => "y",
        }
    }
}

/// Converts timestamps to local calendar units under a fixed UTC offset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub tz_offset_minutes: i32,
}

impl Calendar {
    pub fn new(tz_offset_minutes: i32) -> Self {
        Calendar { tz_offset_minutes }
    }

    fn local(&self, t: i64) -> DateTime<chrono::Utc> {
        let shifted = t + i64::from(self.tz_offset_minutes) * 60;
        DateTime::from_timestamp(shifted, 0).expect("timestamp within chrono's supported range")
    }

    pub fn hour(&self, t: i64) -> TimeUnit {
        TimeUnit::Hour(self.local(t).hour() as u8)
    }

    pub fn week(&self, t: i64) -> TimeUnit {
        TimeUnit::WeekOfYear(self.local(t).iso_week().week() as u8)
    }

    pub fn weekday(&self, t: i64) -> TimeUnit {
        TimeUnit::Weekday(self.local(t).weekday().num_days_from_sunday() as u8)
    }

    pub fn unit(&self, kind: UnitKind, t: i64) -> TimeUnit {
        match kind {
            UnitKind::Hour => self.hour(t),
            UnitKind::Week => self.week(t),
            UnitKind::Weekday => self.weekday(t),
        }
    }
}

/// Largest timestamp accepted from input files (year 9999).
pub const MAX_TIMESTAMP: i64 = 253_402_300_799;
pub const MIN_TIMESTAMP: i64 = -62_135_596_800;
