//! Possibly truncated ISO-8601 dates and calendar months.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid date {0:?}")]
pub struct DateError(pub String);

/// `2025`, `2025-03` or `2025-03-14`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartialDate {
    pub year: i32,
    pub month: Option<u8>,
    pub day: Option<u8>,
}

impl PartialDate {
    pub fn full(date: NaiveDate) -> Self {
        Self { year: date.year(), month: Some(date.month() as u8), day: Some(date.day() as u8) }
    }

    pub fn as_full(&self) -> Option<NaiveDate> {
        NaiveDate::from_ymd_opt(self.year, self.month? as u32, self.day? as u32)
    }

    pub fn year_month(&self) -> Option<YearMonth> {
        self.month.map(|m| YearMonth { year: self.year, month: m })
    }

    pub fn is_full(&self) -> bool {
        self.day.is_some()
    }
}

impl FromStr for PartialDate {
    type Err = DateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DateError(s.to_string());
        let parts: Vec<&str> = s.trim().split('-').collect();
        let num = |p: &str, len: usize| {
            if p.len() != len || !p.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            p.parse::<u32>().map_err(|_| bad())
        };
        let year = num(parts[0], 4)? as i32;
        match parts.len() {
            1 => Ok(Self { year, month: None, day: None }),
            2 => {
                let month = num(parts[1], 2)?;
                if !(1..=12).contains(&month) {
                    return Err(bad());
                }
                Ok(Self { year, month: Some(month as u8), day: None })
            }
            3 => {
                let (month, day) = (num(parts[1], 2)?, num(parts[2], 2)?);
                let date = NaiveDate::from_ymd_opt(year, month, day).ok_or_else(bad)?;
                Ok(Self::full(date))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for PartialDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}", self.year)?;
        if let Some(m) = self.month {
            write!(f, "-{m:02}")?;
            if let Some(d) = self.day {
                write!(f, "-{d:02}")?;
            }
        }
        Ok(())
    }
}

pub fn parse_full_date(s: &str) -> Result<NaiveDate, DateError> {
    let d: PartialDate = s.parse()?;
    d.as_full().ok_or_else(|| DateError(s.to_string()))
}

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    pub fn of(date: NaiveDate) -> Self {
        Self { year: date.year(), month: date.month() as u8 }
    }

    /// Months since year 0, so that differences count month boundaries.
    pub fn index(&self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_index(i: i64) -> Self {
        Self { year: i.div_euclid(12) as i32, month: (i.rem_euclid(12) + 1) as u8 }
    }

    pub fn add_months(&self, n: i64) -> Self {
        Self::from_index(self.index() + n)
    }

    pub fn first_day(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month as u32, 1).expect("valid month")
    }

    pub fn days(&self) -> u32 {
        let next = self.add_months(1).first_day();
        (next - self.first_day()).num_days() as u32
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = DateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let d: PartialDate = s.parse()?;
        match (d.month, d.day) {
            (Some(month), None) => Ok(Self { year: d.year, month }),
            _ => Err(DateError(s.to_string())),
        }
    }
}
