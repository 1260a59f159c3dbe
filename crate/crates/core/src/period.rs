//! Monthly time axis shared by all panels.
//!
//! Every series, monthly or quarterly, lives on a monthly grid: a quarterly
//! observation is stamped with the first month of its quarter. Stamps are
//! canonicalized to `YYYY-MM`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Sampling frequency of a series or panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frequency {
    Monthly,
    Quarterly,
}

impl Frequency {
    /// Number of months between consecutive observations.
    pub fn step_months(self) -> i32 {
        match self {
            Frequency::Monthly => 1,
            Frequency::Quarterly => 3,
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frequency::Monthly => write!(f, "M"),
            Frequency::Quarterly => write!(f, "Q"),
        }
    }
}

/// A calendar month, stored as months since year 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Period(i32);

impl Period {
    /// `month` is 1-based (1 = January).
    pub fn new(year: i32, month: u32) -> Self {
        assert!((1..=12).contains(&month), "month out of range: {month}");
        Period(year * 12 + month as i32 - 1)
    }

    pub fn year(self) -> i32 {
        self.0.div_euclid(12)
    }

    /// 1-based month.
    pub fn month(self) -> u32 {
        (self.0.rem_euclid(12) + 1) as u32
    }

    /// 1-based quarter.
    pub fn quarter(self) -> u32 {
        (self.month() - 1) / 3 + 1
    }

    /// First month of the quarter containing `self`.
    pub fn quarter_start(self) -> Period {
        Period::new(self.year(), (self.quarter() - 1) * 3 + 1)
    }

    /// True for January, April, July, October.
    pub fn is_quarter_start(self) -> bool {
        (self.month() - 1) % 3 == 0
    }

    pub fn add_months(self, n: i32) -> Period {
        Period(self.0 + n)
    }

    pub fn next(self, freq: Frequency) -> Period {
        self.add_months(freq.step_months())
    }

    /// Signed distance in months from `other` to `self`.
    pub fn months_since(self, other: Period) -> i32 {
        self.0 - other.0
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

/// Error parsing a period stamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsePeriodError(pub String);

impl fmt::Display for ParsePeriodError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unparseable period stamp: {:?}", self.0)
    }
}

impl std::error::Error for ParsePeriodError {}

impl FromStr for Period {
    type Err = ParsePeriodError;

    /// Accepts `YYYY-MM`, `YYYY-Qq` (mapped to the quarter's first month)
    /// and `YYYY-MM-DD` (day dropped).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParsePeriodError(s.to_string());
        let mut parts = s.splitn(3, '-');
        let year: i32 = parts
            .next()
            .filter(|y| y.len() == 4)
            .and_then(|y| y.parse().ok())
            .ok_or_else(err)?;
        let second = parts.next().ok_or_else(err)?;
        if let Some(q) = second.strip_prefix(['Q', 'q']) {
            let q: u32 = q.parse().map_err(|_| err())?;
            if !(1..=4).contains(&q) || parts.next().is_some() {
                return Err(err());
            }
            return Ok(Period::new(year, (q - 1) * 3 + 1));
        }
        if second.len() != 2 {
            return Err(err());
        }
        let month: u32 = second.parse().map_err(|_| err())?;
        if !(1..=12).contains(&month) {
            return Err(err());
        }
        if let Some(day) = parts.next() {
            // tolerate a day component, e.g. 2020-03-01
            if day.len() != 2 || day.parse::<u32>().map_err(|_| err())? == 0 {
                return Err(err());
            }
        }
        Ok(Period::new(year, month))
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive period range, e.g. a Covid window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodRange {
    pub start: Period,
    pub end: Period,
}

impl PeriodRange {
    pub fn new(start: Period, end: Period) -> Self {
        assert!(start <= end, "range start after end");
        PeriodRange { start, end }
    }

    pub fn contains(&self, p: Period) -> bool {
        self.start <= p && p <= self.end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_display_parse() {
        let p = Period::new(2020, 3);
        assert_eq!(p.to_string(), "2020-03");
        assert_eq!("2020-03".parse::<Period>().unwrap(), p);
        assert_eq!("2020-Q1".parse::<Period>().unwrap(), Period::new(2020, 1));
        assert_eq!("2020-03-15".parse::<Period>().unwrap(), p);
    }

    #[test]
    fn rejects_garbage() {
        for s in ["2020", "2020-13", "20-03", "2020-Q5", "abcd-ef", "2020-03-xy"] {
            assert!(s.parse::<Period>().is_err(), "accepted {s:?}");
        }
    }

    #[test]
    fn quarter_arithmetic() {
        let p = Period::new(2023, 8);
        assert_eq!(p.quarter(), 3);
        assert_eq!(p.quarter_start(), Period::new(2023, 7));
        assert!(!p.is_quarter_start());
        assert_eq!(p.next(Frequency::Quarterly), Period::new(2023, 11));
        assert_eq!(Period::new(2023, 12).add_months(1), Period::new(2024, 1));
    }
}
