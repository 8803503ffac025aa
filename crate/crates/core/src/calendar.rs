//! Wall-clock helpers.
//!
//! Model time is a real number of days since an epoch. The default epoch is a
//! Monday at 00:00 UTC so that the weekly phase `t mod 7` starts on Monday,
//! which is the convention used by recurrent intensities and importance
//! weights.

use chrono::{DateTime, Datelike, NaiveDateTime, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const DAYS_PER_WEEK: f64 = 7.0;

const WEEKDAYS: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalendarError {
    #[error("unparseable timestamp `{0}`")]
    BadTimestamp(String),
    #[error("unparseable weekly phase `{0}` (expected e.g. `Mon 09:00`)")]
    BadPhase(String),
    #[error("unknown weekday `{0}`")]
    BadWeekday(String),
    #[error("unparseable time of day `{0}` (expected HH:MM or HH:MM:SS)")]
    BadTimeOfDay(String),
}

/// Anchor mapping wall-clock instants to model days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub origin: DateTime<Utc>,
}

impl Default for Epoch {
    fn default() -> Self {
        // 2000-01-03 was a Monday.
        Self {
            origin: Utc.with_ymd_and_hms(2000, 1, 3, 0, 0, 0).unwrap(),
        }
    }
}

impl Epoch {
    pub fn new(origin: DateTime<Utc>) -> Self {
        Self { origin }
    }

    pub fn to_days(&self, instant: DateTime<Utc>) -> f64 {
        let delta = instant.signed_duration_since(self.origin);
        let secs = delta.num_seconds() as f64;
        let sub = delta.subsec_nanos() as f64 * 1e-9;
        (secs + sub) / SECONDS_PER_DAY
    }

    pub fn from_days(&self, days: f64) -> DateTime<Utc> {
        let millis = (days * SECONDS_PER_DAY * 1000.0).round() as i64;
        self.origin + chrono::Duration::milliseconds(millis)
    }

    pub fn parse(&self, text: &str) -> Result<f64, CalendarError> {
        Ok(self.to_days(parse_timestamp(text)?))
    }

    pub fn format(&self, days: f64) -> String {
        self.from_days(days).format("%Y-%m-%dT%H:%M:%SZ").to_string()
    }

    /// Like [`Epoch::format`] with milliseconds.
    pub fn format_precise(&self, days: f64) -> String {
        self.from_days(days).format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
    }

    /// Offset (in days) of the epoch from the most recent Monday 00:00, so
    /// that weekly phases stay correct for epochs that are not Mondays.
    pub fn weekly_offset(&self) -> f64 {
        let o = self.origin;
        let dow = o.weekday().num_days_from_monday() as f64;
        dow + (o.num_seconds_from_midnight() as f64) / SECONDS_PER_DAY
    }
}

/// Parses an ISO-8601 timestamp. A missing offset is read as UTC.
pub fn parse_timestamp(text: &str) -> Result<DateTime<Utc>, CalendarError> {
    let trimmed = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(trimmed) {
        return Ok(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(trimmed, fmt) {
            return Ok(Utc.from_utc_datetime(&naive));
        }
    }
    if let Ok(date) = chrono::NaiveDate::parse_from_str(trimmed, "%Y-%m-%d") {
        return Ok(Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).unwrap()));
    }
    Err(CalendarError::BadTimestamp(text.to_string()))
}

/// Weekday index with Monday = 0.
pub fn parse_weekday(text: &str) -> Result<usize, CalendarError> {
    let lower = text.trim().to_ascii_lowercase();
    WEEKDAYS
        .iter()
        .position(|d| lower.starts_with(&d.to_ascii_lowercase()) && lower.len() >= 3)
        .ok_or_else(|| CalendarError::BadWeekday(text.to_string()))
}

pub fn weekday_name(index: usize) -> &'static str {
    WEEKDAYS[index % 7]
}

/// `HH:MM` or `HH:MM:SS` as a fraction of a day. `24:00` is accepted.
pub fn parse_time_of_day(text: &str) -> Result<f64, CalendarError> {
    let bad = || CalendarError::BadTimeOfDay(text.to_string());
    let parts: Vec<&str> = text.trim().split(':').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(bad());
    }
    let h: u32 = parts[0].parse().map_err(|_| bad())?;
    let m: u32 = parts[1].parse().map_err(|_| bad())?;
    let s: f64 = match parts.get(2) {
        Some(p) => p.parse().map_err(|_| bad())?,
        None => 0.0,
    };
    if m >= 60 || !(0.0..60.0).contains(&s) || h > 24 || (h == 24 && (m > 0 || s > 0.0)) {
        return Err(bad());
    }
    Ok((h as f64 * 3600.0 + m as f64 * 60.0 + s) / SECONDS_PER_DAY)
}

/// `"DOW HH:MM"` to days since Monday 00:00.
pub fn parse_phase(text: &str) -> Result<f64, CalendarError> {
    let mut it = text.split_whitespace();
    let (Some(day), Some(time), None) = (it.next(), it.next(), it.next()) else {
        return Err(CalendarError::BadPhase(text.to_string()));
    };
    let dow = parse_weekday(day).map_err(|_| CalendarError::BadPhase(text.to_string()))?;
    let tod = parse_time_of_day(time).map_err(|_| CalendarError::BadPhase(text.to_string()))?;
    Ok(dow as f64 + tod)
}

/// Weekly phase of model time `t` in `[0, 7)`.
pub fn weekly_phase(t: f64) -> f64 {
    t.rem_euclid(DAYS_PER_WEEK)
}

/// Weekday index (Monday = 0) of model time `t`.
pub fn weekday_of(t: f64) -> usize {
    (weekly_phase(t).floor() as usize).min(6)
}

/// Formats a duration in days as `H:MM:SS`, rounding to the nearest second.
pub fn format_hms(days: f64) -> String {
    let total = (days * SECONDS_PER_DAY).round() as i64;
    let (h, rem) = (total / 3600, total % 3600);
    format!("{}:{:02}:{:02}", h, rem / 60, rem % 60)
}

/// Parses `H:MM:SS` into days.
pub fn parse_hms(text: &str) -> Result<f64, CalendarError> {
    let bad = || CalendarError::BadTimeOfDay(text.to_string());
    let parts: Vec<&str> = text.trim().split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let h: f64 = parts[0].parse().map_err(|_| bad())?;
    let m: f64 = parts[1].parse().map_err(|_| bad())?;
    let s: f64 = parts[2].parse().map_err(|_| bad())?;
    Ok((h * 3600.0 + m * 60.0 + s) / SECONDS_PER_DAY)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_epoch_is_a_monday() {
        let e = Epoch::default();
        assert_eq!(e.origin.weekday(), chrono::Weekday::Mon);
        assert_eq!(e.weekly_offset(), 0.0);
    }

    #[test]
    fn phase_parsing() {
        assert_eq!(parse_phase("Mon 00:00").unwrap(), 0.0);
        assert!((parse_phase("Tue 09:00").unwrap() - (1.0 + 9.0 / 24.0)).abs() < 1e-15);
        assert!((parse_phase("sunday 24:00").unwrap() - 7.0).abs() < 1e-15);
        assert!(parse_phase("Funday 09:00").is_err());
        assert!(parse_phase("Mon 25:00").is_err());
    }

    #[test]
    fn timestamps_round_trip() {
        let e = Epoch::default();
        let t = e.parse("2000-11-14T13:43:19Z").unwrap();
        assert_eq!(e.format(t), "2000-11-14T13:43:19Z");
        assert_eq!(weekday_of(t), 1); // a Tuesday
        assert_eq!(e.parse("2000-01-04").unwrap(), 1.0);
    }

    #[test]
    fn hms_formatting() {
        assert_eq!(format_hms(parse_hms("5:15:19").unwrap()), "5:15:19");
        assert_eq!(format_hms(1.0), "24:00:00");
    }
}
