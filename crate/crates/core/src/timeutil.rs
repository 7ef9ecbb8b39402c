//! UTC timestamps (seconds since the Unix epoch) and calendar-day helpers.

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Seconds since the Unix epoch, UTC.
pub type Timestamp = f64;

pub fn day_start(day: NaiveDate) -> Timestamp {
    day.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp() as f64
}

pub fn day_end(day: NaiveDate) -> Timestamp {
    day_start(day) + SECONDS_PER_DAY
}

/// UTC calendar day containing `t`.
pub fn day_of(t: Timestamp) -> NaiveDate {
    datetime_of(t).date()
}

pub fn datetime_of(t: Timestamp) -> NaiveDateTime {
    let secs = t.floor();
    let nanos = ((t - secs) * 1e9).round().min(999_999_999.0) as u32;
    DateTime::from_timestamp(secs as i64, nanos).expect("timestamp in range").naive_utc()
}

/// Hour of day (0..24) containing `t`.
pub fn hour_of(t: Timestamp) -> u32 {
    datetime_of(t).hour()
}

pub fn day_of_year(t: Timestamp) -> u32 {
    datetime_of(t).ordinal()
}

/// ISO-8601 rendering with second precision, e.g. `2022-05-18T07:00:00Z`.
pub fn iso8601(t: Timestamp) -> String {
    datetime_of(t).format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Inclusive day range iterator.
pub fn days_inclusive(first: NaiveDate, last: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    first.iter_days().take_while(move |d| *d <= last)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn day_boundaries() {
        let d = NaiveDate::from_ymd_opt(2022, 5, 18).unwrap();
        let t = day_start(d);
        assert_eq!(day_of(t), d);
        assert_eq!(day_of(t - 0.5), d.pred_opt().unwrap());
        assert_eq!(day_of(day_end(d)), d.succ_opt().unwrap());
        assert_eq!(iso8601(t + 7.0 * 3600.0), "2022-05-18T07:00:00Z");
        assert_eq!(hour_of(t + 7.0 * 3600.0 + 0.5), 7);
    }
}
