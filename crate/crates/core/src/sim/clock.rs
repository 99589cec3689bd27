//! ISO-8601 durations applied to the virtual clock.

use chrono::{Days, Duration, Months, NaiveDateTime};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{input}` is not an ISO-8601 duration such as P1M or PT15M")]
pub struct DurationError {
    pub input: String,
}

/// A parsed duration. Years and months are calendar units; the rest are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CalendarDuration {
    pub months: u32,
    pub days: u64,
    pub exact: Duration,
}

impl CalendarDuration {
    pub fn parse(input: &str) -> Result<Self, DurationError> {
        let err = || DurationError { input: input.to_owned() };
        if !input.starts_with(['P', 'p']) {
            return Err(err());
        }
        let parsed = iso8601::duration(&input.to_ascii_uppercase()).map_err(|_| err())?;
        Ok(match parsed {
            iso8601::Duration::Weeks(w) => CalendarDuration { days: 7 * u64::from(w), ..Self::default() },
            iso8601::Duration::YMDHMS { year, month, day, hour, minute, second, millisecond } => CalendarDuration {
                months: year * 12 + month,
                days: u64::from(day),
                exact: Duration::hours(i64::from(hour))
                    + Duration::minutes(i64::from(minute))
                    + Duration::seconds(i64::from(second))
                    + Duration::milliseconds(i64::from(millisecond)),
            },
        })
    }

    pub fn is_zero(&self) -> bool {
        self.months == 0 && self.days == 0 && self.exact.is_zero()
    }

    /// `from` moved forward by this duration, clamping month ends
    /// (Jan 31 + P1M is Feb 29 in a leap year).
    pub fn after(&self, from: NaiveDateTime) -> Option<NaiveDateTime> {
        from.checked_add_months(Months::new(self.months))?.checked_add_days(Days::new(self.days))?.checked_add_signed(self.exact)
    }
}
