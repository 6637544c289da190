use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

/// Source of timestamps for transcripts, fingerprints and reports. A fixed
/// clock makes every artifact byte-reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Clock {
    #[default]
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }

    /// RFC 3339 timestamp with second precision.
    pub fn stamp(&self) -> String {
        self.now().to_rfc3339_opts(SecondsFormat::Secs, true)
    }
}

impl std::str::FromStr for Clock {
    type Err = chrono::ParseError;

    /// `system`, or an RFC 3339 timestamp for a fixed clock.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("system") {
            return Ok(Clock::System);
        }
        Ok(Clock::Fixed(DateTime::parse_from_rfc3339(s)?.with_timezone(&Utc)))
    }
}
