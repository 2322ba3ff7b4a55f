use core::fmt;
use core::ops::{Add, AddAssign};
use core::str::FromStr;
use core::time::Duration;

use serde::{Deserialize, Serialize};

/// Offset from the start of a run, in whole microseconds.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond; negative and NaN inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if !(s > 0.0) {
            return SimTime::ZERO;
        }
        SimTime((s * 1e6 + 0.5) as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_since(self, earlier: SimTime) -> Duration {
        Duration::from_micros(self.0.saturating_sub(earlier.0))
    }

    pub fn since_start(self) -> Duration {
        Duration::from_micros(self.0)
    }
}

impl Add<Duration> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Duration) -> SimTime {
        SimTime(self.0.saturating_add(rhs.as_micros() as u64))
    }
}

impl AddAssign<Duration> for SimTime {
    fn add_assign(&mut self, rhs: Duration) {
        *self = *self + rhs;
    }
}

/// Prints seconds with exactly six decimals, derived from the integer
/// microsecond count so the text is stable across platforms.
impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTimeError;

impl fmt::Display for ParseTimeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("expected seconds with at most six decimals")
    }
}

/// Inverse of `Display`; also takes fewer decimals (`"2.5"`) or none.
impl FromStr for SimTime {
    type Err = ParseTimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) if digits(f) => (w, f),
            Some(_) => return Err(ParseTimeError),
            None => (s, ""),
        };
        if !digits(whole) || frac.len() > 6 {
            return Err(ParseTimeError);
        }
        let secs: u64 = whole.parse().map_err(|_| ParseTimeError)?;
        let mut micros = 0u64;
        for (i, b) in frac.bytes().enumerate() {
            micros += u64::from(b - b'0') * 10u64.pow(5 - i as u32);
        }
        secs.checked_mul(1_000_000)
            .and_then(|us| us.checked_add(micros))
            .map(SimTime)
            .ok_or(ParseTimeError)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_is_exact() {
        assert_eq!(SimTime::from_micros(1_500_001).to_string(), "1.500001");
        assert_eq!(SimTime::ZERO.to_string(), "0.000000");
    }

    #[test]
    fn secs_round_trip() {
        assert_eq!(SimTime::from_secs_f64(0.025), SimTime::from_micros(25_000));
        assert_eq!(SimTime::from_secs_f64(-3.0), SimTime::ZERO);
        assert_eq!(SimTime::from_secs(2) + Duration::from_millis(5), SimTime::from_micros(2_005_000));
    }

    #[test]
    fn parse_inverts_display() {
        for us in [0, 1, 999_999, 1_000_000, 12_345_678_901] {
            let t = SimTime::from_micros(us);
            assert_eq!(t.to_string().parse::<SimTime>(), Ok(t));
        }
        assert_eq!("2.5".parse::<SimTime>(), Ok(SimTime::from_millis(2500)));
        assert_eq!("7".parse::<SimTime>(), Ok(SimTime::from_secs(7)));
        for bad in ["", ".5", "1.", "-1", "1.0000001", "1e3", "a.b"] {
            assert!(bad.parse::<SimTime>().is_err(), "{bad}");
        }
    }
}
