//! Integer virtual time.

use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

pub const MICROS_PER_SEC: u64 = 1_000_000;

/// Virtual time in whole microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(micros: u64) -> Self {
        SimTime(micros)
    }

    pub const fn from_secs(secs: u64) -> Self {
        SimTime(secs * MICROS_PER_SEC)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    pub fn checked_sub(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_sub(rhs.0).map(SimTime)
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn saturating_add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }

    /// Smallest multiple of `period` strictly greater than `self`.
    pub fn next_multiple_of(self, period: SimTime) -> SimTime {
        assert!(period.0 > 0, "period must be positive");
        SimTime((self.0 / period.0 + 1) * period.0)
    }

    /// Parses a non-negative decimal number of seconds (e.g. `"1.5"`, `"2e-3"`)
    /// into microseconds, rounding half up.
    pub fn parse_decimal_secs(text: &str) -> Option<SimTime> {
        let text = text.trim();
        let (mantissa, exponent) = match text.find(['e', 'E']) {
            Some(pos) => (&text[..pos], text[pos + 1..].parse::<i32>().ok()?),
            None => (text, 0),
        };
        let mantissa = mantissa.strip_prefix('+').unwrap_or(mantissa);
        if let Some(rest) = mantissa.strip_prefix('-') {
            // "-0" and "-0.0" are still zero
            return if !rest.is_empty() && rest.chars().all(|c| c == '0' || c == '.') {
                Some(SimTime::ZERO)
            } else {
                None
            };
        }
        let (int_part, frac_part) = match mantissa.split_once('.') {
            Some((i, f)) => (i, f),
            None => (mantissa, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
            return None;
        }
        let digits: String = format!("{int_part}{frac_part}");
        let digits = digits.trim_start_matches('0');
        // value = digits * 10^(exponent - frac_len) seconds = digits * 10^(exponent - frac_len + 6) µs
        let shift = exponent as i64 - frac_part.len() as i64 + 6;
        if digits.is_empty() {
            return Some(SimTime::ZERO);
        }
        if shift >= 0 {
            let mut value: u128 = digits.parse().ok()?;
            for _ in 0..shift {
                value = value.checked_mul(10)?;
            }
            u64::try_from(value).ok().map(SimTime)
        } else {
            let cut = (-shift) as usize;
            if cut > digits.len() {
                // below half a microsecond unless the first dropped digit says otherwise
                let leading_zeros = cut - digits.len();
                let round_up = leading_zeros == 0 && digits.as_bytes()[0] >= b'5';
                return Some(SimTime(u64::from(round_up)));
            }
            let (keep, dropped) = digits.split_at(digits.len() - cut);
            let mut value: u128 = if keep.is_empty() { 0 } else { keep.parse().ok()? };
            if dropped.as_bytes()[0] >= b'5' {
                value += 1;
            }
            u64::try_from(value).ok().map(SimTime)
        }
    }

    /// Exact decimal-seconds rendering, e.g. `1.5` or `0.000001`.
    pub fn to_decimal_secs(self) -> String {
        let secs = self.0 / MICROS_PER_SEC;
        let frac = self.0 % MICROS_PER_SEC;
        if frac == 0 {
            secs.to_string()
        } else {
            let frac = format!("{frac:06}");
            format!("{secs}.{}", frac.trim_end_matches('0'))
        }
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_add(rhs.0).expect("SimTime overflow"))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.to_decimal_secs())
    }
}

/// Serde adapter storing a [`SimTime`] as a JSON number of seconds.
pub mod secs {
    use super::SimTime;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &SimTime, s: S) -> Result<S::Ok, S::Error> {
        let number: serde_json::Number = t.to_decimal_secs().parse().map_err(serde::ser::Error::custom)?;
        serde::Serialize::serialize(&number, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SimTime, D::Error> {
        let number = serde_json::Number::deserialize(d)?;
        SimTime::parse_decimal_secs(&number.to_string()).ok_or_else(|| D::Error::custom(format!("invalid duration in seconds: {number}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_seconds_parse_exactly() {
        let cases = [
            ("0", 0),
            ("1", 1_000_000),
            ("1.5", 1_500_000),
            ("0.000001", 1),
            ("0.0000005", 1),
            ("0.0000004", 0),
            ("2e-3", 2_000),
            ("1.25E2", 125_000_000),
            ("5e-7", 1),
            ("4.9e-7", 0),
            ("3600", 3_600_000_000),
            ("0.1", 100_000),
            ("-0", 0),
        ];
        for (text, micros) in cases {
            assert_eq!(SimTime::parse_decimal_secs(text), Some(SimTime::from_micros(micros)), "{text}");
        }
        assert_eq!(SimTime::parse_decimal_secs("-1"), None);
        assert_eq!(SimTime::parse_decimal_secs("abc"), None);
        assert_eq!(SimTime::parse_decimal_secs(""), None);
    }

    #[test]
    fn decimal_rendering_round_trips() {
        for micros in [0, 1, 10, 999_999, 1_000_000, 1_500_000, 123_456_789] {
            let t = SimTime::from_micros(micros);
            assert_eq!(SimTime::parse_decimal_secs(&t.to_decimal_secs()), Some(t));
        }
    }

    #[test]
    fn next_multiple_is_strictly_after() {
        let p = SimTime::from_secs(60);
        assert_eq!(SimTime::ZERO.next_multiple_of(p), SimTime::from_secs(60));
        assert_eq!(SimTime::from_secs(60).next_multiple_of(p), SimTime::from_secs(120));
        assert_eq!(SimTime::from_secs(61).next_multiple_of(p), SimTime::from_secs(120));
    }
}
