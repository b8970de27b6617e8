//! Time values with infinities and superdense tags.
//!
//! A [`TimeValue`] is a signed nanosecond count extended with `-inf` and
//! `+inf`. The same representation serves for absolute times and for
//! intervals; field names say which one is meant. A [`Tag`] pairs a
//! timestamp with a microstep and is ordered lexicographically.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Neg;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const NANOS_PER_MICRO: i64 = 1_000;
const NANOS_PER_MILLI: i64 = 1_000_000;
const NANOS_PER_SEC: i64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("indeterminate sum: +inf and -inf cannot be added")]
    IndeterminateSum,
    #[error("cannot parse time value {input:?}: {reason}")]
    Parse { input: String, reason: &'static str },
}

/// A point or interval on the time line, in nanoseconds.
///
/// The derived ordering is the intended total order: `NegInf` sorts before
/// every finite value, `PosInf` after, finite values by their count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimeValue {
    NegInf,
    Finite(i64),
    PosInf,
}

impl Default for TimeValue {
    fn default() -> Self {
        TimeValue::ZERO
    }
}

impl TimeValue {
    pub const ZERO: TimeValue = TimeValue::Finite(0);

    pub const fn nanos(n: i64) -> Self {
        TimeValue::Finite(n)
    }

    pub fn micros(n: i64) -> Self {
        Self::scaled(n, NANOS_PER_MICRO)
    }

    pub fn millis(n: i64) -> Self {
        Self::scaled(n, NANOS_PER_MILLI)
    }

    pub fn secs(n: i64) -> Self {
        Self::scaled(n, NANOS_PER_SEC)
    }

    fn scaled(n: i64, unit: i64) -> Self {
        Self::from_i128(n as i128 * unit as i128)
    }

    /// Out-of-range counts saturate to the matching infinity.
    fn from_i128(n: i128) -> Self {
        if n > i64::MAX as i128 {
            TimeValue::PosInf
        } else if n < i64::MIN as i128 {
            TimeValue::NegInf
        } else {
            TimeValue::Finite(n as i64)
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, TimeValue::Finite(_))
    }

    pub fn as_nanos(self) -> Option<i64> {
        match self {
            TimeValue::Finite(n) => Some(n),
            _ => None,
        }
    }

    /// Saturating addition. Opposite infinities have no sum.
    pub fn checked_add(self, rhs: TimeValue) -> Result<TimeValue, TimeError> {
        use TimeValue::*;
        match (self, rhs) {
            (PosInf, NegInf) | (NegInf, PosInf) => Err(TimeError::IndeterminateSum),
            (PosInf, _) | (_, PosInf) => Ok(PosInf),
            (NegInf, _) | (_, NegInf) => Ok(NegInf),
            (Finite(a), Finite(b)) => Ok(Self::from_i128(a as i128 + b as i128)),
        }
    }

    pub fn checked_sub(self, rhs: TimeValue) -> Result<TimeValue, TimeError> {
        self.checked_add(-rhs)
    }

    /// Addition for values known to be finite (or same-signed infinities).
    ///
    /// Panics on `+inf + -inf`; callers use it only where validation has
    /// already excluded that case.
    pub(crate) fn add_known(self, rhs: TimeValue) -> TimeValue {
        self.checked_add(rhs)
            .expect("opposite infinities excluded by caller")
    }
}

impl Neg for TimeValue {
    type Output = TimeValue;

    fn neg(self) -> TimeValue {
        match self {
            TimeValue::NegInf => TimeValue::PosInf,
            TimeValue::PosInf => TimeValue::NegInf,
            TimeValue::Finite(n) => TimeValue::from_i128(-(n as i128)),
        }
    }
}

/// Free-function form of [`TimeValue::checked_add`].
pub fn time_add(a: TimeValue, b: TimeValue) -> Result<TimeValue, TimeError> {
    a.checked_add(b)
}

impl fmt::Display for TimeValue {
    /// Renders in the largest unit that represents the value exactly.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TimeValue::NegInf => f.write_str("-inf"),
            TimeValue::PosInf => f.write_str("+inf"),
            TimeValue::Finite(0) => f.write_str("0ms"),
            TimeValue::Finite(n) => {
                for (unit, name) in [
                    (NANOS_PER_SEC, "s"),
                    (NANOS_PER_MILLI, "ms"),
                    (NANOS_PER_MICRO, "us"),
                ] {
                    if n % unit == 0 {
                        return write!(f, "{}{}", n / unit, name);
                    }
                }
                write!(f, "{n}ns")
            }
        }
    }
}

impl FromStr for TimeValue {
    type Err = TimeError;

    /// Accepts `-inf`, `+inf`/`inf`, bare `0`, and decimal numbers with a
    /// unit suffix `ns`, `us`, `ms` or `s` (e.g. `12.5ms`, `-3 us`).
    fn from_str(input: &str) -> Result<Self, Self::Err> {
        let err = |reason| TimeError::Parse {
            input: input.to_string(),
            reason,
        };
        let s = input.trim();
        match s {
            "-inf" => return Ok(TimeValue::NegInf),
            "+inf" | "inf" => return Ok(TimeValue::PosInf),
            "0" | "+0" | "-0" => return Ok(TimeValue::ZERO),
            _ => {}
        }
        let split = s
            .find(|c: char| c.is_ascii_alphabetic() || c == 'µ')
            .ok_or_else(|| err("missing unit (ns, us, ms, s)"))?;
        let (number, unit) = (s[..split].trim(), &s[split..]);
        let scale: i64 = match unit {
            "ns" => 1,
            "us" | "µs" => NANOS_PER_MICRO,
            "ms" => NANOS_PER_MILLI,
            "s" => NANOS_PER_SEC,
            _ => return Err(err("unknown unit")),
        };
        let (negative, digits) = match number.as_bytes().first() {
            Some(b'-') => (true, &number[1..]),
            Some(b'+') => (false, &number[1..]),
            _ => (false, number),
        };
        let (int_part, frac_part) = match digits.split_once('.') {
            Some((i, f)) => (i, f),
            None => (digits, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err("missing digits"));
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(err("invalid digits"));
        }
        let mut total: i128 = 0;
        for b in int_part.bytes() {
            total = total * 10 + (b - b'0') as i128;
            if total > i64::MAX as i128 {
                return Err(err("value out of range"));
            }
        }
        total *= scale as i128;
        let mut place = scale as i128;
        for b in frac_part.bytes() {
            let digit = (b - b'0') as i128;
            if place == 1 {
                if digit != 0 {
                    return Err(err("sub-nanosecond precision"));
                }
                continue;
            }
            place /= 10;
            total += digit * place;
        }
        if negative {
            total = -total;
        }
        if total > i64::MAX as i128 || total < i64::MIN as i128 {
            return Err(err("value out of range"));
        }
        Ok(TimeValue::Finite(total as i64))
    }
}

impl Serialize for TimeValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Superdense logical time: a timestamp refined by a microstep.
///
/// Field order makes the derived ordering lexicographic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tag {
    #[serde(rename = "t")]
    timestamp: TimeValue,
    #[serde(rename = "m")]
    microstep: u32,
}

impl Tag {
    pub const BOTTOM: Tag = Tag {
        timestamp: TimeValue::NegInf,
        microstep: 0,
    };
    pub const TOP: Tag = Tag {
        timestamp: TimeValue::PosInf,
        microstep: 0,
    };

    /// Infinite timestamps always carry microstep 0.
    pub fn new(timestamp: TimeValue, microstep: u32) -> Self {
        let microstep = if timestamp.is_finite() { microstep } else { 0 };
        Tag {
            timestamp,
            microstep,
        }
    }

    pub fn at(timestamp: TimeValue) -> Self {
        Tag::new(timestamp, 0)
    }

    /// The timestamp projection: drops the microstep.
    pub fn timestamp(&self) -> TimeValue {
        self.timestamp
    }

    pub fn microstep(&self) -> u32 {
        self.microstep
    }

    /// Largest tag strictly below `self`.
    pub fn pred(&self) -> Tag {
        match self.timestamp {
            TimeValue::Finite(t) if self.microstep > 0 => {
                Tag::new(TimeValue::Finite(t), self.microstep - 1)
            }
            TimeValue::Finite(t) if t > i64::MIN => Tag::new(TimeValue::Finite(t - 1), u32::MAX),
            TimeValue::Finite(_) | TimeValue::NegInf => Tag::BOTTOM,
            TimeValue::PosInf => Tag::new(TimeValue::Finite(i64::MAX), u32::MAX),
        }
    }

    /// Smallest tag strictly above `self`.
    pub fn succ(&self) -> Tag {
        match self.timestamp {
            TimeValue::Finite(t) if self.microstep < u32::MAX => {
                Tag::new(TimeValue::Finite(t), self.microstep + 1)
            }
            TimeValue::Finite(t) if t < i64::MAX => Tag::at(TimeValue::Finite(t + 1)),
            TimeValue::Finite(_) | TimeValue::PosInf => Tag::TOP,
            TimeValue::NegInf => Tag::at(TimeValue::Finite(i64::MIN)),
        }
    }

    /// Tag after a logical delay. A zero delay keeps the tag unchanged;
    /// a positive delay shifts the timestamp and keeps the microstep so that
    /// distinct tags stay distinct.
    pub fn delayed(&self, delay: TimeValue) -> Tag {
        if delay == TimeValue::ZERO {
            return *self;
        }
        let ts = self
            .timestamp
            .checked_add(delay)
            .unwrap_or(TimeValue::PosInf);
        Tag::new(ts, self.microstep)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.timestamp, self.microstep)
    }
}

pub fn tag_compare(a: &Tag, b: &Tag) -> Ordering {
    a.cmp(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ms(n: i64) -> TimeValue {
        TimeValue::millis(n)
    }

    #[test]
    fn tag_order_examples() {
        assert_eq!(
            tag_compare(&Tag::new(ms(5), 0), &Tag::new(ms(5), 1)),
            Ordering::Less
        );
        assert_eq!(
            tag_compare(&Tag::new(TimeValue::NegInf, 0), &Tag::new(ms(0), 0)),
            Ordering::Less
        );
        assert_eq!(
            tag_compare(&Tag::new(ms(5), 2), &Tag::new(ms(5), 2)),
            Ordering::Equal
        );
    }

    #[test]
    fn add_examples() {
        assert_eq!(time_add(ms(3), ms(4)), Ok(ms(7)));
        assert_eq!(time_add(TimeValue::NegInf, ms(10)), Ok(TimeValue::NegInf));
        assert_eq!(
            time_add(TimeValue::PosInf, TimeValue::NegInf),
            Err(TimeError::IndeterminateSum)
        );
        assert_eq!(
            time_add(TimeValue::nanos(i64::MAX), TimeValue::nanos(1)),
            Ok(TimeValue::PosInf)
        );
        assert_eq!(
            time_add(TimeValue::nanos(i64::MIN), TimeValue::nanos(-1)),
            Ok(TimeValue::NegInf)
        );
    }

    #[test]
    fn infinite_tags_are_canonical() {
        assert_eq!(Tag::new(TimeValue::PosInf, 7), Tag::TOP);
        assert_eq!(Tag::new(TimeValue::NegInf, 3).microstep(), 0);
    }

    #[test]
    fn render_and_parse() {
        assert_eq!(ms(12).to_string(), "12ms");
        assert_eq!(TimeValue::NegInf.to_string(), "-inf");
        assert_eq!(TimeValue::PosInf.to_string(), "+inf");
        assert_eq!(TimeValue::micros(12_900).to_string(), "12900us");
        assert_eq!(TimeValue::secs(2).to_string(), "2s");
        assert_eq!(TimeValue::nanos(-7).to_string(), "-7ns");
        assert_eq!(Tag::new(ms(12), 0).to_string(), "(12ms, 0)");

        assert_eq!("12.9ms".parse::<TimeValue>(), Ok(TimeValue::micros(12_900)));
        assert_eq!("-3 us".parse::<TimeValue>(), Ok(TimeValue::nanos(-3_000)));
        assert_eq!("1s".parse::<TimeValue>(), Ok(TimeValue::secs(1)));
        assert_eq!("0".parse::<TimeValue>(), Ok(TimeValue::ZERO));
        assert_eq!("inf".parse::<TimeValue>(), Ok(TimeValue::PosInf));
        assert!("1.5ns".parse::<TimeValue>().is_err());
        assert!("12".parse::<TimeValue>().is_err());
        assert!("12h".parse::<TimeValue>().is_err());
        assert!("ms".parse::<TimeValue>().is_err());
    }

    #[test]
    fn pred_succ_bracket() {
        let t = Tag::new(ms(5), 0);
        assert_eq!(t.pred(), Tag::new(TimeValue::nanos(4_999_999), u32::MAX));
        assert_eq!(t.pred().succ(), t);
        assert_eq!(t.delayed(ms(10)), Tag::new(ms(15), 0));
        assert_eq!(t.delayed(TimeValue::ZERO), t);
    }

    fn arb_time() -> impl Strategy<Value = TimeValue> {
        prop_oneof![
            1 => Just(TimeValue::NegInf),
            1 => Just(TimeValue::PosInf),
            8 => (-1_000_000_000_000i64..1_000_000_000_000).prop_map(TimeValue::Finite),
        ]
    }

    fn arb_tag() -> impl Strategy<Value = Tag> {
        (arb_time(), 0u32..4).prop_map(|(t, m)| Tag::new(t, m))
    }

    proptest! {
        #[test]
        fn order_is_total(a in arb_tag(), b in arb_tag()) {
            let ab = tag_compare(&a, &b);
            let ba = tag_compare(&b, &a);
            prop_assert_eq!(ab, ba.reverse());
            prop_assert_eq!(ab == Ordering::Equal, a == b);
        }

        #[test]
        fn timestamp_projection_is_monotone(a in arb_tag(), b in arb_tag()) {
            if a <= b {
                prop_assert!(a.timestamp() <= b.timestamp());
            }
        }

        #[test]
        fn add_commutes_and_associates(a in arb_time(), b in arb_time(), c in arb_time()) {
            prop_assert_eq!(time_add(a, b), time_add(b, a));
            let left = time_add(a, b).and_then(|ab| time_add(ab, c));
            let right = time_add(b, c).and_then(|bc| time_add(a, bc));
            if let (Ok(l), Ok(r)) = (left, right) {
                prop_assert_eq!(l, r);
            }
        }

        #[test]
        fn render_parse_roundtrip(t in arb_time()) {
            prop_assert_eq!(t.to_string().parse::<TimeValue>(), Ok(t));
        }
    }
}
