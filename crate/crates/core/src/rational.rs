//! Exact rational arithmetic for economic quantities.
//!
//! Utilities, costs, penalties and escrow balances are exact rationals so
//! that golden-value tests compare with zero tolerance and trace
//! serialization is platform-independent.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_rational::Ratio;
use num_traits::{Signed, Zero};

/// Exact rational used for rewards, costs, penalties and escrow.
pub type Rat = Ratio<i64>;

/// Renders a rational as `n` when integral, else `n/d`.
///
/// This is the canonical form used in metric streams and scenario files.
pub fn format_rat(r: &Rat) -> String {
    use alloc::format;
    if r.is_integer() {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Error from [`parse_rat`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseRatError {
    text: String,
}

impl fmt::Display for ParseRatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid rational literal `{}`", self.text)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ParseRatError {}

/// Parses `12`, `-3/4` or decimal literals like `0.25` into an exact rational.
///
/// Decimal literals are exact: `0.3` parses to 3/10, not the nearest float.
pub fn parse_rat(s: &str) -> Result<Rat, ParseRatError> {
    let err = || ParseRatError {
        text: String::from(s),
    };
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| err())?;
        let d: i64 = d.trim().parse().map_err(|_| err())?;
        if d == 0 {
            return Err(err());
        }
        return Ok(Rat::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let neg = int.trim_start().starts_with('-');
        let int: i64 = if int.is_empty() || int == "-" {
            0
        } else {
            int.parse().map_err(|_| err())?
        };
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let scale = 10i64
            .checked_pow(frac.len() as u32)
            .ok_or_else(err)?;
        let frac_val: i64 = frac.parse().map_err(|_| err())?;
        let unsigned = Rat::new(int.abs() * scale + frac_val, scale);
        return Ok(if neg { -unsigned } else { unsigned });
    }
    let n: i64 = s.parse().map_err(|_| err())?;
    Ok(Rat::from_integer(n))
}

/// Sums a slice of rationals.
pub fn sum(values: &[Rat]) -> Rat {
    values.iter().fold(Rat::zero(), |acc, v| acc + v)
}

/// Maximum absolute value in a sequence, zero for an empty one.
pub fn max_abs(values: &[Rat]) -> Rat {
    values
        .iter()
        .map(|v| v.abs())
        .fold(Rat::zero(), |a, b| if b > a { b } else { a })
}

/// Collects rationals into their canonical string forms.
pub fn format_all(values: &[Rat]) -> Vec<String> {
    values.iter().map(format_rat).collect()
}
