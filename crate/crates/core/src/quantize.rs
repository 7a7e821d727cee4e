//! Asymmetric mid-rise quantizer with infinite range, `q(b) = floor(b / Δ)`.
//!
//! Δ is held as an exact ratio of integers and the floor is computed on the
//! exact binary value of each `f64`, so the lattice index never depends on
//! floating-point rounding of `b / Δ`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Positive rational quantization level `numer / denom`, always reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantizationLevel {
    numer: u64,
    denom: u64,
}

/// Integer lattice coordinates of a quantized real vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedVector {
    pub values: Vec<i64>,
    pub level: QuantizationLevel,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl QuantizationLevel {
    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        Self::from_u128(numer as u128, denom as u128)
    }

    fn from_u128(numer: u128, denom: u128) -> Result<Self> {
        if numer == 0 || denom == 0 {
            return Err(Error::InvalidLevel(format!("{numer}/{denom} is not positive")));
        }
        let g = gcd(numer, denom);
        let (n, d) = (numer / g, denom / g);
        // Keep both parts well inside i128 headroom for the exact floor.
        const LIMIT: u128 = 1 << 62;
        if n >= LIMIT || d >= LIMIT {
            return Err(Error::InvalidLevel(format!("{n}/{d} too large to represent")));
        }
        Ok(Self { numer: n as u64, denom: d as u64 })
    }

    /// Level `10^-exp`.
    pub fn pow10_neg(exp: u32) -> Result<Self> {
        let denom = 10u128
            .checked_pow(exp)
            .ok_or_else(|| Error::InvalidLevel(format!("1e-{exp} too small")))?;
        Self::from_u128(1, denom)
    }

    /// Exact rational for the shortest decimal that round-trips to `delta`,
    /// so `1e-3` becomes exactly `1/1000`.
    pub fn from_f64(delta: f64) -> Result<Self> {
        if !delta.is_finite() || delta <= 0.0 {
            return Err(Error::InvalidLevel(format!("{delta} is not a positive finite number")));
        }
        format!("{delta:e}").parse()
    }

    pub fn numer(&self) -> u64 {
        self.numer
    }

    pub fn denom(&self) -> u64 {
        self.denom
    }

    pub fn as_f64(&self) -> f64 {
        self.numer as f64 / self.denom as f64
    }

    /// Exact `floor(b / Δ)` for one finite value.
    pub fn floor_index(&self, b: f64) -> Result<i64> {
        if !b.is_finite() {
            return Err(Error::NonFinite(0));
        }
        if b == 0.0 {
            return Ok(0);
        }
        let bits = b.to_bits();
        let negative = bits >> 63 == 1;
        let biased = ((bits >> 52) & 0x7ff) as i32;
        let fraction = bits & ((1u64 << 52) - 1);
        let (mantissa, exp) = if biased == 0 {
            (fraction, -1074)
        } else {
            (fraction | (1u64 << 52), biased - 1075)
        };
        // |b| = mantissa * 2^exp, so b / Δ = ±mantissa * denom * 2^exp / numer.
        let mut top = mantissa as i128 * self.denom as i128;
        if negative {
            top = -top;
        }
        let numer = self.numer as i128;
        let q = if exp >= 0 {
            let scale = if exp < 126 { Some(1i128 << exp) } else { None };
            let scaled = scale
                .and_then(|s| top.checked_mul(s))
                .ok_or(Error::Overflow("quantize"))?;
            scaled.div_euclid(numer)
        } else {
            let shift = (-exp) as u32;
            let bottom = if shift < 126 { numer.checked_mul(1i128 << shift) } else { None };
            match bottom {
                Some(bottom) => top.div_euclid(bottom),
                // |top| < 2^117 < bottom: the quotient lies in (-1, 1).
                None if top >= 0 => 0,
                None => -1,
            }
        };
        i64::try_from(q).map_err(|_| Error::Overflow("quantize"))
    }

    /// Smallest-error `f64` at or above the exact lattice value `index * Δ`.
    /// Rounding upward keeps `floor_index(lattice_value(z)) == z`.
    pub fn lattice_value(&self, index: i64) -> f64 {
        let exact_top = index as i128 * self.numer as i128;
        let mut r = exact_top as f64 / self.denom as f64;
        while self.floor_index(r).is_ok_and(|q| q < index) {
            r = r.next_up();
        }
        r
    }

    pub fn quantize_floor(&self, b: &[f64]) -> Result<QuantizedVector> {
        quantize_floor(b, *self)
    }
}

impl fmt::Display for QuantizationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom == 1 {
            return write!(f, "{}", self.numer);
        }
        let mut d = self.denom;
        let mut k = 0;
        while d.is_multiple_of(10) {
            d /= 10;
            k += 1;
        }
        if d == 1 {
            write!(f, "{}e-{}", self.numer, k)
        } else {
            write!(f, "{}/{}", self.numer, self.denom)
        }
    }
}

impl FromStr for QuantizationLevel {
    type Err = Error;

    /// Accepts `p/q`, plain decimals (`0.001`) and scientific notation (`1e-3`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidLevel(format!("cannot parse {s:?}"));
        if let Some((p, q)) = s.split_once('/') {
            let p: u64 = p.trim().parse().map_err(|_| bad())?;
            let q: u64 = q.trim().parse().map_err(|_| bad())?;
            return Self::new(p, q);
        }
        let (mantissa, exp) = match s.find(['e', 'E']) {
            Some(pos) => (&s[..pos], s[pos + 1..].parse::<i32>().map_err(|_| bad())?),
            None => (s, 0),
        };
        let mantissa = mantissa.strip_prefix('+').unwrap_or(mantissa);
        let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.bytes().chain(frac_part.bytes()).all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let digits = format!("{int_part}{frac_part}");
        let digits = digits.trim_start_matches('0');
        let mut numer: u128 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| bad())? };
        let scale = exp - frac_part.len() as i32;
        let mut denom: u128 = 1;
        let pow = 10u128
            .checked_pow(scale.unsigned_abs())
            .ok_or_else(bad)?;
        if scale >= 0 {
            numer = numer.checked_mul(pow).ok_or_else(bad)?;
        } else {
            denom = pow;
        }
        Self::from_u128(numer, denom)
    }
}

impl Serialize for QuantizationLevel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QuantizationLevel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Element-wise exact `floor(b_j / Δ)`.
pub fn quantize_floor(b: &[f64], level: QuantizationLevel) -> Result<QuantizedVector> {
    let values = b
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            if !v.is_finite() {
                return Err(Error::NonFinite(j));
            }
            level.floor_index(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedVector { values, level })
}

pub fn dequantize(q: &QuantizedVector) -> Vec<f64> {
    q.values.iter().map(|&v| q.level.lattice_value(v)).collect()
}

impl QuantizedVector {
    pub fn dequantize(&self) -> Vec<f64> {
        dequantize(self)
    }
}
