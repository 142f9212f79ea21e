//! Exact dyadic rationals `m / 2^e`.
//!
//! Values are kept in canonical form: when `e > 0` the mantissa is odd, and
//! zero is `0 / 2^0`. Mantissas live in an `i128` until an operation would
//! overflow, after which they move to a heap `BigInt`; results that fit are
//! demoted back, so equality is structural.
//!
//! Growth bound: a stage map rescales by `2^k`, shifts by integers and adds
//! an arc length `4 r s` with `s` the rescaled time step. For inputs with at
//! most `p` fractional bits and dyadic time steps with at most `q` fractional
//! bits, every intermediate value has at most `p + q + 3` fractional bits, so
//! full-stage flows of `f64` inputs (`p, q <= 53`) stay in the `i128` path.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::ops::{Add, Mul, Neg, Sub};
use core::str::FromStr;

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Mant {
    Small(i128),
    Big(BigInt),
}

/// An exact dyadic rational `mantissa / 2^exponent`.
#[derive(Clone)]
pub struct Dyadic {
    mant: Mant,
    exp: u32,
}

impl Dyadic {
    pub const ZERO: Dyadic = Dyadic { mant: Mant::Small(0), exp: 0 };
    pub const ONE: Dyadic = Dyadic { mant: Mant::Small(1), exp: 0 };

    /// `m / 2^e`, normalised.
    pub fn new(m: i128, e: u32) -> Self {
        normalize_small(m, e)
    }

    pub fn from_bigint(m: BigInt, e: u32) -> Self {
        normalize_big(m, e)
    }

    pub fn from_int(n: i64) -> Self {
        Dyadic::new(n as i128, 0)
    }

    /// `2^k` for any integer `k`.
    pub fn pow2(k: i32) -> Self {
        Dyadic::ONE.mul_pow2(k)
    }

    /// Exact conversion of a finite `f64` (every finite float is dyadic).
    pub fn from_f64(x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::Invalid(alloc::format!("non-finite value {x}")));
        }
        if x == 0.0 {
            return Ok(Dyadic::ZERO);
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1i128 } else { 1 };
        let biased = ((bits >> 52) & 0x7ff) as i32;
        let frac = (bits & ((1u64 << 52) - 1)) as i128;
        let (m, e2) = if biased == 0 {
            (frac, -1074)
        } else {
            (frac | (1i128 << 52), biased - 1075)
        };
        Ok(Dyadic::new(sign * m, 0).mul_pow2(e2))
    }

    pub fn exponent(&self) -> u32 {
        self.exp
    }

    pub fn mantissa(&self) -> BigInt {
        match &self.mant {
            Mant::Small(m) => BigInt::from(*m),
            Mant::Big(m) => m.clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.mant, Mant::Small(0))
    }

    pub fn is_integer(&self) -> bool {
        self.exp == 0
    }

    pub fn signum(&self) -> i32 {
        match &self.mant {
            Mant::Small(m) => m.signum() as i32,
            Mant::Big(m) => match m.sign() {
                Sign::Minus => -1,
                Sign::NoSign => 0,
                Sign::Plus => 1,
            },
        }
    }

    pub fn abs(&self) -> Self {
        if self.signum() < 0 {
            -self
        } else {
            self.clone()
        }
    }

    /// `self * 2^k`.
    pub fn mul_pow2(&self, k: i32) -> Self {
        if self.is_zero() {
            return Dyadic::ZERO;
        }
        if k <= 0 {
            let e = self.exp.checked_add(k.unsigned_abs()).expect("dyadic exponent overflow");
            return match &self.mant {
                Mant::Small(m) => normalize_small(*m, e),
                Mant::Big(m) => normalize_big(m.clone(), e),
            };
        }
        let k = k as u32;
        if self.exp >= k {
            // mantissa already odd, no normalisation needed
            return Dyadic { mant: self.mant.clone(), exp: self.exp - k };
        }
        let shift = k - self.exp;
        match &self.mant {
            Mant::Small(m) => match shl_checked(*m, shift) {
                Some(v) => Dyadic { mant: Mant::Small(v), exp: 0 },
                None => normalize_big(BigInt::from(*m) << shift, 0),
            },
            Mant::Big(m) => normalize_big(m << shift, 0),
        }
    }

    pub fn halve(&self) -> Self {
        self.mul_pow2(-1)
    }

    pub fn double(&self) -> Self {
        self.mul_pow2(1)
    }

    /// Largest integer `<= self`.
    pub fn floor(&self) -> Self {
        if self.exp == 0 {
            return self.clone();
        }
        match &self.mant {
            Mant::Small(m) => Dyadic::new(m >> self.exp, 0),
            Mant::Big(m) => {
                let d = BigInt::one() << self.exp;
                normalize_big(m.div_floor(&d), 0)
            }
        }
    }

    /// `floor(self)` as an `i64`, if it fits.
    pub fn floor_i64(&self) -> Option<i64> {
        match &self.floor().mant {
            Mant::Small(m) => i64::try_from(*m).ok(),
            Mant::Big(m) => m.to_i64(),
        }
    }

    /// Reduction into `[0, p)` for a positive integer period `p`.
    pub fn rem_euclid_int(&self, p: i64) -> Self {
        debug_assert!(p > 0);
        let pd = Dyadic::from_int(p);
        if self.signum() >= 0 && *self < pd {
            return self.clone();
        }
        // floor(self / p) computed on the integer part, the fraction is unaffected
        let fl = self.floor();
        let frac = self - &fl;
        let n = match &fl.mant {
            Mant::Small(m) => Dyadic::new(m.rem_euclid(p as i128), 0),
            Mant::Big(m) => normalize_big(m.mod_floor(&BigInt::from(p)), 0),
        };
        &n + &frac
    }

    pub fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    /// Nearest `f64` (round to nearest on the mantissa, exact scaling).
    pub fn to_f64(&self) -> f64 {
        match &self.mant {
            Mant::Small(m) => scale_pow2(*m as f64, -(self.exp as i64)),
            Mant::Big(m) => {
                let bits = m.bits();
                if bits <= 1000 {
                    scale_pow2(m.to_f64().unwrap_or(f64::NAN), -(self.exp as i64))
                } else {
                    let drop = bits - 64;
                    let top: BigInt = m >> drop;
                    scale_pow2(top.to_f64().unwrap_or(f64::NAN), drop as i64 - self.exp as i64)
                }
            }
        }
    }

    /// Exact terminating decimal expansion.
    pub fn to_decimal_string(&self) -> String {
        let m = self.mantissa();
        let neg = m.is_negative();
        // m / 2^e = m * 5^e / 10^e
        let scaled = m.abs() * num_traits::pow(BigInt::from(5u8), self.exp as usize);
        let mut digits = scaled.to_string();
        let e = self.exp as usize;
        if e > 0 {
            if digits.len() <= e {
                let pad = e + 1 - digits.len();
                let mut s = String::with_capacity(e + 2);
                for _ in 0..pad {
                    s.push('0');
                }
                s.push_str(&digits);
                digits = s;
            }
            digits.insert(digits.len() - e, '.');
        }
        if neg {
            digits.insert(0, '-');
        }
        digits
    }

    fn parse_decimal(s: &str) -> Result<Self> {
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(Error::Parse(s.into()));
        }
        let all: String = [int_part, frac_part].concat();
        if !all.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::Parse(s.into()));
        }
        let n: BigInt = all.parse().map_err(|_| Error::Parse(s.into()))?;
        let d = frac_part.len();
        // n / 10^d is dyadic iff 5^d | n
        let five = num_traits::pow(BigInt::from(5u8), d);
        let (q, r) = n.div_rem(&five);
        if !r.is_zero() {
            return Err(Error::Parse(s.into()));
        }
        let v = normalize_big(q, d as u32);
        Ok(if neg { -v } else { v })
    }
}

fn scale_pow2(x: f64, k: i64) -> f64 {
    let k = k.clamp(-3000, 3000) as i32;
    // two steps so that intermediate powers stay representable
    let half = k / 2;
    crate::math::ldexp(crate::math::ldexp(x, half), k - half)
}

fn shl_checked(m: i128, shift: u32) -> Option<i128> {
    if shift >= 127 {
        return if m == 0 { Some(0) } else { None };
    }
    m.checked_mul(1i128 << shift)
}

fn normalize_small(m: i128, e: u32) -> Dyadic {
    if m == 0 {
        return Dyadic::ZERO;
    }
    let tz = m.trailing_zeros().min(e);
    Dyadic { mant: Mant::Small(m >> tz), exp: e - tz }
}

fn normalize_big(m: BigInt, e: u32) -> Dyadic {
    if m.is_zero() {
        return Dyadic::ZERO;
    }
    let tz = (m.trailing_zeros().unwrap_or(0).min(e as u64)) as u32;
    let m = if tz > 0 { m >> tz } else { m };
    match i128::try_from(&m) {
        Ok(s) => Dyadic { mant: Mant::Small(s), exp: e - tz },
        Err(_) => Dyadic { mant: Mant::Big(m), exp: e - tz },
    }
}

fn add_impl(a: &Dyadic, b: &Dyadic, negate_b: bool) -> Dyadic {
    if let (Mant::Small(x), Mant::Small(y)) = (&a.mant, &b.mant) {
        let y = if negate_b { y.checked_neg() } else { Some(*y) };
        if let Some(y) = y {
            let e = a.exp.max(b.exp);
            let xa = shl_checked(*x, e - a.exp);
            let yb = shl_checked(y, e - b.exp);
            if let (Some(xa), Some(yb)) = (xa, yb) {
                if let Some(s) = xa.checked_add(yb) {
                    return normalize_small(s, e);
                }
            }
        }
    }
    let e = a.exp.max(b.exp);
    let xa = a.mantissa() << (e - a.exp);
    let mut yb = b.mantissa() << (e - b.exp);
    if negate_b {
        yb = -yb;
    }
    normalize_big(xa + yb, e)
}

fn mul_impl(a: &Dyadic, b: &Dyadic) -> Dyadic {
    let e = a.exp.checked_add(b.exp).expect("dyadic exponent overflow");
    if let (Mant::Small(x), Mant::Small(y)) = (&a.mant, &b.mant) {
        if let Some(p) = x.checked_mul(*y) {
            // product of odd mantissas is odd; only zero needs normalising
            return normalize_small(p, e);
        }
    }
    normalize_big(a.mantissa() * b.mantissa(), e)
}

macro_rules! forward_binop {
    ($tr:ident, $method:ident, $body:expr) => {
        impl<'a> $tr<&'a Dyadic> for &'a Dyadic {
            type Output = Dyadic;
            fn $method(self, rhs: &'a Dyadic) -> Dyadic {
                $body(self, rhs)
            }
        }
        impl $tr<Dyadic> for Dyadic {
            type Output = Dyadic;
            fn $method(self, rhs: Dyadic) -> Dyadic {
                $body(&self, &rhs)
            }
        }
        impl<'a> $tr<&'a Dyadic> for Dyadic {
            type Output = Dyadic;
            fn $method(self, rhs: &'a Dyadic) -> Dyadic {
                $body(&self, rhs)
            }
        }
        impl<'a> $tr<Dyadic> for &'a Dyadic {
            type Output = Dyadic;
            fn $method(self, rhs: Dyadic) -> Dyadic {
                $body(self, &rhs)
            }
        }
    };
}

forward_binop!(Add, add, |a, b| add_impl(a, b, false));
forward_binop!(Sub, sub, |a, b| add_impl(a, b, true));
forward_binop!(Mul, mul, mul_impl);

impl Neg for &Dyadic {
    type Output = Dyadic;
    fn neg(self) -> Dyadic {
        match &self.mant {
            Mant::Small(m) => match m.checked_neg() {
                Some(n) => Dyadic { mant: Mant::Small(n), exp: self.exp },
                None => normalize_big(-BigInt::from(*m), self.exp),
            },
            Mant::Big(m) => normalize_big(-m.clone(), self.exp),
        }
    }
}

impl Neg for Dyadic {
    type Output = Dyadic;
    fn neg(self) -> Dyadic {
        -&self
    }
}

impl PartialEq for Dyadic {
    fn eq(&self, other: &Self) -> bool {
        self.exp == other.exp
            && match (&self.mant, &other.mant) {
                (Mant::Small(a), Mant::Small(b)) => a == b,
                (Mant::Big(a), Mant::Big(b)) => a == b,
                _ => false,
            }
    }
}

impl Eq for Dyadic {}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        if let (Mant::Small(a), Mant::Small(b)) = (&self.mant, &other.mant) {
            if self.exp == other.exp {
                return a.cmp(b);
            }
        }
        (self - other).signum().cmp(&0)
    }
}

impl core::hash::Hash for Dyadic {
    fn hash<H: core::hash::Hasher>(&self, state: &mut H) {
        self.exp.hash(state);
        match &self.mant {
            Mant::Small(m) => m.hash(state),
            Mant::Big(m) => m.hash(state),
        }
    }
}

impl Default for Dyadic {
    fn default() -> Self {
        Dyadic::ZERO
    }
}

impl From<i64> for Dyadic {
    fn from(n: i64) -> Self {
        Dyadic::from_int(n)
    }
}

/// `m/2^e`, or plain `m` for integers.
impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.mant {
            Mant::Small(m) => write!(f, "{m}")?,
            Mant::Big(m) => write!(f, "{m}")?,
        }
        if self.exp > 0 {
            write!(f, "/2^{}", self.exp)?;
        }
        Ok(())
    }
}

impl fmt::Debug for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dyadic({self})")
    }
}

/// Accepts `m/2^e`, plain integers, and terminating decimals whose value is dyadic.
impl FromStr for Dyadic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((m, e)) = s.split_once('/') {
            let e = e.trim();
            let e: u32 = match e.strip_prefix("2^") {
                Some(e) => e.parse().map_err(|_| Error::Parse(s.into()))?,
                None => {
                    // plain power-of-two denominator, e.g. "3/8"
                    let d: u128 = e.parse().map_err(|_| Error::Parse(s.into()))?;
                    if !d.is_power_of_two() {
                        return Err(Error::Parse(s.into()));
                    }
                    d.trailing_zeros()
                }
            };
            let m: BigInt = m.trim().parse().map_err(|_| Error::Parse(s.into()))?;
            return Ok(normalize_big(m, e));
        }
        Dyadic::parse_decimal(s)
    }
}

impl serde::Serialize for Dyadic {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Dyadic {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Dyadic;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a dyadic rational as \"m/2^e\" or a terminating decimal")
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> core::result::Result<Dyadic, E> {
                v.parse().map_err(E::custom)
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> core::result::Result<Dyadic, E> {
                Ok(Dyadic::from_int(v))
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> core::result::Result<Dyadic, E> {
                Ok(Dyadic::new(v as i128, 0))
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> core::result::Result<Dyadic, E> {
                Dyadic::from_f64(v).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// Splits a list of dyadics into their exact decimal strings.
pub fn to_decimal_strings(xs: &[Dyadic]) -> Vec<String> {
    xs.iter().map(Dyadic::to_decimal_string).collect()
}
