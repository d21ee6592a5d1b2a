//! Scalar types.
//!
//! The whole construction is written against [`Real`]. `f64` and `f32`
//! implement it directly and are fine for the first few indices, but the
//! weights δ_n of the default instance leave the double range at n = 4 and
//! the tube half-widths of the cusp extension are smaller still. [`ScaledReal`]
//! is an arbitrary-precision binary float with a 32-bit binary exponent
//! (magnitudes down to roughly 2^-2^31) that covers all of them.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::f64::consts::LN_2;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

use astro_float::{BigFloat, Consts, Radix, RoundingMode, Sign, INF_POS};
use num_traits::{Num, One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rounding mode used for every arbitrary-precision operation.
pub const RM: RoundingMode = RoundingMode::ToEven;

/// Mantissa precision of the default instance.
pub const DEFAULT_BITS: usize = 512;

const MIN_BITS: usize = 64;

thread_local! {
    static CONSTS: RefCell<Consts> =
        RefCell::new(Consts::new().expect("allocating the astro-float constant cache"));
}

fn with_consts<R>(f: impl FnOnce(&mut Consts) -> R) -> R {
    CONSTS.with(|cc| f(&mut cc.borrow_mut()))
}

/// A real number written as a decimal mantissa string and a power of ten.
///
/// This is the only form in which reals reach disk: no binary floats appear
/// in any emitted document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decimal {
    pub m: String,
    pub e: i64,
}

impl Decimal {
    fn special(m: &str) -> Self {
        Decimal { m: m.to_string(), e: 0 }
    }

    /// Scientific notation, e.g. `1.25e-3`.
    pub fn to_sci(&self) -> String {
        match self.m.as_str() {
            "inf" | "-inf" | "nan" | "0" => self.m.clone(),
            m => format!("{m}e{}", self.e),
        }
    }

    /// Same as [`Decimal::to_sci`] with the mantissa cut to `digits` significant digits
    /// (truncation, not rounding; used for human-facing output only).
    pub fn to_sci_digits(&self, digits: usize) -> String {
        match self.m.as_str() {
            "inf" | "-inf" | "nan" | "0" => self.m.clone(),
            m => {
                let (sign, body) = m.strip_prefix('-').map_or(("", m), |b| ("-", b));
                let mut out = String::from(sign);
                let mut count = 0;
                for ch in body.chars() {
                    if ch == '.' {
                        out.push(ch);
                        continue;
                    }
                    if count == digits {
                        break;
                    }
                    out.push(ch);
                    count += 1;
                }
                let out = out.trim_end_matches('.').to_string();
                format!("{out}e{}", self.e)
            }
        }
    }
}

/// Operations the construction needs from a real scalar.
pub trait Real:
    Clone + PartialOrd + fmt::Debug + fmt::Display + Send + Sync + Num + Neg<Output = Self>
{
    /// Builds `x` carrying (at least) `bits` of mantissa.
    fn from_f64_prec(x: f64, bits: usize) -> Self;
    /// Mantissa bits carried by this value.
    fn precision(&self) -> usize;
    /// Nearest double; saturates to ±inf and flushes to zero outside the double range.
    fn to_f64(&self) -> f64;
    /// `self = m * 2^e` with `0.5 <= |m| < 1`, or `(0, 0)` for zero.
    fn frexp(&self) -> (f64, i64);
    /// `self * 2^k`.
    fn ldexp(&self, k: i64) -> Self;
    fn ln(&self) -> Self;
    fn exp(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn abs(&self) -> Self;
    fn infinity() -> Self;
    fn is_finite(&self) -> bool;
    /// Zero or subnormal: the value has lost its normal mantissa.
    fn is_degenerate(&self) -> bool;
    fn to_decimal(&self) -> Decimal;
    fn from_decimal(d: &Decimal, bits: usize) -> Result<Self>;

    /// A constant at the precision of `self`.
    fn cst(&self, x: f64) -> Self {
        Self::from_f64_prec(x, self.precision())
    }

    fn powi(&self, n: u32) -> Self {
        let mut base = self.clone();
        let mut acc = self.cst(1.0);
        let mut k = n;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc * base.clone();
            }
            base = base.clone() * base;
            k >>= 1;
        }
        acc
    }

    /// Natural log of `|self|` as a double, valid far outside the double range.
    fn ln_abs_f64(&self) -> f64 {
        let (m, e) = self.frexp();
        if m == 0.0 {
            return f64::NEG_INFINITY;
        }
        m.abs().ln() + e as f64 * LN_2
    }

    /// `e^l` to double accuracy, for exponents far outside the double range.
    fn from_ln_f64(l: f64, bits: usize) -> Self {
        if l == f64::NEG_INFINITY {
            return Self::zero();
        }
        let k = (l / LN_2).floor();
        let frac = l - k * LN_2;
        Self::from_f64_prec(frac.exp(), bits).ldexp(k as i64)
    }

    /// Relative difference `|a - b| / max(|a|, |b|)` as a double (0 when both vanish).
    fn rel_diff(&self, other: &Self) -> f64 {
        let scale = if self.abs() > other.abs() {
            self.abs()
        } else {
            other.abs()
        };
        if scale.is_zero() {
            return 0.0;
        }
        ((self.clone() - other.clone()).abs() / scale).to_f64()
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn is_negative(&self) -> bool {
        *self < Self::zero()
    }

    fn is_positive(&self) -> bool {
        *self > Self::zero()
    }
}

fn ldexp_f64(mut x: f64, mut k: i64) -> f64 {
    // Scale in bounded steps so that intermediate powers of two stay finite.
    while k > 1000 {
        x *= 2f64.powi(1000);
        k -= 1000;
        if x.is_infinite() {
            return x;
        }
    }
    while k < -1000 {
        x *= 2f64.powi(-1000);
        k += 1000;
        if x == 0.0 {
            return x;
        }
    }
    x * 2f64.powi(k as i32)
}

fn frexp_f64(x: f64) -> (f64, i64) {
    if x == 0.0 || !x.is_finite() {
        return (x, 0);
    }
    let (mant, exp, sign) = num_traits::Float::integer_decode(x);
    let bits = 64 - mant.leading_zeros() as i64;
    let m = mant as f64 / 2f64.powi(bits as i32);
    (sign as f64 * m, exp as i64 + bits)
}

fn decimal_from_f64_text(text: String) -> Decimal {
    match text.split_once('e') {
        Some((m, e)) => Decimal {
            m: m.to_string(),
            e: e.parse().unwrap_or(0),
        },
        None => Decimal { m: text, e: 0 },
    }
}

fn parse_decimal_f64(d: &Decimal) -> Result<f64> {
    match d.m.as_str() {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        m => format!("{m}e{}", d.e)
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("{m}e{}: {e}", d.e))),
    }
}

macro_rules! impl_real_prim {
    ($t:ty, $bits:expr) => {
        impl Real for $t {
            fn from_f64_prec(x: f64, _bits: usize) -> Self {
                x as $t
            }
            fn precision(&self) -> usize {
                $bits
            }
            fn to_f64(&self) -> f64 {
                *self as f64
            }
            fn frexp(&self) -> (f64, i64) {
                frexp_f64(*self as f64)
            }
            fn ldexp(&self, k: i64) -> Self {
                ldexp_f64(*self as f64, k) as $t
            }
            fn ln(&self) -> Self {
                <$t>::ln(*self)
            }
            fn exp(&self) -> Self {
                <$t>::exp(*self)
            }
            fn sqrt(&self) -> Self {
                <$t>::sqrt(*self)
            }
            fn abs(&self) -> Self {
                <$t>::abs(*self)
            }
            fn infinity() -> Self {
                <$t>::INFINITY
            }
            fn is_finite(&self) -> bool {
                <$t>::is_finite(*self)
            }
            fn is_degenerate(&self) -> bool {
                *self == 0.0 || self.is_subnormal()
            }
            fn to_decimal(&self) -> Decimal {
                if self.is_nan() {
                    return Decimal::special("nan");
                }
                if self.is_infinite() {
                    return Decimal::special(if *self > 0.0 { "inf" } else { "-inf" });
                }
                if *self == 0.0 {
                    return Decimal::special("0");
                }
                // `{:e}` prints the shortest digit string that round-trips.
                decimal_from_f64_text(format!("{:e}", self))
            }
            fn from_decimal(d: &Decimal, _bits: usize) -> Result<Self> {
                parse_decimal_f64(d).map(|x| x as $t)
            }
        }
    };
}

impl_real_prim!(f64, 53);
impl_real_prim!(f32, 24);

/// Arbitrary-precision real with an extended binary exponent.
///
/// Binary operations round to the larger of the two operand precisions, so
/// constants built with [`Zero`]/[`One`] or from doubles combine with
/// full-precision values without degrading them.
#[derive(Debug)]
pub struct ScaledReal {
    v: BigFloat,
    // Kept apart from the mantissa: astro-float zeros carry no mantissa.
    bits: usize,
}

impl ScaledReal {
    pub fn new(x: f64, bits: usize) -> Self {
        let bits = bits.max(MIN_BITS);
        ScaledReal::at(BigFloat::from_f64(x, bits), bits)
    }

    pub fn from_big(b: BigFloat) -> Self {
        let bits = b.mantissa_max_bit_len().unwrap_or(0).max(MIN_BITS);
        ScaledReal::at(b, bits)
    }

    fn at(v: BigFloat, bits: usize) -> Self {
        ScaledReal { v, bits }
    }

    pub fn as_big(&self) -> &BigFloat {
        &self.v
    }

    /// Rounds to `bits` of mantissa.
    pub fn with_bits(&self, bits: usize) -> Self {
        let bits = bits.max(MIN_BITS);
        let mut b = self.v.clone();
        // set_precision only fails on allocation failure.
        let _ = b.set_precision(bits, RM);
        ScaledReal::at(b, bits)
    }

    fn bits(&self) -> usize {
        self.bits
    }

    fn op_bits(&self, other: &Self) -> usize {
        self.bits().max(other.bits())
    }
}

impl Clone for ScaledReal {
    fn clone(&self) -> Self {
        ScaledReal::at(self.v.clone(), self.bits)
    }
}

impl PartialEq for ScaledReal {
    fn eq(&self, other: &Self) -> bool {
        self.v == other.v
    }
}

impl PartialOrd for ScaledReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.v.partial_cmp(&other.v)
    }
}

impl fmt::Display for ScaledReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = f.precision().unwrap_or(17);
        write!(f, "{}", self.to_decimal().to_sci_digits(digits))
    }
}

impl Add for ScaledReal {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let p = self.op_bits(&rhs);
        ScaledReal::at(self.v.add(&rhs.v, p, RM), p)
    }
}

impl Sub for ScaledReal {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let p = self.op_bits(&rhs);
        ScaledReal::at(self.v.sub(&rhs.v, p, RM), p)
    }
}

impl Mul for ScaledReal {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let p = self.op_bits(&rhs);
        ScaledReal::at(self.v.mul(&rhs.v, p, RM), p)
    }
}

impl Div for ScaledReal {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let p = self.op_bits(&rhs);
        ScaledReal::at(self.v.div(&rhs.v, p, RM), p)
    }
}

impl Rem for ScaledReal {
    type Output = Self;
    fn rem(self, rhs: Self) -> Self {
        let p = self.op_bits(&rhs);
        ScaledReal::at(self.v.rem(&rhs.v), p)
    }
}

impl Neg for ScaledReal {
    type Output = Self;
    fn neg(self) -> Self {
        ScaledReal::at(self.v.neg(), self.bits)
    }
}

impl Zero for ScaledReal {
    fn zero() -> Self {
        ScaledReal::at(BigFloat::from_word(0, MIN_BITS), MIN_BITS)
    }
    fn is_zero(&self) -> bool {
        self.v.is_zero()
    }
}

impl One for ScaledReal {
    fn one() -> Self {
        ScaledReal::at(BigFloat::from_word(1, MIN_BITS), MIN_BITS)
    }
}

impl Num for ScaledReal {
    type FromStrRadixErr = Error;

    fn from_str_radix(s: &str, radix: u32) -> Result<Self> {
        if radix != 10 {
            return Err(Error::Parse(format!("radix {radix} unsupported")));
        }
        let b = with_consts(|cc| BigFloat::parse(s, Radix::Dec, DEFAULT_BITS, RM, cc));
        if b.is_nan() {
            return Err(Error::Parse(s.to_string()));
        }
        Ok(ScaledReal::at(b, DEFAULT_BITS))
    }
}

impl Real for ScaledReal {
    fn from_f64_prec(x: f64, bits: usize) -> Self {
        ScaledReal::new(x, bits)
    }

    fn precision(&self) -> usize {
        self.bits()
    }

    fn to_f64(&self) -> f64 {
        if self.v.is_nan() {
            return f64::NAN;
        }
        if self.v.is_inf() {
            return if self.v.is_inf_pos() {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
        }
        let (m, e) = self.frexp();
        ldexp_f64(m, e)
    }

    fn frexp(&self) -> (f64, i64) {
        if self.v.is_zero() || !self.is_finite() {
            return (0.0, 0);
        }
        let words = match self.v.mantissa_digits() {
            Some(w) => w,
            None => return (0.0, 0),
        };
        let top = *words.last().unwrap_or(&0);
        let next = if words.len() >= 2 {
            words[words.len() - 2]
        } else {
            0
        };
        // Mantissa is 0.[top][next].. in binary; 128 bits are plenty for a double.
        let m = top as f64 / 2f64.powi(64) + next as f64 / 2f64.powi(128);
        let sign = if self.v.is_negative() { -1.0 } else { 1.0 };
        let e = self.v.exponent().unwrap_or(0) as i64;
        // A subnormal mantissa is not normalized; renormalize through frexp_f64.
        let (mm, shift) = frexp_f64(m);
        (sign * mm, e + shift)
    }

    fn ldexp(&self, k: i64) -> Self {
        if self.v.is_zero() || !self.is_finite() {
            return self.clone();
        }
        let e = self.v.exponent().unwrap_or(0) as i64 + k;
        if e > astro_float::EXPONENT_MAX as i64 {
            return if self.v.is_negative() {
                -Self::infinity()
            } else {
                Self::infinity()
            };
        }
        if e < astro_float::EXPONENT_MIN as i64 {
            return Self::from_f64_prec(0.0, self.bits);
        }
        let mut b = self.v.clone();
        b.set_exponent(e as i32);
        ScaledReal::at(b, self.bits)
    }

    fn ln(&self) -> Self {
        let p = self.bits();
        ScaledReal::at(with_consts(|cc| self.v.ln(p, RM, cc)), p)
    }

    fn exp(&self) -> Self {
        let p = self.bits();
        ScaledReal::at(with_consts(|cc| self.v.exp(p, RM, cc)), p)
    }

    fn sqrt(&self) -> Self {
        ScaledReal::at(self.v.sqrt(self.bits, RM), self.bits)
    }

    fn abs(&self) -> Self {
        ScaledReal::at(self.v.abs(), self.bits)
    }

    fn infinity() -> Self {
        ScaledReal::at(INF_POS, MIN_BITS)
    }

    fn is_finite(&self) -> bool {
        !self.v.is_inf() && !self.v.is_nan()
    }

    fn is_degenerate(&self) -> bool {
        self.v.is_zero() || self.v.is_subnormal()
    }

    fn to_decimal(&self) -> Decimal {
        if self.v.is_nan() {
            return Decimal::special("nan");
        }
        if self.v.is_inf() {
            return Decimal::special(if self.v.is_inf_pos() { "inf" } else { "-inf" });
        }
        if self.v.is_zero() {
            return Decimal::special("0");
        }
        let (sign, digits, exp) =
            match with_consts(|cc| self.v.convert_to_radix(Radix::Dec, RM, cc)) {
                Ok(parts) => parts,
                Err(_) => return Decimal::special("nan"),
            };
        let end = digits.iter().rposition(|&d| d != 0).map_or(0, |i| i + 1);
        let digits = &digits[..end];
        if digits.is_empty() {
            return Decimal::special("0");
        }
        let mut m = String::with_capacity(digits.len() + 2);
        if sign == Sign::Neg {
            m.push('-');
        }
        m.push(char::from(b'0' + digits[0]));
        if digits.len() > 1 {
            m.push('.');
            m.extend(digits[1..].iter().map(|&d| char::from(b'0' + d)));
        }
        Decimal {
            m,
            e: exp as i64 - 1,
        }
    }

    fn from_decimal(d: &Decimal, bits: usize) -> Result<Self> {
        match d.m.as_str() {
            "inf" => return Ok(Self::infinity()),
            "-inf" => return Ok(-Self::infinity()),
            "0" => return Ok(Self::from_f64_prec(0.0, bits)),
            _ => {}
        }
        let text = format!("{}e{}", d.m, d.e);
        let b = with_consts(|cc| BigFloat::parse(&text, Radix::Dec, bits.max(MIN_BITS), RM, cc));
        if b.is_nan() {
            return Err(Error::Parse(text));
        }
        Ok(ScaledReal::at(b, bits.max(MIN_BITS)))
    }
}

/// Number of significant decimal digits that reproduce a `bits`-bit mantissa.
pub fn decimal_digits_for_bits(bits: usize) -> usize {
    (bits as f64 * std::f64::consts::LOG10_2).ceil() as usize + 1
}

/// Serde adapter: any [`Real`] as a [`Decimal`].
pub fn ser_real<T: Real, S: serde::Serializer>(x: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    x.to_decimal().serialize(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frexp_ldexp_agree_for_doubles() {
        for x in [1.0, -3.5, 1e-300, 7e300, 2.5e-320] {
            let (m, e) = Real::frexp(&x);
            assert!((0.5..1.0).contains(&m.abs()), "{x}: {m}");
            assert_eq!(ldexp_f64(m, e), x);
        }
        assert_eq!(Real::frexp(&0.0f64), (0.0, 0));
    }

    #[test]
    fn scaled_frexp_matches_double() {
        for x in [1.0, -3.5, 1e-300, 7e300, 0.1] {
            let s = ScaledReal::new(x, 512);
            assert_eq!(s.frexp(), Real::frexp(&x));
            assert_eq!(s.to_f64(), x);
        }
    }

    #[test]
    fn scaled_reaches_below_double_range() {
        let tiny = ScaledReal::new(1e-300, 512) * ScaledReal::new(1e-300, 512);
        assert!(!tiny.is_degenerate());
        assert_eq!(tiny.to_f64(), 0.0);
        let l = tiny.ln_abs_f64();
        assert!((l - (-600.0 * std::f64::consts::LN_10)).abs() < 1e-10);
        let back = ScaledReal::from_ln_f64(l, 512);
        assert!(back.rel_diff(&tiny) < 1e-12);
        assert!((1e-300f64 * 1e-300).is_degenerate());
    }

    #[test]
    fn zeros_keep_precision() {
        let z = ScaledReal::new(0.0, 512);
        assert_eq!(z.precision(), 512);
        assert_eq!(z.exp(), ScaledReal::new(1.0, 512));
        assert_eq!(z.cst(1.0).precision(), 512);
        let third = z.cst(1.0) / z.cst(3.0);
        assert!(third.rel_diff(&(ScaledReal::new(1.0, 512) / ScaledReal::new(3.0, 512))) == 0.0);
    }

    #[test]
    fn precision_is_max_of_operands() {
        let a = ScaledReal::new(1.0, 512);
        let third = ScaledReal::one() / ScaledReal::new(3.0, 512);
        assert_eq!(third.precision(), 512);
        let sum = a + ScaledReal::one();
        assert_eq!(sum.precision(), 512);
    }

    #[test]
    fn decimal_round_trip_at_writing_precision() {
        let x = ScaledReal::new(-800.5, 512).exp() / ScaledReal::new(3.0, 512);
        let d = x.to_decimal();
        assert_eq!(ScaledReal::from_decimal(&d, 512).unwrap(), x);
        assert_eq!(ScaledReal::from_decimal(&Decimal::special("0"), 512).unwrap(), ScaledReal::zero());
        let y = 1.0f64 / 3.0;
        assert_eq!(f64::from_decimal(&y.to_decimal(), 53).unwrap(), y);
    }

    #[test]
    fn truncated_display() {
        let d = Decimal {
            m: "-1.23456".into(),
            e: -7,
        };
        assert_eq!(d.to_sci_digits(3), "-1.23e-7");
        assert_eq!(d.to_sci_digits(1), "-1e-7");
    }
}
