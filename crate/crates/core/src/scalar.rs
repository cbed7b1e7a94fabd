//! Scalar abstraction used by the map evaluator.
//!
//! `f32`/`f64` are the working precisions; [`BigReal`] wraps an MPFR float and is
//! used for long orbit replays where binary64 runs out of bits.

use std::cell::Cell;
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

use num_traits::{Num, One, Zero};
use rug::ops::Pow;
use rug::Float;

pub trait Real:
    Num + Clone + PartialOrd + Neg<Output = Self> + fmt::Debug + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn abs(&self) -> Self;
    fn ln(&self) -> Self;
    /// `self^e` for `self >= 0`.
    fn powr(&self, e: &Self) -> Self;
    /// Unit roundoff of the representation.
    fn epsilon() -> Self;

    fn half() -> Self {
        Self::from_f64(0.5)
    }
    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }
    fn min_of(a: Self, b: Self) -> Self {
        if a <= b {
            a
        } else {
            b
        }
    }
}

macro_rules! impl_real_prim {
    ($t:ty) => {
        impl Real for $t {
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(&self) -> f64 {
                *self as f64
            }
            fn abs(&self) -> Self {
                <$t>::abs(*self)
            }
            fn ln(&self) -> Self {
                <$t>::ln(*self)
            }
            fn powr(&self, e: &Self) -> Self {
                if *e == 3.0 {
                    self * self * self
                } else if *e == 2.0 {
                    self * self
                } else {
                    <$t>::powf(*self, *e)
                }
            }
            fn epsilon() -> Self {
                <$t>::EPSILON
            }
        }
    };
}

impl_real_prim!(f32);
impl_real_prim!(f64);

thread_local! {
    static BIG_PREC: Cell<u32> = const { Cell::new(256) };
}

/// Sets the precision (bits) used by `BigReal` constructors on this thread.
pub fn set_big_precision(bits: u32) {
    BIG_PREC.with(|p| p.set(bits.max(64)));
}

pub fn big_precision() -> u32 {
    BIG_PREC.with(|p| p.get())
}

/// Arbitrary-precision real; precision taken from the thread setting at creation.
#[derive(Clone, PartialEq)]
pub struct BigReal(pub Float);

impl BigReal {
    pub fn new(x: f64) -> Self {
        BigReal(Float::with_val(big_precision(), x))
    }
    pub fn inner(&self) -> &Float {
        &self.0
    }
}

impl fmt::Debug for BigReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.20e}", self.0.to_f64())
    }
}

impl PartialOrd for BigReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

macro_rules! big_binop {
    ($tr:ident, $m:ident, $op:tt) => {
        impl $tr for BigReal {
            type Output = BigReal;
            fn $m(self, rhs: BigReal) -> BigReal {
                BigReal(self.0 $op rhs.0)
            }
        }
    };
}
big_binop!(Add, add, +);
big_binop!(Sub, sub, -);
big_binop!(Mul, mul, *);
big_binop!(Div, div, /);

impl Rem for BigReal {
    type Output = BigReal;
    fn rem(self, rhs: BigReal) -> BigReal {
        let q = (self.0.clone() / &rhs.0).trunc();
        BigReal(self.0 - q * rhs.0)
    }
}

impl Neg for BigReal {
    type Output = BigReal;
    fn neg(self) -> BigReal {
        BigReal(-self.0)
    }
}

impl Zero for BigReal {
    fn zero() -> Self {
        BigReal::new(0.0)
    }
    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl One for BigReal {
    fn one() -> Self {
        BigReal::new(1.0)
    }
}

impl Num for BigReal {
    type FromStrRadixErr = rug::float::ParseFloatError;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        let parsed = Float::parse_radix(s, radix as i32)?;
        Ok(BigReal(Float::with_val(big_precision(), parsed)))
    }
}

impl Real for BigReal {
    fn from_f64(x: f64) -> Self {
        BigReal::new(x)
    }
    fn to_f64(&self) -> f64 {
        self.0.to_f64()
    }
    fn abs(&self) -> Self {
        BigReal(self.0.clone().abs())
    }
    fn ln(&self) -> Self {
        BigReal(self.0.clone().ln())
    }
    fn powr(&self, e: &Self) -> Self {
        if e.0.is_integer() && e.0 >= 0 && e.0 <= 64 {
            let k = e.0.to_u32_saturating().unwrap_or(0);
            BigReal(self.0.clone().pow(k))
        } else {
            BigReal(self.0.clone().pow(&e.0))
        }
    }
    fn epsilon() -> Self {
        let p = big_precision() as i32;
        BigReal(Float::with_val(big_precision(), Float::i_exp(1, 1 - p)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn big_arithmetic_matches_f64() {
        set_big_precision(200);
        let a = BigReal::from_f64(0.25);
        let b = BigReal::from_f64(3.0);
        let c = a.clone() * b.clone() + BigReal::one();
        assert_eq!(c.to_f64(), 1.75);
        assert_eq!(a.powr(&b).to_f64(), 0.015625);
        assert!(BigReal::epsilon().to_f64() < 1e-59);
        let r = BigReal::from_f64(7.0) % BigReal::from_f64(3.0);
        assert_eq!(r.to_f64(), 1.0);
    }

    #[test]
    fn prim_power_fast_path() {
        assert_eq!(Real::powr(&2.0f64, &3.0), 8.0);
        assert!((Real::powr(&2.0f32, &2.5) - 5.656854).abs() < 1e-5);
    }
}
