//! Exact rational helpers: ratio vectors, max-norm balls, string forms.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rational = BigRational;

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_u(n: u64, d: u64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

/// `"num/den"` (always with a denominator).
pub fn rat_str(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn parse_rat(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Input(format!("not a rational: {s:?}"));
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(bad());
        }
        Ok(Rational::new(n, d))
    } else if let Some((ip, fp)) = s.split_once('.') {
        // finite decimal, read exactly
        let neg = ip.starts_with('-');
        let digits = format!("{}{}", ip.trim_start_matches('-'), fp);
        let n: BigInt = digits.parse().map_err(|_| bad())?;
        let d = num_traits::pow(BigInt::from(10), fp.len());
        let r = Rational::new(n, d);
        Ok(if neg { -r } else { r })
    } else {
        let n: BigInt = s.parse().map_err(|_| bad())?;
        Ok(Rational::from_integer(n))
    }
}

pub fn rat_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Exact ratio vector `tau_vec / tau`.
pub fn ratio_vec(tau_vec: &[u64], tau: u64) -> Vec<Rational> {
    tau_vec.iter().map(|&t| rat_u(t, tau)).collect()
}

pub fn max_dist(a: &[Rational], b: &[Rational]) -> Rational {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(Rational::zero(), |m, v| if v > m { v } else { m })
}

/// Rational `num/den` with machine-integer parts, for hot comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SmallRat {
    pub num: i128,
    pub den: i128,
}

impl SmallRat {
    pub fn from_rational(r: &Rational) -> Option<Self> {
        Some(SmallRat {
            num: r.numer().to_i128()?,
            den: r.denom().to_i128()?,
        })
    }
}

/// Open max-norm ball `{ r : |r_j − c_j| < radius ∀j }` evaluated on integer
/// ratio data without allocation.
#[derive(Clone, Debug)]
pub struct RatioBall {
    pub center: Vec<Rational>,
    pub radius: Rational,
    lo: Vec<SmallRat>,
    hi: Vec<SmallRat>,
}

impl RatioBall {
    pub fn new(center: Vec<Rational>, radius: Rational) -> Result<Self> {
        if !radius.is_positive() {
            return Err(Error::Input("ball radius must be positive".into()));
        }
        let conv = |r: Rational| {
            SmallRat::from_rational(&r).ok_or_else(|| Error::Input("ball bounds too large".into()))
        };
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for c in &center {
            lo.push(conv(c - &radius)?);
            hi.push(conv(c + &radius)?);
        }
        Ok(RatioBall {
            center,
            radius,
            lo,
            hi,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `tau_vec / tau` lies in the open ball.
    pub fn contains(&self, tau_vec: &[u64], tau: u64) -> bool {
        let t = tau as i128;
        tau_vec.iter().enumerate().all(|(j, &v)| {
            let v = v as i128;
            v * self.lo[j].den > self.lo[j].num * t && v * self.hi[j].den < self.hi[j].num * t
        })
    }

    /// `x / y > lo_j` for coordinate `j`.
    pub fn above_lo(&self, j: usize, x: i128, y: i128) -> bool {
        x * self.lo[j].den > self.lo[j].num * y
    }
    /// `x / y < hi_j` for coordinate `j`.
    pub fn below_hi(&self, j: usize, x: i128, y: i128) -> bool {
        x * self.hi[j].den < self.hi[j].num * y
    }

    pub fn contains_rational(&self, r: &[Rational]) -> bool {
        max_dist(r, &self.center) < self.radius
    }
}

pub fn one() -> Rational {
    Rational::one()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(parse_rat("3/8").unwrap(), rat(3, 8));
        assert_eq!(parse_rat("0.25").unwrap(), rat(1, 4));
        assert_eq!(parse_rat("-0.5").unwrap(), rat(-1, 2));
        assert_eq!(parse_rat("2").unwrap(), rat(2, 1));
        assert!(parse_rat("1/0").is_err());
        assert_eq!(rat_str(&rat(6, 8)), "3/4");
    }

    #[test]
    fn ball_matches_rational_check() {
        let b = RatioBall::new(vec![rat(1, 2), rat(1, 4), rat(1, 4)], rat(1, 5)).unwrap();
        assert!(b.contains(&[4, 2, 2], 9));
        // (3/8, 3/8, 0): 1/4 off in the last coordinate
        assert!(!b.contains(&[3, 3, 0], 8));
        for tv in [[1u64, 1, 1], [5, 2, 1], [3, 1, 1]] {
            let t: u64 = tv.iter().sum::<u64>() + 2;
            assert_eq!(b.contains(&tv, t), b.contains_rational(&ratio_vec(&tv, t)));
        }
    }
}
