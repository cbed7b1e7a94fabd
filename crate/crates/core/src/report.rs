//! Byte-reproducible output helpers: fixed-precision floats, `num/den` rationals.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::exact::{parse_rat, rat_str, Rational};

/// Significant digits written for floats; enough to round-trip binary64.
pub const FLOAT_DIGITS: usize = 17;

/// Float in scientific notation with [`FLOAT_DIGITS`] significant digits.
pub fn fixed(x: f64) -> String {
    if x.is_finite() {
        format!("{:.*e}", FLOAT_DIGITS - 1, x)
    } else {
        x.to_string()
    }
}

/// `f64` that serializes rounded to [`FLOAT_DIGITS`] significant digits.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Fixed(pub f64);

impl Serialize for Fixed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            let r: f64 = fixed(self.0).parse().expect("formatted float parses");
            s.serialize_f64(r)
        } else {
            s.serialize_str(&self.0.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for Fixed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        Ok(Fixed(match Repr::deserialize(d)? {
            Repr::Num(x) => x,
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom)?,
        }))
    }
}

impl From<f64> for Fixed {
    fn from(x: f64) -> Self {
        Fixed(x)
    }
}

/// Rational that serializes as a `"num/den"` string.
#[derive(Clone, Debug, PartialEq)]
pub struct RatStr(pub Rational);

impl Serialize for RatStr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&rat_str(&self.0))
    }
}

pub fn rat_strs(v: &[Rational]) -> Vec<String> {
    v.iter().map(rat_str).collect()
}

/// `#[serde(with = "rational")]` for a `Rational` field.
pub mod rational {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&rat_str(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let s = String::deserialize(d)?;
        parse_rat(&s).map_err(serde::de::Error::custom)
    }
}

/// `#[serde(with = "rationals")]` for a `Vec<Rational>` field.
pub mod rationals {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Rational], s: S) -> Result<S::Ok, S::Error> {
        rat_strs(v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Rational>, D::Error> {
        let v = Vec::<String>::deserialize(d)?;
        v.iter()
            .map(|s| parse_rat(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// `#[serde(with = "opt_rational")]` for an `Option<Rational>` field.
pub mod opt_rational {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
        r.as_ref().map(rat_str).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Rational>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| parse_rat(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::rat;

    #[test]
    fn fixed_is_stable() {
        assert_eq!(fixed(0.1), "1.0000000000000001e-1");
        let third = serde_json::to_string(&Fixed(1.0 / 3.0)).unwrap();
        assert_eq!(third, "0.3333333333333333");
        assert_eq!(serde_json::from_str::<Fixed>(&third).unwrap(), Fixed(1.0 / 3.0));
        assert_eq!(serde_json::to_string(&RatStr(rat(2, 4))).unwrap(), "\"1/2\"");
    }
}
