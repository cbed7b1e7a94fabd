//! Targets in the simplex: a single point or a polygonal path swept back and forth.

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{parse_rat, rat_str, rat_u, Rational};

#[derive(Clone, Debug, PartialEq)]
pub enum TargetSpec {
    Point(Vec<Rational>),
    Polyline(Vec<Vec<Rational>>),
}

/// Serialized form: rationals as `"num/den"` strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetDoc {
    pub kind: String,
    pub vertices: Vec<Vec<String>>,
}

fn parse_vec(s: &str) -> Result<Vec<Rational>> {
    s.split(',').map(parse_rat).collect()
}

impl TargetSpec {
    /// `"0.5,0.25,0.25"` or `"1/2,1/4,1/4"`.
    pub fn parse_point(s: &str) -> Result<Self> {
        Ok(TargetSpec::Point(parse_vec(s)?))
    }

    /// Vertices separated by `;`, e.g. `"1,0,0;0,1,0"`.
    pub fn parse_polyline(s: &str) -> Result<Self> {
        Ok(TargetSpec::Polyline(
            s.split(';').map(parse_vec).collect::<Result<_>>()?,
        ))
    }

    pub fn vertices(&self) -> Vec<Vec<Rational>> {
        match self {
            TargetSpec::Point(p) => vec![p.clone()],
            TargetSpec::Polyline(v) => v.clone(),
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, TargetSpec::Point(_))
    }

    /// Every vertex lies on the simplex of dimension `d` (exactly).
    pub fn validate(&self, d: usize) -> Result<()> {
        let vs = self.vertices();
        if vs.is_empty() {
            return Err(Error::InvalidTarget("no vertices".into()));
        }
        for v in &vs {
            if v.len() != d {
                return Err(Error::InvalidTarget(format!(
                    "vertex has {} coordinates, expected {d}",
                    v.len()
                )));
            }
            if v.iter().any(|x| x.is_negative()) {
                return Err(Error::InvalidTarget("negative coordinate".into()));
            }
            let sum: Rational = v.iter().sum();
            if !sum.is_one() {
                return Err(Error::InvalidTarget(format!(
                    "coordinates sum to {}, not 1",
                    rat_str(&sum)
                )));
            }
        }
        Ok(())
    }

    /// The first `count` target points: the point itself, or back-and-forth
    /// sweeps of the path with the step halved on every sweep.
    pub fn sequence(&self, count: usize) -> Vec<Vec<Rational>> {
        match self {
            TargetSpec::Point(p) => vec![p.clone(); count],
            TargetSpec::Polyline(vs) => {
                if vs.len() == 1 {
                    return vec![vs[0].clone(); count];
                }
                let span = rat_u(vs.len() as u64 - 1, 1);
                let mut out = Vec::with_capacity(count);
                let mut u = Rational::zero();
                out.push(point_at(vs, &u));
                let mut sweep = 0u32;
                while out.len() < count {
                    let step = Rational::new(1.into(), num_traits::pow(2.into(), sweep as usize));
                    let forward = sweep % 2 == 0;
                    loop {
                        if out.len() >= count {
                            break;
                        }
                        if forward {
                            if u >= span {
                                break;
                            }
                            u = (&u + &step).min(span.clone());
                        } else {
                            if u.is_zero() {
                                break;
                            }
                            let next = &u - &step;
                            u = if next.is_negative() { Rational::zero() } else { next };
                        }
                        out.push(point_at(vs, &u));
                    }
                    sweep += 1;
                }
                out
            }
        }
    }

    pub fn to_doc(&self) -> TargetDoc {
        TargetDoc {
            kind: if self.is_point() { "point" } else { "polyline" }.into(),
            vertices: self
                .vertices()
                .iter()
                .map(|v| v.iter().map(rat_str).collect())
                .collect(),
        }
    }

    pub fn from_doc(doc: &TargetDoc) -> Result<Self> {
        let vs: Vec<Vec<Rational>> = doc
            .vertices
            .iter()
            .map(|v| v.iter().map(|x| parse_rat(x)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        match doc.kind.as_str() {
            "point" if vs.len() == 1 => Ok(TargetSpec::Point(vs.into_iter().next().unwrap())),
            "polyline" => Ok(TargetSpec::Polyline(vs)),
            k => Err(Error::InvalidTarget(format!("unknown target kind {k:?}"))),
        }
    }
}

/// Point at path parameter `u ∈ [0, V−1]` (segment index plus fraction).
fn point_at(vs: &[Vec<Rational>], u: &Rational) -> Vec<Rational> {
    let seg = u.floor();
    let k = seg.to_integer();
    let k: usize = k.try_into().unwrap_or(0);
    if k + 1 >= vs.len() {
        return vs[vs.len() - 1].clone();
    }
    let f = u - &seg;
    vs[k]
        .iter()
        .zip(&vs[k + 1])
        .map(|(a, b)| a + (b - a) * &f)
        .collect()
}
