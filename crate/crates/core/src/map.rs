//! Piecewise full-branch interval maps with neutral fixed points.
//!
//! Every branch has the form `x ↦ x + c·(x − ξ)^κ` (odd power extension, so the
//! branch is increasing on both sides of its centre). A branch whose centre lies
//! inside its domain carries a neutral fixed point; otherwise it is uniformly
//! expanding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

const ENDPOINT_TOL: f64 = 1e-12;
const FIXED_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Branch<T> {
    pub lo: T,
    pub hi: T,
    pub c: T,
    pub xi: T,
    pub kappa: T,
}

impl<T: Real> Branch<T> {
    /// Signed power `sign(u)|u|^κ` and `|u|^(κ-1)`.
    fn powers(&self, x: &T) -> (T, T) {
        let u = x.clone() - self.xi.clone();
        let au = u.abs();
        let p1 = au.powr(&(self.kappa.clone() - T::one()));
        let p = p1.clone() * u;
        (p, p1)
    }

    pub fn value(&self, x: &T) -> T {
        let (p, _) = self.powers(x);
        x.clone() + self.c.clone() * p
    }

    pub fn deriv(&self, x: &T) -> T {
        let (_, p1) = self.powers(x);
        T::one() + self.c.clone() * self.kappa.clone() * p1
    }

    pub fn value_deriv(&self, x: &T) -> (T, T) {
        let (p, p1) = self.powers(x);
        (
            x.clone() + self.c.clone() * p,
            T::one() + self.c.clone() * self.kappa.clone() * p1,
        )
    }

    /// `f''` (sign follows `x − ξ`).
    pub fn second_deriv(&self, x: &T) -> T {
        let u = x.clone() - self.xi.clone();
        let au = u.abs();
        let k = self.kappa.clone();
        let mag = self.c.clone() * k.clone() * (k.clone() - T::one())
            * au.powr(&(k - T::from_f64(2.0)));
        if u < T::zero() {
            -mag
        } else {
            mag
        }
    }

    pub fn is_neutral(&self) -> bool {
        self.xi >= self.lo && self.xi <= self.hi
    }

    pub fn image(&self) -> (T, T) {
        (self.value(&self.lo), self.value(&self.hi))
    }

    /// Inverse to working precision by bracketed Newton.
    pub fn inverse(&self, y: &T) -> T {
        let (mut a, mut b) = (self.lo.clone(), self.hi.clone());
        // f^{-1}(y) ≈ y − c(y − ξ)^κ near the centre; clamp into the domain
        let mut x = y.clone() - self.c.clone() * self.powers(y).0;
        if !(x > a && x < b) {
            x = (a.clone() + b.clone()) * T::half();
        }
        let eps = T::epsilon();
        let floor = eps.clone() * eps.clone() * eps.clone();
        for _ in 0..400 {
            let (fx, dfx) = self.value_deriv(&x);
            let r = fx - y.clone();
            if r == T::zero() {
                return x;
            }
            if r > T::zero() {
                b = x.clone();
            } else {
                a = x.clone();
            }
            let dx = r / dfx;
            let mut xn = x.clone() - dx.clone();
            if !(xn > a && xn < b) {
                xn = (a.clone() + b.clone()) * T::half();
            }
            let step = (xn.clone() - x.clone()).abs();
            x = xn;
            if step <= eps.clone() * (x.abs() + floor.clone()) || b.clone() - a.clone() <= floor {
                break;
            }
        }
        T::max_of(self.lo.clone(), T::min_of(self.hi.clone(), x))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPoint<T> {
    pub xi: T,
    /// Leading coefficient of `f(x) − x` at the fixed point.
    pub b: T,
    pub branch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapSpec<T> {
    branches: Vec<Branch<T>>,
    fixed_points: Vec<FixedPoint<T>>,
    expanding: Vec<usize>,
    alpha: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchDoc {
    pub lo: f64,
    pub hi: f64,
    pub c: f64,
    pub xi: f64,
    pub kappa: f64,
}

/// JSON form of a map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapDoc {
    pub branches: Vec<BranchDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl MapSpec<f64> {
    /// The three-branch cubic map with coefficients 18, 72, 18.
    pub fn example() -> Self {
        let third = 1.0 / 3.0;
        let two_thirds = 2.0 / 3.0;
        let br = |lo, hi, c, xi| Branch {
            lo,
            hi,
            c,
            xi,
            kappa: 3.0,
        };
        Self::new(
            vec![
                br(0.0, third, 18.0, 0.0),
                br(third, two_thirds, 72.0, 0.5),
                br(two_thirds, 1.0, 18.0, 1.0),
            ],
            Some(0.5),
        )
        .expect("example map is valid")
    }

    /// `d` equal-width branches, one neutral fixed point each, coefficients forced
    /// by the full-branch condition.
    pub fn thaler(d: usize, kappa: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidMap(format!("need d >= 2, got {d}")));
        }
        if !(kappa > 2.0) || !kappa.is_finite() {
            return Err(Error::InvalidMap(format!(
                "exponent {kappa} gives alpha outside (0,1)"
            )));
        }
        let mut branches = Vec::with_capacity(d);
        for i in 0..d {
            let lo = i as f64 / d as f64;
            let hi = if i + 1 == d { 1.0 } else { (i + 1) as f64 / d as f64 };
            let (xi, c) = if i == 0 {
                (0.0, (1.0 - hi) / hi.powf(kappa))
            } else if i + 1 == d {
                (1.0, lo / (1.0 - lo).powf(kappa))
            } else {
                let r = ((1.0 - hi) / lo).powf(1.0 / kappa);
                let xi = (hi + r * lo) / (1.0 + r);
                (xi, lo / (xi - lo).powf(kappa))
            };
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidMap(format!("continuity system infeasible on branch {i}")));
            }
            branches.push(Branch { lo, hi, c, xi, kappa });
        }
        Self::new(branches, None)
    }

    pub fn from_doc(doc: &MapDoc) -> Result<Self> {
        let branches = doc
            .branches
            .iter()
            .map(|b| Branch {
                lo: b.lo,
                hi: b.hi,
                c: b.c,
                xi: b.xi,
                kappa: b.kappa,
            })
            .collect();
        Self::new(branches, doc.alpha)
    }

    pub fn to_doc(&self) -> MapDoc {
        MapDoc {
            branches: self
                .branches
                .iter()
                .map(|b| BranchDoc {
                    lo: b.lo,
                    hi: b.hi,
                    c: b.c,
                    xi: b.xi,
                    kappa: b.kappa,
                })
                .collect(),
            alpha: Some(self.alpha),
        }
    }

    /// Same map in another scalar type (parameters converted from binary64).
    pub fn cast<T: Real>(&self) -> MapSpec<T> {
        self.cast_with(|x| T::from_f64(x))
    }

    /// Like [`cast`](Self::cast), but parameters within a few ulp of a rational
    /// with denominator at most 64 are rebuilt from that rational in `T`.
    pub fn cast_snapped<T: Real>(&self) -> MapSpec<T> {
        self.cast_with(snap::<T>)
    }

    fn cast_with<T: Real>(&self, cv: impl Fn(f64) -> T) -> MapSpec<T> {
        MapSpec {
            branches: self
                .branches
                .iter()
                .map(|b| Branch {
                    lo: cv(b.lo),
                    hi: cv(b.hi),
                    c: cv(b.c),
                    xi: cv(b.xi),
                    kappa: cv(b.kappa),
                })
                .collect(),
            fixed_points: self
                .fixed_points
                .iter()
                .map(|p| FixedPoint {
                    xi: cv(p.xi),
                    b: cv(p.b),
                    branch: p.branch,
                })
                .collect(),
            expanding: self.expanding.clone(),
            alpha: cv(self.alpha),
        }
    }
}

fn snap<T: Real>(x: f64) -> T {
    for q in 1..=64u32 {
        let p = (x * q as f64).round();
        if (p / q as f64 - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return T::from_f64(p) / T::from_f64(q as f64);
        }
    }
    T::from_f64(x)
}

impl<T: Real> MapSpec<T> {
    pub fn new(branches: Vec<Branch<T>>, alpha: Option<f64>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidMap("no branches".into()));
        }
        let tol = T::from_f64(ENDPOINT_TOL);
        if (branches[0].lo.clone()).abs() > tol
            || (branches[branches.len() - 1].hi.clone() - T::one()).abs() > tol
        {
            return Err(Error::InvalidMap("branch domains must cover [0,1]".into()));
        }
        for (i, b) in branches.iter().enumerate() {
            if !(b.lo < b.hi) {
                return Err(Error::InvalidMap(format!("branch {i} has empty domain")));
            }
            if !(b.c > T::zero()) {
                return Err(Error::InvalidMap(format!("branch {i} has c <= 0")));
            }
            if !(b.kappa > T::from_f64(2.0)) {
                return Err(Error::InvalidMap(format!(
                    "branch {i}: exponent {:?} gives alpha outside (0,1)",
                    b.kappa
                )));
            }
            if i > 0 && (b.lo.clone() - branches[i - 1].hi.clone()).abs() > tol {
                return Err(Error::InvalidMap(format!("gap before branch {i}")));
            }
            let (ya, yb) = b.image();
            if ya.abs() > tol || (yb - T::one()).abs() > tol {
                return Err(Error::InvalidMap(format!(
                    "branch {i} is not full: image ({:?}, {:?})",
                    b.value(&b.lo),
                    b.value(&b.hi)
                )));
            }
        }
        let mut fixed_points = Vec::new();
        let mut expanding = Vec::new();
        let mut kappa: Option<T> = None;
        for (i, b) in branches.iter().enumerate() {
            if b.is_neutral() {
                if let Some(k) = &kappa {
                    if (k.clone() - b.kappa.clone()).abs() > T::from_f64(1e-12) {
                        return Err(Error::InvalidMap(
                            "neutral fixed points must share one exponent".into(),
                        ));
                    }
                } else {
                    kappa = Some(b.kappa.clone());
                }
                let f = b.value(&b.xi);
                let df = b.deriv(&b.xi);
                let ft = T::from_f64(FIXED_TOL);
                if (f - b.xi.clone()).abs() > ft || (df - T::one()).abs() > ft {
                    return Err(Error::InvalidMap(format!("branch {i} centre is not neutral")));
                }
                fixed_points.push(FixedPoint {
                    xi: b.xi.clone(),
                    b: b.c.clone(),
                    branch: i,
                });
            } else {
                expanding.push(i);
            }
        }
        let kappa = kappa.ok_or_else(|| Error::InvalidMap("no neutral fixed point".into()))?;
        let derived = T::one() / (kappa - T::one());
        let alpha = match alpha {
            Some(a) => {
                let a = T::from_f64(a);
                if (a.clone() - derived.clone()).abs() > T::from_f64(1e-9) {
                    return Err(Error::InvalidMap(format!(
                        "alpha {:?} inconsistent with exponent (expected {:?})",
                        a, derived
                    )));
                }
                a
            }
            None => derived,
        };
        Ok(MapSpec {
            branches,
            fixed_points,
            expanding,
            alpha,
        })
    }

    pub fn branches(&self) -> &[Branch<T>] {
        &self.branches
    }
    pub fn branch(&self, i: usize) -> &Branch<T> {
        &self.branches[i]
    }
    pub fn fixed_points(&self) -> &[FixedPoint<T>] {
        &self.fixed_points
    }
    /// Number of neutral fixed points.
    pub fn d(&self) -> usize {
        self.fixed_points.len()
    }
    /// Number of uniformly expanding branches.
    pub fn d_prime(&self) -> usize {
        self.expanding.len()
    }
    pub fn expanding(&self) -> &[usize] {
        &self.expanding
    }
    pub fn alpha(&self) -> &T {
        &self.alpha
    }
    /// Fixed-point index carried by branch `i`, if neutral.
    pub fn neutral_index(&self, branch: usize) -> Option<usize> {
        self.fixed_points.iter().position(|p| p.branch == branch)
    }

    /// Index of the branch containing `x` (half-open domains, last one closed).
    pub fn branch_of(&self, x: &T) -> Result<usize> {
        if !(*x >= T::zero() && *x <= T::one()) {
            return Err(Error::OutOfDomain(x.to_f64()));
        }
        let n = self.branches.len();
        // few branches: a linear scan beats anything clever
        for (i, b) in self.branches.iter().enumerate() {
            if *x < b.hi || i + 1 == n {
                return Ok(i);
            }
        }
        Ok(n - 1)
    }

    pub fn eval(&self, x: &T) -> Result<T> {
        let i = self.branch_of(x)?;
        Ok(self.branches[i].value(x))
    }

    /// `(f(x), f'(x), branch)`.
    pub fn eval_with_deriv(&self, x: &T) -> Result<(T, T, usize)> {
        let i = self.branch_of(x)?;
        let (f, df) = self.branches[i].value_deriv(x);
        Ok((f, df, i))
    }

    pub fn branch_inverse(&self, branch: usize, y: &T, tol: &T) -> Result<T> {
        let b = self
            .branches
            .get(branch)
            .ok_or_else(|| Error::Input(format!("no branch {branch}")))?;
        let (ya, yb) = b.image();
        let slack = T::from_f64(ENDPOINT_TOL);
        if *y < ya - slack.clone() || *y > yb + slack {
            return Err(Error::OutsideImage {
                branch,
                y: y.to_f64(),
            });
        }
        let x = b.inverse(y);
        let r = (b.value(&x) - y.clone()).abs();
        // at a clamped endpoint the residual is the endpoint mismatch, which is within the full-branch tolerance
        if r > tol.clone() && r > T::from_f64(ENDPOINT_TOL) {
            return Err(Error::RootFinding(format!(
                "branch {branch}: residual {:?} at y = {:?}",
                r, y
            )));
        }
        Ok(x)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchCheck {
    pub branch: usize,
    pub endpoint_error: f64,
    pub distortion_sup: f64,
    pub distortion_sup_refined: f64,
    pub distortion_stable: bool,
}

/// Outcome of [`validate_assumptions`].
#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub min_derivative_away: f64,
    pub expansion_ok: bool,
    pub fixed_points_ok: bool,
    pub branches: Vec<BranchCheck>,
    pub endpoints_ok: bool,
    pub distortion_ok: bool,
    pub pass: bool,
}

fn grid_distortion(b: &Branch<f64>, n: usize) -> f64 {
    let mut sup: f64 = 0.0;
    for k in 0..=n {
        let x = b.lo + (b.hi - b.lo) * k as f64 / n as f64;
        let d = b.deriv(&x);
        sup = sup.max(b.second_deriv(&x).abs() / (d * d));
    }
    sup
}

/// Sampled checks of expansion, bounded distortion and the full-branch property.
pub fn validate_assumptions(map: &MapSpec<f64>) -> AssumptionReport {
    let grid = 100_000;
    let mut min_d = f64::INFINITY;
    for k in 0..=grid {
        let x = k as f64 / grid as f64;
        if map.fixed_points.iter().any(|p| (x - p.xi).abs() <= 1e-3) {
            continue;
        }
        if let Ok((_, d, _)) = map.eval_with_deriv(&x) {
            min_d = min_d.min(d);
        }
    }
    let fixed_points_ok = map.fixed_points.iter().all(|p| {
        let b = &map.branches[p.branch];
        (b.value(&p.xi) - p.xi).abs() <= FIXED_TOL && (b.deriv(&p.xi) - 1.0).abs() <= FIXED_TOL
    });
    let branches: Vec<BranchCheck> = map
        .branches
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let (ya, yb) = b.image();
            let endpoint_error = ya.abs().max((yb - 1.0).abs());
            let s1 = grid_distortion(b, 20_000);
            let s2 = grid_distortion(b, 40_000);
            BranchCheck {
                branch: i,
                endpoint_error,
                distortion_sup: s1,
                distortion_sup_refined: s2,
                distortion_stable: s1.is_finite() && s2.is_finite() && (s2 - s1).abs() <= 0.01 * s2.max(1e-300),
            }
        })
        .collect();
    let endpoints_ok = branches.iter().all(|b| b.endpoint_error <= ENDPOINT_TOL);
    let distortion_ok = branches.iter().all(|b| b.distortion_stable);
    let expansion_ok = min_d > 1.0;
    AssumptionReport {
        min_derivative_away: min_d,
        expansion_ok,
        fixed_points_ok,
        endpoints_ok,
        distortion_ok,
        pass: expansion_ok && fixed_points_ok && endpoints_ok && distortion_ok,
        branches,
    }
}
