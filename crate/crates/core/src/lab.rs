//! Orbit statistics of the interval map: region occupancies, return-time
//! ratios, the coding sandwich and finite-horizon limit-set estimates.

use std::cmp::Ordering;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridging::TargetSpec;
use crate::error::{Error, Result};
use crate::exact::{rat_f64, Rational};
use crate::induced::{InducedScheme, Region};
use crate::map::MapSpec;
use crate::report::Fixed;

/// Fraction of returns discarded before estimating a limit set.
pub const DEFAULT_BURN_IN: f64 = 0.1;
/// Points per polyline segment when measuring how well a cloud covers it.
pub const SEGMENT_SAMPLES: usize = 256;

/// Cumulative counts at the `k`-th return: `tau_bar[j]` steps in `X_j` among
/// the first `tau` orbit points.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReturnCount {
    pub tau_bar: Vec<u64>,
    pub tau: u64,
}

/// Occupancy record of the orbit points `x_0, …, x_{n-1}`.
///
/// Regions are indexed `0..d` for `X_1..X_d` and `d` for `Y`; `runs` is the
/// run-length encoded region sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTrace {
    pub x0: Fixed,
    pub n: u64,
    pub d: usize,
    pub occupancy: Vec<u64>,
    pub runs: Vec<(usize, u64)>,
    /// Times `τ_k ≤ n`, `k ≥ 1`, with `x_{τ_k} ∈ Y`.
    pub return_marks: Vec<u64>,
    pub ratio_series: Vec<ReturnCount>,
}

impl OccupancyTrace {
    fn region_index(&self, r: Region) -> usize {
        match r {
            Region::X(j) => j,
            _ => self.d,
        }
    }

    fn push(&mut self, region: usize) {
        self.occupancy[region] += 1;
        match self.runs.last_mut() {
            Some((r, len)) if *r == region => *len += 1,
            _ => self.runs.push((region, 1)),
        }
    }

    pub fn returns(&self) -> usize {
        self.return_marks.len()
    }

    /// `τ̄_k/τ_k` for every return.
    pub fn ratios(&self) -> Vec<Vec<Rational>> {
        self.ratio_series
            .iter()
            .map(|c| crate::exact::ratio_vec(&c.tau_bar, c.tau))
            .collect()
    }
}

/// Honest binary64 iteration of `map` for `n` steps from `x0`.
pub fn simulate_occupancy(map: &MapSpec<f64>, scheme: &InducedScheme, x0: f64, n: u64) -> Result<OccupancyTrace> {
    if !(0.0..=1.0).contains(&x0) {
        return Err(Error::OutOfDomain(x0));
    }
    let d = scheme.d();
    let mut tr = OccupancyTrace {
        x0: Fixed(x0),
        n,
        d,
        occupancy: vec![0; d + 1],
        runs: Vec::new(),
        return_marks: Vec::new(),
        ratio_series: Vec::new(),
    };
    let mut x = x0;
    for t in 0..n {
        let r = tr.region_index(scheme.classify(x));
        tr.push(r);
        x = map.eval(&x)?.clamp(0.0, 1.0);
        if matches!(scheme.classify(x), Region::Y(_)) {
            tr.return_marks.push(t + 1);
            tr.ratio_series.push(ReturnCount {
                tau_bar: tr.occupancy[..d].to_vec(),
                tau: t + 1,
            });
        }
    }
    Ok(tr)
}

/// Symbolic trace of a return word: each symbol contributes one `Y` point
/// followed by its excursion.
pub fn trace_from_word(scheme: &InducedScheme, x0: f64, word: &[u32]) -> OccupancyTrace {
    let d = scheme.d();
    let mut tr = OccupancyTrace {
        x0: Fixed(x0),
        n: 0,
        d,
        occupancy: vec![0; d + 1],
        runs: Vec::new(),
        return_marks: Vec::new(),
        ratio_series: Vec::new(),
    };
    for &id in word {
        let s = scheme.symbol(id);
        tr.push(d);
        if let Some(j) = s.target {
            tr.occupancy[j] += s.level as u64;
            tr.runs.push((j, s.level as u64));
        }
        tr.n += s.tau();
        tr.return_marks.push(tr.n);
        tr.ratio_series.push(ReturnCount {
            tau_bar: tr.occupancy[..d].to_vec(),
            tau: tr.n,
        });
    }
    tr
}

/// A violated check at orbit length `n` for region `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CodingWitness {
    pub check: String,
    pub n: u64,
    pub region: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CheckTally {
    pub checked: u64,
    pub failed: u64,
    pub first: Option<CodingWitness>,
}

impl CheckTally {
    fn record(&mut self, ok: bool, check: &str, n: u64, region: usize) {
        self.checked += 1;
        if !ok {
            self.failed += 1;
            if self.first.is_none() {
                self.first = Some(CodingWitness {
                    check: check.into(),
                    n,
                    region,
                });
            }
        }
    }

    pub fn pass(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CodingReport {
    pub returns: usize,
    /// Counts at each return agree with the region record.
    pub consistency: CheckTally,
    /// `e_{τ_k}(Y) = k/τ_k` for `x_0 ∈ Y` (`(k − 1)/τ_k` otherwise).
    pub return_identity: CheckTally,
    /// `e_n(X_j)` between its values at the window ends, `τ_k ≤ n ≤ τ_{k+1}`.
    pub sandwich: CheckTally,
    /// `n ↦ e_n(X_j)` monotone on `[τ_k, τ_{k+1}]`.
    pub monotone: CheckTally,
    /// `n ↦ e_n(X_j)` monotone on `[τ_k + 1, τ_{k+1}]`, after the return point.
    pub monotone_after_return: CheckTally,
    pub pass: bool,
}

/// `a/b` compared with `c/e` exactly.
fn cmp_frac(a: u64, b: u64, c: u64, e: u64) -> Ordering {
    (a as u128 * e as u128).cmp(&(c as u128 * b as u128))
}

/// Tracks the direction of a sequence; false once it has moved both ways.
#[derive(Clone, Copy, Default)]
struct Direction {
    up: bool,
    down: bool,
}

impl Direction {
    fn step(&mut self, o: Ordering) -> bool {
        match o {
            Ordering::Less => self.up = true,
            Ordering::Greater => self.down = true,
            Ordering::Equal => {}
        }
        !(self.up && self.down)
    }
}

/// Exact coding checks at every orbit length between consecutive returns.
pub fn coding_check(trace: &OccupancyTrace) -> Result<CodingReport> {
    if trace.returns() < 2 {
        return Err(Error::Input(format!("{} returns, need at least 2", trace.returns())));
    }
    let d = trace.d;
    let mut rep = CodingReport {
        returns: trace.returns(),
        consistency: CheckTally::default(),
        return_identity: CheckTally::default(),
        sandwich: CheckTally::default(),
        monotone: CheckTally::default(),
        monotone_after_return: CheckTally::default(),
        pass: false,
    };
    // Expand the run record lazily: counts after n points.
    let mut counts = vec![0u64; d + 1];
    let mut n = 0u64;
    let mut runs = trace.runs.iter().copied().flat_map(|(r, len)| std::iter::repeat(r).take(len as usize));
    let first = trace.return_marks[0];
    while n < first {
        match runs.next() {
            Some(r) => counts[r] += 1,
            None => break,
        }
        n += 1;
    }
    let starts_in_y = trace.runs.first().is_some_and(|r| r.0 == d);
    for k in 0..trace.returns() {
        let tau = trace.return_marks[k];
        let rc = &trace.ratio_series[k];
        let consistent = n == tau && rc.tau == tau && rc.tau_bar[..] == counts[..d];
        rep.consistency.record(consistent, "consistency", tau, d);
        // Y points among x_0..x_{τ_k − 1}: the start (if in Y) and the earlier returns.
        let y_expected = k as u64 + u64::from(starts_in_y);
        rep.return_identity
            .record(counts[d] == y_expected, "return_identity", tau, d);
        let Some(&next) = trace.return_marks.get(k + 1) else { break };
        let end = &trace.ratio_series[k + 1];
        let start = rc.tau_bar.clone();
        let mut dir = vec![Direction::default(); d];
        let mut dir_after = vec![Direction::default(); d];
        let mut prev = counts.clone();
        while n < next {
            let Some(r) = runs.next() else { break };
            counts[r] += 1;
            n += 1;
            for j in 0..d {
                let lo_hi = [(start[j], tau), (end.tau_bar[j], end.tau)];
                let (lo, hi) = if cmp_frac(lo_hi[0].0, lo_hi[0].1, lo_hi[1].0, lo_hi[1].1) == Ordering::Greater {
                    (lo_hi[1], lo_hi[0])
                } else {
                    (lo_hi[0], lo_hi[1])
                };
                let inside = cmp_frac(lo.0, lo.1, counts[j], n) != Ordering::Greater
                    && cmp_frac(counts[j], n, hi.0, hi.1) != Ordering::Greater;
                rep.sandwich.record(inside, "sandwich", n, j);
                let o = cmp_frac(prev[j], n - 1, counts[j], n);
                rep.monotone.record(dir[j].step(o), "monotone", n, j);
                if n > tau + 1 {
                    rep.monotone_after_return
                        .record(dir_after[j].step(o), "monotone_after_return", n, j);
                }
            }
            prev.clone_from(&counts);
        }
    }
    rep.pass = rep.consistency.pass()
        && rep.return_identity.pass()
        && rep.sandwich.pass()
        && rep.monotone.pass()
        && rep.monotone_after_return.pass();
    Ok(rep)
}

/// Post-burn-in ratio cloud and its distances to a target.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitSetEstimate {
    pub burn_in: usize,
    pub points: Vec<Vec<Fixed>>,
    /// Largest distance from a cloud point to the target.
    pub to_target: Option<Fixed>,
    /// Largest distance from a target point to the cloud.
    pub from_target: Option<Fixed>,
    pub hausdorff: Option<Fixed>,
    /// Largest `|τ̄_k/τ_k − τ̄_{k+1}/τ_{k+1}|` after burn-in.
    #[serde(with = "crate::report::opt_rational")]
    pub max_step: Option<Rational>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Max-norm distance from `p` to the segment `[a, b]`; the distance is convex
/// along the segment, so a ternary search converges to the minimum.
pub fn segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let at = |u: f64| -> f64 {
        p.iter()
            .zip(a.iter().zip(b))
            .map(|(x, (s, e))| (x - (s + u * (e - s))).abs())
            .fold(0.0, f64::max)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if at(m1) <= at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    at(0.5 * (lo + hi)).min(at(0.0)).min(at(1.0))
}

fn target_points(target: &TargetSpec) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let verts: Vec<Vec<f64>> = target
        .vertices()
        .iter()
        .map(|v| v.iter().map(rat_f64).collect())
        .collect();
    let mut samples = Vec::new();
    if verts.len() == 1 {
        samples.push(verts[0].clone());
    }
    for w in verts.windows(2) {
        for s in 0..=SEGMENT_SAMPLES {
            let u = s as f64 / SEGMENT_SAMPLES as f64;
            samples.push(w[0].iter().zip(&w[1]).map(|(a, b)| a + u * (b - a)).collect());
        }
    }
    (verts, samples)
}

/// Ratio cloud after discarding `burn_in` returns (default: the first 10%).
pub fn limit_set_estimate(
    trace: &OccupancyTrace,
    burn_in: Option<usize>,
    target: Option<&TargetSpec>,
) -> Result<LimitSetEstimate> {
    let r = trace.returns();
    let burn = burn_in.unwrap_or((r as f64 * DEFAULT_BURN_IN).floor() as usize);
    if burn >= r {
        return Err(Error::Input(format!("burn-in {burn} is not below the {r} returns")));
    }
    let exact: Vec<Vec<Rational>> = trace.ratios().split_off(burn);
    let points: Vec<Vec<f64>> = exact.iter().map(|v| v.iter().map(rat_f64).collect()).collect();
    let max_step = exact
        .windows(2)
        .map(|w| crate::exact::max_dist(&w[0], &w[1]))
        .max();
    let (to_target, from_target) = match target {
        Some(t) => {
            let (verts, samples) = target_points(t);
            let to_c = |p: &Vec<f64>| -> f64 {
                if verts.len() == 1 {
                    return dist(p, &verts[0]);
                }
                verts
                    .windows(2)
                    .map(|w| segment_distance(p, &w[0], &w[1]))
                    .fold(f64::INFINITY, f64::min)
            };
            let to = points.par_iter().map(to_c).reduce(|| 0.0, f64::max);
            let from = samples
                .par_iter()
                .map(|c| points.iter().map(|p| dist(p, c)).fold(f64::INFINITY, f64::min))
                .reduce(|| 0.0, f64::max);
            (Some(to), Some(from))
        }
        None => (None, None),
    };
    Ok(LimitSetEstimate {
        burn_in: burn,
        points: points.into_iter().map(|p| p.into_iter().map(Fixed).collect()).collect(),
        hausdorff: to_target.zip(from_target).map(|(a, b)| Fixed(a.max(b))),
        to_target: to_target.map(Fixed),
        from_target: from_target.map(Fixed),
        max_step,
    })
}

/// Uniform start point in `[0, 1]` derived from `seed`.
pub fn seeded_start(seed: u64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed).gen::<f64>()
}

/// Start point drawn uniformly from `Y` with the stream of `seed`.
pub fn seeded_y_start(scheme: &InducedScheme, seed: u64) -> f64 {
    scheme.random_y(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Writes `seed, k, tau_k, tau1_k..taud_k`, one row per return, for every
/// `(seed, x0)` start. Rows are ordered by start, then by return.
pub fn ensemble_run<W: Write>(
    map: &MapSpec<f64>,
    scheme: &InducedScheme,
    starts: &[(u64, f64)],
    n: u64,
    out: W,
) -> Result<()> {
    if starts.len() > 10_000 {
        return Err(Error::Input(format!("{} seeds exceed the limit of 10000", starts.len())));
    }
    let d = scheme.d();
    let traces: Vec<OccupancyTrace> = starts
        .par_iter()
        .map(|&(_, x0)| simulate_occupancy(map, scheme, x0, n))
        .collect::<Result<_>>()?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["seed".to_string(), "k".into(), "tau_k".into()];
    header.extend((1..=d).map(|j| format!("tau{j}_k")));
    w.write_record(&header).map_err(csv_err)?;
    for ((seed, _), tr) in starts.iter().zip(&traces) {
        for (k, rc) in tr.ratio_series.iter().enumerate() {
            let mut row = vec![seed.to_string(), (k + 1).to_string(), rc.tau.to_string()];
            row.extend(rc.tau_bar.iter().map(|t| t.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Map;

    fn scheme() -> InducedScheme {
        InducedScheme::build(Map::example(), 50).unwrap()
    }

    #[test]
    fn fixed_point_stays_put() {
        let s = scheme();
        let xi = s.map().fixed_points()[1].xi;
        let tr = simulate_occupancy(s.map(), &s, xi, 1000).unwrap();
        assert_eq!(tr.occupancy, vec![0, 1000, 0, 0]);
        assert!(tr.return_marks.is_empty());
    }

    #[test]
    fn single_excursion_bookkeeping() {
        let s = scheme();
        let id = s.symbols().iter().find(|x| x.target == Some(1) && x.level == 4).unwrap().id;
        let tr = trace_from_word(&s, 0.0, &[id]);
        assert_eq!(tr.n, 5);
        assert_eq!(tr.occupancy, vec![0, 4, 0, 1]);
        assert_eq!(tr.ratio_series[0].tau_bar, vec![0, 4, 0]);
    }

    #[test]
    fn monotone_on_excursion() {
        let s = scheme();
        let a = s.symbols().iter().find(|x| x.target == Some(1) && x.level == 4).unwrap();
        let b = s.symbols().iter().find(|x| x.base == a.image && x.level == 9).unwrap();
        let (id, back) = (a.id, b.id);
        let tr = trace_from_word(&s, 0.0, &[id, back]);
        let rep = coding_check(&tr).unwrap();
        assert!(rep.monotone_after_return.pass());
        assert!(rep.consistency.pass());
    }

    #[test]
    fn flipped_count_is_caught() {
        let s = scheme();
        let mut tr = simulate_occupancy(s.map(), &s, seeded_start(3), 20_000).unwrap();
        assert!(coding_check(&tr).unwrap().consistency.pass());
        let k = tr.returns() / 2;
        tr.ratio_series[k].tau_bar[0] += 1;
        let rep = coding_check(&tr).unwrap();
        let w = rep.consistency.first.expect("witness");
        assert_eq!(w.n, tr.return_marks[k]);
    }

    #[test]
    fn segment_distance_matches_projection() {
        let p = [0.5, 0.5, 0.0];
        assert!(segment_distance(&p, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]) < 1e-12);
        let q = [0.2, 0.2, 0.6];
        let dq = segment_distance(&q, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        assert!((dq - 0.6).abs() < 1e-9);
    }
}
