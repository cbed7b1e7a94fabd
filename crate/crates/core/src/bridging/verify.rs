//! Exact certificate for a generated point: checkpoints, early drift, late
//! sandwich, target balls or rectangles, consecutive differences.
//!
//! Inside the periodic part of a level, the totals at a fixed offset in the
//! cycle are affine in the cycle count, so every ratio coordinate is monotone
//! there and convex conditions only need the first and last cycle of each run.

use std::collections::BTreeMap;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use super::itinerary::{LevelItinerary, LevelSums, Totals};
use super::plan::LevelNumbers;
use super::target::TargetSpec;
use crate::cylinders::check_admissible;
use crate::exact::{max_dist, rat_str, rat_u, Rational};
use crate::induced::InducedScheme;
use crate::report::{rational, rationals};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub level: usize,
    /// Symbol offset inside the level.
    pub s: u64,
    /// Global symbol index.
    pub t: u64,
    pub regime: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub level: usize,
    pub t: u64,
    pub tau: String,
    pub tau_vec: Vec<String>,
    #[serde(with = "rationals")]
    pub ratio: Vec<Rational>,
    #[serde(with = "rational")]
    pub distance: Rational,
    #[serde(with = "rational")]
    pub bound: Rational,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub checked: u64,
    pub failed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCheck {
    pub level: usize,
    pub samples: usize,
    pub regimes: BTreeMap<String, Tally>,
    /// Largest distance of the ratio to the level target over the level.
    #[serde(with = "rational")]
    pub max_deviation: Rational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenericCertificate {
    pub pass: bool,
    pub checkpoints: Vec<Checkpoint>,
    pub levels: Vec<LevelCheck>,
    pub witness: Option<Witness>,
}

fn int(x: u128) -> Rational {
    Rational::from_integer(x.into())
}

fn three() -> Rational {
    rat_u(3, 1)
}

/// Structural checks: sizes, symbol ids, admissibility inside and across blocks.
fn structure(scheme: &InducedScheme, levels: &[LevelNumbers], itin: &[LevelItinerary]) -> Option<Witness> {
    let fail = |level: usize, s: u64, t: u64, detail: String| {
        Some(Witness {
            level,
            s,
            t,
            regime: "admissibility".into(),
            detail,
        })
    };
    if levels.len() != itin.len() {
        return fail(0, 0, 0, format!("{} levels planned, {} in itinerary", levels.len(), itin.len()));
    }
    let nsym = scheme.symbols().len() as u32;
    let mut prev_image: Option<usize> = None;
    for (i, (l, it)) in levels.iter().zip(itin).enumerate() {
        if it.blocks() != l.k {
            return fail(i, 0, l.t, format!("{} blocks, expected {}", it.blocks(), l.k));
        }
        if it.reps > 0 && it.cycle.is_empty() {
            return fail(i, 0, l.t, "repeated empty cycle".into());
        }
        for w in it.distinct_blocks() {
            if w.len() as u64 != l.n {
                return fail(i, 0, l.t, format!("block of length {}, expected {}", w.len(), l.n));
            }
            if let Some(&bad) = w.iter().find(|&&id| id >= nsym) {
                return fail(i, 0, l.t, format!("unknown symbol {bad}"));
            }
            if let Err(e) = check_admissible(scheme, w) {
                return fail(i, 0, l.t, format!("block {w:?}: {e}"));
            }
        }
        let k = it.blocks();
        let span = (it.prefix.len() + 2 * it.cycle.len() + 1) as u64;
        let tail = (it.cycle.len() + it.tail.len() + 2) as u64;
        let mut ms: Vec<u64> = (0..k.min(span)).collect();
        ms.extend(k.saturating_sub(tail)..k);
        ms.sort_unstable();
        ms.dedup();
        for &m in &ms {
            let w = it.block(m);
            let base = scheme.symbol(w[0]).base;
            let expected = if m == 0 {
                prev_image
            } else {
                Some(scheme.symbol(*it.block(m - 1).last().unwrap()).image)
            };
            if let Some(e) = expected {
                if e != base {
                    let s = m * l.n;
                    return fail(i, s, l.t + s, format!("block starts in big image {base}, previous ends in {e}"));
                }
            }
        }
        prev_image = Some(scheme.symbol(*it.last_block().last().unwrap()).image);
    }
    None
}

/// Symbol offsets of a level that represent every offset for convex checks.
fn sample_offsets(sums: &LevelSums, horizon: u64) -> Vec<u64> {
    let n = sums.n;
    let len = sums.symbols();
    let (p, c, reps) = (sums.prefix_blocks(), sums.cycle_blocks(), sums.reps);
    let mut out = Vec::new();
    if reps < 3 || c == 0 {
        out.extend(1..=len);
    } else {
        let head = (p + c) * n;
        out.extend(1..=head.min(len));
        let mid_end = (p + (reps - 1) * c) * n;
        out.extend(mid_end + 1..=len);
        let period = c * n;
        let (q_lo, q_hi) = (1u64, reps - 2);
        for r in 1..=period {
            let at = |q: u64| (p + q * c) * n + r;
            out.push(at(q_lo));
            out.push(at(q_hi));
            // last q with at(q) < horizon, first with at(q) >= horizon
            if horizon > at(q_lo) {
                let q_b = ((horizon - 1 - ((p * n) + r)) / period).min(q_hi);
                if q_b >= q_lo {
                    out.push(at(q_b));
                    if q_b < q_hi {
                        out.push(at(q_b + 1));
                    }
                }
            }
        }
    }
    for s in [horizon.saturating_sub(1), horizon] {
        if s >= 1 && s <= len {
            out.push(s);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

struct Ctx<'a> {
    level: usize,
    regimes: BTreeMap<String, Tally>,
    witness: &'a mut Option<Witness>,
    t0: u64,
}

impl Ctx<'_> {
    fn record(&mut self, name: &str, s: u64, ok: bool, detail: impl FnOnce() -> String) {
        let e = self.regimes.entry(name.to_string()).or_default();
        e.checked += 1;
        if !ok {
            e.failed += 1;
            if self.witness.is_none() {
                *self.witness = Some(Witness {
                    level: self.level,
                    s,
                    t: self.t0 + s,
                    regime: name.into(),
                    detail: detail(),
                });
            }
        }
    }
}

fn in_open_ball(r: &[Rational], c: &[Rational], rad: &Rational) -> bool {
    max_dist(r, c) < *rad
}

fn in_closed_ball(r: &[Rational], c: &[Rational], rad: &Rational) -> bool {
    max_dist(r, c) <= *rad
}

fn show(r: &[Rational]) -> String {
    r.iter().map(rat_str).collect::<Vec<_>>().join(",")
}

/// Axis-parallel box spanned by two targets, widened by `delta`.
fn rectangle(a: &[Rational], b: &[Rational], delta: &Rational) -> Vec<(Rational, Rational)> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            (lo - delta, hi + delta)
        })
        .collect()
}

fn diameter(rect: &[(Rational, Rational)]) -> Rational {
    rect.iter()
        .map(|(lo, hi)| hi - lo)
        .fold(Rational::zero(), |a, b| if b > a { b } else { a })
}

/// Totals of every full level, in order.
pub fn level_totals(scheme: &InducedScheme, levels: &[LevelNumbers], itin: &[LevelItinerary]) -> Vec<Totals> {
    levels
        .iter()
        .zip(itin)
        .map(|(l, it)| LevelSums::new(scheme, it, l.n).blocks_total(it.blocks()))
        .collect()
}

/// Ratios at `t_{i+1}` against the closed `3ε_i` ball around `p̄_i`.
pub fn checkpoints(scheme: &InducedScheme, levels: &[LevelNumbers], itin: &[LevelItinerary]) -> Vec<Checkpoint> {
    let mut acc = Totals::zero(scheme.d());
    let mut out = Vec::new();
    for (l, tot) in levels.iter().zip(level_totals(scheme, levels, itin)) {
        acc = acc.add(&tot);
        let ratio = acc.ratio();
        let distance = max_dist(&ratio, &l.p_bar);
        let bound = three() * &l.eps;
        out.push(Checkpoint {
            level: l.level,
            t: l.t + l.n * l.k,
            tau: acc.tau.to_string(),
            tau_vec: acc.tv.iter().map(|x| x.to_string()).collect(),
            pass: distance <= bound,
            ratio,
            distance,
            bound,
        });
    }
    out
}

/// Checks every regime of every level exactly; the witness is the first
/// violation in time order.
pub fn verify_generic(
    scheme: &InducedScheme,
    levels: &[LevelNumbers],
    target: &TargetSpec,
    itin: &[LevelItinerary],
) -> GenericCertificate {
    if let Some(w) = structure(scheme, levels, itin) {
        return GenericCertificate {
            pass: false,
            checkpoints: Vec::new(),
            levels: Vec::new(),
            witness: Some(w),
        };
    }
    let single = target.vertices().len() == 1;
    let cps = checkpoints(scheme, levels, itin);
    let mut witness = None;
    let mut checks = Vec::new();
    let mut before = Totals::zero(scheme.d());
    for (i, (l, it)) in levels.iter().zip(itin).enumerate() {
        let sums = LevelSums::new(scheme, it, l.n);
        let offsets = sample_offsets(&sums, l.horizon);
        let mut ctx = Ctx {
            level: i,
            regimes: BTreeMap::new(),
            witness: &mut witness,
            t0: l.t,
        };
        let p = &l.p_bar;
        let prev = (i > 0).then(|| &levels[i - 1]);
        let r_before = if i > 0 { before.ratio() } else { Vec::new() };
        let drift = prev.map(|_| int(2 * l.horizon as u128 * l.m_sym as u128) / int(l.t as u128));
        let delta = prev.map(|q| {
            let a = three() * &q.eps;
            let b = three() * &l.eps;
            if a >= b {
                a
            } else {
                b
            }
        });
        let rect = prev.zip(delta.as_ref()).map(|(q, d)| rectangle(&q.p_bar, p, d));
        let two_diam = rect.as_ref().map(|r| rat_u(2, 1) * diameter(r));
        if let (false, Some(td)) = (single, &two_diam) {
            // one symbol moves the ratio by at most τ(symbol)/τ(prefix)
            let max_sym = it
                .distinct_blocks()
                .flatten()
                .map(|&id| scheme.symbol(id).tau())
                .max()
                .unwrap_or(0);
            let bound = int(max_sym as u128) / int(before.tau);
            ctx.record("consecutive_bound", 0, bound <= *td, || {
                format!("max symbol return {max_sym} over {} exceeds {}", before.tau, rat_str(td))
            });
        }
        let mut max_dev = Rational::zero();
        let mut last_local: Option<(u64, Totals)> = None;
        for &s in &offsets {
            let local = sums.symbols_total(scheme, it, s);
            let glob = before.add(&local);
            let r = glob.ratio();
            let dev = max_dist(&r, p);
            if dev > max_dev {
                max_dev = dev.clone();
            }
            let ra = local.ratio();
            if s >= l.horizon {
                ctx.record("late_ratio", s, in_open_ball(&ra, p, &l.eps), || {
                    format!("level ratio {} not within {} of target", show(&ra), rat_str(&l.eps))
                });
            }
            match prev {
                None => {
                    if single && s >= l.horizon {
                        let b = three() * &l.eps;
                        ctx.record("full_sequence", s, in_closed_ball(&r, p, &b), || {
                            format!("ratio {} beyond {}", show(&r), rat_str(&b))
                        });
                    }
                }
                Some(q) => {
                    if s < l.horizon {
                        let d = max_dist(&r, &r_before);
                        let bound = drift.as_ref().unwrap();
                        ctx.record("early_drift", s, d <= *bound, || {
                            format!("drift {} exceeds {}", rat_str(&d), rat_str(bound))
                        });
                        let b = rat_u(5, 1) * &q.eps;
                        ctx.record("early_ball", s, in_closed_ball(&r, &q.p_bar, &b), || {
                            format!("ratio {} beyond {} of the previous target", show(&r), rat_str(&b))
                        });
                    } else {
                        let ok = (0..r.len()).all(|j| {
                            let (a, b) = (&r_before[j], &ra[j]);
                            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                            &r[j] >= lo && &r[j] <= hi
                        });
                        ctx.record("sandwich", s, ok, || format!("ratio {} outside the min/max sandwich", show(&r)));
                        if single {
                            let b = {
                                let x = three() * &q.eps;
                                if x >= l.eps {
                                    x
                                } else {
                                    l.eps.clone()
                                }
                            };
                            ctx.record("late_ball", s, in_closed_ball(&r, p, &b), || {
                                format!("ratio {} beyond {}", show(&r), rat_str(&b))
                            });
                        } else {
                            let rc = rect.as_ref().unwrap();
                            let ok = r.iter().zip(rc).all(|(x, (lo, hi))| x >= lo && x <= hi);
                            ctx.record("rectangle", s, ok, || format!("ratio {} outside the widened rectangle", show(&r)));
                        }
                    }
                    if single {
                        let b = {
                            let x = rat_u(5, 1) * &q.eps;
                            let y = three() * &l.eps;
                            if x >= y {
                                x
                            } else {
                                y
                            }
                        };
                        ctx.record("full_sequence", s, in_closed_ball(&r, p, &b), || {
                            format!("ratio {} beyond {}", show(&r), rat_str(&b))
                        });
                    } else {
                        let td = two_diam.as_ref().unwrap();
                        let prev_tot = match &last_local {
                            Some((ps, t)) if *ps + 1 == s => before.add(t),
                            _ => before.add(&sums.symbols_total(scheme, it, s - 1)),
                        };
                        let d = max_dist(&r, &prev_tot.ratio());
                        ctx.record("consecutive", s, d <= *td, || {
                            format!("step {} exceeds {}", rat_str(&d), rat_str(td))
                        });
                    }
                }
            }
            if s == sums.symbols() {
                let cp = &cps[i];
                ctx.record("checkpoint", s, cp.pass, || {
                    format!("checkpoint distance {} exceeds {}", rat_str(&cp.distance), rat_str(&cp.bound))
                });
            }
            last_local = Some((s, local));
        }
        checks.push(LevelCheck {
            level: i,
            samples: offsets.len(),
            regimes: ctx.regimes,
            max_deviation: max_dev,
        });
        before = before.add(&sums.blocks_total(it.blocks()));
    }
    GenericCertificate {
        pass: witness.is_none(),
        checkpoints: cps,
        levels: checks,
        witness,
    }
}

/// Largest distance from any checkpoint ratio to a vertex, per vertex minimum.
pub fn vertex_approach(cps: &[Checkpoint], vertices: &[Vec<Rational>]) -> Vec<Rational> {
    vertices
        .iter()
        .map(|v| {
            cps.iter()
                .map(|c| max_dist(&c.ratio, v))
                .fold(None::<Rational>, |a, d| match a {
                    Some(x) if x <= d => Some(x),
                    _ => Some(d),
                })
                .unwrap_or_else(|| rat_u(1, 1))
        })
        .collect()
}
