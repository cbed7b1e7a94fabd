//! Local dimension along a generated point: `log m / log|·|` of its cylinders
//! against the level bands.

use serde::Serialize;

use super::itinerary::LevelItinerary;
use super::plan::{eps_f, BridgeSchedule};
use crate::cylinders::cylinder;
use crate::error::{Error, Result};
use crate::induced::InducedScheme;
use crate::report::Fixed;

/// Symbols pulled back exactly at the deep end of a cylinder; earlier symbols
/// contribute their orbit log-derivatives.
pub const EXACT_TAIL: u64 = 40;
pub const PROFILE_SAMPLES: usize = 32;

#[derive(Clone, Debug)]
enum Seg {
    Explicit(Vec<f64>),
    Repeat { unit: Vec<f64>, reps: u64 },
}

/// A long sequence stored as explicit runs and repeated runs.
#[derive(Clone, Debug, Default)]
pub struct Series {
    segs: Vec<(Seg, Vec<f64>)>,
}

fn cum(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for x in v {
        acc += x;
        out.push(acc);
    }
    out
}

impl Series {
    fn push(&mut self, s: Seg) {
        let c = match &s {
            Seg::Explicit(v) | Seg::Repeat { unit: v, .. } => cum(v),
        };
        self.segs.push((s, c));
    }

    pub fn len(&self) -> u64 {
        self.segs
            .iter()
            .map(|(s, _)| match s {
                Seg::Explicit(v) => v.len() as u64,
                Seg::Repeat { unit, reps } => unit.len() as u64 * reps,
            })
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of the first `s` entries.
    pub fn sum_first(&self, mut s: u64) -> f64 {
        let mut acc = 0.0;
        for (seg, c) in &self.segs {
            let len = match seg {
                Seg::Explicit(v) => v.len() as u64,
                Seg::Repeat { unit, reps } => unit.len() as u64 * reps,
            };
            if s >= len {
                acc += match seg {
                    Seg::Explicit(_) => c[c.len() - 1],
                    Seg::Repeat { reps, .. } => c[c.len() - 1] * *reps as f64,
                };
                s -= len;
                continue;
            }
            acc += match seg {
                Seg::Explicit(_) => c[s as usize],
                Seg::Repeat { unit, .. } => {
                    let u = unit.len() as u64;
                    c[c.len() - 1] * (s / u) as f64 + c[(s % u) as usize]
                }
            };
            return acc;
        }
        acc
    }

    pub fn total(&self) -> f64 {
        self.sum_first(u64::MAX)
    }
}

fn flat(blocks: &[Vec<u32>]) -> Vec<u32> {
    blocks.iter().flatten().copied().collect()
}

/// Pulls `z` back through `syms` (last to first); log-derivatives in forward order.
fn pull_run(scheme: &InducedScheme, syms: &[u32], mut z: f64) -> (Vec<f64>, f64) {
    let mut g = vec![0.0; syms.len()];
    for (t, &id) in syms.iter().enumerate().rev() {
        let mut lg = 0.0;
        z = scheme.pull_point_symbol(id, z, &mut lg);
        g[t] = lg;
    }
    (g, z)
}

/// Per-level series of `log F'` along the orbit of the point, and the point.
///
/// Inside the repeated cycle the backward orbit has converged after two
/// cycles; all earlier repetitions reuse the converged values.
pub fn orbit_log_derivs(scheme: &InducedScheme, itin: &[LevelItinerary]) -> (Vec<Series>, f64) {
    let last = itin.last().map(|it| *it.last_block().last().unwrap());
    let mut z = match last {
        Some(id) => scheme.big_pieces(scheme.symbol(id).image)[0].mid(),
        None => return (Vec::new(), f64::NAN),
    };
    let mut out = vec![Series::default(); itin.len()];
    for (i, it) in itin.iter().enumerate().rev() {
        let (g_tail, z1) = pull_run(scheme, &flat(&it.tail), z);
        z = z1;
        let cyc = flat(&it.cycle);
        let explicit = it.reps.min(2);
        let mut g_late = Vec::new();
        for _ in 0..explicit {
            let (g, z1) = pull_run(scheme, &cyc, z);
            z = z1;
            g_late.splice(0..0, g);
        }
        g_late.extend(g_tail);
        let mut series = Series::default();
        let (g_pre, conv) = if it.reps > explicit {
            let (g_conv, z1) = pull_run(scheme, &cyc, z);
            z = z1;
            let (g_pre, z2) = pull_run(scheme, &flat(&it.prefix), z);
            z = z2;
            (g_pre, Some(g_conv))
        } else {
            let (g_pre, z2) = pull_run(scheme, &flat(&it.prefix), z);
            z = z2;
            (g_pre, None)
        };
        series.push(Seg::Explicit(g_pre));
        if let Some(unit) = conv {
            series.push(Seg::Repeat {
                unit,
                reps: it.reps - explicit,
            });
        }
        series.push(Seg::Explicit(g_late));
        out[i] = series;
    }
    (out, z)
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelProfile {
    pub level: usize,
    /// `log m(b_i)/log|b_i|`; absent at the first level.
    pub gamma: Option<Fixed>,
    pub band: Option<(Fixed, Fixed)>,
    /// Band widened by the relative measured local-dimension error.
    pub inflated: Option<(Fixed, Fixed)>,
    pub midpoint: Option<Fixed>,
    pub samples: Vec<(u64, Fixed)>,
    pub min: Fixed,
    pub max: Fixed,
    pub within_band: Option<bool>,
    pub within_inflated: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalDimProfile {
    pub levels: Vec<LevelProfile>,
    /// Start of the backward orbit.
    pub point: Fixed,
}

/// Lower and upper local-dimension bands of a level with previous radius
/// `e_prev` and own radius `e`.
pub fn band(gamma: f64, e_prev: f64, e: f64) -> (f64, f64) {
    let lo = (gamma * (1.0 - e_prev) / (1.0 + e_prev)).min(1.0 - e);
    let hi = (gamma * (1.0 + e_prev) / (1.0 - e_prev)).max(1.0 + e);
    (lo, hi)
}

struct Walker<'a> {
    scheme: &'a InducedScheme,
    itin: &'a [LevelItinerary],
    starts: Vec<u64>,
    ns: Vec<u64>,
    g: Vec<Series>,
}

impl Walker<'_> {
    fn level_of(&self, t: u64) -> usize {
        // t is a 1-based global symbol index
        self.starts.partition_point(|&s| s < t).saturating_sub(1)
    }

    fn symbol_at(&self, t: u64) -> u32 {
        let i = self.level_of(t);
        let o = t - self.starts[i] - 1;
        self.itin[i].block(o / self.ns[i])[(o % self.ns[i]) as usize]
    }

    /// `Σ_{u ≤ t} log F'` along the orbit.
    fn log_deriv_sum(&self, t: u64) -> f64 {
        let mut acc = 0.0;
        for (i, &st) in self.starts.iter().enumerate() {
            if t <= st {
                break;
            }
            acc += self.g[i].sum_first(t - st);
        }
        acc
    }

    /// `log` length of the cylinder of the first `r` symbols.
    fn log_len(&self, r: u64) -> Result<f64> {
        let h = r.min(EXACT_TAIL);
        let word: Vec<u32> = (r - h + 1..=r).map(|t| self.symbol_at(t)).collect();
        let c = cylinder(self.scheme, &word)?;
        Ok(c.log_len() - self.log_deriv_sum(r - h))
    }
}

/// Log-measure pieces of each level: block costs and the start weight.
fn block_costs(
    schedule: &BridgeSchedule,
    i: usize,
    blocks: &[Vec<u32>],
) -> Result<Vec<f64>> {
    let m = &schedule.families[i].measure;
    blocks
        .iter()
        .map(|b| {
            m.prefix_log_mass(b)
                .map(|(_, c)| c)
                .ok_or_else(|| Error::Input(format!("block {b:?} is not in the level {i} family")))
        })
        .collect()
}

fn log_spaced(len: u64, count: usize) -> Vec<u64> {
    let mut out: Vec<u64> = (0..=count)
        .map(|j| ((len as f64).powf(j as f64 / count as f64)).round() as u64)
        .map(|s| s.clamp(1, len))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Profile of `log m(b_i a_{i,s}) / log|b_i a_{i,s}|` on log-spaced `s` per level.
pub fn local_dim_profile(
    scheme: &InducedScheme,
    schedule: &BridgeSchedule,
    itin: &[LevelItinerary],
) -> Result<LocalDimProfile> {
    let levels = &schedule.levels;
    if itin.len() != levels.len() || schedule.families.len() != levels.len() {
        return Err(Error::Input("itinerary and schedule differ in depth".into()));
    }
    let (g, point) = orbit_log_derivs(scheme, itin);
    let w = Walker {
        scheme,
        itin,
        starts: levels.iter().map(|l| l.t).collect(),
        ns: levels.iter().map(|l| l.n).collect(),
        g,
    };
    let lam = schedule.constants.lambda_hat.0.ln();
    let mut before = 0.0;
    let mut eta = 0.0f64;
    let mut out = Vec::with_capacity(levels.len());
    for (i, (l, it)) in levels.iter().zip(itin).enumerate() {
        let m = &schedule.families[i].measure;
        let mut costs = Series::default();
        costs.push(Seg::Explicit(block_costs(schedule, i, &it.prefix)?));
        if it.reps > 0 {
            costs.push(Seg::Repeat {
                unit: block_costs(schedule, i, &it.cycle)?,
                reps: it.reps,
            });
        }
        costs.push(Seg::Explicit(block_costs(schedule, i, &it.tail)?));
        let start = if i == 0 {
            m.log_start(scheme.symbol(it.block(0)[0]).base)
        } else {
            0.0
        };
        eta = eta.max(l.e_hat.0 / (2.0 * l.n as f64 * lam));
        let (gamma, bands) = if i > 0 {
            let gm = before / w.log_len(l.t)?;
            let (lo, hi) = band(gm, eps_f(&levels[i - 1].eps), eps_f(&l.eps));
            (Some(gm), Some(((lo, hi), (lo - eta, hi + eta))))
        } else {
            (None, None)
        };
        let mut samples = Vec::new();
        for s in log_spaced(l.n * l.k, PROFILE_SAMPLES) {
            let q = s / l.n;
            let r = (s % l.n) as usize;
            let mut lm = before + start + costs.sum_first(q);
            if r > 0 {
                let (_, c) = m
                    .prefix_log_mass(&it.block(q)[..r])
                    .ok_or_else(|| Error::Input("partial block outside the family".into()))?;
                lm += c;
            }
            samples.push((s, lm / w.log_len(l.t + s)?));
        }
        let lo = samples.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let hi = samples.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        out.push(LevelProfile {
            level: i,
            gamma: gamma.map(Fixed),
            band: bands.map(|(b, _)| (Fixed(b.0), Fixed(b.1))),
            inflated: bands.map(|(_, b)| (Fixed(b.0), Fixed(b.1))),
            midpoint: bands.map(|(b, _)| Fixed(0.5 * (b.0 + b.1))),
            within_band: bands.map(|(b, _)| lo >= b.0 && hi <= b.1),
            within_inflated: bands.map(|(_, b)| lo >= b.0 && hi <= b.1),
            samples: samples.into_iter().map(|(s, v)| (s, Fixed(v))).collect(),
            min: Fixed(lo),
            max: Fixed(hi),
        });
        before += start + costs.total();
    }
    Ok(LocalDimProfile {
        levels: out,
        point: Fixed(point),
    })
}
