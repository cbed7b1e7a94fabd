//! Block choices and the eventually periodic block sequence of each level.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approximation::ApproxFamily;
use crate::error::{Error, Result};
use crate::exact::{max_dist, Rational};
use crate::induced::InducedScheme;

/// Stationary block selector: the block chosen at a level depends only on the
/// big image it has to start from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Policy {
    #[default]
    LexLeast,
    LexGreatest,
    /// Ratio closest to the level target, ties to the lexicographically least.
    Nearest,
    Seeded(u64),
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::LexLeast => write!(f, "lex-least"),
            Policy::LexGreatest => write!(f, "lex-greatest"),
            Policy::Nearest => write!(f, "nearest"),
            Policy::Seeded(s) => write!(f, "seeded:{s}"),
        }
    }
}

impl FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lex-least" => Ok(Policy::LexLeast),
            "lex-greatest" => Ok(Policy::LexGreatest),
            "nearest" => Ok(Policy::Nearest),
            _ => s
                .strip_prefix("seeded:")
                .and_then(|x| x.parse().ok())
                .map(Policy::Seeded)
                .ok_or_else(|| Error::Input(format!("unknown policy {s:?}"))),
        }
    }
}

impl Serialize for Policy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl Policy {
    /// Block index of `f` chosen at `level` from `base` (`None`: any base).
    pub fn choose(&self, f: &ApproxFamily, level: usize, base: Option<usize>) -> usize {
        let all: Vec<usize>;
        let cands: &[usize] = match base {
            Some(b) => f.measure.by_base(b),
            None => {
                all = (0..f.cylinders.len()).collect();
                &all
            }
        };
        match self {
            Policy::LexLeast => cands[0],
            Policy::LexGreatest => cands[cands.len() - 1],
            Policy::Nearest => {
                let mut best = (cands[0], max_dist(&f.cylinders[cands[0]].ratio(), &f.pbar));
                for &k in &cands[1..] {
                    let d = max_dist(&f.cylinders[k].ratio(), &f.pbar);
                    if d < best.1 {
                        best = (k, d);
                    }
                }
                best.0
            }
            Policy::Seeded(seed) => {
                let code = ((level as u64) << 16) | base.map_or(0xFFFF, |b| b as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ code.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                cands[rng.gen_range(0..cands.len())]
            }
        }
    }
}

/// `k` blocks as `prefix · cycle^reps · tail`, each block a symbol word.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelItinerary {
    pub prefix: Vec<Vec<u32>>,
    pub cycle: Vec<Vec<u32>>,
    pub reps: u64,
    pub tail: Vec<Vec<u32>>,
}

impl LevelItinerary {
    pub fn blocks(&self) -> u64 {
        self.prefix.len() as u64 + self.reps * self.cycle.len() as u64 + self.tail.len() as u64
    }

    /// Block `m` (0-based).
    pub fn block(&self, m: u64) -> &[u32] {
        let p = self.prefix.len() as u64;
        if m < p {
            return &self.prefix[m as usize];
        }
        let c = self.cycle.len() as u64;
        let r = m - p;
        if r < self.reps * c {
            return &self.cycle[(r % c) as usize];
        }
        &self.tail[(r - self.reps * c) as usize]
    }

    pub fn last_block(&self) -> &[u32] {
        self.block(self.blocks() - 1)
    }

    /// Distinct block words in order of first appearance.
    pub fn distinct_blocks(&self) -> impl Iterator<Item = &Vec<u32>> {
        self.prefix.iter().chain(&self.cycle).chain(&self.tail)
    }
}

/// Blocks chosen by `policy` for `k` steps from `base`, compressed into a
/// prefix, a repeated cycle and a tail. Returns the family indices of the first
/// and last block with the itinerary.
pub fn level_itinerary(
    f: &ApproxFamily,
    level: usize,
    policy: Policy,
    base: Option<usize>,
    k: u64,
) -> (usize, usize, LevelItinerary) {
    let l = f.measure.log_z.len();
    let mut picks = Vec::new();
    let mut seen = vec![None; l];
    let first = policy.choose(f, level, base);
    picks.push(first);
    if let Some(b) = base {
        seen[b] = Some(0);
    }
    let (pre, cyc) = loop {
        let b = f.cylinders[*picks.last().unwrap()].image;
        if let Some(q) = seen[b] {
            break (q, picks.len() - q);
        }
        seen[b] = Some(picks.len());
        picks.push(policy.choose(f, level, Some(b)));
    };
    let word = |x: &usize| f.cylinders[*x].word.clone();
    let (prefix, cycle, reps, tail) = if k <= pre as u64 {
        (picks[..k as usize].to_vec(), Vec::new(), 0, Vec::new())
    } else {
        let rest = k - pre as u64;
        let reps = rest / cyc as u64;
        let t = (rest % cyc as u64) as usize;
        (
            picks[..pre].to_vec(),
            picks[pre..pre + cyc].to_vec(),
            reps,
            picks[pre..pre + t].to_vec(),
        )
    };
    let it = LevelItinerary {
        prefix: prefix.iter().map(word).collect(),
        cycle: if reps > 0 { cycle.iter().map(word).collect() } else { Vec::new() },
        reps,
        tail: tail.iter().map(word).collect(),
    };
    let last = if k == 0 {
        first
    } else {
        let m = k - 1;
        if m < pre as u64 {
            picks[m as usize]
        } else {
            picks[pre + ((m - pre as u64) % cyc as u64) as usize]
        }
    };
    (first, last, it)
}

/// Exact return totals: `tau` and per-region `tau_vec`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Totals {
    pub tau: u128,
    pub tv: Vec<u128>,
}

impl Totals {
    pub fn zero(d: usize) -> Self {
        Totals { tau: 0, tv: vec![0; d] }
    }

    pub fn add(&self, o: &Totals) -> Totals {
        Totals {
            tau: self.tau + o.tau,
            tv: self.tv.iter().zip(&o.tv).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scaled_add(&self, o: &Totals, q: u128) -> Totals {
        Totals {
            tau: self.tau + q * o.tau,
            tv: self.tv.iter().zip(&o.tv).map(|(a, b)| a + q * b).collect(),
        }
    }

    pub fn push_symbol(&mut self, scheme: &InducedScheme, id: u32) {
        let s = scheme.symbol(id);
        self.tau += s.tau() as u128;
        if let Some(j) = s.target {
            self.tv[j] += s.level as u128;
        }
    }

    pub fn ratio(&self) -> Vec<Rational> {
        self.tv
            .iter()
            .map(|&x| Rational::new(x.into(), self.tau.into()))
            .collect()
    }
}

fn cumulative(scheme: &InducedScheme, blocks: &[Vec<u32>], d: usize) -> Vec<Totals> {
    let mut out = vec![Totals::zero(d)];
    for b in blocks {
        let mut t = out.last().unwrap().clone();
        for &id in b {
            t.push_symbol(scheme, id);
        }
        out.push(t);
    }
    out
}

/// Constant-time totals at any symbol position of a level.
#[derive(Clone, Debug)]
pub struct LevelSums {
    pub n: u64,
    pub d: usize,
    prefix_cum: Vec<Totals>,
    cycle_cum: Vec<Totals>,
    tail_cum: Vec<Totals>,
    pub reps: u64,
}

impl LevelSums {
    pub fn new(scheme: &InducedScheme, it: &LevelItinerary, n: u64) -> Self {
        let d = scheme.d();
        LevelSums {
            n,
            d,
            prefix_cum: cumulative(scheme, &it.prefix, d),
            cycle_cum: cumulative(scheme, &it.cycle, d),
            tail_cum: cumulative(scheme, &it.tail, d),
            reps: it.reps,
        }
    }

    pub fn prefix_blocks(&self) -> u64 {
        self.prefix_cum.len() as u64 - 1
    }
    pub fn cycle_blocks(&self) -> u64 {
        self.cycle_cum.len() as u64 - 1
    }
    pub fn tail_blocks(&self) -> u64 {
        self.tail_cum.len() as u64 - 1
    }
    pub fn blocks(&self) -> u64 {
        self.prefix_blocks() + self.reps * self.cycle_blocks() + self.tail_blocks()
    }
    pub fn symbols(&self) -> u64 {
        self.blocks() * self.n
    }

    /// Totals of the first `m` blocks.
    pub fn blocks_total(&self, m: u64) -> Totals {
        let p = self.prefix_blocks();
        if m <= p {
            return self.prefix_cum[m as usize].clone();
        }
        let c = self.cycle_blocks();
        let base = &self.prefix_cum[p as usize];
        let r = m - p;
        let cycle_total = &self.cycle_cum[c as usize];
        if c > 0 && r < self.reps * c {
            return base.scaled_add(cycle_total, (r / c) as u128).add(&self.cycle_cum[(r % c) as usize]);
        }
        let done = base.scaled_add(cycle_total, self.reps as u128);
        done.add(&self.tail_cum[(r - self.reps * c) as usize])
    }

    /// Totals of the first `s` symbols, given the itinerary for the partial block.
    pub fn symbols_total(&self, scheme: &InducedScheme, it: &LevelItinerary, s: u64) -> Totals {
        let m = s / self.n;
        let r = (s % self.n) as usize;
        let mut t = self.blocks_total(m);
        if r > 0 {
            for &id in &it.block(m)[..r] {
                t.push_symbol(scheme, id);
            }
        }
        t
    }
}
