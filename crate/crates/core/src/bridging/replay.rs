//! Forward replay of a generated point with honest iteration of the map, in
//! binary64 and in multi-precision.

use std::collections::HashSet;

use serde::Serialize;

use super::itinerary::LevelItinerary;
use super::leading_symbols;
use crate::induced::{InducedScheme, Region};
use crate::map::MapSpec;
use crate::scalar::{set_big_precision, BigReal, Real};

/// Extra symbols pulled back beyond the replayed ones.
pub const REPLAY_MARGIN: usize = 16;
/// Guard bits above the accumulated expansion.
pub const GUARD_BITS: u32 = 128;

#[derive(Clone, Debug, Serialize)]
pub struct ReplayReport {
    /// Leading blocks checked by anchored binary64 replay.
    pub blocks: u64,
    pub blocks_reproduced: u64,
    pub first_block_mismatch: Option<u64>,
    /// Symbols of the multi-precision replay.
    pub target: u64,
    /// Leading symbols reproduced in binary64 from the binary64 preimage.
    pub float_horizon: u64,
    pub precision_bits: u32,
    /// Leading symbols reproduced in multi-precision.
    pub reproduced: u64,
    pub first_mismatch: Option<u64>,
    /// The multi-precision start point lies in the deepest stored enclosure.
    pub in_enclosure: Option<bool>,
    pub pass: bool,
}

/// Reads up to `count` return symbols from `x` by iterating `map`, stopping at
/// the first disagreement with `expected`. Returns the number matched.
pub fn read_symbols<T: Real>(scheme: &InducedScheme, map: &MapSpec<T>, x: T, expected: &[u32]) -> u64 {
    let comps = scheme.y_components();
    let mut y = x;
    for (t, &want) in expected.iter().enumerate() {
        let b = match scheme.classify(y.to_f64()) {
            Region::Y(b) => b,
            _ => return t as u64,
        };
        let mut target = None;
        let mut level = 0u32;
        let mut z = y;
        let image = loop {
            z = match map.eval(&z) {
                Ok(v) => v,
                Err(_) => return t as u64,
            };
            match scheme.classify(z.to_f64()) {
                Region::Y(c) => break comps[c].big,
                Region::X(j) => {
                    if target.is_some_and(|q| q != j) || level > scheme.m_max() {
                        return t as u64;
                    }
                    target = Some(j);
                    level += 1;
                }
                Region::Boundary => return t as u64,
            }
        };
        if scheme.lookup(b, target, level, image) != Some(want) {
            return t as u64;
        }
        y = z;
    }
    expected.len() as u64
}

/// Symbols `start..start + len` of an itinerary (truncated at its end).
fn window(itin: &[LevelItinerary], start: u64, len: u64) -> Vec<u32> {
    let mut out = Vec::with_capacity(len as usize);
    let mut skip = start;
    for it in itin {
        let n = it.last_block().len() as u64;
        let total = n * it.blocks();
        if skip >= total {
            skip -= total;
            continue;
        }
        let mut m = skip / n;
        let mut r = (skip % n) as usize;
        skip = 0;
        while m < it.blocks() {
            for &id in &it.block(m)[r..] {
                if out.len() as u64 == len {
                    return out;
                }
                out.push(id);
            }
            r = 0;
            m += 1;
        }
    }
    out
}

/// Number of leading level-0 blocks (up to `blocks`) that binary64 iteration
/// reproduces when started from the preimage of each block and its successors.
pub fn anchored_blocks(scheme: &InducedScheme, itin: &[LevelItinerary], blocks: u64) -> u64 {
    let Some(first) = itin.first() else { return 0 };
    let n = first.last_block().len() as u64;
    let blocks = blocks.min(first.blocks());
    let mut seen = HashSet::new();
    for m in 0..blocks {
        let word = window(itin, m * n, n + REPLAY_MARGIN as u64);
        if seen.contains(&word) {
            continue;
        }
        let last = *word.last().expect("nonempty window");
        let mut z = scheme.big_pieces(scheme.symbol(last).image)[0].mid();
        let mut lg = 0.0;
        for &id in word.iter().rev() {
            z = scheme.pull_point_symbol(id, z, &mut lg);
        }
        if read_symbols(scheme, scheme.map(), z, &word[..n as usize]) < n {
            return m;
        }
        seen.insert(word);
    }
    blocks
}

/// Replays the first `blocks` level-0 blocks by anchored binary64 iteration and
/// the first `count` symbols from a single start point in multi-precision. The
/// start point is the preimage of a point of the final image under the first
/// `count + margin` symbols, computed at a precision covering the total expansion.
pub fn replay(
    scheme: &InducedScheme,
    itin: &[LevelItinerary],
    blocks: u64,
    count: u64,
    enclosure: Option<(f64, f64)>,
) -> ReplayReport {
    let word = leading_symbols(itin, count as usize + REPLAY_MARGIN);
    let count = count.min(word.len() as u64);
    let last = *word.last().expect("nonempty itinerary");
    let z0 = scheme.big_pieces(scheme.symbol(last).image)[0].mid();
    let mut z = z0;
    let mut expansion = 0.0;
    for &id in word.iter().rev() {
        z = scheme.pull_point_symbol(id, z, &mut expansion);
    }
    let expected = &word[..count as usize];
    let float_horizon = read_symbols(scheme, scheme.map(), z, expected);

    let bits = (expansion / std::f64::consts::LN_2).ceil() as u32 + GUARD_BITS;
    set_big_precision(bits);
    let big = scheme.map().cast_snapped::<BigReal>();
    let mut zb = BigReal::from_f64(z0);
    for &id in word.iter().rev() {
        for b in scheme.branch_chain(id) {
            zb = big.branch(b).inverse(&zb);
        }
    }
    let x = zb.to_f64();
    let reproduced = read_symbols(scheme, &big, zb, expected);
    let blocks = blocks.min(itin.first().map_or(0, |it| it.blocks()));
    let blocks_reproduced = anchored_blocks(scheme, itin, blocks);
    ReplayReport {
        blocks,
        blocks_reproduced,
        first_block_mismatch: (blocks_reproduced < blocks).then_some(blocks_reproduced),
        target: count,
        float_horizon,
        precision_bits: bits,
        reproduced,
        first_mismatch: (reproduced < count).then_some(reproduced),
        in_enclosure: enclosure.map(|(lo, hi)| x >= lo && x <= hi),
        pass: reproduced == count && blocks_reproduced == blocks,
    }
}
