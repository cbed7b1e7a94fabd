//! Bridging: a ladder of families with dwell times, points whose return-time
//! ratios follow a target, the concatenated measure and exact certificates.

pub mod itinerary;
pub mod plan;
pub mod profile;
pub mod replay;
pub mod target;
pub mod verify;

use serde::{Deserialize, Serialize};

pub use itinerary::{level_itinerary, LevelItinerary, LevelSums, Policy, Totals};
pub use plan::{plan_schedule, BridgeConfig, BridgeSchedule, Inequality, LevelNumbers, ScheduleDoc};
pub use profile::{local_dim_profile, LevelProfile, LocalDimProfile};
pub use replay::{replay, ReplayReport};
pub use target::{TargetDoc, TargetSpec};
pub use verify::{checkpoints, verify_generic, Checkpoint, GenericCertificate, Witness};

use crate::cylinders::cylinder;
use crate::error::{Error, Result};
use crate::exact::Rational;
use crate::induced::InducedScheme;
use crate::report::{rationals, Fixed};

pub const ENCLOSURE_DEPTH: usize = 64;

/// One nested interval of the point: the hull of its depth-`depth` cylinder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Enclosure {
    pub depth: usize,
    pub lo: Fixed,
    pub hi: Fixed,
    pub log_len: Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenericPoint {
    pub policy: Policy,
    pub itinerary: Vec<LevelItinerary>,
    pub checkpoints: Vec<Checkpoint>,
    pub enclosures: Vec<Enclosure>,
    /// Midpoint of the deepest enclosure.
    pub point: Fixed,
    /// Largest distance of the ratio to the level target, per level.
    #[serde(with = "rationals")]
    pub intermediate: Vec<Rational>,
}

/// The first `count` symbols of an itinerary.
pub fn leading_symbols(itin: &[LevelItinerary], count: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(count);
    'outer: for it in itin {
        for m in 0..it.blocks() {
            for &id in it.block(m) {
                if out.len() >= count {
                    break 'outer;
                }
                out.push(id);
            }
        }
    }
    out
}

/// Hulls of the cylinders of the first `1..=depth` symbols.
pub fn enclosure_chain(scheme: &InducedScheme, word: &[u32]) -> Result<Vec<Enclosure>> {
    (1..=word.len())
        .map(|d| {
            let c = cylinder(scheme, &word[..d])?;
            let h = c.enclosure();
            Ok(Enclosure {
                depth: d,
                lo: Fixed(h.lo),
                hi: Fixed(h.hi),
                log_len: Fixed(c.log_len()),
            })
        })
        .collect()
}

/// Each enclosure lies in the previous one and is strictly shorter.
pub fn strictly_nested(chain: &[Enclosure]) -> bool {
    chain.windows(2).all(|w| {
        w[1].lo.0 >= w[0].lo.0 && w[1].hi.0 <= w[0].hi.0 && w[1].log_len.0 < w[0].log_len.0
    })
}

/// A concrete point of the nested intersection, blocks chosen by `policy`.
pub fn generate_point(
    scheme: &InducedScheme,
    schedule: &BridgeSchedule,
    policy: Policy,
    enclosure_depth: usize,
) -> Result<GenericPoint> {
    let mut itin = Vec::with_capacity(schedule.levels.len());
    let mut base = None;
    for (i, (l, f)) in schedule.levels.iter().zip(&schedule.families).enumerate() {
        let (_, last, it) = level_itinerary(f, i, policy, base, l.k);
        base = Some(f.cylinders[last].image);
        itin.push(it);
    }
    let word = leading_symbols(&itin, enclosure_depth.max(1));
    let enclosures = enclosure_chain(scheme, &word)?;
    let deepest = enclosures.last().expect("depth >= 1");
    let point = Fixed(0.5 * (deepest.lo.0 + deepest.hi.0));
    let cert = verify_generic(scheme, &schedule.levels, &schedule.target, &itin);
    Ok(GenericPoint {
        policy,
        checkpoints: cert.checkpoints,
        intermediate: cert.levels.into_iter().map(|c| c.max_deviation).collect(),
        itinerary: itin,
        enclosures,
        point,
    })
}

/// `log m` of a block-aligned word under the concatenated measure: level
/// measures with the start weight of every level after the first cancelled.
pub fn bridge_measure(scheme: &InducedScheme, schedule: &BridgeSchedule, word: &[u32]) -> Result<f64> {
    let mut lm = 0.0;
    let mut pos = 0usize;
    let mut prev_image: Option<usize> = None;
    for (i, (l, f)) in schedule.levels.iter().zip(&schedule.families).enumerate() {
        let n = l.n as usize;
        let mut used = 0u64;
        while pos < word.len() && used < l.k {
            if word.len() - pos < n {
                return Err(Error::Misaligned(format!(
                    "{} symbols left at level {i}, block depth {n}",
                    word.len() - pos
                )));
            }
            let block = &word[pos..pos + n];
            let (base, cond) = f
                .measure
                .prefix_log_mass(block)
                .ok_or_else(|| Error::Input(format!("block {block:?} is not in the level {i} family")))?;
            match prev_image {
                None => lm += f.measure.log_start(base),
                Some(img) if img != base => return Err(Error::Inadmissible { image: img, base }),
                _ => {}
            }
            lm += cond;
            prev_image = Some(scheme.symbol(block[n - 1]).image);
            pos += n;
            used += 1;
        }
        if pos == word.len() {
            return Ok(lm);
        }
    }
    Err(Error::Input(format!(
        "word of {} symbols is longer than the planned {}",
        word.len(),
        schedule.total_symbols()
    )))
}
