//! Ladder planning: one family per level, dwell times `k_i` and the
//! inequality certificates that justify them.

use std::sync::Arc;

use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::target::{TargetDoc, TargetSpec};
use crate::approximation::{build_family, find_connectors, ApproxFamily, ConnectorSet, Constants, FamilyConfig};
use crate::error::{Error, Result};
use crate::exact::{rat_f64, rat_str, rat_u, Rational};
use crate::induced::InducedScheme;
use crate::report::{rational, rationals, Fixed};

pub const K_CAP: u64 = 10_000_000_000_000;

#[derive(Clone, Debug)]
pub struct BridgeConfig {
    /// Number of levels `I`.
    pub levels: usize,
    pub eps0: Rational,
    pub min_core: usize,
    pub max_core: usize,
    pub family: FamilyConfig,
    pub k_cap: u64,
    /// Build one extra family so the last level's forward-looking
    /// inequalities can be evaluated.
    pub lookahead: bool,
    pub stats_depth: usize,
    pub stats_samples: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            levels: 4,
            eps0: rat_u(2, 5),
            min_core: 1,
            max_core: 4,
            family: FamilyConfig {
                budget: 20_000,
                ..FamilyConfig::default()
            },
            k_cap: K_CAP,
            lookahead: false,
            stats_depth: 4,
            stats_samples: 200,
        }
    }
}

/// Expansion constants entering the surrogate bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleConstants {
    pub lambda_hat: Fixed,
    /// `log K`, the product-distortion constant.
    pub log_product: Fixed,
    pub log_distortion: Fixed,
}

/// The numbers of one level that the certificates depend on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelNumbers {
    pub level: usize,
    #[serde(with = "rational")]
    pub eps: Rational,
    #[serde(with = "rationals")]
    pub p_bar: Vec<Rational>,
    /// Block depth.
    pub n: u64,
    pub n_core: u64,
    #[serde(rename = "N")]
    pub horizon: u64,
    pub k: u64,
    /// Symbols before this level.
    pub t: u64,
    /// Largest single-symbol return time.
    #[serde(rename = "M")]
    pub m_sym: u64,
    /// `max_j |log m_i(Y_j)|`.
    pub c_tilde: Fixed,
    /// Extremes of the conditional block cost `−log(w/Z_base)`.
    pub w_max: Fixed,
    pub w_min: Fixed,
    /// Largest `|log|a||` over blocks.
    pub ell_max: Fixed,
    pub family_size: usize,
    pub vdim: Fixed,
    pub e_hat: Fixed,
}

/// A stored inequality `lhs relation rhs`; `pass` is `None` when not evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: String,
    pub relation: String,
    pub rhs: String,
    pub pass: Option<bool>,
}

impl Inequality {
    fn exact(name: &str, lhs: Rational, rel: &str, rhs: Rational) -> Self {
        let pass = match rel {
            "<" => lhs < rhs,
            "<=" => lhs <= rhs,
            _ => lhs > rhs,
        };
        Inequality {
            name: name.into(),
            lhs: rat_str(&lhs),
            relation: rel.into(),
            rhs: rat_str(&rhs),
            pass: Some(pass),
        }
    }

    fn float(name: &str, lhs: f64, rel: &str, rhs: f64) -> Self {
        let pass = match rel {
            "<" => lhs < rhs,
            _ => lhs <= rhs,
        };
        Inequality {
            name: name.into(),
            lhs: crate::report::fixed(lhs),
            relation: rel.into(),
            rhs: crate::report::fixed(rhs),
            pass: Some(pass),
        }
    }

    fn skipped(name: &str, rel: &str) -> Self {
        Inequality {
            name: name.into(),
            lhs: "n/a".into(),
            relation: rel.into(),
            rhs: "n/a".into(),
            pass: None,
        }
    }
}

pub const CERTIFICATE_NAMES: [&str; 7] = [
    "dwell_exceeds_horizon",
    "next_horizon_drift",
    "past_weight",
    "measure_ratio",
    "length_ratio",
    "next_measure_ratio",
    "next_length_ratio",
];

/// The seven inequalities of level `i` with dwell time `k`; earlier levels use
/// their stored `k`, `next` is the following level (if planned).
pub fn level_certificates(
    levels: &[LevelNumbers],
    i: usize,
    k: u64,
    next: Option<&LevelNumbers>,
    c: &ScaleConstants,
) -> Vec<Inequality> {
    let cur = &levels[i];
    let eps = &cur.eps;
    let eps_f = rat_f64(eps);
    let lam = c.lambda_hat.0.ln();
    let log_k = c.log_product.0;
    let nk = cur.n as u128 * k as u128;
    let t_next = cur.t as u128 + nk;
    let big = |x: u128| Rational::from_integer(x.into());
    let past = &levels[..i];
    let mut out = Vec::with_capacity(7);

    out.push(Inequality::exact(CERTIFICATE_NAMES[0], big(nk), ">", big(cur.horizon as u128)));
    match next {
        Some(nx) => out.push(Inequality::exact(
            CERTIFICATE_NAMES[1],
            big(nx.horizon as u128 * nx.m_sym as u128) / big(t_next),
            "<",
            eps.clone(),
        )),
        None => out.push(Inequality::skipped(CERTIFICATE_NAMES[1], "<")),
    }
    let weight: u128 = past
        .iter()
        .map(|l| l.m_sym as u128 * l.n as u128 * l.k as u128)
        .sum();
    out.push(Inequality::exact(CERTIFICATE_NAMES[2], big(weight) / big(nk), "<", eps.clone()));

    let kf = k as f64;
    let past_measure: f64 = past.iter().map(|l| l.k as f64 * l.w_max.0 + l.c_tilde.0).sum();
    out.push(Inequality::float(
        CERTIFICATE_NAMES[3],
        (past_measure + cur.c_tilde.0) / (kf * cur.w_min.0),
        "<=",
        eps_f,
    ));
    let past_blocks: f64 = past.iter().map(|l| l.k as f64).sum();
    let past_len: f64 = past.iter().map(|l| l.k as f64 * l.ell_max.0).sum::<f64>()
        + (past_blocks - 1.0).max(0.0) * log_k;
    out.push(Inequality::float(
        CERTIFICATE_NAMES[4],
        (past_len + log_k) / (cur.n as f64 * kf * lam),
        "<=",
        eps_f,
    ));
    match next {
        Some(nx) => {
            let head = nx.horizon.div_ceil(nx.n) as f64;
            let below: f64 =
                past.iter().map(|l| l.k as f64 * l.w_min.0).sum::<f64>() + kf * cur.w_min.0;
            out.push(Inequality::float(
                CERTIFICATE_NAMES[5],
                (head * nx.w_max.0 + nx.c_tilde.0) / below,
                "<",
                eps_f,
            ));
            out.push(Inequality::float(
                CERTIFICATE_NAMES[6],
                (head * (nx.ell_max.0 + log_k) + log_k) / (t_next as f64 * lam),
                "<",
                eps_f,
            ));
        }
        None => {
            out.push(Inequality::skipped(CERTIFICATE_NAMES[5], "<"));
            out.push(Inequality::skipped(CERTIFICATE_NAMES[6], "<"));
        }
    }
    out
}

fn feasible(certs: &[Inequality]) -> bool {
    certs.iter().all(|c| c.pass != Some(false))
}

/// Smallest `k` in `[1, cap]` passing every certificate (all are monotone in `k`).
pub fn minimal_dwell(
    levels: &[LevelNumbers],
    i: usize,
    next: Option<&LevelNumbers>,
    c: &ScaleConstants,
    cap: u64,
) -> Result<u64> {
    let ok = |k: u64| feasible(&level_certificates(levels, i, k, next, c));
    let mut hi = 1u64;
    while !ok(hi) {
        if hi >= cap {
            let binding = level_certificates(levels, i, cap, next, c)
                .into_iter()
                .find(|x| x.pass == Some(false))
                .map(|x| format!("{} ({} {} {})", x.name, x.lhs, x.relation, x.rhs))
                .unwrap_or_default();
            return Err(Error::NoScale {
                level: i,
                cap,
                constraint: binding,
            });
        }
        hi = (hi * 2).min(cap);
    }
    let mut lo = hi / 2;
    if lo == 0 {
        return Ok(hi);
    }
    // ok(hi), !ok(lo)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Level numbers read off a family (dwell time and offset filled in later).
pub fn family_numbers(level: usize, f: &ApproxFamily) -> LevelNumbers {
    let m = &f.measure;
    let l = m.log_z.len();
    let (mut w_max, mut w_min) = (0.0f64, f64::INFINITY);
    for k in 0..m.len() {
        let w = -(m.log_w[k] - m.log_z[m.base[k]]);
        w_max = w_max.max(w);
        w_min = w_min.min(w);
    }
    let ell_max = m.log_len.iter().map(|x| -x).fold(0.0, f64::max);
    let c_tilde = (0..l).map(|j| m.log_start(j).abs()).fold(0.0, f64::max);
    LevelNumbers {
        level,
        eps: f.eps.clone(),
        p_bar: f.pbar.clone(),
        n: f.n as u64,
        n_core: f.n_core as u64,
        horizon: f.n0.max(f.n1.n1),
        k: 0,
        t: 0,
        m_sym: f.m_n,
        c_tilde: Fixed(c_tilde),
        w_max: Fixed(w_max),
        w_min: Fixed(w_min),
        ell_max: Fixed(ell_max),
        family_size: f.cylinders.len(),
        vdim: Fixed(f.vdim),
        e_hat: Fixed(f.e_hat),
    }
}

/// Family at the shallowest core depth in `[min_core, max_core]` that assembles.
pub fn family_for_level(
    scheme: &InducedScheme,
    conn: &ConnectorSet,
    consts: &Constants,
    level: usize,
    eps: &Rational,
    pbar: &[Rational],
    cfg: &BridgeConfig,
) -> Result<ApproxFamily> {
    let mut reason = String::from("no depth tried");
    for n_core in cfg.min_core.max(1)..=cfg.max_core {
        match build_family(scheme, conn, n_core, eps, pbar, consts, &cfg.family) {
            Ok(f) => return Ok(f),
            Err(
                e @ (Error::EmptyPool { .. }
                | Error::ItemOneViolated { .. }
                | Error::ImagesDoNotCover(_)
                | Error::EmptyFamily),
            ) => reason = e.to_string(),
            Err(e) => return Err(e),
        }
    }
    Err(Error::FamilyInfeasible {
        level,
        eps: rat_str(eps),
        max_depth: cfg.max_core,
        reason,
    })
}

/// A planned ladder: numbers and certificates, plus the families while in memory.
#[derive(Clone, Debug)]
pub struct BridgeSchedule {
    pub target: TargetSpec,
    pub m_max: u32,
    pub constants: ScaleConstants,
    pub levels: Vec<LevelNumbers>,
    pub lookahead: Option<LevelNumbers>,
    pub certificates: Vec<Vec<Inequality>>,
    pub families: Vec<Arc<ApproxFamily>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDoc {
    pub target: TargetDoc,
    pub m_max: u32,
    pub constants: ScaleConstants,
    pub levels: Vec<LevelNumbers>,
    pub lookahead: Option<LevelNumbers>,
    pub certificates: Vec<Vec<Inequality>>,
}

/// Re-evaluates every stored certificate from the stored numbers.
pub fn evaluate_certificates(
    levels: &[LevelNumbers],
    lookahead: Option<&LevelNumbers>,
    c: &ScaleConstants,
) -> Vec<Vec<Inequality>> {
    (0..levels.len())
        .map(|i| {
            let next = levels.get(i + 1).or(lookahead);
            level_certificates(levels, i, levels[i].k, next, c)
        })
        .collect()
}

impl ScheduleDoc {
    /// Stored certificates agree with a fresh evaluation, and offsets are consistent.
    pub fn recheck(&self) -> bool {
        let mut t = 0u64;
        for l in &self.levels {
            if l.t != t {
                return false;
            }
            t += l.n * l.k;
        }
        evaluate_certificates(&self.levels, self.lookahead.as_ref(), &self.constants) == self.certificates
    }

    pub fn all_pass(&self) -> bool {
        self.certificates.iter().flatten().all(|c| c.pass != Some(false))
    }

    pub fn total_symbols(&self) -> u64 {
        self.levels.last().map_or(0, |l| l.t + l.n * l.k)
    }
}

impl BridgeSchedule {
    pub fn doc(&self) -> ScheduleDoc {
        ScheduleDoc {
            target: self.target.to_doc(),
            m_max: self.m_max,
            constants: self.constants.clone(),
            levels: self.levels.clone(),
            lookahead: self.lookahead.clone(),
            certificates: self.certificates.clone(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.certificates.iter().flatten().all(|c| c.pass != Some(false))
    }

    /// `t_{i+1}` for every level.
    pub fn checkpoints(&self) -> Vec<u64> {
        self.levels.iter().map(|l| l.t + l.n * l.k).collect()
    }

    pub fn total_symbols(&self) -> u64 {
        self.checkpoints().last().copied().unwrap_or(0)
    }
}

/// Plans `cfg.levels` levels toward `target` with `ε_i = ε₀·2^{-i}`.
pub fn plan_schedule(scheme: &InducedScheme, target: &TargetSpec, cfg: &BridgeConfig) -> Result<BridgeSchedule> {
    target.validate(scheme.d())?;
    if cfg.levels < 2 {
        return Err(Error::Input("at least two levels are required".into()));
    }
    if cfg.eps0 <= Rational::zero() || cfg.eps0 >= rat_u(1, 1) {
        return Err(Error::Input(format!("eps0 = {} not in (0,1)", rat_str(&cfg.eps0))));
    }
    let stats = scheme.expansion_stats(cfg.stats_depth, cfg.stats_samples, cfg.family.seed)?;
    let consts = Constants::from(&stats);
    let scale = ScaleConstants {
        lambda_hat: Fixed(stats.lambda_hat),
        log_product: Fixed(stats.product_constant.ln()),
        log_distortion: Fixed(stats.distortion),
    };
    let conn = find_connectors(scheme)?;
    let count = cfg.levels + usize::from(cfg.lookahead);
    let pbars = target.sequence(count);
    let mut families = Vec::with_capacity(count);
    let mut numbers = Vec::with_capacity(count);
    for (i, pbar) in pbars.iter().enumerate() {
        let eps = &cfg.eps0 / Rational::from_integer(num_traits::pow(2.into(), i));
        let f = family_for_level(scheme, &conn, &consts, i, &eps, pbar, cfg)?;
        numbers.push(family_numbers(i, &f));
        families.push(Arc::new(f));
    }
    let lookahead = if cfg.lookahead {
        families.pop();
        numbers.pop()
    } else {
        None
    };
    let mut t = 0u64;
    for i in 0..numbers.len() {
        numbers[i].t = t;
        let next = numbers.get(i + 1).cloned().or_else(|| lookahead.clone());
        let k = minimal_dwell(&numbers, i, next.as_ref(), &scale, cfg.k_cap)?;
        numbers[i].k = k;
        t = t
            .checked_add(numbers[i].n.checked_mul(k).ok_or_else(|| overflow(i))?)
            .ok_or_else(|| overflow(i))?;
    }
    let certificates = evaluate_certificates(&numbers, lookahead.as_ref(), &scale);
    Ok(BridgeSchedule {
        target: target.clone(),
        m_max: scheme.m_max(),
        constants: scale,
        levels: numbers,
        lookahead,
        certificates,
        families,
    })
}

fn overflow(level: usize) -> Error {
    Error::NoScale {
        level,
        cap: u64::MAX,
        constraint: "symbol count overflows u64".into(),
    }
}

/// Largest `|p̄_i − p̄_{i+1}|` in max-norm over consecutive planned targets.
pub fn target_steps(levels: &[LevelNumbers]) -> Vec<Rational> {
    levels
        .windows(2)
        .map(|w| crate::exact::max_dist(&w[0].p_bar, &w[1].p_bar))
        .collect()
}

pub(crate) fn eps_f(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}
