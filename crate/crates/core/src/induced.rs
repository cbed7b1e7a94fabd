//! Inducing set `Y`, excursion regions `X_j`, level intervals and the return alphabet.
//!
//! Big images are the pieces `Y ∩ I_k` grouped by branch. A return symbol is a
//! first-return branch `(base component, target, level, image)`: the point leaves
//! its component, spends `level` steps in `X_target` (none for level 0) and lands
//! in the big image `image`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{Branch, MapSpec};

/// Below this width a piece's length is carried by derivatives instead of endpoints.
pub const RESOLVE_WIDTH: f64 = 1e-6;
const BOUNDARY_TOL: f64 = 1e-12;
const CONTAIN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }
    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
    pub fn contains_interval(&self, o: &Interval, tol: f64) -> bool {
        o.lo >= self.lo - tol && o.hi <= self.hi + tol
    }
    pub fn disjoint(&self, o: &Interval, tol: f64) -> bool {
        o.hi <= self.lo + tol || o.lo >= self.hi - tol
    }
    pub fn hull(&self, o: &Interval) -> Interval {
        Interval::new(self.lo.min(o.lo), self.hi.max(o.hi))
    }
}

/// Interval enclosure together with its log-length.
///
/// `lo`/`hi` are outward rounded; once the width drops below [`RESOLVE_WIDTH`]
/// the length is propagated through derivatives so it stays meaningful below
/// the floating-point resolution of the endpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub log_len: f64,
}

impl Piece {
    pub fn from_interval(iv: Interval) -> Piece {
        Piece {
            lo: iv.lo,
            hi: iv.hi,
            log_len: iv.len().ln(),
        }
    }
    pub fn interval(&self) -> Interval {
        Interval::new(self.lo, self.hi)
    }
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
    pub fn len(&self) -> f64 {
        self.log_len.exp()
    }
}

/// Pull a piece back through one inverse branch.
pub fn pull_piece(br: &Branch<f64>, p: &Piece) -> Piece {
    let lo = br.inverse(&p.lo).next_down().max(br.lo);
    let hi = br.inverse(&p.hi).next_up().min(br.hi);
    let w = hi - lo;
    let log_len = if w >= RESOLVE_WIDTH {
        w.ln()
    } else {
        p.log_len - br.deriv(&(0.5 * (lo + hi))).ln()
    };
    Piece { lo, hi, log_len }
}

/// Pull a point back through one inverse branch, accumulating `ln f'`.
pub fn pull_point(br: &Branch<f64>, z: f64, log_deriv: &mut f64) -> f64 {
    let x = br.inverse(&z);
    *log_deriv += br.deriv(&x).ln();
    x
}

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct YComponent {
    pub interval: Interval,
    pub branch: usize,
    pub big: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BigImage {
    pub comps: Vec<usize>,
    pub branch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct XRegion {
    pub interval: Interval,
    pub branch: usize,
    /// Neutral fixed point inside the region.
    pub xi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Region {
    Y(usize),
    X(usize),
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReturnSymbol {
    pub id: u32,
    /// Big image containing the symbol's cylinder.
    pub base: usize,
    pub base_comp: usize,
    /// Excursion region visited before returning; `None` for an immediate return.
    pub target: Option<usize>,
    pub level: u32,
    /// Big image the symbol's cylinder is mapped onto.
    pub image: usize,
}

impl ReturnSymbol {
    pub fn tau(&self) -> u64 {
        self.level as u64 + 1
    }
    pub fn tau_vec(&self, d: usize) -> Vec<u64> {
        let mut v = vec![0; d];
        if let Some(j) = self.target {
            v[j] = self.level as u64;
        }
        v
    }
    fn key(&self) -> (usize, usize, Option<usize>, u32, usize) {
        (self.base, self.base_comp, self.target, self.level, self.image)
    }
}

/// First-return time data of one return.
#[derive(Clone, Debug, PartialEq)]
pub struct HitRecord {
    pub tau: u64,
    pub tau_vec: Vec<u64>,
    pub image_point: f64,
}

#[derive(Clone, Debug)]
pub struct InducedScheme {
    map: MapSpec<f64>,
    m_max: u32,
    comps: Vec<YComponent>,
    bigs: Vec<BigImage>,
    xregions: Vec<XRegion>,
    /// Per target: exit components.
    exits: Vec<Vec<usize>>,
    /// Per target, per exit: pieces `f_j^{-m}(comp)` for `m = 0..=m_max`.
    levels: Vec<Vec<Vec<Piece>>>,
    /// Per target: `f_j^{-m_max}(X_j)`, the points with level above the truncation.
    deep: Vec<Piece>,
    segments: Vec<(Interval, Region)>,
    symbols: Vec<ReturnSymbol>,
    symbol_pieces: Vec<Vec<Piece>>,
    by_base: Vec<std::ops::Range<u32>>,
    index: HashMap<(usize, Option<usize>, u32, usize), u32>,
    /// Per base component: the targets reachable in one step.
    access: Vec<Vec<usize>>,
}

fn period_two_point(map: &MapSpec<f64>) -> Result<f64> {
    let (b0, b1) = (map.branch(0), map.branch(1));
    let h = |x: f64| b1.value(&b0.value(&x)) - x;
    let mut a = b0.inverse(&b1.lo);
    let mut b = b0.hi;
    if !(h(a) < 0.0 && h(b) > 0.0) {
        return Err(Error::RootFinding("period-2 bracket has no sign change".into()));
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if h(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    let g = 0.5 * (a + b);
    if h(g).abs() > 1e-12 {
        return Err(Error::RootFinding(format!("period-2 residual {}", h(g))));
    }
    Ok(g)
}

impl InducedScheme {
    pub fn build(map: MapSpec<f64>, m_max: u32) -> Result<Self> {
        let nb = map.branches().len();
        let mut comps: Vec<YComponent> = Vec::new();
        let mut xregions: Vec<XRegion> = vec![
            XRegion {
                interval: Interval::new(0.0, 0.0),
                branch: 0,
                xi: 0.0
            };
            map.d()
        ];
        let push = |comps: &mut Vec<YComponent>, lo: f64, hi: f64, branch: usize| {
            if hi - lo > 1e-15 {
                comps.push(YComponent {
                    interval: Interval::new(lo, hi),
                    branch,
                    big: 0,
                });
            }
        };
        if map.d() == 2 && map.d_prime() == 0 && nb == 2 {
            let g = period_two_point(&map)?;
            let fg = map.branch(0).value(&g);
            let mid = map.branch(0).hi;
            push(&mut comps, g, mid, 0);
            push(&mut comps, mid, fg, 1);
            for (j, fp) in map.fixed_points().iter().enumerate() {
                let iv = if fp.branch == 0 {
                    Interval::new(0.0, g)
                } else {
                    Interval::new(fg, 1.0)
                };
                xregions[j] = XRegion {
                    interval: iv,
                    branch: fp.branch,
                    xi: fp.xi,
                };
            }
        } else {
            for (i, br) in map.branches().iter().enumerate() {
                match map.neutral_index(i) {
                    Some(j) => {
                        let gl = br.inverse(&br.lo);
                        let gh = br.inverse(&br.hi);
                        push(&mut comps, br.lo, gl, i);
                        push(&mut comps, gh, br.hi, i);
                        xregions[j] = XRegion {
                            interval: Interval::new(gl, gh),
                            branch: i,
                            xi: br.xi,
                        };
                    }
                    None => push(&mut comps, br.lo, br.hi, i),
                }
            }
        }
        let mut bigs: Vec<BigImage> = Vec::new();
        for (ci, c) in comps.iter_mut().enumerate() {
            match bigs.iter().position(|b| b.branch == c.branch) {
                Some(k) => {
                    bigs[k].comps.push(ci);
                    c.big = k;
                }
                None => {
                    c.big = bigs.len();
                    bigs.push(BigImage {
                        comps: vec![ci],
                        branch: c.branch,
                    });
                }
            }
        }

        let mut segments: Vec<(Interval, Region)> = comps
            .iter()
            .enumerate()
            .map(|(i, c)| (c.interval, Region::Y(i)))
            .chain(
                xregions
                    .iter()
                    .enumerate()
                    .map(|(j, x)| (x.interval, Region::X(j))),
            )
            .filter(|(iv, _)| !iv.is_empty())
            .collect();
        segments.sort_by(|a, b| a.0.lo.partial_cmp(&b.0.lo).unwrap());
        let total: f64 = segments.iter().map(|s| s.0.len()).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::NotMarkov(format!("Y and X regions cover {total} of [0,1]")));
        }

        // big images reachable from an excursion region
        let big_inside = |j: &Interval, k: usize| -> Result<bool> {
            let inside = bigs[k]
                .comps
                .iter()
                .all(|&c| j.contains_interval(&comps[c].interval, CONTAIN_TOL));
            let outside = bigs[k]
                .comps
                .iter()
                .all(|&c| j.disjoint(&comps[c].interval, CONTAIN_TOL));
            if !inside && !outside {
                return Err(Error::NotMarkov(format!(
                    "big image {k} partially covered by ({}, {})",
                    j.lo, j.hi
                )));
            }
            Ok(inside)
        };
        let mut exits = Vec::with_capacity(map.d());
        for xr in &xregions {
            let br = map.branch(xr.branch);
            let img = Interval::new(br.value(&xr.interval.lo), br.value(&xr.interval.hi));
            let mut e = Vec::new();
            for k in 0..bigs.len() {
                if big_inside(&img, k)? {
                    e.extend(bigs[k].comps.iter().cloned());
                }
            }
            if e.is_empty() {
                return Err(Error::NotMarkov("excursion region with no exit".into()));
            }
            exits.push(e);
        }

        let mut levels = Vec::with_capacity(map.d());
        let mut deep = Vec::with_capacity(map.d());
        for (j, xr) in xregions.iter().enumerate() {
            let br = map.branch(xr.branch);
            let mut per_exit = Vec::new();
            for &c in &exits[j] {
                let mut v = Vec::with_capacity(m_max as usize + 1);
                let mut p = Piece::from_interval(comps[c].interval);
                v.push(p);
                for _ in 0..m_max {
                    p = pull_piece(br, &p);
                    v.push(p);
                }
                per_exit.push(v);
            }
            levels.push(per_exit);
            let mut p = Piece::from_interval(xr.interval);
            for _ in 0..m_max {
                p = pull_piece(br, &p);
            }
            deep.push(p);
        }

        let mut symbols = Vec::new();
        let mut pieces: Vec<Vec<Piece>> = Vec::new();
        let mut access = Vec::with_capacity(comps.len());
        for (b, comp) in comps.iter().enumerate() {
            let br = map.branch(comp.branch);
            let j_iv = Interval::new(br.value(&comp.interval.lo), br.value(&comp.interval.hi));
            let mut covered = 0.0;
            for k in 0..bigs.len() {
                if big_inside(&j_iv, k)? {
                    let ps: Vec<Piece> = bigs[k]
                        .comps
                        .iter()
                        .map(|&c| pull_piece(br, &Piece::from_interval(comps[c].interval)))
                        .collect();
                    covered += bigs[k].comps.iter().map(|&c| comps[c].interval.len()).sum::<f64>();
                    symbols.push(ReturnSymbol {
                        id: 0,
                        base: comp.big,
                        base_comp: b,
                        target: None,
                        level: 0,
                        image: k,
                    });
                    pieces.push(ps);
                }
            }
            let mut acc = Vec::new();
            for (j, xr) in xregions.iter().enumerate() {
                if j_iv.contains_interval(&xr.interval, CONTAIN_TOL) {
                    acc.push(j);
                    covered += xr.interval.len();
                    for k in 0..bigs.len() {
                        let ex: Vec<usize> = (0..exits[j].len())
                            .filter(|&e| comps[exits[j][e]].big == k)
                            .collect();
                        if ex.is_empty() {
                            continue;
                        }
                        for m in 1..=m_max {
                            let ps = ex
                                .iter()
                                .map(|&e| pull_piece(br, &levels[j][e][m as usize]))
                                .collect();
                            symbols.push(ReturnSymbol {
                                id: 0,
                                base: comp.big,
                                base_comp: b,
                                target: Some(j),
                                level: m,
                                image: k,
                            });
                            pieces.push(ps);
                        }
                    }
                } else if !j_iv.disjoint(&xr.interval, CONTAIN_TOL) {
                    return Err(Error::NotMarkov(format!(
                        "component {b} partially enters region {j}"
                    )));
                }
            }
            if (covered - j_iv.len()).abs() > 1e-9 {
                return Err(Error::NotMarkov(format!(
                    "image of component {b} is not a union of partition elements"
                )));
            }
            access.push(acc);
        }
        let mut order: Vec<usize> = (0..symbols.len()).collect();
        order.sort_by_key(|&i| symbols[i].key());
        let symbols: Vec<ReturnSymbol> = order
            .iter()
            .enumerate()
            .map(|(id, &i)| ReturnSymbol {
                id: id as u32,
                ..symbols[i].clone()
            })
            .collect();
        let symbol_pieces: Vec<Vec<Piece>> = order.iter().map(|&i| pieces[i].clone()).collect();
        let mut by_base = vec![0..0; bigs.len()];
        for k in 0..bigs.len() {
            let s = symbols.partition_point(|x| x.base < k) as u32;
            let e = symbols.partition_point(|x| x.base <= k) as u32;
            by_base[k] = s..e;
        }
        let index = symbols
            .iter()
            .map(|s| ((s.base_comp, s.target, s.level, s.image), s.id))
            .collect();
        Ok(InducedScheme {
            map,
            m_max,
            comps,
            bigs,
            xregions,
            exits,
            levels,
            deep,
            segments,
            symbols,
            symbol_pieces,
            by_base,
            index,
            access,
        })
    }

    pub fn map(&self) -> &MapSpec<f64> {
        &self.map
    }
    pub fn m_max(&self) -> u32 {
        self.m_max
    }
    pub fn d(&self) -> usize {
        self.xregions.len()
    }
    pub fn y_components(&self) -> &[YComponent] {
        &self.comps
    }
    pub fn big_images(&self) -> &[BigImage] {
        &self.bigs
    }
    /// Number of big images.
    pub fn l(&self) -> usize {
        self.bigs.len()
    }
    pub fn x_regions(&self) -> &[XRegion] {
        &self.xregions
    }
    pub fn exits(&self, target: usize) -> &[usize] {
        &self.exits[target]
    }
    /// `f_j^{-m}` of exit component `exits(j)[e]`.
    pub fn level(&self, target: usize, exit: usize, m: u32) -> &Piece {
        &self.levels[target][exit][m as usize]
    }
    pub fn symbols(&self) -> &[ReturnSymbol] {
        &self.symbols
    }
    pub fn symbol(&self, id: u32) -> &ReturnSymbol {
        &self.symbols[id as usize]
    }
    pub fn symbol_pieces(&self, id: u32) -> &[Piece] {
        &self.symbol_pieces[id as usize]
    }
    pub fn symbol_log_len(&self, id: u32) -> f64 {
        log_sum_exp(self.symbol_pieces[id as usize].iter().map(|p| p.log_len))
    }
    /// Symbol ids whose cylinder lies in big image `k`.
    pub fn symbols_from(&self, k: usize) -> std::ops::Range<u32> {
        self.by_base[k].clone()
    }
    pub fn access(&self, comp: usize) -> &[usize] {
        &self.access[comp]
    }
    pub fn lookup(&self, base_comp: usize, target: Option<usize>, level: u32, image: usize) -> Option<u32> {
        self.index.get(&(base_comp, target, level, image)).cloned()
    }
    pub fn big_len(&self, k: usize) -> f64 {
        self.bigs[k].comps.iter().map(|&c| self.comps[c].interval.len()).sum()
    }
    pub fn y_len(&self) -> f64 {
        self.comps.iter().map(|c| c.interval.len()).sum()
    }
    /// Pieces of big image `k` as starting enclosures.
    pub fn big_pieces(&self, k: usize) -> Vec<Piece> {
        self.bigs[k]
            .comps
            .iter()
            .map(|&c| Piece::from_interval(self.comps[c].interval))
            .collect()
    }

    /// Boolean big-image transition matrix.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let l = self.l();
        let mut a = vec![vec![false; l]; l];
        for s in &self.symbols {
            a[s.base][s.image] = true;
        }
        a
    }

    /// Inverse branches of one symbol, applied in order (first to last).
    pub fn inverse_chain(&self, id: u32) -> impl Iterator<Item = &Branch<f64>> {
        let s = &self.symbols[id as usize];
        let base_br = self.map.branch(self.comps[s.base_comp].branch);
        let exc = s
            .target
            .map(|j| (self.map.branch(self.xregions[j].branch), s.level as usize));
        let (xb, n) = match exc {
            Some((b, n)) => (Some(b), n),
            None => (None, 0),
        };
        std::iter::repeat(xb).take(n).flatten().chain(std::iter::once(base_br))
    }

    /// Branch indices of [`inverse_chain`](Self::inverse_chain), in the same order.
    pub fn branch_chain(&self, id: u32) -> Vec<usize> {
        let s = &self.symbols[id as usize];
        let mut v = Vec::with_capacity(s.level as usize + 1);
        if let Some(j) = s.target {
            v.extend(std::iter::repeat(self.xregions[j].branch).take(s.level as usize));
        }
        v.push(self.comps[s.base_comp].branch);
        v
    }

    pub fn pull_piece_symbol(&self, id: u32, p: &Piece) -> Piece {
        let mut q = *p;
        for br in self.inverse_chain(id) {
            q = pull_piece(br, &q);
        }
        q
    }

    pub fn pull_point_symbol(&self, id: u32, z: f64, log_deriv: &mut f64) -> f64 {
        let mut x = z;
        for br in self.inverse_chain(id) {
            x = pull_point(br, x, log_deriv);
        }
        x
    }

    /// Region containing `x`, using closed `Y` components (no boundary tag).
    pub fn classify(&self, x: f64) -> Region {
        let i = self.segments.partition_point(|s| s.0.hi < x);
        if i >= self.segments.len() {
            return self.segments.last().map(|s| s.1).unwrap_or(Region::Boundary);
        }
        let (iv, r) = self.segments[i];
        if let Region::X(_) = r {
            if x >= iv.hi {
                if let Some((_, r2 @ Region::Y(_))) = self.segments.get(i + 1) {
                    return *r2;
                }
            }
        }
        r
    }

    pub fn region_of(&self, x: f64) -> Region {
        for (iv, _) in &self.segments {
            if (x - iv.lo).abs() <= BOUNDARY_TOL || (x - iv.hi).abs() <= BOUNDARY_TOL {
                return Region::Boundary;
            }
        }
        self.classify(x)
    }

    /// Honest iteration until the first return to `Y`.
    pub fn hit_time(&self, x: f64, n_max: u64) -> Result<HitRecord> {
        if !matches!(self.classify(x), Region::Y(_)) {
            return Err(Error::NotInY(x));
        }
        let mut tau_vec = vec![0u64; self.d()];
        let mut cur: Option<usize> = None;
        let mut z = x;
        for n in 1..=n_max {
            z = self.map.eval(&z)?;
            match self.classify(z) {
                Region::Y(_) => {
                    return Ok(HitRecord {
                        tau: n,
                        tau_vec,
                        image_point: z,
                    })
                }
                Region::X(j) => {
                    if let Some(c) = cur {
                        if c != j {
                            return Err(Error::Separation { from: c, to: j });
                        }
                    }
                    cur = Some(j);
                    tau_vec[j] += 1;
                }
                Region::Boundary => unreachable!("classify never returns a boundary"),
            }
        }
        Err(Error::NoReturn(n_max))
    }

    fn level_search(&self, j: usize, z: f64) -> Option<(usize, u32)> {
        let xi = self.xregions[j].xi;
        for (e, lv) in self.levels[j].iter().enumerate() {
            let left = lv[0].hi <= xi;
            let m = if left {
                lv[1..].partition_point(|p| p.lo <= z)
            } else {
                lv[1..].partition_point(|p| p.hi >= z)
            };
            if m >= 1 && lv[m].interval().contains(z) {
                return Some((e, m as u32));
            }
        }
        None
    }

    /// Return symbol of `y`; the level is read off the level tables.
    pub fn symbol_of(&self, y: f64) -> Result<&ReturnSymbol> {
        let b = match self.classify(y) {
            Region::Y(b) => b,
            _ => return Err(Error::NotInY(y)),
        };
        let br = self.map.branch(self.comps[b].branch);
        let z = br.value(&y);
        let key = match self.classify(z) {
            Region::Y(c) => (b, None, 0, self.comps[c].big),
            Region::X(j) => match self.level_search(j, z) {
                Some((e, m)) => (b, Some(j), m, self.comps[self.exits[j][e]].big),
                None => {
                    if self.deep[j].interval().contains(z) {
                        return Err(Error::Truncation {
                            level: self.m_max as u64 + 1,
                            m_max: self.m_max,
                        });
                    }
                    let h = self.hit_time(y, u64::MAX)?;
                    let m = h.tau - 1;
                    if m > self.m_max as u64 {
                        return Err(Error::Truncation {
                            level: m,
                            m_max: self.m_max,
                        });
                    }
                    let c = match self.classify(h.image_point) {
                        Region::Y(c) => c,
                        _ => unreachable!(),
                    };
                    (b, Some(j), m as u32, self.comps[c].big)
                }
            },
            Region::Boundary => unreachable!(),
        };
        self.index
            .get(&key)
            .map(|&id| &self.symbols[id as usize])
            .ok_or_else(|| Error::NotMarkov(format!("no symbol for {key:?}")))
    }

    /// One induced step `F(y)` by honest iteration of the symbol's return time.
    pub fn induced_step(&self, y: f64, tau: u64) -> Result<f64> {
        let mut z = y;
        for _ in 0..tau {
            z = self.map.eval(&z)?;
        }
        Ok(z)
    }

    /// Lebesgue mass of the points whose excursion into `X_j` is deeper than `m_max`.
    pub fn untracked_mass(&self, j: usize) -> f64 {
        self.deep[j].len()
    }

    /// The same, seen from `Y` (pulled back through the entering branches).
    pub fn untracked_y_mass(&self, j: usize) -> f64 {
        self.comps
            .iter()
            .enumerate()
            .filter(|(b, _)| self.access[*b].contains(&j))
            .map(|(_, c)| pull_piece(self.map.branch(c.branch), &self.deep[j]).len())
            .sum()
    }

    pub fn tail_table(&self) -> Result<TailTable> {
        if self.m_max < 100 {
            return Err(Error::TailFit(self.m_max));
        }
        let mm = self.m_max as usize;
        let mut rows = Vec::with_capacity(self.d());
        for j in 0..self.d() {
            let mut per_level = vec![0.0f64; mm + 1];
            for (id, s) in self.symbols.iter().enumerate() {
                if s.target == Some(j) {
                    per_level[s.level as usize] += self.symbol_log_len(id as u32).exp();
                }
            }
            let untracked = self.untracked_y_mass(j);
            let mut mass = vec![0.0f64; mm + 1];
            let mut acc = untracked;
            for n in (0..=mm).rev() {
                mass[n] = acc;
                acc += per_level[n];
            }
            let lo = (mm / 100).max(1);
            let (mut sx, mut sy, mut sxx, mut sxy, mut k) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (n, &v) in mass.iter().enumerate().skip(lo) {
                let x = (n as f64).ln();
                let y = v.ln();
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
                k += 1.0;
            }
            let slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
            let intercept = (sy - slope * sx) / k;
            rows.push(TailRow {
                target: j,
                mass,
                alpha_hat: -slope,
                gamma_hat: intercept.exp(),
                untracked,
            });
        }
        Ok(TailTable { rows })
    }

    /// `(λ̂, D̂)` and the product constant `K = e^{D̂} / min_k |Y_k|`.
    pub fn expansion_stats(&self, depth: usize, samples: usize, seed: u64) -> Result<ExpansionStats> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lambda = f64::INFINITY;
        // one induced step: every symbol at the ends (and middle, for short excursions) of its
        // pieces; deep excursions reuse the level endpoints, which are exactly those pullbacks
        let mut cum: Vec<Vec<(Vec<f64>, Vec<f64>)>> = Vec::with_capacity(self.d());
        for (j, xr) in self.xregions.iter().enumerate() {
            let br = self.map.branch(xr.branch);
            let mut per = Vec::new();
            for lv in &self.levels[j] {
                let (mut a, mut b) = (vec![0.0], vec![0.0]);
                for p in &lv[1..] {
                    a.push(a.last().unwrap() + br.deriv(&p.lo).ln());
                    b.push(b.last().unwrap() + br.deriv(&p.hi).ln());
                }
                per.push((a, b));
            }
            cum.push(per);
        }
        for id in 0..self.symbols.len() as u32 {
            let s = &self.symbols[id as usize];
            if s.level <= 64 {
                for &c in &self.bigs[s.image].comps {
                    let iv = self.comps[c].interval;
                    for z in [iv.lo, iv.mid(), iv.hi] {
                        let mut ld = 0.0;
                        self.pull_point_symbol(id, z, &mut ld);
                        lambda = lambda.min(ld.exp());
                    }
                }
            } else {
                let j = s.target.unwrap();
                let base_br = self.map.branch(self.comps[s.base_comp].branch);
                for (e, &c) in self.exits[j].iter().enumerate() {
                    if self.comps[c].big != s.image {
                        continue;
                    }
                    let p = &self.levels[j][e][s.level as usize];
                    let (a, b) = &cum[j][e];
                    for (z, acc) in [(p.lo, a[s.level as usize]), (p.hi, b[s.level as usize])] {
                        let mut ld = acc;
                        pull_point(base_br, z, &mut ld);
                        lambda = lambda.min(ld.exp());
                    }
                }
            }
        }
        for _ in 0..samples {
            let y = self.random_y(&mut rng);
            if let Ok(s) = self.symbol_of(y) {
                let mut z = y;
                let mut ld = 0.0;
                for _ in 0..s.tau() {
                    let (fz, dz, _) = self.map.eval_with_deriv(&z)?;
                    ld += dz.ln();
                    z = fz;
                }
                lambda = lambda.min(ld.exp());
            }
        }
        let mut dist: f64 = 0.0;
        for k in 0..samples {
            let word = if k % 2 == 0 {
                match self.random_word_by_point(depth, &mut rng) {
                    Some(w) => w,
                    None => continue,
                }
            } else {
                self.random_word_by_walk(depth, &mut rng)
            };
            let image = self.symbols[*word.last().unwrap() as usize].image;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &c in &self.bigs[image].comps {
                let iv = self.comps[c].interval;
                let mut zs = vec![iv.lo, iv.hi];
                for _ in 0..4 {
                    zs.push(rng.gen_range(iv.lo..iv.hi));
                }
                for z in zs {
                    let mut ld = 0.0;
                    let mut x = z;
                    for &id in word.iter().rev() {
                        x = self.pull_point_symbol(id, x, &mut ld);
                    }
                    lo = lo.min(ld);
                    hi = hi.max(ld);
                }
            }
            dist = dist.max(hi - lo);
        }
        let min_big = (0..self.l()).map(|k| self.big_len(k)).fold(f64::INFINITY, f64::min);
        Ok(ExpansionStats {
            lambda_hat: lambda,
            distortion: dist,
            product_constant: dist.exp() / min_big,
            depth,
            samples,
        })
    }

    pub fn random_y<R: Rng>(&self, rng: &mut R) -> f64 {
        let total = self.y_len();
        let mut u = rng.gen_range(0.0..total);
        for c in &self.comps {
            let l = c.interval.len();
            if u < l {
                return c.interval.lo + u;
            }
            u -= l;
        }
        self.comps.last().unwrap().interval.hi
    }

    fn random_word_by_point<R: Rng>(&self, depth: usize, rng: &mut R) -> Option<Vec<u32>> {
        let mut y = self.random_y(rng);
        let mut w = Vec::with_capacity(depth);
        for _ in 0..depth {
            let s = self.symbol_of(y).ok()?;
            w.push(s.id);
            y = self.induced_step(y, s.tau()).ok()?;
            if !matches!(self.classify(y), Region::Y(_)) {
                return None;
            }
        }
        Some(w)
    }

    /// Uniform symbol walk along admissible transitions.
    pub fn random_word_by_walk<R: Rng>(&self, depth: usize, rng: &mut R) -> Vec<u32> {
        let mut w = Vec::with_capacity(depth);
        let mut id = rng.gen_range(0..self.symbols.len() as u32);
        w.push(id);
        while w.len() < depth {
            let r = self.symbols_from(self.symbols[id as usize].image);
            id = rng.gen_range(r);
            w.push(id);
        }
        w
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TailRow {
    pub target: usize,
    /// `mass[n] = Leb{ y ∈ Y : τ^{(j)}(y) > n }` for `n = 0..=m_max`.
    pub mass: Vec<f64>,
    pub alpha_hat: f64,
    pub gamma_hat: f64,
    pub untracked: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailTable {
    pub rows: Vec<TailRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpansionStats {
    pub lambda_hat: f64,
    /// Log-distortion of `F^depth` on sampled cylinders.
    pub distortion: f64,
    /// Multiplicative constant for `|ab|` against `|a||b|`.
    pub product_constant: f64,
    pub depth: usize,
    pub samples: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(m: u32) -> InducedScheme {
        InducedScheme::build(MapSpec::example(), m).unwrap()
    }

    #[test]
    fn example_geometry() {
        let s = example(20);
        let c: Vec<Interval> = s.y_components().iter().map(|c| c.interval).collect();
        assert_eq!(c.len(), 4);
        assert!((c[0].lo - 0.196585).abs() < 1e-5 && (c[0].hi - 1.0 / 3.0).abs() < 1e-15);
        assert!((c[1].hi - 0.401708).abs() < 1e-5);
        assert!((c[2].lo - 0.598292).abs() < 1e-5);
        assert!((c[3].hi - 0.803415).abs() < 1e-5);
        assert_eq!(s.l(), 3);
        assert_eq!(s.symbols().len(), 126);
        assert_eq!(s.region_of(0.25), Region::Y(0));
        assert_eq!(s.region_of(0.5), Region::X(1));
        assert_eq!(s.region_of(0.0), Region::Boundary);
    }

    #[test]
    fn zero_levels() {
        let s = example(0);
        for j in 0..3 {
            for (e, &c) in s.exits(j).iter().enumerate() {
                assert_eq!(s.level(j, e, 0).interval(), s.y_components()[c].interval);
            }
        }
        assert!(s.symbols().iter().all(|x| x.level == 0));
    }

    #[test]
    fn hit_time_matches_symbol() {
        let s = example(200);
        let h = s.hit_time(0.25, 1_000_000).unwrap();
        assert_eq!(h.tau, 1 + h.tau_vec[1]);
        assert!(h.tau_vec[1] >= 1 && h.tau_vec[0] == 0 && h.tau_vec[2] == 0);
        let sym = s.symbol_of(0.25).unwrap();
        assert_eq!(sym.tau(), h.tau);
        assert_eq!(sym.target, Some(1));
    }

    #[test]
    fn period_two_inducing_set() {
        let s = InducedScheme::build(MapSpec::thaler(2, 3.0).unwrap(), 20).unwrap();
        let c = s.y_components();
        let g = c[0].interval.lo;
        assert!(g > 0.0 && g < 0.5);
        let f = s.map();
        let fg = f.eval(&g).unwrap();
        assert!((f.eval(&fg).unwrap() - g).abs() < 1e-12);
        assert!((c[1].interval.hi - fg).abs() < 1e-15);
        assert_eq!(s.l(), 2);
    }
}
