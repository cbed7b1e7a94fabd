//! Cylinders of the return map: enumeration, concatenation, enclosures and exact
//! return-time ratios.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact::{ratio_vec, RatioBall, Rational};
use crate::induced::{log_sum_exp, InducedScheme, Interval, Piece, Region};

/// Default materialization cap for unfiltered enumeration.
pub const CYLINDER_CAP: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Cylinder {
    pub word: Vec<u32>,
    /// Enclosures of the cylinder's pieces (one per component of the image).
    pub pieces: Vec<Piece>,
    pub tau: u64,
    pub tau_vec: Vec<u64>,
    pub base: usize,
    pub image: usize,
}

impl Cylinder {
    pub fn n(&self) -> usize {
        self.word.len()
    }
    pub fn log_len(&self) -> f64 {
        log_sum_exp(self.pieces.iter().map(|p| p.log_len))
    }
    pub fn len(&self) -> f64 {
        self.log_len().exp()
    }
    /// Hull of the piece enclosures.
    pub fn enclosure(&self) -> Interval {
        self.pieces
            .iter()
            .map(|p| p.interval())
            .reduce(|a, b| a.hull(&b))
            .expect("cylinder has a piece")
    }
    pub fn contains(&self, x: f64) -> bool {
        self.pieces.iter().any(|p| p.interval().contains(x))
    }
    pub fn ratio(&self) -> Vec<Rational> {
        ratio_vec(&self.tau_vec, self.tau)
    }
}

/// Pull `pieces` back through `word`, last symbol first.
pub fn pull_back(scheme: &InducedScheme, word: &[u32], pieces: &[Piece]) -> Vec<Piece> {
    let mut ps = pieces.to_vec();
    for &id in word.iter().rev() {
        for p in ps.iter_mut() {
            *p = scheme.pull_piece_symbol(id, p);
        }
    }
    ps
}

pub fn check_admissible(scheme: &InducedScheme, word: &[u32]) -> Result<()> {
    for w in word.windows(2) {
        let a = scheme.symbol(w[0]);
        let b = scheme.symbol(w[1]);
        if a.image != b.base {
            return Err(Error::Inadmissible {
                image: a.image,
                base: b.base,
            });
        }
    }
    Ok(())
}

fn tau_data(scheme: &InducedScheme, word: &[u32]) -> (u64, Vec<u64>) {
    let mut tv = vec![0u64; scheme.d()];
    let mut t = 0;
    for &id in word {
        let s = scheme.symbol(id);
        t += s.tau();
        if let Some(j) = s.target {
            tv[j] += s.level as u64;
        }
    }
    (t, tv)
}

/// Cylinder of an admissible word.
pub fn cylinder(scheme: &InducedScheme, word: &[u32]) -> Result<Cylinder> {
    if word.is_empty() {
        return Err(Error::Input("empty word".into()));
    }
    check_admissible(scheme, word)?;
    let last = scheme.symbol(*word.last().unwrap());
    let pieces = if word.len() == 1 {
        scheme.symbol_pieces(word[0]).to_vec()
    } else {
        let tail = scheme.symbol_pieces(*word.last().unwrap());
        pull_back(scheme, &word[..word.len() - 1], tail)
    };
    let (tau, tau_vec) = tau_data(scheme, word);
    Ok(Cylinder {
        word: word.to_vec(),
        pieces,
        tau,
        tau_vec,
        base: scheme.symbol(word[0]).base,
        image: last.image,
    })
}

/// All symbols as one-cylinders, in lexicographic order.
pub fn alphabet(scheme: &InducedScheme) -> Vec<Cylinder> {
    (0..scheme.symbols().len() as u32)
        .map(|id| cylinder(scheme, &[id]).expect("symbol is admissible"))
        .collect()
}

/// `ab = a ∩ F^{-n} b`.
pub fn concat(scheme: &InducedScheme, a: &Cylinder, b: &Cylinder) -> Result<Cylinder> {
    if a.image != b.base {
        return Err(Error::Inadmissible {
            image: a.image,
            base: b.base,
        });
    }
    let mut word = a.word.clone();
    word.extend_from_slice(&b.word);
    Ok(Cylinder {
        pieces: pull_back(scheme, &a.word, &b.pieces),
        tau: a.tau + b.tau,
        tau_vec: a.tau_vec.iter().zip(&b.tau_vec).map(|(x, y)| x + y).collect(),
        base: a.base,
        image: b.image,
        word,
    })
}

/// The `ℓ`-cylinder containing `x`, found by following the orbit.
pub fn locate(scheme: &InducedScheme, x: f64, ell: usize) -> Result<Cylinder> {
    let mut word = Vec::with_capacity(ell);
    let mut y = x;
    for k in 0..ell {
        let s = scheme.symbol_of(y)?;
        word.push(s.id);
        if k + 1 < ell {
            y = scheme.induced_step(y, s.tau())?;
            if !matches!(scheme.classify(y), Region::Y(_)) {
                return Err(Error::NotInY(y));
            }
        }
    }
    cylinder(scheme, &word)
}

pub fn ratio(c: &Cylinder) -> Vec<Rational> {
    c.ratio()
}

/// Predicate on return-time data, with optional pruning of partial words.
pub trait WordFilter: Sync {
    /// `true` if no completion of a prefix with these totals and `remaining`
    /// further symbols can be accepted.
    fn prune(&self, _remaining: usize, _tau: u64, _tau_vec: &[u64]) -> bool {
        false
    }
    fn accept(&self, tau: u64, tau_vec: &[u64]) -> bool;
}

/// Ratio lies in an open max-norm ball; pruning uses the truncation level.
pub struct BallFilter {
    pub ball: RatioBall,
    pub m_max: u32,
}

impl WordFilter for BallFilter {
    fn prune(&self, remaining: usize, tau: u64, tau_vec: &[u64]) -> bool {
        if remaining == 0 {
            return false;
        }
        let r = remaining as i128;
        let big_m = self.m_max as i128;
        let t = tau as i128;
        tau_vec.iter().enumerate().any(|(j, &v)| {
            let v = v as i128;
            // largest reachable ratio: every remaining symbol an excursion of maximal level into j
            let max_num = v + r * big_m;
            let max_den = t + r * (big_m + 1);
            // smallest: no more time in j, maximal total time
            let min_num = v;
            let min_den = t + r * (big_m + 1);
            !self.ball.above_lo(j, max_num, max_den) || !self.ball.below_hi(j, min_num, min_den)
        })
    }
    fn accept(&self, tau: u64, tau_vec: &[u64]) -> bool {
        self.ball.contains(tau_vec, tau)
    }
}

/// Words as `(word, tau, tau_vec)` without geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct WordData {
    pub word: Vec<u32>,
    pub tau: u64,
    pub tau_vec: Vec<u64>,
}

fn dfs(
    scheme: &InducedScheme,
    n: usize,
    filter: Option<&dyn WordFilter>,
    prefix: &mut Vec<u32>,
    tau: u64,
    tau_vec: &mut Vec<u64>,
    out: &mut dyn FnMut(&[u32], u64, &[u64]) -> bool,
) -> bool {
    if prefix.len() == n {
        if filter.map_or(true, |f| f.accept(tau, tau_vec)) {
            return out(prefix, tau, tau_vec);
        }
        return true;
    }
    if let Some(f) = filter {
        if f.prune(n - prefix.len(), tau, tau_vec) {
            return true;
        }
    }
    let image = scheme.symbol(*prefix.last().unwrap()).image;
    for id in scheme.symbols_from(image) {
        let s = scheme.symbol(id);
        prefix.push(id);
        if let Some(j) = s.target {
            tau_vec[j] += s.level as u64;
        }
        let go = dfs(scheme, n, filter, prefix, tau + s.tau(), tau_vec, out);
        if let Some(j) = s.target {
            tau_vec[j] -= s.level as u64;
        }
        prefix.pop();
        if !go {
            return false;
        }
    }
    true
}

/// Stream all admissible `n`-words (lexicographic order) that pass `filter`,
/// without computing enclosures. `visit` returns `false` to stop.
pub fn for_each_word_data(
    scheme: &InducedScheme,
    n: usize,
    filter: Option<&dyn WordFilter>,
    visit: &mut dyn FnMut(&[u32], u64, &[u64]) -> bool,
) {
    if n == 0 {
        return;
    }
    let d = scheme.d();
    for id in 0..scheme.symbols().len() as u32 {
        let s = scheme.symbol(id);
        let mut tv = vec![0u64; d];
        if let Some(j) = s.target {
            tv[j] = s.level as u64;
        }
        let mut prefix = vec![id];
        if !dfs(scheme, n, filter, &mut prefix, s.tau(), &mut tv, visit) {
            return;
        }
    }
}

/// Filtered words in lexicographic order, enumerated in parallel by first symbol.
pub fn word_data(scheme: &InducedScheme, n: usize, filter: Option<&dyn WordFilter>) -> Vec<WordData> {
    if n == 0 {
        return Vec::new();
    }
    let d = scheme.d();
    let chunks: Vec<Vec<WordData>> = (0..scheme.symbols().len() as u32)
        .into_par_iter()
        .map(|id| {
            let s = scheme.symbol(id);
            let mut tv = vec![0u64; d];
            if let Some(j) = s.target {
                tv[j] = s.level as u64;
            }
            let mut out = Vec::new();
            let mut prefix = vec![id];
            dfs(scheme, n, filter, &mut prefix, s.tau(), &mut tv, &mut |w, t, v| {
                out.push(WordData {
                    word: w.to_vec(),
                    tau: t,
                    tau_vec: v.to_vec(),
                });
                true
            });
            out
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

/// All admissible `n`-cylinders passing `filter`, lexicographic order.
///
/// Without a filter the result is capped at [`CYLINDER_CAP`].
pub fn enumerate_words(
    scheme: &InducedScheme,
    n: usize,
    filter: Option<&dyn WordFilter>,
) -> Result<Vec<Cylinder>> {
    if filter.is_none() {
        let count = count_words(scheme, n);
        if count > CYLINDER_CAP as u128 {
            return Err(Error::CapExceeded(CYLINDER_CAP));
        }
    }
    let data = word_data(scheme, n, filter);
    Ok(data
        .into_par_iter()
        .map(|w| {
            let last = *w.word.last().unwrap();
            let pieces = pull_back(scheme, &w.word[..w.word.len() - 1], scheme.symbol_pieces(last));
            Cylinder {
                base: scheme.symbol(w.word[0]).base,
                image: scheme.symbol(last).image,
                pieces,
                tau: w.tau,
                tau_vec: w.tau_vec,
                word: w.word,
            }
        })
        .collect())
}

/// Number of admissible `n`-words, by counting paths in the big-image graph.
pub fn count_words(scheme: &InducedScheme, n: usize) -> u128 {
    if n == 0 {
        return 0;
    }
    let l = scheme.l();
    // ends[k] = number of words of the current length ending in image k
    let mut ends = vec![0u128; l];
    for s in scheme.symbols() {
        ends[s.image] += 1;
    }
    for _ in 1..n {
        let mut next = vec![0u128; l];
        for s in scheme.symbols() {
            next[s.image] = next[s.image].saturating_add(ends[s.base]);
        }
        ends = next;
    }
    ends.iter().fold(0u128, |a, &b| a.saturating_add(b))
}

/// CSV dump: word, lo, hi, tau_n, tau_vec, base, image.
pub fn cylinders_csv(cyls: &[Cylinder]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Input(e.to_string());
    w.write_record(["word", "lo", "hi", "log_len", "tau_n", "tau_vec", "base", "image"])
        .map_err(io)?;
    for c in cyls {
        let e = c.enclosure();
        w.write_record([
            join(&c.word, "."),
            crate::report::fixed(e.lo),
            crate::report::fixed(e.hi),
            crate::report::fixed(c.log_len()),
            c.tau.to_string(),
            join(&c.tau_vec, "|"),
            c.base.to_string(),
            c.image.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn join<T: ToString>(v: &[T], sep: &str) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}
