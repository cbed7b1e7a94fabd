//! Virtual dimension, dimension error bounds and Markov approximations of the
//! geometric measure of a cylinder family.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cylinders::{pull_back, Cylinder};
use crate::error::{Error, Result};
use crate::induced::{log_sum_exp, InducedScheme};
use crate::report::Fixed;

pub const VDIM_LO: f64 = 1e-6;
pub const VDIM_HI: f64 = 2.0;
pub const VDIM_TOL: f64 = 1e-10;

/// Root `s` of `Σ exp(s·log_len) = 1`.
///
/// A single element has its root at 0 and returns `0.0`.
pub fn vdim(log_lens: &[f64]) -> Result<f64> {
    if log_lens.is_empty() {
        return Err(Error::EmptyFamily);
    }
    if log_lens.iter().any(|&l| !(l < 0.0)) {
        return Err(Error::Input("family lengths must lie in (0,1)".into()));
    }
    let g = |s: f64| log_sum_exp(log_lens.iter().map(|&l| s * l));
    let (mut lo, mut hi) = (VDIM_LO, VDIM_HI);
    if g(lo) <= 0.0 {
        return Ok(0.0);
    }
    if g(hi) > 0.0 {
        return Err(Error::Input("virtual dimension above the bracket".into()));
    }
    for _ in 0..200 {
        if hi - lo < VDIM_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn vdim_of(family: &[Cylinder]) -> Result<f64> {
    vdim(&family.iter().map(|c| c.log_len()).collect::<Vec<_>>())
}

/// `[s − D/(n log λ − D), s + D/(n log λ − D)] ∩ [0,1]`.
pub fn dim_bounds(s: f64, lambda_hat: f64, distortion: f64, n: usize) -> Result<(f64, f64)> {
    let nlog = n as f64 * lambda_hat.ln();
    if nlog <= distortion {
        return Err(Error::VacuousBound {
            nlog,
            d: distortion,
        });
    }
    let w = distortion / (nlog - distortion);
    Ok(((s - w).max(0.0), (s + w).min(1.0)))
}

/// Markov word measure on a family: the first block gets `start(base)·w/Z_base`,
/// later blocks `w/Z_base`, with `w = |a|^s` and `start ∝ Z`.
#[derive(Clone, Debug)]
pub struct FamilyMeasure {
    pub s: f64,
    pub n: usize,
    pub log_len: Vec<f64>,
    pub log_w: Vec<f64>,
    pub base: Vec<usize>,
    pub image: Vec<usize>,
    /// Per big image, `log Z_j`.
    pub log_z: Vec<f64>,
    /// `log Σ_j Z_j`.
    pub log_total: f64,
    by_base: Vec<Vec<usize>>,
    /// Words and their lexicographic order, for partial blocks.
    words: Vec<Vec<u32>>,
    order: Vec<usize>,
}

impl FamilyMeasure {
    /// Measure for abstract elements given by log-lengths and base/image labels.
    pub fn from_parts(
        n: usize,
        log_len: &[f64],
        base: Vec<usize>,
        image: Vec<usize>,
        l: usize,
    ) -> Result<Self> {
        let s = vdim(log_len)?;
        Self::with_exponent(n, s, log_len, base, image, l, Vec::new())
    }

    pub fn build(family: &[Cylinder], l: usize) -> Result<Self> {
        if family.is_empty() {
            return Err(Error::EmptyFamily);
        }
        let n = family[0].n();
        if family.iter().any(|c| c.n() != n) {
            return Err(Error::Input("family depths differ".into()));
        }
        let log_len: Vec<f64> = family.iter().map(|c| c.log_len()).collect();
        let s = vdim(&log_len)?;
        Self::with_exponent(
            n,
            s,
            &log_len,
            family.iter().map(|c| c.base).collect(),
            family.iter().map(|c| c.image).collect(),
            l,
            family.iter().map(|c| c.word.clone()).collect(),
        )
    }

    fn with_exponent(
        n: usize,
        s: f64,
        log_len: &[f64],
        base: Vec<usize>,
        image: Vec<usize>,
        l: usize,
        words: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let log_w: Vec<f64> = log_len.iter().map(|&x| s * x).collect();
        let mut by_base = vec![Vec::new(); l];
        for (k, &b) in base.iter().enumerate() {
            by_base[b].push(k);
        }
        let mut covered = vec![false; l];
        for &j in &image {
            covered[j] = true;
        }
        if let Some(j) = covered.iter().position(|c| !c) {
            return Err(Error::ImagesDoNotCover(j));
        }
        if let Some(j) = by_base.iter().position(|v| v.is_empty()) {
            return Err(Error::ImagesDoNotCover(j));
        }
        let log_z: Vec<f64> = by_base
            .iter()
            .map(|ks| log_sum_exp(ks.iter().map(|&k| log_w[k])))
            .collect();
        let log_total = log_sum_exp(log_z.iter().copied());
        let mut order: Vec<usize> = (0..words.len()).collect();
        order.sort_by(|&a, &b| words[a].cmp(&words[b]));
        Ok(FamilyMeasure {
            s,
            n,
            log_len: log_len.to_vec(),
            log_w,
            base,
            image,
            log_z,
            log_total,
            by_base,
            words,
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.log_w.len()
    }
    pub fn is_empty(&self) -> bool {
        self.log_w.is_empty()
    }
    pub fn by_base(&self, j: usize) -> &[usize] {
        &self.by_base[j]
    }

    /// `log` of the start weight of big image `j`.
    pub fn log_start(&self, j: usize) -> f64 {
        self.log_z[j] - self.log_total
    }

    /// Log-measure of a word of family elements.
    pub fn log_measure(&self, blocks: &[usize]) -> Result<f64> {
        let mut lm = 0.0;
        for (t, &k) in blocks.iter().enumerate() {
            if t == 0 {
                lm += self.log_start(self.base[k]);
            } else if self.image[blocks[t - 1]] != self.base[k] {
                return Err(Error::Inadmissible {
                    image: self.image[blocks[t - 1]],
                    base: self.base[k],
                });
            }
            lm += self.log_w[k] - self.log_z[self.base[k]];
        }
        Ok(lm)
    }

    /// Conditional log-mass of the family elements whose word starts with
    /// `prefix`, given the block starts in the base of its first symbol.
    /// Returns `None` if no element matches.
    pub fn prefix_log_mass(&self, prefix: &[u32]) -> Option<(usize, f64)> {
        let lo = self
            .order
            .partition_point(|&k| self.words[k].as_slice() < prefix);
        let hi = self.order.partition_point(|&k| {
            let w = &self.words[k];
            w.as_slice() < prefix || w.starts_with(prefix)
        });
        if lo >= hi {
            return None;
        }
        let base = self.base[self.order[lo]];
        let mass = log_sum_exp(self.order[lo..hi].iter().map(|&k| self.log_w[k]));
        Some((base, mass - self.log_z[base]))
    }

    pub fn word(&self, k: usize) -> &[u32] {
        &self.words[k]
    }
    pub fn has_words(&self) -> bool {
        !self.words.is_empty()
    }

    /// Random block word: first block from the start law, then the Markov kernel.
    pub fn sample_blocks<R: rand::Rng>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let all = WeightedIndex::new(self.log_w.iter().map(|&x| (x - self.log_w[0]).exp()))
            .expect("positive weights");
        out.push(all.sample(rng));
        let kernels: Vec<Option<WeightedIndex<f64>>> = self
            .by_base
            .iter()
            .map(|ks| {
                let m = ks.iter().map(|&k| self.log_w[k]).fold(f64::MIN, f64::max);
                WeightedIndex::new(ks.iter().map(|&k| (self.log_w[k] - m).exp())).ok()
            })
            .collect();
        while out.len() < len {
            let b = self.image[*out.last().unwrap()];
            let ks = &self.by_base[b];
            let wi = kernels[b].as_ref().expect("positive weights");
            out.push(ks[wi.sample(rng)]);
        }
        out
    }
}

/// Log-length of the cylinder spelled by a block word, truncated to `symbols`
/// induced symbols.
pub trait BlockGeometry: Sync {
    fn log_len(&self, measure: &FamilyMeasure, blocks: &[usize], symbols: usize) -> f64;
}

/// Lengths multiply exactly (affine/conformal toy families). Truncation is
/// rounded up to whole blocks.
pub struct ProductGeometry;

impl BlockGeometry for ProductGeometry {
    fn log_len(&self, m: &FamilyMeasure, blocks: &[usize], _symbols: usize) -> f64 {
        blocks.iter().map(|&k| m.log_len[k]).sum()
    }
}

/// Lengths from the induced scheme, by pullback of the last symbol's pieces.
pub struct SchemeGeometry<'a> {
    pub scheme: &'a InducedScheme,
}

impl BlockGeometry for SchemeGeometry<'_> {
    fn log_len(&self, m: &FamilyMeasure, blocks: &[usize], symbols: usize) -> f64 {
        let flat: Vec<u32> = blocks
            .iter()
            .flat_map(|&k| m.word(k).iter().copied())
            .take(symbols)
            .collect();
        let last = *flat.last().expect("nonempty word");
        let ps = pull_back(self.scheme, &flat[..flat.len() - 1], self.scheme.symbol_pieces(last));
        log_sum_exp(ps.iter().map(|p| p.log_len))
    }
}

/// Log-measure of a block word truncated to `symbols` symbols.
pub fn truncated_log_measure(m: &FamilyMeasure, blocks: &[usize], symbols: usize) -> Result<f64> {
    let full = symbols / m.n;
    let rest = symbols % m.n;
    let mut lm = m.log_measure(&blocks[..full])?;
    if rest > 0 {
        let k = blocks[full];
        let (base, cond) = m
            .prefix_log_mass(&m.word(k)[..rest])
            .ok_or_else(|| Error::Input("prefix outside the family".into()))?;
        lm += cond;
        if full == 0 {
            lm += m.log_start(base);
        }
    }
    Ok(lm)
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalDimScan {
    pub ell: usize,
    pub samples: usize,
    pub min: Fixed,
    pub max: Fixed,
    pub e_hat: Fixed,
    pub dim: Fixed,
}

/// Sampled `log m(a)/log|a|` over `ell`-symbol words and
/// `Ê = max |log m(a) − dim·log|a||`.
pub fn local_dim_scan(
    m: &FamilyMeasure,
    geom: &dyn BlockGeometry,
    ell: usize,
    samples: usize,
    seed: u64,
    dim: f64,
) -> Result<LocalDimScan> {
    if ell == 0 || samples == 0 {
        return Err(Error::Input("local dimension scan needs ell, samples >= 1".into()));
    }
    let nblocks = ell.div_ceil(m.n);
    let symbols = if m.has_words() { ell } else { nblocks * m.n };
    let rows: Vec<Result<(f64, f64)>> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let blocks = m.sample_blocks(nblocks, &mut rng);
            let lm = if m.has_words() {
                truncated_log_measure(m, &blocks, symbols)?
            } else {
                m.log_measure(&blocks)?
            };
            Ok((lm, geom.log_len(m, &blocks, symbols)))
        })
        .collect();
    let (mut lo, mut hi, mut e) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for r in rows {
        let (lm, ll) = r?;
        let q = lm / ll;
        lo = lo.min(q);
        hi = hi.max(q);
        e = e.max((lm - dim * ll).abs());
    }
    Ok(LocalDimScan {
        ell,
        samples,
        min: Fixed(lo),
        max: Fixed(hi),
        e_hat: Fixed(e),
        dim: Fixed(dim),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct N1Report {
    pub n1: u64,
    /// `dim >= 1 − ε/2`.
    pub margin_ok: bool,
}

/// Smallest `N₁` with `Ê/(N₁ log λ) < ε/2`.
pub fn compute_n1(e_hat: f64, eps: f64, lambda_hat: f64, dim: f64) -> N1Report {
    let n1 = (2.0 * e_hat / (eps * lambda_hat.ln())).floor() as u64 + 1;
    N1Report {
        n1,
        margin_ok: dim >= 1.0 - eps / 2.0,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DimensionReport {
    pub s: Fixed,
    pub bounds: (Fixed, Fixed),
    #[serde(rename = "E_hat")]
    pub e_hat: Fixed,
    #[serde(rename = "N1")]
    pub n1: u64,
    pub family_size: usize,
    pub n: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let h = 0.5f64.ln();
        assert!((vdim(&[h, h]).unwrap() - 1.0).abs() < 1e-9);
        let q = 0.25f64.ln();
        assert!((vdim(&[q, q]).unwrap() - 0.5).abs() < 1e-9);
        let s = vdim(&[h, (1.0f64 / 3.0).ln()]).unwrap();
        assert!((s - 0.787_885_4).abs() < 1e-6, "{s}");
        assert_eq!(vdim(&[]), Err(Error::EmptyFamily));
    }

    #[test]
    fn bounds_contain_vdim() {
        assert_eq!(dim_bounds(0.6, 3.0, 0.0, 4).unwrap(), (0.6, 0.6));
        let (lo, hi) = dim_bounds(0.6, 3.0, 1.2, 4).unwrap();
        assert!(lo < 0.6 && hi > 0.6);
        assert!(dim_bounds(0.6, 3.0, 5.0, 4).is_err());
    }

    #[test]
    fn uniform_family_scan_is_exact() {
        let h = 0.5f64.ln();
        let m = FamilyMeasure::from_parts(1, &[h, h], vec![0, 0], vec![0, 0], 1).unwrap();
        let r = local_dim_scan(&m, &ProductGeometry, 6, 20, 1, 1.0).unwrap();
        assert!((r.min.0 - 1.0).abs() < 1e-12 && (r.max.0 - 1.0).abs() < 1e-12);
        assert!(r.e_hat.0 < 1e-12);
    }

    #[test]
    fn n1_formula() {
        assert_eq!(compute_n1(0.0, 0.3, 3.0, 0.9).n1, 1);
        let a = compute_n1(2.0, 0.3, 3.0, 0.9).n1 as i64;
        let b = compute_n1(4.0, 0.3, 3.0, 0.9).n1 as i64;
        assert!((b - 2 * a).abs() <= 1);
        assert!(!compute_n1(1.0, 0.3, 3.0, 0.5).margin_ok);
    }
}
