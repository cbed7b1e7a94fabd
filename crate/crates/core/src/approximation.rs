//! Repeller families with prescribed return-time ratios: ratio-filtered pools,
//! mixing connectors, sandwich assembly and horizon constants.

use num_traits::{ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cylinders::{cylinder, pull_back, BallFilter, Cylinder, WordData};
use crate::dimension::{compute_n1, dim_bounds, local_dim_scan, FamilyMeasure, N1Report, SchemeGeometry};
use crate::error::{Error, Result};
use crate::exact::{max_dist, rat_str, rat_u, ratio_vec, RatioBall, Rational};
use crate::induced::{log_sum_exp, ExpansionStats, InducedScheme, Piece};
use crate::report::{rat_strs, Fixed};

pub const MIXING_CAP: usize = 64;
pub const DEFAULT_BUDGET: usize = 100_000;
/// Exact lengths are computed for this many budgets' worth of the best-ranked words.
const EXACT_SLICE: usize = 2;
const HALF_MASS_LN: f64 = -std::f64::consts::LN_2;

/// For each ordered pair of big images, a `k0`-cylinder routing one onto the other.
#[derive(Clone, Debug)]
pub struct ConnectorSet {
    pub k0: usize,
    /// `table[i][j]` has base `i` and image `j`.
    pub table: Vec<Vec<Cylinder>>,
    /// Largest return time of a connector.
    pub m_conn: u64,
}

fn bool_mat_mul(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let l = a.len();
    (0..l)
        .map(|i| (0..l).map(|j| (0..l).any(|k| a[i][k] && b[k][j])).collect())
        .collect()
}

/// Smallest `k0` with a positive adjacency power and lexicographically least witnesses.
pub fn find_connectors(scheme: &InducedScheme) -> Result<ConnectorSet> {
    let adj = scheme.adjacency();
    let l = adj.len();
    let ident: Vec<Vec<bool>> = (0..l).map(|i| (0..l).map(|j| i == j).collect()).collect();
    // reach[r][k][j]: a path of r steps from k to j
    let mut reach = vec![ident];
    let mut k0 = None;
    for r in 1..=MIXING_CAP {
        let next = bool_mat_mul(&reach[r - 1], &adj);
        let positive = next.iter().all(|row| row.iter().all(|&x| x));
        reach.push(next);
        if positive {
            k0 = Some(r);
            break;
        }
    }
    let k0 = k0.ok_or(Error::NotMixing(MIXING_CAP))?;
    let mut table = Vec::with_capacity(l);
    let mut m_conn = 0;
    for i in 0..l {
        let mut row = Vec::with_capacity(l);
        for j in 0..l {
            let mut word = Vec::with_capacity(k0);
            let mut cur = i;
            for t in 0..k0 {
                let rest = &reach[k0 - t - 1];
                let id = scheme
                    .symbols_from(cur)
                    .find(|&id| rest[scheme.symbol(id).image][j])
                    .expect("reachability guarantees a symbol");
                word.push(id);
                cur = scheme.symbol(id).image;
            }
            let c = cylinder(scheme, &word)?;
            m_conn = m_conn.max(c.tau);
            row.push(c);
        }
        table.push(row);
    }
    Ok(ConnectorSet { k0, table, m_conn })
}

/// Ratio-filtered cylinders, longest first, trimmed to a budget.
#[derive(Clone, Debug)]
pub struct Pool {
    pub n: usize,
    /// Kept words in lexicographic order.
    pub words: Vec<WordData>,
    pub log_len: Vec<f64>,
    pub found: usize,
    pub found_mass: f64,
    pub kept_mass: f64,
    pub budget_binds: bool,
}

impl Pool {
    pub fn kept_fraction(&self) -> f64 {
        self.kept_mass / self.found_mass
    }
}

fn log_len_of(scheme: &InducedScheme, word: &[u32]) -> f64 {
    let last = *word.last().expect("nonempty word");
    let ps = pull_back(scheme, &word[..word.len() - 1], scheme.symbol_pieces(last));
    log_sum_exp(ps.iter().map(|p| p.log_len))
}

/// All `n`-cylinders with ratio in the open ball of radius `ε/2` around `p̄`,
/// kept greedily by length while under `budget` or below half the found mass.
///
/// With connectors, only words whose every connector sandwich stays in the
/// `3ε/4` ball are admitted. Words are ranked by the product of their symbol lengths; exact lengths are
/// computed for the leading slice (twice the budget, extended to half the
/// ranked mass), and the found mass outside the slice uses the product.
pub fn candidate_pool(
    scheme: &InducedScheme,
    n: usize,
    eps: &Rational,
    pbar: &[Rational],
    budget: usize,
    conn: Option<&ConnectorSet>,
) -> Result<Pool> {
    if n == 0 {
        return Err(Error::Input("pool depth must be >= 1".into()));
    }
    if pbar.len() != scheme.d() {
        return Err(Error::InvalidTarget(format!(
            "target has {} coordinates, map has {} fixed points",
            pbar.len(),
            scheme.d()
        )));
    }
    let ball = RatioBall::new(pbar.to_vec(), eps / Rational::from_integer(2.into()))?;
    let filter = BallFilter {
        ball,
        m_max: scheme.m_max(),
    };
    let mut data = crate::cylinders::word_data(scheme, n, Some(&filter));
    if let Some(conn) = conn {
        let outer = RatioBall::new(pbar.to_vec(), eps * rat_u(3, 4))?;
        data.retain(|w| sandwiches_stay(scheme, conn, &outer, w));
    }
    if data.is_empty() {
        return Err(Error::EmptyPool {
            n,
            eps: rat_str(eps),
        });
    }
    let found = data.len();
    // rank by the product of symbol lengths, then measure the leading slice exactly
    let est: Vec<f64> = data
        .iter()
        .map(|w| w.word.iter().map(|&id| scheme.symbol_log_len(id)).sum())
        .collect();
    let mut order: Vec<usize> = (0..found).collect();
    order.sort_by(|&a, &b| est[b].total_cmp(&est[a]).then_with(|| data[a].word.cmp(&data[b].word)));
    let est_total = log_sum_exp(est.iter().copied());
    let mut slice = 0;
    let mut est_acc = f64::NEG_INFINITY;
    while slice < found && (slice < EXACT_SLICE * budget.max(1) || est_acc < est_total + HALF_MASS_LN) {
        est_acc = log_sum_exp([est_acc, est[order[slice]]]);
        slice += 1;
    }
    let head: Vec<usize> = order[..slice].to_vec();
    let exact: Vec<f64> = head.par_iter().map(|&k| log_len_of(scheme, &data[k].word)).collect();
    let rest_mass: f64 = order[slice..].iter().map(|&k| est[k].exp()).sum();
    let found_mass: f64 = exact.iter().map(|l| l.exp()).sum::<f64>() + rest_mass;
    let mut by_len: Vec<usize> = (0..slice).collect();
    by_len.sort_by(|&a, &b| exact[b].total_cmp(&exact[a]).then_with(|| data[head[a]].word.cmp(&data[head[b]].word)));
    let mut kept: Vec<(usize, f64)> = Vec::new();
    let mut kept_mass = 0.0;
    for &q in &by_len {
        if kept.len() >= budget && kept_mass >= 0.5 * found_mass {
            break;
        }
        kept.push((head[q], exact[q]));
        kept_mass += exact[q].exp();
    }
    let budget_binds = kept.len() < found;
    kept.sort_unstable_by_key(|&(k, _)| k);
    let log_len = kept.iter().map(|&(_, l)| l).collect();
    let mut slots: Vec<Option<WordData>> = data.into_iter().map(Some).collect();
    let words = kept.iter().map(|&(k, _)| slots[k].take().unwrap()).collect();
    Ok(Pool {
        n,
        words,
        log_len,
        found,
        found_mass,
        kept_mass,
        budget_binds,
    })
}

/// Every connector sandwich `c·w·c'` of `w` has its ratio in `ball`.
fn sandwiches_stay(scheme: &InducedScheme, conn: &ConnectorSet, ball: &RatioBall, w: &WordData) -> bool {
    let p = scheme.symbol(w.word[0]).base;
    let q = scheme.symbol(*w.word.last().unwrap()).image;
    let mut tv = vec![0u64; w.tau_vec.len()];
    conn.table.iter().all(|row| {
        let head = &row[p];
        conn.table[q].iter().all(|tail| {
            for (k, v) in tv.iter_mut().enumerate() {
                *v = head.tau_vec[k] + w.tau_vec[k] + tail.tau_vec[k];
            }
            ball.contains(&tv, head.tau + w.tau + tail.tau)
        })
    })
}

/// Numerical constants of the return map consumed by the family and bridge layers.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Constants {
    pub lambda_hat: f64,
    /// Log-distortion `log D̂`.
    pub distortion: f64,
    /// Multiplicative constant `K` with `K^{-1}|a||b| ≤ |ab| ≤ K|a||b|`.
    pub product_constant: f64,
}

impl From<&ExpansionStats> for Constants {
    fn from(e: &ExpansionStats) -> Self {
        Constants {
            lambda_hat: e.lambda_hat,
            distortion: e.distortion,
            product_constant: e.product_constant,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FamilyConfig {
    pub budget: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig {
            budget: DEFAULT_BUDGET,
            samples: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ApproxFamily {
    pub eps: Rational,
    pub pbar: Vec<Rational>,
    /// Depth of the pool cylinders.
    pub n_core: usize,
    /// Depth of the assembled cylinders, `n_core + 2·k0`.
    pub n: usize,
    pub k0: usize,
    /// Assembled cylinders in lexicographic order.
    pub cylinders: Vec<Cylinder>,
    pub measure: FamilyMeasure,
    pub vdim: f64,
    pub dim_bounds: Option<(f64, f64)>,
    /// Largest `τ_n` over the family.
    pub m_tau: u64,
    /// Largest single-symbol return time inside family words.
    pub m_n: u64,
    pub n0: u64,
    pub n1: N1Report,
    pub e_hat: f64,
    pub c_leb: f64,
    /// Exact bound `2M/n + 2M/(n − k0)` on the ratio drift from a pool element.
    pub drift_bound: Rational,
    pub pool_found: usize,
    pub pool_kept: usize,
    pub pool_kept_fraction: f64,
}

/// Sandwich every pool element between connectors, check the family items and
/// measure its constants.
pub fn assemble_family(
    scheme: &InducedScheme,
    pool: &Pool,
    conn: &ConnectorSet,
    eps: &Rational,
    pbar: &[Rational],
    consts: &Constants,
    cfg: &FamilyConfig,
) -> Result<ApproxFamily> {
    let l = scheme.l();
    let k0 = conn.k0;
    let n = pool.n + 2 * k0;
    let ball = RatioBall::new(pbar.to_vec(), eps * rat_u(3, 4))?;
    // per pool element and target j: pieces of b·a_{s(b)j}
    let built: Vec<Vec<Cylinder>> = pool
        .words
        .par_iter()
        .map(|b| {
            let p = scheme.symbol(b.word[0]).base;
            let s = scheme.symbol(*b.word.last().unwrap()).image;
            let mut out = Vec::with_capacity(l * l);
            for j in 0..l {
                let tail = &conn.table[s][j];
                let mid: Vec<Piece> = pull_back(scheme, &b.word, &tail.pieces);
                for (i, row) in conn.table.iter().enumerate() {
                    let head = &row[p];
                    let pieces = pull_back(scheme, &head.word, &mid);
                    let mut word = Vec::with_capacity(n);
                    word.extend_from_slice(&head.word);
                    word.extend_from_slice(&b.word);
                    word.extend_from_slice(&tail.word);
                    let tau_vec: Vec<u64> = (0..scheme.d())
                        .map(|q| head.tau_vec[q] + b.tau_vec[q] + tail.tau_vec[q])
                        .collect();
                    out.push(Cylinder {
                        word,
                        pieces,
                        tau: head.tau + b.tau + tail.tau,
                        tau_vec,
                        base: i,
                        image: j,
                    });
                }
            }
            out
        })
        .collect();
    let mut cylinders: Vec<Cylinder> = built.into_iter().flatten().collect();
    cylinders.par_sort_unstable_by(|a, b| a.word.cmp(&b.word));
    // item (1), exactly
    if let Some(bad) = cylinders.iter().find(|c| !ball.contains(&c.tau_vec, c.tau)) {
        return Err(Error::ItemOneViolated {
            word: bad.word.clone(),
            ratio: rat_strs(&bad.ratio()).join(","),
        });
    }
    // items (2), (3)
    let mut mass = vec![0.0; l];
    let mut covered = vec![false; l];
    for c in &cylinders {
        mass[c.base] += c.len();
        covered[c.image] = true;
    }
    if let Some(j) = covered.iter().position(|c| !c) {
        return Err(Error::ImagesDoNotCover(j));
    }
    let c_leb = mass.iter().copied().fold(f64::INFINITY, f64::min);
    let measure = FamilyMeasure::build(&cylinders, l)?;
    let vdim = measure.s;
    let bounds = dim_bounds(vdim, consts.lambda_hat, consts.distortion, n).ok();
    let m_tau = cylinders.iter().map(|c| c.tau).max().unwrap_or(0);
    let m_n = cylinders
        .iter()
        .flat_map(|c| c.word.iter().map(|&id| scheme.symbol(id).tau()))
        .max()
        .unwrap_or(0);
    let n0 = horizon_n0(m_tau, n, eps);
    let dim_mid = bounds.map_or(vdim, |(a, b)| 0.5 * (a + b));
    let geom = SchemeGeometry { scheme };
    let mut e_hat = 0.0f64;
    for ell in [2 * n, 4 * n] {
        let scan = local_dim_scan(&measure, &geom, ell, cfg.samples, cfg.seed, dim_mid)?;
        e_hat = e_hat.max(scan.e_hat.0);
    }
    let n1 = compute_n1(e_hat, eps.to_f64().unwrap_or(f64::NAN), consts.lambda_hat, dim_mid);
    let two_m = rat_u(2 * conn.m_conn, 1);
    let drift_bound = &two_m / rat_u(n as u64, 1) + &two_m / rat_u((n - k0) as u64, 1);
    Ok(ApproxFamily {
        eps: eps.clone(),
        pbar: pbar.to_vec(),
        n_core: pool.n,
        n,
        k0,
        cylinders,
        measure,
        vdim,
        dim_bounds: bounds,
        m_tau,
        m_n,
        n0,
        n1,
        e_hat,
        c_leb,
        drift_bound,
        pool_found: pool.found,
        pool_kept: pool.words.len(),
        pool_kept_fraction: pool.kept_fraction(),
    })
}

/// Smallest integer `N0 > n` with `2M/N0 < ε/4`.
pub fn horizon_n0(m_tau: u64, n: usize, eps: &Rational) -> u64 {
    // 2M/N0 < ε/4  ⇔  N0 > 8M/ε
    let q = rat_u(8 * m_tau, 1) / eps;
    let fl = q.floor().to_integer().to_u64().unwrap_or(u64::MAX);
    (fl + 1).max(n as u64 + 1)
}

/// `(N0, N1, M_n)` of an assembled family.
pub fn horizon_constants(f: &ApproxFamily) -> (u64, u64, u64) {
    (f.n0, f.n1.n1, f.m_n)
}

/// Pool, connectors and assembly in one call, at core depth `n_core`.
pub fn build_family(
    scheme: &InducedScheme,
    conn: &ConnectorSet,
    n_core: usize,
    eps: &Rational,
    pbar: &[Rational],
    consts: &Constants,
    cfg: &FamilyConfig,
) -> Result<ApproxFamily> {
    let pool = candidate_pool(scheme, n_core, eps, pbar, cfg.budget, Some(conn))?;
    assemble_family(scheme, &pool, conn, eps, pbar, consts, cfg)
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilyManifest {
    pub epsilon: String,
    pub p_bar: Vec<String>,
    pub n: usize,
    pub n_core: usize,
    pub k0: usize,
    #[serde(rename = "N0")]
    pub n0: u64,
    #[serde(rename = "N1")]
    pub n1: u64,
    pub n1_margin_ok: bool,
    #[serde(rename = "M")]
    pub m_tau: u64,
    #[serde(rename = "M_n")]
    pub m_n: u64,
    #[serde(rename = "C_leb")]
    pub c_leb: Fixed,
    pub vdim: Fixed,
    pub dim_bounds: Option<(Fixed, Fixed)>,
    #[serde(rename = "E_hat")]
    pub e_hat: Fixed,
    pub cylinder_count: usize,
    pub pool_found: usize,
    pub pool_kept: usize,
    pub pool_kept_fraction: Fixed,
}

impl ApproxFamily {
    pub fn manifest(&self) -> FamilyManifest {
        FamilyManifest {
            epsilon: rat_str(&self.eps),
            p_bar: rat_strs(&self.pbar),
            n: self.n,
            n_core: self.n_core,
            k0: self.k0,
            n0: self.n0,
            n1: self.n1.n1,
            n1_margin_ok: self.n1.margin_ok,
            m_tau: self.m_tau,
            m_n: self.m_n,
            c_leb: Fixed(self.c_leb),
            vdim: Fixed(self.vdim),
            dim_bounds: self.dim_bounds.map(|(a, b)| (Fixed(a), Fixed(b))),
            e_hat: Fixed(self.e_hat),
            cylinder_count: self.cylinders.len(),
            pool_found: self.pool_found,
            pool_kept: self.pool_kept,
            pool_kept_fraction: Fixed(self.pool_kept_fraction),
        }
    }

    /// Sum of return data of a block word.
    pub fn block_tau(&self, blocks: &[usize]) -> (u64, Vec<u64>) {
        let mut tv = vec![0u64; self.pbar.len()];
        let mut t = 0;
        for &k in blocks {
            let c = &self.cylinders[k];
            t += c.tau;
            for (a, b) in tv.iter_mut().zip(&c.tau_vec) {
                *a += b;
            }
        }
        (t, tv)
    }
}

/// Witness of a failed family check.
#[derive(Clone, Debug, Serialize)]
pub struct FamilyWitness {
    pub check: String,
    pub ell: usize,
    pub word: Vec<u32>,
    pub value: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilyVerification {
    pub ratio_words: usize,
    pub ratio_ok: bool,
    pub local_dim_min: Fixed,
    pub local_dim_max: Fixed,
    pub local_dim_ok: bool,
    pub witnesses: Vec<FamilyWitness>,
}

/// Checks (i) sampled `ℓ`-words with `ℓ > N0` have ratio in the `ε`-ball (exact)
/// and (iii) sampled local dimensions at `ℓ > N1` lie in `[1−ε, 1+ε]`.
pub fn verify_family(
    scheme: &InducedScheme,
    f: &ApproxFamily,
    ells: &[usize],
    samples: usize,
    seed: u64,
) -> Result<FamilyVerification> {
    let ball = RatioBall::new(f.pbar.clone(), f.eps.clone())?;
    let eps = f.eps.to_f64().unwrap_or(f64::NAN);
    let mut witnesses = Vec::new();
    let mut ratio_words = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ldmin = f64::INFINITY;
    let mut ldmax = f64::NEG_INFINITY;
    for &ell in ells {
        let nb = ell.div_ceil(f.n);
        for _ in 0..samples {
            let blocks = f.measure.sample_blocks(nb, &mut rng);
            let flat: Vec<u32> = blocks
                .iter()
                .flat_map(|&k| f.cylinders[k].word.iter().copied())
                .take(ell)
                .collect();
            if ell as u64 > f.n0 {
                ratio_words += 1;
                let (t, tv) = flat_tau(scheme, &flat);
                if !ball.contains(&tv, t) {
                    witnesses.push(FamilyWitness {
                        check: "ratio".into(),
                        ell,
                        value: rat_strs(&ratio_vec(&tv, t)).join(","),
                        word: flat.clone(),
                    });
                }
            }
            if ell as u64 > f.n1.n1 {
                let lm = crate::dimension::truncated_log_measure(&f.measure, &blocks, ell)?;
                let ll = log_len_of(scheme, &flat);
                let q = lm / ll;
                ldmin = ldmin.min(q);
                ldmax = ldmax.max(q);
                if !(q >= 1.0 - eps && q <= 1.0 + eps) {
                    witnesses.push(FamilyWitness {
                        check: "local_dim".into(),
                        ell,
                        value: crate::report::fixed(q),
                        word: flat,
                    });
                }
            }
        }
    }
    let ratio_ok = witnesses.iter().all(|w| w.check != "ratio");
    let local_dim_ok = witnesses.iter().all(|w| w.check != "local_dim");
    Ok(FamilyVerification {
        ratio_words,
        ratio_ok,
        local_dim_min: Fixed(ldmin),
        local_dim_max: Fixed(ldmax),
        local_dim_ok,
        witnesses,
    })
}

/// `(τ, τ̄)` of a symbol word.
pub fn flat_tau(scheme: &InducedScheme, word: &[u32]) -> (u64, Vec<u64>) {
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

/// Largest exact distance from `p̄` over the family's ratios.
pub fn max_ratio_distance(f: &ApproxFamily) -> Rational {
    f.cylinders
        .iter()
        .map(|c| max_dist(&c.ratio(), &f.pbar))
        .fold(Rational::zero(), |a, b| if b > a { b } else { a })
}

/// `(1 − vdim)·n` along a ladder of families, with the monotonicity flag.
pub fn vdim_trend(families: &[&ApproxFamily]) -> (bool, Vec<f64>) {
    let inc = families.windows(2).all(|w| w[0].vdim < w[1].vdim);
    (inc, families.iter().map(|f| (1.0 - f.vdim) * f.n as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::rat;
    use crate::map::MapSpec;

    #[test]
    fn example_connectors() {
        let s = InducedScheme::build(MapSpec::example(), 20).unwrap();
        let c = find_connectors(&s).unwrap();
        assert_eq!(c.k0, 2);
        for (i, row) in c.table.iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                assert_eq!((a.base, a.image, a.n()), (i, j, 2));
            }
        }
        let m = c.table.iter().flatten().map(|a| a.tau).max().unwrap();
        assert_eq!(c.m_conn, m);
    }

    #[test]
    fn pure_target_pool() {
        let s = InducedScheme::build(MapSpec::example(), 20).unwrap();
        let pbar = [rat(0, 1), rat(1, 1), rat(0, 1)];
        let p = candidate_pool(&s, 2, &rat(2, 5), &pbar, 1000, None).unwrap();
        assert!(!p.words.is_empty());
        for w in &p.words {
            assert!(max_dist(&ratio_vec(&w.tau_vec, w.tau), &pbar) < rat(1, 5));
            assert!(w.tau_vec[1] * 5 > w.tau * 4);
            assert!(w.word.iter().any(|&id| s.symbol(id).target == Some(1)));
        }
    }

    #[test]
    fn n0_is_minimal() {
        let eps = rat(2, 5);
        let n0 = horizon_n0(30, 7, &eps);
        assert!(rat_u(60, n0) < &eps / rat(4, 1));
        assert!(rat_u(60, n0 - 1) >= &eps / rat(4, 1));
        assert_eq!(horizon_n0(0, 7, &eps), 8);
    }
}
