use std::sync::OnceLock;

use nonstat::bridging::{profile, TargetSpec};
use nonstat::cylinders::{alphabet, concat, cylinder};
use nonstat::dimension::vdim;
use nonstat::exact::{max_dist, parse_rat, rat, rat_str, ratio_vec, RatioBall};
use nonstat::lab::{coding_check, simulate_occupancy};
use nonstat::report::Fixed;
use nonstat::{InducedScheme, Map, Rational};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scheme() -> &'static InducedScheme {
    static S: OnceLock<InducedScheme> = OnceLock::new();
    S.get_or_init(|| InducedScheme::build(Map::example(), 200).unwrap())
}

fn y_point(seed: u64) -> f64 {
    scheme().random_y(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Admissible word chosen by `picks`, starting in big image `base` if given.
fn word(base: Option<usize>, picks: &[u32]) -> Vec<u32> {
    let s = scheme();
    let mut w: Vec<u32> = Vec::new();
    let mut at = base;
    for &p in picks {
        let ids: Vec<u32> = s
            .symbols()
            .iter()
            .filter(|x| at.is_none_or(|b| x.base == b))
            .map(|x| x.id)
            .collect();
        let id = ids[p as usize % ids.len()];
        at = Some(s.symbol(id).image);
        w.push(id);
    }
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn branch_inverse_round_trips(i in 0usize..3, y in 0.0f64..=1.0) {
        let m = Map::example();
        let x = m.branch_inverse(i, &y, &1e-15).unwrap();
        let b = m.branch(i);
        prop_assert!(b.lo <= x && x <= b.hi);
        prop_assert!((b.value(&x) - y).abs() < 1e-12);
    }

    #[test]
    fn return_time_splits_over_regions(seed in any::<u64>()) {
        let s = scheme();
        let y = y_point(seed);
        if let Ok(h) = s.hit_time(y, 10_000) {
            prop_assert_eq!(1 + h.tau_vec.iter().sum::<u64>(), h.tau);
            if let Ok(sym) = s.symbol_of(y) {
                prop_assert_eq!(sym.tau(), h.tau);
                prop_assert_eq!(sym.tau_vec(s.d()), h.tau_vec);
            }
        }
    }

    #[test]
    fn concatenation_adds_return_data(a in prop::collection::vec(any::<u32>(), 1..3),
                                      b in prop::collection::vec(any::<u32>(), 1..3)) {
        let s = scheme();
        let wa = word(None, &a);
        let wb = word(Some(s.symbol(*wa.last().unwrap()).image), &b);
        let mut joined = wa.clone();
        joined.extend(&wb);
        let ca = cylinder(s, &wa).unwrap();
        let cb = cylinder(s, &wb).unwrap();
        let cab = concat(s, &ca, &cb).unwrap();
        prop_assert_eq!(&cab.word, &joined);
        prop_assert_eq!(cab.tau, ca.tau + cb.tau);
        let sum: Vec<u64> = ca.tau_vec.iter().zip(&cb.tau_vec).map(|(x, y)| x + y).collect();
        prop_assert_eq!(&cab.tau_vec, &sum);
        prop_assert!(cab.log_len() < ca.log_len());
        let direct = cylinder(s, &joined).unwrap();
        prop_assert!((direct.log_len() - cab.log_len()).abs() < 1e-9);
    }

    #[test]
    fn rationals_print_and_parse(n in -10_000i64..10_000, d in 1i64..10_000) {
        let r = rat(n, d);
        let s = rat_str(&r);
        prop_assert_eq!(parse_rat(&s).unwrap(), r);
        let (m, frac) = (n.abs(), d % 10_000);
        let dec = format!("{m}.{frac:04}");
        prop_assert_eq!(parse_rat(&dec).unwrap(), rat(m * 10_000 + frac, 10_000));
    }

    #[test]
    fn fixed_floats_round_trip(x in -1e300f64..1e300) {
        let j = serde_json::to_string(&Fixed(x)).unwrap();
        let back: Fixed = serde_json::from_str(&j).unwrap();
        prop_assert_eq!(back, Fixed(x));
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), j);
    }

    #[test]
    fn vdim_of_equal_pieces(n in 2usize..50, k in 1u32..5) {
        // n pieces of length n^-k have dimension 1/k
        let l = -(n as f64).ln() * k as f64;
        let logs = vec![l; n];
        let v = vdim(&logs).unwrap();
        prop_assert!((v - 1.0 / k as f64).abs() < 1e-8);
    }

    #[test]
    fn vdim_decreases_when_pieces_shrink(ls in prop::collection::vec(0.01f64..0.3, 2..20), f in 0.1f64..0.9) {
        let logs: Vec<f64> = ls.iter().map(|x| x.ln()).collect();
        let shrunk: Vec<f64> = ls.iter().map(|x| (x * f).ln()).collect();
        let (a, b) = (vdim(&logs), vdim(&shrunk));
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!(b <= a + 1e-12);
            let root: f64 = logs.iter().map(|l| (a * l).exp()).sum();
            prop_assert!((root - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn simplex_points_validate(a in 0u32..100, b in 0u32..100, c in 1u32..100) {
        let t = a + b + c;
        let p = vec![rat(a as i64, t as i64), rat(b as i64, t as i64), rat(c as i64, t as i64)];
        let spec = TargetSpec::Point(p.clone());
        prop_assert!(spec.validate(3).is_ok());
        prop_assert!(spec.validate(2).is_err());
        let mut off = p;
        off[0] += rat(1, 7);
        prop_assert!(TargetSpec::Point(off).validate(3).is_err());
    }

    #[test]
    fn ball_membership_is_exact(v in prop::collection::vec(0u64..50, 3), extra in 1u64..50,
                                r in 1i64..10) {
        let tau = v.iter().sum::<u64>() + extra;
        let ball = RatioBall::new(vec![rat(1, 2), rat(1, 4), rat(1, 4)], rat(r, 10)).unwrap();
        let ratio = ratio_vec(&v, tau);
        let inside = max_dist(&ratio, &ball.center) < ball.radius;
        prop_assert_eq!(ball.contains(&v, tau), inside);
        prop_assert_eq!(ball.contains_rational(&ratio), inside);
    }

    #[test]
    fn bands_widen_with_radius(g in 0.1f64..1.5, e in 0.0f64..0.3, de in 0.0f64..0.2) {
        let (lo1, hi1) = profile::band(g, e, e / 2.0);
        let (lo2, hi2) = profile::band(g, e + de, (e + de) / 2.0);
        prop_assert!(lo1 <= hi1);
        prop_assert!(lo2 <= lo1 + 1e-15 && hi1 <= hi2 + 1e-15);
    }

    #[test]
    fn occupancy_accounts_for_every_step(seed in any::<u64>(), n in 1000u64..20_000) {
        let s = scheme();
        let tr = simulate_occupancy(s.map(), s, y_point(seed), n).unwrap();
        prop_assert_eq!(tr.occupancy.iter().sum::<u64>(), n);
        prop_assert_eq!(tr.runs.iter().map(|r| r.1).sum::<u64>(), n);
        for w in tr.return_marks.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        if tr.returns() >= 2 {
            let c = coding_check(&tr).unwrap();
            prop_assert!(c.consistency.pass());
            prop_assert!(c.return_identity.pass());
            prop_assert!(c.monotone_after_return.pass());
        }
    }
}

#[test]
fn alphabet_lengths_sum_below_y() {
    let s = scheme();
    let total: f64 = alphabet(s).iter().map(|c| c.len()).sum();
    let untracked: f64 = (0..s.d()).map(|j| s.untracked_y_mass(j)).sum();
    assert!(total <= s.y_len() * (1.0 + 1e-12));
    assert!((total + untracked - s.y_len()).abs() < 1e-6 * s.y_len(), "{total} {untracked}");
}

#[test]
fn rational_from_decimal_is_exact() {
    let r: Rational = parse_rat("0.25").unwrap();
    assert_eq!(r, rat(1, 4));
    assert_eq!(parse_rat("-1.5").unwrap(), rat(-3, 2));
    assert!(parse_rat("1/0").is_err());
}
