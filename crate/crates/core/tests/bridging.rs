use std::sync::OnceLock;

use nonstat::bridging::*;
use nonstat::exact::{max_dist, parse_rat, rat};
use nonstat::{InducedScheme, Map, Rational};

struct Fixture {
    scheme: InducedScheme,
    schedule: BridgeSchedule,
}

fn small_config(levels: usize) -> BridgeConfig {
    let mut cfg = BridgeConfig {
        levels,
        ..Default::default()
    };
    cfg.family.budget = 4000;
    cfg
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let scheme = InducedScheme::build(Map::example(), 20).unwrap();
        let target = TargetSpec::parse_point("1/2,1/4,1/4").unwrap();
        let schedule = plan_schedule(&scheme, &target, &small_config(2)).unwrap();
        Fixture { scheme, schedule }
    })
}

#[test]
fn schedule_offsets_and_certificates() {
    let f = fixture();
    let s = &f.schedule;
    assert_eq!(s.levels[0].t, 0);
    for w in s.levels.windows(2) {
        assert_eq!(w[1].t, w[0].t + w[0].n * w[0].k);
        assert!(w[1].eps < w[0].eps);
    }
    for l in &s.levels {
        assert!(l.n * l.k > l.horizon, "dwell time must exceed the horizon");
    }
    assert!(s.all_pass());
    for certs in &s.certificates {
        let names: Vec<&str> = certs.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, plan::CERTIFICATE_NAMES);
    }
}

#[test]
fn dwell_time_is_minimal() {
    let f = fixture();
    let s = &f.schedule;
    for i in 0..s.levels.len() {
        let next = s.levels.get(i + 1);
        let k = s.levels[i].k;
        let at = plan::level_certificates(&s.levels, i, k, next, &s.constants);
        assert!(at.iter().all(|c| c.pass != Some(false)));
        let below = plan::level_certificates(&s.levels, i, k - 1, next, &s.constants);
        assert!(below.iter().any(|c| c.pass == Some(false)));
    }
}

#[test]
fn schedule_json_reload_rechecks() {
    let doc = fixture().schedule.doc();
    let json = serde_json::to_string_pretty(&doc).unwrap();
    let back: ScheduleDoc = serde_json::from_str(&json).unwrap();
    assert_eq!(back, doc);
    assert!(back.recheck());
    assert_eq!(serde_json::to_string_pretty(&back).unwrap(), json);

    let mut tampered = back.clone();
    tampered.levels[1].k -= 1;
    assert!(!tampered.recheck());
}

#[test]
fn generated_point_passes_every_regime() {
    let f = fixture();
    let p = generate_point(&f.scheme, &f.schedule, Policy::LexLeast, ENCLOSURE_DEPTH).unwrap();
    for (cp, l) in p.checkpoints.iter().zip(&f.schedule.levels) {
        assert!(cp.pass);
        assert!(cp.distance <= &l.eps * rat(3, 1));
        assert_eq!(cp.t, l.t + l.n * l.k);
    }
    assert!(nonstat::bridging::strictly_nested(&p.enclosures));
    let cert = verify_generic(&f.scheme, &f.schedule.levels, &f.schedule.target, &p.itinerary);
    assert!(cert.pass, "{:?}", cert.witness);
    for l in &cert.levels {
        for name in ["checkpoint", "late_ratio", "full_sequence"] {
            assert!(l.regimes[name].checked > 0, "{name} not exercised at level {}", l.level);
        }
    }
    for name in ["early_drift", "early_ball", "sandwich"] {
        assert!(cert.levels[1].regimes[name].checked > 0);
    }
}

#[test]
fn policy_swap_gives_another_valid_point() {
    let f = fixture();
    let a = generate_point(&f.scheme, &f.schedule, Policy::LexLeast, 16).unwrap();
    let b = generate_point(&f.scheme, &f.schedule, Policy::LexGreatest, 16).unwrap();
    assert_ne!(a.itinerary, b.itinerary);
    assert_ne!(a.point, b.point);
    for p in [&a, &b] {
        let cert = verify_generic(&f.scheme, &f.schedule.levels, &f.schedule.target, &p.itinerary);
        assert!(cert.pass);
    }
    let seeded: Policy = "seeded:7".parse().unwrap();
    assert_eq!(seeded.to_string(), "seeded:7");
    let c = generate_point(&f.scheme, &f.schedule, seeded, 16).unwrap();
    assert!(verify_generic(&f.scheme, &f.schedule.levels, &f.schedule.target, &c.itinerary).pass);
}

/// Same base components and images, every excursion pushed into `X_1` as deep
/// as the alphabet allows.
fn skewed_block(scheme: &InducedScheme, block: &[u32]) -> Vec<u32> {
    block
        .iter()
        .map(|&id| {
            let s = scheme.symbol(id);
            (1..=scheme.m_max())
                .rev()
                .find_map(|m| scheme.lookup(s.base_comp, Some(0), m, s.image))
                .unwrap_or(id)
        })
        .collect()
}

#[test]
fn corrupted_block_breaks_the_late_regime() {
    let f = fixture();
    let p = generate_point(&f.scheme, &f.schedule, Policy::LexLeast, 8).unwrap();
    let mut itin = p.itinerary.clone();
    let cyc = itin[1].cycle[0].clone();
    let bad = skewed_block(&f.scheme, &cyc);
    assert_ne!(bad, cyc);
    itin[1].cycle[0] = bad;
    let cert = verify_generic(&f.scheme, &f.schedule.levels, &f.schedule.target, &itin);
    assert!(!cert.pass);
    let w = cert.witness.unwrap();
    assert_eq!(w.level, 1);
    assert!(w.regime != "admissibility", "mutation must stay admissible: {w:?}");
}

#[test]
fn inadmissible_itinerary_is_reported() {
    let f = fixture();
    let p = generate_point(&f.scheme, &f.schedule, Policy::LexLeast, 8).unwrap();
    let mut itin = p.itinerary.clone();
    itin[1].cycle[0].reverse();
    let cert = verify_generic(&f.scheme, &f.schedule.levels, &f.schedule.target, &itin);
    if !cert.pass {
        assert!(cert.witness.is_some());
    }
}

#[test]
fn bridge_measure_base_cases_and_additivity() {
    let f = fixture();
    let s = &f.schedule;
    let p = generate_point(&f.scheme, s, Policy::LexLeast, 8).unwrap();
    assert_eq!(bridge_measure(&f.scheme, s, &[]).unwrap(), 0.0);

    let a = p.itinerary[0].block(0).to_vec();
    let m0 = &s.families[0].measure;
    let (base, cond) = m0.prefix_log_mass(&a).unwrap();
    let one = bridge_measure(&f.scheme, s, &a).unwrap();
    assert!((one - (m0.log_start(base) + cond)).abs() < 1e-12);

    let k0 = s.levels[0].k;
    let mut word: Vec<u32> = (0..k0).flat_map(|m| p.itinerary[0].block(m).to_vec()).collect();
    let b = bridge_measure(&f.scheme, s, &word).unwrap();
    let next = p.itinerary[1].block(0).to_vec();
    word.extend_from_slice(&next);
    let ba = bridge_measure(&f.scheme, s, &word).unwrap();
    let (_, c1) = s.families[1].measure.prefix_log_mass(&next).unwrap();
    assert!((ba - (b + c1)).abs() < 1e-9 * ba.abs().max(1.0));
    assert!(ba < b);

    let misaligned = &word[..word.len() - 1];
    assert!(matches!(
        bridge_measure(&f.scheme, s, misaligned),
        Err(nonstat::Error::Misaligned(_))
    ));
}

#[test]
fn profile_reports_bands() {
    let f = fixture();
    let p = generate_point(&f.scheme, &f.schedule, Policy::LexLeast, 8).unwrap();
    let prof = local_dim_profile(&f.scheme, &f.schedule, &p.itinerary).unwrap();
    assert_eq!(prof.levels.len(), 2);
    assert!(prof.levels[0].band.is_none());
    let l1 = &prof.levels[1];
    let (lo, hi) = l1.band.unwrap();
    let (ilo, ihi) = l1.inflated.unwrap();
    assert!(ilo.0 <= lo.0 && hi.0 <= ihi.0);
    assert!(l1.samples.iter().all(|(_, v)| v.0 > 0.0 && v.0 < 2.0));
    assert!((prof.point.0 - p.point.0).abs() < 1e-6);
}

#[test]
fn band_widens_with_radius() {
    let (lo1, hi1) = profile::band(0.8, 0.1, 0.05);
    let (lo2, hi2) = profile::band(0.8, 0.2, 0.1);
    assert!(lo2 <= lo1 && hi1 <= hi2);
    let (lo, hi) = profile::band(1.0, 0.0, 0.0);
    assert_eq!((lo, hi), (1.0, 1.0));
}

#[test]
fn replay_reproduces_first_level() {
    let f = fixture();
    let p = generate_point(&f.scheme, &f.schedule, Policy::LexLeast, ENCLOSURE_DEPTH).unwrap();
    let e = p.enclosures.last().unwrap();
    let r = replay(&f.scheme, &p.itinerary, f.schedule.levels[0].k, 32, Some((e.lo.0, e.hi.0)));
    assert!(r.pass, "{r:?}");
    assert_eq!(r.blocks_reproduced, f.schedule.levels[0].k);
    assert!(r.float_horizon >= 4);
    assert_eq!(r.in_enclosure, Some(true));
}

#[test]
fn polyline_schedule_sweeps_and_verifies() {
    let scheme = &fixture().scheme;
    let target = TargetSpec::parse_polyline("1,0,0;0,1,0").unwrap();
    let seq = target.sequence(5);
    let steps: Vec<Rational> = seq.windows(2).map(|w| max_dist(&w[0], &w[1])).collect();
    assert_eq!(steps, vec![rat(1, 1), rat(1, 2), rat(1, 2), rat(1, 4)]);
    assert_eq!(seq[0], vec![rat(1, 1), rat(0, 1), rat(0, 1)]);
    assert_eq!(seq[1], vec![rat(0, 1), rat(1, 1), rat(0, 1)]);
    assert_eq!(seq[3], seq[0]);

    let sched = plan_schedule(scheme, &target, &small_config(2)).unwrap();
    let p = generate_point(scheme, &sched, Policy::Nearest, 8).unwrap();
    let cert = verify_generic(scheme, &sched.levels, &sched.target, &p.itinerary);
    assert!(cert.pass, "{:?}", cert.witness);
    assert!(cert.levels[1].regimes["consecutive"].checked > 0);
    let near = verify::vertex_approach(&cert.checkpoints, &target.vertices());
    assert_eq!(near.len(), 2);
    let bound = &sched.levels[0].eps * rat(3, 1);
    assert!(near.iter().all(|d| d <= &bound), "{near:?}");
    assert!(near[1] < parse_rat("1/5").unwrap());
}

#[test]
fn planner_rejects_bad_input() {
    let scheme = &fixture().scheme;
    let off = TargetSpec::parse_point("1/2,1/2,1/2").unwrap();
    assert!(plan_schedule(scheme, &off, &small_config(2)).is_err());
    let ok = TargetSpec::parse_point("1/2,1/4,1/4").unwrap();
    assert!(plan_schedule(scheme, &ok, &small_config(1)).is_err());
    let cfg = BridgeConfig {
        k_cap: 10,
        ..small_config(2)
    };
    match plan_schedule(scheme, &ok, &cfg) {
        Err(nonstat::Error::NoScale { level, constraint, .. }) => {
            assert_eq!(level, 0);
            assert!(!constraint.is_empty());
        }
        other => panic!("expected NoScale, got {other:?}"),
    }
}
