use std::path::{Path, PathBuf};

use clap::Args;
use log::{info, warn};
use nonstat::approximation::{build_family, find_connectors, verify_family, vdim_trend, Constants, FamilyConfig};
use nonstat::bridging::{
    generate_point, local_dim_profile, plan_schedule, replay, verify_generic, BridgeConfig, GenericCertificate,
    LevelItinerary, Policy, ScheduleDoc, TargetSpec, ENCLOSURE_DEPTH,
};
use nonstat::cylinders::{count_words, cylinders_csv, enumerate_words, join, BallFilter, WordFilter};
use nonstat::exact::{parse_rat, rat_str, RatioBall};
use nonstat::lab::{coding_check, ensemble_run, limit_set_estimate, seeded_y_start, simulate_occupancy};
use nonstat::map::validate_assumptions;
use nonstat::report::{fixed, Fixed};
use nonstat::{InducedScheme, Map, MapDoc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{parse_target, ExperimentConfig};
use crate::{CliError, Outcome};

/// Truncation used by the scheme-level commands.
pub const SCHEME_M_MAX: u32 = 10_000;
/// Truncation used by the enumeration-heavy commands.
pub const FAMILY_M_MAX: u32 = 20;
pub const BRIDGE_M_MAX: u32 = 100;
pub const DEFAULT_STEPS: u64 = 100_000;
const STATS_DEPTH: usize = 4;
const STATS_SAMPLES: usize = 200;
const FAMILY_SAMPLES: usize = 64;

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

impl Ctx {
    fn scheme(&self, default_m_max: u32) -> Result<InducedScheme, CliError> {
        let map = self.cfg.map()?;
        let m_max = self.cfg.m_max(default_m_max);
        info!("building induced scheme, d = {}, m_max = {m_max}", map.d());
        let s = InducedScheme::build(map, m_max)?;
        info!("{} symbols over {} big images", s.symbols().len(), s.l());
        Ok(s)
    }

    fn json<T: Serialize>(&self, name: &str, v: &T) -> Result<(), CliError> {
        write_json(&self.out, name, v)
    }

    fn text(&self, name: &str, s: &str) -> Result<(), CliError> {
        write_text(&self.out, name, s)
    }
}

pub fn write_text(dir: &Path, name: &str, s: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, s).map_err(|e| CliError::Output {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    info!("wrote {}", path.display());
    Ok(())
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Output {
        path: name.into(),
        msg: e.to_string(),
    })?;
    s.push('\n');
    write_text(dir, name, &s)
}

fn csv_text(rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Output {
            path: "csv".into(),
            msg: e.to_string(),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output {
        path: "csv".into(),
        msg: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn fixed_vec(v: &[f64]) -> Vec<Fixed> {
    v.iter().map(|&x| Fixed(x)).collect()
}

pub fn describe_map(ctx: &Ctx) -> Result<Outcome, CliError> {
    let map = ctx.cfg.map()?;
    let report = validate_assumptions(&map);
    let fixed_points: Vec<_> = map
        .fixed_points()
        .iter()
        .map(|p| json!({ "branch": p.branch, "xi": Fixed(p.xi), "b": Fixed(p.b) }))
        .collect();
    ctx.json(
        "map.json",
        &json!({
            "map": map.to_doc(),
            "d": map.d(),
            "alpha": Fixed(*map.alpha()),
            "fixed_points": fixed_points,
            "assumptions": report,
        }),
    )?;
    if report.pass {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::Failed(json!({ "check": "assumptions", "report": report })))
    }
}

pub fn induce(ctx: &Ctx) -> Result<Outcome, CliError> {
    let s = ctx.scheme(SCHEME_M_MAX)?;
    let conn = find_connectors(&s)?;
    let untracked: Vec<f64> = (0..s.d()).map(|j| s.untracked_mass(j)).collect();
    let connectors: Vec<Vec<String>> = conn
        .table
        .iter()
        .map(|row| row.iter().map(|c| join(&c.word, ".")).collect())
        .collect();
    ctx.json(
        "scheme.json",
        &json!({
            "m_max": s.m_max(),
            "d": s.d(),
            "L": s.l(),
            "symbol_count": s.symbols().len(),
            "y_length": Fixed(s.y_len()),
            "y_components": s.y_components(),
            "big_images": s.big_images(),
            "x_regions": s.x_regions(),
            "untracked_mass": fixed_vec(&untracked),
            "connectors": { "k0": conn.k0, "m_conn": conn.m_conn, "words": connectors },
        }),
    )?;
    let mut rows = vec![["id", "base", "base_comp", "target", "level", "image", "tau", "log_len"]
        .map(String::from)
        .to_vec()];
    for sym in s.symbols() {
        rows.push(vec![
            sym.id.to_string(),
            sym.base.to_string(),
            sym.base_comp.to_string(),
            sym.target.map(|j| j.to_string()).unwrap_or_default(),
            sym.level.to_string(),
            sym.image.to_string(),
            sym.tau().to_string(),
            fixed(s.symbol_log_len(sym.id)),
        ]);
    }
    ctx.text("symbols.csv", &csv_text(&rows)?)?;
    Ok(Outcome::Ok)
}

pub fn tail(ctx: &Ctx) -> Result<Outcome, CliError> {
    let s = ctx.scheme(SCHEME_M_MAX)?;
    let table = s.tail_table()?;
    let mut header = vec!["n".to_string()];
    header.extend((1..=s.d()).map(|j| format!("mass_{j}")));
    let mut rows = vec![header];
    for n in 0..=s.m_max() as usize {
        let mut r = vec![n.to_string()];
        r.extend(table.rows.iter().map(|row| fixed(row.mass[n])));
        rows.push(r);
    }
    ctx.text("tail.csv", &csv_text(&rows)?)?;
    let fits: Vec<_> = table
        .rows
        .iter()
        .map(|r| {
            json!({
                "target": r.target,
                "alpha_hat": Fixed(r.alpha_hat),
                "gamma_hat": Fixed(r.gamma_hat),
                "untracked": Fixed(r.untracked),
            })
        })
        .collect();
    for r in &table.rows {
        info!("target {}: alpha_hat = {}", r.target, fixed(r.alpha_hat));
    }
    ctx.json(
        "tail.json",
        &json!({ "m_max": s.m_max(), "alpha": Fixed(*s.map().alpha()), "fits": fits }),
    )?;
    Ok(Outcome::Ok)
}

#[derive(Args, Debug)]
pub struct CylinderArgs {
    /// Word length n.
    #[arg(long)]
    pub depth: usize,
    /// Keep only ratios in the open max-norm ball of this radius around --center
    /// (or --target).
    #[arg(long)]
    pub radius: Option<String>,
    #[arg(long)]
    pub center: Option<String>,
}

pub fn cylinders(ctx: &Ctx, a: &CylinderArgs) -> Result<Outcome, CliError> {
    if a.depth == 0 {
        return Err(CliError::Input("--depth must be positive".into()));
    }
    let s = ctx.scheme(FAMILY_M_MAX)?;
    let filter = match &a.radius {
        None => None,
        Some(r) => {
            let center = match &a.center {
                Some(c) => TargetSpec::parse_point(c)?,
                None => ctx.cfg.target()?,
            };
            let TargetSpec::Point(c) = center else {
                return Err(CliError::Input("ball center must be a point".into()));
            };
            Some(BallFilter {
                ball: RatioBall::new(c, parse_rat(r)?)?,
                m_max: s.m_max(),
            })
        }
    };
    let cyls = enumerate_words(&s, a.depth, filter.as_ref().map(|f| f as &dyn WordFilter))?;
    info!("{} cylinders of depth {}", cyls.len(), a.depth);
    ctx.text("cylinders.csv", &cylinders_csv(&cyls)?)?;
    ctx.json(
        "cylinders.json",
        &json!({
            "n": a.depth,
            "m_max": s.m_max(),
            "admissible_words": count_words(&s, a.depth).to_string(),
            "count": cyls.len(),
            "ball": a.radius.as_ref().map(|r| json!({ "center": a.center, "radius": r })),
        }),
    )?;
    Ok(Outcome::Ok)
}

#[derive(Args, Debug)]
pub struct VdimArgs {
    /// File with one cylinder length per line.
    #[arg(long, conflicts_with = "depth")]
    pub lengths: Option<PathBuf>,
    /// Use every admissible cylinder of this depth.
    #[arg(long)]
    pub depth: Option<usize>,
}

pub fn vdim(ctx: &Ctx, a: &VdimArgs) -> Result<Outcome, CliError> {
    let (source, logs) = match (&a.lengths, a.depth) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            let mut logs = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let x: f64 = line
                    .parse()
                    .map_err(|_| CliError::Input(format!("line {}: not a number: {line:?}", i + 1)))?;
                if !(x > 0.0 && x < 1.0) {
                    return Err(CliError::Input(format!("line {}: length {x} outside (0, 1)", i + 1)));
                }
                logs.push(x.ln());
            }
            (json!({ "lengths": p.display().to_string() }), logs)
        }
        (None, Some(n)) if n > 0 => {
            let s = ctx.scheme(FAMILY_M_MAX)?;
            let cyls = enumerate_words(&s, n, None)?;
            let logs = cyls.iter().map(|c| c.log_len()).collect();
            (json!({ "depth": n, "m_max": s.m_max() }), logs)
        }
        _ => return Err(CliError::Input("give --lengths FILE or --depth N".into())),
    };
    let v = nonstat::dimension::vdim(&logs)?;
    info!("vdim = {}", fixed(v));
    ctx.json(
        "vdim.json",
        &json!({ "source": source, "count": logs.len(), "vdim": Fixed(v) }),
    )?;
    Ok(Outcome::Ok)
}

pub fn approx(ctx: &Ctx) -> Result<Outcome, CliError> {
    let s = ctx.scheme(FAMILY_M_MAX)?;
    let target = ctx.cfg.target()?;
    target.validate(s.d())?;
    let TargetSpec::Point(pbar) = target else {
        return Err(CliError::Input("approx needs a point target".into()));
    };
    let eps = ctx.cfg.epsilon("2/5")?;
    let depths = ctx.cfg.depths.clone().unwrap_or_else(|| vec![3]);
    let seed = ctx.cfg.seed();
    let fcfg = FamilyConfig {
        budget: ctx.cfg.budget.unwrap_or(FamilyConfig::default().budget),
        seed,
        ..FamilyConfig::default()
    };
    let stats = s.expansion_stats(STATS_DEPTH, STATS_SAMPLES, seed)?;
    let consts = Constants::from(&stats);
    let conn = find_connectors(&s)?;
    let mut families = Vec::new();
    let mut reports = Vec::new();
    let mut witness = None;
    for &n in &depths {
        info!("family at core depth {n}");
        let f = build_family(&s, &conn, n, &eps, &pbar, &consts, &fcfg)?;
        let base = f.n0 as usize + 1;
        let ells = [base, 2 * base, 4 * base];
        let v = verify_family(&s, &f, &ells, FAMILY_SAMPLES, seed)?;
        if !v.ratio_ok && witness.is_none() {
            witness = v.witnesses.iter().find(|w| w.check == "ratio").cloned();
        }
        reports.push(json!({ "manifest": f.manifest(), "verification": v }));
        families.push(f);
    }
    let refs: Vec<_> = families.iter().collect();
    let (increasing, vdims) = vdim_trend(&refs);
    ctx.json(
        "approx.json",
        &json!({
            "m_max": s.m_max(),
            "target": target_doc(&pbar),
            "epsilon": rat_str(&eps),
            "depths": depths,
            "constants": consts,
            "families": reports,
            "vdim_trend": { "increasing": increasing, "vdims": fixed_vec(&vdims) },
        }),
    )?;
    Ok(match witness {
        Some(w) => Outcome::Failed(json!({ "check": "family_ratio", "witness": w })),
        None => Outcome::Ok,
    })
}

fn target_doc(p: &[nonstat::Rational]) -> Vec<String> {
    p.iter().map(rat_str).collect()
}

/// Everything `verify` needs to recheck a bridging point from scratch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateBundle {
    pub map: MapDoc,
    pub m_max: u32,
    pub policy: Policy,
    pub schedule: ScheduleDoc,
    pub itinerary: Vec<LevelItinerary>,
    pub certificate: GenericCertificate,
}

#[derive(Args, Debug)]
pub struct BridgeArgs {
    /// Build one extra family so the last level's forward inequalities are evaluated.
    #[arg(long)]
    pub lookahead: bool,
    /// Skip the replay of the first-level blocks.
    #[arg(long)]
    pub no_replay: bool,
}

pub fn bridge(ctx: &Ctx, a: &BridgeArgs) -> Result<Outcome, CliError> {
    let s = ctx.scheme(BRIDGE_M_MAX)?;
    let target = ctx.cfg.target()?;
    let policy = ctx.cfg.policy()?;
    let mut cfg = BridgeConfig {
        lookahead: a.lookahead,
        ..BridgeConfig::default()
    };
    if let Some(l) = ctx.cfg.levels {
        cfg.levels = l;
    }
    if let Some(e) = &ctx.cfg.eps0 {
        cfg.eps0 = parse_rat(e)?;
    }
    if let Some(b) = ctx.cfg.budget {
        cfg.family.budget = b;
    }
    if let Some(k) = ctx.cfg.k_cap {
        cfg.k_cap = k;
    }
    cfg.family.seed = ctx.cfg.seed();
    info!("planning {} levels, eps0 = {}", cfg.levels, rat_str(&cfg.eps0));
    let schedule = plan_schedule(&s, &target, &cfg)?;
    for l in &schedule.levels {
        info!("level {}: n = {}, k = {}, t = {}", l.level, l.n, l.k, l.t);
    }
    let doc = schedule.doc();
    ctx.json("schedule.json", &doc)?;
    let point = generate_point(&s, &schedule, policy, ENCLOSURE_DEPTH)?;
    ctx.json("itinerary.json", &point)?;
    ctx.text("itinerary.txt", &itinerary_stream(&point.itinerary))?;
    let cert = verify_generic(&s, &schedule.levels, &schedule.target, &point.itinerary);
    let bundle = CertificateBundle {
        map: s.map().to_doc(),
        m_max: s.m_max(),
        policy,
        schedule: doc,
        itinerary: point.itinerary.clone(),
        certificate: cert.clone(),
    };
    ctx.json("certificate.json", &bundle)?;
    let profile = local_dim_profile(&s, &schedule, &point.itinerary)?;
    ctx.json("profile.json", &profile)?;
    let rep = if a.no_replay {
        None
    } else {
        let e = point.enclosures.last().map(|e| (e.lo.0, e.hi.0));
        let r = replay(&s, &point.itinerary, schedule.levels[0].k, ENCLOSURE_DEPTH as u64, e);
        info!(
            "replay: {}/{} blocks, {} symbols at {} bits",
            r.blocks_reproduced, r.blocks, r.reproduced, r.precision_bits
        );
        ctx.json("replay.json", &r)?;
        Some(r)
    };
    if !schedule.all_pass() {
        let failed: Vec<_> = schedule
            .certificates
            .iter()
            .flatten()
            .filter(|c| c.pass == Some(false))
            .collect();
        return Ok(Outcome::Failed(json!({ "check": "schedule", "failed": failed })));
    }
    if !cert.pass {
        return Ok(Outcome::Failed(json!({ "check": "certificate", "witness": cert.witness })));
    }
    if let Some(r) = rep.filter(|r| !r.pass) {
        return Ok(Outcome::Failed(json!({ "check": "replay", "report": r })));
    }
    info!("bridging point certified, x = {}", fixed(point.point.0));
    Ok(Outcome::Ok)
}

/// One level per paragraph; blocks are `.`-joined symbol ids, the cycle line
/// ends with its repetition count.
pub fn itinerary_stream(itin: &[LevelItinerary]) -> String {
    let words = |bs: &[Vec<u32>]| bs.iter().map(|b| join(b, ".")).collect::<Vec<_>>().join(" ");
    let mut s = String::new();
    for (i, l) in itin.iter().enumerate() {
        s += &format!("level {i} blocks {}\n", l.blocks());
        s += &format!("prefix {}\n", words(&l.prefix));
        s += &format!("cycle {} x{}\n", words(&l.cycle), l.reps);
        s += &format!("tail {}\n", words(&l.tail));
    }
    s
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Bundle written by `bridge` as certificate.json.
    #[arg(long)]
    pub certificate: PathBuf,
}

pub fn verify(ctx: &Ctx, a: &VerifyArgs) -> Result<Outcome, CliError> {
    let p = &a.certificate;
    let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
    let b: CertificateBundle =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
    let map = Map::from_doc(&b.map)?;
    if b.schedule.m_max != b.m_max {
        return Err(CliError::Input("schedule and bundle disagree on m_max".into()));
    }
    let s = InducedScheme::build(map, b.m_max)?;
    let target = TargetSpec::from_doc(&b.schedule.target)?;
    let recheck = b.schedule.recheck();
    let cert = verify_generic(&s, &b.schedule.levels, &target, &b.itinerary);
    let matches = cert == b.certificate;
    ctx.json(
        "verify.json",
        &json!({
            "schedule_recheck": recheck,
            "certificate_pass": cert.pass,
            "matches_stored": matches,
            "certificate": cert,
        }),
    )?;
    if !recheck {
        return Ok(Outcome::Failed(json!({ "check": "schedule_recheck" })));
    }
    if !cert.pass {
        return Ok(Outcome::Failed(json!({ "check": "certificate", "witness": cert.witness })));
    }
    if !matches {
        return Ok(Outcome::Failed(json!({ "check": "stored_certificate_mismatch" })));
    }
    info!("certificate verified");
    Ok(Outcome::Ok)
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Start point; default is drawn uniformly from Y with --seed.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<f64>,
    /// Returns discarded before the limit-set estimate [default: first 10%].
    #[arg(long)]
    pub burn_in: Option<usize>,
}

pub fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<Outcome, CliError> {
    let s = ctx.scheme(SCHEME_M_MAX)?;
    let map = s.map().clone();
    let n = ctx.cfg.steps.unwrap_or(DEFAULT_STEPS);
    let seed = ctx.cfg.seed();
    let target = match &ctx.cfg.target {
        Some(t) => {
            let t = parse_target(t)?;
            t.validate(s.d())?;
            Some(t)
        }
        None => None,
    };
    if let Some(count) = ctx.cfg.seeds {
        let starts: Vec<(u64, f64)> = (seed..seed + count).map(|k| (k, seeded_y_start(&s, k))).collect();
        let path = ctx.out.join("ensemble.csv");
        let file = std::fs::File::create(&path).map_err(|e| CliError::Output {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        ensemble_run(&map, &s, &starts, n, std::io::BufWriter::new(file))?;
        info!("wrote {}", path.display());
    }
    let x0 = a.x0.unwrap_or_else(|| seeded_y_start(&s, seed));
    let trace = simulate_occupancy(&map, &s, x0, n)?;
    info!("{} returns in {n} steps", trace.returns());
    ctx.json(
        "occupancy.json",
        &json!({
            "x0": trace.x0,
            "n": trace.n,
            "occupancy": trace.occupancy,
            "returns": trace.returns(),
        }),
    )?;
    let d = s.d();
    let mut header = vec!["k".to_string(), "tau_k".into()];
    header.extend((1..=d).map(|j| format!("tau{j}_k")));
    header.extend((1..=d).map(|j| format!("ratio{j}_k")));
    let mut rows = vec![header];
    for (k, (rc, r)) in trace.ratio_series.iter().zip(trace.ratios()).enumerate() {
        let mut row = vec![(k + 1).to_string(), rc.tau.to_string()];
        row.extend(rc.tau_bar.iter().map(|t| t.to_string()));
        row.extend(r.iter().map(rat_str));
        rows.push(row);
    }
    ctx.text("ratios.csv", &csv_text(&rows)?)?;
    if trace.returns() < 2 {
        warn!("fewer than two returns; coding and limit-set checks skipped");
        return Ok(Outcome::Ok);
    }
    let coding = coding_check(&trace)?;
    ctx.json("coding.json", &coding)?;
    let limit = limit_set_estimate(&trace, a.burn_in, target.as_ref())?;
    ctx.json("limit.json", &limit)?;
    if coding.sandwich.failed > 0 || coding.monotone.failed > 0 {
        info!(
            "window-end comparisons: sandwich failed {}/{}, monotone failed {}/{}",
            coding.sandwich.failed, coding.sandwich.checked, coding.monotone.failed, coding.monotone.checked
        );
    }
    let hard = [
        ("consistency", &coding.consistency),
        ("return_identity", &coding.return_identity),
        ("monotone_after_return", &coding.monotone_after_return),
    ];
    for (name, t) in hard {
        if !t.pass() {
            return Ok(Outcome::Failed(json!({ "check": name, "tally": t })));
        }
    }
    Ok(Outcome::Ok)
}
