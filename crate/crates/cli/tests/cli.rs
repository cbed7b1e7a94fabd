use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nonstat(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonstat"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const SMALL_BRIDGE: &[&str] = &[
    "bridge",
    "--m-max",
    "20",
    "--target",
    "1/2,1/4,1/4",
    "--levels",
    "2",
    "--budget",
    "4000",
    "--no-replay",
];

#[test]
fn describe_map_reports_the_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = nonstat(&["describe-map"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("map.json"));
    assert_eq!(v["d"], 3);
    assert_eq!(v["assumptions"]["pass"], true);
    assert_eq!(v["fixed_points"].as_array().unwrap().len(), 3);
    let log = String::from_utf8_lossy(&o.stderr);
    assert!(log.lines().all(|l| l.starts_with("level=")), "{log}");
}

#[test]
fn tail_fits_half() {
    let dir = tempfile::tempdir().unwrap();
    let o = nonstat(&["tail", "--map", "example", "--m-max", "10000"], dir.path());
    assert_eq!(code(&o), 0);
    let v = read_json(&dir.path().join("tail.json"));
    for f in v["fits"].as_array().unwrap() {
        let a = f["alpha_hat"].as_f64().unwrap();
        assert!((a - 0.5).abs() < 0.05, "{a}");
    }
    let csv = std::fs::read_to_string(dir.path().join("tail.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10_002);
}

#[test]
fn bad_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&nonstat(&["tail", "--m-max", "50"], p)), 2);
    assert_eq!(code(&nonstat(&["induce", "--map", "thaler:x:3"], p)), 2);
    assert_eq!(code(&nonstat(&["induce", "--m-max", "0"], p)), 2);
    assert_eq!(code(&nonstat(&["bridge", "--m-max", "20", "--target", "1/2,1/2,1/2"], p)), 2);
    assert_eq!(code(&nonstat(&["bridge", "--seed-policy", "sideways", "--target", "1,0,0"], p)), 2);
    assert_eq!(code(&nonstat(&["nosuch"], p)), 2);
    let cfg = p.join("cfg.json");
    std::fs::write(&cfg, r#"{"m_max": 20, "flavour": "x"}"#).unwrap();
    assert_eq!(code(&nonstat(&["induce", "--config", cfg.to_str().unwrap()], p)), 2);
    assert!(!p.join("witness.json").exists());
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"map": "thaler:2:3", "m_max": 30}"#).unwrap();
    let o = nonstat(&["induce", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0);
    let v = read_json(&dir.path().join("scheme.json"));
    assert_eq!((v["d"].as_u64(), v["m_max"].as_u64()), (Some(2), Some(30)));
    let o = nonstat(&["induce", "--config", cfg.to_str().unwrap(), "--m-max", "40"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(&dir.path().join("scheme.json"))["m_max"], 40);
}

#[test]
fn bridge_verify_and_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = nonstat(SMALL_BRIDGE, p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["schedule.json", "itinerary.json", "itinerary.txt", "certificate.json", "profile.json"] {
        assert!(p.join(f).exists(), "{f}");
    }
    let cert = p.join("certificate.json");
    let vdir = p.join("verify");
    assert_eq!(code(&nonstat(&["verify", "--certificate", cert.to_str().unwrap()], &vdir)), 0);
    assert_eq!(read_json(&vdir.join("verify.json"))["matches_stored"], true);

    let mut bundle = read_json(&cert);
    let block = bundle["itinerary"][1]["cycle"][0].as_array().unwrap().len();
    bundle["itinerary"][1]["cycle"][0] = Value::Array(vec![Value::from(0); block]);
    let bad = p.join("tampered.json");
    std::fs::write(&bad, serde_json::to_string(&bundle).unwrap()).unwrap();
    let tdir = p.join("tampered");
    assert_eq!(code(&nonstat(&["verify", "--certificate", bad.to_str().unwrap()], &tdir)), 1);
    let w = read_json(&tdir.join("witness.json"));
    assert_eq!(w["check"], "certificate");
    assert_eq!(w["witness"]["level"], 1);

    let mut bundle = read_json(&cert);
    let k = bundle["schedule"]["levels"][0]["k"].as_u64().unwrap();
    bundle["schedule"]["levels"][0]["k"] = Value::from(k - 1);
    std::fs::write(&bad, serde_json::to_string(&bundle).unwrap()).unwrap();
    assert_eq!(code(&nonstat(&["verify", "--certificate", bad.to_str().unwrap()], &tdir)), 1);
    assert_eq!(read_json(&tdir.join("witness.json"))["check"], "schedule_recheck");

    let missing = p.join("missing.json");
    assert_eq!(code(&nonstat(&["verify", "--certificate", missing.to_str().unwrap()], &tdir)), 2);
}

fn same_bytes(a: &Path, b: &Path, files: &[&str]) {
    for f in files {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn artifacts_are_byte_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let runs: &[(&[&str], &[&str])] = &[
        (&["induce", "--m-max", "50"], &["scheme.json", "symbols.csv"]),
        (
            &["cylinders", "--m-max", "20", "--depth", "3", "--target", "1/2,1/4,1/4", "--radius", "1/5"],
            &["cylinders.csv", "cylinders.json"],
        ),
        (
            &["simulate", "--m-max", "200", "--steps", "20000", "--seeds", "4", "--seed", "3"],
            &["occupancy.json", "ratios.csv", "coding.json", "limit.json", "ensemble.csv"],
        ),
        (SMALL_BRIDGE, &["schedule.json", "itinerary.json", "certificate.json", "profile.json"]),
    ];
    for (args, files) in runs {
        let mut one = args.to_vec();
        one.extend(["--threads", "1"]);
        let mut four = args.to_vec();
        four.extend(["--threads", "4"]);
        assert_eq!(code(&nonstat(&one, &a)), 0, "{args:?}");
        assert_eq!(code(&nonstat(&four, &b)), 0, "{args:?}");
        same_bytes(&a, &b, files);
    }
}

#[test]
fn simulate_reports_coding_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = nonstat(
        &["simulate", "--m-max", "500", "--steps", "50000", "--target", "1/2,1/4,1/4"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let c = read_json(&dir.path().join("coding.json"));
    for k in ["consistency", "return_identity", "monotone_after_return"] {
        assert_eq!(c[k]["failed"], 0, "{k}");
        assert!(c[k]["checked"].as_u64().unwrap() > 0);
    }
    let occ = read_json(&dir.path().join("occupancy.json"));
    let total: u64 = occ["occupancy"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).sum();
    assert_eq!(total, 50_000);
    let l = read_json(&dir.path().join("limit.json"));
    assert!(l["hausdorff"].as_f64().is_some());
    let ratios = std::fs::read_to_string(dir.path().join("ratios.csv")).unwrap();
    assert!(ratios.starts_with("k,tau_k,tau1_k,tau2_k,tau3_k,ratio1_k"));
    assert!(ratios.lines().nth(1).unwrap().contains('/'));
}

#[test]
fn approx_and_vdim_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = nonstat(
        &["approx", "--m-max", "20", "--target", "1/2,1/4,1/4", "--depths", "3", "--budget", "4000"],
        p,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&p.join("approx.json"));
    assert_eq!(v["families"][0]["verification"]["ratio_ok"], true);
    assert_eq!(v["epsilon"], "2/5");

    let lens = p.join("lens.txt");
    std::fs::write(&lens, "0.5\n0.25\n0.25\n").unwrap();
    assert_eq!(code(&nonstat(&["vdim", "--lengths", lens.to_str().unwrap()], p)), 0);
    let v = read_json(&p.join("vdim.json"));
    assert!((v["vdim"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    std::fs::write(&lens, "0.5\n1.5\n").unwrap();
    assert_eq!(code(&nonstat(&["vdim", "--lengths", lens.to_str().unwrap()], p)), 2);
}
