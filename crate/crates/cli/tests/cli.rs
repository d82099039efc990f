use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PAIRS: [&str; 6] = ["1,1", "1,3", "2,1", "2,3", "3,1", "3,3"];

fn msfrail(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msfrail")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn fit_all(dir: &Path, raw: &Path) -> Vec<PathBuf> {
    PAIRS
        .iter()
        .map(|pair| {
            let out = dir.join(format!("fit_{}.json", pair.replace(',', "")));
            let o = msfrail(&["fit", "--panel", s(raw), "--format", "raw", "--pair", pair, "--frailty", "none", "--out", s(&out)]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect()
}

fn with_fits<'a>(base: &[&'a str], fits: &'a [PathBuf]) -> Vec<&'a str> {
    let mut v = base.to_vec();
    for f in fits {
        v.extend(["--fit", s(f)]);
    }
    v
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(code(&msfrail(&["simulate"])), 2);
    assert_eq!(code(&msfrail(&["no-such-command"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(code(&msfrail(&["simulate", "--preset", "appendix-c", "--beta", "1,2,3", "--out", s(&out)])), 2);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[simulate]\nn = 10\n[bogus]\nx = 1\n").unwrap();
    assert_eq!(code(&msfrail(&["--config", s(&cfg), "simulate", "--out", s(&out)])), 2);
    std::fs::write(&cfg, "[simulate]\nnot_a_field = 3\n").unwrap();
    assert_eq!(code(&msfrail(&["--config", s(&cfg), "simulate", "--out", s(&out)])), 2);
}

#[test]
fn io_and_schema_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = dir.path().join("f.json");
    assert_eq!(code(&msfrail(&["fit", "--panel", s(&missing), "--out", s(&out)])), 4);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"fit\": 3}").unwrap();
    let o = msfrail(&["predict", "--fit", s(&bad), "--panel", s(&missing), "--t1", "1", "--t2", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 4);
}

#[test]
fn config_file_is_overridden_by_flags_and_hashed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[simulate]\nn = 40\nsigma = 0.5\nseed = 3\n").unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(code(&msfrail(&["--config", s(&cfg), "simulate", "--out", s(&a)])), 0);
    assert_eq!(code(&msfrail(&["--config", s(&cfg), "simulate", "--n", "60", "--out", s(&b)])), 0);
    let ma = json(&dir.path().join("a.csv.manifest.json"));
    let mb = json(&dir.path().join("b.csv.manifest.json"));
    assert_eq!(ma["config"]["n"], 40);
    assert_eq!(mb["config"]["n"], 60);
    assert_eq!(ma["config"]["sigma"], 0.5);
    assert_eq!(ma["seed"], 3);
    assert_ne!(ma["config_hash"], mb["config_hash"]);
    let ids = |p: &Path| {
        let text = std::fs::read_to_string(p).unwrap();
        let mut v: Vec<String> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect();
        v.dedup();
        v.len()
    };
    assert_eq!(ids(&a), 40);
    assert_eq!(ids(&b), 60);
}

#[test]
fn multistate_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let raw = d.join("raw.csv");
    assert_eq!(code(&msfrail(&["simulate", "--preset", "multistate", "--n", "250", "--seed", "9", "--out", s(&raw)])), 0);
    let fits = fit_all(d, &raw);
    let fit0 = json(&fits[0]);
    assert!(fit0["fit"]["converged"].as_bool().unwrap());
    assert_eq!(fit0["version"], env!("CARGO_PKG_VERSION"));

    let land = d.join("land.csv");
    let side = d.join("side.json");
    let base = ["predict", "--panel", s(&raw), "--t1", "1", "--t2", "4", "--out", s(&land), "--sidecar", s(&side)];
    let o = msfrail(&with_fits(&base, &fits));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&land).unwrap();
    assert!(text.starts_with("account_id,t1,t2,origin,p_land_1,p_land_2,p_land_3"));
    for line in text.lines().skip(1) {
        let p: f64 = line.split(',').skip(4).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((p - 1.0).abs() < 1e-9);
    }
    assert!(side.exists());

    let cls = d.join("cls.csv");
    let base = ["classify", "--panel", s(&raw), "--B", "3", "--seed", "1", "--rule", "plain", "--out", s(&cls)];
    let o = msfrail(&with_fits(&base, &fits));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&cls).unwrap().starts_with("origin,method,rule,horizon,target,mean,sd"));

    let res = d.join("res.csv");
    let rep = d.join("rep.json");
    let base = ["diagnose", "--panel", s(&raw), "--residuals", s(&res), "--report", s(&rep)];
    let o = msfrail(&with_fits(&base, &fits[..2]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&rep)["residuals"].as_array().unwrap().len(), 2);

    // the same pair twice is a specification mismatch
    let dup = vec![fits[0].clone(), fits[0].clone()];
    let base = ["predict", "--panel", s(&raw), "--t1", "1", "--t2", "2", "--out", s(&land)];
    assert_eq!(code(&msfrail(&with_fits(&base, &dup))), 2);
}

#[test]
fn lrt_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("bin.csv");
    let out = dir.path().join("lrt.json");
    assert_eq!(code(&msfrail(&["simulate", "--row", "1", "--sigma", "1.0", "--n", "300", "--out", s(&panel)])), 0);
    let o = msfrail(&["lrt", "--panel", s(&panel), "--B", "9", "--seed", "4", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out);
    assert_eq!(r["seed"], 4);
    let res = &r["results"][0];
    let p = res["p_value"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);
    assert_eq!(res["b"], 9);
    let o = msfrail(&["lrt", "--panel", s(&panel), "--reduced", "slope", "--B", "9", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}
