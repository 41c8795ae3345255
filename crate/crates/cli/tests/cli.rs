use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn bimono(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bimono"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("BIMONO_OUT_DIR")
        .output()
        .expect("failed to launch bimono")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn steady_preset_has_no_cycles() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let r = bimono(&["simulate", "--preset", "steady"], &out);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let cycles = std::fs::read_to_string(out.join("cycles.csv")).unwrap();
    assert_eq!(cycles.lines().count(), 1);
    let s = json(&out.join("summary.json"));
    assert_eq!(s["cycles"], 0);
    assert_eq!(s["conservation_holds"], true);
}

#[test]
fn phase1_preset_first_cycle_times() {
    let tmp = tempfile::tempdir().unwrap();
    let r = bimono(&["simulate", "--preset", "paper-phase1"], tmp.path());
    assert_eq!(r.status.code(), Some(0));
    let s = json(&tmp.path().join("summary.json"));
    let st = &s["first_cycle_stages"];
    for (key, quoted) in [("t2", 191.0), ("t3", 2541.0), ("t4", 2729.0), ("t5", 2732.0)] {
        let t = st[key].as_f64().unwrap();
        assert!((t / quoted - 1.0).abs() < 0.15, "{key} = {t}");
    }
    let starts = column(&tmp.path().join("cycles.csv"), "t_start");
    assert_eq!(starts.len(), 3);
}

#[test]
fn dirac_energy_is_flat_then_decays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "short.json", r#"{"max_cycles": 5}"#);
    let out = tmp.path().join("run");
    let r = bimono(&["simulate", "--preset", "dirac", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let e = column(&out.join("cycles.csv"), "energy");
    assert_eq!(e.len(), 5);
    assert!(((e[1] - e[0]) / e[0]).abs() < 1e-6, "{e:?}");
    assert!(e.windows(2).all(|w| w[1] <= w[0]));
    assert!((e[4] - e[3]) / e[3] < -1e-5, "{e:?}");
}

#[test]
fn blayer_far_field() {
    let tmp = tempfile::tempdir().unwrap();
    let r = bimono(&["blayer"], tmp.path());
    assert_eq!(r.status.code(), Some(0));
    let s = json(&tmp.path().join("summary.json"));
    let u = s["u_at_xi_max"].as_f64().unwrap();
    assert!((u - 2.0 / std::f64::consts::PI).abs() < 1e-6);
    let xi = column(&tmp.path().join("layer.csv"), "xi");
    assert_eq!(xi.len(), 1201);
}

#[test]
fn stability_reports_damped_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.json", r#"{"delta": 0.0, "n_max": 200}"#);
    let out = tmp.path().join("run");
    let r = bimono(&["stability", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let s = json(&out.join("summary.json"));
    assert!(s["lambda1"][0].as_f64().unwrap() < 0.0);
    assert_eq!(s["re_lambda1_negative"], true);
    assert!(s["damping"].is_null());
}

#[test]
fn phase3_spectral_constants() {
    let tmp = tempfile::tempdir().unwrap();
    let r = bimono(&["phase3", "--spectral"], tmp.path());
    assert_eq!(r.status.code(), Some(0));
    let s = json(&tmp.path().join("spectral.json"));
    assert!((s["re_one_plus_i_k0"].as_f64().unwrap() - 0.92505).abs() < 5e-5);
    assert!((s["a"].as_f64().unwrap() - 3.70021).abs() < 5e-5);
    assert_eq!(s["a_quoted"].as_f64().unwrap(), 3.6922);
    assert!(!tmp.path().join("cycles.csv").exists());
}

#[test]
fn invalid_config_is_a_usage_error_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    for body in [r#"{"epsilon": 0.7}"#, r#"{"unknown_key": 1}"#, "not json"] {
        let cfg = write_config(tmp.path(), "bad.json", body);
        let r = bimono(&["simulate", "--config", cfg.to_str().unwrap()], &out);
        assert_eq!(r.status.code(), Some(2), "{body}");
        assert!(!out.exists());
    }
    let r = bimono(&["lv", "--preset", "dirac"], &out);
    assert_eq!(r.status.code(), Some(2));
    let r = bimono(&["simulate", "--format", "xml"], &out);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn failed_run_exits_one_with_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "g.json", r#"{"max_iter": 3}"#);
    let out = tmp.path().join("run");
    let r = bimono(&["semigroup", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(r.status.code(), Some(1));
    let d = json(&out.join("diagnostic.json"));
    assert!(d["error"].as_str().unwrap().contains("no convergence"));
    assert!(!out.join("profile.csv").exists());
}

#[test]
fn output_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(bimono(&["lv"], out).status.code(), Some(0));
    }
    let read = |p: &Path| std::fs::read(p.join("displacement.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(std::fs::read(a.join("summary.json")).unwrap(), std::fs::read(b.join("summary.json")).unwrap());
    let text = String::from_utf8(read(&a)).unwrap();
    let field = text.lines().nth(2).unwrap().split(',').nth(1).unwrap();
    assert!(field.contains("e") && field.split('e').next().unwrap().trim_start_matches('-').len() == 18, "{field}");
}

#[test]
fn json_format_and_env_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("from-env");
    let r = Command::new(env!("CARGO_BIN_EXE_bimono"))
        .args(["phase3", "--preset", "phase3-linear", "--format", "json"])
        .env("BIMONO_OUT_DIR", &dir)
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = json(&dir.join("cycles.json"));
    assert_eq!(rows.as_array().unwrap().len(), 30);
    assert!(rows[0]["e_tilde"].as_f64().unwrap() == 1e-3);
}

#[test]
fn sweep_fans_out_over_epsilon() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sweep.json",
        r#"{"command": "phase3", "base": {"e_tilde": 0.001, "n_cycles": 6}, "epsilons": [0.01, 0.02], "workers": 2}"#,
    );
    let out = tmp.path().join("run");
    let r = bimono(&["sweep", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let s = json(&out.join("sweep.json"));
    assert_eq!(s["members"].as_array().unwrap().len(), 2);
    assert!(out.join("eps-0.01/cycles.csv").exists() && out.join("eps-0.02/cycles.csv").exists());

    let bad = write_config(tmp.path(), "bad.json", r#"{"command": "blayer", "epsilons": [0.01]}"#);
    let r = bimono(&["sweep", "--config", bad.to_str().unwrap()], &tmp.path().join("x"));
    assert_eq!(r.status.code(), Some(2));
}
