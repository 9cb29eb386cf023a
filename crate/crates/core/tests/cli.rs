use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use odest::runner::{hash_file, RunManifest};

fn odest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odest"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const GEN_A: &str = "stations = 4\nobservations = 15\nmu_x = [300.0, 200.0, 400.0, 250.0]\nphi = 10.0\nseed = 7\n";

fn generated(dir: &Path) -> PathBuf {
    let cfg = dir.join("a.toml");
    fs::write(&cfg, GEN_A).unwrap();
    let out = dir.join("data");
    let o = odest(&["generate-a", "--config", s(&cfg), "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_documents_subcommands_and_exit_codes() {
    let o = odest(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in [
        "generate-a", "generate-b", "preprocess", "fit-ib", "fit-ad", "fit-qp", "diagnose", "sweep", "sensitivity",
        "report", "presets",
    ] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
    for code in ["3  input file not found", "5  sampler failure", "6  schema-version mismatch"] {
        assert!(text.contains(code), "missing '{code}'");
    }
}

#[test]
fn usage_error_exits_2() {
    assert_eq!(odest(&["fit-ib", "--x", "X.csv"]).status.code(), Some(2));
    assert_eq!(odest(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn generate_a_is_reproducible_and_manifest_hashes_match() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let (a, b) = (generated(d1.path()), generated(d2.path()));
    for f in ["odmatrix.csv", "X.csv", "Y.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = manifest(&a.join("manifest.json"));
    assert_eq!(m.command, "generate-a");
    assert_eq!(m.seed, Some(7));
    assert_eq!(m.config["stations"], 4);
    assert_eq!(m.outputs.len(), 3);
    for h in &m.outputs {
        assert_eq!(hash_file(Path::new(&h.path)).unwrap().sha256, h.sha256);
    }
}

#[test]
fn missing_input_exits_3_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = generated(dir.path());
    let out = dir.path().join("fit");
    let o = odest(&[
        "fit-ib", "--x", s(&data.join("X.csv")), "--y", s(&data.join("missing.csv")), "--out-dir", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());
    let record: serde_json::Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(record["error"], "not_found");
    assert_eq!(record["exit_code"], 3);
}

#[test]
fn validation_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = generated(dir.path());
    let o = odest(&[
        "fit-ib", "--x", s(&data.join("X.csv")), "--y", s(&data.join("Y.csv")), "--target-accept", "1.5",
        "--out-dir", s(&dir.path().join("fit")),
    ]);
    assert_eq!(o.status.code(), Some(4));
    let cum = dir.path().join("cum.csv");
    fs::write(&cum, "time,a\n0,0\n60,10\n120,5\n").unwrap();
    let o = odest(&["preprocess", "--in", s(&cum), "--interval", "15", "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non_monotone"));
}

#[test]
fn single_chain_fit_warns_and_omits_r_hat() {
    let dir = tempfile::tempdir().unwrap();
    let data = generated(dir.path());
    let out = dir.path().join("fit");
    let o = odest(&[
        "fit-ib", "--x", s(&data.join("X.csv")), "--y", s(&data.join("Y.csv")), "--chains", "1", "--warmup", "150",
        "--draws", "150", "--out-dir", s(&out),
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning: a single chain"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["r_hat_max"].is_null());
    assert!(report["params"].as_array().unwrap().iter().all(|p| p["r_hat"].is_null()));
    let m = manifest(&out.join("manifest.json"));
    assert!(m.warnings.iter().any(|w| w.contains("R-hat")));
}

#[test]
fn fit_outputs_and_byte_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = generated(dir.path());
    let (x, y, truth) = (data.join("X.csv"), data.join("Y.csv"), data.join("odmatrix.csv"));
    let fit = dir.path().join("fit");
    let o = odest(&[
        "fit-ib", "--x", s(&x), "--y", s(&y), "--truth", s(&truth), "--chains", "2", "--warmup", "200", "--draws",
        "200", "--seed", "4", "--out-dir", s(&fit),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["draws/draws_chain0.csv", "draws/draws_chain1.csv", "draws/adaptation.json", "odmatrix.csv", "report.json", "manifest.json"] {
        assert!(fit.join(f).is_file(), "{f}");
    }
    let qp = dir.path().join("qp.json");
    assert!(odest(&["fit-qp", "--x", s(&x), "--y", s(&y), "--out", s(&qp)]).status.success());
    assert!(dir.path().join("qp.manifest.json").is_file());

    let table = |name: &str| {
        let out = dir.path().join(name);
        let o = odest(&[
            "report", "--kind", "coefficients", "--draws", s(&fit.join("draws")), "--truth", s(&truth), "--qp",
            s(&qp), "--out", s(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(out).unwrap()
    };
    let (t1, t2) = (table("c1.csv"), table("c2.csv"));
    assert_eq!(t1, t2);
    let lines: Vec<&str> = t1.lines().collect();
    assert_eq!(lines[0], "#schema=odest.report.coefficients/1");
    assert_eq!(lines[1], "origin,destination,true,qp,posterior_mean,hpd_lo,hpd_hi");
    assert_eq!(lines.len() - 2, 4 * 3);

    let diag = dir.path().join("diag.json");
    let o = odest(&["diagnose", "--draws", s(&fit.join("draws")), "--truth", s(&truth), "--qp", s(&qp), "--out", s(&diag)]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&diag).unwrap()).unwrap();
    assert_eq!(r["schema"], "odest.diagnostics/1");
    assert!(r["mse_qp"].as_f64().unwrap() > 0.0);
}

#[test]
fn empty_sweep_gives_header_only_tables_and_schema_mismatch_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep.csv");
    odest::sensitivity::write_sweep_csv(&sweep, &odest::sensitivity::SweepResult { cells: vec![], runtimes: vec![] }).unwrap();
    let out = dir.path().join("disp.csv");
    let o = odest(&["report", "--kind", "dispersion", "--sweep", s(&sweep), "--out", s(&out)]);
    assert!(o.status.success());
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        "#schema=odest.report.dispersion/1\nmodel,window,eta,phi,cells,succeeded,mse_mean,hpd_mean\n"
    );

    let old = dir.path().join("old.csv");
    fs::write(&old, fs::read_to_string(&sweep).unwrap().replace("odest.sweep/1", "odest.sweep/0")).unwrap();
    let bad_out = dir.path().join("bad.csv");
    let o = odest(&["report", "--kind", "scatter", "--sweep", s(&old), "--out", s(&bad_out)]);
    assert_eq!(o.status.code(), Some(6));
    assert!(!bad_out.exists());
    let o = odest(&["sensitivity", "--sweep", s(&old), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(o.status.code(), Some(6));
}

#[test]
fn presets_listing_and_config_round_trip() {
    let o = odest(&["presets"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["worst", "best_ib", "best_ad"] {
        assert!(text.contains(name));
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("b.toml");
    assert!(odest(&["presets", "--name", "best_ad", "--observations", "3", "--seed", "2", "--out", s(&cfg)])
        .status
        .success());
    let parsed: odest::netgen::b::GenBConfig = odest::runner::load_toml(&cfg).unwrap();
    assert_eq!((parsed.observations, parsed.eta, parsed.phi, parsed.seed), (3, 1.0, 10.0, 2));
    assert_eq!(odest(&["presets", "--name", "median", "--out", s(&cfg)]).status.code(), Some(4));
}
