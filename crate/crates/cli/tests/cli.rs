use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhyper"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

#[test]
fn classify_nilpotent_jordan_block() {
    let f = data("jordan_half.json");
    let out = run(&["classify", path_str(&f), "--m", "2"]);
    assert_eq!(code(&out), 0);
    let report = json(&out);
    assert_eq!(
        report["report"]["verdict"],
        "2-hypercontraction, pure (nilpotent, K=2)"
    );
}

#[test]
fn classify_scalar_pair_decays_geometrically() {
    let f = data("scalar_pair.json");
    let out = run(&["classify", path_str(&f), "--m", "1"]);
    assert_eq!(code(&out), 0);
    let decay = json(&out)["report"]["purity"]["decay"]
        .as_array()
        .unwrap()
        .clone();
    assert!(decay.len() > 5);
    for (k, v) in decay.iter().enumerate().take(10) {
        // decay[k] = ‖σ^(k+1)(I)‖
        let expected = 0.5f64.powi(k as i32 + 1);
        assert!(
            (num(v) - expected).abs() < 1e-14,
            "k = {k}: {v} vs {expected}"
        );
    }
}

#[test]
fn identity_is_not_pure() {
    let f = data("identity.json");
    let out = run(&["classify", path_str(&f), "--m", "1"]);
    assert_eq!(code(&out), 3);
    let report = json(&out);
    assert_eq!(report["report"]["purity"]["pure"], false);
    assert_eq!(report["report"]["hypercontraction"], true);
    assert_eq!(code(&run(&["inner", path_str(&f)])), 3);
    assert_eq!(code(&run(&["charfn", path_str(&f)])), 3);
}

#[test]
fn non_commuting_tuples_exit_2() {
    let f = data("noncommuting.json");
    let out = run(&["classify", path_str(&f)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not commuting"));
}

#[test]
fn parse_errors_exit_1_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"n\": 1,\n \"dim\": oops}").unwrap();
    let out = run(&["classify", path_str(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    std::fs::write(
        &bad,
        r#"{"n": 1, "dim": 2, "matrices": [[[[0,0],[1,0]],[[0,0]]]]}"#,
    )
    .unwrap();
    let out = run(&["classify", path_str(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("matrices[0]"));

    let f = data("shift_1d.json");
    assert_eq!(
        code(&run(&["classify", path_str(&f), "--tol", "bogus=1"])),
        1
    );
    assert_eq!(
        code(&run(&["classify", path_str(&f), "--tol", "residual"])),
        1
    );
    assert_eq!(code(&run(&["classify", path_str(&f), "--bogus-flag"])), 1);
    assert_eq!(code(&run(&["classify", "/nonexistent/tuple.json"])), 1);
}

#[test]
fn tolerance_overrides_are_applied() {
    let f = data("scalar_pair.json");
    let loose = json(&run(&[
        "classify",
        path_str(&f),
        "--tol",
        "purity_decay=1e-3",
    ]));
    let strict = json(&run(&["classify", path_str(&f)]));
    let k_loose = loose["report"]["purity"]["certified_at"].as_u64().unwrap();
    let k_strict = strict["report"]["purity"]["certified_at"].as_u64().unwrap();
    assert!(k_loose < k_strict, "{k_loose} vs {k_strict}");
}

#[test]
fn inner_of_the_zero_tuple_is_the_coordinate() {
    let f = data("shift_1d.json");
    let out = run(&["inner", path_str(&f), "--m", "1"]);
    assert_eq!(code(&out), 0);
    let report = json(&out);
    assert_eq!(report["km_inner"]["verdict"], "inner");
    let coeffs = report["taylor"]["coeffs"].as_array().unwrap();
    // W(z) = ±z: coefficient blocks are 1×1 matrices of [re, im] pairs
    let c0 = &coeffs[0][0][0];
    let c1 = &coeffs[1][0][0];
    assert!(num(&c0[0]).abs() < 1e-15 && num(&c0[1]).abs() < 1e-15);
    assert!((num(&c1[0]).hypot(num(&c1[1])) - 1.0).abs() < 1e-14);
    for c in &coeffs[2..] {
        assert!(num(&c[0][0][0]).abs() < 1e-15);
    }
}

#[test]
fn inner_then_realize_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let f = data("jordan_half.json");
    let out_path = dir.path().join("jh.json");
    let out = run(&[
        "inner",
        path_str(&f),
        "--m",
        "2",
        "--out",
        path_str(&out_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // table on stdout, JSON in the file
    assert!(String::from_utf8_lossy(&out.stdout).contains("km_inner.verdict"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(report["ki"]["passed"], true);
    assert!(num(&report["wandering"]["max_principal_angle"]) < 1e-6);

    let taylor = dir.path().join("jh.taylor.json");
    assert!(dir.path().join("jh.realization.json").exists());
    let out = run(&["realize", path_str(&taylor)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert!(num(&report["extraction"]["max_match_error"]) < 1e-8);
    for row in report["match"].as_array().unwrap() {
        assert!(num(&row["error"]) < 1e-8);
    }
    assert_eq!(report["ki"]["passed"], true);
}

#[test]
fn realize_truncated_input_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let f = data("scalar_pair.json");
    let out_path = dir.path().join("sp.json");
    assert_eq!(
        code(&run(&["inner", path_str(&f), "--out", path_str(&out_path)])),
        0
    );
    let out = run(&["realize", path_str(&dir.path().join("sp.taylor.json"))]);
    assert_eq!(code(&out), 4);
    assert_eq!(json(&out)["km_inner"]["verdict"], "inconclusive");
}

#[test]
fn realize_rejects_non_inner_functions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    // W(z) = 2z is not isometric
    std::fs::write(
        &path,
        r#"{"m": 1, "n": 1, "N": 2, "coeffs": [[[[0,0]]], [[[2,0]]], [[[0,0]]]], "exact": true}"#,
    )
    .unwrap();
    let out = run(&["realize", path_str(&path)]);
    assert_eq!(code(&out), 3);
    assert_eq!(json(&out)["km_inner"]["verdict"], "not_inner");
}

#[test]
fn charfn_zero_tuple_has_exact_kernel_identity() {
    let f = data("shift_1d.json");
    let out = run(&["charfn", path_str(&f), "--samples", "10"]);
    assert_eq!(code(&out), 0);
    let report = json(&out);
    let samples = report["kernel_identity"]["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 10);
    for s in samples {
        assert!(num(&s["vector"]) < 1e-14);
    }
    assert!(num(&report["theta_zero"]["sigma_max"]) < 1e-15);
}

#[test]
fn charfn_scalar_pair_sigma_max() {
    let f = data("scalar_pair.json");
    let report = json(&run(&["charfn", path_str(&f)]));
    let s = num(&report["theta_zero"]["sigma_max"]);
    assert!((s - 0.5f64.sqrt()).abs() < 1e-10, "{s}");
    assert_eq!(report["theta_zero"]["purely_contractive"], true);
}

#[test]
fn charfn_degree_trend_decreases() {
    let f = data("jordan_half.json");
    let report = json(&run(&[
        "charfn",
        path_str(&f),
        "--m",
        "2",
        "--degree",
        "10",
        "--samples",
        "10",
    ]));
    let trend = report["degree_trend"].as_array().unwrap();
    let degrees: Vec<u64> = trend
        .iter()
        .map(|p| p["degree"].as_u64().unwrap())
        .collect();
    assert_eq!(degrees, vec![4, 6, 8, 10]);
    let residuals: Vec<f64> = trend.iter().map(|p| num(&p["max_residual"])).collect();
    for w in residuals.windows(2) {
        assert!(w[1] <= 1.1 * w[0], "{residuals:?}");
    }
}

#[test]
fn reports_are_deterministic_per_seed() {
    let f = data("jordan_half.json");
    let args = |seed: &'static str| {
        [
            "charfn",
            path_str(&f),
            "--m",
            "2",
            "--seed",
            seed,
            "--samples",
            "5",
        ]
        .map(String::from)
    };
    let a = run(&args("7").iter().map(String::as_str).collect::<Vec<_>>());
    let b = run(&args("7").iter().map(String::as_str).collect::<Vec<_>>());
    let c = run(&args("8").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}
