//! Pinned outputs of a reference run: `N2 = 0.25`, `Rc = alpha = beta = 1`,
//! `h = 1 + 0.3 cos(2 pi z1)`, `s = (1, 0)`, 32x32 cell, 16x16 macro grid.

use micro_reynolds::config::parse_config;
use micro_reynolds::pipeline::{self, RunOptions, Stage};

const CONFIG: &str = r#"{
  "fluid": {"N2": 0.25, "Rc": 1.0, "alpha": 1.0, "beta": 1.0, "s": [1.0, 0.0]},
  "roughness": {"kind": "cosine", "h0": 1.0, "amplitude": [0.3, 0.0]},
  "cell": {"n": 32},
  "macro": {"Lx": 1.0, "Ly": 1.0, "mx": 16, "my": 16},
  "flags": {"phi2_variant": "A2"}
}"#;

fn close(got: f64, want: f64) {
    assert!(
        (got - want).abs() <= 1e-11 * want.abs().max(1.0),
        "got {got}, pinned {want}"
    );
}

#[test]
fn cosine_reference_run() {
    let config = parse_config(CONFIG).unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut options = RunOptions::new(Stage::Solve, &config);
    options.out_dir = out.path().to_path_buf();
    let artifacts = pipeline::run(&config, &options).unwrap();
    assert!(artifacts.report.passed, "{:?}", artifacts.report.breaches);

    let f = artifacts.factors.unwrap();
    close(f.k1[0][0], 0.257906977800394);
    close(f.k1[1][1], 0.27604589721931555);
    close(f.l1, 0.2454659685802753);
    close(f.k2[0][0], -0.03775075336621834);
    close(f.k2[1][1], -0.03496573834382724);
    close(f.l2, -0.14768672741911093);
    // roughness varies along z1 only, so the factors stay diagonal
    for m in [f.k1, f.k2] {
        assert!(m[0][1].abs() < 1e-15 && m[1][0].abs() < 1e-15);
    }

    let sol = artifacts.macro_solution.unwrap();
    for (node, p) in [
        (0, -0.47588082081720967),
        (4, -0.23794041040860459),
        (12, 0.23794041040860456),
        (16, 0.47588082081720967),
        (17 * 8 + 3, -0.29742551301075565),
    ] {
        close(sol.p[node], p);
        close(sol.w[node][1], -0.18096577594619145);
        assert!(sol.u[node][0].abs() < 1e-14 && sol.u[node][1].abs() < 1e-14);
    }
}
