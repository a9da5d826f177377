use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stokes(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stokes-dd"))
        .args(args)
        .arg("--out_dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

#[test]
fn verify_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = stokes(&["verify"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 8);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn zero_run_has_zero_norms() {
    let dir = tempfile::tempdir().unwrap();
    for scheme in ["monolithic", "decomposed"] {
        let out_dir = dir.path().join(scheme);
        let out = stokes(
            &[
                "run",
                "--n",
                "8",
                "--initial",
                "zero",
                "--forcing",
                "zero",
                "--scheme",
                scheme,
            ],
            &out_dir,
        );
        assert!(out.status.success());
        let csv = read(&out_dir.join("steps.csv"));
        assert_eq!(
            csv.lines().next().unwrap(),
            "step,t,norm_state,norm_quarter,norm_half,norm_end,div_residual,cg_iters_total,bound_margin"
        );
        assert_eq!(csv.lines().count(), 11);
        for col in ["norm_state", "norm_half", "norm_end"] {
            assert!(column(&csv, col).iter().all(|v| v == "0e0"), "{scheme} {col}");
        }
        let quarter = column(&csv, "norm_quarter");
        if scheme == "monolithic" {
            assert!(quarter.iter().all(String::is_empty));
        } else {
            assert!(quarter.iter().all(|v| v == "0e0"));
        }
    }
}

#[test]
fn stability_at_huge_step_is_non_increasing() {
    let dir = tempfile::tempdir().unwrap();
    let out = stokes(
        &[
            "stability",
            "--scheme",
            "decomposed",
            "--m",
            "3",
            "--tau",
            "10",
            "--n",
            "16",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = read(&dir.path().join("stability.csv"));
    assert_eq!(csv.lines().count(), 201);
    let norms: Vec<f64> = column(&csv, "norm_end").iter().map(|v| v.parse().unwrap()).collect();
    assert!(norms.iter().all(|v| v.is_finite()));
    assert!(norms.windows(2).all(|w| w[1] <= w[0]));
    assert!(column(&csv, "tau").iter().all(|t| t == "1e1"));
}

#[test]
fn files_snapshots_and_manifest_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let out = stokes(
        &[
            "run",
            "--n",
            "12",
            "--scheme",
            "decomposed",
            "--m",
            "2",
            "--snapshot_every",
            "4",
            "--initial",
            "random",
        ],
        &a,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "steps.csv",
        "velocity_step000004.csv",
        "velocity_step000008.csv",
        "velocity_final.csv",
        "pressure_substep1.csv",
        "pressure_substep2.csv",
        "pressure_composite_diagnostic.csv",
        "manifest.cfg",
    ] {
        assert!(a.join(name).exists(), "{name}");
    }
    let vel = read(&a.join("velocity_final.csv"));
    assert_eq!(vel.lines().next().unwrap(), "i1,i2,x1,x2,u1,u2");
    assert_eq!(vel.lines().count(), 1 + 13 * 13);
    let p = read(&a.join("pressure_substep1.csv"));
    assert_eq!(p.lines().next().unwrap(), "i1,i2,x1,x2,p");
    assert_eq!(p.lines().count(), 1 + 12 * 12);

    let manifest = a.join("manifest.cfg");
    let text = read(&manifest);
    assert!(text.contains("scheme = decomposed") && text.contains("# monitor energy estimate: pass"));
    let b = dir.path().join("b");
    let out = Command::new(env!("CARGO_BIN_EXE_stokes-dd"))
        .args(["run", "--config"])
        .arg(&manifest)
        .arg("--out_dir")
        .arg(&b)
        .output()
        .unwrap();
    assert!(out.status.success());
    for name in ["steps.csv", "velocity_final.csv", "pressure_substep2.csv"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("demo.cfg");
    fs::write(&cfg, "[grid]\nn1 = 6\nn2 = 6\n[time]\ntau = 0.25\nt_final = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stokes-dd"))
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--tau", "0.5", "--out_dir"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read(&dir.path().join("o/steps.csv")).lines().count(), 3);
    assert!(read(&dir.path().join("o/manifest.cfg")).contains("n1 = 6"));
}

#[test]
fn bad_configuration_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    for text in ["mystery = 1\n", "[grid]\nn1 = many\n", "[nowhere]\n", "tau\n"] {
        fs::write(&bad, text).unwrap();
        let out = Command::new(env!("CARGO_BIN_EXE_stokes-dd"))
            .args(["run", "--config"])
            .arg(&bad)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(2), "{text:?}");
        assert!(!out.stderr.is_empty());
    }
    for args in [
        &["run", "--n", "1"][..],
        &["run", "--scheme", "decomposed", "--n", "8", "--m", "9"],
        &["run", "--tau", "0"],
        &["run", "--nu", "0"],
        &["run", "--unknown-flag", "3"],
    ] {
        assert_eq!(stokes(args, dir.path()).status.code(), Some(2), "{args:?}");
    }
    let missing = Command::new(env!("CARGO_BIN_EXE_stokes-dd"))
        .args(["run", "--config", "/nonexistent/stokes.cfg"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn failed_monitor_exits_one() {
    // The decomposed scheme does not converge in time, so its ratio monitor
    // fails while the monolithic ones pass.
    let dir = tempfile::tempdir().unwrap();
    let out = stokes(
        &[
            "converge",
            "--scheme",
            "decomposed",
            "--overlap",
            "2",
            "--grids",
            "8,16",
            "--conv_taus",
            "0.1,0.05,0.025",
            "--spatial_tau",
            "0.01",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("FAIL temporal ratios (decomposed"));
    for name in ["temporal.csv", "gap.csv", "spatial.csv", "manifest.cfg"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let temporal = read(&dir.path().join("temporal.csv"));
    assert_eq!(temporal.lines().count(), 1 + 2 * 3);
}
