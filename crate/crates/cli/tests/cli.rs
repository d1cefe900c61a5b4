//! End-to-end tests driving the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tscale"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tscale_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_demo_config(dir: &Path) -> PathBuf {
    let path = dir.join("demo.toml");
    std::fs::write(&path, tscale_core::builtin::demo_config(0.2, 40.0)).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn check_passes_on_demo_config() {
    let dir = temp_dir("check");
    let config = write_demo_config(&dir);
    let out = bin()
        .args(["check", "--config"])
        .arg(&config)
        .args(["--grid", "300", "--json"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("assumption 1"));
    assert!(text.contains("holds"));
    assert!(text.contains(r#""assumption": 4"#));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn check_fails_with_exit_code_two() {
    let dir = temp_dir("checkfail");
    // One-directional internal edge: reciprocity fails.
    let config = dir.join("bad.toml");
    std::fs::write(
        &config,
        r#"
            n = 2
            eps = 0.5
            horizon = 5.0
            clusters = [[1, 2]]
            w.1.2 = "1"
        "#,
    )
    .unwrap();
    let out = bin()
        .args(["check", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = bin().arg("check").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn simulate_writes_deterministic_csv() {
    let dir = temp_dir("simulate");
    let config = write_demo_config(&dir);
    let mut bytes = Vec::new();
    for pass in 0..2 {
        let out_dir = dir.join(format!("out{pass}"));
        let out = bin()
            .args(["simulate", "--t-end", "5", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let csv = std::fs::read(out_dir.join("trajectory.csv")).unwrap();
        assert!(csv.starts_with(b"t,x1,x2,x3,x4,x5,x6,x7,x8\n"));
        bytes.push(csv);
    }
    assert_eq!(bytes[0], bytes[1], "repeated runs must be byte-identical");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn decompose_dumps_matrices() {
    let dir = temp_dir("decompose");
    let config = write_demo_config(&dir);
    let out_dir = dir.join("out");
    let out = bin()
        .args(["decompose", "--times", "0.0,1.5", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for t_dir in ["decompose_t0", "decompose_t1"] {
        for name in ["aggregate", "difference", "lift", "indicator", "fast_fast"] {
            let path = out_dir.join(t_dir).join(format!("{name}.csv"));
            assert!(path.exists(), "missing {}", path.display());
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn reduce_prints_generator_and_residual() {
    let dir = temp_dir("reduce");
    let config = write_demo_config(&dir);
    let out = bin()
        .args(["reduce", "--grid", "300", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("averaged slow generator"));
    assert!(text.contains("averaging residual"));
    assert!(text.contains("holds"));
    assert!(dir.join("out/slow_trajectory.csv").exists());
    assert!(dir.join("out/boundary_layer.csv").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn study_writes_bundle() {
    let dir = temp_dir("study");
    let config = write_demo_config(&dir);
    let out_dir = dir.join("out");
    let out = bin()
        .args([
            "study",
            "--eps-list",
            "0.2",
            "--ts-horizon",
            "4",
            "--grid",
            "300",
            "--config",
        ])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("sup|y-ys|"));
    for name in [
        "report.txt",
        "report.csv",
        "assumptions.txt",
        "comparison_eps_0p2.csv",
        "aggregates_eps_0p2.svg",
        "disagreement_eps_0p2.svg",
    ] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn check_flags_time_varying_weights_and_missing_limit() {
    let dir = temp_dir("wobbly");
    let config = dir.join("wobbly.toml");
    // Internal weights with independent phases: aggregation weights vary
    // in time; external weights proportional to eps keep assumptions
    // 1-3 satisfied but the averaged model cannot be formed because the
    // coupling block has a scale-independent component.
    std::fs::write(
        &config,
        r#"
            n = 4
            eps = 0.05
            horizon = 8.0
            clusters = [[1, 2], [3, 4]]
            w.1.2 = "2+0.8*sin(t)"
            w.2.1 = "2+0.5*cos(1.3*t)"
            w.3.4 = "1.5+0.5*sin(0.7*t)"
            w.4.3 = "1.5"
            w.1.3 = "eps*0.05*(2+sin(t))/3"
            w.3.1 = "eps*0.06*(2+cos(t))/3"
        "#,
    )
    .unwrap();
    let out = bin()
        .args(["check", "--grid", "300", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = stdout(&out);
    assert!(text.contains("block-form residual"));
    assert!(text.contains("averaging unavailable"));
    assert!(text.contains("assumption 1 (intra-cluster reciprocity): holds"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn study_refuses_on_assumption_failure_with_exit_two() {
    let dir = temp_dir("refuse");
    let config = dir.join("tight.toml");
    // Declared scale far below the actual external/internal ratio.
    std::fs::write(
        &config,
        r#"
            n = 4
            eps = 0.01
            horizon = 10.0
            clusters = [[1, 2], [3, 4]]
            x0 = [1.0, 2.0, 3.0, 4.0]
            w.1.2 = "0.5"
            w.2.1 = "0.5"
            w.3.4 = "0.5"
            w.4.3 = "0.5"
            w.1.3 = "eps*30"
            w.3.1 = "eps*30"
        "#,
    )
    .unwrap();
    let out = bin()
        .args(["study", "--eps-list", "0.01", "--grid", "200", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let _ = std::fs::remove_dir_all(&dir);
}
