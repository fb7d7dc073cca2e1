//! End-to-end runs of the `weakamp` binary.

use std::path::Path;
use std::process::{Command, Output};

fn weakamp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weakamp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn all_subcommands_pass_with_defaults() {
    for cmd in ["scan-ps", "scan-aw", "fisher", "circuit-check"] {
        let out = weakamp(&[cmd]);
        assert_eq!(
            code(&out),
            0,
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let text = String::from_utf8(out.stdout).unwrap();
        assert_eq!(data_lines(&text).len(), 7, "{cmd}");
    }
}

#[test]
fn tolerance_failure_exits_two() {
    let out = weakamp(&["scan-aw", "--epsilon", "0.3", "--n-max", "4"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8(out.stdout).unwrap().contains(",false"));
}

#[test]
fn usage_and_config_errors_exit_one() {
    for args in [
        &["bogus"][..],
        &["scan-ps", "--n-max", "x"],
        &["scan-ps", "--observable", "sigma_x"],
        &["scan-ps", "--aw", "20"],
        &["scan-aw", "--n-min", "5", "--n-max", "2"],
        &["fisher", "--aw", "500"],
        &["scan-ps", "--config", "/nonexistent/weakamp.conf"],
    ] {
        assert_eq!(code(&weakamp(args)), 1, "{args:?}");
    }
    assert_eq!(code(&weakamp(&["--help"])), 0);
    assert_eq!(code(&weakamp(&["--version"])), 0);
}

#[test]
fn same_config_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    for format in ["csv", "json"] {
        let paths: Vec<_> = (0..2)
            .map(|i| dir.path().join(format!("run{i}.{format}")))
            .collect();
        for p in &paths {
            let out = weakamp(&[
                "scan-ps",
                "--seed",
                "7",
                "--format",
                format,
                "--out",
                p.to_str().unwrap(),
            ]);
            assert_eq!(code(&out), 0);
            assert!(out.stdout.is_empty());
        }
        let a = std::fs::read(&paths[0]).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, std::fs::read(&paths[1]).unwrap());
    }
}

#[test]
fn seed_changes_only_sampled_column() {
    let a = String::from_utf8(weakamp(&["scan-ps", "--n-max", "3", "--seed", "1"]).stdout).unwrap();
    let b = String::from_utf8(weakamp(&["scan-ps", "--n-max", "3", "--seed", "2"]).stdout).unwrap();
    assert_ne!(a, b);
    let header: Vec<&str> = data_lines(&a)[0].split(',').collect();
    let sampled = header.iter().position(|c| *c == "sampled_ps_max").unwrap();
    for (x, y) in data_lines(&a).iter().zip(data_lines(&b)).skip(1) {
        let (x, y): (Vec<&str>, Vec<&str>) = (x.split(',').collect(), y.split(',').collect());
        for (k, (u, v)) in x.iter().zip(&y).enumerate() {
            assert!(k == sampled || u == v);
        }
    }
}

#[test]
fn csv_schema() {
    let text = String::from_utf8(weakamp(&["scan-ps", "--n-max", "3"]).stdout).unwrap();
    let lines = data_lines(&text);
    assert_eq!(lines.len(), 4);
    let width = lines[0].split(',').count();
    assert!(width >= 9);
    assert!(lines.iter().all(|l| l.split(',').count() == width));
    assert!(text.contains("# prng=ChaCha8"));
    assert!(text.contains("# seed=0"));
}

#[test]
fn json_output_parses() {
    let out = weakamp(&[
        "fisher",
        "--observable",
        "projector",
        "--n-max",
        "3",
        "--format",
        "json",
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["experiment"], "fisher_saturation");
    assert_eq!(v["config"]["observable"], "projector");
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let eta = rows[2]["eta"].as_f64().unwrap();
    assert!((eta - 0.5).abs() < 1e-12);
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("scan.conf");
    let out = dir.path().join("out.csv");
    write(
        &conf,
        &format!(
            "# aw scan\nn-min=2\nn-max=5\nepsilon=0.02\nout={}\n",
            out.display()
        ),
    );
    let run = weakamp(&[
        "scan-aw",
        "--config",
        conf.to_str().unwrap(),
        "--n-max",
        "3",
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("# epsilon=2.0000000000000000e-2"));
    let rows = data_lines(&text);
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("2,") && rows[2].starts_with("3,"));

    write(&conf, "n-max=3\nunknown=1\n");
    assert_eq!(
        code(&weakamp(&["scan-aw", "--config", conf.to_str().unwrap()])),
        1
    );
}
