//! End-to-end tests of the `s6v` binary: exit codes, output formats, and
//! config merging.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_s6v"))
}

#[test]
fn dump_weights_matches_closed_forms() {
    let out = bin()
        .args(["dump-weights", "--I", "1", "--J", "1", "--q", "2", "--alpha", "-0.25"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["I"], 1);
    let entries = v["entries"].as_array().unwrap();
    let stay = entries
        .iter()
        .find(|e| e["i1"] == 1 && e["j1"] == 0 && e["i2"] == 1 && e["j2"] == 0)
        .expect("stay entry present");
    assert!((stay["w"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn invalid_regime_exits_with_usage_code() {
    let out = bin()
        .args(["dump-weights", "--q", "2", "--alpha", "0.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("stochasticity conditions"));
}

#[test]
fn verify_passes_with_defaults() {
    let out = bin().arg("verify").output().unwrap();
    assert!(out.status.success(), "verify failed: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pass"], true);
    assert!(v["reports"].as_array().unwrap().len() >= 20);
}

#[test]
fn simulate_emits_parseable_json_lines() {
    let out = bin()
        .args([
            "simulate", "--b1", "0.6", "--b2", "0.3", "--length", "10", "--offset", "-5",
            "--steps", "4", "--seed", "9",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let lines: Vec<&str> = std::str::from_utf8(&out.stdout)
        .unwrap()
        .lines()
        .filter(|l| !l.is_empty())
        .collect();
    assert_eq!(lines.len(), 4);
    for (i, line) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["t"], i as u64 + 1);
        assert_eq!(v["values"].as_array().unwrap().len(), 10);
        assert_eq!(v["seed_path"], format!("9:0:{i}"));
        for k in v["currents"].as_array().unwrap() {
            assert!(k.as_u64().unwrap() <= 1);
        }
    }
}

#[test]
fn simulate_is_deterministic_in_the_seed() {
    let run = || {
        bin()
            .args([
                "simulate", "--b1", "0.6", "--b2", "0.3", "--length", "16", "--offset", "0",
                "--steps", "6", "--seed", "1234",
            ])
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(run(), run());
}

#[test]
fn config_file_supplies_values_and_flags_override() {
    let dir = std::env::temp_dir().join(format!("s6v-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg_path = dir.join("run.conf");
    std::fs::write(&cfg_path, "q = 2\nalpha = -0.25\nI = 1\nJ = 1\n# comment\n").unwrap();

    let out = bin()
        .args(["dump-weights", "--config", cfg_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["alpha"], -0.25);

    // flag overrides the file value
    let out = bin()
        .args([
            "dump-weights", "--config", cfg_path.to_str().unwrap(), "--alpha", "-0.1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["alpha"], -0.1);

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn malformed_config_exits_with_usage_code() {
    let dir = std::env::temp_dir().join(format!("s6v-test-bad-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg_path = dir.join("bad.conf");
    std::fs::write(&cfg_path, "this is not a key value line\n").unwrap();
    let out = bin()
        .args(["verify", "--config", cfg_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn shifted_simulation_moves_the_frame() {
    let out = bin()
        .args([
            "simulate", "--dynamics", "shifted", "--b1", "0.666666666666", "--b2",
            "0.333333333333", "--measure", r#"{"kind":"blocking","q":2.0,"t":0}"#, "--length",
            "20", "--offset", "-10", "--steps", "3", "--seed", "21",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let offsets: Vec<i64> = std::str::from_utf8(&out.stdout)
        .unwrap()
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["offset"].as_i64().unwrap())
        .collect();
    assert_eq!(offsets, vec![-11, -12, -13]);
}

#[test]
fn fusion_subcommand_passes() {
    let out = bin()
        .args([
            "fusion", "--q", "2", "--alpha", "-0.1", "--I", "2", "--J", "1", "--replicas",
            "8000", "--seed", "5",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "fusion failed: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pass"], true);
}
