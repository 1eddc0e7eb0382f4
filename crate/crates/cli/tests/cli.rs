//! End-to-end runs of the `molcomm` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn molcomm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_molcomm")).args(args).current_dir(dir).output().expect("binary runs")
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn shipped_configs_validate() {
    let dir = tempfile::tempdir().unwrap();
    let mut n = 0;
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let out = molcomm(&["validate", path.to_str().unwrap()], dir.path());
        assert!(out.status.success(), "{}: {}", path.display(), stderr(&out));
        n += 1;
    }
    assert_eq!(n, 8);
}

#[test]
fn empty_config_names_every_missing_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.toml"), "").unwrap();
    let out = molcomm(&["validate", "empty.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    for key in [
        "environment.receiver_distance",
        "environment.receiver_radius",
        "transmission.molecules_per_one",
        "transmission.bit_interval",
    ] {
        assert!(err.contains(key), "missing {key} in: {err}");
    }
}

#[test]
fn unknown_key_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[environment]\nreceiver_distance = 3e-7\nreceiver_radius = 45e-9\nbogus = 1\n\
                [transmission]\nmolecules_per_one = 5000\nbit_interval = 2e-4\n";
    fs::write(dir.path().join("bad.toml"), text).unwrap();
    let out = molcomm(&["validate", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("environment.bogus"), "{}", stderr(&out));
}

#[test]
fn off_grid_sample_offset_is_rejected_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[environment]\nreceiver_distance = 3e-7\nreceiver_radius = 45e-9\n\
                [transmission]\nmolecules_per_one = 5000\nbit_interval = 2e-4\nsample_offsets = [34.36e-6]\n";
    fs::write(dir.path().join("grid.toml"), text).unwrap();
    let out = molcomm(&["impulse", "--config", "grid.toml", "--scale", "0.001"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("transmission.sample_offsets"), "{}", stderr(&out));
}

#[test]
fn ber_outputs_are_reproducible_across_runs_and_execution_modes() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["ber", "--experiment", "isifree", "--samples", "5", "--scale", "0.02", "--seed", "7"];
    let run = |out_dir: &str, extra: &[&str]| {
        let args: Vec<&str> = base.iter().chain(["--out", out_dir].iter()).chain(extra).copied().collect();
        let out = molcomm(&args, dir.path());
        assert!(out.status.success(), "{}", stderr(&out));
    };
    run("a", &[]);
    run("b", &[]);
    run("c", &["--sequential"]);
    for file in ["curves.csv", "per_interval.csv"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(file)).unwrap(), "{file} differs between runs");
        assert_eq!(a, fs::read(dir.path().join("c").join(file)).unwrap(), "{file} differs when sequential");
    }
    let curves = fs::read_to_string(dir.path().join("a/curves.csv")).unwrap();
    assert!(curves.starts_with("case,x0_m,samples,detector,threshold,pe_analytic,pe_mc,ci95,transmissions"));
    for det in [",ml,", ",matched,", ",equal,"] {
        assert!(curves.contains(det), "no {det} row in {curves}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn custom_weights_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("w.csv"), "weight\n0.5\n1.0\n").unwrap();
    let out = molcomm(
        &[
            "ber",
            "--experiment",
            "isifree",
            "--samples",
            "2",
            "--scale",
            "0.01",
            "--detector",
            "custom",
            "--weights",
            "w.csv",
            "--out",
            "o",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let curves = fs::read_to_string(dir.path().join("o/curves.csv")).unwrap();
    let rows: Vec<&str> = curves.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("base,3e-7,2,custom,"), "{}", rows[0]);

    // three weights for two samples
    fs::write(dir.path().join("w3.csv"), "1,1,1\n").unwrap();
    let out = molcomm(
        &["ber", "--experiment", "isifree", "--samples", "2", "--scale", "0.01", "--weights", "w3.csv", "--out", "o3"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn impulse_writes_expected_and_simulated_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = molcomm(&["impulse", "--scale", "0.005", "--out", "imp"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("imp/impulse.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
    assert!(dir.path().join("imp/summary.json").exists());
}
