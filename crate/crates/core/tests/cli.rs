mod common;

use std::fs;

use common::{cli, write_dataset};
use fdeid::config::{accepted_keys, validate_config};

#[test]
fn deid_prints_output_paths_and_writes_images() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 4, 1, "method: {name: blur, params: {kernel_size: 31}}\n");
    let (code, out, err) = cli(&["deid", "--config", ds.config.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], ds.output().to_str().unwrap());
    for l in &lines[1..] {
        assert!(fs::metadata(l).is_ok(), "{l} missing");
    }
    for id in &ds.ids {
        assert!(ds.output_image(id).exists());
    }
    assert!(err.contains("items/s"));
}

#[test]
fn validation_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 1, 2, "method: {name: blur, params: {kernal_size: 31}}\n");
    let (code, _, err) = cli(&["validate", "--config", ds.config.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("kernal_size"), "{err}");

    let (code, _, err) = cli(&["validate", "--config", dir.path().join("absent.yaml").to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("absent.yaml"), "{err}");

    let (code, _, _) = cli(&["deid"]);
    assert_eq!(code, 1);
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 2, 3, "method: {name: identity}\n");
    fs::write(ds.output(), "a file where the output directory belongs").unwrap();
    let (code, _, err) = cli(&["deid", "--config", ds.config.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");

    fs::remove_file(ds.output()).unwrap();
    fs::write(ds.dir.join("detections.jsonl"), "{broken").unwrap();
    let (code, _, _) = cli(&["deid", "--config", ds.config.to_str().unwrap()]);
    assert_eq!(code, 1, "a malformed sidecar is invalid input");
}

#[test]
fn override_changes_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 1, 4, "method: {name: blur}\n");
    let base = validate_config(&ds.config, &[]).unwrap();
    let set = validate_config(&ds.config, &[("method.params.kernel_size".into(), "31".into())]).unwrap();
    assert_ne!(base.hash(), set.hash());

    let (code, out, _) = cli(&[
        "validate",
        "--config",
        ds.config.to_str().unwrap(),
        "--set",
        "method.params.kernel_size=31",
        "--print",
    ]);
    assert_eq!(code, 0);
    assert!(out.contains("kernel_size: 31"), "{out}");
}

#[test]
fn relative_config_falls_back_to_config_dir() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 1, 5, "method: {name: identity}\n");
    std::env::set_var(fdeid::config::CONFIG_DIR_ENV, dir.path());
    let (code, _, err) = cli(&["validate", "--config", "config.yaml"]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn help_lists_every_accepted_key() {
    let (code, out, _) = cli(&["--help"]);
    assert_eq!(code, 0);
    for key in accepted_keys() {
        assert!(out.contains(&key), "--help does not mention `{key}`");
    }
}

#[test]
fn ensemble_config_round_trips_through_validation() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = cli(&["ensemble-config", "--preserve", "gender,expr", "--suppress", "identity"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("ensemble:"), "{out}");
    let ds = write_dataset(dir.path(), 1, 6, &out);
    let cfg = validate_config(&ds.config, &[]).unwrap();
    let spec = cfg.ensemble.unwrap();
    assert_eq!(spec.members.len(), 2);
    assert!((spec.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let (code, out, _) = cli(&["ensemble-config"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("ensemble:"));
}

#[test]
fn ensemble_config_rejects_unknown_attribute() {
    let (code, out, err) = cli(&["ensemble-config", "--preserve", "hairstyle"]);
    assert_eq!(code, 1);
    assert!(out.is_empty());
    assert!(err.contains("hairstyle"), "{err}");
}

#[test]
fn version_prints_crate_version() {
    let (code, out, _) = cli(&["version"]);
    assert_eq!(code, 0);
    assert_eq!(out.trim(), format!("fdeid {}", env!("CARGO_PKG_VERSION")));
}
