use std::path::{Path, PathBuf};

use willmore_experiments::config::{Kind, Method, apply_override};
use willmore_experiments::{CliError, ExperimentConfig};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

#[test]
fn overrides_create_nested_tables_and_fall_back_to_strings() {
    let mut t = toml::Table::new();
    apply_override(&mut t, "grid.n=64").unwrap();
    apply_override(&mut t, "training.ladder=[16, 32]").unwrap();
    apply_override(&mut t, "output_dir=out/x").unwrap();
    apply_override(&mut t, " eps = 0.25 ").unwrap();
    assert_eq!(t["grid"]["n"].as_integer(), Some(64));
    assert_eq!(t["training"]["ladder"].as_array().unwrap().len(), 2);
    assert_eq!(t["output_dir"].as_str(), Some("out/x"));
    assert_eq!(t["eps"].as_float(), Some(0.25));
}

#[test]
fn malformed_overrides_are_config_errors() {
    let mut t = toml::Table::new();
    for bad in ["no_equals", "=3", "a..b=1"] {
        let e = apply_override(&mut t, bad).unwrap_err();
        assert!(matches!(e, CliError::Config(_)), "{bad}");
        assert_eq!(e.exit_code(), 1);
    }
    apply_override(&mut t, "seed=3").unwrap();
    assert!(matches!(apply_override(&mut t, "seed.x=1"), Err(CliError::Config(_))));
}

#[test]
fn overrides_apply_on_top_of_the_file() {
    let path = configs_dir().join("validate_mcf.toml");
    let cfg = ExperimentConfig::load(Some(&path), &["grid.n=128".into(), "methods=[\"mbo\"]".into()]).unwrap();
    assert_eq!(cfg.grid.n, 128);
    assert_eq!(cfg.methods, vec![Method::Mbo]);
    assert_eq!(cfg.steps, 64);
}

#[test]
fn unknown_keys_and_bad_types_are_rejected() {
    let e = ExperimentConfig::load(None, &["gird.n=3".into()]).unwrap_err();
    assert_eq!(e.exit_code(), 1);
    let e = ExperimentConfig::load(None, &["steps=\"many\"".into()]).unwrap_err();
    assert!(matches!(e, CliError::Toml { .. }));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let e = ExperimentConfig::load(Some(Path::new("/nonexistent/cfg.toml")), &[]).unwrap_err();
    assert!(matches!(e, CliError::Io { .. }));
    assert_eq!(e.exit_code(), 1);
}

#[test]
fn shipped_configs_are_consistent() {
    let dummy = tempfile::NamedTempFile::new().unwrap();
    let mut count = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let over = vec![format!("checkpoint={:?}", dummy.path().display().to_string())];
        let cfg = ExperimentConfig::load(Some(&path), &over).unwrap();
        let kind = cfg.kind.unwrap_or_else(|| panic!("{} has no kind", path.display()));
        if kind == Kind::Train {
            let cfg = ExperimentConfig::load(Some(&path), &[]).unwrap();
            cfg.validate(kind).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        } else {
            cfg.validate(kind).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
        let stem = path.file_stem().unwrap().to_str().unwrap().to_string();
        assert_eq!(cfg.name, stem);
        count += 1;
    }
    assert!(count >= 15);
}

#[test]
fn rectangle_demo_snapshots_at_the_figure_times() {
    let cfg = ExperimentConfig::load(Some(&configs_dir().join("flow_rectangle.toml")), &[]).unwrap();
    // t = 0, 2^-14, 2^-13, 2^-10, 2^-8, 2^-7 with tau = 2^-18
    assert_eq!(cfg.snapshot_steps().unwrap(), vec![0, 16, 32, 256, 1024, 2048]);
}

#[test]
fn progressive_ladder_uses_widths_17_33_65() {
    let cfg = ExperimentConfig::load(Some(&configs_dir().join("train_progressive_2d.toml")), &[]).unwrap();
    let widths: Vec<usize> = (0..3).map(|r| cfg.training.kernel_width(r)).collect();
    assert_eq!(cfg.training.ladder, vec![128, 256, 512]);
    assert_eq!(widths, vec![17, 33, 65]);
}

#[test]
fn validation_catches_inconsistent_settings() {
    let base = |o: &[&str]| {
        let o: Vec<String> = o.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::load(None, &o).unwrap()
    };
    let even = base(&["training.ladder=[16]", "training.kernel_widths=[4]", "training.m=10"]);
    assert!(matches!(even.validate(Kind::Train), Err(CliError::Config(_))));
    let wide = base(&["training.ladder=[16]", "training.kernel_widths=[17]", "training.m=10"]);
    assert!(wide.validate(Kind::Train).is_err());
    let outside = base(&[
        "methods=[\"semi-implicit\"]",
        "shape={kind=\"sphere\", center=[0.9, 0.0], radius=0.3}",
    ]);
    assert!(matches!(outside.validate(Kind::Flow), Err(CliError::Config(_))));
    let no_shape = base(&["inner=\"semi-implicit\""]);
    assert!(no_shape.validate(Kind::Flow).is_err());
    let no_region = base(&["inner=\"semi-implicit\"", "shape={kind=\"sphere\", center=[0.0, 0.0], radius=0.3}"]);
    assert!(no_region.validate(Kind::Inpaint).is_err());
    assert!(no_region.validate(Kind::Flow).is_ok());
    let wrong_kind = base(&["kind=\"train\""]);
    assert!(wrong_kind.validate(Kind::Flow).is_err());
    let missing_ckpt = base(&["checkpoint=\"/nonexistent.wnet\""]);
    assert!(missing_ckpt.validate(Kind::ValidateMcf).is_err());
    let mbo_flow = base(&["inner=\"mbo\"", "shape={kind=\"sphere\", center=[0.0, 0.0], radius=0.3}"]);
    assert!(mbo_flow.validate(Kind::Flow).is_err());
    let fractional = base(&[
        "inner=\"semi-implicit\"",
        "shape={kind=\"sphere\", center=[0.0, 0.0], radius=0.3}",
        "snapshots.times=[1e-7]",
    ]);
    assert!(fractional.validate(Kind::Flow).is_err());
}
