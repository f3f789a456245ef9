use fairgen::pipeline::{self, PipelineConfig, Variant};

const TINY: &str = r#"
seed = 11
variant = "btgan_full"
synthetic_rows = 300
mi_estimate_rows = 400

[data]
source = "synthetic"

[data.spec]
n_rows = 1200
correlation_strength = 0.7
minority_fraction = 0.3
seed = 11

[data.spec.base_distribution]
weights = [0.5, 0.5]
means = [[0.0, 0.0], [1.5, 1.5]]
spreads = [[1.0, 1.0], [0.8, 0.8]]

[training]
epochs = 2
batch_size = 128

[drs]
max_attempts_factor = 1000
"#;

fn config(dir: &std::path::Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_toml_str(TINY).unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn same_seed_gives_identical_report() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline::run_pipeline(&config(a.path())).unwrap();
    pipeline::run_pipeline(&config(b.path())).unwrap();
    let ra = std::fs::read(a.path().join("report.json")).unwrap();
    let rb = std::fs::read(b.path().join("report.json")).unwrap();
    assert_eq!(ra, rb);
    pipeline::verify_manifest(a.path()).unwrap();
}

#[test]
fn baseline_skips_rejection_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.variant = Variant::BaselineAlpha0;
    let out = pipeline::run_pipeline(&cfg).unwrap();
    assert!(out.report.drs.is_none());
    assert_eq!(out.report.alpha, 0.0);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = PipelineConfig::from_toml_str(TINY).unwrap();
    let again = PipelineConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(cfg.to_toml().unwrap(), again.to_toml().unwrap());
}

#[test]
fn out_of_range_correlation_is_a_config_error() {
    let cfg = PipelineConfig::from_toml_str(&TINY.replace("= 0.7", "= -1.5"));
    assert!(cfg.and_then(|c| c.validate()).is_err());
}
