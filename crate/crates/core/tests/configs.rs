use std::fs;
use std::path::Path;

use kernel_hopfield::experiments::{ExperimentConfig, ExperimentKind};

#[test]
fn every_kind_has_a_valid_example_config() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for kind in ExperimentKind::ALL {
        let path = dir.join(format!("{kind}.toml"));
        let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let cfg = ExperimentConfig::from_toml_str(&text)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(cfg.kind, kind);
    }
}

#[test]
fn example_configs_match_presets() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for kind in ExperimentKind::ALL {
        let text = fs::read_to_string(dir.join(format!("{kind}.toml"))).unwrap();
        assert_eq!(
            ExperimentConfig::from_toml_str(&text).unwrap(),
            ExperimentConfig::preset(kind),
            "{kind}"
        );
    }
}
