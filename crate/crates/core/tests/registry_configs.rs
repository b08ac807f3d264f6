use std::path::PathBuf;

use rmdim::experiments::{reference_config, RunConfig, REFERENCE_NAMES};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_match_the_registry() {
    for name in REFERENCE_NAMES {
        let path = configs_dir().join(format!("{name}.json"));
        let file = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let reg = reference_config(name).unwrap().normalized();
        assert_eq!(file, reg, "{name}: regenerate with `rmdim reference {name}`");
        assert_eq!(file.hash(), reg.hash());
        file.validate().unwrap();
    }
}
