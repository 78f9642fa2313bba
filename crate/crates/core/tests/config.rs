use std::path::Path;

use constrainlab::experiment::SweepConfig;

#[test]
fn shipped_default_config_matches_builtin_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let text = std::fs::read_to_string(path).unwrap();
    let cfg: SweepConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg, SweepConfig::default());
    cfg.validate().unwrap();
}

#[test]
fn unknown_config_keys_are_rejected() {
    assert!(serde_json::from_str::<SweepConfig>(r#"{"beam_size": [4]}"#).is_err());
}
