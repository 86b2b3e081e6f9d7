use std::path::PathBuf;

use ridgelasso::experiments::{DualityConfig, GeneralizationConfig, RatesConfig, RfComparisonConfig};
use serde::de::DeserializeOwned;

fn load<C: DeserializeOwned>(name: &str) -> C {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn shipped_configs_equal_the_defaults() {
    assert_eq!(load::<DualityConfig>("duality"), DualityConfig::default());
    assert_eq!(load::<GeneralizationConfig>("generalization"), GeneralizationConfig::default());
    assert_eq!(load::<GeneralizationConfig>("norm_bound"), GeneralizationConfig::norm_bound());
    assert_eq!(load::<RatesConfig>("rates"), RatesConfig::default());
    assert_eq!(load::<RfComparisonConfig>("rf_comparison"), RfComparisonConfig::default());
}

#[test]
fn unknown_fields_are_rejected() {
    let err = serde_json::from_str::<DualityConfig>(r#"{"seeds": 3, "sedes": 4}"#);
    assert!(err.is_err());
}

#[test]
fn partial_configs_fill_in_defaults() {
    let cfg: DualityConfig = serde_json::from_str(r#"{"seeds": 3}"#).unwrap();
    assert_eq!(cfg.seeds, 3);
    assert_eq!(cfg.kkt_tol, DualityConfig::default().kkt_tol);
}
