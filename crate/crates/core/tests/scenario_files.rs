use std::path::PathBuf;

use immpc::config::{four_tank_sine, four_tank_unreachable, ScenarioConfig};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

#[test]
fn bundled_files_match_builtin_scenarios() {
    for (file, builtin) in [("four_tank_sine.cfg", four_tank_sine()), ("four_tank_unreachable.cfg", four_tank_unreachable())] {
        let loaded = ScenarioConfig::load(&scenario(file)).unwrap();
        assert_eq!(loaded, builtin, "{file}");
        assert_eq!(loaded.hash(), builtin.hash());
        loaded.build().unwrap();
    }
}
