//! `configs/defaults.toml` documents every default and must stay in sync
//! with the code. Set `BORROWKIT_BLESS=1` to rewrite it.

use std::path::PathBuf;

use borrowkit_cli::config::{to_toml, Config};

fn defaults_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/defaults.toml")
}

const HEADER: &str = "# Every configuration key with its default value. Generated from the code;\n# regenerate with BORROWKIT_BLESS=1 cargo test -p borrowkit-cli --test defaults.\n\n";

#[test]
fn defaults_file_matches_code() {
    let expected = format!("{HEADER}{}", to_toml(&Config::default()).unwrap());
    let path = defaults_path();
    if std::env::var_os("BORROWKIT_BLESS").is_some() {
        std::fs::write(&path, &expected).unwrap();
    }
    let actual = std::fs::read_to_string(&path).expect("configs/defaults.toml exists");
    assert_eq!(actual, expected, "configs/defaults.toml is stale");
    let parsed: Config = toml::from_str(&actual).unwrap();
    assert_eq!(parsed, Config::default());
}
