//! Bundled query configs, addressable by name.

use std::path::Path;

use resjoin::{load_query, JoinQuery};

pub const BUILTIN: &[(&str, &str)] = &[
    ("two_table", include_str!("../queries/two_table.toml")),
    ("line3", include_str!("../queries/line3.toml")),
    ("line4", include_str!("../queries/line4.toml")),
    ("line5", include_str!("../queries/line5.toml")),
    ("star3", include_str!("../queries/star3.toml")),
    ("star4", include_str!("../queries/star4.toml")),
    ("star5", include_str!("../queries/star5.toml")),
    ("star6", include_str!("../queries/star6.toml")),
    ("triangle", include_str!("../queries/triangle.toml")),
    ("dumbbell", include_str!("../queries/dumbbell.toml")),
    ("qx", include_str!("../queries/qx.toml")),
    ("qy", include_str!("../queries/qy.toml")),
    ("qz", include_str!("../queries/qz.toml")),
    ("q10", include_str!("../queries/q10.toml")),
];

pub fn builtin_text(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Loads a bundled query by name.
pub fn load(name: &str) -> anyhow::Result<JoinQuery> {
    let text = builtin_text(name).ok_or_else(|| anyhow::anyhow!("no bundled query `{name}`"))?;
    Ok(load_query(text)?)
}

/// A bundled query name, or a path to a TOML config.
pub fn resolve(spec: &str) -> anyhow::Result<JoinQuery> {
    if let Some(text) = builtin_text(spec) {
        return Ok(load_query(text)?);
    }
    let text = std::fs::read_to_string(Path::new(spec))
        .map_err(|e| anyhow::anyhow!("cannot read query config {spec}: {e}"))?;
    Ok(load_query(&text)?)
}
