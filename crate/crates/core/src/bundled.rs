//! Scenario files shipped with the crate.

use crate::scenario::{Scenario, ScenarioError};

macro_rules! bundle {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../scenarios/", $name, ".toml")))),*]
    };
}

pub const BUNDLED: &[(&str, &str)] = bundle!(
    "block-lifecycle-12h",
    "dirauth",
    "downtime",
    "dpi-context",
    "evasion-fragmentation",
    "evasion-obfsproxy",
    "evasion-spa",
    "evasion-syn-filter",
    "evasion-syn-filter-loss",
    "evasion-window-rewrite",
    "mixed-population",
    "obfsproxy-blacklist",
    "plain-client",
    "reachability-2819",
    "scanner-attraction-17d",
    "timing-december",
    "timing-march",
    "website-block",
);

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<Scenario, ScenarioError> {
    let src = source(name).ok_or_else(|| ScenarioError::UnknownBundled(name.to_string()))?;
    Scenario::from_toml_str(src)
}
