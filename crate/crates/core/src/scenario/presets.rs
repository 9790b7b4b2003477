//! Bundled scenarios for the experimental configurations.
//!
//! Parameters that were never published are written as required inputs
//! with placeholders, so loading a preset fails unless they are supplied or
//! placeholders are accepted explicitly.

use super::{parse_scenario, Format, ParseOptions, Scenario, ScenarioError, ScenarioErrors};

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        pub const PRESET_NAMES: &[&str] = &[$($name),*];

        /// Source text of a bundled preset.
        pub fn preset_text(name: &str) -> Option<&'static str> {
            match name {
                $($name => Some(include_str!(concat!("../../presets/", $name, ".scn"))),)*
                _ => None,
            }
        }
    };
}

presets!(
    "two_tube_0",
    "two_tube_90",
    "two_tube_180",
    "two_tube_helical",
    "three_tube_a",
    "three_tube_b",
    "three_tube_c",
    "strategy_ab_demo",
    "ctr_theta_0",
    "ctr_theta_45",
    "ctr_theta_90",
    "ctr_theta_135",
    "ctr_theta_180",
    "exonav_helical_backbone",
);

pub fn preset(name: &str, options: &ParseOptions) -> Result<Scenario, ScenarioErrors> {
    let text = preset_text(name).ok_or_else(|| ScenarioError::UnknownPreset(name.to_string()))?;
    parse_scenario(text, Format::Toml, options)
}
