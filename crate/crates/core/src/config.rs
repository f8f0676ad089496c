//! Run configuration and scenario files.
//!
//! Both are TOML. A config file holds top-level run settings plus the
//! optional sections `[geometry]`, `[access]`, `[eusf]` and `[coding]`; any
//! key left out takes its default. A scenario file holds `sector_fraction`
//! and one `[[class]]` table per device class.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::access::AccessParams;
use crate::calendar::EusfParams;
use crate::data_plane::CodingScheme;
use crate::error::{Error, Result};
use crate::geometry::{ChannelPlan, Geometry, FRAMES_IN_BLOCKS};
use crate::grant::Variant;
use crate::traffic::{table1, table1_async, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationVariant {
    /// Mass beyond the cap piles up at the cap.
    #[default]
    MassAtCap,
    /// Poisson restricted to `0..=cap` and rescaled.
    Renormalized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub frames_per_multiframe: u32,
    pub n_pdch: u8,
    pub agch_blocks: u32,
    pub rach_slots_per_frame: u32,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            frames_per_multiframe: FRAMES_IN_BLOCKS,
            n_pdch: 8,
            agch_blocks: 7,
            rach_slots_per_frame: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub warmup_s: f64,
    pub measure_s: f64,
    pub variant: Variant,
    /// Alarm classes contend on a RACH of their own.
    pub separate_rach: bool,
    /// Keep a USF-blocked request at the AGCH queue head instead of dropping it.
    pub retain_on_usf_block: bool,
    pub truncation: TruncationVariant,
    pub geometry: GeometryConfig,
    pub access: AccessParams,
    pub eusf: EusfParams,
    pub coding: CodingScheme,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            warmup_s: 300.0,
            measure_s: 3600.0,
            variant: Variant::Legacy,
            separate_rach: false,
            retain_on_usf_block: false,
            truncation: TruncationVariant::MassAtCap,
            geometry: GeometryConfig::default(),
            access: AccessParams::default(),
            eusf: EusfParams::default(),
            coding: CodingScheme::default(),
        }
    }
}

impl SimConfig {
    pub fn geometry(&self) -> Geometry {
        Geometry {
            frames_per_multiframe: self.geometry.frames_per_multiframe,
        }
    }

    pub fn channel_plan(&self) -> ChannelPlan {
        ChannelPlan {
            agch_blocks_per_multiframe: self.geometry.agch_blocks,
            rach_slots_per_frame: self.geometry.rach_slots_per_frame,
            ..ChannelPlan::with_pdchs(self.geometry.n_pdch)
        }
    }

    /// Checks the config; returns warnings for settings the variant ignores.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.measure_s > 0.0) || !self.measure_s.is_finite() {
            return Err(Error::config("measure_s must be positive"));
        }
        if !(self.warmup_s >= 0.0) || !self.warmup_s.is_finite() {
            return Err(Error::config("warmup_s must be non-negative"));
        }
        if self.geometry.n_pdch < 2 {
            return Err(Error::config("n_pdch must be at least 2 (one signaling, one data)"));
        }
        self.geometry().validate()?;
        self.channel_plan().validate()?;
        self.access.validate()?;
        self.eusf.validate()?;
        self.coding.validate()?;
        let mut warnings = Vec::new();
        if !self.variant.uses_eusf() && self.eusf != EusfParams::default() {
            warnings.push(format!("eusf settings are ignored by variant {}", self.variant));
        }
        Ok(warnings)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| parse_error(text, &e))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_error(text: &str, e: &toml::de::Error) -> Error {
    Error::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    }
}

/// Names accepted in place of a scenario path.
pub const BUILTIN_SCENARIOS: [&str; 2] = ["table1", "table1_async"];

pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    match name {
        "table1" => Some(table1()),
        "table1_async" => Some(table1_async()),
        _ => None,
    }
}

/// Parses and validates a scenario file's text.
pub fn parse_scenario_str(text: &str, geometry: &Geometry) -> Result<Scenario> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
    if !(scenario.sector_fraction >= 1.0) {
        return Err(Error::Parse {
            line: find_key_line(text, "sector_fraction").unwrap_or(0),
            message: "sector_fraction must be >= 1".into(),
        });
    }
    for (i, class) in scenario.classes.iter().enumerate() {
        class.validate(geometry).map_err(|e| Error::Parse {
            line: class_header_line(text, i).unwrap_or(0),
            message: e.to_string(),
        })?;
    }
    Ok(scenario)
}

/// Loads a scenario from a path or a built-in name.
pub fn parse_scenario(path: &str, geometry: &Geometry) -> Result<Scenario> {
    if let Some(s) = builtin_scenario(path) {
        return Ok(s);
    }
    let text = std::fs::read_to_string(path)?;
    parse_scenario_str(&text, geometry)
}

pub fn scenario_to_toml(scenario: &Scenario) -> Result<String> {
    toml::to_string(scenario).map_err(|e| Error::Internal(e.to_string()))
}

fn class_header_line(text: &str, index: usize) -> Option<usize> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.trim() == "[[class]]")
        .nth(index)
        .map(|(n, _)| n + 1)
}

fn find_key_line(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| l.trim_start().starts_with(key))
        .map(|n| n + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = SimConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(SimConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_config() {
        let c = SimConfig::from_toml("variant = \"agch+eusf\"\n[eusf]\nvalid_multiframes = 3\n").unwrap();
        assert_eq!(c.variant, Variant::AgchEusf);
        assert_eq!(c.eusf.valid_multiframes, 3);
        assert_eq!(c.eusf.gap_multiframes, 2);
        assert_eq!(c.access.response_window, 105);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = SimConfig::from_toml("seed = 3\n\n[access]\nbackof = 2\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation() {
        let mut c = SimConfig::default();
        assert!(c.validate().unwrap().is_empty());
        c.eusf.valid_multiframes = 4;
        assert_eq!(c.validate().unwrap().len(), 1);
        c.variant = Variant::AgchEusf;
        assert!(c.validate().unwrap().is_empty());
        c.measure_s = 0.0;
        assert!(c.validate().unwrap_err().is_config_error());
        let c = SimConfig {
            geometry: GeometryConfig {
                frames_per_multiframe: 40,
                ..GeometryConfig::default()
            },
            ..SimConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn scenario_file() {
        let text = "sector_fraction = 1\n\n[[class]]\nname = \"alarm\"\ncount = 1500\npayload = 100\ndistribution = \"beta_alarm\"\nactivation_period = 120\n";
        let s = parse_scenario_str(text, &Geometry::default()).unwrap();
        assert_eq!(s.classes.len(), 1);
        assert_eq!(s.simulated_count(&s.classes[0]), 1500);
    }

    #[test]
    fn scenario_errors_carry_lines() {
        let g = Geometry::default();
        let neg = "[[class]]\nname = \"x\"\ncount = -1\npayload = 10\ndistribution = \"poisson\"\narrival_rate = 0.1\n";
        let e = parse_scenario_str(neg, &g).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        assert!(e.to_string().contains("count") || e.to_string().contains("-1"), "{e}");

        let bad = "[[class]]\nname = \"x\"\ncount = 1\npayload = 10\ndistribution = \"gamma\"\n";
        assert!(matches!(parse_scenario_str(bad, &g).unwrap_err(), Error::Parse { line: 5, .. }));

        let missing = "\n[[class]]\nname = \"x\"\ncount = 1\npayload = 10\ndistribution = \"poisson\"\n";
        let e = parse_scenario_str(missing, &g).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
    }

    #[test]
    fn builtins() {
        let g = Geometry::default();
        let s = parse_scenario("table1", &g).unwrap();
        assert_eq!(s.classes.len(), 10);
        assert_eq!(s.classes[0].count, 13941);
        let text = scenario_to_toml(&s).unwrap();
        assert_eq!(parse_scenario_str(&text, &g).unwrap(), s);
    }
}
