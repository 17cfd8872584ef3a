use std::fmt;
use std::str::FromStr;

use super::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BuiltinPattern {
    FlushReload,
    PrimeProbe,
}

impl BuiltinPattern {
    pub const ALL: [BuiltinPattern; 2] = [BuiltinPattern::FlushReload, BuiltinPattern::PrimeProbe];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinPattern::FlushReload => "flush_reload",
            BuiltinPattern::PrimeProbe => "prime_probe",
        }
    }

    /// The `.threat` source.
    pub fn source(self) -> &'static str {
        match self {
            BuiltinPattern::FlushReload => include_str!("../../data/flush_reload.threat"),
            BuiltinPattern::PrimeProbe => include_str!("../../data/prime_probe.threat"),
        }
    }

    pub fn pattern(self) -> ThreatPattern {
        parse_pattern(self.source()).expect("built-in pattern parses")
    }
}

impl fmt::Display for BuiltinPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        BuiltinPattern::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown built-in pattern `{s}`"))
    }
}

/// Flush (or evict), victim or squashed fill, hitting reload.
pub fn flush_reload_pattern() -> ThreatPattern {
    BuiltinPattern::FlushReload.pattern()
}

/// Prime, victim or squashed eviction, missing probe.
pub fn prime_probe_pattern() -> ThreatPattern {
    BuiltinPattern::PrimeProbe.pattern()
}
