use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::litmus::{LitmusProgram, Opcode};
use crate::patterns::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantTag {
    MeltdownShape,
    SpectreShape,
    MeltdownPrimeShape,
    SpectrePrimeShape,
    EvictReload,
    WriteAllocateWriteReload,
    ClflushEvictor,
    Other,
}

impl VariantTag {
    pub const ALL: [VariantTag; 8] = [
        VariantTag::MeltdownShape,
        VariantTag::SpectreShape,
        VariantTag::MeltdownPrimeShape,
        VariantTag::SpectrePrimeShape,
        VariantTag::EvictReload,
        VariantTag::WriteAllocateWriteReload,
        VariantTag::ClflushEvictor,
        VariantTag::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantTag::MeltdownShape => "meltdown_shape",
            VariantTag::SpectreShape => "spectre_shape",
            VariantTag::MeltdownPrimeShape => "meltdown_prime_shape",
            VariantTag::SpectrePrimeShape => "spectre_prime_shape",
            VariantTag::EvictReload => "evict_reload",
            VariantTag::WriteAllocateWriteReload => "write_allocate_write_reload",
            VariantTag::ClflushEvictor => "clflush_evictor",
            VariantTag::Other => "other",
        }
    }

    /// True for the Prime variants whose eviction is a coherence invalidation
    /// triggered by a squashed write.
    pub fn is_prime_shape(self) -> bool {
        matches!(self, VariantTag::MeltdownPrimeShape | VariantTag::SpectrePrimeShape)
    }
}

impl fmt::Display for VariantTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        VariantTag::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

/// Names the attack variant from the program and the roles bound by the
/// embedding. Flush+Reload roles are `flush`/`filler`/`reload`, Prime+Probe
/// roles are `prime`/`evictor`/`probe`; anything else is [`VariantTag::Other`].
pub fn classify(prog: &LitmusProgram, emb: &Embedding) -> VariantTag {
    if let (Some(flush), Some(filler)) = (emb.instr("flush"), emb.instr("filler")) {
        let f = prog.instr(filler);
        if !f.squashed {
            return VariantTag::Other;
        }
        if prog.instr(flush).opcode != Opcode::Flush {
            return VariantTag::EvictReload;
        }
        if f.opcode == Opcode::Write {
            return VariantTag::WriteAllocateWriteReload;
        }
        return by_source(prog, filler, VariantTag::SpectreShape, VariantTag::MeltdownShape);
    }
    if let (Some(prime), Some(evictor)) = (emb.instr("prime"), emb.instr("evictor")) {
        let e = prog.instr(evictor);
        if !e.squashed {
            return VariantTag::Other;
        }
        if e.opcode == Opcode::Flush {
            return VariantTag::ClflushEvictor;
        }
        if e.opcode == Opcode::Write && prog.core(evictor) != prog.core(prime) {
            return by_source(prog, evictor, VariantTag::SpectrePrimeShape, VariantTag::MeltdownPrimeShape);
        }
    }
    VariantTag::Other
}

fn by_source(prog: &LitmusProgram, id: crate::litmus::InstrId, branch: VariantTag, fault: VariantTag) -> VariantTag {
    match prog.window_source(id) {
        Some(s) if prog.instr(s).opcode == Opcode::Branch => branch,
        Some(_) => fault,
        None => VariantTag::Other,
    }
}
