//! Security litmus tests: small straight-line multi-threaded programs over
//! symbolic addresses.
//!
//! Each thread runs on its own core as either the attacker or the victim.
//! Instructions may depend on an earlier read's value for their address, and
//! a thread may contain one speculation window: the instructions after a
//! mispredicted [`Opcode::Branch`] or a permission-faulting access, which
//! execute but never commit.

mod canon;
mod enumerate;
mod text;
mod wf;

pub use canon::canonicalize;
pub use enumerate::{count_candidates, enumerate_candidates, for_each_candidate, for_each_candidate_sharded, SynthesisBounds};
pub use text::render_program;
pub use wf::{well_formed, WfDiagnostic, WfReport};


use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Location of an instruction: thread index and position within the thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstrId {
    pub thread: usize,
    pub index: usize,
}

impl InstrId {
    pub fn new(thread: usize, index: usize) -> Self {
        InstrId { thread, index }
    }
}

impl fmt::Display for InstrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}.{}", self.thread, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Attacker,
    Victim,
}

impl Actor {
    pub fn as_str(self) -> &'static str {
        match self {
            Actor::Attacker => "attacker",
            Actor::Victim => "victim",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Opcode {
    Read,
    Write,
    Flush,
    Fence,
    Branch,
}

impl Opcode {
    pub fn is_access(self) -> bool {
        matches!(self, Opcode::Read | Opcode::Write | Opcode::Flush)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Opcode::Read => "Read",
            Opcode::Write => "Write",
            Opcode::Flush => "Flush",
            Opcode::Fence => "Fence",
            Opcode::Branch => "Branch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Instruction {
    pub opcode: Opcode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vaddr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub written_value: Option<u8>,
    /// Index of an earlier Read in the same thread whose value forms this
    /// instruction's address.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dep_on: Option<usize>,
    /// Index of the Branch or faulting access that opens this instruction's
    /// speculation window. A faulting access points at itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speculative_under: Option<usize>,
    #[serde(default)]
    pub squashed: bool,
}

impl Instruction {
    pub fn new(opcode: Opcode, vaddr: Option<&str>) -> Self {
        Instruction {
            opcode,
            vaddr: vaddr.map(str::to_string),
            written_value: if opcode == Opcode::Write { Some(1) } else { None },
            dep_on: None,
            speculative_under: None,
            squashed: false,
        }
    }

    pub fn read(vaddr: &str) -> Self {
        Instruction::new(Opcode::Read, Some(vaddr))
    }

    pub fn write(vaddr: &str) -> Self {
        Instruction::new(Opcode::Write, Some(vaddr))
    }

    pub fn flush(vaddr: &str) -> Self {
        Instruction::new(Opcode::Flush, Some(vaddr))
    }

    pub fn fence() -> Self {
        Instruction::new(Opcode::Fence, None)
    }

    pub fn branch() -> Self {
        Instruction::new(Opcode::Branch, None)
    }

    pub fn dep(mut self, on: usize) -> Self {
        self.dep_on = Some(on);
        self
    }

    /// Marks the instruction squashed inside the window opened at `source`.
    pub fn under(mut self, source: usize) -> Self {
        self.speculative_under = Some(source);
        self.squashed = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Thread {
    pub actor: Actor,
    pub core: usize,
    pub instructions: Vec<Instruction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AddrEntry {
    pub paddr: String,
    pub set: usize,
}

/// Access rights of one actor on one physical address. Pairs absent from the
/// table are fully allowed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PermissionEntry {
    pub actor: Actor,
    pub paddr: String,
    pub read: bool,
    pub write: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LitmusProgram {
    pub threads: Vec<Thread>,
    /// Virtual address symbol to physical address and cache set.
    pub address_map: BTreeMap<String, AddrEntry>,
    pub permissions: Vec<PermissionEntry>,
    pub initial_values: BTreeMap<String, u8>,
    /// Pattern roles bound to instructions, filled in by synthesis.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub roles: BTreeMap<String, InstrId>,
}

impl LitmusProgram {
    pub fn instr(&self, id: InstrId) -> &Instruction {
        &self.threads[id.thread].instructions[id.index]
    }

    pub fn ids(&self) -> impl Iterator<Item = InstrId> + '_ {
        self.threads
            .iter()
            .enumerate()
            .flat_map(|(t, th)| (0..th.instructions.len()).map(move |i| InstrId::new(t, i)))
    }

    pub fn len(&self) -> usize {
        self.threads.iter().map(|t| t.instructions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn actor(&self, id: InstrId) -> Actor {
        self.threads[id.thread].actor
    }

    pub fn core(&self, id: InstrId) -> usize {
        self.threads[id.thread].core
    }

    pub fn paddr(&self, vaddr: &str) -> Option<&str> {
        self.address_map.get(vaddr).map(|e| e.paddr.as_str())
    }

    pub fn instr_paddr(&self, id: InstrId) -> Option<&str> {
        self.instr(id).vaddr.as_deref().and_then(|v| self.paddr(v))
    }

    pub fn set_of_paddr(&self, paddr: &str) -> Option<usize> {
        self.address_map
            .values()
            .find(|e| e.paddr == paddr)
            .map(|e| e.set)
    }

    pub fn initial_value(&self, paddr: &str) -> u8 {
        self.initial_values.get(paddr).copied().unwrap_or(0)
    }

    pub fn permission(&self, actor: Actor, paddr: &str) -> (bool, bool) {
        self.permissions
            .iter()
            .find(|p| p.actor == actor && p.paddr == paddr)
            .map(|p| (p.read, p.write))
            .unwrap_or((true, true))
    }

    /// True when the issuing actor lacks the permission this access needs.
    pub fn is_illegal(&self, id: InstrId) -> bool {
        let ins = self.instr(id);
        let Some(paddr) = self.instr_paddr(id) else {
            return false;
        };
        let (r, w) = self.permission(self.actor(id), paddr);
        match ins.opcode {
            Opcode::Read => !r,
            Opcode::Write => !w,
            _ => false,
        }
    }

    /// Reads that some other instruction's address depends on, in id order.
    pub fn dep_sources(&self) -> Vec<InstrId> {
        let mut out: Vec<InstrId> = self
            .ids()
            .filter_map(|id| self.instr(id).dep_on.map(|d| InstrId::new(id.thread, d)))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Physical addresses holding the secret: targets of reads that another
    /// access depends on.
    pub fn secret_paddrs(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .dep_sources()
            .into_iter()
            .filter_map(|id| self.instr_paddr(id).map(str::to_string))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// The Branch or faulting access that squashes `id`, if any.
    pub fn window_source(&self, id: InstrId) -> Option<InstrId> {
        self.instr(id)
            .speculative_under
            .map(|s| InstrId::new(id.thread, s))
    }

    /// Paddrs in first-use order.
    pub fn paddrs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for id in self.ids() {
            if let Some(p) = self.instr_paddr(id) {
                if !out.iter().any(|q| q == p) {
                    out.push(p.to_string());
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("litmus programs serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Builds a program from threads and a vaddr map; every used physical
    /// address starts at 0.
    pub fn build(threads: Vec<(Actor, Vec<Instruction>)>, map: &[(&str, &str, usize)]) -> Self {
        let threads: Vec<Thread> = threads
            .into_iter()
            .enumerate()
            .map(|(core, (actor, instructions))| Thread {
                actor,
                core,
                instructions,
            })
            .collect();
        let address_map: BTreeMap<String, AddrEntry> = map
            .iter()
            .map(|(v, p, s)| {
                (
                    v.to_string(),
                    AddrEntry {
                        paddr: p.to_string(),
                        set: *s,
                    },
                )
            })
            .collect();
        let initial_values = address_map
            .values()
            .map(|e| (e.paddr.clone(), 0))
            .collect();
        LitmusProgram {
            threads,
            address_map,
            permissions: Vec::new(),
            initial_values,
            roles: BTreeMap::new(),
        }
    }

    /// Denies `actor` reading (and writing, if `write` is set) `paddr`.
    pub fn deny(mut self, actor: Actor, paddr: &str, read: bool, write: bool) -> Self {
        self.permissions.retain(|p| !(p.actor == actor && p.paddr == paddr));
        self.permissions.push(PermissionEntry {
            actor,
            paddr: paddr.to_string(),
            read: !read,
            write: !write,
        });
        self.permissions.sort();
        self
    }

    /// Copy with the instruction at `id` removed and indices renumbered.
    /// Returns `None` if other instructions reference it.
    pub fn without(&self, id: InstrId) -> Option<LitmusProgram> {
        let th = &self.threads[id.thread];
        let refs = th.instructions.iter().enumerate().any(|(i, ins)| {
            i != id.index
                && (ins.dep_on == Some(id.index) || ins.speculative_under == Some(id.index))
        });
        if refs {
            return None;
        }
        let mut out = self.clone();
        out.roles.clear();
        let shift = |x: usize| if x > id.index { x - 1 } else { x };
        let thread = &mut out.threads[id.thread];
        thread.instructions.remove(id.index);
        for ins in &mut thread.instructions {
            ins.dep_on = ins.dep_on.map(shift);
            ins.speculative_under = ins.speculative_under.map(shift);
        }
        if thread.instructions.is_empty() {
            out.threads.remove(id.thread);
            for (i, t) in out.threads.iter_mut().enumerate() {
                t.core = i;
            }
        }
        Some(out)
    }
}
