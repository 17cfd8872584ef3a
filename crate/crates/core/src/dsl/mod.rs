//! Microarchitecture descriptions.
//!
//! A [`MicroarchSpec`] names the pipeline stages every core runs through, the
//! cache levels, the coherence and speculation policies, and a list of
//! [`Axiom`]s. Axioms quantify over instructions of a litmus program and
//! require happens-before edges between the nodes those instructions create.

mod builtin;
mod parse;
mod render;

pub use builtin::{builtin_spec, fence_axiom, Builtin};
pub use parse::parse_spec;
pub use render::render_spec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroarchSpec {
    pub name: String,
    pub cores: usize,
    /// Stage names every core's instructions pass through, in pipeline order.
    /// The last stage is where an instruction commits, or is squashed.
    pub stages: Vec<String>,
    /// Stage at which memory accesses touch the cache.
    pub access_stage: String,
    pub cache_levels: Vec<CacheLevelDecl>,
    pub coherence: CoherencePolicy,
    pub write_allocate: bool,
    pub has_flush_instruction: bool,
    pub speculation: SpeculationPolicy,
    /// Sorted by name.
    pub axioms: Vec<Axiom>,
}

impl MicroarchSpec {
    pub fn commit_stage(&self) -> &str {
        self.stages.last().map(String::as_str).unwrap_or("")
    }

    /// The cache the graph engine models: the first level declared.
    pub fn l1(&self) -> Option<&CacheLevelDecl> {
        self.cache_levels.first()
    }

    pub fn invalidation_based(&self) -> bool {
        self.coherence.kind == CoherenceKind::InvalidationBased
    }

    /// Returns a copy with `axiom` added, keeping axioms sorted by name.
    pub fn with_axiom(&self, axiom: Axiom) -> MicroarchSpec {
        let mut spec = self.clone();
        spec.axioms.retain(|a| a.name != axiom.name);
        spec.axioms.push(axiom);
        spec.axioms.sort_by(|a, b| a.name.cmp(&b.name));
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheLevelDecl {
    pub level_id: String,
    pub private_to_core: bool,
    pub num_sets: usize,
    pub inclusive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoherenceKind {
    None,
    InvalidationBased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoherencePolicy {
    pub kind: CoherenceKind,
    /// Squashed writes still request write permission and invalidate sharers.
    pub speculative_write_requests_visible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpeculationPolicy {
    pub allows_speculative_loads_past_permission_check: bool,
    pub allows_branch_misprediction: bool,
    pub allows_speculative_flush: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Axiom {
    pub name: String,
    /// Quantified instruction variables; bound to pairwise distinct instructions.
    pub vars: Vec<String>,
    /// Conjunction of instruction predicates.
    pub preds: Vec<Predicate>,
    /// Disjunctive normal form: one inner vector per disjunct.
    pub body: Vec<Vec<EdgeAssertion>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub negated: bool,
    pub kind: PredKind,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredKind {
    Read,
    Write,
    Flush,
    Fence,
    Branch,
    /// Read, Write or Flush.
    Access,
    /// First argument precedes the second in the same thread.
    Po,
    /// Second argument's address depends on the first's loaded value.
    Dep,
    /// Second argument is speculative under the first.
    Spec,
    SameAddr,
    SameCore,
    Squashed,
    /// The actor lacks permission for this access.
    Illegal,
}

impl PredKind {
    pub const ALL: [PredKind; 13] = [
        PredKind::Read,
        PredKind::Write,
        PredKind::Flush,
        PredKind::Fence,
        PredKind::Branch,
        PredKind::Access,
        PredKind::Po,
        PredKind::Dep,
        PredKind::Spec,
        PredKind::SameAddr,
        PredKind::SameCore,
        PredKind::Squashed,
        PredKind::Illegal,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            PredKind::Read => "read",
            PredKind::Write => "write",
            PredKind::Flush => "flush",
            PredKind::Fence => "fence",
            PredKind::Branch => "branch",
            PredKind::Access => "access",
            PredKind::Po => "po",
            PredKind::Dep => "dep",
            PredKind::Spec => "spec",
            PredKind::SameAddr => "same_addr",
            PredKind::SameCore => "same_core",
            PredKind::Squashed => "squashed",
            PredKind::Illegal => "illegal",
        }
    }

    pub fn from_keyword(s: &str) -> Option<PredKind> {
        PredKind::ALL.iter().copied().find(|k| k.keyword() == s)
    }

    pub fn arity(self) -> usize {
        match self {
            PredKind::Po
            | PredKind::Dep
            | PredKind::Spec
            | PredKind::SameAddr
            | PredKind::SameCore => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeAssertion {
    pub src: NodeTemplate,
    pub dst: NodeTemplate,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeTemplate {
    pub var: String,
    pub point: NodePoint,
}

/// Which node of a quantified instruction an edge endpoint names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodePoint {
    Stage(String),
    /// ViCL created by the instruction's access, optionally qualified by level.
    Create(Option<String>),
    Expire(Option<String>),
    /// Coherence invalidation request sent by the instruction.
    Send,
    Flush,
}

pub(crate) const RESERVED_POINTS: [&str; 4] = ["create", "expire", "send", "flush"];
