//! Microarchitectural happens-before graphs.
//!
//! Nodes are pipeline-stage events of instructions, ViCL (value in cache
//! lifetime) create and expire events, coherence invalidation messages and
//! flush events. Edges are happens-before orderings, labelled with the axiom
//! or structural rule that introduced them. An execution is observable when
//! its graph is acyclic.

mod build;
mod check;
mod dot;

pub use build::{enumerate_executions, explore_executions, ExecutionReport};
pub use check::{check_acyclic, check_dv, check_swmr, check_vicl_pairing};
pub use dot::to_dot;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::litmus::InstrId;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UhbNode {
    /// An instruction reaching a pipeline stage.
    Stage { instr: InstrId, core: usize, stage: String },
    ViclCreate {
        cache: String,
        core: usize,
        paddr: String,
        value: u8,
        instance: usize,
    },
    ViclExpire {
        cache: String,
        core: usize,
        paddr: String,
        value: u8,
        instance: usize,
    },
    /// Invalidation request sent on behalf of `instr`.
    InvalidateSend { instr: InstrId, core: usize, paddr: String },
    /// Invalidation received by core `core`.
    InvalidateRecv { instr: InstrId, core: usize, paddr: String },
    FlushEvent {
        instr: InstrId,
        core: usize,
        vaddr: String,
        paddr: String,
    },
}

impl UhbNode {
    pub fn instr(&self) -> Option<InstrId> {
        match self {
            UhbNode::Stage { instr, .. }
            | UhbNode::InvalidateSend { instr, .. }
            | UhbNode::InvalidateRecv { instr, .. }
            | UhbNode::FlushEvent { instr, .. } => Some(*instr),
            _ => None,
        }
    }

    pub fn core(&self) -> usize {
        match self {
            UhbNode::Stage { core, .. }
            | UhbNode::ViclCreate { core, .. }
            | UhbNode::ViclExpire { core, .. }
            | UhbNode::InvalidateSend { core, .. }
            | UhbNode::InvalidateRecv { core, .. }
            | UhbNode::FlushEvent { core, .. } => *core,
        }
    }

    pub fn paddr(&self) -> Option<&str> {
        match self {
            UhbNode::Stage { .. } => None,
            UhbNode::ViclCreate { paddr, .. }
            | UhbNode::ViclExpire { paddr, .. }
            | UhbNode::InvalidateSend { paddr, .. }
            | UhbNode::InvalidateRecv { paddr, .. }
            | UhbNode::FlushEvent { paddr, .. } => Some(paddr),
        }
    }
}

impl fmt::Display for UhbNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UhbNode::Stage { instr, stage, .. } => write!(f, "{instr} {stage}"),
            UhbNode::ViclCreate {
                cache, core, paddr, value, instance,
            } => write!(f, "Create {cache}.c{core} {paddr}={value} #{instance}"),
            UhbNode::ViclExpire {
                cache, core, paddr, value, instance,
            } => write!(f, "Expire {cache}.c{core} {paddr}={value} #{instance}"),
            UhbNode::InvalidateSend { instr, paddr, .. } => write!(f, "{instr} InvSend {paddr}"),
            UhbNode::InvalidateRecv { instr, core, paddr } => write!(f, "{instr} InvRecv c{core} {paddr}"),
            UhbNode::FlushEvent { instr, vaddr, .. } => write!(f, "{instr} Flush {vaddr}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UhbEdge {
    pub src: usize,
    pub dst: usize,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViclKind {
    /// Filled by a read miss.
    ReadFill,
    /// Filled by a write miss under write-allocate, before the write lands.
    WriteFill,
    /// Holds a committed write's value.
    WriteValue,
    /// Kept by the writing core once another core reads its modified line.
    SharedCopy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpireKind {
    /// Replaced by a different line of the same set.
    Evict,
    /// Superseded by a newer write on the same core.
    Overwrite,
    /// Invalidated by another core's write or flush.
    Invalidate,
    Flush,
    /// Write epoch ended because another core read the line.
    Downgrade,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExpireCause {
    pub kind: ExpireKind,
    pub by: InstrId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Vicl {
    pub create: usize,
    pub expire: usize,
    pub core: usize,
    pub paddr: String,
    pub value: u8,
    pub kind: ViclKind,
    /// The access whose execution created the line.
    pub origin: InstrId,
    /// `None` while the line is still live at the end of the execution.
    pub expire_cause: Option<ExpireCause>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UhbGraph {
    /// Sorted; node ids are indices into this list.
    pub nodes: Vec<UhbNode>,
    /// Sorted and duplicate-free.
    pub edges: Vec<UhbEdge>,
    /// Each read (committed or squashed) and the ViclCreate node it reads from.
    pub sourcing: Vec<(InstrId, usize)>,
    /// Sorted by create node.
    pub vicls: Vec<Vicl>,
    /// The stage at which instructions access the cache.
    pub access_stage: String,
}

impl UhbGraph {
    pub fn node_id(&self, node: &UhbNode) -> Option<usize> {
        self.nodes.binary_search(node).ok()
    }

    pub fn stage_node(&self, instr: InstrId, stage: &str) -> Option<usize> {
        self.nodes.iter().position(|n| {
            matches!(n, UhbNode::Stage { instr: i, stage: s, .. } if *i == instr && s == stage)
        })
    }

    /// The stage node where `instr` accesses the cache.
    pub fn access_node(&self, instr: InstrId) -> Option<usize> {
        self.stage_node(instr, &self.access_stage)
    }

    pub fn source_of(&self, read: InstrId) -> Option<usize> {
        self.sourcing.iter().find(|(r, _)| *r == read).map(|(_, v)| *v)
    }

    pub fn vicl_by_create(&self, create: usize) -> Option<&Vicl> {
        self.vicls.iter().find(|v| v.create == create)
    }

    pub fn vicls_created_by(&self, instr: InstrId) -> impl Iterator<Item = &Vicl> + '_ {
        self.vicls.iter().filter(move |v| v.origin == instr)
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.edges.iter().any(|e| e.src == src && e.dst == dst)
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            out[e.src].push(e.dst);
        }
        for s in &mut out {
            s.sort_unstable();
            s.dedup();
        }
        out
    }

    /// Transitive happens-before relation.
    pub fn reachability(&self) -> Reach {
        Reach::new(self)
    }
}

/// Transitive closure of a graph's edges, as one bitset row per node.
#[derive(Debug, Clone)]
pub struct Reach {
    words: usize,
    rows: Vec<u64>,
}

impl Reach {
    pub fn new(g: &UhbGraph) -> Reach {
        let n = g.nodes.len();
        let words = n.div_ceil(64).max(1);
        let mut rows = vec![0u64; n * words];
        let succ = g.successors();
        match check::topo_order(g) {
            Some(order) => {
                for &u in order.iter().rev() {
                    for &v in &succ[u] {
                        rows[u * words + v / 64] |= 1 << (v % 64);
                        for w in 0..words {
                            let bits = rows[v * words + w];
                            rows[u * words + w] |= bits;
                        }
                    }
                }
            }
            None => {
                for u in 0..n {
                    let mut stack: Vec<usize> = succ[u].clone();
                    while let Some(v) = stack.pop() {
                        let (i, bit) = (u * words + v / 64, 1u64 << (v % 64));
                        if rows[i] & bit == 0 {
                            rows[i] |= bit;
                            stack.extend(&succ[v]);
                        }
                    }
                }
            }
        }
        Reach { words, rows }
    }

    /// True when `a` happens before `b` (strictly, through at least one edge).
    pub fn hb(&self, a: usize, b: usize) -> bool {
        self.rows[a * self.words + b / 64] >> (b % 64) & 1 == 1
    }

    pub fn ordered(&self, a: usize, b: usize) -> bool {
        self.hb(a, b) || self.hb(b, a)
    }
}
