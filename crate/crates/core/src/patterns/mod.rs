//! Threat patterns: sub-graph templates over happens-before executions.
//!
//! A pattern declares instruction variables (constrained by actor, status and
//! opcode), ViCL variables, relations between them, required happens-before
//! edges, absence constraints and forbidden variables. [`match_pattern`] returns every embedding
//! of a pattern in one execution graph.

mod builtin;
mod matcher;
mod text;

pub use builtin::{flush_reload_pattern, prime_probe_pattern, BuiltinPattern};
pub use matcher::{match_pattern, static_match};
pub use text::{parse_pattern, render_pattern};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::litmus::{Actor, InstrId, Opcode};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThreatPattern {
    pub name: String,
    pub vars: Vec<PatternVar>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternVar {
    pub name: String,
    pub sort: VarSort,
    pub mode: VarMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarMode {
    Required,
    /// Bound when some value fits, left unbound otherwise.
    Optional,
    /// The embedding is rejected when some value satisfies every constraint
    /// naming this variable. Never bound.
    Forbidden,
}

impl VarMode {
    pub fn keyword(self) -> Option<&'static str> {
        match self {
            VarMode::Required => None,
            VarMode::Optional => Some("optional"),
            VarMode::Forbidden => Some("forbidden"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarSort {
    /// An instruction matching any of the alternatives.
    Instr(Vec<RoleSpec>),
    Vicl,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoleSpec {
    /// `None` accepts either actor.
    pub actor: Option<Actor>,
    /// `None` accepts committed and squashed instructions.
    pub squashed: Option<bool>,
    pub opcodes: Vec<Opcode>,
}

impl RoleSpec {
    pub fn new(actor: Option<Actor>, squashed: Option<bool>, opcodes: &[Opcode]) -> Self {
        RoleSpec {
            actor,
            squashed,
            opcodes: opcodes.to_vec(),
        }
    }

    pub fn accepts(&self, actor: Actor, squashed: bool, op: Opcode) -> bool {
        self.actor.is_none_or(|a| a == actor)
            && self.squashed.is_none_or(|s| s == squashed)
            && self.opcodes.contains(&op)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Both name the same physical address.
    SameAddr,
    SameCore,
    /// Different physical addresses mapped to the same cache set.
    Collides,
    /// Program order within one thread.
    Po,
    /// The second instruction depends on the first.
    Dep,
    /// Program-ordered same-address accesses with no other attacker access
    /// to that address between them.
    Consecutive,
    /// A flush of the second argument's address, or an access to a
    /// colliding address.
    Evicts,
    /// The ViCL was instantiated by the instruction.
    Creates,
    /// The read was sourced from the ViCL.
    Sources,
    /// The instruction ended the ViCL's lifetime.
    Causes,
    /// The ViCL the access leaves behind: the one a read is sourced from or
    /// the one a committed write creates.
    Touches,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sort {
    Instr,
    Vicl,
    Either,
}

impl Relation {
    pub const ALL: [Relation; 11] = [
        Relation::SameAddr,
        Relation::SameCore,
        Relation::Collides,
        Relation::Po,
        Relation::Dep,
        Relation::Consecutive,
        Relation::Evicts,
        Relation::Creates,
        Relation::Sources,
        Relation::Causes,
        Relation::Touches,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Relation::SameAddr => "same_addr",
            Relation::SameCore => "same_core",
            Relation::Collides => "collides",
            Relation::Po => "po",
            Relation::Dep => "dep",
            Relation::Consecutive => "consecutive",
            Relation::Evicts => "evicts",
            Relation::Creates => "creates",
            Relation::Sources => "sources",
            Relation::Causes => "causes",
            Relation::Touches => "touches",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Relation> {
        Relation::ALL.into_iter().find(|r| r.keyword() == s)
    }

    /// Argument sorts, in order.
    pub fn sorts(self) -> [Sort; 2] {
        match self {
            Relation::SameAddr | Relation::SameCore | Relation::Collides => [Sort::Either, Sort::Either],
            Relation::Po | Relation::Dep | Relation::Consecutive => [Sort::Instr, Sort::Instr],
            Relation::Evicts => [Sort::Instr, Sort::Either],
            Relation::Creates | Relation::Sources | Relation::Causes | Relation::Touches => {
                [Sort::Instr, Sort::Vicl]
            }
        }
    }

    /// Decidable from the program alone when all arguments are instructions.
    pub fn is_static(self) -> bool {
        !matches!(
            self,
            Relation::Creates | Relation::Sources | Relation::Causes | Relation::Touches
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Point {
    /// The instruction's cache-access stage node.
    Access,
    /// What an eviction-style instruction leaves in the graph: its flush
    /// event, else the ViCL it created, else its access node.
    Effect,
    Flush,
    Send,
    /// For an instruction, its primary created ViCL.
    Create,
    Expire,
}

impl Point {
    pub const ALL: [Point; 6] = [
        Point::Access,
        Point::Effect,
        Point::Flush,
        Point::Send,
        Point::Create,
        Point::Expire,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Point::Access => "access",
            Point::Effect => "effect",
            Point::Flush => "flush",
            Point::Send => "send",
            Point::Create => "create",
            Point::Expire => "expire",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Point> {
        Point::ALL.into_iter().find(|p| p.keyword() == s)
    }

    pub fn valid_for(self, sort: &VarSort) -> bool {
        match sort {
            VarSort::Instr(_) => true,
            VarSort::Vicl => matches!(self, Point::Create | Point::Expire),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternPoint {
    pub var: String,
    pub point: Point,
}

impl PatternPoint {
    pub fn new(var: &str, point: Point) -> Self {
        PatternPoint {
            var: var.to_string(),
            point,
        }
    }
}

impl fmt::Display for PatternPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.var, self.point.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Constraint {
    Rel {
        negated: bool,
        rel: Relation,
        args: [String; 2],
    },
    /// A happens-before path between two points.
    Edge { src: PatternPoint, dst: PatternPoint },
    /// The named node does not exist, e.g. a hitting access creates no ViCL.
    Absent(PatternPoint),
}

impl Constraint {
    pub fn rel(rel: Relation, a: &str, b: &str) -> Self {
        Constraint::Rel {
            negated: false,
            rel,
            args: [a.to_string(), b.to_string()],
        }
    }

    pub fn not(rel: Relation, a: &str, b: &str) -> Self {
        Constraint::Rel {
            negated: true,
            rel,
            args: [a.to_string(), b.to_string()],
        }
    }

    pub fn edge(src: PatternPoint, dst: PatternPoint) -> Self {
        Constraint::Edge { src, dst }
    }

    pub fn vars(&self) -> Vec<&str> {
        match self {
            Constraint::Rel { args, .. } => args.iter().map(String::as_str).collect(),
            Constraint::Edge { src, dst } => vec![&src.var, &dst.var],
            Constraint::Absent(p) => vec![&p.var],
        }
    }
}

impl ThreatPattern {
    pub fn var(&self, name: &str) -> Option<&PatternVar> {
        self.vars.iter().find(|v| v.name == name)
    }

    pub fn roles(&self) -> impl Iterator<Item = &str> {
        self.vars
            .iter()
            .filter(|v| matches!(v.sort, VarSort::Instr(_)))
            .map(|v| v.name.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binding {
    /// An instruction and its access node.
    Instr { id: InstrId, node: usize },
    /// A ViCL by its create and expire nodes.
    Vicl { create: usize, expire: usize },
}

/// One placement of a pattern in a graph. Unbound optional variables are
/// missing from the map.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Embedding {
    pub bindings: BTreeMap<String, Binding>,
}

impl Embedding {
    pub fn instr(&self, role: &str) -> Option<InstrId> {
        match self.bindings.get(role)? {
            Binding::Instr { id, .. } => Some(*id),
            Binding::Vicl { .. } => None,
        }
    }

    /// Instruction roles, as stored on a litmus program.
    pub fn roles(&self) -> BTreeMap<String, InstrId> {
        self.bindings
            .iter()
            .filter_map(|(k, b)| match b {
                Binding::Instr { id, .. } => Some((k.clone(), *id)),
                Binding::Vicl { .. } => None,
            })
            .collect()
    }
}
