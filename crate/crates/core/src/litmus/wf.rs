use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::*;
use crate::dsl::MicroarchSpec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WfDiagnostic {
    /// Stable kebab-case identifier, e.g. `flush-unavailable`.
    pub code: &'static str,
    pub instr: Option<InstrId>,
    pub message: String,
}

impl fmt::Display for WfDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.instr {
            Some(id) => write!(f, "{}: {} ({})", id, self.message, self.code),
            None => write!(f, "{} ({})", self.message, self.code),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WfReport {
    pub diagnostics: Vec<WfDiagnostic>,
}

impl WfReport {
    pub fn ok(&self) -> bool {
        self.diagnostics.is_empty()
    }

    pub fn has(&self, code: &str) -> bool {
        self.diagnostics.iter().any(|d| d.code == code)
    }

    fn push(&mut self, code: &'static str, instr: Option<InstrId>, message: impl Into<String>) {
        self.diagnostics.push(WfDiagnostic {
            code,
            instr,
            message: message.into(),
        });
    }
}

/// Checks the structural rules of the litmus language against `spec`.
///
/// Beyond the type invariants, the language fixes a few shapes so the search
/// space stays small:
///
/// - threads run on distinct cores and at least one belongs to the attacker;
/// - distinct virtual addresses never alias, and only the attacker can lack
///   permissions;
/// - values are 0 initially and every write stores 1;
/// - each attacker thread has at most one speculation window, which directly
///   follows its source; victim code never runs speculatively;
/// - the only access without permission is a window's faulting source;
/// - a fence may only appear as the first instruction of a window;
/// - attacker dependencies link squashed instructions only, victim
///   dependencies link committed ones.
pub fn well_formed(prog: &LitmusProgram, spec: &MicroarchSpec) -> WfReport {
    let mut r = WfReport::default();
    if prog.threads.is_empty() {
        r.push("no-threads", None, "program has no threads");
    } else if prog.threads.iter().all(|t| t.actor == Actor::Victim) {
        r.push("no-attacker", None, "program has no attacker thread");
    }
    let mut cores = BTreeSet::new();
    for (t, th) in prog.threads.iter().enumerate() {
        if th.instructions.is_empty() {
            r.push("empty-thread", None, format!("thread {t} has no instructions"));
        }
        if th.core >= spec.cores {
            r.push(
                "core-out-of-range",
                None,
                format!("thread {t} runs on core {} but the machine has {}", th.core, spec.cores),
            );
        }
        if !cores.insert(th.core) {
            r.push("shared-core", None, format!("two threads share core {}", th.core));
        }
    }
    check_addresses(prog, spec, &mut r);
    for (t, th) in prog.threads.iter().enumerate() {
        for (i, ins) in th.instructions.iter().enumerate() {
            check_instruction(prog, spec, InstrId::new(t, i), ins, &mut r);
        }
        check_window(prog, t, &mut r);
    }
    for (role, id) in &prog.roles {
        if id.thread >= prog.threads.len() || id.index >= prog.threads[id.thread].instructions.len() {
            r.push("dangling-role", None, format!("role `{role}` names missing instruction {id}"));
        }
    }
    r
}

fn check_addresses(prog: &LitmusProgram, spec: &MicroarchSpec, r: &mut WfReport) {
    let sets = spec.l1().map(|c| c.num_sets).unwrap_or(1);
    let mut by_paddr: BTreeMap<&str, &str> = BTreeMap::new();
    for (v, e) in &prog.address_map {
        if e.set >= sets {
            r.push(
                "set-out-of-range",
                None,
                format!("`{v}` maps to set {} but the cache has {sets}", e.set),
            );
        }
        if let Some(other) = by_paddr.insert(&e.paddr, v) {
            r.push(
                "aliased-vaddr",
                None,
                format!("`{other}` and `{v}` both map to `{}`", e.paddr),
            );
        }
    }
    for (p, v) in &prog.initial_values {
        if *v != 0 {
            r.push("initial-value", None, format!("`{p}` starts at {v}, expected 0"));
        }
    }
    for p in &prog.permissions {
        if p.actor == Actor::Victim && !(p.read && p.write) {
            r.push(
                "victim-denied",
                None,
                format!("victim is denied access to `{}`", p.paddr),
            );
        }
    }
}

fn check_instruction(
    prog: &LitmusProgram,
    spec: &MicroarchSpec,
    id: InstrId,
    ins: &Instruction,
    r: &mut WfReport,
) {
    let th = &prog.threads[id.thread];
    let here = Some(id);
    if ins.opcode.is_access() {
        match &ins.vaddr {
            None => r.push("missing-vaddr", here, "access without an address"),
            Some(v) if !prog.address_map.contains_key(v) => {
                r.push("unmapped-vaddr", here, format!("`{v}` is not in the address map"))
            }
            _ => {}
        }
    } else if ins.vaddr.is_some() {
        r.push("stray-vaddr", here, format!("{} takes no address", ins.opcode.as_str()));
    }
    match (ins.opcode, ins.written_value) {
        (Opcode::Write, Some(1)) => {}
        (Opcode::Write, _) => r.push("written-value", here, "writes store the value 1"),
        (_, Some(_)) => r.push("written-value", here, "only writes carry a value"),
        _ => {}
    }
    if ins.opcode == Opcode::Flush {
        if !spec.has_flush_instruction {
            r.push("flush-unavailable", here, "the machine has no flush instruction");
        } else if ins.squashed && !spec.speculation.allows_speculative_flush {
            r.push("speculative-flush-unavailable", here, "flushes cannot execute speculatively");
        }
    }
    if ins.opcode == Opcode::Branch && !spec.speculation.allows_branch_misprediction {
        r.push("branch-unavailable", here, "the machine does not mispredict branches");
    }
    if let Some(d) = ins.dep_on {
        if !ins.opcode.is_access() {
            r.push("dep-opcode", here, "only accesses take address dependencies");
        }
        if d >= id.index {
            r.push("dep-order", here, "dependency on a later instruction");
        } else {
            let src = &th.instructions[d];
            if src.opcode != Opcode::Read {
                r.push("dep-target", here, "dependency on a non-read");
            }
            if src.squashed != ins.squashed {
                r.push("dep-squashed", here, "a dependency crosses the edge of a speculation window");
            }
        }
        if th.actor == Actor::Attacker && !ins.squashed {
            r.push("dep-committed", here, "committed attacker code carries no address dependencies");
        }
    }
    if ins.opcode == Opcode::Fence {
        let first = ins.speculative_under.is_some_and(|s| s + 1 == id.index);
        if !first {
            r.push("fence-position", here, "a fence must open a speculation window");
        }
    }
    if th.actor == Actor::Victim && ins.speculative_under.is_some() {
        r.push("victim-speculation", here, "victim code never runs speculatively");
    }
    if ins.squashed != ins.speculative_under.is_some() {
        r.push(
            "squash-source",
            here,
            "an instruction is squashed exactly when it has a speculation source",
        );
    }
    if prog.is_illegal(id) {
        if th.actor == Actor::Victim {
            r.push("victim-denied", here, "victim accesses are always permitted");
        }
        if !ins.squashed {
            r.push("illegal-committed", here, "an access without permission cannot commit");
        } else if ins.speculative_under != Some(id.index) {
            r.push("illegal-in-window", here, "only a window's faulting source may lack permission");
        }
        if !spec.speculation.allows_speculative_loads_past_permission_check {
            r.push(
                "permission-speculation-unavailable",
                here,
                "the machine checks permissions before accessing the cache",
            );
        }
    }
}

fn check_window(prog: &LitmusProgram, t: usize, r: &mut WfReport) {
    let th = &prog.threads[t];
    let sources: BTreeSet<usize> = th
        .instructions
        .iter()
        .filter_map(|i| i.speculative_under)
        .collect();
    if sources.len() > 1 {
        r.push("multiple-windows", None, format!("thread {t} has more than one speculation window"));
    }
    for (i, ins) in th.instructions.iter().enumerate() {
        if ins.opcode == Opcode::Branch {
            let guards = th
                .instructions
                .iter()
                .enumerate()
                .any(|(j, x)| j != i && x.speculative_under == Some(i));
            if !guards {
                r.push("branch-unguarded", Some(InstrId::new(t, i)), "a mispredicted branch guards nothing");
            }
            if ins.speculative_under.is_some() {
                r.push("nested-window", Some(InstrId::new(t, i)), "branch inside a speculation window");
            }
        }
    }
    for &s in &sources {
        let id = InstrId::new(t, s);
        let Some(src) = th.instructions.get(s) else {
            r.push("window-source", None, format!("thread {t} window source {s} does not exist"));
            continue;
        };
        let faulting = src.opcode.is_access() && prog.is_illegal(id);
        match src.opcode {
            Opcode::Branch => {}
            _ if faulting => {
                if src.speculative_under != Some(s) {
                    r.push("window-source", Some(id), "a faulting access squashes itself");
                }
            }
            _ => r.push("window-source", Some(id), "windows open at a branch or a faulting access"),
        }
        let members: Vec<usize> = th
            .instructions
            .iter()
            .enumerate()
            .filter(|(j, x)| *j != s && x.speculative_under == Some(s))
            .map(|(j, _)| j)
            .collect();
        let contiguous = members.iter().enumerate().all(|(k, &j)| j == s + 1 + k);
        if !contiguous {
            r.push("window-contiguous", Some(id), "a speculation window must directly follow its source");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{builtin_spec, Builtin};

    fn one(instrs: Vec<Instruction>) -> LitmusProgram {
        LitmusProgram::build(vec![(Actor::Attacker, instrs)], &[("a", "p0", 0), ("b", "p1", 0)])
    }

    #[test]
    fn single_read_is_well_formed() {
        let spec = builtin_spec(Builtin::OooSingleCore);
        let p = LitmusProgram::build(vec![(Actor::Attacker, vec![Instruction::read("a")])], &[("a", "p0", 0)]);
        assert!(well_formed(&p, &spec).ok());
    }

    #[test]
    fn flush_needs_flush_instruction() {
        let mut spec = builtin_spec(Builtin::OooSingleCore);
        spec.has_flush_instruction = false;
        let r = well_formed(&one(vec![Instruction::flush("a")]), &spec);
        assert!(r.has("flush-unavailable"), "{r:?}");
    }

    #[test]
    fn dependency_on_later_instruction_rejected() {
        let spec = builtin_spec(Builtin::OooSingleCore);
        let p = one(vec![Instruction::read("a").dep(1), Instruction::read("b")]);
        let r = well_formed(&p, &spec);
        assert!(r.has("dep-order"));
    }

    #[test]
    fn meltdown_shape_is_well_formed() {
        let spec = builtin_spec(Builtin::OooSingleCore);
        let p = one(vec![
            Instruction::flush("a"),
            Instruction::read("b").under(1),
            Instruction::read("a").dep(1).under(1),
            Instruction::read("a"),
        ])
        .deny(Actor::Attacker, "p1", true, false);
        let r = well_formed(&p, &spec);
        assert!(r.ok(), "{r:?}");
    }

    #[test]
    fn committed_illegal_read_rejected() {
        let spec = builtin_spec(Builtin::OooSingleCore);
        let p = one(vec![Instruction::read("b")]).deny(Actor::Attacker, "p1", true, false);
        assert!(well_formed(&p, &spec).has("illegal-committed"));
    }

    #[test]
    fn split_window_rejected() {
        let spec = builtin_spec(Builtin::OooSingleCore);
        let p = one(vec![
            Instruction::branch(),
            Instruction::read("a").under(0),
            Instruction::read("b"),
            Instruction::read("a").under(0),
        ]);
        assert!(well_formed(&p, &spec).has("window-contiguous"));
    }

    #[test]
    fn unguarded_branch_rejected() {
        let spec = builtin_spec(Builtin::OooSingleCore);
        let p = one(vec![Instruction::read("a"), Instruction::branch()]);
        assert!(well_formed(&p, &spec).has("branch-unguarded"));
    }

    #[test]
    fn speculative_flush_needs_flag() {
        let spec = builtin_spec(Builtin::OooSingleCore);
        let p = one(vec![Instruction::branch(), Instruction::flush("a").under(0)]);
        assert!(well_formed(&p, &spec).has("speculative-flush-unavailable"));
    }
}
