use std::fmt::Write;

use super::*;

/// Line-oriented listing, used for summaries and as the tie-break key when
/// sorting results.
pub fn render_program(prog: &LitmusProgram) -> String {
    let mut out = String::new();
    for (t, th) in prog.threads.iter().enumerate() {
        let _ = writeln!(out, "thread {t} {} core {}", th.actor.as_str(), th.core);
        for (i, ins) in th.instructions.iter().enumerate() {
            let _ = write!(out, "  {i}: {}", ins.opcode.as_str());
            if let Some(v) = &ins.vaddr {
                let _ = write!(out, " {v}");
            }
            if let Some(w) = ins.written_value {
                let _ = write!(out, " = {w}");
            }
            if let Some(d) = ins.dep_on {
                let _ = write!(out, " dep {d}");
            }
            if prog.is_illegal(InstrId::new(t, i)) {
                out.push_str(" illegal");
            }
            if ins.squashed {
                let _ = write!(out, " squashed under {}", ins.speculative_under.unwrap_or(i));
            }
            out.push('\n');
        }
    }
    for (v, e) in &prog.address_map {
        let _ = writeln!(out, "map {v} -> {} set {}", e.paddr, e.set);
    }
    for p in &prog.permissions {
        let mut denied = Vec::new();
        if !p.read {
            denied.push("read");
        }
        if !p.write {
            denied.push("write");
        }
        let _ = writeln!(out, "deny {} {} {}", p.actor.as_str(), p.paddr, denied.join(" "));
    }
    for (p, v) in &prog.initial_values {
        let _ = writeln!(out, "init {p} = {v}");
    }
    for (r, id) in &prog.roles {
        let _ = writeln!(out, "role {r} = {id}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listing_marks_squash_and_illegal() {
        let p = LitmusProgram::build(
            vec![(
                Actor::Attacker,
                vec![Instruction::read("b").under(0), Instruction::read("a").dep(0).under(0)],
            )],
            &[("a", "p0", 0), ("b", "p1", 0)],
        )
        .deny(Actor::Attacker, "p1", true, false);
        let text = render_program(&p);
        assert!(text.contains("0: Read b illegal squashed under 0\n"), "{text}");
        assert!(text.contains("1: Read a dep 0 squashed under 0\n"), "{text}");
        assert!(text.contains("deny attacker p1 read\n"), "{text}");
    }
}
