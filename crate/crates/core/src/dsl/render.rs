use std::fmt::Write;

use super::*;

/// Canonical text form. Axioms are emitted sorted by name.
pub fn render_spec(spec: &MicroarchSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "machine {}", spec.name);
    let _ = writeln!(out, "cores {}", spec.cores);
    let _ = writeln!(out, "stages {}", spec.stages.join(" "));
    let _ = writeln!(out, "access {}", spec.access_stage);
    for c in &spec.cache_levels {
        let _ = write!(
            out,
            "cache {} {} sets {}",
            c.level_id,
            if c.private_to_core { "private" } else { "shared" },
            c.num_sets
        );
        if c.inclusive {
            out.push_str(" inclusive");
        }
        out.push('\n');
    }
    match spec.coherence.kind {
        CoherenceKind::None => out.push_str("coherence none\n"),
        CoherenceKind::InvalidationBased => {
            out.push_str("coherence invalidation");
            if spec.coherence.speculative_write_requests_visible {
                out.push_str(" speculative_writes");
            }
            out.push('\n');
        }
    }
    let _ = writeln!(out, "write_allocate {}", spec.write_allocate);
    let _ = writeln!(out, "flush_instruction {}", spec.has_flush_instruction);
    let s = spec.speculation;
    let mut kinds = Vec::new();
    if s.allows_speculative_loads_past_permission_check {
        kinds.push("permission");
    }
    if s.allows_branch_misprediction {
        kinds.push("branch");
    }
    if s.allows_speculative_flush {
        kinds.push("flush");
    }
    if kinds.is_empty() {
        kinds.push("none");
    }
    let _ = writeln!(out, "speculate {}", kinds.join(" "));
    let mut axioms: Vec<&Axiom> = spec.axioms.iter().collect();
    axioms.sort_by(|a, b| a.name.cmp(&b.name));
    for ax in axioms {
        out.push_str(&render_axiom(ax));
        out.push('\n');
    }
    out
}

pub(crate) fn render_axiom(ax: &Axiom) -> String {
    let mut out = format!("axiom {}: forall {}", ax.name, ax.vars.join(" "));
    if !ax.preds.is_empty() {
        let preds: Vec<String> = ax
            .preds
            .iter()
            .map(|p| {
                format!(
                    "{}{}({})",
                    if p.negated { "!" } else { "" },
                    p.kind.keyword(),
                    p.args.join(", ")
                )
            })
            .collect();
        out.push_str(": ");
        out.push_str(&preds.join(" & "));
    }
    out.push_str(" =>");
    let multi = ax.body.len() > 1;
    let disjuncts: Vec<String> = ax
        .body
        .iter()
        .map(|conj| {
            let edges: Vec<String> = conj
                .iter()
                .map(|e| format!("{} -> {}", node(&e.src), node(&e.dst)))
                .collect();
            let joined = edges.join(" & ");
            if multi {
                format!("({joined})")
            } else {
                joined
            }
        })
        .collect();
    if multi {
        out.push_str("\n    ");
        out.push_str(&disjuncts.join("\n  | "));
    } else {
        out.push(' ');
        out.push_str(&disjuncts[0]);
    }
    out
}

fn node(n: &NodeTemplate) -> String {
    let point = match &n.point {
        NodePoint::Stage(s) => s.clone(),
        NodePoint::Create(None) => "create".into(),
        NodePoint::Create(Some(l)) => format!("create({l})"),
        NodePoint::Expire(None) => "expire".into(),
        NodePoint::Expire(Some(l)) => format!("expire({l})"),
        NodePoint::Send => "send".into(),
        NodePoint::Flush => "flush".into(),
    };
    format!("{}.{}", n.var, point)
}
