use super::*;
use crate::litmus::{LitmusProgram, Opcode};

/// Kahn order of the nodes, or `None` when the edges contain a cycle.
pub(crate) fn topo_order(g: &UhbGraph) -> Option<Vec<usize>> {
    let n = g.nodes.len();
    let succ = g.successors();
    let mut indeg = vec![0usize; n];
    for s in &succ {
        for &v in s {
            indeg[v] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..n).rev().filter(|&v| indeg[v] == 0).collect();
    let mut out = Vec::with_capacity(n);
    while let Some(u) = ready.pop() {
        out.push(u);
        for &v in &succ[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.push(v);
            }
        }
    }
    (out.len() == n).then_some(out)
}

pub fn check_acyclic(g: &UhbGraph) -> bool {
    topo_order(g).is_some()
}

/// Single writer, multiple readers: the lifetime of every line holding a
/// committed write is disjoint from every other core's line of the same
/// address.
pub fn check_swmr(g: &UhbGraph) -> Result<(), String> {
    let r = g.reachability();
    for w in g.vicls.iter().filter(|v| v.kind == ViclKind::WriteValue) {
        for v in &g.vicls {
            if v.core == w.core || v.paddr != w.paddr {
                continue;
            }
            let disjoint = r.hb(w.expire, v.create) || r.hb(v.expire, w.create);
            if !disjoint {
                return Err(format!(
                    "{} overlaps {}",
                    g.nodes[w.create], g.nodes[v.create]
                ));
            }
        }
    }
    Ok(())
}

/// Data-value check: each read's source holds the value of the latest
/// committed writes that happen before the read, or the initial value when
/// there are none.
pub fn check_dv(g: &UhbGraph, prog: &LitmusProgram) -> Result<(), String> {
    let r = g.reachability();
    for &(read, src) in &g.sourcing {
        if prog.instr(read).opcode != Opcode::Read {
            return Err(format!("{read} is sourced but is not a read"));
        }
        let Some(paddr) = prog.instr_paddr(read) else {
            return Err(format!("{read} has no address"));
        };
        let Some(source) = g.vicl_by_create(src) else {
            return Err(format!("{read} is sourced from a non-ViCL node"));
        };
        // The read's access stage is the stage node its source points at.
        let access = g.edges.iter().find_map(|e| {
            let hit = e.src == src && matches!(g.nodes[e.dst], UhbNode::Stage { instr, .. } if instr == read);
            hit.then_some(e.dst)
        });
        let Some(access) = access else {
            return Err(format!("{read} has no access node"));
        };
        if !r.hb(src, access) {
            return Err(format!("{read} does not follow its source"));
        }
        let before: Vec<&Vicl> = g
            .vicls
            .iter()
            .filter(|v| v.kind == ViclKind::WriteValue && v.paddr == paddr && r.hb(v.create, access))
            .collect();
        let latest: Vec<&&Vicl> = before
            .iter()
            .filter(|v| !before.iter().any(|u| r.hb(v.create, u.create)))
            .collect();
        let ok = if latest.is_empty() {
            source.value == prog.initial_value(paddr)
        } else {
            latest.iter().all(|v| v.value == source.value)
        };
        if !ok {
            return Err(format!("{read} reads {} but a later value is visible", source.value));
        }
    }
    Ok(())
}

/// Every ViCL has matching create and expire nodes joined by an edge.
pub fn check_vicl_pairing(g: &UhbGraph) -> Result<(), String> {
    for v in &g.vicls {
        let (UhbNode::ViclCreate { cache, core, paddr, value, instance }, UhbNode::ViclExpire {
            cache: c2,
            core: k2,
            paddr: p2,
            value: v2,
            instance: i2,
        }) = (&g.nodes[v.create], &g.nodes[v.expire])
        else {
            return Err(format!("ViCL at node {} is not a create/expire pair", v.create));
        };
        if (cache, core, paddr, value, instance) != (c2, k2, p2, v2, i2) {
            return Err(format!("{} is paired with {}", g.nodes[v.create], g.nodes[v.expire]));
        }
        if !g.has_edge(v.create, v.expire) {
            return Err(format!("{} lacks its lifetime edge", g.nodes[v.create]));
        }
    }
    let creates = g.nodes.iter().filter(|n| matches!(n, UhbNode::ViclCreate { .. })).count();
    let expires = g.nodes.iter().filter(|n| matches!(n, UhbNode::ViclExpire { .. })).count();
    if creates != g.vicls.len() || expires != g.vicls.len() {
        return Err("unpaired ViCL node".into());
    }
    Ok(())
}
