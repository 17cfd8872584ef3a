use std::collections::BTreeMap;

use super::*;

/// Symbolic name of the `i`-th virtual address: `a`, `b`, ..., `z`, `v26`, ...
pub(crate) fn vaddr_name(i: usize) -> String {
    if i < 26 {
        ((b'a' + i as u8) as char).to_string()
    } else {
        format!("v{i}")
    }
}

pub(crate) fn paddr_name(i: usize) -> String {
    format!("p{i}")
}

/// Renames addresses, sets and threads to the least form under the derived
/// ordering, and drops map and permission entries no instruction exercises.
///
/// Isomorphic programs canonicalize to equal values.
pub fn canonicalize(prog: &LitmusProgram) -> LitmusProgram {
    let n = prog.threads.len();
    let mut best: Option<LitmusProgram> = None;
    for perm in permutations(n) {
        let cand = relabel(prog, &perm);
        if best.as_ref().is_none_or(|b| cand < *b) {
            best = Some(cand);
        }
    }
    best.unwrap_or_else(|| prog.clone())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// `order[k]` is the old index of the thread placed at position `k`.
fn relabel(prog: &LitmusProgram, order: &[usize]) -> LitmusProgram {
    let mut vnames: BTreeMap<String, String> = BTreeMap::new();
    let mut pnames: BTreeMap<String, String> = BTreeMap::new();
    let mut snames: BTreeMap<usize, usize> = BTreeMap::new();
    for &t in order {
        for ins in &prog.threads[t].instructions {
            let Some(v) = &ins.vaddr else { continue };
            if vnames.contains_key(v) {
                continue;
            }
            vnames.insert(v.clone(), vaddr_name(vnames.len()));
            if let Some(e) = prog.address_map.get(v) {
                if !pnames.contains_key(&e.paddr) {
                    pnames.insert(e.paddr.clone(), paddr_name(pnames.len()));
                }
                if !snames.contains_key(&e.set) {
                    snames.insert(e.set, snames.len());
                }
            }
        }
    }
    let threads: Vec<Thread> = order
        .iter()
        .enumerate()
        .map(|(core, &t)| {
            let th = &prog.threads[t];
            Thread {
                actor: th.actor,
                core,
                instructions: th
                    .instructions
                    .iter()
                    .map(|ins| Instruction {
                        vaddr: ins.vaddr.as_ref().map(|v| vnames.get(v).cloned().unwrap_or_else(|| v.clone())),
                        ..ins.clone()
                    })
                    .collect(),
            }
        })
        .collect();
    let address_map = prog
        .address_map
        .iter()
        .filter_map(|(v, e)| {
            let nv = vnames.get(v)?;
            Some((
                nv.clone(),
                AddrEntry {
                    paddr: pnames[&e.paddr].clone(),
                    set: snames[&e.set],
                },
            ))
        })
        .collect();
    let mut permissions: Vec<PermissionEntry> = prog
        .permissions
        .iter()
        .filter_map(|p| {
            let np = pnames.get(&p.paddr)?;
            let exercised = |op: Opcode| {
                prog.threads.iter().any(|th| {
                    th.actor == p.actor
                        && th.instructions.iter().any(|i| {
                            i.opcode == op
                                && i.vaddr.as_deref().and_then(|v| prog.paddr(v)) == Some(p.paddr.as_str())
                        })
                })
            };
            let read = p.read || !exercised(Opcode::Read);
            let write = p.write || !exercised(Opcode::Write);
            if read && write {
                return None;
            }
            Some(PermissionEntry {
                actor: p.actor,
                paddr: np.clone(),
                read,
                write,
            })
        })
        .collect();
    permissions.sort();
    let initial_values = pnames
        .iter()
        .map(|(old, new)| (new.clone(), prog.initial_value(old)))
        .collect();
    let pos: BTreeMap<usize, usize> = order.iter().enumerate().map(|(k, &t)| (t, k)).collect();
    let roles = prog
        .roles
        .iter()
        .map(|(r, id)| (r.clone(), InstrId::new(pos.get(&id.thread).copied().unwrap_or(id.thread), id.index)))
        .collect();
    LitmusProgram {
        threads,
        address_map,
        permissions,
        initial_values,
        roles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_relabel_in_first_use_order() {
        let p = LitmusProgram::build(
            vec![(Actor::Attacker, vec![Instruction::read("y"), Instruction::write("x")])],
            &[("x", "q", 1), ("y", "r", 1)],
        );
        let c = canonicalize(&p);
        let vs: Vec<&str> = c.threads[0]
            .instructions
            .iter()
            .map(|i| i.vaddr.as_deref().unwrap())
            .collect();
        assert_eq!(vs, ["a", "b"]);
        assert_eq!(c.address_map["a"], AddrEntry { paddr: "p0".into(), set: 0 });
        assert_eq!(c.address_map["b"], AddrEntry { paddr: "p1".into(), set: 0 });
    }

    #[test]
    fn thread_order_is_normalized() {
        let t1 = (Actor::Attacker, vec![Instruction::read("a")]);
        let t2 = (Actor::Victim, vec![Instruction::write("b")]);
        let map = [("a", "p0", 0), ("b", "p1", 1)];
        let p = LitmusProgram::build(vec![t1.clone(), t2.clone()], &map);
        let q = LitmusProgram::build(vec![t2, t1], &map);
        assert_eq!(canonicalize(&p), canonicalize(&q));
    }

    #[test]
    fn unexercised_permissions_dropped() {
        let p = LitmusProgram::build(vec![(Actor::Attacker, vec![Instruction::read("a")])], &[("a", "p0", 0)])
            .deny(Actor::Attacker, "p0", false, true);
        assert!(canonicalize(&p).permissions.is_empty());
    }
}
