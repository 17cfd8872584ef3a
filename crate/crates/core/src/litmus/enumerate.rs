use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::canon::{paddr_name, vaddr_name};
use super::*;
use crate::dsl::MicroarchSpec;

/// Size limits of the candidate space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisBounds {
    pub max_instructions: usize,
    pub max_threads: usize,
    pub max_vaddrs: usize,
    pub max_paddrs: usize,
}

impl SynthesisBounds {
    pub fn new(max_instructions: usize, max_threads: usize, max_vaddrs: usize, max_paddrs: usize) -> Self {
        SynthesisBounds {
            max_instructions,
            max_threads,
            max_vaddrs,
            max_paddrs,
        }
    }
}

impl Default for SynthesisBounds {
    fn default() -> Self {
        SynthesisBounds::new(6, 2, 2, 2)
    }
}

const NONE: u8 = u8::MAX;

/// Instruction in the enumerator's packed form. Addresses are vaddr indices;
/// physical address `i` backs vaddr `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct CInstr {
    pub op: Opcode,
    pub addr: u8,
    pub dep: u8,
    pub spec: u8,
    pub illegal: bool,
}

impl CInstr {
    pub fn squashed(&self) -> bool {
        self.spec != NONE
    }
}

/// A candidate with first-use address naming.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct Compact {
    pub threads: Vec<(Actor, Vec<CInstr>)>,
    /// Cache set of each vaddr.
    pub sets: Vec<u8>,
}

impl Compact {
    pub fn to_program(&self) -> LitmusProgram {
        let n = self.sets.len();
        let mut deny: BTreeMap<usize, (bool, bool)> = BTreeMap::new();
        let threads = self
            .threads
            .iter()
            .enumerate()
            .map(|(core, (actor, instrs))| Thread {
                actor: *actor,
                core,
                instructions: instrs
                    .iter()
                    .map(|c| {
                        if c.illegal {
                            let e = deny.entry(c.addr as usize).or_default();
                            match c.op {
                                Opcode::Read => e.0 = true,
                                _ => e.1 = true,
                            }
                        }
                        Instruction {
                            opcode: c.op,
                            vaddr: c.op.is_access().then(|| vaddr_name(c.addr as usize)),
                            written_value: (c.op == Opcode::Write).then_some(1),
                            dep_on: (c.dep != NONE).then_some(c.dep as usize),
                            speculative_under: (c.spec != NONE).then_some(c.spec as usize),
                            squashed: c.spec != NONE,
                        }
                    })
                    .collect(),
            })
            .collect();
        let address_map = (0..n)
            .map(|i| {
                (
                    vaddr_name(i),
                    AddrEntry {
                        paddr: paddr_name(i),
                        set: self.sets[i] as usize,
                    },
                )
            })
            .collect();
        let permissions = deny
            .into_iter()
            .map(|(i, (r, w))| PermissionEntry {
                actor: Actor::Attacker,
                paddr: paddr_name(i),
                read: !r,
                write: !w,
            })
            .collect();
        LitmusProgram {
            threads,
            address_map,
            permissions,
            initial_values: (0..n).map(|i| (paddr_name(i), 0)).collect(),
            roles: BTreeMap::new(),
        }
    }

    /// Threads reordered by `order` with addresses and sets renamed by first use.
    fn relabel(&self, order: &[usize]) -> Compact {
        let mut vmap = [NONE; 256];
        let mut next = 0u8;
        let threads: Vec<(Actor, Vec<CInstr>)> = order
            .iter()
            .map(|&t| {
                let (actor, instrs) = &self.threads[t];
                let instrs = instrs
                    .iter()
                    .map(|c| {
                        let mut c = *c;
                        if c.op.is_access() {
                            let slot = &mut vmap[c.addr as usize];
                            if *slot == NONE {
                                *slot = next;
                                next += 1;
                            }
                            c.addr = *slot;
                        }
                        c
                    })
                    .collect();
                (*actor, instrs)
            })
            .collect();
        let mut smap = [NONE; 256];
        let mut snext = 0u8;
        let mut sets = vec![0u8; self.sets.len()];
        let mut inv = vec![0usize; self.sets.len()];
        for (old, &new) in vmap.iter().enumerate().take(self.sets.len()) {
            if new != NONE {
                inv[new as usize] = old;
            }
        }
        for (new, &old) in inv.iter().enumerate() {
            let s = &mut smap[self.sets[old] as usize];
            if *s == NONE {
                *s = snext;
                snext += 1;
            }
            sets[new] = *s;
        }
        Compact { threads, sets }
    }

    /// True when no other thread order yields a smaller labeling.
    fn is_canonical(&self) -> bool {
        let n = self.threads.len();
        if n < 2 {
            return true;
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut ok = true;
        permute(&mut order, 0, &mut |o| {
            if ok && o.iter().enumerate().any(|(i, &x)| i != x) && self.relabel(o) < *self {
                ok = false;
            }
        });
        ok
    }
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Window {
    None,
    /// Mispredicted branch at `s` guarding `s+1..=e`.
    Branch(usize, usize),
    /// Faulting access at `s` squashing itself and `s+1..=e`.
    Fault(usize, usize),
}

struct Gen<'a> {
    spec: &'a MicroarchSpec,
    max_vaddrs: usize,
    num_sets: usize,
    lengths: Vec<usize>,
    actors: Vec<Actor>,
    threads: Vec<(Actor, Vec<CInstr>)>,
    /// Attacker legality per (vaddr, is_write): 0 unknown, 1 legal, 2 illegal.
    legality: Vec<[u8; 2]>,
    used: usize,
}

/// Visits every canonical candidate within `bounds` in a fixed order.
pub(crate) fn visit_compact(spec: &MicroarchSpec, bounds: &SynthesisBounds, f: &mut dyn FnMut(&Compact)) {
    let max_vaddrs = bounds.max_vaddrs.min(bounds.max_paddrs).min(64);
    let max_threads = bounds.max_threads.min(spec.cores);
    let num_sets = spec.l1().map(|c| c.num_sets).unwrap_or(1).max(1);
    for n in 1..=bounds.max_instructions {
        for t in 1..=max_threads.min(n) {
            for lengths in compositions(n, t) {
                for mask in 0..(1u32 << t) - 1 {
                    let actors: Vec<Actor> = (0..t)
                        .map(|i| if mask >> i & 1 == 0 { Actor::Attacker } else { Actor::Victim })
                        .collect();
                    let mut g = Gen {
                        spec,
                        max_vaddrs,
                        num_sets,
                        lengths: lengths.clone(),
                        actors,
                        threads: Vec::new(),
                        legality: vec![[0; 2]; max_vaddrs],
                        used: 0,
                    };
                    g.thread(f);
                }
            }
        }
    }
}

fn compositions(n: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 1..=n.saturating_sub(parts - 1) {
        for mut rest in compositions(n - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

impl Gen<'_> {
    fn thread(&mut self, f: &mut dyn FnMut(&Compact)) {
        let k = self.threads.len();
        if k == self.lengths.len() {
            self.sets(f);
            return;
        }
        let len = self.lengths[k];
        let actor = self.actors[k];
        let sp = self.spec.speculation;
        let mut windows = vec![Window::None];
        if actor == Actor::Attacker && sp.allows_branch_misprediction {
            for s in 0..len {
                for e in s + 1..len {
                    windows.push(Window::Branch(s, e));
                }
            }
        }
        if actor == Actor::Attacker && sp.allows_speculative_loads_past_permission_check {
            for s in 0..len {
                for e in s..len {
                    windows.push(Window::Fault(s, e));
                }
            }
        }
        for w in windows {
            self.threads.push((actor, Vec::with_capacity(len)));
            self.position(w, f);
            self.threads.pop();
        }
    }

    fn position(&mut self, w: Window, f: &mut dyn FnMut(&Compact)) {
        let k = self.threads.len() - 1;
        let i = self.threads[k].1.len();
        if i == self.lengths[k] {
            self.thread(f);
            return;
        }
        let actor = self.threads[k].0;
        let (source, in_window) = match w {
            Window::None => (false, None),
            Window::Branch(s, e) => (i == s, (i > s && i <= e).then_some(s)),
            Window::Fault(s, e) => (i == s, (i >= s && i <= e).then_some(s)),
        };
        let spec_idx = in_window.map(|s| s as u8).unwrap_or(NONE);
        if source && matches!(w, Window::Branch(..)) {
            self.push_emit(
                CInstr {
                    op: Opcode::Branch,
                    addr: 0,
                    dep: NONE,
                    spec: NONE,
                    illegal: false,
                },
                w,
                f,
            );
            return;
        }
        let squashed = in_window.is_some();
        let mut ops: Vec<(Opcode, bool)> = Vec::new();
        if source {
            ops.push((Opcode::Read, true));
            ops.push((Opcode::Write, true));
        } else {
            ops.push((Opcode::Read, false));
            ops.push((Opcode::Write, false));
            if self.spec.has_flush_instruction && (!squashed || self.spec.speculation.allows_speculative_flush) {
                ops.push((Opcode::Flush, false));
            }
            if squashed && matches!(w, Window::Branch(s, _) | Window::Fault(s, _) if i == s + 1) {
                ops.push((Opcode::Fence, false));
            }
        }
        for (op, illegal) in ops {
            if !op.is_access() {
                self.push_emit(
                    CInstr {
                        op,
                        addr: 0,
                        dep: NONE,
                        spec: spec_idx,
                        illegal: false,
                    },
                    w,
                    f,
                );
                continue;
            }
            let addr_limit = (self.used + 1).min(self.max_vaddrs);
            for addr in 0..addr_limit {
                let kind = usize::from(op == Opcode::Write);
                let fresh = addr == self.used;
                let mut saved = None;
                if actor == Actor::Attacker && op != Opcode::Flush {
                    let want = if illegal { 2 } else { 1 };
                    let cur = self.legality[addr][kind];
                    if cur != 0 && cur != want {
                        continue;
                    }
                    saved = Some(cur);
                    self.legality[addr][kind] = want;
                }
                if fresh {
                    self.used += 1;
                }
                let mut deps = vec![NONE];
                for (j, prev) in self.threads[k].1.iter().enumerate() {
                    if prev.op == Opcode::Read && squashed == prev.squashed() && (squashed || actor == Actor::Victim) {
                        deps.push(j as u8);
                    }
                }
                for dep in deps {
                    self.push_emit(
                        CInstr {
                            op,
                            addr: addr as u8,
                            dep,
                            spec: spec_idx,
                            illegal,
                        },
                        w,
                        f,
                    );
                }
                if fresh {
                    self.used -= 1;
                }
                if let Some(cur) = saved {
                    self.legality[addr][kind] = cur;
                }
            }
        }
    }

    fn push_emit(&mut self, c: CInstr, w: Window, f: &mut dyn FnMut(&Compact)) {
        let k = self.threads.len() - 1;
        self.threads[k].1.push(c);
        self.position(w, f);
        self.threads[k].1.pop();
    }

    fn sets(&mut self, f: &mut dyn FnMut(&Compact)) {
        let mut sets = vec![0u8; self.used];
        self.assign_sets(&mut sets, 1, 1, f);
    }

    fn assign_sets(&mut self, sets: &mut Vec<u8>, i: usize, distinct: usize, f: &mut dyn FnMut(&Compact)) {
        if i >= sets.len() {
            let c = Compact {
                threads: self.threads.clone(),
                sets: sets.clone(),
            };
            if c.is_canonical() {
                f(&c);
            }
            return;
        }
        for s in 0..=distinct.min(self.num_sets - 1) {
            sets[i] = s as u8;
            let d = if s == distinct { distinct + 1 } else { distinct };
            self.assign_sets(sets, i + 1, d, f);
        }
    }
}

/// Calls `f` on every canonical well-formed program within `bounds`, in a
/// fixed order. Each isomorphism class is visited exactly once.
pub fn for_each_candidate(spec: &MicroarchSpec, bounds: &SynthesisBounds, mut f: impl FnMut(LitmusProgram)) {
    visit_compact(spec, bounds, &mut |c| f(canonicalize(&c.to_program())));
}

/// Visits the candidates whose position in enumeration order is congruent to
/// `shard` modulo `shards`. The shards of one bound partition the space.
pub fn for_each_candidate_sharded(
    spec: &MicroarchSpec,
    bounds: &SynthesisBounds,
    shard: usize,
    shards: usize,
    mut f: impl FnMut(LitmusProgram),
) {
    let shards = shards.max(1);
    let mut idx = 0usize;
    visit_compact(spec, bounds, &mut |c| {
        if idx % shards == shard {
            f(canonicalize(&c.to_program()));
        }
        idx += 1;
    });
}

/// Collects [`for_each_candidate`]. Intended for small bounds.
pub fn enumerate_candidates(spec: &MicroarchSpec, bounds: &SynthesisBounds) -> Vec<LitmusProgram> {
    let mut out = Vec::new();
    for_each_candidate(spec, bounds, |p| out.push(p));
    out
}

pub fn count_candidates(spec: &MicroarchSpec, bounds: &SynthesisBounds) -> u64 {
    let mut n = 0u64;
    visit_compact(spec, bounds, &mut |_| n += 1);
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{builtin_spec, Builtin};

    #[test]
    fn compositions_cover() {
        assert_eq!(compositions(4, 2), vec![vec![1, 3], vec![2, 2], vec![3, 1]]);
        assert_eq!(compositions(3, 3), vec![vec![1, 1, 1]]);
    }

    #[test]
    fn relabel_identity_is_noop() {
        let spec = builtin_spec(Builtin::TwoCoreInvalidation);
        visit_compact(&spec, &SynthesisBounds::new(3, 2, 2, 2), &mut |c| {
            let id: Vec<usize> = (0..c.threads.len()).collect();
            assert_eq!(&c.relabel(&id), c);
        });
    }
}
