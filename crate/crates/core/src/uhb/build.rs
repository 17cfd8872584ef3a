use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::*;
use crate::dsl::{Axiom, MicroarchSpec, NodePoint, NodeTemplate, PredKind, Predicate};
use crate::litmus::{LitmusProgram, Opcode};

/// All observable executions together with how many candidates were cut.
#[derive(Debug, Clone, Default)]
pub struct ExecutionReport {
    /// Distinct acyclic graphs in canonical order.
    pub graphs: Vec<UhbGraph>,
    /// Graphs built before deduplication and cycle checks.
    pub considered: usize,
    /// Graphs discarded because their happens-before relation is cyclic.
    pub cyclic: usize,
}

/// Every distinct acyclic execution of `prog` on `spec`, in canonical order.
pub fn enumerate_executions(spec: &MicroarchSpec, prog: &LitmusProgram) -> Vec<UhbGraph> {
    explore_executions(spec, prog).graphs
}

/// Builds one graph per interleaving of the cores' cache accesses and per
/// choice of axiom disjuncts, then keeps the distinct acyclic ones.
///
/// Within a core, accesses reach the cache in program order, squashed ones
/// included; the cache starts empty.
pub fn explore_executions(spec: &MicroarchSpec, prog: &LitmusProgram) -> ExecutionReport {
    let instances = instantiate(spec, prog);
    let seqs: Vec<Vec<InstrId>> = prog
        .threads
        .iter()
        .enumerate()
        .map(|(t, th)| {
            (0..th.instructions.len())
                .map(|i| InstrId::new(t, i))
                .filter(|&id| prog.instr(id).opcode.is_access())
                .collect()
        })
        .collect();
    let mut report = ExecutionReport::default();
    let mut seen: BTreeSet<UhbGraph> = BTreeSet::new();
    for_each_merge(&seqs, &mut |order| {
        let mut b = Builder::new(spec, prog);
        for &x in order {
            b.access(x);
        }
        let resolved: Vec<Vec<Vec<(usize, usize, &str)>>> =
            instances.iter().map(|inst| b.resolve(inst)).collect();
        let mut choice = vec![0usize; resolved.len()];
        loop {
            let mut edges = b.edges.clone();
            for (inst, &k) in resolved.iter().zip(&choice) {
                if let Some(disjunct) = inst.get(k) {
                    for &(s, d, label) in disjunct {
                        edges.push((s, d, label.to_string()));
                    }
                }
            }
            let g = b.finish(edges);
            report.considered += 1;
            if check::topo_order(&g).is_some() {
                seen.insert(g);
            } else {
                report.cyclic += 1;
            }
            if !advance(&mut choice, &resolved) {
                break;
            }
        }
    });
    report.graphs = seen.into_iter().collect();
    report
}

fn advance(choice: &mut [usize], resolved: &[Vec<Vec<(usize, usize, &str)>>]) -> bool {
    for (c, inst) in choice.iter_mut().zip(resolved) {
        if *c + 1 < inst.len() {
            *c += 1;
            return true;
        }
        *c = 0;
    }
    false
}

fn for_each_merge(seqs: &[Vec<InstrId>], f: &mut dyn FnMut(&[InstrId])) {
    fn go(seqs: &[Vec<InstrId>], pos: &mut [usize], out: &mut Vec<InstrId>, f: &mut dyn FnMut(&[InstrId])) {
        let mut any = false;
        for t in 0..seqs.len() {
            if pos[t] < seqs[t].len() {
                any = true;
                out.push(seqs[t][pos[t]]);
                pos[t] += 1;
                go(seqs, pos, out, f);
                pos[t] -= 1;
                out.pop();
            }
        }
        if !any {
            f(out);
        }
    }
    go(seqs, &mut vec![0; seqs.len()], &mut Vec::new(), f);
}

/// An axiom bound to concrete instructions.
struct Instance<'a> {
    axiom: &'a Axiom,
    binding: Vec<InstrId>,
}

fn instantiate<'a>(spec: &'a MicroarchSpec, prog: &LitmusProgram) -> Vec<Instance<'a>> {
    let ids: Vec<InstrId> = prog.ids().collect();
    let mut out = Vec::new();
    for ax in &spec.axioms {
        let k = ax.vars.len();
        let mut binding = Vec::with_capacity(k);
        bind(ax, prog, &ids, k, &mut binding, &mut out);
    }
    out
}

fn bind<'a>(
    ax: &'a Axiom,
    prog: &LitmusProgram,
    ids: &[InstrId],
    k: usize,
    binding: &mut Vec<InstrId>,
    out: &mut Vec<Instance<'a>>,
) {
    if binding.len() == k {
        let all = ax.preds.iter().all(|p| holds(p, ax, binding, prog));
        if all {
            out.push(Instance {
                axiom: ax,
                binding: binding.clone(),
            });
        }
        return;
    }
    for &id in ids {
        if binding.contains(&id) {
            continue;
        }
        binding.push(id);
        // Prune as soon as every argument of a predicate is bound.
        let ok = ax.preds.iter().all(|p| {
            let bound = p
                .args
                .iter()
                .all(|a| ax.vars.iter().position(|v| v == a).is_some_and(|i| i < binding.len()));
            !bound || holds(p, ax, binding, prog)
        });
        if ok {
            bind(ax, prog, ids, k, binding, out);
        }
        binding.pop();
    }
}

fn holds(p: &Predicate, ax: &Axiom, binding: &[InstrId], prog: &LitmusProgram) -> bool {
    let arg = |i: usize| {
        let idx = ax.vars.iter().position(|v| *v == p.args[i]).expect("validated variable");
        binding[idx]
    };
    let a = arg(0);
    let ia = prog.instr(a);
    let v = match p.kind {
        PredKind::Read => ia.opcode == Opcode::Read,
        PredKind::Write => ia.opcode == Opcode::Write,
        PredKind::Flush => ia.opcode == Opcode::Flush,
        PredKind::Fence => ia.opcode == Opcode::Fence,
        PredKind::Branch => ia.opcode == Opcode::Branch,
        PredKind::Access => ia.opcode.is_access(),
        PredKind::Squashed => ia.squashed,
        PredKind::Illegal => prog.is_illegal(a),
        PredKind::Po => {
            let b = arg(1);
            a.thread == b.thread && a.index < b.index
        }
        PredKind::Dep => {
            let b = arg(1);
            a.thread == b.thread && prog.instr(b).dep_on == Some(a.index)
        }
        PredKind::Spec => {
            let b = arg(1);
            a.thread == b.thread && prog.instr(b).speculative_under == Some(a.index)
        }
        PredKind::SameAddr => {
            let b = arg(1);
            let pa = prog.instr_paddr(a);
            pa.is_some() && pa == prog.instr_paddr(b)
        }
        PredKind::SameCore => prog.core(a) == prog.core(arg(1)),
    };
    v != p.negated
}

struct Line {
    paddr: String,
    vicl: usize,
    modified: bool,
}

struct TmpVicl {
    create: usize,
    expire: usize,
    core: usize,
    paddr: String,
    value: u8,
    kind: ViclKind,
    origin: InstrId,
    cause: Option<ExpireCause>,
}

struct Builder<'a> {
    spec: &'a MicroarchSpec,
    prog: &'a LitmusProgram,
    cache_name: String,
    nodes: Vec<UhbNode>,
    edges: Vec<(usize, usize, String)>,
    vicls: Vec<TmpVicl>,
    /// Per core: set index to resident line.
    cache: Vec<BTreeMap<usize, Line>>,
    /// Last expire or flush event per (core, paddr); the next create follows it.
    barrier: HashMap<(usize, String), usize>,
    mem_value: HashMap<String, u8>,
    mem_writer: HashMap<String, usize>,
    instances: HashMap<(usize, String), usize>,
    stage: HashMap<(InstrId, usize), usize>,
    primary: HashMap<InstrId, usize>,
    send: HashMap<InstrId, usize>,
    flush: HashMap<InstrId, usize>,
    sourcing: Vec<(InstrId, usize)>,
}

impl<'a> Builder<'a> {
    fn new(spec: &'a MicroarchSpec, prog: &'a LitmusProgram) -> Self {
        let cores = prog.threads.iter().map(|t| t.core + 1).max().unwrap_or(0).max(spec.cores);
        let mut b = Builder {
            spec,
            prog,
            cache_name: spec.l1().map(|c| c.level_id.clone()).unwrap_or_else(|| "L1".into()),
            nodes: Vec::new(),
            edges: Vec::new(),
            vicls: Vec::new(),
            cache: (0..cores).map(|_| BTreeMap::new()).collect(),
            barrier: HashMap::new(),
            mem_value: HashMap::new(),
            mem_writer: HashMap::new(),
            instances: HashMap::new(),
            stage: HashMap::new(),
            primary: HashMap::new(),
            send: HashMap::new(),
            flush: HashMap::new(),
            sourcing: Vec::new(),
        };
        for id in prog.ids() {
            for (s, name) in spec.stages.iter().enumerate() {
                let n = b.node(UhbNode::Stage {
                    instr: id,
                    core: prog.core(id),
                    stage: name.clone(),
                });
                b.stage.insert((id, s), n);
            }
        }
        b
    }

    fn node(&mut self, n: UhbNode) -> usize {
        self.nodes.push(n);
        self.nodes.len() - 1
    }

    fn edge(&mut self, s: usize, d: usize, label: &str) {
        if s != d {
            self.edges.push((s, d, label.to_string()));
        }
    }

    fn access_node(&self, x: InstrId) -> usize {
        let s = self
            .spec
            .stages
            .iter()
            .position(|s| *s == self.spec.access_stage)
            .unwrap_or(0);
        self.stage[&(x, s)]
    }

    fn set_of(&self, paddr: &str) -> usize {
        self.prog.set_of_paddr(paddr).unwrap_or(0)
    }

    fn live(&self, core: usize, paddr: &str) -> Option<&Line> {
        self.cache[core]
            .get(&self.set_of(paddr))
            .filter(|l| l.paddr == paddr)
    }

    fn access(&mut self, x: InstrId) {
        let ins = self.prog.instr(x);
        let Some(paddr) = self.prog.instr_paddr(x).map(str::to_string) else {
            return;
        };
        let c = self.prog.core(x);
        let a = self.access_node(x);
        let invalidation = self.spec.invalidation_based();
        match ins.opcode {
            Opcode::Read => {
                let src = match self.live(c, &paddr) {
                    Some(l) => {
                        let v = l.vicl;
                        self.edge(self.vicls[v].create, a, "rf");
                        v
                    }
                    None => {
                        let v = self.fill(c, &paddr, x, ViclKind::ReadFill);
                        self.edge(self.vicls[v].create, a, "fill");
                        self.primary.insert(x, v);
                        v
                    }
                };
                self.edge(a, self.vicls[src].expire, "rf");
                self.sourcing.push((x, src));
            }
            Opcode::Write => {
                let visible = !ins.squashed || self.spec.coherence.speculative_write_requests_visible;
                let remote = if invalidation && visible {
                    self.invalidate_others(c, &paddr, x, a)
                } else {
                    Vec::new()
                };
                let hit = self.live(c, &paddr).map(|l| l.vicl);
                if ins.squashed {
                    if hit.is_none() && self.spec.write_allocate {
                        let f = self.fill(c, &paddr, x, ViclKind::WriteFill);
                        self.edge(a, self.vicls[f].create, "fill");
                        self.primary.insert(x, f);
                        for e in remote {
                            self.edge(e, self.vicls[f].create, "inv_ack");
                        }
                    }
                    return;
                }
                let mut evicted = None;
                let old = match hit {
                    Some(v) => Some(v),
                    None if self.spec.write_allocate => {
                        let f = self.fill(c, &paddr, x, ViclKind::WriteFill);
                        self.edge(a, self.vicls[f].create, "fill");
                        for &e in &remote {
                            self.edge(e, self.vicls[f].create, "inv_ack");
                        }
                        Some(f)
                    }
                    None => {
                        evicted = self.evict_conflict(c, &paddr, x);
                        None
                    }
                };
                if let Some(o) = old {
                    self.expire_line(c, &paddr, ExpireKind::Overwrite, x);
                    self.edge(a, self.vicls[o].expire, "overwrite");
                }
                let w = self.new_vicl(c, &paddr, 1, ViclKind::WriteValue, x);
                self.edge(a, self.vicls[w].create, "write");
                if let Some(o) = old {
                    self.edge(self.vicls[o].expire, self.vicls[w].create, "overwrite");
                }
                for e in remote {
                    self.edge(e, self.vicls[w].create, "inv_ack");
                }
                if invalidation {
                    // Ownership waits for copies other cores already dropped.
                    for d in (0..self.cache.len()).filter(|&d| d != c) {
                        if let Some(&e) = self.barrier.get(&(d, paddr.clone())) {
                            self.edge(e, self.vicls[w].create, "ownership");
                        }
                    }
                }
                if let Some(e) = evicted {
                    self.edge(e, self.vicls[w].create, "evict");
                }
                if let Some(&prev) = self.mem_writer.get(&paddr) {
                    self.edge(self.vicls[prev].create, self.vicls[w].create, "co");
                }
                self.mem_writer.insert(paddr.clone(), w);
                self.mem_value.insert(paddr.clone(), 1);
                self.install(c, &paddr, w, true);
                self.primary.insert(x, w);
            }
            Opcode::Flush => {
                let vaddr = ins.vaddr.clone().unwrap_or_default();
                let fl = self.node(UhbNode::FlushEvent {
                    instr: x,
                    core: c,
                    vaddr,
                    paddr: paddr.clone(),
                });
                self.flush.insert(x, fl);
                self.edge(a, fl, "flush");
                if let Some(v) = self.live(c, &paddr).map(|l| l.vicl) {
                    self.expire_line(c, &paddr, ExpireKind::Flush, x);
                    self.edge(a, self.vicls[v].expire, "flush");
                    self.edge(self.vicls[v].expire, fl, "flush");
                }
                let mut affected = vec![c];
                if invalidation {
                    for e in self.invalidate_others(c, &paddr, x, a) {
                        self.edge(e, fl, "flush");
                    }
                    affected = (0..self.cache.len()).collect();
                }
                for core in affected {
                    if let Some(prev) = self.barrier.insert((core, paddr.clone()), fl) {
                        self.edge(prev, fl, "flush");
                    }
                }
            }
            _ => {}
        }
    }

    /// Expires every other core's copy of `paddr`; returns the expire nodes.
    fn invalidate_others(&mut self, c: usize, paddr: &str, x: InstrId, a: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for d in 0..self.cache.len() {
            if d == c {
                continue;
            }
            let Some(v) = self.live(d, paddr).map(|l| l.vicl) else {
                continue;
            };
            let send = match self.send.get(&x) {
                Some(&s) => s,
                None => {
                    let s = self.node(UhbNode::InvalidateSend {
                        instr: x,
                        core: c,
                        paddr: paddr.to_string(),
                    });
                    self.send.insert(x, s);
                    self.edge(a, s, "inv");
                    s
                }
            };
            let recv = self.node(UhbNode::InvalidateRecv {
                instr: x,
                core: d,
                paddr: paddr.to_string(),
            });
            self.edge(send, recv, "inv");
            self.expire_line(d, paddr, ExpireKind::Invalidate, x);
            let e = self.vicls[v].expire;
            self.edge(recv, e, "inv");
            out.push(e);
        }
        out
    }

    /// Replaces whatever line of another address occupies `paddr`'s set.
    fn evict_conflict(&mut self, c: usize, paddr: &str, x: InstrId) -> Option<usize> {
        let set = self.set_of(paddr);
        let victim = self.cache[c].get(&set).filter(|l| l.paddr != paddr)?;
        let (v, old) = (victim.vicl, victim.paddr.clone());
        self.expire_line(c, &old, ExpireKind::Evict, x);
        Some(self.vicls[v].expire)
    }

    /// Brings `paddr` into core `c` with the current memory value.
    fn fill(&mut self, c: usize, paddr: &str, x: InstrId, kind: ViclKind) -> usize {
        let mut before = Vec::new();
        if self.spec.invalidation_based() {
            for d in 0..self.cache.len() {
                if d == c {
                    continue;
                }
                let modified = self.live(d, paddr).filter(|l| l.modified).map(|l| l.vicl);
                if let Some(v) = modified {
                    // The writer keeps a shared copy of the same value.
                    self.expire_line(d, paddr, ExpireKind::Downgrade, x);
                    let (value, origin) = (self.vicls[v].value, self.vicls[v].origin);
                    let copy = self.new_vicl(d, paddr, value, ViclKind::SharedCopy, origin);
                    self.edge(self.vicls[v].expire, self.vicls[copy].create, "downgrade");
                    self.install(d, paddr, copy, false);
                    before.push((self.vicls[v].expire, "downgrade"));
                }
            }
        }
        if let Some(e) = self.evict_conflict(c, paddr, x) {
            before.push((e, "evict"));
        }
        let value = self.mem_value.get(paddr).copied().unwrap_or_else(|| self.prog.initial_value(paddr));
        let v = self.new_vicl(c, paddr, value, kind, x);
        let create = self.vicls[v].create;
        for (e, label) in before {
            self.edge(e, create, label);
        }
        if let Some(&w) = self.mem_writer.get(paddr) {
            self.edge(self.vicls[w].create, create, "rf_mem");
            // The value reaches memory when the writer's line goes away.
            if self.vicls[w].cause.is_some() {
                self.edge(self.vicls[w].expire, create, "writeback");
            }
        }
        self.install(c, paddr, v, false);
        v
    }

    fn new_vicl(&mut self, c: usize, paddr: &str, value: u8, kind: ViclKind, origin: InstrId) -> usize {
        let key = (c, paddr.to_string());
        let instance = *self.instances.entry(key.clone()).and_modify(|i| *i += 1).or_insert(0);
        let create = self.node(UhbNode::ViclCreate {
            cache: self.cache_name.clone(),
            core: c,
            paddr: paddr.to_string(),
            value,
            instance,
        });
        let expire = self.node(UhbNode::ViclExpire {
            cache: self.cache_name.clone(),
            core: c,
            paddr: paddr.to_string(),
            value,
            instance,
        });
        self.edge(create, expire, "vicl");
        if let Some(&b) = self.barrier.get(&key) {
            self.edge(b, create, "reuse");
        }
        self.vicls.push(TmpVicl {
            create,
            expire,
            core: c,
            paddr: paddr.to_string(),
            value,
            kind,
            origin,
            cause: None,
        });
        self.vicls.len() - 1
    }

    fn install(&mut self, c: usize, paddr: &str, vicl: usize, modified: bool) {
        let set = self.set_of(paddr);
        self.cache[c].insert(
            set,
            Line {
                paddr: paddr.to_string(),
                vicl,
                modified,
            },
        );
    }

    fn expire_line(&mut self, c: usize, paddr: &str, kind: ExpireKind, by: InstrId) {
        let set = self.set_of(paddr);
        if let Some(line) = self.cache[c].remove(&set) {
            let v = &mut self.vicls[line.vicl];
            v.cause = Some(ExpireCause { kind, by });
            let e = v.expire;
            self.barrier.insert((c, line.paddr), e);
        }
    }

    fn template(&self, t: &NodeTemplate, inst: &Instance<'_>) -> Option<usize> {
        let idx = inst.axiom.vars.iter().position(|v| *v == t.var)?;
        let id = inst.binding[idx];
        let level_ok = |l: &Option<String>| l.as_ref().is_none_or(|l| *l == self.cache_name);
        match &t.point {
            NodePoint::Stage(s) => {
                let si = self.spec.stages.iter().position(|x| x == s)?;
                self.stage.get(&(id, si)).copied()
            }
            NodePoint::Create(l) if level_ok(l) => self.primary.get(&id).map(|&v| self.vicls[v].create),
            NodePoint::Expire(l) if level_ok(l) => self.primary.get(&id).map(|&v| self.vicls[v].expire),
            NodePoint::Send => self.send.get(&id).copied(),
            NodePoint::Flush => self.flush.get(&id).copied(),
            _ => None,
        }
    }

    /// Concrete edges of each disjunct; assertions naming a node this
    /// execution lacks hold vacuously.
    fn resolve<'i>(&self, inst: &'i Instance<'_>) -> Vec<Vec<(usize, usize, &'i str)>> {
        let mut out: Vec<Vec<(usize, usize, &'i str)>> = inst
            .axiom
            .body
            .iter()
            .map(|conj| {
                conj.iter()
                    .filter_map(|e| {
                        let s = self.template(&e.src, inst)?;
                        let d = self.template(&e.dst, inst)?;
                        (s != d).then_some((s, d, inst.axiom.name.as_str()))
                    })
                    .collect()
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }

    fn finish(&self, edges: Vec<(usize, usize, String)>) -> UhbGraph {
        let n = self.nodes.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| self.nodes[x].cmp(&self.nodes[y]));
        let mut pos = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            pos[old] = new;
        }
        let nodes = order.iter().map(|&i| self.nodes[i].clone()).collect();
        let mut edges: Vec<UhbEdge> = edges
            .into_iter()
            .map(|(s, d, label)| UhbEdge {
                src: pos[s],
                dst: pos[d],
                label,
            })
            .collect();
        edges.sort();
        edges.dedup();
        let mut sourcing: Vec<(InstrId, usize)> = self
            .sourcing
            .iter()
            .map(|&(r, v)| (r, pos[self.vicls[v].create]))
            .collect();
        sourcing.sort();
        let mut vicls: Vec<Vicl> = self
            .vicls
            .iter()
            .map(|v| Vicl {
                create: pos[v.create],
                expire: pos[v.expire],
                core: v.core,
                paddr: v.paddr.clone(),
                value: v.value,
                kind: v.kind,
                origin: v.origin,
                expire_cause: v.cause,
            })
            .collect();
        vicls.sort();
        UhbGraph {
            nodes,
            edges,
            sourcing,
            vicls,
            access_stage: self.spec.access_stage.clone(),
        }
    }
}
