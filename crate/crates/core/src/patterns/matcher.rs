use super::*;
use crate::litmus::LitmusProgram;
use crate::uhb::{Reach, UhbGraph, UhbNode, ViclKind};

/// Every embedding of `pattern` in the execution `g` of `prog`, sorted.
pub fn match_pattern(pattern: &ThreatPattern, prog: &LitmusProgram, g: &UhbGraph) -> Vec<Embedding> {
    let m = Matcher::new(pattern, prog, Some(g));
    let mut out = Vec::new();
    let mut slots = vec![None; m.order.len()];
    m.search(0, &mut slots, &mut out);
    out.sort();
    out.dedup();
    out
}

/// True when the program-level requirements of the pattern (roles and
/// relations among instructions) can be met. Every program with an
/// embedding passes this check.
pub fn static_match(pattern: &ThreatPattern, prog: &LitmusProgram) -> bool {
    let m = Matcher::new(pattern, prog, None);
    let mut slots = vec![None; m.order.len()];
    m.exists(0, &mut slots)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Val {
    Instr(InstrId),
    Vicl(usize),
}

struct Matcher<'a> {
    pattern: &'a ThreatPattern,
    prog: &'a LitmusProgram,
    g: Option<&'a UhbGraph>,
    reach: Option<Reach>,
    /// Variable indices in binding order: required, optional, forbidden.
    order: Vec<usize>,
    /// Positions before this one are searched; the rest are forbidden.
    bound: usize,
    /// Candidate values per position in `order`.
    domains: Vec<Vec<Val>>,
    /// Constraints to check once the variable at each position is bound.
    due: Vec<Vec<&'a Constraint>>,
}

impl<'a> Matcher<'a> {
    fn new(pattern: &'a ThreatPattern, prog: &'a LitmusProgram, g: Option<&'a UhbGraph>) -> Self {
        let static_only = g.is_none();
        let mut order = Vec::new();
        for mode in [VarMode::Required, VarMode::Optional, VarMode::Forbidden] {
            order.extend((0..pattern.vars.len()).filter(|&i| pattern.vars[i].mode == mode));
        }
        if static_only {
            order.retain(|&i| {
                let v = &pattern.vars[i];
                v.mode == VarMode::Required && matches!(v.sort, VarSort::Instr(_))
            });
        }
        let bound = order
            .iter()
            .take_while(|&&i| pattern.vars[i].mode != VarMode::Forbidden)
            .count();
        let domains = order
            .iter()
            .map(|&i| match &pattern.vars[i].sort {
                VarSort::Instr(specs) => prog
                    .ids()
                    .filter(|&id| {
                        let ins = prog.instr(id);
                        specs.iter().any(|s| s.accepts(prog.actor(id), ins.squashed, ins.opcode))
                    })
                    .map(Val::Instr)
                    .collect(),
                VarSort::Vicl => (0..g.map_or(0, |g| g.vicls.len())).map(Val::Vicl).collect(),
            })
            .collect();
        let pos_of = |name: &str| {
            let vi = pattern.vars.iter().position(|v| v.name == name)?;
            order.iter().position(|&o| o == vi)
        };
        let mut due = vec![Vec::new(); order.len()];
        for c in &pattern.constraints {
            if static_only && !is_static(c) {
                continue;
            }
            let positions: Option<Vec<usize>> = c.vars().into_iter().map(pos_of).collect();
            if let Some(last) = positions.and_then(|p| p.into_iter().max()) {
                due[last].push(c);
            }
        }
        Matcher {
            pattern,
            prog,
            g,
            reach: g.map(|g| g.reachability()),
            order,
            bound,
            domains,
            due,
        }
    }

    fn var_name(&self, pos: usize) -> &str {
        &self.pattern.vars[self.order[pos]].name
    }

    fn lookup(&self, slots: &[Option<Val>], name: &str) -> Option<Val> {
        let pos = (0..self.order.len()).find(|&p| self.var_name(p) == name)?;
        slots[pos]
    }

    fn fits(&self, pos: usize, slots: &[Option<Val>]) -> bool {
        let v = slots[pos].expect("bound");
        if slots[..pos].contains(&Some(v)) {
            return false;
        }
        self.due[pos].iter().all(|c| self.holds(c, slots))
    }

    fn search(&self, pos: usize, slots: &mut Vec<Option<Val>>, out: &mut Vec<Embedding>) {
        if pos == self.bound {
            if !self.forbidden_present(slots) {
                out.push(self.embedding(slots));
            }
            return;
        }
        let optional = self.pattern.vars[self.order[pos]].mode == VarMode::Optional;
        let mut any = false;
        for &v in &self.domains[pos] {
            slots[pos] = Some(v);
            if self.fits(pos, slots) {
                any = true;
                self.search(pos + 1, slots, out);
            }
        }
        slots[pos] = None;
        if optional && !any {
            self.search(pos + 1, slots, out);
        }
    }

    /// True when some forbidden variable has a value meeting its constraints.
    fn forbidden_present(&self, slots: &mut [Option<Val>]) -> bool {
        for pos in self.bound..self.order.len() {
            for &v in &self.domains[pos] {
                slots[pos] = Some(v);
                let hit = self.fits(pos, slots);
                slots[pos] = None;
                if hit {
                    return true;
                }
            }
        }
        false
    }

    fn exists(&self, pos: usize, slots: &mut Vec<Option<Val>>) -> bool {
        if pos == self.bound {
            return true;
        }
        for &v in &self.domains[pos] {
            slots[pos] = Some(v);
            if self.fits(pos, slots) && self.exists(pos + 1, slots) {
                slots[pos] = None;
                return true;
            }
        }
        slots[pos] = None;
        false
    }

    fn embedding(&self, slots: &[Option<Val>]) -> Embedding {
        let g = self.g.expect("graph");
        let mut bindings = BTreeMap::new();
        for (pos, slot) in slots[..self.bound].iter().enumerate() {
            let b = match slot {
                None => continue,
                Some(Val::Instr(id)) => Binding::Instr {
                    id: *id,
                    node: g.access_node(*id).unwrap_or(usize::MAX),
                },
                Some(Val::Vicl(i)) => Binding::Vicl {
                    create: g.vicls[*i].create,
                    expire: g.vicls[*i].expire,
                },
            };
            bindings.insert(self.var_name(pos).to_string(), b);
        }
        Embedding { bindings }
    }

    /// Constraints naming an unbound optional variable hold vacuously.
    fn holds(&self, c: &Constraint, slots: &[Option<Val>]) -> bool {
        match c {
            Constraint::Rel { negated, rel, args } => {
                let (Some(a), Some(b)) = (self.lookup(slots, &args[0]), self.lookup(slots, &args[1])) else {
                    return true;
                };
                self.relation(*rel, a, b) != *negated
            }
            Constraint::Edge { src, dst } => {
                let (Some(a), Some(b)) = (self.lookup(slots, &src.var), self.lookup(slots, &dst.var)) else {
                    return true;
                };
                match (self.point(a, src.point), self.point(b, dst.point)) {
                    (Some(s), Some(d)) => self.reach.as_ref().expect("graph").hb(s, d),
                    _ => false,
                }
            }
            Constraint::Absent(p) => match self.lookup(slots, &p.var) {
                Some(v) => self.point(v, p.point).is_none(),
                None => true,
            },
        }
    }

    fn paddr(&self, v: Val) -> Option<&str> {
        match v {
            Val::Instr(id) => self.prog.instr_paddr(id),
            Val::Vicl(i) => Some(&self.g.expect("graph").vicls[i].paddr),
        }
    }

    fn core(&self, v: Val) -> usize {
        match v {
            Val::Instr(id) => self.prog.core(id),
            Val::Vicl(i) => self.g.expect("graph").vicls[i].core,
        }
    }

    fn relation(&self, rel: Relation, a: Val, b: Val) -> bool {
        let prog = self.prog;
        let instr_pair = match (a, b) {
            (Val::Instr(x), Val::Instr(y)) => Some((x, y)),
            _ => None,
        };
        match rel {
            Relation::SameAddr => self.paddr(a).is_some() && self.paddr(a) == self.paddr(b),
            Relation::SameCore => self.core(a) == self.core(b),
            Relation::Collides => match (self.paddr(a), self.paddr(b)) {
                (Some(p), Some(q)) => p != q && prog.set_of_paddr(p) == prog.set_of_paddr(q),
                _ => false,
            },
            Relation::Po => instr_pair.is_some_and(|(x, y)| x.thread == y.thread && x.index < y.index),
            Relation::Dep => instr_pair.is_some_and(|(x, y)| {
                x.thread == y.thread && prog.instr(y).dep_on == Some(x.index)
            }),
            Relation::Consecutive => instr_pair.is_some_and(|(x, y)| {
                let p = prog.instr_paddr(x);
                x.thread == y.thread
                    && x.index < y.index
                    && p.is_some()
                    && p == prog.instr_paddr(y)
                    && (x.index + 1..y.index).all(|k| {
                        let z = InstrId::new(x.thread, k);
                        prog.actor(z) != Actor::Attacker || prog.instr_paddr(z) != p
                    })
            }),
            Relation::Evicts => {
                let Val::Instr(x) = a else { return false };
                let same = self.paddr(a).is_some() && self.paddr(a) == self.paddr(b);
                match prog.instr(x).opcode {
                    Opcode::Flush => same,
                    Opcode::Read | Opcode::Write => self.relation(Relation::Collides, a, b),
                    _ => false,
                }
            }
            Relation::Creates | Relation::Sources | Relation::Causes | Relation::Touches => {
                let (Val::Instr(x), Val::Vicl(i)) = (a, b) else { return false };
                let g = self.g.expect("graph");
                let v = &g.vicls[i];
                match rel {
                    Relation::Creates => v.origin == x,
                    Relation::Sources => g.source_of(x) == Some(v.create),
                    Relation::Causes => v.expire_cause.is_some_and(|c| c.by == x),
                    _ => {
                        g.source_of(x) == Some(v.create)
                            || (v.origin == x && v.kind == ViclKind::WriteValue)
                    }
                }
            }
        }
    }

    fn point(&self, v: Val, point: Point) -> Option<usize> {
        let g = self.g?;
        match v {
            Val::Vicl(i) => match point {
                Point::Create => Some(g.vicls[i].create),
                Point::Expire => Some(g.vicls[i].expire),
                _ => None,
            },
            Val::Instr(id) => {
                let created = || {
                    let mut own = g.vicls.iter().filter(|v| v.origin == id);
                    let first = own.clone().next();
                    own.find(|v| v.kind == ViclKind::WriteValue).or(first)
                };
                let event = |want: fn(&UhbNode) -> bool| {
                    g.nodes.iter().position(|n| want(n) && n.instr() == Some(id))
                };
                let flush = || event(|n| matches!(n, UhbNode::FlushEvent { .. }));
                match point {
                    Point::Access => g.access_node(id),
                    Point::Effect => flush()
                        .or_else(|| created().map(|v| v.create))
                        .or_else(|| g.access_node(id)),
                    Point::Flush => flush(),
                    Point::Send => event(|n| matches!(n, UhbNode::InvalidateSend { .. })),
                    Point::Create => created().map(|v| v.create),
                    Point::Expire => created().map(|v| v.expire),
                }
            }
        }
    }
}

fn is_static(c: &Constraint) -> bool {
    matches!(c, Constraint::Rel { rel, .. } if rel.is_static())
}
