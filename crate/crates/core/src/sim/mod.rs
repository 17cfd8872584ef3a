//! A small deterministic multicore simulator used as an independent oracle.
//!
//! Caches are private and direct-mapped per set, kept coherent with an
//! MSI-style invalidation protocol. Squashed instructions run speculatively:
//! their cache and coherence effects stay, their architectural effects are
//! dropped. The secret is stored at the secret address and is also the value
//! returned by the read bound to the `secret` role. Reads of it, and reads
//! whose address depends on it, carry the secret; an access whose address
//! depends on such a read touches the named line only when the secret is
//! non-zero, otherwise it touches an unrelated line.
//!
//! Threads are scheduled with the handshake of a real attack: the observing
//! thread (the one holding the `probe` or `reload` role) runs up to that
//! access, every other thread then runs to completion, and finally the
//! observer resumes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::litmus::{InstrId, Instruction, LitmusProgram, Opcode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub hit_latency: u32,
    pub miss_latency: u32,
    /// Accesses at or above this latency are classified as misses.
    pub threshold: u32,
    pub write_allocate: bool,
    /// Squashed writes still request ownership and invalidate sharers.
    pub invalidation_on_speculative_write: bool,
    /// Run instructions inside speculation windows before squashing them.
    pub speculation: bool,
    /// A fence opening a window stalls it until the source resolves.
    pub fence_stalls_speculation: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            hit_latency: 10,
            miss_latency: 100,
            threshold: 60,
            write_allocate: true,
            invalidation_on_speculative_write: true,
            speculation: true,
            fence_stalls_speculation: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hit_latency < self.threshold && self.threshold <= self.miss_latency {
            Ok(())
        } else {
            Err(format!(
                "latencies must satisfy hit < threshold <= miss, got {} / {} / {}",
                self.hit_latency, self.threshold, self.miss_latency
            ))
        }
    }

    pub fn is_hit(&self, latency: u32) -> bool {
        latency < self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LineState {
    Modified,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrTrace {
    pub id: InstrId,
    pub issue: u32,
    pub complete: u32,
    /// `None` for instructions without a cache access or that never ran.
    pub hit: Option<bool>,
    pub squashed: bool,
    pub executed: bool,
    /// The physical line actually touched; `None` when a secret-dependent
    /// access was redirected elsewhere.
    pub touched: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineEvent {
    pub cycle: u32,
    pub core: usize,
    pub set: usize,
    /// The new content of the set, `None` once invalid.
    pub line: Option<(String, LineState)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub role: String,
    pub instr: InstrId,
    pub latency: u32,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTrace {
    pub instrs: Vec<InstrTrace>,
    pub lines: Vec<LineEvent>,
    pub observation: Option<Observation>,
    /// What the attacker concludes from the observation.
    pub inferred_secret_bit: Option<u8>,
    /// Final memory contents.
    pub memory: BTreeMap<String, u8>,
    /// Values returned by committed reads.
    pub registers: BTreeMap<InstrId, u8>,
    /// Cycles at which a line was writable on one core while valid on another.
    pub swmr_violations: usize,
}

/// The physical address holding the secret: the `secret` role's address, or
/// else the target of the first illegal access.
pub fn secret_paddr(prog: &LitmusProgram) -> Option<String> {
    let id = prog
        .roles
        .get("secret")
        .copied()
        .or_else(|| prog.ids().find(|&id| prog.is_illegal(id)))?;
    prog.instr_paddr(id).map(str::to_string)
}

/// The role whose latency the attacker measures.
pub fn observed_role(prog: &LitmusProgram) -> Option<(&str, InstrId)> {
    ["reload", "probe"]
        .into_iter()
        .find_map(|r| prog.roles.get(r).map(|&id| (r, id)))
}

/// Runs `prog` with `secret` stored at the secret address.
pub fn simulate(prog: &LitmusProgram, cfg: &SimConfig, secret: u8) -> SimTrace {
    simulate_at(prog, cfg, secret_paddr(prog).as_deref(), secret)
}

/// [`simulate`] with the secret stored at `paddr` instead of the derived
/// secret address.
pub fn simulate_at(prog: &LitmusProgram, cfg: &SimConfig, paddr: Option<&str>, secret: u8) -> SimTrace {
    let mut m = Machine::new(prog, cfg, paddr, secret);
    let observed = observed_role(prog);
    match observed {
        Some((_, obs)) => {
            m.run(obs.thread, 0..obs.index);
            for t in (0..prog.threads.len()).filter(|&t| t != obs.thread) {
                m.run(t, 0..prog.threads[t].instructions.len());
            }
            m.run(obs.thread, obs.index..prog.threads[obs.thread].instructions.len());
        }
        None => {
            for t in 0..prog.threads.len() {
                m.run(t, 0..prog.threads[t].instructions.len());
            }
        }
    }
    let observation = observed.and_then(|(role, id)| {
        let t = m.trace.get(&id).filter(|t| t.executed)?;
        let latency = t.complete - t.issue;
        Some(Observation {
            role: role.to_string(),
            instr: id,
            latency,
            hit: cfg.is_hit(latency),
        })
    });
    let inferred_secret_bit = observation.as_ref().map(|o| match o.role.as_str() {
        "reload" => o.hit as u8,
        _ => (!o.hit) as u8,
    });
    SimTrace {
        instrs: m.trace.into_values().collect(),
        lines: m.lines,
        observation,
        inferred_secret_bit,
        memory: m.memory,
        registers: m.committed_regs,
        swmr_violations: m.swmr_violations,
    }
}

/// True when secrets 0 and 1 lead to different attacker observations.
pub fn leak_check(prog: &LitmusProgram, cfg: &SimConfig) -> bool {
    if secret_paddr(prog).is_none() {
        return false;
    }
    let a = simulate(prog, cfg, 0).observation;
    let b = simulate(prog, cfg, 1).observation;
    match (a, b) {
        (Some(a), Some(b)) => a.hit != b.hit,
        _ => false,
    }
}

/// [`leak_check`] on a program whose fences stall speculation until the
/// window's source resolves.
pub fn fence_leak_check(prog: &LitmusProgram, cfg: &SimConfig) -> bool {
    let cfg = SimConfig {
        fence_stalls_speculation: true,
        ..*cfg
    };
    leak_check(prog, &cfg)
}

/// Copy of `prog` with a fence opening every speculation window.
pub fn insert_fences(prog: &LitmusProgram) -> LitmusProgram {
    let mut out = prog.clone();
    for (t, th) in out.threads.iter_mut().enumerate() {
        let Some(s) = th.instructions.iter().find_map(|i| i.speculative_under) else {
            continue;
        };
        if th.instructions.get(s + 1).map(|i| i.opcode) == Some(Opcode::Fence) {
            continue;
        }
        let bump = |x: usize| if x > s { x + 1 } else { x };
        for ins in &mut th.instructions {
            ins.dep_on = ins.dep_on.map(bump);
            ins.speculative_under = ins.speculative_under.map(bump);
        }
        th.instructions.insert(s + 1, Instruction::fence().under(s));
        for id in out.roles.values_mut() {
            if id.thread == t && id.index > s {
                id.index += 1;
            }
        }
    }
    out
}

struct Machine<'a> {
    prog: &'a LitmusProgram,
    cfg: &'a SimConfig,
    now: u32,
    caches: Vec<BTreeMap<usize, (String, LineState)>>,
    memory: BTreeMap<String, u8>,
    regs: HashMap<InstrId, u8>,
    committed_regs: BTreeMap<InstrId, u8>,
    /// Threads whose current window was stopped by a fence.
    fenced: HashMap<usize, usize>,
    /// The read whose returned value is the secret.
    secret_read: Option<(InstrId, u8)>,
    secret_paddr: Option<String>,
    /// Values derived from the secret, by the read that produced them.
    tainted: HashMap<InstrId, u8>,
    trace: BTreeMap<InstrId, InstrTrace>,
    lines: Vec<LineEvent>,
    swmr_violations: usize,
}

impl<'a> Machine<'a> {
    fn new(prog: &'a LitmusProgram, cfg: &'a SimConfig, paddr: Option<&str>, secret: u8) -> Self {
        let mut memory: BTreeMap<String, u8> = prog.initial_values.clone();
        for p in prog.paddrs() {
            memory.entry(p).or_insert(0);
        }
        if let Some(p) = paddr {
            memory.insert(p.to_string(), secret);
        }
        let cores = prog.threads.iter().map(|t| t.core + 1).max().unwrap_or(0);
        Machine {
            prog,
            cfg,
            now: 0,
            caches: vec![BTreeMap::new(); cores],
            memory,
            regs: HashMap::new(),
            committed_regs: BTreeMap::new(),
            fenced: HashMap::new(),
            secret_read: prog.roles.get("secret").map(|&id| (id, secret)),
            secret_paddr: paddr.map(str::to_string),
            tainted: HashMap::new(),
            trace: BTreeMap::new(),
            lines: Vec::new(),
            swmr_violations: 0,
        }
    }

    fn run(&mut self, thread: usize, range: std::ops::Range<usize>) {
        for index in range {
            self.step(InstrId::new(thread, index));
        }
    }

    fn step(&mut self, id: InstrId) {
        let ins = self.prog.instr(id);
        let issue = self.now;
        let mut rec = InstrTrace {
            id,
            issue,
            complete: issue,
            hit: None,
            squashed: ins.squashed,
            executed: false,
            touched: None,
        };
        let window = ins.speculative_under;
        let stopped = window.is_some() && self.fenced.get(&id.thread) == window.as_ref();
        if ins.squashed && (!self.cfg.speculation || stopped) {
            self.trace.insert(id, rec);
            return;
        }
        if ins.opcode == Opcode::Fence {
            // The window's source resolves first, so nothing after the fence
            // in this window ever runs.
            if let (Some(s), true) = (window, self.cfg.fence_stalls_speculation) {
                self.fenced.insert(id.thread, s);
            }
            self.now += 1;
            rec.executed = true;
            rec.complete = self.now;
            self.trace.insert(id, rec);
            return;
        }
        rec.executed = true;
        let latency = match self.prog.instr_paddr(id).map(str::to_string) {
            None => 1,
            Some(paddr) => {
                let source = ins
                    .dep_on
                    .and_then(|d| self.tainted.get(&InstrId::new(id.thread, d)).copied());
                if let (Some(v), Opcode::Read) = (source, ins.opcode) {
                    self.tainted.insert(id, v);
                }
                if source == Some(0) {
                    if ins.opcode == Opcode::Read && !ins.squashed {
                        self.committed_regs.insert(id, 0);
                    }
                    self.cfg.miss_latency
                } else {
                    rec.touched = Some(paddr.clone());
                    let (lat, hit) = self.access(id, ins, &paddr);
                    rec.hit = hit;
                    lat
                }
            }
        };
        self.now += latency;
        rec.complete = self.now;
        self.trace.insert(id, rec);
    }

    /// Performs a cache access; returns its latency and, for reads and
    /// writes, whether it hit.
    fn access(&mut self, id: InstrId, ins: &Instruction, paddr: &str) -> (u32, Option<bool>) {
        let c = self.prog.core(id);
        let (hit_lat, miss_lat) = (self.cfg.hit_latency, self.cfg.miss_latency);
        let local = self.line(c, paddr);
        match ins.opcode {
            Opcode::Read => {
                let value = match (self.secret_read, self.tainted.get(&id)) {
                    (Some((s, v)), _) if s == id => v,
                    (_, Some(&v)) => v,
                    _ => self.memory.get(paddr).copied().unwrap_or(0),
                };
                if self.secret_read.map(|(s, _)| s) == Some(id) || self.secret_paddr.as_deref() == Some(paddr) {
                    self.tainted.insert(id, value);
                }
                self.regs.insert(id, value);
                if !ins.squashed {
                    self.committed_regs.insert(id, value);
                }
                if local.is_some() {
                    (hit_lat, Some(true))
                } else {
                    self.fetch_shared(c, paddr);
                    (miss_lat, Some(false))
                }
            }
            Opcode::Write if ins.squashed => {
                if self.cfg.invalidation_on_speculative_write {
                    self.invalidate_others(c, paddr);
                    if local.is_some() || self.cfg.write_allocate {
                        self.install(c, paddr, LineState::Modified);
                    }
                } else if local.is_none() && self.cfg.write_allocate {
                    self.fetch_shared(c, paddr);
                }
                match local {
                    Some(LineState::Modified) => (hit_lat, Some(true)),
                    _ => (miss_lat, Some(false)),
                }
            }
            Opcode::Write => {
                self.memory.insert(paddr.to_string(), ins.written_value.unwrap_or(1));
                if local == Some(LineState::Modified) {
                    return (hit_lat, Some(true));
                }
                self.invalidate_others(c, paddr);
                if local.is_some() || self.cfg.write_allocate {
                    self.install(c, paddr, LineState::Modified);
                }
                (miss_lat, Some(false))
            }
            Opcode::Flush => {
                for core in 0..self.caches.len() {
                    if self.line(core, paddr).is_some() {
                        self.remove(core, paddr);
                    }
                }
                (hit_lat, None)
            }
            _ => (1, None),
        }
    }

    fn set_of(&self, paddr: &str) -> usize {
        self.prog.set_of_paddr(paddr).unwrap_or(0)
    }

    fn line(&self, core: usize, paddr: &str) -> Option<LineState> {
        self.caches[core]
            .get(&self.set_of(paddr))
            .filter(|(p, _)| p == paddr)
            .map(|(_, s)| *s)
    }

    fn fetch_shared(&mut self, c: usize, paddr: &str) {
        for d in 0..self.caches.len() {
            if d != c && self.line(d, paddr) == Some(LineState::Modified) {
                self.install(d, paddr, LineState::Shared);
            }
        }
        self.install(c, paddr, LineState::Shared);
    }

    fn invalidate_others(&mut self, c: usize, paddr: &str) {
        for d in 0..self.caches.len() {
            if d != c && self.line(d, paddr).is_some() {
                self.remove(d, paddr);
            }
        }
    }

    fn install(&mut self, core: usize, paddr: &str, state: LineState) {
        let set = self.set_of(paddr);
        self.caches[core].insert(set, (paddr.to_string(), state));
        self.log(core, set);
    }

    fn remove(&mut self, core: usize, paddr: &str) {
        let set = self.set_of(paddr);
        self.caches[core].remove(&set);
        self.log(core, set);
    }

    fn log(&mut self, core: usize, set: usize) {
        self.lines.push(LineEvent {
            cycle: self.now,
            core,
            set,
            line: self.caches[core].get(&set).cloned(),
        });
        self.swmr_violations += self.swmr_conflicts();
    }

    fn swmr_conflicts(&self) -> usize {
        let mut holders: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for cache in &self.caches {
            for (p, s) in cache.values() {
                let e = holders.entry(p.as_str()).or_default();
                match s {
                    LineState::Modified => e.0 += 1,
                    LineState::Shared => e.1 += 1,
                }
            }
        }
        holders
            .values()
            .filter(|(m, s)| *m > 1 || (*m == 1 && *s > 0))
            .count()
    }
}

/// Line-oriented trace text.
pub fn render_trace(prog: &LitmusProgram, t: &SimTrace) -> String {
    let mut out = String::new();
    for i in &t.instrs {
        let ins = prog.instr(i.id);
        let status = match (i.executed, i.squashed) {
            (false, _) => "skipped",
            (true, true) => "squashed",
            (true, false) => "committed",
        };
        let hit = match i.hit {
            Some(true) => "hit",
            Some(false) => "miss",
            None => "-",
        };
        let touched = i.touched.as_deref().unwrap_or("-");
        let _ = writeln!(
            out,
            "{} {:<6} {:>5} {:>5} {:<4} {:<9} {}",
            i.id,
            ins.opcode.as_str(),
            i.issue,
            i.complete,
            hit,
            status,
            touched
        );
    }
    if let Some(o) = &t.observation {
        let class = if o.hit { "hit" } else { "miss" };
        let _ = writeln!(out, "observe {} {} latency {} -> {class}", o.role, o.instr, o.latency);
    }
    if let Some(b) = t.inferred_secret_bit {
        let _ = writeln!(out, "inferred secret {b}");
    }
    out
}

impl fmt::Display for LineState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LineState::Modified => "M",
            LineState::Shared => "S",
        })
    }
}
