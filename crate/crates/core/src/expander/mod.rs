//! Expansion of an annotated litmus test into an attack-program skeleton.
//!
//! The skeleton is neutral pseudo-code organised in four phases: PRIME
//! fills or flushes the probe array, TRAIN steers the branch predictor (or
//! arms fault suppression), TRIGGER runs the litmus test's speculative
//! window, and PROBE times a re-access of every probe slot. Every litmus
//! instruction is listed in exactly one phase.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::litmus::{InstrId, LitmusProgram, Opcode};
use crate::synth::VariantTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub line_size: usize,
    pub num_sets: usize,
    pub associativity: usize,
    pub inclusive: bool,
}

impl Default for CacheGeometry {
    fn default() -> Self {
        CacheGeometry {
            line_size: 64,
            num_sets: 64,
            associativity: 8,
            inclusive: true,
        }
    }
}

impl CacheGeometry {
    pub fn validate(&self) -> Result<(), ExpandError> {
        if self.line_size == 0 || self.num_sets == 0 || self.associativity == 0 {
            return Err(ExpandError::Geometry("all geometry fields must be at least 1".into()));
        }
        if !self.line_size.is_power_of_two() {
            return Err(ExpandError::Geometry(format!("line size {} is not a power of two", self.line_size)));
        }
        Ok(())
    }
}

/// Knobs with defaults taken from the classic proof-of-concept template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandOptions {
    /// Bytes between consecutive probe slots.
    pub stride: usize,
    /// Probe order is `((i * mul) + add) & 255`.
    pub permutation: (usize, usize),
    pub training_rounds: usize,
    /// Every this many training rounds one uses the malicious index.
    pub training_period: usize,
    pub threshold: u32,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        ExpandOptions {
            stride: 512,
            permutation: (167, 13),
            training_rounds: 30,
            training_period: 6,
            threshold: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExpandError {
    #[error("the test carries no prime/probe or flush/reload role annotation")]
    Unannotated,
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("probe stride {stride} must be a positive multiple of the line size {line_size}")]
    Stride { stride: usize, line_size: usize },
    #[error("probe order ((i * {0}) + {1}) & 255 is not a permutation of 0..256")]
    Permutation(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhaseKind {
    Prime,
    Train,
    Trigger,
    Probe,
}

impl PhaseKind {
    pub const ALL: [PhaseKind; 4] = [PhaseKind::Prime, PhaseKind::Train, PhaseKind::Trigger, PhaseKind::Probe];

    pub fn marker(self) -> &'static str {
        match self {
            PhaseKind::Prime => "PRIME",
            PhaseKind::Train => "TRAIN",
            PhaseKind::Trigger => "TRIGGER",
            PhaseKind::Probe => "PROBE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    /// Skeleton thread running this phase.
    pub thread: usize,
    /// Litmus instructions placed in this phase.
    pub instrs: Vec<InstrId>,
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSkeleton {
    pub variant: VariantTag,
    pub geometry: CacheGeometry,
    pub options: ExpandOptions,
    /// Number of skeleton threads: one, or two with a flag handshake.
    pub threads: usize,
    pub declarations: Vec<String>,
    /// The four phases in execution order.
    pub phases: Vec<Phase>,
}

impl AttackSkeleton {
    pub fn phase(&self, kind: PhaseKind) -> &Phase {
        self.phases.iter().find(|p| p.kind == kind).expect("every phase is present")
    }
}

/// The probe visiting order, or `None` when it is not a permutation.
pub fn probe_order(mul: usize, add: usize) -> Option<Vec<usize>> {
    let order: Vec<usize> = (0..256).map(|i| (i * mul + add) & 255).collect();
    let mut seen = [false; 256];
    for &x in &order {
        if std::mem::replace(&mut seen[x], true) {
            return None;
        }
    }
    Some(order)
}

/// [`expand_with`] using the default options.
pub fn expand(test: &LitmusProgram, variant: VariantTag, geom: &CacheGeometry) -> Result<AttackSkeleton, ExpandError> {
    expand_with(test, variant, geom, &ExpandOptions::default())
}

pub fn expand_with(
    test: &LitmusProgram,
    variant: VariantTag,
    geom: &CacheGeometry,
    opts: &ExpandOptions,
) -> Result<AttackSkeleton, ExpandError> {
    geom.validate()?;
    if opts.stride < geom.line_size || !opts.stride.is_multiple_of(geom.line_size) {
        return Err(ExpandError::Stride {
            stride: opts.stride,
            line_size: geom.line_size,
        });
    }
    let (mul, add) = opts.permutation;
    probe_order(mul, add).ok_or(ExpandError::Permutation(mul, add))?;
    let roles = &test.roles;
    let (first, observe, actor, prime_style) = match (roles.get("prime"), roles.get("probe"), roles.get("flush"), roles.get("reload")) {
        (Some(&p), Some(&q), _, _) => (p, q, roles.get("evictor").copied(), true),
        (_, _, Some(&f), Some(&r)) => (f, r, roles.get("filler").copied(), false),
        _ => return Err(ExpandError::Unannotated),
    };
    let actor = actor.ok_or(ExpandError::Unannotated)?;

    // The observer thread primes and probes; the thread holding the
    // filler or evictor trains and triggers.
    let observer = 0;
    let trigger = usize::from(actor.thread != observe.thread);
    let threads = trigger + 1;
    let mut placed: [Vec<InstrId>; 4] = Default::default();
    for id in test.ids() {
        let kind = if id.thread != observe.thread {
            PhaseKind::Trigger
        } else if id.index <= first.index {
            PhaseKind::Prime
        } else if id.index >= observe.index {
            PhaseKind::Probe
        } else {
            PhaseKind::Trigger
        };
        placed[kind as usize].push(id);
    }

    let stride = opts.stride;
    let window = test.window_source(actor).map(|s| test.instr(s).opcode);
    let branch_window = window == Some(Opcode::Branch);
    let mut declarations = vec![
        "uint8 victim_array[16] = {1..16}".to_string(),
        "uint victim_size = 16".to_string(),
        format!("uint8 probe_array[256 * {stride}]"),
        "uint results[256]".to_string(),
        "uint8 secret_value".to_string(),
    ];
    if threads == 2 {
        declarations.push("volatile uint flag = 0".to_string());
    }

    let describe = |id: InstrId| litmus_line(test, id, stride);
    let mut phases = Vec::new();

    let mut prime = Vec::new();
    if prime_style {
        prime.push(format!("for i in 0..256: junk ^= probe_array[i * {stride}]    ; fill every slot"));
    } else {
        prime.push(format!("for i in 0..256: clflush(&probe_array[i * {stride}])    ; empty every slot"));
    }
    prime.extend(placed[0].iter().map(|&id| describe(id)));
    if threads == 2 {
        prime.push("flag = 1    ; hand over to the trigger thread".to_string());
    }
    phases.push(Phase {
        kind: PhaseKind::Prime,
        thread: observer,
        instrs: placed[0].clone(),
        lines: prime,
    });

    let mut train = Vec::new();
    if threads == 2 {
        train.push("wait until flag == 1".to_string());
    }
    if branch_window || window.is_none() {
        let (rounds, period) = (opts.training_rounds, opts.training_period);
        train.push("training_x = tries % victim_size".to_string());
        train.push(format!("for j in {}..=0 step -1:", rounds.saturating_sub(1)));
        train.push("  clflush(&victim_size)".to_string());
        train.push("  delay()".to_string());
        train.push(format!("  ; Bit twiddling to set x = training_x if j % {period} != 0 else malicious_x"));
        train.push(format!("  x = ((j % {period}) - 1) & ~0xFFFF"));
        train.push("  x = x | (x >> 16)".to_string());
        train.push("  x = training_x ^ (x & (malicious_x ^ training_x))".to_string());
        train.push("  victim(x)    ; the last round runs TRIGGER speculatively".to_string());
    } else {
        train.push("install fault handler    ; the faulting access is suppressed, not retried".to_string());
        train.push("x = malicious_x".to_string());
    }
    phases.push(Phase {
        kind: PhaseKind::Train,
        thread: trigger,
        instrs: placed[1].clone(),
        lines: train,
    });

    let mut trig = vec![match window {
        Some(Opcode::Branch) => "victim(x): if x < victim_size:    ; mispredicted when x = malicious_x".to_string(),
        Some(_) => "victim(x): begin transient window at the faulting access".to_string(),
        None => "victim(x):".to_string(),
    }];
    trig.extend(placed[2].iter().map(|&id| format!("  {}", describe(id))));
    if threads == 2 {
        trig.push("flag = 2    ; hand back to the probe thread".to_string());
    }
    phases.push(Phase {
        kind: PhaseKind::Trigger,
        thread: trigger,
        instrs: placed[2].clone(),
        lines: trig,
    });

    let signal = if prime_style { "miss" } else { "hit" };
    let cmp = if prime_style { ">=" } else { "<" };
    let mut probe = Vec::new();
    if threads == 2 {
        probe.push("wait until flag == 2".to_string());
    }
    probe.push("for i in 0..256:".to_string());
    probe.push(format!("  mix_i = ((i * {mul}) + {add}) & 255"));
    probe.push(format!("  addr = &probe_array[mix_i * {stride}]"));
    probe.push("  t0 = timer()".to_string());
    probe.push("  junk = *addr    ; timed re-access".to_string());
    probe.push("  dt = timer() - t0".to_string());
    probe.push(format!(
        "  if dt {cmp} {} and mix_i != victim_array[tries % victim_size]: results[mix_i] += 1    ; {signal} reveals the value",
        opts.threshold
    ));
    probe.extend(placed[3].iter().map(|&id| format!("  {}", describe(id))));
    probe.push("secret_value = argmax(results)".to_string());
    phases.push(Phase {
        kind: PhaseKind::Probe,
        thread: observer,
        instrs: placed[3].clone(),
        lines: probe,
    });

    Ok(AttackSkeleton {
        variant,
        geometry: *geom,
        options: *opts,
        threads,
        declarations,
        phases,
    })
}

fn litmus_line(test: &LitmusProgram, id: InstrId, stride: usize) -> String {
    let ins = test.instr(id);
    let role = test
        .roles
        .iter()
        .find(|(_, &r)| r == id)
        .map(|(name, _)| format!(" [{name}]"))
        .unwrap_or_default();
    let target = |v: &str| match ins.dep_on {
        Some(d) => {
            let src = test.instr(InstrId::new(id.thread, d)).vaddr.as_deref().unwrap_or("?");
            format!("probe_array[{src}_value * {stride}] (line {v})")
        }
        None => v.to_string(),
    };
    let op = match ins.opcode {
        Opcode::Read => format!("load {}", target(ins.vaddr.as_deref().unwrap_or("?"))),
        Opcode::Write => format!("store {} = {}", target(ins.vaddr.as_deref().unwrap_or("?")), ins.written_value.unwrap_or(1)),
        Opcode::Flush => format!("clflush {}", target(ins.vaddr.as_deref().unwrap_or("?"))),
        Opcode::Fence => "fence".to_string(),
        Opcode::Branch => "branch on x < victim_size".to_string(),
    };
    let status = if ins.squashed { " (transient)" } else { "" };
    format!("litmus {id}: {op}{status}{role}")
}

/// Deterministic text with the four phase markers in order.
pub fn render_skeleton(sk: &AttackSkeleton) -> String {
    let g = &sk.geometry;
    let mut out = String::new();
    let _ = writeln!(out, "attack {}", sk.variant);
    let _ = writeln!(
        out,
        "geometry line_size {} sets {} ways {} inclusive {}",
        g.line_size,
        g.num_sets,
        g.associativity,
        if g.inclusive { "yes" } else { "no" }
    );
    let _ = writeln!(
        out,
        "probe stride {} order (({} * i) + {}) & 255 threshold {}",
        sk.options.stride, sk.options.permutation.0, sk.options.permutation.1, sk.options.threshold
    );
    let _ = writeln!(out, "threads {}", sk.threads);
    out.push_str("\nshared:\n");
    for d in &sk.declarations {
        let _ = writeln!(out, "  {d}");
    }
    for p in &sk.phases {
        let _ = writeln!(out, "\n{} thread {}:", p.kind.marker(), p.thread);
        for l in &p.lines {
            let _ = writeln!(out, "  {l}");
        }
    }
    out
}
