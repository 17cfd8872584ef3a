//! Bounded synthesis of security litmus tests.
//!
//! Every canonical candidate within the bounds is checked: a cheap static
//! pass discards programs that cannot host the pattern's roles, then all
//! executions are built and matched. The first execution (in canonical
//! order) with an embedding becomes the witness.

mod classify;
mod output;

pub use classify::{classify, VariantTag};
pub use output::write_results;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dsl::{Axiom, MicroarchSpec};
use crate::litmus::{
    canonicalize, count_candidates, for_each_candidate_sharded, render_program, LitmusProgram, Opcode,
    SynthesisBounds,
};
use crate::patterns::{match_pattern, static_match, Embedding, ThreatPattern};
use crate::uhb::{enumerate_executions, UhbGraph};

/// Default ceiling on the number of candidates one search may visit.
pub const DEFAULT_CEILING: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthResult {
    /// Canonical program annotated with the embedding's instruction roles.
    pub program: LitmusProgram,
    pub witness: UhbGraph,
    pub embedding: Embedding,
    pub variant: VariantTag,
}

impl SynthResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    /// Threads that share the candidate space. Output does not depend on it.
    pub workers: usize,
    pub ceiling: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            workers: 1,
            ceiling: DEFAULT_CEILING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("{count} candidates exceed the ceiling of {ceiling}; lower the bounds or raise the ceiling")]
    TooManyCandidates { count: u64, ceiling: u64 },
}

/// [`synthesize_with`] using one worker and the default ceiling.
pub fn synthesize(
    spec: &MicroarchSpec,
    pattern: &ThreatPattern,
    bounds: &SynthesisBounds,
) -> Result<Vec<SynthResult>, SynthError> {
    synthesize_with(spec, pattern, bounds, &SynthOptions::default())
}

/// All canonical candidates within `bounds` with an execution embedding
/// `pattern`, sorted by instruction count and then program text.
pub fn synthesize_with(
    spec: &MicroarchSpec,
    pattern: &ThreatPattern,
    bounds: &SynthesisBounds,
    opts: &SynthOptions,
) -> Result<Vec<SynthResult>, SynthError> {
    search(spec, pattern, bounds, opts, |_| true)
}

fn search(
    spec: &MicroarchSpec,
    pattern: &ThreatPattern,
    bounds: &SynthesisBounds,
    opts: &SynthOptions,
    keep: impl Fn(&LitmusProgram) -> bool + Sync,
) -> Result<Vec<SynthResult>, SynthError> {
    let count = count_candidates(spec, bounds);
    if count > opts.ceiling {
        return Err(SynthError::TooManyCandidates {
            count,
            ceiling: opts.ceiling,
        });
    }
    let workers = opts.workers.max(1);
    let keep = &keep;
    let mut results: Vec<SynthResult> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    let mut out = Vec::new();
                    for_each_candidate_sharded(spec, bounds, w, workers, |p| {
                        if keep(&p) {
                            out.extend(check_candidate(spec, pattern, &p));
                        }
                    });
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("synthesis worker panicked"))
            .collect()
    });
    sort_results(&mut results);
    Ok(results)
}

fn sort_results(results: &mut [SynthResult]) {
    results.sort_by_cached_key(|r| (r.program.len(), render_program(&r.program)));
}

/// The result for one candidate, if any of its executions embeds the pattern.
pub fn check_candidate(spec: &MicroarchSpec, pattern: &ThreatPattern, prog: &LitmusProgram) -> Option<SynthResult> {
    if !static_match(pattern, prog) {
        return None;
    }
    enumerate_executions(spec, prog).into_iter().find_map(|g| {
        let embedding = match_pattern(pattern, prog, &g).into_iter().next()?;
        let mut program = prog.clone();
        program.roles = embedding.roles();
        let variant = classify(&program, &embedding);
        Some(SynthResult {
            program,
            witness: g,
            embedding,
            variant,
        })
    })
}

/// Recomputes executions and matching from scratch and confirms the result.
pub fn verify_result(r: &SynthResult, spec: &MicroarchSpec, pattern: &ThreatPattern) -> bool {
    let mut bare = r.program.clone();
    bare.roles.clear();
    if canonicalize(&bare) != bare || !crate::litmus::well_formed(&bare, spec).ok() {
        return false;
    }
    if r.embedding.roles() != r.program.roles || classify(&r.program, &r.embedding) != r.variant {
        return false;
    }
    let graphs = enumerate_executions(spec, &bare);
    if !graphs.contains(&r.witness) {
        return false;
    }
    match_pattern(pattern, &bare, &r.witness).contains(&r.embedding)
}

/// Drops results that have a proper sub-program (some instructions deleted)
/// among the results of the same variant.
pub fn filter_minimal(results: &[SynthResult]) -> Vec<SynthResult> {
    let known: BTreeSet<(VariantTag, LitmusProgram)> =
        results.iter().map(|r| (r.variant, bare(&r.program))).collect();
    results
        .iter()
        .filter(|r| {
            let p = bare(&r.program);
            !sub_programs(&p).into_iter().any(|q| known.contains(&(r.variant, q)))
        })
        .cloned()
        .collect()
}

fn bare(p: &LitmusProgram) -> LitmusProgram {
    let mut p = p.clone();
    p.roles.clear();
    p
}

/// Canonical forms of every well-defined program obtained by deleting one or
/// more instructions.
fn sub_programs(p: &LitmusProgram) -> BTreeSet<LitmusProgram> {
    let mut seen: BTreeSet<LitmusProgram> = BTreeSet::new();
    let mut frontier = vec![p.clone()];
    while let Some(q) = frontier.pop() {
        for id in q.ids().collect::<Vec<_>>() {
            let Some(r) = q.without(id) else { continue };
            if r.is_empty() {
                continue;
            }
            let r = canonicalize(&r);
            if seen.insert(r.clone()) {
                frontier.push(r);
            }
        }
    }
    seen
}

/// Synthesis on `spec` plus `fence_axiom`, restricted to candidates whose
/// every speculation window opens with a fence.
pub fn mitigation_check(
    spec: &MicroarchSpec,
    pattern: &ThreatPattern,
    bounds: &SynthesisBounds,
    fence_axiom: Axiom,
    opts: &SynthOptions,
) -> Result<Vec<SynthResult>, SynthError> {
    let fenced = spec.clone().with_axiom(fence_axiom);
    search(&fenced, pattern, bounds, opts, fenced_windows)
}

/// True when the program speculates and a fence opens each window.
pub fn fenced_windows(p: &LitmusProgram) -> bool {
    let mut windows = 0;
    for th in &p.threads {
        let sources: BTreeSet<usize> = th.instructions.iter().filter_map(|i| i.speculative_under).collect();
        for s in sources {
            windows += 1;
            let first = th.instructions.get(s + 1);
            let fenced = first.is_some_and(|f| {
                f.opcode == Opcode::Fence && f.speculative_under == Some(s)
            });
            if !fenced {
                return false;
            }
        }
    }
    windows > 0
}

impl fmt::Display for SynthResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant: {}", self.variant)?;
        f.write_str(&render_program(&self.program))
    }
}
