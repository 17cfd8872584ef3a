use std::collections::BTreeSet;

use uhb_synth::dsl::{builtin_spec, fence_axiom, Builtin, MicroarchSpec};
use uhb_synth::litmus::*;
use uhb_synth::patterns::*;
use uhb_synth::synth::*;
use uhb_synth::uhb::enumerate_executions;

fn bounds(n: usize) -> SynthesisBounds {
    SynthesisBounds::new(n, 2, 2, 2)
}

/// Candidates, executions and matching with no pre-filter: the programs
/// with an embedding, paired with the first embedding of the first
/// matching execution.
fn brute_force(spec: &MicroarchSpec, pattern: &ThreatPattern, n: usize) -> Vec<(LitmusProgram, Embedding)> {
    let mut out = Vec::new();
    for p in enumerate_candidates(spec, &bounds(n)) {
        for g in enumerate_executions(spec, &p) {
            if let Some(e) = match_pattern(pattern, &p, &g).into_iter().next() {
                out.push((p.clone(), e));
                break;
            }
        }
    }
    out.sort_by_key(|(p, _)| (p.len(), render_program(p)));
    out
}

fn bare(p: &LitmusProgram) -> LitmusProgram {
    let mut p = p.clone();
    p.roles.clear();
    p
}

#[test]
fn synthesis_equals_brute_force_at_four_instructions() {
    for b in Builtin::ALL {
        let spec = builtin_spec(b);
        for pat in BuiltinPattern::ALL {
            let pattern = pat.pattern();
            let got: Vec<(LitmusProgram, Embedding)> = synthesize(&spec, &pattern, &bounds(4))
                .unwrap()
                .into_iter()
                .map(|r| (bare(&r.program), r.embedding))
                .collect();
            assert_eq!(got, brute_force(&spec, &pattern, 4), "{b} {pat}");
        }
    }
}

#[test]
fn every_result_verifies_and_round_trips() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let pattern = flush_reload_pattern();
    let results = synthesize(&spec, &pattern, &bounds(4)).unwrap();
    assert!(!results.is_empty());
    for r in &results {
        assert!(verify_result(r, &spec, &pattern), "{r}");
        assert_eq!(&SynthResult::from_json(&r.to_json()).unwrap(), r);
    }
}

#[test]
fn tampered_witness_fails_verification() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let pattern = flush_reload_pattern();
    let mut r = synthesize(&spec, &pattern, &bounds(4)).unwrap().remove(0);
    r.witness.edges.pop();
    assert!(!verify_result(&r, &spec, &pattern));
}

#[test]
fn relabelled_variant_fails_verification() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let pattern = flush_reload_pattern();
    let mut r = synthesize(&spec, &pattern, &bounds(4)).unwrap().remove(0);
    r.variant = if r.variant == VariantTag::Other { VariantTag::SpectreShape } else { VariantTag::Other };
    assert!(!verify_result(&r, &spec, &pattern));
}

#[test]
fn minimal_filter_drops_a_fenced_superset() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let pattern = flush_reload_pattern();
    let small = synthesize(&spec, &pattern, &bounds(4))
        .unwrap()
        .into_iter()
        .find(|r| r.variant == VariantTag::MeltdownShape)
        .expect("a four-instruction meltdown shape");
    let mut big = small.clone();
    big.program.threads[0].instructions.push(Instruction::fence());
    big.program = canonicalize(&bare(&big.program));
    assert_ne!(big.program, bare(&small.program));
    let kept = filter_minimal(&[big.clone(), small.clone()]);
    assert_eq!(kept, vec![small.clone()]);
    // A superset of a different variant is kept.
    big.variant = VariantTag::Other;
    assert_eq!(filter_minimal(&[big.clone(), small.clone()]).len(), 2);
}

#[test]
fn minimal_filter_is_idempotent() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let results = synthesize(&spec, &flush_reload_pattern(), &bounds(5)).unwrap();
    let once = filter_minimal(&results);
    assert!(once.len() < results.len());
    assert_eq!(filter_minimal(&once), once);
}

#[test]
fn dropping_the_prime_read_leaves_no_result() {
    let spec = builtin_spec(Builtin::TwoCoreInvalidation);
    let pattern = prime_probe_pattern();
    let results = synthesize(&spec, &pattern, &bounds(5)).unwrap();
    let r = results
        .iter()
        .find(|r| r.variant == VariantTag::MeltdownPrimeShape)
        .expect("a meltdown prime shape at five instructions");
    let prime = r.program.roles["prime"];
    let smaller = canonicalize(&bare(&r.program).without(prime).expect("prime is unreferenced"));
    let same_variant = check_candidate(&spec, &pattern, &smaller).map(|s| s.variant);
    assert_ne!(same_variant, Some(r.variant));
}

#[test]
fn an_extra_axiom_never_adds_results() {
    for b in Builtin::ALL {
        let spec = builtin_spec(b);
        let fenced = spec.with_axiom(fence_axiom(&spec));
        for pat in BuiltinPattern::ALL {
            let pattern = pat.pattern();
            let base: BTreeSet<LitmusProgram> = synthesize(&spec, &pattern, &bounds(4))
                .unwrap()
                .iter()
                .map(|r| bare(&r.program))
                .collect();
            let constrained: BTreeSet<LitmusProgram> = synthesize(&fenced, &pattern, &bounds(4))
                .unwrap()
                .iter()
                .map(|r| bare(&r.program))
                .collect();
            assert!(constrained.is_subset(&base), "{b} {pat}");
        }
    }
}

#[test]
fn without_speculation_no_filler_is_squashed() {
    let mut spec = builtin_spec(Builtin::OooSingleCore);
    spec.speculation = Default::default();
    let results = synthesize(&spec, &flush_reload_pattern(), &bounds(4)).unwrap();
    for r in &results {
        assert!(!r.program.instr(r.program.roles["filler"]).squashed, "{r}");
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let spec = builtin_spec(Builtin::TwoCoreInvalidation);
    let pattern = prime_probe_pattern();
    let one = synthesize(&spec, &pattern, &bounds(4)).unwrap();
    let three = synthesize_with(&spec, &pattern, &bounds(4), &SynthOptions { workers: 3, ..Default::default() }).unwrap();
    assert_eq!(one, three);
}

#[test]
fn ceiling_is_an_error() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let opts = SynthOptions { workers: 1, ceiling: 10 };
    let err = synthesize_with(&spec, &flush_reload_pattern(), &bounds(3), &opts).unwrap_err();
    let SynthError::TooManyCandidates { count, ceiling } = err;
    assert_eq!(ceiling, 10);
    assert_eq!(count, count_candidates(&spec, &bounds(3)));
}

#[test]
fn one_instruction_has_no_results() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    assert!(synthesize(&spec, &flush_reload_pattern(), &bounds(1)).unwrap().is_empty());
}

#[test]
fn results_are_written_with_an_index() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let results = synthesize(&spec, &flush_reload_pattern(), &bounds(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_results(dir.path(), &results).unwrap();
    let index = std::fs::read_to_string(dir.path().join("index.txt")).unwrap();
    assert!(index.starts_with(&format!("results {}\n", results.len())));
    let first = dir.path().join("r0001");
    for f in ["test.litmus.json", "witness.dot", "summary.txt", "result.json"] {
        assert!(first.join(f).is_file(), "{f}");
    }
    assert!(write_results(dir.path(), &results).is_err());
}
