use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use uhb_synth::dsl::{builtin_spec, Builtin};
use uhb_synth::litmus::*;
use uhb_synth::sim::*;

fn with_roles(mut p: LitmusProgram, roles: &[(&str, usize, usize)]) -> LitmusProgram {
    for &(r, t, i) in roles {
        p.roles.insert(r.to_string(), InstrId::new(t, i));
    }
    p
}

fn meltdown() -> LitmusProgram {
    let p = LitmusProgram::build(
        vec![(
            Actor::Attacker,
            vec![
                Instruction::flush("a"),
                Instruction::read("b").under(1),
                Instruction::read("a").dep(1).under(1),
                Instruction::read("a"),
            ],
        )],
        &[("a", "p0", 0), ("b", "p1", 1)],
    )
    .deny(Actor::Attacker, "p1", true, false);
    with_roles(p, &[("flush", 0, 0), ("secret", 0, 1), ("filler", 0, 2), ("reload", 0, 3)])
}

fn spectre() -> LitmusProgram {
    let p = LitmusProgram::build(
        vec![(
            Actor::Attacker,
            vec![
                Instruction::flush("a"),
                Instruction::branch(),
                Instruction::read("b").under(1),
                Instruction::read("a").dep(2).under(1),
                Instruction::read("a"),
            ],
        )],
        &[("a", "p0", 0), ("b", "p1", 1)],
    );
    with_roles(p, &[("flush", 0, 0), ("secret", 0, 2), ("filler", 0, 3), ("reload", 0, 4)])
}

fn spectre_prime() -> LitmusProgram {
    let p = LitmusProgram::build(
        vec![
            (Actor::Attacker, vec![Instruction::read("a"), Instruction::read("a")]),
            (
                Actor::Attacker,
                vec![
                    Instruction::branch(),
                    Instruction::read("b").under(0),
                    Instruction::write("a").dep(1).under(0),
                ],
            ),
        ],
        &[("a", "p0", 0), ("b", "p1", 1)],
    );
    with_roles(p, &[("prime", 0, 0), ("probe", 0, 1), ("secret", 1, 1), ("evictor", 1, 2)])
}

fn observed_hit(p: &LitmusProgram, cfg: &SimConfig, secret: u8) -> bool {
    simulate(p, cfg, secret).observation.expect("observed").hit
}

#[test]
fn meltdown_reload_hits_only_for_a_set_secret() {
    let cfg = SimConfig::default();
    let p = meltdown();
    assert!(observed_hit(&p, &cfg, 1));
    assert!(!observed_hit(&p, &cfg, 0));
    assert_eq!(simulate(&p, &cfg, 1).inferred_secret_bit, Some(1));
    assert_eq!(simulate(&p, &cfg, 0).inferred_secret_bit, Some(0));
    assert!(leak_check(&p, &cfg));
}

#[test]
fn spectre_prime_probe_misses_only_for_a_set_secret() {
    let cfg = SimConfig::default();
    let p = spectre_prime();
    assert!(!observed_hit(&p, &cfg, 1));
    assert!(observed_hit(&p, &cfg, 0));
    assert_eq!(simulate(&p, &cfg, 1).inferred_secret_bit, Some(1));
    assert!(leak_check(&p, &cfg));
}

#[test]
fn ablating_speculative_invalidation_closes_prime_only() {
    let cfg = SimConfig {
        invalidation_on_speculative_write: false,
        ..SimConfig::default()
    };
    assert!(!leak_check(&spectre_prime(), &cfg));
    assert!(leak_check(&meltdown(), &cfg));
    assert!(leak_check(&spectre(), &cfg));
}

#[test]
fn without_speculation_second_accesses_hit() {
    let cfg = SimConfig {
        speculation: false,
        ..SimConfig::default()
    };
    let p = LitmusProgram::build(
        vec![(
            Actor::Attacker,
            vec![
                Instruction::read("a"),
                Instruction::branch(),
                Instruction::write("b").under(1),
                Instruction::read("a"),
            ],
        )],
        &[("a", "p0", 0), ("b", "p1", 0)],
    );
    let t = simulate(&p, &cfg, 1);
    assert_eq!(t.instrs[3].hit, Some(true));
    assert!(!t.instrs[2].executed);
    assert!(!leak_check(&spectre_prime(), &cfg));
}

#[test]
fn fences_open_windows_and_stop_the_leak() {
    let cfg = SimConfig::default();
    for p in [spectre(), meltdown(), spectre_prime()] {
        let fenced = insert_fences(&p);
        assert_eq!(fenced.len(), p.len() + 1);
        assert!(leak_check(&p, &cfg));
        assert!(!fence_leak_check(&fenced, &cfg), "{}", render_program(&fenced));
        // A machine whose fences do not stall speculation still leaks.
        let weak = SimConfig {
            fence_stalls_speculation: false,
            ..cfg
        };
        assert!(leak_check(&fenced, &weak));
    }
}

#[test]
fn fence_after_the_reload_does_not_help() {
    let mut p = spectre();
    p.threads[0].instructions.push(Instruction::fence());
    assert!(fence_leak_check(&p, &SimConfig::default()));
}

#[test]
fn simulation_is_deterministic() {
    let cfg = SimConfig::default();
    for p in [spectre(), meltdown(), spectre_prime()] {
        assert_eq!(simulate(&p, &cfg, 1), simulate(&p, &cfg, 1));
        assert_eq!(render_trace(&p, &simulate(&p, &cfg, 0)), render_trace(&p, &simulate(&p, &cfg, 0)));
    }
}

#[test]
fn config_latencies_are_validated() {
    assert!(SimConfig::default().validate().is_ok());
    let bad = SimConfig {
        threshold: 5,
        ..SimConfig::default()
    };
    assert!(bad.validate().is_err());
}

fn corpus() -> Vec<LitmusProgram> {
    let mut out = Vec::new();
    for b in Builtin::ALL {
        out.extend(enumerate_candidates(&builtin_spec(b), &SynthesisBounds::new(4, 2, 2, 2)));
    }
    out
}

/// The program with every squashed instruction deleted.
fn committed_only(p: &LitmusProgram) -> LitmusProgram {
    let mut q = p.clone();
    let squashed: Vec<InstrId> = p.ids().filter(|&id| p.instr(id).squashed).collect();
    for id in squashed.into_iter().rev() {
        q = q.without(id).expect("squashed instructions are referenced only by squashed ones");
    }
    q
}

/// Final (paddr, state) per (core, set).
fn final_lines(t: &SimTrace) -> BTreeMap<(usize, usize), Option<(String, LineState)>> {
    t.lines.iter().map(|e| ((e.core, e.set), e.line.clone())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn squashed_instructions_leave_no_architectural_state(p in prop::sample::select(corpus())) {
        let cfg = SimConfig::default();
        let q = committed_only(&p);
        let at = secret_paddr(&p);
        let full = simulate_at(&p, &cfg, at.as_deref(), 0);
        let bare = simulate_at(&q, &cfg, at.as_deref(), 0);
        prop_assert_eq!(&full.memory, &bare.memory);
        let committed: Vec<u8> = full.registers.values().copied().collect();
        let reference: Vec<u8> = bare.registers.values().copied().collect();
        prop_assert_eq!(committed, reference);
    }

    #[test]
    fn residue_is_confined_to_speculatively_touched_sets(p in prop::sample::select(corpus())) {
        let cfg = SimConfig::default();
        let q = committed_only(&p);
        // Dropping a whole thread renumbers cores.
        prop_assume!(q.threads.len() == p.threads.len());
        let at = secret_paddr(&p);
        let full = simulate_at(&p, &cfg, at.as_deref(), 0);
        let bare = simulate_at(&q, &cfg, at.as_deref(), 0);
        let touched: BTreeSet<usize> = full
            .instrs
            .iter()
            .filter(|i| i.squashed)
            .filter_map(|i| i.touched.as_deref())
            .filter_map(|pa| p.set_of_paddr(pa))
            .collect();
        let (a, b) = (final_lines(&full), final_lines(&bare));
        let keys: BTreeSet<&(usize, usize)> = a.keys().chain(b.keys()).collect();
        for k in keys {
            let same = a.get(k).cloned().flatten() == b.get(k).cloned().flatten();
            prop_assert!(same || touched.contains(&k.1), "{}", render_program(&p));
        }
    }

    #[test]
    fn coherence_holds_at_every_cycle(p in prop::sample::select(corpus()), secret in 0u8..2) {
        let t = simulate(&p, &SimConfig::default(), secret);
        prop_assert_eq!(t.swmr_violations, 0);
    }
}
