use uhb_synth::dsl::{builtin_spec, Builtin};
use uhb_synth::litmus::*;
use uhb_synth::patterns::*;
use uhb_synth::uhb::*;

fn meltdown() -> LitmusProgram {
    LitmusProgram::build(
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
    .deny(Actor::Attacker, "p1", true, false)
}

fn embeddings(pattern: &ThreatPattern, spec: &uhb_synth::dsl::MicroarchSpec, p: &LitmusProgram) -> usize {
    enumerate_executions(spec, p)
        .iter()
        .map(|g| match_pattern(pattern, p, g).len())
        .sum()
}

const SOURCED: &str = "pattern sourced
instr w: any committed write
instr r: any committed read
vicl v
require creates(w, v)
require sources(r, v)
";

/// Hand-written count of (write, read, ViCL) triples where the read is
/// sourced from a ViCL the write created.
fn sourced_oracle(p: &LitmusProgram, g: &UhbGraph) -> usize {
    let mut n = 0;
    for w in p.ids() {
        let wi = p.instr(w);
        if wi.opcode != Opcode::Write || wi.squashed {
            continue;
        }
        for r in p.ids() {
            let ri = p.instr(r);
            if ri.opcode != Opcode::Read || ri.squashed {
                continue;
            }
            n += g
                .vicls
                .iter()
                .filter(|v| v.origin == w && g.source_of(r) == Some(v.create))
                .count();
        }
    }
    n
}

#[test]
fn matcher_agrees_with_a_hand_written_oracle() {
    let pattern = parse_pattern(SOURCED).unwrap();
    for b in Builtin::ALL {
        let spec = builtin_spec(b);
        let mut total = 0;
        for_each_candidate(&spec, &SynthesisBounds::new(3, 2, 2, 2), |p| {
            for g in enumerate_executions(&spec, &p) {
                let got = match_pattern(&pattern, &p, &g).len();
                assert_eq!(got, sourced_oracle(&p, &g), "{}", render_program(&p));
                total += got;
            }
        });
        assert!(total > 0);
    }
}

#[test]
fn meltdown_shape_matches_flush_reload_only() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let p = meltdown();
    assert!(well_formed(&p, &spec).ok());
    assert!(embeddings(&flush_reload_pattern(), &spec, &p) > 0);
    assert_eq!(embeddings(&prime_probe_pattern(), &spec, &p), 0);
}

#[test]
fn embedding_binds_the_expected_roles() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let p = meltdown();
    let roles: Vec<_> = enumerate_executions(&spec, &p)
        .iter()
        .flat_map(|g| match_pattern(&flush_reload_pattern(), &p, g))
        .map(|e| e.roles())
        .collect();
    assert!(!roles.is_empty());
    for r in roles {
        assert_eq!(r["flush"], InstrId::new(0, 0));
        assert_eq!(r["secret"], InstrId::new(0, 1));
        assert_eq!(r["filler"], InstrId::new(0, 2));
        assert_eq!(r["reload"], InstrId::new(0, 3));
    }
}

#[test]
fn reload_of_another_line_does_not_match() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let mut p = meltdown();
    p.threads[0].instructions[3] = Instruction::read("c");
    p.address_map.insert(
        "c".into(),
        AddrEntry {
            paddr: "p2".into(),
            set: 0,
        },
    );
    assert_eq!(embeddings(&flush_reload_pattern(), &spec, &p), 0);
}

#[test]
fn independent_refill_is_forbidden() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let mut p = meltdown();
    p.threads[0].instructions.insert(3, Instruction::read("a").under(1));
    assert_eq!(embeddings(&flush_reload_pattern(), &spec, &p), 0);
}

#[test]
fn trivial_programs_do_not_match() {
    for b in Builtin::ALL {
        let spec = builtin_spec(b);
        let fence = LitmusProgram::build(vec![(Actor::Attacker, vec![Instruction::fence()])], &[]);
        let empty = UhbGraph::default();
        for pat in BuiltinPattern::ALL {
            let pattern = pat.pattern();
            assert!(match_pattern(&pattern, &fence, &empty).is_empty());
            assert_eq!(embeddings(&pattern, &spec, &fence), 0);
            assert!(!static_match(&pattern, &fence));
        }
    }
}

#[test]
fn attacker_committed_fillers_are_excluded() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let mut p = meltdown();
    // The dependent read commits: an ordinary attacker access.
    p.threads[0].instructions[1] = Instruction::read("b");
    p.threads[0].instructions[2] = Instruction::read("a").dep(1);
    p.permissions.clear();
    assert_eq!(embeddings(&flush_reload_pattern(), &spec, &p), 0);
}

#[test]
fn static_match_is_implied_by_an_embedding() {
    let spec = builtin_spec(Builtin::TwoCoreInvalidation);
    for pat in BuiltinPattern::ALL {
        let pattern = pat.pattern();
        for_each_candidate(&spec, &SynthesisBounds::new(4, 2, 2, 2), |p| {
            if static_match(&pattern, &p) {
                return;
            }
            for g in enumerate_executions(&spec, &p) {
                assert!(match_pattern(&pattern, &p, &g).is_empty(), "{}", render_program(&p));
            }
        });
    }
}

#[test]
fn forbidden_roles_round_trip() {
    let text = "pattern p
instr a: attacker committed read
instr b forbidden: any any write
require same_addr(a, b)
";
    let p = parse_pattern(text).unwrap();
    assert_eq!(p.var("b").unwrap().mode, VarMode::Forbidden);
    assert_eq!(parse_pattern(&render_pattern(&p)).unwrap(), p);
    let two = "pattern p
instr a forbidden: any any read
instr b forbidden: any any write
require same_addr(a, b)
";
    assert!(parse_pattern(two).is_err());
}
