use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use proptest::prelude::*;
use uhb_synth::dsl::{builtin_spec, Builtin, MicroarchSpec};
use uhb_synth::litmus::*;

/// Generates every raw program within the bounds with arbitrary symbol
/// names, keeps the well-formed ones and collapses isomorphic copies.
fn naive(spec: &MicroarchSpec, max_instr: usize, max_threads: usize, vaddrs: &[&str], paddrs: &[&str]) -> BTreeSet<LitmusProgram> {
    let num_sets = spec.l1().unwrap().num_sets;
    let raw_instrs = |len: usize| -> Vec<Vec<Instruction>> {
        let mut singles: Vec<Vec<Instruction>> = vec![vec![]];
        for _ in 0..len {
            let mut next = Vec::new();
            for prefix in &singles {
                for op in [Opcode::Read, Opcode::Write, Opcode::Flush, Opcode::Fence, Opcode::Branch] {
                    let addrs: Vec<Option<&str>> = if op.is_access() {
                        vaddrs.iter().map(|v| Some(*v)).collect()
                    } else {
                        vec![None]
                    };
                    for a in addrs {
                        for dep in std::iter::once(None).chain((0..len).map(Some)) {
                            for under in std::iter::once(None).chain((0..len).map(Some)) {
                                let mut ins = Instruction::new(op, a);
                                ins.dep_on = dep;
                                ins.speculative_under = under;
                                ins.squashed = under.is_some();
                                let mut p = prefix.clone();
                                p.push(ins);
                                next.push(p);
                            }
                        }
                    }
                }
            }
            singles = next;
        }
        singles
    };
    let mut maps: Vec<BTreeMap<String, AddrEntry>> = vec![BTreeMap::new()];
    for v in vaddrs {
        let mut next = Vec::new();
        for m in &maps {
            for p in paddrs {
                for s in 0..num_sets {
                    let mut m = m.clone();
                    m.insert(v.to_string(), AddrEntry { paddr: p.to_string(), set: s });
                    next.push(m);
                }
            }
        }
        maps = next;
    }
    // Victim denials are rejected outright, so only attacker tables vary.
    let mut perms: Vec<Vec<PermissionEntry>> = vec![vec![]];
    for actor in [Actor::Attacker] {
        for p in paddrs {
            let mut next = Vec::new();
            for base in &perms {
                for (r, w) in [(true, true), (false, true), (true, false), (false, false)] {
                    let mut b = base.clone();
                    if !(r && w) {
                        b.push(PermissionEntry { actor, paddr: p.to_string(), read: r, write: w });
                    }
                    next.push(b);
                }
            }
            perms = next;
        }
    }
    let mut out = BTreeSet::new();
    for total in 1..=max_instr {
        for threads in 1..=max_threads.min(total) {
            let splits: Vec<Vec<usize>> = match threads {
                1 => vec![vec![total]],
                2 => (1..total).map(|a| vec![a, total - a]).collect(),
                _ => unreachable!(),
            };
            for split in splits {
                let bodies: Vec<Vec<Vec<Instruction>>> = split.iter().map(|&l| raw_instrs(l)).collect();
                let mut combos: Vec<Vec<Vec<Instruction>>> = vec![vec![]];
                for b in &bodies {
                    let mut next = Vec::new();
                    for c in &combos {
                        for body in b {
                            let mut c = c.clone();
                            c.push(body.clone());
                            next.push(c);
                        }
                    }
                    combos = next;
                }
                for combo in combos {
                    for actor_mask in 0..(1 << threads) {
                        let threads_v: Vec<Thread> = combo
                            .iter()
                            .enumerate()
                            .map(|(i, body)| Thread {
                                actor: if actor_mask >> i & 1 == 0 { Actor::Attacker } else { Actor::Victim },
                                core: i,
                                instructions: body.clone(),
                            })
                            .collect();
                        for m in &maps {
                            for perm in &perms {
                                let used: BTreeSet<&str> = m.values().map(|e| e.paddr.as_str()).collect();
                                let p = LitmusProgram {
                                    threads: threads_v.clone(),
                                    address_map: m.clone(),
                                    permissions: perm.clone(),
                                    initial_values: used.iter().map(|p| (p.to_string(), 0)).collect(),
                                    roles: BTreeMap::new(),
                                };
                                if well_formed(&p, spec).ok() {
                                    out.insert(canonicalize(&p));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn enumerated(spec: &MicroarchSpec, bounds: SynthesisBounds) -> BTreeSet<LitmusProgram> {
    let all = enumerate_candidates(spec, &bounds);
    let set: BTreeSet<LitmusProgram> = all.iter().cloned().collect();
    assert_eq!(set.len(), all.len(), "enumerator yielded a duplicate");
    set
}

#[test]
fn size_one_attacker_programs_match_hand_count() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let progs = enumerate_candidates(&spec, &SynthesisBounds::new(1, 1, 1, 1));
    let mut listed: Vec<String> = progs.iter().map(|p| render_program(p).lines().nth(1).unwrap().to_string()).collect();
    listed.sort();
    // Read and Write, each legal or faulting, plus Flush. A fence must open a
    // speculation window, so it never stands alone.
    assert_eq!(
        listed,
        [
            "  0: Flush a",
            "  0: Read a",
            "  0: Read a illegal squashed under 0",
            "  0: Write a = 1",
            "  0: Write a = 1 illegal squashed under 0",
        ]
    );
}

#[test]
fn size_two_single_thread_matches_naive_generator() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let want = naive(&spec, 2, 1, &["x"], &["q"]);
    let got = enumerated(&spec, SynthesisBounds::new(2, 1, 1, 1));
    assert_eq!(got, want);
}

#[test]
fn size_two_two_threads_matches_naive_generator() {
    let spec = builtin_spec(Builtin::TwoCoreInvalidation);
    let want = naive(&spec, 2, 2, &["x"], &["q"]);
    let got = enumerated(&spec, SynthesisBounds::new(2, 2, 1, 1));
    assert_eq!(got, want);
}

#[test]
fn size_two_two_addresses_matches_naive_generator() {
    let spec = builtin_spec(Builtin::OooSingleCore);
    let want = naive(&spec, 2, 1, &["y", "x"], &["q", "r"]);
    let got = enumerated(&spec, SynthesisBounds::new(2, 1, 2, 2));
    assert_eq!(got, want);
}

#[test]
fn every_candidate_is_well_formed_and_canonical() {
    for b in Builtin::ALL {
        let spec = builtin_spec(b);
        for_each_candidate(&spec, &SynthesisBounds::new(3, 2, 2, 2), |p| {
            let r = well_formed(&p, &spec);
            assert!(r.ok(), "{}\n{:?}", render_program(&p), r);
            assert_eq!(canonicalize(&p), p);
        });
    }
}

#[test]
fn count_agrees_with_enumeration() {
    let spec = builtin_spec(Builtin::TwoCoreInvalidation);
    let b = SynthesisBounds::new(3, 2, 2, 2);
    assert_eq!(count_candidates(&spec, &b), enumerate_candidates(&spec, &b).len() as u64);
}

#[test]
fn disabled_features_shrink_the_space() {
    let mut spec = builtin_spec(Builtin::OooSingleCore);
    let b = SynthesisBounds::new(3, 1, 2, 2);
    let full = count_candidates(&spec, &b);
    spec.speculation.allows_branch_misprediction = false;
    let no_branch = count_candidates(&spec, &b);
    spec.has_flush_instruction = false;
    let no_flush = count_candidates(&spec, &b);
    assert!(full > no_branch && no_branch > no_flush);
    for_each_candidate(&spec, &b, |p| {
        assert!(p.ids().all(|id| !matches!(p.instr(id).opcode, Opcode::Flush | Opcode::Branch)));
    });
}

fn spectre(names: [&str; 2], paddrs: [&str; 2], sets: [usize; 2]) -> LitmusProgram {
    let [a, k] = names;
    LitmusProgram::build(
        vec![(
            Actor::Attacker,
            vec![
                Instruction::flush(a),
                Instruction::branch(),
                Instruction::read(k).under(1),
                Instruction::read(a).dep(2).under(1),
                Instruction::read(a),
            ],
        )],
        &[(a, paddrs[0], sets[0]), (k, paddrs[1], sets[1])],
    )
}

#[test]
fn isomorphic_spectre_programs_share_a_canonical_form() {
    let p = spectre(["x", "secret"], ["m", "n"], [1, 0]);
    let q = spectre(["probe", "key"], ["p9", "p3"], [0, 1]);
    assert_ne!(p, q);
    assert_eq!(canonicalize(&p), canonicalize(&q));
    let c = canonicalize(&p);
    assert_eq!(c.threads[0].instructions[0].vaddr.as_deref(), Some("a"));
    assert_eq!(c.address_map["b"].paddr, "p1");
}

#[test]
fn json_round_trip() {
    let mut p = canonicalize(&spectre(["a", "b"], ["p0", "p1"], [0, 1]));
    p.roles.insert("reload".into(), InstrId::new(0, 4));
    let back = LitmusProgram::from_json(&p.to_json()).unwrap();
    assert_eq!(back, p);
}

fn corpus() -> &'static [LitmusProgram] {
    static CORPUS: OnceLock<Vec<LitmusProgram>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        enumerate_candidates(&builtin_spec(Builtin::TwoCoreInvalidation), &SynthesisBounds::new(4, 2, 2, 2))
    })
}

/// Renames symbols and reverses thread order by hand.
fn scramble(p: &LitmusProgram, salt: usize) -> LitmusProgram {
    let vname = |v: &str| format!("v{}_{salt}", v);
    let pname = |q: &str| format!("{q}x{salt}");
    let mut threads = p.threads.clone();
    threads.reverse();
    for (i, t) in threads.iter_mut().enumerate() {
        t.core = i;
        for ins in &mut t.instructions {
            ins.vaddr = ins.vaddr.as_deref().map(vname);
        }
    }
    let flip = salt % 2 == 1;
    LitmusProgram {
        threads,
        address_map: p
            .address_map
            .iter()
            .map(|(v, e)| {
                let set = if flip { 1 - e.set } else { e.set };
                (vname(v), AddrEntry { paddr: pname(&e.paddr), set })
            })
            .collect(),
        permissions: p
            .permissions
            .iter()
            .map(|e| PermissionEntry { paddr: pname(&e.paddr), ..e.clone() })
            .collect(),
        initial_values: p.initial_values.iter().map(|(k, v)| (pname(k), *v)).collect(),
        roles: BTreeMap::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn canonicalize_is_idempotent_and_renaming_invariant(idx in any::<prop::sample::Index>(), salt in 0usize..8) {
        let p = idx.get(corpus());
        let c = canonicalize(p);
        prop_assert_eq!(&canonicalize(&c), &c);
        prop_assert_eq!(&canonicalize(&scramble(p, salt)), &c);
    }
}
