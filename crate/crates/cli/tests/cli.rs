use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uhbsynth"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "synth",
        "--spec",
        "ooo_single_core",
        "--pattern",
        "flush_reload",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_finds_both_flush_reload_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = synth(&out, &["--max-instr", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let index = fs::read_to_string(out.join("index.txt")).unwrap();
    assert!(index.contains("variant meltdown_shape"), "{index}");
    assert!(index.contains("variant spectre_shape"), "{index}");
}

#[test]
fn synth_is_byte_identical_across_runs_and_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(synth(&a, &["--max-instr", "4"]).status.success());
    assert!(synth(&b, &["--max-instr", "4", "--workers", "3"]).status.success());
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn synth_all_writes_at_least_the_minimal_set() {
    let tmp = tempfile::tempdir().unwrap();
    let (min, all) = (tmp.path().join("min"), tmp.path().join("all"));
    assert!(synth(&min, &["--max-instr", "5"]).status.success());
    assert!(synth(&all, &["--max-instr", "5", "--all"]).status.success());
    assert!(tree(&all).len() > tree(&min).len());
}

#[test]
fn empty_synthesis_needs_allow_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let o = synth(&tmp.path().join("a"), &["--max-instr", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = synth(&tmp.path().join("b"), &["--max-instr", "1", "--allow-empty"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(fs::read_to_string(tmp.path().join("b/index.txt")).unwrap().starts_with("results 0\n"));
}

#[test]
fn exit_codes_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_spec = tmp.path().join("bad.uspec");
    fs::write(&bad_spec, "machine\n").unwrap();
    let o = run(&[
        "synth",
        "--spec",
        bad_spec.to_str().unwrap(),
        "--pattern",
        "flush_reload",
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = synth(&tmp.path().join("y"), &["--max-instr", "4", "--ceiling", "10"]);
    assert_eq!(o.status.code(), Some(3));
    let o = synth(&tmp.path().join("z"), &["--max-instr", "0"]);
    assert_eq!(o.status.code(), Some(3));
    let busy = tmp.path().join("busy");
    fs::create_dir(&busy).unwrap();
    fs::write(busy.join("keep"), "").unwrap();
    assert_eq!(synth(&busy, &["--max-instr", "3"]).status.code(), Some(5));
    let o = run(&["render", tmp.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    let junk = tmp.path().join("junk.json");
    fs::write(&junk, "{").unwrap();
    let o = run(&["render", junk.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_reports_the_meltdown_prime_shape() {
    let o = run(&[
        "check",
        data("meltdown_prime.litmus.json").to_str().unwrap(),
        "--spec",
        "two_core_invalidation",
        "--pattern",
        "prime_probe",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let embeddings: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("embeddings: "))
        .and_then(|l| l.split_whitespace().next())
        .and_then(|n| n.parse().ok())
        .unwrap();
    assert!(embeddings >= 1);
    assert!(text.contains("acyclic: yes"));
    assert!(text.contains("swmr: pass"));
}

#[test]
fn check_verifies_results_and_rejects_tampering() {
    let args = |f: &Path| {
        run(&[
            "check",
            f.to_str().unwrap(),
            "--spec",
            "two_core_invalidation",
            "--pattern",
            "prime_probe",
        ])
    };
    let good = data("spectre_prime.result.json");
    let o = args(&good);
    assert!(o.status.success());
    assert!(stdout(&o).contains("verify: pass"));

    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&good).unwrap()).unwrap();
    v["witness"]["edges"].as_array_mut().unwrap().pop();
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(args(&bad).status.code(), Some(4));
}

#[test]
fn check_reports_when_no_execution_is_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("cyclic.uspec");
    let base = uhb_synth_spec_text();
    fs::write(&spec, format!("{base}{CYCLE}")).unwrap();
    let o = run(&[
        "check",
        data("meltdown_prime.litmus.json").to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--pattern",
        "prime_probe",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("no consistent execution"));
}

const CYCLE: &str = "\naxiom cycle: forall a => a.Execute -> a.Fetch\n";

fn uhb_synth_spec_text() -> &'static str {
    uhb_synth::dsl::Builtin::TwoCoreInvalidation.source()
}

#[test]
fn render_prints_dot() {
    let o = run(&["render", data("spectre_prime.result.json").to_str().unwrap(), "--dot"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("digraph"));
    let o = run(&[
        "render",
        data("spectre_prime.litmus.json").to_str().unwrap(),
        "--dot",
        "--spec",
        "two_core_invalidation",
    ]);
    assert!(stdout(&o).starts_with("digraph"));
    let o = run(&["render", data("spectre_prime.litmus.json").to_str().unwrap()]);
    assert!(stdout(&o).contains("role probe = t0.1"));
}

#[test]
fn render_of_an_empty_graph_is_a_valid_digraph() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("cyclic.uspec");
    fs::write(&spec, format!("{}{CYCLE}", uhb_synth_spec_text())).unwrap();
    let o = run(&[
        "render",
        data("spectre_prime.litmus.json").to_str().unwrap(),
        "--dot",
        "--spec",
        spec.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("digraph"));
    assert!(text.trim_end().ends_with('}'));
}

#[test]
fn sim_shows_differing_probe_classes() {
    let file = data("spectre_prime.litmus.json");
    let class = |secret: &str| {
        let o = run(&["sim", file.to_str().unwrap(), "--secret", secret]);
        assert!(o.status.success());
        let text = stdout(&o);
        let row = text.lines().nth(1).unwrap().to_string();
        row.split_whitespace().nth(3).unwrap().to_string()
    };
    assert_eq!(class("1"), "miss");
    assert_eq!(class("0"), "hit");
    let o = run(&["sim", file.to_str().unwrap()]);
    assert!(stdout(&o).contains("leak: yes"));
    let o = run(&["sim", file.to_str().unwrap(), "--no-speculative-invalidation"]);
    assert!(stdout(&o).contains("leak: no"));
}

#[test]
fn expand_matches_the_golden_skeleton() {
    let o = run(&[
        "expand",
        data("spectre_prime.litmus.json").to_str().unwrap(),
        "--variant",
        "spectre_prime_shape",
        "--inclusive",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let golden = fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/spectre_prime.attack.txt"),
    )
    .unwrap();
    assert_eq!(stdout(&o), golden);
}

#[test]
fn expand_rejects_a_narrow_stride() {
    let o = run(&[
        "expand",
        data("spectre_prime.result.json").to_str().unwrap(),
        "--line-size",
        "64",
        "--stride",
        "32",
    ]);
    assert_eq!(o.status.code(), Some(2));
}
