use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uhb_synth::dsl::{builtin_spec, parse_spec, Builtin, MicroarchSpec};
use uhb_synth::expander::{expand_with, render_skeleton, CacheGeometry, ExpandOptions};
use uhb_synth::litmus::{render_program, well_formed, LitmusProgram, SynthesisBounds};
use uhb_synth::patterns::{match_pattern, parse_pattern, BuiltinPattern, ThreatPattern};
use uhb_synth::sim::{leak_check, render_trace, simulate, SimConfig};
use uhb_synth::synth::{
    filter_minimal, synthesize_with, verify_result, write_results, SynthError, SynthOptions, SynthResult, VariantTag,
    DEFAULT_CEILING,
};
use uhb_synth::uhb::{check_acyclic, check_dv, check_swmr, check_vicl_pairing, explore_executions, to_dot, UhbGraph};

/// Synthesizes, checks and expands security litmus tests.
#[derive(Parser)]
#[command(name = "uhbsynth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate every litmus test within the bounds that embeds the pattern.
    Synth(SynthArgs),
    /// Report executions, embeddings and coherence audits for one test.
    Check(CheckArgs),
    /// Print a test, or with --dot its witness execution as DOT.
    Render(RenderArgs),
    /// Simulate a test and print the attacker's timing observation.
    Sim(SimArgs),
    /// Expand an annotated test into an attack skeleton.
    Expand(ExpandArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Microarchitecture file, or a built-in name (ooo_single_core, two_core_invalidation).
    #[arg(long)]
    spec: String,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Threat pattern file, or a built-in name (flush_reload, prime_probe).
    #[arg(long)]
    pattern: String,
    #[arg(long, default_value_t = 6)]
    max_instr: usize,
    #[arg(long, default_value_t = 2)]
    max_threads: usize,
    #[arg(long, default_value_t = 2)]
    max_vaddrs: usize,
    #[arg(long, default_value_t = 2)]
    max_paddrs: usize,
    /// Results directory; must be empty or absent.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Maximum number of candidate programs to visit.
    #[arg(long, default_value_t = DEFAULT_CEILING)]
    ceiling: u64,
    /// Exit successfully even when nothing is found.
    #[arg(long)]
    allow_empty: bool,
    /// Write every result, not only the minimal ones.
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// A litmus test or result JSON file.
    file: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    pattern: String,
}

#[derive(Args)]
struct RenderArgs {
    /// A litmus test or result JSON file.
    file: PathBuf,
    /// Needed to build an execution for a bare litmus test.
    #[arg(long)]
    spec: Option<String>,
    /// Print the witness (or first execution) as DOT.
    #[arg(long)]
    dot: bool,
}

#[derive(Args)]
struct SimArgs {
    /// A litmus test or result JSON file with role annotations.
    file: PathBuf,
    /// Secret bit; without it both values are simulated and compared.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    secret: Option<u8>,
    #[arg(long, default_value_t = 10)]
    hit_latency: u32,
    #[arg(long, default_value_t = 100)]
    miss_latency: u32,
    #[arg(long, default_value_t = 60)]
    threshold: u32,
    #[arg(long)]
    no_write_allocate: bool,
    /// Squashed writes do not invalidate other cores.
    #[arg(long)]
    no_speculative_invalidation: bool,
    /// Skip every instruction inside a speculation window.
    #[arg(long)]
    no_speculation: bool,
    /// Fences do not stall speculation.
    #[arg(long)]
    weak_fences: bool,
    /// Print the trace as JSON events instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExpandArgs {
    /// A result JSON file, or a litmus test with role annotations.
    file: PathBuf,
    /// Variant tag for a bare litmus test.
    #[arg(long)]
    variant: Option<VariantTag>,
    #[arg(long, default_value_t = 64)]
    line_size: usize,
    #[arg(long, default_value_t = 64)]
    sets: usize,
    #[arg(long, default_value_t = 8)]
    ways: usize,
    #[arg(long)]
    inclusive: bool,
    #[arg(long, default_value_t = 512)]
    stride: usize,
    /// Write the skeleton here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Stable exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Code {
    Empty = 1,
    Parse = 2,
    Bounds = 3,
    Verify = 4,
    Io = 5,
}

struct Failure(Code, String);

type Outcome = Result<(), Failure>;

fn fail<T>(code: Code, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(code, msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Check(a) => cmd_check(a),
        Command::Render(a) => cmd_render(a),
        Command::Sim(a) => cmd_sim(a),
        Command::Expand(a) => cmd_expand(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).or_else(|e| fail(Code::Io, format!("{}: {e}", path.display())))
}

fn load_spec(arg: &str) -> Result<MicroarchSpec, Failure> {
    if let Ok(b) = arg.parse::<Builtin>() {
        return Ok(builtin_spec(b));
    }
    let text = read(Path::new(arg))?;
    parse_spec(&text).or_else(|d| fail(Code::Parse, format!("{arg}:{d}")))
}

fn load_pattern(arg: &str) -> Result<ThreatPattern, Failure> {
    if let Ok(b) = arg.parse::<BuiltinPattern>() {
        return Ok(b.pattern());
    }
    let text = read(Path::new(arg))?;
    parse_pattern(&text).or_else(|d| fail(Code::Parse, format!("{arg}:{d}")))
}

/// A litmus file holds either a full synthesis result or a bare program.
enum Input {
    Result(Box<SynthResult>),
    Program(LitmusProgram),
}

impl Input {
    fn program(&self) -> &LitmusProgram {
        match self {
            Input::Result(r) => &r.program,
            Input::Program(p) => p,
        }
    }
}

fn load_input(path: &Path) -> Result<Input, Failure> {
    let text = read(path)?;
    if let Ok(r) = SynthResult::from_json(&text) {
        return Ok(Input::Result(Box::new(r)));
    }
    LitmusProgram::from_json(&text)
        .map(Input::Program)
        .or_else(|e| fail(Code::Parse, format!("{}: {e}", path.display())))
}

fn bare(p: &LitmusProgram) -> LitmusProgram {
    let mut p = p.clone();
    p.roles.clear();
    p
}

fn cmd_synth(a: SynthArgs) -> Outcome {
    let spec = load_spec(&a.model.spec)?;
    let pattern = load_pattern(&a.pattern)?;
    if [a.max_instr, a.max_threads, a.max_vaddrs, a.max_paddrs, a.workers].contains(&0) {
        return fail(Code::Bounds, "bounds and worker count must be positive");
    }
    let bounds = SynthesisBounds::new(a.max_instr, a.max_threads, a.max_vaddrs, a.max_paddrs);
    let opts = SynthOptions {
        workers: a.workers,
        ceiling: a.ceiling,
    };
    let all = synthesize_with(&spec, &pattern, &bounds, &opts).or_else(|e| match e {
        SynthError::TooManyCandidates { .. } => fail(Code::Bounds, e.to_string()),
    })?;
    let results = if a.all { all.clone() } else { filter_minimal(&all) };
    if a.out.exists() && fs::read_dir(&a.out).map_or(true, |mut d| d.next().is_some()) {
        return fail(Code::Io, format!("{} is not an empty directory", a.out.display()));
    }
    write_results(&a.out, &results).or_else(|e| fail(Code::Io, format!("{}: {e}", a.out.display())))?;
    println!("results: {} ({} before minimality filtering)", results.len(), all.len());
    for tag in VariantTag::ALL {
        let n = results.iter().filter(|r| r.variant == tag).count();
        if n > 0 {
            println!("  {tag}: {n}");
        }
    }
    if results.is_empty() && !a.allow_empty {
        return fail(Code::Empty, "no results; pass --allow-empty to accept");
    }
    Ok(())
}

fn cmd_check(a: CheckArgs) -> Outcome {
    let spec = load_spec(&a.model.spec)?;
    let pattern = load_pattern(&a.pattern)?;
    let input = load_input(&a.file)?;
    let prog = bare(input.program());
    let wf = well_formed(&prog, &spec);
    if !wf.ok() {
        for d in &wf.diagnostics {
            println!("ill-formed: {d}");
        }
        return fail(Code::Verify, "the test is not well formed for this microarchitecture");
    }
    let report = explore_executions(&spec, &prog);
    println!("candidate executions: {}", report.considered);
    println!("cyclic: {}", report.cyclic);
    println!("executions: {}", report.graphs.len());
    if report.graphs.is_empty() {
        println!("no consistent execution");
        return Ok(());
    }
    let embeddings: usize = report.graphs.iter().map(|g| match_pattern(&pattern, &prog, g).len()).sum();
    let matching = report.graphs.iter().filter(|g| !match_pattern(&pattern, &prog, g).is_empty()).count();
    println!("embeddings: {embeddings} in {matching} executions");
    let all = |f: &dyn Fn(&UhbGraph) -> bool| if report.graphs.iter().all(f) { "pass" } else { "FAIL" };
    println!("acyclic: {}", if report.graphs.iter().all(check_acyclic) { "yes" } else { "no" });
    if spec.invalidation_based() {
        println!("swmr: {}", all(&|g| check_swmr(g).is_ok()));
    } else {
        println!("swmr: not applicable");
    }
    println!("dv: {}", all(&|g| check_dv(g, &prog).is_ok()));
    println!("vicl pairing: {}", all(&|g| check_vicl_pairing(g).is_ok()));
    if let Input::Result(r) = &input {
        if verify_result(r, &spec, &pattern) {
            println!("verify: pass");
        } else {
            println!("verify: FAIL");
            return fail(Code::Verify, "the result does not verify");
        }
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Outcome {
    let input = load_input(&a.file)?;
    if !a.dot {
        print!("{}", render_program(input.program()));
        return Ok(());
    }
    let graph = match &input {
        Input::Result(r) => r.witness.clone(),
        Input::Program(p) => {
            let Some(spec) = &a.spec else {
                return fail(Code::Parse, "--spec is required to render a bare litmus test as DOT");
            };
            let spec = load_spec(spec)?;
            explore_executions(&spec, &bare(p)).graphs.into_iter().next().unwrap_or_default()
        }
    };
    print!("{}", to_dot(&graph));
    Ok(())
}

fn cmd_sim(a: SimArgs) -> Outcome {
    let cfg = SimConfig {
        hit_latency: a.hit_latency,
        miss_latency: a.miss_latency,
        threshold: a.threshold,
        write_allocate: !a.no_write_allocate,
        invalidation_on_speculative_write: !a.no_speculative_invalidation,
        speculation: !a.no_speculation,
        fence_stalls_speculation: !a.weak_fences,
    };
    cfg.validate().or_else(|e| fail(Code::Parse, e))?;
    let input = load_input(&a.file)?;
    let prog = input.program();
    let secrets: Vec<u8> = a.secret.map_or(vec![0, 1], |s| vec![s]);
    println!("secret  observed  latency  class  inferred");
    let mut traces = Vec::new();
    for &s in &secrets {
        let t = simulate(prog, &cfg, s);
        match &t.observation {
            Some(o) => println!(
                "{s:>6}  {:<8}  {:>7}  {:<5}  {}",
                o.instr.to_string(),
                o.latency,
                if o.hit { "hit" } else { "miss" },
                t.inferred_secret_bit.map_or("-".to_string(), |b| b.to_string())
            ),
            None => println!("{s:>6}  -         -        -      -"),
        }
        traces.push((s, t));
    }
    if a.secret.is_none() {
        println!("leak: {}", if leak_check(prog, &cfg) { "yes" } else { "no" });
    }
    for (s, t) in &traces {
        if a.json {
            println!("{}", serde_json::to_string_pretty(t).expect("traces serialize"));
        } else {
            println!("\ntrace secret {s}\n{}", render_trace(prog, t));
        }
    }
    Ok(())
}

fn cmd_expand(a: ExpandArgs) -> Outcome {
    let input = load_input(&a.file)?;
    let variant = match (&input, a.variant) {
        (_, Some(v)) => v,
        (Input::Result(r), None) => r.variant,
        (Input::Program(_), None) => VariantTag::Other,
    };
    let geom = CacheGeometry {
        line_size: a.line_size,
        num_sets: a.sets,
        associativity: a.ways,
        inclusive: a.inclusive,
    };
    let opts = ExpandOptions {
        stride: a.stride,
        ..ExpandOptions::default()
    };
    let sk = expand_with(input.program(), variant, &geom, &opts).or_else(|e| fail(Code::Parse, e.to_string()))?;
    let text = render_skeleton(&sk);
    match a.out {
        Some(path) => fs::write(&path, text).or_else(|e| fail(Code::Io, format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
