use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use super::*;
use crate::uhb::to_dot;

/// Writes one directory per result plus `index.txt` into `dir`, which must
/// be missing or empty. Each result directory holds `test.litmus.json`,
/// `witness.dot`, `summary.txt` and `result.json`.
pub fn write_results(dir: &Path, results: &[SynthResult]) -> io::Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        return Err(io::Error::new(
            io::ErrorKind::AlreadyExists,
            format!("{} is not empty", dir.display()),
        ));
    }
    fs::create_dir_all(dir)?;
    let mut counts: BTreeMap<VariantTag, usize> = BTreeMap::new();
    let mut lines = String::new();
    for (i, r) in results.iter().enumerate() {
        let name = format!("r{:04}", i + 1);
        let sub = dir.join(&name);
        fs::create_dir(&sub)?;
        fs::write(sub.join("test.litmus.json"), r.program.to_json())?;
        fs::write(sub.join("witness.dot"), to_dot(&r.witness))?;
        fs::write(sub.join("summary.txt"), summary(r))?;
        fs::write(sub.join("result.json"), r.to_json())?;
        *counts.entry(r.variant).or_default() += 1;
        let _ = writeln!(lines, "{name} {} {}", r.variant, r.program.len());
    }
    let mut index = format!("results {}\n", results.len());
    for (v, n) in &counts {
        let _ = writeln!(index, "variant {v} {n}");
    }
    index.push('\n');
    index.push_str(&lines);
    fs::write(dir.join("index.txt"), index)
}

fn summary(r: &SynthResult) -> String {
    let mut s = format!("variant: {}\ninstructions: {}\n", r.variant, r.program.len());
    for (role, id) in r.embedding.roles() {
        let _ = writeln!(s, "role {role}: {id}");
    }
    let _ = writeln!(
        s,
        "witness: {} nodes, {} edges\n",
        r.witness.nodes.len(),
        r.witness.edges.len()
    );
    s.push_str(&render_program(&r.program));
    s
}
