use std::collections::BTreeMap;
use std::fmt::Write;

use super::*;

/// Graphviz rendering with one cluster per core. Stage nodes of the same
/// stage share a rank so instructions line up in columns.
pub fn to_dot(g: &UhbGraph) -> String {
    let mut out = String::from("digraph uhb {\n  rankdir=TB;\n  node [shape=box, fontsize=10];\n");
    let mut cores: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        cores.entry(n.core()).or_default().push(i);
    }
    for (core, ids) in &cores {
        let _ = writeln!(out, "  subgraph cluster_core{core} {{\n    label=\"core {core}\";");
        let mut ranks: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for &i in ids {
            let n = &g.nodes[i];
            let shape = match n {
                UhbNode::Stage { .. } => "box",
                UhbNode::ViclCreate { .. } | UhbNode::ViclExpire { .. } => "ellipse",
                _ => "diamond",
            };
            let _ = writeln!(out, "    n{i} [label=\"{}\", shape={shape}];", escape(&n.to_string()));
            if let UhbNode::Stage { stage, .. } = n {
                ranks.entry(stage).or_default().push(i);
            }
        }
        for ids in ranks.values() {
            let list: Vec<String> = ids.iter().map(|i| format!("n{i}")).collect();
            let _ = writeln!(out, "    {{ rank=same; {} }}", list.join("; "));
        }
        out.push_str("  }\n");
    }
    for e in &g.edges {
        let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"];", e.src, e.dst, escape(&e.label));
    }
    out.push_str("}\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
