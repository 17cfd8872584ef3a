use std::collections::{BTreeSet, HashSet};

use super::*;
use crate::lex::{statements, Cursor, Diagnostic, ErrorCode, Pos, Tok};

/// Parses and validates `.uspec` text.
pub fn parse_spec(text: &str) -> Result<MicroarchSpec, Diagnostic> {
    let stmts = statements(text)?;
    let mut b = Builder::default();
    for stmt in &stmts {
        let mut cur = Cursor::new(stmt);
        let (kw, kw_pos) = cur.ident()?;
        match kw.as_str() {
            "machine" => {
                let (name, _) = cur.ident()?;
                set_once(&mut b.name, name, kw_pos, "machine")?;
            }
            "cores" => {
                let n = cur.number()? as usize;
                if n == 0 {
                    return Err(Diagnostic::new(ErrorCode::Invalid, kw_pos, "cores must be at least 1"));
                }
                set_once(&mut b.cores, n, kw_pos, "cores")?;
            }
            "stages" => {
                let mut stages = Vec::new();
                while !cur.at_end() {
                    let (s, pos) = cur.ident()?;
                    if RESERVED_POINTS.contains(&s.as_str()) {
                        return Err(Diagnostic::new(
                            ErrorCode::Invalid,
                            pos,
                            format!("`{s}` is reserved and cannot name a stage"),
                        ));
                    }
                    if stages.contains(&s) {
                        return Err(Diagnostic::new(
                            ErrorCode::Invalid,
                            pos,
                            format!("stage `{s}` declared twice"),
                        ));
                    }
                    stages.push(s);
                }
                if stages.is_empty() {
                    return Err(Diagnostic::new(ErrorCode::Invalid, kw_pos, "stage list is empty"));
                }
                set_once(&mut b.stages, stages, kw_pos, "stages")?;
            }
            "access" => {
                let (s, pos) = cur.ident()?;
                set_once(&mut b.access, (s, pos), kw_pos, "access")?;
            }
            "cache" => {
                let (id, id_pos) = cur.ident()?;
                let mut decl = CacheLevelDecl {
                    level_id: id,
                    private_to_core: true,
                    num_sets: 1,
                    inclusive: false,
                };
                while !cur.at_end() {
                    let (attr, pos) = cur.ident()?;
                    match attr.as_str() {
                        "private" => decl.private_to_core = true,
                        "shared" => decl.private_to_core = false,
                        "inclusive" => decl.inclusive = true,
                        "sets" => {
                            let n = cur.number()? as usize;
                            if n == 0 {
                                return Err(Diagnostic::new(ErrorCode::Invalid, pos, "sets must be at least 1"));
                            }
                            decl.num_sets = n;
                        }
                        other => {
                            return Err(Diagnostic::new(
                                ErrorCode::Unknown,
                                pos,
                                format!("unknown cache attribute `{other}`"),
                            ))
                        }
                    }
                }
                if b.caches.iter().any(|c| c.level_id == decl.level_id) {
                    return Err(Diagnostic::new(
                        ErrorCode::Invalid,
                        id_pos,
                        format!("cache level `{}` declared twice", decl.level_id),
                    ));
                }
                b.caches.push(decl);
            }
            "coherence" => {
                let (kind, pos) = cur.ident()?;
                let kind = match kind.as_str() {
                    "none" => CoherenceKind::None,
                    "invalidation" => CoherenceKind::InvalidationBased,
                    other => {
                        return Err(Diagnostic::new(
                            ErrorCode::Unknown,
                            pos,
                            format!("unknown coherence kind `{other}`"),
                        ))
                    }
                };
                let mut visible = false;
                if !cur.at_end() {
                    let (flag, fpos) = cur.ident()?;
                    if flag != "speculative_writes" {
                        return Err(Diagnostic::new(
                            ErrorCode::Unknown,
                            fpos,
                            format!("unknown coherence option `{flag}`"),
                        ));
                    }
                    if kind != CoherenceKind::InvalidationBased {
                        return Err(Diagnostic::new(
                            ErrorCode::Invalid,
                            fpos,
                            "speculative_writes requires invalidation-based coherence",
                        ));
                    }
                    visible = true;
                }
                let policy = CoherencePolicy {
                    kind,
                    speculative_write_requests_visible: visible,
                };
                set_once(&mut b.coherence, policy, kw_pos, "coherence")?;
            }
            "write_allocate" => {
                let v = boolean(&mut cur)?;
                set_once(&mut b.write_allocate, v, kw_pos, "write_allocate")?;
            }
            "flush_instruction" => {
                let v = boolean(&mut cur)?;
                set_once(&mut b.flush, v, kw_pos, "flush_instruction")?;
            }
            "speculate" => {
                let mut policy = SpeculationPolicy::default();
                while !cur.at_end() {
                    let (what, pos) = cur.ident()?;
                    match what.as_str() {
                        "none" => {}
                        "permission" => policy.allows_speculative_loads_past_permission_check = true,
                        "branch" => policy.allows_branch_misprediction = true,
                        "flush" => policy.allows_speculative_flush = true,
                        other => {
                            return Err(Diagnostic::new(
                                ErrorCode::Unknown,
                                pos,
                                format!("unknown speculation kind `{other}`"),
                            ))
                        }
                    }
                }
                set_once(&mut b.speculation, policy, kw_pos, "speculate")?;
            }
            "axiom" => {
                let axiom = parse_axiom(&mut cur)?;
                b.axioms.push((axiom, kw_pos));
            }
            other => {
                return Err(Diagnostic::new(
                    ErrorCode::Unknown,
                    kw_pos,
                    format!("unknown declaration `{other}`"),
                ))
            }
        }
        cur.finish()?;
    }
    b.build()
}

fn set_once<T>(slot: &mut Option<T>, v: T, pos: Pos, what: &str) -> Result<(), Diagnostic> {
    if slot.is_some() {
        return Err(Diagnostic::new(
            ErrorCode::Invalid,
            pos,
            format!("`{what}` declared more than once"),
        ));
    }
    *slot = Some(v);
    Ok(())
}

fn boolean(cur: &mut Cursor<'_>) -> Result<bool, Diagnostic> {
    let (v, pos) = cur.ident()?;
    match v.as_str() {
        "true" | "on" => Ok(true),
        "false" | "off" => Ok(false),
        other => Err(Diagnostic::new(
            ErrorCode::Syntax,
            pos,
            format!("expected true or false, found `{other}`"),
        )),
    }
}

/// Positions kept alongside an axiom until validation.
struct AxiomSrc {
    axiom: Axiom,
    pred_pos: Vec<Pos>,
    node_pos: Vec<(Pos, Pos)>,
}

fn parse_axiom(cur: &mut Cursor<'_>) -> Result<AxiomSrc, Diagnostic> {
    let (name, _) = cur.ident()?;
    cur.expect(&Tok::Colon)?;
    let (kw, kw_pos) = cur.ident()?;
    if kw != "forall" {
        return Err(Diagnostic::new(ErrorCode::Syntax, kw_pos, format!("expected `forall`, found `{kw}`")));
    }
    let mut vars = Vec::new();
    while let Some(Tok::Ident(_)) = cur.peek() {
        let (v, pos) = cur.ident()?;
        if vars.contains(&v) {
            return Err(Diagnostic::new(ErrorCode::Invalid, pos, format!("variable `{v}` bound twice")));
        }
        vars.push(v);
    }
    if vars.is_empty() {
        return Err(cur.unexpected("a quantified variable"));
    }
    let mut preds = Vec::new();
    let mut pred_pos = Vec::new();
    if cur.eat(&Tok::Colon) {
        loop {
            let pos = cur.pos();
            let negated = cur.eat(&Tok::Bang);
            let (kw, kpos) = cur.ident()?;
            let kind = PredKind::from_keyword(&kw).ok_or_else(|| {
                Diagnostic::new(ErrorCode::Unknown, kpos, format!("unknown predicate `{kw}`"))
            })?;
            cur.expect(&Tok::LParen)?;
            let mut args = vec![cur.ident()?.0];
            while cur.eat(&Tok::Comma) {
                args.push(cur.ident()?.0);
            }
            cur.expect(&Tok::RParen)?;
            if args.len() != kind.arity() {
                return Err(Diagnostic::new(
                    ErrorCode::Invalid,
                    kpos,
                    format!("`{kw}` takes {} argument(s), got {}", kind.arity(), args.len()),
                ));
            }
            preds.push(Predicate { negated, kind, args });
            pred_pos.push(pos);
            if !cur.eat(&Tok::Amp) {
                break;
            }
        }
    }
    cur.expect(&Tok::Implies)?;
    let mut body = Vec::new();
    let mut node_pos = Vec::new();
    loop {
        let paren = cur.eat(&Tok::LParen);
        let mut conj = Vec::new();
        loop {
            let spos = cur.pos();
            let src = parse_node(cur)?;
            cur.expect(&Tok::Arrow)?;
            let dpos = cur.pos();
            let dst = parse_node(cur)?;
            conj.push(EdgeAssertion {
                src,
                dst,
                label: name.clone(),
            });
            node_pos.push((spos, dpos));
            if !cur.eat(&Tok::Amp) {
                break;
            }
        }
        if paren {
            cur.expect(&Tok::RParen)?;
        }
        body.push(conj);
        if !cur.eat(&Tok::Bar) {
            break;
        }
    }
    Ok(AxiomSrc {
        axiom: Axiom {
            name,
            vars,
            preds,
            body,
        },
        pred_pos,
        node_pos,
    })
}

fn parse_node(cur: &mut Cursor<'_>) -> Result<NodeTemplate, Diagnostic> {
    let (var, _) = cur.ident()?;
    cur.expect(&Tok::Dot)?;
    let (point, _) = cur.ident()?;
    let level = |cur: &mut Cursor<'_>| -> Result<Option<String>, Diagnostic> {
        if cur.eat(&Tok::LParen) {
            let (l, _) = cur.ident()?;
            cur.expect(&Tok::RParen)?;
            Ok(Some(l))
        } else {
            Ok(None)
        }
    };
    let point = match point.as_str() {
        "create" => NodePoint::Create(level(cur)?),
        "expire" => NodePoint::Expire(level(cur)?),
        "send" => NodePoint::Send,
        "flush" => NodePoint::Flush,
        _ => NodePoint::Stage(point),
    };
    Ok(NodeTemplate { var, point })
}

#[derive(Default)]
struct Builder {
    name: Option<String>,
    cores: Option<usize>,
    stages: Option<Vec<String>>,
    access: Option<(String, Pos)>,
    caches: Vec<CacheLevelDecl>,
    coherence: Option<CoherencePolicy>,
    write_allocate: Option<bool>,
    flush: Option<bool>,
    speculation: Option<SpeculationPolicy>,
    axioms: Vec<(AxiomSrc, Pos)>,
}

impl Builder {
    fn build(self) -> Result<MicroarchSpec, Diagnostic> {
        let origin = Pos { line: 1, col: 1 };
        let name = self
            .name
            .ok_or_else(|| Diagnostic::new(ErrorCode::Invalid, origin, "missing `machine` declaration"))?;
        let stages = self
            .stages
            .ok_or_else(|| Diagnostic::new(ErrorCode::Invalid, origin, "missing `stages` declaration"))?;
        let access_stage = match self.access {
            Some((s, pos)) => {
                if !stages.contains(&s) {
                    return Err(Diagnostic::new(
                        ErrorCode::UndeclaredStage,
                        pos,
                        format!("undeclared stage `{s}`"),
                    ));
                }
                s
            }
            None => stages[stages.len().saturating_sub(2)].clone(),
        };
        let level_names: BTreeSet<&str> = self.caches.iter().map(|c| c.level_id.as_str()).collect();
        let mut seen = HashSet::new();
        let mut axioms = Vec::new();
        for (src, pos) in &self.axioms {
            let ax = &src.axiom;
            if !seen.insert(ax.name.clone()) {
                return Err(Diagnostic::new(
                    ErrorCode::DuplicateAxiom,
                    *pos,
                    format!("duplicate axiom name `{}`", ax.name),
                ));
            }
            for (p, ppos) in ax.preds.iter().zip(&src.pred_pos) {
                for a in &p.args {
                    if !ax.vars.contains(a) {
                        return Err(Diagnostic::new(
                            ErrorCode::UnboundVariable,
                            *ppos,
                            format!("variable `{a}` is not bound in axiom `{}`", ax.name),
                        ));
                    }
                }
            }
            let edges = ax.body.iter().flatten();
            for (e, (spos, dpos)) in edges.zip(&src.node_pos) {
                for (n, npos) in [(&e.src, *spos), (&e.dst, *dpos)] {
                    if !ax.vars.contains(&n.var) {
                        return Err(Diagnostic::new(
                            ErrorCode::UnboundVariable,
                            npos,
                            format!("variable `{}` is not bound in axiom `{}`", n.var, ax.name),
                        ));
                    }
                    match &n.point {
                        NodePoint::Stage(s) if !stages.contains(s) => {
                            return Err(Diagnostic::new(
                                ErrorCode::UndeclaredStage,
                                npos,
                                format!("undeclared stage `{s}`"),
                            ))
                        }
                        NodePoint::Create(Some(l)) | NodePoint::Expire(Some(l))
                            if !level_names.contains(l.as_str()) =>
                        {
                            return Err(Diagnostic::new(
                                ErrorCode::UndeclaredLevel,
                                npos,
                                format!("undeclared cache level `{l}`"),
                            ))
                        }
                        _ => {}
                    }
                }
                if e.src == e.dst {
                    return Err(Diagnostic::new(
                        ErrorCode::Invalid,
                        *spos,
                        "edge source and destination are the same node",
                    ));
                }
            }
            axioms.push(ax.clone());
        }
        axioms.sort_by(|a, b| a.name.cmp(&b.name));
        let coherence = self.coherence.unwrap_or(CoherencePolicy {
            kind: CoherenceKind::None,
            speculative_write_requests_visible: false,
        });
        Ok(MicroarchSpec {
            name,
            cores: self.cores.unwrap_or(1),
            stages,
            access_stage,
            cache_levels: self.caches,
            coherence,
            write_allocate: self.write_allocate.unwrap_or(false),
            has_flush_instruction: self.flush.unwrap_or(false),
            speculation: self.speculation.unwrap_or_default(),
            axioms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_spec() {
        let spec = parse_spec("machine tiny\ncores 1\nstages Go\n").unwrap();
        assert_eq!(spec.cores, 1);
        assert!(spec.axioms.is_empty());
        assert_eq!(spec.access_stage, "Go");
        assert_eq!(spec.commit_stage(), "Go");
    }

    #[test]
    fn undeclared_stage_is_named_with_location() {
        let text = "machine m\nstages Fetch Commit\naxiom x: forall a => a.Fetch -> a.Retire2\n";
        let err = parse_spec(text).unwrap_err();
        assert_eq!(err.code, ErrorCode::UndeclaredStage);
        assert!(err.message.contains("Retire2"));
        assert_eq!((err.line, err.col), (3, 33));
    }

    #[test]
    fn duplicate_axiom_rejected() {
        let text = "machine m\nstages F C\naxiom x: forall a => a.F -> a.C\naxiom x: forall a => a.F -> a.C\n";
        assert_eq!(parse_spec(text).unwrap_err().code, ErrorCode::DuplicateAxiom);
    }

    #[test]
    fn undeclared_level_rejected() {
        let text = "machine m\nstages F C\ncache L1 private sets 4\naxiom x: forall a => a.create(L2) -> a.C\n";
        assert_eq!(parse_spec(text).unwrap_err().code, ErrorCode::UndeclaredLevel);
    }

    #[test]
    fn unbound_variable_rejected() {
        let text = "machine m\nstages F C\naxiom x: forall a: po(a, b) => a.F -> a.C\n";
        assert_eq!(parse_spec(text).unwrap_err().code, ErrorCode::UnboundVariable);
    }

    #[test]
    fn speculative_writes_needs_invalidation() {
        let text = "machine m\nstages F\ncoherence none speculative_writes\n";
        assert_eq!(parse_spec(text).unwrap_err().code, ErrorCode::Invalid);
    }

    #[test]
    fn dnf_body_parses() {
        let text = "machine m\nstages F C\naxiom x: forall a b: po(a, b) & !same_core(a, b) =>\n  (a.F -> b.F & a.C -> b.C) | b.F -> a.F\n";
        let spec = parse_spec(text).unwrap();
        let ax = &spec.axioms[0];
        assert_eq!(ax.body.len(), 2);
        assert_eq!(ax.body[0].len(), 2);
        assert!(ax.preds[1].negated);
    }

    #[test]
    fn self_edge_rejected() {
        let text = "machine m\nstages F C\naxiom x: forall a => a.F -> a.F\n";
        assert_eq!(parse_spec(text).unwrap_err().code, ErrorCode::Invalid);
    }
}
