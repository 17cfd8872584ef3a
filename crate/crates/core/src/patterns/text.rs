use std::collections::HashSet;
use std::fmt::Write;

use super::*;
use crate::lex::{statements, Cursor, Diagnostic, ErrorCode, Pos, Tok};

/// Parses and validates `.threat` text.
pub fn parse_pattern(text: &str) -> Result<ThreatPattern, Diagnostic> {
    let stmts = statements(text)?;
    let mut name: Option<String> = None;
    let mut vars: Vec<PatternVar> = Vec::new();
    let mut constraints: Vec<(Constraint, Vec<Pos>)> = Vec::new();
    let mut seen = HashSet::new();
    for stmt in &stmts {
        let mut cur = Cursor::new(stmt);
        let (kw, kw_pos) = cur.ident()?;
        match kw.as_str() {
            "pattern" => {
                let (n, _) = cur.ident()?;
                if name.replace(n).is_some() {
                    return Err(Diagnostic::new(ErrorCode::Invalid, kw_pos, "`pattern` declared twice"));
                }
            }
            "instr" | "vicl" => {
                let (n, pos) = cur.ident()?;
                if !seen.insert(n.clone()) {
                    return Err(Diagnostic::new(ErrorCode::Invalid, pos, format!("`{n}` declared twice")));
                }
                let mode = if cur.eat(&Tok::Ident("optional".into())) {
                    VarMode::Optional
                } else if cur.eat(&Tok::Ident("forbidden".into())) {
                    VarMode::Forbidden
                } else {
                    VarMode::Required
                };
                let sort = if kw == "instr" {
                    cur.expect(&Tok::Colon)?;
                    let mut specs = vec![role_spec(&mut cur)?];
                    while cur.eat(&Tok::Bar) {
                        specs.push(role_spec(&mut cur)?);
                    }
                    VarSort::Instr(specs)
                } else {
                    VarSort::Vicl
                };
                vars.push(PatternVar { name: n, sort, mode });
            }
            "require" => {
                let negated = cur.eat(&Tok::Bang);
                let (r, rpos) = cur.ident()?;
                let rel = Relation::from_keyword(&r)
                    .ok_or_else(|| Diagnostic::new(ErrorCode::Unknown, rpos, format!("unknown relation `{r}`")))?;
                cur.expect(&Tok::LParen)?;
                let (a, apos) = cur.ident()?;
                cur.expect(&Tok::Comma)?;
                let (b, bpos) = cur.ident()?;
                cur.expect(&Tok::RParen)?;
                constraints.push((
                    Constraint::Rel {
                        negated,
                        rel,
                        args: [a, b],
                    },
                    vec![apos, bpos],
                ));
            }
            "edge" => {
                let (src, spos) = point(&mut cur)?;
                cur.expect(&Tok::Arrow)?;
                let (dst, dpos) = point(&mut cur)?;
                constraints.push((Constraint::Edge { src, dst }, vec![spos, dpos]));
            }
            "absent" => {
                let (p, pos) = point(&mut cur)?;
                constraints.push((Constraint::Absent(p), vec![pos]));
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
    let start = Pos { line: 1, col: 1 };
    if vars.is_empty() {
        return Err(Diagnostic::new(ErrorCode::NoNodes, start, "no nodes"));
    }
    let name = name.ok_or_else(|| Diagnostic::new(ErrorCode::Invalid, start, "missing `pattern` name"))?;
    let pattern = ThreatPattern {
        name,
        vars,
        constraints: constraints.iter().map(|(c, _)| c.clone()).collect(),
    };
    for (c, positions) in &constraints {
        check_constraint(&pattern, c, positions)?;
    }
    Ok(pattern)
}

fn role_spec(cur: &mut Cursor<'_>) -> Result<RoleSpec, Diagnostic> {
    let (actor, pos) = cur.ident()?;
    let actor = match actor.as_str() {
        "attacker" => Some(Actor::Attacker),
        "victim" => Some(Actor::Victim),
        "any" => None,
        other => return Err(Diagnostic::new(ErrorCode::Unknown, pos, format!("unknown actor `{other}`"))),
    };
    let (status, pos) = cur.ident()?;
    let squashed = match status.as_str() {
        "committed" => Some(false),
        "squashed" => Some(true),
        "any" => None,
        other => return Err(Diagnostic::new(ErrorCode::Unknown, pos, format!("unknown status `{other}`"))),
    };
    let mut opcodes = Vec::new();
    loop {
        let (op, pos) = cur.ident()?;
        let op = opcode(&op).ok_or_else(|| Diagnostic::new(ErrorCode::Unknown, pos, format!("unknown opcode `{op}`")))?;
        if !opcodes.contains(&op) {
            opcodes.push(op);
        }
        if !cur.eat(&Tok::Comma) {
            break;
        }
    }
    Ok(RoleSpec { actor, squashed, opcodes })
}

fn opcode(s: &str) -> Option<Opcode> {
    [Opcode::Read, Opcode::Write, Opcode::Flush, Opcode::Fence, Opcode::Branch]
        .into_iter()
        .find(|o| o.as_str().eq_ignore_ascii_case(s))
}

fn point(cur: &mut Cursor<'_>) -> Result<(PatternPoint, Pos), Diagnostic> {
    let (var, pos) = cur.ident()?;
    cur.expect(&Tok::Dot)?;
    let (p, ppos) = cur.ident()?;
    let point = Point::from_keyword(&p)
        .ok_or_else(|| Diagnostic::new(ErrorCode::Unknown, ppos, format!("unknown point `{p}`")))?;
    Ok((PatternPoint { var, point }, pos))
}

fn check_constraint(p: &ThreatPattern, c: &Constraint, positions: &[Pos]) -> Result<(), Diagnostic> {
    let lookup = |name: &str, pos: Pos| {
        p.var(name)
            .ok_or_else(|| Diagnostic::new(ErrorCode::UndeclaredRole, pos, format!("undeclared role `{name}`")))
    };
    match c {
        Constraint::Rel { rel, args, .. } => {
            for ((arg, want), &pos) in args.iter().zip(rel.sorts()).zip(positions) {
                let v = lookup(arg, pos)?;
                let ok = matches!(
                    (want, &v.sort),
                    (Sort::Either, _) | (Sort::Vicl, VarSort::Vicl) | (Sort::Instr, VarSort::Instr(_))
                );
                if !ok {
                    return Err(Diagnostic::new(
                        ErrorCode::Invalid,
                        pos,
                        format!("`{arg}` has the wrong sort for `{}`", rel.keyword()),
                    ));
                }
            }
            forbidden_once(p, &args[..], positions[0])?;
            if args[0] == args[1] {
                return Err(Diagnostic::new(ErrorCode::Invalid, positions[0], "relation of a role with itself"));
            }
        }
        Constraint::Edge { src, dst } => {
            for (pt, &pos) in [src, dst].into_iter().zip(positions) {
                check_point(lookup(&pt.var, pos)?, pt, pos)?;
            }
            forbidden_once(p, &[src.var.clone(), dst.var.clone()], positions[0])?;
            if src == dst {
                return Err(Diagnostic::new(ErrorCode::Invalid, positions[0], "edge from a point to itself"));
            }
        }
        Constraint::Absent(pt) => check_point(lookup(&pt.var, positions[0])?, pt, positions[0])?,
    }
    Ok(())
}

fn forbidden_once(p: &ThreatPattern, names: &[String], pos: Pos) -> Result<(), Diagnostic> {
    let forbidden = names
        .iter()
        .filter(|n| p.var(n).is_some_and(|v| v.mode == VarMode::Forbidden))
        .count();
    if forbidden > 1 {
        return Err(Diagnostic::new(ErrorCode::Invalid, pos, "constraint between two forbidden roles"));
    }
    Ok(())
}

fn check_point(v: &PatternVar, pt: &PatternPoint, pos: Pos) -> Result<(), Diagnostic> {
    if pt.point.valid_for(&v.sort) {
        Ok(())
    } else {
        Err(Diagnostic::new(
            ErrorCode::Invalid,
            pos,
            format!("`{}` does not apply to `{}`", pt.point.keyword(), v.name),
        ))
    }
}

/// Canonical text; parsing it yields an equal pattern.
pub fn render_pattern(p: &ThreatPattern) -> String {
    let mut out = format!("pattern {}\n\n", p.name);
    for v in &p.vars {
        let opt = v.mode.keyword().map(|k| format!(" {k}")).unwrap_or_default();
        match &v.sort {
            VarSort::Vicl => {
                let _ = writeln!(out, "vicl {}{opt}", v.name);
            }
            VarSort::Instr(specs) => {
                let alts: Vec<String> = specs.iter().map(render_spec).collect();
                let _ = writeln!(out, "instr {}{opt}: {}", v.name, alts.join(" | "));
            }
        }
    }
    if !p.constraints.is_empty() {
        out.push('\n');
    }
    for c in &p.constraints {
        match c {
            Constraint::Rel { negated, rel, args } => {
                let bang = if *negated { "!" } else { "" };
                let _ = writeln!(out, "require {bang}{}({}, {})", rel.keyword(), args[0], args[1]);
            }
            Constraint::Edge { src, dst } => {
                let _ = writeln!(out, "edge {src} -> {dst}");
            }
            Constraint::Absent(pt) => {
                let _ = writeln!(out, "absent {pt}");
            }
        }
    }
    out
}

fn render_spec(s: &RoleSpec) -> String {
    let actor = match s.actor {
        Some(Actor::Attacker) => "attacker",
        Some(Actor::Victim) => "victim",
        None => "any",
    };
    let status = match s.squashed {
        Some(false) => "committed",
        Some(true) => "squashed",
        None => "any",
    };
    let ops: Vec<String> = s.opcodes.iter().map(|o| o.as_str().to_ascii_lowercase()).collect();
    format!("{actor} {status} {}", ops.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_round_trip() {
        for b in BuiltinPattern::ALL {
            let p = b.pattern();
            let text = render_pattern(&p);
            assert_eq!(parse_pattern(&text).unwrap(), p, "{text}");
        }
    }

    #[test]
    fn empty_text_has_no_nodes() {
        let e = parse_pattern("").unwrap_err();
        assert_eq!(e.code, ErrorCode::NoNodes);
        assert_eq!(e.message, "no nodes");
    }

    #[test]
    fn edge_to_undeclared_role() {
        let e = parse_pattern("pattern p\ninstr a: attacker committed read\nedge a.access -> b.access\n").unwrap_err();
        assert_eq!(e.code, ErrorCode::UndeclaredRole);
        assert_eq!((e.line, e.col), (3, 18));
    }

    #[test]
    fn vicl_points_are_checked() {
        let e = parse_pattern("pattern p\nvicl v\nvicl w\nedge v.access -> w.create\n").unwrap_err();
        assert_eq!(e.code, ErrorCode::Invalid);
        let e = parse_pattern("pattern p\nvicl v\ninstr a: any any read\nrequire dep(v, a)\n").unwrap_err();
        assert_eq!(e.code, ErrorCode::Invalid);
    }

    #[test]
    fn unknown_words_are_reported() {
        let e = parse_pattern("pattern p\ninstr a: hacker committed read\n").unwrap_err();
        assert_eq!(e.code, ErrorCode::Unknown);
        let e = parse_pattern("pattern p\ninstr a: any any read\ninstr b: any any read\nrequire near(a, b)\n").unwrap_err();
        assert_eq!(e.code, ErrorCode::Unknown);
    }
}
