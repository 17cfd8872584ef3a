use std::fmt;
use std::str::FromStr;

use super::*;

const OOO_SINGLE_CORE: &str = include_str!("../../data/ooo_single_core.uspec");
const TWO_CORE_INVALIDATION: &str = include_str!("../../data/two_core_invalidation.uspec");

/// Microarchitectures shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    /// One core, private L1, no coherence, branch and permission speculation.
    OooSingleCore,
    /// Two cores with invalidation coherence that exposes speculative writes.
    TwoCoreInvalidation,
}

impl Builtin {
    pub const ALL: [Builtin; 2] = [Builtin::OooSingleCore, Builtin::TwoCoreInvalidation];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::OooSingleCore => "ooo_single_core",
            Builtin::TwoCoreInvalidation => "two_core_invalidation",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Builtin::OooSingleCore => OOO_SINGLE_CORE,
            Builtin::TwoCoreInvalidation => TWO_CORE_INVALIDATION,
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Builtin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Builtin::ALL
            .iter()
            .copied()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("no built-in microarchitecture named `{s}`"))
    }
}

pub fn builtin_spec(which: Builtin) -> MicroarchSpec {
    parse_spec(which.source()).expect("built-in description parses")
}

/// A speculation barrier: accesses after a fence wait for everything before
/// it to commit.
pub fn fence_axiom(spec: &MicroarchSpec) -> Axiom {
    let edge = |src: &str, sp: &str, dst: &str, dp: &str| EdgeAssertion {
        src: NodeTemplate {
            var: src.into(),
            point: NodePoint::Stage(sp.into()),
        },
        dst: NodeTemplate {
            var: dst.into(),
            point: NodePoint::Stage(dp.into()),
        },
        label: "fence_ordering".into(),
    };
    let pred = |kind, args: &[&str]| Predicate {
        negated: false,
        kind,
        args: args.iter().map(|s| s.to_string()).collect(),
    };
    Axiom {
        name: "fence_ordering".into(),
        vars: vec!["a".into(), "f".into(), "b".into()],
        preds: vec![
            pred(PredKind::Po, &["a", "f"]),
            pred(PredKind::Fence, &["f"]),
            pred(PredKind::Po, &["f", "b"]),
            pred(PredKind::Access, &["b"]),
        ],
        body: vec![vec![edge("a", spec.commit_stage(), "b", &spec.access_stage)]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        let one = builtin_spec(Builtin::OooSingleCore);
        assert_eq!(one.cores, 1);
        assert_eq!(one.access_stage, "Execute");
        assert!(!one.invalidation_based());
        let two = builtin_spec(Builtin::TwoCoreInvalidation);
        assert_eq!(two.cores, 2);
        assert!(two.coherence.speculative_write_requests_visible);
        assert!(!two.speculation.allows_speculative_flush);
    }

    #[test]
    fn names_round_trip() {
        for b in Builtin::ALL {
            assert_eq!(b.name().parse::<Builtin>().unwrap(), b);
        }
        assert!("nope".parse::<Builtin>().is_err());
    }

    #[test]
    fn fence_axiom_renders_and_parses() {
        let spec = builtin_spec(Builtin::OooSingleCore);
        let fenced = spec.with_axiom(fence_axiom(&spec));
        let text = render_spec(&fenced);
        assert!(text.contains("axiom fence_ordering"));
        assert_eq!(parse_spec(&text).unwrap(), fenced);
    }
}
