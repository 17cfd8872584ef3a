//! Synthesis of cache side-channel attack litmus tests from axiomatic
//! microarchitecture descriptions.
//!
//! The pipeline: a [`dsl::MicroarchSpec`] describes how instructions move
//! through a core and its caches; [`litmus`] enumerates small programs;
//! [`uhb`] builds happens-before graphs for every execution of a program;
//! [`patterns`] matches those graphs against attack shapes such as
//! Flush+Reload; [`synth`] drives the search. [`sim`] replays a result on a
//! timing model and [`expander`] turns it into a pseudo-code attack skeleton.

pub mod dsl;
pub mod expander;
pub mod lex;
pub mod litmus;
pub mod patterns;
pub mod sim;
pub mod synth;
pub mod uhb;

pub use lex::{Diagnostic, ErrorCode};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/machines.md")]
    mod machines {}
    #[doc = include_str!("../../../book/src/programs.md")]
    mod programs {}
    #[doc = include_str!("../../../book/src/executions.md")]
    mod executions {}
    #[doc = include_str!("../../../book/src/patterns.md")]
    mod patterns {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    mod synthesis {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/expansion.md")]
    mod expansion {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
