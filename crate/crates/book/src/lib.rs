//! Doctest harness for the guide in `book/src`. Each chapter is included as
//! module documentation, so `cargo test -p ergo-book` runs every snippet.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/kernels.md")]
pub mod kernels {}

#[doc = include_str!("../../../book/src/segments.md")]
pub mod segments {}

#[doc = include_str!("../../../book/src/switching.md")]
pub mod switching {}

#[doc = include_str!("../../../book/src/certificates.md")]
pub mod certificates {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/ergodicity.md")]
pub mod ergodicity {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
