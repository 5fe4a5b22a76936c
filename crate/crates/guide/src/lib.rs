//! Runs the snippets in `book/src` as doc-tests, so the guide cannot drift
//! from the library. One module per chapter keeps failures attributable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/fitting.md")]
pub mod fitting {}
#[doc = include_str!("../../../book/src/mixed.md")]
pub mod mixed {}
#[doc = include_str!("../../../book/src/links.md")]
pub mod links {}
#[doc = include_str!("../../../book/src/explain.md")]
pub mod explain {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
