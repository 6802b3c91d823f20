//! Compiles every chapter of the guide in `book/` as rustdoc, so `cargo test`
//! runs the Rust snippets as doc-tests. One module per chapter keeps failures
//! traceable to their source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/fields.md")]
pub mod fields {}

#[doc = include_str!("../../../book/src/dynamics.md")]
pub mod dynamics {}

#[doc = include_str!("../../../book/src/saturation.md")]
pub mod saturation {}

#[doc = include_str!("../../../book/src/steering.md")]
pub mod steering {}

#[doc = include_str!("../../../book/src/linear_null.md")]
pub mod linear_null {}

#[doc = include_str!("../../../book/src/nonlinear_null.md")]
pub mod nonlinear_null {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}
