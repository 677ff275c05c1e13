//! Every chapter of the guide is attached to an empty module so that
//! `cargo test --doc` compiles and runs its Rust listings.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/layered-sphere.md")]
pub mod layered_sphere {}

#[doc = include_str!("../../../book/src/couplings.md")]
pub mod couplings {}

#[doc = include_str!("../../../book/src/lossless-dynamics.md")]
pub mod lossless_dynamics {}

#[doc = include_str!("../../../book/src/entanglement.md")]
pub mod entanglement {}

#[doc = include_str!("../../../book/src/master-equation.md")]
pub mod master_equation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
