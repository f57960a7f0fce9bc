//! The chapters of the guide, compiled so their examples run with `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/conversions.md")]
pub mod conversions {}
#[doc = include_str!("../../../book/src/estimation.md")]
pub mod estimation {}
#[doc = include_str!("../../../book/src/planning.md")]
pub mod planning {}
#[doc = include_str!("../../../book/src/online-learning.md")]
pub mod online_learning {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
