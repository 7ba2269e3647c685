//! The guide's code listings, compiled and run as doc-tests. One module per
//! chapter so a failure points at its source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/retention.md")]
pub mod retention {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/learning.md")]
pub mod learning {}
#[doc = include_str!("../../../book/src/tmaze.md")]
pub mod tmaze {}
#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
