#![doc = include_str!("../../../book/src/introduction.md")]

#[doc = include_str!("../../../book/src/iteration.md")]
pub mod iteration {}

#[doc = include_str!("../../../book/src/projections.md")]
pub mod projections {}

#[doc = include_str!("../../../book/src/back-projections.md")]
pub mod back_projections {}

#[doc = include_str!("../../../book/src/constants.md")]
pub mod constants {}

#[doc = include_str!("../../../book/src/learned-priors.md")]
pub mod learned_priors {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
