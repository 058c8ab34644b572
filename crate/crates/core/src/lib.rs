//! Object pose estimation that fuses camera segmentation masks with
//! capacitive proximity readings. See the guide under `book/` for a tour.

// `!(x > 0.0)` is how validation rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fusion;
pub mod geometry;
pub mod haptic;
pub mod kinematics;
pub mod render;
pub mod sensor;
pub mod shape;
pub mod sim;
pub mod vision;

// The guide's snippets run as doctests so they cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sensing.md")]
    mod sensing {}
    #[doc = include_str!("../../../book/src/silhouettes.md")]
    mod silhouettes {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
