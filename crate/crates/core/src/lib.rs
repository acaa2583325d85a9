//! Controllability analysis and steering for recurrent neural networks
//! `ẋ = σ⃗(Ax + Bu)`.

// `!(x > 0.0)` rejects NaN along with nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod controllability;
pub mod mollify;
pub mod reach;
pub mod simulate;
pub mod steer2d;
pub mod systems;
