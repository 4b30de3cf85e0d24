// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod kinematics;
pub mod timetree;
pub mod world;
pub mod heuristic;
pub mod sampler;
pub mod multitree;
pub mod planner;
pub mod bench;
