//! Planning toolkit for integrated district-heating and DC power systems.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod network;
pub mod sparse;
pub mod par;
pub mod qp;
pub mod formulation;
pub mod prices;
pub mod repair;
pub mod global;
pub mod tightening;
pub mod analysis;
pub mod cli;
