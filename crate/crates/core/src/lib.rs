#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod coefficient;
pub mod config;
pub mod dg;
pub mod driver;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod offline;
pub mod online;
pub mod output;
pub mod space;
pub mod verify;
