// NaN must fail the positivity and range guards, which `!(x > 0.0)` does.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod conjugate;
pub mod error;
pub mod flow;
pub mod functionals;
pub mod gauge;
pub mod grid;
pub mod io;
pub mod models;
pub mod transverse;
pub mod tubes;
