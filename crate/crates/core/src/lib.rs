// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod calibration;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fft;
pub mod forward;
pub mod grid;
pub mod io;
pub mod reconstruct;
pub mod report;
pub mod simulate;
pub mod stitch;
pub mod tv;
