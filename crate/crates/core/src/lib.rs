// `!(x <= limit)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops read closer to the matrix formulas they implement.
#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod io;
pub mod metriplectic;
pub mod optim;
pub mod oracle;
pub mod pipeline;
pub mod port;
pub mod seed;
pub mod state;
pub mod trainer;

pub use error::{Error, Result};
