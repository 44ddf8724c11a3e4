//! Numeric primitives shared by everything else.

mod erf;
mod matrix;
mod rng;

pub use erf::{erf, erfc, std_normal_cdf, std_normal_pdf, ERF_SATURATION};
pub use matrix::Matrix;
pub use rng::Rng;
