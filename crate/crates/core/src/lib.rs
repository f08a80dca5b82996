//! Consistent portfolios: constrained mean-variance grids scored by
//! empirical-CDF density forecasts and Berkowitz statistics, plus ex-post
//! efficient-set calculations.

pub mod backtest;
pub mod calibration;
pub mod consistency;
pub mod density;
pub mod error;
pub mod estimation;
pub mod expost;
pub mod market_data;
pub mod normal;
pub mod optimizer;
pub mod randgen;

pub use error::{Error, Result};
