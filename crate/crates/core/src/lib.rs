//! Option-based estimation of spot volatility of volatility and the
//! leverage effect from short-dated option panels.
//!
//! The crate is split along the pipeline:
//!
//! - [`sim`]: Heston dynamics with variance-proportional jumps, Euler paths.
//! - [`pricer`]: Riccati transforms, Fourier option prices, strike grids, noise.
//! - [`bs`]: Black-Scholes prices, implied vols and BSIV interpolation.
//! - [`charfn`]: characteristic-function spot variance and the choice of `u`.
//! - [`vvlv`]: truncated VV/LV estimators, feasible variances, return-based
//!   competitors.
//!
//! The estimator layer is generic over [`Scalar`]; the aliases below fix it
//! to `f64`.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bs;
pub mod charfn;
pub mod error;
pub mod panel;
pub mod pricer;
mod riccati;
pub mod scalar;
pub mod sim;
pub mod vvlv;

pub use error::{Error, PriceBound, Result};
pub use panel::{OptionPanel, OptionQuote, OptionSide, TenorQuotes};
pub use riccati::{CfSolution, OdeTolerance};
pub use scalar::Scalar;
pub use sim::{Case, ModelParams, PricePath};

pub type CfEstimateF64 = charfn::CfEstimate<f64>;
pub type SpotVolEstimateF64 = charfn::SpotVolEstimate<f64>;
pub type IncrementSeriesF64 = vvlv::IncrementSeries<f64>;
pub type VvLvResultF64 = vvlv::VvLvResult<f64>;
