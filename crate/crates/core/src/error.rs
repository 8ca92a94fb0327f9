use thiserror::Error;

/// Which no-arbitrage bound an option price violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceBound {
    /// At or below intrinsic value.
    Lower,
    /// At or above the forward (calls) or the strike (puts).
    Upper,
}

impl std::fmt::Display for PriceBound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PriceBound::Lower => f.write_str("lower (intrinsic)"),
            PriceBound::Upper => f.write_str("upper"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("jump transform argument Re(u)={re} outside the integrability strip ({lo}, {hi})")]
    OutsideStrip { re: f64, lo: f64, hi: f64 },

    #[error("Riccati solver failed at t={t:.3e} (step {step:.3e}, {steps} steps): {reason}")]
    OdeFailure {
        t: f64,
        step: f64,
        steps: usize,
        reason: &'static str,
    },

    #[error("Fourier inversion did not converge: {0}")]
    Inversion(String),

    #[error("price {price} violates the {bound} no-arbitrage bound")]
    PriceOutOfBounds { price: f64, bound: PriceBound },

    #[error("implied volatility did not converge after {iterations} iterations")]
    ImpliedVolNonConvergence { iterations: usize },

    #[error("tenor {tenor}: only {valid} valid quotes, need at least {needed}")]
    InsufficientQuotes {
        tenor: f64,
        valid: usize,
        needed: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite, got {value}"),
        })
    }
}
