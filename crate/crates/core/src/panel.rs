//! Option quote containers shared by the pricer, the BS toolkit and the
//! estimators.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptionSide {
    Put,
    Call,
}

impl OptionSide {
    /// Out-of-the-money side: put if the strike is at or below the forward.
    #[inline]
    pub fn otm(strike: f64, forward: f64) -> Self {
        if strike <= forward {
            OptionSide::Put
        } else {
            OptionSide::Call
        }
    }

    /// Same rule in log space; this is the form used throughout the pipeline.
    #[inline]
    pub fn otm_log(log_strike: f64, log_forward: f64) -> Self {
        if log_strike <= log_forward {
            OptionSide::Put
        } else {
            OptionSide::Call
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionQuote {
    pub log_strike: f64,
    pub price: f64,
    pub tenor: f64,
    pub side: OptionSide,
}

impl OptionQuote {
    #[inline]
    pub fn strike(&self) -> f64 {
        self.log_strike.exp()
    }
}

/// Quotes for one tenor, strictly increasing in log-strike.
#[derive(Debug, Clone, PartialEq)]
pub struct TenorQuotes {
    pub tenor: f64,
    pub quotes: Vec<OptionQuote>,
}

impl TenorQuotes {
    pub fn new(tenor: f64, quotes: Vec<OptionQuote>) -> Result<Self> {
        if !(tenor > 0.0 && tenor.is_finite()) {
            return Err(Error::InvalidInput(format!("tenor must be positive, got {tenor}")));
        }
        let tq = TenorQuotes { tenor, quotes };
        tq.check_increasing()?;
        Ok(tq)
    }

    pub fn check_increasing(&self) -> Result<()> {
        for w in self.quotes.windows(2) {
            if !(w[1].log_strike > w[0].log_strike) {
                return Err(Error::InvalidInput(format!(
                    "log-strikes not strictly increasing at {} -> {}",
                    w[0].log_strike, w[1].log_strike
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.quotes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quotes.is_empty()
    }

    pub fn log_strikes(&self) -> Vec<f64> {
        self.quotes.iter().map(|q| q.log_strike).collect()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.quotes.iter().map(|q| q.price).collect()
    }
}

/// One observation time's quotes across up to two tenors. Rates are zero so
/// the spot and the forward coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionPanel {
    pub obs_time: f64,
    pub forward: f64,
    pub tenors: Vec<TenorQuotes>,
}

impl OptionPanel {
    pub fn log_forward(&self) -> f64 {
        self.forward.ln()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.forward > 0.0 && self.forward.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "forward must be positive, got {}",
                self.forward
            )));
        }
        let log_forward = self.log_forward();
        for tq in &self.tenors {
            tq.check_increasing()?;
            for q in &tq.quotes {
                if q.side != OptionSide::otm_log(q.log_strike, log_forward) {
                    return Err(Error::InvalidInput(format!(
                        "quote at strike {} is not out-of-the-money",
                        q.strike()
                    )));
                }
            }
        }
        for w in self.tenors.windows(2) {
            if !(w[1].tenor > w[0].tenor) {
                return Err(Error::InvalidInput("tenors must be increasing".into()));
            }
        }
        Ok(())
    }
}
