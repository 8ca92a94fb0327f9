//! Black–Scholes pricing with zero rates, implied-volatility inversion and
//! strike densification in implied-volatility space.

use statrs::function::erf::erfc;

use crate::error::{Error, PriceBound, Result};
use crate::panel::{OptionPanel, OptionQuote, OptionSide, TenorQuotes};

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Black price with total volatility `s = vol * sqrt(tenor)`.
fn black(forward: f64, strike: f64, s: f64, side: OptionSide) -> f64 {
    if s <= 0.0 {
        return match side {
            OptionSide::Call => (forward - strike).max(0.0),
            OptionSide::Put => (strike - forward).max(0.0),
        };
    }
    let d1 = (forward / strike).ln() / s + 0.5 * s;
    let d2 = d1 - s;
    match side {
        OptionSide::Call => forward * norm_cdf(d1) - strike * norm_cdf(d2),
        OptionSide::Put => strike * norm_cdf(-d2) - forward * norm_cdf(-d1),
    }
}

/// Black formula with zero rates.
pub fn bs_price(forward: f64, strike: f64, tenor: f64, vol: f64, side: OptionSide) -> f64 {
    black(forward, strike, vol * tenor.max(0.0).sqrt(), side).max(0.0)
}

/// Volatility reproducing the time value of `price` to 1e-12 relative
/// (or `1e-15 * forward` for vanishing time values).
///
/// Safeguarded Newton iteration on the log of the out-of-the-money time
/// value, falling back to bisection whenever a step leaves the bracket.
pub fn implied_vol(price: f64, forward: f64, strike: f64, tenor: f64, side: OptionSide) -> Result<f64> {
    if !(forward > 0.0 && strike > 0.0 && tenor > 0.0) || !forward.is_finite() || !strike.is_finite() {
        return Err(Error::InvalidInput(format!(
            "forward, strike and tenor must be positive (got {forward}, {strike}, {tenor})"
        )));
    }
    if !price.is_finite() {
        return Err(Error::InvalidInput(format!("price must be finite, got {price}")));
    }
    let (intrinsic, upper) = match side {
        OptionSide::Call => ((forward - strike).max(0.0), forward),
        OptionSide::Put => ((strike - forward).max(0.0), strike),
    };
    if price <= intrinsic {
        return Err(Error::PriceOutOfBounds {
            price,
            bound: PriceBound::Lower,
        });
    }
    if price >= upper {
        return Err(Error::PriceOutOfBounds {
            price,
            bound: PriceBound::Upper,
        });
    }

    // work with the out-of-the-money option carrying the same time value
    let otm = OptionSide::otm(strike, forward);
    let target = price - intrinsic;
    let b = |s: f64| black(forward, strike, s, otm);
    let ln_target = target.ln();
    let x = (forward / strike).ln();
    let tol = (1e-12 * target).max(1e-15 * forward);

    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while b(hi) < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::PriceOutOfBounds {
                price,
                bound: PriceBound::Upper,
            });
        }
    }
    // inflection point of the OTM price in s
    let mut s = (2.0 * x.abs()).sqrt().max(target / (0.4 * forward)).clamp(lo, hi);
    if s <= lo || s >= hi {
        s = 0.5 * (lo + hi);
    }

    const MAX_ITER: usize = 200;
    for _ in 0..MAX_ITER {
        let value = b(s);
        let diff = value - target;
        if diff.abs() <= tol {
            return Ok(s / tenor.sqrt());
        }
        if diff > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(s / tenor.sqrt());
        }
        let d1 = x / s + 0.5 * s;
        let vega = forward * norm_pdf(d1);
        let next = if value > 0.0 && vega > 0.0 {
            s - (value.ln() - ln_target) * value / vega
        } else {
            f64::NAN
        };
        s = if next.is_finite() && next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::ImpliedVolNonConvergence { iterations: MAX_ITER })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvQuote {
    pub log_strike: f64,
    pub implied_vol: f64,
    pub tenor: f64,
}

/// Implied vols of all quotes that invert, plus the count dropped.
pub fn implied_vols(quotes: &TenorQuotes, forward: f64) -> (Vec<IvQuote>, usize) {
    let mut out = Vec::with_capacity(quotes.len());
    let mut dropped = 0;
    for q in &quotes.quotes {
        match implied_vol(q.price, forward, q.strike(), quotes.tenor, q.side) {
            Ok(iv) if iv.is_finite() && iv > 0.0 => out.push(IvQuote {
                log_strike: q.log_strike,
                implied_vol: iv,
                tenor: quotes.tenor,
            }),
            _ => dropped += 1,
        }
    }
    (out, dropped)
}

fn interpolate_iv(ivs: &[IvQuote], log_strike: f64) -> f64 {
    let idx = ivs.partition_point(|q| q.log_strike <= log_strike);
    if idx == 0 {
        return ivs[0].implied_vol;
    }
    if idx == ivs.len() {
        return ivs[ivs.len() - 1].implied_vol;
    }
    let (a, b) = (ivs[idx - 1], ivs[idx]);
    let w = (log_strike - a.log_strike) / (b.log_strike - a.log_strike);
    a.implied_vol + w * (b.implied_vol - a.implied_vol)
}

/// At-the-money implied volatility: linear interpolation in log-strike at the
/// log-forward (nearest quote outside the strike range).
pub fn atm_implied_vol(quotes: &TenorQuotes, forward: f64) -> Result<f64> {
    let (ivs, _) = implied_vols(quotes, forward);
    if ivs.is_empty() {
        return Err(Error::InsufficientQuotes {
            tenor: quotes.tenor,
            valid: 0,
            needed: 1,
        });
    }
    Ok(interpolate_iv(&ivs, forward.ln()))
}

/// Counts from [`interpolate_panel`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InterpolationDiagnostics {
    /// Quotes whose implied volatility could not be computed.
    pub dropped: usize,
    /// Output strikes filled by interpolation.
    pub interpolated: usize,
}

/// Minimum number of valid quotes per tenor for interpolation.
pub const MIN_QUOTES: usize = 3;

/// Densifies one tenor onto multiples of `mesh` between its extreme valid
/// strikes by linear interpolation of implied volatility in log-strike.
/// Strikes that coincide with an observed quote keep the observed price.
pub fn interpolate_tenor(
    quotes: &TenorQuotes,
    forward: f64,
    mesh: f64,
) -> Result<(TenorQuotes, InterpolationDiagnostics)> {
    if !(mesh > 0.0 && mesh.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "mesh",
            reason: format!("must be positive, got {mesh}"),
        });
    }
    let (ivs, dropped) = implied_vols(quotes, forward);
    if ivs.len() < MIN_QUOTES {
        return Err(Error::InsufficientQuotes {
            tenor: quotes.tenor,
            valid: ivs.len(),
            needed: MIN_QUOTES,
        });
    }
    let log_forward = forward.ln();
    let originals: Vec<&OptionQuote> = quotes
        .quotes
        .iter()
        .filter(|q| ivs.iter().any(|iv| iv.log_strike == q.log_strike))
        .collect();
    let k_min = originals[0].strike();
    let k_max = originals[originals.len() - 1].strike();
    let eps = 1e-9 * mesh;

    let mut out = Vec::new();
    let mut interpolated = 0;
    out.push(*originals[0]);
    let mut m = ((k_min + eps) / mesh).floor() as i64 + 1;
    let mut next_orig = 1;
    loop {
        let strike = m as f64 * mesh;
        if strike >= k_max - eps {
            break;
        }
        // observed quotes strictly between the last output and this strike are off-grid
        while next_orig < originals.len() && originals[next_orig].strike() < strike - eps {
            next_orig += 1;
        }
        let hit = originals
            .get(next_orig)
            .filter(|q| (q.strike() - strike).abs() <= eps);
        match hit {
            Some(q) => out.push(**q),
            None => {
                let log_strike = strike.ln();
                let vol = interpolate_iv(&ivs, log_strike);
                let side = OptionSide::otm_log(log_strike, log_forward);
                out.push(OptionQuote {
                    log_strike,
                    price: bs_price(forward, strike, quotes.tenor, vol, side),
                    tenor: quotes.tenor,
                    side,
                });
                interpolated += 1;
            }
        }
        m += 1;
    }
    out.push(*originals[originals.len() - 1]);

    Ok((
        TenorQuotes {
            tenor: quotes.tenor,
            quotes: out,
        },
        InterpolationDiagnostics { dropped, interpolated },
    ))
}

/// [`interpolate_tenor`] applied to every tenor of a panel.
pub fn interpolate_panel(panel: &OptionPanel, mesh: f64) -> Result<(OptionPanel, InterpolationDiagnostics)> {
    let mut diag = InterpolationDiagnostics::default();
    let mut tenors = Vec::with_capacity(panel.tenors.len());
    for tq in &panel.tenors {
        let (out, d) = interpolate_tenor(tq, panel.forward, mesh)?;
        diag.dropped += d.dropped;
        diag.interpolated += d.interpolated;
        tenors.push(out);
    }
    Ok((
        OptionPanel {
            obs_time: panel.obs_time,
            forward: panel.forward,
            tenors,
        },
        diag,
    ))
}

/// Forward implied by put–call parity at zero rates, `K + C - P`, taken as
/// the median across strikes.
pub fn synthetic_forward(strike_call_put: &[(f64, f64, f64)]) -> Option<f64> {
    let mut f: Vec<f64> = strike_call_put
        .iter()
        .map(|&(k, c, p)| k + c - p)
        .filter(|x| x.is_finite())
        .collect();
    if f.is_empty() {
        return None;
    }
    f.sort_by(f64::total_cmp);
    let n = f.len();
    Some(if n % 2 == 1 {
        f[n / 2]
    } else {
        0.5 * (f[n / 2 - 1] + f[n / 2])
    })
}
