//! Risk-neutral option pricing for the Heston model with
//! variance-proportional double-exponential jumps.
//!
//! Prices come from damped Fourier inversion of the conditional transform
//! `exp(alpha(s, T) + beta(s, T) V)`, whose exponents are obtained from the
//! Riccati system in [`crate::riccati`]. Jumps are compensated, so the price
//! is a Q-martingale under zero rates.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::panel::{OptionPanel, OptionQuote, OptionSide, TenorQuotes};
use crate::riccati::{CfSolution, OdeTolerance, RiccatiSystem};
use crate::sim::{stream_rng, ModelParams};

/// Jump exponent per unit variance:
/// `c- int_{-inf}^0 (e^{ux}-1) e^{-lambda-|x|} dx + c+ int_0^inf (e^{ux}-1) e^{-lambda+ x} dx`.
pub fn jump_transform(params: &ModelParams, u: Complex64) -> Result<Complex64> {
    let (lo, hi) = (-params.lambda_minus, params.lambda_plus);
    if !(u.re > lo && u.re < hi) {
        return Err(Error::OutsideStrip { re: u.re, lo, hi });
    }
    Ok(jump_transform_unchecked(params, u))
}

#[inline]
fn jump_transform_unchecked(p: &ModelParams, u: Complex64) -> Complex64 {
    let lm = p.lambda_minus;
    let lp = p.lambda_plus;
    -p.c_minus * u / (lm * (lm + u)) + p.c_plus * u / (lp * (lp - u))
}

/// Cumulant rate of the log-price per unit of variance under Q:
/// `(s^2 - s)/2 + kappa_J(s) - s kappa_J(1)`. Vanishes at `s = 0` and `s = 1`.
pub fn log_cumulant_rate(params: &ModelParams, s: Complex64) -> Result<Complex64> {
    let ks = jump_transform(params, s)?;
    let k1 = jump_transform(params, Complex64::new(1.0, 0.0))?;
    Ok(0.5 * (s * s - s) + ks - s * k1)
}

fn riccati_system(params: &ModelParams, s: Complex64) -> Result<RiccatiSystem> {
    Ok(RiccatiSystem {
        psi: log_cumulant_rate(params, s)?,
        linear: params.rho * params.sigma_v * s - params.kappa_v,
        quadratic: 0.5 * params.sigma_v * params.sigma_v,
        level: params.kappa_v * params.theta_v,
    })
}

/// Solves the Riccati system for a complex transform argument `s`
/// (moment-generating convention) at each of the nondecreasing `tenors`.
pub fn solve_riccati(params: &ModelParams, s: Complex64, tenors: &[f64]) -> Result<Vec<CfSolution>> {
    params.validate()?;
    riccati_system(params, s)?.solve(tenors, OdeTolerance::default())
}

/// `E_Q[exp(iu (x_{t+T} - x_t)) | V_t = v]`, unnormalised in `u`.
pub fn conditional_cf(params: &ModelParams, v: f64, tenor: f64, u: f64) -> Result<Complex64> {
    if !(tenor > 0.0 && tenor.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "tenor",
            reason: format!("must be positive, got {tenor}"),
        });
    }
    if u == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let sol = solve_riccati(params, Complex64::new(0.0, u), &[tenor])?;
    Ok(sol[0].transform(v))
}

/// Discretisation of the damped inversion integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierConfig {
    /// Damping for calls (`alpha = damping`) and puts (`alpha = -1 - damping`).
    pub damping: f64,
    /// Trapezoid step in log-return frequency.
    pub freq_step: f64,
    /// Largest frequency on the grid.
    pub max_freq: f64,
    /// Weights below this magnitude are treated as the end of the integrand.
    pub cutoff: f64,
}

impl Default for FourierConfig {
    fn default() -> Self {
        FourierConfig {
            damping: 15.0,
            freq_step: 2.0,
            max_freq: 20000.0,
            cutoff: 1e-15,
        }
    }
}

impl FourierConfig {
    fn node_count(&self) -> usize {
        (self.max_freq / self.freq_step).ceil() as usize + 1
    }

    fn alpha(&self, side: OptionSide) -> f64 {
        match side {
            OptionSide::Call => self.damping,
            OptionSide::Put => -1.0 - self.damping,
        }
    }
}

#[derive(Debug, Clone)]
struct SideNodes {
    alpha: f64,
    /// `h / pi / ((alpha + iv)(alpha + 1 + iv))`, halved at `v = 0`.
    scale: Vec<Complex64>,
    /// Transform exponents per tenor, indexed `[tenor][node]`.
    exponents: Vec<Vec<CfSolution>>,
}

/// Consecutive negligible weights that end the inversion sum.
const QUIET_RUN: usize = 16;

/// Precomputed transform exponents for a fixed set of tenors, ready to price
/// any variance level and strike by trapezoidal inversion.
#[derive(Debug, Clone)]
pub struct PricingTable {
    params: ModelParams,
    config: FourierConfig,
    tenors: Vec<f64>,
    put: SideNodes,
    call: SideNodes,
}

impl PricingTable {
    pub fn new(params: &ModelParams, tenors: &[f64], config: FourierConfig) -> Result<Self> {
        params.validate()?;
        if tenors.is_empty() {
            return Err(Error::InvalidInput("no tenors requested".into()));
        }
        for &t in tenors {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "tenor",
                    reason: format!("must be positive, got {t}"),
                });
            }
        }
        if !(config.damping > 0.0 && config.freq_step > 0.0 && config.max_freq > 0.0) {
            return Err(Error::InvalidInput("Fourier configuration must be positive".into()));
        }
        let mut order: Vec<usize> = (0..tenors.len()).collect();
        order.sort_by(|&a, &b| tenors[a].total_cmp(&tenors[b]));
        let sorted: Vec<f64> = order.iter().map(|&i| tenors[i]).collect();

        let build = |side: OptionSide| -> Result<SideNodes> {
            let alpha = config.alpha(side);
            let n = config.node_count();
            let h = config.freq_step;
            let mut scale = Vec::with_capacity(n);
            let mut exponents = vec![Vec::with_capacity(n); tenors.len()];
            for j in 0..n {
                let v = j as f64 * h;
                let d = Complex64::new(alpha, v) * Complex64::new(alpha + 1.0, v);
                let w = if j == 0 { 0.5 } else { 1.0 };
                scale.push(w * h / PI / d);
                // E[exp(s X)] with s = i (v - i (alpha + 1))
                let s = Complex64::new(alpha + 1.0, v);
                let sols = solve_riccati(params, s, &sorted)?;
                for (k, sol) in sols.into_iter().enumerate() {
                    exponents[order[k]].push(sol);
                }
            }
            Ok(SideNodes {
                alpha,
                scale,
                exponents,
            })
        };

        Ok(PricingTable {
            params: *params,
            config,
            tenors: tenors.to_vec(),
            put: build(OptionSide::Put)?,
            call: build(OptionSide::Call)?,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &FourierConfig {
        &self.config
    }

    pub fn tenors(&self) -> &[f64] {
        &self.tenors
    }

    /// Index of a tenor in the table, matched to a relative tolerance of 1e-12.
    pub fn tenor_index(&self, tenor: f64) -> Option<usize> {
        self.tenors
            .iter()
            .position(|&t| (t - tenor).abs() <= 1e-12 * tenor.abs())
    }

    /// Pricer specialised to one tenor and variance level.
    pub fn slice(&self, tenor_index: usize, variance: f64) -> Result<PriceSlice> {
        if tenor_index >= self.tenors.len() {
            return Err(Error::InvalidInput(format!("tenor index {tenor_index} out of range")));
        }
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "variance",
                reason: format!("must be nonnegative, got {variance}"),
            });
        }
        let weights = |nodes: &SideNodes| -> Result<Vec<Complex64>> {
            let ex = &nodes.exponents[tenor_index];
            // stop once a run of consecutive weights sits below the cutoff
            let mut w = Vec::new();
            let mut quiet = 0;
            for (sol, sc) in ex.iter().zip(&nodes.scale) {
                let z = sol.transform(variance) * sc;
                w.push(z);
                if z.norm() > self.config.cutoff {
                    quiet = 0;
                } else {
                    quiet += 1;
                    if quiet == QUIET_RUN {
                        break;
                    }
                }
            }
            if quiet < QUIET_RUN {
                return Err(Error::Inversion(format!(
                    "integrand not decayed at frequency {} (tenor {}, variance {variance})",
                    self.config.max_freq, self.tenors[tenor_index]
                )));
            }
            w.truncate(w.len() - quiet);
            Ok(w)
        };
        Ok(PriceSlice {
            tenor: self.tenors[tenor_index],
            freq_step: self.config.freq_step,
            put_alpha: self.put.alpha,
            call_alpha: self.call.alpha,
            put: weights(&self.put)?,
            call: weights(&self.call)?,
        })
    }
}

/// Inversion weights for one `(tenor, variance)`.
#[derive(Debug, Clone)]
pub struct PriceSlice {
    tenor: f64,
    freq_step: f64,
    put_alpha: f64,
    call_alpha: f64,
    put: Vec<Complex64>,
    call: Vec<Complex64>,
}

impl PriceSlice {
    pub fn tenor(&self) -> f64 {
        self.tenor
    }

    /// Price per unit of spot for log-moneyness `k = log(K / S)`.
    pub fn normalized_price(&self, side: OptionSide, k: f64) -> f64 {
        let (alpha, w) = match side {
            OptionSide::Put => (self.put_alpha, &self.put),
            OptionSide::Call => (self.call_alpha, &self.call),
        };
        // sum_j w_j exp(-i v_j k) by Horner in r = exp(-i h k)
        let r = Complex64::from_polar(1.0, -self.freq_step * k);
        let mut acc = Complex64::new(0.0, 0.0);
        for wj in w.iter().rev() {
            acc = acc * r + wj;
        }
        (-alpha * k).exp() * acc.re
    }

    /// Out-of-the-money price in currency, floored at zero.
    pub fn otm_price(&self, spot: f64, log_strike: f64) -> f64 {
        let k = log_strike - spot.ln();
        let side = if k <= 0.0 { OptionSide::Put } else { OptionSide::Call };
        (spot * self.normalized_price(side, k)).max(0.0)
    }

    /// Price of either side in currency (not floored).
    pub fn price(&self, side: OptionSide, spot: f64, log_strike: f64) -> f64 {
        spot * self.normalized_price(side, log_strike - spot.ln())
    }
}

/// Out-of-the-money European price with zero rates and dividends.
pub fn price_option(
    params: &ModelParams,
    spot: f64,
    v: f64,
    tenor: f64,
    log_strike: f64,
) -> Result<f64> {
    if !(spot > 0.0 && spot.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "spot",
            reason: format!("must be positive, got {spot}"),
        });
    }
    let table = PricingTable::new(params, &[tenor], FourierConfig::default())?;
    Ok(table.slice(0, v)?.otm_price(spot, log_strike))
}

/// Strike-grid construction rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrikeGridRule {
    /// Strikes are multiples of this (currency).
    pub step: f64,
    /// Extension stops once the true OTM price falls below this.
    pub min_price: f64,
    /// Safety cap on strikes per side.
    pub max_per_side: usize,
}

impl Default for StrikeGridRule {
    fn default() -> Self {
        StrikeGridRule {
            step: 5.0,
            min_price: 0.075,
            max_per_side: 10_000,
        }
    }
}

impl StrikeGridRule {
    /// True OTM quotes on the maximal contiguous grid whose prices are at
    /// least `min_price`, plus the first strike on each side that falls
    /// below it. The two strikes bracketing the spot are always present.
    pub fn quotes(&self, slice: &PriceSlice, spot: f64) -> TenorQuotes {
        let log_spot = spot.ln();
        let quote = |m: i64| {
            let strike = m as f64 * self.step;
            let log_strike = strike.ln();
            let side = OptionSide::otm_log(log_strike, log_spot);
            let price = (spot * slice.normalized_price(side, log_strike - log_spot)).max(0.0);
            OptionQuote {
                log_strike,
                price,
                tenor: slice.tenor(),
                side,
            }
        };
        // highest multiple at or below the spot
        let mut m_lo = (spot / self.step).floor() as i64;
        if (m_lo as f64 * self.step).ln() > log_spot {
            m_lo -= 1;
        }
        let m_lo = m_lo.max(1);
        let mut below = Vec::new();
        let mut m = m_lo;
        while m >= 1 && below.len() < self.max_per_side {
            let q = quote(m);
            let stop = q.price < self.min_price;
            below.push(q);
            if stop {
                break;
            }
            m -= 1;
        }
        let mut above = Vec::new();
        let mut m = m_lo + 1;
        while above.len() < self.max_per_side {
            let q = quote(m);
            let stop = q.price < self.min_price;
            above.push(q);
            if stop {
                break;
            }
            m += 1;
        }
        below.reverse();
        below.extend(above);
        TenorQuotes {
            tenor: slice.tenor(),
            quotes: below,
        }
    }
}

/// Strikes (currency) of the default grid for one `(v, tenor)`.
pub fn build_strike_grid(params: &ModelParams, spot: f64, v: f64, tenor: f64) -> Result<Vec<f64>> {
    let table = PricingTable::new(params, &[tenor], FourierConfig::default())?;
    let slice = table.slice(0, v)?;
    let rule = StrikeGridRule::default();
    Ok(rule
        .quotes(&slice, spot)
        .quotes
        .iter()
        .map(|q| (q.log_strike.exp() / rule.step).round() * rule.step)
        .collect())
}

/// Multiplicative i.i.d. Gaussian observation errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub scale: f64,
    /// Replacement for nonpositive noisy prices.
    pub floor: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            scale: 0.015,
            floor: 0.01,
        }
    }
}

impl NoiseModel {
    /// Noisy copy of `quotes`; returns the number of floored prices.
    pub fn apply<R: Rng + ?Sized>(&self, quotes: &TenorQuotes, rng: &mut R) -> (TenorQuotes, usize) {
        let mut floored = 0;
        let mut out = quotes.clone();
        if self.scale == 0.0 {
            return (out, 0);
        }
        for q in &mut out.quotes {
            let z: f64 = rng.sample(StandardNormal);
            let p = q.price * (1.0 + self.scale * z);
            if p > 0.0 {
                q.price = p;
            } else {
                q.price = self.floor;
                floored += 1;
            }
        }
        (out, floored)
    }
}

/// Panel with observation errors; `floored` counts prices replaced by the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedPanel {
    pub panel: OptionPanel,
    pub floored: usize,
}

pub fn observe_panel(panel: &OptionPanel, noise_scale: f64, seed: u64) -> ObservedPanel {
    let noise = NoiseModel {
        scale: noise_scale,
        ..NoiseModel::default()
    };
    let mut rng = stream_rng(seed, 0);
    let mut floored = 0;
    let tenors = panel
        .tenors
        .iter()
        .map(|tq| {
            let (noisy, f) = noise.apply(tq, &mut rng);
            floored += f;
            noisy
        })
        .collect();
    ObservedPanel {
        panel: OptionPanel {
            obs_time: panel.obs_time,
            forward: panel.forward,
            tenors,
        },
        floored,
    }
}

/// Horizon of the volatility index, one month.
pub const VIX_HORIZON: f64 = 1.0 / 12.0;

/// Jump loading of the squared volatility index,
/// `1 + w- lambda-/(lambda- - 1) + w+ lambda+/(lambda+ + 1)` where `w-`, `w+`
/// are the jump-variation shares `2 c/lambda^3`.
pub fn vix_jump_multiplier(params: &ModelParams) -> f64 {
    let lm = params.lambda_minus;
    let lp = params.lambda_plus;
    let share_minus = 2.0 * params.c_minus / lm.powi(3);
    let share_plus = 2.0 * params.c_plus / lp.powi(3);
    1.0 + share_minus * lm / (lm - 1.0) + share_plus * lp / (lp + 1.0)
}

/// `(1 - e^{-kappa h}) / (kappa h)`, continuous at `kappa h = 0`.
fn mean_reversion_weight(kappa: f64, horizon: f64) -> f64 {
    let x = kappa * horizon;
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// Model-implied squared one-month volatility index.
pub fn vix_squared(params: &ModelParams, v: f64) -> f64 {
    let g = mean_reversion_weight(params.kappa_v, VIX_HORIZON);
    vix_jump_multiplier(params) * (v * g + params.theta_v * (1.0 - g))
}

/// Ratio of the diffusion coefficients of `log VIX^2` and `log V`.
pub fn vix_scaling_ratio(params: &ModelParams, v: f64) -> f64 {
    let g = mean_reversion_weight(params.kappa_v, VIX_HORIZON);
    2.0 * v / vix_squared(params, v) * g
}
