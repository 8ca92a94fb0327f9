//! Truncated volatility-of-volatility and leverage estimators over a local
//! window of spot-variance increments, with their feasible asymptotic
//! variances, confidence intervals and the return-based competitors.
//!
//! Increments are indexed backwards in time: slot 0 holds
//! `V(t_0) - V(t_1)`, slot `i - 1` holds `V(t_{i-1}) - V(t_i)`.

use num_complex::Complex;
use statrs::distribution::{ContinuousCDF, Continuous, Normal};

use crate::charfn::{SpotVolEstimate, Transform, Validity};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default floor for a finite-sample negative asymptotic variance.
pub const AVAR_FLOOR: f64 = 1e-12;

/// Window of transformed-variance increments and matching log-price
/// increments. A `None` marks an increment touching an invalid spot estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementSeries<T> {
    pub delta_n: T,
    /// Nominal window length used in the `1 / (k_n delta_n)` normalisation.
    pub k_n: usize,
    pub v_increments: Vec<Option<T>>,
    pub x_increments: Vec<T>,
}

impl<T: Scalar> IncrementSeries<T> {
    /// Window with `k_n` equal to the number of increments.
    pub fn new(delta_n: T, v_increments: Vec<Option<T>>, x_increments: Vec<T>) -> Result<Self> {
        let k_n = v_increments.len();
        Self::with_window(delta_n, k_n, v_increments, x_increments)
    }

    pub fn with_window(
        delta_n: T,
        k_n: usize,
        v_increments: Vec<Option<T>>,
        x_increments: Vec<T>,
    ) -> Result<Self> {
        if !(delta_n > T::zero()) {
            return Err(Error::InvalidParameter {
                name: "delta_n",
                reason: "must be positive".into(),
            });
        }
        if v_increments.len() != x_increments.len() {
            return Err(Error::InvalidInput(format!(
                "{} variance increments but {} price increments",
                v_increments.len(),
                x_increments.len()
            )));
        }
        if k_n == 0 {
            return Err(Error::InvalidParameter {
                name: "k_n",
                reason: "must be positive".into(),
            });
        }
        Ok(Self {
            delta_n,
            k_n,
            v_increments,
            x_increments,
        })
    }

    /// Builds increments from spot values `V(t_0), V(t_1), ..., V(t_k)` and
    /// log-prices at the same times.
    pub fn from_levels(delta_n: T, v_levels: &[Option<T>], x_levels: &[T]) -> Result<Self> {
        if v_levels.len() != x_levels.len() || v_levels.len() < 2 {
            return Err(Error::InvalidInput(
                "need at least two matching variance and price levels".into(),
            ));
        }
        let dv = v_levels
            .windows(2)
            .map(|w| match (w[0], w[1]) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            })
            .collect();
        let dx = x_levels.windows(2).map(|w| w[0] - w[1]).collect();
        Self::new(delta_n, dv, dx)
    }

    pub fn len(&self) -> usize {
        self.v_increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_increments.is_empty()
    }

    pub fn missing(&self) -> usize {
        self.v_increments.iter().filter(|v| v.is_none()).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.missing() as f64 / self.len() as f64
    }

    /// Multiplies every variance increment by `c`.
    pub fn scale_v(&self, c: T) -> Self {
        Self {
            v_increments: self.v_increments.iter().map(|v| v.map(|x| x * c)).collect(),
            ..self.clone()
        }
    }

    fn truncated_v(&self, upsilon: T) -> Vec<Option<T>> {
        self.v_increments
            .iter()
            .map(|v| v.map(|x| truncate(x, upsilon)))
            .collect()
    }

    fn truncated_count(&self, upsilon: T) -> usize {
        let v = self.v_increments.iter().flatten().filter(|x| x.abs() > upsilon).count();
        let x = self.x_increments.iter().filter(|x| x.abs() > upsilon).count();
        v + x
    }

    fn norm(&self) -> T {
        T::count(self.k_n) * self.delta_n
    }
}

/// `x 1{|x| <= upsilon}`.
pub fn truncate<T: Scalar>(x: T, upsilon: T) -> T {
    if x.abs() <= upsilon {
        x
    } else {
        T::zero()
    }
}

/// Data-driven truncation level from several consecutive days of
/// variance increments (the current day and the preceding ones):
/// `3 (pi / (2 D) / ((k_n - 1) delta_n) sum_days sum_i |d_i||d_{i-1}|)^0.49`,
/// which with `D = 4` days is the usual bipower-based rule.
pub fn truncation_threshold<T: Scalar>(days: &[&[T]], delta_n: T) -> Result<T> {
    let k_n = days.first().map_or(0, |d| d.len());
    if days.is_empty() || k_n < 2 || days.iter().any(|d| d.len() != k_n) {
        return Err(Error::InvalidInput(
            "truncation needs at least one day of equally long increment windows (k_n >= 2)".into(),
        ));
    }
    let mut bipower = T::zero();
    for day in days {
        for w in day.windows(2) {
            bipower = bipower + w[0].abs() * w[1].abs();
        }
    }
    let scale = T::PI() / (T::lit(2.0) * T::count(days.len())) / (T::count(k_n - 1) * delta_n);
    Ok(T::lit(3.0) * (scale * bipower).powf(T::lit(0.49)))
}

/// `sum(values) * nominal / valid`; `None` when no term is valid.
fn rescaled_sum<T: Scalar>(terms: impl Iterator<Item = Option<T>>) -> (Option<T>, usize, usize) {
    let (mut sum, mut valid, mut nominal) = (T::zero(), 0usize, 0usize);
    for t in terms {
        nominal += 1;
        if let Some(v) = t {
            sum = sum + v;
            valid += 1;
        }
    }
    match (valid, nominal) {
        (0, 0) => (Some(T::zero()), 0, 0),
        (0, _) => (None, 0, nominal),
        _ if valid == nominal => (Some(sum), valid, nominal),
        _ => (Some(sum * T::count(nominal) / T::count(valid)), valid, nominal),
    }
}

fn q_terms<T: Scalar>(dv: &[Option<T>]) -> Vec<Option<T>> {
    // q_i for i = 2..=len, stored at index i - 2
    dv.windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(prev), Some(cur)) => Some(cur * cur + T::lit(2.0) * prev * cur),
            _ => None,
        })
        .collect()
}

fn lag_products<T: Scalar>(xs: &[Option<T>], lag: usize) -> impl Iterator<Item = Option<T>> + '_ {
    xs.iter()
        .skip(lag)
        .zip(xs.iter())
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => Some(*a * *b),
            _ => None,
        })
}

fn no_valid(what: &str) -> Error {
    Error::InvalidInput(format!("no valid {what} terms in window"))
}

/// `(1 / (k_n delta_n)) sum_{i>=2} [tau(d_i)^2 + 2 tau(d_{i-1}) tau(d_i)]`.
pub fn vv_estimate<T: Scalar>(series: &IncrementSeries<T>, upsilon: T) -> Result<T> {
    if series.len() < 2 {
        return Err(Error::InvalidInput("volatility of volatility needs k_n >= 2".into()));
    }
    let q = q_terms(&series.truncated_v(upsilon));
    let (sum, _, _) = rescaled_sum(q.into_iter());
    Ok(sum.ok_or_else(|| no_valid("q"))? / series.norm())
}

fn lv_products<T: Scalar>(series: &IncrementSeries<T>, upsilon: T) -> Vec<Option<T>> {
    series
        .truncated_v(upsilon)
        .into_iter()
        .zip(&series.x_increments)
        .map(|(v, &x)| v.map(|v| v * truncate(x, upsilon)))
        .collect()
}

/// `(1 / (k_n delta_n)) sum_i tau(dx_i) tau(dV_i)`.
pub fn lv_estimate<T: Scalar>(series: &IncrementSeries<T>, upsilon: T) -> Result<T> {
    if series.is_empty() {
        return Err(Error::InvalidInput("leverage needs at least one increment".into()));
    }
    let (sum, _, _) = rescaled_sum(lv_products(series, upsilon).into_iter());
    Ok(sum.ok_or_else(|| no_valid("leverage"))? / series.norm())
}

/// Feasible asymptotic variance and whether the floor was applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AVarEstimate<T> {
    pub value: T,
    pub floored: bool,
}

fn floor_avar<T: Scalar>(raw: T, floor: T) -> AVarEstimate<T> {
    if raw < floor || !raw.is_finite() {
        AVarEstimate {
            value: floor,
            floored: true,
        }
    } else {
        AVarEstimate {
            value: raw,
            floored: false,
        }
    }
}

/// `AVar0 + 2 AVar1` built from sums of `q_i^2`, lag-1 and lag-2 products.
pub fn vv_avar<T: Scalar>(series: &IncrementSeries<T>, upsilon: T) -> Result<T> {
    vv_avar_floored(series, upsilon, T::lit(AVAR_FLOOR)).map(|a| a.value)
}

pub fn vv_avar_floored<T: Scalar>(series: &IncrementSeries<T>, upsilon: T, floor: T) -> Result<AVarEstimate<T>> {
    if series.len() < 2 {
        return Err(Error::InvalidInput("volatility of volatility needs k_n >= 2".into()));
    }
    let q = q_terms(&series.truncated_v(upsilon));
    let sq = rescaled_sum(q.iter().map(|v| v.map(|x| x * x))).0.ok_or_else(|| no_valid("q"))?;
    let lag1 = rescaled_sum(lag_products(&q, 1)).0.unwrap_or(T::zero());
    let lag2 = rescaled_sum(lag_products(&q, 2)).0.unwrap_or(T::zero());
    let norm = T::count(series.k_n) * series.delta_n * series.delta_n;
    let avar0 = (sq - lag2) / norm;
    let avar1 = (lag1 - lag2) / norm;
    Ok(floor_avar(avar0 + T::lit(2.0) * avar1, floor))
}

/// `sum tau(dV_i)^2 tau(dx_i)^2` minus the lag-2 cross products.
pub fn lv_avar<T: Scalar>(series: &IncrementSeries<T>, upsilon: T) -> Result<T> {
    lv_avar_floored(series, upsilon, T::lit(AVAR_FLOOR)).map(|a| a.value)
}

pub fn lv_avar_floored<T: Scalar>(series: &IncrementSeries<T>, upsilon: T, floor: T) -> Result<AVarEstimate<T>> {
    if series.is_empty() {
        return Err(Error::InvalidInput("leverage needs at least one increment".into()));
    }
    let p = lv_products(series, upsilon);
    let sq = rescaled_sum(p.iter().map(|v| v.map(|x| x * x)))
        .0
        .ok_or_else(|| no_valid("leverage"))?;
    let lag2 = rescaled_sum(lag_products(&p, 2)).0.unwrap_or(T::zero());
    let norm = T::count(series.k_n) * series.delta_n * series.delta_n;
    Ok(floor_avar((sq - lag2) / norm, floor))
}

/// Two-sided normal quantile for a confidence level in `[0, 1)`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidParameter {
            name: "level",
            reason: format!("must lie in [0, 1), got {level}"),
        });
    }
    if level == 0.0 {
        return Ok(0.0);
    }
    let n = Normal::standard();
    Ok(n.inverse_cdf(0.5 + level / 2.0))
}

/// `estimate -/+ z sqrt(avar / k_n)`.
pub fn confidence_interval<T: Scalar>(estimate: T, avar: T, k_n: usize, level: f64) -> Result<(T, T)> {
    let z = T::lit(normal_quantile(level)?);
    let half = z * (avar.max(T::zero()) / T::count(k_n)).sqrt();
    Ok((estimate - half, estimate + half))
}

/// Estimate, feasible variance, interval and diagnostics for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VvLvResult<T> {
    pub estimate: T,
    pub avar: T,
    pub ci_low: T,
    pub ci_high: T,
    pub k_n: usize,
    pub upsilon: T,
    pub truncated: usize,
    pub missing: usize,
    pub avar_floored: bool,
}

impl<T: Scalar> VvLvResult<T> {
    pub fn covers(&self, truth: T) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

fn assemble<T: Scalar>(
    series: &IncrementSeries<T>,
    upsilon: T,
    level: f64,
    estimate: T,
    avar: AVarEstimate<T>,
) -> Result<VvLvResult<T>> {
    let (ci_low, ci_high) = confidence_interval(estimate, avar.value, series.k_n, level)?;
    Ok(VvLvResult {
        estimate,
        avar: avar.value,
        ci_low,
        ci_high,
        k_n: series.k_n,
        upsilon,
        truncated: series.truncated_count(upsilon),
        missing: series.missing(),
        avar_floored: avar.floored,
    })
}

pub fn volatility_of_volatility<T: Scalar>(series: &IncrementSeries<T>, upsilon: T, level: f64) -> Result<VvLvResult<T>> {
    let est = vv_estimate(series, upsilon)?;
    let avar = vv_avar_floored(series, upsilon, T::lit(AVAR_FLOOR))?;
    assemble(series, upsilon, level, est, avar)
}

pub fn leverage<T: Scalar>(series: &IncrementSeries<T>, upsilon: T, level: f64) -> Result<VvLvResult<T>> {
    let est = lv_estimate(series, upsilon)?;
    let avar = lv_avar_floored(series, upsilon, T::lit(AVAR_FLOOR))?;
    assemble(series, upsilon, level, est, avar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    VolOfVol,
    Leverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TenorMode {
    Single,
    Double,
}

/// Inputs to the limiting variance under i.i.d. option observation errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoreticalAVarInputs {
    pub sigma2: f64,
    pub vv: f64,
    pub lv: f64,
    /// Error balance `lim delta_n / (delta_n + delta / sqrt(T))`.
    pub phi: f64,
    /// Relative strike gap at the money.
    pub rho0: f64,
    /// Relative noise scale at the money.
    pub zeta0: f64,
    pub u: f64,
    /// Tenor ratio `T' / T`.
    pub tau: f64,
    pub transform: Transform,
}

/// `phi(k) + |k| Phi(-|k|)`.
pub fn phi_tilde(k: f64) -> f64 {
    let n = Normal::standard();
    let a = k.abs();
    n.pdf(a) + a * n.cdf(-a)
}

const PHI_TILDE_RANGE: f64 = 12.0;

/// `int cos^2(a k) phi_tilde(k)^2 dk` over the real line.
pub fn phi_tilde_integral(a: f64) -> f64 {
    // even integrand with a kink at the origin: integrate the half line
    let out = quadrature::double_exponential::integrate(
        |k| {
            let c = (a * k).cos();
            let p = phi_tilde(k);
            c * c * p * p
        },
        0.0,
        PHI_TILDE_RANGE,
        1e-12,
    );
    2.0 * out.integral
}

/// Noise contribution for one tenor (the same `rho0`, `zeta0` are used for
/// both tenors).
pub fn noise_variance(inputs: &TheoreticalAVarInputs) -> f64 {
    let s2 = inputs.sigma2;
    let s = s2.sqrt();
    let fprime = inputs.transform.derivative(s2);
    4.0 * (inputs.u * inputs.u * s2).exp()
        * fprime
        * fprime
        * s.powi(3)
        * inputs.rho0
        * inputs.zeta0
        * inputs.zeta0
        * phi_tilde_integral(inputs.u * s)
}

/// Limiting variance of the rescaled estimator error.
pub fn theoretical_avar(inputs: &TheoreticalAVarInputs, which: Estimator, mode: TenorMode) -> Result<f64> {
    let p = inputs.phi;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter {
            name: "phi",
            reason: format!("must lie in [0, 1], got {p}"),
        });
    }
    if !(inputs.sigma2 > 0.0) {
        return Err(Error::InvalidParameter {
            name: "sigma2",
            reason: "must be positive".into(),
        });
    }
    let v1 = noise_variance(inputs);
    let v = match mode {
        TenorMode::Single => v1,
        TenorMode::Double => {
            let t = inputs.tau;
            if !(t > 1.0) {
                return Err(Error::InvalidParameter {
                    name: "tau",
                    reason: format!("must exceed 1, got {t}"),
                });
            }
            // the at-the-money gap and noise scale are shared, so v_{t,tau} = v_{t,1}
            (t / (t - 1.0)).powi(2) * v1 + (1.0 / (t - 1.0)).powi(2) * v1
        }
    };
    let q = 1.0 - p;
    Ok(match which {
        Estimator::VolOfVol => 6.0 * inputs.vv * inputs.vv * p * p + 8.0 * inputs.vv * v * p * q + 40.0 * v * v * q * q,
        Estimator::Leverage => (inputs.vv * inputs.sigma2 + inputs.lv * inputs.lv) * p + 2.0 * inputs.sigma2 * v * q,
    })
}

/// Converts a limiting variance to the `sqrt(k_n)` scale of the feasible
/// estimate given the finite-sample balance `phi_n`.
pub fn to_feasible_scale(avar: f64, phi_n: f64, which: Estimator) -> f64 {
    match which {
        Estimator::VolOfVol => avar / (phi_n * phi_n),
        Estimator::Leverage => avar / phi_n,
    }
}

/// `(1 / l) sum_j exp(i u r_j / sqrt(delta_fine))`.
pub fn return_cf<T: Scalar>(returns: &[T], u: T, delta_fine: T) -> Complex<T> {
    if returns.is_empty() || u == T::zero() {
        return Complex::new(T::one(), T::zero());
    }
    let scale = u / delta_fine.sqrt();
    let sum = returns
        .iter()
        .fold(Complex::new(T::zero(), T::zero()), |acc, &r| {
            acc + Complex::from_polar(T::one(), scale * r)
        });
    sum / T::count(returns.len())
}

/// Spot variance from a block of fine returns.
pub fn return_spot_vol<T: Scalar>(returns: &[T], u: T, delta_fine: T, transform: Transform) -> SpotVolEstimate<T> {
    let value = return_cf(returns, u, delta_fine);
    let cf = crate::charfn::CfEstimate {
        u,
        tenor: delta_fine,
        value,
        modulus_out_of_range: false,
    };
    let mut out = crate::charfn::spot_variance_with(&cf, u, transform);
    if returns.is_empty() {
        out.validity = Validity::ModulusDegenerate;
    }
    out
}

/// Return-based VV from the `k_n` spot values `V(t_0), ..., V(t_{k_n - 1})`:
/// sums `q_i` over `i = 2..k_n - 1`, normalised by `k_n delta_n`.
pub fn vv_ret<T: Scalar>(v_levels: &[Option<T>], k_n: usize, delta_n: T, upsilon: T) -> Result<T> {
    if v_levels.len() != k_n || k_n < 3 {
        return Err(Error::InvalidInput(format!(
            "return-based VV needs k_n = {k_n} spot values, got {}",
            v_levels.len()
        )));
    }
    let dv: Vec<Option<T>> = v_levels
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        })
        .collect();
    let zeros = vec![T::zero(); dv.len()];
    let series = IncrementSeries::with_window(delta_n, k_n, dv, zeros)?;
    vv_estimate(&series, upsilon)
}

/// Return-based LV: pairs `V(t_{i-1}) - V(t_i)` with the two-step price move
/// `x(t_{i-1}) - x(t_{i+1})` for `i = 1..k_n - 2`.
pub fn lv_ret<T: Scalar>(v_levels: &[Option<T>], x_levels: &[T], k_n: usize, delta_n: T, upsilon: T) -> Result<T> {
    if v_levels.len() != k_n || x_levels.len() != k_n || k_n < 3 {
        return Err(Error::InvalidInput(format!(
            "return-based LV needs k_n = {k_n} spot values and log-prices"
        )));
    }
    let m = k_n - 2;
    let dv: Vec<Option<T>> = (0..m)
        .map(|i| match (v_levels[i], v_levels[i + 1]) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        })
        .collect();
    let dx: Vec<T> = (0..m).map(|i| x_levels[i] - x_levels[i + 2]).collect();
    let series = IncrementSeries::with_window(delta_n, k_n, dv, dx)?;
    lv_estimate(&series, upsilon)
}

/// Realized and bipower variance of fine returns over a window of length
/// `window` (years).
pub fn rv_bv<T: Scalar>(returns: &[T], window: T) -> (T, T) {
    let rv = returns.iter().fold(T::zero(), |a, &r| a + r * r) / window;
    let bp = returns
        .windows(2)
        .fold(T::zero(), |a, w| a + w[0].abs() * w[1].abs());
    (rv, T::FRAC_PI_2() * bp / window)
}

/// `sqrt(-2 log 0.3 / min(RV, BV))`.
pub fn select_u_ret<T: Scalar>(rv: T, bv: T) -> Result<T> {
    let m = rv.min(bv);
    if !(m > T::zero()) {
        return Err(Error::InvalidParameter {
            name: "rv_bv",
            reason: format!("min(RV, BV) must be positive, got {m}"),
        });
    }
    Ok((-T::lit(2.0) * T::lit(crate::charfn::U_CROSSING_LEVEL).ln() / m).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn z(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }


    fn series(dv: &[f64], dx: &[f64], delta: f64) -> IncrementSeries<f64> {
        IncrementSeries::new(delta, dv.iter().copied().map(Some).collect(), dx.to_vec()).unwrap()
    }

    #[test]
    fn truncation_basics() {
        assert_eq!(truncate(0.5, 1.0), 0.5);
        assert_eq!(truncate(2.0, 1.0), 0.0);
        assert_eq!(truncate(-7.0, f64::INFINITY), -7.0);
    }

    #[test]
    fn threshold_closed_form() {
        let (k, c, dn) = (80usize, 0.01f64, 1.0 / (252.0 * 80.0));
        let day = vec![c; k];
        let days: Vec<&[f64]> = vec![&day; 4];
        let got = truncation_threshold(&days, dn).unwrap();
        let want = 3.0 * (std::f64::consts::PI / 8.0 * 4.0 * (k - 1) as f64 * c * c / ((k - 1) as f64 * dn)).powf(0.49);
        assert!((got - want).abs() < 1e-12 * want);
        let zero = vec![0.0; k];
        assert_eq!(truncation_threshold(&[&zero[..]; 4], dn).unwrap(), 0.0);
    }

    #[test]
    fn vv_arithmetic() {
        let s = series(&[1.0, 1.0, 1.0], &[0.0; 3], 1.0);
        assert_eq!(vv_estimate(&s, f64::INFINITY).unwrap(), 2.0);
    }

    #[test]
    fn lv_arithmetic() {
        let s = series(&[2.0, 3.0], &[1.0, -1.0], 1.0);
        assert_eq!(lv_estimate(&s, f64::INFINITY).unwrap(), -0.5);
    }

    #[test]
    fn vv_avar_constant_sequence() {
        let (k, c) = (10usize, 0.5f64);
        let s = series(&vec![c; k], &vec![0.0; k], 1.0);
        let a0 = ((k - 1) as f64 - (k - 3) as f64) * 9.0 * c.powi(4) / k as f64;
        let a1 = ((k - 2) as f64 - (k - 3) as f64) * 9.0 * c.powi(4) / k as f64;
        assert!((vv_avar(&s, f64::INFINITY).unwrap() - (a0 + 2.0 * a1)).abs() < 1e-14);
        let z = series(&vec![0.0; k], &vec![0.0; k], 1.0);
        assert_eq!(vv_avar(&z, f64::INFINITY).unwrap(), AVAR_FLOOR);
        assert!(vv_avar_floored(&z, f64::INFINITY, 0.0).unwrap().value == 0.0);
    }

    #[test]
    fn lv_avar_constant_sequence() {
        let (k, v, c) = (12usize, 0.3f64, -0.2f64);
        let s = series(&vec![v; k], &vec![c; k], 0.5);
        let want = (k as f64 - (k - 2) as f64) * v * v * c * c / (k as f64 * 0.25);
        assert!((lv_avar(&s, f64::INFINITY).unwrap() - want).abs() < 1e-14);
        let z = series(&vec![0.0; k], &vec![0.0; k], 0.5);
        let a = lv_avar_floored(&z, f64::INFINITY, 0.0).unwrap();
        assert_eq!(a.value, 0.0);
        assert!(!a.floored);
    }

    #[test]
    fn ci_examples() {
        let (lo, hi) = confidence_interval(2.0f64, 4.0, 100, 0.95).unwrap();
        assert!((lo - 1.608).abs() < 1e-3 && (hi - 2.392).abs() < 1e-3);
        assert_eq!(confidence_interval(2.0, 4.0, 100, 0.0).unwrap(), (2.0, 2.0));
        assert!(confidence_interval(2.0, 4.0, 100, 1.0).is_err());
    }

    #[test]
    fn missing_increments_are_dropped_pairwise() {
        let full = series(&[1.0, 1.0, 1.0, 1.0, 1.0], &[1.0; 5], 1.0);
        let mut gap = full.clone();
        gap.v_increments[4] = None;
        // remaining q terms are all 3, rescaled to the nominal count
        assert_eq!(vv_estimate(&gap, f64::INFINITY).unwrap(), vv_estimate(&full, f64::INFINITY).unwrap());
        assert_eq!(lv_estimate(&gap, f64::INFINITY).unwrap(), lv_estimate(&full, f64::INFINITY).unwrap());
        assert_eq!(gap.missing(), 1);
        assert!((gap.missing_fraction() - 0.2).abs() < 1e-15);
        let none = IncrementSeries::new(1.0, vec![None; 4], vec![0.0; 4]).unwrap();
        assert!(vv_estimate(&none, f64::INFINITY).is_err());
    }

    #[test]
    fn from_levels_indexes_backwards() {
        let s = IncrementSeries::from_levels(1.0, &[Some(3.0), Some(2.0), None, Some(0.5)], &[1.0, 0.0, 0.5, 0.25]).unwrap();
        assert_eq!(s.v_increments, vec![Some(1.0), None, None]);
        assert_eq!(s.x_increments, vec![1.0, -0.5, 0.25]);
    }

    #[test]
    fn iid_noise_bias_cancels() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (k, draws, sd) = (80usize, 10_000usize, 0.1f64);
        let mut vals = Vec::with_capacity(draws);
        for _ in 0..draws {
            let eps: Vec<f64> = (0..=k).map(|_| sd * z(&mut rng)).collect();
            let levels: Vec<Option<f64>> = eps.into_iter().map(Some).collect();
            let s = IncrementSeries::from_levels(1.0, &levels, &vec![0.0; k + 1]).unwrap();
            vals.push(vv_estimate(&s, f64::INFINITY).unwrap());
        }
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn phi_tilde_values() {
        assert!((phi_tilde(0.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert_eq!(phi_tilde(1.3), phi_tilde(-1.3));
        // phi_tilde is the integrated normal tail, positive and decreasing
        assert!(phi_tilde(2.0) > phi_tilde(3.0) && phi_tilde(3.0) > 0.0);
    }

    #[test]
    fn theoretical_no_noise_limits() {
        let inputs = TheoreticalAVarInputs {
            sigma2: 0.0167,
            vv: 9.58,
            lv: -0.36,
            phi: 1.0,
            rho0: 1.0,
            zeta0: 0.015,
            u: 10.0,
            tau: 2.0,
            transform: Transform::Log,
        };
        for mode in [TenorMode::Single, TenorMode::Double] {
            let vv = theoretical_avar(&inputs, Estimator::VolOfVol, mode).unwrap();
            assert!((vv - 6.0 * 9.58 * 9.58).abs() < 1e-10);
            let lv = theoretical_avar(&inputs, Estimator::Leverage, mode).unwrap();
            assert!((lv - (9.58 * 0.0167 + 0.36 * 0.36)).abs() < 1e-12);
        }
        let noisy = TheoreticalAVarInputs { phi: 0.5, ..inputs };
        let single = theoretical_avar(&noisy, Estimator::VolOfVol, TenorMode::Single).unwrap();
        let double = theoretical_avar(&noisy, Estimator::VolOfVol, TenorMode::Double).unwrap();
        assert!(double > single);
        assert!(theoretical_avar(&TheoreticalAVarInputs { phi: 1.5, ..inputs }, Estimator::Leverage, TenorMode::Single).is_err());
    }

    #[test]
    fn return_cf_and_rv_bv() {
        assert_eq!(return_cf(&[0.1, -0.2], 0.0, 1e-4), Complex::new(1.0, 0.0));
        let r = vec![0.01; 10];
        let (rv, bv) = rv_bv(&r, 2.0);
        assert!((rv - 1e-4f64 * 10.0 / 2.0).abs() < 1e-18);
        assert!((bv - std::f64::consts::FRAC_PI_2 * 1e-4 * 9.0 / 2.0).abs() < 1e-18);
        assert!((select_u_ret(0.03f64, 0.02).unwrap() - 10.972).abs() < 1e-3);
        assert!(select_u_ret(0.0, 0.02).is_err());
    }

    #[test]
    fn return_spot_vol_lln() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (n, dt, s2) = (100_000usize, 1e-6f64, 0.02f64);
        let r: Vec<f64> = (0..n)
            .map(|_| (s2 * dt).sqrt() * z(&mut rng))
            .collect();
        let u = (-2.0 * 0.3f64.ln() / s2).sqrt();
        let est = return_spot_vol(&r, u, dt, Transform::Identity);
        assert!(est.is_valid());
        assert!((est.sigma2 - s2).abs() / s2 < 0.03, "{}", est.sigma2);
        let (rv, bv) = rv_bv(&r, n as f64 * dt);
        assert!((rv - s2).abs() / s2 < 0.02 && (bv - s2).abs() / s2 < 0.02);
    }

    #[test]
    fn return_based_index_ranges() {
        // k_n = 3: spot values at t_0..t_2, VV sums i = 2 only, LV i = 1 only
        let v = [Some(4.0), Some(3.0), Some(1.0)];
        let x = [0.3, 0.1, 0.0];
        let vv = vv_ret(&v, 3, 1.0, f64::INFINITY).unwrap();
        // d1 = 1, d2 = 2: q_2 = 4 + 2 * 1 * 2 = 8
        assert_eq!(vv, 8.0 / 3.0);
        let lv = lv_ret(&v, &x, 3, 1.0, f64::INFINITY).unwrap();
        // d1 = 1 against x0 - x2 = 0.3
        assert!((lv - 0.3 / 3.0).abs() < 1e-15, "{lv}");
        assert!(vv_ret(&v[..2], 3, 1.0, f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn scale_equivariance(dv in proptest::collection::vec(-1.0f64..1.0, 4..40),
                              c in 0.1f64..10.0) {
            let dx: Vec<f64> = dv.iter().map(|v| 0.5 * v + 0.01).collect();
            let s = series(&dv, &dx, 0.01);
            let sc = s.scale_v(c);
            // x increments stay below both thresholds so only V is rescaled
            let big = 1e9;
            let vv = vv_estimate(&s, big).unwrap();
            let vv_c = vv_estimate(&sc, big * c).unwrap();
            prop_assert!((vv_c - c * c * vv).abs() <= 1e-9 * (1.0 + (c * c * vv).abs()));
            let lv = lv_estimate(&s, big).unwrap();
            let lv_c = lv_estimate(&sc, big * c).unwrap();
            prop_assert!((lv_c - c * lv).abs() <= 1e-9 * (1.0 + (c * lv).abs()));
        }

        #[test]
        fn truncation_above_max_is_inert(dv in proptest::collection::vec(-1.0f64..1.0, 3..40), pad in 0.0f64..5.0) {
            let dx = vec![0.01; dv.len()];
            let s = series(&dv, &dx, 0.01);
            let ups = dv.iter().fold(0.01f64, |m, v| m.max(v.abs())) + pad;
            prop_assert_eq!(vv_estimate(&s, ups).unwrap(), vv_estimate(&s, f64::INFINITY).unwrap());
            prop_assert_eq!(lv_estimate(&s, ups).unwrap(), lv_estimate(&s, f64::INFINITY).unwrap());
            prop_assert_eq!(vv_avar(&s, ups).unwrap(), vv_avar(&s, f64::INFINITY).unwrap());
        }

        #[test]
        fn ci_contains_estimate(est in -10.0f64..10.0, avar in 0.0f64..100.0, k in 2usize..500, lvl in 0.0f64..0.999) {
            let (lo, hi) = confidence_interval(est, avar, k, lvl).unwrap();
            prop_assert!(lo <= est && est <= hi);
        }
    }
}
