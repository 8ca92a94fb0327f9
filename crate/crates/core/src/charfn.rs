//! Characteristic-function based spot variance recovery from one tenor of
//! out-of-the-money option prices.
//!
//! The option-spanning identity expresses the conditional characteristic
//! function of the normalised return `(x_{t+T} - x_t) / sqrt(T)` as a strike
//! integral of OTM prices; a left-endpoint Riemann sum over the observed
//! strikes gives the estimate, and `-2 log|L| / u^2` the spot variance.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Estimated characteristic function at one `(u, tenor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfEstimate<T> {
    /// Exponent on the normalised (`/ sqrt(T)`) scale.
    pub u: T,
    pub tenor: T,
    pub value: Complex<T>,
    /// Set when `|value|` is outside `(0, 1)`.
    pub modulus_out_of_range: bool,
}

/// Riemann-sum estimate from strictly increasing `log_strikes` and the
/// matching OTM prices.
pub fn estimate_cf<T: Scalar>(
    log_strikes: &[T],
    prices: &[T],
    log_spot: T,
    tenor: T,
    u: T,
) -> Result<CfEstimate<T>> {
    if log_strikes.len() != prices.len() {
        return Err(Error::InvalidInput("strike and price slices differ in length".into()));
    }
    if log_strikes.len() < 3 {
        return Err(Error::InsufficientQuotes {
            tenor: tenor.as_f64(),
            valid: log_strikes.len(),
            needed: 3,
        });
    }
    if !(tenor > T::zero()) {
        return Err(Error::InvalidParameter {
            name: "tenor",
            reason: "must be positive".into(),
        });
    }
    if log_strikes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("log-strikes must be strictly increasing".into()));
    }
    let value = riemann_cf(log_strikes, prices, log_spot, tenor, u);
    let m = value.norm();
    Ok(CfEstimate {
        u,
        tenor,
        value,
        modulus_out_of_range: !(m > T::zero() && m < T::one()),
    })
}

fn riemann_cf<T: Scalar>(log_strikes: &[T], prices: &[T], x: T, tenor: T, u: T) -> Complex<T> {
    let one = Complex::new(T::one(), T::zero());
    if u == T::zero() {
        return one;
    }
    let ut = u / tenor.sqrt();
    let mut sum = Complex::new(T::zero(), T::zero());
    for j in 1..log_strikes.len() {
        let y = log_strikes[j - 1] - x;
        let delta = log_strikes[j] - log_strikes[j - 1];
        // e^{(i ut - 1) y}
        let w = Complex::from_polar((-y).exp(), ut * y);
        sum = sum + w * (prices[j - 1] * delta);
    }
    let pre = Complex::new(u * u / tenor, ut);
    one - pre * sum * (-x).exp()
}

/// `|L(u)|` on the uniform grid `u_m = m * step`, `m = 0..=n`, evaluated with
/// per-strike phase rotation.
pub fn cf_modulus_grid<T: Scalar>(
    log_strikes: &[T],
    prices: &[T],
    log_spot: T,
    tenor: T,
    step: T,
    n: usize,
) -> Vec<T> {
    let sqrt_t = tenor.sqrt();
    let count = log_strikes.len().saturating_sub(1);
    // per-strike amplitude a_j = e^{-y} O delta e^{-x}, rotation exp(i step y / sqrt T)
    let mut amp = Vec::with_capacity(count);
    let mut rot = Vec::with_capacity(count);
    let mut phase = Vec::with_capacity(count);
    for j in 1..log_strikes.len() {
        let y = log_strikes[j - 1] - log_spot;
        let delta = log_strikes[j] - log_strikes[j - 1];
        amp.push((-y).exp() * prices[j - 1] * delta * (-log_spot).exp());
        rot.push(Complex::from_polar(T::one(), step * y / sqrt_t));
        phase.push(Complex::new(T::one(), T::zero()));
    }
    let mut out = Vec::with_capacity(n + 1);
    for m in 0..=n {
        let u = step * T::count(m);
        let mut sum = Complex::new(T::zero(), T::zero());
        for j in 0..count {
            sum = sum + phase[j] * amp[j];
            phase[j] = phase[j] * rot[j];
        }
        let pre = Complex::new(u * u / tenor, u / sqrt_t);
        out.push((Complex::new(T::one(), T::zero()) - pre * sum).norm());
        // periodic renormalisation keeps the rotators on the unit circle
        if m % 256 == 255 {
            for p in phase.iter_mut() {
                *p = *p / p.norm();
            }
        }
    }
    out
}

/// Transform applied to the spot variance before differencing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    Identity,
    Sqrt,
    Log,
    LogSqrt,
}

impl Transform {
    /// `F(sigma2)`; `None` where `F` is undefined.
    pub fn apply<T: Scalar>(self, sigma2: T) -> Option<T> {
        let out = match self {
            Transform::Identity => sigma2,
            Transform::Sqrt if sigma2 >= T::zero() => sigma2.sqrt(),
            Transform::Log if sigma2 > T::zero() => sigma2.ln(),
            Transform::LogSqrt if sigma2 > T::zero() => T::lit(0.5) * sigma2.ln(),
            _ => return None,
        };
        out.is_finite().then_some(out)
    }

    /// `F'(sigma2)`.
    pub fn derivative<T: Scalar>(self, sigma2: T) -> T {
        match self {
            Transform::Identity => T::one(),
            Transform::Sqrt => T::lit(0.5) / sigma2.sqrt(),
            Transform::Log => T::one() / sigma2,
            Transform::LogSqrt => T::lit(0.5) / sigma2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Sqrt => "sqrt",
            Transform::Log => "log",
            Transform::LogSqrt => "log-sqrt",
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "id" | "x" => Ok(Transform::Identity),
            "sqrt" => Ok(Transform::Sqrt),
            "log" => Ok(Transform::Log),
            "log-sqrt" | "logsqrt" | "log_sqrt" => Ok(Transform::LogSqrt),
            other => Err(Error::InvalidInput(format!("unknown transform `{other}`"))),
        }
    }
}

pub fn apply_transform<T: Scalar>(sigma2: T, transform: Transform) -> Option<T> {
    transform.apply(sigma2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Valid,
    /// `|L| >= 1`: no positive variance is implied.
    ModulusTooLarge,
    /// `|L| = 0` or non-finite.
    ModulusDegenerate,
    /// The transform is undefined at the recovered variance.
    TransformUndefined,
}

/// Spot variance (and its transform) recovered from one CF estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpotVolEstimate<T> {
    pub tenor: T,
    pub u: T,
    pub sigma2: T,
    /// `F(sigma2)`; meaningful only when `validity` is `Valid`.
    pub transformed: T,
    pub transform: Transform,
    pub validity: Validity,
}

impl<T: Scalar> SpotVolEstimate<T> {
    pub fn is_valid(&self) -> bool {
        self.validity == Validity::Valid
    }

    pub fn value(&self) -> Option<T> {
        self.is_valid().then_some(self.transformed)
    }
}

/// `-2 log|L| / u^2` with the identity transform.
pub fn spot_variance<T: Scalar>(cf: &CfEstimate<T>, u: T) -> SpotVolEstimate<T> {
    spot_variance_with(cf, u, Transform::Identity)
}

pub fn spot_variance_with<T: Scalar>(cf: &CfEstimate<T>, u: T, transform: Transform) -> SpotVolEstimate<T> {
    let m = cf.value.norm();
    let sigma2 = -T::lit(2.0) / (u * u) * m.ln();
    let mut validity = if !m.is_finite() || m <= T::zero() || !(u > T::zero()) {
        Validity::ModulusDegenerate
    } else if m >= T::one() {
        Validity::ModulusTooLarge
    } else {
        Validity::Valid
    };
    let transformed = match (validity, transform.apply(sigma2)) {
        (Validity::Valid, Some(v)) => v,
        (Validity::Valid, None) => {
            validity = Validity::TransformUndefined;
            T::nan()
        }
        _ => T::nan(),
    };
    SpotVolEstimate {
        tenor: cf.tenor,
        u,
        sigma2,
        transformed,
        transform,
        validity,
    }
}

/// `(T' v_short - T v_long) / (T' - T)`: removes any bias linear in tenor.
pub fn two_tenor_combine<T: Scalar>(v_short: T, v_long: T, tenor: T, tenor_long: T) -> Result<T> {
    if !(tenor > T::zero() && tenor_long > tenor) {
        return Err(Error::InvalidParameter {
            name: "tenor_long",
            reason: format!("need T' > T > 0, got T={tenor}, T'={tenor_long}"),
        });
    }
    Ok((tenor_long * v_short - tenor * v_long) / (tenor_long - tenor))
}

/// Which branch of the selection rule produced `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum USelectionBranch {
    /// First crossing of the modulus threshold.
    Crossing,
    /// Minimiser of the modulus on `[0, u_bar]`.
    Argmin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct USelection<T> {
    pub u: T,
    pub u_bar: T,
    pub branch: USelectionBranch,
}

/// Modulus level defining the first-crossing branch.
pub const U_CROSSING_LEVEL: f64 = 0.3;
/// `u_bar = sqrt(-2 log(U_BAR_LEVEL)) / sigma_atm`.
pub const U_BAR_LEVEL: f64 = 0.05;
/// Grid points on `[0, u_bar]` beyond the origin.
pub const U_GRID_STEPS: usize = 1000;

/// Data-driven choice of the characteristic exponent: the first `u` at which
/// `|L(u)|` drops to 0.3 (linearly interpolated between grid points), or the
/// minimiser of `|L|` over `[0, u_bar]` when no crossing occurs.
pub fn select_u<T: Scalar>(
    log_strikes: &[T],
    prices: &[T],
    log_spot: T,
    tenor: T,
    atm_iv: T,
) -> Result<USelection<T>> {
    if !(atm_iv > T::zero() && atm_iv.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "atm_iv",
            reason: format!("must be positive, got {atm_iv}"),
        });
    }
    if log_strikes.len() != prices.len() || log_strikes.len() < 3 {
        return Err(Error::InsufficientQuotes {
            tenor: tenor.as_f64(),
            valid: log_strikes.len().min(prices.len()),
            needed: 3,
        });
    }
    let u_bar = (-T::lit(2.0) * T::lit(U_BAR_LEVEL).ln()).sqrt() / atm_iv;
    let step = u_bar / T::count(U_GRID_STEPS);
    let modulus = cf_modulus_grid(log_strikes, prices, log_spot, tenor, step, U_GRID_STEPS);
    let level = T::lit(U_CROSSING_LEVEL);

    if let Some(m) = modulus.iter().position(|&v| v <= level) {
        let u = if m == 0 {
            T::zero()
        } else {
            let (a, b) = (modulus[m - 1], modulus[m]);
            let w = (a - level) / (a - b);
            step * (T::count(m - 1) + w)
        };
        if u > T::zero() {
            return Ok(USelection {
                u,
                u_bar,
                branch: USelectionBranch::Crossing,
            });
        }
    }
    // argmin over the grid, excluding the origin where |L| = 1
    let mut best = 1;
    for m in 2..modulus.len() {
        if modulus[m] < modulus[best] {
            best = m;
        }
    }
    Ok(USelection {
        u: step * T::count(best),
        u_bar,
        branch: USelectionBranch::Argmin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cf_at_zero_is_one() {
        let ks = [7.7, 7.8, 7.9, 8.0];
        let ps = [1.0, 2.0, 2.0, 1.0];
        let cf = estimate_cf(&ks, &ps, 7.85, 0.01, 0.0).unwrap();
        assert_eq!(cf.value, Complex::new(1.0, 0.0));
        assert!(cf.modulus_out_of_range);
    }

    #[test]
    fn cf_linear_in_prices() {
        let ks: Vec<f64> = (0..20).map(|i| (2450.0 + 5.0 * i as f64).ln()).collect();
        let ps: Vec<f64> = (0..20).map(|i| 1.0 + (i as f64 - 10.0).abs()).collect();
        let ps2: Vec<f64> = ps.iter().map(|p| 2.0 * p).collect();
        let x = 2500f64.ln();
        let a = estimate_cf(&ks, &ps, x, 0.01, 2.0).unwrap().value - 1.0;
        let b = estimate_cf(&ks, &ps2, x, 0.01, 2.0).unwrap().value - 1.0;
        assert!((b - a * 2.0).norm() < 1e-12);
    }

    #[test]
    fn cf_rejects_bad_grids() {
        assert!(estimate_cf(&[1.0, 2.0], &[1.0, 1.0], 1.5, 0.1, 1.0).is_err());
        assert!(estimate_cf(&[1.0, 2.0, 1.5], &[1.0, 1.0, 1.0], 1.5, 0.1, 1.0).is_err());
    }

    #[test]
    fn spot_variance_inverts_gaussian_modulus() {
        let u = 3.0f64;
        let m = (-u * u * 0.02 / 2.0).exp();
        let cf = CfEstimate {
            u,
            tenor: 0.01,
            value: Complex::from_polar(m, 0.3),
            modulus_out_of_range: false,
        };
        let sv = spot_variance(&cf, u);
        assert!(sv.is_valid());
        assert!((sv.sigma2 - 0.02).abs() < 1e-15);

        let big = CfEstimate {
            value: Complex::new(1.0, 0.1),
            ..cf
        };
        assert_eq!(spot_variance(&big, u).validity, Validity::ModulusTooLarge);
        let zero = CfEstimate {
            value: Complex::new(0.0, 0.0),
            ..cf
        };
        assert_eq!(spot_variance(&zero, u).validity, Validity::ModulusDegenerate);
    }

    #[test]
    fn transforms() {
        assert!((Transform::Log.apply(0.02_f64).unwrap() - (-3.912_023_005_428_146)).abs() < 1e-12);
        assert_eq!(Transform::Identity.apply(0.02_f64), Some(0.02));
        assert!((Transform::Sqrt.apply(0.04_f64).unwrap() - 0.2).abs() < 1e-15);
        assert!((Transform::LogSqrt.apply(0.04_f64).unwrap() - 0.2_f64.ln()).abs() < 1e-15);
        assert_eq!(Transform::Log.apply(-0.01_f64), None);
        assert_eq!(Transform::Log.apply(0.0_f64), None);
        assert_eq!(apply_transform(0.5_f32, Transform::Identity), Some(0.5));
    }

    #[test]
    fn two_tenor_arithmetic() {
        assert_eq!(two_tenor_combine(0.3, 0.3, 1.0, 2.0).unwrap(), 0.3);
        let v: f64 = two_tenor_combine(0.021, 0.022, 3.0 / 252.0, 6.0 / 252.0).unwrap();
        assert!((v - 0.020).abs() < 1e-15);
        assert!(two_tenor_combine(0.1, 0.1, 2.0, 1.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn two_tenor_cancels_linear_bias(a in -5.0f64..5.0, b in -50.0f64..50.0,
                                         t in 0.001f64..0.1, ratio in 1.1f64..5.0) {
            let tp = t * ratio;
            let out = two_tenor_combine(a + b * t, a + b * tp, t, tp).unwrap();
            proptest::prop_assert!((out - a).abs() < 1e-9 * (1.0 + a.abs() + b.abs()));
        }
    }

    fn gaussian_panel(sigma2: f64, tenor: f64, spot: f64, mesh: f64, width: f64) -> (Vec<f64>, Vec<f64>) {
        use crate::bs::bs_price;
        use crate::panel::OptionSide;
        let sd = (sigma2 * tenor).sqrt() * spot;
        let n = (2.0 * width * sd / mesh) as i64;
        let start = ((spot - width * sd) / mesh).floor();
        let mut ks = Vec::new();
        let mut ps = Vec::new();
        for i in 0..=n {
            let k = (start + i as f64) * mesh;
            ks.push(f64::ln(k));
            ps.push(bs_price(spot, k, tenor, sigma2.sqrt(), OptionSide::otm(k, spot)));
        }
        (ks, ps)
    }

    #[test]
    fn dense_black_scholes_panel_recovers_variance() {
        let (t, spot) = (3.0 / 252.0, 2500.0);
        let (ks, ps) = gaussian_panel(0.02, t, spot, 0.25, 8.0);
        let cf = estimate_cf(&ks, &ps, spot.ln(), t, 1.0).unwrap();
        let target = (-0.02f64 / 2.0).exp();
        assert!((cf.value.norm() - target).abs() / target < 2e-3);
        let sv = spot_variance(&cf, 1.0);
        assert!((sv.sigma2 - 0.02).abs() / 0.02 < 5e-3, "{}", sv.sigma2);
        let u = 10.0;
        let sv = spot_variance(&estimate_cf(&ks, &ps, spot.ln(), t, u).unwrap(), u);
        assert!((sv.sigma2 - 0.02).abs() / 0.02 < 5e-3, "{}", sv.sigma2);
    }

    #[test]
    fn modulus_grid_matches_direct_sum() {
        let (t, spot) = (3.0 / 252.0, 2500.0);
        let (ks, ps) = gaussian_panel(0.02, t, spot, 2.5, 8.0);
        let grid = cf_modulus_grid(&ks, &ps, spot.ln(), t, 0.02, 1000);
        for m in [0usize, 1, 17, 500, 999, 1000] {
            let u = 0.02 * m as f64;
            let direct = estimate_cf(&ks, &ps, spot.ln(), t, u).unwrap().value.norm();
            assert!((grid[m] - direct).abs() < 1e-10, "{m}");
        }
    }

    #[test]
    fn u_selection_hits_analytic_crossing() {
        let (t, spot) = (3.0 / 252.0, 2500.0);
        let (ks, ps) = gaussian_panel(0.02, t, spot, 0.25, 10.0);
        let sel = select_u(&ks, &ps, spot.ln(), t, 0.02f64.sqrt()).unwrap();
        let expected = (-2.0 * 0.3f64.ln() / 0.02).sqrt();
        assert_eq!(sel.branch, USelectionBranch::Crossing);
        assert!((sel.u_bar - 17.31).abs() < 0.01, "{}", sel.u_bar);
        assert!((sel.u - expected).abs() < 0.05, "{} vs {expected}", sel.u);
    }

    #[test]
    fn u_selection_falls_back_to_argmin() {
        let (t, spot) = (3.0 / 252.0, 2500.0);
        let (ks, ps) = gaussian_panel(0.02, t, spot, 0.25, 10.0);
        // overstated ATM vol shrinks u_bar below the crossing
        let sel = select_u(&ks, &ps, spot.ln(), t, 0.3).unwrap();
        assert_eq!(sel.branch, USelectionBranch::Argmin);
        assert!(sel.u > 0.0 && sel.u <= sel.u_bar * (1.0 + 1e-12));
        assert!((sel.u - sel.u_bar).abs() < 1e-9);
    }
}
