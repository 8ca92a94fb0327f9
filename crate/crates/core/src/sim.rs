//! Statistical-measure simulation of the Heston price/variance dynamics.
//!
//! Under P the log-price has no jumps: `dx = -V/2 dt + sqrt(V) dW`,
//! `dV = kappa (theta - V) dt + sigma_v sqrt(V) dB`, `corr(dW, dB) = rho`.
//! Paths are generated with a full-truncation Euler scheme on a fine substep
//! grid and sampled every `substeps_per_step` substeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{ensure_finite, Error, Result};

/// Named parameter cases of the Monte Carlo design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Case {
    /// Slow mean reversion (six-month half-life).
    S,
    /// Medium mean reversion (one-month half-life).
    M,
    /// Fast mean reversion (ten-business-day half-life).
    F,
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S" => Ok(Case::S),
            "M" => Ok(Case::M),
            "F" => Ok(Case::F),
            other => Err(Error::InvalidInput(format!("unknown case `{other}`"))),
        }
    }
}

impl std::fmt::Display for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Case::S => "S",
            Case::M => "M",
            Case::F => "F",
        };
        f.write_str(s)
    }
}

/// Affine stochastic volatility model with variance-proportional
/// double-exponential price jumps (jumps only under Q).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub theta_v: f64,
    pub kappa_v: f64,
    pub sigma_v: f64,
    pub rho: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub c_minus: f64,
    pub c_plus: f64,
    /// Initial price level.
    pub x0: f64,
}

impl ModelParams {
    /// Parameter presets used for the simulation study. The negative jump
    /// scale is the tabulated `3.6e3`; see [`ModelParams::balanced_jumps`]
    /// for the variant where jump variation equals diffusive variance.
    pub fn case(case: Case) -> Self {
        let (kappa_v, sigma_v) = match case {
            Case::S => (1.39, 0.15),
            Case::M => (7.90, 0.40),
            Case::F => (17.50, 0.70),
        };
        let lambda_minus: f64 = 50.0;
        let lambda_plus: f64 = 100.0;
        ModelParams {
            theta_v: 0.02,
            kappa_v,
            sigma_v,
            rho: -0.9,
            lambda_minus,
            lambda_plus,
            c_minus: 3.6e3,
            c_plus: 50.0e3,
            x0: 2500.0,
        }
    }

    /// Rescales the jump intensities so that jump variation per unit of
    /// variance is one, 90% of it from negative jumps.
    pub fn balanced_jumps(mut self) -> Self {
        self.c_minus = 0.9 * self.lambda_minus.powi(3) / 2.0;
        self.c_plus = 0.1 * self.lambda_plus.powi(3) / 2.0;
        self
    }

    /// Pure Heston: jump intensity switched off.
    pub fn without_jumps(mut self) -> Self {
        self.c_minus = 0.0;
        self.c_plus = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("theta_v", self.theta_v)?;
        ensure_finite("kappa_v", self.kappa_v)?;
        ensure_finite("sigma_v", self.sigma_v)?;
        ensure_finite("rho", self.rho)?;
        ensure_finite("lambda_minus", self.lambda_minus)?;
        ensure_finite("lambda_plus", self.lambda_plus)?;
        ensure_finite("c_minus", self.c_minus)?;
        ensure_finite("c_plus", self.c_plus)?;
        ensure_finite("x0", self.x0)?;
        let bad = |name: &'static str, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if self.theta_v <= 0.0 {
            return bad("theta_v", "must be positive");
        }
        if self.kappa_v <= 0.0 {
            return bad("kappa_v", "must be positive");
        }
        if self.sigma_v < 0.0 {
            return bad("sigma_v", "must be nonnegative");
        }
        if self.rho.abs() > 1.0 {
            return bad("rho", "must lie in [-1, 1]");
        }
        if self.lambda_minus <= 1.0 {
            return bad("lambda_minus", "must exceed 1 for e^x-integrability");
        }
        if self.lambda_plus <= 1.0 {
            return bad("lambda_plus", "must exceed 1 for e^x-integrability");
        }
        if self.c_minus < 0.0 || self.c_plus < 0.0 {
            return bad("c_minus/c_plus", "must be nonnegative");
        }
        if self.x0 <= 0.0 {
            return bad("x0", "must be positive");
        }
        Ok(())
    }

    /// `sigma_v^2 <= 2 kappa_v theta_v`. Reported, never enforced.
    pub fn feller_satisfied(&self) -> bool {
        self.sigma_v * self.sigma_v <= 2.0 * self.kappa_v * self.theta_v
    }

    /// Jump arrival rate per unit of variance per year.
    pub fn jump_rate_per_variance(&self) -> f64 {
        self.c_minus / self.lambda_minus + self.c_plus / self.lambda_plus
    }
}

/// Sampled path. `variance` holds the truncated (nonnegative) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePath {
    pub times: Vec<f64>,
    pub log_price: Vec<f64>,
    pub variance: Vec<f64>,
}

impl PricePath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn log_returns(&self) -> Vec<f64> {
        self.log_price.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// ChaCha8 generator for stream `stream` of base seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates one path sampled at `n_steps + 1` points (including time 0)
/// spaced `horizon / n_steps` apart.
pub fn simulate_path(
    params: &ModelParams,
    v0: f64,
    horizon: f64,
    n_steps: usize,
    substeps_per_step: usize,
    seed: u64,
) -> Result<PricePath> {
    let mut rng = stream_rng(seed, 0);
    simulate_path_with(params, v0, horizon, n_steps, substeps_per_step, &mut rng)
}

/// As [`simulate_path`] but drawing from a caller-supplied generator.
pub fn simulate_path_with<R: Rng + ?Sized>(
    params: &ModelParams,
    v0: f64,
    horizon: f64,
    n_steps: usize,
    substeps_per_step: usize,
    rng: &mut R,
) -> Result<PricePath> {
    params.validate()?;
    ensure_finite("v0", v0)?;
    ensure_finite("horizon", horizon)?;
    if v0 <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "v0",
            reason: "must be positive".into(),
        });
    }
    if horizon <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "horizon",
            reason: "must be positive".into(),
        });
    }
    if n_steps == 0 || substeps_per_step == 0 {
        return Err(Error::InvalidParameter {
            name: "n_steps",
            reason: "step counts must be nonzero".into(),
        });
    }

    let dt_step = horizon / n_steps as f64;
    let dt = dt_step / substeps_per_step as f64;
    let sqrt_dt = dt.sqrt();
    let rho = params.rho;
    let rho_perp = (1.0 - rho * rho).max(0.0).sqrt();
    let kappa = params.kappa_v;
    let theta = params.theta_v;
    let sigma_v = params.sigma_v;

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut log_price = Vec::with_capacity(n_steps + 1);
    let mut variance = Vec::with_capacity(n_steps + 1);

    let mut x = params.x0.ln();
    let mut v = v0;
    times.push(0.0);
    log_price.push(x);
    variance.push(v.max(0.0));

    for step in 1..=n_steps {
        for _ in 0..substeps_per_step {
            let z_b: f64 = rng.sample(StandardNormal);
            let z_perp: f64 = rng.sample(StandardNormal);
            let z_w = rho * z_b + rho_perp * z_perp;
            let vp = v.max(0.0);
            let sd = vp.sqrt() * sqrt_dt;
            x += -0.5 * vp * dt + sd * z_w;
            v += kappa * (theta - vp) * dt + sigma_v * sd * z_b;
        }
        times.push(step as f64 * dt_step);
        log_price.push(x);
        variance.push(v.max(0.0));
    }

    Ok(PricePath {
        times,
        log_price,
        variance,
    })
}

/// Quantile of the stationary CIR law Gamma(2 kappa theta / sigma_v^2,
/// scale sigma_v^2 / (2 kappa)).
pub fn stationary_variance_quantile(params: &ModelParams, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter {
            name: "p",
            reason: format!("probability must lie in (0, 1), got {p}"),
        });
    }
    params.validate()?;
    if params.sigma_v == 0.0 {
        return Ok(params.theta_v);
    }
    let s2 = params.sigma_v * params.sigma_v;
    let shape = 2.0 * params.kappa_v * params.theta_v / s2;
    let rate = 2.0 * params.kappa_v / s2;
    let gamma = Gamma::new(shape, rate).map_err(|e| Error::InvalidParameter {
        name: "sigma_v",
        reason: e.to_string(),
    })?;
    Ok(gamma.inverse_cdf(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_cir_stays_at_theta() {
        let mut p = ModelParams::case(Case::M);
        p.sigma_v = 0.0;
        let path = simulate_path(&p, 0.02, 1.0 / 252.0, 80, 10, 7).unwrap();
        assert!(path.variance.iter().all(|&v| v == 0.02));
    }

    #[test]
    fn quantiles_match_table_headers() {
        let m = ModelParams::case(Case::M);
        let f = ModelParams::case(Case::F);
        let s = ModelParams::case(Case::S);
        let q = |p: &ModelParams, x| stationary_variance_quantile(p, x).unwrap();
        assert!((q(&m, 0.50) - 0.0167).abs() < 5e-5, "{}", q(&m, 0.5));
        assert!((q(&m, 0.25) - 0.0095).abs() < 5e-5, "{}", q(&m, 0.25));
        assert!((q(&m, 0.75) - 0.0269).abs() < 5e-5, "{}", q(&m, 0.75));
        assert!((q(&f, 0.25) - 0.0078).abs() < 5e-5, "{}", q(&f, 0.25));
        assert!((q(&f, 0.50) - 0.0156).abs() < 5e-5, "{}", q(&f, 0.5));
        assert!((q(&f, 0.75) - 0.0275).abs() < 5e-5, "{}", q(&f, 0.75));
        assert!((q(&s, 0.25) - 0.0106).abs() < 5e-5, "{}", q(&s, 0.25));
        assert!((q(&s, 0.50) - 0.0174).abs() < 5e-5, "{}", q(&s, 0.5));
        assert!((q(&s, 0.75) - 0.0265).abs() < 5e-5, "{}", q(&s, 0.75));
    }

    #[test]
    fn zero_vol_of_variance_quantile_is_theta() {
        let mut p = ModelParams::case(Case::F);
        p.sigma_v = 0.0;
        assert_eq!(stationary_variance_quantile(&p, 0.1).unwrap(), p.theta_v);
        assert_eq!(stationary_variance_quantile(&p, 0.9).unwrap(), p.theta_v);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = ModelParams::case(Case::M);
        assert!(simulate_path(&p, 0.02, 1.0, 0, 10, 1).is_err());
        assert!(simulate_path(&p, f64::NAN, 1.0, 10, 10, 1).is_err());
        let mut q = p;
        q.kappa_v = f64::INFINITY;
        assert!(simulate_path(&q, 0.02, 1.0, 10, 10, 1).is_err());
        assert!(stationary_variance_quantile(&p, 1.0).is_err());
    }

    #[test]
    fn seeded_paths_are_reproducible_and_nonnegative() {
        let p = ModelParams::case(Case::F);
        let a = simulate_path(&p, 0.005, 0.5, 500, 4, 99).unwrap();
        let b = simulate_path(&p, 0.005, 0.5, 500, 4, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.variance.iter().all(|&v| v >= 0.0));
        let c = simulate_path(&p, 0.005, 0.5, 500, 4, 100).unwrap();
        assert_ne!(a.log_price, c.log_price);
    }

    #[test]
    fn table_cases_satisfy_feller() {
        for c in [Case::S, Case::M, Case::F] {
            assert!(ModelParams::case(c).feller_satisfied());
        }
    }
}
