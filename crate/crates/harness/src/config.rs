//! Flat `key = value` scenario configuration.
//!
//! Blank lines and `#` comments are ignored. Every key can also be given on
//! the command line as `--set key=value`, which overrides the file.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use volvol_core::charfn::Transform;
use volvol_core::sim::stationary_variance_quantile;
use volvol_core::{Case, ModelParams};

/// Truncation level for the variance increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    Infinite,
    /// Bipower-based level from the current and preceding days.
    Empirical,
    Fixed(f64),
}

impl FromStr for Truncation {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "infinite" | "inf" | "none" => Ok(Truncation::Infinite),
            "empirical" => Ok(Truncation::Empirical),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| anyhow!("truncation must be `infinite`, `empirical` or a number, got `{other}`"))?;
                if !(v > 0.0) {
                    bail!("fixed truncation level must be positive");
                }
                Ok(Truncation::Fixed(v))
            }
        }
    }
}

impl std::fmt::Display for Truncation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Truncation::Infinite => f.write_str("infinite"),
            Truncation::Empirical => f.write_str("empirical"),
            Truncation::Fixed(v) => write!(f, "{v}"),
        }
    }
}

/// Starting variance: explicit or a quantile of the stationary law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum V0Spec {
    Value(f64),
    Quantile(f64),
}

/// Filters applied when ingesting market option panels.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Drop quotes with `ask / bid` at or above this.
    pub max_ask_bid: f64,
    /// Drop maturities whose near-the-money strike gap exceeds this.
    pub max_atm_gap: f64,
    /// Drop maturities whose edge-to-peak price ratio exceeds this.
    pub max_edge_ratio: f64,
    pub min_tenor_days: f64,
    pub max_tenor_days: f64,
    pub min_tenor_gap_days: f64,
    pub exclude_dates: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_ask_bid: 10.0,
            max_atm_gap: 5.0,
            max_edge_ratio: 0.025,
            min_tenor_days: 2.0,
            max_tenor_days: 16.0,
            min_tenor_gap_days: 3.0,
            exclude_dates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub params: ModelParams,
    /// Named case the parameters came from, if any.
    pub case: Option<Case>,
    pub v0: V0Spec,
    pub k_n: usize,
    pub delta_n: f64,
    /// Short and long tenor at the start of the window, in business days.
    pub tenor_days: f64,
    pub tenor_long_days: f64,
    pub noise: f64,
    pub mesh: f64,
    pub transform: Transform,
    pub truncation: Truncation,
    pub replications: usize,
    pub seed: u64,
    /// Fine returns per option sampling interval.
    pub l_n: usize,
    /// Euler substeps per fine return interval.
    pub substeps: usize,
    pub level: f64,
    /// Largest tolerated share of missing increments in a window.
    pub max_missing: f64,
    pub strike_step: f64,
    pub min_price: f64,
    /// Days of increments feeding the empirical truncation level.
    pub truncation_days: usize,
    pub ma_window: usize,
    /// Clock time of the first observation and the spacing, for CSV output.
    pub session_start_minutes: u32,
    pub step_minutes: u32,
    pub filters: FilterConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            params: ModelParams::case(Case::M),
            case: Some(Case::M),
            v0: V0Spec::Quantile(0.5),
            k_n: 80,
            delta_n: 1.0 / (252.0 * 80.0),
            tenor_days: 3.0,
            tenor_long_days: 6.0,
            noise: 0.015,
            mesh: 2.5,
            transform: Transform::Log,
            truncation: Truncation::Infinite,
            replications: 1000,
            seed: 20_240_101,
            l_n: 72,
            substeps: 1,
            level: 0.95,
            max_missing: 0.1,
            strike_step: 5.0,
            min_price: 0.075,
            truncation_days: 4,
            ma_window: 5,
            session_start_minutes: 9 * 60 + 30,
            step_minutes: 5,
            filters: FilterConfig::default(),
        }
    }
}

/// Keys accepted in config files and `--set`.
pub const KEYS: &[(&str, &str)] = &[
    ("case", "named parameter set S, M or F (resets model parameters)"),
    ("kappa_v", "mean reversion speed"),
    ("theta_v", "long-run variance"),
    ("sigma_v", "volatility of variance"),
    ("rho", "price/variance correlation"),
    ("lambda_minus", "negative jump decay"),
    ("lambda_plus", "positive jump decay"),
    ("c_minus", "negative jump intensity scale"),
    ("c_plus", "positive jump intensity scale"),
    ("jumps", "`off` removes jumps, `balanced` sets jump variation equal to diffusive variance"),
    ("x0", "initial price level"),
    ("v0", "starting variance"),
    ("v0_quantile", "starting variance as a stationary quantile"),
    ("k_n", "increments per window"),
    ("delta_n", "option sampling interval in years"),
    ("tenor_days", "short tenor at the window start, business days"),
    ("tenor_long_days", "long tenor at the window start, business days"),
    ("noise", "relative option observation error"),
    ("mesh", "strike mesh after interpolation"),
    ("transform", "identity, sqrt, log or log-sqrt"),
    ("truncation", "infinite, empirical or a fixed level"),
    ("replications", "Monte Carlo replications"),
    ("seed", "base seed"),
    ("l_n", "fine returns per sampling interval"),
    ("substeps", "Euler substeps per fine return"),
    ("level", "confidence level"),
    ("max_missing", "largest tolerated missing share per window"),
    ("strike_step", "listed strike spacing"),
    ("min_price", "price at which the strike grid stops"),
    ("truncation_days", "days feeding the empirical truncation level"),
    ("ma_window", "moving-average length for daily series"),
    ("session_start", "clock time of the first observation (HH:MM)"),
    ("step_minutes", "minutes between observations"),
    ("max_ask_bid", "ingest: largest ask/bid ratio"),
    ("max_atm_gap", "ingest: largest near-the-money strike gap"),
    ("max_edge_ratio", "ingest: largest edge-to-peak price ratio"),
    ("min_tenor_days", "ingest: shortest usable tenor"),
    ("max_tenor_days", "ingest: longest usable tenor"),
    ("min_tenor_gap_days", "ingest: smallest gap between the two tenors"),
    ("exclude_dates", "ingest: comma separated dates to skip"),
];

const MODEL_KEYS: &[&str] = &[
    "kappa_v",
    "theta_v",
    "sigma_v",
    "rho",
    "lambda_minus",
    "lambda_plus",
    "c_minus",
    "c_plus",
    "jumps",
    "x0",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

fn parse_clock(value: &str) -> Result<u32> {
    let (h, m) = value
        .trim()
        .split_once(':')
        .ok_or_else(|| anyhow!("clock time must be HH:MM, got `{value}`"))?;
    let h: u32 = parse("session_start", h)?;
    let m: u32 = parse("session_start", m)?;
    if h >= 24 || m >= 60 {
        bail!("clock time out of range: `{value}`");
    }
    Ok(h * 60 + m)
}

impl ScenarioConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.params;
        match key.trim() {
            "case" => {
                let case: Case = parse(key, value)?;
                *p = ModelParams::case(case);
                self.case = Some(case);
                return Ok(());
            }
            "kappa_v" => p.kappa_v = parse(key, value)?,
            "theta_v" => p.theta_v = parse(key, value)?,
            "sigma_v" => p.sigma_v = parse(key, value)?,
            "rho" => p.rho = parse(key, value)?,
            "lambda_minus" => p.lambda_minus = parse(key, value)?,
            "lambda_plus" => p.lambda_plus = parse(key, value)?,
            "c_minus" => p.c_minus = parse(key, value)?,
            "c_plus" => p.c_plus = parse(key, value)?,
            "jumps" => match value.trim() {
                "off" | "false" | "0" => *p = p.without_jumps(),
                "on" | "true" | "1" => {}
                "balanced" => *p = p.balanced_jumps(),
                other => bail!("jumps must be on, off or balanced, got `{other}`"),
            },
            "x0" => p.x0 = parse(key, value)?,
            "v0" => self.v0 = V0Spec::Value(parse(key, value)?),
            "v0_quantile" => self.v0 = V0Spec::Quantile(parse(key, value)?),
            "k_n" => self.k_n = parse(key, value)?,
            "delta_n" => self.delta_n = parse(key, value)?,
            "tenor_days" => self.tenor_days = parse(key, value)?,
            "tenor_long_days" => self.tenor_long_days = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "mesh" => self.mesh = parse(key, value)?,
            "transform" => self.transform = value.parse().map_err(|e| anyhow!("{e}"))?,
            "truncation" => self.truncation = value.parse()?,
            "replications" => self.replications = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "l_n" => self.l_n = parse(key, value)?,
            "substeps" => self.substeps = parse(key, value)?,
            "level" => self.level = parse(key, value)?,
            "max_missing" => self.max_missing = parse(key, value)?,
            "strike_step" => self.strike_step = parse(key, value)?,
            "min_price" => self.min_price = parse(key, value)?,
            "truncation_days" => self.truncation_days = parse(key, value)?,
            "ma_window" => self.ma_window = parse(key, value)?,
            "session_start" => self.session_start_minutes = parse_clock(value)?,
            "step_minutes" => self.step_minutes = parse(key, value)?,
            "max_ask_bid" => self.filters.max_ask_bid = parse(key, value)?,
            "max_atm_gap" => self.filters.max_atm_gap = parse(key, value)?,
            "max_edge_ratio" => self.filters.max_edge_ratio = parse(key, value)?,
            "min_tenor_days" => self.filters.min_tenor_days = parse(key, value)?,
            "max_tenor_days" => self.filters.max_tenor_days = parse(key, value)?,
            "min_tenor_gap_days" => self.filters.min_tenor_gap_days = parse(key, value)?,
            "exclude_dates" => {
                self.filters.exclude_dates = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            other => bail!("unknown config key `{other}`"),
        }
        if MODEL_KEYS.contains(&key.trim()) {
            self.case = None;
        }
        Ok(())
    }

    /// Applies `key = value` lines.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            self.set(k, v).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("override `{o}` is not key=value"))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn v0(&self) -> Result<f64> {
        match self.v0 {
            V0Spec::Value(v) => Ok(v),
            V0Spec::Quantile(q) => Ok(stationary_variance_quantile(&self.params, q)?),
        }
    }

    /// Observations per business day, `1 / (252 delta_n)`.
    pub fn steps_per_day(&self) -> f64 {
        let s = 1.0 / (252.0 * self.delta_n);
        if (s - s.round()).abs() < 1e-9 * s {
            s.round()
        } else {
            s
        }
    }

    /// Tenor in days at backward observation index `i` (0 = window end) for
    /// an expiry `start_days` ahead of the window start.
    pub fn tenor_days_at(&self, start_days: f64, i: usize) -> f64 {
        start_days - (self.k_n - i) as f64 / self.steps_per_day()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.k_n < 3 {
            bail!("k_n must be at least 3");
        }
        if !(self.delta_n > 0.0) {
            bail!("delta_n must be positive");
        }
        if !(self.tenor_days > 0.0 && self.tenor_long_days > self.tenor_days) {
            bail!("need tenor_long_days > tenor_days > 0");
        }
        if self.k_n as f64 * self.delta_n >= self.tenor_days / 252.0 * (1.0 - 1e-12) {
            bail!("window k_n * delta_n must be shorter than the short tenor");
        }
        if !(self.noise >= 0.0 && self.mesh > 0.0 && self.strike_step > 0.0 && self.min_price > 0.0) {
            bail!("noise must be nonnegative; mesh, strike_step and min_price positive");
        }
        if !(0.0..1.0).contains(&self.level) {
            bail!("level must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.max_missing) {
            bail!("max_missing must lie in [0, 1]");
        }
        if self.l_n < 2 || self.substeps == 0 {
            bail!("l_n must be at least 2 and substeps positive");
        }
        if self.truncation_days == 0 || self.ma_window == 0 {
            bail!("truncation_days and ma_window must be positive");
        }
        let v0 = self.v0()?;
        if !(v0 > 0.0) {
            bail!("starting variance must be positive");
        }
        Ok(())
    }

    /// Round-trippable listing of the effective configuration.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        if let Some(c) = self.case {
            let _ = writeln!(s, "# parameters of case {c}");
        }
        let _ = writeln!(s, "kappa_v = {}", p.kappa_v);
        let _ = writeln!(s, "theta_v = {}", p.theta_v);
        let _ = writeln!(s, "sigma_v = {}", p.sigma_v);
        let _ = writeln!(s, "rho = {}", p.rho);
        let _ = writeln!(s, "lambda_minus = {}", p.lambda_minus);
        let _ = writeln!(s, "lambda_plus = {}", p.lambda_plus);
        let _ = writeln!(s, "c_minus = {}", p.c_minus);
        let _ = writeln!(s, "c_plus = {}", p.c_plus);
        let _ = writeln!(s, "x0 = {}", p.x0);
        match self.v0 {
            V0Spec::Value(v) => {
                let _ = writeln!(s, "v0 = {v}");
            }
            V0Spec::Quantile(q) => {
                let _ = writeln!(s, "v0_quantile = {q}");
            }
        }
        let _ = writeln!(s, "k_n = {}", self.k_n);
        let _ = writeln!(s, "delta_n = {}", self.delta_n);
        let _ = writeln!(s, "tenor_days = {}", self.tenor_days);
        let _ = writeln!(s, "tenor_long_days = {}", self.tenor_long_days);
        let _ = writeln!(s, "noise = {}", self.noise);
        let _ = writeln!(s, "mesh = {}", self.mesh);
        let _ = writeln!(s, "transform = {}", self.transform.name());
        let _ = writeln!(s, "truncation = {}", self.truncation);
        let _ = writeln!(s, "replications = {}", self.replications);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "l_n = {}", self.l_n);
        let _ = writeln!(s, "substeps = {}", self.substeps);
        let _ = writeln!(s, "level = {}", self.level);
        let _ = writeln!(s, "max_missing = {}", self.max_missing);
        let _ = writeln!(s, "strike_step = {}", self.strike_step);
        let _ = writeln!(s, "min_price = {}", self.min_price);
        let _ = writeln!(s, "truncation_days = {}", self.truncation_days);
        let _ = writeln!(s, "ma_window = {}", self.ma_window);
        let m = self.session_start_minutes;
        let _ = writeln!(s, "session_start = {:02}:{:02}", m / 60, m % 60);
        let _ = writeln!(s, "step_minutes = {}", self.step_minutes);
        let f = &self.filters;
        let _ = writeln!(s, "max_ask_bid = {}", f.max_ask_bid);
        let _ = writeln!(s, "max_atm_gap = {}", f.max_atm_gap);
        let _ = writeln!(s, "max_edge_ratio = {}", f.max_edge_ratio);
        let _ = writeln!(s, "min_tenor_days = {}", f.min_tenor_days);
        let _ = writeln!(s, "max_tenor_days = {}", f.max_tenor_days);
        let _ = writeln!(s, "min_tenor_gap_days = {}", f.min_tenor_gap_days);
        let _ = writeln!(s, "exclude_dates = {}", f.exclude_dates.join(","));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_design() {
        let c = ScenarioConfig::default();
        assert_eq!(c.k_n, 80);
        assert_eq!(c.steps_per_day(), 80.0);
        assert_eq!(c.tenor_days_at(3.0, 80), 3.0);
        assert_eq!(c.tenor_days_at(3.0, 0), 2.0);
        assert_eq!(c.transform, Transform::Log);
        assert_eq!(c.truncation, Truncation::Infinite);
        c.validate().unwrap();
    }

    #[test]
    fn text_roundtrip() {
        let mut c = ScenarioConfig::default();
        c.apply_text("case = F\nv0 = 0.0156 # explicit\n\nnoise=0\nexclude_dates = 2018-02-05, 2018-02-06\ntruncation = empirical")
            .unwrap();
        assert_eq!(c.params, ModelParams::case(Case::F));
        assert_eq!(c.case, Some(Case::F));
        assert_eq!(c.v0, V0Spec::Value(0.0156));
        assert_eq!(c.filters.exclude_dates.len(), 2);
        let mut d = ScenarioConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        d.case = c.case;
        assert_eq!(c, d);
    }

    #[test]
    fn overrides_and_errors() {
        let mut c = ScenarioConfig::default();
        c.apply_overrides(&["sigma_v=0.5", "session_start=10:05"]).unwrap();
        assert_eq!(c.params.sigma_v, 0.5);
        assert_eq!(c.case, None);
        assert_eq!(c.session_start_minutes, 605);
        assert!(c.apply_overrides(&["bogus=1"]).is_err());
        assert!(c.apply_overrides(&["k_n"]).is_err());
        assert!(c.apply_text("tenor_days = x").is_err());
        let bad = ScenarioConfig {
            tenor_long_days: 2.0,
            ..ScenarioConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
