//! Window pipeline shared by the simulator and market data: interpolate each
//! tenor, pick `u` at the window start, recover spot variances, difference
//! them and run the estimators.

use anyhow::{bail, Context, Result};
use volvol_core::bs::{atm_implied_vol, interpolate_tenor};
use volvol_core::charfn::{
    estimate_cf, select_u, spot_variance_with, two_tenor_combine, Transform, USelection,
};
use volvol_core::vvlv::{self, truncation_threshold, IncrementSeries};
use volvol_core::{OptionPanel, TenorQuotes};

use crate::config::{ScenarioConfig, Truncation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    VvShort,
    VvLong,
    VvTwo,
    VvRet,
    LvShort,
    LvLong,
    LvTwo,
    LvRet,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::VvShort,
        EstimatorKind::VvLong,
        EstimatorKind::VvTwo,
        EstimatorKind::VvRet,
        EstimatorKind::LvShort,
        EstimatorKind::LvLong,
        EstimatorKind::LvTwo,
        EstimatorKind::LvRet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::VvShort => "VV_T",
            EstimatorKind::VvLong => "VV_T'",
            EstimatorKind::VvTwo => "VV_TT'",
            EstimatorKind::VvRet => "VV_ret",
            EstimatorKind::LvShort => "LV_T",
            EstimatorKind::LvLong => "LV_T'",
            EstimatorKind::LvTwo => "LV_TT'",
            EstimatorKind::LvRet => "LV_ret",
        }
    }

    /// File-name friendly form of [`EstimatorKind::name`].
    pub fn slug(self) -> String {
        self.name().to_lowercase().replace('\'', "p")
    }

    pub fn is_vv(self) -> bool {
        matches!(
            self,
            EstimatorKind::VvShort | EstimatorKind::VvLong | EstimatorKind::VvTwo | EstimatorKind::VvRet
        )
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| anyhow::anyhow!("unknown estimator `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeriesKind {
    Short,
    Long,
    Two,
}

/// One estimate with its interval, or the reason it is missing.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub kind: EstimatorKind,
    pub estimate: Option<f64>,
    pub avar: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub k_n: usize,
    pub upsilon: f64,
    pub flags: Vec<String>,
}

impl EstimateRecord {
    pub fn rejected(kind: EstimatorKind, k_n: usize, upsilon: f64, reason: String) -> Self {
        EstimateRecord {
            kind,
            estimate: None,
            avar: None,
            ci: None,
            k_n,
            upsilon,
            flags: vec![reason],
        }
    }

    pub fn flag_string(&self) -> String {
        self.flags.join(";")
    }
}

/// Transformed spot variances along a window, indexed backwards in time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotSeries {
    /// Log-forward at each observation.
    pub x: Vec<f64>,
    pub atm_iv: f64,
    pub u_short: USelection<f64>,
    pub u_long: USelection<f64>,
    pub short: Vec<Option<f64>>,
    pub long: Vec<Option<f64>>,
    pub two: Vec<Option<f64>>,
    pub dropped_quotes: usize,
    pub interpolated_quotes: usize,
    /// Tenors that could not be densified, each leaving a missing level.
    pub failed_tenors: usize,
}

impl SpotSeries {
    pub fn levels(&self, kind: SeriesKind) -> &[Option<f64>] {
        match kind {
            SeriesKind::Short => &self.short,
            SeriesKind::Long => &self.long,
            SeriesKind::Two => &self.two,
        }
    }

    pub fn k_n(&self) -> usize {
        self.x.len().saturating_sub(1)
    }

    /// Absolute variance increments with missing ones set to zero, for the
    /// truncation rule.
    pub fn abs_increments(&self, kind: SeriesKind) -> Vec<f64> {
        self.levels(kind)
            .windows(2)
            .map(|w| match (w[0], w[1]) {
                (Some(a), Some(b)) => (a - b).abs(),
                _ => 0.0,
            })
            .collect()
    }
}

fn short_long(panel: &OptionPanel) -> Result<(&TenorQuotes, &TenorQuotes)> {
    match panel.tenors.as_slice() {
        [s, l] => Ok((s, l)),
        other => bail!("expected exactly two tenors per observation, got {}", other.len()),
    }
}

fn transformed(
    quotes: &TenorQuotes,
    log_forward: f64,
    u: f64,
    transform: Transform,
) -> Option<f64> {
    let cf = estimate_cf(&quotes.log_strikes(), &quotes.prices(), log_forward, quotes.tenor, u).ok()?;
    spot_variance_with(&cf, u, transform).value()
}

/// Spot-variance series for a window of panels ordered backwards in time
/// (`panels[0]` at the window end, `panels[k_n]` at its start), each with the
/// short and the long tenor. A tenor that cannot be interpolated leaves a
/// missing level; the window start must be complete because it fixes `u`.
pub fn spot_series(panels: &[OptionPanel], mesh: f64, transform: Transform) -> Result<SpotSeries> {
    if panels.len() < 3 {
        bail!("a window needs at least three observations, got {}", panels.len());
    }
    let mut dropped = 0;
    let mut interpolated = 0;
    let mut failed = 0;
    let mut fine = Vec::with_capacity(panels.len());
    for panel in panels {
        let (s, l) = short_long(panel)?;
        let f = panel.forward;
        let mut dense = |q: &TenorQuotes| match interpolate_tenor(q, f, mesh) {
            Ok((q, d)) => {
                dropped += d.dropped;
                interpolated += d.interpolated;
                Some(q)
            }
            Err(_) => {
                failed += 1;
                None
            }
        };
        let s = dense(s);
        let l = dense(l);
        fine.push((panel.log_forward(), s, l));
    }

    // u is chosen once, from the first observation of the window
    let (x_start, s_start, l_start) = fine.last().expect("nonempty window");
    let (Some(s_start), Some(l_start)) = (s_start, l_start) else {
        bail!("window start lacks a usable short or long tenor");
    };
    let f_start = panels.last().expect("nonempty window").forward;
    let atm_iv = atm_implied_vol(s_start, f_start).context("at-the-money implied vol at window start")?;
    let u_short = select_u(&s_start.log_strikes(), &s_start.prices(), *x_start, s_start.tenor, atm_iv)?;
    let u_long = select_u(&l_start.log_strikes(), &l_start.prices(), *x_start, l_start.tenor, atm_iv)?;

    let n = fine.len();
    let mut short = Vec::with_capacity(n);
    let mut long = Vec::with_capacity(n);
    let mut two = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for (lx, s, l) in &fine {
        x.push(*lx);
        let level = |q: &Option<TenorQuotes>, u: f64| q.as_ref().and_then(|q| transformed(q, *lx, u, transform));
        short.push(level(s, u_short.u));
        let vl = level(l, u_long.u);
        long.push(vl);
        let vs_at_long = level(s, u_long.u);
        two.push(match (vs_at_long, vl, s, l) {
            (Some(a), Some(b), Some(s), Some(l)) => two_tenor_combine(a, b, s.tenor, l.tenor).ok(),
            _ => None,
        });
    }
    Ok(SpotSeries {
        x,
        atm_iv,
        u_short,
        u_long,
        short,
        long,
        two,
        dropped_quotes: dropped,
        interpolated_quotes: interpolated,
        failed_tenors: failed,
    })
}

/// Resolves the truncation level for one series; `history` holds absolute
/// increments of preceding days, most recent first.
pub fn upsilon(
    truncation: Truncation,
    current: &[f64],
    history: &[Vec<f64>],
    days: usize,
    delta_n: f64,
) -> Result<f64> {
    Ok(match truncation {
        Truncation::Infinite => f64::INFINITY,
        Truncation::Fixed(v) => v,
        Truncation::Empirical => {
            let mut all: Vec<&[f64]> = vec![current];
            all.extend(
                history
                    .iter()
                    .take(days.saturating_sub(1))
                    .filter(|h| h.len() == current.len())
                    .map(Vec::as_slice),
            );
            truncation_threshold(&all, delta_n)?
        }
    })
}

/// VV and LV from one transformed-variance series.
pub fn estimate_pair(
    levels: &[Option<f64>],
    x: &[f64],
    kinds: (EstimatorKind, EstimatorKind),
    ups: f64,
    cfg: &ScenarioConfig,
) -> [EstimateRecord; 2] {
    let k_n = levels.len().saturating_sub(1);
    let series = match IncrementSeries::from_levels(cfg.delta_n, levels, x) {
        Ok(s) => s,
        Err(e) => {
            return [
                EstimateRecord::rejected(kinds.0, k_n, ups, e.to_string()),
                EstimateRecord::rejected(kinds.1, k_n, ups, e.to_string()),
            ]
        }
    };
    let missing = series.missing_fraction();
    if missing > cfg.max_missing {
        let why = format!("missing_increments={missing:.3}");
        return [
            EstimateRecord::rejected(kinds.0, k_n, ups, why.clone()),
            EstimateRecord::rejected(kinds.1, k_n, ups, why),
        ];
    }
    let record = |kind: EstimatorKind, r: volvol_core::Result<volvol_core::VvLvResultF64>| match r {
        Ok(r) => {
            let mut flags = Vec::new();
            if r.missing > 0 {
                flags.push(format!("missing={}", r.missing));
            }
            if r.truncated > 0 {
                flags.push(format!("truncated={}", r.truncated));
            }
            if r.avar_floored {
                flags.push("avar_floored".to_string());
            }
            EstimateRecord {
                kind,
                estimate: Some(r.estimate),
                avar: Some(r.avar),
                ci: Some((r.ci_low, r.ci_high)),
                k_n: r.k_n,
                upsilon: ups,
                flags,
            }
        }
        Err(e) => EstimateRecord::rejected(kind, k_n, ups, e.to_string()),
    };
    [
        record(kinds.0, vvlv::volatility_of_volatility(&series, ups, cfg.level)),
        record(kinds.1, vvlv::leverage(&series, ups, cfg.level)),
    ]
}

/// Option-based estimates for all three series of a window.
pub fn option_estimates(
    series: &SpotSeries,
    cfg: &ScenarioConfig,
    upsilons: [f64; 3],
) -> Vec<EstimateRecord> {
    let plan = [
        (SeriesKind::Short, (EstimatorKind::VvShort, EstimatorKind::LvShort)),
        (SeriesKind::Long, (EstimatorKind::VvLong, EstimatorKind::LvLong)),
        (SeriesKind::Two, (EstimatorKind::VvTwo, EstimatorKind::LvTwo)),
    ];
    let mut out = Vec::with_capacity(6);
    for ((kind, kinds), ups) in plan.into_iter().zip(upsilons) {
        out.extend(estimate_pair(series.levels(kind), &series.x, kinds, ups, cfg));
    }
    out
}

/// Spot series plus estimates for a single window, truncation taken from
/// this window alone.
pub fn estimate_window(panels: &[OptionPanel], cfg: &ScenarioConfig) -> Result<(SpotSeries, Vec<EstimateRecord>)> {
    let series = spot_series(panels, cfg.mesh, cfg.transform)?;
    let mut ups = [f64::INFINITY; 3];
    for (u, kind) in ups.iter_mut().zip([SeriesKind::Short, SeriesKind::Long, SeriesKind::Two]) {
        *u = upsilon(cfg.truncation, &series.abs_increments(kind), &[], 1, cfg.delta_n)?;
    }
    let records = option_estimates(&series, cfg, ups);
    Ok((series, records))
}
