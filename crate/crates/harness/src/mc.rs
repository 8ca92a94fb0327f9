//! Monte Carlo replications of the option-market simulator.

use std::io::Write;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use volvol_core::pricer::{FourierConfig, NoiseModel, PricingTable, StrikeGridRule};
use volvol_core::sim::{simulate_path_with, stream_rng};
use volvol_core::vvlv::{lv_ret, return_spot_vol, rv_bv, select_u_ret, vv_ret};
use volvol_core::{ModelParams, OptionPanel, PricePath, TenorQuotes};

use crate::config::{ScenarioConfig, Truncation};
use crate::pipeline::{estimate_window, upsilon, EstimateRecord, EstimatorKind, SpotSeries};
use crate::truth::{ground_truth, window_truth, Truth};

/// Precomputed state shared by all replications of one scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub v0: f64,
    pub truth: Truth,
    table: PricingTable,
    /// Table indices of the short and long tenor at backward index `i`.
    tenor_index: Vec<(usize, usize)>,
}

/// Simulated window: price path on the fine grid and the observed panels
/// (backward order, `panels[0]` at the window end).
#[derive(Debug, Clone)]
pub struct SimulatedWindow {
    pub path: PricePath,
    pub panels: Vec<OptionPanel>,
    pub floored: usize,
}

#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub rep: usize,
    pub records: Vec<EstimateRecord>,
    /// Window average of the spot values along the simulated path.
    pub path_truth: Truth,
    pub u_short: f64,
    pub u_long: f64,
    pub u_ret: f64,
    pub floored: usize,
}

impl ReplicationResult {
    pub fn record(&self, kind: EstimatorKind) -> Option<&EstimateRecord> {
        self.records.iter().find(|r| r.kind == kind)
    }
}

impl Scenario {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let v0 = config.v0()?;
        let k_n = config.k_n;
        let mut tenors = Vec::with_capacity(2 * (k_n + 1));
        for i in 0..=k_n {
            tenors.push(config.tenor_days_at(config.tenor_days, i) / 252.0);
            tenors.push(config.tenor_days_at(config.tenor_long_days, i) / 252.0);
        }
        let table = PricingTable::new(&config.params, &tenors, FourierConfig::default())
            .context("building the transform table")?;
        let tenor_index = (0..=k_n).map(|i| (2 * i, 2 * i + 1)).collect();
        Ok(Scenario {
            config: config.clone(),
            v0,
            truth: ground_truth(&config.params, v0, config.transform),
            table,
            tenor_index,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.config.params
    }

    /// Path plus noisy panels for replication `rep`. The path and the
    /// observation errors use separate random streams.
    pub fn simulate(&self, rep: usize) -> Result<SimulatedWindow> {
        let cfg = &self.config;
        let k_n = cfg.k_n;
        let mut path_rng = stream_rng(cfg.seed, 2 * rep as u64);
        let mut noise_rng = stream_rng(cfg.seed, 2 * rep as u64 + 1);
        let horizon = k_n as f64 * cfg.delta_n;
        let path = simulate_path_with(&cfg.params, self.v0, horizon, k_n * cfg.l_n, cfg.substeps, &mut path_rng)?;

        let rule = StrikeGridRule {
            step: cfg.strike_step,
            min_price: cfg.min_price,
            ..StrikeGridRule::default()
        };
        let noise = NoiseModel {
            scale: cfg.noise,
            ..NoiseModel::default()
        };
        let mut floored = 0;
        let mut panels = Vec::with_capacity(k_n + 1);
        // forward in time so the noise stream is consumed chronologically
        for j in 0..=k_n {
            let i = k_n - j;
            let f = j * cfg.l_n;
            let spot = path.log_price[f].exp();
            let v = path.variance[f];
            let (is, il) = self.tenor_index[i];
            let mut quotes = |idx: usize| -> Result<TenorQuotes> {
                let slice = self.table.slice(idx, v)?;
                let (q, fl) = noise.apply(&rule.quotes(&slice, spot), &mut noise_rng);
                floored += fl;
                Ok(q)
            };
            let short = quotes(is)?;
            let long = quotes(il)?;
            panels.push(OptionPanel {
                obs_time: path.times[f],
                forward: spot,
                tenors: vec![short, long],
            });
        }
        panels.reverse();
        Ok(SimulatedWindow { path, panels, floored })
    }

    pub fn run_replication(&self, rep: usize) -> Result<ReplicationResult> {
        let cfg = &self.config;
        let window = self.simulate(rep)?;
        let (series, mut records) = estimate_window(&window.panels, cfg)?;
        let (ret_records, u_ret) = return_estimates(&window.path, cfg)?;
        records.extend(ret_records);
        let vars: Vec<f64> = (0..=cfg.k_n).map(|j| window.path.variance[j * cfg.l_n]).collect();
        Ok(ReplicationResult {
            rep,
            records,
            path_truth: window_truth(&cfg.params, &vars, cfg.transform),
            u_short: series.u_short.u,
            u_long: series.u_long.u,
            u_ret,
            floored: window.floored,
        })
    }

    pub fn spot_series(&self, rep: usize) -> Result<SpotSeries> {
        let window = self.simulate(rep)?;
        Ok(estimate_window(&window.panels, &self.config)?.0)
    }
}

/// Deterministic replication `rep` of the scenario described by `config`.
pub fn run_replication(config: &ScenarioConfig, rep: usize) -> Result<ReplicationResult> {
    Scenario::new(config)?.run_replication(rep)
}

/// Return-based VV and LV from the fine grid of the simulated path.
pub fn return_estimates(path: &PricePath, cfg: &ScenarioConfig) -> Result<(Vec<EstimateRecord>, f64)> {
    let (k_n, l_n) = (cfg.k_n, cfg.l_n);
    let returns = path.log_returns();
    let window = k_n as f64 * cfg.delta_n;
    let (rv, bv) = rv_bv(&returns, window);
    let u = select_u_ret(rv, bv)?;
    let fine_dt = cfg.delta_n / l_n as f64;
    // spot values at t_0..t_{k_n - 1}; t_i sits at fine index (k_n - i) l_n
    let mut levels = Vec::with_capacity(k_n);
    let mut x = Vec::with_capacity(k_n);
    for i in 0..k_n {
        let end = (k_n - i) * l_n;
        let block = &returns[end - l_n..end];
        levels.push(return_spot_vol(block, u, fine_dt, cfg.transform).value());
        x.push(path.log_price[end]);
    }
    let abs: Vec<f64> = levels
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => (a - b).abs(),
            _ => 0.0,
        })
        .collect();
    let ups = match cfg.truncation {
        Truncation::Empirical if abs.len() < 2 => f64::INFINITY,
        t => upsilon(t, &abs, &[], 1, cfg.delta_n)?,
    };
    let missing = levels.iter().filter(|v| v.is_none()).count() as f64 / k_n as f64;
    let rec = |kind, r: volvol_core::Result<f64>| match r {
        _ if missing > cfg.max_missing => {
            EstimateRecord::rejected(kind, k_n, ups, format!("missing_levels={missing:.3}"))
        }
        Ok(v) => EstimateRecord {
            kind,
            estimate: Some(v),
            avar: None,
            ci: None,
            k_n,
            upsilon: ups,
            flags: Vec::new(),
        },
        Err(e) => EstimateRecord::rejected(kind, k_n, ups, e.to_string()),
    };
    Ok((
        vec![
            rec(EstimatorKind::VvRet, vv_ret(&levels, k_n, cfg.delta_n, ups)),
            rec(EstimatorKind::LvRet, lv_ret(&levels, &x, k_n, cfg.delta_n, ups)),
        ],
        u,
    ))
}

/// Relative-error summary of one estimator across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub kind: EstimatorKind,
    pub truth: f64,
    pub n: usize,
    pub excluded: usize,
    pub bias: f64,
    pub std: f64,
    pub rmse: f64,
    /// Share of intervals covering the starting-value truth.
    pub coverage: Option<f64>,
    /// Share of intervals covering the window-average truth.
    pub coverage_path: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub v0: f64,
    pub truth: Truth,
    pub replications: usize,
    pub failed: usize,
    pub estimators: Vec<EstimatorSummary>,
}

impl McSummary {
    pub fn get(&self, kind: EstimatorKind) -> &EstimatorSummary {
        self.estimators
            .iter()
            .find(|e| e.kind == kind)
            .expect("every estimator is summarised")
    }
}

/// Bias, population standard deviation and RMSE of relative errors.
pub fn error_stats(errors: &[f64]) -> (f64, f64, f64) {
    let n = errors.len() as f64;
    if errors.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let bias = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / n;
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
    (bias, var.sqrt(), mse.sqrt())
}

pub fn summarize(v0: f64, truth: Truth, results: &[Result<ReplicationResult, String>]) -> McSummary {
    let ok: Vec<&ReplicationResult> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let estimators = EstimatorKind::ALL
        .iter()
        .map(|&kind| {
            let t = if kind.is_vv() { truth.vv } else { truth.lv };
            let mut errors = Vec::new();
            let mut covered = 0usize;
            let mut covered_path = 0usize;
            let mut with_ci = 0usize;
            for r in &ok {
                let Some(rec) = r.record(kind) else { continue };
                let Some(est) = rec.estimate else { continue };
                errors.push(est / t - 1.0);
                if let Some((lo, hi)) = rec.ci {
                    with_ci += 1;
                    covered += usize::from(lo <= t && t <= hi);
                    let pt = if kind.is_vv() { r.path_truth.vv } else { r.path_truth.lv };
                    covered_path += usize::from(lo <= pt && pt <= hi);
                }
            }
            let (bias, std, rmse) = error_stats(&errors);
            let share = |c: usize| (with_ci > 0).then(|| c as f64 / with_ci as f64);
            EstimatorSummary {
                kind,
                truth: t,
                n: errors.len(),
                excluded: results.len() - errors.len(),
                bias,
                std,
                rmse,
                coverage: share(covered),
                coverage_path: share(covered_path),
            }
        })
        .collect();
    McSummary {
        v0,
        truth,
        replications: results.len(),
        failed: results.len() - ok.len(),
        estimators,
    }
}

/// Runs `replications` replications in parallel; results are ordered by
/// replication index so the summary does not depend on scheduling.
pub fn run_mc(config: &ScenarioConfig) -> Result<(McSummary, Vec<Result<ReplicationResult, String>>)> {
    let scenario = Scenario::new(config)?;
    let results: Vec<Result<ReplicationResult, String>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| scenario.run_replication(rep).map_err(|e| format!("{e:#}")))
        .collect();
    Ok((summarize(scenario.v0, scenario.truth, &results), results))
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    estimator: &'a str,
    truth: f64,
    n: usize,
    excluded: usize,
    bias: f64,
    std: f64,
    rmse: f64,
    coverage: Option<f64>,
    coverage_path: Option<f64>,
}

pub fn write_summary_csv<W: Write>(out: W, summary: &McSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in &summary.estimators {
        w.serialize(SummaryRow {
            estimator: e.kind.name(),
            truth: e.truth,
            n: e.n,
            excluded: e.excluded,
            bias: e.bias,
            std: e.std,
            rmse: e.rmse,
            coverage: e.coverage,
            coverage_path: e.coverage_path,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_replications_csv<W: Write>(out: W, results: &[Result<ReplicationResult, String>], truth: Truth) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "rep", "estimator", "estimate", "avar", "ci_low", "ci_high", "truth", "rel_error", "u", "flags",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (rep, r) in results.iter().enumerate() {
        match r {
            Ok(r) => {
                for rec in &r.records {
                    let t = if rec.kind.is_vv() { truth.vv } else { truth.lv };
                    let u = match rec.kind {
                        EstimatorKind::VvShort | EstimatorKind::LvShort => r.u_short,
                        EstimatorKind::VvRet | EstimatorKind::LvRet => r.u_ret,
                        _ => r.u_long,
                    };
                    w.write_record([
                        rep.to_string(),
                        rec.kind.name().to_string(),
                        opt(rec.estimate),
                        opt(rec.avar),
                        opt(rec.ci.map(|c| c.0)),
                        opt(rec.ci.map(|c| c.1)),
                        t.to_string(),
                        opt(rec.estimate.map(|e| e / t - 1.0)),
                        u.to_string(),
                        rec.flag_string(),
                    ])?;
                }
            }
            Err(e) => {
                w.write_record([rep.to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), truth.vv.to_string(), String::new(), String::new(), format!("failed: {e}")])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
