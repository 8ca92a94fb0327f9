//! Daily estimates from ingested market panels.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::ingest::DayPanels;
use crate::pipeline::{option_estimates, spot_series, upsilon, EstimateRecord, EstimatorKind, SeriesKind, SpotSeries};

pub const OUTPUT_HEADER: [&str; 8] = ["date", "estimator", "estimate", "avar", "ci_low", "ci_high", "k_n", "flags"];

const SERIES: [SeriesKind; 3] = [SeriesKind::Short, SeriesKind::Long, SeriesKind::Two];

#[derive(Debug, Clone)]
pub struct DayResult {
    pub date: String,
    pub k_n: usize,
    pub records: Vec<EstimateRecord>,
    pub upsilons: [f64; 3],
}

impl DayResult {
    pub fn estimate(&self, kind: EstimatorKind) -> Option<f64> {
        self.records.iter().find(|r| r.kind == kind).and_then(|r| r.estimate)
    }
}

#[derive(Debug, Clone, Default)]
pub struct EmpiricalRun {
    pub days: Vec<DayResult>,
    /// Days whose window could not be processed, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Trailing mean over the last `window` days of the available values; empty
/// until `window` days have been seen.
pub fn moving_average(values: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    (0..values.len())
        .map(|i| {
            if window == 0 || i + 1 < window {
                return None;
            }
            let got: Vec<f64> = values[i + 1 - window..=i].iter().flatten().copied().collect();
            (!got.is_empty()).then(|| got.iter().sum::<f64>() / got.len() as f64)
        })
        .collect()
}

/// Runs the window pipeline on every day. Spot series are built in
/// parallel; truncation levels then use the preceding days in date order.
pub fn run_empirical(days: &[DayPanels], cfg: &ScenarioConfig) -> Result<EmpiricalRun> {
    let series: Vec<Result<SpotSeries>> = days
        .par_iter()
        .map(|d| spot_series(&d.backward(), cfg.mesh, cfg.transform))
        .collect();

    let mut run = EmpiricalRun::default();
    let mut kept: Vec<(&DayPanels, SpotSeries, [f64; 3])> = Vec::new();
    // absolute increments of earlier days, most recent first, per series
    let mut history: [Vec<Vec<f64>>; 3] = Default::default();
    for (day, s) in days.iter().zip(series) {
        let s = match s {
            Ok(s) => s,
            Err(e) => {
                run.skipped.push((day.date.clone(), format!("{e:#}")));
                continue;
            }
        };
        let mut ups = [f64::INFINITY; 3];
        let mut failed = None;
        for (j, kind) in SERIES.into_iter().enumerate() {
            let abs = s.abs_increments(kind);
            match upsilon(cfg.truncation, &abs, &history[j], cfg.truncation_days, cfg.delta_n) {
                Ok(u) => ups[j] = u,
                Err(e) => failed = Some(e),
            }
            history[j].insert(0, abs);
            history[j].truncate(cfg.truncation_days);
        }
        if let Some(e) = failed {
            run.skipped.push((day.date.clone(), format!("truncation level: {e:#}")));
            continue;
        }
        kept.push((day, s, ups));
    }

    run.days = kept
        .par_iter()
        .map(|(day, s, ups)| DayResult {
            date: day.date.clone(),
            k_n: s.k_n(),
            records: option_estimates(s, cfg, *ups),
            upsilons: *ups,
        })
        .collect();
    Ok(run)
}

impl EmpiricalRun {
    pub fn series(&self, kind: EstimatorKind) -> Vec<Option<f64>> {
        self.days.iter().map(|d| d.estimate(kind)).collect()
    }

    /// Daily records followed by `<estimator>/ma<window>` rows carrying the
    /// moving average in the estimate column.
    pub fn write_csv<W: Write>(&self, out: W, ma_window: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(OUTPUT_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for d in &self.days {
            for r in &d.records {
                w.write_record([
                    d.date.clone(),
                    r.kind.name().to_string(),
                    opt(r.estimate),
                    opt(r.avar),
                    opt(r.ci.map(|c| c.0)),
                    opt(r.ci.map(|c| c.1)),
                    r.k_n.to_string(),
                    r.flag_string(),
                ])?;
            }
        }
        for kind in kinds(self) {
            let ma = moving_average(&self.series(kind), ma_window);
            for (d, m) in self.days.iter().zip(ma) {
                w.write_record([
                    d.date.clone(),
                    format!("{}/ma{ma_window}", kind.name()),
                    opt(m),
                    String::new(),
                    String::new(),
                    String::new(),
                    d.k_n.to_string(),
                    String::new(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One `x,date,y,y_ma` file per estimator for external plotting.
    pub fn write_plot_data(&self, dir: &Path, ma_window: usize) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for kind in kinds(self) {
            let path = dir.join(format!("{}.csv", kind.slug()));
            let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = csv::Writer::from_writer(file);
            w.write_record(["x", "date", "y", "y_ma"])?;
            let ys = self.series(kind);
            let ma = moving_average(&ys, ma_window);
            for (i, ((d, y), m)) in self.days.iter().zip(&ys).zip(ma).enumerate() {
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                w.write_record([i.to_string(), d.date.clone(), opt(*y), opt(m)])?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

fn kinds(run: &EmpiricalRun) -> Vec<EstimatorKind> {
    EstimatorKind::ALL
        .into_iter()
        .filter(|k| run.days.iter().any(|d| d.records.iter().any(|r| r.kind == *k)))
        .collect()
}
