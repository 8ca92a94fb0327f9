//! Option panel CSV input and output.
//!
//! Schema: `date,time,tenor_days,strike,bid,ask,forward`, one row per quote.
//! An optional trailing `type` column (`C`/`P`) enables a put-call parity
//! forward when the `forward` field is blank. Quotes of one maturity are
//! tracked through the day by `tenor_days` plus the elapsed fraction of the
//! session, which stays constant for a fixed expiry.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use volvol_core::{OptionPanel, OptionQuote, OptionSide, TenorQuotes};

use crate::config::{FilterConfig, ScenarioConfig};

pub const HEADER: [&str; 7] = ["date", "time", "tenor_days", "strike", "bid", "ask", "forward"];

/// Rule that removed a row, a maturity, a timestamp or a day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterRule {
    Malformed,
    ExcludedDate,
    ZeroBid,
    CrossedQuote,
    AskBidRatio,
    DuplicateStrike,
    NoForward,
    AtmGap,
    EdgeRatio,
    TenorWindow,
    NoTenorPair,
    IncompleteTimestamp,
}

impl FilterRule {
    pub fn name(self) -> &'static str {
        match self {
            FilterRule::Malformed => "malformed_row",
            FilterRule::ExcludedDate => "excluded_date",
            FilterRule::ZeroBid => "zero_bid",
            FilterRule::CrossedQuote => "crossed_quote",
            FilterRule::AskBidRatio => "ask_bid_ratio",
            FilterRule::DuplicateStrike => "duplicate_strike",
            FilterRule::NoForward => "no_forward",
            FilterRule::AtmGap => "atm_strike_gap",
            FilterRule::EdgeRatio => "edge_price_ratio",
            FilterRule::TenorWindow => "tenor_window",
            FilterRule::NoTenorPair => "no_tenor_pair",
            FilterRule::IncompleteTimestamp => "incomplete_timestamp",
        }
    }
}

impl fmt::Display for FilterRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub rule: FilterRule,
    /// Source file and line, for row-level entries.
    pub location: Option<String>,
    pub date: Option<String>,
    pub time: Option<String>,
    pub detail: String,
}

/// Every filter decision taken during ingestion, in the order applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    pub entries: Vec<AuditEntry>,
}

impl AuditLog {
    fn push(&mut self, rule: FilterRule, date: Option<&str>, time: Option<&str>, detail: String) {
        self.entries.push(AuditEntry {
            rule,
            location: None,
            date: date.map(String::from),
            time: time.map(String::from),
            detail,
        });
    }

    pub fn count(&self, rule: FilterRule) -> usize {
        self.entries.iter().filter(|e| e.rule == rule).count()
    }

    pub fn counts(&self) -> BTreeMap<FilterRule, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.rule).or_insert(0) += 1;
        }
        m
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rule", "location", "date", "time", "detail"])?;
        for e in &self.entries {
            w.write_record([
                e.rule.name(),
                e.location.as_deref().unwrap_or(""),
                e.date.as_deref().unwrap_or(""),
                e.time.as_deref().unwrap_or(""),
                &e.detail,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawQuote {
    pub date: String,
    pub minutes: u32,
    pub tenor_days: f64,
    pub strike: f64,
    pub bid: f64,
    pub ask: f64,
    pub forward: Option<f64>,
    pub side: Option<OptionSide>,
}

impl RawQuote {
    pub fn mid(&self) -> f64 {
        (self.bid + self.ask) / 2.0
    }
}

/// Quotes of both selected maturities for one trading day, chronological.
#[derive(Debug, Clone, PartialEq)]
pub struct DayPanels {
    pub date: String,
    /// Clock minutes of each panel.
    pub minutes: Vec<u32>,
    pub panels: Vec<OptionPanel>,
    /// Tenors (business days) of the two maturities at the session start.
    pub tenor_days: (f64, f64),
}

impl DayPanels {
    /// Panels ordered backwards in time, as the window pipeline expects.
    pub fn backward(&self) -> Vec<OptionPanel> {
        self.panels.iter().rev().cloned().collect()
    }
}

pub fn format_clock(minutes: u32) -> String {
    format!("{:02}:{:02}", minutes / 60, minutes % 60)
}

fn parse_clock(s: &str) -> Option<u32> {
    let mut it = s.trim().split(':');
    let h: u32 = it.next()?.parse().ok()?;
    let m: u32 = it.next()?.parse().ok()?;
    if let Some(sec) = it.next() {
        let _: u32 = sec.parse().ok()?;
    }
    if it.next().is_some() || h >= 24 || m >= 60 {
        return None;
    }
    Some(h * 60 + m)
}

fn parse_row(rec: &csv::StringRecord, has_type: bool) -> std::result::Result<RawQuote, String> {
    let want = if has_type { 8 } else { 7 };
    if rec.len() != want {
        return Err(format!("expected {want} fields, found {}", rec.len()));
    }
    let num = |i: usize| -> std::result::Result<f64, String> {
        let f = rec[i].trim();
        let v: f64 = f.parse().map_err(|_| format!("{} is not a number: `{f}`", HEADER[i]))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{} is not finite", HEADER[i]))
        }
    };
    let date = rec[0].trim();
    if date.is_empty() {
        return Err("empty date".into());
    }
    let minutes = parse_clock(&rec[1]).ok_or_else(|| format!("time must be HH:MM, got `{}`", &rec[1]))?;
    let tenor_days = num(2)?;
    let strike = num(3)?;
    let bid = num(4)?;
    let ask = num(5)?;
    if tenor_days <= 0.0 || strike <= 0.0 || bid < 0.0 || ask < 0.0 {
        return Err("tenor and strike must be positive, bid and ask nonnegative".into());
    }
    let forward = if rec[6].trim().is_empty() {
        None
    } else {
        let f = num(6)?;
        if f <= 0.0 {
            return Err("forward must be positive".into());
        }
        Some(f)
    };
    let side = if has_type {
        match rec[7].trim() {
            "C" | "c" | "call" => Some(OptionSide::Call),
            "P" | "p" | "put" => Some(OptionSide::Put),
            "" => None,
            other => return Err(format!("type must be C or P, got `{other}`")),
        }
    } else {
        None
    };
    Ok(RawQuote {
        date: date.to_string(),
        minutes,
        tenor_days,
        strike,
        bid,
        ask,
        forward,
        side,
    })
}

/// Parses one CSV source. Malformed rows are skipped and logged with their
/// line number; a bad header is an error.
pub fn read_quotes<R: Read>(source: R, label: &str, audit: &mut AuditLog) -> Result<Vec<RawQuote>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header = rdr.headers().with_context(|| format!("{label}: reading header"))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let has_type = match names.as_slice() {
        n if n == HEADER => false,
        [rest @ .., "type"] if rest == HEADER => true,
        _ => bail!("{label}: header must be `{}` (optionally followed by `type`)", HEADER.join(",")),
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let (line, parsed) = match rec {
            Ok(r) => (r.position().map_or(0, |p| p.line()), parse_row(&r, has_type)),
            Err(e) => (e.position().map_or(0, |p| p.line()), Err(e.to_string())),
        };
        match parsed {
            Ok(q) => out.push(q),
            Err(why) => audit.entries.push(AuditEntry {
                rule: FilterRule::Malformed,
                location: Some(format!("{label}:{line}")),
                date: None,
                time: None,
                detail: why,
            }),
        }
    }
    Ok(out)
}

/// CSV files of a directory in name order, or the path itself if it is a file.
pub fn csv_sources(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .csv files in {}", path.display());
    }
    Ok(files)
}

/// Put-call parity forward `K + C - P` at the strike where the call and put
/// prices are closest. Needs at least one strike quoted on both sides.
pub fn synthetic_forward(pairs: &[(f64, f64, f64)]) -> Option<f64> {
    pairs
        .iter()
        .filter(|(k, c, p)| k.is_finite() && c.is_finite() && p.is_finite())
        .min_by(|a, b| (a.1 - a.2).abs().total_cmp(&(b.1 - b.2).abs()))
        .map(|(k, c, p)| k + c - p)
}

/// Largest gap between consecutive strikes among the `n` nearest puts
/// (strike at or below the forward) and `n` nearest calls. `None` if either
/// side has fewer than `n` strikes.
pub fn near_money_gap(strikes: &[f64], forward: f64, n: usize) -> Option<f64> {
    let below: Vec<f64> = strikes.iter().copied().filter(|&k| k <= forward).collect();
    let above: Vec<f64> = strikes.iter().copied().filter(|&k| k > forward).collect();
    if below.len() < n || above.len() < n {
        return None;
    }
    let mut near: Vec<f64> = below[below.len() - n..].to_vec();
    near.extend_from_slice(&above[..n]);
    near.windows(2).map(|w| w[1] - w[0]).reduce(f64::max)
}

/// `max(O(k_1), O(k_N)) / max_j O(k_j)` for prices sorted by strike.
pub fn edge_ratio(prices: &[f64]) -> Option<f64> {
    let peak = prices.iter().copied().reduce(f64::max)?;
    if !(peak > 0.0) {
        return None;
    }
    Some(prices[0].max(prices[prices.len() - 1]) / peak)
}

/// Maturity identifier: tenor at the session start, rounded to a
/// microsecond-scale tolerance so a fixed expiry maps to one key.
fn maturity_key(tenor_days: f64, minutes: u32, cfg: &ScenarioConfig) -> i64 {
    let elapsed = (minutes as f64 - cfg.session_start_minutes as f64) / cfg.step_minutes as f64 / cfg.steps_per_day();
    ((tenor_days + elapsed) * 1e6).round() as i64
}

struct Maturity {
    /// Rows at each clock time.
    by_time: BTreeMap<u32, Vec<RawQuote>>,
    min_tenor: f64,
    max_tenor: f64,
}

/// Quotes of one maturity at one time after the quote and maturity filters.
fn clean_maturity(
    rows: &[RawQuote],
    filters: &FilterConfig,
    audit: &mut AuditLog,
) -> Option<(f64, TenorQuotes)> {
    let (date, time) = (rows[0].date.as_str(), format_clock(rows[0].minutes));
    let tag = format!("tenor_days={}", rows[0].tenor_days);
    let mut kept: Vec<&RawQuote> = Vec::with_capacity(rows.len());
    for q in rows {
        if !(q.bid > 0.0) {
            audit.push(FilterRule::ZeroBid, Some(date), Some(&time), format!("{tag} strike={}", q.strike));
        } else if q.ask < q.bid {
            audit.push(FilterRule::CrossedQuote, Some(date), Some(&time), format!("{tag} strike={}", q.strike));
        } else if q.ask / q.bid >= filters.max_ask_bid {
            audit.push(
                FilterRule::AskBidRatio,
                Some(date),
                Some(&time),
                format!("{tag} strike={} ratio={}", q.strike, q.ask / q.bid),
            );
        } else {
            kept.push(q);
        }
    }

    let forward = match kept.iter().find_map(|q| q.forward) {
        Some(f) => f,
        None => {
            let mut by_strike: BTreeMap<u64, (f64, Option<f64>, Option<f64>)> = BTreeMap::new();
            for q in &kept {
                let e = by_strike.entry(q.strike.to_bits()).or_insert((q.strike, None, None));
                match q.side {
                    Some(OptionSide::Call) => e.1 = Some(q.mid()),
                    Some(OptionSide::Put) => e.2 = Some(q.mid()),
                    None => {}
                }
            }
            let pairs: Vec<(f64, f64, f64)> = by_strike
                .values()
                .filter_map(|&(k, c, p)| Some((k, c?, p?)))
                .collect();
            match synthetic_forward(&pairs) {
                Some(f) if f > 0.0 => f,
                _ => {
                    audit.push(FilterRule::NoForward, Some(date), Some(&time), tag);
                    return None;
                }
            }
        }
    };

    // one out-of-the-money quote per strike
    let mut per_strike: BTreeMap<u64, &RawQuote> = BTreeMap::new();
    for q in kept {
        let otm = OptionSide::otm(q.strike, forward);
        match per_strike.get(&q.strike.to_bits()) {
            None => {
                per_strike.insert(q.strike.to_bits(), q);
            }
            Some(prev) => {
                // with a type column keep the out-of-the-money side; without
                // one the cheaper quote is the out-of-the-money one
                let better = match (q.side, prev.side) {
                    (Some(s), _) if s == otm => true,
                    (_, Some(s)) if s == otm => false,
                    _ => q.mid() < prev.mid(),
                };
                audit.push(
                    FilterRule::DuplicateStrike,
                    Some(date),
                    Some(&time),
                    format!("{tag} strike={}", q.strike),
                );
                if better {
                    per_strike.insert(q.strike.to_bits(), q);
                }
            }
        }
    }
    let mut quotes: Vec<&RawQuote> = per_strike.into_values().collect();
    quotes.sort_by(|a, b| a.strike.total_cmp(&b.strike));
    quotes.retain(|q| q.side.is_none_or(|s| s == OptionSide::otm(q.strike, forward)));
    let strikes: Vec<f64> = quotes.iter().map(|q| q.strike).collect();
    let prices: Vec<f64> = quotes.iter().map(|q| q.mid()).collect();

    match near_money_gap(&strikes, forward, 3) {
        Some(g) if g <= filters.max_atm_gap => {}
        g => {
            let detail = match g {
                Some(g) => format!("{tag} gap={g}"),
                None => format!("{tag} fewer than three strikes on a side"),
            };
            audit.push(FilterRule::AtmGap, Some(date), Some(&time), detail);
            return None;
        }
    }
    match edge_ratio(&prices) {
        Some(r) if r <= filters.max_edge_ratio => {}
        r => {
            audit.push(
                FilterRule::EdgeRatio,
                Some(date),
                Some(&time),
                format!("{tag} ratio={}", r.unwrap_or(f64::NAN)),
            );
            return None;
        }
    }

    let tenor = rows[0].tenor_days / 252.0;
    let log_forward = forward.ln();
    let quotes = quotes
        .iter()
        .map(|q| {
            let log_strike = q.strike.ln();
            OptionQuote {
                log_strike,
                price: q.mid(),
                tenor,
                side: OptionSide::otm_log(log_strike, log_forward),
            }
        })
        .collect();
    Some((forward, TenorQuotes { tenor, quotes }))
}

/// Groups rows into trading days, selects the tenor pair of each day and
/// builds one two-tenor panel per timestamp.
pub fn build_days(rows: Vec<RawQuote>, cfg: &ScenarioConfig, audit: &mut AuditLog) -> Vec<DayPanels> {
    let filters = &cfg.filters;
    let mut order: Vec<String> = Vec::new();
    let mut days: BTreeMap<String, BTreeMap<i64, Maturity>> = BTreeMap::new();
    for q in rows {
        if !days.contains_key(&q.date) {
            order.push(q.date.clone());
        }
        let key = maturity_key(q.tenor_days, q.minutes, cfg);
        let m = days.entry(q.date.clone()).or_default().entry(key).or_insert_with(|| Maturity {
            by_time: BTreeMap::new(),
            min_tenor: f64::INFINITY,
            max_tenor: f64::NEG_INFINITY,
        });
        m.min_tenor = m.min_tenor.min(q.tenor_days);
        m.max_tenor = m.max_tenor.max(q.tenor_days);
        m.by_time.entry(q.minutes).or_default().push(q);
    }

    let mut out = Vec::new();
    for date in order {
        let maturities = days.remove(&date).expect("date was recorded");
        if filters.exclude_dates.iter().any(|d| d == &date) {
            audit.push(FilterRule::ExcludedDate, Some(&date), None, String::new());
            continue;
        }
        let mut usable: Vec<(i64, &Maturity)> = Vec::new();
        for (&key, m) in &maturities {
            if m.min_tenor >= filters.min_tenor_days && m.max_tenor <= filters.max_tenor_days {
                usable.push((key, m));
            } else {
                audit.push(
                    FilterRule::TenorWindow,
                    Some(&date),
                    None,
                    format!("tenor_days in [{}, {}]", m.min_tenor, m.max_tenor),
                );
            }
        }
        let pair = usable.first().and_then(|&(k0, m0)| {
            usable
                .iter()
                .find(|&&(k, _)| (k - k0) as f64 * 1e-6 >= filters.min_tenor_gap_days - 1e-9)
                .map(|&(k1, m1)| ((k0, m0), (k1, m1)))
        });
        let Some(((k_short, short), (k_long, long))) = pair else {
            audit.push(
                FilterRule::NoTenorPair,
                Some(&date),
                None,
                format!("{} usable maturities", usable.len()),
            );
            continue;
        };

        let mut times: Vec<u32> = short.by_time.keys().chain(long.by_time.keys()).copied().collect();
        times.sort_unstable();
        times.dedup();
        let mut day = DayPanels {
            date: date.clone(),
            minutes: Vec::with_capacity(times.len()),
            panels: Vec::with_capacity(times.len()),
            tenor_days: (k_short as f64 * 1e-6, k_long as f64 * 1e-6),
        };
        for &t in &times {
            let s = short.by_time.get(&t).and_then(|r| clean_maturity(r, filters, audit));
            let l = long.by_time.get(&t).and_then(|r| clean_maturity(r, filters, audit));
            let forward = match (&s, &l) {
                (Some((f, _)), _) | (None, Some((f, _))) => *f,
                (None, None) => {
                    audit.push(
                        FilterRule::IncompleteTimestamp,
                        Some(&date),
                        Some(&format_clock(t)),
                        "both maturities removed".into(),
                    );
                    continue;
                }
            };
            if s.is_none() || l.is_none() {
                audit.push(
                    FilterRule::IncompleteTimestamp,
                    Some(&date),
                    Some(&format_clock(t)),
                    format!("{} maturity removed", if s.is_none() { "short" } else { "long" }),
                );
            }
            let empty = |rows: Option<&Vec<RawQuote>>| TenorQuotes {
                tenor: rows.and_then(|r| r.first()).map_or(f64::NAN, |q| q.tenor_days / 252.0),
                quotes: Vec::new(),
            };
            let s = s.map_or_else(|| empty(short.by_time.get(&t)), |x| x.1);
            let l = l.map_or_else(|| empty(long.by_time.get(&t)), |x| x.1);
            let elapsed = (t as f64 - cfg.session_start_minutes as f64) / cfg.step_minutes as f64;
            day.minutes.push(t);
            day.panels.push(OptionPanel {
                obs_time: elapsed * cfg.delta_n,
                forward,
                tenors: vec![s, l],
            });
        }
        if !day.panels.is_empty() {
            out.push(day);
        }
    }
    out
}

/// Reads every CSV under `path` and returns the filtered trading days.
pub fn ingest_panels(path: &Path, cfg: &ScenarioConfig) -> Result<(Vec<DayPanels>, AuditLog)> {
    let mut audit = AuditLog::default();
    let mut rows = Vec::new();
    for file in csv_sources(path)? {
        let f = std::fs::File::open(&file).with_context(|| format!("opening {}", file.display()))?;
        rows.extend(read_quotes(std::io::BufReader::new(f), &file.display().to_string(), &mut audit)?);
    }
    let days = build_days(rows, cfg, &mut audit);
    Ok((days, audit))
}

/// Same as [`ingest_panels`] for an in-memory source.
pub fn ingest_reader<R: Read>(source: R, cfg: &ScenarioConfig) -> Result<(Vec<DayPanels>, AuditLog)> {
    let mut audit = AuditLog::default();
    let rows = read_quotes(source, "<input>", &mut audit)?;
    let days = build_days(rows, cfg, &mut audit);
    Ok((days, audit))
}

/// Finds a float `y` near `guess` with `back(y) == target`, so values that
/// pass through a text file reproduce the in-memory ones exactly.
fn invert_exactly(guess: f64, target: f64, back: impl Fn(f64) -> f64) -> Option<f64> {
    // prefer a short decimal form when one works
    for digits in [6, 9, 12] {
        let scale = 10f64.powi(digits);
        let r = (guess * scale).round() / scale;
        if back(r) == target {
            return Some(r);
        }
    }
    let (mut up, mut down) = (guess, guess);
    for _ in 0..256 {
        if back(up) == target {
            return Some(up);
        }
        if back(down) == target {
            return Some(down);
        }
        up = up.next_up();
        down = down.next_down();
    }
    None
}

/// Writes simulated or cleaned panels in the input schema with `bid = ask`
/// equal to the quoted price.
pub struct PanelWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> PanelWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(HEADER)?;
        Ok(PanelWriter { inner })
    }

    /// Panels in chronological order, one per `step_minutes` from the
    /// session start.
    pub fn write_day(&mut self, date: &str, panels: &[OptionPanel], cfg: &ScenarioConfig) -> Result<()> {
        for (j, panel) in panels.iter().enumerate() {
            let time = format_clock(cfg.session_start_minutes + j as u32 * cfg.step_minutes);
            let forward = panel.forward.to_string();
            for tq in &panel.tenors {
                let days = invert_exactly(tq.tenor * 252.0, tq.tenor, |d| d / 252.0)
                    .with_context(|| format!("tenor {} has no exact day count", tq.tenor))?;
                let days = days.to_string();
                for q in &tq.quotes {
                    let strike = invert_exactly(q.log_strike.exp(), q.log_strike, f64::ln)
                        .with_context(|| format!("log-strike {} has no exact strike", q.log_strike))?;
                    let price = q.price.to_string();
                    self.inner
                        .write_record([date, &time, &days, &strike.to_string(), &price, &price, &forward])?;
                }
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| anyhow::anyhow!("flushing panel CSV: {}", e.error()))
    }
}
