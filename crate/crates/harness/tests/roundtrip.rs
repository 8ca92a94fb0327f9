//! Simulated panels written to CSV and read back give the same estimates
//! as the in-memory pipeline, bit for bit.

use volvol_harness::ingest::{ingest_reader, FilterRule, PanelWriter};
use volvol_harness::pipeline::estimate_window;
use volvol_harness::{run_empirical, Scenario, ScenarioConfig};

fn scenario() -> Scenario {
    let mut cfg = ScenarioConfig::default();
    cfg.apply_overrides(&["case=F", "v0=0.0156", "replications=2"]).unwrap();
    Scenario::new(&cfg).unwrap()
}

#[test]
fn csv_roundtrip_reproduces_replication_estimates() {
    let sc = scenario();
    let cfg = &sc.config;
    let mut writer = PanelWriter::new(Vec::new()).unwrap();
    let mut windows = Vec::new();
    for rep in 0..2 {
        let w = sc.simulate(rep).unwrap();
        let chrono: Vec<_> = w.panels.iter().rev().cloned().collect();
        writer.write_day(&format!("sim-{rep:05}"), &chrono, cfg).unwrap();
        windows.push(w);
    }
    let bytes = writer.finish().unwrap();

    let (days, audit) = ingest_reader(bytes.as_slice(), cfg).unwrap();
    assert_eq!(audit.count(FilterRule::Malformed), 0);
    assert!(audit.is_empty(), "simulated quotes tripped a filter: {:?}", audit.counts());
    assert_eq!(days.len(), 2);

    let run = run_empirical(&days, cfg).unwrap();
    assert!(run.skipped.is_empty());
    for (rep, (day, w)) in run.days.iter().zip(&windows).enumerate() {
        // panels themselves survive the trip unchanged
        let ingested = days[rep].backward();
        assert_eq!(ingested.len(), w.panels.len());
        for (a, b) in ingested.iter().zip(&w.panels) {
            assert_eq!(a.forward.to_bits(), b.forward.to_bits());
            assert_eq!(a.tenors, b.tenors);
        }

        let full = sc.run_replication(rep).unwrap();
        let (_, direct) = estimate_window(&w.panels, cfg).unwrap();
        assert_eq!(day.records.len(), 6);
        for r in &day.records {
            let m = full.record(r.kind).unwrap();
            let d = direct.iter().find(|d| d.kind == r.kind).unwrap();
            assert_eq!(r, d);
            assert_eq!(r.estimate.map(f64::to_bits), m.estimate.map(f64::to_bits), "{}", r.kind);
            assert_eq!(r.avar.map(f64::to_bits), m.avar.map(f64::to_bits), "{}", r.kind);
            assert_eq!(r.ci, m.ci);
            assert_eq!(r.flags, m.flags);
        }
    }
}

#[test]
fn written_csv_follows_the_schema() {
    let sc = scenario();
    let w = sc.simulate(0).unwrap();
    let chrono: Vec<_> = w.panels.iter().rev().cloned().collect();
    let mut writer = PanelWriter::new(Vec::new()).unwrap();
    writer.write_day("sim-00000", &chrono, &sc.config).unwrap();
    let text = String::from_utf8(writer.finish().unwrap()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("date,time,tenor_days,strike,bid,ask,forward"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "sim-00000");
    assert_eq!(first[1], "09:30");
    assert_eq!(first[2], "3");
    assert_eq!(first[4], first[5]);
    let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
    assert_eq!(last[1], "16:10");
    assert_eq!(last[2], "5");
}
