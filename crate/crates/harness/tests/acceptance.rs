//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Set `VOLVOL_ACCEPTANCE_SMOKE=1` for the 200-replication
//! variant of the Monte Carlo criteria.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use volvol_core::bs::bs_price;
use volvol_core::charfn::{estimate_cf, select_u, spot_variance};
use volvol_core::pricer::{conditional_cf, vix_scaling_ratio, FourierConfig, PricingTable};
use volvol_core::sim::stream_rng;
use volvol_core::vvlv::{vv_estimate, IncrementSeries};
use volvol_core::{Case, ModelParams, OptionSide};
use volvol_harness::{run_mc, EstimatorKind, McSummary, ScenarioConfig};

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn mc(case: &str, v0: f64, reps: usize) -> McSummary {
    let mut cfg = ScenarioConfig::default();
    cfg.apply_overrides(&[format!("case={case}"), format!("v0={v0}"), format!("replications={reps}")])
        .unwrap();
    let t = Instant::now();
    let (s, _) = run_mc(&cfg).unwrap();
    eprintln!("  case {case} v0={v0}: {reps} replications in {:.1?}", t.elapsed());
    s
}

fn bs_exactness() -> Outcome {
    let t0 = Instant::now();
    let (sigma2, t, spot) = (0.02f64, 3.0 / 252.0, 2500.0);
    let sd = (sigma2 * t).sqrt() * spot;
    let (lo, hi) = (spot - 8.0 * sd, spot + 8.0 * sd);
    let strikes: Vec<f64> = (0..)
        .map(|i| (lo / 0.25).ceil() * 0.25 + 0.25 * i as f64)
        .take_while(|&k| k <= hi)
        .collect();
    let ks: Vec<f64> = strikes.iter().map(|k| k.ln()).collect();
    let ps: Vec<f64> = strikes
        .iter()
        .map(|&k| bs_price(spot, k, t, sigma2.sqrt(), OptionSide::otm(k, spot)))
        .collect();
    let u = select_u(&ks, &ps, spot.ln(), t, sigma2.sqrt()).unwrap().u;
    let cf = estimate_cf(&ks, &ps, spot.ln(), t, u).unwrap();
    let est = spot_variance(&cf, u).sigma2;
    let rel = (est - sigma2).abs() / sigma2;
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        name: "black-scholes panel recovers spot variance",
        pass: rel < 5e-3 && secs < 1.0,
        detail: format!("u={u:.3} sigma2={est:.6} rel_err={rel:.2e} (< 5e-3) runtime={secs:.3}s (< 1s)"),
    }
}

/// Closed-form Heston characteristic function of the log-return.
fn heston_cf(p: &ModelParams, v: f64, t: f64, u: f64) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    let (k, th, s, r) = (p.kappa_v, p.theta_v, p.sigma_v, p.rho);
    let b = k - r * s * i * u;
    let d = (b * b + s * s * (i * u + u * u)).sqrt();
    let g = (b - d) / (b + d);
    let e = (-d * t).exp();
    let c = k * th / (s * s) * ((b - d) * t - 2.0 * ((1.0 - g * e) / (1.0 - g)).ln());
    let dd = (b - d) / (s * s) * (1.0 - e) / (1.0 - g * e);
    (c + dd * v).exp()
}

/// Conditional Monte Carlo under Q: exact CIR transitions on a grid,
/// trapezoidal integrated variance, the price given the variance path in
/// closed form and jumps drawn given the integrated variance.
fn q_measure_oracle(
    p: &ModelParams,
    v0: f64,
    t: f64,
    spot: f64,
    strikes: &[f64],
    paths: usize,
    steps: usize,
) -> Vec<(f64, f64)> {
    let dt = t / steps as f64;
    let e = (-p.kappa_v * dt).exp();
    let c = p.sigma_v * p.sigma_v * (1.0 - e) / (4.0 * p.kappa_v);
    let dof = 4.0 * p.kappa_v * p.theta_v / (p.sigma_v * p.sigma_v);
    let (rate_neg, rate_pos) = (p.c_minus / p.lambda_minus, p.c_plus / p.lambda_plus);
    let comp = -p.c_minus / (p.lambda_minus * (p.lambda_minus + 1.0)) + p.c_plus / (p.lambda_plus * (p.lambda_plus - 1.0));
    let rho_bar2 = 1.0 - p.rho * p.rho;
    let chunks = 200;
    let per = paths / chunks;
    let n = strikes.len();
    let sums: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|ch| {
            let mut rng = stream_rng(0x5eed_0a1e, ch as u64);
            let mut s1 = vec![0.0; n];
            let mut s2 = vec![0.0; n];
            for _ in 0..per {
                let mut v = v0;
                let mut iv = 0.0;
                for _ in 0..steps {
                    let half_nc = 0.5 * v * e / c;
                    let k = if half_nc > 0.0 { rng.sample(Poisson::new(half_nc).unwrap()) } else { 0.0 };
                    let g: f64 = rng.sample(Gamma::new(0.5 * dof + k, 2.0).unwrap());
                    let vn = c * g;
                    iv += 0.5 * (v + vn) * dt;
                    v = vn;
                }
                let lam = iv * (rate_neg + rate_pos);
                let nj = if lam > 0.0 { rng.sample(Poisson::new(lam).unwrap()) as usize } else { 0 };
                let mut jumps = 0.0;
                for _ in 0..nj {
                    let side: f64 = rng.random();
                    let x: f64 = rng.sample(rand_distr::Exp1);
                    jumps += if side * (rate_neg + rate_pos) < rate_neg {
                        -x / p.lambda_minus
                    } else {
                        x / p.lambda_plus
                    };
                }
                let m = spot.ln() + p.rho / p.sigma_v * (v - v0 - p.kappa_v * p.theta_v * t + p.kappa_v * iv)
                    - 0.5 * iv
                    - comp * iv
                    + jumps;
                let s2v = rho_bar2 * iv;
                let fwd = (m + 0.5 * s2v).exp();
                for (j, &k) in strikes.iter().enumerate() {
                    let price = bs_price(fwd, k, 1.0, s2v.sqrt(), OptionSide::otm(k, spot));
                    s1[j] += price;
                    s2[j] += price * price;
                }
            }
            (s1, s2)
        })
        .collect();
    let total = (per * chunks) as f64;
    (0..n)
        .map(|j| {
            let s1: f64 = sums.iter().map(|s| s.0[j]).sum();
            let s2: f64 = sums.iter().map(|s| s.1[j]).sum();
            let mean = s1 / total;
            let var = (s2 / total - mean * mean).max(0.0);
            (mean, (var / total).sqrt())
        })
        .collect()
}

fn pricer_correctness() -> Outcome {
    // closed-form Heston
    let mut cf_err: f64 = 0.0;
    for case in [Case::S, Case::M, Case::F] {
        let p = ModelParams::case(case).without_jumps();
        for &t in &[2.0 / 252.0, 3.0 / 252.0, 6.0 / 252.0, 0.25] {
            for &v in &[0.005, 0.0167, 0.04] {
                for &un in &[0.5, 3.0, 10.97, 25.0] {
                    let u = un / f64::sqrt(t);
                    let d = (conditional_cf(&p, v, t, u).unwrap() - heston_cf(&p, v, t, u)).norm();
                    cf_err = cf_err.max(d);
                }
            }
        }
    }

    // put-call parity
    let mut parity: f64 = 0.0;
    let spot = 2500.0;
    for case in [Case::S, Case::M, Case::F] {
        let p = ModelParams::case(case);
        let tenors = [2.0 / 252.0, 3.0 / 252.0, 6.0 / 252.0];
        let table = PricingTable::new(&p, &tenors, FourierConfig::default()).unwrap();
        for idx in 0..tenors.len() {
            for &v in &[0.003, 0.0167, 0.0275] {
                let slice = table.slice(idx, v).unwrap();
                for k in (0..=40).map(|i| 2000.0 + 25.0 * i as f64) {
                    let c = slice.price(OptionSide::Call, spot, f64::ln(k));
                    let put = slice.price(OptionSide::Put, spot, f64::ln(k));
                    parity = parity.max((c - put - (spot - k)).abs() / spot);
                }
            }
        }
    }

    // Q-measure simulation
    let p = ModelParams::case(Case::M);
    let (v0, t) = (0.0167, 6.0 / 252.0);
    let strikes: Vec<f64> = (0..10).map(|i| 2300.0 + 35.0 * i as f64).collect();
    let table = PricingTable::new(&p, &[t], FourierConfig::default()).unwrap();
    let slice = table.slice(0, v0).unwrap();
    let started = Instant::now();
    let oracle = q_measure_oracle(&p, v0, t, spot, &strikes, 10_000_000, 16);
    eprintln!("  Q-measure oracle: 1e7 paths in {:.1?}", started.elapsed());
    let mut worst_z: f64 = 0.0;
    for (k, (mean, se)) in strikes.iter().zip(&oracle) {
        let model = slice.otm_price(spot, k.ln());
        worst_z = worst_z.max((model - mean).abs() / se);
    }
    Outcome {
        id: 8,
        name: "pricer correctness",
        pass: cf_err < 1e-8 && parity < 1e-8 && worst_z < 3.0,
        detail: format!(
            "heston cf max err={cf_err:.1e} (< 1e-8), parity max rel err={parity:.1e} (< 1e-8), \
             worst |model - mc|/se over 10 strikes={worst_z:.2} (< 3)"
        ),
    }
}

fn noise_cancellation() -> Outcome {
    let (windows, k_n, sd) = (10_000, 80, 0.05);
    let delta_n = 1.0 / (252.0 * 80.0);
    let est: Vec<f64> = (0..windows)
        .into_par_iter()
        .map(|w| {
            let mut rng = stream_rng(77, w as u64);
            let levels: Vec<f64> = (0..=k_n).map(|_| 1.0 + sd * rng.sample::<f64, _>(StandardNormal)).collect();
            let dv = levels.windows(2).map(|p| Some(p[0] - p[1])).collect();
            let s = IncrementSeries::new(delta_n, dv, vec![0.0; k_n]).unwrap();
            vv_estimate(&s, f64::INFINITY).unwrap()
        })
        .collect();
    let n = est.len() as f64;
    let mean = est.iter().sum::<f64>() / n;
    let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    Outcome {
        id: 7,
        name: "noise-bias cancellation",
        pass: mean.abs() <= 3.0 * se,
        detail: format!("mean={mean:.4} se={se:.4} |mean|/se={:.2} (<= 3) over {windows} windows", mean.abs() / se),
    }
}

fn vix_scaling() -> Outcome {
    let p = ModelParams::case(Case::F).balanced_jumps();
    let s: Vec<f64> = [0.0078, 0.0156, 0.0275].iter().map(|&v| vix_scaling_ratio(&p, v)).collect();
    Outcome {
        id: 9,
        name: "vix scaling ratio, case F",
        pass: s.iter().all(|&x| x > 0.3 && x < 0.6),
        detail: format!("s at V=0.0078/0.0156/0.0275 = {:.5}/{:.5}/{:.5} (open interval 0.3..0.6)", s[0], s[1], s[2]),
    }
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let smoke = std::env::var("VOLVOL_ACCEPTANCE_SMOKE").is_ok_and(|v| v != "0" && !v.is_empty());
    let reps = if smoke { 200 } else { 1000 };
    let mut out = vec![bs_exactness(), noise_cancellation(), vix_scaling(), pricer_correctness()];

    let started = Instant::now();
    let m = mc("M", 0.0167, reps);
    let m_secs = started.elapsed().as_secs_f64();
    let two = m.get(EstimatorKind::VvTwo);
    let tol = if smoke { 0.15 } else { 0.06 };
    let std_tol = if smoke { 0.15 } else { 0.10 };
    out.push(Outcome {
        id: 2,
        name: "two-tenor VV, case M, V0=0.0167",
        pass: within(two.bias, -0.05, tol) && within(two.std, 0.53, std_tol),
        detail: format!(
            "bias={:+.3} (-0.05 +/- {tol}) std={:.3} (0.53 +/- {std_tol}) reps={reps} runtime={m_secs:.0}s",
            two.bias, two.std
        ),
    });
    let ret = m.get(EstimatorKind::VvRet);
    out.push(Outcome {
        id: 4,
        name: "option-based VV dominates return-based VV",
        pass: ret.rmse / two.rmse > 5.0,
        detail: format!("rmse ret/two-tenor = {:.3}/{:.3} = {:.1} (> 5)", ret.rmse, two.rmse, ret.rmse / two.rmse),
    });
    let lv_two = m.get(EstimatorKind::LvTwo);
    let (cv, cl) = (two.coverage.unwrap_or(0.0), lv_two.coverage.unwrap_or(0.0));
    out.push(Outcome {
        id: 6,
        name: "95% interval coverage, case M",
        pass: (0.88..=0.99).contains(&cv) && (0.88..=0.99).contains(&cl),
        detail: format!("VV_TT'={cv:.3} LV_TT'={cl:.3} (within 0.88..0.99)"),
    });

    let f: Vec<(f64, McSummary)> = [0.0078, 0.0156, 0.0275].iter().map(|&v| (v, mc("F", v, reps))).collect();
    let lv = f[1].1.get(EstimatorKind::LvTwo);
    out.push(Outcome {
        id: 3,
        name: "two-tenor LV, case F, V0=0.0156",
        pass: within(lv.bias, -0.01, 0.05) && within(lv.std, 0.21, 0.06),
        detail: format!("bias={:+.3} (-0.01 +/- 0.05) std={:.3} (0.21 +/- 0.06) reps={reps}", lv.bias, lv.std),
    });
    let mut debias = true;
    let mut parts = Vec::new();
    for (v, s) in &f {
        let (b2, b1) = (s.get(EstimatorKind::VvTwo).bias, s.get(EstimatorKind::VvLong).bias);
        debias &= b2.abs() < b1.abs();
        parts.push(format!("V0={v}: |{b2:+.3}| vs |{b1:+.3}|"));
    }
    out.push(Outcome {
        id: 5,
        name: "two-tenor VV debiasing, case F",
        pass: debias,
        detail: parts.join("; "),
    });

    out.sort_by_key(|o| o.id);
    println!();
    println!("acceptance ({})", if smoke { "smoke, 200 replications" } else { "full, 1000 replications" });
    for o in &out {
        println!(
            "criterion {} {}: {} | {}",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    let failed = out.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria passed", out.len() - failed, out.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
