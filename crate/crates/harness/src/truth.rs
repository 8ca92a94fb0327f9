//! Model-implied volatility of volatility and leverage.

use volvol_core::charfn::Transform;
use volvol_core::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub vv: f64,
    pub lv: f64,
}

/// Spot VV and LV of `F(V)` at variance `v`: with `dV = ... + sigma_v sqrt(V) dB`,
/// `VV = v F'(v)^2 sigma_v^2` and `LV = v F'(v) rho sigma_v`.
pub fn ground_truth(params: &ModelParams, v: f64, transform: Transform) -> Truth {
    let fp = transform.derivative(v);
    Truth {
        vv: v * fp * fp * params.sigma_v * params.sigma_v,
        lv: v * fp * params.rho * params.sigma_v,
    }
}

/// Average of the spot values over the variance levels of a window.
pub fn window_truth(params: &ModelParams, variances: &[f64], transform: Transform) -> Truth {
    let n = variances.len().max(1) as f64;
    let (vv, lv) = variances.iter().fold((0.0, 0.0), |(a, b), &v| {
        let t = ground_truth(params, v, transform);
        (a + t.vv, b + t.lv)
    });
    Truth { vv: vv / n, lv: lv / n }
}
