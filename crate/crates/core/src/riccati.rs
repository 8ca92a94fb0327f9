//! Adaptive Dormand–Prince 5(4) integrator for the affine Riccati system
//!
//! ```text
//! beta'  = psi(s) + (rho sigma_v s - kappa) beta + sigma_v^2 beta^2 / 2
//! alpha' = kappa theta beta
//! ```
//!
//! with `alpha(0) = beta(0) = 0`, so that
//! `E[exp(s (x_{t+T} - x_t)) | V_t = V] = exp(alpha(T) + beta(T) V)`.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Exponents of the affine transform at one `(s, T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfSolution {
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl CfSolution {
    pub const ZERO: CfSolution = CfSolution {
        alpha: Complex64::new(0.0, 0.0),
        beta: Complex64::new(0.0, 0.0),
    };

    #[inline]
    pub fn transform(&self, variance: f64) -> Complex64 {
        (self.alpha + self.beta * variance).exp()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OdeTolerance {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeTolerance {
    fn default() -> Self {
        OdeTolerance {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 200_000,
        }
    }
}

/// Coefficients of the Riccati right-hand side for a fixed transform
/// argument.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RiccatiSystem {
    /// Exponent rate per unit variance, `psi(s)`.
    pub psi: Complex64,
    /// `rho sigma_v s - kappa`.
    pub linear: Complex64,
    /// `sigma_v^2 / 2`.
    pub quadratic: f64,
    /// `kappa theta`.
    pub level: f64,
}

impl RiccatiSystem {
    #[inline]
    fn rhs(&self, beta: Complex64) -> (Complex64, Complex64) {
        let db = self.psi + self.linear * beta + self.quadratic * beta * beta;
        (self.level * beta, db)
    }

    /// Integrates from 0 and records the solution at each of `tenors`
    /// (nondecreasing, nonnegative).
    pub fn solve(&self, tenors: &[f64], tol: OdeTolerance) -> Result<Vec<CfSolution>> {
        // Dormand–Prince tableau; the system is autonomous so stage times are unused
        const A21: f64 = 1.0 / 5.0;
        const A31: f64 = 3.0 / 40.0;
        const A32: f64 = 9.0 / 40.0;
        const A41: f64 = 44.0 / 45.0;
        const A42: f64 = -56.0 / 15.0;
        const A43: f64 = 32.0 / 9.0;
        const A51: f64 = 19372.0 / 6561.0;
        const A52: f64 = -25360.0 / 2187.0;
        const A53: f64 = 64448.0 / 6561.0;
        const A54: f64 = -212.0 / 729.0;
        const A61: f64 = 9017.0 / 3168.0;
        const A62: f64 = -355.0 / 33.0;
        const A63: f64 = 46732.0 / 5247.0;
        const A64: f64 = 49.0 / 176.0;
        const A65: f64 = -5103.0 / 18656.0;
        const B1: f64 = 35.0 / 384.0;
        const B3: f64 = 500.0 / 1113.0;
        const B4: f64 = 125.0 / 192.0;
        const B5: f64 = -2187.0 / 6784.0;
        const B6: f64 = 11.0 / 84.0;
        // 5th minus 4th order weights
        const E1: f64 = 71.0 / 57600.0;
        const E3: f64 = -71.0 / 16695.0;
        const E4: f64 = 71.0 / 1920.0;
        const E5: f64 = -17253.0 / 339200.0;
        const E6: f64 = 22.0 / 525.0;
        const E7: f64 = -1.0 / 40.0;

        let mut out = Vec::with_capacity(tenors.len());
        let mut t = 0.0_f64;
        let mut alpha = Complex64::new(0.0, 0.0);
        let mut beta = Complex64::new(0.0, 0.0);
        let scale = self.psi.norm().max(1.0);
        let mut h = (1e-3 / scale.sqrt()).min(1e-4);
        let mut steps = 0usize;
        let (mut ka1, mut kb1) = self.rhs(beta);

        for &target in tenors {
            if !(target >= t) || !target.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "Riccati output tenors must be finite and nondecreasing, got {target} after {t}"
                )));
            }
            while t < target {
                if steps >= tol.max_steps {
                    return Err(Error::OdeFailure {
                        t,
                        step: h,
                        steps,
                        reason: "maximum step count exceeded",
                    });
                }
                let remaining = target - t;
                let last = h >= remaining * (1.0 - 1e-12);
                let hs = if last { remaining } else { h };

                let b2 = beta + hs * (A21 * kb1);
                let (_, kb2) = self.rhs(b2);
                let b3 = beta + hs * (A31 * kb1 + A32 * kb2);
                let (ka3, kb3) = self.rhs(b3);
                let b4 = beta + hs * (A41 * kb1 + A42 * kb2 + A43 * kb3);
                let (ka4, kb4) = self.rhs(b4);
                let b5 = beta + hs * (A51 * kb1 + A52 * kb2 + A53 * kb3 + A54 * kb4);
                let (ka5, kb5) = self.rhs(b5);
                let b6 = beta + hs * (A61 * kb1 + A62 * kb2 + A63 * kb3 + A64 * kb4 + A65 * kb5);
                let (ka6, kb6) = self.rhs(b6);
                let db = B1 * kb1 + B3 * kb3 + B4 * kb4 + B5 * kb5 + B6 * kb6;
                let da = B1 * ka1 + B3 * ka3 + B4 * ka4 + B5 * ka5 + B6 * ka6;
                let beta_new = beta + hs * db;
                let alpha_new = alpha + hs * da;
                let (ka7, kb7) = self.rhs(beta_new);

                let eb = hs * (E1 * kb1 + E3 * kb3 + E4 * kb4 + E5 * kb5 + E6 * kb6 + E7 * kb7);
                let ea = hs * (E1 * ka1 + E3 * ka3 + E4 * ka4 + E5 * ka5 + E6 * ka6 + E7 * ka7);
                let sb = tol.atol + tol.rtol * beta.norm().max(beta_new.norm());
                let sa = tol.atol + tol.rtol * alpha.norm().max(alpha_new.norm());
                let err = (eb.norm() / sb).max(ea.norm() / sa);
                steps += 1;

                if !err.is_finite() || !beta_new.re.is_finite() || !beta_new.im.is_finite() {
                    h *= 0.1;
                    if h < 1e-300 {
                        return Err(Error::OdeFailure {
                            t,
                            step: h,
                            steps,
                            reason: "non-finite state",
                        });
                    }
                    continue;
                }

                if err <= 1.0 {
                    t = if last { target } else { t + hs };
                    alpha = alpha_new;
                    beta = beta_new;
                    ka1 = ka7;
                    kb1 = kb7;
                    let grow = if err == 0.0 {
                        5.0
                    } else {
                        (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    // a truncated final step says nothing about the natural step size
                    if !last || hs >= h {
                        h = hs * grow;
                    }
                } else {
                    h = hs * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                    if h < 1e-16 * target.max(1e-12) {
                        return Err(Error::OdeFailure {
                            t,
                            step: h,
                            steps,
                            reason: "step size underflow",
                        });
                    }
                }
            }
            out.push(CfSolution { alpha, beta });
        }
        Ok(out)
    }
}
