//! Adaptive Dormand–Prince 5(4) integrator for linear, autonomous complex
//! systems y' = f(y).

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub const DEFAULT_ATOL: f64 = 1e-10;
pub const DEFAULT_RTOL: f64 = 1e-8;
pub const DEFAULT_MAX_STEPS: usize = 2_000_000;

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
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, Default)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Stateful stepper; keeps the last accepted step size and the FSAL stage
/// between calls to [`Dopri5::advance`].
pub struct Dopri5 {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
    h: f64,
    k: [Vec<C64>; 7],
    tmp: Vec<C64>,
    y_new: Vec<C64>,
    fsal_valid: bool,
    pub stats: Stats,
}

impl Dopri5 {
    pub fn new(n: usize, initial_step: f64) -> Self {
        let z = || vec![C64::new(0.0, 0.0); n];
        Self {
            atol: DEFAULT_ATOL,
            rtol: DEFAULT_RTOL,
            max_steps: DEFAULT_MAX_STEPS,
            h: initial_step,
            k: [z(), z(), z(), z(), z(), z(), z()],
            tmp: z(),
            y_new: z(),
            fsal_valid: false,
            stats: Stats::default(),
        }
    }

    pub fn with_tolerances(mut self, atol: f64, rtol: f64) -> Self {
        self.atol = atol;
        self.rtol = rtol;
        self
    }

    /// Integrates `y` from `t0` to `t1` in place. `f(y, dy)` writes dy = f(y).
    pub fn advance<F>(&mut self, f: &mut F, y: &mut [C64], t0: f64, t1: f64) -> Result<()>
    where
        F: FnMut(&[C64], &mut [C64]),
    {
        if t1 < t0 {
            return Err(Error::InvalidParameter(format!(
                "cannot integrate backwards from {t0} to {t1}"
            )));
        }
        let n = y.len();
        let mut t = t0;
        let mut steps = 0usize;
        if !self.fsal_valid {
            f(y, &mut self.k[0]);
            self.stats.evaluations += 1;
            self.fsal_valid = true;
        }
        while t < t1 {
            if steps >= self.max_steps {
                return Err(Error::Integrator {
                    t,
                    steps,
                    step: self.h,
                    reason: "step budget exhausted".into(),
                });
            }
            let remaining = t1 - t;
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h };
            if !(h > 0.0) || h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Integrator {
                    t,
                    steps,
                    step: h,
                    reason: "step size underflow".into(),
                });
            }

            macro_rules! stage {
                ($dst:expr, $($c:expr => $ki:expr),+) => {{
                    for i in 0..n {
                        let mut acc = y[i];
                        $( acc += self.k[$ki][i] * (h * $c); )+
                        self.tmp[i] = acc;
                    }
                    f(&self.tmp, &mut self.k[$dst]);
                }};
            }
            stage!(1, A21 => 0);
            stage!(2, A31 => 0, A32 => 1);
            stage!(3, A41 => 0, A42 => 1, A43 => 2);
            stage!(4, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
            stage!(5, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);
            for i in 0..n {
                self.y_new[i] = y[i]
                    + (self.k[0][i] * B1
                        + self.k[2][i] * B3
                        + self.k[3][i] * B4
                        + self.k[4][i] * B5
                        + self.k[5][i] * B6)
                        * h;
            }
            f(&self.y_new, &mut self.k[6]);
            self.stats.evaluations += 6;

            let mut err2 = 0.0;
            for i in 0..n {
                let e = (self.k[0][i] * E1
                    + self.k[2][i] * E3
                    + self.k[3][i] * E4
                    + self.k[4][i] * E5
                    + self.k[5][i] * E6
                    + self.k[6][i] * E7)
                    * h;
                let sc = self.atol + self.rtol * y[i].norm().max(self.y_new[i].norm());
                err2 += (e.norm() / sc).powi(2);
            }
            let err = (err2 / n as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::Integrator {
                    t,
                    steps,
                    step: h,
                    reason: "non-finite error estimate".into(),
                });
            }
            steps += 1;
            if err <= 1.0 {
                t = if last { t1 } else { t + h };
                y.copy_from_slice(&self.y_new);
                self.k.swap(0, 6);
                self.stats.accepted += 1;
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // A truncated final step says nothing about the natural step.
                if !last || factor < 1.0 {
                    self.h = h * factor;
                }
            } else {
                self.stats.rejected += 1;
                self.h = h * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            }
        }
        Ok(())
    }

    /// Invalidates the cached derivative after the caller modified the state.
    pub fn reset(&mut self) {
        self.fsal_valid = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_and_rotation() {
        let lambda = C64::new(-0.7, 13.0);
        let mut f = |y: &[C64], dy: &mut [C64]| dy[0] = lambda * y[0];
        let mut y = vec![C64::new(1.0, 0.0)];
        let mut st = Dopri5::new(1, 1e-3);
        st.advance(&mut f, &mut y, 0.0, 5.0).unwrap();
        let exact = (lambda * 5.0).exp();
        assert!((y[0] - exact).norm() < 1e-7, "{} vs {}", y[0], exact);
    }

    #[test]
    fn zero_interval_is_identity() {
        let mut f = |y: &[C64], dy: &mut [C64]| dy[0] = -y[0];
        let mut y = vec![C64::new(0.3, 0.1)];
        let mut st = Dopri5::new(1, 1e-3);
        st.advance(&mut f, &mut y, 1.0, 1.0).unwrap();
        assert_eq!(y[0], C64::new(0.3, 0.1));
    }

    #[test]
    fn reports_budget_exhaustion() {
        let mut f = |y: &[C64], dy: &mut [C64]| dy[0] = C64::new(0.0, 1e4) * y[0];
        let mut y = vec![C64::new(1.0, 0.0)];
        let mut st = Dopri5::new(1, 1e-3);
        st.max_steps = 10;
        let err = st.advance(&mut f, &mut y, 0.0, 100.0).unwrap_err();
        assert!(matches!(err, Error::Integrator { steps: 10, .. }));
    }
}
