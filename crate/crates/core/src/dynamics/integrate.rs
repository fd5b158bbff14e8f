//! Adaptive Dormand-Prince 5(4) stepping over a fixed output grid.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Error control for the adaptive integrators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Absolute and relative tolerance per component.
    pub tol: f64,
    /// Upper bound on the step size. `None` leaves it to the caller's default.
    pub max_step: Option<f64>,
    pub initial_step: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_step: None,
            initial_step: None,
        }
    }
}

impl SolverOptions {
    /// Caps the step at a twentieth of the drive period unless already set.
    pub fn for_drive(mut self, omega: f64) -> Self {
        if self.max_step.is_none() && omega > 0.0 {
            self.max_step = Some(2.0 * std::f64::consts::PI / omega / 20.0);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidParameter(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        for (name, v) in [("max_step", self.max_step), ("initial_step", self.initial_step)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidParameter(format!("{name} must be positive")));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidTimeGrid);
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidTimeGrid);
    }
    Ok(())
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `dy/dt = rhs(t, y)` from `times[0]`, calling `observe` at every
/// grid time (including the first) with the state there.
pub(crate) fn integrate<R, O>(
    y: &mut [C64],
    times: &[f64],
    opts: &SolverOptions,
    mut rhs: R,
    mut observe: O,
) -> Result<()>
where
    R: FnMut(f64, &[C64], &mut [C64]),
    O: FnMut(usize, f64, &[C64]) -> Result<()>,
{
    check_grid(times)?;
    opts.validate()?;
    let n = y.len();
    let mut t = times[0];
    observe(0, t, y)?;
    if times.len() == 1 {
        return Ok(());
    }
    let span = times[times.len() - 1] - t;
    let max_step = opts.max_step.unwrap_or(f64::INFINITY).min(span.max(f64::MIN_POSITIVE));
    let mut k: Vec<Vec<C64>> = (0..7).map(|_| vec![C64::new(0.0, 0.0); n]).collect();
    let mut stage = vec![C64::new(0.0, 0.0); n];
    let mut y_new = vec![C64::new(0.0, 0.0); n];

    rhs(t, y, &mut k[0]);
    let mut h = match opts.initial_step {
        Some(h0) => h0.min(max_step),
        None => {
            let scale = k[0].iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-10);
            (0.01 / scale).min(max_step).min(span / 100.0).max(1e-8)
        }
    };

    for (idx, &t_out) in times.iter().enumerate().skip(1) {
        while t < t_out {
            let remaining = t_out - t;
            let clamped = h >= remaining;
            let step = if clamped { remaining } else { h };
            if step < 1e-13 * t.abs().max(1.0) && !clamped {
                return Err(Error::StepSizeUnderflow { t, h: step });
            }
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        let a = A[s][j];
                        if a != 0.0 {
                            acc += kj[i] * (a * step);
                        }
                    }
                    stage[i] = acc;
                }
                rhs(t + C[s] * step, &stage, &mut k[s]);
                if s == 6 {
                    y_new.copy_from_slice(&stage);
                }
            }
            let mut err = 0.0f64;
            for i in 0..n {
                let mut e = C64::new(0.0, 0.0);
                for (j, kj) in k.iter().enumerate() {
                    if E[j] != 0.0 {
                        e += kj[i] * E[j];
                    }
                }
                let sc = opts.tol * (1.0 + y[i].norm().max(y_new[i].norm()));
                err = err.max((e * step).norm() / sc);
            }
            if !err.is_finite() {
                h = step * 0.2;
                if h < 1e-13 * t.abs().max(1.0) {
                    return Err(Error::StepSizeUnderflow { t, h });
                }
                continue;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                t = if clamped { t_out } else { t + step };
                y.copy_from_slice(&y_new);
                k.swap(0, 6);
                // A forced short step to land on the grid says nothing about
                // the natural step size.
                let proposed = (step * factor).min(max_step);
                if !clamped || proposed > h {
                    h = proposed;
                }
            } else {
                h = step * factor.min(1.0);
                if h < 1e-13 * t.abs().max(1.0) {
                    return Err(Error::StepSizeUnderflow { t, h });
                }
            }
        }
        observe(idx, t, y)?;
    }
    Ok(())
}
