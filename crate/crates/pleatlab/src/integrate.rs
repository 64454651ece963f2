//! Adaptive Dormand-Prince 5(4) integration with embedded error control.
//!
//! The stepper is generic over the state dimension and over a fallible
//! right-hand side, so the chart field (whose evaluation can fail at a
//! chart breakdown) plugs in directly. Accepted samples are recorded as
//! they are produced; a caller-supplied predicate stops the run.

use thiserror::Error;

#[derive(Clone, Copy, Debug)]
pub struct IntegOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
    pub init_step: Option<f64>,
}

impl Default for IntegOptions {
    fn default() -> Self {
        IntegOptions {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: 0.01,
            min_step: 1e-14,
            max_steps: 400_000,
            init_step: None,
        }
    }
}

/// Why an integration run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// The stop predicate fired; carries the predicate's tag.
    Predicate(&'static str),
    /// |t - t0| reached the requested horizon.
    TimeReached,
    /// The step budget ran out.
    MaxSteps,
}

#[derive(Debug, Error)]
pub enum IntegError<E> {
    #[error("right-hand side failed: {0}")]
    Rhs(E),
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
}

#[derive(Clone, Debug)]
pub struct Run<const N: usize> {
    pub ts: Vec<f64>,
    pub ys: Vec<[f64; N]>,
    pub stop: StopReason,
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate dy/dt = rhs(t, y) from (t0, y0) in direction `dir` (+1 or -1)
/// until `t_span` of time has elapsed, the predicate fires, or the step
/// budget is exhausted. Samples are the accepted step endpoints including
/// the initial point.
///
/// RHS failures on trial stages shrink the step; a failure at a vanishing
/// step surfaces as `StepUnderflow` wrapping nothing, while a failure at
/// the current point surfaces as `Rhs`.
pub fn integrate<const N: usize, E>(
    rhs: &mut dyn FnMut(f64, &[f64; N]) -> Result<[f64; N], E>,
    t0: f64,
    y0: [f64; N],
    dir: f64,
    t_span: f64,
    opt: &IntegOptions,
    stop: &mut dyn FnMut(f64, &[f64; N]) -> Option<&'static str>,
) -> Result<Run<N>, IntegError<E>> {
    let dir = if dir < 0.0 { -1.0 } else { 1.0 };
    let mut t = t0;
    let mut y = y0;
    let mut ts = vec![t];
    let mut ys = vec![y];
    let mut h = opt.init_step.unwrap_or(opt.max_step.min(1e-3)).min(opt.max_step);

    if let Some(tag) = stop(t, &y) {
        return Ok(Run { ts, ys, stop: StopReason::Predicate(tag) });
    }

    for _ in 0..opt.max_steps {
        let remaining = t_span - (t - t0).abs();
        if remaining <= 0.0 {
            return Ok(Run { ts, ys, stop: StopReason::TimeReached });
        }
        h = h.min(remaining).min(opt.max_step);

        let k1 = rhs(t, &y).map_err(IntegError::Rhs)?;
        let mut accepted = false;
        while !accepted {
            if h < opt.min_step {
                return Err(IntegError::StepUnderflow { t });
            }
            match try_step(rhs, t, &y, &k1, dir * h, opt) {
                Ok(None) => {
                    // A trial stage failed to evaluate; treat like a rejected
                    // step and shrink.
                    h *= 0.5;
                }
                Ok(Some((y5, err_ratio))) => {
                    if err_ratio <= 1.0 {
                        t += dir * h;
                        y = y5;
                        ts.push(t);
                        ys.push(y);
                        accepted = true;
                        let factor = if err_ratio > 0.0 {
                            (0.9 * err_ratio.powf(-0.2)).clamp(0.2, 5.0)
                        } else {
                            5.0
                        };
                        h = (h * factor).min(opt.max_step);
                        if let Some(tag) = stop(t, &y) {
                            return Ok(Run { ts, ys, stop: StopReason::Predicate(tag) });
                        }
                    } else {
                        h *= (0.9 * err_ratio.powf(-0.2)).clamp(0.1, 0.9);
                    }
                }
                Err(e) => return Err(IntegError::Rhs(e)),
            }
        }
    }
    Ok(Run { ts, ys, stop: StopReason::MaxSteps })
}

/// One trial step of signed size `h`. Returns the fifth-order solution and
/// the scaled error norm, or `None` when a trial stage's RHS failed in a
/// recoverable way (any stage past the first).
#[allow(clippy::type_complexity)]
fn try_step<const N: usize, E>(
    rhs: &mut dyn FnMut(f64, &[f64; N]) -> Result<[f64; N], E>,
    t: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    opt: &IntegOptions,
) -> Result<Option<([f64; N], f64)>, E> {
    let mut k = [[0.0; N]; 7];
    k[0] = *k1;
    for stage in 0..6 {
        let mut yt = *y;
        for (i, yti) in yt.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (s, ks) in k.iter().enumerate().take(stage + 1) {
                acc += A[stage][s] * ks[i];
            }
            *yti += h * acc;
        }
        match rhs(t + C[stage] * h, &yt) {
            Ok(v) => k[stage + 1] = v,
            Err(_) => return Ok(None),
        }
    }
    let mut y5 = *y;
    let mut err = 0.0;
    for i in 0..N {
        let mut acc5 = 0.0;
        let mut acc4 = 0.0;
        for s in 0..7 {
            acc5 += B5[s] * k[s][i];
            acc4 += B4[s] * k[s][i];
        }
        y5[i] += h * acc5;
        let e = h * (acc5 - acc4);
        let sc = opt.abs_tol + opt.rel_tol * y[i].abs().max(y5[i].abs());
        err += (e / sc) * (e / sc);
    }
    let err_ratio = (err / N as f64).sqrt();
    Ok(Some((y5, err_ratio)))
}
