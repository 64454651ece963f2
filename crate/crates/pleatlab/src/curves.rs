//! Distinguished curves near an improper singular point: the criminant and
//! its plane projection, the vertical- and slant-tangent invariant curves of
//! the chart field, semicubic fits with the m-invariant, the cusp
//! arrangement report, and the change of variables that straightens the
//! graph-like solution to Y = 0.

use std::io;

use serde::Serialize;
use thiserror::Error;

use crate::classify::{
    self, ClassifyError, Epsilon, PleatedCase, SingularClass, Smoothness,
};
use crate::expr::EvalError;
use crate::integrate::{integrate, IntegError, IntegOptions, Run, StopReason};
use crate::lift::{chart_linearization, Chart, ImplicitOde, LiftError};

/// Hard cap on integration time for a single branch; the stop predicates
/// normally fire long before.
const T_SPAN_CAP: f64 = 2000.0;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("the fold locus is not a curve at p = {p}: corrector Jacobian is singular per-y")]
    NonCurveLocus { p: f64 },
    #[error("corrector did not converge at p = {p} (residual {residual:e})")]
    CorrectorDiverged { p: f64, residual: f64 },
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("seeding failed: {0}")]
    SeedFailed(String),
    #[error("branches do not meet at the base point (gap {gap:e})")]
    StitchGap { gap: f64 },
    #[error("fit is ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("curve not representable on the requested window: {0}")]
    NotRepresentable(String),
}

impl From<IntegError<LiftError>> for CurveError {
    fn from(e: IntegError<LiftError>) -> Self {
        match e {
            IntegError::Rhs(e) => CurveError::Lift(e),
            IntegError::StepUnderflow { t } => {
                CurveError::Integration(format!("step size underflow at t = {t}"))
            }
        }
    }
}

/// One sample of a traced curve in the (x, p) chart with recovered y.
#[derive(Clone, Copy, Debug)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub p: f64,
    pub y: f64,
}

/// What the samples parametrize.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveKind {
    /// Integral curve of the chart field. `|t|` is integration time measured
    /// from the near-origin end of each branch and `sign(t)` labels the
    /// branch; along a branch the finite difference d(x,p)/dt equals
    /// `sign(t) * meta.direction` times the chart field.
    Orbit,
    /// A solved locus (criminant); `t` is the curve parameter p.
    Locus,
}

#[derive(Clone, Debug)]
pub struct TrajMeta {
    pub kind: CurveKind,
    /// Base point of the equation the curve belongs to.
    pub origin: [f64; 3],
    /// Integration seed of the + branch, as (x, y, p).
    pub seed: [f64; 3],
    /// Physical time direction in which the flow leaves the base point
    /// along this curve (+1 forward, -1 backward).
    pub direction: f64,
    pub stop_reason: String,
}

/// A traced curve: a polyline of surface samples ordered by `t`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub meta: TrajMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Write a trajectory as CSV with 17 significant digits per field.
pub fn write_csv<W: io::Write>(traj: &Trajectory, w: &mut W) -> io::Result<()> {
    writeln!(w, "t,x,p,y")?;
    for s in &traj.samples {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", s.t, s.x, s.p, s.y)?;
    }
    Ok(())
}

/// Tuning knobs shared by the tracing routines.
#[derive(Clone, Debug)]
pub struct CurveOptions {
    /// Seeding offset at the base point; also sets the stitching tolerance
    /// (2 * delta) and the origin-reached radius for inward runs.
    pub delta: f64,
    /// Half-width |p| of the window used by the semicubic fits.
    pub fit_window: f64,
    /// Seeding/shooting radius for node-type curves.
    pub shoot_radius: f64,
    /// Hard |x|, |p| box around the base point for outward runs.
    pub window: f64,
    /// Arc-length budget per branch, measured in the (x, p) chart.
    pub arc: f64,
    pub integ: IntegOptions,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions {
            delta: 1e-4,
            fit_window: 0.1,
            shoot_radius: 0.25,
            window: 0.45,
            arc: 0.8,
            integ: IntegOptions {
                rel_tol: 1e-10,
                abs_tol: 1e-12,
                max_step: 5e-3,
                ..IntegOptions::default()
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Criminant tracing.

/// Trace {F = 0, F_p = 0} over a p-interval by predictor-corrector: linear
/// extrapolation in p, then 2-D Newton in (x, y) at fixed p. Each accepted
/// point has max(|F|, |F_p|) below 1e-10 (target 1e-12).
pub fn trace_criminant(
    ode: &ImplicitOde,
    p_range: (f64, f64),
    step: f64,
) -> Result<Trajectory, CurveError> {
    let (p_lo, p_hi) = p_range;
    if !(step > 0.0) || !(p_hi > p_lo) {
        return Err(CurveError::BadRequest(format!(
            "need an increasing p-range and positive step, got [{p_lo}, {p_hi}] step {step}"
        )));
    }
    let n = ((p_hi - p_lo) / step).ceil() as usize;
    if n > 2_000_000 {
        return Err(CurveError::BadRequest(format!("{n} steps is above the tracing cap")));
    }
    let o = ode.origin();
    let mut samples = Vec::with_capacity(n + 1);
    let mut guess = [o[0], o[1]];
    for k in 0..=n {
        let p = (p_lo + k as f64 * step).min(p_hi);
        // Secant predictor once two samples exist.
        if samples.len() >= 2 {
            let a: &Sample = &samples[samples.len() - 2];
            let b: &Sample = &samples[samples.len() - 1];
            let dp = b.p - a.p;
            if dp.abs() > 0.0 {
                let r = (p - b.p) / dp;
                guess = [b.x + r * (b.x - a.x), b.y + r * (b.y - a.y)];
            }
        }
        let (x, y) = criminant_newton(ode, p, guess)?;
        guess = [x, y];
        samples.push(Sample { t: p, x, p, y });
    }
    let seed = [samples[0].x, samples[0].y, samples[0].p];
    Ok(Trajectory {
        samples,
        meta: TrajMeta {
            kind: CurveKind::Locus,
            origin: o,
            seed,
            direction: 1.0,
            stop_reason: "range_end".to_string(),
        },
    })
}

fn criminant_newton(
    ode: &ImplicitOde,
    p: f64,
    guess: [f64; 2],
) -> Result<(f64, f64), CurveError> {
    const TARGET: f64 = 1e-12;
    const ACCEPT: f64 = 1e-10;
    let [mut x, mut y] = guess;
    for _ in 0..40 {
        let j = ode.jet_at([x, y, p])?;
        let (f, fp) = (j.value(), j.dp());
        if f.abs().max(fp.abs()) <= TARGET {
            return Ok((x, y));
        }
        // d(F, F_p)/d(x, y)
        let (a11, a12, a21, a22) = (j.dx(), j.dy(), j.dxp(), j.dyp());
        let det = a11 * a22 - a12 * a21;
        let scale = (a11.abs() + a12.abs()) * (a21.abs() + a22.abs());
        if det.abs() <= 1e-12 * scale.max(1e-300) {
            return Err(CurveError::NonCurveLocus { p });
        }
        x -= (f * a22 - fp * a12) / det;
        y -= (a11 * fp - a21 * f) / det;
        if !(x.is_finite() && y.is_finite()) {
            return Err(CurveError::CorrectorDiverged { p, residual: f64::INFINITY });
        }
    }
    let j = ode.jet_at([x, y, p])?;
    let residual = j.value().abs().max(j.dp().abs());
    if residual <= ACCEPT {
        Ok((x, y))
    } else {
        Err(CurveError::CorrectorDiverged { p, residual })
    }
}

// ---------------------------------------------------------------------------
// Invariant curves through the base point.

/// Which distinguished curve to compute. The chart linearization at an
/// improper point has one exactly vertical eigendirection (F_pp = 0 there)
/// and one transverse to it — horizontal once the x^2 term of the quadratic
/// model is removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tangency {
    /// The cusp-forming curve tangent to the vertical eigendirection.
    Vertical,
    /// The graph-like curve tangent to the non-vertical eigendirection.
    Transverse,
}

struct Frame {
    v_vert: [f64; 2],
    lam_vert: f64,
    v_trans: [f64; 2],
    lam_trans: f64,
}

fn chart_frame(ode: &ImplicitOde) -> Result<Frame, CurveError> {
    let m = chart_linearization(ode)?;
    let lin = classify::LinearPart::from_matrix(m);
    let (l1, l2) = match lin.eigenvalues {
        classify::Eigenvalues::Real { l1, l2 } => (l1, l2),
        classify::Eigenvalues::Complex { .. } => {
            return Err(CurveError::BadRequest(
                "chart linearization has a complex spectrum; no real tangent frame".into(),
            ))
        }
    };
    let sep = (l1 - l2).abs();
    if sep <= 1e-9 * l1.abs().max(l2.abs()).max(1.0) {
        return Err(CurveError::BadRequest(
            "chart eigenvalues coincide within tolerance".into(),
        ));
    }
    let v1 = lin
        .direction_for(l1)
        .ok_or_else(|| CurveError::SeedFailed("no eigendirection for l1".into()))?;
    let v2 = lin
        .direction_for(l2)
        .ok_or_else(|| CurveError::SeedFailed("no eigendirection for l2".into()))?;
    // The more-vertical direction (smaller |v_x|) plays the vertical role.
    let (v_vert, lam_vert, v_trans, lam_trans) = if v1[0].abs() <= v2[0].abs() {
        (v1, l1, v2, l2)
    } else {
        (v2, l2, v1, l1)
    };
    Ok(Frame { v_vert, lam_vert, v_trans, lam_trans })
}

/// A branch in outward order: (time-from-near-origin-end, chart state).
struct BranchRun {
    pts: Vec<(f64, [f64; 2])>,
    reason: String,
}

fn reason_str(r: &StopReason) -> String {
    match r {
        StopReason::Predicate(s) => (*s).to_string(),
        StopReason::TimeReached => "time_reached".to_string(),
        StopReason::MaxSteps => "max_steps".to_string(),
    }
}

fn integrate_chart(
    ode: &ImplicitOde,
    seed: [f64; 2],
    dir: f64,
    integ: &IntegOptions,
    stop: &mut dyn FnMut(f64, &[f64; 2]) -> Option<&'static str>,
) -> Result<Run<2>, CurveError> {
    let mut chart = Chart::new(ode);
    let mut rhs = |_t: f64, s: &[f64; 2]| chart.field(s[0], s[1]);
    Ok(integrate(&mut rhs, 0.0, seed, dir, T_SPAN_CAP, integ, stop)?)
}

/// Outward run from a seed at distance delta from the base point (saddle
/// separatrix). Stops on the arc budget or the chart window.
fn run_outward(
    ode: &ImplicitOde,
    seed: [f64; 2],
    dir: f64,
    opts: &CurveOptions,
) -> Result<BranchRun, CurveError> {
    let o = ode.origin();
    let mut prev = seed;
    let mut acc = 0.0;
    let mut stop = |_t: f64, s: &[f64; 2]| {
        acc += (s[0] - prev[0]).hypot(s[1] - prev[1]);
        prev = *s;
        if (s[0] - o[0]).abs() > opts.window || (s[1] - o[2]).abs() > opts.window {
            return Some("window_exit");
        }
        if acc >= opts.arc {
            return Some("arc_budget");
        }
        None
    };
    let run = integrate_chart(ode, seed, dir, &opts.integ, &mut stop)?;
    if matches!(run.stop, StopReason::MaxSteps) {
        return Err(CurveError::Integration(
            "outward run exhausted the step budget before any stop condition".into(),
        ));
    }
    let reason = reason_str(&run.stop);
    let pts = run.ts.iter().zip(&run.ys).map(|(t, s)| (t.abs(), *s)).collect();
    Ok(BranchRun { pts, reason })
}

/// Inward run from a far seed toward the base point; stops inside the
/// delta-ball. Samples are returned in outward order (reversed).
fn run_inward(
    ode: &ImplicitOde,
    seed: [f64; 2],
    dir_inward: f64,
    opts: &CurveOptions,
) -> Result<BranchRun, CurveError> {
    let o = ode.origin();
    let delta = opts.delta;
    let mut stop = |_t: f64, s: &[f64; 2]| {
        if (s[0] - o[0]).hypot(s[1] - o[2]) <= delta {
            Some("origin")
        } else {
            None
        }
    };
    let run = integrate_chart(ode, seed, dir_inward, &opts.integ, &mut stop)?;
    if !matches!(run.stop, StopReason::Predicate("origin")) {
        return Err(CurveError::Integration(format!(
            "inward run stopped by {} before reaching the base point",
            reason_str(&run.stop)
        )));
    }
    let t_end = *run.ts.last().unwrap();
    let pts = run
        .ts
        .iter()
        .zip(&run.ys)
        .rev()
        .map(|(t, s)| ((t - t_end).abs(), *s))
        .collect();
    Ok(BranchRun { pts, reason: "origin".to_string() })
}

/// Quadratic coefficient of the invariant curve tangent to `v_tan` in the
/// (v_tan, v_tr) eigenbasis, c = c2 a^2 + O(a^3). Invariance of the curve
/// gives c2 = q_tr / (2 l_tan - l_tr), where q_tr is the quadratic part of
/// the transverse field component along the tangent direction, read off by
/// a symmetric difference of the chart field.
fn transverse_curvature(
    ode: &ImplicitOde,
    v_tan: [f64; 2],
    lam_tan: f64,
    v_tr: [f64; 2],
    lam_tr: f64,
) -> Result<f64, CurveError> {
    let o = ode.origin();
    let det = v_tan[0] * v_tr[1] - v_tan[1] * v_tr[0];
    let denom = 2.0 * lam_tan - lam_tr;
    if det.abs() < 1e-3 || denom.abs() < 1e-9 {
        return Ok(0.0);
    }
    let h = 1e-3;
    let mut chart = Chart::new(ode);
    let mut tr_component = |s: f64| -> Result<f64, CurveError> {
        let g = chart.field(o[0] + s * h * v_tan[0], o[2] + s * h * v_tan[1])?;
        Ok((-v_tan[1] * g[0] + v_tan[0] * g[1]) / det)
    };
    // The linear (odd) part cancels in the symmetric sum.
    let q_tr = (tr_component(1.0)? + tr_component(-1.0)?) / (2.0 * h * h);
    Ok(q_tr / denom)
}

/// Locate the strong-direction curve of a node by bisecting the seed angle.
/// Probe orbits run backward until they contract to a small read-off radius;
/// the sign of the weak eigencomponent there — with the curve's own
/// quadratic bending subtracted — flips exactly across the curve.
fn shoot_strong_seed(
    ode: &ImplicitOde,
    sgn: f64,
    v_strong: [f64; 2],
    lam_strong: f64,
    v_weak: [f64; 2],
    lam_weak: f64,
    dir_inward: f64,
    opts: &CurveOptions,
) -> Result<[f64; 2], CurveError> {
    const R_READ: f64 = 1e-6;
    let o = ode.origin();
    let r = opts.shoot_radius;
    let det = v_strong[0] * v_weak[1] - v_strong[1] * v_weak[0];
    if det.abs() < 1e-3 {
        return Err(CurveError::SeedFailed(
            "eigendirections are too close to parallel for shooting".into(),
        ));
    }
    let c2 = transverse_curvature(ode, v_strong, lam_strong, v_weak, lam_weak)?;
    let seed_at = |theta: f64| {
        let (c, s) = (theta.cos(), theta.sin());
        [
            o[0] + r * (sgn * c * v_strong[0] + s * v_weak[0]),
            o[2] + r * (sgn * c * v_strong[1] + s * v_weak[1]),
        ]
    };
    let classify_opts = IntegOptions {
        rel_tol: 1e-9,
        abs_tol: 1e-13,
        max_step: 0.02,
        ..IntegOptions::default()
    };
    let side = |theta: f64| -> Result<i32, CurveError> {
        let seed = seed_at(theta);
        let mut stop = |_t: f64, s: &[f64; 2]| {
            let dx = s[0] - o[0];
            let dp = s[1] - o[2];
            let a = (v_weak[1] * dx - v_weak[0] * dp) / det;
            let c = (-v_strong[1] * dx + v_strong[0] * dp) / det;
            let ct = c - c2 * a * a;
            // Early exit for clearly off-curve orbits (weak-dominant well
            // inside the window); otherwise read the sign near the point.
            if dx.hypot(dp) <= R_READ || (a.abs() < 0.05 && ct.abs() > 4.0 * a.abs()) {
                return Some(if ct > 0.0 { "plus" } else { "minus" });
            }
            None
        };
        let run = integrate_chart(ode, seed, dir_inward, &classify_opts, &mut stop)?;
        match run.stop {
            StopReason::Predicate("plus") => Ok(1),
            StopReason::Predicate("minus") => Ok(-1),
            other => Err(CurveError::Integration(format!(
                "shooting probe stopped by {}",
                reason_str(&other)
            ))),
        }
    };
    let (mut lo, mut hi) = (-1.2_f64, 1.2_f64);
    let s_lo = side(lo)?;
    if side(hi)? == s_lo {
        return Err(CurveError::SeedFailed(
            "shooting bracket does not straddle the strong-direction curve".into(),
        ));
    }
    for _ in 0..60 {
        if hi - lo < 1e-13 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if side(mid)? == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(seed_at(0.5 * (lo + hi)))
}

/// Least-squares quadratic coefficient of a weak-direction branch pair,
/// x - x0 ~ v0 q^2 (+ C |q|^nu), where q = p - p0 and nu is the
/// strong/weak eigenvalue ratio. The second regressor absorbs the leading
/// transverse-mode contamination; it is dropped near nu = 2 where the two
/// regressors collide.
fn weak_quadratic_coeff(
    branches: &[BranchRun; 2],
    origin: [f64; 3],
    nu: f64,
    q_lo: f64,
) -> Result<f64, CurveError> {
    let mut s11 = 0.0;
    let mut s12 = 0.0;
    let mut s22 = 0.0;
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    let mut count = 0usize;
    for br in branches {
        for (_, s) in &br.pts {
            let q = s[1] - origin[2];
            if q.abs() < q_lo {
                continue;
            }
            let xi = s[0] - origin[0];
            let r1 = q * q;
            let r2 = q.abs().powf(nu);
            s11 += r1 * r1;
            s12 += r1 * r2;
            s22 += r2 * r2;
            b1 += xi * r1;
            b2 += xi * r2;
            count += 1;
        }
    }
    if count < 8 || s11 <= 0.0 {
        return Err(CurveError::IllConditioned(
            "too few weak-branch samples for the quadratic fit".into(),
        ));
    }
    if (nu - 2.0).abs() < 0.02 {
        return Ok(b1 / s11);
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() <= 1e-14 * s11 * s22 {
        return Ok(b1 / s11);
    }
    Ok((b1 * s22 - b2 * s12) / det)
}

/// Compute an invariant curve of the chart field through the base point, an
/// equilibrium (saddle or node). Both branches are traced and stitched.
pub fn invariant_curve(
    ode: &ImplicitOde,
    which: Tangency,
    opts: &CurveOptions,
) -> Result<Trajectory, CurveError> {
    let o = ode.origin();
    let fr = chart_frame(ode)?;
    let (lam, v) = match which {
        Tangency::Vertical => (fr.lam_vert, fr.v_vert),
        Tangency::Transverse => (fr.lam_trans, fr.v_trans),
    };
    let lam_other = match which {
        Tangency::Vertical => fr.lam_trans,
        Tangency::Transverse => fr.lam_vert,
    };
    if lam.abs() <= 1e-9 || lam_other.abs() <= 1e-9 {
        return Err(CurveError::BadRequest(
            "a chart eigenvalue vanishes; no hyperbolic invariant curve".into(),
        ));
    }
    let saddle = lam * lam_other < 0.0;
    let dir_out = lam.signum();
    let delta = opts.delta;

    let branches: [BranchRun; 2] = if saddle {
        let mk = |sgn: f64| {
            let seed = [o[0] + delta * sgn * v[0], o[2] + delta * sgn * v[1]];
            run_outward(ode, seed, dir_out, opts)
        };
        [mk(1.0)?, mk(-1.0)?]
    } else if lam.abs() > lam_other.abs() {
        // Strong direction of a node: angle-bisection shooting, then an
        // inward run that tracks the curve down to the delta-ball.
        let (vs, vw) = (v, other_dir(&fr, which));
        let mk = |sgn: f64| -> Result<BranchRun, CurveError> {
            let seed = shoot_strong_seed(ode, sgn, vs, lam, vw, lam_other, -dir_out, opts)?;
            run_inward(ode, seed, -dir_out, opts)
        };
        [mk(1.0)?, mk(-1.0)?]
    } else {
        // Weak direction: backward orbits from generic seeds converge to the
        // base point tangent to it. For the vertical curve the seed is then
        // re-centered once with the fitted quadratic coefficient, which
        // suppresses the strong-mode content of the traced branch. Far from
        // the base point the backward flow need not contract (seeds can land
        // outside its basin), so failed runs are retried at half the radius
        // for as long as the fit window stays covered.
        let passes = if which == Tangency::Vertical { 2 } else { 1 };
        let mut r = opts.shoot_radius;
        let r_floor = 1.05 * opts.fit_window;
        loop {
            let attempt = (|| -> Result<[BranchRun; 2], CurveError> {
                let mut seeds =
                    [[o[0] + r * v[0], o[2] + r * v[1]], [o[0] - r * v[0], o[2] - r * v[1]]];
                let mut out: Option<[BranchRun; 2]> = None;
                for pass in 0..passes {
                    let pair = [
                        run_inward(ode, seeds[0], -dir_out, opts)?,
                        run_inward(ode, seeds[1], -dir_out, opts)?,
                    ];
                    if pass + 1 < passes {
                        let nu = (lam_other / lam).abs();
                        let v0 = weak_quadratic_coeff(&pair, o, nu, 10.0 * delta)?;
                        let q = r * v[1].abs();
                        seeds = [
                            [o[0] + v0 * q * q, o[2] + r * v[1]],
                            [o[0] + v0 * q * q, o[2] - r * v[1]],
                        ];
                    }
                    out = Some(pair);
                }
                Ok(out.unwrap())
            })();
            match attempt {
                Ok(pair) => break pair,
                Err(_) if r / 2.0 >= r_floor => r /= 2.0,
                Err(e) => return Err(e),
            }
        }
    };

    stitch(ode, branches, dir_out, opts)
}

fn other_dir(fr: &Frame, which: Tangency) -> [f64; 2] {
    match which {
        Tangency::Vertical => fr.v_trans,
        Tangency::Transverse => fr.v_vert,
    }
}

/// Join two outward-ordered branches into one polyline through the base
/// point, recovering y along the way. The near-origin endpoints must agree
/// to the stitching tolerance 2*delta.
fn stitch(
    ode: &ImplicitOde,
    branches: [BranchRun; 2],
    dir_out: f64,
    opts: &CurveOptions,
) -> Result<Trajectory, CurveError> {
    let [plus, minus] = branches;
    let (p0, m0) = (plus.pts[0].1, minus.pts[0].1);
    let gap = (p0[0] - m0[0]).hypot(p0[1] - m0[1]);
    if gap > 2.1 * opts.delta {
        return Err(CurveError::StitchGap { gap });
    }
    let recover = |pts: &[(f64, [f64; 2])], t_sign: f64| -> Result<Vec<Sample>, CurveError> {
        let mut chart = Chart::new(ode);
        pts.iter()
            .map(|(tau, s)| {
                let y = chart.solve_y(s[0], s[1])?;
                Ok(Sample { t: t_sign * tau, x: s[0], p: s[1], y })
            })
            .collect()
    };
    let minus_samples = recover(&minus.pts, -1.0)?;
    let plus_samples = recover(&plus.pts, 1.0)?;
    let mut samples = Vec::with_capacity(minus_samples.len() + plus_samples.len());
    samples.extend(minus_samples.into_iter().rev());
    let seed_sample = *plus_samples.last().unwrap();
    samples.extend(plus_samples);
    Ok(Trajectory {
        samples,
        meta: TrajMeta {
            kind: CurveKind::Orbit,
            origin: ode.origin(),
            seed: [seed_sample.x, seed_sample.y, seed_sample.p],
            direction: dir_out,
            stop_reason: format!("-:{} +:{}", minus.reason, plus.reason),
        },
    })
}

/// Local-defect check of an orbit trajectory: re-integrate each sampled step
/// at tight tolerance and compare. Returns the worst ratio of defect to the
/// per-step error allowance rel_tol*scale + abs_tol of `opts`; a consistent
/// trajectory stays below ~10.
pub fn orbit_defect_ratio(
    traj: &Trajectory,
    ode: &ImplicitOde,
    opts: &CurveOptions,
    stride: usize,
) -> Result<f64, CurveError> {
    if traj.meta.kind != CurveKind::Orbit {
        return Err(CurveError::BadRequest("defect check applies to orbit trajectories".into()));
    }
    let d = traj.meta.direction;
    let o = traj.meta.origin;
    let tight = IntegOptions {
        rel_tol: 1e-12,
        abs_tol: 1e-14,
        max_step: opts.integ.max_step,
        ..IntegOptions::default()
    };
    let mut worst = 0.0_f64;
    let step = stride.max(1);
    let mut i = 0;
    while i + 1 < traj.samples.len() {
        let s1 = traj.samples[i];
        let s2 = traj.samples[i + 1];
        i += step;
        if s1.t == s2.t || s1.t * s2.t < 0.0 {
            continue;
        }
        let branch = if s1.t + s2.t > 0.0 { 1.0 } else { -1.0 };
        let phys = branch * d * (s2.t - s1.t);
        let mut chart = Chart::with_guess(ode, s1.y);
        let mut rhs = |_t: f64, s: &[f64; 2]| chart.field(s[0], s[1]);
        let run = integrate(
            &mut rhs,
            0.0,
            [s1.x, s1.p],
            phys.signum(),
            phys.abs(),
            &tight,
            &mut |_, _| None,
        )
        .map_err(CurveError::from)?;
        let end = run.ys.last().unwrap();
        let diff = (end[0] - s2.x).hypot(end[1] - s2.p);
        let scale = (s2.x - o[0]).hypot(s2.p - o[2]).max(1e-6);
        let allowed = opts.integ.rel_tol * scale + opts.integ.abs_tol;
        worst = worst.max(diff / allowed);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Semicubic fits.

/// Which residual the fit reports: the chart curve x(p) or the projected
/// plane curve (x(p), y(p)).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMode {
    Chart,
    Plane,
}

/// Least-squares semicubic model of a cusp curve in sheared coordinates at
/// the base point: x = A p^2, y = B p^3, hence y^2 = m x^3 with m = B^2/A^3.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SemicubicFit {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub m: f64,
    pub residual: f64,
    pub window: f64,
}

/// Shear a sample into base-point coordinates: (xi, eta, q) with
/// eta = y - y0 - p0 (x - x0), the y-offset measured against the tangent
/// plane of solutions through the base point.
fn sheared(origin: [f64; 3], s: &Sample) -> (f64, f64, f64) {
    let xi = s.x - origin[0];
    (xi, s.y - origin[1] - origin[2] * xi, s.p - origin[2])
}

/// Least squares through modified Gram-Schmidt QR (two orthogonalization
/// sweeps). `cols` are the design columns; returns None when a column is
/// numerically dependent on the preceding ones.
fn lsq(cols: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let k = cols.len();
    let m = rhs.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut q: Vec<Vec<f64>> = cols.to_vec();
    let mut r = vec![vec![0.0_f64; k]; k];
    for j in 0..k {
        let scale = dot(&cols[j], &cols[j]).sqrt();
        for _ in 0..2 {
            for i in 0..j {
                let rij = dot(&q[i], &q[j]);
                r[i][j] += rij;
                for t in 0..m {
                    q[j][t] -= rij * q[i][t];
                }
            }
        }
        let nrm = dot(&q[j], &q[j]).sqrt();
        if !(nrm > 1e-10 * scale.max(f64::MIN_POSITIVE)) {
            return None;
        }
        r[j][j] = nrm;
        for t in 0..m {
            q[j][t] /= nrm;
        }
    }
    let mut c = vec![0.0_f64; k];
    for j in (0..k).rev() {
        let mut z = dot(&q[j], rhs);
        for i in j + 1..k {
            z -= r[j][i] * c[i];
        }
        c[j] = z / r[j][j];
    }
    Some(c)
}

/// Fit x = A q^2 and y = B q^3 by least squares over the raw samples with
/// |q| <= p_fit; both branches must reach the window edge.
///
/// The model carries cubic, quartic and quartic-log correction terms:
/// vertical-tangent curves of perturbed equations genuinely have them (the
/// quartic coefficient resonates at isolated parameter values, producing a
/// q^4 ln|q| term), and absorbing the corrections keeps the reported leading
/// coefficients unbiased. On exact semicubic data the corrections vanish.
pub fn fit_semicubic(
    traj: &Trajectory,
    mode: FitMode,
    p_fit: f64,
) -> Result<SemicubicFit, CurveError> {
    if !(p_fit > 0.0) {
        return Err(CurveError::BadRequest("fit window must be positive".into()));
    }
    let origin = traj.meta.origin;
    let q_min = p_fit * 1e-3;
    let mut s4 = 0.0;
    let mut s6 = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut pts: Vec<(f64, f64, f64)> = Vec::new();
    let (mut n_plus, mut n_minus) = (0usize, 0usize);
    let (mut cover_plus, mut cover_minus) = (0.0_f64, 0.0_f64);
    for s in &traj.samples {
        let (xi, eta, q) = sheared(origin, s);
        if q.abs() < q_min || q.abs() > p_fit * (1.0 + 1e-9) {
            continue;
        }
        if q > 0.0 {
            n_plus += 1;
            cover_plus = cover_plus.max(q);
        } else {
            n_minus += 1;
            cover_minus = cover_minus.max(-q);
        }
        s4 += q.powi(4);
        s6 += q.powi(6);
        sx += xi * q * q;
        sy += eta * q.powi(3);
        pts.push((q, xi, eta));
    }
    if n_plus < 8 || n_minus < 8 || cover_plus < 0.95 * p_fit || cover_minus < 0.95 * p_fit {
        return Err(CurveError::NotRepresentable(
            "curve does not cover the fit window on both branches".into(),
        ));
    }
    // Scaled regressors u = q/p_fit keep the design well conditioned; the
    // leading-only estimates remain as a fallback for degenerate designs.
    let n = pts.len();
    let mut cols_x: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 4];
    let mut cols_y: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 4];
    let mut rhs_x = Vec::with_capacity(n);
    let mut rhs_y = Vec::with_capacity(n);
    for (q, xi, eta) in &pts {
        let u = q / p_fit;
        let lu = u.abs().ln();
        cols_x[0].push(u * u);
        cols_x[1].push(u.powi(3));
        cols_x[2].push(u.powi(4));
        cols_x[3].push(u.powi(4) * lu);
        cols_y[0].push(u.powi(3));
        cols_y[1].push(u.powi(4));
        cols_y[2].push(u.powi(5));
        cols_y[3].push(u.powi(5) * lu);
        rhs_x.push(*xi);
        rhs_y.push(*eta);
    }
    let cx = lsq(&cols_x, &rhs_x);
    let cy = lsq(&cols_y, &rhs_y);
    let a = cx.as_ref().map_or(sx / s4, |c| c[0] / (p_fit * p_fit));
    let b = cy.as_ref().map_or(sy / s6, |c| c[0] / p_fit.powi(3));
    if a.abs() < 1e-9 {
        return Err(CurveError::IllConditioned(
            "no quadratic tangency: the x ~ p^2 coefficient vanishes".into(),
        ));
    }
    let model = |c: &Option<Vec<f64>>, lead: f64, q: f64, k0: i32| -> f64 {
        let u = q / p_fit;
        match c {
            Some(c) => {
                let lu = u.abs().ln();
                u.powi(k0) * (c[0] + u * c[1] + u * u * (c[2] + c[3] * lu))
            }
            None => lead * q.powi(k0),
        }
    };
    let mut sq = 0.0;
    for (q, xi, eta) in &pts {
        let rx = xi - model(&cx, a, *q, 2);
        let ry = eta - model(&cy, b, *q, 3);
        sq += match mode {
            FitMode::Chart => rx * rx,
            FitMode::Plane => rx * rx + ry * ry,
        };
    }
    let residual = (sq / pts.len() as f64).sqrt();
    Ok(SemicubicFit { a, b, m: b * b / (a * a * a), residual, window: p_fit })
}

// ---------------------------------------------------------------------------
// Pleated-point reports built on the curve machinery.

pub fn pleated_data(ode: &ImplicitOde) -> Result<Box<classify::PleatedImproperData>, CurveError> {
    match classify::classify_singular_point(ode)? {
        SingularClass::PleatedImproper(d) => Ok(d),
        other => Err(CurveError::BadRequest(format!(
            "base point classifies as {}, need pleated_improper",
            other.kind()
        ))),
    }
}

/// Check of the quadratic coefficient of the vertical-tangent curve,
/// x = v0 p^2 + o(p^2) with v0 = 1/(3b-2).
#[derive(Clone, Debug)]
pub struct QuadCoeffCheck {
    pub case: PleatedCase,
    pub v0_fitted: f64,
    pub v0_predicted: f64,
    pub rel_err: f64,
    /// In the case 1/2 < b < 2/3 generic vertical-tangent curves are only
    /// C^1, so the fitted value is informational; the check then rests on
    /// the invariance residual of the predicted curve.
    pub informational: bool,
    /// Worst cross product of the chart field with the tangent of the
    /// predicted curve x = v0 p^2 (set in the informational case).
    pub invariance_residual: Option<f64>,
    pub chart_fit: SemicubicFit,
    pub plane_fit: SemicubicFit,
}

pub fn quad_coefficient_check(
    ode: &ImplicitOde,
    opts: &CurveOptions,
) -> Result<QuadCoeffCheck, CurveError> {
    let data = pleated_data(ode)?;
    let v0_predicted = 1.0 / (3.0 * data.b - 2.0);
    let curve = invariant_curve(ode, Tangency::Vertical, opts)?;
    let chart_fit = fit_semicubic(&curve, FitMode::Chart, opts.fit_window)?;
    let plane_fit = fit_semicubic(&curve, FitMode::Plane, opts.fit_window)?;
    let v0_fitted = chart_fit.a;
    let rel_err = (v0_fitted - v0_predicted).abs() / v0_predicted.abs();
    let informational = data.case == PleatedCase::N2;
    let invariance_residual = if informational {
        Some(predicted_curve_residual(ode, v0_predicted)?)
    } else {
        None
    };
    Ok(QuadCoeffCheck {
        case: data.case,
        v0_fitted,
        v0_predicted,
        rel_err,
        informational,
        invariance_residual,
        chart_fit,
        plane_fit,
    })
}

/// Worst |cross product| of the chart field with the tangent (2 v0 q, 1) of
/// the predicted curve x = x0 + v0 q^2, p = p0 + q over |q| <= 0.2.
fn predicted_curve_residual(ode: &ImplicitOde, v0: f64) -> Result<f64, CurveError> {
    let o = ode.origin();
    let mut chart = Chart::new(ode);
    let mut worst = 0.0_f64;
    for i in 0..=80 {
        let q = -0.2 + 0.4 * i as f64 / 80.0;
        if q.abs() < 2e-3 {
            continue;
        }
        let x = o[0] + v0 * q * q;
        let p = o[2] + q;
        let v = chart.field(x, p)?;
        let cross = v[0] - v[1] * 2.0 * v0 * q;
        worst = worst.max(cross.abs());
    }
    Ok(worst)
}

/// Mutual position of the projected criminant cusp y^2 = mK x^3 and the
/// projected vertical-tangent curve y^2 = mC x^3.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ArrangementReport {
    pub same_semiplane: bool,
    /// None when the cusps open into opposite semiplanes.
    pub c_in_tongue: Option<bool>,
    #[serde(rename = "mK")]
    pub m_k: f64,
    #[serde(rename = "mC")]
    pub m_c: f64,
}

pub fn arrangement(ode: &ImplicitOde, opts: &CurveOptions) -> Result<ArrangementReport, CurveError> {
    pleated_data(ode)?;
    let o = ode.origin();
    let span = 2.5 * opts.fit_window;
    let k = trace_criminant(ode, (o[2] - span, o[2] + span), opts.fit_window / 40.0)?;
    let fit_k = fit_semicubic(&k, FitMode::Plane, opts.fit_window)?;
    let c = invariant_curve(ode, Tangency::Vertical, opts)?;
    let fit_c = fit_semicubic(&c, FitMode::Plane, opts.fit_window)?;
    let same_semiplane = fit_k.a.signum() == fit_c.a.signum();
    let c_in_tongue = same_semiplane.then(|| fit_c.m.abs() < fit_k.m.abs());
    Ok(ArrangementReport { same_semiplane, c_in_tongue, m_k: fit_k.m, m_c: fit_c.m })
}

// ---------------------------------------------------------------------------
// Straightening the graph-like solution.

/// Piecewise-cubic Hermite table u(x) with matched slopes; evaluation
/// outside the sampled domain is an error.
#[derive(Clone, Debug)]
pub struct HermiteTable {
    xs: Vec<f64>,
    us: Vec<f64>,
    ds: Vec<f64>,
}

impl HermiteTable {
    fn new(xs: Vec<f64>, us: Vec<f64>, ds: Vec<f64>) -> Self {
        HermiteTable { xs, us, ds }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    /// (u, u') at x.
    pub fn eval(&self, x: f64) -> Result<(f64, f64), CurveError> {
        let (lo, hi) = self.domain();
        if x < lo || x > hi {
            return Err(CurveError::NotRepresentable(format!(
                "x = {x} outside the sampled domain [{lo}, {hi}]"
            )));
        }
        let i = self.xs.partition_point(|&t| t < x).clamp(1, self.xs.len() - 1);
        let (xa, xb) = (self.xs[i - 1], self.xs[i]);
        let h = xb - xa;
        let s = if h > 0.0 { (x - xa) / h } else { 0.0 };
        let (ua, ub, da, db) = (self.us[i - 1], self.us[i], self.ds[i - 1], self.ds[i]);
        let s2 = s * s;
        let s3 = s2 * s;
        let u = (2.0 * s3 - 3.0 * s2 + 1.0) * ua
            + (s3 - 2.0 * s2 + s) * h * da
            + (-2.0 * s3 + 3.0 * s2) * ub
            + (s3 - s2) * h * db;
        let du = (6.0 * s2 - 6.0 * s) * (ua - ub) / h
            + (3.0 * s2 - 4.0 * s + 1.0) * da
            + (3.0 * s2 - 2.0 * s) * db;
        Ok((u, du))
    }
}

/// The equation after subtracting the graph-like solution u(x): evaluating
/// G(x, Y, P) = F(x, Y + u(x), P + u'(x)). Y = 0 is a solution of G.
#[derive(Debug)]
pub struct StraightenedOde<'a> {
    ode: &'a ImplicitOde,
    pub u: HermiteTable,
    pub b: f64,
    pub epsilon: Epsilon,
    /// Smoothness class of u: finite n when b = 1/(n+1) and epsilon is not
    /// known to vanish, otherwise infinite.
    pub u_smoothness: Smoothness,
    /// max |F(x, u(x), u'(x))| over the requested window.
    pub residual_max: f64,
    pub half_width: f64,
}

impl StraightenedOde<'_> {
    pub fn eval(&self, x: f64, big_y: f64, big_p: f64) -> Result<f64, CurveError> {
        let (u, du) = self.u.eval(x)?;
        Ok(self.ode.f_at([x, big_y + u, big_p + du])?)
    }

    /// (u, u') at x.
    pub fn u_at(&self, x: f64) -> Result<(f64, f64), CurveError> {
        self.u.eval(x)
    }
}

/// Straighten the graph-like invariant curve into the zero solution. The
/// slopes of the table come from the curve's own p-samples, so the slope
/// shift P + u'(x) is consistent with the contact structure.
pub fn straighten<'a>(
    ode: &'a ImplicitOde,
    half_width: f64,
    epsilon: Epsilon,
    opts: &CurveOptions,
) -> Result<StraightenedOde<'a>, CurveError> {
    if !(half_width > 0.0) {
        return Err(CurveError::BadRequest("window half-width must be positive".into()));
    }
    let data = pleated_data(ode)?;
    let o = ode.origin();
    let curve = invariant_curve(ode, Tangency::Transverse, opts)?;
    let mut nodes: Vec<(f64, f64, f64)> =
        curve.samples.iter().map(|s| (s.x, s.y, s.p)).collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    nodes.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12);
    if nodes.len() < 8 {
        return Err(CurveError::NotRepresentable("too few curve samples".into()));
    }
    let (lo, hi) = (nodes[0].0, nodes.last().unwrap().0);
    if lo > o[0] - half_width || hi < o[0] + half_width {
        return Err(CurveError::NotRepresentable(format!(
            "curve covers [{lo}, {hi}], window needs [{}, {}]",
            o[0] - half_width,
            o[0] + half_width
        )));
    }
    let u = HermiteTable::new(
        nodes.iter().map(|n| n.0).collect(),
        nodes.iter().map(|n| n.1).collect(),
        nodes.iter().map(|n| n.2).collect(),
    );
    let mut residual_max = 0.0_f64;
    for i in 0..=200 {
        let x = o[0] - half_width + 2.0 * half_width * i as f64 / 200.0;
        let (ux, dux) = u.eval(x)?;
        residual_max = residual_max.max(ode.f_at([x, ux, dux])?.abs());
    }
    let u_smoothness = match (epsilon, classify::node_resonance(data.b)) {
        (Epsilon::Zero, _) => Smoothness::Infinite,
        (_, Some(r)) if r.form == classify::ResonanceForm::OneOverNPlusOne => {
            Smoothness::Finite(r.n)
        }
        _ => Smoothness::Infinite,
    };
    Ok(StraightenedOde {
        ode,
        u,
        b: data.b,
        epsilon,
        u_smoothness,
        residual_max,
        half_width,
    })
}
