//! The equation surface {F = 0} and the direction field lifted onto it.
//!
//! For F(x, y, p) with p = dy/dx the lifted field is
//! `(dx, dy, dp) = (F_p, p F_p, -(F_x + p F_y))`, tangent to the surface.
//! Away from the criminant {F = F_p = 0} the surface projects to the
//! (x, p) chart; the y coordinate is recovered by a warm-started Newton
//! solve of F(x, y, p) = 0 in y.

use crate::curves::Trajectory;
use crate::expr::{parse, EvalError, ExprAst, Jet3, ParseError};
use std::collections::BTreeMap;
use thiserror::Error;

/// Relative residual below which a point counts as on-surface.
pub const TOL_SURFACE: f64 = 1e-9;
/// |F_y| below this invalidates the (x, p) chart at the point.
pub const CHART_BREAKDOWN_TOL: f64 = 1e-6;
/// Newton polish target for the chart y-solve, relative to the point scale.
const Y_SOLVE_TARGET: f64 = 1e-13;
const Y_SOLVE_MAX_ITERS: usize = 60;

/// Scale used for relative residual tests at a point.
pub fn point_scale(pt: [f64; 3]) -> f64 {
    1.0f64.max(pt[0].abs()).max(pt[1].abs()).max(pt[2].abs())
}

#[derive(Debug, Error)]
pub enum LiftError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("point ({0}, {1}, {2}) is off the surface: |F| = {3:e}")]
    OffSurface(f64, f64, f64, f64),
    #[error("chart breakdown at (x, p) = ({x}, {p}): |F_y| = {fy:e}")]
    ChartBreakdown { x: f64, p: f64, fy: f64 },
    #[error("Newton solve for y diverged at (x, p) = ({x}, {p})")]
    NewtonDiverged { x: f64, p: f64 },
}

#[derive(Debug, Error)]
pub enum OdeBuildError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("declared origin ({0}, {1}, {2}) is off the surface: |F| = {3:e}")]
    OriginOffSurface(f64, f64, f64, f64),
}

/// An implicit equation F(x, y, p) = 0 with bound parameters and a base point.
#[derive(Clone, Debug)]
pub struct ImplicitOde {
    ast: ExprAst,
    params: BTreeMap<String, f64>,
    origin: [f64; 3],
}

impl ImplicitOde {
    /// Build an equation, checking parameter bindings and that the declared
    /// origin lies on the surface.
    pub fn new(
        ast: ExprAst,
        params: BTreeMap<String, f64>,
        origin: [f64; 3],
    ) -> Result<Self, OdeBuildError> {
        let ode = ImplicitOde { ast, params, origin };
        let f = ode.ast.eval_scalar(&ode.params, origin)?;
        if f.abs() > TOL_SURFACE * point_scale(origin) {
            return Err(OdeBuildError::OriginOffSurface(
                origin[0], origin[1], origin[2], f.abs(),
            ));
        }
        Ok(ode)
    }

    pub fn from_source(
        src: &str,
        params: BTreeMap<String, f64>,
        origin: [f64; 3],
    ) -> Result<Self, OdeBuildError> {
        Ok(Self::new(parse(src)?, params, origin)?)
    }

    pub fn ast(&self) -> &ExprAst {
        &self.ast
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn f_at(&self, pt: [f64; 3]) -> Result<f64, EvalError> {
        self.ast.eval_scalar(&self.params, pt)
    }

    pub fn jet_at(&self, pt: [f64; 3]) -> Result<Jet3, EvalError> {
        self.ast.eval_jet(&self.params, pt)
    }

    /// Error unless |F(pt)| is within the surface tolerance.
    pub fn require_on_surface(&self, pt: [f64; 3]) -> Result<(), LiftError> {
        let f = self.f_at(pt)?;
        if f.abs() > TOL_SURFACE * point_scale(pt) {
            return Err(LiftError::OffSurface(pt[0], pt[1], pt[2], f.abs()));
        }
        Ok(())
    }
}

/// Value of the lifted field at a surface point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiftedVector {
    pub dx: f64,
    pub dy: f64,
    pub dp: f64,
}

/// Lifted field (F_p, p F_p, -(F_x + p F_y)). The point must be on-surface.
pub fn lifted_field(ode: &ImplicitOde, pt: [f64; 3]) -> Result<LiftedVector, LiftError> {
    ode.require_on_surface(pt)?;
    let j = ode.jet_at(pt)?;
    let fp = j.dp();
    Ok(LiftedVector {
        dx: fp,
        dy: pt[2] * fp,
        dp: -(j.dx() + pt[2] * j.dy()),
    })
}

/// Which locus a residual is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Locus {
    /// {F = 0, F_p = 0}: points where the projection to (x, y) folds.
    Criminant,
    /// {F = 0, F_x + p F_y = 0}: vanishing of the dp component.
    Inflection,
}

#[derive(Clone, Copy, Debug)]
pub struct LocusResidual {
    pub which: Locus,
    /// |F| at the point.
    pub r1: f64,
    /// |F_p| or |F_x + p F_y| depending on the locus.
    pub r2: f64,
}

pub fn locus_residual(
    ode: &ImplicitOde,
    pt: [f64; 3],
    which: Locus,
) -> Result<LocusResidual, EvalError> {
    let j = ode.jet_at(pt)?;
    let r2 = match which {
        Locus::Criminant => j.dp(),
        Locus::Inflection => j.dx() + pt[2] * j.dy(),
    };
    Ok(LocusResidual { which, r1: j.value().abs(), r2: r2.abs() })
}

/// Warm-started view of the surface as a graph y = g(x, p).
///
/// Holds the last solved y as the Newton starting guess, so consecutive
/// solves along a trajectory stay in the same surface sheet.
pub struct Chart<'a> {
    ode: &'a ImplicitOde,
    last_y: f64,
}

impl<'a> Chart<'a> {
    pub fn new(ode: &'a ImplicitOde) -> Self {
        Chart { ode, last_y: ode.origin()[1] }
    }

    pub fn with_guess(ode: &'a ImplicitOde, y_guess: f64) -> Self {
        Chart { ode, last_y: y_guess }
    }

    /// Solve F(x, y, p) = 0 for y near the warm-start value.
    pub fn solve_y(&mut self, x: f64, p: f64) -> Result<f64, LiftError> {
        let mut y = self.last_y;
        let mut loose_ok: Option<f64> = None;
        for _ in 0..Y_SOLVE_MAX_ITERS {
            let j = self.ode.jet_at([x, y, p])?;
            let f = j.value();
            let fy = j.dy();
            let scale = point_scale([x, y, p]);
            if f.abs() <= Y_SOLVE_TARGET * scale {
                self.last_y = y;
                return Ok(y);
            }
            if f.abs() <= TOL_SURFACE * scale {
                loose_ok = Some(y);
            }
            if fy.abs() < CHART_BREAKDOWN_TOL {
                return Err(LiftError::ChartBreakdown { x, p, fy: fy.abs() });
            }
            let step = f / fy;
            y -= step;
            if !y.is_finite() {
                return Err(LiftError::NewtonDiverged { x, p });
            }
            if step.abs() <= f64::EPSILON * scale {
                // Roundoff floor: accept the stagnated iterate if on-surface.
                let f = self.ode.f_at([x, y, p])?;
                if f.abs() <= TOL_SURFACE * scale {
                    self.last_y = y;
                    return Ok(y);
                }
            }
        }
        if let Some(y) = loose_ok {
            self.last_y = y;
            return Ok(y);
        }
        Err(LiftError::NewtonDiverged { x, p })
    }

    /// Chart field (dx, dp) = (F_p, -(F_x + p F_y)) at (x, p), with y solved.
    pub fn field(&mut self, x: f64, p: f64) -> Result<[f64; 2], LiftError> {
        let y = self.solve_y(x, p)?;
        let j = self.ode.jet_at([x, y, p])?;
        Ok([j.dp(), -(j.dx() + p * j.dy())])
    }

    pub fn last_y(&self) -> f64 {
        self.last_y
    }
}

/// One-shot chart field evaluation, optionally warm-started.
pub fn chart_field(
    ode: &ImplicitOde,
    x: f64,
    p: f64,
    y_guess: Option<f64>,
) -> Result<[f64; 2], LiftError> {
    let mut chart = match y_guess {
        Some(y) => Chart::with_guess(ode, y),
        None => Chart::new(ode),
    };
    chart.field(x, p)
}

/// Linearization of the chart field at the equation's origin.
///
/// Writing the chart field as (u, v)(x, p) with y eliminated through the
/// surface graph, returns d(u, v)/d(x, p) at the origin. For an equation
/// normalized so that F_y = -1 at an improper singular point this is the
/// matrix [[b, a], [-c, 1 - b]] of the quadratic model.
pub fn chart_linearization(ode: &ImplicitOde) -> Result<[[f64; 2]; 2], LiftError> {
    let o = ode.origin();
    let j = ode.jet_at(o)?;
    let fy = j.dy();
    if fy.abs() < CHART_BREAKDOWN_TOL {
        return Err(LiftError::ChartBreakdown { x: o[0], p: o[2], fy: fy.abs() });
    }
    let p0 = o[2];
    let gx = -j.dx() / fy;
    let gp = -j.dp() / fy;
    let u_x = j.dxp() + j.dyp() * gx;
    let u_p = j.dpp() + j.dyp() * gp;
    let v_x = -(j.dxx() + j.dxy() * gx + p0 * (j.dxy() + j.dyy() * gx));
    let v_p = -(j.dxp() + j.dxy() * gp + fy + p0 * (j.dyp() + j.dyy() * gp));
    Ok([[u_x, u_p], [v_x, v_p]])
}

/// Drop the p coordinate of a chart trajectory, preserving sample order.
///
/// No compression of vertical segments is applied: consecutive samples with
/// equal (x, y) are retained so cusps stay visible in the projection.
pub fn project(traj: &Trajectory) -> Vec<[f64; 2]> {
    traj.samples.iter().map(|s| [s.x, s.y]).collect()
}
