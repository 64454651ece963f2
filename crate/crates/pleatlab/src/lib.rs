//! Analysis of scalar first-order implicit ODEs F(x, y, p) = 0 with p = dy/dx.
//!
//! The crate lifts an equation to a direction field on the surface {F = 0},
//! classifies its singular points, traces the distinguished curves near an
//! improper singular point (criminant, vertical- and horizontal-tangent
//! invariant curves), measures their semicubic asymptotics, and renders
//! phase portraits of the associated chart field.
//!
//! Modules:
//! - [`expr`]: expression parsing and third-order jet evaluation,
//! - [`lift`]: the lifted field, chart field, and locus residuals,
//! - [`classify`]: the singular-point taxonomy and local linear analysis,
//! - [`curves`]: curve tracing, fits, and the coordinate reduction,
//! - [`nflab`]: closed-form oracle families used for verification,
//! - [`integrate`]: the embedded Runge-Kutta stepper,
//! - [`portrait`]: seeding, bundle integration, and SVG rendering,
//! - [`cli`]: the command-line front end.

pub mod classify;
pub mod cli;
pub mod curves;
pub mod expr;
pub mod integrate;
pub mod lift;
pub mod nflab;
pub mod portrait;

pub use classify::SingularClass;
pub use expr::{ExprAst, Jet3, ParseError};
pub use lift::ImplicitOde;
pub use curves::Trajectory;
