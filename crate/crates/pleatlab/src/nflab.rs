//! Closed-form reference families used to validate the numerical routines.
//!
//! Three families with known exact curves:
//!
//! * the cubic pleated-improper family F = b·xp − p³/3 − y, whose criminant,
//!   vertical-tangent invariant curve and horizontal-tangent invariant curve
//!   all have closed forms;
//! * the one-parameter well-folded family (p + αx)² = y, whose quadratic
//!   model expands by hand;
//! * the planar node normal forms ξ' = ξ, η' = βη and ξ' = ξ, η' = nη + εξⁿ
//!   with their integral-curve families η = cξ^β and η = ξⁿ(c + ε ln|ξ|).
//!
//! The node forms live in their own (ξ, η) coordinates and are exposed as
//! standalone planar fields, not as conjugacies of user equations.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::classify::{Stability, MARGIN};
use crate::lift::{ImplicitOde, OdeBuildError};

/// Sampling floor for ln|ξ| in the resonant curve family.
pub const LN_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("unknown oracle family `{0}` (expect cubic | wellfolded | node_nonres | node_res)")]
    UnknownFamily(String),
    #[error("malformed oracle id `{0}`: expected kind:key=value[,key=value]")]
    Malformed(String),
    #[error("oracle parameter `{name}`: {message}")]
    BadParam { name: String, message: String },
    #[error(transparent)]
    Build(#[from] OdeBuildError),
}

fn bad(name: &str, message: impl Into<String>) -> OracleError {
    OracleError::BadParam {
        name: name.to_string(),
        message: message.into(),
    }
}

/// Identifier of a reference family, in the CLI syntax `kind:key=value`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OracleId {
    Cubic { b: f64 },
    WellFolded { alpha: f64 },
    NodeNonRes { beta: f64 },
    NodeRes { n: u32, eps: f64 },
}

impl OracleId {
    /// Parse `cubic:b=2`, `wellfolded:alpha=-1`, `node_nonres:beta=4` (or
    /// `node_nonres:b=0.8`, converting through [`beta_for_b`]), and
    /// `node_res:n=3,eps=1`.
    pub fn parse(text: &str) -> Result<OracleId, OracleError> {
        let (kind, rest) = text
            .split_once(':')
            .ok_or_else(|| OracleError::Malformed(text.to_string()))?;
        let mut kv = BTreeMap::new();
        for piece in rest.split(',') {
            let (k, v) = piece
                .split_once('=')
                .ok_or_else(|| OracleError::Malformed(text.to_string()))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |kv: &BTreeMap<String, String>, key: &str| -> Result<f64, OracleError> {
            let raw = kv
                .get(key)
                .ok_or_else(|| bad(key, "missing"))?;
            raw.parse::<f64>()
                .map_err(|_| bad(key, format!("not a number: `{raw}`")))
        };
        match kind.trim() {
            "cubic" => {
                let b = num(&kv, "b")?;
                CubicFamily::new(b)?;
                Ok(OracleId::Cubic { b })
            }
            "wellfolded" => {
                let alpha = num(&kv, "alpha")?;
                if !alpha.is_finite() {
                    return Err(bad("alpha", "must be finite"));
                }
                Ok(OracleId::WellFolded { alpha })
            }
            "node_nonres" => {
                let beta = if kv.contains_key("beta") {
                    num(&kv, "beta")?
                } else {
                    let b = num(&kv, "b")?;
                    if !(0.0 < b && b < 1.0) {
                        return Err(bad("b", "node requires 0 < b < 1"));
                    }
                    beta_for_b(b)
                };
                NodeNonRes::new(beta)?;
                Ok(OracleId::NodeNonRes { beta })
            }
            "node_res" => {
                let nf = num(&kv, "n")?;
                if nf.fract() != 0.0 || !(2.0..=64.0).contains(&nf) {
                    return Err(bad("n", "must be an integer in 2..=64"));
                }
                let eps = num(&kv, "eps")?;
                NodeRes::new(nf as u32, eps)?;
                Ok(OracleId::NodeRes { n: nf as u32, eps })
            }
            other => Err(OracleError::UnknownFamily(other.to_string())),
        }
    }

    pub fn family(&self) -> Result<OracleFamily, OracleError> {
        Ok(match *self {
            OracleId::Cubic { b } => OracleFamily::Cubic(CubicFamily::new(b)?),
            OracleId::WellFolded { alpha } => {
                OracleFamily::WellFolded(WellFoldedFamily::new(alpha)?)
            }
            OracleId::NodeNonRes { beta } => OracleFamily::NodeNonRes(NodeNonRes::new(beta)?),
            OracleId::NodeRes { n, eps } => OracleFamily::NodeRes(NodeRes::new(n, eps)?),
        })
    }
}

#[derive(Clone, Debug)]
pub enum OracleFamily {
    Cubic(CubicFamily),
    WellFolded(WellFoldedFamily),
    NodeNonRes(NodeNonRes),
    NodeRes(NodeRes),
}

/// Ratio of node eigenvalues b and 1-b, the exponent of the non-resonant
/// integral-curve family: beta = max{b/(1-b), (1-b)/b}.
pub fn beta_for_b(b: f64) -> f64 {
    (b / (1.0 - b)).max((1.0 - b) / b)
}

/// The cubic pleated-improper family F = b·xp - p³/3 - y.
///
/// Exact curves: criminant x = p²/b, y = (2/3)p³; vertical-tangent invariant
/// curve x = p²/(3b-2), y = (2/(3(3b-2)))p³; horizontal-tangent invariant
/// curve p = 0, y = 0. Chart field ẋ = bx - p², ṗ = (1-b)p.
#[derive(Clone, Copy, Debug)]
pub struct CubicFamily {
    pub b: f64,
}

impl CubicFamily {
    pub fn new(b: f64) -> Result<Self, OracleError> {
        if !b.is_finite() {
            return Err(bad("b", "must be finite"));
        }
        if let Some(e) = crate::classify::nearest_excluded(b) {
            return Err(bad("b", format!("within margin of the excluded value {e}")));
        }
        Ok(CubicFamily { b })
    }

    pub fn ode(&self) -> ImplicitOde {
        let params = BTreeMap::from([("b".to_string(), self.b)]);
        ImplicitOde::from_source("b*x*p - p^3/3 - y", params, [0.0; 3])
            .expect("cubic family source is well-formed")
    }

    /// The family with 3-flat phi(p) and 1-flat psi(x, p) perturbation terms:
    /// F = b·xp - p³/3 + phi + x·psi - y.
    pub fn perturbed_ode(&self, phi: &str, psi: &str) -> Result<ImplicitOde, OracleError> {
        let src = format!("b*x*p - p^3/3 + ({phi}) + x*({psi}) - y");
        let params = BTreeMap::from([("b".to_string(), self.b)]);
        Ok(ImplicitOde::from_source(&src, params, [0.0; 3])?)
    }

    /// Quadratic coefficient of the vertical-tangent invariant curve.
    pub fn v0(&self) -> f64 {
        1.0 / (3.0 * self.b - 2.0)
    }

    /// Criminant point at parameter p.
    pub fn criminant(&self, p: f64) -> [f64; 3] {
        [p * p / self.b, 2.0 / 3.0 * p * p * p, p]
    }

    /// Vertical-tangent invariant curve point at parameter p.
    pub fn c_curve(&self, p: f64) -> [f64; 3] {
        let v0 = self.v0();
        [v0 * p * p, 2.0 / (3.0 * (3.0 * self.b - 2.0)) * p * p * p, p]
    }

    /// Horizontal-tangent invariant curve point at parameter x.
    pub fn c_prime(&self, x: f64) -> [f64; 3] {
        [x, 0.0, 0.0]
    }

    /// Chart field of the unperturbed family.
    pub fn chart_field(&self, x: f64, p: f64) -> [f64; 2] {
        [self.b * x - p * p, (1.0 - self.b) * p]
    }

    /// Semicubic invariant of the projected criminant: y² = mK·x³.
    pub fn m_k(&self) -> f64 {
        4.0 / 9.0 * self.b.powi(3)
    }

    /// Semicubic invariant of the projected vertical-tangent curve.
    pub fn m_c(&self) -> f64 {
        4.0 / 9.0 * (3.0 * self.b - 2.0)
    }
}

/// Davydov's well-folded normal form (p + αx)² = y.
///
/// Quadratic model by expansion: a = 2, b = 2α, c = 2α², so det(Λ) = 2α and
/// the point is a saddle for α < 0, a node for 0 < α ≤ 1/8, a focus for
/// α > 1/8.
#[derive(Clone, Copy, Debug)]
pub struct WellFoldedFamily {
    pub alpha: f64,
}

impl WellFoldedFamily {
    pub fn new(alpha: f64) -> Result<Self, OracleError> {
        if !alpha.is_finite() {
            return Err(bad("alpha", "must be finite"));
        }
        Ok(WellFoldedFamily { alpha })
    }

    pub fn ode(&self) -> ImplicitOde {
        let params = BTreeMap::from([("alpha".to_string(), self.alpha)]);
        ImplicitOde::from_source("(p + alpha*x)^2 - y", params, [0.0; 3])
            .expect("well-folded family source is well-formed")
    }

    /// (a, b, c) of the quadratic model.
    pub fn coeffs(&self) -> (f64, f64, f64) {
        (2.0, 2.0 * self.alpha, 2.0 * self.alpha * self.alpha)
    }

    pub fn det(&self) -> f64 {
        2.0 * self.alpha
    }

    /// Expected equilibrium type; `None` when the determinant is inside the
    /// degeneracy margin.
    pub fn expected_stability(&self) -> Option<Stability> {
        let det = self.det();
        if det.abs() <= MARGIN {
            None
        } else if det < 0.0 {
            Some(Stability::Saddle)
        } else if det <= 0.25 {
            Some(Stability::Node)
        } else {
            Some(Stability::Focus)
        }
    }
}

/// Non-resonant node normal form ξ' = ξ, η' = βη with β > 1.
/// Integral curves: η = cξ^β (ξ > 0 branch) and the axis ξ = 0.
#[derive(Clone, Copy, Debug)]
pub struct NodeNonRes {
    pub beta: f64,
}

impl NodeNonRes {
    pub fn new(beta: f64) -> Result<Self, OracleError> {
        if !beta.is_finite() || beta <= 1.0 {
            return Err(bad("beta", "requires beta > 1"));
        }
        Ok(NodeNonRes { beta })
    }

    pub fn rhs(&self, s: [f64; 2]) -> [f64; 2] {
        [s[0], self.beta * s[1]]
    }

    /// η of the integral curve with constant c, for ξ > 0.
    pub fn curve_eta(&self, c: f64, xi: f64) -> f64 {
        c * xi.powf(self.beta)
    }

    /// dη/dξ along the curve, from the field: βη/ξ.
    pub fn slope(&self, xi: f64, eta: f64) -> f64 {
        self.beta * eta / xi
    }
}

/// Resonant node normal form ξ' = ξ, η' = nη + εξⁿ with n ≥ 2, ε ∈ {0, 1}.
/// Integral curves: η = ξⁿ(c + ε ln|ξ|) and the axis ξ = 0.
#[derive(Clone, Copy, Debug)]
pub struct NodeRes {
    pub n: u32,
    pub eps: f64,
}

impl NodeRes {
    pub fn new(n: u32, eps: f64) -> Result<Self, OracleError> {
        if n < 2 {
            return Err(bad("n", "requires n >= 2"));
        }
        if eps != 0.0 && eps != 1.0 {
            return Err(bad("eps", "must be 0 or 1"));
        }
        Ok(NodeRes { n, eps })
    }

    pub fn rhs(&self, s: [f64; 2]) -> [f64; 2] {
        [s[0], self.n as f64 * s[1] + self.eps * s[0].powi(self.n as i32)]
    }

    /// η of the integral curve with constant c; ln|ξ| floored at
    /// [`LN_FLOOR`].
    pub fn curve_eta(&self, c: f64, xi: f64) -> f64 {
        let lx = xi.abs().max(LN_FLOOR).ln();
        xi.powi(self.n as i32) * (c + self.eps * lx)
    }

    /// dη/dξ along the curve, from the field: (nη + εξⁿ)/ξ.
    pub fn slope(&self, xi: f64, eta: f64) -> f64 {
        (self.n as f64 * eta + self.eps * xi.powi(self.n as i32)) / xi
    }
}

/// Exactly sampled integral curve of a node family over a ξ interval.
/// Errors if a sample overflows.
pub fn oracle_integral_curve(
    family: &OracleFamily,
    c: f64,
    xi_range: (f64, f64),
    count: usize,
) -> Result<Vec<[f64; 2]>, OracleError> {
    let (lo, hi) = xi_range;
    let n = count.max(2);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let xi = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let eta = match family {
            OracleFamily::NodeNonRes(f) => f.curve_eta(c, xi),
            OracleFamily::NodeRes(f) => f.curve_eta(c, xi),
            _ => return Err(bad("family", "integral-curve sampling is for node forms")),
        };
        if !eta.is_finite() {
            return Err(bad("c", format!("curve overflows at xi = {xi}")));
        }
        out.push([xi, eta]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{integrate, IntegOptions, StopReason};
    use crate::lift::{chart_field, locus_residual, Locus};
    use approx::assert_relative_eq;

    const B_GRID: [f64; 6] = [-3.0, -1.0, 0.25, 0.55, 0.8, 2.0];

    #[test]
    fn oracle_id_round_trips() {
        assert_eq!(
            OracleId::parse("cubic:b=2").unwrap(),
            OracleId::Cubic { b: 2.0 }
        );
        assert_eq!(
            OracleId::parse("wellfolded:alpha=-1").unwrap(),
            OracleId::WellFolded { alpha: -1.0 }
        );
        assert_eq!(
            OracleId::parse("node_nonres:beta=4").unwrap(),
            OracleId::NodeNonRes { beta: 4.0 }
        );
        // b-form converts through beta_for_b.
        match OracleId::parse("node_nonres:b=0.8").unwrap() {
            OracleId::NodeNonRes { beta } => assert_relative_eq!(beta, 4.0, max_relative = 1e-12),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            OracleId::parse("node_res:n=3,eps=1").unwrap(),
            OracleId::NodeRes { n: 3, eps: 1.0 }
        );
        for bad_id in [
            "cubic",
            "cubic:b=abc",
            "cubic:b=0.5",
            "node_res:n=1,eps=0",
            "node_res:n=3,eps=0.5",
            "node_nonres:beta=0.9",
            "node_nonres:b=1.2",
            "wat:x=1",
            "wellfolded:alpha",
        ] {
            assert!(OracleId::parse(bad_id).is_err(), "{bad_id}");
        }
    }

    #[test]
    fn beta_examples() {
        assert_relative_eq!(beta_for_b(0.8), 4.0, max_relative = 1e-12);
        assert_relative_eq!(beta_for_b(0.25), 3.0, max_relative = 1e-12);
        assert_relative_eq!(beta_for_b(0.55), 0.55 / 0.45, max_relative = 1e-12);
    }

    // Closed forms substituted into their defining equations: residuals at
    // rounding level.
    #[test]
    fn cubic_closed_forms_satisfy_the_equation() {
        for &b in &B_GRID {
            let fam = CubicFamily::new(b).unwrap();
            let ode = fam.ode();
            for i in 0..61 {
                let p = -0.3 + 0.6 * i as f64 / 60.0;
                // Criminant: on the surface and on {F_p = 0}.
                let k = fam.criminant(p);
                let r = locus_residual(&ode, k, Locus::Criminant).unwrap();
                assert!(r.r1 < 1e-10 && r.r2 < 1e-10, "b={b} p={p} {r:?}");
                // Vertical-tangent curve: on the surface.
                let cpt = fam.c_curve(p);
                assert!(ode.f_at(cpt).unwrap().abs() < 1e-12, "b={b} p={p}");
            }
        }
    }

    // The curve x = v0 p^2 is invariant for the chart field: the field at
    // curve points is parallel to the curve tangent (dx/dp, 1).
    #[test]
    fn cubic_c_curve_is_invariant_for_both_field_routes() {
        for &b in &B_GRID {
            let fam = CubicFamily::new(b).unwrap();
            let ode = fam.ode();
            let v0 = fam.v0();
            for i in 0..41 {
                let p = -0.2 + 0.4 * i as f64 / 40.0;
                if p.abs() < 1e-3 {
                    continue;
                }
                let [x, y, _] = fam.c_curve(p);
                // Closed-form field.
                let [dx, dp] = fam.chart_field(x, p);
                let cross = dx - dp * 2.0 * v0 * p;
                assert!(cross.abs() < 1e-12, "closed form: b={b} p={p} {cross:e}");
                // Chart route (solves y by Newton internally).
                let v = chart_field(&ode, x, p, Some(y)).unwrap();
                let cross = v[0] - v[1] * 2.0 * v0 * p;
                assert!(cross.abs() < 1e-10, "chart: b={b} p={p} {cross:e}");
            }
        }
    }

    #[test]
    fn cubic_c_prime_axis_is_invariant() {
        for &b in &B_GRID {
            let fam = CubicFamily::new(b).unwrap();
            let ode = fam.ode();
            for &x in &[-0.2, -0.05, 0.05, 0.2] {
                assert_eq!(fam.chart_field(x, 0.0)[1], 0.0);
                let v = chart_field(&ode, x, 0.0, Some(0.0)).unwrap();
                assert!(v[1].abs() < 1e-12, "b={b} x={x}");
            }
        }
    }

    #[test]
    fn wellfolded_coeffs_agree_with_classification() {
        for &alpha in &[-1.0, 1.0 / 16.0, 0.25] {
            let fam = WellFoldedFamily::new(alpha).unwrap();
            let d = crate::classify::folded_improper_analysis(&fam.ode()).unwrap();
            let (a, b, c) = fam.coeffs();
            assert_relative_eq!(d.coeffs.a, a, max_relative = 1e-12);
            assert_relative_eq!(d.coeffs.b, b, max_relative = 1e-12);
            assert_relative_eq!(d.coeffs.c, c, max_relative = 1e-12);
            assert_relative_eq!(d.det, fam.det(), max_relative = 1e-12);
            assert_eq!(d.stability, fam.expected_stability().unwrap());
        }
    }

    // Slope identities: each closed-form family solves its ODE.
    #[test]
    fn node_curves_solve_their_fields() {
        let nonres = NodeNonRes::new(4.0).unwrap();
        let res = NodeRes::new(2, 1.0).unwrap();
        for i in 1..=50 {
            let xi = i as f64 / 50.0;
            for &c in &[-2.0, 0.0, 1.0, 5.0] {
                let eta = nonres.curve_eta(c, xi);
                let analytic = 4.0 * c * xi.powf(3.0);
                assert_relative_eq!(
                    nonres.slope(xi, eta),
                    analytic,
                    max_relative = 1e-12,
                    epsilon = 1e-300
                );
                let eta = res.curve_eta(c, xi);
                // d/dxi [xi^2 (c + ln xi)] = 2 xi (c + ln xi) + xi.
                let analytic = 2.0 * xi * (c + xi.ln()) + xi;
                assert_relative_eq!(res.slope(xi, eta), analytic, max_relative = 1e-11);
            }
        }
    }

    // Integrating dη/dξ = slope from ξ = 1 down to 1e-3 reproduces the
    // closed forms. Inward integration contracts errors.
    fn reproduce_inward<F: Fn(f64, f64) -> f64>(
        slope: F,
        eta_at_1: f64,
        closed: impl Fn(f64) -> f64,
        tol: f64,
    ) {
        let mut rhs = |xi: f64, y: &[f64; 1]| -> Result<[f64; 1], std::convert::Infallible> {
            Ok([slope(xi, y[0])])
        };
        let opt = IntegOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 0.05,
            ..IntegOptions::default()
        };
        let run = integrate(
            &mut rhs,
            1.0,
            [eta_at_1],
            -1.0,
            1.0 - 1e-3,
            &opt,
            &mut |_, _| None,
        )
        .unwrap();
        assert_eq!(run.stop, StopReason::TimeReached);
        let mut worst = 0.0f64;
        for (t, y) in run.ts.iter().zip(&run.ys) {
            worst = worst.max((y[0] - closed(*t)).abs());
        }
        assert!(worst < tol, "worst deviation {worst:e} >= {tol:e}");
        assert!(*run.ts.last().unwrap() <= 1e-3 + 1e-12);
    }

    #[test]
    fn integrator_reproduces_monomial_node_curve() {
        // n = 2, eps = 0, c = 1: eta = xi^2.
        let f = NodeRes::new(2, 0.0).unwrap();
        reproduce_inward(
            |xi, eta| f.slope(xi, eta),
            1.0,
            |xi| xi * xi,
            1e-9,
        );
    }

    #[test]
    fn integrator_reproduces_resonant_log_curve() {
        // n = 2, eps = 1, c = 0: eta = xi^2 ln xi.
        let f = NodeRes::new(2, 1.0).unwrap();
        reproduce_inward(
            |xi, eta| f.slope(xi, eta),
            0.0,
            |xi| xi * xi * xi.ln(),
            1e-8,
        );
    }

    #[test]
    fn integrator_reproduces_power_curve() {
        // beta = 4, c = 5: eta = 5 xi^4.
        let f = NodeNonRes::new(4.0).unwrap();
        reproduce_inward(
            |xi, eta| f.slope(xi, eta),
            5.0,
            |xi| 5.0 * xi.powi(4),
            1e-8,
        );
    }

    #[test]
    fn sampled_curves_are_exact_and_guarded() {
        let fam = OracleFamily::NodeRes(NodeRes::new(3, 1.0).unwrap());
        let pts = oracle_integral_curve(&fam, 1.0, (1e-3, 1.0), 101).unwrap();
        assert_eq!(pts.len(), 101);
        for [xi, eta] in &pts {
            assert_relative_eq!(
                *eta,
                xi.powi(3) * (1.0 + xi.ln()),
                max_relative = 1e-12,
                epsilon = 1e-300
            );
        }
        let cubic = OracleFamily::Cubic(CubicFamily::new(2.0).unwrap());
        assert!(oracle_integral_curve(&cubic, 1.0, (0.0, 1.0), 10).is_err());
    }
}
