//! Singular-point taxonomy for implicit equations F(x, y, p) = 0.
//!
//! A point on the surface {F = 0} is singular for the lifted field when
//! F_p vanishes there. This module sorts singular points into folded /
//! pleated (second vs. third order contact of the projection) crossed with
//! proper / improper (whether the lifted field is transverse to the
//! criminant), and computes the finer data attached to the improper cases:
//! the quadratic chart model, eigendata, resonances, the six-way case split
//! of the pleated family, and the reported smoothness of its invariant
//! curves.
//!
//! Every strict inequality becomes a margin test `|.| > MARGIN` on a jet
//! normalized by the largest of the tested partials, so the outcome is
//! invariant under rescaling F. Values inside the margin are treated as
//! exact zeroes; configurations that fit no case are reported as
//! `Degenerate` with the violated condition spelled out, never guessed.

use std::cmp::Ordering;

use thiserror::Error;

use crate::expr::{EvalError, Jet3};
use crate::lift::{ImplicitOde, LiftError};

/// Vanishing margin for normalized jet quantities.
pub const MARGIN: f64 = 1e-6;
/// Resonance scan bound on k1 + k2.
pub const RESONANCE_MAX_ORDER: u32 = 12;
/// Relative tolerance for the resonance equality test.
pub const RESONANCE_REL_TOL: f64 = 1e-9;
/// Values of b at which the pleated-improper analysis breaks down.
pub const EXCLUDED_B: [f64; 5] = [-2.0, 0.0, 0.5, 2.0 / 3.0, 1.0];

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Lift(#[from] LiftError),
    /// The configuration violates a genericity condition; the message names it.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
}

/// Normalized magnitudes of the partials entering the margin tests.
///
/// All fields except `scale` are |partial| / `scale`, taken from the sheared
/// jet (see [`shear_to_origin`]), so `improper` is |F_x + p0 F_y| / scale and
/// `f_xp` is |F_xp + p0 F_yp| / scale. At a base point with p0 = 0 these
/// coincide with the raw partials of F.
#[derive(Clone, Copy, Debug)]
pub struct Margins {
    /// max over the six raw magnitudes; zero only for a 3-flat F.
    pub scale: f64,
    pub f_p: f64,
    pub f_y: f64,
    pub f_pp: f64,
    pub f_ppp: f64,
    pub f_xp: f64,
    pub improper: f64,
}

impl Margins {
    /// Margins of a sheared jet. `None` when every tested partial vanishes.
    pub fn from_sheared_jet(g: &Jet3) -> Option<Margins> {
        let vals = [
            g.dx().abs(),
            g.dy().abs(),
            g.dp().abs(),
            g.dpp().abs(),
            g.dxp().abs(),
            g.dppp().abs(),
        ];
        let scale = vals.iter().fold(0.0f64, |m, v| m.max(*v));
        if scale < f64::MIN_POSITIVE {
            return None;
        }
        Some(Margins {
            scale,
            f_p: vals[2] / scale,
            f_y: vals[1] / scale,
            f_pp: vals[3] / scale,
            f_ppp: vals[5] / scale,
            f_xp: vals[4] / scale,
            improper: vals[0] / scale,
        })
    }
}

/// Jet of the offset coordinate `which` (zero constant term).
fn offset(which: usize, center: [f64; 3]) -> Jet3 {
    Jet3::variable(which, center).sub(&Jet3::constant(center[which], center))
}

/// Re-express the jet in the 1-graph chart through its base point:
/// substitute (x, y, p) = (x0 + u, y0 + p0 u + v, p0 + w).
///
/// The shear makes the improperness test plain (`g_x = F_x + p0 F_y`), turns
/// the mixed coefficient into the chart-invariant one
/// (`g_xp = F_xp + p0 F_yp`), and leaves g_y, g_p, g_pp, g_ppp equal to the
/// corresponding partials of F. At p0 = 0 it is the identity.
pub fn shear_to_origin(jet: &Jet3) -> Jet3 {
    let c = jet.center;
    let xo = offset(0, c);
    let yo = offset(1, c);
    let po = offset(2, c);
    jet.substitute(&xo, &yo.add(&xo.scale(c[2])), &po)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Eigenvalues {
    Real { l1: f64, l2: f64 },
    Complex { re: f64, im: f64 },
}

/// Linear part of the chart field at the singular point.
#[derive(Clone, Copy, Debug)]
pub struct LinearPart {
    pub matrix: [[f64; 2]; 2],
    pub eigenvalues: Eigenvalues,
    /// Unit eigenvectors in (x, p), ordered like `Real { l1, l2 }`;
    /// present only for real distinct eigenvalues.
    pub directions: Option<[[f64; 2]; 2]>,
}

impl LinearPart {
    pub fn from_matrix(m: [[f64; 2]; 2]) -> LinearPart {
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let disc = tr * tr - 4.0 * det;
        if disc < 0.0 {
            return LinearPart {
                matrix: m,
                eigenvalues: Eigenvalues::Complex {
                    re: tr / 2.0,
                    im: (-disc).sqrt() / 2.0,
                },
                directions: None,
            };
        }
        let sq = disc.sqrt();
        let l1 = (tr + sq) / 2.0;
        let l2 = (tr - sq) / 2.0;
        let directions = if sq > 0.0 {
            Some([eigvec(m, l1), eigvec(m, l2)])
        } else {
            None
        };
        LinearPart {
            matrix: m,
            eigenvalues: Eigenvalues::Real { l1, l2 },
            directions,
        }
    }

    pub fn trace(&self) -> f64 {
        self.matrix[0][0] + self.matrix[1][1]
    }

    pub fn det(&self) -> f64 {
        self.matrix[0][0] * self.matrix[1][1] - self.matrix[0][1] * self.matrix[1][0]
    }

    /// Unit eigenvector whose eigenvalue is nearest `lambda`.
    pub fn direction_for(&self, lambda: f64) -> Option<[f64; 2]> {
        let dirs = self.directions?;
        match self.eigenvalues {
            Eigenvalues::Real { l1, l2 } => {
                if (lambda - l1).abs() <= (lambda - l2).abs() {
                    Some(dirs[0])
                } else {
                    Some(dirs[1])
                }
            }
            Eigenvalues::Complex { .. } => None,
        }
    }
}

/// Unit eigenvector of a 2x2 matrix for eigenvalue `l` (assumed simple):
/// perpendicular to the better-conditioned row of M - l*I.
fn eigvec(m: [[f64; 2]; 2], l: f64) -> [f64; 2] {
    let r1 = [m[0][0] - l, m[0][1]];
    let r2 = [m[1][0], m[1][1] - l];
    let n1 = r1[0] * r1[0] + r1[1] * r1[1];
    let n2 = r2[0] * r2[0] + r2[1] * r2[1];
    let r = if n1 >= n2 { r1 } else { r2 };
    let mut v = [r[1], -r[0]];
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n < f64::MIN_POSITIVE {
        return [1.0, 0.0];
    }
    v = [v[0] / n, v[1] / n];
    // Canonical sign: first nonzero component positive.
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        v = [-v[0], -v[1]];
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    Saddle,
    Node,
    Focus,
}

impl Stability {
    pub fn as_str(self) -> &'static str {
        match self {
            Stability::Saddle => "saddle",
            Stability::Node => "node",
            Stability::Focus => "focus",
        }
    }
}

/// A resonance relation lambda_i = k1*lambda_1 + k2*lambda_2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawResonance {
    /// Which eigenvalue (1 or 2) equals the combination.
    pub i: u8,
    pub k1: u32,
    pub k2: u32,
}

/// The two resonant shapes a node eigenvalue ratio can take when the
/// eigenvalues sum to 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResonanceForm {
    /// b = 1/(n+1): the complementary eigenvalue is n*b.
    OneOverNPlusOne,
    /// b = n/(n+1): b is n times the complementary eigenvalue.
    NOverNPlusOne,
}

impl ResonanceForm {
    pub fn as_str(self) -> &'static str {
        match self {
            ResonanceForm::OneOverNPlusOne => "1/(n+1)",
            ResonanceForm::NOverNPlusOne => "n/(n+1)",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeResonance {
    pub form: ResonanceForm,
    pub n: u32,
    pub raw: RawResonance,
}

/// Smallest-order resonance relation between two real eigenvalues, if any
/// exists with k1 + k2 <= [`RESONANCE_MAX_ORDER`]. Ties are broken by
/// ascending k1, then by eigenvalue index.
pub fn resonance_of(l1: f64, l2: f64) -> Option<RawResonance> {
    let ls = [l1, l2];
    for s in 2..=RESONANCE_MAX_ORDER {
        for k1 in 0..=s {
            let k2 = s - k1;
            let combo = k1 as f64 * l1 + k2 as f64 * l2;
            for (idx, &li) in ls.iter().enumerate() {
                let scale = li.abs().max(combo.abs()).max(f64::MIN_POSITIVE);
                if (li - combo).abs() <= RESONANCE_REL_TOL * scale {
                    return Some(RawResonance {
                        i: idx as u8 + 1,
                        k1,
                        k2,
                    });
                }
            }
        }
    }
    None
}

/// Resonance of the eigenvalue pair (b, 1-b) of a node (0 < b < 1), named by
/// the shape of b. For such a pair the only possible relations are
/// 1-b = n*b (so b = 1/(n+1)) and b = n*(1-b) (so b = n/(n+1)); mixed
/// combinations would force b + (1-b) = 0.
pub fn node_resonance(b: f64) -> Option<NodeResonance> {
    if !(0.0 < b && b < 1.0) {
        return None;
    }
    let raw = resonance_of(b, 1.0 - b)?;
    match raw {
        RawResonance { i: 2, k1, k2: 0 } => Some(NodeResonance {
            form: ResonanceForm::OneOverNPlusOne,
            n: k1,
            raw,
        }),
        RawResonance { i: 1, k1: 0, k2 } => Some(NodeResonance {
            form: ResonanceForm::NOverNPlusOne,
            n: k2,
            raw,
        }),
        _ => None,
    }
}

/// Coefficients of the chart-quadratic model of an improper point,
/// (1/2)(a p^2 + 2b xp + c x^2) + (2-flat) = y, read off after normalizing
/// the y-coefficient of F to -1.
#[derive(Clone, Copy, Debug)]
pub struct QuadCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Analysis attached to a folded improper point.
#[derive(Clone, Debug)]
pub struct FoldedImproperData {
    pub coeffs: QuadCoeffs,
    pub linear: LinearPart,
    /// det of the linear part; equals b(1-b) + ac.
    pub det: f64,
    pub stability: Stability,
    /// Nonzero eigenvalues of distinct modulus whose eigendirections are
    /// transverse to the criminant and non-vertical, all with margin
    /// [`MARGIN`]. A focus has no real spectrum for the direction conditions
    /// to constrain, so it always qualifies.
    pub well_folded: bool,
    /// Node-shaped resonance of the eigenvalue pair (reported with the
    /// smaller eigenvalue in the role of b), present only for nodes.
    pub resonance: Option<NodeResonance>,
    /// Any resonance relation between the eigenvalues, saddles included.
    /// Its absence implies the linearizability hypothesis of the smooth
    /// normal-form theorem.
    pub any_resonance: Option<RawResonance>,
}

/// Coefficients of the normalizing change for a pleated improper point.
#[derive(Clone, Copy, Debug)]
pub struct NormalFormCoeffs {
    /// Mixed coefficient b = F_xp / (-F_y), invariant under the whole chain.
    pub b: f64,
    /// x-rescaling x -> sigma*x (with p -> p/sigma) making f_ppp = -2.
    pub sigma: f64,
    /// Shift y = Y + k x^2 (with p = P + 2k x) killing the x^2 term;
    /// k = -c / (2(2b-1)) for the post-rescaling c.
    pub x2_shift: f64,
}

/// The six-way split of pleated improper points by the value of b.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PleatedCase {
    S1,
    S2,
    N1,
    N2,
    N3,
    S3,
}

impl PleatedCase {
    pub fn as_str(self) -> &'static str {
        match self {
            PleatedCase::S1 => "S1",
            PleatedCase::S2 => "S2",
            PleatedCase::N1 => "N1",
            PleatedCase::N2 => "N2",
            PleatedCase::N3 => "N3",
            PleatedCase::S3 => "S3",
        }
    }
}

/// Distinguishing properties of a pleated case: the lifted-field type, the
/// signs of 1/b and 1/(3b-2) (which side of the cusp each semicubic branch
/// opens to), and the magnitude comparisons |1/b| vs |1/(3b-2)| and |b^3| vs
/// |3b-2|. Comparisons that do not distinguish anything within a case are
/// `None` in the expected record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CaseProperties {
    pub field_type: Stability,
    /// (sign of 1/b, sign of 1/(3b-2)), each +1 or -1.
    pub sign_pair: (i8, i8),
    /// |1/b| vs |1/(3b-2)|.
    pub inv_magnitudes: Option<Ordering>,
    /// |b^3| vs |3b-2|.
    pub cubic_magnitudes: Option<Ordering>,
}

/// The frozen expected-property record for each case.
pub fn expected_properties(case: PleatedCase) -> CaseProperties {
    use Ordering::{Greater, Less};
    use Stability::{Node, Saddle};
    match case {
        PleatedCase::S1 => CaseProperties {
            field_type: Saddle,
            sign_pair: (-1, -1),
            inv_magnitudes: Some(Greater),
            cubic_magnitudes: Some(Greater),
        },
        PleatedCase::S2 => CaseProperties {
            field_type: Saddle,
            sign_pair: (-1, -1),
            inv_magnitudes: Some(Greater),
            cubic_magnitudes: Some(Less),
        },
        PleatedCase::N1 => CaseProperties {
            field_type: Node,
            sign_pair: (1, -1),
            inv_magnitudes: None,
            cubic_magnitudes: None,
        },
        PleatedCase::N2 => CaseProperties {
            field_type: Node,
            sign_pair: (1, -1),
            inv_magnitudes: None,
            cubic_magnitudes: None,
        },
        PleatedCase::N3 => CaseProperties {
            field_type: Node,
            sign_pair: (1, 1),
            inv_magnitudes: Some(Less),
            cubic_magnitudes: Some(Greater),
        },
        PleatedCase::S3 => CaseProperties {
            field_type: Saddle,
            sign_pair: (1, 1),
            inv_magnitudes: Some(Greater),
            cubic_magnitudes: Some(Greater),
        },
    }
}

/// Properties computed directly from b (no blanks; for checking against the
/// expected record of the case).
pub fn observed_properties(b: f64) -> CaseProperties {
    let q = 3.0 * b - 2.0;
    let field_type = if b * (1.0 - b) < 0.0 {
        Stability::Saddle
    } else {
        Stability::Node
    };
    let sgn = |v: f64| if v < 0.0 { -1 } else { 1 };
    let cmp = |lhs: f64, rhs: f64| {
        if lhs > rhs {
            Ordering::Greater
        } else if lhs < rhs {
            Ordering::Less
        } else {
            Ordering::Equal
        }
    };
    CaseProperties {
        field_type,
        sign_pair: (sgn(1.0 / b), sgn(1.0 / q)),
        inv_magnitudes: Some(cmp((1.0 / b).abs(), (1.0 / q).abs())),
        cubic_magnitudes: Some(cmp((b * b * b).abs(), q.abs())),
    }
}

/// True when `observed` agrees with `expected` on every cell the expected
/// record pins down.
pub fn properties_consistent(expected: &CaseProperties, observed: &CaseProperties) -> bool {
    expected.field_type == observed.field_type
        && expected.sign_pair == observed.sign_pair
        && expected
            .inv_magnitudes
            .map_or(true, |o| observed.inv_magnitudes == Some(o))
        && expected
            .cubic_magnitudes
            .map_or(true, |o| observed.cubic_magnitudes == Some(o))
}

/// The excluded value within [`MARGIN`] of `b`, if any.
pub fn nearest_excluded(b: f64) -> Option<f64> {
    EXCLUDED_B.iter().copied().find(|e| (b - e).abs() <= MARGIN)
}

/// Case of a pleated improper point by the value of b.
pub fn pleated_case(b: f64) -> Result<PleatedCase, ClassifyError> {
    if let Some(e) = nearest_excluded(b) {
        return Err(ClassifyError::Degenerate(format!(
            "b = {b} lies within margin of the excluded value {e}"
        )));
    }
    Ok(if b < -2.0 {
        PleatedCase::S1
    } else if b < 0.0 {
        PleatedCase::S2
    } else if b < 0.5 {
        PleatedCase::N1
    } else if b < 2.0 / 3.0 {
        PleatedCase::N2
    } else if b < 1.0 {
        PleatedCase::N3
    } else {
        PleatedCase::S3
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Epsilon {
    Zero,
    NonZero,
    Unknown,
}

impl Epsilon {
    pub fn as_str(self) -> &'static str {
        match self {
            Epsilon::Zero => "0",
            Epsilon::NonZero => "1",
            Epsilon::Unknown => "unknown",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothness {
    Finite(u32),
    Infinite,
}

impl std::fmt::Display for Smoothness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Smoothness::Finite(n) => write!(f, "{n}"),
            Smoothness::Infinite => write!(f, "inf"),
        }
    }
}

/// One alternative of the smoothness statement: under the stated epsilon
/// assumption, the vertical-tangent invariant curve is C^k and the
/// horizontal-tangent one is C^l.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SmoothnessBranch {
    /// 1: both smooth (saddle, non-resonant node, or resonant with eps = 0);
    /// 2: b = 1/(n+1) and eps != 0; 3: b = n/(n+1) and eps != 0.
    pub case: u8,
    pub epsilon_assumed: Epsilon,
    /// Smoothness of the vertical-tangent curve.
    pub k: Smoothness,
    /// Smoothness of the horizontal-tangent curve.
    pub l: Smoothness,
}

/// Reported smoothness of the two invariant curves through a pleated
/// improper point. Holds one branch when epsilon is pinned down or
/// irrelevant, two when the point is resonant and epsilon is unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmoothnessReport {
    pub branches: Vec<SmoothnessBranch>,
}

/// Smoothness classes of the invariant curves for a saddle or node value of
/// b. The resonant coefficient epsilon of the node normal form is not
/// computable from jets, so it is taken as an input; `Unknown` at a resonant
/// b reports both alternatives.
pub fn smoothness_report(b: f64, epsilon: Epsilon) -> SmoothnessReport {
    use Smoothness::{Finite, Infinite};
    let smooth = |eps| SmoothnessBranch {
        case: 1,
        epsilon_assumed: eps,
        k: Infinite,
        l: Infinite,
    };
    let Some(res) = node_resonance(b) else {
        // Non-resonant: epsilon plays no role; echo the assumption as given.
        return SmoothnessReport {
            branches: vec![smooth(epsilon)],
        };
    };
    let resonant = match res.form {
        ResonanceForm::OneOverNPlusOne => SmoothnessBranch {
            case: 2,
            epsilon_assumed: Epsilon::NonZero,
            k: Infinite,
            l: Finite(res.n - 1),
        },
        ResonanceForm::NOverNPlusOne => SmoothnessBranch {
            case: 3,
            epsilon_assumed: Epsilon::NonZero,
            k: Finite(res.n - 1),
            l: Infinite,
        },
    };
    let branches = match epsilon {
        Epsilon::Zero => vec![smooth(Epsilon::Zero)],
        Epsilon::NonZero => vec![resonant],
        Epsilon::Unknown => vec![smooth(Epsilon::Zero), resonant],
    };
    SmoothnessReport { branches }
}

/// Analysis attached to a pleated improper point.
#[derive(Clone, Debug)]
pub struct PleatedImproperData {
    pub b: f64,
    pub case: PleatedCase,
    pub expected: CaseProperties,
    pub stability: Stability,
    /// Linear part of the chart field in normalized coordinates:
    /// diag(b, 1-b) with horizontal/vertical eigendirections.
    pub linear: LinearPart,
    pub normal_form: NormalFormCoeffs,
    pub resonance: Option<NodeResonance>,
    pub smoothness: SmoothnessReport,
}

/// Classification of a surface point for the lifted field.
#[derive(Clone, Debug)]
pub enum SingularClass {
    /// F_p does not vanish: the chart field is regular here.
    NotSingular,
    /// Second-order contact of the projection, lifted field transverse to
    /// the criminant.
    FoldedProper,
    /// Third-order contact (F_pp = 0, F_ppp != 0, F_xp != 0), lifted field
    /// transverse to the criminant.
    PleatedProper,
    /// Fold with an equilibrium of the lifted field.
    FoldedImproper(Box<FoldedImproperData>),
    /// Pleat with an equilibrium of the lifted field.
    PleatedImproper(Box<PleatedImproperData>),
    /// No case applies; the reason names the violated condition.
    Degenerate { reason: String },
}

impl SingularClass {
    pub fn kind(&self) -> &'static str {
        match self {
            SingularClass::NotSingular => "not_singular",
            SingularClass::FoldedProper => "folded_proper",
            SingularClass::PleatedProper => "pleated_proper",
            SingularClass::FoldedImproper(_) => "folded_improper",
            SingularClass::PleatedImproper(_) => "pleated_improper",
            SingularClass::Degenerate { .. } => "degenerate",
        }
    }
}

/// Margins at the base point of the equation.
pub fn margins_at(ode: &ImplicitOde) -> Result<Margins, ClassifyError> {
    let o = ode.origin();
    ode.require_on_surface(o)?;
    let g = shear_to_origin(&ode.jet_at(o)?);
    Margins::from_sheared_jet(&g).ok_or_else(|| {
        ClassifyError::Degenerate("every tested partial derivative vanishes at the base point".into())
    })
}

/// Classify the base point of the equation.
pub fn classify_singular_point(ode: &ImplicitOde) -> Result<SingularClass, ClassifyError> {
    let o = ode.origin();
    ode.require_on_surface(o)?;
    Ok(classify_jet(&ode.jet_at(o)?))
}

/// Classify from the 3-jet of F at a surface point.
pub fn classify_jet(jet: &Jet3) -> SingularClass {
    let g = shear_to_origin(jet);
    let Some(m) = Margins::from_sheared_jet(&g) else {
        return SingularClass::Degenerate {
            reason: "every tested partial derivative vanishes at the base point".into(),
        };
    };
    if m.f_p > MARGIN {
        return SingularClass::NotSingular;
    }
    let folded = m.f_pp > MARGIN;
    let pleated = !folded && m.f_ppp > MARGIN;
    let proper = m.improper > MARGIN;

    if !folded && !pleated {
        return SingularClass::Degenerate {
            reason: "F_p, F_pp and F_ppp all vanish within margin".into(),
        };
    }
    if proper {
        return if folded {
            SingularClass::FoldedProper
        } else if m.f_xp > MARGIN {
            SingularClass::PleatedProper
        } else {
            SingularClass::Degenerate {
                reason: "pleated point with F_xp vanishing within margin".into(),
            }
        };
    }
    // Improper: the lifted field has an equilibrium; its analysis divides
    // by F_y.
    if m.f_y <= MARGIN {
        return SingularClass::Degenerate {
            reason: "improper point with F_y vanishing within margin".into(),
        };
    }
    let built = if folded {
        fold_analysis(&g).map(|d| SingularClass::FoldedImproper(Box::new(d)))
    } else {
        pleat_analysis(&g).map(|d| SingularClass::PleatedImproper(Box::new(d)))
    };
    built.unwrap_or_else(|reason| SingularClass::Degenerate { reason })
}

/// Quadratic-model coefficients of a sheared jet with F_y bounded away from
/// zero.
fn quad_coeffs(g: &Jet3) -> QuadCoeffs {
    let neg_fy = -g.dy();
    QuadCoeffs {
        a: g.dpp() / neg_fy,
        b: g.dxp() / neg_fy,
        c: g.dxx() / neg_fy,
    }
}

fn fold_analysis(g: &Jet3) -> Result<FoldedImproperData, String> {
    let q = quad_coeffs(g);
    let det = q.b * (1.0 - q.b) + q.a * q.c;
    if det.abs() <= MARGIN {
        return Err(
            "linear part has a zero eigenvalue within margin (det = b(1-b) + ac vanishes)".into(),
        );
    }
    let matrix = [[q.b, q.a], [-q.c, 1.0 - q.b]];
    let linear = LinearPart::from_matrix(matrix);
    let stability = if det < 0.0 {
        Stability::Saddle
    } else if det <= 0.25 {
        Stability::Node
    } else {
        Stability::Focus
    };
    let (well_folded, any_resonance, resonance) = match linear.eigenvalues {
        // No real spectrum: the modulus-ratio and eigendirection conditions
        // constrain nothing, so a focus is well-folded.
        Eigenvalues::Complex { .. } => (true, None, None),
        Eigenvalues::Real { l1, l2 } => {
            let well = well_folded_real(&linear, q, l1, l2);
            let any = resonance_of(l1, l2);
            let node = if stability == Stability::Node {
                // Eigenvalues sum to 1; the smaller one plays the role of b.
                node_resonance(l1.min(l2))
            } else {
                None
            };
            (well, any, node)
        }
    };
    Ok(FoldedImproperData {
        coeffs: q,
        linear,
        det,
        stability,
        well_folded,
        resonance,
        any_resonance,
    })
}

/// Margin checks of the well-foldedness conditions for a real spectrum.
///
/// Eigendirection tangency to the criminant is equivalent to a zero
/// eigenvalue and verticality to a = 0, so for det != 0 and a != 0 the
/// direction conditions hold in exact arithmetic; the margin tests still
/// flag near-violations honestly.
fn well_folded_real(linear: &LinearPart, q: QuadCoeffs, l1: f64, l2: f64) -> bool {
    if l1.abs() <= MARGIN || l2.abs() <= MARGIN {
        return false;
    }
    if (l1.abs() - l2.abs()).abs() <= MARGIN {
        return false;
    }
    let Some(dirs) = linear.directions else {
        return false;
    };
    // Criminant tangent in the chart: F_p = b x + a p + O(2) up to the -F_y
    // factor, so the tangent direction is (a, -b).
    let tn = (q.a * q.a + q.b * q.b).sqrt();
    let t = [q.a / tn, -q.b / tn];
    dirs.iter().all(|v| {
        let cross = (v[0] * t[1] - v[1] * t[0]).abs();
        cross > MARGIN && v[0].abs() > MARGIN
    })
}

fn pleat_analysis(g: &Jet3) -> Result<PleatedImproperData, String> {
    let (nf, _) = pleat_normalize(g)?;
    let case = pleated_case(nf.b).map_err(|e| e.to_string())?;
    let expected = expected_properties(case);
    let linear = LinearPart::from_matrix([[nf.b, 0.0], [0.0, 1.0 - nf.b]]);
    Ok(PleatedImproperData {
        b: nf.b,
        case,
        expected,
        stability: expected.field_type,
        linear,
        normal_form: nf,
        resonance: node_resonance(nf.b),
        smoothness: smoothness_report(nf.b, Epsilon::Unknown),
    })
}

/// Normalize the sheared jet of a pleated improper point: divide by -F_y,
/// rescale x so the p^3 coefficient gives f_ppp = -2, then shift
/// y = Y + k x^2 (a contact change, so p = P + 2k x) to kill the x^2 term.
/// Neither step moves b. Returns the change coefficients and the fully
/// normalized jet.
fn pleat_normalize(g: &Jet3) -> Result<(NormalFormCoeffs, Jet3), String> {
    let neg_fy = -g.dy();
    let h = g.scale(1.0 / neg_fy);
    let b = h.dxp();
    if let Some(e) = nearest_excluded(b) {
        return Err(format!(
            "b = {b} lies within margin of the excluded value {e}"
        ));
    }
    let f3 = h.dppp();
    let sigma = (-f3 / 2.0).cbrt();
    if !sigma.is_finite() || sigma == 0.0 {
        return Err("F_ppp vanishes; the x-rescaling is undefined".into());
    }
    let h = h.rescale_x(sigma);
    let c = h.dxx();
    let k = -c / (2.0 * (2.0 * b - 1.0));
    let ctr = h.center;
    let xo = offset(0, ctr);
    let yo = offset(1, ctr);
    let po = offset(2, ctr);
    let shifted = h.substitute(
        &xo,
        &yo.add(&xo.mul(&xo).scale(k)),
        &po.add(&xo.scale(2.0 * k)),
    );
    Ok((
        NormalFormCoeffs {
            b,
            sigma,
            x2_shift: k,
        },
        shifted,
    ))
}

/// Standalone entry for the folded improper analysis; errors on any other
/// class.
pub fn folded_improper_analysis(ode: &ImplicitOde) -> Result<FoldedImproperData, ClassifyError> {
    match classify_singular_point(ode)? {
        SingularClass::FoldedImproper(d) => Ok(*d),
        SingularClass::Degenerate { reason } => Err(ClassifyError::Degenerate(reason)),
        other => Err(ClassifyError::Degenerate(format!(
            "expected a folded improper point, found {}",
            other.kind()
        ))),
    }
}

/// Standalone entry for the pleated normalization; errors on any other
/// class. Returns the change coefficients and the normalized jet.
pub fn pleated_improper_normalize(
    ode: &ImplicitOde,
) -> Result<(NormalFormCoeffs, Jet3), ClassifyError> {
    let o = ode.origin();
    ode.require_on_surface(o)?;
    let jet = ode.jet_at(o)?;
    let g = shear_to_origin(&jet);
    let m = Margins::from_sheared_jet(&g).ok_or_else(|| {
        ClassifyError::Degenerate("every tested partial derivative vanishes at the base point".into())
    })?;
    if m.f_p > MARGIN || m.f_pp > MARGIN || m.f_ppp <= MARGIN || m.improper > MARGIN {
        return Err(ClassifyError::Degenerate(
            "not a pleated improper point".into(),
        ));
    }
    if m.f_y <= MARGIN {
        return Err(ClassifyError::Degenerate(
            "improper point with F_y vanishing within margin".into(),
        ));
    }
    pleat_normalize(&g).map_err(ClassifyError::Degenerate)
}
