//! Truncated trivariate Taylor arithmetic of total degree 3.
//!
//! A [`Jet3`] stores the Taylor coefficients of a smooth germ at a base
//! point `(x, y, p)`: `coeff(i, j, k) = \partial^{i+j+k} F / (i! j! k!)`.
//! There are exactly 20 multi-indices with `i + j + k <= 3`. All arithmetic
//! truncates at total degree 3, so products and compositions are exact for
//! the retained orders.

use std::fmt;

/// Number of trivariate monomials of total degree <= 3.
pub const N_COEFFS: usize = 20;

/// Multi-indices (i, j, k) ordered by total degree, then lexicographically.
pub const MULTI_INDICES: [(u8, u8, u8); N_COEFFS] = [
    (0, 0, 0),
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (2, 0, 0),
    (1, 1, 0),
    (1, 0, 1),
    (0, 2, 0),
    (0, 1, 1),
    (0, 0, 2),
    (3, 0, 0),
    (2, 1, 0),
    (2, 0, 1),
    (1, 2, 0),
    (1, 1, 1),
    (1, 0, 2),
    (0, 3, 0),
    (0, 2, 1),
    (0, 1, 2),
    (0, 0, 3),
];

const INVALID: usize = usize::MAX;

const fn build_lookup() -> [[[usize; 4]; 4]; 4] {
    let mut table = [[[INVALID; 4]; 4]; 4];
    let mut n = 0;
    while n < N_COEFFS {
        let (i, j, k) = MULTI_INDICES[n];
        table[i as usize][j as usize][k as usize] = n;
        n += 1;
    }
    table
}

/// coeff index for (i, j, k); INVALID when i + j + k > 3.
const LOOKUP: [[[usize; 4]; 4]; 4] = build_lookup();

#[inline]
fn idx(i: u8, j: u8, k: u8) -> usize {
    LOOKUP[i as usize][j as usize][k as usize]
}

const FACT: [f64; 4] = [1.0, 1.0, 2.0, 6.0];

/// Degree-3 jet of a scalar function of (x, y, p) at a base point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet3 {
    /// Base point the coefficients are taken at.
    pub center: [f64; 3],
    /// Taylor coefficients indexed by [`MULTI_INDICES`].
    pub c: [f64; N_COEFFS],
}

impl Jet3 {
    /// Jet of the constant function `v`.
    pub fn constant(v: f64, center: [f64; 3]) -> Self {
        let mut c = [0.0; N_COEFFS];
        c[0] = v;
        Jet3 { center, c }
    }

    /// Jet of one of the coordinate functions x, y, p.
    pub fn variable(which: usize, center: [f64; 3]) -> Self {
        let mut c = [0.0; N_COEFFS];
        c[0] = center[which];
        c[1 + which] = 1.0;
        Jet3 { center, c }
    }

    /// Taylor coefficient for the multi-index (i, j, k).
    #[inline]
    pub fn coeff(&self, i: u8, j: u8, k: u8) -> f64 {
        self.c[idx(i, j, k)]
    }

    /// Partial derivative `\partial^{i+j+k} F / \partial x^i \partial y^j \partial p^k`.
    #[inline]
    pub fn partial(&self, i: u8, j: u8, k: u8) -> f64 {
        self.coeff(i, j, k) * FACT[i as usize] * FACT[j as usize] * FACT[k as usize]
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.c[0]
    }
    #[inline]
    pub fn dx(&self) -> f64 {
        self.partial(1, 0, 0)
    }
    #[inline]
    pub fn dy(&self) -> f64 {
        self.partial(0, 1, 0)
    }
    #[inline]
    pub fn dp(&self) -> f64 {
        self.partial(0, 0, 1)
    }
    #[inline]
    pub fn dxx(&self) -> f64 {
        self.partial(2, 0, 0)
    }
    #[inline]
    pub fn dxy(&self) -> f64 {
        self.partial(1, 1, 0)
    }
    #[inline]
    pub fn dxp(&self) -> f64 {
        self.partial(1, 0, 1)
    }
    #[inline]
    pub fn dyy(&self) -> f64 {
        self.partial(0, 2, 0)
    }
    #[inline]
    pub fn dyp(&self) -> f64 {
        self.partial(0, 1, 1)
    }
    #[inline]
    pub fn dpp(&self) -> f64 {
        self.partial(0, 0, 2)
    }
    #[inline]
    pub fn dppp(&self) -> f64 {
        self.partial(0, 0, 3)
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|v| v.is_finite())
    }

    pub fn neg(&self) -> Self {
        let mut out = *self;
        for v in &mut out.c {
            *v = -*v;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        for v in &mut out.c {
            *v *= s;
        }
        out
    }

    pub fn add(&self, rhs: &Self) -> Self {
        let mut out = *self;
        for (a, b) in out.c.iter_mut().zip(rhs.c.iter()) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        let mut out = *self;
        for (a, b) in out.c.iter_mut().zip(rhs.c.iter()) {
            *a -= b;
        }
        out
    }

    /// Truncated product: convolution of coefficients, degrees > 3 dropped.
    pub fn mul(&self, rhs: &Self) -> Self {
        let mut c = [0.0; N_COEFFS];
        for (na, &(i1, j1, k1)) in MULTI_INDICES.iter().enumerate() {
            let a = self.c[na];
            if a == 0.0 {
                continue;
            }
            for (nb, &(i2, j2, k2)) in MULTI_INDICES.iter().enumerate() {
                if (i1 + i2 + j1 + j2 + k1 + k2) as usize > 3 {
                    continue;
                }
                c[idx(i1 + i2, j1 + j2, k1 + k2)] += a * rhs.c[nb];
            }
        }
        Jet3 { center: self.center, c }
    }

    /// Reciprocal. The jet value must be nonzero.
    pub fn inv(&self) -> Option<Self> {
        let v = self.c[0];
        if v == 0.0 || !v.is_finite() {
            return None;
        }
        // 1/(v + h) = (1/v)(1 - u + u^2 - u^3), u = h/v, h the 1-flat part.
        let u = {
            let mut t = self.scale(1.0 / v);
            t.c[0] = 0.0;
            t
        };
        let u2 = u.mul(&u);
        let u3 = u2.mul(&u);
        let mut out = Jet3::constant(1.0, self.center)
            .sub(&u)
            .add(&u2)
            .sub(&u3);
        out = out.scale(1.0 / v);
        Some(out)
    }

    pub fn div(&self, rhs: &Self) -> Option<Self> {
        Some(self.mul(&rhs.inv()?))
    }

    /// Composition with a univariate analytic function given by the value and
    /// the first three derivatives at the jet's value.
    pub fn compose_univariate(&self, f: [f64; 4]) -> Self {
        let h = {
            let mut t = *self;
            t.c[0] = 0.0;
            t
        };
        let h2 = h.mul(&h);
        let h3 = h2.mul(&h);
        Jet3::constant(f[0], self.center)
            .add(&h.scale(f[1]))
            .add(&h2.scale(f[2] / 2.0))
            .add(&h3.scale(f[3] / 6.0))
    }

    pub fn sin(&self) -> Self {
        let v = self.c[0];
        let (s, c) = v.sin_cos();
        self.compose_univariate([s, c, -s, -c])
    }

    pub fn cos(&self) -> Self {
        let v = self.c[0];
        let (s, c) = v.sin_cos();
        self.compose_univariate([c, -s, -c, s])
    }

    pub fn exp(&self) -> Self {
        let e = self.c[0].exp();
        self.compose_univariate([e, e, e, e])
    }

    /// Natural log. The jet value must be strictly positive.
    pub fn ln(&self) -> Option<Self> {
        let v = self.c[0];
        if !(v > 0.0) {
            return None;
        }
        Some(self.compose_univariate([v.ln(), 1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v)]))
    }

    /// Integer power. Negative exponents require a nonzero jet value.
    pub fn powi(&self, n: i32) -> Option<Self> {
        if n < 0 {
            return self.inv()?.powi(-n);
        }
        let mut out = Jet3::constant(1.0, self.center);
        let mut base = *self;
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                out = out.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        Some(out)
    }

    /// Substitute 1-flat jets for the three coordinate offsets.
    ///
    /// Treats the coefficients as a degree-3 polynomial P(u, v, w) in the
    /// offsets from the center and evaluates P(U, V, W) in jet arithmetic.
    /// Each argument must have zero value coefficient, which makes the
    /// truncation commute with the substitution.
    pub fn substitute(&self, u: &Jet3, v: &Jet3, w: &Jet3) -> Jet3 {
        debug_assert!(u.c[0] == 0.0 && v.c[0] == 0.0 && w.c[0] == 0.0);
        let mut pow_u = [Jet3::constant(1.0, self.center); 4];
        let mut pow_v = pow_u;
        let mut pow_w = pow_u;
        for d in 1..4 {
            pow_u[d] = pow_u[d - 1].mul(u);
            pow_v[d] = pow_v[d - 1].mul(v);
            pow_w[d] = pow_w[d - 1].mul(w);
        }
        let mut out = Jet3::constant(0.0, self.center);
        for (n, &(i, j, k)) in MULTI_INDICES.iter().enumerate() {
            let c = self.c[n];
            if c == 0.0 {
                continue;
            }
            let term = pow_u[i as usize]
                .mul(&pow_v[j as usize])
                .mul(&pow_w[k as usize]);
            out = out.add(&term.scale(c));
        }
        out
    }

    /// Rescale the x coordinate (and with it p = dy/dx): x -> sigma * x,
    /// p -> p / sigma. Coefficients transform as `c * sigma^(i - k)`.
    pub fn rescale_x(&self, sigma: f64) -> Jet3 {
        let mut out = *self;
        for (n, &(i, _, k)) in MULTI_INDICES.iter().enumerate() {
            out.c[n] *= sigma.powi(i as i32 - k as i32);
        }
        out
    }
}

impl fmt::Display for Jet3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "jet at ({}, {}, {}): F={}, Fx={}, Fy={}, Fp={}",
            self.center[0],
            self.center[1],
            self.center[2],
            self.value(),
            self.dx(),
            self.dy(),
            self.dp()
        )
    }
}
