//! Conservative finite-volume flux assembly shared by the time steppers and
//! the steady solver.

use crate::linalg::BandMatrix;
use crate::model::Nonlinearity;

/// Face fluxes `J` (for u₁) and `K` (for u₂) between cells `i` and `i+1`,
/// with derivatives w.r.t. the solver unknowns
/// `(x₁ᵢ, x₂ᵢ, x₁ᵢ₊₁, x₂ᵢ₊₁)`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct FaceFlux {
    pub j: f64,
    pub k: f64,
    pub dj: [f64; 4],
    pub dk: [f64; 4],
}

/// Layout of the unknown vector: cell `i`, component `c` lives at
/// `stride·i + c`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub n: usize,
    pub stride: usize,
}

impl Layout {
    #[inline]
    pub fn at(&self, i: usize, c: usize) -> usize {
        self.stride * i + c
    }
}

/// Adds `coef·(F_{i+½} − F_{i−½})/h` to rows `(i,0)` and `(i,1)` for both
/// flux components; boundary fluxes are zero.
pub(crate) fn add_divergence(
    layout: Layout,
    h: f64,
    coef: f64,
    face: impl Fn(usize) -> FaceFlux,
    res: &mut [f64],
    mut jac: Option<&mut BandMatrix>,
) {
    let s = coef / h;
    for i in 0..layout.n - 1 {
        let f = face(i);
        let cols = [
            layout.at(i, 0),
            layout.at(i, 1),
            layout.at(i + 1, 0),
            layout.at(i + 1, 1),
        ];
        // the face is the right face of cell i and the left face of cell i+1
        for (cell, sign) in [(i, -1.0), (i + 1, 1.0)] {
            let (r1, r2) = (layout.at(cell, 0), layout.at(cell, 1));
            res[r1] -= sign * s * f.j;
            res[r2] -= sign * s * f.k;
            if let Some(m) = jac.as_deref_mut() {
                for (c, col) in cols.iter().enumerate() {
                    m.add(r1, *col, -sign * s * f.dj[c]);
                    m.add(r2, *col, -sign * s * f.dk[c]);
                }
            }
        }
    }
}

/// Primal face flux with arithmetic-mean mobility `g((u₁ᵢ+u₁ᵢ₊₁)/2)`.
pub(crate) fn primal_face(
    nl: &Nonlinearity,
    delta: f64,
    kappa: f64,
    h: f64,
    u1: &[f64],
    u2: &[f64],
    i: usize,
) -> FaceFlux {
    let (a1, b1, a2, b2) = (u1[i], u1[i + 1], u2[i], u2[i + 1]);
    let m = 0.5 * (a1 + b1);
    let (g, dg) = (nl.g(m), 0.5 * nl.dg(m));
    let (d1, d2) = (b1 - a1, b2 - a2);
    FaceFlux {
        j: (d1 - g * d2) / h,
        k: (delta * d1 + kappa * d2) / h,
        dj: [
            (-1.0 - dg * d2) / h,
            g / h,
            (1.0 - dg * d2) / h,
            -g / h,
        ],
        dk: [-delta / h, -kappa / h, delta / h, kappa / h],
    }
}

/// Discrete chain-rule mean `G(a, b) = (σ(b) − σ(a))/(b − a)` of the
/// mobility in the entropy variable `w₁`, with `σ = (h₀′)⁻¹` so that
/// `σ′ = g(σ)`. Returns `(G, ∂G/∂a, ∂G/∂b)`.
pub(crate) fn chain_rule_mobility(nl: &Nonlinearity, a: f64, b: f64, sa: f64, sb: f64) -> (f64, f64, f64) {
    let d = b - a;
    if d.abs() >= 1e-3 {
        let gm = (sb - sa) / d;
        return (gm, (gm - nl.g(sa)) / d, (nl.g(sb) - gm) / d);
    }
    // Taylor expansion about the midpoint, derivatives of σ expressed via g
    let sm = sigma_mid(nl, a, b, sa, sb);
    let (g, g1, g2, g3) = (nl.g(sm), nl.dg(sm), nl.d2g(sm), nl.d3g(sm));
    let s1 = g;
    let s2 = g1 * g;
    let s3 = g2 * g * g + g1 * g1 * g;
    let s4 = g * (g3 * g * g + 4.0 * g * g1 * g2 + g1 * g1 * g1);
    let gm = s1 + s3 * d * d / 24.0;
    let common = 0.5 * s2 + s4 * d * d / 48.0;
    (gm, common - s3 * d / 12.0, common + s3 * d / 12.0)
}

fn sigma_mid(nl: &Nonlinearity, a: f64, b: f64, sa: f64, sb: f64) -> f64 {
    match nl {
        Nonlinearity::Logistic => crate::model::logistic_sigmoid(0.5 * (a + b)),
        // second-order midpoint estimate is enough for d < 1e-3
        Nonlinearity::PowerAB { .. } => {
            let sm = 0.5 * (sa + sb);
            sm - (b - a).powi(2) / 8.0 * nl.dg(sm) * nl.g(sm)
        }
    }
}
