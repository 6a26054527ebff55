//! Banded LU with partial pivoting, bordered solves and smallest singular
//! pairs of banded matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{HerdError, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
///
/// Row `i` stores columns `i − kl ..= i + kl + ku`; the extra `kl` columns
/// hold fill-in produced by row interchanges during factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kl(&self) -> usize {
        self.kl
    }

    pub fn ku(&self) -> usize {
        self.ku
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku, "({i},{j}) outside band");
        i * self.width + (j + self.kl - i)
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    /// Panics if `(i, j)` lies outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j) && i < self.n && j < self.n, "({i},{j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j) && i < self.n && j < self.n, "({i},{j}) outside band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    fn cols(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.cols(i).map(|j| self.data[self.slot(i, j)] * x[j]).sum())
            .collect()
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            for j in self.cols(i) {
                y[j] += self.data[self.slot(i, j)] * x[i];
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn factor(&self) -> Result<BandLu> {
        BandLu::new(self.clone())
    }
}

/// `P A = L U` for a band matrix, computed in place.
#[derive(Debug, Clone)]
pub struct BandLu {
    u: BandMatrix,
    /// Multipliers of column `k`, rows `k+1 ..= k+kl`.
    l: Vec<f64>,
    piv: Vec<usize>,
    n_swaps: usize,
}

impl BandLu {
    fn new(mut a: BandMatrix) -> Result<Self> {
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        let mut l = vec![0.0; n * kl.max(1)];
        let mut piv = vec![0; n];
        let mut n_swaps = 0;
        let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = a.data[a.slot(k, k)].abs();
            for r in k + 1..=last_row {
                let v = a.data[a.slot(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            piv[k] = p;
            if best == 0.0 || best <= scale * f64::EPSILON * 1e-3 {
                return Err(HerdError::Singular {
                    column: k,
                    pivot: best,
                });
            }
            if p != k {
                n_swaps += 1;
                for j in k..=last_col {
                    let (sk, sp) = (a.slot(k, j), a.slot(p, j));
                    a.data.swap(sk, sp);
                }
            }
            let pivot = a.data[a.slot(k, k)];
            for r in k + 1..=last_row {
                let srk = a.slot(r, k);
                let m = a.data[srk] / pivot;
                a.data[srk] = 0.0;
                l[k * kl + (r - k - 1)] = m;
                if m != 0.0 {
                    for j in k + 1..=last_col {
                        let (srj, skj) = (a.slot(r, j), a.slot(k, j));
                        a.data[srj] -= m * a.data[skj];
                    }
                }
            }
        }
        Ok(BandLu {
            u: a,
            l,
            piv,
            n_swaps,
        })
    }

    pub fn dim(&self) -> usize {
        self.u.n
    }

    fn upper_cols(&self, k: usize) -> std::ops::Range<usize> {
        k + 1..(k + self.u.kl + self.u.ku + 1).min(self.u.n)
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl) = (self.u.n, self.u.kl);
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            for r in k + 1..=(k + kl).min(n - 1) {
                x[r] -= self.l[k * kl + (r - k - 1)] * xk;
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in self.upper_cols(k) {
                s -= self.u.data[self.u.slot(k, j)] * x[j];
            }
            x[k] = s / self.u.data[self.u.slot(k, k)];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl) = (self.u.n, self.u.kl);
        let mut y = b.to_vec();
        for k in 0..n {
            let yk = y[k] / self.u.data[self.u.slot(k, k)];
            y[k] = yk;
            for j in self.upper_cols(k) {
                y[j] -= self.u.data[self.u.slot(k, j)] * yk;
            }
        }
        for k in (0..n).rev() {
            let mut s = 0.0;
            for r in k + 1..=(k + kl).min(n - 1) {
                s += self.l[k * kl + (r - k - 1)] * y[r];
            }
            y[k] -= s;
            y.swap(k, self.piv[k]);
        }
        y
    }

    /// Sign of `det A` (±1).
    pub fn det_sign(&self) -> f64 {
        let mut s = if self.n_swaps % 2 == 0 { 1.0 } else { -1.0 };
        for k in 0..self.u.n {
            if self.u.data[self.u.slot(k, k)] < 0.0 {
                s = -s;
            }
        }
        s
    }

    pub fn log_abs_det(&self) -> f64 {
        (0..self.u.n)
            .map(|k| self.u.data[self.u.slot(k, k)].abs().ln())
            .sum()
    }
}

/// `[A B; C D]` with `A` banded and a dense border of width `k`.
///
/// Solved by block elimination followed by iterative refinement against
/// the unfactored matrix.
#[derive(Debug, Clone)]
pub struct BorderedSystem {
    a: BandMatrix,
    lu: BandLu,
    /// Columns of `B`.
    b: Vec<Vec<f64>>,
    /// Rows of `C`.
    c: Vec<Vec<f64>>,
    d: DMatrix<f64>,
    /// `A⁻¹ B`, column-wise.
    x: Vec<Vec<f64>>,
    schur: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    schur_det: f64,
}

impl BorderedSystem {
    pub fn new(a: BandMatrix, b: Vec<Vec<f64>>, c: Vec<Vec<f64>>, d: DMatrix<f64>) -> Result<Self> {
        let k = b.len();
        assert!(c.len() == k && d.nrows() == k && d.ncols() == k);
        let lu = a.factor()?;
        let x: Vec<Vec<f64>> = b.iter().map(|col| lu.solve(col)).collect();
        let s = DMatrix::from_fn(k, k, |i, j| d[(i, j)] - dot(&c[i], &x[j]));
        let schur = s.lu();
        let schur_det = schur.determinant();
        if schur_det == 0.0 || !schur_det.is_finite() {
            return Err(HerdError::Singular {
                column: a.dim(),
                pivot: schur_det,
            });
        }
        Ok(BorderedSystem {
            a,
            lu,
            b,
            c,
            d,
            x,
            schur,
            schur_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.dim() + self.b.len()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.a.dim();
        let (vx, vy) = v.split_at(n);
        let mut out = self.a.matvec(vx);
        for (col, &y) in self.b.iter().zip(vy) {
            for (o, bc) in out.iter_mut().zip(col) {
                *o += bc * y;
            }
        }
        for (i, row) in self.c.iter().enumerate() {
            let mut s = dot(row, vx);
            for (j, &y) in vy.iter().enumerate() {
                s += self.d[(i, j)] * y;
            }
            out.push(s);
        }
        out
    }

    fn solve_once(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.a.dim();
        let (f, g) = rhs.split_at(n);
        let y = self.lu.solve(f);
        let r = DVector::from_iterator(
            g.len(),
            g.iter().zip(&self.c).map(|(gi, ci)| gi - dot(ci, &y)),
        );
        let z = self.schur.solve(&r).unwrap_or_else(|| DVector::zeros(g.len()));
        let mut out = y;
        for (xj, zj) in self.x.iter().zip(z.iter()) {
            for (o, xv) in out.iter_mut().zip(xj) {
                *o -= xv * zj;
            }
        }
        out.extend(z.iter());
        out
    }

    /// Solves the full bordered system with two refinement sweeps.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut sol = self.solve_once(rhs);
        for _ in 0..2 {
            let res: Vec<f64> = self
                .apply(&sol)
                .iter()
                .zip(rhs)
                .map(|(a, r)| r - a)
                .collect();
            let corr = self.solve_once(&res);
            for (s, c) in sol.iter_mut().zip(corr) {
                *s += c;
            }
        }
        sol
    }

    /// Sign of the determinant of the full bordered matrix.
    pub fn det_sign(&self) -> f64 {
        self.lu.det_sign() * self.schur_det.signum()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Smallest two singular values of a square band matrix and the singular
/// vectors belonging to the smallest one.
#[derive(Debug, Clone)]
pub struct SmallestSingular {
    pub sigma_min: f64,
    pub sigma_second: f64,
    /// Right singular vector (`A v ≈ σ u`), unit length.
    pub right: Vec<f64>,
    /// Left singular vector, unit length.
    pub left: Vec<f64>,
}

/// Inverse subspace iteration on `AᵀA` with a two-dimensional block and a
/// Rayleigh-Ritz step per sweep. Deterministic start vectors.
pub fn smallest_singular(a: &BandMatrix, lu: &BandLu, max_iter: usize) -> SmallestSingular {
    let n = a.dim();
    let mut q1: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
    let mut q2: Vec<f64> = (0..n)
        .map(|i| ((i as f64 + 0.5) * 2.399_963).sin())
        .collect();
    orthonormalize(&mut q1, &mut q2);
    let mut prev = f64::INFINITY;
    let mut result = None;
    for _ in 0..max_iter.max(1) {
        let mut z1 = lu.solve(&lu.solve_transpose(&q1));
        let mut z2 = lu.solve(&lu.solve_transpose(&q2));
        orthonormalize(&mut z1, &mut z2);
        let (s_min, s_2, v) = ritz(a, &z1, &z2);
        q1 = v.0;
        q2 = v.1;
        let done = ((s_min - prev).abs() <= 1e-12 * s_min.max(1e-300)) && result.is_some();
        prev = s_min;
        result = Some((s_min, s_2));
        if done {
            break;
        }
    }
    let (sigma_min, sigma_second) = result.expect("at least one sweep");
    let av = a.matvec(&q1);
    let nav = norm2(&av);
    let left = if nav > 0.0 {
        av.iter().map(|v| v / nav).collect()
    } else {
        lu.solve_transpose(&q1)
    };
    SmallestSingular {
        sigma_min,
        sigma_second,
        right: q1,
        left,
    }
}

fn orthonormalize(a: &mut [f64], b: &mut [f64]) {
    let na = norm2(a);
    a.iter_mut().for_each(|v| *v /= na);
    for _ in 0..2 {
        let p = dot(a, b);
        b.iter_mut().zip(a.iter()).for_each(|(bv, av)| *bv -= p * av);
    }
    let nb = norm2(b);
    b.iter_mut().for_each(|v| *v /= nb);
}

/// Rayleigh-Ritz for `AᵀA` on span{z1, z2}: returns σ₁ ≤ σ₂ and the Ritz
/// vectors.
fn ritz(a: &BandMatrix, z1: &[f64], z2: &[f64]) -> (f64, f64, (Vec<f64>, Vec<f64>)) {
    let a1 = a.matvec(z1);
    let a2 = a.matvec(z2);
    let h = nalgebra::Matrix2::new(dot(&a1, &a1), dot(&a1, &a2), dot(&a1, &a2), dot(&a2, &a2));
    let eig = h.symmetric_eigen();
    let (i_min, i_max) = if eig.eigenvalues[0] <= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let comb = |i: usize| -> Vec<f64> {
        let c = eig.eigenvectors.column(i);
        z1.iter().zip(z2).map(|(x, y)| c[0] * x + c[1] * y).collect()
    };
    (
        eig.eigenvalues[i_min].max(0.0).sqrt(),
        eig.eigenvalues[i_max].max(0.0).sqrt(),
        (comb(i_min), comb(i_max)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> BandMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                a.set(i, j, rng.random_range(-1.0..1.0));
            }
        }
        a
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        for (n, kl, ku, seed) in [(12, 3, 3, 1), (40, 5, 5, 2), (9, 1, 2, 3), (30, 0, 0, 4)] {
            let mut a = random_band(n, kl, ku, seed);
            if kl == 0 {
                for i in 0..n {
                    a.set(i, i, 1.0 + i as f64);
                }
            }
            let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
            let lu = a.factor().unwrap();
            let dense = a.to_dense();
            let x_ref = dense.clone().lu().solve(&DVector::from_vec(b.clone())).unwrap();
            let x = lu.solve(&b);
            for i in 0..n {
                assert!((x[i] - x_ref[i]).abs() < 1e-9 * (1.0 + x_ref[i].abs()));
            }
            let xt_ref = dense.transpose().lu().solve(&DVector::from_vec(b.clone())).unwrap();
            let xt = lu.solve_transpose(&b);
            for i in 0..n {
                assert!((xt[i] - xt_ref[i]).abs() < 1e-9 * (1.0 + xt_ref[i].abs()));
            }
            let det = a.to_dense().determinant();
            assert_eq!(lu.det_sign(), det.signum());
            assert!((lu.log_abs_det() - det.abs().ln()).abs() < 1e-8);
        }
    }

    #[test]
    fn singular_band_is_reported() {
        let mut a = BandMatrix::zeros(5, 1, 1);
        for i in 0..5 {
            a.set(i, i, 1.0);
        }
        a.set(2, 2, 0.0);
        a.set(2, 1, 0.0);
        a.set(3, 2, 0.0);
        assert!(matches!(a.factor(), Err(HerdError::Singular { column: 2, .. })));
    }

    #[test]
    fn bordered_matches_dense() {
        let n = 20;
        let a = random_band(n, 3, 3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let c: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let d = DMatrix::from_fn(2, 2, |i, j| if i == j { 0.5 } else { 0.1 });
        let mut full = DMatrix::zeros(n + 2, n + 2);
        for i in 0..n {
            for j in 0..n {
                full[(i, j)] = a.get(i, j);
            }
            for k in 0..2 {
                full[(i, n + k)] = b[k][i];
                full[(n + k, i)] = c[k][i];
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                full[(n + i, n + j)] = d[(i, j)];
            }
        }
        let rhs: Vec<f64> = (0..n + 2).map(|i| (i as f64 * 0.3).sin()).collect();
        let sys = BorderedSystem::new(a, b, c, d).unwrap();
        let x = sys.solve(&rhs);
        let x_ref = full.clone().lu().solve(&DVector::from_vec(rhs)).unwrap();
        for i in 0..n + 2 {
            assert!((x[i] - x_ref[i]).abs() < 1e-10 * (1.0 + x_ref[i].abs()));
        }
        assert_eq!(sys.det_sign(), full.determinant().signum());
    }

    #[test]
    fn smallest_singular_matches_dense_svd() {
        let a = random_band(25, 2, 3, 11);
        let lu = a.factor().unwrap();
        let s = smallest_singular(&a, &lu, 500);
        let mut sv: Vec<f64> = a.to_dense().singular_values().iter().copied().collect();
        sv.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((s.sigma_min - sv[0]).abs() < 1e-8 * sv[0].max(1e-12), "{} vs {}", s.sigma_min, sv[0]);
        assert!((s.sigma_second - sv[1]).abs() < 1e-6 * sv[1]);
        let av = a.matvec(&s.right);
        assert!((norm2(&av) - sv[0]).abs() < 1e-8);
        let atu = a.matvec_transpose(&s.left);
        assert!((norm2(&atu) - sv[0]).abs() < 1e-6);
    }
}
