//! Dense symmetric eigendecomposition.
//!
//! Householder reduction to tridiagonal form followed by implicit QL
//! iterations with Wilkinson-style shifts, then back-transformation of the
//! eigenvectors through the stored reflectors. Eigenvectors are returned as
//! the rows of a row-major `n × n` matrix, sorted by non-increasing
//! eigenvalue, each with its first non-negligible component positive.

use rayon::prelude::*;

use crate::error::{Result, SaakError};

/// Default relative deflation threshold for the QL iterations.
pub const DEFAULT_TOLERANCE: f64 = 1e-14;

/// Components at or below this magnitude are skipped when fixing signs.
pub const SIGN_THRESHOLD: f64 = 1e-12;

const MAX_QL_ITERATIONS: usize = 60;
const BACK_TRANSFORM_BLOCK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Eigendecomposition {
    n: usize,
    values: Vec<f64>,
    vectors: Vec<f64>,
}

impl Eigendecomposition {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Eigenvalues, non-increasing.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row-major matrix whose row `i` is the eigenvector of `values()[i]`.
    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.n..(i + 1) * self.n]
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.values, self.vectors)
    }
}

/// Largest `|m[i][j] - m[j][i]|` of a row-major square matrix.
pub fn max_asymmetry(m: &[f64], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((m[i * n + j] - m[j * n + i]).abs());
        }
    }
    worst
}

/// Frobenius norm.
pub fn frobenius_norm(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigendecomposition of the symmetric row-major `n × n` matrix `m`.
///
/// `tol` is the relative deflation threshold of the QL sweep; it is clamped
/// below at machine epsilon. Residuals satisfy `‖m v - λ v‖ ≲ tol · ‖m‖`.
pub fn symmetric_eigendecomposition(m: &[f64], n: usize, tol: f64) -> Result<Eigendecomposition> {
    if n == 0 {
        return Err(SaakError::Empty("eigendecomposition of a 0x0 matrix"));
    }
    if m.len() != n * n {
        return Err(SaakError::LengthMismatch {
            expected: n * n,
            actual: m.len(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SaakError::InvalidArgument("matrix has non-finite entries".into()));
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    let asym = max_asymmetry(m, n);
    if asym > 1e-9 * scale {
        return Err(SaakError::NotSymmetric(asym));
    }

    // Work on the lower triangle of the symmetrized copy.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            a[i * n + j] = 0.5 * (m[i * n + j] + m[j * n + i]);
        }
    }

    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    let mut taus = vec![0.0; n];
    tridiagonalize(&mut a, n, &mut diag, &mut off, &mut taus);

    // Rows of `basis` are eigenvectors of the tridiagonal matrix.
    let mut basis = vec![0.0; n * n];
    for i in 0..n {
        basis[i * n + i] = 1.0;
    }
    tridiagonal_ql(&mut diag, &mut off, &mut basis, n, tol.max(f64::EPSILON))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Vec::with_capacity(n * n);
    for &i in &order {
        vectors.extend_from_slice(&basis[i * n..(i + 1) * n]);
    }
    drop(basis);

    back_transform(&a, n, &taus, &mut vectors);
    for row in vectors.chunks_exact_mut(n) {
        fix_sign(row);
    }

    Ok(Eigendecomposition { n, values, vectors })
}

/// Flips `v` so that its first component with magnitude above
/// [`SIGN_THRESHOLD`] is positive.
pub fn fix_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|c| c.abs() > SIGN_THRESHOLD) {
        if *first < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
    }
}

/// Householder reduction of the symmetric matrix held in the lower triangle
/// of `a`. On return `diag`/`off` hold the tridiagonal matrix
/// (`off[i]` couples `i` and `i + 1`), and the reflector for column `k` is
/// stored in `a[(k+1).., k]` with scale `taus[k]`.
fn tridiagonalize(a: &mut [f64], n: usize, diag: &mut [f64], off: &mut [f64], taus: &mut [f64]) {
    let mut p = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        diag[k] = a[k * n + k];
        let m = n - k - 1;
        // x = a[k+1.., k]
        let mut tail_sq = 0.0;
        for i in k + 2..n {
            tail_sq += a[i * n + k] * a[i * n + k];
        }
        let x0 = a[(k + 1) * n + k];
        if tail_sq == 0.0 {
            off[k] = x0;
            taus[k] = 0.0;
            for i in k + 1..n {
                a[i * n + k] = 0.0;
            }
            continue;
        }
        let norm = (x0 * x0 + tail_sq).sqrt();
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        // v = x - alpha e1, scaled so v[0] = 1.
        let v0 = x0 - alpha;
        for i in k + 2..n {
            a[i * n + k] /= v0;
        }
        a[(k + 1) * n + k] = 1.0;
        let tau = -v0 / alpha;
        off[k] = alpha;
        taus[k] = tau;

        let v: Vec<f64> = (k + 1..n).map(|i| a[i * n + k]).collect();

        // p = tau * B v using the lower triangle of B = a[k+1.., k+1..].
        let p = &mut p[..m];
        p.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..m {
            let row = &a[(k + 1 + i) * n + k + 1..(k + 1 + i) * n + k + 1 + i];
            let vi = v[i];
            let mut acc = 0.0;
            for ((pj, bij), vj) in p[..i].iter_mut().zip(row).zip(&v[..i]) {
                acc += bij * vj;
                *pj += bij * vi;
            }
            p[i] += acc + a[(k + 1 + i) * n + k + 1 + i] * vi;
        }
        let mut pv = 0.0;
        for i in 0..m {
            p[i] *= tau;
            pv += p[i] * v[i];
        }
        // w = p - (tau/2)(p·v) v ; B -= v wᵀ + w vᵀ
        let half = 0.5 * tau * pv;
        for i in 0..m {
            p[i] -= half * v[i];
        }
        for i in 0..m {
            let (vi, wi) = (v[i], p[i]);
            let row = &mut a[(k + 1 + i) * n + k + 1..(k + 1 + i) * n + k + 2 + i];
            for ((bij, vj), wj) in row.iter_mut().zip(&v[..=i]).zip(&p[..=i]) {
                *bij -= vi * wj + wi * vj;
            }
        }
    }
    if n >= 2 {
        diag[n - 2] = a[(n - 2) * n + n - 2];
        off[n - 2] = a[(n - 1) * n + n - 2];
        a[(n - 1) * n + n - 2] = 0.0;
    }
    diag[n - 1] = a[(n - 1) * n + n - 1];
    off[n - 1] = 0.0;
}

/// Implicit QL on the tridiagonal `(diag, off)`; rotations are accumulated
/// into the rows of `basis`.
fn tridiagonal_ql(diag: &mut [f64], off: &mut [f64], basis: &mut [f64], n: usize, tol: f64) -> Result<()> {
    let mut shift = 0.0;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(diag[l].abs() + off[l].abs());
        let mut m = l;
        while m < n - 1 && off[m].abs() > tol * tst1 {
            m += 1;
        }
        if m > l {
            let mut iterations = 0;
            loop {
                iterations += 1;
                if iterations > MAX_QL_ITERATIONS {
                    return Err(SaakError::NoConvergence {
                        iterations: MAX_QL_ITERATIONS,
                        residual: off[l].abs(),
                    });
                }
                let g = diag[l];
                let mut p = (diag[l + 1] - g) / (2.0 * off[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                diag[l] = off[l] / (p + r);
                diag[l + 1] = off[l] * (p + r);
                let dl1 = diag[l + 1];
                let h = g - diag[l];
                for d in diag.iter_mut().skip(l + 2) {
                    *d -= h;
                }
                shift += h;

                p = diag[m];
                let (mut c, mut c2, mut c3) = (1.0, 1.0, 1.0);
                let el1 = off[l + 1];
                let (mut s, mut s2) = (0.0, 0.0);
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * off[i];
                    let h = c * p;
                    r = p.hypot(off[i]);
                    off[i + 1] = s * r;
                    s = off[i] / r;
                    c = p / r;
                    p = c * diag[i] - s * g;
                    diag[i + 1] = h + s * (c * g + s * diag[i]);

                    let (lo, hi) = basis.split_at_mut((i + 1) * n);
                    let ri = &mut lo[i * n..];
                    let ri1 = &mut hi[..n];
                    for (a, b) in ri.iter_mut().zip(ri1.iter_mut()) {
                        let (x, y) = (*a, *b);
                        *b = s * x + c * y;
                        *a = c * x - s * y;
                    }
                }
                p = -s * s2 * c3 * el1 * off[l] / dl1;
                off[l] = s * p;
                diag[l] = c * p;
                if off[l].abs() <= tol * tst1 {
                    break;
                }
            }
        }
        diag[l] += shift;
        off[l] = 0.0;
    }
    Ok(())
}

/// Applies `Q = H_0 H_1 … H_{n-3}` to every row of `vectors`.
fn back_transform(a: &[f64], n: usize, taus: &[f64], vectors: &mut [f64]) {
    if n < 3 {
        return;
    }
    let reflectors: Vec<(usize, Vec<f64>)> = (0..n - 2)
        .filter(|&k| taus[k] != 0.0)
        .map(|k| (k, (k + 1..n).map(|i| a[i * n + k]).collect()))
        .collect();
    vectors
        .par_chunks_mut(BACK_TRANSFORM_BLOCK * n)
        .for_each(|block| {
            for (k, v) in reflectors.iter().rev() {
                let tau = taus[*k];
                for row in block.chunks_exact_mut(n) {
                    let tail = &mut row[k + 1..];
                    let dot: f64 = dot(tail, v);
                    let scale = tau * dot;
                    for (t, vi) in tail.iter_mut().zip(v) {
                        *t -= scale * vi;
                    }
                }
            }
        });
}

/// Dot product with independent partial sums so the loop vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for lane in 0..4 {
            acc[lane] += a[4 * i + lane] * b[4 * i + lane];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.gen_range(-1.0..1.0);
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        m
    }

    fn residual(m: &[f64], n: usize, e: &Eigendecomposition) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..n {
            let v = e.vector(k);
            let mut r = 0.0;
            for i in 0..n {
                let mv: f64 = (0..n).map(|j| m[i * n + j] * v[j]).sum();
                r += (mv - e.values()[k] * v[i]).powi(2);
            }
            worst = worst.max(r.sqrt());
        }
        worst
    }

    fn orthonormality_error(e: &Eigendecomposition) -> f64 {
        let n = e.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let d: f64 = e.vector(i).iter().zip(e.vector(j)).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }

    #[test]
    fn two_by_two_analytic() {
        let e = symmetric_eigendecomposition(&[2.0, 1.0, 1.0, 2.0], 2, DEFAULT_TOLERANCE).unwrap();
        assert!((e.values()[0] - 3.0).abs() < 1e-12);
        assert!((e.values()[1] - 1.0).abs() < 1e-12);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vector(0)[0] - r).abs() < 1e-12 && (e.vector(0)[1] - r).abs() < 1e-12);
        assert!((e.vector(1)[0] - r).abs() < 1e-12 && (e.vector(1)[1] + r).abs() < 1e-12);
    }

    #[test]
    fn identity_gives_unit_eigenvalues() {
        let n = 5;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        let e = symmetric_eigendecomposition(&m, n, DEFAULT_TOLERANCE).unwrap();
        assert!(e.values().iter().all(|v| (v - 1.0).abs() < 1e-14));
        assert!(orthonormality_error(&e) < 1e-14);
        for k in 0..n {
            let first = e.vector(k).iter().find(|c| c.abs() > SIGN_THRESHOLD).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn one_by_one() {
        let e = symmetric_eigendecomposition(&[-4.0], 1, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(e.values(), &[-4.0]);
        assert_eq!(e.vectors(), &[1.0]);
    }

    #[test]
    fn diagonal_input_is_sorted() {
        let m = [1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0];
        let e = symmetric_eigendecomposition(&m, 3, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(e.values(), &[3.0, 2.0, 1.0]);
        assert_eq!(e.vector(0), &[0.0, 1.0, 0.0]);
        assert_eq!(e.vector(2), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_asymmetric() {
        let err = symmetric_eigendecomposition(&[1.0, 2.0, 0.0, 1.0], 2, DEFAULT_TOLERANCE).unwrap_err();
        assert!(matches!(err, SaakError::NotSymmetric(a) if a == 2.0));
    }

    #[test]
    fn rejects_bad_length() {
        assert!(symmetric_eigendecomposition(&[1.0, 2.0, 3.0], 2, DEFAULT_TOLERANCE).is_err());
        assert!(symmetric_eigendecomposition(&[], 0, DEFAULT_TOLERANCE).is_err());
    }

    #[test]
    fn random_matrices_satisfy_postconditions() {
        for (n, seed) in [(2, 1), (3, 2), (7, 3), (20, 4), (64, 5), (129, 6)] {
            let m = random_symmetric(n, seed);
            let e = symmetric_eigendecomposition(&m, n, DEFAULT_TOLERANCE).unwrap();
            let norm = frobenius_norm(&m);
            assert!(residual(&m, n, &e) <= 1e-12 * norm, "n={n}");
            assert!(orthonormality_error(&e) <= 1e-12, "n={n}");
            assert!(e.values().windows(2).all(|w| w[0] >= w[1]));
            let trace: f64 = (0..n).map(|i| m[i * n + i]).sum();
            let sum: f64 = e.values().iter().sum();
            assert!((trace - sum).abs() <= 1e-11 * norm.max(1.0));
        }
    }

    #[test]
    fn repeated_and_zero_eigenvalues() {
        // rank-2 projector-like matrix in 6 dims: eigenvalues {2, 2, 0, 0, 0, 0}
        let n = 6;
        let u = [1.0, 1.0, 0.0, 1.0, -1.0, 0.0];
        let w = [0.0, 1.0, 1.0, -1.0, 0.0, 1.0];
        let nu = u.iter().map(|x| x * x).sum::<f64>();
        let nw = w.iter().map(|x| x * x).sum::<f64>();
        let dot_uw: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert_eq!(dot_uw, 0.0);
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = 2.0 * (u[i] * u[j] / nu + w[i] * w[j] / nw);
            }
        }
        let e = symmetric_eigendecomposition(&m, n, DEFAULT_TOLERANCE).unwrap();
        assert!((e.values()[0] - 2.0).abs() < 1e-13);
        assert!((e.values()[1] - 2.0).abs() < 1e-13);
        assert!(e.values()[2..].iter().all(|v| v.abs() < 1e-13));
        assert!(orthonormality_error(&e) < 1e-13);
        assert!(residual(&m, n, &e) < 1e-13);
    }

    #[test]
    fn deterministic() {
        let m = random_symmetric(40, 9);
        let a = symmetric_eigendecomposition(&m, 40, DEFAULT_TOLERANCE).unwrap();
        let b = symmetric_eigendecomposition(&m, 40, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    /// Eigenvalues of a symmetric 3×3 matrix from the trigonometric solution
    /// of its characteristic cubic, descending.
    fn cubic_eigenvalues(a: &[f64; 9]) -> [f64; 3] {
        let p1 = a[1] * a[1] + a[2] * a[2] + a[5] * a[5];
        let q = (a[0] + a[4] + a[8]) / 3.0;
        let p2 = (a[0] - q).powi(2) + (a[4] - q).powi(2) + (a[8] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b: Vec<f64> = (0..9)
            .map(|i| (a[i] - if i % 4 == 0 { q } else { 0.0 }) / p)
            .collect();
        let det_b = b[0] * (b[4] * b[8] - b[5] * b[7]) - b[1] * (b[3] * b[8] - b[5] * b[6])
            + b[2] * (b[3] * b[7] - b[4] * b[6]);
        let phi = (det_b / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        [e1, 3.0 * q - e1 - e3, e3]
    }

    #[test]
    fn three_by_three_matches_cubic_roots() {
        let cases = [
            [2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0],
            [4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 5.0],
            [1.0, 0.3, -0.7, 0.3, -2.0, 0.1, -0.7, 0.1, 0.25],
        ];
        for a in cases {
            let e = symmetric_eigendecomposition(&a, 3, DEFAULT_TOLERANCE).unwrap();
            let expected = cubic_eigenvalues(&a);
            for (got, want) in e.values().iter().zip(expected) {
                assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
            }
        }
        // 2 − √2, 2, 2 + √2 for the second-difference matrix
        let e = symmetric_eigendecomposition(&cases[0], 3, DEFAULT_TOLERANCE).unwrap();
        let r2 = 2f64.sqrt();
        assert!((e.values()[0] - (2.0 + r2)).abs() < 1e-12);
        assert!((e.values()[2] - (2.0 - r2)).abs() < 1e-12);
    }
}
