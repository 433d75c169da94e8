//! Dense complex linear algebra and structured-matrix constructors.
//!
//! Matrices are carried as `nalgebra` column-major matrices. The
//! decompositions (Hermitian eigen, SVD, general eigenvalues) are delegated to
//! `faer`, which is noticeably faster at the sizes the SDP solver hits every
//! iteration.
//!
//! Decompositions are sign-normalized: the first non-negligible entry of every
//! eigenvector and right-singular vector is real and positive, so downstream
//! beamformers and phase designs are reproducible bit-for-bit.

use faer::Side;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
pub const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Tolerance used for Hermitian checks and decomposition post-conditions.
pub const DECOMP_TOL: f64 = 1e-9;

/// A Hermitian Toeplitz matrix stored by its first row.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianToeplitz {
    generator: Vec<Complex64>,
}

impl HermitianToeplitz {
    /// Builds from a first row; the leading element must be real.
    pub fn new(generator: Vec<Complex64>) -> Result<Self> {
        if generator.is_empty() {
            return Err(Error::Structure("empty Toeplitz generator".into()));
        }
        if generator[0].im.abs() >= 1e-12 {
            return Err(Error::Structure(format!(
                "Toeplitz diagonal must be real, got imaginary part {:.3e}",
                generator[0].im
            )));
        }
        let mut generator = generator;
        generator[0].im = 0.0;
        Ok(Self { generator })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            generator: vec![ZERO; n.max(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.generator.len()
    }

    pub fn generator(&self) -> &[Complex64] {
        &self.generator
    }

    pub fn trace(&self) -> f64 {
        self.generator[0].re * self.dim() as f64
    }

    /// Entry (i, j) is `generator[j - i]` above the diagonal and its conjugate below.
    pub fn materialize(&self) -> ComplexMatrix {
        let n = self.dim();
        ComplexMatrix::from_fn(n, n, |i, j| {
            if j >= i {
                self.generator[j - i]
            } else {
                self.generator[i - j].conj()
            }
        })
    }

    /// Projects an arbitrary square matrix onto Hermitian Toeplitz structure
    /// (least squares): each generator entry is the mean of its diagonal and
    /// the conjugated mirror diagonal.
    pub fn project(m: &ComplexMatrix) -> Self {
        let n = m.nrows();
        let mut generator = vec![ZERO; n];
        for (k, g) in generator.iter_mut().enumerate() {
            let mut acc = ZERO;
            for i in 0..n - k {
                acc += m[(i, i + k)] + m[(i + k, i)].conj();
            }
            *g = acc / (2.0 * (n - k) as f64);
        }
        generator[0].im = 0.0;
        Self { generator }
    }

    pub(crate) fn from_generator_unchecked(generator: Vec<Complex64>) -> Self {
        Self { generator }
    }
}

/// Materialized Hermitian Toeplitz matrix with first row `gen`.
pub fn toeplitz_from_generator(gen: &[Complex64]) -> Result<ComplexMatrix> {
    Ok(HermitianToeplitz::new(gen.to_vec())?.materialize())
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Column-wise Kronecker product.
pub fn khatri_rao(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (ra, rb) = (a.nrows(), b.nrows());
    let mut out = ComplexMatrix::zeros(ra * rb, a.ncols());
    for k in 0..a.ncols() {
        for i in 0..ra {
            let aik = a[(i, k)];
            for j in 0..rb {
                out[(i * rb + j, k)] = aik * b[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Column-major vectorization, so `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.
pub fn vec(a: &ComplexMatrix) -> ComplexVector {
    ComplexVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &ComplexVector, rows: usize, cols: usize) -> Result<ComplexMatrix> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(ComplexMatrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn frobenius(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_hermitian(a: &ComplexMatrix, tol: f64) -> bool {
    if a.nrows() != a.ncols() {
        return false;
    }
    let scale = max_abs(a).max(1.0);
    let n = a.nrows();
    for j in 0..n {
        for i in 0..=j {
            if (a[(i, j)] - a[(j, i)].conj()).norm() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Thin SVD with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: ComplexMatrix,
    pub singular_values: Vec<f64>,
    pub v: ComplexMatrix,
}

impl Svd {
    pub fn rank(&self, rtol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values
            .iter()
            .filter(|&&s| s > rtol * top && s > 0.0)
            .count()
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        let mut us = self.u.clone();
        for (k, s) in self.singular_values.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        us * self.v.adjoint()
    }
}

#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Column k pairs with `eigenvalues[k]`.
    pub eigenvectors: ComplexMatrix,
}

pub(crate) fn to_faer(a: &ComplexMatrix) -> faer::Mat<Complex64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub(crate) fn from_faer(a: faer::MatRef<'_, Complex64>) -> ComplexMatrix {
    ComplexMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Phase factor that makes the first non-negligible entry of `col` real-positive.
fn phase_fix(col: nalgebra::DVectorView<'_, Complex64>) -> Complex64 {
    let norm = col.norm();
    if norm == 0.0 {
        return ONE;
    }
    for z in col.iter() {
        if z.norm() > 1e-8 * norm {
            return z.conj() / z.norm();
        }
    }
    ONE
}

pub fn svd(a: &ComplexMatrix) -> Svd {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Svd {
            u: ComplexMatrix::zeros(m, 0),
            singular_values: Vec::new(),
            v: ComplexMatrix::zeros(n, 0),
        };
    }
    let f = to_faer(a);
    // faer's SVD only fails on non-finite input.
    let dec = f.thin_svd().expect("SVD of finite matrix");
    let mut u = from_faer(dec.U());
    let mut v = from_faer(dec.V());
    let s: Vec<f64> = dec.S().column_vector().iter().map(|z| z.re).collect();
    for c in 0..k {
        let ph = phase_fix(v.column(c));
        for i in 0..n {
            v[(i, c)] *= ph;
        }
        for i in 0..m {
            u[(i, c)] *= ph;
        }
    }
    Svd {
        u,
        singular_values: s,
        v,
    }
}

/// Hermitian eigendecomposition; rejects inputs that are not Hermitian to 1e-9.
pub fn eig_hermitian(a: &ComplexMatrix) -> Result<HermitianEigen> {
    if !is_hermitian(a, DECOMP_TOL) {
        return Err(Error::Structure("eig_hermitian needs a Hermitian matrix".into()));
    }
    let (vals, mut vecs) = eig_hermitian_ascending(a);
    let n = vals.len();
    for c in 0..n {
        let ph = phase_fix(vecs.column(c));
        for i in 0..n {
            vecs[(i, c)] *= ph;
        }
    }
    let order: Vec<usize> = (0..n).rev().collect();
    let eigenvalues = order.iter().map(|&k| vals[k]).collect();
    let eigenvectors = ComplexMatrix::from_fn(n, n, |i, j| vecs[(i, order[j])]);
    Ok(HermitianEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Raw ascending eigendecomposition without checks or sign fixing.
pub(crate) fn eig_hermitian_ascending(a: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), ComplexMatrix::zeros(0, 0));
    }
    let f = to_faer(a);
    let dec = f
        .self_adjoint_eigen(Side::Lower)
        .expect("eigendecomposition of finite Hermitian matrix");
    let vals = dec.S().column_vector().iter().map(|z| z.re).collect();
    (vals, from_faer(dec.U()))
}

pub(crate) fn min_eigenvalue(a: &ComplexMatrix) -> f64 {
    let f = to_faer(a);
    f.self_adjoint_eigenvalues(Side::Lower)
        .expect("eigenvalues of finite Hermitian matrix")
        .first()
        .copied()
        .unwrap_or(0.0)
}

/// Euclidean projection of a Hermitian matrix onto the PSD cone.
pub fn project_psd(a: &ComplexMatrix) -> ComplexMatrix {
    let n = a.nrows();
    let f = to_faer(a);
    let dec = f
        .self_adjoint_eigen(Side::Lower)
        .expect("eigendecomposition of finite Hermitian matrix");
    let s = dec.S().column_vector();
    let u = dec.U();
    let keep: Vec<usize> = (0..n).filter(|&k| s[k].re > 0.0).collect();
    if keep.is_empty() {
        return ComplexMatrix::zeros(n, n);
    }
    let scaled = faer::Mat::from_fn(n, keep.len(), |i, c| {
        let k = keep[c];
        u[(i, k)] * s[k].re.sqrt()
    });
    let p = &scaled * scaled.adjoint();
    from_faer(p.as_ref())
}

/// Moore-Penrose inverse via SVD; singular values below
/// `max(m, n) * eps * s_max` are treated as zero.
pub fn pinv(a: &ComplexMatrix) -> ComplexMatrix {
    let (m, n) = a.shape();
    let dec = svd(a);
    let top = dec.singular_values.first().copied().unwrap_or(0.0);
    let cutoff = m.max(n) as f64 * f64::EPSILON * top;
    let mut vs = dec.v.clone();
    for (k, s) in dec.singular_values.iter().enumerate() {
        let inv = if *s > cutoff && *s > 0.0 { 1.0 / s } else { 0.0 };
        vs.column_mut(k).scale_mut(inv);
    }
    vs * dec.u.adjoint()
}

/// 2-norm condition number (infinite for rank-deficient input).
pub fn condition_number(a: &ComplexMatrix) -> f64 {
    let s = svd(a).singular_values;
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 0.0,
    }
}

pub fn spectral_norm(a: &ComplexMatrix) -> f64 {
    svd(a).singular_values.first().copied().unwrap_or(0.0)
}

/// Roots of `c[0] + c[1] z + ... + c[d] z^d` (leading zeros are stripped).
pub fn polynomial_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let scale = coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut deg = coeffs.len();
    while deg > 0 && coeffs[deg - 1].norm() <= 1e-300_f64.max(scale * 1e-15) {
        deg -= 1;
    }
    if deg <= 1 {
        return Vec::new();
    }
    let d = deg - 1;
    let lead = coeffs[d];
    // Companion matrix with the normalized coefficients in the first row.
    let comp = faer::Mat::from_fn(d, d, |i, j| {
        if i == 0 {
            -coeffs[d - 1 - j] / lead
        } else if i == j + 1 {
            ONE
        } else {
            ZERO
        }
    });
    let mut roots = comp.eigenvalues().expect("companion eigenvalues");
    for r in roots.iter_mut() {
        *r = polish_root(coeffs, deg, *r);
    }
    roots
}

fn horner(coeffs: &[Complex64], deg: usize, z: Complex64) -> (Complex64, Complex64) {
    let mut p = coeffs[deg - 1];
    let mut dp = ZERO;
    for k in (0..deg - 1).rev() {
        dp = dp * z + p;
        p = p * z + coeffs[k];
    }
    (p, dp)
}

fn polish_root(coeffs: &[Complex64], deg: usize, mut z: Complex64) -> Complex64 {
    let (mut best_val, _) = horner(coeffs, deg, z);
    for _ in 0..3 {
        let (p, dp) = horner(coeffs, deg, z);
        if dp.norm() == 0.0 {
            break;
        }
        let cand = z - p / dp;
        let (pv, _) = horner(coeffs, deg, cand);
        if pv.norm() < best_val.norm() {
            z = cand;
            best_val = pv;
        } else {
            break;
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, cols: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(r, cols, |_, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn approx_eq(a: &ComplexMatrix, b: &ComplexMatrix, tol: f64) -> bool {
        a.shape() == b.shape() && frobenius(&(a - b)) <= tol
    }

    #[test]
    fn toeplitz_diagonal_and_identity() {
        let t = toeplitz_from_generator(&[c(2.0, 0.0), ZERO, ZERO]).unwrap();
        assert!(approx_eq(&t, &(ComplexMatrix::identity(3, 3) * c(2.0, 0.0)), 0.0));
        let mut g = vec![ZERO; 5];
        g[0] = ONE;
        let t = toeplitz_from_generator(&g).unwrap();
        assert!(approx_eq(&t, &ComplexMatrix::identity(5, 5), 0.0));
    }

    #[test]
    fn toeplitz_rejects_complex_diagonal() {
        let err = toeplitz_from_generator(&[c(1.0, 1e-6), ONE]).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
        assert!(toeplitz_from_generator(&[]).is_err());
    }

    #[test]
    fn toeplitz_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g: Vec<Complex64> = (0..6).map(|_| c(rng.random(), rng.random())).collect();
        g[0].im = 0.0;
        let t = toeplitz_from_generator(&g).unwrap();
        assert!(max_abs(&(&t - t.adjoint())) <= 1e-12);
        for i in 0..6 {
            for j in 0..6 {
                if j >= i {
                    assert_eq!(t[(i, j)], g[j - i]);
                }
            }
        }
    }

    #[test]
    fn toeplitz_projection_recovers_structured_input() {
        let g = vec![c(3.0, 0.0), c(0.5, -0.25), c(-1.0, 2.0)];
        let t = toeplitz_from_generator(&g).unwrap();
        let p = HermitianToeplitz::project(&t);
        for (a, b) in p.generator().iter().zip(&g) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn kron_identities() {
        let i2 = ComplexMatrix::identity(2, 2);
        assert!(approx_eq(&kron(&i2, &i2), &ComplexMatrix::identity(4, 4), 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = random(&mut rng, 3, 2);
        let one = ComplexMatrix::from_element(1, 1, ONE);
        assert!(approx_eq(&kron(&one, &b), &b, 0.0));
    }

    #[test]
    fn kron_matches_quadruple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 2, 2);
        let b = random(&mut rng, 2, 2);
        let k = kron(&a, &b);
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..2 {
                    for q in 0..2 {
                        assert_eq!(k[(i * 2 + p, j * 2 + q)], a[(i, j)] * b[(p, q)]);
                    }
                }
            }
        }
    }

    #[test]
    fn khatri_rao_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 3, 2);
        let b = random(&mut rng, 3, 2);
        let kr = khatri_rao(&a, &b).unwrap();
        for k in 0..2 {
            let expect = kron(&a.columns(k, 1).into_owned(), &b.columns(k, 1).into_owned());
            assert_eq!(kr.column(k).into_owned(), expect.column(0).into_owned());
        }
        let i2 = ComplexMatrix::identity(2, 2);
        let kr = khatri_rao(&i2, &i2).unwrap();
        assert_eq!(kr.shape(), (4, 2));
        assert_eq!(kr[(0, 0)], ONE);
        assert_eq!(kr[(3, 1)], ONE);
        assert_eq!(kr.iter().filter(|z| z.norm() > 0.0).count(), 2);
        assert!(khatri_rao(&random(&mut rng, 2, 3), &i2).is_err());
    }

    #[test]
    fn vec_conventions() {
        let v = vec(&ComplexMatrix::identity(2, 2));
        assert_eq!(v.as_slice(), &[ONE, ZERO, ZERO, ONE]);
        let col = ComplexMatrix::from_column_slice(3, 1, &[ONE, J, ZERO]);
        assert_eq!(vec(&col).as_slice(), col.as_slice());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, x, b) = (
            random(&mut rng, 2, 2),
            random(&mut rng, 2, 2),
            random(&mut rng, 2, 2),
        );
        let lhs = vec(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec(&x);
        assert!((lhs - rhs).norm() < 1e-12);
        assert_eq!(unvec(&vec(&x), 2, 2).unwrap(), x);
    }

    fn check_penrose(a: &ComplexMatrix, p: &ComplexMatrix, tol: f64) {
        let scale = spectral_norm(a).max(1.0);
        assert!(frobenius(&(a * p * a - a)) <= tol * scale);
        assert!(frobenius(&(p * a * p - p)) <= tol * spectral_norm(p).max(1.0));
        let ap = a * p;
        let pa = p * a;
        assert!(frobenius(&(&ap - ap.adjoint())) <= tol);
        assert!(frobenius(&(&pa - pa.adjoint())) <= tol);
    }

    #[test]
    fn pinv_examples() {
        let i3 = ComplexMatrix::identity(3, 3);
        assert!(approx_eq(&pinv(&i3), &i3, 1e-12));
        let d = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![c(2.0, 0.0), ZERO]));
        let p = pinv(&d);
        assert!((p[(0, 0)] - c(0.5, 0.0)).norm() < 1e-14);
        assert!(p[(1, 1)].norm() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tall = random(&mut rng, 6, 3);
        let left = pinv(&tall) * &tall;
        assert!(approx_eq(&left, &ComplexMatrix::identity(3, 3), 1e-9));
    }

    #[test]
    fn pinv_penrose_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..100 {
            let m = 1 + trial % 5;
            let n = 1 + (trial / 5) % 5;
            let mut a = random(&mut rng, m, n);
            if trial % 7 == 0 && n > 1 {
                // force rank deficiency
                let c0 = a.column(0).into_owned();
                a.set_column(n - 1, &c0);
            }
            check_penrose(&a, &pinv(&a), 1e-9);
        }
    }

    #[test]
    fn svd_examples() {
        let s = svd(&ComplexMatrix::identity(3, 3));
        assert!(s.singular_values.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let d = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![c(3.0, 0.0), ONE]));
        let s = svd(&d);
        assert!((s.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((s.singular_values[1] - 1.0).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, 4, 3);
        let s = svd(&a);
        assert!(frobenius(&(s.reconstruct() - &a)) <= 1e-9 * frobenius(&a));
        assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        for k in 0..3 {
            let first = s.v.column(k).iter().find(|z| z.norm() > 1e-8).copied().unwrap();
            assert!(first.im.abs() < 1e-12 && first.re > 0.0);
        }
    }

    #[test]
    fn eig_hermitian_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = random(&mut rng, 5, 5);
        let a = &b + b.adjoint();
        let e = eig_hermitian(&a).unwrap();
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for k in 0..5 {
            let v = e.eigenvectors.column(k);
            let r = &a * v - v * c(e.eigenvalues[k], 0.0);
            assert!(r.norm() <= 1e-9 * e.eigenvalues[0].abs().max(1.0));
        }
        assert!(eig_hermitian(&b).is_err());
    }

    #[test]
    fn psd_projection_clips_negative_spectrum() {
        let d = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![
            c(2.0, 0.0),
            c(-1.0, 0.0),
        ]));
        let p = project_psd(&d);
        assert!((p[(0, 0)] - c(2.0, 0.0)).norm() < 1e-12);
        assert!(p[(1, 1)].norm() < 1e-12);
    }

    #[test]
    fn roots_of_known_polynomial() {
        // (z - 1)(z - j)(z + 0.5) expanded
        let r = [ONE, J, c(-0.5, 0.0)];
        let mut coeffs = vec![ONE];
        for root in r {
            let mut next = vec![ZERO; coeffs.len() + 1];
            for (k, a) in coeffs.iter().enumerate() {
                next[k + 1] += *a;
                next[k] -= *a * root;
            }
            coeffs = next;
        }
        let found = polynomial_roots(&coeffs);
        assert_eq!(found.len(), 3);
        for root in r {
            assert!(found.iter().any(|z| (z - root).norm() < 1e-12));
        }
    }
}
