//! Dense real-matrix helpers: symmetric eigensolves, definiteness, PSD square
//! roots, rank and block assembly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Tolerance used when a caller does not supply one.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Square matrix stored in symmetrized form.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat(Mat);

impl SymMat {
    /// Accepts `m` if it is square, finite and symmetric up to
    /// `1e-12 * max(1, |m|_F)`; the stored value is `(m + m^T) / 2`.
    pub fn new(m: Mat) -> Result<Self> {
        check_finite(&m, "symmetric matrix")?;
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let asym = (&m - m.transpose()).norm();
        if asym > 1e-12 * m.norm().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "matrix is not symmetric (|M - M^T|_F = {asym:.3e})"
            )));
        }
        Ok(SymMat(symmetrize(&m)))
    }

    /// Symmetrizes `m` unconditionally. Use for matrices that are symmetric in
    /// exact arithmetic but carry round-off.
    pub fn symmetrized(m: &Mat) -> Result<Self> {
        check_finite(m, "symmetric matrix")?;
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(SymMat(symmetrize(m)))
    }

    pub fn identity(n: usize) -> Self {
        SymMat(Mat::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMat(Mat::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }

    pub fn neg(&self) -> Self {
        SymMat(-&self.0)
    }
}

impl Serialize for SymMat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        crate::io::rows_of(&self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let m = crate::io::mat_from_rows(&rows).map_err(serde::de::Error::custom)?;
        SymMat::new(m).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Definiteness {
    Pd,
    Psd,
    Nd,
    Nsd,
    Indefinite,
    Zero,
}

impl Definiteness {
    /// Classification of `-M` given the classification of `M`.
    pub fn negated(self) -> Self {
        match self {
            Definiteness::Pd => Definiteness::Nd,
            Definiteness::Psd => Definiteness::Nsd,
            Definiteness::Nd => Definiteness::Pd,
            Definiteness::Nsd => Definiteness::Psd,
            other => other,
        }
    }
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn check_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{what} has non-finite entries"
        )))
    }
}

/// Eigenvalues in ascending order together with matching eigenvectors (columns).
pub fn sym_eigen(m: &SymMat) -> (Vector, Mat) {
    let n = m.dim();
    if n == 0 {
        return (Vector::zeros(0), Mat::zeros(0, 0));
    }
    let eig = m.as_mat().clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = Vector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = Mat::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vector {
    if m.nrows() == 0 {
        return Vector::zeros(0);
    }
    let mut v: Vec<f64> = symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    Vector::from_vec(v)
}

pub fn max_eig(m: &Mat) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_eig(m: &Mat) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest singular value; zero for empty matrices.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn definiteness(m: &SymMat, tol: f64) -> Result<Definiteness> {
    check_finite(m.as_mat(), "matrix")?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let vals = sym_eigenvalues(m.as_mat());
    let s = spectral_norm(m.as_mat()).max(1.0);
    let thr = tol * s;
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(if vals.iter().all(|l| l.abs() <= thr) {
        Definiteness::Zero
    } else if lo > thr {
        Definiteness::Pd
    } else if hi < -thr {
        Definiteness::Nd
    } else if lo >= -thr {
        Definiteness::Psd
    } else if hi <= thr {
        Definiteness::Nsd
    } else {
        Definiteness::Indefinite
    })
}

/// Symmetric PSD square root. Eigenvalues inside the classification band are
/// clamped to zero.
pub fn psd_sqrt(m: &SymMat) -> Result<SymMat> {
    let class = definiteness(m, DEFAULT_TOL)?;
    let (vals, vecs) = sym_eigen(m);
    if !matches!(
        class,
        Definiteness::Pd | Definiteness::Psd | Definiteness::Zero
    ) {
        let worst = vals.iter().copied().fold(f64::INFINITY, f64::min);
        return Err(Error::Domain(format!(
            "square root needs a PSD matrix; found eigenvalue {worst:.6e} ({class:?})"
        )));
    }
    let thr = DEFAULT_TOL * spectral_norm(m.as_mat()).max(1.0);
    let roots = vals.map(|l| if l <= thr { 0.0 } else { l.sqrt() });
    let n = Mat::from_diagonal(&roots);
    SymMat::symmetrized(&(&vecs * n * vecs.transpose()))
}

/// Number of singular values above `tol * sigma_max`.
pub fn row_rank(m: &Mat, tol: f64) -> Result<usize> {
    check_finite(m, "matrix")?;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0);
    }
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * smax).count())
}

/// Least-squares solution of `a x = b` via SVD (minimum norm when rank deficient).
pub fn lstsq(a: &Mat, b: &Mat) -> Result<Mat> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = 1e-12 * smax.max(f64::MIN_POSITIVE);
    svd.solve(b, eps).map_err(|e| Error::Domain(e.to_string()))
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("matrix is singular".into()))
}

pub fn vstack(blocks: &[&Mat]) -> Mat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn hstack(blocks: &[&Mat]) -> Mat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Assembles a symmetric matrix from its upper-triangular blocks.
/// `upper[i][j]` for `j >= i` is block (i, j); `None` means zero.
pub fn sym_blocks(sizes: &[usize], upper: &[Vec<Option<Mat>>]) -> Mat {
    let total: usize = sizes.iter().sum();
    let offs: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let mut out = Mat::zeros(total, total);
    for (i, row) in upper.iter().enumerate() {
        for (k, blk) in row.iter().enumerate() {
            let j = i + k;
            if let Some(b) = blk {
                assert_eq!(
                    (b.nrows(), b.ncols()),
                    (sizes[i], sizes[j]),
                    "block ({i},{j})"
                );
                out.view_mut((offs[i], offs[j]), (sizes[i], sizes[j]))
                    .copy_from(b);
                if i != j {
                    out.view_mut((offs[j], offs[i]), (sizes[j], sizes[i]))
                        .copy_from(&b.transpose());
                }
            }
        }
    }
    out
}

/// Builds a matrix from row slices (convenience for literals).
pub fn mat(rows: &[&[f64]]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    Mat::from_fn(r, c, |i, j| rows[i][j])
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sym(rows: &[&[f64]]) -> SymMat {
        SymMat::new(mat(rows)).unwrap()
    }

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_psd(seed: u64, n: usize) -> SymMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(1..=n);
        let a = random_mat(&mut rng, n, k);
        SymMat::symmetrized(&(&a * a.transpose())).unwrap()
    }

    #[test]
    fn classifies_reference_matrices() {
        assert_eq!(
            definiteness(&SymMat::identity(2), 1e-9).unwrap(),
            Definiteness::Pd
        );
        let resid = sym(&[&[-23.6176, -30.3340], &[-30.3340, -39.1227]]);
        assert_eq!(definiteness(&resid, 1e-9).unwrap(), Definiteness::Nd);
        let p = sym(&[&[4.1628, -2.0853], &[-2.0853, 1.1872]]);
        assert_eq!(definiteness(&p, 1e-9).unwrap(), Definiteness::Pd);
        assert_eq!(
            definiteness(&SymMat::zeros(3), 1e-9).unwrap(),
            Definiteness::Zero
        );
        let semi = sym(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(definiteness(&semi, 1e-9).unwrap(), Definiteness::Psd);
        assert_eq!(definiteness(&semi.neg(), 1e-9).unwrap(), Definiteness::Nsd);
        let ind = sym(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert_eq!(definiteness(&ind, 1e-9).unwrap(), Definiteness::Indefinite);
    }

    #[test]
    fn rejects_non_finite_and_asymmetric() {
        let mut m = Mat::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(SymMat::new(m), Err(Error::InvalidInput(_))));
        assert!(SymMat::new(mat(&[&[1.0, 2.0], &[0.0, 1.0]])).is_err());
    }

    #[test]
    fn sqrt_of_simple_cases() {
        let r = psd_sqrt(&SymMat::identity(3)).unwrap();
        assert!((r.as_mat() - Mat::identity(3, 3)).norm() < 1e-12);
        let d = SymMat::new(Mat::from_diagonal(&Vector::from_vec(vec![4.0, 9.0]))).unwrap();
        let r = psd_sqrt(&d).unwrap();
        assert!((r.as_mat() - mat(&[&[2.0, 0.0], &[0.0, 3.0]])).norm() < 1e-12);
    }

    #[test]
    fn sqrt_rejects_indefinite_and_names_eigenvalue() {
        let err = psd_sqrt(&sym(&[&[1.0, 0.0], &[0.0, -2.0]])).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Domain(_)));
        assert!(msg.contains("-2.0"), "{msg}");
    }

    #[test]
    fn sqrt_matches_eigenpair_reconstruction() {
        let m = random_psd(5, 5);
        let r = psd_sqrt(&m).unwrap();
        // Oracle: nalgebra's unsorted eigendecomposition, reconstructed directly.
        let eig = m.as_mat().clone().symmetric_eigen();
        let mut oracle = Mat::zeros(5, 5);
        for i in 0..5 {
            let v = eig.eigenvectors.column(i);
            oracle += eig.eigenvalues[i].max(0.0).sqrt() * v * v.transpose();
        }
        assert!((r.as_mat() - &oracle).norm() < 1e-7);
        assert!((r.as_mat() * r.as_mat() - m.as_mat()).norm() < 1e-9 * m.as_mat().norm().max(1.0));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(row_rank(&Mat::zeros(3, 5), 1e-9).unwrap(), 0);
        let w0 = mat(&[
            &[0.0, 0.2474, 0.4794, 0.6816, 0.8415],
            &[2.0, 1.269, 1.3208, 1.5113, 1.7451],
            &[-1.0, -2.993, -4.3724, -6.0225, -8.2189],
        ]);
        assert_eq!(row_rank(&w0, 1e-9).unwrap(), 3);
    }

    #[test]
    fn sym_blocks_mirrors_off_diagonal() {
        let a = mat(&[&[1.0]]);
        let b = mat(&[&[2.0, 3.0]]);
        let c = mat(&[&[4.0, 5.0], &[5.0, 6.0]]);
        let m = sym_blocks(&[1, 2], &[vec![Some(a), Some(b)], vec![Some(c)]]);
        assert_eq!(
            m,
            mat(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 5.0], &[3.0, 5.0, 6.0]])
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn sqrt_squares_back(seed in any::<u64>(), n in 1usize..=20) {
            let m = random_psd(seed, n);
            let r = psd_sqrt(&m).unwrap();
            let err = (r.as_mat() * r.as_mat() - m.as_mat()).norm();
            prop_assert!(err <= 1e-9 * m.as_mat().norm().max(1.0), "err {err}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn negation_mirrors_class(seed in any::<u64>(), n in 1usize..=6, shift in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mat(&mut rng, n, n);
            let m = SymMat::symmetrized(&(&a * a.transpose() + Mat::identity(n, n) * shift)).unwrap();
            let c = definiteness(&m, 1e-9).unwrap();
            prop_assert_eq!(definiteness(&m.neg(), 1e-9).unwrap(), c.negated());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn rank_invariant_under_permutation_and_mixing(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = rng.random_range(1..=5);
            let c = rng.random_range(1..=8);
            let k = rng.random_range(1..=r.min(c));
            let m = random_mat(&mut rng, r, k) * random_mat(&mut rng, k, c);
            let base = row_rank(&m, 1e-9).unwrap();
            let mut perm: Vec<usize> = (0..r).collect();
            for i in (1..r).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let permuted = Mat::from_fn(r, c, |i, j| m[(perm[i], j)]);
            prop_assert_eq!(row_rank(&permuted, 1e-9).unwrap(), base);
            // Well-conditioned mixing matrix: identity plus a small perturbation.
            let t = Mat::identity(r, r) + random_mat(&mut rng, r, r) * (0.3 / r as f64);
            prop_assert_eq!(row_rank(&(t * &m), 1e-9).unwrap(), base);
        }
    }
}
