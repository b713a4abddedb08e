//! Quadratic constraints `[z; v]' [Qh Sh; Sh' Rh] [z; v] >= 0` describing
//! classes of nonlinearities `v = f(t, z)`, their lift to state coordinates,
//! and a regularity test.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{self, definiteness, Definiteness, Mat, SymMat, Vector, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `Rh` negative definite.
    StrictR,
    /// `z' v >= 0`: `Qh = 0`, `Rh = 0`.
    Passive,
}

/// Which builder produced a constraint. Kept so that class-specific shortcuts
/// (such as the sector regularity test) survive serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Origin {
    Lipschitz {
        ell: f64,
    },
    Sector {
        #[serde(with = "crate::io::mat_rows")]
        k1: Mat,
        #[serde(with = "crate::io::mat_rows")]
        k2: Mat,
    },
    ConvexGradient {
        m: f64,
        ell: f64,
    },
    PartialGradient,
    Rnn,
    Passive,
    #[default]
    Custom,
}

impl Origin {
    pub fn is_custom(&self) -> bool {
        matches!(self, Origin::Custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadConstraint {
    pub kind: ConstraintKind,
    pub q_hat: SymMat,
    pub s_hat: Mat,
    pub r_hat: SymMat,
    pub h: Mat,
    pub origin: Origin,
    /// Input-matrix structure implied by the class (partial-gradient bounds).
    pub l_structure: Option<Mat>,
}

impl QuadConstraint {
    pub fn new(
        kind: ConstraintKind,
        q_hat: SymMat,
        s_hat: Mat,
        r_hat: SymMat,
        h: Mat,
    ) -> Result<Self> {
        let c = QuadConstraint {
            kind,
            q_hat,
            s_hat,
            r_hat,
            h,
            origin: Origin::Custom,
            l_structure: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn p(&self) -> usize {
        self.q_hat.dim()
    }

    pub fn q(&self) -> usize {
        self.r_hat.dim()
    }

    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    /// Replaces `H` (must have `p` rows).
    pub fn with_h(mut self, h: Mat) -> Result<Self> {
        self.h = h;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (p, q) = (self.p(), self.q());
        if self.s_hat.shape() != (p, q) {
            return Err(Error::Dimension(format!(
                "Shat is {:?}, expected ({p}, {q})",
                self.s_hat.shape()
            )));
        }
        if self.h.nrows() != p || self.h.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "H is {:?}, expected {p} rows",
                self.h.shape()
            )));
        }
        matcore::check_finite(&self.s_hat, "Shat")?;
        matcore::check_finite(&self.h, "H")?;
        match self.kind {
            ConstraintKind::StrictR => {
                let class = definiteness(&self.r_hat, DEFAULT_TOL)?;
                if class != Definiteness::Nd {
                    return Err(Error::InvalidInput(format!(
                        "Rhat must be negative definite, classified {class:?}"
                    )));
                }
            }
            ConstraintKind::Passive => {
                if matcore::max_abs(self.q_hat.as_mat()) != 0.0
                    || matcore::max_abs(self.r_hat.as_mat()) != 0.0
                {
                    return Err(Error::InvalidInput(
                        "passive constraint needs Qhat = 0 and Rhat = 0".into(),
                    ));
                }
                if matcore::row_rank(&self.s_hat.transpose(), DEFAULT_TOL)? != q {
                    return Err(Error::InvalidInput(
                        "passive constraint needs Shat of full column rank".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The full `(p+q) x (p+q)` matrix of the quadratic form.
    pub fn block_matrix(&self) -> Mat {
        matcore::sym_blocks(
            &[self.p(), self.q()],
            &[
                vec![Some(self.q_hat.as_mat().clone()), Some(self.s_hat.clone())],
                vec![Some(self.r_hat.as_mat().clone())],
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedConstraint {
    pub q: SymMat,
    pub s: Mat,
    pub r: SymMat,
    pub q_class: Definiteness,
    pub kind: ConstraintKind,
}

impl LiftedConstraint {
    pub fn n(&self) -> usize {
        self.q.dim()
    }

    pub fn nq(&self) -> usize {
        self.r.dim()
    }

    /// Value of the lifted form at `(x, v)`.
    pub fn evaluate(&self, x: &Vector, v: &Vector) -> f64 {
        let q = self.q.as_mat();
        let r = self.r.as_mat();
        x.dot(&(q * x)) + 2.0 * x.dot(&(&self.s * v)) + v.dot(&(r * v))
    }

    pub fn block_matrix(&self) -> Mat {
        matcore::sym_blocks(
            &[self.n(), self.nq()],
            &[
                vec![Some(self.q.as_mat().clone()), Some(self.s.clone())],
                vec![Some(self.r.as_mat().clone())],
            ],
        )
    }
}

fn identity(n: usize) -> Mat {
    Mat::identity(n, n)
}

fn sym_diag(vals: &[f64]) -> SymMat {
    SymMat::new(Mat::from_diagonal(&Vector::from_column_slice(vals)))
        .expect("diagonal is symmetric")
}

pub fn build_lipschitz(ell: f64, p: usize, q: usize) -> Result<QuadConstraint> {
    if !(ell > 0.0) || !ell.is_finite() {
        return Err(Error::InvalidInput(format!(
            "Lipschitz bound must be positive, got {ell}"
        )));
    }
    let mut c = QuadConstraint::new(
        ConstraintKind::StrictR,
        SymMat::new(identity(p) * (ell * ell))?,
        Mat::zeros(p, q),
        SymMat::new(-identity(q))?,
        identity(p),
    )?;
    c.origin = Origin::Lipschitz { ell };
    Ok(c)
}

pub fn build_sector(k1: &Mat, k2: &Mat) -> Result<QuadConstraint> {
    if k1.shape() != k2.shape() {
        return Err(Error::Dimension(format!(
            "sector bounds differ in shape: {:?} vs {:?}",
            k1.shape(),
            k2.shape()
        )));
    }
    let (q, p) = k1.shape();
    let q_hat = -(k2.transpose() * k1 + k1.transpose() * k2);
    let mut c = QuadConstraint::new(
        ConstraintKind::StrictR,
        SymMat::symmetrized(&q_hat)?,
        k1.transpose() + k2.transpose(),
        SymMat::new(-identity(q) * 2.0)?,
        identity(p),
    )?;
    c.origin = Origin::Sector {
        k1: k1.clone(),
        k2: k2.clone(),
    };
    Ok(c)
}

pub fn build_convex_gradient(m: f64, ell: f64, n: usize) -> Result<QuadConstraint> {
    if !(m > 0.0 && m < ell && ell.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "convex-gradient parameters need 0 < m < ell, got m = {m}, ell = {ell}"
        )));
    }
    let mut c = QuadConstraint::new(
        ConstraintKind::StrictR,
        SymMat::new(identity(n) * (-2.0 * m * ell))?,
        identity(n) * (ell + m),
        SymMat::new(-identity(n) * 2.0)?,
        identity(n),
    )?;
    c.origin = Origin::ConvexGradient { m, ell };
    Ok(c)
}

/// Partial-derivative bounds `funder <= d fhat_i / d x_j <= fbar` for `n = 2`.
/// The diagonal of `Qhat` sums `cbar_ij - c_ij` over `i`, which mixes
/// half-widths and midpoints; see the README for the caveat.
pub fn build_partial_gradient_bounds(fbar: &Mat, funder: &Mat) -> Result<QuadConstraint> {
    if fbar.shape() != funder.shape() || !fbar.is_square() {
        return Err(Error::Dimension(
            "bounds must be square and equal in shape".into(),
        ));
    }
    if fbar.nrows() != 2 {
        return Err(Error::Unsupported(format!(
            "partial-gradient bounds are available for n = 2 only, got n = {}",
            fbar.nrows()
        )));
    }
    matcore::check_finite(fbar, "fbar")?;
    matcore::check_finite(funder, "funder")?;
    if fbar.iter().zip(funder.iter()).any(|(a, b)| a < b) {
        return Err(Error::InvalidInput(
            "fbar must dominate funder entrywise".into(),
        ));
    }
    let c = (fbar + funder) * 0.5;
    let cb = (fbar - funder) * 0.5;
    let d1 = (cb[(0, 0)] - c[(0, 0)]) + (cb[(1, 0)] - c[(1, 0)]);
    let d2 = (cb[(0, 1)] - c[(0, 1)]) + (cb[(1, 1)] - c[(1, 1)]);
    let s_hat = matcore::mat(&[
        &[c[(0, 0)], 0.0, c[(1, 0)], 0.0],
        &[0.0, c[(0, 1)], 0.0, c[(1, 1)]],
    ]);
    let mut qc = QuadConstraint::new(
        ConstraintKind::StrictR,
        sym_diag(&[d1, d2]),
        s_hat,
        SymMat::new(-identity(4))?,
        identity(2),
    )?;
    qc.origin = Origin::PartialGradient;
    qc.l_structure = Some(matcore::mat(&[
        &[1.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, 1.0, 1.0],
    ]));
    Ok(qc)
}

pub fn build_rnn(gamma: &SymMat) -> Result<QuadConstraint> {
    let g = gamma.as_mat();
    let p = gamma.dim();
    for i in 0..p {
        for j in 0..p {
            if i != j && !(g[(i, j)] < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "Gamma off-diagonal ({i},{j}) = {} must be negative",
                    g[(i, j)]
                )));
            }
        }
        let row: f64 = g.row(i).sum();
        if !(row > 0.0) {
            return Err(Error::InvalidInput(format!(
                "Gamma row {i} sums to {row}, must be positive"
            )));
        }
    }
    let mut c = QuadConstraint::new(
        ConstraintKind::StrictR,
        SymMat::zeros(p),
        g.clone(),
        SymMat::new(g * -2.0)?,
        identity(p),
    )?;
    c.origin = Origin::Rnn;
    Ok(c)
}

pub fn build_passive(h: &Mat) -> Result<QuadConstraint> {
    if h.nrows() == 0 || matcore::max_abs(h) == 0.0 {
        return Err(Error::InvalidInput(
            "passive constraint needs a nonzero H".into(),
        ));
    }
    let p = h.nrows();
    let mut c = QuadConstraint::new(
        ConstraintKind::Passive,
        SymMat::zeros(p),
        identity(p),
        SymMat::zeros(p),
        h.clone(),
    )?;
    c.origin = Origin::Passive;
    Ok(c)
}

/// Congruence by `blockdiag(H, I)`.
pub fn lift(c: &QuadConstraint, n: usize) -> Result<LiftedConstraint> {
    if c.h.ncols() != n {
        return Err(Error::Dimension(format!(
            "H has {} columns, state dimension is {n}",
            c.h.ncols()
        )));
    }
    let ht = c.h.transpose();
    let q = SymMat::symmetrized(&(&ht * c.q_hat.as_mat() * &c.h))?;
    let q_class = definiteness(&q, DEFAULT_TOL)?;
    Ok(LiftedConstraint {
        q,
        s: &ht * &c.s_hat,
        r: c.r_hat.clone(),
        q_class,
        kind: c.kind,
    })
}

pub fn evaluate(c: &QuadConstraint, z: &Vector, v: &Vector) -> Result<f64> {
    if z.len() != c.p() || v.len() != c.q() {
        return Err(Error::Dimension(format!(
            "evaluate expects z of length {} and v of length {}",
            c.p(),
            c.q()
        )));
    }
    Ok(z.dot(&(c.q_hat.as_mat() * z))
        + 2.0 * z.dot(&(&c.s_hat * v))
        + v.dot(&(c.r_hat.as_mat() * v)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regularity {
    pub regular: bool,
    pub witness: Option<(Vector, Vector)>,
}

const REGULARITY_TOL: f64 = 1e-9;

fn is_diagonal(m: &Mat) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

fn strictly_positive(c: &QuadConstraint, z: &Vector, v: &Vector) -> bool {
    let val = evaluate(c, z, v).unwrap_or(f64::NEG_INFINITY);
    val > REGULARITY_TOL * (z.norm_squared() + v.norm_squared())
}

/// Randomized search for a pair `(z, v)`, `z` in the image of `H`, at which the
/// constraint holds strictly. A negative answer is inconclusive.
pub fn check_regularity(
    c: &QuadConstraint,
    n: usize,
    budget: usize,
    seed: u64,
) -> Result<Regularity> {
    if budget == 0 {
        return Err(Error::InvalidInput(
            "regularity budget must be at least 1".into(),
        ));
    }
    if c.n() != n {
        return Err(Error::Dimension(format!(
            "H has {} columns, state dimension is {n}",
            c.n()
        )));
    }
    if let Origin::Sector { k1, k2 } = &c.origin {
        if is_diagonal(k1) && is_diagonal(k2) {
            let gap = SymMat::symmetrized(&(k2 - k1))?;
            if definiteness(&gap, DEFAULT_TOL)? == Definiteness::Pd {
                // Midpoint of the sector at a column of H that is not zero.
                let col = (0..n)
                    .map(|j| c.h.column(j).into_owned())
                    .find(|z| z.norm() > 0.0);
                if let Some(z) = col {
                    let v = (k1 + k2) * &z * 0.5;
                    return Ok(Regularity {
                        regular: true,
                        witness: Some((z, v)),
                    });
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r_inv = matcore::inverse(c.r_hat.as_mat()).ok();
    for _ in 0..budget {
        let x = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let z = &c.h * x;
        let mut cands = vec![Vector::zeros(c.q()), c.s_hat.transpose() * &z];
        if let Some(ri) = &r_inv {
            cands.push(-(ri * c.s_hat.transpose() * &z));
        }
        cands.push(Vector::from_fn(c.q(), |_, _| {
            StandardNormal.sample(&mut rng)
        }));
        for v in cands {
            if strictly_positive(c, &z, &v) {
                return Ok(Regularity {
                    regular: true,
                    witness: Some((z, v)),
                });
            }
        }
    }
    Ok(Regularity {
        regular: false,
        witness: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::mat;
    use proptest::prelude::*;
    use rand::Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn lipschitz_builder() {
        let c = build_lipschitz(2.0, 2, 2).unwrap();
        assert_eq!(c.q_hat.as_mat(), &(Mat::identity(2, 2) * 4.0));
        assert_eq!(c.s_hat, Mat::zeros(2, 2));
        assert_eq!(c.r_hat.as_mat(), &-Mat::identity(2, 2));
        let c = build_lipschitz(1.0, 1, 1).unwrap();
        assert_eq!(c.q_hat.as_mat()[(0, 0)], 1.0);
        assert_eq!(c.r_hat.as_mat()[(0, 0)], -1.0);
        assert!(build_lipschitz(0.0, 1, 1).is_err());
        assert!(build_lipschitz(-1.0, 1, 1).is_err());
    }

    #[test]
    fn lipschitz_admits_sine() {
        let c = build_lipschitz(1.0, 1, 1).unwrap();
        let mut r = rng(1);
        for _ in 0..10_000 {
            let z: f64 = r.random_range(-10.0..10.0);
            assert!(evaluate(&c, &v(&[z]), &v(&[z.sin()])).unwrap() >= -1e-12);
        }
        assert_eq!(evaluate(&c, &v(&[1.0]), &v(&[1.0])).unwrap(), 0.0);
        assert_eq!(evaluate(&c, &v(&[0.0]), &v(&[0.0])).unwrap(), 0.0);
    }

    #[test]
    fn sector_builder() {
        let c = build_sector(&Mat::zeros(2, 2), &(Mat::identity(2, 2) * 2.0)).unwrap();
        assert_eq!(c.q_hat.as_mat(), &Mat::zeros(2, 2));
        assert_eq!(c.s_hat, Mat::identity(2, 2) * 2.0);
        assert_eq!(c.r_hat.as_mat(), &(Mat::identity(2, 2) * -2.0));
        let c = build_sector(&mat(&[&[-1.0]]), &mat(&[&[1.0]])).unwrap();
        assert_eq!(c.q_hat.as_mat()[(0, 0)], 2.0);
        assert_eq!(c.s_hat[(0, 0)], 0.0);
        assert_eq!(c.r_hat.as_mat()[(0, 0)], -2.0);
        assert!(build_sector(&Mat::zeros(1, 2), &Mat::zeros(2, 2)).is_err());
    }

    #[test]
    fn sector_value_matches_hand_expansion() {
        let c = build_sector(&mat(&[&[0.0]]), &mat(&[&[1.0]])).unwrap();
        // 2 (v - k1 z)(k2 z - v) at z = 1, v = 1/2.
        assert!((evaluate(&c, &v(&[1.0]), &v(&[0.5])).unwrap() - 0.5).abs() < 1e-15);
        let mut r = rng(2);
        for _ in 0..10_000 {
            let z: f64 = r.random_range(-10.0..10.0);
            assert!(evaluate(&c, &v(&[z]), &v(&[z / 2.0])).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn convex_gradient_builder() {
        let c = build_convex_gradient(1.0, 2.0, 2).unwrap();
        assert_eq!(c.q_hat.as_mat(), &(Mat::identity(2, 2) * -4.0));
        assert_eq!(c.s_hat, Mat::identity(2, 2) * 3.0);
        assert_eq!(c.r_hat.as_mat(), &(Mat::identity(2, 2) * -2.0));
        assert!(build_convex_gradient(2.0, 2.0, 2).is_err());
        assert!(build_convex_gradient(2.5, 2.0, 2).is_err());
        let d = mat(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let mut r = rng(3);
        for _ in 0..10_000 {
            let x = v(&[r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)]);
            let f = &d * &x;
            assert!(evaluate(&c, &x, &f).unwrap() >= -1e-12 * (1.0 + x.norm_squared()));
        }
    }

    #[test]
    fn partial_gradient_zero_bounds() {
        let z = Mat::zeros(2, 2);
        let c = build_partial_gradient_bounds(&z, &z).unwrap();
        assert_eq!(c.q_hat.as_mat(), &Mat::zeros(2, 2));
        assert_eq!(c.s_hat, Mat::zeros(2, 4));
        assert_eq!(c.r_hat.as_mat(), &-Mat::identity(4, 4));
        assert_eq!(
            c.l_structure.as_ref().unwrap(),
            &mat(&[&[1.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 1.0]])
        );
    }

    #[test]
    fn partial_gradient_symmetric_bounds() {
        let fbar = Mat::identity(2, 2);
        let c = build_partial_gradient_bounds(&fbar, &-&fbar).unwrap();
        // c = 0, cbar = I: diagonal sums are cbar_11 + cbar_21 = 1 and cbar_12 + cbar_22 = 1.
        assert_eq!(c.q_hat.as_mat(), &Mat::identity(2, 2));
        assert_eq!(c.s_hat, Mat::zeros(2, 4));

        let fbar = mat(&[&[0.7, 1.5], &[0.3, 2.0]]);
        let c = build_partial_gradient_bounds(&fbar, &-&fbar).unwrap();
        let direct = |j: usize| {
            (0..2)
                .map(|i| (fbar[(i, j)] - (-fbar[(i, j)])) / 2.0)
                .sum::<f64>()
        };
        assert!((c.q_hat.as_mat()[(0, 0)] - direct(0)).abs() < 1e-15);
        assert!((c.q_hat.as_mat()[(1, 1)] - direct(1)).abs() < 1e-15);
        assert_eq!(c.q_hat.as_mat()[(0, 1)], 0.0);
    }

    #[test]
    fn partial_gradient_placement_of_midpoints() {
        let fbar = mat(&[&[3.0, 5.0], &[7.0, 9.0]]);
        let funder = mat(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let c = build_partial_gradient_bounds(&fbar, &funder).unwrap();
        // c = [[2, 3], [4, 5]], cbar = [[1, 2], [3, 4]].
        assert_eq!(
            c.s_hat,
            mat(&[&[2.0, 0.0, 4.0, 0.0], &[0.0, 3.0, 0.0, 5.0]])
        );
        assert_eq!(c.q_hat.as_mat()[(0, 0)], (1.0 - 2.0) + (3.0 - 4.0));
        assert_eq!(c.q_hat.as_mat()[(1, 1)], (2.0 - 3.0) + (4.0 - 5.0));
    }

    #[test]
    fn partial_gradient_rejects_bad_bounds() {
        let a = Mat::identity(2, 2);
        assert!(build_partial_gradient_bounds(&-&a, &a).is_err());
        let b = Mat::identity(3, 3);
        assert!(matches!(
            build_partial_gradient_bounds(&b, &-&b),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn partial_gradient_admits_bounded_jacobian_when_midpoint_vanishes() {
        // With c = 0 and cbar = 1 the printed form coincides with the bound on
        // each term v_ij = a_ij x_j, |a_ij| <= 1.
        let fbar = Mat::from_element(2, 2, 1.0);
        let c = build_partial_gradient_bounds(&fbar, &-&fbar).unwrap();
        let mut r = rng(4);
        for _ in 0..10_000 {
            let x = v(&[r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)]);
            let a: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            let vv = v(&[a[0] * x[0], a[1] * x[1], a[2] * x[0], a[3] * x[1]]);
            assert!(evaluate(&c, &x, &vv).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn rnn_builder() {
        assert!(build_rnn(&SymMat::identity(2)).is_err());
        let g = SymMat::new(mat(&[&[2.0, -1.0], &[-1.0, 2.0]])).unwrap();
        let c = build_rnn(&g).unwrap();
        assert_eq!(&c.s_hat, g.as_mat());
        let (vals, _) = matcore::sym_eigen(&c.r_hat);
        assert!((vals[0] + 6.0).abs() < 1e-12 && (vals[1] + 2.0).abs() < 1e-12);
        let c = build_rnn(&SymMat::new(mat(&[&[1.0]])).unwrap()).unwrap();
        assert_eq!(c.q_hat.as_mat()[(0, 0)], 0.0);
        assert_eq!(c.s_hat[(0, 0)], 1.0);
        assert_eq!(c.r_hat.as_mat()[(0, 0)], -2.0);
        let bad = SymMat::new(mat(&[&[1.0, -2.0], &[-2.0, 1.0]])).unwrap();
        assert!(build_rnn(&bad).is_err());
    }

    #[test]
    fn rnn_admits_tanh() {
        let g = SymMat::new(mat(&[&[2.0, -1.0], &[-1.0, 2.0]])).unwrap();
        let c = build_rnn(&g).unwrap();
        let mut r = rng(5);
        for _ in 0..10_000 {
            let z = v(&[r.random_range(-4.0..4.0), r.random_range(-4.0..4.0)]);
            let f = z.map(f64::tanh);
            assert!(evaluate(&c, &z, &f).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn passive_builder_and_lift() {
        let h = mat(&[&[1.0, 0.0]]);
        let c = build_passive(&h).unwrap();
        assert_eq!(c.kind, ConstraintKind::Passive);
        let l = lift(&c, 2).unwrap();
        assert_eq!(l.s, mat(&[&[1.0], &[0.0]]));
        assert_eq!(l.q.as_mat(), &Mat::zeros(2, 2));
        assert_eq!(l.r.as_mat(), &Mat::zeros(1, 1));
        assert_eq!(l.q_class, Definiteness::Zero);
        let c = build_passive(&Mat::identity(2, 2)).unwrap();
        assert_eq!(lift(&c, 2).unwrap().s, Mat::identity(2, 2));
        assert!(build_passive(&Mat::zeros(1, 2)).is_err());
        let mut r = rng(6);
        let c = build_passive(&mat(&[&[1.0]])).unwrap();
        for _ in 0..10_000 {
            let z: f64 = r.random_range(-5.0..5.0);
            assert!(evaluate(&c, &v(&[z]), &v(&[z.powi(3)])).unwrap() >= 0.0);
        }
    }

    #[test]
    fn lift_examples() {
        let c = build_lipschitz(2.0, 2, 2).unwrap();
        let l = lift(&c, 2).unwrap();
        assert_eq!(l.q, c.q_hat);
        assert_eq!(l.s, c.s_hat);
        assert_eq!(l.r, c.r_hat);
        let c = build_lipschitz(2.0, 1, 1)
            .unwrap()
            .with_h(mat(&[&[1.0, 0.0]]))
            .unwrap();
        let l = lift(&c, 2).unwrap();
        assert_eq!(l.q.as_mat(), &mat(&[&[4.0, 0.0], &[0.0, 0.0]]));
        assert_eq!(l.s, Mat::zeros(2, 1));
        assert_eq!(l.r.as_mat(), &-Mat::identity(1, 1));
        assert_eq!(l.q_class, Definiteness::Psd);
        assert!(lift(&c, 3).is_err());
    }

    #[test]
    fn regularity_examples() {
        let c = build_sector(&Mat::zeros(2, 2), &Mat::identity(2, 2)).unwrap();
        let reg = check_regularity(&c, 2, 1, 0).unwrap();
        assert!(reg.regular);
        let (z, w) = reg.witness.unwrap();
        assert!(evaluate(&c, &z, &w).unwrap() > 0.0);

        let dead = QuadConstraint::new(
            ConstraintKind::StrictR,
            SymMat::zeros(1),
            Mat::zeros(1, 1),
            SymMat::new(-Mat::identity(1, 1)).unwrap(),
            Mat::identity(1, 1),
        )
        .unwrap();
        let reg = check_regularity(&dead, 1, 500, 0).unwrap();
        assert!(!reg.regular && reg.witness.is_none());

        let c = build_lipschitz(2.0, 2, 2).unwrap();
        let reg = check_regularity(&c, 2, 10, 0).unwrap();
        assert!(reg.regular);
        let (z, w) = reg.witness.unwrap();
        assert!(evaluate(&c, &z, &w).unwrap() > 0.0);
        assert!((evaluate(&c, &v(&[1.0, 0.0]), &v(&[0.0, 0.0])).unwrap() - 4.0).abs() < 1e-15);
        assert!(check_regularity(&c, 2, 0, 0).is_err());
    }

    #[test]
    fn builders_are_deterministic() {
        let a = build_sector(&mat(&[&[0.1]]), &mat(&[&[0.9]])).unwrap();
        let b = build_sector(&mat(&[&[0.1]]), &mat(&[&[0.9]])).unwrap();
        assert_eq!(a, b);
        let fbar = mat(&[&[0.7, 1.5], &[0.3, 2.0]]);
        assert_eq!(
            build_partial_gradient_bounds(&fbar, &-&fbar).unwrap(),
            build_partial_gradient_bounds(&fbar, &-&fbar).unwrap()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn lift_commutes_with_evaluation(seed in any::<u64>()) {
            let mut r = rng(seed);
            let n = r.random_range(1..=4);
            let p = r.random_range(1..=3);
            let h = Mat::from_fn(p, n, |_, _| r.random_range(-1.0..1.0));
            let k1 = Mat::from_fn(p, p, |_, _| r.random_range(-1.0..1.0));
            let k2 = Mat::from_fn(p, p, |_, _| r.random_range(-1.0..1.0));
            let c = build_sector(&k1, &k2).unwrap().with_h(h.clone()).unwrap();
            let l = lift(&c, n).unwrap();
            let x = Vector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
            let w = Vector::from_fn(p, |_, _| r.random_range(-2.0..2.0));
            let direct = evaluate(&c, &(&h * &x), &w).unwrap();
            let lifted = l.evaluate(&x, &w);
            prop_assert!((direct - lifted).abs() <= 1e-10 * (1.0 + direct.abs()));
        }

        #[test]
        fn strict_constraints_have_nd_rhat(seed in any::<u64>()) {
            let mut r = rng(seed);
            let ell = r.random_range(0.01..10.0);
            let m = r.random_range(0.001..ell * 0.999);
            for c in [
                build_lipschitz(ell, 2, 3).unwrap(),
                build_convex_gradient(m, ell, 3).unwrap(),
                build_sector(&Mat::from_element(2, 2, m), &Mat::from_element(2, 2, ell)).unwrap(),
            ] {
                prop_assert_eq!(c.kind, ConstraintKind::StrictR);
                prop_assert_eq!(definiteness(&c.r_hat, DEFAULT_TOL).unwrap(), Definiteness::Nd);
            }
        }
    }
}
