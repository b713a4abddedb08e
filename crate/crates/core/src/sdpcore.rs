//! Semidefinite feasibility: matrix decision variables, affine LMI blocks and
//! affine equalities, solved by a primal barrier method.
//!
//! Equalities are eliminated exactly (particular solution plus null-space
//! basis). The remaining problem `max t s.t. S_b(w) - t I >= 0` is solved along
//! the central path inside a large ball. A positive optimum yields a feasible
//! point; a negative optimum is reported as infeasible only when the scaled
//! barrier Hessian inverses form a Farkas certificate within tolerance.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::linalg::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{self, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Full,
    Symmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: VarKind,
    offset: usize,
}

impl VarDecl {
    pub fn scalars(&self) -> usize {
        match self.kind {
            VarKind::Full => self.rows * self.cols,
            VarKind::Symmetric => self.rows * (self.rows + 1) / 2,
        }
    }

    /// Scalar index of entry `(i, j)` and its basis matrix.
    fn basis(&self) -> Vec<(usize, Mat)> {
        let mut out = Vec::with_capacity(self.scalars());
        let mut k = self.offset;
        match self.kind {
            VarKind::Full => {
                for j in 0..self.cols {
                    for i in 0..self.rows {
                        let mut e = Mat::zeros(self.rows, self.cols);
                        e[(i, j)] = 1.0;
                        out.push((k, e));
                        k += 1;
                    }
                }
            }
            VarKind::Symmetric => {
                for j in 0..self.rows {
                    for i in 0..=j {
                        let mut e = Mat::zeros(self.rows, self.rows);
                        e[(i, j)] = 1.0;
                        e[(j, i)] = 1.0;
                        out.push((k, e));
                        k += 1;
                    }
                }
            }
        }
        out
    }

    fn read(&self, m: &Mat, z: &mut [f64]) {
        let mut k = self.offset;
        match self.kind {
            VarKind::Full => {
                for j in 0..self.cols {
                    for i in 0..self.rows {
                        z[k] = m[(i, j)];
                        k += 1;
                    }
                }
            }
            VarKind::Symmetric => {
                for j in 0..self.rows {
                    for i in 0..=j {
                        z[k] = 0.5 * (m[(i, j)] + m[(j, i)]);
                        k += 1;
                    }
                }
            }
        }
    }

    fn write(&self, z: &[f64]) -> Mat {
        let mut m = Mat::zeros(self.rows, self.cols);
        for (k, e) in self.basis() {
            m += e * z[k];
        }
        m
    }
}

/// Matrix-valued affine function of the scalar decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMat {
    constant: Mat,
    terms: BTreeMap<usize, Mat>,
}

impl AffineMat {
    pub fn constant(m: Mat) -> Self {
        AffineMat {
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Mat::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(Mat::identity(n, n))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    fn map(&self, f: impl Fn(&Mat) -> Mat) -> Self {
        AffineMat {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(k, m)| (*k, f(m))).collect(),
        }
    }

    /// `m * self`.
    pub fn lmul(&self, m: &Mat) -> Self {
        assert_eq!(m.ncols(), self.nrows(), "lmul shape mismatch");
        self.map(|x| m * x)
    }

    /// `self * m`.
    pub fn rmul(&self, m: &Mat) -> Self {
        assert_eq!(self.ncols(), m.nrows(), "rmul shape mismatch");
        self.map(|x| x * m)
    }

    pub fn transpose(&self) -> Self {
        self.map(|x| x.transpose())
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| x * c)
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn add(&self, other: &AffineMat) -> Self {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        let mut out = self.clone();
        out.constant += &other.constant;
        for (k, m) in &other.terms {
            out.terms
                .entry(*k)
                .and_modify(|x| *x += m)
                .or_insert_with(|| m.clone());
        }
        out
    }

    pub fn sub(&self, other: &AffineMat) -> Self {
        self.add(&other.neg())
    }

    pub fn add_const(&self, m: &Mat) -> Self {
        let mut out = self.clone();
        out.constant += m;
        out
    }

    /// `(self + self^T) / 2`.
    pub fn symmetric_part(&self) -> Self {
        self.add(&self.transpose()).scale(0.5)
    }

    pub fn eval(&self, z: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (k, m) in &self.terms {
            out += m * z[*k];
        }
        out
    }

    fn max_index(&self) -> Option<usize> {
        self.terms.keys().next_back().copied()
    }

    /// Symmetric block matrix from upper-triangular blocks (`None` = zero).
    pub fn sym_blocks(sizes: &[usize], upper: &[Vec<Option<AffineMat>>]) -> AffineMat {
        let total: usize = sizes.iter().sum();
        let mut keys: Vec<usize> = Vec::new();
        for row in upper {
            for b in row.iter().flatten() {
                keys.extend(b.terms.keys());
            }
        }
        keys.sort_unstable();
        keys.dedup();
        let pick = |b: &Option<AffineMat>, key: Option<usize>| -> Option<Mat> {
            b.as_ref().map(|b| match key {
                None => b.constant.clone(),
                Some(k) => b
                    .terms
                    .get(&k)
                    .cloned()
                    .unwrap_or_else(|| Mat::zeros(b.nrows(), b.ncols())),
            })
        };
        let assemble = |key: Option<usize>| -> Mat {
            let rows: Vec<Vec<Option<Mat>>> = upper
                .iter()
                .map(|row| row.iter().map(|b| pick(b, key)).collect())
                .collect();
            matcore::sym_blocks(sizes, &rows)
        };
        let constant = assemble(None);
        debug_assert_eq!(constant.nrows(), total);
        let terms = keys.into_iter().map(|k| (k, assemble(Some(k)))).collect();
        AffineMat { constant, terms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    /// `F <= -margin * I`.
    NegDef,
    /// `F >= margin * I`.
    PosDef,
}

#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub name: String,
    pub expr: AffineMat,
    pub sense: Sense,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct Equality {
    pub name: String,
    pub expr: AffineMat,
}

#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    vars: Vec<VarDecl>,
    blocks: Vec<LmiBlock>,
    equalities: Vec<Equality>,
    nscalars: usize,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a variable and returns it as an affine expression.
    pub fn add_var(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        kind: VarKind,
    ) -> Result<AffineMat> {
        if rows == 0 || cols == 0 {
            return Err(Error::Malformed(format!(
                "variable `{name}` has an empty shape"
            )));
        }
        if kind == VarKind::Symmetric && rows != cols {
            return Err(Error::Malformed(format!(
                "symmetric variable `{name}` must be square"
            )));
        }
        if self.vars.iter().any(|v| v.name == name) {
            return Err(Error::Malformed(format!(
                "variable `{name}` declared twice"
            )));
        }
        let decl = VarDecl {
            name: name.to_string(),
            rows,
            cols,
            kind,
            offset: self.nscalars,
        };
        self.nscalars += decl.scalars();
        let expr = AffineMat {
            constant: Mat::zeros(rows, cols),
            terms: decl.basis().into_iter().collect(),
        };
        self.vars.push(decl);
        Ok(expr)
    }

    pub fn add_lmi(&mut self, name: &str, expr: AffineMat, sense: Sense, margin: f64) {
        self.blocks.push(LmiBlock {
            name: name.to_string(),
            expr,
            sense,
            margin,
        });
    }

    pub fn add_equality(&mut self, name: &str, expr: AffineMat) {
        self.equalities.push(Equality {
            name: name.to_string(),
            expr,
        });
    }

    pub fn vars(&self) -> &[VarDecl] {
        &self.vars
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    pub fn equalities(&self) -> &[Equality] {
        &self.equalities
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Malformed("problem has no LMI blocks".into()));
        }
        let check_refs = |e: &AffineMat, what: &str| -> Result<()> {
            if e.max_index().is_some_and(|k| k >= self.nscalars) {
                return Err(Error::Malformed(format!(
                    "{what} references an undeclared variable"
                )));
            }
            if e.terms
                .values()
                .chain(std::iter::once(&e.constant))
                .any(|m| m.shape() != e.shape())
            {
                return Err(Error::Malformed(format!(
                    "{what} has inconsistent coefficient shapes"
                )));
            }
            matcore::check_finite(&e.constant, what)?;
            for m in e.terms.values() {
                matcore::check_finite(m, what)?;
            }
            Ok(())
        };
        for b in &self.blocks {
            check_refs(&b.expr, &format!("block `{}`", b.name))?;
            let (r, c) = b.expr.shape();
            if r != c || r == 0 {
                return Err(Error::Malformed(format!(
                    "block `{}` is {r}x{c}, must be square",
                    b.name
                )));
            }
            let asym = b
                .expr
                .terms
                .values()
                .chain(std::iter::once(&b.expr.constant))
                .map(|m| (m - m.transpose()).norm())
                .fold(0.0, f64::max);
            let sz = b
                .expr
                .terms
                .values()
                .chain(std::iter::once(&b.expr.constant))
                .map(|m| m.norm())
                .fold(1.0, f64::max);
            if asym > 1e-9 * sz {
                return Err(Error::Malformed(format!(
                    "block `{}` is not symmetric",
                    b.name
                )));
            }
            if !(b.margin >= 0.0) || !b.margin.is_finite() {
                return Err(Error::Malformed(format!(
                    "block `{}` has invalid margin",
                    b.name
                )));
            }
        }
        for e in &self.equalities {
            check_refs(&e.expr, &format!("equality `{}`", e.name))?;
        }
        Ok(())
    }

    fn assignment_vector(&self, assignment: &BTreeMap<String, Mat>) -> Result<Vec<f64>> {
        let mut z = vec![0.0; self.nscalars];
        for v in &self.vars {
            let m = assignment
                .get(&v.name)
                .ok_or_else(|| Error::MissingVariable(v.name.clone()))?;
            if m.shape() != (v.rows, v.cols) {
                return Err(Error::Dimension(format!(
                    "assignment for `{}` is {:?}, expected ({}, {})",
                    v.name,
                    m.shape(),
                    v.rows,
                    v.cols
                )));
            }
            v.read(m, &mut z);
        }
        Ok(z)
    }

    fn assignment_map(&self, z: &[f64]) -> BTreeMap<String, Mat> {
        self.vars
            .iter()
            .map(|v| (v.name.clone(), v.write(z)))
            .collect()
    }

    fn equality_scale(&self) -> f64 {
        self.equalities
            .iter()
            .flat_map(|e| {
                e.expr
                    .terms
                    .values()
                    .chain(std::iter::once(&e.expr.constant))
            })
            .map(matcore::max_abs)
            .fold(1.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recheck {
    /// Largest eigenvalue of `F` (negative-definite blocks) or `-F`
    /// (positive-definite blocks) over all blocks.
    pub max_block_eig: f64,
    pub max_equality_residual: f64,
    /// Smallest `-eig - margin` over blocks; nonnegative iff every block
    /// meets its margin.
    pub margin_slack: f64,
}

/// Direct evaluation of every block and equality at `assignment`.
pub fn recheck(p: &LmiProblem, assignment: &BTreeMap<String, Mat>) -> Result<Recheck> {
    let z = p.assignment_vector(assignment)?;
    Ok(recheck_vec(p, &z))
}

fn signed_max_eig(b: &LmiBlock, z: &[f64]) -> f64 {
    let f = b.expr.eval(z);
    match b.sense {
        Sense::NegDef => matcore::max_eig(&f),
        Sense::PosDef => matcore::max_eig(&-f),
    }
}

fn recheck_vec(p: &LmiProblem, z: &[f64]) -> Recheck {
    let mut max_eig = f64::NEG_INFINITY;
    let mut slack = f64::INFINITY;
    for b in &p.blocks {
        let e = signed_max_eig(b, z);
        max_eig = max_eig.max(e);
        slack = slack.min(-e - b.margin);
    }
    let resid = p
        .equalities
        .iter()
        .map(|e| matcore::max_abs(&e.expr.eval(z)))
        .fold(0.0, f64::max);
    Recheck {
        max_block_eig: max_eig,
        max_equality_residual: resid,
        margin_slack: slack,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Budget of Newton steps.
    pub max_iter: usize,
    /// Relative accuracy of the barrier path and of the infeasibility test.
    pub tol: f64,
    /// Recorded for reproducibility; the barrier method itself is deterministic.
    pub seed: u64,
    /// Radius of the ball that keeps homogeneous programs bounded.
    pub radius: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 2000,
            tol: 1e-8,
            seed: 0,
            radius: 1e4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Feasible,
    Infeasible,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub status: Status,
    #[serde(skip)]
    pub assignment: Option<BTreeMap<String, Mat>>,
    /// Smallest block slack `-eig` attained (before subtracting margins).
    pub achieved_margin: f64,
    pub iterations: usize,
    pub runtime_secs: f64,
    pub recheck: Option<Recheck>,
    pub note: String,
}

/// Reduced problem after eliminating equalities: `z = z0 + N w`, each block in
/// PSD form `S_b(w) = C_b + sum_j w_j A_bj` with margins folded into `C_b`.
struct Reduced {
    z0: Vector,
    basis: Mat,
    blocks: Vec<(Mat, Vec<Mat>)>,
}

fn reduce(p: &LmiProblem, tol: f64) -> Result<std::result::Result<Reduced, String>> {
    let ns = p.nscalars;
    let neq: usize = p
        .equalities
        .iter()
        .map(|e| e.expr.nrows() * e.expr.ncols())
        .sum();
    let (z0, basis) = if neq == 0 {
        (Vector::zeros(ns), Mat::identity(ns, ns))
    } else {
        let mut a = Mat::zeros(neq, ns);
        let mut b = Vector::zeros(neq);
        let mut row = 0;
        for e in &p.equalities {
            let (r, c) = e.expr.shape();
            for j in 0..c {
                for i in 0..r {
                    b[row] = -e.expr.constant[(i, j)];
                    for (k, m) in &e.expr.terms {
                        a[(row, *k)] = m[(i, j)];
                    }
                    row += 1;
                }
            }
        }
        // Full SVD of A^T A would lose accuracy; work with A itself, padded
        // with zero rows so that V is square.
        let padded = if neq < ns {
            matcore::vstack(&[&a, &Mat::zeros(ns - neq, ns)])
        } else {
            a.clone()
        };
        let svd = padded.svd(true, true);
        let vt = svd.v_t.as_ref().expect("requested V^T");
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let cut = 1e-10 * smax.max(f64::MIN_POSITIVE);
        let z0 = if smax > 0.0 {
            let bb = if neq < ns {
                matcore::vstack(&[
                    &Mat::from_column_slice(neq, 1, b.as_slice()),
                    &Mat::zeros(ns - neq, 1),
                ])
            } else {
                Mat::from_column_slice(neq, 1, b.as_slice())
            };
            let sol = svd
                .solve(&bb, cut)
                .map_err(|e| Error::Domain(e.to_string()))?;
            Vector::from_column_slice(sol.as_slice())
        } else {
            Vector::zeros(ns)
        };
        let resid = (&a * &z0 - &b).amax();
        let scale = p.equality_scale().max(b.amax());
        if resid > 1e3 * tol * scale.max(1.0) {
            return Ok(Err(format!(
                "equality constraints are inconsistent (residual {resid:.3e})"
            )));
        }
        let null: Vec<usize> = (0..ns).filter(|&k| svd.singular_values[k] <= cut).collect();
        let mut basis = Mat::zeros(ns, null.len());
        for (c, &k) in null.iter().enumerate() {
            basis.set_column(c, &vt.row(k).transpose());
        }
        (z0, basis)
    };
    let nw = basis.ncols();
    let blocks = p
        .blocks
        .iter()
        .map(|blk| {
            let sign = match blk.sense {
                Sense::NegDef => -1.0,
                Sense::PosDef => 1.0,
            };
            let d = blk.expr.nrows();
            let mut c = blk.expr.eval(z0.as_slice()) * sign - Mat::identity(d, d) * blk.margin;
            c = matcore::symmetrize(&c);
            let mut coefs = vec![Mat::zeros(d, d); nw];
            for (k, m) in &blk.expr.terms {
                let ms = matcore::symmetrize(m) * sign;
                for j in 0..nw {
                    let w = basis[(*k, j)];
                    if w != 0.0 {
                        coefs[j] += &ms * w;
                    }
                }
            }
            (c, coefs)
        })
        .collect();
    Ok(Ok(Reduced { z0, basis, blocks }))
}

struct Barrier<'a> {
    red: &'a Reduced,
    cap: f64,
    radius: f64,
}

struct Eval {
    value: f64,
    grad: Vector,
    hess: Mat,
    inverses: Vec<Mat>,
}

impl Barrier<'_> {
    fn nw(&self) -> usize {
        self.red.basis.ncols()
    }

    fn slack(&self, b: usize, x: &Vector) -> Mat {
        let (c, coefs) = &self.red.blocks[b];
        let nw = self.nw();
        let mut m = c.clone();
        for (j, a) in coefs.iter().enumerate() {
            if x[j] != 0.0 {
                m += a * x[j];
            }
        }
        let d = m.nrows();
        m - Mat::identity(d, d) * x[nw]
    }

    /// Barrier value only; `None` outside the domain.
    fn value(&self, x: &Vector, s: f64) -> Option<f64> {
        let nw = self.nw();
        let t = x[nw];
        let wn = x.rows(0, nw).norm_squared();
        if t >= self.cap || wn >= self.radius * self.radius {
            return None;
        }
        let mut v = -s * t - (self.cap - t).ln() - (self.radius * self.radius - wn).ln();
        for b in 0..self.red.blocks.len() {
            let chol = Cholesky::new(self.slack(b, x))?;
            let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            v -= logdet;
        }
        Some(v)
    }

    fn eval(&self, x: &Vector, s: f64) -> Option<Eval> {
        let nw = self.nw();
        let dim = nw + 1;
        let value = self.value(x, s)?;
        let t = x[nw];
        let r2 = self.radius * self.radius;
        let wn = x.rows(0, nw).norm_squared();
        let mut grad = Vector::zeros(dim);
        let mut hess = Mat::zeros(dim, dim);
        // Cap and ball terms.
        grad[nw] = -s + 1.0 / (self.cap - t);
        hess[(nw, nw)] = 1.0 / (self.cap - t).powi(2);
        let g = r2 - wn;
        for j in 0..nw {
            grad[j] += 2.0 * x[j] / g;
            hess[(j, j)] += 2.0 / g;
            for k in 0..nw {
                hess[(j, k)] += 4.0 * x[j] * x[k] / (g * g);
            }
        }
        let mut inverses = Vec::with_capacity(self.red.blocks.len());
        for (b, (_, coefs)) in self.red.blocks.iter().enumerate() {
            let chol = Cholesky::new(self.slack(b, x))?;
            let inv = chol.inverse();
            let ma: Vec<Mat> = coefs.iter().map(|a| &inv * a).collect();
            let inv2 = &inv * &inv;
            for j in 0..nw {
                grad[j] -= ma[j].trace();
                let hjt = -(&inv2 * &coefs[j]).trace();
                hess[(j, nw)] += hjt;
                hess[(nw, j)] += hjt;
                for k in 0..=j {
                    let h = ma[j].component_mul(&ma[k].transpose()).sum();
                    hess[(j, k)] += h;
                    if k != j {
                        hess[(k, j)] += h;
                    }
                }
            }
            grad[nw] += inv.trace();
            hess[(nw, nw)] += inv2.trace();
            inverses.push(inv);
        }
        Some(Eval {
            value,
            grad,
            hess,
            inverses,
        })
    }
}

fn newton_direction(hess: &Mat, grad: &Vector) -> Option<Vector> {
    let n = hess.nrows();
    let scale = hess.diagonal().amax().max(1e-300);
    let mut h = hess.clone();
    for reg in [0.0, 1e-14, 1e-12, 1e-10, 1e-8] {
        if reg > 0.0 {
            h = hess + Mat::identity(n, n) * (reg * scale);
        }
        if let Some(ch) = Cholesky::new(h.clone()) {
            return Some(-ch.solve(grad));
        }
    }
    None
}

/// Solves the feasibility problem. Never reports `Feasible` unless a direct
/// recheck of the returned assignment meets every margin and equality.
pub fn solve_feasibility(p: &LmiProblem, opts: &SolverOptions) -> Result<SolveOutcome> {
    p.validate()?;
    let start = Instant::now();
    let outcome = |status, assignment, margin, iters, recheck, note: String| SolveOutcome {
        status,
        assignment,
        achieved_margin: margin,
        iterations: iters,
        runtime_secs: start.elapsed().as_secs_f64(),
        recheck,
        note,
    };
    let red = match reduce(p, opts.tol)? {
        Ok(r) => r,
        Err(msg) => {
            return Ok(outcome(
                Status::Infeasible,
                None,
                f64::NEG_INFINITY,
                0,
                None,
                msg,
            ))
        }
    };
    let nw = red.basis.ncols();
    let block_scale = red
        .blocks
        .iter()
        .flat_map(|(c, a)| std::iter::once(c).chain(a.iter()))
        .map(matcore::max_abs)
        .fold(1.0, f64::max);
    let radius = opts.radius * (1.0 + red.z0.norm());
    let cap = block_scale;
    let bar = Barrier {
        red: &red,
        cap,
        radius,
    };

    let mut x = Vector::zeros(nw + 1);
    let t0 = (0..red.blocks.len())
        .map(|b| matcore::min_eig(&red.blocks[b].0))
        .fold(f64::INFINITY, f64::min);
    x[nw] = t0.min(cap - 1.0) - 1.0;
    let nu: f64 = red
        .blocks
        .iter()
        .map(|(c, _)| c.nrows() as f64)
        .sum::<f64>()
        + 2.0;
    let mut s = 1.0 / block_scale;
    let mu = 8.0;
    let mut iters = 0usize;
    let mut last: Option<Eval> = None;
    let z_of = |x: &Vector| -> Vec<f64> {
        let z = &red.z0 + &red.basis * x.rows(0, nw);
        z.iter().copied().collect()
    };

    let try_feasible = |x: &Vector, iters: usize| -> Option<SolveOutcome> {
        if x[nw] <= 0.0 {
            return None;
        }
        let z = z_of(x);
        let rc = recheck_vec(p, &z);
        let eq_ok = rc.max_equality_residual <= 1e-6 * p.equality_scale();
        if rc.margin_slack >= 0.0 && eq_ok {
            let margin = p
                .blocks
                .iter()
                .map(|b| -signed_max_eig(b, &z))
                .fold(f64::INFINITY, f64::min);
            Some(outcome(
                Status::Feasible,
                Some(p.assignment_map(&z)),
                margin,
                iters,
                Some(rc),
                String::new(),
            ))
        } else {
            None
        }
    };

    'outer: loop {
        // Centering.
        loop {
            if iters >= opts.max_iter {
                break 'outer;
            }
            let Some(ev) = bar.eval(&x, s) else {
                return Err(Error::Malformed("barrier left its domain".into()));
            };
            let Some(dx) = newton_direction(&ev.hess, &ev.grad) else {
                last = Some(ev);
                break 'outer;
            };
            let dec = -ev.grad.dot(&dx);
            iters += 1;
            if dec < 0.0 || dec.is_nan() {
                last = Some(ev);
                break;
            }
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-12 {
                let xn = &x + &dx * alpha;
                if let Some(v) = bar.value(&xn, s) {
                    if v <= ev.value - 0.25 * alpha * dec {
                        x = xn;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let done = dec / 2.0 <= 1e-9 || !moved;
            if done {
                last = bar.eval(&x, s);
                break;
            }
        }
        if let Some(out) = try_feasible(&x, iters) {
            if x[nw] >= 0.5 * cap || nu / s <= 1e-3 * x[nw] {
                return Ok(out);
            }
        }
        if nu / s <= opts.tol * block_scale {
            break;
        }
        s *= mu;
    }

    if let Some(out) = try_feasible(&x, iters) {
        return Ok(out);
    }
    let t = x[nw];
    let z = z_of(&x);
    let rc = recheck_vec(p, &z);
    if let Some(ev) = last {
        if t < 0.0 {
            // Candidate Farkas certificate Z_b proportional to the inverse slacks.
            let total: f64 = ev.inverses.iter().map(|m| m.trace()).sum();
            let zs: Vec<Mat> = ev.inverses.iter().map(|m| m / total).collect();
            let mut resid = Vector::zeros(nw);
            let mut value = 0.0;
            for (zb, (c, coefs)) in zs.iter().zip(&red.blocks) {
                value += zb.component_mul(c).sum();
                for (j, a) in coefs.iter().enumerate() {
                    resid[j] += zb.component_mul(a).sum();
                }
            }
            let rnorm = resid.norm();
            let wnorm = x.rows(0, nw).norm();
            if value < 0.0
                && rnorm * (1.0 + wnorm) <= 1e-3 * value.abs()
                && rnorm <= opts.tol.sqrt() * block_scale
            {
                return Ok(outcome(
                    Status::Infeasible,
                    None,
                    -rc.max_block_eig,
                    iters,
                    Some(rc),
                    format!("dual certificate: value {value:.3e}, residual {rnorm:.3e}"),
                ));
            }
        }
    }
    Ok(outcome(
        Status::Inconclusive,
        None,
        -rc.max_block_eig,
        iters,
        Some(rc),
        format!("best uniform slack {t:.3e}"),
    ))
}
