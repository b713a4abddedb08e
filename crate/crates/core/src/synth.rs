//! Controller synthesis from data: assembles the LMI programs for linear
//! feedback (discrete and continuous time), the passive circle-criterion
//! conditions and the nonlinear-feedback variants, then extracts gains.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintKind, LiftedConstraint};
use crate::error::{Error, Result};
use crate::matcore::{self, Definiteness, Mat, SymMat};
use crate::plant::{check_assumptions, DataSet, TimeDomain};
use crate::sdpcore::{self, AffineMat, LmiProblem, Sense, SolverOptions, Status, VarKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DtQpsd,
    DtQzero,
    DtQnsd,
    CtQpsd,
    CtQzero,
    CtQnsd,
    CtPassive,
    Nlfb,
    NlfbCtPassive,
    NlfbLinearOnly,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::DtQpsd,
        Method::DtQzero,
        Method::DtQnsd,
        Method::CtQpsd,
        Method::CtQzero,
        Method::CtQnsd,
        Method::CtPassive,
        Method::Nlfb,
        Method::NlfbCtPassive,
        Method::NlfbLinearOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::DtQpsd => "dt-qpsd",
            Method::DtQzero => "dt-qzero",
            Method::DtQnsd => "dt-qnsd",
            Method::CtQpsd => "ct-qpsd",
            Method::CtQzero => "ct-qzero",
            Method::CtQnsd => "ct-qnsd",
            Method::CtPassive => "ct-passive",
            Method::Nlfb => "nlfb",
            Method::NlfbCtPassive => "nlfb-ct-passive",
            Method::NlfbLinearOnly => "nlfb-linear-only",
        }
    }

    pub fn is_dt_linear(self) -> bool {
        matches!(self, Method::DtQpsd | Method::DtQzero | Method::DtQnsd)
    }

    pub fn is_ct_linear(self) -> bool {
        matches!(self, Method::CtQpsd | Method::CtQzero | Method::CtQnsd)
    }

    /// Methods whose unknowns are `Y1, Y2, W` and that do not need `L`.
    pub fn is_nonlinear_feedback(self) -> bool {
        matches!(
            self,
            Method::Nlfb | Method::NlfbCtPassive | Method::NlfbLinearOnly
        )
    }

    pub fn needs_l(self) -> bool {
        !self.is_nonlinear_feedback()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidInput(format!(
                    "unknown method `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSpec {
    pub method: Method,
    pub l: Option<Mat>,
    pub decay_rho: Option<f64>,
    pub strictness_eps: f64,
    pub solver: SolverOptions,
}

impl SynthesisSpec {
    pub fn new(method: Method) -> Self {
        SynthesisSpec {
            method,
            l: None,
            decay_rho: None,
            strictness_eps: 1e-7,
            solver: SolverOptions::default(),
        }
    }

    pub fn with_l(mut self, l: Mat) -> Self {
        self.l = Some(l);
        self
    }

    pub fn with_decay(mut self, rho: f64) -> Self {
        self.decay_rho = Some(rho);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SolverStats {
    pub iterations: usize,
    pub runtime_secs: f64,
    pub achieved_margin: f64,
    pub max_equality_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub method: Method,
    pub k: Mat,
    pub m: Option<Mat>,
    pub p: SymMat,
    /// Decision matrices: `Y`, or `Y1`, `Y2`, `W`.
    pub raw: BTreeMap<String, Mat>,
    pub eps: f64,
    /// Input matrix assumed by the program (linear-feedback methods).
    pub l: Option<Mat>,
    pub decay_rho: Option<f64>,
    pub solver_stats: Option<SolverStats>,
}

impl Certificate {
    /// Rebuilds the decision variables from given gains so that externally
    /// obtained `(K, M, P)` can go through the same verification as solver
    /// output. `G` solves `W0 G = [K; I]` (or the `Psi0` analogue) in the least
    /// squares sense.
    pub fn from_gains(
        method: Method,
        data: &DataSet,
        k: Mat,
        m: Option<Mat>,
        p: SymMat,
        l: Option<Mat>,
        eps: f64,
    ) -> Result<Self> {
        let n = data.n();
        let w = matcore::inverse(p.as_mat())?;
        let mut raw = BTreeMap::new();
        if method.is_nonlinear_feedback() {
            let (g1, g2) = nonlinear_feedback_g(data, &k, m.as_ref())?;
            raw.insert("Y1".to_string(), &g1 * &w);
            raw.insert("Y2".to_string(), g2);
            raw.insert("W".to_string(), matcore::symmetrize(&w));
        } else {
            let g = linear_feedback_g(data, &k)?;
            debug_assert_eq!(g.ncols(), n);
            raw.insert("Y".to_string(), &g * &w);
        }
        Ok(Certificate {
            method,
            k,
            m,
            p,
            raw,
            eps,
            l,
            decay_rho: None,
            solver_stats: None,
        })
    }
}

/// `G` with `[U0; X0] G = [K; I]` (least squares).
pub fn linear_feedback_g(data: &DataSet, k: &Mat) -> Result<Mat> {
    let n = data.n();
    if k.shape() != (data.m(), n) {
        return Err(Error::Dimension(format!(
            "K is {:?}, expected ({}, {n})",
            k.shape(),
            data.m()
        )));
    }
    let rhs = matcore::vstack(&[k, &Mat::identity(n, n)]);
    matcore::lstsq(&data.w0(), &rhs)
}

/// `[G1 G2]` with `[X0; F0; U0] [G1 G2] = [I 0; 0 I; K M]` (least squares).
pub fn nonlinear_feedback_g(data: &DataSet, k: &Mat, m: Option<&Mat>) -> Result<(Mat, Mat)> {
    let (n, q, mm) = (data.n(), data.q(), data.m());
    if k.shape() != (mm, n) {
        return Err(Error::Dimension(format!(
            "K is {:?}, expected ({mm}, {n})",
            k.shape()
        )));
    }
    let zero = Mat::zeros(mm, q);
    let m = m.unwrap_or(&zero);
    if m.shape() != (mm, q) {
        return Err(Error::Dimension(format!(
            "M is {:?}, expected ({mm}, {q})",
            m.shape()
        )));
    }
    let top = matcore::hstack(&[&Mat::identity(n, n), &Mat::zeros(n, q)]);
    let mid = matcore::hstack(&[&Mat::zeros(q, n), &Mat::identity(q, q)]);
    let bot = matcore::hstack(&[k, m]);
    let g = matcore::lstsq(&data.psi0(), &matcore::vstack(&[&top, &mid, &bot]))?;
    Ok((g.columns(0, n).into_owned(), g.columns(n, q).into_owned()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Certified(Box<Certificate>),
    Infeasible(String),
    Inconclusive(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseFamily {
    Qpsd,
    Qzero,
    Qnsd,
    Passive,
    Unsupported,
}

pub fn classify_case(lc: &LiftedConstraint) -> CaseFamily {
    if lc.kind == ConstraintKind::Passive {
        return CaseFamily::Passive;
    }
    match lc.q_class {
        Definiteness::Pd | Definiteness::Psd => CaseFamily::Qpsd,
        Definiteness::Zero => CaseFamily::Qzero,
        Definiteness::Nd | Definiteness::Nsd => CaseFamily::Qnsd,
        Definiteness::Indefinite => CaseFamily::Unsupported,
    }
}

fn check_spec(data: &DataSet, lc: &LiftedConstraint, spec: &SynthesisSpec) -> Result<()> {
    data.validate()?;
    let method = spec.method;
    let n = data.n();
    if lc.n() != n || lc.nq() != data.q() {
        return Err(Error::Dimension(format!(
            "constraint is for n = {}, q = {}; data has n = {n}, q = {}",
            lc.n(),
            lc.nq(),
            data.q()
        )));
    }
    let wants = match method {
        Method::DtQpsd | Method::DtQzero | Method::DtQnsd | Method::Nlfb => {
            Some(TimeDomain::Discrete)
        }
        Method::NlfbLinearOnly => None,
        _ => Some(TimeDomain::Continuous),
    };
    if let Some(d) = wants {
        if d != data.domain {
            return Err(Error::Precondition(format!(
                "method {method} needs {d:?} data, got {:?}",
                data.domain
            )));
        }
    }
    let family = classify_case(lc);
    if family == CaseFamily::Unsupported {
        return Err(Error::Unsupported(
            "lifted Q is indefinite; only Q >= 0, Q = 0 and Q <= 0 are covered".into(),
        ));
    }
    let passive_method = matches!(method, Method::CtPassive | Method::NlfbCtPassive)
        || (method == Method::NlfbLinearOnly && data.domain == TimeDomain::Continuous);
    if passive_method != (family == CaseFamily::Passive) {
        return Err(Error::Precondition(format!(
            "method {method} is incompatible with a {family:?} constraint"
        )));
    }
    let ok = match method {
        Method::DtQpsd | Method::CtQpsd => {
            family == CaseFamily::Qpsd || family == CaseFamily::Qzero
        }
        Method::DtQzero | Method::CtQzero => family == CaseFamily::Qzero,
        Method::DtQnsd | Method::CtQnsd => {
            family == CaseFamily::Qnsd || family == CaseFamily::Qzero
        }
        _ => true,
    };
    if !ok {
        return Err(Error::Precondition(format!(
            "method {method} does not match the lifted Q class {:?}",
            lc.q_class
        )));
    }
    if method.needs_l() {
        let l = spec
            .l
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("method {method} needs L")))?;
        if l.shape() != (n, data.q()) {
            return Err(Error::Dimension(format!(
                "L is {:?}, expected ({n}, {})",
                l.shape(),
                data.q()
            )));
        }
    }
    if let Some(rho) = spec.decay_rho {
        if !method.is_dt_linear() {
            return Err(Error::InvalidInput(
                "decay rate applies to discrete-time linear methods only".into(),
            ));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidInput(format!(
                "decay rate must lie in (0, 1), got {rho}"
            )));
        }
    }
    if !(spec.strictness_eps > 0.0) {
        return Err(Error::InvalidInput(
            "strictness eps must be positive".into(),
        ));
    }
    let a = check_assumptions(data)?;
    if method.is_nonlinear_feedback() {
        let xf = matcore::vstack(&[&data.x0, &data.f0]);
        if matcore::row_rank(&xf, crate::plant::RANK_TOL)? != n + data.q() {
            return Err(Error::Precondition(format!(
                "Psi0 = [X0; F0; U0] has rank {} of {}; its [X0; F0] part must have full row rank",
                a.rank_psi0,
                data.psi0().nrows()
            )));
        }
    } else if !a.full_x0 {
        return Err(Error::Precondition(format!(
            "X0 must have full row rank (W0 = [U0; X0] has rank {} of {})",
            a.rank_w0,
            data.w0().nrows()
        )));
    }
    Ok(())
}

fn c(m: Mat) -> AffineMat {
    AffineMat::constant(m)
}

/// Builds the LMI program for `spec` and returns it with the margin used.
pub fn build_program(
    data: &DataSet,
    lc: &LiftedConstraint,
    spec: &SynthesisSpec,
) -> Result<(LmiProblem, f64)> {
    check_spec(data, lc, spec)?;
    let eps = spec.strictness_eps * data.scale().max(1.0);
    let (n, q, t) = (data.n(), data.q(), data.samples());
    let s = &lc.s;
    let r = lc.r.as_mat().clone();
    let q_root = match classify_case(lc) {
        CaseFamily::Qpsd => Some(matcore::psd_sqrt(&lc.q)?.into_inner()),
        _ => None,
    };
    let mut p = LmiProblem::new();
    let method = spec.method;

    let linear_only_ct = method == Method::NlfbLinearOnly && data.domain == TimeDomain::Continuous;
    if method.is_nonlinear_feedback() {
        let y1 = p.add_var("Y1", t, n, VarKind::Full)?;
        let y2 = p.add_var("Y2", t, q, VarKind::Full)?;
        let w = p.add_var("W", n, n, VarKind::Symmetric)?;
        let x0y1 = y1.lmul(&data.x0);
        p.add_equality("X0 Y1 = W", x0y1.sub(&w));
        p.add_equality("X0 Y2 = 0", y2.lmul(&data.x0));
        p.add_equality("F0 Y1 = 0", y1.lmul(&data.f0));
        p.add_equality(
            "F0 Y2 = I",
            y2.lmul(&data.f0).add_const(&-Mat::identity(q, q)),
        );
        if method == Method::NlfbLinearOnly {
            p.add_equality("U0 Y2 = 0", y2.lmul(&data.u0));
        }
        p.add_lmi("W > 0", w.clone(), Sense::PosDef, eps);
        let x1y1 = y1.lmul(&data.x1);
        let x1y2 = y2.lmul(&data.x1);
        if method == Method::NlfbCtPassive || linear_only_ct {
            p.add_lmi("Lyapunov", x1y1.add(&x1y1.transpose()), Sense::NegDef, eps);
            p.add_equality("X1 Y2 + X0 Y1 S = 0", x1y2.add(&x0y1.rmul(s)));
        } else {
            let mut sizes = vec![n, q, n];
            let mut rows = vec![
                vec![Some(w.neg()), Some(w.rmul(s)), Some(x1y1.transpose())],
                vec![Some(c(r.clone())), Some(x1y2.transpose())],
                vec![Some(w.neg())],
            ];
            if let Some(qr) = &q_root {
                sizes.push(n);
                rows[0].push(Some(w.rmul(qr)));
                rows[1].push(None);
                rows[2].push(None);
                rows.push(vec![Some(c(-Mat::identity(n, n)))]);
            }
            p.add_lmi(
                "main",
                AffineMat::sym_blocks(&sizes, &rows),
                Sense::NegDef,
                eps,
            );
        }
        return Ok((p, eps));
    }

    let l = spec.l.clone().expect("checked");
    let y = p.add_var("Y", t, n, VarKind::Full)?;
    let xy = y.lmul(&data.x0);
    p.add_equality("X0 Y symmetric", xy.sub(&xy.transpose()));
    let wsym = xy.symmetric_part();
    let phi = &data.x1 - &l * &data.f0;
    let phiy = y.lmul(&phi);
    let lyap = phiy.add(&phiy.transpose());

    match method {
        Method::DtQpsd | Method::DtQzero | Method::DtQnsd => {
            let rho = spec.decay_rho.unwrap_or(1.0);
            let mut sizes = vec![n, q, n];
            let mut rows = vec![
                vec![
                    Some(wsym.scale(-rho)),
                    Some(wsym.rmul(s)),
                    Some(phiy.transpose()),
                ],
                vec![Some(c(r.clone())), Some(c(l.transpose()))],
                vec![Some(wsym.neg())],
            ];
            if let (Method::DtQpsd, Some(qr)) = (method, &q_root) {
                sizes.push(n);
                rows[0].push(Some(wsym.rmul(qr)));
                rows[1].push(None);
                rows[2].push(None);
                rows.push(vec![Some(c(-Mat::identity(n, n)))]);
            }
            let main = AffineMat::sym_blocks(&sizes, &rows);
            if spec.decay_rho.is_some() {
                p.add_lmi("main (weak)", main, Sense::NegDef, 0.0);
                p.add_lmi("X0 Y > 0", wsym, Sense::PosDef, eps);
            } else {
                p.add_lmi("main", main, Sense::NegDef, eps);
            }
        }
        Method::CtQpsd | Method::CtQzero | Method::CtQnsd => {
            let coupling = wsym.rmul(s).add_const(&l);
            let mut sizes = vec![n, q];
            let mut rows = vec![vec![Some(lyap), Some(coupling)], vec![Some(c(r.clone()))]];
            if let (Method::CtQpsd, Some(qr)) = (method, &q_root) {
                sizes.push(n);
                rows[0].push(Some(wsym.rmul(qr)));
                rows[1].push(None);
                rows.push(vec![Some(c(-Mat::identity(n, n)))]);
            }
            p.add_lmi(
                "main",
                AffineMat::sym_blocks(&sizes, &rows),
                Sense::NegDef,
                eps,
            );
            p.add_lmi("X0 Y > 0", wsym, Sense::PosDef, eps);
        }
        Method::CtPassive => {
            p.add_lmi("X0 Y > 0", wsym, Sense::PosDef, eps);
            p.add_lmi("Lyapunov", lyap, Sense::NegDef, eps);
            p.add_equality("L + X0 Y S = 0", xy.rmul(s).add_const(&l));
        }
        _ => unreachable!("nonlinear-feedback methods handled above"),
    }
    Ok((p, eps))
}

pub fn synthesize(data: &DataSet, lc: &LiftedConstraint, spec: &SynthesisSpec) -> Result<Outcome> {
    let (program, eps) = build_program(data, lc, spec)?;
    let out = sdpcore::solve_feasibility(&program, &spec.solver)?;
    match out.status {
        Status::Infeasible => Ok(Outcome::Infeasible(out.note)),
        Status::Inconclusive => Ok(Outcome::Inconclusive(out.note)),
        Status::Feasible => {
            let raw = out
                .assignment
                .expect("feasible outcome carries an assignment");
            let (k, m, p) = extract_gains(&raw, data)?;
            let m = if spec.method == Method::NlfbLinearOnly {
                None
            } else {
                m
            };
            let rc = out.recheck.expect("feasible outcome is rechecked");
            Ok(Outcome::Certified(Box::new(Certificate {
                method: spec.method,
                k,
                m,
                p,
                raw,
                eps,
                l: spec.l.clone(),
                decay_rho: spec.decay_rho,
                solver_stats: Some(SolverStats {
                    iterations: out.iterations,
                    runtime_secs: out.runtime_secs,
                    achieved_margin: out.achieved_margin,
                    max_equality_residual: rc.max_equality_residual,
                }),
            })))
        }
    }
}

fn require_pd(m: &Mat, what: &str) -> Result<SymMat> {
    let s = SymMat::symmetrized(m)?;
    match matcore::definiteness(&s, 1e-12)? {
        Definiteness::Pd => Ok(s),
        other => Err(Error::CorruptCertificate(format!(
            "{what} is not positive definite ({other:?})"
        ))),
    }
}

/// `{Y}`: `P = (X0 Y)^-1`, `K = U0 Y (X0 Y)^-1`.
/// `{Y1, Y2, W}`: `P = W^-1`, `K = U0 Y1 W^-1`, `M = U0 Y2`.
pub fn extract_gains(
    raw: &BTreeMap<String, Mat>,
    data: &DataSet,
) -> Result<(Mat, Option<Mat>, SymMat)> {
    if let Some(y) = raw.get("Y") {
        if y.nrows() != data.samples() || y.ncols() != data.n() {
            return Err(Error::Dimension(format!("Y is {:?}", y.shape())));
        }
        let xy = &data.x0 * y;
        require_pd(&xy, "X0 Y")?;
        let inv = matcore::inverse(&xy)?;
        let k = &data.u0 * y * &inv;
        let p = SymMat::symmetrized(&inv)?;
        return Ok((k, None, p));
    }
    let get = |name: &str| {
        raw.get(name)
            .ok_or_else(|| Error::MissingVariable(name.to_string()))
    };
    let (y1, y2, w) = (get("Y1")?, get("Y2")?, get("W")?);
    require_pd(w, "W")?;
    let p = SymMat::symmetrized(&matcore::inverse(w)?)?;
    let k = &data.u0 * y1 * p.as_mat();
    let m = &data.u0 * y2;
    Ok((k, Some(m), p))
}

/// Smallest decay rate on a bisection grid in `[lo, hi]` for which the weak
/// program is feasible, with its certificate.
pub fn bisect_decay(
    data: &DataSet,
    lc: &LiftedConstraint,
    spec: &SynthesisSpec,
    lo: f64,
    hi: f64,
    steps: usize,
) -> Result<Option<(f64, Certificate)>> {
    let attempt = |rho: f64| -> Result<Option<Certificate>> {
        let s = SynthesisSpec {
            decay_rho: Some(rho),
            ..spec.clone()
        };
        Ok(match synthesize(data, lc, &s)? {
            Outcome::Certified(c) => Some(*c),
            _ => None,
        })
    };
    let Some(mut best) = attempt(hi)? else {
        return Ok(None);
    };
    let (mut a, mut b) = (lo, hi);
    for _ in 0..steps {
        let mid = 0.5 * (a + b);
        match attempt(mid)? {
            Some(c) => {
                best = c;
                b = mid;
            }
            None => a = mid,
        }
    }
    Ok(Some((b, best)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{
        build_convex_gradient, build_lipschitz, build_passive, build_rnn, lift,
    };
    use crate::matcore::{mat, Vector};
    use crate::plant::{
        collect_dataset, simulate_discrete, Nonlinearity, NonlinearitySpec, PlantModel,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dt_data(seed: u64) -> (PlantModel, DataSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = mat(&[&[1.1, 0.3], &[0.0, 0.9]]);
        let b = mat(&[&[0.0], &[1.0]]);
        let l = mat(&[&[0.1], &[0.0]]);
        let model = PlantModel::new(
            a,
            b,
            l,
            mat(&[&[1.0, 0.0]]),
            Nonlinearity::from_spec(&NonlinearitySpec::new("sin").with("gain", 0.3)).unwrap(),
            TimeDomain::Discrete,
        )
        .unwrap();
        let inputs: Vec<Vector> = (0..8)
            .map(|_| Vector::from_element(1, rng.random_range(-1.0..1.0)))
            .collect();
        let tr = simulate_discrete(&model, &Vector::from_vec(vec![1.0, -1.0]), &inputs).unwrap();
        let d = collect_dataset(&tr, &(0..8).collect::<Vec<_>>()).unwrap();
        (model, d)
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.name())
            );
        }
        assert!("dt-foo".parse::<Method>().is_err());
    }

    #[test]
    fn classify_examples() {
        let c = build_lipschitz(1.0, 2, 2).unwrap();
        assert_eq!(classify_case(&lift(&c, 2).unwrap()), CaseFamily::Qpsd);
        let g = SymMat::new(mat(&[&[2.0, -1.0], &[-1.0, 2.0]])).unwrap();
        assert_eq!(
            classify_case(&lift(&build_rnn(&g).unwrap(), 2).unwrap()),
            CaseFamily::Qzero
        );
        let c = build_convex_gradient(1.0, 2.0, 2).unwrap();
        assert_eq!(classify_case(&lift(&c, 2).unwrap()), CaseFamily::Qnsd);
        let c = build_passive(&mat(&[&[1.0, 0.0]])).unwrap();
        assert_eq!(classify_case(&lift(&c, 2).unwrap()), CaseFamily::Passive);
    }

    #[test]
    fn extract_trivial_gains() {
        // X0 = [I 0], U0 = 0, Y = [I; 0] => X0 Y = I, U0 Y = 0.
        let d = DataSet::new(
            Mat::zeros(1, 3),
            mat(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]),
            Mat::zeros(2, 3),
            Mat::zeros(1, 3),
            TimeDomain::Discrete,
            None,
        )
        .unwrap();
        let mut raw = BTreeMap::new();
        raw.insert(
            "Y".to_string(),
            mat(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]),
        );
        let (k, m, p) = extract_gains(&raw, &d).unwrap();
        assert_eq!(k, Mat::zeros(1, 2));
        assert!(m.is_none());
        assert_eq!(p.as_mat(), &Mat::identity(2, 2));
        raw.insert(
            "Y".to_string(),
            mat(&[&[-1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]),
        );
        assert!(matches!(
            extract_gains(&raw, &d),
            Err(Error::CorruptCertificate(_))
        ));
    }

    #[test]
    fn dt_lipschitz_synthesis_is_feasible_and_scale_free() {
        let (_, d) = dt_data(1);
        let c = build_lipschitz(0.3, 1, 1)
            .unwrap()
            .with_h(mat(&[&[1.0, 0.0]]))
            .unwrap();
        let lc = lift(&c, 2).unwrap();
        let spec = SynthesisSpec::new(Method::DtQpsd).with_l(mat(&[&[0.1], &[0.0]]));
        let Outcome::Certified(cert) = synthesize(&d, &lc, &spec).unwrap() else {
            panic!("expected a certificate");
        };
        let y = &cert.raw["Y"];
        for scale in [0.5, 2.0, 10.0] {
            let mut raw = BTreeMap::new();
            raw.insert("Y".to_string(), y * scale);
            let (k, _, _) = extract_gains(&raw, &d).unwrap();
            assert!((k - &cert.k).norm() <= 1e-9 * cert.k.norm().max(1.0));
        }
    }

    #[test]
    fn rejects_mismatched_configurations() {
        let (_, d) = dt_data(2);
        let c = build_lipschitz(0.3, 1, 1)
            .unwrap()
            .with_h(mat(&[&[1.0, 0.0]]))
            .unwrap();
        let lc = lift(&c, 2).unwrap();
        let l = mat(&[&[0.1], &[0.0]]);
        // Continuous method on discrete data.
        assert!(matches!(
            build_program(
                &d,
                &lc,
                &SynthesisSpec::new(Method::CtQpsd).with_l(l.clone())
            ),
            Err(Error::Precondition(_))
        ));
        // Q >= 0 and nonzero is not a Q = 0 case.
        assert!(build_program(
            &d,
            &lc,
            &SynthesisSpec::new(Method::DtQzero).with_l(l.clone())
        )
        .is_err());
        // Missing L.
        assert!(build_program(&d, &lc, &SynthesisSpec::new(Method::DtQpsd)).is_err());
        // Decay outside (0, 1).
        assert!(build_program(
            &d,
            &lc,
            &SynthesisSpec::new(Method::DtQpsd)
                .with_l(l.clone())
                .with_decay(1.5)
        )
        .is_err());
        // Indefinite lifted Q.
        let ind = crate::constraints::build_sector(
            &mat(&[&[-1.0, 0.0], &[0.0, 1.0]]),
            &mat(&[&[1.0, 0.0], &[0.0, 2.0]]),
        )
        .unwrap();
        let lci = lift(&ind, 2).unwrap();
        assert_eq!(lci.q_class, Definiteness::Indefinite);
        let d2 = DataSet::new(
            d.u0.clone(),
            d.x0.clone(),
            d.x1.clone(),
            Mat::zeros(2, d.samples()),
            TimeDomain::Discrete,
            None,
        )
        .unwrap();
        assert!(matches!(
            build_program(
                &d2,
                &lci,
                &SynthesisSpec::new(Method::DtQpsd).with_l(Mat::zeros(2, 2))
            ),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn rank_deficient_states_are_rejected() {
        let (_, d) = dt_data(3);
        let x0 = matcore::vstack(&[&d.x0.rows(0, 1).into_owned(), &d.x0.rows(0, 1).into_owned()]);
        let bad = DataSet::new(
            d.u0.clone(),
            x0,
            d.x1.clone(),
            d.f0.clone(),
            TimeDomain::Discrete,
            None,
        )
        .unwrap();
        let c = build_lipschitz(0.3, 1, 1)
            .unwrap()
            .with_h(mat(&[&[1.0, 0.0]]))
            .unwrap();
        let r = build_program(
            &bad,
            &lift(&c, 2).unwrap(),
            &SynthesisSpec::new(Method::DtQpsd).with_l(mat(&[&[0.1], &[0.0]])),
        );
        match r {
            Err(Error::Precondition(msg)) => assert!(msg.contains("W0")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
