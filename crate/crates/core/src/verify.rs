//! Independent certificate checks. Everything except the closed-loop
//! simulation uses only the data matrices, the certificate and the constraint.

use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constraints::LiftedConstraint;
use crate::error::{Error, Result};
use crate::matcore::{self, Definiteness, Mat, SymMat, Vector};
use crate::plant::{ode, DataSet, IntegratorOptions, PlantModel, TimeDomain};
use crate::sdpcore;
use crate::synth::{self, Certificate, Method, SynthesisSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub details: String,
}

impl Check {
    fn new(name: &str, residual: f64, tolerance: f64, pass: bool, details: String) -> Self {
        Check {
            name: name.to_string(),
            residual,
            tolerance,
            pass,
            details,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Informational {
    pub name: String,
    pub raised: bool,
    pub details: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
    pub overall: bool,
    pub informational: Vec<Informational>,
}

impl VerificationReport {
    pub fn new(checks: Vec<Check>, informational: Vec<Informational>) -> Self {
        let overall = checks.iter().all(|c| c.pass);
        VerificationReport {
            checks,
            overall,
            informational,
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub n_samples: usize,
    pub seed: u64,
    pub omega_points: usize,
    /// Margin for the matrix inequality; defaults to `eps / 2`.
    pub tol: Option<f64>,
    /// Bound on equality residuals; defaults to `1e-6 * scale`.
    pub eq_tol: Option<f64>,
    /// Relative mismatch allowed between stored gains and decision variables.
    pub consistency_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            n_samples: 10_000,
            seed: 0,
            omega_points: 720,
            tol: None,
            eq_tol: None,
            consistency_tol: 1e-6,
        }
    }
}

/// Data-based closed loop `x' = acl x + bv v` (successor or derivative).
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopData {
    pub acl: Mat,
    pub bv: Mat,
}

pub fn is_passive(cert: &Certificate, data: &DataSet) -> bool {
    match cert.method {
        Method::CtPassive | Method::NlfbCtPassive => true,
        Method::NlfbLinearOnly => data.domain == TimeDomain::Continuous,
        _ => false,
    }
}

fn check_domain(cert: &Certificate, data: &DataSet) -> Result<()> {
    let dt = cert.method.is_dt_linear() || cert.method == Method::Nlfb;
    let ct = cert.method.is_ct_linear()
        || matches!(cert.method, Method::CtPassive | Method::NlfbCtPassive);
    if (dt && data.domain != TimeDomain::Discrete) || (ct && data.domain != TimeDomain::Continuous)
    {
        return Err(Error::Precondition(format!(
            "certificate method {} does not match {:?} data",
            cert.method, data.domain
        )));
    }
    Ok(())
}

fn cert_l(cert: &Certificate) -> Result<&Mat> {
    cert.l
        .as_ref()
        .ok_or_else(|| Error::Malformed(format!("method {} certificate lacks L", cert.method)))
}

fn get_raw<'a>(cert: &'a Certificate, name: &str) -> Result<&'a Mat> {
    cert.raw
        .get(name)
        .ok_or_else(|| Error::MissingVariable(name.to_string()))
}

/// `P` and the closed loop rebuilt from the decision variables alone.
pub fn raw_closed_loop(cert: &Certificate, data: &DataSet) -> Result<(SymMat, ClosedLoopData)> {
    if cert.method.is_nonlinear_feedback() {
        let w = get_raw(cert, "W")?;
        let p = SymMat::symmetrized(&matcore::inverse(&matcore::symmetrize(w))?)?;
        let g1 = get_raw(cert, "Y1")? * p.as_mat();
        let g2 = get_raw(cert, "Y2")?;
        let cl = ClosedLoopData {
            acl: &data.x1 * g1,
            bv: &data.x1 * g2,
        };
        return Ok((p, cl));
    }
    let y = get_raw(cert, "Y")?;
    let l = cert_l(cert)?;
    let w = matcore::symmetrize(&(&data.x0 * y));
    let p = SymMat::symmetrized(&matcore::inverse(&w)?)?;
    let phi = &data.x1 - l * &data.f0;
    let cl = ClosedLoopData {
        acl: phi * y * p.as_mat(),
        bv: l.clone(),
    };
    Ok((p, cl))
}

/// Closed loop implied by the stored gains `K` (and `M`).
pub fn gain_closed_loop(cert: &Certificate, data: &DataSet) -> Result<ClosedLoopData> {
    if cert.method.is_nonlinear_feedback() {
        let (g1, g2) = synth::nonlinear_feedback_g(data, &cert.k, cert.m.as_ref())?;
        return Ok(ClosedLoopData {
            acl: &data.x1 * g1,
            bv: &data.x1 * g2,
        });
    }
    let l = cert_l(cert)?;
    let g = synth::linear_feedback_g(data, &cert.k)?;
    Ok(ClosedLoopData {
        acl: (&data.x1 - l * &data.f0) * g,
        bv: l.clone(),
    })
}

/// Lyapunov-difference form over `(x, v)`: successor `V(x+) - rho V(x)` or
/// derivative `dV/dt`.
pub fn lyapunov_form(domain: TimeDomain, cl: &ClosedLoopData, p: &Mat, rho: f64) -> Mat {
    let (a, b) = (&cl.acl, &cl.bv);
    let (n, q) = (a.nrows(), b.ncols());
    let (m11, m12, m22) = match domain {
        TimeDomain::Discrete => (
            a.transpose() * p * a - p * rho,
            a.transpose() * p * b,
            b.transpose() * p * b,
        ),
        TimeDomain::Continuous => (a.transpose() * p + p * a, p * b, Mat::zeros(q, q)),
    };
    matcore::symmetrize(&matcore::sym_blocks(
        &[n, q],
        &[vec![Some(m11), Some(m12)], vec![Some(m22)]],
    ))
}

fn rho_of(cert: &Certificate) -> f64 {
    cert.decay_rho.unwrap_or(1.0)
}

/// Lyapunov block of the passive conditions in the decision variables:
/// `Y'Phi' + Phi Y` (or `Y1'X1' + X1 Y1`).
pub fn passive_lyapunov_block(cert: &Certificate, data: &DataSet) -> Result<Mat> {
    let phi_y = if cert.method.is_nonlinear_feedback() {
        &data.x1 * get_raw(cert, "Y1")?
    } else {
        let l = cert_l(cert)?;
        (&data.x1 - l * &data.f0) * get_raw(cert, "Y")?
    };
    Ok(&phi_y + phi_y.transpose())
}

/// Matrix inequality reassembled from the decision variables, with its
/// largest eigenvalue as residual.
pub fn check_matrix_inequality(
    cert: &Certificate,
    data: &DataSet,
    lc: &LiftedConstraint,
    tol: Option<f64>,
) -> Result<Check> {
    check_domain(cert, data)?;
    let tol = tol.unwrap_or(cert.eps / 2.0);
    if is_passive(cert, data) {
        let block = passive_lyapunov_block(cert, data)?;
        let e = matcore::max_eig(&matcore::symmetrize(&block));
        return Ok(Check::new(
            "matrix_inequality",
            e,
            tol,
            e <= -tol,
            "largest eigenvalue of the passive Lyapunov block".into(),
        ));
    }
    let (p, cl) = raw_closed_loop(cert, data)?;
    let m = lyapunov_form(data.domain, &cl, p.as_mat(), rho_of(cert)) + lc.block_matrix();
    let e = matcore::max_eig(&matcore::symmetrize(&m));
    let (tol, pass) = if cert.decay_rho.is_some() {
        (0.0, e <= 0.0)
    } else {
        (tol, e <= -tol)
    };
    Ok(Check::new(
        "matrix_inequality",
        e,
        tol,
        pass,
        format!(
            "largest eigenvalue of the reconstructed {}x{} inequality",
            m.nrows(),
            m.ncols()
        ),
    ))
}

/// Equality residuals of the originating program evaluated at the raw
/// decision variables.
pub fn check_equalities(
    cert: &Certificate,
    data: &DataSet,
    lc: &LiftedConstraint,
    eq_tol: Option<f64>,
) -> Result<Check> {
    let spec = SynthesisSpec {
        l: cert.l.clone(),
        decay_rho: cert.decay_rho,
        ..SynthesisSpec::new(cert.method)
    };
    let (program, _) = synth::build_program(data, lc, &spec)?;
    let rc = sdpcore::recheck(&program, &cert.raw)?;
    let tol = eq_tol.unwrap_or(1e-6 * data.scale());
    let r = rc.max_equality_residual;
    Ok(Check::new(
        "equality_residual",
        r,
        tol,
        r <= tol,
        format!("{} equality constraints", program.equalities().len()),
    ))
}

fn rel_diff(a: &Mat, b: &Mat) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    (a - b).norm() / a.norm().max(b.norm()).max(1.0)
}

/// Stored `(K, M, P)` against the gains implied by the decision variables.
pub fn check_consistency(cert: &Certificate, data: &DataSet, tol: f64) -> Result<Check> {
    let (k, m, p) = match synth::extract_gains(&cert.raw, data) {
        Ok(g) => g,
        Err(e @ Error::CorruptCertificate(_)) => {
            return Ok(Check::new(
                "certificate_consistency",
                f64::INFINITY,
                tol,
                false,
                e.to_string(),
            ))
        }
        Err(e) => return Err(e),
    };
    let mut worst = rel_diff(&k, &cert.k).max(rel_diff(p.as_mat(), cert.p.as_mat()));
    if cert.method != Method::NlfbLinearOnly {
        match (&m, &cert.m) {
            (Some(a), Some(b)) => worst = worst.max(rel_diff(a, b)),
            (None, None) => {}
            _ => worst = f64::INFINITY,
        }
    } else if cert.m.is_some() {
        worst = f64::INFINITY;
    }
    Ok(Check::new(
        "certificate_consistency",
        worst,
        tol,
        worst <= tol,
        "relative mismatch of stored K, M, P against the decision variables".into(),
    ))
}

pub fn check_p_definite(cert: &Certificate) -> Check {
    let e = matcore::min_eig(cert.p.as_mat());
    Check::new(
        "lyapunov_pd",
        e,
        0.0,
        e > 0.0,
        "smallest eigenvalue of P".into(),
    )
}

/// Samples `(x, v)` on the unit sphere, keeps constraint-admissible pairs and
/// evaluates the Lyapunov-difference form built from the stored gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStats {
    pub max: f64,
    pub admissible: usize,
    pub draws: usize,
}

/// Draws until `n_samples` admissible pairs are found or `100 n_samples`
/// draws are spent.
pub fn lyapunov_sample_stats(
    cert: &Certificate,
    data: &DataSet,
    lc: &LiftedConstraint,
    n_samples: usize,
    seed: u64,
) -> Result<SampleStats> {
    check_domain(cert, data)?;
    let cl = gain_closed_loop(cert, data)?;
    let form = lyapunov_form(data.domain, &cl, cert.p.as_mat(), rho_of(cert));
    let (n, q) = (data.n(), data.q());
    // With R < 0 the admissible v for a given x form a ball around
    // -R^-1 S' x; its centre is tried alongside each random pair so that thin
    // admissible sets (e.g. only v = 0) are still covered.
    let centre = if matcore::definiteness(&lc.r, 1e-12)? == Definiteness::Nd {
        Some(-matcore::inverse(lc.r.as_mat())? * lc.s.transpose())
    } else {
        None
    };
    let value = |x: &Vector, v: &Vector| -> Option<f64> {
        let nz = (x.norm_squared() + v.norm_squared()).sqrt();
        if nz == 0.0 || lc.evaluate(x, v) < 0.0 {
            return None;
        }
        let z = Vector::from_iterator(n + q, x.iter().chain(v.iter()).copied()) / nz;
        Some(z.dot(&(&form * &z)))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut admissible = 0usize;
    let mut worst = f64::NEG_INFINITY;
    let budget = 100 * n_samples.max(1);
    let mut draws = 0usize;
    while draws < budget && admissible < n_samples {
        draws += 1;
        let z = Vector::from_fn(n + q, |_, _| StandardNormal.sample(&mut rng));
        let x = z.rows(0, n).into_owned();
        let v = z.rows(n, q).into_owned();
        let mut hits = vec![value(&x, &v)];
        if let Some(c) = &centre {
            hits.push(value(&x, &(c * &x)));
        }
        for h in hits.into_iter().flatten() {
            admissible += 1;
            worst = worst.max(h);
        }
    }
    Ok(SampleStats {
        max: worst,
        admissible,
        draws,
    })
}

pub fn sample_lyapunov_decrease(
    cert: &Certificate,
    data: &DataSet,
    lc: &LiftedConstraint,
    n_samples: usize,
    seed: u64,
) -> Result<Check> {
    let st = lyapunov_sample_stats(cert, data, lc, n_samples, seed)?;
    let (pass, details) = if st.admissible < 10 {
        (
            false,
            format!(
                "inconclusive: only {} admissible pairs in {} draws",
                st.admissible, st.draws
            ),
        )
    } else {
        (
            st.max < 0.0,
            format!("{} admissible pairs in {} draws", st.admissible, st.draws),
        )
    };
    Ok(Check::new(
        "lyapunov_decrease_sampled",
        st.max,
        0.0,
        pass,
        details,
    ))
}

/// Largest eigenvalue of a Hermitian matrix through its real embedding.
fn hermitian_max_eig(h: &nalgebra::DMatrix<Complex<f64>>) -> f64 {
    let q = h.nrows();
    let mut r = Mat::zeros(2 * q, 2 * q);
    for i in 0..q {
        for j in 0..q {
            let c = h[(i, j)];
            r[(i, j)] = c.re;
            r[(i + q, j + q)] = c.re;
            r[(i, j + q)] = -c.im;
            r[(i + q, j)] = c.im;
        }
    }
    matcore::max_eig(&matcore::symmetrize(&r))
}

fn spectral_radius(a: &Mat) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Largest eigenvalue of the frequency-domain constraint form at `omega`.
pub fn kyp_value(cl: &ClosedLoopData, lc: &LiftedConstraint, omega: f64) -> Result<f64> {
    let n = cl.acl.nrows();
    let z = Complex::new(omega.cos(), omega.sin());
    let mc = nalgebra::DMatrix::<Complex<f64>>::from_fn(n, n, |i, j| {
        let d = if i == j { z } else { Complex::new(0.0, 0.0) };
        d - Complex::new(cl.acl[(i, j)], 0.0)
    });
    let bv = cl.bv.map(|x| Complex::new(x, 0.0));
    let t = mc
        .lu()
        .solve(&bv)
        .ok_or_else(|| Error::Domain(format!("zI - Acl singular at omega = {omega}")))?;
    let cq = lc.q.as_mat().map(|x| Complex::new(x, 0.0));
    let cs = lc.s.map(|x| Complex::new(x, 0.0));
    let cr = lc.r.as_mat().map(|x| Complex::new(x, 0.0));
    let ta = t.adjoint();
    let h = &ta * &cq * &t + &ta * &cs + cs.adjoint() * &t + cr;
    let h = (&h + h.adjoint()) * Complex::new(0.5, 0.0);
    Ok(hermitian_max_eig(&h))
}

/// Frequency sweep over `points` uniform frequencies on `[0, 2 pi)`, after a
/// Schur stability check of the data-based closed loop.
pub fn kyp_frequency_sweep(
    cert: &Certificate,
    data: &DataSet,
    lc: &LiftedConstraint,
    points: usize,
) -> Result<Check> {
    if data.domain != TimeDomain::Discrete {
        return Err(Error::Precondition(
            "frequency sweep applies to discrete-time certificates".into(),
        ));
    }
    let cl = gain_closed_loop(cert, data)?;
    let sr = spectral_radius(&cl.acl);
    if !(sr < 1.0) {
        return Ok(Check::new(
            "kyp_frequency_sweep",
            sr,
            1.0,
            false,
            format!("closed loop not Schur: spectral radius {sr:.6}"),
        ));
    }
    let points = points.max(1);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..points {
        let w = 2.0 * std::f64::consts::PI * k as f64 / points as f64;
        worst = worst.max(kyp_value(&cl, lc, w)?);
    }
    Ok(Check::new(
        "kyp_frequency_sweep",
        worst,
        0.0,
        worst < 0.0,
        format!("{points} frequencies, spectral radius {sr:.6}"),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopResult {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub converged: bool,
    pub final_norm: f64,
    pub blowup_time: Option<f64>,
}

/// Simulates the true plant under `u = K x (+ M f(t, H x))`. In discrete time
/// `horizon` is a step count.
pub fn simulate_closed_loop(
    model: &PlantModel,
    cert: &Certificate,
    x0: &Vector,
    horizon: f64,
    opts: &IntegratorOptions,
) -> Result<ClosedLoopResult> {
    if x0.len() != model.n() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            model.n()
        )));
    }
    if cert.k.shape() != (model.m(), model.n()) {
        return Err(Error::Dimension(format!(
            "K is {:?}, plant has m = {}, n = {}",
            cert.k.shape(),
            model.m(),
            model.n()
        )));
    }
    let control = |t: f64, x: &Vector| -> Vector {
        let mut u = &cert.k * x;
        if let Some(m) = &cert.m {
            u += m * model.nonlinearity(t, x);
        }
        u
    };
    let x0n = x0.norm();
    let finish = |times: Vec<f64>, states: Vec<Vector>, blowup: Option<f64>| {
        let final_norm = if blowup.is_some() {
            f64::INFINITY
        } else {
            states.last().map_or(f64::INFINITY, |x| x.norm())
        };
        ClosedLoopResult {
            converged: blowup.is_none() && final_norm <= 1e-3 * x0n,
            times,
            states,
            final_norm,
            blowup_time: blowup,
        }
    };
    match model.domain {
        TimeDomain::Discrete => {
            let steps = horizon.max(0.0).round() as usize;
            let mut states = vec![x0.clone()];
            let mut times = vec![0.0];
            for k in 0..steps {
                let t = k as f64;
                let x = &states[k];
                let next =
                    &model.a * x + &model.b * control(t, x) + &model.l * model.nonlinearity(t, x);
                if next.iter().any(|z| !z.is_finite()) || next.norm() > opts.blowup {
                    return Ok(finish(times, states, Some(t + 1.0)));
                }
                states.push(next);
                times.push(t + 1.0);
            }
            Ok(finish(times, states, None))
        }
        TimeDomain::Continuous => {
            let times = crate::plant::linspace(0.0, horizon, 401);
            match ode::integrate(|t, x| model.rhs(t, x, &control(t, x)), &times, x0, opts) {
                Ok(states) => Ok(finish(times, states, None)),
                Err(Error::Integration { t, .. }) => {
                    Ok(finish(vec![0.0], vec![x0.clone()], Some(t)))
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// For passive continuous-time certificates: `H L < 0` together with the
/// Lyapunov conditions points to a minimum-phase open-loop triple.
pub fn passifiability_flag(h: &Mat, l: &Mat, conditions_held: bool) -> Informational {
    let name = "passifiability".to_string();
    if matcore::row_rank(&l.transpose(), crate::plant::RANK_TOL).unwrap_or(0) < l.ncols() {
        return Informational {
            name,
            raised: false,
            details: "skipped: L is not of full column rank".into(),
        };
    }
    let hl = h * l;
    let nd = SymMat::symmetrized(&hl)
        .and_then(|s| matcore::definiteness(&s, 1e-12))
        .map(|d| d == Definiteness::Nd)
        .unwrap_or(false);
    let raised = nd && conditions_held;
    let details = match (nd, conditions_held) {
        (true, true) => {
            "H L < 0 and the passive conditions hold: open-loop triple (A, L, H) is minimum phase"
                .into()
        }
        (true, false) => "H L < 0 but the passive conditions do not hold".into(),
        (false, _) => format!(
            "H L is not negative definite (max eig of sym part {:.6})",
            matcore::max_eig(&matcore::symmetrize(&hl))
        ),
    };
    Informational {
        name,
        raised,
        details,
    }
}

/// Closed-loop simulation inputs for the harness-side check.
#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub model: PlantModel,
    pub x0: Vector,
    pub horizon: f64,
    pub opts: IntegratorOptions,
}

pub fn verify_certificate(
    cert: &Certificate,
    data: &DataSet,
    lc: &LiftedConstraint,
    opts: &VerifyOptions,
    sim: Option<&SimulationSetup>,
) -> Result<VerificationReport> {
    check_domain(cert, data)?;
    let mut checks = vec![
        check_consistency(cert, data, opts.consistency_tol)?,
        check_p_definite(cert),
    ];
    let mi = match raw_closed_loop(cert, data) {
        Ok(_) => check_matrix_inequality(cert, data, lc, opts.tol)?,
        Err(e) => Check::new(
            "matrix_inequality",
            f64::INFINITY,
            0.0,
            false,
            e.to_string(),
        ),
    };
    checks.push(mi);
    checks.push(check_equalities(cert, data, lc, opts.eq_tol)?);
    checks.push(sample_lyapunov_decrease(
        cert,
        data,
        lc,
        opts.n_samples,
        opts.seed,
    )?);
    if data.domain == TimeDomain::Discrete {
        checks.push(kyp_frequency_sweep(cert, data, lc, opts.omega_points)?);
    }
    if let Some(s) = sim {
        let r = simulate_closed_loop(&s.model, cert, &s.x0, s.horizon, &s.opts)?;
        let details = match r.blowup_time {
            Some(t) => format!("diverged at t = {t}"),
            None => format!(
                "|x(end)| = {:.3e}, |x0| = {:.3e}",
                r.final_norm,
                s.x0.norm()
            ),
        };
        checks.push(Check::new(
            "closed_loop_simulation",
            r.final_norm,
            1e-3 * s.x0.norm(),
            r.converged,
            details,
        ));
    }
    let mut info = Vec::new();
    if is_passive(cert, data) {
        if let Some(l) = &cert.l {
            let held = checks
                .iter()
                .filter(|c| c.name != "closed_loop_simulation")
                .all(|c| c.pass);
            info.push(passifiability_flag(&lc.s.transpose(), l, held));
        }
    }
    Ok(VerificationReport::new(checks, info))
}
