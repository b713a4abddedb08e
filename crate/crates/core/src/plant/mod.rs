//! Ground-truth Lurie plants `x+ = A x + B u + L f(t, H x)` (or `x' = ...`),
//! experiment simulation and data-matrix assembly.

mod nonlinearity;
pub mod ode;

pub use nonlinearity::{surge_phi, Nonlinearity, NonlinearitySpec, CATALOG};
pub use ode::IntegratorOptions;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{self, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeDomain {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone)]
pub struct PlantModel {
    pub a: Mat,
    pub b: Mat,
    pub l: Mat,
    pub h: Mat,
    pub f: Nonlinearity,
    pub domain: TimeDomain,
}

impl PlantModel {
    pub fn new(
        a: Mat,
        b: Mat,
        l: Mat,
        h: Mat,
        f: Nonlinearity,
        domain: TimeDomain,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(Error::Dimension(format!(
                "A must be square, got {:?}",
                a.shape()
            )));
        }
        if b.nrows() != n || l.nrows() != n || h.ncols() != n {
            return Err(Error::Dimension(format!(
                "inconsistent plant: A {:?}, B {:?}, L {:?}, H {:?}",
                a.shape(),
                b.shape(),
                l.shape(),
                h.shape()
            )));
        }
        for (m, name) in [(&a, "A"), (&b, "B"), (&l, "L"), (&h, "H")] {
            matcore::check_finite(m, name)?;
        }
        let model = PlantModel {
            a,
            b,
            l,
            h,
            f,
            domain,
        };
        for t in [0.0, 1.0, -1.0, 10.0] {
            let v = model.f.eval(t, &Vector::zeros(model.p()));
            if v.len() != model.q() {
                return Err(Error::Dimension(format!(
                    "nonlinearity returns {} values, L has {} columns",
                    v.len(),
                    model.q()
                )));
            }
            if v.iter().any(|x| *x != 0.0) {
                return Err(Error::InvalidInput(format!(
                    "nonlinearity must vanish at z = 0 (t = {t})"
                )));
            }
        }
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn q(&self) -> usize {
        self.l.ncols()
    }

    pub fn p(&self) -> usize {
        self.h.nrows()
    }

    pub fn nonlinearity(&self, t: f64, x: &Vector) -> Vector {
        self.f.eval(t, &(&self.h * x))
    }

    /// Right-hand side `A x + B u + L f(t, H x)`.
    pub fn rhs(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u + &self.l * self.nonlinearity(t, x)
    }
}

/// Time-stamped samples of a simulation. `states`, `times` and
/// `nonlinearity_outputs` share one length; in discrete time `inputs` holds
/// one entry per step (one fewer than states), in continuous time one per
/// output time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub domain: TimeDomain,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub nonlinearity_outputs: Vec<Vector>,
    pub derivatives: Option<Vec<Vector>>,
}

pub fn simulate_discrete(model: &PlantModel, x0: &Vector, inputs: &[Vector]) -> Result<Trajectory> {
    if model.domain != TimeDomain::Discrete {
        return Err(Error::Precondition(
            "discrete simulation needs a discrete-time model".into(),
        ));
    }
    check_state(model, x0)?;
    let mut states = vec![x0.clone()];
    let mut outs = Vec::with_capacity(inputs.len() + 1);
    for (k, u) in inputs.iter().enumerate() {
        if u.len() != model.m() {
            return Err(Error::Dimension(format!(
                "input {k} has length {}, expected {}",
                u.len(),
                model.m()
            )));
        }
        let x = &states[k];
        let v = model.nonlinearity(k as f64, x);
        let next = &model.a * x + &model.b * u + &model.l * &v;
        if next.iter().any(|z| !z.is_finite()) {
            return Err(Error::Overflow { step: k + 1 });
        }
        outs.push(v);
        states.push(next);
    }
    let last = states.len() - 1;
    outs.push(model.nonlinearity(last as f64, &states[last]));
    Ok(Trajectory {
        domain: TimeDomain::Discrete,
        times: (0..states.len()).map(|k| k as f64).collect(),
        states,
        inputs: inputs.to_vec(),
        nonlinearity_outputs: outs,
        derivatives: None,
    })
}

fn check_state(model: &PlantModel, x0: &Vector) -> Result<()> {
    if x0.len() != model.n() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            model.n()
        )));
    }
    Ok(())
}

/// Integrates the plant under the open-loop input `u(t)` and records states,
/// inputs, nonlinearity values and exact model derivatives at `times`.
pub fn simulate_continuous<U>(
    model: &PlantModel,
    x0: &Vector,
    u: U,
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory>
where
    U: Fn(f64) -> Vector,
{
    if model.domain != TimeDomain::Continuous {
        return Err(Error::Precondition(
            "continuous simulation needs a continuous-time model".into(),
        ));
    }
    check_state(model, x0)?;
    let states = match times {
        [] => return Err(Error::InvalidInput("no output times".into())),
        [_] => vec![x0.clone()],
        _ => ode::integrate(|t, x| model.rhs(t, x, &u(t)), times, x0, opts)?,
    };
    let inputs: Vec<Vector> = times.iter().map(|&t| u(t)).collect();
    let outs: Vec<Vector> = times
        .iter()
        .zip(&states)
        .map(|(&t, x)| model.nonlinearity(t, x))
        .collect();
    let derivs = times
        .iter()
        .zip(&states)
        .zip(&inputs)
        .map(|((&t, x), uu)| model.rhs(t, x, uu))
        .collect();
    Ok(Trajectory {
        domain: TimeDomain::Continuous,
        times: times.to_vec(),
        states,
        inputs,
        nonlinearity_outputs: outs,
        derivatives: Some(derivs),
    })
}

/// `T` evenly spaced times on `[t0, tf]`, endpoints included.
pub fn linspace(t0: f64, tf: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![t0],
        _ => (0..count)
            .map(|k| t0 + (tf - t0) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Experiment data: `U0` (m x T), `X0` (n x T), `X1` (n x T) holding successor
/// states or derivatives, and `F0` (q x T).
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub u0: Mat,
    pub x0: Mat,
    pub x1: Mat,
    pub f0: Mat,
    pub domain: TimeDomain,
    pub sample_times: Option<Vec<f64>>,
}

impl DataSet {
    pub fn new(
        u0: Mat,
        x0: Mat,
        x1: Mat,
        f0: Mat,
        domain: TimeDomain,
        sample_times: Option<Vec<f64>>,
    ) -> Result<Self> {
        let d = DataSet {
            u0,
            x0,
            x1,
            f0,
            domain,
            sample_times,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.x0.ncols();
        if t == 0 {
            return Err(Error::Dimension(
                "data set needs at least one sample".into(),
            ));
        }
        if self.u0.ncols() != t || self.x1.ncols() != t || self.f0.ncols() != t {
            return Err(Error::Dimension(format!(
                "sample counts differ: U0 {}, X0 {t}, X1 {}, F0 {}",
                self.u0.ncols(),
                self.x1.ncols(),
                self.f0.ncols()
            )));
        }
        if self.x1.nrows() != self.x0.nrows() {
            return Err(Error::Dimension("X0 and X1 differ in row count".into()));
        }
        for (m, name) in [
            (&self.u0, "U0"),
            (&self.x0, "X0"),
            (&self.x1, "X1"),
            (&self.f0, "F0"),
        ] {
            matcore::check_finite(m, name)?;
        }
        if self.domain == TimeDomain::Continuous {
            match &self.sample_times {
                Some(ts) if ts.len() == t => {}
                _ => {
                    return Err(Error::InvalidInput(
                        "continuous-time data needs one sample time per column".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x0.nrows()
    }

    pub fn m(&self) -> usize {
        self.u0.nrows()
    }

    pub fn q(&self) -> usize {
        self.f0.nrows()
    }

    pub fn samples(&self) -> usize {
        self.x0.ncols()
    }

    /// `[U0; X0]`.
    pub fn w0(&self) -> Mat {
        matcore::vstack(&[&self.u0, &self.x0])
    }

    /// `[X0; F0; U0]`.
    pub fn psi0(&self) -> Mat {
        matcore::vstack(&[&self.x0, &self.f0, &self.u0])
    }

    /// Largest absolute entry across the four matrices, at least 1.
    pub fn scale(&self) -> f64 {
        [&self.u0, &self.x0, &self.x1, &self.f0]
            .iter()
            .map(|m| matcore::max_abs(m))
            .fold(1.0, f64::max)
    }
}

/// Assembles data matrices from the trajectory samples at `indices`.
pub fn collect_dataset(traj: &Trajectory, indices: &[usize]) -> Result<DataSet> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let len = traj.states.len();
    let cols = |vs: &[Vector], shift: usize| -> Result<Mat> {
        let rows = vs.first().map_or(0, |v| v.len());
        let mut m = Mat::zeros(rows, indices.len());
        for (c, &k) in indices.iter().enumerate() {
            let v = vs.get(k + shift).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "sample index {k} outside trajectory of length {len}"
                ))
            })?;
            m.set_column(c, v);
        }
        Ok(m)
    };
    let (x1, times) = match traj.domain {
        TimeDomain::Discrete => (cols(&traj.states, 1)?, None),
        TimeDomain::Continuous => {
            let d = traj.derivatives.as_ref().ok_or_else(|| {
                Error::InvalidInput("continuous trajectory lacks derivatives".into())
            })?;
            (
                cols(d, 0)?,
                Some(indices.iter().map(|&k| traj.times[k]).collect()),
            )
        }
    };
    DataSet::new(
        cols(&traj.inputs, 0)?,
        cols(&traj.states, 0)?,
        x1,
        cols(&traj.nonlinearity_outputs, 0)?,
        traj.domain,
        times,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assumptions {
    pub rank_w0: usize,
    pub full_w0: bool,
    pub rank_psi0: usize,
    pub full_psi0: bool,
    pub rank_x0: usize,
    pub full_x0: bool,
}

pub const RANK_TOL: f64 = 1e-9;

pub fn check_assumptions(data: &DataSet) -> Result<Assumptions> {
    let w0 = data.w0();
    let psi0 = data.psi0();
    let rank_w0 = matcore::row_rank(&w0, RANK_TOL)?;
    let rank_psi0 = matcore::row_rank(&psi0, RANK_TOL)?;
    let rank_x0 = matcore::row_rank(&data.x0, RANK_TOL)?;
    Ok(Assumptions {
        rank_w0,
        full_w0: rank_w0 == w0.nrows(),
        rank_psi0,
        full_psi0: rank_psi0 == psi0.nrows(),
        rank_x0,
        full_x0: rank_x0 == data.n(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_f() -> Nonlinearity {
        Nonlinearity::from_spec(&NonlinearitySpec::new("zero")).unwrap()
    }

    fn vecs(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn surge(l: Mat) -> PlantModel {
        PlantModel::new(
            mat(&[&[9.0 / 8.0, -1.0], &[0.0, 0.0]]),
            mat(&[&[0.0], &[1.0]]),
            l,
            mat(&[&[1.0, 0.0]]),
            Nonlinearity::from_spec(&NonlinearitySpec::new("surge_phi")).unwrap(),
            TimeDomain::Continuous,
        )
        .unwrap()
    }

    #[test]
    fn nilpotent_plant_and_one_step_dataset() {
        let m = PlantModel::new(
            Mat::zeros(2, 2),
            Mat::zeros(2, 1),
            Mat::zeros(2, 1),
            mat(&[&[1.0, 0.0]]),
            zero_f(),
            TimeDomain::Discrete,
        )
        .unwrap();
        let tr = simulate_discrete(&m, &vecs(&[1.0, 0.0]), &vec![vecs(&[0.0]); 3]).unwrap();
        assert_eq!(tr.states[0], vecs(&[1.0, 0.0]));
        assert!(tr.states[1..].iter().all(|x| x.norm() == 0.0));
        let d = collect_dataset(&tr, &[0]).unwrap();
        assert_eq!(d.samples(), 1);
        assert_eq!(d.x1, Mat::zeros(2, 1));
    }

    #[test]
    fn identity_plant_is_constant() {
        let m = PlantModel::new(
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::zeros(2, 1),
            mat(&[&[1.0, 0.0]]),
            zero_f(),
            TimeDomain::Discrete,
        )
        .unwrap();
        let tr = simulate_discrete(&m, &vecs(&[3.0, -2.0]), &vec![Vector::zeros(2); 5]).unwrap();
        assert!(tr.states.iter().all(|x| *x == vecs(&[3.0, -2.0])));
    }

    #[test]
    fn schur_plant_with_tanh_decays_and_matches_second_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw = Mat::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let rho = raw
            .complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        let a = raw * (0.6 / rho);
        let l = Mat::from_fn(3, 1, |_, _| rng.random_range(-0.1..0.1));
        let h = Mat::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0));
        let m = PlantModel::new(
            a.clone(),
            Mat::zeros(3, 1),
            l.clone(),
            h.clone(),
            Nonlinearity::from_spec(&NonlinearitySpec::new("tanh")).unwrap(),
            TimeDomain::Discrete,
        )
        .unwrap();
        let x0 = vecs(&[1.0, -0.5, 0.25]);
        let tr = simulate_discrete(&m, &x0, &vec![Vector::zeros(1); 50]).unwrap();
        // Independent recursion on plain arrays.
        let mut x = [1.0, -0.5, 0.25];
        for _ in 0..50 {
            let z: f64 = (0..3).map(|j| h[(0, j)] * x[j]).sum();
            let v = z.tanh();
            let mut nx = [0.0; 3];
            for i in 0..3 {
                nx[i] = (0..3).map(|j| a[(i, j)] * x[j]).sum::<f64>() + l[(i, 0)] * v;
            }
            x = nx;
        }
        let last = &tr.states[50];
        for i in 0..3 {
            assert!((last[i] - x[i]).abs() < 1e-12);
        }
        assert!(last.norm() < x0.norm());
    }

    #[test]
    fn discrete_dataset_satisfies_representation_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Mat::from_fn(3, 3, |_, _| rng.random_range(-0.5..0.5));
        let b = Mat::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let l = Mat::from_fn(3, 1, |_, _| rng.random_range(-1.0..1.0));
        let m = PlantModel::new(
            a.clone(),
            b.clone(),
            l.clone(),
            mat(&[&[1.0, 0.0, 0.0]]),
            Nonlinearity::from_spec(&NonlinearitySpec::new("sin")).unwrap(),
            TimeDomain::Discrete,
        )
        .unwrap();
        let inputs: Vec<Vector> = (0..12)
            .map(|_| Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let tr = simulate_discrete(&m, &vecs(&[0.3, 0.1, -0.2]), &inputs).unwrap();
        let d = collect_dataset(&tr, &(0..12).collect::<Vec<_>>()).unwrap();
        let resid = &d.x1 - (&a * &d.x0 + &b * &d.u0 + &l * &d.f0);
        assert!(matcore::max_abs(&resid) < 1e-14);
    }

    #[test]
    fn divergence_reports_step() {
        let m = PlantModel::new(
            mat(&[&[1e200]]),
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
            mat(&[&[1.0]]),
            zero_f(),
            TimeDomain::Discrete,
        )
        .unwrap();
        let r = simulate_discrete(&m, &vecs(&[1e200]), &vec![vecs(&[0.0]); 4]);
        assert!(matches!(r, Err(Error::Overflow { step: 1 })));
    }

    #[test]
    fn nonlinearity_must_vanish_at_origin() {
        let bad = Nonlinearity::custom(|_, z| z.map(|x| x + 1.0));
        let r = PlantModel::new(
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
            mat(&[&[1.0]]),
            bad,
            TimeDomain::Discrete,
        );
        assert!(r.is_err());
    }

    #[test]
    fn continuous_constant_field() {
        let m = PlantModel::new(
            Mat::zeros(2, 2),
            Mat::zeros(2, 1),
            Mat::zeros(2, 1),
            mat(&[&[1.0, 0.0]]),
            zero_f(),
            TimeDomain::Continuous,
        )
        .unwrap();
        let tr = simulate_continuous(
            &m,
            &vecs(&[2.0, -1.0]),
            |_| vecs(&[0.0]),
            &linspace(0.0, 1.0, 5),
            &IntegratorOptions::default(),
        )
        .unwrap();
        assert!(tr.states.iter().all(|x| *x == vecs(&[2.0, -1.0])));
    }

    #[test]
    fn surge_plant_initial_derivative_and_nonlinearity() {
        let m = surge(mat(&[&[-2.0], &[-2.4]]));
        let tr = simulate_continuous(
            &m,
            &vecs(&[2.0, -1.0]),
            |t| vecs(&[t.sin()]),
            &linspace(0.0, 1.0, 5),
            &IntegratorOptions::default(),
        )
        .unwrap();
        let d0 = &tr.derivatives.as_ref().unwrap()[0];
        assert!((d0[0] + 21.25).abs() < 1e-12 && (d0[1] + 29.4).abs() < 1e-12);
        assert_eq!(tr.nonlinearity_outputs[0][0], 12.25);
        let d = collect_dataset(&tr, &[0, 1, 2, 3, 4]).unwrap();
        let u0 = [0.0, 0.2474, 0.4794, 0.6816, 0.8415];
        for (k, u) in u0.iter().enumerate() {
            assert!((d.u0[(0, k)] - u).abs() < 5e-5);
        }
        assert_eq!(d.x0.column(0), vecs(&[2.0, -1.0]));
    }

    #[test]
    fn continuous_derivatives_are_model_consistent() {
        let l = mat(&[&[-2.0], &[-2.4]]);
        let m = surge(l.clone());
        let times = linspace(0.0, 1.0, 10);
        let tr = simulate_continuous(
            &m,
            &vecs(&[2.0, -1.0]),
            |t| vecs(&[t.sin()]),
            &times,
            &IntegratorOptions::default(),
        )
        .unwrap();
        let d = collect_dataset(&tr, &(0..10).collect::<Vec<_>>()).unwrap();
        let resid = &d.x1 - (&m.a * &d.x0 + &m.b * &d.u0 + &l * &d.f0);
        assert!(matcore::max_abs(&resid) < 1e-8);
    }

    #[test]
    fn tighter_tolerance_barely_moves_the_data() {
        let m = surge(mat(&[&[-2.0], &[-2.4]]));
        let times = linspace(0.0, 1.0, 5);
        let run = |tol: f64| {
            let tr = simulate_continuous(
                &m,
                &vecs(&[2.0, -1.0]),
                |t| vecs(&[t.sin()]),
                &times,
                &IntegratorOptions::with_tol(tol),
            )
            .unwrap();
            collect_dataset(&tr, &[0, 1, 2, 3, 4]).unwrap()
        };
        let a = run(1e-10);
        let b = run(1e-12);
        for (x, y) in [
            (&a.x0, &b.x0),
            (&a.x1, &b.x1),
            (&a.f0, &b.f0),
            (&a.u0, &b.u0),
        ] {
            assert!(matcore::max_abs(&(x - y)) < 1e-6);
        }
    }

    #[test]
    fn rank_assumptions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0 = Mat::from_fn(2, 6, |_, _| rng.random_range(-1.0..1.0));
        let d = DataSet::new(
            Mat::zeros(1, 6),
            x0.clone(),
            x0,
            Mat::zeros(1, 6),
            TimeDomain::Discrete,
            None,
        )
        .unwrap();
        let a = check_assumptions(&d).unwrap();
        assert!(!a.full_w0);
        assert_eq!(a.rank_w0, 2);
        assert!(a.full_x0);
    }

    #[test]
    fn dataset_validation() {
        assert!(DataSet::new(
            Mat::zeros(1, 3),
            Mat::zeros(2, 3),
            Mat::zeros(2, 2),
            Mat::zeros(1, 3),
            TimeDomain::Discrete,
            None
        )
        .is_err());
        assert!(DataSet::new(
            Mat::zeros(1, 3),
            Mat::zeros(2, 3),
            Mat::zeros(2, 3),
            Mat::zeros(1, 3),
            TimeDomain::Continuous,
            None
        )
        .is_err());
        let tr = Trajectory {
            domain: TimeDomain::Discrete,
            times: vec![0.0, 1.0],
            states: vec![vecs(&[1.0]), vecs(&[0.0])],
            inputs: vec![vecs(&[0.0])],
            nonlinearity_outputs: vec![vecs(&[0.0]), vecs(&[0.0])],
            derivatives: None,
        };
        assert!(collect_dataset(&tr, &[1]).is_err());
        assert!(collect_dataset(&tr, &[]).is_err());
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(0.0, 1.0, 5), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(linspace(0.0, 1.0, 1), vec![0.0]);
    }
}
