//! Reproducible experiments: the surge-compressor examples and a seeded
//! generator of random discrete-time Lurie plants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::constraints::{
    build_lipschitz, build_passive, build_sector, lift, LiftedConstraint, QuadConstraint,
};
use crate::error::Result;
use crate::matcore::{self, mat, Mat, Vector};
use crate::plant::{
    collect_dataset, linspace, simulate_continuous, simulate_discrete, DataSet, IntegratorOptions,
    Nonlinearity, NonlinearitySpec, PlantModel, TimeDomain,
};
use crate::synth::Method;

/// Values printed with the original surge examples (four or five
/// significant digits), kept as references for drift checks.
pub mod printed {
    pub const EX1_U0: [[f64; 5]; 1] = [[0.0, 0.2474, 0.4794, 0.6816, 0.8415]];
    pub const EX1_X0: [[f64; 5]; 2] = [
        [2.0, 1.269, 1.3208, 1.5113, 1.7451],
        [-1.0, -2.993, -4.3724, -6.0225, -8.2189],
    ];
    pub const EX1_X1: [[f64; 5]; 2] = [
        [-21.25, -5.309, -4.6511, -5.9817, -8.1951],
        [-29.4, -11.428, -12.1319, -15.7636, -21.2112],
    ];
    pub const EX1_F0: [[f64; 5]; 1] = [[12.25, 4.8648, 5.2547, 6.8522, 9.1886]];
    pub const EX1_Y: [[f64; 2]; 5] = [
        [1.2922, 1.6018],
        [-0.1923, 1.0528],
        [0.5113, -0.5863],
        [0.5192, -1.1827],
        [-1.0316, 0.2419],
    ];
    pub const EX1_K: [f64; 2] = [4.3339, -3.7435];
    pub const EX1_LYAP: [[f64; 2]; 2] = [[-23.6176, -30.3340], [-30.3340, -39.1227]];

    /// Columns `Y1 | Y2`.
    pub const EX2_Y: [[f64; 3]; 10] = [
        [0.9823, -3.5073, -5.6005],
        [-2.0064, 8.5180, 12.8729],
        [-1.3370, 7.1478, 10.2375],
        [0.41465, 3.1658, 2.6801],
        [2.2302, -0.2915, -4.4256],
        [3.5496, -3.1425, -10.2866],
        [3.7054, -4.8273, -12.6223],
        [2.2325, -4.4031, -9.1124],
        [-0.7529, -1.5849, -0.4900],
        [-6.3569, 3.4286, 16.4407],
    ];
    /// Value of `Y1[3][0]` that is consistent with the other printed entries.
    pub const EX2_Y1_30_CONSISTENT: f64 = 0.41628;
    pub const EX2_K: [f64; 2] = [7.0779, -3.9230];
    pub const EX2_M: f64 = -3.5130;
    pub const EX2_P: [[f64; 2]; 2] = [[4.1628, -2.0853], [-2.0853, 1.1872]];
    pub const EX2_LYAP: [[f64; 2]; 2] = [[-2.5259, -2.6865], [-2.6865, -5.2943]];

    pub const EX3_K: [f64; 2] = [35.8066, -2.1645];
    pub const EX3_P: [[f64; 2]; 2] = [[0.5217, -0.0181], [-0.0181, 0.015]];
}

pub fn rows<const R: usize, const C: usize>(a: &[[f64; C]; R]) -> Mat {
    Mat::from_fn(R, C, |i, j| a[i][j])
}

pub const SURGE_A: [[f64; 2]; 2] = [[1.125, -1.0], [0.0, 0.0]];
pub const SURGE_X0: [f64; 2] = [2.0, -1.0];
pub const SURGE_BETA: f64 = 1.2;

/// `alpha * [-1; -beta]`.
pub fn surge_l(alpha: f64) -> Mat {
    mat(&[&[-alpha], &[-alpha * SURGE_BETA]])
}

pub fn surge_h() -> Mat {
    mat(&[&[1.0, 0.0]])
}

/// Surge plant `x' = A x + B u + L phi(x1)` with the given `L`.
pub fn surge_plant(l: Mat) -> Result<PlantModel> {
    PlantModel::new(
        rows(&SURGE_A),
        mat(&[&[0.0], &[1.0]]),
        l,
        surge_h(),
        Nonlinearity::from_spec(&NonlinearitySpec::new("surge_phi"))?,
        TimeDomain::Continuous,
    )
}

pub fn passive_constraint() -> Result<QuadConstraint> {
    build_passive(&surge_h())
}

pub fn passive_lifted() -> Result<LiftedConstraint> {
    lift(&passive_constraint()?, 2)
}

fn sin_input(t: f64) -> Vector {
    Vector::from_element(1, t.sin())
}

/// Open-loop experiment on the surge plant with `l_state`, `u = sin t`, `T`
/// samples on `[0, 1]`; the derivative matrix is formed with `l_deriv`.
pub fn surge_experiment(
    l_state: &Mat,
    l_deriv: &Mat,
    samples: usize,
    opts: &IntegratorOptions,
) -> Result<DataSet> {
    let model = surge_plant(l_state.clone())?;
    let times = linspace(0.0, 1.0, samples);
    let tr = simulate_continuous(
        &model,
        &Vector::from_row_slice(&SURGE_X0),
        sin_input,
        &times,
        opts,
    )?;
    let mut d = collect_dataset(&tr, &(0..samples).collect::<Vec<_>>())?;
    d.x1 = &model.a * &d.x0 + &model.b * &d.u0 + l_deriv * &d.f0;
    d.validate()?;
    Ok(d)
}

/// Data matching the printed surge matrices: states from the `alpha = 1`
/// plant at ode45-default tolerances, derivatives with `alpha = 2`.
pub fn example1_data() -> Result<DataSet> {
    surge_experiment(
        &surge_l(1.0),
        &surge_l(2.0),
        5,
        &IntegratorOptions::ode45_defaults(),
    )
}

/// The `alpha = 2` plant simulated end to end at tight tolerance.
pub fn example1_literal_data() -> Result<DataSet> {
    let l = surge_l(2.0);
    surge_experiment(&l, &l, 5, &IntegratorOptions::default())
}

pub fn example1_l_hat() -> Mat {
    surge_l(2.0)
}

/// Surge plant without the inner loop, `L = [-1; 0]`.
pub fn example2_plant() -> Result<PlantModel> {
    surge_plant(mat(&[&[-1.0], &[0.0]]))
}

/// Ten-sample experiment matching the printed nonlinear-feedback solution:
/// states from the `alpha = 1` surge run, derivatives with `L = [-2; 0]`.
pub fn example2_data() -> Result<DataSet> {
    surge_experiment(
        &surge_l(1.0),
        &mat(&[&[-2.0], &[0.0]]),
        10,
        &IntegratorOptions::ode45_defaults(),
    )
}

/// The `L = [-1; 0]` plant simulated end to end.
pub fn example2_literal_data() -> Result<DataSet> {
    let l = mat(&[&[-1.0], &[0.0]]);
    surge_experiment(&l, &l, 10, &IntegratorOptions::default())
}

pub fn example2_printed_y() -> (Mat, Mat) {
    let y = rows(&printed::EX2_Y);
    (y.columns(0, 2).into_owned(), y.columns(2, 1).into_owned())
}

/// A random discrete-time instance together with the matching constraint.
#[derive(Debug, Clone)]
pub struct DtInstance {
    pub seed: u64,
    pub model: PlantModel,
    pub data: DataSet,
    pub constraint: QuadConstraint,
    pub lifted: LiftedConstraint,
    pub method: Method,
    pub x0: Vector,
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn spectral_radius(a: &Mat) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn controllable(a: &Mat, b: &Mat) -> bool {
    let n = a.nrows();
    let mut blocks = vec![b.clone()];
    for k in 1..n {
        blocks.push(a * &blocks[k - 1]);
    }
    let refs: Vec<&Mat> = blocks.iter().collect();
    matcore::row_rank(&matcore::hstack(&refs), 1e-6).unwrap_or(0) == n
}

/// Seeded random plant with `n <= 4`, `m <= 2`, one scalar nonlinearity, open
/// loop spectral radius about 1.1 and `T = n + m + 6` samples. The constraint
/// family rotates with the seed: Lipschitz (`Q > 0`), sector `[0, b]`
/// (`Q = 0`) and sector `[a, b]` with `a > 0` (`Q < 0`).
pub fn dt_random(seed: u64) -> Result<DtInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=4usize);
    let m = rng.random_range(1..=2usize);
    let (a, b) = loop {
        let a0 = gaussian(&mut rng, n, n);
        let a = &a0 * (1.1 / spectral_radius(&a0));
        let b = gaussian(&mut rng, n, m);
        if controllable(&a, &b) {
            break (a, b);
        }
    };
    let l = gaussian(&mut rng, n, 1) * 0.3;
    let h0 = gaussian(&mut rng, 1, n);
    let h = &h0 / h0.norm();
    let bound: f64 = rng.random_range(0.2..0.5);
    let (spec, constraint, method) = match seed % 3 {
        0 => (
            NonlinearitySpec::new("sin").with("gain", bound),
            build_lipschitz(bound, 1, 1)?,
            Method::DtQpsd,
        ),
        1 => (
            NonlinearitySpec::new("tanh").with("gain", bound),
            build_sector(&mat(&[&[0.0]]), &mat(&[&[bound]]))?,
            Method::DtQzero,
        ),
        _ => {
            let lo = 0.25 * bound;
            (
                NonlinearitySpec::new("sector_tanh")
                    .with("a", lo)
                    .with("b", bound),
                build_sector(&mat(&[&[lo]]), &mat(&[&[bound]]))?,
                Method::DtQnsd,
            )
        }
    };
    let constraint = constraint.with_h(h.clone())?;
    let model = PlantModel::new(
        a,
        b,
        l,
        h,
        Nonlinearity::from_spec(&spec)?,
        TimeDomain::Discrete,
    )?;
    let t = n + m + 6;
    let x0 = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let inputs: Vec<Vector> = (0..t)
        .map(|_| Vector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let tr = simulate_discrete(&model, &x0, &inputs)?;
    let data = collect_dataset(&tr, &(0..t).collect::<Vec<_>>())?;
    let lifted = lift(&constraint, n)?;
    let x0_cl = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    Ok(DtInstance {
        seed,
        model,
        data,
        constraint,
        lifted,
        method,
        x0: x0_cl,
    })
}

/// Two-input plant excited through identical input channels, so `U0` has
/// rank one while `X0` has full rank; `u1 = u2` still stabilizes.
pub fn rank_deficient_input_instance(seed: u64) -> Result<DtInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = mat(&[&[1.05, 0.3], &[0.0, 0.9]]);
    let b = mat(&[&[0.4, 0.6], &[0.5, 0.5]]);
    let l = mat(&[&[0.1], &[0.05]]);
    let h = mat(&[&[1.0, 0.0]]);
    let spec = NonlinearitySpec::new("sin").with("gain", 0.2);
    let constraint = build_lipschitz(0.2, 1, 1)?.with_h(h.clone())?;
    let model = PlantModel::new(
        a,
        b,
        l,
        h,
        Nonlinearity::from_spec(&spec)?,
        TimeDomain::Discrete,
    )?;
    let t = 8;
    let inputs: Vec<Vector> = (0..t)
        .map(|_| {
            let w = rng.random_range(-1.0..1.0);
            Vector::from_vec(vec![w, w])
        })
        .collect();
    let x0 = Vector::from_vec(vec![1.0, -0.5]);
    let tr = simulate_discrete(&model, &x0, &inputs)?;
    let data = collect_dataset(&tr, &(0..t).collect::<Vec<_>>())?;
    let lifted = lift(&constraint, 2)?;
    Ok(DtInstance {
        seed,
        model,
        data,
        constraint,
        lifted,
        method: Method::DtQpsd,
        x0,
    })
}
