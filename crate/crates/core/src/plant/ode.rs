//! Dormand-Prince 5(4) integrator with the step-size control and quartic
//! dense output of the classic `ode45` routine.

use crate::error::{Error, Result};
use crate::matcore::Vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// States with norm above this are treated as divergence.
    pub blowup: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rtol: 1e-10,
            atol: 1e-10,
            max_steps: 5_000_000,
            blowup: 1e12,
        }
    }
}

impl IntegratorOptions {
    /// Tolerances `rtol = 1e-3`, `atol = 1e-6`.
    pub fn ode45_defaults() -> Self {
        IntegratorOptions {
            rtol: 1e-3,
            atol: 1e-6,
            ..Default::default()
        }
    }

    pub fn with_tol(tol: f64) -> Self {
        IntegratorOptions {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }
}

const C: [f64; 6] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0];

// A[i][j]: coefficient of stage j in the argument of stage i + 1.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const BI: [[f64; 4]; 7] = [
    [1.0, -183.0 / 64.0, 37.0 / 12.0, -145.0 / 128.0],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 1500.0 / 371.0, -1000.0 / 159.0, 1000.0 / 371.0],
    [0.0, -125.0 / 32.0, 125.0 / 12.0, -375.0 / 64.0],
    [0.0, 9477.0 / 3392.0, -729.0 / 106.0, 25515.0 / 6784.0],
    [0.0, -11.0 / 7.0, 11.0 / 3.0, -55.0 / 28.0],
    [0.0, 3.0 / 2.0, -4.0, 5.0 / 2.0],
];

fn spacing(t: f64) -> f64 {
    let a = t.abs();
    if a < f64::MIN_POSITIVE {
        return f64::from_bits(1);
    }
    f64::from_bits(a.to_bits() + 1) - a
}

fn weighted_inf_norm(v: &Vector, w: impl Fn(usize) -> f64) -> f64 {
    v.iter()
        .enumerate()
        .fold(0.0, |acc, (i, x)| acc.max((x / w(i)).abs()))
}

/// Integrates `y' = f(t, y)` from `times[0]` and returns the solution at every
/// entry of `times` (strictly monotone, at least two entries).
pub fn integrate<F>(
    mut f: F,
    times: &[f64],
    y0: &Vector,
    opts: &IntegratorOptions,
) -> Result<Vec<Vector>>
where
    F: FnMut(f64, &Vector) -> Vector,
{
    if times.len() < 2 {
        return Err(Error::InvalidInput("need at least two output times".into()));
    }
    let t0 = times[0];
    let tf = *times.last().unwrap();
    let dir = (tf - t0).signum();
    if dir == 0.0 || times.windows(2).any(|w| (w[1] - w[0]) * dir <= 0.0) {
        return Err(Error::InvalidInput(
            "output times must be strictly monotone".into(),
        ));
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidInput("tolerances must be positive".into()));
    }
    let n = y0.len();
    let rtol = opts.rtol;
    let thr = opts.atol / rtol;
    let pw = 1.0 / 5.0;
    let hmax = 0.1 * (tf - t0).abs();

    let mut t = t0;
    let mut y = y0.clone();
    let mut k: Vec<Vector> = vec![Vector::zeros(n); 7];
    k[0] = f(t, &y);
    if k[0].iter().any(|x| !x.is_finite()) {
        return Err(Error::Integration {
            t,
            reason: "non-finite derivative".into(),
        });
    }
    let mut absh = hmax.min((times[1] - times[0]).abs());
    let rh = weighted_inf_norm(&k[0], |i| y[i].abs().max(thr)) / (0.8 * rtol.powf(pw));
    if absh * rh > 1.0 {
        absh = 1.0 / rh;
    }

    let mut out = Vec::with_capacity(times.len());
    out.push(y.clone());
    let mut next = 1;
    let mut done = false;
    let mut steps = 0usize;

    while !done {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Integration {
                t,
                reason: "step budget exhausted".into(),
            });
        }
        let hmin = 16.0 * spacing(t);
        absh = hmax.min(absh.max(hmin));
        let mut h = dir * absh;
        if 1.1 * absh >= (tf - t).abs() {
            h = tf - t;
            absh = h.abs();
            done = true;
        }

        let mut nofailed = true;
        let (tnew, ynew, err) = loop {
            for s in 1..6 {
                let mut arg = y.clone();
                for (j, kj) in k.iter().enumerate().take(s) {
                    arg.axpy(h * A[s - 1][j], kj, 1.0);
                }
                k[s] = f(t + C[s] * h, &arg);
            }
            let tnew = if done { tf } else { t + h };
            let mut ynew = y.clone();
            for (j, kj) in k.iter().enumerate().take(6) {
                ynew.axpy(h * A[5][j], kj, 1.0);
            }
            k[6] = f(tnew, &ynew);
            h = tnew - t;
            if ynew.iter().chain(k[6].iter()).any(|x| !x.is_finite()) || ynew.norm() > opts.blowup {
                return Err(Error::Integration {
                    t,
                    reason: "state diverged".into(),
                });
            }
            let mut e = Vector::zeros(n);
            for (j, kj) in k.iter().enumerate() {
                e.axpy(E[j], kj, 1.0);
            }
            let err = absh * weighted_inf_norm(&e, |i| y[i].abs().max(ynew[i].abs()).max(thr));
            if err <= rtol {
                break (tnew, ynew, err);
            }
            if absh <= hmin {
                return Err(Error::Integration {
                    t,
                    reason: "step size collapsed".into(),
                });
            }
            if nofailed {
                nofailed = false;
                absh = hmin.max(absh * 0.1f64.max(0.8 * (rtol / err).powf(pw)));
            } else {
                absh = hmin.max(0.5 * absh);
            }
            h = dir * absh;
            done = false;
        };

        while next < times.len() && (times[next] - tnew) * dir <= 0.0 {
            if times[next] == tnew {
                out.push(ynew.clone());
            } else {
                let s = (times[next] - t) / h;
                let pows = [s, s * s, s * s * s, s * s * s * s];
                let mut yi = y.clone();
                for (j, kj) in k.iter().enumerate() {
                    let w: f64 = (0..4).map(|c| BI[j][c] * pows[c]).sum();
                    if w != 0.0 {
                        yi.axpy(h * w, kj, 1.0);
                    }
                }
                out.push(yi);
            }
            next += 1;
        }

        if nofailed {
            let temp = 1.25 * (err / rtol).powf(pw);
            if temp > 0.2 {
                absh /= temp;
            } else {
                absh *= 5.0;
            }
        }
        t = tnew;
        y = ynew;
        k[0] = k[6].clone();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_stays_put() {
        let y0 = Vector::from_vec(vec![2.0, -1.0]);
        let out = integrate(
            |_, _| Vector::zeros(2),
            &[0.0, 0.5, 1.0],
            &y0,
            &IntegratorOptions::default(),
        )
        .unwrap();
        assert!(out.iter().all(|y| (y - &y0).norm() == 0.0));
    }

    #[test]
    fn exponential_decay_is_accurate() {
        let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25).collect();
        let out = integrate(
            |_, y| -y,
            &times,
            &Vector::from_vec(vec![1.0]),
            &IntegratorOptions::default(),
        )
        .unwrap();
        for (t, y) in times.iter().zip(&out) {
            assert!((y[0] - (-t).exp()).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn harmonic_oscillator_with_loose_tolerance() {
        let times: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        let out = integrate(
            |_, y| Vector::from_vec(vec![y[1], -y[0]]),
            &times,
            &Vector::from_vec(vec![1.0, 0.0]),
            &IntegratorOptions::ode45_defaults(),
        )
        .unwrap();
        for (t, y) in times.iter().zip(&out) {
            assert!((y[0] - t.cos()).abs() < 1e-2);
        }
    }

    #[test]
    fn finite_time_blowup_is_reported() {
        let r = integrate(
            |_, y| y.map(|v| v * v),
            &[0.0, 2.0],
            &Vector::from_vec(vec![1.0]),
            &IntegratorOptions::default(),
        );
        assert!(matches!(r, Err(Error::Integration { .. })));
    }

    #[test]
    fn rejects_bad_time_grids() {
        let y0 = Vector::zeros(1);
        let f = |_: f64, y: &Vector| y.clone();
        let o = IntegratorOptions::default();
        assert!(integrate(f, &[0.0], &y0, &o).is_err());
        assert!(integrate(f, &[0.0, 1.0, 0.5], &y0, &o).is_err());
    }
}
