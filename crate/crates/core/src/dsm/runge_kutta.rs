//! Dormand–Prince 5(4) integrator with FSAL and a standard step-size controller.

use crate::error::{Error, Result};
use crate::operators::Vector;
use crate::schedule::Schedule;

use super::{DsmConfig, Equilibrium, Trajectory};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
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
/// Fifth-order weights (equal to the last row of `A`).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Embedded fourth-order weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

pub(super) fn integrate<S: Schedule + ?Sized>(
    eq: &Equilibrium<'_, S>,
    u0: &Vector,
    t_end: f64,
    cfg: &DsmConfig,
) -> Result<Trajectory> {
    let f = |t: f64, u: &Vector| -> Result<Vector> { Ok(eq.at(t.min(t_end))? - u) };
    let (rtol, atol) = (cfg.relative_tolerance, cfg.absolute_tolerance);

    let mut traj = Trajectory::new();
    let mut t = 0.0;
    let mut u = u0.clone();
    traj.push(t, u.clone(), eq.residual(&u));

    let mut k1 = f(t, &u)?;
    let mut h = initial_step(&u, &k1, rtol, atol).min(t_end);
    let mut steps = 0usize;
    let mut k: [Vector; 7] = std::array::from_fn(|_| Vector::zeros(u.len()));

    while t < t_end {
        if steps >= cfg.max_steps {
            return Err(Error::MaxStepsExceeded {
                max_steps: cfg.max_steps,
                t,
                partial: Box::new(traj),
            });
        }
        steps += 1;
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        k[0] = k1.clone();
        for stage in 1..7 {
            let mut y = u.clone();
            for (j, a) in A[stage].iter().enumerate().take(stage) {
                if *a != 0.0 {
                    y.axpy(h * a, &k[j], 1.0);
                }
            }
            k[stage] = f(t + C[stage] * h, &y)?;
        }
        let mut next = u.clone();
        let mut err = Vector::zeros(u.len());
        for stage in 0..7 {
            if B5[stage] != 0.0 {
                next.axpy(h * B5[stage], &k[stage], 1.0);
            }
            let d = B5[stage] - B4[stage];
            if d != 0.0 {
                err.axpy(h * d, &k[stage], 1.0);
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { t });
        }

        // RMS norm weighted by mixed tolerances
        let norm = (err
            .iter()
            .zip(u.iter().zip(next.iter()))
            .map(|(e, (a, b))| {
                let sc = atol + rtol * a.abs().max(b.abs());
                (e / sc) * (e / sc)
            })
            .sum::<f64>()
            / u.len() as f64)
            .sqrt();

        if norm <= 1.0 {
            t = if last { t_end } else { t + h };
            u = next;
            k1 = k[6].clone();
            traj.push(t, u.clone(), eq.residual(&u));
            let factor = if norm == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * norm.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            h *= factor;
        } else {
            h *= (SAFETY * norm.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
            if h <= f64::EPSILON * t.max(1.0) {
                return Err(Error::Diverged { t });
            }
        }
    }
    Ok(traj)
}

/// Starting step from the scaled norms of `u` and `u'`.
fn initial_step(u: &Vector, du: &Vector, rtol: f64, atol: f64) -> f64 {
    let scale = |v: &Vector| -> f64 {
        (v.iter()
            .zip(u.iter())
            .map(|(x, y)| {
                let sc = atol + rtol * y.abs();
                (x / sc) * (x / sc)
            })
            .sum::<f64>()
            / u.len() as f64)
            .sqrt()
    };
    let d0 = scale(u);
    let d1 = scale(du);
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h.clamp(1e-6, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fsal_rows_consistent() {
        for (row, c) in A.iter().zip(C) {
            let sum: f64 = row.iter().sum();
            assert!((sum - c).abs() < 1e-14);
        }
        assert!((B4.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((B5.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
