//! Variation-of-constants integrator.
//!
//! Works in look-back time `τ = t − s`, so the kernel is `e^(−τ)` and no
//! `e^(−t)` is ever formed for large `t`:
//!
//! ```text
//! u(t) = e^(−t) u₀ + ∫₀ᵗ e^(−τ) w(t − τ) dτ
//! ```
//!
//! Only a window `τ ∈ [0, L]` is integrated. Everything older is damped by
//! `e^(−L)`; `L` is chosen from the bound `‖w(s)‖ ≤ ‖A*f‖/(2√ε(t))` so the
//! discarded part is a thousandth of the requested tolerance. The state at
//! the start of a truncated window is taken as `w(t − L)`.

use crate::error::{Error, Result};
use crate::operators::Vector;
use crate::schedule::Schedule;

use super::{DsmConfig, Equilibrium, Trajectory};

const ORDER: usize = 8;
const MAX_DEPTH: u32 = 48;
const MAX_RETRIES: u32 = 6;

/// Gauss–Legendre nodes and weights on `[−1, 1]`, computed by Newton
/// iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            // derivative from the last two recurrence terms
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

struct Leaf {
    near: f64,
    far: f64,
    integral: Vector,
}

struct Panels<'a, 'e, S: ?Sized> {
    eq: &'a Equilibrium<'e, S>,
    t_end: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    panels: usize,
    max_steps: usize,
}

impl<S: Schedule + ?Sized> Panels<'_, '_, S> {
    /// `∫_{near}^{far} e^(−(τ−near)) w(t_end − τ) dτ` with one Gauss–Legendre rule.
    fn integrate(&mut self, near: f64, far: f64) -> Result<Vector> {
        self.panels += 1;
        if self.panels > self.max_steps {
            return Err(Error::MaxStepsExceeded {
                max_steps: self.max_steps,
                t: self.t_end,
                partial: Box::new(Trajectory::new()),
            });
        }
        let half = 0.5 * (far - near);
        let mid = 0.5 * (far + near);
        let mut acc = Vector::zeros(self.eq.dim());
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let tau = mid + half * x;
            let s = (self.t_end - tau).max(0.0);
            let weight = w * half * (-(tau - near)).exp();
            acc.axpy(weight, &self.eq.at(s)?, 1.0);
        }
        Ok(acc)
    }

    /// Bisects `[near, far]` until the coarse/fine discrepancy, damped to
    /// the present by `e^(−near)`, meets its share of the tolerance.
    #[allow(clippy::too_many_arguments)]
    fn refine(
        &mut self,
        near: f64,
        far: f64,
        coarse: Vector,
        tol_density: f64,
        depth: u32,
        leaves: &mut Vec<Leaf>,
        error: &mut f64,
    ) -> Result<()> {
        let mid = 0.5 * (near + far);
        let nearer = self.integrate(near, mid)?;
        let farther = self.integrate(mid, far)?;
        let mut fine = farther.clone() * (-(mid - near)).exp();
        fine += &nearer;
        let local = (&fine - &coarse).norm() * (-near).exp();
        let width = far - near;
        if local <= tol_density * width
            || depth >= MAX_DEPTH
            || width <= 1e-12 * self.t_end.max(1.0)
        {
            *error += local;
            leaves.push(Leaf {
                near,
                far: mid,
                integral: nearer,
            });
            leaves.push(Leaf {
                near: mid,
                far,
                integral: farther,
            });
            return Ok(());
        }
        self.refine(near, mid, nearer, tol_density, depth + 1, leaves, error)?;
        self.refine(mid, far, farther, tol_density, depth + 1, leaves, error)
    }
}

pub(super) fn integrate<S: Schedule + ?Sized>(
    eq: &Equilibrium<'_, S>,
    u0: &Vector,
    t_end: f64,
    cfg: &DsmConfig,
) -> Result<Trajectory> {
    let w_now = eq.at(t_end)?;
    let mut tolerance = cfg.relative_tolerance * w_now.norm() + cfg.absolute_tolerance;

    let bound = u0.norm() + 2.0 * eq.norm_bound(t_end)?;
    let needed = if bound > 0.0 {
        (bound / (1e-3 * tolerance)).ln().max(1.0)
    } else {
        1.0
    };
    let truncated = needed < t_end;
    let window = if truncated { needed } else { t_end };

    let (nodes, weights) = gauss_legendre(ORDER);
    let mut panels = Panels {
        eq,
        t_end,
        nodes,
        weights,
        panels: 0,
        max_steps: cfg.max_steps,
    };

    let mut attempt = 0;
    let leaves = loop {
        let mut leaves = Vec::new();
        let mut error = 0.0;
        let count = window.ceil().max(1.0) as usize;
        for k in 0..count {
            let near = window * k as f64 / count as f64;
            let far = window * (k + 1) as f64 / count as f64;
            let coarse = panels.integrate(near, far)?;
            panels.refine(
                near,
                far,
                coarse,
                tolerance / window,
                0,
                &mut leaves,
                &mut error,
            )?;
        }
        let start = if truncated {
            eq.at(t_end - window)?
        } else {
            u0.clone()
        };
        let result = accumulate(&leaves, &start);
        attempt += 1;
        if error <= cfg.relative_tolerance * result.norm() + cfg.absolute_tolerance
            || attempt >= MAX_RETRIES
        {
            break leaves;
        }
        tolerance *= 0.1;
    };

    let mut traj = Trajectory::new();
    traj.push(0.0, u0.clone(), eq.residual(u0));
    let mut leaves = leaves;
    leaves.sort_by(|a, b| b.far.total_cmp(&a.far));
    let mut state = if truncated {
        eq.at(t_end - window)?
    } else {
        u0.clone()
    };
    if truncated {
        push_time(&mut traj, eq, t_end - window, state.clone());
    }
    for leaf in &leaves {
        state *= (-(leaf.far - leaf.near)).exp();
        state += &leaf.integral;
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                t: t_end - leaf.near,
            });
        }
        push_time(&mut traj, eq, t_end - leaf.near, state.clone());
    }
    let last = traj.times.len() - 1;
    traj.times[last] = t_end;
    Ok(traj)
}

/// Folds the leaf integrals from the far end of the window to `τ = 0`.
fn accumulate(leaves: &[Leaf], start: &Vector) -> Vector {
    let mut order: Vec<&Leaf> = leaves.iter().collect();
    order.sort_by(|a, b| b.far.total_cmp(&a.far));
    let mut state = start.clone();
    for leaf in order {
        state *= (-(leaf.far - leaf.near)).exp();
        state += &leaf.integral;
    }
    state
}

fn push_time<S: Schedule + ?Sized>(
    traj: &mut Trajectory,
    eq: &Equilibrium<'_, S>,
    t: f64,
    state: Vector,
) {
    let residual = eq.residual(&state);
    match traj.times.last() {
        // at very large t neighbouring panel ends can round to the same time
        Some(&last) if t <= last => {
            let i = traj.times.len() - 1;
            if traj.times.len() > 1 {
                traj.states[i] = state;
                traj.residual_norms[i] = residual;
            }
        }
        _ => traj.push(t, state, residual),
    }
}

#[cfg(test)]
mod tests {
    use super::gauss_legendre;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // exact through degree 15
        for deg in 0..16 {
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 {
                0.0
            } else {
                2.0 / (deg as f64 + 1.0)
            };
            assert!((got - exact).abs() < 1e-14, "degree {deg}");
        }
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn gauss_legendre_odd_order() {
        let (x, w) = gauss_legendre(5);
        assert!(x[2].abs() < 1e-15);
        assert!((w[2] - 128.0 / 225.0).abs() < 1e-14);
    }
}
