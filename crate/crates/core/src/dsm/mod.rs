//! Integration of the DSM evolution equation
//!
//! ```text
//! u'(t) = −u(t) + w(t),   w(t) = (B + ε(t))⁻¹ A* f_δ,   u(0) = u₀
//! ```
//!
//! up to the stopping time `t_δ` selected by the discrepancy principle.
//! Two independent integrators are provided: direct quadrature of the
//! variation-of-constants formula `u(t) = u₀e^(−t) + ∫₀ᵗ e^(−(t−s)) w(s) ds`
//! and an embedded Runge–Kutta 5(4) pair.

mod quadrature;
mod runge_kutta;

use std::io::Write;
use std::time::Instant;

use serde::{Serialize, Serializer};

use crate::discrepancy::{build_profile, stopping_time, StoppingResult};
use crate::error::{check_len, Error, Result, Stage};
use crate::operators::{SpectralDecomposition, Vector};
use crate::schedule::Schedule;

pub use quadrature::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    ExponentialQuadrature,
    AdaptiveRungeKutta,
}

/// Default cap on stored trajectory points.
pub const DEFAULT_TRAJECTORY_POINTS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct DsmConfig {
    pub integrator: Integrator,
    pub relative_tolerance: f64,
    pub absolute_tolerance: f64,
    /// `u₀`; `None` means the zero vector.
    pub initial_state: Option<Vector>,
    pub max_steps: usize,
    /// Keep a downsampled trajectory in the result.
    pub store_trajectory: bool,
    pub trajectory_points: usize,
    /// Project `f_δ` onto `N(A*)^⊥` before solving. The removed mass is
    /// reported in [`DsmResult::projected_null_mass`].
    pub project_data: bool,
}

impl Default for DsmConfig {
    fn default() -> Self {
        Self {
            integrator: Integrator::default(),
            relative_tolerance: 1e-8,
            absolute_tolerance: 1e-12,
            initial_state: None,
            max_steps: 1_000_000,
            store_trajectory: false,
            trajectory_points: DEFAULT_TRAJECTORY_POINTS,
            project_data: false,
        }
    }
}

impl DsmConfig {
    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.relative_tolerance > 0.0) || !(self.absolute_tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be positive".into()));
        }
        if let Some(u0) = &self.initial_state {
            check_len(dim, u0.len())?;
            if u0.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("initial state"));
            }
        }
        Ok(())
    }

    fn initial_state(&self, dim: usize) -> Vector {
        self.initial_state
            .clone()
            .unwrap_or_else(|| Vector::zeros(dim))
    }
}

/// Sampled solution `u(t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    #[serde(serialize_with = "serialize_vectors")]
    pub states: Vec<Vector>,
    /// `‖A u(t) − f_δ‖` at each time.
    pub residual_norms: Vec<f64>,
}

impl Trajectory {
    fn new() -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            residual_norms: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, state: Vector, residual: f64) {
        self.times.push(t);
        self.states.push(state);
        self.residual_norms.push(residual);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&Vector> {
        self.states.last()
    }

    /// Keeps at most `max_points` evenly spaced samples, always including
    /// the first and last.
    pub fn downsample(&self, max_points: usize) -> Trajectory {
        let n = self.len();
        if n <= max_points || max_points < 2 {
            return self.clone();
        }
        let mut out = Trajectory::new();
        let mut last = usize::MAX;
        for k in 0..max_points {
            let idx = ((k as f64) * (n - 1) as f64 / (max_points - 1) as f64).round() as usize;
            if idx != last {
                out.push(
                    self.times[idx],
                    self.states[idx].clone(),
                    self.residual_norms[idx],
                );
                last = idx;
            }
        }
        out
    }

    /// CSV with columns `t,residual_norm[,error_vs_reference][,u_0,…]`.
    pub fn write_csv<W: Write>(
        &self,
        mut out: W,
        reference: Option<&Vector>,
        include_state: bool,
    ) -> std::io::Result<()> {
        let mut header = vec!["t".to_string(), "residual_norm".to_string()];
        if reference.is_some() {
            header.push("error_vs_reference".into());
        }
        let dim = self.states.first().map_or(0, |s| s.len());
        if include_state {
            header.extend((0..dim).map(|i| format!("u_{i}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for ((t, state), res) in self
            .times
            .iter()
            .zip(&self.states)
            .zip(&self.residual_norms)
        {
            let mut row = vec![t.to_string(), res.to_string()];
            if let Some(y) = reference {
                row.push((state - y).norm().to_string());
            }
            if include_state {
                row.extend(state.iter().map(|v| v.to_string()));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Outcome of a full DSM run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DsmResult {
    pub stopping: StoppingResult,
    /// `u_δ(t_δ)`
    #[serde(serialize_with = "serialize_vector")]
    pub u_final: Vector,
    /// `‖A u_δ(t_δ) − f_δ‖`
    pub residual: f64,
    /// `‖u_δ(t_δ) − y‖`
    pub error_vs_reference: Option<f64>,
    /// `‖w_δ(t_δ) − y‖`
    pub tikhonov_error: Option<f64>,
    /// `‖w_δ(t_δ)‖`
    pub tikhonov_norm: f64,
    /// `‖w_δ(t_δ)‖ / ‖y‖`
    pub norm_ratio: Option<f64>,
    /// `‖u_δ(t_δ) − w_δ(t_δ)‖`
    pub equilibrium_gap: f64,
    /// Null mass removed from `f_δ` when `project_data` was set.
    pub projected_null_mass: Option<f64>,
    pub trajectory: Option<Trajectory>,
    #[serde(skip)]
    pub wall_time_ms: f64,
}

/// Noisy data and, when known, the minimal-norm solution.
#[derive(Debug, Clone, Copy)]
pub struct ProblemData<'a> {
    pub f_delta: &'a Vector,
    pub y_reference: Option<&'a Vector>,
}

/// `−u + (B + ε(t))⁻¹ A* f_δ`.
pub fn rhs<S: Schedule + ?Sized>(
    dec: &SpectralDecomposition,
    s: &S,
    f_delta: &Vector,
    t: f64,
    u: &Vector,
) -> Result<Vector> {
    check_len(dec.cols(), u.len())?;
    let w = dec.regularized_normal_solve(s.eval(t)?, f_delta)?;
    Ok(w - u)
}

/// `w(s) = (B + ε(s))⁻¹ A* f_δ` with the left coefficients of `f_δ` computed once.
pub(crate) struct Equilibrium<'a, S: ?Sized> {
    dec: &'a SpectralDecomposition,
    schedule: &'a S,
    coeffs: Vector,
    f_delta: &'a Vector,
}

impl<'a, S: Schedule + ?Sized> Equilibrium<'a, S> {
    pub(crate) fn new(
        dec: &'a SpectralDecomposition,
        schedule: &'a S,
        f_delta: &'a Vector,
    ) -> Result<Self> {
        Ok(Self {
            dec,
            schedule,
            coeffs: dec.left_coefficients(f_delta)?,
            f_delta,
        })
    }

    pub(crate) fn at(&self, t: f64) -> Result<Vector> {
        Ok(self
            .dec
            .filtered_synthesis(&self.coeffs, self.schedule.eval(t)?))
    }

    /// Upper bound on `‖w(s)‖` for all `s ≤ t`, from `σ/(σ²+ε) ≤ 1/(2√ε)`.
    pub(crate) fn norm_bound(&self, t: f64) -> Result<f64> {
        let eps = self.schedule.eval(t)?;
        Ok(self.coeffs.norm() / (2.0 * eps.sqrt()))
    }

    pub(crate) fn residual(&self, u: &Vector) -> f64 {
        (self.dec.apply(u).expect("state has operator dimension") - self.f_delta).norm()
    }

    pub(crate) fn dim(&self) -> usize {
        self.dec.cols()
    }
}

/// Integrates from `0` to `t_end` and records the solution at the
/// quadrature panel ends (exponential quadrature) or accepted steps (Runge–Kutta).
pub fn evolve<S: Schedule + ?Sized>(
    dec: &SpectralDecomposition,
    s: &S,
    f_delta: &Vector,
    t_end: f64,
    cfg: &DsmConfig,
) -> Result<Trajectory> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "t_end must be positive and finite, got {t_end}"
        )));
    }
    cfg.validate(dec.cols())?;
    let eq = Equilibrium::new(dec, s, f_delta)?;
    let u0 = cfg.initial_state(dec.cols());
    match cfg.integrator {
        Integrator::ExponentialQuadrature => quadrature::integrate(&eq, &u0, t_end, cfg),
        Integrator::AdaptiveRungeKutta => runge_kutta::integrate(&eq, &u0, t_end, cfg),
    }
}

/// Full pipeline: profile, discrepancy root, stopping time, integration.
pub fn run_dsm<S: Schedule + ?Sized>(
    dec: &SpectralDecomposition,
    s: &S,
    data: ProblemData<'_>,
    delta: f64,
    c: f64,
    cfg: &DsmConfig,
) -> Result<DsmResult> {
    let started = Instant::now();
    cfg.validate(dec.cols()).map_err(|e| e.at(Stage::Input))?;
    if let Some(y) = data.y_reference {
        check_len(dec.cols(), y.len()).map_err(|e| e.at(Stage::Input))?;
    }

    let (f_delta, projected_null_mass) = if cfg.project_data {
        let (p, mass) = dec
            .project_range_closure(data.f_delta)
            .map_err(|e| e.at(Stage::Input))?;
        (p, Some(mass))
    } else {
        check_len(dec.rows(), data.f_delta.len()).map_err(|e| e.at(Stage::Input))?;
        (data.f_delta.clone(), None)
    };

    let profile = build_profile(dec, &f_delta).map_err(|e| e.at(Stage::Profile))?;
    let root = profile
        .solve_for_epsilon(delta, c)
        .map_err(|e| e.at(Stage::Discrepancy))?;
    let stopping = stopping_time(s, &root).map_err(|e| e.at(Stage::StoppingTime))?;

    let trajectory = if stopping.t_delta > 0.0 {
        evolve(dec, s, &f_delta, stopping.t_delta, cfg).map_err(|e| e.at(Stage::Integration))?
    } else {
        let eq = Equilibrium::new(dec, s, &f_delta).map_err(|e| e.at(Stage::Integration))?;
        let u0 = cfg.initial_state(dec.cols());
        let mut t = Trajectory::new();
        let r = eq.residual(&u0);
        t.push(0.0, u0, r);
        t
    };
    let u_final = trajectory
        .final_state()
        .expect("trajectory is nonempty")
        .clone();
    let residual = (dec.apply(&u_final).map_err(|e| e.at(Stage::Integration))? - &f_delta).norm();

    let w_final = dec
        .regularized_normal_solve(stopping.epsilon_star, &f_delta)
        .map_err(|e| e.at(Stage::Integration))?;
    let tikhonov_norm = w_final.norm();
    let (error_vs_reference, tikhonov_error, norm_ratio) = match data.y_reference {
        Some(y) => (
            Some((&u_final - y).norm()),
            Some((&w_final - y).norm()),
            Some(tikhonov_norm / y.norm()),
        ),
        None => (None, None, None),
    };

    Ok(DsmResult {
        stopping,
        equilibrium_gap: (&u_final - &w_final).norm(),
        u_final,
        residual,
        error_vs_reference,
        tikhonov_error,
        tikhonov_norm,
        norm_ratio,
        projected_null_mass,
        trajectory: cfg
            .store_trajectory
            .then(|| trajectory.downsample(cfg.trajectory_points)),
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

fn serialize_vector<S: Serializer>(v: &Vector, ser: S) -> std::result::Result<S::Ok, S::Error> {
    ser.collect_seq(v.iter())
}

fn serialize_vectors<S: Serializer>(vs: &[Vector], ser: S) -> std::result::Result<S::Ok, S::Error> {
    ser.collect_seq(vs.iter().map(|v| v.as_slice()))
}
