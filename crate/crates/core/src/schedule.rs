//! Regularization schedules `ε(t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A positive, strictly decreasing regularization schedule with a closed-form inverse.
///
/// Implementations must be pure: the same `t` always yields the same value.
pub trait Schedule: Send + Sync {
    /// `ε(t)` for `t ≥ 0`.
    fn eval(&self, t: f64) -> Result<f64>;

    /// `dε/dt` for `t ≥ 0`.
    fn derivative(&self, t: f64) -> Result<f64>;

    /// The `t ≥ 0` with `ε(t) = g`.
    fn invert(&self, g: f64) -> Result<f64>;

    /// `sup_{lo ≤ s ≤ hi} |ε'(s)|`.
    ///
    /// The default samples the interval densely; closed-form families override it.
    fn sup_abs_derivative(&self, lo: f64, hi: f64) -> Result<f64> {
        const SAMPLES: usize = 256;
        let mut best = 0.0f64;
        for k in 0..=SAMPLES {
            let s = lo + (hi - lo) * k as f64 / SAMPLES as f64;
            best = best.max(self.derivative(s)?.abs());
        }
        Ok(best)
    }

    fn epsilon_zero(&self) -> f64 {
        self.eval(0.0).expect("epsilon(0) is defined")
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "time must be nonnegative, got {t}"
        )));
    }
    Ok(())
}

/// `ε(t) = c1 (c0 + t)^(−b)` with `c0, c1 > 0` and `b ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSchedule {
    c0: f64,
    c1: f64,
    b: f64,
}

impl Default for PowerSchedule {
    fn default() -> Self {
        Self {
            c0: 1.0,
            c1: 1.0,
            b: 0.5,
        }
    }
}

impl PowerSchedule {
    pub fn new(c0: f64, c1: f64, b: f64) -> Result<Self> {
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "c0 must be positive, got {c0}"
            )));
        }
        if !(c1 > 0.0 && c1.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "c1 must be positive, got {c1}"
            )));
        }
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "b must lie in (0,1), got {b}"
            )));
        }
        Ok(Self { c0, c1, b })
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

impl Schedule for PowerSchedule {
    fn eval(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.c1 * (self.c0 + t).powf(-self.b))
    }

    fn derivative(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(-self.b * self.c1 * (self.c0 + t).powf(-self.b - 1.0))
    }

    fn invert(&self, g: f64) -> Result<f64> {
        if !(g > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "target epsilon must be positive, got {g}"
            )));
        }
        let eps0 = self.epsilon_zero();
        if g > eps0 {
            return Err(Error::NegativeStoppingTime {
                epsilon_star: g,
                epsilon_zero: eps0,
            });
        }
        let t = (self.c1 / g).powf(1.0 / self.b) - self.c0;
        // rounding can push the boundary case slightly below zero
        Ok(t.max(0.0))
    }

    fn sup_abs_derivative(&self, lo: f64, _hi: f64) -> Result<f64> {
        // |ε'| is decreasing for this family
        Ok(self.derivative(lo)?.abs())
    }

    fn epsilon_zero(&self) -> f64 {
        self.c1 * self.c0.powf(-self.b)
    }
}

/// Constant schedule. Not admissible (never decays); used to check
/// integrators against the frozen-coefficient closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantSchedule(pub f64);

impl Schedule for ConstantSchedule {
    fn eval(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.0)
    }

    fn derivative(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(0.0)
    }

    fn invert(&self, g: f64) -> Result<f64> {
        if g == self.0 {
            Ok(0.0)
        } else {
            Err(Error::InvalidArgument(
                "constant schedule is not invertible".into(),
            ))
        }
    }
}

/// One row of an [`AdmissibilityReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmissibilityPoint {
    pub t: f64,
    /// `sup_{t/2 ≤ s ≤ t} |ε'(s)| / ε(t)²`
    pub q: f64,
    /// `e^(−t) / ε(t)`; underflows to zero for large `t`.
    pub r: f64,
    /// `ln r`, finite even where `r` underflows.
    pub log_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub points: Vec<AdmissibilityPoint>,
    /// Index of the first grid point of the tail used for the monotonicity checks.
    pub tail_start: usize,
    pub q_decreasing: bool,
    pub r_decreasing: bool,
    pub admissible: bool,
}

/// Evaluates the decay conditions on `ε` over an ascending grid.
///
/// The schedule is flagged admissible when both `q` and `r` are strictly
/// decreasing over the tail of the grid: every point from index `⌊n/4⌋` on
/// (at least the last two points).
pub fn admissibility_report<S: Schedule + ?Sized>(
    s: &S,
    t_grid: &[f64],
) -> Result<AdmissibilityReport> {
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("time grid must be nonempty".into()));
    }
    if t_grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument("time grid must be positive".into()));
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("time grid must be ascending".into()));
    }
    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let eps = s.eval(t)?;
        let q = s.sup_abs_derivative(t / 2.0, t)? / (eps * eps);
        let log_r = -t - eps.ln();
        points.push(AdmissibilityPoint {
            t,
            q,
            r: log_r.exp(),
            log_r,
        });
    }
    let n = points.len();
    let tail_start = (n / 4).min(n.saturating_sub(2));
    let tail = &points[tail_start..];
    let q_decreasing = tail.windows(2).all(|w| w[1].q < w[0].q);
    let r_decreasing = tail.windows(2).all(|w| w[1].log_r < w[0].log_r);
    Ok(AdmissibilityReport {
        points,
        tail_start,
        q_decreasing,
        r_decreasing,
        admissible: q_decreasing && r_decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sched(c0: f64, c1: f64, b: f64) -> PowerSchedule {
        PowerSchedule::new(c0, c1, b).unwrap()
    }

    #[test]
    fn eval_examples() {
        let s = PowerSchedule::default();
        assert_eq!(s.eval(0.0).unwrap(), 1.0);
        assert!((s.eval(99.0).unwrap() - 0.1).abs() < 1e-16);
        assert!((sched(2.0, 3.0, 0.25).eval(14.0).unwrap() - 1.5).abs() < 1e-15);
        assert!(s.eval(-1.0).is_err());
    }

    #[test]
    fn derivative_examples() {
        let s = PowerSchedule::default();
        assert!((s.derivative(0.0).unwrap() + 0.5).abs() < 1e-16);
        assert!((s.derivative(3.0).unwrap() + 0.0625).abs() < 1e-16);
        assert!(s.derivative(-0.5).is_err());
    }

    #[test]
    fn invert_examples() {
        let s = PowerSchedule::default();
        assert!((s.invert(0.1).unwrap() - 99.0).abs() < 1e-12);
        assert_eq!(s.invert(s.eval(0.0).unwrap()).unwrap(), 0.0);
        assert!(matches!(
            s.invert(1.5),
            Err(Error::NegativeStoppingTime { .. })
        ));
        assert!(s.invert(0.0).is_err());
        assert!(s.invert(-0.1).is_err());
    }

    #[test]
    fn constructor_validation() {
        assert!(PowerSchedule::new(1.0, 1.0, 1.5).is_err());
        assert!(PowerSchedule::new(1.0, 1.0, 0.0).is_err());
        assert!(PowerSchedule::new(1.0, 1.0, 1.0).is_err());
        assert!(PowerSchedule::new(0.0, 1.0, 0.5).is_err());
        assert!(PowerSchedule::new(1.0, -1.0, 0.5).is_err());
    }

    #[test]
    fn q_matches_dense_sampling() {
        let s = PowerSchedule::default();
        let t = 1e4;
        let report = admissibility_report(&s, &[t]).unwrap();
        let q = report.points[0].q;
        let expected = 0.5 * 5001f64.powf(-1.5) * 10001.0;
        assert!((q - expected).abs() <= 1e-14 * expected);
        assert!((q - 1.41e-2).abs() < 5e-5);

        let eps_t = s.eval(t).unwrap();
        let dense = (0..=10_000)
            .map(|k| t / 2.0 + (t / 2.0) * k as f64 / 10_000.0)
            .map(|x| s.derivative(x).unwrap().abs())
            .fold(0.0, f64::max)
            / (eps_t * eps_t);
        assert!((dense - q).abs() <= 1e-12 * q);
    }

    #[test]
    fn lemma_two_decay() {
        let s = PowerSchedule::default();
        let report = admissibility_report(&s, &[50.0]).unwrap();
        let expected = (-50f64).exp() * 51f64.sqrt();
        assert!((report.points[0].r - expected).abs() <= 1e-14 * expected);
        assert!(report.points[0].r < 1e-15);
    }

    #[test]
    fn default_schedule_admissible() {
        let report =
            admissibility_report(&PowerSchedule::default(), &[10.0, 1e2, 1e3, 1e4]).unwrap();
        assert!(report.points.windows(2).all(|w| w[1].q < w[0].q));
        assert!(report.admissible);
        // r underflows at t = 1e3 but the log stays comparable
        assert_eq!(report.points[3].r, 0.0);
        assert!(report.points[3].log_r.is_finite());
    }

    #[test]
    fn near_unit_exponent_still_admissible() {
        let report = admissibility_report(&sched(1.0, 1.0, 0.99), &[10.0, 1e2, 1e3, 1e4]).unwrap();
        assert!(report.admissible);
        // the head of the grid is excluded: q still rises between 10 and 100
        assert!(report.points[1].q > report.points[0].q);
    }

    #[test]
    fn report_rejects_bad_grids() {
        let s = PowerSchedule::default();
        assert!(admissibility_report(&s, &[]).is_err());
        assert!(admissibility_report(&s, &[0.0, 1.0]).is_err());
        assert!(admissibility_report(&s, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn constant_schedule_is_flat() {
        let s = ConstantSchedule(0.3);
        assert_eq!(s.eval(10.0).unwrap(), 0.3);
        assert_eq!(s.derivative(10.0).unwrap(), 0.0);
        assert!(s.invert(0.2).is_err());
    }

    proptest! {
        #[test]
        fn derivative_matches_finite_difference(
            c0 in 0.1f64..10.0, c1 in 0.1f64..10.0, b in 0.05f64..0.95, t in 0.0f64..1e4
        ) {
            let s = sched(c0, c1, b);
            let h = 1e-6 * (c0 + t);
            // central difference around t, shifted so both nodes stay in the domain
            let centre = t.max(h);
            let fd = (s.eval(centre + h).unwrap() - s.eval(centre - h).unwrap()) / (2.0 * h);
            let exact = s.derivative(centre).unwrap();
            prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs());
        }

        #[test]
        fn invert_round_trip(
            c0 in 0.1f64..10.0, c1 in 0.1f64..10.0, b in 0.05f64..0.95, frac in 1e-6f64..1.0
        ) {
            let s = sched(c0, c1, b);
            let g = frac * s.epsilon_zero();
            let t = s.invert(g).unwrap();
            prop_assert!(t >= 0.0);
            prop_assert!((s.eval(t).unwrap() - g).abs() <= 1e-12 * g);
        }

        #[test]
        fn positive_and_strictly_decreasing(
            c0 in 0.1f64..10.0, c1 in 0.1f64..10.0, b in 0.05f64..0.95
        ) {
            let s = sched(c0, c1, b);
            let mut prev = f64::INFINITY;
            for k in 0..40 {
                let t = 0.5 * 1.6f64.powi(k) - 0.5;
                let e = s.eval(t).unwrap();
                prop_assert!(e > 0.0 && e < prev);
                prop_assert!(s.derivative(t).unwrap() < 0.0);
                prev = e;
            }
        }

        #[test]
        fn q_decreasing_on_geometric_grid(c0 in 0.1f64..10.0, c1 in 0.1f64..10.0, b in 0.05f64..0.6) {
            let report = admissibility_report(&sched(c0, c1, b), &[10.0, 1e2, 1e3, 1e4]).unwrap();
            prop_assert!(report.points.windows(2).all(|w| w[1].q < w[0].q));
        }

        #[test]
        fn tail_admissible_for_large_exponents(c0 in 0.1f64..10.0, c1 in 0.1f64..10.0, b in 0.6f64..0.93) {
            let report = admissibility_report(&sched(c0, c1, b), &[10.0, 1e2, 1e3, 1e4]).unwrap();
            prop_assert!(report.admissible);
        }
    }
}
