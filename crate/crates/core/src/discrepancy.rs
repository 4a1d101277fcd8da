//! The discrepancy function `h(ε) = ‖A(B+ε)⁻¹A*f_δ − f_δ‖` and the
//! stopping rule built on it.
//!
//! In spectral form `h(ε)² = null_mass + Σ_i ε² β_i / (ε + λ_i)²` where
//! `λ_i = σ_i²` and `β_i = (u_i · f_δ)²`. The function is strictly increasing
//! in `ε` whenever some `β_i > 0`, rising from `sqrt(null_mass)` at `0⁺` to
//! `‖f_δ‖` at infinity, so `h(ε) = Cδ` has exactly one root when
//! `sqrt(null_mass) < Cδ < ‖f_δ‖`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::operators::{SpectralDecomposition, Vector};
use crate::schedule::Schedule;

/// Lower end of the bisection bracket.
pub const EPSILON_FLOOR: f64 = 1e-300;

/// Relative bracket width at which bisection stops.
pub const BRACKET_RELATIVE_WIDTH: f64 = 1e-12;

/// With `C = 1` the data must be orthogonal to `N(A*)`; a null component
/// larger than this fraction of `‖f_δ‖` is rejected.
pub const NULL_COMPONENT_TOLERANCE: f64 = 1e-10;

/// Discrete spectral measure of the data with respect to `Q = AA*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancyProfile {
    /// Retained eigenvalues `λ_i = σ_i²` of `Q`, descending.
    pub lambdas: Vec<f64>,
    /// `β_i = (u_i · f_δ)²`.
    pub betas: Vec<f64>,
    /// `‖P_{N(A*)} f_δ‖²`.
    pub null_mass: f64,
    /// `‖f_δ‖²`.
    pub data_norm_sq: f64,
}

pub fn build_profile(dec: &SpectralDecomposition, f_delta: &Vector) -> Result<DiscrepancyProfile> {
    let rank = dec.numerical_rank();
    let coeffs = dec.left_coefficients(f_delta)?;
    let lambdas = dec
        .singular_values()
        .iter()
        .take(rank)
        .map(|s| s * s)
        .collect();
    let betas = coeffs.iter().take(rank).map(|c| c * c).collect();
    // The null part is measured directly; ‖f‖² − Σβ would cancel catastrophically.
    let (_, null_mass) = dec.project_range_closure(f_delta)?;
    Ok(DiscrepancyProfile {
        lambdas,
        betas,
        null_mass,
        data_norm_sq: f_delta.norm_squared(),
    })
}

impl DiscrepancyProfile {
    pub fn data_norm(&self) -> f64 {
        self.data_norm_sq.sqrt()
    }

    /// `h(0⁺)`.
    pub fn floor(&self) -> f64 {
        self.null_mass.sqrt()
    }

    /// `h(ε)`.
    pub fn discrepancy_value(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eps must be positive, got {eps}"
            )));
        }
        Ok(self.h(eps))
    }

    fn h(&self, eps: f64) -> f64 {
        let sum: f64 = self
            .lambdas
            .iter()
            .zip(&self.betas)
            .map(|(l, b)| {
                let damp = eps / (eps + l);
                damp * damp * b
            })
            .sum();
        (self.null_mass + sum).sqrt()
    }

    /// Solves `h(ε) = Cδ` by bisection.
    ///
    /// The upper end starts at `1` and doubles until `h ≥ Cδ`; the lower end
    /// is [`EPSILON_FLOOR`]. Midpoints are geometric while the bracket spans
    /// more than a factor of four and arithmetic afterwards.
    pub fn solve_for_epsilon(&self, delta: f64, c: f64) -> Result<DiscrepancyRoot> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "delta must be positive, got {delta}"
            )));
        }
        if !(c >= 1.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "C must be at least 1, got {c}"
            )));
        }
        if self.betas.iter().all(|&b| b == 0.0) {
            return Err(Error::DegenerateProfile);
        }
        let target = c * delta;
        let data_norm = self.data_norm();
        if target >= data_norm {
            return Err(Error::NoiseExceedsData {
                c_delta: target,
                data_norm,
            });
        }
        let null_norm = self.floor();
        let orthogonality_violated = c == 1.0 && null_norm > NULL_COMPONENT_TOLERANCE * data_norm;
        if target <= null_norm || orthogonality_violated {
            return Err(Error::NullSpaceComponent {
                null_norm,
                c_delta: target,
            });
        }

        let mut iterations = 0usize;
        let mut hi = 1.0f64;
        let mut lo = EPSILON_FLOOR;
        while self.h(hi) < target {
            lo = hi;
            hi *= 2.0;
            iterations += 1;
            if !hi.is_finite() {
                return Err(Error::NoiseExceedsData {
                    c_delta: target,
                    data_norm,
                });
            }
        }
        while hi - lo > BRACKET_RELATIVE_WIDTH * hi {
            let mid = if hi > 4.0 * lo {
                (lo * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            };
            if mid <= lo || mid >= hi {
                break;
            }
            if self.h(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
        let epsilon = 0.5 * (lo + hi);
        Ok(DiscrepancyRoot {
            epsilon,
            discrepancy: self.h(epsilon),
            target,
            iterations,
        })
    }
}

/// Free-function form of [`DiscrepancyProfile::discrepancy_value`].
pub fn discrepancy_value(p: &DiscrepancyProfile, eps: f64) -> Result<f64> {
    p.discrepancy_value(eps)
}

/// Free-function form of [`DiscrepancyProfile::solve_for_epsilon`].
pub fn solve_for_epsilon(p: &DiscrepancyProfile, delta: f64, c: f64) -> Result<DiscrepancyRoot> {
    p.solve_for_epsilon(delta, c)
}

/// Root of the discrepancy equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscrepancyRoot {
    pub epsilon: f64,
    /// `h(epsilon)`
    pub discrepancy: f64,
    /// `Cδ`
    pub target: f64,
    pub iterations: usize,
}

/// Regularization level at the root together with the stopping time it induces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoppingResult {
    pub epsilon_star: f64,
    pub t_delta: f64,
    pub achieved_discrepancy: f64,
    pub iterations: usize,
}

/// Maps the root `ε*` to `t_δ` with `ε(t_δ) = ε*`.
pub fn stopping_time<S: Schedule + ?Sized>(
    s: &S,
    root: &DiscrepancyRoot,
) -> Result<StoppingResult> {
    let t_delta = s.invert(root.epsilon)?;
    Ok(StoppingResult {
        epsilon_star: root.epsilon,
        t_delta,
        achieved_discrepancy: root.discrepancy,
        iterations: root.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{decompose, DenseOperator, DEFAULT_RANK_TOLERANCE};
    use crate::schedule::PowerSchedule;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn profile_of(a: &DenseOperator, f: &Vector) -> DiscrepancyProfile {
        build_profile(&decompose(a, DEFAULT_RANK_TOLERANCE).unwrap(), f).unwrap()
    }

    fn vec_of(v: &[f64]) -> Vector {
        Vector::from_column_slice(v)
    }

    /// Scans `h` on a geometric grid and refines the crossing cell by nested
    /// uniform subdivision.
    fn grid_scan_root(p: &DiscrepancyProfile, target: f64, points: usize) -> f64 {
        let (log_lo, log_hi) = (-16.0f64, 12.0f64);
        let at = |k: usize| 10f64.powf(log_lo + (log_hi - log_lo) * k as f64 / (points - 1) as f64);
        let k = (0..points)
            .find(|&k| p.h(at(k)) >= target)
            .expect("crossing in scan range");
        let (mut lo, mut hi) = (at(k.saturating_sub(1)), at(k));
        for _ in 0..6 {
            let steps = 1000;
            let x = |j: usize| lo + (hi - lo) * j as f64 / steps as f64;
            let j = (1..=steps).find(|&j| p.h(x(j)) >= target).unwrap();
            (lo, hi) = (x(j - 1), x(j));
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn profile_examples() {
        let p = profile_of(&DenseOperator::identity(2), &vec_of(&[0.6, 0.8]));
        assert_eq!(p.lambdas.len(), 2);
        assert!(p.lambdas.iter().all(|l| (l - 1.0).abs() < 1e-15));
        assert!((p.betas.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.null_mass < 1e-30);

        let p = profile_of(
            &DenseOperator::from_diagonal(&[1.0, 0.0]).unwrap(),
            &vec_of(&[1.0, 1.0]),
        );
        assert_eq!(p.lambdas, vec![1.0]);
        assert!((p.betas[0] - 1.0).abs() < 1e-15);
        assert!((p.null_mass - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parseval_on_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0))
            * DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let f = Vector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let p = profile_of(&DenseOperator::new(m).unwrap(), &f);
        assert_eq!(p.lambdas.len(), 3);
        let total = p.betas.iter().sum::<f64>() + p.null_mass;
        assert!((total - p.data_norm_sq).abs() <= 1e-10 * p.data_norm_sq);
        assert!(p.null_mass > 0.0);
    }

    #[test]
    fn value_examples() {
        let p = profile_of(&DenseOperator::identity(2), &vec_of(&[0.6, 0.8]));
        assert!((p.discrepancy_value(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((p.discrepancy_value(1e12).unwrap() - 1.0).abs() < 1e-6);
        assert!(p.discrepancy_value(0.0).is_err());
        assert!(p.discrepancy_value(-1.0).is_err());
    }

    #[test]
    fn value_matches_direct_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = DenseOperator::new(DMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0)))
            .unwrap()
            .normalize()
            .unwrap()
            .0;
        let f = Vector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let p = profile_of(&a, &f);
        let eps = 1e-3;
        let w = a.regularized_normal_solve_direct(eps, &f).unwrap();
        let direct = (a.apply(&w).unwrap() - &f).norm();
        let spectral = p.discrepancy_value(eps).unwrap();
        assert!((direct - spectral).abs() <= 1e-9 * direct);
    }

    #[test]
    fn identity_closed_form() {
        let p = profile_of(&DenseOperator::identity(2), &vec_of(&[0.6, 0.8]));
        let root = p.solve_for_epsilon(0.1, 1.0).unwrap();
        assert!((root.epsilon - 1.0 / 9.0).abs() <= 1e-12);
        assert!((root.discrepancy - 0.1).abs() <= 1e-10);
    }

    #[test]
    fn diagonal_matches_grid_scan() {
        let p = profile_of(
            &DenseOperator::from_diagonal(&[1.0, 0.5]).unwrap(),
            &vec_of(&[1.0, 1.0]),
        );
        let root = p.solve_for_epsilon(0.2, 1.0).unwrap();
        let oracle = grid_scan_root(&p, 0.2, 1_000_000);
        assert!((root.epsilon - oracle).abs() <= 1e-10 * oracle);
    }

    #[test]
    fn stress_near_data_norm() {
        let p = profile_of(&DenseOperator::identity(2), &vec_of(&[0.6, 0.8]));
        let delta = 1.0 - 1e-9;
        let root = p.solve_for_epsilon(delta, 1.0).unwrap();
        assert!(root.epsilon > 1e8);
        assert!((root.discrepancy - delta).abs() <= 1e-10);
        let oracle = grid_scan_root(&p, delta, 100_000);
        assert!((root.epsilon - oracle).abs() <= 1e-6 * oracle);
    }

    #[test]
    fn precondition_errors() {
        let p = profile_of(&DenseOperator::identity(2), &vec_of(&[0.6, 0.8]));
        assert!(matches!(
            p.solve_for_epsilon(1.0, 1.0),
            Err(Error::NoiseExceedsData { .. })
        ));
        assert!(matches!(
            p.solve_for_epsilon(0.6, 2.0),
            Err(Error::NoiseExceedsData { .. })
        ));
        assert!(p.solve_for_epsilon(0.1, 0.5).is_err());
        assert!(p.solve_for_epsilon(-0.1, 1.0).is_err());

        // null component of norm 1, data norm sqrt(2)
        let p = profile_of(
            &DenseOperator::from_diagonal(&[1.0, 0.0]).unwrap(),
            &vec_of(&[1.0, 1.0]),
        );
        let err = p.solve_for_epsilon(0.1, 1.0).unwrap_err();
        assert!(matches!(err, Error::NullSpaceComponent { .. }));
        assert!(err.to_string().contains("data has null-space component"));
        assert!(matches!(
            p.solve_for_epsilon(0.5, 1.5),
            Err(Error::NullSpaceComponent { .. })
        ));
        // C δ above the floor: solvable with the (1.4') variant
        let root = p.solve_for_epsilon(0.6, 2.0).unwrap();
        assert!((root.discrepancy - 1.2).abs() <= 1e-10);
        // C = 1 is rejected even when δ clears the floor
        assert!(matches!(
            p.solve_for_epsilon(1.2, 1.0),
            Err(Error::NullSpaceComponent { .. })
        ));

        let p = profile_of(
            &DenseOperator::from_diagonal(&[1.0, 0.0]).unwrap(),
            &vec_of(&[0.0, 1.0]),
        );
        assert!(matches!(
            p.solve_for_epsilon(0.1, 2.0),
            Err(Error::DegenerateProfile)
        ));
    }

    #[test]
    fn stopping_time_examples() {
        let s = PowerSchedule::default();
        let root = DiscrepancyRoot {
            epsilon: 0.1,
            discrepancy: 0.0,
            target: 0.0,
            iterations: 0,
        };
        assert!((stopping_time(&s, &root).unwrap().t_delta - 99.0).abs() < 1e-12);
        let boundary = DiscrepancyRoot {
            epsilon: 1.0,
            ..root
        };
        assert_eq!(stopping_time(&s, &boundary).unwrap().t_delta, 0.0);
        let too_big = DiscrepancyRoot {
            epsilon: 2.0,
            ..root
        };
        let err = stopping_time(&s, &too_big).unwrap_err();
        assert!(err.to_string().contains("stopping time negative"));
    }

    #[test]
    fn stopping_time_grows_as_noise_shrinks() {
        let a = DenseOperator::from_diagonal(&[1.0, 0.3, 0.05, 0.01]).unwrap();
        let p = profile_of(&a, &vec_of(&[1.0, 0.5, 0.2, 0.1]));
        let s = PowerSchedule::default();
        let times: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&d| {
                stopping_time(&s, &p.solve_for_epsilon(d, 1.0).unwrap())
                    .unwrap()
                    .t_delta
            })
            .collect();
        assert!(times.windows(2).all(|w| w[1] > w[0]), "{times:?}");
    }

    #[test]
    fn limits() {
        let p = profile_of(
            &DenseOperator::from_diagonal(&[1.0, 0.0]).unwrap(),
            &vec_of(&[1.0, 1.0]),
        );
        assert!(p.discrepancy_value(1e-14).unwrap() <= p.floor() + 1e-8);
        assert!((p.discrepancy_value(1e12).unwrap() - p.data_norm()).abs() <= 1e-6 * p.data_norm());
    }

    fn random_profile() -> impl Strategy<Value = DiscrepancyProfile> {
        (1usize..8).prop_flat_map(|n| {
            (
                proptest::collection::vec(1e-6f64..1.0, n),
                proptest::collection::vec(1e-4f64..1.0, n),
                0.0f64..0.2,
            )
                .prop_map(|(mut lambdas, betas, null_mass)| {
                    lambdas.sort_by(|a, b| b.total_cmp(a));
                    let data_norm_sq = betas.iter().sum::<f64>() + null_mass;
                    DiscrepancyProfile {
                        lambdas,
                        betas,
                        null_mass,
                        data_norm_sq,
                    }
                })
        })
    }

    proptest! {
        #[test]
        fn nondecreasing(p in random_profile()) {
            let mut prev = 0.0;
            for k in 0..200 {
                let eps = 10f64.powf(-8.0 + 14.0 * k as f64 / 199.0);
                let h = p.discrepancy_value(eps).unwrap();
                prop_assert!(h >= prev);
                prev = h;
            }
        }

        #[test]
        fn strictly_increasing_without_null_mass(p in random_profile()) {
            let p = DiscrepancyProfile {
                data_norm_sq: p.data_norm_sq - p.null_mass,
                null_mass: 0.0,
                ..p
            };
            // past ε ≈ 1e3 the filter factors round to 1
            let mut prev = 0.0;
            for k in 0..200 {
                let eps = 10f64.powf(-8.0 + 11.0 * k as f64 / 199.0);
                let h = p.discrepancy_value(eps).unwrap();
                prop_assert!(h > prev);
                prev = h;
            }
        }

        #[test]
        fn root_residual_and_scale_covariance(p in random_profile(), frac in 0.05f64..0.95, scale in 0.01f64..100.0) {
            let floor = p.floor();
            let norm = p.data_norm();
            let delta = (floor + frac * (norm - floor)) / 1.5;
            let root = p.solve_for_epsilon(delta, 1.5).unwrap();
            prop_assert!((root.discrepancy - 1.5 * delta).abs() <= 1e-10 * norm);

            let scaled = DiscrepancyProfile {
                lambdas: p.lambdas.clone(),
                betas: p.betas.iter().map(|b| b * scale * scale).collect(),
                null_mass: p.null_mass * scale * scale,
                data_norm_sq: p.data_norm_sq * scale * scale,
            };
            let root2 = scaled.solve_for_epsilon(delta * scale, 1.5).unwrap();
            prop_assert!((root.epsilon - root2.epsilon).abs() <= 1e-10 * root.epsilon);
        }
    }
}
