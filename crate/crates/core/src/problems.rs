//! Ill-posed test problems with known minimal-norm solutions, and seeded
//! noise injection.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64(seed)`; normal variates are `rand_distr::StandardNormal`
//! drawn in component order. Every generator is a pure function of its
//! parameters and seed. Problem generators draw from ChaCha stream 1 and
//! noise from stream 0, so one seed can drive both without correlation.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nonlinear::{MonotoneOperator, ScalarComponent, SeparableOperator};
use crate::operators::{
    decompose, DenseOperator, SpectralDecomposition, Vector, DEFAULT_RANK_TOLERANCE,
};

#[derive(Debug, Clone)]
pub struct TestProblem {
    pub operator: DenseOperator,
    /// `A y`
    pub f_exact: Vector,
    /// Minimal-norm solution `y ∈ N(A)^⊥`.
    pub y_reference: Vector,
    pub label: String,
    /// `σ_1 / σ_r` over the numerically retained spectrum.
    pub ill_posedness: f64,
}

impl TestProblem {
    /// Projects `y` onto `N(A)^⊥` and forms `f = A y`.
    pub fn from_operator(operator: DenseOperator, y: Vector, label: String) -> Result<Self> {
        let dec = decompose(&operator, DEFAULT_RANK_TOLERANCE)?;
        let y_reference = dec.project_null_complement(&y)?;
        let f_exact = operator.apply(&y_reference)?;
        Ok(Self {
            operator,
            f_exact,
            y_reference,
            label,
            ill_posedness: dec.condition_number(),
        })
    }
}

const PROBLEM_STREAM: u64 = 1;

fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// `A = I_n`, `y = 1/√n`, so `‖f‖ = 1`.
pub fn identity_problem(n: usize) -> Result<TestProblem> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let y = Vector::from_element(n, 1.0 / (n as f64).sqrt());
    TestProblem::from_operator(DenseOperator::identity(n), y, format!("identity(n={n})"))
}

/// Hilbert matrix `A_ij = 1/(i+j−1)`, scaled to unit norm; `y` is the unit
/// vector of ones.
pub fn hilbert_problem(n: usize) -> Result<TestProblem> {
    if !(2..=64).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "hilbert size must lie in [2, 64], got {n}"
        )));
    }
    let raw = DenseOperator::new(DMatrix::from_fn(n, n, |i, j| 1.0 / (i + j + 1) as f64))?;
    let (operator, _) = raw.normalize()?;
    let y = Vector::from_element(n, 1.0 / (n as f64).sqrt());
    TestProblem::from_operator(operator, y, format!("hilbert(n={n})"))
}

/// Midpoint discretization of a Gaussian convolution on `[0, 1]`, scaled to
/// unit norm; `y(s) = exp(−(s−1/2)²/0.02)`.
pub fn gaussian_blur_problem(n: usize, width: f64) -> Result<TestProblem> {
    if !(8..=256).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "gaussian_blur size must lie in [8, 256], got {n}"
        )));
    }
    if !(width > 0.0 && width < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "width must lie in (0, 1), got {width}"
        )));
    }
    let grid: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let kernel = DMatrix::from_fn(n, n, |i, j| {
        let d = grid[i] - grid[j];
        (-d * d / (2.0 * width * width)).exp() / n as f64
    });
    let (operator, _) = DenseOperator::new(kernel)?.normalize()?;
    let y = Vector::from_iterator(n, grid.iter().map(|s| (-(s - 0.5).powi(2) / 0.02).exp()));
    TestProblem::from_operator(operator, y, format!("gaussian_blur(n={n}, width={width})"))
}

/// `A = U diag(σ) Vᵀ` with seeded random orthogonal `U`, `V`; `σ_1..σ_r`
/// log-spaced from `1` down to `10⁻⁴` and the rest zero.
/// `y = Σ_{i≤r} ±v_i/√r` with seeded signs, so `‖f‖` does not depend on the seed.
pub fn rank_deficient_problem(n: usize, r: usize, seed: u64) -> Result<TestProblem> {
    if r == 0 || r >= n {
        return Err(Error::InvalidArgument(format!(
            "rank must satisfy 1 <= r < n, got r={r}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PROBLEM_STREAM);
    let mut orthogonal = || {
        let m = DMatrix::from_iterator(n, n, (0..n * n).map(|_| StandardNormal.sample(&mut rng)));
        m.qr().q()
    };
    let u = orthogonal();
    let v = orthogonal();
    let sigma = Vector::from_iterator(
        n,
        (0..n).map(|i| match i {
            i if i >= r => 0.0,
            _ if r == 1 => 1.0,
            i => 10f64.powf(-4.0 * i as f64 / (r - 1) as f64),
        }),
    );
    let operator = DenseOperator::new(&u * DMatrix::from_diagonal(&sigma) * v.transpose())?;
    let signs = normal_vector(&mut rng, r).map(|z| if z < 0.0 { -1.0 } else { 1.0 });
    let y = v.columns(0, r) * &signs / (r as f64).sqrt();
    TestProblem::from_operator(
        operator,
        y,
        format!("rank_deficient(n={n}, r={r}, seed={seed})"),
    )
}

/// `A(u)_i = a_i u_i + u_i³` and `f = A(y)`.
pub fn cubic_separable_problem(
    coefficients: &[f64],
    y: &Vector,
) -> Result<(SeparableOperator, Vector)> {
    if coefficients.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: coefficients.len(),
            actual: y.len(),
        });
    }
    if let Some(a) = coefficients.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "cubic coefficients must be positive, got {a}"
        )));
    }
    let op = SeparableOperator::new(
        coefficients
            .iter()
            .map(|&a| ScalarComponent::Cubic { a })
            .collect(),
    )?;
    let f = op.evaluate(y)?;
    Ok((op, f))
}

/// Noise of exact magnitude `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub delta: f64,
    pub seed: u64,
    /// Project the noise direction onto `N(A*)^⊥` before scaling.
    pub in_range_closure: bool,
}

impl NoiseSpec {
    pub fn new(delta: f64, seed: u64) -> Self {
        Self {
            delta,
            seed,
            in_range_closure: true,
        }
    }
}

const NOISE_RETRIES: u64 = 8;

/// `f_δ = f + δ e/‖e‖` with `e` standard normal (optionally projected onto
/// `N(A*)^⊥`, which needs `dec`).
///
/// A direction that vanishes after projection is redrawn with `seed + 1`,
/// `seed + 2`, … up to eight times.
pub fn add_noise(
    f_exact: &Vector,
    dec: Option<&SpectralDecomposition>,
    spec: &NoiseSpec,
) -> Result<Vector> {
    let norm = f_exact.norm();
    if !(spec.delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive, got {}",
            spec.delta
        )));
    }
    if spec.delta >= norm {
        return Err(Error::InvalidArgument(format!(
            "delta = {} must be smaller than ||f|| = {norm}",
            spec.delta
        )));
    }
    let n = f_exact.len();
    for attempt in 0..=NOISE_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(attempt));
        let mut e = normal_vector(&mut rng, n);
        if spec.in_range_closure {
            let dec = dec.ok_or_else(|| {
                Error::InvalidArgument("projected noise requires a spectral decomposition".into())
            })?;
            e = dec.project_range_closure(&e)?.0;
        }
        let e_norm = e.norm();
        if e_norm > 1e-12 * (n as f64).sqrt() {
            return Ok(f_exact + e * (spec.delta / e_norm));
        }
    }
    Err(Error::InvalidArgument(
        "noise direction vanished after projection".into(),
    ))
}
