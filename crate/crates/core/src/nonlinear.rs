//! Discrepancy principle for nonlinear monotone operators.
//!
//! For a monotone continuous `A` and `ε > 0`, `u_{δ,ε}` is any point whose
//! Tikhonov functional `F(u) = ‖A(u) − f_δ‖² + ε‖u‖²` is within
//! `(C² − 1)δ²` of `m = inf F`. The regularization level `ε(δ)` is the
//! smallest root of `‖A(u_{δ,ε}) − f_δ‖ = Cδ`, located by an ascending
//! geometric scan followed by bisection.
//!
//! `m` is not computable in general. For separable operators
//! (`A(u)_i = φ_i(u_i)`) `F` splits into one-dimensional pieces and each
//! piece is minimized with a certified gap; other operators get a
//! best-effort coordinate descent whose gap is flagged as uncertified.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::operators::Vector;

/// A monotone operator `(A(u) − A(v), u − v) ≥ 0`, defined on all of `ℝⁿ`.
///
/// `evaluate` must be a pure function.
pub trait MonotoneOperator {
    fn dimension(&self) -> usize;

    fn evaluate(&self, u: &Vector) -> Result<Vector>;

    /// The coordinatewise structure, when the operator has one.
    fn as_separable(&self) -> Option<&SeparableOperator> {
        None
    }
}

/// Strictly increasing scalar map used as one coordinate of a separable operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarComponent {
    /// `a x`
    Linear { a: f64 },
    /// `a x + x³`
    Cubic { a: f64 },
}

impl ScalarComponent {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ScalarComponent::Linear { a } => a * x,
            ScalarComponent::Cubic { a } => a * x + x * x * x,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ScalarComponent::Linear { a } => a,
            ScalarComponent::Cubic { a } => a + 3.0 * x * x,
        }
    }

    /// `sup_{lo ≤ x ≤ hi} φ'(x)`; both shipped derivatives are convex, so the
    /// supremum sits at an endpoint.
    fn derivative_bound(&self, lo: f64, hi: f64) -> f64 {
        self.derivative(lo).max(self.derivative(hi))
    }
}

/// `A(u)_i = φ_i(u_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableOperator {
    components: Vec<ScalarComponent>,
}

impl SeparableOperator {
    pub fn new(components: Vec<ScalarComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument(
                "operator needs at least one component".into(),
            ));
        }
        for c in &components {
            let a = match *c {
                ScalarComponent::Linear { a } | ScalarComponent::Cubic { a } => a,
            };
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "component coefficients must be positive, got {a}"
                )));
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[ScalarComponent] {
        &self.components
    }
}

impl MonotoneOperator for SeparableOperator {
    fn dimension(&self) -> usize {
        self.components.len()
    }

    fn evaluate(&self, u: &Vector) -> Result<Vector> {
        check_len(self.components.len(), u.len())?;
        Ok(Vector::from_iterator(
            u.len(),
            self.components
                .iter()
                .zip(u.iter())
                .map(|(c, x)| c.value(*x)),
        ))
    }

    fn as_separable(&self) -> Option<&SeparableOperator> {
        Some(self)
    }
}

/// Wraps an arbitrary map; monotonicity is the caller's responsibility.
pub struct GeneralOperator<F> {
    dimension: usize,
    map: F,
}

impl<F: Fn(&Vector) -> Vector> GeneralOperator<F> {
    pub fn new(dimension: usize, map: F) -> Self {
        Self { dimension, map }
    }
}

impl<F: Fn(&Vector) -> Vector> MonotoneOperator for GeneralOperator<F> {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn evaluate(&self, u: &Vector) -> Result<Vector> {
        check_len(self.dimension, u.len())?;
        let out = (self.map)(u);
        check_len(self.dimension, out.len())?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("operator value"));
        }
        Ok(out)
    }
}

/// `‖A(u) − f_δ‖² + ε‖u‖²`.
pub fn functional_f<A: MonotoneOperator + ?Sized>(
    op: &A,
    f_delta: &Vector,
    eps: f64,
    u: &Vector,
) -> Result<f64> {
    check_len(op.dimension(), f_delta.len())?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    Ok((op.evaluate(u)? - f_delta).norm_squared() + eps * u.norm_squared())
}

/// Smallest value of `(A(u) − A(v), u − v)` over `pairs` random pairs drawn
/// uniformly from `[−radius, radius]ⁿ`.
pub fn monotonicity_spot_check<A: MonotoneOperator + ?Sized>(
    op: &A,
    pairs: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = op.dimension();
    let mut worst = f64::INFINITY;
    for _ in 0..pairs {
        let u = Vector::from_fn(n, |_, _| rng.random_range(-radius..radius));
        let v = Vector::from_fn(n, |_, _| rng.random_range(-radius..radius));
        let ip = (op.evaluate(&u)? - op.evaluate(&v)?).dot(&(&u - &v));
        worst = worst.min(ip);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearMinimizer {
    #[serde(serialize_with = "serialize_vector")]
    pub u: Vector,
    pub f_value: f64,
    /// Upper bound on `F(u) − m`; heuristic when `certified` is false.
    pub gap_certificate: f64,
    pub certified: bool,
    pub epsilon: f64,
}

const GOLDEN_ITERATIONS: usize = 600;
const POLISH_ITERATIONS: usize = 200;

/// Finds `u` with `F(u) ≤ m + gap_budget`.
///
/// Separable operators: each coordinate piece `(φ(x) − g)² + εx²` is
/// minimized by golden-section search on `[−M, M]` with
/// `M = (‖f_δ‖ + ‖A(0)‖)/ε + 1` (the minimizer satisfies `ε‖u*‖² ≤ F(0)`),
/// until a Lipschitz bound on the final interval certifies the
/// per-coordinate share of the budget; the point is then polished by
/// bisection on the stationarity condition `(φ(x) − g)φ'(x) + εx = 0`.
pub fn near_minimize<A: MonotoneOperator + ?Sized>(
    op: &A,
    f_delta: &Vector,
    eps: f64,
    gap_budget: f64,
) -> Result<NearMinimizer> {
    check_len(op.dimension(), f_delta.len())?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if !(gap_budget > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gap budget must be positive, got {gap_budget}"
        )));
    }
    let n = op.dimension();
    let a_zero = op.evaluate(&Vector::zeros(n))?;
    let radius = (f_delta.norm() + a_zero.norm()) / eps + 1.0;
    match op.as_separable() {
        Some(sep) => minimize_separable(sep, f_delta, eps, gap_budget, radius),
        None => minimize_general(op, f_delta, eps, gap_budget, radius),
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn minimize_separable(
    op: &SeparableOperator,
    f_delta: &Vector,
    eps: f64,
    gap_budget: f64,
    radius: f64,
) -> Result<NearMinimizer> {
    let n = op.dimension();
    let share = gap_budget / n as f64;
    let mut u = Vector::zeros(n);
    let mut total_gap = 0.0;
    for (i, (phi, &g)) in op.components().iter().zip(f_delta.iter()).enumerate() {
        let piece = |x: f64| {
            let r = phi.value(x) - g;
            r * r + eps * x * x
        };
        let certificate = |lo: f64, hi: f64| {
            let residual = (phi.value(lo) - g).abs().max((phi.value(hi) - g).abs());
            let slope =
                2.0 * residual * phi.derivative_bound(lo, hi) + 2.0 * eps * lo.abs().max(hi.abs());
            slope * (hi - lo)
        };

        let (mut lo, mut hi) = (-radius, radius);
        let mut x1 = hi - INV_PHI * (hi - lo);
        let mut x2 = lo + INV_PHI * (hi - lo);
        let (mut f1, mut f2) = (piece(x1), piece(x2));
        let mut iterations = 0;
        while certificate(lo, hi) > share
            && iterations < GOLDEN_ITERATIONS
            && hi - lo > f64::EPSILON * hi.abs().max(lo.abs())
        {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - INV_PHI * (hi - lo);
                f1 = piece(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + INV_PHI * (hi - lo);
                f2 = piece(x2);
            }
            iterations += 1;
        }
        let golden = if f1 <= f2 { x1 } else { x2 };
        let gap = certificate(lo, hi);

        // stationarity polish; near the minimum F is too flat for golden
        // comparisons to resolve the point itself
        let stationarity = |x: f64| (phi.value(x) - g) * phi.derivative(x) + eps * x;
        let mut width = (hi - lo).max(f64::EPSILON * (1.0 + golden.abs()));
        let (mut a, mut b) = (golden - width, golden + width);
        while !(stationarity(a) <= 0.0 && stationarity(b) >= 0.0) && width < radius {
            width *= 2.0;
            (a, b) = (golden - width, golden + width);
        }
        let mut x = golden;
        if stationarity(a) <= 0.0 && stationarity(b) >= 0.0 {
            for _ in 0..POLISH_ITERATIONS {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if stationarity(mid) < 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let polished = 0.5 * (a + b);
            if piece(polished) <= piece(golden) {
                x = polished;
            }
        }
        u[i] = x;
        total_gap += gap + (piece(x) - piece(golden)).max(0.0);
    }
    if total_gap > gap_budget {
        return Err(Error::BudgetUnreachable {
            budget: gap_budget,
            gap: total_gap,
            best: Box::new(u),
        });
    }
    let f_value = (op.evaluate(&u)? - f_delta).norm_squared() + eps * u.norm_squared();
    Ok(NearMinimizer {
        u,
        f_value,
        gap_certificate: total_gap,
        certified: true,
        epsilon: eps,
    })
}

const MAX_SWEEPS: usize = 500;

/// Derivative-free coordinate descent; the reported gap is the last sweep's
/// improvement scaled by `10·n` and is not a certificate.
fn minimize_general<A: MonotoneOperator + ?Sized>(
    op: &A,
    f_delta: &Vector,
    eps: f64,
    gap_budget: f64,
    radius: f64,
) -> Result<NearMinimizer> {
    let n = op.dimension();
    let objective = |u: &Vector| -> Result<f64> {
        Ok((op.evaluate(u)? - f_delta).norm_squared() + eps * u.norm_squared())
    };
    let mut u = Vector::zeros(n);
    let mut current = objective(&u)?;
    let threshold = gap_budget / (10.0 * n as f64);
    for _ in 0..MAX_SWEEPS {
        let before = current;
        for i in 0..n {
            let centre = u[i];
            let mut line = |x: f64| -> Result<f64> {
                u[i] = x;
                objective(&u)
            };
            let (mut lo, mut hi) = (centre - radius, centre + radius);
            let mut x1 = hi - INV_PHI * (hi - lo);
            let mut x2 = lo + INV_PHI * (hi - lo);
            let (mut f1, mut f2) = (line(x1)?, line(x2)?);
            while hi - lo > 1e-12 * (1.0 + centre.abs()) {
                if f1 <= f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - INV_PHI * (hi - lo);
                    f1 = line(x1)?;
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + INV_PHI * (hi - lo);
                    f2 = line(x2)?;
                }
            }
            let (x, fx) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
            if fx < current {
                u[i] = x;
                current = fx;
            } else {
                u[i] = centre;
            }
        }
        let improvement = before - current;
        if improvement < threshold {
            return Ok(NearMinimizer {
                u,
                f_value: current,
                gap_certificate: improvement * 10.0 * n as f64,
                certified: false,
                epsilon: eps,
            });
        }
    }
    Err(Error::BudgetUnreachable {
        budget: gap_budget,
        gap: f64::INFINITY,
        best: Box::new(u),
    })
}

/// One evaluation of `h(ε) = ‖A(u_{δ,ε}) − f_δ‖` recorded during the root search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPoint {
    pub epsilon: f64,
    pub h: f64,
    pub f_value: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonlinearRoot {
    /// `ε(δ)`
    pub epsilon: f64,
    /// `u_δ = u_{δ,ε(δ)}`
    #[serde(serialize_with = "serialize_vector")]
    pub u: Vector,
    /// `‖A(u_δ) − f_δ‖`
    pub residual: f64,
    pub target: f64,
    pub gap_certificate: f64,
    pub certified: bool,
    /// Every `h` evaluation, in ascending `ε`.
    pub trace: Vec<ScanPoint>,
}

impl NonlinearRoot {
    /// CSV with columns `epsilon,h,F,gap`.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epsilon,h,F,gap")?;
        for p in &self.trace {
            writeln!(out, "{},{},{},{}", p.epsilon, p.h, p.f_value, p.gap)?;
        }
        Ok(())
    }
}

pub const SCAN_START: f64 = 1e-14;
pub const SCAN_END: f64 = 1e12;
pub const SCAN_RATIO: f64 = 2.0;
pub const ROOT_RELATIVE_WIDTH: f64 = 1e-10;

/// Locates the smallest `ε` with `‖A(u_{δ,ε}) − f_δ‖ = Cδ`.
pub fn nonlinear_discrepancy<A: MonotoneOperator + ?Sized>(
    op: &A,
    f_delta: &Vector,
    delta: f64,
    c: f64,
) -> Result<NonlinearRoot> {
    check_len(op.dimension(), f_delta.len())?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive, got {delta}"
        )));
    }
    if !(c > 1.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("C must exceed 1, got {c}")));
    }
    let target = c * delta;
    let initial = (op.evaluate(&Vector::zeros(op.dimension()))? - f_delta).norm();
    if initial <= target {
        return Err(Error::NoiseExceedsData {
            c_delta: target,
            data_norm: initial,
        });
    }
    let budget = (c * c - 1.0) * delta * delta;

    let mut cache: HashMap<u64, (NearMinimizer, f64)> = HashMap::new();
    let mut h = |eps: f64| -> Result<(NearMinimizer, f64)> {
        if let Some(hit) = cache.get(&eps.to_bits()) {
            return Ok(hit.clone());
        }
        let m = near_minimize(op, f_delta, eps, budget)?;
        let value = (op.evaluate(&m.u)? - f_delta).norm();
        cache.insert(eps.to_bits(), (m.clone(), value));
        Ok((m, value))
    };

    let mut eps = SCAN_START;
    let (mut lo, mut h_lo) = (eps, h(eps)?.1);
    let mut bracket = None;
    while eps < SCAN_END {
        let next = eps * SCAN_RATIO;
        let h_next = h(next)?.1;
        if h_lo <= target && target <= h_next {
            bracket = Some((lo, next));
            break;
        }
        eps = next;
        (lo, h_lo) = (next, h_next);
    }
    let Some((mut lo, mut hi)) = bracket else {
        let mut trace: Vec<(f64, f64)> = cache
            .iter()
            .map(|(k, v)| (f64::from_bits(*k), v.1))
            .collect();
        trace.sort_by(|a, b| a.0.total_cmp(&b.0));
        return Err(Error::NoRootInScanRange { trace });
    };

    while hi - lo > ROOT_RELATIVE_WIDTH * hi {
        let mid = 0.5 * (lo + hi);
        if h(mid)?.1 <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let epsilon = 0.5 * (lo + hi);
    let (m, residual) = h(epsilon)?;

    let mut trace: Vec<ScanPoint> = cache
        .iter()
        .map(|(k, (m, value))| ScanPoint {
            epsilon: f64::from_bits(*k),
            h: *value,
            f_value: m.f_value,
            gap: m.gap_certificate,
        })
        .collect();
    trace.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));

    Ok(NonlinearRoot {
        epsilon,
        residual,
        target,
        gap_certificate: m.gap_certificate,
        certified: m.certified,
        u: m.u,
        trace,
    })
}

fn serialize_vector<S: serde::Serializer>(
    v: &Vector,
    ser: S,
) -> std::result::Result<S::Ok, S::Error> {
    ser.collect_seq(v.iter())
}
