//! Dense real linear operators and their singular-value decompositions.
//!
//! The spectral families of `B = A*A` and `Q = AA*` are represented by the
//! SVD `A = Σ σ_i u_i v_iᵀ`: the eigenvalues of both are `λ_i = σ_i²`, with
//! eigenvectors `v_i` (for `B`) and `u_i` (for `Q`).

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// Real column vector.
pub type Vector = DVector<f64>;

/// Default relative threshold below which a singular value counts as zero.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-12;

/// Dense real matrix standing in for a bounded linear operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "operator must have positive dimensions".into(),
            ));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("operator entries"));
        }
        Ok(Self { matrix })
    }

    /// Builds an operator from row-major entries.
    pub fn from_row_slice(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        check_len(rows * cols, entries.len())?;
        Self::new(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// `A x`.
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        check_len(self.cols(), x.len())?;
        Ok(&self.matrix * x)
    }

    /// `A* y = Aᵀ y`.
    pub fn adjoint_apply(&self, y: &Vector) -> Result<Vector> {
        check_len(self.rows(), y.len())?;
        Ok(self.matrix.tr_mul(y))
    }

    pub fn adjoint(&self) -> DenseOperator {
        Self {
            matrix: self.matrix.transpose(),
        }
    }

    /// `B = A*A`.
    pub fn normal(&self) -> DMatrix<f64> {
        self.matrix.tr_mul(&self.matrix)
    }

    /// `Q = AA*`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.matrix * self.matrix.transpose()
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        self.matrix
            .clone()
            .singular_values()
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }

    /// Rescales the operator to unit norm and returns the scale `s = ‖A‖`.
    ///
    /// Callers must rescale their data the same way (`f ← f / s`).
    pub fn normalize(&self) -> Result<(DenseOperator, f64)> {
        let scale = self.operator_norm();
        if scale == 0.0 {
            return Err(Error::ZeroOperator);
        }
        Ok((
            Self {
                matrix: &self.matrix / scale,
            },
            scale,
        ))
    }

    /// Solves `(A*A + eps I) w = A* f` with a Cholesky factorization.
    ///
    /// Independent of the spectral path in
    /// [`SpectralDecomposition::regularized_normal_solve`].
    pub fn regularized_normal_solve_direct(&self, eps: f64, f: &Vector) -> Result<Vector> {
        check_positive(eps, "eps")?;
        let rhs = self.adjoint_apply(f)?;
        let mut system = self.normal();
        for i in 0..system.nrows() {
            system[(i, i)] += eps;
        }
        let chol = system.cholesky().ok_or_else(|| {
            Error::InvalidArgument("regularized normal matrix not positive definite".into())
        })?;
        Ok(chol.solve(&rhs))
    }

    /// Writes the plain-text matrix format: `rows cols` then one row per line.
    pub fn write_text<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_matrix_text(&self.matrix, out)
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        Self::new(read_matrix_text(input)?)
    }
}

/// Truncated-rank view of a thin SVD `A = U Σ Vᵀ`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    rows: usize,
    cols: usize,
    singular_values: Vector,
    left_vectors: DMatrix<f64>,
    right_vectors: DMatrix<f64>,
    rank_tolerance: f64,
    numerical_rank: usize,
}

/// Computes the SVD of `op`, singular values sorted descending.
///
/// `numerical_rank` counts `σ_i > rank_tolerance · σ_1`.
pub fn decompose(op: &DenseOperator, rank_tolerance: f64) -> Result<SpectralDecomposition> {
    if !(0.0..1.0).contains(&rank_tolerance) {
        return Err(Error::InvalidArgument(format!(
            "rank_tolerance must lie in [0, 1), got {rank_tolerance}"
        )));
    }
    let matrix = op.matrix();
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("operator entries"));
    }
    let svd = nalgebra::SVD::new(matrix.clone(), true, true);
    let u = svd.u.expect("left vectors requested");
    let v_t = svd.v_t.expect("right vectors requested");
    let k = svd.singular_values.len();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut singular_values = Vector::zeros(k);
    let mut left_vectors = DMatrix::zeros(op.rows(), k);
    let mut right_vectors = DMatrix::zeros(op.cols(), k);
    for (dst, &src) in order.iter().enumerate() {
        singular_values[dst] = svd.singular_values[src];
        left_vectors.set_column(dst, &u.column(src));
        right_vectors.set_column(dst, &v_t.row(src).transpose());
    }
    let sigma_max = singular_values.get(0).copied().unwrap_or(0.0);
    let numerical_rank = singular_values
        .iter()
        .filter(|&&s| s > rank_tolerance * sigma_max && s > 0.0)
        .count();

    Ok(SpectralDecomposition {
        rows: op.rows(),
        cols: op.cols(),
        singular_values,
        left_vectors,
        right_vectors,
        rank_tolerance,
        numerical_rank,
    })
}

impl SpectralDecomposition {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn singular_values(&self) -> &Vector {
        &self.singular_values
    }

    pub fn left_vectors(&self) -> &DMatrix<f64> {
        &self.left_vectors
    }

    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.right_vectors
    }

    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }

    pub fn numerical_rank(&self) -> usize {
        self.numerical_rank
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.get(0).copied().unwrap_or(0.0)
    }

    /// `σ_1 / σ_r` over the retained triplets.
    pub fn condition_number(&self) -> f64 {
        match self.numerical_rank {
            0 => f64::INFINITY,
            r => self.singular_values[0] / self.singular_values[r - 1],
        }
    }

    /// `Σ σ_i u_i v_iᵀ` over all triplets.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.left_vectors.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        scaled * self.right_vectors.transpose()
    }

    /// `A x` evaluated through the factors.
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        check_len(self.cols, x.len())?;
        let mut coeffs = self.right_vectors.tr_mul(x);
        coeffs.component_mul_assign(&self.singular_values);
        Ok(&self.left_vectors * coeffs)
    }

    /// Spectral solution of `(A*A + eps I) w = A* f`:
    /// `w = Σ σ_i (f·u_i)/(σ_i² + eps) v_i`.
    pub fn regularized_normal_solve(&self, eps: f64, f: &Vector) -> Result<Vector> {
        check_positive(eps, "eps")?;
        let coeffs = self.left_coefficients(f)?;
        Ok(self.filtered_synthesis(&coeffs, eps))
    }

    /// `u_iᵀ f` for every triplet.
    pub fn left_coefficients(&self, f: &Vector) -> Result<Vector> {
        check_len(self.rows, f.len())?;
        Ok(self.left_vectors.tr_mul(f))
    }

    /// `Σ σ_i c_i/(σ_i² + eps) v_i` for precomputed coefficients `c_i = u_iᵀ f`.
    pub(crate) fn filtered_synthesis(&self, coeffs: &Vector, eps: f64) -> Vector {
        let filtered = Vector::from_iterator(
            coeffs.len(),
            self.singular_values
                .iter()
                .zip(coeffs.iter())
                .map(|(s, c)| s * c / (s * s + eps)),
        );
        &self.right_vectors * filtered
    }

    /// Orthogonal projection of `f` onto `N(A*)^⊥` (span of retained left
    /// vectors), together with the squared norm of the discarded part.
    pub fn project_range_closure(&self, f: &Vector) -> Result<(Vector, f64)> {
        check_len(self.rows, f.len())?;
        if self.numerical_rank == self.rows {
            return Ok((f.clone(), 0.0));
        }
        let basis = self.left_vectors.columns(0, self.numerical_rank);
        let coeffs = basis.tr_mul(f);
        let projected = basis * coeffs;
        let null_mass = (f - &projected).norm_squared();
        Ok((projected, null_mass))
    }

    /// Orthogonal projection of `x` onto `N(A)^⊥` (span of retained right vectors).
    pub fn project_null_complement(&self, x: &Vector) -> Result<Vector> {
        check_len(self.cols, x.len())?;
        let basis = self.right_vectors.columns(0, self.numerical_rank);
        Ok(basis * basis.tr_mul(x))
    }
}

pub(crate) fn check_positive(value: f64, name: &str) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "{name} must be positive and finite, got {value}"
        )));
    }
    Ok(())
}

pub fn write_matrix_text<W: Write>(matrix: &DMatrix<f64>, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{} {}", matrix.nrows(), matrix.ncols())?;
    let mut line = String::new();
    for i in 0..matrix.nrows() {
        line.clear();
        for j in 0..matrix.ncols() {
            if j > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{:.16e}", matrix[(i, j)]);
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_matrix_text<R: BufRead>(input: R) -> Result<DMatrix<f64>> {
    let mut lines = input
        .lines()
        .map(|l| l.map_err(|e| Error::Parse(e.to_string())))
        .filter(|l| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("missing header line".into()))??;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Parse(format!("bad dimension {t:?}")))
        })
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Parse(format!(
            "header must be 'rows cols', got {header:?}"
        )));
    };
    let mut entries = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing row {i}")))??;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Parse(format!("bad number {t:?}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != cols {
            return Err(Error::Parse(format!(
                "row {i} has {} entries, expected {cols}",
                row.len()
            )));
        }
        entries.extend(row);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &entries))
}

/// Writes a vector as an `n 1` matrix.
pub fn write_vector_text<W: Write>(v: &Vector, out: W) -> std::io::Result<()> {
    write_matrix_text(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()), out)
}

pub fn read_vector_text<R: BufRead>(input: R) -> Result<Vector> {
    let m = read_matrix_text(input)?;
    if m.ncols() != 1 {
        return Err(Error::Parse(format!(
            "expected a column vector, got {} columns",
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("vector components"));
    }
    Ok(Vector::from_column_slice(m.as_slice()))
}
