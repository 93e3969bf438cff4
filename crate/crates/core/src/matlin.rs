//! Dense symmetric-matrix utilities.
//!
//! Every strict matrix inequality in the crate is certified through
//! [`is_positive_definite`], i.e. as `λ_min(M) > margin`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Default strictness margin, scaled by `1 + ‖M‖_∞` where used.
pub const DEFAULT_MARGIN: f64 = 1e-9;

/// Relative tolerance below which a negative eigenvalue is treated as zero.
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (entry ({i},{j}) differs from its mirror)")]
    NotSymmetric { i: usize, j: usize },
    #[error("matrix of order zero")]
    Empty,
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },
    #[error("block is singular at working precision")]
    SingularBlock,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cannot parse matrix: {0}")]
    Parse(String),
}

/// A real symmetric matrix of order `n ≥ 1`.
///
/// Symmetry is exact: construction either checks it with zero tolerance or
/// symmetrizes the input as `(M + Mᵀ)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m`, rejecting any asymmetry.
    pub fn new(m: DMatrix<f64>) -> Result<Self, MatError> {
        check_square(&m)?;
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                if m[(i, j)] != m[(j, i)] {
                    return Err(MatError::NotSymmetric { i, j });
                }
            }
        }
        Ok(Self(m))
    }

    /// Builds from a computed product, averaging away floating-point asymmetry.
    pub fn symmetrize(m: DMatrix<f64>) -> Result<Self, MatError> {
        check_square(&m)?;
        let n = m.nrows();
        let mut s = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        Ok(Self(s))
    }

    pub fn identity(n: usize) -> Self {
        assert!(n >= 1, "order must be positive");
        Self(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1, "order must be positive");
        Self(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        assert!(!d.is_empty(), "order must be positive");
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// Row-major construction; panics on asymmetric input. Intended for literals.
    pub fn from_row_slice(n: usize, data: &[f64]) -> Self {
        Self::new(DMatrix::from_row_slice(n, n, data)).expect("symmetric literal")
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Infinity norm (max absolute row sum).
    pub fn inf_norm(&self) -> f64 {
        inf_norm(&self.0)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self(&self.0 * a)
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        Self(&self.0 - &other.0)
    }

    /// `M + t·I`.
    pub fn shift(&self, t: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += t;
        }
        Self(m)
    }

    /// Congruence `Tᵀ M T`, symmetrized.
    pub fn congruence(&self, t: &DMatrix<f64>) -> Result<Self, MatError> {
        if t.nrows() != self.order() {
            return Err(MatError::DimensionMismatch(format!(
                "congruence with {}x{} on order {}",
                t.nrows(),
                t.ncols(),
                self.order()
            )));
        }
        Self::symmetrize(t.transpose() * &self.0 * t)
    }

    /// Quadratic form `vᵀ M v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.0 * v))
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<(), MatError> {
    if m.nrows() != m.ncols() {
        return Err(MatError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(MatError::Empty);
    }
    Ok(())
}

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Eigenvalues in ascending order.
pub fn eigenvalues(m: &SymMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.0.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &SymMatrix) -> f64 {
    if m.order() == 1 {
        return m.0[(0, 0)];
    }
    SymmetricEigen::new(m.0.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &SymMatrix) -> f64 {
    if m.order() == 1 {
        return m.0[(0, 0)];
    }
    SymmetricEigen::new(m.0.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `λ_min(M) > margin`.
pub fn is_positive_definite(m: &SymMatrix, margin: f64) -> bool {
    debug_assert!(margin >= 0.0);
    min_eigenvalue(m) > margin
}

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues within `1e-10·(1 + ‖M‖_∞)` below zero are clamped to zero.
pub fn sym_sqrt(m: &SymMatrix) -> Result<SymMatrix, MatError> {
    let tol = PSD_TOL * (1.0 + m.inf_norm());
    let eig = SymmetricEigen::new(m.0.clone());
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig < -tol {
        return Err(MatError::NotPsd { min_eig });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&roots) * v.transpose();
    SymMatrix::symmetrize(s)
}

/// Inverse of a symmetric positive definite matrix together with its
/// 2-norm condition number.
pub fn spd_inverse(m: &SymMatrix) -> Result<(SymMatrix, f64), MatError> {
    let eig = SymmetricEigen::new(m.0.clone());
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo <= 0.0 {
        return Err(MatError::NotPsd { min_eig: lo });
    }
    let inv_diag = eig.eigenvalues.map(|l| 1.0 / l);
    let v = &eig.eigenvectors;
    let inv = SymMatrix::symmetrize(v * DMatrix::from_diagonal(&inv_diag) * v.transpose())?;
    Ok((inv, hi / lo))
}

/// The block matrix `[[A, Bᵀ], [B, C]]` with `A` of order n, `C` of order m
/// and `B` of shape m×n.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSym2x2 {
    pub a: SymMatrix,
    pub b: DMatrix<f64>,
    pub c: SymMatrix,
}

impl BlockSym2x2 {
    pub fn new(a: SymMatrix, b: DMatrix<f64>, c: SymMatrix) -> Result<Self, MatError> {
        if b.nrows() != c.order() || b.ncols() != a.order() {
            return Err(MatError::DimensionMismatch(format!(
                "off-diagonal block {}x{} between orders {} and {}",
                b.nrows(),
                b.ncols(),
                a.order(),
                c.order()
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn assemble(&self) -> SymMatrix {
        let n = self.a.order();
        let m = self.c.order();
        let mut full = DMatrix::zeros(n + m, n + m);
        full.view_mut((0, 0), (n, n)).copy_from(self.a.as_matrix());
        full.view_mut((n, n), (m, m)).copy_from(self.c.as_matrix());
        full.view_mut((n, 0), (m, n)).copy_from(&self.b);
        full.view_mut((0, n), (n, m)).copy_from(&self.b.transpose());
        SymMatrix(full)
    }
}

/// Definiteness of a 2×2 block matrix via the Schur complement of `C`.
///
/// Decides `[[A, Bᵀ], [B, C]] ≻ margin·I` by shifting both diagonal blocks by
/// `margin` and testing `C' ≻ 0`, `A' − Bᵀ C'⁻¹ B ≻ 0`. When `C'` is singular
/// at working precision the assembled matrix is tested directly.
pub fn schur_psd(blk: &BlockSym2x2, margin: f64) -> bool {
    match schur_reduce(blk, margin) {
        Ok(ok) => ok,
        Err(_) => is_positive_definite_shifted(&blk.assemble(), margin),
    }
}

/// Renders `m` as `"rows cols: v v …"` (row-major, shortest round-trip digits).
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut s = format!("{} {}:", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            s.push(' ');
            s.push_str(&format!("{:?}", m[(i, j)]));
        }
    }
    s
}

/// Parses the [`format_matrix`] text form.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>, MatError> {
    let (dims, values) = text
        .split_once(':')
        .ok_or_else(|| MatError::Parse(format!("{text:?} lacks the \"rows cols:\" prefix")))?;
    let dims: Vec<usize> = dims
        .split_whitespace()
        .map(|d| d.parse::<usize>().map_err(|_| MatError::Parse(format!("bad dimension {d:?}"))))
        .collect::<Result<_, _>>()?;
    let [rows, cols] = dims[..] else {
        return Err(MatError::Parse(format!("expected two dimensions, got {}", dims.len())));
    };
    let values: Vec<f64> = values
        .split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|_| MatError::Parse(format!("bad value {v:?}"))))
        .collect::<Result<_, _>>()?;
    if values.len() != rows * cols {
        return Err(MatError::Parse(format!(
            "{rows}x{cols} matrix needs {} values, got {}",
            rows * cols,
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(MatError::Parse(format!("non-finite value {v}")));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn is_positive_definite_shifted(m: &SymMatrix, margin: f64) -> bool {
    min_eigenvalue(m) > margin
}

fn schur_reduce(blk: &BlockSym2x2, margin: f64) -> Result<bool, MatError> {
    let c = blk.c.shift(-margin);
    let c_eig = SymmetricEigen::new(c.0.clone());
    let lo = c_eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = c_eig.eigenvalues.iter().copied().fold(0.0_f64, |acc, l| acc.max(l.abs()));
    if lo.abs() <= 1e-12 * (1.0 + hi) {
        return Err(MatError::SingularBlock);
    }
    if lo < 0.0 {
        return Ok(false);
    }
    let inv_diag = c_eig.eigenvalues.map(|l| 1.0 / l);
    let v = &c_eig.eigenvectors;
    let c_inv = v * DMatrix::from_diagonal(&inv_diag) * v.transpose();
    let reduced = blk.a.shift(-margin).0 - blk.b.transpose() * c_inv * &blk.b;
    let reduced = SymMatrix::symmetrize(reduced)?;
    Ok(min_eigenvalue(&reduced) > 0.0)
}
