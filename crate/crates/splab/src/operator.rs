//! Dense symmetric-operator algebra in a fixed orthonormal basis:
//! eigendecompositions, spectral projectors, Schatten norms and
//! Hilbert-Schmidt geometry.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A real symmetric `d x d` operator. Symmetry is exact by construction:
/// every constructor either mirrors entries or checks them.
#[derive(Debug, Clone, PartialEq)]
pub struct SymOperator {
    mat: DMatrix<f64>,
}

impl SymOperator {
    /// Wrap a square matrix, requiring exact symmetry and finite entries.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(Error::invalid(format!(
                "expected a nonempty square matrix, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        for i in 0..mat.nrows() {
            for j in 0..mat.ncols() {
                let v = mat[(i, j)];
                if !v.is_finite() {
                    return Err(Error::invalid(format!("non-finite entry at ({i},{j})")));
                }
                if v != mat[(j, i)] {
                    return Err(Error::invalid(format!("asymmetric entry at ({i},{j})")));
                }
            }
        }
        Ok(Self { mat })
    }

    /// Exactly-symmetric average `(m + m^T)/2` of a nearly symmetric matrix.
    pub fn symmetrized(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::invalid("expected a nonempty square matrix"));
        }
        let d = m.nrows();
        let mat = DMatrix::from_fn(d, d, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
        Self::new(mat)
    }

    /// Build from a function of `(i, j)`, evaluated once per unordered pair.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut mat = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                mat[(i, j)] = v;
                mat[(j, i)] = v;
            }
        }
        Self::new(mat)
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: DMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut mat = DMatrix::zeros(d, d);
        for (i, &v) in diag.iter().enumerate() {
            mat[(i, i)] = v;
        }
        Self { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { mat: &self.mat * c }
    }

    /// Entrywise difference `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch(self.dim(), other.dim()));
        }
        Ok(Self {
            mat: &self.mat - &other.mat,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch(self.dim(), other.dim()));
        }
        Ok(Self {
            mat: &self.mat + &other.mat,
        })
    }

    /// Frobenius (Hilbert-Schmidt) norm computed entrywise.
    pub fn frobenius(&self) -> f64 {
        self.mat.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.mat.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Eigendecomposition of a symmetric operator with a fixed convention:
/// eigenvalues sorted non-increasing, each eigenvector's first nonzero
/// coordinate positive.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvalues in non-increasing order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns, aligned with `eigenvalues`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }
}

/// Symmetric eigendecomposition with deterministic ordering and signs.
pub fn eigh(op: &SymOperator) -> EigenSystem {
    let d = op.dim();
    let se = op.mat.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    // Descending eigenvalues; ties broken by the solver's column index so the
    // result is a pure function of the input bits.
    order.sort_by(|&a, &b| {
        se.eigenvalues[b]
            .partial_cmp(&se.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut eigenvalues = Vec::with_capacity(d);
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (col, &idx) in order.iter().enumerate() {
        eigenvalues.push(se.eigenvalues[idx]);
        let mut v = se.eigenvectors.column(idx).clone_owned();
        if let Some(first) = v.iter().find(|x| **x != 0.0) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        eigenvectors.set_column(col, &v);
    }
    EigenSystem {
        eigenvalues,
        eigenvectors,
    }
}

/// A contiguous 1-based index interval `{j1, ..., j2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexBlock {
    j1: usize,
    j2: usize,
}

impl IndexBlock {
    pub fn new(j1: usize, j2: usize) -> Result<Self> {
        if j1 == 0 || j2 < j1 {
            return Err(Error::invalid(format!(
                "index block requires 1 <= j1 <= j2, got ({j1},{j2})"
            )));
        }
        Ok(Self { j1, j2 })
    }

    /// Single index `{j}`.
    pub fn single(j: usize) -> Result<Self> {
        Self::new(j, j)
    }

    /// Leading block `{1, ..., j2}`.
    pub fn leading(j2: usize) -> Result<Self> {
        Self::new(1, j2)
    }

    pub fn j1(&self) -> usize {
        self.j1
    }

    pub fn j2(&self) -> usize {
        self.j2
    }

    pub fn len(&self) -> usize {
        self.j2 - self.j1 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, j: usize) -> bool {
        self.j1 <= j && j <= self.j2
    }

    /// Check the block fits inside dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.j2 > d {
            return Err(Error::invalid(format!(
                "index block ({},{}) exceeds dimension {d}",
                self.j1, self.j2
            )));
        }
        Ok(())
    }

    pub fn is_full(&self, d: usize) -> bool {
        self.j1 == 1 && self.j2 == d
    }

    /// 0-based indices inside the block.
    pub fn indices0(&self) -> std::ops::Range<usize> {
        (self.j1 - 1)..self.j2
    }

    /// 0-based indices of the complement in `{1, ..., d}`.
    pub fn complement0(&self, d: usize) -> impl Iterator<Item = usize> + '_ {
        let j1 = self.j1;
        let j2 = self.j2;
        (0..d).filter(move |&k| k + 1 < j1 || k + 1 > j2)
    }

    pub fn complement_len(&self, d: usize) -> usize {
        d - self.len()
    }

    /// The complement as an interval, when it is one: `j1 == 1` or `j2 == d`.
    pub fn complement_block(&self, d: usize) -> Option<IndexBlock> {
        if self.is_full(d) {
            None
        } else if self.j1 == 1 {
            Some(IndexBlock {
                j1: self.j2 + 1,
                j2: d,
            })
        } else if self.j2 == d {
            Some(IndexBlock {
                j1: 1,
                j2: self.j1 - 1,
            })
        } else {
            None
        }
    }

    pub fn min_side(&self, d: usize) -> usize {
        self.len().min(self.complement_len(d))
    }
}

impl std::fmt::Display for IndexBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{{}..{}}}", self.j1, self.j2)
    }
}

/// Spectral projector onto the eigenspaces with indices in `block`.
pub fn projector(es: &EigenSystem, block: IndexBlock) -> Result<SymOperator> {
    block.validate(es.dim())?;
    let d = es.dim();
    let mut mat = DMatrix::zeros(d, d);
    for j in block.indices0() {
        let v = es.eigenvectors.column(j);
        // v v^T is exactly symmetric entry by entry.
        for a in 0..d {
            for b in 0..d {
                mat[(a, b)] += v[a] * v[b];
            }
        }
    }
    SymOperator::new(mat)
}

/// Schatten exponents supported by [`schatten_norm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schatten {
    One,
    Two,
    Three,
    Inf,
}

/// Schatten q-norm via the eigenvalues of a symmetric operator.
pub fn schatten_norm(op: &SymOperator, q: Schatten) -> f64 {
    let es = eigh(op);
    let abs = es.eigenvalues().iter().map(|v| v.abs());
    match q {
        Schatten::One => abs.sum(),
        Schatten::Two => abs.map(|v| v * v).sum::<f64>().sqrt(),
        Schatten::Three => abs.map(|v| v * v * v).sum::<f64>().cbrt(),
        Schatten::Inf => abs.fold(0.0_f64, f64::max),
    }
}

/// Operator norm (largest absolute eigenvalue).
pub fn operator_norm(op: &SymOperator) -> f64 {
    schatten_norm(op, Schatten::Inf)
}

/// Squared Hilbert-Schmidt distance between two operators of equal dimension.
pub fn hs_distance_sq(a: &SymOperator, b: &SymOperator) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch(a.dim(), b.dim()));
    }
    let mut acc = 0.0;
    for i in 0..a.dim() {
        for j in 0..a.dim() {
            let diff = a.entry(i, j) - b.entry(i, j);
            acc += diff * diff;
        }
    }
    Ok(acc)
}
