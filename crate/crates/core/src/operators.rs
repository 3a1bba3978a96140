//! Truncated bosonic ladders, the symmetric Dicke ladder and its
//! Holstein-Primakoff form.
//!
//! Every basis is an occupation-number basis with index 0 the vacuum (or the
//! collective ground state). Ladders are hard-truncated at their cutoff, so
//! bosonic identities such as `[a, a†] = 1` hold only on the interior rows and
//! columns; the top level is a truncation artifact.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest total dimension accepted by [`tensor_product`].
pub const DEFAULT_MAX_DIM: usize = 4096;

/// A single bosonic mode truncated at `cutoff` quanta.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockSpace {
    cutoff: usize,
}

impl FockSpace {
    pub fn new(cutoff: usize) -> Result<Self> {
        if cutoff < 2 {
            return Err(Error::InvalidCutoff(cutoff));
        }
        Ok(Self { cutoff })
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.cutoff + 1
    }
}

/// Dense complex matrix acting on a finite basis, entry `(r, c)` = `<r|O|c>`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    matrix: DMatrix<C64>,
}

impl LinearOperator {
    /// Wraps a square matrix.
    pub fn from_matrix(matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        Ok(Self { matrix })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { matrix: DMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: DMatrix::identity(dim, dim) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        Self { matrix: m }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self { matrix: self.matrix.adjoint() }
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self { matrix: &self.matrix * factor }
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(C64::new(factor, 0.0))
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// `[self, other] = self·other − other·self`.
    pub fn commutator(&self, other: &Self) -> Self {
        Self {
            matrix: &self.matrix * &other.matrix - &other.matrix * &self.matrix,
        }
    }

    pub fn apply(&self, state: &DVector<C64>) -> Result<DVector<C64>> {
        if state.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: state.len(),
            });
        }
        Ok(&self.matrix * state)
    }

    /// Largest entrywise modulus of `self − other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        max_abs_diff(&self.matrix, &other.matrix)
    }

    /// Largest entrywise modulus of `self − self†`.
    pub fn hermiticity_residual(&self) -> f64 {
        max_abs_diff(&self.matrix, &self.matrix.adjoint())
    }

    pub fn powi(&self, exp: u32) -> Self {
        let mut out = Self::identity(self.dim());
        for _ in 0..exp {
            out = &out * self;
        }
        out
    }
}

pub(crate) fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

impl<'a> Mul<&'a LinearOperator> for &'a LinearOperator {
    type Output = LinearOperator;
    fn mul(self, rhs: &'a LinearOperator) -> LinearOperator {
        LinearOperator { matrix: &self.matrix * &rhs.matrix }
    }
}

impl<'a> Add<&'a LinearOperator> for &'a LinearOperator {
    type Output = LinearOperator;
    fn add(self, rhs: &'a LinearOperator) -> LinearOperator {
        LinearOperator { matrix: &self.matrix + &rhs.matrix }
    }
}

impl<'a> Sub<&'a LinearOperator> for &'a LinearOperator {
    type Output = LinearOperator;
    fn sub(self, rhs: &'a LinearOperator) -> LinearOperator {
        LinearOperator { matrix: &self.matrix - &rhs.matrix }
    }
}

impl Neg for &LinearOperator {
    type Output = LinearOperator;
    fn neg(self) -> LinearOperator {
        LinearOperator { matrix: -&self.matrix }
    }
}

/// Bosonic lowering operator, `a[n-1][n] = √n`.
pub fn annihilation(space: &FockSpace) -> LinearOperator {
    let dim = space.dim();
    let mut m = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    LinearOperator { matrix: m }
}

pub fn creation(space: &FockSpace) -> LinearOperator {
    annihilation(space).adjoint()
}

/// `a†a`, exact on the truncated space.
pub fn number(space: &FockSpace) -> LinearOperator {
    let diag: Vec<f64> = (0..space.dim()).map(|n| n as f64).collect();
    LinearOperator::from_diagonal(&diag)
}

/// Symmetric (Dicke) states `|l>` of `n` two-level particles, kept up to `l_max`
/// excitations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DickeBasis {
    n: usize,
    l_max: usize,
}

impl DickeBasis {
    pub fn new(n: usize, l_max: usize) -> Result<Self> {
        if n < 1 || l_max > n {
            return Err(Error::InvalidDickeBasis { n, l_max });
        }
        Ok(Self { n, l_max })
    }

    /// The complete ladder, `l_max = N`.
    pub fn full(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn particles(&self) -> usize {
        self.n
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn dim(&self) -> usize {
        self.l_max + 1
    }
}

fn check_excitation(n: usize, l: usize) -> Result<()> {
    if l > n {
        Err(Error::ExcitationOutOfRange { n, l })
    } else {
        Ok(())
    }
}

/// `<l+1|σ+|l> = √(l+1)·√(N−l)`.
pub fn sigma_plus_coef(n: usize, l: usize) -> Result<f64> {
    check_excitation(n, l)?;
    Ok(((l + 1) as f64).sqrt() * ((n - l) as f64).sqrt())
}

/// `<l−1|σ−|l> = √(N−l+1)·√l`.
pub fn sigma_minus_coef(n: usize, l: usize) -> Result<f64> {
    check_excitation(n, l)?;
    Ok(((n + 1 - l) as f64).sqrt() * (l as f64).sqrt())
}

/// `A_s = √(1 − S+S−/N)` on the Dicke ladder.
pub fn hp_amplitude(basis: &DickeBasis) -> LinearOperator {
    let n = basis.particles() as f64;
    let diag: Vec<f64> = (0..basis.dim())
        .map(|l| (1.0 - l as f64 / n).max(0.0).sqrt())
        .collect();
    LinearOperator::from_diagonal(&diag)
}

/// Bosonic `S+`, `S−` on the Dicke ladder, cut at `l_max`.
fn ladder_pair(dim: usize) -> (LinearOperator, LinearOperator) {
    let mut lower = DMatrix::zeros(dim, dim);
    for l in 1..dim {
        lower[(l - 1, l)] = C64::new((l as f64).sqrt(), 0.0);
    }
    let lower = LinearOperator { matrix: lower };
    (lower.adjoint(), lower)
}

/// Holstein-Primakoff collective operators `(σ+, σ−)` built as
/// `σ+ = √N S+ A_s` and `σ− = √N A_s S−`.
pub fn hp_sigma_operators(basis: &DickeBasis) -> (LinearOperator, LinearOperator) {
    let sqrt_n = (basis.particles() as f64).sqrt();
    let (s_plus, s_minus) = ladder_pair(basis.dim());
    let amp = hp_amplitude(basis);
    let sigma_plus = (&s_plus * &amp).scale_real(sqrt_n);
    let sigma_minus = (&amp * &s_minus).scale_real(sqrt_n);
    (sigma_plus, sigma_minus)
}

/// `σ_3` on the Dicke ladder, diagonal entries `l − N/2`.
pub fn sigma_z(basis: &DickeBasis) -> LinearOperator {
    let half_n = basis.particles() as f64 / 2.0;
    let diag: Vec<f64> = (0..basis.dim()).map(|l| l as f64 - half_n).collect();
    LinearOperator::from_diagonal(&diag)
}

/// Relative deviation of the exact collective raising coefficient from its
/// contracted value `√N·√(l+1)`, i.e. `1 − √(1 − l/N)`.
pub fn contraction_error(n: usize, l: usize) -> Result<f64> {
    if n == 0 || l >= n {
        return Err(Error::ExcitationOutOfRange { n, l });
    }
    let exact = sigma_plus_coef(n, l)?;
    let contracted = (n as f64).sqrt() * ((l + 1) as f64).sqrt();
    Ok((exact - contracted).abs() / contracted)
}

/// Kronecker product `a ⊗ b`, limited to [`DEFAULT_MAX_DIM`].
pub fn tensor_product(a: &LinearOperator, b: &LinearOperator) -> Result<LinearOperator> {
    tensor_product_bounded(a, b, DEFAULT_MAX_DIM)
}

pub fn tensor_product_bounded(
    a: &LinearOperator,
    b: &LinearOperator,
    max_dim: usize,
) -> Result<LinearOperator> {
    let dim = a
        .dim()
        .checked_mul(b.dim())
        .ok_or(Error::DimensionOverflow { dim: usize::MAX, limit: max_dim })?;
    if dim > max_dim {
        return Err(Error::DimensionOverflow { dim, limit: max_dim });
    }
    Ok(LinearOperator { matrix: a.matrix.kronecker(&b.matrix) })
}
