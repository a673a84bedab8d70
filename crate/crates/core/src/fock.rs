//! Dense linear algebra on a truncated Fock basis `|0⟩ … |dim-1⟩`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Elementwise tolerance below which an operator counts as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    Ok(())
}

fn max_hermitian_deviation(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Square complex matrix acting on the truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    mat: DMatrix<C64>,
    hermitian: bool,
}

impl Operator {
    /// Wraps a matrix. When `hermitian` is set the matrix is checked against
    /// [`HERMITIAN_TOL`].
    pub fn new(mat: DMatrix<C64>, hermitian: bool) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch {
                expected: mat.nrows(),
                got: mat.ncols(),
            });
        }
        check_dim(mat.nrows())?;
        if hermitian {
            let dev = max_hermitian_deviation(&mat);
            if dev > HERMITIAN_TOL {
                return Err(Error::NotHermitian(dev));
            }
        }
        Ok(Self { mat, hermitian })
    }

    pub fn from_real(mat: DMatrix<f64>, hermitian: bool) -> Result<Self> {
        Self::new(mat.map(|x| C64::new(x, 0.0)), hermitian)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            mat: DMatrix::identity(dim, dim),
            hermitian: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Largest elementwise deviation `|A - A†|`.
    pub fn hermitian_deviation(&self) -> f64 {
        max_hermitian_deviation(&self.mat)
    }

    /// True when every entry has zero imaginary part.
    pub fn is_real(&self) -> bool {
        self.mat.iter().all(|z| z.im == 0.0)
    }

    pub fn real_part(&self) -> DMatrix<f64> {
        self.mat.map(|z| z.re)
    }

    pub fn adjoint(&self) -> Self {
        Self {
            mat: self.mat.adjoint(),
            hermitian: self.hermitian,
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            mat: &self.mat * c,
            hermitian: self.hermitian && c.im == 0.0,
        }
    }

    pub fn add(&self, other: &Operator) -> Result<Self> {
        self.check_same(other.dim())?;
        Ok(Self {
            mat: &self.mat + &other.mat,
            hermitian: self.hermitian && other.hermitian,
        })
    }

    pub fn mul(&self, other: &Operator) -> Result<Self> {
        self.check_same(other.dim())?;
        Ok(Self {
            mat: &self.mat * &other.mat,
            hermitian: false,
        })
    }

    /// `[A, B] = AB - BA`.
    pub fn commutator(&self, other: &Operator) -> Result<Self> {
        self.check_same(other.dim())?;
        Ok(Self {
            mat: &self.mat * &other.mat - &other.mat * &self.mat,
            hermitian: false,
        })
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        self.check_same(psi.dim())?;
        Ok(StateVector {
            amps: &self.mat * &psi.amps,
        })
    }

    fn check_same(&self, dim: usize) -> Result<()> {
        if dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: dim,
            });
        }
        Ok(())
    }
}

/// Pure state amplitudes in the Fock basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: DVector<C64>,
}

impl StateVector {
    pub fn new(amps: DVector<C64>) -> Result<Self> {
        check_dim(amps.len())?;
        Ok(Self { amps })
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn into_amplitudes(self) -> DVector<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.amps.unscale_mut(n);
        }
        self
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(self.amps.dotc(&other.amps))
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amps.iter().map(|z| z.norm_sqr()).collect()
    }

    /// Population in the top 10% of basis indices (at least one level).
    pub fn tail_population(&self) -> f64 {
        tail_of(&self.populations())
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            mat: &self.amps * self.amps.adjoint(),
        }
    }
}

pub(crate) fn tail_of(pops: &[f64]) -> f64 {
    let dim = pops.len();
    let k = (dim / 10).max(1);
    pops[dim - k..].iter().sum()
}

/// Mixed state in the Fock basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: DMatrix<C64>,
}

impl DensityMatrix {
    /// Wraps a matrix without checking physicality; see [`DensityMatrix::validate`].
    pub fn new(mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch {
                expected: mat.nrows(),
                got: mat.ncols(),
            });
        }
        check_dim(mat.nrows())?;
        Ok(Self { mat })
    }

    pub fn pure(psi: &StateVector) -> Self {
        psi.to_density()
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            mat: DMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.mat[(n, n)].re).collect()
    }

    pub fn tail_population(&self) -> f64 {
        tail_of(&self.populations())
    }

    pub fn hermitian_deviation(&self) -> f64 {
        max_hermitian_deviation(&self.mat)
    }

    /// Smallest eigenvalue of the Hermitian part.
    ///
    /// The spectrum is computed for `ρ + c·1` with `c` the largest entry
    /// modulus: strongly graded matrices, such as states close to the vacuum,
    /// otherwise make the symmetric QR iteration return `-inf`.
    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.mat + self.mat.adjoint()) * C64::new(0.5, 0.0);
        let shift = herm.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let shifted = herm + DMatrix::identity(self.dim(), self.dim()) * C64::new(shift, 0.0);
        shifted
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            - shift
    }

    /// Checks Hermiticity (1e-10), unit trace (1e-8) and positivity (-1e-8).
    pub fn validate(&self) -> Result<()> {
        let dev = self.hermitian_deviation();
        if dev > 1e-10 {
            return Err(Error::NotHermitian(dev));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > 1e-8 {
            return Err(Error::Numerical(format!("density matrix trace {tr}")));
        }
        let lmin = self.min_eigenvalue();
        if lmin < -1e-8 {
            return Err(Error::Numerical(format!(
                "density matrix eigenvalue {lmin:e} below -1e-8"
            )));
        }
        Ok(())
    }
}

/// Anything with a well-defined `⟨A⟩`.
pub trait Expectation {
    fn expectation(&self, op: &Operator) -> Result<C64>;
}

impl Expectation for StateVector {
    fn expectation(&self, op: &Operator) -> Result<C64> {
        let a_psi = op.apply(self)?;
        Ok(self.amps.dotc(&a_psi.amps))
    }
}

impl Expectation for DensityMatrix {
    /// `Tr(A ρ)`.
    fn expectation(&self, op: &Operator) -> Result<C64> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: op.dim(),
                got: self.dim(),
            });
        }
        let a = op.matrix();
        let mut acc = ZERO;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                acc += a[(i, j)] * self.mat[(j, i)];
            }
        }
        Ok(acc)
    }
}

pub fn expectation<S: Expectation + ?Sized>(op: &Operator, state: &S) -> Result<C64> {
    state.expectation(op)
}

/// Annihilation operator: `a|n⟩ = √n |n-1⟩`.
pub fn annihilation(dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    let mut m = DMatrix::from_element(dim, dim, ZERO);
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(Operator {
        mat: m,
        hermitian: false,
    })
}

pub fn creation(dim: usize) -> Result<Operator> {
    Ok(annihilation(dim)?.adjoint_unflagged())
}

impl Operator {
    fn adjoint_unflagged(&self) -> Self {
        Self {
            mat: self.mat.adjoint(),
            hermitian: false,
        }
    }
}

/// Number operator `a†a`.
pub fn number(dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    let diag = DVector::from_fn(dim, |n, _| C64::new(n as f64, 0.0));
    Ok(Operator {
        mat: DMatrix::from_diagonal(&diag),
        hermitian: true,
    })
}

/// Quadrature `a + a†`, the derivative of the linear drive term.
pub fn quadrature(dim: usize) -> Result<Operator> {
    let a = annihilation(dim)?;
    Ok(Operator {
        mat: a.matrix() + a.matrix().adjoint(),
        hermitian: true,
    })
}

/// `(a†² + a²)/2`, the derivative of the two-photon drive term.
pub fn two_photon(dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    let mut m = DMatrix::from_element(dim, dim, ZERO);
    for n in 2..dim {
        let v = C64::new(0.5 * ((n * (n - 1)) as f64).sqrt(), 0.0);
        m[(n - 2, n)] = v;
        m[(n, n - 2)] = v;
    }
    Ok(Operator {
        mat: m,
        hermitian: true,
    })
}

/// Parity `diag((-1)^n)`.
pub fn parity(dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    let diag = DVector::from_fn(dim, |n, _| {
        C64::new(if n % 2 == 0 { 1.0 } else { -1.0 }, 0.0)
    });
    Ok(Operator {
        mat: DMatrix::from_diagonal(&diag),
        hermitian: true,
    })
}

/// Displacement `D(α) = exp(α a† - α* a)` on the truncated space, via the
/// scaling-and-squaring matrix exponential of the anti-Hermitian generator.
pub fn displacement(alpha: C64, dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    if alpha == ZERO {
        return Operator::identity(dim).map(|mut op| {
            op.hermitian = false;
            op
        });
    }
    if alpha.norm_sqr() > dim as f64 / 4.0 {
        log::warn!(
            "displacement |alpha|^2 = {:.3} exceeds dim/4 = {:.3}; truncation error likely",
            alpha.norm_sqr(),
            dim as f64 / 4.0
        );
    }
    let a = annihilation(dim)?.into_matrix();
    let generator = a.adjoint() * alpha - a * alpha.conj();
    Ok(Operator {
        mat: generator.exp(),
        hermitian: false,
    })
}

pub fn fock_state(n: usize, dim: usize) -> Result<StateVector> {
    check_dim(dim)?;
    if n >= dim {
        return Err(Error::IndexOutOfRange { index: n, dim });
    }
    let mut amps = DVector::from_element(dim, ZERO);
    amps[n] = ONE;
    Ok(StateVector { amps })
}

/// `D(α)|n⟩`, renormalized against truncation loss.
pub fn displaced_fock(alpha: C64, n: usize, dim: usize) -> Result<StateVector> {
    let base = fock_state(n, dim)?;
    if alpha == ZERO {
        return Ok(base);
    }
    Ok(displacement(alpha, dim)?.apply(&base)?.normalized())
}

pub fn coherent_state(alpha: C64, dim: usize) -> Result<StateVector> {
    displaced_fock(alpha, 0, dim)
}

/// Default truncation: `max(4 n + 20, ceil(4 |α_max|²) + 20)`.
pub fn truncation_dim(n_target: usize, alpha_max: f64) -> usize {
    let by_target = 4 * n_target + 20;
    let by_alpha = (4.0 * alpha_max * alpha_max).ceil() as usize + 20;
    by_target.max(by_alpha)
}
