//! Full eigensystems with a fixed ordering and phase convention, and the
//! ground-state couplings that feed the adiabatic penalty.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fock::{Operator, StateVector};
use crate::model::{hamiltonian_matrix, DriveKind, DrivePoint};

/// Ground-state gaps below this are treated as exact degeneracies.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Eigenpairs sorted by ascending energy.
///
/// Each eigenvector is rotated so that its largest-magnitude amplitude is real
/// and positive (the lowest index wins ties).
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub energies: Vec<f64>,
    pub states: Vec<StateVector>,
    pub point: Option<DrivePoint>,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn ground(&self) -> &StateVector {
        &self.states[0]
    }
}

/// Ground-state couplings `L_n = ⟨φ_n|G|φ_0⟩`, `M_n = ⟨φ_n|a†a|φ_0⟩` and gaps
/// `E_n - E_0` for `n ≥ 1` (index 0 of each vector is `n = 1`).
#[derive(Debug, Clone)]
pub struct CouplingRow {
    pub l_vals: Vec<C64>,
    pub m_vals: Vec<C64>,
    pub gaps: Vec<f64>,
}

fn phase_fix_column(v: &mut [C64]) {
    let mut best = 0usize;
    let mut best_mag = -1.0f64;
    for (i, z) in v.iter().enumerate() {
        let m = z.norm();
        if m > best_mag * (1.0 + 1e-12) {
            best = i;
            best_mag = m;
        }
    }
    if best_mag > 0.0 {
        let ph = v[best].conj() / best_mag;
        for z in v.iter_mut() {
            *z *= ph;
        }
    }
}

/// Diagonalizes a Hermitian-flagged operator.
pub fn eigensystem(h: &Operator) -> Result<EigenSystem> {
    if !h.is_hermitian() {
        return Err(Error::NotHermitian(h.hermitian_deviation()));
    }
    if h.is_real() {
        let real = RealEigen::new(h.real_part());
        return Ok(real.into_eigensystem(None));
    }
    let dim = h.dim();
    let eig = SymmetricEigen::new(h.matrix().clone());
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let energies = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let states = order
        .iter()
        .map(|&i| {
            let mut col: Vec<C64> = eig.eigenvectors.column(i).iter().cloned().collect();
            phase_fix_column(&mut col);
            StateVector::new(DVector::from_vec(col)).expect("dim >= 2")
        })
        .collect();
    Ok(EigenSystem {
        energies,
        states,
        point: None,
    })
}

/// Eigensystem of the driven Kerr Hamiltonian at `pt`.
pub fn eigensystem_at(pt: DrivePoint, dim: usize, kind: DriveKind) -> Result<EigenSystem> {
    let pt = DrivePoint::new(pt.delta, pt.beta)?;
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    let real = RealEigen::new(hamiltonian_matrix(pt.delta, pt.beta, kind, dim));
    Ok(real.into_eigensystem(Some(pt)))
}

/// Computes the coupling row of the ground state under drive operator `kind`.
pub fn coupling_row(es: &EigenSystem, kind: DriveKind) -> Result<CouplingRow> {
    let dim = es.dim();
    let gap1 = es.energies[1] - es.energies[0];
    if gap1 < DEGENERACY_TOL {
        let (delta, drive) = es.point.map(|p| (p.delta, p.beta)).unwrap_or((f64::NAN, f64::NAN));
        return Err(Error::DegeneratePoint {
            delta,
            drive,
            gap: gap1,
        });
    }
    let g = kind.operator(dim)?;
    let num = crate::fock::number(dim)?;
    let g0 = g.apply(es.ground())?;
    let n0 = num.apply(es.ground())?;
    let mut row = CouplingRow {
        l_vals: Vec::with_capacity(dim - 1),
        m_vals: Vec::with_capacity(dim - 1),
        gaps: Vec::with_capacity(dim - 1),
    };
    for k in 1..dim {
        row.l_vals.push(es.states[k].inner(&g0)?);
        row.m_vals.push(es.states[k].inner(&n0)?);
        row.gaps.push(es.energies[k] - es.energies[0]);
    }
    Ok(row)
}

/// Real symmetric eigen-decomposition, sorted ascending with the phase
/// convention applied (sign only, since the vectors are real).
#[derive(Debug, Clone)]
pub(crate) struct RealEigen {
    pub energies: Vec<f64>,
    /// Columns are eigenvectors.
    pub vectors: DMatrix<f64>,
}

impl RealEigen {
    pub fn new(h: DMatrix<f64>) -> Self {
        let dim = h.nrows();
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let mut vectors = DMatrix::zeros(dim, dim);
        let mut energies = Vec::with_capacity(dim);
        for (dst, &src) in order.iter().enumerate() {
            energies.push(eig.eigenvalues[src]);
            let col = eig.eigenvectors.column(src);
            let mut best = 0usize;
            let mut best_mag = -1.0f64;
            for (i, x) in col.iter().enumerate() {
                if x.abs() > best_mag * (1.0 + 1e-12) {
                    best = i;
                    best_mag = x.abs();
                }
            }
            let sign = if col[best] < 0.0 { -1.0 } else { 1.0 };
            vectors.set_column(dst, &(col * sign));
        }
        Self { energies, vectors }
    }

    pub fn into_eigensystem(self, point: Option<DrivePoint>) -> EigenSystem {
        let states = self
            .vectors
            .column_iter()
            .map(|c| {
                StateVector::new(c.map(|x| C64::new(x, 0.0)).into_owned()).expect("dim >= 2")
            })
            .collect();
        EigenSystem {
            energies: self.energies,
            states,
            point,
        }
    }
}
