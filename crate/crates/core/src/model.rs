//! Driven Kerr-cavity Hamiltonians in the rotating frame, with the Kerr
//! coefficient fixed to one.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, Operator};

/// A point `(Δ, β)` in drive-parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivePoint {
    pub delta: f64,
    pub beta: f64,
}

impl DrivePoint {
    /// Rejects negative or non-finite drives.
    pub fn new(delta: f64, beta: f64) -> Result<Self> {
        if !delta.is_finite() || !beta.is_finite() {
            return Err(Error::param(format!("non-finite drive point ({delta}, {beta})")));
        }
        if beta < 0.0 {
            return Err(Error::param(format!("drive strength must be >= 0, got {beta}")));
        }
        Ok(Self { delta, beta })
    }

    pub fn distance(&self, other: &DrivePoint) -> f64 {
        (self.delta - other.delta).hypot(self.beta - other.beta)
    }

    pub fn lerp(&self, other: &DrivePoint, w: f64) -> DrivePoint {
        DrivePoint {
            delta: self.delta + w * (other.delta - self.delta),
            beta: self.beta + w * (other.beta - self.beta),
        }
    }
}

/// A point `(Δ, p)` for the two-photon (Kerr parametric oscillator) drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpoPoint {
    pub delta: f64,
    pub p: f64,
}

impl KpoPoint {
    pub fn new(delta: f64, p: f64) -> Result<Self> {
        if !delta.is_finite() || !p.is_finite() {
            return Err(Error::param(format!("non-finite KPO point ({delta}, {p})")));
        }
        if p < 0.0 {
            return Err(Error::param(format!("two-photon drive must be >= 0, got {p}")));
        }
        Ok(Self { delta, p })
    }
}

/// Which drive term multiplies the drive amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveKind {
    /// `β (a + a†)`
    #[default]
    Linear,
    /// `p (a†² + a²) / 2`
    TwoPhoton,
}

impl DriveKind {
    /// Band offset of the drive operator in the Fock basis.
    pub fn offset(self) -> usize {
        match self {
            DriveKind::Linear => 1,
            DriveKind::TwoPhoton => 2,
        }
    }

    /// Matrix element `⟨n-offset| G |n⟩` of the drive operator `G`.
    pub fn coupling(self, n: usize) -> f64 {
        match self {
            DriveKind::Linear => (n as f64).sqrt(),
            DriveKind::TwoPhoton => 0.5 * ((n * (n - 1)) as f64).sqrt(),
        }
    }

    /// Drive operator `G` (the derivative of `H` with respect to the amplitude).
    pub fn operator(self, dim: usize) -> Result<Operator> {
        match self {
            DriveKind::Linear => fock::quadrature(dim),
            DriveKind::TwoPhoton => fock::two_photon(dim),
        }
    }
}

/// Undriven level energy `n(n-1)/2 + nΔ`.
pub fn fock_energy(n: usize, delta: f64) -> f64 {
    let nf = n as f64;
    0.5 * nf * (nf - 1.0) + nf * delta
}

/// Real symmetric Hamiltonian matrix for any signed drive amplitude.
/// Used directly by the hot loops; the public constructors wrap it.
pub fn hamiltonian_matrix(delta: f64, amplitude: f64, kind: DriveKind, dim: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(dim, dim);
    fill_hamiltonian(&mut h, delta, amplitude, kind);
    h
}

pub(crate) fn fill_hamiltonian(h: &mut DMatrix<f64>, delta: f64, amplitude: f64, kind: DriveKind) {
    let dim = h.nrows();
    h.fill(0.0);
    for n in 0..dim {
        h[(n, n)] = fock_energy(n, delta);
    }
    let off = kind.offset();
    for n in off..dim {
        let v = amplitude * kind.coupling(n);
        h[(n - off, n)] = v;
        h[(n, n - off)] = v;
    }
}

/// `H = ½ a†²a² + Δ a†a + β (a + a†)`.
pub fn kerr_hamiltonian(pt: DrivePoint, dim: usize) -> Result<Operator> {
    let pt = DrivePoint::new(pt.delta, pt.beta)?;
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    Operator::from_real(hamiltonian_matrix(pt.delta, pt.beta, DriveKind::Linear, dim), true)
}

/// `H = ½ a†²a² + Δ a†a + (p/2)(a†² + a²)`.
pub fn kpo_hamiltonian(pt: KpoPoint, dim: usize) -> Result<Operator> {
    let pt = KpoPoint::new(pt.delta, pt.p)?;
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    Operator::from_real(hamiltonian_matrix(pt.delta, pt.p, DriveKind::TwoPhoton, dim), true)
}

/// `Δ_l = -(l-1)/2`, where `|n⟩` and `|m⟩` with `n + m = l` are degenerate at zero drive.
pub fn crossing_detuning(l: usize) -> Result<f64> {
    if l < 1 {
        return Err(Error::param("crossing index must be >= 1"));
    }
    Ok(-((l - 1) as f64) / 2.0)
}

/// Midpoint of the interval `(Δ_{2n+1}, Δ_{2n-1})` on which `|n⟩` is the
/// undriven ground state.
pub fn final_detuning(n: usize) -> f64 {
    -(n as f64) + 0.5
}

/// Detunings `Δ_1, Δ_3, …, Δ_{2n-1}` that the drive must be on to cross.
pub fn odd_crossings(n: usize) -> Vec<f64> {
    (1..=n).map(|k| -((k - 1) as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::eigensystem;
    use approx::assert_abs_diff_eq;

    #[test]
    fn undriven_diagonal() {
        let h = kerr_hamiltonian(DrivePoint::new(0.0, 0.0).unwrap(), 5).unwrap();
        let want = [0.0, 0.0, 1.0, 3.0, 6.0];
        for i in 0..5 {
            for j in 0..5 {
                let v = h.matrix()[(i, j)].re;
                assert_eq!(v, if i == j { want[i] } else { 0.0 });
            }
        }
    }

    #[test]
    fn degeneracy_at_delta_3() {
        let d3 = crossing_detuning(3).unwrap();
        assert_eq!(d3, -1.0);
        assert_eq!(fock_energy(1, d3), -1.0);
        assert_eq!(fock_energy(2, d3), -1.0);
    }

    #[test]
    fn drive_matrix_element() {
        let h = kerr_hamiltonian(DrivePoint::new(0.0, 0.2).unwrap(), 6).unwrap();
        assert_eq!(h.matrix()[(0, 1)].re, 0.2);
        assert!(h.is_hermitian());
    }

    #[test]
    fn kpo_elements() {
        let h0 = kpo_hamiltonian(KpoPoint::new(0.0, 0.0).unwrap(), 6).unwrap();
        let k0 = kerr_hamiltonian(DrivePoint::new(0.0, 0.0).unwrap(), 6).unwrap();
        assert_eq!(h0, k0);
        let h = kpo_hamiltonian(KpoPoint::new(0.0, 0.1).unwrap(), 6).unwrap();
        assert_abs_diff_eq!(h.matrix()[(0, 2)].re, 0.1 * 2f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            h.matrix()[(1, 3)].re,
            0.05 * 6f64.sqrt(),
            epsilon = 1e-15
        );
        // |0⟩ and |2⟩ are degenerate at Δ = -1/2.
        assert_eq!(fock_energy(0, -0.5), fock_energy(2, -0.5));
    }

    #[test]
    fn crossing_values() {
        assert_eq!(crossing_detuning(1).unwrap(), 0.0);
        assert_eq!(crossing_detuning(9).unwrap(), -4.0);
        assert_eq!(crossing_detuning(11).unwrap(), -5.0);
        assert!(crossing_detuning(0).is_err());
        assert_eq!(final_detuning(5), -4.5);
        assert_eq!(final_detuning(1), -0.5);
        let d7 = crossing_detuning(7).unwrap();
        assert_eq!(fock_energy(3, d7), fock_energy(4, d7));
    }

    #[test]
    fn negative_drive_rejected() {
        assert!(DrivePoint::new(0.0, -0.1).is_err());
        assert!(KpoPoint::new(0.0, -0.1).is_err());
        assert!(kerr_hamiltonian(DrivePoint { delta: 0.0, beta: -1.0 }, 4).is_err());
    }

    #[test]
    fn spectrum_is_even_in_drive() {
        let dim = 30;
        for &(d, b) in &[(1.0, 0.3), (-2.3, 0.7), (10.0, 5.0), (-4.5, 0.01)] {
            let plus = hamiltonian_matrix(d, b, DriveKind::Linear, dim).symmetric_eigenvalues();
            let minus = hamiltonian_matrix(d, -b, DriveKind::Linear, dim).symmetric_eigenvalues();
            let mut p: Vec<f64> = plus.iter().cloned().collect();
            let mut m: Vec<f64> = minus.iter().cloned().collect();
            p.sort_by(f64::total_cmp);
            m.sort_by(f64::total_cmp);
            for (x, y) in p.iter().zip(&m) {
                assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn undriven_spectrum_matches_closed_form() {
        for &d in &[-3.7, -0.2, 0.0, 2.5] {
            let es = eigensystem(&kerr_hamiltonian(DrivePoint::new(d, 0.0).unwrap(), 12).unwrap()).unwrap();
            let mut want: Vec<f64> = (0..12).map(|n| fock_energy(n, d)).collect();
            want.sort_by(f64::total_cmp);
            for (e, w) in es.energies.iter().zip(&want) {
                assert_abs_diff_eq!(*e, *w, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn first_order_gap_slope() {
        // Degenerate perturbation theory on the {|n⟩, |n+1⟩} block:
        // splitting = 2 β √(n+1).
        let beta = 1e-3;
        for n in 0..5 {
            let d = crossing_detuning(2 * n + 1).unwrap();
            let es = eigensystem(&kerr_hamiltonian(DrivePoint::new(d, beta).unwrap(), 30).unwrap()).unwrap();
            let gap = es.energies[1] - es.energies[0];
            let want = 2.0 * ((n + 1) as f64).sqrt();
            assert!(((gap / beta) - want).abs() / want < 0.02, "n={n}: {}", gap / beta);
        }
    }

    #[test]
    fn kpo_gap_linear_in_p() {
        let p = 1e-3;
        let es = eigensystem(&kpo_hamiltonian(KpoPoint::new(-0.5, p).unwrap(), 30).unwrap()).unwrap();
        // |1⟩ sits below the |0⟩/|2⟩ pair at Δ = -1/2.
        // Second-order shift from |3⟩ is O(p²).
        assert_abs_diff_eq!(es.energies[0], -0.5, epsilon = 1e-5);
        let gap = es.energies[2] - es.energies[1];
        assert!((gap / p - 2f64.sqrt()).abs() / 2f64.sqrt() < 0.02);
    }
}
