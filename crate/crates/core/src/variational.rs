//! Variational ansatz quantities: coherent and displaced-Fock amplitudes,
//! the straight-line drive descent, and the vertical-approach penalty near
//! the detuning axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real root of `α³ + c₁ α + β = 0` together with its residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnsatzResult {
    pub alpha: f64,
    pub residual: f64,
}

/// Optimal terminal offset `δ*` measured from the middle of the final
/// crossing-free interval, and the vertical penalty there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionCGeometry {
    pub n: usize,
    pub delta_star: f64,
    pub q_beta_min: f64,
}

/// All real roots of the depressed cubic `x³ + p x + q`, ascending.
fn depressed_cubic_roots(p: f64, q: f64) -> Vec<f64> {
    if p == 0.0 {
        return vec![-q.cbrt()];
    }
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut roots = if disc > 0.0 {
        // One real root; pick the cancellation-free Cardano branch.
        let sq = disc.sqrt();
        let a = -(q.signum()) * (q.abs() / 2.0 + sq).cbrt();
        let b = if a != 0.0 { -p / (3.0 * a) } else { 0.0 };
        vec![a + b]
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = ((3.0 * q) / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
            .collect()
    };
    for r in roots.iter_mut() {
        *r = newton_polish(*r, p, q);
    }
    roots.sort_by(f64::total_cmp);
    roots
}

fn newton_polish(mut x: f64, p: f64, q: f64) -> f64 {
    for _ in 0..8 {
        let f = x * x * x + p * x + q;
        let df = 3.0 * x * x + p;
        if df == 0.0 || f == 0.0 {
            break;
        }
        let step = f / df;
        let next = x - step;
        if !next.is_finite() {
            break;
        }
        // Only accept steps that do not worsen the residual.
        let fn_ = next * next * next + p * next + q;
        if fn_.abs() > f.abs() {
            break;
        }
        x = next;
    }
    x
}

fn residual(alpha: f64, c1: f64, beta: f64) -> f64 {
    alpha * alpha * alpha + c1 * alpha + beta
}

/// Coherent-state ansatz `D(α₀)|0⟩`: the real root of `α³ + Δα + β = 0`.
///
/// For `β > 0` this is the most negative root, which is the branch continuous
/// in `Δ` from the single-root regime `Δ > 0`. At `β = 0` the `β → 0⁺` limit
/// of that branch is returned.
pub fn coherent_alpha(delta: f64, beta: f64) -> AnsatzResult {
    let alpha = if beta == 0.0 {
        -(-delta).max(0.0).sqrt()
    } else {
        depressed_cubic_roots(delta, beta)[0]
    };
    AnsatzResult {
        alpha,
        residual: residual(alpha, delta, beta),
    }
}

/// Displaced-Fock ansatz `D(α_n)|n⟩`: the real root of
/// `α³ + (Δ + 2n) α + β = 0` that tends to zero with the drive.
///
/// `n = 0` is identical to [`coherent_alpha`].
pub fn displaced_alpha(n: usize, delta: f64, beta: f64) -> AnsatzResult {
    if n == 0 {
        return coherent_alpha(delta, beta);
    }
    let c1 = delta + 2.0 * n as f64;
    let alpha = if beta == 0.0 {
        0.0
    } else {
        depressed_cubic_roots(c1, beta)
            .into_iter()
            .min_by(|a, b| a.abs().total_cmp(&b.abs()))
            .expect("a real cubic has a real root")
    };
    AnsatzResult {
        alpha,
        residual: residual(alpha, c1, beta),
    }
}

/// Straight-line drive `β = √(-Δ_f) (Δ - Δ_f)` through the terminal point.
pub fn region_b_beta(delta: f64, delta_f: f64) -> Result<f64> {
    if delta_f >= 0.0 {
        return Err(Error::param(format!("terminal detuning must be negative, got {delta_f}")));
    }
    if delta < delta_f {
        return Err(Error::param(format!("detuning {delta} below terminal {delta_f}")));
    }
    Ok((-delta_f).sqrt() * (delta - delta_f))
}

/// Leading-order vertical penalty at offset `δ` from the middle of the
/// interval on which `|n⟩` is the ground state:
/// `√(n+1)/(½+δ)² + √n/(½-δ)²`.
pub fn q_beta_analytic(n: usize, delta_offset: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::param("target photon number must be >= 1"));
    }
    if !(delta_offset.abs() < 0.5) {
        return Err(Error::param(format!(
            "offset {delta_offset} reaches an adjacent crossing"
        )));
    }
    let nf = n as f64;
    Ok((nf + 1.0).sqrt() / (0.5 + delta_offset).powi(2) + nf.sqrt() / (0.5 - delta_offset).powi(2))
}

/// Exact minimizer of [`q_beta_analytic`]: the root of
/// `((½-δ)/(½+δ))³ = √(n/(n+1))`.
pub fn optimal_offset(n: usize) -> Result<RegionCGeometry> {
    if n < 1 {
        return Err(Error::param("target photon number must be >= 1"));
    }
    let nf = n as f64;
    let r = (nf / (nf + 1.0)).powf(1.0 / 6.0);
    let delta_star = (1.0 - r) / (2.0 * (1.0 + r));
    Ok(RegionCGeometry {
        n,
        delta_star,
        q_beta_min: q_beta_analytic(n, delta_star)?,
    })
}

/// Large-`n` approximation `δ* ≈ 1 / (6 (√(n+1) + √n)²)`.
pub fn optimal_offset_approx(n: usize) -> f64 {
    let nf = n as f64;
    1.0 / (6.0 * ((nf + 1.0).sqrt() + nf.sqrt()).powi(2))
}
