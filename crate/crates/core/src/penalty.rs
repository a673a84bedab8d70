//! Adiabatic penalty density `Q_C(s)` and total path penalty `I[C]`.
//!
//! For a unit tangent `(dΔ/ds, dβ/ds)` the density is
//!
//! ```text
//! Q = Σ_{n≥1} |dβ/ds · L_n + dΔ/ds · M_n| / (E_n - E_0)²
//! ```
//!
//! summed over the whole truncated spectrum.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fill_hamiltonian, final_detuning, DriveKind, DrivePoint};
use crate::pathopt::ParamPath;
use crate::spectral::{RealEigen, DEGENERACY_TOL};
use crate::variational::q_beta_analytic;

/// Drive below which the final approach to the axis is integrated analytically.
pub const BETA_FLOOR: f64 = 1e-4;

/// Default initial Simpson panels per polyline edge.
pub const DEFAULT_PANELS_PER_EDGE: usize = 4;

/// Default relative tolerance of the per-edge adaptive quadrature.
pub const DEFAULT_QUAD_TOL: f64 = 1e-6;

const ABS_TOL: f64 = 1e-14;
const MAX_DEPTH: usize = 48;
const ROUNDOFF: f64 = 1e-12;
const CLUSTER_TOL: f64 = 1e-7;
const CELL_VARIATION: f64 = 5e-3;
// Densities below this are treated as zero when judging cell flatness.
const DENSITY_FLOOR: f64 = 1e-10;
// Eigenvectors of the nearly degenerate pair at the final detuning are
// noisy for β ≲ 1e-6, so refinement stops at this fraction of an edge.
const MIN_SPAN: f64 = 1e-9;

/// Sampled penalty density along a path.
///
/// The path is cut into cells `[breaks[i], breaks[i+1]]` in arc length; cell
/// `i` is represented by its midpoint `arc_s[i]` (at `points[i]`) and its
/// mean density `q_vals[i]`, so that `total = Σ q_i Δs_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyProfile {
    pub arc_s: Vec<f64>,
    pub breaks: Vec<f64>,
    pub q_vals: Vec<f64>,
    pub points: Vec<DrivePoint>,
    pub total: f64,
}

impl PenaltyProfile {
    pub fn len(&self) -> usize {
        self.q_vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_vals.is_empty()
    }

    pub fn cell_width(&self, i: usize) -> f64 {
        self.breaks[i + 1] - self.breaks[i]
    }

    /// Recomputes `Σ q_i Δs_i`.
    pub fn quadrature(&self) -> f64 {
        (0..self.len()).map(|i| self.q_vals[i] * self.cell_width(i)).sum()
    }

    pub fn arc_length(&self) -> f64 {
        *self.breaks.last().unwrap_or(&0.0)
    }

    pub fn max_q(&self) -> f64 {
        self.q_vals.iter().cloned().fold(0.0, f64::max)
    }
}

/// Reusable evaluator for one truncation and drive kind.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyEvaluator {
    pub dim: usize,
    pub kind: DriveKind,
    pub rel_tol: f64,
}

impl PenaltyEvaluator {
    pub fn new(dim: usize, kind: DriveKind) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(Self {
            dim,
            kind,
            rel_tol: DEFAULT_QUAD_TOL,
        })
    }

    pub fn with_tolerance(mut self, rel_tol: f64) -> Result<Self> {
        if !(rel_tol > 0.0 && rel_tol < 1.0) {
            return Err(Error::param(format!("quadrature tolerance {rel_tol} not in (0, 1)")));
        }
        self.rel_tol = rel_tol;
        Ok(self)
    }

    /// Penalty density at `pt` along the unit `tangent = (dΔ/ds, dβ/ds)`.
    pub fn density(&self, pt: DrivePoint, tangent: (f64, f64)) -> Result<f64> {
        let norm = tangent.0.hypot(tangent.1);
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("tangent norm {norm} is not 1")));
        }
        if pt.beta < 0.0 || !pt.beta.is_finite() || !pt.delta.is_finite() {
            return Err(Error::param(format!("invalid drive point {pt:?}")));
        }
        let dim = self.dim;
        let mut h = DMatrix::zeros(dim, dim);
        fill_hamiltonian(&mut h, pt.delta, pt.beta, self.kind);
        let eig = RealEigen::new(h);
        let gap1 = eig.energies[1] - eig.energies[0];
        if gap1 < DEGENERACY_TOL {
            return Err(Error::DegeneratePoint {
                delta: pt.delta,
                drive: pt.beta,
                gap: gap1,
            });
        }

        // dH/ds |φ_0⟩ with dH/ds = dβ/ds G + dΔ/ds a†a, G banded.
        let ground = eig.vectors.column(0);
        let off = self.kind.offset();
        let mut v = DVector::zeros(dim);
        for n in 0..dim {
            v[n] = tangent.0 * n as f64 * ground[n];
        }
        for n in off..dim {
            let g = tangent.1 * self.kind.coupling(n);
            v[n - off] += g * ground[n];
            v[n] += g * ground[n - off];
        }
        let proj = eig.vectors.tr_mul(&v);
        let e = &eig.energies;
        let mut q = 0.0;
        let mut k = 1;
        while k < dim {
            // Excited levels closer than CLUSTER_TOL have no resolvable basis;
            // such a cluster contributes the norm of its projection.
            let mut end = k + 1;
            while end < dim && e[end] - e[end - 1] < CLUSTER_TOL {
                end += 1;
            }
            let amp = if end == k + 1 {
                proj[k].abs()
            } else {
                proj.rows(k, end - k).norm()
            };
            let gap = 0.5 * (e[k] + e[end - 1]) - e[0];
            q += amp / (gap * gap);
            k = end;
        }
        Ok(q)
    }

    /// Adaptive Simpson leaves of one edge, starting from `panels` equal
    /// panels. Leaf intervals are in the edge parameter `t ∈ [0, 1]`.
    fn edge_leaves(&self, a: DrivePoint, b: DrivePoint, panels: usize, variation: f64) -> Result<Vec<Leaf>> {
        let len = a.distance(&b);
        if len == 0.0 {
            return Ok(Vec::new());
        }
        let panels = panels.max(1);
        let tangent = ((b.delta - a.delta) / len, (b.beta - a.beta) / len);
        let f = |t: f64| self.density(a.lerp(&b, t), tangent);
        let m = 2 * panels;
        let vals = (0..=m)
            .into_par_iter()
            .map(|j| f(j as f64 / m as f64))
            .collect::<Result<Vec<f64>>>()?;
        let h = len / panels as f64;
        let coarse: Vec<f64> = (0..panels)
            .map(|p| h / 6.0 * (vals[2 * p] + 4.0 * vals[2 * p + 1] + vals[2 * p + 2]))
            .collect();
        let coarse_total: f64 = coarse.iter().sum();
        let mean_q = coarse_total / len;
        let eps = (self.rel_tol * coarse_total).max(ABS_TOL * len) / panels as f64;
        let nested = (0..panels)
            .into_par_iter()
            .map(|p| {
                let mut out = Vec::new();
                let (t0, t1) = (p as f64 / panels as f64, (p + 1) as f64 / panels as f64);
                let ends = [vals[2 * p], vals[2 * p + 1], vals[2 * p + 2]];
                let tol = Tolerance {
                    eps,
                    variation,
                    q_floor: (1e-3 * mean_q).max(DENSITY_FLOOR),
                };
                adaptive_simpson(&f, len, (t0, t1), ends, coarse[p], tol, 0, &mut out)?;
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(nested.into_iter().flatten().collect())
    }

    /// Analytic contribution of a short vertical drop onto the detuning axis
    /// at the final detuning of `|n⟩`, if `(a, b)` is such an edge.
    fn terminal_drop(&self, a: DrivePoint, b: DrivePoint, n_target: usize) -> Option<f64> {
        if self.kind != DriveKind::Linear || n_target == 0 {
            return None;
        }
        let vertical = a.delta == b.delta;
        let onto_axis = b.beta == 0.0 && a.beta > 0.0 && a.beta <= BETA_FLOOR * (1.0 + 1e-9);
        if !(vertical && onto_axis) {
            return None;
        }
        let offset = a.delta - final_detuning(n_target);
        q_beta_analytic(n_target, offset).ok()
    }

    /// Penalty integral of a single edge.
    pub fn edge_penalty(&self, a: DrivePoint, b: DrivePoint, panels: usize, n_target: usize) -> Result<f64> {
        if let Some(q) = self.terminal_drop(a, b, n_target) {
            return Ok(q * a.distance(&b));
        }
        Ok(self.edge_leaves(a, b, panels, f64::INFINITY)?.iter().map(|l| l.integral).sum())
    }

    /// Profile along the polyline. Each edge starts from `panels_per_edge`
    /// Simpson panels and is refined until it meets the relative tolerance;
    /// the refined intervals become the cells.
    pub fn profile(&self, path: &ParamPath, panels_per_edge: usize) -> Result<PenaltyProfile> {
        self.profile_with(path, panels_per_edge, f64::INFINITY)
    }

    /// As [`PenaltyEvaluator::profile`], additionally splitting cells until the
    /// density varies by at most the fraction `variation` across each.
    fn profile_with(&self, path: &ParamPath, panels_per_edge: usize, variation: f64) -> Result<PenaltyProfile> {
        if panels_per_edge < 1 {
            return Err(Error::param("panels_per_edge must be >= 1"));
        }
        path.check_feasible()?;
        let verts = path.vertices();
        let mut prof = PenaltyProfile {
            arc_s: Vec::new(),
            breaks: vec![0.0],
            q_vals: Vec::new(),
            points: Vec::new(),
            total: 0.0,
        };
        let mut s0 = 0.0;
        for w in verts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = a.distance(&b);
            if len == 0.0 {
                continue;
            }
            if let Some(q) = self.terminal_drop(a, b, path.n_target) {
                prof.arc_s.push(s0 + 0.5 * len);
                prof.points.push(a.lerp(&b, 0.5));
                prof.q_vals.push(q);
                prof.breaks.push(s0 + len);
            } else {
                let leaves = self.edge_leaves(a, b, panels_per_edge, variation)?;
                let last = leaves.len() - 1;
                for (j, leaf) in leaves.into_iter().enumerate() {
                    let mid = 0.5 * (leaf.t0 + leaf.t1);
                    let width = (leaf.t1 - leaf.t0) * len;
                    prof.arc_s.push(s0 + mid * len);
                    prof.points.push(a.lerp(&b, mid));
                    prof.q_vals.push(leaf.integral / width);
                    prof.breaks.push(if j == last { s0 + len } else { s0 + leaf.t1 * len });
                }
            }
            s0 += len;
        }
        prof.total = prof.quadrature();
        Ok(prof)
    }

    /// Profile with at least `min_cells` cells, each with nearly constant
    /// density, for timing a path.
    pub fn dense_profile(&self, path: &ParamPath, min_cells: usize) -> Result<PenaltyProfile> {
        let edges = path.vertices().len().saturating_sub(1).max(1);
        let mut panels = min_cells.div_ceil(2 * edges).max(1);
        loop {
            let prof = self.profile_with(path, panels, CELL_VARIATION)?;
            if prof.len() >= min_cells {
                return Ok(prof);
            }
            panels *= 2;
        }
    }
}

/// Refined interval `[t0, t1]` of an edge with its Simpson integral.
#[derive(Debug, Clone, Copy)]
struct Leaf {
    t0: f64,
    t1: f64,
    integral: f64,
}

#[derive(Debug, Clone, Copy)]
struct Tolerance {
    /// Absolute error allowed on the current interval.
    eps: f64,
    /// Largest relative spread of the density samples on a leaf.
    variation: f64,
    /// Densities below this are treated as flat.
    q_floor: f64,
}

/// Recursive Simpson refinement on `span`. `ends` holds the density at the
/// left end, middle and right end; `whole` is the panel's Simpson value.
#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &(impl Fn(f64) -> Result<f64> + Sync),
    len: f64,
    span: (f64, f64),
    ends: [f64; 3],
    whole: f64,
    tol: Tolerance,
    depth: usize,
    out: &mut Vec<Leaf>,
) -> Result<()> {
    let (t0, t1) = span;
    let tm = 0.5 * (t0 + t1);
    let [fl, fm, fr] = ends;
    let (flm, frm) = (f(0.5 * (t0 + tm))?, f(0.5 * (tm + t1))?);
    let h = 0.5 * (t1 - t0) * len;
    let left = h / 6.0 * (fl + 4.0 * flm + fm);
    let right = h / 6.0 * (fm + 4.0 * frm + fr);
    let err = (left + right - whole).abs();
    let samples = [fl, flm, fm, frm, fr];
    let hi = samples.iter().cloned().fold(0.0, f64::max);
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let flat = tol.variation.is_infinite() || hi - lo <= tol.variation * hi.max(tol.q_floor);
    let accurate = err <= 15.0 * tol.eps || err <= ROUNDOFF * (left.abs() + right.abs());
    let settled = (accurate && flat) || t1 - t0 < MIN_SPAN;
    if depth >= MAX_DEPTH || settled {
        out.push(Leaf { t0, t1: tm, integral: left });
        out.push(Leaf { t0: tm, t1, integral: right });
        if depth >= MAX_DEPTH {
            log::debug!("penalty quadrature hit the depth limit near t = {tm}");
        }
        return Ok(());
    }
    let half = Tolerance {
        eps: 0.5 * tol.eps,
        ..tol
    };
    adaptive_simpson(f, len, (t0, tm), [fl, flm, fm], left, half, depth + 1, out)?;
    adaptive_simpson(f, len, (tm, t1), [fm, frm, fr], right, half, depth + 1, out)
}

/// Penalty density for the driven Kerr model.
pub fn penalty_density(pt: DrivePoint, tangent: (f64, f64), dim: usize, kind: DriveKind) -> Result<f64> {
    PenaltyEvaluator::new(dim, kind)?.density(pt, tangent)
}

/// Total penalty profile of a path under the linear drive.
pub fn path_penalty(path: &ParamPath, dim: usize, panels_per_edge: usize) -> Result<PenaltyProfile> {
    PenaltyEvaluator::new(dim, DriveKind::Linear)?.profile(path, panels_per_edge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::final_detuning;
    use crate::spectral::{coupling_row, eigensystem_at};
    use crate::variational::{optimal_offset, q_beta_analytic};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pt(d: f64, b: f64) -> DrivePoint {
        DrivePoint::new(d, b).unwrap()
    }

    /// Brute-force density straight from the complex eigensystem and the
    /// coupling row, independent of the banded fast path.
    fn brute_density(p: DrivePoint, t: (f64, f64), dim: usize, kind: DriveKind) -> f64 {
        let es = eigensystem_at(p, dim, kind).unwrap();
        let row = coupling_row(&es, kind).unwrap();
        row.l_vals
            .iter()
            .zip(&row.m_vals)
            .zip(&row.gaps)
            .map(|((l, m), g)| (l * t.1 + m * t.0).norm() / (g * g))
            .sum()
    }

    #[test]
    fn horizontal_in_fock_basis_is_free() {
        assert_eq!(penalty_density(pt(10.0, 0.0), (1.0, 0.0), 20, DriveKind::Linear).unwrap(), 0.0);
    }

    #[test]
    fn vertical_near_first_crossing() {
        let q = penalty_density(pt(0.2, 0.0), (0.0, 1.0), 20, DriveKind::Linear).unwrap();
        assert_abs_diff_eq!(q, 25.0, epsilon = 1e-10);
        assert_abs_diff_eq!(q, brute_density(pt(0.2, 0.0), (0.0, 1.0), 20, DriveKind::Linear), epsilon = 1e-10);
    }

    #[test]
    fn fast_path_matches_brute_force() {
        let s = 0.5f64.sqrt();
        for &(d, b, t) in &[
            (3.0, 2.0, (-s, s)),
            (-2.3, 0.4, (0.6, 0.8)),
            (12.0, 30.0, (-0.3f64, (1.0f64 - 0.09).sqrt())),
            (-4.48, 0.01, (0.0, -1.0)),
        ] {
            for kind in [DriveKind::Linear, DriveKind::TwoPhoton] {
                let fast = penalty_density(pt(d, b), t, 30, kind).unwrap();
                let brute = brute_density(pt(d, b), t, 30, kind);
                assert!((fast - brute).abs() <= 1e-9 * brute.max(1.0), "{fast} vs {brute}");
            }
        }
    }

    #[test]
    fn vertical_density_matches_analytic_near_axis() {
        for n in 1..=5 {
            let g = optimal_offset(n).unwrap();
            let d = final_detuning(n) + g.delta_star;
            for beta in [1e-4, 1e-3] {
                let q = penalty_density(pt(d, beta), (0.0, 1.0), 40, DriveKind::Linear).unwrap();
                assert!((q - g.q_beta_min).abs() / g.q_beta_min < 0.01, "n={n}: {q} vs {}", g.q_beta_min);
            }
        }
    }

    #[test]
    fn horizontal_density_vanishes_near_axis() {
        let d = final_detuning(3) + 0.1;
        let q0 = penalty_density(pt(d, 0.0), (1.0, 0.0), 40, DriveKind::Linear).unwrap();
        assert!(q0 < 1e-12, "{q0}");
        // The Δ-derivative couples through first-order admixtures, so the
        // modulus grows like |β| near the axis.
        let q1 = penalty_density(pt(d, 1e-4), (1.0, 0.0), 40, DriveKind::Linear).unwrap();
        let q2 = penalty_density(pt(d, 1e-3), (1.0, 0.0), 40, DriveKind::Linear).unwrap();
        assert!(q1 < 1e-2, "{q1}");
        assert!((q2 / q1 - 10.0).abs() < 0.2, "{}", q2 / q1);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(penalty_density(pt(0.0, 0.0), (0.0, 1.0), 10, DriveKind::Linear).is_err());
        assert!(penalty_density(pt(1.0, 0.1), (1.0, 1.0), 10, DriveKind::Linear).is_err());
    }

    #[test]
    fn horizontal_edge_on_axis_is_free() {
        let path = ParamPath::from_vertices(vec![pt(5.0, 0.0), pt(1.0, 0.0)], 1, 5.0).unwrap();
        let prof = path_penalty(&path, 20, 8).unwrap();
        assert_eq!(prof.total, 0.0);
    }

    #[test]
    fn vertical_edge_matches_dense_trapezoid() {
        let path = ParamPath::from_vertices(vec![pt(0.5, 1e-6), pt(0.5, 0.1)], 1, 0.5).unwrap();
        let coarse = path_penalty(&path, 20, 1).unwrap();
        let fine = path_penalty(&path, 20, 8).unwrap();
        let ev = PenaltyEvaluator::new(20, DriveKind::Linear).unwrap();
        let n = 4000;
        let h = (0.1 - 1e-6) / n as f64;
        let f = |j: usize| ev.density(pt(0.5, 1e-6 + j as f64 * h), (0.0, 1.0)).unwrap();
        let trap: f64 = (0..n).map(|j| 0.5 * (f(j) + f(j + 1)) * h).sum();
        assert!((coarse.total - trap).abs() / trap < 1e-5, "{} vs {trap}", coarse.total);
        assert!((fine.total - trap).abs() / trap < 1e-5, "{} vs {trap}", fine.total);
        assert_abs_diff_eq!(coarse.total, coarse.quadrature(), epsilon = 1e-14);
        assert!(coarse.q_vals.iter().all(|q| *q >= 0.0));
    }

    #[test]
    fn resolves_sharp_rise_at_axis() {
        // The density along a diagonal edge into the axis jumps by more than
        // an order of magnitude within the last percent of its length.
        let (a, b) = (pt(-3.35, 2.4396), pt(-4.5, BETA_FLOOR));
        let ev = PenaltyEvaluator::new(30, DriveKind::Linear).unwrap();
        let adaptive = ev.edge_penalty(a, b, 2, 5).unwrap();
        let len = a.distance(&b);
        let t = ((b.delta - a.delta) / len, (b.beta - a.beta) / len);
        let n = 20_000;
        let mid: f64 = (0..n)
            .map(|j| ev.density(a.lerp(&b, (j as f64 + 0.5) / n as f64), t).unwrap())
            .sum::<f64>()
            * len
            / n as f64;
        assert!((adaptive - mid).abs() / mid < 1e-4, "{adaptive} vs {mid}");
    }

    #[test]
    fn collinear_midpoint_invariance() {
        let a = pt(3.0, 0.0);
        let b = pt(3.0, 4.0);
        let c = pt(-1.5, 0.5);
        let ev = PenaltyEvaluator::new(30, DriveKind::Linear).unwrap().with_tolerance(1e-9).unwrap();
        let mid = b.lerp(&c, 0.5);
        let p1 = ev.edge_penalty(b, c, 4, 2).unwrap();
        let p2 = ev.edge_penalty(b, mid, 4, 2).unwrap() + ev.edge_penalty(mid, c, 4, 2).unwrap();
        assert!((p1 - p2).abs() / p1 < 1e-6, "{p1} vs {p2}");
        let path = ParamPath::from_vertices(vec![a, b, c, pt(-1.5, 0.0)], 2, 3.0).unwrap();
        let split = ParamPath::from_vertices(vec![a, b, mid, c, pt(-1.5, 0.0)], 2, 3.0).unwrap();
        let t1 = ev.profile(&path, 4).unwrap().total;
        let t2 = ev.profile(&split, 4).unwrap().total;
        assert!((t1 - t2).abs() / t1 < 1e-6, "{t1} vs {t2}");
    }

    #[test]
    fn dense_profile_meets_cell_count() {
        let path = ParamPath::from_vertices(vec![pt(3.0, 0.0), pt(3.0, 4.0), pt(-1.5, 0.5), pt(-1.5, 0.0)], 2, 3.0).unwrap();
        let ev = PenaltyEvaluator::new(20, DriveKind::Linear).unwrap();
        let prof = ev.dense_profile(&path, 2000).unwrap();
        assert!(prof.len() >= 2000);
        let coarse = ev.profile(&path, 4).unwrap();
        assert!((prof.total - coarse.total).abs() / coarse.total < 1e-5);
        assert!(prof.breaks.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn terminal_drop_uses_analytic_integral() {
        let n = 2;
        let df = final_detuning(n);
        let path = ParamPath::from_vertices(vec![pt(df + 0.3, 0.0), pt(df + 0.3, 0.5), pt(df, BETA_FLOOR), pt(df, 0.0)], n, df + 0.3).unwrap();
        let prof = path_penalty(&path, 30, 8).unwrap();
        let last = *prof.q_vals.last().unwrap();
        assert_abs_diff_eq!(last, q_beta_analytic(n, 0.0).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(prof.cell_width(prof.len() - 1), BETA_FLOOR, epsilon = 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn oblique_bounded_by_components(
            d in -4.0f64..6.0,
            b in 0.05f64..5.0,
            theta in 0.0f64..std::f64::consts::TAU,
        ) {
            let ev = PenaltyEvaluator::new(24, DriveKind::Linear).unwrap();
            let (c, s) = (theta.cos(), theta.sin());
            let q = ev.density(pt(d, b), (c, s)).unwrap();
            let qv = ev.density(pt(d, b), (0.0, 1.0)).unwrap();
            let qh = ev.density(pt(d, b), (1.0, 0.0)).unwrap();
            prop_assert!(q >= 0.0);
            prop_assert!(q <= s.abs() * qv + c.abs() * qh + 1e-9 * (qv + qh));
        }
    }
}
