//! Polyline paths in `(Δ, β)` space, their feasibility constraints, the
//! accept-if-better vertex perturbation search and the A/B/C segmentation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::truncation_dim;
use crate::model::{final_detuning, odd_crossings, DriveKind, DrivePoint};
use crate::penalty::{PenaltyEvaluator, PenaltyProfile, BETA_FLOOR, DEFAULT_PANELS_PER_EDGE, DEFAULT_QUAD_TOL};
use crate::variational::{coherent_alpha, region_b_beta};

/// Half-width of the detuning window around an odd crossing in which the
/// drive must stay above [`BETA_FLOOR`].
pub const CROSSING_WINDOW: f64 = 0.05;

/// Polyline path `C` from `(Δ_max, 0)` to `(Δ_f, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPath {
    vertices: Vec<DrivePoint>,
    pub n_target: usize,
    pub delta_max: f64,
}

impl ParamPath {
    /// Builds a path and checks the pointwise constraints. Endpoints are not
    /// required to sit on the axis; see [`ParamPath::check_endpoints`].
    pub fn from_vertices(vertices: Vec<DrivePoint>, n_target: usize, delta_max: f64) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::InfeasiblePath("a path needs at least two vertices".into()));
        }
        let path = Self {
            vertices,
            n_target,
            delta_max,
        };
        path.check_feasible()?;
        Ok(path)
    }

    pub fn vertices(&self) -> &[DrivePoint] {
        &self.vertices
    }

    pub fn delta_f(&self) -> f64 {
        final_detuning(self.n_target)
    }

    pub fn start(&self) -> DrivePoint {
        self.vertices[0]
    }

    pub fn end(&self) -> DrivePoint {
        *self.vertices.last().expect("non-empty")
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        self.vertices.windows(2).map(|w| w[0].distance(&w[1])).collect()
    }

    /// Total arc length `S`.
    pub fn arc_length(&self) -> f64 {
        self.edge_lengths().iter().sum()
    }

    /// Cumulative arc length at each vertex.
    pub fn vertex_arcs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.vertices.len());
        let mut s = 0.0;
        out.push(0.0);
        for l in self.edge_lengths() {
            s += l;
            out.push(s);
        }
        out
    }

    /// Point at arc length `s` (clamped to `[0, S]`).
    pub fn point_at(&self, s: f64) -> DrivePoint {
        let arcs = self.vertex_arcs();
        let total = *arcs.last().unwrap();
        let s = s.clamp(0.0, total);
        let i = match arcs.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => return self.vertices[i],
            Err(i) => i.max(1) - 1,
        };
        let len = arcs[i + 1] - arcs[i];
        if len == 0.0 {
            return self.vertices[i];
        }
        self.vertices[i].lerp(&self.vertices[i + 1], (s - arcs[i]) / len)
    }

    fn near_odd_crossing(&self, delta: f64) -> bool {
        odd_crossings(self.n_target)
            .iter()
            .any(|c| (delta - c).abs() <= CROSSING_WINDOW)
    }

    /// `β ≥ 0`, `Δ ≤ Δ_max`, and interior vertices stay off the axis near the
    /// odd crossings `Δ_1, Δ_3, …, Δ_{2n-1}`.
    pub fn check_feasible(&self) -> Result<()> {
        let last = self.vertices.len() - 1;
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.delta.is_finite() || !v.beta.is_finite() {
                return Err(Error::InfeasiblePath(format!("vertex {i} is not finite")));
            }
            if v.beta < 0.0 {
                return Err(Error::InfeasiblePath(format!("vertex {i} has negative drive {}", v.beta)));
            }
            if v.delta > self.delta_max {
                return Err(Error::InfeasiblePath(format!(
                    "vertex {i} detuning {} exceeds bound {}",
                    v.delta, self.delta_max
                )));
            }
            if i != 0 && i != last && self.near_odd_crossing(v.delta) && v.beta < BETA_FLOOR {
                return Err(Error::InfeasiblePath(format!(
                    "vertex {i} sits on the axis at odd crossing detuning {}",
                    v.delta
                )));
            }
        }
        Ok(())
    }

    /// Start at `(Δ_max, 0)` and end at `(Δ_f, 0)`.
    pub fn check_endpoints(&self) -> Result<()> {
        let (s, e) = (self.start(), self.end());
        if s.delta != self.delta_max || s.beta != 0.0 {
            return Err(Error::InfeasiblePath(format!("start {s:?} is not (Δ_max, 0)")));
        }
        if e.delta != self.delta_f() || e.beta != 0.0 {
            return Err(Error::InfeasiblePath(format!("end {e:?} is not (Δ_f, 0)")));
        }
        Ok(())
    }

    /// Projects an interior vertex candidate onto the feasible set.
    pub fn project(&self, p: DrivePoint) -> DrivePoint {
        let delta = p.delta.min(self.delta_max);
        let mut beta = p.beta.max(0.0);
        if self.near_odd_crossing(delta) {
            beta = beta.max(BETA_FLOOR);
        }
        DrivePoint { delta, beta }
    }

    /// Redistributes the vertex count so that arc length per edge follows the
    /// weights `w` given on the cells of `profile`. Geometry is sampled from the
    /// current polyline; the endpoints are kept.
    fn resample_by_weight(&self, profile: &PenaltyProfile, weights: &[f64], n_vertices: usize) -> ParamPath {
        let mut cum = Vec::with_capacity(weights.len() + 1);
        cum.push(0.0);
        for (i, w) in weights.iter().enumerate() {
            cum.push(cum[i] + w * profile.cell_width(i));
        }
        let total = *cum.last().unwrap();
        let mut verts = Vec::with_capacity(n_vertices);
        verts.push(self.start());
        for j in 1..n_vertices - 1 {
            let target = total * j as f64 / (n_vertices - 1) as f64;
            let i = match cum.binary_search_by(|c| c.total_cmp(&target)) {
                Ok(i) => i.min(weights.len() - 1),
                Err(i) => (i.max(1) - 1).min(weights.len() - 1),
            };
            let span = cum[i + 1] - cum[i];
            let frac = if span > 0.0 { (target - cum[i]) / span } else { 0.0 };
            let s = profile.breaks[i] + frac * profile.cell_width(i);
            verts.push(self.project(self.point_at(s)));
        }
        verts.push(self.end());
        ParamPath {
            vertices: verts,
            n_target: self.n_target,
            delta_max: self.delta_max,
        }
    }
}

/// Target state and numerical settings for one optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub n_target: usize,
    pub delta_max: f64,
    /// Truncation override; `None` applies [`truncation_dim`].
    pub dim: Option<usize>,
    pub n_vertices: usize,
}

impl TargetSpec {
    pub fn new(n_target: usize) -> Self {
        Self {
            n_target,
            delta_max: 30.0,
            dim: None,
            n_vertices: 60,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_target < 1 {
            return Err(Error::param("target photon number must be >= 1"));
        }
        if !(self.delta_max > 0.0) || !self.delta_max.is_finite() {
            return Err(Error::param(format!("delta_max must be positive, got {}", self.delta_max)));
        }
        if self.n_vertices < 4 {
            return Err(Error::param("need at least 4 vertices"));
        }
        if let Some(d) = self.dim {
            if d < self.n_target + 2 {
                return Err(Error::param(format!("dimension {d} too small for |{}⟩", self.n_target)));
            }
        }
        Ok(())
    }

    pub fn delta_f(&self) -> f64 {
        final_detuning(self.n_target)
    }

    /// Drive at the top of the clamped ramp, from the straight-line descent.
    pub fn beta_max(&self) -> f64 {
        region_b_beta(self.delta_max, self.delta_f()).expect("Δ_max > 0 > Δ_f")
    }

    pub fn dim(&self) -> usize {
        self.dim.unwrap_or_else(|| {
            let alpha = coherent_alpha(self.delta_max, self.beta_max()).alpha;
            truncation_dim(self.n_target, alpha.abs())
        })
    }
}

/// Settings for [`optimize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub seed: u64,
    /// Initial perturbation amplitude, relative to the shorter adjacent edge.
    pub sigma0: f64,
    /// Per-sweep decay of the perturbation amplitude.
    pub decay: f64,
    pub max_sweeps: usize,
    /// Stop once a full sweep improves the total by less than this fraction.
    pub rel_tol: f64,
    /// Sweeps that must pass before the stopping rule is applied.
    pub min_sweeps: usize,
    /// Initial Simpson panels per edge.
    pub panels_per_edge: usize,
    /// Relative tolerance of the per-edge quadrature.
    pub quad_tol: f64,
    /// Rounds of vertex redistribution by `√Q` (each followed by a search).
    pub reweight_rounds: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            sigma0: 0.5,
            decay: 0.9,
            max_sweeps: 150,
            rel_tol: 1e-4,
            min_sweeps: 20,
            panels_per_edge: DEFAULT_PANELS_PER_EDGE,
            quad_tol: DEFAULT_QUAD_TOL,
            reweight_rounds: 5,
        }
    }
}

/// Clamped ramp `(Δ_max, 0) → (Δ_max, β_max)`, the straight descent to
/// `(Δ_f, β_floor)` and the final drop to `(Δ_f, 0)`, resampled roughly
/// uniformly in arc length.
pub fn seed_path(spec: &TargetSpec) -> Result<ParamPath> {
    spec.validate()?;
    let df = spec.delta_f();
    let bmax = spec.beta_max();
    let corners = [
        DrivePoint { delta: spec.delta_max, beta: 0.0 },
        DrivePoint { delta: spec.delta_max, beta: bmax },
        DrivePoint { delta: df, beta: BETA_FLOOR },
        DrivePoint { delta: df, beta: 0.0 },
    ];
    let ramp = corners[0].distance(&corners[1]);
    let line = corners[1].distance(&corners[2]);
    // Interior vertices split between the ramp and the descent by length.
    let interior = spec.n_vertices - 4;
    let n_ramp = ((interior as f64) * ramp / (ramp + line)).round() as usize;
    let n_line = interior - n_ramp;
    let mut verts = vec![corners[0]];
    for j in 1..=n_ramp {
        verts.push(corners[0].lerp(&corners[1], j as f64 / (n_ramp + 1) as f64));
    }
    verts.push(corners[1]);
    for j in 1..=n_line {
        verts.push(corners[1].lerp(&corners[2], j as f64 / (n_line + 1) as f64));
    }
    verts.push(corners[2]);
    verts.push(corners[3]);
    let path = ParamPath::from_vertices(verts, spec.n_target, spec.delta_max)?;
    path.check_endpoints()?;
    Ok(path)
}

/// Per-sweep trace of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub totals: Vec<f64>,
    pub accepted: usize,
    pub proposed: usize,
}

struct Search<'a> {
    eval: PenaltyEvaluator,
    opts: &'a SearchOptions,
    rng: ChaCha8Rng,
}

impl Search<'_> {
    fn edge(&self, path: &ParamPath, a: DrivePoint, b: DrivePoint) -> f64 {
        self.eval
            .edge_penalty(a, b, self.opts.panels_per_edge, path.n_target)
            .unwrap_or(f64::INFINITY)
    }

    /// One accept-if-better pass over every interior vertex.
    fn sweep(&mut self, path: &mut ParamPath, edges: &mut [f64], sigma_rel: f64, trace: &mut SearchTrace) {
        let n = path.vertices.len();
        for i in 1..n - 1 {
            let (prev, cur, next) = (path.vertices[i - 1], path.vertices[i], path.vertices[i + 1]);
            let scale = prev.distance(&cur).min(cur.distance(&next)).max(1e-9);
            let sigma = sigma_rel * scale;
            let dx: f64 = StandardNormal.sample(&mut self.rng);
            let dy: f64 = StandardNormal.sample(&mut self.rng);
            let cand = path.project(DrivePoint {
                delta: cur.delta + sigma * dx,
                beta: cur.beta + sigma * dy,
            });
            trace.proposed += 1;
            if cand == cur {
                continue;
            }
            let left = self.edge(path, prev, cand);
            let right = self.edge(path, cand, next);
            let before = edges[i - 1] + edges[i];
            // Ties are rejected.
            if left + right < before {
                path.vertices[i] = cand;
                edges[i - 1] = left;
                edges[i] = right;
                trace.accepted += 1;
            }
        }
    }

    fn run(&mut self, mut path: ParamPath, trace: &mut SearchTrace) -> Result<ParamPath> {
        let mut edges: Vec<f64> = path
            .vertices
            .windows(2)
            .map(|w| self.edge(&path, w[0], w[1]))
            .collect();
        let mut total: f64 = edges.iter().sum();
        if !total.is_finite() {
            return Err(Error::InfeasiblePath("initial path has singular penalty".into()));
        }
        let mut sigma = self.opts.sigma0;
        for sweep in 0..self.opts.max_sweeps {
            self.sweep(&mut path, &mut edges, sigma, trace);
            let next: f64 = edges.iter().sum();
            debug_assert!(next <= total);
            trace.totals.push(next);
            let rel = (total - next) / total;
            total = next;
            sigma *= self.opts.decay;
            if sweep + 1 >= self.opts.min_sweeps && rel < self.opts.rel_tol {
                break;
            }
        }
        Ok(path)
    }
}

/// Places vertices by `√Q` on a finely sampled copy of `path`, with a uniform
/// floor so the low-penalty stretches stay resolved.
fn reweight(eval: &PenaltyEvaluator, path: &ParamPath, n_vertices: usize) -> Result<ParamPath> {
    let fine = eval.dense_profile(path, 40 * n_vertices)?;
    let root: Vec<f64> = fine.q_vals.iter().map(|q| q.sqrt()).collect();
    let mean = (0..fine.len()).map(|i| root[i] * fine.cell_width(i)).sum::<f64>() / fine.arc_length();
    let weights: Vec<f64> = root.iter().map(|r| r + 0.25 * mean).collect();
    Ok(path.resample_by_weight(&fine, &weights, n_vertices))
}

/// Vertex-perturbation search. The returned path never has a larger total
/// penalty than the input.
pub fn optimize(
    path: &ParamPath,
    spec: &TargetSpec,
    opts: &SearchOptions,
) -> Result<(ParamPath, PenaltyProfile, SearchTrace)> {
    spec.validate()?;
    path.check_feasible()?;
    let eval = PenaltyEvaluator::new(spec.dim(), DriveKind::Linear)?.with_tolerance(opts.quad_tol)?;
    let input_profile = eval.profile(path, opts.panels_per_edge)?;
    let mut search = Search {
        eval,
        opts,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
    };
    let mut trace = SearchTrace {
        totals: vec![input_profile.total],
        accepted: 0,
        proposed: 0,
    };

    let mut best = path.clone();
    let mut best_total = input_profile.total;
    let mut current = path.clone();
    for _ in 0..opts.reweight_rounds.max(1) {
        if opts.reweight_rounds > 0 {
            current = reweight(&eval, &current, spec.n_vertices)?;
        }
        current = search.run(current, &mut trace)?;
        let total = eval.profile(&current, opts.panels_per_edge)?.total;
        if total < best_total {
            best = current.clone();
            best_total = total;
        }
    }
    let profile = eval.profile(&best, opts.panels_per_edge)?;
    Ok((best, profile, trace))
}

/// Qualitative path region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    A,
    B,
    C,
}

/// Region label of every profile cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionLabels {
    pub labels: Vec<Region>,
}

impl RegionLabels {
    pub fn count(&self, r: Region) -> usize {
        self.labels.iter().filter(|l| **l == r).count()
    }

    /// Index range `[first, last]` of a region, if present.
    pub fn span(&self, r: Region) -> Option<(usize, usize)> {
        let first = self.labels.iter().position(|l| *l == r)?;
        let last = self.labels.iter().rposition(|l| *l == r)?;
        Some((first, last))
    }
}

/// Threshold for region C, relative to the maximum density.
pub const REGION_C_FRACTION: f64 = 1e-4;

/// C is the terminal run of cells with `Q ≥ 1e-4 max Q`; A is the leading run
/// of cells on the `Δ = Δ_max` clamp; B is everything in between.
pub fn segment_regions(path: &ParamPath, profile: &PenaltyProfile) -> RegionLabels {
    let n = profile.len();
    let mut labels = vec![Region::B; n];
    let thresh = REGION_C_FRACTION * profile.max_q();
    let mut c_start = n;
    while c_start > 0 && profile.q_vals[c_start - 1] >= thresh {
        c_start -= 1;
    }
    for l in labels.iter_mut().skip(c_start) {
        *l = Region::C;
    }
    let eps = 1e-6;
    for i in 0..c_start {
        if profile.points[i].delta >= path.delta_max - eps {
            labels[i] = Region::A;
        } else {
            break;
        }
    }
    RegionLabels { labels }
}

/// Least-squares slope `dβ/dΔ` of the vertices inside the middle half (by arc
/// length) of region B.
pub fn region_b_slope(path: &ParamPath, profile: &PenaltyProfile, labels: &RegionLabels) -> Option<f64> {
    let (first, last) = labels.span(Region::B)?;
    let s0 = profile.breaks[first];
    let s1 = profile.breaks[last + 1];
    let (lo, hi) = (s0 + 0.25 * (s1 - s0), s0 + 0.75 * (s1 - s0));
    let arcs = path.vertex_arcs();
    let pts: Vec<DrivePoint> = path
        .vertices()
        .iter()
        .zip(&arcs)
        .filter(|(_, s)| **s >= lo && **s <= hi)
        .map(|(p, _)| *p)
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.delta).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.beta).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.delta - mx) * (p.beta - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.delta - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Largest drive along the path.
pub fn path_beta_max(path: &ParamPath) -> f64 {
    path.vertices().iter().map(|p| p.beta).fold(0.0, f64::max)
}

/// Mean detuning of the vertices with `0 < β ≤ beta_cut`, i.e. where the path
/// meets the axis.
pub fn terminal_approach_delta(path: &ParamPath, beta_cut: f64) -> Option<f64> {
    let pts: Vec<f64> = path
        .vertices()
        .iter()
        .filter(|p| p.beta > 0.0 && p.beta <= beta_cut)
        .map(|p| p.delta)
        .collect();
    (!pts.is_empty()).then(|| pts.iter().sum::<f64>() / pts.len() as f64)
}
