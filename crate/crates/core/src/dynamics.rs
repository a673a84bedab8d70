//! Closed and Lindblad propagation under time-dependent controls, with
//! fidelity and Wigner-function observables.
//!
//! Both propagators integrate in an interaction frame that removes the
//! diagonal part `χ/2 n(n-1) + Δ(t) n` (and, for the master equation, the
//! `-κ/2 {n, ρ}` damping) exactly. Classical RK4 then only has to resolve the
//! drive `β(t)(a + a†)` and the frame rotation of neighbouring levels. The
//! frame is re-anchored at the start of every step.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{fock_state, tail_of, DensityMatrix, StateVector};
use crate::model::DrivePoint;
use crate::schedule::TimedSchedule;
use crate::C64;

/// Default bound on `h_eff · Δt` per RK4 step.
pub const DEFAULT_STEP_SCALE: f64 = 0.05;

/// Closed-system norm drift tolerated over a run.
pub const NORM_DRIFT_TOL: f64 = 1e-8;

/// Open-system trace drift tolerated over a run.
pub const TRACE_DRIFT_TOL: f64 = 1e-6;

/// Most negative eigenvalue tolerated in a propagated density matrix.
pub const POSITIVITY_TOL: f64 = -1e-8;

/// Wigner snapshot times used by default, as fractions of the total time.
pub const DEFAULT_SNAPSHOT_FRACTIONS: [f64; 6] = [0.0, 0.03, 0.06, 0.1, 0.2, 1.0];

const I: C64 = C64::new(0.0, 1.0);
const ZERO: C64 = C64::new(0.0, 0.0);

/// Single-photon loss with jump operator `√κ a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub kappa: f64,
}

impl LossModel {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::param(format!("loss rate must be finite and >= 0, got {kappa}")));
        }
        Ok(Self { kappa })
    }

    pub fn lossless() -> Self {
        Self { kappa: 0.0 }
    }
}

/// Time-dependent controls that are linear between consecutive knots.
pub trait ControlSource: Sync {
    fn duration(&self) -> f64;
    /// Increasing times from `0` to [`duration`](Self::duration).
    fn knots(&self) -> Vec<f64>;
    fn controls(&self, t: f64) -> DrivePoint;
    /// Kerr coefficient in units of `χ`.
    fn kerr(&self) -> f64 {
        1.0
    }
}

impl ControlSource for TimedSchedule {
    fn duration(&self) -> f64 {
        self.total_time
    }

    fn knots(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    fn controls(&self, t: f64) -> DrivePoint {
        self.controls_at(t.clamp(0.0, self.total_time)).expect("clamped into range")
    }
}

/// Constant `(Δ, β)` held for a fixed time. A zero `kerr` switches the
/// nonlinearity off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticControls {
    pub point: DrivePoint,
    pub duration: f64,
    pub kerr: f64,
}

impl ControlSource for StaticControls {
    fn duration(&self) -> f64 {
        self.duration
    }

    fn knots(&self) -> Vec<f64> {
        vec![0.0, self.duration]
    }

    fn controls(&self, _t: f64) -> DrivePoint {
        self.point
    }

    fn kerr(&self) -> f64 {
        self.kerr
    }
}

/// Integration and output settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Fock state whose population is reported as the fidelity.
    pub n_target: usize,
    /// Bound on `h_eff · Δt`.
    pub step_scale: f64,
    /// Approximate number of trajectory records.
    pub records: usize,
    /// Times, as fractions of the duration, at which full states are kept.
    pub snapshot_fractions: Vec<f64>,
}

impl SimOptions {
    pub fn new(n_target: usize) -> Self {
        Self {
            n_target,
            step_scale: DEFAULT_STEP_SCALE,
            records: 512,
            snapshot_fractions: Vec::new(),
        }
    }

    pub fn with_snapshots(mut self, fractions: &[f64]) -> Self {
        self.snapshot_fractions = fractions.to_vec();
        self
    }

    pub fn with_step_scale(mut self, step_scale: f64) -> Self {
        self.step_scale = step_scale;
        self
    }
}

/// Pure or mixed state.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantumState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

impl QuantumState {
    pub fn dim(&self) -> usize {
        match self {
            QuantumState::Pure(psi) => psi.dim(),
            QuantumState::Mixed(rho) => rho.dim(),
        }
    }

    pub fn populations(&self) -> Vec<f64> {
        match self {
            QuantumState::Pure(psi) => psi.populations(),
            QuantumState::Mixed(rho) => rho.populations(),
        }
    }

    pub fn to_density(&self) -> DensityMatrix {
        match self {
            QuantumState::Pure(psi) => psi.to_density(),
            QuantumState::Mixed(rho) => rho.clone(),
        }
    }
}

impl From<StateVector> for QuantumState {
    fn from(psi: StateVector) -> Self {
        QuantumState::Pure(psi)
    }
}

impl From<DensityMatrix> for QuantumState {
    fn from(rho: DensityMatrix) -> Self {
        QuantumState::Mixed(rho)
    }
}

/// Population of `|n⟩`.
pub fn fidelity(state: &QuantumState, n_target: usize) -> Result<f64> {
    let dim = state.dim();
    if n_target >= dim {
        return Err(Error::IndexOutOfRange { index: n_target, dim });
    }
    Ok(match state {
        QuantumState::Pure(psi) => psi.amplitudes()[n_target].norm_sqr(),
        QuantumState::Mixed(rho) => rho.matrix()[(n_target, n_target)].re,
    })
}

/// One trajectory record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub fidelity: f64,
    /// `‖ψ‖²` or `Tr ρ`.
    pub trace: f64,
    pub populations: Vec<f64>,
}

/// Run diagnostics, accumulated over every record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub steps: usize,
    /// Largest deviation of `‖ψ‖²` or `Tr ρ` from its initial value.
    pub max_trace_drift: f64,
    pub max_hermitian_deviation: f64,
    /// Smallest eigenvalue seen (1 for pure states).
    pub min_eigenvalue: f64,
    /// Largest population in the top quarter of the basis.
    pub max_tail: f64,
}

/// Output of a propagation.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub final_state: QuantumState,
    pub trajectory: Vec<TrajectoryPoint>,
    /// `(t, state)` at the requested fractions.
    pub snapshots: Vec<(f64, QuantumState)>,
    pub diagnostics: Diagnostics,
}

impl SimResult {
    pub fn fidelity_series(&self) -> Vec<f64> {
        self.trajectory.iter().map(|p| p.fidelity).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.trajectory.iter().map(|p| p.t).collect()
    }

    pub fn final_fidelity(&self) -> f64 {
        self.trajectory.last().map_or(0.0, |p| p.fidelity)
    }

    /// `t,fidelity,trace,p0,p1,...` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dim = self.final_state.dim();
        write!(out, "t,fidelity,trace")?;
        for n in 0..dim {
            write!(out, ",p{n}")?;
        }
        writeln!(out)?;
        for p in &self.trajectory {
            write!(out, "{:.12e},{:.12e},{:.12e}", p.t, p.fidelity, p.trace)?;
            for v in &p.populations {
                write!(out, ",{v:.6e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Interval boundaries of the integration: the control knots plus snapshot
/// times, with the indices of knots that get a trajectory record.
struct TimeGrid {
    times: Vec<f64>,
    record: Vec<bool>,
    snapshot: Vec<bool>,
}

fn time_grid(src: &impl ControlSource, opts: &SimOptions) -> Result<TimeGrid> {
    let total = src.duration();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::param(format!("duration must be positive, got {total}")));
    }
    if !(opts.step_scale > 0.0) || !opts.step_scale.is_finite() {
        return Err(Error::param(format!("step scale must be positive, got {}", opts.step_scale)));
    }
    for f in &opts.snapshot_fractions {
        if !(0.0..=1.0).contains(f) {
            return Err(Error::param(format!("snapshot fraction {f} outside [0, 1]")));
        }
    }
    let knots = src.knots();
    let stride = knots.len().div_ceil(opts.records.max(1)).max(1);
    let mut marked: Vec<(f64, bool, bool)> = knots
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, i % stride == 0 || i + 1 == knots.len(), false))
        .collect();
    for f in &opts.snapshot_fractions {
        marked.push((f * total, true, true));
    }
    marked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut grid = TimeGrid {
        times: Vec::with_capacity(marked.len()),
        record: Vec::with_capacity(marked.len()),
        snapshot: Vec::with_capacity(marked.len()),
    };
    let tiny = 1e-13 * total;
    for (t, rec, snap) in marked {
        match grid.times.last() {
            Some(&last) if t - last <= tiny => {
                let j = grid.times.len() - 1;
                grid.record[j] |= rec;
                grid.snapshot[j] |= snap;
            }
            _ => {
                grid.times.push(t);
                grid.record.push(rec);
                grid.snapshot.push(snap);
            }
        }
    }
    Ok(grid)
}

/// Bound on the fastest frequency left in the interaction frame.
fn effective_rate(dim: usize, kerr: f64, kappa: f64, pt: DrivePoint) -> f64 {
    let top = (dim - 1) as f64;
    kerr.abs() * top + pt.delta.abs() + 2.0 * pt.beta.abs() * top.sqrt() + kappa * top
}

/// Diagonal frame propagator `exp(-i ∫ D_c)` over `[0, τ]` of a step of
/// length `h`, where `Δ` moves linearly from `d0` to `d1`.
struct Frame {
    sqrt: Vec<f64>,
    kerr: f64,
    kappa: f64,
}

impl Frame {
    fn new(dim: usize, kerr: f64, kappa: f64) -> Self {
        Self {
            sqrt: (0..=dim).map(|n| (n as f64).sqrt()).collect(),
            kerr,
            kappa,
        }
    }

    fn factors(&self, d0: f64, d1: f64, h: f64, tau: f64, g: &mut [C64], ginv: &mut [C64]) {
        let int_delta = d0 * tau + (d1 - d0) * tau * tau / (2.0 * h);
        for n in 0..g.len() {
            let nf = n as f64;
            let phase = self.kerr * 0.5 * nf * (nf - 1.0) * tau + nf * int_delta;
            let decay = 0.5 * self.kappa * nf * tau;
            let rot = C64::from_polar(1.0, -phase);
            g[n] = rot * (-decay).exp();
            ginv[n] = rot.conj() * decay.exp();
        }
    }
}

/// `-i β (a + a†) ψ`.
fn drive_vector(sqrt: &[f64], beta: f64, psi: &[C64], out: &mut [C64]) {
    let dim = psi.len();
    for n in 0..dim {
        let mut acc = ZERO;
        if n > 0 {
            acc += psi[n - 1] * sqrt[n];
        }
        if n + 1 < dim {
            acc += psi[n + 1] * sqrt[n + 1];
        }
        out[n] = -I * beta * acc;
    }
}

/// `-i β [a + a†, ρ] + κ a ρ a†` on a column-major `dim × dim` buffer.
fn drive_density(sqrt: &[f64], beta: f64, kappa: f64, rho: &[C64], out: &mut [C64]) {
    let dim = sqrt.len() - 1;
    let at = |m: usize, n: usize| rho[m + n * dim];
    for n in 0..dim {
        for m in 0..dim {
            let mut comm = ZERO;
            if m > 0 {
                comm += at(m - 1, n) * sqrt[m];
            }
            if m + 1 < dim {
                comm += at(m + 1, n) * sqrt[m + 1];
            }
            if n > 0 {
                comm -= at(m, n - 1) * sqrt[n];
            }
            if n + 1 < dim {
                comm -= at(m, n + 1) * sqrt[n + 1];
            }
            let mut v = -I * beta * comm;
            if kappa > 0.0 && m + 1 < dim && n + 1 < dim {
                v += at(m + 1, n + 1) * (kappa * sqrt[m + 1] * sqrt[n + 1]);
            }
            out[m + n * dim] = v;
        }
    }
}

/// One propagated quantity: a state vector or a column-major density matrix.
trait Propagated {
    /// Lab-frame off-diagonal generator applied to `y`.
    fn generator(&self, beta: f64, y: &[C64], out: &mut [C64]);
    /// `y ← G y` (or `G y G†`).
    fn to_lab(&self, g: &[C64], y: &mut [C64]);
}

struct PureSystem<'a> {
    frame: &'a Frame,
}

impl Propagated for PureSystem<'_> {
    fn generator(&self, beta: f64, y: &[C64], out: &mut [C64]) {
        drive_vector(&self.frame.sqrt, beta, y, out);
    }

    fn to_lab(&self, g: &[C64], y: &mut [C64]) {
        for (v, gi) in y.iter_mut().zip(g) {
            *v *= gi;
        }
    }
}

struct MixedSystem<'a> {
    frame: &'a Frame,
}

impl Propagated for MixedSystem<'_> {
    fn generator(&self, beta: f64, y: &[C64], out: &mut [C64]) {
        drive_density(&self.frame.sqrt, beta, self.frame.kappa, y, out);
    }

    fn to_lab(&self, g: &[C64], y: &mut [C64]) {
        let dim = g.len();
        for n in 0..dim {
            let gn = g[n].conj();
            for m in 0..dim {
                y[m + n * dim] *= g[m] * gn;
            }
        }
    }
}

/// Scratch buffers of one RK4 step.
struct Stepper {
    dim: usize,
    g_half: Vec<C64>,
    ginv_half: Vec<C64>,
    g_full: Vec<C64>,
    ginv_full: Vec<C64>,
    stage: Vec<C64>,
    lab: Vec<C64>,
    k: [Vec<C64>; 4],
}

impl Stepper {
    fn new(dim: usize, len: usize) -> Self {
        let v = || vec![ZERO; len];
        Self {
            dim,
            g_half: vec![ZERO; dim],
            ginv_half: vec![ZERO; dim],
            g_full: vec![ZERO; dim],
            ginv_full: vec![ZERO; dim],
            stage: v(),
            lab: v(),
            k: [v(), v(), v(), v()],
        }
    }
}

fn apply_inverse(dim: usize, ginv: &[C64], out: &mut [C64]) {
    if out.len() == dim {
        for (v, gi) in out.iter_mut().zip(ginv) {
            *v *= gi;
        }
    } else {
        for n in 0..dim {
            let gn = ginv[n].conj();
            for m in 0..dim {
                out[m + n * dim] *= ginv[m] * gn;
            }
        }
    }
}

/// Advances `y` by one Lawson-RK4 step of length `h`.
fn rk4_step<P: Propagated>(
    sys: &P,
    frame: &Frame,
    st: &mut Stepper,
    y: &mut [C64],
    h: f64,
    c0: DrivePoint,
    c1: DrivePoint,
) {
    let mid = c0.lerp(&c1, 0.5);
    frame.factors(c0.delta, c1.delta, h, 0.5 * h, &mut st.g_half, &mut st.ginv_half);
    frame.factors(c0.delta, c1.delta, h, h, &mut st.g_full, &mut st.ginv_full);
    let n = y.len();

    // k1 at τ = 0, where the frame is the identity.
    st.lab.copy_from_slice(y);
    let mut k1 = std::mem::take(&mut st.k[0]);
    sys.generator(c0.beta, &st.lab, &mut k1);
    st.k[0] = k1;

    for i in 0..n {
        st.stage[i] = y[i] + st.k[0][i] * (0.5 * h);
    }
    stage_derivative(sys, st, true, mid.beta, 1);
    for i in 0..n {
        st.stage[i] = y[i] + st.k[1][i] * (0.5 * h);
    }
    stage_derivative(sys, st, true, mid.beta, 2);
    for i in 0..n {
        st.stage[i] = y[i] + st.k[2][i] * h;
    }
    stage_derivative(sys, st, false, c1.beta, 3);

    let w = h / 6.0;
    for i in 0..n {
        y[i] += (st.k[0][i] + (st.k[1][i] + st.k[2][i]) * 2.0 + st.k[3][i]) * w;
    }
    sys.to_lab(&st.g_full, y);
}

fn stage_derivative<P: Propagated>(sys: &P, st: &mut Stepper, half: bool, beta: f64, slot: usize) {
    let (g, ginv) = if half {
        (&st.g_half, &st.ginv_half)
    } else {
        (&st.g_full, &st.ginv_full)
    };
    st.lab.copy_from_slice(&st.stage);
    sys.to_lab(g, &mut st.lab);
    sys.generator(beta, &st.lab, &mut st.k[slot]);
    apply_inverse(st.dim, ginv, &mut st.k[slot]);
}

/// Marches `y` across the grid, calling `observe` at every marked time.
fn march<P: Propagated>(
    src: &impl ControlSource,
    sys: &P,
    frame: &Frame,
    grid: &TimeGrid,
    y: &mut [C64],
    step_scale: f64,
    mut observe: impl FnMut(usize, &[C64]) -> Result<()>,
) -> Result<usize> {
    let dim = frame.sqrt.len() - 1;
    let mut st = Stepper::new(dim, y.len());
    let mut steps = 0;
    observe(0, y)?;
    for j in 0..grid.times.len() - 1 {
        let (t0, t1) = (grid.times[j], grid.times[j + 1]);
        let (a, b) = (src.controls(t0), src.controls(t1));
        let rate = |c| effective_rate(dim, src.kerr(), frame.kappa, c);
        let rate = rate(a).max(rate(b));
        let m = ((t1 - t0) * rate / step_scale).ceil().max(1.0) as usize;
        let h = (t1 - t0) / m as f64;
        for s in 0..m {
            let c0 = a.lerp(&b, s as f64 / m as f64);
            let c1 = a.lerp(&b, (s + 1) as f64 / m as f64);
            rk4_step(sys, frame, &mut st, y, h, c0, c1);
        }
        steps += m;
        observe(j + 1, y)?;
    }
    Ok(steps)
}

fn check_start(src: &impl ControlSource, dim: usize, opts: &SimOptions) -> Result<()> {
    if opts.n_target >= dim {
        return Err(Error::IndexOutOfRange {
            index: opts.n_target,
            dim,
        });
    }
    let c = src.controls(0.0);
    if !c.delta.is_finite() || !c.beta.is_finite() {
        return Err(Error::param("controls are not finite at t = 0"));
    }
    Ok(())
}

/// Schrödinger evolution of `psi0` under the controls.
pub fn evolve_closed(src: &impl ControlSource, psi0: &StateVector, opts: &SimOptions) -> Result<SimResult> {
    let dim = psi0.dim();
    check_start(src, dim, opts)?;
    let norm0 = psi0.norm().powi(2);
    if (norm0 - 1.0).abs() > 1e-10 {
        return Err(Error::param(format!("initial state has norm² {norm0}")));
    }
    let grid = time_grid(src, opts)?;
    let frame = Frame::new(dim, src.kerr(), 0.0);
    let sys = PureSystem { frame: &frame };
    let mut y: Vec<C64> = psi0.amplitudes().iter().cloned().collect();
    let mut trajectory = Vec::new();
    let mut snapshots = Vec::new();
    let mut diag = Diagnostics {
        steps: 0,
        max_trace_drift: 0.0,
        max_hermitian_deviation: 0.0,
        min_eigenvalue: 1.0,
        max_tail: 0.0,
    };
    let steps = march(src, &sys, &frame, &grid, &mut y, opts.step_scale, |j, y| {
        if !grid.record[j] {
            return Ok(());
        }
        let pops: Vec<f64> = y.iter().map(|c| c.norm_sqr()).collect();
        let norm: f64 = pops.iter().sum();
        diag.max_trace_drift = diag.max_trace_drift.max((norm - norm0).abs());
        diag.max_tail = diag.max_tail.max(tail_of(&pops));
        if grid.snapshot[j] {
            let psi = StateVector::new(DVector::from_column_slice(y))?;
            snapshots.push((grid.times[j], QuantumState::Pure(psi)));
        }
        trajectory.push(TrajectoryPoint {
            t: grid.times[j],
            fidelity: pops[opts.n_target],
            trace: norm,
            populations: pops,
        });
        Ok(())
    })?;
    diag.steps = steps;
    if !(diag.max_trace_drift <= NORM_DRIFT_TOL) {
        return Err(Error::Numerical(format!(
            "norm drift {:.3e} exceeds {NORM_DRIFT_TOL:e} after {steps} steps; reduce the step scale (now {})",
            diag.max_trace_drift, opts.step_scale
        )));
    }
    Ok(SimResult {
        final_state: QuantumState::Pure(StateVector::new(DVector::from_vec(y))?),
        trajectory,
        snapshots,
        diagnostics: diag,
    })
}

/// Master-equation evolution of `rho0` with single-photon loss.
pub fn evolve_lindblad(
    src: &impl ControlSource,
    rho0: &DensityMatrix,
    loss: LossModel,
    opts: &SimOptions,
) -> Result<SimResult> {
    let dim = rho0.dim();
    check_start(src, dim, opts)?;
    rho0.validate()?;
    LossModel::new(loss.kappa)?;
    let grid = time_grid(src, opts)?;
    let frame = Frame::new(dim, src.kerr(), loss.kappa);
    let sys = MixedSystem { frame: &frame };
    let mut y: Vec<C64> = rho0.matrix().as_slice().to_vec();
    let tr0 = rho0.trace().re;
    let mut trajectory = Vec::new();
    let mut snapshots = Vec::new();
    let mut diag = Diagnostics {
        steps: 0,
        max_trace_drift: 0.0,
        max_hermitian_deviation: 0.0,
        min_eigenvalue: f64::INFINITY,
        max_tail: 0.0,
    };
    let steps = march(src, &sys, &frame, &grid, &mut y, opts.step_scale, |j, y| {
        if !grid.record[j] {
            return Ok(());
        }
        let rho = DensityMatrix::new(DMatrix::from_column_slice(dim, dim, y))?;
        let pops = rho.populations();
        let tr: f64 = pops.iter().sum();
        diag.max_trace_drift = diag.max_trace_drift.max((tr - tr0).abs());
        diag.max_hermitian_deviation = diag.max_hermitian_deviation.max(rho.hermitian_deviation());
        diag.min_eigenvalue = diag.min_eigenvalue.min(rho.min_eigenvalue());
        diag.max_tail = diag.max_tail.max(tail_of(&pops));
        if diag.max_trace_drift > TRACE_DRIFT_TOL || diag.min_eigenvalue < POSITIVITY_TOL {
            return Err(Error::Numerical(format!(
                "density matrix left the physical set at t = {}: trace drift {:.3e}, min eigenvalue {:.3e}; reduce the step scale (now {})",
                grid.times[j], diag.max_trace_drift, diag.min_eigenvalue, opts.step_scale
            )));
        }
        if grid.snapshot[j] {
            snapshots.push((grid.times[j], QuantumState::Mixed(rho.clone())));
        }
        trajectory.push(TrajectoryPoint {
            t: grid.times[j],
            fidelity: pops[opts.n_target],
            trace: tr,
            populations: pops,
        });
        Ok(())
    })?;
    diag.steps = steps;
    Ok(SimResult {
        final_state: QuantumState::Mixed(DensityMatrix::new(DMatrix::from_vec(dim, dim, y))?),
        trajectory,
        snapshots,
        diagnostics: diag,
    })
}

/// Vacuum start; closed evolution when `κ = 0`, master equation otherwise.
pub fn simulate_from_vacuum(
    src: &impl ControlSource,
    dim: usize,
    loss: LossModel,
    opts: &SimOptions,
) -> Result<SimResult> {
    let vac = fock_state(0, dim)?;
    if loss.kappa == 0.0 {
        evolve_closed(src, &vac, opts)
    } else {
        evolve_lindblad(src, &vac.to_density(), loss, opts)
    }
}

/// One `(T, k)` grid point of a Rabi scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiRow {
    pub total_time: f64,
    pub stretch: f64,
    pub fidelity: f64,
    pub runtime_s: f64,
}

/// Full `(T, k)` table in grid order (`T` outer, `k` inner) and its argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiScan {
    pub rows: Vec<RabiRow>,
    pub best: RabiRow,
}

/// Simulates every `(T, k)` pair from the vacuum and keeps the best final
/// fidelity. Ties go to the earliest grid point.
pub fn rabi_tuned_fidelity(
    base: &TimedSchedule,
    t_list: &[f64],
    k_list: &[f64],
    loss: LossModel,
    dim: usize,
    opts: &SimOptions,
) -> Result<RabiScan> {
    if t_list.is_empty() || k_list.is_empty() {
        return Err(Error::param("T and k grids must be nonempty"));
    }
    let grid: Vec<(f64, f64)> = t_list
        .iter()
        .flat_map(|&t| k_list.iter().map(move |&k| (t, k)))
        .collect();
    let rows = grid
        .par_iter()
        .map(|&(t, k)| {
            let clock = Instant::now();
            let sched = base.retimed(t, k)?;
            let res = simulate_from_vacuum(&sched, dim, loss, opts)?;
            Ok(RabiRow {
                total_time: t,
                stretch: k,
                fidelity: res.final_fidelity(),
                runtime_s: clock.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = rows
        .iter()
        .fold(None::<RabiRow>, |acc, r| match acc {
            Some(b) if b.fidelity >= r.fidelity => Some(b),
            _ => Some(*r),
        })
        .expect("nonempty grid");
    Ok(RabiScan { rows, best })
}

/// Columns `c_m[n] = ⟨n|D(β)|m⟩` of the untruncated displacement operator,
/// restricted to `n, m < dim`.
fn displacement_columns(beta: C64, dim: usize, sqrt: &[f64]) -> Vec<C64> {
    let mut cols = vec![ZERO; dim * dim];
    let mut prev = C64::new((-0.5 * beta.norm_sqr()).exp(), 0.0);
    cols[0] = prev;
    for n in 1..dim {
        prev = prev * beta / sqrt[n];
        cols[n] = prev;
    }
    let bc = beta.conj();
    for m in 1..dim {
        let (done, rest) = cols.split_at_mut(m * dim);
        let last = &done[(m - 1) * dim..];
        let col = &mut rest[..dim];
        for n in 0..dim {
            let up = if n > 0 { last[n - 1] * sqrt[n] } else { ZERO };
            col[n] = (up - bc * last[n]) / sqrt[m];
        }
    }
    cols
}

/// `W(α) = (2/π) Tr[ρ D(α) Π D(α)†]` with `Π = diag((-1)^n)`, normalized so
/// that `∫ W d²α = 1`.
pub fn wigner_at(rho: &DensityMatrix, alpha: C64) -> f64 {
    let dim = rho.dim();
    let sqrt: Vec<f64> = (0..=dim).map(|n| (n as f64).sqrt()).collect();
    wigner_with(rho.matrix(), alpha, &sqrt)
}

fn wigner_with(rho: &DMatrix<C64>, alpha: C64, sqrt: &[f64]) -> f64 {
    // D(α) Π D(α)† = D(2α) Π.
    let dim = rho.nrows();
    let cols = displacement_columns(alpha * 2.0, dim, sqrt);
    let mut acc = ZERO;
    for m in 0..dim {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        let col = &cols[m * dim..(m + 1) * dim];
        let mut s = ZERO;
        for n in 0..dim {
            s += rho[(m, n)] * col[n];
        }
        acc += s * sign;
    }
    2.0 / std::f64::consts::PI * acc.re
}

/// Half-width `√(2 dim) + 1` of the default Wigner window.
pub fn default_extent(dim: usize) -> f64 {
    (2.0 * dim as f64).sqrt() + 1.0
}

/// `W` on a rectangular grid over `x = Re α`, `p = Im α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub xs: Vec<f64>,
    pub ps: Vec<f64>,
    /// Row-major: row `i` holds `p = ps[i]`.
    pub values: Vec<f64>,
}

impl WignerGrid {
    pub fn at(&self, ix: usize, ip: usize) -> f64 {
        self.values[ip * self.xs.len() + ix]
    }

    /// Trapezoidal `∫ W dx dp`.
    pub fn integral(&self) -> f64 {
        let (nx, np) = (self.xs.len(), self.ps.len());
        if nx < 2 || np < 2 {
            return 0.0;
        }
        let dx = (self.xs[nx - 1] - self.xs[0]) / (nx - 1) as f64;
        let dp = (self.ps[np - 1] - self.ps[0]) / (np - 1) as f64;
        let w = |i: usize, n: usize| if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
        let mut acc = 0.0;
        for ip in 0..np {
            for ix in 0..nx {
                acc += w(ix, nx) * w(ip, np) * self.at(ix, ip);
            }
        }
        acc * dx * dp
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Two header lines with the axes, then one comma-separated row per `p`.
    pub fn write_grid<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let axis = |v: &[f64]| format!("{:.12e} {:.12e} {}", v[0], v[v.len() - 1], v.len());
        writeln!(out, "# x {}", axis(&self.xs))?;
        writeln!(out, "# p {}", axis(&self.ps))?;
        for row in self.values.chunks(self.xs.len()) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

fn linspace(range: (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (range.0 + range.1)];
    }
    (0..n)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Wigner function on `resolution × resolution` points.
pub fn wigner_grid(state: &QuantumState, x_range: (f64, f64), p_range: (f64, f64), resolution: usize) -> Result<WignerGrid> {
    if resolution == 0 || !(x_range.1 >= x_range.0) || !(p_range.1 >= p_range.0) {
        return Err(Error::param("Wigner grid needs a positive resolution and ordered ranges"));
    }
    let rho = state.to_density();
    let dim = rho.dim();
    let sqrt: Vec<f64> = (0..=dim).map(|n| (n as f64).sqrt()).collect();
    let xs = linspace(x_range, resolution);
    let ps = linspace(p_range, resolution);
    let values = ps
        .par_iter()
        .flat_map_iter(|&p| {
            let (rho, sqrt) = (rho.matrix(), &sqrt);
            xs.iter().map(move |&x| wigner_with(rho, C64::new(x, p), sqrt)).collect::<Vec<_>>()
        })
        .collect();
    Ok(WignerGrid { xs, ps, values })
}

/// [`wigner_grid`] on the default square window.
pub fn default_wigner_grid(state: &QuantumState, resolution: usize) -> Result<WignerGrid> {
    let e = default_extent(state.dim());
    wigner_grid(state, (-e, e), (-e, e), resolution)
}
