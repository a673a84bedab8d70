//! Run configuration, versioned output documents and the end-to-end
//! commands behind the CLI.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    default_wigner_grid, rabi_tuned_fidelity, simulate_from_vacuum, wigner_at, Diagnostics, LossModel, RabiRow,
    SimOptions, DEFAULT_SNAPSHOT_FRACTIONS,
};
use crate::error::{Error, Result};
use crate::model::DriveKind;
use crate::pathopt::{
    optimize, path_beta_max, region_b_slope, seed_path, segment_regions, ParamPath, Region, SearchOptions,
    SearchTrace, TargetSpec,
};
use crate::penalty::{PenaltyEvaluator, PenaltyProfile};
use crate::schedule::{schedule_path, TimedSchedule};
use crate::C64;

/// Version stamped into every document.
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "KERRFOCK_OUT";

/// Default total-time grid: nine points logarithmic over `[1, 100]`.
pub fn default_time_grid() -> Vec<f64> {
    (0..9).map(|i| 10f64.powf(i as f64 / 4.0)).collect()
}

/// Default stretch grid `1, 1.25, …, 3`.
pub fn default_stretch_grid() -> Vec<f64> {
    (0..9).map(|i| 1.0 + 0.25 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub n: usize,
    pub delta_max: f64,
    /// Truncation override; `0` selects the automatic rule.
    pub dim: usize,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            n: 5,
            delta_max: 30.0,
            dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub seed: u64,
    pub vertices: usize,
    pub max_sweeps: usize,
    pub min_sweeps: usize,
    pub reweight_rounds: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let s = SearchOptions::default();
        Self {
            seed: s.seed,
            vertices: TargetSpec::new(1).n_vertices,
            max_sweeps: s.max_sweeps,
            min_sweeps: s.min_sweeps,
            reweight_rounds: s.reweight_rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub total_time: f64,
    pub stretch: f64,
    pub t_grid: Vec<f64>,
    pub k_grid: Vec<f64>,
    pub step_scale: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            total_time: 11.0,
            stretch: 1.0,
            t_grid: default_time_grid(),
            k_grid: default_stretch_grid(),
            step_scale: crate::dynamics::DEFAULT_STEP_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// `κ/χ` for single runs.
    pub kappa: f64,
    /// `κ/χ` values of a sweep.
    pub kappa_grid: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kappa: 1e-3,
            kappa_grid: vec![0.0, 1e-3, 1e-2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Targets of the scaling and requirements studies.
    pub n_range: Vec<usize>,
    /// Fidelity the requirements study must reach.
    pub f_target: f64,
    /// Candidate `κ/χ`, swept from the largest down.
    pub kappa_ladder: Vec<f64>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_range: (1..=6).collect(),
            f_target: 0.9,
            kappa_ladder: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub path: bool,
    pub schedule: bool,
    pub trajectory: bool,
    pub wigner: bool,
    pub sweep: bool,
    pub wigner_fractions: Vec<f64>,
    pub wigner_resolution: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            path: true,
            schedule: true,
            trajectory: true,
            wigner: true,
            sweep: true,
            wigner_fractions: DEFAULT_SNAPSHOT_FRACTIONS.to_vec(),
            wigner_resolution: 101,
        }
    }
}

/// Everything a run needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub target: TargetConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub loss: LossConfig,
    pub study: StudyConfig,
    pub output: OutputConfig,
}

fn nonempty_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("{name} must be a nonempty list of finite numbers")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=8).contains(&self.target.n) {
            return bad(format!("target.n must be in 1..=8, got {}", self.target.n));
        }
        if !(self.target.delta_max > 0.0) || !self.target.delta_max.is_finite() {
            return bad(format!("target.delta_max must be positive, got {}", self.target.delta_max));
        }
        if self.target.dim != 0 && self.target.dim < self.target.n + 2 {
            return bad(format!("target.dim {} too small for n = {}", self.target.dim, self.target.n));
        }
        if self.optimizer.vertices < 4 || self.optimizer.max_sweeps == 0 {
            return bad("optimizer needs >= 4 vertices and >= 1 sweep".into());
        }
        let s = &self.schedule;
        if !(s.total_time > 0.0) || !s.total_time.is_finite() || !(s.stretch >= 1.0) || !s.stretch.is_finite() {
            return bad("schedule.total_time must be positive and schedule.stretch >= 1".into());
        }
        nonempty_finite("schedule.t_grid", &s.t_grid)?;
        nonempty_finite("schedule.k_grid", &s.k_grid)?;
        if s.t_grid.iter().any(|t| *t <= 0.0) || s.k_grid.iter().any(|k| *k < 1.0) {
            return bad("schedule grids need T > 0 and k >= 1".into());
        }
        if !(s.step_scale > 0.0) || !s.step_scale.is_finite() {
            return bad("schedule.step_scale must be positive".into());
        }
        nonempty_finite("loss.kappa_grid", &self.loss.kappa_grid)?;
        if !(self.loss.kappa >= 0.0) || !self.loss.kappa.is_finite() || self.loss.kappa_grid.iter().any(|k| *k < 0.0) {
            return bad("loss rates must be >= 0".into());
        }
        let st = &self.study;
        if st.n_range.is_empty() || st.n_range.iter().any(|n| !(1..=8).contains(n)) {
            return bad("study.n_range must be a nonempty subset of 1..=8".into());
        }
        if !(st.f_target > 0.0 && st.f_target < 1.0) {
            return bad(format!("study.f_target must lie in (0, 1), got {}", st.f_target));
        }
        nonempty_finite("study.kappa_ladder", &st.kappa_ladder)?;
        if st.kappa_ladder.iter().any(|k| *k <= 0.0) {
            return bad("study.kappa_ladder entries must be positive".into());
        }
        let o = &self.output;
        if o.wigner_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || o.wigner_resolution < 2 {
            return bad("output.wigner_fractions must lie in [0, 1] and the resolution be >= 2".into());
        }
        Ok(())
    }

    /// SHA-256 of everything except the output section.
    pub fn hash(&self) -> String {
        let mut physics = self.clone();
        physics.output = OutputConfig::default();
        hex::encode(Sha256::digest(physics.to_toml().as_bytes()))
    }

    pub fn target_spec(&self) -> TargetSpec {
        TargetSpec {
            n_target: self.target.n,
            delta_max: self.target.delta_max,
            dim: None,
            n_vertices: self.optimizer.vertices,
        }
    }

    /// Truncation for the dynamics.
    pub fn dim(&self) -> usize {
        if self.target.dim > 0 {
            self.target.dim
        } else {
            self.target_spec().dim()
        }
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            seed: self.optimizer.seed,
            max_sweeps: self.optimizer.max_sweeps,
            min_sweeps: self.optimizer.min_sweeps.min(self.optimizer.max_sweeps),
            reweight_rounds: self.optimizer.reweight_rounds,
            ..SearchOptions::default()
        }
    }

    fn sim_options(&self) -> SimOptions {
        SimOptions::new(self.target.n).with_step_scale(self.schedule.step_scale)
    }

    fn for_target(&self, n: usize) -> RunConfig {
        let mut c = self.clone();
        c.target.n = n;
        c.target.dim = 0;
        c
    }
}

/// Commented TOML with every default.
pub fn config_template() -> String {
    let d = RunConfig::default();
    let list = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ");
    format!(
        r#"# kerrfock run configuration. Every key is optional; the values shown are the defaults.

[target]
# Target Fock state |n>, 1..=8.
n = {n}
# Detuning at which the drive is ramped up (units of chi).
delta_max = {dmax:?}
# Fock-space truncation for the dynamics; 0 picks max(4n + 20, 4|alpha_max|^2 + 20).
dim = {dim}

[optimizer]
# RNG seed of the vertex search.
seed = {seed}
# Number of path vertices.
vertices = {verts}
# Sweep budget per round and the minimum before the stopping rule applies.
max_sweeps = {maxs}
min_sweeps = {mins}
# Vertex redistributions by sqrt(Q), each followed by a search.
reweight_rounds = {rounds}

[schedule]
# Total time T and region-B stretch k of single runs.
total_time = {t:?}
stretch = {k:?}
# Grids scanned by sweep and requirements (T outer, k inner).
t_grid = [{tg}]
k_grid = [{kg}]
# Bound on h_eff * dt per integration step.
step_scale = {step:?}

[loss]
# Single-photon loss rate kappa/chi of single runs.
kappa = {kappa:?}
# Loss rates of a sweep.
kappa_grid = [{kgrid}]

[study]
# Targets of the scaling and requirements studies.
n_range = [{nr}]
# Fidelity the requirements study must reach.
f_target = {ft:?}
# Loss rates tried by the requirements study, largest first.
kappa_ladder = [{ladder}]

[output]
# Output directory (overridden by --out, then by ${env}).
dir = "{dir}"
# Export toggles.
path = {p}
schedule = {s}
trajectory = {tr}
wigner = {w}
sweep = {sw}
# Wigner snapshot times as fractions of T, and grid points per axis.
wigner_fractions = [{wf}]
wigner_resolution = {wr}
"#,
        n = d.target.n,
        dmax = d.target.delta_max,
        dim = d.target.dim,
        seed = d.optimizer.seed,
        verts = d.optimizer.vertices,
        maxs = d.optimizer.max_sweeps,
        mins = d.optimizer.min_sweeps,
        rounds = d.optimizer.reweight_rounds,
        t = d.schedule.total_time,
        k = d.schedule.stretch,
        tg = list(&d.schedule.t_grid),
        kg = list(&d.schedule.k_grid),
        step = d.schedule.step_scale,
        kappa = d.loss.kappa,
        kgrid = list(&d.loss.kappa_grid),
        nr = d.study.n_range.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", "),
        ft = d.study.f_target,
        ladder = list(&d.study.kappa_ladder),
        env = OUT_DIR_ENV,
        dir = d.output.dir.display(),
        p = d.output.path,
        s = d.output.schedule,
        tr = d.output.trajectory,
        w = d.output.wigner,
        sw = d.output.sweep,
        wf = list(&d.output.wigner_fractions),
        wr = d.output.wigner_resolution,
    )
}

/// Envelope of every JSON artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    pub schema_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub payload: T,
}

impl<T: Serialize + DeserializeOwned> Document<T> {
    pub fn new(kind: &str, cfg: &RunConfig, payload: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.optimizer.seed,
            payload,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        write_file(path, text.as_bytes())
    }

    pub fn read(path: &Path, kind: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Self =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "{}: schema version {} (expected {SCHEMA_VERSION})",
                path.display(),
                doc.schema_version
            )));
        }
        if doc.kind != kind {
            return Err(Error::Format(format!("{}: a {} document, expected {kind}", path.display(), doc.kind)));
        }
        Ok(doc)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    write_file(path, &buf)
}

/// Arc-length interval of one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpan {
    pub region: Region,
    pub s_start: f64,
    pub s_end: f64,
}

/// Optimized path with its penalty summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub path: ParamPath,
    pub penalty_dim: usize,
    pub total_penalty: f64,
    pub regions: Vec<RegionSpan>,
    pub region_b_slope: Option<f64>,
    pub beta_max: f64,
    pub search: SearchTrace,
}

fn region_spans(path: &ParamPath, profile: &PenaltyProfile) -> Vec<RegionSpan> {
    let labels = segment_regions(path, profile);
    let mut spans: Vec<RegionSpan> = Vec::new();
    for (i, r) in labels.labels.iter().enumerate() {
        let (s0, s1) = (profile.breaks[i], profile.breaks[i + 1]);
        match spans.last_mut() {
            Some(last) if last.region == *r => last.s_end = s1,
            _ => spans.push(RegionSpan {
                region: *r,
                s_start: s0,
                s_end: s1,
            }),
        }
    }
    spans
}

/// Optimizes the configured target from the seed path.
pub fn optimize_target(cfg: &RunConfig) -> Result<PathReport> {
    let spec = cfg.target_spec();
    let seed = seed_path(&spec)?;
    let (path, profile, search) = optimize(&seed, &spec, &cfg.search_options())?;
    let labels = segment_regions(&path, &profile);
    Ok(PathReport {
        penalty_dim: spec.dim(),
        total_penalty: profile.total,
        region_b_slope: region_b_slope(&path, &profile, &labels),
        beta_max: path_beta_max(&path),
        regions: region_spans(&path, &profile),
        path,
        search,
    })
}

/// Output of [`cmd_optimize`].
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub report: PathReport,
    pub written: Vec<PathBuf>,
}

/// Optimizes and writes `path.json`.
pub fn cmd_optimize(cfg: &RunConfig) -> Result<OptimizeOutcome> {
    cfg.validate()?;
    let report = optimize_target(cfg)?;
    let mut written = Vec::new();
    if cfg.output.path {
        let file = cfg.output.dir.join("path.json");
        Document::new("path", cfg, report.clone()).write(&file)?;
        written.push(file);
    }
    Ok(OptimizeOutcome { report, written })
}

/// Loads a path document and checks it against the configured target.
pub fn load_path(file: &Path, cfg: &RunConfig) -> Result<PathReport> {
    let doc: Document<PathReport> = Document::read(file, "path")?;
    let report = doc.payload;
    report.path.check_feasible()?;
    report.path.check_endpoints()?;
    if report.path.n_target != cfg.target.n {
        return Err(Error::Config(format!(
            "path document targets |{}⟩ but the config asks for |{}⟩",
            report.path.n_target, cfg.target.n
        )));
    }
    Ok(report)
}

fn evaluator(report: &PathReport) -> Result<PenaltyEvaluator> {
    PenaltyEvaluator::new(report.penalty_dim, DriveKind::Linear)
}

/// Schedule at the configured `(T, k)`.
pub fn build_run_schedule(cfg: &RunConfig, report: &PathReport) -> Result<TimedSchedule> {
    schedule_path(&evaluator(report)?, &report.path, cfg.schedule.total_time, cfg.schedule.stretch)
}

/// Writes `schedule.json` and `schedule.csv`.
pub fn cmd_schedule(cfg: &RunConfig, report: &PathReport) -> Result<(TimedSchedule, Vec<PathBuf>)> {
    cfg.validate()?;
    let sched = build_run_schedule(cfg, report)?;
    let mut written = Vec::new();
    if cfg.output.schedule {
        let json = cfg.output.dir.join("schedule.json");
        Document::new("schedule", cfg, sched.clone()).write(&json)?;
        let csv = cfg.output.dir.join("schedule.csv");
        write_with(&csv, |b| sched.write_csv(b))?;
        written.extend([json, csv]);
    }
    Ok((sched, written))
}

/// Summary of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub n_target: usize,
    pub dim: usize,
    pub total_time: f64,
    pub stretch: f64,
    pub kappa: f64,
    pub fidelity: f64,
    /// `W(0, 0)` of the final state.
    pub wigner_origin: f64,
    pub diagnostics: Diagnostics,
}

/// Output of [`cmd_simulate`].
#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub summary: SimSummary,
    pub written: Vec<PathBuf>,
}

fn frac_tag(f: f64) -> String {
    format!("{f:.3}").replace('.', "p")
}

/// Simulates the configured run from the vacuum and writes the trajectory,
/// Wigner grids at the snapshot fractions and `simulation.json`.
pub fn cmd_simulate(cfg: &RunConfig, report: &PathReport, trajectory: bool, wigner: bool) -> Result<SimulateOutcome> {
    cfg.validate()?;
    let sched = build_run_schedule(cfg, report)?;
    let dim = cfg.dim();
    let mut opts = cfg.sim_options();
    if wigner {
        opts = opts.with_snapshots(&cfg.output.wigner_fractions);
    }
    let loss = LossModel::new(cfg.loss.kappa)?;
    let res = simulate_from_vacuum(&sched, dim, loss, &opts)?;
    let summary = SimSummary {
        n_target: cfg.target.n,
        dim,
        total_time: sched.total_time,
        stretch: sched.stretch,
        kappa: loss.kappa,
        fidelity: res.final_fidelity(),
        wigner_origin: wigner_at(&res.final_state.to_density(), C64::new(0.0, 0.0)),
        diagnostics: res.diagnostics,
    };
    let dir = &cfg.output.dir;
    let mut written = Vec::new();
    if trajectory {
        let file = dir.join("trajectory.csv");
        write_with(&file, |b| res.write_csv(b))?;
        written.push(file);
    }
    if wigner {
        let grids: Vec<_> = res
            .snapshots
            .par_iter()
            .map(|(t, state)| default_wigner_grid(state, cfg.output.wigner_resolution).map(|g| (*t, g)))
            .collect::<Result<_>>()?;
        for (t, grid) in grids {
            let file = dir.join(format!("wigner_{}.grid", frac_tag(t / sched.total_time)));
            write_with(&file, |b| grid.write_grid(b))?;
            written.push(file);
        }
    }
    let file = dir.join("simulation.json");
    Document::new("simulation", cfg, summary.clone()).write(&file)?;
    written.push(file);
    Ok(SimulateOutcome { summary, written })
}

/// One row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub kappa: f64,
    pub total_time: f64,
    pub stretch: f64,
    pub fidelity: f64,
    pub penalty: f64,
    pub runtime_s: f64,
}

/// All grid points of a sweep, sorted by descending fidelity (stable, so ties
/// keep grid order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    fn from_rows(mut rows: Vec<SweepRow>) -> Self {
        rows.sort_by(|a, b| b.fidelity.total_cmp(&a.fidelity));
        Self { rows }
    }

    pub fn best(&self) -> Option<&SweepRow> {
        self.rows.first()
    }

    /// Best row at one loss rate.
    pub fn best_at(&self, kappa: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.kappa == kappa)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,kappa,total_time,stretch,fidelity,penalty,runtime_s")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:e},{:.6},{:.4},{:.12},{:.9},{:.3}",
                r.n, r.kappa, r.total_time, r.stretch, r.fidelity, r.penalty, r.runtime_s
            )?;
        }
        Ok(())
    }
}

/// Rabi scan over the configured grids at each loss rate.
pub fn sweep(cfg: &RunConfig, report: &PathReport, kappas: &[f64]) -> Result<(SweepTable, Vec<RabiRow>)> {
    let base = build_run_schedule(cfg, report)?;
    let dim = cfg.dim();
    let opts = cfg.sim_options();
    let mut rows = Vec::new();
    let mut bests = Vec::new();
    for &kappa in kappas {
        let scan = rabi_tuned_fidelity(
            &base,
            &cfg.schedule.t_grid,
            &cfg.schedule.k_grid,
            LossModel::new(kappa)?,
            dim,
            &opts,
        )?;
        bests.push(scan.best);
        rows.extend(scan.rows.iter().map(|r| SweepRow {
            n: cfg.target.n,
            kappa,
            total_time: r.total_time,
            stretch: r.stretch,
            fidelity: r.fidelity,
            penalty: report.total_penalty,
            runtime_s: r.runtime_s,
        }));
    }
    Ok((SweepTable::from_rows(rows), bests))
}

/// Sweeps `loss.kappa_grid` and writes `sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig, report: &PathReport) -> Result<(SweepTable, Vec<PathBuf>)> {
    cfg.validate()?;
    let (table, _) = sweep(cfg, report, &cfg.loss.kappa_grid)?;
    let mut written = Vec::new();
    if cfg.output.sweep {
        let file = cfg.output.dir.join("sweep.csv");
        write_with(&file, |b| table.write_csv(b))?;
        written.push(file);
    }
    Ok((table, written))
}

/// Least-squares fit `log y = γ log x + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
}

/// `None` with fewer than two distinct abscissae.
pub fn power_fit(xs: &[f64], ys: &[f64]) -> Option<PowerFit> {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let m = pts.len() as f64;
    if pts.len() < 2 || pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let exponent = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let intercept = my - exponent * mx;
    let residuals = pts.iter().map(|p| p.1 - (exponent * p.0 + intercept)).collect();
    Some(PowerFit {
        exponent,
        intercept,
        residuals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub total_penalty: f64,
}

/// Optimized `I[C_n]` over a range of targets with its power-law fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    pub fit: Option<PowerFit>,
    pub strictly_increasing: bool,
}

/// Optimizes every `n` and fits `I[C_n] ∝ n^γ`.
pub fn cmd_scaling(cfg: &RunConfig, n_range: &[usize]) -> Result<ScalingReport> {
    cfg.validate()?;
    if n_range.is_empty() || n_range.iter().any(|n| !(1..=8).contains(n)) {
        return Err(Error::Config("scaling range must be a nonempty subset of 1..=8".into()));
    }
    let points = n_range
        .par_iter()
        .map(|&n| {
            optimize_target(&cfg.for_target(n)).map(|r| ScalingPoint {
                n,
                total_penalty: r.total_penalty,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.total_penalty).collect();
    let fit = power_fit(&xs, &ys);
    let strictly_increasing = points.windows(2).all(|w| w[1].total_penalty > w[0].total_penalty);
    let report = ScalingReport {
        points,
        fit,
        strictly_increasing,
    };
    Document::new("scaling", cfg, report.clone()).write(&cfg.output.dir.join("scaling.json"))?;
    Ok(report)
}

/// Loss threshold for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Requirement {
    pub n: usize,
    /// Largest ladder rate reaching the target, if any.
    pub kappa: Option<f64>,
    /// `χ/κ` at that rate; when unreached, the bound `χ/κ > 1/κ_min`.
    pub chi_over_kappa: f64,
    pub reached: bool,
    pub best_fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementsReport {
    pub f_target: f64,
    pub rows: Vec<Requirement>,
    /// Fit of `χ/κ ∝ n^γ` over the reached targets.
    pub trend: Option<PowerFit>,
}

/// Walks the ladder from the largest `κ` down until the best fidelity over
/// the `(T, k)` grid reaches `f_target`.
pub fn requirement_for(cfg: &RunConfig, report: &PathReport, f_target: f64) -> Result<Requirement> {
    let mut ladder = cfg.study.kappa_ladder.clone();
    ladder.sort_by(|a, b| b.total_cmp(a));
    let mut best_fidelity = 0.0;
    for &kappa in &ladder {
        let (_, bests) = sweep(cfg, report, &[kappa])?;
        best_fidelity = bests[0].fidelity;
        if best_fidelity >= f_target {
            return Ok(Requirement {
                n: cfg.target.n,
                kappa: Some(kappa),
                chi_over_kappa: 1.0 / kappa,
                reached: true,
                best_fidelity,
            });
        }
    }
    Ok(Requirement {
        n: cfg.target.n,
        kappa: None,
        chi_over_kappa: 1.0 / ladder.last().expect("nonempty ladder"),
        reached: false,
        best_fidelity,
    })
}

/// Thresholds for every target in `n_range`.
pub fn cmd_requirements(cfg: &RunConfig, n_range: &[usize], f_target: f64) -> Result<RequirementsReport> {
    cfg.validate()?;
    if !(f_target > 0.0 && f_target < 1.0) {
        return Err(Error::Config(format!("target fidelity must lie in (0, 1), got {f_target}")));
    }
    let mut rows = Vec::new();
    for &n in n_range {
        let sub = cfg.for_target(n);
        let report = optimize_target(&sub)?;
        rows.push(requirement_for(&sub, &report, f_target)?);
    }
    let reached: Vec<&Requirement> = rows.iter().filter(|r| r.reached).collect();
    let trend = power_fit(
        &reached.iter().map(|r| r.n as f64).collect::<Vec<_>>(),
        &reached.iter().map(|r| r.chi_over_kappa).collect::<Vec<_>>(),
    );
    let out = RequirementsReport { f_target, rows, trend };
    Document::new("requirements", cfg, out.clone()).write(&cfg.output.dir.join("requirements.json"))?;
    Ok(out)
}
