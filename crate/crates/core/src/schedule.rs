//! Time parametrization of a path that keeps the instantaneous penalty
//! `P(t) = (ds/dt) Q(s)` constant, with an optional stretch of region B.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DrivePoint;
use crate::pathopt::{segment_regions, ParamPath, Region, RegionLabels};
use crate::penalty::{PenaltyEvaluator, PenaltyProfile};

/// Default number of points of the uniform output time grid.
pub const DEFAULT_TIME_SAMPLES: usize = 4096;

/// Minimum number of arc-length cells used for the inversion of `t(s)`.
pub const MIN_PROFILE_CELLS: usize = 2000;

// Cells with vanishing density still get this fraction of the largest
// density, so that t(s) stays strictly increasing.
const DWELL_FLOOR: f64 = 1e-9;

/// One point of the output grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSample {
    pub t: f64,
    pub delta: f64,
    pub beta: f64,
}

impl ScheduleSample {
    pub fn point(&self) -> DrivePoint {
        DrivePoint {
            delta: self.delta,
            beta: self.beta,
        }
    }
}

/// Controls `(Δ(t), β(t))` on `[0, T]`.
///
/// The map `t(s)` is piecewise linear on the profile cells: inside cell `i`
/// the path moves at constant speed, taking `knots_t[i+1] - knots_t[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedSchedule {
    pub total_time: f64,
    /// Region-B dwell multiplier `k`.
    pub stretch: f64,
    pub samples: Vec<ScheduleSample>,
    pub source_path: ParamPath,
    pub labels: RegionLabels,
    /// Cell boundaries in arc length.
    pub knots_s: Vec<f64>,
    /// Cell boundaries in time.
    pub knots_t: Vec<f64>,
    /// Mean penalty density of each cell.
    pub cell_q: Vec<f64>,
    /// `I[C]` of the source profile.
    pub total_penalty: f64,
}

/// Builds the schedule on a uniform grid of [`DEFAULT_TIME_SAMPLES`] points.
pub fn build_schedule(path: &ParamPath, profile: &PenaltyProfile, total_time: f64, stretch: f64) -> Result<TimedSchedule> {
    build_schedule_with(path, profile, total_time, stretch, DEFAULT_TIME_SAMPLES)
}

pub fn build_schedule_with(
    path: &ParamPath,
    profile: &PenaltyProfile,
    total_time: f64,
    stretch: f64,
    n_samples: usize,
) -> Result<TimedSchedule> {
    if !(total_time > 0.0) || !total_time.is_finite() {
        return Err(Error::param(format!("total time must be positive, got {total_time}")));
    }
    if !(stretch >= 1.0) || !stretch.is_finite() {
        return Err(Error::param(format!("stretch factor must be >= 1, got {stretch}")));
    }
    if n_samples < 2 {
        return Err(Error::param("need at least two time samples"));
    }
    let s_len = path.arc_length();
    if profile.is_empty() || (profile.arc_length() - s_len).abs() > 1e-9 * s_len.max(1.0) {
        return Err(Error::param(format!(
            "profile covers arc length {} but the path has {s_len}",
            profile.arc_length()
        )));
    }
    if !(profile.total > 0.0) || !profile.total.is_finite() {
        return Err(Error::Numerical(format!(
            "cannot normalize a schedule with total penalty {}",
            profile.total
        )));
    }
    if profile.len() < MIN_PROFILE_CELLS {
        log::warn!(
            "schedule built from {} cells; at least {MIN_PROFILE_CELLS} are recommended",
            profile.len()
        );
    }

    let labels = segment_regions(path, profile);
    let floor = DWELL_FLOOR * profile.max_q();
    let dwell: Vec<f64> = (0..profile.len())
        .map(|i| {
            let w = profile.q_vals[i].max(floor) * profile.cell_width(i);
            if labels.labels[i] == Region::B {
                stretch * w
            } else {
                w
            }
        })
        .collect();
    let sum: f64 = dwell.iter().sum();
    let mut knots_t = Vec::with_capacity(dwell.len() + 1);
    knots_t.push(0.0);
    let mut acc = 0.0;
    for w in &dwell {
        acc += w;
        knots_t.push(total_time * acc / sum);
    }
    *knots_t.last_mut().unwrap() = total_time;

    let mut sched = TimedSchedule {
        total_time,
        stretch,
        samples: Vec::with_capacity(n_samples),
        source_path: path.clone(),
        labels,
        knots_s: profile.breaks.clone(),
        knots_t,
        cell_q: profile.q_vals.clone(),
        total_penalty: profile.total,
    };
    for j in 0..n_samples {
        let t = if j + 1 == n_samples {
            total_time
        } else {
            total_time * j as f64 / (n_samples - 1) as f64
        };
        let p = path.point_at(sched.s_of_t(t));
        sched.samples.push(ScheduleSample {
            t,
            delta: p.delta,
            beta: p.beta,
        });
    }
    let last = sched.samples.len() - 1;
    let (start, end) = (path.start(), path.end());
    sched.samples[0] = ScheduleSample { t: 0.0, delta: start.delta, beta: start.beta };
    sched.samples[last] = ScheduleSample { t: total_time, delta: end.delta, beta: end.beta };
    Ok(sched)
}

/// Dense profile plus [`build_schedule`].
pub fn schedule_path(eval: &PenaltyEvaluator, path: &ParamPath, total_time: f64, stretch: f64) -> Result<TimedSchedule> {
    let profile = eval.dense_profile(path, MIN_PROFILE_CELLS)?;
    build_schedule(path, &profile, total_time, stretch)
}

fn locate(knots: &[f64], x: f64) -> usize {
    match knots.binary_search_by(|k| k.total_cmp(&x)) {
        Ok(i) => i.min(knots.len() - 2),
        Err(i) => i.clamp(1, knots.len() - 1) - 1,
    }
}

impl TimedSchedule {
    pub fn arc_length(&self) -> f64 {
        *self.knots_s.last().unwrap()
    }

    /// Arc length reached at time `t` (clamped to `[0, T]`).
    pub fn s_of_t(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.total_time);
        let i = locate(&self.knots_t, t);
        let (t0, t1) = (self.knots_t[i], self.knots_t[i + 1]);
        let (s0, s1) = (self.knots_s[i], self.knots_s[i + 1]);
        if t1 == t0 {
            return s1;
        }
        s0 + (t - t0) / (t1 - t0) * (s1 - s0)
    }

    /// Time at which the path reaches arc length `s` (clamped to `[0, S]`).
    pub fn t_of_s(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.arc_length());
        let i = locate(&self.knots_s, s);
        let (t0, t1) = (self.knots_t[i], self.knots_t[i + 1]);
        let (s0, s1) = (self.knots_s[i], self.knots_s[i + 1]);
        if s1 == s0 {
            return t0;
        }
        t0 + (s - s0) / (s1 - s0) * (t1 - t0)
    }

    fn cell_at_time(&self, t: f64) -> usize {
        locate(&self.knots_t, t.clamp(0.0, self.total_time))
    }

    /// Path speed `ds/dt` at time `t`.
    pub fn speed(&self, t: f64) -> f64 {
        let i = self.cell_at_time(t);
        (self.knots_s[i + 1] - self.knots_s[i]) / (self.knots_t[i + 1] - self.knots_t[i])
    }

    /// Region of the cell traversed at time `t`.
    pub fn region_at(&self, t: f64) -> Region {
        self.labels.labels[self.cell_at_time(t)]
    }

    /// `P(t) = (ds/dt) Q` with the cell-averaged density.
    pub fn penalty_rate(&self, t: f64) -> f64 {
        self.speed(t) * self.cell_q[self.cell_at_time(t)]
    }

    /// `P(t)` with the density evaluated at the actual point and tangent.
    pub fn pointwise_penalty_rate(&self, eval: &PenaltyEvaluator, t: f64) -> Result<f64> {
        let i = self.cell_at_time(t);
        let (a, b) = (
            self.source_path.point_at(self.knots_s[i]),
            self.source_path.point_at(self.knots_s[i + 1]),
        );
        let len = a.distance(&b);
        let tangent = ((b.delta - a.delta) / len, (b.beta - a.beta) / len);
        let p = self.source_path.point_at(self.s_of_t(t));
        Ok(self.speed(t) * eval.density(p, tangent)?)
    }

    /// Fraction of the total time spent in each region, as `(A, B, C)`.
    pub fn dwell_fractions(&self) -> (f64, f64, f64) {
        let mut f = [0.0; 3];
        for (i, r) in self.labels.labels.iter().enumerate() {
            let dt = self.knots_t[i + 1] - self.knots_t[i];
            f[*r as usize] += dt;
        }
        (f[0] / self.total_time, f[1] / self.total_time, f[2] / self.total_time)
    }

    /// Piecewise-linear controls between the bracketing grid samples.
    pub fn controls_at(&self, t: f64) -> Result<DrivePoint> {
        let slack = 1e-12 * self.total_time;
        if !(t >= -slack && t <= self.total_time + slack) {
            return Err(Error::param(format!("time {t} outside [0, {}]", self.total_time)));
        }
        let t = t.clamp(0.0, self.total_time);
        let n = self.samples.len();
        let dt = self.total_time / (n - 1) as f64;
        let j = ((t / dt).floor() as usize).min(n - 2);
        let (a, b) = (&self.samples[j], &self.samples[j + 1]);
        if t == a.t {
            return Ok(a.point());
        }
        if t == b.t {
            return Ok(b.point());
        }
        let w = (t - a.t) / (b.t - a.t);
        Ok(a.point().lerp(&b.point(), w))
    }

    /// Same geometry under a different total time or stretch.
    pub fn retimed(&self, total_time: f64, stretch: f64) -> Result<TimedSchedule> {
        let profile = PenaltyProfile {
            arc_s: self
                .knots_s
                .windows(2)
                .map(|w| 0.5 * (w[0] + w[1]))
                .collect(),
            breaks: self.knots_s.clone(),
            q_vals: self.cell_q.clone(),
            points: self
                .knots_s
                .windows(2)
                .map(|w| self.source_path.point_at(0.5 * (w[0] + w[1])))
                .collect(),
            total: self.total_penalty,
        };
        build_schedule_with(&self.source_path, &profile, total_time, stretch, self.samples.len())
    }

    /// `t,delta,beta,region,penalty_rate` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,delta,beta,region,penalty_rate")?;
        for s in &self.samples {
            writeln!(
                out,
                "{:.12e},{:.12e},{:.12e},{:?},{:.12e}",
                s.t,
                s.delta,
                s.beta,
                self.region_at(s.t),
                self.penalty_rate(s.t)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DriveKind;
    use crate::pathopt::{seed_path, TargetSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pt(d: f64, b: f64) -> DrivePoint {
        DrivePoint::new(d, b).unwrap()
    }

    fn small_path() -> ParamPath {
        ParamPath::from_vertices(
            vec![pt(3.0, 0.0), pt(3.0, 3.0), pt(0.5, 1.2), pt(-1.5, 0.05), pt(-1.5, 0.0)],
            2,
            3.0,
        )
        .unwrap()
    }

    /// Seed path for |2⟩, which has all three regions.
    fn seed() -> (ParamPath, PenaltyEvaluator) {
        let spec = TargetSpec::new(2);
        let ev = PenaltyEvaluator::new(spec.dim(), DriveKind::Linear).unwrap();
        (seed_path(&spec).unwrap(), ev)
    }

    fn small_schedule(t: f64, k: f64) -> (TimedSchedule, PenaltyProfile) {
        let (path, ev) = seed();
        let prof = ev.dense_profile(&path, MIN_PROFILE_CELLS).unwrap();
        (build_schedule(&path, &prof, t, k).unwrap(), prof)
    }

    /// Synthetic profile with constant density on a two-edge path.
    fn flat_profile(path: &ParamPath, cells: usize, q: f64) -> PenaltyProfile {
        let s = path.arc_length();
        let h = s / cells as f64;
        PenaltyProfile {
            arc_s: (0..cells).map(|i| (i as f64 + 0.5) * h).collect(),
            breaks: (0..=cells).map(|i| if i == cells { s } else { i as f64 * h }).collect(),
            q_vals: vec![q; cells],
            points: (0..cells).map(|i| path.point_at((i as f64 + 0.5) * h)).collect(),
            total: q * s,
        }
    }

    #[test]
    fn constant_density_gives_linear_time() {
        let path = ParamPath::from_vertices(vec![pt(2.0, 0.0), pt(2.0, 1.0), pt(0.0, 1.0)], 1, 2.0).unwrap();
        let prof = flat_profile(&path, 2000, 0.7);
        let sched = build_schedule(&path, &prof, 5.0, 1.0).unwrap();
        for s in [0.0, 0.3, 1.0, 1.7, 3.0] {
            assert_abs_diff_eq!(sched.t_of_s(s), 5.0 * s / 3.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sched.penalty_rate(1.3), 0.7 * 3.0 / 5.0, epsilon = 1e-12);
    }

    #[test]
    fn endpoints_and_grid() {
        let (sched, _) = small_schedule(10.0, 1.0);
        assert_eq!(sched.samples.len(), DEFAULT_TIME_SAMPLES);
        assert_eq!(sched.controls_at(0.0).unwrap(), pt(30.0, 0.0));
        assert_eq!(sched.controls_at(10.0).unwrap(), pt(-1.5, 0.0));
        assert!(sched.samples.windows(2).all(|w| w[1].t > w[0].t));
        assert!(sched.controls_at(-0.1).is_err());
        assert!(sched.controls_at(10.1).is_err());
    }

    #[test]
    fn controls_interpolate_between_samples() {
        let (sched, _) = small_schedule(10.0, 1.0);
        let (a, b) = (sched.samples[100], sched.samples[101]);
        let mid = sched.controls_at(0.5 * (a.t + b.t)).unwrap();
        assert_abs_diff_eq!(mid.delta, 0.5 * (a.delta + b.delta), epsilon = 1e-12);
        assert_abs_diff_eq!(mid.beta, 0.5 * (a.beta + b.beta), epsilon = 1e-12);
        assert_eq!(sched.controls_at(a.t).unwrap(), a.point());
    }

    #[test]
    fn dwell_follows_penalty_share() {
        let (sched, prof) = small_schedule(7.0, 1.0);
        let (fa, fb, fc) = sched.dwell_fractions();
        assert_abs_diff_eq!(fa + fb + fc, 1.0, epsilon = 1e-12);
        let share = |r: Region| -> f64 {
            (0..prof.len())
                .filter(|&i| sched.labels.labels[i] == r)
                .map(|i| prof.q_vals[i] * prof.cell_width(i))
                .sum::<f64>()
                / prof.total
        };
        assert_abs_diff_eq!(fb, share(Region::B), epsilon = 1e-6);
        assert_abs_diff_eq!(fc, share(Region::C), epsilon = 1e-6);
    }

    #[test]
    fn stretch_scales_region_b_only() {
        let (base, _) = small_schedule(7.0, 1.0);
        let stretched = base.retimed(7.0, 2.0).unwrap();
        let (_, b1, c1) = base.dwell_fractions();
        let (_, b2, c2) = stretched.dwell_fractions();
        assert!(b1 > 0.0);
        // Unnormalized B time doubles relative to the rest.
        assert_abs_diff_eq!(b2 / (1.0 - b2), 2.0 * b1 / (1.0 - b1), epsilon = 1e-9);
        assert!(c2 < c1);
        assert_eq!(base.knots_s, stretched.knots_s);
        assert_eq!(base.source_path, stretched.source_path);
    }

    #[test]
    fn doubling_time_halves_rate() {
        let (a, _) = small_schedule(4.0, 1.0);
        let b = a.retimed(8.0, 1.0).unwrap();
        for t in [0.1, 1.0, 3.9] {
            assert_abs_diff_eq!(b.penalty_rate(2.0 * t), 0.5 * a.penalty_rate(t), epsilon = 1e-12);
        }
    }

    #[test]
    fn saturated_rate_outside_region_b() {
        let (sched, prof) = small_schedule(6.0, 1.0);
        let (_, ev) = seed();
        let target = prof.total / 6.0;
        for s in sched.samples.iter().step_by(37) {
            if sched.region_at(s.t) == Region::B {
                continue;
            }
            let p = sched.pointwise_penalty_rate(&ev, s.t).unwrap();
            assert!((p - target).abs() / target < 0.02, "t={}: {p} vs {target}", s.t);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let path = small_path();
        let prof = flat_profile(&path, 10, 1.0);
        assert!(build_schedule(&path, &prof, 0.0, 1.0).is_err());
        assert!(build_schedule(&path, &prof, 1.0, 0.5).is_err());
        let zero = flat_profile(&path, 10, 0.0);
        assert!(matches!(build_schedule(&path, &zero, 1.0, 1.0), Err(Error::Numerical(_))));
        let other = ParamPath::from_vertices(vec![pt(1.0, 0.0), pt(0.0, 0.5)], 1, 1.0).unwrap();
        assert!(build_schedule(&other, &prof, 1.0, 1.0).is_err());
    }

    #[test]
    fn csv_has_one_row_per_sample() {
        let (sched, _) = small_schedule(3.0, 1.0);
        let mut buf = Vec::new();
        sched.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), sched.samples.len() + 1);
        assert!(text.starts_with("t,delta,beta,region,penalty_rate"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn time_and_arc_are_inverse(t_total in 0.5f64..50.0, k in 1.0f64..3.0, frac in 0.0f64..1.0) {
            let path = small_path();
            let prof = flat_profile(&path, 2000, 1.0);
            let mut q = prof.clone();
            for (i, v) in q.q_vals.iter_mut().enumerate() {
                *v = 1.0 + (i as f64 * 0.01).sin().abs();
            }
            q.total = q.quadrature();
            let sched = build_schedule(&path, &q, t_total, k).unwrap();
            for smp in sched.samples.iter().step_by(97) {
                prop_assert!((sched.t_of_s(sched.s_of_t(smp.t)) - smp.t).abs() <= 1e-8 * t_total);
            }
            let s = frac * path.arc_length();
            prop_assert!((sched.s_of_t(sched.t_of_s(s)) - s).abs() <= 1e-8);
        }
    }
}
