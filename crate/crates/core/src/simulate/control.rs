//! Open-loop control signals.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::SimulateError;

/// A time-dependent input `u(t)`.
pub trait Control {
    fn input_dim(&self) -> usize;

    /// Right-continuous value at `t`.
    fn value(&self, t: f64) -> DVector<f64>;

    /// Left limit at `t`. Equal to [`Control::value`] for continuous signals.
    fn value_left(&self, t: f64) -> DVector<f64> {
        self.value(t)
    }

    /// Jump times in the open interval `(0, horizon)`, increasing.
    fn breakpoints(&self, _horizon: f64) -> Vec<f64> {
        Vec::new()
    }

    /// Points where the signal is not smooth (jumps or kinks), for quadrature.
    fn quadrature_nodes(&self, horizon: f64) -> Vec<f64> {
        self.breakpoints(horizon)
    }

    /// End of the interval on which the control is defined; `None` if unbounded.
    fn horizon(&self) -> Option<f64> {
        None
    }

    /// Constant between consecutive breakpoints.
    fn is_piecewise_constant(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub u: DVector<f64>,
    pub t: f64,
}

/// Piecewise-constant control: segment `i` holds `u_i` for `t_i` time units.
/// Before 0 and after the last switching time the end values are held.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    segments: Vec<Segment>,
    ends: Vec<f64>,
    dim: usize,
}

impl ControlSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self, SimulateError> {
        let dim = segments.first().map_or(0, |s| s.u.len());
        let mut ends = Vec::with_capacity(segments.len());
        let mut acc = 0.0;
        for (i, s) in segments.iter().enumerate() {
            if s.u.len() != dim {
                return Err(SimulateError::InvalidControl(format!(
                    "segment {i} has input dimension {}, expected {dim}",
                    s.u.len()
                )));
            }
            if !(s.t >= 0.0) || !s.t.is_finite() {
                return Err(SimulateError::InvalidControl(format!("segment {i} has duration {}", s.t)));
            }
            if s.u.iter().any(|v| !v.is_finite()) {
                return Err(SimulateError::InvalidControl(format!("segment {i} has a non-finite value")));
            }
            acc += s.t;
            ends.push(acc);
        }
        Ok(Self { segments, ends, dim })
    }

    pub fn from_pairs(pairs: &[(Vec<f64>, f64)]) -> Result<Self, SimulateError> {
        Self::new(pairs.iter().map(|(u, t)| Segment { u: DVector::from_column_slice(u), t: *t }).collect())
    }

    pub fn constant(u: DVector<f64>, duration: f64) -> Self {
        Self::new(vec![Segment { u, t: duration }]).expect("constant schedule")
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.ends.last().copied().unwrap_or(0.0)
    }

    /// Cumulative switching times `e_1, …, e_k`.
    pub fn cumulative_times(&self) -> &[f64] {
        &self.ends
    }

    pub fn min_positive_duration(&self) -> Option<f64> {
        self.segments.iter().map(|s| s.t).filter(|t| *t > 0.0).min_by(f64::total_cmp)
    }

    /// Times where the held value actually changes.
    pub fn switching_times(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut prev: Option<&DVector<f64>> = None;
        for (s, start) in self.segments.iter().zip(std::iter::once(0.0).chain(self.ends.iter().copied())) {
            if s.t <= 0.0 {
                continue;
            }
            if let Some(p) = prev {
                if p != &s.u {
                    out.push(start);
                }
            }
            prev = Some(&s.u);
        }
        out
    }

    fn index_right(&self, t: f64) -> usize {
        // first segment with positive length whose end exceeds t
        let k = self.ends.partition_point(|e| *e <= t);
        self.nonempty_from(k)
    }

    fn index_left(&self, t: f64) -> usize {
        let k = self.ends.partition_point(|e| *e < t);
        self.nonempty_from(k)
    }

    fn nonempty_from(&self, k: usize) -> usize {
        let n = self.segments.len();
        (k..n)
            .find(|i| self.segments[*i].t > 0.0)
            .or_else(|| (0..k.min(n)).rev().find(|i| self.segments[*i].t > 0.0))
            .unwrap_or(n.saturating_sub(1))
    }

    /// Same schedule with values negated.
    pub fn negated(&self) -> Self {
        Self::new(self.segments.iter().map(|s| Segment { u: -&s.u, t: s.t }).collect()).expect("valid")
    }

    pub fn to_file(&self) -> ScheduleFile {
        ScheduleFile {
            segments: self.segments.iter().map(|s| FileSegment { u: s.u.iter().copied().collect(), t: s.t }).collect(),
        }
    }
}

impl Control for ControlSchedule {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn value(&self, t: f64) -> DVector<f64> {
        if self.segments.is_empty() {
            return DVector::zeros(0);
        }
        self.segments[self.index_right(t)].u.clone()
    }

    fn value_left(&self, t: f64) -> DVector<f64> {
        if self.segments.is_empty() {
            return DVector::zeros(0);
        }
        self.segments[self.index_left(t)].u.clone()
    }

    fn breakpoints(&self, horizon: f64) -> Vec<f64> {
        self.switching_times().into_iter().filter(|t| *t > 0.0 && *t < horizon).collect()
    }

    fn horizon(&self) -> Option<f64> {
        Some(self.total_duration())
    }

    fn is_piecewise_constant(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileSegment {
    pub u: Vec<f64>,
    pub t: f64,
}

/// JSON form `{"segments":[{"u":[1.0],"t":0.5}, …]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub segments: Vec<FileSegment>,
}

impl ScheduleFile {
    pub fn into_schedule(self) -> Result<ControlSchedule, SimulateError> {
        ControlSchedule::new(self.segments.into_iter().map(|s| Segment { u: DVector::from_vec(s.u), t: s.t }).collect())
    }
}

/// Uniformly sampled control with linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledControl {
    pub horizon: f64,
    pub step: f64,
    pub samples: Vec<DVector<f64>>,
}

impl SampledControl {
    /// Samples `f` at `0, step, 2 step, …, floor(horizon/step) step`.
    pub fn from_fn<F>(horizon: f64, step: f64, f: F) -> Result<Self, SimulateError>
    where
        F: Fn(f64) -> DVector<f64>,
    {
        if !(horizon > 0.0) || !(step > 0.0) {
            return Err(SimulateError::InvalidControl("horizon and step must be positive".into()));
        }
        let count = (horizon / step + 1e-9).floor() as usize + 1;
        let samples: Vec<_> = (0..count).map(|i| f(i as f64 * step)).collect();
        if samples.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(SimulateError::InvalidControl("non-finite sample".into()));
        }
        Ok(Self { horizon, step, samples })
    }
}

impl Control for SampledControl {
    fn input_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.len())
    }

    fn value(&self, t: f64) -> DVector<f64> {
        let last = self.samples.len() - 1;
        if t <= 0.0 {
            return self.samples[0].clone();
        }
        let pos = t / self.step;
        let i = pos.floor() as usize;
        if i >= last {
            return self.samples[last].clone();
        }
        let w = pos - i as f64;
        &self.samples[i] * (1.0 - w) + &self.samples[i + 1] * w
    }

    fn quadrature_nodes(&self, horizon: f64) -> Vec<f64> {
        (1..self.samples.len()).map(|i| i as f64 * self.step).filter(|t| *t < horizon).collect()
    }

    fn horizon(&self) -> Option<f64> {
        Some(self.horizon)
    }
}

/// Smooth control given by a closure, defined for all `t`.
#[derive(Clone)]
pub struct FnControl {
    dim: usize,
    f: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
}

impl FnControl {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        Self { dim, f: Arc::new(f) }
    }
}

impl std::fmt::Debug for FnControl {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnControl").field("dim", &self.dim).finish()
    }
}

impl Control for FnControl {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn value(&self, t: f64) -> DVector<f64> {
        (self.f)(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn schedule_is_right_continuous() {
        let s = ControlSchedule::from_pairs(&[(vec![1.0], 0.5), (vec![2.0], 0.0), (vec![3.0], 0.5)]).unwrap();
        assert_eq!(s.value(0.0), dv(&[1.0]));
        assert_eq!(s.value(0.49), dv(&[1.0]));
        assert_eq!(s.value(0.5), dv(&[3.0]));
        assert_eq!(s.value_left(0.5), dv(&[1.0]));
        assert_eq!(s.value(2.0), dv(&[3.0]));
        assert_eq!(s.value(-1.0), dv(&[1.0]));
        assert_eq!(s.breakpoints(1.0), vec![0.5]);
        assert_eq!(s.switching_times(), vec![0.5]);
        assert_eq!(s.total_duration(), 1.0);
        assert_eq!(s.min_positive_duration(), Some(0.5));
    }

    #[test]
    fn schedule_validation() {
        assert!(ControlSchedule::from_pairs(&[(vec![1.0], -0.1)]).is_err());
        assert!(ControlSchedule::from_pairs(&[(vec![1.0], 0.1), (vec![1.0, 2.0], 0.1)]).is_err());
        assert!(ControlSchedule::from_pairs(&[(vec![f64::NAN], 0.1)]).is_err());
    }

    #[test]
    fn schedule_file_roundtrip() {
        let text = r#"{"segments":[{"u":[1.0],"t":0.5},{"u":[-1.0],"t":0.25}]}"#;
        let file: ScheduleFile = serde_json::from_str(text).unwrap();
        let s = file.clone().into_schedule().unwrap();
        assert_eq!(s.total_duration(), 0.75);
        assert_eq!(s.to_file(), file);
    }

    #[test]
    fn sampled_control_interpolates() {
        let c = SampledControl::from_fn(1.0, 0.25, |t| dv(&[4.0 * t])).unwrap();
        assert_eq!(c.samples.len(), 5);
        assert!((c.value(0.3)[0] - 1.2).abs() < 1e-12);
        assert_eq!(c.value(5.0)[0], 4.0);
        assert_eq!(c.quadrature_nodes(1.0), vec![0.25, 0.5, 0.75]);
        let c = SampledControl::from_fn(1.0, 0.3, |_| dv(&[0.0])).unwrap();
        assert_eq!(c.samples.len(), 4);
    }
}
