use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Sampled solution path.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Input applied at each sample (right-continuous), when recorded.
    pub controls: Option<Vec<DVector<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn last_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Checks the structural invariants: matching lengths, times starting at
    /// 0 and strictly increasing, finite entries.
    pub fn is_well_formed(&self) -> bool {
        let lengths =
            self.states.len() == self.times.len() && self.controls.as_ref().is_none_or(|c| c.len() == self.times.len());
        let times = self.times.first().is_none_or(|t| *t == 0.0) && self.times.windows(2).all(|w| w[1] > w[0]);
        let finite = self.states.iter().all(|s| s.iter().all(|v| v.is_finite()));
        lengths && times && finite
    }

    /// Appends `other`, dropping its first sample and shifting its clock to
    /// start where `self` ends.
    pub fn concat(&mut self, other: &Trajectory) {
        let offset = self.final_time();
        let skip = usize::from(!self.is_empty());
        self.times.extend(other.times.iter().skip(skip).map(|t| t + offset));
        self.states.extend(other.states.iter().skip(skip).cloned());
        match (&mut self.controls, &other.controls) {
            (Some(mine), Some(theirs)) => mine.extend(theirs.iter().skip(skip).cloned()),
            (None, Some(theirs)) if skip == 0 => self.controls = Some(theirs.clone()),
            _ => self.controls = None,
        }
    }

    /// CSV with columns `t, x1..xn[, u1..um]`.
    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let m = self.controls.as_ref().and_then(|c| c.first()).map_or(0, |u| u.len());
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        for i in 1..=m {
            let _ = write!(out, ",u{i}");
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t}");
            for v in self.states[k].iter() {
                let _ = write!(out, ",{v}");
            }
            if let Some(c) = &self.controls {
                for v in c[k].iter() {
                    let _ = write!(out, ",{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}
