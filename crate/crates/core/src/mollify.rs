//! Bump-kernel smoothing of piecewise-constant controls.
//!
//! `ρ_l(t) = c_l exp(-1/(1 - (l t)²))` on `|t| < 1/l`. Convolving a step
//! with `ρ_l` gives the kernel's cumulative integral, so smoothing a
//! schedule only needs a table of that integral.

use std::sync::OnceLock;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulate::{integrate, Control, ControlSchedule, SampledControl, SimulateError};
use crate::systems::VectorField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MollifyError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("smoothing windows overlap: l = {l} must exceed {min_l}")]
    WindowOverlap { l: f64, min_l: f64 },
    #[error("DimensionError: {0}")]
    Dimension(String),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
}

/// Unnormalised unit bump `exp(-1/(1 - s²))` on `(-1, 1)`.
pub fn unit_bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

const TABLE_INTERVALS: usize = 10_000;

// 5-point Gauss-Legendre on [-1, 1]
const GL_NODES: [f64; 5] =
    [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

struct CdfTable {
    c1: f64,
    /// `K_1(s)` at `s = i / TABLE_INTERVALS`, `i = 0..=TABLE_INTERVALS`.
    values: Vec<f64>,
}

fn table() -> &'static CdfTable {
    static TABLE: OnceLock<CdfTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let h = 1.0 / TABLE_INTERVALS as f64;
        let mut partial = Vec::with_capacity(TABLE_INTERVALS + 1);
        partial.push(0.0);
        let mut acc = 0.0;
        for i in 0..TABLE_INTERVALS {
            let mid = (i as f64 + 0.5) * h;
            let cell: f64 = GL_NODES.iter().zip(GL_WEIGHTS).map(|(x, w)| w * unit_bump(mid + 0.5 * h * x)).sum();
            acc += 0.5 * h * cell;
            partial.push(acc);
        }
        let c1 = 0.5 / acc;
        let mut values: Vec<f64> = partial.iter().map(|j| 0.5 + c1 * j).collect();
        values[TABLE_INTERVALS] = 1.0;
        CdfTable { c1, values }
    })
}

/// `c₁ = 1 / ∫_{-1}^{1} exp(-1/(1 - s²)) ds`.
pub fn unit_normalisation() -> f64 {
    table().c1
}

/// Cumulative integral of the unit-scale kernel, by cubic Hermite
/// interpolation of the table (the derivative is the kernel itself).
fn unit_cdf(s: f64) -> f64 {
    if s <= -1.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    if s < 0.0 {
        return 1.0 - unit_cdf(-s);
    }
    let t = table();
    let h = 1.0 / TABLE_INTERVALS as f64;
    let pos = s / h;
    let i = (pos.floor() as usize).min(TABLE_INTERVALS - 1);
    let w = pos - i as f64;
    let (s0, s1) = (i as f64 * h, (i + 1) as f64 * h);
    let (y0, y1) = (t.values[i], t.values[i + 1]);
    let (d0, d1) = (t.c1 * unit_bump(s0) * h, t.c1 * unit_bump(s1) * h);
    let w2 = w * w;
    let w3 = w2 * w;
    (2.0 * w3 - 3.0 * w2 + 1.0) * y0 + (w3 - 2.0 * w2 + w) * d0 + (-2.0 * w3 + 3.0 * w2) * y1 + (w3 - w2) * d1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpKernel {
    pub l: f64,
    pub c_l: f64,
}

impl BumpKernel {
    pub fn new(l: f64) -> Result<Self, MollifyError> {
        if !(l > 0.0) || !l.is_finite() {
            return Err(MollifyError::Domain(format!("kernel scale l = {l} must be positive")));
        }
        Ok(Self { l, c_l: l * unit_normalisation() })
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.c_l * unit_bump(self.l * t)
    }

    /// `∫_{-∞}^t ρ_l`.
    pub fn cdf(&self, t: f64) -> f64 {
        unit_cdf(self.l * t)
    }

    pub fn half_width(&self) -> f64 {
        1.0 / self.l
    }
}

pub fn kernel_eval(l: f64, t: f64) -> Result<f64, MollifyError> {
    Ok(BumpKernel::new(l)?.eval(t))
}

#[derive(Debug, Clone, PartialEq)]
struct Switch {
    at: f64,
    before: DVector<f64>,
    after: DVector<f64>,
}

/// `ρ_l * u` for a piecewise-constant `u`, evaluated exactly from the CDF.
/// The first and last values extend to `∓∞`, so only interior switches are
/// smoothed.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedSchedule {
    kernel: BumpKernel,
    schedule: ControlSchedule,
    switches: Vec<Switch>,
}

impl SmoothedSchedule {
    /// Requires `l > 2 / d`, with `d` the shortest gap between switches,
    /// so no two smoothing windows overlap.
    pub fn new(schedule: &ControlSchedule, l: f64) -> Result<Self, MollifyError> {
        let kernel = BumpKernel::new(l)?;
        let times = schedule.switching_times();
        if let Some(gap) = times.windows(2).map(|w| w[1] - w[0]).min_by(f64::total_cmp) {
            let min_l = 2.0 / gap;
            if l <= min_l {
                return Err(MollifyError::WindowOverlap { l, min_l });
            }
        }
        let switches = times
            .into_iter()
            .map(|at| Switch { at, before: schedule.value_left(at), after: schedule.value(at) })
            .collect();
        Ok(Self { kernel, schedule: schedule.clone(), switches })
    }

    pub fn kernel(&self) -> &BumpKernel {
        &self.kernel
    }

    pub fn switch_count(&self) -> usize {
        self.switches.len()
    }
}

impl Control for SmoothedSchedule {
    fn input_dim(&self) -> usize {
        self.schedule.input_dim()
    }

    fn value(&self, t: f64) -> DVector<f64> {
        let r = self.kernel.half_width();
        let k = self.switches.partition_point(|s| s.at <= t);
        let near = [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter_map(|i| self.switches.get(i))
            .find(|s| (t - s.at).abs() < r);
        match near {
            Some(s) => {
                let w = self.kernel.cdf(t - s.at);
                &s.before * (1.0 - w) + &s.after * w
            }
            None => self.schedule.value(t),
        }
    }

    fn quadrature_nodes(&self, horizon: f64) -> Vec<f64> {
        let r = self.kernel.half_width();
        self.switches.iter().flat_map(|s| [s.at - r, s.at, s.at + r]).filter(|t| *t > 0.0 && *t < horizon).collect()
    }

    fn horizon(&self) -> Option<f64> {
        Some(self.schedule.total_duration())
    }
}

/// Samples the smoothed control on a uniform grid of about `100 l` points
/// per unit time, ending exactly at the schedule's horizon.
pub fn smooth_control(schedule: &ControlSchedule, l: f64) -> Result<SampledControl, MollifyError> {
    let smooth = SmoothedSchedule::new(schedule, l)?;
    let horizon = schedule.total_duration();
    if !(horizon > 0.0) {
        return Err(MollifyError::Domain("schedule has zero duration".into()));
    }
    let count = (100.0 * l * horizon).ceil().max(1.0);
    let step = horizon / count;
    Ok(SampledControl::from_fn(horizon, step, |t| smooth.value(t))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub l: f64,
    pub error: f64,
}

/// Endpoint error `‖x_l(T) - x(T)‖₂` between the smoothed and the original
/// schedule, for each `l`. Both runs use RK4 with step `h`.
pub fn endpoint_convergence<F: VectorField + ?Sized>(
    field: &F,
    x0: &DVector<f64>,
    schedule: &ControlSchedule,
    l_list: &[f64],
    h: f64,
) -> Result<Vec<ConvergencePoint>, MollifyError> {
    if l_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MollifyError::Domain("l values must be increasing".into()));
    }
    let horizon = schedule.total_duration();
    let smoothed = l_list.iter().map(|l| SmoothedSchedule::new(schedule, *l)).collect::<Result<Vec<_>, _>>()?;
    let reference = integrate(field, x0, schedule, horizon, h)?;
    let target = reference.last_state().expect("nonempty");
    smoothed
        .iter()
        .map(|s| {
            let traj = integrate(field, x0, s, horizon, h)?;
            let end = traj.last_state().expect("nonempty");
            Ok(ConvergencePoint { l: s.kernel.l, error: (end - target).norm() })
        })
        .collect()
}

/// Decreasing with each error at most `1 + slack` times the previous one.
pub fn errors_decrease(points: &[ConvergencePoint], slack: f64) -> bool {
    points.windows(2).all(|w| w[1].error <= w[0].error * (1.0 + slack))
}

pub const COVER_TOL: f64 = 1e-6;
pub const COVER_MAX_ITER: usize = 200;
pub const COVER_DAMPING: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum TargetOutcome {
    Hit { x: Vec<f64>, residual: f64, iterations: usize },
    Diverged { reason: String, residual: f64, iterations: usize },
}

impl TargetOutcome {
    pub fn is_hit(&self) -> bool {
        matches!(self, TargetOutcome::Hit { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub center: Vec<f64>,
    pub nominal_endpoint: Vec<f64>,
    pub targets: Vec<Vec<f64>>,
    pub outcomes: Vec<TargetOutcome>,
}

impl CoverReport {
    pub fn all_hit(&self) -> bool {
        self.outcomes.iter().all(TargetOutcome::is_hit)
    }

    pub fn hits(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_hit()).count()
    }
}

/// Endpoint map `h(x) = φ(T; x, u)` for a fixed control.
pub fn endpoint_map<'a, F: VectorField>(
    field: &'a F,
    control: &'a dyn Control,
    horizon: f64,
    step: f64,
) -> impl Fn(&DVector<f64>) -> Result<DVector<f64>, SimulateError> + 'a {
    move |x| {
        let traj = integrate(field, x, control, horizon, step)?;
        Ok(traj.last_state().cloned().expect("nonempty"))
    }
}

/// For each target `p`, runs `x ← x + ½ (p - h(x))` from `center` and
/// records whether `‖h(x) - p‖ ≤ 1e-6` within 200 iterations.
pub fn fixed_point_cover<F: VectorField>(
    field: &F,
    center: &DVector<f64>,
    control: &dyn Control,
    horizon: f64,
    step: f64,
    targets: &[DVector<f64>],
) -> Result<CoverReport, MollifyError> {
    let h = endpoint_map(field, control, horizon, step);
    let nominal = h(center)?;
    if let Some(bad) = targets.iter().find(|p| p.len() != center.len()) {
        return Err(MollifyError::Dimension(format!("target of length {}, state has {}", bad.len(), center.len())));
    }
    let outcomes = targets.iter().map(|p| solve_target(&h, center, &nominal, p)).collect();
    Ok(CoverReport {
        center: center.iter().copied().collect(),
        nominal_endpoint: nominal.iter().copied().collect(),
        targets: targets.iter().map(|p| p.iter().copied().collect()).collect(),
        outcomes,
    })
}

fn solve_target<H>(h: &H, center: &DVector<f64>, nominal: &DVector<f64>, p: &DVector<f64>) -> TargetOutcome
where
    H: Fn(&DVector<f64>) -> Result<DVector<f64>, SimulateError>,
{
    let mut x = center.clone();
    let mut hx = nominal.clone();
    let start = (p - nominal).norm();
    for it in 0..=COVER_MAX_ITER {
        let gap = p - &hx;
        let residual = gap.norm();
        if residual <= COVER_TOL {
            return TargetOutcome::Hit { x: x.iter().copied().collect(), residual, iterations: it };
        }
        if !residual.is_finite() || residual > 1e3 * start.max(1.0) {
            return TargetOutcome::Diverged { reason: "residual blew up".into(), residual, iterations: it };
        }
        if it == COVER_MAX_ITER {
            return TargetOutcome::Diverged { reason: "iteration limit".into(), residual, iterations: it };
        }
        x += gap * COVER_DAMPING;
        hx = match h(&x) {
            Ok(v) => v,
            Err(e) => return TargetOutcome::Diverged { reason: e.to_string(), residual, iterations: it + 1 },
        };
    }
    unreachable!("loop returns on its last iteration")
}

/// `count` equally spaced points on the circle of radius `r` around a
/// planar point.
pub fn circle_targets(around: &DVector<f64>, r: f64, count: usize) -> Result<Vec<DVector<f64>>, MollifyError> {
    if around.len() != 2 {
        return Err(MollifyError::Dimension(format!(
            "circle targets need a planar point, got length {}",
            around.len()
        )));
    }
    Ok((0..count)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / count as f64;
            DVector::from_column_slice(&[around[0] + r * th.cos(), around[1] + r * th.sin()])
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusTrial {
    pub r: f64,
    pub hits: usize,
    pub targets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverRadius {
    pub trials: Vec<RadiusTrial>,
    /// Largest tested radius up to which every target was hit.
    pub radius: Option<f64>,
}

/// Runs [`fixed_point_cover`] on circles of increasing radius around the
/// nominal endpoint.
pub fn cover_radius<F: VectorField>(
    field: &F,
    center: &DVector<f64>,
    control: &dyn Control,
    horizon: f64,
    step: f64,
    radii: &[f64],
    count: usize,
) -> Result<CoverRadius, MollifyError> {
    let mut radii = radii.to_vec();
    radii.sort_by(f64::total_cmp);
    let nominal = endpoint_map(field, control, horizon, step)(center)?;
    let mut trials = Vec::with_capacity(radii.len());
    let mut radius = None;
    let mut intact = true;
    for r in radii {
        let targets = circle_targets(&nominal, r, count)?;
        let report = fixed_point_cover(field, center, control, horizon, step, &targets)?;
        let hits = report.hits();
        intact &= hits == count;
        if intact {
            radius = Some(r);
        }
        trials.push(RadiusTrial { r, hits, targets: count });
    }
    Ok(CoverRadius { trials, radius })
}

/// `C¹` curve through `γ(0) = y0, γ(i) = u_i, γ(k+1) = yf`, monotone cubic
/// in each component.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringCurve {
    nodes: Vec<DVector<f64>>,
    slopes: Vec<DVector<f64>>,
}

fn pchip_slopes(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    if n == 2 {
        let d = y[1] - y[0];
        return vec![d, d];
    }
    let delta: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let (a, b) = (delta[i - 1], delta[i]);
        if a * b > 0.0 {
            d[i] = 2.0 / (1.0 / a + 1.0 / b);
        }
    }
    let end = |d0: f64, d1: f64| {
        let s = (3.0 * d0 - d1) / 2.0;
        if s.signum() != d0.signum() || d0 == 0.0 {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(delta[0], delta[1]);
    d[n - 1] = end(delta[n - 2], delta[n - 3]);
    d
}

impl SteeringCurve {
    pub fn new(y0: DVector<f64>, inner: Vec<DVector<f64>>, yf: DVector<f64>) -> Result<Self, MollifyError> {
        let mut nodes = Vec::with_capacity(inner.len() + 2);
        nodes.push(y0);
        nodes.extend(inner);
        nodes.push(yf);
        let dim = nodes[0].len();
        if nodes.iter().any(|v| v.len() != dim) {
            return Err(MollifyError::Dimension("curve nodes have different lengths".into()));
        }
        let mut slopes = vec![DVector::zeros(dim); nodes.len()];
        for c in 0..dim {
            let ys: Vec<f64> = nodes.iter().map(|v| v[c]).collect();
            for (i, d) in pchip_slopes(&ys).into_iter().enumerate() {
                slopes[i][c] = d;
            }
        }
        Ok(Self { nodes, slopes })
    }

    /// Parameter range `[0, k + 1]`.
    pub fn span(&self) -> f64 {
        (self.nodes.len() - 1) as f64
    }

    fn locate(&self, tau: f64) -> (usize, f64) {
        let tau = tau.clamp(0.0, self.span());
        let i = (tau.floor() as usize).min(self.nodes.len() - 2);
        (i, tau - i as f64)
    }

    pub fn eval(&self, tau: f64) -> DVector<f64> {
        let (i, w) = self.locate(tau);
        let w2 = w * w;
        let w3 = w2 * w;
        &self.nodes[i] * (2.0 * w3 - 3.0 * w2 + 1.0)
            + &self.slopes[i] * (w3 - 2.0 * w2 + w)
            + &self.nodes[i + 1] * (-2.0 * w3 + 3.0 * w2)
            + &self.slopes[i + 1] * (w3 - w2)
    }

    pub fn derivative(&self, tau: f64) -> DVector<f64> {
        let (i, w) = self.locate(tau);
        let w2 = w * w;
        &self.nodes[i] * (6.0 * w2 - 6.0 * w)
            + &self.slopes[i] * (3.0 * w2 - 4.0 * w + 1.0)
            + &self.nodes[i + 1] * (-6.0 * w2 + 6.0 * w)
            + &self.slopes[i + 1] * (3.0 * w2 - 2.0 * w)
    }
}
