//! Fixed-step integration of controlled ODEs and the experiments built on it:
//! flow composition, the switching-time Jacobian used for normal
//! reachability, control distances and the input-to-endpoint continuity
//! experiment.
//!
//! Integration is classical RK4. Step boundaries are aligned to every jump
//! of the control, so no step straddles a discontinuity: each interval
//! between jumps of length `L` is split into `ceil(L / h)` equal steps.

mod control;
mod trajectory;

pub use control::{Control, ControlSchedule, FileSegment, FnControl, SampledControl, ScheduleFile, Segment};
pub use trajectory::Trajectory;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::systems::VectorField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error("invalid step or horizon: {0}")]
    InvalidStep(String),
    #[error("step {h} exceeds the shortest control interval {min_interval}")]
    StepTooLarge { h: f64, min_interval: f64 },
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("DimensionError: {0}")]
    Dimension(String),
    #[error("control covers [0, {available}] but [0, {required}] was requested")]
    HorizonMismatch { available: f64, required: f64 },
    #[error("invalid control: {0}")]
    InvalidControl(String),
    #[error("speed bound violated at t = {t}: |x(t) - x0| = {distance} > {bound}")]
    SpeedBound { t: f64, distance: f64, bound: f64 },
}

/// One classical RK4 step. `rhs(t, x, at_end)`; `at_end` marks the stage
/// evaluated at `t + dt`, where the control's left limit applies.
pub(crate) fn rk4_step<R>(rhs: &mut R, t: f64, x: &DVector<f64>, dt: f64) -> DVector<f64>
where
    R: FnMut(f64, &DVector<f64>, bool) -> DVector<f64>,
{
    let half = 0.5 * dt;
    let k1 = rhs(t, x, false);
    let k2 = rhs(t + half, &(x + &k1 * half), false);
    let k3 = rhs(t + half, &(x + &k2 * half), false);
    let k4 = rhs(t + dt, &(x + &k3 * dt), true);
    x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0)
}

fn step_count(len: f64, h: f64) -> usize {
    ((len / h) - 1e-9).ceil().max(1.0) as usize
}

/// Integrates over consecutive knots `0 = k_0 < … < k_N = T`, with equal
/// substeps of size at most `h` inside each knot interval.
pub(crate) fn integrate_knots<R>(
    mut rhs: R,
    x0: &DVector<f64>,
    knots: &[f64],
    h: f64,
) -> Result<Trajectory, SimulateError>
where
    R: FnMut(f64, &DVector<f64>, bool) -> DVector<f64>,
{
    let mut traj = Trajectory { times: vec![knots[0]], states: vec![x0.clone()], controls: None };
    let mut x = x0.clone();
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let steps = step_count(b - a, h);
        let dt = (b - a) / steps as f64;
        for j in 0..steps {
            let t = a + j as f64 * dt;
            let end = if j + 1 == steps { b } else { a + (j + 1) as f64 * dt };
            let mut local = |s: f64, y: &DVector<f64>, at_end: bool| rhs(s, y, at_end && j + 1 == steps);
            x = rk4_step(&mut local, t, &x, end - t);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SimulateError::NonFiniteState { t: end });
            }
            traj.times.push(end);
            traj.states.push(x.clone());
        }
    }
    Ok(traj)
}

fn check_common<F: VectorField + ?Sized>(
    field: &F,
    x0: &DVector<f64>,
    control: &dyn Control,
    horizon: f64,
    h: f64,
) -> Result<(), SimulateError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(SimulateError::InvalidStep(format!("h = {h}")));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(SimulateError::InvalidStep(format!("T = {horizon}")));
    }
    if x0.len() != field.state_dim() {
        return Err(SimulateError::Dimension(format!(
            "x0 has length {}, field expects {}",
            x0.len(),
            field.state_dim()
        )));
    }
    if control.input_dim() != field.input_dim() {
        return Err(SimulateError::Dimension(format!(
            "control has dimension {}, field expects {}",
            control.input_dim(),
            field.input_dim()
        )));
    }
    Ok(())
}

/// Checks `|x(t) - x0|_∞ ≤ bound · t` along a trajectory.
pub fn check_speed_bound(traj: &Trajectory, bound: f64) -> Result<(), SimulateError> {
    let Some(x0) = traj.states.first() else { return Ok(()) };
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let distance = (x - x0).amax();
        let allowed = bound * t * (1.0 + 1e-12) + 1e-15;
        if distance > allowed {
            return Err(SimulateError::SpeedBound { t: *t, distance, bound: allowed });
        }
    }
    Ok(())
}

/// RK4 solution of `ẋ = f(x, u(t))` on `[0, T]` with step at most `h`,
/// aligned to the control's jumps. The applied input is recorded.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    x0: &DVector<f64>,
    control: &dyn Control,
    horizon: f64,
    h: f64,
) -> Result<Trajectory, SimulateError> {
    check_common(field, x0, control, horizon, h)?;
    let mut knots = vec![0.0];
    knots.extend(control.breakpoints(horizon));
    knots.push(horizon);
    let min_interval = knots.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if h > min_interval * (1.0 + 1e-12) {
        return Err(SimulateError::StepTooLarge { h, min_interval });
    }

    let mut traj = integrate_knots(
        |t, x, at_end| {
            let u = if at_end { control.value_left(t) } else { control.value(t) };
            field.eval(x, &u)
        },
        x0,
        &knots,
        h,
    )?;
    traj.controls = Some(traj.times.iter().map(|t| control.value(*t)).collect());
    if let Some(bound) = field.speed_bound() {
        check_speed_bound(&traj, bound)?;
    }
    Ok(traj)
}

/// RK4 solution of an autonomous closed loop `ẋ = g(x)` with equal steps.
pub fn integrate_autonomous<G>(mut g: G, x0: &DVector<f64>, horizon: f64, h: f64) -> Result<Trajectory, SimulateError>
where
    G: FnMut(&DVector<f64>) -> DVector<f64>,
{
    if !(h > 0.0) || !(horizon > 0.0) || !h.is_finite() || !horizon.is_finite() {
        return Err(SimulateError::InvalidStep(format!("h = {h}, T = {horizon}")));
    }
    integrate_knots(|_, x, _| g(x), x0, &[0.0, horizon], h)
}

/// Endpoint of `φ_{u_k}^{t_k} ∘ ⋯ ∘ φ_{u_1}^{t_1}(x0)`, integrating each
/// segment on its own clock.
pub fn flow_composition<F: VectorField + ?Sized>(
    field: &F,
    x0: &DVector<f64>,
    schedule: &ControlSchedule,
    h: f64,
) -> Result<DVector<f64>, SimulateError> {
    let mut x = x0.clone();
    for seg in schedule.segments() {
        if seg.t <= 0.0 {
            continue;
        }
        let piece = ControlSchedule::constant(seg.u.clone(), seg.t);
        let traj = integrate(field, &x, &piece, seg.t, h)?;
        x = traj.states.last().cloned().expect("nonempty trajectory");
    }
    Ok(x)
}

/// Composition with a fixed number of RK4 steps per segment, so the endpoint
/// is a smooth function of the durations.
fn compose_fixed_steps<F: VectorField + ?Sized>(
    field: &F,
    x0: &DVector<f64>,
    values: &[DVector<f64>],
    durations: &[f64],
    steps: &[usize],
) -> Result<DVector<f64>, SimulateError> {
    let mut x = x0.clone();
    for ((u, &len), &n) in values.iter().zip(durations).zip(steps) {
        let dt = len / n as f64;
        let mut rhs = |_: f64, y: &DVector<f64>, _: bool| field.eval(y, u);
        for j in 0..n {
            x = rk4_step(&mut rhs, j as f64 * dt, &x, dt);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimulateError::NonFiniteState { t: durations.iter().sum() });
        }
    }
    Ok(x)
}

/// Relative singular-value threshold for the normal-reachability rank.
pub const JACOBIAN_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    /// `n × k` derivative of the endpoint with respect to the durations.
    pub jacobian: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// Rank equals the state dimension.
    pub normal: bool,
}

/// Central-difference Jacobian of `(s_1, …, s_k) ↦ φ_{u_k}^{s_k} ∘ ⋯ ∘ φ_{u_1}^{s_1}(x0)`
/// at the schedule's durations, with its numerical rank.
pub fn reachability_jacobian<F: VectorField + ?Sized>(
    field: &F,
    x0: &DVector<f64>,
    schedule: &ControlSchedule,
    h: f64,
) -> Result<JacobianReport, SimulateError> {
    if schedule.is_empty() {
        return Err(SimulateError::InvalidControl("schedule must have at least one segment".into()));
    }
    if schedule.segments().iter().any(|s| !(s.t > 0.0)) {
        return Err(SimulateError::InvalidControl("all durations must be positive".into()));
    }
    if !(h > 0.0) {
        return Err(SimulateError::InvalidStep(format!("h = {h}")));
    }
    check_common(field, x0, schedule, schedule.total_duration(), h)?;

    let values: Vec<DVector<f64>> = schedule.segments().iter().map(|s| s.u.clone()).collect();
    let durations: Vec<f64> = schedule.segments().iter().map(|s| s.t).collect();
    let steps: Vec<usize> = durations.iter().map(|t| step_count(*t, h)).collect();
    let (n, k) = (x0.len(), durations.len());

    let mut jac = DMatrix::zeros(n, k);
    for i in 0..k {
        let delta = (1e-6 * durations[i]).max(1e-6);
        let mut plus = durations.clone();
        plus[i] += delta;
        let mut minus = durations.clone();
        minus[i] -= delta;
        let fp = compose_fixed_steps(field, x0, &values, &plus, &steps)?;
        let fm = compose_fixed_steps(field, x0, &values, &minus, &steps)?;
        jac.set_column(i, &((fp - fm) / (2.0 * delta)));
    }

    let singular_values: Vec<f64> = jac.clone().svd(false, false).singular_values.iter().copied().collect();
    let smax = singular_values.iter().copied().fold(0.0, f64::max);
    let rank = if smax > 0.0 { singular_values.iter().filter(|s| **s > JACOBIAN_RANK_TOL * smax).count() } else { 0 };
    Ok(JacobianReport { jacobian: jac, singular_values, rank, normal: rank == n })
}

/// Trapezoid panels per unit of horizon used between nodes in [`control_distance`].
const DISTANCE_PANELS: f64 = 4096.0;

/// `∫_0^T |u(t) - v(t)|_1 dt`. Exact for piecewise-constant inputs; for
/// sampled or smooth inputs the trapezoid rule is applied on panels that
/// respect every jump and sample node.
pub fn control_distance(u: &dyn Control, v: &dyn Control, horizon: f64) -> Result<f64, SimulateError> {
    if !(horizon > 0.0) {
        return Err(SimulateError::InvalidStep(format!("T = {horizon}")));
    }
    for c in [u, v] {
        if let Some(available) = c.horizon() {
            if available < horizon * (1.0 - 1e-12) {
                return Err(SimulateError::HorizonMismatch { available, required: horizon });
            }
        }
    }
    if u.input_dim() != v.input_dim() {
        return Err(SimulateError::Dimension("controls differ in dimension".into()));
    }
    let mut nodes = vec![0.0, horizon];
    nodes.extend(u.quadrature_nodes(horizon));
    nodes.extend(v.quadrature_nodes(horizon));
    nodes.retain(|t| *t >= 0.0 && *t <= horizon);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();

    let piecewise_constant = u.is_piecewise_constant() && v.is_piecewise_constant();

    let gap = |a: &DVector<f64>, b: &DVector<f64>| (a - b).lp_norm(1);
    let mut total = 0.0;
    for w in nodes.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let panels =
            if piecewise_constant { 1 } else { ((b - a) * DISTANCE_PANELS / horizon).ceil().max(1.0) as usize };
        let dt = (b - a) / panels as f64;
        let mut prev = gap(&u.value(a), &v.value(a));
        for j in 1..=panels {
            let t = if j == panels { b } else { a + j as f64 * dt };
            let next =
                if j == panels { gap(&u.value_left(t), &v.value_left(t)) } else { gap(&u.value(t), &v.value(t)) };
            total += 0.5 * (prev + next) * dt;
            prev = next;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityPoint {
    pub distance: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    /// Sorted by increasing control distance.
    pub points: Vec<ContinuityPoint>,
    /// Deviations are nondecreasing in distance, within 5% plus 1e-10 noise.
    pub monotone: bool,
    /// Smallest `L` with `deviation ≤ L · distance` over the nonzero points.
    pub lipschitz_fit: f64,
}

/// Endpoint deviation `‖φ(T, x0, u) - φ(T, x0, v)‖` against the control
/// distance for each perturbation `v`.
pub fn continuity_experiment<F: VectorField + ?Sized>(
    field: &F,
    x0: &DVector<f64>,
    nominal: &dyn Control,
    perturbations: &[&dyn Control],
    horizon: f64,
    h: f64,
) -> Result<ContinuityReport, SimulateError> {
    let base = integrate(field, x0, nominal, horizon, h)?;
    let base_end = base.last_state().expect("nonempty");
    let mut points = Vec::with_capacity(perturbations.len());
    for v in perturbations {
        let distance = control_distance(nominal, *v, horizon)?;
        let end = integrate(field, x0, *v, horizon, h)?;
        let deviation = (end.last_state().expect("nonempty") - base_end).norm();
        points.push(ContinuityPoint { distance, deviation });
    }
    points.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.deviation.total_cmp(&b.deviation)));
    let monotone = points.windows(2).all(|w| w[0].deviation <= w[1].deviation * 1.05 + 1e-10);
    let lipschitz_fit =
        points.iter().filter(|p| p.distance > 0.0).map(|p| p.deviation / p.distance).fold(0.0, f64::max);
    Ok(ContinuityReport { points, monotone, lipschitz_fit })
}
