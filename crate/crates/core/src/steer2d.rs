//! Planar nets whose `B` fails the row condition.
//!
//! After normalisation the cases are `B = 0`, one zero row (Form 1:
//! `ẋ = σ(ax + by)`, `ẏ = σ(u)`) and two equal rows (Form 2:
//! `ẋ = σ(ax + u)`, `ẏ = σ(by + u)`). This module builds the invariant
//! half-planes, the ray feedback in the coordinates `x̃ = ax + by`,
//! `ỹ = y`, `v = σ(u)`, and the implicit control that keeps Form 2
//! trajectories on a line through the origin.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{make_tanh, Activation, ActivationError};
use crate::simulate::{integrate, integrate_autonomous, ControlSchedule, SimulateError, Trajectory};
use crate::systems::VectorField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Steer2dError {
    #[error("not canonical: {0}")]
    NotCanonical(String),
    #[error("transform is not invertible when a = 0")]
    NotInvertible,
    #[error("RangeError: |v| = {v} must be below the activation limit")]
    Range { v: f64 },
    #[error("start lies on the singular line x̃ = b ỹ")]
    OnSingularLine,
    #[error("plan is not admissible: {0}")]
    NotAdmissible(String),
    #[error("no sign change in f(s, ·) for base ({x0}, {y0})")]
    NoBracket { x0: f64, y0: f64 },
    #[error("∂f/∂u has the wrong sign at s = {s}, u = {u}: {deriv}")]
    NonMonotone { s: f64, u: f64, deriv: f64 },
    #[error("ratio s = {s} left the lookup range (0, {max}]")]
    KLookupOutOfRange { s: f64, max: f64 },
    #[error("root of f(s, ·) not resolved at s = {s}: |f| = {residual:e}")]
    Unresolved { s: f64, residual: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Activation(#[from] ActivationError),
}

fn pair(v: &DVector<f64>) -> (f64, f64) {
    (v[0], v[1])
}

fn dv2(x: f64, y: f64) -> DVector<f64> {
    DVector::from_column_slice(&[x, y])
}

/// `ẋ = σ(ax + by)`, `ẏ = σ(u)`.
#[derive(Debug, Clone)]
pub struct Form1 {
    pub a: f64,
    pub b: f64,
    pub act: Activation,
}

impl Form1 {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b, act: make_tanh() }
    }

    pub fn transformed(&self) -> Form1Transformed {
        Form1Transformed { a: self.a, b: self.b, act: self.act.clone() }
    }
}

impl VectorField for Form1 {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        dv2(self.act.eval(self.a * x[0] + self.b * x[1]), self.act.eval(u[0]))
    }
    fn speed_bound(&self) -> Option<f64> {
        Some(self.act.limit())
    }
}

/// `ẋ̃ = a σ(x̃) + b v`, `ẏ̃ = v`. The input is `v` itself; plans keep
/// `|v| < 1`.
#[derive(Debug, Clone)]
pub struct Form1Transformed {
    pub a: f64,
    pub b: f64,
    pub act: Activation,
}

impl Form1Transformed {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b, act: make_tanh() }
    }
}

impl VectorField for Form1Transformed {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        dv2(self.a * self.act.eval(x[0]) + self.b * v[0], v[0])
    }
}

/// `ẋ = σ(ax + u)`, `ẏ = σ(by + u)`.
#[derive(Debug, Clone)]
pub struct Form2 {
    pub a: f64,
    pub b: f64,
    pub act: Activation,
}

impl Form2 {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b, act: make_tanh() }
    }
}

impl VectorField for Form2 {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        dv2(self.act.eval(self.a * x[0] + u[0]), self.act.eval(self.b * x[1] + u[0]))
    }
    fn speed_bound(&self) -> Option<f64> {
        Some(self.act.limit())
    }
}

#[derive(Debug, Clone)]
pub enum CanonicalForm {
    /// `B = 0`: no input reaches the state.
    Decoupled {
        a: DMatrix<f64>,
    },
    Form1(Form1),
    Form2(Form2),
}

/// A canonical form together with the coordinate changes that produce it:
/// `swap_xy` exchanges the coordinates, then `negate_y` maps `y ↦ -y`.
/// Inputs are related by feedback and are not tracked.
#[derive(Debug, Clone)]
pub struct Canonicalization {
    pub form: CanonicalForm,
    pub swap_xy: bool,
    pub negate_y: bool,
}

/// Reduces a planar single-input net with normalised `B ∈ {-1, 0, 1}²` to
/// its canonical form.
pub fn canonicalize(b: [f64; 2], a: &DMatrix<f64>, act: &Activation) -> Result<Canonicalization, Steer2dError> {
    if a.shape() != (2, 2) {
        return Err(Steer2dError::NotCanonical(format!("A must be 2×2, got {:?}", a.shape())));
    }
    if b.iter().any(|v| ![-1.0, 0.0, 1.0].contains(v)) {
        return Err(Steer2dError::NotCanonical(format!("B = {b:?} is not normalised to entries in {{-1, 0, 1}}")));
    }
    let result = |form, swap_xy, negate_y| Ok(Canonicalization { form, swap_xy, negate_y });
    match (b[0] != 0.0, b[1] != 0.0) {
        (false, false) => result(CanonicalForm::Decoupled { a: a.clone() }, false, false),
        // the input absorbs the second row's state terms
        (false, true) => {
            result(CanonicalForm::Form1(Form1 { a: a[(0, 0)], b: a[(0, 1)], act: act.clone() }), false, false)
        }
        (true, false) => {
            result(CanonicalForm::Form1(Form1 { a: a[(1, 1)], b: a[(1, 0)], act: act.clone() }), true, false)
        }
        (true, true) => {
            if a[(0, 1)] != 0.0 || a[(1, 0)] != 0.0 {
                return Err(Steer2dError::NotCanonical("equal-row case is only reduced for diagonal A".into()));
            }
            let form = Form2 { a: a[(0, 0)], b: a[(1, 1)], act: act.clone() };
            result(CanonicalForm::Form2(form), false, b[0] != b[1])
        }
    }
}

/// The closed set `{ax + by ≥ offset}`, forward invariant for Form 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub offset: f64,
    /// Lower bound of `d/dt (ax + by)` on the boundary: `|a| σ(c) - |b| σ∞`.
    pub margin: f64,
}

impl HalfPlane {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.value(x, y) >= self.offset
    }

    /// A point on the boundary line, parametrised by `t`.
    pub fn boundary_point(&self, t: f64) -> (f64, f64) {
        let norm2 = self.a * self.a + self.b * self.b;
        let (px, py) = (self.a * self.offset / norm2, self.b * self.offset / norm2);
        (px - self.b * t, py + self.a * t)
    }
}

/// For `|a| > |b|`, `c = σ⁻¹(|b| σ∞ / |a|) + 0.1` and the invariant side is
/// `{ax + by ≥ c}` when `a > 0` and `{ax + by ≥ -c}` when `a < 0`. On that
/// boundary `d/dt (ax + by) = a σ(ax + by) + b σ(u) ≥ |a| σ(c) - |b| σ∞ > 0`.
pub fn invariant_halfplane(f: &Form1) -> Option<HalfPlane> {
    if f.a.abs() <= f.b.abs() {
        return None;
    }
    let lim = f.act.limit();
    let c = f.act.inverse(f.b.abs() * lim / f.a.abs()).ok()? + 0.1;
    let offset = if f.a > 0.0 { c } else { -c };
    let margin = f.a.abs() * f.act.eval(c) - f.b.abs() * lim;
    Some(HalfPlane { a: f.a, b: f.b, c, offset, margin })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfPlaneCertificate {
    pub points: usize,
    pub controls: usize,
    pub min_derivative: f64,
    pub passed: bool,
}

/// Evaluates `d/dt (ax + by)` at `points` random boundary points against
/// `controls` random inputs (plus the saturated extremes `σ(u) = ±σ∞`).
pub fn certify_halfplane(f: &Form1, hp: &HalfPlane, points: usize, controls: usize, seed: u64) -> HalfPlaneCertificate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lim = f.act.limit();
    let mut vs: Vec<f64> = (0..controls).map(|_| f.act.eval(rng.gen_range(-20.0..20.0))).collect();
    vs.extend([lim, -lim]);
    let mut min_derivative = f64::INFINITY;
    for _ in 0..points {
        let (x, y) = hp.boundary_point(rng.gen_range(-10.0..10.0));
        let drift = f.a * f.act.eval(f.a * x + f.b * y);
        for v in &vs {
            min_derivative = min_derivative.min(drift + f.b * v);
        }
    }
    HalfPlaneCertificate { points, controls: vs.len(), min_derivative, passed: min_derivative > 0.0 }
}

/// `(x, y, u) ↦ (ax + by, y, σ(u))`.
pub fn transform_f1(f: &Form1, x: f64, y: f64, u: f64) -> (f64, f64, f64) {
    (f.a * x + f.b * y, y, f.act.eval(u))
}

pub fn inverse_transform_f1(f: &Form1, xt: f64, yt: f64, v: f64) -> Result<(f64, f64, f64), Steer2dError> {
    if f.a == 0.0 {
        return Err(Steer2dError::NotInvertible);
    }
    let u = f.act.inverse(v).map_err(|_| Steer2dError::Range { v: v.abs() })?;
    Ok(((xt - f.b * yt) / f.a, yt, u))
}

/// Feedback `v = g σ(x̃)` from `(x̃0, ỹ0)`, with `g = a ỹ0 / (x̃0 - b ỹ0)`.
/// The closed loop is `ẋ̃ = κ σ(x̃)`, `κ = a x̃0 / (x̃0 - b ỹ0)`, and the
/// state stays on the ray through the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayPlan {
    pub a: f64,
    pub b: f64,
    pub start: [f64; 2],
    pub gain: f64,
    pub kappa: f64,
    /// `|g| σ(|x̃0|)`, which bounds `|v|` while `|x̃|` decays.
    pub input_bound: f64,
    pub admissible: bool,
}

impl RayPlan {
    /// Same plan with a different gain, for fault injection.
    pub fn with_gain(&self, gain: f64) -> RayPlan {
        RayPlan { gain, ..self.clone() }
    }
}

pub fn ray_plan(ft: &Form1Transformed, start: (f64, f64)) -> Result<RayPlan, Steer2dError> {
    let (x0, y0) = start;
    if x0 == 0.0 && y0 == 0.0 {
        return Err(Steer2dError::Domain("ray plan needs a start away from the origin".into()));
    }
    let denom = x0 - ft.b * y0;
    if denom.abs() <= 1e-12 * x0.abs().max((ft.b * y0).abs()) {
        return Err(Steer2dError::OnSingularLine);
    }
    let gain = ft.a * y0 / denom;
    let kappa = ft.a * x0 / denom;
    let input_bound = gain.abs() * ft.act.eval(x0.abs());
    let admissible = kappa < 0.0 && input_bound < ft.act.limit();
    Ok(RayPlan { a: ft.a, b: ft.b, start: [x0, y0], gain, kappa, input_bound, admissible })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayCertificate {
    /// `max_t |ỹ(t) x̃0 - x̃(t) ỹ0|`.
    pub collinearity_defect: f64,
    pub collinearity_tol: f64,
    pub max_abs_v: f64,
    pub start_norm: f64,
    pub final_norm: f64,
    pub monotone_decay: bool,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaySimulation {
    pub plan: RayPlan,
    pub trajectory: Trajectory,
    pub certificate: RayCertificate,
}

/// Integrates the transformed system under `v = g σ(x̃)` and certifies
/// collinearity, `|v| < 1`, and decay.
pub fn simulate_ray(
    ft: &Form1Transformed,
    plan: &RayPlan,
    horizon: f64,
    h: f64,
) -> Result<RaySimulation, Steer2dError> {
    if !plan.admissible {
        return Err(Steer2dError::NotAdmissible(format!("κ = {}, |g| σ(|x̃0|) = {}", plan.kappa, plan.input_bound)));
    }
    let act = &ft.act;
    let g = plan.gain;
    let feedback = |x: &DVector<f64>| g * act.eval(x[0]);
    let x0 = dv2(plan.start[0], plan.start[1]);
    let mut traj = integrate_autonomous(|x| ft.eval(x, &DVector::from_element(1, feedback(x))), &x0, horizon, h)?;
    traj.controls = Some(traj.states.iter().map(|x| DVector::from_element(1, feedback(x))).collect());

    let (xs, ys) = (plan.start[0], plan.start[1]);
    let start_norm = x0.norm();
    let collinearity_defect = traj.states.iter().map(|x| (x[1] * xs - x[0] * ys).abs()).fold(0.0, f64::max);
    let max_abs_v = traj.controls.iter().flatten().map(|v| v[0].abs()).fold(0.0, f64::max);
    let final_norm = traj.last_state().map_or(start_norm, |x| x.norm());
    let monotone_decay = traj.states.windows(2).all(|w| w[1][0].abs() <= w[0][0].abs());
    let collinearity_tol = 1e-6 * start_norm;
    let certified =
        collinearity_defect <= collinearity_tol && max_abs_v < act.limit() && final_norm < start_norm && monotone_decay;
    Ok(RaySimulation {
        plan: plan.clone(),
        trajectory: traj,
        certificate: RayCertificate {
            collinearity_defect,
            collinearity_tol,
            max_abs_v,
            start_norm,
            final_norm,
            monotone_decay,
            certified,
        },
    })
}

/// Two-phase steering for the transformed Form 1: hold a constant `v` until
/// the state admits an admissible ray plan, then switch to ray feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseResult {
    pub v_hold: f64,
    pub switch_time: f64,
    pub approach: Trajectory,
    pub ray: RaySimulation,
}

pub const HOLD_CANDIDATES: [f64; 5] = [0.0, 0.5, -0.5, 0.9, -0.9];

pub fn two_phase_plan(
    ft: &Form1Transformed,
    start: (f64, f64),
    max_hold: f64,
    ray_horizon: f64,
    h: f64,
) -> Result<TwoPhaseResult, Steer2dError> {
    let admissible_at = |x: &DVector<f64>| ray_plan(ft, pair(x)).ok().filter(|p| p.admissible);
    let x0 = dv2(start.0, start.1);
    let mut best: Option<(f64, f64, Trajectory, RayPlan)> = None;
    for v in HOLD_CANDIDATES {
        let hold = ControlSchedule::constant(DVector::from_element(1, v), max_hold);
        let traj = integrate(ft, &x0, &hold, max_hold, h)?;
        let hit = traj.states.iter().position(|x| admissible_at(x).is_some());
        if let Some(k) = hit {
            let t = traj.times[k];
            if best.as_ref().is_none_or(|b| t < b.1) {
                let plan = admissible_at(&traj.states[k]).expect("checked");
                let approach = Trajectory {
                    times: traj.times[..=k].to_vec(),
                    states: traj.states[..=k].to_vec(),
                    controls: traj.controls.as_ref().map(|c| c[..=k].to_vec()),
                };
                best = Some((v, t, approach, plan));
            }
        }
        if best.as_ref().is_some_and(|b| b.1 == 0.0) {
            break;
        }
    }
    let (v_hold, switch_time, approach, plan) = best.ok_or_else(|| {
        Steer2dError::NotAdmissible(format!("no hold value reaches an admissible ray within {max_hold}"))
    })?;
    let ray = simulate_ray(ft, &plan, ray_horizon, h)?;
    Ok(TwoPhaseResult { v_hold, switch_time, approach, ray })
}

pub const K_TABLE_POINTS: usize = 256;
pub const K_EPS: f64 = 1e-4;
pub const K_RESIDUAL_TOL: f64 = 1e-10;

/// `f(s, u) = y0 σ(s a x0 + u) - x0 σ(s b y0 + u)` and its root `k(s)`.
#[derive(Debug, Clone)]
pub struct ImplicitCurve {
    pub form: Form2,
    pub base: (f64, f64),
    /// `(s, k(s))` on a geometric grid in `[ε, 1]`.
    pub table: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KRoot {
    pub s: f64,
    pub u: f64,
    pub residual: f64,
    /// `sign(y0 - x0) ∂f/∂u`, positive at a simple root.
    pub oriented_slope: f64,
}

fn implicit_f(form: &Form2, base: (f64, f64), s: f64, u: f64) -> (f64, f64) {
    let (x0, y0) = base;
    let p = s * form.a * x0 + u;
    let q = s * form.b * y0 + u;
    let act = &form.act;
    (y0 * act.eval(p) - x0 * act.eval(q), y0 * act.deriv(p) - x0 * act.deriv(q))
}

fn check_base(base: (f64, f64)) -> Result<(), Steer2dError> {
    let (x0, y0) = base;
    if x0 == y0 {
        return Err(Steer2dError::NoBracket { x0, y0 });
    }
    if !(x0 * y0 > 0.0) {
        return Err(Steer2dError::Domain(format!("base ({x0}, {y0}) must have x0 y0 > 0")));
    }
    Ok(())
}

/// Root of `f(s, ·)` by an expanding bracket, bisection, then safeguarded
/// Newton; `guess` seeds the bracket.
fn solve_k(form: &Form2, base: (f64, f64), s: f64, guess: f64) -> Result<KRoot, Steer2dError> {
    check_base(base)?;
    let (x0, y0) = base;
    let orient = (y0 - x0).signum();
    let g = |u: f64| {
        let (f, d) = implicit_f(form, base, s, u);
        (orient * f, orient * d)
    };
    // g increases from -(|y0 - x0|) to +|y0 - x0|
    let mut width = 1.0;
    let (mut lo, mut hi) = (guess - width, guess + width);
    let mut expansions = 0;
    while g(lo).0 > 0.0 || g(hi).0 < 0.0 {
        width *= 2.0;
        lo = guess - width;
        hi = guess + width;
        expansions += 1;
        if expansions > 60 {
            return Err(Steer2dError::NoBracket { x0, y0 });
        }
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if g(mid).0 < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut u = 0.5 * (lo + hi);
    for _ in 0..50 {
        let (fv, d) = g(u);
        if fv == 0.0 {
            break;
        }
        if fv < 0.0 {
            lo = lo.max(u);
        } else {
            hi = hi.min(u);
        }
        let mut next = u - fv / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let done = (next - u).abs() <= 4.0 * f64::EPSILON * u.abs().max(1e-300);
        u = next;
        if done {
            break;
        }
    }
    let (fv, d) = g(u);
    let residual = fv.abs();
    if residual > K_RESIDUAL_TOL {
        return Err(Steer2dError::Unresolved { s, residual });
    }
    if !(d > 0.0) {
        return Err(Steer2dError::NonMonotone { s, u, deriv: orient * d });
    }
    Ok(KRoot { s, u, residual, oriented_slope: d })
}

impl ImplicitCurve {
    pub fn new(form: Form2, base: (f64, f64)) -> Result<Self, Steer2dError> {
        check_base(base)?;
        let ratio = (1.0 / K_EPS).powf(1.0 / (K_TABLE_POINTS - 1) as f64);
        let mut table = Vec::with_capacity(K_TABLE_POINTS);
        let mut guess = 0.0;
        for i in 0..K_TABLE_POINTS {
            let s = if i + 1 == K_TABLE_POINTS { 1.0 } else { K_EPS * ratio.powi(i as i32) };
            let root = solve_k(&form, base, s, guess)?;
            guess = root.u;
            table.push((s, root.u));
        }
        Ok(Self { form, base, table })
    }

    pub fn max_s(&self) -> f64 {
        1.0 + K_EPS
    }

    fn warm_start(&self, s: f64) -> f64 {
        let k = self.table.partition_point(|(t, _)| *t < s);
        match (k.checked_sub(1).map(|i| self.table[i]), self.table.get(k)) {
            (Some((s0, u0)), Some((s1, u1))) => u0 + (u1 - u0) * (s - s0) / (s1 - s0),
            (None, Some((s1, u1))) => u1 * s / s1,
            (Some((_, u0)), None) => u0,
            (None, None) => 0.0,
        }
    }

    /// `k(s)` for `s ∈ (0, 1 + ε]`, solved to full precision from a table
    /// warm start.
    pub fn k(&self, s: f64) -> Result<KRoot, Steer2dError> {
        if !(s > 0.0) || s > self.max_s() {
            return Err(Steer2dError::KLookupOutOfRange { s, max: self.max_s() });
        }
        solve_k(&self.form, self.base, s, self.warm_start(s))
    }

    pub fn residual(&self, s: f64, u: f64) -> f64 {
        implicit_f(&self.form, self.base, s, u).0.abs()
    }
}

pub fn implicit_k(f2: &Form2, base: (f64, f64), s: f64) -> Result<KRoot, Steer2dError> {
    if !(s > 0.0) || s > 1.0 + K_EPS {
        return Err(Steer2dError::KLookupOutOfRange { s, max: 1.0 + K_EPS });
    }
    solve_k(f2, base, s, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicitCertificate {
    /// Largest `|ẋ - σ(aξ + u)|`, `|η̇ - σ(bη + u)|` by a five-point stencil.
    pub form2_residual: f64,
    pub ratio_defect: f64,
    pub max_root_residual: f64,
    pub decays: bool,
    pub final_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicitSimulation {
    pub trajectory: Trajectory,
    pub certificate: ImplicitCertificate,
}

/// Integrates `ξ̇ = σ(aξ + k(ξ/x0))` from `ξ(0) = x0`, sets `η = y0 ξ / x0`,
/// and checks that `(ξ, η)` solves Form 2 under `u = k(ξ/x0)`.
pub fn simulate_implicit(curve: &ImplicitCurve, horizon: f64, h: f64) -> Result<ImplicitSimulation, Steer2dError> {
    let (x0, y0) = curve.base;
    let form = &curve.form;
    let control = |xi: f64| curve.k(xi / x0).map(|r| r.u);

    let mut failure: Option<Steer2dError> = None;
    let line = integrate_autonomous(
        |x| {
            let u = match control(x[0]) {
                Ok(u) => u,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            };
            DVector::from_element(1, form.act.eval(form.a * x[0] + u))
        },
        &DVector::from_element(1, x0),
        horizon,
        h,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }

    let mut states = Vec::with_capacity(line.len());
    let mut controls = Vec::with_capacity(line.len());
    let mut max_root_residual: f64 = 0.0;
    for x in &line.states {
        let root = curve.k(x[0] / x0)?;
        max_root_residual = max_root_residual.max(root.residual);
        states.push(dv2(x[0], y0 * x[0] / x0));
        controls.push(DVector::from_element(1, root.u));
    }
    let ratio_defect = states.iter().map(|p| (p[1] / p[0] - y0 / x0).abs()).fold(0.0, f64::max);

    let mut form2_residual: f64 = 0.0;
    for k in 2..states.len().saturating_sub(2) {
        let dt = line.times[k + 1] - line.times[k];
        let fd = |c: usize| {
            (states[k - 2][c] - 8.0 * states[k - 1][c] + 8.0 * states[k + 1][c] - states[k + 2][c]) / (12.0 * dt)
        };
        let rhs = form.eval(&states[k], &controls[k]);
        form2_residual = form2_residual.max((fd(0) - rhs[0]).abs()).max((fd(1) - rhs[1]).abs());
    }

    let decays = states.windows(2).all(|w| w[1][0].abs() <= w[0][0].abs())
        && states.last().is_some_and(|p| p[0].abs() < 1e-2 * x0.abs());
    let final_s = states.last().map_or(1.0, |p| p[0] / x0);
    let trajectory = Trajectory { times: line.times, states, controls: Some(controls) };
    Ok(ImplicitSimulation {
        trajectory,
        certificate: ImplicitCertificate { form2_residual, ratio_defect, max_root_residual, decays, final_s },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalReport {
    pub start: f64,
    pub defects: Vec<f64>,
    pub max_defect: f64,
    pub passed: bool,
}

pub const DIAGONAL_TOL: f64 = 1e-9;

/// For Form 2 with `a = b`, integrates each schedule from `(c, c)` and
/// records `max_t |x(t) - y(t)|`.
pub fn diagonal_invariance_check(
    f2: &Form2,
    c: f64,
    schedules: &[ControlSchedule],
    h: f64,
) -> Result<DiagonalReport, Steer2dError> {
    if f2.a != f2.b {
        return Err(Steer2dError::Domain(format!("diagonal invariance needs a = b, got {} and {}", f2.a, f2.b)));
    }
    let start = dv2(c, c);
    let defects = schedules
        .iter()
        .map(|s| {
            let traj = integrate(f2, &start, s, s.total_duration(), h)?;
            Ok(traj.states.iter().map(|x| (x[0] - x[1]).abs()).fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>, Steer2dError>>()?;
    let max_defect = defects.iter().copied().fold(0.0, f64::max);
    Ok(DiagonalReport { start: c, defects, max_defect, passed: max_defect <= DIAGONAL_TOL })
}

/// Random scalar schedules with values in `[-3, 3]` and durations that are
/// multiples of `grid` between `grid` and `10 grid`.
pub fn random_schedules(count: usize, segments: usize, grid: f64, seed: u64) -> Vec<ControlSchedule> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let pairs: Vec<(Vec<f64>, f64)> =
                (0..segments).map(|_| (vec![rng.gen_range(-3.0..3.0)], grid * rng.gen_range(1..=10) as f64)).collect();
            ControlSchedule::from_pairs(&pairs).expect("valid random schedule")
        })
        .collect()
}

/// The point reflection `(x, y, u) ↦ (-x, -y, -u)`, a symmetry of every
/// net with an odd activation.
pub trait Reflect {
    fn reflect(&self) -> Self;
}

impl Reflect for Trajectory {
    fn reflect(&self) -> Self {
        Trajectory {
            times: self.times.clone(),
            states: self.states.iter().map(|x| -x).collect(),
            controls: self.controls.as_ref().map(|c| c.iter().map(|u| -u).collect()),
        }
    }
}

impl Reflect for RayPlan {
    fn reflect(&self) -> Self {
        RayPlan { start: [-self.start[0], -self.start[1]], ..self.clone() }
    }
}

impl Reflect for ControlSchedule {
    fn reflect(&self) -> Self {
        self.negated()
    }
}

impl Reflect for ImplicitCurve {
    fn reflect(&self) -> Self {
        ImplicitCurve {
            form: self.form.clone(),
            base: (-self.base.0, -self.base.1),
            table: self.table.iter().map(|(s, u)| (*s, -u)).collect(),
        }
    }
}
