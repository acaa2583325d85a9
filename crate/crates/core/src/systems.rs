//! Recurrent, input-affine and cascade network models, plus the affine map
//! `z = A x + B y` that links the recurrent and input-affine forms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{Activation, ActivationError};
use crate::simulate::{Control, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("DimensionError: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("rank {rank} below required {required} (singular value threshold {threshold:e})")]
    RankDeficient { rank: usize, required: usize, threshold: f64 },
    #[error("grid too coarse: {0} samples, need at least 8")]
    GridTooCoarse(usize),
    #[error(transparent)]
    Activation(#[from] ActivationError),
}

/// Right-hand side `f(x, u)` of a controlled ODE.
pub trait VectorField {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Evaluates the field. Callers guarantee the dimensions.
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// Uniform bound on `|f_i|`, when the field is saturating.
    fn speed_bound(&self) -> Option<f64> {
        None
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (**self).eval(x, u)
    }
    fn speed_bound(&self) -> Option<f64> {
        (**self).speed_bound()
    }
}

fn check_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(), SystemError> {
    let n = a.nrows();
    if n == 0 || b.ncols() == 0 {
        return Err(SystemError::Dimension("n and m must be at least 1".into()));
    }
    if a.ncols() != n {
        return Err(SystemError::Dimension(format!("A must be square, got {}x{}", n, a.ncols())));
    }
    if b.nrows() != n {
        return Err(SystemError::Dimension(format!("B has {} rows, A has {}", b.nrows(), n)));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(SystemError::NonFinite("A"));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(SystemError::NonFinite("B"));
    }
    Ok(())
}

fn check_vec(what: &str, v: &DVector<f64>, len: usize) -> Result<(), SystemError> {
    if v.len() != len {
        return Err(SystemError::Dimension(format!("{what} has length {}, expected {len}", v.len())));
    }
    Ok(())
}

/// `ẋ = σ⃗(A x + B u)`.
#[derive(Debug, Clone)]
pub struct RecurrentNet {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub act: Activation,
}

impl RecurrentNet {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, act: Activation) -> Result<Self, SystemError> {
        check_pair(&a, &b)?;
        Ok(Self { a, b, act })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

impl VectorField for RecurrentNet {
    fn state_dim(&self) -> usize {
        self.n()
    }
    fn input_dim(&self) -> usize {
        self.m()
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut z = &self.a * x;
        z.gemv(1.0, &self.b, u, 1.0);
        z.apply(|v| *v = self.act.eval(*v));
        z
    }
    fn speed_bound(&self) -> Option<f64> {
        Some(self.act.limit())
    }
}

/// `σ⃗(A x + B u)` with dimension checks.
pub fn recurrent_field(net: &RecurrentNet, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, SystemError> {
    check_vec("x", x, net.n())?;
    check_vec("u", u, net.m())?;
    Ok(net.eval(x, u))
}

/// `ẋ = A σ⃗(x) + B u`.
#[derive(Debug, Clone)]
pub struct InputAffineNet {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub act: Activation,
}

impl InputAffineNet {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, act: Activation) -> Result<Self, SystemError> {
        check_pair(&a, &b)?;
        Ok(Self { a, b, act })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

impl VectorField for InputAffineNet {
    fn state_dim(&self) -> usize {
        self.n()
    }
    fn input_dim(&self) -> usize {
        self.m()
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let s = x.map(|v| self.act.eval(v));
        let mut out = &self.a * s;
        out.gemv(1.0, &self.b, u, 1.0);
        out
    }
}

pub fn input_affine_field(
    net: &InputAffineNet,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>, SystemError> {
    check_vec("x", x, net.n())?;
    check_vec("u", u, net.m())?;
    Ok(net.eval(x, u))
}

/// The recurrent net driven through an integrator: `ẋ = σ⃗(A x + B y)`,
/// `ẏ = v`. State is `(x, y)` stacked, input is `v`.
#[derive(Debug, Clone)]
pub struct CascadeNet {
    pub base: RecurrentNet,
}

impl CascadeNet {
    pub fn split(&self, state: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.base.n();
        (state.rows(0, n).into_owned(), state.rows(n, self.base.m()).into_owned())
    }
}

impl VectorField for CascadeNet {
    fn state_dim(&self) -> usize {
        self.base.n() + self.base.m()
    }
    fn input_dim(&self) -> usize {
        self.base.m()
    }
    fn eval(&self, state: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let (x, y) = self.split(state);
        let dx = self.base.eval(&x, &y);
        let mut out = DVector::zeros(self.state_dim());
        out.rows_mut(0, dx.len()).copy_from(&dx);
        out.rows_mut(dx.len(), v.len()).copy_from(v);
        out
    }
}

pub fn to_cascade(net: &RecurrentNet) -> CascadeNet {
    CascadeNet { base: net.clone() }
}

/// `A x + B y`.
pub fn affine_state_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>, SystemError> {
    check_pair(a, b)?;
    check_vec("x", x, a.ncols())?;
    check_vec("y", y, b.ncols())?;
    let mut z = a * x;
    z.gemv(1.0, b, y, 1.0);
    Ok(z)
}

/// Relative singular-value threshold for [`affine_preimage`].
pub const PREIMAGE_RANK_TOL: f64 = 1e-10;

/// Minimum-norm `(x, y)` with `A x + B y = z`. Requires `[A B]` to have full
/// row rank.
pub fn affine_preimage(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), SystemError> {
    check_pair(a, b)?;
    let (n, m) = (a.nrows(), b.ncols());
    check_vec("z", z, n)?;
    let mut stacked = DMatrix::zeros(n, n + m);
    stacked.view_mut((0, 0), (n, n)).copy_from(a);
    stacked.view_mut((0, n), (n, m)).copy_from(b);

    let svd = stacked.svd(true, true);
    let smax = svd.singular_values.max();
    let threshold = PREIMAGE_RANK_TOL * smax;
    let rank = svd.singular_values.iter().filter(|s| **s > threshold).count();
    if rank < n || smax == 0.0 {
        return Err(SystemError::RankDeficient { rank, required: n, threshold });
    }
    let sol = svd.solve(z, threshold).map_err(|e| SystemError::Dimension(e.to_string()))?;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportReport {
    pub max_defect: f64,
    pub at_time: f64,
    pub checked: usize,
    /// Samples whose difference stencil straddles a control jump.
    pub skipped: usize,
}

/// Maps a cascade trajectory through `z = A x + B y` and measures how well
/// `z` solves `ż = A σ⃗(z) + B v`, with `ż` from central differences.
pub fn transport_check(
    net: &InputAffineNet,
    cascade_traj: &Trajectory,
    v: &dyn Control,
) -> Result<TransportReport, SystemError> {
    let len = cascade_traj.len();
    if len < 8 {
        return Err(SystemError::GridTooCoarse(len));
    }
    let (n, m) = (net.n(), net.m());
    let zs: Vec<DVector<f64>> = cascade_traj
        .states
        .iter()
        .map(|s| {
            check_vec("cascade state", s, n + m)?;
            let x = s.rows(0, n).into_owned();
            let y = s.rows(n, m).into_owned();
            affine_state_map(&net.a, &net.b, &x, &y)
        })
        .collect::<Result<_, _>>()?;

    let t = &cascade_traj.times;
    let jumps = v.breakpoints(t[len - 1]);
    let mut report = TransportReport { max_defect: 0.0, at_time: 0.0, checked: 0, skipped: 0 };
    for k in 1..len - 1 {
        if jumps.iter().any(|j| *j > t[k - 1] && *j < t[k + 1]) {
            report.skipped += 1;
            continue;
        }
        let dz = (&zs[k + 1] - &zs[k - 1]) / (t[k + 1] - t[k - 1]);
        let rhs = net.eval(&zs[k], &v.value(t[k]));
        let defect = (dz - rhs).amax();
        report.checked += 1;
        if defect > report.max_defect {
            report.max_defect = defect;
            report.at_time = t[k];
        }
    }
    Ok(report)
}

/// On-disk system description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub activation: String,
}

fn to_matrix(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>, SystemError> {
    if rows.len() != nrows {
        return Err(SystemError::Dimension(format!("{name} has {} rows, expected {nrows}", rows.len())));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(SystemError::Dimension(format!("{name} row {i} has {} entries, expected {ncols}", r.len())));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl SystemSpec {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>), SystemError> {
        let a = to_matrix("A", &self.a, self.n, self.n)?;
        let b = to_matrix("B", &self.b, self.n, self.m)?;
        check_pair(&a, &b)?;
        Ok((a, b))
    }

    pub fn recurrent(&self) -> Result<RecurrentNet, SystemError> {
        let (a, b) = self.matrices()?;
        RecurrentNet::new(a, b, Activation::by_name(&self.activation)?)
    }

    pub fn from_net(net: &RecurrentNet) -> Self {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        Self { n: net.n(), m: net.m(), a: rows(&net.a), b: rows(&net.b), activation: net.act.name().to_string() }
    }
}
