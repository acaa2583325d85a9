//! The row condition on `B` that decides complete controllability of a
//! recurrent net, and the certificates that witness its failure.
//!
//! `B` satisfies the condition when every row is nonzero and no two rows
//! agree up to sign. When row `i` is zero, or rows `i` and `j` agree up to a
//! sign, a vector `p ∈ {-1, 0, 1}^n` with `pᵀB = 0` exists for which
//! `sign pᵀσ⃗(Ax + Bu) = sign pᵀAx` regardless of `u`. The functional
//! `pᵀx` is then monotone wherever `pᵀAx` keeps its sign.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{check_admissible, default_grids, Activation, AdmissibilityReport};
use crate::simulate::Trajectory;
use crate::systems::RecurrentNet;

/// Sign comparisons are skipped when `|pᵀAx|` is at most this.
pub const DEAD_BAND: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllabilityError {
    #[error("invalid violation {violation:?} for n = {n}")]
    InvalidViolation { violation: Violation, n: usize },
    #[error("certificate does not annihilate B: |pᵀB| = {residual:e}")]
    CertificateMismatch { residual: f64 },
    #[error("DimensionError: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Violation {
    ZeroRow {
        row: usize,
    },
    /// `row_i = sign · row_j` with `i < j`.
    EqualRows {
        i: usize,
        j: usize,
        sign: i8,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BClassReport {
    pub in_class: bool,
    pub violations: Vec<Violation>,
    pub tolerance: f64,
}

fn row_inf_dist(b: &DMatrix<f64>, i: usize, j: usize, sign: f64) -> f64 {
    (0..b.ncols()).map(|c| (b[(i, c)] - sign * b[(j, c)]).abs()).fold(0.0, f64::max)
}

/// Lists every zero row and every signed row coincidence of `B`, comparing
/// in the max norm with tolerance `tol` (0 for exact comparison).
pub fn b_class_check(b: &DMatrix<f64>, tol: f64) -> BClassReport {
    let n = b.nrows();
    let mut violations = Vec::new();
    for i in 0..n {
        let norm = b.row(i).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if norm <= tol {
            violations.push(Violation::ZeroRow { row: i });
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            for sign in [1i8, -1] {
                if row_inf_dist(b, i, j, f64::from(sign)) <= tol {
                    violations.push(Violation::EqualRows { i, j, sign });
                }
            }
        }
    }
    BClassReport { in_class: violations.is_empty(), violations, tolerance: tol }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub p: Vec<i8>,
    pub kind: Violation,
}

impl Certificate {
    pub fn vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.p.len(), self.p.iter().map(|v| f64::from(*v)))
    }

    /// `max_c |(pᵀB)_c|`.
    pub fn residual(&self, b: &DMatrix<f64>) -> f64 {
        (self.vector().transpose() * b).amax()
    }

    fn support(&self) -> Vec<(usize, f64)> {
        self.p.iter().enumerate().filter(|(_, v)| **v != 0).map(|(i, v)| (i, f64::from(*v))).collect()
    }

    /// Same certificate after permuting coordinates: entry `i` moves to
    /// position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Certificate {
        let mut p = vec![0i8; self.p.len()];
        for (i, v) in self.p.iter().enumerate() {
            p[perm[i]] = *v;
        }
        let kind = match self.kind {
            Violation::ZeroRow { row } => Violation::ZeroRow { row: perm[row] },
            Violation::EqualRows { i, j, sign } => {
                let (a, b) = (perm[i].min(perm[j]), perm[i].max(perm[j]));
                Violation::EqualRows { i: a, j: b, sign }
            }
        };
        Certificate { p, kind }
    }
}

/// Builds `p` from a violation: `e_i`, `e_i - e_j`, or `e_i + e_j`.
pub fn necessity_certificate(violation: Violation, n: usize) -> Result<Certificate, ControllabilityError> {
    let invalid = || ControllabilityError::InvalidViolation { violation, n };
    let mut p = vec![0i8; n];
    match violation {
        Violation::ZeroRow { row } => {
            if row >= n {
                return Err(invalid());
            }
            p[row] = 1;
        }
        Violation::EqualRows { i, j, sign } => {
            if i >= j || j >= n || !(sign == 1 || sign == -1) {
                return Err(invalid());
            }
            p[i] = 1;
            p[j] = -sign;
        }
    }
    Ok(Certificate { p, kind: violation })
}

/// `pᵀσ⃗(w)` for a certificate with at most two nonzero entries, computed
/// so the sign survives when both arguments saturate.
pub fn certificate_functional(act: &Activation, cert: &Certificate, w: &DVector<f64>) -> f64 {
    match cert.support().as_slice() {
        [] => 0.0,
        [(i, pi)] => pi * act.eval(w[*i]),
        [(i, pi), (j, pj)] => {
            // p_j σ(w_j) = p_i σ(p_i p_j w_j) for odd σ and unit p
            pi * act.difference(w[*i], -pi * pj * w[*j])
        }
        many => many.iter().map(|(i, p)| p * act.eval(w[*i])).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateVerification {
    pub samples: usize,
    pub checked: usize,
    pub passed: usize,
    /// Samples with `|pᵀAx| ≤ DEAD_BAND`.
    pub dead_band: usize,
    /// `min sign(pᵀAx) · pᵀσ⃗(Ax + Bu)` over checked samples; positive when all pass.
    pub worst_margin: f64,
    pub failures: Vec<SignFailure>,
}

impl CertificateVerification {
    pub fn all_passed(&self) -> bool {
        self.passed == self.checked
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignFailure {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub p_ax: f64,
    pub p_field: f64,
}

const MAX_RECORDED_FAILURES: usize = 16;

/// Samples `(x, u)` uniformly in `[-box, box]^{n+m}` and checks
/// `sign pᵀσ⃗(Ax + Bu) = sign pᵀAx` outside the dead band.
pub fn verify_certificate(
    net: &RecurrentNet,
    cert: &Certificate,
    samples: usize,
    half_width: f64,
    seed: u64,
) -> Result<CertificateVerification, ControllabilityError> {
    if cert.p.len() != net.n() {
        return Err(ControllabilityError::Dimension(format!(
            "certificate has length {}, net has n = {}",
            cert.p.len(),
            net.n()
        )));
    }
    let residual = cert.residual(&net.b);
    if residual > 1e-12 {
        return Err(ControllabilityError::CertificateMismatch { residual });
    }
    let p = cert.vector();
    let pa = p.transpose() * &net.a;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CertificateVerification {
        samples,
        checked: 0,
        passed: 0,
        dead_band: 0,
        worst_margin: f64::INFINITY,
        failures: Vec::new(),
    };
    for _ in 0..samples {
        let x = DVector::from_fn(net.n(), |_, _| rng.gen_range(-half_width..=half_width));
        let u = DVector::from_fn(net.m(), |_, _| rng.gen_range(-half_width..=half_width));
        let p_ax = (&pa * &x)[0];
        if p_ax.abs() <= DEAD_BAND {
            report.dead_band += 1;
            continue;
        }
        let mut w = &net.a * &x;
        w.gemv(1.0, &net.b, &u, 1.0);
        let p_field = certificate_functional(&net.act, cert, &w);
        let margin = p_ax.signum() * p_field;
        report.checked += 1;
        report.worst_margin = report.worst_margin.min(margin);
        if p_field.signum() == p_ax.signum() && p_field != 0.0 {
            report.passed += 1;
        } else if report.failures.len() < MAX_RECORDED_FAILURES {
            report.failures.push(SignFailure {
                x: x.iter().copied().collect(),
                u: u.iter().copied().collect(),
                p_ax,
                p_field,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneViolation {
    pub t: f64,
    pub slope: f64,
    pub p_ax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub intervals: usize,
    pub checked: usize,
    pub violations: Vec<MonotoneViolation>,
}

impl MonotoneReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Along a sampled trajectory, checks that the difference quotient of
/// `pᵀξ` never has the opposite sign of `pᵀAξ`, on every interval where
/// `pᵀAξ` exceeds `1e-6` in magnitude with one sign at both ends.
pub fn monotone_functional_check(
    traj: &Trajectory,
    p: &[i8],
    a: &DMatrix<f64>,
) -> Result<MonotoneReport, ControllabilityError> {
    if p.len() != a.nrows() || traj.dim() != a.nrows() && !traj.is_empty() {
        return Err(ControllabilityError::Dimension("certificate, A and trajectory disagree".into()));
    }
    let p = DVector::from_iterator(p.len(), p.iter().map(|v| f64::from(*v)));
    let pa = p.transpose() * a;
    let values: Vec<(f64, f64)> = traj.states.iter().map(|x| (p.dot(x), (&pa * x)[0])).collect();
    let mut report = MonotoneReport { intervals: values.len().saturating_sub(1), checked: 0, violations: Vec::new() };
    for k in 0..report.intervals {
        let (v0, g0) = values[k];
        let (v1, g1) = values[k + 1];
        if g0.abs() <= 1e-6 || g1.abs() <= 1e-6 || g0.signum() != g1.signum() {
            continue;
        }
        report.checked += 1;
        let slope = (v1 - v0) / (traj.times[k + 1] - traj.times[k]);
        if slope * g0.signum() < 0.0 {
            report.violations.push(MonotoneViolation { t: traj.times[k], slope, p_ax: g0 });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict")]
pub enum Verdict {
    /// `B` satisfies the row condition. The conclusion also relies on the
    /// activation belonging to the admissible class, which is only checked
    /// on a grid; that report is attached.
    CompletelyControllable {
        assumption: AdmissibilityReport,
    },
    NotControllable {
        certificates: Vec<Certificate>,
    },
}

impl Verdict {
    pub fn is_controllable(&self) -> bool {
        matches!(self, Verdict::CompletelyControllable { .. })
    }

    pub fn certificates(&self) -> Option<&[Certificate]> {
        match self {
            Verdict::NotControllable { certificates } => Some(certificates),
            Verdict::CompletelyControllable { .. } => None,
        }
    }
}

pub fn controllability_verdict(net: &RecurrentNet) -> Verdict {
    let report = b_class_check(&net.b, 0.0);
    if report.in_class {
        let (a, b, s) = default_grids();
        let assumption = check_admissible(&net.act, &a, &b, &s).expect("default grids are valid");
        Verdict::CompletelyControllable { assumption }
    } else {
        let certificates = report
            .violations
            .iter()
            .map(|v| necessity_certificate(*v, net.n()).expect("violation from b_class_check"))
            .collect();
        Verdict::NotControllable { certificates }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::{make_tanh, AdmissibilityVerdict};
    use crate::simulate::{integrate, ControlSchedule};

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn rot_net(b: &[f64]) -> RecurrentNet {
        RecurrentNet::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]), col(b), make_tanh()).unwrap()
    }

    #[test]
    fn class_membership_examples() {
        assert!(b_class_check(&col(&[1.0, 2.0]), 0.0).in_class);
        assert_eq!(b_class_check(&col(&[0.0, 1.0]), 0.0).violations, vec![Violation::ZeroRow { row: 0 }]);
        assert_eq!(
            b_class_check(&col(&[1.0, 1.0]), 0.0).violations,
            vec![Violation::EqualRows { i: 0, j: 1, sign: 1 }]
        );
        assert_eq!(
            b_class_check(&col(&[1.0, -1.0]), 0.0).violations,
            vec![Violation::EqualRows { i: 0, j: 1, sign: -1 }]
        );
    }

    #[test]
    fn tolerance_is_reported_and_used() {
        let b = col(&[1.0, 1.0 + 1e-13]);
        assert!(b_class_check(&b, 0.0).in_class);
        let r = b_class_check(&b, 1e-12);
        assert!(!r.in_class);
        assert_eq!(r.tolerance, 1e-12);
    }

    #[test]
    fn two_zero_rows_report_everything() {
        let r = b_class_check(&col(&[0.0, 0.0]), 0.0);
        assert_eq!(r.violations.len(), 4);
    }

    #[test]
    fn certificates_from_violations() {
        let c = necessity_certificate(Violation::ZeroRow { row: 0 }, 2).unwrap();
        assert_eq!(c.p, vec![1, 0]);
        let c = necessity_certificate(Violation::EqualRows { i: 0, j: 1, sign: 1 }, 2).unwrap();
        assert_eq!(c.p, vec![1, -1]);
        let c = necessity_certificate(Violation::EqualRows { i: 0, j: 1, sign: -1 }, 2).unwrap();
        assert_eq!(c.p, vec![1, 1]);

        assert!(necessity_certificate(Violation::ZeroRow { row: 2 }, 2).is_err());
        assert!(necessity_certificate(Violation::EqualRows { i: 1, j: 1, sign: 1 }, 2).is_err());
        assert!(necessity_certificate(Violation::EqualRows { i: 0, j: 3, sign: 1 }, 2).is_err());
        assert!(necessity_certificate(Violation::EqualRows { i: 0, j: 1, sign: 2 }, 2).is_err());
    }

    #[test]
    fn certificate_sign_identity_holds_on_samples() {
        let net = rot_net(&[1.0, 1.0]);
        let cert = necessity_certificate(Violation::EqualRows { i: 0, j: 1, sign: 1 }, 2).unwrap();
        let r = verify_certificate(&net, &cert, 10_000, 10.0, 3).unwrap();
        assert!(r.all_passed(), "{:?}", r.failures);
        assert_eq!(r.checked + r.dead_band, 10_000);
        assert!(r.worst_margin > 0.0);
    }

    #[test]
    fn mismatched_certificate_is_rejected() {
        let net = rot_net(&[1.0, 2.0]);
        let cert = Certificate { p: vec![1, -1], kind: Violation::EqualRows { i: 0, j: 1, sign: 1 } };
        assert!(matches!(
            verify_certificate(&net, &cert, 10, 1.0, 0),
            Err(ControllabilityError::CertificateMismatch { .. })
        ));
    }

    #[test]
    fn dead_band_samples_are_skipped() {
        // pᵀA = 0, so every sample lands in the dead band
        let net = RecurrentNet::new(DMatrix::from_element(2, 2, 1.0), col(&[1.0, 1.0]), make_tanh()).unwrap();
        let cert = necessity_certificate(Violation::EqualRows { i: 0, j: 1, sign: 1 }, 2).unwrap();
        let r = verify_certificate(&net, &cert, 100, 5.0, 1).unwrap();
        assert_eq!(r.dead_band, 100);
        assert_eq!(r.checked, 0);
    }

    #[test]
    fn functional_is_monotone_along_trajectories() {
        let net = rot_net(&[1.0, 1.0]);
        let cert = necessity_certificate(Violation::EqualRows { i: 0, j: 1, sign: 1 }, 2).unwrap();
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<(Vec<f64>, f64)> = (0..10).map(|_| (vec![rng.gen_range(-3.0..3.0)], 0.2)).collect();
        let sched = ControlSchedule::from_pairs(&pairs).unwrap();
        // pᵀA x = x1 + x2 > 0 at the start
        let traj = integrate(&net, &DVector::from_column_slice(&[0.6, 0.3]), &sched, 2.0, 1e-3).unwrap();
        let report = monotone_functional_check(&traj, &cert.p, &net.a).unwrap();
        assert!(report.checked > 0);
        assert!(report.passed(), "{:?}", report.violations);

        let still =
            integrate(&net, &DVector::zeros(2), &ControlSchedule::constant(DVector::zeros(1), 1.0), 1.0, 0.1).unwrap();
        let report = monotone_functional_check(&still, &cert.p, &net.a).unwrap();
        assert_eq!(report.checked, 0);
        assert!(report.passed());
    }

    #[test]
    fn verdicts() {
        let v = controllability_verdict(&rot_net(&[1.0, 2.0]));
        match &v {
            Verdict::CompletelyControllable { assumption } => {
                assert_eq!(assumption.verdict, AdmissibilityVerdict::Admissible)
            }
            other => panic!("{other:?}"),
        }
        assert!(v.certificates().is_none());

        let v = controllability_verdict(&rot_net(&[1.0, 1.0]));
        assert_eq!(v.certificates().unwrap()[0].p, vec![1, -1]);

        let net = RecurrentNet::new(DMatrix::zeros(3, 3), col(&[0.0, 2.0, 2.0]), make_tanh()).unwrap();
        let v = controllability_verdict(&net);
        let certs = v.certificates().unwrap();
        assert_eq!(certs.len(), 2);
        for c in certs {
            assert_eq!(c.residual(&net.b), 0.0);
        }
    }

    #[test]
    fn permuting_rows_permutes_certificates() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, 0.5, -0.3, 1.0, 0.0, 0.2, -0.4, 0.7, 0.9]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, 0.5, -1.0, -2.0]);
        let net = RecurrentNet::new(a.clone(), b.clone(), make_tanh()).unwrap();
        let cert = controllability_verdict(&net).certificates().unwrap()[0].clone();
        assert_eq!(cert.p, vec![1, 0, 1]);

        let perm = [2usize, 0, 1];
        let mut pa = DMatrix::zeros(3, 3);
        let mut pb = DMatrix::zeros(3, 2);
        for i in 0..3 {
            for j in 0..3 {
                pa[(perm[i], perm[j])] = a[(i, j)];
            }
            pb.set_row(perm[i], &b.row(i));
        }
        let pnet = RecurrentNet::new(pa, pb, make_tanh()).unwrap();
        let pcert = cert.permuted(&perm);
        let r = verify_certificate(&pnet, &pcert, 2_000, 10.0, 5).unwrap();
        assert!(r.all_passed());
    }
}
