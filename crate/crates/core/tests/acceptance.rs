//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rnnctl::activation::{limit_ratio, make_tanh};
use rnnctl::controllability::{b_class_check, controllability_verdict, verify_certificate, Violation};
use rnnctl::mollify::{
    circle_targets, endpoint_convergence, endpoint_map, fixed_point_cover, BumpKernel, SmoothedSchedule, TargetOutcome,
};
use rnnctl::reach::{cells_below, confinement_check, grid_reach, Expansion, ReachOptions, StayIn};
use rnnctl::simulate::{integrate, ControlSchedule, FnControl, Trajectory};
use rnnctl::steer2d::{
    certify_halfplane, diagonal_invariance_check, invariant_halfplane, random_schedules, ray_plan, simulate_implicit,
    simulate_ray, Form1, Form1Transformed, Form2, ImplicitCurve, Reflect,
};
use rnnctl::systems::RecurrentNet;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn rotation_net(b: [f64; 2]) -> RecurrentNet {
    RecurrentNet::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
        DMatrix::from_column_slice(2, 1, &b),
        make_tanh(),
    )
    .unwrap()
}

fn scalars(v: &[f64]) -> Vec<DVector<f64>> {
    v.iter().map(|u| DVector::from_element(1, *u)).collect()
}

/// Row-pair scan written without reference to the library's report type.
fn brute_force_in_class(b: &DMatrix<f64>) -> (bool, usize) {
    let mut count = 0;
    for i in 0..b.nrows() {
        if (0..b.ncols()).all(|c| b[(i, c)] == 0.0) {
            count += 1;
        }
        for j in i + 1..b.nrows() {
            if (0..b.ncols()).all(|c| b[(i, c)] == b[(j, c)]) {
                count += 1;
            }
            if (0..b.ncols()).all(|c| b[(i, c)] == -b[(j, c)]) {
                count += 1;
            }
        }
    }
    (count == 0, count)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut agree, mut crafted, total) = (0, 0, 1000);
    for k in 0..total {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=4);
        let mut b = DMatrix::from_fn(n, m, |_, _| f64::from(rng.gen_range(-2i8..=2)));
        if k % 3 == 0 {
            crafted += 1;
            let i = rng.gen_range(0..n);
            match rng.gen_range(0..3) {
                0 => b.row_mut(i).fill(0.0),
                kind => {
                    let j = rng.gen_range(0..n);
                    let sign = if kind == 1 { 1.0 } else { -1.0 };
                    let row = b.row(j) * sign;
                    b.set_row(i, &row);
                }
            }
        }
        let report = b_class_check(&b, 0.0);
        let (in_class, count) = brute_force_in_class(&b);
        if report.in_class == in_class && report.violations.len() == count {
            agree += 1;
        }
    }
    check(agree == total && crafted >= 100, format!("{agree}/{total} agree, {crafted} crafted degenerate"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut runs, mut checked, mut failures, mut dead) = (0, 0, 0, 0);
    for _ in 0..20 {
        let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-2.0..2.0));
        for kind in 0..3 {
            let mut b = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-2.0..2.0));
            let want = match kind {
                0 => {
                    b.row_mut(1).fill(0.0);
                    Violation::ZeroRow { row: 1 }
                }
                1 => {
                    let r = b.row(0).into_owned();
                    b.set_row(2, &r);
                    Violation::EqualRows { i: 0, j: 2, sign: 1 }
                }
                _ => {
                    let r = -b.row(1).into_owned();
                    b.set_row(3, &r);
                    Violation::EqualRows { i: 1, j: 3, sign: -1 }
                }
            };
            let net = RecurrentNet::new(a.clone(), b, make_tanh()).unwrap();
            let verdict = controllability_verdict(&net);
            let Some(cert) = verdict.certificates().and_then(|c| c.iter().find(|c| c.kind == want)) else {
                return Err(format!("no certificate of kind {want:?}"));
            };
            let r = verify_certificate(&net, cert, 10_000, 10.0, runs as u64).map_err(|e| e.to_string())?;
            runs += 1;
            checked += r.checked;
            dead += r.dead_band;
            failures += r.checked - r.passed;
        }
    }
    check(
        failures == 0,
        format!("{runs} certificates, {checked} samples checked, {dead} in dead band, {failures} sign violations"),
    )
}

fn criterion_3() -> Outcome {
    let act = make_tanh();
    let r = limit_ratio(&act, -1.0, 1.5, 20.0).map_err(|e| e.to_string())?.value;
    // (1 - tanh 29) / (1 - tanh 20) = (e^40 + 1) / (e^58 + 1)
    let analytic = (40f64.exp() + 1.0) / (58f64.exp() + 1.0);
    let within = r < 1e-6 && r / analytic < 3.0 && analytic / r < 3.0;
    let mut decreasing = true;
    for a in [-1.0, 0.0, 2.0] {
        for b in [1.5, 2.0] {
            let vals: Vec<f64> =
                [5.0, 10.0, 15.0, 20.0].iter().map(|s| limit_ratio(&act, a, b, *s).unwrap().value).collect();
            decreasing &= vals.windows(2).all(|w| w[1] < w[0]);
        }
    }
    check(
        within && decreasing,
        format!("ratio {r:.4e} vs analytic {analytic:.4e}, strictly decreasing on grid: {decreasing}"),
    )
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, depth)
}

fn criterion_4() -> Outcome {
    let mut masses = Vec::new();
    for l in [1.0, 10.0, 100.0] {
        let k = BumpKernel::new(l).map_err(|e| e.to_string())?;
        masses.push(simpson(&|t| k.eval(t), -1.0 / l, 1.0 / l, 1e-13, 50));
    }
    let mass_ok = masses.iter().all(|m| (m - 1.0).abs() <= 1e-8);
    let schedule =
        ControlSchedule::from_pairs(&[(vec![1.0], 0.5), (vec![-1.0], 0.5), (vec![2.0], 0.5), (vec![0.0], 0.5)])
            .map_err(|e| e.to_string())?;
    let pts =
        endpoint_convergence(&rotation_net([1.0, 2.0]), &dv(&[0.2, -0.1]), &schedule, &[10.0, 20.0, 40.0, 80.0], 1e-4)
            .map_err(|e| e.to_string())?;
    let strict = pts.windows(2).all(|w| w[1].error < w[0].error);
    let ratio_ok = pts[3].error < pts[0].error / 4.0;
    let errs: Vec<String> = pts.iter().map(|p| format!("{:.2e}", p.error)).collect();
    check(
        mass_ok && strict && ratio_ok,
        format!(
            "max |mass - 1| = {:.1e}; errors at l = 10,20,40,80: [{}]",
            masses.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max),
            errs.join(", ")
        ),
    )
}

fn criterion_5() -> Outcome {
    let net = rotation_net([1.0, 2.0]);
    let schedule = ControlSchedule::from_pairs(&[(vec![1.0], 0.3), (vec![-1.0], 0.3), (vec![2.0], 0.4)])
        .map_err(|e| e.to_string())?;
    let control = SmoothedSchedule::new(&schedule, 20.0).map_err(|e| e.to_string())?;
    let center = dv(&[0.1, 0.2]);
    let (horizon, step) = (1.0, 1e-3);
    let h = endpoint_map(&net, &control, horizon, step);
    let nominal = h(&center).map_err(|e| e.to_string())?;
    let targets = circle_targets(&nominal, 0.01, 16).map_err(|e| e.to_string())?;
    let report = fixed_point_cover(&net, &center, &control, horizon, step, &targets).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut hits = 0;
    for (outcome, p) in report.outcomes.iter().zip(&targets) {
        if let TargetOutcome::Hit { x, .. } = outcome {
            let miss = (h(&dv(x)).map_err(|e| e.to_string())? - p).norm();
            worst = worst.max(miss);
            if miss <= 1e-6 {
                hits += 1;
            }
        }
    }
    check(hits == 16, format!("{hits}/16 targets hit, worst ‖h(x*) - p‖ = {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let ft = Form1Transformed::new(1.0, 2.0);
    let plan = ray_plan(&ft, (1.0, 1.0)).map_err(|e| e.to_string())?;
    let sim = simulate_ray(&ft, &plan, 3.16, 1e-3).map_err(|e| e.to_string())?;
    let end = sim.trajectory.last_state().unwrap()[0].abs();
    let c = &sim.certificate;
    let ok = plan.gain == -1.0
        && plan.kappa == -1.0
        && plan.admissible
        && end <= 0.055
        && c.collinearity_defect <= 1e-6
        && c.max_abs_v < 1.0;
    check(
        ok,
        format!(
            "g = {}, κ = {}, |x̃(3.16)| = {end:.4}, collinearity {:.1e}, max |v| = {:.4}",
            plan.gain, plan.kappa, c.collinearity_defect, c.max_abs_v
        ),
    )
}

fn criterion_7() -> Outcome {
    let curve = ImplicitCurve::new(Form2::new(-1.0, -0.5), (2.0, 1.0)).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for k in 1..=100 {
        let s = k as f64 / 100.0;
        let root = curve.k(s).map_err(|e| e.to_string())?;
        worst = worst.max(curve.residual(s, root.u));
    }
    let sim = simulate_implicit(&curve, 20.0, 1e-3).map_err(|e| e.to_string())?;
    let c = &sim.certificate;
    check(
        worst <= 1e-10 && c.form2_residual <= 1e-6 && c.ratio_defect <= 1e-9,
        format!(
            "max |f(s,k(s))| = {worst:.1e}, Form 2 residual {:.1e}, ratio defect {:.1e}, decays: {}",
            c.form2_residual, c.ratio_defect, c.decays
        ),
    )
}

fn criterion_8() -> Outcome {
    let f = Form1::new(2.0, 1.0);
    let hp = invariant_halfplane(&f).ok_or("no half-plane")?;
    let c_ok = (hp.c - (0.5f64.atanh() + 0.1)).abs() < 1e-12 && (hp.c - 0.6493).abs() < 1e-4;
    let cert = certify_halfplane(&f, &hp, 1000, 1000, 8);
    let x0 = dv(&[0.5, 0.5]);
    let controls = scalars(&[-3.0, -1.0, 0.0, 1.0, 3.0]);
    let bounds = [-2.0, 2.0, -2.0, 2.0];
    let mut leaks = Vec::new();
    let mut reached = Vec::new();
    for expansion in [Expansion::CellCenter, Expansion::Representative] {
        let options = ReachOptions { expansion, ..ReachOptions::default() };
        let grid = grid_reach(&f, &x0, bounds, 0.1, &controls, 0.25, &options).map_err(|e| e.to_string())?;
        leaks.push(cells_below(&grid, [hp.a, hp.b], hp.offset).len());
        reached.push(grid.count());
    }
    check(
        c_ok && cert.passed && leaks.iter().all(|l| *l == 0),
        format!(
            "c = {:.4}, min boundary derivative {:.4} over {}×{}, cells past the boundary {:?} (reached {:?})",
            hp.c, cert.min_derivative, cert.points, cert.controls, leaks, reached
        ),
    )
}

fn criterion_9() -> Outcome {
    let controls = scalars(&[-3.0, -1.0, 0.0, 1.0, 3.0]);
    let bounds = [-1.0, 1.0, -1.0, 1.0];
    let options = ReachOptions { margin: 0.5, ..ReachOptions::default() };
    let grid = grid_reach(&rotation_net([1.0, 2.0]), &dv(&[0.0, 0.0]), bounds, 0.1, &controls, 0.25, &options)
        .map_err(|e| e.to_string())?;
    let unpadded =
        grid_reach(&rotation_net([1.0, 2.0]), &dv(&[0.0, 0.0]), bounds, 0.1, &controls, 0.25, &ReachOptions::default())
            .map_err(|e| e.to_string())?;

    let net11 = rotation_net([1.0, 1.0]);
    let verdict = controllability_verdict(&net11);
    let p = verdict.certificates().ok_or("B = (1,1) reported controllable")?[0].p.clone();
    let pa = DVector::from_iterator(2, p.iter().map(|v| f64::from(*v))).transpose() * &net11.a;
    let x0 = dv(&[0.3, 0.2]);
    let confined = ReachOptions { stay_in: Some(StayIn { normal: [pa[0], pa[1]], offset: 0.0 }), ..options.clone() };
    let g11 = grid_reach(&net11, &x0, bounds, 0.1, &controls, 0.25, &confined).map_err(|e| e.to_string())?;
    let report = confinement_check(&g11, Some(&p), &net11.a, &x0);
    let free = grid_reach(&net11, &x0, bounds, 0.1, &controls, 0.25, &options).map_err(|e| e.to_string())?;
    let free_report = confinement_check(&free, Some(&p), &net11.a, &x0);
    check(
        grid.count() == grid.total() && report.passed(),
        format!(
            "coverage {}/{} (without margin {}/{}); B = (1,1), p = {:?}: {} violations among {} cells while pᵀAx > 0 \
             ({} when paths may leave that region)",
            grid.count(),
            grid.total(),
            unpadded.count(),
            unpadded.total(),
            p,
            report.violations.len(),
            report.checked,
            free_report.violations.len()
        ),
    )
}

fn criterion_10() -> Outcome {
    let net = RecurrentNet::new(
        DMatrix::from_row_slice(2, 2, &[0.5, 2.0, -2.0, 0.3]),
        DMatrix::from_column_slice(2, 1, &[1.0, -1.5]),
        make_tanh(),
    )
    .unwrap();
    let u = FnControl::new(1, |t| DVector::from_element(1, (2.0 * t).sin()));
    let x0 = dv(&[0.4, -0.3]);
    let horizon = 2.0;
    let end = |h: f64| integrate(&net, &x0, &u, horizon, h).map(|t| t.last_state().unwrap().clone());
    let reference = end(1e-5).map_err(|e| e.to_string())?;
    let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|h| end(*h).map(|x| (x - &reference).norm()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let rates: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    check(
        rates.iter().all(|r| (3.5..=4.5).contains(r)),
        format!("errors {:.2e}, {:.2e}, {:.2e}; exponents {:.3}, {:.3}", errs[0], errs[1], errs[2], rates[0], rates[1]),
    )
}

fn criterion_11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_sym: f64 = 0.0;
    for _ in 0..10 {
        let net = RecurrentNet::new(
            DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-2.0..2.0)),
            DMatrix::from_fn(2, 1, |_, _| rng.gen_range(-2.0..2.0)),
            make_tanh(),
        )
        .unwrap();
        let sched = random_schedules(1, 6, 0.05, rng.gen()).remove(0);
        let x0 = dv(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        let horizon = sched.total_duration();
        let fwd = integrate(&net, &x0, &sched, horizon, 1e-2).map_err(|e| e.to_string())?;
        let rev = integrate(&net, &-&x0, &sched.reflect(), horizon, 1e-2).map_err(|e| e.to_string())?;
        for (p, q) in fwd.states.iter().zip(&rev.states) {
            worst_sym = worst_sym.max((p + q).amax());
        }
    }
    let ft = Form1Transformed::new(1.0, 2.0);
    let plan = ray_plan(&ft, (1.0, 1.0)).map_err(|e| e.to_string())?;
    let traj: Trajectory = simulate_ray(&ft, &plan, 1.0, 1e-3).map_err(|e| e.to_string())?.trajectory;
    let involution = traj.reflect().reflect() == traj && plan.reflect().reflect() == plan;
    let schedules = random_schedules(20, 6, 0.05, 1111);
    let diag = diagonal_invariance_check(&Form2::new(-1.0, -1.0), 0.5, &schedules, 1e-2).map_err(|e| e.to_string())?;
    check(
        worst_sym <= 1e-9 && involution && diag.max_defect <= 1e-9,
        format!(
            "point symmetry defect {worst_sym:.1e}, reflect involution exact: {involution}, diagonal defect {:.1e} over {} schedules",
            diag.max_defect,
            diag.defects.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("predicate equivalence", criterion_1),
        ("certificate soundness", criterion_2),
        ("tanh admissibility", criterion_3),
        ("mollifier mass and convergence", criterion_4),
        ("fixed-point cover", criterion_5),
        ("ray steering", criterion_6),
        ("implicit control", criterion_7),
        ("invariant half-plane", criterion_8),
        ("controllable coverage", criterion_9),
        ("integrator order", criterion_10),
        ("symmetry suite", criterion_11),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1}s): {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1}s): {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
