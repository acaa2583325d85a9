use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rnnctl::activation::{
    check_admissible, check_smooth_class, default_grids, Activation, AdmissibilityReport, SmoothClassReport,
};
use rnnctl::controllability::{
    b_class_check, controllability_verdict, verify_certificate, CertificateVerification, Verdict,
};
use rnnctl::mollify::{
    cover_radius, endpoint_convergence, errors_decrease, ConvergencePoint, CoverRadius, SmoothedSchedule,
};
use rnnctl::reach::{confinement_check, grid_reach, ConfinementReport, Expansion, ReachGridFile, ReachOptions, StayIn};
use rnnctl::simulate::{integrate, ControlSchedule, ScheduleFile, Trajectory};
use rnnctl::steer2d::{
    invariant_halfplane, inverse_transform_f1, ray_plan, simulate_implicit, simulate_ray, transform_f1, two_phase_plan,
    Form1, Form1Transformed, Form2, HalfPlane, ImplicitCertificate, ImplicitCurve, RayCertificate, RayPlan,
    Steer2dError,
};
use rnnctl::systems::{RecurrentNet, SystemSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::output::{deliver, Artifacts};
use crate::svg::{emit_phase_svg, Overlay};
use crate::{
    ActivationAction, ActivationCheckArgs, CheckBArgs, Cli, Command, FormArg, ModeArg, MollifyArgs, ReachArgs,
    SimulateArgs, Steer2dArgs, VerdictArgs,
};

pub(crate) fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Activation { action: ActivationAction::Check(args) } => activation_check(args),
        Command::CheckB(args) => check_b(args),
        Command::Verdict(args) => verdict(args, cli.seed),
        Command::Simulate(args) => simulate(args),
        Command::Steer2d(args) => steer2d(args),
        Command::MollifyDemo(args) => mollify_demo(args),
        Command::Reach(args) => reach(args),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|source| CliError::Parse { path: path.to_path_buf(), source })
}

fn load_system(path: &Path) -> Result<(SystemSpec, RecurrentNet), CliError> {
    let spec: SystemSpec = parse(path)?;
    let net = spec.recurrent()?;
    Ok((spec, net))
}

fn load_schedule(path: &Path) -> Result<ControlSchedule, CliError> {
    Ok(parse::<ScheduleFile>(path)?.into_schedule()?)
}

fn initial_state(x0: &[f64], n: usize) -> Result<DVector<f64>, CliError> {
    match x0.len() {
        0 => Ok(DVector::zeros(n)),
        k if k == n => Ok(DVector::from_column_slice(x0)),
        k => Err(CliError::System(rnnctl::systems::SystemError::Dimension(format!(
            "x0 has {k} entries, system has n = {n}"
        )))),
    }
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Invalid(format!("{name} must be positive, got {v}")))
    }
}

#[derive(Debug, Serialize)]
struct ActivationOutput {
    activation: String,
    admissibility: AdmissibilityReport,
    smooth_class: SmoothClassReport,
}

fn activation_check(args: &ActivationCheckArgs) -> Result<(), CliError> {
    let name = match (&args.name, &args.system) {
        (Some(name), _) => name.clone(),
        (None, Some(path)) => parse::<SystemSpec>(path)?.activation,
        (None, None) => unreachable!("clap requires one of --name, --system"),
    };
    let act = Activation::by_name(&name)?;
    let (a, b, s) = default_grids();
    let admissibility = check_admissible(&act, &a, &b, &s)?;
    let grid: Vec<f64> = (-40..=40).map(|k| f64::from(k) * 0.25).collect();
    let smooth_class = check_smooth_class(&act, &grid);
    deliver(&args.out.out, &Artifacts::json(&ActivationOutput { activation: name, admissibility, smooth_class }))
}

fn check_b(args: &CheckBArgs) -> Result<(), CliError> {
    if !(args.tol >= 0.0) {
        return Err(CliError::Invalid(format!("tol must be nonnegative, got {}", args.tol)));
    }
    let (_, net) = load_system(&args.system)?;
    deliver(&args.out.out, &Artifacts::json(&b_class_check(&net.b, args.tol)))
}

#[derive(Debug, Serialize)]
struct VerdictOutput {
    #[serde(flatten)]
    verdict: Verdict,
    seed: u64,
    verification: Vec<CertificateVerification>,
}

fn verdict(args: &VerdictArgs, seed: u64) -> Result<(), CliError> {
    positive("half-width", args.half_width)?;
    let (_, net) = load_system(&args.system)?;
    let verdict = controllability_verdict(&net);
    let verification = verdict
        .certificates()
        .unwrap_or_default()
        .iter()
        .map(|c| verify_certificate(&net, c, args.samples, args.half_width, seed))
        .collect::<Result<Vec<_>, _>>()?;
    deliver(&args.out.out, &Artifacts::json(&VerdictOutput { verdict, seed, verification }))
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let (_, net) = load_system(&args.system)?;
    let schedule = load_schedule(&args.control)?;
    let x0 = initial_state(&args.x0, net.n())?;
    let horizon = args.horizon.unwrap_or_else(|| schedule.total_duration());
    let traj = integrate(&net, &x0, &schedule, horizon, args.h)?;
    let svg = if net.n() == 2 { Some(emit_phase_svg(&traj, &[])?) } else { None };
    deliver(&args.out.out, &Artifacts { json: None, csv: Some(traj.to_csv()), svg })
}

#[derive(Debug, Serialize)]
struct Steer2dReport {
    form: String,
    a: f64,
    b: f64,
    start: [f64; 2],
    /// `ray`, `two_phase`, or `implicit`.
    mode: String,
    ray: Option<RayPlan>,
    ray_certificate: Option<RayCertificate>,
    v_hold: Option<f64>,
    switch_time: Option<f64>,
    halfplane: Option<HalfPlane>,
    implicit: Option<ImplicitCertificate>,
    final_state: [f64; 2],
}

struct RaySteer {
    mode: &'static str,
    plan: RayPlan,
    certificate: RayCertificate,
    v_hold: Option<f64>,
    switch_time: Option<f64>,
    trajectory: Trajectory,
}

/// Ray feedback straight away when admissible, otherwise a constant-input
/// approach first.
fn steer_transformed(ft: &Form1Transformed, start: (f64, f64), args: &Steer2dArgs) -> Result<RaySteer, CliError> {
    if let Some(plan) = ray_plan(ft, start).ok().filter(|p| p.admissible) {
        let sim = simulate_ray(ft, &plan, args.horizon, args.h)?;
        return Ok(RaySteer {
            mode: "ray",
            plan,
            certificate: sim.certificate,
            v_hold: None,
            switch_time: None,
            trajectory: sim.trajectory,
        });
    }
    let two = two_phase_plan(ft, start, args.max_hold, args.horizon, args.h)?;
    let mut trajectory = two.approach.clone();
    trajectory.concat(&two.ray.trajectory);
    Ok(RaySteer {
        mode: "two_phase",
        plan: two.ray.plan,
        certificate: two.ray.certificate,
        v_hold: Some(two.v_hold),
        switch_time: Some(two.switch_time),
        trajectory,
    })
}

/// Maps a transformed trajectory `(x̃, ỹ, v)` back to `(x, y, u)`.
fn untransform(f: &Form1, traj: &Trajectory) -> Result<Trajectory, CliError> {
    let mut states = Vec::with_capacity(traj.len());
    let mut controls = Vec::with_capacity(traj.len());
    for (k, s) in traj.states.iter().enumerate() {
        let v = traj.controls.as_ref().map_or(0.0, |c| c[k][0]);
        let (x, y, u) = inverse_transform_f1(f, s[0], s[1], v)?;
        states.push(DVector::from_vec(vec![x, y]));
        controls.push(DVector::from_element(1, u));
    }
    Ok(Trajectory { times: traj.times.clone(), states, controls: Some(controls) })
}

fn last_pair(traj: &Trajectory) -> [f64; 2] {
    traj.last_state().map_or([f64::NAN; 2], |x| [x[0], x[1]])
}

fn steer2d(args: &Steer2dArgs) -> Result<(), CliError> {
    positive("T", args.horizon)?;
    positive("h", args.h)?;
    let [x, y] = args.start[..] else {
        return Err(CliError::Invalid(format!("start needs 2 entries, got {}", args.start.len())));
    };
    let mut report = Steer2dReport {
        form: format!("{:?}", args.form).to_lowercase(),
        a: args.a,
        b: args.b,
        start: [x, y],
        mode: String::new(),
        ray: None,
        ray_certificate: None,
        v_hold: None,
        switch_time: None,
        halfplane: None,
        implicit: None,
        final_state: [0.0; 2],
    };
    let (trajectory, overlays) = match args.form {
        FormArg::F1t => {
            let ft = Form1Transformed::new(args.a, args.b);
            let steer = steer_transformed(&ft, (x, y), args)?;
            let overlays = vec![Overlay::Ray { through: steer.plan.start }];
            fill_ray(&mut report, &steer);
            (steer.trajectory, overlays)
        }
        FormArg::F1 => {
            let f = Form1::new(args.a, args.b);
            if args.a == 0.0 {
                return Err(Steer2dError::NotInvertible.into());
            }
            let halfplane = invariant_halfplane(&f);
            // by oddness the reflected half-plane is invariant too
            if let Some(hp) = halfplane.filter(|hp| hp.value(x, y).abs() >= hp.c) {
                return Err(Steer2dError::NotAdmissible(format!(
                    "start lies in an invariant half-plane |{}x + {}y| ≥ {}",
                    hp.a, hp.b, hp.c
                ))
                .into());
            }
            let (xt, yt, _) = transform_f1(&f, x, y, 0.0);
            let steer = steer_transformed(&f.transformed(), (xt, yt), args)?;
            // the transformed ray ỹ0 x̃ = x̃0 ỹ in original coordinates
            let [px, py] = steer.plan.start;
            let mut overlays = vec![Overlay::Line { normal: [py * f.a, py * f.b - px], offset: 0.0 }];
            if let Some(hp) = halfplane {
                overlays.push(Overlay::Line { normal: [hp.a, hp.b], offset: hp.offset });
            }
            report.halfplane = halfplane;
            fill_ray(&mut report, &steer);
            (untransform(&f, &steer.trajectory)?, overlays)
        }
        FormArg::F2 => {
            let curve = ImplicitCurve::new(Form2::new(args.a, args.b), (x, y))?;
            let sim = simulate_implicit(&curve, args.horizon, args.h)?;
            report.mode = "implicit".into();
            report.implicit = Some(sim.certificate);
            (sim.trajectory, vec![Overlay::Ray { through: [x, y] }])
        }
    };
    report.final_state = last_pair(&trajectory);
    let svg = emit_phase_svg(&trajectory, &overlays)?;
    let mut artifacts = Artifacts::json(&report);
    artifacts.csv = Some(trajectory.to_csv());
    artifacts.svg = Some(svg);
    deliver(&args.out.out, &artifacts)
}

fn fill_ray(report: &mut Steer2dReport, steer: &RaySteer) {
    report.mode = steer.mode.into();
    report.ray = Some(steer.plan.clone());
    report.ray_certificate = Some(steer.certificate.clone());
    report.v_hold = steer.v_hold;
    report.switch_time = steer.switch_time;
}

#[derive(Debug, Serialize)]
struct MollifyReport {
    horizon: f64,
    h: f64,
    convergence: Vec<ConvergencePoint>,
    decreasing: bool,
    /// Smoothing parameter used for the cover.
    cover_l: Option<f64>,
    cover: Option<CoverRadius>,
}

fn mollify_demo(args: &MollifyArgs) -> Result<(), CliError> {
    let (_, net) = load_system(&args.system)?;
    let schedule = load_schedule(&args.control)?;
    let x0 = initial_state(&args.x0, net.n())?;
    if args.l.is_empty() {
        return Err(CliError::Invalid("at least one l is required".into()));
    }
    let convergence = endpoint_convergence(&net, &x0, &schedule, &args.l, args.h)?;
    let decreasing = errors_decrease(&convergence, 0.0);
    let horizon = schedule.total_duration();
    let (cover_l, cover) = if net.n() == 2 && !args.radii.is_empty() {
        let l = *args.l.last().expect("nonempty");
        let smoothed = SmoothedSchedule::new(&schedule, l)?;
        let cover = cover_radius(&net, &x0, &smoothed, horizon, args.cover_step, &args.radii, args.targets)?;
        (Some(l), Some(cover))
    } else {
        (None, None)
    };
    let report = MollifyReport { horizon, h: args.h, convergence, decreasing, cover_l, cover };
    deliver(&args.out.out, &Artifacts::json(&report))
}

#[derive(Debug, Serialize)]
struct ReachOutput {
    #[serde(flatten)]
    grid: ReachGridFile,
    confinement: ConfinementReport,
}

fn parse_controls(text: &str, m: usize) -> Result<Vec<DVector<f64>>, CliError> {
    let number = |s: &str| s.trim().parse::<f64>().map_err(|_| CliError::Invalid(format!("bad control value {s:?}")));
    let groups: Vec<&str> = text.split(';').filter(|g| !g.trim().is_empty()).collect();
    let values: Vec<DVector<f64>> = if groups.len() == 1 && m == 1 {
        groups[0].split(',').map(|s| number(s).map(|v| DVector::from_element(1, v))).collect::<Result<_, _>>()?
    } else {
        groups
            .iter()
            .map(|g| g.split(',').map(number).collect::<Result<Vec<_>, _>>().map(DVector::from_vec))
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() {
        return Err(CliError::Invalid("no control values".into()));
    }
    if let Some(bad) = values.iter().find(|u| u.len() != m) {
        return Err(CliError::System(rnnctl::systems::SystemError::Dimension(format!(
            "control value has {} entries, system has m = {m}",
            bad.len()
        ))));
    }
    Ok(values)
}

fn certificate_side(p: &[i8], net: &RecurrentNet, x0: &DVector<f64>) -> Result<StayIn, CliError> {
    let p = DVector::from_iterator(p.len(), p.iter().map(|v| f64::from(*v)));
    let pa = p.transpose() * &net.a;
    let side = (&pa * x0)[0];
    if side == 0.0 {
        return Err(CliError::Invalid("x0 lies on the line pᵀAx = 0".into()));
    }
    Ok(StayIn { normal: [side.signum() * pa[0], side.signum() * pa[1]], offset: 0.0 })
}

fn reach(args: &ReachArgs) -> Result<(), CliError> {
    let (_, net) = load_system(&args.system)?;
    let x0 = initial_state(&args.x0, net.n())?;
    let bounds: [f64; 4] = args
        .bounds
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Invalid(format!("box needs 4 entries, got {}", args.bounds.len())))?;
    let controls = parse_controls(&args.controls, net.m())?;
    let verdict = controllability_verdict(&net);
    let p = verdict.certificates().and_then(|c| c.first()).map(|c| c.p.clone());
    let stay_in = match (&args.stay_in[..], &p) {
        ([nx, ny, offset], _) => Some(StayIn { normal: [*nx, *ny], offset: *offset }),
        ([_, ..], _) => return Err(CliError::Invalid("stay-in needs nx,ny,offset".into())),
        ([], Some(p)) if args.confine => Some(certificate_side(p, &net, &x0)?),
        ([], None) if args.confine => {
            return Err(CliError::Invalid("--confine needs a non-controllable system".into()))
        }
        ([], _) => None,
    };
    let options = ReachOptions {
        max_expansions: args.max_expansions,
        expansion: match args.mode {
            ModeArg::Center => Expansion::CellCenter,
            ModeArg::Representative => Expansion::Representative,
        },
        substeps: args.substeps,
        stay_in,
        margin: args.margin,
    };
    let grid = grid_reach(&net, &x0, bounds, args.cell, &controls, args.tstep, &options)?;
    let confinement = confinement_check(&grid, p.as_deref(), &net.a, &x0);
    deliver(&args.out.out, &Artifacts::json(&ReachOutput { grid: grid.to_file(), confinement }))
}
