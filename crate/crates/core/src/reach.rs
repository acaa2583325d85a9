//! Breadth-first reachability on a planar grid.
//!
//! Cells are expanded by integrating one step of length `T_step` under each
//! control value in a fixed list; landing cells inside the box are marked.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulate::{integrate, ControlSchedule, SimulateError};
use crate::systems::VectorField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReachError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("DimensionError: {0}")]
    Dimension(String),
    #[error("malformed grid: {0}")]
    Malformed(String),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
}

/// Where a cell is expanded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    /// The point whose landing first marked the cell (the initial state for
    /// the source). Every marked cell then contains a reachable point.
    Representative,
    /// The cell centre.
    #[default]
    CellCenter,
}

/// Integration must keep `normal · x > offset` at every sample; landings
/// that leave the region are discarded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayIn {
    pub normal: [f64; 2],
    pub offset: f64,
}

impl StayIn {
    fn holds(&self, x: &DVector<f64>) -> bool {
        self.normal[0] * x[0] + self.normal[1] * x[1] > self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachOptions {
    pub max_expansions: usize,
    pub expansion: Expansion,
    /// RK4 steps per `T_step`.
    pub substeps: usize,
    pub stay_in: Option<StayIn>,
    /// Width of a band around the box that is searched but not reported,
    /// so paths that briefly leave the box still count.
    pub margin: f64,
}

impl Default for ReachOptions {
    fn default() -> Self {
        Self { max_expansions: 1_000_000, expansion: Expansion::CellCenter, substeps: 10, stay_in: None, margin: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachGrid {
    /// `[xmin, xmax, ymin, ymax]`.
    pub bounds: [f64; 4],
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, row index along `y`.
    pub reached: Vec<bool>,
    pub source: (usize, usize),
    pub control_values: Vec<Vec<f64>>,
    pub t_step: f64,
    pub expansion: Expansion,
    pub margin: f64,
    pub expansions: usize,
    /// `false` when the expansion budget ran out before the fixpoint.
    pub complete: bool,
}

fn cells_along(extent: f64, cell: f64) -> usize {
    ((extent / cell) - 1e-9).ceil().max(1.0) as usize
}

impl ReachGrid {
    fn empty(bounds: [f64; 4], cell: f64) -> Self {
        let nx = cells_along(bounds[1] - bounds[0], cell);
        let ny = cells_along(bounds[3] - bounds[2], cell);
        Self {
            bounds,
            cell,
            nx,
            ny,
            reached: vec![false; nx * ny],
            source: (0, 0),
            control_values: Vec::new(),
            t_step: 0.0,
            expansion: Expansion::default(),
            margin: 0.0,
            expansions: 0,
            complete: true,
        }
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn is_reached(&self, i: usize, j: usize) -> bool {
        self.reached[self.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        let k = self.index(i, j);
        self.reached[k] = value;
    }

    /// Cell containing a point, or `None` outside the box. Points on the
    /// upper edges belong to the last cell.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let [x0, x1, y0, y1] = self.bounds;
        if !(x >= x0 && x <= x1 && y >= y0 && y <= y1) {
            return None;
        }
        let i = (((x - x0) / self.cell).floor() as usize).min(self.nx - 1);
        let j = (((y - y0) / self.cell).floor() as usize).min(self.ny - 1);
        Some((i, j))
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (self.bounds[0] + (i as f64 + 0.5) * self.cell, self.bounds[2] + (j as f64 + 0.5) * self.cell)
    }

    /// Corners of a cell, clipped to the box.
    pub fn corners(&self, i: usize, j: usize) -> [(f64, f64); 4] {
        let xa = self.bounds[0] + i as f64 * self.cell;
        let ya = self.bounds[2] + j as f64 * self.cell;
        let xb = (xa + self.cell).min(self.bounds[1]);
        let yb = (ya + self.cell).min(self.bounds[3]);
        [(xa, ya), (xb, ya), (xa, yb), (xb, yb)]
    }

    pub fn count(&self) -> usize {
        self.reached.iter().filter(|r| **r).count()
    }

    pub fn total(&self) -> usize {
        self.reached.len()
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.total() as f64
    }

    pub fn reached_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| (i, j))).filter(|(i, j)| self.is_reached(*i, *j))
    }

    /// Run-length encoding of one row: alternating run lengths, starting
    /// with unreached cells (possibly a zero-length run).
    fn encode_row(&self, j: usize) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for i in 0..self.nx {
            if self.is_reached(i, j) == current {
                len += 1;
            } else {
                runs.push(len);
                current = !current;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn to_file(&self) -> ReachGridFile {
        ReachGridFile {
            bounds: self.bounds,
            cell: self.cell,
            nx: self.nx,
            ny: self.ny,
            source: [self.source.0, self.source.1],
            control_values: self.control_values.clone(),
            t_step: self.t_step,
            expansion: self.expansion,
            margin: self.margin,
            expansions: self.expansions,
            complete: self.complete,
            reached_count: self.count(),
            rows: (0..self.ny).map(|j| self.encode_row(j)).collect(),
        }
    }

    /// Text picture, top row first: `#` reached, `.` not.
    pub fn to_ascii(&self) -> String {
        let mut out = String::new();
        for j in (0..self.ny).rev() {
            for i in 0..self.nx {
                out.push(if self.is_reached(i, j) { '#' } else { '.' });
            }
            let _ = writeln!(out);
        }
        out
    }
}

/// JSON form of a grid with run-length-encoded rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachGridFile {
    pub bounds: [f64; 4],
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    pub source: [usize; 2],
    pub control_values: Vec<Vec<f64>>,
    pub t_step: f64,
    pub expansion: Expansion,
    pub margin: f64,
    pub expansions: usize,
    pub complete: bool,
    pub reached_count: usize,
    pub rows: Vec<Vec<usize>>,
}

impl ReachGridFile {
    pub fn into_grid(self) -> Result<ReachGrid, ReachError> {
        if self.rows.len() != self.ny {
            return Err(ReachError::Malformed(format!("{} rows for ny = {}", self.rows.len(), self.ny)));
        }
        let mut reached = Vec::with_capacity(self.nx * self.ny);
        for (j, runs) in self.rows.iter().enumerate() {
            let start = reached.len();
            let mut value = false;
            for len in runs {
                reached.extend(std::iter::repeat_n(value, *len));
                value = !value;
            }
            if reached.len() - start != self.nx {
                return Err(ReachError::Malformed(format!("row {j} has {} cells", reached.len() - start)));
            }
        }
        Ok(ReachGrid {
            bounds: self.bounds,
            cell: self.cell,
            nx: self.nx,
            ny: self.ny,
            reached,
            source: (self.source[0], self.source[1]),
            control_values: self.control_values,
            t_step: self.t_step,
            expansion: self.expansion,
            margin: self.margin,
            expansions: self.expansions,
            complete: self.complete,
        })
    }
}

/// Breadth-first search over cells. Frontier cells are expanded level by
/// level in row-major order, controls in list order; the result does not
/// depend on anything but the inputs.
pub fn grid_reach<F: VectorField + ?Sized>(
    field: &F,
    x0: &DVector<f64>,
    bounds: [f64; 4],
    cell: f64,
    control_values: &[DVector<f64>],
    t_step: f64,
    options: &ReachOptions,
) -> Result<ReachGrid, ReachError> {
    if field.state_dim() != 2 || x0.len() != 2 {
        return Err(ReachError::Dimension("grid reachability needs a planar system".into()));
    }
    if !(cell > 0.0) || !(t_step > 0.0) || options.substeps == 0 {
        return Err(ReachError::Domain("cell, T_step and substeps must be positive".into()));
    }
    if !(bounds[1] > bounds[0] && bounds[3] > bounds[2]) {
        return Err(ReachError::Domain(format!("empty box {bounds:?}")));
    }
    if control_values.iter().any(|u| u.len() != field.input_dim()) {
        return Err(ReachError::Dimension(format!("control values must have length {}", field.input_dim())));
    }
    if !(options.margin >= 0.0) {
        return Err(ReachError::Domain(format!("margin {} must be nonnegative", options.margin)));
    }
    let requested = ReachGrid::empty(bounds, cell);
    if requested.locate(x0[0], x0[1]).is_none() {
        return Err(ReachError::Domain(format!("x0 = ({}, {}) lies outside the box", x0[0], x0[1])));
    }
    let pad = (options.margin / cell - 1e-9).ceil().max(0.0) as usize;
    let w = pad as f64 * cell;
    let search_bounds = if pad == 0 {
        bounds
    } else {
        [
            bounds[0] - w,
            bounds[0] + (requested.nx + pad) as f64 * cell,
            bounds[2] - w,
            bounds[2] + (requested.ny + pad) as f64 * cell,
        ]
    };
    let mut wide = search(field, x0, search_bounds, cell, control_values, t_step, options)?;
    wide.margin = options.margin;
    if pad == 0 {
        return Ok(wide);
    }
    let mut grid = requested;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let v = wide.is_reached(i + pad, j + pad);
            grid.set(i, j, v);
        }
    }
    grid.source = (wide.source.0 - pad, wide.source.1 - pad);
    grid.control_values = wide.control_values;
    grid.t_step = t_step;
    grid.expansion = options.expansion;
    grid.margin = options.margin;
    grid.expansions = wide.expansions;
    grid.complete = wide.complete;
    Ok(grid)
}

fn search<F: VectorField + ?Sized>(
    field: &F,
    x0: &DVector<f64>,
    bounds: [f64; 4],
    cell: f64,
    control_values: &[DVector<f64>],
    t_step: f64,
    options: &ReachOptions,
) -> Result<ReachGrid, ReachError> {
    let mut grid = ReachGrid::empty(bounds, cell);
    let source = grid.locate(x0[0], x0[1]).expect("checked by caller");
    grid.source = source;
    grid.control_values = control_values.iter().map(|u| u.iter().copied().collect()).collect();
    grid.t_step = t_step;
    grid.expansion = options.expansion;
    grid.set(source.0, source.1, true);

    let h = t_step / options.substeps as f64;
    let schedules: Vec<ControlSchedule> =
        control_values.iter().map(|u| ControlSchedule::constant(u.clone(), t_step)).collect();
    let mut representative = vec![None; grid.total()];
    representative[grid.index(source.0, source.1)] = Some(x0.clone());

    let mut frontier = VecDeque::from([source]);
    let mut expansions = 0;
    while !frontier.is_empty() {
        let mut level: Vec<(usize, usize)> = frontier.drain(..).collect();
        level.sort_by_key(|(i, j)| (*j, *i));
        let mut next = Vec::new();
        for (i, j) in level {
            if expansions >= options.max_expansions {
                grid.complete = false;
                grid.expansions = expansions;
                return Ok(grid);
            }
            expansions += 1;
            let start = match options.expansion {
                Expansion::Representative => representative[grid.index(i, j)].clone().expect("marked cell has a point"),
                Expansion::CellCenter => {
                    let (cx, cy) = grid.center(i, j);
                    DVector::from_column_slice(&[cx, cy])
                }
            };
            for sched in &schedules {
                let traj = integrate(field, &start, sched, t_step, h)?;
                if let Some(region) = &options.stay_in {
                    if !traj.states.iter().all(|x| region.holds(x)) {
                        continue;
                    }
                }
                let end = traj.last_state().expect("nonempty");
                if let Some((a, b)) = grid.locate(end[0], end[1]) {
                    let k = grid.index(a, b);
                    if !grid.reached[k] {
                        grid.reached[k] = true;
                        representative[k] = Some(end.clone());
                        next.push((a, b));
                    }
                }
            }
        }
        frontier.extend(next);
    }
    grid.expansions = expansions;
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfinementReport {
    pub skipped: bool,
    pub delta: f64,
    pub checked: usize,
    pub violations: Vec<(usize, usize)>,
}

impl ConfinementReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Reached cells whose centre lies in `{pᵀAx > δ, pᵀx < pᵀx0 - δ}` with
/// `δ = 2 · cell · ‖p‖₁`. Without a certificate the check is skipped.
pub fn confinement_check(grid: &ReachGrid, p: Option<&[i8]>, a: &DMatrix<f64>, x0: &DVector<f64>) -> ConfinementReport {
    let Some(p) = p else {
        return ConfinementReport { skipped: true, delta: 0.0, checked: 0, violations: Vec::new() };
    };
    let p = DVector::from_iterator(p.len(), p.iter().map(|v| f64::from(*v)));
    let delta = 2.0 * grid.cell * p.lp_norm(1);
    let pa = p.transpose() * a;
    let level = p.dot(x0);
    let mut report = ConfinementReport { skipped: false, delta, checked: 0, violations: Vec::new() };
    for (i, j) in grid.reached_cells() {
        report.checked += 1;
        let (cx, cy) = grid.center(i, j);
        let c = DVector::from_column_slice(&[cx, cy]);
        if (&pa * &c)[0] > delta && p.dot(&c) < level - delta {
            report.violations.push((i, j));
        }
    }
    report
}

/// Reached cells lying entirely in `{n · x < offset}`.
pub fn cells_below(grid: &ReachGrid, normal: [f64; 2], offset: f64) -> Vec<(usize, usize)> {
    grid.reached_cells()
        .filter(|(i, j)| grid.corners(*i, *j).iter().all(|(x, y)| normal[0] * x + normal[1] * y < offset))
        .collect()
}
