//! Monitored quantities: the coupled functional, cumulative dissipation
//! bounds, stabilization metrics, a weak-form residual for the signal
//! equation and the late-time boundedness verdict.

use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

use crate::fields::{for_each_index, for_interior_faces, gradient, second_derivative_norm_sq, shape_stride, Grid, ScalarField, VectorField};
use crate::model::pow_nonneg;
use crate::stepper::{SimState, Simulation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("transient fraction must lie in [0, 1), got {0}")]
    BadFraction(f64),
    #[error("c0 integrates to zero but {what} accumulated {value:e}")]
    SignalFromNothing { what: &'static str, value: f64 },
    #[error("csv: {0}")]
    Csv(String),
}

/// Exact column names of `diagnostics.csv`, in order.
pub const COLUMNS: [&str; 15] = [
    "t",
    "mass",
    "sup_n",
    "sup_c",
    "sup_u",
    "y_n",
    "y_c",
    "y_u",
    "dirichlet_c",
    "hess_c",
    "cum_consumption",
    "cum_dirichlet_c",
    "cum_sobolev_n",
    "conv_weakstar",
    "conv_l2",
];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub sup_n: f64,
    pub sup_c: f64,
    pub sup_u: f64,
    pub y_n: f64,
    pub y_c: f64,
    pub y_u: f64,
    pub dirichlet_c: f64,
    pub hess_c: f64,
    pub cum_consumption: f64,
    pub cum_dirichlet_c: f64,
    pub cum_sobolev_n: f64,
    pub conv_weakstar: f64,
    pub conv_l2: f64,
}

impl DiagnosticsRecord {
    pub fn values(&self) -> [f64; 15] {
        [
            self.t,
            self.mass,
            self.sup_n,
            self.sup_c,
            self.sup_u,
            self.y_n,
            self.y_c,
            self.y_u,
            self.dirichlet_c,
            self.hess_c,
            self.cum_consumption,
            self.cum_dirichlet_c,
            self.cum_sobolev_n,
            self.conv_weakstar,
            self.conv_l2,
        ]
    }

    pub fn from_values(v: [f64; 15]) -> Self {
        DiagnosticsRecord {
            t: v[0],
            mass: v[1],
            sup_n: v[2],
            sup_c: v[3],
            sup_u: v[4],
            y_n: v[5],
            y_c: v[6],
            y_u: v[7],
            dirichlet_c: v[8],
            hess_c: v[9],
            cum_consumption: v[10],
            cum_dirichlet_c: v[11],
            cum_sobolev_n: v[12],
            conv_weakstar: v[13],
            conv_l2: v[14],
        }
    }

    pub fn y_total(&self) -> f64 {
        self.y_n + self.y_c + self.y_u
    }

    /// One CSV line without the newline. `{:e}` prints the shortest
    /// representation that parses back to the same `f64`.
    pub fn csv_row(&self) -> String {
        self.values().iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
    }
}

pub fn csv_header() -> String {
    COLUMNS.join(",")
}

/// Parses a whole `diagnostics.csv`, insisting on the exact header.
pub fn parse_csv(text: &str) -> Result<Vec<DiagnosticsRecord>, DiagnosticsError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| DiagnosticsError::Csv("missing header".into()))?;
    if header.trim() != csv_header() {
        return Err(DiagnosticsError::Csv(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != COLUMNS.len() {
            return Err(DiagnosticsError::Csv(format!(
                "line {}: expected {} columns, found {}",
                lineno + 1,
                COLUMNS.len(),
                cells.len()
            )));
        }
        let mut v = [0.0; 15];
        for (slot, (cell, name)) in v.iter_mut().zip(cells.iter().zip(COLUMNS)) {
            *slot = cell
                .trim()
                .parse()
                .map_err(|_| DiagnosticsError::Csv(format!("line {}: bad value {cell:?} in column {name}", lineno + 1)))?;
        }
        out.push(DiagnosticsRecord::from_values(v));
    }
    Ok(out)
}

/// The three summands of the coupled functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YTerms {
    pub n: f64,
    pub c: f64,
    pub u: f64,
}

impl YTerms {
    pub fn total(&self) -> f64 {
        self.n + self.c + self.u
    }
}

/// `(int n^p, int |grad c|^(2q), int |grad u|^2)`.
///
/// The c-term uses face gradients averaged to cells; the u-term sums the
/// squares of all face differences of every velocity component.
pub fn functional_y(n: &ScalarField, c: &ScalarField, u: &VectorField, p: f64, q: f64) -> YTerms {
    let dv = n.grid.cell_volume();
    let y_n = n.values.iter().map(|&v| pow_nonneg(v.max(0.0), p)).sum::<f64>() * dv;
    let g2 = cell_gradient_sq(c);
    let y_c = g2.iter().map(|&s| pow_nonneg(s, q)).sum::<f64>() * dv;
    YTerms { n: y_n, c: y_c, u: velocity_dirichlet(u) }
}

/// `|grad c|^2` at cells from cell-averaged face gradients.
fn cell_gradient_sq(c: &ScalarField) -> Vec<f64> {
    let g = gradient(c);
    let mut out = vec![0.0; c.grid.num_cells()];
    for a in 0..c.grid.dim() {
        for (o, v) in out.iter_mut().zip(g.cell_average(a).values) {
            *o += v * v;
        }
    }
    out
}

/// `int |grad c|^2` from face differences (Neumann walls carry none).
pub fn dirichlet_energy(c: &ScalarField) -> f64 {
    dirichlet_energy_of(&c.grid, &c.values)
}

pub(crate) fn dirichlet_energy_of(grid: &Grid, v: &[f64]) -> f64 {
    let dx = grid.spacing();
    let mut total = 0.0;
    for a in 0..grid.dim() {
        let mut sum = 0.0;
        for_interior_faces(grid, a, |_, l, r| {
            let d = v[r] - v[l];
            sum += d * d;
        });
        total += sum / (dx[a] * dx[a]);
    }
    total * grid.cell_volume()
}

/// `int |grad u|^2` for a face velocity with no-slip walls.
///
/// Tangential differences next to a wall use the ghost value `-u` and carry
/// half weight, which makes the sum equal `-<Lap u, u>` for the same
/// discrete vector Laplacian the viscous solve uses.
pub fn velocity_dirichlet(u: &VectorField) -> f64 {
    let grid = u.grid;
    let dim = grid.dim();
    let dx = grid.spacing();
    let dv = grid.cell_volume();
    let nc = grid.n_cells();
    let mut sum = 0.0;
    for a in 0..dim {
        let fshape = grid.face_shape(a);
        let comp = &u.comps[a];
        for b in 0..dim {
            let fs = shape_stride(fshape, b);
            let inv = 1.0 / dx[b];
            if b == a {
                // one difference per cell, walls included through their zero values
                for_each_index(nc, |i, j, k, _| {
                    let f = i + fshape[0] * (j + fshape[1] * k);
                    let d = (comp[f + fs] - comp[f]) * inv;
                    sum += d * d;
                });
            } else {
                for_each_index(fshape, |i, j, k, f| {
                    let ib = [i, j, k][b];
                    let v = comp[f];
                    if ib == 0 || ib == fshape[b] - 1 {
                        let d = 2.0 * v * inv;
                        sum += 0.5 * d * d;
                    }
                    if ib + 1 < fshape[b] {
                        let d = (comp[f + fs] - v) * inv;
                        sum += d * d;
                    }
                });
            }
        }
    }
    sum * dv
}

/// Interior `int |grad c|^(2q-2) |D^2 c|^2` over cells with a one-cell margin.
pub fn hessian_weighted(c: &ScalarField, q: f64) -> f64 {
    let hess = second_derivative_norm_sq(c);
    let g2 = cell_gradient_sq(c);
    let dv = c.grid.cell_volume();
    let mut sum = 0.0;
    for (idx, &h) in hess.field.values.iter().enumerate() {
        if hess.interior[idx] {
            sum += pow_nonneg(g2[idx], q - 1.0) * h;
        }
    }
    sum * dv
}

/// Ratios of the accumulated dissipation to the bounds set by `c0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// `int_0^t int n f(c) / int c0`
    pub consumption_ratio: f64,
    /// `int_0^t int |grad c|^2 / (1/2 int c0^2)`
    pub dirichlet_ratio: f64,
    pub slack: f64,
    pub pass: bool,
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "consumption ratio {:.6}, dirichlet ratio {:.6} (limit {:.3}): {}",
            self.consumption_ratio,
            self.dirichlet_ratio,
            1.0 + self.slack,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

/// Bounds check from raw totals, used both in-process and by `check`.
pub fn cumulative_bounds(
    cum_consumption: f64,
    cum_dirichlet_c: f64,
    c0_integral: f64,
    c0_half_l2sq: f64,
    slack: f64,
) -> Result<BoundReport, DiagnosticsError> {
    let ratio = |acc: f64, bound: f64, what: &'static str| {
        if bound > 0.0 {
            Ok(acc / bound)
        } else if acc == 0.0 {
            Ok(0.0)
        } else {
            Err(DiagnosticsError::SignalFromNothing { what, value: acc })
        }
    };
    let consumption_ratio = ratio(cum_consumption, c0_integral, "consumption")?;
    let dirichlet_ratio = ratio(cum_dirichlet_c, c0_half_l2sq, "dirichlet energy")?;
    let limit = 1.0 + slack;
    Ok(BoundReport {
        consumption_ratio,
        dirichlet_ratio,
        slack,
        pass: consumption_ratio <= limit && dirichlet_ratio <= limit,
    })
}

pub fn cumulative_bounds_check(state: &SimState, slack: f64) -> Result<BoundReport, DiagnosticsError> {
    cumulative_bounds(
        state.acc.consumption,
        state.acc.dirichlet_c,
        state.initial.c_integral,
        state.initial.c_half_l2sq,
        slack,
    )
}

/// Finite set of test functions standing in for `L^1` duality.
#[derive(Debug, Clone, PartialEq)]
pub struct TestBank {
    pub entries: Vec<(String, ScalarField)>,
}

impl TestBank {
    /// The constant, the first two Neumann cosine modes along each axis and a
    /// smoothed indicator of the half box `x_1 > L_1 / 2`.
    pub fn default_for(grid: Grid) -> Self {
        let l = grid.lengths();
        let mut entries = vec![("one".to_string(), ScalarField::constant(grid, 1.0))];
        for a in 0..grid.dim() {
            for k in 1..=2 {
                let field = ScalarField::from_fn(grid, |x| (k as f64 * PI * x[a] / l[a]).cos());
                entries.push((format!("cos{k}_x{}", a + 1), field));
            }
        }
        let width = 0.05 * l[0];
        entries.push((
            "half_x1".to_string(),
            ScalarField::from_fn(grid, |x| 0.5 * (1.0 + ((x[0] - 0.5 * l[0]) / width).tanh())),
        ));
        TestBank { entries }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakStarEntry {
    pub name: String,
    /// `|int (n - nbar0) psi|`
    pub pairing: f64,
    /// `int |psi|`
    pub l1_norm: f64,
}

/// Per-test-function breakdown of the weak-star proxy.
pub fn weakstar_proxy_explainer(n: &ScalarField, n0_mean: f64, bank: &TestBank) -> Vec<WeakStarEntry> {
    let dv = n.grid.cell_volume();
    bank.entries
        .iter()
        .map(|(name, psi)| {
            let pairing = n.values.iter().zip(&psi.values).map(|(&v, &w)| (v - n0_mean) * w).sum::<f64>() * dv;
            let l1 = psi.values.iter().map(|w| w.abs()).sum::<f64>() * dv;
            WeakStarEntry { name: name.clone(), pairing: pairing.abs(), l1_norm: l1 }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceMetrics {
    /// `max_k |int (n - nbar0) psi_k| / ||psi_k||_1`
    pub weakstar: f64,
    /// `||n - nbar0||_2`
    pub l2: f64,
    pub sup_c: f64,
    pub sup_u: f64,
}

pub fn convergence_metrics(state: &SimState, n0_mean: f64, bank: &TestBank) -> ConvergenceMetrics {
    let weakstar = weakstar_proxy_explainer(&state.n, n0_mean, bank)
        .iter()
        .filter(|e| e.l1_norm > 0.0)
        .fold(0.0f64, |m, e| m.max(e.pairing / e.l1_norm));
    let dv = state.n.grid.cell_volume();
    let l2 = (state.n.values.iter().map(|&v| (v - n0_mean) * (v - n0_mean)).sum::<f64>() * dv).sqrt();
    ConvergenceMetrics { weakstar, l2, sup_c: state.c.max_abs(), sup_u: state.u.max_abs() }
}

/// Full diagnostics row for a state.
pub fn record(sim: &Simulation, state: &SimState) -> DiagnosticsRecord {
    let (p, q) = sim.exponents;
    let y = functional_y(&state.n, &state.c, &state.u, p, q);
    let conv = convergence_metrics(state, state.initial.n_mean, sim.test_bank());
    DiagnosticsRecord {
        t: state.t,
        mass: state.n.total(),
        sup_n: state.n.max_abs(),
        sup_c: conv.sup_c,
        sup_u: conv.sup_u,
        y_n: y.n,
        y_c: y.c,
        y_u: y.u,
        dirichlet_c: dirichlet_energy(&state.c),
        hess_c: hessian_weighted(&state.c, q),
        cum_consumption: state.acc.consumption,
        cum_dirichlet_c: state.acc.dirichlet_c,
        cum_sobolev_n: state.acc.sobolev_n,
        conv_weakstar: conv.weakstar,
        conv_l2: conv.l2,
    }
}

/// One sample of a trajectory for the weak residual.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySample {
    pub t: f64,
    pub n: ScalarField,
    pub c: ScalarField,
    pub u: VectorField,
}

impl HistorySample {
    pub fn of(state: &SimState) -> Self {
        HistorySample { t: state.t, n: state.n.clone(), c: state.c.clone(), u: state.u.clone() }
    }
}

/// A smooth space-time test function.
pub trait SpaceTimeTest {
    fn value(&self, x: [f64; 3], t: f64) -> f64;
    fn gradient(&self, x: [f64; 3], t: f64) -> [f64; 3];
    fn time_derivative(&self, x: [f64; 3], t: f64) -> f64;
}

/// `(1 - t/T) prod_a cos(k_a pi x_a / L_a)`, vanishing at `t = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineTest {
    pub horizon: f64,
    pub modes: [u32; 3],
    pub lengths: [f64; 3],
}

impl CosineTest {
    fn spatial(&self, x: [f64; 3]) -> ([f64; 3], [f64; 3]) {
        let mut cos = [1.0; 3];
        let mut dcos = [0.0; 3];
        for a in 0..3 {
            if self.modes[a] > 0 {
                let k = self.modes[a] as f64 * PI / self.lengths[a];
                cos[a] = (k * x[a]).cos();
                dcos[a] = -k * (k * x[a]).sin();
            }
        }
        (cos, dcos)
    }

    fn ramp(&self, t: f64) -> f64 {
        1.0 - t / self.horizon
    }
}

impl SpaceTimeTest for CosineTest {
    fn value(&self, x: [f64; 3], t: f64) -> f64 {
        let (c, _) = self.spatial(x);
        self.ramp(t) * c[0] * c[1] * c[2]
    }

    fn gradient(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        let (c, d) = self.spatial(x);
        let r = self.ramp(t);
        [r * d[0] * c[1] * c[2], r * c[0] * d[1] * c[2], r * c[0] * c[1] * d[2]]
    }

    fn time_derivative(&self, x: [f64; 3], _t: f64) -> f64 {
        let (c, _) = self.spatial(x);
        -c[0] * c[1] * c[2] / self.horizon
    }
}

/// Relative defect of the weak form of the signal equation,
///
/// `-int int c phi_t - int c0 phi(0) + int c(T) phi(T)
///    = -int int grad c . grad phi - int int n f(c) phi + int int c u . grad phi`,
///
/// with `T` the last sample time. Space integrals use cells (faces for the
/// gradient and transport terms), time integrals the midpoint of each
/// sampling interval with linearly interpolated fields. Returns
/// `|LHS - RHS| / max(|LHS|, |RHS|)`, or 0 when both sides vanish.
pub fn weak_residual_c(
    sim: &Simulation,
    history: &[HistorySample],
    test: &dyn SpaceTimeTest,
) -> Result<f64, DiagnosticsError> {
    let first = history.first().ok_or(DiagnosticsError::EmptyHistory)?;
    let last = history.last().ok_or(DiagnosticsError::EmptyHistory)?;
    let grid = first.c.grid;
    let dim = grid.dim();
    let dv = grid.cell_volume();
    let centers = grid.cell_centers();
    let face_centers: Vec<Vec<[f64; 3]>> = (0..dim).map(|a| grid.face_centers(a)).collect();
    let nc = grid.n_cells();

    let pair_cells = |c: &ScalarField, t: f64| -> f64 {
        c.values.iter().zip(&centers).map(|(&v, &x)| v * test.value(x, t)).sum::<f64>() * dv
    };
    let mut lhs = -pair_cells(&first.c, first.t) + pair_cells(&last.c, last.t);
    let mut rhs = 0.0;
    for w in history.windows(2) {
        let (s0, s1) = (&w[0], &w[1]);
        let h = s1.t - s0.t;
        let tm = 0.5 * (s0.t + s1.t);
        let mid = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect() };
        let c = ScalarField { grid, values: mid(&s0.c.values, &s1.c.values) };
        let n = mid(&s0.n.values, &s1.n.values);

        let mut time_term = 0.0;
        let mut reaction = 0.0;
        for (idx, &x) in centers.iter().enumerate() {
            time_term += c.values[idx] * test.time_derivative(x, tm);
            reaction += n[idx] * sim.params.consumption_unchecked(c.values[idx].max(0.0)) * test.value(x, tm);
        }
        lhs -= h * time_term * dv;

        let g = gradient(&c);
        let mut diffusion = 0.0;
        let mut transport = 0.0;
        for a in 0..dim {
            let ua = mid(&s0.u.comps[a], &s1.u.comps[a]);
            let cs = grid.cell_stride(a);
            let ga = &g.comps[a];
            let fc = &face_centers[a];
            for_each_index(grid.face_shape(a), |i, j, k, f| {
                let ia = [i, j, k][a];
                if ia == 0 || ia == nc[a] {
                    return;
                }
                let dphi = test.gradient(fc[f], tm)[a];
                diffusion += ga[f] * dphi;
                let r = i + nc[0] * (j + nc[1] * k);
                transport += 0.5 * (c.values[r] + c.values[r - cs]) * ua[f] * dphi;
            });
        }
        rhs += h * (-diffusion - reaction + transport) * dv;
    }
    let scale = lhs.abs().max(rhs.abs());
    Ok(if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale })
}

/// How the run that produced a record stream ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// Aborted because the time step fell below `dt_min`.
    DtAborted,
    /// Aborted by a violated invariant.
    InvariantAborted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundednessVerdict {
    pub pass: bool,
    pub failures: Vec<String>,
    pub cutoff_time: f64,
    pub peak_y: f64,
}

impl fmt::Display for BoundednessVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pass {
            write!(f, "bounded (cutoff t = {}, peak y = {:e})", self.cutoff_time, self.peak_y)
        } else {
            write!(f, "not bounded: {}", self.failures.join("; "))
        }
    }
}

/// Values this small are treated as roundoff when testing for late growth.
pub const BOUNDEDNESS_ABS_FLOOR: f64 = 1e-12;

/// Absolute slack added to the 1 % growth allowance of each monitored
/// quantity. Quantities that have decayed to the resolution of the solvers
/// only fluctuate, so their floor is that resolution rather than roundoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseFloors {
    pub sup_n: f64,
    pub sup_c: f64,
    /// A projection that stops at `max |div u| <= tol` leaves a velocity
    /// error of up to about `tol * L` on a box of side `L`.
    pub sup_u: f64,
    pub y: f64,
}

impl Default for NoiseFloors {
    fn default() -> Self {
        let f = BOUNDEDNESS_ABS_FLOOR;
        NoiseFloors { sup_n: f, sup_c: f, sup_u: f, y: f }
    }
}

impl NoiseFloors {
    /// Floors for a run of `sim`: the velocity floor is `proj_tol` times the
    /// longest side of the box.
    pub fn for_run(sim: &Simulation) -> Self {
        let grid = sim.grid();
        let side = grid.lengths()[..grid.dim()].iter().fold(0.0f64, |m, &l| m.max(l));
        NoiseFloors { sup_u: (sim.solver.proj_tol * side).max(BOUNDEDNESS_ABS_FLOOR), ..Default::default() }
    }
}

/// Late-growth test: after the transient cutoff no monitored quantity may
/// exceed its cutoff value by more than 1 % (plus the roundoff floor).
pub fn boundedness_monitor(
    records: &[DiagnosticsRecord],
    transient_fraction: f64,
    status: RunStatus,
) -> Result<BoundednessVerdict, DiagnosticsError> {
    boundedness_monitor_with(records, transient_fraction, status, &NoiseFloors::default())
}

type Accessor = fn(&DiagnosticsRecord) -> f64;

/// [`boundedness_monitor`] with explicit per-quantity floors.
pub fn boundedness_monitor_with(
    records: &[DiagnosticsRecord],
    transient_fraction: f64,
    status: RunStatus,
    floors: &NoiseFloors,
) -> Result<BoundednessVerdict, DiagnosticsError> {
    if records.len() < 10 {
        return Err(DiagnosticsError::TooFewRecords { needed: 10, got: records.len() });
    }
    if !(0.0..1.0).contains(&transient_fraction) {
        return Err(DiagnosticsError::BadFraction(transient_fraction));
    }
    let mut failures = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(k) = r.values().iter().position(|v| !v.is_finite()) {
            failures.push(format!("non-finite {} in record {i} (t = {})", COLUMNS[k], r.t));
            break;
        }
    }
    match status {
        RunStatus::Completed => {}
        RunStatus::DtAborted => failures.push("run aborted: time step fell below dt_min".into()),
        RunStatus::InvariantAborted => failures.push("run aborted: invariant violated".into()),
    }
    let t0 = records[0].t;
    let t_end = records[records.len() - 1].t;
    let t_cut = t0 + transient_fraction * (t_end - t0);
    let cut = records.iter().position(|r| r.t >= t_cut).unwrap_or(records.len() - 1);
    let peak_y = records.iter().map(|r| r.y_total()).fold(0.0f64, f64::max);
    if failures.is_empty() {
        let monitored: [(&str, Accessor, f64); 4] = [
            ("sup_n", |r| r.sup_n, floors.sup_n),
            ("sup_c", |r| r.sup_c, floors.sup_c),
            ("sup_u", |r| r.sup_u, floors.sup_u),
            ("y", |r| r.y_total(), floors.y),
        ];
        for (name, get, floor) in monitored {
            let base = get(&records[cut]);
            let limit = 1.01 * base + floor;
            if let Some((i, r)) = records[cut..].iter().enumerate().find(|(_, r)| get(r) > limit) {
                failures.push(format!(
                    "{name} grew to {:e} at t = {} (record {}), above 1.01 x {:e} at the cutoff",
                    get(r),
                    r.t,
                    cut + i,
                    base
                ));
            }
        }
    }
    Ok(BoundednessVerdict { pass: failures.is_empty(), failures, cutoff_time: records[cut].t, peak_y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::stepper::{SolverSettings, StepControl};

    fn unit(n: usize) -> Grid {
        Grid::unit(2, n).unwrap()
    }

    #[test]
    fn y_of_constant_density() {
        let g = unit(16);
        let y = functional_y(&ScalarField::constant(g, 2.0), &ScalarField::constant(g, 0.3), &VectorField::zeros(g), 2.0, 2.0);
        assert!((y.n - 4.0).abs() < 1e-12);
        assert_eq!((y.c, y.u), (0.0, 0.0));
        let z = functional_y(&ScalarField::zeros(g), &ScalarField::zeros(g), &VectorField::zeros(g), 2.0, 2.0);
        assert_eq!(z.total(), 0.0);
    }

    #[test]
    fn y_c_term_of_linear_profile() {
        let g = unit(128);
        let y = functional_y(&ScalarField::zeros(g), &ScalarField::from_fn(g, |x| x[0]), &VectorField::zeros(g), 2.0, 1.0);
        assert!((y.c - 1.0).abs() <= 0.02, "{}", y.c);
    }

    #[test]
    fn velocity_energy_matches_laplacian_pairing() {
        // -<L u, u> for the wall-reflected Laplacian, computed independently
        let g = Grid::new(&[7, 5], &[1.0, 0.8]).unwrap();
        let u = VectorField::from_fn(g, |a, x| ((a + 1) as f64 * x[0]).sin() + x[1] * x[1]);
        let dx = g.spacing();
        let mut pairing = 0.0;
        for a in 0..2 {
            let sh = g.face_shape(a);
            let at = |i: isize, j: isize| -> f64 {
                let comp = &u.comps[a];
                let (ni, nj) = (sh[0] as isize, sh[1] as isize);
                // normal direction: beyond the wall face the value is irrelevant (wall faces are fixed at 0)
                if a == 0 && (i < 0 || i >= ni) || a == 1 && (j < 0 || j >= nj) {
                    return 0.0;
                }
                // tangential ghosts reflect with a sign flip
                if i < 0 || i >= ni {
                    let ii = if i < 0 { 0 } else { ni - 1 };
                    return -comp[(ii + ni * j) as usize];
                }
                if j < 0 || j >= nj {
                    let jj = if j < 0 { 0 } else { nj - 1 };
                    return -comp[(i + ni * jj) as usize];
                }
                comp[(i + ni * j) as usize]
            };
            for j in 0..sh[1] as isize {
                for i in 0..sh[0] as isize {
                    let ia = if a == 0 { i } else { j };
                    if ia == 0 || ia == sh[a] as isize - 1 {
                        continue;
                    }
                    let v = at(i, j);
                    let lap = (at(i + 1, j) - 2.0 * v + at(i - 1, j)) / (dx[0] * dx[0])
                        + (at(i, j + 1) - 2.0 * v + at(i, j - 1)) / (dx[1] * dx[1]);
                    pairing -= lap * v;
                }
            }
        }
        pairing *= g.cell_volume();
        let e = velocity_dirichlet(&u);
        assert!((e - pairing).abs() <= 1e-12 * e.abs(), "{e} vs {pairing}");
    }

    #[test]
    fn bounds_ratios() {
        let r = cumulative_bounds(0.0, 0.0, 0.0, 0.0, 0.05).unwrap();
        assert_eq!((r.consumption_ratio, r.dirichlet_ratio, r.pass), (0.0, 0.0, true));
        assert!(cumulative_bounds(1e-20, 0.0, 0.0, 0.0, 0.05).is_err());
        let r = cumulative_bounds(1.04, 0.2, 1.0, 0.5, 0.05).unwrap();
        assert!(r.pass);
        let r = cumulative_bounds(1.06, 0.2, 1.0, 0.5, 0.05).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn weakstar_entries() {
        let g = unit(64);
        let bank = TestBank::default_for(g);
        let flat = ScalarField::constant(g, 0.7);
        assert!(weakstar_proxy_explainer(&flat, 0.7, &bank).iter().all(|e| e.pairing == 0.0));
        let delta = 0.01;
        let n = ScalarField::from_fn(g, |x| 0.7 + delta * (PI * x[0]).cos());
        let table = weakstar_proxy_explainer(&n, 0.7, &bank);
        assert!(table[0].pairing < 1e-15);
        let cos = table.iter().find(|e| e.name == "cos1_x1").unwrap();
        assert!((cos.pairing - delta * 0.5).abs() < 1e-12, "{}", cos.pairing);
    }

    #[test]
    fn equilibrium_metrics_vanish() {
        let g = unit(16);
        let state = SimState::new(ScalarField::constant(g, 1.5), ScalarField::zeros(g), VectorField::zeros(g));
        let m = convergence_metrics(&state, 1.5, &TestBank::default_for(g));
        assert_eq!((m.weakstar, m.l2, m.sup_c, m.sup_u), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn csv_roundtrip() {
        let r = DiagnosticsRecord { t: 0.1, mass: 1.0 / 3.0, sup_u: 1e-300, conv_l2: f64::MAX, ..Default::default() };
        let text = format!("{}\n{}\n", csv_header(), r.csv_row());
        assert_eq!(parse_csv(&text).unwrap(), vec![r]);
        assert!(parse_csv("t,mass\n").is_err());
    }

    fn records(f: impl Fn(f64) -> f64) -> Vec<DiagnosticsRecord> {
        (0..20)
            .map(|i| {
                let t = i as f64 * 0.1;
                DiagnosticsRecord { t, sup_n: f(t), sup_c: 1.0, y_n: 2.0, ..Default::default() }
            })
            .collect()
    }

    #[test]
    fn monitor_verdicts() {
        assert!(boundedness_monitor(&records(|_| 1.0), 0.3, RunStatus::Completed).unwrap().pass);
        assert!(!boundedness_monitor(&records(|t| 1.0 + t), 0.3, RunStatus::Completed).unwrap().pass);
        assert!(boundedness_monitor(&records(|t| 2.0 - t), 0.3, RunStatus::Completed).unwrap().pass);
        assert!(!boundedness_monitor(&records(|_| 1.0), 0.3, RunStatus::DtAborted).unwrap().pass);
        let mut bad = records(|_| 1.0);
        bad[4].y_u = f64::NAN;
        let v = boundedness_monitor(&bad, 0.3, RunStatus::Completed).unwrap();
        assert!(!v.pass && v.failures[0].contains("record 4"), "{v}");
        assert!(boundedness_monitor(&records(|_| 1.0)[..5], 0.3, RunStatus::Completed).is_err());
    }

    #[test]
    fn velocity_noise_below_floor_is_not_growth() {
        let mut recs = records(|_| 1.0);
        for (i, r) in recs.iter_mut().enumerate() {
            r.sup_u = if i % 2 == 0 { 2e-13 } else { 2e-11 };
        }
        recs[6].sup_u = 2e-13;
        assert!(!boundedness_monitor(&recs, 0.3, RunStatus::Completed).unwrap().pass);
        let floors = NoiseFloors { sup_u: 5e-11, ..Default::default() };
        assert!(boundedness_monitor_with(&recs, 0.3, RunStatus::Completed, &floors).unwrap().pass);
        recs[15].sup_u = 1e-10;
        assert!(!boundedness_monitor_with(&recs, 0.3, RunStatus::Completed, &floors).unwrap().pass);
    }

    #[test]
    fn weak_residual_of_zero_history() {
        let g = unit(8);
        let params = ModelParams::prototype(2, g.lengths(), 2.0, 0.1).unwrap();
        let sim = Simulation::new(g, params, StepControl::default(), SolverSettings::default(), (2.0, 2.0)).unwrap();
        let zero = HistorySample { t: 0.0, n: ScalarField::zeros(g), c: ScalarField::zeros(g), u: VectorField::zeros(g) };
        let mut later = zero.clone();
        later.t = 0.5;
        let test = CosineTest { horizon: 0.5, modes: [1, 1, 0], lengths: g.lengths() };
        assert_eq!(weak_residual_c(&sim, &[zero, later], &test).unwrap(), 0.0);
        assert!(weak_residual_c(&sim, &[], &test).is_err());
    }
}
