//! Split time integrator for the regularized system.
//!
//! One step advances the velocity, then the signal, then the cells:
//!
//! 1. `u`: backward-Euler viscous solve with no-slip walls, explicit buoyancy
//!    `n grad(phi)` minus the lagged pressure gradient, then a discrete Leray
//!    projection whose potential increments the pressure.
//! 2. `c`: donor-cell advection in convective form, backward-Euler diffusion
//!    with Neumann walls, then the quotient consumption update
//!    `c / (1 + dt n f(c) / c)`.
//! 3. `n`: one explicit conservative flux update with face flux
//!    `D_eps(n) grad n - n_up (S_eps grad c + u)` and zero flux through walls.
//!
//! Steps that would make `n` negative are rejected and retried with half the
//! time step.

use thiserror::Error;

use crate::diagnostics::{self, DiagnosticsRecord};
use crate::fields::{for_each_index, for_interior_face_rows, for_interior_faces, gradient, shape_stride, Bc, Grid, ScalarField, VectorField};
use crate::linsolve::{project_with, solve_with, Location, Preconditioner, SolveError, Stencil, StopRule};
use crate::model::{pow_nonneg, Mat3, ModelParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("step {step} at t = {t}: time step {dt:e} below dt_min = {dt_min:e} ({reason})")]
    DtBelowMin { step: u64, t: f64, dt: f64, dt_min: f64, reason: String },
    #[error("step {step} at t = {t}: invariant violated: {what}")]
    Invariant { step: u64, t: f64, what: String },
    #[error("step {step} at t = {t}: {source}")]
    Solve { step: u64, t: f64, source: SolveError },
    #[error("invalid setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    /// Courant factor for advection plus chemotactic drift.
    pub cfl_adv: f64,
    /// Factor on the explicit nonlinear-diffusion limit.
    pub cfl_diff: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub t_end: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { cfl_adv: 0.4, cfl_diff: 0.25, dt_max: 1e-2, dt_min: 1e-12, t_end: 1.0 }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<(), StepError> {
        let ok_cfl = |v: f64| v > 0.0 && v <= 1.0;
        if !ok_cfl(self.cfl_adv) || !ok_cfl(self.cfl_diff) {
            return Err(StepError::Setup(format!(
                "CFL factors must lie in (0, 1], got {} and {}",
                self.cfl_adv, self.cfl_diff
            )));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return Err(StepError::Setup(format!(
                "need 0 < dt_min <= dt_max, got {} and {}",
                self.dt_min, self.dt_max
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(StepError::Setup(format!("t_end must be finite and >= 0, got {}", self.t_end)));
        }
        Ok(())
    }
}

/// Linear-solver settings shared by all implicit sub-steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Helmholtz solves stop once `max |r| <= cg_tol * max |rhs|`, or once the
    /// residual is below a floor: `cg_tol * max c0` for the signal and
    /// `1e-2 * proj_tol * min dx` for the velocity, which is well under the
    /// perturbation the projection itself leaves in `u`.
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub precond: Preconditioner,
    /// Bound on `max |div u|` after each projection.
    pub proj_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { cg_tol: 1e-13, cg_max_iter: 10_000, precond: Preconditioner::None, proj_tol: 5e-9 }
    }
}

/// Per-step invariant thresholds; a violation aborts the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantTolerances {
    pub mass_rel: f64,
    pub c_slack: f64,
    pub div_max: f64,
}

impl Default for InvariantTolerances {
    fn default() -> Self {
        InvariantTolerances { mass_rel: 1e-10, c_slack: 1e-12, div_max: 1e-8 }
    }
}

/// Integrals of the initial data that the bounds refer to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialTotals {
    /// `int n0`
    pub n_mass: f64,
    /// `(1/|Omega|) int n0`
    pub n_mean: f64,
    /// `int c0`
    pub c_integral: f64,
    /// `(1/2) int c0^2`
    pub c_half_l2sq: f64,
    pub c_max: f64,
}

impl InitialTotals {
    pub fn of(n: &ScalarField, c: &ScalarField) -> Self {
        let mass = n.total();
        InitialTotals {
            n_mass: mass,
            n_mean: mass / n.grid.volume(),
            c_integral: c.total(),
            c_half_l2sq: 0.5 * c.inner(c),
            c_max: c.max(),
        }
    }
}

/// Running trapezoid sums of the space-time integrals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Accumulators {
    /// `int_0^t int n f(c)`
    pub consumption: f64,
    /// `int_0^t int |grad c|^2`
    pub dirichlet_c: f64,
    /// `int_0^t int |grad n^((p+m-1)/2)|^2`
    pub sobolev_n: f64,
    last: Option<Integrands>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Integrands {
    consumption: f64,
    dirichlet_c: f64,
    sobolev_n: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub n: ScalarField,
    pub c: ScalarField,
    pub p: ScalarField,
    pub u: VectorField,
    pub t: f64,
    pub dt_last: f64,
    pub step: u64,
    pub acc: Accumulators,
    pub initial: InitialTotals,
}

impl SimState {
    /// Fresh state at `t = 0` with zero pressure; `u` must already be admissible.
    pub fn new(n: ScalarField, c: ScalarField, u: VectorField) -> Self {
        let grid = n.grid;
        let initial = InitialTotals::of(&n, &c);
        SimState { n, c, p: ScalarField::zeros(grid), u, t: 0.0, dt_last: 0.0, step: 0, acc: Accumulators::default(), initial }
    }

    pub fn grid(&self) -> Grid {
        self.n.grid
    }
}

/// Result of the Stokes sub-step.
#[derive(Debug, Clone)]
pub struct StokesUpdate {
    pub u: VectorField,
    pub p: ScalarField,
    /// `max |div u|` left by the projection.
    pub max_divergence: f64,
}

/// How an `advance` call ended.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdvanceSummary {
    pub steps: u64,
    pub rejected: u64,
}

/// Static context of a run: model, controls and precomputed face geometry.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub params: ModelParams,
    pub ctl: StepControl,
    pub solver: SolverSettings,
    pub tolerances: InvariantTolerances,
    /// Exponents `(p, q)` of the monitored functional.
    pub exponents: (f64, f64),
    grid: Grid,
    sensitivity: Mat3,
    diagonal_sensitivity: bool,
    face_rho: Vec<Vec<f64>>,
    face_grad_phi: Vec<Vec<f64>>,
    bank: diagnostics::TestBank,
    /// `-Lap` on cells with Neumann walls (also the projection operator).
    cell_laplace: Stencil,
    /// `-Lap` on the faces of each axis with no-slip walls.
    face_laplace: Vec<Stencil>,
}

impl Simulation {
    pub fn new(
        grid: Grid,
        params: ModelParams,
        ctl: StepControl,
        solver: SolverSettings,
        exponents: (f64, f64),
    ) -> Result<Self, StepError> {
        params.validate().map_err(|e| StepError::Setup(e.to_string()))?;
        ctl.validate()?;
        if params.dim != grid.dim() || params.lengths[..grid.dim()] != grid.lengths()[..grid.dim()] {
            return Err(StepError::Setup("model box does not match the grid".into()));
        }
        if !(exponents.0 > 1.0 && exponents.1 > 1.0) {
            return Err(StepError::Setup(format!("diagnostic exponents must exceed 1, got {exponents:?}")));
        }
        let dim = grid.dim();
        let mut face_rho = Vec::with_capacity(dim);
        let mut face_grad_phi = Vec::with_capacity(dim);
        for a in 0..dim {
            let centers = grid.face_centers(a);
            face_rho.push(
                centers
                    .iter()
                    .map(|&x| params.cutoff_domain(x).map_err(|e| StepError::Setup(e.to_string())))
                    .collect::<Result<Vec<_>, _>>()?,
            );
            face_grad_phi.push(centers.iter().map(|&x| params.potential_gradient(x)[a]).collect());
        }
        let setup = |e: SolveError| StepError::Setup(e.to_string());
        let cell_laplace = Stencil::template(grid, Location::Cell, Bc::Neumann).map_err(setup)?;
        let face_laplace = (0..dim)
            .map(|a| Stencil::template(grid, Location::Face(a), Bc::Dirichlet0).map_err(setup))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Simulation {
            cell_laplace,
            face_laplace,
            sensitivity: params.sensitivity([0.0; 3], 0.0, 0.0),
            diagonal_sensitivity: params.sensitivity_is_diagonal(),
            params,
            ctl,
            solver,
            tolerances: InvariantTolerances::default(),
            exponents,
            grid,
            face_rho,
            face_grad_phi,
            bank: diagnostics::TestBank::default_for(grid),
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn test_bank(&self) -> &diagnostics::TestBank {
        &self.bank
    }

    fn diffusivities(&self, n: &ScalarField) -> Vec<f64> {
        n.values.iter().map(|&v| self.params.soft_floor(self.params.diffusion_unchecked(v.max(0.0)))).collect()
    }

    /// Normal component of `S_eps grad c + u` on every face (zero on walls).
    pub fn face_drift(&self, n: &ScalarField, c: &ScalarField, u: &VectorField) -> Vec<Vec<f64>> {
        let grid = self.grid;
        let dim = grid.dim();
        let dx = grid.spacing();
        let cv = &c.values;
        let nv = &n.values;
        // cell-centered gradient components for the off-diagonal sensitivity terms
        let cell_grad: Vec<ScalarField> = if self.diagonal_sensitivity {
            Vec::new()
        } else {
            let g = gradient(c);
            (0..dim).map(|b| g.cell_average(b)).collect()
        };
        let mut out = Vec::with_capacity(dim);
        for a in 0..dim {
            let inv = 1.0 / dx[a];
            let rho = &self.face_rho[a];
            let ua = &u.comps[a];
            let s_row = self.sensitivity[a];
            let mut v = vec![0.0; grid.num_faces(a)];
            let s_aa = s_row[a] * inv;
            for_interior_face_rows(&grid, a, |fb, lb, rb, len| {
                let (vr, ur, pr) = (&mut v[fb..fb + len], &ua[fb..fb + len], &rho[fb..fb + len]);
                let (cl, cr) = (&cv[lb..lb + len], &cv[rb..rb + len]);
                let (nl, nr) = (&nv[lb..lb + len], &nv[rb..rb + len]);
                for i in 0..len {
                    let mut s_grad = s_aa * (cr[i] - cl[i]);
                    if !self.diagonal_sensitivity {
                        for b in (0..dim).filter(|&b| b != a) {
                            s_grad += s_row[b] * 0.5 * (cell_grad[b].values[lb + i] + cell_grad[b].values[rb + i]);
                        }
                    }
                    let scale = if pr[i] == 0.0 { 0.0 } else { pr[i] * self.params.cutoff_density(0.5 * (nl[i] + nr[i])) };
                    vr[i] = scale * s_grad + ur[i];
                }
            });
            out.push(v);
        }
        out
    }

    fn dt_bounds(&self, d_cell: &[f64], drift: &[Vec<f64>]) -> (f64, f64) {
        let dx = self.grid.spacing();
        let dim = self.grid.dim();
        let d_max = d_cell.iter().fold(0.0f64, |m, &d| m.max(d));
        let inv_dx2: f64 = (0..dim).map(|a| 1.0 / (dx[a] * dx[a])).sum();
        let dt_diff = if d_max > 0.0 { self.ctl.cfl_diff / (2.0 * d_max * inv_dx2) } else { f64::INFINITY };
        let adv_rate: f64 = (0..dim).map(|a| drift[a].iter().fold(0.0f64, |m, v| m.max(v.abs())) / dx[a]).sum();
        let dt_adv = if adv_rate > 0.0 { self.ctl.cfl_adv / adv_rate } else { f64::INFINITY };
        (dt_adv, dt_diff)
    }

    /// Largest admissible step: the minimum of the advective-drift limit,
    /// the explicit-diffusion limit and `dt_max`. Fails below `dt_min`.
    pub fn compute_dt(&self, state: &SimState) -> Result<f64, StepError> {
        let d_cell = self.diffusivities(&state.n);
        let drift = self.face_drift(&state.n, &state.c, &state.u);
        self.dt_from(state, &d_cell, &drift)
    }

    fn dt_from(&self, state: &SimState, d_cell: &[f64], drift: &[Vec<f64>]) -> Result<f64, StepError> {
        let (dt_adv, dt_diff) = self.dt_bounds(d_cell, drift);
        let dt = dt_adv.min(dt_diff).min(self.ctl.dt_max);
        if !(dt >= self.ctl.dt_min) {
            let reason = if dt_adv <= dt_diff { "advective/chemotactic drift limit" } else { "diffusion limit" };
            return Err(StepError::DtBelowMin {
                step: state.step,
                t: state.t,
                dt,
                dt_min: self.ctl.dt_min,
                reason: reason.into(),
            });
        }
        Ok(dt)
    }

    fn solve_err(&self, state: &SimState) -> impl Fn(SolveError) -> StepError {
        let (step, t) = (state.step, state.t);
        move |source| StepError::Solve { step, t, source }
    }

    /// Stokes sub-step: implicit viscous solve, then buoyancy and the old
    /// pressure gradient, then projection.
    pub fn step_u(&self, state: &SimState, dt: f64) -> Result<StokesUpdate, StepError> {
        let grid = self.grid;
        let err = self.solve_err(state);
        let dx = grid.spacing();
        let dx_min = dx[..grid.dim()].iter().fold(f64::INFINITY, |m, &d| m.min(d));
        let floor = 1e-2 * self.solver.proj_tol * dx_min;
        let nv = &state.n.values;
        let pv = &state.p.values;
        let mut w = VectorField::zeros(grid);
        for a in 0..grid.dim() {
            let op = self.face_laplace[a].with_coefficients(1.0, dt).map_err(&err)?;
            let rhs = &state.u.comps[a];
            let mut sol = rhs.clone();
            let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let rep = solve_with(
                &op,
                rhs,
                &mut sol,
                StopRule::MaxAbs((self.solver.cg_tol * scale).max(floor)),
                self.solver.cg_max_iter,
                self.solver.precond,
            )
            .map_err(&err)?;
            if !rep.converged {
                return Err(err(SolveError::NotConverged { iterations: rep.iterations, final_residual: rep.final_residual }));
            }
            let inv = 1.0 / dx[a];
            let phi = &self.face_grad_phi[a];
            let wa = &mut w.comps[a];
            for_interior_faces(&grid, a, |f, l, r| {
                let force = 0.5 * (nv[l] + nv[r]) * phi[f];
                wa[f] = sol[f] + dt * (force - (pv[r] - pv[l]) * inv);
            });
        }
        let proj = project_with(&self.cell_laplace, &w, self.solver.proj_tol, self.solver.cg_max_iter, self.solver.precond)
            .map_err(&err)?;
        let p = ScalarField {
            grid,
            values: pv.iter().zip(&proj.potential.values).map(|(p, dp)| p + dp / dt).collect(),
        };
        Ok(StokesUpdate { u: proj.velocity, p, max_divergence: proj.max_divergence })
    }

    /// Signal sub-step with the already-updated velocity `u`.
    pub fn step_c(&self, state: &SimState, u: &VectorField, dt: f64) -> Result<ScalarField, StepError> {
        let grid = self.grid;
        let dx = grid.spacing();
        let c = &state.c.values;
        let mut adv = c.clone();
        for a in 0..grid.dim() {
            let fshape = grid.face_shape(a);
            let fs = shape_stride(fshape, a);
            let cs = grid.cell_stride(a);
            let nc = grid.n_cells();
            let ua = &u.comps[a];
            let lam = dt / dx[a];
            for_each_index(nc, |i, j, k, idx| {
                let f = i + fshape[0] * (j + fshape[1] * k);
                let (ul, ur) = (ua[f], ua[f + fs]);
                let mut d = 0.0;
                if ul > 0.0 {
                    d += ul * (c[idx] - c[idx - cs]);
                }
                if ur < 0.0 {
                    d += ur * (c[idx + cs] - c[idx]);
                }
                adv[idx] -= lam * d;
            });
        }
        let op = self.cell_laplace.with_coefficients(1.0, dt).map_err(self.solve_err(state))?;
        let mut sol = adv.clone();
        let scale = adv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = self.solve_err(state);
        let rep = solve_with(
            &op,
            &adv,
            &mut sol,
            StopRule::MaxAbs(self.solver.cg_tol * scale.max(state.initial.c_max)),
            self.solver.cg_max_iter,
            self.solver.precond,
        )
        .map_err(&err)?;
        if !rep.converged {
            return Err(err(SolveError::NotConverged { iterations: rep.iterations, final_residual: rep.final_residual }));
        }
        const C_FLOOR: f64 = 1e-300;
        let linear = self.params.consumption_is_linear();
        for (cv, &nv) in sol.iter_mut().zip(&state.n.values) {
            let ci = cv.max(0.0);
            let rate = if linear { 1.0 } else { self.params.consumption_unchecked(ci) / ci.max(C_FLOOR) };
            *cv = ci / (1.0 + dt * nv * rate);
        }
        Ok(ScalarField { grid, values: sol })
    }

    /// Cell sub-step with the updated `c` and `u`. Returns `None` when the
    /// explicit update would produce a negative density.
    pub fn step_n(&self, n: &ScalarField, c: &ScalarField, u: &VectorField, dt: f64) -> Option<ScalarField> {
        let d_cell = self.diffusivities(n);
        self.step_n_with(n, c, u, &d_cell, dt)
    }

    fn step_n_with(&self, n: &ScalarField, c: &ScalarField, u: &VectorField, d_cell: &[f64], dt: f64) -> Option<ScalarField> {
        let grid = self.grid;
        let dx = grid.spacing();
        let nc = grid.n_cells();
        let nv = &n.values;
        let drift = self.face_drift(n, c, u);
        let mut out = nv.clone();
        for a in 0..grid.dim() {
            let fshape = grid.face_shape(a);
            let fs = shape_stride(fshape, a);
            let inv = 1.0 / dx[a];
            let va = &drift[a];
            let mut flux = vec![0.0; grid.num_faces(a)];
            for_interior_face_rows(&grid, a, |fb, lb, rb, len| {
                let (fr, vr) = (&mut flux[fb..fb + len], &va[fb..fb + len]);
                let (dl, dr) = (&d_cell[lb..lb + len], &d_cell[rb..rb + len]);
                let (nl, nr) = (&nv[lb..lb + len], &nv[rb..rb + len]);
                for i in 0..len {
                    let v = vr[i];
                    let up = if v >= 0.0 { nl[i] } else { nr[i] };
                    fr[i] = 0.5 * (dl[i] + dr[i]) * (nr[i] - nl[i]) * inv - up * v;
                }
            });
            let lam = dt * inv;
            for k in 0..nc[2] {
                for j in 0..nc[1] {
                    let cb = nc[0] * (j + nc[1] * k);
                    let fb = fshape[0] * (j + fshape[1] * k);
                    let row = &mut out[cb..cb + nc[0]];
                    let (lo, hi) = (&flux[fb..fb + nc[0]], &flux[fb + fs..fb + fs + nc[0]]);
                    for i in 0..nc[0] {
                        row[i] += lam * (hi[i] - lo[i]);
                    }
                }
            }
        }
        if out.iter().any(|v| !(*v >= 0.0)) {
            return None;
        }
        Some(ScalarField { grid, values: out })
    }

    fn integrands(&self, state: &SimState) -> Integrands {
        let dv = self.grid.cell_volume();
        let linear = self.params.consumption_is_linear();
        let consumption = state
            .n
            .values
            .iter()
            .zip(&state.c.values)
            .map(|(&n, &c)| if linear { n * c } else { n * self.params.consumption_unchecked(c.max(0.0)) })
            .sum::<f64>()
            * dv;
        let dirichlet_c = diagnostics::dirichlet_energy_of(&self.grid, &state.c.values);
        let theta = 0.5 * (self.exponents.0 + self.params.m - 1.0);
        let transformed: Vec<f64> = state.n.values.iter().map(|&v| pow_nonneg(v.max(0.0), theta)).collect();
        let sobolev_n = diagnostics::dirichlet_energy_of(&self.grid, &transformed);
        Integrands { consumption, dirichlet_c, sobolev_n }
    }

    /// Diagnostics row for the current state.
    pub fn record(&self, state: &SimState) -> DiagnosticsRecord {
        diagnostics::record(self, state)
    }

    /// Advances to `until`, emitting a record every `cadence` units of
    /// simulation time (step sizes are clamped to land on record times).
    pub fn advance(
        &self,
        state: &mut SimState,
        until: f64,
        cadence: Option<f64>,
        sink: &mut dyn FnMut(&SimState, &DiagnosticsRecord),
    ) -> Result<AdvanceSummary, StepError> {
        let mut summary = AdvanceSummary::default();
        if state.acc.last.is_none() {
            state.acc.last = Some(self.integrands(state));
        }
        if let Some(h) = cadence {
            if !(h > 0.0) {
                return Err(StepError::Setup(format!("record cadence must be positive, got {h}")));
            }
        }
        let t0 = state.t;
        let mut records_done = 0u64;
        let next_record = |done: u64| cadence.map(|h| t0 + (done + 1) as f64 * h);
        let mass0 = state.initial.n_mass;
        let time_eps = 1e-12 * until.abs().max(1.0);

        while state.t < until - time_eps {
            let d_cell = self.diffusivities(&state.n);
            let drift = self.face_drift(&state.n, &state.c, &state.u);
            let dt_req = self.dt_from(state, &d_cell, &drift)?;
            let mut target = until;
            if let Some(tr) = next_record(records_done) {
                target = target.min(tr);
            }
            let mut dt = dt_req;
            let mut lands = false;
            if state.t + dt >= target - time_eps {
                dt = target - state.t;
                lands = true;
            }
            let (stokes, c_new, n_new) = loop {
                let stokes = self.step_u(state, dt)?;
                let c_new = self.step_c(state, &stokes.u, dt)?;
                if let Some(n_new) = self.step_n_with(&state.n, &c_new, &stokes.u, &d_cell, dt) {
                    break (stokes, c_new, n_new);
                }
                summary.rejected += 1;
                dt *= 0.5;
                lands = false;
                if dt < self.ctl.dt_min {
                    return Err(StepError::DtBelowMin {
                        step: state.step,
                        t: state.t,
                        dt,
                        dt_min: self.ctl.dt_min,
                        reason: "positivity of n after repeated step rejection".into(),
                    });
                }
            };
            let c_max_prev = state.c.max();
            let div_max = stokes.max_divergence;
            state.u = stokes.u;
            state.p = stokes.p;
            state.c = c_new;
            state.n = n_new;
            state.t = if lands { target } else { state.t + dt };
            state.dt_last = dt;
            state.step += 1;
            summary.steps += 1;

            let now = self.integrands(state);
            if let Some(prev) = state.acc.last {
                state.acc.consumption += 0.5 * dt * (prev.consumption + now.consumption);
                state.acc.dirichlet_c += 0.5 * dt * (prev.dirichlet_c + now.dirichlet_c);
                state.acc.sobolev_n += 0.5 * dt * (prev.sobolev_n + now.sobolev_n);
            }
            state.acc.last = Some(now);

            self.check_invariants(state, mass0, c_max_prev, div_max)?;

            if let Some(tr) = next_record(records_done) {
                if state.t >= tr - time_eps {
                    records_done += 1;
                    let rec = self.record(state);
                    sink(state, &rec);
                }
            }
        }
        Ok(summary)
    }

    fn check_invariants(&self, state: &SimState, mass0: f64, c_max_prev: f64, div_max: f64) -> Result<(), StepError> {
        let fail = |what: String| Err(StepError::Invariant { step: state.step, t: state.t, what });
        let tol = self.tolerances;
        // sums propagate any NaN or infinity, which min/max would skip
        let mass = state.n.total();
        let probe = mass + state.c.total() + state.p.total() + state.u.comps.iter().flatten().sum::<f64>();
        if !probe.is_finite() {
            return fail("non-finite field value".into());
        }
        if (mass - mass0).abs() > tol.mass_rel * mass0.abs().max(f64::MIN_POSITIVE) {
            return fail(format!("mass drift {:e} relative", (mass - mass0).abs() / mass0.abs().max(f64::MIN_POSITIVE)));
        }
        let n_min = state.n.min();
        if n_min < 0.0 {
            return fail(format!("negative density {n_min:e}"));
        }
        let (c_min, c_max) = (state.c.min(), state.c.max());
        if c_min < -tol.c_slack {
            return fail(format!("negative concentration {c_min:e}"));
        }
        if c_max > c_max_prev + tol.c_slack {
            return fail(format!("maximum of c grew from {c_max_prev} to {c_max}"));
        }
        if div_max > tol.div_max {
            return fail(format!("max |div u| = {div_max:e}"));
        }
        Ok(())
    }
}
