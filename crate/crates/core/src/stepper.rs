//! Time-discrete schemes, initial-data preparation and the outer time loop.

use serde::{Deserialize, Serialize};

use crate::chi_solver::{
    minimize_chi_checked, one_sided_vi_residual, recover_multipliers, ChiSolveOptions, ChiStepProblem,
    Multipliers,
};
use crate::data::{SpaceTime, TimeProfile};
use crate::error::{Error, Result};
use crate::grid::{Mesh, ScalarField, VectorField};
use crate::linsolve::{cg_solve_checked, CgOptions, SolveStats};
use crate::material::{Conductivity, MaterialModel, Potential};
use crate::operators::{
    assemble_elastic, assemble_viscous, assemble_w_diffusion, divergence_lumped, elastic_density_nodal, laplacian,
    lumped_mass, thermal_coupling_vector, SparseMatrix,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Fully implicit reversible system without thermal expansion.
    Reversible,
    /// Reversible system with thermal expansion and truncated `K`, `Θ`.
    ReversibleExpansion,
    /// Semi-implicit irreversible system.
    Irreversible,
    /// Irreversible system at prescribed temperature, Yosida-regularized.
    IsothermalIrreversible,
    /// Reversible system at prescribed temperature.
    IsothermalReversible,
}

impl Scheme {
    pub fn is_isothermal(self) -> bool {
        matches!(self, Scheme::IsothermalIrreversible | Scheme::IsothermalReversible)
    }

    pub fn is_irreversible(self) -> bool {
        matches!(self, Scheme::Irreversible | Scheme::IsothermalIrreversible)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Relative residual target of every linear solve.
    pub cg_tol: f64,
    /// Projected-gradient target of the phase-field solve.
    pub chi_tol: f64,
    pub chi_max_iter: usize,
    /// Fixed-point target on successive iterates (∞-norm).
    pub fp_tol: f64,
    pub max_outer: usize,
    pub damping: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { cg_tol: 1e-12, chi_tol: 1e-10, chi_max_iter: 50_000, fp_tol: 1e-9, max_outer: 200, damping: 0.5 }
    }
}

/// Uniform partition of `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub t_end: f64,
    pub tau: f64,
    pub n_steps: usize,
}

impl Schedule {
    pub fn new(t_end: f64, tau: f64) -> Result<Self> {
        if !(t_end > 0.0 && tau > 0.0) {
            return Err(Error::Schedule(format!("need T > 0 and tau > 0 (got T={t_end}, tau={tau})")));
        }
        let n = (t_end / tau).round();
        if n < 1.0 || (n * tau - t_end).abs() > 1e-12 * t_end.max(1.0) {
            return Err(Error::Schedule(format!("T/tau must be an integer (got T={t_end}, tau={tau})")));
        }
        Ok(Schedule { t_end, tau, n_steps: n as usize })
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.tau
    }

    pub fn halved(&self) -> Schedule {
        Schedule { t_end: self.t_end, tau: 0.5 * self.tau, n_steps: 2 * self.n_steps }
    }
}

/// Means `(1/τ) ∫_{t_{k-1}}^{t_k}` of a time profile; entry `k-1` for step `k`.
pub fn local_means(profile: &TimeProfile, schedule: &Schedule) -> Vec<f64> {
    (1..=schedule.n_steps)
        .map(|k| profile.integral(schedule.time(k - 1), schedule.time(k)) / schedule.tau)
        .collect()
}

/// Complete description of one run except the initial data.
#[derive(Clone, Debug)]
pub struct Problem {
    pub mesh: Mesh,
    pub model: MaterialModel,
    pub scheme: Scheme,
    pub schedule: Schedule,
    /// Body force, one datum per component.
    pub load: Vec<SpaceTime>,
    pub heat_source: SpaceTime,
    /// Prescribed temperature of the isothermal schemes.
    pub theta_star: SpaceTime,
    pub settings: SolverSettings,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        let dim = self.mesh.dim();
        self.model.validate(dim)?;
        let m = &self.model;
        let bad = |s: &str| Err(Error::Config(s.to_string()));
        if self.scheme.is_irreversible() != m.irreversible {
            return bad(if m.irreversible {
                "mu = 1 needs scheme irreversible or isothermal_irreversible"
            } else {
                "schemes irreversible and isothermal_irreversible need mu = 1 (with potential indicator-half-line)"
            });
        }
        if m.rho != 0.0 && self.scheme != Scheme::ReversibleExpansion {
            return bad("rho != 0 is only supported by scheme reversible_expansion");
        }
        if self.scheme == Scheme::ReversibleExpansion {
            if !matches!(m.conductivity, Conductivity::Power { .. }) {
                return bad("scheme reversible_expansion needs the power conductivity K(w) = c10 (w^(2q) + 1)");
            }
            if m.truncation.is_none() {
                return bad("scheme reversible_expansion needs a truncation level M");
            }
        }
        if self.load.len() != dim {
            return Err(Error::Shape { expected: dim, got: self.load.len() });
        }
        let s = &self.settings;
        if !(s.damping > 0.0 && s.damping <= 1.0) {
            return bad("damping must lie in (0, 1]");
        }
        if !(s.cg_tol > 0.0 && s.chi_tol > 0.0 && s.fp_tol > 0.0) {
            return bad("solver tolerances must be positive");
        }
        Ok(())
    }
}

/// Nodal initial data: temperature, displacement, velocity, phase.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialData {
    pub theta0: Vec<f64>,
    pub u0: Vec<f64>,
    pub v0: Vec<f64>,
    pub chi0: Vec<f64>,
}

/// Unknowns at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub k: usize,
    pub w: ScalarField,
    pub u: VectorField,
    /// Displacement at the previous level.
    pub u_prev: VectorField,
    pub chi: ScalarField,
}

impl State {
    /// Discrete velocity `(u - u_prev) / τ`.
    pub fn velocity(&self, tau: f64) -> Vec<f64> {
        self.u.values.iter().zip(&self.u_prev.values).map(|(a, b)| (a - b) / tau).collect()
    }
}

/// Everything one step used, for a posteriori bookkeeping.
#[derive(Clone, Debug)]
pub struct StepTrace {
    pub k: usize,
    pub tau: f64,
    pub scheme: Scheme,
    pub chi_prev: Vec<f64>,
    pub chi: Vec<f64>,
    pub u_prev2: Vec<f64>,
    pub u_prev: Vec<f64>,
    pub u: Vec<f64>,
    pub w_prev: Vec<f64>,
    pub w: Vec<f64>,
    /// Temperature entering the phase equation.
    pub theta_chi: Vec<f64>,
    /// Elastic drive `b' ε R_e ε / 2` of the phase equation.
    pub drive: Vec<f64>,
    /// Viscous weight (including `δ`) and elastic weight of the momentum step.
    pub a_coef: Vec<f64>,
    pub b_coef: Vec<f64>,
    /// Elastic weight of the previous step.
    pub b_coef_prev: Vec<f64>,
    /// Temperature entering the thermal-expansion term, if any.
    pub theta_u: Option<Vec<f64>>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub multipliers: Multipliers,
    /// `‖b‖₂` of the momentum system after boundary elimination.
    pub u_rhs_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepReport {
    pub k: usize,
    pub t: f64,
    pub outer_iterations: usize,
    pub fixed_point_increment: f64,
    pub chi_iterations: usize,
    pub chi_residual: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub vi_violation: f64,
    pub min_w: f64,
    pub max_abs_w: f64,
    pub chi_monotone: bool,
    pub min_chi: f64,
    pub max_chi: f64,
    pub xi_min: f64,
    pub xi_max: f64,
    pub zeta_min: f64,
    pub zeta_max: f64,
}

/// Full output of [`run`].
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub traces: Vec<StepTrace>,
    pub reports: Vec<StepReport>,
}

/// Phase-field subproblem of `scheme` for drive `h`.
pub fn chi_problem_for<'a>(
    scheme: Scheme,
    mesh: &'a Mesh,
    model: &'a MaterialModel,
    chi_prev: Vec<f64>,
    tau: f64,
    h: Vec<f64>,
) -> Result<ChiStepProblem<'a>> {
    match scheme {
        Scheme::Reversible | Scheme::ReversibleExpansion | Scheme::IsothermalReversible => {
            ChiStepProblem::reversible(mesh, model, chi_prev, tau, h)
        }
        Scheme::Irreversible => ChiStepProblem::irreversible(mesh, model, chi_prev, tau, h),
        Scheme::IsothermalIrreversible => ChiStepProblem::yosida(mesh, model, chi_prev, tau, h),
    }
}

/// Weights `(a + δ, b)` (or `b + δ`) of the momentum step for phase values `chi`.
pub fn momentum_weights(scheme: Scheme, model: &MaterialModel, chi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let shift = if model.delta_elastic { model.delta } else { 0.0 };
    if scheme == Scheme::IsothermalIrreversible {
        (
            chi.iter().map(|&c| model.a.value(c).max(0.0) + model.delta).collect(),
            chi.iter().map(|&c| model.b.value(c.max(0.0)) + shift).collect(),
        )
    } else {
        (
            chi.iter().map(|&c| model.a.value(c) + model.delta).collect(),
            chi.iter().map(|&c| model.b.value(c) + shift).collect(),
        )
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn relax(it: &mut [f64], new: &[f64], omega: f64) {
    for (x, n) in it.iter_mut().zip(new) {
        *x += omega * (n - *x);
    }
}

/// Per-run precomputed data and the step routines.
pub struct Stepper<'a> {
    pub problem: &'a Problem,
    mass: Vec<f64>,
    mass_vec: Vec<f64>,
    bdofs: Vec<usize>,
    load_space: Vec<Vec<f64>>,
    load_means: Vec<Vec<f64>>,
    g_space: Vec<f64>,
    g_means: Vec<f64>,
    ts_space: Vec<f64>,
    ts_means: Vec<f64>,
}

struct USolve {
    u: Vec<f64>,
    stats: SolveStats,
    rhs_norm: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(problem: &'a Problem) -> Result<Self> {
        problem.validate()?;
        let mesh = &problem.mesh;
        let sched = &problem.schedule;
        let mass = lumped_mass(mesh);
        let dim = mesh.dim();
        let mass_vec = (0..mesh.n_nodes() * dim).map(|j| mass[j / dim]).collect();
        Ok(Stepper {
            problem,
            mass,
            mass_vec,
            bdofs: mesh.boundary_dofs(),
            load_space: problem.load.iter().map(|l| l.space.nodal(mesh)).collect(),
            load_means: problem.load.iter().map(|l| local_means(&l.time, sched)).collect(),
            g_space: problem.heat_source.space.nodal(mesh),
            g_means: local_means(&problem.heat_source.time, sched),
            ts_space: problem.theta_star.space.nodal(mesh),
            ts_means: local_means(&problem.theta_star.time, sched),
        })
    }

    fn mesh(&self) -> &Mesh {
        &self.problem.mesh
    }

    fn model(&self) -> &MaterialModel {
        &self.problem.model
    }

    fn tau(&self) -> f64 {
        self.problem.schedule.tau
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Nodal body force `f^k`.
    pub fn load(&self, k: usize) -> Vec<f64> {
        let dim = self.mesh().dim();
        let n = self.mesh().n_nodes();
        let mut f = vec![0.0; n * dim];
        for c in 0..dim {
            let m = self.load_means[c][k - 1];
            for i in 0..n {
                f[i * dim + c] = self.load_space[c][i] * m;
            }
        }
        f
    }

    /// Nodal heat source `g^k`.
    pub fn heat_source(&self, k: usize) -> Vec<f64> {
        let m = self.g_means[k - 1];
        self.g_space.iter().map(|s| s * m).collect()
    }

    /// Prescribed temperature `Θ*^k`, with `Θ*^0 := Θ*^1`.
    pub fn theta_star(&self, k: usize) -> Vec<f64> {
        let m = self.ts_means[k.max(1) - 1];
        self.ts_space.iter().map(|s| s * m).collect()
    }

    fn theta_scalar(&self, w: f64) -> f64 {
        match (self.problem.scheme, self.model().truncation) {
            (Scheme::ReversibleExpansion, Some(m)) => self.model().theta_truncated(w, m),
            _ => self.model().theta_of_w(w),
        }
    }

    fn conductivity(&self, w: f64) -> f64 {
        match (self.problem.scheme, self.model().truncation) {
            (Scheme::ReversibleExpansion, Some(m)) => self.model().conductivity_truncated(w, m),
            _ => self.model().conductivity_ratio(w),
        }
    }

    fn theta_field(&self, w: &[f64]) -> Vec<f64> {
        w.iter().map(|&x| self.theta_scalar(x)).collect()
    }

    fn cg_opts(&self) -> CgOptions {
        CgOptions { tol: self.problem.settings.cg_tol, max_iter: None, neumann_kernel: false }
    }

    fn chi_opts(&self) -> ChiSolveOptions {
        let s = &self.problem.settings;
        ChiSolveOptions { tol: s.chi_tol, max_iter: s.chi_max_iter }
    }

    /// Builds the state at `k = 0`: smoothed enthalpy, `u^{-1} = u0 - τ v0`.
    pub fn prepare_initial(&self, init: &InitialData) -> Result<State> {
        let mesh = self.mesh();
        let model = self.model();
        let n = mesh.n_nodes();
        let nd = n * mesh.dim();
        for (len, want) in [(init.theta0.len(), n), (init.chi0.len(), n), (init.u0.len(), nd), (init.v0.len(), nd)] {
            if len != want {
                return Err(Error::Shape { expected: want, got: len });
            }
        }
        if let Some((i, t)) = init.theta0.iter().enumerate().find(|(_, t)| !(**t >= 0.0)) {
            return Err(Error::InitialData(format!("theta0 = {t} < 0 at node {i}")));
        }
        let (lo, hi) = match model.potential {
            Potential::Logarithmic { .. } => (0.0, 1.0),
            _ => model.beta_feasible_interval(),
        };
        let open = matches!(model.potential, Potential::Logarithmic { .. });
        for (i, &c) in init.chi0.iter().enumerate() {
            let inside = if open { c > lo && c < hi } else { c >= lo && c <= hi };
            if !inside {
                return Err(Error::InitialData(format!("chi0 = {c} at node {i} is outside the domain of the potential")));
            }
        }
        let w = if self.problem.scheme.is_isothermal() {
            vec![0.0; n]
        } else {
            let w0: Vec<f64> = init.theta0.iter().map(|&t| model.enthalpy(t)).collect::<Result<_>>()?;
            self.smooth_enthalpy(&w0, model.enthalpy(init.theta0.iter().copied().fold(f64::INFINITY, f64::min))?)?
        };
        let mut u0 = init.u0.clone();
        let mut u_prev: Vec<f64> = init.u0.iter().zip(&init.v0).map(|(u, v)| u - self.tau() * v).collect();
        for &d in &self.bdofs {
            u0[d] = 0.0;
            u_prev[d] = 0.0;
        }
        let dim = mesh.dim();
        Ok(State {
            k: 0,
            w: ScalarField(w),
            u: VectorField { dim, values: u0 },
            u_prev: VectorField { dim, values: u_prev },
            chi: ScalarField(init.chi0.clone()),
        })
    }

    /// `(M + τ^{2/r} L) w = M w0` with `r = (d+2)/(d+1)`, then clamped from
    /// below by `floor`.
    pub fn smooth_enthalpy(&self, w0: &[f64], floor: f64) -> Result<Vec<f64>> {
        let d = self.mesh().dim() as f64;
        let r = (d + 2.0) / (d + 1.0);
        let weight = self.tau().powf(2.0 / r);
        let lap = laplacian(self.mesh());
        let mut a = SparseMatrix::linear_combination(&[(weight, &lap)])?;
        a.add_diagonal(&self.mass);
        let rhs: Vec<f64> = w0.iter().zip(&self.mass).map(|(w, m)| w * m).collect();
        let (w, _) = cg_solve_checked(&a, &rhs, Some(w0), &self.cg_opts())?;
        Ok(w.into_iter().map(|x| x.max(floor)).collect())
    }

    fn solve_u(
        &self,
        state: &State,
        a: &[f64],
        b: &[f64],
        f: &[f64],
        theta_u: Option<&[f64]>,
        guess: Option<&[f64]>,
    ) -> Result<USolve> {
        let mesh = self.mesh();
        let model = self.model();
        let tau = self.tau();
        let v = assemble_viscous(a, mesh, model)?;
        let e = assemble_elastic(b, mesh, model)?;
        let mut mat = SparseMatrix::linear_combination(&[(1.0 / tau, &v), (1.0, &e)])?;
        mat.add_diagonal(&self.mass_vec.iter().map(|m| m / (tau * tau)).collect::<Vec<_>>());
        let u1 = &state.u.values;
        let u2 = &state.u_prev.values;
        let vu1 = v.mul_vec(u1);
        let mut rhs: Vec<f64> = (0..u1.len())
            .map(|j| self.mass_vec[j] * ((2.0 * u1[j] - u2[j]) / (tau * tau) + f[j]) + vu1[j] / tau)
            .collect();
        if let Some(th) = theta_u {
            let t = thermal_coupling_vector(th, mesh, model.rho)?;
            rhs.iter_mut().zip(&t).for_each(|(r, x)| *r += x);
        }
        mat.apply_dirichlet(&self.bdofs);
        for &d in &self.bdofs {
            rhs[d] = 0.0;
        }
        let rhs_norm = rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (u, stats) = cg_solve_checked(&mat, &rhs, guess, &self.cg_opts())?;
        Ok(USolve { u, stats, rhs_norm })
    }

    /// Enthalpy solve with coupling coefficients `c_i` multiplying `Θ(w_i)`:
    /// non-negative `c` enters the matrix through the secant `Θ(w_old)/w_old`,
    /// negative `c` is lagged to the right side, which keeps an M-matrix.
    fn solve_w(
        &self,
        w_prev: &[f64],
        diffusion: &SparseMatrix,
        coupling: &[f64],
        w_old: &[f64],
        g: &[f64],
        extra: Option<&[f64]>,
    ) -> Result<(Vec<f64>, SolveStats)> {
        let tau = self.tau();
        let n = w_prev.len();
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let m = self.mass[i];
            diag[i] = m / tau;
            rhs[i] = m * w_prev[i] / tau + m * g[i];
            let c = coupling[i];
            if c >= 0.0 {
                if w_old[i] > 0.0 {
                    diag[i] += c * self.theta_scalar(w_old[i]) / w_old[i];
                }
            } else {
                rhs[i] -= c * self.theta_scalar(w_old[i]);
            }
            if let Some(x) = extra {
                rhs[i] += x[i];
            }
        }
        let mut a = diffusion.clone();
        a.add_diagonal(&diag);
        cg_solve_checked(&a, &rhs, Some(w_old), &self.cg_opts())
    }

    fn diffusion_matrix(&self, w_prev: &[f64]) -> Result<SparseMatrix> {
        let k: Vec<f64> = w_prev.iter().map(|&w| self.conductivity(w)).collect();
        assemble_w_diffusion(&k, self.mesh())
    }

    fn elastic_drive(&self, u: &[f64]) -> Result<Vec<f64>> {
        let bp = self.model().b.derivative();
        Ok(elastic_density_nodal(u, self.mesh(), self.model())?.into_iter().map(|d| bp * d).collect())
    }

    /// One step of the configured scheme.
    pub fn step(&self, state: &State) -> Result<(State, StepTrace, StepReport)> {
        match self.problem.scheme {
            Scheme::Reversible | Scheme::ReversibleExpansion => self.step_reversible(state),
            Scheme::Irreversible => self.step_irreversible(state),
            Scheme::IsothermalIrreversible | Scheme::IsothermalReversible => self.step_isothermal(state),
        }
    }

    /// Implicit reversible step, with thermal expansion when `ρ ≠ 0`; the
    /// coupled system is resolved by damped block Gauss–Seidel.
    pub fn step_reversible(&self, state: &State) -> Result<(State, StepTrace, StepReport)> {
        let mesh = self.mesh();
        let model = self.model();
        let tau = self.tau();
        let k = state.k + 1;
        let s = self.problem.settings;
        let with_u = model.rho != 0.0;
        let chi_prev = &state.chi.0;
        let w_prev = &state.w.0;
        let f = self.load(k);
        let g = self.heat_source(k);
        let drive = self.elastic_drive(&state.u.values)?;
        let diffusion = self.diffusion_matrix(w_prev)?;

        let mut chi_it = chi_prev.clone();
        let mut w_it = w_prev.clone();
        let extrap: Vec<f64> = state.u.values.iter().zip(&state.u_prev.values).map(|(a, b)| 2.0 * a - b).collect();
        let mut u_it = extrap.clone();
        let mut cg_iter = 0;
        let mut cg_res: f64 = 0.0;
        let mut chi_iter = 0;
        let mut increment = f64::INFINITY;
        let mut outer = 0;
        let mut last_pass = false;
        loop {
            outer += 1;
            let omega = if last_pass { 1.0 } else { s.damping };
            let theta = self.theta_field(&w_it);
            let h = sub(&drive, &theta);
            let prob = ChiStepProblem::reversible(mesh, model, chi_prev.clone(), tau, h)?;
            let (chi_new, rep) = minimize_chi_checked(&prob, &chi_it, &self.chi_opts())?;
            chi_iter += rep.iterations;
            let mut inc = max_abs_diff(&chi_new, &chi_it);
            relax(&mut chi_it, &chi_new, omega);

            let mut coupling: Vec<f64> =
                (0..chi_it.len()).map(|i| self.mass[i] * (chi_it[i] - chi_prev[i]) / tau).collect();
            let mut u_rhs_norm = 0.0;
            if with_u {
                let (a, b) = momentum_weights(self.problem.scheme, model, &chi_it);
                let us = self.solve_u(state, &a, &b, &f, Some(&theta), Some(&u_it))?;
                cg_iter += us.stats.iterations;
                cg_res = cg_res.max(us.stats.final_residual / us.rhs_norm.max(f64::MIN_POSITIVE));
                inc = inc.max(max_abs_diff(&us.u, &u_it));
                relax(&mut u_it, &us.u, omega);
                u_rhs_norm = us.rhs_norm;
                let du: Vec<f64> = u_it.iter().zip(&state.u.values).map(|(a, b)| (a - b) / tau).collect();
                let div = divergence_lumped(&du, mesh)?;
                coupling.iter_mut().zip(&div).for_each(|(c, d)| *c += model.rho * d);
            }
            let (w_new, ws) = self.solve_w(w_prev, &diffusion, &coupling, &w_it, &g, None)?;
            cg_iter += ws.iterations;
            inc = inc.max(max_abs_diff(&w_new, &w_it));
            relax(&mut w_it, &w_new, omega);

            if last_pass {
                increment = increment.min(inc);
                let (u, u_stats, rhs_norm) = if with_u {
                    (u_it.clone(), None, u_rhs_norm)
                } else {
                    let (a, b) = momentum_weights(self.problem.scheme, model, &chi_it);
                    let us = self.solve_u(state, &a, &b, &f, None, Some(&extrap))?;
                    (us.u, Some(us.stats), us.rhs_norm)
                };
                if let Some(st) = u_stats {
                    cg_iter += st.iterations;
                    cg_res = cg_res.max(st.final_residual / rhs_norm.max(f64::MIN_POSITIVE));
                }
                let theta_u = if with_u { Some(theta.clone()) } else { None };
                return self.finish(
                    state,
                    prob,
                    chi_it,
                    u,
                    w_it,
                    theta,
                    drive,
                    theta_u,
                    f,
                    g,
                    rhs_norm,
                    [outer, chi_iter, cg_iter],
                    [increment, cg_res],
                );
            }
            increment = inc;
            if inc <= s.fp_tol {
                last_pass = true;
            } else if outer >= s.max_outer {
                return Err(Error::FixedPoint { step: k, iterations: outer, increment: inc });
            }
        }
    }

    /// Semi-implicit irreversible step: phase, then momentum, then enthalpy.
    pub fn step_irreversible(&self, state: &State) -> Result<(State, StepTrace, StepReport)> {
        let mesh = self.mesh();
        let model = self.model();
        let tau = self.tau();
        let k = state.k + 1;
        let chi_prev = &state.chi.0;
        let w_prev = &state.w.0;
        let f = self.load(k);
        let g = self.heat_source(k);
        let drive = self.elastic_drive(&state.u.values)?;
        let theta = self.theta_field(w_prev);
        let prob = ChiStepProblem::irreversible(mesh, model, chi_prev.clone(), tau, sub(&drive, &theta))?;
        let (chi, rep) = minimize_chi_checked(&prob, chi_prev, &self.chi_opts())?;

        let (a, b) = momentum_weights(Scheme::Irreversible, model, &chi);
        let guess: Vec<f64> = state.u.values.iter().zip(&state.u_prev.values).map(|(a, b)| 2.0 * a - b).collect();
        let us = self.solve_u(state, &a, &b, &f, None, Some(&guess))?;

        let diffusion = self.diffusion_matrix(w_prev)?;
        let extra: Vec<f64> = (0..chi.len()).map(|i| -self.mass[i] * (chi[i] - chi_prev[i]) / tau * theta[i]).collect();
        let zero = vec![0.0; chi.len()];
        let (w, ws) = self.solve_w(w_prev, &diffusion, &zero, w_prev, &g, Some(&extra))?;
        let cg_res = us.stats.final_residual / us.rhs_norm.max(f64::MIN_POSITIVE);
        self.finish(
            state,
            prob,
            chi,
            us.u,
            w,
            theta,
            drive,
            None,
            f,
            g,
            us.rhs_norm,
            [1, rep.iterations, us.stats.iterations + ws.iterations],
            [0.0, cg_res],
        )
    }

    /// Isothermal steps: phase at prescribed temperature, then momentum.
    pub fn step_isothermal(&self, state: &State) -> Result<(State, StepTrace, StepReport)> {
        let mesh = self.mesh();
        let model = self.model();
        let tau = self.tau();
        let k = state.k + 1;
        let scheme = self.problem.scheme;
        let chi_prev = &state.chi.0;
        let f = self.load(k);
        let theta = if scheme == Scheme::IsothermalIrreversible { self.theta_star(k - 1) } else { self.theta_star(k) };
        let drive = self.elastic_drive(&state.u.values)?;
        let prob = chi_problem_for(scheme, mesh, model, chi_prev.clone(), tau, sub(&drive, &theta))?;
        let (chi, rep) = minimize_chi_checked(&prob, chi_prev, &self.chi_opts())?;
        let (a, b) = momentum_weights(scheme, model, &chi);
        let guess: Vec<f64> = state.u.values.iter().zip(&state.u_prev.values).map(|(a, b)| 2.0 * a - b).collect();
        let us = self.solve_u(state, &a, &b, &f, None, Some(&guess))?;
        let cg_res = us.stats.final_residual / us.rhs_norm.max(f64::MIN_POSITIVE);
        let zero = vec![0.0; chi.len()];
        self.finish(
            state,
            prob,
            chi,
            us.u,
            zero,
            theta,
            drive,
            None,
            f,
            vec![0.0; chi_prev.len()],
            us.rhs_norm,
            [1, rep.iterations, us.stats.iterations],
            [0.0, cg_res],
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        state: &State,
        prob: ChiStepProblem,
        chi: Vec<f64>,
        u: Vec<f64>,
        w: Vec<f64>,
        theta_chi: Vec<f64>,
        drive: Vec<f64>,
        theta_u: Option<Vec<f64>>,
        f: Vec<f64>,
        g: Vec<f64>,
        u_rhs_norm: f64,
        counts: [usize; 3],
        residuals: [f64; 2],
    ) -> Result<(State, StepTrace, StepReport)> {
        let k = state.k + 1;
        let scheme = self.problem.scheme;
        let model = self.model();
        let multipliers = recover_multipliers(&chi, &prob)?;
        let vi = one_sided_vi_residual(&chi, &multipliers.xi, &prob)?;
        let chi_res = prob.projected_residual(&chi)?;
        let (a_coef, b_coef) = momentum_weights(scheme, model, &chi);
        let (_, b_coef_prev) = momentum_weights(scheme, model, &state.chi);
        let fold = |v: &[f64]| {
            (
                v.iter().copied().fold(f64::INFINITY, f64::min),
                v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        let (min_w, max_w) = fold(&w);
        let (min_chi, max_chi) = fold(&chi);
        let (xi_min, xi_max) = fold(&multipliers.xi);
        let (zeta_min, zeta_max) = fold(&multipliers.zeta);
        let report = StepReport {
            k,
            t: self.problem.schedule.time(k),
            outer_iterations: counts[0],
            fixed_point_increment: residuals[0],
            chi_iterations: counts[1],
            chi_residual: chi_res,
            cg_iterations: counts[2],
            cg_residual: residuals[1],
            vi_violation: vi,
            min_w,
            max_abs_w: max_w.abs().max(min_w.abs()),
            chi_monotone: chi.iter().zip(&state.chi.0).all(|(a, b)| a <= b),
            min_chi,
            max_chi,
            xi_min,
            xi_max,
            zeta_min,
            zeta_max,
        };
        let dim = self.mesh().dim();
        let next = State {
            k,
            w: ScalarField(w.clone()),
            u: VectorField { dim, values: u.clone() },
            u_prev: state.u.clone(),
            chi: ScalarField(chi.clone()),
        };
        let trace = StepTrace {
            k,
            tau: self.tau(),
            scheme,
            chi_prev: state.chi.0.clone(),
            chi,
            u_prev2: state.u_prev.values.clone(),
            u_prev: state.u.values.clone(),
            u,
            w_prev: state.w.0.clone(),
            w,
            theta_chi,
            drive,
            a_coef,
            b_coef,
            b_coef_prev,
            theta_u,
            f,
            g,
            multipliers,
            u_rhs_norm,
        };
        Ok((next, trace, report))
    }
}

/// A problem together with its initial data.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub problem: Problem,
    pub init: InitialData,
}

impl Scenario {
    pub fn run(&self) -> Result<Trajectory> {
        run(&self.problem, &self.init)
    }
}

/// Runs all steps of `problem` from `init`.
pub fn run(problem: &Problem, init: &InitialData) -> Result<Trajectory> {
    let stepper = Stepper::new(problem)?;
    let mut state = stepper.prepare_initial(init)?;
    let n = problem.schedule.n_steps;
    let mut states = Vec::with_capacity(n + 1);
    let mut traces = Vec::with_capacity(n);
    let mut reports = Vec::with_capacity(n);
    states.push(state.clone());
    for _ in 0..n {
        let (next, trace, report) = stepper.step(&state)?;
        state = next;
        states.push(state.clone());
        traces.push(trace);
        reports.push(report);
    }
    Ok(Trajectory { states, traces, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Profile;
    use crate::grid::build_mesh;
    use crate::material::tests::sample_model;
    use crate::material::Polynomial;

    fn base_problem(scheme: Scheme) -> Problem {
        let mut model = sample_model();
        model.flux = crate::material::FluxKind::Regularized;
        if scheme.is_irreversible() {
            model.irreversible = true;
            model.potential = Potential::IndicatorHalfLine;
        }
        Problem {
            mesh: build_mesh(1, &[1.0], &[16]).unwrap(),
            model,
            scheme,
            schedule: Schedule::new(0.1, 0.02).unwrap(),
            load: vec![SpaceTime::zero()],
            heat_source: SpaceTime::zero(),
            theta_star: SpaceTime::zero(),
            settings: SolverSettings::default(),
        }
    }

    #[test]
    fn schedule_rules() {
        assert_eq!(Schedule::new(1.0, 0.1).unwrap().n_steps, 10);
        assert!(Schedule::new(1.0, 0.3).is_err());
        assert!(Schedule::new(1.0, 0.0).is_err());
    }

    #[test]
    fn local_means_examples() {
        let s = Schedule::new(1.0, 0.25).unwrap();
        assert!(local_means(&TimeProfile::Constant { value: 2.5 }, &s).iter().all(|&v| v == 2.5));
        let m = local_means(&TimeProfile::Linear { intercept: 0.0, slope: 1.0 }, &s);
        assert!((m[0] - 0.125).abs() < 1e-15);
        let sine = TimeProfile::Sine { offset: 0.1, amplitude: 1.0, omega: 2.0, phase: 0.3 };
        let m = local_means(&sine, &s);
        for (k, mk) in m.iter().enumerate() {
            let n = 200_000;
            let h = 0.25 / n as f64;
            let riemann: f64 = (0..n).map(|j| sine.eval(0.25 * k as f64 + (j as f64 + 0.5) * h)).sum::<f64>() * h / 0.25;
            assert!((mk - riemann).abs() < 1e-8);
        }
    }

    #[test]
    fn initial_velocity_and_rejections() {
        let p = base_problem(Scheme::Reversible);
        let st = Stepper::new(&p).unwrap();
        let n = p.mesh.n_nodes();
        let u0 = Profile::Sine { mean: 0.0, amplitude: 0.1, wavenumber: 1.0 }.nodal(&p.mesh);
        let init = InitialData { theta0: vec![0.5; n], u0: u0.clone(), v0: vec![0.0; n], chi0: vec![0.5; n] };
        let s0 = st.prepare_initial(&init).unwrap();
        assert_eq!(s0.u_prev.values, s0.u.values);
        let w0 = p.model.enthalpy(0.5).unwrap();
        assert!(s0.w.iter().all(|&w| (w - w0).abs() < 1e-12 && w >= w0));
        let mut bad = init.clone();
        bad.chi0[3] = 1.2;
        assert!(st.prepare_initial(&bad).is_err());
        let mut bad = init;
        bad.theta0[0] = -0.1;
        assert!(st.prepare_initial(&bad).is_err());
    }

    #[test]
    fn equilibrium_is_preserved() {
        let mut p = base_problem(Scheme::Reversible);
        p.model.gamma_hat = Polynomial::default();
        // stationary χ needs θ = 0 drive balance: zero temperature
        let n = p.mesh.n_nodes();
        let init = InitialData { theta0: vec![0.0; n], u0: vec![0.0; n], v0: vec![0.0; n], chi0: vec![0.4; n] };
        let traj = run(&p, &init).unwrap();
        let last = traj.states.last().unwrap();
        assert!(last.chi.iter().all(|&c| (c - 0.4).abs() < 1e-10));
        assert!(last.u.values.iter().all(|&u| u.abs() < 1e-10));
        assert!(last.w.iter().all(|&w| w.abs() < 1e-10));
    }

    #[test]
    fn irreversible_trivial_state() {
        let p = base_problem(Scheme::Irreversible);
        let n = p.mesh.n_nodes();
        let mut p2 = p.clone();
        p2.model.gamma_hat = Polynomial::default();
        let init = InitialData { theta0: vec![0.0; n], u0: vec![0.0; n], v0: vec![0.0; n], chi0: vec![1.0; n] };
        let traj = run(&p2, &init).unwrap();
        for s in &traj.states {
            assert!(s.chi.iter().all(|&c| c == 1.0));
            assert!(s.u.values.iter().all(|&u| u == 0.0));
            assert!(s.w.iter().all(|&w| w.abs() < 1e-14));
        }
    }

    #[test]
    fn scheme_compatibility_is_checked() {
        let mut p = base_problem(Scheme::Irreversible);
        p.model.irreversible = false;
        assert!(p.validate().is_err());
        let mut p = base_problem(Scheme::Reversible);
        p.model.rho = 1.0;
        assert!(p.validate().is_err());
        p.scheme = Scheme::ReversibleExpansion;
        assert!(p.validate().is_err());
    }
}
