//! A posteriori bookkeeping of trajectories: energy ledger, inequality
//! slacks, quasi-stresses, the Π-functional, and the δ-sweep,
//! τ-refinement and continuous-dependence experiments.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Profile, SpaceTime};
use crate::error::{Error, Result};
use crate::grid::{element_gradient, element_strain, Mesh, SymTensorField};
use crate::linsolve::{cg_solve_checked, CgOptions};
use crate::material::{entropy, entropy_derivative, yosida_beta, yosida_beta_hat, MaterialModel, Potential};
use crate::operators::{
    elastic_density_nodal, elastic_energy, laplacian, lumped_mass, p_laplacian_residual, phi_functional,
    thermal_coupling_vector, viscous_form,
};
use crate::stepper::{Problem, Scenario, Scheme, Stepper, StepTrace, Trajectory};

/// Exponent `ς` of the Π-functional used in the ledger.
pub const DEFAULT_VARSIGMA: f64 = 1.0;

/// Region threshold for the degenerate momentum residual.
pub const DEFAULT_CHI_THRESHOLD: f64 = 0.1;

fn vector_mass(mesh: &Mesh) -> Vec<f64> {
    let dim = mesh.dim();
    let m = lumped_mass(mesh);
    (0..m.len() * dim).map(|j| m[j / dim]).collect()
}

fn weighted_sq(weights: &[f64], v: &[f64]) -> f64 {
    weights.iter().zip(v).map(|(m, x)| m * x * x).sum()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn velocity(u: &[f64], u_prev: &[f64], tau: f64) -> Vec<f64> {
    u.iter().zip(u_prev).map(|(a, b)| (a - b) / tau).collect()
}

/// Pointwise convex part of the potential that the scheme carries: the
/// entropy for the logarithmic potential, `β̂_τ` for the Yosida scheme.
fn convex_part(model: &MaterialModel, scheme: Scheme, tau: f64, x: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    if matches!(model.potential, Potential::Logarithmic { .. }) {
        v += entropy(x);
        d += entropy_derivative(x);
    }
    if scheme == Scheme::IsothermalIrreversible {
        v += yosida_beta_hat(x, tau);
        d += yosida_beta(x, tau);
    }
    (v, d)
}

/// Terms of the total energy at one time level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EnergyTerms {
    /// `∫ w`.
    pub enthalpy: f64,
    /// `½ ∫ |Du|²` with the discrete velocity.
    pub kinetic: f64,
    /// `½ e(b; u, u)`.
    pub elastic: f64,
    /// `Φ(χ)`.
    pub phi: f64,
    /// `∫ Ŵ(χ)` (convex plus smooth part).
    pub potential: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.enthalpy + self.kinetic + self.elastic + self.phi + self.potential
    }

    pub fn abs_sum(&self) -> f64 {
        self.enthalpy.abs() + self.kinetic.abs() + self.elastic.abs() + self.phi.abs() + self.potential.abs()
    }
}

/// Energy terms of the level `(w, u, u_prev, χ)` with elastic weight `b_coef`.
#[allow(clippy::too_many_arguments)]
pub fn energy_terms(
    mesh: &Mesh,
    model: &MaterialModel,
    scheme: Scheme,
    tau: f64,
    w: &[f64],
    u: &[f64],
    u_prev: &[f64],
    chi: &[f64],
    b_coef: &[f64],
) -> Result<EnergyTerms> {
    let mass = lumped_mass(mesh);
    let mv = vector_mass(mesh);
    let smooth = model.smooth_potential();
    let potential = (0..chi.len())
        .map(|i| mass[i] * (smooth.value(chi[i]) + convex_part(model, scheme, tau, chi[i]).0))
        .sum();
    Ok(EnergyTerms {
        enthalpy: mass.iter().zip(w).map(|(m, x)| m * x).sum(),
        kinetic: 0.5 * weighted_sq(&mv, &velocity(u, u_prev, tau)),
        elastic: elastic_energy(b_coef, u, mesh, model)?,
        phi: phi_functional(chi, mesh, model),
        potential,
    })
}

/// One row of the ledger, for step `k` (from level `k-1` to `k`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerRow {
    pub k: usize,
    pub t: f64,
    pub energy: EnergyTerms,
    pub total_energy: f64,
    /// `Σ M |χ^k - χ^{k-1}|² / τ`.
    pub chi_rate: f64,
    /// `τ v(a; Du, Du)`.
    pub viscous: f64,
    /// `τ ∫ f·Du`.
    pub work_f: f64,
    /// `τ ∫ g`.
    pub heat_in: f64,
    /// `∫ Θ (χ^k - χ^{k-1})`, only for prescribed temperature.
    pub theta_work: f64,
    /// Energy change plus dissipation minus supplied work.
    pub slack: f64,
    /// Numerical dissipation of the scheme, term by term.
    pub d_kinetic: f64,
    pub d_elastic: f64,
    pub bregman_phi: f64,
    pub bregman_convex: f64,
    pub bregman_smooth: f64,
    pub d_multiplier: f64,
    pub d_coefficient: f64,
    /// Minus the sum of the numerical terms; equals `slack` exactly.
    pub numerical: f64,
    pub defect: f64,
    pub acc_viscous: f64,
    pub acc_chi_rate: f64,
    pub acc_work_f: f64,
    pub acc_heat_in: f64,
    /// Phase-field energy inequality: left and right side, the remainder
    /// `∫ γ̂(χ^k) - γ̂(χ^{k-1}) - γ(χ^k)(χ^k - χ^{k-1})` and the slack
    /// `rhs + remainder - lhs`.
    pub ineq_lhs: f64,
    pub ineq_rhs: f64,
    pub remainder: f64,
    pub ineq_slack: f64,
    pub vi_violation: f64,
    pub min_w: f64,
    pub max_abs_w: f64,
    /// `max |w| < M` when a truncation level is set.
    pub below_truncation: bool,
    pub chi_monotone: bool,
    /// `‖μ_δ^k‖²_{L²}` and `‖η_δ^k‖_{L²}`.
    pub mu_sq: f64,
    pub eta_norm: f64,
    /// `Π(w^k)`.
    pub pi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Ledger {
    pub initial: EnergyTerms,
    /// `max(1, Σ |initial terms|)`.
    pub scale: f64,
    pub rows: Vec<LedgerRow>,
}

/// Builds the ledger of a trajectory of `problem`.
pub fn ledger(problem: &Problem, traj: &Trajectory) -> Result<Ledger> {
    let mesh = &problem.mesh;
    let model = &problem.model;
    let scheme = problem.scheme;
    let tau = problem.schedule.tau;
    let mass = lumped_mass(mesh);
    let mv = vector_mass(mesh);
    let smooth = model.smooth_potential();
    let smooth_d = smooth.derivative();
    let bp = model.b.derivative();
    let Some(first) = traj.traces.first() else {
        return Err(Error::Config("empty trajectory".into()));
    };
    let s0 = &traj.states[0];
    let initial = energy_terms(
        mesh,
        model,
        scheme,
        tau,
        &s0.w,
        &s0.u.values,
        &s0.u_prev.values,
        &s0.chi,
        &first.b_coef_prev,
    )?;
    let scale = initial.abs_sum().max(1.0);
    let mut prev = initial;
    let mut acc = [0.0; 4];
    let mut rows = Vec::with_capacity(traj.traces.len());
    for (tr, rep) in traj.traces.iter().zip(&traj.reports) {
        let n = tr.chi.len();
        let dchi = diff(&tr.chi, &tr.chi_prev);
        let du = velocity(&tr.u, &tr.u_prev, tau);
        let du_prev = velocity(&tr.u_prev, &tr.u_prev2, tau);
        let energy = energy_terms(mesh, model, scheme, tau, &tr.w, &tr.u, &tr.u_prev, &tr.chi, &tr.b_coef)?;
        let chi_rate = weighted_sq(&mass, &dchi) / tau;
        let viscous = tau * viscous_form(&tr.a_coef, &du, mesh, model)?;
        let work_f = tau * (0..du.len()).map(|j| mv[j] * tr.f[j] * du[j]).sum::<f64>();
        let heat_in = if scheme.is_isothermal() { 0.0 } else { tau * mass.iter().zip(&tr.g).map(|(m, g)| m * g).sum::<f64>() };
        let theta_work = if scheme.is_isothermal() {
            (0..n).map(|i| mass[i] * tr.theta_chi[i] * dchi[i]).sum()
        } else {
            0.0
        };
        let slack = energy.total() - prev.total() + chi_rate + viscous - work_f - heat_in - theta_work;

        let d_kinetic = 0.5 * weighted_sq(&mv, &diff(&du, &du_prev));
        let d_elastic = elastic_energy(&tr.b_coef, &diff(&tr.u, &tr.u_prev), mesh, model)?;
        let r = p_laplacian_residual(&tr.chi, mesh, model)?;
        let bregman_phi = phi_functional(&tr.chi_prev, mesh, model) - energy.phi
            + r.iter().zip(&dchi).map(|(a, b)| a * b).sum::<f64>();
        let mut bregman_convex = 0.0;
        let mut bregman_smooth = 0.0;
        for i in 0..n {
            let (c, cp) = (tr.chi[i], tr.chi_prev[i]);
            let (v, d) = convex_part(model, scheme, tau, c);
            let (vp, _) = convex_part(model, scheme, tau, cp);
            bregman_convex += mass[i] * (vp - v + d * dchi[i]);
            bregman_smooth += mass[i] * (smooth.value(cp) - smooth.value(c) + smooth_d.value(c) * dchi[i]);
        }
        let d_multiplier = -(0..n).map(|i| mass[i] * tr.multipliers.gradient[i] * dchi[i]).sum::<f64>();
        let dens = elastic_density_nodal(&tr.u_prev, mesh, model)?;
        let d_coefficient = (0..n)
            .map(|i| mass[i] * dens[i] * (bp * dchi[i] - (tr.b_coef[i] - tr.b_coef_prev[i])))
            .sum::<f64>();
        let numerical =
            -(d_kinetic + d_elastic + bregman_phi + bregman_convex + bregman_smooth + d_multiplier + d_coefficient);

        acc[0] += viscous;
        acc[1] += chi_rate;
        acc[2] += work_f;
        acc[3] += heat_in;

        let w_hat = |chi: &[f64]| -> f64 {
            (0..n)
                .map(|i| mass[i] * (smooth.value(chi[i]) + convex_part(model, scheme, tau, chi[i]).0))
                .sum()
        };
        let ineq_lhs = chi_rate + energy.phi + w_hat(&tr.chi);
        let ineq_rhs = phi_functional(&tr.chi_prev, mesh, model)
            + w_hat(&tr.chi_prev)
            + (0..n).map(|i| mass[i] * dchi[i] * (tr.theta_chi[i] - tr.drive[i])).sum::<f64>();
        let remainder = -bregman_smooth;

        let (mu, eta) = quasi_stresses_from(mesh, &tr.chi, &tr.u, &tr.u_prev, tau, model.delta)?;
        let pi = if scheme.is_isothermal() { 0.0 } else { boccardo_gallouet(mesh, &tr.w, DEFAULT_VARSIGMA)? };
        rows.push(LedgerRow {
            k: tr.k,
            t: rep.t,
            energy,
            total_energy: energy.total(),
            chi_rate,
            viscous,
            work_f,
            heat_in,
            theta_work,
            slack,
            d_kinetic,
            d_elastic,
            bregman_phi,
            bregman_convex,
            bregman_smooth,
            d_multiplier,
            d_coefficient,
            numerical,
            defect: slack - numerical,
            acc_viscous: acc[0],
            acc_chi_rate: acc[1],
            acc_work_f: acc[2],
            acc_heat_in: acc[3],
            ineq_lhs,
            ineq_rhs,
            remainder,
            ineq_slack: ineq_rhs + remainder - ineq_lhs,
            vi_violation: rep.vi_violation,
            min_w: rep.min_w,
            max_abs_w: rep.max_abs_w,
            below_truncation: model.truncation.map_or(true, |m| rep.max_abs_w < m),
            chi_monotone: rep.chi_monotone,
            mu_sq: mu.l2_norm_squared(mesh),
            eta_norm: eta.l2_norm_squared(mesh).sqrt(),
            pi,
        });
        prev = energy;
    }
    Ok(Ledger { initial, scale, rows })
}

/// Outcome of [`energy_ledger_check`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerCheck {
    /// `max |slack - numerical| / scale`.
    pub max_defect: f64,
    /// `min ineq_slack / scale` (phase-field inequality).
    pub min_ineq_slack: f64,
    pub flagged_steps: Vec<usize>,
    pub passed: bool,
}

/// Flags steps whose ledger defect exceeds `defect_tol · scale`, and, for
/// irreversible schemes, steps whose inequality slack is below
/// `-ineq_tol · scale`.
pub fn energy_ledger_check(ledger: &Ledger, scheme: Scheme, defect_tol: f64, ineq_tol: f64) -> LedgerCheck {
    let s = ledger.scale;
    let mut flagged = Vec::new();
    let mut max_defect: f64 = 0.0;
    let mut min_ineq = f64::INFINITY;
    for r in &ledger.rows {
        let d = r.defect.abs() / s;
        max_defect = max_defect.max(d);
        min_ineq = min_ineq.min(r.ineq_slack / s);
        let bad_ineq = scheme.is_irreversible() && r.ineq_slack < -ineq_tol * s;
        if !(d <= defect_tol) || bad_ineq {
            flagged.push(r.k);
        }
    }
    LedgerCheck { max_defect, min_ineq_slack: min_ineq, passed: flagged.is_empty(), flagged_steps: flagged }
}

/// Worst one-sided VI violation and phase-field inequality slack per step.
pub fn vi_and_energy_residuals(ledger: &Ledger) -> Vec<(usize, f64, f64)> {
    ledger.rows.iter().map(|r| (r.k, r.vi_violation, r.ineq_slack)).collect()
}

fn quasi_stresses_from(
    mesh: &Mesh,
    chi: &[f64],
    u: &[f64],
    u_prev: &[f64],
    tau: f64,
    delta: f64,
) -> Result<(SymTensorField, SymTensorField)> {
    let dim = mesh.dim();
    let nd = mesh.n_nodes() * dim;
    for v in [u, u_prev] {
        if v.len() != nd {
            return Err(Error::Shape { expected: nd, got: v.len() });
        }
    }
    if chi.len() != mesh.n_nodes() {
        return Err(Error::Shape { expected: mesh.n_nodes(), got: chi.len() });
    }
    let du = velocity(u, u_prev, tau);
    let mut mu = Vec::with_capacity(mesh.n_elements());
    let mut eta = Vec::with_capacity(mesh.n_elements());
    for e in 0..mesh.n_elements() {
        let s = (mesh.element_average(e, chi) + delta).max(0.0).sqrt();
        let scale = |t: [[f64; 2]; 2]| t.map(|row| row.map(|x| s * x));
        mu.push(scale(element_strain(&du, dim, mesh, e)));
        eta.push(scale(element_strain(u, dim, mesh, e)));
    }
    Ok((SymTensorField { dim, values: mu }, SymTensorField { dim, values: eta }))
}

/// Viscous and elastic quasi-stresses `√(χ̄+δ) ε(Du)` and `√(χ̄+δ) ε(u)`
/// of the step stored in `trace`, element by element.
pub fn quasi_stresses(mesh: &Mesh, trace: &StepTrace, delta: f64) -> Result<(SymTensorField, SymTensorField)> {
    quasi_stresses_from(mesh, &trace.chi, &trace.u, &trace.u_prev, trace.tau, delta)
}

/// `‖μ_δ‖_{L²(0,T;L²)}` and `‖η_δ‖_{L∞(0,T;L²)}` of a trajectory.
pub fn quasi_stress_norms(mesh: &Mesh, traj: &Trajectory, delta: f64) -> Result<(f64, f64)> {
    let mut mu_sq = 0.0;
    let mut eta_max: f64 = 0.0;
    for tr in &traj.traces {
        let (mu, eta) = quasi_stresses(mesh, tr, delta)?;
        mu_sq += tr.tau * mu.l2_norm_squared(mesh);
        eta_max = eta_max.max(eta.l2_norm_squared(mesh).sqrt());
    }
    Ok((mu_sq.sqrt(), eta_max))
}

/// `Π(w) = ∫ |∇w|² / (1 + w̄)^{ς+1}` with `w̄` the element average.
pub fn boccardo_gallouet(mesh: &Mesh, w: &[f64], varsigma: f64) -> Result<f64> {
    if w.len() != mesh.n_nodes() {
        return Err(Error::Shape { expected: mesh.n_nodes(), got: w.len() });
    }
    if !(varsigma > 0.0) {
        return Err(Error::Config(format!("varsigma must be positive (got {varsigma})")));
    }
    if let Some((node, &value)) = w.iter().enumerate().find(|(_, v)| !(**v >= -1e-12)) {
        return Err(Error::NegativeWeight { node, value });
    }
    Ok((0..mesh.n_elements())
        .map(|e| {
            let g = element_gradient(w, mesh, e);
            let wb = mesh.element_average(e, w).max(0.0);
            mesh.measure(e) * (g[0] * g[0] + g[1] * g[1]) / (1.0 + wb).powf(varsigma + 1.0)
        })
        .sum())
}

/// `Σ_k τ Π(w^k)` over a trajectory.
pub fn accumulated_pi(mesh: &Mesh, traj: &Trajectory, varsigma: f64) -> Result<f64> {
    traj.traces.iter().map(|tr| Ok(tr.tau * boccardo_gallouet(mesh, &tr.w, varsigma)?)).sum()
}

/// Residual of the momentum equation written with quasi-stresses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentumResidual {
    /// `‖r‖₂ / ‖b‖₂` over interior dofs at nodes with `χ > threshold`,
    /// with `σ = √ā R_v μ + √b̄ R_e η` built from the quasi-stresses.
    pub relative: f64,
    /// Same restriction, the change of the weak form when `√ā`, `√b̄` are
    /// replaced by `√χ̄`, relative to `‖b‖₂`.
    pub degenerate_defect: f64,
    pub active_dofs: usize,
}

/// Momentum residual of one step assembled from its quasi-stresses.
pub fn momentum_residual(mesh: &Mesh, model: &MaterialModel, trace: &StepTrace, threshold: f64) -> Result<MomentumResidual> {
    let dim = mesh.dim();
    let tau = trace.tau;
    let mv = vector_mass(mesh);
    let du = velocity(&trace.u, &trace.u_prev, tau);
    let nd = trace.u.len();
    let mut r: Vec<f64> = (0..nd)
        .map(|j| mv[j] * ((trace.u[j] - 2.0 * trace.u_prev[j] + trace.u_prev2[j]) / (tau * tau) - trace.f[j]))
        .collect();
    if let Some(th) = &trace.theta_u {
        let t = thermal_coupling_vector(th, mesh, model.rho)?;
        r.iter_mut().zip(&t).for_each(|(x, y)| *x -= y);
    }
    let mut defect = vec![0.0; nd];
    let iso = |l1: f64, l2: f64, t: &[[f64; 2]; 2]| -> [[f64; 2]; 2] {
        let tr: f64 = (0..dim).map(|i| t[i][i]).sum();
        let mut s = [[0.0; 2]; 2];
        for i in 0..dim {
            for j in 0..dim {
                s[i][j] = 2.0 * l2 * t[i][j] + if i == j { l1 * tr } else { 0.0 };
            }
        }
        s
    };
    for e in 0..mesh.n_elements() {
        let sa = mesh.element_average(e, &trace.a_coef).max(0.0).sqrt();
        let sb = mesh.element_average(e, &trace.b_coef).max(0.0).sqrt();
        let sc = mesh.element_average(e, &trace.chi).max(0.0).sqrt();
        let eps_v = element_strain(&du, dim, mesh, e);
        let eps_e = element_strain(&trace.u, dim, mesh, e);
        let mu = eps_v.map(|row| row.map(|x| sa * x));
        let eta = eps_e.map(|row| row.map(|x| sb * x));
        let rv = iso(model.ell1, model.ell2, &mu);
        let re = iso(model.lambda1, model.lambda2, &eta);
        let m = mesh.measure(e);
        for (&a, g) in mesh.element(e).iter().zip(mesh.shape_gradients(e)) {
            for i in 0..dim {
                let mut s = 0.0;
                let mut d = 0.0;
                for j in 0..dim {
                    s += (sa * rv[i][j] + sb * re[i][j]) * g[j];
                    d += ((sc - sa) * rv[i][j] + (sc - sb) * re[i][j]) * g[j];
                }
                r[a * dim + i] += m * s;
                defect[a * dim + i] += m * d;
            }
        }
    }
    let mut rs = 0.0;
    let mut ds = 0.0;
    let mut active = 0;
    for node in 0..mesh.n_nodes() {
        if mesh.is_boundary(node) || !(trace.chi[node] > threshold) {
            continue;
        }
        for i in 0..dim {
            rs += r[node * dim + i].powi(2);
            ds += defect[node * dim + i].powi(2);
            active += 1;
        }
    }
    let denom = trace.u_rhs_norm.max(f64::MIN_POSITIVE);
    Ok(MomentumResidual { relative: rs.sqrt() / denom, degenerate_defect: ds.sqrt() / denom, active_dofs: active })
}

fn l2(mass: &[f64], v: &[f64]) -> f64 {
    weighted_sq(mass, v).sqrt()
}

/// `max_m ‖a_m - b_m‖` in lumped L² for `w`, `u`, `χ` separately and
/// combined, over states `a[m]`, `b[stride·m]`.
fn linf_l2_distance(mesh: &Mesh, a: &Trajectory, b: &Trajectory, stride: usize) -> [f64; 4] {
    let mass = lumped_mass(mesh);
    let mv = vector_mass(mesh);
    let mut out = [0.0f64; 4];
    for (m, sa) in a.states.iter().enumerate() {
        let Some(sb) = b.states.get(stride * m) else { break };
        let dw = weighted_sq(&mass, &diff(&sa.w, &sb.w));
        let du = weighted_sq(&mv, &diff(&sa.u.values, &sb.u.values));
        let dc = weighted_sq(&mass, &diff(&sa.chi, &sb.chi));
        out[0] = out[0].max(dw.sqrt());
        out[1] = out[1].max(du.sqrt());
        out[2] = out[2].max(dc.sqrt());
        out[3] = out[3].max((dw + du + dc).sqrt());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaRow {
    pub delta: f64,
    pub mu_l2l2: f64,
    pub eta_linf_l2: f64,
    pub max_momentum_residual: f64,
    pub max_degenerate_defect: f64,
    pub chi_monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaSweepReport {
    pub threshold: f64,
    pub rows: Vec<DeltaRow>,
    /// `L∞L²` distances `[w, u, χ, combined]` between consecutive δ.
    pub pairwise: Vec<[f64; 4]>,
    /// `max/min` of the two norms across the sweep.
    pub mu_ratio: f64,
    pub eta_ratio: f64,
}

fn max_min_ratio(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let hi = v.clone().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.fold(f64::INFINITY, f64::min);
    if lo > 0.0 {
        hi / lo
    } else if hi == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Runs `base` once per `δ` (in parallel, results in the given order).
pub fn delta_sweep(base: &Scenario, deltas: &[f64], threshold: f64) -> Result<DeltaSweepReport> {
    let runs: Vec<Result<(Trajectory, DeltaRow)>> = deltas
        .par_iter()
        .map(|&delta| {
            let mut sc = base.clone();
            sc.problem.model.delta = delta;
            let traj = sc.run()?;
            let mesh = &sc.problem.mesh;
            let (mu, eta) = quasi_stress_norms(mesh, &traj, delta)?;
            let mut max_r: f64 = 0.0;
            let mut max_d: f64 = 0.0;
            for tr in &traj.traces {
                let m = momentum_residual(mesh, &sc.problem.model, tr, threshold)?;
                max_r = max_r.max(m.relative);
                max_d = max_d.max(m.degenerate_defect);
            }
            let mono = traj.reports.iter().all(|r| r.chi_monotone);
            Ok((
                traj,
                DeltaRow {
                    delta,
                    mu_l2l2: mu,
                    eta_linf_l2: eta,
                    max_momentum_residual: max_r,
                    max_degenerate_defect: max_d,
                    chi_monotone: mono,
                },
            ))
        })
        .collect();
    let runs: Vec<(Trajectory, DeltaRow)> = runs.into_iter().collect::<Result<_>>()?;
    let pairwise = runs.windows(2).map(|p| linf_l2_distance(&base.problem.mesh, &p[0].0, &p[1].0, 1)).collect();
    let rows: Vec<DeltaRow> = runs.into_iter().map(|(_, r)| r).collect();
    Ok(DeltaSweepReport {
        threshold,
        mu_ratio: max_min_ratio(rows.iter().map(|r| r.mu_l2l2)),
        eta_ratio: max_min_ratio(rows.iter().map(|r| r.eta_linf_l2)),
        rows,
        pairwise,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementReport {
    pub taus: Vec<f64>,
    /// `L∞L²` distance between levels `j` and `j+1`: `[w, u, χ, combined]`.
    pub distances: Vec<[f64; 4]>,
    /// `log2(d_j / d_{j+1})` of the combined distance.
    pub rates: Vec<f64>,
    pub monotone: bool,
    pub min_rate: f64,
    /// `Σ_k τ Π(w^k)` per level (zero for prescribed temperature).
    pub pi_accumulated: Vec<f64>,
    /// `Σ_k |remainder_k|` per level and its observed rates.
    pub remainder_sum: Vec<f64>,
    pub remainder_rates: Vec<f64>,
    /// Minimum phase-field inequality slack over all levels, relative.
    pub min_ineq_slack: f64,
}

/// Runs `base` with `τ0, τ0/2, …, τ0/2^halvings` (in parallel) and compares
/// consecutive levels at the coarse time nodes.
pub fn tau_refinement(base: &Scenario, halvings: usize) -> Result<RefinementReport> {
    let levels: Vec<Scenario> = (0..=halvings)
        .scan(base.clone(), |sc, _| {
            let cur = sc.clone();
            sc.problem.schedule = sc.problem.schedule.halved();
            Some(cur)
        })
        .collect();
    let runs: Vec<Result<(Trajectory, Ledger)>> = levels
        .par_iter()
        .map(|sc| {
            let traj = sc.run()?;
            let led = ledger(&sc.problem, &traj)?;
            Ok((traj, led))
        })
        .collect();
    let runs: Vec<(Trajectory, Ledger)> = runs.into_iter().collect::<Result<_>>()?;
    let mesh = &base.problem.mesh;
    let distances: Vec<[f64; 4]> = runs.windows(2).map(|p| linf_l2_distance(mesh, &p[0].0, &p[1].0, 2)).collect();
    let rates: Vec<f64> = distances.windows(2).map(|d| (d[0][3] / d[1][3]).log2()).collect();
    let monotone = distances.windows(2).all(|d| d[1][3] < d[0][3]);
    let remainder_sum: Vec<f64> = runs.iter().map(|(_, l)| l.rows.iter().map(|r| r.remainder.abs()).sum()).collect();
    let remainder_rates = remainder_sum.windows(2).map(|r| (r[0] / r[1]).log2()).collect();
    let pi_accumulated = runs
        .iter()
        .zip(&levels)
        .map(|((_, l), sc)| sc.problem.schedule.tau * l.rows.iter().map(|r| r.pi).sum::<f64>())
        .collect();
    let min_ineq_slack = runs
        .iter()
        .flat_map(|(_, l)| l.rows.iter().map(move |r| r.ineq_slack / l.scale))
        .fold(f64::INFINITY, f64::min);
    Ok(RefinementReport {
        taus: levels.iter().map(|s| s.problem.schedule.tau).collect(),
        min_rate: rates.iter().copied().fold(f64::INFINITY, f64::min),
        distances,
        rates,
        monotone,
        pi_accumulated,
        remainder_sum,
        remainder_rates,
        min_ineq_slack,
    })
}

/// Direction of the data perturbation of a continuous-dependence study.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    /// One profile per displacement component.
    pub u0: Vec<Profile>,
    pub v0: Vec<Profile>,
    pub chi0: Profile,
    /// One profile per load component, with the time profile of the base load.
    pub load: Vec<Profile>,
    /// Added to the prescribed temperature, with its time profile.
    pub theta_star: Profile,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContDepRow {
    pub epsilon: f64,
    /// Solution distance: `u` in `W^{1,∞}(L²) ∩ H¹(H¹)`, `χ` in `L∞(L²) ∩ L^p(W^{1,p})`.
    pub lhs: f64,
    /// Data distance: `u0` in `H¹`, `v0`, `χ0` in `L²`, `f` in `L²(H^{-1})`, `Θ̄` in `L²(L²)`.
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContDepReport {
    pub rows: Vec<ContDepRow>,
    /// Least-squares slope of `log lhs` against `log ε`.
    pub slope: f64,
}

/// Continuous-dependence norms between two runs of problems `pa`, `pb`.
pub fn dependence_norms(pa: &Problem, ta: &Trajectory, pb: &Problem, tb: &Trajectory) -> Result<(f64, f64)> {
    let mesh = &pa.mesh;
    let tau = pa.schedule.tau;
    let p = pa.model.p;
    let dim = mesh.dim();
    let mass = lumped_mass(mesh);
    let mv = vector_mass(mesh);
    let lap = laplacian(mesh);
    let h1_sq = |v: &[f64]| -> f64 {
        let grad: f64 = (0..dim)
            .map(|c| lap.quadratic_form(&v.iter().skip(c).step_by(dim).copied().collect::<Vec<_>>()))
            .sum();
        weighted_sq(&mv, v) + grad
    };
    let w1p = |v: &[f64]| -> f64 {
        let nodal: f64 = mass.iter().zip(v).map(|(m, x)| m * x.abs().powf(p)).sum();
        let grad: f64 = (0..mesh.n_elements())
            .map(|e| {
                let g = element_gradient(v, mesh, e);
                mesh.measure(e) * (g[0] * g[0] + g[1] * g[1]).powf(0.5 * p)
            })
            .sum();
        nodal + grad
    };
    let mut u_inf: f64 = 0.0;
    let mut du_inf: f64 = 0.0;
    let mut u_h1h1 = 0.0;
    let mut chi_inf: f64 = 0.0;
    let mut chi_lp = 0.0;
    for (k, (sa, sb)) in ta.states.iter().zip(&tb.states).enumerate() {
        let d = diff(&sa.u.values, &sb.u.values);
        let dv = diff(&sa.velocity(tau), &sb.velocity(tau));
        let dc = diff(&sa.chi, &sb.chi);
        u_inf = u_inf.max(l2(&mv, &d));
        du_inf = du_inf.max(l2(&mv, &dv));
        chi_inf = chi_inf.max(l2(&mass, &dc));
        if k > 0 {
            u_h1h1 += tau * (h1_sq(&d) + h1_sq(&dv));
            chi_lp += tau * w1p(&dc);
        }
    }
    let lhs = u_inf + du_inf + u_h1h1.sqrt() + chi_inf + chi_lp.powf(1.0 / p);

    let s0a = &ta.states[0];
    let s0b = &tb.states[0];
    let du0 = diff(&s0a.u.values, &s0b.u.values);
    let dv0 = diff(&s0a.velocity(tau), &s0b.velocity(tau));
    let dchi0 = diff(&s0a.chi, &s0b.chi);
    let sta = Stepper::new(pa)?;
    let stb = Stepper::new(pb)?;
    let mut lap0 = lap.clone();
    let bdofs = mesh.boundary_nodes();
    lap0.apply_dirichlet(&bdofs);
    let opts = CgOptions { tol: 1e-12, ..Default::default() };
    let mut f_sq = 0.0;
    let mut th_sq = 0.0;
    for k in 1..=pa.schedule.n_steps {
        let df = diff(&sta.load(k), &stb.load(k));
        for c in 0..dim {
            let mut rhs: Vec<f64> = (0..mesh.n_nodes()).map(|i| mass[i] * df[i * dim + c]).collect();
            for &b in &bdofs {
                rhs[b] = 0.0;
            }
            let (x, _) = cg_solve_checked(&lap0, &rhs, None, &opts)?;
            f_sq += tau * rhs.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        }
        th_sq += tau * weighted_sq(&mass, &diff(&sta.theta_star(k), &stb.theta_star(k)));
    }
    let rhs = h1_sq(&du0).sqrt() + l2(&mv, &dv0) + l2(&mass, &dchi0) + f_sq.sqrt() + th_sq.sqrt();
    Ok((lhs, rhs))
}

fn perturbed(base: &Scenario, pert: &Perturbation, eps: f64) -> Scenario {
    let mut sc = base.clone();
    let mesh = &base.problem.mesh;
    let dim = mesh.dim();
    let add_vec = |v: &mut Vec<f64>, ps: &[Profile]| {
        for (c, p) in ps.iter().enumerate().take(dim) {
            let nodal = p.nodal(mesh);
            for (i, x) in nodal.iter().enumerate() {
                v[i * dim + c] += eps * x;
            }
        }
    };
    add_vec(&mut sc.init.u0, &pert.u0);
    add_vec(&mut sc.init.v0, &pert.v0);
    for (c, x) in sc.init.chi0.iter_mut().zip(pert.chi0.nodal(mesh)) {
        *c += eps * x;
    }
    let shift = |st: &SpaceTime, p: &Profile| SpaceTime {
        space: Profile::Sum { terms: vec![st.space.clone(), p.scaled(eps)] },
        time: st.time.clone(),
    };
    for (l, p) in sc.problem.load.iter_mut().zip(&pert.load) {
        *l = shift(l, p);
    }
    sc.problem.theta_star = shift(&sc.problem.theta_star, &pert.theta_star);
    sc
}

/// Twin runs for each `ε`: base data against base data plus `ε·pert`.
pub fn continuous_dependence_experiment(base: &Scenario, pert: &Perturbation, epsilons: &[f64]) -> Result<ContDepReport> {
    let pb = &base.problem;
    if pb.scheme != Scheme::IsothermalReversible {
        return Err(Error::Config("continuous dependence needs scheme isothermal_reversible".into()));
    }
    if !matches!(pb.model.a, crate::material::Coefficient::Constant(_)) {
        return Err(Error::Config("continuous dependence needs a constant viscosity coefficient a".into()));
    }
    if pb.model.flux != crate::material::FluxKind::Regularized {
        return Err(Error::Config("continuous dependence needs the regularized flux".into()));
    }
    let base_traj = base.run()?;
    let rows: Vec<Result<ContDepRow>> = epsilons
        .par_iter()
        .map(|&eps| {
            let twin = perturbed(base, pert, eps);
            let traj = twin.run()?;
            let (lhs, rhs) = dependence_norms(pb, &base_traj, &twin.problem, &traj)?;
            Ok(ContDepRow { epsilon: eps, lhs, rhs, ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 } })
        })
        .collect();
    let rows: Vec<ContDepRow> = rows.into_iter().collect::<Result<_>>()?;
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.lhs > 0.0 && r.epsilon > 0.0)
        .map(|r| (r.epsilon.ln(), r.lhs.ln()))
        .collect();
    Ok(ContDepReport { slope: least_squares_slope(&pts), rows })
}

/// Slope of the least-squares line through `pts`; NaN for fewer than two.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TimeProfile;
    use crate::grid::build_mesh;
    use crate::material::tests::sample_model;
    use crate::material::{Conductivity, FluxKind};
    use crate::stepper::{InitialData, Schedule, SolverSettings};

    fn scenario(scheme: Scheme, dim: usize) -> Scenario {
        let mut model = sample_model();
        model.flux = FluxKind::Regularized;
        if scheme.is_irreversible() {
            model.irreversible = true;
            model.potential = Potential::IndicatorHalfLine;
        }
        if scheme == Scheme::ReversibleExpansion {
            model.rho = 0.3;
            model.conductivity = Conductivity::Power { c10: 0.5, q: 1.5 };
            model.truncation = Some(50.0);
        }
        let mesh = if dim == 1 { build_mesh(1, &[1.0], &[16]).unwrap() } else { build_mesh(2, &[1.0, 1.0], &[6, 6]).unwrap() };
        let n = mesh.n_nodes();
        let load = (0..dim)
            .map(|c| SpaceTime {
                space: Profile::Bump { base: 0.0, amplitude: 2.0 + c as f64, center: [0.3, 0.6], width: 0.3 },
                time: TimeProfile::Sine { offset: 1.0, amplitude: 0.5, omega: 3.0, phase: 0.0 },
            })
            .collect();
        let u0: Vec<f64> = (0..n * dim).map(|j| 0.05 * ((j / dim) as f64 * 0.7 + j as f64).sin()).collect();
        let v0: Vec<f64> = (0..n * dim).map(|j| 0.1 * ((j / dim) as f64 * 1.3).cos()).collect();
        let chi0 = Profile::Cosine { mean: 0.6, amplitude: 0.2, wavenumber: 1.0 }.nodal(&mesh);
        let theta0 = Profile::Cosine { mean: 0.5, amplitude: 0.3, wavenumber: 2.0 }.nodal(&mesh);
        Scenario {
            problem: Problem {
                mesh,
                model,
                scheme,
                schedule: Schedule::new(0.1, 0.01).unwrap(),
                load,
                heat_source: SpaceTime::stationary(Profile::Constant { value: 0.5 }),
                theta_star: SpaceTime::stationary(Profile::Cosine { mean: 0.4, amplitude: 0.3, wavenumber: 1.0 }),
                settings: SolverSettings::default(),
            },
            init: InitialData { theta0, u0, v0, chi0 },
        }
    }

    fn check_scheme(scheme: Scheme, dim: usize) {
        let sc = scenario(scheme, dim);
        let traj = sc.run().unwrap();
        let led = ledger(&sc.problem, &traj).unwrap();
        let chk = energy_ledger_check(&led, scheme, 1e-8, 1e-9);
        assert!(chk.passed, "{scheme:?} {dim}D: {chk:?}");
    }

    #[test]
    fn ledger_closes_for_every_scheme() {
        for dim in [1, 2] {
            for s in [
                Scheme::Reversible,
                Scheme::ReversibleExpansion,
                Scheme::Irreversible,
                Scheme::IsothermalIrreversible,
                Scheme::IsothermalReversible,
            ] {
                check_scheme(s, dim);
            }
        }
    }

    #[test]
    fn corrupted_trajectory_is_flagged() {
        let sc = scenario(Scheme::Reversible, 1);
        let mut traj = sc.run().unwrap();
        traj.traces[3].w[5] += 1e-3;
        let led = ledger(&sc.problem, &traj).unwrap();
        let chk = energy_ledger_check(&led, Scheme::Reversible, 1e-8, 1e-9);
        assert!(!chk.passed && chk.flagged_steps.contains(&4));
    }

    #[test]
    fn pi_functional_examples() {
        let mesh = build_mesh(1, &[1.0], &[400]).unwrap();
        assert_eq!(boccardo_gallouet(&mesh, &vec![0.7; 401], 1.0).unwrap(), 0.0);
        let w: Vec<f64> = mesh.coords().iter().map(|p| p[0]).collect();
        let v = boccardo_gallouet(&mesh, &w, 1.0).unwrap();
        assert!((v - 0.5).abs() < 1e-5, "{v}");
        let w2: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        assert!(boccardo_gallouet(&mesh, &w2, 1.0).unwrap() > v);
    }

    #[test]
    fn quasi_stress_limits() {
        let sc = scenario(Scheme::Irreversible, 2);
        let traj = sc.run().unwrap();
        let mesh = &sc.problem.mesh;
        let mut tr = traj.traces[0].clone();
        tr.chi = vec![1.0; tr.chi.len()];
        let (mu, eta) = quasi_stresses(mesh, &tr, 0.0).unwrap();
        for e in 0..mesh.n_elements() {
            let du: Vec<f64> = tr.u.iter().zip(&tr.u_prev).map(|(a, b)| (a - b) / tr.tau).collect();
            assert_eq!(eta.values[e], element_strain(&tr.u, 2, mesh, e));
            let ev = element_strain(&du, 2, mesh, e);
            for i in 0..2 {
                for j in 0..2 {
                    assert!((mu.values[e][i][j] - ev[i][j]).abs() < 1e-12);
                }
            }
        }
        tr.u = vec![0.0; tr.u.len()];
        tr.u_prev = tr.u.clone();
        let (mu, eta) = quasi_stresses(mesh, &tr, 0.1).unwrap();
        assert_eq!(mu.l2_norm_squared(mesh) + eta.l2_norm_squared(mesh), 0.0);
    }

    #[test]
    fn slope_fit() {
        let pts: Vec<(f64, f64)> = (0..4).map(|j| (j as f64, 2.0 * j as f64 + 1.0)).collect();
        assert!((least_squares_slope(&pts) - 2.0).abs() < 1e-14);
    }
}
