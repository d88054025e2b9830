//! Box-constrained minimization of the incremental phase-field functional
//! and recovery of the multipliers of the constraints.

use crate::error::{Error, Result};
use crate::grid::Mesh;
use crate::material::{entropy, entropy_derivative, yosida_beta, yosida_beta_hat, MaterialModel, Polynomial, Potential};
use crate::operators::{lumped_mass, p_laplacian_residual, phi_functional};

/// Distance kept from the endpoints of `[0, 1]` for the logarithmic
/// potential, whose derivative is singular there.
pub const LOG_BOX_MARGIN: f64 = 1e-12;

pub const DEFAULT_TOL: f64 = 1e-8;

/// One incremental problem
/// `min J(χ) = Σ_i M_i [ (χ_i-χp_i)²/(2τ) + Ŵ(χ_i) + h_i χ_i ] + Φ(χ)`
/// over a node-wise box.
#[derive(Clone, Debug)]
pub struct ChiStepProblem<'a> {
    pub mesh: &'a Mesh,
    pub model: &'a MaterialModel,
    pub chi_prev: Vec<f64>,
    pub tau: f64,
    /// Linear driving term, elastic drive minus temperature.
    pub h_field: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Adds the Yosida penalty `β̂_τ` of `I_[0,∞)` (box unbounded below).
    pub yosida: bool,
    mass: Vec<f64>,
    smooth: Polynomial,
    smooth_d: Polynomial,
}

impl<'a> ChiStepProblem<'a> {
    fn build(
        mesh: &'a Mesh,
        model: &'a MaterialModel,
        chi_prev: Vec<f64>,
        tau: f64,
        h_field: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        yosida: bool,
    ) -> Result<Self> {
        let n = mesh.n_nodes();
        for v in [&chi_prev, &h_field] {
            if v.len() != n {
                return Err(Error::Shape { expected: n, got: v.len() });
            }
        }
        if !(tau > 0.0) {
            return Err(Error::Schedule(format!("time step must be positive (got {tau})")));
        }
        if let Some(i) = (0..n).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::InitialData(format!(
                "empty feasible interval [{}, {}] at node {i}",
                lower[i], upper[i]
            )));
        }
        let smooth = model.smooth_potential();
        let smooth_d = smooth.derivative();
        Ok(ChiStepProblem { mesh, model, chi_prev, tau, h_field, lower, upper, yosida, mass: lumped_mass(mesh), smooth, smooth_d })
    }

    /// Reversible step: the box is the domain of `β̂` (`[0,1]`, or its
    /// interior for the logarithmic potential).
    pub fn reversible(
        mesh: &'a Mesh,
        model: &'a MaterialModel,
        chi_prev: Vec<f64>,
        tau: f64,
        h_field: Vec<f64>,
    ) -> Result<Self> {
        let n = mesh.n_nodes();
        let (lo, hi) = match model.potential {
            Potential::Logarithmic { .. } => (LOG_BOX_MARGIN, 1.0 - LOG_BOX_MARGIN),
            _ => model.beta_feasible_interval(),
        };
        Self::build(mesh, model, chi_prev, tau, h_field, vec![lo; n], vec![hi; n], false)
    }

    /// Irreversible step with `β̂ = I_[0,∞)`: box `[0, χ^{k-1}]`.
    pub fn irreversible(
        mesh: &'a Mesh,
        model: &'a MaterialModel,
        chi_prev: Vec<f64>,
        tau: f64,
        h_field: Vec<f64>,
    ) -> Result<Self> {
        let n = mesh.n_nodes();
        let upper = chi_prev.clone();
        if let Some((i, v)) = upper.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::InitialData(format!("previous phase value {v} < 0 at node {i}")));
        }
        Self::build(mesh, model, chi_prev, tau, h_field, vec![0.0; n], upper, false)
    }

    /// Irreversible step with `β̂` replaced by its Yosida regularization:
    /// box `(-∞, χ^{k-1}]`.
    pub fn yosida(
        mesh: &'a Mesh,
        model: &'a MaterialModel,
        chi_prev: Vec<f64>,
        tau: f64,
        h_field: Vec<f64>,
    ) -> Result<Self> {
        let n = mesh.n_nodes();
        let upper = chi_prev.clone();
        Self::build(mesh, model, chi_prev, tau, h_field, vec![f64::NEG_INFINITY; n], upper, true)
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    fn is_log(&self) -> bool {
        matches!(self.model.potential, Potential::Logarithmic { .. })
    }

    pub fn in_box(&self, chi: &[f64]) -> bool {
        chi.iter().enumerate().all(|(i, &c)| c >= self.lower[i] && c <= self.upper[i])
    }

    pub fn project(&self, chi: &mut [f64]) {
        for (i, c) in chi.iter_mut().enumerate() {
            *c = c.max(self.lower[i]).min(self.upper[i]);
        }
    }

    /// Nodal (pointwise) part of the integrand, without the mass weight.
    fn local_energy(&self, i: usize, c: f64) -> f64 {
        let d = c - self.chi_prev[i];
        let mut v = d * d / (2.0 * self.tau) + self.smooth.value(c) + self.h_field[i] * c;
        if self.is_log() {
            v += entropy(c);
        }
        if self.yosida {
            v += yosida_beta_hat(c, self.tau);
        }
        v
    }

    fn local_derivative(&self, i: usize, c: f64) -> f64 {
        let mut v = (c - self.chi_prev[i]) / self.tau + self.smooth_d.value(c) + self.h_field[i];
        if self.is_log() {
            v += entropy_derivative(c);
        }
        if self.yosida {
            v += yosida_beta(c, self.tau);
        }
        v
    }

    /// Smooth-part gradient `G = ∇J` (not mass-normalized).
    pub fn gradient(&self, chi: &[f64]) -> Result<Vec<f64>> {
        let mut g = p_laplacian_residual(chi, self.mesh, self.model)?;
        for (i, gi) in g.iter_mut().enumerate() {
            *gi += self.mass[i] * self.local_derivative(i, chi[i]);
        }
        Ok(g)
    }

    /// Mass-normalized gradient `g_i = G_i / M_i`.
    pub fn normalized_gradient(&self, chi: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.gradient(chi)?;
        for (gi, m) in g.iter_mut().zip(&self.mass) {
            *gi /= m;
        }
        Ok(g)
    }

    /// `‖χ - P(χ - g)‖_∞` with `g` the mass-normalized gradient.
    pub fn projected_residual(&self, chi: &[f64]) -> Result<f64> {
        let g = self.normalized_gradient(chi)?;
        Ok(self.projected_residual_with(chi, &g))
    }

    fn projected_residual_with(&self, chi: &[f64], g: &[f64]) -> f64 {
        (0..chi.len())
            .map(|i| (chi[i] - (chi[i] - g[i]).max(self.lower[i]).min(self.upper[i])).abs())
            .fold(0.0, f64::max)
    }
}

/// `J(χ)`, or `+∞` when `χ` leaves the box.
pub fn chi_energy(chi: &[f64], prob: &ChiStepProblem) -> f64 {
    if chi.len() != prob.chi_prev.len() || !prob.in_box(chi) {
        return f64::INFINITY;
    }
    let local: f64 = (0..chi.len()).map(|i| prob.mass[i] * prob.local_energy(i, chi[i])).sum();
    local + phi_functional(chi, prob.mesh, prob.model)
}

#[derive(Clone, Copy, Debug)]
pub struct ChiSolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ChiSolveOptions {
    fn default() -> Self {
        ChiSolveOptions { tol: DEFAULT_TOL, max_iter: 50_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSolveReport {
    pub iterations: usize,
    /// Projected-gradient residual of the returned iterate.
    pub residual: f64,
    pub energy: f64,
    pub converged: bool,
}

/// Minimizes `J` starting from the projection of `χ^{k-1}`.
pub fn minimize_chi(prob: &ChiStepProblem, opts: &ChiSolveOptions) -> Result<(Vec<f64>, ChiSolveReport)> {
    minimize_chi_from(prob, &prob.chi_prev, opts)
}

/// Projected gradient in the lumped-mass metric with Barzilai–Borwein
/// steps and monotone backtracking. The returned iterate is always
/// feasible; `converged` tells whether the residual target was reached.
pub fn minimize_chi_from(
    prob: &ChiStepProblem,
    start: &[f64],
    opts: &ChiSolveOptions,
) -> Result<(Vec<f64>, ChiSolveReport)> {
    let n = prob.chi_prev.len();
    if start.len() != n {
        return Err(Error::Shape { expected: n, got: start.len() });
    }
    let m = &prob.mass;
    let mut x = start.to_vec();
    prob.project(&mut x);
    let mut fx = chi_energy(&x, prob);
    let mut g = prob.normalized_gradient(&x)?;
    let mut res = prob.projected_residual_with(&x, &g);
    let mut alpha = prob.tau.min(1.0);
    let mut it = 0;
    let mut trial = vec![0.0; n];
    while res > opts.tol && it < opts.max_iter {
        it += 1;
        let mut accepted = false;
        for _ in 0..80 {
            for i in 0..n {
                trial[i] = (x[i] - alpha * g[i]).max(prob.lower[i]).min(prob.upper[i]);
            }
            let ft = chi_energy(&trial, prob);
            let decrease: f64 = (0..n).map(|i| m[i] * g[i] * (trial[i] - x[i])).sum();
            // allowance for rounding in the energy difference
            let slack = 64.0 * f64::EPSILON * fx.abs().max(1.0);
            if ft <= fx + 1e-4 * decrease + slack {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        let g_new = prob.normalized_gradient(&trial)?;
        let (mut sms, mut smy) = (0.0, 0.0);
        for i in 0..n {
            let s = trial[i] - x[i];
            sms += m[i] * s * s;
            smy += m[i] * s * (g_new[i] - g[i]);
        }
        x.copy_from_slice(&trial);
        fx = chi_energy(&x, prob);
        g = g_new;
        res = prob.projected_residual_with(&x, &g);
        alpha = if smy > 0.0 { (sms / smy).clamp(1e-12, 1e12) } else { (alpha * 2.0).min(1e12) };
    }
    let report = ChiSolveReport { iterations: it, residual: res, energy: fx, converged: res <= opts.tol };
    Ok((x, report))
}

/// As [`minimize_chi_from`], but non-convergence is an error.
pub fn minimize_chi_checked(
    prob: &ChiStepProblem,
    start: &[f64],
    opts: &ChiSolveOptions,
) -> Result<(Vec<f64>, ChiSolveReport)> {
    let (x, rep) = minimize_chi_from(prob, start, opts)?;
    if !rep.converged {
        return Err(Error::ChiSolve { iterations: rep.iterations, residual: rep.residual });
    }
    Ok((x, rep))
}

/// Multipliers recovered from the stationarity residual of a solution.
#[derive(Clone, Debug, PartialEq)]
pub struct Multipliers {
    /// Selection of `∂β̂(χ)` (mass-normalized): `≤ 0` where `χ` sits on
    /// the lower end of `dom β̂`, `≥ 0` on the upper end, zero inside.
    pub xi: Vec<f64>,
    /// Selection of `∂I_(-∞,0](χ_t)`: `≥ 0`, supported where
    /// `χ = χ^{k-1}`.
    pub zeta: Vec<f64>,
    /// Mass-normalized gradient of the smooth part.
    pub gradient: Vec<f64>,
}

/// Attributes `-g` at active nodes to the constraint that is active there.
pub fn recover_multipliers(chi: &[f64], prob: &ChiStepProblem) -> Result<Multipliers> {
    let g = prob.normalized_gradient(chi)?;
    let n = chi.len();
    let mut xi = vec![0.0; n];
    let mut zeta = vec![0.0; n];
    let (beta_lo, beta_hi) = if prob.yosida {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        match prob.model.potential {
            Potential::Logarithmic { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            _ => prob.model.beta_feasible_interval(),
        }
    };
    let rate_box = prob.model.irreversible || prob.yosida;
    for i in 0..n {
        let r = -g[i];
        let at_lo = chi[i] <= beta_lo;
        let at_hi = chi[i] >= beta_hi;
        let at_prev = rate_box && chi[i] >= prob.chi_prev[i];
        if at_prev && r > 0.0 {
            zeta[i] = r;
        } else if at_lo && r < 0.0 {
            xi[i] = r;
        } else if at_hi && r > 0.0 {
            xi[i] = r;
        }
    }
    Ok(Multipliers { xi, zeta, gradient: g })
}

/// Result of one reversible phase update.
#[derive(Clone, Debug)]
pub struct ChiStepResult {
    pub chi: Vec<f64>,
    pub multipliers: Multipliers,
    pub report: ChiSolveReport,
}

/// Reversible update: `h_field` of `prob` holds the elastic drive; the
/// temperature enters with a minus sign.
pub fn chi_semilinear_step(
    prob: &ChiStepProblem,
    theta: &[f64],
    start: Option<&[f64]>,
    opts: &ChiSolveOptions,
) -> Result<ChiStepResult> {
    if theta.len() != prob.h_field.len() {
        return Err(Error::Shape { expected: prob.h_field.len(), got: theta.len() });
    }
    let mut full = prob.clone();
    for (h, t) in full.h_field.iter_mut().zip(theta) {
        *h -= t;
    }
    let (chi, report) = minimize_chi_checked(&full, start.unwrap_or(&prob.chi_prev), opts)?;
    let multipliers = recover_multipliers(&chi, &full)?;
    Ok(ChiStepResult { chi, multipliers, report })
}

/// Worst violation of the one-sided inequality tested with the
/// non-positive directions `-e_i`: `max_i (g_i + ξ_i)^+`, mass-normalized.
pub fn one_sided_vi_residual(chi: &[f64], xi: &[f64], prob: &ChiStepProblem) -> Result<f64> {
    let g = prob.normalized_gradient(chi)?;
    Ok(g.iter().zip(xi).map(|(gi, x)| (gi + x).max(0.0)).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_mesh;
    use crate::material::tests::sample_model;
    use crate::material::FluxKind;

    fn irreversible_model() -> MaterialModel {
        let mut m = sample_model();
        m.irreversible = true;
        m.potential = Potential::IndicatorHalfLine;
        m.gamma_hat = Polynomial::default();
        m
    }

    #[test]
    fn energy_at_previous_is_phi() {
        let mesh = build_mesh(1, &[1.0], &[6]).unwrap();
        let mut model = sample_model();
        model.gamma_hat = Polynomial::default();
        let chi: Vec<f64> = (0..7).map(|i| 0.2 + 0.1 * i as f64).collect();
        let prob = ChiStepProblem::reversible(&mesh, &model, chi.clone(), 0.1, vec![0.0; 7]).unwrap();
        assert_eq!(chi_energy(&chi, &prob), phi_functional(&chi, &mesh, &model));
    }

    #[test]
    fn constant_fields_reduce_analytically() {
        let mesh = build_mesh(2, &[1.0, 2.0], &[3, 3]).unwrap();
        let model = sample_model();
        let n = mesh.n_nodes();
        let (cp, c, h, tau) = (0.6, 0.4, 0.3, 0.05);
        let prob = ChiStepProblem::reversible(&mesh, &model, vec![cp; n], tau, vec![h; n]).unwrap();
        let expected = 2.0 * ((c - cp) * (c - cp) / (2.0 * tau) - 0.5 * c * c + h * c);
        assert!((chi_energy(&vec![c; n], &prob) - expected).abs() < 1e-12);
        assert_eq!(chi_energy(&vec![1.1; n], &prob), f64::INFINITY);
    }

    #[test]
    fn stationary_previous_is_kept() {
        let mesh = build_mesh(1, &[1.0], &[10]).unwrap();
        let mut model = sample_model();
        model.gamma_hat = Polynomial::default();
        let prob = ChiStepProblem::reversible(&mesh, &model, vec![0.5; 11], 0.1, vec![0.0; 11]).unwrap();
        let (chi, rep) = minimize_chi(&prob, &ChiSolveOptions::default()).unwrap();
        assert!(rep.converged && rep.iterations == 0);
        assert_eq!(chi, vec![0.5; 11]);
    }

    #[test]
    fn single_node_closed_form() {
        // two-node mesh with equal values never activates the gradient term
        let mesh = build_mesh(1, &[1.0], &[2]).unwrap();
        let model = irreversible_model();
        for (cp, h, tau) in [(0.8, 2.0, 0.1), (0.8, -3.0, 0.1), (0.5, 20.0, 0.1), (0.3, 0.7, 0.2)] {
            let prob = ChiStepProblem::irreversible(&mesh, &model, vec![cp; 3], tau, vec![h; 3]).unwrap();
            let (chi, rep) = minimize_chi(&prob, &ChiSolveOptions { tol: 1e-12, ..Default::default() }).unwrap();
            assert!(rep.converged);
            let expected = (cp - tau * h).clamp(0.0, cp);
            for c in chi {
                assert!((c - expected).abs() < 1e-10, "{c} vs {expected}");
            }
        }
    }

    #[test]
    fn solution_is_feasible_irreversible_and_energy_decreasing() {
        let mesh = build_mesh(1, &[1.0], &[16]).unwrap();
        let model = irreversible_model();
        let chi_prev: Vec<f64> = mesh.coords().iter().map(|p| 0.5 + 0.4 * (3.0 * p[0]).sin()).collect();
        let h: Vec<f64> = mesh.coords().iter().map(|p| 4.0 * (5.0 * p[0]).cos()).collect();
        let prob = ChiStepProblem::irreversible(&mesh, &model, chi_prev.clone(), 0.05, h).unwrap();
        let (chi, rep) = minimize_chi(&prob, &ChiSolveOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(chi.iter().zip(&chi_prev).all(|(c, p)| *c <= *p && *c >= 0.0));
        let e0 = chi_energy(&chi_prev, &prob);
        assert!(rep.energy <= e0 + 1e-12 * e0.abs());
        let mult = recover_multipliers(&chi, &prob).unwrap();
        assert!(mult.zeta.iter().all(|&z| z >= 0.0));
        let vi = one_sided_vi_residual(&chi, &mult.xi, &prob).unwrap();
        assert!(vi <= 10.0 * DEFAULT_TOL, "{vi}");
    }

    #[test]
    fn positive_drive_hits_lower_bound_with_nonpositive_xi() {
        let mesh = build_mesh(1, &[1.0], &[8]).unwrap();
        let model = sample_model();
        let prob = ChiStepProblem::reversible(&mesh, &model, vec![0.3; 9], 0.1, vec![50.0; 9]).unwrap();
        let res = chi_semilinear_step(&prob, &vec![0.0; 9], None, &ChiSolveOptions::default()).unwrap();
        assert!(res.chi.iter().all(|&c| c == 0.0));
        assert!(res.multipliers.xi.iter().all(|&x| x < 0.0));
        // KKT: g + ξ = 0 on the active set
        for (g, x) in res.multipliers.gradient.iter().zip(&res.multipliers.xi) {
            assert!((g + x).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_solution_has_zero_xi() {
        let mesh = build_mesh(1, &[1.0], &[8]).unwrap();
        let model = sample_model();
        let prob = ChiStepProblem::reversible(&mesh, &model, vec![0.5; 9], 0.1, vec![0.1; 9]).unwrap();
        let res = chi_semilinear_step(&prob, &vec![0.0; 9], None, &ChiSolveOptions::default()).unwrap();
        assert!(res.chi.iter().all(|&c| c > 0.0 && c < 1.0));
        assert!(res.multipliers.xi.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn logarithmic_minimizer_stays_inside() {
        let mesh = build_mesh(1, &[1.0], &[12]).unwrap();
        let mut model = sample_model();
        model.potential = Potential::Logarithmic { c1: 1.0, c2: 0.0, c3: 0.0 };
        model.gamma_hat = Polynomial::default();
        model.flux = FluxKind::Regularized;
        let h: Vec<f64> = (0..13).map(|i| if i < 6 { 8.0 } else { -8.0 }).collect();
        let prob = ChiStepProblem::reversible(&mesh, &model, vec![0.5; 13], 1.0, h).unwrap();
        let (chi, rep) = minimize_chi(&prob, &ChiSolveOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(chi.iter().all(|&c| c > LOG_BOX_MARGIN && c < 1.0 - LOG_BOX_MARGIN));
    }

    #[test]
    fn yosida_matches_irreversible_when_nonnegative() {
        let mesh = build_mesh(1, &[1.0], &[10]).unwrap();
        let model = irreversible_model();
        let chi_prev: Vec<f64> = mesh.coords().iter().map(|p| 0.6 + 0.2 * p[0]).collect();
        let h = vec![1.0; 11];
        let a = ChiStepProblem::irreversible(&mesh, &model, chi_prev.clone(), 0.1, h.clone()).unwrap();
        let b = ChiStepProblem::yosida(&mesh, &model, chi_prev, 0.1, h).unwrap();
        let opts = ChiSolveOptions { tol: 1e-12, ..Default::default() };
        let (xa, _) = minimize_chi(&a, &opts).unwrap();
        let (xb, _) = minimize_chi(&b, &opts).unwrap();
        assert!(xa.iter().all(|&c| c > 0.0));
        for (p, q) in xa.iter().zip(&xb) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn corrupted_state_violates_inequality() {
        let mesh = build_mesh(1, &[1.0], &[8]).unwrap();
        let model = irreversible_model();
        let prob = ChiStepProblem::irreversible(&mesh, &model, vec![0.5; 9], 0.1, vec![-1.0; 9]).unwrap();
        let (chi, _) = minimize_chi(&prob, &ChiSolveOptions::default()).unwrap();
        let xi = recover_multipliers(&chi, &prob).unwrap().xi;
        assert!(one_sided_vi_residual(&chi, &xi, &prob).unwrap() < 1e-8);
        let mut bad = chi.clone();
        bad[4] -= 0.2;
        assert!(one_sided_vi_residual(&bad, &xi, &prob).unwrap() > 1e-3);
    }
}
