//! Constitutive functions: heat capacity and the enthalpy change of
//! variables, conductivity ratio and its truncations, the gradient flux of
//! the phase-field energy, coefficient functions and the phase potential.

use crate::error::{Error, Result};

/// Heat capacity `c(θ) = c0 (1+θ)^(σ-1)`, bracketed by
/// `c0 (1+θ)^(σ-1) <= c(θ) <= c1 (1+θ)^(σ1-1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatCapacity {
    pub c0: f64,
    pub c1: f64,
    pub sigma: f64,
    pub sigma1: f64,
}

impl HeatCapacity {
    pub fn value(&self, theta: f64) -> Result<f64> {
        if theta < 0.0 {
            return Err(Error::NegativeTemperature(theta));
        }
        Ok(self.c0 * (1.0 + theta).powf(self.sigma - 1.0))
    }

    /// `h(θ) = ∫_0^θ c(s) ds`.
    pub fn enthalpy(&self, theta: f64) -> Result<f64> {
        if theta < 0.0 {
            return Err(Error::NegativeTemperature(theta));
        }
        Ok(self.c0 * ((1.0 + theta).powf(self.sigma) - 1.0) / self.sigma)
    }

    /// Inverse enthalpy, extended by zero for negative arguments.
    pub fn theta(&self, w: f64) -> f64 {
        if w < 0.0 {
            return 0.0;
        }
        (1.0 + self.sigma * w / self.c0).powf(1.0 / self.sigma) - 1.0
    }

    /// Derivative of [`Self::theta`]; `1/c(Θ(w))` for `w >= 0`, zero below.
    pub fn theta_derivative(&self, w: f64) -> f64 {
        if w < 0.0 {
            return 0.0;
        }
        1.0 / (self.c0 * (1.0 + self.theta(w)).powf(self.sigma - 1.0))
    }

    /// Constants `(d0, d1)` of the growth sandwich
    /// `d1 (w^(1/σ1) - 1) <= Θ(w) <= d0 (w^(1/σ) + 1)` on `w >= 0`.
    ///
    /// `d0` is analytic; `d1` is the infimum of `Θ(w) / (w^(1/σ1) - 1)` over
    /// a logarithmic sample of `w > 1`, shrunk by a small safety factor.
    pub fn growth_constants(&self) -> (f64, f64) {
        let m = 1.0 / self.sigma;
        let s = (self.sigma / self.c0).powf(m);
        let d0 = if m <= 1.0 {
            s.max(1.0)
        } else {
            2f64.powf(m - 1.0) * s.max(1.0)
        };
        let mut d1 = f64::INFINITY;
        for k in 1..=400 {
            let w = 1.0 + 10f64.powf(-6.0 + 12.0 * k as f64 / 400.0);
            let denom = w.powf(1.0 / self.sigma1) - 1.0;
            d1 = d1.min(self.theta(w) / denom);
        }
        (d0, 0.99 * d1)
    }
}

/// Inverts a strictly increasing enthalpy `h` with `h(0) = 0` by bisection;
/// used for heat capacities without a closed-form primitive inverse.
pub fn invert_enthalpy_bisection(h: impl Fn(f64) -> f64, w: f64, tol: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while h(hi) < w {
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    while hi - lo > tol * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        if h(mid) < w {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Conductivity ratio `K(w) = 𝖪(Θ(w)) / c(Θ(w))`.
#[derive(Clone, Debug, PartialEq)]
pub enum Conductivity {
    /// `𝖪(θ) = c2 c(θ) + k_add`, so that `c2 c <= 𝖪 <= c3 (c + 1)`.
    RatioBounded { c2: f64, c3: f64, k_add: f64 },
    /// `K(w) = c10 (w^(2q) + 1)` for `w >= 0`, `c10` below zero.
    Power { c10: f64, q: f64 },
}

/// Gradient energy density `φ` and its flux `d = ∇φ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FluxKind {
    /// `φ(ζ) = |ζ|^p / p`.
    Power,
    /// `φ(ζ) = ((1 + |ζ|²)^(p/2) - 1) / p`.
    Regularized,
}

/// Coefficient functions `a(χ)`, `b(χ)`; all affine.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coefficient {
    Identity,
    OneMinus,
    Constant(f64),
}

impl Coefficient {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Coefficient::Identity => x,
            Coefficient::OneMinus => 1.0 - x,
            Coefficient::Constant(c) => c,
        }
    }

    pub fn derivative(&self) -> f64 {
        match *self {
            Coefficient::Identity => 1.0,
            Coefficient::OneMinus => -1.0,
            Coefficient::Constant(_) => 0.0,
        }
    }
}

/// Convex part `β̂` of the phase potential `W = β̂ + γ̂`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Potential {
    /// Indicator of `[0, 1]`.
    IndicatorUnit,
    /// `r ln r + (1-r) ln(1-r) - c1 r² - c2 r - c3`; the quadratic part is
    /// folded into the smooth potential.
    Logarithmic { c1: f64, c2: f64, c3: f64 },
    /// Indicator of `[0, +∞)`.
    IndicatorHalfLine,
}

/// Real polynomial `Σ a_j x^j`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Polynomial { coeffs }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
    }

    pub fn derivative(&self) -> Polynomial {
        Polynomial {
            coeffs: self.coeffs.iter().enumerate().skip(1).map(|(j, &a)| j as f64 * a).collect(),
        }
    }
}

/// Entropy part `r ln r + (1-r) ln(1-r)` with `0 ln 0 := 0`.
pub fn entropy(r: f64) -> f64 {
    let xlx = |x: f64| if x <= 0.0 { 0.0 } else { x * x.ln() };
    xlx(r) + xlx(1.0 - r)
}

pub fn entropy_derivative(r: f64) -> f64 {
    r.ln() - (1.0 - r).ln()
}

/// Yosida regularization of `∂I_[0,∞)` with parameter `tau`.
pub fn yosida_beta(x: f64, tau: f64) -> f64 {
    x.min(0.0) / tau
}

/// Primitive of [`yosida_beta`], `min_y |y-x|²/(2τ) + I_[0,∞)(y)`.
pub fn yosida_beta_hat(x: f64, tau: f64) -> f64 {
    let m = x.min(0.0);
    m * m / (2.0 * tau)
}

/// Clamp of `r` to `[-m, m]`.
pub fn truncate(r: f64, m: f64) -> f64 {
    r.clamp(-m, m)
}

/// All constitutive data of the thermoviscoelastic system.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialModel {
    pub heat: HeatCapacity,
    pub conductivity: Conductivity,
    /// Lamé constants of `R_e ε = λ1 tr(ε) 1 + 2 λ2 ε`.
    pub lambda1: f64,
    pub lambda2: f64,
    /// Viscosity constants of `R_v ε = ℓ1 tr(ε) 1 + 2 ℓ2 ε`.
    pub ell1: f64,
    pub ell2: f64,
    pub rho: f64,
    /// Irreversible evolution (`χ_t <= 0`).
    pub irreversible: bool,
    pub delta: f64,
    /// Adds `δ` to the elastic weight as well, `b(χ) + δ`.
    pub delta_elastic: bool,
    pub p: f64,
    pub flux: FluxKind,
    pub a: Coefficient,
    pub b: Coefficient,
    pub potential: Potential,
    /// `γ̂`, the smooth part of the potential supplied by the user.
    pub gamma_hat: Polynomial,
    /// Truncation level `M` for the thermal-expansion scheme.
    pub truncation: Option<f64>,
}

impl MaterialModel {
    /// Checks the structural hypotheses for spatial dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let d = dim as f64;
        let bad = |msg: String| Err(Error::Material(msg));
        let HeatCapacity { c0, c1, sigma, sigma1 } = self.heat;
        if !(c0 > 0.0 && c1 >= c0) {
            return bad(format!("heat capacity needs c1 >= c0 > 0 (got c0={c0}, c1={c1})"));
        }
        let sigma_min = 2.0 * d / (d + 2.0);
        if !(sigma > sigma_min && sigma1 >= sigma) {
            return bad(format!(
                "heat capacity exponents need sigma1 >= sigma > 2d/(d+2) = {sigma_min} (got sigma={sigma}, sigma1={sigma1})"
            ));
        }
        match self.conductivity {
            Conductivity::RatioBounded { c2, c3, k_add } => {
                if !(c2 > 0.0 && c3 >= c2 && k_add >= 0.0 && c3 >= k_add) {
                    return bad(format!(
                        "ratio-bounded conductivity needs c2 > 0, k_add >= 0, c3 >= max(c2, k_add) (got c2={c2}, c3={c3}, k_add={k_add})"
                    ));
                }
                if k_add > 0.0 && sigma < 1.0 {
                    return bad("ratio-bounded conductivity with k_add > 0 needs sigma >= 1 to keep K bounded".into());
                }
            }
            Conductivity::Power { c10, q } => {
                let q_min = (d + 2.0) / (2.0 * d);
                if !(c10 > 0.0 && q >= q_min) {
                    return bad(format!("power conductivity needs c10 > 0 and q >= (d+2)/(2d) = {q_min} (got c10={c10}, q={q})"));
                }
            }
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("ell1", self.ell1), ("ell2", self.ell2)] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive (got {v})"));
            }
        }
        if !self.rho.is_finite() {
            return bad("rho must be finite".into());
        }
        if !(self.delta >= 0.0) {
            return bad(format!("delta must be non-negative (got {})", self.delta));
        }
        if !(self.p > d && self.p >= 2.0) {
            return bad(format!("gradient exponent needs p > d and p >= 2 (got p={}, d={dim})", self.p));
        }
        for (name, c) in [("a", self.a), ("b", self.b)] {
            if let Coefficient::Constant(v) = c {
                if !(v >= 0.0) {
                    return bad(format!("coefficient {name} must be non-negative on [0,1] (got constant {v})"));
                }
            }
        }
        if self.irreversible && self.potential != Potential::IndicatorHalfLine {
            return bad(
                "irreversible evolution (mu = 1) requires the potential indicator-half-line, i.e. beta_hat = I_[0,+inf)".into(),
            );
        }
        if let Some(m) = self.truncation {
            if !(m > 0.0) {
                return bad(format!("truncation level M must be positive (got {m})"));
            }
        }
        if self.gamma_hat.coeffs.iter().any(|c| !c.is_finite()) {
            return bad("gamma coefficients must be finite".into());
        }
        Ok(())
    }

    pub fn heat_capacity(&self, theta: f64) -> Result<f64> {
        self.heat.value(theta)
    }

    pub fn enthalpy(&self, theta: f64) -> Result<f64> {
        self.heat.enthalpy(theta)
    }

    /// Temperature as a function of enthalpy, `Θ(w)`.
    pub fn theta_of_w(&self, w: f64) -> f64 {
        self.heat.theta(w)
    }

    pub fn conductivity_ratio(&self, w: f64) -> f64 {
        match self.conductivity {
            Conductivity::RatioBounded { c2, k_add, .. } => {
                if k_add == 0.0 {
                    c2
                } else {
                    let c = self.heat.c0 * (1.0 + self.theta_of_w(w)).powf(self.heat.sigma - 1.0);
                    c2 + k_add / c
                }
            }
            Conductivity::Power { c10, q } => c10 * (w.max(0.0).powf(2.0 * q) + 1.0),
        }
    }

    /// Lower and upper bound of `K` over all enthalpies (`+∞` upper bound for
    /// the unbounded power law).
    pub fn conductivity_bounds(&self) -> (f64, f64) {
        match self.conductivity {
            Conductivity::RatioBounded { c2, k_add, .. } => (c2, c2 + k_add / self.heat.c0),
            Conductivity::Power { c10, .. } => (c10, f64::INFINITY),
        }
    }

    /// `K_M(r) = K(T_M(r))`.
    pub fn conductivity_truncated(&self, r: f64, m: f64) -> f64 {
        self.conductivity_ratio(truncate(r, m))
    }

    /// `Θ_M(r) = Θ(T_M(r))`.
    pub fn theta_truncated(&self, r: f64, m: f64) -> f64 {
        self.theta_of_w(truncate(r, m))
    }

    /// Flux `d(ζ) = ∇φ(ζ)`.
    pub fn flux(&self, z: [f64; 2]) -> [f64; 2] {
        let s = self.flux_scale(z[0] * z[0] + z[1] * z[1]);
        [s * z[0], s * z[1]]
    }

    /// Scalar factor `s` with `d(ζ) = s(|ζ|²) ζ`.
    #[inline]
    pub(crate) fn flux_scale(&self, r2: f64) -> f64 {
        match self.flux {
            FluxKind::Power => {
                if r2 == 0.0 {
                    0.0
                } else {
                    r2.powf(0.5 * (self.p - 2.0))
                }
            }
            FluxKind::Regularized => (1.0 + r2).powf(0.5 * (self.p - 2.0)),
        }
    }

    /// Gradient energy density `φ(ζ)`.
    pub fn phi(&self, z: [f64; 2]) -> f64 {
        let r2 = z[0] * z[0] + z[1] * z[1];
        match self.flux {
            FluxKind::Power => r2.powf(0.5 * self.p) / self.p,
            FluxKind::Regularized => ((1.0 + r2).powf(0.5 * self.p) - 1.0) / self.p,
        }
    }

    /// Smooth part of the potential: user `γ̂` plus, in logarithmic mode,
    /// `-c1 r² - c2 r - c3`.
    pub fn smooth_potential(&self) -> Polynomial {
        let mut coeffs = self.gamma_hat.coeffs.clone();
        if let Potential::Logarithmic { c1, c2, c3 } = self.potential {
            coeffs.resize(coeffs.len().max(3), 0.0);
            coeffs[0] -= c3;
            coeffs[1] -= c2;
            coeffs[2] -= c1;
        }
        Polynomial::new(coeffs)
    }

    pub fn gamma_hat(&self, chi: f64) -> f64 {
        self.smooth_potential().value(chi)
    }

    /// `γ = γ̂'`.
    pub fn gamma(&self, chi: f64) -> f64 {
        self.smooth_potential().derivative().value(chi)
    }

    /// Closed feasible interval of `β̂` (the domain closure).
    pub fn beta_feasible_interval(&self) -> (f64, f64) {
        match self.potential {
            Potential::IndicatorUnit | Potential::Logarithmic { .. } => (0.0, 1.0),
            Potential::IndicatorHalfLine => (0.0, f64::INFINITY),
        }
    }

    /// `W(χ) = β̂(χ) + γ̂(χ)`, or `+∞` outside the domain of `β̂`.
    pub fn w_value(&self, chi: f64) -> f64 {
        let (lo, hi) = self.beta_feasible_interval();
        if !(chi >= lo && chi <= hi) {
            return f64::INFINITY;
        }
        let convex = match self.potential {
            Potential::Logarithmic { .. } => entropy(chi),
            _ => 0.0,
        };
        convex + self.gamma_hat(chi)
    }

    /// Continuity constant of the elastic plus viscous forms in the
    /// Frobenius gradient norm.
    pub fn continuity_constant(&self, dim: usize) -> f64 {
        let d = dim as f64;
        (d * self.lambda1 + 2.0 * self.lambda2) + (d * self.ell1 + 2.0 * self.ell2)
    }

    /// `ε : R_e ε`.
    pub fn elastic_density(&self, eps: &[[f64; 2]; 2], dim: usize) -> f64 {
        isotropic_density(self.lambda1, self.lambda2, eps, dim)
    }

    /// `ε : R_v ε`.
    pub fn viscous_density(&self, eps: &[[f64; 2]; 2], dim: usize) -> f64 {
        isotropic_density(self.ell1, self.ell2, eps, dim)
    }
}

pub(crate) fn isotropic_density(l1: f64, l2: f64, eps: &[[f64; 2]; 2], dim: usize) -> f64 {
    let mut tr = 0.0;
    let mut ee = 0.0;
    for i in 0..dim {
        tr += eps[i][i];
        for j in 0..dim {
            ee += eps[i][j] * eps[i][j];
        }
    }
    l1 * tr * tr + 2.0 * l2 * ee
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn sample_model() -> MaterialModel {
        MaterialModel {
            heat: HeatCapacity { c0: 1.0, c1: 2.0, sigma: 2.0, sigma1: 2.5 },
            conductivity: Conductivity::RatioBounded { c2: 1.0, c3: 2.0, k_add: 0.5 },
            lambda1: 1.0,
            lambda2: 1.0,
            ell1: 0.5,
            ell2: 0.5,
            rho: 0.0,
            irreversible: false,
            delta: 0.1,
            delta_elastic: false,
            p: 4.0,
            flux: FluxKind::Power,
            a: Coefficient::Identity,
            b: Coefficient::Identity,
            potential: Potential::IndicatorUnit,
            gamma_hat: Polynomial::new(vec![0.0, 0.0, -0.5]),
            truncation: None,
        }
    }

    #[test]
    fn heat_capacity_values() {
        let m = sample_model();
        assert_eq!(m.heat_capacity(0.0).unwrap(), 1.0);
        assert!((m.heat_capacity(1.0).unwrap() - 2.0).abs() < 1e-15);
        let h = HeatCapacity { c0: 0.5, c1: 1.0, sigma: 1.5, sigma1: 1.5 };
        assert!((h.value(3.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(m.heat_capacity(-0.1).is_err());
    }

    #[test]
    fn enthalpy_values() {
        let m = sample_model();
        assert_eq!(m.enthalpy(0.0).unwrap(), 0.0);
        assert!((m.enthalpy(1.0).unwrap() - 1.5).abs() < 1e-15);
        assert!(m.enthalpy(2.0).unwrap() > m.enthalpy(1.0).unwrap());
        assert!(m.enthalpy(-1.0).is_err());
    }

    #[test]
    fn theta_inverts_enthalpy_on_grid() {
        for heat in [
            HeatCapacity { c0: 1.0, c1: 2.0, sigma: 2.0, sigma1: 2.5 },
            HeatCapacity { c0: 0.5, c1: 1.0, sigma: 1.5, sigma1: 1.5 },
        ] {
            for k in 0..100 {
                let t = 10.0 * k as f64 / 99.0;
                assert!((heat.theta(heat.enthalpy(t).unwrap()) - t).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn inverse_enthalpy() {
        let m = sample_model();
        assert_eq!(m.theta_of_w(-5.0), 0.0);
        let w = m.enthalpy(1.7).unwrap();
        assert!((m.theta_of_w(w) - 1.7).abs() < 1e-12);
        assert!((m.theta_of_w(1.5) - 1.0).abs() < 1e-14);
        let bis = invert_enthalpy_bisection(|t| m.enthalpy(t).unwrap(), 1.5, 1e-14);
        assert!((bis - 1.0).abs() < 1e-10);
    }

    #[test]
    fn theta_is_lipschitz_and_within_growth_bounds() {
        for heat in [
            HeatCapacity { c0: 1.0, c1: 2.0, sigma: 2.0, sigma1: 2.5 },
            HeatCapacity { c0: 0.7, c1: 0.7, sigma: 0.8, sigma1: 1.3 },
        ] {
            let (d0, d1) = heat.growth_constants();
            assert!(d0 > 0.0 && d1 > 0.0);
            let lip = 1.0 / heat.c0 * 1.0f64.max(1.0);
            let mut prev = (0.0, heat.theta(0.0));
            for k in 0..=2000 {
                let w = 100.0 * k as f64 / 2000.0;
                let t = heat.theta(w);
                assert!(t <= d0 * (w.powf(1.0 / heat.sigma) + 1.0) + 1e-12);
                assert!(t >= d1 * (w.powf(1.0 / heat.sigma1) - 1.0) - 1e-12);
                if k > 0 {
                    // Θ' = 1/c(Θ) <= 1/c0 when σ >= 1; otherwise bounded by 1/c(Θ(100))
                    let slope = (t - prev.1) / (w - prev.0);
                    let bound = if heat.sigma >= 1.0 { lip } else { heat.theta_derivative(100.0) };
                    assert!(slope <= bound * (1.0 + 1e-9));
                }
                prev = (w, t);
            }
        }
    }

    #[test]
    fn conductivity_modes() {
        let mut m = sample_model();
        m.conductivity = Conductivity::RatioBounded { c2: 0.7, c3: 1.0, k_add: 0.0 };
        for w in [-3.0, 0.0, 0.5, 40.0] {
            assert_eq!(m.conductivity_ratio(w), 0.7);
        }
        m.conductivity = Conductivity::Power { c10: 1.0, q: 1.0 };
        assert_eq!(m.conductivity_ratio(2.0), 5.0);
        assert_eq!(m.conductivity_ratio(-3.0), 1.0);

        let m = sample_model();
        let (lo, hi) = m.conductivity_bounds();
        for k in 0..500 {
            let w = -10.0 + k as f64 * 0.3;
            let kv = m.conductivity_ratio(w);
            assert!(kv >= lo - 1e-15 && kv <= hi + 1e-15);
        }
    }

    #[test]
    fn truncations() {
        let mut m = sample_model();
        m.conductivity = Conductivity::Power { c10: 0.5, q: 1.0 };
        let big_m = 3.0;
        for r in [-2.9, 0.0, 1.0, 3.0] {
            assert_eq!(truncate(r, big_m), r);
        }
        assert_eq!(m.theta_truncated(2.0 * big_m, big_m), m.theta_of_w(big_m));
        for edge in [-big_m, big_m] {
            let l = m.conductivity_truncated(edge - 1e-12, big_m);
            let r = m.conductivity_truncated(edge + 1e-12, big_m);
            assert!((l - r).abs() < 1e-9);
        }
        for k in 0..100 {
            let r = -10.0 + 0.2 * k as f64;
            assert!(m.conductivity_truncated(r, big_m) >= 0.5);
        }
    }

    #[test]
    fn flux_values() {
        let m = sample_model();
        assert_eq!(m.flux([0.0, 0.0]), [0.0, 0.0]);
        assert_eq!(m.phi([0.0, 0.0]), 0.0);
        assert_eq!(m.flux([2.0, 0.0]), [8.0, 0.0]);
        assert_eq!(m.phi([2.0, 0.0]), 4.0);
        let mut r = sample_model();
        r.flux = FluxKind::Regularized;
        assert_eq!(r.phi([0.0, 0.0]), 0.0);
    }

    #[test]
    fn flux_is_gradient_of_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for flux in [FluxKind::Power, FluxKind::Regularized] {
            let mut m = sample_model();
            m.flux = flux;
            m.p = 3.3;
            for _ in 0..100 {
                let z = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let e = {
                    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    [a.cos(), a.sin()]
                };
                let h = 1e-5;
                let fd = (m.phi([z[0] + h * e[0], z[1] + h * e[1]]) - m.phi([z[0] - h * e[0], z[1] - h * e[1]])) / (2.0 * h);
                let d = m.flux(z);
                let exact = d[0] * e[0] + d[1] * e[1];
                assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-3), "{fd} vs {exact}");
            }
        }
    }

    #[test]
    fn flux_monotone_and_p_coercive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = sample_model();
        let mut c7 = f64::INFINITY;
        for flux in [FluxKind::Power, FluxKind::Regularized] {
            m.flux = flux;
            for _ in 0..1000 {
                let z = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
                let y = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
                let (dz, dy) = (m.flux(z), m.flux(y));
                let mono = (dz[0] - dy[0]) * (z[0] - y[0]) + (dz[1] - dy[1]) * (z[1] - y[1]);
                assert!(mono >= 0.0);
                let dist = ((z[0] - y[0]).powi(2) + (z[1] - y[1]).powi(2)).sqrt();
                if flux == FluxKind::Power && dist > 1e-8 {
                    c7 = c7.min(mono / dist.powf(m.p));
                }
                let growth = (dz[0] * dz[0] + dz[1] * dz[1]).sqrt();
                let zn = (z[0] * z[0] + z[1] * z[1]).sqrt();
                assert!(growth <= 2f64.powf(0.5 * (m.p - 2.0)) * (1.0 + zn.powf(m.p - 1.0)) + 1e-12);
            }
        }
        assert!(c7 >= 2f64.powf(2.0 - m.p) * (1.0 - 1e-12), "c7 = {c7}");
    }

    #[test]
    fn potential_values() {
        let mut m = sample_model();
        m.gamma_hat = Polynomial::default();
        m.potential = Potential::Logarithmic { c1: 0.0, c2: 0.0, c3: 0.0 };
        assert!((m.w_value(0.5) + 2f64.ln()).abs() < 1e-15);
        assert_eq!(m.w_value(0.0), 0.0);
        assert_eq!(m.w_value(1.0), 0.0);
        assert_eq!(m.w_value(1.2), f64::INFINITY);

        let m = sample_model();
        assert_eq!(m.w_value(1.2), f64::INFINITY);
        assert_eq!(m.w_value(-0.1), f64::INFINITY);
        assert_eq!(m.gamma(0.0), 0.0);
        assert_eq!(m.gamma(0.3), -0.3);
        assert_eq!(m.beta_feasible_interval(), (0.0, 1.0));

        let mut half = sample_model();
        half.potential = Potential::IndicatorHalfLine;
        assert_eq!(half.w_value(5.0), half.gamma_hat(5.0));
        assert_eq!(half.w_value(-1e-9), f64::INFINITY);
    }

    #[test]
    fn yosida_regularization() {
        assert_eq!(yosida_beta(0.3, 0.1), 0.0);
        assert_eq!(yosida_beta(0.0, 0.1), 0.0);
        assert!((yosida_beta(-0.2, 0.1) + 2.0).abs() < 1e-14);
        assert!((yosida_beta_hat(-0.2, 0.1) - 0.2).abs() < 1e-14);
        let tau = 0.25;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lip: f64 = 0.0;
        for _ in 0..200 {
            let (x, y): (f64, f64) = (rng.gen_range(-2.0..1.0), rng.gen_range(-2.0..1.0));
            if (x - y).abs() > 1e-9 {
                lip = lip.max((yosida_beta(x, tau) - yosida_beta(y, tau)).abs() / (x - y).abs());
            }
        }
        assert!(lip <= 1.0 / tau + 1e-9 && lip >= 1.0 / tau - 1e-9);
    }

    #[test]
    fn validation_rules() {
        let m = sample_model();
        assert!(m.validate(1).is_ok());
        assert!(m.validate(2).is_ok());
        let mut bad = m.clone();
        bad.p = 1.5;
        assert!(bad.validate(1).is_err());
        let mut bad = m.clone();
        bad.irreversible = true;
        let msg = bad.validate(1).unwrap_err().to_string();
        assert!(msg.contains("indicator-half-line"));
        let mut bad = m.clone();
        bad.heat.sigma = 0.9;
        assert!(bad.validate(2).is_err());
        assert!(bad.validate(1).is_err()); // k_add > 0 needs sigma >= 1
        let mut bad = m.clone();
        bad.conductivity = Conductivity::Power { c10: 1.0, q: 1.2 };
        assert!(bad.validate(2).is_ok());
        assert!(bad.validate(1).is_err());
        let mut bad = m;
        bad.a = Coefficient::Constant(-1.0);
        assert!(bad.validate(1).is_err());
    }
}
