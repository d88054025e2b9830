//! Analytic space and time profiles for loads, sources and initial data.

use serde::{Deserialize, Serialize};

use crate::grid::{Mesh, Point};

/// Scalar profile on the domain, evaluated in coordinates scaled to the
/// unit box (`s = x / extent`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// `mean + amplitude Π_d cos(k π s_d)`.
    Cosine { mean: f64, amplitude: f64, wavenumber: f64 },
    /// `mean + amplitude Π_d sin(k π s_d)`; vanishes on the boundary when
    /// `mean = 0` and `k` is an integer.
    Sine { mean: f64, amplitude: f64, wavenumber: f64 },
    /// `base + amplitude exp(-|s - center|² / width²)`.
    Bump { base: f64, amplitude: f64, center: [f64; 2], width: f64 },
    Sum { terms: Vec<Profile> },
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Constant { value: 0.0 }
    }
}

impl Profile {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Profile::Constant { value } => *value == 0.0,
            Profile::Cosine { mean, amplitude, .. } | Profile::Sine { mean, amplitude, .. } => {
                *mean == 0.0 && *amplitude == 0.0
            }
            Profile::Bump { base, amplitude, .. } => *base == 0.0 && *amplitude == 0.0,
            Profile::Sum { terms } => terms.iter().all(Profile::is_zero),
        }
    }

    /// The profile multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Profile {
        match self {
            Profile::Constant { value } => Profile::Constant { value: c * value },
            Profile::Cosine { mean, amplitude, wavenumber } => {
                Profile::Cosine { mean: c * mean, amplitude: c * amplitude, wavenumber: *wavenumber }
            }
            Profile::Sine { mean, amplitude, wavenumber } => {
                Profile::Sine { mean: c * mean, amplitude: c * amplitude, wavenumber: *wavenumber }
            }
            Profile::Bump { base, amplitude, center, width } => {
                Profile::Bump { base: c * base, amplitude: c * amplitude, center: *center, width: *width }
            }
            Profile::Sum { terms } => Profile::Sum { terms: terms.iter().map(|t| t.scaled(c)).collect() },
        }
    }

    pub fn eval(&self, s: Point, dim: usize) -> f64 {
        use std::f64::consts::PI;
        match self {
            Profile::Constant { value } => *value,
            Profile::Cosine { mean, amplitude, wavenumber } => {
                mean + amplitude * (0..dim).map(|d| (wavenumber * PI * s[d]).cos()).product::<f64>()
            }
            Profile::Sine { mean, amplitude, wavenumber } => {
                mean + amplitude * (0..dim).map(|d| (wavenumber * PI * s[d]).sin()).product::<f64>()
            }
            Profile::Bump { base, amplitude, center, width } => {
                let r2: f64 = (0..dim).map(|d| (s[d] - center[d]).powi(2)).sum();
                base + amplitude * (-r2 / (width * width)).exp()
            }
            Profile::Sum { terms } => terms.iter().map(|t| t.eval(s, dim)).sum(),
        }
    }

    /// Nodal interpolant on `mesh`.
    pub fn nodal(&self, mesh: &Mesh) -> Vec<f64> {
        let ext = mesh.extent();
        let dim = mesh.dim();
        mesh.coords()
            .iter()
            .map(|p| {
                let mut s = [0.0; 2];
                for d in 0..dim {
                    s[d] = p[d] / ext[d];
                }
                self.eval(s, dim)
            })
            .collect()
    }
}

/// Scalar function of time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TimeProfile {
    Constant { value: f64 },
    Linear { intercept: f64, slope: f64 },
    /// `offset + amplitude sin(omega t + phase)`.
    Sine { offset: f64, amplitude: f64, omega: f64, phase: f64 },
    /// Piecewise constant: `values[j]` on `[times[j], times[j+1])`, the last
    /// value extended to the right and the first to the left.
    Table { times: Vec<f64>, values: Vec<f64> },
}

impl Default for TimeProfile {
    fn default() -> Self {
        TimeProfile::Constant { value: 1.0 }
    }
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant { value } => *value,
            TimeProfile::Linear { intercept, slope } => intercept + slope * t,
            TimeProfile::Sine { offset, amplitude, omega, phase } => offset + amplitude * (omega * t + phase).sin(),
            TimeProfile::Table { times, values } => {
                let j = times.partition_point(|&s| s <= t);
                values[j.saturating_sub(1).min(values.len() - 1)]
            }
        }
    }

    /// `∫_a^b` of the profile; exact for tables, 4-point Gauss otherwise.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            TimeProfile::Table { times, .. } => {
                let mut cuts = vec![a];
                cuts.extend(times.iter().copied().filter(|&s| s > a && s < b));
                cuts.push(b);
                cuts.windows(2).map(|w| (w[1] - w[0]) * self.eval(0.5 * (w[0] + w[1]))).sum()
            }
            _ => {
                const NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
                const WEIGHTS: [f64; 4] = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
                let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
                h * NODES.iter().zip(WEIGHTS).map(|(x, w)| w * self.eval(c + h * x)).sum::<f64>()
            }
        }
    }
}

/// Separable space-time datum `space(x) · time(t)`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceTime {
    #[serde(default)]
    pub space: Profile,
    #[serde(default)]
    pub time: TimeProfile,
}

impl SpaceTime {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn stationary(space: Profile) -> Self {
        SpaceTime { space, time: TimeProfile::default() }
    }

    pub fn is_zero(&self) -> bool {
        self.space.is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_values() {
        let c = Profile::Cosine { mean: 0.3, amplitude: 0.2, wavenumber: 1.0 };
        assert!((c.eval([0.0, 0.0], 1) - 0.5).abs() < 1e-15);
        assert!((c.eval([1.0, 0.0], 1) - 0.1).abs() < 1e-15);
        let s = Profile::Sine { mean: 0.0, amplitude: 1.0, wavenumber: 1.0 };
        assert!(s.eval([1.0, 0.5], 2).abs() < 1e-15);
        assert!((s.eval([0.5, 0.5], 2) - 1.0).abs() < 1e-15);
        let sum = Profile::Sum { terms: vec![c.clone(), Profile::Constant { value: 1.0 }] };
        assert!((sum.eval([0.0, 0.0], 1) - 1.5).abs() < 1e-15);
        assert!(Profile::zero().is_zero());
    }

    #[test]
    fn gauss_integral_exact_for_cubics_and_tables() {
        let lin = TimeProfile::Linear { intercept: 0.0, slope: 1.0 };
        assert!((lin.integral(0.0, 0.3) / 0.3 - 0.15).abs() < 1e-15);
        let tab = TimeProfile::Table { times: vec![0.0, 0.25], values: vec![1.0, 3.0] };
        assert!((tab.integral(0.0, 0.5) - 1.0).abs() < 1e-15);
        assert!((tab.integral(0.2, 0.3) - 0.2).abs() < 1e-15);
    }
}
