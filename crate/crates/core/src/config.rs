//! Run configuration (TOML), dotted-key overrides, reference presets and
//! the writers for ledgers, snapshots and reports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Profile, SpaceTime};
use crate::diagnostics::{Ledger, Perturbation, DEFAULT_CHI_THRESHOLD};
use crate::error::{Error, Result};
use crate::grid::{build_mesh, write_snapshot, Mesh};
use crate::material::{Coefficient, Conductivity, FluxKind, HeatCapacity, MaterialModel, Polynomial, Potential};
use crate::stepper::{InitialData, Problem, Scenario, Schedule, Scheme, SolverSettings, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub dim: usize,
    pub extent: Vec<f64>,
    pub n: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_end: f64,
    pub tau: f64,
}

/// `a`, `b` given as `"chi"`, `"one-minus-chi"` or a constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Constant(f64),
    Name(String),
}

/// Flat material block; every key has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialConfig {
    pub c0: f64,
    pub c1: f64,
    pub sigma: f64,
    pub sigma1: f64,
    /// `"ratio-bounded"` (keys `c2`, `c3`, `k_add`) or `"power"` (`c10`, `q`).
    pub conductivity: String,
    pub c2: f64,
    pub c3: f64,
    pub k_add: f64,
    pub c10: f64,
    pub q: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub ell1: f64,
    pub ell2: f64,
    pub rho: f64,
    /// 0 (reversible) or 1 (irreversible).
    pub mu: u8,
    pub delta: f64,
    pub delta_elastic: bool,
    pub p: f64,
    /// `"power"` or `"regularized"`.
    pub flux: String,
    pub a: CoefficientSpec,
    pub b: CoefficientSpec,
    /// `"indicator-unit"`, `"logarithmic"` or `"indicator-half-line"`.
    pub potential: String,
    pub log_c1: f64,
    pub log_c2: f64,
    pub log_c3: f64,
    /// Coefficients of `γ̂` in increasing degree.
    pub gamma: Vec<f64>,
    pub truncation: Option<f64>,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        MaterialConfig {
            c0: 1.0,
            c1: 2.0,
            sigma: 2.0,
            sigma1: 2.5,
            conductivity: "ratio-bounded".into(),
            c2: 1.0,
            c3: 2.0,
            k_add: 0.5,
            c10: 1.0,
            q: 1.5,
            lambda1: 1.0,
            lambda2: 1.0,
            ell1: 0.5,
            ell2: 0.5,
            rho: 0.0,
            mu: 0,
            delta: 0.1,
            delta_elastic: false,
            p: 4.0,
            flux: "regularized".into(),
            a: CoefficientSpec::Name("chi".into()),
            b: CoefficientSpec::Name("chi".into()),
            potential: "indicator-unit".into(),
            log_c1: 0.0,
            log_c2: 0.0,
            log_c3: 0.0,
            gamma: vec![0.0, 0.0, -0.5],
            truncation: None,
        }
    }
}

fn coefficient(name: &str, spec: &CoefficientSpec) -> Result<Coefficient> {
    match spec {
        CoefficientSpec::Constant(c) => Ok(Coefficient::Constant(*c)),
        CoefficientSpec::Name(s) => match s.as_str() {
            "chi" => Ok(Coefficient::Identity),
            "one-minus-chi" => Ok(Coefficient::OneMinus),
            other => Err(Error::Config(format!(
                "material.{name} = {other:?}: expected \"chi\", \"one-minus-chi\" or a number"
            ))),
        },
    }
}

impl MaterialConfig {
    pub fn to_model(&self) -> Result<MaterialModel> {
        let conductivity = match self.conductivity.as_str() {
            "ratio-bounded" => Conductivity::RatioBounded { c2: self.c2, c3: self.c3, k_add: self.k_add },
            "power" => Conductivity::Power { c10: self.c10, q: self.q },
            other => {
                return Err(Error::Config(format!(
                    "material.conductivity = {other:?}: expected \"ratio-bounded\" or \"power\""
                )))
            }
        };
        let flux = match self.flux.as_str() {
            "power" => FluxKind::Power,
            "regularized" => FluxKind::Regularized,
            other => return Err(Error::Config(format!("material.flux = {other:?}: expected \"power\" or \"regularized\""))),
        };
        let potential = match self.potential.as_str() {
            "indicator-unit" => Potential::IndicatorUnit,
            "logarithmic" => Potential::Logarithmic { c1: self.log_c1, c2: self.log_c2, c3: self.log_c3 },
            "indicator-half-line" => Potential::IndicatorHalfLine,
            other => {
                return Err(Error::Config(format!(
                    "material.potential = {other:?}: expected \"indicator-unit\", \"logarithmic\" or \"indicator-half-line\""
                )))
            }
        };
        let irreversible = match self.mu {
            0 => false,
            1 => true,
            m => return Err(Error::Config(format!("material.mu = {m}: expected 0 or 1"))),
        };
        Ok(MaterialModel {
            heat: HeatCapacity { c0: self.c0, c1: self.c1, sigma: self.sigma, sigma1: self.sigma1 },
            conductivity,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            ell1: self.ell1,
            ell2: self.ell2,
            rho: self.rho,
            irreversible,
            delta: self.delta,
            delta_elastic: self.delta_elastic,
            p: self.p,
            flux,
            a: coefficient("a", &self.a)?,
            b: coefficient("b", &self.b)?,
            potential,
            gamma_hat: Polynomial::new(self.gamma.clone()),
            truncation: self.truncation,
        })
    }
}

/// Loads and sources. Missing load components are zero.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub f: Vec<SpaceTime>,
    pub g: SpaceTime,
    pub theta_star: SpaceTime,
}

/// Initial profiles; missing displacement and velocity components are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub theta0: Profile,
    pub u0: Vec<Profile>,
    pub v0: Vec<Profile>,
    pub chi0: Profile,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            theta0: Profile::Constant { value: 0.5 },
            u0: Vec::new(),
            v0: Vec::new(),
            chi0: Profile::Constant { value: 0.5 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    SingleRun,
    TauRefinement,
    DeltaSweep,
    ContinuousDependence,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub u0: Vec<Profile>,
    pub v0: Vec<Profile>,
    pub chi0: Profile,
    pub load: Vec<Profile>,
    pub theta_star: Profile,
}

impl PerturbationConfig {
    pub fn to_perturbation(&self) -> Perturbation {
        Perturbation {
            u0: self.u0.clone(),
            v0: self.v0.clone(),
            chi0: self.chi0.clone(),
            load: self.load.clone(),
            theta_star: self.theta_star.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub halvings: usize,
    pub deltas: Vec<f64>,
    pub chi_threshold: f64,
    /// Allowed max/min ratio of the δ-uniform norms.
    pub sweep_factor: f64,
    pub epsilons: Vec<f64>,
    pub perturbation: PerturbationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::SingleRun,
            halvings: 3,
            deltas: vec![1e-1, 1e-2, 1e-3, 1e-4],
            chi_threshold: DEFAULT_CHI_THRESHOLD,
            sweep_factor: 10.0,
            epsilons: vec![1e-1, 1e-2, 1e-3, 1e-4],
            perturbation: PerturbationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Write `fields_k<k>.txt` every this many steps (0: initial and final only).
    pub snapshot_every: usize,
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { snapshot_every: 0, dir: "out".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub mesh: MeshConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub tolerances: SolverSettings,
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `key.path=value` to a parsed table; the value is read as TOML
/// and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?}: {p} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        cfg.scenario()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("{e}")))
    }

    /// SHA-256 of the canonical TOML serialization, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml_string()?.as_bytes())))
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        build_mesh(self.mesh.dim, &self.mesh.extent, &self.mesh.n)
    }

    /// Problem and nodal initial data; checks all compatibility rules.
    pub fn scenario(&self) -> Result<Scenario> {
        let mesh = self.build_mesh()?;
        let dim = mesh.dim();
        let model = self.material.to_model()?;
        let mut load = self.data.f.clone();
        if load.len() > dim {
            return Err(Error::Config(format!("data.f has {} components, the mesh has dimension {dim}", load.len())));
        }
        load.resize(dim, SpaceTime::zero());
        let problem = Problem {
            mesh,
            model,
            scheme: self.scheme,
            schedule: Schedule::new(self.schedule.t_end, self.schedule.tau)?,
            load,
            heat_source: self.data.g.clone(),
            theta_star: self.data.theta_star.clone(),
            settings: self.tolerances,
        };
        problem.validate()?;
        let vector = |ps: &[Profile], name: &str| -> Result<Vec<f64>> {
            if ps.len() > dim {
                return Err(Error::Config(format!("initial.{name} has {} components, the mesh has dimension {dim}", ps.len())));
            }
            let n = problem.mesh.n_nodes();
            let mut v = vec![0.0; n * dim];
            for (c, p) in ps.iter().enumerate() {
                for (i, x) in p.nodal(&problem.mesh).into_iter().enumerate() {
                    v[i * dim + c] = x;
                }
            }
            Ok(v)
        };
        let init = InitialData {
            theta0: self.initial.theta0.nodal(&problem.mesh),
            u0: vector(&self.initial.u0, "u0")?,
            v0: vector(&self.initial.v0, "v0")?,
            chi0: self.initial.chi0.nodal(&problem.mesh),
        };
        Ok(Scenario { problem, init })
    }
}

/// Reads a config file and applies overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_toml_str(&text, overrides)
}

fn mesh_1d(n: usize) -> MeshConfig {
    MeshConfig { dim: 1, extent: vec![1.0], n: vec![n] }
}

fn mesh_2d(n: usize) -> MeshConfig {
    MeshConfig { dim: 2, extent: vec![1.0, 1.0], n: vec![n, n] }
}

fn bump_load(dim: usize, amplitude: f64) -> Vec<SpaceTime> {
    (0..dim)
        .map(|c| SpaceTime {
            space: Profile::Bump { base: 0.0, amplitude: amplitude * (1.0 - 0.5 * c as f64), center: [0.35, 0.6], width: 0.25 },
            time: crate::data::TimeProfile::Sine { offset: 1.0, amplitude: 0.5, omega: 6.0, phase: 0.0 },
        })
        .collect()
}

fn smooth_displacement(dim: usize, amplitude: f64) -> Vec<Profile> {
    (0..dim).map(|c| Profile::Sine { mean: 0.0, amplitude: amplitude / (1.0 + c as f64), wavenumber: 1.0 }).collect()
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 8] = [
    "reversible-1d",
    "reversible-2d",
    "expansion-1d",
    "irreversible-1d",
    "irreversible-2d",
    "isothermal-irreversible-1d",
    "damage-1d",
    "contdep-1d",
];

/// Reference configurations.
pub fn preset(name: &str) -> Result<RunConfig> {
    let dim = if name.ends_with("2d") { 2 } else { 1 };
    let mesh = if dim == 1 { mesh_1d(64) } else { mesh_2d(16) };
    let mut cfg = RunConfig {
        scheme: Scheme::Reversible,
        mesh,
        schedule: ScheduleConfig { t_end: 0.2, tau: 0.01 },
        material: MaterialConfig::default(),
        data: DataConfig {
            f: bump_load(dim, 4.0),
            g: SpaceTime::stationary(Profile::Bump { base: 0.2, amplitude: 1.0, center: [0.7, 0.3], width: 0.2 }),
            theta_star: SpaceTime::zero(),
        },
        initial: InitialConfig {
            theta0: Profile::Cosine { mean: 0.4, amplitude: 0.3, wavenumber: 1.0 },
            u0: smooth_displacement(dim, 0.05),
            v0: Vec::new(),
            chi0: Profile::Cosine { mean: 0.6, amplitude: 0.2, wavenumber: 2.0 },
        },
        experiment: ExperimentConfig::default(),
        output: OutputConfig::default(),
        tolerances: SolverSettings::default(),
    };
    match name {
        "reversible-1d" | "reversible-2d" => {
            cfg.experiment.kind = ExperimentKind::TauRefinement;
        }
        "expansion-1d" => {
            cfg.scheme = Scheme::ReversibleExpansion;
            cfg.material.rho = 0.3;
            cfg.material.conductivity = "power".into();
            cfg.material.truncation = Some(50.0);
        }
        "irreversible-1d" | "irreversible-2d" => {
            cfg.scheme = Scheme::Irreversible;
            cfg.material.mu = 1;
            cfg.material.potential = "indicator-half-line".into();
            cfg.material.gamma = vec![0.0, -0.4, 0.3];
            cfg.initial.theta0 = Profile::Cosine { mean: 0.5, amplitude: 0.3, wavenumber: 1.0 };
            cfg.initial.chi0 = Profile::Cosine { mean: 0.8, amplitude: 0.15, wavenumber: 2.0 };
            cfg.experiment.kind = ExperimentKind::TauRefinement;
        }
        "isothermal-irreversible-1d" => {
            cfg.scheme = Scheme::IsothermalIrreversible;
            cfg.material.mu = 1;
            cfg.material.potential = "indicator-half-line".into();
            cfg.material.gamma = vec![0.0, -0.4, 0.3];
            cfg.data.theta_star =
                SpaceTime::stationary(Profile::Cosine { mean: 0.3, amplitude: 0.3, wavenumber: 1.0 });
            cfg.initial.chi0 = Profile::Cosine { mean: 0.5, amplitude: 0.3, wavenumber: 1.0 };
        }
        "damage-1d" => {
            cfg.scheme = Scheme::Irreversible;
            cfg.material.mu = 1;
            cfg.material.potential = "indicator-half-line".into();
            cfg.material.gamma = vec![0.0, 0.3];
            cfg.material.delta_elastic = true;
            cfg.data.f = bump_load(1, 15.0);
            cfg.initial.u0 = smooth_displacement(1, 0.2);
            cfg.initial.theta0 = Profile::Constant { value: 0.5 };
            cfg.initial.chi0 = Profile::Cosine { mean: 0.45, amplitude: 0.35, wavenumber: 1.0 };
            cfg.schedule = ScheduleConfig { t_end: 0.4, tau: 0.01 };
            cfg.experiment.kind = ExperimentKind::DeltaSweep;
        }
        "contdep-1d" => {
            cfg.scheme = Scheme::IsothermalReversible;
            cfg.material.a = CoefficientSpec::Constant(1.0);
            cfg.material.p = 2.5;
            cfg.schedule = ScheduleConfig { t_end: 0.2, tau: 0.005 };
            cfg.data.theta_star = SpaceTime::stationary(Profile::Cosine { mean: 0.2, amplitude: 0.2, wavenumber: 1.0 });
            cfg.initial.chi0 = Profile::Cosine { mean: 0.5, amplitude: 0.2, wavenumber: 1.0 };
            cfg.experiment.kind = ExperimentKind::ContinuousDependence;
            cfg.experiment.perturbation = PerturbationConfig {
                u0: vec![Profile::Sine { mean: 0.0, amplitude: 0.1, wavenumber: 2.0 }],
                v0: vec![Profile::Sine { mean: 0.0, amplitude: 0.2, wavenumber: 1.0 }],
                chi0: Profile::Cosine { mean: 0.0, amplitude: 0.1, wavenumber: 3.0 },
                load: vec![Profile::Cosine { mean: 0.5, amplitude: 0.5, wavenumber: 1.0 }],
                theta_star: Profile::Cosine { mean: 0.1, amplitude: 0.1, wavenumber: 2.0 },
            };
        }
        other => {
            return Err(Error::Config(format!("unknown preset {other:?}; known presets: {}", PRESETS.join(", "))));
        }
    }
    Ok(cfg)
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Column names of [`write_ledger_csv`].
pub const LEDGER_COLUMNS: [&str; 44] = [
    "k",
    "t",
    "enthalpy",
    "kinetic",
    "elastic",
    "phi",
    "potential",
    "total_energy",
    "chi_rate",
    "viscous",
    "work_f",
    "heat_in",
    "theta_work",
    "slack",
    "d_kinetic",
    "d_elastic",
    "bregman_phi",
    "bregman_convex",
    "bregman_smooth",
    "d_multiplier",
    "d_coefficient",
    "numerical",
    "defect",
    "acc_viscous",
    "acc_chi_rate",
    "acc_work_f",
    "acc_heat_in",
    "ineq_lhs",
    "ineq_rhs",
    "remainder",
    "ineq_slack",
    "vi_violation",
    "min_w",
    "max_abs_w",
    "below_truncation",
    "chi_monotone",
    "mu_sq",
    "eta_norm",
    "pi",
    "outer_iterations",
    "chi_iterations",
    "cg_iterations",
    "fixed_point_increment",
    "cg_residual",
];

/// One CSV row per step; reals with 17 significant digits.
pub fn write_ledger_csv<W: Write>(out: &mut W, ledger: &Ledger, traj: &Trajectory) -> Result<()> {
    writeln!(out, "{}", LEDGER_COLUMNS.join(","))?;
    for (r, rep) in ledger.rows.iter().zip(&traj.reports) {
        let e = &r.energy;
        let reals = [
            r.t,
            e.enthalpy,
            e.kinetic,
            e.elastic,
            e.phi,
            e.potential,
            r.total_energy,
            r.chi_rate,
            r.viscous,
            r.work_f,
            r.heat_in,
            r.theta_work,
            r.slack,
            r.d_kinetic,
            r.d_elastic,
            r.bregman_phi,
            r.bregman_convex,
            r.bregman_smooth,
            r.d_multiplier,
            r.d_coefficient,
            r.numerical,
            r.defect,
            r.acc_viscous,
            r.acc_chi_rate,
            r.acc_work_f,
            r.acc_heat_in,
            r.ineq_lhs,
            r.ineq_rhs,
            r.remainder,
            r.ineq_slack,
            r.vi_violation,
            r.min_w,
            r.max_abs_w,
        ];
        let mut cols: Vec<String> = vec![r.k.to_string()];
        cols.extend(reals.iter().map(|&x| fmt17(x)));
        cols.push((r.below_truncation as u8).to_string());
        cols.push((r.chi_monotone as u8).to_string());
        cols.extend([r.mu_sq, r.eta_norm, r.pi].iter().map(|&x| fmt17(x)));
        cols.push(rep.outer_iterations.to_string());
        cols.push(rep.chi_iterations.to_string());
        cols.push(rep.cg_iterations.to_string());
        cols.push(fmt17(rep.fixed_point_increment));
        cols.push(fmt17(rep.cg_residual));
        writeln!(out, "{}", cols.join(","))?;
    }
    Ok(())
}

/// Writes `fields_k<k>.txt` for `k = 0`, every `every`-th step and the last.
pub fn write_field_snapshots(dir: &Path, mesh: &Mesh, traj: &Trajectory, tau: f64, every: usize) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let last = traj.states.len() - 1;
    let dim = mesh.dim();
    let mut written = Vec::new();
    for (k, s) in traj.states.iter().enumerate() {
        if !(k == 0 || k == last || (every > 0 && k % every == 0)) {
            continue;
        }
        let comps: Vec<Vec<f64>> = (0..dim).map(|c| s.u.component(c)).collect();
        let names = ["u1", "u2"];
        let mut fields: Vec<(&str, &[f64])> = vec![("w", &s.w), ("chi", &s.chi)];
        for (c, v) in comps.iter().enumerate() {
            fields.push((names[c], v));
        }
        let name = format!("fields_k{k}.txt");
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(&name))?);
        write_snapshot(&mut f, mesh, k as f64 * tau, &fields)?;
        written.push(name);
    }
    Ok(written)
}

/// Experiment report as written to `report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct Report<T: Serialize> {
    pub experiment: String,
    pub config_hash: String,
    pub passed: bool,
    pub checks: Vec<(String, bool)>,
    pub data: T,
}

pub fn write_report_json<T: Serialize>(path: &Path, report: &Report<T>) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Config(format!("{e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_load_and_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.scenario().unwrap();
            let text = cfg.to_toml_string().unwrap();
            let back = RunConfig::from_toml_str(&text, &[]).unwrap();
            assert_eq!(back, cfg, "{name}");
            assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        }
    }

    #[test]
    fn minimal_config_and_errors() {
        let text = "scheme = \"reversible\"\n[mesh]\ndim = 1\nextent = [1.0]\nn = [8]\n[schedule]\nt_end = 0.1\ntau = 0.05\n";
        let cfg = RunConfig::from_toml_str(text, &[]).unwrap();
        assert_eq!(cfg.material, MaterialConfig::default());
        assert!(RunConfig::from_toml_str(&format!("{text}bogus = 1\n"), &[]).is_err());
        assert!(RunConfig::from_toml_str("scheme = \"reversible\"\n", &[]).is_err());
        let err = RunConfig::from_toml_str(text, &["material.mu=1".into(), "material.potential=logarithmic".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("indicator-half-line"), "{err}");
        let cfg = RunConfig::from_toml_str(text, &["material.delta=0.01".into(), "material.flux=power".into()]).unwrap();
        assert_eq!(cfg.material.delta, 0.01);
        assert_eq!(cfg.material.flux, "power");
        assert!(RunConfig::from_toml_str(text, &["scheme=irreversible".into()]).is_err());
        assert!(RunConfig::from_toml_str(text, &["nokey".into()]).is_err());
        let mut changed = cfg.clone();
        changed.material.delta = 0.02;
        assert_ne!(changed.hash().unwrap(), cfg.hash().unwrap());
    }
}
