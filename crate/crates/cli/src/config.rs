//! Run configuration. Every section is optional; missing keys take the
//! defaults below and the resolved values are written next to the outputs.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use qwalk::dynamics::{DisorderConfig, NoiseConfig, QuenchSchedule, Sampling, DEFAULT_SUBSTEPS};
use qwalk::tomography::CountModel;
use qwalk::walk::{MomentumGrid, ThetaPair};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PhaseDiagram,
    QuenchUnitary,
    QuenchEnsemble,
    QuenchLindblad,
    Scaling,
    TomographyRoundtrip,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::PhaseDiagram => "phase-diagram",
            Mode::QuenchUnitary => "quench-unitary",
            Mode::QuenchEnsemble => "quench-ensemble",
            Mode::QuenchLindblad => "quench-lindblad",
            Mode::Scaling => "scaling",
            Mode::TomographyRoundtrip => "tomography-roundtrip",
        }
    }

    pub fn quench_kind(&self) -> Option<QuenchKind> {
        match self {
            Mode::QuenchUnitary => Some(QuenchKind::Unitary),
            Mode::QuenchEnsemble => Some(QuenchKind::Ensemble),
            Mode::QuenchLindblad => Some(QuenchKind::Lindblad),
            _ => None,
        }
    }
}

impl From<QuenchKind> for Mode {
    fn from(k: QuenchKind) -> Self {
        match k {
            QuenchKind::Unitary => Mode::QuenchUnitary,
            QuenchKind::Ensemble => Mode::QuenchEnsemble,
            QuenchKind::Lindblad => Mode::QuenchLindblad,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    /// Momentum nodes for phases and trajectories.
    pub grid: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub schedule: ScheduleSection,
    pub disorder: DisorderSection,
    pub noise: NoiseSection,
    pub quench: QuenchSection,
    pub phase_diagram: PhaseDiagramSection,
    pub scaling: ScalingSection,
    pub tomography: TomographySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: None,
            grid: 256,
            seed: 0,
            out: PathBuf::from("out"),
            threads: None,
            schedule: ScheduleSection::default(),
            disorder: DisorderSection::default(),
            noise: NoiseSection::default(),
            quench: QuenchSection::default(),
            phase_diagram: PhaseDiagramSection::default(),
            scaling: ScalingSection::default(),
            tomography: TomographySection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    /// `(θ₁, θ₂)` before the quench.
    pub theta_i: [f64; 2],
    /// `(θ₁, θ₂)` after the quench.
    pub theta_f: [f64; 2],
    pub steps: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection { theta_i: [0.0, PI], theta_f: [PI / 2.0, 0.0], steps: 13 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingName {
    Uniform,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisorderSection {
    pub delta_theta1: f64,
    pub realizations: usize,
    pub sampling: SamplingName,
    pub resample_each_step: bool,
}

impl Default for DisorderSection {
    fn default() -> Self {
        DisorderSection { delta_theta1: 0.2, realizations: 21, sampling: SamplingName::Uniform, resample_each_step: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Dephasing rate; calibrated against the disorder ensemble when absent.
    pub gamma: Option<f64>,
    pub substeps: usize,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { gamma: None, substeps: DEFAULT_SUBSTEPS }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum QuenchKind {
    Unitary,
    Ensemble,
    Lindblad,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuenchSection {
    /// Write every step's density field to `densities.bin`.
    pub dump_densities: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseDiagramSection {
    /// Cells per axis over `[0, 2π)`.
    pub resolution: usize,
    /// Momentum nodes for the boundary search.
    pub boundary_grid: usize,
    /// Gap below which a point counts as on a boundary.
    pub boundary_tolerance: f64,
}

impl Default for PhaseDiagramSection {
    fn default() -> Self {
        PhaseDiagramSection { resolution: 64, boundary_grid: 512, boundary_tolerance: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    pub steps: Vec<usize>,
}

impl Default for ScalingSection {
    fn default() -> Self {
        ScalingSection { steps: vec![8, 16, 32, 64] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountModelName {
    Multinomial,
    Binomial,
    Poisson,
}

impl From<CountModelName> for CountModel {
    fn from(m: CountModelName) -> Self {
        match m {
            CountModelName::Multinomial => CountModel::Multinomial,
            CountModelName::Binomial => CountModel::Binomial,
            CountModelName::Poisson => CountModel::Poisson,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographySection {
    /// Walk length `N`; the walker occupies sites `−N..=N`.
    pub steps: usize,
    /// Realizations in the simulated state; each one is a quasi-static coin
    /// offset drawn like the disorder section's.
    pub realizations: usize,
    pub shots: u64,
    pub count_model: CountModelName,
    /// Fit exact probabilities instead of sampled counts.
    pub exact: bool,
    /// Column cap of the factor `T`; full rank when absent.
    pub rank: Option<usize>,
    pub restarts: usize,
    pub iteration_budget: usize,
    /// Random null-space probes for the equal-likelihood diagnostic.
    pub gauge_probes: usize,
}

impl Default for TomographySection {
    fn default() -> Self {
        TomographySection {
            steps: 5,
            realizations: 2,
            shots: 100_000,
            count_model: CountModelName::Multinomial,
            exact: false,
            rank: Some(4),
            restarts: 10,
            iteration_budget: 50_000,
            gauge_probes: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn momentum_grid(&self) -> Result<MomentumGrid, CliError> {
        Ok(MomentumGrid::new(self.grid)?)
    }

    pub fn schedule(&self) -> Result<QuenchSchedule, CliError> {
        let s = &self.schedule;
        Ok(QuenchSchedule::new(ThetaPair::new(s.theta_i[0], s.theta_i[1])?, ThetaPair::new(s.theta_f[0], s.theta_f[1])?, s.steps)?)
    }

    pub fn disorder(&self) -> Result<DisorderConfig, CliError> {
        self.disorder_with(self.disorder.realizations)
    }

    pub fn disorder_with(&self, realizations: usize) -> Result<DisorderConfig, CliError> {
        let d = &self.disorder;
        let sampling = match d.sampling {
            SamplingName::Uniform => Sampling::UniformGrid,
            SamplingName::Random => Sampling::Random,
        };
        let cfg = DisorderConfig::new(d.delta_theta1, realizations, sampling, self.seed)?;
        Ok(if d.resample_each_step { cfg.with_resampling()? } else { cfg })
    }

    pub fn noise(&self, gamma: f64) -> Result<NoiseConfig, CliError> {
        let mut n = NoiseConfig::new(gamma)?;
        n.substeps = self.noise.substeps;
        Ok(n)
    }

    /// Checks cross-field constraints that the types alone do not carry.
    pub fn validate(&self) -> Result<(), CliError> {
        self.momentum_grid()?;
        self.schedule()?;
        self.disorder()?;
        if let Some(g) = self.noise.gamma {
            self.noise(g)?;
        }
        if self.noise.substeps == 0 {
            return Err(CliError::Config("noise.substeps must be ≥ 1".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be ≥ 1".into()));
        }
        let pd = &self.phase_diagram;
        if pd.resolution < 2 {
            return Err(CliError::Config("phase_diagram.resolution must be ≥ 2".into()));
        }
        MomentumGrid::new(pd.boundary_grid)?;
        if pd.boundary_tolerance.is_nan() || pd.boundary_tolerance <= 0.0 {
            return Err(CliError::Config("phase_diagram.boundary_tolerance must be positive".into()));
        }
        if self.scaling.steps.len() < 3 || self.scaling.steps.contains(&0) {
            return Err(CliError::Config("scaling.steps needs at least three positive step counts".into()));
        }
        let t = &self.tomography;
        if t.steps == 0 || t.realizations == 0 || t.shots == 0 || t.restarts == 0 {
            return Err(CliError::Config("tomography steps, realizations, shots and restarts must be ≥ 1".into()));
        }
        if t.rank == Some(0) {
            return Err(CliError::Config("tomography.rank must be ≥ 1".into()));
        }
        Ok(())
    }
}
