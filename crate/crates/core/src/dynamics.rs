//! Slow-quench dynamics: unitary, disorder-ensemble averaged and Lindblad
//! dephased evolutions of momentum-space spin states.

use std::f64::consts::PI;
use std::sync::Arc;

use argmin::core::{CostFunction, Executor};
use argmin::solver::brent::BrentOpt;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::geometry::{berry_phase, uhlmann_phase, DensityField, GeometricPhase, StateField};
use crate::spin::{inner, SpinMatrix, Spinor, ZERO};
use crate::walk::{bloch_field, bloch_points_lenient, lower_eigenvector, step_unitary_k, BlochField, BlochPoint, MomentumGrid, ThetaPair};

/// Straight-line ramp `θ(t) = θ_i + (θ_f − θ_i) t/N`, `t = 0..=N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuenchSchedule {
    pub theta_i: ThetaPair,
    pub theta_f: ThetaPair,
    steps: usize,
}

impl QuenchSchedule {
    pub fn new(theta_i: ThetaPair, theta_f: ThetaPair, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("quench needs at least one step"));
        }
        Ok(QuenchSchedule { theta_i, theta_f, steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `υ = 1/N`.
    pub fn velocity(&self) -> f64 {
        1.0 / self.steps as f64
    }

    /// Coin angles of step `t`; `t = N` returns `θ_f` exactly.
    pub fn theta_at(&self, t: usize) -> Result<ThetaPair> {
        match t {
            0 => Ok(self.theta_i),
            t if t == self.steps => Ok(self.theta_f),
            t if t < self.steps => self.theta_i.lerp(&self.theta_f, t as f64 / self.steps as f64),
            t => Err(Error::invalid(format!("step {t} beyond schedule length {}", self.steps))),
        }
    }

    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        QuenchSchedule::new(self.theta_i, self.theta_f, steps)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Sampling {
    /// Offsets equally spaced across `[−δθ₁, δθ₁]`.
    #[default]
    UniformGrid,
    /// Independent uniform draws, one counter-based stream per realization.
    Random,
}

/// Quasi-static `θ₁` disorder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisorderConfig {
    pub delta_theta1: f64,
    pub n_realizations: usize,
    pub sampling: Sampling,
    pub seed: u64,
    /// Redraw the offset at every step (random sampling only).
    pub resample_each_step: bool,
}

impl DisorderConfig {
    pub fn new(delta_theta1: f64, n_realizations: usize, sampling: Sampling, seed: u64) -> Result<Self> {
        let cfg = DisorderConfig { delta_theta1, n_realizations, sampling, seed, resample_each_step: false };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn uniform(delta_theta1: f64, n_realizations: usize) -> Result<Self> {
        DisorderConfig::new(delta_theta1, n_realizations, Sampling::UniformGrid, 0)
    }

    pub fn with_resampling(mut self) -> Result<Self> {
        self.resample_each_step = true;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta_theta1.is_finite() || self.delta_theta1 < 0.0 {
            return Err(Error::invalid(format!("disorder half-width {} must be ≥ 0", self.delta_theta1)));
        }
        if self.n_realizations == 0 {
            return Err(Error::invalid("need at least one disorder realization"));
        }
        if self.resample_each_step && self.sampling != Sampling::Random {
            return Err(Error::invalid("per-step resampling requires random sampling"));
        }
        Ok(())
    }

    fn stream(&self, realization: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(realization as u64);
        rng
    }

    /// Quasi-static offset of each realization.
    pub fn offsets(&self) -> Vec<f64> {
        let (d, n) = (self.delta_theta1, self.n_realizations);
        match self.sampling {
            Sampling::UniformGrid if n == 1 => vec![0.0],
            Sampling::UniformGrid => (0..n).map(|r| -d + 2.0 * d * r as f64 / (n - 1) as f64).collect(),
            Sampling::Random => (0..n).map(|r| self.draw(&mut self.stream(r))).collect(),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.delta_theta1 == 0.0 {
            0.0
        } else {
            rng.random_range(-self.delta_theta1..=self.delta_theta1)
        }
    }

    /// Per-step offsets `[t−1]` for one realization.
    fn realization_offsets(&self, r: usize, quasi_static: f64, steps: usize) -> Vec<f64> {
        if self.resample_each_step {
            let mut rng = self.stream(r);
            (0..steps).map(|_| self.draw(&mut rng)).collect()
        } else {
            vec![quasi_static; steps]
        }
    }
}

/// Eigenbasis dephasing rate `γ`, constant over momenta.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    pub gamma: f64,
    /// Splitting substeps per walk step.
    pub substeps: usize,
}

pub const DEFAULT_SUBSTEPS: usize = 16;

impl NoiseConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::invalid(format!("dephasing rate {gamma} must be ≥ 0")));
        }
        Ok(NoiseConfig { gamma, substeps: DEFAULT_SUBSTEPS })
    }
}

/// A node whose gap was closed during a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapEvent {
    pub step: usize,
    pub node: usize,
    pub k: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrajectoryFields {
    Pure(Vec<StateField>),
    Mixed(Vec<DensityField>),
}

/// Fields at `t = 0..=N` (index `t`; entry 0 is the initial state) together
/// with the instantaneous Hamiltonians of the drive.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub schedule: QuenchSchedule,
    pub fields: TrajectoryFields,
    /// `None` where some node of the step's Hamiltonian is gapless.
    pub hamiltonians: Vec<Option<BlochField>>,
    /// Lower-band Berry phase of each instantaneous Hamiltonian.
    pub hamiltonian_berry: Vec<Option<f64>>,
    /// First step at which the instantaneous Berry phase flips.
    pub critical_step: Option<usize>,
    pub gap_events: Vec<GapEvent>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        match &self.fields {
            TrajectoryFields::Pure(s) => s.len(),
            TrajectoryFields::Mixed(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn density(&self, t: usize) -> DensityField {
        match &self.fields {
            TrajectoryFields::Pure(s) => s[t].to_density(),
            TrajectoryFields::Mixed(d) => d[t].clone(),
        }
    }

    pub fn densities(&self) -> Vec<DensityField> {
        (0..self.len()).map(|t| self.density(t)).collect()
    }

    pub fn final_density(&self) -> DensityField {
        self.density(self.len() - 1)
    }

    pub fn final_hamiltonian(&self) -> Option<&BlochField> {
        self.hamiltonians.last().and_then(Option::as_ref)
    }

    /// Berry phases for pure runs, Uhlmann phases otherwise, per step.
    pub fn phases(&self) -> Result<Vec<GeometricPhase>> {
        match &self.fields {
            TrajectoryFields::Pure(s) => s.iter().enumerate().map(|(t, f)| berry_phase(f).map_err(|e| e.at_step(t))).collect(),
            TrajectoryFields::Mixed(d) => Ok(d.iter().map(uhlmann_phase).collect()),
        }
    }
}

/// `(1, −i)/√2` at every node: the flat-band ground state, i.e. the momentum
/// transform of `|x=0⟩ ⊗ (|H⟩ − i|V⟩)/√2`.
pub fn initial_ground_state(grid: &MomentumGrid) -> StateField {
    let s = 0.5f64.sqrt();
    StateField::new(*grid, vec![[C64::new(s, 0.0), C64::new(0.0, -s)]; grid.size()]).expect("constant normalized spinor")
}

struct Instantaneous {
    hamiltonians: Vec<Option<BlochField>>,
    berry: Vec<Option<f64>>,
    critical_step: Option<usize>,
    gap_events: Vec<GapEvent>,
}

fn instantaneous(schedule: &QuenchSchedule, grid: &MomentumGrid) -> Result<Instantaneous> {
    let mut hamiltonians = Vec::with_capacity(schedule.steps() + 1);
    let mut berry = Vec::with_capacity(schedule.steps() + 1);
    let mut gap_events = Vec::new();
    for t in 0..=schedule.steps() {
        let theta = schedule.theta_at(t)?;
        match bloch_field(&theta, grid) {
            Ok(h) => {
                let phase = berry_phase(&StateField::lower_band(&h)).ok().map(|p| p.value);
                berry.push(phase);
                hamiltonians.push(Some(h));
            }
            Err(_) => {
                if t > 0 {
                    for (node, p) in bloch_points_lenient(&theta, grid).iter().enumerate() {
                        if p.is_none() {
                            gap_events.push(GapEvent { step: t, node, k: grid.k(node) });
                        }
                    }
                }
                berry.push(None);
                hamiltonians.push(None);
            }
        }
    }
    Ok(Instantaneous { critical_step: critical_step(&berry), hamiltonians, berry, gap_events })
}

/// First step whose quantized Berry phase differs from the last defined one.
fn critical_step(berry: &[Option<f64>]) -> Option<usize> {
    let quantize = |v: f64| v.abs() > 0.5 * PI;
    let mut prev: Option<bool> = None;
    for (t, b) in berry.iter().enumerate() {
        if let Some(v) = b {
            let q = quantize(*v);
            if let Some(p) = prev {
                if p != q {
                    return Some(t);
                }
            }
            prev = Some(q);
        }
    }
    None
}

/// Spinors at `t = 0..=N` for a run whose step `t` uses `θ(t)` with `θ₁`
/// shifted by `offsets[t−1]`.
fn evolve_pure(schedule: &QuenchSchedule, init: &[Spinor], grid: &MomentumGrid, offsets: &[f64]) -> Result<Vec<Vec<Spinor>>> {
    let mut out = Vec::with_capacity(schedule.steps() + 1);
    out.push(init.to_vec());
    for t in 1..=schedule.steps() {
        let theta = match offsets[t - 1] {
            0.0 => schedule.theta_at(t)?,
            d => schedule.theta_at(t)?.with_theta1_offset(d)?,
        };
        let prev = &out[t - 1];
        let next = grid.nodes().zip(prev).map(|(k, v)| step_unitary_k(&theta, k).apply(v)).collect();
        out.push(next);
    }
    Ok(out)
}

pub fn unitary_quench(schedule: &QuenchSchedule, init: &StateField) -> Result<TrajectoryRecord> {
    let grid = *init.grid();
    let inst = instantaneous(schedule, &grid)?;
    let spinors = evolve_pure(schedule, init.spinors(), &grid, &vec![0.0; schedule.steps()])?;
    let fields = spinors.into_iter().map(|psi| StateField::new(grid, psi)).collect::<Result<Vec<_>>>()?;
    Ok(record(schedule, TrajectoryFields::Pure(fields), inst))
}

fn record(schedule: &QuenchSchedule, fields: TrajectoryFields, inst: Instantaneous) -> TrajectoryRecord {
    TrajectoryRecord {
        schedule: *schedule,
        fields,
        hamiltonians: inst.hamiltonians,
        hamiltonian_berry: inst.berry,
        critical_step: inst.critical_step,
        gap_events: inst.gap_events,
    }
}

/// Per-realization spinor trajectories `[r][t][node]`.
fn ensemble_spinors(schedule: &QuenchSchedule, disorder: &DisorderConfig, init: &StateField) -> Result<Vec<Vec<Vec<Spinor>>>> {
    disorder.validate()?;
    let grid = *init.grid();
    // Zero width: every realization is the unitary run.
    if disorder.delta_theta1 == 0.0 {
        return Ok(vec![evolve_pure(schedule, init.spinors(), &grid, &vec![0.0; schedule.steps()])?]);
    }
    disorder
        .offsets()
        .into_par_iter()
        .enumerate()
        .map(|(r, d)| {
            let offsets = disorder.realization_offsets(r, d, schedule.steps());
            evolve_pure(schedule, init.spinors(), &grid, &offsets)
        })
        .collect()
}

/// Equal-weight mixture of realizations, summed in realization order.
fn average(runs: &[Vec<Vec<Spinor>>], grid: MomentumGrid) -> Result<Vec<DensityField>> {
    let steps = runs[0].len();
    let scale = 1.0 / runs.len() as f64;
    (0..steps)
        .map(|t| {
            let rho = (0..grid.size())
                .map(|j| {
                    let mut acc = SpinMatrix::zero();
                    for run in runs {
                        acc += SpinMatrix::outer(&run[t][j]);
                    }
                    acc.scale(scale)
                })
                .collect();
            DensityField::new(grid, rho).map_err(|e| e.at_step(t))
        })
        .collect()
}

pub fn disorder_ensemble_quench(schedule: &QuenchSchedule, disorder: &DisorderConfig, init: &StateField) -> Result<TrajectoryRecord> {
    let grid = *init.grid();
    let inst = instantaneous(schedule, &grid)?;
    let runs = ensemble_spinors(schedule, disorder, init)?;
    let fields = average(&runs, grid)?;
    Ok(record(schedule, TrajectoryFields::Mixed(fields), inst))
}

/// One walk step of the dephasing master equation for one node.
fn lindblad_step(rho: SpinMatrix, point: &BlochPoint, gamma: f64, substeps: usize) -> SpinMatrix {
    let dt = 1.0 / substeps as f64;
    let w = point.evolution(dt);
    let wd = w.dagger();
    let sigma = SpinMatrix::from_bloch(point.n);
    let p = 0.5 * (1.0 - (-2.0 * gamma * dt).exp());
    let mut rho = rho;
    for _ in 0..substeps {
        rho = w * rho * wd;
        rho = rho.scale(1.0 - p) + (sigma * rho * sigma).scale(p);
    }
    rho
}

pub fn lindblad_quench(schedule: &QuenchSchedule, noise: &NoiseConfig, init: &StateField) -> Result<TrajectoryRecord> {
    if !noise.gamma.is_finite() || noise.gamma < 0.0 || noise.substeps == 0 {
        return Err(Error::invalid(format!("invalid noise configuration {noise:?}")));
    }
    let grid = *init.grid();
    let inst = instantaneous(schedule, &grid)?;
    let mut fields = vec![init.to_density()];
    for t in 1..=schedule.steps() {
        let theta = schedule.theta_at(t)?;
        let points = bloch_points_lenient(&theta, &grid);
        let prev = fields[t - 1].matrices();
        let rho = grid
            .nodes()
            .zip(points.iter().zip(prev))
            .map(|(k, (p, r))| match p {
                Some(p) => lindblad_step(*r, p, noise.gamma, noise.substeps),
                // σ̃ is undefined at a closed gap: evolve unitarily.
                None => {
                    let u = step_unitary_k(&theta, k);
                    u * *r * u.dagger()
                }
            })
            .collect();
        fields.push(DensityField::new(grid, rho).map_err(|e| e.at_step(t))?);
    }
    Ok(record(schedule, TrajectoryFields::Mixed(fields), inst))
}

/// `ñ_z(k) = Tr(ρ_k n_k·σ)` relative to a reference Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupationField {
    pub grid: MomentumGrid,
    pub ntilde_z: Vec<f64>,
}

impl OccupationField {
    pub fn new(grid: MomentumGrid, ntilde_z: Vec<f64>) -> Result<Self> {
        if ntilde_z.len() != grid.size() {
            return Err(Error::GridMismatch(grid.size(), ntilde_z.len()));
        }
        if let Some((j, z)) = ntilde_z.iter().enumerate().find(|(_, z)| !z.is_finite() || z.abs() > 1.0 + 1e-10) {
            return Err(Error::invalid(format!("occupation {z} at node {j} outside [−1, 1]")));
        }
        Ok(OccupationField { grid, ntilde_z })
    }

    pub fn uniform(grid: MomentumGrid, z: f64) -> Result<Self> {
        OccupationField::new(grid, vec![z; grid.size()])
    }

    /// Upper-band population `(1 + ñ_z)/2` per node.
    pub fn excitation_profile(&self) -> Vec<f64> {
        self.ntilde_z.iter().map(|z| 0.5 * (1.0 + z)).collect()
    }

    /// Mean upper-band population.
    pub fn excitation_density(&self) -> f64 {
        self.excitation_profile().iter().sum::<f64>() / self.ntilde_z.len() as f64
    }
}

pub fn band_occupation(rho: &DensityField, h: &BlochField) -> Result<OccupationField> {
    let nz = crate::geometry::eigenbasis_z(rho, h)?;
    OccupationField::new(h.grid, nz)
}

/// `½[I + ñ_z n·σ]` per node.
pub fn dephased_reference(hf: &BlochField, occ: &OccupationField) -> Result<DensityField> {
    if hf.grid != occ.grid {
        return Err(Error::GridMismatch(hf.grid.size(), occ.grid.size()));
    }
    let rho = hf
        .points
        .iter()
        .zip(&occ.ntilde_z)
        .map(|(p, z)| {
            let z = z.clamp(-1.0, 1.0);
            (SpinMatrix::identity() + SpinMatrix::from_bloch(p.n).scale(z)).scale(0.5)
        })
        .collect();
    DensityField::new(hf.grid, rho)
}

/// Median over nodes of `‖[ρ_k, H(k)]‖` in operator norm.
pub fn commutator_norm_median(rho: &DensityField, h: &BlochField) -> Result<f64> {
    if rho.grid() != &h.grid {
        return Err(Error::GridMismatch(h.grid.size(), rho.grid().size()));
    }
    let mut norms: Vec<f64> = rho.matrices().iter().zip(&h.points).map(|(r, p)| r.commutator(&p.hamiltonian()).norm_op()).collect();
    Ok(median(&mut norms))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Result of fitting `e^{−2γt}` to the ensemble coherence decay.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaCalibration {
    pub gamma: f64,
    /// Mean eigenbasis coherence `2|⟨−|ρ|+⟩|` at `t = 1..=steps`.
    pub coherence: Vec<f64>,
    pub residual: f64,
}

/// Upper bound of the calibration search interval.
pub const GAMMA_MAX: f64 = 5.0;

struct DecayFit {
    coherence: Arc<Vec<f64>>,
}

impl CostFunction for DecayFit {
    type Param = f64;
    type Output = f64;

    fn cost(&self, gamma: &f64) -> std::result::Result<f64, argmin::core::Error> {
        Ok(decay_residual(&self.coherence, *gamma))
    }
}

fn decay_residual(c: &[f64], gamma: f64) -> f64 {
    c.iter().enumerate().map(|(i, c)| (c - (-2.0 * gamma * (i + 1) as f64).exp()).powi(2)).sum()
}

/// Calibrates `γ` against the disorder ensemble: evolves the equal
/// superposition of the two bands of the static `H(θ)` under the ensemble and
/// fits the decay of the mean coherence by least squares.
pub fn calibrate_gamma(theta: &ThetaPair, disorder: &DisorderConfig, grid: &MomentumGrid, steps: usize) -> Result<GammaCalibration> {
    disorder.validate()?;
    let h = bloch_field(theta, grid)?;
    let lower: Vec<Spinor> = h.lower_band();
    let upper: Vec<Spinor> = h.points.iter().map(|p| lower_eigenvector(p.n.map(|x| -x))).collect();
    let s = 0.5f64.sqrt();
    let init: Vec<Spinor> = lower.iter().zip(&upper).map(|(l, u)| [(l[0] + u[0]) * s, (l[1] + u[1]) * s]).collect();
    let init = StateField::new(*grid, init)?;
    let schedule = QuenchSchedule::new(*theta, *theta, steps)?;
    let runs = ensemble_spinors(&schedule, disorder, &init)?;
    let fields = average(&runs, *grid)?;
    let coherence: Vec<f64> = fields[1..]
        .iter()
        .map(|f| {
            f.matrices().iter().zip(lower.iter().zip(&upper)).map(|(r, (l, u))| 2.0 * inner(l, &r.apply(u)).norm()).sum::<f64>()
                / grid.size() as f64
        })
        .collect();
    let coherence = Arc::new(coherence);
    let solver = BrentOpt::new(0.0, GAMMA_MAX);
    let res = Executor::new(DecayFit { coherence: coherence.clone() }, solver)
        .configure(|s| s.param(0.5 * GAMMA_MAX).max_iters(200))
        .run()
        .map_err(|e| Error::invalid(format!("γ calibration failed: {e}")))?;
    let gamma = *res.state.best_param.as_ref().unwrap_or(&0.0);
    Ok(GammaCalibration { gamma, residual: decay_residual(&coherence, gamma), coherence: coherence.to_vec() })
}

/// Least-squares power law `y = a·x^b` in log-log space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub log_prefactor: f64,
    /// Two-sided 95 % Student-t interval on the exponent.
    pub exponent_ci95: (f64, f64),
    pub r_squared: f64,
}

pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerLawFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::invalid(format!("power-law fit needs ≥ 3 paired points, got {} and {}", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::invalid("power-law fit needs positive finite data"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let dof = n - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::invalid(format!("t distribution: {e}")))?.inverse_cdf(0.975);
    Ok(PowerLawFit {
        exponent: slope,
        log_prefactor: intercept,
        exponent_ci95: (slope - t * se, slope + t * se),
        r_squared: if syy > 0.0 { 1.0 - sse / syy } else { 1.0 },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingPoint {
    pub steps: usize,
    pub velocity: f64,
    pub excitation_density: f64,
    pub uhlmann_phase: f64,
    /// `|U⃗|` of the final holonomy.
    pub holonomy_angle: f64,
    /// `||U⃗| − |Φ_B(H_f)||`.
    pub holonomy_deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingResult {
    pub points: Vec<ScalingPoint>,
    /// Excitation density against velocity.
    pub fit: PowerLawFit,
}

impl ScalingResult {
    pub fn velocities(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.velocity).collect()
    }

    pub fn excitation_densities(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.excitation_density).collect()
    }
}

/// Runs the ensemble quench for each step count and fits the excitation
/// density against `υ = 1/N`.
pub fn scaling_study(
    base: &QuenchSchedule,
    step_counts: &[usize],
    disorder: &DisorderConfig,
    grid: &MomentumGrid,
) -> Result<ScalingResult> {
    if step_counts.len() < 3 {
        return Err(Error::invalid(format!("scaling needs ≥ 3 velocities, got {}", step_counts.len())));
    }
    let init = initial_ground_state(grid);
    let hf = bloch_field(&base.theta_f, grid)?;
    let berry_f = berry_phase(&StateField::lower_band(&hf))?.value.abs();
    let points = step_counts
        .iter()
        .map(|&n| {
            let schedule = base.with_steps(n)?;
            let rec = disorder_ensemble_quench(&schedule, disorder, &init)?;
            let rho = rec.final_density();
            let eps = band_occupation(&rho, &hf)?.excitation_density();
            let phase = uhlmann_phase(&rho);
            let angle = phase.holonomy_angle.unwrap_or(f64::NAN);
            Ok(ScalingPoint {
                steps: n,
                velocity: schedule.velocity(),
                excitation_density: eps,
                uhlmann_phase: phase.value,
                holonomy_angle: angle,
                holonomy_deviation: (angle - berry_f).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = points.iter().map(|p| p.velocity).collect();
    let y: Vec<f64> = points.iter().map(|p| p.excitation_density).collect();
    Ok(ScalingResult { fit: fit_power_law(&x, &y)?, points })
}

/// Momentum amplitudes `ψ(k_j) = Σ_x e^{−ik_j x} ψ_x`, not normalized per node.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumAmplitudes {
    pub grid: MomentumGrid,
    pub amps: Vec<Spinor>,
}

impl MomentumAmplitudes {
    /// Normalizes every node into a [`StateField`].
    pub fn into_state_field(self) -> Result<StateField> {
        StateField::normalized(self.grid, self.amps)
    }

    pub fn from_state_field(field: &StateField) -> Self {
        MomentumAmplitudes { grid: *field.grid(), amps: field.spinors().to_vec() }
    }
}

/// Spinor amplitudes on sites `x = −N..=N` (index `x + N`).
#[derive(Clone, Debug, PartialEq)]
pub struct RealSpaceState {
    pub half_width: usize,
    pub amps: Vec<Spinor>,
}

impl RealSpaceState {
    pub fn new(half_width: usize, amps: Vec<Spinor>) -> Result<Self> {
        if amps.len() != 2 * half_width + 1 {
            return Err(Error::invalid(format!("{} sites for half-width {half_width}", amps.len())));
        }
        Ok(RealSpaceState { half_width, amps })
    }

    /// `|x=0⟩ ⊗ v`.
    pub fn localized(half_width: usize, v: Spinor) -> Self {
        let mut amps = vec![[ZERO, ZERO]; 2 * half_width + 1];
        amps[half_width] = v;
        RealSpaceState { half_width, amps }
    }

    pub fn sites(&self) -> usize {
        self.amps.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|v| v[0].norm_sqr() + v[1].norm_sqr()).sum()
    }

    /// Flat vector in the basis `|H,x⟩, |V,x⟩` ordered by site then polarization.
    pub fn to_vector(&self) -> Vec<C64> {
        self.amps.iter().flat_map(|v| [v[0], v[1]]).collect()
    }
}

fn fft(grid: &MomentumGrid, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(grid.size())
    } else {
        planner.plan_fft_forward(grid.size())
    }
}

fn parity(x: i64) -> f64 {
    if x.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Discrete Fourier transform per spin component. Requires `M ≥ 2N+1` so the
/// transform is invertible.
pub fn real_to_momentum(psi: &RealSpaceState, grid: &MomentumGrid) -> Result<MomentumAmplitudes> {
    let norm = psi.norm_sqr();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(Error::invalid("real-space state has zero or non-finite norm"));
    }
    let m = grid.size();
    if m < psi.sites() {
        return Err(Error::invalid(format!("grid of {m} nodes cannot resolve {} sites", psi.sites())));
    }
    let n = psi.half_width as i64;
    let plan = fft(grid, false);
    let mut comps = [vec![ZERO; m], vec![ZERO; m]];
    for (i, v) in psi.amps.iter().enumerate() {
        let x = i as i64 - n;
        // e^{−ik_j x} = (−1)^x e^{−2πijx/M} for k_j = −π + 2πj/M.
        let idx = x.rem_euclid(m as i64) as usize;
        for s in 0..2 {
            comps[s][idx] = v[s] * parity(x);
        }
    }
    for c in comps.iter_mut() {
        plan.process(c);
    }
    let amps = (0..m).map(|j| [comps[0][j], comps[1][j]]).collect();
    Ok(MomentumAmplitudes { grid: *grid, amps })
}

/// Inverse of [`real_to_momentum`] onto sites `−N..=N`.
pub fn momentum_to_real(amps: &MomentumAmplitudes, half_width: usize) -> Result<RealSpaceState> {
    let m = amps.grid.size();
    if m < 2 * half_width + 1 {
        return Err(Error::invalid(format!("grid of {m} nodes cannot resolve {} sites", 2 * half_width + 1)));
    }
    if amps.amps.iter().all(|v| v[0].norm_sqr() + v[1].norm_sqr() == 0.0) {
        return Err(Error::invalid("momentum amplitudes vanish"));
    }
    let plan = fft(&amps.grid, true);
    let mut comps = [amps.amps.iter().map(|v| v[0]).collect::<Vec<_>>(), amps.amps.iter().map(|v| v[1]).collect::<Vec<_>>()];
    for c in comps.iter_mut() {
        plan.process(c);
    }
    let n = half_width as i64;
    let inv_m = 1.0 / m as f64;
    let out = (-n..=n)
        .map(|x| {
            let idx = x.rem_euclid(m as i64) as usize;
            let f = parity(x) * inv_m;
            [comps[0][idx] * f, comps[1][idx] * f]
        })
        .collect();
    RealSpaceState::new(half_width, out)
}

/// Real-space walker states after the full schedule, one per disorder
/// realization, on sites `−N..=N` with `N` the schedule length.
pub fn final_real_space_ensemble(schedule: &QuenchSchedule, disorder: &DisorderConfig) -> Result<Vec<RealSpaceState>> {
    let n = schedule.steps();
    // The walker spreads at most one site per step; any grid with ≥ 2N+1 nodes
    // represents it exactly.
    let grid = MomentumGrid::new((2 * n + 1).max(MomentumGrid::MIN_SIZE))?;
    let init = initial_ground_state(&grid);
    let runs = ensemble_spinors(schedule, disorder, &init)?;
    runs.iter()
        .map(|run| {
            let amps = MomentumAmplitudes { grid, amps: run[n].clone() };
            momentum_to_real(&amps, n)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::purity;

    fn grid(m: usize) -> MomentumGrid {
        MomentumGrid::new(m).unwrap()
    }

    fn default_schedule(n: usize) -> QuenchSchedule {
        QuenchSchedule::new(ThetaPair::flat_band(), ThetaPair::new(PI / 2.0, 0.0).unwrap(), n).unwrap()
    }

    #[test]
    fn schedule_endpoints_are_exact() {
        let s = default_schedule(13);
        assert_eq!(s.theta_at(0).unwrap(), ThetaPair::flat_band());
        assert_eq!(s.theta_at(13).unwrap(), s.theta_f);
        assert!((s.velocity() * 13.0 - 1.0).abs() < 1e-15);
        assert!(s.theta_at(14).is_err());
        assert!(QuenchSchedule::new(s.theta_i, s.theta_f, 0).is_err());
    }

    #[test]
    fn uniform_offsets() {
        let d = DisorderConfig::uniform(0.2, 21).unwrap();
        let o = d.offsets();
        assert_eq!(o.len(), 21);
        assert!((o[0] + 0.2).abs() < 1e-15 && (o[20] - 0.2).abs() < 1e-15 && o[10].abs() < 1e-15);
        assert_eq!(DisorderConfig::uniform(0.2, 1).unwrap().offsets(), vec![0.0]);
        assert!(DisorderConfig::uniform(-0.1, 3).is_err());
        assert!(DisorderConfig::uniform(0.1, 0).is_err());
        assert!(DisorderConfig::uniform(0.1, 3).unwrap().with_resampling().is_err());
    }

    #[test]
    fn random_offsets_extend_with_realization_count() {
        let a = DisorderConfig::new(0.2, 5, Sampling::Random, 7).unwrap().offsets();
        let b = DisorderConfig::new(0.2, 9, Sampling::Random, 7).unwrap().offsets();
        assert_eq!(a[..], b[..5]);
        assert!(b.iter().all(|x| x.abs() <= 0.2));
        let c = DisorderConfig::new(0.2, 5, Sampling::Random, 8).unwrap().offsets();
        assert_ne!(a, c);
    }

    #[test]
    fn initial_state_is_flat_band_ground_state() {
        let g = grid(64);
        let init = initial_ground_state(&g);
        let h = SpinMatrix::from_bloch([0.0, 1.0, 0.0]);
        for v in init.spinors() {
            assert!((inner(v, &h.apply(v)).re + 1.0).abs() < 1e-15);
        }
        assert_eq!(berry_phase(&init).unwrap().value, 0.0);
    }

    #[test]
    fn zero_disorder_is_bitwise_unitary() {
        let g = grid(64);
        let s = default_schedule(13);
        let init = initial_ground_state(&g);
        let u = unitary_quench(&s, &init).unwrap();
        let e = disorder_ensemble_quench(&s, &DisorderConfig::uniform(0.0, 21).unwrap(), &init).unwrap();
        assert_eq!(u.densities(), e.densities());
    }

    #[test]
    fn zero_gamma_matches_unitary() {
        let g = grid(64);
        let s = default_schedule(13);
        let init = initial_ground_state(&g);
        let u = unitary_quench(&s, &init).unwrap();
        let l = lindblad_quench(&s, &NoiseConfig::new(0.0).unwrap(), &init).unwrap();
        for (a, b) in u.densities().iter().zip(l.densities()) {
            for (x, y) in a.matrices().iter().zip(b.matrices()) {
                assert!(x.max_abs_diff(y) < 1e-10);
            }
        }
    }

    #[test]
    fn critical_step_of_default_schedule() {
        let s = default_schedule(13);
        let rec = unitary_quench(&s, &initial_ground_state(&grid(256))).unwrap();
        assert_eq!(rec.critical_step, Some(9));
        assert!(rec.hamiltonian_berry[0].unwrap().abs() < 1e-9);
        assert!((rec.hamiltonian_berry[13].unwrap().abs() - PI).abs() < 1e-9);
    }

    #[test]
    fn strong_dephasing_diagonalizes_static_hamiltonian() {
        let g = grid(32);
        let theta = ThetaPair::new(1.1, 0.4).unwrap();
        let h = bloch_field(&theta, &g).unwrap();
        let s = QuenchSchedule::new(theta, theta, 4).unwrap();
        let init = initial_ground_state(&g);
        let z0 = band_occupation(&init.to_density(), &h).unwrap();
        let rec = lindblad_quench(&s, &NoiseConfig::new(20.0).unwrap(), &init).unwrap();
        let rho = rec.final_density();
        let z1 = band_occupation(&rho, &h).unwrap();
        for (a, b) in z0.ntilde_z.iter().zip(&z1.ntilde_z) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(commutator_norm_median(&rho, &h).unwrap() < 1e-10);
    }

    #[test]
    fn dephased_reference_limits() {
        let g = grid(32);
        let h = bloch_field(&ThetaPair::new(1.1, 0.4).unwrap(), &g).unwrap();
        let mixed = dephased_reference(&h, &OccupationField::uniform(g, 0.0).unwrap()).unwrap();
        assert!(mixed.matrices().iter().all(|r| r.max_abs_diff(&SpinMatrix::identity().scale(0.5)) < 1e-15));
        let pure = dephased_reference(&h, &OccupationField::uniform(g, -1.0).unwrap()).unwrap();
        let band = crate::geometry::lower_band_density(&h);
        for (a, b) in pure.matrices().iter().zip(band.matrices()) {
            assert!(a.max_abs_diff(b) < 1e-14);
        }
        assert!(OccupationField::uniform(g, 1.5).is_err());
    }

    #[test]
    fn ensemble_purity_is_bounded_and_traces_exact() {
        let g = grid(64);
        let s = default_schedule(13);
        let rec = disorder_ensemble_quench(&s, &DisorderConfig::uniform(0.2, 21).unwrap(), &initial_ground_state(&g)).unwrap();
        for f in rec.densities() {
            for r in f.matrices() {
                assert!(purity(r) <= 1.0 + 1e-12);
                assert!((r.trace().re - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fourier_round_trip_and_parseval() {
        let v = [C64::new(0.5f64.sqrt(), 0.0), C64::new(0.0, -(0.5f64.sqrt()))];
        let psi = RealSpaceState::localized(3, v);
        let amps = real_to_momentum(&psi, &grid(16)).unwrap();
        assert!(amps.amps.iter().all(|a| (a[0] - v[0]).norm() < 1e-15 && (a[1] - v[1]).norm() < 1e-15));

        let amps_vec: Vec<Spinor> = (0..7).map(|i| [C64::new(i as f64 * 0.1, -0.2), C64::new(0.3, 0.05 * i as f64)]).collect();
        let psi = RealSpaceState::new(3, amps_vec).unwrap();
        let g = grid(9);
        let k = real_to_momentum(&psi, &g).unwrap();
        let mean: f64 = k.amps.iter().map(|a| a[0].norm_sqr() + a[1].norm_sqr()).sum::<f64>() / 9.0;
        assert!((mean - psi.norm_sqr()).abs() < 1e-12);
        let back = momentum_to_real(&k, 3).unwrap();
        for (a, b) in back.amps.iter().zip(&psi.amps) {
            assert!((a[0] - b[0]).norm() < 1e-12 && (a[1] - b[1]).norm() < 1e-12);
        }
        assert!(real_to_momentum(&RealSpaceState::localized(3, [ZERO, ZERO]), &g).is_err());
        let wide = RealSpaceState::localized(5, v);
        assert!(real_to_momentum(&wide, &grid(8)).is_err());
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let x = [0.1, 0.2, 0.4, 0.8];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.5)).collect();
        let f = fit_power_law(&x, &y).unwrap();
        assert!((f.exponent - 0.5).abs() < 1e-12);
        assert!((f.log_prefactor - 3.0f64.ln()).abs() < 1e-12);
        assert!(fit_power_law(&x[..2], &y[..2]).is_err());
    }
}
