//! Geometric phases of momentum-space state and density fields.
//!
//! Pure-state fields carry a Berry phase, density fields an Uhlmann phase. The
//! Uhlmann holonomy is computed from the commutator connection `[∂ρ, ρ]` and
//! cross-checked by a discrete polar-decomposition holonomy.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::spin::{inner, spinor_norm, SpinMatrix, Spinor};
use crate::walk::{lower_eigenvector, vector_symmetry_deviations, BlochField, MomentumGrid};

/// Reduces an angle to `(−π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Normalized spinor per momentum node.
#[derive(Clone, Debug, PartialEq)]
pub struct StateField {
    grid: MomentumGrid,
    psi: Vec<Spinor>,
}

pub const NORM_TOL: f64 = 1e-10;

impl StateField {
    pub fn new(grid: MomentumGrid, psi: Vec<Spinor>) -> Result<Self> {
        if psi.len() != grid.size() {
            return Err(Error::GridMismatch(grid.size(), psi.len()));
        }
        for (j, v) in psi.iter().enumerate() {
            let n = spinor_norm(v);
            if !n.is_finite() || (n - 1.0).abs() > NORM_TOL {
                return Err(Error::invalid(format!("spinor at node {j} has norm {n}")));
            }
        }
        Ok(StateField { grid, psi })
    }

    /// Normalizes every node; fails on zero or non-finite spinors.
    pub fn normalized(grid: MomentumGrid, psi: Vec<Spinor>) -> Result<Self> {
        let psi = psi
            .into_iter()
            .enumerate()
            .map(|(j, v)| {
                let n = spinor_norm(&v);
                if n.is_finite() && n > 0.0 {
                    Ok([v[0] / n, v[1] / n])
                } else {
                    Err(Error::invalid(format!("cannot normalize spinor at node {j}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        StateField::new(grid, psi)
    }

    /// Lower-band eigenvectors of a Bloch field.
    pub fn lower_band(field: &BlochField) -> Self {
        StateField { grid: field.grid, psi: field.lower_band() }
    }

    pub fn grid(&self) -> &MomentumGrid {
        &self.grid
    }

    pub fn spinors(&self) -> &[Spinor] {
        &self.psi
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn to_density(&self) -> DensityField {
        DensityField { grid: self.grid, rho: self.psi.iter().map(SpinMatrix::outer).collect() }
    }
}

/// 2×2 density matrix per momentum node.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    grid: MomentumGrid,
    rho: Vec<SpinMatrix>,
}

pub const DENSITY_TOL: f64 = 1e-10;

impl DensityField {
    pub fn new(grid: MomentumGrid, rho: Vec<SpinMatrix>) -> Result<Self> {
        if rho.len() != grid.size() {
            return Err(Error::GridMismatch(grid.size(), rho.len()));
        }
        for (j, r) in rho.iter().enumerate() {
            validate_density(r).map_err(|e| Error::invalid(format!("node {j}: {e}")))?;
        }
        Ok(DensityField { grid, rho })
    }

    /// Constant field.
    pub fn uniform(grid: MomentumGrid, rho: SpinMatrix) -> Result<Self> {
        DensityField::new(grid, vec![rho; grid.size()])
    }

    pub fn maximally_mixed(grid: MomentumGrid) -> Self {
        DensityField { grid, rho: vec![SpinMatrix::identity().scale(0.5); grid.size()] }
    }

    /// `(1−ε)ρ + ε I/2` at every node.
    pub fn depolarized(&self, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::invalid(format!("mixing weight {eps} outside [0, 1]")));
        }
        let half = SpinMatrix::identity().scale(0.5 * eps);
        Ok(DensityField { grid: self.grid, rho: self.rho.iter().map(|r| r.scale(1.0 - eps) + half).collect() })
    }

    /// Field whose node `j` holds node `(j + shift) mod M` of `self`, moving the
    /// base point of holonomies.
    pub fn rotated(&self, shift: usize) -> Self {
        let m = self.rho.len();
        DensityField { grid: self.grid, rho: (0..m).map(|j| self.rho[(j + shift) % m]).collect() }
    }

    pub fn grid(&self) -> &MomentumGrid {
        &self.grid
    }

    pub fn matrices(&self) -> &[SpinMatrix] {
        &self.rho
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn bloch_vectors(&self) -> Vec<[f64; 3]> {
        self.rho.iter().map(SpinMatrix::bloch_vector).collect()
    }

    /// Mean of `Tr ρ_k²` over the grid.
    pub fn mean_purity(&self) -> f64 {
        self.rho.iter().map(purity).sum::<f64>() / self.rho.len() as f64
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.rho.iter().map(|r| r.eigvals_hermitian()[0]).fold(f64::INFINITY, f64::min)
    }
}

pub fn purity(rho: &SpinMatrix) -> f64 {
    (*rho * *rho).trace().re
}

fn validate_density(r: &SpinMatrix) -> std::result::Result<(), String> {
    let herm = r.hermiticity_defect();
    if !herm.is_finite() || herm > DENSITY_TOL {
        return Err(format!("not Hermitian (defect {herm:.3e})"));
    }
    let tr = r.trace();
    if (tr.re - 1.0).abs() > DENSITY_TOL || tr.im.abs() > DENSITY_TOL {
        return Err(format!("trace {tr} differs from 1"));
    }
    let lo = r.eigvals_hermitian()[0];
    if lo < -DENSITY_TOL {
        return Err(format!("negative eigenvalue {lo:.3e}"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PhaseMethod {
    /// Gauge-invariant product of normalized overlaps.
    Fukui,
    /// Riemann sum of the Berry connection in a smooth gauge.
    Riemann,
    /// Ordered product of `exp(A_j Δk)` for the commutator connection.
    PathOrdered,
    /// Discrete holonomy from polar decompositions of `√ρ_{j+1}√ρ_j`.
    Polar,
}

/// A phase value with method and holonomy diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricPhase {
    /// In `(−π, π]`.
    pub value: f64,
    pub method: PhaseMethod,
    /// `|Tr(ρ₀ V)|`; absent for Berry phases.
    pub trace_magnitude: Option<f64>,
    /// `|U⃗| = arccos(½ Re Tr V)` for holonomies `V ∈ SU(2)`.
    pub holonomy_angle: Option<f64>,
    /// Whether the input was depolarized before evaluation.
    pub regularized: bool,
}

/// Classification tolerance for quantized phases.
pub const QUANTIZATION_TOL: f64 = 0.05 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuantizedPhase {
    Zero,
    Pi,
}

impl GeometricPhase {
    fn plain(value: f64, method: PhaseMethod) -> Self {
        GeometricPhase { value: wrap_phase(value), method, trace_magnitude: None, holonomy_angle: None, regularized: false }
    }

    /// Value in units of π.
    pub fn in_pi(&self) -> f64 {
        self.value / PI
    }

    pub fn distance_to_zero(&self) -> f64 {
        self.value.abs()
    }

    pub fn distance_to_pi(&self) -> f64 {
        PI - self.value.abs()
    }

    pub fn quantized_with(&self, tol: f64) -> Option<QuantizedPhase> {
        if self.distance_to_zero() < tol {
            Some(QuantizedPhase::Zero)
        } else if self.distance_to_pi() < tol {
            Some(QuantizedPhase::Pi)
        } else {
            None
        }
    }

    pub fn quantized(&self) -> Option<QuantizedPhase> {
        self.quantized_with(QUANTIZATION_TOL)
    }
}

/// Minimum overlap magnitude between neighbouring nodes.
pub const MIN_OVERLAP: f64 = 1e-12;

/// `Φ = −Σ_j arg⟨ψ_j|ψ_{j+1}⟩` with periodic closure.
pub fn berry_phase(field: &StateField) -> Result<GeometricPhase> {
    let psi = field.spinors();
    let m = psi.len();
    let mut total = 0.0;
    for j in 0..m {
        let next = (j + 1) % m;
        let ov = inner(&psi[j], &psi[next]);
        let mag = ov.norm();
        if mag < MIN_OVERLAP {
            return Err(Error::GridTooCoarse { node: j, next, overlap: mag });
        }
        total -= ov.arg();
    }
    Ok(GeometricPhase::plain(total, PhaseMethod::Fukui))
}

/// Signed winding of `(n_y, n_z)`, with the angle measured from `+z` towards `+y`.
pub fn winding_number(field: &BlochField) -> Result<i64> {
    let mut prev: Option<f64> = None;
    let mut first = 0.0;
    let mut total = 0.0;
    for (j, p) in field.points.iter().enumerate() {
        if p.n[0].abs() > 1e-9 {
            return Err(Error::invalid(format!("Bloch vector leaves the chiral plane at node {j} (n_x = {})", p.n[0])));
        }
        let r = p.n[1].hypot(p.n[2]);
        if r < 1e-9 {
            return Err(Error::GapClosure { k: field.grid.k(j), energy: p.energy });
        }
        let angle = p.n[1].atan2(p.n[2]);
        match prev {
            None => first = angle,
            Some(a) => total += wrap_phase(angle - a),
        }
        prev = Some(angle);
    }
    if let Some(a) = prev {
        total += wrap_phase(first - a);
    }
    Ok((total / (2.0 * PI)).round() as i64)
}

/// `A_j = [∂_k ρ, ρ]` at every node.
#[derive(Clone, Debug, PartialEq)]
pub struct UhlmannConnectionField {
    pub grid: MomentumGrid,
    pub a: Vec<SpinMatrix>,
}

impl UhlmannConnectionField {
    pub fn max_anti_hermiticity_defect(&self) -> f64 {
        self.a.iter().map(|a| (a.dagger() + *a).max_abs_diff(&SpinMatrix::zero())).fold(0.0, f64::max)
    }
}

/// Central-difference commutator connection with periodic wrap.
pub fn uhlmann_connection(field: &DensityField) -> UhlmannConnectionField {
    let rho = field.matrices();
    let m = rho.len();
    let inv = 1.0 / (2.0 * field.grid().spacing());
    let a = (0..m)
        .map(|j| {
            let d = (rho[(j + 1) % m] - rho[(j + m - 1) % m]).scale(inv);
            d.commutator(&rho[j])
        })
        .collect();
    UhlmannConnectionField { grid: *field.grid(), a }
}

/// Order of the holonomy product relative to the base point `k₀ = −π`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum PathOrdering {
    /// `V = exp(A_{M−1}Δk) ⋯ exp(A_0Δk)`: the base-point factor acts first.
    #[default]
    BasePointFirst,
    /// `V = exp(A_0Δk) ⋯ exp(A_{M−1}Δk)`.
    BasePointLast,
}

pub fn uhlmann_phase(field: &DensityField) -> GeometricPhase {
    uhlmann_phase_ordered(field, PathOrdering::default())
}

pub fn uhlmann_phase_ordered(field: &DensityField, ordering: PathOrdering) -> GeometricPhase {
    let conn = uhlmann_connection(field);
    let dk = field.grid().spacing();
    let factors = conn.a.iter().map(|a| a.scale(dk).expm());
    let v = ordered_product(factors, ordering);
    holonomy_phase(field, &v, PhaseMethod::PathOrdered, false)
}

fn ordered_product(factors: impl Iterator<Item = SpinMatrix>, ordering: PathOrdering) -> SpinMatrix {
    factors.fold(SpinMatrix::identity(), |acc, f| match ordering {
        PathOrdering::BasePointFirst => f * acc,
        PathOrdering::BasePointLast => acc * f,
    })
}

fn holonomy_phase(field: &DensityField, v: &SpinMatrix, method: PhaseMethod, regularized: bool) -> GeometricPhase {
    let tr = (field.matrices()[0] * *v).trace();
    // V is in SU(2) up to rounding, so ½ Re Tr V = cos |U⃗|.
    let angle = (0.5 * v.trace().re).clamp(-1.0, 1.0).acos();
    GeometricPhase { value: wrap_phase(tr.arg()), method, trace_magnitude: Some(tr.norm()), holonomy_angle: Some(angle), regularized }
}

/// Minimum eigenvalue accepted by the polar oracle.
pub const POLAR_MIN_EIGENVALUE: f64 = 1e-8;
/// Depolarizing weight used to regularize rank-deficient fields.
pub const POLAR_REGULARIZATION: f64 = 1e-6;

/// Polar-decomposition holonomy `V = W_{M−1} ⋯ W_0` with
/// `√ρ_{j+1}√ρ_j = P_j W_j`.
pub fn uhlmann_phase_polar_oracle(field: &DensityField) -> Result<GeometricPhase> {
    polar_holonomy(field, false)
}

/// Polar oracle after `ρ → (1−ε)ρ + εI/2` with `ε = 1e−6`, applied only when
/// some node is rank deficient.
pub fn uhlmann_phase_polar_oracle_regularized(field: &DensityField) -> Result<GeometricPhase> {
    if field.min_eigenvalue() > POLAR_MIN_EIGENVALUE {
        return polar_holonomy(field, false);
    }
    polar_holonomy(&field.depolarized(POLAR_REGULARIZATION)?, true)
}

fn polar_holonomy(field: &DensityField, regularized: bool) -> Result<GeometricPhase> {
    let rho = field.matrices();
    let m = rho.len();
    let mut roots = Vec::with_capacity(m);
    for (node, r) in rho.iter().enumerate() {
        let lo = r.eigvals_hermitian()[0];
        if lo <= POLAR_MIN_EIGENVALUE {
            return Err(Error::RankDeficient { node, min_eigenvalue: lo });
        }
        roots.push(r.sqrt_psd());
    }
    let mut v = SpinMatrix::identity();
    for j in 0..m {
        let next = (j + 1) % m;
        let w = (roots[next] * roots[j]).polar_unitary().ok_or(Error::RankDeficient { node: j, min_eigenvalue: 0.0 })?;
        v = w * v;
    }
    Ok(holonomy_phase(field, &v, PhaseMethod::Polar, regularized))
}

/// Symmetry deviations of the Bloch vectors `m_k` of a density field, under the
/// same representations as [`crate::walk::SymmetryReport`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensitySymmetry {
    pub chiral: f64,
    pub phs: f64,
    pub trs: f64,
}

pub fn density_symmetry(field: &DensityField) -> DensitySymmetry {
    let (chiral, phs, trs) = vector_symmetry_deviations(field.grid(), &field.bloch_vectors());
    DensitySymmetry { chiral, phs, trs }
}

/// Lower-band projector field of a Bloch field.
pub fn lower_band_density(field: &BlochField) -> DensityField {
    DensityField { grid: field.grid, rho: field.points.iter().map(|p| SpinMatrix::outer(&lower_eigenvector(p.n))).collect() }
}

/// One entry of a phase time series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePoint {
    pub step: usize,
    pub phase: GeometricPhase,
    pub mean_purity: f64,
    /// Upper-band population relative to the instantaneous Hamiltonian, when
    /// one is supplied and gapped.
    pub excitation: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhaseSeries {
    pub points: Vec<PhasePoint>,
}

impl PhaseSeries {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.phase.value).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Borrowed trajectory of pure or mixed fields.
#[derive(Clone, Copy, Debug)]
pub enum FieldSeries<'a> {
    States(&'a [StateField]),
    Densities(&'a [DensityField]),
}

/// Per-step Berry (pure) or Uhlmann (mixed) phases. `hamiltonians[t]`, when
/// given, is the instantaneous Bloch field used for the excitation diagnostic.
pub fn phase_series(series: FieldSeries<'_>, hamiltonians: Option<&[Option<BlochField>]>) -> Result<PhaseSeries> {
    let len = match series {
        FieldSeries::States(s) => s.len(),
        FieldSeries::Densities(d) => d.len(),
    };
    if let Some(h) = hamiltonians {
        if h.len() != len {
            return Err(Error::invalid(format!("{} Hamiltonians for {len} fields", h.len())));
        }
    }
    let grid = match series {
        FieldSeries::States(s) => s.first().map(|f| *f.grid()),
        FieldSeries::Densities(d) => d.first().map(|f| *f.grid()),
    };
    let mut points = Vec::with_capacity(len);
    for step in 0..len {
        let (phase, density) = match series {
            FieldSeries::States(s) => {
                check_grid(grid, s[step].grid(), step)?;
                let phase = berry_phase(&s[step]).map_err(|e| e.at_step(step))?;
                (phase, s[step].to_density())
            }
            FieldSeries::Densities(d) => {
                check_grid(grid, d[step].grid(), step)?;
                (uhlmann_phase(&d[step]), d[step].clone())
            }
        };
        let excitation = hamiltonians
            .and_then(|h| h[step].as_ref())
            .map(|h| excitation_density(&density, h))
            .transpose()
            .map_err(|e| e.at_step(step))?;
        points.push(PhasePoint { step, phase, mean_purity: density.mean_purity(), excitation });
    }
    Ok(PhaseSeries { points })
}

fn check_grid(expected: Option<MomentumGrid>, got: &MomentumGrid, step: usize) -> Result<()> {
    match expected {
        Some(g) if g != *got => Err(Error::GridMismatch(g.size(), got.size()).at_step(step)),
        _ => Ok(()),
    }
}

/// `ñ_z(k) = Tr(ρ_k n_k·σ)`.
pub fn eigenbasis_z(rho: &DensityField, h: &BlochField) -> Result<Vec<f64>> {
    if rho.grid() != &h.grid {
        return Err(Error::GridMismatch(h.grid.size(), rho.grid().size()));
    }
    Ok(rho.matrices().iter().zip(&h.points).map(|(r, p)| (*r * SpinMatrix::from_bloch(p.n)).trace().re).collect())
}

/// Mean upper-band population `(1 + ñ_z)/2`.
pub fn excitation_density(rho: &DensityField, h: &BlochField) -> Result<f64> {
    let nz = eigenbasis_z(rho, h)?;
    Ok(nz.iter().map(|z| 0.5 * (1.0 + z)).sum::<f64>() / nz.len() as f64)
}
