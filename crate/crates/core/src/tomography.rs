//! Simulated time-bin projection measurements and likelihood-based state
//! reconstruction.
//!
//! The walker occupies sites `x = −N..=N` with polarization `H` or `V`; basis
//! vectors are ordered `|H,−N⟩, |V,−N⟩, |H,−N+1⟩, …` (index `2(x+N) + s`).
//! Family `i` groups the interference projectors `(|H,x⟩ + c|V,x+i⟩)/√2`,
//! `c ∈ {1, −1, i, −i}`, with the computational projectors needed to make it a
//! complete measurement: every family satisfies `Σ_m w_m |m⟩⟨m| = I`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use argmin::core::observers::{Observe, ObserverMode};
use argmin::core::{CostFunction, Executor, Gradient, IterState, State, TerminationReason, KV};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::dynamics::{real_to_momentum, RealSpaceState};
use crate::error::{Error, Result};
use crate::geometry::{berry_phase, uhlmann_phase, DensityField, GeometricPhase, StateField};
use crate::spin::{SpinMatrix, ZERO};
use crate::walk::MomentumGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhaseTag {
    H,
    V,
    Plus,
    Minus,
    PlusI,
    MinusI,
}

impl PhaseTag {
    pub const INTERFERENCE: [PhaseTag; 4] = [PhaseTag::Plus, PhaseTag::Minus, PhaseTag::PlusI, PhaseTag::MinusI];

    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseTag::H => "H",
            PhaseTag::V => "V",
            PhaseTag::Plus => "plus",
            PhaseTag::Minus => "minus",
            PhaseTag::PlusI => "plus_i",
            PhaseTag::MinusI => "minus_i",
        }
    }

    pub fn is_interference(&self) -> bool {
        !matches!(self, PhaseTag::H | PhaseTag::V)
    }

    /// Relative amplitude of `|V,x′⟩`.
    fn coefficient(&self) -> C64 {
        match self {
            PhaseTag::Plus => C64::new(1.0, 0.0),
            PhaseTag::Minus => C64::new(-1.0, 0.0),
            PhaseTag::PlusI => C64::new(0.0, 1.0),
            PhaseTag::MinusI => C64::new(0.0, -1.0),
            PhaseTag::H | PhaseTag::V => ZERO,
        }
    }
}

impl FromStr for PhaseTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "H" => PhaseTag::H,
            "V" => PhaseTag::V,
            "plus" => PhaseTag::Plus,
            "minus" => PhaseTag::Minus,
            "plus_i" => PhaseTag::PlusI,
            "minus_i" => PhaseTag::MinusI,
            other => return Err(Error::invalid(format!("unknown phase tag {other:?}"))),
        })
    }
}

/// One projector. For `H`/`V` tags `x_prime == x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Projector {
    pub x: i64,
    pub x_prime: i64,
    pub tag: PhaseTag,
}

fn basis_index(half_width: usize, pol: usize, x: i64) -> usize {
    2 * (x + half_width as i64) as usize + pol
}

impl Projector {
    /// Non-zero entries of the normalized projector vector.
    pub fn support(&self, half_width: usize) -> Result<Vec<(usize, C64)>> {
        let n = half_width as i64;
        let in_range = |x: i64| (-n..=n).contains(&x);
        if !in_range(self.x) || !in_range(self.x_prime) {
            return Err(Error::invalid(format!("projector {self:?} outside sites ±{n}")));
        }
        match self.tag {
            PhaseTag::H | PhaseTag::V if self.x_prime != self.x => {
                Err(Error::invalid(format!("computational projector {self:?} needs x_prime = x")))
            }
            PhaseTag::H => Ok(vec![(basis_index(half_width, 0, self.x), C64::new(1.0, 0.0))]),
            PhaseTag::V => Ok(vec![(basis_index(half_width, 1, self.x), C64::new(1.0, 0.0))]),
            tag => Ok(vec![
                (basis_index(half_width, 0, self.x), C64::new(FRAC_1_SQRT_2, 0.0)),
                (basis_index(half_width, 1, self.x_prime), tag.coefficient() * FRAC_1_SQRT_2),
            ]),
        }
    }
}

/// Projectors co-measured at one delay `x′ − x = family`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSetting {
    pub family: i64,
    pub half_width: usize,
    pub projectors: Vec<Projector>,
}

impl ProjectionSetting {
    /// POVM weight of a projector within this family.
    pub fn weight(&self, p: &Projector) -> f64 {
        weight(self.family, p.tag)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.projectors {
            p.support(self.half_width)?;
            if p.tag.is_interference() && p.x_prime - p.x != self.family {
                return Err(Error::invalid(format!("projector {p:?} has delay ≠ {}", self.family)));
            }
        }
        Ok(())
    }
}

fn weight(family: i64, tag: PhaseTag) -> f64 {
    match (family, tag.is_interference()) {
        (0, _) => 1.0 / 3.0,
        (_, true) => 0.5,
        (_, false) => 1.0,
    }
}

/// The `2N+1` projection families for a walk of `N` steps.
pub fn projection_settings(n: usize) -> Result<Vec<ProjectionSetting>> {
    if n == 0 {
        return Err(Error::invalid("projection settings need N ≥ 1"));
    }
    let w = n as i64;
    let in_range = |x: i64| (-w..=w).contains(&x);
    Ok((-w..=w)
        .map(|i| {
            let mut projectors = Vec::new();
            for x in -w..=w {
                if in_range(x + i) {
                    for tag in PhaseTag::INTERFERENCE {
                        projectors.push(Projector { x, x_prime: x + i, tag });
                    }
                }
            }
            for x in -w..=w {
                // Delay 0 measures every site; otherwise only the unpaired edges.
                if i == 0 || !in_range(x + i) {
                    projectors.push(Projector { x, x_prime: x, tag: PhaseTag::H });
                }
                if i == 0 || !in_range(x - i) {
                    projectors.push(Projector { x, x_prime: x, tag: PhaseTag::V });
                }
            }
            ProjectionSetting { family: i, half_width: n, projectors }
        })
        .collect())
}

/// Hilbert-space dimension `2(2N+1)`.
pub fn dimension(half_width: usize) -> usize {
    2 * (2 * half_width + 1)
}

fn half_width_of(rho: &DMatrix<C64>) -> Result<usize> {
    let d = rho.nrows();
    if rho.ncols() != d || d < 6 || !d.is_multiple_of(2) || (d / 2) % 2 != 1 {
        return Err(Error::invalid(format!("{}×{} is not a walker density matrix", d, rho.ncols())));
    }
    Ok((d / 2 - 1) / 2)
}

pub fn density_from_pure(psi: &RealSpaceState) -> Result<DMatrix<C64>> {
    density_from_ensemble(std::slice::from_ref(psi))
}

/// Equal-weight mixture of normalized real-space states.
pub fn density_from_ensemble(states: &[RealSpaceState]) -> Result<DMatrix<C64>> {
    let first = states.first().ok_or_else(|| Error::invalid("empty ensemble"))?;
    let d = 2 * first.sites();
    let mut rho = DMatrix::<C64>::zeros(d, d);
    for s in states {
        if s.sites() != first.sites() {
            return Err(Error::invalid("ensemble members differ in size"));
        }
        let norm = s.norm_sqr();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::invalid("ensemble member has zero norm"));
        }
        let v = nalgebra::DVector::from_vec(s.to_vector()) / C64::new(norm.sqrt(), 0.0);
        rho += &v * v.adjoint();
    }
    Ok(rho / C64::new(states.len() as f64, 0.0))
}

pub fn maximally_mixed(half_width: usize) -> DMatrix<C64> {
    let d = dimension(half_width);
    DMatrix::<C64>::identity(d, d) / C64::new(d as f64, 0.0)
}

/// Overlaps and measured probabilities of one family.
#[derive(Clone, Debug, PartialEq)]
pub struct BornProbabilities {
    /// `⟨m|ρ|m⟩` per projector.
    pub overlaps: Vec<f64>,
    /// `w_m⟨m|ρ|m⟩`; sums to one over a complete family.
    pub probabilities: Vec<f64>,
}

fn overlap(rho: &DMatrix<C64>, support: &[(usize, C64)]) -> f64 {
    let mut acc = ZERO;
    for &(i, a) in support {
        for &(j, b) in support {
            acc += a.conj() * rho[(i, j)] * b;
        }
    }
    acc.re.max(0.0)
}

pub fn born_probabilities(rho: &DMatrix<C64>, setting: &ProjectionSetting) -> Result<BornProbabilities> {
    if half_width_of(rho)? != setting.half_width {
        return Err(Error::invalid("state and setting disagree on the number of sites"));
    }
    setting.validate()?;
    let mut overlaps = Vec::with_capacity(setting.projectors.len());
    let mut probabilities = Vec::with_capacity(setting.projectors.len());
    for p in &setting.projectors {
        let o = overlap(rho, &p.support(setting.half_width)?);
        overlaps.push(o);
        probabilities.push(setting.weight(p) * o);
    }
    Ok(BornProbabilities { overlaps, probabilities })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum CountModel {
    /// One multinomial draw of `shots` outcomes per family.
    #[default]
    Multinomial,
    /// Independent `Binomial(shots, p_m)` per projector; family totals may
    /// differ from `shots`.
    Binomial,
    /// Independent `Poisson(shots · p_m)` per projector, as for heralded counts.
    Poisson,
}

impl CountModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            CountModel::Multinomial => "multinomial",
            CountModel::Binomial => "binomial",
            CountModel::Poisson => "poisson",
        }
    }
}

impl FromStr for CountModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(CountModel::Multinomial),
            "binomial" => Ok(CountModel::Binomial),
            "poisson" => Ok(CountModel::Poisson),
            other => Err(Error::invalid(format!("unknown count model {other:?}"))),
        }
    }
}

/// Photon counts per projector for every family.
#[derive(Clone, Debug, PartialEq)]
pub struct CountDataset {
    pub settings: Vec<ProjectionSetting>,
    pub counts: Vec<Vec<u64>>,
    /// Shots per family.
    pub shots: Vec<u64>,
    pub seed: Option<u64>,
    pub model: CountModel,
}

pub const CSV_HEADER: [&str; 6] = ["family_id", "x", "x_prime", "phase_tag", "counts", "shots"];

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("count table: {e}"))
}

impl CountDataset {
    pub fn half_width(&self) -> usize {
        self.settings.first().map_or(0, |s| s.half_width)
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Writes one row per projector with header
    /// `family_id,x,x_prime,phase_tag,counts,shots`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER).map_err(csv_err)?;
        for ((s, counts), shots) in self.settings.iter().zip(&self.counts).zip(&self.shots) {
            for (p, c) in s.projectors.iter().zip(counts) {
                out.write_record([
                    s.family.to_string(),
                    p.x.to_string(),
                    p.x_prime.to_string(),
                    p.tag.as_str().to_string(),
                    c.to_string(),
                    shots.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush().map_err(|e| Error::invalid(format!("count table: {e}")))
    }

    /// Reads a table written by [`CountDataset::write_csv`]. Weights follow from
    /// the tags and family ids; the site range from the largest index present.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let header = reader.headers().map_err(csv_err)?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::invalid(format!("unexpected count table header {header:?}")));
        }
        let mut families: BTreeMap<i64, (Vec<Projector>, Vec<u64>, u64)> = BTreeMap::new();
        let mut half_width = 0i64;
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let parse_i =
                |i: usize| field(i).parse::<i64>().map_err(|e| Error::invalid(format!("row {}: {}: {e}", line + 1, CSV_HEADER[i])));
            let parse_u =
                |i: usize| field(i).parse::<u64>().map_err(|e| Error::invalid(format!("row {}: {}: {e}", line + 1, CSV_HEADER[i])));
            let family = parse_i(0)?;
            let p = Projector { x: parse_i(1)?, x_prime: parse_i(2)?, tag: field(3).parse()? };
            let (counts, shots) = (parse_u(4)?, parse_u(5)?);
            half_width = half_width.max(family.abs()).max(p.x.abs()).max(p.x_prime.abs());
            let entry = families.entry(family).or_insert_with(|| (Vec::new(), Vec::new(), shots));
            if entry.2 != shots {
                return Err(Error::invalid(format!("row {}: inconsistent shots in family {family}", line + 1)));
            }
            entry.0.push(p);
            entry.1.push(counts);
        }
        if families.is_empty() {
            return Err(Error::invalid("count table has no rows"));
        }
        let half_width = half_width as usize;
        let mut data =
            CountDataset { settings: Vec::new(), counts: Vec::new(), shots: Vec::new(), seed: None, model: CountModel::Multinomial };
        for (family, (projectors, counts, shots)) in families {
            let setting = ProjectionSetting { family, half_width, projectors };
            setting.validate()?;
            data.settings.push(setting);
            data.counts.push(counts);
            data.shots.push(shots);
        }
        Ok(data)
    }
}

fn family_rng(seed: u64, family: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(family as u64);
    rng
}

fn binomial(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    match Binomial::new(n, p.clamp(0.0, 1.0)) {
        Ok(b) => b.sample(rng),
        Err(_) => 0,
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    match Poisson::new(mean) {
        Ok(p) => p.sample(rng) as u64,
        Err(_) => 0,
    }
}

/// Draws counts for every family from its own seeded stream.
pub fn simulate_counts(
    rho: &DMatrix<C64>,
    settings: &[ProjectionSetting],
    shots: u64,
    seed: u64,
    model: CountModel,
) -> Result<CountDataset> {
    if shots == 0 {
        return Err(Error::invalid("shots must be ≥ 1"));
    }
    let probs = settings.iter().map(|s| born_probabilities(rho, s).map(|b| b.probabilities)).collect::<Result<Vec<_>>>()?;
    let counts = probs
        .par_iter()
        .enumerate()
        .map(|(f, p)| {
            let mut rng = family_rng(seed, f);
            match model {
                CountModel::Binomial => p.iter().map(|&q| binomial(&mut rng, shots, q)).collect(),
                CountModel::Poisson => p.iter().map(|&q| poisson(&mut rng, shots as f64 * q)).collect(),
                CountModel::Multinomial => multinomial(&mut rng, shots, p),
            }
        })
        .collect();
    Ok(CountDataset { settings: settings.to_vec(), counts, shots: vec![shots; settings.len()], seed: Some(seed), model })
}

/// Multinomial sample by sequential conditional binomials.
fn multinomial(rng: &mut ChaCha8Rng, shots: u64, p: &[f64]) -> Vec<u64> {
    let mut remaining = shots;
    let mut mass: f64 = p.iter().sum();
    let mut out = Vec::with_capacity(p.len());
    for (m, &q) in p.iter().enumerate() {
        if m + 1 == p.len() || remaining == 0 {
            out.push(if m + 1 == p.len() { remaining } else { 0 });
            continue;
        }
        let k = if mass > 0.0 { binomial(rng, remaining, q / mass) } else { 0 };
        out.push(k);
        remaining -= k;
        mass -= q;
    }
    out
}

/// Exact counts `round(shots · p_m)`, for noiseless round trips.
pub fn expected_counts(rho: &DMatrix<C64>, settings: &[ProjectionSetting], shots: u64) -> Result<CountDataset> {
    let counts = settings
        .iter()
        .map(|s| born_probabilities(rho, s).map(|b| b.probabilities.iter().map(|p| (p * shots as f64).round() as u64).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(CountDataset { settings: settings.to_vec(), counts, shots: vec![shots; settings.len()], seed: None, model: CountModel::Multinomial })
}

struct Term {
    support: Vec<(usize, C64)>,
    counts: f64,
}

/// Multinomial log-likelihood of `ρ = TT†/Tr(TT†)`, with `T` a `d × r`
/// complex matrix packed as `[Re T, Im T]` in row-major order.
#[derive(Clone)]
struct Likelihood {
    dim: usize,
    rank: usize,
    terms: Arc<Vec<Term>>,
    total: f64,
    /// `Σ n_m ln w_m`.
    log_weights: f64,
}

impl Likelihood {
    fn new(data: &CountDataset, rank: usize) -> Result<Self> {
        let half_width = data.half_width();
        let mut terms = Vec::new();
        let mut total = 0.0;
        let mut log_weights = 0.0;
        for (s, counts) in data.settings.iter().zip(&data.counts) {
            if s.projectors.len() != counts.len() {
                return Err(Error::invalid(format!("family {} has mismatched counts", s.family)));
            }
            for (p, &c) in s.projectors.iter().zip(counts) {
                if c == 0 {
                    continue;
                }
                let c = c as f64;
                terms.push(Term { support: p.support(half_width)?, counts: c });
                total += c;
                log_weights += c * s.weight(p).ln();
            }
        }
        if total == 0.0 {
            return Err(Error::invalid("dataset has no counts"));
        }
        Ok(Likelihood { dim: dimension(half_width), rank, terms: Arc::new(terms), total, log_weights })
    }

    fn unpack(&self, x: &[f64]) -> DMatrix<C64> {
        let n = self.dim * self.rank;
        DMatrix::from_fn(self.dim, self.rank, |i, c| C64::new(x[i * self.rank + c], x[n + i * self.rank + c]))
    }

    fn pack(&self, t: &DMatrix<C64>) -> Vec<f64> {
        let n = self.dim * self.rank;
        let mut x = vec![0.0; 2 * n];
        for i in 0..self.dim {
            for c in 0..self.rank {
                x[i * self.rank + c] = t[(i, c)].re;
                x[n + i * self.rank + c] = t[(i, c)].im;
            }
        }
        x
    }

    /// `u = T†m` (conjugated), so `⟨m|TT†|m⟩ = ‖u‖²`.
    fn project(&self, t: &DMatrix<C64>, term: &Term, u: &mut [C64]) -> f64 {
        u.iter_mut().for_each(|v| *v = ZERO);
        for &(i, a) in &term.support {
            for (c, v) in u.iter_mut().enumerate() {
                *v += a.conj() * t[(i, c)];
            }
        }
        u.iter().map(|v| v.norm_sqr()).sum()
    }

    fn log_likelihood(&self, t: &DMatrix<C64>) -> f64 {
        let tau: f64 = t.iter().map(|v| v.norm_sqr()).sum();
        let mut u = vec![ZERO; self.rank];
        let mut acc = self.log_weights - self.total * tau.ln();
        for term in self.terms.iter() {
            let a = self.project(t, term, &mut u);
            acc += term.counts * a.ln();
        }
        acc
    }

    /// `∂L/∂T* = R T` with `R = Σ (n_m/a_m)|m⟩⟨m| − (N/τ) I`.
    fn gradient_conj(&self, t: &DMatrix<C64>) -> DMatrix<C64> {
        let tau: f64 = t.iter().map(|v| v.norm_sqr()).sum();
        let mut g = t * C64::new(-self.total / tau, 0.0);
        let mut u = vec![ZERO; self.rank];
        for term in self.terms.iter() {
            let a = self.project(t, term, &mut u);
            let f = term.counts / a;
            for &(i, coef) in &term.support {
                for (c, v) in u.iter().enumerate() {
                    g[(i, c)] += coef * v * f;
                }
            }
        }
        g
    }
}

impl CostFunction for Likelihood {
    type Param = Vec<f64>;
    type Output = f64;

    /// Negative log-likelihood per count.
    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let l = self.log_likelihood(&self.unpack(x));
        Ok(if l.is_nan() { f64::INFINITY } else { -l / self.total })
    }
}

impl Gradient for Likelihood {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let g = self.gradient_conj(&self.unpack(x));
        let mut out = self.pack(&g);
        let s = -2.0 / self.total;
        out.iter_mut().for_each(|v| *v *= s);
        Ok(out)
    }
}

type SolverState = IterState<Vec<f64>, Vec<f64>, (), (), (), f64>;

/// Records the cost after every accepted iteration.
struct CostHistory(Arc<Mutex<Vec<f64>>>);

impl Observe<SolverState> for CostHistory {
    fn observe_iter(&mut self, state: &SolverState, _kv: &KV) -> std::result::Result<(), argmin::core::Error> {
        self.0.lock().expect("history lock").push(state.get_cost());
        Ok(())
    }
}

struct Ascent {
    x: Vec<f64>,
    cost: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

const LBFGS_MEMORY: usize = 8;
const TOL_GRAD: f64 = 1e-9;
const TOL_COST: f64 = 1e-14;

fn ascend(lik: &Likelihood, x0: Vec<f64>, max_iters: u64) -> Result<Ascent> {
    let history = Arc::new(Mutex::new(Vec::new()));
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), LBFGS_MEMORY)
        .with_tolerance_grad(TOL_GRAD)
        .and_then(|s| s.with_tolerance_cost(TOL_COST))
        .map_err(|e| Error::invalid(format!("optimizer setup: {e}")))?;
    let res = Executor::new(lik.clone(), solver)
        .configure(|s| s.param(x0).max_iters(max_iters))
        .add_observer(CostHistory(history.clone()), ObserverMode::Always)
        .run()
        .map_err(|e| Error::invalid(format!("optimizer: {e}")))?;
    let state = res.state();
    let converged = !matches!(state.get_termination_reason(), Some(TerminationReason::MaxItersReached) | None);
    let x = state.get_best_param().cloned().ok_or_else(|| Error::invalid("optimizer returned no parameters"))?;
    let history = history.lock().expect("history lock").clone();
    Ok(Ascent { cost: state.get_best_cost(), x, iterations: state.get_iter() as usize, converged, history })
}

/// Likelihood maximization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct MleOptions {
    /// Column count of `T`; `None` for full rank.
    pub rank: Option<usize>,
    pub restarts: usize,
    /// Iterations shared by all restarts.
    pub iteration_budget: usize,
    pub seed: u64,
    /// Ground truth for the fidelity diagnostic.
    pub truth: Option<DMatrix<C64>>,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions { rank: None, restarts: 10, iteration_budget: 50_000, seed: 0, truth: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub half_width: usize,
    /// `TT†/Tr(TT†)`.
    pub density: DMatrix<C64>,
    /// `T` scaled to unit Frobenius norm.
    pub factor: DMatrix<C64>,
    /// Pure-state amplitudes for rank-one fits, largest entry real positive.
    pub amplitudes: Option<Vec<C64>>,
    pub nll: f64,
    /// Iterations summed over restarts.
    pub iterations: usize,
    pub best_restart: usize,
    pub converged: bool,
    pub fidelity: Option<f64>,
    /// Log-likelihood after each accepted iteration of the best restart.
    pub likelihood_history: Vec<f64>,
}

impl ReconstructionResult {
    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }
}

/// Log-likelihood of a density matrix under the dataset's count model.
pub fn log_likelihood(data: &CountDataset, rho: &DMatrix<C64>) -> Result<f64> {
    if half_width_of(rho)? != data.half_width() {
        return Err(Error::invalid("state and dataset disagree on the number of sites"));
    }
    let lik = Likelihood::new(data, 1)?;
    let mut acc = lik.log_weights - lik.total * rho.trace().re.ln();
    for term in lik.terms.iter() {
        acc += term.counts * overlap(rho, &term.support).ln();
    }
    Ok(acc)
}

fn random_start(lik: &Likelihood, seed: u64, restart: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    let scale = 1.0 / ((lik.dim * lik.rank) as f64).sqrt();
    (0..2 * lik.dim * lik.rank).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Full-rank fits start one restart from the maximally mixed state.
fn start(lik: &Likelihood, seed: u64, restart: usize) -> Vec<f64> {
    if restart == 0 && lik.rank == lik.dim {
        let id = DMatrix::<C64>::identity(lik.dim, lik.dim) / C64::new((lik.dim as f64).sqrt(), 0.0);
        return lik.pack(&id);
    }
    random_start(lik, seed, restart)
}

/// Restarts within this per-count log-likelihood of the best are treated as
/// tied; the tie goes to the highest-entropy estimate.
pub const LIKELIHOOD_TIE_TOL: f64 = 1e-9;

/// `−Tr ρ ln ρ`.
pub fn von_neumann_entropy(rho: &DMatrix<C64>) -> f64 {
    hermitian_eigen(rho).eigenvalues.iter().filter(|&&l| l > 0.0).map(|l| -l * l.ln()).sum()
}

fn density_of(t: &DMatrix<C64>) -> DMatrix<C64> {
    let a = t * t.adjoint();
    let tr = a.trace().re;
    (&a + a.adjoint()) * C64::new(0.5 / tr, 0.0)
}

/// Maximum-likelihood density matrix with the factorized parametrization.
pub fn mle_density(data: &CountDataset, options: &MleOptions) -> Result<ReconstructionResult> {
    let half_width = data.half_width();
    let dim = dimension(half_width);
    let rank = options.rank.unwrap_or(dim);
    if rank == 0 || rank > dim {
        return Err(Error::invalid(format!("rank cap {rank} outside 1..={dim}")));
    }
    if options.restarts == 0 {
        return Err(Error::invalid("need at least one restart"));
    }
    let lik = Likelihood::new(data, rank)?;
    let per_restart = (options.iteration_budget / options.restarts).max(1) as u64;
    let runs = (0..options.restarts)
        .into_par_iter()
        .map(|r| ascend(&lik, start(&lik, options.seed, r), per_restart))
        .collect::<Result<Vec<_>>>()?;
    let lowest = runs.iter().map(|r| r.cost).fold(f64::INFINITY, f64::min);
    let (best_restart, best) = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.cost <= lowest + LIKELIHOOD_TIE_TOL)
        .map(|(i, r)| (i, r, von_neumann_entropy(&density_of(&lik.unpack(&r.x)))))
        .max_by(|a, b| a.2.total_cmp(&b.2))
        .map(|(i, r, _)| (i, r))
        .expect("at least one restart");
    let t = lik.unpack(&best.x);
    let norm = t.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let factor = t / C64::new(norm, 0.0);
    let density = density_of(&factor);
    let fidelity = options.truth.as_ref().map(|truth| fidelity(truth, &density)).transpose()?;
    let result = ReconstructionResult {
        half_width,
        amplitudes: (rank == 1).then(|| pure_amplitudes(&factor)),
        density,
        factor,
        nll: best.cost * lik.total,
        iterations: runs.iter().map(|r| r.iterations).sum(),
        best_restart,
        converged: best.converged,
        fidelity,
        likelihood_history: best.history.iter().map(|c| -c * lik.total).collect(),
    };
    if !runs.iter().any(|r| r.converged) {
        return Err(Error::ConvergenceFailure { iterations: result.iterations, best_nll: result.nll, best: Box::new(result) });
    }
    Ok(result)
}

fn pure_amplitudes(t: &DMatrix<C64>) -> Vec<C64> {
    let v: Vec<C64> = t.column(0).iter().copied().collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let lead = (0..v.len()).max_by(|&a, &b| v[a].norm().total_cmp(&v[b].norm())).unwrap_or(0);
    let phase = if v[lead].norm() > 0.0 { v[lead].conj() / v[lead].norm() } else { C64::new(1.0, 0.0) };
    let mut out: Vec<C64> = v.iter().map(|a| a * phase / norm).collect();
    out[lead] = C64::new(v[lead].norm() / norm, 0.0);
    out
}

/// Rank-one likelihood fit of amplitudes `√p_v e^{iφ_v}`.
pub fn fit_wavefunction(data: &CountDataset, options: &MleOptions) -> Result<ReconstructionResult> {
    mle_density(data, &MleOptions { rank: Some(1), ..options.clone() })
}

fn hermitian_eigen(m: &DMatrix<C64>) -> SymmetricEigen<C64, nalgebra::Dyn> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    SymmetricEigen::new(h)
}

fn psd_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let e = hermitian_eigen(m);
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| C64::new(l.max(0.0).sqrt(), 0.0)));
    &e.eigenvectors * d * e.eigenvectors.adjoint()
}

fn check_square_pair(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<()> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(Error::invalid(format!("shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// `(Tr √(√ρ σ √ρ))²`.
pub fn fidelity(rho: &DMatrix<C64>, sigma: &DMatrix<C64>) -> Result<f64> {
    check_square_pair(rho, sigma)?;
    let s = psd_sqrt(rho);
    let inner = &s * sigma * &s;
    let root: f64 = hermitian_eigen(&inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok((root * root).min(1.0))
}

pub fn trace_distance(rho: &DMatrix<C64>, sigma: &DMatrix<C64>) -> Result<f64> {
    check_square_pair(rho, sigma)?;
    Ok(0.5 * hermitian_eigen(&(rho - sigma)).eigenvalues.iter().map(|l| l.abs()).sum::<f64>())
}

/// Equal-likelihood alternatives to an estimate, found by moving along
/// directions the measurement cannot see.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeOrbitReport {
    pub probes: usize,
    /// Dimension of the space of Hermitian `H` with `⟨m|H|m⟩ = 0` for every
    /// projector.
    pub null_dimension: usize,
    /// Largest trace distance between the estimate and a positive `ρ + εH`.
    pub max_trace_distance: f64,
    /// Largest per-count log-likelihood change among the probes.
    pub max_likelihood_change: f64,
    /// `(trace distance, per-count log-likelihood change)` per probe.
    pub samples: Vec<(f64, f64)>,
}

/// Relative eigenvalue cut for the null space.
const NULL_TOL: f64 = 1e-12;

/// Orthonormal Hermitian basis of `d × d` matrices.
fn hermitian_basis(d: usize) -> Vec<Vec<(usize, usize, C64)>> {
    let s = FRAC_1_SQRT_2;
    let mut out: Vec<Vec<(usize, usize, C64)>> = (0..d).map(|i| vec![(i, i, C64::new(1.0, 0.0))]).collect();
    for i in 0..d {
        for j in i + 1..d {
            out.push(vec![(i, j, C64::new(s, 0.0)), (j, i, C64::new(s, 0.0))]);
            out.push(vec![(i, j, C64::new(0.0, -s)), (j, i, C64::new(0.0, s))]);
        }
    }
    out
}

/// Probes the set of states with the estimate's outcome probabilities: each
/// probe draws a random unobservable direction `H` and walks to the edge of
/// the positive cone along it.
pub fn gauge_orbit_probe(data: &CountDataset, estimate: &ReconstructionResult, probes: usize, seed: u64) -> Result<GaugeOrbitReport> {
    let half_width = data.half_width();
    let d = dimension(half_width);
    if estimate.density.nrows() != d {
        return Err(Error::invalid("estimate and dataset disagree on the number of sites"));
    }
    let supports = data.settings.iter().flat_map(|s| s.projectors.iter()).map(|p| p.support(half_width)).collect::<Result<Vec<_>>>()?;
    let basis = hermitian_basis(d);
    let mut map = DMatrix::<f64>::zeros(supports.len(), basis.len());
    for (row, sup) in supports.iter().enumerate() {
        let mut dense = DMatrix::<C64>::zeros(d, d);
        for &(i, a) in sup {
            for &(j, b) in sup {
                dense[(i, j)] = a.conj() * b;
            }
        }
        for (col, b) in basis.iter().enumerate() {
            map[(row, col)] = b.iter().map(|&(i, j, v)| (dense[(i, j)] * v).re).sum();
        }
    }
    let eig = SymmetricEigen::new(map.transpose() * &map);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let null: Vec<usize> = (0..basis.len()).filter(|&i| eig.eigenvalues[i] <= NULL_TOL * top).collect();
    let base = log_likelihood(data, &estimate.density)?;
    let total = data.total_counts() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(probes);
    for _ in 0..probes {
        if null.is_empty() {
            break;
        }
        let mut h = DMatrix::<C64>::zeros(d, d);
        for &n in &null {
            let c: f64 = rng.sample(StandardNormal);
            for (col, b) in basis.iter().enumerate() {
                let w = c * eig.eigenvectors[(col, n)];
                for &(i, j, v) in b {
                    h[(i, j)] += v * w;
                }
            }
        }
        let lo = hermitian_eigen(&h).eigenvalues.iter().cloned().fold(0.0, f64::min);
        if lo >= 0.0 {
            continue;
        }
        let min_eig = |eps: f64| {
            let m = &estimate.density + &h * C64::new(eps, 0.0);
            hermitian_eigen(&m).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        let (mut a, mut b) = (0.0, 1.0 / -lo);
        for _ in 0..60 {
            let mid = 0.5 * (a + b);
            if min_eig(mid) >= 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        let moved = &estimate.density + &h * C64::new(a, 0.0);
        let moved = (&moved + moved.adjoint()) * C64::new(0.5, 0.0);
        let dl = (log_likelihood(data, &moved)? - base) / total;
        samples.push((trace_distance(&estimate.density, &moved)?, if dl.is_finite() { dl } else { f64::NEG_INFINITY }));
    }
    Ok(GaugeOrbitReport {
        probes: samples.len(),
        null_dimension: null.len(),
        max_trace_distance: samples.iter().map(|s| s.0).fold(0.0, f64::max),
        max_likelihood_change: samples.iter().map(|s| s.1.abs()).fold(0.0, f64::max),
        samples,
    })
}

/// `ρ_k = F_k ρ F_k†` with `(F_k)_{s,(x,s)} = e^{−ikx}`, normalized per node.
pub fn momentum_reduction(rho: &DMatrix<C64>, grid: &MomentumGrid) -> Result<DensityField> {
    let half_width = half_width_of(rho)?;
    let n = half_width as i64;
    let mut out = Vec::with_capacity(grid.size());
    for (node, k) in grid.nodes().enumerate() {
        let phases: Vec<C64> = (-n..=n).map(|x| C64::from_polar(1.0, -k * x as f64)).collect();
        let mut m = [[ZERO; 2]; 2];
        for (a, pa) in phases.iter().enumerate() {
            for (b, pb) in phases.iter().enumerate() {
                let f = pa * pb.conj();
                for s in 0..2 {
                    for t in 0..2 {
                        m[s][t] += f * rho[(2 * a + s, 2 * b + t)];
                    }
                }
            }
        }
        let m = SpinMatrix(m);
        let tr = m.trace().re;
        if tr < 1e-9 {
            return Err(Error::DegenerateMomentumWeight { node, trace: tr });
        }
        let m = m.scale(1.0 / tr);
        out.push((m + m.dagger()).scale(0.5));
    }
    DensityField::new(*grid, out)
}

/// Uhlmann phase of the reconstructed state's momentum reduction, or the Berry
/// phase of the momentum spinors for rank-one fits.
pub fn phase_from_reconstruction(result: &ReconstructionResult, grid: &MomentumGrid) -> Result<GeometricPhase> {
    match &result.amplitudes {
        Some(a) => {
            let amps = a.chunks(2).map(|c| [c[0], c[1]]).collect();
            let psi = RealSpaceState::new(result.half_width, amps)?;
            let k = real_to_momentum(&psi, grid)?;
            for (node, v) in k.amps.iter().enumerate() {
                let w = v[0].norm_sqr() + v[1].norm_sqr();
                if w < 1e-9 {
                    return Err(Error::DegenerateMomentumWeight { node, trace: w });
                }
            }
            berry_phase(&StateField::normalized(*grid, k.amps)?)
        }
        None => Ok(uhlmann_phase(&momentum_reduction(&result.density, grid)?)),
    }
}

/// `2N+1` nodes, or the minimum grid size when that is smaller.
pub fn reconstruction_grid(half_width: usize) -> Result<MomentumGrid> {
    MomentumGrid::new((2 * half_width + 1).max(MomentumGrid::MIN_SIZE))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn localized_h(n: usize) -> DMatrix<C64> {
        let psi = RealSpaceState::localized(n, [C64::new(1.0, 0.0), ZERO]);
        density_from_pure(&psi).unwrap()
    }

    #[test]
    fn family_counts() {
        assert_eq!(projection_settings(1).unwrap().len(), 3);
        assert_eq!(projection_settings(13).unwrap().len(), 27);
        assert!(projection_settings(0).is_err());
    }

    #[test]
    fn families_are_complete_measurements() {
        for n in 1..=4 {
            let d = dimension(n);
            for s in projection_settings(n).unwrap() {
                let mut acc = DMatrix::<C64>::zeros(d, d);
                for p in &s.projectors {
                    let sup = p.support(n).unwrap();
                    let norm: f64 = sup.iter().map(|(_, a)| a.norm_sqr()).sum();
                    assert!((norm - 1.0).abs() < 1e-15);
                    for &(i, a) in &sup {
                        for &(j, b) in &sup {
                            acc[(i, j)] += a * b.conj() * s.weight(p);
                        }
                    }
                }
                assert!((acc - DMatrix::<C64>::identity(d, d)).norm() < 1e-14, "family {}", s.family);
            }
        }
    }

    #[test]
    fn born_examples() {
        let rho = localized_h(2);
        let settings = projection_settings(2).unwrap();
        let zero = &settings[2];
        let find = |tag| zero.projectors.iter().position(|p| p.x == 0 && p.tag == tag).unwrap();
        let b = born_probabilities(&rho, zero).unwrap();
        assert!((b.overlaps[find(PhaseTag::H)] - 1.0).abs() < 1e-15);
        assert!((b.overlaps[find(PhaseTag::Plus)] - 0.5).abs() < 1e-15);
        let mixed = maximally_mixed(2);
        for s in &settings {
            let b = born_probabilities(&mixed, s).unwrap();
            assert!(b.overlaps.iter().all(|o| (o - 0.1).abs() < 1e-15));
            assert!((b.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let bad = ProjectionSetting { family: 0, half_width: 2, projectors: vec![Projector { x: 3, x_prime: 3, tag: PhaseTag::H }] };
        assert!(born_probabilities(&rho, &bad).is_err());
    }

    #[test]
    fn counts_are_deterministic_and_sum_to_shots() {
        let rho = maximally_mixed(2);
        let s = projection_settings(2).unwrap();
        let a = simulate_counts(&rho, &s, 1000, 5, CountModel::Multinomial).unwrap();
        let b = simulate_counts(&rho, &s, 1000, 5, CountModel::Multinomial).unwrap();
        assert_eq!(a, b);
        assert!(a.counts.iter().all(|c| c.iter().sum::<u64>() == 1000));
        assert!(simulate_counts(&rho, &s, 0, 5, CountModel::Multinomial).is_err());
        let c = simulate_counts(&rho, &s, 1000, 5, CountModel::Binomial).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn csv_round_trip() {
        let rho = maximally_mixed(2);
        let s = projection_settings(2).unwrap();
        let a = simulate_counts(&rho, &s, 100, 1, CountModel::Multinomial).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("family_id,x,x_prime,phase_tag,counts,shots\n"));
        let b = CountDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(a.settings, b.settings);
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.shots, b.shots);
        assert!(CountDataset::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn fidelity_and_trace_distance() {
        let a = localized_h(1);
        let b = maximally_mixed(1);
        assert!((fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((fidelity(&a, &b).unwrap() - 1.0 / 6.0).abs() < 1e-12);
        assert!((trace_distance(&a, &b).unwrap() - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let rho = maximally_mixed(1);
        let s = projection_settings(1).unwrap();
        let data = simulate_counts(&rho, &s, 500, 3, CountModel::Multinomial).unwrap();
        let lik = Likelihood::new(&data, 2).unwrap();
        let x = random_start(&lik, 9, 0);
        let g = Gradient::gradient(&lik, &x).unwrap();
        let h = 1e-6;
        for i in [0, 3, 7, x.len() / 2 + 1, x.len() - 1] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (CostFunction::cost(&lik, &xp).unwrap() - CostFunction::cost(&lik, &xm).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "component {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn momentum_reduction_of_localized_state_is_constant() {
        let s = 0.5f64.sqrt();
        let psi = RealSpaceState::localized(4, [C64::new(s, 0.0), C64::new(0.0, -s)]);
        let rho = density_from_pure(&psi).unwrap();
        let g = reconstruction_grid(4).unwrap();
        let field = momentum_reduction(&rho, &g).unwrap();
        let expect = SpinMatrix::outer(&[C64::new(s, 0.0), C64::new(0.0, -s)]);
        assert!(field.matrices().iter().all(|m| m.max_abs_diff(&expect) < 1e-14));
        assert_eq!(uhlmann_phase(&field).value, 0.0);
    }
}
