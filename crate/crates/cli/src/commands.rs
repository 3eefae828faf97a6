//! One function per subcommand. Each writes its tables into the output
//! directory and returns the summary it also stores as JSON.

use std::f64::consts::PI;

use qwalk::dynamics::{
    calibrate_gamma, commutator_norm_median, disorder_ensemble_quench, final_real_space_ensemble, initial_ground_state, lindblad_quench,
    scaling_study, unitary_quench, TrajectoryFields, TrajectoryRecord,
};
use qwalk::geometry::{berry_phase, phase_series, uhlmann_phase, wrap_phase, FieldSeries, StateField};
use qwalk::tomography::{
    density_from_ensemble, expected_counts, fidelity, fit_wavefunction, gauge_orbit_probe, mle_density, momentum_reduction,
    phase_from_reconstruction, projection_settings, reconstruction_grid, simulate_counts, trace_distance, MleOptions,
};
use qwalk::walk::{bloch_field, gap_closure_on_segment, quasienergy_gap, MomentumGrid, ThetaPair};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{QuenchKind, RunConfig};
use crate::error::CliError;
use crate::output::{fmt_f64, OutputDir};

fn opt_f64(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".to_string(), fmt_f64)
}

// ---------------------------------------------------------------- phase diagram

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseCell {
    pub theta1: f64,
    pub theta2: f64,
    pub gap: f64,
    /// `None` where the band is gapless or too rough for the grid.
    pub berry_phase: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub theta1: f64,
    pub theta2: f64,
    pub gap: f64,
    /// Cells joined by the searched segment, as `(i, j)` indices.
    pub from: (usize, usize),
    pub to: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdjacencyAudit {
    /// Neighbouring cell pairs, diagonals included, with defined phases on
    /// both ends.
    pub pairs: usize,
    /// Pairs whose quantized phases differ.
    pub phase_changes: usize,
    /// Phase changes with no gap closure on the joining segment.
    pub violations: usize,
    pub violating_pairs: Vec<((usize, usize), (usize, usize))>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseDiagramSummary {
    pub resolution: usize,
    pub grid: usize,
    pub boundary_grid: usize,
    pub boundary_tolerance: f64,
    pub gapless_cells: usize,
    pub boundary_points: usize,
    pub audit: AdjacencyAudit,
    #[serde(skip)]
    pub cells: Vec<PhaseCell>,
    #[serde(skip)]
    pub boundary: Vec<BoundaryPoint>,
}

fn axis(resolution: usize, i: usize) -> f64 {
    2.0 * PI * i as f64 / resolution as f64
}

fn quantize(phase: f64) -> i8 {
    if wrap_phase(phase).abs() < PI / 2.0 {
        0
    } else {
        1
    }
}

/// Gap and lower-band Berry phase on a `resolution²` grid over `[0, 2π)²`,
/// row-major in `θ₁`.
pub fn phase_cells(resolution: usize, grid: &MomentumGrid) -> Result<Vec<PhaseCell>, CliError> {
    (0..resolution * resolution)
        .into_par_iter()
        .map(|idx| {
            let (t1, t2) = (axis(resolution, idx / resolution), axis(resolution, idx % resolution));
            let theta = ThetaPair::new(t1, t2)?;
            let gap = quasienergy_gap(&theta, grid);
            let berry_phase = bloch_field(&theta, grid).ok().and_then(|f| berry_phase(&StateField::lower_band(&f)).ok()).map(|p| p.value);
            Ok(PhaseCell { theta1: t1, theta2: t2, gap, berry_phase })
        })
        .collect()
}

pub fn phase_diagram(cfg: &RunConfig, out: &mut OutputDir) -> Result<PhaseDiagramSummary, CliError> {
    let pd = &cfg.phase_diagram;
    let res = pd.resolution;
    let grid = cfg.momentum_grid()?;
    let fine = MomentumGrid::new(pd.boundary_grid)?;
    let cells = phase_cells(res, &grid)?;

    // Boundaries run along lattice diagonals, so edge neighbours alone would
    // rarely straddle one; diagonal neighbours are searched too.
    let mut segments = Vec::new();
    for i in 0..res {
        for j in 0..res {
            if i + 1 < res {
                segments.push(((i, j), (i + 1, j)));
            }
            if j + 1 < res {
                segments.push(((i, j), (i, j + 1)));
            }
            if i + 1 < res && j + 1 < res {
                segments.push(((i, j), (i + 1, j + 1)));
                segments.push(((i + 1, j), (i, j + 1)));
            }
        }
    }
    let theta = |(i, j): (usize, usize)| ThetaPair::new(axis(res, i), axis(res, j));
    let closures = segments
        .par_iter()
        .map(|&(a, b)| {
            let (ta, tb) = (theta(a)?, theta(b)?);
            let hit = gap_closure_on_segment(&ta, &tb, &fine, pd.boundary_tolerance)?;
            hit.map(|(s, gap)| {
                let t = ta.lerp(&tb, s)?;
                Ok(BoundaryPoint { theta1: t.theta1, theta2: t.theta2, gap, from: a, to: b })
            })
            .transpose()
        })
        .collect::<Result<Vec<_>, qwalk::Error>>()?;

    let mut audit = AdjacencyAudit { pairs: 0, phase_changes: 0, violations: 0, violating_pairs: Vec::new() };
    for (&(a, b), hit) in segments.iter().zip(&closures) {
        let (pa, pb) = (cells[a.0 * res + a.1].berry_phase, cells[b.0 * res + b.1].berry_phase);
        if let (Some(pa), Some(pb)) = (pa, pb) {
            audit.pairs += 1;
            if quantize(pa) != quantize(pb) {
                audit.phase_changes += 1;
                if hit.is_none() {
                    audit.violations += 1;
                    audit.violating_pairs.push((a, b));
                }
            }
        }
    }
    let boundary: Vec<BoundaryPoint> = closures.into_iter().flatten().collect();

    out.write_table(
        "phase_diagram.csv",
        &["theta1", "theta2", "gap", "berry_phase"],
        cells.iter().map(|c| vec![fmt_f64(c.theta1), fmt_f64(c.theta2), fmt_f64(c.gap), opt_f64(c.berry_phase)]),
    )?;
    out.write_table(
        "boundary.csv",
        &["theta1", "theta2", "gap", "from_i", "from_j", "to_i", "to_j"],
        boundary.iter().map(|b| {
            vec![
                fmt_f64(b.theta1),
                fmt_f64(b.theta2),
                fmt_f64(b.gap),
                b.from.0.to_string(),
                b.from.1.to_string(),
                b.to.0.to_string(),
                b.to.1.to_string(),
            ]
        }),
    )?;
    let summary = PhaseDiagramSummary {
        resolution: res,
        grid: grid.size(),
        boundary_grid: fine.size(),
        boundary_tolerance: pd.boundary_tolerance,
        gapless_cells: cells.iter().filter(|c| c.berry_phase.is_none()).count(),
        boundary_points: boundary.len(),
        audit,
        cells,
        boundary,
    };
    out.write_json("phase_diagram.json", &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- quench

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuenchRow {
    pub t: usize,
    pub phase: f64,
    pub mean_purity: f64,
    pub excitation: Option<f64>,
    pub commutator_norm: Option<f64>,
    /// Lower-band Berry phase of the instantaneous Hamiltonian.
    pub hamiltonian_berry: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuenchSummary {
    pub kind: QuenchKind,
    pub steps: usize,
    pub grid: usize,
    pub realizations: Option<usize>,
    pub gamma: Option<f64>,
    pub gamma_residual: Option<f64>,
    pub critical_step: Option<usize>,
    pub final_phase: f64,
    pub final_phase_over_pi: f64,
    pub gap_events: usize,
    #[serde(skip)]
    pub rows: Vec<QuenchRow>,
    #[serde(skip)]
    pub record: Option<TrajectoryRecord>,
}

/// Runs the quench and tabulates it without touching the file system.
pub fn run_quench(cfg: &RunConfig, kind: QuenchKind) -> Result<QuenchSummary, CliError> {
    let grid = cfg.momentum_grid()?;
    let schedule = cfg.schedule()?;
    let init = initial_ground_state(&grid);
    let (mut gamma, mut gamma_residual, mut realizations) = (None, None, None);
    let record = match kind {
        QuenchKind::Unitary => unitary_quench(&schedule, &init)?,
        QuenchKind::Ensemble => {
            let d = cfg.disorder()?;
            realizations = Some(d.n_realizations);
            disorder_ensemble_quench(&schedule, &d, &init)?
        }
        QuenchKind::Lindblad => {
            let g = match cfg.noise.gamma {
                Some(g) => g,
                None => {
                    let cal = calibrate_gamma(&schedule.theta_f, &cfg.disorder()?, &grid, schedule.steps())?;
                    gamma_residual = Some(cal.residual);
                    cal.gamma
                }
            };
            gamma = Some(g);
            lindblad_quench(&schedule, &cfg.noise(g)?, &init)?
        }
    };
    let series = match &record.fields {
        TrajectoryFields::Pure(s) => phase_series(FieldSeries::States(s), Some(&record.hamiltonians))?,
        TrajectoryFields::Mixed(d) => phase_series(FieldSeries::Densities(d), Some(&record.hamiltonians))?,
    };
    let rows = series
        .points
        .iter()
        .map(|p| {
            let t = p.step;
            let commutator_norm = record.hamiltonians[t].as_ref().map(|h| commutator_norm_median(&record.density(t), h)).transpose()?;
            Ok(QuenchRow {
                t,
                phase: p.phase.value,
                mean_purity: p.mean_purity,
                excitation: p.excitation,
                commutator_norm,
                hamiltonian_berry: record.hamiltonian_berry[t],
            })
        })
        .collect::<Result<Vec<_>, qwalk::Error>>()?;
    let final_phase = rows.last().map_or(0.0, |r| r.phase);
    Ok(QuenchSummary {
        kind,
        steps: schedule.steps(),
        grid: grid.size(),
        realizations,
        gamma,
        gamma_residual,
        critical_step: record.critical_step,
        final_phase,
        final_phase_over_pi: final_phase / PI,
        gap_events: record.gap_events.len(),
        rows,
        record: Some(record),
    })
}

pub fn quench(cfg: &RunConfig, kind: QuenchKind, out: &mut OutputDir) -> Result<QuenchSummary, CliError> {
    let summary = run_quench(cfg, kind)?;
    let phase_col = if kind == QuenchKind::Unitary { "phi_B" } else { "phi_U" };
    out.write_table(
        "quench.csv",
        &["t", phase_col, "mean_purity", "excitation", "commutator_norm", "hamiltonian_berry"],
        summary.rows.iter().map(|r| {
            vec![
                r.t.to_string(),
                fmt_f64(r.phase),
                fmt_f64(r.mean_purity),
                opt_f64(r.excitation),
                opt_f64(r.commutator_norm),
                opt_f64(r.hamiltonian_berry),
            ]
        }),
    )?;
    if cfg.quench.dump_densities {
        if let Some(rec) = &summary.record {
            out.write_density_fields("densities.bin", &rec.densities())?;
        }
    }
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- scaling

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingSummary {
    pub exponent: f64,
    pub exponent_ci95: (f64, f64),
    pub log_prefactor: f64,
    pub r_squared: f64,
    pub steps: Vec<usize>,
    pub excitation_densities: Vec<f64>,
}

pub fn scaling(cfg: &RunConfig, out: &mut OutputDir) -> Result<ScalingSummary, CliError> {
    let result = scaling_study(&cfg.schedule()?, &cfg.scaling.steps, &cfg.disorder()?, &cfg.momentum_grid()?)?;
    out.write_table(
        "scaling.csv",
        &["steps", "velocity", "excitation_density", "phi_U", "holonomy_angle", "holonomy_deviation"],
        result.points.iter().map(|p| {
            vec![
                p.steps.to_string(),
                fmt_f64(p.velocity),
                fmt_f64(p.excitation_density),
                fmt_f64(p.uhlmann_phase),
                fmt_f64(p.holonomy_angle),
                fmt_f64(p.holonomy_deviation),
            ]
        }),
    )?;
    let fit = result.fit;
    let summary = ScalingSummary {
        exponent: fit.exponent,
        exponent_ci95: fit.exponent_ci95,
        log_prefactor: fit.log_prefactor,
        r_squared: fit.r_squared,
        steps: result.points.iter().map(|p| p.steps).collect(),
        excitation_densities: result.excitation_densities(),
    };
    out.write_json("scaling_fit.json", &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- tomography

/// Probabilities are scaled by this in exact mode, which keeps count
/// rounding far below any fidelity tolerance.
pub const EXACT_SHOTS: u64 = 1_000_000_000_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TomographySummary {
    pub half_width: usize,
    pub realizations: usize,
    pub shots: u64,
    pub exact: bool,
    pub count_model: String,
    pub rank: usize,
    pub fidelity: f64,
    pub trace_distance: f64,
    pub nll: f64,
    pub iterations: usize,
    pub best_restart: usize,
    pub converged: bool,
    pub phase_direct: f64,
    pub phase_reconstructed: f64,
    /// `|Φ_rec − Φ_direct|` on the circle.
    pub phase_difference: f64,
    pub gauge_null_dimension: Option<usize>,
    pub gauge_max_trace_distance: Option<f64>,
}

pub fn tomography(cfg: &RunConfig, out: &mut OutputDir) -> Result<TomographySummary, CliError> {
    let t = &cfg.tomography;
    let schedule = cfg.schedule()?.with_steps(t.steps)?;
    let states = final_real_space_ensemble(&schedule, &cfg.disorder_with(t.realizations)?)?;
    let truth = density_from_ensemble(&states)?;
    let settings = projection_settings(t.steps)?;
    let data = if t.exact {
        expected_counts(&truth, &settings, EXACT_SHOTS)?
    } else {
        simulate_counts(&truth, &settings, t.shots, cfg.seed, t.count_model.into())?
    };
    let mut counts = Vec::new();
    data.write_csv(&mut counts)?;
    out.write_bytes("counts.csv", &counts)?;

    let options =
        MleOptions { rank: t.rank, restarts: t.restarts, iteration_budget: t.iteration_budget, seed: cfg.seed, truth: Some(truth.clone()) };
    let fit = if t.rank == Some(1) { fit_wavefunction(&data, &options)? } else { mle_density(&data, &options)? };
    let grid = reconstruction_grid(t.steps)?;
    let direct = uhlmann_phase(&momentum_reduction(&truth, &grid)?).value;
    let recon = phase_from_reconstruction(&fit, &grid)?.value;
    let gauge = if t.gauge_probes > 0 { Some(gauge_orbit_probe(&data, &fit, t.gauge_probes, cfg.seed)?) } else { None };

    out.write_table(
        "likelihood.csv",
        &["iteration", "log_likelihood"],
        fit.likelihood_history.iter().enumerate().map(|(i, l)| vec![i.to_string(), fmt_f64(*l)]),
    )?;
    out.write_matrix("reconstruction.bin", &fit.density)?;
    let summary = TomographySummary {
        half_width: t.steps,
        realizations: t.realizations,
        shots: if t.exact { EXACT_SHOTS } else { t.shots },
        exact: t.exact,
        count_model: data.model.as_str().to_string(),
        rank: fit.rank(),
        fidelity: fidelity(&truth, &fit.density)?,
        trace_distance: trace_distance(&truth, &fit.density)?,
        nll: fit.nll,
        iterations: fit.iterations,
        best_restart: fit.best_restart,
        converged: fit.converged,
        phase_direct: direct,
        phase_reconstructed: recon,
        phase_difference: wrap_phase(recon - direct).abs(),
        gauge_null_dimension: gauge.as_ref().map(|g| g.null_dimension),
        gauge_max_trace_distance: gauge.as_ref().map(|g| g.max_trace_distance),
    };
    out.write_json("tomography.json", &summary)?;
    Ok(summary)
}
