//! Split-step walk operators in momentum space and their effective Bloch
//! Hamiltonians.
//!
//! One walk step is `U = R(θ₁/2) S↓ R(θ₂) S↑ R(θ₁/2)` with `R(θ) = exp(−iθσ_y/2)`.
//! Momentum states are `|k⟩ = Σ_x e^{ikx}|x⟩`, so the spin-conditional shifts
//! act as `S↑ → diag(e^{−ik}, 1)` and `S↓ → diag(1, e^{ik})`. Under this
//! convention complex conjugation maps `U_k` to `U_{−k}`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::spin::{SpinMatrix, Spinor, ONE};

/// Spin-½ rotation period.
const THETA_PERIOD: f64 = 4.0 * PI;

/// Coin angles `(θ₁, θ₂)` of one walk step, reduced to `[−2π, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaPair {
    pub theta1: f64,
    pub theta2: f64,
}

fn reduce_angle(theta: f64) -> f64 {
    // Leave in-range values untouched so repeated reduction is bitwise stable.
    if (-0.5 * THETA_PERIOD..0.5 * THETA_PERIOD).contains(&theta) {
        return theta;
    }
    let r = (theta + 0.5 * THETA_PERIOD).rem_euclid(THETA_PERIOD) - 0.5 * THETA_PERIOD;
    // rem_euclid can round up to exactly the period.
    if r >= 0.5 * THETA_PERIOD {
        r - THETA_PERIOD
    } else {
        r
    }
}

impl ThetaPair {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self> {
        if !theta1.is_finite() || !theta2.is_finite() {
            return Err(Error::invalid(format!("non-finite coin angles ({theta1}, {theta2})")));
        }
        Ok(ThetaPair { theta1: reduce_angle(theta1), theta2: reduce_angle(theta2) })
    }

    /// The trivial flat-band walk `(0, π)`: `U_k = −iσ_y` at every momentum.
    pub fn flat_band() -> Self {
        ThetaPair { theta1: 0.0, theta2: PI }
    }

    /// `self + s·(other − self)` without reduction of the difference.
    pub fn lerp(&self, other: &ThetaPair, s: f64) -> Result<ThetaPair> {
        ThetaPair::new(self.theta1 + (other.theta1 - self.theta1) * s, self.theta2 + (other.theta2 - self.theta2) * s)
    }

    pub fn with_theta1_offset(&self, delta: f64) -> Result<ThetaPair> {
        ThetaPair::new(self.theta1 + delta, self.theta2)
    }
}

/// Uniform Brillouin-zone grid `k_j = −π + 2πj/M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MomentumGrid {
    size: usize,
}

impl MomentumGrid {
    pub const MIN_SIZE: usize = 8;

    pub fn new(size: usize) -> Result<Self> {
        if size < Self::MIN_SIZE {
            return Err(Error::invalid(format!("momentum grid needs at least {} nodes, got {size}", Self::MIN_SIZE)));
        }
        Ok(MomentumGrid { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.size as f64
    }

    pub fn k(&self, j: usize) -> f64 {
        -PI + 2.0 * PI * j as f64 / self.size as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.size).map(move |j| self.k(j))
    }

    /// Index of the node at `−k_j` (mod 2π).
    pub fn mirror(&self, j: usize) -> usize {
        (self.size - j) % self.size
    }
}

/// `R(θ) = [[cos θ/2, −sin θ/2], [sin θ/2, cos θ/2]]`.
pub fn coin_rotation(theta: f64) -> Result<SpinMatrix> {
    if !theta.is_finite() {
        return Err(Error::invalid(format!("non-finite rotation angle {theta}")));
    }
    Ok(rotation(theta))
}

fn rotation(theta: f64) -> SpinMatrix {
    let (s, c) = (0.5 * theta).sin_cos();
    SpinMatrix::new(C64::new(c, 0.0), C64::new(-s, 0.0), C64::new(s, 0.0), C64::new(c, 0.0))
}

/// Step operator at momentum `k`.
pub fn step_unitary_k(params: &ThetaPair, k: f64) -> SpinMatrix {
    let half = rotation(0.5 * params.theta1);
    let shift_down = SpinMatrix::diag(ONE, C64::from_polar(1.0, k));
    let shift_up = SpinMatrix::diag(C64::from_polar(1.0, -k), ONE);
    half * shift_down * rotation(params.theta2) * shift_up * half
}

/// Quasienergy and Bloch vector at one momentum: `U = exp(−iE n·σ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlochPoint {
    /// Quasienergy in `[0, π]`.
    pub energy: f64,
    pub n: [f64; 3],
}

impl BlochPoint {
    pub fn hamiltonian(&self) -> SpinMatrix {
        SpinMatrix::from_bloch(self.n).scale(self.energy)
    }

    /// `exp(−i E n·σ)`.
    pub fn unitary(&self) -> SpinMatrix {
        self.evolution(1.0)
    }

    /// `exp(−i E t n·σ)`.
    pub fn evolution(&self, t: f64) -> SpinMatrix {
        let (s, c) = (self.energy * t).sin_cos();
        SpinMatrix::identity().scale(c) - SpinMatrix::from_bloch(self.n).scale_c(C64::new(0.0, s))
    }

    pub fn lower_state(&self) -> Spinor {
        lower_eigenvector(self.n)
    }
}

/// Tolerance on `sin E` below which the gap counts as closed.
pub const GAP_CLOSURE_TOL: f64 = 1e-9;

/// Extracts `(E, n)` from a step unitary.
///
/// The returned [`Error::GapClosure`] carries `k = NaN`; [`bloch_field`] fills in
/// the momentum.
pub fn effective_hamiltonian_k(u: &SpinMatrix) -> Result<BlochPoint> {
    let defect = (u.dagger() * *u).max_abs_diff(&SpinMatrix::identity());
    if defect > 1e-10 {
        return Err(Error::invalid(format!("step operator not unitary (defect {defect:.3e})")));
    }
    bloch_point(u).ok_or_else(|| {
        let energy = (0.5 * u.trace().re).clamp(-1.0, 1.0).acos();
        Error::GapClosure { k: f64::NAN, energy }
    })
}

/// `sin E · n_a = Re[i Tr(σ_a U)] / 2`; returns `None` on gap closure.
fn bloch_point(u: &SpinMatrix) -> Option<BlochPoint> {
    let (cos_e, v) = sin_weighted_bloch(u);
    let sin_e = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if sin_e < GAP_CLOSURE_TOL {
        return None;
    }
    Some(BlochPoint { energy: sin_e.atan2(cos_e), n: [v[0] / sin_e, v[1] / sin_e, v[2] / sin_e] })
}

fn sin_weighted_bloch(u: &SpinMatrix) -> (f64, [f64; 3]) {
    let i = C64::new(0.0, 1.0);
    let v = SpinMatrix::paulis().map(|p| 0.5 * (i * (p * *u).trace()).re);
    (0.5 * u.trace().re, v)
}

/// `min(E, π − E)` without the gap-closure check.
fn quasienergy_distance(u: &SpinMatrix) -> f64 {
    let (cos_e, v) = sin_weighted_bloch(u);
    let sin_e = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let e = sin_e.atan2(cos_e);
    e.min(PI - e)
}

/// Eigenvector of `n·σ` with eigenvalue −1.
pub fn lower_eigenvector(n: [f64; 3]) -> Spinor {
    // Two algebraically equivalent forms; pick the one away from its singular pole.
    let v = if n[2] >= 0.0 {
        [C64::new(n[0], -n[1]), C64::new(-(1.0 + n[2]), 0.0)]
    } else {
        [C64::new(-(1.0 - n[2]), 0.0), C64::new(n[0], n[1])]
    };
    let norm = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    [v[0] / norm, v[1] / norm]
}

/// Effective Hamiltonian sampled on a momentum grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BlochField {
    pub grid: MomentumGrid,
    pub points: Vec<BlochPoint>,
}

impl BlochField {
    pub fn new(grid: MomentumGrid, points: Vec<BlochPoint>) -> Result<Self> {
        if points.len() != grid.size() {
            return Err(Error::GridMismatch(grid.size(), points.len()));
        }
        for (j, p) in points.iter().enumerate() {
            let norm = p.n.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-10 || !(0.0..=PI).contains(&p.energy) {
                return Err(Error::invalid(format!("invalid Bloch point at node {j}: {p:?}")));
            }
        }
        Ok(BlochField { grid, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn energies(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.energy)
    }

    pub fn gap_min(&self) -> f64 {
        self.energies().map(|e| e.min(PI - e)).fold(f64::INFINITY, f64::min)
    }

    /// Lower-band eigenvectors, one per node.
    pub fn lower_band(&self) -> Vec<Spinor> {
        self.points.iter().map(BlochPoint::lower_state).collect()
    }
}

pub fn bloch_field(params: &ThetaPair, grid: &MomentumGrid) -> Result<BlochField> {
    let points = grid
        .nodes()
        .map(|k| {
            let u = step_unitary_k(params, k);
            bloch_point(&u).ok_or_else(|| Error::GapClosure { k, energy: (0.5 * u.trace().re).clamp(-1.0, 1.0).acos() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlochField { grid: *grid, points })
}

/// Per-node Bloch extraction that tolerates closed gaps (`None` at those nodes).
pub fn bloch_points_lenient(params: &ThetaPair, grid: &MomentumGrid) -> Vec<Option<BlochPoint>> {
    grid.nodes().map(|k| bloch_point(&step_unitary_k(params, k))).collect()
}

/// Minimum distance of the quasienergy to the gap-closing values 0 and π.
pub fn quasienergy_gap(params: &ThetaPair, grid: &MomentumGrid) -> f64 {
    grid.nodes().map(|k| quasienergy_distance(&step_unitary_k(params, k))).fold(f64::INFINITY, f64::min)
}

/// Bound on `|∂gap/∂θᵢ|`: each angle enters `U` through rotations whose
/// generators sum to operator norm ½, and eigenphases of a unitary move no
/// faster than the unitary itself.
pub const GAP_LIPSCHITZ: f64 = 0.5;

/// A point on the straight path `a → b` where the gap is below `tol`, as
/// `(s, gap)` with `θ = a + s(b − a)`. Branch and bound on [`GAP_LIPSCHITZ`],
/// so `None` proves the gap stays above `tol` on the grid.
pub fn gap_closure_on_segment(a: &ThetaPair, b: &ThetaPair, grid: &MomentumGrid, tol: f64) -> Result<Option<(f64, f64)>> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid(format!("gap tolerance {tol} must be positive")));
    }
    let slope = GAP_LIPSCHITZ * ((b.theta1 - a.theta1).abs() + (b.theta2 - a.theta2).abs());
    let gap = |s: f64| a.lerp(b, s).map(|t| quasienergy_gap(&t, grid));
    let mut stack = vec![(0.0, 1.0, gap(0.0)?, gap(1.0)?)];
    while let Some((lo, hi, glo, ghi)) = stack.pop() {
        if glo < tol {
            return Ok(Some((lo, glo)));
        }
        if ghi < tol {
            return Ok(Some((hi, ghi)));
        }
        // Smallest value the gap can reach between the two ends.
        if 0.5 * (glo + ghi - slope * (hi - lo)) >= tol || hi - lo < 1e-12 {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let gmid = gap(mid)?;
        stack.push((mid, hi, gmid, ghi));
        stack.push((lo, mid, glo, gmid));
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetryDeviation {
    pub ok: bool,
    pub deviation: f64,
}

impl SymmetryDeviation {
    fn new(deviation: f64, tol: f64) -> Self {
        SymmetryDeviation { ok: deviation < tol, deviation }
    }
}

/// Symmetry deviations of a Bloch field.
///
/// Representations: chiral `Γ = σ_x` (`n_x = 0`); particle-hole `K`
/// (`n(−k) = (−n_x, n_y, −n_z)(k)`); time reversal `σ_x K`
/// (`n(−k) = (n_x, n_y, −n_z)(k)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetryReport {
    pub chiral: SymmetryDeviation,
    pub phs: SymmetryDeviation,
    pub trs: SymmetryDeviation,
    pub gap_min: f64,
}

pub const SYMMETRY_TOL: f64 = 1e-9;

pub fn symmetry_check(field: &BlochField) -> SymmetryReport {
    symmetry_check_with_tol(field, SYMMETRY_TOL)
}

pub fn symmetry_check_with_tol(field: &BlochField, tol: f64) -> SymmetryReport {
    let vectors: Vec<[f64; 3]> = field.points.iter().map(|p| p.n).collect();
    let (chiral, phs, trs) = vector_symmetry_deviations(&field.grid, &vectors);
    SymmetryReport {
        chiral: SymmetryDeviation::new(chiral, tol),
        phs: SymmetryDeviation::new(phs, tol),
        trs: SymmetryDeviation::new(trs, tol),
        gap_min: field.gap_min(),
    }
}

/// `(chiral, phs, trs)` deviations of a vector field under the representations
/// documented on [`SymmetryReport`].
pub(crate) fn vector_symmetry_deviations(grid: &MomentumGrid, v: &[[f64; 3]]) -> (f64, f64, f64) {
    let mut chiral = 0.0f64;
    let mut phs = 0.0f64;
    let mut trs = 0.0f64;
    for (j, a) in v.iter().enumerate() {
        let b = v[grid.mirror(j)];
        chiral = chiral.max(a[0].abs());
        let dp = [b[0] + a[0], b[1] - a[1], b[2] + a[2]];
        let dt = [b[0] - a[0], b[1] - a[1], b[2] + a[2]];
        phs = phs.max(dp.iter().map(|x| x * x).sum::<f64>().sqrt());
        trs = trs.max(dt.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    (chiral, phs, trs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::ZERO;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn coin_rotation_special_angles() {
        let id = coin_rotation(0.0).unwrap();
        assert!(id.max_abs_diff(&SpinMatrix::identity()) < 1e-15);
        let minus = coin_rotation(2.0 * PI).unwrap();
        assert!(minus.max_abs_diff(&SpinMatrix::identity().scale(-1.0)) < 1e-15);
        let half = coin_rotation(PI).unwrap();
        let expect = SpinMatrix::new(c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0));
        assert!(half.max_abs_diff(&expect) < 1e-15);
        assert!((half.det() - ONE).norm() < 1e-15);
        assert!(coin_rotation(f64::NAN).is_err());
        assert!(coin_rotation(f64::INFINITY).is_err());
    }

    #[test]
    fn theta_pair_reduction() {
        let p = ThetaPair::new(4.0 * PI + 0.3, -4.0 * PI - 0.2).unwrap();
        assert!((p.theta1 - 0.3).abs() < 1e-12);
        assert!((p.theta2 + 0.2).abs() < 1e-12);
        let q = ThetaPair::new(2.0 * PI, 0.0).unwrap();
        assert!((q.theta1 + 2.0 * PI).abs() < 1e-12);
        assert!(ThetaPair::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn grid_rejects_small_sizes() {
        assert!(MomentumGrid::new(7).is_err());
        let g = MomentumGrid::new(8).unwrap();
        assert_eq!(g.k(0), -PI);
        assert_eq!(g.mirror(0), 0);
        assert_eq!(g.mirror(4), 4);
        assert_eq!(g.mirror(1), 7);
    }

    #[test]
    fn shift_only_walk_is_diagonal() {
        let p = ThetaPair::new(0.0, 0.0).unwrap();
        for k in [-PI, -1.0, 0.0, 0.7, 2.9] {
            let u = step_unitary_k(&p, k);
            let expect = SpinMatrix::diag(C64::from_polar(1.0, -k), C64::from_polar(1.0, k));
            assert!(u.max_abs_diff(&expect) < 1e-15);
        }
    }

    #[test]
    fn flat_band_walk_is_momentum_independent() {
        let p = ThetaPair::flat_band();
        let expect = SpinMatrix::new(c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0));
        for k in MomentumGrid::new(64).unwrap().nodes() {
            assert!(step_unitary_k(&p, k).max_abs_diff(&expect) < 1e-15);
        }
    }

    #[test]
    fn step_matches_explicit_five_factor_product() {
        let (t1, t2, k) = (PI / 3.0, PI / 5.0, 0.7);
        // Oracle: each factor written out by hand.
        let (s1, c1) = (t1 / 4.0).sin_cos();
        let (s2, c2) = (t2 / 2.0).sin_cos();
        let r1 = [[c1, -s1], [s1, c1]];
        let r2 = [[c2, -s2], [s2, c2]];
        let e = |phi: f64| C64::from_polar(1.0, phi);
        let factors: [[[C64; 2]; 2]; 5] = [
            r1.map(|r| r.map(|x| c(x, 0.0))),
            [[ONE, ZERO], [ZERO, e(k)]],
            r2.map(|r| r.map(|x| c(x, 0.0))),
            [[e(-k), ZERO], [ZERO, ONE]],
            r1.map(|r| r.map(|x| c(x, 0.0))),
        ];
        let mut acc = [[ONE, ZERO], [ZERO, ONE]];
        for f in factors.iter() {
            let mut next = [[ZERO; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    next[i][j] = acc[i][0] * f[0][j] + acc[i][1] * f[1][j];
                }
            }
            acc = next;
        }
        let u = step_unitary_k(&ThetaPair::new(t1, t2).unwrap(), k);
        assert!(u.max_abs_diff(&SpinMatrix(acc)) < 1e-14);
    }

    #[test]
    fn effective_hamiltonian_examples() {
        let k = 0.3;
        let u = SpinMatrix::diag(C64::from_polar(1.0, -k), C64::from_polar(1.0, k));
        let b = effective_hamiltonian_k(&u).unwrap();
        assert!((b.energy - 0.3).abs() < 1e-14);
        assert!((b.n[2] - 1.0).abs() < 1e-14 && b.n[0].abs() < 1e-14 && b.n[1].abs() < 1e-14);

        let u = SpinMatrix::new(c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0));
        let b = effective_hamiltonian_k(&u).unwrap();
        assert!((b.energy - PI / 2.0).abs() < 1e-14);
        assert!((b.n[1] - 1.0).abs() < 1e-14);

        match effective_hamiltonian_k(&SpinMatrix::identity()) {
            Err(Error::GapClosure { energy, .. }) => assert_eq!(energy, 0.0),
            other => panic!("expected gap closure, got {other:?}"),
        }
        match effective_hamiltonian_k(&SpinMatrix::identity().scale(-1.0)) {
            Err(Error::GapClosure { energy, .. }) => assert!((energy - PI).abs() < 1e-12),
            other => panic!("expected gap closure, got {other:?}"),
        }
        assert!(matches!(effective_hamiltonian_k(&SpinMatrix::identity().scale(2.0)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn flat_band_field_and_gap() {
        let g = MomentumGrid::new(64).unwrap();
        let f = bloch_field(&ThetaPair::flat_band(), &g).unwrap();
        for p in &f.points {
            assert!((p.energy - PI / 2.0).abs() < 1e-14);
            assert!((p.n[1] - 1.0).abs() < 1e-14);
        }
        let rep = symmetry_check(&f);
        assert!((rep.gap_min - PI / 2.0).abs() < 1e-14);
        assert!(rep.chiral.ok && rep.phs.ok && rep.trs.ok);
        assert!((quasienergy_gap(&ThetaPair::flat_band(), &g) - PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn shift_only_walk_closes_gap_at_zero_momentum() {
        let g = MomentumGrid::new(64).unwrap();
        let p = ThetaPair::new(0.0, 0.0).unwrap();
        match bloch_field(&p, &g) {
            Err(Error::GapClosure { k, .. }) => assert!(k.abs() < 1e-15 || (k + PI).abs() < 1e-15),
            other => panic!("expected gap closure, got {other:?}"),
        }
        assert!(quasienergy_gap(&p, &g) < 1e-6);
    }

    #[test]
    fn chiral_negative_control() {
        let g = MomentumGrid::new(32).unwrap();
        let mut f = bloch_field(&ThetaPair::new(1.2, 0.4).unwrap(), &g).unwrap();
        assert!(symmetry_check(&f).chiral.ok);
        let p = &mut f.points[5];
        let s = (1.0f64 - 0.01).sqrt() / (p.n[1] * p.n[1] + p.n[2] * p.n[2]).sqrt();
        p.n = [0.1, p.n[1] * s, p.n[2] * s];
        let rep = symmetry_check(&f);
        assert!(!rep.chiral.ok);
        assert!((rep.chiral.deviation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn field_values_are_pointwise_across_grid_sizes() {
        let p = ThetaPair::new(0.9, -0.4).unwrap();
        let g = MomentumGrid::new(64).unwrap();
        let g2 = MomentumGrid::new(128).unwrap();
        let f = bloch_field(&p, &g).unwrap();
        let f2 = bloch_field(&p, &g2).unwrap();
        for j in 0..64 {
            let (a, b) = (f.points[j], f2.points[2 * j]);
            assert!((a.energy - b.energy).abs() < 1e-12);
            for i in 0..3 {
                assert!((a.n[i] - b.n[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lower_eigenvector_is_eigenvector() {
        for n in [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [0.6, 0.0, 0.8], [0.0, -0.6, -0.8]] {
            let v = lower_eigenvector(n);
            let hv = SpinMatrix::from_bloch(n).apply(&v);
            assert!((hv[0] + v[0]).norm() < 1e-14 && (hv[1] + v[1]).norm() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn step_is_unitary_and_reconstructs(t1 in -7.0f64..7.0, t2 in -7.0f64..7.0, j in 0usize..256) {
            let p = ThetaPair::new(t1, t2).unwrap();
            let g = MomentumGrid::new(256).unwrap();
            let u = step_unitary_k(&p, g.k(j));
            prop_assert!((u.dagger() * u).max_abs_diff(&SpinMatrix::identity()) < 1e-12);
            if let Ok(b) = effective_hamiltonian_k(&u) {
                prop_assert!(b.unitary().max_abs_diff(&u) < 1e-10);
                prop_assert!(b.n[0].abs() < 1e-9);
            }
        }

        #[test]
        fn symmetric_walks_have_all_three_symmetries(t1 in -6.0f64..6.0, t2 in -6.0f64..6.0) {
            let p = ThetaPair::new(t1, t2).unwrap();
            let g = MomentumGrid::new(64).unwrap();
            if let Ok(f) = bloch_field(&p, &g) {
                prop_assume!(f.gap_min() > 1e-3);
                let rep = symmetry_check(&f);
                prop_assert!(rep.chiral.ok, "chiral {:?}", rep.chiral);
                prop_assert!(rep.phs.ok, "phs {:?}", rep.phs);
                prop_assert!(rep.trs.ok, "trs {:?}", rep.trs);
            }
        }

        #[test]
        fn gap_is_stable_under_grid_refinement(t1 in -6.0f64..6.0, t2 in -6.0f64..6.0) {
            let p = ThetaPair::new(t1, t2).unwrap();
            let g = MomentumGrid::new(32).unwrap();
            let g2 = MomentumGrid::new(64).unwrap();
            let f: Vec<_> = bloch_points_lenient(&p, &g);
            let f2: Vec<_> = bloch_points_lenient(&p, &g2);
            for j in 0..32 {
                if let (Some(a), Some(b)) = (f[j], f2[2 * j]) {
                    prop_assert!((a.energy - b.energy).abs() < 1e-12);
                }
            }
        }
    }
}
