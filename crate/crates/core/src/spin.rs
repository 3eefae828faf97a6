//! Dense 2×2 complex matrices for the walker's spin sector.
//!
//! Everything per-momentum in this crate (step operators, Bloch
//! Hamiltonians, density matrices, connections) lives in this small
//! fixed-size type so the hot loops stay allocation-free.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64 as C64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Row-major 2×2 complex matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpinMatrix(pub [[C64; 2]; 2]);

/// Two-component spinor in the {|H⟩, |V⟩} basis.
pub type Spinor = [C64; 2];

impl SpinMatrix {
    pub const fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        SpinMatrix([[a, b], [c, d]])
    }

    pub const fn zero() -> Self {
        SpinMatrix([[ZERO, ZERO], [ZERO, ZERO]])
    }

    pub const fn identity() -> Self {
        SpinMatrix([[ONE, ZERO], [ZERO, ONE]])
    }

    pub const fn sigma_x() -> Self {
        SpinMatrix([[ZERO, ONE], [ONE, ZERO]])
    }

    pub fn sigma_y() -> Self {
        SpinMatrix([[ZERO, -I], [I, ZERO]])
    }

    pub fn sigma_z() -> Self {
        SpinMatrix([[ONE, ZERO], [ZERO, -ONE]])
    }

    pub fn paulis() -> [SpinMatrix; 3] {
        [Self::sigma_x(), Self::sigma_y(), Self::sigma_z()]
    }

    pub fn diag(a: C64, d: C64) -> Self {
        SpinMatrix([[a, ZERO], [ZERO, d]])
    }

    /// `n·σ` for a real 3-vector.
    pub fn from_bloch(n: [f64; 3]) -> Self {
        SpinMatrix([[C64::new(n[2], 0.0), C64::new(n[0], -n[1])], [C64::new(n[0], n[1]), C64::new(-n[2], 0.0)]])
    }

    /// `½(1 + r·σ)`: the density matrix with Bloch vector `r`.
    pub fn density_from_bloch(r: [f64; 3]) -> Self {
        (Self::identity() + Self::from_bloch(r)).scale(0.5)
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn outer(psi: &Spinor) -> Self {
        Self::outer2(psi, psi)
    }

    /// `|a⟩⟨b|`.
    pub fn outer2(a: &Spinor, b: &Spinor) -> Self {
        SpinMatrix([[a[0] * b[0].conj(), a[0] * b[1].conj()], [a[1] * b[0].conj(), a[1] * b[1].conj()]])
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[i][j]
    }

    pub fn trace(&self) -> C64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> C64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn dagger(&self) -> Self {
        let m = &self.0;
        SpinMatrix([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn conj(&self) -> Self {
        let m = &self.0;
        SpinMatrix([[m[0][0].conj(), m[0][1].conj()], [m[1][0].conj(), m[1][1].conj()]])
    }

    pub fn scale(&self, s: f64) -> Self {
        self.scale_c(C64::new(s, 0.0))
    }

    pub fn scale_c(&self, s: C64) -> Self {
        let m = &self.0;
        SpinMatrix([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn apply(&self, v: &Spinor) -> Spinor {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    pub fn commutator(&self, other: &Self) -> Self {
        *self * *other - *other * *self
    }

    /// Frobenius norm.
    pub fn norm_fro(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Spectral (operator 2-) norm.
    pub fn norm_op(&self) -> f64 {
        // Largest singular value from the eigenvalues of M†M.
        let g = self.dagger() * *self;
        let a = g.0[0][0].re;
        let d = g.0[1][1].re;
        let b = g.0[0][1].norm();
        let mean = 0.5 * (a + d);
        let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        (mean + disc).max(0.0).sqrt()
    }

    /// Max deviation from Hermiticity, `‖M − M†‖_F`.
    pub fn hermiticity_defect(&self) -> f64 {
        (*self - self.dagger()).norm_fro()
    }

    /// `Re Tr(σ_a M)`; for a density matrix, `r` in `ρ = ½(1 + r·σ)`.
    pub fn bloch_vector(&self) -> [f64; 3] {
        let m = &self.0;
        [(m[0][1] + m[1][0]).re, (m[1][0] - m[0][1]).im, (m[0][0] - m[1][1]).re]
    }

    /// Eigenvalues of a Hermitian matrix in ascending order.
    pub fn eigvals_hermitian(&self) -> [f64; 2] {
        let a = self.0[0][0].re;
        let d = self.0[1][1].re;
        let b = self.0[0][1].norm();
        let mean = 0.5 * (a + d);
        let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        [mean - disc, mean + disc]
    }

    /// Matrix exponential of an arbitrary 2×2 matrix.
    ///
    /// Uses `exp(M) = e^{τ}[cosh(s) I + sinh(s)/s (M − τ I)]`, with `τ = Tr M / 2`
    /// and `s² = −det(M − τ I)`.
    pub fn expm(&self) -> Self {
        let tau = self.trace() * 0.5;
        let b = *self - Self::identity().scale_c(tau);
        let s2 = -b.det();
        let s = s2.sqrt();
        let (ch, shc) = if s.norm() < 1e-4 {
            // Taylor series keeps sinh(s)/s accurate near s = 0.
            (ONE + s2 * 0.5 + s2 * s2 / 24.0, ONE + s2 / 6.0 + s2 * s2 / 120.0)
        } else {
            (s.cosh(), s.sinh() / s)
        };
        (Self::identity().scale_c(ch) + b.scale_c(shc)).scale_c(tau.exp())
    }

    /// Principal square root of a positive semidefinite Hermitian matrix.
    ///
    /// For 2×2 PSD matrices `√A = (A + √det A · I) / √(Tr A + 2√det A)`.
    pub fn sqrt_psd(&self) -> Self {
        let det = self.det().re.max(0.0);
        let sd = det.sqrt();
        let t = (self.trace().re + 2.0 * sd).max(0.0).sqrt();
        if t == 0.0 {
            return Self::zero();
        }
        (*self + Self::identity().scale(sd)).scale(1.0 / t)
    }

    /// Unitary factor `W` of the left polar decomposition `M = P W`, `P = √(M M†)`.
    ///
    /// Returns `None` when `M` is singular.
    pub fn polar_unitary(&self) -> Option<Self> {
        let det = self.det();
        if det.norm() < 1e-300 {
            return None;
        }
        // With M = A Σ B† and u = det M / |det M|, M + u·adj(M)† = (σ₁ + σ₂) A B†.
        let u = det / det.norm();
        let adj_dag = SpinMatrix([[self.0[1][1].conj(), -self.0[1][0].conj()], [-self.0[0][1].conj(), self.0[0][0].conj()]]);
        let x = *self + adj_dag.scale_c(u);
        let nrm = (x.det() / u).sqrt();
        if nrm.norm() < 1e-300 {
            return None;
        }
        Some(x.scale_c(nrm.inv()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0.iter().flatten().zip(other.0.iter().flatten()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

impl Add for SpinMatrix {
    type Output = SpinMatrix;
    fn add(self, o: SpinMatrix) -> SpinMatrix {
        let (a, b) = (&self.0, &o.0);
        SpinMatrix([[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]])
    }
}

impl AddAssign for SpinMatrix {
    fn add_assign(&mut self, o: SpinMatrix) {
        *self = *self + o;
    }
}

impl Sub for SpinMatrix {
    type Output = SpinMatrix;
    fn sub(self, o: SpinMatrix) -> SpinMatrix {
        let (a, b) = (&self.0, &o.0);
        SpinMatrix([[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]])
    }
}

impl Neg for SpinMatrix {
    type Output = SpinMatrix;
    fn neg(self) -> SpinMatrix {
        self.scale(-1.0)
    }
}

impl Mul for SpinMatrix {
    type Output = SpinMatrix;
    fn mul(self, o: SpinMatrix) -> SpinMatrix {
        let (a, b) = (&self.0, &o.0);
        SpinMatrix([
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ])
    }
}

/// Inner product `⟨a|b⟩`.
pub fn inner(a: &Spinor, b: &Spinor) -> C64 {
    a[0].conj() * b[0] + a[1].conj() * b[1]
}

pub fn spinor_norm(a: &Spinor) -> f64 {
    (a[0].norm_sqr() + a[1].norm_sqr()).sqrt()
}
