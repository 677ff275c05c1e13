//! Zero-temperature master equation for two atoms and one lossy field mode.
//!
//! ```text
//! dρ/dτ = −i[H, ρ] + γ₁ (2aρa† − a†aρ − ρa†a)
//! H     = ω_f a†a + (s_z1 + s_z2) + Σᵢ χᵢ (a s₊ᵢ + a† s₋ᵢ)
//! ```
//!
//! Time and frequencies are in units of the atomic frequency `ω_at`.
//!
//! # Basis
//!
//! Joint states are `|atom1⟩ ⊗ |atom2⟩ ⊗ |n⟩` with atomic order `(e, g)` and
//! Fock index `n = 0..=N_max`, so the flat index is
//! `(2·a₁ + a₂)(N_max + 1) + n` with `a = 0` for excited. Tracing out the
//! field leaves the 4×4 atomic matrix in the order `(ee, eg, ge, gg)`.
//!
//! # Phase convention
//!
//! The amplitudes of [`crate::lossless_dynamics`] follow `Ċ ∝ +iΔω C`, the
//! complex conjugate of the Schrödinger evolution under `H`. The pure state
//! matching `(C₁, C₂, C₃)` is therefore
//! `C₁*|eg,0⟩ + C₂*|ge,0⟩ − C₃*|gg,1⟩`; see [`JointDensityMatrix::from_amplitudes`].
//! Concurrence and photon numbers are the same in both conventions.

use std::io::{self, BufRead, Write};

use nalgebra::{DMatrix, Matrix4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lossless_dynamics::read_numeric_csv;
use crate::rk4;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Default photon cutoff: one level above what a single excitation reaches.
pub const DEFAULT_PHOTON_CUTOFF: usize = 2;

/// Runs abort when the smallest eigenvalue of ρ drops below this.
pub const POSITIVITY_ABORT: f64 = -1e-6;

/// Concurrence change tolerated by the step-halving check.
pub const HALVING_TOLERANCE: f64 = 1e-7;

/// Default integration step in units of `1/ω_at`.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Model parameters. `ω_at = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemSpec {
    pub omega_f: f64,
    pub chi1: f64,
    pub chi2: f64,
    pub gamma1: f64,
    pub photon_cutoff: usize,
}

impl SystemSpec {
    pub fn new(omega_f: f64, chi1: f64, chi2: f64, gamma1: f64, photon_cutoff: usize) -> Result<Self> {
        if photon_cutoff < 1 {
            return Err(Error::Cutoff(photon_cutoff));
        }
        if !(gamma1 >= 0.0) || !gamma1.is_finite() {
            return Err(Error::InvalidArgument(format!("field decay rate must be finite and >= 0, got {gamma1}")));
        }
        for (name, v) in [("omega_f", omega_f), ("chi1", chi1), ("chi2", chi2)] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(Self { omega_f, chi1, chi2, gamma1, photon_cutoff })
    }

    /// From the detuning `Δω = ω_f − ω_at` instead of `ω_f`.
    pub fn from_detuning(detuning: f64, chi1: f64, chi2: f64, gamma1: f64, photon_cutoff: usize) -> Result<Self> {
        Self::new(1.0 + detuning, chi1, chi2, gamma1, photon_cutoff)
    }

    pub fn dim(&self) -> usize {
        4 * (self.photon_cutoff + 1)
    }

    pub fn index(&self, atom1: usize, atom2: usize, n: usize) -> usize {
        (2 * atom1 + atom2) * (self.photon_cutoff + 1) + n
    }
}

/// `γ₁` as half the full width at half maximum of the field resonance,
/// expressed in units of `ω_at = ω_f/(1 + Δω)`.
pub fn gamma_from_bandwidth(fwhm_hz: f64, field_frequency_hz: f64, detuning: f64) -> Result<f64> {
    if !(fwhm_hz > 0.0 && field_frequency_hz > 0.0) || !(1.0 + detuning > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need positive bandwidth, field frequency and ω_f/ω_at, got {fwhm_hz}, {field_frequency_hz}, {detuning}"
        )));
    }
    let atomic_hz = field_frequency_hz / (1.0 + detuning);
    Ok(0.5 * fwhm_hz / atomic_hz)
}

/// Sparse matrix as `(row, column, value)` triplets.
pub type Triplets = Vec<(usize, usize, Complex64)>;

/// Hamiltonian and jump operator in the fixed joint basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub spec: SystemSpec,
    pub hamiltonian: Triplets,
    /// Annihilation operator `a`.
    pub annihilation: Triplets,
    /// `H − iγ₁ a†a`.
    effective: Triplets,
}

fn to_dense(dim: usize, t: &Triplets) -> DMatrix<Complex64> {
    let mut m = DMatrix::zeros(dim, dim);
    for &(i, j, v) in t {
        m[(i, j)] += v;
    }
    m
}

impl Generator {
    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn hamiltonian_dense(&self) -> DMatrix<Complex64> {
        to_dense(self.dim(), &self.hamiltonian)
    }

    /// `N_exc = a†a + s_z1 + s_z2 + 1`, diagonal in the basis.
    pub fn excitation_number_dense(&self) -> DMatrix<Complex64> {
        let spec = self.spec;
        let mut m = DMatrix::zeros(spec.dim(), spec.dim());
        for a1 in 0..2 {
            for a2 in 0..2 {
                for n in 0..=spec.photon_cutoff {
                    let excited = (a1 == 0) as usize + (a2 == 0) as usize;
                    let i = spec.index(a1, a2, n);
                    m[(i, i)] = Complex64::new((n + excited) as f64, 0.0);
                }
            }
        }
        m
    }

    /// Frobenius norm of `[H, N_exc]`.
    pub fn excitation_commutator_norm(&self) -> f64 {
        let h = self.hamiltonian_dense();
        let n = self.excitation_number_dense();
        (&h * &n - &n * &h).norm()
    }

    /// `L(ρ) = −i(H_eff ρ − ρ H_eff†) + 2γ₁ aρa†` on row-major storage.
    pub fn apply(&self, rho: &[Complex64], out: &mut [Complex64]) {
        let d = self.dim();
        out.iter_mut().for_each(|v| *v = ZERO);
        for &(i, k, h) in &self.effective {
            let hi = -I * h;
            let hc = I * h.conj();
            for j in 0..d {
                // −i H_eff[i,k] ρ[k,j]
                out[i * d + j] += hi * rho[k * d + j];
                // +i ρ[j,k] conj(H_eff[i,k]) = +i ρ[j,k] H_eff†[k,i]
                out[j * d + i] += hc * rho[j * d + k];
            }
        }
        let g2 = 2.0 * self.spec.gamma1;
        if g2 != 0.0 {
            for &(i, k, a) in &self.annihilation {
                for &(j, l, b) in &self.annihilation {
                    // a[i,k] ρ[k,l] conj(a[j,l]) → (aρa†)[i,j]
                    out[i * d + j] += g2 * a * b.conj() * rho[k * d + l];
                }
            }
        }
    }
}

/// The generator restricted to the upper triangle `i ≤ j` of ρ.
///
/// Entries below the diagonal are conjugates of stored ones, so each term
/// of `L(ρ)[i, j]` is a coefficient times either a stored entry or its
/// conjugate. Integrating only these `d(d+1)/2` entries keeps ρ exactly
/// Hermitian off the diagonal.
#[derive(Debug, Clone)]
struct PackedGenerator {
    dim: usize,
    /// `(output, input, coefficient)` acting on stored entries.
    direct: Vec<(u32, u32, Complex64)>,
    /// The same acting on conjugated stored entries.
    conjugated: Vec<(u32, u32, Complex64)>,
    /// Packed positions of the diagonal.
    diagonal: Vec<usize>,
}

impl PackedGenerator {
    fn new(generator: &Generator) -> Self {
        let d = generator.dim();
        let pos = |i: usize, j: usize| i * d - i * (i + 1) / 2 + j;
        let heff = to_dense(d, &generator.effective);
        let a = to_dense(d, &generator.annihilation);
        let g2 = 2.0 * generator.spec.gamma1;
        let mut direct = Vec::new();
        let mut conjugated = Vec::new();
        let mut push = |out: usize, k: usize, l: usize, c: Complex64| {
            if c == ZERO {
                return;
            }
            if k <= l {
                direct.push((out as u32, pos(k, l) as u32, c));
            } else {
                conjugated.push((out as u32, pos(l, k) as u32, c));
            }
        };
        for i in 0..d {
            for j in i..d {
                let out = pos(i, j);
                for k in 0..d {
                    // −i H_eff[i,k] ρ[k,j] + i ρ[i,k] conj(H_eff[j,k])
                    push(out, k, j, -I * heff[(i, k)]);
                    push(out, i, k, I * heff[(j, k)].conj());
                    if g2 != 0.0 {
                        for l in 0..d {
                            push(out, k, l, g2 * a[(i, k)] * a[(j, l)].conj());
                        }
                    }
                }
            }
        }
        let diagonal = (0..d).map(|i| pos(i, i)).collect();
        Self { dim: d, direct, conjugated, diagonal }
    }

    fn len(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    fn apply(&self, rho: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|v| *v = ZERO);
        for &(o, p, c) in &self.direct {
            out[o as usize] += c * rho[p as usize];
        }
        for &(o, p, c) in &self.conjugated {
            out[o as usize] += c * rho[p as usize].conj();
        }
    }

    fn pack(&self, m: &DMatrix<Complex64>) -> Vec<Complex64> {
        let d = self.dim;
        let mut v = Vec::with_capacity(self.len());
        for i in 0..d {
            for j in i..d {
                v.push(m[(i, j)]);
            }
        }
        v
    }

    fn unpack(&self, v: &[Complex64]) -> DMatrix<Complex64> {
        let d = self.dim;
        let mut m = DMatrix::zeros(d, d);
        let mut p = 0;
        for i in 0..d {
            for j in i..d {
                m[(i, j)] = v[p];
                m[(j, i)] = v[p].conj();
                p += 1;
            }
        }
        m
    }
}

/// Assembles the Hamiltonian and jump operator.
pub fn build_generator(spec: SystemSpec) -> Result<Generator> {
    if spec.photon_cutoff < 1 {
        return Err(Error::Cutoff(spec.photon_cutoff));
    }
    let mut h = Triplets::new();
    let mut a = Triplets::new();
    let chis = [spec.chi1, spec.chi2];
    for a1 in 0..2 {
        for a2 in 0..2 {
            for n in 0..=spec.photon_cutoff {
                let i = spec.index(a1, a2, n);
                let sz = |s: usize| if s == 0 { 0.5 } else { -0.5 };
                let diag = spec.omega_f * n as f64 + sz(a1) + sz(a2);
                if diag != 0.0 {
                    h.push((i, i, Complex64::new(diag, 0.0)));
                }
                if n >= 1 {
                    a.push((spec.index(a1, a2, n - 1), i, Complex64::new((n as f64).sqrt(), 0.0)));
                }
            }
        }
    }
    // χ a s₊: |g, n⟩ → √n |e, n−1⟩ on the coupled atom, plus the Hermitian
    // conjugate.
    for n in 1..=spec.photon_cutoff {
        let amp = (n as f64).sqrt();
        for other in 0..2 {
            let pairs = [
                (spec.index(0, other, n - 1), spec.index(1, other, n), chis[0]),
                (spec.index(other, 0, n - 1), spec.index(other, 1, n), chis[1]),
            ];
            for (up, down, chi) in pairs {
                if chi != 0.0 {
                    let v = Complex64::new(chi * amp, 0.0);
                    h.push((up, down, v));
                    h.push((down, up, v));
                }
            }
        }
    }
    let mut effective = h.clone();
    if spec.gamma1 != 0.0 {
        for n in 1..=spec.photon_cutoff {
            for a1 in 0..2 {
                for a2 in 0..2 {
                    let i = spec.index(a1, a2, n);
                    effective.push((i, i, Complex64::new(0.0, -spec.gamma1 * n as f64)));
                }
            }
        }
    }
    let generator = Generator { spec, hamiltonian: h, annihilation: a, effective };
    let commutator = generator.excitation_commutator_norm();
    if commutator > 1e-12 {
        return Err(Error::Conditioning(format!("Hamiltonian does not conserve excitation number ({commutator:e})")));
    }
    Ok(generator)
}

/// Smallest eigenvalue of a Hermitian matrix.
fn min_eigenvalue(m: &DMatrix<Complex64>) -> f64 {
    m.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Joint atom–field density matrix in the basis described in the module
/// documentation.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDensityMatrix {
    photon_cutoff: usize,
    matrix: DMatrix<Complex64>,
}

impl JointDensityMatrix {
    /// Validates Hermiticity (1e−10), unit trace (1e−8) and positivity
    /// (smallest eigenvalue ≥ −1e−8).
    pub fn new(photon_cutoff: usize, matrix: DMatrix<Complex64>) -> Result<Self> {
        let dim = 4 * (photon_cutoff + 1);
        if photon_cutoff < 1 {
            return Err(Error::Cutoff(photon_cutoff));
        }
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::InvalidArgument(format!(
                "density matrix must be {dim}×{dim} for cutoff {photon_cutoff}, got {}×{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let rho = Self { photon_cutoff, matrix };
        let herm = rho.hermiticity_defect();
        if herm > 1e-10 {
            return Err(Error::InvalidArgument(format!("density matrix not Hermitian ({herm:e})")));
        }
        let tr = rho.trace();
        if (tr - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!("density matrix trace {tr} differs from 1")));
        }
        let min = rho.min_eigenvalue();
        if min < -1e-8 {
            return Err(Error::NotPositive(min));
        }
        Ok(rho)
    }

    /// `|ψ⟩⟨ψ|` for a state vector in the joint basis, normalised.
    pub fn pure(photon_cutoff: usize, psi: &[Complex64]) -> Result<Self> {
        let norm = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidArgument("state vector is zero".into()));
        }
        let v = nalgebra::DVector::from_iterator(psi.len(), psi.iter().map(|c| c / norm));
        Self::new(photon_cutoff, &v * v.adjoint())
    }

    /// Basis state `|a₁ a₂, n⟩`, atoms `0 = e`, `1 = g`.
    pub fn basis_state(photon_cutoff: usize, atom1: usize, atom2: usize, n: usize) -> Result<Self> {
        if atom1 > 1 || atom2 > 1 || n > photon_cutoff {
            return Err(Error::InvalidArgument(format!("no basis state ({atom1}, {atom2}, {n})")));
        }
        let dim = 4 * (photon_cutoff + 1);
        let mut psi = vec![ZERO; dim];
        psi[(2 * atom1 + atom2) * (photon_cutoff + 1) + n] = Complex64::new(1.0, 0.0);
        Self::pure(photon_cutoff, &psi)
    }

    /// Pure single-excitation state for amplitudes `(C₁, C₂, C₃)` in the
    /// convention of [`crate::lossless_dynamics`].
    pub fn from_amplitudes(photon_cutoff: usize, c: [Complex64; 3]) -> Result<Self> {
        let dim = 4 * (photon_cutoff + 1);
        let stride = photon_cutoff + 1;
        let mut psi = vec![ZERO; dim];
        psi[stride] = c[0].conj();
        psi[2 * stride] = c[1].conj();
        psi[3 * stride + 1] = -c[2].conj();
        Self::pure(photon_cutoff, &psi)
    }

    pub fn photon_cutoff(&self) -> usize {
        self.photon_cutoff
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }

    /// Total population of Fock states with `n > 1`.
    pub fn population_above_one_photon(&self) -> f64 {
        let stride = self.photon_cutoff + 1;
        (0..self.matrix.nrows()).filter(|i| i % stride > 1).map(|i| self.matrix[(i, i)].re).sum()
    }

}

/// 4×4 atomic density matrix in the order `(ee, eg, ge, gg)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedAtomicState {
    pub matrix: Matrix4<Complex64>,
}

/// `ρ_a = Tr_field ρ`.
pub fn partial_trace_field(rho: &JointDensityMatrix) -> ReducedAtomicState {
    let stride = rho.photon_cutoff + 1;
    let mut m = Matrix4::zeros();
    for a in 0..4 {
        for b in 0..4 {
            m[(a, b)] = (0..stride).map(|n| rho.matrix[(a * stride + n, b * stride + n)]).sum();
        }
    }
    ReducedAtomicState { matrix: m }
}

/// Tolerance on negative eigenvalues accepted by [`wootters_concurrence`].
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Wootters concurrence `max(0, λ₁ − λ₂ − λ₃ − λ₄)`.
///
/// The `λᵢ` are the square roots of the eigenvalues of `ρ ρ̃` with
/// `ρ̃ = (σy⊗σy) ρ* (σy⊗σy)`. They are computed as the singular values of
/// `Wᵀ (σy⊗σy) W` with `ρ = W W†`, which avoids forming the non-Hermitian
/// product.
pub fn wootters_concurrence(rho_a: &ReducedAtomicState) -> Result<f64> {
    let eig = rho_a.matrix.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE {
        return Err(Error::NotPositive(min));
    }
    let mut w = eig.eigenvectors;
    for k in 0..4 {
        let s = eig.eigenvalues[k].max(0.0).sqrt();
        for i in 0..4 {
            w[(i, k)] *= s;
        }
    }
    let mut yy = Matrix4::<Complex64>::zeros();
    // σy⊗σy in (ee, eg, ge, gg): anti-diagonal (−1, 1, 1, −1).
    yy[(0, 3)] = Complex64::new(-1.0, 0.0);
    yy[(1, 2)] = Complex64::new(1.0, 0.0);
    yy[(2, 1)] = Complex64::new(1.0, 0.0);
    yy[(3, 0)] = Complex64::new(-1.0, 0.0);
    let r = w.transpose() * yy * w;
    let mut sv: Vec<f64> = r.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok((sv[0] - sv[1] - sv[2] - sv[3]).max(0.0))
}

/// Closed form for X-shaped states:
/// `2 max(0, |ρ_eg,ge| − √(ρ_ee ρ_gg), |ρ_ee,gg| − √(ρ_eg ρ_ge))`.
pub fn x_state_concurrence(rho_a: &ReducedAtomicState) -> f64 {
    let m = &rho_a.matrix;
    let p = |i: usize| m[(i, i)].re.max(0.0);
    let a = m[(1, 2)].norm() - (p(0) * p(3)).sqrt();
    let b = m[(0, 3)].norm() - (p(1) * p(2)).sqrt();
    2.0 * a.max(b).max(0.0)
}

/// `Tr(ρ a†a)`.
pub fn mean_photon(rho: &JointDensityMatrix) -> f64 {
    let stride = rho.photon_cutoff + 1;
    (0..rho.matrix.nrows()).map(|i| (i % stride) as f64 * rho.matrix[(i, i)].re).sum()
}

/// `½ Σ |eig(ρ − σ)|`.
pub fn trace_distance(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    0.5 * (a - b).symmetric_eigenvalues().iter().map(|v| v.abs()).sum::<f64>()
}

/// Observables recorded at each sample of [`evolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTrajectory {
    pub times: Vec<f64>,
    pub concurrence: Vec<f64>,
    /// Concurrence from [`x_state_concurrence`], as a cross-check.
    pub concurrence_x: Vec<f64>,
    pub mean_photon: Vec<f64>,
    pub trace: Vec<f64>,
    pub min_eigenvalue: Vec<f64>,
    /// Population of Fock states with `n > 1`.
    pub leakage: Vec<f64>,
    pub reduced: Vec<ReducedAtomicState>,
    /// Full joint states, when requested.
    pub states: Option<Vec<JointDensityMatrix>>,
    /// Largest Hermiticity defect seen before any re-symmetrisation step.
    pub max_hermiticity_defect: f64,
}

impl DensityTrajectory {
    pub const CSV_HEADER: &'static str = "tau,concurrence,tangle,mean_photon,trace,min_eigenvalue";

    pub fn tangle(&self) -> Vec<f64> {
        self.concurrence.iter().map(|c| c * c).collect()
    }

    pub fn max_trace_drift(&self) -> f64 {
        self.trace.iter().map(|t| (t - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for i in 0..self.times.len() {
            let c = self.concurrence[i];
            writeln!(
                out,
                "{:?},{:?},{:?},{:?},{:?},{:?}",
                self.times[i],
                c,
                c * c,
                self.mean_photon[i],
                self.trace[i],
                self.min_eigenvalue[i]
            )?;
        }
        Ok(())
    }

    /// Rows of `(τ, C, C², ⟨n⟩, Tr ρ, λ_min)` from a CSV written by
    /// [`DensityTrajectory::write_csv`].
    pub fn read_csv_rows<R: BufRead>(input: R) -> io::Result<Vec<[f64; 6]>> {
        Ok(read_numeric_csv(input, Self::CSV_HEADER)?
            .into_iter()
            .map(|r| [r[0], r[1], r[2], r[3], r[4], r[5]])
            .collect())
    }

    /// Flattened states: `tau,i,j,re,im` per nonzero entry.
    pub fn write_states_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "tau,row,col,re,im")?;
        if let Some(states) = &self.states {
            for (t, s) in self.times.iter().zip(states) {
                let m = s.matrix();
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        let v = m[(i, j)];
                        if v != ZERO {
                            writeln!(out, "{t:?},{i},{j},{:?},{:?}", v.re, v.im)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Settings for [`evolve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub dt: f64,
    /// Keep every sampled joint state.
    pub keep_states: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { dt: DEFAULT_STEP, keep_states: false }
    }
}

/// Fixed-step RK4 integration of the master equation.
///
/// After every step ρ is replaced by `(ρ + ρ†)/2`; the trace is left alone
/// so that its drift stays visible. Only the upper triangle is propagated,
/// so the projection reduces to dropping imaginary parts on the diagonal,
/// whose size is recorded as the Hermiticity defect. At each sample the smallest eigenvalue
/// is computed and the run aborts if it falls below [`POSITIVITY_ABORT`].
pub fn evolve(
    spec: SystemSpec,
    rho0: &JointDensityMatrix,
    time_grid: &[f64],
    options: EvolveOptions,
) -> Result<DensityTrajectory> {
    if rho0.photon_cutoff != spec.photon_cutoff {
        return Err(Error::InvalidArgument(format!(
            "initial state cutoff {} does not match the system cutoff {}",
            rho0.photon_cutoff, spec.photon_cutoff
        )));
    }
    crate::lossless_dynamics::validate_time_grid(time_grid)?;
    if !(options.dt > 0.0) || !options.dt.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {}", options.dt)));
    }
    let generator = build_generator(spec)?;
    let packed = PackedGenerator::new(&generator);
    let n = time_grid.len();
    let mut traj = DensityTrajectory {
        times: time_grid.to_vec(),
        concurrence: Vec::with_capacity(n),
        concurrence_x: Vec::with_capacity(n),
        mean_photon: Vec::with_capacity(n),
        trace: Vec::with_capacity(n),
        min_eigenvalue: Vec::with_capacity(n),
        leakage: Vec::with_capacity(n),
        reduced: Vec::with_capacity(n),
        states: options.keep_states.then(|| Vec::with_capacity(n)),
        max_hermiticity_defect: 0.0,
    };
    let mut herm = 0.0f64;
    rk4::integrate(
        |_, rho, out| packed.apply(rho, out),
        &packed.pack(&rho0.matrix),
        time_grid,
        options.dt,
        |rho| {
            for &p in &packed.diagonal {
                // (ρ + ρ†)/2 on the diagonal; the defect is 2|Im ρᵢᵢ|.
                herm = herm.max(2.0 * rho[p].im.abs());
                rho[p].im = 0.0;
            }
        },
        |_, t, rho| {
            let state = JointDensityMatrix { photon_cutoff: spec.photon_cutoff, matrix: packed.unpack(rho) };
            let min = state.min_eigenvalue();
            if min < POSITIVITY_ABORT {
                return Err(Error::PositivityViolation { tau: t, min_eigenvalue: min });
            }
            let reduced = partial_trace_field(&state);
            traj.concurrence.push(wootters_concurrence(&reduced)?);
            traj.concurrence_x.push(x_state_concurrence(&reduced));
            traj.mean_photon.push(mean_photon(&state));
            traj.trace.push(state.trace());
            traj.min_eigenvalue.push(min);
            traj.leakage.push(state.population_above_one_photon());
            traj.reduced.push(reduced);
            if let Some(states) = traj.states.as_mut() {
                states.push(state);
            }
            Ok(())
        },
    )?;
    traj.max_hermiticity_defect = herm;
    Ok(traj)
}

/// Sup-norm change in concurrence when the step is halved, on `time_grid`.
/// Logs a warning above [`HALVING_TOLERANCE`].
pub fn step_halving_change(
    spec: SystemSpec,
    rho0: &JointDensityMatrix,
    time_grid: &[f64],
    dt: f64,
) -> Result<f64> {
    let coarse = evolve(spec, rho0, time_grid, EvolveOptions { dt, keep_states: false })?;
    let fine = evolve(spec, rho0, time_grid, EvolveOptions { dt: dt / 2.0, keep_states: false })?;
    let change = coarse
        .concurrence
        .iter()
        .zip(&fine.concurrence)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if change > HALVING_TOLERANCE {
        log::warn!("master-equation step {dt} not converged: halving changes the concurrence by {change:e}");
    }
    Ok(change)
}
