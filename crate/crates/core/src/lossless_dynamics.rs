//! Single-excitation dynamics of two atoms sharing one lossless field mode.
//!
//! The state is `C₁|e₁g₂,0⟩ + C₂|g₁e₂,0⟩ + C₃|g₁g₂,1⟩`. Eliminating the field
//! leaves the second-order system `q̈ − iΔω q̇ + A q = 0` for `q = (C₁, C₂)`,
//! where `A` is the coupling matrix and `Δω = ω_f − ω_at`. Time is the
//! dimensionless `τ = ω_at·t`, and every frequency is in units of `ω_at`.
//!
//! Three solvers are provided:
//!
//! * [`solve_factored`], the closed form for rank-one couplings
//!   `A(i, j) = χᵢχⱼ`;
//! * [`solve_general`], a normal-mode solution for any positive
//!   semidefinite `A`;
//! * [`ode_oracle`], direct RK4 integration of the first-order system, used
//!   as ground truth.
//!
//! ```
//! use microsphere_qed::lossless_dynamics::{solve_factored, InitialExcitation};
//!
//! let times: Vec<f64> = (0..=100).map(|i| i as f64).collect();
//! let traj = solve_factored(0.254, 0.151, 0.5, InitialExcitation::Atom2, &times).unwrap();
//! let c = traj.concurrence_series();
//! assert!(c.concurrence.iter().all(|&x| (0.0..=1.0).contains(&x)));
//! ```

use std::io::{self, BufRead, Write};

use nalgebra::Matrix2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layered_green::CouplingMatrix;
use crate::rk4;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Norm conservation tolerance for trajectories.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Largest acceptable condition number of the mode-amplitude system.
pub const MAX_CONDITION: f64 = 1e12;

/// Tolerance of the oracle's step-halving check.
pub const HALVING_TOLERANCE: f64 = 1e-8;

/// Which atom starts excited, i.e. the selector `λ ∈ {0, 1}` with
/// `C₁(0) = λ`, `C₂(0) = 1 − λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitialExcitation {
    /// `λ = 1`.
    Atom1,
    /// `λ = 0`.
    Atom2,
}

impl InitialExcitation {
    pub fn from_lambda(lambda: u8) -> Result<Self> {
        match lambda {
            1 => Ok(Self::Atom1),
            0 => Ok(Self::Atom2),
            other => Err(Error::InvalidArgument(format!("lambda must be 0 or 1, got {other}"))),
        }
    }

    pub fn lambda(self) -> u8 {
        match self {
            Self::Atom1 => 1,
            Self::Atom2 => 0,
        }
    }

    /// `(C₁(0), C₂(0))`.
    pub fn amplitudes(self) -> [f64; 2] {
        match self {
            Self::Atom1 => [1.0, 0.0],
            Self::Atom2 => [0.0, 1.0],
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            Self::Atom1 => Self::Atom2,
            Self::Atom2 => Self::Atom1,
        }
    }
}

/// Checks that `times` starts at 0 and strictly increases.
pub fn validate_time_grid(times: &[f64]) -> Result<()> {
    match times.first() {
        None => return Err(Error::InvalidArgument("time grid is empty".into())),
        Some(&t0) if t0 != 0.0 => {
            return Err(Error::InvalidArgument(format!("time grid must start at 0, starts at {t0}")));
        }
        _ => {}
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("time grid contains a non-finite value".into()));
    }
    if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("time grid not strictly increasing at {} -> {}", w[0], w[1])));
    }
    Ok(())
}

/// `samples` evenly spaced times on `[0, t_max]`.
pub fn uniform_time_grid(t_max: f64, samples: usize) -> Result<Vec<f64>> {
    if samples == 1 {
        return Ok(vec![0.0]);
    }
    if samples == 0 || !(t_max > 0.0) || !t_max.is_finite() {
        return Err(Error::InvalidArgument(format!("need t_max > 0 and samples >= 1, got {t_max}, {samples}")));
    }
    let step = t_max / (samples - 1) as f64;
    Ok((0..samples).map(|i| if i == samples - 1 { t_max } else { step * i as f64 }).collect())
}

/// Inputs of a single-excitation run.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsParams {
    coupling: CouplingMatrix,
    detuning: f64,
    initial: InitialExcitation,
    time_grid: Vec<f64>,
}

impl DynamicsParams {
    pub fn new(
        coupling: CouplingMatrix,
        detuning: f64,
        initial: InitialExcitation,
        time_grid: Vec<f64>,
    ) -> Result<Self> {
        if !detuning.is_finite() {
            return Err(Error::InvalidArgument(format!("detuning must be finite, got {detuning}")));
        }
        validate_time_grid(&time_grid)?;
        Ok(Self { coupling, detuning, initial, time_grid })
    }

    pub fn coupling(&self) -> &CouplingMatrix {
        &self.coupling
    }

    pub fn detuning(&self) -> f64 {
        self.detuning
    }

    pub fn initial(&self) -> InitialExcitation {
        self.initial
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }
}

/// Amplitudes `C₁, C₂, C₃` sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeTrajectory {
    pub times: Vec<f64>,
    pub c1: Vec<Complex64>,
    pub c2: Vec<Complex64>,
    pub c3: Vec<Complex64>,
    /// `|C₁|² + |C₂|² + |C₃|²` at each sample.
    pub norm: Vec<f64>,
}

/// Concurrence `2|C₁C₂|`, tangle and mean photon number `|C₃|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcurrenceSeries {
    pub concurrence: Vec<f64>,
    pub tangle: Vec<f64>,
    pub mean_photon: Vec<f64>,
}

impl AmplitudeTrajectory {
    pub const CSV_HEADER: &'static str = "tau,re_c1,im_c1,re_c2,im_c2,re_c3,im_c3,concurrence,tangle,mean_photon";

    pub fn from_amplitudes(times: Vec<f64>, c1: Vec<Complex64>, c2: Vec<Complex64>, c3: Vec<Complex64>) -> Self {
        let norm = c1
            .iter()
            .zip(&c2)
            .zip(&c3)
            .map(|((a, b), c)| a.norm_sqr() + b.norm_sqr() + c.norm_sqr())
            .collect();
        Self { times, c1, c2, c3, norm }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `max |norm − 1|` over the samples.
    pub fn max_norm_error(&self) -> f64 {
        self.norm.iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Largest pointwise difference of `C₁` and `C₂` against another
    /// trajectory on the same grid.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        let d1 = self.c1.iter().zip(&other.c1).map(|(a, b)| (a - b).norm());
        let d2 = self.c2.iter().zip(&other.c2).map(|(a, b)| (a - b).norm());
        d1.chain(d2).fold(0.0, f64::max)
    }

    /// Largest pointwise difference of `|C₃|`.
    pub fn sup_distance_c3_modulus(&self, other: &Self) -> f64 {
        self.c3.iter().zip(&other.c3).map(|(a, b)| (a.norm() - b.norm()).abs()).fold(0.0, f64::max)
    }

    pub fn concurrence_series(&self) -> ConcurrenceSeries {
        concurrence_series(self)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let series = self.concurrence_series();
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for i in 0..self.len() {
            let (a, b, c) = (self.c1[i], self.c2[i], self.c3[i]);
            writeln!(
                out,
                "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                self.times[i],
                a.re,
                a.im,
                b.re,
                b.im,
                c.re,
                c.im,
                series.concurrence[i],
                series.tangle[i],
                series.mean_photon[i]
            )?;
        }
        Ok(())
    }

    /// Reads the amplitude columns of a file written by
    /// [`AmplitudeTrajectory::write_csv`]; derived columns are ignored.
    pub fn read_csv<R: BufRead>(input: R) -> io::Result<Self> {
        let rows = read_numeric_csv(input, Self::CSV_HEADER)?;
        let mut times = Vec::with_capacity(rows.len());
        let (mut c1, mut c2, mut c3) = (Vec::new(), Vec::new(), Vec::new());
        for row in rows {
            times.push(row[0]);
            c1.push(Complex64::new(row[1], row[2]));
            c2.push(Complex64::new(row[3], row[4]));
            c3.push(Complex64::new(row[5], row[6]));
        }
        Ok(Self::from_amplitudes(times, c1, c2, c3))
    }
}

/// Parses a header-checked CSV of floating-point columns.
pub fn read_numeric_csv<R: BufRead>(input: R, header: &str) -> io::Result<Vec<Vec<f64>>> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let mut lines = input.lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    if first.trim() != header {
        return Err(bad(format!("unexpected header {first:?}")));
    }
    let columns = header.split(',').count();
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| bad(format!("{e} in {line:?}"))))
            .collect::<io::Result<_>>()?;
        if row.len() != columns {
            return Err(bad(format!("expected {columns} columns in {line:?}")));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn concurrence_series(traj: &AmplitudeTrajectory) -> ConcurrenceSeries {
    let concurrence: Vec<f64> =
        traj.c1.iter().zip(&traj.c2).map(|(a, b)| (2.0 * (a * b).norm()).min(1.0)).collect();
    let tangle = concurrence.iter().map(|c| c * c).collect();
    let mean_photon = traj.c3.iter().map(|c| c.norm_sqr().min(1.0)).collect();
    ConcurrenceSeries { concurrence, tangle, mean_photon }
}

/// The four roots of `(−ω² + ωΔω)² + (−ω² + ωΔω) Tr A + det A = 0`,
/// sorted by real part then imaginary part.
pub fn eigenfrequencies(coupling: &CouplingMatrix, detuning: f64) -> [Complex64; 4] {
    let trace = coupling.trace();
    let det = coupling.determinant();
    let disc = Complex64::new(trace * trace - 4.0 * det, 0.0).sqrt();
    let half = detuning / 2.0;
    let mut roots = [Complex64::new(0.0, 0.0); 4];
    for (i, u) in [(-trace + disc) / 2.0, (-trace - disc) / 2.0].into_iter().enumerate() {
        let s = (half * half - u).sqrt();
        roots[2 * i] = half + s;
        roots[2 * i + 1] = half - s;
    }
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    roots
}

/// One normal mode `y = v·q` of the coupling matrix, obeying
/// `ÿ − iΔω ẏ + μ y = 0`, `y(0) = v·q(0)`, `ẏ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct NormalMode {
    mu: f64,
    vector: [f64; 2],
    y0: f64,
    /// `ω₊, ω₋ = Δω/2 ± √(Δω²/4 + μ)`; unused for a frozen mode.
    omega: [Complex64; 2],
    alpha: [Complex64; 2],
    /// `μ = 0`: the amplitude stays at `y0` and the mode never couples to
    /// the field, whatever the detuning.
    frozen: bool,
}

impl NormalMode {
    fn new(mu: f64, vector: [f64; 2], y0: f64, detuning: f64) -> Self {
        let half = detuning / 2.0;
        let s = (half * half + mu).sqrt();
        let omega = [Complex64::new(half + s, 0.0), Complex64::new(half - s, 0.0)];
        if mu == 0.0 {
            let zero = Complex64::new(0.0, 0.0);
            return Self { mu, vector, y0, omega, alpha: [Complex64::new(y0, 0.0), zero], frozen: true };
        }
        let gap = omega[0] - omega[1];
        let alpha = [-omega[1] * y0 / gap, omega[0] * y0 / gap];
        Self { mu, vector, y0, omega, alpha, frozen: false }
    }

    /// Condition number of `[[1, 1], [iω₊, iω₋]]`.
    fn condition(&self) -> f64 {
        if self.frozen {
            return 1.0;
        }
        let m = Matrix2::new(1.0, 1.0, self.omega[0].re, self.omega[1].re);
        let sv = m.singular_values();
        sv.max() / sv.min()
    }

    /// `(y, ẏ, f)` at `t`, with `f` the field amplitude fed by this mode:
    /// `f = −√μ y0 (e^{iω₊t} − e^{iω₋t}) / (ω₊ − ω₋)`.
    fn evaluate(&self, t: f64) -> (Complex64, Complex64, Complex64) {
        if self.frozen {
            let zero = Complex64::new(0.0, 0.0);
            return (Complex64::new(self.y0, 0.0), zero, zero);
        }
        let ep = (I * self.omega[0] * t).exp();
        let em = (I * self.omega[1] * t).exp();
        let y = self.alpha[0] * ep + self.alpha[1] * em;
        let dy = I * (self.omega[0] * self.alpha[0] * ep + self.omega[1] * self.alpha[1] * em);
        let f = -self.mu.sqrt() * self.y0 * (ep - em) / (self.omega[0] - self.omega[1]);
        (y, dy, f)
    }
}

/// Normal-mode form of the general solution `C_k(t) = Σⱼ c_kj e^{iωⱼt}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    /// `ωⱼ`, two per normal mode of the coupling matrix.
    pub frequencies: [Complex64; 4],
    /// `(c₁ⱼ, c₂ⱼ)` for each frequency.
    pub mode_amplitudes: [[Complex64; 2]; 4],
    /// Largest condition number among the per-mode amplitude systems.
    pub condition_number: f64,
    modes: [NormalMode; 2],
}

impl SpectralDecomposition {
    /// `‖(−ω² + ωΔω) c + A c‖` for frequency `j`, relative to `‖c‖`.
    pub fn pencil_residual(&self, j: usize, coupling: &CouplingMatrix, detuning: f64) -> f64 {
        let w = self.frequencies[j];
        let c = self.mode_amplitudes[j];
        let scale = c[0].norm().max(c[1].norm());
        if scale == 0.0 {
            return 0.0;
        }
        let p = -w * w + w * detuning;
        let a = coupling.matrix();
        let r0 = p * c[0] + a[0][0] * c[0] + a[0][1] * c[1];
        let r1 = p * c[1] + a[1][0] * c[0] + a[1][1] * c[1];
        r0.norm().max(r1.norm()) / scale
    }

    /// `(C₁, C₂, C₃)` at time `t`.
    ///
    /// `C₃` is exact, phase included, when at most one normal mode couples
    /// to the field (the rank-one case). With two coupled modes the field is
    /// not a single amplitude; `C₃` is then the real non-negative
    /// `√(Σ |fₖ|²)`, which carries the photon population.
    pub fn amplitudes_at(&self, t: f64) -> [Complex64; 3] {
        let mut c = [Complex64::new(0.0, 0.0); 2];
        let mut fields = Vec::with_capacity(2);
        for mode in &self.modes {
            let (y, _, f) = mode.evaluate(t);
            c[0] += mode.vector[0] * y;
            c[1] += mode.vector[1] * y;
            if !mode.frozen {
                fields.push(f);
            }
        }
        let c3 = match fields.as_slice() {
            [] => Complex64::new(0.0, 0.0),
            [f] => *f,
            all => Complex64::new(all.iter().map(|f| f.norm_sqr()).sum::<f64>().sqrt(), 0.0),
        };
        [c[0], c[1], c3]
    }
}

/// Eigenvalues below this fraction of the trace (or absolute, for tiny
/// matrices) are treated as exactly zero.
const ZERO_MODE: f64 = 1e-14;

/// Normal-mode decomposition for the given couplings and initial atom.
pub fn spectral_decomposition(
    coupling: &CouplingMatrix,
    detuning: f64,
    initial: InitialExcitation,
) -> Result<SpectralDecomposition> {
    let a = coupling.matrix();
    let eig = Matrix2::new(a[0][0], a[0][1], a[1][0], a[1][1]).symmetric_eigen();
    let floor = ZERO_MODE * coupling.trace().max(1.0);
    let q0 = initial.amplitudes();
    let mut modes = Vec::with_capacity(2);
    for k in 0..2 {
        let mut mu = eig.eigenvalues[k];
        if mu < -floor {
            return Err(Error::InvalidArgument(format!(
                "coupling matrix is not positive semidefinite (eigenvalue {mu:e})"
            )));
        }
        if mu <= floor {
            mu = 0.0;
        }
        let mut v = [eig.eigenvectors[(0, k)], eig.eigenvectors[(1, k)]];
        // Fix the sign so that a rank-one coupling χᵢχⱼ with χᵢ ≥ 0 gives
        // v ∝ (χ₁, χ₂) and C₃ keeps its closed-form phase.
        let sum = v[0] + v[1];
        if sum < 0.0 || (sum == 0.0 && v[0] < 0.0) {
            v = [-v[0], -v[1]];
        }
        let y0 = v[0] * q0[0] + v[1] * q0[1];
        modes.push(NormalMode::new(mu, v, y0, detuning));
    }
    let modes = [modes[0], modes[1]];
    let condition_number = modes.iter().map(NormalMode::condition).fold(1.0, f64::max);
    if condition_number > MAX_CONDITION {
        return Err(Error::IllConditioned(condition_number));
    }
    let mut frequencies = [Complex64::new(0.0, 0.0); 4];
    let mut mode_amplitudes = [[Complex64::new(0.0, 0.0); 2]; 4];
    for (k, mode) in modes.iter().enumerate() {
        for s in 0..2 {
            frequencies[2 * k + s] = mode.omega[s];
            mode_amplitudes[2 * k + s] = [mode.vector[0] * mode.alpha[s], mode.vector[1] * mode.alpha[s]];
        }
    }
    Ok(SpectralDecomposition { frequencies, mode_amplitudes, condition_number, modes })
}

/// General solution via the normal modes of the coupling matrix, with
/// `C₁(0) = λ`, `C₂(0) = 1 − λ` and `Ċ₁(0) = Ċ₂(0) = 0`.
pub fn solve_general(params: &DynamicsParams) -> Result<AmplitudeTrajectory> {
    let decomposition = spectral_decomposition(&params.coupling, params.detuning, params.initial)?;
    let n = params.time_grid.len();
    let (mut c1, mut c2, mut c3) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &t in &params.time_grid {
        let [a, b, c] = decomposition.amplitudes_at(t);
        c1.push(a);
        c2.push(b);
        c3.push(c);
    }
    Ok(AmplitudeTrajectory::from_amplitudes(params.time_grid.clone(), c1, c2, c3))
}

/// `Ω = √((Δω/2)² + χ₁² + χ₂²)`.
pub fn rabi_frequency(chi1: f64, chi2: f64, detuning: f64) -> f64 {
    (detuning * detuning / 4.0 + chi1 * chi1 + chi2 * chi2).sqrt()
}

/// `χ_λ = χ₁λ + χ₂(1 − λ)`.
pub fn chi_lambda(chi1: f64, chi2: f64, initial: InitialExcitation) -> f64 {
    match initial {
        InitialExcitation::Atom1 => chi1,
        InitialExcitation::Atom2 => chi2,
    }
}

/// Peak photon number `(χ_λ/Ω)²` of the factored solution.
pub fn max_mean_photon(chi1: f64, chi2: f64, detuning: f64, initial: InitialExcitation) -> f64 {
    let ratio = chi_lambda(chi1, chi2, initial) / rabi_frequency(chi1, chi2, detuning);
    ratio * ratio
}

fn check_chis(chi1: f64, chi2: f64) -> Result<()> {
    if !(chi1 >= 0.0 && chi2 >= 0.0) || !chi1.is_finite() || !chi2.is_finite() {
        return Err(Error::InvalidArgument(format!("coupling constants must be finite and >= 0, got {chi1}, {chi2}")));
    }
    if chi1 == 0.0 && chi2 == 0.0 {
        return Err(Error::InvalidArgument("at least one coupling constant must be non-zero".into()));
    }
    Ok(())
}

/// Closed-form solution for rank-one couplings:
///
/// * `C₁ = −χ₁ r + λ`, `C₂ = −χ₂ r + 1 − λ`,
/// * `C₃ = −i (χ_λ/Ω) e^{iΔω t/2} sin Ωt`,
/// * `r = (χ_λ/χ²) {e^{iΔω t/2} [i Δω/(2Ω) sin Ωt − cos Ωt] + 1}`.
pub fn solve_factored(
    chi1: f64,
    chi2: f64,
    detuning: f64,
    initial: InitialExcitation,
    time_grid: &[f64],
) -> Result<AmplitudeTrajectory> {
    check_chis(chi1, chi2)?;
    if !detuning.is_finite() {
        return Err(Error::InvalidArgument(format!("detuning must be finite, got {detuning}")));
    }
    validate_time_grid(time_grid)?;
    let lambda = initial.lambda() as f64;
    let chi_l = chi_lambda(chi1, chi2, initial);
    let chi_sq = chi1 * chi1 + chi2 * chi2;
    let omega = rabi_frequency(chi1, chi2, detuning);
    let n = time_grid.len();
    let (mut c1, mut c2, mut c3) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &t in time_grid {
        let (sin, cos) = (omega * t).sin_cos();
        let phase = (I * detuning * t / 2.0).exp();
        let r = chi_l / chi_sq * (phase * (I * detuning / (2.0 * omega) * sin - cos) + 1.0);
        c1.push(-chi1 * r + lambda);
        c2.push(-chi2 * r + (1.0 - lambda));
        c3.push(-I * (chi_l / omega) * phase * sin);
    }
    Ok(AmplitudeTrajectory::from_amplitudes(time_grid.to_vec(), c1, c2, c3))
}

/// Result of [`ode_oracle`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrajectory {
    /// Solution at half the requested step.
    pub trajectory: AmplitudeTrajectory,
    /// Sup-norm change in `C₁, C₂` between steps `dt` and `dt/2`.
    pub halving_change: f64,
}

/// Rank-one couplings are detected when `|A₁₁A₂₂ − A₁₂²|` is below this
/// fraction of `A₁₁A₂₂`.
const RANK_ONE_DEFECT: f64 = 1e-12;

fn oracle_run(params: &DynamicsParams, dt: f64) -> AmplitudeTrajectory {
    let a = params.coupling.matrix();
    let delta = params.detuning;
    let q0 = params.initial.amplitudes();
    let zero = Complex64::new(0.0, 0.0);
    let y0 = [Complex64::new(q0[0], 0.0), Complex64::new(q0[1], 0.0), zero, zero];
    let rank_one = params.coupling.rank_one_defect() < RANK_ONE_DEFECT;
    let u = [a[0][0].sqrt(), a[1][1].sqrt().copysign(if a[0][1] < 0.0 { -1.0 } else { 1.0 })];
    let n = params.time_grid.len();
    let mut states = Vec::with_capacity(n);

    if rank_one {
        // State (C₁, C₂, C₃): Ċᵢ = −i uᵢ C₃, Ċ₃ = iΔω C₃ − i u·C.
        let rhs = |_: f64, y: &[Complex64], dy: &mut [Complex64]| {
            dy[0] = -I * u[0] * y[2];
            dy[1] = -I * u[1] * y[2];
            dy[2] = I * delta * y[2] - I * (u[0] * y[0] + u[1] * y[1]);
        };
        let _ = rk4::integrate::<_, _, _, ()>(rhs, &y0[..3], &params.time_grid, dt, |_| {}, |_, _, y| {
            states.push([y[0], y[1], y[2]]);
            Ok(())
        });
    } else {
        // State (C₁, C₂, B₁, B₂): Ċ = −iB, Ḃ = iΔω B − i A C.
        let rhs = |_: f64, y: &[Complex64], dy: &mut [Complex64]| {
            dy[0] = -I * y[2];
            dy[1] = -I * y[3];
            dy[2] = I * delta * y[2] - I * (a[0][0] * y[0] + a[0][1] * y[1]);
            dy[3] = I * delta * y[3] - I * (a[1][0] * y[0] + a[1][1] * y[1]);
        };
        let det = params.coupling.determinant();
        let _ = rk4::integrate::<_, _, _, ()>(rhs, &y0, &params.time_grid, dt, |_| {}, |_, _, y| {
            // |C₃|² = B† A⁻¹ B.
            let x0 = (a[1][1] * y[2] - a[0][1] * y[3]) / det;
            let x1 = (-a[1][0] * y[2] + a[0][0] * y[3]) / det;
            let photon = (y[2].conj() * x0 + y[3].conj() * x1).re.max(0.0);
            states.push([y[0], y[1], Complex64::new(photon.sqrt(), 0.0)]);
            Ok(())
        });
    }
    let c1 = states.iter().map(|s| s[0]).collect();
    let c2 = states.iter().map(|s| s[1]).collect();
    let c3 = states.iter().map(|s| s[2]).collect();
    AmplitudeTrajectory::from_amplitudes(params.time_grid.clone(), c1, c2, c3)
}

/// Direct RK4 integration of the first-order system, used as a reference
/// for the analytic solvers.
///
/// Rank-one couplings integrate `(C₁, C₂, C₃)`; otherwise the collective
/// field variables `B = iĊ` are carried and `|C₃|² = B†A⁻¹B`. The run is
/// repeated at `dt/2`; a change above [`HALVING_TOLERANCE`] is logged as a
/// warning.
pub fn ode_oracle(params: &DynamicsParams, dt: f64) -> Result<OracleTrajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    let coarse = oracle_run(params, dt);
    let fine = oracle_run(params, dt / 2.0);
    let halving_change = coarse.sup_distance(&fine);
    if halving_change > HALVING_TOLERANCE {
        log::warn!("oracle step {dt} not converged: halving changes the solution by {halving_change:e}");
    }
    Ok(OracleTrajectory { trajectory: fine, halving_change })
}

/// Resonant (`Δω = 0`, `λ = 1`) concurrence
/// `C = 2 (χ₁χ₂/Ω²) |1 − (χ₁²/Ω²)(1 − cos Ωt)| (1 − cos Ωt)`.
pub fn resonant_concurrence(chi1: f64, chi2: f64, t: f64) -> Result<f64> {
    check_chis(chi1, chi2)?;
    let omega_sq = chi1 * chi1 + chi2 * chi2;
    let one_minus_cos = 1.0 - (omega_sq.sqrt() * t).cos();
    Ok(2.0 * chi1 * chi2 / omega_sq * (1.0 - chi1 * chi1 / omega_sq * one_minus_cos).abs() * one_minus_cos)
}

/// `C(k, a) = 2 ak/(1 + k²) |1 − a/(1 + k²)|` with `k = χ₂/χ₁`,
/// `a = 1 − cos Ωt`.
pub fn c_of_k_a(k: f64, a: f64) -> Result<f64> {
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::Domain(format!("k must be finite and >= 0, got {k}")));
    }
    check_a(a)?;
    let s = 1.0 + k * k;
    Ok(2.0 * a * k / s * (1.0 - a / s).abs())
}

fn check_a(a: f64) -> Result<()> {
    if !(0.0..=2.0).contains(&a) {
        return Err(Error::Domain(format!("a must lie in [0, 2], got {a}")));
    }
    Ok(())
}

/// Stationary points of `C(k, a)` in `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalK {
    /// Maximiser on the branch `1 + k² ≥ a`.
    pub k1: f64,
    /// Maximiser on the inner branch `1 + k² < a`; only for `a ≥ 1`.
    pub k2: Option<f64>,
}

/// `k₁,₂ = ½ √(6a ± 2√(9a² − 4a + 4))`.
pub fn optimal_k(a: f64) -> Result<OptimalK> {
    check_a(a)?;
    let root = (9.0 * a * a - 4.0 * a + 4.0).sqrt();
    let k1 = 0.5 * (6.0 * a + 2.0 * root).sqrt();
    let k2 = (a >= 1.0).then(|| 0.5 * (6.0 * a - 2.0 * root).max(0.0).sqrt());
    Ok(OptimalK { k1, k2 })
}

/// Concurrence at time `t` on a `(χ₁, χ₂)` grid, rows indexed by `χ₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcurrenceSurface {
    pub chi1: Vec<f64>,
    pub chi2: Vec<f64>,
    /// `values[i][j] = C(χ₁[i], χ₂[j])`.
    pub values: Vec<Vec<f64>>,
}

impl ConcurrenceSurface {
    pub const CSV_HEADER: &'static str = "chi1,chi2,concurrence";

    /// Long format, `χ₁` outer and `χ₂` inner.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(out, "{:?},{:?},{:?}", self.chi1[i], self.chi2[j], v)?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> io::Result<Self> {
        let rows = read_numeric_csv(input, Self::CSV_HEADER)?;
        let mut chi1: Vec<f64> = Vec::new();
        let mut chi2: Vec<f64> = Vec::new();
        for row in &rows {
            if chi1.last() != Some(&row[0]) {
                chi1.push(row[0]);
            }
            if chi1.len() == 1 {
                chi2.push(row[1]);
            }
        }
        if chi1.len() * chi2.len() != rows.len() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "surface rows do not form a full grid"));
        }
        let values = rows.chunks(chi2.len()).map(|c| c.iter().map(|r| r[2]).collect()).collect();
        Ok(Self { chi1, chi2, values })
    }

    /// `(χ₁, χ₂, C)` at the largest value.
    pub fn maximum(&self) -> Option<(f64, f64, f64)> {
        let mut best: Option<(f64, f64, f64)> = None;
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if best.is_none_or(|b| v > b.2) {
                    best = Some((self.chi1[i], self.chi2[j], v));
                }
            }
        }
        best
    }
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} grid is empty")));
    }
    if grid.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} grid must be finite and non-negative")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("{name} grid must be strictly ascending")));
    }
    Ok(())
}

/// `C(χ₁, χ₂)` at time `t` from the factored solution; grid nodes run in
/// parallel. Nodes with `χ₁ = χ₂ = 0` are zero.
pub fn concurrence_surface(
    chi1_grid: &[f64],
    chi2_grid: &[f64],
    detuning: f64,
    initial: InitialExcitation,
    t: f64,
) -> Result<ConcurrenceSurface> {
    check_grid("chi1", chi1_grid)?;
    check_grid("chi2", chi2_grid)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be finite and >= 0, got {t}")));
    }
    let times = if t == 0.0 { vec![0.0] } else { vec![0.0, t] };
    let values = chi1_grid
        .par_iter()
        .map(|&x1| {
            chi2_grid
                .iter()
                .map(|&x2| {
                    if x1 == 0.0 && x2 == 0.0 {
                        return Ok(0.0);
                    }
                    let traj = solve_factored(x1, x2, detuning, initial, &times)?;
                    let last = traj.len() - 1;
                    Ok((2.0 * (traj.c1[last] * traj.c2[last]).norm()).min(1.0))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConcurrenceSurface { chi1: chi1_grid.to_vec(), chi2: chi2_grid.to_vec(), values })
}

/// Fraction of samples with tangle above `threshold`.
pub fn plateau_fraction(tangle: &[f64], threshold: f64) -> f64 {
    if tangle.is_empty() {
        return 0.0;
    }
    tangle.iter().filter(|&&v| v > threshold).count() as f64 / tangle.len() as f64
}

/// Maximal runs of consecutive samples with `values > threshold`, as
/// index ranges `start..end`.
pub fn windows_above(values: &[f64], threshold: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in values.iter().enumerate() {
        match (v > threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(s..values.len());
    }
    out
}

/// Indices of strict interior local maxima.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] >= values[i + 1])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t_max: f64, n: usize) -> Vec<f64> {
        uniform_time_grid(t_max, n).unwrap()
    }

    #[test]
    fn initial_conditions_and_norm() {
        for initial in [InitialExcitation::Atom1, InitialExcitation::Atom2] {
            let t = solve_factored(0.254, 0.151, 0.5, initial, &grid(50.0, 501)).unwrap();
            let [l1, l2] = initial.amplitudes();
            assert_eq!(t.c1[0], Complex64::new(l1, 0.0));
            assert!((t.c2[0] - l2).norm() < 1e-15);
            assert_eq!(t.c3[0], Complex64::new(0.0, 0.0));
            assert!(t.max_norm_error() < 1e-12);
        }
    }

    #[test]
    fn factored_obeys_reduced_equations() {
        // Ċ₃ − iΔω C₃ = −i(χ₁C₁ + χ₂C₂) and Ċᵢ = −iχᵢC₃ by central differences.
        let (x1, x2, d) = (0.3, 0.7, -0.4);
        let h = 1e-5;
        for &t in &[0.7, 3.1, 11.0] {
            let tr = solve_factored(x1, x2, d, InitialExcitation::Atom2, &[0.0, t - h, t, t + h]).unwrap();
            let dc1 = (tr.c1[3] - tr.c1[1]) / (2.0 * h);
            let dc3 = (tr.c3[3] - tr.c3[1]) / (2.0 * h);
            assert!((dc1 + I * x1 * tr.c3[2]).norm() < 1e-8);
            assert!((dc3 - I * d * tr.c3[2] + I * (x1 * tr.c1[2] + x2 * tr.c2[2])).norm() < 1e-8);
        }
    }

    #[test]
    fn eigenfrequency_examples() {
        let (g, d) = (0.02, 0.75);
        let sym = CouplingMatrix::new(g, g, g).unwrap();
        let roots = eigenfrequencies(&sym, d);
        let s = (d * d / 4.0 + 2.0 * g).sqrt();
        let mut expected = [d / 2.0 - s, 0.0, d, d / 2.0 + s];
        expected.sort_by(f64::total_cmp);
        for (r, e) in roots.iter().zip(expected) {
            assert!((r - e).norm() < 1e-12, "{r} vs {e}");
        }
        let zero = CouplingMatrix::new(0.0, 0.0, 0.0).unwrap();
        assert!(eigenfrequencies(&zero, 0.0).iter().all(|r| r.norm() == 0.0));
    }

    #[test]
    fn spectral_pencil_residual() {
        let a = CouplingMatrix::new(0.01, 0.012, 0.04).unwrap();
        let dec = spectral_decomposition(&a, 0.75, InitialExcitation::Atom1).unwrap();
        let quartic = eigenfrequencies(&a, 0.75);
        for j in 0..4 {
            assert!(dec.pencil_residual(j, &a, 0.75) < 1e-10);
            assert!(dec.frequencies[j].im == 0.0);
            assert!(quartic.iter().any(|w| (w - dec.frequencies[j]).norm() < 1e-12));
        }
    }

    #[test]
    fn general_matches_factored_on_rank_one() {
        let times = grid(100.0, 2001);
        for initial in [InitialExcitation::Atom1, InitialExcitation::Atom2] {
            let f = solve_factored(0.254, 0.151, 0.5, initial, &times).unwrap();
            let p = DynamicsParams::new(CouplingMatrix::from_chis(0.254, 0.151).unwrap(), 0.5, initial, times.clone())
                .unwrap();
            let g = solve_general(&p).unwrap();
            assert!(f.sup_distance(&g) < 1e-9);
            let d3 = f.c3.iter().zip(&g.c3).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(d3 < 1e-9, "C3 differs by {d3}");
        }
    }

    #[test]
    fn general_case_conserves_norm_and_matches_oracle() {
        let a = CouplingMatrix::new(0.01, 0.012, 0.04).unwrap();
        let p = DynamicsParams::new(a, 0.75, InitialExcitation::Atom1, grid(100.0, 401)).unwrap();
        let g = solve_general(&p).unwrap();
        assert!(g.max_norm_error() < 1e-12);
        let o = ode_oracle(&p, 2e-3).unwrap();
        assert!(o.halving_change < 1e-8);
        assert!(g.sup_distance(&o.trajectory) < 1e-8);
        assert!(g.sup_distance_c3_modulus(&o.trajectory) < 1e-8);
    }

    #[test]
    fn zero_coupling_is_constant() {
        let p = DynamicsParams::new(CouplingMatrix::new(0.0, 0.0, 0.0).unwrap(), 0.3, InitialExcitation::Atom2, grid(10.0, 11))
            .unwrap();
        for traj in [solve_general(&p).unwrap(), ode_oracle(&p, 1e-2).unwrap().trajectory] {
            assert!(traj.c1.iter().all(|c| c.norm() == 0.0));
            assert!(traj.c2.iter().all(|c| *c == Complex64::new(1.0, 0.0)));
        }
    }

    #[test]
    fn non_psd_coupling_rejected() {
        let a = CouplingMatrix::new(0.01, 0.5, 0.01).unwrap();
        let p = DynamicsParams::new(a, 0.0, InitialExcitation::Atom1, vec![0.0, 1.0]).unwrap();
        assert!(matches!(solve_general(&p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn resonant_form_examples() {
        assert_eq!(resonant_concurrence(0.4, 0.0, 3.0).unwrap(), 0.0);
        let (x1, x2) = (0.3, 0.4);
        let t = 2.0 * std::f64::consts::PI / 0.5;
        assert!(resonant_concurrence(x1, x2, t).unwrap().abs() < 1e-12);
        assert!(resonant_concurrence(0.0, 0.0, 1.0).is_err());
        let tr = solve_factored(x1, x2, 0.0, InitialExcitation::Atom1, &[0.0, 1.7]).unwrap();
        let c = tr.concurrence_series().concurrence[1];
        assert!((c - resonant_concurrence(x1, x2, 1.7).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn c_of_k_a_examples() {
        let s2 = 2f64.sqrt();
        assert!((c_of_k_a(s2 + 1.0, 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((c_of_k_a(s2 - 1.0, 2.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(c_of_k_a(0.0, 1.3).unwrap(), 0.0);
        assert!((c_of_k_a(1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(c_of_k_a(-0.1, 1.0).is_err());
        assert!(c_of_k_a(1.0, 2.1).is_err());
    }

    #[test]
    fn optimal_k_examples() {
        let s2 = 2f64.sqrt();
        let k = optimal_k(2.0).unwrap();
        assert!((k.k1 - (s2 + 1.0)).abs() < 1e-12);
        assert!((k.k2.unwrap() - (s2 - 1.0)).abs() < 1e-12);
        assert!(optimal_k(0.5).unwrap().k2.is_none());
        assert_eq!(optimal_k(1.0).unwrap().k2, Some(0.0));
        assert!(optimal_k(-0.1).is_err());
    }

    #[test]
    fn surface_edges_vanish() {
        let chis = [0.0, 0.1, 0.2, 0.3];
        let s = concurrence_surface(&chis, &chis, 0.5, InitialExcitation::Atom2, 27.0).unwrap();
        for i in 0..chis.len() {
            assert_eq!(s.values[0][i], 0.0);
            assert_eq!(s.values[i][0], 0.0);
        }
        assert!(concurrence_surface(&[0.2, 0.1], &chis, 0.5, InitialExcitation::Atom2, 1.0).is_err());
    }

    #[test]
    fn csv_round_trips() {
        let tr = solve_factored(0.254, 0.151, 0.5, InitialExcitation::Atom2, &grid(5.0, 6)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let back = AmplitudeTrajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, tr);

        let s = concurrence_surface(&[0.1, 0.2], &[0.1, 0.2, 0.3], 0.5, InitialExcitation::Atom2, 27.0).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(ConcurrenceSurface::read_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn time_grid_validation() {
        assert!(validate_time_grid(&[]).is_err());
        assert!(validate_time_grid(&[0.1, 0.2]).is_err());
        assert!(validate_time_grid(&[0.0, 0.2, 0.2]).is_err());
        assert!(validate_time_grid(&[0.0]).is_ok());
        assert!(InitialExcitation::from_lambda(2).is_err());
    }

    #[test]
    fn windows_and_maxima() {
        let v = [0.0, 0.6, 0.7, 0.2, 0.9, 0.95, 0.1];
        assert_eq!(windows_above(&v, 0.5), vec![1..3, 4..6]);
        assert_eq!(local_maxima(&v), vec![2, 5]);
        assert!((plateau_fraction(&v, 0.5) - 4.0 / 7.0).abs() < 1e-15);
    }
}
