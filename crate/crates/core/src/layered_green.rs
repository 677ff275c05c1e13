//! Coated microsphere model and its tangential scattering Green function.
//!
//! The sphere is a sequence of concentric shells. For each spherical order
//! `n` the TE (`M`-type) and TM (`N`-type) radial problems decouple, and the
//! radial Green function is assembled from two solutions of the layered
//! problem:
//!
//! * the *regular* solution, equal to `jₙ(k₀r)` in the core and carried
//!   outward through every interface, and
//! * the *outgoing* solution, equal to `hₙ⁽¹⁾(k_N r)` in the surrounding
//!   medium and carried inward.
//!
//! In layer `i` each solution is a pair `(α, β)` of coefficients of
//! `jₙ(kᵢr)` and `hₙ⁽¹⁾(kᵢr)`. With Riccati functions `ψ(x) = x·zₙ(x)` the
//! interface conditions are continuity of `(ψ/k, ψ′)` for TE and
//! `(ψ, ψ′/k)` for TM, i.e. continuity of the tangential electric and
//! magnetic fields with `μ = 1`.
//!
//! Field and source points sit on the positive x axis (`θ = π/2`, `φ = 0`).
//! At that position the unit vector `φ̂` is `ŷ`, only even `M` waves and odd
//! `N` waves contribute to `G_φφ`, and the angular sum reduces to weights
//! built from normalised Legendre functions at the equator.

use std::io::{self, BufRead, Write};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::wave_basis::{
    assoc_legendre_normalized, assoc_legendre_normalized_dx_at_equator, bessel_j_array,
    hankel1_array, riccati_log_derivative_array, Parity, SphericalOrder,
};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Tail ratio above which a series is flagged as not converged.
pub const TAIL_TOLERANCE: f64 = 1e-6;

/// Vacuum wavenumber in μm⁻¹ for a frequency in Hz.
pub fn vacuum_wavenumber(frequency_hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * frequency_hz / SPEED_OF_LIGHT * 1e-6
}

/// Angular frequency (rad/s) for a frequency in Hz.
pub fn angular_frequency(frequency_hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * frequency_hz
}

/// Thickness `λ₀/(4n)` of a quarter-wave layer, in the units of `lambda0`.
pub fn quarter_wave_thickness(lambda0: f64, index: f64) -> f64 {
    lambda0 / (4.0 * index)
}

/// One spherical shell. The outermost layer has `outer_radius_um = ∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layer {
    pub outer_radius_um: f64,
    pub index: Complex64,
}

/// Radial extent of a shell when building a stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extent {
    Thickness(f64),
    OuterRadius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShellSpec {
    pub extent: Extent,
    pub index: Complex64,
}

impl ShellSpec {
    pub fn thickness(thickness_um: f64, index: Complex64) -> Self {
        Self { extent: Extent::Thickness(thickness_um), index }
    }

    pub fn outer_radius(radius_um: f64, index: Complex64) -> Self {
        Self { extent: Extent::OuterRadius(radius_um), index }
    }

    /// Quarter-wave shell for centre wavelength `lambda0_um`, thickness
    /// computed from the real part of the index.
    pub fn quarter_wave(lambda0_um: f64, index: Complex64) -> Self {
        Self::thickness(quarter_wave_thickness(lambda0_um, index.re), index)
    }
}

/// Radially ordered shells, innermost first, surrounded by a semi-infinite
/// ambient medium. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<Layer>,
}

impl LayerStack {
    /// Validates an explicit layer list. The last entry must have an
    /// infinite outer radius.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidStack("need at least one finite layer and the ambient medium".into()));
        }
        let (last, finite) = layers.split_last().expect("non-empty");
        if last.outer_radius_um != f64::INFINITY {
            return Err(Error::InvalidStack("outermost layer must extend to infinity".into()));
        }
        let mut prev = 0.0;
        for (i, layer) in finite.iter().enumerate() {
            if !(layer.outer_radius_um.is_finite() && layer.outer_radius_um > prev) {
                return Err(Error::InvalidStack(format!(
                    "outer radius of layer {i} ({}) must be finite and exceed {prev}",
                    layer.outer_radius_um
                )));
            }
            prev = layer.outer_radius_um;
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.index.im < 0.0 {
                return Err(Error::InvalidStack(format!("layer {i} has gain (Im n = {})", layer.index.im)));
            }
            if !(layer.index.re > 0.0) || !layer.index.im.is_finite() {
                return Err(Error::InvalidStack(format!("layer {i} has invalid index {}", layer.index)));
            }
        }
        Ok(Self { layers })
    }

    /// Builds a stack from shells listed innermost first (the first shell is
    /// the core) plus the ambient index.
    pub fn build(shells: &[ShellSpec], ambient_index: Complex64) -> Result<Self> {
        let mut radius = 0.0;
        let mut layers = Vec::with_capacity(shells.len() + 1);
        for (i, shell) in shells.iter().enumerate() {
            let outer = match shell.extent {
                Extent::Thickness(t) => {
                    if !(t > 0.0) {
                        return Err(Error::InvalidStack(format!("shell {i} has non-positive thickness {t}")));
                    }
                    radius + t
                }
                Extent::OuterRadius(r) => r,
            };
            layers.push(Layer { outer_radius_um: outer, index: shell.index });
            radius = outer;
        }
        layers.push(Layer { outer_radius_um: f64::INFINITY, index: ambient_index });
        Self::new(layers)
    }

    /// Glass core (1 μm) coated with five alternating Si (0.12 μm) and SiO₂
    /// (0.3 μm) shells, starting with Si, in vacuum. Outer radius 1.96 μm.
    pub fn reference_coated_sphere() -> Self {
        let glass = Complex64::new(1.5, 2e-4);
        let si = Complex64::new(3.58, 1e-3);
        let silica = Complex64::new(1.46, 3e-3);
        let shells = [
            ShellSpec::outer_radius(1.0, glass),
            ShellSpec::thickness(0.12, si),
            ShellSpec::thickness(0.3, silica),
            ShellSpec::thickness(0.12, si),
            ShellSpec::thickness(0.3, silica),
            ShellSpec::thickness(0.12, si),
        ];
        Self::build(&shells, Complex64::new(1.0, 0.0)).expect("reference stack is valid")
    }

    /// A stack of the given interface radii with every index equal to 1.
    pub fn vacuum(radii_um: &[f64]) -> Result<Self> {
        let one = Complex64::new(1.0, 0.0);
        let shells: Vec<_> = radii_um.iter().map(|&r| ShellSpec::outer_radius(r, one)).collect();
        Self::build(&shells, one)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Radii of the finite interfaces.
    pub fn interfaces(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.outer_radius_um)
    }

    pub fn outer_radius(&self) -> f64 {
        self.layers[self.layers.len() - 2].outer_radius_um
    }

    /// Layer containing radius `r`; a point on an interface belongs to the
    /// inner layer.
    pub fn layer_of(&self, r_um: f64) -> usize {
        self.layers.iter().position(|l| r_um <= l.outer_radius_um).unwrap_or(self.layers.len() - 1)
    }

    /// Default truncation `max(20, ⌈max_i |kᵢ|Rᵢ⌉ + 12)`, with `Rᵢ` the outer
    /// radius of layer `i` (the last finite radius for the ambient medium).
    pub fn default_max_order(&self, frequency_hz: f64) -> usize {
        let k0 = vacuum_wavenumber(frequency_hz);
        let outer = self.outer_radius();
        let optical = self
            .layers
            .iter()
            .map(|l| k0 * l.index.norm() * l.outer_radius_um.min(outer))
            .fold(0.0, f64::max);
        20usize.max(optical.ceil() as usize + 12)
    }
}

/// An atom with a tangential dipole at radius `position_um`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomPlacement {
    pub position_um: f64,
    /// Dimensionless dipole magnitude `d`.
    pub dipole: f64,
}

impl AtomPlacement {
    pub fn new(position_um: f64, dipole: f64) -> Result<Self> {
        if !(position_um > 0.0 && position_um.is_finite()) {
            return Err(Error::InvalidPlacement(format!("position must be positive, got {position_um}")));
        }
        Ok(Self { position_um, dipole })
    }

    fn check_inside(&self, stack: &LayerStack) -> Result<()> {
        if self.position_um >= stack.outer_radius() {
            return Err(Error::InvalidPlacement(format!(
                "atom at {} μm is outside the sphere (outer radius {} μm)",
                self.position_um,
                stack.outer_radius()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    /// Transverse electric, `M`-type waves.
    Te,
    /// Transverse magnetic, `N`-type waves.
    Tm,
}

/// Coefficients `(α, β)` of `jₙ(kᵢr)` and `hₙ⁽¹⁾(kᵢr)` in one layer.
pub type WavePair = [Complex64; 2];

/// Riccati–Bessel values at an interface seen from one layer.
#[derive(Debug, Clone, Copy)]
struct RiccatiAt {
    psi_j: Complex64,
    psi_h: Complex64,
    dpsi_j: Complex64,
    dpsi_h: Complex64,
}

fn riccati_table(nmax: usize, z: Complex64) -> Result<Vec<RiccatiAt>> {
    let j = bessel_j_array(nmax + 1, z);
    let h = hankel1_array(nmax + 1, z)?;
    let d = riccati_log_derivative_array(nmax, z);
    Ok((0..=nmax)
        .map(|n| {
            let psi_j = z * j[n];
            let psi_h = z * h[n];
            // ψ′ = zₙ₋₁·z − n·zₙ for both families; the log-derivative is
            // the robust route for the regular one when ψ_j is not tiny.
            let dpsi_h = if n == 0 { -z * h[1] + h[0] } else { z * h[n - 1] - n as f64 * h[n] };
            let dpsi_j_rec = if n == 0 { -z * j[1] + j[0] } else { z * j[n - 1] - n as f64 * j[n] };
            let dpsi_j = if d[n].is_finite() && psi_j.norm() > 1e-280 { d[n] * psi_j } else { dpsi_j_rec };
            RiccatiAt { psi_j, psi_h, dpsi_j, dpsi_h }
        })
        .collect())
}

/// The two tangential field components of a wave pair at an interface.
fn tangential(pol: Polarization, k: Complex64, at: &RiccatiAt, w: WavePair) -> [Complex64; 2] {
    let [a, b] = w;
    match pol {
        Polarization::Te => [(a * at.psi_j + b * at.psi_h) / k, a * at.dpsi_j + b * at.dpsi_h],
        Polarization::Tm => [a * at.psi_j + b * at.psi_h, (a * at.dpsi_j + b * at.dpsi_h) / k],
    }
}

/// Inverts the 2×2 interface matrix of one layer, using the Riccati
/// Wronskian `ψ_j ψ′_h − ψ′_j ψ_h = i` for the determinant.
fn untangential(pol: Polarization, k: Complex64, at: &RiccatiAt, t: [Complex64; 2]) -> WavePair {
    let (m11, m12, m21, m22) = match pol {
        Polarization::Te => (at.psi_j / k, at.psi_h / k, at.dpsi_j, at.dpsi_h),
        Polarization::Tm => (at.psi_j, at.psi_h, at.dpsi_j / k, at.dpsi_h / k),
    };
    let det = m11 * m22 - m12 * m21;
    [(m22 * t[0] - m12 * t[1]) / det, (m11 * t[1] - m21 * t[0]) / det]
}

/// Regular and outgoing radial solutions of one `(n, polarization)` problem.
#[derive(Debug, Clone)]
pub struct RadialSolutions {
    pub n: usize,
    pub polarization: Polarization,
    /// Wavenumber of each layer, μm⁻¹.
    pub wavenumbers: Vec<Complex64>,
    /// Regular solution: `(1, 0)` in the core.
    pub regular: Vec<WavePair>,
    /// Outgoing solution: `(0, 1)` in the ambient medium.
    pub outgoing: Vec<WavePair>,
}

impl RadialSolutions {
    /// Scattered parts: the Hankel coefficient of the regular solution and the
    /// Bessel coefficient of the outgoing one, per layer. All zero when no
    /// interface reflects.
    pub fn scattering_part(&self) -> Vec<[Complex64; 2]> {
        self.regular.iter().zip(&self.outgoing).map(|(u, v)| [u[1], v[0]]).collect()
    }

    /// Largest relative mismatch of the tangential fields across any
    /// interface, for both solutions.
    pub fn continuity_residual(&self, stack: &LayerStack) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, radius) in stack.interfaces().enumerate() {
            let (ki, ko) = (self.wavenumbers[i], self.wavenumbers[i + 1]);
            let inner = riccati_table(self.n, ki * radius)?[self.n];
            let outer = riccati_table(self.n, ko * radius)?[self.n];
            for sol in [&self.regular, &self.outgoing] {
                let a = tangential(self.polarization, ki, &inner, sol[i]);
                let b = tangential(self.polarization, ko, &outer, sol[i + 1]);
                for c in 0..2 {
                    let scale = a[c].norm().max(b[c].norm()).max(1e-300);
                    worst = worst.max((a[c] - b[c]).norm() / scale);
                }
            }
        }
        Ok(worst)
    }

    /// Wronskian `αδ − βγ` of the two solutions in the basis of `layer`.
    pub fn wronskian(&self, layer: usize) -> Complex64 {
        let [a, b] = self.regular[layer];
        let [c, d] = self.outgoing[layer];
        a * d - b * c
    }
}

/// Per-layer radial wave amplitudes for one spherical order.
///
/// Only the degree `n` of `order` enters the radial problem; `m` and the
/// parity select angular factors, which are identical in every layer.
pub fn scattering_coefficients(
    stack: &LayerStack,
    order: SphericalOrder,
    omega: f64,
    polarization: Polarization,
) -> Result<RadialSolutions> {
    if !(omega > 0.0) {
        return Err(Error::InvalidArgument(format!("angular frequency must be positive, got {omega}")));
    }
    let frequency = omega / (2.0 * std::f64::consts::PI);
    let tables = InterfaceTables::new(stack, frequency, order.n())?;
    tables.solutions(order.n(), polarization)
}

/// Riccati values on both sides of every interface, for orders `0..=nmax`.
struct InterfaceTables {
    wavenumbers: Vec<Complex64>,
    /// `inner[i][n]`: layer `i` at interface `i`; `outer[i][n]`: layer `i+1`.
    inner: Vec<Vec<RiccatiAt>>,
    outer: Vec<Vec<RiccatiAt>>,
    /// Interfaces with identical indices on both sides reflect nothing.
    transparent: Vec<bool>,
}

impl InterfaceTables {
    fn new(stack: &LayerStack, frequency_hz: f64, nmax: usize) -> Result<Self> {
        let k0 = vacuum_wavenumber(frequency_hz);
        let wavenumbers: Vec<_> = stack.layers.iter().map(|l| l.index * k0).collect();
        let mut inner = Vec::new();
        let mut outer = Vec::new();
        let mut transparent = Vec::new();
        for (i, radius) in stack.interfaces().enumerate() {
            inner.push(riccati_table(nmax, wavenumbers[i] * radius)?);
            outer.push(riccati_table(nmax, wavenumbers[i + 1] * radius)?);
            transparent.push(stack.layers[i].index == stack.layers[i + 1].index);
        }
        Ok(Self { wavenumbers, inner, outer, transparent })
    }

    fn solutions(&self, n: usize, pol: Polarization) -> Result<RadialSolutions> {
        let count = self.wavenumbers.len();
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let mut regular = vec![[one, zero]; count];
        for i in 0..count - 1 {
            regular[i + 1] = if self.transparent[i] {
                regular[i]
            } else {
                let t = tangential(pol, self.wavenumbers[i], &self.inner[i][n], regular[i]);
                untangential(pol, self.wavenumbers[i + 1], &self.outer[i][n], t)
            };
        }
        let mut outgoing = vec![[zero, one]; count];
        for i in (0..count - 1).rev() {
            outgoing[i] = if self.transparent[i] {
                outgoing[i + 1]
            } else {
                let t = tangential(pol, self.wavenumbers[i + 1], &self.outer[i][n], outgoing[i + 1]);
                untangential(pol, self.wavenumbers[i], &self.inner[i][n], t)
            };
        }
        let sol = RadialSolutions { n, polarization: pol, wavenumbers: self.wavenumbers.clone(), regular, outgoing };
        for layer in 0..count {
            let w = sol.wronskian(layer);
            let scale = sol.regular[layer][0].norm() * sol.outgoing[layer][1].norm();
            if !w.is_finite() || w.norm() <= 1e-14 * scale {
                return Err(Error::Conditioning(format!(
                    "singular interface system for n = {n}, {pol:?}, layer {layer}"
                )));
            }
        }
        Ok(sol)
    }
}

/// Series truncation for [`green_phiphi`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Truncation {
    /// Highest spherical order; `None` selects [`LayerStack::default_max_order`].
    pub max_n: Option<usize>,
    /// Highest azimuthal order; `None` sums `m` up to `n`.
    pub max_m: Option<usize>,
}

impl Truncation {
    pub fn orders(max_n: usize) -> Self {
        Self { max_n: Some(max_n), max_m: None }
    }
}

/// Angular weights of TE and TM radial terms at `θ = π/2, φ = 0`:
/// `Σₘ (2−δₘ₀) (n−m)!/(n+m)! (dPₙᵐ/dθ)²` for even `M` waves and
/// `Σₘ (2−δₘ₀) (n−m)!/(n+m)! m² (Pₙᵐ)²` for odd `N` waves.
pub fn angular_weights(n: usize, max_m: Option<usize>) -> (f64, f64) {
    let top = max_m.map_or(n, |m| m.min(n));
    let mut te = 0.0;
    let mut tm = 0.0;
    for m in 0..=top {
        let neumann = if m == 0 { 1.0 } else { 2.0 };
        for parity in [Parity::Even, Parity::Odd] {
            let order = SphericalOrder::new(n, m, parity).expect("m <= n");
            match order.parity() {
                // M_e,φ = −zₙ dPₙᵐ/dθ cos mφ; at the equator dP/dθ = −dP/dx.
                Parity::Even => {
                    let d = assoc_legendre_normalized_dx_at_equator(order.n(), order.m());
                    te += neumann * d * d;
                }
                // N_o,φ = (m/sinθ) Pₙᵐ cos mφ · ψ′/(kr).
                Parity::Odd => {
                    let p = assoc_legendre_normalized(order.n() as i32, order.m() as i32, 0.0).expect("valid");
                    tm += neumann * (m * m) as f64 * p * p;
                }
            }
        }
    }
    (te, tm)
}

/// Value of `G_φφ` together with convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenValue {
    pub value: Complex64,
    /// `|last term| / |partial sum|`.
    pub tail_ratio: f64,
    /// The same ratio for the imaginary parts alone. Near an interface the
    /// real part carries a slowly converging quasi-static image term while
    /// the imaginary part, which is what spectra and couplings use, is
    /// already settled.
    pub im_tail_ratio: f64,
    pub max_n: usize,
    /// Order whose term has the largest imaginary part in magnitude.
    pub dominant_order: usize,
    /// Per-order contributions, index `n − 1`.
    pub terms: Vec<Complex64>,
}

impl GreenValue {
    pub fn converged(&self) -> bool {
        self.tail_ratio <= TAIL_TOLERANCE
    }

    pub fn im_converged(&self) -> bool {
        self.im_tail_ratio <= TAIL_TOLERANCE
    }
}

/// Bessel and Hankel values `j₀..j_{nmax+1}`, `h₀..h_{nmax+1}` at one point.
struct PointBasis {
    x: Complex64,
    j: Vec<Complex64>,
    h: Vec<Complex64>,
}

impl PointBasis {
    fn new(nmax: usize, k: Complex64, r: f64) -> Result<Self> {
        let x = k * r;
        Ok(Self { x, j: bessel_j_array(nmax + 1, x), h: hankel1_array(nmax + 1, x)? })
    }

    /// Radial factor of the φ component as `[regular, outgoing]`:
    /// `zₙ(kr)` for TE and `ψ′ₙ(kr)/(kr) = zₙ₋₁ − n zₙ/(kr)` for TM.
    fn radial(&self, n: usize, pol: Polarization) -> [Complex64; 2] {
        match pol {
            Polarization::Te => [self.j[n], self.h[n]],
            Polarization::Tm => {
                let nf = n as f64;
                [self.j[n - 1] - nf * self.j[n] / self.x, self.h[n - 1] - nf * self.h[n] / self.x]
            }
        }
    }
}

fn combine(w: WavePair, basis: [Complex64; 2]) -> Complex64 {
    w[0] * basis[0] + w[1] * basis[1]
}

/// Evaluation points of one Green function call.
struct Points {
    r: f64,
    r_src: f64,
    field_layer: usize,
    source_layer: usize,
    /// Basis at the lower and upper radius in the source medium (same layer),
    /// or at the source and field points in their own media.
    first: PointBasis,
    second: PointBasis,
}

impl Points {
    fn new(stack: &LayerStack, wavenumbers: &[Complex64], r: f64, r_src: f64, nmax: usize) -> Result<Self> {
        let field_layer = stack.layer_of(r);
        let source_layer = stack.layer_of(r_src);
        let ks = wavenumbers[source_layer];
        let (first, second) = if field_layer == source_layer {
            let (lo, hi) = if r <= r_src { (r, r_src) } else { (r_src, r) };
            (PointBasis::new(nmax, ks, lo)?, PointBasis::new(nmax, ks, hi)?)
        } else {
            (PointBasis::new(nmax, ks, r_src)?, PointBasis::new(nmax, wavenumbers[field_layer], r)?)
        };
        Ok(Self { r, r_src, field_layer, source_layer, first, second })
    }

    /// Radial Green product for one `(n, polarization)`. For field and
    /// source in the same layer this is the direct term plus the scattered
    /// term `[αγ j<j> + βγ (h<j> + j<h>) + βδ h<h>] / W`; at coincident
    /// points the direct term is its regular part `j·j`.
    fn radial_green(&self, sol: &RadialSolutions, include_direct: bool) -> Complex64 {
        let (n, pol) = (sol.n, sol.polarization);
        let w = sol.wronskian(self.source_layer);
        if self.field_layer == self.source_layer {
            let [jl, hl] = self.first.radial(n, pol);
            let [jg, hg] = self.second.radial(n, pol);
            let [a, b] = sol.regular[self.source_layer];
            let [c, d] = sol.outgoing[self.source_layer];
            let mut value = (a * c * jl * jg + b * c * (hl * jg + jl * hg) + b * d * hl * hg) / w;
            if include_direct {
                value += if self.r == self.r_src { jl * jg } else { jl * hg };
            }
            value
        } else {
            let src = self.first.radial(n, pol);
            let fld = self.second.radial(n, pol);
            if self.field_layer > self.source_layer {
                combine(sol.regular[self.source_layer], src) * combine(sol.outgoing[self.field_layer], fld) / w
            } else {
                combine(sol.regular[self.field_layer], fld) * combine(sol.outgoing[self.source_layer], src) / w
            }
        }
    }
}

/// Tangential component `G_φφ(r, r_src, ω)` with both points on the x axis.
///
/// Includes the direct term `G^V` when both points share a layer. At
/// coincident points the divergent real part of the direct term is dropped
/// and only its regular part, which carries the full imaginary part, is kept.
/// Units: μm⁻¹.
pub fn green_phiphi(
    stack: &LayerStack,
    r_um: f64,
    r_src_um: f64,
    omega: f64,
    truncation: Truncation,
) -> Result<GreenValue> {
    let g = green_phiphi_parts(stack, r_um, r_src_um, omega, truncation, true)?;
    warn_truncation(r_um, r_src_um, &g);
    Ok(g)
}

/// Scattering part `G^(fs)` alone.
pub fn green_phiphi_scattered(
    stack: &LayerStack,
    r_um: f64,
    r_src_um: f64,
    omega: f64,
    truncation: Truncation,
) -> Result<GreenValue> {
    let g = green_phiphi_parts(stack, r_um, r_src_um, omega, truncation, false)?;
    warn_truncation(r_um, r_src_um, &g);
    Ok(g)
}

fn warn_truncation(r_um: f64, r_src_um: f64, g: &GreenValue) {
    if !g.converged() {
        log::warn!(
            "G_φφ({r_um}, {r_src_um}) truncated at n = {} with tail ratio {:e}",
            g.max_n,
            g.tail_ratio
        );
    }
}

/// Largest spherical order accepted. Beyond it the outgoing Hankel products
/// in the scattered term overflow for micron-sized optical radii.
pub const MAX_SERIES_ORDER: usize = 120;

fn green_phiphi_parts(
    stack: &LayerStack,
    r_um: f64,
    r_src_um: f64,
    omega: f64,
    truncation: Truncation,
    include_direct: bool,
) -> Result<GreenValue> {
    if !(omega > 0.0) {
        return Err(Error::InvalidArgument(format!("angular frequency must be positive, got {omega}")));
    }
    let outer = stack.outer_radius();
    for r in [r_um, r_src_um] {
        if !(r > 0.0 && r < outer) {
            return Err(Error::InvalidArgument(format!("point at r = {r} μm is not inside a finite layer")));
        }
    }
    let frequency = omega / (2.0 * std::f64::consts::PI);
    let max_n = truncation.max_n.unwrap_or_else(|| stack.default_max_order(frequency));
    if max_n == 0 {
        return Err(Error::InvalidArgument("truncation must include n >= 1".into()));
    }
    if max_n > MAX_SERIES_ORDER {
        return Err(Error::InvalidArgument(format!(
            "truncation n = {max_n} exceeds the supported maximum {MAX_SERIES_ORDER}"
        )));
    }
    let tables = InterfaceTables::new(stack, frequency, max_n)?;
    let points = Points::new(stack, &tables.wavenumbers, r_um, r_src_um, max_n)?;
    let ks = tables.wavenumbers[points.source_layer];

    let mut terms = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let (w_te, w_tm) = angular_weights(n, truncation.max_m);
        let mut radial = Complex64::new(0.0, 0.0);
        for (pol, weight) in [(Polarization::Te, w_te), (Polarization::Tm, w_tm)] {
            if weight == 0.0 {
                continue;
            }
            let sol = tables.solutions(n, pol)?;
            radial += weight * points.radial_green(&sol, include_direct);
        }
        let prefactor = (2 * n + 1) as f64 / (n * (n + 1)) as f64;
        terms.push(I * ks / (4.0 * std::f64::consts::PI) * prefactor * radial);
    }
    let value: Complex64 = terms.iter().sum();
    let last = terms.last().copied().unwrap_or_default();
    let tail_ratio = if value.norm() > 0.0 { last.norm() / value.norm() } else { 0.0 };
    let im_tail_ratio = if value.im != 0.0 { last.im.abs() / value.im.abs() } else { 0.0 };
    let dominant_order = terms
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.im.abs().total_cmp(&b.1.im.abs()))
        .map_or(1, |(i, _)| i + 1);
    Ok(GreenValue { value, tail_ratio, im_tail_ratio, max_n, dominant_order, terms })
}

/// Closed-form tangential Green function of an unbounded homogeneous medium
/// with wavenumber `k` for two points separated by `distance` along the
/// line transverse to the dipoles:
/// `e^{ikR}/(4πR) · [1 + i/(kR) − 1/(kR)²]`.
pub fn homogeneous_transverse_green(k: Complex64, distance: f64) -> Complex64 {
    let kr = k * distance;
    (I * kr).exp() / (4.0 * std::f64::consts::PI * distance) * (1.0 + I / kr - 1.0 / (kr * kr))
}

/// Sampled `Im G_φφ(r, r′, f)` over a frequency window.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenSpectrum {
    pub frequencies_hz: Vec<f64>,
    pub values: Vec<f64>,
    pub field_position_um: f64,
    pub source_position_um: f64,
    /// Samples whose imaginary-part tail ratio exceeds [`TAIL_TOLERANCE`].
    pub unconverged: usize,
}

/// Evenly spaced grid of `samples` points including both endpoints.
pub fn frequency_grid(f_min_hz: f64, f_max_hz: f64, samples: usize) -> Result<Vec<f64>> {
    if !(f_min_hz < f_max_hz) || f_min_hz <= 0.0 {
        return Err(Error::InvalidArgument(format!("need 0 < f_min < f_max, got [{f_min_hz}, {f_max_hz}]")));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {samples}")));
    }
    let step = (f_max_hz - f_min_hz) / (samples - 1) as f64;
    Ok((0..samples)
        .map(|i| if i == samples - 1 { f_max_hz } else { f_min_hz + step * i as f64 })
        .collect())
}

/// `Im G_φφ` at each frequency of a window; samples run in parallel.
pub fn spectrum_scan(
    stack: &LayerStack,
    r_um: f64,
    r_src_um: f64,
    f_min_hz: f64,
    f_max_hz: f64,
    samples: usize,
    truncation: Truncation,
) -> Result<GreenSpectrum> {
    let frequencies = frequency_grid(f_min_hz, f_max_hz, samples)?;
    spectrum_at(stack, r_um, r_src_um, frequencies, truncation)
}

/// `Im G_φφ` on an arbitrary strictly increasing frequency list.
pub fn spectrum_at(
    stack: &LayerStack,
    r_um: f64,
    r_src_um: f64,
    frequencies_hz: Vec<f64>,
    truncation: Truncation,
) -> Result<GreenSpectrum> {
    let results: Vec<GreenValue> = frequencies_hz
        .par_iter()
        .map(|&f| green_phiphi_parts(stack, r_um, r_src_um, angular_frequency(f), truncation, true))
        .collect::<Result<_>>()?;
    let unconverged = results.iter().filter(|g| !g.im_converged()).count();
    if unconverged > 0 {
        let worst = results.iter().map(|g| g.im_tail_ratio).fold(0.0, f64::max);
        log::warn!(
            "{unconverged} of {} spectrum samples at r = {r_um}, r' = {r_src_um} exceed the tail tolerance (worst {worst:e})",
            results.len()
        );
    }
    Ok(GreenSpectrum {
        values: results.iter().map(|g| g.value.im).collect(),
        frequencies_hz,
        field_position_um: r_um,
        source_position_um: r_src_um,
        unconverged,
    })
}

/// `Im G_φφ(r, r′, f)` at fixed source radius and frequency over a list of
/// field radii; points run in parallel and truncation warnings are
/// summarised once, as for spectra.
pub fn radial_scan(
    stack: &LayerStack,
    radii_um: &[f64],
    r_src_um: f64,
    omega: f64,
    truncation: Truncation,
) -> Result<Vec<f64>> {
    let results: Vec<GreenValue> = radii_um
        .par_iter()
        .map(|&r| green_phiphi_parts(stack, r, r_src_um, omega, truncation, true))
        .collect::<Result<_>>()?;
    let unconverged = results.iter().filter(|g| !g.im_converged()).count();
    if unconverged > 0 {
        let worst = results.iter().map(|g| g.im_tail_ratio).fold(0.0, f64::max);
        log::warn!(
            "{unconverged} of {} radial samples with r' = {r_src_um} exceed the tail tolerance (worst {worst:e})",
            results.len()
        );
    }
    Ok(results.iter().map(|g| g.value.im).collect())
}

impl GreenSpectrum {
    pub const CSV_HEADER: &'static str = "frequency_hz,im_g_phiphi";

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for (f, v) in self.frequencies_hz.iter().zip(&self.values) {
            writeln!(out, "{f:?},{v:?}")?;
        }
        Ok(())
    }

    /// Parses the CSV written by [`GreenSpectrum::write_csv`]; positions are
    /// not part of the file and must be supplied.
    pub fn read_csv<R: BufRead>(input: R, field_position_um: f64, source_position_um: f64) -> io::Result<Self> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != Self::CSV_HEADER {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let mut frequencies_hz = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (f, v) = line.split_once(',').ok_or_else(|| bad(format!("malformed row {line:?}")))?;
            frequencies_hz.push(f.trim().parse().map_err(|e| bad(format!("{e}")))?);
            values.push(v.trim().parse().map_err(|e| bad(format!("{e}")))?);
        }
        Ok(Self { frequencies_hz, values, field_position_um, source_position_um, unconverged: 0 })
    }
}

/// Peak frequency, full width at half maximum and quality factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceInfo {
    pub peak_frequency_hz: f64,
    pub peak_value: f64,
    pub bandwidth_fwhm_hz: f64,
    pub quality_factor: f64,
}

/// Locates the highest interior maximum of a spectrum.
///
/// The peak position and height come from a parabola through the maximum
/// sample and its neighbours. The half-maximum level sits halfway between
/// the spectrum's minimum and the peak; crossings are linearly interpolated.
pub fn find_resonance(spectrum: &GreenSpectrum) -> Result<ResonanceInfo> {
    let f = &spectrum.frequencies_hz;
    let v = &spectrum.values;
    if f.len() != v.len() || f.len() < 5 {
        return Err(Error::InvalidArgument("resonance search needs at least 5 samples".into()));
    }
    let imax = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).expect("non-empty");
    if imax == 0 || imax == v.len() - 1 || !(v[imax] > v[imax - 1] && v[imax] > v[imax + 1]) {
        return Err(Error::NoInteriorPeak);
    }
    let (peak_frequency_hz, peak_value) = parabolic_vertex(
        (f[imax - 1], v[imax - 1]),
        (f[imax], v[imax]),
        (f[imax + 1], v[imax + 1]),
    );
    let floor = v.iter().copied().fold(f64::INFINITY, f64::min);
    let half = floor + 0.5 * (peak_value - floor);

    let cross = |i: usize, j: usize| f[i] + (half - v[i]) * (f[j] - f[i]) / (v[j] - v[i]);
    let left = (0..imax).rev().find(|&i| v[i] <= half).map(|i| cross(i, i + 1));
    let right = (imax + 1..v.len()).find(|&i| v[i] <= half).map(|i| cross(i - 1, i));
    let left = left.ok_or(Error::HalfMaxNotBracketed("low-frequency"))?;
    let right = right.ok_or(Error::HalfMaxNotBracketed("high-frequency"))?;
    let bandwidth = right - left;
    Ok(ResonanceInfo {
        peak_frequency_hz,
        peak_value,
        bandwidth_fwhm_hz: bandwidth,
        quality_factor: peak_frequency_hz / bandwidth,
    })
}

/// Vertex of the parabola through three points with distinct abscissae.
fn parabolic_vertex(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> (f64, f64) {
    let (x0, y0) = a;
    let (x1, y1) = b;
    let (x2, y2) = c;
    let d0 = (y1 - y0) / (x1 - x0);
    let d1 = (y2 - y1) / (x2 - x1);
    let curvature = (d1 - d0) / (x2 - x0);
    if curvature >= 0.0 {
        return b;
    }
    // y = y1 + d·(x−x1) + curvature·(x−x1)²  around the middle point
    let slope = d0 + curvature * (x1 - x0);
    let dx = -slope / (2.0 * curvature);
    (x1 + dx, y1 + slope * dx + curvature * dx * dx)
}

/// Refines a coarse resonance by rescanning around its maximum.
///
/// The rescan places samples at geometrically growing offsets from the
/// coarse peak (densest at the centre) out to `span_hz` on both sides, so a
/// narrow line is resolved without a uniformly fine grid.
pub fn refine_resonance(
    stack: &LayerStack,
    r_um: f64,
    r_src_um: f64,
    coarse: &GreenSpectrum,
    span_hz: f64,
    truncation: Truncation,
) -> Result<(ResonanceInfo, GreenSpectrum)> {
    let rough = find_resonance(coarse)?;
    let centre = rough.peak_frequency_hz;
    let spacing = coarse.frequencies_hz.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let innermost = (spacing * 1e-3).max(centre * 1e-12);
    let per_side = 60;
    let ratio = (span_hz / innermost).powf(1.0 / (per_side - 1) as f64);
    let mut frequencies = Vec::with_capacity(2 * per_side + 1);
    for i in (0..per_side).rev() {
        frequencies.push(centre - innermost * ratio.powi(i as i32));
    }
    frequencies.push(centre);
    for i in 0..per_side {
        frequencies.push(centre + innermost * ratio.powi(i as i32));
    }
    let fine = spectrum_at(stack, r_um, r_src_um, frequencies, truncation)?;
    Ok((find_resonance(&fine)?, fine))
}

/// The 2×2 matrix `Ḡ(i, j)` coupling the atomic amplitudes, with the
/// effective coupling constants `χᵢ = √Ḡ(i, i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingMatrix {
    g: [[f64; 2]; 2],
    chi1: f64,
    chi2: f64,
    rank_one_defect: f64,
}

impl CouplingMatrix {
    /// From the three independent entries. Diagonals must be non-negative.
    pub fn new(g11: f64, g12: f64, g22: f64) -> Result<Self> {
        if g11 < 0.0 {
            return Err(Error::NegativeDiagonal { atom: 1, value: g11 });
        }
        if g22 < 0.0 {
            return Err(Error::NegativeDiagonal { atom: 2, value: g22 });
        }
        for v in [g11, g12, g22] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite coupling entry {v}")));
            }
        }
        let product = g11 * g22;
        let rank_one_defect = (product - g12 * g12).abs() / product.max(f64::EPSILON);
        Ok(Self { g: [[g11, g12], [g12, g22]], chi1: g11.sqrt(), chi2: g22.sqrt(), rank_one_defect })
    }

    /// Rank-one (factored) couplings `Ḡ(i, j) = χᵢχⱼ`.
    pub fn from_chis(chi1: f64, chi2: f64) -> Result<Self> {
        if chi1 < 0.0 || chi2 < 0.0 {
            return Err(Error::InvalidArgument(format!("coupling constants must be non-negative: {chi1}, {chi2}")));
        }
        Self::new(chi1 * chi1, chi1 * chi2, chi2 * chi2)
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.g[i][j]
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        self.g
    }

    pub fn chi1(&self) -> f64 {
        self.chi1
    }

    pub fn chi2(&self) -> f64 {
        self.chi2
    }

    /// `|Ḡ₁₁Ḡ₂₂ − Ḡ₁₂²| / max(Ḡ₁₁Ḡ₂₂, ε)`; zero for factored couplings.
    pub fn rank_one_defect(&self) -> f64 {
        self.rank_one_defect
    }

    pub fn trace(&self) -> f64 {
        self.g[0][0] + self.g[1][1]
    }

    pub fn determinant(&self) -> f64 {
        self.g[0][0] * self.g[1][1] - self.g[0][1] * self.g[1][0]
    }
}

/// Coupling matrix and the Green function values it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingReport {
    pub coupling: CouplingMatrix,
    /// `Im G_φφ(aᵢ, aⱼ, ω_f)` before scaling, μm⁻¹.
    pub im_green: [[f64; 2]; 2],
    /// Relative difference between the two off-diagonal estimates.
    pub reciprocity_defect: f64,
    pub dominant_orders: [[usize; 2]; 2],
}

/// Reciprocity tolerance on `Im G(a₁, a₂)` versus `Im G(a₂, a₁)`.
pub const RECIPROCITY_TOLERANCE: f64 = 1e-8;

/// `Ḡ(i, j) = scale · dᵢdⱼ · Im G_φφ(aᵢ, aⱼ, ω_f)`.
///
/// `scale` absorbs `κ` and the unit of the dipole moment; ratios of the
/// coupling constants do not depend on it.
pub fn coupling_matrix(
    stack: &LayerStack,
    atom1: AtomPlacement,
    atom2: AtomPlacement,
    omega_f: f64,
    scale: f64,
    truncation: Truncation,
) -> Result<CouplingReport> {
    if !(omega_f > 0.0) {
        return Err(Error::InvalidArgument(format!("field frequency must be positive, got {omega_f}")));
    }
    atom1.check_inside(stack)?;
    atom2.check_inside(stack)?;
    let atoms = [atom1, atom2];
    let mut im = [[0.0; 2]; 2];
    let mut dominant = [[0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let g = green_phiphi_parts(stack, atoms[i].position_um, atoms[j].position_um, omega_f, truncation, true)?;
            if !g.im_converged() {
                log::warn!("Im G(a{}, a{}) truncated at n = {} with tail ratio {:e}", i + 1, j + 1, g.max_n, g.im_tail_ratio);
            }
            im[i][j] = g.value.im;
            dominant[i][j] = g.dominant_order;
        }
    }
    let scale_off = im[0][1].abs().max(im[1][0].abs());
    let reciprocity_defect = if scale_off > 0.0 { (im[0][1] - im[1][0]).abs() / scale_off } else { 0.0 };
    if reciprocity_defect > RECIPROCITY_TOLERANCE {
        return Err(Error::AsymmetricCoupling(reciprocity_defect));
    }
    let off = 0.5 * (im[0][1] + im[1][0]);
    let d = [atom1.dipole, atom2.dipole];
    let g11 = scale * d[0] * d[0] * im[0][0];
    let g22 = scale * d[1] * d[1] * im[1][1];
    let g12 = scale * d[0] * d[1] * off;
    let coupling = CouplingMatrix::new(g11, g12, g22)?;
    Ok(CouplingReport { coupling, im_green: im, reciprocity_defect, dominant_orders: dominant })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn reference_stack_geometry() {
        let stack = LayerStack::reference_coated_sphere();
        assert_eq!(stack.layers().len(), 7);
        assert!((stack.outer_radius() - 1.96).abs() < 1e-12);
        assert_eq!(stack.layer_of(0.9), 0);
        assert_eq!(stack.layer_of(1.1), 1);
        assert_eq!(stack.layer_of(1.3), 2);
        assert_eq!(stack.layer_of(5.0), 6);
    }

    #[test]
    fn minimal_and_invalid_stacks() {
        let s = LayerStack::build(&[ShellSpec::outer_radius(1.0, c(1.5, 0.0))], c(1.0, 0.0)).unwrap();
        assert_eq!(s.layers().len(), 2);
        let bad_radius = LayerStack::build(
            &[ShellSpec::outer_radius(1.0, c(1.5, 0.0)), ShellSpec::outer_radius(0.8, c(2.0, 0.0))],
            c(1.0, 0.0),
        );
        assert!(matches!(bad_radius, Err(Error::InvalidStack(_))));
        let gain = LayerStack::build(&[ShellSpec::outer_radius(1.0, c(1.5, -1e-3))], c(1.0, 0.0));
        assert!(matches!(gain, Err(Error::InvalidStack(_))));
        let thin = LayerStack::build(&[ShellSpec::thickness(0.0, c(1.5, 0.0))], c(1.0, 0.0));
        assert!(matches!(thin, Err(Error::InvalidStack(_))));
        assert!(LayerStack::new(vec![Layer { outer_radius_um: f64::INFINITY, index: c(1.0, 0.0) }]).is_err());
    }

    #[test]
    fn quarter_wave_helper() {
        let t = quarter_wave_thickness(1.24, 1.46);
        assert!((t - 1.24 / 5.84).abs() < 1e-15);
        assert!((t - 0.212).abs() < 5e-4);
        let shell = ShellSpec::quarter_wave(1.24, c(1.46, 3e-3));
        assert_eq!(shell.extent, Extent::Thickness(t));
    }

    #[test]
    fn equator_weights_at_first_order() {
        // n = 1: m = 0 even M wave and m = 1 odd N wave, each with weight 1.
        let (te, tm) = angular_weights(1, None);
        assert!((te - 1.0).abs() < 1e-15);
        assert!((tm - 1.0).abs() < 1e-15);
        let (te0, tm0) = angular_weights(3, Some(0));
        assert!(te0 > 0.0);
        assert_eq!(tm0, 0.0);
    }

    /// The m-sums at the equator have closed forms by the addition theorem:
    /// TE weight `n(n+1)/2` and TM weight `n(n+1)/2`.
    #[test]
    fn equator_weights_addition_theorem() {
        for n in 1..=60usize {
            let (te, tm) = angular_weights(n, None);
            let expect = (n * (n + 1)) as f64 / 2.0;
            assert!((te - expect).abs() < 1e-9 * expect, "n={n} te={te}");
            assert!((tm - expect).abs() < 1e-9 * expect, "n={n} tm={tm}");
        }
    }

    #[test]
    fn vacuum_solutions_have_no_scattering() {
        let stack = LayerStack::vacuum(&[0.5, 1.0, 1.5]).unwrap();
        let order = SphericalOrder::new(3, 1, Parity::Even).unwrap();
        for pol in [Polarization::Te, Polarization::Tm] {
            let sol = scattering_coefficients(&stack, order, angular_frequency(200e12), pol).unwrap();
            for [b, c] in sol.scattering_part() {
                assert_eq!(b, Complex64::new(0.0, 0.0));
                assert_eq!(c, Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn glass_sphere_interface_residual() {
        let stack = LayerStack::build(&[ShellSpec::outer_radius(1.0, c(1.5, 0.0))], c(1.0, 0.0)).unwrap();
        let order = SphericalOrder::new(1, 0, Parity::Even).unwrap();
        for pol in [Polarization::Te, Polarization::Tm] {
            let sol = scattering_coefficients(&stack, order, angular_frequency(200e12), pol).unwrap();
            assert!(sol.continuity_residual(&stack).unwrap() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_positive_frequency() {
        let stack = LayerStack::reference_coated_sphere();
        let order = SphericalOrder::new(1, 0, Parity::Even).unwrap();
        assert!(scattering_coefficients(&stack, order, 0.0, Polarization::Te).is_err());
        assert!(green_phiphi(&stack, 0.5, 0.5, -1.0, Truncation::default()).is_err());
        assert!(green_phiphi(&stack, 2.5, 0.5, 1e15, Truncation::default()).is_err());
    }

    #[test]
    fn coincident_vacuum_value() {
        // Regular part of the free-space Green function at coincidence: ik/(6π).
        let stack = LayerStack::vacuum(&[2.0]).unwrap();
        let f = 241.7e12;
        let k = vacuum_wavenumber(f);
        let g = green_phiphi(&stack, 0.9, 0.9, angular_frequency(f), Truncation::default()).unwrap();
        let expect = c(0.0, k / (6.0 * std::f64::consts::PI));
        assert!((g.value - expect).norm() < 1e-12 * expect.norm());
    }

    #[test]
    fn grid_endpoints() {
        let g = frequency_grid(200e12, 280e12, 2).unwrap();
        assert_eq!(g, vec![200e12, 280e12]);
        assert!(frequency_grid(2.0, 1.0, 5).is_err());
        assert!(frequency_grid(1.0, 2.0, 1).is_err());
    }

    fn lorentzian(centre: f64, fwhm: f64, f: &[f64]) -> Vec<f64> {
        let g = fwhm / 2.0;
        f.iter().map(|&x| g * g / ((x - centre).powi(2) + g * g)).collect()
    }

    #[test]
    fn synthetic_lorentzian_resonance() {
        let f = frequency_grid(200e12, 280e12, 8001).unwrap();
        let values = lorentzian(241.7e12, 1e12, &f);
        let spec = GreenSpectrum {
            frequencies_hz: f,
            values,
            field_position_um: 0.9,
            source_position_um: 0.9,
            unconverged: 0,
        };
        let res = find_resonance(&spec).unwrap();
        assert!((res.peak_frequency_hz - 241.7e12).abs() < 0.01e12);
        assert!((res.bandwidth_fwhm_hz - 1e12).abs() < 0.01e12, "{}", res.bandwidth_fwhm_hz);
        assert!((res.quality_factor - 241.7).abs() < 3.0);
    }

    #[test]
    fn resonance_errors() {
        let f = frequency_grid(1.0, 2.0, 11).unwrap();
        let mono = GreenSpectrum {
            values: f.clone(),
            frequencies_hz: f.clone(),
            field_position_um: 1.0,
            source_position_um: 1.0,
            unconverged: 0,
        };
        assert_eq!(find_resonance(&mono), Err(Error::NoInteriorPeak));
        // Peak near the low edge: the left half maximum is never reached.
        let edge = GreenSpectrum { values: lorentzian(1.08, 0.5, &f), ..mono.clone() };
        assert_eq!(find_resonance(&edge), Err(Error::HalfMaxNotBracketed("low-frequency")));
    }

    #[test]
    fn coupling_matrix_invariants() {
        let m = CouplingMatrix::from_chis(0.254, 0.151).unwrap();
        assert!(m.rank_one_defect() < 1e-15);
        assert!((m.chi1() - 0.254).abs() < 1e-15);
        assert_eq!(m.entry(0, 1), m.entry(1, 0));
        assert!(matches!(CouplingMatrix::new(-1.0, 0.0, 1.0), Err(Error::NegativeDiagonal { atom: 1, .. })));
        let general = CouplingMatrix::new(0.01, 0.012, 0.04).unwrap();
        assert!((general.rank_one_defect() - (0.0004 - 0.000144) / 0.0004).abs() < 1e-12);
    }

    #[test]
    fn same_position_atoms_are_rank_one() {
        let stack = LayerStack::reference_coated_sphere();
        let a = AtomPlacement::new(0.9, 1.0).unwrap();
        let report = coupling_matrix(&stack, a, a, angular_frequency(241.7e12), 1.0, Truncation::default()).unwrap();
        assert_eq!(report.coupling.rank_one_defect(), 0.0);
        assert_eq!(report.coupling.chi1(), report.coupling.chi2());
    }

    #[test]
    fn placement_validation() {
        assert!(AtomPlacement::new(0.0, 1.0).is_err());
        assert!(AtomPlacement::new(-1.0, 1.0).is_err());
        let stack = LayerStack::reference_coated_sphere();
        let inside = AtomPlacement::new(0.9, 1.0).unwrap();
        let outside = AtomPlacement::new(2.5, 1.0).unwrap();
        assert!(matches!(
            coupling_matrix(&stack, inside, outside, 1e15, 1.0, Truncation::default()),
            Err(Error::InvalidPlacement(_))
        ));
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let spec = GreenSpectrum {
            frequencies_hz: vec![2e14, 2.5e14, 3e14],
            values: vec![0.1, -0.25, 1.0 / 3.0],
            field_position_um: 0.9,
            source_position_um: 1.1,
            unconverged: 0,
        };
        let mut buf = Vec::new();
        spec.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("frequency_hz,im_g_phiphi\n"));
        let back = GreenSpectrum::read_csv(&buf[..], 0.9, 1.1).unwrap();
        assert_eq!(back, spec);
    }
}
