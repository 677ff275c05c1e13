//! Run configuration, read from a TOML file.
//!
//! Every dimensional key carries its unit in the name: `_um` for
//! micrometres, `_thz` for terahertz. Dynamical quantities are measured in
//! units of the atomic transition frequency and carry `_omega_at`; times
//! are the dimensionless `tau = ω_at t`. Unknown keys are rejected so that
//! a misspelt unit suffix cannot be silently ignored.

use std::path::{Path, PathBuf};

use microsphere_qed::layered_green::{AtomPlacement, LayerStack, ShellSpec, Truncation};
use microsphere_qed::lossless_dynamics::InitialExcitation;
use num_complex::Complex64;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub stack: StackConfig,
    #[serde(default)]
    pub atoms: AtomsConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub couplings: CouplingsConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub dissipation: DissipationConfig,
    #[serde(default)]
    pub surface: SurfaceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Either a named preset or an explicit list of shells, innermost first.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackConfig {
    pub preset: Option<String>,
    #[serde(default)]
    pub shells: Vec<ShellConfig>,
    /// `[re, im]` of the surrounding medium.
    #[serde(default = "vacuum_index")]
    pub ambient_index: [f64; 2],
}

impl Default for StackConfig {
    fn default() -> Self {
        Self { preset: Some("reference".into()), shells: Vec::new(), ambient_index: vacuum_index() }
    }
}

fn vacuum_index() -> [f64; 2] {
    [1.0, 0.0]
}

/// One shell: exactly one of `outer_radius_um`, `thickness_um` or
/// `quarter_wave_um` (the design vacuum wavelength of a λ/4 layer).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellConfig {
    pub index: [f64; 2],
    pub outer_radius_um: Option<f64>,
    pub thickness_um: Option<f64>,
    pub quarter_wave_um: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtomsConfig {
    pub a1_um: f64,
    pub a2_um: f64,
    #[serde(default = "one")]
    pub dipole1: f64,
    #[serde(default = "one")]
    pub dipole2: f64,
}

impl Default for AtomsConfig {
    fn default() -> Self {
        Self { a1_um: 0.9, a2_um: 1.1, dipole1: 1.0, dipole2: 1.0 }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub f_min_thz: f64,
    pub f_max_thz: f64,
    pub samples: usize,
    /// Highest multipole order; omitted means size-dependent default.
    pub max_order: Option<usize>,
    pub radial_min_um: Option<f64>,
    pub radial_max_um: Option<f64>,
    pub radial_samples: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            f_min_thz: 200.0,
            f_max_thz: 280.0,
            samples: 161,
            max_order: None,
            radial_min_um: None,
            radial_max_um: None,
            radial_samples: 200,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingsConfig {
    /// Field frequency at which couplings are evaluated. Omitted means the
    /// peak of the self-spectrum at `a1`.
    pub field_frequency_thz: Option<f64>,
    /// Multiplies `Im G`; absorbs the unknown light–matter prefactor.
    pub scale: Option<f64>,
    /// Alternative to `scale`: choose it so that `χ₁` takes this value.
    pub chi1_target_omega_at: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    /// `Δω = (ω_f − ω_at)/ω_at`.
    #[serde(default)]
    pub detuning_omega_at: f64,
    /// 1: atom 1 starts excited; 0: atom 2.
    #[serde(default)]
    pub lambda0: u8,
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    #[serde(default = "default_time_samples")]
    pub time_samples: usize,
    /// Explicit rank-one couplings; bypass the electromagnetic pipeline.
    pub chi1_omega_at: Option<f64>,
    pub chi2_omega_at: Option<f64>,
    /// Explicit full coupling matrix `[Ḡ₁₁, Ḡ₁₂, Ḡ₂₂]` for the general mode.
    pub coupling_matrix_omega_at: Option<[f64; 3]>,
    /// Master-equation step in `tau`.
    #[serde(default = "default_step")]
    pub step_tau: f64,
    #[serde(default = "default_cutoff")]
    pub photon_cutoff: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            detuning_omega_at: 0.0,
            lambda0: 0,
            tau_max: default_tau_max(),
            time_samples: default_time_samples(),
            chi1_omega_at: None,
            chi2_omega_at: None,
            coupling_matrix_omega_at: None,
            step_tau: default_step(),
            photon_cutoff: default_cutoff(),
        }
    }
}

fn default_tau_max() -> f64 {
    200.0
}

fn default_time_samples() -> usize {
    4000
}

fn default_step() -> f64 {
    microsphere_qed::lindblad_dynamics::DEFAULT_STEP
}

fn default_cutoff() -> usize {
    microsphere_qed::lindblad_dynamics::DEFAULT_PHOTON_CUTOFF
}

/// Field loss for the master equation. A direct `gamma1_omega_at` wins
/// over `derive_from_bandwidth`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipationConfig {
    pub gamma1_omega_at: Option<f64>,
    #[serde(default)]
    pub derive_from_bandwidth: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceConfig {
    pub chi1_min_omega_at: f64,
    pub chi1_max_omega_at: f64,
    pub chi1_samples: usize,
    pub chi2_min_omega_at: f64,
    pub chi2_max_omega_at: f64,
    pub chi2_samples: usize,
    pub tau: f64,
    /// Overrides `dynamics.detuning_omega_at` for the surface only.
    pub detuning_omega_at: Option<f64>,
    /// Overrides `dynamics.lambda0` for the surface only.
    pub lambda0: Option<u8>,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            chi1_min_omega_at: 0.0,
            chi1_max_omega_at: 1.0,
            chi1_samples: 101,
            chi2_min_omega_at: 0.0,
            chi2_max_omega_at: 1.0,
            chi2_samples: 101,
            tau: 27.0,
            detuning_omega_at: None,
            lambda0: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub radial_profile: bool,
    /// Also write every sampled joint density matrix of a master-equation run.
    #[serde(default)]
    pub lindblad_states: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), radial_profile: true, lindblad_states: false }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn complex(v: [f64; 2]) -> Complex64 {
    Complex64::new(v[0], v[1])
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks that do not require any physics to be computed.
    fn validate(&self) -> Result<(), CliError> {
        let stack = self.layer_stack()?;
        let outer = stack.outer_radius();
        for (name, r) in [("a1_um", self.atoms.a1_um), ("a2_um", self.atoms.a2_um)] {
            if !(r > 0.0 && r < outer) {
                return Err(config_error(format!("atoms.{name} = {r} must lie inside the sphere (0, {outer})")));
            }
        }
        let s = &self.spectrum;
        if !(s.f_min_thz > 0.0 && s.f_min_thz < s.f_max_thz) {
            return Err(config_error(format!("need 0 < f_min_thz < f_max_thz, got {} and {}", s.f_min_thz, s.f_max_thz)));
        }
        if s.samples < 2 {
            return Err(config_error(format!("spectrum.samples must be at least 2, got {}", s.samples)));
        }
        if s.radial_samples < 2 {
            return Err(config_error("spectrum.radial_samples must be at least 2"));
        }
        let (lo, hi) = self.radial_range(outer);
        if !(lo > 0.0 && lo < hi && hi < outer) {
            return Err(config_error(format!("radial range [{lo}, {hi}] must lie inside (0, {outer})")));
        }
        let d = &self.dynamics;
        if d.lambda0 > 1 || self.surface.lambda0.is_some_and(|l| l > 1) {
            return Err(config_error("lambda0 must be 0 or 1"));
        }
        if !(d.tau_max > 0.0 && d.tau_max.is_finite()) || d.time_samples < 2 {
            return Err(config_error("dynamics needs tau_max > 0 and time_samples >= 2"));
        }
        if !(d.step_tau > 0.0) {
            return Err(config_error("dynamics.step_tau must be positive"));
        }
        if d.chi1_omega_at.is_some() != d.chi2_omega_at.is_some() {
            return Err(config_error("give both chi1_omega_at and chi2_omega_at, or neither"));
        }
        let c = &self.couplings;
        if c.scale.is_some() && c.chi1_target_omega_at.is_some() {
            return Err(config_error("couplings.scale and couplings.chi1_target_omega_at are exclusive"));
        }
        if c.scale.is_some_and(|s| !(s > 0.0)) || c.chi1_target_omega_at.is_some_and(|t| !(t > 0.0)) {
            return Err(config_error("couplings.scale and couplings.chi1_target_omega_at must be positive"));
        }
        if let Some(g) = self.dissipation.gamma1_omega_at {
            if !(g >= 0.0) {
                return Err(config_error(format!("gamma1_omega_at must be >= 0, got {g}")));
            }
        }
        let sf = &self.surface;
        if sf.chi1_samples < 1 || sf.chi2_samples < 1 {
            return Err(config_error("surface grids need at least one sample"));
        }
        if !(sf.chi1_min_omega_at >= 0.0 && sf.chi1_min_omega_at <= sf.chi1_max_omega_at)
            || !(sf.chi2_min_omega_at >= 0.0 && sf.chi2_min_omega_at <= sf.chi2_max_omega_at)
        {
            return Err(config_error("surface ranges need 0 <= min <= max"));
        }
        if !(sf.tau >= 0.0 && sf.tau.is_finite()) {
            return Err(config_error("surface.tau must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn layer_stack(&self) -> Result<LayerStack, CliError> {
        let s = &self.stack;
        match (s.preset.as_deref(), s.shells.is_empty()) {
            (Some("reference"), true) => Ok(LayerStack::reference_coated_sphere()),
            (Some(other), true) => Err(config_error(format!("unknown stack preset {other:?}"))),
            (Some(_), false) => Err(config_error("give either stack.preset or stack.shells, not both")),
            (None, true) => Err(config_error("stack needs a preset or at least one shell")),
            (None, false) => {
                let shells = s
                    .shells
                    .iter()
                    .enumerate()
                    .map(|(i, sh)| {
                        let n = complex(sh.index);
                        match (sh.outer_radius_um, sh.thickness_um, sh.quarter_wave_um) {
                            (Some(r), None, None) => Ok(ShellSpec::outer_radius(r, n)),
                            (None, Some(t), None) => Ok(ShellSpec::thickness(t, n)),
                            (None, None, Some(l)) => Ok(ShellSpec::quarter_wave(l, n)),
                            _ => Err(config_error(format!(
                                "shell {i}: give exactly one of outer_radius_um, thickness_um, quarter_wave_um"
                            ))),
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                LayerStack::build(&shells, complex(s.ambient_index)).map_err(|e| config_error(e.to_string()))
            }
        }
    }

    pub fn placements(&self) -> Result<(AtomPlacement, AtomPlacement), CliError> {
        let a = &self.atoms;
        let p1 = AtomPlacement::new(a.a1_um, a.dipole1).map_err(|e| config_error(e.to_string()))?;
        let p2 = AtomPlacement::new(a.a2_um, a.dipole2).map_err(|e| config_error(e.to_string()))?;
        Ok((p1, p2))
    }

    pub fn truncation(&self) -> Truncation {
        Truncation { max_n: self.spectrum.max_order, max_m: None }
    }

    /// Radial map range; defaults to the whole finite part of the stack,
    /// kept a little away from the centre and the outer surface.
    pub fn radial_range(&self, outer_radius_um: f64) -> (f64, f64) {
        let lo = self.spectrum.radial_min_um.unwrap_or(0.01 * outer_radius_um);
        let hi = self.spectrum.radial_max_um.unwrap_or(0.999 * outer_radius_um);
        (lo, hi)
    }

    pub fn initial(&self) -> InitialExcitation {
        InitialExcitation::from_lambda(self.dynamics.lambda0).expect("validated")
    }

    pub fn explicit_chis(&self) -> Option<(f64, f64)> {
        self.dynamics.chi1_omega_at.zip(self.dynamics.chi2_omega_at)
    }
}
