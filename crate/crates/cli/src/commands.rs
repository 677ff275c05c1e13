use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use microsphere_qed::layered_green::{
    angular_frequency, coupling_matrix, find_resonance, radial_scan, refine_resonance, spectrum_scan,
    CouplingMatrix, CouplingReport, GreenSpectrum, LayerStack,
};
use microsphere_qed::lindblad_dynamics::{
    evolve as evolve_density, gamma_from_bandwidth, EvolveOptions, JointDensityMatrix, SystemSpec,
};
use microsphere_qed::lossless_dynamics::{
    concurrence_surface, plateau_fraction, solve_factored, solve_general, uniform_time_grid, AmplitudeTrajectory,
    DynamicsParams, InitialExcitation,
};
use num_complex::Complex64;

use crate::config::RunConfig;
use crate::{CliError, Mode};

/// Couplings below this rank-one defect are treated as factored.
pub const FACTORED_DEFECT: f64 = 1e-3;

/// Tangle level defining a plateau in the run summaries.
pub const PLATEAU_LEVEL: f64 = 0.5;

pub fn say(report: &mut dyn Write, line: impl AsRef<str>) -> Result<(), CliError> {
    writeln!(report, "{}", line.as_ref()).map_err(|e| CliError::Config(format!("cannot write report: {e}")))
}

fn write_file(dir: &Path, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let path = dir.join(name);
    let fail = |e: std::io::Error| CliError::Config(format!("cannot write {}: {e}", path.display()));
    let mut out = BufWriter::new(File::create(&path).map_err(fail)?);
    body(&mut out).map_err(fail)?;
    out.flush().map_err(fail)
}

/// Peak of the self-spectrum at `a1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resonance {
    pub peak_frequency_hz: f64,
    pub peak_value: f64,
    pub fwhm_hz: f64,
    pub quality_factor: f64,
}

impl Resonance {
    const CSV_HEADER: &'static str = "peak_frequency_hz,peak_im_g_phiphi,fwhm_hz,quality_factor";
}

/// Finds the resonance of a coarse spectrum. The peak position and height
/// come from a geometric rescan around the coarse maximum; the width is
/// measured on the coarse spectrum, whose floor is the meaningful baseline.
pub fn resonance_of(
    config: &RunConfig,
    stack: &LayerStack,
    coarse: &GreenSpectrum,
) -> Result<Resonance, CliError> {
    let rough = find_resonance(coarse)?;
    let r = coarse.field_position_um;
    let (fine, _) = refine_resonance(stack, r, r, coarse, rough.bandwidth_fwhm_hz, config.truncation())?;
    Ok(Resonance {
        peak_frequency_hz: fine.peak_frequency_hz,
        peak_value: fine.peak_value,
        fwhm_hz: rough.bandwidth_fwhm_hz,
        quality_factor: fine.peak_frequency_hz / rough.bandwidth_fwhm_hz,
    })
}

fn self_spectrum(config: &RunConfig, stack: &LayerStack) -> Result<GreenSpectrum, CliError> {
    let s = &config.spectrum;
    let a1 = config.atoms.a1_um;
    Ok(spectrum_scan(stack, a1, a1, s.f_min_thz * 1e12, s.f_max_thz * 1e12, s.samples, config.truncation())?)
}

/// Field frequency from the configuration, or else from the self-spectrum.
fn field_frequency(config: &RunConfig, stack: &LayerStack) -> Result<(f64, Option<Resonance>), CliError> {
    if let Some(f) = config.couplings.field_frequency_thz {
        return Ok((f * 1e12, None));
    }
    let res = resonance_of(config, stack, &self_spectrum(config, stack)?)?;
    Ok((res.peak_frequency_hz, Some(res)))
}

fn report_resonance(report: &mut dyn Write, res: &Resonance) -> Result<(), CliError> {
    say(
        report,
        format!(
            "resonance: f_f = {:.4} THz, FWHM = {:.4} THz, Q = {:.1}, peak Im G = {:.6e} per um",
            res.peak_frequency_hz * 1e-12,
            res.fwhm_hz * 1e-12,
            res.quality_factor,
            res.peak_value
        ),
    )
}

pub fn spectrum(config: &RunConfig, report: &mut dyn Write) -> Result<(), CliError> {
    let stack = config.layer_stack()?;
    let s = &config.spectrum;
    let (a1, a2) = (config.atoms.a1_um, config.atoms.a2_um);
    let dir = &config.output.dir;
    let mut self_spec = None;
    for (name, r, r_src) in [("a1_a1", a1, a1), ("a1_a2", a1, a2), ("a2_a2", a2, a2)] {
        let spec = spectrum_scan(&stack, r, r_src, s.f_min_thz * 1e12, s.f_max_thz * 1e12, s.samples, config.truncation())?;
        write_file(dir, &format!("spectrum_{name}.csv"), |w| spec.write_csv(w))?;
        if spec.unconverged > 0 {
            say(report, format!("spectrum {name}: {} samples above the series tail tolerance", spec.unconverged))?;
        }
        if self_spec.is_none() {
            self_spec = Some(spec);
        }
    }
    let self_spec = self_spec.expect("first spectrum computed");

    // Too few samples to locate an interior peak: keep the spectra, skip the
    // report unless a field frequency was configured explicitly.
    let f_f = if s.samples < 5 {
        say(report, format!("resonance not evaluated: {} samples are too few", s.samples))?;
        config.couplings.field_frequency_thz.map(|f| f * 1e12)
    } else {
        let res = resonance_of(config, &stack, &self_spec)?;
        report_resonance(report, &res)?;
        write_file(dir, "resonance.csv", |w| {
            writeln!(w, "{}", Resonance::CSV_HEADER)?;
            writeln!(w, "{:?},{:?},{:?},{:?}", res.peak_frequency_hz, res.peak_value, res.fwhm_hz, res.quality_factor)
        })?;
        Some(config.couplings.field_frequency_thz.map_or(res.peak_frequency_hz, |f| f * 1e12))
    };

    if let (true, Some(f_f)) = (config.output.radial_profile, f_f) {
        let profile = radial_profile(config, &stack, f_f)?;
        write_file(dir, "radial_profile.csv", |w| {
            writeln!(w, "r_um,im_g_phiphi")?;
            for (r, v) in &profile {
                writeln!(w, "{r:?},{v:?}")?;
            }
            Ok(())
        })?;
        say(report, format!("radial profile Im G(r, a2, f_f): {} points", profile.len()))?;
    }
    Ok(())
}

/// `Im G_φφ(r, a₂, f_f)` on a uniform radial grid.
pub fn radial_profile(config: &RunConfig, stack: &LayerStack, f_f_hz: f64) -> Result<Vec<(f64, f64)>, CliError> {
    let (lo, hi) = config.radial_range(stack.outer_radius());
    let n = config.spectrum.radial_samples;
    let radii = grid(lo, hi, n);
    let values = radial_scan(stack, &radii, config.atoms.a2_um, angular_frequency(f_f_hz), config.truncation())?;
    Ok(radii.into_iter().zip(values).collect())
}

/// Coupling matrix from the electromagnetic pipeline.
pub fn electromagnetic_couplings(
    config: &RunConfig,
    report: &mut dyn Write,
) -> Result<(CouplingReport, f64, Option<Resonance>), CliError> {
    let stack = config.layer_stack()?;
    let (p1, p2) = config.placements()?;
    let (f_f, res) = field_frequency(config, &stack)?;
    let omega = angular_frequency(f_f);
    let unit = coupling_matrix(&stack, p1, p2, omega, 1.0, config.truncation())?;
    let scale = match (config.couplings.scale, config.couplings.chi1_target_omega_at) {
        (Some(s), _) => s,
        (None, Some(target)) => {
            let g11 = unit.coupling.entry(0, 0);
            if g11 <= 0.0 {
                return Err(CliError::Config("chi1_target_omega_at needs a non-zero Im G at a1".into()));
            }
            target * target / g11
        }
        (None, None) => 1.0,
    };
    let c = unit.coupling;
    let scaled = CouplingReport {
        coupling: CouplingMatrix::new(scale * c.entry(0, 0), scale * c.entry(0, 1), scale * c.entry(1, 1))?,
        ..unit
    };
    if let Some(res) = &res {
        report_resonance(report, res)?;
    }
    Ok((scaled, f_f, res))
}

pub fn couplings(config: &RunConfig, report: &mut dyn Write) -> Result<(), CliError> {
    let (rep, f_f, _) = electromagnetic_couplings(config, report)?;
    let c = rep.coupling;
    write_file(&config.output.dir, "couplings.csv", |w| {
        writeln!(w, "i,j,im_g_phiphi,coupling,dominant_order")?;
        for i in 0..2 {
            for j in 0..2 {
                writeln!(w, "{},{},{:?},{:?},{}", i + 1, j + 1, rep.im_green[i][j], c.entry(i, j), rep.dominant_orders[i][j])?;
            }
        }
        Ok(())
    })?;
    say(report, format!("field frequency: {:.4} THz", f_f * 1e-12))?;
    say(report, format!("chi1 = {:.6}, chi2 = {:.6}, chi2/chi1 = {:.4}", c.chi1(), c.chi2(), c.chi2() / c.chi1()))?;
    say(
        report,
        format!(
            "G12 = {:.6}, rank-one defect = {:.3e}, reciprocity defect = {:.1e}",
            c.entry(0, 1),
            c.rank_one_defect(),
            rep.reciprocity_defect
        ),
    )?;
    let d = rep.dominant_orders;
    say(report, format!("dominant multipole orders: (1,1) n={}, (1,2) n={}, (2,2) n={}", d[0][0], d[0][1], d[1][1]))
}

/// Couplings for the dynamics: explicit matrix, explicit χ pair, or the
/// electromagnetic pipeline, in that order of precedence.
fn dynamics_coupling(config: &RunConfig, report: &mut dyn Write) -> Result<CouplingMatrix, CliError> {
    let d = &config.dynamics;
    if let Some([g11, g12, g22]) = d.coupling_matrix_omega_at {
        return CouplingMatrix::new(g11, g12, g22).map_err(|e| CliError::Config(e.to_string()));
    }
    if let Some((chi1, chi2)) = config.explicit_chis() {
        return CouplingMatrix::from_chis(chi1, chi2).map_err(|e| CliError::Config(e.to_string()));
    }
    let (rep, _, _) = electromagnetic_couplings(config, report)?;
    Ok(rep.coupling)
}

pub fn evolve(config: &RunConfig, mode: Mode, report: &mut dyn Write) -> Result<(), CliError> {
    let d = &config.dynamics;
    let times = uniform_time_grid(d.tau_max, d.time_samples).map_err(|e| CliError::Config(e.to_string()))?;
    let initial = config.initial();
    let dir = &config.output.dir;
    match mode {
        Mode::Factored | Mode::General => {
            let coupling = dynamics_coupling(config, report)?;
            let traj = if mode == Mode::Factored {
                if coupling.rank_one_defect() >= FACTORED_DEFECT {
                    return Err(CliError::Config(format!(
                        "factored mode needs rank-one couplings (defect {:.3e} >= {FACTORED_DEFECT:e}); \
                         use --mode general or give chi1_omega_at and chi2_omega_at",
                        coupling.rank_one_defect()
                    )));
                }
                solve_factored(coupling.chi1(), coupling.chi2(), d.detuning_omega_at, initial, &times)?
            } else {
                let params = DynamicsParams::new(coupling, d.detuning_omega_at, initial, times)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                solve_general(&params)?
            };
            let name = if mode == Mode::Factored { "trajectory_factored.csv" } else { "trajectory_general.csv" };
            write_file(dir, name, |w| traj.write_csv(w))?;
            summarize_lossless(report, &coupling, &traj)
        }
        Mode::Lindblad => {
            let coupling = dynamics_coupling(config, report)?;
            if coupling.rank_one_defect() >= FACTORED_DEFECT {
                log::warn!(
                    "the master equation couples the atoms through chi1 = sqrt(G11), chi2 = sqrt(G22); \
                     the off-diagonal G12 (rank-one defect {:.3e}) is not used",
                    coupling.rank_one_defect()
                );
            }
            let gamma1 = dissipation_rate(config, report)?;
            let spec = SystemSpec::from_detuning(d.detuning_omega_at, coupling.chi1(), coupling.chi2(), gamma1, d.photon_cutoff)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let [l1, l2] = initial.amplitudes();
            let zero = Complex64::new(0.0, 0.0);
            let rho0 = JointDensityMatrix::from_amplitudes(d.photon_cutoff, [Complex64::new(l1, 0.0), Complex64::new(l2, 0.0), zero])?;
            let options = EvolveOptions { dt: d.step_tau, keep_states: config.output.lindblad_states };
            let traj = evolve_density(spec, &rho0, &times, options)?;
            write_file(dir, "lindblad.csv", |w| traj.write_csv(w))?;
            if config.output.lindblad_states {
                write_file(dir, "lindblad_states.csv", |w| traj.write_states_csv(w))?;
            }
            let tangle = traj.tangle();
            say(report, format!("gamma1 = {gamma1:.6e} (units of omega_at)"))?;
            say(report, format!("max tangle = {:.6}", tangle.iter().copied().fold(0.0, f64::max)))?;
            say(report, format!("plateau fraction (tangle > {PLATEAU_LEVEL}) = {:.4}", plateau_fraction(&tangle, PLATEAU_LEVEL)))?;
            let min_eig = traj.min_eigenvalue.iter().copied().fold(f64::INFINITY, f64::min);
            say(
                report,
                format!("max trace drift = {:.3e}, min eigenvalue = {:.3e}", traj.max_trace_drift(), min_eig),
            )
        }
    }
}

fn summarize_lossless(report: &mut dyn Write, coupling: &CouplingMatrix, traj: &AmplitudeTrajectory) -> Result<(), CliError> {
    let series = traj.concurrence_series();
    say(report, format!("chi1 = {:.6}, chi2 = {:.6}, rank-one defect = {:.3e}", coupling.chi1(), coupling.chi2(), coupling.rank_one_defect()))?;
    say(report, format!("max tangle = {:.6}", series.tangle.iter().copied().fold(0.0, f64::max)))?;
    say(report, format!("plateau fraction (tangle > {PLATEAU_LEVEL}) = {:.4}", plateau_fraction(&series.tangle, PLATEAU_LEVEL)))?;
    say(report, format!("max norm error = {:.3e}", traj.max_norm_error()))
}

/// `γ₁` given directly, or half the resonance width in units of `ω_at`.
fn dissipation_rate(config: &RunConfig, report: &mut dyn Write) -> Result<f64, CliError> {
    let diss = &config.dissipation;
    if let Some(g) = diss.gamma1_omega_at {
        if diss.derive_from_bandwidth {
            say(report, "gamma1 given directly; derive_from_bandwidth ignored")?;
        }
        return Ok(g);
    }
    if !diss.derive_from_bandwidth {
        return Err(CliError::Config(
            "lindblad mode needs dissipation.gamma1_omega_at or dissipation.derive_from_bandwidth = true".into(),
        ));
    }
    let stack = config.layer_stack()?;
    let res = resonance_of(config, &stack, &self_spectrum(config, &stack)?)?;
    report_resonance(report, &res)?;
    Ok(gamma_from_bandwidth(res.fwhm_hz, res.peak_frequency_hz, config.dynamics.detuning_omega_at)?)
}

fn grid(min: f64, max: f64, samples: usize) -> Vec<f64> {
    if samples == 1 {
        return vec![min];
    }
    (0..samples)
        .map(|i| if i == samples - 1 { max } else { min + (max - min) * i as f64 / (samples - 1) as f64 })
        .collect()
}

pub fn surface(config: &RunConfig, report: &mut dyn Write) -> Result<(), CliError> {
    let s = &config.surface;
    let chi1 = grid(s.chi1_min_omega_at, s.chi1_max_omega_at, s.chi1_samples);
    let chi2 = grid(s.chi2_min_omega_at, s.chi2_max_omega_at, s.chi2_samples);
    let detuning = s.detuning_omega_at.unwrap_or(config.dynamics.detuning_omega_at);
    let initial = InitialExcitation::from_lambda(s.lambda0.unwrap_or(config.dynamics.lambda0))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let surf = concurrence_surface(&chi1, &chi2, detuning, initial, s.tau).map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&config.output.dir, "surface.csv", |w| surf.write_csv(w))?;
    if let Some((x1, x2, c)) = surf.maximum() {
        say(report, format!("maximum concurrence {c:.6} at chi1 = {x1:.6}, chi2 = {x2:.6}"))?;
    }
    Ok(())
}
