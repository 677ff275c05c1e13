use std::path::Path;
use std::process::Command;

use microsphere_qed::layered_green::GreenSpectrum;
use microsphere_qed::lindblad_dynamics::DensityTrajectory;
use microsphere_qed::lossless_dynamics::{AmplitudeTrajectory, ConcurrenceSurface};

const FAST_DYNAMICS: &str = r#"
[dynamics]
detuning_omega_at = 0.5
chi1_omega_at = 0.254
chi2_omega_at = 0.151
tau_max = 40.0
time_samples = 401
[dissipation]
gamma1_omega_at = 2e-2
[surface]
chi1_samples = 21
chi2_samples = 21
"#;

fn mqed(dir: &Path, config: &str, args: &[&str]) -> (i32, String, String) {
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mqed"))
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn open(dir: &Path, name: &str) -> std::io::BufReader<std::fs::File> {
    std::io::BufReader::new(std::fs::File::open(dir.join("out").join(name)).unwrap())
}

#[test]
fn spectrum_reports_resonance_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, stdout, stderr) = mqed(tmp.path(), "[spectrum]\nsamples = 81\nradial_samples = 20\n", &["spectrum"]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("resonance: f_f ="), "{stdout}");
    for name in ["a1_a1", "a1_a2", "a2_a2"] {
        let s = GreenSpectrum::read_csv(open(tmp.path(), &format!("spectrum_{name}.csv")), 0.0, 0.0).unwrap();
        assert_eq!(s.frequencies_hz.len(), 81);
        assert!(s.frequencies_hz.windows(2).all(|w| w[1] > w[0]));
        if name != "a1_a2" {
            // Self-spectra are local densities of states.
            assert!(s.values.iter().all(|&v| v > 0.0));
        }
    }
    let profile = std::fs::read_to_string(tmp.path().join("out/radial_profile.csv")).unwrap();
    assert_eq!(profile.lines().count(), 21);
    assert!(tmp.path().join("out/resonance.csv").exists());
}

#[test]
fn two_sample_spectrum_writes_two_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, stdout, stderr) = mqed(tmp.path(), "[spectrum]\nsamples = 2\n", &["spectrum"]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("resonance not evaluated"));
    for name in ["a1_a1", "a1_a2", "a2_a2"] {
        let text = std::fs::read_to_string(tmp.path().join(format!("out/spectrum_{name}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 3);
    }
}

#[test]
fn vacuum_stack_has_no_peak() {
    let tmp = tempfile::tempdir().unwrap();
    let config = r#"
        [stack]
        shells = [
            { index = [1.0, 0.0], outer_radius_um = 1.0 },
            { index = [1.0, 0.0], thickness_um = 0.5 },
        ]
        [atoms]
        a1_um = 0.5
        a2_um = 1.2
        [spectrum]
        samples = 41
    "#;
    let (code, _, stderr) = mqed(tmp.path(), config, &["spectrum"]);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("no interior peak"), "{stderr}");
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    for bad in ["[atoms]\na1_um = 5.0\n", "[spectrum]\nf_min_hz = 1.0\n", "not toml at all ["] {
        let (code, _, stderr) = mqed(tmp.path(), bad, &["couplings"]);
        assert_eq!(code, 1, "{bad}: {stderr}");
    }
    let (code, _, _) = mqed(tmp.path(), "[dynamics]\nchi1_omega_at = 0.3\nchi2_omega_at = 0.2\n", &["evolve", "--mode", "lindblad"]);
    assert_eq!(code, 1, "lindblad without a dissipation setting");
    let missing = Command::new(env!("CARGO_BIN_EXE_mqed"))
        .args(["--config", "/nonexistent/run.toml", "surface"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn factored_mode_rejects_full_rank_couplings() {
    let tmp = tempfile::tempdir().unwrap();
    let config = "[dynamics]\ncoupling_matrix_omega_at = [0.06, -0.03, 0.02]\ntau_max = 10.0\ntime_samples = 11\n";
    let (code, _, stderr) = mqed(tmp.path(), config, &["evolve", "--mode", "factored"]);
    assert_eq!(code, 1);
    assert!(stderr.contains("rank-one"), "{stderr}");
    let (code, _, stderr) = mqed(tmp.path(), config, &["evolve", "--mode", "general"]);
    assert_eq!(code, 0, "{stderr}");
}

#[test]
fn evolve_modes_round_trip_and_agree() {
    let tmp = tempfile::tempdir().unwrap();
    for mode in ["factored", "general", "lindblad"] {
        let (code, stdout, stderr) = mqed(tmp.path(), FAST_DYNAMICS, &["evolve", "--mode", mode]);
        assert_eq!(code, 0, "{mode}: {stderr}");
        assert!(stdout.contains("max tangle") && stdout.contains("plateau fraction"), "{stdout}");
    }
    let factored = AmplitudeTrajectory::read_csv(open(tmp.path(), "trajectory_factored.csv")).unwrap();
    let general = AmplitudeTrajectory::read_csv(open(tmp.path(), "trajectory_general.csv")).unwrap();
    assert_eq!(factored.len(), 401);
    assert!(factored.max_norm_error() < 1e-9);
    assert!(factored.sup_distance(&general) < 1e-8);
    let rows = DensityTrajectory::read_csv_rows(open(tmp.path(), "lindblad.csv")).unwrap();
    assert_eq!(rows.len(), 401);
    for row in &rows {
        let [_, c, tangle, photons, trace, min_eig] = *row;
        assert!((tangle - c * c).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&photons));
        assert!((trace - 1.0).abs() < 1e-8);
        assert!(min_eig > -1e-8);
    }
}

#[test]
fn zero_coupling_keeps_concurrence_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let config = "[dynamics]\ncoupling_matrix_omega_at = [0.0, 0.0, 0.0]\ntau_max = 50.0\ntime_samples = 51\n";
    let (code, _, stderr) = mqed(tmp.path(), config, &["evolve", "--mode", "general"]);
    assert_eq!(code, 0, "{stderr}");
    let traj = AmplitudeTrajectory::read_csv(open(tmp.path(), "trajectory_general.csv")).unwrap();
    let c = traj.concurrence_series().concurrence;
    assert!(c.iter().all(|&v| v == c[0]));
}

#[test]
fn surface_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, stdout, stderr) = mqed(tmp.path(), FAST_DYNAMICS, &["surface"]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("maximum concurrence"));
    let surf = ConcurrenceSurface::read_csv(open(tmp.path(), "surface.csv")).unwrap();
    assert_eq!((surf.chi1.len(), surf.chi2.len()), (21, 21));
    assert!(surf.values.iter().flatten().all(|&c| (0.0..=1.0).contains(&c)));

    let single = "[surface]\nchi1_min_omega_at = 0.3\nchi1_max_omega_at = 0.3\nchi1_samples = 1\n\
                  chi2_min_omega_at = 0.2\nchi2_max_omega_at = 0.2\nchi2_samples = 1\ntau = 10.0\n";
    let (code, _, stderr) = mqed(tmp.path(), single, &["surface"]);
    assert_eq!(code, 0, "{stderr}");
    let text = std::fs::read_to_string(tmp.path().join("out/surface.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn identical_configs_give_identical_bytes() {
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let config = format!("{FAST_DYNAMICS}\n[spectrum]\nsamples = 41\nradial_samples = 10\n");
            for args in [&["spectrum"][..], &["couplings"], &["surface"], &["evolve", "--mode", "general"], &["evolve", "--mode", "lindblad", "--seedless"]] {
                let (code, _, stderr) = mqed(tmp.path(), &config, args);
                assert_eq!(code, 0, "{args:?}: {stderr}");
            }
            let mut files: Vec<_> = std::fs::read_dir(tmp.path().join("out"))
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (e.file_name(), std::fs::read(e.path()).unwrap())
                })
                .collect();
            files.sort();
            files
        })
        .collect();
    assert_eq!(runs[0].len(), 9);
    assert_eq!(runs[0], runs[1]);
}
