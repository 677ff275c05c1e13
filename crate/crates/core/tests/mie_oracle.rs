//! Independent check of the layered Green function against the classic
//! Mie-coefficient expression for the decay rate of a dipole parallel to the
//! surface of a homogeneous sphere, observed from outside:
//!
//! Γ∥/Γ₀ = 1 − ¾ Re Σₙ (2n+1) [bₙ hₙ(y)² + aₙ (ξₙ′(y)/y)²],
//!
//! with Bohren–Huffman coefficients `aₙ`, `bₙ`, `y = k r`, `ξₙ = z hₙ(z)`.
//! The ratio equals `Im G_φφ(r, r) / (k/6π)`.

use microsphere_qed::layered_green::*;
use microsphere_qed::wave_basis::{bessel_j_array, hankel1_array};
use num_complex::Complex64;

fn mie_parallel_rate(m: Complex64, radius: f64, k: f64, r: f64, nmax: usize) -> f64 {
    let x = Complex64::new(k * radius, 0.0);
    let mx = m * x;
    let y = Complex64::new(k * r, 0.0);
    let psi = |v: &[Complex64], z: Complex64, n: usize| z * v[n];
    let dpsi = |v: &[Complex64], z: Complex64, n: usize| z * v[n - 1] - n as f64 * v[n];
    let jx = bessel_j_array(nmax + 1, x);
    let jmx = bessel_j_array(nmax + 1, mx);
    let hx = hankel1_array(nmax + 1, x).unwrap();
    let hy = hankel1_array(nmax + 1, y).unwrap();
    let mut sum = Complex64::new(0.0, 0.0);
    for n in 1..=nmax {
        let an = (m * psi(&jmx, mx, n) * dpsi(&jx, x, n) - psi(&jx, x, n) * dpsi(&jmx, mx, n))
            / (m * psi(&jmx, mx, n) * dpsi(&hx, x, n) - psi(&hx, x, n) * dpsi(&jmx, mx, n));
        let bn = (psi(&jmx, mx, n) * dpsi(&jx, x, n) - m * psi(&jx, x, n) * dpsi(&jmx, mx, n))
            / (psi(&jmx, mx, n) * dpsi(&hx, x, n) - m * psi(&hx, x, n) * dpsi(&jmx, mx, n));
        let h = hy[n];
        let dxi = dpsi(&hy, y, n) / y;
        sum += (2 * n + 1) as f64 * (bn * h * h + an * dxi * dxi);
    }
    1.0 - 0.75 * sum.re
}

#[test]
fn parallel_dipole_outside_sphere_matches_mie() {
    let vacuum = Complex64::new(1.0, 0.0);
    let cases = [
        (Complex64::new(1.5, 0.01), 1.0, 200e12, 1.3),
        (Complex64::new(1.5, 2e-4), 1.0, 241.7e12, 1.05),
        (Complex64::new(3.58, 1e-3), 0.5, 150e12, 0.9),
        (Complex64::new(2.0, 0.0), 0.8, 300e12, 2.5),
    ];
    for (m, radius, f, r) in cases {
        // A transparent vacuum shell keeps the observation point inside a
        // finite layer.
        let stack = LayerStack::build(
            &[ShellSpec::outer_radius(radius, m), ShellSpec::outer_radius(r + 1.0, vacuum)],
            vacuum,
        )
        .unwrap();
        let k = vacuum_wavenumber(f);
        let nmax = 50;
        let g = green_phiphi(&stack, r, r, angular_frequency(f), Truncation::orders(nmax)).unwrap();
        let ours = g.value.im / (k / (6.0 * std::f64::consts::PI));
        let mie = mie_parallel_rate(m, radius, k, r, nmax);
        assert!((ours - mie).abs() < 1e-10 * mie.abs(), "m={m} a={radius} f={f} r={r}: {ours} vs {mie}");
    }
}
