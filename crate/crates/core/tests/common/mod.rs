//! Shared independent oracles for integration tests. Everything here is
//! computed from first principles (closed forms, naive DFT quadratures,
//! direct scalar loops) so the library under test never supplies its own
//! reference values.

#![allow(dead_code)]

pub mod gradcheck;

use num_complex::Complex64;
use qdyn_core::sim::{GaussianPacketSpec, SimGrid};

/// Closed-form freely dispersing Gaussian packet, periodized over box images
/// and normalized on the grid:
/// ψ(x,t) = (1+iτ)^{-1/2} · exp(−(x−x0−k0·t)² / (4·S0²·(1+iτ))) · exp(i(k0·x − E0·t)),
/// τ = t/(2·S0²).
pub fn free_gaussian_frame(grid: &SimGrid, packet: &GaussianPacketSpec, t: f64) -> Vec<Complex64> {
    let s0 = packet.s0;
    let k0 = packet.k0();
    let tau = t / (2.0 * s0 * s0);
    let one_plus = Complex64::new(1.0, tau);
    let amp = one_plus.sqrt().inv();
    let center = packet.x0 + k0 * t;
    let spread = s0 * (1.0 + tau * tau).sqrt();
    let l = grid.l_x;
    let n_lo = ((center - 8.0 * spread) / l).floor() as i64 - 1;
    let n_hi = ((center + 8.0 * spread) / l).ceil() as i64 + 1;

    let mut psi: Vec<Complex64> = (0..grid.n_x)
        .map(|i| {
            let x = grid.x(i);
            let mut acc = Complex64::new(0.0, 0.0);
            for n in n_lo..=n_hi {
                let xi = x + n as f64 * l;
                let d = xi - center;
                let exponent = -Complex64::new(d * d, 0.0) / (4.0 * s0 * s0 * one_plus)
                    + Complex64::new(0.0, k0 * xi - packet.e0 * t);
                acc += amp * exponent.exp();
            }
            acc
        })
        .collect();
    let norm = (psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * grid.dx()).sqrt();
    for c in &mut psi {
        *c /= norm;
    }
    psi
}

/// Naive O(N²) DFT, deliberately independent of any FFT library.
pub fn naive_dft(psi: &[Complex64]) -> Vec<Complex64> {
    let n = psi.len();
    let w = -2.0 * std::f64::consts::PI / n as f64;
    (0..n)
        .map(|m| {
            psi.iter()
                .enumerate()
                .map(|(i, c)| c * Complex64::from_polar(1.0, w * (m * i % n) as f64))
                .sum()
        })
        .collect()
}

fn bin_wavenumber(m: usize, n: usize, l: f64) -> f64 {
    let signed = if m <= n / 2 {
        m as f64
    } else {
        m as f64 - n as f64
    };
    2.0 * std::f64::consts::PI * signed / l
}

/// ⟨p⟩ via the momentum-space distribution of a naive DFT.
pub fn expected_momentum(psi: &[Complex64], grid: &SimGrid) -> f64 {
    let tilde = naive_dft(psi);
    let n = psi.len();
    let mut weighted = 0.0;
    let mut total = 0.0;
    for (m, c) in tilde.iter().enumerate() {
        let w = c.norm_sqr();
        weighted += bin_wavenumber(m, n, grid.l_x) * w;
        total += w;
    }
    weighted / total
}

/// ⟨H⟩ = ⟨k²/2⟩ + ⟨V⟩ via the naive DFT plus a direct potential quadrature.
pub fn expected_energy(psi: &[Complex64], v: &[f64], grid: &SimGrid) -> f64 {
    let tilde = naive_dft(psi);
    let n = psi.len();
    let mut kinetic = 0.0;
    let mut total = 0.0;
    for (m, c) in tilde.iter().enumerate() {
        let k = bin_wavenumber(m, n, grid.l_x);
        let w = c.norm_sqr();
        kinetic += k * k / 2.0 * w;
        total += w;
    }
    let dx = grid.dx();
    let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * dx;
    let pot: f64 = psi
        .iter()
        .zip(v)
        .map(|(c, &vi)| vi * c.norm_sqr())
        .sum::<f64>()
        * dx
        / norm;
    kinetic / total + pot
}

/// Independent scalar implementation of the normalized correlation
/// Re(Σ conj(a)·b) / (‖a‖·‖b‖).
pub fn correlation(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut overlap = Complex64::new(0.0, 0.0);
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        overlap += x.conj() * y;
        na += x.norm_sqr();
        nb += y.norm_sqr();
    }
    overlap.re / (na.sqrt() * nb.sqrt())
}

/// Independent scalar mean absolute error (1/N)·Σ|a_i − b_i|.
pub fn mean_abs_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}
