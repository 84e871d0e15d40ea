use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::SimGrid;

/// Angular wavenumbers in FFT bin order: k_j = 2π·j/L for j ≤ N/2,
/// shifted down by 2π·N/L for the upper half.
pub fn wavenumbers(n_x: usize, l_x: f64) -> Vec<f64> {
    let base = 2.0 * std::f64::consts::PI / l_x;
    (0..n_x)
        .map(|j| {
            let j_signed = if j <= n_x / 2 {
                j as isize
            } else {
                j as isize - n_x as isize
            };
            base * j_signed as f64
        })
        .collect()
}

/// One Strang step exp(−iV dt/2)·exp(−iT dt)·exp(−iV dt/2) with the kinetic
/// factor applied exactly in wavenumber space.
pub struct SpectralStepper {
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    half_v_phase: Vec<Complex64>,
    /// Kinetic phases with the 1/N inverse-transform normalization folded in.
    kinetic_phase: Vec<Complex64>,
}

impl SpectralStepper {
    pub fn new(grid: &SimGrid, v: &[f64], dt: f64) -> Self {
        let n = grid.n_x;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let scratch_len = fft
            .get_inplace_scratch_len()
            .max(ifft.get_inplace_scratch_len());

        let half_v_phase = v
            .iter()
            .map(|&vi| Complex64::from_polar(1.0, -vi * dt / 2.0))
            .collect();
        let inv_n = 1.0 / n as f64;
        let kinetic_phase = wavenumbers(n, grid.l_x)
            .iter()
            .map(|&k| Complex64::from_polar(inv_n, -k * k / 2.0 * dt))
            .collect();

        Self {
            fft,
            ifft,
            scratch: vec![Complex64::default(); scratch_len],
            half_v_phase,
            kinetic_phase,
        }
    }

    pub fn step(&mut self, psi: &mut [Complex64]) {
        debug_assert_eq!(psi.len(), self.half_v_phase.len());
        for (p, ph) in psi.iter_mut().zip(&self.half_v_phase) {
            *p *= ph;
        }
        self.fft.process_with_scratch(psi, &mut self.scratch);
        for (p, ph) in psi.iter_mut().zip(&self.kinetic_phase) {
            *p *= ph;
        }
        self.ifft.process_with_scratch(psi, &mut self.scratch);
        for (p, ph) in psi.iter_mut().zip(&self.half_v_phase) {
            *p *= ph;
        }
    }
}
