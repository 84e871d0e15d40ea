//! Ground-truth generation: unitary integration of the 1D time-dependent
//! Schrödinger equation (atomic units, ħ = m = 1) on a periodic grid.

mod spectral;
mod store;
mod tridiag;

pub use spectral::wavenumbers;
pub(crate) use store::write_f32_file;
pub use store::{
    read_trajectory, read_trajectory_manifest, write_trajectory, TrajectoryManifest,
    TRAJECTORY_FORMAT_VERSION,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Threshold at which a running simulation aborts rather than emit bad data.
pub const NORM_DRIFT_ABORT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimGrid {
    /// Box length L_x (a.u.).
    pub l_x: f64,
    /// Number of spatial points.
    pub n_x: usize,
    /// Internal integrator step (a.u.).
    pub dt_int: f64,
    /// Internal steps per saved snapshot.
    pub snapshot_stride: usize,
    /// Number of saved snapshots, including the initial state.
    pub n_t: usize,
}

impl Default for SimGrid {
    fn default() -> Self {
        Self {
            l_x: 100.0,
            n_x: 1024,
            dt_int: 0.0005,
            snapshot_stride: 200,
            n_t: 500,
        }
    }
}

impl SimGrid {
    pub fn dx(&self) -> f64 {
        self.l_x / self.n_x as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    /// Time between saved snapshots.
    pub fn snapshot_dt(&self) -> f64 {
        self.dt_int * self.snapshot_stride as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l_x.is_finite() && self.l_x > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "box length must be positive, got {}",
                self.l_x
            )));
        }
        if self.n_x < 4 {
            return Err(CoreError::InvalidParameter(format!(
                "need at least 4 grid points, got {}",
                self.n_x
            )));
        }
        if !(self.dt_int.is_finite() && self.dt_int > 0.0) || self.snapshot_stride == 0 {
            return Err(CoreError::InvalidParameter(
                "snapshot spacing dt_int * snapshot_stride must be positive".into(),
            ));
        }
        if self.n_t == 0 {
            return Err(CoreError::InvalidParameter("n_t must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modulation {
    #[default]
    Gaussian,
    Triangle,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPacketSpec {
    /// Center of mass X0 (a.u.).
    pub x0: f64,
    /// Spread S0 (a.u.).
    pub s0: f64,
    /// Energy E0 (a.u.); the carrier wavenumber is k0 = sqrt(2 E0).
    pub e0: f64,
    #[serde(default)]
    pub modulation: Modulation,
}

impl GaussianPacketSpec {
    pub fn new(x0: f64, s0: f64, e0: f64) -> Self {
        Self {
            x0,
            s0,
            e0,
            modulation: Modulation::Gaussian,
        }
    }

    pub fn k0(&self) -> f64 {
        (2.0 * self.e0).sqrt()
    }

    pub fn validate(&self, grid: &SimGrid) -> Result<()> {
        if !(self.s0.is_finite() && self.s0 > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "packet spread must be positive, got {}",
                self.s0
            )));
        }
        if !(self.e0.is_finite() && self.e0 >= 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "packet energy must be non-negative, got {}",
                self.e0
            )));
        }
        if !(self.x0.is_finite() && (0.0..grid.l_x).contains(&self.x0)) {
            return Err(CoreError::InvalidParameter(format!(
                "packet center {} outside [0, {})",
                self.x0, grid.l_x
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectBarrier {
    pub height: f64,
    pub width: f64,
    pub center: f64,
}

/// Static potential landscape. Barrier-like shapes default to the box center
/// when no explicit center is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    #[serde(rename = "none")]
    Free,
    Rectangular {
        height: f64,
        width: f64,
        #[serde(default)]
        center: Option<f64>,
    },
    MultiRectangular {
        barriers: Vec<RectBarrier>,
    },
    /// Stepped pyramid: n_steps levels of equal height rising toward the center.
    Pyramid {
        n_steps: usize,
        base: f64,
        height: f64,
        #[serde(default)]
        center: Option<f64>,
    },
    /// Half-ellipse bump: v = peak * sqrt(1 - ((x-c)/radius)^2) on |x-c| <= radius.
    HalfCircle {
        radius: f64,
        peak: f64,
        #[serde(default)]
        center: Option<f64>,
    },
    /// Full-domain parabola v = curvature * (x - vertex)^2 (a harmonic trap).
    Quadratic {
        curvature: f64,
        #[serde(default)]
        vertex: Option<f64>,
    },
    /// Rectangular well: v = -depth on the support.
    RectangularWell {
        depth: f64,
        width: f64,
        #[serde(default)]
        center: Option<f64>,
    },
    PiecewiseSamples {
        values: Vec<f64>,
    },
}

impl PotentialSpec {
    pub fn rectangular(height: f64, width: f64) -> Self {
        Self::Rectangular {
            height,
            width,
            center: None,
        }
    }

    /// True when the rendered array is identically zero.
    pub fn is_free(&self) -> bool {
        match self {
            Self::Free => true,
            Self::PiecewiseSamples { values } => values.iter().all(|&v| v == 0.0),
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMethod {
    Spectral,
    Tridiagonal,
}

/// A recorded simulation: snapshots are stored time-major, `psi[j*n_x + i]`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: SimGrid,
    pub packet: GaussianPacketSpec,
    pub potential: PotentialSpec,
    pub psi: Vec<Complex64>,
    pub v: Vec<f64>,
}

impl Trajectory {
    pub fn frame(&self, j: usize) -> &[Complex64] {
        let n = self.grid.n_x;
        &self.psi[j * n..(j + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Complex64]> {
        self.psi.chunks_exact(self.grid.n_x)
    }

    /// Largest deviation of any snapshot's squared norm from 1.
    pub fn max_norm_drift(&self) -> f64 {
        let dx = self.grid.dx();
        self.frames()
            .map(|f| (field_norm_sqr(f, dx) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Σ|ψ_i|² dx.
pub fn field_norm_sqr(psi: &[Complex64], dx: f64) -> f64 {
    psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * dx
}

/// Plain (non-periodic) first moment Σ x_i |ψ_i|² dx / Σ|ψ_i|² dx.
pub fn center_of_mass(psi: &[Complex64], grid: &SimGrid) -> f64 {
    let dx = grid.dx();
    let mut weighted = 0.0;
    let mut total = 0.0;
    for (i, c) in psi.iter().enumerate() {
        let w = c.norm_sqr();
        weighted += grid.x(i) * w;
        total += w;
    }
    weighted * dx / (total * dx)
}

pub fn init_packet(grid: &SimGrid, spec: &GaussianPacketSpec) -> Result<Vec<Complex64>> {
    grid.validate()?;
    spec.validate(grid)?;
    let k0 = spec.k0();
    let envelope = |d: f64| -> f64 {
        match spec.modulation {
            Modulation::Gaussian => (-d * d / (4.0 * spec.s0 * spec.s0)).exp(),
            Modulation::Triangle => (1.0 - d.abs() / (2.0 * spec.s0)).max(0.0),
            Modulation::Square => {
                if d.abs() < 2.0 * spec.s0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    };
    let mut psi: Vec<Complex64> = (0..grid.n_x)
        .map(|i| {
            let x = grid.x(i);
            envelope(x - spec.x0) * Complex64::from_polar(1.0, k0 * x)
        })
        .collect();
    let norm = field_norm_sqr(&psi, grid.dx()).sqrt();
    if norm < 1e-12 {
        return Err(CoreError::InvalidParameter(
            "packet envelope vanishes on the grid (spread too small?)".into(),
        ));
    }
    for c in &mut psi {
        *c /= norm;
    }
    Ok(psi)
}

fn center_or_default(center: Option<f64>, grid: &SimGrid) -> f64 {
    center.unwrap_or(grid.l_x / 2.0)
}

fn add_rect(v: &mut [f64], grid: &SimGrid, height: f64, width: f64, center: f64) {
    // Half-open support [c - w/2, c + w/2): W_b = 7 on the default grid
    // covers exactly 71 points.
    for (i, vi) in v.iter_mut().enumerate() {
        let d = grid.x(i) - center;
        if d >= -width / 2.0 && d < width / 2.0 {
            *vi += height;
        }
    }
}

pub fn render_potential(grid: &SimGrid, spec: &PotentialSpec) -> Result<Vec<f64>> {
    grid.validate()?;
    let n = grid.n_x;
    let mut v = vec![0.0; n];
    match spec {
        PotentialSpec::Free => {}
        PotentialSpec::Rectangular {
            height,
            width,
            center,
        } => {
            if *width <= 0.0 {
                return Err(CoreError::InvalidParameter(
                    "barrier width must be positive".into(),
                ));
            }
            add_rect(&mut v, grid, *height, *width, center_or_default(*center, grid));
        }
        PotentialSpec::MultiRectangular { barriers } => {
            if barriers.is_empty() {
                return Err(CoreError::EmptyInput("multi_rectangular barrier list".into()));
            }
            for b in barriers {
                if b.width <= 0.0 {
                    return Err(CoreError::InvalidParameter(
                        "barrier width must be positive".into(),
                    ));
                }
                add_rect(&mut v, grid, b.height, b.width, b.center);
            }
        }
        PotentialSpec::Pyramid {
            n_steps,
            base,
            height,
            center,
        } => {
            if *n_steps == 0 || *base <= 0.0 {
                return Err(CoreError::InvalidParameter(
                    "pyramid needs n_steps >= 1 and a positive base".into(),
                ));
            }
            let c = center_or_default(*center, grid);
            let steps = *n_steps as f64;
            for (i, vi) in v.iter_mut().enumerate() {
                let frac = 1.0 - 2.0 * (grid.x(i) - c).abs() / base;
                if frac > 0.0 {
                    let level = (steps * frac).ceil().min(steps);
                    *vi = height * level / steps;
                }
            }
        }
        PotentialSpec::HalfCircle {
            radius,
            peak,
            center,
        } => {
            if *radius <= 0.0 {
                return Err(CoreError::InvalidParameter(
                    "half-circle radius must be positive".into(),
                ));
            }
            let c = center_or_default(*center, grid);
            for (i, vi) in v.iter_mut().enumerate() {
                let u = (grid.x(i) - c) / radius;
                if u.abs() <= 1.0 {
                    *vi = peak * (1.0 - u * u).sqrt();
                }
            }
        }
        PotentialSpec::Quadratic { curvature, vertex } => {
            let c = center_or_default(*vertex, grid);
            for (i, vi) in v.iter_mut().enumerate() {
                let d = grid.x(i) - c;
                *vi = curvature * d * d;
            }
        }
        PotentialSpec::RectangularWell {
            depth,
            width,
            center,
        } => {
            if *depth <= 0.0 || *width <= 0.0 {
                return Err(CoreError::InvalidParameter(
                    "well needs positive depth and width".into(),
                ));
            }
            add_rect(&mut v, grid, -depth, *width, center_or_default(*center, grid));
        }
        PotentialSpec::PiecewiseSamples { values } => {
            if values.len() != n {
                return Err(CoreError::ShapeMismatch(format!(
                    "piecewise_samples has {} values, grid has {}",
                    values.len(),
                    n
                )));
            }
            v.copy_from_slice(values);
        }
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(CoreError::NonFinite(format!(
            "rendered potential contains {bad}"
        )));
    }
    Ok(v)
}

enum Stepper {
    Spectral(spectral::SpectralStepper),
    Tridiagonal(tridiag::TridiagonalStepper),
}

impl Stepper {
    fn new(method: PropagationMethod, grid: &SimGrid, v: &[f64], dt: f64) -> Result<Self> {
        if method == PropagationMethod::Spectral && !grid.n_x.is_power_of_two() {
            return Err(CoreError::InvalidParameter(format!(
                "spectral propagation needs a power-of-two grid, got {}",
                grid.n_x
            )));
        }
        Ok(match method {
            PropagationMethod::Spectral => {
                Self::Spectral(spectral::SpectralStepper::new(grid, v, dt))
            }
            PropagationMethod::Tridiagonal => {
                Self::Tridiagonal(tridiag::TridiagonalStepper::new(grid, v, dt))
            }
        })
    }

    fn step(&mut self, psi: &mut [Complex64]) {
        match self {
            Self::Spectral(s) => s.step(psi),
            Self::Tridiagonal(s) => s.step(psi),
        }
    }
}

fn check_finite(psi: &[Complex64], v: &[f64]) -> Result<()> {
    if psi.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(CoreError::NonFinite("wave function".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::NonFinite("potential".into()));
    }
    Ok(())
}

pub fn propagate(
    psi: &[Complex64],
    v: &[f64],
    grid: &SimGrid,
    n_internal_steps: usize,
    method: PropagationMethod,
) -> Result<Vec<Complex64>> {
    propagate_with_dt(psi, v, grid, n_internal_steps, method, grid.dt_int)
}

/// `propagate` with an explicit (possibly negative) internal step, for
/// reversibility checks.
pub fn propagate_with_dt(
    psi: &[Complex64],
    v: &[f64],
    grid: &SimGrid,
    n_internal_steps: usize,
    method: PropagationMethod,
    dt: f64,
) -> Result<Vec<Complex64>> {
    grid.validate()?;
    if psi.len() != grid.n_x || v.len() != grid.n_x {
        return Err(CoreError::ShapeMismatch(format!(
            "psi has {} points, v has {}, grid has {}",
            psi.len(),
            v.len(),
            grid.n_x
        )));
    }
    if n_internal_steps == 0 {
        return Err(CoreError::InvalidParameter(
            "n_internal_steps must be at least 1".into(),
        ));
    }
    if !dt.is_finite() || dt == 0.0 {
        return Err(CoreError::InvalidParameter(format!("bad dt {dt}")));
    }
    check_finite(psi, v)?;
    let mut out = psi.to_vec();
    let mut stepper = Stepper::new(method, grid, v, dt)?;
    for _ in 0..n_internal_steps {
        stepper.step(&mut out);
    }
    Ok(out)
}

pub fn run_simulation(
    packet: &GaussianPacketSpec,
    potential: &PotentialSpec,
    grid: &SimGrid,
) -> Result<Trajectory> {
    run_simulation_with(packet, potential, grid, PropagationMethod::Spectral)
}

pub fn run_simulation_with(
    packet: &GaussianPacketSpec,
    potential: &PotentialSpec,
    grid: &SimGrid,
    method: PropagationMethod,
) -> Result<Trajectory> {
    let v = render_potential(grid, potential)?;
    let mut psi = init_packet(grid, packet)?;
    let dx = grid.dx();
    let mut all = Vec::with_capacity(grid.n_t * grid.n_x);
    all.extend_from_slice(&psi);
    let mut stepper = Stepper::new(method, grid, &v, grid.dt_int)?;
    for j in 1..grid.n_t {
        for _ in 0..grid.snapshot_stride {
            stepper.step(&mut psi);
        }
        if psi.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(CoreError::NonFinite(format!(
                "propagation produced NaN at snapshot {j}"
            )));
        }
        let drift = (field_norm_sqr(&psi, dx) - 1.0).abs();
        if drift > NORM_DRIFT_ABORT {
            return Err(CoreError::NormDrift {
                step: j * grid.snapshot_stride,
                drift,
                limit: NORM_DRIFT_ABORT,
            });
        }
        all.extend_from_slice(&psi);
    }
    Ok(Trajectory {
        grid: *grid,
        packet: *packet,
        potential: potential.clone(),
        psi: all,
        v,
    })
}
