use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{GaussianPacketSpec, PotentialSpec, SimGrid, Trajectory};
use crate::error::{CoreError, Result};

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub format_version: u32,
    pub grid: SimGrid,
    pub packet: GaussianPacketSpec,
    pub potential: PotentialSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub(crate) fn write_f32_file(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_f32_file(path: &Path, expected_len: usize) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() != expected_len * 4 {
        return Err(CoreError::Format(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expected_len * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Writes manifest.json, psi_re.f32, psi_im.f32 (time-major [N_t][N_x]) and
/// potential.f32. Values are rounded to 32-bit; a read/write cycle after that
/// is bit-exact.
pub fn write_trajectory(dir: &Path, traj: &Trajectory, seed: Option<u64>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = TrajectoryManifest {
        format_version: TRAJECTORY_FORMAT_VERSION,
        grid: traj.grid,
        packet: traj.packet,
        potential: traj.potential.clone(),
        seed,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    write_f32_file(&dir.join("psi_re.f32"), traj.psi.iter().map(|c| c.re as f32))?;
    write_f32_file(&dir.join("psi_im.f32"), traj.psi.iter().map(|c| c.im as f32))?;
    write_f32_file(&dir.join("potential.f32"), traj.v.iter().map(|&v| v as f32))?;
    Ok(())
}

pub fn read_trajectory_manifest(dir: &Path) -> Result<TrajectoryManifest> {
    let bytes = std::fs::read(dir.join("manifest.json"))?;
    let manifest: TrajectoryManifest = serde_json::from_slice(&bytes)?;
    if manifest.format_version != TRAJECTORY_FORMAT_VERSION {
        return Err(CoreError::Format(format!(
            "unsupported trajectory format version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn read_trajectory(dir: &Path) -> Result<Trajectory> {
    let manifest = read_trajectory_manifest(dir)?;
    let (n_t, n_x) = (manifest.grid.n_t, manifest.grid.n_x);
    let re = read_f32_file(&dir.join("psi_re.f32"), n_t * n_x)?;
    let im = read_f32_file(&dir.join("psi_im.f32"), n_t * n_x)?;
    let v = read_f32_file(&dir.join("potential.f32"), n_x)?;
    let psi = re
        .iter()
        .zip(&im)
        .map(|(&r, &i)| Complex64::new(r as f64, i as f64))
        .collect();
    Ok(Trajectory {
        grid: manifest.grid,
        packet: manifest.packet,
        potential: manifest.potential,
        psi,
        v: v.iter().map(|&x| x as f64).collect(),
    })
}
