use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, SampleOrigin, WindowConfig};
use crate::error::{CoreError, Result};
use crate::sim::TrajectoryManifest;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: WindowConfig,
    pub n_samples: usize,
    pub input_len: usize,
    pub target_len: usize,
    pub provenance: Vec<TrajectoryManifest>,
}

/// Writes manifest.json, samples.f32 (sample-major: input then target, little
/// endian) and origins.bin (three u32 per sample: trajectory, center, step).
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        config: ds.config,
        n_samples: ds.len(),
        input_len: ds.config.input_len(),
        target_len: ds.config.target_len(),
        provenance: ds.provenance.clone(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;

    let mut w = BufWriter::new(File::create(dir.join("samples.f32"))?);
    for k in 0..ds.len() {
        for v in ds.input(k) {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in ds.target(k) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join("origins.bin"))?);
    for o in &ds.origins {
        w.write_all(&o.trajectory.to_le_bytes())?;
        w.write_all(&o.center.to_le_bytes())?;
        w.write_all(&o.step.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_manifest(dir: &Path) -> Result<DatasetManifest> {
    let bytes = std::fs::read(dir.join("manifest.json"))?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(CoreError::Format(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }
    if manifest.input_len != manifest.config.input_len()
        || manifest.target_len != manifest.config.target_len()
    {
        return Err(CoreError::Format(
            "manifest sample dims disagree with window config".into(),
        ));
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_dataset_manifest(dir)?;
    let n = manifest.n_samples;
    let (ilen, tlen) = (manifest.input_len, manifest.target_len);

    let mut bytes = Vec::new();
    BufReader::new(File::open(dir.join("samples.f32"))?).read_to_end(&mut bytes)?;
    if bytes.len() != n * (ilen + tlen) * 4 {
        return Err(CoreError::Format(format!(
            "samples.f32: expected {} bytes, found {}",
            n * (ilen + tlen) * 4,
            bytes.len()
        )));
    }
    let mut inputs = Vec::with_capacity(n * ilen);
    let mut targets = Vec::with_capacity(n * tlen);
    for sample in bytes.chunks_exact((ilen + tlen) * 4) {
        for c in sample[..ilen * 4].chunks_exact(4) {
            inputs.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        }
        for c in sample[ilen * 4..].chunks_exact(4) {
            targets.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        }
    }

    let mut bytes = Vec::new();
    BufReader::new(File::open(dir.join("origins.bin"))?).read_to_end(&mut bytes)?;
    if bytes.len() != n * 12 {
        return Err(CoreError::Format(format!(
            "origins.bin: expected {} bytes, found {}",
            n * 12,
            bytes.len()
        )));
    }
    let origins = bytes
        .chunks_exact(12)
        .map(|c| SampleOrigin {
            trajectory: u32::from_le_bytes([c[0], c[1], c[2], c[3]]),
            center: u32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            step: u32::from_le_bytes([c[8], c[9], c[10], c[11]]),
        })
        .collect();

    Ok(Dataset {
        config: manifest.config,
        inputs,
        targets,
        origins,
        provenance: manifest.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::build_curriculum;
    use crate::sim::{run_simulation, GaussianPacketSpec, PotentialSpec, SimGrid};

    #[test]
    fn dataset_round_trip_preserves_everything() {
        let grid = SimGrid {
            l_x: 100.0,
            n_x: 128,
            dt_int: 0.0005,
            snapshot_stride: 10,
            n_t: 10,
        };
        let traj = run_simulation(
            &GaussianPacketSpec::new(40.0, 2.0, 5.0),
            &PotentialSpec::rectangular(4.0, 7.0),
            &grid,
        )
        .unwrap();
        let cfg = WindowConfig {
            spatial_keep_prob: 0.5,
            seed: 17,
            ..WindowConfig::default()
        };
        let ds = build_curriculum(std::slice::from_ref(&traj), &cfg).unwrap();
        assert!(!ds.is_empty());

        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("ds");
        write_dataset(&dir, &ds).unwrap();
        let loaded = read_dataset(&dir).unwrap();
        assert_eq!(ds, loaded);

        // Second write of the loaded copy is byte-identical.
        let dir2 = tmp.path().join("ds2");
        write_dataset(&dir2, &loaded).unwrap();
        for name in ["manifest.json", "samples.f32", "origins.bin"] {
            assert_eq!(
                std::fs::read(dir.join(name)).unwrap(),
                std::fs::read(dir2.join(name)).unwrap(),
                "mismatch in {name}"
            );
        }
    }

    #[test]
    fn corrupt_sample_blob_is_rejected() {
        let grid = SimGrid {
            l_x: 100.0,
            n_x: 64,
            dt_int: 0.0005,
            snapshot_stride: 5,
            n_t: 8,
        };
        let traj = run_simulation(
            &GaussianPacketSpec::new(40.0, 2.0, 5.0),
            &PotentialSpec::Free,
            &grid,
        )
        .unwrap();
        let cfg = WindowConfig {
            c: 2,
            seed: 2,
            ..WindowConfig::default()
        };
        let ds = build_curriculum(std::slice::from_ref(&traj), &cfg).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("ds");
        write_dataset(&dir, &ds).unwrap();
        let blob = std::fs::read(dir.join("samples.f32")).unwrap();
        std::fs::write(dir.join("samples.f32"), &blob[..blob.len() - 8]).unwrap();
        assert!(read_dataset(&dir).is_err());
    }
}
