//! The grader ensemble: one member per grid location, trained along a
//! transfer chain, plus whole-volume grading and the `DGW1` weights file.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::GraderWeights;
use super::tensor::Tensor;
use super::train::{train_grader, GraderConfig, PatchSample, TrainingRecord};
use crate::dc_space::{voxel_target, DcPoint, DiagnosticClass};
use crate::error::{geometry, Error, Result};
use crate::patch_grid::{extract_patches, reconstruct, GridSpec};
use crate::seed::{self, stream};
use crate::volume::{
    downscale_by_2, downscale_channels_by_2, normalize_intensity, upscale_to, DcMap, Dims, LabelVolume, Volume3D,
};

/// Provenance of one ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub index: usize,
    pub grid_coord: [usize; 3],
    /// Member whose weights initialized this one; `None` for a fresh start.
    pub init_from: Option<usize>,
    pub seed: u64,
    pub training: TrainingRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraderEnsemble {
    pub grid: GridSpec,
    pub config: GraderConfig,
    pub seed: u64,
    pub members: Vec<GraderWeights>,
    pub manifest: Vec<MemberRecord>,
}

/// A subject at grading resolution.
#[derive(Debug, Clone)]
pub struct GradingSample {
    pub class: DiagnosticClass,
    /// Downscaled, min-max normalized intensity.
    pub intensity: Volume3D,
    /// Downscaled voxel targets (class point inside the ICC, origin outside).
    pub target: DcMap,
}

/// Downscale by 2, then rescale to [0, 1].
pub fn prepare_intensity(v: &Volume3D) -> Result<Volume3D> {
    normalize_intensity(&downscale_by_2(v)?)
}

/// Full-resolution voxel targets, mean-pooled to grading resolution.
pub fn prepare_target(labels: &LabelVolume, class: DiagnosticClass) -> Result<DcMap> {
    let points: Vec<DcPoint> = labels.labels().iter().map(|&l| voxel_target(class, l > 0)).collect();
    downscale_channels_by_2(&DcMap::from_points(labels.dims(), &points)?)
}

impl GradingSample {
    pub fn new(volume: &Volume3D, labels: &LabelVolume, class: DiagnosticClass) -> Result<Self> {
        if volume.dims() != labels.dims() {
            return Err(geometry!(
                "volume dims {:?} do not match label dims {:?}",
                volume.dims(),
                labels.dims()
            ));
        }
        Ok(Self {
            class,
            intensity: prepare_intensity(volume)?,
            target: prepare_target(labels, class)?,
        })
    }
}

/// The already-trained member closest to `index` in grid Manhattan distance,
/// ties going to the lowest raster index.
pub fn transfer_source(grid: &GridSpec, index: usize) -> Option<usize> {
    let c = grid.coord(index);
    (0..index).min_by_key(|&j| {
        let d = grid.coord(j);
        let dist: usize = (0..3).map(|a| c[a].abs_diff(d[a])).sum();
        (dist, j)
    })
}

fn member_samples(samples: &[GradingSample], grid: &GridSpec, index: usize) -> Result<Vec<PatchSample>> {
    let pd = grid.patch_dims;
    samples
        .iter()
        .map(|s| {
            let input = grid.extract_channel(s.intensity.data(), index);
            let mut target = grid.extract_channel(s.target.channel(0), index);
            target.extend(grid.extract_channel(s.target.channel(1), index));
            Ok(PatchSample {
                input: Tensor::from_data(1, pd, input),
                target: Tensor::from_data(2, pd, target),
                class: s.class,
            })
        })
        .collect()
}

/// Trains members in raster order. Member 0 starts fresh; every later member
/// starts from its [`transfer_source`].
pub fn train_ensemble(samples: &[GradingSample], grid: &GridSpec, cfg: &GraderConfig, seed: u64) -> Result<GraderEnsemble> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("no subjects to train the grader ensemble".into()));
    }
    if cfg.patch_dims != grid.patch_dims {
        return Err(geometry!(
            "grader patch dims {:?} differ from grid patch dims {:?}",
            cfg.patch_dims,
            grid.patch_dims
        ));
    }
    if let Some(s) = samples.iter().find(|s| s.intensity.dims() != grid.volume_dims) {
        return Err(geometry!(
            "subject dims {:?} do not match grid dims {:?}",
            s.intensity.dims(),
            grid.volume_dims
        ));
    }
    let mut members: Vec<GraderWeights> = Vec::with_capacity(grid.num_patches());
    let mut manifest = Vec::with_capacity(grid.num_patches());
    for index in 0..grid.num_patches() {
        let data = member_samples(samples, grid, index)?;
        let init_from = transfer_source(grid, index);
        let member_seed = seed::derive(seed, stream::ENSEMBLE_MEMBER + ((index as u64) << 8));
        let trained = train_grader(&data, init_from.map(|j| &members[j]), cfg, member_seed)?;
        let mut weights = trained.weights;
        weights.grid_coord = grid.coord(index);
        manifest.push(MemberRecord {
            index,
            grid_coord: grid.coord(index),
            init_from,
            seed: member_seed,
            training: trained.record,
        });
        members.push(weights);
    }
    Ok(GraderEnsemble {
        grid: grid.clone(),
        config: cfg.clone(),
        seed,
        members,
        manifest,
    })
}

fn clamp_to_disk(t: &mut Tensor) {
    let n = t.voxels();
    for v in 0..n {
        let r = t.data[v].hypot(t.data[n + v]);
        if r > 1.0 {
            t.data[v] /= r;
            t.data[n + v] /= r;
        }
    }
}

impl GraderEnsemble {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.members.len() != self.grid.num_patches() {
            return Err(Error::Format(format!(
                "ensemble has {} members for a grid of {} patches",
                self.members.len(),
                self.grid.num_patches()
            )));
        }
        for (i, m) in self.members.iter().enumerate() {
            m.check()?;
            if m.grid_coord != self.grid.coord(i) {
                return Err(Error::Format(format!(
                    "member {i} serves {:?}, expected {:?}",
                    m.grid_coord,
                    self.grid.coord(i)
                )));
            }
            if m.arch.patch_dims != self.grid.patch_dims {
                return Err(Error::Format(format!("member {i} patch dims differ from the grid")));
            }
        }
        Ok(())
    }

    /// Grades a prepared (downscaled, normalized) volume and upsamples the
    /// reconstructed map to `original_dims`.
    pub fn grade_volume(&self, v: &Volume3D, original_dims: Dims) -> Result<DcMap> {
        let patches = extract_patches(v, &self.grid)?;
        let outputs: Vec<DcMap> = patches
            .par_iter()
            .zip(self.members.par_iter())
            .map(|(patch, member)| {
                let mut out = member.forward(patch)?;
                if self.config.clamp_output {
                    clamp_to_disk(&mut out);
                }
                DcMap::new(out.dims, out.data)
            })
            .collect::<Result<_>>()?;
        let map = reconstruct(&outputs, &self.grid)?;
        upscale_to(&map, original_dims)
    }

    /// Grades a raw full-resolution volume.
    pub fn grade_raw(&self, v: &Volume3D) -> Result<DcMap> {
        self.grade_volume(&prepare_intensity(v)?, v.dims())
    }
}

pub fn grade_volume(v: &Volume3D, e: &GraderEnsemble, original_dims: Dims) -> Result<DcMap> {
    e.grade_volume(v, original_dims)
}

// ---------------------------------------------------------------------------
// DGW1 weights file
//
// "DGW1" | u32 version | u32 header length | UTF-8 JSON header | f32 LE params
// ---------------------------------------------------------------------------

const WEIGHTS_MAGIC: &[u8; 4] = b"DGW1";
const WEIGHTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WeightsHeader {
    grid: GridSpec,
    config: GraderConfig,
    seed: u64,
    layers: Vec<super::network::LayerDescriptor>,
    member_params: usize,
    manifest: Vec<MemberRecord>,
}

impl GraderEnsemble {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = WeightsHeader {
            grid: self.grid.clone(),
            config: self.config.clone(),
            seed: self.seed,
            layers: self.members[0].layers.clone(),
            member_params: self.members[0].params.len(),
            manifest: self.manifest.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(format!("header: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for m in &self.members {
            for &p in &m.params {
                out.extend_from_slice(&(p as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let field = |range: std::ops::Range<usize>, name: &str| -> Result<&[u8]> {
            bytes
                .get(range)
                .ok_or_else(|| Error::Format(format!("{name}: truncated file")))
        };
        if field(0..4, "magic")? != WEIGHTS_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(field(4..8, "version")?.try_into().unwrap());
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!("version: unsupported {version}")));
        }
        let len = u32::from_le_bytes(field(8..12, "header length")?.try_into().unwrap()) as usize;
        let header: WeightsHeader = serde_json::from_slice(field(12..12 + len, "header")?)
            .map_err(|e| Error::Format(format!("header: {e}")))?;
        let payload = &bytes[12 + len..];
        let members = header.grid.num_patches();
        let expected = members * header.member_params * 4;
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "payload length: expected {expected} bytes, found {}",
                payload.len()
            )));
        }
        let arch = header.config.arch();
        let ensemble = GraderEnsemble {
            members: payload
                .chunks_exact(header.member_params * 4)
                .enumerate()
                .map(|(i, chunk)| GraderWeights {
                    arch,
                    layers: header.layers.clone(),
                    params: chunk
                        .chunks_exact(4)
                        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                        .collect(),
                    grid_coord: header.grid.coord(i),
                })
                .collect(),
            grid: header.grid,
            config: header.config,
            seed: header.seed,
            manifest: header.manifest,
        };
        ensemble.validate()?;
        Ok(ensemble)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
