//! Synthetic phantom subjects standing in for preprocessed, segmented MRI.
//!
//! The intracranial cavity is an ellipsoid split into `s` structures by a
//! power diagram whose centres sit on a regular grid. With equal weights this
//! is an axis-aligned block partition; lowering a structure's weight shrinks
//! it and hands its voxels to its neighbours. Disease acts on a class-specific
//! set of structures in two ways: atrophy (weight decrease, a volume signal)
//! and darkening (an intensity signal).

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dc_space::DiagnosticClass;
use crate::error::{data_err, Error, Result};
use crate::seed;
use crate::volume::{read_volume, voxel_count, write_labels, write_scalar, Dims, LabelVolume, Volume3D};

/// Acquisition domain of a subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    In,
    Out,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::In => "in",
            Domain::Out => "out",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub structures: usize,
    /// Structures (1-based) affected in AD subjects.
    pub ad_structures: Vec<u16>,
    /// Structures (1-based) affected in FTD subjects.
    pub ftd_structures: Vec<u16>,
    /// Power-weight decrease of an affected structure at full severity.
    pub atrophy: f64,
    /// Relative intensity loss of an affected structure at full severity.
    pub darkening: f64,
    /// Per-subject disease severity is drawn uniformly from this range.
    pub severity: [f64; 2],
    /// Per-subject standard deviation of structure weights.
    pub weight_jitter: f64,
    /// Per-subject standard deviation of structure intensities.
    pub intensity_jitter: f64,
    pub noise_sigma: f64,
    pub intensity_shift: f64,
    pub domain: Domain,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [64, 72, 64],
            structures: 12,
            ad_structures: vec![3, 10],
            ftd_structures: vec![4, 9],
            atrophy: 0.3,
            darkening: 0.45,
            severity: [0.7, 1.0],
            weight_jitter: 0.03,
            intensity_jitter: 0.02,
            noise_sigma: 0.05,
            intensity_shift: 0.0,
            domain: Domain::In,
        }
    }
}

/// Structure baseline intensities spread over [0.6, 0.85], so that an
/// affected structure at the default magnitudes is darker than any healthy one.
pub fn baseline_intensity(structure: u16) -> f64 {
    let golden = 0.618_033_988_749_895;
    0.6 + 0.25 * ((structure as f64 * golden).fract())
}

impl PhantomSpec {
    /// The out-of-domain variant: different noise and a global intensity shift.
    pub fn shifted(&self, noise_sigma: f64, intensity_shift: f64) -> Self {
        Self {
            noise_sigma,
            intensity_shift,
            domain: Domain::Out,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.dims.iter().any(|&d| d < 4 || d % 2 != 0) {
            return bad(format!("phantom dims {:?} must be even and at least 4", self.dims));
        }
        if self.structures == 0 || self.structures > u16::MAX as usize {
            return bad(format!("structure count {} out of range", self.structures));
        }
        for (name, set) in [("AD", &self.ad_structures), ("FTD", &self.ftd_structures)] {
            if let Some(&j) = set.iter().find(|&&j| j == 0 || j as usize > self.structures) {
                return bad(format!("{name} structure {j} out of range"));
            }
        }
        if self.ad_structures.iter().any(|j| self.ftd_structures.contains(j)) {
            return bad("AD and FTD structure sets overlap".into());
        }
        for (name, v) in [("atrophy", self.atrophy), ("darkening", self.darkening)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} magnitude {v} must lie in (0, 1)"));
            }
        }
        let [lo, hi] = self.severity;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return bad(format!("severity range {:?} must satisfy 0 < lo <= hi <= 1", self.severity));
        }
        for (name, v) in [
            ("weight jitter", self.weight_jitter),
            ("intensity jitter", self.intensity_jitter),
            ("noise sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} {v} must be finite and nonnegative"));
            }
        }
        if !self.intensity_shift.is_finite() {
            return bad("intensity shift must be finite".into());
        }
        let template = self.partition(&vec![0.0; self.structures]);
        let counts = template.label_counts();
        if let Some(j) = (1..=self.structures).find(|&j| counts[j] == 0) {
            return bad(format!("structure {j} does not intersect the ICC at dims {:?}", self.dims));
        }
        Ok(())
    }

    /// Centre grid shape: the factorization of `s` closest to the ICC aspect.
    fn grid_shape(&self) -> [usize; 3] {
        let s = self.structures;
        let mut best = [s, 1, 1];
        let mut best_cost = f64::INFINITY;
        for a in 1..=s {
            for b in 1..=s / a {
                if !s.is_multiple_of(a * b) {
                    continue;
                }
                let g = [a, b, s / (a * b)];
                let sizes: Vec<f64> = (0..3).map(|i| self.dims[i] as f64 / g[i] as f64).collect();
                let max = sizes.iter().cloned().fold(f64::MIN, f64::max);
                let min = sizes.iter().cloned().fold(f64::MAX, f64::min);
                let cost = max / min;
                if cost < best_cost - 1e-12 {
                    best = g;
                    best_cost = cost;
                }
            }
        }
        best
    }

    /// Voxel labels for the given per-structure power weights. Coordinates
    /// are measured in grid-cell units so equal weights give equal blocks.
    fn partition(&self, weights: &[f64]) -> LabelVolume {
        let g = self.grid_shape();
        let d = self.dims;
        let centre = |i: usize| (d[i] as f64 - 1.0) / 2.0;
        let semi = |i: usize| 0.45 * d[i] as f64;
        // ICC bounding box in voxel coordinates; cells tile it.
        let lo = |i: usize| centre(i) - semi(i);
        let cell = |i: usize| 2.0 * semi(i) / g[i] as f64;
        let centres: Vec<[f64; 3]> = (0..self.structures)
            .map(|j| {
                let idx = [j % g[0], (j / g[0]) % g[1], j / (g[0] * g[1])];
                [idx[0] as f64 + 0.5, idx[1] as f64 + 0.5, idx[2] as f64 + 0.5]
            })
            .collect();
        let mut labels = vec![0u16; voxel_count(d)];
        let mut i = 0;
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    let p = [x as f64, y as f64, z as f64];
                    let r2: f64 = (0..3).map(|a| ((p[a] - centre(a)) / semi(a)).powi(2)).sum();
                    if r2 <= 1.0 {
                        let q: Vec<f64> = (0..3).map(|a| (p[a] - lo(a)) / cell(a)).collect();
                        let mut best = (f64::INFINITY, 0usize);
                        for (j, c) in centres.iter().enumerate() {
                            let dist: f64 = (0..3).map(|a| (q[a] - c[a]).powi(2)).sum();
                            let power = dist - weights[j];
                            if power < best.0 {
                                best = (power, j);
                            }
                        }
                        labels[i] = best.1 as u16 + 1;
                    }
                    i += 1;
                }
            }
        }
        LabelVolume::new(d, labels, self.structures as u16).expect("labels within range")
    }

    fn affected(&self, class: DiagnosticClass) -> &[u16] {
        match class {
            DiagnosticClass::CN => &[],
            DiagnosticClass::AD => &self.ad_structures,
            DiagnosticClass::FTD => &self.ftd_structures,
        }
    }
}

/// One subject: intensity volume (f32-representable) and segmentation.
pub fn generate_subject(class: DiagnosticClass, spec: &PhantomSpec, subject_seed: u64) -> Result<(Volume3D, LabelVolume)> {
    spec.validate()?;
    let mut rng = seed::rng(subject_seed, seed::stream::SUBJECT);
    let s = spec.structures;
    let affected = spec.affected(class);
    let severity = if affected.is_empty() {
        0.0
    } else {
        rng.gen_range(spec.severity[0]..=spec.severity[1])
    };
    let jitter = |sd: f64| Normal::new(0.0, sd).expect("finite nonnegative sd");
    let (wj, ij) = (jitter(spec.weight_jitter), jitter(spec.intensity_jitter));
    let mut weights = Vec::with_capacity(s);
    let mut levels = Vec::with_capacity(s + 1);
    levels.push(0.0);
    for j in 1..=s as u16 {
        let hit = affected.contains(&j);
        let w = wj.sample(&mut rng) - if hit { spec.atrophy * severity } else { 0.0 };
        let dark = if hit { 1.0 - spec.darkening * severity } else { 1.0 };
        weights.push(w);
        levels.push(baseline_intensity(j) * dark + ij.sample(&mut rng));
    }
    let labels = spec.partition(&weights);
    let counts = labels.label_counts();
    if let Some(j) = (1..=s).find(|&j| counts[j] == 0) {
        return Err(data_err!("phantom structure {j} vanished for seed {subject_seed}"));
    }
    let noise = jitter(spec.noise_sigma);
    let data = labels
        .labels()
        .iter()
        .map(|&l| {
            let v = levels[l as usize] + spec.intensity_shift + noise.sample(&mut rng);
            v as f32 as f64
        })
        .collect();
    Ok((Volume3D::new(spec.dims, data)?, labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub class: DiagnosticClass,
    pub domain: Domain,
    pub volume: Volume3D,
    pub labels: LabelVolume,
}

fn subject_plan(n_per_class: usize, spec: &PhantomSpec, seed: u64) -> Vec<(String, DiagnosticClass, u64)> {
    let base = seed::derive(seed, seed::stream::SUBJECT);
    DiagnosticClass::ALL
        .iter()
        .flat_map(|&c| (0..n_per_class).map(move |i| (c, i)))
        .enumerate()
        .map(|(n, (c, i))| {
            let id = format!("{}-{}-{i:03}", spec.domain.tag(), c.name());
            (id, c, seed::derive(base, n as u64))
        })
        .collect()
}

/// Generates `n_per_class` subjects of every class in memory, CN first.
pub fn generate_subjects(n_per_class: usize, spec: &PhantomSpec, seed: u64) -> Result<Vec<Subject>> {
    if n_per_class == 0 {
        return Err(Error::Parameter("n_per_class must be at least 1".into()));
    }
    spec.validate()?;
    subject_plan(n_per_class, spec, seed)
        .into_par_iter()
        .map(|(id, class, s)| {
            let (volume, labels) = generate_subject(class, spec, s)?;
            Ok(Subject {
                id,
                class,
                domain: spec.domain,
                volume,
                labels,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: String,
    pub class: DiagnosticClass,
    pub volume_path: String,
    pub labels_path: String,
    pub domain_tag: Domain,
}

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Writes subjects and `manifest.csv` into `dir`; paths in the manifest are
/// relative to it. Returns the manifest path.
pub fn generate_dataset(n_per_class: usize, spec: &PhantomSpec, seed: u64, dir: &Path) -> Result<PathBuf> {
    let subjects = generate_subjects(n_per_class, spec, seed)?;
    write_dataset(&subjects, dir)
}

pub fn write_dataset(subjects: &[Subject], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows: Vec<ManifestRow> = subjects
        .iter()
        .map(|s| ManifestRow {
            subject_id: s.id.clone(),
            class: s.class,
            volume_path: format!("{}_t1.dgv", s.id),
            labels_path: format!("{}_labels.dgv", s.id),
            domain_tag: s.domain,
        })
        .collect();
    for (s, r) in subjects.iter().zip(&rows) {
        write_scalar(&s.volume, dir.join(&r.volume_path))?;
        write_labels(&s.labels, dir.join(&r.labels_path))?;
    }
    let path = dir.join(MANIFEST_NAME);
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    for r in &rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Loads every subject listed in a manifest, resolving relative paths
/// against the manifest's directory.
pub fn load_dataset(manifest: &Path) -> Result<Vec<Subject>> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|r| {
            let volume = read_volume(dir.join(&r.volume_path))?.into_scalar()?;
            let labels = read_volume(dir.join(&r.labels_path))?.into_labels()?;
            if volume.dims() != labels.dims() {
                return Err(data_err!("subject {}: volume and label dims differ", r.subject_id));
            }
            Ok(Subject {
                id: r.subject_id,
                class: r.class,
                domain: r.domain_tag,
                volume,
                labels,
            })
        })
        .collect()
}
