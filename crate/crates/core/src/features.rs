//! Structure-level features: mean disease coordinate per structure for the
//! grade-based classifier and normalized volumes for the atrophy-based one.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dc_space::DiagnosticClass;
use crate::error::{data_err, geometry, Error, Result};
use crate::volume::{DcMap, LabelVolume};

/// Per-subject features. `dc[0]` holds the x components and `dc[1]` the y
/// components, one column per structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFeatures {
    pub dc: [Vec<f64>; 2],
    pub volumes: Vec<f64>,
}

impl StructureFeatures {
    pub fn compute(map: &DcMap, labels: &LabelVolume) -> Result<Self> {
        Ok(Self {
            dc: structure_dc(map, labels)?,
            volumes: structure_volumes(labels)?,
        })
    }

    pub fn num_structures(&self) -> usize {
        self.volumes.len()
    }

    /// The 2s input vector of the grade classifier: x components first.
    pub fn dc_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.num_structures());
        v.extend_from_slice(&self.dc[0]);
        v.extend_from_slice(&self.dc[1]);
        v
    }
}

/// Mean DC point over the voxels of each structure 1..=s.
pub fn structure_dc(map: &DcMap, labels: &LabelVolume) -> Result<[Vec<f64>; 2]> {
    if map.dims() != labels.dims() {
        return Err(geometry!(
            "DC map dims {:?} differ from label dims {:?}",
            map.dims(),
            labels.dims()
        ));
    }
    let s = labels.num_structures();
    let mut sums = [vec![0.0; s + 1], vec![0.0; s + 1]];
    let mut counts = vec![0usize; s + 1];
    let (cx, cy) = (map.channel(0), map.channel(1));
    for (i, &l) in labels.labels().iter().enumerate() {
        let l = l as usize;
        sums[0][l] += cx[i];
        sums[1][l] += cy[i];
        counts[l] += 1;
    }
    if let Some(missing) = (1..=s).find(|&j| counts[j] == 0) {
        return Err(data_err!("structure label {missing} has no voxels"));
    }
    let mean = |c: usize| -> Vec<f64> { (1..=s).map(|j| sums[c][j] / counts[j] as f64).collect() };
    Ok([mean(0), mean(1)])
}

/// Structure volumes in percent of the ICC, the ICC being every labeled voxel.
pub fn structure_volumes(labels: &LabelVolume) -> Result<Vec<f64>> {
    let counts = labels.label_counts();
    let icc: usize = counts[1..].iter().sum();
    if icc == 0 {
        return Err(data_err!("empty intracranial cavity"));
    }
    Ok(counts[1..].iter().map(|&c| 100.0 * c as f64 / icc as f64).collect())
}

/// One row of the feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub subject_id: String,
    pub class: DiagnosticClass,
    pub features: StructureFeatures,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn header(s: usize) -> Vec<String> {
    let mut h = vec!["subject_id".to_string(), "class".to_string()];
    h.extend((1..=s).map(|j| format!("dc_x_{j}")));
    h.extend((1..=s).map(|j| format!("dc_y_{j}")));
    h.extend((1..=s).map(|j| format!("vol_{j}")));
    h
}

pub fn write_features_csv(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let s = rows.first().map_or(0, |r| r.features.num_structures());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header(s)).map_err(|e| csv_error(path, e))?;
    for r in rows {
        if r.features.num_structures() != s {
            return Err(geometry!("subject {} has a different structure count", r.subject_id));
        }
        let mut rec = vec![r.subject_id.clone(), r.class.name().to_string()];
        let f = &r.features;
        rec.extend(f.dc[0].iter().chain(&f.dc[1]).chain(&f.volumes).map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let cols = r.headers().map_err(|e| csv_error(path, e))?.len();
    if cols < 2 || (cols - 2) % 3 != 0 {
        return Err(Error::Format(format!("{}: bad feature header", path.display())));
    }
    let s = (cols - 2) / 3;
    let expected = header(s);
    if r.headers().map_err(|e| csv_error(path, e))?.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Format(format!("{}: bad feature header", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let class: DiagnosticClass = rec[1].parse()?;
        let vals = rec
            .iter()
            .skip(2)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Format(format!("{}: bad number {v:?}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureRow {
            subject_id: rec[0].to_string(),
            class,
            features: StructureFeatures {
                dc: [vals[..s].to_vec(), vals[s..2 * s].to_vec()],
                volumes: vals[2 * s..].to_vec(),
            },
        });
    }
    Ok(rows)
}
