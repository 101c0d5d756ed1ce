//! DGC1 classifier bundle:
//! `"DGC1" | u32 version | u32 header length | JSON header | f32 LE payload`.
//! The payload holds the MLP parameters, then per SVM machine its support
//! vectors (row-major) followed by their coefficients.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnsembleModel, Kernel, Machine, MlpModel, Platt, SvmModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DGC1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MachineHeader {
    n_support: usize,
    bias: f64,
    platt: Platt,
}

#[derive(Serialize, Deserialize)]
struct Header {
    classes: Vec<String>,
    lambda: f64,
    mlp_input_dim: usize,
    mlp_hidden: usize,
    n_classes: usize,
    svm_kernel: Kernel,
    svm_c: f64,
    svm_validation_bacc: f64,
    svm_mean: Vec<f64>,
    svm_scale: Vec<f64>,
    machines: Vec<MachineHeader>,
    payload_len: usize,
}

fn format_err(m: impl Into<String>) -> Error {
    Error::Format(m.into())
}

pub fn bundle_to_bytes(e: &EnsembleModel) -> Result<Vec<u8>> {
    let mut payload: Vec<f64> = e.mlp.params.clone();
    for m in &e.svm.machines {
        payload.extend(m.support.iter().flatten());
        payload.extend(&m.coef);
    }
    let header = Header {
        classes: e.classes.clone(),
        lambda: e.lambda,
        mlp_input_dim: e.mlp.input_dim,
        mlp_hidden: e.mlp.hidden,
        n_classes: e.mlp.n_classes,
        svm_kernel: e.svm.kernel,
        svm_c: e.svm.c,
        svm_validation_bacc: e.svm.validation_bacc,
        svm_mean: e.svm.mean.clone(),
        svm_scale: e.svm.scale.clone(),
        machines: e
            .svm
            .machines
            .iter()
            .map(|m| MachineHeader {
                n_support: m.support.len(),
                bias: m.bias,
                platt: m.platt,
            })
            .collect(),
        payload_len: payload.len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| format_err(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn bundle_from_bytes(bytes: &[u8]) -> Result<EnsembleModel> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(format_err("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != VERSION {
        return Err(format_err(format!("unsupported bundle version {}", word(4))));
    }
    let hlen = word(8) as usize;
    let json = bytes.get(12..12 + hlen).ok_or_else(|| format_err("header: truncated"))?;
    let h: Header = serde_json::from_slice(json).map_err(|e| format_err(format!("header: {e}")))?;
    let body = &bytes[12 + hlen..];
    if body.len() != 4 * h.payload_len {
        return Err(format_err(format!(
            "payload length: expected {} bytes, found {}",
            4 * h.payload_len,
            body.len()
        )));
    }
    let mut vals = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = vals.by_ref().take(n).collect();
        if v.len() != n {
            return Err(format_err("payload shorter than the header declares"));
        }
        Ok(v)
    };
    let n_params = MlpModel::param_count(h.mlp_input_dim, h.mlp_hidden, h.n_classes);
    let mlp = MlpModel {
        input_dim: h.mlp_input_dim,
        hidden: h.mlp_hidden,
        n_classes: h.n_classes,
        params: take(n_params)?,
    };
    let dim = h.svm_mean.len();
    let mut machines = Vec::with_capacity(h.machines.len());
    for m in &h.machines {
        let flat = take(m.n_support * dim)?;
        let support = flat.chunks(dim.max(1)).map(<[f64]>::to_vec).collect();
        machines.push(Machine {
            support,
            coef: take(m.n_support)?,
            bias: m.bias,
            platt: m.platt,
        });
    }
    if n_params + h.machines.iter().map(|m| m.n_support * (dim + 1)).sum::<usize>() != h.payload_len {
        return Err(format_err("payload length disagrees with the model shapes"));
    }
    Ok(EnsembleModel {
        classes: h.classes,
        lambda: h.lambda,
        mlp,
        svm: SvmModel {
            n_classes: h.n_classes,
            kernel: h.svm_kernel,
            c: h.svm_c,
            mean: h.svm_mean,
            scale: h.svm_scale,
            machines,
            validation_bacc: h.svm_validation_bacc,
        },
    })
}

pub fn write_bundle(e: &EnsembleModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bundle_to_bytes(e)?).map_err(|err| Error::io(path, err))
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<EnsembleModel> {
    let path = path.as_ref();
    bundle_from_bytes(&std::fs::read(path).map_err(|err| Error::io(path, err))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{mlp_train, svm_train, MlpConfig, SvmConfig};

    fn model() -> EnsembleModel {
        let xs: Vec<Vec<f64>> = (0..24).map(|i| vec![(i % 3) as f64 + 0.1 * (i / 3) as f64, (i % 5) as f64]).collect();
        let ys: Vec<usize> = (0..24).map(|i| i % 3).collect();
        let cfg = MlpConfig { max_epochs: 5, ..MlpConfig::default() };
        let (mlp, _) = mlp_train(&xs[..18], &ys[..18], &xs[18..], &ys[18..], 3, &cfg, 1).unwrap();
        let svm = svm_train(&xs[..18], &ys[..18], &xs[18..], &ys[18..], 3, &SvmConfig { c_steps: 10, ..SvmConfig::default() }).unwrap();
        EnsembleModel {
            classes: vec!["CN".into(), "AD".into(), "FTD".into()],
            lambda: 0.37,
            mlp,
            svm,
        }
    }

    #[test]
    fn bundle_round_trips_exactly() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.dgc");
        write_bundle(&m, &p).unwrap();
        let back = read_bundle(&p).unwrap();
        assert_eq!(back, m);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"DGC1");
    }

    #[test]
    fn corrupt_bundles_are_format_errors() {
        let bytes = bundle_to_bytes(&model()).unwrap();
        assert!(matches!(bundle_from_bytes(&bytes[..bytes.len() - 4]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(bundle_from_bytes(&bad), Err(Error::Format(_))));
    }
}
