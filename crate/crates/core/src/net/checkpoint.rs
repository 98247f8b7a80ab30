//! Single-file checkpoints: safetensors archive with `config` and `version` metadata.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use super::model::{NetConfig, TransferNet, MODEL_VERSION};
use crate::error::{Error, Result};

fn tensor_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => (
            Dtype::F64,
            flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        _ => (
            Dtype::F32,
            flat.to_dtype(DType::F32)?
                .to_vec1::<f32>()?
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect(),
        ),
    })
}

fn view_tensor(view: &TensorView<'_>, device: &Device) -> Result<Tensor> {
    let data = view.data();
    let shape = view.shape().to_vec();
    match view.dtype() {
        Dtype::F32 => {
            let v: Vec<f32> = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Tensor::from_vec(v, shape, device)?)
        }
        Dtype::F64 => {
            let v: Vec<f64> = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Tensor::from_vec(v, shape, device)?)
        }
        other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

/// Serializes every parameter plus the config into one byte buffer.
pub fn to_bytes(net: &TransferNet) -> Result<Vec<u8>> {
    let encoded: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = net
        .named_params()
        .into_iter()
        .map(|(name, var)| {
            let (dtype, bytes) = tensor_bytes(var.as_tensor())?;
            Ok((name, dtype, var.dims().to_vec(), bytes))
        })
        .collect::<Result<_>>()?;
    let views = encoded
        .iter()
        .map(|(name, dtype, shape, bytes)| {
            TensorView::new(*dtype, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let metadata = HashMap::from([
        ("config".to_string(), serde_json::to_string(net.config())?),
        ("version".to_string(), MODEL_VERSION.to_string()),
    ]);
    safetensors::serialize(views, Some(metadata)).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Reads the config stored in a checkpoint without building the model.
pub fn read_config(bytes: &[u8]) -> Result<NetConfig> {
    let (_, meta) =
        SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    config_from(meta.metadata())
}

fn config_from(meta: &Option<HashMap<String, String>>) -> Result<NetConfig> {
    let meta = meta
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("missing metadata".into()))?;
    match meta.get("version") {
        Some(v) if v == MODEL_VERSION => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "unsupported version {other:?}, expected {MODEL_VERSION}"
            )))
        }
    }
    let cfg = meta
        .get("config")
        .ok_or_else(|| Error::Checkpoint("missing config".into()))?;
    Ok(serde_json::from_str(cfg)?)
}

/// Rebuilds a model; parameter names and shapes must match the stored config exactly.
pub fn from_bytes(bytes: &[u8], device: &Device) -> Result<TransferNet> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let cfg = read_config(bytes)?;
    let tensors = st
        .tensors()
        .into_iter()
        .map(|(name, view)| Ok((name, view_tensor(&view, device)?)))
        .collect::<Result<Vec<_>>>()?;
    let dtype = tensors.first().map(|(_, t)| t.dtype()).unwrap_or(DType::F32);
    let net = TransferNet::new(cfg, dtype, device)?;
    net.load_params(tensors)?;
    Ok(net)
}

pub fn save(net: &TransferNet, path: &Path) -> Result<()> {
    let bytes = to_bytes(net)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, device: &Device) -> Result<TransferNet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, device)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ContentEncoder;

    fn net(dtype: DType) -> TransferNet {
        let cfg = NetConfig {
            base_channels: 4,
            content_channels: 8,
            style_channels: 4,
            ..NetConfig::default()
        };
        TransferNet::new(cfg, dtype, &Device::Cpu).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        for dtype in [DType::F32, DType::F64] {
            let a = net(dtype);
            let x = Tensor::rand(0f32, 1.0, (1, 3, 32, 32), &Device::Cpu)
                .unwrap()
                .to_dtype(dtype)
                .unwrap();
            let run = |n: &TransferNet| -> Vec<f64> {
                let c = n.encode_content(&x, ContentEncoder::Glyph).unwrap();
                let s = n.encode_style(&x).unwrap();
                n.generate_style(&c, &s)
                    .unwrap()
                    .flatten_all()
                    .unwrap()
                    .to_dtype(DType::F64)
                    .unwrap()
                    .to_vec1()
                    .unwrap()
            };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.safetensors");
            save(&a, &path).unwrap();
            let b = load(&path, &Device::Cpu).unwrap();
            assert_eq!(b.config(), a.config());
            assert_eq!(b.dtype(), dtype);
            assert_eq!(run(&a), run(&b));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = net(DType::F32);
        let mut bytes = to_bytes(&a).unwrap();
        // Rewrite the stored config so it no longer matches the arrays.
        let other = NetConfig {
            content_channels: 12,
            ..a.config().clone()
        };
        let b = TransferNet::new(other, DType::F32, &Device::Cpu).unwrap();
        let foreign = to_bytes(&b).unwrap();
        assert!(from_bytes(&foreign, &Device::Cpu).is_ok());
        let st = SafeTensors::deserialize(&foreign).unwrap();
        let mut tensors: Vec<(String, Tensor)> = st
            .tensors()
            .into_iter()
            .map(|(n, v)| (n, view_tensor(&v, &Device::Cpu).unwrap()))
            .collect();
        tensors.sort_by(|x, y| x.0.cmp(&y.0));
        assert!(matches!(a.load_params(tensors), Err(Error::Checkpoint(_))));
        bytes.truncate(bytes.len() / 2);
        assert!(from_bytes(&bytes, &Device::Cpu).is_err());
    }

    #[test]
    fn config_is_readable_alone() {
        let a = net(DType::F32);
        assert_eq!(&read_config(&to_bytes(&a).unwrap()).unwrap(), a.config());
    }
}
