//! Weight checkpoints: a key-value `manifest` listing every tensor with its
//! shape and byte offset, plus a `weights` blob of little-endian `f32`.

use std::fs;
use std::path::Path;

use super::unet::{UNetConfig, UNetModel};
use crate::tensorio::KeyValues;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest";
pub const WEIGHTS_FILE: &str = "weights";
const FORMAT: &str = "kiqt-weights-1";

fn tensor_entry(shape: &[usize], offset: usize) -> String {
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    format!("{} offset {} bytes {}", dims.join("x"), offset * 4, shape.iter().product::<usize>() * 4)
}

/// Writes `dir/manifest` and `dir/weights`. Entries of `extra` are appended
/// to the manifest verbatim.
pub fn save_checkpoint(model: &UNetModel<f32>, dir: impl AsRef<Path>, extra: &KeyValues) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = model.config();
    let mut kv = KeyValues::new();
    kv.insert("format", FORMAT);
    kv.insert("in_channels", cfg.in_channels);
    kv.insert("out_channels", cfg.out_channels);
    kv.insert("encoder_channels", cfg.encoder_channels.map(|c| c.to_string()).join(","));
    kv.insert("bottleneck_channels", cfg.bottleneck_channels);
    kv.insert("kernel", cfg.kernel);
    kv.insert("pool", cfg.pool);
    kv.insert("weight_init_seed", model.weight_init_seed());
    kv.insert("param_count", model.param_count());
    for slot in model.slots() {
        kv.insert(format!("tensor.{}.weight", slot.spec.name), tensor_entry(&slot.spec.weight_shape(), slot.weight_offset));
        kv.insert(format!("tensor.{}.bias", slot.spec.name), tensor_entry(&[slot.spec.cout], slot.bias_offset));
    }
    for (k, v) in extra.iter() {
        kv.insert(k, v);
    }
    kv.save(dir.join(MANIFEST_FILE))?;

    let mut blob = Vec::with_capacity(model.param_count() * 4);
    for p in model.params() {
        blob.extend_from_slice(&p.to_le_bytes());
    }
    let path = dir.join(WEIGHTS_FILE);
    fs::write(&path, blob).map_err(|e| Error::io(&path, e))
}

/// Reads a checkpoint written by [`save_checkpoint`], verifying every tensor
/// entry against the layout implied by the stored configuration.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(UNetModel<f32>, KeyValues)> {
    let dir = dir.as_ref();
    let kv = KeyValues::load(dir.join(MANIFEST_FILE))?;
    if kv.require("format")? != FORMAT {
        return Err(Error::Format { field: "format", detail: format!("unsupported checkpoint format {}", kv.require("format")?) });
    }
    let enc: Vec<usize> = kv.parse_list("encoder_channels")?;
    let encoder_channels: [usize; 3] = enc
        .try_into()
        .map_err(|_| Error::Format { field: "encoder_channels", detail: "expected three widths".into() })?;
    let config = UNetConfig {
        in_channels: kv.parse_value("in_channels")?,
        out_channels: kv.parse_value("out_channels")?,
        encoder_channels,
        bottleneck_channels: kv.parse_value("bottleneck_channels")?,
        kernel: kv.parse_value("kernel")?,
        pool: kv.parse_value("pool")?,
    };
    let layout = UNetModel::<f32>::zeros(config)?;
    for slot in layout.slots() {
        for (key, expected) in [
            (format!("tensor.{}.weight", slot.spec.name), tensor_entry(&slot.spec.weight_shape(), slot.weight_offset)),
            (format!("tensor.{}.bias", slot.spec.name), tensor_entry(&[slot.spec.cout], slot.bias_offset)),
        ] {
            let found = kv.require(&key)?;
            if found != expected {
                return Err(Error::Format { field: "tensor", detail: format!("{key}: expected {expected}, found {found}") });
            }
        }
    }
    let path = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = layout.param_count() * 4;
    if blob.len() != expected {
        return Err(Error::Truncated { expected, found: blob.len() });
    }
    let params = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let model = UNetModel::from_params(config, params, kv.parse_value("weight_init_seed")?)?;
    Ok((model, kv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_unet;
    use crate::tensorio::IqtDomain;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let model = build_unet(UNetConfig::reduced(IqtDomain::Spatial), 21).unwrap();
        let mut extra = KeyValues::new();
        extra.insert("best_epoch", 4);
        save_checkpoint(&model, dir.path(), &extra).unwrap();
        let (back, kv) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.weight_init_seed(), 21);
        let bits = |m: &UNetModel<f32>| m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&model));
        assert_eq!(kv.get("best_epoch"), Some("4"));
        assert_eq!(kv.get("tensor.enc1.conv1.weight"), Some("4x1x3x3 offset 0 bytes 144"));
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = build_unet(UNetConfig::reduced(IqtDomain::Kspace), 1).unwrap();
        save_checkpoint(&model, dir.path(), &KeyValues::new()).unwrap();
        let path = dir.path().join(WEIGHTS_FILE);
        let mut blob = fs::read(&path).unwrap();
        blob.pop();
        fs::write(&path, blob).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Truncated { .. })));
    }
}
