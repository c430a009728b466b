//! Model checkpoints: `SPNW`, a version byte, a u32 LE length followed by the
//! JSON model spec, then every parameter as f32 LE in declaration order.

use std::path::Path;

use crate::error::{Error, Result};

use super::model::{build_model, Model, ModelSpec};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPNW";
pub const CHECKPOINT_VERSION: u8 = 1;

pub fn encode_checkpoint(model: &Model<f32>) -> Result<Vec<u8>> {
    let spec = serde_json::to_vec(model.spec())?;
    let params = model.flat_params();
    let mut out = Vec::with_capacity(9 + spec.len() + 4 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Truncated {
            expected: n,
            found: bytes.len(),
        });
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<Model<f32>> {
    if take(&mut bytes, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::BadFormat(
            "not a model checkpoint (bad magic)".into(),
        ));
    }
    let version = take(&mut bytes, 1)?[0];
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadFormat(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let len = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().expect("4 bytes")) as usize;
    let spec: ModelSpec = serde_json::from_slice(take(&mut bytes, len)?)?;
    let mut model = build_model::<f32>(&spec, 0)?;
    let n = model.param_count();
    if bytes.len() != 4 * n {
        return Err(Error::Truncated {
            expected: 4 * n,
            found: bytes.len(),
        });
    }
    let params: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    model.load_flat_params(&params)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::Architecture;

    #[test]
    fn round_trip_is_exact() {
        let spec = ModelSpec::new(Architecture::Spn, 5, [12, 30], [9, 9]);
        let model = build_model::<f32>(&spec, 77).unwrap();
        let bytes = encode_checkpoint(&model).unwrap();
        assert_eq!(&bytes[..4], b"SPNW");
        assert_eq!(bytes[4], 1);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.spec(), &spec);
        assert_eq!(back.flat_params(), model.flat_params());
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let spec = ModelSpec::new(Architecture::WrtftCnn, 4, [1, 1], [9, 9]);
        let bytes = encode_checkpoint(&build_model::<f32>(&spec, 0).unwrap()).unwrap();
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 4]),
            Err(Error::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::BadFormat(_))));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::BadFormat(_))));
    }
}
