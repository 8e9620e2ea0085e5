//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `AUSCKPT\0`, `u32` version, length-prefixed
//! `ArchConfig` JSON, shape table (`u32` tensor count, then per tensor a `u32`
//! rank and `u32` dims), all parameters as `f32`, the optimizer velocity as
//! `f32`, and length-prefixed metadata JSON.

use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{param_shapes, ArchConfig, Model, ModelError, Network, ParamSet};
use crate::rng::Rng;

const MAGIC: &[u8; 8] = b"AUSCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub stage: u8,
    pub epoch: usize,
    pub seed: u64,
    pub device: Option<String>,
    pub val_score: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    meta: CheckpointMeta,
    model_seed: u64,
    dropout_rng: RngState,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(
        &u32::try_from(v)
            .expect("checkpoint field fits in u32")
            .to_le_bytes(),
    );
}

fn put_tensors(out: &mut Vec<u8>, set: &ParamSet<f32>) {
    for t in set {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(model: &Model, meta: &CheckpointMeta) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let arch = serde_json::to_vec(model.arch()).expect("arch serializes");
    put_u32(&mut out, arch.len());
    out.extend_from_slice(&arch);
    let shapes = param_shapes(model.arch());
    put_u32(&mut out, shapes.len());
    for s in &shapes {
        put_u32(&mut out, s.len());
        for &d in s {
            put_u32(&mut out, d);
        }
    }
    put_tensors(&mut out, model.network().params());
    put_tensors(&mut out, model.velocity());
    let rng = model.dropout_rng();
    let trailer = Trailer {
        meta: meta.clone(),
        model_seed: model.seed(),
        dropout_rng: RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        },
    };
    let json = serde_json::to_vec(&trailer).expect("metadata serializes");
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn tensors(&mut self, shapes: &[Vec<usize>]) -> Result<ParamSet<f32>, ModelError> {
        shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let raw = self.take(n * 4)?;
                let t: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                if t.iter().any(|v| !v.is_finite()) {
                    return Err(bad("non-finite parameter"));
                }
                Ok(t)
            })
            .collect()
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<(Model, CheckpointMeta), ModelError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = r.u32()?;
    let arch: ArchConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| bad(format!("architecture: {e}")))?;
    arch.validate()?;
    let expected = param_shapes(&arch);
    let count = r.u32()?;
    if count != expected.len() {
        return Err(bad(format!(
            "shape table has {count} tensors, architecture needs {}",
            expected.len()
        )));
    }
    for (i, want) in expected.iter().enumerate() {
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        if &dims != want {
            return Err(bad(format!(
                "tensor {i} has shape {dims:?}, expected {want:?}"
            )));
        }
    }
    let params = r.tensors(&expected)?;
    let velocity = r.tensors(&expected)?;
    let n = r.u32()?;
    let trailer: Trailer =
        serde_json::from_slice(r.take(n)?).map_err(|e| bad(format!("metadata: {e}")))?;
    if r.pos != buf.len() {
        return Err(bad("trailing bytes"));
    }
    let word_pos: u128 = trailer
        .dropout_rng
        .word_pos
        .parse()
        .map_err(|_| bad("bad rng position"))?;
    let mut rng = Rng::from_seed(trailer.dropout_rng.seed);
    rng.set_stream(trailer.dropout_rng.stream);
    rng.set_word_pos(word_pos);
    let mut model = Model::from_network(Network::from_params(arch, params)?, trailer.model_seed);
    model.set_state(velocity, rng);
    Ok((model, trailer.meta))
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    meta: &CheckpointMeta,
) -> Result<(), ModelError> {
    std::fs::write(path, encode_checkpoint(model, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta), ModelError> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Batch};
    use crate::spectro::Grid;

    fn trained() -> Model {
        let arch = ArchConfig {
            input_mels: 6,
            conv_stages: vec![(2, 2)],
            blocks_per_stage: 1,
            fc_widths: vec![4],
            n_classes: 2,
            dropout_rate: 0.2,
        };
        let mut m = build_model(&arch, 4).unwrap();
        let g = Grid::from_vec(6, 5, (0..30).map(|i| (i as f64).sin()).collect());
        let b = Batch::new(vec![g], vec![1]).unwrap();
        let grads = m.backward(&b).unwrap();
        m.sgd_step(&grads.grads, 0.1, 0.9).unwrap();
        m
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            stage: 2,
            epoch: 17,
            seed: 4,
            device: Some("Meditron".into()),
            val_score: Some(0.625),
        }
    }

    #[test]
    fn round_trip_restores_everything() {
        let m = trained();
        let bytes = encode_checkpoint(&m, &meta());
        let (back, md) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(md, meta());
        assert_eq!(back.network(), m.network());
        assert_eq!(back.velocity(), m.velocity());
        assert_eq!(back.dropout_rng(), m.dropout_rng());
        assert_eq!(encode_checkpoint(&back, &md), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = trained();
        save_checkpoint(&p, &m, &meta()).unwrap();
        let (back, _) = load_checkpoint(&p).unwrap();
        assert_eq!(back.network(), m.network());
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = encode_checkpoint(&trained(), &meta());
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(
            matches!(decode_checkpoint(&b), Err(ModelError::Checkpoint(m)) if m.contains("magic"))
        );
        let mut b = bytes.clone();
        b[8] = 9;
        assert!(
            matches!(decode_checkpoint(&b), Err(ModelError::Checkpoint(m)) if m.contains("version"))
        );
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut b = bytes.clone();
        b.push(0);
        assert!(decode_checkpoint(&b).is_err());

        // Corrupt the first dimension of the first tensor in the shape table.
        let arch_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let first_dim = 16 + arch_len + 4 + 4;
        let mut b = bytes;
        b[first_dim] += 1;
        assert!(
            matches!(decode_checkpoint(&b), Err(ModelError::Checkpoint(m)) if m.contains("shape"))
        );
    }
}
