//! Binary checkpoint container: magic, version, a JSON header describing the
//! model and its tensors, then every tensor as raw little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DualEncoderModel, ModelConfig};
use crate::error::{Error, Result};
use crate::numeric::{RngStream, Tensor2};

const MAGIC: &[u8; 8] = b"E2MCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    char_vocab: usize,
    entity_vocab: usize,
    num_classes: usize,
    tensors: Vec<TensorHeader>,
}

pub fn write_checkpoint<W: Write>(model: &DualEncoderModel, mut out: W) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        char_vocab: model.char_vocab_size(),
        entity_vocab: model.entity_vocab_size(),
        num_classes: model.num_classes(),
        tensors: model
            .params()
            .slots()
            .iter()
            .map(|s| TensorHeader {
                name: s.name.clone(),
                rows: s.value.rows(),
                cols: s.value.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for s in model.params().slots() {
        for v in s.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<DualEncoderModel> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    if len > 1 << 30 {
        return Err(Error::Checkpoint("header length implausibly large".into()));
    }
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;

    // Values are overwritten below; the rng only shapes the skeleton.
    let mut rng = RngStream::new(0);
    let mut model = DualEncoderModel::new(header.config, header.char_vocab, header.entity_vocab, &mut rng)?;
    if header.num_classes > 0 {
        model.expand_classifier(header.num_classes, &mut rng)?;
    }
    if header.tensors.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, header lists {}",
            model.params().len(),
            header.tensors.len()
        )));
    }
    for (slot, th) in model.params_mut().slots_mut().iter_mut().zip(&header.tensors) {
        if slot.name != th.name || slot.value.shape() != (th.rows, th.cols) {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` {:?} does not match layout `{}` {:?}",
                th.name,
                (th.rows, th.cols),
                slot.name,
                slot.value.shape()
            )));
        }
        let mut data = Vec::with_capacity(th.rows * th.cols);
        for _ in 0..th.rows * th.cols {
            input.read_exact(&mut b8).map_err(|_| Error::Checkpoint(format!("tensor `{}` truncated", th.name)))?;
            data.push(f64::from_le_bytes(b8));
        }
        slot.value = Tensor2::from_vec(th.rows, th.cols, data)?;
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &DualEncoderModel, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DualEncoderModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
