//! Binary checkpoints: `CLDNET01`, u64 LE header length, JSON header,
//! little-endian f64 parameters.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::model::{MixedScoreModel, ScoreMode};
use crate::error::{CldError, Result};
use crate::kernels::CldParams;

const MAGIC: &[u8; 8] = b"CLDNET01";
const MAX_HEADER: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub widths: Vec<usize>,
    pub mode: ScoreMode,
    pub params: CldParams,
    pub step: usize,
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &MixedScoreModel, step: usize) -> Result<()> {
    let header = CheckpointHeader {
        widths: model.net.widths.clone(),
        mode: model.mode,
        params: model.p,
        step,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in &model.net.params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(MixedScoreModel, CheckpointHeader)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CldError::Format("bad checkpoint magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > MAX_HEADER {
        return Err(CldError::Format(format!("checkpoint header of {len} bytes")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let n = Mlp::n_params_for(&header.widths);
    let mut blob = vec![0u8; n * 8];
    r.read_exact(&mut blob)?;
    let params = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let net = Mlp {
        widths: header.widths.clone(),
        params,
    };
    let model = MixedScoreModel::new(net, header.params, header.mode)?;
    Ok((model, header))
}

pub fn save_checkpoint(path: &Path, model: &MixedScoreModel, step: usize) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut f, model, step)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(MixedScoreModel, CheckpointHeader)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut f)
}
