//! Versioned binary checkpoints for the localization head.
//!
//! Layout (little-endian): magic "FEELCKP1", u32 version (=1), u32 iteration,
//! u32 feature_dim, u32 num_classes, f64 learning_rate/beta1/beta2/epsilon,
//! u64 step, then three f64 blocks of param_count values: parameters, first
//! moments, second moments.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::LocalizerParams;
use crate::error::{Error, Result};
use crate::numerics::AdamState;

const MAGIC: &[u8; 8] = b"FEELCKP1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: LocalizerParams,
    pub adam: AdamState,
    pub iteration: usize,
}

pub fn save_checkpoint(
    path: &Path,
    params: &LocalizerParams,
    adam: &AdamState,
    iteration: usize,
) -> Result<()> {
    let count = params.param_count();
    if adam.first_moment.len() != count {
        return Err(Error::invalid(format!(
            "optimizer tracks {} parameters but the head has {count}",
            adam.first_moment.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(iteration as u32)?;
    w.write_u32::<LittleEndian>(params.feature_dim as u32)?;
    w.write_u32::<LittleEndian>(params.num_classes as u32)?;
    w.write_f64::<LittleEndian>(adam.learning_rate)?;
    w.write_f64::<LittleEndian>(adam.beta1)?;
    w.write_f64::<LittleEndian>(adam.beta2)?;
    w.write_f64::<LittleEndian>(adam.epsilon)?;
    w.write_u64::<LittleEndian>(adam.step)?;
    for block in [&params.flatten(), &adam.first_moment, &adam.second_moment] {
        for &v in block.iter() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let corrupt = |message: &str| Error::Corrupt {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt("missing magic"))?;
    if &magic != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "bad checkpoint magic".to_string(),
        });
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| corrupt("missing version"))?;
    if version != VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let iteration = r.read_u32::<LittleEndian>().map_err(|_| corrupt("missing iteration"))? as usize;
    let feature_dim = r.read_u32::<LittleEndian>().map_err(|_| corrupt("missing feature_dim"))? as usize;
    let num_classes = r.read_u32::<LittleEndian>().map_err(|_| corrupt("missing num_classes"))? as usize;
    let learning_rate = r.read_f64::<LittleEndian>().map_err(|_| corrupt("missing learning rate"))?;
    let beta1 = r.read_f64::<LittleEndian>().map_err(|_| corrupt("missing beta1"))?;
    let beta2 = r.read_f64::<LittleEndian>().map_err(|_| corrupt("missing beta2"))?;
    let epsilon = r.read_f64::<LittleEndian>().map_err(|_| corrupt("missing epsilon"))?;
    let step = r.read_u64::<LittleEndian>().map_err(|_| corrupt("missing step"))?;

    if feature_dim == 0 || num_classes == 0 {
        return Err(Error::validation("checkpoint has empty dimensions"));
    }
    let count = feature_dim * feature_dim + feature_dim + feature_dim * num_classes + num_classes;
    let mut blocks: Vec<Vec<f64>> = Vec::with_capacity(3);
    for name in ["parameters", "first moments", "second moments"] {
        let mut block = Vec::with_capacity(count);
        for _ in 0..count {
            let v = r
                .read_f64::<LittleEndian>()
                .map_err(|_| corrupt(&format!("truncated {name}")))?;
            if !v.is_finite() {
                return Err(Error::validation(format!("non-finite value in {name}")));
            }
            block.push(v);
        }
        blocks.push(block);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(corrupt("trailing bytes"));
    }

    let mut params = LocalizerParams {
        feature_dim,
        num_classes,
        embed_weight: crate::numerics::RealMatrix::zeros(feature_dim, feature_dim),
        embed_bias: vec![0.0; feature_dim],
        class_weight: crate::numerics::RealMatrix::zeros(feature_dim, num_classes),
        class_bias: vec![0.0; num_classes],
    };
    params.load_flat(&blocks[0])?;
    let mut adam = AdamState::new(count, learning_rate);
    adam.beta1 = beta1;
    adam.beta2 = beta2;
    adam.epsilon = epsilon;
    adam.step = step;
    adam.first_moment = blocks[1].clone();
    adam.second_moment = blocks[2].clone();

    Ok(Checkpoint {
        params,
        adam,
        iteration,
    })
}
