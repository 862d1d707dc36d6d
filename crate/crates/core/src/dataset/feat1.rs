//! FEAT1 binary feature container.
//!
//! Layout: magic "FEAT1", u32 version (=1), u32 video count; per video a
//! u16 id length, the UTF-8 id, u32 T, u32 feature_dim, then T×feature_dim
//! little-endian f32 values row-major. Values are stored at f32 precision.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, SnippetFeatureSet};
use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

const MAGIC: &[u8; 5] = b"FEAT1";
const VERSION: u32 = 1;

pub fn save_features(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(dataset.videos.len() as u32)?;
    for video in &dataset.videos {
        let id = video.video_id.as_bytes();
        if id.len() > u16::MAX as usize {
            return Err(Error::validation(format!(
                "video id {:?}... exceeds the u16 length field",
                &video.video_id[..32.min(video.video_id.len())]
            )));
        }
        w.write_u16::<LittleEndian>(id.len() as u16)?;
        w.write_all(id)?;
        w.write_u32::<LittleEndian>(video.num_snippets() as u32)?;
        w.write_u32::<LittleEndian>(video.feature_dim() as u32)?;
        for &v in video.features.as_slice() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_features(path: &Path, num_classes: usize) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let corrupt = |message: &str| Error::Corrupt {
        path: path.to_path_buf(),
        message: message.to_string(),
    };

    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| corrupt("missing magic"))?;
    if &magic != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("bad magic {magic:?}, expected \"FEAT1\""),
        });
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| corrupt("missing version"))?;
    if version != VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unsupported version {version}"),
        });
    }
    let count = r
        .read_u32::<LittleEndian>()
        .map_err(|_| corrupt("missing video count"))?;

    let mut videos = Vec::with_capacity(count as usize);
    for i in 0..count {
        let id_len = r
            .read_u16::<LittleEndian>()
            .map_err(|_| corrupt(&format!("truncated id length for video {i}")))?;
        let mut id_bytes = vec![0u8; id_len as usize];
        r.read_exact(&mut id_bytes)
            .map_err(|_| corrupt(&format!("truncated id for video {i}")))?;
        let video_id = String::from_utf8(id_bytes)
            .map_err(|_| corrupt(&format!("video {i} id is not UTF-8")))?;
        let t = r
            .read_u32::<LittleEndian>()
            .map_err(|_| corrupt(&format!("truncated T for video {i}")))? as usize;
        let dim = r
            .read_u32::<LittleEndian>()
            .map_err(|_| corrupt(&format!("truncated feature_dim for video {i}")))?
            as usize;
        let mut data = Vec::with_capacity(t * dim);
        for _ in 0..t * dim {
            let v = r
                .read_f32::<LittleEndian>()
                .map_err(|_| corrupt(&format!("truncated features for video {i}")))?;
            if !v.is_finite() {
                return Err(Error::validation(format!(
                    "non-finite feature in video {video_id:?}"
                )));
            }
            data.push(v as f64);
        }
        let features = RealMatrix::from_vec(t, dim, data)?;
        videos.push(SnippetFeatureSet::new(video_id, features)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(corrupt("trailing bytes after the declared video count"));
    }
    Dataset::new(videos, num_classes)
}
