//! Binary checkpoint: magic, format version, a JSON header with the config
//! and vocabulary, then every tensor as name, shape and little-endian f64s.

use super::{Model, ModelConfig, Vocab};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"AQUACKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let header = serde_json::to_vec(&Header { config: model.config.clone(), vocab: model.vocab.words().to_vec() })
            .expect("header serializes");
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let named = model.params.named();
        w.write_all(&(named.len() as u32).to_le_bytes())?;
        for (name, t) in named {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows as u64).to_le_bytes())?;
            w.write_all(&(t.cols as u64).to_le_bytes())?;
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: io::Error) -> CheckpointError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        CheckpointError::Corrupt("truncated".into())
    } else {
        CheckpointError::Io(e)
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let hlen = read_u64(&mut r)?;
    if hlen > 1 << 32 {
        return Err(CheckpointError::Corrupt("header length".into()));
    }
    let mut hbytes = vec![0u8; hlen as usize];
    r.read_exact(&mut hbytes).map_err(truncated)?;
    let header: Header = serde_json::from_slice(&hbytes).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    header.config.validate().map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let mut model = Model::new(header.config, Vocab::from_words(header.vocab), 0);
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    let n = read_u32(&mut r)? as usize;
    if n != names.len() {
        return Err(CheckpointError::Corrupt(format!("expected {} tensors, found {n}", names.len())));
    }
    for (expected, t) in names.iter().zip(model.params.tensors_mut()) {
        let len = read_u32(&mut r)? as usize;
        if len > 256 {
            return Err(CheckpointError::Corrupt("tensor name length".into()));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        if name != expected.as_bytes() {
            return Err(CheckpointError::Corrupt(format!("expected tensor {expected}")));
        }
        let (rows, cols) = (read_u64(&mut r)? as usize, read_u64(&mut r)? as usize);
        if (rows, cols) != (t.rows, t.cols) {
            return Err(CheckpointError::Corrupt(format!("{expected}: shape {rows}x{cols}, expected {}x{}", t.rows, t.cols)));
        }
        let mut b = [0u8; 8];
        for v in t.data.iter_mut() {
            r.read_exact(&mut b).map_err(truncated)?;
            *v = f64::from_le_bytes(b);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn bit_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut model = Model::new(ModelConfig::toy(), Vocab::build(&synth::generate(5, 1), 40), 9);
        model.params.op_out.b.data[3] = f64::MIN_POSITIVE;
        model.params.val_flags.data[0] = -0.0;
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.vocab.words(), model.vocab.words());
        for (a, b) in back.params.tensors().iter().zip(model.params.tensors()) {
            let ab: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn rejects_damage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Model::new(ModelConfig::toy(), Vocab::build(&synth::generate(5, 1), 40), 9);
        save_checkpoint(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Corrupt(_))));
        std::fs::write(&path, b"hello world").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));
        let mut v = bytes.clone();
        v[8] = 9;
        std::fs::write(&path, &v).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Version(9))));
    }
}
