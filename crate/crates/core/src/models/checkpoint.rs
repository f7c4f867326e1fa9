//! Versioned binary parameter checkpoints.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic       4 bytes  b"GAEC"
//! version     u16      currently 1
//! model_kind  u8       0 gae, 1 vgae, 2 resgae, 3 resvgae
//! activation  u8       0 sigmoid, 1 relu
//! num_layers  u32
//! in_dim      u32
//! hidden_dim  u32
//! latent_dim  u32
//! num_mats    u32      hidden layers in order, then head(s) (mu, logvar)
//! per matrix: rows u32, cols u32, rows*cols f64 values (row-major, LE)
//! ```
//!
//! `load(save(p))` reproduces `p` bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Activation, EncoderConfig, EncoderParams, GclParams, ModelKind, OutputHead};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GAEC";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint file (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: unsupported checkpoint version {version}")]
    UnsupportedVersion { path: String, version: u16 },
    #[error("{path}: malformed checkpoint: {message}")]
    Malformed { path: String, message: String },
}

pub fn save_checkpoint(params: &EncoderParams, path: &Path) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    let kind = match params.cfg.model_kind {
        ModelKind::Gae => 0u8,
        ModelKind::Vgae => 1,
        ModelKind::ResGae => 2,
        ModelKind::ResVgae => 3,
    };
    let act = match params.cfg.activation {
        Activation::Sigmoid => 0u8,
        Activation::Relu => 1,
    };
    w.write_all(&[kind, act]).map_err(io_err)?;
    for dim in [
        params.cfg.num_layers,
        params.cfg.in_dim,
        params.cfg.hidden_dim,
        params.cfg.latent_dim,
    ] {
        w.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
    }
    let weights = params.weights();
    w.write_all(&(weights.len() as u32).to_le_bytes()).map_err(io_err)?;
    for m in weights {
        w.write_all(&(m.rows() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(m.cols() as u32).to_le_bytes()).map_err(io_err)?;
        for v in m.values() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams, CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let malformed = |message: &str| CheckpointError::Malformed {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    let file = File::open(path).map_err(io_err)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic { path: path.display().to_string() });
    }
    let mut u16buf = [0u8; 2];
    r.read_exact(&mut u16buf).map_err(io_err)?;
    let version = u16::from_le_bytes(u16buf);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            path: path.display().to_string(),
            version,
        });
    }
    let mut bytes = [0u8; 2];
    r.read_exact(&mut bytes).map_err(io_err)?;
    let model_kind = match bytes[0] {
        0 => ModelKind::Gae,
        1 => ModelKind::Vgae,
        2 => ModelKind::ResGae,
        3 => ModelKind::ResVgae,
        other => return Err(malformed(&format!("unknown model kind {other}"))),
    };
    let activation = match bytes[1] {
        0 => Activation::Sigmoid,
        1 => Activation::Relu,
        other => return Err(malformed(&format!("unknown activation {other}"))),
    };
    let read_u32 = |r: &mut BufReader<File>| -> Result<u32, CheckpointError> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf).map_err(io_err)?;
        Ok(u32::from_le_bytes(buf))
    };
    let num_layers = read_u32(&mut r)? as usize;
    let in_dim = read_u32(&mut r)? as usize;
    let hidden_dim = read_u32(&mut r)? as usize;
    let latent_dim = read_u32(&mut r)? as usize;
    let num_mats = read_u32(&mut r)? as usize;

    let expected = (num_layers - 1) + if model_kind.is_variational() { 2 } else { 1 };
    if num_mats != expected {
        return Err(malformed(&format!("expected {expected} matrices, found {num_mats}")));
    }

    let mut mats = Vec::with_capacity(num_mats);
    for _ in 0..num_mats {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut values = vec![0.0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in &mut values {
            r.read_exact(&mut buf).map_err(io_err)?;
            *v = f64::from_le_bytes(buf);
        }
        mats.push(Tensor::from_values(rows, cols, values).map_err(|e| malformed(&e.to_string()))?);
    }

    let cfg = EncoderConfig { model_kind, num_layers, in_dim, hidden_dim, latent_dim, activation };
    let mut iter = mats.into_iter();
    let hidden: Vec<GclParams> = iter
        .by_ref()
        .take(num_layers - 1)
        .map(|weight| GclParams { weight })
        .collect();
    let head = if model_kind.is_variational() {
        let mu = GclParams { weight: iter.next().expect("count checked") };
        let logvar = GclParams { weight: iter.next().expect("count checked") };
        OutputHead::Variational { mu, logvar }
    } else {
        OutputHead::Deterministic(GclParams { weight: iter.next().expect("count checked") })
    };
    Ok(EncoderParams { cfg, hidden, head })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_encoder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for kind in ModelKind::ALL {
            let cfg = EncoderConfig { hidden_dim: 5, latent_dim: 3, ..EncoderConfig::new(kind, 4, 9) };
            let params = build_encoder(&cfg, &mut rng).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("params.gaec");
            save_checkpoint(&params, &path).unwrap();
            let loaded = load_checkpoint(&path).unwrap();
            assert_eq!(loaded.cfg.model_kind, kind);
            assert_eq!(loaded.cfg.num_layers, 4);
            let a = params.weights();
            let b = loaded.weights();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.values(), y.values());
                assert_eq!(x.shape(), y.shape());
            }
        }
    }

    #[test]
    fn rejects_garbage_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic { .. })));
    }
}
