//! Bit-exact checkpoint format.
//!
//! Layout: magic "FFPF", version u32 LE, tensor count u32 LE, then per
//! tensor: name length u16 LE + UTF-8 name, rank u8, dims as u64 LE,
//! payload as 32-bit LE floats; a trailing CRC32 covers everything between
//! the 12-byte header and the checksum itself.
//!
//! A checkpoint stores the named model state (weights, biases, batch-norm
//! gamma/beta and running statistics), the optimizer momentum buffers
//! under `opt.m.*`, the epoch counter under `meta.epoch`, and an
//! architecture echo under `meta.config` that is verified on load.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use ffpf_core::model::{Detector, ModelConfig};
use ffpf_core::optim::Sgd;
use ffpf_core::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FFPF";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io(io::Error),
    BadMagic,
    BadVersion(u32),
    Truncated,
    BadName,
    NameCollision(String),
    ChecksumMismatch { stored: u32, computed: u32 },
    ConfigMismatch(String),
    MissingTensor(String),
    UnknownTensor(String),
    ShapeMismatch(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use CheckpointError::*;
        match self {
            Io(e) => write!(f, "io error: {e}"),
            BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            BadVersion(v) => write!(f, "unsupported checkpoint version {v}"),
            Truncated => write!(f, "checkpoint truncated"),
            BadName => write!(f, "tensor name is not valid UTF-8"),
            NameCollision(n) => write!(f, "tensor name appears twice: {n}"),
            ChecksumMismatch { stored, computed } => {
                write!(f, "checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")
            }
            ConfigMismatch(m) => write!(f, "checkpoint was written for a different config: {m}"),
            MissingTensor(n) => write!(f, "checkpoint is missing tensor {n}"),
            UnknownTensor(n) => write!(f, "checkpoint contains unknown tensor {n}"),
            ShapeMismatch(n) => write!(f, "tensor {n} has the wrong shape"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

/// Each checkpoint error variant maps to a distinct process exit code.
pub fn error_code(e: &CheckpointError) -> i32 {
    use CheckpointError::*;
    match e {
        Io(_) => 10,
        BadMagic => 11,
        BadVersion(_) => 12,
        Truncated => 13,
        BadName => 14,
        NameCollision(_) => 15,
        ChecksumMismatch { .. } => 16,
        ConfigMismatch(_) => 17,
        MissingTensor(_) => 18,
        UnknownTensor(_) => 19,
        ShapeMismatch(_) => 20,
    }
}

struct Entry {
    name: String,
    dims: Vec<u64>,
    data: Vec<f32>,
}

fn push_entry(out: &mut Vec<Entry>, name: &str, dims: Vec<u64>, data: Vec<f32>) {
    out.push(Entry {
        name: name.to_string(),
        dims,
        data,
    });
}

fn encode(entries: &[Entry]) -> Vec<u8> {
    let mut body = Vec::new();
    for e in entries {
        let name = e.name.as_bytes();
        body.extend_from_slice(&(name.len() as u16).to_le_bytes());
        body.extend_from_slice(name);
        body.push(e.dims.len() as u8);
        for &d in &e.dims {
            body.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &e.data {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(12 + body.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out
}

fn decode(bytes: &[u8]) -> Result<Vec<Entry>, CheckpointError> {
    if bytes.len() < 16 {
        return Err(if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            CheckpointError::BadMagic
        } else {
            CheckpointError::Truncated
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }

    let mut entries = Vec::with_capacity(count);
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *pos + n > body.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| CheckpointError::BadName)?;
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        let numel: usize = dims.iter().product::<u64>() as usize;
        let raw = take(&mut pos, numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(Entry { name, dims, data });
    }
    if pos != body.len() {
        return Err(CheckpointError::Truncated);
    }
    Ok(entries)
}

/// Serialize the model, optimizer, and epoch counter.
pub fn save_checkpoint(
    path: &Path,
    model: &mut Detector<f32>,
    opt: &Sgd<f32>,
    epoch: usize,
) -> Result<(), CheckpointError> {
    let mut entries = Vec::new();
    let mut state = Vec::new();
    model.collect_state(&mut state);
    for (name, tensor) in state {
        let shape = tensor.shape();
        push_entry(
            &mut entries,
            &name,
            shape.iter().map(|&d| d as u64).collect(),
            tensor.data().to_vec(),
        );
    }
    for (name, buf) in opt.state() {
        push_entry(
            &mut entries,
            &format!("opt.m.{name}"),
            vec![buf.len() as u64],
            buf.clone(),
        );
    }
    push_entry(&mut entries, "meta.epoch", vec![1], vec![epoch as f32]);
    let echo = model.config.echo();
    push_entry(&mut entries, "meta.config", vec![echo.len() as u64], echo);

    let mut seen = BTreeMap::new();
    for e in &entries {
        if seen.insert(e.name.clone(), ()).is_some() {
            return Err(CheckpointError::NameCollision(e.name.clone()));
        }
    }
    let bytes = encode(&entries);
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Load a checkpoint into a freshly built model of the given config.
/// Returns (model, optimizer, epoch).
pub fn load_checkpoint(
    path: &Path,
    config: ModelConfig,
    momentum: f64,
    weight_decay: f64,
) -> Result<(Detector<f32>, Sgd<f32>, usize), CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let entries = decode(&bytes)?;

    let mut map: BTreeMap<String, Entry> = BTreeMap::new();
    for e in entries {
        if map.insert(e.name.clone(), e).is_some() {
            return Err(CheckpointError::NameCollision(
                map.keys().last().unwrap().clone(),
            ));
        }
    }

    let echo = map
        .remove("meta.config")
        .ok_or_else(|| CheckpointError::MissingTensor("meta.config".into()))?;
    let expected = config.echo();
    if echo.data != expected {
        return Err(CheckpointError::ConfigMismatch(format!(
            "stored {:?}, expected {:?}",
            echo.data, expected
        )));
    }
    let epoch = map
        .remove("meta.epoch")
        .ok_or_else(|| CheckpointError::MissingTensor("meta.epoch".into()))?
        .data
        .first()
        .copied()
        .unwrap_or(0.0) as usize;

    let mut model = Detector::<f32>::new(config)
        .map_err(|e| CheckpointError::ConfigMismatch(e.to_string()))?;
    let mut state = Vec::new();
    model.collect_state(&mut state);
    for (name, tensor) in state {
        let entry = map
            .remove(&name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
        let shape = tensor.shape();
        let dims: Vec<u64> = shape.iter().map(|&d| d as u64).collect();
        if entry.dims != dims {
            return Err(CheckpointError::ShapeMismatch(name));
        }
        *tensor = Tensor::from_vec(shape, entry.data)
            .map_err(|_| CheckpointError::ShapeMismatch(name.clone()))?;
    }

    let mut opt = Sgd::new(momentum, weight_decay);
    let buffer_names: Vec<String> = map
        .keys()
        .filter(|k| k.starts_with("opt.m."))
        .cloned()
        .collect();
    for key in buffer_names {
        let entry = map.remove(&key).unwrap();
        opt.restore(&key["opt.m.".len()..], entry.data);
    }
    if let Some(name) = map.keys().next() {
        return Err(CheckpointError::UnknownTensor(name.clone()));
    }
    Ok((model, opt, epoch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ffpf_core::tape::{Mode, Tape};

    fn forward_logits(model: &mut Detector<f32>) -> Vec<f32> {
        let mut rng = ffpf_core::rng::Rng::new(5);
        let img = Tensor::from_fn([1, 3, 64, 64], |_, _, _, _| rng.uniform() as f32);
        let mut tape = Tape::new();
        let id = tape.leaf(img);
        let out = model.forward(&mut tape, id, Mode::Eval).unwrap();
        tape.value(out[0].0).data().to_vec()
    }

    #[test]
    fn round_trip_preserves_forward_bit_exactly() {
        let config = ModelConfig::tiny();
        let mut model = Detector::<f32>::new(config.clone()).unwrap();
        let before = forward_logits(&mut model);
        let path = std::env::temp_dir().join("ffpf_ckpt_roundtrip.bin");
        let opt = Sgd::new(0.9, 1e-4);
        save_checkpoint(&path, &mut model, &opt, 7).unwrap();
        let (mut loaded, _opt, epoch) =
            load_checkpoint(&path, config, 0.9, 1e-4).unwrap();
        assert_eq!(epoch, 7);
        let after = forward_logits(&mut loaded);
        assert_eq!(before, after);
        let _ = fs::remove_file(&path);
    }

    #[test]
    fn corruption_yields_distinct_errors() {
        let config = ModelConfig::tiny();
        let mut model = Detector::<f32>::new(config.clone()).unwrap();
        let opt = Sgd::new(0.9, 1e-4);
        let path = std::env::temp_dir().join("ffpf_ckpt_corrupt.bin");
        save_checkpoint(&path, &mut model, &opt, 1).unwrap();
        let good = fs::read(&path).unwrap();

        // magic
        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_checkpoint(&path, config.clone(), 0.9, 1e-4),
            Err(CheckpointError::BadMagic)
        ));

        // version
        let mut bad = good.clone();
        bad[4] = 9;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_checkpoint(&path, config.clone(), 0.9, 1e-4),
            Err(CheckpointError::BadVersion(_))
        ));

        // payload flip -> checksum
        let mut bad = good.clone();
        let mid = good.len() / 2;
        bad[mid] ^= 0xff;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_checkpoint(&path, config.clone(), 0.9, 1e-4),
            Err(CheckpointError::ChecksumMismatch { .. })
        ));

        // truncation
        fs::write(&path, &good[..good.len() - 9]).unwrap();
        let err = match load_checkpoint(&path, config.clone(), 0.9, 1e-4) {
            Err(e) => e,
            Ok(_) => panic!("truncated checkpoint accepted"),
        };
        assert!(matches!(
            err,
            CheckpointError::ChecksumMismatch { .. } | CheckpointError::Truncated
        ));

        // config mismatch
        fs::write(&path, &good).unwrap();
        let other = ModelConfig {
            fu_enabled: false,
            ..ModelConfig::tiny()
        };
        assert!(matches!(
            load_checkpoint(&path, other, 0.9, 1e-4),
            Err(CheckpointError::ConfigMismatch(_))
        ));

        // distinct exit codes per variant
        let codes = [
            error_code(&CheckpointError::BadMagic),
            error_code(&CheckpointError::BadVersion(2)),
            error_code(&CheckpointError::Truncated),
            error_code(&CheckpointError::ChecksumMismatch { stored: 0, computed: 1 }),
            error_code(&CheckpointError::ConfigMismatch(String::new())),
            error_code(&CheckpointError::MissingTensor(String::new())),
        ];
        let unique: std::collections::BTreeSet<i32> = codes.iter().copied().collect();
        assert_eq!(unique.len(), codes.len());
        let _ = fs::remove_file(&path);
    }
}
