use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{Architecture, ModelConfig, NexusModel};
use crate::rng::Rng;
use crate::tensor::{read_u32, Tensor};

const CHECKPOINT_MAGIC: &[u8; 4] = b"NXCK";
const CHECKPOINT_VERSION: u32 = 1;

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| Error::Format("string too long".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
}

/// `NXCK`, u32 version, name, 32-byte digest, model config text, u32
/// tensor count, then every registry tensor (buffers included) as `NXT1`.
pub fn write_checkpoint<W: Write>(model: &NexusModel, w: &mut W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_str(w, model.name())?;
    w.write_all(&model.digest())?;
    write_str(w, &model.config().to_kv())?;
    let params = model.params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        p.value.write_to(w)?;
    }
    Ok(())
}

pub fn save_checkpoint(model: &NexusModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Header {
    name: String,
    digest: [u8; 32],
    config: String,
}

fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version(format!("checkpoint format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let name = read_str(r)?;
    let mut digest = [0u8; 32];
    r.read_exact(&mut digest)?;
    let config = read_str(r)?;
    Ok(Header { name, digest, config })
}

fn read_params<R: Read>(model: &mut NexusModel, r: &mut R) -> Result<()> {
    let count = read_u32(r)? as usize;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(Error::Version(format!("checkpoint holds {count} tensors, model has {}", params.len())));
    }
    for p in params.iter_mut() {
        let t = Tensor::read_from(r)?;
        if t.shape() != p.value.shape() {
            return Err(Error::Version(format!("{}: stored {:?}, model {:?}", p.name, t.shape(), p.value.shape())));
        }
        p.value = t;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(())
}

/// Rebuilds the stored architecture and loads its parameters.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<NexusModel> {
    let header = read_header(r)?;
    let arch: Architecture = header.name.parse().map_err(|_| {
        Error::Version(format!("checkpoint names unknown architecture {:?}", header.name))
    })?;
    let config = ModelConfig::from_kv(&header.config)?;
    let mut model = NexusModel::build(arch, &config, &mut Rng::new(0))?;
    if model.digest() != header.digest {
        return Err(Error::Version("checkpoint digest does not match its architecture and config".into()));
    }
    read_params(&mut model, r)?;
    Ok(model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NexusModel> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

/// Loads parameters into an existing model; the stored digest must match.
pub fn load_into(model: &mut NexusModel, path: impl AsRef<Path>) -> Result<()> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r)?;
    if header.digest != model.digest() {
        return Err(Error::Version(format!(
            "checkpoint for {:?} does not fit model {:?} (digest mismatch)",
            header.name,
            model.name()
        )));
    }
    read_params(model, &mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;

    fn model(arch: Architecture, maps: usize, seed: u64) -> NexusModel {
        let cfg = ModelConfig { hidden_maps: maps, ..ModelConfig::default() };
        NexusModel::build(arch, &cfg, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let m = model(Architecture::TLinear, 3, 1);
        let a = dir.path().join("a.nxck");
        let b = dir.path().join("b.nxck");
        save_checkpoint(&m, &a).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        save_checkpoint(&loaded, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(&std::fs::read(&a).unwrap()[..4], b"NXCK");
        for (p, q) in m.params().iter().zip(loaded.params()) {
            assert_eq!(p.value, q.value);
        }
    }

    #[test]
    fn forward_identical_after_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = model(Architecture::Ln, 2, 5);
        let path = dir.path().join("m.nxck");
        save_checkpoint(&m, &path).unwrap();
        let mut loaded = load_checkpoint(&path).unwrap();
        let mut rng = Rng::new(3);
        let big = Tensor::zeros(&[2, 4, 33, 33]).unwrap().gaussian_fill(&mut rng, 1.0).unwrap();
        let small = Tensor::zeros(&[2, 4, 15, 15]).unwrap().gaussian_fill(&mut rng, 1.0).unwrap();
        let a = m.forward(&big, &small, Mode::Infer, &mut Rng::new(0)).unwrap();
        let b = loaded.forward(&big, &small, Mode::Infer, &mut Rng::new(0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_architecture_is_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nxck");
        save_checkpoint(&model(Architecture::Ln, 2, 0), &path).unwrap();
        let mut other = model(Architecture::Tpn, 2, 0);
        assert!(matches!(load_into(&mut other, &path), Err(Error::Version(_))));
        let mut wider = model(Architecture::Ln, 3, 0);
        assert!(matches!(load_into(&mut wider, &path), Err(Error::Version(_))));
        let mut same = model(Architecture::Ln, 2, 9);
        load_into(&mut same, &path).unwrap();
    }

    #[test]
    fn tampered_digest_rejected() {
        let mut bytes = Vec::new();
        write_checkpoint(&model(Architecture::Ln, 2, 0), &mut bytes).unwrap();
        // magic + version + (len + "LN") puts the digest at offset 14.
        bytes[14] ^= 1;
        assert!(matches!(read_checkpoint(&mut &bytes[..]), Err(Error::Version(_))));
        assert!(matches!(read_checkpoint(&mut &b"NOPE"[..]), Err(Error::Format(_))));
    }
}
