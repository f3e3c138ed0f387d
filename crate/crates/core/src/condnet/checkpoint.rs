//! Binary checkpoint: magic, format version, embedded model config (JSON),
//! then every parameter as `name, shape, f64 little-endian data`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::config::ModelConfig;
use super::model::RegistrationModel;
use crate::autograd::{Array, ParamStore};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CONDREG\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &RegistrationModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_all(&mut w, model).map_err(|e| Error::io(path, e))
}

fn write_all(w: &mut impl Write, model: &RegistrationModel) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    let config = serde_json::to_vec(model.config()).map_err(std::io::Error::other)?;
    w.write_u64::<LittleEndian>(config.len() as u64)?;
    w.write_all(&config)?;
    let p = model.params();
    w.write_u32::<LittleEndian>(p.len() as u32)?;
    for id in p.ids() {
        let name = p.name(id).as_bytes();
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name)?;
        let arr = p.get(id);
        w.write_u32::<LittleEndian>(arr.shape().len() as u32)?;
        for &d in arr.shape() {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for &v in arr.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<RegistrationModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |reason: String| Error::format(path, reason);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| bad(format!("truncated header: {e}")))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| bad(e.to_string()))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "checkpoint format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let config: ModelConfig = {
        let n = r
            .read_u64::<LittleEndian>()
            .map_err(|e| bad(e.to_string()))? as usize;
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|e| bad(e.to_string()))?;
        serde_json::from_slice(&buf).map_err(|e| bad(format!("embedded config: {e}")))?
    };
    let params = read_params(&mut r).map_err(|e| bad(format!("parameter block: {e}")))?;
    RegistrationModel::from_parts(config, params).map_err(|e| bad(e.to_string()))
}

fn read_params(r: &mut impl Read) -> std::io::Result<ParamStore> {
    let count = r.read_u32::<LittleEndian>()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let n = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(std::io::Error::other)?;
        let nd = r.read_u32::<LittleEndian>()? as usize;
        let shape = (0..nd)
            .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut data = vec![0.0; len];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        store.add(name, Array::new(shape, data));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condnet::{build_variant, Conditioning};

    fn tiny() -> RegistrationModel {
        build_variant(ModelConfig {
            levels: 2,
            blocks_per_level: 1,
            conv_filters: 4,
            latent_dim: 8,
            dims: 2,
            conditioning: Conditioning::CirDm,
            init_seed: 5,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_weights_and_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = tiny();
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.params(), model.params());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&tiny(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99;
        std::fs::write(&path, bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("version")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&tiny(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
