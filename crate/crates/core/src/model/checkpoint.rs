//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic "RPCK" | version u8 | config_len u32 | config JSON
//! array_count u32 | per array: name_len u16, name, ndim u8, dims u64…, f64 data
//! ```

use std::path::Path;

use super::{ClassifierState, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RPCK";
pub const CHECKPOINT_VERSION: u8 = 1;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(corrupt("file is truncated"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl ClassifierState {
    pub fn to_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        let mut out = Vec::with_capacity(16 + config.len() + self.params.len() * 8);
        out.extend_from_slice(MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        let specs = self.layout.specs();
        out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
        for spec in specs {
            out.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
            out.extend_from_slice(spec.name.as_bytes());
            out.push(spec.shape.len() as u8);
            for &dim in &spec.shape {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for v in &self.params[spec.range()] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(4)? != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = r.u8()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let len = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(len)?)
            .map_err(|e| corrupt(format!("bad config header: {e}")))?;
        config
            .validate()
            .map_err(|e| corrupt(format!("invalid config header: {e}")))?;
        let layout = super::Layout::new(&config);
        let count = r.u32()? as usize;
        if count != layout.specs().len() {
            return Err(corrupt(format!(
                "{count} parameter arrays, expected {}",
                layout.specs().len()
            )));
        }
        let mut params = Vec::with_capacity(layout.total());
        for spec in layout.specs() {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt("parameter name is not UTF-8"))?;
            if name != spec.name {
                return Err(corrupt(format!("found array {name:?}, expected {:?}", spec.name)));
            }
            let ndim = r.u8()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape != spec.shape {
                return Err(corrupt(format!(
                    "array {name} has shape {shape:?}, expected {:?}",
                    spec.shape
                )));
            }
            let data = r.take(spec.len() * 8)?;
            params.extend(
                data.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            );
        }
        if !r.buf.is_empty() {
            return Err(corrupt(format!("{} trailing bytes", r.buf.len())));
        }
        ClassifierState::from_parts(config, params)
    }

    /// Writes via a temporary file and rename, so an existing checkpoint at
    /// `path` is never left half-written.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        std::fs::rename(&tmp, path)
            .map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks every config field except the seed against `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let state = Self::load(path)?;
        let c = &state.config;
        let fields = [
            ("vocab_size", c.vocab_size, expected.vocab_size),
            ("pad_len", c.pad_len, expected.pad_len),
            ("embed_dim", c.embed_dim, expected.embed_dim),
            ("num_layers", c.num_layers, expected.num_layers),
            ("num_heads", c.num_heads, expected.num_heads),
            ("feedforward_dim", c.feedforward_dim, expected.feedforward_dim),
            ("num_relations", c.num_relations, expected.num_relations),
        ];
        for (name, found, want) in fields {
            if found != want {
                return Err(corrupt(format!(
                    "{name} mismatch: checkpoint has {found}, expected {want}"
                )));
            }
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            pad_len: 6,
            embed_dim: 4,
            num_layers: 2,
            num_heads: 2,
            feedforward_dim: 8,
            num_relations: 3,
            dropout_rate: 0.1,
            seed: 11,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let state = ClassifierState::init(cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        state.save(&p).unwrap();
        let back = ClassifierState::load(&p).unwrap();
        assert_eq!(back.config(), state.config());
        let bits = |s: &ClassifierState| s.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&state));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = ClassifierState::init(cfg()).unwrap().to_bytes();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                ClassifierState::from_bytes(&bytes[..cut]),
                Err(Error::Checkpoint(_))
            ));
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = ClassifierState::init(cfg()).unwrap().to_bytes();
        bytes[4] = 99;
        let err = ClassifierState::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn mismatched_relations_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        ClassifierState::init(cfg()).unwrap().save(&p).unwrap();
        let expected = ModelConfig {
            num_relations: 7,
            ..cfg()
        };
        let err = ClassifierState::load_expecting(&p, &expected).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
        assert!(err.to_string().contains("num_relations"), "{err}");
    }
}
