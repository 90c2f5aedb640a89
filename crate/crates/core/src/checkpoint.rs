//! Binary checkpoints.
//!
//! Layout:
//!
//! ```text
//! b"SIGRNN1\n"              magic
//! u8                         format version
//! u32 LE + UTF-8 bytes       ModelConfig as TOML
//! f64 LE × n                 parameters in declaration order
//! u8                         0 = no optimizer state, 1 = Adam follows
//! [u64 LE step, f64 LE × n first moments, f64 LE × n second moments]
//! ```

use std::path::Path;

use crate::cells::{Model, ModelConfig, ParamSet};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::training::AdamState;

pub const MAGIC: &[u8; 8] = b"SIGRNN1\n";
pub const FORMAT_VERSION: u8 = 1;

fn put_params(out: &mut Vec<u8>, params: &ParamSet) {
    for (_, m) in params.iter() {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode(model: &Model, adam: Option<&AdamState>) -> Result<Vec<u8>> {
    let config = toml::to_string(model.config())
        .map_err(|e| Error::Checkpoint(format!("cannot serialize config: {e}")))?;
    let len = u32::try_from(config.len())
        .map_err(|_| Error::Checkpoint("config too large".into()))?;
    let mut out = Vec::with_capacity(16 + config.len() + 8 * model.params().scalar_count());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    put_params(&mut out, model.params());
    match adam {
        None => out.push(0),
        Some(state) => {
            if !state.m.same_layout(model.params()) || !state.v.same_layout(model.params()) {
                return Err(Error::Checkpoint("optimizer state does not match model".into()));
            }
            out.push(1);
            out.extend_from_slice(&state.step.to_le_bytes());
            put_params(&mut out, &state.m);
            put_params(&mut out, &state.v);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!(
                "truncated: {what} needs {n} bytes at offset {}, file has {}",
                self.at,
                self.bytes.len()
            )));
        };
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn params(&mut self, config: &ModelConfig, what: &str) -> Result<ParamSet> {
        let mut params = ParamSet::new();
        for (name, rows, cols) in Model::layout(config) {
            let raw = self.take(8 * rows * cols, &format!("{what} {name}"))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.push(name, Matrix::from_vec(rows, cols, values)?);
        }
        Ok(params)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Model, Option<AdamState>)> {
    let mut cur = Cursor { bytes, at: 0 };
    if cur.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint".into()));
    }
    let version = cur.take(1, "version")?[0];
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let len = u32::from_le_bytes(cur.take(4, "config length")?.try_into().expect("4 bytes")) as usize;
    let text = std::str::from_utf8(cur.take(len, "config")?)
        .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let config: ModelConfig =
        toml::from_str(text).map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
    config.validate()?;
    let params = cur.params(&config, "parameter")?;
    let model = Model::from_params(config, params)?;
    let adam = match cur.take(1, "optimizer flag")?[0] {
        0 => None,
        1 => {
            let step = u64::from_le_bytes(cur.take(8, "optimizer step")?.try_into().expect("8 bytes"));
            let m = cur.params(model.config(), "first moment")?;
            let v = cur.params(model.config(), "second moment")?;
            Some(AdamState { m, v, step })
        }
        f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
    };
    if cur.at != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() - cur.at
        )));
    }
    Ok((model, adam))
}

pub fn save(path: &Path, model: &Model, adam: Option<&AdamState>) -> Result<()> {
    std::fs::write(path, encode(model, adam)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, Option<AdamState>)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
