//! DSRW checkpoint files.
//!
//! Layout: `"DSRW"` | version `u8` = 1 | variant `u8` | K `u8` | parameters
//! as little-endian `f32` in flat order (see [`ModelParams`]). The variant
//! byte is 0 (PDSR), 1 (RDSR) or 2 (FDSR); bit 7 is set for models trained
//! with the projection replaced by the identity.

use std::fs;
use std::path::Path;

use super::model::{ModelParams, Variant};
use crate::error::{truncated, Error, Result};

const MAGIC: &[u8; 4] = b"DSRW";
const VERSION: u8 = 1;
const NO_POCS: u8 = 0x80;
pub(crate) const HEADER_LEN: usize = 7;

pub fn write_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    params.validate()?;
    let k = u8::try_from(params.k)
        .map_err(|_| Error::Config(format!("K = {} does not fit the header", params.k)))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * params.param_count());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(params.variant.code() | if params.pocs { 0 } else { NO_POCS });
    out.push(k);
    for v in params.flatten() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let header = bytes.get(..HEADER_LEN).ok_or_else(|| truncated("checkpoint header"))?;
    if &header[..4] != MAGIC {
        return Err(Error::Format("not a DSRW checkpoint".into()));
    }
    if header[4] != VERSION {
        return Err(Error::Format(format!("checkpoint version {}", header[4])));
    }
    let variant = Variant::from_code(header[5] & !NO_POCS)
        .ok_or_else(|| Error::Format(format!("variant byte {}", header[5])))?;
    let mut params = ModelParams::zeros(variant, usize::from(header[6]))
        .map_err(|e| Error::Format(e.to_string()))?;
    params.pocs = header[5] & NO_POCS == 0;

    let n = params.param_count();
    let body = &bytes[HEADER_LEN..];
    if body.len() < 4 * n {
        return Err(truncated("checkpoint parameters"));
    }
    if body.len() > 4 * n {
        return Err(Error::Format(format!(
            "{} trailing bytes after parameters",
            body.len() - 4 * n
        )));
    }
    let flat: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    params.assign_flat(&flat)?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    parse_checkpoint(&fs::read(path)?)
}
