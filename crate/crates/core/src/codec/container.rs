//! DSR1 container framing.
//!
//! Little-endian layout: `"DSR1"` | version `u8` = 1 | variant `u8` | K `u8`
//! | qf `u8` | original width `u32` | original height `u32`, followed by three
//! sections `len u32 | payload` holding the DC stream, the AC magnitude
//! stream and the residual (or raw sign) stream.

use crate::error::{truncated, Error, Result};
use crate::neuralnet::Variant;

const MAGIC: &[u8; 4] = b"DSR1";
const VERSION: u8 = 1;
const BASELINE: u8 = 255;
const NO_POCS: u8 = 0x80;
pub const HEADER_LEN: usize = 16;

/// How the sign section of a stream was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignMode {
    /// Raw packed sign bits, no model involved.
    Baseline,
    /// Range-coded residual against the signs restored by this model.
    Retrieval { variant: Variant, k: usize, pocs: bool },
}

impl SignMode {
    fn variant_byte(self) -> u8 {
        match self {
            SignMode::Baseline => BASELINE,
            SignMode::Retrieval { variant, pocs, .. } => {
                variant.code() | if pocs { 0 } else { NO_POCS }
            }
        }
    }

    fn k_byte(self) -> Result<u8> {
        match self {
            SignMode::Baseline => Ok(0),
            SignMode::Retrieval { k, .. } => u8::try_from(k)
                .map_err(|_| Error::Config(format!("K = {k} does not fit the stream header"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub mode: SignMode,
    pub qf: u8,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub header: Header,
    pub dc: Vec<u8>,
    pub magnitudes: Vec<u8>,
    pub signs: Vec<u8>,
}

fn section_len(payload: &[u8]) -> Result<u32> {
    u32::try_from(payload.len())
        .map_err(|_| Error::Overflow(format!("{}-byte section", payload.len())))
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        let mut out = Vec::with_capacity(
            HEADER_LEN + 12 + self.dc.len() + self.magnitudes.len() + self.signs.len(),
        );
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(h.mode.variant_byte());
        out.push(h.mode.k_byte()?);
        out.push(h.qf);
        out.extend_from_slice(&h.width.to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        for s in [&self.dc, &self.magnitudes, &self.signs] {
            out.extend_from_slice(&section_len(s)?.to_le_bytes());
            out.extend_from_slice(s);
        }
        Ok(out)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let head = bytes.get(..HEADER_LEN).ok_or_else(|| truncated("stream header"))?;
        if &head[..4] != MAGIC {
            return Err(Error::Format("not a DSR1 stream".into()));
        }
        if head[4] != VERSION {
            return Err(Error::Format(format!("stream version {}", head[4])));
        }
        let mode = if head[5] == BASELINE {
            SignMode::Baseline
        } else {
            let variant = Variant::from_code(head[5] & !NO_POCS)
                .ok_or_else(|| Error::Format(format!("variant byte {}", head[5])))?;
            let k = usize::from(head[6]);
            if k == 0 || (variant == Variant::Pdsr && k != 1) {
                return Err(Error::Format(format!("{} with K = {k}", variant.name())));
            }
            SignMode::Retrieval {
                variant,
                k,
                pocs: head[5] & NO_POCS == 0,
            }
        };
        let qf = head[7];
        if !(1..=100).contains(&qf) {
            return Err(Error::Format(format!("quality factor {qf}")));
        }
        let width = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes"));
        let height = u32::from_le_bytes(head[12..16].try_into().expect("4 bytes"));
        if width == 0 || height == 0 {
            return Err(Error::Format(format!("image size {width}x{height}")));
        }

        let mut pos = HEADER_LEN;
        let mut sections: [Vec<u8>; 3] = Default::default();
        for s in sections.iter_mut() {
            let len = bytes
                .get(pos..pos + 4)
                .ok_or_else(|| truncated("section length"))?;
            let len = u32::from_le_bytes(len.try_into().expect("4 bytes")) as usize;
            pos += 4;
            let end = pos
                .checked_add(len)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| truncated("section payload"))?;
            *s = bytes[pos..end].to_vec();
            pos = end;
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last section",
                bytes.len() - pos
            )));
        }
        let [dc, magnitudes, signs] = sections;
        Ok(Container {
            header: Header {
                mode,
                qf,
                width,
                height,
            },
            dc,
            magnitudes,
            signs,
        })
    }
}
