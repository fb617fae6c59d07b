//! Activation dump layout.
//!
//! ```text
//! offset 0   magic    b"ACTV"
//! offset 4   version  u32 LE
//! offset 8   len      u64 LE  (header payload length in bytes)
//! offset 16  header payload (len bytes)
//! then       f32 LE activations, ordered layer, head, example, token, dim
//! ```
//!
//! Header payload, all integers little-endian, strings as `u32` byte
//! length followed by UTF-8:
//!
//! ```text
//! model_name     str
//! capture_point  str
//! n_layers       u32
//! n_heads        u32
//! head_dim       u32
//! n_examples     u32
//! token_mode     u8   (0 = LAST, 1 = ALL)
//! dtype          u8   (0 = F32LE)
//! example_ids    n_examples × str
//! token_counts   n_examples × u32   (ALL mode only)
//! n_attributes   u32
//! attributes     n_attributes × (key str, value str)
//! ```

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ACTV";
pub const VERSION: u32 = 1;
/// Magic, version and payload length.
pub const PREFIX_LEN: usize = 16;
pub const VALUE_BYTES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadCoord {
    pub layer: usize,
    pub head: usize,
}

impl HeadCoord {
    pub const fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }
}

impl core::fmt::Display for HeadCoord {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "UPPERCASE"))]
pub enum TokenMode {
    Last,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DType {
    #[default]
    F32LE,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DumpHeader {
    pub model_name: String,
    /// Where in the model the vectors were captured.
    pub capture_point: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub token_mode: TokenMode,
    pub dtype: DType,
    pub example_ids: Vec<String>,
    /// Per-example token counts; present only in ALL mode.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub token_counts: Option<Vec<usize>>,
    /// Free-form provenance (template flags, chat formatting, ...).
    #[cfg_attr(feature = "serde", serde(default))]
    pub attributes: Vec<(String, String)>,
}

impl DumpHeader {
    pub fn n_examples(&self) -> usize {
        self.example_ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidHeader(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.head_dim == 0 {
            return bad(format!(
                "geometry must be positive, got {}x{}x{}",
                self.n_layers, self.n_heads, self.head_dim
            ));
        }
        if self.example_ids.is_empty() {
            return bad("no examples".into());
        }
        let mut seen = BTreeSet::new();
        for id in &self.example_ids {
            if !seen.insert(id.as_str()) {
                return bad(format!("duplicate example id {id:?}"));
            }
        }
        match (self.token_mode, &self.token_counts) {
            (TokenMode::Last, None) => {}
            (TokenMode::Last, Some(_)) => return bad("token_counts present in LAST mode".into()),
            (TokenMode::All, None) => return bad("token_counts missing in ALL mode".into()),
            (TokenMode::All, Some(c)) => {
                if c.len() != self.n_examples() {
                    return bad(format!(
                        "{} token counts for {} examples",
                        c.len(),
                        self.n_examples()
                    ));
                }
                if let Some(i) = c.iter().position(|&t| t == 0) {
                    return bad(format!("example {i} has zero tokens"));
                }
            }
        }
        for v in [self.n_layers, self.n_heads, self.head_dim, self.n_examples()] {
            if u32::try_from(v).is_err() {
                return bad(format!("count {v} exceeds u32"));
            }
        }
        Ok(())
    }

    pub fn check_coord(&self, coord: HeadCoord) -> Result<()> {
        if coord.layer >= self.n_layers {
            return Err(Error::OutOfRange {
                what: "layer",
                index: coord.layer,
                limit: self.n_layers,
            });
        }
        if coord.head >= self.n_heads {
            return Err(Error::OutOfRange {
                what: "head",
                index: coord.head,
                limit: self.n_heads,
            });
        }
        Ok(())
    }

    pub fn coords(&self) -> impl Iterator<Item = HeadCoord> + '_ {
        (0..self.n_layers).flat_map(move |l| (0..self.n_heads).map(move |h| HeadCoord::new(l, h)))
    }

    pub fn example_index(&self, id: &str) -> Option<usize> {
        self.example_ids.iter().position(|e| e == id)
    }

    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Rows stored for one example.
    pub fn rows_of(&self, example: usize) -> usize {
        match &self.token_counts {
            Some(c) => c[example],
            None => 1,
        }
    }

    /// Rows stored per head across all examples.
    pub fn total_rows(&self) -> usize {
        match &self.token_counts {
            Some(c) => c.iter().sum(),
            None => self.n_examples(),
        }
    }

    /// First row of each example within a head block.
    pub fn row_starts(&self) -> Vec<usize> {
        let mut acc = 0;
        (0..self.n_examples())
            .map(|e| {
                let s = acc;
                acc += self.rows_of(e);
                s
            })
            .collect()
    }

    pub fn head_block_bytes(&self) -> u64 {
        (self.total_rows() * self.head_dim * VALUE_BYTES) as u64
    }

    pub fn data_bytes(&self) -> u64 {
        (self.n_layers * self.n_heads) as u64 * self.head_block_bytes()
    }

    /// Byte offset, relative to the start of the data section, of the row
    /// `row` (counted across all examples) inside the block of `coord`.
    pub fn row_offset(&self, coord: HeadCoord, row: usize) -> u64 {
        let block = (coord.layer * self.n_heads + coord.head) as u64;
        block * self.head_block_bytes() + (row * self.head_dim * VALUE_BYTES) as u64
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_str(&mut out, &self.model_name);
        put_str(&mut out, &self.capture_point);
        for v in [self.n_layers, self.n_heads, self.head_dim, self.n_examples()] {
            put_u32(&mut out, v as u32);
        }
        out.push(match self.token_mode {
            TokenMode::Last => 0,
            TokenMode::All => 1,
        });
        out.push(match self.dtype {
            DType::F32LE => 0,
        });
        for id in &self.example_ids {
            put_str(&mut out, id);
        }
        if let Some(c) = &self.token_counts {
            for &t in c {
                put_u32(&mut out, t as u32);
            }
        }
        put_u32(&mut out, self.attributes.len() as u32);
        for (k, v) in &self.attributes {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out
    }

    /// Magic, version, payload length and payload.
    pub fn encode(&self) -> Vec<u8> {
        let payload = self.encode_payload();
        let mut out = Vec::with_capacity(PREFIX_LEN + payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode_payload(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let model_name = r.str()?;
        let capture_point = r.str()?;
        let n_layers = r.u32()? as usize;
        let n_heads = r.u32()? as usize;
        let head_dim = r.u32()? as usize;
        let n_examples = r.u32()? as usize;
        let token_mode = match r.u8()? {
            0 => TokenMode::Last,
            1 => TokenMode::All,
            m => return Err(Error::CorruptHeader(format!("unknown token mode {m}"))),
        };
        let dtype = match r.u8()? {
            0 => DType::F32LE,
            d => return Err(Error::CorruptHeader(format!("unknown dtype {d}"))),
        };
        // Each id needs at least its length prefix.
        if n_examples > r.remaining() / 4 {
            return Err(Error::CorruptHeader("truncated".into()));
        }
        let example_ids = (0..n_examples).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let token_counts = match token_mode {
            TokenMode::Last => None,
            TokenMode::All => Some(
                (0..n_examples)
                    .map(|_| r.u32().map(|v| v as usize))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        let n_attr = r.u32()? as usize;
        if n_attr > r.remaining() / 8 {
            return Err(Error::CorruptHeader("truncated".into()));
        }
        let attributes = (0..n_attr)
            .map(|_| Ok((r.str()?, r.str()?)))
            .collect::<Result<Vec<_>>>()?;
        if r.remaining() != 0 {
            return Err(Error::CorruptHeader(format!(
                "{} trailing bytes in header payload",
                r.remaining()
            )));
        }
        let header = Self {
            model_name,
            capture_point,
            n_layers,
            n_heads,
            head_dim,
            token_mode,
            dtype,
            example_ids,
            token_counts,
            attributes,
        };
        header
            .validate()
            .map_err(|e| Error::CorruptHeader(format!("{e}")))?;
        Ok(header)
    }

    /// Parses the fixed prefix, returning the payload length.
    pub fn decode_prefix(prefix: &[u8]) -> Result<u64> {
        if prefix.len() < 4 || prefix[..4] != MAGIC {
            return Err(Error::NotADump);
        }
        if prefix.len() < PREFIX_LEN {
            return Err(Error::CorruptHeader("truncated prefix".into()));
        }
        let version = u32::from_le_bytes(prefix[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        Ok(u64::from_le_bytes(prefix[8..16].try_into().unwrap()))
    }

    /// Decodes a header from the start of a dump.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let len = Self::decode_prefix(bytes)?;
        let end = PREFIX_LEN
            .checked_add(usize::try_from(len).map_err(|_| Error::CorruptHeader("length".into()))?)
            .ok_or_else(|| Error::CorruptHeader("length".into()))?;
        if bytes.len() < end {
            return Err(Error::CorruptHeader("truncated".into()));
        }
        Ok((Self::decode_payload(&bytes[PREFIX_LEN..end])?, end))
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.remaining() < n {
            return Err(Error::CorruptHeader("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::CorruptHeader("invalid utf-8".into()))
    }
}
