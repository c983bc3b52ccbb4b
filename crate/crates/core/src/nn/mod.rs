//! Small dense networks, the Gaussian policy built on them, and Adam.

mod adam;
mod gemm;
mod mlp;
mod policy;

pub use adam::Adam;
pub use mlp::{gradient_penalty, LayerParams, MlpSpec, PenaltyStats, Tape};
pub use policy::{GaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WQPV";
const HEADER_LEN: usize = 16;

/// Flat parameter vector of a network or policy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Little-endian f32 payload behind a header carrying the layer count
    /// and a hash of `widths`, so a file cannot be loaded into the wrong
    /// architecture.
    pub fn to_bytes(&self, widths: &[usize]) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.0.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(widths.len().saturating_sub(1) as u32).to_le_bytes());
        out.extend_from_slice(&widths_hash(widths).to_le_bytes());
        for v in &self.0 {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], widths: &[usize]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing parameter header".into()));
        }
        let layers = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let hash = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        if layers != widths.len().saturating_sub(1) || hash != widths_hash(widths) {
            return Err(Error::Format(format!(
                "parameters were saved for a different architecture than {widths:?}"
            )));
        }
        let payload = &bytes[HEADER_LEN..];
        if payload.len() % 4 != 0 {
            return Err(Error::Format("truncated parameter payload".into()));
        }
        Ok(Self(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        ))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// FNV-1a over the widths as little-endian u64.
fn widths_hash(widths: &[usize]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in widths {
        for b in (*w as u64).to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}
