use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    #[serde(default = "default_span")]
    pub span_length: usize,
    #[serde(default = "default_ratio")]
    pub mask_ratio: f64,
}

fn default_span() -> usize {
    10
}
fn default_ratio() -> f64 {
    0.15
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            span_length: default_span(),
            mask_ratio: default_ratio(),
        }
    }
}

/// Temporal mask shared by every channel of a segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub len: usize,
    pub span_length: usize,
    /// Sorted span starts; spans are `[s, s + span_length)`.
    pub starts: Vec<usize>,
    pub mask: Vec<bool>,
}

impl MaskPlan {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Zeroes masked positions in a channel-major `[C×len]` buffer.
    pub fn apply<T: Copy + Default>(&self, samples: &mut [T]) {
        for chunk in samples.chunks_mut(self.len) {
            for (v, &m) in chunk.iter_mut().zip(&self.mask) {
                if m {
                    *v = T::default();
                }
            }
        }
    }
}

/// Number of spans for a given length, span, and ratio.
pub fn span_count(len: usize, span_length: usize, mask_ratio: f64) -> usize {
    (mask_ratio * len as f64 / span_length as f64 + 1e-9).floor() as usize
}

/// Draws `⌊ratio·len/span⌋` non-overlapping spans, uniformly over all valid
/// placements. Sorted distinct slots `q_i` from `0..len − n·span + n` map to
/// starts `q_i + i·(span − 1)`.
pub fn sample_mask(len: usize, span_length: usize, mask_ratio: f64, rng: &mut Rng) -> Result<MaskPlan> {
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(Error::Contract(format!("mask ratio {mask_ratio} must lie in (0, 1)")));
    }
    if span_length == 0 || span_length > len {
        return Err(Error::Contract(format!(
            "span length {span_length} must be in 1..={len}"
        )));
    }
    let n = span_count(len, span_length, mask_ratio);
    if n == 0 {
        return Err(Error::Contract(format!(
            "ratio {mask_ratio} masks no complete span of {span_length} in {len} samples"
        )));
    }
    if n * span_length > len {
        return Err(Error::Contract(format!(
            "{n} spans of {span_length} do not fit in {len} samples"
        )));
    }
    let slots = len - n * span_length + n;
    let mut q = index::sample(rng, slots, n).into_vec();
    q.sort_unstable();
    let starts: Vec<usize> = q.iter().enumerate().map(|(i, &q)| q + i * (span_length - 1)).collect();
    let mut mask = vec![false; len];
    for &s in &starts {
        mask[s..s + span_length].iter_mut().for_each(|m| *m = true);
    }
    Ok(MaskPlan {
        len,
        span_length,
        starts,
        mask,
    })
}
