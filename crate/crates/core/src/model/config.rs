use serde::{Deserialize, Serialize};

use crate::dsp::SEGMENT_LEN;
use crate::error::{Error, Result};

/// Architecture of one single-modality model. Defaults are the full-size
/// configuration; strides above 1 shorten the token sequence for small runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub segment_len: usize,
    pub kernels: Vec<usize>,
    pub conv_channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    /// Feed-forward inner width; 4 × hidden when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ff_size: Option<usize>,
    pub transformer_dropout: f64,
    pub mvp_hidden: Vec<usize>,
    pub emotion_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            segment_len: SEGMENT_LEN,
            kernels: vec![65, 33, 17],
            conv_channels: vec![64, 128, 256],
            strides: vec![1, 1, 1],
            hidden_size: 256,
            num_layers: 2,
            num_heads: 2,
            ff_size: None,
            transformer_dropout: 0.1,
            mvp_hidden: vec![128],
            emotion_hidden: vec![64],
        }
    }
}

impl ModelConfig {
    pub fn ff(&self) -> usize {
        self.ff_size.unwrap_or(4 * self.hidden_size)
    }

    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    /// Tokens after the encoder, excluding CLS.
    pub fn tokens(&self) -> usize {
        self.segment_len / self.total_stride().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.kernels.is_empty()
            || self.kernels.len() != self.conv_channels.len()
            || self.kernels.len() != self.strides.len()
        {
            return bad("model kernels, conv_channels, and strides must be equal-length and non-empty".into());
        }
        if self.kernels.iter().any(|k| k % 2 == 0) {
            return bad(format!("model kernels {:?} must all be odd", self.kernels));
        }
        if self.strides.contains(&0) || self.conv_channels.contains(&0) {
            return bad("model strides and conv_channels must be positive".into());
        }
        if self.segment_len == 0 || self.segment_len % self.total_stride() != 0 {
            return bad(format!(
                "segment_len {} must be a positive multiple of the total stride {}",
                self.segment_len,
                self.total_stride()
            ));
        }
        if self.hidden_size == 0 || self.num_heads == 0 || self.hidden_size % self.num_heads != 0 {
            return bad(format!(
                "hidden_size {} must be a positive multiple of num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.num_layers == 0 || self.ff() == 0 {
            return bad("model needs at least one transformer layer and a positive ff_size".into());
        }
        if !(0.0..1.0).contains(&self.transformer_dropout) {
            return bad(format!("transformer_dropout {} must be in [0, 1)", self.transformer_dropout));
        }
        if self.emotion_hidden.is_empty() {
            return bad("emotion_hidden needs at least one layer to expose penultimate features".into());
        }
        Ok(())
    }
}
