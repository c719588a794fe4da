//! Filtering, resampling, normalization, and segmentation of raw recordings.

pub mod filter;
pub mod pipeline;
pub mod signal;

pub use filter::{design_butterworth, Biquad, FilterKind, IirFilter};
pub use pipeline::{
    decimate, filter_and_decimate, normalize_per_subject, segment, FilterPreset, FilterSpec, ANTI_ALIAS_ORDER,
    NormStats, SEGMENT_LEN, TARGET_RATE, WINDOW_SECONDS,
};
pub use signal::{Modality, Segment, SignalRecord, EEG_CHANNELS};
