//! On-disk datasets, labels, cross-validation folds, masking, and synthetic data.

pub mod folds;
pub mod io;
pub mod labels;
pub mod manifest;
pub mod mask;
pub mod synth;
pub mod table;

pub use folds::{make_folds, Fold, FoldPlan};
pub use io::{read_signal, write_signal, SignalHeader};
pub use labels::{binarize_labels, threshold_ratings, LabelSet, Target};
pub use manifest::{load_manifest, Manifest, ManifestEntry, TrialFiles};
pub use mask::{sample_mask, MaskConfig, MaskPlan};
pub use synth::{generate_synthetic, MANIFEST_FILE, TRUTH_FILE, Informative, SyntheticSpec, SyntheticTruth, TrialTruth};
pub use table::{NormTable, SegmentKey, SegmentTable};
