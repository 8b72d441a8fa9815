//! On-disk formats: run configuration, dataset manifests, detection files,
//! and checkpoints.

mod checkpoint;
mod config;
mod detections;
mod manifest;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{DataConfig, EvalConfig, ModelConfig, RunConfig, TrainConfig};
pub use detections::{format_detections, parse_detections};
pub use manifest::{
    format_manifest, parse_manifest, write_dataset, Dataset, ManifestEntry, IMAGE_DIR,
    MANIFEST_FILE, SPEC_FILE,
};

/// Box coordinate as text, rounded to 9 decimals. Boxes are held as center
/// and size, so full-precision corners would drift in the last digit on
/// every reload; at 9 decimals a parse-then-format cycle reproduces the text.
pub(crate) fn format_coord(v: f64) -> String {
    let s = format!("{v:.9}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    match s {
        "-0" | "" => "0".into(),
        _ => s.into(),
    }
}
