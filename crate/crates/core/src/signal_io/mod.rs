//! Signal records, resampling, windowing and synthetic data.

mod manifest;
mod record;
mod resample;
mod synth;
mod window;

pub use manifest::{load_dataset, manifest_to_csv, parse_manifest, record_path, write_dataset, MANIFEST_HEADER};
pub use record::{read_record, write_record, SignalRecord, RECORD_MAGIC, RECORD_VERSION};
pub use resample::{resample, CANONICAL_RATE_HZ};
pub use synth::{channel_labels, synth_dataset, BackgroundSpec, EventSpec, ManifestEntry, SynthSpec};
pub use window::{window, window_start, Mask, Window, WINDOW_SAMPLES, WINDOW_SECONDS};

/// Standard 19-electrode 10-20 montage.
pub const MONTAGE_10_20: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1",
    "O2",
];
