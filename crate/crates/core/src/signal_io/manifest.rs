//! Dataset directories: a `manifest.csv` plus `records/` and `masks/`.
//!
//! Each manifest row is `record_id,window_index,label,mask_path`. The record
//! for `record_id` lives at `records/<record_id>.eegr`; `mask_path` and the
//! record path are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::signal_io::{
    read_record, resample, window, write_record, ManifestEntry, Mask, SignalRecord, Window, CANONICAL_RATE_HZ,
};

pub const MANIFEST_HEADER: &str = "record_id,window_index,label,mask_path";

pub fn manifest_to_csv(entries: &[ManifestEntry]) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for e in entries {
        let label = e.label.map(|l| l.to_string()).unwrap_or_default();
        let mask = e.mask_path.as_deref().unwrap_or("");
        s.push_str(&format!("{},{},{},{}\n", e.record_id, e.window_index, label, mask));
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line == MANIFEST_HEADER) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::InvalidInput(format!(
                "manifest line {}: expected 4 columns, found {}",
                n + 1,
                cols.len()
            )));
        }
        let bad = |what: &str| Error::InvalidInput(format!("manifest line {}: bad {what}", n + 1));
        out.push(ManifestEntry {
            record_id: cols[0].to_string(),
            window_index: cols[1].parse().map_err(|_| bad("window_index"))?,
            label: if cols[2].is_empty() {
                None
            } else {
                Some(cols[2].parse().map_err(|_| bad("label"))?)
            },
            mask_path: (!cols[3].is_empty()).then(|| cols[3].to_string()),
        });
    }
    Ok(out)
}

pub fn record_path(dir: &Path, record_id: &str) -> PathBuf {
    dir.join("records").join(format!("{record_id}.eegr"))
}

/// Writes windows as single-window records plus masks and the manifest.
pub fn write_dataset(dir: &Path, windows: &[Window], entries: &[ManifestEntry]) -> Result<PathBuf> {
    for sub in ["records", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (w, e) in windows.iter().zip(entries) {
        write_record(&w.to_record()?, record_path(dir, &e.record_id))?;
        if let (Some(mask), Some(path)) = (&w.localization_mask, &e.mask_path) {
            let rec = SignalRecord::new(w.channel_labels.clone(), CANONICAL_RATE_HZ, mask.to_tensor())?;
            write_record(&rec, dir.join(path))?;
        }
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest_to_csv(entries)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads every manifest window, resampling records to 250 Hz as needed.
pub fn load_dataset(manifest: &Path) -> Result<Vec<Window>> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let entries = parse_manifest(&text)?;
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::with_capacity(entries.len());
    let mut cache: Option<(String, Vec<Window>)> = None;
    for e in entries {
        if cache.as_ref().map(|(id, _)| id != &e.record_id).unwrap_or(true) {
            let rec = read_record(record_path(dir, &e.record_id))?;
            let rec = resample(&rec, i64::from(CANONICAL_RATE_HZ))?;
            cache = Some((e.record_id.clone(), window(&rec, &e.record_id, 0.0)?));
        }
        let windows = &cache.as_ref().expect("cached").1;
        let mut w = windows
            .get(e.window_index)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("{}: no window {}", e.record_id, e.window_index)))?;
        w.label = e.label;
        if let Some(p) = &e.mask_path {
            let rec = read_record(dir.join(p))?;
            let mask = Mask::from_tensor(rec.samples())?;
            if mask.channels() != w.channel_count() || mask.len() != w.samples.shape()[1] {
                return Err(Error::InvalidInput(format!("{p}: mask shape does not match window")));
            }
            w.localization_mask = Some(mask);
        }
        out.push(w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{synth_dataset, EventSpec, SynthSpec};

    #[test]
    fn manifest_csv_round_trip() {
        let entries = vec![
            ManifestEntry {
                record_id: "a".into(),
                window_index: 0,
                label: Some(1),
                mask_path: Some("masks/a.eegr".into()),
            },
            ManifestEntry {
                record_id: "b".into(),
                window_index: 2,
                label: None,
                mask_path: None,
            },
        ];
        let csv = manifest_to_csv(&entries);
        assert!(csv.contains("b,2,,\n"));
        assert_eq!(parse_manifest(&csv).unwrap(), entries);
        assert!(parse_manifest("a,b\n").is_err());
    }

    #[test]
    fn dataset_directory_round_trip() {
        let spec = SynthSpec {
            channel_count: 3,
            windows_per_class: 2,
            event: EventSpec {
                affected_channels: (1, 2),
                ..EventSpec::default()
            },
            ..SynthSpec::default()
        };
        let (windows, entries) = synth_dataset(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(dir.path(), &windows, &entries).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(loaded, windows);
    }
}
