use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::signal_io::{SignalRecord, CANONICAL_RATE_HZ};

pub const WINDOW_SECONDS: usize = 12;
pub const WINDOW_SAMPLES: usize = WINDOW_SECONDS * CANONICAL_RATE_HZ as usize;

/// Per-channel, per-sample boolean mask (ground-truth event locations).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    channels: usize,
    len: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(channels: usize, len: usize) -> Self {
        Self {
            channels,
            len,
            bits: vec![false; channels * len],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn get(&self, channel: usize, sample: usize) -> bool {
        self.bits[channel * self.len + sample]
    }

    pub fn set(&mut self, channel: usize, sample: usize, value: bool) {
        self.bits[channel * self.len + sample] = value;
    }

    pub fn count(&self, channel: usize) -> usize {
        self.bits[channel * self.len..(channel + 1) * self.len]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// Maximal runs of set samples on one channel as half-open `[start, end)`.
    pub fn runs(&self, channel: usize) -> Vec<(usize, usize)> {
        let row = &self.bits[channel * self.len..(channel + 1) * self.len];
        let mut out = Vec::new();
        let mut start = None;
        for (i, &b) in row.iter().enumerate() {
            match (b, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    out.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.len));
        }
        out
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::from_raw(vec![self.channels, self.len], data).expect("mask shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::Dimension("mask must be C×L".into()));
        }
        Ok(Self {
            channels: t.shape()[0],
            len: t.shape()[1],
            bits: t.data().iter().map(|&v| v != 0.0).collect(),
        })
    }
}

/// A 12-second, 250 Hz multichannel clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub record_id: String,
    pub index: usize,
    pub channel_labels: Vec<String>,
    pub samples: Tensor,
    pub label: Option<usize>,
    pub localization_mask: Option<Mask>,
}

impl Window {
    pub fn new(record_id: impl Into<String>, index: usize, channel_labels: Vec<String>, samples: Tensor) -> Result<Self> {
        if samples.rank() != 2 || samples.shape()[1] != WINDOW_SAMPLES {
            return Err(Error::Dimension(format!(
                "window must be C×{WINDOW_SAMPLES}, got {:?}",
                samples.shape()
            )));
        }
        if samples.shape()[0] != channel_labels.len() || channel_labels.is_empty() {
            return Err(Error::Dimension("window channel labels/rows mismatch".into()));
        }
        Ok(Self {
            record_id: record_id.into(),
            index,
            channel_labels,
            samples,
            label: None,
            localization_mask: None,
        })
    }

    pub fn channel_count(&self) -> usize {
        self.samples.shape()[0]
    }

    /// `record_id#index`, unique within a manifest.
    pub fn id(&self) -> String {
        format!("{}#{}", self.record_id, self.index)
    }

    pub fn to_record(&self) -> Result<SignalRecord> {
        SignalRecord::new(self.channel_labels.clone(), CANONICAL_RATE_HZ, self.samples.clone())
    }
}

/// Cuts a 250 Hz record into consecutive 12 s windows, `overlap_s` seconds
/// apart from the previous window's end. A trailing remainder shorter than
/// 12 s is dropped.
pub fn window(rec: &SignalRecord, record_id: &str, overlap_s: f64) -> Result<Vec<Window>> {
    if rec.sample_rate_hz() != CANONICAL_RATE_HZ {
        return Err(Error::Config(format!(
            "windowing needs {CANONICAL_RATE_HZ} Hz input, record is {} Hz",
            rec.sample_rate_hz()
        )));
    }
    if !(0.0..WINDOW_SECONDS as f64).contains(&overlap_s) {
        return Err(Error::Config(format!("overlap {overlap_s} s must lie in [0, 12)")));
    }
    let overlap = (overlap_s * f64::from(CANONICAL_RATE_HZ)).round() as usize;
    let stride = WINDOW_SAMPLES - overlap;
    let (c, t) = (rec.channel_count(), rec.sample_count());
    let mut out = Vec::new();
    let mut start = 0;
    while start + WINDOW_SAMPLES <= t {
        let mut data = Vec::with_capacity(c * WINDOW_SAMPLES);
        for ch in 0..c {
            data.extend_from_slice(&rec.samples().row(ch)[start..start + WINDOW_SAMPLES]);
        }
        let samples = Tensor::new(vec![c, WINDOW_SAMPLES], data)?;
        out.push(Window::new(record_id, out.len(), rec.channel_labels().to_vec(), samples)?);
        start += stride;
    }
    Ok(out)
}

/// Start offset in samples of window `index` for the given overlap.
pub fn window_start(index: usize, overlap_s: f64) -> usize {
    let overlap = (overlap_s * f64::from(CANONICAL_RATE_HZ)).round() as usize;
    index * (WINDOW_SAMPLES - overlap)
}
