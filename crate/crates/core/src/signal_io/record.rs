//! `EEGR` record files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "EEGR" | version u16 = 1 | channels u16 | sample rate u32 | samples u64
//! | per channel: label length u8, UTF-8 label bytes
//! | channels × samples f32, channel-major
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const RECORD_MAGIC: &[u8; 4] = b"EEGR";
pub const RECORD_VERSION: u16 = 1;

/// A multichannel time-domain recording.
///
/// Samples are stored as `f64` but always hold `f32`-representable values,
/// since that is the on-disk precision; [`SignalRecord::new`] rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalRecord {
    channel_labels: Vec<String>,
    sample_rate_hz: u32,
    samples: Tensor,
}

impl SignalRecord {
    pub fn new(channel_labels: Vec<String>, sample_rate_hz: u32, samples: Tensor) -> Result<Self> {
        if samples.rank() != 2 {
            return Err(Error::Dimension(format!(
                "record samples must be C×T, got {:?}",
                samples.shape()
            )));
        }
        let (c, t) = (samples.shape()[0], samples.shape()[1]);
        if c == 0 || t == 0 {
            return Err(Error::InvalidInput("record needs at least one channel and one sample".into()));
        }
        if c != channel_labels.len() {
            return Err(Error::Dimension(format!(
                "{} labels for {c} channels",
                channel_labels.len()
            )));
        }
        if c > usize::from(u16::MAX) {
            return Err(Error::InvalidInput(format!("too many channels: {c}")));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        let mut seen = HashSet::new();
        for l in &channel_labels {
            if l.is_empty() || l.len() > 255 {
                return Err(Error::InvalidInput(format!("channel label `{l}` must be 1..=255 bytes")));
            }
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate channel label `{l}`")));
            }
        }
        if !samples.is_finite() {
            return Err(Error::NonFinite("record samples".into()));
        }
        let samples = samples.map(|v| f64::from(v as f32));
        if !samples.is_finite() {
            return Err(Error::NonFinite("record samples overflow f32".into()));
        }
        Ok(Self {
            channel_labels,
            sample_rate_hz,
            samples,
        })
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn channel_count(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn sample_count(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn duration_s(&self) -> f64 {
        self.sample_count() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn header_len(&self) -> usize {
        20 + self.channel_labels.iter().map(|l| 1 + l.len()).sum::<usize>()
    }

    pub fn encoded_len(&self) -> usize {
        self.header_len() + 4 * self.samples.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(RECORD_MAGIC);
        out.extend_from_slice(&RECORD_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.channel_count() as u16).to_le_bytes());
        out.extend_from_slice(&self.sample_rate_hz.to_le_bytes());
        out.extend_from_slice(&(self.sample_count() as u64).to_le_bytes());
        for l in &self.channel_labels {
            out.push(l.len() as u8);
            out.extend_from_slice(l.as_bytes());
        }
        for v in self.samples.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != RECORD_MAGIC {
            return Err(Error::format(0, "bad magic"));
        }
        let version = r.u16("format version")?;
        if version != RECORD_VERSION {
            return Err(Error::format(4, format!("version mismatch: expected {RECORD_VERSION}, found {version}")));
        }
        let channels = usize::from(r.u16("channel count")?);
        let rate_at = r.pos;
        let rate = r.u32("sample rate")?;
        if rate == 0 {
            return Err(Error::format(rate_at as u64, "sample rate is zero"));
        }
        let count_at = r.pos;
        let count = r.u64("sample count")?;
        if channels == 0 || count == 0 {
            return Err(Error::format(count_at as u64, "empty record"));
        }
        let mut labels = Vec::with_capacity(channels);
        for _ in 0..channels {
            let at = r.pos;
            let len = usize::from(r.take(1, "label length")?[0]);
            let raw = r.take(len, "channel label")?;
            let label = std::str::from_utf8(raw)
                .map_err(|_| Error::format(at as u64, "channel label is not UTF-8"))?;
            labels.push(label.to_string());
        }
        let total = (channels as u64)
            .checked_mul(count)
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| Error::format(count_at as u64, "sample count overflows"))?;
        let payload_at = r.pos;
        let need = total * 4;
        let have = (bytes.len() - payload_at) as u64;
        if have < need {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated payload: expected {need} sample bytes, found {have}"),
            ));
        }
        if have > need {
            return Err(Error::format(payload_at as u64 + need, "trailing bytes after payload"));
        }
        let mut data = Vec::with_capacity(total as usize);
        for (i, chunk) in bytes[payload_at..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::format((payload_at + 4 * i) as u64, "non-finite sample"));
            }
            data.push(f64::from(v));
        }
        let samples = Tensor::new(vec![channels, count as usize], data)?;
        Self::new(labels, rate, samples).map_err(|e| Error::format(20, e.to_string()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn write_record(rec: &SignalRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, rec.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_record(path: impl AsRef<Path>) -> Result<SignalRecord> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    SignalRecord::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("Ch{i}")).collect()
    }

    fn record(c: usize, t: usize, rate: u32) -> SignalRecord {
        let data = (0..c * t).map(|i| (i as f64 * 0.37).sin() * 50.0).collect();
        SignalRecord::new(labels(c), rate, Tensor::new(vec![c, t], data).unwrap()).unwrap()
    }

    #[test]
    fn payload_length_for_a_minute_at_256hz() {
        let labels: Vec<String> = crate::signal_io::MONTAGE_10_20.iter().map(|s| s.to_string()).collect();
        let t = 60 * 256;
        let rec = SignalRecord::new(labels.clone(), 256, Tensor::zeros(&[19, t])).unwrap();
        let header = 20 + labels.iter().map(|l| 1 + l.len()).sum::<usize>();
        assert_eq!(header, 20 + 19 + 40);
        assert_eq!(rec.to_bytes().len(), 4 * 19 * 15360 + header);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = record(2, 10, 250).to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        let err = SignalRecord::from_bytes(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "format error: bad magic at offset 0");
    }

    #[test]
    fn version_truncation_and_nan_are_reported() {
        let good = record(2, 10, 250).to_bytes();
        let mut v = good.clone();
        v[4] = 9;
        let e = SignalRecord::from_bytes(&v).unwrap_err().to_string();
        assert!(e.contains("version mismatch") && e.ends_with("offset 4"), "{e}");

        let e = SignalRecord::from_bytes(&good[..good.len() - 3]).unwrap_err().to_string();
        assert!(e.contains("truncated payload"), "{e}");

        let e = SignalRecord::from_bytes(&good[..7]).unwrap_err().to_string();
        assert!(e.contains("truncated"), "{e}");

        let mut n = good.clone();
        let at = n.len() - 4;
        n[at..].copy_from_slice(&f32::NAN.to_le_bytes());
        let e = SignalRecord::from_bytes(&n).unwrap_err().to_string();
        assert!(e.contains(&format!("non-finite sample at offset {at}")), "{e}");
    }

    #[test]
    fn rejects_duplicate_labels() {
        let r = SignalRecord::new(vec!["Fz".into(), "Fz".into()], 250, Tensor::zeros(&[2, 4]));
        assert!(r.is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(c in 1usize..6, t in 1usize..200, rate in 1u32..2000, seed in any::<u64>()) {
            let mut rng = crate::numerics::Rng::new(seed);
            let data = (0..c * t).map(|_| rng.normal() * 100.0).collect();
            let rec = SignalRecord::new(labels(c), rate, Tensor::new(vec![c, t], data).unwrap()).unwrap();
            let back = SignalRecord::from_bytes(&rec.to_bytes()).unwrap();
            prop_assert_eq!(back.channel_labels(), rec.channel_labels());
            prop_assert_eq!(back.sample_rate_hz(), rec.sample_rate_hz());
            for (a, b) in back.samples().data().iter().zip(rec.samples().data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
