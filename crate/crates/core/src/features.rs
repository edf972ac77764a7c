//! Window → model input: patching, per-patch log-amplitude spectra and
//! per-channel instance normalization.

use crate::error::{Error, Result};
use crate::numerics::{rfft_amplitude, Tensor};
use crate::signal_io::{Window, CANONICAL_RATE_HZ, WINDOW_SAMPLES};

/// Channels whose feature std falls below this are treated as constant.
pub const CONSTANT_CHANNEL_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchConfig {
    pub patch_len: usize,
    pub stride: usize,
    pub log_eps: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_len: 256,
            stride: 256,
            log_eps: 1e-6,
        }
    }
}

impl PatchConfig {
    pub fn new(patch_len: usize, stride: usize) -> Self {
        Self {
            patch_len,
            stride,
            ..Self::default()
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.patch_len / 2
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        let (p, s) = (self.patch_len, self.stride);
        if s == 0 || s > p || p > len {
            return Err(Error::Config(format!(
                "patch geometry needs 1 <= stride ({s}) <= patch_len ({p}) <= length ({len})"
            )));
        }
        if !(self.log_eps >= 0.0) {
            return Err(Error::Config("log_eps must be non-negative".into()));
        }
        Ok(())
    }

    /// Geometry check plus the FFT's power-of-two requirement.
    pub fn validate_spectral(&self, len: usize) -> Result<()> {
        self.validate(len)?;
        let p = self.patch_len;
        if p < 2 || !p.is_power_of_two() {
            return Err(Error::Config(format!("patch_len {p} must be a power of two >= 2")));
        }
        Ok(())
    }

    /// `floor((len - P) / S) + 2`.
    pub fn patch_count(&self, len: usize) -> Result<usize> {
        self.validate(len)?;
        Ok((len - self.patch_len) / self.stride + 2)
    }
}

/// Splits every channel of a `C×L` signal into `N` patches of `P` samples.
///
/// The signal is first extended by repeating its last sample `S` times;
/// patch `i` covers padded samples `[i·S, i·S + P)`.
pub fn patch(signal: &Tensor, cfg: &PatchConfig) -> Result<Tensor> {
    if signal.rank() != 2 {
        return Err(Error::Dimension(format!("patch needs C×L, got {:?}", signal.shape())));
    }
    let (c, len) = (signal.shape()[0], signal.shape()[1]);
    let n = cfg.patch_count(len)?;
    let (p, s) = (cfg.patch_len, cfg.stride);
    let mut out = Vec::with_capacity(c * n * p);
    let mut padded = Vec::with_capacity(len + s);
    for ch in 0..c {
        let row = signal.row(ch);
        padded.clear();
        padded.extend_from_slice(row);
        padded.extend(std::iter::repeat_n(row[len - 1], s));
        for i in 0..n {
            out.extend_from_slice(&padded[i * s..i * s + p]);
        }
    }
    Tensor::new(vec![c, n, p], out)
}

/// Per-patch `ln(|rfft| + eps)` before normalization, `C×N×(P/2)`.
pub fn log_spectra(signal: &Tensor, cfg: &PatchConfig) -> Result<Tensor> {
    cfg.validate_spectral(signal.cols())?;
    let patches = patch(signal, cfg)?;
    let (c, n) = (patches.shape()[0], patches.shape()[1]);
    let f = cfg.feature_dim();
    let mut out = Vec::with_capacity(c * n * f);
    for r in 0..c * n {
        let amp = rfft_amplitude(patches.row(r))?;
        out.extend(amp.into_iter().map(|a| (a + cfg.log_eps).ln()));
    }
    Tensor::from_raw(vec![c, n, f], out)
}

/// Normalized model input for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    /// `C×N×F`.
    pub values: Tensor,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
}

impl FeatureTensor {
    pub fn channel_count(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn patch_count(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn feature_dim(&self) -> usize {
        self.values.shape()[2]
    }

    /// Wraps raw `C×N×F` values without normalizing (tests, toy models).
    pub fn from_values(values: Tensor) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::Dimension(format!("features must be C×N×F, got {:?}", values.shape())));
        }
        let c = values.shape()[0];
        Ok(Self {
            values,
            norm_mean: vec![0.0; c],
            norm_std: vec![1.0; c],
        })
    }
}

/// Zero-mean, unit-population-std per channel over all `N×F` values.
pub fn instance_normalize(spectra: Tensor) -> Result<FeatureTensor> {
    if spectra.rank() != 3 {
        return Err(Error::Dimension(format!("features must be C×N×F, got {:?}", spectra.shape())));
    }
    let c = spectra.shape()[0];
    let per = spectra.len() / c.max(1);
    let mut values = spectra;
    let mut norm_mean = Vec::with_capacity(c);
    let mut norm_std = Vec::with_capacity(c);
    for ch in 0..c {
        let xs = &mut values.data_mut()[ch * per..(ch + 1) * per];
        let mean = xs.iter().sum::<f64>() / per as f64;
        let std = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per as f64).sqrt();
        if std < CONSTANT_CHANNEL_EPS {
            xs.fill(0.0);
        } else {
            xs.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
        norm_mean.push(mean);
        norm_std.push(std);
    }
    if !values.is_finite() {
        return Err(Error::NonFinite("features".into()));
    }
    Ok(FeatureTensor {
        values,
        norm_mean,
        norm_std,
    })
}

pub fn featurize_signal(signal: &Tensor, cfg: &PatchConfig) -> Result<FeatureTensor> {
    instance_normalize(log_spectra(signal, cfg)?)
}

pub fn featurize(window: &Window, cfg: &PatchConfig) -> Result<FeatureTensor> {
    if window.samples.shape()[1] != WINDOW_SAMPLES {
        return Err(Error::Dimension("window length is not 12 s at 250 Hz".into()));
    }
    featurize_signal(&window.samples, cfg)
}

/// Time span in seconds covered by patch `index` of a 12 s window.
pub fn patch_time_span(index: usize, cfg: &PatchConfig) -> Result<(f64, f64)> {
    patch_time_span_for(index, cfg, WINDOW_SAMPLES)
}

/// [`patch_time_span`] for a 250 Hz signal of `len` samples; the padded last
/// patch is clamped to the signal end.
pub fn patch_time_span_for(index: usize, cfg: &PatchConfig, len: usize) -> Result<(f64, f64)> {
    let n = cfg.patch_count(len)?;
    if index >= n {
        return Err(Error::InvalidInput(format!("patch index {index} out of range (N = {n})")));
    }
    let fs = f64::from(CANONICAL_RATE_HZ);
    let start = (index * cfg.stride) as f64 / fs;
    let end = (start + cfg.patch_len as f64 / fs).min(len as f64 / fs);
    Ok((start, end))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use proptest::prelude::*;

    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn patch_counts() {
        assert_eq!(PatchConfig::new(250, 250).patch_count(3000).unwrap(), 13);
        assert_eq!(PatchConfig::new(256, 256).patch_count(256).unwrap(), 2);
        assert_eq!(PatchConfig::new(256, 256).patch_count(3000).unwrap(), 12);
        assert!(PatchConfig::new(256, 256).patch_count(100).is_err());
        assert!(PatchConfig::new(6, 7).patch_count(100).is_err());
        let sig = Tensor::zeros(&[1, 100]);
        assert!(matches!(log_spectra(&sig, &PatchConfig::new(6, 3)), Err(Error::Config(_))));
    }

    #[test]
    fn boundary_patch_is_replicated_tail() {
        let sig = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = patch(&sig, &PatchConfig::new(4, 4)).unwrap();
        assert_eq!(p.shape(), &[1, 2, 4]);
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 4.0, 4.0, 4.0, 4.0, 4.0]);
        let p = patch(&sig, &PatchConfig::new(2, 1)).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn zero_window_normalizes_to_zeros() {
        let sig = Tensor::zeros(&[3, WINDOW_SAMPLES]);
        let raw = log_spectra(&sig, &PatchConfig::default()).unwrap();
        assert!(raw.data().iter().all(|&v| v == raw.data()[0]));
        let f = featurize_signal(&sig, &PatchConfig::default()).unwrap();
        assert_eq!(f.values.shape(), &[3, 12, 128]);
        assert!(f.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cosine_peaks_at_expected_bin() {
        let cfg = PatchConfig::default();
        let row: Vec<f64> = (0..WINDOW_SAMPLES)
            .map(|n| (2.0 * PI * 10.0 * n as f64 / 250.0).cos())
            .collect();
        let sig = Tensor::new(vec![1, WINDOW_SAMPLES], row).unwrap();
        let raw = log_spectra(&sig, &cfg).unwrap();
        let want_bin = (10.0 * 256.0 / 250.0f64).round() as usize;
        // The last patch is partly padding.
        for i in 0..11 {
            let r = raw.row(i);
            let peak = r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 + 1;
            assert_eq!(peak, want_bin, "patch {i}");
        }
    }

    fn check_normalized(f: &FeatureTensor) {
        let c = f.channel_count();
        let per = f.values.len() / c;
        for ch in 0..c {
            let xs = &f.values.data()[ch * per..(ch + 1) * per];
            let mean = xs.iter().sum::<f64>() / per as f64;
            let std = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per as f64).sqrt();
            assert!(mean.abs() < 1e-9);
            assert!((std - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn normalized_channels_have_unit_stats() {
        let mut rng = Rng::new(0);
        let sig = Tensor::new(vec![4, WINDOW_SAMPLES], (0..4 * WINDOW_SAMPLES).map(|_| rng.normal() * 30.0).collect())
            .unwrap();
        check_normalized(&featurize_signal(&sig, &PatchConfig::default()).unwrap());
    }

    #[test]
    fn time_spans() {
        let cfg = PatchConfig::default();
        assert_eq!(patch_time_span(0, &cfg).unwrap(), (0.0, 1.024));
        let (s, e) = patch_time_span(11, &cfg).unwrap();
        assert!((s - 11.264).abs() < 1e-12 && e == 12.0);
        assert_eq!(patch_time_span(5, &PatchConfig::new(250, 250)).unwrap(), (5.0, 6.0));
        assert!(patch_time_span(12, &cfg).is_err());
    }

    #[test]
    fn spans_cover_window_when_stride_equals_patch() {
        for p in [64usize, 128, 256, 512] {
            let cfg = PatchConfig::new(p, p);
            let n = cfg.patch_count(WINDOW_SAMPLES).unwrap();
            let mut covered = 0.0;
            let mut prev_end = 0.0;
            for i in 0..n {
                let (s, e) = patch_time_span(i, &cfg).unwrap();
                assert!(s <= prev_end + 1e-12);
                covered += (e - s.max(prev_end)).max(0.0);
                prev_end = e.max(prev_end);
            }
            assert!((covered - 12.0).abs() < 1e-9, "P={p} covered {covered}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn scale_invariant_after_normalization(seed in any::<u64>(), c in 0.1f64..50.0) {
            let mut rng = Rng::new(seed);
            let data: Vec<f64> = (0..2 * WINDOW_SAMPLES).map(|_| rng.normal() * 20.0).collect();
            let sig = Tensor::new(vec![2, WINDOW_SAMPLES], data).unwrap();
            let scaled = sig.map(|v| v * c);
            // Exact invariance holds without the additive epsilon.
            let exact = PatchConfig { log_eps: 0.0, ..PatchConfig::default() };
            let a = featurize_signal(&sig, &exact).unwrap();
            let b = featurize_signal(&scaled, &exact).unwrap();
            prop_assert!(a.values.max_abs_diff(&b.values) < 1e-9);
            // Before normalization the log spectrum shifts by ln c.
            let ra = log_spectra(&sig, &exact).unwrap();
            let rb = log_spectra(&scaled, &exact).unwrap();
            for (x, y) in ra.data().iter().zip(rb.data()) {
                prop_assert!((y - x - c.ln()).abs() < 1e-9);
            }
            // With the default epsilon the deviation stays tiny.
            let d = featurize_signal(&sig, &PatchConfig::default()).unwrap();
            let e = featurize_signal(&scaled, &PatchConfig::default()).unwrap();
            prop_assert!(d.values.max_abs_diff(&e.values) < 1e-4);
        }
    }
}
