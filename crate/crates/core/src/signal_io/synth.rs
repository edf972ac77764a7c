//! Synthetic EEG-like windows with planted spike-and-wave bursts.
//!
//! Background: per-channel mixture of theta/alpha/beta sinusoids plus pink
//! noise. Class-1 windows additionally carry a burst of spike-and-wave
//! complexes on a random subset of channels; the burst's samples are marked
//! in the window's localization mask.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{fft_in_place, Rng, Tensor};
use crate::signal_io::{Mask, Window, CANONICAL_RATE_HZ, MONTAGE_10_20, WINDOW_SAMPLES, WINDOW_SECONDS};

#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundSpec {
    /// Amplitude ranges (µV) of the theta, alpha and beta components.
    pub theta_uv: (f64, f64),
    pub alpha_uv: (f64, f64),
    pub beta_uv: (f64, f64),
    /// Standard deviation (µV) of the 1/f noise component.
    pub noise_uv: f64,
    /// Spectral exponent of the noise: power falls as `1/f^noise_exponent`.
    pub noise_exponent: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self {
            theta_uv: (3.0, 10.0),
            alpha_uv: (5.0, 15.0),
            beta_uv: (1.0, 5.0),
            noise_uv: 10.0,
            noise_exponent: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventSpec {
    pub burst_hz: f64,
    /// Peak burst amplitude relative to the channel's background std.
    pub amplitude_ratio: f64,
    pub duration_s: (f64, f64),
    /// Inclusive range for the number of affected channels.
    pub affected_channels: (usize, usize),
}

impl Default for EventSpec {
    fn default() -> Self {
        Self {
            burst_hz: 3.0,
            amplitude_ratio: 4.0,
            duration_s: (2.0, 4.0),
            affected_channels: (3, 8),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub channel_count: usize,
    pub windows_per_class: usize,
    pub background: BackgroundSpec,
    pub event: EventSpec,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            channel_count: 19,
            windows_per_class: 32,
            background: BackgroundSpec::default(),
            event: EventSpec::default(),
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let e = &self.event;
        if self.channel_count == 0 {
            return Err(Error::Config("synth channel count must be positive".into()));
        }
        if !(e.amplitude_ratio >= 0.0) {
            return Err(Error::Config("event amplitude ratio must be non-negative".into()));
        }
        if !(e.duration_s.0 > 0.0 && e.duration_s.0 <= e.duration_s.1 && e.duration_s.1 <= WINDOW_SECONDS as f64) {
            return Err(Error::Config(format!(
                "event duration range {:?} must satisfy 0 < min <= max <= 12",
                e.duration_s
            )));
        }
        let (lo, hi) = e.affected_channels;
        if lo == 0 || lo > hi || hi > self.channel_count {
            return Err(Error::Config(format!(
                "affected channel range {lo}..={hi} invalid for {} channels",
                self.channel_count
            )));
        }
        if !self.background.noise_exponent.is_finite() || !(self.background.noise_uv >= 0.0) {
            return Err(Error::Config("noise std must be >= 0 and exponent finite".into()));
        }
        if !(e.burst_hz > 0.0) {
            return Err(Error::Config("burst frequency must be positive".into()));
        }
        Ok(())
    }
}

pub fn channel_labels(n: usize) -> Vec<String> {
    if n <= MONTAGE_10_20.len() {
        MONTAGE_10_20[..n].iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("Ch{i:02}")).collect()
    }
}

/// One row of manifest metadata per generated window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub record_id: String,
    pub window_index: usize,
    pub label: Option<usize>,
    pub mask_path: Option<String>,
}

/// Gaussian noise with power spectrum proportional to `1/f^exponent`, shaped
/// in the frequency domain on the next power-of-two length and truncated.
fn power_law_noise(rng: &mut Rng, n: usize, std: f64, exponent: f64) -> Vec<f64> {
    let m = n.next_power_of_two().max(2);
    let (mut re, mut im) = (vec![0.0; m], vec![0.0; m]);
    for k in 1..=m / 2 {
        let amp = (k as f64).powf(-exponent / 2.0);
        let (a, b) = (rng.normal() * amp, rng.normal() * amp);
        re[k] = a;
        im[k] = if k == m / 2 { 0.0 } else { b };
        if k != m / 2 {
            re[m - k] = a;
            im[m - k] = -b;
        }
    }
    // Hermitian spectrum: the forward transform of its conjugate is the
    // (scaled, real) inverse.
    for v in &mut im {
        *v = -*v;
    }
    fft_in_place(&mut re, &mut im).expect("power-of-two length");
    let mut out = re[..n].to_vec();
    let mean = out.iter().sum::<f64>() / n as f64;
    let sd = std_of(&out);
    for v in &mut out {
        *v = (*v - mean) / sd.max(1e-12) * std;
    }
    out
}

fn background(rng: &mut Rng, spec: &BackgroundSpec) -> Vec<f64> {
    let fs = f64::from(CANONICAL_RATE_HZ);
    let bands = [
        (4.0, 7.0, spec.theta_uv),
        (8.0, 12.0, spec.alpha_uv),
        (13.0, 30.0, spec.beta_uv),
    ];
    let mut out = power_law_noise(rng, WINDOW_SAMPLES, spec.noise_uv, spec.noise_exponent);
    for (f_lo, f_hi, (a_lo, a_hi)) in bands {
        let f = rng.uniform_range(f_lo, f_hi);
        let a = rng.uniform_range(a_lo, a_hi);
        let phase = rng.uniform_range(0.0, 2.0 * PI);
        for (n, v) in out.iter_mut().enumerate() {
            *v += a * (2.0 * PI * f * n as f64 / fs + phase).sin();
        }
    }
    out
}

/// Unit-peak spike-and-wave waveform at time `t` seconds into the burst.
fn spike_wave(t: f64, burst_hz: f64) -> f64 {
    let period = 1.0 / burst_hz;
    let tc = t.rem_euclid(period);
    let spike_at = 0.04 * period / (1.0 / 3.0);
    let width = 0.012;
    let spike = -(-(tc - spike_at).powi(2) / (2.0 * width * width)).exp();
    let wave_start = spike_at + 3.0 * width;
    let wave = if tc > wave_start {
        0.6 * (PI * (tc - wave_start) / (period - wave_start)).sin()
    } else {
        0.0
    };
    spike + wave
}

fn std_of(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Generates `windows_per_class` background windows (label 0) followed by as
/// many burst windows (label 1). Deterministic in `spec.seed`.
pub fn synth_dataset(spec: &SynthSpec) -> Result<(Vec<Window>, Vec<ManifestEntry>)> {
    spec.validate()?;
    let labels = channel_labels(spec.channel_count);
    let root = Rng::new(spec.seed);
    let mut windows = Vec::with_capacity(2 * spec.windows_per_class);
    let mut manifest = Vec::with_capacity(2 * spec.windows_per_class);
    let fs = f64::from(CANONICAL_RATE_HZ);
    for class in 0..2usize {
        for i in 0..spec.windows_per_class {
            let mut rng = root.fork(&format!("window/{class}/{i}"));
            let c = spec.channel_count;
            let mut data = Vec::with_capacity(c * WINDOW_SAMPLES);
            for _ in 0..c {
                data.extend(background(&mut rng, &spec.background));
            }
            let mut mask = None;
            if class == 1 {
                let e = &spec.event;
                let dur = rng.uniform_range(e.duration_s.0, e.duration_s.1);
                let len = ((dur * fs).round() as usize).clamp(1, WINDOW_SAMPLES);
                let start = rng.below(WINDOW_SAMPLES - len + 1);
                let k = e.affected_channels.0 + rng.below(e.affected_channels.1 - e.affected_channels.0 + 1);
                let mut chans = rng.choose_distinct(c, k);
                chans.sort_unstable();
                let mut m = Mask::empty(c, WINDOW_SAMPLES);
                for ch in chans {
                    let row = &mut data[ch * WINDOW_SAMPLES..(ch + 1) * WINDOW_SAMPLES];
                    let peak = e.amplitude_ratio * std_of(row);
                    for s in start..start + len {
                        row[s] += peak * spike_wave((s - start) as f64 / fs, e.burst_hz);
                        m.set(ch, s, true);
                    }
                }
                mask = Some(m);
            }
            let record_id = format!("synth_c{class}_{i:04}");
            let samples = Tensor::new(vec![c, WINDOW_SAMPLES], data)?;
            // Round through the record format's precision so files round-trip.
            let samples = samples.map(|v| f64::from(v as f32));
            let mut w = Window::new(record_id.clone(), 0, labels.clone(), samples)?;
            w.label = Some(class);
            w.localization_mask = mask.clone();
            manifest.push(ManifestEntry {
                record_id: record_id.clone(),
                window_index: 0,
                label: Some(class),
                mask_path: mask.map(|_| format!("masks/{record_id}.eegr")),
            });
            windows.push(w);
        }
    }
    Ok((windows, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rfft_amplitude;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            channel_count: 4,
            windows_per_class: 3,
            seed,
            event: EventSpec {
                affected_channels: (1, 3),
                ..EventSpec::default()
            },
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let (a, ma) = synth_dataset(&small(7)).unwrap();
        let (b, mb) = synth_dataset(&small(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let (c, _) = synth_dataset(&small(8)).unwrap();
        assert_ne!(a[0].samples, c[0].samples);
    }

    #[test]
    fn masks_follow_class() {
        let (ws, m) = synth_dataset(&small(1)).unwrap();
        assert_eq!(ws.len(), 6);
        for (w, e) in ws.iter().zip(&m) {
            match w.label {
                Some(0) => {
                    assert!(w.localization_mask.is_none());
                    assert!(e.mask_path.is_none());
                }
                Some(1) => {
                    assert!(!w.localization_mask.as_ref().unwrap().is_empty());
                    assert!(e.mask_path.is_some());
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn two_second_burst_covers_500_samples() {
        let mut spec = small(3);
        spec.event.duration_s = (2.0, 2.0);
        let (ws, _) = synth_dataset(&spec).unwrap();
        for w in ws.iter().filter(|w| w.label == Some(1)) {
            let m = w.localization_mask.as_ref().unwrap();
            for ch in 0..m.channels() {
                let n = m.count(ch);
                assert!(n == 0 || n == 500, "channel {ch}: {n}");
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = small(0);
        s.event.duration_s = (2.0, 13.0);
        assert!(s.validate().is_err());
        let mut s = small(0);
        s.event.amplitude_ratio = -1.0;
        assert!(s.validate().is_err());
        let mut s = small(0);
        s.event.affected_channels = (2, 9);
        assert!(s.validate().is_err());
    }

    #[test]
    fn noise_follows_power_law() {
        for alpha in [1.0, 2.0] {
            let mut rng = Rng::new(4);
            let mut acc = vec![0.0; 1024];
            for _ in 0..20 {
                let x = power_law_noise(&mut rng, 2048, 1.0, alpha);
                assert!((std_of(&x) - 1.0).abs() < 1e-9);
                for (a, v) in acc.iter_mut().zip(rfft_amplitude(&x).unwrap()) {
                    *a += v * v;
                }
            }
            // Least-squares slope of log power against log frequency.
            let pts: Vec<(f64, f64)> = (4..512).map(|k| ((k as f64).ln(), acc[k - 1].ln())).collect();
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let slope = sxy / sxx;
            assert!((slope + alpha).abs() < 0.15, "alpha {alpha}: slope {slope}");
        }
    }

    #[test]
    fn labels_follow_montage() {
        assert_eq!(channel_labels(19)[4], "Fz");
        assert_eq!(channel_labels(21)[20], "Ch20");
    }
}
