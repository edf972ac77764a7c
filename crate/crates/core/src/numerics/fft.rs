//! Radix-2 FFT and one-sided amplitude spectra.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// In-place iterative radix-2 Cooley–Tukey transform. `re.len()` must be a
/// power of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) -> Result<()> {
    let n = re.len();
    if n != im.len() {
        return Err(Error::Dimension("real/imaginary length mismatch".into()));
    }
    if !n.is_power_of_two() {
        return Err(Error::Config(format!("FFT length {n} is not a power of two")));
    }
    let bits = n.trailing_zeros();
    if bits == 0 {
        return Ok(());
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = -2.0 * PI / len as f64;
        for k in 0..half {
            let (s, c) = (step * k as f64).sin_cos();
            let mut start = 0;
            while start < n {
                let a = start + k;
                let b = a + half;
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                start += len;
            }
        }
        len *= 2;
    }
    Ok(())
}

/// One-sided amplitude spectrum `|DFT(frame)|` for bins `1..=P/2`; the DC
/// bin is dropped. Output index `i` holds bin `i + 1`.
pub fn rfft_amplitude(frame: &[f64]) -> Result<Vec<f64>> {
    let p = frame.len();
    if p < 2 || !p.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "frame length {p} must be even and at least 2"
        )));
    }
    let mut re = frame.to_vec();
    let mut im = vec![0.0; p];
    fft_in_place(&mut re, &mut im)?;
    Ok((1..=p / 2).map(|k| re[k].hypot(im[k])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn naive_amplitude(frame: &[f64]) -> Vec<f64> {
        let p = frame.len();
        (1..=p / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, x) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / p as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                re.hypot(im)
            })
            .collect()
    }

    #[test]
    fn pure_cosine_peaks_at_its_bin() {
        let p = 256;
        let frame: Vec<f64> = (0..p)
            .map(|n| (2.0 * PI * 8.0 * n as f64 / p as f64).cos())
            .collect();
        let amp = rfft_amplitude(&frame).unwrap();
        assert_eq!(amp.len(), 128);
        for (i, a) in amp.iter().enumerate() {
            let bin = i + 1;
            let want = if bin == 8 { 128.0 } else { 0.0 };
            assert!((a - want).abs() < 1e-9, "bin {bin}: {a}");
        }
    }

    #[test]
    fn zeros_give_zeros() {
        assert!(rfft_amplitude(&[0.0; 64]).unwrap().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn odd_or_tiny_frames_rejected() {
        assert!(matches!(rfft_amplitude(&[0.0; 7]), Err(Error::Config(_))));
        assert!(rfft_amplitude(&[0.0]).is_err());
        assert!(matches!(rfft_amplitude(&[0.0; 12]), Err(Error::Config(_))));
    }

    #[test]
    fn matches_direct_dft() {
        let mut rng = Rng::new(0);
        let mut p = 2;
        while p <= 1024 {
            let frame: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
            let fast = rfft_amplitude(&frame).unwrap();
            let slow = naive_amplitude(&frame);
            let diff: f64 = fast.iter().zip(&slow).map(|(a, b)| (a - b).powi(2)).sum();
            let norm: f64 = slow.iter().map(|b| b * b).sum();
            assert!(diff.sqrt() <= 1e-9 * norm.sqrt().max(1.0), "P={p}");
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "P={p}");
            }
            p *= 2;
        }
    }
}
