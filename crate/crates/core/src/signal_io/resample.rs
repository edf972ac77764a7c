use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::signal_io::SignalRecord;

pub const CANONICAL_RATE_HZ: u32 = 250;

/// Linear-interpolation resampling to `target_hz`.
///
/// Output length is `floor(T · target / source)`; output sample `j` sits at
/// input position `j · source / target`, computed in exact integer arithmetic
/// so integral positions reproduce input samples exactly.
pub fn resample(rec: &SignalRecord, target_hz: i64) -> Result<SignalRecord> {
    if target_hz <= 0 || target_hz > i64::from(u32::MAX) {
        return Err(Error::Config(format!("target rate {target_hz} Hz must be positive")));
    }
    let target = target_hz as u64;
    let source = u64::from(rec.sample_rate_hz());
    if source == target {
        return Ok(rec.clone());
    }
    let (c, t) = (rec.channel_count(), rec.sample_count());
    let out_len = ((t as u128 * target as u128) / source as u128) as usize;
    if out_len == 0 {
        return Err(Error::InvalidInput(format!(
            "record of {t} samples at {source} Hz is empty at {target} Hz"
        )));
    }
    let src = rec.samples();
    let mut out = vec![0.0; c * out_len];
    for j in 0..out_len {
        let num = j as u128 * source as u128;
        let idx = (num / target as u128) as usize;
        let frac = (num % target as u128) as f64 / target as f64;
        for ch in 0..c {
            let row = src.row(ch);
            let a = row[idx.min(t - 1)];
            let v = if frac == 0.0 || idx + 1 >= t {
                a
            } else {
                a + (row[idx + 1] - a) * frac
            };
            out[ch * out_len + j] = v;
        }
    }
    SignalRecord::new(
        rec.channel_labels().to_vec(),
        target as u32,
        Tensor::new(vec![c, out_len], out)?,
    )
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use proptest::prelude::*;

    use super::*;
    use crate::numerics::rfft_amplitude;

    fn rec(rate: u32, data: Vec<f64>) -> SignalRecord {
        let t = data.len();
        SignalRecord::new(vec!["A".into()], rate, Tensor::new(vec![1, t], data).unwrap()).unwrap()
    }

    #[test]
    fn identity_at_same_rate() {
        let r = rec(250, vec![1.0, -2.0, 3.5]);
        assert_eq!(resample(&r, 250).unwrap(), r);
    }

    #[test]
    fn exact_hits_when_downsampling_by_two() {
        let r = rec(100, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(resample(&r, 50).unwrap().samples().data(), &[0.0, 2.0]);
    }

    #[test]
    fn rejects_nonpositive_target() {
        let r = rec(100, vec![0.0; 4]);
        assert!(matches!(resample(&r, 0), Err(Error::Config(_))));
        assert!(matches!(resample(&r, -5), Err(Error::Config(_))));
    }

    #[test]
    fn keeps_a_10hz_peak() {
        let data: Vec<f64> = (0..1000).map(|n| (2.0 * PI * 10.0 * n as f64 / 500.0).sin()).collect();
        let out = resample(&rec(500, data), 250).unwrap();
        assert_eq!(out.sample_count(), 500);
        let frame = &out.samples().data()[..256];
        let amp = rfft_amplitude(frame).unwrap();
        let peak = amp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i + 1)
            .unwrap();
        let hz = peak as f64 * 250.0 / 256.0;
        assert!((hz - 10.0).abs() < 250.0 / 256.0, "peak at {hz} Hz");
    }

    proptest! {
        #[test]
        fn preserves_duration(t in 1usize..5000, src in 1u32..1000, dst in 1i64..1000) {
            let r = rec(src, vec![0.0; t]);
            if let Ok(out) = resample(&r, dst) {
                let d = (out.sample_count() as f64 / dst as f64 - t as f64 / f64::from(src)).abs();
                prop_assert!(d < 1.0 / dst as f64);
            }
        }
    }
}
