//! Loss and distance functions on plain signal vectors.
//!
//! These are the evaluation-side counterparts of the differentiable
//! graphs in [`crate::diff`]: error-to-signal ratio (plain, pre-filtered,
//! and on harmonic amplitude vectors), a DC offset penalty, the combined
//! fine-tuning objective, and a multi-resolution log-mel spectral
//! distance.

use crate::filters;
use crate::nmr::NmrConfig;
use crate::signal::hann_symmetric;
use crate::spectrum;
use crate::{Error, Result};

/// Error-to-signal ratio `sum((s - s_hat)^2) / sum(s^2)`. Scale-invariant:
/// scaling both signals by the same factor leaves it unchanged. A
/// zero-energy reference has no defined ratio and is a data error.
pub fn esr(target: &[f64], pred: &[f64]) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::Data(format!(
            "esr: length mismatch ({} vs {})",
            target.len(),
            pred.len()
        )));
    }
    let energy: f64 = target.iter().map(|s| s * s).sum();
    if energy <= 0.0 {
        return Err(Error::Data("esr: reference signal has zero energy".into()));
    }
    let err: f64 = target.iter().zip(pred).map(|(s, p)| (s - p) * (s - p)).sum();
    Ok(err / energy)
}

/// ESR in dB: `10 log10(esr)`. An exact match yields `-inf`.
pub fn esr_db(target: &[f64], pred: &[f64]) -> Result<f64> {
    Ok(10.0 * esr(target, pred)?.log10())
}

/// Squared mean error over mean reference power:
/// `(mean(s - s_hat))^2 / mean(s^2)`.
pub fn dc_loss(target: &[f64], pred: &[f64]) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::Data(format!(
            "dc_loss: length mismatch ({} vs {})",
            target.len(),
            pred.len()
        )));
    }
    let n = target.len() as f64;
    let power: f64 = target.iter().map(|s| s * s).sum::<f64>() / n;
    if power <= 0.0 {
        return Err(Error::Data("dc_loss: reference signal has zero energy".into()));
    }
    let mean_err: f64 = target.iter().zip(pred).map(|(s, p)| s - p).sum::<f64>() / n;
    Ok(mean_err * mean_err / power)
}

/// ESR after low-pass pre-emphasis of both signals (the audible-band
/// error term of the fine-tuning objective).
pub fn esr_lowpassed(target: &[f64], pred: &[f64], rate: u32) -> Result<f64> {
    let fir = filters::preemph_lowpass(rate)?;
    let t = filters::apply_fir_same(target, &fir);
    let p = filters::apply_fir_same(pred, &fir);
    esr(&t, &p)
}

/// The two terms and total of the fine-tuning objective:
/// `ESR(LPF(target), LPF(pred)) + lambda * NMR_linear(target, pred)`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct FinetuneLossParts {
    pub esr_lowpassed: f64,
    pub nmr_linear: f64,
    pub total: f64,
}

/// Evaluate the fine-tuning objective on plain vectors (the training
/// path builds the same quantity on the tape).
pub fn finetune_loss(target: &[f64], pred: &[f64], rate: u32, lambda: f64) -> Result<FinetuneLossParts> {
    let esr_term = esr_lowpassed(target, pred, rate)?;
    let cfg = NmrConfig::new(rate)?;
    // The NMR term carries the same floor as its dB reporting, so a
    // perfect match yields exactly lambda * floor rather than 0.
    let nmr = cfg.nmr_linear(pred, target)?.max(crate::nmr::NMR_FLOOR_LINEAR);
    Ok(FinetuneLossParts {
        esr_lowpassed: esr_term,
        nmr_linear: nmr,
        total: esr_term + lambda * nmr,
    })
}

/// ESR between harmonic amplitude vectors (shorter one zero-padded, the
/// first argument is the reference).
pub fn harmonic_esr(ref_amps: &[f64], test_amps: &[f64]) -> Result<f64> {
    let energy: f64 = ref_amps.iter().map(|a| a * a).sum();
    if energy <= 0.0 {
        return Err(Error::Data("harmonic_esr: reference amplitudes have zero energy".into()));
    }
    let n = ref_amps.len().max(test_amps.len());
    let mut err = 0.0;
    for i in 0..n {
        let a = ref_amps.get(i).copied().unwrap_or(0.0);
        let b = test_amps.get(i).copied().unwrap_or(0.0);
        err += (a - b) * (a - b);
    }
    Ok(err / energy)
}

/// FFT sizes used by the multi-resolution spectral distance.
pub const MRSL_FFT_SIZES: [usize; 3] = [512, 1024, 2048];
/// Mel bands per resolution.
pub const MRSL_MEL_BANDS: usize = 128;
/// Floor applied inside the log.
pub const MRSL_LOG_FLOOR: f64 = 1e-5;

/// Frequency -> mel (HTK convention).
fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular unit-peak mel filterbank over FFT bins `0..=nfft/2`,
/// band edges uniform on the HTK mel scale from 0 Hz to rate/2.
/// Returned sparse: per band, (first bin, weights).
pub fn mel_filterbank(nfft: usize, rate: u32, bands: usize) -> Vec<(usize, Vec<f64>)> {
    let n_bins = nfft / 2 + 1;
    let mel_hi = hz_to_mel(rate as f64 / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(mel_hi * i as f64 / (bands + 1) as f64))
        .collect();
    let bin_hz = rate as f64 / nfft as f64;
    let mut out = Vec::with_capacity(bands);
    for b in 0..bands {
        let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        let mut first = None;
        let mut w = Vec::new();
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let v = if f <= lo || f >= hi {
                0.0
            } else if f <= mid {
                (f - lo) / (mid - lo)
            } else {
                (hi - f) / (hi - mid)
            };
            if v > 0.0 {
                if first.is_none() {
                    first = Some(k);
                }
                w.push(v);
            } else if first.is_some() {
                break;
            }
        }
        out.push((first.unwrap_or(0), w));
    }
    out
}

/// Log-mel magnitude matrix: mel-filtered STFT magnitudes,
/// `ln(max(value, floor))`, rows = bands, flattened row-major.
fn log_mel(x: &[f64], rate: u32, nfft: usize) -> Result<Vec<f64>> {
    if x.len() < nfft {
        return Err(Error::Data(format!(
            "spectral distance needs at least {nfft} samples, got {}",
            x.len()
        )));
    }
    let window = hann_symmetric(nfft);
    let st = spectrum::stft(x, &window, nfft / 4)?;
    let bank = mel_filterbank(nfft, rate, MRSL_MEL_BANDS);
    let mut out = Vec::with_capacity(MRSL_MEL_BANDS * st.cols.len());
    for (first, w) in &bank {
        for col in &st.cols {
            let mut acc = 0.0;
            for (i, &wi) in w.iter().enumerate() {
                acc += wi * col[first + i].norm();
            }
            out.push(acc.max(MRSL_LOG_FLOOR).ln());
        }
    }
    Ok(out)
}

/// Multi-resolution log-mel spectral distance: for each FFT size in
/// [`MRSL_FFT_SIZES`] (hop = nfft/4, symmetric Hann, 128 unit-peak HTK
/// mel bands, natural log with a 1e-5 floor), the Frobenius distance
/// between log-mel matrices normalized by the reference's Frobenius
/// norm; averaged over the three resolutions.
pub fn mrsl(target: &[f64], pred: &[f64], rate: u32) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::Data(format!(
            "mrsl: length mismatch ({} vs {})",
            target.len(),
            pred.len()
        )));
    }
    let mut acc = 0.0;
    for &nfft in &MRSL_FFT_SIZES {
        let lt = log_mel(target, rate, nfft)?;
        let lp = log_mel(pred, rate, nfft)?;
        let diff: f64 = lt.iter().zip(&lp).map(|(a, b)| (a - b) * (a - b)).sum();
        let norm: f64 = lt.iter().map(|a| a * a).sum();
        if norm <= 0.0 {
            return Err(Error::Data("mrsl: reference log-mel norm is zero".into()));
        }
        acc += (diff / norm).sqrt();
    }
    Ok(acc / MRSL_FFT_SIZES.len() as f64)
}

/// dB form of a linear power ratio with `-inf` for zero.
pub fn ratio_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{gen_sine, SineParams};

    fn sine(f0: f64, amp: f64, len: usize, rate: u32) -> Vec<f64> {
        gen_sine(&SineParams { f0, amp, phase: 0.0 }, len, rate).data
    }

    #[test]
    fn esr_reference_points() {
        let s = sine(440.0, 0.5, 4410, 44100);
        let zeros = vec![0.0; s.len()];
        // Predicting silence gives exactly 1.
        assert!((esr(&s, &zeros).unwrap() - 1.0).abs() < 1e-12);
        // Predicting double the signal also gives exactly 1.
        let double: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert!((esr(&s, &double).unwrap() - 1.0).abs() < 1e-12);
        // Perfect match: 0 linear, -inf dB.
        assert_eq!(esr(&s, &s).unwrap(), 0.0);
        assert_eq!(esr_db(&s, &s).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn esr_is_scale_invariant() {
        let s = sine(997.0, 0.3, 2000, 44100);
        let p: Vec<f64> = s.iter().enumerate().map(|(i, v)| v + 0.01 * (i as f64 * 0.1).sin()).collect();
        let base = esr(&s, &p).unwrap();
        for scale in [0.1, 3.0, 117.0] {
            let ss: Vec<f64> = s.iter().map(|v| v * scale).collect();
            let ps: Vec<f64> = p.iter().map(|v| v * scale).collect();
            let scaled = esr(&ss, &ps).unwrap();
            assert!(
                (scaled - base).abs() < 1e-12 * base.max(1.0),
                "scale {scale}: {scaled} vs {base}"
            );
        }
    }

    #[test]
    fn esr_rejects_zero_energy_reference() {
        let z = vec![0.0; 100];
        let p = vec![1.0; 100];
        assert!(matches!(esr(&z, &p), Err(Error::Data(_))));
        assert!(matches!(dc_loss(&z, &p), Err(Error::Data(_))));
    }

    #[test]
    fn dc_loss_measures_offset() {
        let s = sine(440.0, 0.5, 4410, 44100);
        let shifted: Vec<f64> = s.iter().map(|v| v + 0.05).collect();
        // mean error is exactly -0.05; mean power ~ amp^2/2.
        let got = dc_loss(&s, &shifted).unwrap();
        let power = s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
        assert!((got - 0.0025 / power).abs() < 1e-12);
        // A zero-mean error contributes nothing.
        let wob: Vec<f64> = s
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { 1e-3 } else { -1e-3 })
            .collect();
        assert!(dc_loss(&s, &wob).unwrap() < 1e-25);
    }

    #[test]
    fn finetune_loss_at_identity_sits_on_nmr_floor() {
        let s = sine(1000.0, 0.25, 44100, 44100);
        let parts = finetune_loss(&s, &s, 44100, 1.0).unwrap();
        assert_eq!(parts.esr_lowpassed, 0.0);
        assert_eq!(parts.nmr_linear, crate::nmr::NMR_FLOOR_LINEAR);
        assert_eq!(parts.total, crate::nmr::NMR_FLOOR_LINEAR);
    }

    #[test]
    fn harmonic_esr_pads_and_normalizes() {
        let r = [1.0, 0.5, 0.25];
        let t = [1.0, 0.5];
        // Missing third harmonic counts fully.
        let want = 0.25 * 0.25 / (1.0 + 0.25 + 0.0625);
        assert!((harmonic_esr(&r, &t).unwrap() - want).abs() < 1e-15);
        assert!(harmonic_esr(&[0.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn mel_filterbank_shape() {
        let bank = mel_filterbank(1024, 44100, 128);
        assert_eq!(bank.len(), 128);
        // Every filter has some support, peaks at 1 or below, and band
        // starts are non-decreasing in frequency.
        let mut prev_first = 0;
        for (first, w) in &bank {
            assert!(!w.is_empty() || *first == 0);
            assert!(w.iter().all(|&v| v <= 1.0 + 1e-12));
            assert!(*first >= prev_first);
            prev_first = *first;
        }
        // Upper filters must not exceed the spectrum.
        let (first, w) = &bank[127];
        assert!(first + w.len() <= 513);
    }

    #[test]
    fn mrsl_zero_for_identical_and_positive_for_different() {
        let s = sine(440.0, 0.5, 8192, 44100);
        assert_eq!(mrsl(&s, &s, 44100).unwrap(), 0.0);
        let other = sine(880.0, 0.5, 8192, 44100);
        let d = mrsl(&s, &other, 44100).unwrap();
        assert!(d > 0.01, "distinct tones must separate, got {d}");
        // Small perturbation sits between.
        let near: Vec<f64> = s.iter().map(|v| v * 1.01).collect();
        let dn = mrsl(&s, &near, 44100).unwrap();
        assert!(dn > 0.0 && dn < d);
    }
}
