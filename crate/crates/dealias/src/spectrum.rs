//! FFT wrappers, short-time transforms, and frequency-domain resampling.
//!
//! All transforms go through a process-wide plan cache so repeated
//! same-length calls (STFT frames, per-tone probe analyses) reuse their
//! twiddle tables, including across rayon workers.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::{Error, Result};

type PlanKey = (usize, bool);

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<(FftPlanner<f64>, HashMap<PlanKey, Arc<dyn Fft<f64>>>)>> =
        OnceLock::new();
    let cell = CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cell.lock().expect("fft plan cache poisoned");
    let (planner, map) = &mut *guard;
    map.entry((n, inverse))
        .or_insert_with(|| {
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// Forward DFT, unnormalized: `X[k] = sum_n x[n] exp(-2*pi*i*k*n/N)`.
pub fn fft(x: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let mut buf = x.to_vec();
    plan(x.len(), false).process(&mut buf);
    buf
}

/// Inverse DFT with 1/N normalization; `ifft(fft(x)) == x` up to roundoff.
pub fn ifft(x: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let mut buf = x.to_vec();
    plan(x.len(), true).process(&mut buf);
    let scale = 1.0 / x.len() as f64;
    for v in &mut buf {
        *v *= scale;
    }
    buf
}

/// Unnormalized +j-sign transform: `y[n] = sum_k x[k] exp(+2*pi*i*k*n/N)`.
/// This is the adjoint of [`fft`]; reverse-mode FFT gradients use it.
pub fn idft_unnormalized(x: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let mut buf = x.to_vec();
    plan(x.len(), true).process(&mut buf);
    buf
}

/// Forward DFT of a real sequence; full length-N complex output.
pub fn fft_real(x: &[f64]) -> Vec<Complex<f64>> {
    let buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft(&buf)
}

/// Forward DFT of a real sequence keeping bins `0..=N/2` (the rest are
/// conjugate images).
pub fn fft_real_half(x: &[f64]) -> Vec<Complex<f64>> {
    let mut full = fft_real(x);
    full.truncate(x.len() / 2 + 1);
    full
}

/// Magnitude of each bin.
pub fn magnitudes(x: &[Complex<f64>]) -> Vec<f64> {
    x.iter().map(|c| c.norm()).collect()
}

/// Short-time Fourier transform. Columns are windowed frames starting at
/// multiples of `hop`; only bins `0..=nfft/2` are kept. Frames never run
/// past the end of the signal (no padding).
pub struct StftMatrix {
    /// `cols[t][k]`, `k` in `0..=nfft/2`.
    pub cols: Vec<Vec<Complex<f64>>>,
    pub nfft: usize,
    pub hop: usize,
}

impl StftMatrix {
    pub fn frames(&self) -> usize {
        self.cols.len()
    }

    pub fn bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    /// Magnitude matrix, same layout as `cols`.
    pub fn magnitudes(&self) -> Vec<Vec<f64>> {
        self.cols.iter().map(|c| magnitudes(c)).collect()
    }
}

/// Windowed STFT of `x`. `window.len()` sets the frame length; requires
/// `x.len() >= window.len()` and `hop >= 1`.
pub fn stft(x: &[f64], window: &[f64], hop: usize) -> Result<StftMatrix> {
    let nfft = window.len();
    if hop == 0 {
        return Err(Error::Usage("stft hop must be >= 1".into()));
    }
    if x.len() < nfft {
        return Err(Error::Data(format!(
            "stft input too short: {} samples for frame length {nfft}",
            x.len()
        )));
    }
    let frames = (x.len() - nfft) / hop + 1;
    let mut cols = Vec::with_capacity(frames);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for t in 0..frames {
        let seg = &x[t * hop..t * hop + nfft];
        for (b, (&s, &w)) in buf.iter_mut().zip(seg.iter().zip(window)) {
            *b = Complex::new(s * w, 0.0);
        }
        plan(nfft, false).process(&mut buf);
        cols.push(buf[..nfft / 2 + 1].to_vec());
    }
    Ok(StftMatrix { cols, nfft, hop })
}

/// Bandlimited resampling to `new_len` samples over the same time span:
/// forward FFT, spectrum zero-padded or truncated, inverse FFT scaled by
/// `new_len / x.len()`. On upsampling the Nyquist bin is split evenly
/// between the two new image positions; on downsampling the two bins that
/// land on the new Nyquist are summed. `new_len == x.len()` is the
/// identity (the input is returned unchanged).
pub fn resample_freq_domain(x: &[f64], new_len: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 || new_len == 0 {
        return Err(Error::Usage("resample requires nonempty input and output".into()));
    }
    if new_len == n {
        return Ok(x.to_vec());
    }
    let spec = fft_real(x);
    let mut out = vec![Complex::new(0.0, 0.0); new_len];
    if new_len > n {
        let half = n / 2;
        out[..half].copy_from_slice(&spec[..half]);
        for k in 1..n - half {
            out[new_len - k] = spec[n - k];
        }
        if n % 2 == 0 {
            // Old Nyquist bin splits into a conjugate pair.
            out[half] = spec[half] * 0.5;
            out[new_len - half] = spec[half] * 0.5;
        }
    } else {
        let half = new_len / 2;
        out[..half].copy_from_slice(&spec[..half]);
        for k in 1..new_len - half {
            out[new_len - k] = spec[n - k];
        }
        if new_len % 2 == 0 {
            // Both image bins fold onto the new Nyquist.
            out[half] = spec[half] + spec[n - half];
        }
    }
    let y = ifft(&out);
    let gain = new_len as f64 / n as f64;
    Ok(y.into_iter().map(|c| c.re * gain).collect())
}

/// Upsample by an integer factor. Factor 1 is the exact identity.
pub fn upsample(x: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::Usage("upsample factor must be >= 1".into()));
    }
    resample_freq_domain(x, x.len() * factor)
}

/// Downsample by an integer factor; requires the length to divide evenly.
/// Factor 1 is the exact identity.
pub fn downsample(x: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::Usage("downsample factor must be >= 1".into()));
    }
    if x.len() % factor != 0 {
        return Err(Error::Data(format!(
            "downsample: length {} not divisible by factor {factor}",
            x.len()
        )));
    }
    resample_freq_domain(x, x.len() / factor)
}
