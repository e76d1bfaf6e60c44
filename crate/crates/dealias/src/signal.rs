//! Sampled signals, sine probes, and analysis windows.

use rand::{Rng, RngExt};
use rustfft::num_complex::Complex;

use crate::spectrum;
use crate::{Error, Result};

/// A mono signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub data: Vec<f64>,
    pub rate: u32,
}

impl SampledSignal {
    pub fn new(data: Vec<f64>, rate: u32) -> Self {
        Self { data, rate }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.data.len() as f64 / self.rate as f64
    }

    /// Root-mean-square level.
    pub fn rms(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    /// Errors unless both signals share a sample rate.
    pub fn check_same_rate(&self, other: &Self) -> Result<()> {
        if self.rate != other.rate {
            return Err(Error::Data(format!(
                "sample rate mismatch: {} vs {}",
                self.rate, other.rate
            )));
        }
        Ok(())
    }
}

/// MIDI note number (possibly fractional) to frequency in Hz, A4 = 440 Hz.
pub fn midi_to_freq(note: f64) -> f64 {
    440.0 * ((note - 69.0) / 12.0).exp2()
}

/// Parameters of one sine probe.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SineParams {
    pub f0: f64,
    pub amp: f64,
    pub phase: f64,
}

impl SineParams {
    pub fn new(f0: f64, amp: f64, phase: f64) -> Self {
        Self { f0, amp, phase }
    }
}

/// Draw one probe: note number uniform on [21, 127] (continuous, so f0
/// covers 27.5 Hz to ~12.5 kHz geometrically), amplitude uniform on [0, 1],
/// phase uniform on [0, 2*pi).
pub fn sample_sine_params<R: Rng + ?Sized>(rng: &mut R) -> SineParams {
    let note = rng.random_range(21.0..=127.0);
    let amp = rng.random_range(0.0..1.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    SineParams::new(midi_to_freq(note), amp, phase)
}

/// Draw a batch of probes.
pub fn sample_sine_batch<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<SineParams> {
    (0..count).map(|_| sample_sine_params(rng)).collect()
}

/// Generate `len` samples of `amp * sin(2*pi*f0*n/fs + phase)`.
pub fn gen_sine(params: &SineParams, len: usize, rate: u32) -> SampledSignal {
    let step = std::f64::consts::TAU * params.f0 / rate as f64;
    let data = (0..len)
        .map(|n| params.amp * (step * n as f64 + params.phase).sin())
        .collect();
    SampledSignal::new(data, rate)
}

/// Symmetric Hann window, `w[n] = 0.5 * (1 - cos(2*pi*n/(N-1)))`.
pub fn hann_symmetric(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.5 * (1.0 - (std::f64::consts::TAU * n as f64 / (len - 1) as f64).cos()))
        .collect()
}

/// Dolph-Chebyshev window with equiripple sidelobes `atten_db` below the
/// main lobe, peak-normalized to 1. Computed from the closed-form Chebyshev
/// frequency response via an inverse DFT, so sidelobe level is exact to
/// machine precision at any length.
pub fn chebyshev(len: usize, atten_db: f64) -> Result<Vec<f64>> {
    if len < 2 {
        return Err(Error::Usage("chebyshev window needs len >= 2".into()));
    }
    if !(atten_db.is_finite() && atten_db > 0.0) {
        return Err(Error::Usage("chebyshev attenuation must be positive dB".into()));
    }
    let m = len as f64;
    let order = m - 1.0;
    let ripple = 10f64.powf(atten_db / 20.0);
    let beta = ((ripple.acosh()) / order).cosh();

    // Sample the Chebyshev polynomial T_order at beta*cos(pi*k/len).
    let cheb = |x: f64| -> f64 {
        if x > 1.0 {
            (order * x.acosh()).cosh()
        } else if x < -1.0 {
            let sign = if len % 2 == 1 { 1.0 } else { -1.0 };
            sign * (order * (-x).acosh()).cosh()
        } else {
            (order * x.acos()).cos()
        }
    };
    let p: Vec<f64> = (0..len)
        .map(|k| cheb(beta * (std::f64::consts::PI * k as f64 / m).cos()))
        .collect();

    // Inverse transform back to taps; even lengths need a half-sample
    // phase shift before the transform and a different mirror assembly.
    let mut w = if len % 2 == 1 {
        let spec: Vec<Complex<f64>> = p.iter().map(|&v| Complex::new(v, 0.0)).collect();
        let fw = spectrum::fft(&spec);
        let half = (len + 1) / 2;
        let mut out = Vec::with_capacity(len);
        for k in (1..half).rev() {
            out.push(fw[k].re);
        }
        for k in 0..half {
            out.push(fw[k].re);
        }
        out
    } else {
        let spec: Vec<Complex<f64>> = p
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let ang = std::f64::consts::PI * k as f64 / m;
                Complex::new(v * ang.cos(), v * ang.sin())
            })
            .collect();
        let fw = spectrum::fft(&spec);
        let half = len / 2 + 1;
        let mut out = Vec::with_capacity(len);
        for k in (1..half).rev() {
            out.push(fw[k].re);
        }
        for k in 1..half {
            out.push(fw[k].re);
        }
        out
    };
    let peak = w.iter().cloned().fold(f64::MIN, f64::max);
    for v in &mut w {
        *v /= peak;
    }
    Ok(w)
}
