//! Harmonic extraction and alias-free resynthesis.
//!
//! A distorted sine settles into a periodic steady state whose true
//! spectrum is a harmonic series at multiples of the drive frequency plus
//! a DC offset; everything else in the response (fold-back products, noise)
//! is aliasing. Extraction reads the complex amplitude of each in-band
//! harmonic off a long windowed FFT, correcting for window scalloping at
//! fractional bin positions; resynthesis rebuilds the signal from those
//! amplitudes alone, yielding an alias-free version of the response.

use rustfft::num_complex::Complex;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::signal::{chebyshev, SampledSignal};
use crate::spectrum::fft_real;
use crate::{Error, Result};

/// Analysis windows are expensive to build at probe length; cache by size.
fn analysis_window(nfft: usize) -> Result<Arc<Vec<f64>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<f64>>>>> = OnceLock::new();
    let cell = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cell.lock().expect("window cache poisoned");
    if let Some(w) = map.get(&nfft) {
        return Ok(w.clone());
    }
    let w = Arc::new(chebyshev(nfft, ANALYSIS_WINDOW_ATTEN_DB)?);
    map.insert(nfft, w.clone());
    Ok(w)
}

/// Sidelobe attenuation of the analysis window in dB.
pub const ANALYSIS_WINDOW_ATTEN_DB: f64 = 120.0;

/// Fraction of the sample rate discarded as nonlinear transient before the
/// analysis block.
pub const TRANSIENT_SKIP_NUM: u32 = 1;
pub const TRANSIENT_SKIP_DEN: u32 = 5;

/// Samples discarded before the steady-state analysis block (0.2 s).
pub fn transient_skip(rate: u32) -> usize {
    (rate * TRANSIENT_SKIP_NUM / TRANSIENT_SKIP_DEN) as usize
}

/// Harmonic-series model of one steady-state tone: DC offset plus one
/// complex amplitude per harmonic. Harmonic `m` (1-based) sits at
/// `m * f0`; its time-domain contribution is
/// `2*|c| * cos(2*pi*m*f0*n/rate + arg(c))`.
#[derive(Debug, Clone)]
pub struct HarmonicSet {
    pub f0: f64,
    pub rate: u32,
    pub dc: f64,
    pub coeffs: Vec<Complex<f64>>,
}

impl HarmonicSet {
    /// Peak amplitude of each harmonic (`2*|c_m|`).
    pub fn amplitudes(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| 2.0 * c.norm()).collect()
    }

    /// Frequency of each harmonic in Hz.
    pub fn frequencies(&self) -> Vec<f64> {
        (1..=self.coeffs.len()).map(|m| m as f64 * self.f0).collect()
    }
}

/// Number of harmonics of `f0` at or below Nyquist: `floor(rate/(2*f0))`.
pub fn harmonic_count(f0: f64, rate: u32) -> usize {
    if f0 <= 0.0 {
        return 0;
    }
    (rate as f64 / (2.0 * f0)).floor() as usize
}

/// Window DTFT `sum_n w[n] * exp(+2*pi*i*n*theta/N)` evaluated by phasor
/// recurrence; `theta` is in bins.
fn window_response(window: &[f64], theta: f64) -> Complex<f64> {
    let n = window.len() as f64;
    let step = Complex::from_polar(1.0, std::f64::consts::TAU * theta / n);
    let mut phasor = Complex::new(1.0, 0.0);
    let mut acc = Complex::new(0.0, 0.0);
    for (i, &w) in window.iter().enumerate() {
        acc += phasor * w;
        phasor *= step;
        if i % 4096 == 4095 {
            phasor /= phasor.norm(); // keep |phasor| from drifting
        }
    }
    acc
}

/// Analysis geometry for one harmonic.
struct BinPlacement {
    bin: usize,
    frac: f64, // signed fractional offset, |frac| <= 0.5
}

fn place(freq_hz: f64, rate: u32, nfft: usize) -> BinPlacement {
    let fb = freq_hz * nfft as f64 / rate as f64;
    let bin = fb.round() as usize;
    BinPlacement { bin, frac: fb - bin as f64 }
}

/// Extract the harmonic series of a steady-state block.
///
/// `block` must hold at least one second of settled signal (`nfft = rate`
/// samples are analyzed). Each harmonic's complex amplitude is read off a
/// Dolph-Chebyshev-windowed FFT at its nearest bin. Two leakage terms are
/// inverted jointly: the window's scalloping response at the fractional
/// bin offset, and the conjugate-image response from the harmonic's own
/// negative-frequency partner (the latter matters once amplitude recovery
/// is pushed below the window's sidelobe floor). Harmonics landing within
/// half a bin of Nyquist have no resolvable phase and are dropped with a
/// log note.
pub fn extract_block(block: &[f64], rate: u32, f0: f64) -> Result<HarmonicSet> {
    if !(f0.is_finite() && f0 > 0.0) {
        return Err(Error::Usage(format!("f0 must be positive, got {f0}")));
    }
    let nfft = rate as usize;
    if block.len() < nfft {
        return Err(Error::Data(format!(
            "analysis block too short: {} samples, need {nfft}",
            block.len()
        )));
    }
    let window = analysis_window(nfft)?;
    let w0: f64 = window.iter().sum();
    let windowed: Vec<f64> = block[..nfft]
        .iter()
        .zip(window.iter())
        .map(|(&x, &w)| x * w)
        .collect();
    let spec = fft_real(&windowed);

    let dc = spec[0].re / w0;
    let m_count = harmonic_count(f0, rate);
    let nyquist = rate as f64 / 2.0;
    let mut coeffs = Vec::with_capacity(m_count);
    for m in 1..=m_count {
        let fm = m as f64 * f0;
        let pl = place(fm, rate, nfft);
        if pl.bin + 1 > nfft / 2 || (nyquist - fm).abs() * nfft as f64 / rate as f64 <= 0.5 + 1e-9 {
            log::debug!("dropping harmonic {m} at {fm:.3} Hz: within half a bin of Nyquist");
            break;
        }
        let y = spec[pl.bin];
        // Forward model at this bin: y = c*d + conj(c)*e, where d is the
        // window response at the scalloping offset and e the response at
        // the conjugate image's distance.
        let d = window_response(&window, pl.frac);
        let e = window_response(&window, -(fm * nfft as f64 / rate as f64 + pl.bin as f64));
        let p = d + e;
        let q = d - e;
        let det = p.re * q.re + q.im * p.im;
        // Solve [re(p) -im(q); im(p) re(q)] * [re(c); im(c)] = [re(y); im(y)].
        let c = if det.abs() > 1e-6 * d.norm_sqr() {
            let a = (y.re * q.re + y.im * q.im) / det;
            let b = (p.re * y.im - p.im * y.re) / det;
            Complex::new(a, b)
        } else {
            y / d
        };
        coeffs.push(c);
    }
    Ok(HarmonicSet { f0, rate, dc, coeffs })
}

/// Extract harmonics from a full probe response: skips the first
/// `rate * 1/5` samples of nonlinear transient, then analyzes one second.
pub fn extract_harmonics(tone: &SampledSignal, f0: f64) -> Result<HarmonicSet> {
    let skip = (tone.rate * TRANSIENT_SKIP_NUM / TRANSIENT_SKIP_DEN) as usize;
    let need = skip + tone.rate as usize;
    if tone.len() < need {
        return Err(Error::Data(format!(
            "probe response too short: {} samples, need {need} \
             ({:.1} s transient + 1 s analysis)",
            tone.len(),
            skip as f64 / tone.rate as f64
        )));
    }
    extract_block(&tone.data[skip..], tone.rate, f0)
}

/// Rebuild `len` samples from a harmonic set:
/// `y[n] = dc + sum_m 2*|c_m| * cos(2*pi*m*f0*n/rate + arg(c_m))`.
/// Sample 0 aligns with the start of the analysis block. Oscillators run
/// on phasor recurrences renormalized periodically, keeping amplitude
/// drift near machine precision over multi-second renders.
pub fn synthesize(set: &HarmonicSet, len: usize) -> SampledSignal {
    let mut data = vec![set.dc; len];
    for (idx, &c) in set.coeffs.iter().enumerate() {
        let m = (idx + 1) as f64;
        let step = Complex::from_polar(1.0, std::f64::consts::TAU * m * set.f0 / set.rate as f64);
        // Start at 2*c so Re() yields the cosine term directly.
        let mut osc = c * 2.0;
        let target_norm = osc.norm();
        for (i, out) in data.iter_mut().enumerate() {
            *out += osc.re;
            osc *= step;
            if i % 4096 == 4095 && target_norm > 0.0 {
                osc *= target_norm / osc.norm();
            }
        }
    }
    SampledSignal::new(data, set.rate)
}

/// Alias-free target for a probe response: extract the harmonic series
/// and resynthesize exactly the analysis block (one second, starting
/// after the transient skip). Pair it with the same slice of the probe
/// input when training.
pub fn alias_free_target(tone: &SampledSignal, f0: f64) -> Result<SampledSignal> {
    let set = extract_harmonics(tone, f0)?;
    Ok(synthesize(&set, tone.rate as usize))
}

/// The part of the analysis block the harmonic model does not explain:
/// aliasing products plus numerical noise.
pub fn aliasing_residual(tone: &SampledSignal, f0: f64) -> Result<SampledSignal> {
    let set = extract_harmonics(tone, f0)?;
    let synth = synthesize(&set, tone.rate as usize);
    let skip = (tone.rate * TRANSIENT_SKIP_NUM / TRANSIENT_SKIP_DEN) as usize;
    let data = tone.data[skip..skip + tone.rate as usize]
        .iter()
        .zip(&synth.data)
        .map(|(&a, &b)| a - b)
        .collect();
    Ok(SampledSignal::new(data, tone.rate))
}

/// Peak spectral level away from the harmonic grid, in dB relative to a
/// full-scale sine's windowed peak. The block is windowed with the same
/// low-leak window used for extraction; bins within `guard_bins` of any
/// harmonic (or DC) are excluded. This is the purity measure for
/// resynthesized targets: a clean harmonic series shows only window
/// sidelobes here.
pub fn offgrid_peak_dbfs(block: &[f64], rate: u32, f0: f64, guard_bins: usize) -> Result<f64> {
    let nfft = rate as usize;
    if block.len() < nfft {
        return Err(Error::Data(format!(
            "purity block too short: {} samples, need {nfft}",
            block.len()
        )));
    }
    let window = analysis_window(nfft)?;
    let w0: f64 = window.iter().sum();
    let windowed: Vec<f64> = block[..nfft]
        .iter()
        .zip(window.iter())
        .map(|(&x, &w)| x * w)
        .collect();
    let spec = fft_real(&windowed);
    let full_scale = w0 / 2.0;

    let mut excluded = vec![false; nfft / 2 + 1];
    let mark = |excluded: &mut Vec<bool>, center: usize| {
        let lo = center.saturating_sub(guard_bins);
        let hi = (center + guard_bins).min(nfft / 2);
        for e in &mut excluded[lo..=hi] {
            *e = true;
        }
    };
    mark(&mut excluded, 0);
    for m in 1..=harmonic_count(f0, rate) {
        let pl = place(m as f64 * f0, rate, nfft);
        if pl.bin <= nfft / 2 {
            mark(&mut excluded, pl.bin);
        }
    }
    let mut peak = 0.0f64;
    for (k, flag) in excluded.iter().enumerate() {
        if !flag {
            peak = peak.max(spec[k].norm());
        }
    }
    Ok(20.0 * (peak / full_scale).max(1e-300).log10())
}
