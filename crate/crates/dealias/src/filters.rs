//! FIR pre-emphasis filters used inside training losses.
//!
//! Two designs: a Kaiser windowed-sinc lowpass that keeps the time-domain
//! error term focused on the band where alias-free targets are trustworthy,
//! and a linear-phase A-weighting filter for perceptually weighted
//! pretraining losses. Both are applied with group-delay compensation so
//! filtered signals stay time-aligned with their sources.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::{Error, Result};

/// A linear-phase FIR with its group delay in samples.
#[derive(Debug, Clone)]
pub struct Fir {
    pub taps: Vec<f64>,
    pub delay: usize,
}

impl Fir {
    /// Magnitude response at `freq_hz` for sample rate `rate`.
    pub fn magnitude_at(&self, freq_hz: f64, rate: u32) -> f64 {
        let w = std::f64::consts::TAU * freq_hz / rate as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &h) in self.taps.iter().enumerate() {
            re += h * (w * n as f64).cos();
            im -= h * (w * n as f64).sin();
        }
        (re * re + im * im).sqrt()
    }
}

/// Zeroth-order modified Bessel function, by series.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    sum
}

/// Kaiser windowed-sinc lowpass. Cutoff is the midpoint of the transition
/// band; attenuation `atten_db` sets both the stopband floor and the tap
/// count via the standard Kaiser estimates.
pub fn kaiser_lowpass(rate: u32, pass_hz: f64, stop_hz: f64, atten_db: f64) -> Result<Fir> {
    let fs = rate as f64;
    if !(0.0 < pass_hz && pass_hz < stop_hz && stop_hz < fs / 2.0) {
        return Err(Error::Usage(format!(
            "lowpass band edges out of order: pass {pass_hz} Hz, stop {stop_hz} Hz at rate {rate}"
        )));
    }
    let beta = if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    };
    let delta_w = std::f64::consts::TAU * (stop_hz - pass_hz) / fs;
    let mut taps = ((atten_db - 7.95) / (2.285 * delta_w)).ceil() as usize + 1;
    if taps % 2 == 0 {
        taps += 1; // symmetric type-I
    }
    let mid = (taps - 1) / 2;
    let wc = std::f64::consts::PI * (pass_hz + stop_hz) / fs; // midpoint cutoff
    let i0b = bessel_i0(beta);
    let h = (0..taps)
        .map(|n| {
            let k = n as f64 - mid as f64;
            let sinc = if k == 0.0 { wc / std::f64::consts::PI } else { (wc * k).sin() / (std::f64::consts::PI * k) };
            let t = k / mid as f64;
            sinc * bessel_i0(beta * (1.0 - t * t).max(0.0).sqrt()) / i0b
        })
        .collect();
    Ok(Fir { taps: h, delay: mid })
}

/// Standard A-weighting magnitude (linear), normalized to 1 at 1 kHz.
pub fn a_weight_magnitude(freq_hz: f64) -> f64 {
    let ra = |f: f64| -> f64 {
        let f2 = f * f;
        let num = 12194.0_f64.powi(2) * f2 * f2;
        let den = (f2 + 20.6_f64.powi(2))
            * ((f2 + 107.7_f64.powi(2)) * (f2 + 737.9_f64.powi(2))).sqrt()
            * (f2 + 12194.0_f64.powi(2));
        num / den
    };
    ra(freq_hz) / ra(1000.0)
}

/// Linear-phase A-weighting FIR by frequency sampling (type I, odd length).
/// The response matches the analytic curve exactly on the design grid and
/// interpolates smoothly between grid points.
pub fn a_weighting_fir(rate: u32, taps: usize) -> Result<Fir> {
    if taps % 2 == 0 || taps < 3 {
        return Err(Error::Usage("a-weighting FIR length must be odd and >= 3".into()));
    }
    let fs = rate as f64;
    let mid = (taps - 1) / 2;
    let grid: Vec<f64> = (0..=mid)
        .map(|k| {
            let f = k as f64 * fs / taps as f64;
            if k == 0 { 0.0 } else { a_weight_magnitude(f) }
        })
        .collect();
    let h = (0..taps)
        .map(|n| {
            let mut acc = grid[0];
            for (k, &d) in grid.iter().enumerate().skip(1) {
                let ang = std::f64::consts::TAU * k as f64 * (n as f64 - mid as f64) / taps as f64;
                acc += 2.0 * d * ang.cos();
            }
            acc / taps as f64
        })
        .collect();
    Ok(Fir { taps: h, delay: mid })
}

/// Filter with group-delay compensation: output sample `n` is the filter's
/// response centered on input sample `n`, with zeros assumed outside the
/// signal. Output length equals input length.
pub fn apply_fir_same(x: &[f64], fir: &Fir) -> Vec<f64> {
    let n = x.len();
    let mut y = vec![0.0; n];
    for (out_idx, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        // y[n] = sum_t h[t] * x[n + delay - t]
        for (t, &h) in fir.taps.iter().enumerate() {
            let src = out_idx as isize + fir.delay as isize - t as isize;
            if src >= 0 && (src as usize) < n {
                acc += h * x[src as usize];
            }
        }
        *out = acc;
    }
    y
}

/// Cached pre-emphasis lowpass for the fine-tuning loss: pass 12 kHz,
/// stop 16 kHz with an 85 dB design (>= 80 dB delivered).
pub fn preemph_lowpass(rate: u32) -> Result<Arc<Fir>> {
    static CACHE: OnceLock<Mutex<HashMap<u32, Arc<Fir>>>> = OnceLock::new();
    let cell = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cell.lock().expect("fir cache poisoned");
    if let Some(f) = map.get(&rate) {
        return Ok(f.clone());
    }
    let f = Arc::new(kaiser_lowpass(rate, 12_000.0, 16_000.0, 85.0)?);
    map.insert(rate, f.clone());
    Ok(f)
}

/// Cached A-weighting FIR for pretraining losses (4095 taps).
pub fn preemph_a_weighting(rate: u32) -> Result<Arc<Fir>> {
    static CACHE: OnceLock<Mutex<HashMap<u32, Arc<Fir>>>> = OnceLock::new();
    let cell = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cell.lock().expect("fir cache poisoned");
    if let Some(f) = map.get(&rate) {
        return Ok(f.clone());
    }
    let f = Arc::new(a_weighting_fir(rate, 4095)?);
    map.insert(rate, f.clone());
    Ok(f)
}
