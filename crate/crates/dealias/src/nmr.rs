//! Noise-to-mask ratio with a Bark-band psychoacoustic masking model.
//!
//! The measure answers "how audible is the part of `x_hat` that is not in
//! `x_ref`". Both signals go through a Hann STFT calibrated so that full
//! scale maps to 92 dB SPL; the error spectrum is weighted by an
//! outer/middle-ear response, grouped into quarter-Bark critical bands,
//! and compared against a masking pattern built from the reference: band
//! energies plus a frequency-dependent internal-noise floor, smeared by
//! two-sided level-dependent spreading and renormalized. The result is the
//! mean noise/mask energy ratio over all bands and frames; -10 dB is the
//! conventional audibility line for aliasing.
//!
//! The masking pattern depends only on the reference, so for a fixed
//! target the whole model collapses to constant per-bin weights on the
//! squared magnitude error; [`NmrConfig::frame_bin_weights`] exposes those
//! for gradient work.

use serde::Serialize;

use crate::signal::hann_symmetric;
use crate::spectrum::stft;
use crate::{Error, Result};

/// Critical-band resolution in Bark.
pub const BARK_STEP: f64 = 0.25;
/// Band coverage in Hz.
pub const BAND_LOW_HZ: f64 = 80.0;
pub const BAND_HIGH_HZ: f64 = 18_000.0;
/// Playback level assumed for full scale, dB SPL.
pub const LISTENING_LEVEL_DB: f64 = 92.0;
/// Downward masking slope, dB per Bark.
pub const LOWER_SLOPE_DB: f64 = 27.0;
/// Floor applied to the linear mean before taking dB.
pub const NMR_FLOOR_LINEAR: f64 = 1e-12;

fn bark(f: f64) -> f64 {
    7.0 * (f / 650.0).asinh()
}

fn inv_bark(z: f64) -> f64 {
    650.0 * (z / 7.0).sinh()
}

/// Outer/middle-ear amplitude weight at `freq_hz` (0 at DC).
pub fn ear_weight(freq_hz: f64) -> f64 {
    if freq_hz <= 0.0 {
        return 0.0;
    }
    let khz = freq_hz / 1000.0;
    let db = -0.6 * 3.64 * khz.powf(-0.8) + 6.5 * (-0.6 * (khz - 3.3).powi(2)).exp()
        - 1e-3 * khz.powf(3.6);
    10f64.powf(db / 20.0)
}

/// Frequency-dependent internal noise added to the masker, linear energy.
pub fn internal_noise(center_hz: f64) -> f64 {
    10f64.powf(0.4 * 0.364 * (center_hz / 1000.0).powf(-0.8))
}

/// Precomputed tables for one sample rate / FFT size.
#[derive(Debug, Clone, Serialize)]
pub struct NmrConfig {
    pub rate: u32,
    pub nfft: usize,
    pub hop: usize,
    /// Number of critical bands.
    pub bands: usize,
    pub band_low_hz: Vec<f64>,
    pub band_high_hz: Vec<f64>,
    pub band_center_hz: Vec<f64>,
    /// Per band: first covered FFT bin and the fraction of each
    /// subsequent bin's bandwidth inside the band.
    pub grouping: Vec<(usize, Vec<f64>)>,
    /// Ear weight per FFT bin (amplitude domain).
    pub ear_weight: Vec<f64>,
    /// Internal noise per band (energy domain).
    pub internal_noise: Vec<f64>,
    /// STFT magnitude scale: maps full scale to the listening level and
    /// absorbs window energy normalization.
    pub level_scale: f64,
    /// Per-band normalization for the spreading stage (unit-energy
    /// spread pattern raised through the nonlinear combination).
    spread_norm: Vec<f64>,
    #[serde(skip)]
    window: Vec<f64>,
}

impl NmrConfig {
    /// Build tables for `rate` with the standard 2048/50% STFT.
    pub fn new(rate: u32) -> Result<Self> {
        Self::with_stft(rate, 2048, 1024)
    }

    pub fn with_stft(rate: u32, nfft: usize, hop: usize) -> Result<Self> {
        if (rate as f64) / 2.0 <= BAND_HIGH_HZ {
            return Err(Error::Usage(format!(
                "sample rate {rate} too low for the {BAND_HIGH_HZ} Hz masking model"
            )));
        }
        if nfft < 16 || hop == 0 || hop > nfft {
            return Err(Error::Usage(format!("bad stft geometry: nfft {nfft}, hop {hop}")));
        }
        let z_lo = bark(BAND_LOW_HZ);
        let z_hi = bark(BAND_HIGH_HZ);
        let bands = ((z_hi - z_lo) / BARK_STEP).ceil() as usize;
        let mut band_low_hz = Vec::with_capacity(bands);
        let mut band_high_hz = Vec::with_capacity(bands);
        let mut band_center_hz = Vec::with_capacity(bands);
        for c in 0..bands {
            let zl = z_lo + c as f64 * BARK_STEP;
            let zu = (zl + BARK_STEP).min(z_hi);
            band_low_hz.push(inv_bark(zl));
            band_high_hz.push(inv_bark(zu));
            band_center_hz.push(inv_bark(0.5 * (zl + zu)));
        }
        let bins = nfft / 2 + 1;
        let df = rate as f64 / nfft as f64;
        let mut grouping = Vec::with_capacity(bands);
        for c in 0..bands {
            let (fl, fu) = (band_low_hz[c], band_high_hz[c]);
            let k_first = ((fl / df - 0.5).floor().max(0.0)) as usize;
            let mut start = None;
            let mut weights = Vec::new();
            for k in k_first..bins {
                let lo = k as f64 * df - df / 2.0;
                let hi = k as f64 * df + df / 2.0;
                let ov = fu.min(hi) - fl.max(lo);
                if ov > 0.0 {
                    if start.is_none() {
                        start = Some(k);
                    }
                    weights.push(ov / df);
                } else if start.is_some() {
                    break;
                }
            }
            grouping.push((start.unwrap_or(0), weights));
        }
        let ear: Vec<f64> = (0..bins).map(|k| ear_weight(k as f64 * df)).collect();
        let noise: Vec<f64> = band_center_hz.iter().map(|&f| internal_noise(f)).collect();
        let level_scale =
            10f64.powf(LISTENING_LEVEL_DB / 20.0) * (8.0 / 3.0f64).sqrt() / nfft as f64;
        let mut cfg = NmrConfig {
            rate,
            nfft,
            hop,
            bands,
            band_low_hz,
            band_high_hz,
            band_center_hz,
            grouping,
            ear_weight: ear,
            internal_noise: noise,
            level_scale,
            spread_norm: Vec::new(),
            window: hann_symmetric(nfft),
        };
        // Unit-energy spread pattern, pushed through the same nonlinear
        // combination, normalizes the level-dependent pass.
        cfg.spread_norm = cfg.spread_raw(&vec![1.0; bands], true);
        Ok(cfg)
    }

    /// Calibrated magnitude columns of the signal's STFT.
    pub fn stft_magnitudes(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let m = stft(x, &self.window, self.hop)?;
        Ok(m
            .cols
            .iter()
            .map(|col| col.iter().map(|c| c.norm() * self.level_scale).collect())
            .collect())
    }

    /// Group per-bin energies `v[k]` into bands: `sum_k U[c,k] * v[k]`.
    pub fn group(&self, v: &[f64]) -> Vec<f64> {
        self.grouping
            .iter()
            .map(|(start, w)| {
                w.iter()
                    .enumerate()
                    .map(|(i, &u)| u * v[start + i])
                    .sum()
            })
            .collect()
    }

    /// Two-sided level-dependent spreading of band energies. The downward
    /// slope is fixed; the upward slope flattens with band level. Each
    /// source band's pattern is normalized to unit sum, patterns combine
    /// through a compressive exponent, and the result is renormalized by
    /// the unit-energy pattern so silence maps through consistently.
    pub fn spread(&self, energies: &[f64]) -> Vec<f64> {
        self.spread_raw(energies, false)
    }

    fn spread_raw(&self, energies: &[f64], skip_norm: bool) -> Vec<f64> {
        const ALPHA: f64 = 0.4;
        let c = self.bands;
        debug_assert_eq!(energies.len(), c);
        let step_down = 10f64.powf(-BARK_STEP * LOWER_SLOPE_DB / 10.0); // toward lower bands
        let down_alpha = step_down.powf(ALPHA);
        let mut acc = vec![0.0; c];
        for j in 0..c {
            let e = energies[j];
            if e <= 0.0 {
                continue;
            }
            let level_db = 10.0 * e.max(1e-30).log10();
            let up_slope = 24.0 + 230.0 / self.band_center_hz[j] - 0.2 * level_db;
            let step_up = 10f64.powf(-BARK_STEP * up_slope / 10.0);
            // Pattern sum for normalization: geometric series both ways.
            let mut pat_sum = 1.0;
            let mut g = 1.0;
            for _ in 0..j {
                g *= step_down;
                pat_sum += g;
            }
            g = 1.0;
            for _ in j + 1..c {
                g *= step_up;
                pat_sum += g;
            }
            let base = (e / pat_sum).powf(ALPHA);
            acc[j] += base;
            let up_alpha = step_up.powf(ALPHA);
            let mut t = base;
            for i in (0..j).rev() {
                t *= down_alpha;
                acc[i] += t;
            }
            t = base;
            for a in acc.iter_mut().take(c).skip(j + 1) {
                t *= up_alpha;
                *a += t;
            }
        }
        let combined: Vec<f64> = acc.iter().map(|&a| a.powf(1.0 / ALPHA)).collect();
        if skip_norm {
            combined
        } else {
            combined
                .iter()
                .zip(&self.spread_norm)
                .map(|(&v, &n)| v / n)
                .collect()
        }
    }

    /// Masking pattern for one reference magnitude column: ear-weighted
    /// band energies plus internal noise, spread across bands.
    pub fn masking_pattern(&self, ref_mags: &[f64]) -> Vec<f64> {
        let weighted_sq: Vec<f64> = ref_mags
            .iter()
            .zip(&self.ear_weight)
            .map(|(&m, &w)| {
                let v = m * w;
                v * v
            })
            .collect();
        let mut e = self.group(&weighted_sq);
        for (b, n) in e.iter_mut().zip(&self.internal_noise) {
            *b += n;
        }
        self.spread(&e)
    }

    /// Noise pattern for one frame: ear-weighted squared magnitude error,
    /// grouped into bands.
    pub fn noise_pattern(&self, hat_mags: &[f64], ref_mags: &[f64]) -> Vec<f64> {
        let err_sq: Vec<f64> = hat_mags
            .iter()
            .zip(ref_mags)
            .zip(&self.ear_weight)
            .map(|((&a, &b), &w)| {
                let v = w * (a - b);
                v * v
            })
            .collect();
        self.group(&err_sq)
    }

    /// Mean noise/mask ratio (linear) between two signals of equal length.
    pub fn nmr_linear(&self, x_hat: &[f64], x_ref: &[f64]) -> Result<f64> {
        if x_hat.len() != x_ref.len() {
            return Err(Error::Data(format!(
                "nmr inputs differ in length: {} vs {}",
                x_hat.len(),
                x_ref.len()
            )));
        }
        let hat = self.stft_magnitudes(x_hat)?;
        let re = self.stft_magnitudes(x_ref)?;
        let mut total = 0.0;
        for (h, r) in hat.iter().zip(&re) {
            let n = self.noise_pattern(h, r);
            let m = self.masking_pattern(r);
            for (nn, mm) in n.iter().zip(&m) {
                total += nn / mm;
            }
        }
        Ok(total / (self.bands * hat.len()) as f64)
    }

    /// NMR in dB with the standard floor.
    pub fn nmr_db(&self, x_hat: &[f64], x_ref: &[f64]) -> Result<f64> {
        Ok(to_db(self.nmr_linear(x_hat, x_ref)?))
    }

    /// Per-bin weights `g[k]` for one reference frame such that the
    /// frame's band-mean noise/mask ratio equals
    /// `sum_k g[k] * (|X_hat[k]| - |X_ref[k]|)^2` on *unscaled* STFT
    /// magnitudes. Folds the level calibration, ear weighting, band
    /// grouping, and masking denominator into one table.
    pub fn frame_bin_weights(&self, ref_mags_unscaled: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = ref_mags_unscaled.iter().map(|&m| m * self.level_scale).collect();
        let mask = self.masking_pattern(&scaled);
        let mut g = vec![0.0; self.nfft / 2 + 1];
        for (c, (start, w)) in self.grouping.iter().enumerate() {
            for (i, &u) in w.iter().enumerate() {
                g[start + i] += u / mask[c];
            }
        }
        let bands = self.bands as f64;
        for (k, gk) in g.iter_mut().enumerate() {
            let we = self.ear_weight[k] * self.level_scale;
            *gk *= we * we / bands;
        }
        g
    }

    /// Frames the standard pipeline sees for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.nfft {
            0
        } else {
            (len - self.nfft) / self.hop + 1
        }
    }
}

/// Energy ratio to dB with the standard floor.
pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.max(NMR_FLOOR_LINEAR).log10()
}
