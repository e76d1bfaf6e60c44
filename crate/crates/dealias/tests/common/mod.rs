//! Shared fixture construction for integration tests. The signal
//! formulas here mirror `tools/nmr_oracle.py` and `tools/mrsl_oracle.py`
//! term for term; any edit must be made in both places and the fixture
//! JSONs regenerated.
#![allow(dead_code)]

use std::f64::consts::TAU;

pub fn sine(f: f64, a: f64, ph: f64, len: usize, rate: u32) -> Vec<f64> {
    (0..len)
        .map(|n| a * (TAU * f * n as f64 / rate as f64 + ph).sin())
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn clip(x: &[f64], lim: f64) -> Vec<f64> {
    x.iter().map(|v| v.clamp(-lim, lim)).collect()
}

fn tanh_of(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// The ten (name, degraded, reference) pairs of the NMR agreement
/// fixture, all 1 s at `rate`.
pub fn nmr_fixture_pairs(rate: u32) -> Vec<(&'static str, Vec<f64>, Vec<f64>)> {
    let n = rate as usize;
    let s440 = sine(440.0, 0.5, 0.0, n, rate);
    let s550 = sine(550.0, 0.3, 0.0, n, rate);
    let masker = add(&sine(997.0, 0.4, 0.0, n, rate), &sine(1994.0, 0.2, 0.5, n, rate));
    let mut stack = vec![0.0; n];
    for m in 1..6 {
        stack = add(&stack, &sine(880.0 * m as f64, 0.1 / m as f64, 0.1 * m as f64, n, rate));
    }
    let stack_pert = add(
        &sub(&stack, &sine(880.0 * 4.0, 0.025, 0.4, n, rate)),
        &sine(880.0 * 4.0, 0.11, 0.4, n, rate),
    );
    vec![
        ("identical", s440.clone(), s440.clone()),
        ("partial_5077", add(&s440, &sine(5077.0, 0.003, 0.3, n, rate)), s440.clone()),
        ("masked_partial", add(&masker, &sine(1234.5, 0.001, 1.0, n, rate)), masker.clone()),
        (
            "tanh_phase_offset",
            tanh_of(&sine(2394.3, 0.5, 0.0, n, rate).iter().map(|v| 4.0 * v).collect::<Vec<_>>()),
            tanh_of(&sine(2394.3, 0.5, 0.001, n, rate).iter().map(|v| 4.0 * v).collect::<Vec<_>>()),
        ),
        ("amplitude_error", sine(1000.0, 0.26, 0.0, n, rate), sine(1000.0, 0.25, 0.0, n, rate)),
        (
            "clip_vs_sine",
            clip(&sine(4186.0, 1.0, 0.0, n, rate), 0.5),
            sine(4186.0, 0.637, 0.0, n, rate),
        ),
        (
            "quiet_partial",
            add(&sine(2000.0, 0.01, 0.0, n, rate), &sine(7321.0, 0.0005, 0.0, n, rate)),
            sine(2000.0, 0.01, 0.0, n, rate),
        ),
        (
            "low_clip_pair",
            clip(&sine(110.0, 0.9, 0.0, n, rate), 0.3),
            clip(&sine(110.0, 0.9, 0.0, n, rate), 0.31),
        ),
        ("dc_offset", s550.iter().map(|v| v + 0.01).collect(), s550.clone()),
        ("harmonic_perturb", stack_pert, stack),
    ]
}

/// The (name, target, prediction) pairs of the spectral-distance
/// fixture, 16384 samples at `rate`.
pub fn mrsl_fixture_pairs(rate: u32) -> Vec<(&'static str, Vec<f64>, Vec<f64>)> {
    let n = 16384usize;
    vec![
        ("octave_apart", sine(440.0, 0.5, 0.0, n, rate), sine(880.0, 0.5, 0.0, n, rate)),
        (
            "tanh_drive",
            sine(220.0, 0.4, 0.0, n, rate),
            tanh_of(&sine(220.0, 0.4, 0.0, n, rate).iter().map(|v| 3.0 * v).collect::<Vec<_>>()),
        ),
        (
            "partial_shift",
            add(&sine(997.0, 0.3, 0.0, n, rate), &sine(2991.0, 0.1, 0.2, n, rate)),
            add(&sine(997.0, 0.3, 0.0, n, rate), &sine(3100.0, 0.1, 0.2, n, rate)),
        ),
    ]
}
