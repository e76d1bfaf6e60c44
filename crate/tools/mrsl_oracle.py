#!/usr/bin/env python3
"""Independent reference for the multi-resolution log-mel spectral
distance. Regenerates ``crates/dealias/tests/fixtures/mrsl_oracle.json``;
the Rust implementation must match within 1e-6 on the fixture pairs."""

import json
import pathlib

import numpy as np

FS = 44100
SIZES = (512, 1024, 2048)
BANDS = 128
LOG_FLOOR = 1e-5


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def filterbank(nfft, fs=FS, bands=BANDS):
    n_bins = nfft // 2 + 1
    edges = mel_to_hz(hz_to_mel(fs / 2.0) * np.arange(bands + 2) / (bands + 1))
    fk = np.arange(n_bins) * fs / nfft
    fb = np.zeros((bands, n_bins))
    for b in range(bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        rise = (fk - lo) / (mid - lo)
        fall = (hi - fk) / (hi - mid)
        w = np.minimum(rise, fall)
        w[(fk <= lo) | (fk >= hi)] = 0.0
        fb[b] = np.maximum(w, 0.0)
    return fb


def log_mel(x, nfft):
    n = np.arange(nfft)
    w = 0.5 * (1.0 - np.cos(2 * np.pi * n / (nfft - 1)))  # symmetric Hann
    hop = nfft // 4
    T = (len(x) - nfft) // hop + 1
    fb = filterbank(nfft)
    M = np.zeros((BANDS, T))
    for t in range(T):
        mag = np.abs(np.fft.rfft(x[t * hop : t * hop + nfft] * w))
        M[:, t] = np.log(np.maximum(fb @ mag, LOG_FLOOR))
    return M


def mrsl(target, pred):
    acc = 0.0
    for nfft in SIZES:
        lt = log_mel(target, nfft)
        lp = log_mel(pred, nfft)
        acc += np.linalg.norm(lt - lp) / np.linalg.norm(lt)
    return acc / len(SIZES)


def main():
    n = np.arange(16384, dtype=np.float64)
    t = n / FS

    def sine(f, a, ph=0.0):
        return a * np.sin(2 * np.pi * f * t + ph)

    pairs = [
        ("octave_apart", sine(440.0, 0.5), sine(880.0, 0.5)),
        ("tanh_drive", sine(220.0, 0.4), np.tanh(3.0 * sine(220.0, 0.4))),
        ("partial_shift", sine(997.0, 0.3) + sine(2991.0, 0.1, 0.2),
         sine(997.0, 0.3) + sine(3100.0, 0.1, 0.2)),
    ]
    rows = []
    for name, target, pred in pairs:
        v = mrsl(target, pred)
        rows.append({"name": name, "mrsl": float(v)})
        print(f"{name:16s} {v:.9f}")
    out = pathlib.Path(__file__).resolve().parents[1] / "crates/dealias/tests/fixtures/mrsl_oracle.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"rate": FS, "len": 16384, "tolerance": 1e-6, "pairs": rows}, indent=2) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
