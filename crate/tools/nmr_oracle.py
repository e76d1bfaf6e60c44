#!/usr/bin/env python3
"""Independent reference implementation of the noise-to-mask ratio.

Straight NumPy port of the published perceptual-masking equations, kept
deliberately free of any code sharing with the Rust crate. Running it
regenerates ``crates/dealias/tests/fixtures/nmr_oracle.json``, whose
values the Rust test suite must reproduce within 0.1 dB on ten fixed
signal pairs.
"""

import json
import pathlib

import numpy as np

FS = 44100
NFFT = 2048
HOP = 1024
RES = 0.25
FLOOR = 1e-12


def bark(f):
    return 7.0 * np.arcsinh(f / 650.0)


def inv_bark(z):
    return 650.0 * np.sinh(z / 7.0)


def build_cfg(fs=FS, nfft=NFFT):
    K = nfft // 2 + 1
    z_lo, z_hi = bark(80.0), bark(18000.0)
    C = int(np.ceil((z_hi - z_lo) / RES))
    fl = np.zeros(C)
    fu = np.zeros(C)
    fc = np.zeros(C)
    for c in range(C):
        zl = z_lo + c * RES
        zu = min(zl + RES, z_hi)
        fl[c] = inv_bark(zl)
        fu[c] = inv_bark(zu)
        fc[c] = inv_bark(0.5 * (zl + zu))
    df = fs / nfft
    # U[c, k]: fraction of bin k's bandwidth that falls inside band c.
    U = np.zeros((C, K))
    for c in range(C):
        for k in range(K):
            lo, hi = k * df - df / 2, k * df + df / 2
            ov = min(fu[c], hi) - max(fl[c], lo)
            if ov > 0:
                U[c, k] = ov / df
    # Outer/middle ear weight (amplitude domain), zero at DC.
    fk = np.arange(K) * df
    with np.errstate(divide="ignore"):
        a_db = (
            -0.6 * 3.64 * (fk / 1000.0) ** -0.8
            + 6.5 * np.exp(-0.6 * (fk / 1000.0 - 3.3) ** 2)
            - 1e-3 * (fk / 1000.0) ** 3.6
        )
    omega = 10.0 ** (a_db / 20.0)
    omega[0] = 0.0
    mu = 10.0 ** (0.4 * 0.364 * (fc / 1000.0) ** -0.8)
    return dict(fs=fs, nfft=nfft, K=K, C=C, fl=fl, fu=fu, fc=fc, U=U, omega=omega, mu=mu)


def stft_mag(x, cfg):
    N = cfg["nfft"]
    n = np.arange(N)
    w = 0.5 * (1.0 - np.cos(2 * np.pi * n / (N - 1)))  # symmetric Hann
    T = (len(x) - N) // HOP + 1
    scale = 10.0 ** (92.0 / 20.0) * np.sqrt(8.0 / 3.0) / N
    M = np.zeros((cfg["K"], T))
    for t in range(T):
        fr = x[t * HOP : t * HOP + N] * w
        M[:, t] = scale * np.abs(np.fft.rfft(fr))
    return M


def spread(E, cfg):
    """Level-dependent spreading with compressive (alpha = 0.4)
    combination, normalized by the unit-energy pattern."""
    C = cfg["C"]
    fc = cfg["fc"]
    i = np.arange(C)
    acc = np.zeros(C)
    acc0 = np.zeros(C)
    for j in range(C):
        if E[j] > 0.0:
            L = 10.0 * np.log10(E[j])
        else:
            L = -300.0
        su = 24.0 + 230.0 / fc[j] - 0.2 * L
        su0 = 24.0 + 230.0 / fc[j]
        att = np.where(i <= j, (j - i) * RES * 27.0, (i - j) * RES * su)
        att0 = np.where(i <= j, (j - i) * RES * 27.0, (i - j) * RES * su0)
        s = 10.0 ** (-att / 10.0)
        s0 = 10.0 ** (-att0 / 10.0)
        if E[j] > 0.0:
            acc += (E[j] * s / s.sum()) ** 0.4
        acc0 += (s0 / s0.sum()) ** 0.4
    return acc**2.5 / acc0**2.5


def nmr_db(x_hat, x_ref, cfg):
    Sh = stft_mag(np.asarray(x_hat, dtype=np.float64), cfg)
    Sr = stft_mag(np.asarray(x_ref, dtype=np.float64), cfg)
    U, om, mu = cfg["U"], cfg["omega"], cfg["mu"]
    C, T = cfg["C"], Sh.shape[1]
    total = 0.0
    for t in range(T):
        diff = om * (Sh[:, t] - Sr[:, t])
        noise = U @ (diff * diff)
        excite = U @ ((om * Sr[:, t]) ** 2) + mu
        mask = spread(excite, cfg)
        total += np.sum(noise / mask)
    return 10.0 * np.log10(max(total / (C * T), FLOOR))


def fixtures():
    n = np.arange(FS, dtype=np.float64)
    t = n / FS

    def sine(f, a, ph=0.0):
        return a * np.sin(2 * np.pi * f * t + ph)

    s440 = sine(440.0, 0.5)
    s550 = sine(550.0, 0.3)
    masker = sine(997.0, 0.4) + sine(1994.0, 0.2, 0.5)
    stack = sum(sine(880.0 * m, 0.1 / m, 0.1 * m) for m in range(1, 6))
    stack_pert = stack - sine(880.0 * 4, 0.1 / 4, 0.4) + sine(880.0 * 4, 0.11, 0.4)

    pairs = [
        ("identical", s440, s440.copy()),
        ("partial_5077", s440 + sine(5077.0, 0.003, 0.3), s440),
        ("masked_partial", masker + sine(1234.5, 0.001, 1.0), masker),
        ("tanh_phase_offset", np.tanh(4.0 * sine(2394.3, 0.5)),
         np.tanh(4.0 * 0.5 * np.sin(2 * np.pi * 2394.3 * t + 0.001))),
        ("amplitude_error", sine(1000.0, 0.26), sine(1000.0, 0.25)),
        ("clip_vs_sine", np.clip(sine(4186.0, 1.0), -0.5, 0.5), sine(4186.0, 0.637)),
        ("quiet_partial", sine(2000.0, 0.01) + sine(7321.0, 0.0005), sine(2000.0, 0.01)),
        ("low_clip_pair", np.clip(sine(110.0, 0.9), -0.3, 0.3),
         np.clip(sine(110.0, 0.9), -0.31, 0.31)),
        ("dc_offset", s550 + 0.01, s550),
        ("harmonic_perturb", stack_pert, stack),
    ]
    return pairs


def main():
    cfg = build_cfg()
    assert cfg["C"] == 109, cfg["C"]
    rows = []
    for name, hat, ref in fixtures():
        v = nmr_db(hat, ref, cfg)
        rows.append({"name": name, "nmr_db": v})
        print(f"{name:20s} {v:10.4f} dB")
    out = pathlib.Path(__file__).resolve().parents[1] / "crates/dealias/tests/fixtures/nmr_oracle.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"rate": FS, "tolerance_db": 0.1, "pairs": rows}, indent=2) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
