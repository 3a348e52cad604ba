"""Synthetic cough corpus for desk-scale end-to-end runs.

Coughs are ~300 ms bursts with three phases (explosive, intermediate,
voiced) and most energy around 500 Hz, plus a secondary resonance in
1-1.5 kHz. Negative foreground events (speech-like vowels, knocks, beeps,
door slams) and stationary background noise (white plus babble-like) are
mixed in at a scenario-specific SNR.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, iirpeak, lfilter, resample_poly, sosfilt

from .dsp import write_wav
from .features import write_annotations

SCENARIO_SNR_DB = {"part1": 30.0, "part2": 10.0, "part3": 0.0}
BABBLE_RATE = 11025


@dataclass
class SynthSpec:
    n_patients: int = 4
    coughs_per_scenario: int = 200
    others_per_cough: float = 1.0
    sample_rate: int = 44100
    snr_db: dict | None = None
    snr_spread_db: float = 6.0
    babble_share: float = 0.5
    seed: int = 0


def _resonant_noise(rng, n, fs, centers, q=4.0):
    x = rng.normal(size=n)
    out = np.zeros(n)
    for fc, gain in centers:
        b, a = iirpeak(fc, q, fs=fs)
        out += gain * lfilter(b, a, x)
    return out


def cough_burst(rng, fs=44100, duration=None):
    """One cough event; returns unit-RMS samples."""
    duration = duration or rng.uniform(0.25, 0.45)
    n = int(duration * fs)
    t = np.arange(n) / fs
    n1, n2 = int(0.25 * n), int(0.75 * n)
    peak = rng.uniform(430, 570)
    second = rng.uniform(1000, 1500)
    noise = _resonant_noise(rng, n, fs, [(peak, 1.0), (second, 0.5), (250.0, 0.25)], q=3.0)
    env = np.empty(n)
    env[:n1] = np.exp(-((t[:n1] - t[n1 // 3]) ** 2) / (2 * (0.15 * t[n1] + 1e-4) ** 2))
    env[n1:n2] = 0.6 * np.exp(-3.0 * (t[n1:n2] - t[n1]) / max(t[n2 - 1] - t[n1], 1e-3))
    env[n2:] = 0.25
    env[: max(n1 // 3, 1)] = np.linspace(0, 1, max(n1 // 3, 1)) * env[max(n1 // 3, 1) - 1]
    burst = env * noise
    f0 = rng.uniform(280, 420)
    voiced = sum(np.sin(2 * np.pi * h * f0 * t[n2:]) / h for h in range(1, 5))
    burst[n2:] += 0.5 * np.std(burst[n1:n2]) * voiced * np.hanning(n - n2)
    burst *= np.hanning(n) ** 0.1
    return burst / np.sqrt(np.mean(burst ** 2))


def other_event(rng, fs=44100):
    """A non-cough foreground event with unit RMS."""
    kind = rng.choice(["vowel", "knock", "beep", "slam"])
    if kind == "vowel":
        n = int(rng.uniform(0.3, 0.8) * fs)
        t = np.arange(n) / fs
        f0 = rng.uniform(100, 220) * (1 + 0.05 * np.sin(2 * np.pi * 3 * t))
        phase = 2 * np.pi * np.cumsum(f0) / fs
        src = sum(np.sin(h * phase) / h for h in range(1, 20))
        x = np.zeros(n)
        for fc, g in ((rng.uniform(600, 900), 1.0), (rng.uniform(1100, 1800), 0.6),
                      (rng.uniform(2300, 3000), 0.3)):
            b, a = iirpeak(fc, 6.0, fs=fs)
            x += g * lfilter(b, a, src)
        x *= np.hanning(n)
    elif kind == "knock":
        n = int(0.12 * fs)
        t = np.arange(n) / fs
        x = rng.normal(size=n) * np.exp(-t / 0.01)
        sos = butter(2, [100, 3000], btype="band", fs=fs, output="sos")
        x = sosfilt(sos, x)
    elif kind == "beep":
        n = int(rng.uniform(0.2, 0.5) * fs)
        t = np.arange(n) / fs
        x = np.sin(2 * np.pi * rng.uniform(1500, 3500) * t) * np.hanning(n) ** 0.2
    else:
        n = int(0.3 * fs)
        t = np.arange(n) / fs
        x = rng.normal(size=n) * np.exp(-t / 0.05)
        sos = butter(4, rng.uniform(150, 300), btype="low", fs=fs, output="sos")
        x = sosfilt(sos, x)
    return x / np.sqrt(np.mean(x ** 2))


def _harmonic_sum(phase, n_harmonics):
    """sum_h sin(h * phase) / h, by complex recursion instead of one sin per harmonic."""
    z = np.exp(1j * phase)
    w = z.copy()
    out = w.imag.copy()
    for h in range(2, n_harmonics + 1):
        w *= z
        out += w.imag / h
    return out


def _babble(rng, n, fs):
    t = np.arange(n) / fs
    babble = np.zeros(n)
    for _ in range(6):
        f0 = rng.uniform(100, 250) * (1 + 0.1 * np.sin(2 * np.pi * rng.uniform(0.2, 1) * t))
        voice = _harmonic_sum(2 * np.pi * np.cumsum(f0) / fs, 11)
        syll = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(2, 5) * t + rng.uniform(0, 6.28))
        babble += voice * syll
    sos = butter(2, [200, 3500], btype="band", fs=fs, output="sos")
    return sosfilt(sos, babble)


def background_noise(rng, n, fs=44100, babble_share=0.5):
    """Stationary unit-power mixture of white noise and babble-like noise.

    The white part is limited to the analysis band (below 5.5 kHz) so that
    the nominal SNR holds after downsampling to 11025 Hz.
    """
    white = rng.normal(size=n)
    if fs > BABBLE_RATE:
        white = sosfilt(butter(8, 0.5 * BABBLE_RATE, btype="low", fs=fs, output="sos"), white)
        white /= np.sqrt(np.mean(white ** 2))
    # babble is band-limited to 3.5 kHz, so it is synthesised at a lower rate
    up = fs // BABBLE_RATE if fs % BABBLE_RATE == 0 else 1
    babble = _babble(rng, -(-n // up), fs // up)
    if up > 1:
        babble = resample_poly(babble, up, 1)[:n]
    babble /= np.sqrt(np.mean(babble ** 2))
    mix = np.sqrt(1 - babble_share) * white + np.sqrt(babble_share) * babble
    return mix / np.sqrt(np.mean(mix ** 2))


def synth_recording(rng, n_coughs, snr_db, fs=44100, others_per_cough=1.0, cough_level=0.05,
                    snr_spread_db=6.0, babble_share=0.5):
    """Return ``(samples, intervals)`` for one patient-scenario recording.

    ``snr_db`` is the nominal cough-to-background ratio; each event's level
    is jittered uniformly by up to ``snr_spread_db`` either way, so a
    recording holds a spread of per-event SNRs around the nominal value.
    """
    events = ["cough"] * n_coughs + ["other"] * int(round(others_per_cough * n_coughs))
    rng.shuffle(events)
    pieces, intervals, pos = [], [], int(rng.uniform(1.0, 2.0) * fs)
    waves = []
    for kind in events:
        wave = cough_burst(rng, fs) if kind == "cough" else other_event(rng, fs)
        level = cough_level * 10 ** (rng.uniform(-snr_spread_db, snr_spread_db) / 20)
        waves.append((pos, level * wave, kind))
        pos += len(wave) + int(rng.uniform(0.8, 2.0) * fs)
    total = pos + int(fs)
    x = np.zeros(total)
    for start, wave, kind in waves:
        x[start:start + len(wave)] += wave
        intervals.append((start / fs, (start + len(wave)) / fs, kind))
    noise_rms = cough_level / np.sqrt(10 ** (snr_db / 10.0))
    x += noise_rms * background_noise(rng, total, fs, babble_share)
    return np.clip(x, -1.0, 1.0), intervals


def generate_corpus(out_dir, spec: SynthSpec | None = None) -> Path:
    """Write WAVs, annotation CSVs and ``manifest.csv`` under ``out_dir``."""
    spec = spec or SynthSpec()
    snr = spec.snr_db or SCENARIO_SNR_DB
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    rows = []
    per_patient = np.full(spec.n_patients, spec.coughs_per_scenario // spec.n_patients)
    per_patient[: spec.coughs_per_scenario % spec.n_patients] += 1
    for scenario, level in snr.items():
        for p in range(spec.n_patients):
            pid = f"p{p + 1:02d}"
            samples, intervals = synth_recording(
                rng, int(per_patient[p]), level, spec.sample_rate, spec.others_per_cough,
                snr_spread_db=spec.snr_spread_db, babble_share=spec.babble_share,
            )
            stem = f"{pid}_{scenario}"
            write_wav(out / f"{stem}.wav", samples, spec.sample_rate)
            write_annotations(out / f"{stem}.csv", intervals)
            rows.append((f"{stem}.wav", f"{stem}.csv", pid, scenario))
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["wav", "annotation", "patient_id", "scenario"])
        w.writerows(rows)
    return manifest
