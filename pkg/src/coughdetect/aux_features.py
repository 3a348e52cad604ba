"""Complementary short-term descriptors: HR, root MFCC, ASF, NASE, TI, ChroEn, SSCH.

These work on the Hamming-windowed magnitude spectrum of the whole frame
(a single FFT), not on the Welch PSD. :class:`AuxFeatureExtractor` builds
the filterbanks once; the module-level functions use a default instance.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct

from .config import AuxConfig

SILENCE = 1e-15
AUX_DIM = 56


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def hz_to_bark(f):
    f = np.asarray(f, dtype=np.float64)
    return 13.0 * np.arctan(0.00076 * f) + 3.5 * np.arctan((f / 7500.0) ** 2)


@dataclass(frozen=True)
class FilterBank:
    scale: str
    n_filters: int
    range_hz: tuple
    weights: np.ndarray  # (n_filters, n_bins)


def _ensure_support(weights, freqs, centers):
    for i in range(weights.shape[0]):
        if not np.any(weights[i] > 0):
            weights[i, int(np.argmin(np.abs(freqs - centers[i])))] = 1.0
    return weights


def mel_filterbank(freqs, n_filters=30, lo=0.0, hi=4000.0) -> FilterBank:
    """Unit-height triangular mel filters; interior bins sum to one."""
    pts = mel_to_hz(np.linspace(hz_to_mel(lo), hz_to_mel(hi), n_filters + 2))
    left, center, right = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (freqs - left) / (center - left)
    down = (right - freqs) / (right - center)
    weights = np.maximum(0.0, np.minimum(up, down))
    return FilterBank("mel", n_filters, (lo, hi), _ensure_support(weights, freqs, pts[1:-1]))


def octave_bands(freqs, n_bands=13, lo=62.5, hi=4000.0) -> FilterBank:
    """Rectangular log-spaced bands: ``n_bands`` equal steps on a log2 axis."""
    edges = lo * (hi / lo) ** (np.arange(n_bands + 1) / n_bands)
    weights = ((freqs >= edges[:-1, None]) & (freqs < edges[1:, None])).astype(np.float64)
    centers = np.sqrt(edges[:-1] * edges[1:])
    return FilterBank("octave", n_bands, (lo, hi), _ensure_support(weights, freqs, centers))


def bark_filterbank(freqs, n_filters=30, width=3.0, lo=0.0, hi=4000.0) -> FilterBank:
    """Overlapping triangular filters ``width`` Barks wide, centres evenly spaced in Bark."""
    b_lo, b_hi = hz_to_bark(lo), hz_to_bark(hi)
    centers = np.linspace(b_lo + width / 2, b_hi - width / 2, n_filters)
    bark = hz_to_bark(freqs)
    weights = np.maximum(0.0, 1.0 - np.abs(bark[None, :] - centers[:, None]) / (width / 2))
    weights[:, (freqs < lo) | (freqs > hi)] = 0.0
    center_hz = np.interp(centers, bark, freqs)
    return FilterBank("bark", n_filters, (lo, hi), _ensure_support(weights, freqs, center_hz))


class AuxFeatureExtractor:
    """Batched extractor for the 56 auxiliary dimensions.

    Parameters
    ----------
    config : AuxConfig, optional
        Filterbank and range constants.
    sample_rate, frame_length : int
        Geometry of the frames passed to :meth:`transform`.
    """

    def __init__(self, config: AuxConfig | None = None, sample_rate=11025, frame_length=825):
        self.config = config or AuxConfig()
        self.sample_rate = sample_rate
        self.frame_length = frame_length
        cfg = self.config
        self.n_fft = max(cfg.n_fft, frame_length)
        self.freqs = np.fft.rfftfreq(self.n_fft, 1.0 / sample_rate)
        self.window = np.hamming(frame_length)
        self.mel = mel_filterbank(self.freqs, cfg.mfcc_filters, *cfg.mfcc_range_hz)
        self.octave = octave_bands(self.freqs, cfg.mpeg7_bands, *cfg.mpeg7_range_hz)
        self.bark = bark_filterbank(
            self.freqs, cfg.ssch_filters, cfg.ssch_width_bark, *cfg.ssch_range_hz
        )
        lo, hi = cfg.chroma_range_hz
        in_range = (self.freqs >= lo) & (self.freqs <= hi)
        pitch = np.zeros(len(self.freqs), dtype=int)
        pitch[in_range] = np.mod(
            np.round(12.0 * np.log2(self.freqs[in_range] / cfg.chroma_ref_hz)).astype(int), 12
        )
        self.chroma_map = np.zeros((12, len(self.freqs)))
        self.chroma_map[pitch[in_range], np.flatnonzero(in_range)] = 1.0
        lo, hi = cfg.ti_range_hz
        self.ti_bins = np.flatnonzero((self.freqs >= lo) & (self.freqs <= hi))
        self.min_lag = int(round(cfg.hr_min_lag_ms * 1e-3 * sample_rate))
        self.max_lag = int(round(cfg.hr_max_lag_ms * 1e-3 * sample_rate))
        self.ssch_edges = np.linspace(cfg.ssch_range_hz[0], cfg.ssch_range_hz[1], cfg.ssch_bins + 1)

    @staticmethod
    def feature_names(config: AuxConfig | None = None) -> list[str]:
        cfg = config or AuxConfig()
        n = cfg.n_cepstra
        return (
            ["hr"]
            + [f"rmfcc_{i}" for i in range(1, n + 1)]
            + [f"asf_{i}" for i in range(1, cfg.mpeg7_bands + 1)]
            + [f"nase_{i}" for i in range(1, cfg.mpeg7_bands + 2)]
            + ["ti", "chroen"]
            + [f"ssch_{i}" for i in range(1, n + 1)]
        )

    def _frames(self, frames):
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 1:
            frames = frames[None, :]
        if frames.shape[-1] != self.frame_length:
            raise ValueError(f"expected {self.frame_length}-sample frames, got {frames.shape[-1]}")
        return frames

    def power_spectrum(self, frames):
        spec = np.fft.rfft(self._frames(frames) * self.window, n=self.n_fft, axis=-1)
        return spec.real ** 2 + spec.imag ** 2

    # -- individual descriptors (all batched over rows) ----------------------

    def harmonic_ratio(self, frames):
        """Maximum normalised autocorrelation over the pitch-lag range."""
        x = self._frames(frames)
        n = x.shape[-1]
        spec = np.fft.rfft(x, n=2 * n, axis=-1)
        acf = np.fft.irfft(spec.real ** 2 + spec.imag ** 2, n=2 * n, axis=-1)[:, :n]
        energy = np.cumsum(x * x, axis=-1)
        total = energy[:, -1:]
        lags = np.arange(self.min_lag, min(self.max_lag, n - 1) + 1)
        tail = total - energy[:, lags - 1]  # sum of x[n]^2 for n >= lag
        head = energy[:, n - 1 - lags]  # sum of x[n]^2 for n <= N-1-lag
        den = np.sqrt(tail * head)
        r = np.zeros_like(den)
        np.divide(acf[:, lags], den, out=r, where=den > SILENCE)
        return np.clip(r.max(axis=-1), 0.0, 1.0)

    def root_mfcc(self, frames=None, power=None):
        power = self.power_spectrum(frames) if power is None else power
        energies = power @ self.mel.weights.T
        coeffs = dct(energies ** self.config.mfcc_root, type=2, norm="ortho", axis=-1)
        return coeffs[:, 1:1 + self.config.n_cepstra]

    def _band_powers(self, power):
        return power @ self.octave.weights.T

    def audio_spectrum_flatness(self, frames=None, power=None):
        power = self.power_spectrum(frames) if power is None else power
        w = self.octave.weights
        out = np.zeros((power.shape[0], w.shape[0]))
        for i, row in enumerate(w):
            band = power[:, row > 0]
            am = band.mean(axis=-1)
            ok = band.sum(axis=-1) > SILENCE
            floored = np.maximum(band, 1e-12 * am[:, None] + 1e-300)
            gm = np.exp(np.log(floored).mean(axis=-1))
            out[:, i] = np.where(ok, np.minimum(gm / np.where(ok, am, 1.0), 1.0), 0.0)
        return out

    def nase(self, frames=None, power=None):
        """Unit-norm band power envelope followed by its norm (14 values)."""
        power = self.power_spectrum(frames) if power is None else power
        bands = self._band_powers(power)
        norm = np.sqrt((bands ** 2).sum(axis=-1))
        env = np.zeros_like(bands)
        np.divide(bands, norm[:, None], out=env, where=norm[:, None] > SILENCE)
        return np.column_stack([env, np.where(norm > SILENCE, norm, 0.0)])

    def tonal_index(self, frames=None, power=None):
        """Peak-to-background power ratio in dB within the tonal range."""
        power = self.power_spectrum(frames) if power is None else power
        sub = power[:, self.ti_bins]
        k = np.argmax(sub, axis=-1)
        peak = sub[np.arange(len(k)), k]
        near = np.abs(np.arange(sub.shape[-1])[None, :] - k[:, None]) <= self.config.ti_exclusion_bins
        background = np.where(near, 0.0, sub).sum(axis=-1) / np.maximum((~near).sum(axis=-1), 1)
        ok = (sub.sum(axis=-1) > SILENCE) & (background > 0)
        ratio = np.ones_like(peak)
        np.divide(peak, background, out=ratio, where=ok)
        return np.where(ok, 10.0 * np.log10(np.maximum(ratio, 1.0)), 0.0)

    def chroma_entropy(self, frames=None, power=None):
        power = self.power_spectrum(frames) if power is None else power
        chroma = power @ self.chroma_map.T
        total = chroma.sum(axis=-1)
        p = np.zeros_like(chroma)
        np.divide(chroma, total[:, None], out=p, where=total[:, None] > SILENCE)
        terms = np.zeros_like(p)
        np.multiply(p, np.log(p, out=np.zeros_like(p), where=p > 0), out=terms, where=p > 0)
        return -terms.sum(axis=-1) + 0.0

    def subband_centroids(self, frames=None, power=None):
        power = self.power_spectrum(frames) if power is None else power
        w = self.bark.weights
        mass = power @ w.T
        moment = power @ (w * self.freqs).T
        centers = (w * self.freqs).sum(axis=-1) / w.sum(axis=-1)
        out = np.broadcast_to(centers, mass.shape).copy()
        np.divide(moment, mass, out=out, where=mass > SILENCE)
        return out, power.sum(axis=-1) > SILENCE

    def ssch_histogram(self, frames=None, power=None):
        centroids, active = self.subband_centroids(frames, power)
        nbins = len(self.ssch_edges) - 1
        idx = np.clip(np.searchsorted(self.ssch_edges, centroids, side="right") - 1, 0, nbins - 1)
        hist = (idx[:, :, None] == np.arange(nbins)).sum(axis=1).astype(np.float64)
        hist[~active] = 0.0
        return hist

    def ssch(self, frames=None, power=None):
        hist = self.ssch_histogram(frames, power)
        coeffs = dct(hist, type=2, norm="ortho", axis=-1)
        return coeffs[:, 1:1 + self.config.n_cepstra]

    def transform(self, frames):
        """(n_frames, 56) matrix in :meth:`feature_names` order."""
        frames = self._frames(frames)
        power = self.power_spectrum(frames)
        return np.column_stack([
            self.harmonic_ratio(frames),
            self.root_mfcc(power=power),
            self.audio_spectrum_flatness(power=power),
            self.nase(power=power),
            self.tonal_index(power=power),
            self.chroma_entropy(power=power),
            self.ssch(power=power),
        ])


@lru_cache(maxsize=1)
def default_extractor() -> AuxFeatureExtractor:
    return AuxFeatureExtractor()


def _single(fn_name, frame):
    out = getattr(default_extractor(), fn_name)(np.asarray(frame, dtype=np.float64)[None, :])
    return out[0]


def harmonic_ratio(frame):
    return float(_single("harmonic_ratio", frame))


def root_mfcc(frame):
    return default_extractor().root_mfcc(np.asarray(frame)[None, :])[0]


def audio_spectrum_flatness(frame):
    return default_extractor().audio_spectrum_flatness(np.asarray(frame)[None, :])[0]


def nase(frame):
    return default_extractor().nase(np.asarray(frame)[None, :])[0]


def tonal_index(frame):
    return float(default_extractor().tonal_index(np.asarray(frame)[None, :])[0])


def chroma_entropy(frame):
    return float(default_extractor().chroma_entropy(np.asarray(frame)[None, :])[0])


def ssch(frame):
    return default_extractor().ssch(np.asarray(frame)[None, :])[0]
