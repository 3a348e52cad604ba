"""Band-limited spectral descriptors computed on the Welch PSD.

Every descriptor accepts ``psd`` with bins on the last axis, so the same
function serves a single band (1-D) or a whole frame matrix (2-D).
Bands whose total power is at or below ``SILENCE`` yield 0 for every
descriptor; values are never NaN.
"""
from __future__ import annotations

import numpy as np

from .dsp import BandSpectrum

SILENCE = 1e-15
FLATNESS_FLOOR = 1e-12
MOMENT_TOL = 1e-12
# cumulative-energy thresholds are compared with this relative slack so that
# e.g. 0.6 + 0.3 counts as reaching 90% of 1.0
CUMSUM_RTOL = 1e-12
RENYI_ORDER = 4

DESCRIPTORS = (
    "centroid",
    "bandwidth",
    "crest",
    "flatness",
    "flux",
    "rolloff",
    "f50f90",
    "peak_entropy",
    "renyi_entropy",
    "kurtosis",
    "skewness",
    "rel_power",
)
N_BANDS = 5


def feature_names() -> list[str]:
    """Column order: descriptor-major, bands 1..5 within each, then ``spec_entropy``."""
    names = [f"{d}_b{j}" for d in DESCRIPTORS for j in range(1, N_BANDS + 1)]
    names.append("spec_entropy")
    return names


def _prep(psd):
    psd = np.asarray(psd, dtype=np.float64)
    total = psd.sum(axis=-1)
    ok = total > SILENCE
    return psd, total, ok


def _safe_div(num, den, ok):
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=ok)
    return out


def _first_reaching(psd, total, fraction):
    """Index of the first bin whose cumulative power reaches ``fraction`` of the total."""
    csum = np.cumsum(psd, axis=-1)
    target = (fraction * total * (1.0 - CUMSUM_RTOL))[..., None]
    reached = csum >= target
    return np.argmax(reached, axis=-1)


def spectral_centroid(psd, freqs):
    psd, total, ok = _prep(psd)
    return _safe_div(psd @ np.asarray(freqs, dtype=np.float64), total, ok)


def spectral_bandwidth(psd, freqs, centroid=None):
    psd, total, ok = _prep(psd)
    freqs = np.asarray(freqs, dtype=np.float64)
    if centroid is None:
        centroid = spectral_centroid(psd, freqs)
    dev2 = (freqs - np.asarray(centroid)[..., None]) ** 2
    return _safe_div((dev2 * psd).sum(axis=-1), total, ok)


def spectral_crest_factor(psd):
    """max / mean of the band PSD (bin-count normaliser)."""
    psd, total, ok = _prep(psd)
    n_bins = psd.shape[-1]
    return _safe_div(psd.max(axis=-1) * n_bins, total, ok)


def spectral_flatness(psd):
    psd, total, ok = _prep(psd)
    floored = np.maximum(psd, FLATNESS_FLOOR)
    gm = np.exp(np.log(floored).mean(axis=-1))
    am = floored.mean(axis=-1)
    return np.where(ok, np.minimum(gm / am, 1.0), 0.0)


def spectral_flux(psd, psd_previous):
    psd = np.asarray(psd, dtype=np.float64)
    prev = np.asarray(psd_previous, dtype=np.float64)
    if psd.shape[-1] != prev.shape[-1]:
        raise ValueError(f"bin-count mismatch: {psd.shape[-1]} vs {prev.shape[-1]}")
    return ((psd - prev) ** 2).sum(axis=-1)


def spectral_rolloff(psd, freqs, fraction=0.85):
    psd, total, ok = _prep(psd)
    k = _first_reaching(psd, total, fraction)
    return np.where(ok, np.asarray(freqs, dtype=np.float64)[k], 0.0)


def f50_f90_ratio(psd, freqs):
    psd, total, ok = _prep(psd)
    freqs = np.asarray(freqs, dtype=np.float64)
    f50 = freqs[_first_reaching(psd, total, 0.5)]
    f90 = freqs[_first_reaching(psd, total, 0.9)]
    return _safe_div(f50, f90, ok & (f90 > 0))


def local_maxima(psd):
    """Boolean mask of strict interior peaks; a plateau counts once at its first bin."""
    psd = np.asarray(psd, dtype=np.float64)
    n = psd.shape[-1]
    mask = np.zeros(psd.shape, dtype=bool)
    if n < 3:
        return mask
    step = np.sign(np.diff(psd, axis=-1))  # step[k] = sign(psd[k+1] - psd[k])
    # next non-zero step at or after position k (0 if the plateau runs to the edge)
    pos = np.where(step != 0, np.arange(n - 1), n - 1)
    nxt = np.minimum.accumulate(pos[..., ::-1], axis=-1)[..., ::-1]
    padded = np.concatenate([step, np.zeros(step.shape[:-1] + (1,))], axis=-1)
    ahead = np.take_along_axis(padded, nxt, axis=-1)
    rising = step[..., :-1] > 0  # psd[k] > psd[k-1] for k = 1..n-2
    mask[..., 1:-1] = rising & (ahead[..., 1:] < 0)
    return mask


def spectral_peak_entropy(psd):
    psd, total, ok = _prep(psd)
    peaks = local_maxima(psd)
    mass = np.where(peaks, psd, 0.0)
    peak_total = mass.sum(axis=-1)
    good = ok & (peak_total > 0)
    p = _safe_div(mass, peak_total[..., None], good[..., None])
    terms = np.zeros_like(p)
    np.multiply(p, np.log10(p, out=np.zeros_like(p), where=p > 0), out=terms, where=p > 0)
    return np.where(good, -terms.sum(axis=-1), 0.0)


def spectral_renyi_entropy(psd, q=RENYI_ORDER):
    psd, total, ok = _prep(psd)
    p = _safe_div(psd, total[..., None], ok[..., None])
    s = (p ** q).sum(axis=-1)
    out = np.zeros(total.shape)
    np.divide(np.log(s, out=np.zeros_like(s), where=ok), 1.0 - q, out=out, where=ok)
    return out


def _standardized_moment(psd, order):
    psd, total, ok = _prep(psd)
    mu = psd.mean(axis=-1)
    sigma = np.sqrt(((psd - mu[..., None]) ** 2).mean(axis=-1))
    good = ok & (sigma > MOMENT_TOL * np.abs(mu))
    z = _safe_div(psd - mu[..., None], sigma[..., None], good[..., None])
    return np.where(good, (z ** order).mean(axis=-1), 0.0)


def spectral_kurtosis(psd):
    return _standardized_moment(psd, 4)


def spectral_skewness(psd):
    return _standardized_moment(psd, 3)


def relative_power(spectrum: BandSpectrum):
    """Per-band power share of the whole frame; shape (..., 5)."""
    psd = np.asarray(spectrum.psd, dtype=np.float64)
    total = psd.sum(axis=-1)
    bands = np.stack([psd[..., sl].sum(axis=-1) for sl in spectrum.band_slices], axis=-1)
    return _safe_div(bands, total[..., None], (total > SILENCE)[..., None])


def spectral_entropy(rp):
    rp = np.asarray(rp, dtype=np.float64)
    terms = np.zeros_like(rp)
    np.multiply(rp, np.log2(rp, out=np.zeros_like(rp), where=rp > 0), out=terms, where=rp > 0)
    return -terms.sum(axis=-1) + 0.0


def band_feature_matrix(spectrum: BandSpectrum, previous_psd=None):
    """All 61 band descriptors for every frame of ``spectrum``.

    ``spectrum.psd`` is (n_frames, n_bins) from consecutive frames of one
    recording; flux of frame 0 uses ``previous_psd`` (zeros when omitted).
    Returns ``(features, degenerate)`` where ``degenerate`` flags frames
    with at least one silent band.
    """
    psd = np.atleast_2d(np.asarray(spectrum.psd, dtype=np.float64))
    if previous_psd is None:
        previous_psd = np.zeros(psd.shape[-1])
    prev = np.vstack([np.asarray(previous_psd, dtype=np.float64)[None, :], psd[:-1]])
    freqs = spectrum.freqs
    per_desc = {d: [] for d in DESCRIPTORS}
    degenerate = np.zeros(psd.shape[0], dtype=bool)
    rp = relative_power(BandSpectrum(psd, freqs, spectrum.band_slices))
    for j, sl in enumerate(spectrum.band_slices):
        band, f = psd[:, sl], freqs[sl]
        silent = band.sum(axis=-1) <= SILENCE
        degenerate |= silent
        cent = spectral_centroid(band, f)
        per_desc["centroid"].append(cent)
        per_desc["bandwidth"].append(spectral_bandwidth(band, f, cent))
        per_desc["crest"].append(spectral_crest_factor(band))
        per_desc["flatness"].append(spectral_flatness(band))
        per_desc["flux"].append(np.where(silent, 0.0, spectral_flux(band, prev[:, sl])))
        per_desc["rolloff"].append(spectral_rolloff(band, f))
        per_desc["f50f90"].append(f50_f90_ratio(band, f))
        per_desc["peak_entropy"].append(spectral_peak_entropy(band))
        per_desc["renyi_entropy"].append(spectral_renyi_entropy(band))
        per_desc["kurtosis"].append(spectral_kurtosis(band))
        per_desc["skewness"].append(spectral_skewness(band))
        per_desc["rel_power"].append(rp[:, j])
    cols = [c for d in DESCRIPTORS for c in per_desc[d]]
    cols.append(spectral_entropy(rp))
    return np.column_stack(cols), degenerate
