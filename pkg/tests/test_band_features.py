import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from coughdetect import band_features as bf
from coughdetect.dsp import BandSpectrum, band_slices_for, welch_psd, welch_psd_matrix


def test_centroid_examples():
    f = np.array([100.0, 250.0, 300.0, 400.0])
    assert bf.spectral_centroid([0, 1, 0, 0], f) == pytest.approx(250)
    assert bf.spectral_centroid(np.ones(4), f) == pytest.approx(f.mean())
    assert bf.spectral_centroid([1, 3], [100, 300]) == pytest.approx(250)


def test_bandwidth_examples():
    f = np.array([100.0, 200.0, 300.0])
    assert bf.spectral_bandwidth([0, 5, 0], f) == 0
    assert bf.spectral_bandwidth([1, 1], [100, 300]) == pytest.approx(10000)
    assert bf.spectral_bandwidth(np.ones(3), f) == pytest.approx(np.var(f))


def test_crest_examples():
    assert bf.spectral_crest_factor(np.ones(11)) == pytest.approx(1)
    p = np.zeros(37)
    p[5] = 2.0
    assert bf.spectral_crest_factor(p) == pytest.approx(37)
    assert bf.spectral_crest_factor([4, 1, 1, 1, 1]) == pytest.approx(2.5)


def test_flatness_examples():
    assert bf.spectral_flatness(np.full(10, 3.0)) == pytest.approx(1)
    p = np.full(10, 1e-12)
    p[3] = 1.0
    assert bf.spectral_flatness(p) < 1e-3
    rng = np.random.default_rng(0)
    psd = welch_psd_matrix(rng.normal(size=(100, 825)))
    sl = band_slices_for(np.fft.rfftfreq(275, 1 / 11025))
    for s in sl:
        assert bf.spectral_flatness(psd[:, s]).mean() > 0.5


def test_flux_examples():
    assert bf.spectral_flux([1, 2], [1, 2]) == 0
    assert bf.spectral_flux([1, 1], [0, 0]) == 2
    assert bf.spectral_flux([0, 3], [3, 0]) == 18
    with pytest.raises(ValueError):
        bf.spectral_flux([1, 2, 3], [1, 2])


def test_rolloff_examples():
    f = np.arange(1, 21) * 100.0
    p = np.zeros(20)
    p[0] = 1
    assert bf.spectral_rolloff(p, f) == 100
    assert bf.spectral_rolloff(np.ones(20), f) == f[math.ceil(0.85 * 20) - 1]
    # cumulative 0.5, 0.8, 1.0: 85% is first reached at the third bin
    assert oracles.rolloff([0.5, 0.3, 0.2], [100, 200, 300]) == 300
    assert bf.spectral_rolloff([0.5, 0.3, 0.2], [100, 200, 300]) == 300


def test_f50f90_examples():
    f = np.arange(1, 201) * 10.0
    p = np.zeros(200)
    p[7] = 1
    assert bf.f50_f90_ratio(p, f) == 1
    assert bf.f50_f90_ratio(np.ones(200), f) == pytest.approx(0.5 / 0.9, abs=0.01)
    assert bf.f50_f90_ratio([0.6, 0.3, 0.1], [100, 200, 300]) == pytest.approx(0.5)


def test_f50f90_dc_only_is_sentinel():
    assert bf.f50_f90_ratio([1.0, 0, 0], [0.0, 40.0, 80.0]) == 0


def test_peak_entropy_examples():
    assert bf.spectral_peak_entropy([0, 1, 0, 0]) == 0
    assert bf.spectral_peak_entropy([0, 1, 0, 1, 0]) == pytest.approx(math.log10(2))
    got = bf.spectral_peak_entropy([0, 2, 0, 1, 0, 1, 0])
    assert got == pytest.approx(0.5 * math.log10(2) + 0.5 * math.log10(4))
    assert got == pytest.approx(0.4515, abs=1e-4)


def test_local_maxima_rules():
    # endpoints never count; a plateau counts once at its first bin
    mask = bf.local_maxima(np.array([3, 1, 2, 2, 2, 1, 0, 4.0]))
    assert np.flatnonzero(mask).tolist() == [2]
    # a plateau running into the edge is not a peak
    assert not bf.local_maxima(np.array([0, 1, 1, 1.0])).any()
    assert bf.spectral_peak_entropy([1, 2, 3, 4]) == 0  # no maxima -> sentinel


def test_renyi_examples():
    assert bf.spectral_renyi_entropy(np.ones(16)) == pytest.approx(math.log(16))
    assert bf.spectral_renyi_entropy([0, 0, 5, 0]) == pytest.approx(0, abs=1e-15)
    assert bf.spectral_renyi_entropy([0.5, 0.5]) == pytest.approx(math.log(2))


def test_moment_examples():
    assert bf.spectral_skewness([1, 2, 3, 4, 5]) == pytest.approx(0, abs=1e-9)
    assert bf.spectral_kurtosis([0, 1, 0, 1, 0, 1]) == pytest.approx(1)
    vals = np.abs(np.random.default_rng(1).normal(size=50))
    k, s = oracles.moments(vals.tolist())
    assert bf.spectral_kurtosis(vals) == pytest.approx(k, rel=1e-12)
    assert bf.spectral_skewness(vals) == pytest.approx(s, rel=1e-12)
    assert bf.spectral_kurtosis(np.full(5, 2.0)) == 0  # constant -> sentinel


def _spectrum(psd):
    freqs = np.fft.rfftfreq(275, 1 / 11025)
    return BandSpectrum(np.asarray(psd, float), freqs, band_slices_for(freqs))


def test_relative_power_examples():
    spec = _spectrum(np.zeros(138))
    psd = np.zeros(138)
    psd[spec.band_slices[2]] = 1.0
    np.testing.assert_allclose(bf.relative_power(_spectrum(psd)), [0, 0, 1, 0, 0])
    counts = np.array([s.stop - s.start for s in spec.band_slices])
    np.testing.assert_allclose(bf.relative_power(_spectrum(np.ones(138))), counts / counts.sum())
    t = np.arange(825) / 11025
    assert np.argmax(bf.relative_power(welch_psd(np.sin(2 * np.pi * 750 * t)))) == 1


def test_relative_power_500hz_sine_matches_welch_oracle():
    # 500 Hz sits between the 481 Hz (band 1) and 521 Hz (band 2) bins, so the
    # power splits across the edge; the scipy Welch estimate fixes the expected shares
    from scipy.signal import welch

    t = np.arange(825) / 11025
    x = np.sin(2 * np.pi * 500 * t)
    f, p = welch(x, fs=11025, window=np.hamming(275), nperseg=275, noverlap=0, detrend=False)
    expected = [p[(f >= lo) & (f < hi)].sum() / p.sum()
                for lo, hi in ((0, 500), (500, 1000), (1000, 1500), (1500, 2000), (2000, 6000))]
    rp = bf.relative_power(welch_psd(x))
    np.testing.assert_allclose(rp, expected, rtol=1e-9)
    assert rp[:2].sum() > 0.99


def test_spectral_entropy_examples():
    assert bf.spectral_entropy([1, 0, 0, 0, 0]) == 0
    assert bf.spectral_entropy(np.full(5, 0.2)) == pytest.approx(math.log2(5))
    assert bf.spectral_entropy([0.5, 0.5, 0, 0, 0]) == pytest.approx(1.0)


def test_silent_band_sentinels():
    z = np.zeros(12)
    f = np.arange(12) * 40.0
    for fn in (bf.spectral_crest_factor, bf.spectral_flatness, bf.spectral_peak_entropy,
               bf.spectral_renyi_entropy, bf.spectral_kurtosis, bf.spectral_skewness):
        assert fn(z) == 0
    for fn in (bf.spectral_centroid, bf.spectral_bandwidth, bf.spectral_rolloff, bf.f50_f90_ratio):
        assert fn(z, f) == 0
    feats, degenerate = bf.band_feature_matrix(_spectrum(np.zeros((3, 138))))
    assert np.all(feats == 0) and degenerate.all()


def test_feature_names_and_dimension():
    names = bf.feature_names()
    assert len(names) == 61 == 12 * 5 + 1
    assert names[0] == "centroid_b1" and "centroid_b3" in names and names[-1] == "spec_entropy"


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=200, deadline=None)
def test_invariant_ranges(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 825)) * rng.uniform(1e-3, 1, size=(4, 1))
    if seed % 3 == 0:
        t = np.arange(825) / 11025
        x[0] = np.sin(2 * np.pi * rng.uniform(50, 5000) * t)
    spec = _spectrum(welch_psd_matrix(x))
    feats, _ = bf.band_feature_matrix(spec)
    assert np.all(np.isfinite(feats))
    names = bf.feature_names()
    col = {n: feats[:, i] for i, n in enumerate(names)}
    rp = np.column_stack([col[f"rel_power_b{j}"] for j in range(1, 6)])
    assert np.all((rp >= 0) & (rp <= 1))
    np.testing.assert_allclose(rp.sum(axis=1), 1, atol=1e-9)
    assert np.all((col["spec_entropy"] >= 0) & (col["spec_entropy"] <= math.log2(5) + 1e-12))
    for j, sl in enumerate(spec.band_slices, start=1):
        f = spec.freqs[sl]
        assert np.all((col[f"flatness_b{j}"] >= 0) & (col[f"flatness_b{j}"] <= 1))
        assert np.all((col[f"f50f90_b{j}"] > 0) & (col[f"f50f90_b{j}"] <= 1))
        assert np.all((col[f"rolloff_b{j}"] >= f.min()) & (col[f"rolloff_b{j}"] <= f.max()))
        assert np.all(col[f"bandwidth_b{j}"] >= 0)


def _direct_all(p, f, prev):
    k, s = oracles.moments(p)
    return [oracles.centroid(p, f), oracles.bandwidth(p, f), oracles.crest(p), oracles.flatness(p),
            oracles.flux(p, prev), oracles.rolloff(p, f), oracles.f50f90(p, f),
            oracles.peak_entropy(p), oracles.renyi(p), k, s]


def _impl_all(p, f, prev):
    return [float(v) for v in (
        bf.spectral_centroid(p, f), bf.spectral_bandwidth(p, f), bf.spectral_crest_factor(p),
        bf.spectral_flatness(p), bf.spectral_flux(p, prev), bf.spectral_rolloff(p, f),
        bf.f50_f90_ratio(p, f), bf.spectral_peak_entropy(p), bf.spectral_renyi_entropy(p),
        bf.spectral_kurtosis(p), bf.spectral_skewness(p))]


def test_random_8_bin_psds_match_direct_formulas():
    rng = np.random.default_rng(5)
    for _ in range(200):
        p = rng.exponential(size=8)
        f = np.sort(rng.uniform(10, 5000, size=8))
        prev = rng.exponential(size=8)
        np.testing.assert_allclose(_impl_all(p, f, prev), _direct_all(list(p), list(f), list(prev)),
                                   rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("a", [1e-6, 0.37, 3.0, 1e5])
def test_scale_invariance(a):
    rng = np.random.default_rng(6)
    p = rng.exponential(size=(50, 24))
    prev = rng.exponential(size=(50, 24))
    f = np.linspace(40, 2000, 24)
    for fn in (bf.spectral_crest_factor, bf.spectral_flatness, bf.spectral_peak_entropy,
               bf.spectral_renyi_entropy):
        np.testing.assert_allclose(fn(a * p), fn(p), rtol=1e-9)
    for fn in (bf.spectral_centroid, bf.spectral_bandwidth, bf.spectral_rolloff, bf.f50_f90_ratio):
        np.testing.assert_allclose(fn(a * p, f), fn(p, f), rtol=1e-9)
    np.testing.assert_allclose(bf.spectral_flux(a * p, a * prev), a * a * bf.spectral_flux(p, prev),
                               rtol=1e-9)
