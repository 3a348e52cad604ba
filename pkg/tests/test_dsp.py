import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import welch

from coughdetect.dsp import (
    FRAME_LENGTH,
    HOP_LENGTH,
    AudioSignal,
    WavFormatError,
    build_long_term,
    frame_matrix,
    frame_signal,
    group_indices,
    n_frames,
    read_wav,
    resample,
    welch_psd,
    welch_psd_matrix,
    write_wav,
)


def test_frame_geometry_constants():
    assert FRAME_LENGTH == 3 * 275
    assert HOP_LENGTH == round(0.056 * 11025)


# -- resampling -------------------------------------------------------------


def test_resample_length_4s():
    sig = AudioSignal(np.random.default_rng(0).normal(size=4 * 44100) * 0.1, 44100)
    out = resample(sig, 11025)
    assert out.sample_rate == 11025
    assert len(out.samples) == 44100


def test_resample_preserves_dc():
    out = resample(AudioSignal(np.full(44100, 0.5), 44100), 11025)
    np.testing.assert_allclose(out.samples, 0.5, atol=1e-6)


def test_resample_sine_peak_frequency_unchanged():
    t = np.arange(44100) / 44100
    sig = AudioSignal(np.sin(2 * np.pi * 440 * t), 44100)
    out = resample(sig, 11025)

    def peak_hz(x, fs):
        spec = np.abs(np.fft.rfft(x))
        return np.fft.rfftfreq(len(x), 1 / fs)[np.argmax(spec)]

    assert peak_hz(sig.samples, 44100) == pytest.approx(440, abs=1)
    assert peak_hz(out.samples, 11025) == pytest.approx(peak_hz(sig.samples, 44100), abs=1)


def test_resample_errors():
    with pytest.raises(ValueError):
        resample(AudioSignal(np.zeros(0), 44100), 11025)
    with pytest.raises(ValueError):
        resample(AudioSignal(np.zeros(100), 11025), 11025)


# -- framing ----------------------------------------------------------------


def _sig(n):
    return AudioSignal(np.arange(n, dtype=float) / max(n, 1), 11025)


def test_single_frame():
    assert len(frame_signal(_sig(825))) == 1


def test_two_frames():
    frames = frame_signal(_sig(825 + 617))
    assert len(frames) == 2
    assert frames[1].start_time == pytest.approx(617 / 11025)


def test_short_signal_gives_no_frames():
    assert frame_signal(_sig(824)) == []


def test_sixty_second_count_matches_enumeration():
    n = 60 * 11025
    # independent sliding-window enumeration
    count, start = 0, 0
    while start + 825 <= n:
        count += 1
        start += 617
    assert len(frame_signal(_sig(n))) == count == (661500 - 825) // 617 + 1


@given(st.integers(min_value=825, max_value=20000))
@settings(max_examples=50, deadline=None)
def test_framing_is_lossless_up_to_partial_frame(n):
    x = np.random.default_rng(n).normal(size=n)
    mat = frame_matrix(x)
    # hop-strided prefixes plus the final frame tail reproduce the covered stream
    rebuilt = np.concatenate([row[:HOP_LENGTH] for row in mat[:-1]] + [mat[-1]])
    covered = (len(mat) - 1) * HOP_LENGTH + FRAME_LENGTH
    np.testing.assert_array_equal(rebuilt, x[:covered])
    assert n - covered < HOP_LENGTH


# -- Welch PSD ----------------------------------------------------------------


def test_zero_frame_zero_psd():
    spec = welch_psd(np.zeros(825))
    assert np.all(spec.psd == 0)


def test_welch_matches_scipy():
    x = np.random.default_rng(1).normal(size=825)
    f, p = welch(x, fs=11025, window=np.hamming(275), nperseg=275, noverlap=0, detrend=False)
    spec = welch_psd(x)
    np.testing.assert_allclose(spec.freqs, f)
    np.testing.assert_allclose(spec.psd, p, rtol=1e-12)


def test_sine_500hz_peak_bin():
    t = np.arange(825) / 11025
    x = np.sin(2 * np.pi * 500 * t)
    spec = welch_psd(x)
    # direct DFT oracle on one sub-frame
    sub = x[:275] * np.hamming(275)
    k = np.arange(138)
    dft = np.abs([(sub * np.exp(-2j * np.pi * kk * np.arange(275) / 275)).sum() for kk in k])
    assert np.argmax(spec.psd) == np.argmax(dft) == np.argmin(np.abs(spec.freqs - 500))


def test_white_noise_band_shares_follow_bin_counts():
    rng = np.random.default_rng(2)
    psd = welch_psd_matrix(rng.normal(size=(100, 825))).mean(axis=0)
    spec = welch_psd(np.zeros(825))
    counts = np.array([sl.stop - sl.start for sl in spec.band_slices], float)
    shares = np.array([psd[sl].sum() for sl in spec.band_slices]) / psd.sum()
    expected = counts / counts.sum()
    np.testing.assert_allclose(shares, expected, rtol=0.2)


def test_parseval_broadband():
    rng = np.random.default_rng(3)
    x = rng.normal(size=825)
    spec = welch_psd(x)
    df = spec.freqs[1] - spec.freqs[0]
    power = (spec.psd * df).sum()
    assert power == pytest.approx(np.mean(x ** 2), rel=0.05 * 3)
    # averaged over frames the estimate is within 5%
    mat = rng.normal(size=(200, 825))
    power = (welch_psd_matrix(mat) * df).sum(axis=1).mean()
    assert power == pytest.approx(np.mean(mat ** 2), rel=0.05)


@given(st.floats(min_value=1e-3, max_value=1e3))
@settings(max_examples=30, deadline=None)
def test_welch_sign_and_amplitude(a):
    x = np.random.default_rng(4).normal(size=825)
    p = welch_psd_matrix(x)
    np.testing.assert_allclose(welch_psd_matrix(-x), p, rtol=1e-9)
    np.testing.assert_allclose(welch_psd_matrix(a * x), a * a * p, rtol=1e-9)


def test_band_slices_partition():
    spec = welch_psd(np.zeros(825))
    covered = np.concatenate([np.arange(sl.start, sl.stop) for sl in spec.band_slices])
    np.testing.assert_array_equal(covered, np.arange(len(spec.freqs)))
    assert np.all(np.diff(spec.freqs) > 0)
    assert spec.freqs[-1] <= 5512.5
    for j, sl in enumerate(spec.band_slices):
        f = spec.freqs[sl]
        lo = j * 500.0
        assert f.min() >= lo
        if j < 4:
            assert f.max() < lo + 500.0
    # DC sits in band 1
    assert spec.band_slices[0].start == 0


def test_bin_at_exactly_500hz_goes_to_band_2():
    from coughdetect.dsp import band_slices_for

    freqs = np.arange(0, 5001, 100.0)
    sl = band_slices_for(freqs)
    assert freqs[sl[1].start] == 500.0


# -- long-term grouping -------------------------------------------------------


def test_groups_basic():
    assert len(build_long_term(range(5))) == 1
    groups = build_long_term(range(9))
    assert len(groups) == 2
    assert set(groups[0].frame_indices) & set(groups[1].frame_indices) == {4}
    assert build_long_term(range(4)) == []


def test_hundred_frames_enumeration():
    starts = [s for s in range(100) if s % 4 == 0 and s + 5 <= 100]
    assert len(build_long_term(range(100))) == len(starts) == 24


@given(st.integers(min_value=5, max_value=500))
def test_group_count_formula(n):
    idx = group_indices(n)
    assert len(idx) == (n - 5) // 4 + 1
    assert all(len(set(row)) == 5 for row in idx)


def test_long_term_span_299ms():
    span_ms = ((75 - 19) * 4) + 75
    assert span_ms == 299


# -- WAV I/O ------------------------------------------------------------------


def test_wav_roundtrip(tmp_path):
    x = np.sin(np.linspace(0, 100, 11025)) * 0.5
    write_wav(tmp_path / "a.wav", x, 11025)
    sig = read_wav(tmp_path / "a.wav")
    assert sig.sample_rate == 11025
    np.testing.assert_allclose(sig.samples, x, atol=1 / 16000)


def test_stereo_is_averaged(tmp_path):
    path = tmp_path / "s.wav"
    left = np.full(100, 1000, dtype="<i2")
    right = np.full(100, 3000, dtype="<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(2)
        fh.setsampwidth(2)
        fh.setframerate(44100)
        fh.writeframes(np.column_stack([left, right]).tobytes())
    sig = read_wav(path)
    np.testing.assert_allclose(sig.samples, 2000 / 32768)


def _raw_wav(path, audio_format=1, channels=1, rate=44100, bits=16):
    data = b"\x00" * 64
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", audio_format, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


@pytest.mark.parametrize(
    "kwargs, field",
    [
        ({"audio_format": 3, "bits": 32}, "audio_format"),
        ({"bits": 24}, "bits_per_sample"),
        ({"rate": 48000}, "sample_rate"),
        ({"channels": 6}, "num_channels"),
    ],
)
def test_wav_rejects_with_field_name(tmp_path, kwargs, field):
    path = tmp_path / "bad.wav"
    _raw_wav(path, **kwargs)
    with pytest.raises(WavFormatError, match=field):
        read_wav(path)
