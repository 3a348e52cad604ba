"""Audio ingestion, framing and Welch PSD estimation.

Everything upstream of feature computation lives here: WAV decoding,
polyphase resampling to 11.025 kHz, 75 ms short-term framing, the
three-sub-frame Welch estimate and the 5-frame long-term grouping.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

TARGET_RATE = 11025
FRAME_LENGTH = 825  # 3 x 275, closest sub-frame-aligned length to 75 ms
SUBFRAME_LENGTH = 275
HOP_LENGTH = 617  # round(0.056 * 11025): 75 ms frames with 19 ms overlap
GROUP_SIZE = 5
GROUP_STRIDE = 4
BAND_EDGES_HZ = (0.0, 500.0, 1000.0, 1500.0, 2000.0)


class WavFormatError(ValueError):
    """Raised for WAV files outside the supported PCM subset."""


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioSignal expects mono samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioSignal samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class SignalFrame:
    samples: np.ndarray
    start_time: float
    index: int


@dataclass(frozen=True)
class BandSpectrum:
    """One-sided Welch PSD with its fixed five-band partition.

    ``psd`` may be 1-D (one frame) or 2-D (frames x bins); ``band_slices``
    index the last axis.
    """

    psd: np.ndarray
    freqs: np.ndarray
    band_slices: tuple = field(default=())

    def band(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """PSD and frequencies of band ``j`` (0-based)."""
        sl = self.band_slices[j]
        return self.psd[..., sl], self.freqs[sl]


def band_slices_for(freqs: np.ndarray, edges=BAND_EDGES_HZ) -> tuple[slice, ...]:
    """Half-open band index ranges; the last band runs to the final bin."""
    freqs = np.asarray(freqs)
    starts = [int(np.searchsorted(freqs, e, side="left")) for e in edges]
    stops = starts[1:] + [len(freqs)]
    return tuple(slice(a, b) for a, b in zip(starts, stops))


# ---------------------------------------------------------------------------
# WAV input/output


def read_wav(path) -> AudioSignal:
    """Decode a 16-bit PCM WAV file, averaging stereo to mono.

    Only 44100 Hz and 11025 Hz inputs are accepted.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None or len(fmt) < 16:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise WavFormatError(f"{path}: missing data chunk")
    audio_format, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if audio_format == 0xFFFE and len(fmt) >= 26:
        audio_format = struct.unpack("<H", fmt[24:26])[0]
    if audio_format != 1:
        raise WavFormatError(f"{path}: unsupported audio_format={audio_format} (only PCM=1)")
    if bits != 16:
        raise WavFormatError(f"{path}: unsupported bits_per_sample={bits} (only 16)")
    if channels not in (1, 2):
        raise WavFormatError(f"{path}: unsupported num_channels={channels} (mono or stereo)")
    if rate not in (44100, TARGET_RATE):
        raise WavFormatError(f"{path}: unsupported sample_rate={rate} (44100 or 11025)")
    n = len(payload) // block_align
    pcm = np.frombuffer(payload[: n * block_align], dtype="<i2").reshape(n, channels)
    samples = pcm.astype(np.float64).mean(axis=1) / 32768.0
    return AudioSignal(samples, rate, source_id=path.stem)


def write_wav(path, samples, sample_rate: int) -> None:
    """Write mono 16-bit PCM; samples are clipped to [-1, 1]."""
    import wave

    pcm = np.round(np.clip(np.asarray(samples), -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(sample_rate))
        fh.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# Resampling and framing


def resample(signal: AudioSignal, target_rate: int = TARGET_RATE) -> AudioSignal:
    """Polyphase FIR anti-alias filtering plus rational decimation."""
    if len(signal.samples) == 0:
        raise ValueError("cannot resample an empty signal")
    if target_rate >= signal.sample_rate:
        raise ValueError(
            f"target_rate {target_rate} must be below the source rate {signal.sample_rate}"
        )
    ratio = Fraction(int(target_rate), int(signal.sample_rate))
    out = resample_poly(signal.samples, ratio.numerator, ratio.denominator, padtype="line")
    return AudioSignal(out, int(target_rate), signal.source_id)


def load_audio(path, target_rate: int = TARGET_RATE) -> AudioSignal:
    signal = read_wav(path)
    if signal.sample_rate != target_rate:
        signal = resample(signal, target_rate)
    return signal


def n_frames(n_samples: int, frame_length: int = FRAME_LENGTH, hop: int = HOP_LENGTH) -> int:
    if n_samples < frame_length:
        return 0
    return (n_samples - frame_length) // hop + 1


def frame_matrix(samples, frame_length: int = FRAME_LENGTH, hop: int = HOP_LENGTH) -> np.ndarray:
    """Frames as rows of a read-only strided view (trailing partial frame dropped)."""
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    count = n_frames(len(samples), frame_length, hop)
    if count == 0:
        return np.empty((0, frame_length))
    return np.lib.stride_tricks.as_strided(
        samples,
        shape=(count, frame_length),
        strides=(samples.strides[0] * hop, samples.strides[0]),
        writeable=False,
    )


def frame_signal(signal: AudioSignal, frame_length: int = FRAME_LENGTH,
                 hop: int = HOP_LENGTH) -> list[SignalFrame]:
    if signal.sample_rate != TARGET_RATE:
        raise ValueError(f"frame_signal expects {TARGET_RATE} Hz input, got {signal.sample_rate}")
    mat = frame_matrix(signal.samples, frame_length, hop)
    return [
        SignalFrame(mat[i], i * hop / signal.sample_rate, i) for i in range(mat.shape[0])
    ]


# ---------------------------------------------------------------------------
# Welch PSD


def welch_freqs(fs: float = TARGET_RATE, nperseg: int = SUBFRAME_LENGTH) -> np.ndarray:
    return np.fft.rfftfreq(nperseg, d=1.0 / fs)


def welch_psd_matrix(frames, fs: float = TARGET_RATE,
                     nperseg: int = SUBFRAME_LENGTH) -> np.ndarray:
    """Welch PSD of each row: Hamming sub-frames, no overlap, density scaling.

    Returns an array of shape (n_frames, nperseg // 2 + 1).
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 1:
        frames = frames[None, :]
    n, length = frames.shape
    if length % nperseg:
        raise ValueError(f"frame length {length} is not a multiple of {nperseg}")
    n_sub = length // nperseg
    window = np.hamming(nperseg)
    sub = frames.reshape(n, n_sub, nperseg) * window
    spec = np.fft.rfft(sub, axis=-1)
    power = spec.real ** 2 + spec.imag ** 2
    power /= fs * np.dot(window, window)
    # one-sided: double everything except DC (and Nyquist for even lengths)
    if nperseg % 2:
        power[..., 1:] *= 2.0
    else:
        power[..., 1:-1] *= 2.0
    return power.mean(axis=1)


def welch_psd(frame) -> BandSpectrum:
    """Welch PSD of a single 825-sample frame (or raw sample array)."""
    samples = frame.samples if isinstance(frame, SignalFrame) else np.asarray(frame)
    if samples.shape[-1] != FRAME_LENGTH:
        raise ValueError(f"expected {FRAME_LENGTH} samples, got {samples.shape[-1]}")
    freqs = welch_freqs()
    psd = welch_psd_matrix(samples)[0]
    return BandSpectrum(psd, freqs, band_slices_for(freqs))


def welch_spectra(frames) -> BandSpectrum:
    """Batched counterpart of :func:`welch_psd` for a frame matrix."""
    freqs = welch_freqs()
    return BandSpectrum(welch_psd_matrix(frames), freqs, band_slices_for(freqs))


# ---------------------------------------------------------------------------
# Long-term grouping


@dataclass(frozen=True)
class LongTermGroup:
    index: int
    frame_indices: tuple[int, ...]

    @property
    def span(self) -> tuple[int, int]:
        return self.frame_indices[0], self.frame_indices[-1]


def n_groups(n_items: int, size: int = GROUP_SIZE, stride: int = GROUP_STRIDE) -> int:
    if n_items < size:
        return 0
    return (n_items - size) // stride + 1


def group_indices(n_items: int, size: int = GROUP_SIZE, stride: int = GROUP_STRIDE) -> np.ndarray:
    """(n_groups, size) matrix of short-term indices; neighbours share one frame."""
    count = n_groups(n_items, size, stride)
    return stride * np.arange(count)[:, None] + np.arange(size)[None, :]


def build_long_term(items, size: int = GROUP_SIZE, stride: int = GROUP_STRIDE) -> list[LongTermGroup]:
    idx = group_indices(len(items), size, stride)
    return [LongTermGroup(g, tuple(int(i) for i in row)) for g, row in enumerate(idx)]
