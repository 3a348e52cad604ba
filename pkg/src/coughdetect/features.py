"""117-dimensional short-term feature extraction and feature-table I/O."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import band_features
from .aux_features import AuxFeatureExtractor
from .config import AuxConfig, SignalConfig
from .dsp import AudioSignal, band_slices_for, frame_matrix, welch_freqs, welch_psd_matrix, BandSpectrum

SHORT_TERM_DIM = 117


def short_term_feature_names(aux_config: AuxConfig | None = None) -> list[str]:
    return band_features.feature_names() + AuxFeatureExtractor.feature_names(aux_config)


class ShortTermFeatures(BaseEstimator, TransformerMixin):
    """Map rows of consecutive audio frames to 117 short-term features.

    Rows are assumed to be consecutive frames of one recording; spectral
    flux of the first row is taken against a zero spectrum.
    """

    def __init__(self, signal_config=None, aux_config=None):
        self.signal_config = signal_config
        self.aux_config = aux_config

    def fit(self, X=None, y=None):
        sig = self.signal_config or SignalConfig()
        self.aux_ = AuxFeatureExtractor(self.aux_config, sig.sample_rate, sig.frame_length)
        self.freqs_ = welch_freqs(sig.sample_rate, sig.subframe_length)
        self.band_slices_ = band_slices_for(self.freqs_, sig.band_edges_hz)
        self.feature_names_ = short_term_feature_names(self.aux_config)
        self.n_features_out_ = len(self.feature_names_)
        return self

    def get_feature_names_out(self, input_features=None):
        return np.asarray(self.feature_names_, dtype=object)

    def transform(self, X):
        if not hasattr(self, "aux_"):
            self.fit()
        sig = self.signal_config or SignalConfig()
        frames = np.atleast_2d(np.asarray(X, dtype=np.float64))
        psd = welch_psd_matrix(frames, sig.sample_rate, sig.subframe_length)
        spectrum = BandSpectrum(psd, self.freqs_, self.band_slices_)
        band, self.degenerate_ = band_features.band_feature_matrix(spectrum)
        return np.hstack([band, self.aux_.transform(frames)])


@dataclass
class FeatureTable:
    """Per-recording short-term features with frame metadata."""

    matrix: np.ndarray
    feature_names: list
    start_times: np.ndarray
    labels: np.ndarray | None = None
    degenerate: np.ndarray | None = None
    source_id: str = ""
    patient_id: str = ""
    scenario: str = ""

    @property
    def n_frames(self) -> int:
        return self.matrix.shape[0]

    def save(self, path) -> None:
        path = Path(path)
        if path.suffix == ".csv":
            write_csv(self, path)
        else:
            write_binary(self, path)

    @classmethod
    def load(cls, path) -> "FeatureTable":
        path = Path(path)
        return read_csv(path) if path.suffix == ".csv" else read_binary(path)


def extract_features(signal: AudioSignal, signal_config=None, aux_config=None,
                     extractor: ShortTermFeatures | None = None) -> FeatureTable:
    sig = signal_config or SignalConfig()
    if signal.sample_rate != sig.sample_rate:
        raise ValueError(f"signal must be at {sig.sample_rate} Hz, got {signal.sample_rate}")
    est = extractor or ShortTermFeatures(sig, aux_config).fit()
    frames = frame_matrix(signal.samples, sig.frame_length, sig.hop_length)
    if frames.shape[0] == 0:
        matrix = np.empty((0, len(est.feature_names_)))
        degenerate = np.zeros(0, dtype=bool)
    else:
        matrix = est.transform(frames)
        degenerate = est.degenerate_
    starts = np.arange(frames.shape[0]) * sig.hop_length / sig.sample_rate
    return FeatureTable(matrix, list(est.feature_names_), starts, None, degenerate, signal.source_id)


def frame_labels(intervals, n_frames: int, sample_rate=11025, frame_length=825, hop=617):
    """Majority-of-samples labels for each frame.

    ``intervals`` is an iterable of ``(start_s, end_s, label)`` with
    label ``"cough"`` for the positive class; anything else is negative.
    """
    total = n_frames and (n_frames - 1) * hop + frame_length
    mask = np.zeros(max(total, 0), dtype=np.int64)
    for start, end, label in intervals:
        if label != "cough":
            continue
        a = max(int(round(start * sample_rate)), 0)
        b = min(int(round(end * sample_rate)), len(mask))
        if b > a:
            mask[a:b] = 1
    csum = np.concatenate([[0], np.cumsum(mask)])
    starts = np.arange(n_frames) * hop
    inside = csum[starts + frame_length] - csum[starts]
    return (2 * inside > frame_length).astype(np.int64)


def read_annotations(path) -> list[tuple[float, float, str]]:
    """Delimited text with columns start_seconds, end_seconds, label."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() == "start_seconds":
                continue
            if len(row) < 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            label = row[2].strip().lower()
            if label not in ("cough", "other"):
                raise ValueError(f"{path}:{lineno}: label must be cough or other, got {row[2]!r}")
            start, end = float(row[0]), float(row[1])
            if end < start:
                raise ValueError(f"{path}:{lineno}: end before start")
            rows.append((start, end, label))
    return rows


def write_annotations(path, intervals) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start_seconds", "end_seconds", "label"])
        for start, end, label in intervals:
            w.writerow([f"{start:.6f}", f"{end:.6f}", label])


# ---------------------------------------------------------------------------
# Feature-table formats. Columns: frame, start_time, label, then the features.

_META = ("frame", "start_time", "label")


def write_csv(table: FeatureTable, path) -> None:
    labels = table.labels if table.labels is not None else np.full(table.n_frames, -1)
    buf = io.StringIO()
    buf.write(f"# source_id={table.source_id} patient_id={table.patient_id} scenario={table.scenario}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(_META) + list(table.feature_names))
    for i in range(table.n_frames):
        w.writerow([i, repr(float(table.start_times[i])), int(labels[i])]
                   + [repr(float(v)) for v in table.matrix[i]])
    _atomic_write(path, buf.getvalue().encode())


def read_csv(path) -> FeatureTable:
    meta = {}
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            meta = dict(kv.split("=", 1) for kv in first[1:].split() if "=" in kv)
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[:3]) != _META:
            raise ValueError(f"{path}: header must start with {','.join(_META)}")
        rows = [r for r in reader if r]
    data = np.array([[float(v) for v in r] for r in rows]).reshape(len(rows), len(header))
    labels = data[:, 2].astype(np.int64)
    return FeatureTable(
        data[:, 3:], header[3:], data[:, 1], None if np.all(labels < 0) else labels,
        None, meta.get("source_id", ""), meta.get("patient_id", ""), meta.get("scenario", ""),
    )


def write_binary(table: FeatureTable, path) -> None:
    buf = io.BytesIO()
    np.savez(
        buf,
        matrix=table.matrix,
        feature_names=np.asarray(table.feature_names, dtype=str),
        start_times=table.start_times,
        labels=table.labels if table.labels is not None else np.full(table.n_frames, -1),
        degenerate=table.degenerate if table.degenerate is not None else np.zeros(table.n_frames, bool),
        meta=np.asarray([table.source_id, table.patient_id, table.scenario], dtype=str),
    )
    _atomic_write(path, buf.getvalue())


def read_binary(path) -> FeatureTable:
    with np.load(path, allow_pickle=False) as z:
        labels = z["labels"]
        meta = [str(s) for s in z["meta"]]
        return FeatureTable(
            z["matrix"], [str(s) for s in z["feature_names"]], z["start_times"],
            None if np.all(labels < 0) else labels, z["degenerate"], *meta,
        )


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)
