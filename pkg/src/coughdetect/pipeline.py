"""End-to-end wiring: manifests, extraction, long-term datasets and the detector."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import container
from .config import PipelineConfig
from .dsp import group_indices, load_audio
from .evaluation import (EvalReport, block5_partition, lopo_partition, mcnemar_test,
                         summarize_folds)
from .features import FeatureTable, extract_features, frame_labels, read_annotations
from .representation import AvgSD, Codebook, SupervisedBoAW, label_group
from .selection import SCENARIOS, NoiseRobustSelector
from .svm import PolySVC, VotingEnsemble

log = logging.getLogger(__name__)

DETECTOR_MAGIC = b"CDDETECT"


@dataclass
class ManifestEntry:
    wav: Path
    annotation: Path | None
    patient_id: str
    scenario: str

    @property
    def stem(self) -> str:
        return f"{self.patient_id}_{self.scenario}_{self.wav.stem}"


def read_manifest(path, check_files=True) -> list[ManifestEntry]:
    """CSV with columns wav, annotation, patient_id, scenario (paths relative to the manifest)."""
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []  # empty file
        missing = {"wav", "patient_id", "scenario"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            if row["scenario"] not in SCENARIOS:
                raise ValueError(f"{path}:{lineno}: scenario must be one of {SCENARIOS}")
            wav = base / row["wav"]
            ann = base / row["annotation"] if row.get("annotation") else None
            if check_files:
                for f in (wav, ann):
                    if f is not None and not f.exists():
                        raise FileNotFoundError(f"{path}:{lineno}: {f} does not exist")
            entries.append(ManifestEntry(wav, ann, row["patient_id"], row["scenario"]))
    return entries


def extract_entry(entry: ManifestEntry, config: PipelineConfig | None = None) -> FeatureTable:
    config = config or PipelineConfig()
    sig = config.signal
    signal = load_audio(entry.wav, sig.sample_rate)
    table = extract_features(signal, sig, config.aux)
    if entry.annotation is not None:
        table.labels = frame_labels(read_annotations(entry.annotation), table.n_frames,
                                    sig.sample_rate, sig.frame_length, sig.hop_length)
    table.source_id = entry.wav.stem
    table.patient_id = entry.patient_id
    table.scenario = entry.scenario
    return table


def _extract_job(args):
    entry, config = args
    return extract_entry(entry, config)


def extract_many(entries, config=None, jobs=1):
    if jobs <= 1 or len(entries) <= 1:
        return [extract_entry(e, config) for e in entries]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_extract_job, [(e, config) for e in entries]))


# ---------------------------------------------------------------------------
# Long-term dataset


@dataclass
class LongTermDataset:
    groups: np.ndarray  # (n, 5, d) short-term vectors
    labels: np.ndarray  # (n,) majority labels
    frame_labels: np.ndarray  # (n, 5)
    streams: np.ndarray
    patients: np.ndarray
    scenarios: np.ndarray
    spans: np.ndarray  # (n, 2) first/last frame index within the stream
    start_times: np.ndarray
    end_times: np.ndarray
    feature_names: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "LongTermDataset":
        idx = np.asarray(idx)
        return LongTermDataset(
            self.groups[idx], self.labels[idx], self.frame_labels[idx], self.streams[idx],
            self.patients[idx], self.scenarios[idx], self.spans[idx], self.start_times[idx],
            self.end_times[idx], self.feature_names,
        )


def build_dataset(tables, selected=None, config: PipelineConfig | None = None) -> LongTermDataset:
    """Group each table's frames into overlapping 5-frame observations."""
    config = config or PipelineConfig()
    sig = config.signal
    frame_dur = sig.frame_length / sig.sample_rate
    parts = {k: [] for k in ("groups", "labels", "frame_labels", "streams", "patients",
                             "scenarios", "spans", "start", "end")}
    names = None
    for t in tables:
        cols = np.arange(t.matrix.shape[1]) if selected is None else np.asarray(selected)
        names = [t.feature_names[c] for c in cols]
        idx = group_indices(t.n_frames, sig.group_size, sig.group_stride)
        if len(idx) == 0:
            continue
        parts["groups"].append(t.matrix[:, cols][idx])
        fl = t.labels[idx] if t.labels is not None else np.zeros(idx.shape, dtype=np.int64)
        parts["frame_labels"].append(fl)
        parts["labels"].append(label_group(fl))
        sid = f"{t.patient_id}/{t.scenario}/{t.source_id}"
        parts["streams"].append(np.full(len(idx), sid, dtype=object))
        parts["patients"].append(np.full(len(idx), t.patient_id, dtype=object))
        parts["scenarios"].append(np.full(len(idx), t.scenario, dtype=object))
        parts["spans"].append(idx[:, [0, -1]])
        parts["start"].append(t.start_times[idx[:, 0]])
        parts["end"].append(t.start_times[idx[:, -1]] + frame_dur)
    if not parts["groups"]:
        raise ValueError("no recording is long enough to form a long-term observation")
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    return LongTermDataset(cat["groups"], cat["labels"], cat["frame_labels"], cat["streams"],
                           cat["patients"], cat["scenarios"], cat["spans"], cat["start"],
                           cat["end"], names or [])


def select_features(tables, config: PipelineConfig | None = None) -> NoiseRobustSelector:
    config = config or PipelineConfig()
    sel = config.selection
    X = np.vstack([t.matrix for t in tables])
    y = np.concatenate([t.labels for t in tables])
    groups = np.concatenate([np.full(t.n_frames, t.scenario) for t in tables])
    selector = NoiseRobustSelector(
        n_keep=sel.n_keep, top_set=sel.top_set, fraction=sel.fraction, n_trials=sel.n_trials,
        min_votes=sel.min_votes, k_neighbors=sel.k_neighbors,
        mle_k=(sel.mle_k_min, sel.mle_k_max), random_state=config.seed,
    )
    return selector.fit(X, y, groups, feature_names=tables[0].feature_names)


# ---------------------------------------------------------------------------
# Detector


class CoughDetector(ClassifierMixin, BaseEstimator):
    """Long-term representation plus polynomial SVM(s).

    ``X`` is an array of 5-frame groups, shape (n, 5, d).

    Parameters
    ----------
    representation : {"avgsd", "boaw"}
    mode : {"ensemble", "single", "per-part"}
        ``ensemble`` trains one model per scenario and votes; ``single``
        trains one model on everything; ``per-part`` trains one per scenario
        and scores each row with the model of its own scenario.
    k_pos, k_neg : int
        BoAW words per class.
    kmeans_max_iter, kmeans_tol : BoAW clustering limits.
    C, class_weight, gamma, coef0, tol : SVM settings.
    random_state : int or None
    """

    def __init__(self, representation="avgsd", mode="ensemble", k_pos=16, k_neg=16,
                 kmeans_max_iter=300, kmeans_tol=1e-6, C=1.0, class_weight="balanced",
                 gamma="auto", coef0=1.0, tol=1e-3, random_state=None):
        self.representation = representation
        self.mode = mode
        self.k_pos = k_pos
        self.k_neg = k_neg
        self.kmeans_max_iter = kmeans_max_iter
        self.kmeans_tol = kmeans_tol
        self.C = C
        self.class_weight = class_weight
        self.gamma = gamma
        self.coef0 = coef0
        self.tol = tol
        self.random_state = random_state

    @classmethod
    def from_config(cls, config: PipelineConfig, **overrides):
        r, s = config.representation, config.svm
        params = dict(representation=r.kind, mode=config.evaluation.train_mode, k_pos=r.k_pos,
                      k_neg=r.k_neg, kmeans_max_iter=r.kmeans_max_iter,
                      kmeans_tol=r.kmeans_tol, C=s.C, class_weight=s.class_weight, gamma=s.gamma,
                      coef0=s.coef0, tol=s.tol, random_state=config.seed)
        params.update(overrides)
        return cls(**params)

    def _svm(self):
        return PolySVC(C=self.C, class_weight=self.class_weight, gamma=self.gamma,
                       coef0=self.coef0, tol=self.tol)

    def fit(self, X, y, groups=None, frame_labels=None, feature_names=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 3:
            raise ValueError(f"expected (n, frames, features) groups, got shape {X.shape}")
        if self.representation == "avgsd":
            self.representer_ = AvgSD().fit(X)
        elif self.representation == "boaw":
            rep = SupervisedBoAW(self.k_pos, self.k_neg, self.kmeans_max_iter, self.kmeans_tol,
                                 random_state=self.random_state)
            if frame_labels is not None:
                rep.fit(X.reshape(-1, X.shape[-1]), np.asarray(frame_labels).ravel())
            else:
                rep.fit(X, y)
            self.representer_ = rep
        else:
            raise ValueError(f"unknown representation {self.representation!r}")
        H = self.representer_.transform(X)
        if self.mode == "single":
            self.model_ = self._svm().fit(H, y)
        elif self.mode in ("ensemble", "per-part"):
            if groups is None:
                raise ValueError(f"mode {self.mode!r} needs scenario tags in groups")
            self.model_ = VotingEnsemble(base=self._svm()).fit(H, y, np.asarray(groups))
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.classes_ = self.model_.classes_
        self.n_features_in_ = X.shape[-1]
        if feature_names is not None:
            if len(feature_names) != X.shape[-1]:
                raise ValueError(f"{len(feature_names)} feature names for {X.shape[-1]} features")
            self.feature_names_in_ = np.asarray(feature_names, dtype=object)
        return self

    def _check(self, X):
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[-1] != self.n_features_in_:
            raise ValueError(
                f"model expects groups with {self.n_features_in_} features, got shape {X.shape}"
            )
        return self.representer_.transform(X)

    def decision_function(self, X, groups=None):
        H = self._check(X)
        if self.mode == "per-part":
            if groups is None:
                raise ValueError("per-part scoring needs scenario tags")
            groups = np.asarray(groups)
            out = np.zeros(len(H))
            for part, model in self.model_.members_.items():
                rows = groups == part
                if rows.any():
                    out[rows] = model.decision_function(H[rows])
            return out
        return self.model_.decision_function(H)

    def predict(self, X, groups=None):
        if self.mode == "per-part":
            return self.classes_[(self.decision_function(X, groups) > 0).astype(int)]
        return self.model_.predict(self._check(X))

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "model_")
        arrays = {"model": np.frombuffer(self.model_.to_bytes(), dtype=np.uint8)}
        if self.representation == "boaw":
            arrays["codebook"] = np.frombuffer(self.representer_.codebook_.to_bytes(), dtype=np.uint8)
        meta = {"params": self.get_params(), "n_features_in_": self.n_features_in_}
        if hasattr(self, "feature_names_in_"):
            meta["feature_names"] = [str(n) for n in self.feature_names_in_]
        return container.pack(DETECTOR_MAGIC, meta, arrays)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CoughDetector":
        meta, arrays = container.unpack(blob, DETECTOR_MAGIC)
        det = cls(**meta["params"])
        det.n_features_in_ = meta["n_features_in_"]
        if "feature_names" in meta:
            det.feature_names_in_ = np.asarray(meta["feature_names"], dtype=object)
        blob_model = arrays["model"].tobytes()
        det.model_ = (PolySVC.from_bytes(blob_model) if det.mode == "single"
                      else VotingEnsemble.from_bytes(blob_model))
        det.classes_ = det.model_.classes_
        if det.representation == "boaw":
            rep = SupervisedBoAW(det.k_pos, det.k_neg, det.kmeans_max_iter, det.kmeans_tol,
                                 random_state=det.random_state)
            rep.codebook_ = Codebook.from_bytes(arrays["codebook"].tobytes())
            rep.n_features_in_ = det.n_features_in_
            det.representer_ = rep
        else:
            det.representer_ = AvgSD()
            det.representer_.n_features_in_ = det.n_features_in_
        return det

    def save(self, path) -> None:
        container.write_atomic(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "CoughDetector":
        return cls.from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Cross-validation


def make_partition(data: LongTermDataset, config: PipelineConfig):
    ev = config.evaluation
    if ev.scheme == "block5":
        return block5_partition(data.streams, data.spans, ev.n_blocks, ev.guard_groups)
    if ev.scheme == "lopo":
        return lopo_partition(data.patients)
    raise ValueError(f"unknown partition scheme {ev.scheme!r}")


@dataclass
class CrossValidationResult:
    overall: EvalReport
    per_scenario: dict
    predictions: np.ndarray
    scores: np.ndarray
    n_folds: int
    scheme: str


def cross_validate(data: LongTermDataset, config: PipelineConfig | None = None,
                   **detector_overrides) -> CrossValidationResult:
    """Fit and score a :class:`CoughDetector` on every fold of the configured partition."""
    config = config or PipelineConfig()
    plan = make_partition(data, config)
    preds = np.full(len(data), -1)
    scores = np.full(len(data), np.nan)
    fold_of = np.full(len(data), -1)
    for f, (train, test) in enumerate(plan):
        det = CoughDetector.from_config(config, **detector_overrides)
        tr = data.subset(train)
        det.fit(tr.groups, tr.labels, tr.scenarios, tr.frame_labels, data.feature_names or None)
        scores[test] = det.decision_function(data.groups[test], data.scenarios[test])
        preds[test] = det.predict(data.groups[test], data.scenarios[test])
        fold_of[test] = f
        log.info("fold %d/%d: %d train, %d test", f + 1, len(plan), len(train), len(test))

    def report(mask):
        triples = []
        for f in range(len(plan)):
            rows = mask & (fold_of == f)
            if rows.any():
                triples.append((preds[rows], scores[rows], data.labels[rows]))
        return summarize_folds(triples)

    covered = fold_of >= 0
    per_scenario = {}
    for part in SCENARIOS:
        mask = covered & (data.scenarios == part)
        if mask.any():
            per_scenario[part] = report(mask)
    return CrossValidationResult(report(covered), per_scenario, preds, scores, len(plan),
                                 plan.scheme)


def compare_representations(data, config=None, **detector_overrides):
    """AvgSD vs BoAW under the same folds, with McNemar's test on SEN and SPE rows."""
    config = config or PipelineConfig()
    detector_overrides.pop("representation", None)
    a = cross_validate(data, config, representation="avgsd", **detector_overrides)
    b = cross_validate(data, config, representation="boaw", **detector_overrides)
    out = {}
    for part in [None, *SCENARIOS]:
        rows = np.ones(len(data), bool) if part is None else data.scenarios == part
        rows &= (a.predictions >= 0)
        if not rows.any():
            continue
        pos, neg = rows & (data.labels == 1), rows & (data.labels == 0)
        out[part or "all"] = {
            "sen": mcnemar_test(a.predictions[pos], b.predictions[pos], data.labels[pos]),
            "spe": mcnemar_test(a.predictions[neg], b.predictions[neg], data.labels[neg]),
        }
    return a, b, out
