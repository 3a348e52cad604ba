"""Partitions, frame-level metrics, ROC/AUC, McNemar's test and SNR annotation."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chi2

log = logging.getLogger(__name__)


@dataclass
class PartitionPlan:
    scheme: str
    folds: list  # list of (train_indices, test_indices)
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)


def block_sizes(n: int, n_blocks: int = 5) -> list[int]:
    """Near-equal contiguous block lengths; the remainder goes to leading blocks."""
    base, extra = divmod(n, n_blocks)
    return [base + (1 if b < extra else 0) for b in range(n_blocks)]


def _spans_overlap(a, b):
    return a[0] <= b[1] and b[0] <= a[1]


def block5_partition(streams, spans=None, n_blocks=5, guard=0) -> PartitionPlan:
    """Temporally blocked cross-validation over several observation streams.

    Parameters
    ----------
    streams : array-like
        Stream id per observation (e.g. ``"p03/part2"``); observations of a
        stream must appear in temporal order.
    spans : array-like of shape (n, 2), optional
        First and last short-term frame of each observation. Training
        observations whose span overlaps a test span of the same stream are
        dropped from that fold's training set.
    n_blocks : int
    guard : int
        Extra observations removed from training on each side of a test block.

    Streams with fewer than ``n_blocks`` observations are left out with a warning.
    """
    streams = np.asarray(streams)
    n = len(streams)
    block_of = np.full(n, -1)
    stream_pos = {}
    for sid in dict.fromkeys(streams.tolist()):
        rows = np.flatnonzero(streams == sid)
        if len(rows) < n_blocks:
            log.warning("stream %s has %d observations (< %d); excluded", sid, len(rows), n_blocks)
            continue
        sizes = block_sizes(len(rows), n_blocks)
        block_of[rows] = np.repeat(np.arange(n_blocks), sizes)
        stream_pos[sid] = rows
    folds = []
    for b in range(n_blocks):
        test = np.flatnonzero(block_of == b)
        train_mask = (block_of >= 0) & (block_of != b)
        for sid, rows in stream_pos.items():
            in_test = rows[block_of[rows] == b]
            if len(in_test) == 0:
                continue
            lo, hi = np.searchsorted(rows, in_test[0]), np.searchsorted(rows, in_test[-1])
            if guard:
                train_mask[rows[max(lo - guard, 0):lo]] = False
                train_mask[rows[hi + 1:hi + 1 + guard]] = False
            if spans is not None:
                spans = np.asarray(spans)
                t_lo, t_hi = spans[in_test, 0].min(), spans[in_test, 1].max()
                neighbours = rows[train_mask[rows]]
                clash = (spans[neighbours, 0] <= t_hi) & (t_lo <= spans[neighbours, 1])
                train_mask[neighbours[clash]] = False
        folds.append((np.flatnonzero(train_mask), test))
    return PartitionPlan("block5", folds, {"n_blocks": n_blocks, "guard": guard,
                                           "streams": list(stream_pos)})


def lopo_partition(patients) -> PartitionPlan:
    """One fold per patient; that patient's observations form the test set."""
    patients = np.asarray(patients)
    ids = list(dict.fromkeys(patients.tolist()))
    if len(ids) < 2:
        raise ValueError("leave-one-patient-out needs at least two patients")
    folds = [(np.flatnonzero(patients != p), np.flatnonzero(patients == p)) for p in ids]
    return PartitionPlan("lopo", folds, {"patients": ids})


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class EvalReport:
    sen: float = float("nan")
    spe: float = float("nan")
    acc: float = float("nan")
    auc: float = float("nan")
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    auc_pooled: float = float("nan")
    per_fold: list = field(default_factory=list)
    roc_points: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def confusion(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self, title="Evaluation") -> str:
        lines = [
            title,
            f"  SEN {self.sen:6.2f}%   SPE {self.spe:6.2f}%   ACC {self.acc:6.2f}%   "
            f"AUC {100 * self.auc:6.2f}%",
            f"  TP {self.tp}  FN {self.fn}  TN {self.tn}  FP {self.fp}",
        ]
        if not np.isnan(self.auc_pooled):
            lines.append(f"  pooled AUC {100 * self.auc_pooled:6.2f}%")
        for i, fold in enumerate(self.per_fold, start=1):
            lines.append(
                f"  fold {i}: SEN {fold['sen']:6.2f}  SPE {fold['spe']:6.2f}  "
                f"ACC {fold['acc']:6.2f}  AUC {100 * fold['auc']:6.2f}"
            )
        return "\n".join(lines) + "\n"

    def save(self, stem) -> None:
        """Write ``<stem>.json``, ``<stem>.txt`` and ``<stem>_roc.csv``."""
        stem = Path(stem)
        stem.with_suffix(".json").write_text(json.dumps(_jsonable(self.to_dict()), indent=2))
        stem.with_suffix(".txt").write_text(self.to_text(stem.name))
        export_roc(self.roc_points, stem.with_name(stem.name + "_roc.csv"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and np.isnan(obj):
        return None
    return obj


def _pct(num, den):
    return 100.0 * num / den if den else float("nan")


def confusion_metrics(predictions, labels) -> EvalReport:
    pred = np.asarray(predictions).astype(int)
    lab = np.asarray(labels).astype(int)
    if pred.shape != lab.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {lab.shape}")
    tp = int(((pred == 1) & (lab == 1)).sum())
    fn = int(((pred != 1) & (lab == 1)).sum())
    tn = int(((pred != 1) & (lab != 1)).sum())
    fp = int(((pred == 1) & (lab != 1)).sum())
    return EvalReport(_pct(tp, tp + fn), _pct(tn, tn + fp), _pct(tp + tn, len(lab)),
                      tp=tp, fp=fp, tn=tn, fn=fn)


def roc_curve_points(scores, labels):
    """(FPR, TPR) at every distinct threshold, from (0, 0) to (1, 1)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC analysis needs both classes")
    order = np.argsort(-scores, kind="stable")
    s, l = scores[order], labels[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tps = np.cumsum(l == 1)[last_of_run]
    fps = np.cumsum(l != 1)[last_of_run]
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    return fpr, tpr


def roc_auc(scores, labels):
    """Trapezoidal AUC over all thresholds; returns ``(auc, roc_points)``."""
    fpr, tpr = roc_curve_points(scores, labels)
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return auc, list(zip(fpr.tolist(), tpr.tolist()))


def export_roc(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr"])
        for fpr, tpr in points:
            w.writerow([repr(float(fpr)), repr(float(tpr))])


@dataclass
class McNemarResult:
    statistic: float
    p_value: float
    b: int
    c: int

    @property
    def stars(self) -> str:
        return significance_stars(self.p_value)


def significance_stars(p: float) -> str:
    return "**" if p < 0.01 else "*" if p < 0.05 else ""


def mcnemar_test(pred_a, pred_b, labels) -> McNemarResult:
    """Continuity-corrected McNemar chi-square on discordant outcomes.

    ``b`` counts rows A gets right and B wrong, ``c`` the reverse.
    """
    a = np.asarray(pred_a) == np.asarray(labels)
    bb = np.asarray(pred_b) == np.asarray(labels)
    if a.shape != bb.shape:
        raise ValueError("length mismatch")
    b = int((a & ~bb).sum())
    c = int((~a & bb).sum())
    if b + c == 0:
        return McNemarResult(0.0, 1.0, b, c)
    stat = max(abs(b - c) - 1, 0) ** 2 / (b + c)
    return McNemarResult(float(stat), float(chi2.sf(stat, 1)), b, c)


def summarize_folds(fold_results) -> EvalReport:
    """Aggregate per-fold ``(predictions, scores, labels)`` triples.

    Headline SEN/SPE/ACC/AUC are fold averages; confusion counts and the
    pooled AUC/ROC come from all folds together.
    """
    per_fold, preds, scores, labels = [], [], [], []
    for pred, score, lab in fold_results:
        rep = confusion_metrics(pred, lab)
        try:
            auc, _ = roc_auc(score, lab)
        except ValueError:
            auc = float("nan")
        per_fold.append({"sen": rep.sen, "spe": rep.spe, "acc": rep.acc, "auc": auc,
                         **rep.confusion})
        preds.append(np.asarray(pred))
        scores.append(np.asarray(score))
        labels.append(np.asarray(lab))
    pred, score, lab = (np.concatenate(v) for v in (preds, scores, labels))
    pooled = confusion_metrics(pred, lab)
    report = EvalReport(
        sen=float(np.nanmean([f["sen"] for f in per_fold])),
        spe=float(np.nanmean([f["spe"] for f in per_fold])),
        acc=float(np.nanmean([f["acc"] for f in per_fold])),
        auc=float(np.nanmean([f["auc"] for f in per_fold])),
        **pooled.confusion,
        per_fold=per_fold,
    )
    if len(np.unique(lab)) == 2:
        report.auc_pooled, report.roc_points = roc_auc(score, lab)
    return report


# ---------------------------------------------------------------------------
# SNR annotation


@dataclass
class SnrEstimate:
    start: int
    end: int
    snr_db: float
    cough_power: float
    noise_power: float
    flags: tuple = ()


def snr_annotate(samples, cough_spans, noise_length=None):
    """SNR of each annotated cough span against the surrounding non-cough audio.

    ``cough_spans`` are half-open ``(start, end)`` sample ranges. Noise power
    is the mean power of equally long non-cough segments immediately before
    and after the event (truncated at neighbouring events). A one-sided
    estimate is flagged ``"one-sided"``; excess power at or below zero gives
    ``-inf`` flagged ``"non-positive-excess"``.
    """
    x = np.asarray(samples, dtype=np.float64)
    spans = sorted((int(a), int(b)) for a, b in cough_spans)
    for a, b in spans:
        if not 0 <= a < b <= len(x):
            raise ValueError(f"span ({a}, {b}) outside recording of {len(x)} samples")
    out = []
    for i, (a, b) in enumerate(spans):
        length = noise_length or (b - a)
        prev_end = spans[i - 1][1] if i > 0 else 0
        next_start = spans[i + 1][0] if i + 1 < len(spans) else len(x)
        before = x[max(a - length, prev_end):a]
        after = x[b:min(b + length, next_start)]
        sides = [seg for seg in (before, after) if len(seg)]
        flags = []
        if len(sides) < 2:
            flags.append("one-sided")
        if not sides:
            out.append(SnrEstimate(a, b, float("nan"), float(np.mean(x[a:b] ** 2)),
                                   float("nan"), ("no-noise-reference",)))
            continue
        p_noise = float(np.mean([np.mean(seg ** 2) for seg in sides]))
        p_cough = float(np.mean(x[a:b] ** 2))
        if p_noise <= 0 < p_cough:
            flags.append("zero-noise")
            snr = float("inf")
        elif p_cough <= p_noise:
            flags.append("non-positive-excess")
            snr = float("-inf")
        else:
            snr = 10.0 * np.log10((p_cough - p_noise) / p_noise)
        out.append(SnrEstimate(a, b, float(snr), p_cough, p_noise, tuple(flags)))
    return out
