"""Long-term representations over 5-frame groups: AvgSD and supervised BoAW."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import container

log = logging.getLogger(__name__)

CODEBOOK_MAGIC = b"CDCBOOK\x00"


def _groups(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected (n_groups, n_frames, n_features), got shape {X.shape}")
    return X


def avgsd(group):
    """[feature-wise mean || population SD] of one group or a batch of groups."""
    G = np.asarray(group, dtype=np.float64)
    single = G.ndim == 2
    G = _groups(G)
    out = np.concatenate([G.mean(axis=1), G.std(axis=1)], axis=-1)
    return out[0] if single else out


def label_group(labels):
    """Majority label of a group (odd size, so never tied)."""
    labels = np.asarray(labels)
    single = labels.ndim == 1
    labels = np.atleast_2d(labels)
    out = (2 * labels.sum(axis=-1) > labels.shape[-1]).astype(np.int64)
    return int(out[0]) if single else out


def nearest(X, C, chunk=4096):
    """Nearest centroid per row (Euclidean; ties go to the lowest index)."""
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    out = np.empty(X.shape[0], dtype=np.int64)
    for s in range(0, X.shape[0], chunk):
        d2 = ((X[s:s + chunk, None, :] - C[None, :, :]) ** 2).sum(axis=-1)
        out[s:s + chunk] = np.argmin(d2, axis=1)
    return out


def wcss(X, centroids, labels):
    return float(((X - centroids[labels]) ** 2).sum())


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int


def _farthest_point_init(X, k, rng):
    idx = [int(rng.integers(X.shape[0]))]
    d2 = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        idx.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[idx].copy()


def _hartigan(X, centroids, labels):
    """Single-point transfers until none lowers the within-cluster sum of squares."""
    k = centroids.shape[0]
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = centroids * counts[:, None]
    moved = True
    while moved:
        moved = False
        for i in range(X.shape[0]):
            a = labels[i]
            if counts[a] <= 1:
                continue
            d2 = ((centroids - X[i]) ** 2).sum(axis=1)
            cost_out = counts[a] / (counts[a] - 1.0) * d2[a]
            gain = counts / (counts + 1.0) * d2
            gain[a] = np.inf
            b = int(np.argmin(gain))
            if gain[b] < cost_out * (1.0 - 1e-12):
                sums[a] -= X[i]
                counts[a] -= 1
                sums[b] += X[i]
                counts[b] += 1
                centroids[a] = sums[a] / counts[a]
                centroids[b] = sums[b] / counts[b]
                labels[i] = b
                moved = True
    return centroids, labels


def kmeans_fit(X, k=16, seed=None, max_iter=300, tol=1e-6) -> KMeansResult:
    """Lloyd iterations from farthest-point seeding, refined by Hartigan transfers.

    Empty clusters are re-seeded from the point farthest from its centroid.
    The returned labels are a local optimum: no single reassignment lowers
    the objective, and every point is nearest to its own centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    if len(np.unique(X, axis=0)) < k:
        raise ValueError(f"need at least {k} distinct points for k={k}")
    rng = np.random.default_rng(seed)
    centroids = _farthest_point_init(X, k, rng)
    prev = np.inf
    labels = nearest(X, centroids)
    it = 0
    for it in range(1, max_iter + 1):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(((X - centroids[labels]) ** 2).sum(axis=1)))
                centroids[c] = X[far]
                labels[far] = c
        new = nearest(X, centroids)
        obj = wcss(X, centroids, new)
        changed = np.any(new != labels)
        labels = new
        if not changed or (np.isfinite(prev) and prev - obj <= tol * max(prev, 1e-300)):
            break
        prev = obj
    while True:
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = X[members].mean(axis=0)
        centroids, labels = _hartigan(X, centroids, labels)
        new = nearest(X, centroids)
        if np.array_equal(new, labels):
            break
        labels = new
    return KMeansResult(centroids, labels, wcss(X, centroids, labels), it)


@dataclass
class Codebook:
    words: np.ndarray
    class_of_word: np.ndarray  # 1 for positive-class words, 0 otherwise
    k_pos: int
    k_neg: int
    meta: dict = field(default_factory=dict)

    def encode(self, group):
        return boaw_encode(group, self)

    def to_bytes(self) -> bytes:
        meta = {"k_pos": self.k_pos, "k_neg": self.k_neg, **self.meta}
        return container.pack(CODEBOOK_MAGIC, meta,
                              {"words": self.words, "class_of_word": self.class_of_word})

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Codebook":
        meta, arrays = container.unpack(blob, CODEBOOK_MAGIC)
        k_pos, k_neg = meta.pop("k_pos"), meta.pop("k_neg")
        return cls(arrays["words"], arrays["class_of_word"], k_pos, k_neg, meta)

    def save(self, path) -> None:
        container.write_atomic(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "Codebook":
        return cls.from_bytes(Path(path).read_bytes())


def build_codebook(pos_data, neg_data, k_pos=16, k_neg=16, seed=None, max_iter=300, tol=1e-6):
    """Cluster each class separately and stack the words (positive first)."""
    pos = kmeans_fit(pos_data, k_pos, seed, max_iter, tol)
    neg = kmeans_fit(neg_data, k_neg, seed, max_iter, tol)
    words = np.vstack([pos.centroids, neg.centroids])
    cls = np.concatenate([np.ones(k_pos, dtype=np.int64), np.zeros(k_neg, dtype=np.int64)])
    meta = {"seed": seed, "iterations": [pos.n_iter, neg.n_iter]}
    return Codebook(words, cls, k_pos, k_neg, meta)


def boaw_encode(group, codebook: Codebook):
    """Histogram of nearest audio words over each group."""
    G = np.asarray(group, dtype=np.float64)
    single = G.ndim == 2
    G = _groups(G)
    if G.shape[-1] != codebook.words.shape[1]:
        raise ValueError(
            f"feature dimension {G.shape[-1]} does not match codebook {codebook.words.shape[1]}"
        )
    n_g, n_f, d = G.shape
    assign = nearest(G.reshape(-1, d), codebook.words).reshape(n_g, n_f)
    n_words = codebook.words.shape[0]
    hist = np.zeros((n_g, n_words), dtype=np.int64)
    np.add.at(hist, (np.repeat(np.arange(n_g), n_f), assign.ravel()), 1)
    return hist[0] if single else hist


class AvgSD(BaseEstimator, TransformerMixin):
    """Stateless AvgSD lift of (n_groups, 5, d) arrays to (n_groups, 2d)."""

    def fit(self, X, y=None):
        self.n_features_in_ = _groups(X).shape[-1]
        return self

    def transform(self, X):
        X = _groups(X)
        n_in = getattr(self, "n_features_in_", X.shape[-1])
        if X.shape[-1] != n_in:
            raise ValueError(f"expected {n_in} features per frame, got {X.shape[-1]}")
        return avgsd(X)


class SupervisedBoAW(BaseEstimator, TransformerMixin):
    """Bag-of-audio-words with class-separated codebooks.

    ``fit`` accepts short-term frames (2-D) with frame labels, or groups
    (3-D) with group labels that are then shared by each group's frames.
    ``transform`` maps (n_groups, 5, d) groups to word histograms.

    Parameters
    ----------
    k_pos, k_neg : int
        Number of audio words per class.
    max_iter : int
    tol : float
    random_state : int or None
    """

    def __init__(self, k_pos=16, k_neg=16, max_iter=300, tol=1e-6, random_state=None):
        self.k_pos = k_pos
        self.k_neg = k_neg
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim == 3:
            y = np.repeat(y, X.shape[1])
            X = X.reshape(-1, X.shape[-1])
        self.codebook_ = build_codebook(
            X[y == 1], X[y != 1], self.k_pos, self.k_neg, self.random_state, self.max_iter, self.tol
        )
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "codebook_")
        return boaw_encode(_groups(X), self.codebook_).astype(np.float64)
