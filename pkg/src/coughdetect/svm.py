"""Second-order polynomial-kernel SVM and the three-model voting ensemble.

The dual is solved with an SMO-style decomposition using second-order
working-set selection (Fan, Chen and Lin, 2005). Inputs are z-scored with
training statistics stored in the model.
"""
from __future__ import annotations

import logging
import warnings
from collections import OrderedDict
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import container

log = logging.getLogger(__name__)

MODEL_MAGIC = b"CDSVM\x00\x00\x01"
ENSEMBLE_MAGIC = b"CDENSMB\x01"
TAU = 1e-12


def poly2_kernel(x, z, gamma=1.0, coef0=1.0):
    """(gamma <x, z> + coef0)^2 for vectors or row matrices."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape[-1] != z.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {z.shape[-1]}")
    if x.ndim == 1 and z.ndim == 1:
        return float((gamma * np.dot(x, z) + coef0) ** 2)
    return (gamma * np.atleast_2d(x) @ np.atleast_2d(z).T + coef0) ** 2


class _KernelRows:
    """Lazy kernel rows with an LRU cache bounded in megabytes."""

    def __init__(self, X, gamma, coef0, cache_mb=200):
        self.X = X
        self.gamma = gamma
        self.coef0 = coef0
        self.diag = (gamma * np.einsum("ij,ij->i", X, X) + coef0) ** 2
        self.capacity = max(2, int(cache_mb * 2**20 // (8 * max(len(X), 1))))
        self.cache = OrderedDict()

    def __getitem__(self, i):
        row = self.cache.get(i)
        if row is None:
            row = (self.gamma * (self.X @ self.X[i]) + self.coef0) ** 2
            self.cache[i] = row
            if len(self.cache) > self.capacity:
                self.cache.popitem(last=False)
        else:
            self.cache.move_to_end(i)
        return row


def smo_solve(K: _KernelRows, y, C, tol=1e-3, max_iter=1_000_000):
    """Minimise 1/2 a'Qa - e'a s.t. 0 <= a_i <= C_i, y'a = 0.

    Returns ``(alpha, rho, gap, n_iter)``; the decision function is
    ``sum_i alpha_i y_i K(x_i, x) - rho``.
    """
    n = len(y)
    y = y.astype(np.float64)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        yg = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        yg_up = np.where(up, yg, -np.inf)
        i = int(np.argmax(yg_up))
        m = yg_up[i]
        M = np.min(np.where(low, yg, np.inf))
        gap = m - M
        if gap < tol:
            break
        Ki = K[i]
        b = m - yg
        cand = low & (b > 0)
        a = K.diag[i] + K.diag - 2.0 * Ki
        a = np.where(a > 0, a, TAU)
        score = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(score))
        Kj = K[j]
        # two-variable update in the y-signed variables (libsvm formulation)
        yi, yj = y[i], y[j]
        Ci, Cj = C[i], C[j]
        ai_old, aj_old = alpha[i], alpha[j]
        quad = K.diag[i] + K.diag[j] - 2.0 * Ki[j]
        quad = quad if quad > 0 else TAU
        if yi != yj:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai, aj = Ci, Ci - diff
            elif aj > Cj:
                aj, ai = Cj, Cj + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > Ci:
                if ai > Ci:
                    ai, aj = Ci, total - Ci
            elif aj < 0:
                aj, ai = 0.0, total
            if total > Cj:
                if aj > Cj:
                    aj, ai = Cj, total - Cj
            elif ai < 0:
                ai, aj = 0.0, total
        d_i, d_j = ai - ai_old, aj - aj_old
        alpha[i], alpha[j] = ai, aj
        # Q_ti = y_t y_i K_ti
        grad += y * (yi * d_i * Ki + yj * d_j * Kj)
    else:
        warnings.warn(f"SMO stopped at max_iter={max_iter} with gap {gap:.3g}")

    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        rho = float(yg[free].mean())
    else:
        ub, lb = np.inf, -np.inf
        for t in range(n):
            at_upper, at_lower = alpha[t] >= C[t], alpha[t] <= 0
            if (at_upper and y[t] < 0) or (at_lower and y[t] > 0):
                ub = min(ub, yg[t])
            elif (at_upper and y[t] > 0) or (at_lower and y[t] < 0):
                lb = max(lb, yg[t])
        rho = float((ub + lb) / 2)
    return alpha, rho, float(gap), it


class PolySVC(ClassifierMixin, BaseEstimator):
    """Binary SVM with a degree-2 polynomial kernel and built-in z-scoring.

    Parameters
    ----------
    C : float
        Box constraint before class weighting.
    class_weight : {"balanced", None} or dict
        ``"balanced"`` scales C per class by ``n / (2 * n_class)``.
    gamma : "auto" or float
        ``"auto"`` uses 1 / n_features (after dropping constant columns).
    coef0 : float
    tol : float
        Stopping tolerance on the maximal KKT violation.
    max_iter : int
    cache_mb : float
    """

    def __init__(self, C=1.0, class_weight="balanced", gamma="auto", coef0=1.0, tol=1e-3,
                 max_iter=1_000_000, cache_mb=200):
        self.C = C
        self.class_weight = class_weight
        self.gamma = gamma
        self.coef0 = coef0
        self.tol = tol
        self.max_iter = max_iter
        self.cache_mb = cache_mb

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        classes = np.unique(y)
        if len(classes) != 2:
            raise ValueError(f"need exactly two classes, got {len(classes)}")
        self.classes_ = classes
        ys = np.where(y == classes[1], 1.0, -1.0)
        self.n_features_in_ = X.shape[1]

        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        keep = scale > 1e-12 * np.maximum(np.abs(mean), 1.0)
        if not np.all(keep):
            warnings.warn(f"dropping {int((~keep).sum())} constant feature(s)")
        self.mean_, self.scale_, self.feature_mask_ = mean, np.where(keep, scale, 1.0), keep
        Z = self._standardize(X)

        d = int(keep.sum())
        self.gamma_ = 1.0 / max(d, 1) if self.gamma == "auto" else float(self.gamma)
        self.class_C_ = self._class_C(ys)
        C = np.where(ys > 0, self.class_C_[1], self.class_C_[0])
        K = _KernelRows(Z, self.gamma_, self.coef0, self.cache_mb)
        alpha, rho, gap, n_iter = smo_solve(K, ys, C, self.tol, self.max_iter)
        sv = alpha > 0
        self.support_ = np.flatnonzero(sv)
        self.support_vectors_ = Z[sv]
        self.dual_coef_ = alpha[sv] * ys[sv]
        self.alpha_ = alpha[sv]
        self.intercept_ = -rho
        self.kkt_gap_ = gap
        self.n_iter_ = n_iter
        return self

    def _class_C(self, ys):
        n = len(ys)
        n_pos = float((ys > 0).sum())
        n_neg = n - n_pos
        if self.class_weight == "balanced":
            return np.array([self.C * n / (2 * n_neg), self.C * n / (2 * n_pos)])
        if isinstance(self.class_weight, dict):
            w = self.class_weight
            return np.array([self.C * w.get(self.classes_[0], 1.0),
                             self.C * w.get(self.classes_[1], 1.0)])
        return np.array([self.C, self.C])

    def _standardize(self, X):
        return ((X - self.mean_) / self.scale_)[:, self.feature_mask_]

    def decision_function(self, X):
        check_is_fitted(self, "support_vectors_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"model expects {self.n_features_in_} features, got {X.shape[1]}"
            )
        Z = self._standardize(X)
        K = poly2_kernel(Z, self.support_vectors_, self.gamma_, self.coef0)
        return K @ self.dual_coef_ + self.intercept_

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]

    def kkt_residual(self, X, y):
        """Largest violation of the margin conditions over the training set."""
        X, y = check_X_y(X, y, dtype=np.float64)
        ys = np.where(y == self.classes_[1], 1.0, -1.0)
        alpha = np.zeros(len(y))
        alpha[self.support_] = self.alpha_
        C = np.where(ys > 0, self.class_C_[1], self.class_C_[0])
        margin = ys * self.decision_function(X) - 1.0
        viol = np.zeros(len(y))
        at0 = alpha <= 0
        atC = alpha >= C
        free = ~at0 & ~atC
        viol[at0] = np.maximum(0.0, -margin[at0])
        viol[atC] = np.maximum(0.0, margin[atC])
        viol[free] = np.abs(margin[free])
        return float(viol.max())

    # -- persistence ----------------------------------------------------------

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "support_vectors_")
        meta = {
            "params": {k: v for k, v in self.get_params().items()},
            "gamma_": self.gamma_,
            "intercept_": self.intercept_,
            "kkt_gap_": self.kkt_gap_,
            "n_iter_": self.n_iter_,
            "n_features_in_": self.n_features_in_,
        }
        arrays = {
            "classes_": np.asarray(self.classes_),
            "mean_": self.mean_,
            "scale_": self.scale_,
            "feature_mask_": self.feature_mask_.astype(np.uint8),
            "class_C_": self.class_C_,
            "support_": self.support_,
            "support_vectors_": self.support_vectors_,
            "dual_coef_": self.dual_coef_,
            "alpha_": self.alpha_,
        }
        return container.pack(MODEL_MAGIC, meta, arrays)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PolySVC":
        meta, arrays = container.unpack(blob, MODEL_MAGIC)
        model = cls(**meta["params"])
        for key in ("gamma_", "intercept_", "kkt_gap_", "n_iter_", "n_features_in_"):
            setattr(model, key, meta[key])
        for key, value in arrays.items():
            setattr(model, key, value)
        model.feature_mask_ = model.feature_mask_.astype(bool)
        return model

    def save(self, path) -> None:
        container.write_atomic(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "PolySVC":
        return cls.from_bytes(Path(path).read_bytes())


def ensemble_vote(decisions):
    """Majority over an odd number of binary votes (last axis)."""
    votes = np.asarray(decisions)
    single = votes.ndim == 1
    votes = np.atleast_2d(votes)
    if votes.shape[-1] != 3:
        raise ValueError(f"expected 3 votes, got {votes.shape[-1]}")
    out = (2 * (votes > 0).sum(axis=-1) > votes.shape[-1]).astype(np.int64)
    return int(out[0]) if single else out


class VotingEnsemble(ClassifierMixin, BaseEstimator):
    """Three scenario-specific :class:`PolySVC` models combined by majority vote.

    ``fit`` trains one member per scenario tag in ``groups``; ``predict``
    applies all members to every row. ``decision_function`` returns the mean
    member decision value, used as the ranking score for ROC analysis.
    """

    def __init__(self, base=None, parts=("part1", "part2", "part3")):
        self.base = base
        self.parts = parts

    def fit(self, X, y, groups=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        if groups is None:
            raise ValueError("VotingEnsemble.fit needs scenario tags in groups")
        groups = np.asarray(groups)
        proto = self.base if self.base is not None else PolySVC()
        self.members_ = {}
        for part in self.parts:
            rows = groups == part
            self.members_[part] = PolySVC(**proto.get_params()).fit(X[rows], y[rows])
        self.classes_ = np.unique(y)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_members(cls, members: dict) -> "VotingEnsemble":
        ens = cls(parts=tuple(members))
        ens.members_ = dict(members)
        first = next(iter(members.values()))
        ens.classes_ = first.classes_
        ens.n_features_in_ = first.n_features_in_
        dims = {m.n_features_in_ for m in members.values()}
        if len(dims) != 1:
            raise ValueError(f"ensemble members disagree on feature dimension: {sorted(dims)}")
        return ens

    def member_decisions(self, X):
        check_is_fitted(self, "members_")
        return np.column_stack([self.members_[p].decision_function(X) for p in self.parts])

    def decision_function(self, X):
        return self.member_decisions(X).mean(axis=1)

    def predict(self, X):
        votes = ensemble_vote(self.member_decisions(X))
        return self.classes_[votes]

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "members_")
        arrays = {
            p: np.frombuffer(self.members_[p].to_bytes(), dtype=np.uint8) for p in self.parts
        }
        return container.pack(ENSEMBLE_MAGIC, {"parts": list(self.parts)}, arrays)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "VotingEnsemble":
        meta, arrays = container.unpack(blob, ENSEMBLE_MAGIC)
        members = {p: PolySVC.from_bytes(arrays[p].tobytes()) for p in meta["parts"]}
        return cls.from_members(members)

    def save(self, path) -> None:
        container.write_atomic(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "VotingEnsemble":
        return cls.from_bytes(Path(path).read_bytes())


def load_model(path):
    """Load either a single model or an ensemble by sniffing the magic bytes."""
    blob = Path(path).read_bytes()
    if blob[:8] == ENSEMBLE_MAGIC:
        return VotingEnsemble.from_bytes(blob)
    return PolySVC.from_bytes(blob)
