"""Noise-robust feature selection across recording scenarios.

The procedure per trial: draw a stratified 10% sample from each scenario,
rank features with ReliefF inside each scenario, then merge the three
rankings with a fixed priority order that favours features that are good
in the noisiest scenario. Five disjoint trials are merged by a vote.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y

log = logging.getLogger(__name__)

SCENARIOS = ("part1", "part2", "part3")
STEP_LABELS = {
    1: "all three parts",
    2: "parts 2 and 3",
    3: "parts 1 and 3",
    4: "parts 1 and 2",
    5: "part 3 only",
    6: "part 2 only",
    7: "part 1 only",
}


@dataclass
class RankedFeatureSet:
    scenario: str
    ranking: np.ndarray  # feature indices, best first
    weights: np.ndarray  # ReliefF weight for every feature (indexed by feature)
    feature_names: list = field(default_factory=list)

    @property
    def ranked_names(self) -> list:
        return [self.feature_names[i] for i in self.ranking] if self.feature_names else []

    @property
    def ranked_weights(self) -> np.ndarray:
        return self.weights[self.ranking]

    def top(self, n: int) -> set:
        return set(int(i) for i in self.ranking[:n])


@dataclass
class SelectionResult:
    selected: list  # feature indices in selection order
    provenance: dict  # feature index -> combination step (1..7)
    trial_votes: dict = field(default_factory=dict)
    feature_names: list = field(default_factory=list)

    @property
    def selected_names(self) -> list:
        return [self.feature_names[i] for i in self.selected] if self.feature_names else list(self.selected)


# ---------------------------------------------------------------------------
# Sampling


def stratified_sample(y, fraction=0.10, seed=None, exclude=None, min_class=10):
    """Indices of a class-stratified random subsample.

    Each class contributes ``round(fraction * class_size)`` rows drawn
    without replacement from rows not in ``exclude``.
    """
    return disjoint_stratified_samples(y, fraction, 1, seed, exclude, min_class)[0]


def disjoint_stratified_samples(y, fraction=0.10, n_draws=5, seed=None, exclude=None, min_class=10):
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    draws = [[] for _ in range(n_draws)]
    excluded = set() if exclude is None else set(int(i) for i in exclude)
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        if len(members) < min_class:
            raise ValueError(f"class {cls.item()!r} has {len(members)} observations, need >= {min_class}")
        per_draw = int(round(fraction * len(members)))
        pool = np.array([m for m in members if m not in excluded]) if excluded else members
        if per_draw * n_draws > len(pool):
            raise ValueError(
                f"class {cls.item()!r}: {n_draws} disjoint draws of {per_draw} exceed {len(pool)} rows"
            )
        perm = rng.permutation(pool)
        for d in range(n_draws):
            draws[d].append(perm[d * per_draw:(d + 1) * per_draw])
    return [np.sort(np.concatenate(parts)) for parts in draws]


# ---------------------------------------------------------------------------
# Intrinsic dimension


def intrinsic_dimension_mle(X, k_min=6, k_max=12):
    """Levina-Bickel maximum-likelihood intrinsic dimension, averaged over k.

    Zero neighbour distances (duplicate points) are skipped in the log ratios.
    """
    X = np.asarray(X, dtype=np.float64)
    if k_min < 2 or k_max < k_min:
        raise ValueError("need 2 <= k_min <= k_max")
    if X.shape[0] < k_max + 1:
        raise ValueError(f"need at least {k_max + 1} observations, got {X.shape[0]}")
    if np.all(X == X[0]):
        raise ValueError("all observations are identical")
    dist, _ = cKDTree(X).query(X, k=k_max + 1)
    dist = dist[:, 1:]  # drop self
    estimates = []
    for k in range(k_min, k_max + 1):
        tk = dist[:, k - 1:k]
        inner = dist[:, :k - 1]
        valid = (inner > 0) & (tk > 0)
        logs = np.zeros_like(inner)
        np.log(np.divide(tk, inner, out=np.ones_like(inner), where=valid), out=logs, where=valid)
        counts = valid.sum(axis=1)
        sums = logs.sum(axis=1)
        ok = (counts > 0) & (sums > 0)
        if not np.any(ok):
            continue
        estimates.append(np.mean(counts[ok] / sums[ok]))
    if not estimates:
        raise ValueError("no usable neighbour distances")
    return float(np.mean(estimates))


# ---------------------------------------------------------------------------
# ReliefF


def relieff_weights(X, y, k_neighbors=10):
    """Binary-class ReliefF weights using all instances as probes.

    Features are min-max scaled to [0, 1]; distance is Manhattan. Neighbour
    ties are broken by instance index.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) != 2:
        raise ValueError("ReliefF here expects exactly two classes")
    if counts.min() < k_neighbors + 1:
        raise ValueError(
            f"k_neighbors={k_neighbors} too large: smallest class has {counts.min()} rows"
        )
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    Z = np.zeros_like(X)
    np.divide(X - lo, span, out=Z, where=span > 0)
    n, d = Z.shape
    dist = cdist(Z, Z, metric="cityblock")
    np.fill_diagonal(dist, np.inf)
    weights = np.zeros(d)
    for i in range(n):
        order = np.argsort(dist[i], kind="stable")
        same = y[order] == y[i]
        hits = order[same][:k_neighbors]
        misses = order[~same][:k_neighbors]
        weights -= np.abs(Z[hits] - Z[i]).sum(axis=0)
        weights += np.abs(Z[misses] - Z[i]).sum(axis=0)
    return weights / (n * k_neighbors)


def rank_by_weight(weights, secondary=None):
    """Feature indices by weight desc, then ``secondary`` desc, then index asc."""
    weights = np.asarray(weights)
    idx = np.arange(len(weights))
    sec = np.zeros_like(weights) if secondary is None else np.asarray(secondary)
    return np.lexsort((idx, -sec, -weights))


def relieff_rank(X, y, k_neighbors=10, scenario="", feature_names=None) -> RankedFeatureSet:
    w = relieff_weights(X, y, k_neighbors)
    return RankedFeatureSet(scenario, rank_by_weight(w), w, list(feature_names or []))


class ReliefF(BaseEstimator, SelectorMixin):
    """ReliefF feature ranking as a scikit-learn selector.

    Parameters
    ----------
    n_features_to_select : int
    k_neighbors : int
    """

    def __init__(self, n_features_to_select=29, k_neighbors=10):
        self.n_features_to_select = n_features_to_select
        self.k_neighbors = k_neighbors

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.weights_ = relieff_weights(X, y, self.k_neighbors)
        self.ranking_ = rank_by_weight(self.weights_)
        self.n_features_in_ = X.shape[1]
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "ranking_")
        mask = np.zeros(self.n_features_in_, dtype=bool)
        mask[self.ranking_[: self.n_features_to_select]] = True
        return mask


# ---------------------------------------------------------------------------
# Combination and voting


def combine_rankings(part1: RankedFeatureSet, part2: RankedFeatureSet, part3: RankedFeatureSet,
                     target=29, top_set=30) -> SelectionResult:
    """Merge three scenario rankings by the seven-step priority rule.

    Membership tests use each part's best ``top_set`` features. Within a
    step, features are ordered by part-3 weight, then part-2, then part-1
    (all descending), then by index.
    """
    a1, a2, a3 = part1.top(top_set), part2.top(top_set), part3.top(top_set)
    union = a1 | a2 | a3
    if len(union) < target:
        raise ValueError(f"only {len(union)} candidate features for a target of {target}")
    all3 = a1 & a2 & a3
    steps = [
        all3,
        (a2 & a3) - all3,
        (a1 & a3) - all3,
        (a1 & a2) - all3,
        a3 - a1 - a2,
        a2 - a1 - a3,
        a1 - a2 - a3,
    ]

    def weight(part, f):
        return part.weights[f] if f < len(part.weights) else -np.inf

    selected, provenance = [], {}
    for step, members in enumerate(steps, start=1):
        if len(selected) >= target:
            break
        ordered = sorted(
            members,
            key=lambda f: (-weight(part3, f), -weight(part2, f), -weight(part1, f), f),
        )
        for f in ordered[: target - len(selected)]:
            selected.append(f)
            provenance[f] = step
    names = part1.feature_names or part2.feature_names or part3.feature_names
    return SelectionResult(selected, provenance, {}, list(names))


def stability_vote(trials, min_votes=3, target=29) -> SelectionResult:
    """Keep features chosen in at least ``min_votes`` trials.

    Order: votes desc, mean combination step asc, feature index asc.
    Truncated to ``target``; fewer are returned as-is.
    """
    trials = list(trials)
    if len(trials) != 5:
        raise ValueError(f"stability vote expects 5 trials, got {len(trials)}")
    votes, steps = {}, {}
    for trial in trials:
        for f in trial.selected:
            votes[f] = votes.get(f, 0) + 1
            steps.setdefault(f, []).append(trial.provenance.get(f, 7))
    keep = [f for f, v in votes.items() if v >= min_votes]
    keep.sort(key=lambda f: (-votes[f], float(np.mean(steps[f])), f))
    keep = keep[:target]
    if len(keep) < target:
        log.warning("only %d features reached %d votes (target %d)", len(keep), min_votes, target)
    provenance = {f: int(round(np.mean(steps[f]))) for f in keep}
    names = next((t.feature_names for t in trials if t.feature_names), [])
    return SelectionResult(keep, provenance, dict(votes), list(names))


class NoiseRobustSelector(BaseEstimator, SelectorMixin):
    """Scenario-aware ReliefF selection with a multi-trial stability vote.

    ``fit`` takes the short-term matrix, binary labels and a per-row
    scenario tag (``groups``). Each trial draws a disjoint stratified
    ``fraction`` of every scenario, ranks features there with ReliefF,
    combines the three rankings, and the trials are then voted on.

    Parameters
    ----------
    n_keep : int
        Target number of selected features.
    top_set : int
        Size of each scenario's best-feature set used for membership tests.
    fraction : float
        Share of each scenario sampled per trial.
    n_trials, min_votes : int
    k_neighbors : int
        ReliefF neighbours.
    mle_k : tuple of int
        ``(k_min, k_max)`` for the intrinsic-dimension estimate; ``None`` skips it.
    random_state : int or None
    """

    def __init__(self, n_keep=29, top_set=30, fraction=0.10, n_trials=5, min_votes=3,
                 k_neighbors=10, mle_k=(6, 12), random_state=None):
        self.n_keep = n_keep
        self.top_set = top_set
        self.fraction = fraction
        self.n_trials = n_trials
        self.min_votes = min_votes
        self.k_neighbors = k_neighbors
        self.mle_k = mle_k
        self.random_state = random_state

    def fit(self, X, y, groups=None, feature_names=None):
        X, y = check_X_y(X, y)
        if groups is None:
            raise ValueError("NoiseRobustSelector.fit needs per-row scenario tags in groups")
        groups = np.asarray(groups)
        names = list(feature_names) if feature_names is not None else [
            f"x{i}" for i in range(X.shape[1])
        ]
        rng = np.random.default_rng(self.random_state)
        draws = {}
        for part in SCENARIOS:
            rows = np.flatnonzero(groups == part)
            if len(rows) == 0:
                raise ValueError(f"no rows tagged {part!r}")
            seed = int(rng.integers(2**31))
            samples = disjoint_stratified_samples(y[rows], self.fraction, self.n_trials, seed)
            draws[part] = [rows[s] for s in samples]

        self.trials_, self.rankings_, self.intrinsic_dims_ = [], [], []
        for t in range(self.n_trials):
            ranked, dims = {}, {}
            for part in SCENARIOS:
                idx = draws[part][t]
                ranked[part] = relieff_rank(X[idx], y[idx], self.k_neighbors, part, names)
                if self.mle_k is not None:
                    Xs = X[idx]
                    sd = Xs.std(axis=0)
                    Xs = (Xs[:, sd > 0] - Xs[:, sd > 0].mean(axis=0)) / sd[sd > 0]
                    dims[part] = intrinsic_dimension_mle(Xs, *self.mle_k)
            self.rankings_.append(ranked)
            self.intrinsic_dims_.append(dims)
            self.trials_.append(combine_rankings(
                ranked["part1"], ranked["part2"], ranked["part3"], self.n_keep, self.top_set
            ))
        if self.n_trials == 5:
            self.result_ = stability_vote(self.trials_, self.min_votes, self.n_keep)
        else:
            self.result_ = self.trials_[0]
        self.selected_ = np.asarray(self.result_.selected, dtype=int)
        self.feature_names_in_ = np.asarray(names, dtype=object)
        self.n_features_in_ = X.shape[1]
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "selected_")
        mask = np.zeros(self.n_features_in_, dtype=bool)
        mask[self.selected_] = True
        return mask

    def transform(self, X):
        """Columns in selection order (not original column order)."""
        check_is_fitted(self, "selected_")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X[:, self.selected_]

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "selected_")
        names = self.feature_names_in_ if input_features is None else np.asarray(input_features)
        return np.asarray(names, dtype=object)[self.selected_]

    def report(self) -> str:
        """Human-readable table of the selected features."""
        check_is_fitted(self, "selected_")
        names = list(self.feature_names_in_)
        lines = [f"{'feature':<18}{'rank p1':>8}{'rank p2':>8}{'rank p3':>8}{'step':>6}{'votes':>7}"]
        last = self.rankings_[-1]
        for f in self.result_.selected:
            ranks = []
            for part in SCENARIOS:
                pos = np.flatnonzero(last[part].ranking == f)
                ranks.append(int(pos[0]) + 1 if len(pos) else 0)
            lines.append(
                f"{names[f]:<18}{ranks[0]:>8}{ranks[1]:>8}{ranks[2]:>8}"
                f"{self.result_.provenance.get(f, 0):>6}{self.result_.trial_votes.get(f, 0):>7}"
            )
        return "\n".join(lines) + "\n"
