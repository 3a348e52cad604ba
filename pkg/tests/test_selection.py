import time

import numpy as np
import pytest

from coughdetect.selection import (
    NoiseRobustSelector,
    RankedFeatureSet,
    ReliefF,
    SelectionResult,
    combine_rankings,
    disjoint_stratified_samples,
    intrinsic_dimension_mle,
    relieff_weights,
    stability_vote,
    stratified_sample,
)


def _labels(n_pos=100, n_neg=900):
    return np.r_[np.ones(n_pos, int), np.zeros(n_neg, int)]


# -- sampling -----------------------------------------------------------------


def test_stratified_counts():
    y = _labels()
    idx = stratified_sample(y, 0.10, seed=1)
    assert (y[idx] == 1).sum() == 10 and (y[idx] == 0).sum() == 90


def test_stratified_is_deterministic():
    y = _labels()
    np.testing.assert_array_equal(stratified_sample(y, seed=3), stratified_sample(y, seed=3))
    assert not np.array_equal(stratified_sample(y, seed=3), stratified_sample(y, seed=4))


def test_five_disjoint_draws_use_half_the_data():
    y = _labels()
    draws = disjoint_stratified_samples(y, 0.10, 5, seed=2)
    allidx = np.concatenate(draws)
    assert len(allidx) == len(set(allidx.tolist())) == 500


def test_small_class_error_names_class():
    y = np.r_[np.ones(5, int), np.zeros(100, int)]
    with pytest.raises(ValueError, match="class 1"):
        stratified_sample(y)


# -- intrinsic dimension --------------------------------------------------------


def test_mle_line_in_10d():
    rng = np.random.default_rng(0)
    t = rng.uniform(size=(1000, 1))
    X = t @ rng.normal(size=(1, 10))
    assert 0.8 <= intrinsic_dimension_mle(X) <= 1.3


def test_mle_cube_in_20d():
    rng = np.random.default_rng(1)
    q, _ = np.linalg.qr(rng.normal(size=(20, 3)))
    X = rng.uniform(size=(2000, 3)) @ q.T
    assert 2.5 <= intrinsic_dimension_mle(X) <= 3.6


def test_mle_duplicates_and_errors():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(300, 2))
    X = np.vstack([X, X[:50]])  # duplicates are skipped, not fatal
    assert intrinsic_dimension_mle(X) > 0
    with pytest.raises(ValueError):
        intrinsic_dimension_mle(np.ones((50, 3)))
    with pytest.raises(ValueError):
        intrinsic_dimension_mle(X[:10])


# -- ReliefF ------------------------------------------------------------------


def _separable(n=500, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.permutation(np.r_[np.ones(n // 2, int), np.zeros(n - n // 2, int)])
    X = rng.uniform(size=(n, 10))
    X[:, 4] = y + rng.uniform(0, 0.4, size=n)
    return X, y


def test_informative_feature_ranked_first():
    X, y = _separable()
    w = relieff_weights(X, y)
    assert np.argmax(w) == 4
    assert ReliefF(1).fit(X, y).get_support().nonzero()[0].tolist() == [4]


def test_class_independent_feature_has_near_zero_weight():
    X, y = _separable()
    X[:, 0] = 0.5
    w = relieff_weights(X, y)
    assert w[0] == 0
    assert np.all(np.abs(np.delete(w, 4)) < 0.05)


def test_duplicated_feature_equal_weights():
    X, y = _separable()
    X = np.column_stack([X, X[:, 4]])
    w = relieff_weights(X, y)
    assert w[4] == pytest.approx(w[10], abs=1e-9)


def test_weights_within_unit_interval():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 8))
    y = (X[:, 0] + rng.normal(size=200) > 0).astype(int)
    w = relieff_weights(X, y)
    assert np.all((w >= -1) & (w <= 1))


def test_affine_transform_keeps_weights():
    X, y = _separable(200, seed=5)
    w = relieff_weights(X, y)
    X2 = X.copy()
    X2[:, 2] = 7.5 * X2[:, 2] - 3.0
    np.testing.assert_allclose(relieff_weights(X2, y), w, atol=1e-12)


def test_relieff_k_too_large():
    X, y = _separable(30)
    with pytest.raises(ValueError, match="k_neighbors"):
        relieff_weights(X, y, k_neighbors=20)


# -- combination ---------------------------------------------------------------


def _ranked(order, d=117, scenario="p"):
    order = list(order)
    rest = [i for i in range(d) if i not in order]
    ranking = np.array(order + rest)
    weights = np.zeros(d)
    weights[ranking] = np.linspace(1, 0, d)
    return RankedFeatureSet(scenario, ranking, weights)


def test_combine_identical_sets():
    r = _ranked(range(30))
    out = combine_rankings(r, r, r, target=29, top_set=29)
    assert sorted(out.selected) == list(range(29))
    assert set(out.provenance.values()) == {1}


def test_combine_disjoint_sets_takes_part3_first():
    p1, p2, p3 = _ranked(range(0, 30)), _ranked(range(30, 60)), _ranked(range(60, 90))
    out = combine_rankings(p1, p2, p3, target=29, top_set=29)
    assert out.selected == list(range(60, 89))
    assert set(out.provenance.values()) == {5}


def test_combine_stops_inside_step_two():
    common = list(range(20))
    only23 = list(range(20, 32))
    p1 = _ranked(common + list(range(40, 49)))
    p2 = _ranked(common + only23[:9])
    p3 = _ranked(common + only23[:9])
    out = combine_rankings(p1, p2, p3, target=29, top_set=29)
    assert len(out.selected) == 29
    assert sum(v == 1 for v in out.provenance.values()) == 20
    assert sum(v == 2 for v in out.provenance.values()) == 9


def test_combine_shortfall_raises():
    r = _ranked(range(10), d=10)
    with pytest.raises(ValueError, match="candidate"):
        combine_rankings(r, r, r, target=29)


def test_combine_ignores_tail_order():
    a = _ranked(list(range(30)) + list(range(50, 117)))
    b = _ranked(list(range(30)) + list(range(116, 49, -1)))
    assert combine_rankings(a, a, a).selected == combine_rankings(b, b, b).selected


# -- voting ---------------------------------------------------------------------


def _result(feats, step=1):
    return SelectionResult(list(feats), {f: step for f in feats})


def test_vote_20_4_5():
    five, four, three = list(range(20)), list(range(20, 24)), list(range(24, 29))
    trials = []
    for t in range(5):
        feats = five + (four if t < 4 else []) + (three if t < 3 else []) + [100 + t]
        trials.append(_result(feats))
    out = stability_vote(trials)
    assert sorted(out.selected) == list(range(29))
    assert out.trial_votes[0] == 5 and out.trial_votes[24] == 3
    assert 100 not in out.selected  # single-vote feature excluded


def test_vote_excludes_two_vote_features():
    trials = [_result(range(29)) for _ in range(3)] + [_result([50, 51]) for _ in range(2)]
    out = stability_vote(trials)
    assert 50 not in out.selected


def test_vote_idempotent():
    r = _result(list(range(5, 34)), step=2)
    out = stability_vote([r] * 5)
    assert out.selected == r.selected
    assert out.provenance == r.provenance


def test_vote_needs_five_trials():
    with pytest.raises(ValueError):
        stability_vote([_result(range(29))] * 4)


# -- full selector -----------------------------------------------------------------


def planted_dataset(n=5000, n_informative=29, n_features=117, shift=1.5, seed=0):
    rng = np.random.default_rng(seed)
    y = (rng.uniform(size=n) < 0.3).astype(int)
    X = rng.normal(size=(n, n_features))
    informative = rng.choice(n_features, n_informative, replace=False)
    X[:, informative] += shift * y[:, None]
    groups = np.array(["part1", "part2", "part3"])[rng.integers(0, 3, size=n)]
    return X, y, groups, set(informative.tolist())


def test_selector_recovers_planted_features():
    X, y, groups, planted = planted_dataset()
    t = time.perf_counter()
    sel = NoiseRobustSelector(random_state=0).fit(X, y, groups)
    assert time.perf_counter() - t < 60
    assert len(planted & set(sel.selected_.tolist())) >= 26
    again = NoiseRobustSelector(random_state=0).fit(X, y, groups)
    np.testing.assert_array_equal(sel.selected_, again.selected_)
    assert sel.transform(X).shape == (len(X), len(sel.selected_))
    names = sel.get_feature_names_out()
    assert list(names) == [f"x{i}" for i in sel.selected_]
    assert "votes" in sel.report()
