import numpy as np
import pytest
from sklearn.svm import SVC

from coughdetect.svm import PolySVC, VotingEnsemble, ensemble_vote, load_model, poly2_kernel


def _blobs(n=100, d=2, gap=4.0, seed=0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(size=(n, d)) - gap / 2, rng.normal(size=(n, d)) + gap / 2])
    y = np.r_[np.zeros(n, int), np.ones(n, int)]
    return X, y


def _noisy(n=300, d=5, seed=1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (X[:, 0] * X[:, 1] + 0.3 * X[:, 2] + 0.5 * rng.normal(size=n) > 0).astype(int)
    return X, y


def test_kernel_examples():
    assert poly2_kernel([0, 0], [0, 0], 1.0, 1.0) == 1
    assert poly2_kernel([1, 0], [0, 1], 1.0, 0.0) == 0
    assert poly2_kernel([1, 2], [3, 4], 1.0, 1.0) == 144
    with pytest.raises(ValueError, match="dimension"):
        poly2_kernel([1, 2], [1, 2, 3])


def test_kernel_psd():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n, d = rng.integers(2, 40), rng.integers(1, 10)
        X = rng.normal(size=(n, d)) * rng.uniform(0.1, 5)
        K = poly2_kernel(X, X, 1.0 / d, 1.0)
        np.testing.assert_allclose(K, K.T, rtol=1e-12)
        assert np.linalg.eigvalsh(K).min() >= -1e-8 * np.trace(K)


def test_xor():
    X = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]], float)
    y = (X[:, 0] * X[:, 1] > 0).astype(int)
    m = PolySVC(C=100).fit(X, y)
    assert (m.predict(X) == y).all()


def test_separable_blobs():
    X, y = _blobs()
    assert (PolySVC().fit(X, y).predict(X) == y).all()


def test_errors():
    X, y = _blobs(10)
    with pytest.raises(ValueError, match="two classes"):
        PolySVC().fit(X, np.zeros(len(y)))
    Xn = X.copy()
    Xn[0, 0] = np.nan
    with pytest.raises(ValueError):
        PolySVC().fit(Xn, y)
    m = PolySVC().fit(X, y)
    with pytest.raises(ValueError, match="features"):
        m.decision_function(np.zeros((2, 3)))


def test_dual_invariants_and_kkt():
    X, y = _noisy()
    m = PolySVC().fit(X, y)
    assert m.kkt_residual(X, y) <= 1e-3
    ys = np.where(y[m.support_] == 1, 1.0, -1.0)
    assert abs(m.dual_coef_.sum()) < 1e-6
    cap = np.where(ys > 0, m.class_C_[1], m.class_C_[0])
    assert np.all(np.abs(m.dual_coef_) <= cap + 1e-12)


def test_free_support_vectors_on_margin():
    X, y = _noisy()
    m = PolySVC().fit(X, y)
    ys = np.where(y[m.support_] == 1, 1.0, -1.0)
    cap = np.where(ys > 0, m.class_C_[1], m.class_C_[0])
    free = m.alpha_ < cap * (1 - 1e-6)
    assert free.any()
    dec = m.decision_function(X[m.support_][free])
    np.testing.assert_allclose(dec, ys[free], atol=1e-2)


def test_duplication_invariance():
    X, y = _blobs(30, gap=6.0, seed=3)
    a = PolySVC(C=1e3, tol=1e-6).fit(X, y)
    b = PolySVC(C=1e3, tol=1e-6).fit(np.vstack([X, X]), np.r_[y, y])
    g = np.stack(np.meshgrid(np.linspace(-4, 4, 9), np.linspace(-4, 4, 9)), -1).reshape(-1, 2)
    np.testing.assert_allclose(a.decision_function(g), b.decision_function(g), atol=1e-6 * 1e3)
    np.testing.assert_array_equal(a.predict(g), b.predict(g))


def test_monotone_along_normal():
    X, y = _blobs(50, gap=6.0, seed=4)
    m = PolySVC().fit(X, y)
    t = np.linspace(-1, 1, 21)[:, None]
    probe = t * np.array([[1.0, 1.0]])  # from the negative towards the positive blob
    assert np.all(np.diff(m.decision_function(probe)) > 0)


def test_batch_equals_single_and_deterministic():
    X, y = _noisy()
    m = PolySVC().fit(X, y)
    batch = m.decision_function(X[:20])
    single = np.array([m.decision_function(x[None])[0] for x in X[:20]])
    np.testing.assert_allclose(batch, single, rtol=1e-12, atol=1e-12)
    assert m.decision_function(X).tobytes() == m.decision_function(X).tobytes()


def test_feature_rescaling_keeps_predictions():
    X, y = _noisy()
    a = PolySVC().fit(X, y).predict(X)
    X2 = X.copy()
    X2[:, 1] *= 10
    np.testing.assert_array_equal(PolySVC().fit(X2, y).predict(X2), a)


def test_constant_feature_dropped_with_warning():
    X, y = _noisy()
    X = np.column_stack([X, np.full(len(X), 3.0)])
    with pytest.warns(UserWarning, match="constant"):
        m = PolySVC().fit(X, y)
    assert m.support_vectors_.shape[1] == 5


def test_matches_sklearn():
    X, y = _noisy()
    ours = PolySVC(tol=1e-6).fit(X, y)
    Z = (X - X.mean(0)) / X.std(0)
    ref = SVC(kernel="poly", degree=2, gamma=1 / 5, coef0=1, C=1, class_weight="balanced",
              tol=1e-6).fit(Z, y)
    np.testing.assert_allclose(ours.decision_function(X), ref.decision_function(Z), atol=1e-3)


def test_model_roundtrip_bit_exact(tmp_path):
    X, y = _noisy()
    m = PolySVC().fit(X, y)
    m.save(tmp_path / "m.bin")
    back = PolySVC.load(tmp_path / "m.bin")
    assert back.to_bytes() == m.to_bytes()
    assert (tmp_path / "m.bin").read_bytes() == m.to_bytes()
    assert back.decision_function(X).tobytes() == m.decision_function(X).tobytes()


def test_corrupted_model_rejected(tmp_path):
    X, y = _noisy()
    blob = bytearray(PolySVC().fit(X, y).to_bytes())
    blob[len(blob) // 2] ^= 0xFF
    with pytest.raises(Exception, match="checksum"):
        PolySVC.from_bytes(bytes(blob))


def test_ensemble_vote_examples():
    assert ensemble_vote([1, 1, 0]) == 1
    assert ensemble_vote([0, 0, 0]) == 0
    assert ensemble_vote([1, 0, 0]) == 0
    with pytest.raises(ValueError):
        ensemble_vote([1, 0])


def test_ensemble_vote_needs_two_flips_from_unanimity():
    for v in (0, 1):
        for i in range(3):
            one = [v] * 3
            one[i] ^= 1
            assert ensemble_vote(one) == v
            two = [1 - v] * 3
            two[i] ^= 1
            assert ensemble_vote(two) == 1 - v


def test_voting_ensemble_roundtrip(tmp_path):
    X, y = _noisy(600)
    parts = np.array(["part1", "part2", "part3"])[np.arange(600) % 3]
    ens = VotingEnsemble().fit(X, y, parts)
    votes = (ens.member_decisions(X) > 0).astype(int)
    np.testing.assert_array_equal(ens.predict(X), ensemble_vote(votes))
    ens.save(tmp_path / "e.bin")
    back = load_model(tmp_path / "e.bin")
    assert isinstance(back, VotingEnsemble)
    assert back.to_bytes() == ens.to_bytes()
    np.testing.assert_array_equal(back.predict(X), ens.predict(X))
    single = PolySVC().fit(X, y)
    single.save(tmp_path / "s.bin")
    assert isinstance(load_model(tmp_path / "s.bin"), PolySVC)
