import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from xaiseg import explainer as X
from xaiseg import net as N
from xaiseg.train import TrainConfig, train_classifier

seeds = st.integers(0, 2**31 - 1)


def classifier(n_out=2, seed=0):
    layers = [N.Conv2d(1, 3), N.ReLU(), N.MaxPool2d(), N.Flatten(), N.Linear(48, n_out)]
    net = N.build_network(layers, (1, 8, 8), seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    net.params = [p if p is None else (p[0], rng.normal(0, 0.1, p[1].shape)) for p in net.params]
    return net


def probs(*rows):
    return np.array(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# mask aggregation


def test_single_class_aggregation():
    S = np.random.default_rng(0).random((1, 4, 4))
    agg = X.aggregate_masks(S, {1})
    assert np.array_equal(agg.target, S[0]) and not agg.non_target.any()
    assert np.allclose(agg.target + agg.inverse, 1)


def test_aggregation_takes_the_max():
    S = np.zeros((3, 2, 2))
    S[0, 0, 0], S[1, 0, 0], S[2, 0, 0] = 0.2, 0.7, 0.9
    agg = X.aggregate_masks(S, {1, 2})
    assert agg.target[0, 0] == 0.7 and agg.non_target[0, 0] == 0.9


def test_aggregation_rejects_empty_or_unknown_targets():
    S = np.zeros((2, 2, 2))
    with pytest.raises(ValueError):
        X.aggregate_masks(S, set())
    with pytest.raises(ValueError):
        X.aggregate_masks(S, {3})


# ---------------------------------------------------------------------------
# probability-level terms


def test_classification_term_examples():
    y = np.ones((1, 1))
    assert X.classification_term(probs([0.0, 1.0]), y)[0][0] == pytest.approx(0.0, abs=1e-9)
    assert X.classification_term(probs([0.5, 0.5]), y)[0][0] == pytest.approx(math.log(2), abs=1e-12)


@given(st.floats(0, 1))
def test_classification_term_non_negative(p1):
    assert X.classification_term(probs([1 - p1, p1]), np.ones((1, 1)))[0][0] >= 0


def test_negative_classification_examples():
    assert X.negative_classification_term(probs([1.0, 0.0]))[0][0] == pytest.approx(0.0, abs=1e-12)
    assert X.negative_classification_term(probs([0.5, 0.5]))[0][0] == pytest.approx(2 * math.log(2), abs=1e-6)


def test_negative_classification_decreases_in_p0():
    p0 = np.linspace(0.01, 0.99, 50)
    vals = X.negative_classification_term(np.stack([p0, 1 - p0], axis=1))[0]
    assert np.all(np.diff(vals) < 0)


def test_entropy_term_examples():
    assert X.entropy_term(probs([0.0, 1.0]))[0][0] == pytest.approx(0.0, abs=1e-12)
    assert X.entropy_term(probs([0.5, 0.5]))[0][0] == pytest.approx(0.5 * math.log(0.5), abs=1e-12)
    # the floor keeps log(0) finite
    assert np.isfinite(X.entropy_term(probs([1.0, 0.0]))[0][0])


@given(st.floats(1e-9, 1))
def test_entropy_term_non_positive(p1):
    assert X.entropy_term(probs([1 - p1, p1]))[0][0] <= 0


@pytest.mark.parametrize("term", [X.negative_classification_term, X.entropy_term,
                                  lambda p: X.classification_term(p, np.array([[1.0, 0.0]]))])
def test_probability_term_gradients(term):
    p = probs([0.2, 0.3, 0.5])
    _, dp = term(p)
    fd = oracles.central_diff(lambda q: term(q[None])[0][0], p[0], h=1e-6)
    assert np.allclose(dp[0], fd, rtol=1e-5, atol=1e-7)


# ---------------------------------------------------------------------------
# mask-level terms


def test_area_examples():
    n = np.zeros((10, 10))
    m = np.zeros((10, 10))
    m.flat[:10] = 1
    assert X.loss_area(m, n) == 0.0
    m.flat[:25] = 1
    assert X.loss_area(m, n) == pytest.approx(0.10)
    assert X.loss_area(np.ones((10, 10)), n) == pytest.approx(0.85)
    assert X.loss_area(np.zeros((10, 10)), n) == pytest.approx(0.001)
    assert X.loss_area(m, np.full((10, 10), 0.3)) == pytest.approx(0.40)


def test_tv_examples():
    z = np.zeros((6, 5))
    assert X.loss_tv(np.full((6, 5), 0.4), z) == 0
    step = np.zeros((6, 5))
    step[:, 3:] = 1
    assert X.loss_tv(step, z) == pytest.approx(6 / 30)
    assert X.loss_tv(step, step) == pytest.approx(12 / 30)


@given(st.integers(0, 2**31 - 1))
def test_tv_non_negative(seed):
    m = np.random.default_rng(seed).random((5, 7))
    assert X.loss_tv(m, np.zeros_like(m)) >= 0


def test_loss_weight_validation():
    with pytest.raises(ValueError):
        X.ExplainerLossWeights(lambda_a=-1)
    with pytest.raises(ValueError):
        X.ExplainerLossWeights(a_min=0.2, a_max=0.1)


# ---------------------------------------------------------------------------
# the combined loss against a classifier


def test_k1_classification_equals_cross_entropy():
    F = classifier()
    rng = np.random.default_rng(1)
    x, m = rng.random((1, 8, 8)), rng.random((8, 8))
    p = N.softmax(N.forward(F, x * m))
    assert X.loss_classification(F, x, {1}, m) == pytest.approx(-math.log(p[1]), abs=1e-7)


def test_zero_weights_leave_classification_only():
    F = classifier()
    rng = np.random.default_rng(2)
    x, S = rng.random((1, 8, 8)), rng.random((1, 8, 8))
    w = X.ExplainerLossWeights(0, 0, 0, 0)
    terms = X.explainer_total_loss(S, F, x, {1}, w)
    assert terms.total == pytest.approx(terms.classification, abs=1e-12)


@settings(max_examples=20)
@given(seeds)
def test_total_is_the_weighted_sum(seed):
    F = classifier(seed=seed % 100)
    rng = np.random.default_rng(seed)
    x, S = rng.random((1, 8, 8)), rng.random((1, 8, 8))
    w = X.ExplainerLossWeights(*rng.random(4))
    t = X.explainer_total_loss(S, F, x, {1}, w)
    want = t.classification + w.lambda_nc * t.negative + w.lambda_a * t.area + w.lambda_tv * t.tv
    assert t.total == pytest.approx(want, abs=1e-7)
    assert all(np.isfinite([t.total, t.classification, t.negative, t.area, t.tv]))
    ent = X.ExplainerLossWeights(w.lambda_nc, w.lambda_a, w.lambda_tv, w.lambda_e, use_entropy=True)
    e = X.explainer_total_loss(S, F, x, {1}, ent)
    assert e.negative == pytest.approx(X.loss_negative_entropy(F, x, 1 - S[0]), abs=1e-9)
    assert t.negative == pytest.approx(X.loss_negative_classification(F, x, 1 - S[0]), abs=1e-9)


WEIGHT_SETS = {
    "classification": X.ExplainerLossWeights(0, 0, 0, 0),
    "negative": X.ExplainerLossWeights(1.0, 0, 0, 0),
    "entropy": X.ExplainerLossWeights(0, 0, 0, 1.0, use_entropy=True),
    "area": X.ExplainerLossWeights(0, 1.0, 0, 0, a_min=0.6, a_max=0.9),
    "tv": X.ExplainerLossWeights(0, 0, 1.0, 0),
    "all": X.ExplainerLossWeights(0.3, 0.5, 0.7, 0),
}


@pytest.mark.parametrize("name", WEIGHT_SETS)
@pytest.mark.parametrize("k", [1, 2])
def test_mask_gradients_match_finite_differences(name, k):
    F = classifier(n_out=k + 1, seed=k)
    rng = np.random.default_rng(k)
    x = rng.random((2, 1, 8, 8))
    S = rng.uniform(0.05, 0.95, (2, k, 8, 8))
    targets = [{1}, {k}]
    w = WEIGHT_SETS[name]
    _, gS, _ = X.explainer_losses(F, x, S, targets, w)
    fd = oracles.central_diff(lambda s: X.explainer_losses(F, x, s, targets, w, need_grad=False)[0].total, S, h=1e-6)
    assert np.linalg.norm(gS - fd) <= 1e-4 * np.linalg.norm(fd)


def test_class_permutation_symmetry():
    F = classifier(n_out=4, seed=3)
    rng = np.random.default_rng(3)
    x, S = rng.random((1, 8, 8)), rng.random((3, 8, 8))
    a = X.explainer_total_loss(S, F, x, {1, 2})
    b = X.explainer_total_loss(S[[1, 0, 2]], F, x, {1, 2})
    # swapping two target masks leaves both merged masks, hence every term, unchanged
    assert a == b
    agg_a, agg_b = X.aggregate_masks(S, {1, 2}), X.aggregate_masks(S[[1, 0, 2]], {1, 2})
    assert np.array_equal(agg_a.target, agg_b.target) and np.array_equal(agg_a.non_target, agg_b.non_target)


def test_classifier_output_mismatch():
    with pytest.raises(ValueError):
        X.explainer_losses(classifier(n_out=2), np.zeros((1, 1, 8, 8)), np.zeros((1, 2, 8, 8)), [{1}])


# ---------------------------------------------------------------------------
# network and training


def test_explainer_network_shape_and_range():
    E = X.explainer_network((1, 16, 16), widths=(4, 8), seed=0)
    x = np.random.default_rng(0).random((3, 1, 16, 16)).astype(np.float32)
    S = X.explain_masks(E, x)
    assert S.shape == (3, 1, 16, 16) and S.min() >= 0 and S.max() <= 1
    a = X.explainer_attribution(E, x[0])
    assert a.shape == (16, 16) and np.array_equal(a.values, X.explainer_attribution(E, x[0]).values)


def test_explainer_trunk_initialisation():
    F = N.minivgg(seed=3)
    E = X.explainer_network(init_from=F)
    for i in range(9):
        if F.params[i] is not None:
            assert np.array_equal(E.params[i][0], F.params[i][0])


def _blob_data(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.6, 1.0, (n, 1, 16, 16))
    y = np.arange(n) % 2
    for i in np.nonzero(y)[0]:
        r, c = rng.integers(2, 10, 2)
        x[i, 0, r : r + 4, c : c + 4] = rng.uniform(0.0, 0.2)
    return x.astype(np.float32), y


@pytest.fixture(scope="module")
def toy_classifier():
    x, y = _blob_data(200, 0)
    layers = [N.Conv2d(1, 4), N.ReLU(), N.MaxPool2d(), N.Conv2d(4, 8), N.ReLU(), N.MaxPool2d(), N.Flatten(),
              N.Linear(8 * 16, 16), N.ReLU(), N.Linear(16, 2)]
    F, _ = train_classifier(N.build_network(layers, (1, 16, 16), seed=0), (x, y), (x, y),
                            TrainConfig(learning_rate=3e-3, max_epochs=30, flip_probability=0.0))
    assert np.mean(N.forward(F, x).argmax(1) == y) >= 0.95
    return F.freeze()


def test_train_explainer_leaves_classifier_untouched(toy_classifier, tmp_path):
    F = toy_classifier
    before = N.weights_checksum(F)
    x, y = _blob_data(64, 1)
    pos = x[y == 1]
    E0 = X.explainer_network((1, 16, 16), widths=(4, 8), seed=1, init_from=F)
    cfg = TrainConfig(learning_rate=3e-3, max_epochs=15, batch_size=8, flip_probability=0.0)
    E, hist = X.train_explainer(E0, F, pos, cfg=cfg, log_path=tmp_path / "log.csv")
    assert N.weights_checksum(F) == before
    assert E.frozen and len(hist) == 15
    assert hist[-1]["total"] < hist[0]["total"]
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert header == ",".join(X.LOG_FIELDS)
    # the masked input should now read as damaged for most positives
    S = X.explain_masks(E, pos)
    pred = N.forward(F, pos * S).argmax(1)
    assert np.mean(pred == 1) >= 0.7


def test_train_explainer_is_deterministic(toy_classifier):
    x, y = _blob_data(16, 2)
    pos = x[y == 1]
    cfg = TrainConfig(learning_rate=1e-3, max_epochs=2, batch_size=4, flip_probability=0.0, seed=5)
    runs = [X.train_explainer(X.explainer_network((1, 16, 16), widths=(4, 8), seed=1), toy_classifier, pos, cfg=cfg)[0]
            for _ in range(2)]
    assert N.weights_checksum(runs[0]) == N.weights_checksum(runs[1])


def test_train_explainer_needs_positives(toy_classifier):
    with pytest.raises(ValueError):
        X.train_explainer(X.explainer_network((1, 16, 16), widths=(4, 8)), toy_classifier,
                          np.zeros((0, 1, 16, 16), dtype=np.float32))
