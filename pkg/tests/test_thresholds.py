import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odn.classifier import ClassifierState
from odn.dataset import Dataset
from odn.errors import ConfigError, LoadError, ShapeError
from odn.thresholds import (
    Rule,
    TripletThresholds,
    calibrate,
    detect,
    load_thresholds,
    save_thresholds,
    second_max,
)

from .oracles import brute_cascade, brute_thresholds

IDENT2 = ClassifierState(np.eye(2), np.zeros(2), 2)


def example_thresholds():
    return TripletThresholds(
        eta=np.array([2.5, 2.5]),
        mu=np.array([1.25, 1.25]),
        delta=np.array([0.75, 0.75]),
        epsilon=0.5,
        rho=0.5,
        counts=np.array([2, 2]),
    )


def test_calibrate_hand_example():
    train = Dataset(2, [0, 1], [1, 1], np.array([[2.0, 0.5], [3.0, 1.5]]))
    t = calibrate(IDENT2, train, epsilon=0.5, rho=0.5)
    assert (t.eta[0], t.mu[0], t.delta[0], t.counts[0]) == (2.5, 1.25, 0.75, 2)
    assert not t.calibrated[1] and np.isinf(t.eta[1])


def test_calibrate_epsilon_one():
    rng = np.random.default_rng(0)
    state = ClassifierState(rng.normal(size=(3, 3)), rng.normal(size=3), 3)
    x = rng.normal(size=(60, 3))
    train = Dataset(3, np.arange(60), np.argmax(x @ state.weights + state.biases, axis=1) + 1, x)
    t = calibrate(state, train, epsilon=1.0, rho=0.3)
    assert np.array_equal(t.mu, t.eta)


def test_calibrate_single_sample():
    train = Dataset(2, [0], [1], np.array([[4.0, 1.0]]))
    t = calibrate(IDENT2, train, epsilon=0.5, rho=1.0)
    assert t.eta[0] == 4.0 and t.delta[0] == 3.0


def test_calibrate_ignores_misclassified():
    train = Dataset(2, [0, 1], [1, 1], np.array([[2.0, 0.5], [0.0, 5.0]]))
    t = calibrate(IDENT2, train)
    assert t.counts.tolist() == [1, 0] and t.eta[0] == 2.0


def test_calibrate_softmax_mode():
    train = Dataset(2, [0], [1], np.array([[2.0, 0.0]]))
    t = calibrate(IDENT2, train, confidence="softmax")
    p = np.exp(2.0) / (np.exp(2.0) + 1)
    assert t.eta[0] == pytest.approx(p, abs=1e-15)
    assert t.delta[0] == pytest.approx(0.5 * (p - (1 - p)), abs=1e-15)


def test_calibrate_errors():
    train = Dataset(2, [0], [3], np.zeros((1, 2)))
    with pytest.raises(ShapeError):
        calibrate(IDENT2, train)
    with pytest.raises(ConfigError):
        calibrate(IDENT2, Dataset.empty(2), epsilon=0.0)
    with pytest.raises(ConfigError):
        calibrate(IDENT2, Dataset.empty(2), rho=0.0)


@pytest.mark.parametrize("seed", range(20))
def test_calibrate_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    k, d = int(rng.integers(2, 7)), int(rng.integers(1, 9))
    state = ClassifierState(rng.normal(size=(d, k)), rng.normal(size=k), k)
    n = int(rng.integers(1, 50)) * k
    x, y = rng.normal(size=(n, d)), rng.integers(1, k + 1, size=n)
    eps, rho = float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.05, 2.0))
    t = calibrate(state, Dataset(d, np.arange(n), y, x), eps, rho)
    cols = state.weights.T.tolist()
    ref = brute_thresholds(cols, state.biases.tolist(), list(zip(y.tolist(), x.tolist())), eps, rho)
    for i, r in enumerate(ref):
        if r is None:
            assert t.counts[i] == 0 and np.isinf(t.eta[i])
            continue
        eta, mu, delta, count = r
        assert t.counts[i] == count
        assert abs(t.eta[i] - eta) <= 1e-12 and abs(t.mu[i] - mu) <= 1e-12 and abs(t.delta[i] - delta) <= 1e-12
        assert t.mu[i] == eps * t.eta[i]


@pytest.mark.parametrize("v, expected", [((3, 1, 2), 2), ((5, 5, 1), 5), ((-1, -3), -3)])
def test_second_max(v, expected):
    assert second_max(v) == expected


def test_second_max_needs_two():
    with pytest.raises(ShapeError):
        second_max([1.0])


@pytest.mark.parametrize(
    "v, label, rule",
    [
        ((3.0, 0.1), 1, Rule.ACCEPT_TOP),
        ((1.0, 1.0), None, Rule.REJECT_ALL_BELOW_MU),
        ((2.0, 0.5), 1, Rule.DISTANCE_ACCEPT),
        ((2.0, 1.6), None, Rule.DISTANCE_REJECT),
        ((0.5, 2.6), 2, Rule.ACCEPT_TOP),
        ((1.25, 0.0), 1, Rule.DISTANCE_ACCEPT),  # mu boundary is inclusive
        ((2.5, 1.75), None, Rule.DISTANCE_REJECT),  # eta itself does not accept; gap == delta rejects
    ],
)
def test_detect_truth_table(v, label, rule):
    out = detect(v, example_thresholds())
    assert (out.label, out.rule) == (label, rule)


def test_detect_rule4_when_top_below_own_mu():
    # top category under its own mu while another entry clears its (lower) mu
    t = TripletThresholds(np.array([10.0, 2.0]), np.array([5.0, 1.0]), np.array([0.1, 0.1]), 0.5, 0.5, np.array([1, 1]))
    out = detect([4.0, 1.5], t)
    assert out.rule is Rule.DISTANCE_REJECT and out.label is None


def test_detect_uncalibrated_never_accepts():
    inf = float("inf")
    t = TripletThresholds(np.array([inf, 1.0]), np.array([inf, 0.5]), np.array([inf, 0.1]), 0.5, 0.5, np.array([0, 3]))
    assert not detect([100.0, 0.0], t).known
    assert detect([0.0, 2.0], t).label == 2


def test_detect_shape_error():
    with pytest.raises(ShapeError):
        detect([1.0, 2.0, 3.0], example_thresholds())


def random_thresholds(rng, k):
    eta = rng.uniform(0.5, 3.0, size=k)
    eps = rng.uniform(0.1, 1.0)
    return TripletThresholds(eta, eps * eta, rng.uniform(0.0, 1.5, size=k), eps, 0.5, np.ones(k, dtype=np.int64))


def test_detect_matches_straight_line_cascade():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        k = int(rng.integers(2, 6))
        t = random_thresholds(rng, k)
        v = rng.uniform(-1.0, 4.0, size=k)
        out = detect(v, t)
        label, rule = brute_cascade(v.tolist(), t.eta.tolist(), t.mu.tolist(), t.delta.tolist())
        assert (out.label or 0, out.rule.value) == (label, rule)
        if out.known:
            assert out.label == int(np.argmax(v)) + 1


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_rule2_rejections_shrink_as_epsilon_grows_smaller(seed, e1, e2):
    lo, hi = sorted((e1, e2))
    rng = np.random.default_rng(seed)
    eta = rng.uniform(0.5, 3.0, size=4)
    delta = rng.uniform(0.0, 1.0, size=4)
    vs = rng.uniform(-1.0, 4.0, size=(30, 4))

    def rejected(eps):
        t = TripletThresholds(eta, eps * eta, delta, eps, 0.5, np.ones(4, dtype=np.int64))
        return {k for k, v in enumerate(vs) if detect(v, t).rule is Rule.REJECT_ALL_BELOW_MU}

    # mu = eps * eta with eta > 0: a smaller epsilon can only shrink the rule-2 set
    assert rejected(lo) <= rejected(hi)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=6), st.integers(0, 1000))
def test_cascade_total_and_argmax(v, seed):
    t = random_thresholds(np.random.default_rng(seed), len(v))
    out = detect(v, t)
    assert out.rule in set(Rule)
    if out.known:
        assert out.label == int(np.argmax(v)) + 1


def test_thresholds_json_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    state = ClassifierState(rng.normal(size=(3, 3)), rng.normal(size=3), 3)
    x = rng.normal(size=(40, 3))
    y = np.argmax(x @ state.weights + state.biases, axis=1) + 1
    y[y == 3] = 1  # category 3 ends up uncalibrated
    t = calibrate(state, Dataset(3, np.arange(40), y, x), 0.4, 0.7)
    save_thresholds(t, tmp_path / "t.json", config={"a": 1})
    back = load_thresholds(tmp_path / "t.json")
    for name in ("eta", "mu", "delta", "counts"):
        assert getattr(back, name).tobytes() == getattr(t, name).tobytes()
    assert (back.epsilon, back.rho, back.confidence) == (0.4, 0.7, "logit")
    (tmp_path / "bad.json").write_text('{"categories": [{"id": 2}]}')
    with pytest.raises(LoadError):
        load_thresholds(tmp_path / "bad.json")
