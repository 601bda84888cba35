import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import direct_prod, run_fusion_oracle
from kdasc.exceptions import ValidationError
from kdasc.fusion import (
    DCASE_BASELINE,
    REFERENCE_FUSED_DISTILLED,
    MetricsTable,
    ProdFusionClassifier,
    compare_systems,
    decide_label,
    evaluate,
    prod_fuse,
    prod_fuse_batch,
    renormalize,
)


def posterior(c=10):
    return arrays(np.float64, c, elements=st.floats(0.01, 1.0)).map(lambda v: v / v.sum())


def test_single_model_identity():
    r = prod_fuse([np.array([0.3, 0.7])])
    np.testing.assert_allclose(r.fused, [0.3, 0.7], rtol=1e-15)
    assert r.predicted_label == 1 and r.S == 1


def test_uniform_three_models():
    r = prod_fuse([np.full(10, 0.1)] * 3)
    np.testing.assert_allclose(r.fused, np.full(10, 0.1**3 / 3), rtol=1e-12)
    assert abs(r.fused[0] - 3.3333e-4) < 1e-8
    assert r.predicted_label == 0


def test_two_model_arithmetic():
    r = prod_fuse([np.array([0.5, 0.5]), np.array([0.8, 0.2])])
    np.testing.assert_allclose(r.fused, [0.2, 0.05], rtol=1e-12)
    assert r.predicted_label == 0


def test_fuse_errors():
    with pytest.raises(ValidationError):
        prod_fuse([])
    with pytest.raises(ValidationError):
        prod_fuse([np.array([0.5, -0.1, 0.6])])
    with pytest.raises(ValidationError):
        prod_fuse([np.array([0.5, 0.5]), np.array([0.2, 0.3, 0.5])])


def test_zero_component_gives_zero():
    r = prod_fuse([np.array([0.0, 1.0]), np.array([0.5, 0.5])])
    assert r.fused[0] == 0.0 and r.predicted_label == 1


def test_oracle_on_random_instances():
    worst, mismatches = run_fusion_oracle(n_instances=1000, seed=11)
    assert worst < 1e-9 and mismatches == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(posterior(), min_size=1, max_size=5), st.randoms(use_true_random=False))
def test_order_invariance(ps, rnd):
    shuffled = list(ps)
    rnd.shuffle(shuffled)
    a, b = prod_fuse(ps), prod_fuse(shuffled)
    np.testing.assert_allclose(a.fused, b.fused, rtol=1e-12)
    assert a.predicted_label == b.predicted_label


@settings(max_examples=100, deadline=None)
@given(posterior(), st.integers(1, 5))
def test_copies_keep_label(p, S):
    assert prod_fuse([p] * S).predicted_label == decide_label(p)


@settings(max_examples=100, deadline=None)
@given(st.lists(posterior(), min_size=1, max_size=5))
def test_scale_factor_does_not_change_label(ps):
    raw = np.prod(ps, axis=0)
    label = prod_fuse(ps).predicted_label
    # components within an ulp or so can be reordered by the log/exp round trip
    near_max = np.flatnonzero(raw >= raw.max() * (1 - 1e-12))
    assert label in near_max
    if len(near_max) == 1:
        assert label == int(np.argmax(raw))
    np.testing.assert_allclose(prod_fuse(ps).fused, direct_prod(ps), rtol=1e-9)


def test_log_space_survives_underflow():
    # the direct product of 5 models at 1e-70 underflows to zero; logs keep the order
    tiny = np.array([1e-70, 2e-70])
    fused = prod_fuse_batch([tiny.reshape(1, -1)] * 5)
    assert decide_label(np.log(tiny) * 5) == 1
    assert np.all(np.isfinite(fused))


def test_batch_matches_single():
    rng = np.random.default_rng(0)
    ps = [rng.dirichlet(np.ones(10), size=7) for _ in range(3)]
    batch = prod_fuse_batch(ps)
    for i in range(7):
        np.testing.assert_allclose(batch[i], prod_fuse([p[i] for p in ps]).fused, rtol=1e-14)


def test_decide_label_examples():
    assert decide_label([0, 0, 1, 0]) == 2
    assert decide_label(np.full(5, 0.2)) == 0
    with pytest.raises(ValidationError):
        decide_label([0.1, np.nan])
    with pytest.raises(ValidationError):
        decide_label([])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(0, 1e3)), st.integers(-30, 30), st.floats(0.5, 2.0))
def test_argmax_scale_invariance(v, e, m):
    # powers of two scale exactly; other factors may merge near-ties by rounding
    assert decide_label(v * 2.0**e) == decide_label(v)
    if len(set(v.tolist())) == len(v):
        scaled = v * m
        assert decide_label(scaled) == decide_label(v) or np.sum(scaled == scaled.max()) > 1


def test_renormalize():
    np.testing.assert_allclose(renormalize([0.2, 0.05]), [0.8, 0.2])
    np.testing.assert_allclose(renormalize(np.zeros((1, 4))), np.full((1, 4), 0.25))


def test_fusion_classifier():
    class Fixed:
        def __init__(self, p):
            self.p = p

        def predict_proba(self, X):
            return np.tile(self.p, (len(X), 1))

    clf = ProdFusionClassifier([Fixed(np.array([0.5, 0.5])), Fixed(np.array([0.8, 0.2]))]).fit()
    X = [np.zeros((3, 1))] * 2
    np.testing.assert_allclose(clf.fused_scores(X), [[0.2, 0.05]] * 3)
    np.testing.assert_allclose(clf.predict_proba(X), [[0.8, 0.2]] * 3)
    assert list(clf.predict(X)) == [0, 0, 0]
    with pytest.raises(ValidationError):
        clf.fused_scores(X[:1])
    with pytest.raises(ValidationError):
        ProdFusionClassifier().fit()


# -- metrics ---------------------------------------------------------------------------

def test_perfect_classifier():
    y = np.repeat(np.arange(10), 3)
    t = evaluate(np.eye(10)[y], y)
    assert np.all(t.accuracy == 100.0) and t.average_accuracy == 100.0
    np.testing.assert_allclose(t.logloss, -math.log(1 - 1e-12))


def test_uniform_classifier():
    y = np.repeat(np.arange(10), 4)
    t = evaluate(np.full((40, 10), 0.1), y)
    np.testing.assert_allclose(t.logloss, math.log(10), rtol=1e-12)
    assert t.accuracy[0] == 100.0 and np.all(t.accuracy[1:] == 0.0)
    assert t.average_accuracy == 10.0


def test_macro_average_and_fused_renormalization():
    y = np.array([0, 0, 0, 1])
    scores = np.array([[0.2, 0.05], [0.01, 0.04], [0.3, 0.1], [0.1, 0.3]])
    t = evaluate(scores, y, fused=True)
    np.testing.assert_allclose(t.accuracy, [200 / 3, 100.0])
    assert t.average_accuracy == pytest.approx((200 / 3 + 100) / 2)
    np.testing.assert_allclose(t.logloss[1], -math.log(0.75))
    assert any("renormalised" in n for n in t.notes)


def test_absent_class_is_excluded_with_warning():
    y = np.array([0, 1, 1])
    with pytest.warns(UserWarning, match="absent"):
        t = evaluate(np.eye(10)[[0, 1, 1]], y)
    assert t.present.sum() == 2 and np.isnan(t.accuracy[5])
    assert t.average_accuracy == 100.0


def test_certain_predictor_has_lowest_logloss():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 10, 50)
    other = rng.dirichlet(np.ones(10), size=50)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert evaluate(np.eye(10)[y], y).average_logloss <= evaluate(other, y).average_logloss


def test_compare_identical_reports_have_zero_deltas():
    y = np.repeat(np.arange(10), 2)
    p = np.random.default_rng(1).dirichlet(np.ones(10), size=20)
    a, b = evaluate(p, y, "a"), evaluate(p, y, "b")
    comp = compare_systems([a, b])
    _, _, da, dl = comp.deltas[0]
    assert not da.any() and not dl.any()
    lines = comp.to_tsv().splitlines()
    assert lines[0].split("\t")[-2:] == ["d(b-a) acc", "d(b-a) logloss"]
    assert lines[11].startswith("Average") and lines[12].startswith("Memory (KB)") and lines[13].startswith("MACs (M)")


def test_compare_with_external_baseline():
    y = np.repeat(np.arange(10), 2)
    mine = evaluate(np.eye(10)[y], y, "mine", memory_kb=28.5, macs_m=8.92)
    comp = compare_systems([DCASE_BASELINE, mine])
    average = comp.to_tsv().splitlines()[11].split("\t")
    assert average[1:5] == ["42.9", "1.575", "100.0", "0.000"]
    assert DCASE_BASELINE.average_logloss == pytest.approx(1.575, abs=5e-4)
    assert REFERENCE_FUSED_DISTILLED.average_accuracy == pytest.approx(57.4, abs=0.05)
    assert REFERENCE_FUSED_DISTILLED.average_logloss == pytest.approx(1.333, abs=5e-4)
    assert "d(mine-DCASE baseline)" not in comp.to_text(deltas=False)


def test_compare_rejects_mismatched_classes():
    a = MetricsTable.from_values("a", [1.0] * 10, [1.0] * 10)
    b = MetricsTable("b", np.ones(3), np.ones(3), class_names=("x", "y", "z"))
    with pytest.raises(ValidationError):
        compare_systems([a, b])
    with pytest.raises(ValidationError):
        compare_systems([a], pairs=[("a", "nope")])
