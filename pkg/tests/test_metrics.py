import numpy as np
import pytest
from numpy.testing import assert_allclose

from mlzgen import metrics
from oracles import brute_average_precision, brute_mean_ap, brute_topk


def random_table(rng, max_images=10, max_labels=8):
    n = int(rng.integers(1, max_images + 1))
    width = int(rng.integers(1, max_labels + 1))
    scores = rng.normal(size=(n, width))
    if rng.uniform() < 0.3:
        # quantized scores force tie handling
        scores = np.round(scores * 2.0) / 2.0
    truths = []
    for _ in range(n):
        count = int(rng.integers(0, width + 1))
        truths.append(tuple(rng.choice(width, size=count, replace=False)))
    if all(len(t) == 0 for t in truths):
        truths[0] = (0,)
    return metrics.EvalTable(scores, truths)


def test_average_precision_frozen_example():
    # ranking: img2 (hit), img0 (miss), img3 (hit), img1 (miss)
    scores = [0.8, 0.1, 0.9, 0.4]
    truth = [0, 0, 1, 1]
    ap = metrics.average_precision(scores, truth)
    assert_allclose(ap, (1.0 / 1.0 + 2.0 / 3.0) / 2.0, rtol=0, atol=1e-15)
    assert_allclose(ap, 5.0 / 6.0, rtol=0, atol=1e-15)


def test_average_precision_skips_positive_free_labels():
    assert metrics.average_precision([0.5, 0.2], [0, 0]) is None
    with pytest.raises(metrics.MetricsError, match="align"):
        metrics.average_precision([0.5, 0.2], [1])


def test_average_precision_tie_breaks_toward_lower_index():
    # equal scores everywhere: ranking is image order 0,1,2
    ap_first = metrics.average_precision([0.5, 0.5, 0.5], [1, 0, 0])
    ap_last = metrics.average_precision([0.5, 0.5, 0.5], [0, 0, 1])
    assert ap_first == 1.0
    assert_allclose(ap_last, 1.0 / 3.0, rtol=0, atol=1e-15)


def test_topk_frozen_example():
    # one image, three labels, k=3, one of them true
    table = metrics.EvalTable(np.array([[0.9, 0.5, 0.1]]), [(1,)])
    p, r, f1 = metrics.topk_prf(table, 3)
    assert_allclose([p, r, f1], [1.0 / 3.0, 1.0, 0.5], rtol=0, atol=1e-15)


def test_f1_identity_on_published_gzsl_triple():
    # F1 = 2PR/(P+R) for the percentage pair (23.6, 10.4) lands on 14.4
    p, r = 23.6, 10.4
    f1 = 2 * p * r / (p + r)
    assert abs(f1 - 14.4) < 0.05


def test_mean_ap_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        table = random_table(rng)
        assert_allclose(metrics.mean_ap(table),
                        brute_mean_ap(table.scores, table.truths), rtol=0, atol=1e-12)


def test_topk_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(100):
        table = random_table(rng)
        k = int(rng.integers(1, table.scores.shape[1] + 1))
        assert_allclose(metrics.topk_prf(table, k),
                        brute_topk(table.scores, table.truths, k), rtol=0, atol=1e-12)


def test_average_precision_matches_brute_force_with_ties():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(1, 12))
        scores = rng.integers(0, 3, size=n).astype(np.float64)  # heavy ties
        truth = (rng.uniform(size=n) < 0.5).astype(np.float64)
        ours = metrics.average_precision(scores, truth)
        brute = brute_average_precision(scores, truth)
        if brute is None:
            assert ours is None
        else:
            assert_allclose(ours, brute, rtol=0, atol=1e-12)


def test_eval_table_validations():
    with pytest.raises(metrics.MetricsError, match="one truth set"):
        metrics.EvalTable(np.zeros((2, 3)), [(0,)])
    with pytest.raises(metrics.MetricsError, match="outside"):
        metrics.EvalTable(np.zeros((1, 3)), [(3,)])
    table = metrics.EvalTable(np.zeros((1, 3)), [(2, 0, 2)])
    assert table.truths == [(0, 2)]  # canonicalized
    assert_allclose(table.truth_matrix(), [[1.0, 0.0, 1.0]], atol=0)


def test_mean_ap_requires_a_positive():
    table = metrics.EvalTable(np.zeros((2, 2)), [(), ()])
    with pytest.raises(metrics.MetricsError, match="positive"):
        metrics.mean_ap(table)


def test_topk_validates_k():
    table = metrics.EvalTable(np.zeros((1, 3)), [(0,)])
    with pytest.raises(metrics.MetricsError, match="k="):
        metrics.topk_prf(table, 0)
    with pytest.raises(metrics.MetricsError, match="k="):
        metrics.topk_prf(table, 4)


def test_random_score_baseline_is_deterministic_and_chance_level():
    rng = np.random.default_rng(3)
    n, width = 120, 6
    scores = rng.normal(size=(n, width))
    truths = [tuple(rng.choice(width, size=int(rng.integers(1, 3)), replace=False))
              for _ in range(n)]
    table = metrics.EvalTable(scores, truths)
    a = metrics.random_score_baseline(table, seed=9)
    b = metrics.random_score_baseline(table, seed=9)
    assert a == b
    # chance sits near mean prevalence, far below a perfect ranking
    prevalence = sum(len(t) for t in truths) / (n * width)
    assert 0.5 * prevalence < a < 3.0 * prevalence
    # scoring the truth directly beats the shuffled baseline by a wide margin
    oracle = metrics.EvalTable(table.truth_matrix(), truths)
    assert metrics.mean_ap(oracle) > 2.0 * metrics.random_score_baseline(oracle, seed=9)
