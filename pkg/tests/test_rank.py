import numpy as np
import pytest

from xea import rank
from xea.data import FeatureMask
from xea.explain import Attribution


def test_identity_and_reversal():
    v = np.arange(10, dtype=float)
    assert rank.kendall_tau(v, v).tau == 1.0
    assert rank.kendall_tau(v, -v).tau == -1.0
    assert rank.weighted_kendall_tau(v, v) == 1.0
    assert rank.weighted_kendall_tau(v, -v) == -1.0


def test_fast_tau_matches_bruteforce_with_ties():
    g = np.random.default_rng(0)
    for _ in range(300):
        n = int(g.integers(2, 30))
        # coarse quantization forces plenty of ties
        r1 = np.round(g.normal(size=n) * 2) / 2
        r2 = np.round(g.normal(size=n) * 2) / 2
        fast = rank.kendall_tau(r1, r2)
        slow = rank.kendall_tau_bruteforce(r1, r2)
        assert (fast.P, fast.Q, fast.T, fast.U, fast.joint_ties) == \
               (slow.P, slow.Q, slow.T, slow.U, slow.joint_ties)
        assert fast.tau == pytest.approx(slow.tau, abs=1e-12)


def test_pair_counts_partition():
    g = np.random.default_rng(1)
    r1 = g.integers(0, 5, size=40).astype(float)
    r2 = g.integers(0, 5, size=40).astype(float)
    ra = rank.kendall_tau(r1, r2)
    assert ra.n_pairs == 40 * 39 // 2


def test_weighted_tau_emphasizes_top_ranks():
    base = np.arange(20, dtype=float)[::-1]  # 19 is rank 0
    top_swap = base.copy()
    top_swap[[0, 1]] = top_swap[[1, 0]]      # swap the two most important
    bottom_swap = base.copy()
    bottom_swap[[18, 19]] = bottom_swap[[19, 18]]
    t_top = rank.weighted_kendall_tau(base, top_swap)
    t_bot = rank.weighted_kendall_tau(base, bottom_swap)
    assert rank.kendall_tau(base, top_swap).tau == \
           rank.kendall_tau(base, bottom_swap).tau
    assert t_top < t_bot  # the same single swap hurts more at the top


def test_weighted_tau_matches_direct_enumeration():
    g = np.random.default_rng(2)
    for _ in range(20):
        n = int(g.integers(3, 15))
        r1 = g.normal(size=n)
        r2 = np.round(g.normal(size=n))
        # direct definition: additive 1/(rank+1) pair weights from r1's ranks
        order = np.lexsort((np.arange(n), -r1))
        ranks = np.empty(n, dtype=int)
        ranks[order] = np.arange(n)
        w = 1.0 / (ranks + 1.0)
        num = den = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                pw = w[i] + w[j]
                num += pw * np.sign(r1[i] - r1[j]) * np.sign(r2[i] - r2[j])
                den += pw
        assert rank.weighted_kendall_tau(r1, r2) == pytest.approx(num / den,
                                                                  abs=1e-12)


def test_validation_errors():
    with pytest.raises(ValueError):
        rank.kendall_tau([1.0], [2.0])
    with pytest.raises(ValueError):
        rank.kendall_tau([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        rank.kendall_tau([1.0, np.nan], [1.0, 2.0])


def _attribs(values_list, method="m"):
    return [Attribution(np.asarray(v, dtype=float), method) for v in values_list]


def test_compare_models_per_sample():
    a = _attribs([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]])
    b = _attribs([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    s = rank.compare_models(a, b)
    assert s.n_samples == 2
    assert s.per_sample[0].tau == 1.0
    assert s.per_sample[1].tau == -1.0
    assert s.mean_tau == pytest.approx(0.0)


def test_compare_models_uses_magnitudes():
    a = _attribs([[-3.0, 2.0, -1.0]])
    b = _attribs([[3.0, 2.0, 1.0]])
    assert rank.compare_models(a, b).mean_tau == 1.0


def test_compare_models_mask_restriction():
    a = _attribs([[1.0, 9.0, 2.0, 3.0]])
    b = _attribs([[1.0, 0.0, 2.0, 3.0]])  # disagree only on feature 1
    mask = FeatureMask(np.array([True, False, True, True]))
    assert rank.compare_models(a, b, mask).mean_tau == 1.0
    assert rank.compare_models(a, b).mean_tau < 1.0


def test_compare_models_global_ranking():
    a = _attribs([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    b = _attribs([[3.0, 2.0, 1.0], [3.0, 2.0, 1.0]])
    s = rank.compare_models(a, b, global_ranking=True)
    assert s.n_samples == 1
    assert s.mean_tau == -1.0


def test_compare_models_errors():
    a = _attribs([[1.0, 2.0]])
    with pytest.raises(ValueError):
        rank.compare_models(a, _attribs([[1.0, 2.0], [1.0, 2.0]]))
    with pytest.raises(ValueError):
        rank.compare_models([], [])
    tiny = FeatureMask(np.array([True, False]))
    with pytest.raises(ValueError):
        rank.compare_models(a, a, tiny)


def test_topk_overlap():
    a = np.array([3, 1, 2, 0])
    b = np.array([1, 3, 0, 2])
    assert rank.topk_overlap(a, b, 2) == 1.0
    assert rank.topk_overlap(a, b, 3) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        rank.topk_overlap(a, b, 0)
