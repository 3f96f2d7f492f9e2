"""Rank-agreement statistics between two per-feature score vectors.

tau is the tie-corrected Kendall coefficient (P - Q) / sqrt((P+Q+T)(P+Q+U)),
where pairs tied in both vectors count toward neither T nor U.  tau_w is an
additive-hyperbolic weighted variant: a pair (i, j) carries weight
1/(rank_i + 1) + 1/(rank_j + 1) with zero-based ranks taken from the first
(reference) vector, normalized by the total pair weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RankAgreement:
    tau: float
    tau_w: float | None
    P: int  # concordant pairs
    Q: int  # discordant pairs
    T: int  # pairs tied in r1 only
    U: int  # pairs tied in r2 only
    joint_ties: int

    @property
    def n_pairs(self) -> int:
        return self.P + self.Q + self.T + self.U + self.joint_ties


@dataclass
class AgreementSummary:
    per_sample: list[RankAgreement]
    mean_tau: float
    std_tau: float
    mean_tau_w: float
    std_tau_w: float

    @property
    def n_samples(self) -> int:
        return len(self.per_sample)


def _check_pair(r1, r2):
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    if r1.shape != r2.shape or r1.ndim != 1:
        raise ValueError(f"score vectors must share one shape, got {r1.shape} vs {r2.shape}")
    if r1.size < 2:
        raise ValueError("need at least 2 elements")
    if not (np.all(np.isfinite(r1)) and np.all(np.isfinite(r2))):
        raise ValueError("non-finite scores")
    return r1, r2


def _tie_pairs(values: np.ndarray) -> int:
    _, counts = np.unique(values, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def _joint_tie_pairs(r1: np.ndarray, r2: np.ndarray) -> int:
    pairs = np.rec.fromarrays([r1, r2])
    _, counts = np.unique(pairs, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def _count_inversions(seq: list[float]) -> int:
    """Strict inversions (i < j with seq[i] > seq[j]) by merge sort."""
    n = len(seq)
    if n < 2:
        return 0
    mid = n // 2
    left, right = seq[:mid], seq[mid:]
    inv = _count_inversions(left) + _count_inversions(right)
    i = j = k = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            seq[k] = left[i]
            i += 1
        else:
            inv += len(left) - i
            seq[k] = right[j]
            j += 1
        k += 1
    seq[k:] = left[i:] if i < len(left) else right[j:]
    return inv


def _pair_counts(r1: np.ndarray, r2: np.ndarray) -> tuple[int, int, int, int, int]:
    """(P, Q, T, U, joint) via sorting; O(F log F) except the tie counting."""
    n = r1.size
    n0 = n * (n - 1) // 2
    t1 = _tie_pairs(r1)
    t2 = _tie_pairs(r2)
    joint = _joint_tie_pairs(r1, r2)
    order = np.lexsort((r2, r1))
    # after sorting by (r1, r2), strict inversions in r2 are exactly the
    # discordant pairs: r1-tied runs are r2-nondecreasing and contribute none
    q = _count_inversions(list(r2[order]))
    p = n0 - t1 - t2 + joint - q
    return p, q, t1 - joint, t2 - joint, joint


def _pair_counts_bruteforce(r1: np.ndarray, r2: np.ndarray) -> tuple[int, int, int, int, int]:
    """O(F^2) enumeration of every pair; the oracle for _pair_counts."""
    n = r1.size
    p = q = t = u = joint = 0
    for i in range(n):
        for j in range(i + 1, n):
            a = np.sign(r1[i] - r1[j])
            b = np.sign(r2[i] - r2[j])
            if a == 0 and b == 0:
                joint += 1
            elif a == 0:
                t += 1
            elif b == 0:
                u += 1
            elif a == b:
                p += 1
            else:
                q += 1
    return p, q, t, u, joint


def _tau_from_counts(counts: tuple[int, int, int, int, int]) -> float:
    p, q, t, u, _ = counts
    denom = np.sqrt(float(p + q + t) * float(p + q + u))
    if denom == 0.0:
        return 0.0
    return (p - q) / denom


def kendall_tau(r1, r2) -> RankAgreement:
    """Tie-corrected Kendall tau between two score vectors."""
    r1, r2 = _check_pair(r1, r2)
    counts = _pair_counts(r1, r2)
    return RankAgreement(_tau_from_counts(counts), None, *counts)


def kendall_tau_bruteforce(r1, r2) -> RankAgreement:
    """Reference implementation enumerating all C(F,2) pairs."""
    r1, r2 = _check_pair(r1, r2)
    counts = _pair_counts_bruteforce(r1, r2)
    return RankAgreement(_tau_from_counts(counts), None, *counts)


def _reference_ranks(scores: np.ndarray) -> np.ndarray:
    """Zero-based importance rank per element: 0 = highest score.

    Ordinal ranks (score ties broken by ascending index) keep the weighting
    invariant under strictly increasing transforms of the scores.
    """
    order = np.lexsort((np.arange(scores.size), -scores))
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[order] = np.arange(scores.size)
    return ranks


def weighted_kendall_tau(r1, r2) -> float:
    """Additive hyperbolic weighted tau; ranks/weights come from r1."""
    r1, r2 = _check_pair(r1, r2)
    w = 1.0 / (_reference_ranks(r1) + 1.0)
    s1 = np.sign(r1[:, None] - r1[None, :])
    s2 = np.sign(r2[:, None] - r2[None, :])
    c = s1 * s2                      # +1 concordant, -1 discordant, 0 on any tie
    pw = w[:, None] + w[None, :]
    upper = np.triu(np.ones_like(c, dtype=bool), k=1)
    num = float((c * pw)[upper].sum())
    den = float(pw[upper].sum())
    return num / den


def agreement(r1, r2) -> RankAgreement:
    """Both statistics in one record."""
    ra = kendall_tau(r1, r2)
    ra.tau_w = weighted_kendall_tau(r1, r2)
    return ra


def compare_models(attribs_a, attribs_b, shared_mask=None,
                   global_ranking: bool = False) -> AgreementSummary:
    """Rank agreement between two attribution lists, compared by magnitude on
    the shared-mask features only.

    Default is one comparison per sample; ``global_ranking`` instead compares
    a single pair of model-level rankings, each the mean attribution magnitude
    across all samples.
    """
    if len(attribs_a) != len(attribs_b):
        raise ValueError(f"sample count mismatch: {len(attribs_a)} vs {len(attribs_b)}")
    if len(attribs_a) == 0:
        raise ValueError("empty attribution lists")
    idx = None
    if shared_mask is not None:
        idx = shared_mask.indices
        if idx.size < 2:
            raise ValueError("shared mask must keep at least 2 features")
    abs_a = [np.abs(np.asarray(a.values, dtype=float)) for a in attribs_a]
    abs_b = [np.abs(np.asarray(b.values, dtype=float)) for b in attribs_b]
    if global_ranking:
        pairs = [(np.mean(abs_a, axis=0), np.mean(abs_b, axis=0))]
    else:
        pairs = zip(abs_a, abs_b)
    per = []
    for va, vb in pairs:
        if idx is not None:
            va, vb = va[idx], vb[idx]
        per.append(agreement(va, vb))
    taus = np.array([r.tau for r in per])
    tauws = np.array([r.tau_w for r in per])
    return AgreementSummary(per, float(taus.mean()), float(taus.std()),
                            float(tauws.mean()), float(tauws.std()))


def topk_overlap(ranking_a, ranking_b, k: int) -> float:
    """|top-k(a) intersect top-k(b)| / k for two ranking permutations."""
    ranking_a = np.asarray(ranking_a)
    ranking_b = np.asarray(ranking_b)
    if not (1 <= k <= ranking_a.size):
        raise ValueError(f"k must be in [1, {ranking_a.size}]")
    return len(set(ranking_a[:k].tolist()) & set(ranking_b[:k].tolist())) / k
