"""Per-sample feature attribution: four algorithms plus a brute-force Shapley oracle.

The three gradient/propagation methods (integrated gradients, epsilon-LRP,
DeepLIFT rescale) require the white-box MLP.  The Shapley methods only need a
scorer and therefore also accept the black-box oracle.

Attributions default to the post-sigmoid malicious score; set
``ExplainerConfig.space = "logit"`` for pre-sigmoid attribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mlp
from .mlp import MlpModel
from .seeding import rng

METHODS = ("integrated_gradients", "eps_lrp", "deeplift", "shap_exact", "shap_sampled")

SHAP_EXACT_MAX_FEATURES = 14
_DEEPLIFT_ZERO_DELTA = 1e-9


class CapabilityError(ValueError):
    pass


@dataclass
class ExplainerConfig:
    baseline: np.ndarray | None = None  # default: all-zero vector
    ig_steps: int = 64
    ig_mode: str = "exact"  # exact | midpoint
    lrp_epsilon: float = 1e-4
    shap_background: np.ndarray | None = None
    shap_samples: int = 16
    seed: int = 0
    space: str = "score"  # score | logit

    def __post_init__(self):
        if self.ig_steps < 1:
            raise ValueError("ig_steps must be >= 1")
        if self.lrp_epsilon <= 0:
            raise ValueError("lrp_epsilon must be positive")
        if self.ig_mode not in ("exact", "midpoint"):
            raise ValueError(f"unknown ig_mode {self.ig_mode!r}")
        if self.space not in ("score", "logit"):
            raise ValueError(f"unknown attribution space {self.space!r}")

    def baseline_for(self, n_features: int) -> np.ndarray:
        if self.baseline is None:
            return np.zeros(n_features)
        b = np.asarray(self.baseline, dtype=float)
        if b.shape != (n_features,):
            raise ValueError(f"baseline shape {b.shape} != ({n_features},)")
        return b


@dataclass
class Attribution:
    values: np.ndarray
    method: str
    completeness_gap: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("attribution contains non-finite values")


def _output_batch(model: MlpModel, X: np.ndarray, space: str) -> np.ndarray:
    if space == "logit":
        return mlp.logit_batch(model, X)
    return mlp.forward_batch(model, X)


def _scorer_batch_fn(scorer, space: str):
    """Normalize an MlpModel or oracle-like object to a batched score function."""
    if isinstance(scorer, MlpModel):
        return lambda X: _output_batch(scorer, X, space)
    if space != "score":
        raise CapabilityError("logit-space attribution needs the white-box model")
    if hasattr(scorer, "score_batch"):
        return scorer.score_batch
    if hasattr(scorer, "score"):
        return lambda X: np.array([scorer.score(row) for row in np.atleast_2d(X)])
    raise TypeError(f"cannot score with object of type {type(scorer).__name__}")


def _relu_segments(model: MlpModel, baseline: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Sorted path positions in [0, 1] at which some ReLU unit switches.

    Along the straight path baseline + alpha * d the network is piecewise
    linear in alpha; breakpoints are found layer by layer, each hidden unit's
    pre-activation being linear between the breakpoints of earlier layers.
    """
    alphas = np.array([0.0, 1.0])
    for li in range(len(model.layers) - 1):
        if model.layers[li].activation != "relu":
            continue  # affine layers add no kinks
        pts = baseline + alphas[:, None] * d
        _, zs, _ = mlp.forward_batch(model, pts, record=True)
        z = zs[li]  # (n_alphas, units), linear in alpha between breakpoints
        found = []
        for k in range(len(alphas) - 1):
            za, zb = z[k], z[k + 1]
            cross = (za * zb) < 0
            if cross.any():
                t = za[cross] / (za[cross] - zb[cross])
                found.append(alphas[k] + t * (alphas[k + 1] - alphas[k]))
        if found:
            alphas = np.unique(np.concatenate([alphas, *found]))
    return alphas


def integrated_gradients(model: MlpModel, x: np.ndarray,
                         config: ExplainerConfig) -> Attribution:
    """Average gradient along the straight path from baseline to x, scaled by
    (x - baseline).

    Mode "exact" integrates the path in closed form on each ReLU-linear
    segment (the logit is linear in the path position there, so the sigmoid
    integrates analytically); mode "midpoint" uses the midpoint Riemann rule
    with ``ig_steps`` points.
    """
    x = np.asarray(x, dtype=float)
    baseline = config.baseline_for(x.size)
    d = x - baseline
    if config.ig_mode == "midpoint":
        m = config.ig_steps
        alphas = (np.arange(m) + 0.5) / m
        points = baseline + alphas[:, None] * d
        grads = mlp.input_gradient_batch(model, points, config.space)
        avg_grad = grads.mean(axis=0)
    else:
        alphas = _relu_segments(model, baseline, d)
        mids = 0.5 * (alphas[:-1] + alphas[1:])
        widths = alphas[1:] - alphas[:-1]
        pts = baseline + alphas[:, None] * d
        logits = mlp.logit_batch(model, pts)
        grads = mlp.input_gradient_batch(model, baseline + mids[:, None] * d, "logit")
        if config.space == "logit":
            seg = widths  # gradient constant per segment
        else:
            za, zb = logits[:-1], logits[1:]
            dz = zb - za
            sig = mlp._sigmoid(logits)
            flat = np.abs(dz) < 1e-12
            seg = np.where(flat, (sig[:-1] * (1 - sig[:-1])) * widths,
                           (sig[1:] - sig[:-1]) * widths / np.where(flat, 1.0, dz))
        avg_grad = seg @ grads
    values = d * avg_grad
    out = _output_batch(model, np.stack([x, baseline]), config.space)
    gap = abs(values.sum() - (out[0] - out[1]))
    return Attribution(values, "integrated_gradients", gap)


def eps_lrp(model: MlpModel, x: np.ndarray, config: ExplainerConfig) -> Attribution:
    """Layer-wise relevance propagation with the sign-matched epsilon stabilizer.

    Relevance is seeded at the output unit with the model output itself and
    redistributed through each dense layer in proportion to the weighted
    activations, the denominator being the unit's pre-activation.
    """
    x = np.asarray(x, dtype=float)
    rec = mlp.forward(model, x)
    seed = rec.pre_activations[-1].copy() if config.space == "logit" \
        else np.array([rec.score])
    r = seed
    eps = config.lrp_epsilon
    for li in range(len(model.layers) - 1, -1, -1):
        z = rec.pre_activations[li]
        sign = np.where(z >= 0, 1.0, -1.0)
        denom = z + eps * sign
        r = rec.post_activations[li] * (model.layers[li].w.T @ (r / denom))
    return Attribution(r, "eps_lrp")


def deeplift(model: MlpModel, x: np.ndarray, config: ExplainerConfig) -> Attribution:
    """DeepLIFT rescale rule against reference activations from a baseline pass.

    The output seed is the output delta between x and the baseline; each layer
    redistributes relevance in proportion to its weighted activation deltas.
    Units whose pre-activation delta is below 1e-9 propagate zero relevance.
    """
    x = np.asarray(x, dtype=float)
    baseline = config.baseline_for(x.size)
    rec = mlp.forward(model, x)
    ref = mlp.forward(model, baseline)
    if config.space == "logit":
        seed = rec.pre_activations[-1] - ref.pre_activations[-1]
    else:
        seed = np.array([rec.score - ref.score])
    r = seed.copy()
    for li in range(len(model.layers) - 1, -1, -1):
        dz = rec.pre_activations[li] - ref.pre_activations[li]
        live = np.abs(dz) >= _DEEPLIFT_ZERO_DELTA
        ratio = np.zeros_like(dz)
        ratio[live] = r[live] / dz[live]
        dx = rec.post_activations[li] - ref.post_activations[li]
        r = dx * (model.layers[li].w.T @ ratio)
    gap = abs(r.sum() - seed.sum())
    return Attribution(r, "deeplift", gap)


def _composite_rows(x: np.ndarray, background: np.ndarray,
                    member: np.ndarray) -> np.ndarray:
    """Rows taking x on member features and background values elsewhere.

    member: (..., F) bool; result: (..., n_bg, F).
    """
    m = member[..., None, :]
    return np.where(m, x, background)


def _background_for(config: ExplainerConfig, n_features: int) -> np.ndarray:
    if config.shap_background is None:
        raise ValueError("shap requires a non-empty background set")
    bg = np.atleast_2d(np.asarray(config.shap_background, dtype=float))
    if bg.shape[0] == 0 or bg.shape[1] != n_features:
        raise ValueError(f"bad background shape {bg.shape}")
    return bg


def shap_exact(scorer, x: np.ndarray, config: ExplainerConfig) -> Attribution:
    """Exact Shapley values over all feature subsets.

    Set functions are realized interventionally: the value of a subset S is the
    mean score over the background of composites taking x on S and background
    values off S.
    """
    x = np.asarray(x, dtype=float)
    F = x.size
    if F > SHAP_EXACT_MAX_FEATURES:
        raise CapabilityError(
            f"shap_exact enumerates 2^F subsets and is limited to F <= "
            f"{SHAP_EXACT_MAX_FEATURES}; use shap_sampled")
    bg = _background_for(config, F)
    score_fn = _scorer_batch_fn(scorer, config.space)

    n_subsets = 1 << F
    masks = (np.arange(n_subsets)[:, None] >> np.arange(F)) & 1  # (2^F, F)
    masks = masks.astype(bool)
    rows = _composite_rows(x, bg, masks)          # (2^F, n_bg, F)
    vals = score_fn(rows.reshape(-1, F)).reshape(n_subsets, bg.shape[0]).mean(axis=1)

    sizes = masks.sum(axis=1)
    fact = [math.factorial(k) for k in range(F + 1)]
    # weight of a subset S (not containing i): |S|! (F - |S| - 1)! / F!
    w_by_size = np.array([fact[s] * fact[F - s - 1] / fact[F] for s in range(F)])
    values = np.zeros(F)
    for i in range(F):
        without_i = ~masks[:, i]
        s_ids = np.flatnonzero(without_i)
        gain = vals[s_ids | (1 << i)] - vals[s_ids]
        values[i] = float(np.sum(w_by_size[sizes[s_ids]] * gain))
    gap = abs(values.sum() - (vals[-1] - vals[0]))
    return Attribution(values, "shap_exact", gap)


def shap_sampled(scorer, x: np.ndarray, config: ExplainerConfig,
                 _chunk: int = 512) -> Attribution:
    """Monte Carlo Shapley values by antithetic permutation sampling.

    ``shap_samples`` permutations are drawn in antithetic pairs (each sampled
    order together with its reverse); each feature's marginal contribution is
    averaged over permutations and background points.
    """
    x = np.asarray(x, dtype=float)
    F = x.size
    n_perm = config.shap_samples
    if n_perm < 1:
        raise ValueError("shap_samples must be >= 1")
    bg = _background_for(config, F)
    score_fn = _scorer_batch_fn(scorer, config.space)
    g = rng(config.seed, "shap", "permutations")

    perms = np.empty((n_perm, F), dtype=np.int64)
    for k in range(0, n_perm, 2):
        p = g.permutation(F)
        perms[k] = p
        if k + 1 < n_perm:
            perms[k + 1] = p[::-1]

    total = np.zeros(F)
    steps = np.arange(F + 1)
    for start in range(0, n_perm, _chunk):
        chunk = perms[start:start + _chunk]
        c = chunk.shape[0]
        pos = np.argsort(chunk, axis=1)               # position of feature i in perm
        member = pos[:, None, :] < steps[None, :, None]   # (c, F+1, F)
        rows = _composite_rows(x, bg, member)         # (c, F+1, n_bg, F)
        vals = score_fn(rows.reshape(-1, F)).reshape(c, F + 1, bg.shape[0]).mean(axis=2)
        contrib = np.diff(vals, axis=1)               # (c, F) in insertion order
        np.add.at(total, chunk, contrib)
    values = total / n_perm
    base_rows = _composite_rows(x, bg, np.zeros(F, dtype=bool))
    v_empty = float(score_fn(base_rows).mean())
    v_full = float(score_fn(x[None, :]).mean())
    gap = abs(values.sum() - (v_full - v_empty))
    return Attribution(values, "shap_sampled", gap)


def rank_features(attribution: Attribution) -> np.ndarray:
    """Indices sorted by descending |value|, ties broken by ascending index."""
    v = np.abs(attribution.values)
    return np.lexsort((np.arange(v.size), -v))


def attribute(method: str, model_or_scorer, x: np.ndarray,
              config: ExplainerConfig) -> Attribution:
    """Dispatch by method name."""
    if method == "integrated_gradients":
        return integrated_gradients(model_or_scorer, x, config)
    if method == "eps_lrp":
        return eps_lrp(model_or_scorer, x, config)
    if method == "deeplift":
        return deeplift(model_or_scorer, x, config)
    if method == "shap_exact":
        return shap_exact(model_or_scorer, x, config)
    if method == "shap_sampled":
        return shap_sampled(model_or_scorer, x, config)
    raise ValueError(f"unknown attribution method {method!r}")
