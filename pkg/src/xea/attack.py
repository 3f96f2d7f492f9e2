"""Greedy explainability-guided evasion against a score oracle.

The attack ranks features once by attribution magnitude on the white-box
substitute, then walks the modifiable ones in that order.  For each feature
every registry grid value is scored by the oracle; the best value is committed
only if it strictly lowers the current score (otherwise the feature is
reverted), and the attack stops as soon as the score drops below the benign
threshold or a budget runs out.

This module deliberately knows nothing about the target model class: it only
calls ``oracle.score``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import explain
from .data import Dataset, FeatureSchema
from .explain import Attribution, ExplainerConfig
from .mlp import MlpModel
from .seeding import rng

MAX_GRID_SIZE = 32

SIMPLEX_GRID = (0.0, 0.05, 0.1, 0.2, 0.4)
BOUND_QUANTILES = (0.0, 0.25, 0.5, 0.75, 1.0)


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class RegistryEntry:
    modifiable: bool
    value_grid: tuple[float, ...] = ()
    dependency_note: str = ""


@dataclass
class ModifiabilityRegistry:
    entries: dict[int, RegistryEntry]

    def modifiable_indices(self) -> list[int]:
        return sorted(i for i, e in self.entries.items() if e.modifiable)


@dataclass
class AttackConfig:
    max_features_modified: int = 20
    oracle_budget: int = 2000
    benign_threshold: float = 0.5
    explain_method: str = "integrated_gradients"
    seed: int = 0

    def __post_init__(self):
        if self.max_features_modified < 1 or self.oracle_budget < 1:
            raise ValueError("budgets must be >= 1")


@dataclass
class AttackStep:
    feature_index: int
    old_value: float
    new_value: float
    oracle_score_after: float


@dataclass
class AttackTrace:
    steps: list[AttackStep]
    outcome: str  # evaded | budget_exhausted | no_modifiable_features
    queries_used: int
    n_features_modified: int
    initial_score: float
    final_score: float
    final_vector: np.ndarray


@dataclass
class AttackReport:
    effectiveness: float
    avg_perturbation: float        # over evaded traces
    avg_perturbation_all: float    # over all eligible traces
    n_eligible: int
    n_evaded: int
    traces: list[AttackTrace]


def default_registry(schema: FeatureSchema) -> ModifiabilityRegistry:
    """Registry of the easily-modifiable features of the desk schema.

    Modifiable: the printable-character-distribution stand-ins (the whole
    strings group), the header timestamp stand-ins (coff_header group) and two
    general features standing in for the CLR runtime size / virtual address.
    """
    entries: dict[int, RegistryEntry] = {}
    for i in range(schema.size):
        entries[i] = RegistryEntry(False)

    def _bound_grid(idx: int) -> tuple[float, ...]:
        f = schema.features[idx]
        grid = []
        for q in BOUND_QUANTILES:
            v = f.lo + q * (f.hi - f.lo)
            if f.kind in ("count", "bounded_int"):
                v = float(round(v))
            if v not in grid:
                grid.append(v)
        return tuple(grid)

    if "strings" in schema.groups:
        for i in schema.group_indices("strings"):
            entries[i] = RegistryEntry(
                True, SIMPLEX_GRID,
                "printable character distribution; group renormalized after edit")
    if "coff_header" in schema.groups:
        for i in schema.group_indices("coff_header"):
            entries[i] = RegistryEntry(True, _bound_grid(i),
                                       "header timestamp stand-in; inert field")
    if "general" in schema.groups:
        notes = ("CLR runtime size stand-in", "CLR runtime virtual address stand-in")
        for note, i in zip(notes, schema.group_indices("general")):
            entries[i] = RegistryEntry(True, _bound_grid(i), note)

    for i, e in entries.items():
        if e.modifiable:
            assert 0 < len(e.value_grid) <= MAX_GRID_SIZE
            f = schema.features[i]
            assert all(f.lo <= v <= f.hi for v in e.value_grid)
    return ModifiabilityRegistry(entries)


def apply_value(schema: FeatureSchema, x: np.ndarray, index: int,
                value: float) -> np.ndarray:
    """Set one feature, renormalizing its simplex group when needed."""
    out = np.array(x, dtype=float)
    f = schema.features[index]
    if f.kind == "simplex_component":
        start, end = schema.groups[f.group]
        rest = [i for i in range(start, end) if i != index]
        out[index] = value
        if rest:
            rest_sum = out[rest].sum()
            target = 1.0 - value
            if rest_sum > 0:
                out[rest] *= target / rest_sum
            else:
                out[rest] = target / len(rest)
        else:
            out[index] = 1.0
    else:
        out[index] = value
    return out


def _greedy_attack(sample: np.ndarray, schema: FeatureSchema, oracle,
                   order: list[int], registry: ModifiabilityRegistry,
                   config: AttackConfig) -> AttackTrace:
    queries = 0

    def query(x):
        nonlocal queries
        queries += 1
        return oracle.score(x)

    initial = query(sample)
    if initial < config.benign_threshold:
        raise PreconditionError(
            f"sample already classified benign (score {initial:.4f})")
    if not order:
        return AttackTrace([], "no_modifiable_features", queries, 0,
                           initial, initial, np.array(sample, dtype=float))

    x_cur = np.array(sample, dtype=float)
    best = initial
    steps: list[AttackStep] = []
    modified: set[int] = set()
    outcome = "budget_exhausted"
    for idx in order:
        if len(modified) >= config.max_features_modified:
            break
        grid = registry.entries[idx].value_grid
        best_val = None
        best_vec = None
        best_score = best
        exhausted = False
        for value in grid:
            if value == x_cur[idx]:
                continue
            if queries >= config.oracle_budget:
                exhausted = True
                break
            x_try = apply_value(schema, x_cur, idx, value)
            s = query(x_try)
            if s < best_score:
                best_score, best_val, best_vec = s, value, x_try
        if best_val is not None:  # strictly lower than the current score
            steps.append(AttackStep(idx, float(x_cur[idx]), float(best_val),
                                    float(best_score)))
            x_cur = best_vec
            best = best_score
            modified.add(idx)
            if best < config.benign_threshold:
                outcome = "evaded"
                break
        if exhausted:
            break
    return AttackTrace(steps, outcome, queries, len(modified), initial, best, x_cur)


def run_attack(sample: np.ndarray, substitute: MlpModel, oracle,
               registry: ModifiabilityRegistry, schema: FeatureSchema,
               explainer_config: ExplainerConfig, attack_config: AttackConfig,
               attribution: Attribution | None = None) -> AttackTrace:
    """Attribution-ordered greedy attack on one sample.

    ``attribution`` may be precomputed (e.g. on a masked feature view); it
    must be a full-length vector.  Otherwise it is computed once here with
    ``attack_config.explain_method`` on the substitute.
    """
    sample = np.asarray(sample, dtype=float)
    if attribution is None:
        attribution = explain.attribute(attack_config.explain_method,
                                        substitute, sample, explainer_config)
    ranking = explain.rank_features(attribution)
    modifiable = {i for i in registry.modifiable_indices()}
    order = [int(i) for i in ranking if int(i) in modifiable]
    return _greedy_attack(sample, schema, oracle, order, registry, attack_config)


def random_order_attack(sample: np.ndarray, oracle,
                        registry: ModifiabilityRegistry, schema: FeatureSchema,
                        attack_config: AttackConfig) -> AttackTrace:
    """Same greedy loop but over a seeded uniform shuffle of modifiable features."""
    sample = np.asarray(sample, dtype=float)
    order = registry.modifiable_indices()
    rng(attack_config.seed, "attack", "random-order").shuffle(order)
    return _greedy_attack(sample, schema, oracle, order, registry, attack_config)


def run_campaign(test_set: Dataset, substitute: MlpModel | None, oracle,
                 registry: ModifiabilityRegistry,
                 explainer_config: ExplainerConfig | None,
                 attack_config: AttackConfig,
                 order: str = "guided",
                 attributions: list[Attribution] | None = None,
                 workers: int = 1) -> AttackReport:
    """Attack every eligible sample: malicious and correctly detected by the oracle.

    ``order`` is "guided" (attribution-ranked) or "random"; random attacks get
    per-sample seeds derived from ``attack_config.seed``.  ``workers`` > 1 runs
    samples concurrently; the trace order is by sample regardless of scheduling.
    """
    if order not in ("guided", "random"):
        raise ValueError(f"unknown order {order!r}")
    schema = test_set.schema
    eligible: list[int] = []
    for i in range(test_set.n_samples):
        if test_set.y[i] == 1 and \
                oracle.score(test_set.X[i]) >= attack_config.benign_threshold:
            eligible.append(i)
    if not eligible:
        raise ValueError("no eligible samples: need malicious samples detected by the oracle")

    def attack_one(pos: int, i: int) -> AttackTrace:
        x = test_set.X[i]
        if order == "guided":
            attr = attributions[pos] if attributions is not None else None
            return run_attack(x, substitute, oracle, registry, schema,
                              explainer_config, attack_config, attribution=attr)
        cfg = AttackConfig(attack_config.max_features_modified,
                           attack_config.oracle_budget,
                           attack_config.benign_threshold,
                           attack_config.explain_method,
                           seed=int(rng(attack_config.seed, "attack",
                                        "per-sample", i).integers(2**63)))
        return random_order_attack(x, oracle, registry, schema, cfg)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(attack_one, range(len(eligible)), eligible))
    else:
        traces = [attack_one(pos, i) for pos, i in enumerate(eligible)]

    evaded = [t for t in traces if t.outcome == "evaded"]
    effectiveness = len(evaded) / len(traces)
    avg_pert = float(np.mean([t.n_features_modified for t in evaded])) if evaded else 0.0
    avg_all = float(np.mean([t.n_features_modified for t in traces]))
    return AttackReport(effectiveness, avg_pert, avg_all,
                        len(traces), len(evaded), traces)
