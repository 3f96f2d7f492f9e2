"""Feature schema and synthetic labeled dataset generation.

The schema mirrors the nine feature groups of a structural PE classifier at
a reduced width.  The byte-histogram, byte-entropy and strings groups are
simplex groups: their components are non-negative and sum to one per sample
(they stand in for byte-value / printable-character distributions).

The generator plants a known set of label-predictive feature indices so that
attribution quality can later be judged against ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .seeding import rng

GROUP_ORDER = (
    "byte_histogram",
    "byte_entropy",
    "strings",
    "general",
    "coff_header",
    "sections",
    "imports",
    "exports",
    "data_directories",
)

SIMPLEX_GROUPS = frozenset({"byte_histogram", "byte_entropy", "strings"})

# (kind, lo, hi) per non-simplex group
_GROUP_KINDS = {
    "general": ("count", 0.0, 100.0),
    "coff_header": ("bounded_int", 0.0, 255.0),
    "sections": ("count", 0.0, 40.0),
    "imports": ("count", 0.0, 200.0),
    "exports": ("count", 0.0, 50.0),
    "data_directories": ("bounded_int", 0.0, 64.0),
}

DEFAULT_WIDTHS = {
    "byte_histogram": 16,
    "byte_entropy": 16,
    "strings": 12,
    "general": 4,
    "coff_header": 4,
    "sections": 4,
    "imports": 4,
    "exports": 2,
    "data_directories": 2,
}

DATASET_MAGIC = "XEAD1"
MASK_MAGIC = "XEAM1"

SIMPLEX_TOL = 1e-9


class SchemaError(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    group: str
    kind: str  # continuous | count | bounded_int | simplex_component
    lo: float
    hi: float


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureDescriptor, ...]
    groups: dict[str, tuple[int, int]]  # group -> [start, end) index range

    @property
    def size(self) -> int:
        return len(self.features)

    def group_indices(self, group: str) -> range:
        start, end = self.groups[group]
        return range(start, end)

    def group_of(self, index: int) -> str:
        return self.features[index].group

    def is_simplex(self, index: int) -> bool:
        return self.features[index].kind == "simplex_component"

    def to_json(self) -> dict:
        return {
            "features": [
                {"name": f.name, "group": f.group, "kind": f.kind,
                 "bounds": [f.lo, f.hi]}
                for f in self.features
            ],
            "groups": {g: list(r) for g, r in self.groups.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSchema":
        feats = tuple(
            FeatureDescriptor(f["name"], f["group"], f["kind"],
                              float(f["bounds"][0]), float(f["bounds"][1]))
            for f in obj["features"]
        )
        groups = {g: (int(a), int(b)) for g, (a, b) in obj["groups"].items()}
        return cls(feats, groups)


def make_schema(widths: dict[str, int] | None = None) -> FeatureSchema:
    """Build a schema with the given per-group feature counts.

    Groups are laid out contiguously in the fixed canonical order; groups
    absent from ``widths`` get no features.
    """
    if widths is None:
        widths = DEFAULT_WIDTHS
    unknown = set(widths) - set(GROUP_ORDER)
    if unknown:
        raise SchemaError(f"unknown feature groups: {sorted(unknown)}")
    for g, w in widths.items():
        if w < 1:
            raise SchemaError(f"group {g!r} width must be >= 1, got {w}")
    feats: list[FeatureDescriptor] = []
    groups: dict[str, tuple[int, int]] = {}
    for group in GROUP_ORDER:
        if group not in widths:
            continue
        start = len(feats)
        width = widths[group]
        if group in SIMPLEX_GROUPS:
            kind, lo, hi = "simplex_component", 0.0, 1.0
        else:
            kind, lo, hi = _GROUP_KINDS[group]
        for j in range(width):
            feats.append(FeatureDescriptor(f"{group}_{j}", group, kind, lo, hi))
        groups[group] = (start, start + width)
    return FeatureSchema(tuple(feats), groups)


def validate_vector(schema: FeatureSchema, x: np.ndarray) -> None:
    """Raise if ``x`` violates the schema invariants."""
    x = np.asarray(x, dtype=float)
    if x.shape != (schema.size,):
        raise SchemaError(f"expected {schema.size} features, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise SchemaError("non-finite feature value")
    for i, f in enumerate(schema.features):
        if not (f.lo - SIMPLEX_TOL <= x[i] <= f.hi + SIMPLEX_TOL):
            raise SchemaError(f"feature {f.name} value {x[i]} outside [{f.lo}, {f.hi}]")
        if f.kind in ("count", "bounded_int") and x[i] != round(x[i]):
            raise SchemaError(f"feature {f.name} value {x[i]} not an integer")
    for group, (start, end) in schema.groups.items():
        if group in SIMPLEX_GROUPS:
            s = x[start:end].sum()
            if abs(s - 1.0) > SIMPLEX_TOL:
                raise SchemaError(f"simplex group {group} sums to {s}")


@dataclass
class Dataset:
    schema: FeatureSchema
    X: np.ndarray  # (n, F) float64
    y: np.ndarray  # (n,) int, 0 benign / 1 malicious
    informative_indices: tuple[int, ...]
    seed: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class FeatureMask:
    bits: np.ndarray  # (F,) bool

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def __and__(self, other: "FeatureMask") -> "FeatureMask":
        return FeatureMask(self.bits & other.bits)


# --- generation -----------------------------------------------------------

# class-conditional parameters for informative features: non-simplex means
# sit at 40% / 60% of the feature range with sd 10% of the range; simplex
# components use a larger Dirichlet concentration for the malicious class.
_BENIGN_FRAC, _MALICIOUS_FRAC, _INFO_SD_FRAC = 0.40, 0.60, 0.10
_NULL_FRAC, _NULL_SD_FRAC = 0.50, 0.12
_SIMPLEX_ALPHA = 2.0
_SIMPLEX_SEP_TARGET = 1.65  # analytic margin over the 1.5-sigma guarantee


def _simplex_info_alpha(width: int, n_info: int) -> float:
    """Malicious Dirichlet concentration for informative simplex components.

    Chosen as the smallest grid value whose analytic class separation (mean
    difference over pooled standard deviation) meets the target; informative
    components sharing a group dilute each other, so the required concentration
    grows with their count.
    """
    a0b = _SIMPLEX_ALPHA * width
    mean_b = _SIMPLEX_ALPHA / a0b
    var_b = _SIMPLEX_ALPHA * (a0b - _SIMPLEX_ALPHA) / (a0b * a0b * (a0b + 1))
    for alpha in np.arange(3.0, 64.01, 0.25):
        a0m = n_info * alpha + _SIMPLEX_ALPHA * (width - n_info)
        mean_m = alpha / a0m
        var_m = alpha * (a0m - alpha) / (a0m * a0m * (a0m + 1))
        sep = (mean_m - mean_b) / np.sqrt((var_b + var_m) / 2)
        if sep >= _SIMPLEX_SEP_TARGET:
            return float(alpha)
    return 64.0


def generate(schema: FeatureSchema, n_samples: int, n_informative: int,
             class_balance: float = 0.5, seed: int = 0) -> Dataset:
    """Generate a labeled dataset with ``n_informative`` planted predictive features."""
    F = schema.size
    if n_informative > F:
        raise ValueError(f"n_informative {n_informative} > feature count {F}")
    if not (0.0 < class_balance < 1.0):
        raise ValueError("class_balance must be in (0, 1)")
    g_info = rng(seed, "data", "informative")
    informative = tuple(sorted(int(i) for i in
                               g_info.choice(F, size=n_informative, replace=False)))
    info_set = set(informative)

    n_mal = int(round(n_samples * class_balance))
    y = np.zeros(n_samples, dtype=np.int64)
    y[:n_mal] = 1
    rng(seed, "data", "labels").shuffle(y)

    X = np.zeros((n_samples, F))
    g_vals = rng(seed, "data", "values")
    mal = y == 1
    for group, (start, end) in schema.groups.items():
        width = end - start
        if group in SIMPLEX_GROUPS:
            alpha = np.full((n_samples, width), _SIMPLEX_ALPHA)
            n_info_here = sum(1 for j in range(width) if start + j in info_set)
            if n_info_here:
                a_mal = _simplex_info_alpha(width, n_info_here)
                for j in range(width):
                    if start + j in info_set:
                        alpha[mal, j] = a_mal
            draws = g_vals.gamma(alpha)
            X[:, start:end] = draws / draws.sum(axis=1, keepdims=True)
        else:
            for j in range(width):
                idx = start + j
                f = schema.features[idx]
                span = f.hi - f.lo
                if idx in info_set:
                    mean = np.where(mal, f.lo + _MALICIOUS_FRAC * span,
                                    f.lo + _BENIGN_FRAC * span)
                    sd = _INFO_SD_FRAC * span
                else:
                    mean = f.lo + _NULL_FRAC * span
                    sd = _NULL_SD_FRAC * span
                col = g_vals.normal(mean, sd, size=n_samples)
                col = np.clip(col, f.lo, f.hi)
                if f.kind in ("count", "bounded_int"):
                    col = np.round(col)
                X[:, idx] = col
    return Dataset(schema, X, y, informative, seed)


def split(dataset: Dataset, train_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive, label-stratified split."""
    if not (0.0 < train_fraction < 1.0):
        raise ValueError("train_fraction must be in (0, 1)")
    g = rng(seed, "data", "split")
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for label in (0, 1):
        idx = np.flatnonzero(dataset.y == label)
        g.shuffle(idx)
        cut = int(round(train_fraction * len(idx)))
        train_idx.append(idx[:cut])
        test_idx.append(idx[cut:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))

    def _sub(sel: np.ndarray) -> Dataset:
        return Dataset(dataset.schema, dataset.X[sel], dataset.y[sel],
                       dataset.informative_indices, dataset.seed)

    return _sub(tr), _sub(te)


def sample_feature_mask(schema: FeatureSchema, fraction: float, seed: int = 0) -> FeatureMask:
    """Uniform without-replacement subset of round(fraction * F) features."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must be in (0, 1]")
    F = schema.size
    k = int(round(fraction * F))
    bits = np.zeros(F, dtype=bool)
    chosen = rng(seed, "data", "mask").choice(F, size=k, replace=False)
    bits[chosen] = True
    return FeatureMask(bits)


# --- serialization --------------------------------------------------------

def save_dataset(dataset: Dataset, path) -> None:
    lines = [f"{DATASET_MAGIC} {dataset.schema.size} {dataset.n_samples}"]
    lines.append(json.dumps(dataset.schema.to_json(), separators=(",", ":")))
    meta = {"seed": dataset.seed,
            "informative_indices": list(dataset.informative_indices)}
    lines.append(json.dumps(meta, separators=(",", ":")))
    for label, row in zip(dataset.y, dataset.X):
        # repr() emits the shortest decimal that round-trips the float64
        lines.append(f"{int(label)}," + ",".join(repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty dataset file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != DATASET_MAGIC:
        raise FormatError(f"bad dataset header: {lines[0]!r}")
    F, n = int(head[1]), int(head[2])
    if len(lines) < 3 + n:
        raise FormatError("truncated dataset file")
    schema = FeatureSchema.from_json(json.loads(lines[1]))
    if schema.size != F:
        raise FormatError(f"schema size {schema.size} != header F {F}")
    meta = json.loads(lines[2])
    X = np.zeros((n, F))
    y = np.zeros(n, dtype=np.int64)
    for i, line in enumerate(lines[3:3 + n]):
        parts = line.split(",")
        if len(parts) != F + 1:
            raise FormatError(f"row {i}: expected {F + 1} fields, got {len(parts)}")
        y[i] = int(parts[0])
        X[i] = [float(p) for p in parts[1:]]
    return Dataset(schema, X, y,
                   tuple(int(i) for i in meta["informative_indices"]),
                   int(meta["seed"]))


def save_mask(mask: FeatureMask, path) -> None:
    packed = np.packbits(mask.bits.astype(np.uint8))
    with open(path, "w") as fh:
        fh.write(f"{MASK_MAGIC} {mask.bits.size}\n{packed.tobytes().hex()}\n")


def load_mask(path) -> FeatureMask:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(MASK_MAGIC + " "):
        raise FormatError("bad mask header")
    F = int(lines[0].split()[1])
    if len(lines) < 2:
        raise FormatError("truncated mask file")
    packed = np.frombuffer(bytes.fromhex(lines[1]), dtype=np.uint8)
    bits = np.unpackbits(packed)[:F].astype(bool)
    return FeatureMask(bits)
