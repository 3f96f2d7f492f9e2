"""White-box substitute classifier: a dense ReLU network with sigmoid output.

Forward passes expose every pre- and post-activation so the attribution
algorithms can propagate relevance layer by layer, and gradients are computed
by exact backpropagation.  Training is plain mini-batch SGD on binary
cross-entropy with inverted dropout.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .seeding import rng

MODEL_MAGIC = b"XEAMLP1"


class TrainingError(RuntimeError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass
class DenseLayer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str  # relu | sigmoid | identity


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 5e-3
    dropout_rate: float = 0.2
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class MlpModel:
    layers: list[DenseLayer]
    input_dim: int
    trained: bool = False
    train_config: TrainConfig | None = None


@dataclass
class ForwardRecord:
    pre_activations: list[np.ndarray]   # z per layer
    post_activations: list[np.ndarray]  # x per layer; [0] is the input
    score: float


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return _sigmoid(z)
    return z


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.clip(z, -500, None))),
                    np.exp(np.clip(z, None, 500)) / (1.0 + np.exp(np.clip(z, None, 500))))


def init(input_dim: int, hidden_dims: list[int] | tuple[int, ...] = (32, 32),
         seed: int = 0) -> MlpModel:
    """Glorot-uniform weights, zero biases.  Empty hidden_dims gives logistic regression."""
    if input_dim < 1 or any(d < 1 for d in hidden_dims):
        raise ValueError("all layer dims must be >= 1")
    g = rng(seed, "mlp", "init")
    dims = [input_dim, *hidden_dims, 1]
    layers = []
    for li in range(len(dims) - 1):
        fan_in, fan_out = dims[li], dims[li + 1]
        s = np.sqrt(6.0 / (fan_in + fan_out))
        w = g.uniform(-s, s, size=(fan_out, fan_in))
        act = "sigmoid" if li == len(dims) - 2 else "relu"
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return MlpModel(layers, input_dim)


def _check_input(model: MlpModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"expected input dim {model.input_dim}, got {x.shape[-1]}")
    return x


def forward(model: MlpModel, x: np.ndarray) -> ForwardRecord:
    """Inference-mode forward pass recording all activations (no dropout)."""
    x = _check_input(model, x)
    if x.ndim != 1:
        raise ValueError("forward takes a single sample; use forward_batch")
    zs, xs = [], [x]
    a = x
    for layer in model.layers:
        z = layer.w @ a + layer.b
        a = _act(z, layer.activation)
        zs.append(z)
        xs.append(a)
    return ForwardRecord(zs, xs, float(a[0]))


def forward_batch(model: MlpModel, X: np.ndarray,
                  record: bool = False):
    """Batched forward pass.  Returns scores, or (scores, zs, xs) when recording."""
    X = _check_input(model, np.atleast_2d(X))
    zs, xs = [], [X]
    a = X
    for layer in model.layers:
        z = a @ layer.w.T + layer.b
        a = _act(z, layer.activation)
        zs.append(z)
        xs.append(a)
    scores = a[:, 0]
    if record:
        return scores, zs, xs
    return scores


def logit(model: MlpModel, x: np.ndarray) -> float:
    return float(forward(model, x).pre_activations[-1][0])


def logit_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    _, zs, _ = forward_batch(model, X, record=True)
    return zs[-1][:, 0]


def input_gradient(model: MlpModel, x: np.ndarray, space: str = "score") -> np.ndarray:
    """d(output)/dx by backpropagation; ``space`` is "score" or "logit"."""
    return input_gradient_batch(model, np.asarray(x, dtype=float)[None, :], space)[0]


def input_gradient_batch(model: MlpModel, X: np.ndarray, space: str = "score") -> np.ndarray:
    if space not in ("score", "logit"):
        raise ValueError(f"unknown gradient space {space!r}")
    scores, zs, xs = forward_batch(model, X, record=True)
    # seed dL/dz at the output unit
    if space == "score":
        delta = (scores * (1.0 - scores))[:, None]
    else:
        delta = np.ones((scores.shape[0], 1))
    for li in range(len(model.layers) - 1, 0, -1):
        layer = model.layers[li]
        delta = delta @ layer.w
        if model.layers[li - 1].activation == "relu":
            delta = delta * (zs[li - 1] > 0)
    return delta @ model.layers[0].w


def train(model: MlpModel, dataset: Dataset | tuple[np.ndarray, np.ndarray],
          config: TrainConfig) -> MlpModel:
    """Mini-batch SGD on binary cross-entropy; returns a new trained model."""
    if isinstance(dataset, Dataset):
        X, y = dataset.X, dataset.y
    else:
        X, y = dataset
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise TrainingError("empty training set")
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise TrainingError("labels must be in {0, 1}")

    layers = [DenseLayer(l.w.copy(), l.b.copy(), l.activation) for l in model.layers]
    if config.standardize and layers[0].activation != "identity":
        # frozen per-feature standardization as a square affine first layer,
        # so downstream features reach SGD on comparable scales
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd = np.where(sd < 1e-12, 1.0, sd)
        layers.insert(0, DenseLayer(np.diag(1.0 / sd), -mu / sd, "identity"))
    g = rng(config.seed, "mlp", "train")
    n = X.shape[0]
    keep = 1.0 - config.dropout_rate
    for epoch in range(config.epochs):
        order = g.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            xb, yb = X[batch], y[batch]
            # forward with inverted dropout on hidden activations
            acts = [xb]
            zs = []
            masks = []
            a = xb
            for li, layer in enumerate(layers):
                z = a @ layer.w.T + layer.b
                a = _act(z, layer.activation)
                if layer.activation == "relu" and config.dropout_rate > 0:
                    mask = (g.random(a.shape) < keep) / keep
                    a = a * mask
                else:
                    mask = None
                zs.append(z)
                acts.append(a)
                masks.append(mask)
            p = acts[-1][:, 0]
            eps = 1e-12
            loss = -np.mean(yb * np.log(p + eps) + (1 - yb) * np.log(1 - p + eps))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            # backward; BCE + sigmoid collapses to (p - y) at the output pre-activation
            m = len(batch)
            delta = ((p - yb) / m)[:, None]
            for li in range(len(layers) - 1, -1, -1):
                layer = layers[li]
                gw = delta.T @ acts[li]
                gb = delta.sum(axis=0)
                if li > 0:
                    delta = delta @ layer.w
                    if masks[li - 1] is not None:
                        delta = delta * masks[li - 1]
                    if layers[li - 1].activation == "relu":
                        delta = delta * (zs[li - 1] > 0)
                if layer.activation != "identity":  # identity layers are frozen
                    layer.w -= config.learning_rate * gw
                    layer.b -= config.learning_rate * gb
    return MlpModel(layers, model.input_dim, trained=True, train_config=config)


# --- serialization --------------------------------------------------------

def save_model(model: MlpModel, path) -> None:
    header = {
        "input_dim": model.input_dim,
        "trained": model.trained,
        "layers": [{"out": l.w.shape[0], "in": l.w.shape[1], "activation": l.activation}
                   for l in model.layers],
        "train_config": (vars(model.train_config) if model.train_config else None),
        "version": 1,
    }
    blob = json.dumps(header, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC + b"\n")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for layer in model.layers:
            fh.write(np.ascontiguousarray(layer.w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.b, dtype="<f8").tobytes())


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MODEL_MAGIC + b"\n"):
        raise ModelFormatError("bad model magic")
    off = len(MODEL_MAGIC) + 1
    if len(data) < off + 4:
        raise ModelFormatError("truncated model file")
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    try:
        header = json.loads(data[off:off + hlen])
    except ValueError as e:
        raise ModelFormatError(f"bad model header: {e}") from e
    if header.get("version") != 1:
        raise ModelFormatError(f"unsupported model version {header.get('version')}")
    off += hlen
    layers = []
    for spec in header["layers"]:
        out_d, in_d = spec["out"], spec["in"]
        need = (out_d * in_d + out_d) * 8
        if len(data) < off + need:
            raise ModelFormatError("truncated model file")
        w = np.frombuffer(data, dtype="<f8", count=out_d * in_d, offset=off).reshape(out_d, in_d)
        off += out_d * in_d * 8
        b = np.frombuffer(data, dtype="<f8", count=out_d, offset=off)
        off += out_d * 8
        layers.append(DenseLayer(w.copy(), b.copy(), spec["activation"]))
    cfg = TrainConfig(**header["train_config"]) if header.get("train_config") else None
    return MlpModel(layers, header["input_dim"], trained=header["trained"], train_config=cfg)
