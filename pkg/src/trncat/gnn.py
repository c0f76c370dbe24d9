"""Network-learning module: PPR-neighborhood attention GNN with manual backprop.

For each textual node i with PPR neighborhood N(i):

    h_i   = act(act(x_i W1 + b1) W2 + b2)
    a_ij  = sigmoid((h_i Wq) . (h_j Wk))
    z_i   = sigma(sum_j a_ij P_ij h_j)
    p(i)  = softmax(z_i Wc + bc)
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .ppr import NeighborTable

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wq", "Wk", "Wc", "bc")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense features keyed by textual node id."""

    ids: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if self.values.ndim != 2 or self.values.shape[0] != len(self.ids):
            raise ValueError("values must be a (len(ids), dim) array")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "_pos", {i: k for k, i in enumerate(self.ids)})

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def rows(self, nodes: Sequence[int]) -> np.ndarray:
        pos = self._pos
        try:
            return self.values[[pos[int(n)] for n in nodes]]
        except KeyError as exc:
            raise KeyError(f"node {exc.args[0]} has no feature vector") from None

    def digest(self) -> bytes:
        return np.ascontiguousarray(self.values).tobytes()


_ACTIVATIONS = {
    "relu": (lambda a: np.maximum(a, 0.0), lambda a: (a > 0).astype(a.dtype)),
    "identity": (lambda a: a, lambda a: np.ones_like(a)),
}


@dataclass
class GnnModel:
    params: dict[str, np.ndarray]
    activation: str = "relu"
    aggregate_activation: str = "relu"
    renormalize_scores: bool = False

    @property
    def dims(self) -> dict[str, int]:
        return {
            "input_dim": self.params["W1"].shape[0],
            "hidden_dim": self.params["W1"].shape[1],
            "n_classes": self.params["Wc"].shape[1],
        }

    def copy(self) -> "GnnModel":
        return replace(self, params={k: v.copy() for k, v in self.params.items()})


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def init_model(input_dim: int, hidden_dim: int = 64, n_classes: int = 2, rng_seed: int = 0,
               zero: bool = False, dtype=np.float64, **options) -> GnnModel:
    """Glorot-uniform weights, zero biases.  ``zero=True`` zeroes everything."""
    if min(input_dim, hidden_dim, n_classes) < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(rng_seed)
    shapes = {
        "W1": (input_dim, hidden_dim), "b1": (hidden_dim,),
        "W2": (hidden_dim, hidden_dim), "b2": (hidden_dim,),
        "Wq": (hidden_dim, hidden_dim), "Wk": (hidden_dim, hidden_dim),
        "Wc": (hidden_dim, n_classes), "bc": (n_classes,),
    }
    params = {}
    for name in PARAM_NAMES:
        shape = shapes[name]
        if zero or len(shape) == 1:
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = _glorot(rng, *shape, dtype)
    return GnnModel(params, **options)


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _forward(model: GnnModel, features: FeatureMatrix, table: NeighborTable,
             batch: Sequence[int]) -> dict:
    """Batched forward pass; returns every intermediate needed for backprop."""
    p = model.params
    act, _ = _ACTIVATIONS[model.activation]
    agg_act, _ = _ACTIVATIONS[model.aggregate_activation]

    nbr, score, mask = table.padded(batch)
    if model.renormalize_scores:
        tot = score.sum(axis=1, keepdims=True)
        score = np.divide(score, tot, out=np.zeros_like(score), where=tot > 0)
    nodes, inverse = np.unique(np.concatenate([np.asarray(batch, dtype=np.int64),
                                               nbr[mask]]), return_inverse=True)
    pos_self = inverse[:len(batch)]
    pos_nbr = np.zeros_like(nbr)
    pos_nbr[mask] = inverse[len(batch):]

    X = features.rows(nodes).astype(p["W1"].dtype, copy=False)
    A1 = X @ p["W1"] + p["b1"]
    H1 = act(A1)
    A2 = H1 @ p["W2"] + p["b2"]
    H = act(A2)

    hi = H[pos_self]
    Hn = H[pos_nbr]
    Q = hi @ p["Wq"]
    Kn = Hn @ p["Wk"]
    s = np.einsum("bh,bkh->bk", Q, Kn)
    alpha = _sigmoid(s)
    Pm = score * mask
    c = alpha * Pm
    agg = np.einsum("bk,bkh->bh", c, Hn)
    z = agg_act(agg)
    probs = _softmax(z @ p["Wc"] + p["bc"])
    return dict(X=X, A1=A1, H1=H1, A2=A2, H=H, hi=hi, Hn=Hn, Q=Q, Kn=Kn, alpha=alpha,
                Pm=Pm, c=c, agg=agg, z=z, probs=probs, mask=mask,
                pos_self=pos_self, pos_nbr=pos_nbr)


def forward(model: GnnModel, features: FeatureMatrix, table: NeighborTable,
            batch: Sequence[int]) -> np.ndarray:
    """Class probabilities, one row per batch node."""
    if len(batch) == 0:
        return np.zeros((0, model.dims["n_classes"]))
    return _forward(model, features, table, batch)["probs"]


def attention(model: GnnModel, features: FeatureMatrix, table: NeighborTable,
              batch: Sequence[int]) -> list[np.ndarray]:
    """Attention weights over each node's neighbor list (for inspection)."""
    cache = _forward(model, features, table, batch)
    return [cache["alpha"][b, cache["mask"][b]] for b in range(len(batch))]


def loss_and_grad(model: GnnModel, features: FeatureMatrix, table: NeighborTable,
                  batch: Sequence[int], labels: Sequence[int]) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and exact gradients for every parameter."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if len(labels) != len(batch):
        raise ValueError("labels and batch differ in length")
    p = model.params
    _, dact = _ACTIVATIONS[model.activation]
    _, dagg_act = _ACTIVATIONS[model.aggregate_activation]
    f = _forward(model, features, table, batch)
    B = len(batch)
    y = np.asarray(labels, dtype=np.int64)
    n_classes = p["Wc"].shape[1]
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("label index out of range")
    probs = f["probs"]
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(B), y], 1e-300))))

    g: dict[str, np.ndarray] = {}
    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    g["Wc"] = f["z"].T @ dlogits
    g["bc"] = dlogits.sum(axis=0)
    dagg = (dlogits @ p["Wc"].T) * dagg_act(f["agg"])

    Hn, c, alpha = f["Hn"], f["c"], f["alpha"]
    dc = np.einsum("bh,bkh->bk", dagg, Hn)
    dHn = c[..., None] * dagg[:, None, :]
    ds = dc * f["Pm"] * alpha * (1.0 - alpha)
    dQ = np.einsum("bk,bkh->bh", ds, f["Kn"])
    dKn = ds[..., None] * f["Q"][:, None, :]
    g["Wq"] = f["hi"].T @ dQ
    g["Wk"] = np.einsum("bkh,bkg->hg", Hn, dKn)
    dhi = dQ @ p["Wq"].T
    dHn = dHn + dKn @ p["Wk"].T

    dH = np.zeros_like(f["H"])
    np.add.at(dH, f["pos_self"], dhi)
    mask = f["mask"]
    np.add.at(dH, f["pos_nbr"][mask], dHn[mask])

    dA2 = dH * dact(f["A2"])
    g["W2"] = f["H1"].T @ dA2
    g["b2"] = dA2.sum(axis=0)
    dA1 = (dA2 @ p["W2"].T) * dact(f["A1"])
    g["W1"] = f["X"].T @ dA1
    g["b1"] = dA1.sum(axis=0)
    return loss, g


@dataclass(frozen=True)
class GnnTrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-2
    rng_seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


class Adam:
    """Adam update state for a dict of parameter arrays."""

    def __init__(self, params: Mapping[str, np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        if self.lr == 0:
            return
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, gk in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * gk
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * gk * gk
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train_gnn(model: GnnModel, features: FeatureMatrix, table: NeighborTable,
              train: Mapping[int, int], config: GnnTrainConfig = GnnTrainConfig()) -> GnnModel:
    """Mini-batch Adam on cross-entropy; returns a trained copy of ``model``."""
    if not train:
        raise ValueError("empty training set")
    model = model.copy()
    nodes = np.array(sorted(train), dtype=np.int64)
    labels = np.array([train[n] for n in nodes], dtype=np.int64)
    rng = np.random.default_rng(config.rng_seed)
    opt = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    for epoch in range(config.epochs):
        order = rng.permutation(len(nodes))
        for start in range(0, len(order), config.batch_size):
            sel = order[start:start + config.batch_size]
            loss, grads = loss_and_grad(model, features, table, nodes[sel], labels[sel])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite GNN loss at epoch {epoch}; "
                    f"try a learning rate below {config.learning_rate:g}"
                )
            opt.step(model.params, grads)
    return model


def predict_gnn(model: GnnModel, features: FeatureMatrix, table: NeighborTable,
                nodes: Sequence[int], batch_size: int = 256) -> dict[int, tuple[int, np.ndarray]]:
    """node -> (argmax class index, probability vector)."""
    out = {}
    nodes = list(nodes)
    for start in range(0, len(nodes), batch_size):
        chunk = nodes[start:start + batch_size]
        probs = forward(model, features, table, chunk)
        for n, row in zip(chunk, probs):
            out[int(n)] = (int(np.argmax(row)), row)
    return out


def save_gnn(model: GnnModel, path: str | os.PathLike) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "dims": model.dims,
        "activation": model.activation,
        "aggregate_activation": model.aggregate_activation,
        "renormalize_scores": model.renormalize_scores,
    }
    with open(path, "wb") as f:
        np.savez(f, header=np.array(json.dumps(header)), **model.params)


def load_gnn(path: str | os.PathLike) -> GnnModel:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported GNN checkpoint version {header.get('version')}")
        params = {k: data[k].copy() for k in PARAM_NAMES}
    model = GnnModel(params, header["activation"], header["aggregate_activation"],
                     header["renormalize_scores"])
    if model.dims != header["dims"]:
        raise ValueError("checkpoint dims header does not match tensors")
    return model


__all__ = [
    "FeatureMatrix", "GnnModel", "GnnTrainConfig", "TrainingError", "Adam", "init_model",
    "forward", "attention", "loss_and_grad", "train_gnn", "predict_gnn", "save_gnn",
    "load_gnn",
]
