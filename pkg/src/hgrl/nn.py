"""Tiny float64 neural-network kit with hand-written backprop.

Only the architectures used by the managers are supported: dense stacks and
mean-aggregation message-passing layers. Every ``forward`` returns
``(output, cache)``; the matching ``backward(cache, grad_out)`` returns
``(grad_input, param_grads)`` where ``param_grads`` lines up with
``params()``. Leading batch dimensions broadcast throughout.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class NumericalError(FloatingPointError):
    """NaN or Inf showed up in parameters, activations or losses."""


def check_finite(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite values in {name}")


def he_uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _affine(x: np.ndarray, W: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    # flatten leading dims so the product goes through a single BLAS gemm
    out = x.reshape(-1, x.shape[-1]) @ W.T
    if b is not None:
        out += b
    return out.reshape(*x.shape[:-1], W.shape[0])


class Module:
    """Parameter bookkeeping shared by leaf layers and composite networks."""

    param_names: tuple[str, ...] = ()

    def leaves(self) -> list[Module]:
        return [self]

    def params(self) -> list[np.ndarray]:
        return [getattr(leaf, name) for leaf in self.leaves() for name in leaf.param_names]

    def param_labels(self) -> list[str]:
        return [
            f"{i}.{type(leaf).__name__}.{name}"
            for i, leaf in enumerate(self.leaves())
            for name in leaf.param_names
        ]

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params()))

    def load_params(self, arrays) -> None:
        """Copy values in place so external references stay valid."""
        own = self.params()
        if len(own) != len(arrays):
            raise ValueError(f"expected {len(own)} arrays, got {len(arrays)}")
        for dst, src in zip(own, arrays):
            src = np.asarray(src, dtype=np.float64)
            if dst.shape != src.shape:
                raise ValueError(f"shape mismatch {dst.shape} vs {src.shape}")
            dst[...] = src

    def copy_from(self, other: Module) -> None:
        self.load_params(other.params())

    def clone(self) -> Module:
        return copy.deepcopy(self)


class Dense(Module):
    """``activation(x @ W.T + b)`` with ``W`` shaped (out, in)."""

    param_names = ("W", "b")

    def __init__(self, n_in: int, n_out: int, activation: str = "relu", rng: np.random.Generator | None = None):
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        self.W = he_uniform(rng, n_in, (n_out, n_in))
        self.b = np.zeros(n_out)

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"Dense expects last dim {self.n_in}, got {x.shape[-1]}")
        out = _affine(x, self.W, self.b)
        if self.activation == "relu":
            np.maximum(out, 0.0, out=out)
        # relu(pre) > 0 exactly where pre > 0, so the output doubles as the mask
        return out, (x, out)

    def backward(self, cache, dy: np.ndarray, need_input_grad: bool = True):
        x, out = cache
        dpre = dy * (out > 0) if self.activation == "relu" else dy
        d2 = dpre.reshape(-1, self.n_out)
        dW = d2.T @ x.reshape(-1, self.n_in)
        db = d2.sum(axis=0)
        dx = (d2 @ self.W).reshape(*dpre.shape[:-1], self.n_in) if need_input_grad else None
        return dx, [dW, db]


def mean_aggregator(adj: np.ndarray) -> np.ndarray:
    """Row-normalised adjacency; rows of isolated nodes are all zero."""
    a = adj.astype(np.float64)
    deg = a.sum(axis=-1, keepdims=True)
    return a / np.maximum(deg, 1.0)


class GnnLayer(Module):
    """GraphSAGE-mean update: ``relu(h W_self^T + mean_nbrs(h) W_neigh^T + b)``."""

    param_names = ("W_self", "W_neigh", "b")

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        self.W_self = he_uniform(rng, n_in, (n_out, n_in))
        self.W_neigh = he_uniform(rng, n_in, (n_out, n_in))
        self.b = np.zeros(n_out)

    def forward(self, h: np.ndarray, agg: np.ndarray, rows: np.ndarray | None = None):
        """``h`` is (..., n, in); ``agg`` is the (..., n, n) mean operator.

        With ``rows`` (batch, k) of node indices, only those nodes' outputs are
        computed, shape (batch, k, out); ``h`` and ``agg`` must then be batched.
        """
        if h.shape[-1] != self.n_in:
            raise ValueError(f"GnnLayer expects feature dim {self.n_in}, got {h.shape[-1]}")
        if agg.shape[-1] != h.shape[-2]:
            raise ValueError("aggregator and feature matrix disagree on node count")
        h_all = h
        if rows is not None:
            batch = np.arange(h.shape[0])[:, None]
            h, agg = h[batch, rows], agg[batch, rows]
        nb = agg @ h_all
        out = _affine(h, self.W_self, self.b)
        out += _affine(nb, self.W_neigh)
        np.maximum(out, 0.0, out=out)
        return out, (h, nb, agg, out, rows, h_all.shape)

    def backward(self, cache, dy: np.ndarray, need_input_grad: bool = True):
        h, nb, agg, out, rows, in_shape = cache
        dpre = dy * (out > 0)
        d2 = dpre.reshape(-1, self.n_out)
        dW_self = d2.T @ h.reshape(-1, self.n_in)
        dW_neigh = d2.T @ nb.reshape(-1, self.n_in)
        db = d2.sum(axis=0)
        dh = None
        if need_input_grad:
            shape = (*dpre.shape[:-1], self.n_in)
            d_self = (d2 @ self.W_self).reshape(shape)
            # mean aggregation fans each node's features out to its neighbours
            d_neigh = np.swapaxes(agg, -1, -2) @ (d2 @ self.W_neigh).reshape(shape)
            if rows is None:
                dh = d_self + d_neigh
            else:
                dh = d_neigh
                batch = np.arange(in_shape[0])
                for j in range(rows.shape[1]):
                    dh[batch, rows[:, j]] += d_self[:, j]
        return dh, [dW_self, dW_neigh, db]


class Sequential(Module):
    def __init__(self, layers: list[Dense]):
        self.layers = list(layers)

    def leaves(self):
        return list(self.layers)

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, caches, dy, need_input_grad: bool = True):
        grads: list[list[np.ndarray]] = []
        for i in range(len(self.layers) - 1, -1, -1):
            need = need_input_grad or i > 0
            dy, g = self.layers[i].backward(caches[i], dy, need_input_grad=need)
            grads.append(g)
        return dy, [g for gs in reversed(grads) for g in gs]


def mlp(sizes: list[int], rng: np.random.Generator, out_activation: str = "identity") -> Sequential:
    layers = []
    for i in range(len(sizes) - 1):
        act = out_activation if i == len(sizes) - 2 else "relu"
        layers.append(Dense(sizes[i], sizes[i + 1], act, rng))
    return Sequential(layers)


class GnnEncoder(Module):
    def __init__(self, dims: list[int], rng: np.random.Generator | None = None):
        """``dims=[4, 64, 64]`` builds a two-layer encoder."""
        if len(dims) < 2:
            raise ValueError("encoder needs at least one layer")
        self.layers = [GnnLayer(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]

    def leaves(self):
        return list(self.layers)

    def forward(self, x: np.ndarray, agg: np.ndarray, rows: np.ndarray | None = None):
        """``rows`` restricts the last layer to the given nodes (see :meth:`GnnLayer.forward`)."""
        caches = []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x, c = layer.forward(x, agg, rows if i == last else None)
            caches.append(c)
        return x, caches

    def backward(self, caches, dh, need_input_grad: bool = False):
        grads = []
        for i in range(len(self.layers) - 1, -1, -1):
            need = need_input_grad or i > 0
            dh, g = self.layers[i].backward(caches[i], dh, need_input_grad=need)
            grads.append(g)
        return dh, [g for gs in reversed(grads) for g in gs]


def encode_graph(encoder: GnnEncoder, features: np.ndarray, adj: np.ndarray) -> np.ndarray:
    return encoder.forward(features, mean_aggregator(adj))[0]


def readout_concat(embeddings: np.ndarray) -> np.ndarray:
    """Concatenate per-node vectors in node-index order: (..., n, d) -> (..., n*d)."""
    return embeddings.reshape(*embeddings.shape[:-2], -1)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def clone(self) -> AdamState:
        return copy.deepcopy(self)


def adam_update(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """Bias-corrected Adam step, applied in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def save_checkpoint(path, module: Module, meta: dict | None = None) -> None:
    """JSON checkpoint; Python's float repr round-trips float64 exactly."""
    record = {
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": [
            {"name": name, "shape": list(p.shape), "values": p.ravel().tolist()}
            for name, p in zip(module.param_labels(), module.params())
        ],
    }
    Path(path).write_text(json.dumps(record, sort_keys=True))


def read_checkpoint(path) -> dict:
    record = json.loads(Path(path).read_text())
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {record.get('version')!r}")
    return record


def load_checkpoint(path, module: Module) -> dict:
    """Fill ``module`` from ``path`` and return the stored metadata."""
    record = read_checkpoint(path)
    entries = record["params"]
    labels = module.param_labels()
    shapes = [list(p.shape) for p in module.params()]
    if [e["name"] for e in entries] != labels or [e["shape"] for e in entries] != shapes:
        raise ValueError("checkpoint layout does not match the model architecture")
    module.load_params([np.array(e["values"], dtype=np.float64).reshape(e["shape"]) for e in entries])
    return record["meta"]
