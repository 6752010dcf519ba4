"""Fully connected networks evaluated through ``DiffValue`` channels."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue

__all__ = ["MLP", "init_params", "forward"]

ACTIVATIONS = ("tanh", "sin")
HEADS = ("linear", "softplus")


@dataclass
class MLP:
    """Weights, biases and the affine input normalization of one network.

    Inputs are mapped to ``2 (x - lo) / (hi - lo) - 1`` before the first
    layer; the time-derivative channels pick up the matching factor.
    """

    layer_sizes: tuple
    weights: list
    biases: list
    activation: str = "tanh"
    head: str = "linear"
    input_lo: np.ndarray = field(default=None)
    input_hi: np.ndarray = field(default=None)

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        n_in = self.layer_sizes[0]
        if self.input_lo is None:
            self.input_lo = -np.ones(n_in)
        if self.input_hi is None:
            self.input_hi = np.ones(n_in)
        self.input_lo = np.asarray(self.input_lo, dtype=float)
        self.input_hi = np.asarray(self.input_hi, dtype=float)
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if self.activation not in ACTIVATIONS or self.head not in HEADS:
            raise ValueError(f"unsupported activation/head {self.activation!r}/{self.head!r}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias per layer required")
        for w, b, n_i, n_o in zip(self.weights, self.biases, self.layer_sizes, self.layer_sizes[1:]):
            if w.shape != (n_i, n_o) or b.shape != (n_o,):
                raise ValueError(f"layer shapes {w.shape}/{b.shape} do not chain to ({n_i}, {n_o})")
        if not all(np.all(np.isfinite(a)) for a in self.weights + self.biases):
            raise ValueError("non-finite network parameter")
        if self.input_lo.shape != (n_in,) or np.any(self.input_hi <= self.input_lo):
            raise ValueError("normalization bounds must satisfy lo < hi per input")

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list:
        """Flat parameter list ``[W1, b1, W2, b2, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params: Sequence) -> "MLP":
        return MLP(self.layer_sizes, list(params[0::2]), list(params[1::2]), self.activation,
                   self.head, self.input_lo, self.input_hi)

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "head": self.head,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_lo": self.input_lo.tolist(),
            "input_hi": self.input_hi.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        sizes = d["layer_sizes"]
        weights = [np.array(w, dtype=float).reshape(n_i, n_o)
                   for w, n_i, n_o in zip(d["weights"], sizes, sizes[1:])]
        return cls(sizes, weights, d["biases"], d.get("activation", "tanh"),
                   d.get("head", "linear"), d.get("input_lo"), d.get("input_hi"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MLP":
        return cls.from_dict(json.loads(text))


def init_params(layer_sizes: Sequence[int], seed: int, activation: str = "tanh",
                head: str = "linear", input_lo=None, input_hi=None) -> MLP:
    """Xavier-uniform weights and zero biases, fully determined by ``seed``."""
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {layer_sizes!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes, sizes[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MLP(tuple(sizes), weights, biases, activation, head, input_lo, input_hi)


def _activate(x: DiffValue, name: str) -> DiffValue:
    return ad.tanh(x) if name == "tanh" else ad.sin(x)


def forward(net: MLP, inputs: Sequence[DiffValue], params: Sequence | None = None) -> DiffValue:
    """Evaluate ``net`` on a batch, propagating time-derivative channels.

    ``inputs`` holds one ``DiffValue`` per input coordinate (data, not tape
    variables). ``params`` overrides the stored parameters, typically with
    tape variables when gradients are needed. Returns a ``DiffValue`` whose
    channels have shape ``[batch, n_out]``.
    """
    if len(inputs) != net.layer_sizes[0]:
        raise ValueError(f"network expects {net.layer_sizes[0]} inputs, got {len(inputs)}")
    params = net.params() if params is None else list(params)
    half_width = 0.5 * (net.input_hi - net.input_lo)
    centre = 0.5 * (net.input_hi + net.input_lo)
    cols = [[], [], []]
    for k, x in enumerate(inputs):
        v, d1, d2 = x.value, x.d_dt, x.d2_dt2
        cols[0].append((np.asarray(v, dtype=float) - centre[k]) / half_width[k])
        cols[1].append(d1 if ad._is_zero(d1) else np.asarray(d1, dtype=float) / half_width[k])
        cols[2].append(d2 if ad._is_zero(d2) else np.asarray(d2, dtype=float) / half_width[k])
    value = np.column_stack([np.atleast_1d(c) for c in cols[0]])
    n = value.shape[0]
    h = DiffValue(value, _stack_like(cols[1], n), _stack_like(cols[2], n))

    n_layers = len(params) // 2
    for layer in range(n_layers):
        h = ad.linear(h, params[2 * layer], params[2 * layer + 1])
        if layer < n_layers - 1:
            h = _activate(h, net.activation)
    if net.head == "softplus":
        h = ad.softplus(h)
    return h


def _stack_like(columns, n):
    if all(ad._is_zero(c) for c in columns):
        return 0.0
    return np.column_stack([np.broadcast_to(np.asarray(c, dtype=float), (n,)) for c in columns])
