"""Shallow tanh networks: parameters, initialization, forward passes, JSON I/O.

Weights are stored as ``(fan_in, fan_out)`` matrices and applied to row
vectors, ``h @ W + b``. Hidden layers use tanh; the output layer is linear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import jax.numpy as jnp
import numpy as np

from zenn import _ops
from zenn import autodiff as ad


class SpecError(ValueError):
    """Invalid network shape or a dimension mismatch."""


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        dims = (self.input_dim, *self.hidden_widths, self.output_dim)
        if any(int(d) != d or d <= 0 for d in dims):
            raise SpecError(f"all layer dimensions must be positive integers, got {dims}")
        if self.activation != "tanh":
            raise SpecError(f"unsupported activation {self.activation!r}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    @property
    def n_params(self) -> int:
        s = self.sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    @property
    def n_hidden_neurons(self) -> int:
        return sum(self.hidden_widths)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "output_dim": self.output_dim,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(d["input_dim"], tuple(d["hidden_widths"]), d.get("output_dim", 1), d.get("activation", "tanh"))


@dataclass(frozen=True, eq=False)
class NetworkParams:
    spec: LayerSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    seed: int | None = None

    def __post_init__(self):
        s = self.spec.sizes
        if len(self.weights) != len(s) - 1 or len(self.biases) != len(s) - 1:
            raise SpecError("layer count does not match spec")
        for W, b, a, c in zip(self.weights, self.biases, s[:-1], s[1:]):
            if np.shape(W) != (a, c) or np.shape(b) != (c,):
                raise SpecError(f"expected W{(a, c)} and b{(c,)}, got {np.shape(W)} and {np.shape(b)}")

    @property
    def layers(self):
        return list(zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in self.layers])

    def to_tree(self):
        return [(jnp.asarray(W), jnp.asarray(b)) for W, b in self.layers]

    def from_tree(self, tree) -> "NetworkParams":
        return NetworkParams(
            self.spec,
            tuple(np.asarray(W, dtype=float) for W, _ in tree),
            tuple(np.asarray(b, dtype=float) for _, b in tree),
            self.seed,
        )

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "seed": self.seed,
            "layers": [{"w": np.asarray(W).tolist(), "b": np.asarray(b).tolist()} for W, b in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkParams":
        spec = LayerSpec.from_dict(d["spec"])
        ws = tuple(np.asarray(layer["w"], dtype=float).reshape(a, c) for layer, a, c in zip(d["layers"], spec.sizes[:-1], spec.sizes[1:]))
        bs = tuple(np.asarray(layer["b"], dtype=float) for layer in d["layers"])
        return cls(spec, ws, bs, d.get("seed"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "NetworkParams":
        return cls.from_dict(json.loads(text))

    def equals(self, other: "NetworkParams") -> bool:
        return (
            self.spec == other.spec
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


def init_params(spec: LayerSpec, seed: int) -> NetworkParams:
    """Glorot-uniform weights, zero biases; a pure function of ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for a, c in zip(spec.sizes[:-1], spec.sizes[1:]):
        lim = np.sqrt(6.0 / (a + c))
        ws.append(rng.uniform(-lim, lim, size=(a, c)))
        bs.append(np.zeros(c))
    return NetworkParams(spec, tuple(ws), tuple(bs), int(seed))


def baseline_dnn(spec: LayerSpec, seed: int) -> NetworkParams:
    """Plain deep network used as the comparison model; any depth is allowed."""
    return init_params(spec, seed)


CLASSIFY_BASELINE = LayerSpec(1, (8,) * 6, 3)
LANDSCAPE_BASELINE = LayerSpec(2, (48,) * 4, 1)


def forward(params: NetworkParams, inputs: Sequence, param_prefix: str | None = None):
    """Build the network output as an :class:`~zenn.autodiff.Expr`.

    ``inputs`` may mix floats and expressions. When ``param_prefix`` is given
    every weight and bias becomes a variable named ``{prefix}.{layer}.w.{i}.{j}``
    / ``{prefix}.{layer}.b.{j}`` so derivatives with respect to parameters can
    be taken; :func:`param_bindings` produces the matching values.
    Returns a single expression for scalar-output networks, else a list.
    """
    if len(inputs) != params.spec.input_dim:
        raise SpecError(f"expected {params.spec.input_dim} inputs, got {len(inputs)}")
    h = [ad.as_expr(v) for v in inputs]
    n_layers = len(params.weights)
    for li, (W, b) in enumerate(params.layers):
        out = []
        for j in range(W.shape[1]):
            if param_prefix is None:
                acc = ad.Const(b[j])
                terms = [h[i] * float(W[i, j]) for i in range(W.shape[0])]
            else:
                acc = ad.Var(f"{param_prefix}.{li}.b.{j}")
                terms = [h[i] * ad.Var(f"{param_prefix}.{li}.w.{i}.{j}") for i in range(W.shape[0])]
            for t in terms:
                acc = acc + t
            out.append(ad.tanh(acc) if li < n_layers - 1 else acc)
        h = out
    return h[0] if len(h) == 1 else h


def param_bindings(params: NetworkParams, prefix: str) -> dict[str, float]:
    out = {}
    for li, (W, b) in enumerate(params.layers):
        for j in range(W.shape[1]):
            out[f"{prefix}.{li}.b.{j}"] = float(b[j])
            for i in range(W.shape[0]):
                out[f"{prefix}.{li}.w.{i}.{j}"] = float(W[i, j])
    return out


def apply(tree, X):
    """Vectorized forward pass: ``X`` of shape (N, input_dim) -> (N, output_dim)."""
    h = X
    for W, b in tree[:-1]:
        h = _ops.tanh(h @ W + b)
    W, b = tree[-1]
    return h @ W + b


def stack(nets: Sequence[NetworkParams]):
    """Stack same-shaped scalar networks into ``[(W[n,a,c], b[n,1,c]), ...]``."""
    specs = {n.spec for n in nets}
    if len(specs) != 1:
        raise SpecError("stacked networks must share one LayerSpec")
    return [
        (jnp.asarray(np.stack([n.weights[i] for n in nets])), jnp.asarray(np.stack([n.biases[i][None, :] for n in nets])))
        for i in range(len(nets[0].weights))
    ]


def unstack(tree, templates: Sequence[NetworkParams]) -> tuple[NetworkParams, ...]:
    out = []
    for k, t in enumerate(templates):
        out.append(
            NetworkParams(
                t.spec,
                tuple(np.asarray(W[k], dtype=float) for W, _ in tree),
                tuple(np.asarray(b[k, 0], dtype=float) for _, b in tree),
                t.seed,
            )
        )
    return tuple(out)


def apply_stacked(tree, X):
    """Evaluate ``n`` stacked scalar networks on shared inputs; returns (n, N)."""
    h = X[None]
    for W, b in tree[:-1]:
        h = _ops.tanh(h @ W + b)
    W, b = tree[-1]
    return (h @ W + b)[..., 0]


def lipschitz_bound(params: NetworkParams) -> float:
    """Product of spectral norms; tanh is 1-Lipschitz."""
    return float(np.prod([np.linalg.norm(W, 2) for W in params.weights]))
