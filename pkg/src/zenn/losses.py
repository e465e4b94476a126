"""Training objectives: cross-entropy, cross-zentropy, KL/JS divergences, convexity penalty.

Public functions take validated containers and return floats. The ``*_objective``
builders return closures ``loss(tree)`` over a parameter pytree for
:func:`zenn.train.train`; they share the same jax kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from zenn import _ops
from zenn.netcore import apply
from zenn.zentropy import EnsembleModel, config_terms, ensemble_terms

DENSITY_TOL = 1e-8
ROW_TOL = 1e-6
LOG_FLOOR = 1e-300
HIST_SMOOTHING = 1e-12
DEFAULT_CONVEXITY_WEIGHT = 1e-4


class GridMismatchError(ValueError):
    pass


class DivergenceError(ValueError):
    """KL divergence is infinite: the reference vanishes where P does not."""


# ---------------------------------------------------------------------------
# containers


def trapezoid_weights(axes: Sequence[np.ndarray]) -> np.ndarray:
    """Tensor-product trapezoid weights on a (possibly non-uniform) grid."""
    ws = []
    for a in axes:
        a = np.asarray(a, dtype=float)
        if a.size < 2:
            raise ValueError("each axis needs at least two points")
        d = np.diff(a)
        w = np.zeros_like(a)
        w[:-1] += d / 2
        w[1:] += d / 2
        ws.append(w)
    out = ws[0]
    for w in ws[1:]:
        out = np.multiply.outer(out, w)
    return out


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Normalized density on a grid: ``sum(values * weights) == 1``."""

    axes: tuple
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        values = np.asarray(self.values, dtype=float)
        weights = np.broadcast_to(np.asarray(self.weights, dtype=float), values.shape)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)
        if values.shape != tuple(a.size for a in axes):
            raise ValueError(f"values shape {values.shape} does not match axes")
        if any(np.any(np.diff(a) <= 0) for a in axes):
            raise ValueError("grid axes must be strictly increasing")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite and nonnegative")
        mass = float(np.sum(values * weights))
        if abs(mass - 1.0) > DENSITY_TOL:
            raise ValueError(f"density integrates to {mass!r}, not 1")

    @classmethod
    def from_cells(cls, values, cell_measure: float = 1.0) -> "GridDensity":
        """Density on unit-indexed cells of equal measure (rectangle rule)."""
        values = np.asarray(values, dtype=float)
        axes = tuple(np.arange(n, dtype=float) for n in values.shape)
        return cls(axes, values, np.full(values.shape, float(cell_measure)))

    @classmethod
    def normalize(cls, axes, unnormalized, weights=None) -> "GridDensity":
        u = np.asarray(unnormalized, dtype=float)
        w = trapezoid_weights(axes) if weights is None else np.broadcast_to(weights, u.shape)
        return cls(tuple(axes), u / np.sum(u * w), w)

    @property
    def cell_measure(self) -> float:
        return float(np.prod([np.mean(np.diff(a)) if a.size > 1 else 1.0 for a in self.axes]))


def _same_grid(a: GridDensity, b: GridDensity):
    if len(a.axes) != len(b.axes) or any(not np.array_equal(x, y) for x, y in zip(a.axes, b.axes)):
        raise GridMismatchError("densities live on different grids")
    if not np.array_equal(a.weights, b.weights):
        raise GridMismatchError("densities use different quadrature weights")


def histogram_density(samples, axes, smoothing: float = HIST_SMOOTHING) -> GridDensity:
    """Bin raw samples onto grid nodes, add ``smoothing`` everywhere, normalize.

    Nodes are bin centres; bin edges are midpoints between nodes.
    """
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    samples = np.asarray(samples, dtype=float).reshape(-1, len(axes))
    edges = []
    for a in axes:
        mid = (a[1:] + a[:-1]) / 2
        edges.append(np.concatenate([[a[0] - (mid[0] - a[0])], mid, [a[-1] + (a[-1] - mid[-1])]]))
    counts, _ = np.histogramdd(samples, bins=edges)
    return GridDensity.normalize(axes, counts + smoothing)


@dataclass(frozen=True, eq=False)
class LabeledSet:
    """Samples ``(T_j, y_j)`` with one-hot labels ``y_j``."""

    T: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.T, dtype=float).reshape(-1)
        Y = np.asarray(self.Y, dtype=float)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "Y", Y)
        if T.size < 1 or Y.ndim != 2 or Y.shape[0] != T.size:
            raise ValueError("need M >= 1 samples with an (M, K) label matrix")
        if not (np.all((Y == 0) | (Y == 1)) and np.all(Y.sum(axis=1) == 1)):
            raise ValueError("labels must be one-hot")

    @property
    def M(self) -> int:
        return self.T.size

    @property
    def K(self) -> int:
        return self.Y.shape[1]

    def aggregate(self):
        """Unique temperatures and per-class counts at each."""
        Tu, inv = np.unique(self.T, return_inverse=True)
        counts = np.zeros((Tu.size, self.K))
        np.add.at(counts, inv, self.Y)
        return Tu, counts

    def subset(self, mask) -> "LabeledSet":
        return LabeledSet(self.T[mask], self.Y[mask])


@dataclass(frozen=True, eq=False)
class SlicedDensity:
    """Target densities P(x | T) on a shared spatial grid, one slice per temperature.

    ``P`` has shape (n_T, n_points) over the flattened grid ``points``
    (n_points, n_x); ``weights`` are the flattened quadrature weights.
    """

    axes: tuple
    T: np.ndarray
    P: np.ndarray
    weights: np.ndarray

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def n_x(self) -> int:
        return len(self.axes)

    @classmethod
    def from_energy(cls, axes, T, F, k_B: float = 1.0) -> "SlicedDensity":
        """Boltzmann densities ``exp(-F / (k_B T))`` of sampled energies ``F`` (n_T, *grid)."""
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        T = np.asarray(T, dtype=float)
        F = np.asarray(F, dtype=float).reshape(T.size, -1)
        if not np.all(np.isfinite(F)):
            raise ValueError("non-finite energies on the grid")
        w = trapezoid_weights(axes).ravel()
        return cls(axes, T, np.asarray(_boltzmann(F, T, k_B, w)), w)

    def slice(self, i: int) -> GridDensity:
        shape = tuple(a.size for a in self.axes)
        return GridDensity(self.axes, self.P[i].reshape(shape), self.weights.reshape(shape))


# ---------------------------------------------------------------------------
# kernels (numpy or jax arrays)


def _boltzmann(F, T, k_B, w):
    a = -F / (k_B * jnp.asarray(T)[:, None])
    a = a - jax.lax.stop_gradient(jnp.max(a, axis=1, keepdims=True))
    q = jnp.exp(a)
    return q / jnp.sum(q * w, axis=1, keepdims=True)


def _kl_kernel(P, M, w):
    safe_P = jnp.where(P > 0, P, 1.0)
    safe_M = jnp.where(M > 0, M, 1.0)
    return jnp.sum(w * jnp.where(P > 0, P * jnp.log(safe_P) - P * jnp.log(safe_M), 0.0), axis=-1)


def _js_kernel(P, Q, w):
    M = (P + Q) / 2
    return 0.5 * _kl_kernel(P, M, w) + 0.5 * _kl_kernel(Q, M, w)


def _cz_kernel(counts, E, S, T, k_B, gamma):
    """Summed cross-zentropy over aggregated samples: the Eq.-6 bracket per class."""
    T = T[:, None]
    b = (E - T * S) / (k_B * T) + (S / (gamma * k_B)) ** 2
    logZ = _ops.logsumexp(-b, axis=-1)
    return jnp.sum(counts * (b + logZ[:, None]))


# ---------------------------------------------------------------------------
# public losses


def cross_entropy(labels, probs) -> float:
    """Mean of ``<y_j, -ln p_j>``; the log argument is floored at 1e-300."""
    Y = labels.Y if isinstance(labels, LabeledSet) else np.asarray(labels, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if probs.shape != Y.shape:
        raise ValueError("label and probability shapes differ")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > ROW_TOL):
        raise ValueError("probability rows must sum to 1")
    return float(np.mean(np.sum(Y * -np.log(np.maximum(probs, LOG_FLOOR)), axis=1)))


def cross_zentropy(labels: LabeledSet, model: EnsembleModel) -> float:
    """Cross-zentropy of a temperature-only classifier ensemble."""
    if model.n_x != 0:
        raise ValueError("classification ensembles take T as their only input")
    if model.K != labels.K:
        raise ValueError("one configuration per class is required")
    if np.any(labels.T <= 0):
        raise ValueError("temperatures must be positive")
    Tu, counts = labels.aggregate()
    Tj = jnp.asarray(Tu)
    E, S = config_terms(model.to_tree(), jnp.zeros((Tu.size, 0)), Tj)
    return float(_cz_kernel(jnp.asarray(counts), E, S, Tj, model.k_B, model.gamma)) / labels.M


def kl_divergence(P: GridDensity, M: GridDensity) -> float:
    _same_grid(P, M)
    if np.any((P.values > 0) & (M.values <= 0)):
        raise DivergenceError("reference density vanishes on the support of P")
    return float(_kl_kernel(P.values.ravel(), M.values.ravel(), P.weights.ravel()))


def js_divergence(P: GridDensity, Q: GridDensity) -> float:
    _same_grid(P, Q)
    return float(_js_kernel(P.values.ravel(), Q.values.ravel(), P.weights.ravel()))


def model_density(model: EnsembleModel, axes, T: float) -> GridDensity:
    """Grid-normalized ``exp(-F_total / (k_B T))`` of the ensemble at temperature ``T``."""
    if T <= 0:
        raise ValueError("temperature must be positive")
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=1)
    F = ensemble_terms(model.to_tree(), jnp.asarray(X), jnp.full(X.shape[0], float(T)), model.k_B, model.gamma)["F_total"]
    return density_from_energy(axes, np.asarray(F).reshape(mesh[0].shape), T, model.k_B)


def density_from_energy(axes, F, T: float, k_B: float = 1.0) -> GridDensity:
    F = np.asarray(F, dtype=float)
    if not np.all(np.isfinite(F)):
        raise ValueError("non-finite energies on the grid")
    w = trapezoid_weights(axes)
    q = np.asarray(_boltzmann(F.reshape(1, -1), np.array([T]), k_B, w.reshape(1, -1)))
    return GridDensity(tuple(axes), q.reshape(F.shape), w)


def config_curvature(f_cfg: Callable, V, T):
    """Second derivative along the first input of a vector-valued ``f_cfg(V, T)``, per point."""

    def one(v, t):
        d1 = lambda u: jax.jvp(lambda s: f_cfg(s, t), (u,), (jnp.ones_like(u),))[1]
        return jax.jvp(d1, (v,), (jnp.ones_like(v),))[1]

    return jax.vmap(one)(jnp.asarray(V, dtype=float), jnp.asarray(T, dtype=float))


def _stacked_cfg_fn(tree, n_x):
    def f(v, t):
        x = jnp.reshape(v, (1, 1)) if n_x == 1 else jnp.zeros((1, 0))
        E, S = config_terms(tree, x, jnp.reshape(t, (1,)))
        return (E - t * S)[0]

    return f


def convexity_penalty(model, v_grid, T: float, lam: float = DEFAULT_CONVEXITY_WEIGHT) -> float:
    """``lam * sum_k trapz(ReLU(-d2 F_k / dV2), V)`` on ``v_grid`` at temperature ``T``.

    ``model`` is an :class:`EnsembleModel` over a single coordinate V, or any
    jax-traceable ``f(V, T) -> (K,)`` returning configuration energies.
    """
    v = np.asarray(v_grid, dtype=float)
    if v.size < 3:
        raise ValueError("convexity integral needs at least 3 grid points")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if isinstance(model, EnsembleModel):
        if model.n_x != 1:
            raise ValueError("convexity penalty is defined for single-coordinate ensembles")
        f = _stacked_cfg_fn(model.to_tree(), 1)
    else:
        f = lambda V, t: jnp.atleast_1d(model(V, t))
    d2 = config_curvature(f, v, np.full(v.size, float(T)))
    w = trapezoid_weights((v,))
    return float(lam * jnp.sum(w[:, None] * _ops.relu0(-d2)))


# ---------------------------------------------------------------------------
# objective builders


def cz_objective(labels: LabeledSet, k_B: float, gamma: float):
    Tu, counts = labels.aggregate()
    Tj, C, M = jnp.asarray(Tu), jnp.asarray(counts), float(labels.M)
    X0 = jnp.zeros((Tu.size, 0))

    def loss(tree):
        E, S = config_terms(tree, X0, Tj)
        return _cz_kernel(C, E, S, Tj, k_B, gamma) / M

    return loss


def dnn_cz_objective(labels: LabeledSet, k_B: float, gamma: float = 5.0):
    """Same loss with ``S = 0``: a softmax over ``-E / (k_B T)`` from a multi-output network."""
    Tu, counts = labels.aggregate()
    Tj, C, M = jnp.asarray(Tu), jnp.asarray(counts), float(labels.M)

    def loss(tree):
        E = apply(tree, Tj[:, None])
        return _cz_kernel(C, E, jnp.zeros_like(E), Tj, k_B, gamma) / M

    return loss


def _slice_inputs(data: SlicedDensity):
    pts = data.points
    n_T, n_p = data.P.shape
    X = jnp.asarray(np.tile(pts, (n_T, 1)))
    Tf = jnp.asarray(np.repeat(data.T, n_p))
    return X, Tf, n_T, n_p


def js_objective(data: SlicedDensity, k_B: float, gamma: float, lam: float = 0.0, curvature_stride: int = 1):
    """Mean over temperature slices of JS(P_T, Q_T), plus the optional convexity term.

    The convexity term averages ``sum_k trapz(ReLU(-d2 F_k/dV2))`` over the
    same slices, evaluated on every ``curvature_stride``-th grid point.
    """
    X, Tf, n_T, n_p = _slice_inputs(data)
    P, w, Tv = jnp.asarray(data.P), jnp.asarray(data.weights), jnp.asarray(data.T)
    if lam > 0:
        if data.n_x != 1:
            raise ValueError("convexity penalty needs a single spatial coordinate")
        v = data.axes[0][::curvature_stride]
        wv = jnp.asarray(trapezoid_weights((v,)))
        Vc = jnp.asarray(np.tile(v, n_T))
        Tc = jnp.asarray(np.repeat(data.T, v.size))

    def loss(tree):
        F = ensemble_terms(tree, X, Tf, k_B, gamma)["F_total"].reshape(n_T, n_p)
        Q = _boltzmann(F, Tv, k_B, w)
        out = jnp.mean(_js_kernel(P, Q, w))
        if lam > 0:
            d2 = config_curvature(_stacked_cfg_fn(tree, 1), Vc, Tc).reshape(n_T, v.size, -1)
            out = out + lam * jnp.mean(jnp.sum(wv[None, :, None] * _ops.relu0(-d2), axis=(1, 2)))
        return out

    return loss


def dnn_js_objective(data: SlicedDensity, k_B: float):
    """JS fit for a plain network that outputs F(x, T) directly."""
    X, Tf, n_T, n_p = _slice_inputs(data)
    inp = jnp.concatenate([X, Tf[:, None]], axis=1)
    P, w, Tv = jnp.asarray(data.P), jnp.asarray(data.weights), jnp.asarray(data.T)

    def loss(tree):
        F = apply(tree, inp)[:, 0].reshape(n_T, n_p)
        return jnp.mean(_js_kernel(P, _boltzmann(F, Tv, k_B, w), w))

    return loss
