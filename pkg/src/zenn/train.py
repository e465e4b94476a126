"""Full-batch Adam training and configuration-count selection."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

log = logging.getLogger(__name__)

# epochs fused into one jitted scan
CHUNK = 500
# trailing window used to score a finished run
FINAL_WINDOW = 100


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int, parameter: str | None = None):
        super().__init__(f"{message} (epoch {epoch}" + (f", parameter {parameter})" if parameter else ")"))
        self.epoch = epoch
        self.parameter = parameter


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 20000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lam: float = 0.0
    seed: int = 0
    K: int | str = "auto"
    K_max: int = 8
    convergence_rel_tol: float = 0.01
    debug: bool = False

    def __post_init__(self):
        errors = []
        if not self.learning_rate > 0:
            errors.append("learning_rate must be > 0")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            errors.append("epochs must be an integer >= 1")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                errors.append(f"{name} must lie in [0, 1)")
        if not self.adam_eps > 0:
            errors.append("adam_eps must be > 0")
        if self.lam < 0:
            errors.append("lam must be >= 0")
        if self.K != "auto" and (int(self.K) != self.K or self.K < 1):
            errors.append("K must be 'auto' or an integer >= 1")
        if self.K_max < 1:
            errors.append("K_max must be >= 1")
        if errors:
            raise ConfigError("; ".join(errors))

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class TrainReport:
    loss_history: np.ndarray
    final_params: object
    selected_K: int | None
    wall_time: float

    @property
    def final_loss(self) -> float:
        """Mean loss over the last ``FINAL_WINDOW`` epochs (Adam jitter smoothed out)."""
        return float(np.mean(self.loss_history[-FINAL_WINDOW:]))

    def loss_csv(self) -> str:
        lines = ["epoch,loss"]
        lines += [f"{i + 1},{v:.17g}" for i, v in enumerate(self.loss_history)]
        return "\n".join(lines) + "\n"


@dataclass
class AdamMoments:
    m: object
    v: object

    @classmethod
    def zeros_like(cls, params) -> "AdamMoments":
        z = jax.tree_util.tree_map(jnp.zeros_like, params)
        return cls(z, z)


jax.tree_util.register_pytree_node(AdamMoments, lambda s: ((s.m, s.v), None), lambda _, c: AdamMoments(*c))


def _adam_update(params, grads, moments: AdamMoments, lr, b1, b2, eps, t):
    tm = jax.tree_util.tree_map
    m = tm(lambda m, g: b1 * m + (1 - b1) * g, moments.m, grads)
    v = tm(lambda v, g: b2 * v + (1 - b2) * g * g, moments.v, grads)
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    new = tm(lambda p, m, v: p - lr * (m / c1) / (jnp.sqrt(v / c2) + eps), params, m, v)
    return new, AdamMoments(m, v)


def _worst_leaf(grads) -> str:
    leaves = jax.tree_util.tree_flatten_with_path(grads)[0]
    worst, score = None, -1.0
    for path, g in leaves:
        g = np.asarray(g)
        bad = ~np.isfinite(g)
        s = np.inf if bad.any() else float(np.max(np.abs(g), initial=0.0))
        if s > score:
            idx = np.unravel_index(int(np.argmax(bad if bad.any() else np.abs(g))), g.shape) if g.size else ()
            worst, score = f"{jax.tree_util.keystr(path)}{list(idx)}", s
    return worst


def adam_step(params, grads, moments: AdamMoments, config: TrainConfig, t: int):
    """One bias-corrected Adam update; returns ``(params, moments)``."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    if not all(np.all(np.isfinite(np.asarray(g))) for g in jax.tree_util.tree_leaves(grads)):
        raise TrainingError("non-finite gradient", t, _worst_leaf(grads))
    new, mom = _adam_update(params, grads, moments, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps, float(t))
    if config.debug:
        bound = config.learning_rate / (1 - config.adam_beta1)
        steps = jax.tree_util.tree_map(lambda a, b: jnp.max(jnp.abs(a - b)), new, params)
        assert max(float(s) for s in jax.tree_util.tree_leaves(steps)) <= bound * (1 + 1e-12)
    return new, mom


def _make_runner(objective: Callable, config: TrainConfig):
    lr, b1, b2, eps = config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps
    vg = jax.value_and_grad(objective)

    def step(carry, t):
        params, mom = carry
        loss, grads = vg(params)
        finite = jnp.all(jnp.array([jnp.all(jnp.isfinite(g)) for g in jax.tree_util.tree_leaves(grads)]))
        new, mom2 = _adam_update(params, grads, mom, lr, b1, b2, eps, t)
        return (new, mom2), (loss, finite)

    return jax.jit(lambda carry, ts: jax.lax.scan(step, carry, ts))


def train(model, objective: Callable, config: TrainConfig, progress: Callable | None = None) -> TrainReport:
    """Minimize ``objective(tree)`` from ``model.to_tree()`` for ``config.epochs`` epochs.

    ``model`` is anything with ``to_tree``/``from_tree`` (an ensemble or a
    plain network). Epochs run in jitted chunks; a non-finite loss or
    gradient aborts with the epoch and worst parameter.
    """
    t0 = time.perf_counter()
    params = model.to_tree()
    mom = AdamMoments.zeros_like(params)
    history = np.empty(config.epochs)
    if config.debug:
        vg = jax.jit(jax.value_and_grad(objective))
        for t in range(1, config.epochs + 1):
            loss, grads = vg(params)
            if not np.isfinite(float(loss)):
                raise TrainingError("non-finite loss", t, _worst_leaf(grads))
            params, mom = adam_step(params, grads, mom, config, t)
            history[t - 1] = float(loss)
        return TrainReport(history, model.from_tree(params), getattr(model, "K", None), time.perf_counter() - t0)
    run = _make_runner(objective, config)
    done = 0
    while done < config.epochs:
        n = min(CHUNK, config.epochs - done)
        ts = jnp.arange(done + 1, done + n + 1, dtype=jnp.float64)
        (new, new_mom), (losses, finite) = run((params, mom), ts)
        losses, finite = np.asarray(losses), np.asarray(finite)
        ok = np.isfinite(losses) & finite
        if not ok.all():
            _diagnose(objective, params, mom, config, done, int(np.argmin(ok)))
        params, mom = new, new_mom
        history[done : done + n] = losses
        done += n
        if progress is not None:
            progress(done, float(losses[-1]))
    return TrainReport(history, model.from_tree(params), getattr(model, "K", None), time.perf_counter() - t0)


def _diagnose(objective, params, mom, config, done, bad):
    """Replay a failed chunk eagerly up to the first bad epoch and raise there."""
    vg = jax.jit(jax.value_and_grad(objective))
    for i in range(bad + 1):
        loss, grads = vg(params)
        epoch = done + i + 1
        if not np.isfinite(float(loss)):
            raise TrainingError("non-finite loss", epoch, _worst_leaf(grads))
        params, mom = adam_step(params, grads, mom, config, epoch)
    raise TrainingError("non-finite loss or gradient", done + bad + 1)


@dataclass
class KSelection:
    K: int
    final_losses: dict[int, float]
    reports: dict[int, TrainReport] = field(repr=False)


def select_K(data, builder: Callable, config: TrainConfig, K_min: int = 1, progress: Callable | None = None) -> KSelection:
    """Grow K until the next configuration improves the final loss by less than the tolerance.

    ``builder(K, data)`` returns ``(model, objective)``. The selected K is the
    smallest one whose successor improves the final loss by less than
    ``convergence_rel_tol`` (relative); ``K_max`` caps the search.
    """
    losses, reports = {}, {}
    K = K_min
    while True:
        model, objective = builder(K, data)
        rep = train(model, objective, config)
        rep.selected_K = K
        losses[K], reports[K] = rep.final_loss, rep
        log.info("K=%d final loss %.6g", K, rep.final_loss)
        if progress is not None:
            progress(K, rep.final_loss)
        if K > K_min:
            prev = losses[K - 1]
            if prev - losses[K] < config.convergence_rel_tol * abs(prev):
                return KSelection(K - 1, losses, reports)
        if K >= config.K_max:
            return KSelection(K, losses, reports)
        K += 1
