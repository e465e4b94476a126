"""Configuration ensembles: probabilities, total entropy and Helmholtz energy.

Each of the K configurations owns an energy network ``E_k(x, T)`` and an
entropy network whose output passes through softplus, so ``S_k >= 0``.
With ``F_k = E_k - T S_k`` the configuration weights are

    p_k = exp(-F_k / (k_B T) - (S_k / (gamma k_B))**2) / Z

and the ensemble totals are

    S = sum_k p_k S_k - k_B sum_k p_k ln p_k
    F = sum_k p_k F_k + k_B T sum_k p_k ln p_k

Everything is evaluated in the log domain. Two code paths exist: the
vectorized jax functions (:func:`ensemble_terms`) used for training and
analysis, and :func:`ensemble_expr`, which builds the same quantities as an
:class:`~zenn.autodiff.Expr` graph for a single point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

from zenn import _ops
from zenn import autodiff as ad
from zenn.netcore import LayerSpec, NetworkParams, SpecError, apply_stacked, forward, init_params, stack, unstack

NORMALIZATION_TOL = 1e-9


class ContractError(ValueError):
    """A probability vector or state violates its preconditions."""


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    e_nets: tuple[NetworkParams, ...]
    s_nets: tuple[NetworkParams, ...]
    k_B: float = 1.0
    gamma: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "e_nets", tuple(self.e_nets))
        object.__setattr__(self, "s_nets", tuple(self.s_nets))
        if len(self.e_nets) < 1 or len(self.e_nets) != len(self.s_nets):
            raise SpecError("need K >= 1 energy networks and as many entropy networks")
        if not (self.k_B > 0 and self.gamma > 0):
            raise SpecError("k_B and gamma must be positive")
        specs = {n.spec for n in self.e_nets + self.s_nets}
        if len(specs) != 1:
            raise SpecError("all configuration networks must share one LayerSpec")
        spec = specs.pop()
        if len(spec.hidden_widths) not in (1, 2) or spec.output_dim != 1:
            raise SpecError("configuration networks have 1 or 2 hidden layers and a scalar output")

    @classmethod
    def create(cls, K: int, n_x: int, hidden_widths=(8,), seed: int = 0, k_B: float = 1.0, gamma: float = 5.0):
        """Fresh model; inputs are ``n_x`` coordinates followed by T."""
        if K < 1:
            raise SpecError("K must be >= 1")
        spec = LayerSpec(n_x + 1, tuple(hidden_widths), 1)
        seeds = np.random.SeedSequence(seed).generate_state(2 * K)
        e = tuple(init_params(spec, int(s)) for s in seeds[:K])
        s = tuple(init_params(spec, int(s)) for s in seeds[K:])
        return cls(e, s, k_B, gamma)

    @property
    def K(self) -> int:
        return len(self.e_nets)

    @property
    def spec(self) -> LayerSpec:
        return self.e_nets[0].spec

    @property
    def n_x(self) -> int:
        return self.spec.input_dim - 1

    def to_tree(self):
        return {"E": stack(self.e_nets), "S": stack(self.s_nets)}

    def from_tree(self, tree) -> "EnsembleModel":
        return EnsembleModel(unstack(tree["E"], self.e_nets), unstack(tree["S"], self.s_nets), self.k_B, self.gamma)

    def to_dict(self) -> dict:
        return {
            "kind": "zenn",
            "K": self.K,
            "k_B": self.k_B,
            "gamma": self.gamma,
            "e_nets": [n.to_dict() for n in self.e_nets],
            "s_nets": [n.to_dict() for n in self.s_nets],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleModel":
        return cls(
            tuple(NetworkParams.from_dict(n) for n in d["e_nets"]),
            tuple(NetworkParams.from_dict(n) for n in d["s_nets"]),
            float(d["k_B"]),
            float(d["gamma"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "EnsembleModel":
        return cls.from_dict(json.loads(text))


@dataclass
class EnsembleState:
    T: float
    E: np.ndarray | None = None
    S: np.ndarray | None = None
    F_cfg: np.ndarray | None = None
    p: np.ndarray | None = None
    logZ: float | None = None
    F_total: float | None = None
    S_total: float | None = None
    k_B: float = 1.0
    gamma: float = 5.0


# ---------------------------------------------------------------------------
# vectorized path (jax)


def config_terms(tree, X, T):
    """Per-configuration energies and entropies, each of shape (N, K)."""
    inp = jnp.concatenate([X, T[:, None]], axis=1)
    E = apply_stacked(tree["E"], inp).T
    S = _ops.softplus(apply_stacked(tree["S"], inp).T)
    return E, S


def log_weights(F_cfg, S, T, gamma, k_B):
    """Unnormalized log-probabilities; ``T`` broadcasts against the last axis."""
    T = jnp.asarray(T)[..., None] if jnp.ndim(T) else T
    return -F_cfg / (k_B * T) - (S / (gamma * k_B)) ** 2


def ensemble_terms(tree, X, T, k_B: float, gamma: float) -> dict:
    """All ensemble quantities for a batch of inputs ``X`` (N, n_x) at temperatures ``T`` (N,)."""
    E, S = config_terms(tree, X, T)
    return combine(E, S, T, k_B, gamma)


def combine(E, S, T, k_B, gamma) -> dict:
    F_cfg = E - T[:, None] * S
    logw = log_weights(F_cfg, S, T, gamma, k_B)
    logZ = _ops.logsumexp(logw, axis=-1)
    logp = logw - logZ[:, None]
    p = jnp.exp(logp)
    plogp = jnp.sum(p * logp, axis=-1)
    return {
        "E": E,
        "S": S,
        "F_cfg": F_cfg,
        "logw": logw,
        "logZ": logZ,
        "logp": logp,
        "p": p,
        "F_total": jnp.sum(p * F_cfg, axis=-1) + k_B * T * plogp,
        "S_total": jnp.sum(p * S, axis=-1) - k_B * plogp,
    }


def helmholtz_fn(model: EnsembleModel):
    """``f(x, T) -> F_total`` for a single point, traceable by jax."""
    tree = model.to_tree()
    k_B, gamma = model.k_B, model.gamma

    def f(x, T):
        x = jnp.reshape(jnp.asarray(x, dtype=float), (1, -1))
        T = jnp.reshape(jnp.asarray(T, dtype=float), (1,))
        return ensemble_terms(tree, x, T, k_B, gamma)["F_total"][0]

    return f


def config_helmholtz_fn(model: EnsembleModel):
    """``f(x, T) -> F_cfg`` (K-vector) for a single point."""
    tree = model.to_tree()

    def f(x, T):
        x = jnp.reshape(jnp.asarray(x, dtype=float), (1, -1))
        T = jnp.reshape(jnp.asarray(T, dtype=float), (1,))
        E, S = config_terms(tree, x, T)
        return (E - T[:, None] * S)[0]

    return f


# ---------------------------------------------------------------------------
# public point-wise API


def _check_T(T):
    if not np.all(np.asarray(T) > 0):
        raise ValueError("temperature must be positive")


def _as_inputs(model: EnsembleModel, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (model.n_x,):
        raise SpecError(f"expected {model.n_x} input coordinates, got shape {x.shape}")
    return x


def config_energy_entropy(model: EnsembleModel, x, T: float):
    """``(E, S)`` K-vectors at one input point."""
    _check_T(T)
    x = _as_inputs(model, x) if model.n_x else np.zeros(0)
    E, S = config_terms(model.to_tree(), jnp.asarray(x)[None, :], jnp.asarray([float(T)]))
    return np.asarray(E[0]), np.asarray(S[0])


def probabilities(F_cfg, S, T, gamma: float, k_B: float):
    """Configuration probabilities and ``ln Z`` along the last axis."""
    F_cfg, S = np.asarray(F_cfg, dtype=float), np.asarray(S, dtype=float)
    _check_T(T)
    if gamma <= 0 or k_B <= 0:
        raise ValueError("gamma and k_B must be positive")
    if F_cfg.shape[-1:] == (0,):
        raise ValueError("need at least one configuration")
    if not (np.all(np.isfinite(F_cfg)) and np.all(np.isfinite(S))):
        raise ValueError("non-finite configuration energies or entropies")
    logw = -F_cfg / (k_B * np.asarray(T, dtype=float)[..., None]) - (S / (gamma * k_B)) ** 2
    m = np.max(logw, axis=-1, keepdims=True)
    w = np.exp(logw - m)
    z = np.sum(w, axis=-1, keepdims=True)
    return w / z, np.squeeze(m + np.log(z), -1)


def _check_prob(p):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(np.abs(np.sum(p, axis=-1) - 1.0) > NORMALIZATION_TOL):
        raise ContractError("p must be nonnegative and sum to 1")
    return p


def _xlogx(p):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


def total_entropy(p, S, k_B: float = 1.0) -> float:
    """Probability-weighted configuration entropy plus mixing entropy (0 ln 0 = 0)."""
    p = _check_prob(p)
    S = np.asarray(S, dtype=float)
    if np.any(S < 0):
        raise ContractError("configuration entropies must be nonnegative")
    return float(np.sum(p * S) - k_B * np.sum(_xlogx(p)))


def total_helmholtz(state: EnsembleState) -> float:
    """Fill and return ``state.F_total`` from p, F_cfg and T."""
    p = _check_prob(state.p)
    _check_T(state.T)
    F = float(np.sum(p * np.asarray(state.F_cfg)) + state.k_B * state.T * np.sum(_xlogx(p)))
    state.F_total = F
    return F


def helmholtz_closed_form(state: EnsembleState) -> float:
    """``-k_B T ln Z - T / (gamma^2 k_B) * sum p S^2``, equal to :func:`total_helmholtz`."""
    p, S = np.asarray(state.p), np.asarray(state.S)
    return float(-state.k_B * state.T * state.logZ - state.T / (state.gamma**2 * state.k_B) * np.sum(p * S**2))


def evaluate_ensemble(model: EnsembleModel, x, T: float) -> EnsembleState:
    E, S = config_energy_entropy(model, x, T)
    F_cfg = E - T * S
    p, logZ = probabilities(F_cfg, S, T, model.gamma, model.k_B)
    state = EnsembleState(float(T), E, S, F_cfg, p, float(logZ), k_B=model.k_B, gamma=model.gamma)
    total_helmholtz(state)
    state.S_total = total_entropy(p, S, model.k_B)
    return state


# ---------------------------------------------------------------------------
# symbolic path


@dataclass
class ExprState:
    """Graph-valued ensemble quantities at one point plus the bindings that evaluate them."""

    F_total: ad.Expr
    S_total: ad.Expr
    E: list
    S: list
    F_cfg: list
    p: list
    logZ: ad.Expr
    bindings: dict
    input_names: list


def ensemble_expr(model: EnsembleModel, x, T: float, params_as_vars: bool = False) -> ExprState:
    """Build the ensemble at ``(x, T)`` as an expression graph.

    Inputs become variables ``x0, x1, ..., T``. With ``params_as_vars`` the
    network weights are variables too (names from
    :func:`zenn.netcore.param_bindings` with prefixes ``E{k}``/``S{k}``).
    The log-sum-exp shift is the numeric maximum at the given point; any
    constant shift is exact, so derivatives are unaffected.
    """
    from zenn.netcore import param_bindings

    _check_T(T)
    x = _as_inputs(model, x) if model.n_x else np.zeros(0)
    names = [f"x{i}" for i in range(model.n_x)] + ["T"]
    bindings = dict(zip(names, [*map(float, x), float(T)]))
    inputs = [ad.Var(n) for n in names]
    Tv = inputs[-1]
    k_B, g = model.k_B, model.gamma
    E, S, F, a = [], [], [], []
    for k in range(model.K):
        pe = f"E{k}" if params_as_vars else None
        ps = f"S{k}" if params_as_vars else None
        if params_as_vars:
            bindings.update(param_bindings(model.e_nets[k], pe))
            bindings.update(param_bindings(model.s_nets[k], ps))
        e = forward(model.e_nets[k], inputs, pe)
        s = ad.softplus(forward(model.s_nets[k], inputs, ps))
        f = e - Tv * s
        E.append(e)
        S.append(s)
        F.append(f)
        a.append(-f / (k_B * Tv) - (s / (g * k_B)) ** 2)
    shift = max(ad.evaluate(ak, bindings) for ak in a)
    acc = ad.exp(a[0] - shift)
    for ak in a[1:]:
        acc = acc + ad.exp(ak - shift)
    logZ = ad.log(acc) + shift
    logp = [ak - logZ for ak in a]
    p = [ad.exp(lp) for lp in logp]
    mix = p[0] * logp[0]
    F_tot = p[0] * F[0]
    S_tot = p[0] * S[0]
    for k in range(1, model.K):
        mix = mix + p[k] * logp[k]
        F_tot = F_tot + p[k] * F[k]
        S_tot = S_tot + p[k] * S[k]
    return ExprState(F_tot + k_B * Tv * mix, S_tot - k_B * mix, E, S, F, p, logZ, bindings, names)
