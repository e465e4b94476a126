"""Derivatives of F, stationary points, curvature contours, isobars and critical points.

Fields are jax-traceable callables ``f(x, T)`` with ``x`` a length-``n`` vector;
first and second derivatives come from jax AD, third derivatives (only
needed inside the critical-point Newton Jacobian) from central differences
of the AD Hessian.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from scipy.optimize import brentq
from skimage.measure import find_contours

from zenn import _ops  # noqa: F401  (enables float64)
from zenn import benchdata
from zenn.zentropy import EnsembleModel, helmholtz_fn

STATIONARY_TOL = 1e-8
DEDUP_TOL = 1e-6
FD_STEP = 1e-4


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class SingularJacobianError(NonConvergenceError):
    """Newton Jacobian lost rank; retry from a different guess."""


class ScalarField:
    """A twice-differentiable scalar ``f(x, T)`` with jitted value, gradient and Hessian in ``x``."""

    def __init__(self, fn: Callable, n_x: int, name: str = "field"):
        self.fn = fn
        self.n_x = int(n_x)
        self.name = name
        self._value = jax.jit(fn)
        self._grad = jax.jit(jax.grad(fn, 0))
        self._hess = jax.jit(jax.hessian(fn, 0))
        self._grad_T = jax.jit(jax.jacfwd(jax.grad(fn, 0), 1))
        self._values = jax.jit(jax.vmap(fn, (0, 0)))
        self._hesses = jax.jit(jax.vmap(jax.hessian(fn, 0), (0, 0)))
        self._grads = jax.jit(jax.vmap(jax.grad(fn, 0), (0, 0)))

    @classmethod
    def from_model(cls, model: EnsembleModel, name: str = "zenn") -> "ScalarField":
        return cls(helmholtz_fn(model), model.n_x, name)

    @classmethod
    def benchmark_1d(cls, k_B: float = 1.0) -> "ScalarField":
        return cls(lambda x, T: benchdata.benchmark_F_1d(x[0], T, k_B), 1, "benchmark_1d")

    @classmethod
    def benchmark_2d(cls) -> "ScalarField":
        return cls(lambda x, T: benchdata.benchmark_V_2d(x[0], x[1]), 2, "benchmark_2d")

    def _x(self, x):
        x = jnp.atleast_1d(jnp.asarray(x, dtype=float))
        if x.shape != (self.n_x,):
            raise ValueError(f"{self.name}: expected {self.n_x} coordinates, got shape {x.shape}")
        return x

    def value(self, x, T) -> float:
        return float(self._value(self._x(x), float(T)))

    def grad(self, x, T) -> np.ndarray:
        return np.asarray(self._grad(self._x(x), float(T)))

    def hess(self, x, T) -> np.ndarray:
        return np.asarray(self._hess(self._x(x), float(T)))

    def grad_T(self, x, T) -> np.ndarray:
        """Mixed derivative d(grad_x F)/dT."""
        return np.asarray(self._grad_T(self._x(x), float(T)))

    def values(self, X, T) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.n_x)
        T = np.broadcast_to(np.asarray(T, dtype=float), (X.shape[0],))
        return np.asarray(self._values(jnp.asarray(X), jnp.asarray(T)))

    def grads(self, X, T) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.n_x)
        T = np.broadcast_to(np.asarray(T, dtype=float), (X.shape[0],))
        return np.asarray(self._grads(jnp.asarray(X), jnp.asarray(T)))

    def hesses(self, X, T) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.n_x)
        T = np.broadcast_to(np.asarray(T, dtype=float), (X.shape[0],))
        return np.asarray(self._hesses(jnp.asarray(X), jnp.asarray(T)))

    def with_pressure(self, p: float) -> "ScalarField":
        """Gibbs-like field ``F + p x_0`` (x_0 plays the role of volume)."""
        fn = self.fn
        return ScalarField(lambda x, T: fn(x, T) + p * x[0], self.n_x, f"{self.name}+pV")


def grad_F(field: ScalarField, x, T) -> np.ndarray:
    return field.grad(x, T)


def hess_F(field: ScalarField, x, T) -> np.ndarray:
    return field.hess(x, T)


# ---------------------------------------------------------------------------
# stationary points


@dataclass(frozen=True)
class StationaryPoint:
    x: np.ndarray
    T: float
    tag: str  # stable | unstable | saddle | degenerate
    eigenvalues: np.ndarray


def _stability(H) -> tuple[str, np.ndarray]:
    ev = np.linalg.eigvalsh(H)
    scale = max(1.0, float(np.max(np.abs(ev))))
    if np.any(np.abs(ev) <= 1e-12 * scale):
        return "degenerate", ev
    if np.all(ev > 0):
        return "stable", ev
    if np.all(ev < 0):
        return "unstable", ev
    return "saddle", ev


def _newton_stationary(field, x, T, bounds, maxiter=100):
    # stop on step size, not gradient size, so degenerate roots (T = T*) are still pinned down
    for _ in range(maxiter):
        g = field.grad(x, T)
        if not np.all(np.isfinite(g)):
            return None
        if not np.any(g):
            break
        try:
            step = np.linalg.solve(field.hess(x, T), g)
        except np.linalg.LinAlgError:
            return None
        x = x - step
        if bounds is not None and np.any((x < bounds[0]) | (x > bounds[1])):
            return None
        if np.max(np.abs(step)) < 1e-13 * (1 + np.max(np.abs(x))):
            break
    if bounds is not None and np.any((x < bounds[0]) | (x > bounds[1])):
        return None
    g = field.grad(x, T)
    return x if np.max(np.abs(g)) < STATIONARY_TOL else None


def stationary_points(field: ScalarField, T: float, x_seeds, bounds=None, max_value: float | None = None) -> list[StationaryPoint]:
    """Newton on grad F = 0 from each seed; merged within 1e-6 and sorted by x.

    ``bounds`` = (lower, upper) vectors discards iterates leaving the box.
    ``max_value`` drops points whose F lies above it (plateau ripples of a
    fitted landscape). Seeds that fail to converge are dropped silently.
    """
    seeds = np.asarray(x_seeds, dtype=float).reshape(-1, field.n_x)
    if bounds is not None:
        bounds = (np.broadcast_to(np.asarray(bounds[0], float), (field.n_x,)), np.broadcast_to(np.asarray(bounds[1], float), (field.n_x,)))
    found: list[np.ndarray] = []
    for s in seeds:
        x = _newton_stationary(field, s.copy(), T, bounds)
        if x is None:
            continue
        if any(np.max(np.abs(x - y)) < DEDUP_TOL for y in found):
            continue
        if max_value is not None and field.value(x, T) > max_value:
            continue
        found.append(x)
    found.sort(key=lambda v: tuple(v))
    out = []
    for x in found:
        tag, ev = _stability(field.hess(x, T))
        out.append(StationaryPoint(x, float(T), tag, ev))
    return out


def bifurcation_diagram(field: ScalarField, T_grid, x_seeds, bounds=None) -> list[StationaryPoint]:
    """Stationary points for every T, ordered by T then x."""
    out = []
    for T in np.asarray(T_grid, dtype=float):
        out.extend(stationary_points(field, T, x_seeds, bounds))
    return out


def bifurcation_csv(points: Sequence[StationaryPoint]) -> str:
    n = points[0].x.size if points else 1
    cols = ["T"] + ([f"x{i}" for i in range(n)] if n > 1 else ["x"]) + ["stability"]
    lines = [",".join(cols)]
    for p in points:
        lines.append(",".join([f"{p.T:.17g}"] + [f"{v:.17g}" for v in p.x] + [p.tag]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# curvature contour


def curvature_grid(field: ScalarField, x_range, T_range, resolution: int = 101):
    """``(x, T, d2F/dx2[nT, nx])`` on a uniform grid (1-D fields)."""
    if field.n_x != 1:
        raise ValueError("curvature contours are defined for one-dimensional fields")
    xs = np.linspace(*x_range, resolution)
    Ts = np.linspace(*T_range, resolution)
    XX, TT = np.meshgrid(xs, Ts)
    C = field.hesses(XX.reshape(-1, 1), TT.ravel())[:, 0, 0].reshape(TT.shape)
    return xs, Ts, C


def curvature_zero_contour(field: ScalarField, x_range, T_range, resolution: int = 101) -> list[np.ndarray]:
    """Marching-squares polylines of d2F/dx2 = 0; each is an (m, 2) array of (x, T)."""
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    xs, Ts, C = curvature_grid(field, x_range, T_range, resolution)
    if C.min() > 0 or C.max() < 0:
        return []
    lines = []
    for c in find_contours(C, 0.0):
        # c[:, 0] indexes T (rows), c[:, 1] indexes x (columns)
        x = np.interp(c[:, 1], np.arange(xs.size), xs)
        T = np.interp(c[:, 0], np.arange(Ts.size), Ts)
        lines.append(np.column_stack([x, T]))
    lines.sort(key=lambda a: (a[0, 1], a[0, 0]))
    return lines


def contour_csv(lines: Sequence[np.ndarray]) -> str:
    out = ["line,x,T"]
    for i, ln in enumerate(lines):
        out += [f"{i},{x:.17g},{T:.17g}" for x, T in ln]
    return "\n".join(out) + "\n"


def contour_rms_vs(lines: Sequence[np.ndarray], T_of_x: Callable, x_range) -> float:
    """RMS of ``T - T_of_x(x)`` over contour vertices with x inside ``x_range``.

    For every x the contour vertex closest to the reference curve is used, so
    extra spurious branches far from the reference do not dominate.
    """
    pts = np.vstack(lines) if lines else np.zeros((0, 2))
    pts = pts[(pts[:, 0] >= x_range[0]) & (pts[:, 0] <= x_range[1])]
    if pts.size == 0:
        return float("inf")
    return float(np.sqrt(np.mean((pts[:, 1] - T_of_x(pts[:, 0])) ** 2)))


# ---------------------------------------------------------------------------
# isobars


@dataclass
class IsobarResult:
    pressure: float
    T: np.ndarray
    V: np.ndarray  # equilibrium branch, nan where no root was found
    roots: list = dc_field(default_factory=list)  # all roots per T

    def dVdT(self) -> np.ndarray:
        return np.gradient(self.V, self.T)

    def has_nte(self) -> bool:
        d = self.dVdT()
        return bool(np.any(d[np.isfinite(d)] < 0))

    def to_csv(self) -> str:
        lines = ["T,V,n_roots"]
        lines += [f"{t:.17g},{v:.17g},{len(r)}" for t, v, r in zip(self.T, self.V, self.roots)]
        return "\n".join(lines) + "\n"


def isobaric_curve(field: ScalarField, p: float, T_grid, V_window, n_scan: int = 400) -> IsobarResult:
    """Solve dF/dV = -p for each T; multiple roots resolve to the minimum of F + pV."""
    if field.n_x != 1:
        raise ValueError("isobars need a field of one volume coordinate")
    Vs = np.linspace(V_window[0], V_window[1], n_scan)
    Ts = np.asarray(T_grid, dtype=float)
    V_eq = np.full(Ts.size, np.nan)
    all_roots = []
    for i, T in enumerate(Ts):
        g = field.grads(Vs[:, None], T)[:, 0] + p
        roots = []
        for j in np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) <= 0)[0]:
            if g[j] == 0:
                r = Vs[j]
            elif g[j + 1] == 0:
                continue
            else:
                r = brentq(lambda v: field.grad([v], T)[0] + p, Vs[j], Vs[j + 1], xtol=1e-15, rtol=1e-15)
            if not roots or abs(r - roots[-1]) > DEDUP_TOL:
                roots.append(float(r))
        all_roots.append(roots)
        if roots:
            G = [field.value([r], T) + p * r for r in roots]
            V_eq[i] = roots[int(np.argmin(G))]
    return IsobarResult(float(p), Ts, V_eq, all_roots)


# ---------------------------------------------------------------------------
# critical point


@dataclass(frozen=True)
class CriticalPoint:
    x_star: np.ndarray
    T_star: float
    xi: np.ndarray
    residual: float
    iterations: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "x_star": [float(v) for v in self.x_star],
                "T_star": float(self.T_star),
                "xi": [float(v) for v in self.xi],
                "residual": float(self.residual),
                "iterations": self.iterations,
            }
        )


def critical_residual(field: ScalarField, x, T, xi) -> np.ndarray:
    """Stacked residual ``[grad F; H xi; |xi|^2 - 1]``."""
    x, xi = np.asarray(x, float), np.asarray(xi, float)
    return np.concatenate([field.grad(x, T), field.hess(x, T) @ xi, [xi @ xi - 1.0]])


def _critical_jacobian(field, x, T, xi, h):
    n = x.size
    H = field.hess(x, T)
    J = np.zeros((2 * n + 1, 2 * n + 1))
    J[:n, :n] = H
    J[:n, n] = field.grad_T(x, T)
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[n : 2 * n, j] = (field.hess(x + e, T) - field.hess(x - e, T)) @ xi / (2 * h)
    J[n : 2 * n, n] = (field.hess(x, T + h) - field.hess(x, T - h)) @ xi / (2 * h)
    J[n : 2 * n, n + 1 :] = H
    J[2 * n, n + 1 :] = 2 * xi
    return J


def _orient(xi):
    k = int(np.argmax(np.abs(xi)))
    return -xi if xi[k] < 0 else xi


def solve_critical_point(
    field: ScalarField,
    guess,
    tol: float = 1e-8,
    maxiter: int = 100,
    fd_step: float = FD_STEP,
    step_tol: float = 1e-10,
) -> CriticalPoint:
    """Newton on the zero-eigenvalue system in ``(x, T, xi)``.

    ``guess`` is ``(x0, T0)`` or ``(x0, T0, xi0)``; without ``xi0`` the
    Hessian eigenvector of smallest |eigenvalue| is used. Steps are least
    squares solutions, so symmetric (pitchfork) points where the Jacobian
    degenerates at the solution are still reached, linearly. Convergence
    needs both the residual below ``tol`` and a step below ``step_tol``.
    """
    x0, T0 = guess[0], guess[1]
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    T = float(T0)
    n = field.n_x
    if len(guess) > 2 and guess[2] is not None:
        xi = np.atleast_1d(np.asarray(guess[2], dtype=float)).copy()
    else:
        w, v = np.linalg.eigh(field.hess(x, T))
        xi = v[:, int(np.argmin(np.abs(w)))]
    xi = xi / np.linalg.norm(xi)
    res = np.inf
    for it in range(1, maxiter + 1):
        R = critical_residual(field, x, T, xi)
        if not np.all(np.isfinite(R)):
            raise NonConvergenceError("non-finite residual", float("nan"), it)
        res = float(np.max(np.abs(R)))
        J = _critical_jacobian(field, x, T, xi, fd_step)
        sv = np.linalg.svd(J, compute_uv=False)
        if sv[0] == 0 or sv[-1] <= 1e-14 * sv[0]:
            if res < tol:
                break
            raise SingularJacobianError("singular Jacobian; try another guess", res, it)
        step = np.linalg.lstsq(J, -R, rcond=None)[0]
        if res < tol and np.max(np.abs(step)) < step_tol:
            break
        x = x + step[:n]
        T = T + step[n]
        xi = xi + step[n + 1 :]
        if T <= 0 or not np.isfinite(T):
            raise NonConvergenceError("temperature left the physical domain", res, it)
    else:
        raise NonConvergenceError("maximum iterations reached", res, maxiter)
    xi = _orient(xi / np.linalg.norm(xi))
    res = float(np.max(np.abs(critical_residual(field, x, T, xi))))
    if res >= tol:
        raise NonConvergenceError("residual above tolerance after normalization", res, it)
    return CriticalPoint(x, T, xi, res, it)


def critical_point_guesses(field: ScalarField, x_range, T_range, resolution: int = 101, max_guesses: int = 5):
    """Seeds for :func:`solve_critical_point`: curvature-contour vertices where |dF/dx| is smallest."""
    lines = curvature_zero_contour(field, x_range, T_range, resolution)
    if not lines:
        return []
    pts = np.vstack(lines)
    g = np.abs(np.concatenate([field.grads(ln[:, :1], ln[:, 1])[:, 0] for ln in lines]))
    order = np.argsort(g, kind="stable")
    guesses = []
    for i in order:
        x, T = pts[i]
        if all(abs(x - gx) > (x_range[1] - x_range[0]) / 20 or abs(T - gT) > (T_range[1] - T_range[0]) / 20 for gx, gT, _ in guesses):
            guesses.append((float(x), float(T), [1.0]))
        if len(guesses) >= max_guesses:
            break
    return guesses


def find_critical_point(field: ScalarField, x_range, T_range, resolution: int = 101, **kw) -> CriticalPoint:
    """Try contour-seeded guesses in order; raise the last failure if none converges."""
    err: Exception = NonConvergenceError("curvature never changes sign in the window", float("nan"), 0)
    for guess in critical_point_guesses(field, x_range, T_range, resolution):
        try:
            return solve_critical_point(field, guess, **kw)
        except NonConvergenceError as e:
            err = e
    raise err
