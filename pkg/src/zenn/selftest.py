"""Fast invariant checks (no training) with a printed pass/fail table."""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from zenn import analysis as an
from zenn import autodiff as ad
from zenn import benchdata as bd
from zenn import losses, zentropy


def _ad_fd() -> str:
    rng = np.random.default_rng(1)
    x, y = ad.Var("x"), ad.Var("y")
    f = ad.tanh(x * y) + ad.exp(0.3 * x) * y**2 + ad.log(1 + x**2)
    worst = 0.0
    for _ in range(50):
        b = {"x": rng.uniform(-2, 2), "y": rng.uniform(-2, 2)}
        g = ad.gradient(f, b, ["x", "y"])
        for i, n in enumerate("xy"):
            bp, bm = dict(b), dict(b)
            bp[n] += 1e-5
            bm[n] -= 1e-5
            fd = (ad.evaluate(f, bp) - ad.evaluate(f, bm)) / 2e-5
            worst = max(worst, abs(g[i] - fd) / max(1.0, abs(fd)))
    assert worst < 1e-5, worst
    return f"max rel err {worst:.1e}"


def _hessian_symmetry() -> str:
    x, y = ad.Var("x"), ad.Var("y")
    rep = ad.derivatives(ad.tanh(x * y) * ad.exp(x) + x**2 * y, {"x": 0.3, "y": -1.2}, ["x", "y"], hessian=True)
    assert rep.asymmetry < 1e-10
    return f"asymmetry {rep.asymmetry:.1e}"


def _closed_form() -> str:
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(2000):
        K = rng.integers(1, 8)
        T, k_B, gamma = rng.uniform(0.2, 5), rng.uniform(0.1, 2), rng.uniform(0.5, 10)
        S = rng.uniform(0, 3, K)
        F = rng.normal(0, 5, K)
        p, logZ = zentropy.probabilities(F, S, T, gamma, k_B)
        st = zentropy.EnsembleState(T, F_cfg=F, S=S, p=p, logZ=logZ, k_B=k_B, gamma=gamma)
        a, b = zentropy.total_helmholtz(st), zentropy.helmholtz_closed_form(st)
        worst = max(worst, abs(a - b) / max(1.0, abs(b)))
    assert worst < 1e-10, worst
    return f"max rel diff {worst:.1e}"


def _cz_identity() -> str:
    labels = bd.gen_three_class(0, 50)
    worst = 0.0
    for seed in range(5):
        m = zentropy.EnsembleModel.create(3, 0, (8,), seed)
        cz = losses.cross_zentropy(labels, m)
        rows = np.array([zentropy.evaluate_ensemble(m, [], T).p for T in np.unique(labels.T)])
        idx = np.searchsorted(np.unique(labels.T), labels.T)
        ce = losses.cross_entropy(labels, rows[idx])
        worst = max(worst, abs(cz - ce))
    assert worst < 1e-12, worst
    return f"max diff {worst:.1e}"


def _js() -> str:
    rng = np.random.default_rng(3)
    for _ in range(200):
        P = losses.GridDensity.from_cells(rng.dirichlet(np.ones(6)))
        Q = losses.GridDensity.from_cells(rng.dirichlet(np.ones(6)))
        a, b = losses.js_divergence(P, Q), losses.js_divergence(Q, P)
        assert a == b and 0 <= a <= np.log(2)
    v = losses.js_divergence(losses.GridDensity.from_cells([0.5, 0.5]), losses.GridDensity.from_cells([1.0, 0.0]))
    assert abs(v - 0.215762) < 1e-6
    return f"example {v:.6f}"


def _eos() -> str:
    rec = bd.table_s1()[0]
    p = rec.eos
    V = np.linspace(0.9 * rec.V0, 1.1 * rec.V0, 8)
    q = bd.eos_fit(V, bd.eos_energy(V, p))
    err = np.max(np.abs(q.coeffs - p.coeffs) / np.abs(p.coeffs))
    assert err < 1e-8 and abs(q.B0 - rec.B0) / rec.B0 < 1e-6
    return f"coef rel err {err:.1e}"


def _critical() -> str:
    t = time.perf_counter()
    cp = an.find_critical_point(an.ScalarField.benchmark_1d(), (-1, 1), (1, 3))
    assert abs(cp.x_star[0]) < 1e-8 and abs(cp.T_star - 2) < 1e-8 and cp.residual < 1e-8
    return f"T*={cp.T_star:.12f} in {time.perf_counter() - t:.2f}s"


def _three_class() -> str:
    p = bd.three_class_probs(2.0)
    assert np.allclose(p, [0.67567598, 0.31071104, 0.01361298], atol=1e-8)
    assert [int(np.argmax(bd.three_class_probs(T))) for T in (2, 3, 4)] == [0, 1, 2]
    return "p(2) ok"


CHECKS: list[tuple[str, Callable[[], str]]] = [
    ("autodiff gradient vs finite differences", _ad_fd),
    ("hessian symmetry", _hessian_symmetry),
    ("helmholtz closed form", _closed_form),
    ("cross-zentropy identity", _cz_identity),
    ("JS divergence properties", _js),
    ("EOS round trip", _eos),
    ("benchmark critical point", _critical),
    ("three-class probabilities", _three_class),
]


def run_selftest(emit=print) -> bool:
    ok = True
    width = max(len(n) for n, _ in CHECKS)
    for name, fn in CHECKS:
        try:
            detail, status = fn(), "PASS"
        except Exception as e:  # any failure is reported, the table continues
            detail, status, ok = f"{type(e).__name__}: {e}", "FAIL", False
        emit(f"{name:<{width}}  {status}  {detail}")
    return ok
