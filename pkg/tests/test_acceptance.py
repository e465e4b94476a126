"""The ten acceptance criteria, each at its stated tolerance.

Training-backed criteria share module-scoped fixtures so every model is fit
once. Each test records one pass/fail line that is repeated in the terminal
summary, then asserts.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from zenn import analysis as an
from zenn import benchdata as bd
from zenn import experiments as ex
from zenn import losses, zentropy
from zenn.losses import _cz_kernel

SEEDS = range(5)


# ---------------------------------------------------------------------------
# shared trained models


@pytest.fixture(scope="module")
def landscape_runs():
    runs = []
    for seed in SEEDS:
        cfg = ex.validate_config({"task": "landscape1d", "train": {"seed": seed}})
        out = ex.run_training(cfg)
        field = ex.energy_field(out.model, 1)
        a = cfg["analysis"]
        try:
            cp = an.find_critical_point(field, a["x_range"], a["T_range"], a["resolution"])
        except an.NonConvergenceError as e:
            cp = e
        lines = an.curvature_zero_contour(field, a["x_range"], a["T_range"], a["resolution"])
        rms = an.contour_rms_vs(lines, lambda x: 2 - 3 * x**2, (-0.6, 0.6))
        runs.append({"seed": seed, "model": out.model, "field": field, "cp": cp, "contour_rms": rms})
    return runs


@pytest.fixture(scope="module")
def classify_runs():
    runs = []
    for seed in SEEDS:
        cfg = ex.validate_config({"task": "classify", "train": {"seed": seed}, "data": {"seed": seed}})
        data = ex.load_task_data(cfg)
        zenn = ex.run_training(cfg, data)
        dnn = ex.run_training(cfg, data, baseline=True)
        runs.append(
            {
                "seed": seed,
                "zenn": zenn.metrics,
                "zenn_gen": ex.generalization_error(zenn.model),
                "dnn_gen": ex.generalization_error(dnn.model),
            }
        )
    return runs


@pytest.fixture(scope="module")
def landscape2d_run():
    cfg = ex.validate_config({"task": "landscape2d"})
    out = ex.run_training(cfg)
    field = ex.energy_field(out.model, 2)
    d, a = cfg["data"], cfg["analysis"]
    n = a["n_seeds"]
    S1, S2 = np.meshgrid(np.linspace(*d["x1_range"], n), np.linspace(*d["x2_range"], n), indexing="ij")
    bounds = ((d["x1_range"][0], d["x2_range"][0]), (d["x1_range"][1], d["x2_range"][1]))
    pts = an.stationary_points(field, d["T"], np.column_stack([S1.ravel(), S2.ravel()]), bounds, ex.well_ceiling(field, d, a["well_fraction"]))
    minima = np.array([p.x for p in pts if p.tag == "stable"])
    return {"metrics": out.metrics, "model": out.model, "field": field, "minima": minima}


# ---------------------------------------------------------------------------
# criteria


def test_criterion_01_benchmark_critical_point(criterion):
    field = an.ScalarField.benchmark_1d()
    field.hess([0.0], 2.0)  # compile outside the timed region
    t0 = time.perf_counter()
    cp = an.find_critical_point(field, (-1, 1), (1, 3))
    dt = time.perf_counter() - t0
    res = float(np.max(np.abs(an.critical_residual(field, cp.x_star, cp.T_star, cp.xi))))
    ok = abs(cp.x_star[0]) < 1e-8 and abs(cp.T_star - 2) < 1e-8 and res < 1e-8 and dt < 1.0
    criterion(1, ok, f"x*={cp.x_star[0]:.2e} T*={cp.T_star:.12f} residual={res:.1e} time={dt:.2f}s")
    assert ok


def test_criterion_02_trained_critical_point(criterion, landscape_runs):
    T_stars = [r["cp"].T_star if isinstance(r["cp"], an.CriticalPoint) else float("nan") for r in landscape_runs]
    hits = sum(abs(T - 2) <= 0.1 for T in T_stars)
    ok = hits >= 4
    criterion(2, ok, f"{hits}/5 seeds with |T*-2| <= 0.1; T* = " + ", ".join(f"{T:.4f}" for T in T_stars))
    assert ok


def test_criterion_03_curvature_contour(criterion, landscape_runs):
    rms = [r["contour_rms"] for r in landscape_runs]
    # the model of criterion 2 is the seed-0 fit; the other seeds are reported for context
    ok = rms[0] <= 0.15
    criterion(3, ok, f"contour RMS vs T=2-3x^2 on |x|<=0.6: seed 0 {rms[0]:.4f} (all seeds " + ", ".join(f"{v:.4f}" for v in rms) + ")")
    assert ok


def test_criterion_04_classification(criterion, classify_runs):
    first = classify_runs[0]["zenn"]
    argmax_ok = all(r["zenn"]["argmax_at_T_2_3_4"] == [1, 2, 3] for r in classify_runs)
    err = [r["zenn"]["max_p_error_train"] for r in classify_runs]
    fit_ok = max(err) <= 0.05
    wins = sum(r["zenn_gen"] <= r["dnn_gen"] for r in classify_runs)
    ok = argmax_ok and fit_ok and wins >= 4
    detail = (
        f"argmax@2,3,4={first['argmax_at_T_2_3_4']} on all seeds: {argmax_ok}; "
        f"max train p-error {max(err):.4f}; ZENN<=DNN on T in [6,8] for {wins}/5 seeds ("
        + ", ".join(f"{r['zenn_gen']:.3f}/{r['dnn_gen']:.3f}" for r in classify_runs)
        + ")"
    )
    criterion(4, ok, detail)
    assert ok


def test_criterion_05_identities(criterion):
    rng = np.random.default_rng(5)
    labels = bd.gen_three_class(0, 40)
    Tu = np.unique(labels.T)
    idx = np.searchsorted(Tu, labels.T)
    a = 0.0
    for seed in range(100):
        m = zentropy.EnsembleModel.create(3, 0, (int(rng.integers(2, 10)),), seed, gamma=float(rng.uniform(0.5, 10)))
        rows = np.array([zentropy.evaluate_ensemble(m, [], T).p for T in Tu])
        a = max(a, abs(losses.cross_zentropy(labels, m) - losses.cross_entropy(labels, rows[idx])))
    b = 0.0
    for _ in range(10000):
        K = int(rng.integers(1, 9))
        T, k_B, gamma = rng.uniform(0.1, 10), rng.uniform(0.05, 3), rng.uniform(0.3, 20)
        F, S = rng.normal(0, 3, K), rng.uniform(0, 4, K)
        p, logZ = zentropy.probabilities(F, S, T, gamma, k_B)
        st = zentropy.EnsembleState(T, F_cfg=F, S=S, p=p, logZ=logZ, k_B=k_B, gamma=gamma)
        ref = -k_B * T * logZ - T / (gamma**2 * k_B) * np.sum(p * S**2)
        b = max(b, abs(zentropy.total_helmholtz(st) - ref) / max(1.0, abs(ref)))
    c = 0.0
    for seed in range(20):
        m = zentropy.EnsembleModel.create(4, 1, (8,), seed, gamma=1e8)
        for x, T in rng.uniform([-2, 0.5], [2, 4], (5, 2)):
            s = zentropy.evaluate_ensemble(m, [x], T)
            z = -s.F_cfg / (m.k_B * T)
            soft = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
            c = max(c, float(np.max(np.abs(s.p - soft))))
    d = 0.0
    for _ in range(100):
        E = rng.normal(0, 2, (Tu.size, 3))
        counts = np.array([labels.Y[labels.T == T].sum(axis=0) for T in Tu])
        cz = float(_cz_kernel(counts, E, np.zeros_like(E), Tu, 1.0, 5.0)) / labels.M
        z = -E / Tu[:, None]
        logp = z - np.log(np.exp(z - z.max(1, keepdims=True)).sum(1, keepdims=True)) - z.max(1, keepdims=True)
        ce = float(np.mean(np.sum(labels.Y * -logp[idx], axis=1)))
        d = max(d, abs(cz - ce))
    ok = a < 1e-12 and b < 1e-10 and c < 1e-9 and d < 1e-12
    criterion(5, ok, f"(a) {a:.1e} (b) {b:.1e} (c) {c:.1e} (d) {d:.1e}")
    assert ok


def _fd_check(field, X, T, h=1e-5):
    """Worst relative error of AD gradient/Hessian against central differences of F and of the AD gradient."""
    worst, asym = 0.0, 0.0
    n = field.n_x
    for x, t in zip(X, T):
        g, H = field.grad(x, t), field.hess(x, t)
        asym = max(asym, float(np.max(np.abs(H - H.T))) if n > 1 else 0.0)
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            fd = (field.value(x + e, t) - field.value(x - e, t)) / (2 * h)
            worst = max(worst, abs(g[j] - fd) / max(abs(fd), 1e-6))
            fd_col = (field.grad(x + e, t) - field.grad(x - e, t)) / (2 * h)
            worst = max(worst, float(np.max(np.abs(H[:, j] - fd_col) / np.maximum(np.abs(fd_col), 1e-6))))
    return worst, asym


def test_criterion_06_derivatives(criterion, landscape_runs, landscape2d_run):
    rng = np.random.default_rng(6)
    f1 = landscape_runs[0]["field"]
    e1, _ = _fd_check(f1, rng.uniform(-2, 2, (100, 1)), rng.uniform(1, 3, 100))
    f2 = landscape2d_run["field"]
    e2, asym = _fd_check(f2, rng.uniform([-2.5, -2], [2.5, 3], (100, 2)), np.ones(100))
    ok = e1 < 1e-4 and e2 < 1e-4 and asym <= 1e-10
    criterion(6, ok, f"max rel err 1-D {e1:.1e}, 2-D {e2:.1e}; Hessian asymmetry {asym:.1e}")
    assert ok


def test_criterion_07_js_properties(criterion):
    rng = np.random.default_rng(7)
    sym, lo, hi, self_js = 0.0, np.inf, -np.inf, 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        P = losses.GridDensity.from_cells(rng.dirichlet(np.full(n, 0.5)))
        Q = losses.GridDensity.from_cells(rng.dirichlet(np.full(n, 0.5)))
        a, b = losses.js_divergence(P, Q), losses.js_divergence(Q, P)
        sym = max(sym, abs(a - b))
        lo, hi = min(lo, a), max(hi, a)
        self_js = max(self_js, losses.js_divergence(P, P))
    ex_val = losses.js_divergence(losses.GridDensity.from_cells([0.5, 0.5]), losses.GridDensity.from_cells([1.0, 0.0]))
    ok = sym <= 1e-15 and lo >= 0 and hi <= np.log(2) and self_js == 0.0 and abs(ex_val - 0.215762) < 1e-6
    criterion(7, ok, f"asymmetry {sym:.1e}; range [{lo:.3g}, {hi:.4f}]; JS(P,P) max {self_js}; example {ex_val:.7f}")
    assert ok


def test_criterion_08_eos_round_trip(criterion):
    rng = np.random.default_rng(8)
    coef_err, prop_err = 0.0, 0.0
    for _ in range(200):
        V0 = rng.uniform(8, 20)
        p = bd.EosParams.from_properties(V0, rng.uniform(-9, -2), rng.uniform(50, 300), rng.uniform(3, 6))
        V = V0 * (np.linspace(0.9, 1.1, 8) + rng.uniform(-0.01, 0.01, 8))
        q = bd.eos_fit(V, bd.eos_energy(V, p))
        coef_err = max(coef_err, float(np.max(np.abs(q.coeffs - p.coeffs) / np.abs(p.coeffs))))
        want = np.array([p.V0, p.E0, p.B0, p.B_prime])
        got = np.array([q.V0, q.E0, q.B0, q.B_prime])
        prop_err = max(prop_err, float(np.max(np.abs(got - want) / np.abs(want))))
    r1 = bd.table_s1()[0]
    row_ok = (r1.DF, r1.V0, r1.E0, r1.B0, r1.B_prime) == (2, 13.124, 0.0, 177.01, 3.447)
    ok = coef_err < 1e-8 and prop_err < 1e-6 and row_ok
    criterion(8, ok, f"coef rel err {coef_err:.1e}; property rel err {prop_err:.1e}; table row 1 verbatim: {row_ok}")
    assert ok


def test_criterion_09_landscape_2d(criterion, landscape2d_run):
    m, minima = landscape2d_run["metrics"], landscape2d_run["minima"]
    centers = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, 1.5]])
    matched = len(minima) == 3 and all(np.any(np.all(np.abs(minima - c) <= 0.1, axis=1)) for c in centers)
    ok = m["rmse"] <= 0.05 and matched
    found = "; ".join(f"({x:.3f}, {y:.3f})" for x, y in minima)
    criterion(9, ok, f"K={m['selected_K']} RMSE={m['rmse']:.4f}; {len(minima)} minima: {found}")
    assert ok


def _fe3pt_real_config(data_dir: Path) -> dict | None:
    files = sorted(data_dir.glob("*.csv"))
    if not files:
        return None
    user = {"task": "fe3pt", "data": {"path": str(files[0])}, "analysis": {"pressures": [1.01325e-4, 6.53], "pressure_unit": "GPa", "critical_pressure": 6.53}}
    extra = data_dir / "config.json"
    if extra.exists():
        user = ex._merge(user, json.loads(extra.read_text()))
    return ex.validate_config(user)


def test_criterion_10_fe3pt(criterion, tmp_path):
    data_dir = bd.fe3pt_data_dir()
    cfg = _fe3pt_real_config(data_dir) if data_dir else None
    real = cfg is not None
    if not real:
        cfg = ex.validate_config({"task": "fe3pt"})
    out = ex.run_training(cfg)
    summary = ex.run_analysis(cfg, out.model, tmp_path)
    cp = summary["critical_point"]
    if cp["status"] != "ok":
        criterion(10, False, f"critical point solver failed: {cp['error']}")
        pytest.fail(cp["error"])
    if real:
        T_K = cp["T_star"] * cfg["data"]["T_scale"]
        nte = summary["isobars"][f"{cfg['analysis']['pressures'][0]:g}"]["nte"]
        ok = 150 <= T_K <= 175 and nte
        criterion(10, ok, f"Fe3Pt data: T*={T_K:.1f} K at 6.53 GPa; 1-atm NTE: {nte}")
    else:
        oracle = summary["critical_point_oracle"]["T_star"]
        rel = abs(cp["T_star"] - oracle) / oracle
        ok = rel <= 0.05
        criterion(10, ok, f"synthetic F(V,T) (no Fe3Pt data supplied): T*={cp['T_star']:.4f} vs oracle {oracle:.4f} ({100 * rel:.2f}%)")
    assert ok
