import json

import jax.numpy as jnp
import numpy as np
import pytest

from zenn import analysis as an


def quad_field():
    return an.ScalarField(lambda x, T: 0.5 * x[0] ** 2, 1, "quad")


@pytest.fixture(scope="module")
def bench():
    return an.ScalarField.benchmark_1d()


@pytest.mark.parametrize("T", [1.0, 1.7, 2.0, 2.6])
def test_derivative_examples(bench, T):
    assert an.grad_F(bench, [0.0], T)[0] == 0.0
    for x in (-1.3, 0.4, 1.0):
        assert an.grad_F(bench, [x], T)[0] == pytest.approx(T * x * (x * x + T - 2), rel=1e-13, abs=1e-14)
        assert an.hess_F(bench, [x], T)[0, 0] == pytest.approx(T * (3 * x * x + T - 2), rel=1e-13, abs=1e-14)


def test_curvature_examples(bench):
    assert an.hess_F(bench, [0.0], 2.0)[0, 0] == pytest.approx(0.0, abs=1e-14)
    assert an.hess_F(bench, [1.0], 1.0)[0, 0] == pytest.approx(2.0, rel=1e-14)


def test_k_B_scales_derivatives():
    f = an.ScalarField.benchmark_1d(k_B=0.1)
    assert an.hess_F(f, [1.0], 1.0)[0, 0] == pytest.approx(0.2, rel=1e-14)


def test_vectorized_matches_pointwise(bench):
    X = np.linspace(-1, 1, 7)[:, None]
    T = np.linspace(1, 3, 7)
    np.testing.assert_allclose(bench.values(X, T), [bench.value(x, t) for x, t in zip(X, T)], rtol=1e-14)
    np.testing.assert_allclose(bench.grads(X, T)[:, 0], [bench.grad(x, t)[0] for x, t in zip(X, T)], rtol=1e-14)
    np.testing.assert_allclose(bench.hesses(X, T)[:, 0, 0], [bench.hess(x, t)[0, 0] for x, t in zip(X, T)], rtol=1e-14)


def test_grad_T(bench):
    x, T, h = 0.7, 1.4, 1e-6
    fd = (bench.grad([x], T + h) - bench.grad([x], T - h)) / (2 * h)
    np.testing.assert_allclose(bench.grad_T([x], T), fd, rtol=1e-7)


def test_stationary_T3(bench):
    pts = an.stationary_points(bench, 3.0, np.linspace(-2, 2, 21))
    assert len(pts) == 1
    assert abs(pts[0].x[0]) < 1e-12 and pts[0].tag == "stable"


def test_stationary_T1(bench):
    pts = an.stationary_points(bench, 1.0, np.linspace(-2, 2, 21))
    np.testing.assert_allclose([p.x[0] for p in pts], [-1.0, 0.0, 1.0], atol=1e-12)
    assert [p.tag for p in pts] == ["stable", "unstable", "stable"]
    for p in pts:
        assert abs(bench.grad(p.x, 1.0)[0]) < 1e-8


def test_stationary_quadratic_any_seed():
    rng = np.random.default_rng(0)
    pts = an.stationary_points(quad_field(), 1.0, rng.uniform(-50, 50, 10))
    assert len(pts) == 1 and pts[0].tag == "stable" and pts[0].x[0] == 0.0


def test_stationary_no_convergence_is_empty():
    lin = an.ScalarField(lambda x, T: x[0], 1)
    assert an.stationary_points(lin, 1.0, [0.0, 1.0]) == []


def test_stationary_bounds_and_ceiling(bench):
    pts = an.stationary_points(bench, 1.0, np.linspace(-2, 2, 21), bounds=(-0.5, 2.0))
    assert [round(float(p.x[0]), 9) for p in pts] == [0.0, 1.0]
    pts = an.stationary_points(bench, 1.0, np.linspace(-2, 2, 21), max_value=0.1)
    assert [p.tag for p in pts] == ["stable", "stable"]


def test_stationary_2d():
    f = an.ScalarField.benchmark_2d()
    seeds = np.array([[a, b] for a in np.linspace(-2, 2, 9) for b in np.linspace(-1.5, 2.5, 9)])
    ceiling = -1.5
    minima = [p for p in an.stationary_points(f, 1.0, seeds, max_value=ceiling) if p.tag == "stable"]
    centers = np.array([[-1.0, 0.0], [0.0, 1.5], [1.0, 0.0]])
    assert len(minima) == 3
    got = np.array(sorted((p.x for p in minima), key=lambda v: (v[1], v[0])))
    want = centers[[0, 2, 1]]
    np.testing.assert_allclose(got, want, atol=5e-3)


def test_bifurcation_matches_analytic(bench):
    T_grid = np.linspace(1.0, 3.0, 41)
    pts = an.bifurcation_diagram(bench, T_grid, np.linspace(-2, 2, 41))
    for T in T_grid:
        xs = sorted(float(p.x[0]) for p in pts if p.T == T)
        expect = [0.0] if T >= 2 else [-np.sqrt(2 - T), 0.0, np.sqrt(2 - T)]
        np.testing.assert_allclose(xs, expect, atol=1e-8)


def test_stability_flips_at_contour(bench):
    # x = 0 is stable above T = 2 and unstable below
    for T, tag in ((1.9, "unstable"), (2.1, "stable")):
        (p,) = [q for q in an.stationary_points(bench, T, [-0.01, 0.0, 0.01]) if abs(q.x[0]) < 1e-9]
        assert p.tag == tag


def test_bifurcation_csv(bench):
    csv = an.bifurcation_csv(an.bifurcation_diagram(bench, [1.0], [-1.2, 0.1, 1.2]))
    assert csv.splitlines()[0] == "T,x,stability"
    assert len(csv.splitlines()) == 4


def test_contour_matches_parabola(bench):
    lines = an.curvature_zero_contour(bench, (-1, 1), (1, 3), 101)
    pts = np.vstack(lines)
    np.testing.assert_allclose(pts[:, 1], 2 - 3 * pts[:, 0] ** 2, atol=2e-3)
    assert an.contour_rms_vs(lines, lambda x: 2 - 3 * x**2, (-1, 1)) < 1e-3
    # the vertex and the points at x = +-0.5
    assert np.min(np.abs(pts[:, 0])) < 0.02 and np.interp(0.0, *pts[np.argsort(pts[:, 0])].T) == pytest.approx(2.0, abs=1e-3)
    for xv in (-0.5, 0.5):
        k = np.argmin(np.abs(pts[:, 0] - xv))
        assert pts[k, 1] == pytest.approx(1.25, abs=0.03)


def test_contour_points_reevaluate_near_zero(bench):
    lines = an.curvature_zero_contour(bench, (-1, 1), (1, 3), 64)
    pts = np.vstack(lines)
    curv = bench.hesses(pts[:, :1], pts[:, 1])[:, 0, 0]
    # bilinear interpolation error on this grid is below a few 1e-3
    assert np.max(np.abs(curv)) < 5e-3


def test_contour_convex_field_empty():
    f = an.ScalarField(lambda x, T: x[0] ** 2, 1)
    assert an.curvature_zero_contour(f, (-1, 1), (1, 3), 32) == []
    assert an.contour_rms_vs([], lambda x: x, (-1, 1)) == float("inf")


def test_contour_resolution_and_dims(bench):
    with pytest.raises(ValueError):
        an.curvature_zero_contour(bench, (-1, 1), (1, 3), 15)
    with pytest.raises(ValueError):
        an.curvature_zero_contour(an.ScalarField.benchmark_2d(), (-1, 1), (1, 3), 32)


def test_contour_csv(bench):
    text = an.contour_csv(an.curvature_zero_contour(bench, (-1, 1), (1, 3), 32))
    assert text.startswith("line,x,T\n")


@pytest.mark.parametrize("p", [-0.4, 0.0, 0.3, 1.0])
def test_isobar_quadratic(p):
    f = an.ScalarField(lambda x, T: (x[0] - 1) ** 2, 1)
    res = an.isobaric_curve(f, p, [1.0, 2.0, 3.0], (0.0, 2.0))
    np.testing.assert_allclose(res.V, 1 - p / 2, rtol=0, atol=1e-14)
    assert not res.has_nte()


def test_isobar_single_well_tracks_minimum():
    f = an.ScalarField(lambda x, T: (x[0] - 0.1 * T) ** 2 * (1 + T), 1)
    T = np.linspace(1, 3, 11)
    res = an.isobaric_curve(f, 0.0, T, (-1.0, 2.0))
    np.testing.assert_allclose(res.V, 0.1 * T, atol=1e-13)
    np.testing.assert_allclose(res.dVdT(), 0.1, atol=1e-10)


def test_isobar_branch_choice_and_nte(bench):
    # tilted double well: the deeper (negative-x) well wins below T = 2
    f = bench.with_pressure(0.05)
    T = np.linspace(1.0, 3.0, 21)
    res = an.isobaric_curve(f, 0.0, T, (-2.0, 2.0))
    for t, v, roots in zip(res.T, res.V, res.roots):
        assert abs(f.grad([v], t)[0]) < 1e-8
        if t < 1.9:
            assert len(roots) == 3 and v < 0
    # the equilibrium volume rises towards 0 as the wells merge
    assert np.all(np.diff(res.V) > 0)
    assert not res.has_nte()
    neg = an.isobaric_curve(an.ScalarField(lambda x, T: (x[0] + 0.1 * T) ** 2, 1), 0.0, T, (-1.0, 1.0))
    assert neg.has_nte()


def test_isobar_gap_marker():
    f = an.ScalarField(lambda x, T: (x[0] - 5) ** 2, 1)
    res = an.isobaric_curve(f, 0.0, [1.0, 2.0], (0.0, 1.0))
    assert np.all(np.isnan(res.V)) and res.roots == [[], []]
    assert res.to_csv().splitlines()[1] == "1,nan,0"


def test_critical_point_benchmark(bench):
    cp = an.find_critical_point(bench, (-1, 1), (1, 3))
    assert abs(cp.x_star[0]) < 1e-8
    assert cp.T_star == pytest.approx(2.0, abs=1e-8)
    assert abs(abs(cp.xi[0]) - 1) < 1e-10
    R = an.critical_residual(bench, cp.x_star, cp.T_star, cp.xi)
    assert np.max(np.abs(R)) < 1e-8
    doc = json.loads(cp.to_json())
    assert set(doc) == {"x_star", "T_star", "xi", "residual", "iterations"}


def test_critical_point_fold_quadratic_convergence():
    # F = x^3/3 - (T - 1) x: fold at x = 0, T = 1 with a regular Jacobian
    f = an.ScalarField(lambda x, T: x[0] ** 3 / 3 - (T - 1) * x[0], 1)
    cp = an.solve_critical_point(f, ([0.2], 1.3))
    assert abs(cp.x_star[0]) < 1e-12 and cp.T_star == pytest.approx(1.0, abs=1e-12)
    assert cp.iterations <= 8


def test_critical_point_2d():
    # pitchfork along x1 while x2 stays a stiff direction
    def fn(x, T):
        return x[0] ** 4 / 4 + (T - 1.5) * x[0] ** 2 / 2 + (x[1] - 0.3) ** 2 + 0.1 * x[0] * (x[1] - 0.3) ** 2

    f = an.ScalarField(fn, 2)
    cp = an.solve_critical_point(f, ([0.05, 0.25], 1.4))
    np.testing.assert_allclose(cp.x_star, [0.0, 0.3], atol=1e-7)
    assert cp.T_star == pytest.approx(1.5, abs=1e-7)
    np.testing.assert_allclose(np.abs(cp.xi), [1.0, 0.0], atol=1e-6)
    assert np.linalg.norm(cp.xi) == pytest.approx(1.0, abs=1e-10)


def test_critical_point_quadratic_fails():
    with pytest.raises(an.NonConvergenceError) as ei:
        an.solve_critical_point(quad_field(), ([0.3], 1.5))
    assert ei.value.residual > 0
    with pytest.raises(an.NonConvergenceError):
        an.find_critical_point(quad_field(), (-1, 1), (1, 3))


def test_critical_point_maxiter_report():
    f = an.ScalarField(lambda x, T: x[0] ** 3 / 3 - (T - 1) * x[0], 1)
    with pytest.raises(an.NonConvergenceError) as ei:
        an.solve_critical_point(f, ([0.7], 2.0), maxiter=1)
    assert ei.value.iterations == 1 and np.isfinite(ei.value.residual)


def test_with_pressure_shifts_gradient(bench):
    g = bench.with_pressure(0.3)
    assert g.grad([0.4], 1.5)[0] == pytest.approx(bench.grad([0.4], 1.5)[0] + 0.3, rel=1e-14)
    np.testing.assert_array_equal(g.hess([0.4], 1.5), bench.hess([0.4], 1.5))


def test_field_from_jax_callable_in_2d():
    f = an.ScalarField(lambda x, T: T * jnp.sum(x**2) + x[0] * x[1], 2)
    np.testing.assert_allclose(f.hess([0.1, 0.2], 2.0), [[4.0, 1.0], [1.0, 4.0]])
