import jax
import numpy as np
import pytest

from zenn import losses as L
from zenn import netcore as nc
from zenn import zentropy as zt
from zenn.benchdata import gen_three_class


def cells(v):
    return L.GridDensity.from_cells(np.asarray(v, dtype=float))


def test_cross_entropy_examples():
    Y = np.eye(3)[[0, 2, 1]]
    assert L.cross_entropy(Y, Y) == 0.0
    lab = L.LabeledSet([1.0, 2.0], np.eye(2)[[0, 1]])
    assert L.cross_entropy(lab, np.full((2, 2), 0.5)) == pytest.approx(np.log(2), rel=1e-15)
    assert L.cross_entropy(np.array([[1.0, 0.0]]), np.array([[0.75, 0.25]])) == pytest.approx(0.287682, abs=1e-6)
    with pytest.raises(ValueError):
        L.cross_entropy(np.array([[1.0, 0.0]]), np.array([[0.7, 0.2]]))


def test_cross_entropy_log_floor():
    assert np.isfinite(L.cross_entropy(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])))


def test_labeled_set_rejects_non_one_hot():
    with pytest.raises(ValueError):
        L.LabeledSet([1.0], [[1.0, 1.0]])


def _zero_e_model(K=2):
    spec = nc.LayerSpec(1, (3,), 1)
    p = nc.init_params(spec, 0)
    z = nc.NetworkParams(spec, tuple(np.zeros_like(W) for W in p.weights), p.biases)
    return zt.EnsembleModel((z,) * K, (z,) * K)


def test_cross_zentropy_equal_logits_is_ln2():
    labels = L.LabeledSet([1.0, 2.0, 3.0], np.eye(2)[[0, 1, 1]])
    assert L.cross_zentropy(labels, _zero_e_model()) == pytest.approx(np.log(2), rel=1e-14)


def test_cross_zentropy_equals_cross_entropy_on_probabilities():
    labels = gen_three_class(1, 40)
    for seed in range(10):
        m = zt.EnsembleModel.create(3, 0, (8,), seed=seed)
        P = np.array([zt.evaluate_ensemble(m, [], T).p for T in labels.T])
        assert L.cross_zentropy(labels, m) == pytest.approx(L.cross_entropy(labels, P), abs=1e-12)
        assert L.cross_zentropy(labels, m) >= 0


def test_kl_examples():
    assert L.kl_divergence(cells([0.3, 0.7]), cells([0.3, 0.7])) == 0.0
    assert L.kl_divergence(cells([1.0, 0.0]), cells([0.75, 0.25])) == pytest.approx(np.log(4 / 3), abs=1e-12)
    with pytest.raises(L.DivergenceError):
        L.kl_divergence(cells([0.5, 0.5]), cells([1.0, 0.0]))
    with pytest.raises(L.GridMismatchError):
        L.kl_divergence(cells([0.5, 0.5]), cells([0.2, 0.3, 0.5]))


def test_kl_nonnegative_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 10))
        assert L.kl_divergence(cells(rng.dirichlet(np.ones(n))), cells(rng.dirichlet(np.ones(n)))) >= -1e-15


def test_js_examples():
    assert L.js_divergence(cells([0.2, 0.8]), cells([0.2, 0.8])) == 0.0
    assert L.js_divergence(cells([1.0, 0.0]), cells([0.0, 1.0])) == pytest.approx(np.log(2), rel=1e-15)
    # hand value: 0.5*(0.5 ln(2/3) + 0.5 ln 2) + 0.5 ln(4/3)
    hand = 0.5 * (0.5 * np.log(0.5 / 0.75) + 0.5 * np.log(0.5 / 0.25)) + 0.5 * np.log(1 / 0.75)
    v = L.js_divergence(cells([0.5, 0.5]), cells([1.0, 0.0]))
    assert v == pytest.approx(hand, rel=1e-14)
    assert v == pytest.approx(0.215762, abs=1e-6)


def test_grid_density_validation():
    with pytest.raises(ValueError):
        cells([0.5, 0.6])
    with pytest.raises(ValueError):
        L.GridDensity((np.array([0.0, 0.0, 1.0]),), np.ones(3), np.ones(3) / 3)


def test_histogram_density_smoothing_avoids_support_violation():
    axes = (np.linspace(-1, 1, 11),)
    P = L.histogram_density(np.random.default_rng(0).normal(0, 0.1, 500), axes)
    Q = L.histogram_density(np.random.default_rng(1).normal(0.8, 0.05, 500), axes)
    assert np.all(P.values > 0)
    assert np.isfinite(L.kl_divergence(P, Q))


def test_model_density_flat_and_gaussian():
    x = np.linspace(-8, 8, 1601)
    d = L.density_from_energy((x,), np.full(x.size, 3.3), 1.0)
    np.testing.assert_allclose(d.values, d.values[0], rtol=1e-14)
    g = L.density_from_energy((x,), x**2 / 2, 1.0)
    np.testing.assert_allclose(g.values, np.exp(-(x**2) / 2) / np.sqrt(2 * np.pi), atol=1e-4)


def test_model_density_deeper_well_denser():
    x = np.linspace(-2, 2, 401)
    F = (x**2 - 1) ** 2 + 0.3 * x
    d = L.density_from_energy((x,), F, 1.0)
    left, right = d.values[np.argmin(np.abs(x + 1))], d.values[np.argmin(np.abs(x - 1))]
    assert left > right


def test_model_density_shift_invariant():
    m = zt.EnsembleModel.create(2, 1, (8,), seed=0)
    x = (np.linspace(-2, 2, 51),)
    a = L.model_density(m, x, 1.3)
    F = L.model_density(m, x, 1.3)
    assert np.allclose(a.values, F.values, rtol=0, atol=0)
    q = L.density_from_energy(x, np.sin(x[0]), 1.0)
    r = L.density_from_energy(x, np.sin(x[0]) + 123.4, 1.0)
    np.testing.assert_allclose(q.values, r.values, rtol=1e-12)


def test_convexity_penalty_examples():
    V = np.linspace(0, 1, 101)
    assert L.convexity_penalty(lambda v, t: v**2, V, 1.0, 1.0) == 0.0
    assert L.convexity_penalty(lambda v, t: -(v**2), V, 1.0, 1.0) == pytest.approx(2.0, rel=1e-12)
    assert L.convexity_penalty(lambda v, t: -(v**2), V, 1.0, 2e-4) == pytest.approx(2 * L.convexity_penalty(lambda v, t: -(v**2), V, 1.0, 1e-4), rel=1e-14)
    with pytest.raises(ValueError):
        L.convexity_penalty(lambda v, t: v, V[:2], 1.0, 1.0)


def test_convexity_penalty_on_ensemble_matches_finite_differences():
    m = zt.EnsembleModel.create(2, 1, (8,), seed=2)
    V = np.linspace(-1, 1, 41)
    got = L.convexity_penalty(m, V, 1.2, 1.0)
    h = 1e-4
    f = zt.config_helmholtz_fn(m)
    total = 0.0
    w = L.trapezoid_weights((V,))
    for v, wi in zip(V, w):
        d2 = (np.asarray(f([v + h], 1.2)) - 2 * np.asarray(f([v], 1.2)) + np.asarray(f([v - h], 1.2))) / h**2
        total += wi * np.sum(np.maximum(-d2, 0))
    assert got == pytest.approx(total, rel=1e-4, abs=1e-8)


def _fd_check(loss, tree, rng, n=6):
    g = jax.grad(loss)(tree)
    leaves, treedef = jax.tree_util.tree_flatten(tree)
    gl = jax.tree_util.tree_leaves(g)
    for _ in range(n):
        li = int(rng.integers(len(leaves)))
        idx = tuple(int(rng.integers(s)) for s in leaves[li].shape)
        h = 1e-5

        def shifted(d):
            new = [np.array(a) for a in leaves]
            new[li][idx] += d
            return float(loss(jax.tree_util.tree_unflatten(treedef, new)))

        fd = (shifted(h) - shifted(-h)) / (2 * h)
        an = float(np.asarray(gl[li])[idx])
        assert abs(an - fd) <= 1e-4 * max(abs(fd), 1e-3), (an, fd)


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    labels = gen_three_class(2, 30)
    x = np.linspace(-2, 2, 21)
    T = np.array([1.0, 2.0, 3.0])
    F = (x[None, :] ** 2 / 2 + (T[:, None] - 2) / 2) ** 2 * T[:, None]
    data = L.SlicedDensity.from_energy((x,), T, F)
    for seed in range(20):
        cz_m = zt.EnsembleModel.create(3, 0, (4,), seed=seed)
        _fd_check(L.cz_objective(labels, 1.0, 5.0), cz_m.to_tree(), rng, 2)
        js_m = zt.EnsembleModel.create(2, 1, (4,), seed=seed)
        _fd_check(L.js_objective(data, 1.0, 5.0, lam=1e-2 * (seed % 2)), js_m.to_tree(), rng, 2)


def test_js_objective_is_mean_slice_divergence():
    x = np.linspace(-2, 2, 31)
    T = np.array([1.0, 2.5])
    F = np.stack([np.cos(x), x**2])
    data = L.SlicedDensity.from_energy((x,), T, F)
    m = zt.EnsembleModel.create(2, 1, (5,), seed=1)
    direct = np.mean([L.js_divergence(data.slice(i), L.model_density(m, (x,), t)) for i, t in enumerate(T)])
    assert float(L.js_objective(data, m.k_B, m.gamma)(m.to_tree())) == pytest.approx(direct, rel=1e-12)
