import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmlgcl import ndmath as nd
from nmlgcl import objectives as obj
from nmlgcl.errors import ArgumentError, ContractError, ShapeError
from nmlgcl.ndmath import grad_check, ops

seeds = st.integers(0, 2**32 - 1)
S2 = np.eye(2)


def val(t):
    return t.item() if hasattr(t, "item") else float(t)


def random_metric(rng, n, low=0.05):
    m = rng.uniform(low, 1.0, (n, n))
    return m / m.sum(axis=1, keepdims=True)


def random_similarity(rng, n):
    return np.tanh(rng.standard_normal((n, n)))


# ----------------------------------------------------------------- examples


def test_infonce_two_node():
    assert val(obj.infonce_loss(S2, 1.0)) == pytest.approx(math.log(1 + math.e**-1), abs=1e-12)
    assert val(obj.infonce_loss(S2, 1.0)) == pytest.approx(0.31326, abs=1e-5)


def test_infonce_indistinguishable_positive():
    assert val(obj.infonce_loss(np.full((2, 2), 0.4), 0.7)) == pytest.approx(math.log(2), abs=1e-12)


@pytest.mark.parametrize("tau", [0.2, 0.5, 1.7])
def test_infonce_temperature_cancels(tau):
    s = random_similarity(np.random.default_rng(1), 5)
    assert val(obj.infonce_loss(s * tau, tau)) == pytest.approx(val(obj.infonce_loss(s, 1.0)), abs=1e-12)


def test_nml_infonce_equivalent_two_node():
    m = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(obj.infonce_equivalent_metric(2), m)
    assert val(obj.nml_loss(S2, m, 1.0)) == pytest.approx(0.31326, abs=1e-5)


def test_nml_uniform_two_node():
    expected = -math.log(math.e / (1.5 * math.e + 0.5))
    assert val(obj.nml_loss(S2, obj.uniform_metric(2), 1.0)) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.521136, abs=1e-6)


def test_nml_most_similar_column_maximizes_loss():
    rng = np.random.default_rng(3)
    for _ in range(5):
        s = random_similarity(rng, 3)
        for i in range(3):
            best, best_row = -math.inf, None
            grid = np.linspace(0, 1, 101)
            for a, b in itertools.product(grid, grid):
                if a + b > 1 + 1e-12:
                    continue
                row = np.array([a, b, max(0.0, 1 - a - b)])
                f = obj.anchor_inner_value(s[i], i, np.maximum(row, 1e-300), 1.0, 0.0)
                if f > best:
                    best, best_row = f, row
            assert np.argmax(best_row) == np.argmax(s[i])
            assert best_row.max() == pytest.approx(1.0)


def test_nml_rejects_non_stochastic():
    with pytest.raises(ContractError):
        obj.nml_loss(S2, np.full((2, 2), 0.6), 1.0)
    with pytest.raises(ShapeError):
        obj.nml_loss(S2, np.full((3, 3), 1 / 3), 1.0)


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_tau_validation(tau):
    with pytest.raises(ArgumentError):
        obj.infonce_loss(S2, tau)
    with pytest.raises(ArgumentError):
        obj.nml_loss(S2, obj.uniform_metric(2), tau)


def test_kl_examples():
    assert val(obj.kl_regularizer(obj.uniform_metric(4))) == pytest.approx(0.0, abs=1e-14)
    m = np.array([[0.75, 0.25], [0.75, 0.25]])
    expected = 0.5 * math.log(0.5 / 0.75) + 0.5 * math.log(0.5 / 0.25)
    assert val(obj.kl_regularizer(m)) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.14384, abs=1e-5)


def test_kl_clamp_is_finite_and_counted():
    m = np.array([[1.0, 0.0], [0.5, 0.5]])
    before = ops.events["log_clamp"]
    v = val(obj.kl_regularizer(m))
    assert math.isfinite(v) and v > 0
    assert ops.events["log_clamp"] - before == 1


def test_inner_objective_composition():
    m_u = obj.uniform_metric(2)
    assert val(obj.inner_objective(S2, m_u, 1.0, 0.0)) == val(obj.nml_loss(S2, m_u, 1.0))
    assert val(obj.inner_objective(S2, m_u, 1.0, 0.3)) == pytest.approx(val(obj.nml_loss(S2, m_u, 1.0)), abs=1e-14)
    m = np.array([[0.75, 0.25], [0.25, 0.75]])
    nml, kl = val(obj.nml_loss(S2, m, 1.0)), val(obj.kl_regularizer(m))
    assert kl == pytest.approx(0.14384, abs=1e-5)
    assert val(obj.inner_objective(S2, m, 1.0, 0.1)) == pytest.approx(nml + 0.1 * kl, abs=1e-12)
    with pytest.raises(ArgumentError):
        obj.inner_objective(S2, m, 1.0, -0.1)


def test_loss_report_consistency():
    rng = np.random.default_rng(0)
    s, m = random_similarity(rng, 6), random_metric(rng, 6)
    r = obj.loss_report(s, m, 0.5, 0.2)
    assert abs(r.inner_objective - (r.nml_loss + 0.2 * r.kl_reg)) < 1e-12
    assert (r.i_nml, r.i_nce) == pytest.approx(obj.mi_estimates(s, m, 0.5), abs=1e-15)


def test_hinge_uniform_dominant_positive():
    s = np.array([[1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
    approx, exact = obj.hinge_diagnostic(s, obj.uniform_metric(3), 0.05, 0)
    assert approx == 0.0
    assert exact >= 0


def test_hinge_bounds_random():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = 3
        s, m = random_similarity(rng, n), random_metric(rng, n)
        tau = rng.uniform(0.1, 1.0)
        for i in range(n):
            approx, exact = obj.hinge_diagnostic(s, m, tau, i)
            assert approx <= exact + math.log(n + 1) + 1e-12
            assert abs(approx - exact) <= math.log(4) + 1e-12


def test_mi_examples():
    i_nml, i_nce = obj.mi_estimates(S2, obj.infonce_equivalent_metric(2), 1.0)
    assert i_nce == pytest.approx(-math.log(1 + math.e**-1) + math.log(2), abs=1e-12)
    assert i_nce == pytest.approx(0.37989, abs=1e-5)
    assert i_nml == pytest.approx(i_nce, abs=1e-15)
    _, flat = obj.mi_estimates(np.full((2, 2), 0.3), obj.uniform_metric(2), 1.0)
    assert flat == pytest.approx(0.0, abs=1e-15)


# ----------------------------------------------------------------- properties


@settings(max_examples=200, deadline=None)
@given(seed=seeds, n=st.integers(2, 32), tau=st.floats(0.05, 5.0))
def test_reduction_identity(seed, n, tau):
    s = random_similarity(np.random.default_rng(seed), n)
    m = obj.infonce_equivalent_metric(n)
    assert abs(val(obj.nml_loss(s, m, tau)) - val(obj.infonce_loss(s, tau))) < 1e-12


def naive_nml(s, m, tau):
    n = len(s)
    e = np.exp(s / tau)
    per = [-math.log(e[i, i] / (e[i, i] + (n - 1) * sum(m[i, j] * e[i, j] for j in range(n)))) for i in range(n)]
    return sum(per) / n


def naive_infonce(s, tau):
    e = np.exp(s / tau)
    return sum(-math.log(e[i, i] / e[i].sum()) for i in range(len(s))) / len(s)


def naive_kl(m):
    n = len(m)
    return sum((n - 1) * sum((1 / n) * math.log((1 / n) / m[i, j]) for j in range(n)) for i in range(n)) / n


@settings(max_examples=100, deadline=None)
@given(seed=seeds, n=st.integers(2, 16), tau=st.floats(0.2, 2.0))
def test_stabilized_matches_naive(seed, n, tau):
    rng = np.random.default_rng(seed)
    s, m = random_similarity(rng, n), random_metric(rng, n)
    assert val(obj.nml_loss(s, m, tau)) == pytest.approx(naive_nml(s, m, tau), abs=1e-9)
    assert val(obj.infonce_loss(s, tau)) == pytest.approx(naive_infonce(s, tau), abs=1e-9)
    assert val(obj.kl_regularizer(m)) == pytest.approx(naive_kl(m), abs=1e-9)


def test_stabilized_survives_small_tau():
    s = np.array([[1.0, -1.0], [0.5, 1.0]])
    v = val(obj.nml_loss(s, obj.uniform_metric(2), 1e-3))
    assert math.isfinite(v)


@settings(max_examples=40, deadline=None)
@given(seed=seeds, n=st.integers(2, 6), which=st.sampled_from(["nml", "infonce", "kl", "inner"]))
def test_objective_gradients(seed, n, which):
    rng = np.random.default_rng(seed)
    tau, alpha = float(rng.uniform(0.3, 1.5)), float(rng.uniform(0.01, 0.5))
    params = {}
    if which != "kl":
        params["s"] = random_similarity(rng, n)
    if which != "infonce":
        # m parameterized through a softmax so perturbations stay on the simplex
        params["logits"] = rng.standard_normal((n, n))

    def build(p):
        m = nd.row_softmax(p["logits"]) if "logits" in p else None
        if which == "nml":
            return obj.nml_loss(p["s"], m, tau)
        if which == "infonce":
            return obj.infonce_loss(p["s"], tau)
        if which == "kl":
            return obj.kl_regularizer(m)
        return obj.inner_objective(p["s"], m, tau, alpha)

    err, where = grad_check(build, params, eps=1e-5, return_details=True)
    assert err < 1e-5, where


@settings(max_examples=40, deadline=None)
@given(seed=seeds, n=st.integers(2, 8))
def test_gradient_in_m_closed_form(seed, n):
    # a raw m leaf cannot be perturbed without leaving the simplex, so the tape
    # gradient is compared with the hand derivative instead
    rng = np.random.default_rng(seed)
    s, m = random_similarity(rng, n), random_metric(rng, n)
    tau, alpha = float(rng.uniform(0.3, 1.5)), float(rng.uniform(0.01, 0.5))
    tape = nd.Tape()
    leaf = tape.leaf(m)
    grad = tape.backward(obj.inner_objective(s, leaf, tau, alpha))[leaf]
    e = np.exp(s / tau)
    d = np.diag(e) + (n - 1) * (m * e).sum(axis=1)
    expected = ((n - 1) * e / d[:, None] - alpha * (n - 1) / (n * m)) / n
    np.testing.assert_allclose(grad, expected, rtol=1e-10, atol=1e-14)


# ----------------------------------------------------------------- oracle


def test_oracle_symmetric_row_is_uniform():
    s = np.full((5, 5), 0.3)
    m = obj.optimal_metric_oracle(s, 0.5, 0.1, 2)
    np.testing.assert_allclose(m, 0.2, atol=1e-8)


@pytest.mark.parametrize("seed", range(4))
def test_oracle_two_node_grid(seed):
    rng = np.random.default_rng(seed)
    s = random_similarity(rng, 2)
    tau, alpha = rng.uniform(0.3, 1.0), rng.uniform(0.05, 0.5)
    grid = np.linspace(1e-5, 1 - 1e-5, 100_000)
    rows = np.stack([grid, 1 - grid], axis=1)
    a = s[0] / tau
    d = np.exp(a[0]) + rows @ np.exp(a)
    f = np.log(d) - a[0] + alpha * 0.5 * (-2 * math.log(2) - np.log(rows).sum(axis=1))
    m = obj.optimal_metric_oracle(s, tau, alpha, 0)
    assert m[0] == pytest.approx(grid[np.argmin(f)], abs=1e-4)


def inversely_ordered(s_row, m_row, tol=1e-9):
    for j, k in itertools.combinations(range(len(s_row)), 2):
        if s_row[j] > s_row[k] + 1e-12 and m_row[j] > m_row[k] + tol:
            return False
    return True


@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_oracle_monotone_and_optimal(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    s = random_similarity(rng, n)
    tau, alpha = float(rng.uniform(0.3, 1.0)), float(10 ** rng.uniform(-3, 0))
    i = int(rng.integers(n))
    m = obj.optimal_metric_oracle(s, tau, alpha, i)
    assert m.sum() == pytest.approx(1.0, abs=1e-12) and np.all(m > 0)
    assert inversely_ordered(s[i], m)
    f = obj.anchor_inner_value(s[i], i, m, tau, alpha)
    assert f <= obj.anchor_inner_value(s[i], i, np.full(n, 1 / n), tau, alpha) + 1e-12
    for _ in range(20):
        assert f <= obj.anchor_inner_value(s[i], i, rng.dirichlet(np.ones(n)), tau, alpha) + 1e-12


@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_bound_ordering_at_unregularized_optimum(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    s, tau = random_similarity(rng, n), float(rng.uniform(0.1, 2.0))
    m = obj.oracle_metric_matrix(s, tau, 0.0)
    per_nml = obj.nml_anchor_losses(s, m, tau).value.ravel()
    per_nce = obj.infonce_anchor_losses(s, tau).value.ravel()
    assert np.all(per_nml <= per_nce + 1e-12)


def test_oracle_vertex_is_least_similar_column():
    s = np.array([[1.0, 0.2, -0.5], [0.0, 1.0, 0.3], [0.1, 0.1, 1.0]])
    np.testing.assert_array_equal(obj.optimal_metric_oracle(s, 0.5, 0.0, 0), [0.0, 0.0, 1.0])


def test_oracle_validation():
    with pytest.raises(ArgumentError):
        obj.optimal_metric_oracle(np.zeros((17, 17)), 0.5, 0.1, 0)
    with pytest.raises(ArgumentError):
        obj.optimal_metric_oracle(S2, 0.5, -1.0, 0)
