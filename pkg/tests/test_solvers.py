import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from slotalign.objective import Coupling
from slotalign.solvers import (
    SinkhornConvergenceError,
    SinkhornSettings,
    kl_divergence,
    kl_prox_step,
    project_simplex,
    prox_transport,
    round_to_marginals,
    sinkhorn,
    update_alpha,
)


def bisection_projection(v, iters=200):
    """Projection via bisection on the threshold of sum(max(v - t, 0)) = 1."""
    lo, hi = v.min() - 1.0, v.max()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(v - mid, 0).sum() > 1:
            lo = mid
        else:
            hi = mid
    return np.maximum(v - 0.5 * (lo + hi), 0)


def grid_projection(v, steps=400):
    """Brute-force nearest point over a grid on the 2-simplex."""
    best, arg = np.inf, None
    for a in np.linspace(0, 1, steps + 1):
        p = np.array([a, 1 - a])
        d = np.sum((p - v) ** 2)
        if d < best:
            best, arg = d, p
    return arg


class TestProjectSimplex:
    @pytest.mark.parametrize("v,expected", [
        ([0.5, 0.5], [0.5, 0.5]),
        ([2.0, 0.0], [1.0, 0.0]),
        ([0.6, 0.8], [0.4, 0.6]),
        ([-1.0, -1.0, -1.0], [1 / 3, 1 / 3, 1 / 3]),
    ])
    def test_examples(self, v, expected):
        np.testing.assert_allclose(project_simplex(v), expected, atol=1e-15)

    def test_grid_oracle_2d(self, rng):
        for _ in range(50):
            v = rng.uniform(-2, 2, size=2)
            np.testing.assert_allclose(project_simplex(v), grid_projection(v), atol=2.5e-3)

    def test_bisection_oracle(self, rng):
        for _ in range(200):
            v = rng.standard_normal(int(rng.integers(1, 17))) * 3
            np.testing.assert_allclose(project_simplex(v), bisection_projection(v), atol=1e-10)

    def test_feasible_unchanged(self, rng):
        for _ in range(50):
            p = rng.dirichlet(np.ones(int(rng.integers(1, 10))))
            np.testing.assert_allclose(project_simplex(p), p, atol=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            project_simplex([])

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e3, 1e3)))
    @settings(max_examples=200, deadline=None)
    def test_on_simplex_and_idempotent(self, v):
        p = project_simplex(v)
        assert p.min() >= 0
        assert p.sum() == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(project_simplex(p), p, atol=1e-9)

    def test_optimality_against_vertices(self, rng):
        # the projection is no farther from v than any random simplex point
        for _ in range(100):
            v = rng.standard_normal(5)
            p = project_simplex(v)
            for q in rng.dirichlet(np.ones(5), size=20):
                assert np.sum((p - v) ** 2) <= np.sum((q - v) ** 2) + 1e-12


class TestUpdateAlpha:
    def test_zero_gradient(self):
        alpha = np.array([0.25, 0.75, 0.5, 0.5])
        np.testing.assert_array_equal(update_alpha(alpha, np.zeros(4), 1.0), alpha)

    def test_halves_projected_separately(self):
        out = update_alpha([0.5, 0.5, 0.5, 0.5], [-1.0, 1.0, 0.0, 0.0], 0.1)
        np.testing.assert_allclose(out, [0.6, 0.4, 0.5, 0.5], atol=1e-15)

    def test_large_step_reaches_vertex(self):
        out = update_alpha([0.5, 0.5, 0.5, 0.5], [-1.0, 1.0, 1.0, -1.0], 10.0)
        np.testing.assert_allclose(out, [1.0, 0.0, 0.0, 1.0], atol=1e-15)

    def test_errors(self):
        with pytest.raises(ValueError):
            update_alpha([0.5, 0.5], [0.0, 0.0], 0.0)
        with pytest.raises(ValueError):
            update_alpha([1.0, 0.0, 1.0], [0.0, 0.0, 0.0], 1.0)


def random_coupling(rng, n, m):
    mu = rng.random(n) + 0.1
    nu = rng.random(m) + 0.1
    mu /= mu.sum()
    nu /= nu.sum()
    return Coupling(np.outer(mu, nu), mu, nu)


class TestSinkhorn:
    def test_zero_gradient_keeps_coupling(self, rng):
        pi = random_coupling(rng, 5, 4)
        out = kl_prox_step(pi, np.zeros((5, 4)), 0.5)
        np.testing.assert_allclose(out.plan, pi.plan, atol=1e-15)

    def test_uniform_kernel(self):
        pi = Coupling.uniform(3, 4)
        out = kl_prox_step(pi, np.full((3, 4), 2.0), 1.0)
        np.testing.assert_allclose(out.plan, np.full((3, 4), 1 / 12), atol=1e-15)

    def test_two_by_two_closed_form(self):
        tight = SinkhornSettings(max_iter=10_000, tol=1e-14)
        plan, res, _, _ = sinkhorn(np.log([[2.0, 1.0], [1.0, 2.0]]), [0.5, 0.5], [0.5, 0.5], tight)
        np.testing.assert_allclose(plan, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], atol=1e-10)
        assert res <= 1e-14

    def test_marginals(self, rng):
        for _ in range(50):
            n, m = (int(v) for v in rng.integers(1, 30, size=2))
            pi = random_coupling(rng, n, m)
            out = kl_prox_step(pi, rng.standard_normal((n, m)), 1.0)
            assert out.marginal_error() <= 1e-6
            assert out.plan.min() >= 0

    def test_dense_and_log_domain_agree(self, rng):
        tight = SinkhornSettings(max_iter=5000, tol=1e-13)
        for _ in range(20):
            pi = random_coupling(rng, 6, 7)
            grad = rng.standard_normal((6, 7))
            a, _, _, _ = prox_transport(pi, grad, 2.0, tight)
            b, _, _, _ = prox_transport(pi, grad, 2.0, SinkhornSettings(max_iter=5000, tol=1e-13, log_domain=True))
            np.testing.assert_allclose(a.plan, b.plan, atol=1e-8)

    def test_underflowing_kernel_uses_log_domain(self):
        pi = Coupling.uniform(2, 2)
        out = kl_prox_step(pi, np.array([[0.0, 1.0], [1.0, 0.0]]), 2000.0)
        np.testing.assert_allclose(out.plan, [[0.5, 0.0], [0.0, 0.5]], atol=1e-12)

    def test_warm_start_same_answer(self, rng):
        pi = random_coupling(rng, 8, 8)
        grad = rng.standard_normal((8, 8))
        tight = SinkhornSettings(max_iter=5000, tol=1e-13)
        cold, _, _, log_v = prox_transport(pi, grad, 3.0, tight)
        warm, _, it, _ = prox_transport(pi, grad, 3.0, tight, log_v)
        np.testing.assert_allclose(warm.plan, cold.plan, atol=1e-12)
        assert it <= 2

    def test_surrogate_decrease(self, rng):
        """The prox step minimizes <g, p> + KL(p||pi)/eta over the polytope."""
        eta = 0.7
        tight = SinkhornSettings(max_iter=5000, tol=1e-13)
        for _ in range(20):
            pi = random_coupling(rng, 4, 5)
            g = rng.standard_normal((4, 5))
            p = kl_prox_step(pi, g, eta, tight).plan

            def surrogate(q):
                return np.sum(g * q) + kl_divergence(q, pi.plan) / eta

            assert surrogate(p) <= surrogate(pi.plan) + 1e-12
            for _ in range(10):
                other = kl_prox_step(random_coupling(rng, 4, 5).with_plan(pi.plan), rng.standard_normal((4, 5)),
                                     1.0, tight).plan
                assert surrogate(p) <= surrogate(other) + 1e-10

    def test_non_convergence_raises_with_iterate(self, rng):
        pi = random_coupling(rng, 10, 10)
        with pytest.raises(SinkhornConvergenceError) as info:
            kl_prox_step(pi, 5 * rng.standard_normal((10, 10)), 1.0, SinkhornSettings(max_iter=1, tol=1e-15))
        assert info.value.coupling.shape == (10, 10)
        assert info.value.iterations == 1

    def test_errors(self):
        pi = Coupling.uniform(2, 2)
        with pytest.raises(ValueError):
            kl_prox_step(pi, np.zeros((2, 3)), 1.0)
        with pytest.raises(ValueError):
            kl_prox_step(pi, np.zeros((2, 2)), 0.0)
        with pytest.raises(ValueError):
            SinkhornSettings(tol=0)


class TestRounding:
    def test_feasible_unchanged(self, rng):
        pi = random_coupling(rng, 5, 6)
        np.testing.assert_allclose(round_to_marginals(pi.plan, pi.mu, pi.nu), pi.plan, atol=1e-16)

    def test_exact_marginals_and_small_change(self, rng):
        for _ in range(50):
            pi = random_coupling(rng, 7, 5)
            noisy = pi.plan * np.exp(0.05 * rng.standard_normal(pi.shape))
            err = max(np.abs(noisy.sum(1) - pi.mu).sum(), np.abs(noisy.sum(0) - pi.nu).sum())
            out = round_to_marginals(noisy, pi.mu, pi.nu)
            assert out.min() >= 0
            np.testing.assert_allclose(out.sum(1), pi.mu, atol=1e-15)
            np.testing.assert_allclose(out.sum(0), pi.nu, atol=1e-15)
            assert np.abs(out - noisy).sum() <= 2 * err + 1e-14


class TestKL:
    def test_zero_for_equal(self, rng):
        p = rng.random((3, 3))
        assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-15)

    def test_nonnegative(self, rng):
        for p, q in itertools.islice(zip(rng.random((20, 4)), rng.random((20, 4)) + 0.01), 20):
            assert kl_divergence(p, q) >= -1e-15
