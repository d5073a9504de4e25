"""Joint Gromov-Wasserstein objective over couplings and basis weights.

With symmetric bases, mixed costs ``D_s = sum_q beta_s[q] D_s^q`` (likewise
``D_t``) and a coupling ``pi`` with marginals ``mu``, ``nu``::

    F = sum_ij D_s[i,j]^2 mu_i mu_j + sum_kl D_t[k,l]^2 nu_k nu_l
        - 2 tr(D_s pi D_t pi^T)

For uniform marginals the first two terms are ``||D_s||_F^2 / n^2`` and
``||D_t||_F^2 / m^2``.  ``F`` is quadratic in the weights, so everything
reduces to two K x K Gram matrices (fixed per problem) and one K x K cross
matrix ``C[p, q] = <D_s^p pi, pi D_t^q>`` per coupling.

Reduction order: the cross matrix is accumulated basis by basis in index
order, so results are deterministic for a given input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bases import StructureBasisSet

SIMPLEX_ATOL = 1e-9


@dataclass(frozen=True, eq=False)
class Coupling:
    """Transport plan ``plan`` (n x m) with prescribed marginals ``mu``, ``nu``."""

    plan: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        plan = np.asarray(self.plan, dtype=np.float64)
        mu = np.asarray(self.mu, dtype=np.float64)
        nu = np.asarray(self.nu, dtype=np.float64)
        if plan.ndim != 2 or plan.shape != (mu.shape[0], nu.shape[0]):
            raise ValueError(f"plan shape {plan.shape} does not match marginals {mu.shape}, {nu.shape}")
        object.__setattr__(self, "plan", plan)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)

    @classmethod
    def uniform(cls, n: int, m: int) -> "Coupling":
        return cls(np.full((n, m), 1.0 / (n * m)), np.full(n, 1.0 / n), np.full(m, 1.0 / m))

    @property
    def shape(self):
        return self.plan.shape

    def marginal_error(self) -> float:
        """Largest absolute deviation of row/column sums from the marginals."""
        rows = np.abs(self.plan.sum(axis=1) - self.mu)
        cols = np.abs(self.plan.sum(axis=0) - self.nu)
        return float(max(rows.max(initial=0.0), cols.max(initial=0.0)))

    def with_plan(self, plan) -> "Coupling":
        return Coupling(plan, self.mu, self.nu)


@dataclass(frozen=True, eq=False)
class Weights:
    """Simplex weights over the source and target bases."""

    beta_s: np.ndarray
    beta_t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta_s", np.asarray(self.beta_s, dtype=np.float64))
        object.__setattr__(self, "beta_t", np.asarray(self.beta_t, dtype=np.float64))

    @classmethod
    def uniform(cls, K: int) -> "Weights":
        return cls(np.full(K, 1.0 / K), np.full(K, 1.0 / K))

    @classmethod
    def from_alpha(cls, alpha, K: int) -> "Weights":
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != (2 * K,):
            raise ValueError(f"alpha must have length {2 * K}")
        return cls(alpha[:K].copy(), alpha[K:].copy())

    @property
    def alpha(self) -> np.ndarray:
        return np.concatenate([self.beta_s, self.beta_t])

    @property
    def K(self) -> int:
        return self.beta_s.shape[0]


def _check_simplex(beta, K):
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (K,):
        raise ValueError(f"weight vector has length {beta.shape[0] if beta.ndim else 0}, expected {K}")
    if np.any(beta < -SIMPLEX_ATOL) or abs(beta.sum() - 1.0) > SIMPLEX_ATOL:
        raise ValueError("weights must lie on the probability simplex")
    return beta


class MixedCost:
    """Lazy convex combination ``sum_q beta[q] * bases[q]``."""

    def __init__(self, bases: StructureBasisSet, beta):
        self.bases = bases
        self.beta = _check_simplex(beta, bases.K)

    @property
    def n(self):
        return self.bases.n

    def matmul(self, m: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n,) + np.shape(m)[1:])
        for b, basis in zip(self.beta, self.bases):
            if b != 0.0:
                out += b * basis.matmul(m)
        return out

    def materialize(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        for b, basis in zip(self.beta, self.bases):
            if b != 0.0:
                out += b * basis.materialize()
        return out


def mix(bases: StructureBasisSet, beta) -> MixedCost:
    return MixedCost(bases, beta)


def _assert_symmetric(basis):
    # factored bases are symmetric by construction
    if basis.kind == "dense":
        assert np.array_equal(basis.matrix, basis.matrix.T), "dense basis is not symmetric"
    elif basis.kind == "sparse":
        assert (basis.matrix != basis.matrix.T).nnz == 0, "sparse basis is not symmetric"


class GWProblem:
    """Fixed pair of basis sets with marginals; caches the Gram matrices."""

    def __init__(self, bases_s: StructureBasisSet, bases_t: StructureBasisSet, mu=None, nu=None):
        if bases_s.K != bases_t.K:
            raise ValueError("source and target must have the same number of bases")
        self.bases_s = bases_s
        self.bases_t = bases_t
        self.n, self.m = bases_s.n, bases_t.n
        self.mu = np.full(self.n, 1.0 / self.n) if mu is None else np.asarray(mu, dtype=np.float64)
        self.nu = np.full(self.m, 1.0 / self.m) if nu is None else np.asarray(nu, dtype=np.float64)
        for basis in (*bases_s, *bases_t):
            _assert_symmetric(basis)
        self.gram_s = bases_s.gram(self.mu)
        self.gram_t = bases_t.gram(self.nu)

    @property
    def K(self):
        return self.bases_s.K

    def _check(self, plan):
        if plan.shape != (self.n, self.m):
            raise ValueError(f"coupling shape {plan.shape} does not match bases ({self.n}, {self.m})")

    def terms(self, plan: np.ndarray) -> "PlanTerms":
        plan = np.asarray(plan, dtype=np.float64)
        self._check(plan)
        left = [b.matmul(plan) for b in self.bases_s]  # D_s^p pi
        right = [b.matmul(plan.T).T for b in self.bases_t]  # pi D_t^q
        K = self.K
        cross = np.empty((K, K))
        for p in range(K):
            for q in range(K):
                cross[p, q] = np.sum(left[p] * right[q])
        return PlanTerms(plan, left, right, cross)

    def objective(self, w: Weights, terms: "PlanTerms") -> float:
        bs, bt = w.beta_s, w.beta_t
        return float(bs @ self.gram_s @ bs + bt @ self.gram_t @ bt - 2.0 * bs @ terms.cross @ bt)

    def grad_alpha(self, w: Weights, terms: "PlanTerms") -> np.ndarray:
        bs, bt = w.beta_s, w.beta_t
        gs = 2.0 * self.gram_s @ bs - 2.0 * terms.cross @ bt
        gt = 2.0 * self.gram_t @ bt - 2.0 * terms.cross.T @ bs
        return np.concatenate([gs, gt])

    def grad_pi(self, w: Weights, terms: "PlanTerms") -> np.ndarray:
        # -4 D_s (pi D_t), with pi D_t assembled from the cached right products
        pi_dt = np.zeros_like(terms.plan)
        for b, r in zip(w.beta_t, terms.right):
            if b != 0.0:
                pi_dt += b * r
        out = np.zeros_like(terms.plan)
        for b, basis in zip(w.beta_s, self.bases_s):
            if b != 0.0:
                out += b * basis.matmul(pi_dt)
        return -4.0 * out


@dataclass(frozen=True, eq=False)
class PlanTerms:
    plan: np.ndarray
    left: list
    right: list
    cross: np.ndarray


def _problem(bases_s, bases_t, pi: Coupling, w: Weights) -> GWProblem:
    if w.K != bases_s.K:
        raise ValueError(f"weights have K={w.K}, bases have K={bases_s.K}")
    _check_simplex(w.beta_s, w.K)
    _check_simplex(w.beta_t, w.K)
    if pi.shape != (bases_s.n, bases_t.n):
        raise ValueError(f"coupling shape {pi.shape} does not match bases ({bases_s.n}, {bases_t.n})")
    return GWProblem(bases_s, bases_t, pi.mu, pi.nu)


def objective(bases_s, bases_t, pi: Coupling, w: Weights) -> float:
    """Evaluate the joint GW objective ``F(pi, beta_s, beta_t)``."""
    prob = _problem(bases_s, bases_t, pi, w)
    return prob.objective(w, prob.terms(pi.plan))


def grad_pi(bases_s, bases_t, pi: Coupling, w: Weights) -> np.ndarray:
    """Gradient of the objective with respect to the plan: ``-4 D_s pi D_t``."""
    prob = _problem(bases_s, bases_t, pi, w)
    return prob.grad_pi(w, prob.terms(pi.plan))


def grad_alpha(bases_s, bases_t, pi: Coupling, w: Weights) -> np.ndarray:
    """Gradient with respect to ``alpha = [beta_s, beta_t]`` (length 2K)."""
    prob = _problem(bases_s, bases_t, pi, w)
    return prob.grad_alpha(w, prob.terms(pi.plan))
