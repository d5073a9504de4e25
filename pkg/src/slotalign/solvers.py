"""Constrained update steps: simplex projection and the KL-proximal transport step."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .objective import Coupling

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SinkhornSettings:
    max_iter: int = 200
    tol: float = 1e-6
    log_domain: bool = False
    floor: float = 1e-30

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("Sinkhorn tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("Sinkhorn needs at least one iteration")


class SinkhornConvergenceError(RuntimeError):
    """Scaling did not reach the marginal tolerance.

    The last iterate is attached as ``coupling`` so callers may keep going.
    """

    def __init__(self, coupling: Coupling, residual: float, iterations: int):
        super().__init__(
            f"Sinkhorn did not converge in {iterations} iterations (marginal error {residual:.3e})"
        )
        self.coupling = coupling
        self.residual = residual
        self.iterations = iterations


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto the probability simplex.

    Sort-and-threshold method, O(K log K).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("project_simplex needs a non-empty vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def update_alpha(alpha, grad, tau: float) -> np.ndarray:
    """Projected gradient step on the product of two simplices."""
    if tau <= 0:
        raise ValueError("step size tau must be positive")
    alpha = np.asarray(alpha, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if alpha.shape != grad.shape or alpha.size % 2:
        raise ValueError("alpha and gradient must have equal, even length")
    K = alpha.size // 2
    moved = alpha - tau * grad
    return np.concatenate([project_simplex(moved[:K]), project_simplex(moved[K:])])


def _residual(plan, mu, nu):
    return max(
        np.abs(plan.sum(axis=1) - mu).max(initial=0.0),
        np.abs(plan.sum(axis=0) - nu).max(initial=0.0),
    )


def _scale(kernel, mu, nu, s: SinkhornSettings, log_v0=None):
    if log_v0 is None or not np.all(np.isfinite(log_v0)):
        v = np.ones(kernel.shape[1])
    else:
        v = np.exp(log_v0 - log_v0.max())
    for it in range(1, s.max_iter + 1):
        u = mu / (kernel @ v)
        v = nu / (kernel.T @ u)
        # columns are exact after the v-update; only rows can be off
        res = np.abs(u * (kernel @ v) - mu).max(initial=0.0)
        if res <= s.tol:
            break
    return u[:, None] * kernel * v[None, :], np.log(v), it


def _scale_log(log_kernel, mu, nu, s: SinkhornSettings, log_v0=None):
    log_mu, log_nu = np.log(mu), np.log(nu)
    if log_v0 is None or not np.all(np.isfinite(log_v0)):
        g = np.zeros(log_kernel.shape[1])
    else:
        g = np.array(log_v0, dtype=np.float64)
    for it in range(1, s.max_iter + 1):
        f = log_mu - logsumexp(log_kernel + g[None, :], axis=1)
        g = log_nu - logsumexp(log_kernel + f[:, None], axis=0)
        plan = np.exp(log_kernel + f[:, None] + g[None, :])
        if np.abs(plan.sum(axis=1) - mu).max(initial=0.0) <= s.tol:
            break
    return plan, g, it


def sinkhorn(log_kernel, mu, nu, settings: SinkhornSettings | None = None, log_v0=None):
    """Scale ``exp(log_kernel)`` to marginals ``mu``, ``nu``.

    Returns ``(plan, residual, iterations, log_v)`` where ``log_v`` is the
    final log column scaling, usable as ``log_v0`` to warm-start a nearby
    problem.  The kernel is shifted by its maximum first; if any entry still
    underflows the log-domain iteration is used instead of plain scaling.
    """
    s = settings or SinkhornSettings()
    log_kernel = np.asarray(log_kernel, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    shifted = log_kernel - log_kernel.max()
    use_log = s.log_domain
    if not use_log:
        kernel = np.exp(shifted)
        if np.any(kernel == 0.0):
            logger.debug("kernel underflow, switching Sinkhorn to log domain")
            use_log = True
    if use_log:
        plan, log_v, it = _scale_log(shifted, mu, nu, s, log_v0)
    else:
        plan, log_v, it = _scale(kernel, mu, nu, s, log_v0)
    return plan, _residual(plan, mu, nu), it, log_v


def prox_transport(pi: Coupling, grad, eta: float, settings: SinkhornSettings | None = None,
                   log_v0=None):
    """KL-proximal step returning ``(coupling, residual, iterations, log_v)``.

    Never raises on slow convergence; see :func:`kl_prox_step`.
    """
    if eta <= 0:
        raise ValueError("step size eta must be positive")
    s = settings or SinkhornSettings()
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != pi.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match coupling {pi.shape}")
    log_kernel = np.log(np.maximum(pi.plan, s.floor)) - eta * grad
    plan, res, it, log_v = sinkhorn(log_kernel, pi.mu, pi.nu, s, log_v0)
    return pi.with_plan(plan), float(res), it, log_v


def kl_prox_step(pi: Coupling, grad, eta: float, settings: SinkhornSettings | None = None) -> Coupling:
    """Mirror step ``argmin_{p in C} <grad, p> + KL(p || pi) / eta``.

    Solved by Sinkhorn scaling of the kernel ``pi * exp(-eta * grad)`` to the
    marginals of ``pi``.  Raises :class:`SinkhornConvergenceError` (with the
    last iterate attached) when the tolerance is not met.
    """
    s = settings or SinkhornSettings()
    out, res, it, _ = prox_transport(pi, grad, eta, s)
    if res > s.tol:
        raise SinkhornConvergenceError(out, res, it)
    return out


def round_to_marginals(plan, mu, nu) -> np.ndarray:
    """Move a nonnegative ``plan`` onto the transport polytope of ``mu``, ``nu``.

    Rows and then columns are scaled down where they exceed their marginal,
    and the leftover mass is added back as a rank-one correction.  The change
    in l1 norm is at most twice the marginal error of the input.
    """
    plan = np.asarray(plan, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    rows = plan.sum(axis=1)
    x = np.minimum(1.0, np.divide(mu, rows, out=np.ones_like(mu), where=rows > 0))
    out = plan * x[:, None]
    cols = out.sum(axis=0)
    y = np.minimum(1.0, np.divide(nu, cols, out=np.ones_like(nu), where=cols > 0))
    out *= y[None, :]
    # both residuals are nonnegative in exact arithmetic
    err_r = np.maximum(mu - out.sum(axis=1), 0.0)
    err_c = np.maximum(nu - out.sum(axis=0), 0.0)
    total = err_r.sum()
    if total > 0:
        out += np.outer(err_r, err_c) / total
    return out


def kl_divergence(p, q) -> float:
    """Generalized KL: ``sum p log(p/q) - p + q`` (with ``0 log 0 = 0``)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    pos = p > 0
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])) - p.sum() + q.sum())
