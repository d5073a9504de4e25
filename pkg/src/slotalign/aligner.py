"""Alternating structure learning / optimal transport alignment loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .bases import StructureBasisSet, build_bases
from .graph import Graph, normalize_rows
from .objective import Coupling, GWProblem, Weights
from .solvers import SinkhornSettings, prox_transport, round_to_marginals, sinkhorn, update_alpha

logger = logging.getLogger(__name__)


class InitMode(str, Enum):
    UNIFORM = "uniform"
    FEATURE_SIMILARITY = "featsim"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AlignConfig:
    """Solver settings.  Defaults are the real-world ones (K=4, tau=1).

    Use :meth:`semi_synthetic` for the K=2, tau=0.1 setting.  ``eta`` is the
    entropic weight of the plan update, i.e. the Sinkhorn regularization:
    each step scales ``pi * exp(-grad / eta)``, a mirror step of length
    ``1 / eta``.
    """

    K: int = 4
    tau: float = 1.0
    eta: float = 0.01
    k_max: int = 500
    eps1: float = 1e-6
    eps2: float = 1e-6
    init: InitMode = InitMode.UNIFORM
    freeze_weights: bool = False
    normalize_features: bool = True
    refine_on_ascent: bool = True
    max_refinements: int = 8
    ascent_tol: float = 1e-10
    sinkhorn: SinkhornSettings = field(default_factory=SinkhornSettings)

    def __post_init__(self):
        object.__setattr__(self, "init", InitMode(self.init))
        for name in ("tau", "eta", "eps1", "eps2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.k_max < 1:
            raise ConfigError("k_max must be >= 1")

    @classmethod
    def semi_synthetic(cls, **overrides) -> "AlignConfig":
        return cls(**{"K": 2, "tau": 0.1, **overrides})

    @classmethod
    def gwd(cls, **overrides) -> "AlignConfig":
        """Plain GW on adjacency matrices: one basis, weights frozen."""
        return cls(**{"K": 1, "freeze_weights": True, **overrides})

    @property
    def mode(self) -> str:
        if self.K == 1 and self.freeze_weights:
            return "gwd"
        return "slotalign-frozen" if self.freeze_weights else "slotalign"

    def replace(self, **changes) -> "AlignConfig":
        return replace(self, **changes)


@dataclass
class AlignState:
    """Iterate ``(pi, beta_s, beta_t)`` plus the per-iteration history."""

    coupling: Coupling
    weights: Weights
    iteration: int = 0
    initial_objective: float = float("nan")
    objective_trace: list = field(default_factory=list)
    alpha_steps: list = field(default_factory=list)
    pi_steps: list = field(default_factory=list)
    converged: bool = False
    sinkhorn_failures: int = 0
    refinements: int = 0

    @property
    def plan(self) -> np.ndarray:
        return self.coupling.plan

    @property
    def status(self) -> str:
        return "converged" if self.converged else "max_iter"

    def copy(self) -> "AlignState":
        return replace(
            self,
            objective_trace=list(self.objective_trace),
            alpha_steps=list(self.alpha_steps),
            pi_steps=list(self.pi_steps),
        )


def feature_similarity_coupling(g_s: Graph, g_t: Graph, cfg: AlignConfig) -> Coupling:
    """Balanced coupling proportional to ``relu(X_s X_t^T) + floor``."""
    if g_s.d == 0 or g_t.d == 0 or g_s.d != g_t.d:
        raise ConfigError(
            f"feature-similarity init needs equal, nonzero feature dimensions (got {g_s.d}, {g_t.d})"
        )
    xs, xt = g_s.features, g_t.features
    if cfg.normalize_features:
        xs, xt = normalize_rows(xs), normalize_rows(xt)
    kernel = np.maximum(xs @ xt.T, 0.0) + cfg.sinkhorn.floor
    uniform = Coupling.uniform(g_s.n, g_t.n)
    plan, res, _, _ = sinkhorn(np.log(kernel), uniform.mu, uniform.nu, cfg.sinkhorn)
    if res > cfg.sinkhorn.tol:
        logger.warning("feature-similarity init balanced only to %.3e", res)
    return uniform.with_plan(plan)


def initialize(g_s: Graph, g_t: Graph, cfg: AlignConfig) -> AlignState:
    weights = Weights.uniform(cfg.K)
    if cfg.init is InitMode.FEATURE_SIMILARITY:
        coupling = feature_similarity_coupling(g_s, g_t, cfg)
    else:
        coupling = Coupling.uniform(g_s.n, g_t.n)
    return AlignState(coupling, weights)


class Aligner:
    """Runs the alternating updates for one pair of basis sets."""

    def __init__(self, bases_s: StructureBasisSet, bases_t: StructureBasisSet, cfg: AlignConfig,
                 mu=None, nu=None):
        self.cfg = cfg
        self.problem = GWProblem(bases_s, bases_t, mu, nu)
        self._terms = None
        self._log_v = None

    def _terms_at(self, plan):
        if self._terms is None or self._terms.plan is not plan:
            self._terms = self.problem.terms(plan)
        return self._terms

    def objective(self, state: AlignState) -> float:
        return self.problem.objective(state.weights, self._terms_at(state.plan))

    def step(self, state: AlignState) -> AlignState:
        """One alpha update (at the old plan) followed by one plan update."""
        cfg, prob = self.cfg, self.problem
        if np.isnan(state.initial_objective):
            state.initial_objective = self.objective(state)
        terms = self._terms_at(state.plan)
        alpha = state.weights.alpha
        if cfg.freeze_weights:
            new_alpha = alpha
        else:
            new_alpha = update_alpha(alpha, prob.grad_alpha(state.weights, terms), cfg.tau)
        weights = Weights.from_alpha(new_alpha, cfg.K)
        g = prob.grad_pi(weights, terms)
        old_value = self.objective(state) if cfg.refine_on_ascent else None
        settings, mirror_step, log_v0 = cfg.sinkhorn, 1.0 / cfg.eta, self._log_v
        for attempt in range(cfg.max_refinements + 1):
            coupling, res, _, log_v = prox_transport(state.coupling, g, mirror_step, settings, log_v0)
            coupling = coupling.with_plan(round_to_marginals(coupling.plan, coupling.mu, coupling.nu))
            value = prob.objective(weights, self._terms_at(coupling.plan))
            if old_value is None or value <= old_value + cfg.ascent_tol or attempt == cfg.max_refinements:
                break
            # ascent: solve the inner problem from a cold start and harder,
            # then shorten the step
            state.refinements += 1
            log_v0 = None
            if attempt == 0:
                settings = replace(settings, tol=settings.tol * 1e-3, max_iter=settings.max_iter * 10)
            else:
                mirror_step /= 2
        self._log_v = log_v
        if res > settings.tol:
            logger.debug("Sinkhorn stopped at marginal error %.3e", res)
            state.sinkhorn_failures += 1
        a_step = float(np.max(np.abs(new_alpha - alpha)))
        p_step = float(np.linalg.norm(coupling.plan - state.plan))
        state.coupling, state.weights = coupling, weights
        state.iteration += 1
        state.objective_trace.append(value)
        state.alpha_steps.append(a_step)
        state.pi_steps.append(p_step)
        state.converged = a_step < cfg.eps1 and p_step < cfg.eps2
        return state

    def run(self, state: AlignState) -> AlignState:
        while state.iteration < self.cfg.k_max:
            self.step(state)
            if state.converged:
                break
        if not state.converged:
            logger.info(
                "stopped at k_max=%d (alpha step %.2e, plan step %.2e)",
                self.cfg.k_max, state.alpha_steps[-1], state.pi_steps[-1],
            )
        return state


def make_bases(g_s: Graph, g_t: Graph, cfg: AlignConfig):
    return (
        build_bases(g_s, cfg.K, normalize=cfg.normalize_features),
        build_bases(g_t, cfg.K, normalize=cfg.normalize_features),
    )


def step(state: AlignState, bases_s, bases_t, cfg: AlignConfig) -> AlignState:
    """Functional single iteration; the input state is left untouched."""
    return Aligner(bases_s, bases_t, cfg, state.coupling.mu, state.coupling.nu).step(state.copy())


def run(g_s: Graph, g_t: Graph, cfg: AlignConfig | None = None) -> AlignState:
    """Align ``g_s`` to ``g_t``; returns the final state (check ``converged``)."""
    cfg = cfg or AlignConfig()
    bases_s, bases_t = make_bases(g_s, g_t, cfg)
    state = initialize(g_s, g_t, cfg)
    return Aligner(bases_s, bases_t, cfg).run(state)


def write_trace(state: AlignState, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective", "alpha_step_norm", "pi_step_norm"])
        for k, (f, a, p) in enumerate(zip(state.objective_trace, state.alpha_steps, state.pi_steps), 1):
            writer.writerow([k, repr(f), repr(a), repr(p)])
