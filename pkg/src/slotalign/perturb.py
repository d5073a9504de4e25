"""Semi-synthetic target generation: node relabeling, edge and feature inconsistency.

All randomness comes from ``numpy.random.Generator(PCG64(seed))`` so outputs
are reproducible from the seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .graph import AnchorSet, Graph


class FeatureOp(str, Enum):
    NONE = "none"
    PERMUTE = "permute"
    TRUNCATE = "truncate"
    COMPRESS = "compress"


class PerturbError(ValueError):
    pass


def rng_for(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _count(p: float, total: int) -> int:
    if not 0.0 <= p <= 1.0:
        raise PerturbError(f"ratio {p} outside [0, 1]")
    # round half up; Python's round() would go to even
    return int(np.floor(p * total + 0.5))


@dataclass(frozen=True)
class PerturbSpec:
    seed: int = 0
    edge_ratio: float = 0.0
    feature_op: FeatureOp = FeatureOp.NONE
    feature_ratio: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "feature_op", FeatureOp(self.feature_op))
        for name in ("edge_ratio", "feature_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise PerturbError(f"{name}={v} outside [0, 1]")

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "edge_ratio": self.edge_ratio,
            "feature_op": self.feature_op.value,
            "feature_ratio": self.feature_ratio,
        }


def make_target(g: Graph, seed=None, permutation=None) -> tuple[Graph, AnchorSet]:
    """Relabel the nodes of ``g`` by a random permutation.

    Source node ``i`` becomes target node ``perm[i]``; the anchors record
    ``(i, perm[i])``.  Pass ``permutation`` to fix the relabeling.
    """
    if permutation is None:
        perm = rng_for(seed).permutation(g.n)
    else:
        perm = np.asarray(permutation, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(g.n)):
            raise PerturbError("not a permutation of the node set")
    edges = perm[g.edges] if g.num_edges else g.edges
    feats = np.empty_like(g.features)
    feats[perm] = g.features
    anchors = AnchorSet(np.stack([np.arange(g.n), perm], axis=1))
    return Graph(g.n, edges, feats), anchors


def _sample_non_edges(g: Graph, count: int, rng: np.random.Generator) -> np.ndarray:
    n = g.n
    total = n * (n - 1) // 2
    free = total - g.num_edges
    if count > free:
        raise PerturbError(f"need {count} unconnected positions, only {free} exist")
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    existing = set(map(tuple, g.edges.tolist()))
    if free <= 4 * count or n <= 2000:
        iu, ju = np.triu_indices(n, k=1)
        keys = iu * n + ju
        taken = g.edges[:, 0] * n + g.edges[:, 1]
        mask = ~np.isin(keys, taken)
        choice = rng.choice(np.flatnonzero(mask), size=count, replace=False)
        return np.stack([iu[choice], ju[choice]], axis=1)
    picked = []
    seen = set()
    while len(picked) < count:
        i, j = (int(v) for v in rng.integers(0, n, size=2))
        key = (min(i, j), max(i, j))
        if i == j or key in existing or key in seen:
            continue
        seen.add(key)
        picked.append(key)
    return np.array(picked, dtype=np.int64)


def perturb_edges(g: Graph, p: float, seed) -> Graph:
    """Move ``round(p * |E|)`` edges to positions unconnected in ``g``."""
    count = _count(p, g.num_edges)
    if count == 0:
        return g
    rng = rng_for(seed)
    drop = rng.choice(g.num_edges, size=count, replace=False)
    keep = np.delete(g.edges, drop, axis=0)
    added = _sample_non_edges(g, count, rng)
    return g.with_edges(np.concatenate([keep, added]))


def permute_features(g: Graph, p: float, seed) -> Graph:
    """Cyclically shuffle a random ``round(p * d)`` subset of feature columns."""
    count = _count(p, g.d)
    if count < 2:
        return g
    rng = rng_for(seed)
    chosen = rng.choice(g.d, size=count, replace=False)
    order = np.arange(g.d)
    order[chosen] = np.roll(chosen, -1)
    return g.with_features(g.features[:, order])


def truncate_features(g: Graph, p: float, seed) -> Graph:
    """Delete ``round(p * d)`` random feature columns, keeping the order of the rest."""
    if g.d < 1:
        raise PerturbError("truncation needs node features")
    remain = g.d - _count(p, g.d)
    if remain == 0:
        raise PerturbError("truncation would leave zero feature columns")
    keep = np.sort(rng_for(seed).choice(g.d, size=remain, replace=False))
    return g.with_features(g.features[:, keep])


def pca(x: np.ndarray, dim: int) -> np.ndarray:
    """Project centered rows of ``x`` on the top ``dim`` principal axes.

    Axis signs are fixed so the largest-magnitude coordinate is positive;
    components with (numerically) zero variance give zero columns.
    """
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")[:dim]
    vals, vecs = vals[order], vecs[:, order]
    lead = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[lead, np.arange(vecs.shape[1])])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    proj = xc @ vecs
    scale = vals.max(initial=0.0)
    proj[:, vals <= max(scale, 1.0) * 1e-12 * x.shape[1]] = 0.0
    return proj


def compress_features(g: Graph, p: float) -> Graph:
    """Replace features by their top ``max(1, round((1 - p) d))`` principal components."""
    if g.d < 2:
        raise PerturbError("compression needs d >= 2")
    if not 0.0 <= p <= 1.0:
        raise PerturbError(f"ratio {p} outside [0, 1]")
    dim = max(1, int(np.floor((1.0 - p) * g.d + 0.5)))
    return g.with_features(pca(g.features, dim))


def apply_spec(g: Graph, spec: PerturbSpec, permutation=None) -> tuple[Graph, AnchorSet]:
    """Full semi-synthetic pipeline: relabel, then perturb edges and features.

    Each stage draws from its own child seed so that changing one ratio does
    not reshuffle the others.
    """
    seeds = np.random.SeedSequence(spec.seed).spawn(3)
    target, anchors = make_target(g, seeds[0], permutation)
    target = perturb_edges(target, spec.edge_ratio, seeds[1])
    op = spec.feature_op
    if op is FeatureOp.PERMUTE:
        target = permute_features(target, spec.feature_ratio, seeds[2])
    elif op is FeatureOp.TRUNCATE:
        target = truncate_features(target, spec.feature_ratio, seeds[2])
    elif op is FeatureOp.COMPRESS:
        target = compress_features(target, spec.feature_ratio)
    return target, anchors
