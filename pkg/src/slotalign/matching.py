"""From couplings to correspondences: rankings, Hit@k, one-to-one extraction, KNN baseline."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .graph import AnchorSet, Graph, normalize_rows

DEFAULT_KS = (1, 5, 10, 30)
#: ``extract_one_to_one(exact=True)`` is refused above this many entries.
EXACT_LIMIT = 4_000_000


def _plan(pi) -> np.ndarray:
    return np.asarray(getattr(pi, "plan", pi), dtype=np.float64)


def _oriented(pi, direction: str) -> np.ndarray:
    """Score matrix with query nodes on the rows."""
    plan = _plan(pi)
    if direction == "target->source":
        return plan.T
    if direction == "source->target":
        return plan
    raise ValueError(f"unknown direction {direction!r}")


@dataclass
class AlignmentResult:
    """Ranked candidates per query node, optional matching and Hit@k."""

    topk: np.ndarray
    scores: np.ndarray
    one_to_one: list | None = None
    hits: dict = field(default_factory=dict)
    seconds: float = 0.0
    direction: str = "target->source"


def rank_candidates(pi, k: int, direction: str = "target->source"):
    """Top-``k`` counterparts per query node, ties broken by lower index.

    Returns ``(indices, scores)``, both of shape ``(queries, min(k, counterparts))``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    s = _oriented(pi, direction)
    k = min(k, s.shape[1])
    order = np.argsort(-s, axis=1, kind="stable")[:, :k]
    return order, np.take_along_axis(s, order, axis=1)


def hit_at_k(pi, anchors: AnchorSet, ks=DEFAULT_KS, direction: str = "target->source") -> dict:
    """Percentage of anchors whose true counterpart ranks within the top ``k``.

    The rank of the true counterpart counts candidates with a strictly higher
    score plus tied candidates with a lower index.
    """
    if len(anchors) == 0:
        raise ValueError("Hit@k is undefined without anchors")
    s = _oriented(pi, direction)
    if direction == "target->source":
        query, truth = anchors.pairs[:, 1], anchors.pairs[:, 0]
    else:
        query, truth = anchors.pairs[:, 0], anchors.pairs[:, 1]
    rows = s[query]
    true_score = rows[np.arange(len(query)), truth][:, None]
    idx = np.arange(s.shape[1])[None, :]
    rank = np.sum(rows > true_score, axis=1) + np.sum((rows == true_score) & (idx < truth[:, None]), axis=1)
    return {int(k): 100.0 * float(np.mean(rank < k)) for k in ks}


def extract_one_to_one(pi, exact: bool = False) -> list:
    """Injective node pairs from a coupling.

    Greedy by default: visit entries by decreasing mass (row-major order on
    ties) and accept a pair when both endpoints are free.  ``exact=True``
    maximizes the total mass with an assignment solver.
    """
    plan = _plan(pi)
    if exact:
        if plan.size > EXACT_LIMIT:
            raise ValueError(f"exact extraction limited to {EXACT_LIMIT} entries")
        rows, cols = linear_sum_assignment(plan, maximize=True)
        return sorted(zip(rows.tolist(), cols.tolist()))
    n, m = plan.shape
    order = np.argsort(-plan, axis=None, kind="stable")
    used_r = np.zeros(n, dtype=bool)
    used_c = np.zeros(m, dtype=bool)
    pairs = []
    limit = min(n, m)
    for flat in order:
        i, j = divmod(int(flat), m)
        if used_r[i] or used_c[j]:
            continue
        used_r[i] = used_c[j] = True
        pairs.append((i, j))
        if len(pairs) == limit:
            break
    return sorted(pairs)


def matching_mass(pi, pairs) -> float:
    plan = _plan(pi)
    return float(sum(plan[i, j] for i, j in pairs))


def knn_align(g_s: Graph, g_t: Graph, k: int = 30, anchors: AnchorSet | None = None,
              ks=DEFAULT_KS, direction: str = "target->source") -> AlignmentResult:
    """Rank counterparts by cosine similarity of node features."""
    if g_s.d == 0 or g_s.d != g_t.d:
        raise ValueError(f"KNN needs equal, nonzero feature dimensions (got {g_s.d}, {g_t.d})")
    start = time.perf_counter()
    sim = normalize_rows(g_s.features) @ normalize_rows(g_t.features).T
    topk, scores = rank_candidates(sim, k, direction)
    hits = hit_at_k(sim, anchors, ks, direction) if anchors is not None and len(anchors) else {}
    return AlignmentResult(topk, scores, None, hits, time.perf_counter() - start, direction)


def summarize(pi, k: int = 30, anchors: AnchorSet | None = None, ks=DEFAULT_KS,
              direction: str = "target->source", seconds: float = 0.0,
              one_to_one: bool = False) -> AlignmentResult:
    topk, scores = rank_candidates(pi, k, direction)
    hits = hit_at_k(pi, anchors, ks, direction) if anchors is not None and len(anchors) else {}
    pairs = extract_one_to_one(pi) if one_to_one else None
    return AlignmentResult(topk, scores, pairs, hits, seconds, direction)


def write_results(result: AlignmentResult, path) -> None:
    if result.direction == "target->source":
        query, other = "target_index", "source"
    else:
        query, other = "source_index", "target"
    k = result.topk.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = [query]
        for r in range(1, k + 1):
            header += [f"rank{r}_{other}", f"score{r}"]
        writer.writerow(header)
        for q, (idx, sc) in enumerate(zip(result.topk, result.scores)):
            row = [q]
            for i, s in zip(idx, sc):
                row += [int(i), repr(float(s))]
            writer.writerow(row)


def format_metrics(hits: dict) -> str:
    return "".join(f"Hit@{k}: {v:.2f}\n" for k, v in sorted(hits.items()))


def parse_metrics(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line.startswith("Hit@"):
            key, val = line[4:].split(":")
            out[int(key)] = float(val)
    return out
