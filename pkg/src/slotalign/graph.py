"""Attributed graphs, anchor sets and their plain-text file formats.

Edge file: one ``i j`` pair per line, ``#`` comments allowed, optional first
line ``n <n>`` fixing the node count.  Feature file: header ``n d`` followed
by ``n`` rows of ``d`` numbers.  Anchor file: one ``i j`` pair per line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

#: Graphs up to this many nodes get a dense adjacency by default.
DENSE_THRESHOLD = 1000


class GraphFormatError(ValueError):
    """Raised when a graph, feature or anchor file is malformed."""


def _canonical_edges(edges, n):
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise GraphFormatError(f"edge index out of range [0, {n})")
    if np.any(arr[:, 0] == arr[:, 1]):
        raise GraphFormatError("self-loops are not allowed")
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    canon = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return canon.reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph.

    ``edges`` is kept in canonical form: each pair stored once as ``(i, j)``
    with ``i < j``, rows sorted lexicographically.  ``features`` has shape
    ``(n, d)``; ``d == 0`` denotes a plain graph.
    """

    n: int
    edges: np.ndarray
    features: np.ndarray = field(default=None)

    def __post_init__(self):
        n = int(self.n)
        if n < 0:
            raise GraphFormatError("node count must be non-negative")
        object.__setattr__(self, "n", n)
        edges = _canonical_edges(self.edges, n)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        feats = self.features
        if feats is None:
            feats = np.zeros((n, 0))
        feats = np.array(feats, dtype=np.float64)
        if feats.ndim == 1 and n == 0:
            feats = feats.reshape(0, 0)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise GraphFormatError(
                f"feature matrix has {feats.shape[0] if feats.ndim else 0} rows, expected {n}"
            )
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        np.add.at(deg, self.edges.ravel(), 1)
        return deg

    def adjacency(self, dense: bool | None = None):
        """Return the 0/1 adjacency matrix.

        Dense ``ndarray`` when ``dense`` is true (or, if ``None``, when
        ``n <= DENSE_THRESHOLD``); otherwise a CSR matrix.
        """
        if dense is None:
            dense = self.n <= DENSE_THRESHOLD
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        data = np.ones(rows.shape[0])
        adj = sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))
        adj.sort_indices()
        return adj.toarray() if dense else adj

    def with_features(self, features) -> "Graph":
        return Graph(self.n, self.edges, features)

    def with_edges(self, edges) -> "Graph":
        return Graph(self.n, edges, self.features)


@dataclass(frozen=True, eq=False)
class AnchorSet:
    """Ground-truth correspondences ``(source index, target index)``."""

    pairs: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2).copy()
        for col, side in ((0, "source"), (1, "target")):
            if len(np.unique(pairs[:, col])) != len(pairs):
                raise GraphFormatError(f"repeated {side} index in anchors")
        pairs.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return self.pairs.shape[0]

    def validate(self, n_s: int, n_t: int) -> "AnchorSet":
        p = self.pairs
        if p.size and (p.min() < 0 or p[:, 0].max() >= n_s or p[:, 1].max() >= n_t):
            raise GraphFormatError("anchor index out of range")
        return self

    def as_set(self) -> set:
        return {(int(i), int(j)) for i, j in self.pairs}


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line.split()


def _int_pair(tokens, lineno, path):
    if len(tokens) != 2:
        raise GraphFormatError(f"{path}:{lineno}: expected two integers, got {len(tokens)} fields")
    try:
        return int(tokens[0]), int(tokens[1])
    except ValueError:
        raise GraphFormatError(f"{path}:{lineno}: cannot parse integers from {' '.join(tokens)!r}") from None


def read_matrix(path) -> np.ndarray:
    """Read the ``rows cols`` header + rows dense matrix format."""
    lines = _data_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise GraphFormatError(f"{path}: empty matrix file") from None
    try:
        rows, cols = (int(t) for t in header)
    except ValueError:
        raise GraphFormatError(f"{path}:{lineno}: bad header {' '.join(header)!r}") from None
    out = np.zeros((rows, cols))
    count = 0
    for lineno, tokens in lines:
        if count >= rows:
            raise GraphFormatError(f"{path}:{lineno}: more than {rows} rows")
        if len(tokens) != cols:
            raise GraphFormatError(f"{path}:{lineno}: expected {cols} values, got {len(tokens)}")
        try:
            out[count] = [float(t) for t in tokens]
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: non-numeric value") from None
        count += 1
    if count != rows and cols > 0:
        raise GraphFormatError(f"{path}: expected {rows} rows, found {count}")
    return out


def write_matrix(path, mat) -> None:
    mat = np.asarray(mat, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mat.shape[0]} {mat.shape[1]}\n")
        for row in mat:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_graph(edges_path, features_path=None) -> Graph:
    """Load a graph from an edge file and an optional feature file.

    Duplicate and reversed edge lines collapse into one undirected edge.
    Without an ``n <n>`` header the node count is ``1 + max index`` (or the
    feature row count, if larger).
    """
    declared = None
    pairs = []
    for lineno, tokens in _data_lines(edges_path):
        if tokens[0] == "n":
            if declared is not None or pairs:
                raise GraphFormatError(f"{edges_path}:{lineno}: header must be the first line")
            try:
                declared = int(tokens[1])
            except (IndexError, ValueError):
                raise GraphFormatError(f"{edges_path}:{lineno}: bad header") from None
            continue
        i, j = _int_pair(tokens, lineno, edges_path)
        if declared is not None and not (0 <= i < declared and 0 <= j < declared):
            raise GraphFormatError(
                f"{edges_path}:{lineno}: index out of range for declared n={declared}"
            )
        if i < 0 or j < 0:
            raise GraphFormatError(f"{edges_path}:{lineno}: negative index")
        if i == j:
            raise GraphFormatError(f"{edges_path}:{lineno}: self-loop {i} {j}")
        pairs.append((i, j))

    feats = read_matrix(features_path) if features_path is not None else None
    if declared is not None:
        n = declared
    else:
        n = 1 + max((max(p) for p in pairs), default=-1)
        if feats is not None:
            n = max(n, feats.shape[0])
    if feats is not None and feats.shape[0] != n:
        raise GraphFormatError(f"{features_path}: {feats.shape[0]} feature rows, expected {n}")
    return Graph(n, pairs, feats)


def save_graph(g: Graph, edges_path, features_path=None) -> None:
    with open(edges_path, "w", encoding="utf-8") as fh:
        fh.write(f"n {g.n}\n")
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")
    if features_path is not None:
        write_matrix(features_path, g.features)


def load_anchors(path, n_s: int, n_t: int) -> AnchorSet:
    pairs = [_int_pair(tokens, lineno, path) for lineno, tokens in _data_lines(path)]
    pairs = list(dict.fromkeys(pairs))
    return AnchorSet(np.array(pairs, dtype=np.int64).reshape(-1, 2)).validate(n_s, n_t)


def save_anchors(anchors: AnchorSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in anchors.pairs:
            fh.write(f"{i} {j}\n")


def normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    safe = np.where(norms > 0, norms, 1.0)
    return x / safe[:, None]


def normalize_features(g: Graph) -> Graph:
    """Scale every nonzero feature row to unit Euclidean norm."""
    return g.with_features(normalize_rows(g.features))
