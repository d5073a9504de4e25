"""Multi-view structure bases: edge-view, node-view and subgraph-views.

Each basis is a symmetric ``n x n`` cost matrix that is only ever touched
through ``matmul`` and weighted inner products, so the low-rank views never
need to be materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import DENSE_THRESHOLD, Graph, normalize_rows


class StructureBasis:
    """Symmetric cost matrix with lazy products."""

    kind = "abstract"
    n: int

    def matmul(self, m: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def materialize(self) -> np.ndarray:
        raise NotImplementedError

    def weighted_inner(self, other: "StructureBasis", w: np.ndarray) -> float:
        """``sum_ij self[i,j] * other[i,j] * w[i] * w[j]``."""
        return float(np.sum(self.materialize() * other.materialize() * np.outer(w, w)))


@dataclass(frozen=True, eq=False)
class DenseBasis(StructureBasis):
    matrix: np.ndarray
    kind = "dense"

    @property
    def n(self):
        return self.matrix.shape[0]

    def matmul(self, m):
        return self.matrix @ m

    def materialize(self):
        return np.array(self.matrix)

    def weighted_inner(self, other, w):
        return float(np.sum((self.matrix * other.materialize()) * np.outer(w, w)))


@dataclass(frozen=True, eq=False)
class FactoredBasis(StructureBasis):
    """``Z @ Z.T`` kept as the ``n x r`` factor ``Z``."""

    factor: np.ndarray
    kind = "factored"

    @property
    def n(self):
        return self.factor.shape[0]

    def matmul(self, m):
        return self.factor @ (self.factor.T @ m)

    def materialize(self):
        return self.factor @ self.factor.T

    def weighted_inner(self, other, w):
        if isinstance(other, FactoredBasis):
            cross = (self.factor * w[:, None]).T @ other.factor
            return float(np.sum(cross * cross))
        if isinstance(other, SparseBasis):
            return other.weighted_inner(self, w)
        return super().weighted_inner(other, w)


@dataclass(frozen=True, eq=False)
class SparseBasis(StructureBasis):
    """Adjacency-backed basis stored as CSR."""

    matrix: sp.csr_matrix
    kind = "sparse"

    @property
    def n(self):
        return self.matrix.shape[0]

    def matmul(self, m):
        return np.asarray(self.matrix @ m)

    def materialize(self):
        return self.matrix.toarray()

    def weighted_inner(self, other, w):
        if isinstance(other, SparseBasis):
            prod = self.matrix.multiply(other.matrix).tocoo()
            return float(np.sum(prod.data * w[prod.row] * w[prod.col]))
        coo = self.matrix.tocoo()
        r, c, v = coo.row, coo.col, coo.data
        if isinstance(other, FactoredBasis):
            z = other.factor
            vals = np.einsum("ij,ij->i", z[r], z[c])
        else:
            vals = other.materialize()[r, c]
        return float(np.sum(v * vals * w[r] * w[c]))


@dataclass(frozen=True, eq=False)
class StructureBasisSet:
    """Ordered bases ``[edge, node, subgraph k=1, subgraph k=2, ...]``."""

    bases: tuple

    def __post_init__(self):
        if len(self.bases) < 1:
            raise ValueError("need at least one structure basis")
        object.__setattr__(self, "bases", tuple(self.bases))
        sizes = {b.n for b in self.bases}
        if len(sizes) != 1:
            raise ValueError("bases disagree on node count")

    @property
    def K(self) -> int:
        return len(self.bases)

    @property
    def n(self) -> int:
        return self.bases[0].n

    def __len__(self):
        return len(self.bases)

    def __getitem__(self, q):
        return self.bases[q]

    def __iter__(self):
        return iter(self.bases)

    def gram(self, w: np.ndarray) -> np.ndarray:
        """K x K matrix of weighted inner products between bases."""
        K = self.K
        out = np.empty((K, K))
        for p in range(K):
            for q in range(p, K):
                out[p, q] = out[q, p] = self.bases[p].weighted_inner(self.bases[q], w)
        return out


def normalized_adjacency(g: Graph) -> sp.csr_matrix:
    """Self-looped symmetric normalization ``M^-1/2 (A + I) M^-1/2`` as CSR."""
    a = g.adjacency(dense=False) + sp.identity(g.n, format="csr")
    inv_sqrt = 1.0 / np.sqrt(np.asarray(a.sum(axis=1)).ravel())
    d = sp.diags(inv_sqrt)
    out = (d @ a @ d).tocsr()
    out.sort_indices()
    return out


def propagate(a_hat, x: np.ndarray, k: int) -> np.ndarray:
    """Apply ``a_hat`` to ``x`` ``k`` times without forming the matrix power."""
    if k < 1:
        raise ValueError("propagation needs k >= 1")
    z = np.asarray(x, dtype=np.float64)
    for _ in range(k):
        z = np.asarray(a_hat @ z)
    return z


def canonical_columns(x: np.ndarray) -> np.ndarray:
    """Reorder feature columns lexicographically.

    ``x @ x.T`` does not depend on column order, so this is a no-op for every
    basis; it pins the floating-point reduction order so that column-permuted
    inputs produce bitwise identical bases.
    """
    if x.shape[1] < 2:
        return np.array(x)
    order = np.lexsort(x[::-1]) if x.shape[0] else np.arange(x.shape[1])
    return np.ascontiguousarray(x[:, order])


def build_bases(
    g: Graph,
    K: int,
    normalize: bool = True,
    dense_threshold: int = DENSE_THRESHOLD,
) -> StructureBasisSet:
    """Construct the K candidate structure bases of ``g``.

    Parameters
    ----------
    g : Graph
        Input graph; ``K >= 2`` requires node features.
    K : int
        Number of bases.  ``1`` keeps the adjacency only.
    normalize : bool
        L2-normalize feature rows first, turning inner products into cosine
        similarities.
    dense_threshold : int
        The edge-view is stored dense for ``n`` up to this size, CSR above.

    Returns
    -------
    StructureBasisSet
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if K >= 2 and g.d == 0:
        raise ValueError("node- and subgraph-views need node features (d >= 1)")
    adj = g.adjacency(dense=g.n <= dense_threshold)
    bases = [DenseBasis(adj) if isinstance(adj, np.ndarray) else SparseBasis(adj)]
    if K >= 2:
        x = canonical_columns(g.features)
        if normalize:
            x = normalize_rows(x)
        bases.append(FactoredBasis(x))
        if K >= 3:
            a_hat = normalized_adjacency(g)
            z = x
            for _ in range(K - 2):
                z = propagate(a_hat, z, 1)
                bases.append(FactoredBasis(z))
    return StructureBasisSet(tuple(bases))


def dump_basis(basis: StructureBasis, path) -> None:
    """Write a materialized basis in the dense-matrix text format."""
    from .graph import write_matrix

    write_matrix(path, basis.materialize())
