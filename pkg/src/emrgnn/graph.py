"""Multi-relational graph storage and per-relation sparse operators.

Every relation is stored as a symmetric binary CSR adjacency. Normalisation
adds self-loops and applies the symmetric degree scaling
``D~^{-1/2} (A + I) D~^{-1/2}`` with ``D~ = D + I``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ValidationError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SparseAdj:
    """Square CSR matrix with sorted, unique column indices per row."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n: int

    def __post_init__(self):
        object.__setattr__(self, "indptr", _frozen(np.asarray(self.indptr, dtype=np.int64)))
        object.__setattr__(self, "indices", _frozen(np.asarray(self.indices, dtype=np.int64)))
        object.__setattr__(self, "data", _frozen(np.asarray(self.data, dtype=np.float64)))
        if self.indptr.shape != (self.n + 1,) or self.indptr[0] != 0:
            raise ValidationError("indptr must have length n + 1 and start at 0")
        if self.indptr[-1] != self.indices.size or self.indices.size != self.data.size:
            raise ValidationError("indptr[-1], len(indices) and len(data) disagree")

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.row_ids(), self.indices] = self.data
        return out

    @classmethod
    def from_coo(cls, rows, cols, vals, n: int) -> "SparseAdj":
        """Build from coordinates that are already unique; sorts into row-major order."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        order = np.argsort(rows * n + cols, kind="stable")
        rows, cols, vals = rows[order], cols[order], vals[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(indptr, cols, vals, n)


@dataclass(frozen=True)
class NormalizedRelation:
    adj_norm: SparseAdj
    deg_tilde: np.ndarray
    name: str = ""

    @property
    def n(self) -> int:
        return self.adj_norm.n

    def to_dense(self) -> np.ndarray:
        return self.adj_norm.to_dense()


@dataclass(frozen=True)
class RelationalGraph:
    n: int
    relations: tuple[SparseAdj, ...]
    relation_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.relations:
            raise ValidationError("a relational graph needs at least one relation")
        names = tuple(self.relation_names) or tuple(f"rel{r}" for r in range(len(self.relations)))
        if len(names) != len(self.relations):
            raise ValidationError("relation_names must have one entry per relation")
        object.__setattr__(self, "relations", tuple(self.relations))
        object.__setattr__(self, "relation_names", names)
        for adj in self.relations:
            if adj.n != self.n:
                raise ValidationError(f"relation of size {adj.n} in a graph with n={self.n}")

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def select(self, which: Sequence[int]) -> "RelationalGraph":
        """Graph restricted to the listed relations (in that order)."""
        which = list(which)
        return RelationalGraph(
            self.n,
            tuple(self.relations[r] for r in which),
            tuple(self.relation_names[r] for r in which),
        )

    def edge_list(self, r: int) -> np.ndarray:
        """Undirected edges of relation ``r`` as an (m, 2) array with src < dst."""
        adj = self.relations[r]
        rows = adj.row_ids()
        keep = rows < adj.indices
        return np.stack([rows[keep], adj.indices[keep]], axis=1)


def build_graph(edge_lists, n: int, relation_names: Sequence[str] | None = None) -> RelationalGraph:
    """Symmetrise, deduplicate and binarise one edge list per relation.

    Self-edges in the input are dropped; every node receives exactly one
    self-loop during :func:`normalize`.
    """
    n = int(n)
    if n <= 0:
        raise ValidationError(f"node count must be positive, got {n}")
    if len(edge_lists) == 0:
        raise ValidationError("at least one relation is required")
    relations = []
    for r, edges in enumerate(edge_lists):
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), np.int64)
        if e.size and (e.min() < 0 or e.max() >= n):
            bad = e[(e < 0) | (e >= n)][0]
            raise ValidationError(f"relation {r}: node index {bad} out of range [0, {n})")
        e = e[e[:, 0] != e[:, 1]]
        both = np.concatenate([e, e[:, ::-1]])
        keys = np.unique(both[:, 0] * n + both[:, 1])
        rows, cols = np.divmod(keys, n)
        relations.append(SparseAdj.from_coo(rows, cols, np.ones(keys.size), n))
    return RelationalGraph(n, tuple(relations), tuple(relation_names) if relation_names else ())


def normalize_relation(adj: SparseAdj, name: str = "") -> NormalizedRelation:
    deg_tilde = np.diff(adj.indptr).astype(np.float64) + 1.0
    rows = np.concatenate([adj.row_ids(), np.arange(adj.n)])
    cols = np.concatenate([adj.indices, np.arange(adj.n)])
    # d_i * d_j is commutative in floating point, so the result is exactly symmetric.
    vals = 1.0 / np.sqrt(deg_tilde[rows] * deg_tilde[cols])
    return NormalizedRelation(SparseAdj.from_coo(rows, cols, vals, adj.n), _frozen(deg_tilde), name)


def normalize(graph: RelationalGraph) -> list[NormalizedRelation]:
    """Self-looped, symmetrically normalised adjacency for every relation."""
    return [normalize_relation(a, nm) for a, nm in zip(graph.relations, graph.relation_names)]


def _as_features(Z, n: int) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2 or Z.shape[0] != n:
        raise ValidationError(f"feature matrix with shape {Z.shape} does not have {n} rows")
    return np.ascontiguousarray(Z)


def spmm(rel: NormalizedRelation | SparseAdj, Z) -> np.ndarray:
    """Sparse-dense product ``A @ Z`` with the active kernel backend."""
    adj = rel.adj_norm if isinstance(rel, NormalizedRelation) else rel
    Z = _as_features(Z, adj.n)
    return kernels.csr_spmm(adj.indptr, adj.indices, adj.data, Z)


def smoothness_score(rel: NormalizedRelation, Z, product: np.ndarray | None = None) -> float:
    """Laplacian quadratic form ``tr(Z^T (I - A_norm) Z)``.

    ``product`` may carry a precomputed ``spmm(rel, Z)`` to avoid a second
    sparse pass.
    """
    Z = _as_features(Z, rel.n)
    if product is None:
        product = spmm(rel, Z)
    elif product.shape != Z.shape:
        raise ValidationError("precomputed product has the wrong shape")
    return float(np.vdot(Z, Z) - np.vdot(Z, product))


def read_edge_list(path) -> np.ndarray:
    """Parse a whitespace-separated ``src dst`` file; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"edge list not found: {path}")
    pairs = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 'src dst', got {line!r}")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-integer node id in {line!r}") from None
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def write_edge_list(path, edges: np.ndarray, header: str | None = None) -> None:
    with Path(path).open("w") as fh:
        if header:
            fh.write(f"# {header}\n")
        for s, t in np.asarray(edges, dtype=np.int64):
            fh.write(f"{s} {t}\n")
