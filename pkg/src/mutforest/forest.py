"""Typed plane forests: breadth-first labelling, clusters, the forest of
mutations, coding chains and mutation censuses."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np


class ForestError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class TypedForest:
    """Ordered forest with vertex types in ``range(d)``.

    Vertices are ``0..n-1``; ``parent[v] == -1`` marks a root. Children are kept
    in CSR form and ordered by (type, id), so hand-built input is normalised to
    the nondecreasing-type plane convention. ``roots`` fixes the tree order.
    """

    __slots__ = ("dim", "types", "parent", "roots", "child_ptr", "child_idx",
                 "edge_length", "censored")

    def __init__(self, dim: int, types: Sequence[int], parent: Sequence[int],
                 roots: Sequence[int] | None = None,
                 edge_length: Sequence[float] | None = None,
                 censored: bool = False):
        types = np.array(types, dtype=np.int64)
        parent = np.array(parent, dtype=np.int64)
        n = len(types)
        if len(parent) != n:
            raise ForestError("types and parent differ in length")
        if n and (types.min() < 0 or types.max() >= dim):
            raise ForestError(f"vertex type outside [0, {dim})")
        if n and (parent.min() < -1 or parent.max() >= n):
            raise ForestError("parent id out of range")
        if roots is None:
            roots = np.flatnonzero(parent == -1)
        roots = np.array(roots, dtype=np.int64)
        if sorted(roots.tolist()) != np.flatnonzero(parent == -1).tolist():
            raise ForestError("roots must be exactly the parentless vertices")
        nonroot = np.flatnonzero(parent >= 0)
        order = np.lexsort((nonroot, types[nonroot], parent[nonroot]))
        child_idx = nonroot[order]
        counts = np.bincount(parent[nonroot], minlength=n) if n else np.zeros(0, np.int64)
        child_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=child_ptr[1:])
        self.dim = int(dim)
        self.types = _frozen(types)
        self.parent = _frozen(parent)
        self.roots = _frozen(roots)
        self.child_ptr = _frozen(child_ptr)
        self.child_idx = _frozen(child_idx.astype(np.int64))
        self.edge_length = None if edge_length is None else _frozen(np.array(edge_length, float))
        if self.edge_length is not None:
            if len(self.edge_length) != n or np.any(self.edge_length <= 0):
                raise ForestError("edge lengths must be positive, one per vertex")
        self.censored = bool(censored)
        self._check_acyclic()

    def _check_acyclic(self):
        seen = np.zeros(len(self), dtype=bool)
        for v in self._bfs():
            seen[v] = True
        if not seen.all():
            raise ForestError("parent pointers contain a cycle")

    def __len__(self) -> int:
        return len(self.types)

    def __eq__(self, other) -> bool:
        return (isinstance(other, TypedForest) and self.dim == other.dim
                and np.array_equal(self.types, other.types)
                and np.array_equal(self.parent, other.parent)
                and np.array_equal(self.roots, other.roots))

    def __repr__(self) -> str:
        return f"TypedForest(d={self.dim}, vertices={len(self)}, trees={len(self.roots)})"

    def children(self, v: int) -> np.ndarray:
        return self.child_idx[self.child_ptr[v]:self.child_ptr[v + 1]]

    def child_vector(self, v: int) -> np.ndarray:
        return np.bincount(self.types[self.children(v)], minlength=self.dim)

    def _bfs(self, roots: Iterable[int] | None = None, keep=None) -> Iterable[int]:
        ptr, idx = self.child_ptr, self.child_idx
        for r in (self.roots if roots is None else roots):
            queue = deque([int(r)])
            while queue:
                v = queue.popleft()
                yield v
                for c in idx[ptr[v]:ptr[v + 1]]:
                    if keep is None or keep(v, c):
                        queue.append(int(c))

    def root_vector(self) -> np.ndarray:
        return np.bincount(self.types[self.roots], minlength=self.dim)

    def is_type_sorted(self) -> bool:
        return all(np.all(np.diff(self.types[self.children(v)]) >= 0) for v in range(len(self)))

    @classmethod
    def from_children(cls, dim: int, types: Sequence[int],
                      children: dict[int, Sequence[int]],
                      roots: Sequence[int] | None = None) -> "TypedForest":
        parent = [-1] * len(types)
        for p, cs in children.items():
            for c in cs:
                if parent[c] != -1:
                    raise ForestError(f"vertex {c} has two parents")
                parent[c] = p
        return cls(dim, types, parent, roots)


def bfs_label(f: TypedForest) -> list[int]:
    """Vertices tree by tree, level by level, left to right."""
    return list(f._bfs())


def cluster_roots(f: TypedForest) -> np.ndarray:
    """Mask of vertices that root a cluster (no parent, or parent of another type)."""
    par = f.parent
    mask = par < 0
    nr = ~mask
    mask[nr] = f.types[par[nr]] != f.types[nr]
    return mask


def _all_clusters(f: TypedForest) -> list[list[int]]:
    """Every cluster (any type) as a vertex list, ranked by BFS order of roots."""
    is_root = cluster_roots(f)
    types = f.types
    out = []
    for v in bfs_label(f):
        if is_root[v]:
            t = types[v]
            out.append(list(f._bfs([v], keep=lambda p, c: types[c] == t)))
    return out


def clusters(f: TypedForest, i: int) -> list[list[int]]:
    """Maximal connected type-i subtrees, ranked by the BFS order of their roots."""
    return [c for c in _all_clusters(f) if f.types[c[0]] == i]


def cluster_index(f: TypedForest) -> tuple[np.ndarray, list[int]]:
    """Per-vertex cluster number and the BFS-ranked list of cluster roots."""
    lab = np.full(len(f), -1, dtype=np.int64)
    is_root = cluster_roots(f)
    croots = []
    for v in bfs_label(f):
        if is_root[v]:
            lab[v] = len(croots)
            croots.append(v)
        else:
            lab[v] = lab[f.parent[v]]
    return lab, croots


def mutation_forest(f: TypedForest) -> TypedForest:
    """Collapse every cluster to one vertex, keeping inter-cluster edges.

    Children of a cluster-vertex are ordered by type and then by the BFS rank
    of their roots in ``f``; vertex ids of the result follow its own BFS order.
    """
    lab, croots = cluster_index(f)
    croots_arr = np.asarray(croots, dtype=np.int64)
    types = f.types[croots_arr] if croots else np.zeros(0, np.int64)
    parent = np.full(len(croots), -1, dtype=np.int64)
    for c, r in enumerate(croots):
        p = f.parent[r]
        if p >= 0:
            parent[c] = lab[p]
    roots = lab[f.roots]
    merged = TypedForest(f.dim, types, parent, roots)
    # relabel in the merged forest's own BFS order so the transform is idempotent
    order = np.asarray(bfs_label(merged), dtype=np.int64)
    new_id = np.empty_like(order)
    new_id[order] = np.arange(len(order))
    par = merged.parent[order]
    par = np.where(par >= 0, new_id[np.maximum(par, 0)], -1)
    return TypedForest(f.dim, merged.types[order], par, new_id[merged.roots],
                       censored=f.censored)


@dataclass(frozen=True)
class CodingChains:
    """Per-type lattice paths; ``paths[i]`` has shape (n_i + 1, d) with row 0 = 0."""

    dim: int
    paths: tuple[np.ndarray, ...]

    def length(self, i: int) -> int:
        return self.paths[i].shape[0] - 1

    def endpoint(self, i: int) -> np.ndarray:
        return self.paths[i][-1]

    def steps(self, i: int) -> np.ndarray:
        return np.diff(self.paths[i], axis=0)


def subforest_order(f: TypedForest, i: int) -> list[int]:
    """Type-i vertices in the BFS order of the subforest of type i."""
    return [v for c in clusters(f, i) for v in c]


def encode(f: TypedForest) -> CodingChains:
    d = f.dim
    paths = []
    for i in range(d):
        order = subforest_order(f, i)
        steps = np.zeros((len(order), d), dtype=np.int64)
        for n, v in enumerate(order):
            steps[n] = f.child_vector(v)
        steps[:, i] -= 1
        path = np.zeros((len(order) + 1, d), dtype=np.int64)
        np.cumsum(steps, axis=0, out=path[1:])
        paths.append(path)
    return CodingChains(d, tuple(paths))


@dataclass(frozen=True)
class MutationCensus:
    N: np.ndarray
    M: np.ndarray
    M_matrix: np.ndarray
    roots: np.ndarray
    censored: bool = False

    def check(self) -> None:
        if np.any(np.diag(self.M_matrix) != 0):
            raise AssertionError("M_ii must vanish")
        if not np.array_equal(self.M, self.M_matrix.sum(axis=0)):
            raise AssertionError("M_j != sum_i M_ij")
        if min(self.N.min(), self.M.min(), self.M_matrix.min(), self.roots.min()) < 0:
            raise AssertionError("negative census entry")

    def key(self) -> tuple[int, ...]:
        """Hashable (N, M_ij off-diagonal) summary used by distribution tests."""
        d = len(self.N)
        off = [int(self.M_matrix[i, j]) for i in range(d) for j in range(d) if i != j]
        return tuple(int(n) for n in self.N) + tuple(off)


def census(f: TypedForest) -> MutationCensus:
    d = f.dim
    t = f.types
    N = np.bincount(t, minlength=d).astype(np.int64)
    nr = np.flatnonzero(f.parent >= 0)
    pt, ct = t[f.parent[nr]], t[nr]
    Mm = np.zeros((d, d), dtype=np.int64)
    np.add.at(Mm, (pt, ct), 1)
    np.fill_diagonal(Mm, 0)
    return MutationCensus(N, Mm.sum(axis=0), Mm, f.root_vector().astype(np.int64), f.censored)


def write_forest(f: TypedForest, fh: TextIO) -> None:
    """One record per vertex, ``id parent type [edge_length]``, ids ascending."""
    el = f.edge_length
    for v in range(len(f)):
        rec = f"{v} {int(f.parent[v])} {int(f.types[v])}"
        if el is not None:
            rec += f" {float(el[v])!r}"
        fh.write(rec + "\n")


def read_forest(fh: TextIO, dim: int) -> TypedForest:
    ids, par, typ, lengths = [], [], [], []
    for line in fh:
        parts = line.split()
        if not parts:
            continue
        if len(parts) not in (3, 4):
            raise ForestError(f"bad forest record: {line!r}")
        ids.append(int(parts[0]))
        par.append(int(parts[1]))
        typ.append(int(parts[2]))
        if len(parts) == 4:
            lengths.append(float(parts[3]))
    if ids != list(range(len(ids))):
        raise ForestError("vertex ids must be contiguous and ascending")
    if lengths and len(lengths) != len(ids):
        raise ForestError("edge lengths present on some records only")
    return TypedForest(dim, typ, par, edge_length=lengths or None)
