"""Graph container, synthetic generators (cycles, three-path gadgets, CSL) and JSON I/O."""

from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class GraphValidationError(ValueError):
    """A graph violates simplicity, symmetry or the no-isolated-node rule."""


class DatasetParseError(ValueError):
    """A dataset file is malformed."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph without isolated nodes.

    ``edges`` holds each undirected edge once as ``(u, v)`` with ``u < v``;
    ``edge_features`` rows follow the same order and are served for both
    traversal directions.
    """

    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    node_features: np.ndarray | None = None
    edge_features: np.ndarray | None = None
    label: int | float | None = None
    adjacency: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = self.n_nodes
        if n < 1:
            raise GraphValidationError("graph must have at least one node")
        norm = []
        seen = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise GraphValidationError(f"self-loop at node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise GraphValidationError(f"edge ({u}, {v}) out of range for {n} nodes")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise GraphValidationError(f"duplicate edge {key}")
            seen.add(key)
            norm.append(key)
        adj: list[list[int]] = [[] for _ in range(n)]
        for u, v in norm:
            adj[u].append(v)
            adj[v].append(u)
        isolated = [v for v in range(n) if not adj[v]]
        if isolated:
            raise GraphValidationError(f"isolated nodes: {isolated[:10]}")
        object.__setattr__(self, "edges", tuple(norm))
        object.__setattr__(self, "adjacency", tuple(tuple(sorted(a)) for a in adj))

        if self.node_features is not None:
            x = np.asarray(self.node_features, dtype=np.float64)
            if x.ndim == 1:
                x = x[:, None]
            if x.shape[0] != n:
                raise GraphValidationError("node_features must have one row per node")
            x.setflags(write=False)
            object.__setattr__(self, "node_features", x)
        if self.edge_features is not None:
            e = np.asarray(self.edge_features, dtype=np.float64)
            if e.ndim == 1:
                e = e[:, None]
            if e.shape[0] != len(norm):
                raise GraphValidationError("edge_features must have one row per edge")
            e.setflags(write=False)
            object.__setattr__(self, "edge_features", e)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    def is_edge(self, u: int, v: int) -> bool:
        nbrs = self.adjacency[u]
        i = bisect_left(nbrs, v)
        return i < len(nbrs) and nbrs[i] == v

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) of the sorted neighbor lists."""
        cached = self.__dict__.get("_csr")
        if cached is None:
            deg = self.degrees()
            indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
            np.cumsum(deg, out=indptr[1:])
            indices = np.fromiter(
                (w for a in self.adjacency for w in a), dtype=np.int64, count=int(indptr[-1])
            )
            cached = (indptr, indices)
            self.__dict__["_csr"] = cached
        return cached

    def edge_index(self) -> dict[tuple[int, int], int]:
        """Map from sorted node pair to edge row."""
        cached = self.__dict__.get("_eidx")
        if cached is None:
            cached = {e: i for i, e in enumerate(self.edges)}
            self.__dict__["_eidx"] = cached
        return cached

    def adjacency_matrix(self) -> np.ndarray:
        cached = self.__dict__.get("_adjm")
        if cached is None:
            cached = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
            for u, v in self.edges:
                cached[u, v] = cached[v, u] = True
            cached.setflags(write=False)
            self.__dict__["_adjm"] = cached
        return cached

    def features_or_constant(self) -> np.ndarray:
        """Node features, or a constant 1.0 column for unlabeled graphs."""
        if self.node_features is None:
            return np.ones((self.n_nodes, 1))
        return np.asarray(self.node_features)

    def relabel(self, perm: Sequence[int]) -> "Graph":
        """Return the graph with node ``v`` renamed to ``perm[v]``."""
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(self.n_nodes)):
            raise ValueError("perm must be a permutation of the node indices")
        new_edges = [(int(perm[u]), int(perm[v])) for u, v in self.edges]
        x = None
        if self.node_features is not None:
            x = np.empty_like(self.node_features)
            x[perm] = self.node_features
        e = None
        if self.edge_features is not None:
            order = sorted(range(len(new_edges)), key=lambda i: tuple(sorted(new_edges[i])))
            new_edges = [new_edges[i] for i in order]
            e = self.edge_features[order]
        return Graph(self.n_nodes, tuple(new_edges), x, e, self.label)

    def same_structure(self, other: "Graph") -> bool:
        def _eq(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (
            self.n_nodes == other.n_nodes
            and set(self.edges) == set(other.edges)
            and _eq(self.node_features, other.node_features)
            and _eq(self.edge_features, other.edge_features)
            and self.label == other.label
        )


def make_cycle(n: int) -> Graph:
    if n < 3:
        raise ValueError(f"a cycle needs at least 3 nodes, got {n}")
    return Graph(n, tuple((i, (i + 1) % n) for i in range(n)))


def make_path(n: int) -> Graph:
    """Path on ``n`` nodes (``n - 1`` edges)."""
    if n < 2:
        raise ValueError("a path needs at least 2 nodes")
    return Graph(n, tuple((i, i + 1) for i in range(n - 1)))


def disjoint_union(a: Graph, b: Graph) -> Graph:
    off = a.n_nodes
    edges = a.edges + tuple((u + off, v + off) for u, v in b.edges)

    def _stack(x, y):
        if x is None and y is None:
            return None
        if x is None or y is None:
            raise ValueError("cannot union a featured graph with a featureless one")
        return np.vstack([x, y])

    return Graph(
        a.n_nodes + b.n_nodes,
        edges,
        _stack(a.node_features, b.node_features),
        _stack(a.edge_features, b.edge_features),
    )


def make_three_paths(n: int, balanced: bool = True) -> Graph:
    """Two hubs ``x = 0`` and ``y = 1`` joined by three internally disjoint paths.

    balanced: all paths have length ``n``; otherwise lengths ``n-1, n, n+1``.
    Both variants have ``3n - 1`` nodes.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    lengths = (n, n, n) if balanced else (n - 1, n, n + 1)
    edges = []
    nxt = 2
    for length in lengths:
        prev = 0
        for _ in range(length - 1):
            edges.append((prev, nxt))
            prev = nxt
            nxt += 1
        edges.append((prev, 1))
    return Graph(nxt, tuple(edges))


def make_csl(n_nodes: int, skip: int) -> Graph:
    """Cyclic skip-link graph: ring ``0..n-1`` plus chords ``{i, i+skip mod n}``."""
    if n_nodes < 5:
        raise ValueError("CSL graphs need at least 5 nodes")
    if not (2 <= skip and 2 * skip < n_nodes):
        raise ValueError(f"skip must satisfy 2 <= skip < n/2, got {skip} for n={n_nodes}")
    ring = [(i, (i + 1) % n_nodes) for i in range(n_nodes)]
    chords = [(i, (i + skip) % n_nodes) for i in range(n_nodes)]
    return Graph(n_nodes, tuple(ring + chords))


CSL_SKIPS = (2, 3, 4, 5, 6, 9, 11, 12, 13, 16)
CSL_NODES = 41


@dataclass(frozen=True, eq=False)
class Dataset:
    """Graphs plus a fold index per graph.

    ``task`` is ``"classification"`` or ``"regression"``; ``folds[i]`` is the
    fold of graph ``i`` (an int in ``0..n_folds-1``).
    """

    graphs: tuple[Graph, ...]
    folds: tuple[int, ...]
    task: str = "classification"
    num_classes: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "graphs", tuple(self.graphs))
        object.__setattr__(self, "folds", tuple(int(f) for f in self.folds))
        if len(self.folds) != len(self.graphs):
            raise ValueError("every graph needs exactly one fold")
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def n_folds(self) -> int:
        return max(self.folds) + 1 if self.folds else 0

    def indices(self, folds: Sequence[int]) -> list[int]:
        want = set(folds)
        return [i for i, f in enumerate(self.folds) if f in want]

    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs])


def stratified_folds(labels: Sequence[int], k: int, rng: np.random.Generator) -> list[int]:
    """Assign each item a fold so every class is spread over folds within +-1."""
    labels = list(labels)
    folds = [0] * len(labels)
    by_class: dict[int, list[int]] = {}
    for i, y in enumerate(labels):
        by_class.setdefault(y, []).append(i)
    offset = 0
    for y in sorted(by_class):
        idx = by_class[y]
        order = rng.permutation(len(idx))
        for r, j in enumerate(order):
            folds[idx[j]] = (r + offset) % k
        offset += len(idx)
    return folds


def make_csl_dataset(seed: int = 0, per_class: int = 15, n_folds: int = 5) -> Dataset:
    """150 relabeled CSL(41, skip) graphs in 10 classes with stratified folds."""
    rng = np.random.Generator(np.random.Philox(seed))
    graphs = []
    for cls, skip in enumerate(CSL_SKIPS):
        base = make_csl(CSL_NODES, skip)
        for _ in range(per_class):
            g = base.relabel(rng.permutation(CSL_NODES))
            graphs.append(Graph(g.n_nodes, g.edges, None, None, cls))
    folds = stratified_folds([g.label for g in graphs], n_folds, rng)
    return Dataset(tuple(graphs), tuple(folds), "classification", len(CSL_SKIPS))


def find_isomorphism(a: Graph, b: Graph) -> list[int] | None:
    """Backtracking isomorphism search; returns ``perm`` with ``a ≅ b`` via ``v -> perm[v]``.

    Exponential in the worst case; meant for small graphs.
    """
    n = a.n_nodes
    if n != b.n_nodes or a.n_edges != b.n_edges:
        return None
    if sorted(a.degrees().tolist()) != sorted(b.degrees().tolist()):
        return None
    adj_a = a.adjacency_matrix()
    adj_b = b.adjacency_matrix()
    deg_a = a.degrees()
    deg_b = b.degrees()
    # BFS order keeps every newly placed node adjacent to an earlier one where possible
    order: list[int] = []
    seen = set()
    for root in sorted(range(n), key=lambda v: -deg_a[v]):
        if root in seen:
            continue
        queue = [root]
        seen.add(root)
        while queue:
            v = queue.pop(0)
            order.append(v)
            for w in a.adjacency[v]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
    mapping = [-1] * n
    used = [False] * n

    def extend(k: int) -> bool:
        if k == n:
            return True
        v = order[k]
        for w in range(n):
            if used[w] or deg_b[w] != deg_a[v]:
                continue
            ok = True
            for u in order[:k]:
                if adj_a[v, u] != adj_b[w, mapping[u]]:
                    ok = False
                    break
            if not ok:
                continue
            mapping[v] = w
            used[w] = True
            if extend(k + 1):
                return True
            used[w] = False
            mapping[v] = -1
        return False

    return list(mapping) if extend(0) else None


def _graph_to_json(g: Graph) -> dict:
    out: dict = {"n": g.n_nodes, "edges": [list(e) for e in g.edges]}
    if g.node_features is not None:
        out["x"] = g.node_features.tolist()
    if g.edge_features is not None:
        out["e"] = g.edge_features.tolist()
    if g.label is not None:
        out["y"] = g.label
    return out


def save_graphs(ds: Dataset, path: str | Path) -> None:
    doc = {
        "task": ds.task,
        "num_classes": ds.num_classes,
        "graphs": [_graph_to_json(g) for g in ds.graphs],
        "folds": list(ds.folds),
    }
    Path(path).write_text(json.dumps(doc))


def load_graphs(path: str | Path) -> Dataset:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(
            f"{path}: line {exc.lineno} column {exc.colno} (offset {exc.pos}): {exc.msg}"
        ) from exc
    if not isinstance(doc, dict) or "graphs" not in doc:
        raise DatasetParseError(f"{path}: expected an object with a 'graphs' list")
    graphs = []
    for i, rec in enumerate(doc["graphs"]):
        try:
            n = int(rec["n"])
            edges = tuple((int(u), int(v)) for u, v in rec["edges"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetParseError(f"{path}: graph {i}: {exc!r}") from exc
        try:
            graphs.append(Graph(n, edges, rec.get("x"), rec.get("e"), rec.get("y")))
        except GraphValidationError as exc:
            raise GraphValidationError(f"{path}: graph {i}: {exc}") from exc
    folds = doc.get("folds") or [0] * len(graphs)
    return Dataset(
        tuple(graphs), tuple(folds), doc.get("task", "classification"), doc.get("num_classes")
    )

