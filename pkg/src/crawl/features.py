"""Walk feature matrices: node block, incoming-edge block, identity and adjacency encodings.

Row convention: a walk with ``E`` steps yields ``E + 1`` feature rows, row
``i`` describing the ``i``-th visited node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph
from .walks import WalkSet


@dataclass(frozen=True)
class Encodings:
    identity: bool = True
    adjacency: bool = True

    def width(self, s: int) -> int:
        return (s if self.identity else 0) + (max(s - 1, 0) if self.adjacency else 0)


@dataclass(frozen=True, eq=False)
class WalkFeatureTensor:
    data: np.ndarray  # m x L x d_X
    d: int
    d_prime: int
    s: int
    encodings: Encodings

    @property
    def width(self) -> int:
        return self.data.shape[2]


def feature_width(d: int, d_prime: int, s: int, encodings: Encodings = Encodings()) -> int:
    return d + d_prime + encodings.width(s)


def _edge_keys(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Sorted directed edge keys ``u * n + v`` and the undirected edge row of each."""
    cached = g.__dict__.get("_ekeys")
    if cached is None:
        n = g.n_nodes
        e = np.asarray(g.edges, dtype=np.int64).reshape(-1, 2)
        keys = np.concatenate([e[:, 0] * n + e[:, 1], e[:, 1] * n + e[:, 0]])
        rows = np.concatenate([np.arange(len(e)), np.arange(len(e))])
        order = np.argsort(keys)
        cached = (keys[order], rows[order])
        g.__dict__["_ekeys"] = cached
    return cached


def edge_lookup(g: Graph, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Edge row for each pair ``(u, v)``; ``-1`` where not an edge."""
    keys, rows = _edge_keys(g)
    q = np.asarray(u, dtype=np.int64) * g.n_nodes + np.asarray(v, dtype=np.int64)
    if len(keys) == 0:
        return np.full(q.shape, -1, dtype=np.int64)
    pos = np.searchsorted(keys, q)
    pos_c = np.minimum(pos, len(keys) - 1)
    hit = keys[pos_c] == q
    return np.where(hit, rows[pos_c], -1)


def structural_block(
    g: Graph, walks: np.ndarray, s: int, encodings: Encodings = Encodings()
) -> np.ndarray:
    """Identity and adjacency columns for every row of every walk.

    ``walks`` is ``m x L``; the result is ``m x L x encodings.width(s)`` with
    0/1 entries. Any ``s >= 0`` is accepted here.
    """
    walks = np.asarray(walks, dtype=np.int64)
    m, L = walks.shape
    cols = []
    if encodings.identity:
        ident = np.zeros((m, L, s), dtype=np.float64)
        for j in range(1, s + 1):
            if j < L:
                ident[:, j:, j - 1] = walks[:, j:] == walks[:, :-j]
        cols.append(ident)
    if encodings.adjacency and s > 1:
        adj = np.zeros((m, L, s - 1), dtype=np.float64)
        for j in range(1, s):
            back = j + 1
            if back < L:
                adj[:, back:, j - 1] = edge_lookup(g, walks[:, back:], walks[:, :-back]) >= 0
        cols.append(adj)
    if not cols:
        return np.zeros((m, L, 0))
    return np.concatenate(cols, axis=2)


def edge_block(g: Graph, walks: np.ndarray, edge_emb: np.ndarray | None) -> np.ndarray:
    """Embedding of the edge entering each row; row 0 is zero."""
    walks = np.asarray(walks, dtype=np.int64)
    m, L = walks.shape
    if edge_emb is None:
        return np.zeros((m, L, 0))
    edge_emb = np.asarray(edge_emb, dtype=np.float64)
    if edge_emb.ndim == 1:
        edge_emb = edge_emb[:, None]
    out = np.zeros((m, L, edge_emb.shape[1]))
    rows = edge_lookup(g, walks[:, :-1], walks[:, 1:])
    if (rows < 0).any():
        raise ValueError("walk uses a pair of nodes that is not an edge")
    out[:, 1:] = edge_emb[rows]
    return out


def build_features(
    g: Graph,
    ws: WalkSet,
    node_emb: np.ndarray,
    edge_emb: np.ndarray | None,
    s: int,
    encodings: Encodings = Encodings(),
) -> WalkFeatureTensor:
    if s < 0 or s % 2:
        raise ValueError(f"window size s must be even and >= 0, got {s}")
    node_emb = np.asarray(node_emb, dtype=np.float64)
    if node_emb.ndim == 1:
        node_emb = node_emb[:, None]
    if node_emb.shape[0] != g.n_nodes:
        raise ValueError("node embedding must cover every node")
    if edge_emb is not None and len(edge_emb) != g.n_edges:
        raise ValueError("edge embedding must cover every edge")
    walks = ws.walks
    parts = [
        node_emb[walks],
        edge_block(g, walks, edge_emb),
        structural_block(g, walks, s, encodings),
    ]
    data = np.concatenate(parts, axis=2)
    data.setflags(write=False)
    d_prime = parts[1].shape[2]
    return WalkFeatureTensor(data, node_emb.shape[1], d_prime, s, encodings)


def window_rows(t: WalkFeatureTensor, walk_idx: int, center_pos: int) -> np.ndarray:
    """The ``(s + 1) x d_X`` rows seen by the CNN at one output position."""
    h = t.s // 2
    L = t.data.shape[1]
    if not (h <= center_pos <= L - 1 - h):
        raise ValueError(f"center {center_pos} out of range [{h}, {L - 1 - h}]")
    return t.data[walk_idx, center_pos - h : center_pos + h + 1]


def structural_slice(t: WalkFeatureTensor) -> np.ndarray:
    """Identity/adjacency columns only."""
    return t.data[:, :, t.d + t.d_prime :]
