"""Random walk sampling (uniform and non-backtracking).

Every walk draws its randomness from its own Philox stream keyed by
``(seed, walk_idx)``, so a walk does not depend on how many other walks are
sampled alongside it or in which order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph

UNIFORM = "uniform"
NON_BACKTRACKING = "non_backtracking"
STRATEGIES = (UNIFORM, NON_BACKTRACKING)
_ALIASES = {"un": UNIFORM, "uniform": UNIFORM, "nb": NON_BACKTRACKING, "non_backtracking": NON_BACKTRACKING}

_MASK64 = (1 << 64) - 1
# reserved walk index for the start-node stream
_START_STREAM = _MASK64


def normalize_strategy(strategy: str) -> str:
    try:
        return _ALIASES[strategy]
    except KeyError:
        raise ValueError(f"unknown walk strategy {strategy!r}; use one of {STRATEGIES}") from None


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based generator for ``(seed, index)``."""
    key = ((int(seed) & _MASK64) << 64) | (int(index) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True, eq=False)
class WalkSet:
    """``walks`` is an ``m x (ell + 1)`` array of node indices, one walk per row."""

    walks: np.ndarray
    strategy: str
    seed: int
    graph: Graph

    @property
    def m(self) -> int:
        return self.walks.shape[0]

    @property
    def length(self) -> int:
        """Number of steps (edges) per walk."""
        return self.walks.shape[1] - 1


def start_nodes(g: Graph, p_star: float = 1.0, seed: int = 0) -> np.ndarray:
    """One start per node when ``p_star == 1``; otherwise ``round(p_star * |V|)`` draws with replacement."""
    if not (0.0 < p_star <= 1.0):
        raise ValueError(f"p_star must lie in (0, 1], got {p_star}")
    n = g.n_nodes
    if p_star == 1.0:
        return np.arange(n, dtype=np.int64)
    # round half up
    m = max(1, int(np.floor(p_star * n + 0.5)))
    return stream(seed, _START_STREAM).integers(0, n, size=m, dtype=np.int64)


def _uniforms(seed: int, m: int, ell: int) -> np.ndarray:
    """Row ``w`` holds the first ``ell`` draws of ``stream(seed, w)``."""
    out = np.empty((m, ell))
    # re-keying one bit generator yields the same streams as building one per walk, but faster
    bits = np.random.Philox(key=0)
    gen = np.random.Generator(bits)
    state = bits.state
    hi = int(seed) & _MASK64
    for w in range(m):
        state["state"]["key"][:] = (w, hi)
        state["state"]["counter"][:] = 0
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        bits.state = state
        out[w] = gen.random(ell)
    return out


def walk_from_uniforms(
    g: Graph, starts: np.ndarray, u: np.ndarray, strategy: str
) -> np.ndarray:
    """Deterministically turn per-step uniforms ``u`` (``m x ell``) into walks."""
    strategy = normalize_strategy(strategy)
    indptr, indices = g.csr()
    deg = np.diff(indptr)
    m, ell = u.shape
    walks = np.empty((m, ell + 1), dtype=np.int64)
    walks[:, 0] = starts
    cur = walks[:, 0]
    prev = np.full(m, -1, dtype=np.int64)
    for i in range(ell):
        d = deg[cur]
        base = indptr[cur]
        if strategy == UNIFORM or i == 0:
            choice = np.minimum((u[:, i] * d).astype(np.int64), d - 1)
            nxt = indices[base + choice]
        else:
            free = d > 1
            # draw among the first d-1 slots; a hit on prev is redirected to the last slot
            r = np.minimum((u[:, i] * np.maximum(d - 1, 1)).astype(np.int64), np.maximum(d - 2, 0))
            cand = indices[base + r]
            last = indices[base + d - 1]
            nxt = np.where(cand == prev, last, cand)
            nxt = np.where(free, nxt, indices[base])
        walks[:, i + 1] = nxt
        prev = cur
        cur = nxt
    return walks


def sample_walks(
    g: Graph,
    strategy: str = NON_BACKTRACKING,
    m: int | None = None,
    ell: int = 50,
    seed: int = 0,
    p_star: float = 1.0,
    starts: np.ndarray | None = None,
) -> WalkSet:
    """Sample walks of ``ell`` steps.

    Start nodes come from ``starts`` if given, else from :func:`start_nodes`.
    An explicit ``m`` that is a multiple of ``|V|`` starts ``m / |V|`` walks at
    every node; any other ``m`` draws start nodes uniformly with replacement.
    """
    strategy = normalize_strategy(strategy)
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if starts is None:
        if m is None or m == g.n_nodes:
            starts = start_nodes(g, p_star, seed)
        elif m < 1:
            raise ValueError("m must be >= 1")
        elif m % g.n_nodes == 0:
            starts = np.tile(np.arange(g.n_nodes, dtype=np.int64), m // g.n_nodes)
        else:
            starts = stream(seed, _START_STREAM).integers(0, g.n_nodes, size=m, dtype=np.int64)
    starts = np.asarray(starts, dtype=np.int64)
    u = _uniforms(seed, len(starts), ell)
    walks = walk_from_uniforms(g, starts, u, strategy)
    walks.setflags(write=False)
    return WalkSet(walks, strategy, int(seed), g)


def walklet(ws: WalkSet, walk_idx: int, center_pos: int, s: int) -> np.ndarray:
    """The ``s + 1`` nodes centered at ``walks[walk_idx, center_pos]``."""
    if s < 0 or s % 2:
        raise ValueError(f"walklet size s must be even and >= 0, got {s}")
    h = s // 2
    if not (h <= center_pos <= ws.length - h):
        raise ValueError(f"center {center_pos} out of range [{h}, {ws.length - h}]")
    if not (0 <= walk_idx < ws.m):
        raise ValueError(f"walk index {walk_idx} out of range")
    return ws.walks[walk_idx, center_pos - h : center_pos + h + 1].copy()


def is_valid_walk(g: Graph, walk, non_backtracking: bool = False) -> bool:
    walk = [int(v) for v in walk]
    for a, b in zip(walk, walk[1:]):
        if not g.is_edge(a, b):
            return False
    if non_backtracking:
        for i in range(1, len(walk) - 1):
            if walk[i + 1] == walk[i - 1] and g.degree(walk[i]) != 1:
                return False
    return True
