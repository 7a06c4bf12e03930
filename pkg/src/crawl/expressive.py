"""Exact and sampled distributions of structural walk-feature matrices.

A walk of ``ell`` steps yields an ``(ell + 1) x (2s - 1)`` 0/1 matrix (identity
columns then adjacency columns). Two graphs whose matrix distributions
coincide cannot be told apart from walk features alone; the total variation
distance between the distributions quantifies how far apart they are.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

from .features import Encodings, structural_block
from .graph import Graph, disjoint_union, make_cycle, make_three_paths
from .walks import NON_BACKTRACKING, UNIFORM, normalize_strategy, sample_walks


class StateSpaceTooLarge(MemoryError):
    """Exact enumeration would exceed the configured state budget."""


@dataclass
class FeatureDistribution:
    probs: dict[str, Fraction | float]
    s: int
    ell: int
    strategy: str
    mode: str = "exact"
    n_samples: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def support_size(self) -> int:
        return len(self.probs)

    def total(self):
        return sum(self.probs.values())


def encode_rows(rows: Iterable[Iterable[int]]) -> str:
    """Row-major bitstring, one ``|``-separated group per row."""
    return "|".join("".join("1" if b else "0" for b in row) for row in rows)


def _row_bits(g: Graph, hist: tuple[int, ...], w: int, s: int) -> tuple[int, ...]:
    ident = tuple(1 if j <= len(hist) and hist[-j] == w else 0 for j in range(1, s + 1))
    adj = tuple(
        1 if j + 1 <= len(hist) and g.is_edge(w, hist[-(j + 1)]) else 0 for j in range(1, s)
    )
    return ident + adj


def _successors(g: Graph, tail: tuple[int, ...], first_step: bool, strategy: str):
    cur = tail[-1]
    nbrs = g.adjacency[cur]
    if strategy == UNIFORM or first_step or len(nbrs) == 1:
        return nbrs
    prev = tail[-2]
    return tuple(v for v in nbrs if v != prev)


def exact_feature_distribution(
    g: Graph, strategy: str, s: int, ell: int, max_states: int = 2_000_000
) -> FeatureDistribution:
    """Exact distribution by dynamic programming over (recent nodes, emitted rows).

    Walks start at a uniformly random node. Probabilities are exact fractions.
    """
    strategy = normalize_strategy(strategy)
    if s < 1:
        raise ValueError("window size must be >= 1")
    if ell < 0:
        raise ValueError("ell must be >= 0")
    keep = max(s, 2)
    start_p = Fraction(1, g.n_nodes)
    zero_row = (0,) * (2 * s - 1)
    layer: dict[tuple, Fraction] = {}
    for v in range(g.n_nodes):
        key = ((v,), (zero_row,))
        layer[key] = layer.get(key, 0) + start_p
    for i in range(ell):
        nxt: dict[tuple, Fraction] = {}
        for (tail, rows), p in layer.items():
            succ = _successors(g, tail, i == 0, strategy)
            q = p / len(succ)
            hist = tail[-s:]
            for w in succ:
                row = _row_bits(g, hist, w, s)
                key = ((tail + (w,))[-keep:], rows + (row,))
                nxt[key] = nxt.get(key, 0) + q
        if len(nxt) > max_states:
            raise StateSpaceTooLarge(
                f"{len(nxt)} states after {i + 1} steps exceeds budget {max_states}; use sampled mode"
            )
        layer = nxt
    probs: dict[str, Fraction] = {}
    for (_, rows), p in layer.items():
        code = encode_rows(rows)
        probs[code] = probs.get(code, 0) + p
    return FeatureDistribution(probs, s, ell, strategy, "exact")


def enumerate_feature_distribution(g: Graph, strategy: str, s: int, ell: int) -> FeatureDistribution:
    """Exact distribution by listing every walk; exponential in ``ell``."""
    strategy = normalize_strategy(strategy)
    walks: list[tuple[int, ...]] = []
    weights: list[Fraction] = []

    def rec(walk: list[int], p: Fraction) -> None:
        if len(walk) == ell + 1:
            walks.append(tuple(walk))
            weights.append(p)
            return
        cur = walk[-1]
        nbrs = list(g.adjacency[cur])
        if strategy == NON_BACKTRACKING and len(walk) > 1 and len(nbrs) > 1:
            nbrs.remove(walk[-2])
        for w in nbrs:
            walk.append(w)
            rec(walk, p / len(nbrs))
            walk.pop()

    for v in range(g.n_nodes):
        rec([v], Fraction(1, g.n_nodes))
    block = structural_block(g, np.array(walks, dtype=np.int64), s, Encodings(True, True)).astype(np.int8)
    probs: dict[str, Fraction] = {}
    for mat, p in zip(block, weights):
        code = encode_rows(mat.tolist())
        probs[code] = probs.get(code, 0) + p
    return FeatureDistribution(probs, s, ell, strategy, "exact", extra={"walks": len(walks)})


def sampled_feature_distribution(
    g: Graph, strategy: str, s: int, ell: int, n_samples: int, seed: int = 0
) -> FeatureDistribution:
    """Empirical distribution from ``n_samples`` walks with uniformly random starts."""
    strategy = normalize_strategy(strategy)
    rng = np.random.Generator(np.random.Philox(seed))
    starts = rng.integers(0, g.n_nodes, size=n_samples)
    ws = sample_walks(g, strategy, ell=ell, seed=seed, starts=starts)
    block = structural_block(g, ws.walks, s, Encodings(True, True)).astype(np.uint8)
    flat = np.packbits(block.reshape(n_samples, -1), axis=1)
    uniq, inverse, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
    inverse = np.asarray(inverse).reshape(-1)
    probs: dict[str, float] = {}
    first = np.zeros(len(uniq), dtype=np.int64)
    first[inverse[::-1]] = np.arange(n_samples)[::-1]
    for u in range(len(uniq)):
        code = encode_rows(block[first[u]].tolist())
        probs[code] = counts[u] / n_samples
    return FeatureDistribution(probs, s, ell, strategy, "sampled", n_samples=n_samples)


def tv_distance(p: FeatureDistribution, q: FeatureDistribution):
    """Half the l1 distance between two distributions over the union of their supports."""
    if (p.s, p.ell) != (q.s, q.ell):
        raise ValueError(f"distributions differ in (s, ell): {(p.s, p.ell)} vs {(q.s, q.ell)}")
    exact = p.mode == "exact" and q.mode == "exact"
    zero = Fraction(0) if exact else 0.0
    total = zero
    for key in set(p.probs) | set(q.probs):
        a = p.probs.get(key, zero)
        b = q.probs.get(key, zero)
        if not exact:
            a, b = float(a), float(b)
        total += abs(a - b)
    return total / 2


def distinguish(
    g1: Graph,
    g2: Graph,
    strategy: str,
    s: int,
    ell: int,
    mode: str = "exact",
    n_samples: int = 100_000,
    seed: int = 0,
    max_states: int = 2_000_000,
) -> dict:
    """Report comparing the feature-matrix distributions of two graphs."""
    if mode == "exact":
        p = exact_feature_distribution(g1, strategy, s, ell, max_states)
        q = exact_feature_distribution(g2, strategy, s, ell, max_states)
    elif mode == "sampled":
        p = sampled_feature_distribution(g1, strategy, s, ell, n_samples, seed)
        q = sampled_feature_distribution(g2, strategy, s, ell, n_samples, seed + 1)
    else:
        raise ValueError(f"mode must be 'exact' or 'sampled', got {mode!r}")
    tv = tv_distance(p, q)
    return {
        "graphs": [{"n": g1.n_nodes, "m": g1.n_edges}, {"n": g2.n_nodes, "m": g2.n_edges}],
        "strategy": p.strategy,
        "s": s,
        "ell": ell,
        "tv": float(tv),
        "tv_exact": str(tv) if isinstance(tv, Fraction) else None,
        "support_sizes": [p.support_size, q.support_size],
        "mode": mode,
    }


def cycle_pair(m: int) -> tuple[Graph, Graph]:
    """``C_{2m}`` and the disjoint union of two copies of ``C_m``."""
    return make_cycle(2 * m), disjoint_union(make_cycle(m), make_cycle(m))


def three_path_pair(n: int) -> tuple[Graph, Graph]:
    return make_three_paths(n, True), make_three_paths(n, False)


def nb_indistinguishability_check(n: int, ell: int, strategy: str = NON_BACKTRACKING) -> dict:
    """Compare the three-path gadgets at window ``2n - 3`` (girth minus two).

    For non-backtracking walks every window is a path with no repeated nodes,
    so each graph should produce a single feature matrix.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    s = 2 * n - 3
    g, g2 = three_path_pair(n)
    p = exact_feature_distribution(g, strategy, s, ell)
    q = exact_feature_distribution(g2, strategy, s, ell)
    tv = tv_distance(p, q)
    return {
        "n": n,
        "order": [g.n_nodes, g2.n_nodes],
        "s": s,
        "ell": ell,
        "strategy": p.strategy,
        "tv": tv,
        "support_sizes": [p.support_size, q.support_size],
        "single_matrix": p.support_size == 1 and q.support_size == 1,
    }


def walklet_subgraph_oracle(g1: Graph, w1, g2: Graph, w2) -> bool:
    """Whether ``w1[i] -> w2[i]`` is a well-defined isomorphism of the induced subgraphs."""
    w1 = [int(v) for v in w1]
    w2 = [int(v) for v in w2]
    if len(w1) != len(w2):
        return False
    mapping: dict[int, int] = {}
    inverse: dict[int, int] = {}
    for a, b in zip(w1, w2):
        if mapping.setdefault(a, b) != b or inverse.setdefault(b, a) != a:
            return False
    nodes = list(mapping)
    for i, a in enumerate(nodes):
        for c in nodes[i + 1 :]:
            if g1.is_edge(a, c) != g2.is_edge(mapping[a], mapping[c]):
                return False
    return True
