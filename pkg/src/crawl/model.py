"""The CRaWl network: walk-feature CNN layers with walklet-center pooling."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import nn
from .features import Encodings, edge_block, structural_block
from .graph import Graph
from .nn import ops
from .nn.tensor import Tape, Tensor
from .walks import normalize_strategy, sample_walks


@dataclass
class ModelConfig:
    num_layers: int = 3
    hidden: int = 64
    conv_width: int | None = None
    s: int = 8
    pooling: str = "mean"
    readout: str = "mlp"
    dropout: float = 0.0
    virtual_node: bool = False
    identity: bool = True
    adjacency: bool = True
    strategy: str = "nb"
    train_ell: int = 50
    eval_ell: int = 150
    p_star: float = 1.0
    node_dim: int = 1
    edge_dim: int = 0
    out_dim: int = 10
    task: str = "classification"
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if self.s < 0 or self.s % 2:
            raise ValueError(f"window size s must be even and >= 0, got {self.s}")
        if self.pooling not in ("mean", "sum"):
            raise ValueError(f"pooling must be 'mean' or 'sum', got {self.pooling!r}")
        if self.readout not in ("mlp", "linear"):
            raise ValueError(f"readout must be 'mlp' or 'linear', got {self.readout!r}")
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.num_layers < 1:
            raise ValueError("need at least one layer")
        if not (0.0 < self.p_star <= 1.0):
            raise ValueError("p_star must lie in (0, 1]")
        self.strategy = normalize_strategy(self.strategy)

    @property
    def k(self) -> int:
        return self.s + 1

    @property
    def width(self) -> int:
        return self.conv_width if self.conv_width is not None else self.hidden

    @property
    def encodings(self) -> Encodings:
        return Encodings(self.identity, self.adjacency)

    @property
    def feature_width(self) -> int:
        return self.hidden + self.edge_dim + self.encodings.width(self.s)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def derive_seed(*parts: int) -> int:
    """Stable 64-bit seed from integer parts."""
    state = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]).generate_state(2)
    return int(state[0]) | (int(state[1]) << 32)


def valid_centers(L: int, s: int) -> np.ndarray:
    """Row indices usable as walklet centers in a walk with ``L`` rows.

    With ``ell = L - 1`` steps the strict range ``s/2 < j < ell - s/2``.
    """
    h = s // 2
    return np.arange(h + 1, L - 1 - h)


def center_pool_matrix(walks: np.ndarray, s: int, n_nodes: int) -> sp.csr_matrix:
    """Sparse ``n_nodes x (m * (L - s))`` averaging operator onto walklet centers."""
    walks = np.asarray(walks)
    m, L = walks.shape
    n_out = L - s
    if n_out < 1:
        raise ValueError(f"walks with {L} rows are shorter than the receptive field {s + 1}")
    centers = valid_centers(L, s)
    if len(centers) == 0:
        return sp.csr_matrix((n_nodes, m * n_out))
    h = s // 2
    nodes = walks[:, centers].ravel()
    cols = (np.arange(m)[:, None] * n_out + (centers - h)[None, :]).ravel()
    counts = np.bincount(nodes, minlength=n_nodes).astype(np.float64)
    vals = 1.0 / counts[nodes]
    return sp.csr_matrix((vals, (nodes, cols)), shape=(n_nodes, m * n_out))


def pool_centers(cnn_out: np.ndarray, walks: np.ndarray, s: int, n_nodes: int) -> np.ndarray:
    """Mean of the CNN rows whose walklet is centered at each node; zero when none."""
    m, n_out, c = cnn_out.shape
    mat = center_pool_matrix(walks, s, n_nodes)
    return np.asarray(mat @ cnn_out.reshape(m * n_out, c))


@dataclass(eq=False)
class GraphBatch:
    """Disjoint union of graphs with one walk set sampled per graph."""

    n_graphs: int
    n_nodes: int
    graph_of_node: np.ndarray
    node_features: np.ndarray
    walks: np.ndarray  # global node indices
    constant_features: np.ndarray  # edge block + structural block per walk row
    pool: sp.csr_matrix
    readout_pool: sp.csr_matrix
    vn_sum: sp.csr_matrix
    labels: np.ndarray | None


def make_batch(
    graphs: Sequence[Graph],
    cfg: ModelConfig,
    walk_seeds: Sequence[int],
    ell: int,
    walks_per_node: int = 1,
    p_star: float | None = None,
) -> GraphBatch:
    if len(graphs) != len(walk_seeds):
        raise ValueError("one walk seed per graph required")
    p_star = cfg.p_star if p_star is None else p_star
    dtype = cfg.np_dtype
    all_walks, consts, feats, owner = [], [], [], []
    offset = 0
    for gi, (g, seed) in enumerate(zip(graphs, walk_seeds)):
        m = g.n_nodes * walks_per_node if walks_per_node != 1 else None
        ws = sample_walks(g, cfg.strategy, m=m, ell=ell, seed=seed, p_star=p_star)
        edge_emb = g.edge_features if cfg.edge_dim else None
        if cfg.edge_dim and edge_emb is None:
            raise ValueError("config expects edge features but a graph has none")
        parts = [structural_block(g, ws.walks, cfg.s, cfg.encodings)]
        if cfg.edge_dim:
            parts.insert(0, edge_block(g, ws.walks, edge_emb))
        consts.append(np.concatenate(parts, axis=2))
        all_walks.append(ws.walks + offset)
        x = g.features_or_constant()
        if x.shape[1] != cfg.node_dim:
            raise ValueError(f"graph has {x.shape[1]} node features, config expects {cfg.node_dim}")
        feats.append(x)
        owner.append(np.full(g.n_nodes, gi))
        offset += g.n_nodes
    walks = np.concatenate(all_walks)
    graph_of_node = np.concatenate(owner)
    B = len(graphs)
    ones = np.ones(offset)
    vn_sum = sp.csr_matrix((ones, (graph_of_node, np.arange(offset))), shape=(B, offset))
    if cfg.pooling == "mean":
        sizes = np.bincount(graph_of_node, minlength=B).astype(np.float64)
        readout_pool = sp.csr_matrix(
            (1.0 / sizes[graph_of_node], (graph_of_node, np.arange(offset))), shape=(B, offset)
        )
    else:
        readout_pool = vn_sum
    labels = None
    if all(g.label is not None for g in graphs):
        labels = np.array([g.label for g in graphs])
    return GraphBatch(
        n_graphs=B,
        n_nodes=offset,
        graph_of_node=graph_of_node,
        node_features=np.concatenate(feats).astype(dtype),
        walks=walks,
        constant_features=np.concatenate(consts).astype(dtype),
        pool=center_pool_matrix(walks, cfg.s, offset).astype(dtype),
        readout_pool=readout_pool.astype(dtype),
        vn_sum=vn_sum.astype(dtype),
        labels=labels,
    )


class CrawlLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        dt = cfg.np_dtype
        self.s = cfg.s
        self.conv = nn.ConvModule(cfg.feature_width, cfg.width, cfg.k, rng, dt)
        self.update = nn.MLP(cfg.width, 2 * cfg.hidden, cfg.hidden, rng, dtype=dt)

    def __call__(self, batch: GraphBatch, h: Tensor, training: bool, tape: Tape | None = None) -> Tensor:
        L = batch.walks.shape[1]
        if L < self.s + 1:
            raise ValueError(f"walks with {L} rows are shorter than the receptive field {self.s + 1}")
        x = ops.gather_rows(h, batch.walks, tape)
        x = ops.concat([x, batch.constant_features], tape)
        c = self.conv(x, training, tape)
        p = ops.sparse_matmul(batch.pool, c, tape)
        return self.update(p, training, tape)


class CrawlModel(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        dt = cfg.np_dtype
        rng = np.random.Generator(np.random.Philox(derive_seed(seed, 1)))
        self.input = nn.Linear(cfg.node_dim, cfg.hidden, rng, dtype=dt)
        self.layers = [CrawlLayer(cfg, rng) for _ in range(cfg.num_layers)]
        self.vn = (
            [nn.MLP(cfg.hidden, cfg.hidden, cfg.hidden, rng, dtype=dt) for _ in range(cfg.num_layers - 1)]
            if cfg.virtual_node
            else []
        )
        self.final_bn = nn.BatchNorm(cfg.hidden, dt)
        if cfg.readout == "mlp":
            self.head = nn.MLP(cfg.hidden, cfg.hidden, cfg.out_dim, rng, batch_norm=False, dtype=dt)
        else:
            self.head = nn.Linear(cfg.hidden, cfg.out_dim, rng, dtype=dt)

    def forward(
        self,
        batch: GraphBatch,
        training: bool = False,
        tape: Tape | None = None,
        dropout_rng: np.random.Generator | None = None,
    ) -> Tensor:
        cfg = self.cfg
        h = self.input(batch.node_features, tape)
        h_vn = None
        for t, layer in enumerate(self.layers):
            h = ops.add(h, layer(batch, h, training, tape), tape)
            if cfg.virtual_node and t < cfg.num_layers - 1:
                h, h_vn = virtual_node_update(batch, h, h_vn, self.vn[t], training, tape)
        h = ops.relu(self.final_bn(h, training, tape), tape)
        g = ops.sparse_matmul(batch.readout_pool, h, tape)
        g = ops.dropout(g, cfg.dropout, dropout_rng, training, tape)
        if isinstance(self.head, nn.MLP):
            return self.head(g, training, tape)
        return self.head(g, tape)

    def loss(self, out: Tensor, labels: np.ndarray, tape: Tape | None = None) -> Tensor:
        if self.cfg.task == "classification":
            return ops.cross_entropy(out, labels, tape)
        return ops.l1_loss(out, labels, tape)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: p.value for name, p in self.named_parameters()}
        for name, st in self.named_states():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        dt = self.cfg.np_dtype
        own = self.state_arrays()
        missing = set(own) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint lacks arrays: {sorted(missing)[:5]}")
        for name, p in self.named_parameters():
            if arrays[name].shape != p.value.shape:
                raise ValueError(f"shape mismatch for {name}")
            p.value = np.array(arrays[name], dtype=dt)
        for name, st in self.named_states():
            st.running_mean = np.array(arrays[f"{name}.running_mean"], dtype=dt)
            st.running_var = np.array(arrays[f"{name}.running_var"], dtype=dt)

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name, arr in sorted(self.state_arrays().items()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()


def virtual_node_update(
    batch: GraphBatch,
    h: Tensor,
    h_vn: Tensor | None,
    mlp: nn.MLP,
    training: bool,
    tape: Tape | None = None,
) -> tuple[Tensor, Tensor]:
    """Aggregate node states into a per-graph virtual state and add it back to every node."""
    total = ops.sparse_matmul(batch.vn_sum, h, tape)
    if h_vn is not None:
        total = ops.add(total, h_vn, tape)
    h_vn = mlp(total, training, tape)
    h = ops.add(h, ops.gather_rows(h_vn, batch.graph_of_node, tape), tape)
    return h, h_vn


def count_parameters(cfg: ModelConfig) -> int:
    """Trainable parameter count, computed from the configuration alone."""
    d, w, k = cfg.hidden, cfg.width, cfg.k
    conv = cfg.feature_width * w + k * w + w * w + 2 * w
    update = (w * 2 * d + 2 * d) + 2 * (2 * d) + (2 * d * d + d)
    total = cfg.node_dim * d + d
    total += cfg.num_layers * (conv + update)
    if cfg.virtual_node:
        vn = (d * d + d) + 2 * d + (d * d + d)
        total += (cfg.num_layers - 1) * vn
    total += 2 * d
    if cfg.readout == "mlp":
        total += d * d + d + d * cfg.out_dim + cfg.out_dim
    else:
        total += d * cfg.out_dim + cfg.out_dim
    return total


def conv_parameter_count(cfg: ModelConfig) -> int:
    """Conv-module weights per layer, excluding batch-norm affine terms."""
    return cfg.feature_width * cfg.width + cfg.k * cfg.width + cfg.width**2


def predict(
    model: CrawlModel,
    graphs: Sequence[Graph],
    walk_seeds: Sequence[int],
    ell: int | None = None,
    batch_size: int = 50,
) -> np.ndarray:
    """Inference-mode outputs (logits or regression values) for each graph."""
    ell = model.cfg.eval_ell if ell is None else ell
    outs = []
    for lo in range(0, len(graphs), batch_size):
        batch = make_batch(graphs[lo : lo + batch_size], model.cfg, walk_seeds[lo : lo + batch_size], ell)
        outs.append(model.forward(batch, training=False).value)
    return np.concatenate(outs) if outs else np.zeros((0, model.cfg.out_dim))
