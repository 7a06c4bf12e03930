"""Training loop, plateau learning-rate schedule, multi-seed evaluation and IMD/CMD."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import Dataset
from .model import CrawlModel, ModelConfig, derive_seed, make_batch, predict
from .nn import Adam, NumericalFault, Tape, save_checkpoint
from .nn.ops import softmax

log = logging.getLogger(__name__)

# named random streams split off the root seed
STREAM_INIT, STREAM_WALKS, STREAM_DROPOUT, STREAM_SHUFFLE, STREAM_VAL = 1, 2, 3, 4, 5


class TrainingDiverged(NumericalFault):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_decay: float = 0.5
    patience: int = 10
    min_lr: float = 1e-6
    batch_size: int = 10
    max_epochs: int | None = None
    r_val: int = 1
    r_test: int = 10
    monitor: str = "val_loss"

    def __post_init__(self) -> None:
        if self.monitor not in ("val_loss", "val_score"):
            raise ValueError(f"monitor must be 'val_loss' or 'val_score', got {self.monitor!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without strict improvement.

    ``step`` returns True once the rate has dropped below ``min_lr``.
    """

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 10, min_lr: float = 1e-6, mode: str = "min"):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.mode = mode
        self.best: float | None = None
        self.bad_epochs = 0

    def _improved(self, value: float) -> bool:
        if self.best is None:
            return True
        return value < self.best if self.mode == "min" else value > self.best

    def step(self, value: float) -> bool:
        if self._improved(value):
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr < self.min_lr


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_score: float
    seconds: float


@dataclass
class RunMetrics:
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: int = -1
    best_val_score: float = float("nan")
    scores: list[list[float]] = field(default_factory=list)  # p[i][j]: model i, eval seed j
    imd: float | None = None
    cmd: float | None = None
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def score(outputs: np.ndarray, labels: np.ndarray, task: str) -> float:
    """Accuracy for classification, mean absolute error for regression."""
    if task == "classification":
        return float(np.mean(outputs.argmax(axis=1) == labels))
    return float(np.mean(np.abs(outputs.reshape(-1) - np.asarray(labels, dtype=float).reshape(-1))))


def _loss_value(outputs: np.ndarray, labels: np.ndarray, task: str) -> float:
    if task == "classification":
        p = softmax(outputs.astype(np.float64))
        return float(-np.mean(np.log(p[np.arange(len(labels)), labels] + 1e-300)))
    return score(outputs, labels, task)


def evaluate(
    model: CrawlModel,
    dataset: Dataset,
    indices: Sequence[int],
    eval_seeds: Sequence[int],
    ell: int | None = None,
    return_loss: bool = False,
):
    """One score per walk seed on the given graphs; parameters are left untouched."""
    graphs = [dataset.graphs[i] for i in indices]
    labels = np.array([g.label for g in graphs])
    scores, losses = [], []
    for seed in eval_seeds:
        walk_seeds = [derive_seed(seed, i) for i in indices]
        out = predict(model, graphs, walk_seeds, ell)
        scores.append(score(out, labels, model.cfg.task))
        losses.append(_loss_value(out, labels, model.cfg.task))
    if return_loss:
        return scores, losses
    return scores


def train(
    dataset: Dataset,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    train_idx: Sequence[int],
    val_idx: Sequence[int],
    seed: int = 0,
    out_dir: str | Path | None = None,
) -> tuple[CrawlModel, RunMetrics]:
    """Train with walks resampled every step; returns the best-validation model."""
    start = time.perf_counter()
    model = CrawlModel(cfg, derive_seed(seed, STREAM_INIT))
    opt = Adam(model.parameters(), lr=tcfg.lr)
    mode = "min" if (tcfg.monitor == "val_loss" or cfg.task == "regression") else "max"
    sched = PlateauSchedule(tcfg.lr, tcfg.lr_decay, tcfg.patience, tcfg.min_lr, mode)
    shuffle_rng = np.random.Generator(np.random.Philox(derive_seed(seed, STREAM_SHUFFLE)))
    drop_rng = np.random.Generator(np.random.Philox(derive_seed(seed, STREAM_DROPOUT)))
    val_seeds = [derive_seed(seed, STREAM_VAL, j) for j in range(tcfg.r_val)]
    higher_better = cfg.task == "classification"
    metrics = RunMetrics()
    best_state = None
    best_key = None
    train_idx = np.asarray(train_idx)
    epoch = 0
    while True:
        t0 = time.perf_counter()
        opt.lr = sched.lr
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        losses = []
        for lo in range(0, len(order), tcfg.batch_size):
            idx = order[lo : lo + tcfg.batch_size]
            graphs = [dataset.graphs[i] for i in idx]
            seeds = [derive_seed(seed, STREAM_WALKS, epoch, int(i)) for i in idx]
            batch = make_batch(graphs, cfg, seeds, cfg.train_ell)
            tape = Tape()
            try:
                out = model.forward(batch, training=True, tape=tape, dropout_rng=drop_rng)
                loss = model.loss(out, batch.labels, tape)
                opt.zero_grad()
                tape.backward(loss)
            except NumericalFault as exc:
                raise TrainingDiverged(f"epoch {epoch}, lr {sched.lr:.2e}: {exc}") from exc
            opt.step()
            losses.append(float(loss.value) * len(idx))
        train_loss = sum(losses) / len(order)
        val_scores, val_losses = evaluate(model, dataset, val_idx, val_seeds, cfg.eval_ell, return_loss=True)
        val_score = float(np.mean(val_scores))
        val_loss = float(np.mean(val_losses))
        metrics.epochs.append(
            EpochLog(epoch, sched.lr, train_loss, val_loss, val_score, time.perf_counter() - t0)
        )
        log.info("epoch %d lr %.2e train %.4f val loss %.4f score %.4f", epoch, sched.lr, train_loss, val_loss, val_score)
        key = (val_score if higher_better else -val_score, -val_loss)
        if best_key is None or key > best_key:
            best_key = key
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
            metrics.best_epoch = epoch
            metrics.best_val_score = val_score
        monitored = val_loss if tcfg.monitor == "val_loss" else val_score
        done = sched.step(monitored)
        epoch += 1
        if done or (tcfg.max_epochs is not None and epoch >= tcfg.max_epochs):
            break
    model.load_state_arrays(best_state)
    metrics.wall_clock = time.perf_counter() - start
    if out_dir is not None:
        write_run_outputs(out_dir, model, metrics, cfg, tcfg, seed)
    return model, metrics


def imd(scores) -> float:
    """Mean over models of the standard deviation across evaluation seeds."""
    p = np.asarray(scores, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 2:
        raise ValueError("IMD needs a q x r grid with r >= 2")
    return float(np.mean(np.std(p, axis=1)))


def cmd(scores) -> float:
    """Standard deviation across models of their mean score."""
    p = np.asarray(scores, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 2 or p.shape[1] < 1:
        raise ValueError("CMD needs a q x r grid with q >= 2")
    return float(np.std(np.mean(p, axis=1)))


def fold_assignments(n_folds: int) -> list[tuple[list[int], int, int]]:
    """Rotation ``(train_folds, val_fold, test_fold)``: test fold i, validation fold i+1."""
    if n_folds < 3:
        raise ValueError("need at least 3 folds")
    out = []
    for i in range(n_folds):
        val = (i + 1) % n_folds
        train_folds = [f for f in range(n_folds) if f not in (i, val)]
        out.append((train_folds, val, i))
    return out


@dataclass
class KFoldResult:
    runs: list[RunMetrics]
    scores: list[list[float]]
    mean: float
    cmd: float
    imd: float

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "cmd": self.cmd,
            "imd": self.imd,
            "scores": self.scores,
            "runs": [r.to_dict() for r in self.runs],
        }


def kfold_run(
    dataset: Dataset,
    cfg: ModelConfig,
    tcfg: TrainConfig,
    seed: int = 0,
    out_dir: str | Path | None = None,
) -> KFoldResult:
    """Train one model per fold rotation and test each with ``r_test`` walk seeds."""
    runs, grid = [], []
    for i, (train_folds, val_fold, test_fold) in enumerate(fold_assignments(dataset.n_folds)):
        run_seed = derive_seed(seed, i)
        run_dir = None if out_dir is None else Path(out_dir) / f"fold{test_fold}"
        model, metrics = train(
            dataset, cfg, tcfg, dataset.indices(train_folds), dataset.indices([val_fold]), run_seed, run_dir
        )
        test_seeds = [derive_seed(run_seed, 1000 + j) for j in range(tcfg.r_test)]
        metrics.scores = [evaluate(model, dataset, dataset.indices([test_fold]), test_seeds, cfg.eval_ell)]
        log.info("fold %d test %.4f (best epoch %d)", test_fold, np.mean(metrics.scores[0]), metrics.best_epoch)
        runs.append(metrics)
        grid.append(metrics.scores[0])
    result = KFoldResult(
        runs=runs,
        scores=grid,
        mean=float(np.mean(grid)),
        cmd=cmd(grid),
        imd=imd(grid) if tcfg.r_test >= 2 else 0.0,
    )
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "summary.json").write_text(json.dumps(result.to_dict(), indent=2))
    return result


ENCODING_VARIANTS = {
    "none": (False, False),
    "identity": (True, False),
    "adjacency": (False, True),
    "both": (True, True),
}


def ablation_matrix(
    dataset: Dataset,
    base_cfg: ModelConfig,
    tcfg: TrainConfig,
    seed: int = 0,
    strategies: Sequence[str] = ("uniform", "non_backtracking"),
    variants: Sequence[str] = tuple(ENCODING_VARIANTS),
) -> list[dict]:
    """One k-fold run per (encoding variant, walk strategy) cell."""
    rows = []
    for name in variants:
        ident, adj = ENCODING_VARIANTS[name]
        for strategy in strategies:
            cfg = replace(base_cfg, identity=ident, adjacency=adj, strategy=strategy)
            res = kfold_run(dataset, cfg, tcfg, seed)
            rows.append({"encodings": name, "strategy": cfg.strategy, "mean": res.mean, "std": res.cmd, "imd": res.imd})
    return rows


def write_run_outputs(out_dir, model: CrawlModel, metrics: RunMetrics, cfg: ModelConfig, tcfg: TrainConfig, seed: int) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "val_loss", "val_score"])
        for e in metrics.epochs:
            writer.writerow([e.epoch, repr(e.lr), repr(e.train_loss), repr(e.val_loss), repr(e.val_score)])
    save_checkpoint(
        out_dir / "checkpoint",
        model.state_arrays(),
        meta={"model": cfg.to_dict(), "train": asdict(tcfg), "seed": seed},
    )
    (out_dir / "summary.json").write_text(json.dumps(metrics.to_dict(), indent=2))
