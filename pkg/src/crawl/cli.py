"""Command-line entry point: ``crawl <command> ...``.

Exit codes: 0 success, 1 validation or configuration error, 2 numerical
fault (including a failed gradient audit), 3 resource limit.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import platform
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audit import gradient_audit
from .expressive import StateSpaceTooLarge, cycle_pair, distinguish, three_path_pair
from .graph import Dataset, Graph, disjoint_union, load_graphs, make_csl_dataset, make_cycle, save_graphs
from .model import CrawlModel, ModelConfig, derive_seed
from .nn import NumericalFault, load_checkpoint
from .train import TrainConfig, ablation_matrix, evaluate, fold_assignments, kfold_run, train

log = logging.getLogger("crawl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_RESOURCE = 0, 1, 2, 3

# flag name -> (section, key, type)
HYPERPARAMETER_FLAGS = {
    "s": ("model", "s", int),
    "layers": ("model", "num_layers", int),
    "d": ("model", "hidden", int),
    "conv_width": ("model", "conv_width", int),
    "pooling": ("model", "pooling", str),
    "readout": ("model", "readout", str),
    "dropout": ("model", "dropout", float),
    "vn": ("model", "virtual_node", bool),
    "p_star": ("model", "p_star", float),
    "strategy": ("model", "strategy", str),
    "train_ell": ("model", "train_ell", int),
    "eval_ell": ("model", "eval_ell", int),
    "no_identity": ("model", "identity", bool),
    "no_adjacency": ("model", "adjacency", bool),
    "dtype": ("model", "dtype", str),
    "r_val": ("train", "r_val", int),
    "r_test": ("train", "r_test", int),
    "lr": ("train", "lr", float),
    "patience": ("train", "patience", int),
    "batch_size": ("train", "batch_size", int),
    "max_epochs": ("train", "max_epochs", int),
    "monitor": ("train", "monitor", str),
}


class ConfigError(ValueError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def write_manifest(out_dir: Path, command: str, config: dict, seeds: dict) -> Path:
    """Resolved config, seeds and a hash of every file written under ``out_dir``."""
    own = out_dir / "manifest.json"
    artifacts = {
        str(p.relative_to(out_dir)): _sha256(p) for p in sorted(out_dir.rglob("*")) if p.is_file() and p != own
    }
    doc = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "artifacts": artifacts,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    path = out_dir / "manifest.json"
    _write_json(path, doc)
    return path


# ---------------------------------------------------------------- configuration


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config: dict, assignment: str) -> None:
    """Apply ``a.b.c=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = config
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {assignment!r} descends into a non-table value")
    node[parts[-1]] = _parse_value(raw)


def resolve_config(args) -> dict:
    config: dict = {"data": "csl", "seed": 0, "model": {}, "train": {}}
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a JSON object")
        for key, val in loaded.items():
            if isinstance(val, dict) and isinstance(config.get(key), dict):
                config[key].update(val)
            else:
                config[key] = val
    for flag, (section, key, typ) in HYPERPARAMETER_FLAGS.items():
        val = getattr(args, flag, None)
        if val is None or val is False:
            continue
        if flag.startswith("no_"):
            val = False
        config[section][key] = val
    if getattr(args, "data", None):
        config["data"] = args.data
    if getattr(args, "seed", None) is not None:
        config["seed"] = args.seed
    for assignment in getattr(args, "set", None) or []:
        apply_override(config, assignment)
    unknown = set(config) - {"data", "seed", "model", "train"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    # validate eagerly so config errors surface before any work starts
    ModelConfig.from_dict(config["model"])
    TrainConfig.from_dict(config["train"])
    return config


def load_dataset(ref: str) -> Dataset:
    if ref == "csl":
        return make_csl_dataset()
    return load_graphs(ref)


def _fit_model_to_data(model_cfg: dict, ds: Dataset) -> dict:
    """Fill in input/output widths the dataset determines, unless set explicitly."""
    cfg = dict(model_cfg)
    if ds.graphs:
        g = ds.graphs[0]
        cfg.setdefault("node_dim", g.features_or_constant().shape[1])
        if g.edge_features is not None:
            cfg.setdefault("edge_dim", np.asarray(g.edge_features).reshape(g.n_edges, -1).shape[1])
    cfg.setdefault("task", ds.task)
    if ds.task == "classification":
        n_classes = ds.num_classes or (max(ds.labels()) + 1 if ds.graphs else 2)
        cfg.setdefault("out_dim", int(n_classes))
    else:
        cfg.setdefault("out_dim", 1)
    return cfg


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    out = Path(args.out)
    if args.dataset == "csl":
        ds = make_csl_dataset(seed=args.seed or 0, per_class=args.per_class, n_folds=args.folds)
    elif args.dataset == "cycles":
        if args.n < 6 or args.n % 2:
            raise ConfigError("cycles needs an even n >= 6")
        a = make_cycle(args.n)
        b = disjoint_union(make_cycle(args.n // 2), make_cycle(args.n // 2))
        ds = Dataset((_labeled(a, 0), _labeled(b, 1)), (0, 1), "classification", 2)
    else:
        a, b = three_path_pair(args.n)
        ds = Dataset((_labeled(a, 0), _labeled(b, 1)), (0, 1), "classification", 2)
    save_graphs(ds, out)
    log.info("wrote %d graphs to %s", len(ds), out)
    manifest_dir = out.parent
    doc = {"dataset": args.dataset, "n": args.n, "file": out.name, "sha256": _sha256(out), "graphs": len(ds)}
    _write_json(manifest_dir / f"{out.stem}.manifest.json", {"command": "gen", "config": doc, "seeds": {"root": args.seed or 0}})
    print(json.dumps(doc))
    return EXIT_OK


def _labeled(g: Graph, label: int) -> Graph:
    return Graph(g.n_nodes, g.edges, g.node_features, g.edge_features, label)


def run_training(config: dict, out_dir: Path | None, fold: int | None) -> dict:
    ds = load_dataset(config["data"])
    model_cfg = ModelConfig.from_dict(_fit_model_to_data(config["model"], ds))
    train_cfg = TrainConfig.from_dict(config["train"])
    seed = int(config["seed"])
    if fold is None:
        res = kfold_run(ds, model_cfg, train_cfg, seed, out_dir)
        summary = {"mean": res.mean, "cmd": res.cmd, "imd": res.imd, "scores": res.scores}
    else:
        rotations = fold_assignments(ds.n_folds)
        if not (0 <= fold < len(rotations)):
            raise ConfigError(f"fold must lie in 0..{len(rotations) - 1}")
        train_folds, val_fold, test_fold = rotations[fold]
        run_seed = derive_seed(seed, fold)
        model, metrics = train(
            ds, model_cfg, train_cfg, ds.indices(train_folds), ds.indices([val_fold]), run_seed, out_dir
        )
        test_seeds = [derive_seed(run_seed, 1000 + j) for j in range(train_cfg.r_test)]
        scores = evaluate(model, ds, ds.indices([test_fold]), test_seeds, model_cfg.eval_ell)
        summary = {"fold": fold, "test_scores": scores, "mean": float(np.mean(scores)), "best_epoch": metrics.best_epoch}
        if out_dir is not None:
            _write_json(out_dir / "test.json", summary)
    return summary


def cmd_train(args) -> int:
    config = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = run_training(config, out, args.fold)
    write_manifest(out, "train", {**config, "fold": args.fold}, {"root": config["seed"]})
    print(json.dumps(summary, default=_json_default))
    return EXIT_OK


def cmd_eval(args) -> int:
    arrays, meta = load_checkpoint(args.checkpoint)
    cfg = ModelConfig.from_dict(meta["model"])
    model = CrawlModel(cfg)
    model.load_state_arrays(arrays)
    ds = load_dataset(args.data)
    if args.fold is None:
        indices = list(range(len(ds)))
    else:
        indices = ds.indices([args.fold])
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(range(10))
    scores = evaluate(model, ds, indices, seeds, args.ell)
    report = {"scores": scores, "mean": float(np.mean(scores)), "seeds": seeds, "graphs": len(indices)}
    print(json.dumps(report))
    if args.out:
        out = Path(args.out)
        _write_json(out / "eval.json", report)
        write_manifest(out, "eval", {"checkpoint": str(args.checkpoint), "data": args.data, "fold": args.fold, "ell": args.ell}, {"eval": seeds})
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = resolve_config(args)
    ds = load_dataset(config["data"])
    base = ModelConfig.from_dict(_fit_model_to_data(config["model"], ds))
    tcfg = TrainConfig.from_dict(config["train"])
    strategies = args.strategies.split(",")
    variants = args.variants.split(",")
    rows = ablation_matrix(ds, base, tcfg, int(config["seed"]), strategies, variants)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["encodings", "strategy", "mean", "std", "imd"])
        writer.writeheader()
        writer.writerows(rows)
    _write_json(out / "ablation.json", rows)
    write_manifest(out, "ablate", {**config, "strategies": strategies, "variants": variants}, {"root": config["seed"]})
    print(json.dumps(rows))
    return EXIT_OK


_PAIR = re.compile(r"^(cycles|threepaths)(\d+)$")


def resolve_graph_pair(refs: list[str]):
    """Either one named pair (``cycles8``, ``threepaths3``) or two ``file.json[:index]`` references."""
    if len(refs) == 1:
        match = _PAIR.match(refs[0])
        if not match:
            raise ConfigError(f"unknown graph pair {refs[0]!r}; use cycles<N> or threepaths<N>")
        kind, n = match.group(1), int(match.group(2))
        if kind == "cycles":
            if n < 6 or n % 2:
                raise ConfigError("cycles<N> needs an even N >= 6")
            return cycle_pair(n // 2)
        return three_path_pair(n)
    if len(refs) == 2:
        return tuple(_graph_ref(r) for r in refs)
    raise ConfigError("distinguish takes one pair name or two graph references")


def _graph_ref(ref: str):
    path, _, idx = ref.partition(":")
    ds = load_graphs(path)
    i = int(idx) if idx else 0
    if not (0 <= i < len(ds)):
        raise ConfigError(f"{path} has no graph {i}")
    return ds.graphs[i]


def cmd_distinguish(args) -> int:
    g1, g2 = resolve_graph_pair(args.graphs)
    report = distinguish(
        g1, g2, args.strategy, args.s, args.ell, args.mode, args.samples, args.seed or 0, args.max_states
    )
    print(json.dumps(report))
    if args.out:
        out = Path(args.out)
        _write_json(out / "distinguish.json", report)
        write_manifest(out, "distinguish", {"graphs": args.graphs, **{k: report[k] for k in ("strategy", "s", "ell", "mode")}}, {"root": args.seed or 0})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    reports = gradient_audit(seed=args.seed or 0, tolerance=args.tolerance)
    for r in reports:
        print(r)
    failed = [r.name for r in reports if not r.passed]
    if args.out:
        out = Path(args.out)
        _write_json(out / "gradcheck.json", [{"name": r.name, "errors": r.errors, "passed": r.passed} for r in reports])
        write_manifest(out, "gradcheck", {"tolerance": args.tolerance}, {"root": args.seed or 0})
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_replay(args) -> int:
    """Rerun a recorded train or ablate invocation from its manifest."""
    manifest = json.loads(Path(args.manifest).read_text())
    command = manifest.get("command")
    config = copy.deepcopy(manifest["config"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if command == "train":
        fold = config.pop("fold", None)
        summary = run_training(config, out, fold)
        write_manifest(out, "train", {**config, "fold": fold}, manifest.get("seeds", {}))
    elif command == "ablate":
        strategies, variants = config.pop("strategies"), config.pop("variants")
        ds = load_dataset(config["data"])
        base = ModelConfig.from_dict(_fit_model_to_data(config["model"], ds))
        summary = ablation_matrix(ds, base, TrainConfig.from_dict(config["train"]), int(config["seed"]), strategies, variants)
        _write_json(out / "ablation.json", summary)
        write_manifest(out, "ablate", {**config, "strategies": strategies, "variants": variants}, manifest.get("seeds", {}))
    else:
        raise ConfigError(f"cannot replay a {command!r} manifest")
    print(json.dumps(summary, default=_json_default))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_hyperparameters(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with sections data, seed, model, train")
    p.add_argument("--data", help="dataset JSON file, or 'csl' for the built-in CSL set")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, e.g. model.hidden=32")
    g = p.add_argument_group("hyperparameters")
    g.add_argument("--s", type=int, help="window size (even)")
    g.add_argument("--layers", type=int, help="number of CRaWl layers")
    g.add_argument("--d", type=int, help="hidden width")
    g.add_argument("--conv-width", dest="conv_width", type=int)
    g.add_argument("--pooling", choices=["mean", "sum"])
    g.add_argument("--readout", choices=["mlp", "linear"])
    g.add_argument("--dropout", type=float)
    g.add_argument("--vn", action="store_true", default=None, help="add a virtual node")
    g.add_argument("--p-star", dest="p_star", type=float)
    g.add_argument("--strategy", choices=["uniform", "nb", "non_backtracking", "un"])
    g.add_argument("--train-ell", dest="train_ell", type=int)
    g.add_argument("--eval-ell", dest="eval_ell", type=int)
    g.add_argument("--no-identity", dest="no_identity", action="store_true")
    g.add_argument("--no-adjacency", dest="no_adjacency", action="store_true")
    g.add_argument("--dtype", choices=["float32", "float64"])
    g.add_argument("--r-val", dest="r_val", type=int)
    g.add_argument("--r-test", dest="r_test", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--patience", type=int)
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--max-epochs", dest="max_epochs", type=int)
    g.add_argument("--monitor", choices=["val_loss", "val_score"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crawl", description="Random-walk graph learning toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("dataset", choices=["csl", "cycles", "threepaths"])
    p.add_argument("--n", type=int, default=8, help="cycle length or three-path parameter")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--per-class", dest="per_class", type=int, default=15)
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train on a dataset (all folds unless --fold)")
    _add_hyperparameters(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--fold", type=int, help="train only this fold rotation")
    p.add_argument("--out", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint over walk seeds")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fold", type=int)
    p.add_argument("--seeds", help="comma-separated walk seeds (default 0..9)")
    p.add_argument("--ell", type=int, help="walk length (default: the model's eval length)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="encoding x strategy ablation grid")
    _add_hyperparameters(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--strategies", default="uniform,non_backtracking")
    p.add_argument("--variants", default="none,identity,adjacency,both")
    p.add_argument("--out", default="runs/ablate")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("distinguish", help="total variation between feature-matrix distributions")
    p.add_argument("graphs", nargs="+", help="cycles<N> | threepaths<N> | FILE[:INDEX] FILE[:INDEX]")
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--strategy", default="nb", choices=["uniform", "nb", "non_backtracking", "un"])
    p.add_argument("--ell", type=int, default=8)
    p.add_argument("--mode", choices=["exact", "sampled"], default="exact")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--max-states", dest="max_states", type=int, default=2_000_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_distinguish)

    p = sub.add_parser("gradcheck", help="finite-difference audit of all kernels")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("replay", help="rerun a train or ablate manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s"
    )
    try:
        return args.func(args)
    except NumericalFault as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (StateSpaceTooLarge, MemoryError) as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ValueError, KeyError, TypeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
