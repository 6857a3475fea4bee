"""Command-line entry point: dataset generation, training, evaluation,
gradient checking, ablations, and the iteration-round sweep.

All subcommands share one flat JSON config schema with ``--set key=value``
overrides, write machine-readable JSON outputs plus a run manifest, and use
exit codes 0 (ok), 1 (validation error), 2 (runtime failure).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .docmodel import DATASET_SCHEMA, Document, load_dataset, save_dataset
from .evaluation import DEFAULT_BUCKETS, evaluate, write_report_json
from .model import (
    CHECKPOINT_SCHEMA,
    GoseParams,
    ModelConfig,
    config_hash,
    forward,
    load_checkpoint,
    loss,
)
from .synthgen import ConfigError, GenConfig, generate
from .training import (
    ABLATION_VARIANTS,
    TrainConfig,
    evaluate_model,
    run_ablation,
    sweep_rounds,
    train,
)

__all__ = ["main", "run", "build_parser", "DEFAULTS"]


class CliError(ValueError):
    """User/validation error; maps to exit code 1."""


DEFAULTS: dict = {
    # model
    "d_h": 48,
    "window": 4,
    "n_global_tokens": 8,
    "rounds": 3,
    "vocab_size": 512,
    "use_spatial_prefix": True,
    "use_gskm": True,
    "use_iteration": True,
    # training
    "lr": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "epochs": 200,
    "seed": 0,
    "shuffle": True,
    "grad_clip": None,
    "eval_every": 0,
    # generation
    "pattern": "mixed",
    "n_keys": 3,
    "n_values_per_key": 3,
    "jitter": 0.0,
    "gen_vocab_size": 64,
    "n_docs": 8,
    # evaluation
    "buckets": list(DEFAULT_BUCKETS),
    # harness
    "seeds": [0, 1, 2, 3, 4],
    "round_values": [1, 2, 3, 4, 5],
    # gradcheck
    "gradcheck_entities": 6,
    "gradcheck_step": 1e-5,
    "gradcheck_tolerance": 1e-4,
}


def _parse_set(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise CliError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise CliError(f"--set: unknown config key {key!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def load_config(args) -> dict:
    """Merge defaults, config file, --set overrides and the seed sources.

    Seed priority (highest wins): --seed, --set seed=, config file,
    GOSE_SEED env var, built-in default.
    """
    cfg = dict(DEFAULTS)
    env_seed = os.environ.get("GOSE_SEED")
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError as e:
            raise CliError(f"GOSE_SEED is not an integer: {env_seed!r}") from e
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise CliError(f"{path}: invalid JSON: {e}") from e
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise CliError(f"{path}: unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update(_parse_set(getattr(args, "set", None) or []))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig(
            d_h=int(cfg["d_h"]),
            window=int(cfg["window"]),
            n_global_tokens=int(cfg["n_global_tokens"]),
            rounds=int(cfg["rounds"]),
            vocab_size=int(cfg["vocab_size"]),
            use_spatial_prefix=bool(cfg["use_spatial_prefix"]),
            use_gskm=bool(cfg["use_gskm"]),
            use_iteration=bool(cfg["use_iteration"]),
        )
    except ValueError as e:
        raise CliError(str(e)) from e


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            lr=float(cfg["lr"]),
            beta1=float(cfg["beta1"]),
            beta2=float(cfg["beta2"]),
            eps=float(cfg["eps"]),
            epochs=int(cfg["epochs"]),
            seed=int(cfg["seed"]),
            shuffle=bool(cfg["shuffle"]),
            grad_clip=None if cfg["grad_clip"] is None else float(cfg["grad_clip"]),
            eval_every=int(cfg["eval_every"]),
        )
    except (TypeError, ValueError) as e:
        raise CliError(str(e)) from e


def gen_config(cfg: dict) -> GenConfig:
    try:
        return GenConfig(
            seed=int(cfg["seed"]),
            pattern=str(cfg["pattern"]),
            n_keys=int(cfg["n_keys"]),
            n_values_per_key=int(cfg["n_values_per_key"]),
            jitter=float(cfg["jitter"]),
            vocab_size=int(cfg["gen_vocab_size"]),
            n_docs=int(cfg["n_docs"]),
        )
    except ConfigError as e:
        raise CliError(str(e)) from e


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: dict) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "versions": {
            "package": __version__,
            "dataset": DATASET_SCHEMA,
            "checkpoint": CHECKPOINT_SCHEMA,
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")


def _load_docs(path: str) -> list[Document]:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"dataset not found: {p}")
    return load_dataset(p)


def _pretty_metrics(report: dict) -> str:
    lines = [
        f"  precision              {report['precision']:.4f}",
        f"  recall                 {report['recall']:.4f}",
        f"  f1                     {report['f1']:.4f}",
        f"  crossing conflict rate {report['crossing_conflict_rate']:.4f}",
    ]
    for b in report["recall_by_distance"]:
        r = "n/a" if b["recall"] is None else f"{b['recall']:.4f}"
        lines.append(f"  recall d in [{b['lo']:.3f}, {b['hi']:.3f}]  {r}  (gold {b['gold']})")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Subcommands


def cmd_generate(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    docs = generate(gen_config(cfg))
    save_dataset(docs, out / "dataset.jsonl")
    _write_manifest(out, "generate", cfg)
    print(f"wrote {len(docs)} documents to {out / 'dataset.jsonl'}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    docs = _load_docs(args.data)
    params, record = train(docs, model_config(cfg), train_config(cfg), out_dir=str(out))
    (out / "run_record.json").write_text(
        json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(out, "train", cfg)
    print(f"trained {len(docs)} docs for {len(record.epoch_losses)} epochs; "
          f"final loss {record.epoch_losses[-1]:.6f}; checkpoint in {out / 'checkpoint'}")
    return 2 if record.aborted else 0


def cmd_eval(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    docs = _load_docs(args.data)
    if bool(args.ckpt) == bool(args.pred):
        raise CliError("eval requires exactly one of --ckpt or --pred")
    if args.ckpt:
        params, mcfg = load_checkpoint(args.ckpt)
        report = evaluate_model(params, mcfg, docs, buckets=cfg["buckets"])
    else:
        pred_path = Path(args.pred)
        if not pred_path.is_file():
            raise CliError(f"predictions file not found: {pred_path}")
        raw = json.loads(pred_path.read_text(encoding="utf-8"))
        by_id = {r["doc_id"]: r["links"] for r in raw}
        preds = []
        for doc in docs:
            if doc.doc_id not in by_id:
                raise CliError(f"--pred is missing predictions for {doc.doc_id}")
            preds.append({(int(k), int(v)) for k, v in by_id[doc.doc_id]})
        report = evaluate(docs, preds, buckets=cfg["buckets"])
    report.seed = cfg["seed"]
    report.config_hash = config_hash(cfg)
    write_report_json(report, out / "metrics.json")
    _write_manifest(out, "eval", cfg)
    if args.pretty:
        print(_pretty_metrics(report.to_dict()))
    else:
        print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def _gradcheck_document(cfg: dict) -> Document:
    n = int(cfg["gradcheck_entities"])
    gen = GenConfig(seed=int(cfg["seed"]), pattern="crossing",
                    n_keys=max(2, (n + 1) // 2), n_values_per_key=1,
                    vocab_size=int(cfg["gen_vocab_size"]), n_docs=1)
    doc = generate(gen)[0]
    if doc.n_entities > n:
        entities = doc.entities[:n]
        links = frozenset((k, v) for k, v in doc.links if k < n and v < n)
        doc = Document(doc_id=doc.doc_id, page_w=1.0, page_h=1.0,
                       entities=entities, links=links)
    return doc


def cmd_gradcheck(args) -> int:
    cfg = load_config(args)
    mcfg = model_config(cfg)
    doc = _gradcheck_document(cfg)
    params = GoseParams.init(mcfg, seed=int(cfg["seed"]))
    tensors = [t for _, t in params.items()]
    names = params.names()

    def f(_inputs):
        logits, _ = forward(doc, params, mcfg)
        return loss(logits, doc)

    err, (pi, coord, analytic, numeric) = ad.gradcheck(
        f, tensors, h=float(cfg["gradcheck_step"]))
    tol = float(cfg["gradcheck_tolerance"])
    report = {
        "max_rel_err": err,
        "tolerance": tol,
        "worst_param": None if pi is None else names[pi],
        "worst_coord": coord,
        "analytic": analytic,
        "numeric": numeric,
        "n_entities": doc.n_entities,
        "n_params": params.n_params,
        "passed": bool(err < tol),
    }
    if args.out:
        out = _out_dir(args)
        (out / "gradcheck.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        _write_manifest(out, "gradcheck", cfg)
    print(json.dumps(report, sort_keys=True))
    return 0 if report["passed"] else 2


def _mean_f1(rows: list[dict]) -> float:
    return float(np.mean([r["metrics"]["f1"] for r in rows]))


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    train_docs = _load_docs(args.data)
    test_docs = _load_docs(args.test_data)
    results = run_ablation(train_docs, test_docs, model_config(cfg), train_config(cfg),
                           seeds=[int(s) for s in cfg["seeds"]])
    summary = {v: {"mean_f1": _mean_f1(rows), "runs": rows} for v, rows in results.items()}
    (out / "ablation.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    _write_manifest(out, "ablate", cfg)
    if args.pretty:
        for v in ABLATION_VARIANTS:
            print(f"  {v:<20} mean F1 {summary[v]['mean_f1']:.4f}")
    else:
        print(json.dumps({v: summary[v]["mean_f1"] for v in summary}, sort_keys=True))
    return 0


def cmd_sweep_k(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    train_docs = _load_docs(args.data)
    test_docs = _load_docs(args.test_data)
    results = sweep_rounds(train_docs, test_docs, model_config(cfg), train_config(cfg),
                           seeds=[int(s) for s in cfg["seeds"]],
                           round_values=[int(k) for k in cfg["round_values"]])
    summary = {str(k): {"mean_f1": _mean_f1(rows), "runs": rows} for k, rows in results.items()}
    (out / "sweep_k.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    _write_manifest(out, "sweep-k", cfg)
    if args.pretty:
        for k in sorted(summary, key=int):
            print(f"  K={k}  mean F1 {summary[k]['mean_f1']:.4f}")
    else:
        print(json.dumps({k: summary[k]["mean_f1"] for k in summary}, sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# Parser and dispatch


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="JSON config file (flat schema, shared by all subcommands)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key; value parsed as JSON, else kept as string")
    p.add_argument("--seed", type=int, help="seed override (highest priority)")
    p.add_argument("--pretty", action="store_true", help="human-readable output tables")
    if out_required:
        p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gose",
        description="Global-structure-guided link extraction: synthetic benchmarks, "
                    "training, evaluation, and gradient checking.",
    )
    parser.add_argument("--version", action="version", version=f"gose {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset")
    _add_common(p)
    p.add_argument("--data", required=True, help="training dataset (gose-ds/1 jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or a predictions file")
    _add_common(p)
    p.add_argument("--data", required=True, help="evaluation dataset (gose-ds/1 jsonl)")
    p.add_argument("--ckpt", help="checkpoint directory to evaluate")
    p.add_argument("--pred", help="JSON predictions file (list of {doc_id, links})")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    _add_common(p, out_required=False)
    p.add_argument("--out", help="optional output directory for the report")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and score the four ablation variants")
    _add_common(p)
    p.add_argument("--data", required=True, help="training dataset (gose-ds/1 jsonl)")
    p.add_argument("--test-data", required=True, help="held-out dataset for metrics")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-k", help="metrics as a function of refinement rounds")
    _add_common(p)
    p.add_argument("--data", required=True, help="training dataset (gose-ds/1 jsonl)")
    p.add_argument("--test-data", required=True, help="held-out dataset for metrics")
    p.set_defaults(func=cmd_sweep_k)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; map to the documented code 1
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
