"""Adam optimizer, deterministic per-document training loop, and the
ablation / iteration-sweep harnesses."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .docmodel import Document
from .evaluation import MetricsReport, evaluate
from .model import (
    GoseParams,
    ModelConfig,
    config_hash,
    forward,
    loss,
    predict,
    save_checkpoint,
)

__all__ = [
    "TrainConfig",
    "RunRecord",
    "AdamState",
    "adam_step",
    "train",
    "ABLATION_VARIANTS",
    "ablation_config",
    "run_ablation",
    "sweep_rounds",
]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    seed: int = 0
    shuffle: bool = True
    grad_clip: Optional[float] = None
    eval_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    epoch_losses: list[float] = field(default_factory=list)
    eval_metrics: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    aborted: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class AdamState:
    def __init__(self, params: GoseParams):
        self.m = {n: np.zeros(t.shape) for n, t in params.items()}
        self.v = {n: np.zeros(t.shape) for n, t in params.items()}
        self.t = 0


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def adam_step(
    params: GoseParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> None:
    """Bias-corrected Adam update in place, with optional global-norm clipping."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {name!r}")
    if cfg.grad_clip is not None:
        norm = _global_norm(grads)
        if norm > cfg.grad_clip:
            factor = cfg.grad_clip / norm
            grads = {n: g * factor for n, g in grads.items()}
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    for name, t in params.items():
        g = grads.get(name)
        if g is None:
            continue
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1 ** state.t)
        v_hat = state.v[name] / (1 - b2 ** state.t)
        t.data = t.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def _train_step(doc: Document, params: GoseParams, model_cfg: ModelConfig) -> tuple[float, dict]:
    params.zero_grads()
    with ad.Graph() as g:
        logits, _ = forward(doc, params, model_cfg)
        out = loss(logits, doc)
    ad.backward(g, out)
    grads = {n: (t.grad if t.grad is not None else np.zeros(t.shape)) for n, t in params.items()}
    return out.item(), grads


def train(
    dataset: Sequence[Document],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_dir: Optional[str] = None,
    eval_dataset: Optional[Sequence[Document]] = None,
) -> tuple[GoseParams, RunRecord]:
    """Deterministic training: batch = one document, all randomness drawn
    from named substreams of the root seed.  A NaN loss aborts with the last
    good checkpoint retained."""
    if not dataset:
        raise ValueError("empty training dataset")
    start = time.perf_counter()
    params = GoseParams.init(model_cfg, seed=train_cfg.seed)
    opt = AdamState(params)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence((int(train_cfg.seed), 0x5AFF1E))
    )
    record = RunRecord(
        config_hash=config_hash({"model": asdict(model_cfg), "train": asdict(train_cfg)}),
        seed=train_cfg.seed,
    )
    out_path = Path(out_dir) if out_dir else None
    last_good = params.copy()

    for epoch in range(train_cfg.epochs):
        order = np.arange(len(dataset))
        if train_cfg.shuffle:
            shuffle_rng.shuffle(order)
        losses = []
        for idx in order:
            step_loss, grads = _train_step(dataset[int(idx)], params, model_cfg)
            if not np.isfinite(step_loss):
                record.aborted = True
                record.epoch_losses.append(float("nan"))
                record.wall_time = time.perf_counter() - start
                if out_path:
                    save_checkpoint(out_path / "checkpoint", last_good, model_cfg)
                return last_good, record
            adam_step(params, grads, opt, train_cfg)
            losses.append(step_loss)
        record.epoch_losses.append(float(np.mean(losses)))
        last_good = params.copy()
        if train_cfg.eval_every and (epoch + 1) % train_cfg.eval_every == 0:
            if eval_dataset:
                report = evaluate_model(params, model_cfg, eval_dataset)
                record.eval_metrics.append({"epoch": epoch + 1, **report.to_dict()})
            if out_path:
                save_checkpoint(out_path / "checkpoint", params, model_cfg)

    record.wall_time = time.perf_counter() - start
    if out_path:
        save_checkpoint(out_path / "checkpoint", params, model_cfg)
    return params, record


def predict_docs(
    params: GoseParams, model_cfg: ModelConfig, docs: Sequence[Document]
) -> list[set[tuple[int, int]]]:
    preds = []
    for doc in docs:
        logits, _ = forward(doc, params, model_cfg)
        preds.append(predict(logits))
    return preds


def evaluate_model(
    params: GoseParams,
    model_cfg: ModelConfig,
    docs: Sequence[Document],
    buckets: Optional[Sequence[float]] = None,
) -> MetricsReport:
    preds = predict_docs(params, model_cfg, docs)
    return evaluate(docs, preds, buckets=buckets)


# --------------------------------------------------------------------------
# Ablation and iteration-round harnesses

ABLATION_VARIANTS = ("full", "no_spatial_prefix", "no_gskm", "no_iteration")


def ablation_config(base: ModelConfig, variant: str) -> ModelConfig:
    if variant == "full":
        return base
    if variant == "no_spatial_prefix":
        return replace(base, use_spatial_prefix=False)
    if variant == "no_gskm":
        return replace(base, use_gskm=False, use_spatial_prefix=False)
    if variant == "no_iteration":
        return replace(base, use_iteration=False)
    raise ValueError(f"unknown ablation variant {variant!r}")


def run_ablation(
    train_docs: Sequence[Document],
    test_docs: Sequence[Document],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seeds: Sequence[int],
    variants: Sequence[str] = ABLATION_VARIANTS,
) -> dict[str, list[dict]]:
    """Train every variant for every seed; returns per-variant metric dicts."""
    results: dict[str, list[dict]] = {}
    for variant in variants:
        cfg = ablation_config(model_cfg, variant)
        rows = []
        for seed in seeds:
            tc = replace(train_cfg, seed=int(seed))
            params, record = train(train_docs, cfg, tc)
            report = evaluate_model(params, cfg, test_docs)
            rows.append({"seed": int(seed), "metrics": report.to_dict(),
                         "final_loss": record.epoch_losses[-1]})
        results[variant] = rows
    return results


def sweep_rounds(
    train_docs: Sequence[Document],
    test_docs: Sequence[Document],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seeds: Sequence[int],
    round_values: Sequence[int] = (1, 2, 3, 4, 5),
) -> dict[int, list[dict]]:
    """Metrics as a function of the number of refinement rounds."""
    results: dict[int, list[dict]] = {}
    for k in round_values:
        cfg = replace(model_cfg, rounds=int(k))
        rows = []
        for seed in seeds:
            tc = replace(train_cfg, seed=int(seed))
            params, _ = train(train_docs, cfg, tc)
            report = evaluate_model(params, cfg, test_docs)
            rows.append({"seed": int(seed), "metrics": report.to_dict()})
        results[int(k)] = rows
    return results
