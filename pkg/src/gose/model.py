"""The relation-extraction head: entity encoding, bi-affine pair scoring,
spatial-prefix-guided windowed attention, global token interaction, and
gated iterative refinement.

All trainable state lives in :class:`GoseParams`; every forward builds a
fresh autodiff graph so documents of different sizes can share parameters.
"""

from __future__ import annotations

import hashlib
import json
import math
import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .docmodel import Document
from .geometry import pair_geometry

__all__ = [
    "ModelConfig",
    "GoseParams",
    "RelationFeatureMap",
    "IterationState",
    "encode_entities",
    "base_project",
    "biaffine_logits",
    "relation_features",
    "spatial_prefix",
    "spls_layer",
    "global_interaction",
    "pool_and_gate",
    "forward",
    "loss",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
    "config_hash",
    "CHECKPOINT_SCHEMA",
]

CHECKPOINT_SCHEMA = "gose-ckpt/1"
INIT_SCALE = 0.08


@dataclass(frozen=True)
class ModelConfig:
    d_h: int = 48
    window: int = 4
    n_global_tokens: int = 8
    rounds: int = 3
    vocab_size: int = 512
    use_spatial_prefix: bool = True
    use_gskm: bool = True
    use_iteration: bool = True

    def __post_init__(self):
        if self.d_h < 6 or self.d_h % 6 != 0:
            raise ValueError(f"d_h must be a positive multiple of 6, got {self.d_h}")
        if self.window < 1 or self.n_global_tokens < 1 or self.rounds < 1:
            raise ValueError("window, n_global_tokens and rounds must be >= 1")
        if self.n_global_tokens >= self.window ** 2:
            raise ValueError(
                f"n_global_tokens ({self.n_global_tokens}) must be smaller than "
                f"window^2 ({self.window ** 2})"
            )
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")


def param_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    d, d2 = cfg.d_h, 2 * cfg.d_h
    d6 = cfg.d_h // 6
    shapes: "OrderedDict[str, tuple[int, ...]]" = OrderedDict()
    shapes["embed"] = (cfg.vocab_size, d2)
    shapes["bbox_proj"] = (4, d2)
    shapes["W_key"] = (d2, d)
    shapes["b_key"] = (d,)
    shapes["W_value"] = (d2, d)
    shapes["b_value"] = (d,)
    shapes["W1"] = (d, 2, d)
    shapes["W2"] = (d, 2)
    shapes["W_r"] = (2, d)
    shapes["b_r"] = (d,)
    shapes["W_dir"] = (1, d6)
    shapes["W_dis"] = (1, d6)
    shapes["W_q"] = (d, d)
    shapes["W_k"] = (d, d)
    shapes["W_v"] = (d, d)
    shapes["W_ks"] = (d, d)
    shapes["W_vs"] = (d, d)
    shapes["T"] = (cfg.n_global_tokens, d)
    shapes["W_qT"] = (d, d)
    shapes["W_kT"] = (d, d)
    shapes["W_vT"] = (d, d)
    shapes["W_g"] = (d2, d)
    shapes["b_g"] = (d,)
    return shapes


class GoseParams:
    """Ordered name -> Tensor map of every trainable weight."""

    def __init__(self, tensors: "OrderedDict[str, Tensor]"):
        self.tensors = tensors

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "GoseParams":
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xC0F1)))
        tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, shape in param_shapes(cfg).items():
            if name.startswith("b_"):
                data = np.zeros(shape)
            else:
                data = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
            tensors[name] = Tensor(data, requires_grad=True)
        return cls(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors.keys())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "GoseParams":
        out: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, t in self.tensors.items():
            out[name] = Tensor(t.data.copy(), requires_grad=t.requires_grad)
        return GoseParams(out)

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())


@dataclass
class RelationFeatureMap:
    """Pair-feature grid, zero-padded to a multiple of the window size."""

    values: Tensor  # [padded_n, padded_n, d_h]
    n: int
    padded_n: int
    mask: np.ndarray  # [padded_n, padded_n] bool, True on real cells

    def valid_flat(self) -> Tensor:
        return ad.reshape(ad.crop2d(self.values, self.n), (self.n * self.n, self.values.shape[-1]))


@dataclass
class IterationState:
    h_k: Tensor  # [N, d_h]
    h_v: Tensor  # [N, d_h]
    t: int = 0


# --------------------------------------------------------------------------
# Encoder stub and base projections


def token_index(token: str, vocab_size: int) -> int:
    return zlib.crc32(token.encode("utf-8")) % vocab_size


def encode_entities(doc: Document, params: GoseParams, cfg: ModelConfig) -> Tensor:
    """Mean of hashed-token embedding rows plus a linear box projection."""
    n = doc.n_entities
    lookup = np.zeros((n, cfg.vocab_size))
    boxes = np.zeros((n, 4))
    for i, e in enumerate(doc.entities):
        toks = list(e.tokens) + ([e.kind] if e.kind else [])
        for tok in toks:
            lookup[i, token_index(tok, cfg.vocab_size)] += 1.0 / len(toks)
        boxes[i] = (e.bbox.x1, e.bbox.y1, e.bbox.x2, e.bbox.y2)
    emb = ad.matmul(ad.constant(lookup), params["embed"])
    geo = ad.matmul(ad.constant(boxes), params["bbox_proj"])
    return ad.add(emb, geo)


def _affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    ones = ad.constant(np.ones((x.shape[0], 1)))
    bias = ad.matmul(ones, ad.reshape(b, (1, b.shape[-1])))
    return ad.add(ad.matmul(x, w), bias)


def base_project(e: Tensor, params: GoseParams) -> IterationState:
    h_k = _affine(e, params["W_key"], params["b_key"])
    h_v = _affine(e, params["W_value"], params["b_value"])
    return IterationState(h_k=h_k, h_v=h_v, t=0)


# --------------------------------------------------------------------------
# Pair scoring and relation features


def biaffine_logits(state: IterationState, params: GoseParams) -> Tensor:
    """Per-pair two-class logits: bilinear key-value term plus a key-side
    affine term."""
    h_k, h_v = state.h_k, state.h_v
    n = h_k.shape[0]
    per_class = []
    for c in (0, 1):
        w1c = ad.index_axis(params["W1"], 1, c)  # [d, d]
        bil = ad.matmul(ad.matmul(h_k, w1c), ad.transpose(h_v, (1, 0)))  # [N, N]
        w2c = ad.reshape(ad.index_axis(params["W2"], 1, c), (params["W2"].shape[0], 1))
        aff = ad.matmul(ad.matmul(h_k, w2c), ad.constant(np.ones((1, n))))  # [N, N]
        per_class.append(ad.reshape(ad.add(bil, aff), (n, n, 1)))
    return ad.concat_lastdim(*per_class)


def _padded_n(n: int, window: int) -> int:
    return ((n + window - 1) // window) * window


def relation_features(logits: Tensor, params: GoseParams, cfg: ModelConfig) -> RelationFeatureMap:
    n = logits.shape[0]
    flat = ad.reshape(logits, (n * n, 2))
    feats = _affine(flat, params["W_r"], params["b_r"])
    grid = ad.reshape(feats, (n, n, cfg.d_h))
    p = _padded_n(n, cfg.window)
    mask = np.zeros((p, p), dtype=bool)
    mask[:n, :n] = True
    return RelationFeatureMap(values=ad.pad2d(grid, p), n=n, padded_n=p, mask=mask)


# --------------------------------------------------------------------------
# Spatial prefix


def spatial_prefix(doc: Document, params: GoseParams, cfg: ModelConfig) -> Tensor:
    """Per-pair geometry features: for each anchor (top-left, center,
    bottom-right), the direction and distance scalars each projected to
    d_h/6 dimensions and concatenated."""
    n = doc.n_entities
    dirs = np.zeros((3, n * n, 1))
    dists = np.zeros((3, n * n, 1))
    for i, a in enumerate(doc.entities):
        for j, b in enumerate(doc.entities):
            g = pair_geometry(a.bbox, b.bbox)
            r = i * n + j
            dirs[0, r, 0], dists[0, r, 0] = g.dir_tl, g.dist_tl
            dirs[1, r, 0], dists[1, r, 0] = g.dir_ct, g.dist_ct
            dirs[2, r, 0], dists[2, r, 0] = g.dir_br, g.dist_br
    parts = []
    for a in range(3):
        parts.append(ad.matmul(ad.constant(dirs[a]), params["W_dir"]))
        parts.append(ad.matmul(ad.constant(dists[a]), params["W_dis"]))
    return ad.reshape(ad.concat_lastdim(*parts), (n, n, cfg.d_h))


# --------------------------------------------------------------------------
# Windowed attention with spatial-prefix keys/values


def _partition(x: Tensor, p: int, s: int) -> Tensor:
    d = x.shape[-1]
    w = p // s
    x = ad.reshape(x, (w, s, w, s, d))
    x = ad.transpose(x, (0, 2, 1, 3, 4))
    return ad.reshape(x, (w * w, s * s, d))


def _unpartition(x: Tensor, p: int, s: int) -> Tensor:
    d = x.shape[-1]
    w = p // s
    x = ad.reshape(x, (w, w, s, s, d))
    x = ad.transpose(x, (0, 2, 1, 3, 4))
    return ad.reshape(x, (p, p, d))


def _partition_mask(mask: np.ndarray, p: int, s: int) -> np.ndarray:
    w = p // s
    return mask.reshape(w, s, w, s).transpose(0, 2, 1, 3).reshape(w * w, s * s)


def spls_layer(
    rmap: RelationFeatureMap,
    sfeat: Optional[Tensor],
    params: GoseParams,
    cfg: ModelConfig,
    counter: Optional[dict] = None,
) -> tuple[Tensor, np.ndarray]:
    """Windowed self-attention over the pair grid, optionally with the
    window's own spatial features prepended as extra keys/values.

    Returns the padded attention output and the per-query prefix attention
    mass (zero when the prefix is disabled or the query cell is padding).
    """
    s, d = cfg.window, cfg.d_h
    p = rmap.padded_n
    nw = (p // s) ** 2
    s2 = s * s

    valid = _partition_mask(rmap.mask, p, s)  # [nw, s2]

    # Project on the flat grid (one large matmul each), then partition.
    def proj(grid: Tensor, w: Tensor) -> Tensor:
        flat = ad.matmul(ad.reshape(grid, (p * p, d)), w)
        return _partition(ad.reshape(flat, (p, p, d)), p, s)

    q = proj(rmap.values, params["W_q"])
    k_c = proj(rmap.values, params["W_k"])
    v_c = proj(rmap.values, params["W_v"])
    if sfeat is not None:
        pw = ad.pad2d(sfeat, p)
        k_all = ad.concat([proj(pw, params["W_ks"]), k_c], axis=1)
        v_all = ad.concat([proj(pw, params["W_vs"]), v_c], axis=1)
        key_valid = np.concatenate([valid, valid], axis=1)
    else:
        k_all, v_all = k_c, v_c
        key_valid = valid
    nk = key_valid.shape[1]

    scores = ad.scale(ad.matmul(q, ad.transpose(k_all, (0, 2, 1))), 1.0 / math.sqrt(d))
    if counter is not None:
        counter["score_evals"] = counter.get("score_evals", 0) + nw * s2 * nk

    mask = np.repeat(key_valid[:, None, :], s2, axis=1)
    dead = ~valid.any(axis=1)
    mask[dead] = True  # fully-padded window: run a harmless softmax, zero after
    probs = ad.softmax_lastdim(scores, mask)
    out = ad.matmul(probs, v_all)
    gate = np.repeat(valid[:, :, None].astype(float), d, axis=2)
    out = ad.mul(out, ad.constant(gate))

    if sfeat is not None:
        lam = probs.data[:, :, :s2].sum(axis=-1) * valid
    else:
        lam = np.zeros((nw, s2))
    return _unpartition(out, p, s), lam


def global_interaction(
    rmap: RelationFeatureMap,
    params: GoseParams,
    cfg: ModelConfig,
    counter: Optional[dict] = None,
) -> Tensor:
    """Learnable tokens pool the whole valid pair grid, then every cell
    attends back over the pooled tokens."""
    n, d, m = rmap.n, cfg.d_h, cfg.n_global_tokens
    flat = rmap.valid_flat()  # [n*n, d]
    inv = 1.0 / math.sqrt(d)

    k_r = ad.matmul(flat, params["W_k"])
    v_r = ad.matmul(flat, params["W_v"])
    q_t = ad.matmul(params["T"], params["W_qT"])
    pooled = ad.matmul(ad.softmax_lastdim(ad.scale(ad.matmul(q_t, ad.transpose(k_r, (1, 0))), inv)), v_r)

    q_r = ad.matmul(flat, params["W_q"])
    k_t = ad.matmul(pooled, params["W_kT"])
    v_t = ad.matmul(pooled, params["W_vT"])
    out = ad.matmul(ad.softmax_lastdim(ad.scale(ad.matmul(q_r, ad.transpose(k_t, (1, 0))), inv)), v_t)
    if counter is not None:
        counter["score_evals"] = counter.get("score_evals", 0) + 2 * m * n * n
    return ad.reshape(out, (n, n, d))


# --------------------------------------------------------------------------
# Pooling, gating, full forward


def _gated_update(h: Tensor, h_hat: Tensor, params: GoseParams) -> Tensor:
    z = _affine(ad.concat_lastdim(h, h_hat), params["W_g"], params["b_g"])
    return ad.add(h, ad.mul(ad.sigmoid(z), h_hat))


def pool_and_gate(
    r_next: Tensor, state: IterationState, params: GoseParams
) -> tuple[IterationState, tuple[Tensor, Tensor]]:
    """Mean-pool the pair grid into key/value summaries and gate them into
    the entity features.  Key features pool across the value axis and vice
    versa."""
    hk_hat = ad.mean_axis(r_next, axis=1)
    hv_hat = ad.mean_axis(r_next, axis=0)
    new = IterationState(
        h_k=_gated_update(state.h_k, hk_hat, params),
        h_v=_gated_update(state.h_v, hv_hat, params),
        t=state.t + 1,
    )
    return new, (hk_hat, hv_hat)


def forward(doc: Document, params: GoseParams, cfg: ModelConfig) -> tuple[Tensor, dict]:
    """Run the full head and return final pair logits plus diagnostics
    (per-round prefix attention mass, attention score-evaluation count)."""
    diag: dict = {"score_evals": 0, "lambda_mean": [], "lambda_max": [], "rounds": 0}
    e = encode_entities(doc, params, cfg)
    state = base_project(e, params)
    sfeat = None
    if cfg.use_gskm and cfg.use_spatial_prefix:
        sfeat = spatial_prefix(doc, params, cfg)

    rounds = cfg.rounds if cfg.use_iteration else 1
    pooled_pair = None
    for _ in range(rounds):
        logits = biaffine_logits(state, params)
        rmap = relation_features(logits, params, cfg)
        if cfg.use_gskm:
            r_local, lam = spls_layer(rmap, sfeat, params, cfg, diag)
            r_global = global_interaction(rmap, params, cfg, diag)
            r_next = ad.add(ad.crop2d(r_local, rmap.n), r_global)
            n_valid = max(int(rmap.mask.sum()), 1)
            diag["lambda_mean"].append(float(lam.sum() / n_valid))
            diag["lambda_max"].append(float(lam.max()) if lam.size else 0.0)
        else:
            r_next = ad.crop2d(rmap.values, rmap.n)
            diag["lambda_mean"].append(0.0)
            diag["lambda_max"].append(0.0)
        state, pooled_pair = pool_and_gate(r_next, state, params)
        diag["rounds"] += 1

    if cfg.use_iteration:
        final = biaffine_logits(state, params)
    else:
        # Single pass: score directly from the pooled summaries, no gate.
        hk_hat, hv_hat = pooled_pair
        final = biaffine_logits(IterationState(h_k=hk_hat, h_v=hv_hat, t=1), params)
    return final, diag


def loss(final_logits: Tensor, doc: Document) -> Tensor:
    """Summed two-class cross-entropy over all ordered pairs, diagonal
    excluded."""
    n = doc.n_entities
    y = np.zeros((n, n), dtype=int)
    for k, v in doc.links:
        y[k, v] = 1
    onehot = np.zeros((n * n, 2))
    onehot[np.arange(n * n), y.reshape(-1)] = 1.0
    offdiag = (~np.eye(n, dtype=bool)).reshape(-1).astype(float)
    weight = onehot * offdiag[:, None]

    logp = ad.log_softmax_lastdim(ad.reshape(final_logits, (n * n, 2)))
    picked = ad.mul(logp, ad.constant(weight))
    return ad.neg(ad.sum_all(picked))


def predict(final_logits: Tensor | np.ndarray) -> set[tuple[int, int]]:
    data = final_logits.data if isinstance(final_logits, Tensor) else np.asarray(final_logits)
    n = data.shape[0]
    out = set()
    for i in range(n):
        for j in range(n):
            if i != j and data[i, j, 1] > data[i, j, 0]:
                out.add((i, j))
    return out


# --------------------------------------------------------------------------
# Checkpoints


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()


def save_checkpoint(path, params: GoseParams, cfg: ModelConfig) -> None:
    """Write a checkpoint directory: manifest.json plus params.bin holding
    every parameter as little-endian fp64 in manifest order."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = b"".join(t.data.astype("<f8").tobytes() for _, t in params.items())
    manifest = {
        "version": CHECKPOINT_SCHEMA,
        "config": asdict(cfg),
        "params": [{"name": n, "shape": list(t.shape)} for n, t in params.items()],
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    (path / "params.bin").write_bytes(blob)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")


def load_checkpoint(path) -> tuple[GoseParams, ModelConfig]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("version") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')!r}")
    blob = (path / "params.bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise ValueError(f"{path}: checkpoint content hash mismatch")
    cfg = ModelConfig(**manifest["config"])
    tensors: "OrderedDict[str, Tensor]" = OrderedDict()
    offset = 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        tensors[entry["name"]] = Tensor(arr.copy(), requires_grad=True)
        offset += count * 8
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes in params.bin")
    return GoseParams(tensors), cfg
