"""Seeded synthetic form generator.

Two layout families reproduce the failure modes the model is built around:
``column`` documents hold long-range one-to-many key columns, ``crossing``
documents hold same-row key/value pairs whose swapped assignment would
cross.  Row and column bands are re-drawn per document and token content
marks keys and values but never identifies the partner entity, so linking
requires relative layout reasoning rather than position memorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .docmodel import Document, Entity
from .geometry import BBox, segments_cross

__all__ = ["GenConfig", "ConfigError", "generate", "swapped_assignment"]

PATTERNS = ("column", "crossing", "mixed")
_MIN_CELL = 0.02
# Per-document cell bands vary between these factors of the uniform width,
# so absolute positions never repeat across documents and linking has to
# rely on relative layout.
_BAND_LO, _BAND_HI = 0.5, 1.5


class ConfigError(ValueError):
    """Infeasible or out-of-range generator configuration."""


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    pattern: str = "mixed"
    n_keys: int = 3
    n_values_per_key: int = 3
    jitter: float = 0.0
    vocab_size: int = 64
    n_docs: int = 1

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown pattern {self.pattern!r}; expected one of {PATTERNS}")
        if self.n_keys < 1 or self.n_values_per_key < 1 or self.n_docs < 1:
            raise ConfigError("n_keys, n_values_per_key and n_docs must be positive")
        if not (0.0 <= self.jitter <= 0.4):
            raise ConfigError(f"jitter {self.jitter} outside [0, 0.4]")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must be at least 4")
        # Reject grids whose narrowest possible cell would collapse.
        for pat in (["column", "crossing"] if self.pattern == "mixed" else [self.pattern]):
            cols, rows = _grid_shape(self, pat)
            if _BAND_LO / cols < _MIN_CELL or _BAND_LO / rows < _MIN_CELL:
                raise ConfigError(
                    f"{pat} grid {cols}x{rows} leaves cells smaller than {_MIN_CELL}"
                )


def _grid_shape(cfg: GenConfig, pattern: str) -> tuple[int, int]:
    if pattern == "column":
        return cfg.n_keys, cfg.n_values_per_key + 1
    return 2, cfg.n_keys  # crossing: key column + value column, one row per key


def _bands(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random cell edges over [0, 1]: widths drawn per document, then
    normalized, so every document gets its own row and column rhythm."""
    widths = rng.uniform(_BAND_LO, _BAND_HI, size=n)
    edges = np.concatenate([[0.0], np.cumsum(widths / widths.sum())])
    edges[-1] = 1.0
    return edges


def _column_box(col: int, y_center: float, col_edges: np.ndarray,
                row_edges: np.ndarray, rng: np.random.Generator) -> BBox:
    """Box at a fixed horizontal span of its column, centered at y_center.

    Keeping the x extent identical within a column means gold rank links
    can never properly cross."""
    x0, cw = col_edges[col], col_edges[col + 1] - col_edges[col]
    half = 0.18 * float(np.min(np.diff(row_edges)))
    y1 = max(y_center - half, 0.0)
    y2 = min(y_center + half, 1.0)
    return BBox(x0 + 0.10 * cw, y1, x0 + 0.90 * cw, y2)


def _point_box(x_center: float, y_center: float, half_w: float,
               half_h: float) -> BBox:
    return BBox(max(x_center - half_w, 0.0), max(y_center - half_h, 0.0),
                min(x_center + half_w, 1.0), min(y_center + half_h, 1.0))


def _filler(rng: np.random.Generator, vocab_size: int) -> str:
    return f"w{int(rng.integers(vocab_size))}"


def _gold_crossings(doc: Document) -> int:
    links = sorted(doc.links)
    hits = 0
    for a in range(len(links)):
        for b in range(a + 1, len(links)):
            (k1, v1), (k2, v2) = links[a], links[b]
            if segments_cross(doc.entities[k1].bbox.center, doc.entities[v1].bbox.center,
                              doc.entities[k2].bbox.center, doc.entities[v2].bbox.center):
                hits += 1
    return hits


def _make_doc(cfg: GenConfig, pattern: str, index: int) -> Document:
    # Rejection keeps the gold-links-never-cross invariant exact; the rank
    # layouts make cross-row crossings possible but rare, and the attempt
    # counter keeps every retry deterministic.
    for attempt in range(100):
        rng = np.random.default_rng(
            np.random.SeedSequence((int(cfg.seed), int(index), attempt)))
        doc = _build_doc(cfg, pattern, index, rng)
        if _gold_crossings(doc) == 0:
            return doc
    raise ConfigError(f"could not draw a crossing-free layout for doc {index}")


def _build_doc(cfg: GenConfig, pattern: str, index: int,
               rng: np.random.Generator) -> Document:
    raw: list[tuple[BBox, tuple[str, ...], str]] = []
    raw_links: list[tuple[int, int]] = []

    cols, rows = _grid_shape(cfg, pattern)
    col_edges = _bands(cols, rng)
    row_edges = _bands(rows, rng)

    if pattern == "column":
        # Keys head their columns; each deeper value row drifts further
        # horizontally and is matched to the keys by horizontal rank, so
        # ownership of the far values cannot be read off a single pair.
        # Within a row, rank matching between two horizontal lines never
        # crosses; the caller rejects the rare cross-row crossing.
        half_h = 0.18 * float(np.min(np.diff(row_edges)))
        half_w = 0.10 * float(np.min(np.diff(col_edges)))
        key_xs = [col_edges[k] + rng.uniform(0.4, 0.6) * (col_edges[k + 1] - col_edges[k])
                  for k in range(cfg.n_keys)]
        ky = 0.5 * (row_edges[0] + row_edges[1])
        for k in range(cfg.n_keys):
            raw.append((_point_box(key_xs[k], ky, half_w, half_h),
                        ("k", _filler(rng, cfg.vocab_size)), "question"))
        key_rank = np.argsort(key_xs, kind="stable")
        for r in range(1, rows):
            reach = min(2.2 * cfg.jitter * r / max(rows - 1, 1), 1.0)
            vy = 0.5 * (row_edges[r] + row_edges[r + 1])
            vxs = []
            for k in range(cfg.n_keys):
                w = col_edges[k + 1] - col_edges[k]
                vx = key_xs[k] + rng.uniform(-1.0, 1.0) * reach * w
                vxs.append(float(np.clip(vx, half_w + 0.005, 1.0 - half_w - 0.005)))
            base = len(raw)
            for k in range(cfg.n_keys):
                raw.append((_point_box(vxs[k], vy, half_w, half_h),
                            ("v", _filler(rng, cfg.vocab_size)), "answer"))
            val_rank = np.argsort(vxs, kind="stable")
            for a, b in zip(key_rank, val_rank):
                raw_links.append((int(a), base + int(b)))
    else:
        # Keys sit in their row bands; values drift vertically by up to two
        # band heights scaled by jitter, so the nearest value is often the
        # wrong one.  Gold links follow vertical rank, which keeps them
        # non-crossing (both columns share a center x), while proximity
        # pairing would cross whenever neighbouring values swap order.
        key_ys, val_ys = [], []
        for r in range(cfg.n_keys):
            lo, hi = row_edges[r], row_edges[r + 1]
            center = 0.5 * (lo + hi)
            key_ys.append(center + rng.uniform(-0.15, 0.15) * (hi - lo))
            drift = 2.0 * cfg.jitter * rng.uniform(-1.0, 1.0) * (hi - lo)
            val_ys.append(float(np.clip(center + drift, 0.03, 0.97)))
        for r in range(cfg.n_keys):
            raw.append((_column_box(0, key_ys[r], col_edges, row_edges, rng),
                        ("k", _filler(rng, cfg.vocab_size)), "question"))
        for r in range(cfg.n_keys):
            raw.append((_column_box(1, val_ys[r], col_edges, row_edges, rng),
                        ("v", _filler(rng, cfg.vocab_size)), "answer"))
        key_rank = np.argsort(key_ys, kind="stable")
        val_rank = np.argsort(val_ys, kind="stable")
        for a, b in zip(key_rank, val_rank):
            raw_links.append((int(a), cfg.n_keys + int(b)))

    # Re-index into reading order (top-to-bottom, left-to-right centers).
    order = sorted(range(len(raw)), key=lambda i: (raw[i][0].center[1], raw[i][0].center[0]))
    pos = {old: new for new, old in enumerate(order)}
    entities = tuple(
        Entity(id=new, tokens=raw[old][1], bbox=raw[old][0], kind=raw[old][2])
        for new, old in enumerate(order)
    )
    links = frozenset((pos[k], pos[v]) for k, v in raw_links)
    return Document(
        doc_id=f"{pattern}-{cfg.seed}-{index:04d}",
        page_w=1.0,
        page_h=1.0,
        entities=entities,
        links=links,
    )


def generate(cfg: GenConfig) -> list[Document]:
    """Generate ``cfg.n_docs`` documents, deterministic in (seed, doc index)."""
    docs = []
    for i in range(cfg.n_docs):
        pattern = cfg.pattern
        if pattern == "mixed":
            pattern = "column" if i % 2 == 0 else "crossing"
        docs.append(_make_doc(cfg, pattern, i))
    return docs


def swapped_assignment(doc: Document) -> frozenset[tuple[int, int]]:
    """The deliberate distractor labeling of a crossing-pattern document.

    Values of adjacent key rows are exchanged; every exchanged pair of links
    properly crosses while the gold pair does not.
    """
    by_key: dict[int, list[int]] = {}
    for k, v in sorted(doc.links):
        by_key.setdefault(k, []).append(v)
    keys = sorted(by_key, key=lambda k: doc.entities[k].bbox.center[1])
    swapped: set[tuple[int, int]] = set()
    for a, b in zip(keys[0::2], keys[1::2]):
        for v in by_key[a]:
            swapped.add((b, v))
        for v in by_key[b]:
            swapped.add((a, v))
    if len(keys) % 2 == 1:
        for v in by_key[keys[-1]]:
            swapped.add((keys[-1], v))
    return frozenset(swapped)
