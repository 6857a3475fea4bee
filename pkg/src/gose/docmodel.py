"""Document / entity / link data model, FUNSD ingestion, dataset serialization.

The canonical on-disk dataset is UTF-8 line-delimited JSON: a header line
carrying the schema version ``gose-ds/1`` followed by one document per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .geometry import BBox

__all__ = [
    "Entity",
    "Document",
    "ParseError",
    "DATASET_SCHEMA",
    "load_funsd",
    "save_dataset",
    "load_dataset",
]

DATASET_SCHEMA = "gose-ds/1"


class ParseError(ValueError):
    """Malformed input file; the message carries the JSON path or line number."""


@dataclass(frozen=True)
class Entity:
    id: int
    tokens: tuple[str, ...]
    bbox: BBox
    kind: Optional[str] = None

    def __post_init__(self):
        if not self.tokens:
            raise ValueError(f"entity {self.id}: empty token list")


@dataclass(frozen=True)
class Document:
    doc_id: str
    page_w: float
    page_h: float
    entities: tuple[Entity, ...]
    links: frozenset[tuple[int, int]] = field(default_factory=frozenset)
    dropped_self_links: int = 0

    def __post_init__(self):
        if self.page_w <= 0 or self.page_h <= 0:
            raise ValueError(f"{self.doc_id}: non-positive page size")
        for i, e in enumerate(self.entities):
            if e.id != i:
                raise ValueError(f"{self.doc_id}: entity id {e.id} at position {i}")
        n = len(self.entities)
        for k, v in self.links:
            if not (0 <= k < n and 0 <= v < n):
                raise ValueError(f"{self.doc_id}: link ({k},{v}) out of range for {n} entities")
            if k == v:
                raise ValueError(f"{self.doc_id}: self-link on entity {k}")

    @property
    def n_entities(self) -> int:
        return len(self.entities)


# --------------------------------------------------------------------------
# FUNSD ingestion


def _require(obj, key, path):
    if key not in obj:
        raise ParseError(f"missing key at {path}.{key}")
    return obj[key]


def load_funsd(path, page_w: Optional[float] = None, page_h: Optional[float] = None) -> Document:
    """Load one FUNSD-schema annotation file into a normalized Document.

    Boxes are normalized to the unit square by the page dimensions; when they
    are not given, the max box extent stands in for the page size.  Duplicate
    links are collapsed and self-links dropped (counted, not fatal).
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON: {e}") from e
    form = _require(raw, "form", "$")
    if not isinstance(form, list):
        raise ParseError("$.form: expected an array")

    boxes, tokens, kinds, raw_ids = [], [], [], []
    for idx, item in enumerate(form):
        p = f"$.form[{idx}]"
        if not isinstance(item, dict):
            raise ParseError(f"{p}: expected an object")
        raw_ids.append(_require(item, "id", p))
        box = _require(item, "box", p)
        if not (isinstance(box, list) and len(box) == 4):
            raise ParseError(f"{p}.box: expected [x1, y1, x2, y2]")
        x1, y1, x2, y2 = (float(v) for v in box)
        if x1 > x2 or y1 > y2:
            raise ParseError(f"{p}.box: invalid extent (x1 > x2 or y1 > y2): {box}")
        boxes.append((x1, y1, x2, y2))
        words = item.get("words") or []
        toks = [w["text"] for w in words if isinstance(w, dict) and w.get("text")]
        if not toks:
            text = str(_require(item, "text", p))
            toks = text.split() or [""]
        tokens.append(tuple(toks))
        kinds.append(item.get("label"))

    if page_w is None or page_h is None:
        page_w = max((b[2] for b in boxes), default=1.0) or 1.0
        page_h = max((b[3] for b in boxes), default=1.0) or 1.0

    id_map = {rid: i for i, rid in enumerate(raw_ids)}
    entities = tuple(
        Entity(
            id=i,
            tokens=tokens[i],
            bbox=BBox(
                min(boxes[i][0] / page_w, 1.0),
                min(boxes[i][1] / page_h, 1.0),
                min(boxes[i][2] / page_w, 1.0),
                min(boxes[i][3] / page_h, 1.0),
            ),
            kind=kinds[i],
        )
        for i in range(len(form))
    )

    links: set[tuple[int, int]] = set()
    dropped = 0
    for idx, item in enumerate(form):
        for pair in item.get("linking") or []:
            p = f"$.form[{idx}].linking"
            if not (isinstance(pair, list) and len(pair) == 2):
                raise ParseError(f"{p}: expected [key_id, value_id] pairs")
            k, v = pair
            if k not in id_map or v not in id_map:
                raise ParseError(f"{p}: link {pair} references unknown entity id")
            ki, vi = id_map[k], id_map[v]
            if ki == vi:
                dropped += 1
                continue
            links.add((ki, vi))

    return Document(
        doc_id=path.stem,
        page_w=1.0,
        page_h=1.0,
        entities=entities,
        links=frozenset(links),
        dropped_self_links=dropped,
    )


# --------------------------------------------------------------------------
# Canonical dataset serialization


def _doc_to_obj(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "page_w": doc.page_w,
        "page_h": doc.page_h,
        "entities": [
            {
                "id": e.id,
                "tokens": list(e.tokens),
                "bbox": [e.bbox.x1, e.bbox.y1, e.bbox.x2, e.bbox.y2],
                "kind": e.kind,
            }
            for e in doc.entities
        ],
        "links": sorted([k, v] for k, v in doc.links),
    }


def _doc_from_obj(obj: dict) -> Document:
    entities = tuple(
        Entity(
            id=int(e["id"]),
            tokens=tuple(e["tokens"]),
            bbox=BBox(*(float(v) for v in e["bbox"])),
            kind=e.get("kind"),
        )
        for e in obj["entities"]
    )
    links = frozenset((int(k), int(v)) for k, v in obj["links"])
    return Document(
        doc_id=str(obj["doc_id"]),
        page_w=float(obj["page_w"]),
        page_h=float(obj["page_h"]),
        entities=entities,
        links=links,
    )


def save_dataset(docs: Iterable[Document], path) -> None:
    path = Path(path)
    lines = [json.dumps({"schema": DATASET_SCHEMA}, sort_keys=True)]
    for doc in docs:
        lines.append(json.dumps(_doc_to_obj(doc), sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path) -> list[Document]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file (missing schema header)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:1: invalid header: {e}") from e
    if header.get("schema") != DATASET_SCHEMA:
        raise ParseError(f"{path}:1: unsupported schema {header.get('schema')!r}")
    docs = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            docs.append(_doc_from_obj(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ParseError(f"{path}:{ln}: bad document record: {e}") from e
    return docs
