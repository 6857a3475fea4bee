import json

import pytest

from gose.docmodel import Document, Entity
from gose.geometry import BBox


def make_doc(boxes, links=(), tokens=None, doc_id="doc"):
    entities = tuple(
        Entity(
            id=i,
            tokens=tuple(tokens[i]) if tokens else (f"t{i}",),
            bbox=BBox(*b),
        )
        for i, b in enumerate(boxes)
    )
    return Document(doc_id=doc_id, page_w=1.0, page_h=1.0,
                    entities=entities, links=frozenset(links))


@pytest.fixture
def grid_doc():
    """Four entities on a 2x2 grid with two parallel links."""
    boxes = [
        (0.1, 0.1, 0.2, 0.2),
        (0.7, 0.1, 0.8, 0.2),
        (0.1, 0.7, 0.2, 0.8),
        (0.7, 0.7, 0.8, 0.8),
    ]
    return make_doc(boxes, links=[(0, 1), (2, 3)])


@pytest.fixture
def funsd_file(tmp_path):
    payload = {
        "form": [
            {
                "id": 4,
                "text": "NAME:",
                "box": [100, 100, 300, 140],
                "label": "question",
                "words": [{"text": "NAME:", "box": [100, 100, 300, 140]}],
                "linking": [[4, 7]],
            },
            {
                "id": 7,
                "text": "John Smith",
                "box": [320, 100, 600, 140],
                "label": "answer",
                "words": [
                    {"text": "John", "box": [320, 100, 450, 140]},
                    {"text": "Smith", "box": [460, 100, 600, 140]},
                ],
                "linking": [[4, 7]],
            },
            {
                "id": 9,
                "text": "(footer)",
                "box": [100, 900, 700, 950],
                "label": "other",
                "words": [{"text": "(footer)", "box": [100, 900, 700, 950]}],
                "linking": [[9, 9]],
            },
        ]
    }
    path = tmp_path / "form0.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path
