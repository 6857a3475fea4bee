import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gose.evaluation import (
    DEFAULT_BUCKETS,
    _bucket_index,
    crossing_rate,
    evaluate,
    link_f1,
    recall_by_distance,
    write_report_csv,
    write_report_json,
)

from conftest import make_doc


def doc_at(points, links=()):
    """Point-like entities (tiny boxes centered on the given points)."""
    boxes = [(x - 0.01, y - 0.01, x + 0.01, y + 0.01) for x, y in points]
    return make_doc(boxes, links=list(links))


class TestLinkF1:
    def test_perfect(self):
        p, r, f = link_f1([{(0, 1), (2, 3)}], [{(0, 1), (2, 3)}])
        assert (p, r, f) == (1.0, 1.0, 1.0)

    def test_hand_counts(self):
        # tp=1, fp=1, fn=2 -> P=1/2, R=1/3, F1=2/5
        p, r, f = link_f1([{(0, 1), (1, 2)}], [{(0, 1), (2, 3), (3, 4)}])
        assert p == pytest.approx(0.5)
        assert r == pytest.approx(1 / 3)
        assert f == pytest.approx(0.4)

    def test_direction_matters(self):
        p, r, f = link_f1([{(1, 0)}], [{(0, 1)}])
        assert f == 0.0

    def test_empty_prediction_empty_gold(self):
        assert link_f1([set()], [set()]) == (0.0, 0.0, 0.0)

    def test_micro_pools_counts_across_docs(self):
        # doc A: tp=1 fp=0 fn=0; doc B: tp=0 fp=1 fn=1
        p, r, f = link_f1([{(0, 1)}, {(0, 2)}], [{(0, 1)}, {(0, 1)}])
        assert p == pytest.approx(0.5)
        assert r == pytest.approx(0.5)
        assert f == pytest.approx(0.5)


class TestCrossingRate:
    def test_x_pattern_is_one(self):
        doc = doc_at([(0.1, 0.1), (0.9, 0.9), (0.1, 0.9), (0.9, 0.1)])
        assert crossing_rate({(0, 1), (2, 3)}, doc) == 1.0

    def test_parallel_fan_is_zero(self):
        doc = doc_at([(0.1, 0.2), (0.9, 0.2), (0.1, 0.5), (0.9, 0.5),
                      (0.1, 0.8), (0.9, 0.8)])
        assert crossing_rate({(0, 1), (2, 3), (4, 5)}, doc) == 0.0

    def test_one_of_three_pairs(self):
        # two parallel segments plus one that crosses only the first
        doc = doc_at([(0.1, 0.1), (0.9, 0.1),
                      (0.1, 0.9), (0.9, 0.9),
                      (0.5, 0.02), (0.5, 0.5)])
        rate = crossing_rate({(0, 1), (2, 3), (4, 5)}, doc)
        assert rate == pytest.approx(1 / 3)

    def test_fewer_than_two_links(self):
        doc = doc_at([(0.1, 0.1), (0.9, 0.9)])
        assert crossing_rate({(0, 1)}, doc) == 0.0
        assert crossing_rate(set(), doc) == 0.0

    def test_shared_endpoint_not_a_crossing(self):
        doc = doc_at([(0.5, 0.5), (0.1, 0.1), (0.9, 0.1)])
        assert crossing_rate({(0, 1), (0, 2)}, doc) == 0.0


class TestBuckets:
    def test_left_closed_right_open(self):
        edges = [0.0, 0.15, 0.3, math.sqrt(2.0)]
        assert _bucket_index(0.0, edges) == 0
        assert _bucket_index(0.15, edges) == 1
        assert _bucket_index(0.3 - 1e-12, edges) == 1
        assert _bucket_index(0.3, edges) == 2

    def test_last_bucket_right_closed(self):
        edges = list(DEFAULT_BUCKETS)
        assert _bucket_index(math.sqrt(2.0), edges) == 2
        assert _bucket_index(math.sqrt(2.0) + 1e-9, edges) is None

    def test_unsorted_edges_rejected(self):
        doc = doc_at([(0.1, 0.1), (0.9, 0.9)], links=[(0, 1)])
        with pytest.raises(ValueError, match="ascending"):
            recall_by_distance(set(), {(0, 1)}, doc, [0.3, 0.1])

    def test_counts(self):
        doc = doc_at([(0.1, 0.1), (0.2, 0.1), (0.9, 0.9)],
                     links=[(0, 1), (0, 2)])
        totals, hits = recall_by_distance({(0, 1)}, set(doc.links), doc,
                                          DEFAULT_BUCKETS)
        assert totals == [1, 0, 1]
        assert hits == [1, 0, 0]


class TestEvaluate:
    def test_bucket_weighted_recall_identity(self):
        docs = [doc_at([(0.1, 0.1), (0.2, 0.1), (0.9, 0.9), (0.5, 0.5)],
                       links=[(0, 1), (0, 2), (0, 3)]),
                doc_at([(0.3, 0.3), (0.35, 0.3)], links=[(0, 1)])]
        preds = [{(0, 1), (0, 3)}, set()]
        report = evaluate(docs, preds)
        weighted = sum(b["gold"] * b["recall"] for b in report.recall_by_distance
                       if b["gold"])
        total_gold = sum(b["gold"] for b in report.recall_by_distance)
        assert weighted / total_gold == pytest.approx(report.recall)

    def test_empty_bucket_reports_null(self):
        docs = [doc_at([(0.1, 0.1), (0.12, 0.1)], links=[(0, 1)])]
        report = evaluate(docs, [{(0, 1)}])
        recalls = [b["recall"] for b in report.recall_by_distance]
        assert recalls[0] == 1.0
        assert recalls[1] is None and recalls[2] is None

    def test_crossing_rate_averages_eligible_docs_only(self):
        x_doc = doc_at([(0.1, 0.1), (0.9, 0.9), (0.1, 0.9), (0.9, 0.1)])
        single = doc_at([(0.1, 0.1), (0.9, 0.9)])
        report = evaluate([x_doc, single], [{(0, 1), (2, 3)}, {(0, 1)}])
        assert report.crossing_conflict_rate == 1.0

    @given(st.lists(st.sets(st.tuples(st.integers(0, 5), st.integers(0, 5)),
                            max_size=4), min_size=1, max_size=4))
    @settings(max_examples=50, deadline=None)
    def test_micro_f1_bounded_by_precision_recall(self, golds):
        preds = [set(list(g)[:1]) for g in golds]
        p, r, f = link_f1(preds, golds)
        assert 0.0 <= f <= 1.0
        assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12

    def test_relabel_invariance(self):
        # permuting entity ids (with links relabeled) preserves all metrics
        pts = [(0.1, 0.1), (0.9, 0.9), (0.1, 0.9), (0.9, 0.1)]
        links = [(0, 1), (2, 3)]
        perm = [3, 1, 0, 2]
        inv = {old: new for new, old in enumerate(perm)}
        doc_a = doc_at(pts, links)
        doc_b = doc_at([pts[i] for i in perm],
                       [(inv[k], inv[v]) for k, v in links])
        r_a = evaluate([doc_a], [set(links)])
        r_b = evaluate([doc_b], [{(inv[k], inv[v]) for k, v in links}])
        assert r_a.f1 == r_b.f1
        assert r_a.crossing_conflict_rate == r_b.crossing_conflict_rate
        assert r_a.recall_by_distance == r_b.recall_by_distance


class TestReportIO:
    def test_json_round_trip(self, tmp_path):
        docs = [doc_at([(0.1, 0.1), (0.2, 0.1)], links=[(0, 1)])]
        report = evaluate(docs, [{(0, 1)}], seed=3)
        out = tmp_path / "report.json"
        write_report_json(report, out)
        loaded = json.loads(out.read_text())
        assert loaded["f1"] == 1.0
        assert loaded["seed"] == 3
        assert loaded["counts"] == {"tp": 1, "fp": 0, "fn": 0}

    def test_csv_one_row_per_report(self, tmp_path):
        docs = [doc_at([(0.1, 0.1), (0.2, 0.1)], links=[(0, 1)])]
        reports = [evaluate(docs, [{(0, 1)}], seed=s) for s in (0, 1)]
        out = tmp_path / "sweep.csv"
        write_report_csv(reports, out)
        rows = list(csv.reader(out.open()))
        assert rows[0][0] == "seed"
        assert len(rows) == 3
        assert rows[1][0] == "0" and rows[2][0] == "1"
