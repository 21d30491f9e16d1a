"""Polygon IoU, MLT-style matching, P/R/F, AP and the prediction file format."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mxspot.charset import ScriptId
from mxspot.evalkit import (Counts, PredictionFormatError, average_precision, compute_metrics, f_measure,
                            format_prediction, match_instances, parse_prediction, polygon_iou, read_predictions,
                            score_image, write_predictions)
from mxspot.model import DetectionRecord
from mxspot.scenegen import WordAnnotation


def box(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], float)


def gt(b, script=ScriptId.Latin, text="ab", legible=True):
    return WordAnnotation(b, script, text if legible else "###", legible)


def pred(b, conf, script=ScriptId.Latin, text="ab"):
    return DetectionRecord(b, conf, script, text)


def test_iou_closed_forms():
    assert polygon_iou(box(0, 0, 2, 2), box(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)
    assert polygon_iou(box(0, 0, 2, 2), box(0, 0, 2, 2)) == 1.0
    assert polygon_iou(box(0, 0, 1, 1), box(5, 5, 6, 6)) == 0.0
    assert polygon_iou(box(0, 0, 2, 2), box(0, 0, 0, 2)) == 0.0  # degenerate
    bowtie = np.array([[0, 0], [2, 2], [2, 0], [0, 2]], float)
    assert 0.0 <= polygon_iou(bowtie, box(0, 0, 2, 2)) <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 20), min_size=8, max_size=8))
def test_iou_symmetric_and_bounded(v):
    a = box(min(v[0], v[1]), min(v[2], v[3]), max(v[0], v[1]) + 0.5, max(v[2], v[3]) + 0.5)
    b = box(min(v[4], v[5]), min(v[6], v[7]), max(v[4], v[5]) + 0.5, max(v[6], v[7]) + 0.5)
    x, y = polygon_iou(a, b), polygon_iou(b, a)
    assert x == pytest.approx(y, abs=1e-12) and 0.0 <= x <= 1.0


def test_f_measure_table_rows():
    assert 100 * f_measure(0.8537, 0.6288) == pytest.approx(72.42, abs=0.01)
    assert 100 * f_measure(0.8172, 0.6034) == pytest.approx(69.42, abs=0.01)
    assert f_measure(0.0, 0.0) == 0.0


def test_counts_edge_cases():
    assert Counts().precision == Counts().recall == Counts().hmean == 0.0
    c = Counts(3, 1, 2)
    assert c.precision == 0.75 and c.recall == 0.6


# ---------------------------------------------------------------------------
# matching vs an exhaustive oracle


def _random_instance(rng):
    cells = rng.permutation(4)[: int(rng.integers(0, 5))]
    gts = [gt(box(20 * c, 0, 20 * c + 10, 10)) for c in cells]  # disjoint gts
    preds = []
    for _ in range(int(rng.integers(0, 6))):
        if gts and rng.random() < 0.75:
            g = gts[int(rng.integers(len(gts)))].polygon
            j = rng.uniform(-4, 4, 4)
            b = box(g[0, 0] + j[0], g[0, 1] + j[1], g[2, 0] + j[2], g[2, 1] + j[3])
        else:
            x, y = rng.uniform(0, 80), rng.uniform(0, 10)
            b = box(x, y, x + rng.uniform(2, 12), y + rng.uniform(2, 12))
        preds.append(pred(b, float(rng.random())))
    return preds, gts


def _oracle(preds, gts, thr=0.5):
    """Among all one-to-one assignments over IoU >= thr edges, the one that matches the
    most confident predictions first (lexicographic on the confidence-ordered hit vector)."""
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    options = [[None] + [j for j in range(len(gts)) if polygon_iou(p.polygon, gts[j].polygon) >= thr]
               for p in preds]
    best, best_key = None, None
    for assign in itertools.product(*options):
        used = [a for a in assign if a is not None]
        if len(used) != len(set(used)):
            continue
        key = tuple(assign[i] is not None for i in order)
        if best_key is None or key > best_key:
            best, best_key = assign, key
    return sorted((i, j) for i, j in enumerate(best) if j is not None)


def test_matching_equals_exhaustive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(500):
        preds, gts = _random_instance(rng)
        m = match_instances(preds, gts)
        assert sorted((i, j) for i, j, _ in m.pairs) == _oracle(preds, gts)
        assert len(m.pairs) + len(m.unmatched_preds) + len(m.absorbed) == len(preds)
        assert len(m.pairs) + len(m.unmatched_gts) == len(gts)


def test_duplicate_predictions_one_tp():
    g = [gt(box(0, 0, 10, 10))]
    preds = [pred(box(0, 0, 10, 10), 0.9), pred(box(0, 0, 10, 10), 0.8)]
    s = score_image(preds, g, "detection")
    assert (s.counts.tp, s.counts.fp, s.counts.fn) == (1, 1, 0)
    m = match_instances(preds, g)
    assert m.pairs[0][0] == 0


def test_confidence_order_decides_winner():
    g = [gt(box(0, 0, 10, 10))]
    preds = [pred(box(0, 0, 10, 9), 0.2), pred(box(0, 0, 10, 7), 0.6)]
    assert match_instances(preds, g).pairs[0][0] == 1


def test_dont_care_absorbs_without_counting():
    g = [gt(box(0, 0, 10, 10), legible=False), gt(box(30, 0, 40, 10))]
    preds = [pred(box(0, 0, 10, 10), 0.9), pred(box(0, 1, 10, 10), 0.8), pred(box(30, 0, 40, 10), 0.7)]
    m = match_instances(preds, g)
    assert m.absorbed == [0, 1] and [(i, j) for i, j, _ in m.pairs] == [(2, 1)]
    s = score_image(preds, g, "detection")
    assert (s.counts.tp, s.counts.fp, s.counts.fn, s.n_gt) == (1, 0, 0, 1)
    assert len(s.ranked) == 1


def test_task_nesting_and_charging():
    g = [gt(box(0, 0, 10, 10), ScriptId.Korean, "ab"), gt(box(30, 0, 40, 10), ScriptId.Arabic, "cd"),
         gt(box(60, 0, 70, 10), ScriptId.Latin, "ef")]
    preds = [pred(box(0, 0, 10, 10), 0.9, ScriptId.Korean, "ab"),
             pred(box(30, 0, 40, 10), 0.8, ScriptId.Latin, "cd"),
             pred(box(60, 0, 70, 10), 0.7, ScriptId.Latin, "xx")]
    det, joint, e2e = (score_image(preds, g, t) for t in ("detection", "joint", "e2e"))
    assert det.counts.tp == 3 and joint.counts.tp == 2 and e2e.counts.tp == 1
    assert (joint.counts.fp, joint.counts.fn) == (1, 1)
    assert joint.per_script[ScriptId.Arabic].fn == 1 and joint.per_script[ScriptId.Latin].fp == 1
    assert e2e.per_script[ScriptId.Latin].fp == 2 and e2e.per_script[ScriptId.Latin].fn == 1


def test_nesting_on_random_instances():
    rng = np.random.default_rng(1)
    for _ in range(200):
        preds, gts = _random_instance(rng)
        for p in preds:
            p.script = ScriptId(int(rng.integers(0, 2)))
            p.transcription = "ab" if rng.random() < 0.5 else "x"
        for g in gts:
            g.script = ScriptId(int(rng.integers(0, 2)))
        tps = [score_image(preds, gts, t).counts.tp for t in ("detection", "joint", "e2e")]
        assert tps[0] >= tps[1] >= tps[2]


def test_case_insensitive_option():
    g = [gt(box(0, 0, 10, 10), text="AbC")]
    p = [pred(box(0, 0, 10, 10), 0.9, text="abc")]
    assert score_image(p, g, "e2e").counts.tp == 0
    assert score_image(p, g, "e2e", case_sensitive=False).counts.tp == 1


def test_gt_as_prediction_is_perfect(tiny_data):
    _, test = tiny_data
    preds = [[pred(w.polygon, 1.0, w.script, w.transcription) for w in s.words if w.legible] for s in test]
    for task in ("detection", "joint", "e2e"):
        r = compute_metrics(preds, [s.words for s in test], task)
        assert r.precision == r.recall == r.hmean == 1.0 and r.ap == 1.0


# ---------------------------------------------------------------------------
# AP


def _brute_ap(ranked, n_gt):
    """Area under the step PR curve, walking the ranked list point by point."""
    order = sorted(range(len(ranked)), key=lambda i: (-ranked[i][0], i))
    tp = fp = 0
    prev_r, area = 0.0, 0.0
    for i in order:
        if ranked[i][1]:
            tp += 1
        else:
            fp += 1
        r, p = tp / n_gt, tp / (tp + fp)
        area += (r - prev_r) * p
        prev_r = r
    return area


def test_ap_equals_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(500):
        n = int(rng.integers(0, 12))
        conf = np.round(rng.random(n), 1)  # ties happen
        ranked = [(float(c), bool(rng.random() < 0.5)) for c in conf]
        n_gt = sum(h for _, h in ranked) + int(rng.integers(0, 3))
        if n_gt == 0:
            assert average_precision(ranked, n_gt) == 0.0
            continue
        assert abs(average_precision(ranked, n_gt) - _brute_ap(ranked, n_gt)) < 1e-9


def test_ap_perfect_and_worst():
    assert average_precision([(0.9, True), (0.1, True)], 2) == 1.0
    assert average_precision([(0.9, False), (0.1, False)], 2) == 0.0


# ---------------------------------------------------------------------------
# prediction files


def test_prediction_round_trip(tmp_path):
    recs = [pred(box(1.25, 2, 30, 12.5), 0.75, ScriptId.Bengali, "a,b c"),
            DetectionRecord(box(0, 0, 4, 4), 0.1, None, "")]
    path = tmp_path / "img.txt"
    write_predictions(recs, path)
    back = read_predictions(path)
    assert [format_prediction(r) for r in back] == [format_prediction(r) for r in recs]
    assert back[0].transcription == "a,b c" and back[1].script is None
    write_predictions(back, tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_bytes() == path.read_bytes()


@pytest.mark.parametrize("line, fragment", [
    ("1,2,3,4,5,6,7,8,0.5,Latin", "expected 11 fields"),
    ("1,2,3,x,5,6,7,8,0.5,Latin,ab", "non-numeric"),
    ("1,2,3,4,5,6,7,8,1.5,Latin,ab", "[0, 1]"),
    ("1,2,3,4,5,6,7,8,0.5,Klingon,ab", "Klingon"),
])
def test_prediction_errors_name_the_line(line, fragment):
    with pytest.raises(PredictionFormatError) as e:
        parse_prediction(line, 7)
    assert "line 7" in str(e.value) and fragment in str(e.value)


def test_report_formats_list_every_script(tiny_data):
    _, test = tiny_data
    r = compute_metrics([[] for _ in test], [s.words for s in test], "joint")
    text, csv = r.format_text(), r.format_csv()
    for s in ScriptId:
        assert s.name in text and f"\n{s.name}," in csv
    assert r.hmean == 0.0


def test_mismatched_image_counts_rejected():
    with pytest.raises(ValueError):
        compute_metrics([[]], [], "detection")
    with pytest.raises(ValueError):
        score_image([], [], "bogus")
