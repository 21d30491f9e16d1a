"""MLT-style scoring: detection, joint detection + script ID, end-to-end recognition."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from shapely.geometry import Polygon

from .charset import ScriptId
from .model import DetectionRecord

TASKS = ("detection", "joint", "e2e")
IOU_THRESHOLD = 0.5


class PredictionFormatError(ValueError):
    pass


def polygon_iou(a, b) -> float:
    pa, pb = Polygon(np.asarray(a, float).reshape(-1, 2)), Polygon(np.asarray(b, float).reshape(-1, 2))
    if not pa.is_valid:
        pa = pa.buffer(0)
    if not pb.is_valid:
        pb = pb.buffer(0)
    if pa.area <= 0 or pb.area <= 0:
        return 0.0
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return float(inter / union) if union > 0 else 0.0


@dataclass
class MatchResult:
    pairs: list  # (pred id, gt id, iou)
    unmatched_preds: list
    unmatched_gts: list  # legible only
    absorbed: list

    def __post_init__(self):
        p = [a for a, _, _ in self.pairs] + list(self.unmatched_preds) + list(self.absorbed)
        g = [b for _, b, _ in self.pairs] + list(self.unmatched_gts)
        if len(set(p)) != len(p) or len(set(g)) != len(g):
            raise ValueError("match is not one-to-one")


def match_instances(preds: list[DetectionRecord], gts, iou_threshold: float = IOU_THRESHOLD) -> MatchResult:
    """Greedy one-to-one matching in descending confidence (ties keep input order).

    Each prediction takes the highest-IoU candidate among the unmatched legible
    gts and all don't-care gts; a don't-care winner absorbs the prediction.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    iou = np.array([[polygon_iou(p.polygon, g.polygon) for g in gts] for p in preds]).reshape(len(preds), len(gts))
    legible = np.array([g.legible for g in gts], dtype=bool)
    taken = np.zeros(len(gts), dtype=bool)
    pairs, fp, absorbed = [], [], []
    for i in order:
        cand = np.where(taken & legible, -1.0, iou[i]) if len(gts) else np.zeros(0)
        j = int(np.argmax(cand)) if len(cand) else -1
        if j < 0 or cand[j] < iou_threshold:
            fp.append(i)
        elif not legible[j]:
            absorbed.append(i)
        else:
            taken[j] = True
            pairs.append((i, j, float(iou[i, j])))
    fn = [j for j in range(len(gts)) if legible[j] and not taken[j]]
    return MatchResult(pairs, fp, fn, absorbed)


def normalize_text(text: str, case_sensitive: bool = True) -> str:
    text = unicodedata.normalize("NFC", text)
    return text if case_sensitive else text.casefold()


def pair_correct(pred: DetectionRecord, gt, task: str, case_sensitive: bool = True) -> bool:
    """Whether a geometric match counts for ``task``. e2e also requires the script, so hits nest."""
    if task == "detection":
        return True
    if pred.script is None and task == "joint":
        return False
    script_ok = pred.script is not None and int(pred.script) == int(gt.script)
    if task == "joint":
        return script_ok
    if task == "e2e":
        if pred.transcription is None:
            raise ValueError("e2e evaluation needs transcriptions")
        return script_ok and normalize_text(pred.transcription, case_sensitive) == normalize_text(gt.transcription, case_sensitive)
    raise ValueError(f"unknown task {task!r}")


def f_measure(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def hmean(self) -> float:
        return f_measure(self.precision, self.recall)


@dataclass
class ImageScore:
    counts: Counts
    per_script: dict  # ScriptId -> Counts
    ranked: list  # (confidence, is_tp) for every non-absorbed prediction, input order
    n_gt: int


def score_image(preds, gts, task: str, iou_threshold: float = IOU_THRESHOLD,
                case_sensitive: bool = True) -> ImageScore:
    """Per-image counts for ``task``. A geometric match with the wrong script/text is one FP and one FN.

    Per-script counts charge TPs and FNs to the gt script and FPs to the predicted script.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    m = match_instances(preds, gts, iou_threshold)
    per = {s: Counts() for s in ScriptId}
    hit = {}
    c = Counts()
    for i, j, _ in m.pairs:
        ok = pair_correct(preds[i], gts[j], task, case_sensitive)
        hit[i] = ok
        if ok:
            c.tp += 1
            per[ScriptId(int(gts[j].script))].tp += 1
        else:
            c.fp += 1
            c.fn += 1
            per[ScriptId(int(gts[j].script))].fn += 1
            if preds[i].script is not None:
                per[ScriptId(int(preds[i].script))].fp += 1
    for i in m.unmatched_preds:
        hit[i] = False
        c.fp += 1
        if preds[i].script is not None:
            per[ScriptId(int(preds[i].script))].fp += 1
    for j in m.unmatched_gts:
        c.fn += 1
        per[ScriptId(int(gts[j].script))].fn += 1
    ranked = [(float(preds[i].confidence), hit[i]) for i in range(len(preds)) if i in hit]
    return ImageScore(c, per, ranked, sum(1 for g in gts if g.legible))


def average_precision(ranked, n_gt: int) -> float:
    """All-points AP: sum of precision at each TP rank times 1/n_gt. Stable order for ties."""
    if n_gt <= 0:
        return 0.0
    conf = np.array([r[0] for r in ranked], dtype=float)
    tp = np.array([bool(r[1]) for r in ranked], dtype=bool)
    order = np.argsort(-conf, kind="stable")
    tp = tp[order]
    cum = np.cumsum(tp)
    prec = cum / np.arange(1, len(tp) + 1)
    return float(prec[tp].sum() / n_gt)


@dataclass
class MetricReport:
    task: str
    counts: Counts
    ap: float
    per_script: dict = field(default_factory=dict)  # script name -> Counts

    @property
    def precision(self):
        return self.counts.precision

    @property
    def recall(self):
        return self.counts.recall

    @property
    def hmean(self):
        return self.counts.hmean

    def script_f(self, script) -> float:
        return self.per_script[ScriptId.parse(script).name].hmean

    def format_text(self) -> str:
        lines = [f"task      {self.task}",
                 f"{'':10}{'F':>8}{'P':>8}{'R':>8}{'AP':>8}{'TP':>6}{'FP':>6}{'FN':>6}",
                 self._row("all", self.counts, self.ap)]
        for name, cnt in self.per_script.items():
            lines.append(self._row(name, cnt, None))
        return "\n".join(lines) + "\n"

    @staticmethod
    def _row(name, c: Counts, ap):
        ap_s = f"{100 * ap:8.2f}" if ap is not None else f"{'-':>8}"
        return (f"{name:<10}{100 * c.hmean:8.2f}{100 * c.precision:8.2f}{100 * c.recall:8.2f}"
                f"{ap_s}{c.tp:6d}{c.fp:6d}{c.fn:6d}")

    def format_csv(self) -> str:
        out = ["scope,F,P,R,AP,TP,FP,FN",
               f"all,{self.hmean:.6f},{self.precision:.6f},{self.recall:.6f},{self.ap:.6f},"
               f"{self.counts.tp},{self.counts.fp},{self.counts.fn}"]
        for name, c in self.per_script.items():
            out.append(f"{name},{c.hmean:.6f},{c.precision:.6f},{c.recall:.6f},,{c.tp},{c.fp},{c.fn}")
        return "\n".join(out) + "\n"


def compute_metrics(preds_by_image, gts_by_image, task: str, iou_threshold: float = IOU_THRESHOLD,
                    case_sensitive: bool = True) -> MetricReport:
    if len(preds_by_image) != len(gts_by_image):
        raise ValueError(f"{len(preds_by_image)} prediction sets for {len(gts_by_image)} images")
    total = Counts()
    per = {s.name: Counts() for s in ScriptId}
    ranked, n_gt = [], 0
    for preds, gts in zip(preds_by_image, gts_by_image):
        s = score_image(preds, gts, task, iou_threshold, case_sensitive)
        total = total.add(s.counts)
        for sid, c in s.per_script.items():
            per[sid.name] = per[sid.name].add(c)
        ranked += s.ranked
        n_gt += s.n_gt
    return MetricReport(task, total, average_precision(ranked, n_gt), per)


# ---------------------------------------------------------------------------
# prediction files


def format_prediction(rec: DetectionRecord) -> str:
    coords = ",".join(f"{v:.2f}" for v in np.asarray(rec.polygon, float).reshape(-1))
    script = "None" if rec.script is None else ScriptId(int(rec.script)).name
    return f"{coords},{rec.confidence:.6f},{script},{rec.transcription}"


def write_predictions(records, path):
    Path(path).write_bytes("".join(format_prediction(r) + "\n" for r in records).encode("utf-8"))


def parse_prediction(line: str, lineno: int = 1) -> DetectionRecord:
    parts = line.split(",", 10)
    if len(parts) != 11:
        raise PredictionFormatError(f"line {lineno}: expected 11 fields, got {len(parts)}")
    try:
        poly = np.array([float(v) for v in parts[:8]]).reshape(4, 2)
        conf = float(parts[8])
    except ValueError:
        raise PredictionFormatError(f"line {lineno}: non-numeric coordinate or confidence") from None
    if not np.all(np.isfinite(poly)) or not 0.0 <= conf <= 1.0:
        raise PredictionFormatError(f"line {lineno}: confidence must lie in [0, 1]")
    if parts[9] == "None":
        script = None
    else:
        try:
            script = ScriptId.parse(parts[9])
        except ValueError as e:
            raise PredictionFormatError(f"line {lineno}: {e}") from None
    return DetectionRecord(poly, conf, script, parts[10])


def read_predictions(path) -> list[DetectionRecord]:
    text = Path(path).read_bytes().decode("utf-8")
    return [parse_prediction(line, i) for i, line in enumerate(text.split("\n"), start=1) if line]
