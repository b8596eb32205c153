"""Exact-match span scoring, fold aggregation and convergence summaries."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .errors import UsageError
from .labels import O, FullLabel


class Span(NamedTuple):
    start: int
    end: int  # inclusive
    label: str | None


class EvalMode(str, enum.Enum):
    FULL = "Full"
    SEG = "SegOnly"
    TYPE = "TypeOnly"

    @classmethod
    def parse(cls, value) -> "EvalMode":
        if isinstance(value, cls):
            return value
        for member in cls:
            if str(value).lower() in (member.value.lower(), member.name.lower()):
                return member
        raise UsageError(f"unknown evaluation mode {value!r}")


@dataclass(frozen=True)
class PRF1:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF1":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f, tp, fp, fn)

    def row(self) -> str:
        return f"{100 * self.precision:.2f}\t{100 * self.recall:.2f}\t{100 * self.f1:.2f}"

    def report(self) -> str:
        return (
            "Pre\tRec\tF1\n"
            f"{self.row()}\n"
            f"tp={self.tp}\tfp={self.fp}\tfn={self.fn}"
        )


def _as_full(y) -> FullLabel:
    return FullLabel.parse(y) if isinstance(y, str) else y


def extract_spans(labels: Sequence) -> list:
    """Maximal B/I runs of one type; an I that cannot continue a span opens a new one."""
    spans = []
    start, typ = None, None
    for t, y in enumerate(labels):
        y = _as_full(y)
        continues = y.seg == "I" and start is not None and y.typ == typ
        if continues:
            continue
        if start is not None:
            spans.append(Span(start, t - 1, typ))
            start, typ = None, None
        if y.seg != O:
            start, typ = t, y.typ
    if start is not None:
        spans.append(Span(start, len(labels) - 1, typ))
    return spans


def extract_segments(segs: Sequence[str]) -> list:
    """Untyped spans from a bare BIO2 segmentation sequence."""
    return [Span(s.start, s.end, None) for s in extract_spans([O if x == O else FullLabel(x, "_") for x in segs])]


def render_spans(spans: Sequence[Span], length: int) -> list:
    out = [FullLabel(O, O)] * length
    for s in spans:
        for t in range(s.start, s.end + 1):
            out[t] = FullLabel("B" if t == s.start else "I", s.label)
    return out


def _seg_spans(seq) -> set:
    if seq and all(isinstance(y, str) and y in (O, "B", "I") for y in seq):
        return {(s.start, s.end) for s in extract_segments(seq)}
    return {(s.start, s.end) for s in extract_spans(seq)}


def _types(seq) -> list:
    return [y.typ if isinstance(y, FullLabel) else y for y in seq]


def span_f1(gold: Sequence[Sequence], pred: Sequence[Sequence], mode="Full") -> PRF1:
    """Corpus-level precision/recall/F1 between aligned gold and predicted label sequences."""
    mode = EvalMode.parse(mode)
    if len(gold) != len(pred):
        raise UsageError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    tp = fp = fn = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise UsageError(f"sentence {i}: {len(g)} gold labels vs {len(p)} predicted")
        if mode is EvalMode.TYPE:
            gt, pt = _types(g), _types(p)
            hit = sum(1 for a, b in zip(gt, pt) if a == b and a != O)
            tp += hit
            fp += sum(1 for b in pt if b != O) - hit
            fn += sum(1 for a in gt if a != O) - hit
            continue
        if mode is EvalMode.FULL:
            gs, ps = set(extract_spans(g)), set(extract_spans(p))
        else:
            gs, ps = _seg_spans(g), _seg_spans(p)
        hit = len(gs & ps)
        tp += hit
        fp += len(ps) - hit
        fn += len(gs) - hit
    return PRF1.from_counts(tp, fp, fn)


def aggregate_folds(per_fold: Sequence[PRF1]) -> PRF1:
    """Mean precision, recall and F1 across folds (counts are summed for reference)."""
    per_fold = list(per_fold)
    if not per_fold:
        raise UsageError("no folds to aggregate")
    n = len(per_fold)
    return PRF1(
        sum(f.precision for f in per_fold) / n,
        sum(f.recall for f in per_fold) / n,
        sum(f.f1 for f in per_fold) / n,
        sum(f.tp for f in per_fold),
        sum(f.fp for f in per_fold),
        sum(f.fn for f in per_fold),
    )


def epochs_to_fraction(dev_curve: Sequence[float], fraction: float = 0.9) -> int:
    """First (1-based) epoch whose dev F1 reaches ``fraction`` of the best dev F1 on the curve."""
    if not dev_curve:
        raise UsageError("empty convergence curve")
    target = fraction * max(dev_curve)
    for epoch, f in enumerate(dev_curve, start=1):
        if f >= target:
            return epoch
    return len(dev_curve)
