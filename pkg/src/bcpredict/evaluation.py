"""Margin-of-error precision / recall / F1 over predicted BC triggers."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import CHANNELS, BcEvent, Conversation, MonologueSegment, monologuing_segments
from .rng import Stream

_EPS = 1e-9


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Margin:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise EvaluationError(f"margin lo {self.lo} > hi {self.hi}")

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    n_predictions: int
    n_truth: int
    n_matched: int
    margin: Margin
    monologuing_only: bool = True

    def tsv_row(self) -> str:
        return (
            f"{self.margin.lo:g}\t{self.margin.hi:g}\t{self.precision:.6f}\t{self.recall:.6f}\t{self.f1:.6f}"
            f"\t{self.n_predictions}\t{self.n_truth}\t{self.n_matched}"
        )


REPORT_HEADER = "margin_lo\tmargin_hi\tprecision\trecall\tf1\tn_pred\tn_truth\tn_matched"


def report_tsv(reports: Iterable[EvalReport]) -> str:
    return REPORT_HEADER + "\n" + "".join(r.tsv_row() + "\n" for r in reports)


def write_reports(path: Path, reports: Iterable[EvalReport]) -> None:
    Path(path).write_text(report_tsv(reports), encoding="utf-8")


def match_triggers(pred: Sequence[float], truth: Sequence[float], margin: Margin) -> int:
    """Greedy one-to-one matching.

    Each prediction, in time order, takes the earliest still-unmatched onset
    ``o`` with ``o + lo <= pred <= o + hi``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    used = np.zeros(len(truth), dtype=bool)
    first = 0
    matched = 0
    for p in pred:
        # onsets whose window closed before p can never match a later prediction
        while first < len(truth) and truth[first] + margin.hi < p - _EPS:
            first += 1
        j = first
        while j < len(truth) and truth[j] + margin.lo <= p + _EPS:
            if not used[j] and p <= truth[j] + margin.hi + _EPS:
                used[j] = True
                matched += 1
                break
            j += 1
    return matched


def precision_recall_f1(n_matched: int, n_pred: int, n_truth: int) -> tuple[float, float, float]:
    if n_matched < 0 or n_matched > min(n_pred, n_truth):
        raise EvaluationError(f"matched count {n_matched} exceeds min(pred={n_pred}, truth={n_truth})")
    p = n_matched / n_pred if n_pred else 0.0
    r = n_matched / n_truth if n_truth else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def in_segments(times: Sequence[float], segments: Sequence[tuple[float, float]]) -> list[float]:
    """Times inside any ``[start, end]`` (boundaries inclusive)."""
    return [t for t in times if any(s - _EPS <= t <= e + _EPS for s, e in segments)]


def listener_segments(segments: Iterable[MonologueSegment], listener: str) -> list[tuple[float, float]]:
    return [(m.start, m.end) for m in segments if m.listener == listener]


def evaluate(
    conversations: Sequence[Conversation],
    triggers: Mapping[tuple[str, str], Sequence[float]],
    bc_truth: Mapping[str, Sequence[BcEvent]],
    lexicon,
    margin: Margin,
    monologuing_only: bool = True,
    segments: Mapping[str, list[MonologueSegment]] | None = None,
) -> EvalReport:
    """Micro-averaged scores over ``conversations``.

    ``triggers`` maps ``(conv_id, listener_channel)`` to trigger times.  With
    ``monologuing_only`` both triggers and true onsets are restricted to the
    monologue segments in which that channel is the listener; triggers outside
    are dropped rather than counted as false positives.
    """
    tot_m = tot_p = tot_t = 0
    for conv in conversations:
        segs = None
        if monologuing_only:
            segs = segments[conv.id] if segments is not None else monologuing_segments(conv, lexicon)
        for ch in CHANNELS:
            pred = sorted(triggers.get((conv.id, ch), ()))
            truth = sorted(e.onset for e in bc_truth.get(conv.id, ()) if e.channel == ch)
            if segs is not None:
                spans = listener_segments(segs, ch)
                pred = in_segments(pred, spans)
                truth = in_segments(truth, spans)
            tot_m += match_triggers(pred, truth, margin)
            tot_p += len(pred)
            tot_t += len(truth)
    p, r, f = precision_recall_f1(tot_m, tot_p, tot_t)
    return EvalReport(p, r, f, tot_p, tot_t, tot_m, margin, monologuing_only)


def random_baseline(
    spans: Sequence[tuple[float, float]], n_truth: int, multiplier: int, stream: Stream
) -> list[float]:
    """``multiplier * n_truth`` sorted times, uniform over the union of ``spans``."""
    n = multiplier * n_truth
    spans = [(s, e) for s, e in spans if e > s]
    if n <= 0 or not spans:
        return []
    lengths = np.array([e - s for s, e in spans])
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    u = stream.uniform(n) * cum[-1]
    idx = np.minimum(np.searchsorted(cum, u, side="right") - 1, len(spans) - 1)
    starts = np.array([s for s, _ in spans])
    return sorted((starts[idx] + (u - cum[idx])).tolist())


def baseline_triggers(
    conversations: Sequence[Conversation],
    bc_truth: Mapping[str, Sequence[BcEvent]],
    lexicon,
    multiplier: int,
    seed: int,
    monologuing_only: bool = True,
    segments: Mapping[str, list[MonologueSegment]] | None = None,
) -> dict[tuple[str, str], list[float]]:
    """Random triggers per listener channel, sized from the evaluated truth count."""
    out = {}
    for conv in conversations:
        for ch in CHANNELS:
            truth = [e.onset for e in bc_truth.get(conv.id, ()) if e.channel == ch]
            if monologuing_only:
                segs = segments[conv.id] if segments is not None else monologuing_segments(conv, lexicon)
                spans = listener_segments(segs, ch)
                truth = in_segments(truth, spans)
            else:
                spans = [(0.0, conv.duration)]
            out[(conv.id, ch)] = random_baseline(spans, len(truth), multiplier, Stream(seed, "baseline", conv.id, ch))
    return out
