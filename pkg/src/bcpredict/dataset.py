"""Balanced BC / non-BC training examples and corpus splits.

Each BC onset ``o`` on a listener channel yields one positive window ending
at ``o`` and one negative window ending at ``o - neg_offset``, both cut from
the speaker's (opposite channel's) stacked features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .corpus import BcEvent, other_channel
from .features import ContextWindow, FeatureTrack, context_length, context_window
from .rng import Stream

LABEL_BC = 0
LABEL_NON_BC = 1
LABEL_NAMES = {LABEL_BC: "BC", LABEL_NON_BC: "NON_BC"}


class DatasetError(ValueError):
    pass


@dataclass
class TrainingExample:
    input: ContextWindow
    label: int
    conv_id: str
    channel: str  # listener channel; features come from the other one
    anchor_time: float


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.82
    valid_frac: float = 0.08
    eval_frac: float = 0.10
    seed: int = 1

    def __post_init__(self):
        fracs = (self.train_frac, self.valid_frac, self.eval_frac)
        if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise DatasetError(f"split fractions must be non-negative and sum to 1, got {fracs}")


def split_corpus(conv_ids: Iterable[str], spec: SplitSpec) -> dict[str, list[str]]:
    """Seeded partition of conversation ids into train / valid / eval."""
    ids = sorted(set(conv_ids))
    n = len(ids)
    perm = Stream(spec.seed, "split").permutation(n)
    shuffled = [ids[i] for i in perm]
    n_train = min(n, math.floor(spec.train_frac * n + 0.5))
    n_valid = min(n - n_train, math.floor(spec.valid_frac * n + 0.5))
    return {
        "train": sorted(shuffled[:n_train]),
        "valid": sorted(shuffled[n_train : n_train + n_valid]),
        "eval": sorted(shuffled[n_train + n_valid :]),
    }


FeatureSource = Callable[[str, str], FeatureTrack] | Mapping[tuple[str, str], FeatureTrack]


def _lookup(features: FeatureSource, conv_id: str, channel: str) -> FeatureTrack:
    try:
        if callable(features):
            return features(conv_id, channel)
        return features[(conv_id, channel)]
    except (KeyError, FileNotFoundError) as exc:
        raise DatasetError(f"missing features for conversation {conv_id} channel {channel}") from exc


def build_training_set(
    bc_events: Mapping[str, list[BcEvent]],
    features: FeatureSource,
    width: float,
    stride: int,
    neg_offset: float = 2.0,
    seed: int = 1,
    sliding: int = 0,
) -> list[TrainingExample]:
    """Balanced positive/negative examples for every usable BC onset.

    ``bc_events`` maps conversation id to its BC events.  ``sliding > 0``
    also takes anchors at ``+-1..sliding`` frames around both anchors.
    A pair is skipped when either of its windows would reach before frame 0
    or past the end of the features.
    """
    if neg_offset <= 0:
        raise DatasetError("neg_offset must be positive")
    examples: list[TrainingExample] = []
    for conv_id in sorted(bc_events):
        events = bc_events[conv_id]
        for listener in ("A", "B"):
            chan_events = [e for e in events if e.channel == listener]
            if not chan_events:
                continue
            track = _lookup(features, conv_id, other_channel(listener))
            n_rows = context_length(width, track.spec, stride)
            first_ok = (n_rows - 1) * stride
            for ev in chan_events:
                pos = track.spec.frame_index(ev.onset)
                neg_time = ev.onset - neg_offset
                if neg_time < 0:
                    continue
                neg = track.spec.frame_index(neg_time)
                for j in range(-sliding, sliding + 1):
                    a_pos, a_neg = pos + j, neg + j
                    if min(a_pos, a_neg) < first_ok or max(a_pos, a_neg) >= len(track):
                        continue
                    examples.append(TrainingExample(context_window(track, a_pos, width, stride), LABEL_BC, conv_id, listener, a_pos * track.spec.shift))
                    examples.append(TrainingExample(context_window(track, a_neg, width, stride), LABEL_NON_BC, conv_id, listener, a_neg * track.spec.shift))
    examples.sort(key=lambda e: (e.conv_id, e.anchor_time, e.channel, e.label))
    perm = Stream(seed, "dataset-shuffle").permutation(len(examples))
    return [examples[i] for i in perm]


def to_arrays(examples: list[TrainingExample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack examples into ``X`` of shape (n, rows, dim) and labels ``y``."""
    if not examples:
        return np.zeros((0, 0, 0)), np.zeros(0, dtype=np.int64)
    X = np.stack([e.input.data for e in examples])
    y = np.array([e.label for e in examples], dtype=np.int64)
    return X, y


def manifest_lines(examples: list[TrainingExample]) -> list[str]:
    return [f"{e.conv_id}\t{e.channel}\t{e.anchor_time:.3f}\t{LABEL_NAMES[e.label]}" for e in examples]


def write_manifest(examples: list[TrainingExample], path: Path) -> None:
    Path(path).write_text("".join(line + "\n" for line in manifest_lines(examples)), encoding="utf-8")


def read_manifest(path: Path) -> list[tuple[str, str, float, int]]:
    labels = {v: k for k, v in LABEL_NAMES.items()}
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            conv_id, ch, t, label = line.split("\t")
            rows.append((conv_id, ch, float(t), labels[label]))
    return rows


def materialize(rows, features: FeatureSource, width: float, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Rebuild ``(X, y)`` from manifest rows and feature caches."""
    windows, labels = [], []
    for conv_id, listener, t, label in rows:
        track = _lookup(features, conv_id, other_channel(listener))
        windows.append(context_window(track, track.spec.frame_index(t), width, stride).data)
        labels.append(label)
    if not windows:
        return np.zeros((0, 0, 0)), np.zeros(0, dtype=np.int64)
    return np.stack(windows), np.array(labels, dtype=np.int64)
