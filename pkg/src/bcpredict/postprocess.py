"""From a per-frame BC probability track to trigger times.

The track is smoothed with a causal Gaussian whose centre sits ``c * sigma``
seconds in the past (so the filter never reads a future frame) and whose
left tail is cut ``left_extent * sigma`` beyond the centre.  Triggers are
placed on each run of frames above a threshold.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .corpus import format_time

TRIGGER_MODES = ("area_start", "first_local_max")


class PostprocessError(ValueError):
    pass


@dataclass(frozen=True)
class SmootherConfig:
    sigma: float
    cutoff_c: float
    left_extent: float = 3.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise PostprocessError(f"sigma must be positive, got {self.sigma}")
        if self.cutoff_c < 0 or self.left_extent < 0:
            raise PostprocessError("cutoff_c and left_extent must be non-negative")


@dataclass(frozen=True)
class TriggerConfig:
    threshold: float
    mode: str = "area_start"

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise PostprocessError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.mode not in TRIGGER_MODES:
            raise PostprocessError(f"unknown trigger mode {self.mode!r}")


def smoothing_kernel(cfg: SmootherConfig, shift: float) -> np.ndarray:
    """Weights ``w[k]`` applied to ``x[t - k]``; they sum to 1."""
    k_max = int(np.floor((cfg.cutoff_c + cfg.left_extent) * cfg.sigma / shift + 1e-9))
    lags = np.arange(k_max + 1) * shift
    w = np.exp(-((lags - cfg.cutoff_c * cfg.sigma) ** 2) / (2.0 * cfg.sigma**2))
    return w / w.sum()


def latency_frames(cfg: SmootherConfig, shift: float) -> int:
    """Lag (in frames) of the kernel centre."""
    return int(round(cfg.cutoff_c * cfg.sigma / shift))


def causal_gaussian_smooth(values: np.ndarray, cfg: SmootherConfig, shift: float) -> np.ndarray:
    """``out[t] = sum_k w[k] * x[t-k]``, with ``x`` edge-replicated before frame 0."""
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size == 0:
        return x.copy()
    w = smoothing_kernel(cfg, shift)
    padded = np.concatenate([np.full(len(w) - 1, x[0]), x])
    return np.convolve(padded, w, mode="valid")


class StreamingSmoother:
    """Frame-at-a-time version of :func:`causal_gaussian_smooth`."""

    def __init__(self, cfg: SmootherConfig, shift: float):
        self.w = smoothing_kernel(cfg, shift)
        self._buf: deque[float] | None = None

    def push(self, value: float) -> float:
        if self._buf is None:
            self._buf = deque([float(value)] * len(self.w), maxlen=len(self.w))
        else:
            self._buf.append(float(value))
        # buffer holds oldest..newest; w[0] weighs the newest
        return float(np.dot(self.w[::-1], np.fromiter(self._buf, dtype=np.float64, count=len(self.w))))


def trigger_frames(values: np.ndarray, cfg: TriggerConfig) -> list[int]:
    """One frame index per maximal run of ``values > threshold``.

    In ``first_local_max`` mode the trigger is the first frame of the run that
    is >= both its neighbours inside the run.  The last frame of a track has no
    right neighbour and counts as a maximum if it is >= its left one.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    above = v > cfg.threshold
    if not above.any():
        return []
    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)  # exclusive
    if cfg.mode == "area_start":
        return starts.tolist()
    out = []
    for s, e in zip(starts, ends):
        run = v[s:e]
        if len(run) == 1:
            out.append(int(s))
            continue
        ok_left = np.concatenate([[True], run[1:] >= run[:-1]])
        ok_right = np.concatenate([run[:-1] >= run[1:], [True]])
        out.append(int(s + np.flatnonzero(ok_left & ok_right)[0]))
    return out


def extract_triggers(values: np.ndarray, cfg: TriggerConfig, shift: float) -> list[float]:
    """Trigger times in seconds (frame index times shift)."""
    return [f * shift for f in trigger_frames(values, cfg)]


class StreamingTriggerDetector:
    """Emits the same frames as :func:`trigger_frames` as values arrive.

    ``area_start`` fires on the frame that crosses the threshold.
    ``first_local_max`` needs the next frame to confirm a peak, so it fires
    one frame late; :meth:`finish` flushes a run still open at the end.
    """

    def __init__(self, cfg: TriggerConfig):
        self.cfg = cfg
        self.t = -1
        self._prev = None
        self._in_run = False
        self._fired = False
        self._prev_ok_left = False

    def push(self, value: float) -> list[int]:
        self.t += 1
        out = []
        above = value > self.cfg.threshold
        if self.cfg.mode == "area_start":
            if above and not self._in_run:
                out.append(self.t)
        else:
            # confirm the previous frame as a peak now that its right neighbour is known
            if self._in_run and not self._fired and self._prev_ok_left and (not above or self._prev >= value):
                out.append(self.t - 1)
                self._fired = True
            if above and not self._in_run:
                self._fired = False
                self._prev_ok_left = True
            elif above:
                self._prev_ok_left = value >= self._prev
        self._in_run = above
        self._prev = value
        return out

    def finish(self) -> list[int]:
        if self.cfg.mode == "first_local_max" and self._in_run and not self._fired and self._prev_ok_left:
            self._fired = True
            return [self.t]
        return []


# ---------------------------------------------------------------------------
# trigger files


def trigger_lines(triggers: Mapping[tuple[str, str], Iterable[float]]) -> list[str]:
    rows = sorted((conv, ch, t) for (conv, ch), ts in triggers.items() for t in ts)
    return [f"{conv}\t{ch}\t{format_time(t)}" for conv, ch, t in rows]


def write_triggers(path: Path, triggers: Mapping[tuple[str, str], Iterable[float]]) -> None:
    Path(path).write_text("".join(line + "\n" for line in trigger_lines(triggers)), encoding="utf-8")


def read_triggers(path: Path) -> dict[tuple[str, str], list[float]]:
    out: dict[tuple[str, str], list[float]] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise PostprocessError(f"{path}:{n}: expected 3 tab-separated fields")
        out.setdefault((parts[0], parts[1]), []).append(float(parts[2]))
    for ts in out.values():
        ts.sort()
    return out
