"""Tuning of the smoothing and trigger parameters against validation F1.

:func:`optimize` is a small Gaussian-process Bayesian optimizer over a box;
:func:`grid_search` is its exhaustive counterpart.  The categorical trigger
mode is handled by one continuous search per mode.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm

from .evaluation import Margin, match_triggers, precision_recall_f1
from .postprocess import TRIGGER_MODES, SmootherConfig, TriggerConfig, causal_gaussian_smooth, extract_triggers
from .rng import Stream

log = logging.getLogger(__name__)

LENGTH_SCALE = 0.2
NOISE = 1e-6
N_CANDIDATES = 1000


@dataclass(frozen=True)
class SearchSpace:
    sigma: tuple[float, float] = (0.01, 1.0)
    cutoff_c: tuple[float, float] = (0.0, 2.0)
    threshold: tuple[float, float] = (0.0, 1.0)
    modes: tuple[str, ...] = TRIGGER_MODES

    def __post_init__(self):
        for name in ("sigma", "cutoff_c", "threshold"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError(f"bad bounds for {name}: {(lo, hi)}")
        if self.sigma[0] <= 0:
            raise ValueError("sigma lower bound must be positive")
        if not self.modes or any(m not in TRIGGER_MODES for m in self.modes):
            raise ValueError(f"modes must be a non-empty subset of {TRIGGER_MODES}")

    @property
    def bounds(self) -> np.ndarray:
        return np.array([self.sigma, self.cutoff_c, self.threshold], dtype=np.float64)


@dataclass
class Trial:
    index: int
    x: tuple[float, ...]
    objective: float
    mode: str | None = None
    flagged: bool = False

    @property
    def sigma(self) -> float:
        return self.x[0]

    @property
    def cutoff_c(self) -> float:
        return self.x[1]

    @property
    def threshold(self) -> float:
        return self.x[2]


@dataclass
class SearchResult:
    best: Trial
    history: list[Trial] = field(default_factory=list)


def _evaluate(objective, x, index, mode=None) -> Trial:
    value = float(objective(tuple(float(v) for v in x)))
    flagged = not math.isfinite(value)
    if flagged:
        log.warning("trial %d: non-finite objective, recorded as 0", index)
        value = 0.0
    return Trial(index, tuple(float(v) for v in x), value, mode, flagged)


def _latin_hypercube(n: int, d: int, stream: Stream) -> np.ndarray:
    cols = []
    for j in range(d):
        perm = stream.child("perm", j).permutation(n)
        cols.append((perm + stream.child("jitter", j).uniform(n)) / n)
    return np.stack(cols, axis=1)


def _se_kernel(a: np.ndarray, b: np.ndarray, variance: float) -> np.ndarray:
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return variance * np.exp(-0.5 * d2 / LENGTH_SCALE**2)


def expected_improvement(Z_obs: np.ndarray, y: np.ndarray, Z_cand: np.ndarray) -> np.ndarray:
    """EI of maximization at ``Z_cand`` under a GP fit to ``(Z_obs, y)`` on the unit cube."""
    mean = y.mean()
    variance = float(np.var(y))
    if variance <= 0:
        variance = 1.0
    K = _se_kernel(Z_obs, Z_obs, variance) + NOISE * np.eye(len(y))
    cf = cho_factor(K, lower=True)
    Ks = _se_kernel(Z_cand, Z_obs, variance)
    mu = mean + Ks @ cho_solve(cf, y - mean)
    v = cho_solve(cf, Ks.T)
    var = np.maximum(variance - np.sum(Ks * v.T, axis=1), 1e-12)
    sd = np.sqrt(var)
    z = (mu - y.max()) / sd
    return (mu - y.max()) * norm.cdf(z) + sd * norm.pdf(z)


def optimize(
    objective: Callable[[tuple[float, ...]], float],
    bounds: Sequence[tuple[float, float]],
    budget: int,
    seed: int = 1,
    mode: str | None = None,
) -> SearchResult:
    """Maximize ``objective`` over the box ``bounds`` in ``budget`` evaluations.

    The first ``max(5, budget // 4)`` points (capped at ``budget``) are a
    Latin hypercube; the rest maximize expected improvement over 1000
    seeded random candidates.  Ties for best keep the earliest trial.
    """
    if budget < 2:
        raise ValueError("budget must be >= 2")
    b = np.asarray(bounds, dtype=np.float64).reshape(-1, 2)
    lo, span = b[:, 0], b[:, 1] - b[:, 0]
    d = len(b)
    stream = Stream(seed, "optimize")
    n_init = min(budget, max(5, budget // 4))
    Z = list(_latin_hypercube(n_init, d, stream.child("init")))
    history = [_evaluate(objective, lo + z * span, i, mode) for i, z in enumerate(Z)]
    for i in range(n_init, budget):
        cand = stream.child("candidates", i).uniform((N_CANDIDATES, d))
        y = np.array([t.objective for t in history])
        ei = expected_improvement(np.array(Z), y, cand)
        z = cand[int(np.argmax(ei))]
        Z.append(z)
        history.append(_evaluate(objective, lo + z * span, i, mode))
    best = max(history, key=lambda t: (t.objective, -t.index))
    return SearchResult(best, history)


def grid_search(
    objective: Callable[[tuple[float, ...]], float],
    bounds: Sequence[tuple[float, float]],
    resolution: int,
    mode: str | None = None,
) -> SearchResult:
    """Evaluate every point of the ``resolution``-per-axis grid (bounds included).

    Points are visited in lexicographic order and the first maximum wins.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
    history = [_evaluate(objective, x, i, mode) for i, x in enumerate(itertools.product(*axes))]
    best = max(history, key=lambda t: (t.objective, -t.index))
    return SearchResult(best, history)


PostprocessObjective = Callable[[float, float, float, str], float]


def tune(
    objective: PostprocessObjective,
    space: SearchSpace,
    budget: int,
    seed: int = 1,
    method: str = "bayes",
    resolution: int = 8,
) -> SearchResult:
    """Search ``(sigma, cutoff_c, threshold)`` once per trigger mode.

    ``budget`` applies to each mode.  Trial indices in the merged history are
    renumbered consecutively; the best trial over all modes is returned, the
    earlier mode in ``space.modes`` winning ties.
    """
    history: list[Trial] = []
    for mode in space.modes:
        f = lambda x, mode=mode: objective(x[0], x[1], x[2], mode)  # noqa: E731
        if method == "bayes":
            res = optimize(f, space.bounds, budget, seed, mode)
        elif method == "grid":
            res = grid_search(f, space.bounds, resolution, mode)
        else:
            raise ValueError(f"unknown search method {method!r}")
        for t in res.history:
            history.append(Trial(len(history), t.x, t.objective, mode, t.flagged))
    best = max(history, key=lambda t: (t.objective, -t.index))
    return SearchResult(best, history)


TRIALS_HEADER = "index\tsigma\tcutoff_c\tthreshold\tmode\tf1"


def trials_tsv(history: Sequence[Trial]) -> str:
    rows = [f"{t.index}\t{t.sigma:.6f}\t{t.cutoff_c:.6f}\t{t.threshold:.6f}\t{t.mode}\t{t.objective:.6f}" for t in history]
    return TRIALS_HEADER + "\n" + "".join(r + "\n" for r in rows)


def write_trials(path: Path, history: Sequence[Trial]) -> None:
    Path(path).write_text(trials_tsv(history), encoding="utf-8")


class ValidationObjective:
    """Validation F1 of a postprocessing setting, given fixed probability tracks.

    ``tracks`` maps ``(conv_id, listener)`` to a 1-d probability array,
    ``truth`` maps the same keys to sorted onsets and ``spans`` to the
    monologue spans used for filtering (``None`` scores everything).
    Sigma is snapped to a 10 ms grid so smoothed tracks can be cached.
    """

    SIGMA_STEP = 0.01

    def __init__(
        self,
        tracks: Mapping[tuple[str, str], np.ndarray],
        truth: Mapping[tuple[str, str], Sequence[float]],
        spans: Mapping[tuple[str, str], Sequence[tuple[float, float]]] | None,
        margin: Margin,
        shift: float = 0.01,
        cache_size: int = 256,
    ):
        self.keys = sorted(tracks)
        self.tracks = tracks
        self.truth = {k: sorted(truth.get(k, ())) for k in self.keys}
        self.margin = margin
        self.shift = shift
        self.masks = {}
        for k in self.keys:
            n = len(tracks[k])
            if spans is None:
                self.masks[k] = np.ones(n, dtype=bool)
            else:
                t = np.arange(n) * shift
                m = np.zeros(n, dtype=bool)
                for s, e in spans.get(k, ()):
                    m |= (t >= s - 1e-9) & (t <= e + 1e-9)
                self.masks[k] = m
                self.truth[k] = [o for o in self.truth[k] if any(s - 1e-9 <= o <= e + 1e-9 for s, e in spans.get(k, ()))]
        self._cache: dict[tuple[int, float], dict] = {}
        self.cache_size = cache_size

    def snap_sigma(self, sigma: float) -> float:
        return max(1, int(round(sigma / self.SIGMA_STEP))) * self.SIGMA_STEP

    def smoothed(self, sigma: float, cutoff_c: float) -> dict:
        key = (int(round(sigma / self.SIGMA_STEP)), round(cutoff_c, 6))
        hit = self._cache.get(key)
        if hit is None:
            cfg = SmootherConfig(self.snap_sigma(sigma), cutoff_c)
            hit = {k: causal_gaussian_smooth(self.tracks[k], cfg, self.shift) for k in self.keys}
            if len(self._cache) >= self.cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = hit
        return hit

    def __call__(self, sigma: float, cutoff_c: float, threshold: float, mode: str) -> float:
        sm = self.smoothed(sigma, cutoff_c)
        trig = TriggerConfig(float(np.clip(threshold, 0.0, 1.0)), mode)
        tot_m = tot_p = tot_t = 0
        for k in self.keys:
            frames = np.asarray(extract_triggers(sm[k], trig, 1.0), dtype=np.int64)
            frames = frames[self.masks[k][frames]] if frames.size else frames
            pred = frames * self.shift
            tot_m += match_triggers(pred, self.truth[k], self.margin)
            tot_p += len(pred)
            tot_t += len(self.truth[k])
        return precision_recall_f1(tot_m, tot_p, tot_t)[2]
