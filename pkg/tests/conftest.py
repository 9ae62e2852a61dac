import sys

import numpy as np
import pytest

from bcpredict.corpus import Conversation, Utterance, Word
from bcpredict.synth import BC_TEXTS, SynthParams, generate_conversation

SR = 8000


def tone(freq, seconds, sr=SR, amp=0.5, harmonics=1):
    t = np.arange(int(round(seconds * sr))) / sr
    out = np.zeros_like(t)
    for h in range(1, harmonics + 1):
        out += np.sin(2 * np.pi * freq * h * t) / h
    return amp * out


def glide(f_start, f_end, seconds, sr=SR, amp=0.5, harmonics=6, log=True):
    n = int(round(seconds * sr))
    if log:
        f = f_start * (f_end / f_start) ** (np.arange(n) / n)
    else:
        f = np.linspace(f_start, f_end, n)
    phase = 2 * np.pi * np.cumsum(f) / sr
    return amp * sum(np.sin(h * phase) / h for h in range(1, harmonics + 1))


def utt(channel, *words):
    """``utt("A", ("so", 0.0, 0.3), ...)``"""
    return Utterance(tuple(Word(t, s, e) for t, s, e in words), channel)


def conversation(a=(), b=(), duration=20.0, conv_id="c0"):
    return Conversation(conv_id, sorted(a, key=lambda u: u.start), sorted(b, key=lambda u: u.start), duration)


@pytest.fixture(scope="session")
def small_params():
    return SynthParams(seed=7, n_conversations=3, duration=40.0)


@pytest.fixture(scope="session")
def generated(small_params):
    return [generate_conversation(small_params, i) for i in range(small_params.n_conversations)]


@pytest.fixture(scope="session")
def lexicon():
    return frozenset(BC_TEXTS)


def gradient_check(config, params, X, y, masks=None, coords=None, step=1e-5, floor=1e-7):
    """Largest relative error between analytic and central-difference gradients.

    The denominator is ``max(|analytic|, |numeric|, floor)`` so coordinates
    with an essentially zero gradient are compared absolutely.
    """
    from bcpredict.nn.network import Params, loss, loss_and_gradients

    _, grads = loss_and_gradients(params, config, X, y, masks)
    analytic = np.concatenate([g.ravel() for g in grads])
    flat = params.flat()
    idx = np.arange(flat.size) if coords is None else np.asarray(coords)
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        up = loss(Params.from_flat(config, flat), config, X, y, masks)
        flat[i] = orig - step
        down = loss(Params.from_flat(config, flat), config, X, y, masks)
        flat[i] = orig
        numeric = (up - down) / (2 * step)
        err = abs(numeric - analytic[i]) / max(abs(numeric), abs(analytic[i]), floor)
        worst = max(worst, err)
    return worst


def brute_force_matching(pred, truth, lo, hi, eps=1e-9):
    """Maximum one-to-one matching by exhaustive search over assignments."""
    from functools import lru_cache

    ok = [[o + lo - eps <= p <= o + hi + eps for o in truth] for p in pred]

    @lru_cache(maxsize=None)
    def best(i, used):
        if i == len(pred):
            return 0
        score = best(i + 1, used)
        for j in range(len(truth)):
            if ok[i][j] and not used >> j & 1:
                score = max(score, 1 + best(i + 1, used | 1 << j))
        return score

    return best(0, 0)


def pytest_terminal_summary(terminalreporter):
    results = sys.modules.get("test_acceptance")
    if results is None or not results.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in results.result_lines():
        terminalreporter.write_line(line)
