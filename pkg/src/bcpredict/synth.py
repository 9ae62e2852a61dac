"""Deterministic synthetic two-channel conversations with rule-placed BCs.

The floor alternates between the channels in turns of several phrases.  Each
phrase is a run of pseudo-words voiced as a band-limited sawtooth following a
pitch contour; the contour either ends in a fall or does not.  Whenever the
speaker pauses for at least ``pause_threshold`` after a fall of at least
``pitch_fall_depth`` semitones, the listener answers with a BC with
probability ``bc_probability`` after a normally distributed latency.

All draws come from :class:`bcpredict.rng.Stream` keyed by ``(seed, index)``
and are consumed in a fixed order, so ``bc_probability`` only decides whether
a qualifying pause gets its BC; every other draw is unchanged.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import (
    BcEvent,
    Conversation,
    Utterance,
    Word,
    format_time,
    other_channel,
    transcript_lines,
    wav_bytes,
)
from .rng import Stream

BC_TEXTS = ("yeah", "um-hum", "uh-huh", "right", "okay", "oh", "uh")
BC_WEIGHTS = (0.34, 0.22, 0.18, 0.1, 0.08, 0.05, 0.03)

_ONSETS = ("b", "d", "g", "k", "l", "m", "n", "p", "s", "t", "v", "z")
_NUCLEI = ("a", "e", "i", "o", "u")
# Two-syllable pseudo words; none of them collides with a BC text.
VOCABULARY = tuple(o1 + n1 + o2 + n2 for o1 in _ONSETS for n1 in _NUCLEI for o2 in _ONSETS[:4] for n2 in _NUCLEI[:2])

_TURN_LEN = (12.0, 35.0)
_TURN_GAP = (0.3, 1.2)
_WORDS_PER_PHRASE = (3, 8)
_WORD_DUR = (0.15, 0.40)
_SHORT_PAUSE = (0.12, 0.50)
_LONG_PAUSE_MAX = 1.6
_MAX_PHRASE = _WORDS_PER_PHRASE[1] * _WORD_DUR[1]
_P_FALLING = 0.5
_P_LONG_AFTER_FALL = 0.7
_P_LONG_OTHERWISE = 0.3
_BC_DUR = (0.25, 0.50)
_SPEECH_AMP = (0.25, 0.55)
_NOISE_FLOOR = 0.003


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthParams:
    seed: int = 1
    n_conversations: int = 80
    duration: float = 120.0
    sample_rate: int = 8000
    pause_threshold: float = 0.7
    bc_probability: float = 0.8
    bc_latency_mean: float = 0.3
    bc_latency_std: float = 0.1
    pitch_fall_depth: float = 3.0

    def validate(self) -> None:
        if self.duration <= 10.0:
            raise SynthConfigError("duration must exceed 10 s")
        if not 0.0 <= self.bc_probability <= 1.0:
            raise SynthConfigError("bc_probability must lie in [0, 1]")
        if self.bc_latency_mean <= 0 or self.bc_latency_std < 0:
            raise SynthConfigError("latency mean must be positive and std non-negative")
        if self.pause_threshold <= _SHORT_PAUSE[1]:
            raise SynthConfigError(f"pause_threshold must exceed {_SHORT_PAUSE[1]} s")
        if self.sample_rate not in (8000, 16000):
            raise SynthConfigError("sample_rate must be 8000 or 16000")
        if self.n_conversations < 1:
            raise SynthConfigError("n_conversations must be >= 1")
        if self.pitch_fall_depth <= 0:
            raise SynthConfigError("pitch_fall_depth must be positive")

    @property
    def max_latency(self) -> float:
        return self.bc_latency_mean + 4.0 * self.bc_latency_std


@dataclass
class Pause:
    channel: str
    start: float
    duration: float
    final_drop: float  # semitones, positive = fall
    qualifying: bool


@dataclass
class _Phrase:
    words: list[Word]
    change: float  # semitones over the final stretch
    amps: list[float]


@dataclass
class GeneratedConversation:
    conversation: Conversation
    bc_events: list[BcEvent]
    pauses: list[Pause] = field(default_factory=list)


def conversation_id(index: int) -> str:
    return f"conv{index:04d}"


def _ms(t: float) -> float:
    return round(t * 1000.0) / 1000.0


def generate_conversation(params: SynthParams, index: int) -> GeneratedConversation:
    params.validate()
    if not 0 <= index < params.n_conversations:
        raise SynthConfigError(f"index {index} outside [0, {params.n_conversations})")
    rng = Stream(params.seed, "synth", index)
    base_f0 = {"A": rng.uniform(low=100.0, high=140.0), "B": rng.uniform(low=170.0, high=230.0)}
    if rng.bernoulli(0.5):
        base_f0 = {"A": base_f0["B"], "B": base_f0["A"]}
    floor = "A" if rng.bernoulli(0.5) else "B"

    phrases: dict[str, list[_Phrase]] = {"A": [], "B": []}
    turns: dict[str, list[list[Word]]] = {"A": [], "B": []}
    bcs: dict[str, list[tuple[Word, float]]] = {"A": [], "B": []}
    events: list[BcEvent] = []
    pauses: list[Pause] = []

    t = _ms(rng.uniform(low=0.2, high=1.0))
    # latest time a phrase may start so that it ends before the conversation does
    last_start = params.duration - 0.5 - _MAX_PHRASE
    long_max = max(_LONG_PAUSE_MAX, params.max_latency + 0.8)
    while t < last_start:
        turn_end_target = t + rng.uniform(low=_TURN_LEN[0], high=_TURN_LEN[1])
        listener = other_channel(floor)
        turn_words: list[Word] = []
        while True:
            n_words = int(rng.integers(_WORDS_PER_PHRASE[1] - _WORDS_PER_PHRASE[0] + 1)) + _WORDS_PER_PHRASE[0]
            words, amps = [], []
            for _ in range(n_words):
                dur = rng.uniform(low=_WORD_DUR[0], high=_WORD_DUR[1])
                text = VOCABULARY[int(rng.integers(len(VOCABULARY)))]
                amps.append(rng.uniform(low=_SPEECH_AMP[0], high=_SPEECH_AMP[1]))
                end = _ms(t + dur)
                words.append(Word(text, t, end))
                t = end
            falling = rng.bernoulli(_P_FALLING)
            if falling:
                drop = rng.uniform(low=params.pitch_fall_depth + 1.0, high=params.pitch_fall_depth + 5.0)
            else:
                drop = rng.uniform(low=-5.0, high=min(1.0, params.pitch_fall_depth - 0.5))
            phrases[floor].append(_Phrase(words, -drop, amps))
            turn_words.extend(words)

            is_long = rng.bernoulli(_P_LONG_AFTER_FALL if falling else _P_LONG_OTHERWISE)
            long_dur = rng.uniform(low=params.pause_threshold + 0.05, high=long_max)
            short_dur = rng.uniform(low=_SHORT_PAUSE[0], high=_SHORT_PAUSE[1])
            bc_draw = rng.uniform()
            latency = rng.normal(mean=params.bc_latency_mean, std=params.bc_latency_std)
            bc_dur = rng.uniform(low=_BC_DUR[0], high=_BC_DUR[1])
            bc_text = BC_TEXTS[int(np.searchsorted(np.cumsum(BC_WEIGHTS), rng.uniform() * sum(BC_WEIGHTS), side="right").clip(0, len(BC_TEXTS) - 1))]

            if t >= turn_end_target or t + long_max >= last_start:
                break
            pause = _ms(long_dur if is_long else short_dur)
            qualifying = pause >= params.pause_threshold and drop >= params.pitch_fall_depth
            pauses.append(Pause(floor, t, pause, drop, qualifying))
            if qualifying and bc_draw < params.bc_probability:
                lat = _ms(min(max(latency, 0.0), params.max_latency))
                onset = _ms(t + lat)
                bc_word = Word(bc_text, onset, _ms(onset + bc_dur))
                bcs[listener].append((bc_word, base_f0[listener]))
                events.append(BcEvent(listener, onset, bc_text))
            t = _ms(t + pause)
        turns[floor].append(turn_words)
        t = _ms(t + rng.uniform(low=_TURN_GAP[0], high=_TURN_GAP[1]))
        floor = other_channel(floor)

    utterances = {}
    for ch in ("A", "B"):
        utts = [Utterance(tuple(words), ch) for words in turns[ch]]
        utts += [Utterance((w,), ch) for w, _ in bcs[ch]]
        utterances[ch] = sorted(utts, key=lambda u: u.start)

    audio = {}
    for ch in ("A", "B"):
        audio[ch] = _render_channel(params, rng.child("audio", ch), base_f0[ch], phrases[ch], [w for w, _ in bcs[ch]])

    conv = Conversation(
        id=conversation_id(index),
        utterances_a=utterances["A"],
        utterances_b=utterances["B"],
        duration=params.duration,
        sample_rate=params.sample_rate,
        audio_a=audio["A"],
        audio_b=audio["B"],
    )
    events.sort(key=lambda e: (e.onset, e.channel))
    return GeneratedConversation(conv, events, pauses)


def _ramp_envelope(n: int, sr: int, ramp: float = 0.015) -> np.ndarray:
    env = np.ones(n)
    r = min(int(ramp * sr), n // 2)
    if r > 0:
        edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = edge
        env[n - r :] = edge[::-1]
    return env


def _render_channel(params: SynthParams, rng: Stream, base_f0: float, phrases: list[_Phrase], bc_words: list[Word]) -> np.ndarray:
    sr = params.sample_rate
    n = int(round(params.duration * sr))
    semitones = np.zeros(n)
    amp = np.zeros(n)
    for ph in phrases:
        s = int(round(ph.words[0].start * sr))
        e = int(round(ph.words[-1].end * sr))
        length = e - s
        tt = np.arange(length) / sr
        total = length / sr
        final = min(0.35, total / 2)
        contour = -0.8 * tt / total
        tail = tt > total - final
        contour[tail] += ph.change * (tt[tail] - (total - final)) / final
        semitones[s:e] = contour
        for w, a in zip(ph.words, ph.amps):
            ws, we = int(round(w.start * sr)), int(round(w.end * sr))
            amp[ws:we] = a * _ramp_envelope(we - ws, sr)
    for w in bc_words:
        ws, we = int(round(w.start * sr)), min(n, int(round(w.end * sr)))
        tt = np.arange(we - ws) / sr
        semitones[ws:we] = 2.0 * tt / max(tt[-1], 1e-3)
        amp[ws:we] = 0.35 * _ramp_envelope(we - ws, sr)

    f0 = base_f0 * 2.0 ** (semitones / 12.0)
    phase = np.cumsum(f0) / sr
    n_harm = min(12, int(0.45 * sr / (base_f0 * 2 ** (6 / 12))))
    voiced = amp > 0
    ph = 2 * np.pi * phase[voiced]
    partial = np.zeros(ph.size)
    for h in range(1, n_harm + 1):
        partial += np.sin(h * ph) / h
    source = np.zeros(n)
    source[voiced] = partial * (2 / np.pi)
    noise = rng.normal(n)
    out = amp * (source + 0.05 * noise) + _NOISE_FLOOR * rng.normal(n)
    # quantize exactly as written to WAV so in-memory and on-disk audio agree
    return wav_bytes(out).astype(np.float64) / 32768.0


# ---------------------------------------------------------------------------
# Writing a corpus to disk


def write_corpus(params: SynthParams, out_dir: Path, write=None) -> list[GeneratedConversation]:
    """Generate all conversations and write them with the corpus file formats.

    ``write(path, data: bytes)`` is the file sink; defaults to plain writes.
    Files: ``transcript.tsv``, ``conversations.tsv``, ``bc_truth.tsv``,
    ``bc_seed.txt``, ``synth_params.tsv`` and ``<conv>.<channel>.wav``.
    """
    from .corpus import wav_file_bytes

    params.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if write is None:
        def write(path, data):
            Path(path).write_bytes(data)

    generated = []
    transcript, conv_lines, truth_lines = [], [], []
    for index in range(params.n_conversations):
        g = generate_conversation(params, index)
        generated.append(g)
        conv = g.conversation
        transcript.extend(transcript_lines(conv))
        conv_lines.append(f"{conv.id}\t{format_time(conv.duration)}\t{params.sample_rate}")
        for ev in g.bc_events:
            truth_lines.append(f"{conv.id}\t{ev.channel}\t{format_time(ev.onset)}\t{ev.text}")
        for ch in ("A", "B"):
            write(out_dir / f"{conv.id}.{ch}.wav", wav_file_bytes(conv.audio(ch), params.sample_rate))
    write(out_dir / "transcript.tsv", _lines(transcript))
    write(out_dir / "conversations.tsv", _lines(conv_lines))
    write(out_dir / "bc_truth.tsv", _lines(truth_lines))
    write(out_dir / "bc_seed.txt", _lines(sorted(BC_TEXTS)))
    write(out_dir / "synth_params.tsv", _lines(f"{k}\t{v}" for k, v in asdict(params).items()))
    return generated


def _lines(lines) -> bytes:
    return "".join(line + "\n" for line in lines).encode("utf-8")
