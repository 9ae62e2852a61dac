"""Two-channel conversation corpus: transcripts, BC identification, monologue segments.

Transcript format (UTF-8, tab separated, one word per line)::

    conv_id  channel  start_sec  end_sec  word

An utterance begins with a marker line whose word column is ``#UTT#``;
the words following it (same conversation and channel) belong to it.
"""

from __future__ import annotations

import io
import re
import wave
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CHANNELS = ("A", "B")
UTT_MARKER = "#UTT#"
DEFAULT_SILENCE_GAP = 0.010
_TIME_EPS = 1e-9

_LAUGHTER_WORD = re.compile(r"\[laughter-([^\]\s]+)\]")
_MARKER = re.compile(r"\[[^\]]*\]")
_WS = re.compile(r"\s+")


class CorpusError(ValueError):
    pass


def other_channel(channel: str) -> str:
    return "B" if channel == "A" else "A"


def normalize_text(raw: str) -> str:
    """Strip bracketed noise/laughter markers, lowercase, collapse whitespace.

    ``[laughter-<word>]`` keeps ``<word>``; every other ``[...]`` marker is
    dropped.  Returns ``""`` for pure-marker input (treated as silence).
    """
    text = _LAUGHTER_WORD.sub(r" \1 ", raw)
    text = _MARKER.sub(" ", text)
    return _WS.sub(" ", text.lower()).strip()


@dataclass(frozen=True)
class Word:
    text: str
    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise CorpusError(f"word {self.text!r}: start {self.start} >= end {self.end}")
        if not self.text:
            raise CorpusError("empty word text")


@dataclass(frozen=True)
class Utterance:
    words: tuple[Word, ...]
    channel: str

    def __post_init__(self):
        if not self.words:
            raise CorpusError("utterance without words")
        for a, b in zip(self.words, self.words[1:]):
            if b.start < a.end - _TIME_EPS:
                raise CorpusError(f"overlapping words {a} / {b}")

    @property
    def start(self) -> float:
        return self.words[0].start

    @property
    def end(self) -> float:
        return self.words[-1].end

    @property
    def text(self) -> str:
        return " ".join(w.text for w in self.words)

    @classmethod
    def from_raw(cls, words: Iterable[tuple[str, float, float]], channel: str) -> "Utterance | None":
        """Build from raw ``(text, start, end)`` triples; ``None`` if nothing survives normalization."""
        kept = []
        for text, start, end in words:
            norm = normalize_text(text)
            if norm:
                kept.append(Word(norm, float(start), float(end)))
        return cls(tuple(kept), channel) if kept else None


@dataclass
class Conversation:
    id: str
    utterances_a: list[Utterance]
    utterances_b: list[Utterance]
    duration: float
    sample_rate: int | None = None
    audio_a: np.ndarray | None = None
    audio_b: np.ndarray | None = None
    audio_paths: dict[str, Path] = field(default_factory=dict)

    def utterances(self, channel: str) -> list[Utterance]:
        return self.utterances_a if channel == "A" else self.utterances_b

    def audio(self, channel: str) -> np.ndarray:
        """Samples of one channel as float64 in [-1, 1]; loads from disk on demand."""
        arr = self.audio_a if channel == "A" else self.audio_b
        if arr is not None:
            return arr
        if channel not in self.audio_paths:
            raise CorpusError(f"{self.id}: no audio for channel {channel}")
        samples, sr = read_wav(self.audio_paths[channel])
        if self.sample_rate is not None and sr != self.sample_rate:
            raise CorpusError(f"{self.id}/{channel}: sample rate {sr} != {self.sample_rate}")
        self.sample_rate = sr
        return samples


@dataclass(frozen=True)
class BcEvent:
    channel: str
    onset: float
    text: str


@dataclass(frozen=True)
class MonologueSegment:
    speaker: str
    start: float
    end: float

    @property
    def listener(self) -> str:
        return other_channel(self.speaker)


# ---------------------------------------------------------------------------
# BC lexicon and identification


def top_bc_texts(conversations: Iterable[Conversation], candidate_filter: Iterable[str], n: int) -> frozenset[str]:
    """The ``n`` most frequent utterance texts that are BC candidates.

    Candidates are utterances whose normalized text is in ``candidate_filter``
    (the seed of texts marked as BCs).  Ties break lexicographically.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seed = {normalize_text(t) for t in candidate_filter}
    counts: Counter[str] = Counter()
    for conv in conversations:
        for ch in CHANNELS:
            for utt in conv.utterances(ch):
                if utt.text in seed:
                    counts[utt.text] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return frozenset(text for text, _ in ranked[:n])


def is_backchannel(
    utt: Utterance,
    prev: Utterance | None,
    lexicon: frozenset[str] | set[str],
    *,
    prev_is_bc: bool | None = None,
    silence_gap: float = DEFAULT_SILENCE_GAP,
) -> bool:
    """Whether ``utt`` counts as a BC given the preceding same-channel utterance.

    A lexicon match only counts when it follows silence (a gap of at least
    ``silence_gap``) or another BC; this keeps disfluencies like "uh" in
    running speech out.  ``prev_is_bc`` defaults to a lexicon lookup on
    ``prev``; :func:`backchannel_flags` threads the exact chained value.
    """
    if utt.text not in lexicon:
        return False
    if prev is None:
        return True
    if prev_is_bc is None:
        prev_is_bc = prev.text in lexicon
    return prev_is_bc or prev.end <= utt.start - silence_gap + _TIME_EPS


def backchannel_flags(utterances: Sequence[Utterance], lexicon, silence_gap: float = DEFAULT_SILENCE_GAP) -> list[bool]:
    flags: list[bool] = []
    prev = None
    for utt in utterances:
        flag = is_backchannel(utt, prev, lexicon, prev_is_bc=flags[-1] if flags else None, silence_gap=silence_gap)
        flags.append(flag)
        prev = utt
    return flags


def extract_bc_annotations(conv: Conversation, lexicon, silence_gap: float = DEFAULT_SILENCE_GAP) -> list[BcEvent]:
    events = []
    for ch in CHANNELS:
        utts = conv.utterances(ch)
        for utt, flag in zip(utts, backchannel_flags(utts, lexicon, silence_gap)):
            if flag:
                events.append(BcEvent(ch, utt.start, utt.text))
    events.sort(key=lambda e: (e.onset, e.channel))
    return events


# ---------------------------------------------------------------------------
# Interval helpers and monologue segments


def merge_intervals(intervals: Iterable[tuple[float, float]], max_gap: float = 0.0) -> list[tuple[float, float]]:
    """Union of intervals; neighbours separated by less than ``max_gap`` are joined."""
    out: list[list[float]] = []
    for s, e in sorted(intervals):
        if out and (s <= out[-1][1] or s - out[-1][1] < max_gap - _TIME_EPS):
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


def subtract_intervals(base: Sequence[tuple[float, float]], cut: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """``base`` minus ``cut``; both must be sorted and internally disjoint."""
    out = []
    j = 0
    for s, e in base:
        cur = s
        while j < len(cut) and cut[j][1] <= cur:
            j += 1
        k = j
        while k < len(cut) and cut[k][0] < e:
            if cut[k][0] > cur:
                out.append((cur, cut[k][0]))
            cur = max(cur, cut[k][1])
            k += 1
        if cur < e:
            out.append((cur, e))
    return out


def talking_intervals(utterances: Sequence[Utterance], lexicon, silence_gap: float = DEFAULT_SILENCE_GAP) -> list[tuple[float, float]]:
    """Time covered by non-BC utterances, gaps shorter than ``silence_gap`` bridged."""
    flags = backchannel_flags(utterances, lexicon, silence_gap)
    spans = [(u.start, u.end) for u, bc in zip(utterances, flags) if not bc]
    return merge_intervals(spans, max_gap=silence_gap)


def monologuing_segments(
    conv: Conversation, lexicon, min_len: float = 5.0, silence_gap: float = DEFAULT_SILENCE_GAP
) -> list[MonologueSegment]:
    """Maximal stretches of at least ``min_len`` seconds where one side talks
    and the other is silent or only backchannels."""
    if min_len <= 0:
        raise ValueError("min_len must be positive")
    talk = {ch: talking_intervals(conv.utterances(ch), lexicon, silence_gap) for ch in CHANNELS}
    segments = []
    for speaker in CHANNELS:
        for s, e in subtract_intervals(talk[speaker], talk[other_channel(speaker)]):
            if e - s >= min_len - _TIME_EPS:
                segments.append(MonologueSegment(speaker, s, e))
    segments.sort(key=lambda m: m.start)
    return segments


# ---------------------------------------------------------------------------
# File formats


def format_time(t: float) -> str:
    return f"{t:.3f}"


def write_transcript(conversations: Iterable[Conversation], path: Path) -> None:
    lines = [line for conv in conversations for line in transcript_lines(conv)]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def transcript_lines(conv: Conversation) -> list[str]:
    lines = []
    for ch in CHANNELS:
        for utt in conv.utterances(ch):
            lines.append("\t".join([conv.id, ch, format_time(utt.start), format_time(utt.end), UTT_MARKER]))
            for w in utt.words:
                lines.append("\t".join([conv.id, ch, format_time(w.start), format_time(w.end), w.text]))
    return lines


def read_transcript(path: Path) -> dict[str, dict[str, list[Utterance]]]:
    """Parse a transcript file into ``{conv_id: {channel: [Utterance, ...]}}``.

    Words are normalized on load; utterances left empty are dropped.
    """
    raw: dict[str, dict[str, list[list[tuple[str, float, float]]]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise CorpusError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}")
            conv_id, ch, start, end, word = parts
            if ch not in CHANNELS:
                raise CorpusError(f"{path}:{lineno}: bad channel {ch!r}")
            chans = raw.setdefault(conv_id, {c: [] for c in CHANNELS})
            if word == UTT_MARKER:
                chans[ch].append([])
                continue
            if not chans[ch]:
                raise CorpusError(f"{path}:{lineno}: word before any {UTT_MARKER} line")
            chans[ch][-1].append((word, float(start), float(end)))
    out = {}
    for conv_id, chans in raw.items():
        out[conv_id] = {}
        for ch, utts in chans.items():
            built = [Utterance.from_raw(words, ch) for words in utts]
            out[conv_id][ch] = sorted((u for u in built if u is not None), key=lambda u: u.start)
    return out


def read_lexicon(path: Path) -> frozenset[str]:
    texts = {normalize_text(line) for line in Path(path).read_text(encoding="utf-8").splitlines()}
    texts.discard("")
    if not texts:
        raise CorpusError(f"{path}: empty BC lexicon")
    return frozenset(texts)


def write_lexicon(lexicon: Iterable[str], path: Path) -> None:
    Path(path).write_text("".join(t + "\n" for t in sorted(lexicon)), encoding="utf-8")


def read_wav(path: Path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2 or wf.getnchannels() != 1:
            raise CorpusError(f"{path}: expected mono 16-bit PCM")
        sr = wf.getframerate()
        data = np.frombuffer(wf.readframes(wf.getnframes()), dtype="<i2")
    return data.astype(np.float64) / 32768.0, sr


def wav_bytes(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path: Path, samples: np.ndarray, sample_rate: int) -> None:
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(wav_bytes(samples).tobytes())


def wav_file_bytes(samples: np.ndarray, sample_rate: int) -> bytes:
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(wav_bytes(samples).tobytes())
    return buf.getvalue()


def read_bc_truth(path: Path) -> dict[str, list[BcEvent]]:
    """``conv_id<TAB>channel<TAB>onset_sec<TAB>text`` lines, grouped by conversation."""
    out: dict[str, list[BcEvent]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        conv_id, ch, onset, text = line.split("\t")
        out.setdefault(conv_id, []).append(BcEvent(ch, float(onset), text))
    return out


def load_corpus(corpus_dir: Path) -> list[Conversation]:
    """Load a corpus directory: ``conversations.tsv`` + ``transcript.tsv`` + WAVs.

    Audio stays on disk until :meth:`Conversation.audio` is called.
    """
    corpus_dir = Path(corpus_dir)
    listing = corpus_dir / "conversations.tsv"
    if not listing.exists():
        raise CorpusError(f"missing {listing}")
    transcripts = read_transcript(corpus_dir / "transcript.tsv")
    convs = []
    for line in listing.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        conv_id, duration, sr = line.split("\t")
        chans = transcripts.get(conv_id, {c: [] for c in CHANNELS})
        convs.append(
            Conversation(
                id=conv_id,
                utterances_a=chans["A"],
                utterances_b=chans["B"],
                duration=float(duration),
                sample_rate=int(sr),
                audio_paths={c: corpus_dir / f"{conv_id}.{c}.wav" for c in CHANNELS},
            )
        )
    return convs
