"""Frame-synchronous feature tracks and context windows.

Frame ``t`` covers samples ``[t*shift, t*shift + window)``.  Every extractor
computes raw per-frame values from that span only; the optional
normalization step is either over the whole conversation (``"conversation"``,
the default), causal running statistics (``"running"``) or off (``"none"``).
Only the latter two keep frames independent of later audio.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct

from .corpus import Conversation, Utterance, other_channel
from .rng import Stream

FEATURE_ORDER = ("power", "pitch", "variation", "mfcc", "word")
FEATURE_DIMS = {"power": 1, "pitch": 1, "variation": 7, "mfcc": 13}
NORMALIZATIONS = ("conversation", "running", "none")

POWER_EPS = 1e-10
PITCH_RANGE = (50.0, 500.0)
VOICING_THRESHOLD = 0.3
DILATION_STEPS = tuple(range(-3, 4))
N_MEL = 26
N_CEPS = 13
PREEMPHASIS = 0.97
OOV_BUCKETS = 1024
OOV_SEED = 20170815


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FrameSpec:
    window: float = 0.032
    shift: float = 0.010

    def __post_init__(self):
        if not self.window > self.shift > 0:
            raise FeatureError("need window > shift > 0")

    def samples(self, sample_rate: int) -> tuple[int, int]:
        return int(round(self.window * sample_rate)), int(round(self.shift * sample_rate))

    def n_frames(self, n_samples: int, sample_rate: int) -> int:
        win, hop = self.samples(sample_rate)
        return 0 if n_samples < win else (n_samples - win) // hop + 1

    def n_frames_for_duration(self, duration: float) -> int:
        if duration < self.window:
            return 0
        return int(np.floor((duration - self.window) / self.shift + 1e-9)) + 1

    def frame_index(self, time: float) -> int:
        """Quantize a time to the frame whose start precedes it."""
        return int(np.floor(time / self.shift + 1e-9))


@dataclass
class FeatureTrack:
    name: str
    frames: np.ndarray  # (n_frames, dim)
    spec: FrameSpec

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim == 1:
            self.frames = self.frames[:, None]
        if self.frames.ndim != 2:
            raise FeatureError("frames must be 2-d")

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class ContextWindow:
    anchor_frame: int
    width: float
    stride: int
    data: np.ndarray  # (n_frames, dim), oldest first


def frame_signal(audio: np.ndarray, sample_rate: int, spec: FrameSpec) -> np.ndarray:
    win, hop = spec.samples(sample_rate)
    audio = np.asarray(audio, dtype=np.float64)
    if audio.size < win:
        return np.zeros((0, win))
    return sliding_window_view(audio, win)[::hop]


def normalize(values: np.ndarray, mode: str) -> np.ndarray:
    """Per-column mean/variance normalization."""
    values = np.asarray(values, dtype=np.float64)
    if mode == "none" or len(values) == 0:
        return values.copy()
    if mode == "conversation":
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        return (values - mean) / np.where(std > 1e-12, std, 1.0)
    if mode == "running":
        count = np.arange(1, len(values) + 1)[:, None]
        mean = np.cumsum(values, axis=0) / count
        var = np.maximum(np.cumsum(values**2, axis=0) / count - mean**2, 0.0)
        std = np.sqrt(var)
        return (values - mean) / np.where(std > 1e-6, std, 1.0)
    raise FeatureError(f"unknown normalization {mode!r}")


def _center(values: np.ndarray, mode: str) -> np.ndarray:
    """Mean removal only (used for MFCC)."""
    if mode == "none" or len(values) == 0:
        return values.copy()
    if mode == "conversation":
        return values - values.mean(axis=0)
    if mode == "running":
        return values - np.cumsum(values, axis=0) / np.arange(1, len(values) + 1)[:, None]
    raise FeatureError(f"unknown normalization {mode!r}")


# ---------------------------------------------------------------------------
# power


def raw_power(audio, sample_rate: int, spec: FrameSpec) -> np.ndarray:
    frames = frame_signal(audio, sample_rate, spec)
    return np.log(POWER_EPS + np.einsum("ij,ij->i", frames, frames))


def power_track(audio, sample_rate: int, spec: FrameSpec = FrameSpec(), normalization: str = "conversation") -> FeatureTrack:
    """Log frame energy ``log(1e-10 + sum(s**2))``, then normalized."""
    if len(audio) == 0:
        raise FeatureError("empty audio")
    return FeatureTrack("power", normalize(raw_power(audio, sample_rate, spec)[:, None], normalization), spec)


# ---------------------------------------------------------------------------
# pitch


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def raw_pitch(
    audio,
    sample_rate: int,
    spec: FrameSpec = FrameSpec(),
    f0_range: tuple[float, float] = PITCH_RANGE,
    voicing_threshold: float = VOICING_THRESHOLD,
) -> np.ndarray:
    """Per-frame f0 in Hz (0.0 when unvoiced).

    The lag is picked on the ACF normalized by its zero-lag value, which
    tapers with lag and so prefers the true period over its multiples;
    the same normalized peak decides voicing.  The lag is then refined by
    parabolic interpolation on the unbiased normalized cross-correlation.
    """
    frames = frame_signal(audio, sample_rate, spec)
    n_frames, n = frames.shape
    if n_frames == 0:
        return np.zeros(0)
    x = frames - frames.mean(axis=1, keepdims=True)
    nfft = _next_pow2(2 * n)
    spectrum = np.fft.rfft(x, nfft, axis=1)
    acf = np.fft.irfft(spectrum.real**2 + spectrum.imag**2, nfft, axis=1)[:, :n]
    energy = acf[:, 0]
    cs = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(x * x, axis=1)], axis=1)
    lags = np.arange(n)
    e_head = cs[:, n - lags]
    e_tail = cs[:, n : n + 1] - cs[:, lags]
    nccf = acf / np.sqrt(e_head * e_tail + 1e-20)

    lmin = max(2, int(np.floor(sample_rate / f0_range[1])))
    lmax = min(n - 3, int(np.ceil(sample_rate / f0_range[0])))
    safe = np.where(energy > 1e-12, energy, 1.0)
    biased = acf[:, lmin : lmax + 1] / safe[:, None]
    best = np.argmax(biased, axis=1) + lmin
    peak = biased[np.arange(n_frames), best - lmin]
    voiced = (energy > 1e-12) & (peak >= voicing_threshold)

    rows = np.arange(n_frames)
    # move to the nccf maximum within +-2 lags, then interpolate
    offsets = np.arange(-2, 3)
    cand = np.clip(best[:, None] + offsets[None, :], lmin, lmax)
    lag = cand[rows, np.argmax(nccf[rows[:, None], cand], axis=1)]
    lag = np.clip(lag, lmin + 1, lmax - 1)
    y0, y1, y2 = nccf[rows, lag - 1], nccf[rows, lag], nccf[rows, lag + 1]
    denom = y0 - 2 * y1 + y2
    delta = np.where(np.abs(denom) > 1e-12, 0.5 * (y0 - y2) / np.where(np.abs(denom) > 1e-12, denom, 1.0), 0.0)
    delta = np.clip(delta, -0.5, 0.5)
    f0 = sample_rate / (lag + delta)
    return np.where(voiced, f0, 0.0)


def pitch_track(
    audio,
    sample_rate: int,
    spec: FrameSpec = FrameSpec(),
    mode: str = "semitone",
    normalization: str = "conversation",
    **kwargs,
) -> FeatureTrack:
    """Pitch relative to the channel's median voiced f0, in semitones.

    ``mode="hz"`` returns raw f0 instead.  With ``normalization="running"``
    the reference is the running mean of log-f0 over voiced frames so far.
    Unvoiced frames are 0.0 in every mode.
    """
    if len(audio) == 0:
        raise FeatureError("empty audio")
    f0 = raw_pitch(audio, sample_rate, spec, **kwargs)
    if mode == "hz":
        return FeatureTrack("pitch", f0[:, None], spec)
    if mode != "semitone":
        raise FeatureError(f"unknown pitch mode {mode!r}")
    voiced = f0 > 0
    out = np.zeros_like(f0)
    if not voiced.any():
        return FeatureTrack("pitch", out[:, None], spec)
    log_f0 = np.log2(np.where(voiced, f0, 1.0))
    if normalization == "running":
        count = np.cumsum(voiced)
        ref = np.cumsum(np.where(voiced, log_f0, 0.0)) / np.maximum(count, 1)
    elif normalization == "none":
        ref = np.full_like(f0, np.log2(100.0))
    else:
        ref = np.full_like(f0, np.log2(np.median(f0[voiced])))
    out[voiced] = 12.0 * (log_f0[voiced] - ref[voiced])
    return FeatureTrack("pitch", out[:, None], spec)


# ---------------------------------------------------------------------------
# pitch variation (7-dim)


def pitch_variation_track(audio, sample_rate: int, spec: FrameSpec = FrameSpec()) -> FeatureTrack:
    """Seven dilation correlations between the two halves of each frame.

    Both halves get a Hann window and a magnitude spectrum.  For each
    ``k`` in -3..3 the right-half spectrum is read at frequencies scaled by
    ``2**(k/16)`` and correlated (cosine similarity) with the left half on a
    common frequency grid.  A pitch rise by ratio ``r`` between the half
    centres peaks near ``k = 16*log2(r)``.  Values lie in [0, 1]; a frame
    with an all-zero half gives zeros.
    """
    if len(audio) == 0:
        raise FeatureError("empty audio")
    frames = frame_signal(audio, sample_rate, spec)
    n_frames, n = frames.shape
    half = n // 2
    win = np.hanning(half)
    nfft = max(512, _next_pow2(4 * half))
    left = np.abs(np.fft.rfft(frames[:, :half] * win, nfft, axis=1))
    right = np.abs(np.fft.rfft(frames[:, half : 2 * half] * win, nfft, axis=1))
    bin_hz = sample_rate / nfft
    top = 0.5 * sample_rate / 2 ** (max(DILATION_STEPS) / 16) * 0.98
    grid = np.arange(60.0, top, bin_hz)

    def sample(spectra, freqs):
        pos = freqs / bin_hz
        i0 = np.floor(pos).astype(int)
        frac = pos - i0
        return np.take(spectra, i0, axis=1) * (1 - frac) + np.take(spectra, i0 + 1, axis=1) * frac

    ref = sample(left, grid)
    ref_norm = np.sqrt(np.einsum("ij,ij->i", ref, ref))
    out = np.zeros((n_frames, len(DILATION_STEPS)))
    for j, k in enumerate(DILATION_STEPS):
        dil = sample(right, grid * 2 ** (k / 16))
        num = np.einsum("ij,ij->i", ref, dil)
        den = ref_norm * np.sqrt(np.einsum("ij,ij->i", dil, dil))
        out[:, j] = np.where(den > 1e-15, num / np.where(den > 1e-15, den, 1.0), 0.0)
    return FeatureTrack("variation", np.clip(out, -1.0, 1.0), spec)


# ---------------------------------------------------------------------------
# MFCC


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int, nfft: int, sample_rate: int, low: float = 0.0, high: float | None = None) -> np.ndarray:
    """Triangular filters on FFT bins, edges equally spaced in mel (HTK formula)."""
    high = sample_rate / 2 if high is None else high
    edges = mel_to_hz(np.linspace(hz_to_mel(low), hz_to_mel(high), n_filters + 2))
    bins = np.floor((nfft + 1) * edges / sample_rate).astype(int)
    fb = np.zeros((n_filters, nfft // 2 + 1))
    for j in range(n_filters):
        lo, mid, hi = bins[j], bins[j + 1], bins[j + 2]
        if mid > lo:
            fb[j, lo:mid] = (np.arange(lo, mid) - lo) / (mid - lo)
        if hi > mid:
            fb[j, mid:hi] = (hi - np.arange(mid, hi)) / (hi - mid)
    return fb


def raw_mfcc(audio, sample_rate: int, spec: FrameSpec = FrameSpec(), n_ceps: int = N_CEPS, n_filters: int = N_MEL) -> np.ndarray:
    audio = np.asarray(audio, dtype=np.float64)
    emphasized = np.concatenate([audio[:1], audio[1:] - PREEMPHASIS * audio[:-1]])
    frames = frame_signal(emphasized, sample_rate, spec)
    n = frames.shape[1]
    nfft = max(512, _next_pow2(n))
    power = np.abs(np.fft.rfft(frames * np.hamming(n), nfft, axis=1)) ** 2 / nfft
    energies = power @ mel_filterbank(n_filters, nfft, sample_rate).T
    energies = np.where(energies == 0.0, np.finfo(float).eps, energies)
    return dct(np.log(energies), type=2, axis=1, norm="ortho")[:, :n_ceps]


def mfcc_track(audio, sample_rate: int, spec: FrameSpec = FrameSpec(), normalization: str = "conversation") -> FeatureTrack:
    """13 MFCCs (c0..c12): pre-emphasis, Hamming, 26 mel filters up to Nyquist,
    log, orthonormal DCT-II, then per-channel mean removal."""
    if len(audio) == 0:
        raise FeatureError("empty audio")
    return FeatureTrack("mfcc", _center(raw_mfcc(audio, sample_rate, spec), normalization), spec)


# ---------------------------------------------------------------------------
# word embeddings


class WordEmbeddingTable:
    """Word vectors with hashed out-of-vocabulary fallback.

    Unknown words map to one of 1024 fixed random vectors chosen by the
    CRC-32 of the word, so the mapping is stable across runs and machines.
    """

    def __init__(self, dim: int, entries: dict[str, np.ndarray] | None = None, oov_seed: int = OOV_SEED):
        self.dim = int(dim)
        self.entries = {}
        for word, vec in (entries or {}).items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise FeatureError(f"vector for {word!r} has shape {vec.shape}, expected ({self.dim},)")
            self.entries[word] = vec
        self.oov = Stream(oov_seed, "oov", self.dim).normal((OOV_BUCKETS, self.dim)) / np.sqrt(self.dim)

    def __getitem__(self, word: str) -> np.ndarray:
        vec = self.entries.get(word)
        if vec is None:
            vec = self.oov[zlib.crc32(word.encode("utf-8")) % OOV_BUCKETS]
        return vec

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    @classmethod
    def load(cls, path: Path) -> "WordEmbeddingTable":
        """Text format: header ``count dim``, then ``word v1 ... vdim`` per line."""
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise FeatureError(f"{path}: header must be 'count dim'")
            count, dim = int(header[0]), int(header[1])
            entries = {}
            for lineno, line in enumerate(fh, 2):
                parts = line.rstrip().split(" ")
                if len(parts) != dim + 1:
                    raise FeatureError(f"{path}:{lineno}: expected {dim} values")
                entries[parts[0]] = np.array(parts[1:], dtype=np.float64)
        if len(entries) != count:
            raise FeatureError(f"{path}: header says {count} words, found {len(entries)}")
        return cls(dim, entries)

    def save(self, path: Path) -> None:
        lines = [f"{len(self.entries)} {self.dim}"]
        lines += [w + " " + " ".join(repr(float(v)) for v in vec) for w, vec in self.entries.items()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def word_embedding_track(utterances: Sequence[Utterance], table: WordEmbeddingTable, spec: FrameSpec, duration: float) -> FeatureTrack:
    """Frame ``t`` carries the vector of the last word ending at or before
    ``t*shift + window``; zeros until the first word has ended."""
    n_frames = spec.n_frames_for_duration(duration)
    words = sorted((w for u in utterances for w in u.words), key=lambda w: w.end)
    out = np.zeros((n_frames, table.dim))
    if not words or n_frames == 0:
        return FeatureTrack("word", out, spec)
    ends = np.array([w.end for w in words])
    frame_ends = np.arange(n_frames) * spec.shift + spec.window
    idx = np.searchsorted(ends, frame_ends + 1e-9, side="right") - 1
    vectors = np.stack([table[w.text] for w in words])
    has = idx >= 0
    out[has] = vectors[idx[has]]
    return FeatureTrack("word", out, spec)


# ---------------------------------------------------------------------------
# assembly


def _order_key(track: FeatureTrack) -> int:
    base = track.name.split(":")[0]
    return FEATURE_ORDER.index(base) if base in FEATURE_ORDER else len(FEATURE_ORDER)


def stack_features(tracks: Sequence[FeatureTrack]) -> FeatureTrack:
    """Concatenate tracks in canonical order (power, pitch, variation, mfcc, word),
    clipping to the shortest."""
    if not tracks:
        raise FeatureError("no tracks to stack")
    spec = tracks[0].spec
    for t in tracks[1:]:
        if t.spec != spec:
            raise FeatureError(f"track {t.name!r} has frame spec {t.spec}, expected {spec}")
    ordered = sorted(tracks, key=_order_key)
    n = min(len(t) for t in ordered)
    return FeatureTrack("+".join(t.name for t in ordered), np.concatenate([t.frames[:n] for t in ordered], axis=1), spec)


def context_length(width: float, spec: FrameSpec, stride: int) -> int:
    return int(round(width / (spec.shift * stride)))


def window_indices(anchors: np.ndarray, n_rows: int, stride: int) -> np.ndarray:
    """Row indices (oldest first) for each anchor: ``anchor - (n-1)*stride .. anchor``."""
    return np.asarray(anchors)[:, None] - stride * np.arange(n_rows - 1, -1, -1)[None, :]


def context_window(track: FeatureTrack, anchor: int, width: float, stride: int) -> ContextWindow:
    if stride < 1:
        raise FeatureError("stride must be >= 1")
    n = context_length(width, track.spec, stride)
    if n < 1:
        raise FeatureError("context width shorter than one strided frame")
    first = anchor - (n - 1) * stride
    if first < 0:
        raise FeatureError(f"anchor {anchor} too early for {n} rows at stride {stride}")
    if anchor >= len(track):
        raise FeatureError(f"anchor {anchor} beyond track of {len(track)} frames")
    return ContextWindow(anchor, width, stride, track.frames[first : anchor + 1 : stride].copy())


# ---------------------------------------------------------------------------
# per-channel extraction


@dataclass
class FeatureOptions:
    names: tuple[str, ...] = ("power", "pitch", "variation")
    spec: FrameSpec = FrameSpec()
    normalization: str = "conversation"
    pitch_mode: str = "semitone"


def compute_tracks(conv: Conversation, channel: str, options: FeatureOptions, table: WordEmbeddingTable | None = None) -> dict[str, FeatureTrack]:
    """All requested tracks for one channel, as ``{name: track}``.

    The ``word`` track encodes this channel's own words: the channel whose
    features feed the predictor is the speaker.
    """
    for name in options.names:
        if name not in FEATURE_ORDER:
            raise FeatureError(f"unknown feature {name!r}")
    out = {}
    acoustic = [n for n in options.names if n != "word"]
    if acoustic:
        audio = conv.audio(channel)
        sr = conv.sample_rate
        for name in acoustic:
            if name == "power":
                out[name] = power_track(audio, sr, options.spec, options.normalization)
            elif name == "pitch":
                out[name] = pitch_track(audio, sr, options.spec, options.pitch_mode, options.normalization)
            elif name == "variation":
                out[name] = pitch_variation_track(audio, sr, options.spec)
            elif name == "mfcc":
                out[name] = mfcc_track(audio, sr, options.spec, options.normalization)
    if "word" in options.names:
        if table is None:
            raise FeatureError("word feature requested without an embedding table")
        out["word"] = word_embedding_track(conv.utterances(channel), table, options.spec, conv.duration)
    return out


def listener_source(listener: str) -> str:
    """Features predicting BCs on ``listener`` come from the other channel."""
    return other_channel(listener)


# ---------------------------------------------------------------------------
# cache files

_MAGIC = b"BCF1"


def track_bytes(track: FeatureTrack) -> bytes:
    head = _MAGIC + struct.pack("<II", track.dim, len(track))
    return head + np.ascontiguousarray(track.frames, dtype="<f4").tobytes()


def sidecar_text(track: FeatureTrack) -> str:
    return f"{track.name} {track.dim} {track.spec.shift * 1000:g} {track.spec.window * 1000:g}\n"


def write_track(path: Path, track: FeatureTrack) -> None:
    path = Path(path)
    path.write_bytes(track_bytes(track))
    Path(str(path) + ".txt").write_text(sidecar_text(track), encoding="utf-8")


def read_track(path: Path) -> FeatureTrack:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != _MAGIC:
        raise FeatureError(f"{path}: bad magic")
    dim, n = struct.unpack("<II", data[4:12])
    expected = 12 + 4 * dim * n
    if len(data) != expected:
        raise FeatureError(f"{path}: size {len(data)} != {expected}")
    frames = np.frombuffer(data[12:], dtype="<f4").reshape(n, dim).astype(np.float64)
    side = Path(str(path) + ".txt")
    name, spec = path.stem, FrameSpec()
    if side.exists():
        parts = side.read_text(encoding="utf-8").split()
        name = parts[0]
        spec = FrameSpec(window=float(parts[3]) / 1000.0, shift=float(parts[2]) / 1000.0)
        if int(parts[1]) != dim:
            raise FeatureError(f"{side}: dim {parts[1]} != {dim}")
    return FeatureTrack(name, frames, spec)
