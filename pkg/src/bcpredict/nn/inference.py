from __future__ import annotations

import numpy as np

from ..features import FeatureTrack, context_length, window_indices
from .network import NetworkConfig, Params, logits, softmax

CHUNK = 1024


def predict_track(
    params: Params,
    config: NetworkConfig,
    track: FeatureTrack,
    width: float,
    stride: int,
    float32: bool = False,
) -> FeatureTrack:
    """P(BC) for every frame, using only the context window ending at that frame.

    Frames without a full window get 0.  Windows are evaluated in
    fixed-size chunks aligned to absolute frame numbers, so a truncated
    track yields bit-identical values on its common prefix.
    """
    n_rows = context_length(width, track.spec, stride)
    first = (n_rows - 1) * stride
    n = len(track)
    out = np.zeros(n)
    dtype = np.float32 if float32 else np.float64
    frames = track.frames.astype(dtype)
    for s in range(0, n, CHUNK):
        rows = np.arange(s, s + CHUNK)
        valid = (rows >= first) & (rows < n)
        if not valid.any():
            continue
        # every chunk has the same shape, so BLAS rounding cannot depend on track length
        anchors = np.clip(rows, first, n - 1)
        X = frames[window_indices(anchors, n_rows, stride)]
        probs = softmax(logits(params, config, X).astype(np.float64))[:, 0]
        out[rows[valid]] = probs[valid]
    return FeatureTrack("bc_probability", out[:, None], track.spec)
