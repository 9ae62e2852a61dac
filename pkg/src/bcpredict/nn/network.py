"""Feed-forward and LSTM classifiers with a two-unit softmax output.

Parameter layout (the order used by :class:`Params`, the model file and
the gradient lists):

* FF: ``W1 (in x h1), b1, ..., Wk, bk, Wout (hk x 2), bout``
* LSTM: per layer ``Wx (in x 4H), Wh (H x 4H), b (4H)`` with gate blocks in
  the order (i, f, g, o), then ``Wout (H_last x 2), bout``

Output unit 0 is BC, unit 1 non-BC.  All math is float64.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..rng import Stream

KINDS = ("ff", "lstm")
ACTIVATIONS = ("tanh", "relu")
INITS = ("glorot", "zero")
OPTIMIZERS = ("sgd", "adadelta", "adam")
N_OUT = 2


class NetworkError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """Loss became non-finite (usually a learning rate too large)."""


@dataclass
class NetworkConfig:
    kind: str = "lstm"
    hidden_sizes: tuple[int, ...] = (70, 35)
    input_dim: int = 9
    activation: str = "tanh"
    l2: float = 1e-4
    dropout: float = 0.0
    init: str = "glorot"
    optimizer: str = "adam"
    learning_rate: float | None = None
    seed: int = 1

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise NetworkError(f"kind must be one of {KINDS}")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise NetworkError("hidden_sizes must be a nonempty list of positive sizes")
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"activation must be one of {ACTIVATIONS}")
        if self.init not in INITS:
            raise NetworkError(f"init must be one of {INITS}")
        if self.optimizer not in OPTIMIZERS:
            raise NetworkError(f"optimizer must be one of {OPTIMIZERS}")
        if not 0.0 <= self.dropout <= 0.5:
            raise NetworkError("dropout must lie in [0, 0.5]")
        if self.l2 < 0:
            raise NetworkError("l2 must be non-negative")
        if self.input_dim < 1:
            raise NetworkError("input_dim must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


def param_shapes(config: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    shapes = []
    prev = config.input_dim
    for k, h in enumerate(config.hidden_sizes, 1):
        if config.kind == "ff":
            shapes += [(f"W{k}", (prev, h)), (f"b{k}", (h,))]
        else:
            shapes += [(f"Wx{k}", (prev, 4 * h)), (f"Wh{k}", (h, 4 * h)), (f"b{k}", (4 * h,))]
        prev = h
    shapes += [("Wout", (prev, N_OUT)), ("bout", (N_OUT,))]
    return shapes


def param_count(config: NetworkConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_shapes(config))


@dataclass
class Params:
    names: list[str]
    arrays: list[np.ndarray] = field(repr=False)

    def __iter__(self):
        return iter(self.arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[self.names.index(name)]

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def copy(self) -> "Params":
        return Params(list(self.names), [a.copy() for a in self.arrays])

    @classmethod
    def from_flat(cls, config: NetworkConfig, flat: np.ndarray) -> "Params":
        expected = param_count(config)
        if len(flat) != expected:
            raise NetworkError(f"expected {expected} parameters, got {len(flat)}")
        arrays, names, pos = [], [], 0
        for name, shape in param_shapes(config):
            n = int(np.prod(shape))
            arrays.append(np.array(flat[pos : pos + n], dtype=np.float64).reshape(shape))
            names.append(name)
            pos += n
        return cls(names, arrays)


def is_weight(name: str) -> bool:
    """Weights get L2; biases do not."""
    return name.startswith("W")


def init_params(config: NetworkConfig, seed: int | None = None) -> Params:
    """Glorot-uniform weights (``+-sqrt(6/(fan_in+fan_out))`` per matrix), zero
    biases except LSTM forget gates at 1.0; or all zeros for ``init="zero"``."""
    seed = config.seed if seed is None else seed
    stream = Stream(seed, "init")
    names, arrays = [], []
    for name, shape in param_shapes(config):
        if config.init == "zero":
            arr = np.zeros(shape)
        elif is_weight(name):
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = stream.uniform(shape, low=-bound, high=bound)
        else:
            arr = np.zeros(shape)
            if config.kind == "lstm" and name != "bout":
                h = shape[0] // 4
                arr[h : 2 * h] = 1.0
        names.append(name)
        arrays.append(arr)
    return Params(names, arrays)


# ---------------------------------------------------------------------------
# activations


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _act(name, z):
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name, z, a):
    return 1.0 - a * a if name == "tanh" else (z > 0).astype(z.dtype)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# input handling


def prepare_input(config: NetworkConfig, X: np.ndarray) -> np.ndarray:
    """FF: (B, input_dim) from (B, rows, dim) by row-major flattening.
    LSTM: (B, T, input_dim)."""
    X = np.asarray(X)
    if config.kind == "ff":
        if X.ndim == 3:
            X = X.reshape(X.shape[0], -1)
        if X.ndim != 2 or X.shape[1] != config.input_dim:
            raise NetworkError(f"FF input must flatten to {config.input_dim} values, got shape {X.shape}")
    else:
        if X.ndim != 3 or X.shape[2] != config.input_dim:
            raise NetworkError(f"LSTM input must be (batch, steps, {config.input_dim}), got shape {X.shape}")
    return X


def make_dropout_masks(config: NetworkConfig, batch: int, stream: Stream) -> list[np.ndarray] | None:
    """Inverted-dropout masks, one (batch, H) array per hidden layer."""
    if config.dropout <= 0:
        return None
    keep = 1.0 - config.dropout
    return [(stream.uniform((batch, h)) < keep) / keep for h in config.hidden_sizes]


# ---------------------------------------------------------------------------
# feed-forward


def _ff_forward(params: Params, config: NetworkConfig, X, masks):
    arrays = params.arrays
    layers = len(config.hidden_sizes)
    cache = {"inputs": [], "z": [], "a": []}
    h = X
    for k in range(layers):
        W, b = arrays[2 * k], arrays[2 * k + 1]
        cache["inputs"].append(h)
        z = h @ W + b
        a = _act(config.activation, z)
        cache["z"].append(z)
        cache["a"].append(a)
        h = a * masks[k] if masks is not None else a
    cache["last"] = h
    logits = h @ arrays[-2] + arrays[-1]
    return logits, cache


def _ff_backward(params: Params, config: NetworkConfig, cache, dlogits, masks):
    arrays = params.arrays
    grads = [None] * len(arrays)
    grads[-2] = cache["last"].T @ dlogits
    grads[-1] = dlogits.sum(axis=0)
    dh = dlogits @ arrays[-2].T
    for k in reversed(range(len(config.hidden_sizes))):
        if masks is not None:
            dh = dh * masks[k]
        dz = dh * _act_grad(config.activation, cache["z"][k], cache["a"][k])
        grads[2 * k] = cache["inputs"][k].T @ dz
        grads[2 * k + 1] = dz.sum(axis=0)
        if k > 0:
            dh = dz @ arrays[2 * k].T
    return grads


# ---------------------------------------------------------------------------
# LSTM


def _lstm_layer_forward(X, Wx, Wh, b):
    B, T, _ = X.shape
    H = Wh.shape[0]
    zx = (X.reshape(B * T, -1) @ Wx).reshape(B, T, 4 * H) + b
    h = np.zeros((B, H), dtype=X.dtype)
    c = np.zeros((B, H), dtype=X.dtype)
    gates = np.empty((B, T, 4 * H), dtype=X.dtype)
    cs = np.empty((B, T, H), dtype=X.dtype)
    tcs = np.empty((B, T, H), dtype=X.dtype)
    hs = np.empty((B, T, H), dtype=X.dtype)
    for t in range(T):
        z = zx[:, t] + h @ Wh
        g = gates[:, t]
        g[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
        g[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        g[:, 3 * H :] = _sigmoid(z[:, 3 * H :])
        c = g[:, H : 2 * H] * c + g[:, :H] * g[:, 2 * H : 3 * H]
        tc = np.tanh(c)
        h = g[:, 3 * H :] * tc
        cs[:, t], tcs[:, t], hs[:, t] = c, tc, h
    return hs, (X, gates, cs, tcs, hs)


def _lstm_inference(arrays, hidden_sizes, X):
    """Inference-only forward of the whole LSTM stack, time-major.

    All layers advance together one step at a time.  The i, f and o columns
    are pre-scaled by 0.5 so a single ``tanh`` yields every gate
    (``sigmoid(z) = (1 + tanh(z / 2)) / 2``), which matches :func:`_sigmoid`
    exactly.  Returns the last hidden state of the top layer.
    """
    B, T, _ = X.shape
    layers = []
    for k, H in enumerate(hidden_sizes):
        Wx, Wh, b = arrays[3 * k : 3 * k + 3]
        scale = np.full(4 * H, 0.5, dtype=X.dtype)
        scale[2 * H : 3 * H] = 1.0
        layers.append((Wx * scale, Wh * scale, b * scale, H))
    Wx0, _, b0, _ = layers[0]
    zx = np.ascontiguousarray((X.reshape(B * T, -1) @ Wx0).reshape(B, T, -1).transpose(1, 0, 2)) + b0
    hs = [np.zeros((B, H), dtype=X.dtype) for *_, H in layers]
    cs = [np.zeros((B, H), dtype=X.dtype) for *_, H in layers]
    for t in range(T):
        for k, (Wx, Wh, b, H) in enumerate(layers):
            z = (zx[t] if k == 0 else hs[k - 1] @ Wx + b) + hs[k] @ Wh
            np.tanh(z, out=z)
            gate_if = 0.5 * (1.0 + z[:, : 2 * H])
            cs[k] = gate_if[:, H:] * cs[k] + gate_if[:, :H] * z[:, 2 * H : 3 * H]
            hs[k] = 0.5 * (1.0 + z[:, 3 * H :]) * np.tanh(cs[k])
    return hs[-1]


def _lstm_layer_backward(dhs, Wx, Wh, cache):
    X, gates, cs, tcs, hs = cache
    B, T, H = hs.shape
    dzs = np.empty_like(gates)
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in reversed(range(T)):
        g = gates[:, t]
        i, f, gg, o = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
        dh = dhs[:, t] + dh_next
        tc = tcs[:, t]
        dc = dc_next + dh * o * (1.0 - tc * tc)
        c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, H))
        dz = dzs[:, t]
        dz[:, :H] = dc * gg * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dc * i * (1.0 - gg * gg)
        dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        if t > 0:
            dWh += hs[:, t - 1].T @ dz
        dh_next = dz @ Wh.T
    flat_dz = dzs.reshape(B * T, 4 * H)
    dWx = X.reshape(B * T, -1).T @ flat_dz
    db = flat_dz.sum(axis=0)
    dX = (flat_dz @ Wx.T).reshape(X.shape)
    return dX, dWx, dWh, db


def _lstm_forward(params: Params, config: NetworkConfig, X, masks):
    arrays = params.arrays
    caches = []
    seq = X
    for k in range(len(config.hidden_sizes)):
        Wx, Wh, b = arrays[3 * k : 3 * k + 3]
        hs, cache = _lstm_layer_forward(seq, Wx, Wh, b)
        caches.append(cache)
        seq = hs * masks[k][:, None, :] if masks is not None else hs
    last = seq[:, -1]
    logits = last @ arrays[-2] + arrays[-1]
    return logits, {"layers": caches, "last": last}


def _lstm_backward(params: Params, config: NetworkConfig, cache, dlogits, masks):
    arrays = params.arrays
    grads = [None] * len(arrays)
    grads[-2] = cache["last"].T @ dlogits
    grads[-1] = dlogits.sum(axis=0)
    top = cache["layers"][-1]
    B, T, H = top[4].shape
    dseq = np.zeros((B, T, H))
    dseq[:, -1] = dlogits @ arrays[-2].T
    for k in reversed(range(len(config.hidden_sizes))):
        if masks is not None:
            dseq = dseq * masks[k][:, None, :]
        Wx, Wh, _ = arrays[3 * k : 3 * k + 3]
        dX, dWx, dWh, db = _lstm_layer_backward(dseq, Wx, Wh, cache["layers"][k])
        grads[3 * k], grads[3 * k + 1], grads[3 * k + 2] = dWx, dWh, db
        dseq = dX
    return grads


# ---------------------------------------------------------------------------
# public API


def logits(params: Params, config: NetworkConfig, X: np.ndarray) -> np.ndarray:
    """Inference logits (no dropout); keeps the dtype of ``X``."""
    X = prepare_input(config, X)
    arrays = [a.astype(X.dtype, copy=False) for a in params.arrays]
    if config.kind == "ff":
        h = X
        for k in range(len(config.hidden_sizes)):
            h = _act(config.activation, h @ arrays[2 * k] + arrays[2 * k + 1])
    else:
        h = _lstm_inference(arrays, config.hidden_sizes, X)
    return h @ arrays[-2] + arrays[-1]


def forward(params: Params, config: NetworkConfig, X: np.ndarray) -> np.ndarray:
    """Class probabilities ``[P(BC), P(non-BC)]``.

    A single example (FF: flat vector or (rows, dim); LSTM: (steps, dim))
    gives a length-2 vector; a batch gives (batch, 2).
    """
    X = np.asarray(X, dtype=np.float64)
    single = (config.kind == "ff" and X.ndim in (1, 2) and X.size == config.input_dim) or (config.kind == "lstm" and X.ndim == 2)
    if single:
        X = X.reshape(1, *X.shape) if config.kind == "lstm" else X.reshape(1, -1)
    probs = softmax(logits(params, config, X))
    return probs[0] if single else probs


def l2_penalty(params: Params, config: NetworkConfig) -> float:
    return config.l2 * sum(float(np.sum(a * a)) for n, a in zip(params.names, params.arrays) if is_weight(n))


def _forward_train(params, config, X, masks):
    if X.shape[0] == 0:
        raise NetworkError("empty batch")
    if config.kind == "ff":
        return _ff_forward(params, config, X, masks)
    return _lstm_forward(params, config, X, masks)


def _objective(params, config, out, y):
    probs = softmax(out)
    ce = -np.mean(np.log(np.maximum(probs[np.arange(len(y)), y], 1e-300)))
    value = ce + l2_penalty(params, config)
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss {value}")
    return float(value), probs


def loss(params: Params, config: NetworkConfig, X: np.ndarray, y: np.ndarray, masks: list[np.ndarray] | None = None) -> float:
    """The training objective of :func:`loss_and_gradients` without the backward pass."""
    X = prepare_input(config, np.asarray(X, dtype=np.float64))
    out, _ = _forward_train(params, config, X, masks)
    return _objective(params, config, out, np.asarray(y, dtype=np.int64))[0]


def loss_and_gradients(
    params: Params,
    config: NetworkConfig,
    X: np.ndarray,
    y: np.ndarray,
    masks: list[np.ndarray] | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy plus ``l2 * sum(w**2)`` over weight matrices, and its
    exact gradient for the given dropout masks (``None`` = no dropout)."""
    X = prepare_input(config, np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    out, cache = _forward_train(params, config, X, masks)
    value, probs = _objective(params, config, out, y)
    B = X.shape[0]
    rows = np.arange(B)
    dlogits = probs.copy()
    dlogits[rows, y] -= 1.0
    dlogits /= B
    if config.kind == "ff":
        grads = _ff_backward(params, config, cache, dlogits, masks)
    else:
        grads = _lstm_backward(params, config, cache, dlogits, masks)
    if config.l2:
        for idx, name in enumerate(params.names):
            if is_weight(name):
                grads[idx] = grads[idx] + 2.0 * config.l2 * params.arrays[idx]
    return value, grads
