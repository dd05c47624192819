"""A small LSTM regression network written directly against numpy.

Inputs are batches of sequences shaped ``(batch, features, timesteps)``,
matching the ``d x T`` layout of a mel spectrogram or an emotion window.
The network is a chain of stacked LSTM layers (grouped into "modules" only
for bookkeeping) followed by a linear head on the last timestep's hidden
state.  Everything runs in float64.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field

import numpy as np

OUTPUT_SIZE = 2


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


def sigmoid(x):
    # tanh form never overflows, unlike 1 / (1 + exp(-x))
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LstmLayerParams:
    """Weights of one LSTM layer, gate blocks ordered input, forget, cell, output."""

    input_weights: np.ndarray      # (4h, d)
    recurrent_weights: np.ndarray  # (4h, h)
    input_bias: np.ndarray         # (4h,)
    recurrent_bias: np.ndarray     # (4h,)

    @property
    def hidden_size(self) -> int:
        return self.recurrent_weights.shape[1]

    @property
    def input_size(self) -> int:
        return self.input_weights.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [self.input_weights, self.recurrent_weights, self.input_bias, self.recurrent_bias]

    def validate(self):
        h, d = self.hidden_size, self.input_size
        expected = [(4 * h, d), (4 * h, h), (4 * h,), (4 * h,)]
        for arr, shape in zip(self.arrays(), expected):
            if arr.shape != shape:
                raise ShapeError(f"LSTM parameter shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite LSTM parameter")


def lstm_cell_forward(x, h_prev, c_prev, params: LstmLayerParams):
    """Single LSTM step for one vector (or a batch of row vectors)."""
    x, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x, h_prev, c_prev))
    hs = params.hidden_size
    if x.shape[-1] != params.input_size or h_prev.shape[-1] != hs or c_prev.shape[-1] != hs:
        raise ShapeError("cell input does not match layer parameters")
    z = (x @ params.input_weights.T + params.input_bias
         + h_prev @ params.recurrent_weights.T + params.recurrent_bias)
    i = sigmoid(z[..., :hs])
    f = sigmoid(z[..., hs:2 * hs])
    g = np.tanh(z[..., 2 * hs:3 * hs])
    o = sigmoid(z[..., 3 * hs:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] | None = None
    second_moment: list[np.ndarray] | None = None


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if state.first_moment is None:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    if len(grads) != len(params):
        raise ShapeError("gradient list does not match parameter list")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
    return params, state


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > max_norm > 0:
        for g in grads:
            g *= max_norm / total
    return total


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return float(np.mean((pred - target) ** 2))


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]        # per layer, (T, B, d_l) after dropout
    gates: list[np.ndarray]         # per layer, (T, B, 4h) activated
    cells: list[np.ndarray]         # per layer, (T + 1, B, h)
    hiddens: list[np.ndarray]       # per layer, (T + 1, B, h)
    tanh_cells: list[np.ndarray]    # per layer, (T, B, h)
    masks: list[np.ndarray | None]  # per layer output, None where no dropout
    prediction: np.ndarray          # (B, 2)
    params_version: int = 0


@dataclass
class LstmNetwork:
    """Stacked LSTM with a two-value linear head.

    ``module_layers`` lists the number of stacked layers in each module;
    modules are chained, so the total depth is their sum.  ``input_shift`` and
    ``input_scale`` standardize features before the first layer and are not
    trained.
    """

    input_size: int
    hidden_size: int
    module_layers: tuple[int, ...]
    dropout_p: float
    layers: list[LstmLayerParams]
    head_weights: np.ndarray  # (2, h)
    head_bias: np.ndarray     # (2,)
    input_shift: np.ndarray = None
    input_scale: np.ndarray = None
    _version: int = field(default=0, repr=False)

    def __post_init__(self):
        self.module_layers = tuple(int(n) for n in self.module_layers)
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must lie in [0, 1)")
        if sum(self.module_layers) != len(self.layers) or not self.layers:
            raise ShapeError("module layout does not match the number of layers")
        if self.input_shift is None:
            self.input_shift = np.zeros(self.input_size)
        if self.input_scale is None:
            self.input_scale = np.ones(self.input_size)
        d = self.input_size
        for layer in self.layers:
            layer.validate()
            if layer.input_size != d or layer.hidden_size != self.hidden_size:
                raise ShapeError("layer sizes are not chained consistently")
            d = layer.hidden_size
        if self.head_weights.shape != (OUTPUT_SIZE, self.hidden_size) or self.head_bias.shape != (OUTPUT_SIZE,):
            raise ShapeError("head shape does not match hidden size")

    @classmethod
    def initialize(cls, input_size: int, hidden_size: int, module_layers=(2,),
                   dropout_p: float = 0.0, rng: np.random.Generator | None = None):
        """Uniform(-1/sqrt(h), 1/sqrt(h)) weights, forget-gate bias 1, other biases 0."""
        rng = np.random.default_rng(0) if rng is None else rng
        h = hidden_size
        bound = 1.0 / np.sqrt(h)
        layers = []
        d = input_size
        for _ in range(sum(module_layers)):
            b_ih = np.zeros(4 * h)
            b_ih[h:2 * h] = 1.0
            layers.append(LstmLayerParams(
                rng.uniform(-bound, bound, (4 * h, d)),
                rng.uniform(-bound, bound, (4 * h, h)),
                b_ih,
                np.zeros(4 * h)))
            d = h
        head_w = rng.uniform(-bound, bound, (OUTPUT_SIZE, h))
        return cls(input_size, hidden_size, tuple(module_layers), dropout_p, layers,
                   head_w, np.zeros(OUTPUT_SIZE))

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays in declaration order (layers bottom-up, then head)."""
        out = []
        for layer in self.layers:
            out.extend(layer.arrays())
        out.extend([self.head_weights, self.head_bias])
        return out

    def parameter_names(self) -> list[str]:
        names = []
        for k in range(self.n_layers):
            names += [f"layer{k}.input_weights", f"layer{k}.recurrent_weights",
                      f"layer{k}.input_bias", f"layer{k}.recurrent_bias"]
        return names + ["head.weights", "head.bias"]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "LstmNetwork":
        return copy.deepcopy(self)

    def load_parameters(self, values: list[np.ndarray]):
        for dst, src in zip(self.parameters(), values):
            dst[...] = src
        self._version += 1

    def _as_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.input_size or x.shape[2] < 1:
            raise ShapeError(f"expected input (batch, {self.input_size}, T>=1), got {x.shape}")
        return x

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None):
        """Run the stack and head; returns ``(predictions (B, 2), cache)``.

        In train mode inverted dropout is applied to the output sequence of
        every layer except the last, drawing masks from ``rng``.
        """
        x = self._as_batch(x)
        seq = ((x - self.input_shift[None, :, None]) / self.input_scale[None, :, None]).transpose(2, 0, 1)
        T, B, _ = seq.shape
        hs = self.hidden_size
        use_dropout = train and self.dropout_p > 0
        if use_dropout and rng is None:
            raise ValueError("train-mode dropout needs an rng")
        cache = ForwardCache([], [], [], [], [], [], None, self._version)
        for k, layer in enumerate(self.layers):
            cache.inputs.append(seq)
            zx = seq @ layer.input_weights.T + (layer.input_bias + layer.recurrent_bias)
            gates = np.empty((T, B, 4 * hs))
            c = np.zeros((T + 1, B, hs))
            h = np.zeros((T + 1, B, hs))
            tc = np.empty((T, B, hs))
            w_hh_t = layer.recurrent_weights.T
            for t in range(T):
                z = zx[t] + h[t] @ w_hh_t
                gates[t, :, :2 * hs] = sigmoid(z[:, :2 * hs])
                gates[t, :, 2 * hs:3 * hs] = np.tanh(z[:, 2 * hs:3 * hs])
                gates[t, :, 3 * hs:] = sigmoid(z[:, 3 * hs:])
                i, f = gates[t, :, :hs], gates[t, :, hs:2 * hs]
                g, o = gates[t, :, 2 * hs:3 * hs], gates[t, :, 3 * hs:]
                c[t + 1] = f * c[t] + i * g
                tc[t] = np.tanh(c[t + 1])
                h[t + 1] = o * tc[t]
            cache.gates.append(gates)
            cache.cells.append(c)
            cache.hiddens.append(h)
            cache.tanh_cells.append(tc)
            out = h[1:]
            mask = None
            if use_dropout and k < self.n_layers - 1:
                mask = (rng.random(out.shape) >= self.dropout_p) / (1.0 - self.dropout_p)
                out = out * mask
            cache.masks.append(mask)
            seq = out
        top = cache.hiddens[-1][-1]
        cache.prediction = top @ self.head_weights.T + self.head_bias
        return cache.prediction, cache

    def predict(self, x) -> np.ndarray:
        return self.forward(x, train=False)[0]

    def backward(self, cache: ForwardCache, target, loss_scale: float = 1.0) -> list[np.ndarray]:
        """Gradients of ``loss_scale * mse(prediction, target)`` for every parameter."""
        if cache is None or cache.prediction is None:
            raise ValueError("backward needs the cache of a forward pass")
        if cache.params_version != self._version:
            raise ValueError("stale cache: parameters changed since the forward pass")
        target = np.asarray(target, dtype=np.float64).reshape(cache.prediction.shape)
        pred = cache.prediction
        d_pred = loss_scale * 2.0 * (pred - target) / pred.size

        top = cache.hiddens[-1][-1]
        d_head_w = d_pred.T @ top
        d_head_b = d_pred.sum(axis=0)
        T, B, hs = cache.tanh_cells[-1].shape
        d_out = np.zeros((T, B, hs))
        d_out[-1] = d_pred @ self.head_weights

        layer_grads = [None] * self.n_layers
        for k in reversed(range(self.n_layers)):
            layer = self.layers[k]
            if cache.masks[k] is not None:
                d_out = d_out * cache.masks[k]
            gates, c, h, tc = cache.gates[k], cache.cells[k], cache.hiddens[k], cache.tanh_cells[k]
            dz = np.empty((T, B, 4 * hs))
            dh_next = np.zeros((B, hs))
            dc_next = np.zeros((B, hs))
            w_hh = layer.recurrent_weights
            for t in reversed(range(T)):
                i, f = gates[t, :, :hs], gates[t, :, hs:2 * hs]
                g, o = gates[t, :, 2 * hs:3 * hs], gates[t, :, 3 * hs:]
                dh = d_out[t] + dh_next
                dc = dh * o * (1.0 - tc[t] ** 2) + dc_next
                dz[t, :, :hs] = dc * g * i * (1.0 - i)
                dz[t, :, hs:2 * hs] = dc * c[t] * f * (1.0 - f)
                dz[t, :, 2 * hs:3 * hs] = dc * i * (1.0 - g * g)
                dz[t, :, 3 * hs:] = dh * tc[t] * o * (1.0 - o)
                dc_next = dc * f
                dh_next = dz[t] @ w_hh
            flat_dz = dz.reshape(T * B, 4 * hs)
            x_in = cache.inputs[k]
            d_w_ih = flat_dz.T @ x_in.reshape(T * B, -1)
            d_w_hh = flat_dz.T @ h[:-1].reshape(T * B, hs)
            d_b = flat_dz.sum(axis=0)
            layer_grads[k] = [d_w_ih, d_w_hh, d_b, d_b.copy()]
            if k > 0:
                d_out = dz @ layer.input_weights
        grads = [g for lg in layer_grads for g in lg]
        return grads + [d_head_w, d_head_b]

    def loss_and_gradients(self, x, target, train: bool = False, rng=None):
        pred, cache = self.forward(x, train=train, rng=rng)
        target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
        return mse(pred, target), self.backward(cache, target)


def _predict_stacked(network: LstmNetwork, x: np.ndarray, arrays: list[np.ndarray]) -> np.ndarray:
    """Eval-mode forward where every array may carry a leading copy axis.

    ``arrays`` follows ``network.parameters()`` order; each entry is either
    ``(1, *shape)`` or ``(K, *shape)``.  Returns predictions ``(K, B, 2)``.
    """
    x = network._as_batch(x)
    seq = ((x - network.input_shift[None, :, None]) / network.input_scale[None, :, None])
    seq = seq.transpose(2, 0, 1)[None]  # (1, T, B, d)
    T, B = seq.shape[1], seq.shape[2]
    hs = network.hidden_size
    for k in range(network.n_layers):
        w_ih, w_hh, b_ih, b_hh = arrays[4 * k:4 * k + 4]
        zx = seq @ w_ih.swapaxes(-1, -2)[:, None] + (b_ih + b_hh)[:, None, None, :]
        n_copies = max(zx.shape[0], w_hh.shape[0])
        h = np.zeros((n_copies, B, hs))
        c = np.zeros((n_copies, B, hs))
        outs = np.empty((n_copies, T, B, hs))
        w_hh_t = w_hh.swapaxes(-1, -2)
        for t in range(T):
            z = zx[:, t] + h @ w_hh_t
            i = sigmoid(z[..., :hs])
            f = sigmoid(z[..., hs:2 * hs])
            g = np.tanh(z[..., 2 * hs:3 * hs])
            o = sigmoid(z[..., 3 * hs:])
            c = f * c + i * g
            h = o * np.tanh(c)
            outs[:, t] = h
        seq = outs
    head_w, head_b = arrays[-2:]
    return seq[:, -1] @ head_w.swapaxes(-1, -2) + head_b[:, None, :]


def gradient_check(network: LstmNetwork, x, target, fd_step: float = 1e-5,
                   only: tuple[str, ...] | None = None, chunk: int = 256) -> float:
    """Largest relative error between backprop and central differences.

    The error for each scalar parameter is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)``.  ``only``
    restricts the check to parameter names starting with one of the given
    prefixes (e.g. ``("head.",)``).  The loss is evaluated in eval mode, so
    dropout plays no part.
    """
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    target = np.asarray(target, dtype=np.float64).reshape(-1, OUTPUT_SIZE)
    _, analytic = network.loss_and_gradients(x, target, train=False)
    base = [p[None] for p in network.parameters()]
    worst = 0.0
    for idx, (name, param, grad) in enumerate(zip(network.parameter_names(), network.parameters(), analytic)):
        if only is not None and not name.startswith(only):
            continue
        gflat = grad.reshape(-1)
        for lo in range(0, param.size, chunk):
            hi = min(param.size, lo + chunk)
            n = hi - lo
            stacked = np.repeat(param[None], 2 * n, axis=0).reshape(2 * n, -1)
            rows = np.arange(n)
            stacked[rows, lo + rows] += fd_step
            stacked[n + rows, lo + rows] -= fd_step
            arrays = list(base)
            arrays[idx] = stacked.reshape((2 * n,) + param.shape)
            pred = _predict_stacked(network, x, arrays)
            up, down = pred[:n], pred[n:]
            # (up-y)^2 - (down-y)^2 factored to avoid cancelling two O(1) losses
            numeric = np.mean((up - down) * (up + down - 2 * target), axis=(1, 2)) / (2 * fd_step)
            a = gflat[lo:hi]
            denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-12)
            worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    return worst


TASK_TAGS = {"emotion": 0, "next": 1}
CHECKPOINT_MAGIC = b"LSTM"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIBIII")


def save_checkpoint(path, network: LstmNetwork, task: str):
    """Write the network in the versioned little-endian checkpoint layout.

    Header: magic, version u32, task tag u8, hidden u32, input size u32,
    module count u32, per-module layer counts u32, dropout f64.  Body: input
    shift and scale, then every trainable array in declaration order, all f64.
    """
    if task not in TASK_TAGS:
        raise CheckpointError(f"unknown task {task!r}")
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, TASK_TAGS[task],
                                   network.hidden_size, network.input_size, len(network.module_layers)))
        fh.write(struct.pack(f"<{len(network.module_layers)}I", *network.module_layers))
        fh.write(struct.pack("<d", network.dropout_p))
        for arr in [network.input_shift, network.input_scale] + network.parameters():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[LstmNetwork, str]:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        magic, version, tag, hidden, input_size, n_modules = _CKPT_HEADER.unpack_from(raw)
    except struct.error:
        raise CheckpointError(f"{path}: truncated checkpoint header") from None
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    tasks = {v: k for k, v in TASK_TAGS.items()}
    if tag not in tasks:
        raise CheckpointError(f"{path}: unknown task tag {tag}")
    offset = _CKPT_HEADER.size
    try:
        module_layers = struct.unpack_from(f"<{n_modules}I", raw, offset)
        offset += 4 * n_modules
        (dropout_p,) = struct.unpack_from("<d", raw, offset)
        offset += 8
    except struct.error:
        raise CheckpointError(f"{path}: truncated checkpoint header") from None
    net = LstmNetwork.initialize(input_size, hidden, module_layers, dropout_p)
    arrays = [net.input_shift, net.input_scale] + net.parameters()
    expected = sum(a.size for a in arrays) * 8
    if len(raw) - offset != expected:
        raise CheckpointError(f"{path}: expected {expected} parameter bytes, found {len(raw) - offset}")
    for arr in arrays:
        n = arr.size
        arr[...] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(arr.shape)
        offset += 8 * n
    return net, tasks[tag]
