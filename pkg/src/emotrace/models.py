"""Task assembly, training with early stopping, and evaluation.

Two tasks share one network type:

* ``emotion`` maps a 128 x 44 log-mel clip to (valence, arousal); batches
  are whole songs.
* ``next`` maps a 2 x 10 window of past emotion points to the next point;
  windows are shuffled into fixed-size batches.

Datasets are passed around as ``{song_id: (X, Y)}`` with ``X`` shaped
``(n, features, T)`` and ``Y`` shaped ``(n, 2)``.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import dsp
from .annotations import AnnotationTrack, LabeledClip
from .circumplex import EmotionPoint, clamp
from .nn import AdamState, LstmNetwork, ShapeError, adam_step, clip_grad_norm

WINDOW_LENGTH = 10
TASKS = ("emotion", "next")


class Diverged(RuntimeError):
    def __init__(self, epoch: int, what: str = "loss"):
        super().__init__(f"training diverged at epoch {epoch}: non-finite {what}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    task: str = "emotion"
    learning_rate: float = 5e-5
    hidden_size: int = 20
    n_modules: int = 2
    layers_per_module: int = 2
    dropout_p: float = 0.1
    max_epochs: int = 200
    batch_size: int | None = None  # None: one batch per song
    early_stop_patience: int = 10
    early_stop_min_delta: float = 1e-5
    seed: int = 0
    noise_sigma: float = 0.1
    grad_clip: float | None = None
    standardize_inputs: bool = True
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.hidden_size < 1 or self.n_modules < 1 or self.layers_per_module < 1:
            raise ValueError("hidden_size, n_modules and layers_per_module must be >= 1")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("max_epochs and early_stop_patience must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def total_layers(self) -> int:
        return self.n_modules * self.layers_per_module

    @property
    def input_size(self) -> int:
        return dsp.DspConfig().n_mels if self.task == "emotion" else 2

    def build_network(self, input_size: int | None = None) -> LstmNetwork:
        rng = np.random.default_rng(self.seed)
        return LstmNetwork.initialize(input_size or self.input_size, self.hidden_size,
                                      (self.layers_per_module,) * self.n_modules,
                                      self.dropout_p, rng)


def build_task1_default(**overrides) -> tuple[LstmNetwork, TrainConfig]:
    config = replace(TrainConfig(task="emotion"), **overrides)
    return config.build_network(), config


def build_task2_default(**overrides) -> tuple[LstmNetwork, TrainConfig]:
    config = replace(TrainConfig(
        task="next", learning_rate=1e-4, hidden_size=32, n_modules=1, layers_per_module=2,
        dropout_p=0.0, max_epochs=10, batch_size=64, noise_sigma=0.0,
        standardize_inputs=False), **overrides)
    return config.build_network(), config


@dataclass
class Window:
    inputs: np.ndarray  # (2, 10): valence row, arousal row
    target: EmotionPoint
    song_id: str = ""
    start: int = 0


def make_windows(track: AnnotationTrack, length: int = WINDOW_LENGTH) -> list[Window]:
    values = track.as_array()
    out = []
    for i in range(len(values) - length):
        out.append(Window(values[i:i + length].T.copy(), track.points[i + length], track.song_id, i))
    return out


def windows_to_arrays(windows) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    grouped: dict[str, list[Window]] = {}
    for w in windows:
        grouped.setdefault(w.song_id, []).append(w)
    return {sid: (np.stack([w.inputs for w in ws]),
                  np.array([w.target.as_tuple() for w in ws]))
            for sid, ws in grouped.items()}


def tracks_to_arrays(tracks, length: int = WINDOW_LENGTH) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    data = {}
    for track in tracks:
        windows = make_windows(track, length)
        if windows:
            data.update(windows_to_arrays(windows))
    return data


def clips_to_arrays(songs: dict[str, list[LabeledClip]]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    return {sid: (np.stack([c.features for c in clips]),
                  np.array([c.target.as_tuple() for c in clips]))
            for sid, clips in songs.items() if clips}


def synth_emotion_data(tracks, n_mels: int = 128, n_frames: int = 44, noise: float = 1.0,
                       seed: int = 0) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Fake log-mel clips whose content encodes each annotation point.

    Every clip is a fixed dB floor plus two random spectral patterns weighted
    by the clip's valence and arousal, plus Gaussian noise.  Only useful for
    exercising the emotion pipeline without the real dataset.
    """
    rng = np.random.default_rng(seed)
    pattern_v = rng.normal(0.0, 1.0, (n_mels, n_frames))
    pattern_a = rng.normal(0.0, 1.0, (n_mels, n_frames))
    data = {}
    for track in tracks:
        Y = track.as_array()
        X = (-40.0 + 10.0 * (Y[:, 0, None, None] * pattern_v + Y[:, 1, None, None] * pattern_a)
             + rng.normal(0.0, noise, (len(Y), n_mels, n_frames)))
        data[track.song_id] = (X, Y)
    return data


@dataclass
class TrainReport:
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    seconds: float = 0.0

    @property
    def final_train_mse(self) -> float:
        return self.train_mse[self.best_epoch - 1]

    @property
    def final_val_mse(self) -> float:
        return self.val_mse[self.best_epoch - 1]

    @property
    def final_train_rmse(self) -> float:
        return math.sqrt(self.final_train_mse)

    @property
    def final_val_rmse(self) -> float:
        return math.sqrt(self.final_val_mse)

    def summary(self) -> str:
        return (f"epochs run: {self.stopped_epoch} (best {self.best_epoch})\n"
                f"train MSE {self.final_train_mse:.4f}  RMSE {self.final_train_rmse:.4f}\n"
                f"val   MSE {self.final_val_mse:.4f}  RMSE {self.final_val_rmse:.4f}")


def write_loss_csv(path, report: TrainReport):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_mse", "val_mse"])
        for epoch, (tr, va) in enumerate(zip(report.train_mse, report.val_mse), start=1):
            writer.writerow([epoch, repr(tr), repr(va)])


def fit_input_scaler(network: LstmNetwork, data):
    """Per-feature standardization from training inputs (over clips and frames)."""
    X = np.concatenate([x for x, _ in data.values()])
    mean = X.mean(axis=(0, 2))
    std = X.std(axis=(0, 2))
    network.input_shift = mean
    network.input_scale = np.where(std > 1e-8, std, 1.0)


def iter_batches(data, config: TrainConfig, rng: np.random.Generator):
    """Yield ``(X, Y)`` training batches for one epoch.

    Per-song mode visits songs in a shuffled order, one batch each.  Fixed
    batch mode pools all samples and shuffles them into ``batch_size`` chunks.
    """
    ids = sorted(data)
    if config.batch_size is None:
        for k in rng.permutation(len(ids)):
            yield data[ids[k]]
        return
    X = np.concatenate([data[sid][0] for sid in ids])
    Y = np.concatenate([data[sid][1] for sid in ids])
    order = rng.permutation(len(X))
    for lo in range(0, len(X), config.batch_size):
        sel = order[lo:lo + config.batch_size]
        yield X[sel], Y[sel]


@dataclass
class EvalResult:
    mse: float
    rmse: float
    per_song: dict[str, float]
    n_samples: int

    def summary(self) -> str:
        return f"MSE {self.mse:.4f}  RMSE {self.rmse:.4f}  ({self.n_samples} samples)"


def evaluate(network: LstmNetwork, data, batch_size: int = 512) -> EvalResult:
    """Eval-mode MSE (averaged over samples and both outputs) and RMSE."""
    if not data or not any(len(y) for _, y in data.values()):
        raise ValueError("evaluation set is empty")
    total = 0.0
    count = 0
    per_song = {}
    for sid in sorted(data):
        X, Y = data[sid]
        sq = 0.0
        for lo in range(0, len(X), batch_size):
            pred = network.predict(X[lo:lo + batch_size])
            sq += float(np.sum((pred - Y[lo:lo + batch_size]) ** 2))
        per_song[sid] = sq / Y.size
        total += sq
        count += Y.size
    value = total / count
    return EvalResult(value, math.sqrt(value), per_song, count // 2)


class EarlyStopping:
    """Patience rule on a validation loss sequence.

    An epoch improves only if it beats the best loss so far by more than
    ``min_delta``; ``patience`` non-improving epochs in a row end training.
    """

    def __init__(self, patience: int = 10, min_delta: float = 1e-5):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.stale = 0
        self.epoch = 0

    def update(self, loss: float) -> bool:
        """Record one epoch's loss; returns True if it is the new best."""
        self.epoch += 1
        if loss < self.best - self.min_delta:
            self.best = loss
            self.best_epoch = self.epoch
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


def train(network: LstmNetwork, train_data, val_data, config: TrainConfig):
    """Train ``network`` in place; returns ``(network, TrainReport)``.

    Early stopping watches validation MSE: the epoch counts as an improvement
    only when it beats the best value so far by more than ``early_stop_min_delta``.
    After ``early_stop_patience`` epochs without one, training stops and the
    parameters of the best epoch are restored.
    """
    if not train_data or not val_data:
        raise ValueError("train and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    if config.standardize_inputs:
        fit_input_scaler(network, train_data)
    state = AdamState(learning_rate=config.learning_rate)
    params = network.parameters()
    report = TrainReport()
    stopper = EarlyStopping(config.early_stop_patience, config.early_stop_min_delta)
    best_params = [p.copy() for p in params]
    t0 = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        sq_sum = 0.0
        n = 0
        for X, Y in iter_batches(train_data, config, rng):
            if config.noise_sigma > 0 and config.task == "emotion":
                X = X + rng.normal(0.0, config.noise_sigma, size=X.shape)
            pred, cache = network.forward(X, train=True, rng=rng)
            with np.errstate(over="ignore", invalid="ignore"):
                loss = float(np.mean((pred - Y) ** 2))
            if not math.isfinite(loss):
                raise Diverged(epoch)
            grads = network.backward(cache, Y)
            if config.grad_clip:
                clip_grad_norm(grads, config.grad_clip)
            adam_step(params, grads, state)
            sq_sum += loss * Y.size
            n += Y.size
        train_mse = sq_sum / n
        val_mse = evaluate(network, val_data).mse
        if not math.isfinite(val_mse):
            raise Diverged(epoch, "validation loss")
        report.train_mse.append(train_mse)
        report.val_mse.append(val_mse)
        report.stopped_epoch = epoch
        if stopper.update(val_mse):
            report.best_epoch = epoch
            best_params = [p.copy() for p in params]
        elif stopper.should_stop:
            break
    network.load_parameters(best_params)
    report.seconds = time.perf_counter() - t0
    return network, report


def predict_emotion(network: LstmNetwork, mel, n_frames: int | None = None) -> EmotionPoint:
    values = np.asarray(getattr(mel, "values", mel), dtype=np.float64)
    n_frames = dsp.DspConfig().n_frames() if n_frames is None else n_frames
    if values.shape != (network.input_size, n_frames):
        raise ShapeError(f"expected a ({network.input_size}, {n_frames}) spectrogram, got {values.shape}")
    v, a = network.predict(values)[0]
    return clamp(v, a)


def predict_next(network: LstmNetwork, window) -> EmotionPoint:
    values = np.asarray(getattr(window, "inputs", window), dtype=np.float64)
    if values.shape != (2, WINDOW_LENGTH):
        raise ShapeError(f"expected a (2, {WINDOW_LENGTH}) window, got {values.shape}")
    v, a = network.predict(values)[0]
    return clamp(v, a)
