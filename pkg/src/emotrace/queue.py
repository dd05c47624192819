"""Emotion-aware queuing: pick the clip that best continues a trajectory."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .annotations import AnnotationTrack
from .circumplex import EmotionPoint, clamp, distance
from .models import WINDOW_LENGTH, predict_emotion, predict_next


class QueueError(ValueError):
    pass


@dataclass(frozen=True)
class Candidate:
    clip_id: str
    opening: EmotionPoint


@dataclass(frozen=True)
class QueuePolicy:
    tolerance: float = 0.1
    opening_window_k: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.tolerance < 0:
            raise QueueError("tolerance must be >= 0")
        if self.opening_window_k < 1:
            raise QueueError("opening_window_k must be >= 1")


@dataclass(frozen=True)
class Selection:
    clip_id: str
    predicted: EmotionPoint
    distance: float


def opening_emotion(track: AnnotationTrack, k: int = 4) -> EmotionPoint:
    if k < 1 or len(track) < k:
        raise QueueError(f"track {track.song_id!r} has fewer than {k} points")
    v, a = track.as_array()[:k].mean(axis=0)
    return clamp(v, a)


def opening_from_features(network, features: np.ndarray, k: int = 4) -> EmotionPoint:
    """Opening emotion of an unlabeled clip from emotion-model predictions."""
    if len(features) < k:
        raise QueueError(f"need {k} clips of features, got {len(features)}")
    points = np.array([predict_emotion(network, f).as_tuple() for f in features[:k]])
    v, a = points.mean(axis=0)
    return clamp(v, a)


def _predict(predictor, history: np.ndarray) -> EmotionPoint:
    if hasattr(predictor, "predict"):
        return predict_next(predictor, history)
    p = predictor(history)
    return p if isinstance(p, EmotionPoint) else clamp(*p)


def select_next(history, predictor, candidates: list[Candidate], policy: QueuePolicy = QueuePolicy(),
                rng: np.random.Generator | None = None) -> Selection:
    """Choose the next clip from ``candidates``.

    The predictor (a next-point network or any callable on the 2 x 10
    history) proposes where the trajectory goes next.  Every candidate whose
    opening lies within ``tolerance`` of the closest one is eligible; one is
    drawn uniformly from that pool.  With zero tolerance the closest
    candidate wins outright, ties going to the smallest ``clip_id``.
    """
    if not candidates:
        raise QueueError("no candidates to choose from")
    history = np.asarray(history, dtype=np.float64)
    predicted = _predict(predictor, history)
    dists = [distance(c.opening, predicted) for c in candidates]
    d_min = min(dists)
    pool = sorted((c.clip_id, d) for c, d in zip(candidates, dists) if d <= d_min + policy.tolerance)
    if policy.tolerance == 0 or len(pool) == 1:
        clip_id, d = pool[0]
    else:
        rng = np.random.default_rng(policy.seed) if rng is None else rng
        clip_id, d = pool[int(rng.integers(len(pool)))]
    return Selection(clip_id, predicted, d)


def hold_predictor(history: np.ndarray) -> EmotionPoint:
    return clamp(history[0, -1], history[1, -1])


def run_queue(history, predictor, candidates: list[Candidate], policy: QueuePolicy = QueuePolicy(),
              steps: int = 1) -> list[tuple[int, Selection]]:
    """Queue ``steps`` clips without repeats, extending the history each time.

    After each pick the chosen clip's opening emotion is appended to the
    history, so later predictions follow the queue as it is built.
    """
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[0] != 2 or history.shape[1] < WINDOW_LENGTH:
        raise QueueError(f"history must be 2 x n with n >= {WINDOW_LENGTH}")
    history = history[:, -WINDOW_LENGTH:]
    remaining = list(candidates)
    rng = np.random.default_rng(policy.seed)
    trace = []
    for step in range(1, steps + 1):
        if not remaining:
            break
        sel = select_next(history, predictor, remaining, policy, rng)
        chosen = next(c for c in remaining if c.clip_id == sel.clip_id)
        remaining.remove(chosen)
        history = np.concatenate([history[:, 1:], np.array(chosen.opening.as_tuple())[:, None]], axis=1)
        trace.append((step, sel))
    return trace


def write_trace_csv(fh, trace):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["step", "chosen_id", "pred_valence", "pred_arousal", "distance"])
    for step, sel in trace:
        writer.writerow([step, sel.clip_id, f"{sel.predicted.valence:.6f}",
                         f"{sel.predicted.arousal:.6f}", f"{sel.distance:.6f}"])


def load_library(path, emotion_network=None, k: int = 4,
                 dsp_config: dsp.DspConfig = dsp.DspConfig()) -> list[Candidate]:
    """Read a candidate manifest.

    Either ``clip_id,valence,arousal`` (annotated openings) or
    ``clip_id,path`` (WAV files, scored by ``emotion_network``).  Relative
    paths resolve against the manifest's directory.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        rows = list(reader)
    if fields[:3] == ["clip_id", "valence", "arousal"]:
        try:
            return [Candidate(r["clip_id"], clamp(float(r["valence"]), float(r["arousal"]))) for r in rows]
        except ValueError as exc:
            raise QueueError(f"{path}: bad manifest value ({exc})") from None
    if fields[:2] == ["clip_id", "path"]:
        if emotion_network is None:
            raise QueueError(f"{path}: audio manifest needs an emotion model checkpoint")
        out = []
        for r in rows:
            wav = Path(r["path"])
            if not wav.is_absolute():
                wav = path.parent / wav
            features = dsp.extract_song(dsp.load_wav(wav, dsp_config.sample_rate), dsp_config)
            out.append(Candidate(r["clip_id"], opening_from_features(emotion_network, features, k)))
        return out
    raise QueueError(f"{path}: header must be clip_id,valence,arousal or clip_id,path")


def read_history_csv(path) -> np.ndarray:
    """History file with ``valence,arousal`` columns, oldest first; returns 2 x n."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"valence", "arousal"} <= set(reader.fieldnames):
            raise QueueError(f"{path}: need valence and arousal columns")
        try:
            rows = [(float(r["valence"]), float(r["arousal"])) for r in reader]
        except ValueError as exc:
            raise QueueError(f"{path}: bad history value ({exc})") from None
    if not rows:
        raise QueueError(f"{path}: empty history")
    return np.clip(np.array(rows, dtype=np.float64).T, -1.0, 1.0)
