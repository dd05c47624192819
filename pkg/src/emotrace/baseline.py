"""Ordinary least squares trend lines of valence and arousal against time."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .annotations import AnnotationTrack
from .models import WINDOW_LENGTH, make_windows

CHANNELS = ("valence", "arousal")


@dataclass(frozen=True)
class LinearFit:
    slope: float        # per second
    intercept: float    # value at t = 0 (track start)
    channel: str
    song_id: str = ""
    residual_mse: float = 0.0


def ols_line(t, y) -> tuple[float, float, float]:
    """Closed-form simple regression; returns ``(slope, intercept, residual_mse)``."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("t and y must be 1-D arrays of equal length")
    t_mean = t.mean()
    dt = t - t_mean
    sxx = float(dt @ dt)
    if len(t) < 2 or sxx <= 0.0:
        raise ValueError("need at least two distinct time points")
    y_mean = y.mean()
    slope = float(dt @ (y - y_mean)) / sxx
    intercept = float(y_mean - slope * t_mean)
    resid = y - (slope * t + intercept)
    return slope, intercept, float(np.mean(resid ** 2))


def fit_linear(track: AnnotationTrack) -> tuple[LinearFit, LinearFit]:
    """Fit valence and arousal separately, time in seconds from track start."""
    t = track.relative_times()
    values = track.as_array()
    fits = []
    for k, channel in enumerate(CHANNELS):
        slope, intercept, resid_mse = ols_line(t, values[:, k])
        fits.append(LinearFit(slope, intercept, channel, track.song_id, resid_mse))
    return fits[0], fits[1]


def predict_linear(fit: LinearFit, t, clip: bool = True):
    y = fit.slope * np.asarray(t, dtype=np.float64) + fit.intercept
    if clip:
        y = np.clip(y, -1.0, 1.0)
    return float(y) if np.ndim(y) == 0 else y


@dataclass
class BaselineRow:
    song_id: str
    # predictor -> (valence mse, arousal mse)
    mse: dict[str, tuple[float, float]]

    def combined(self, predictor: str) -> float:
        return float(np.mean(self.mse[predictor]))


def _local_linear_next(window: np.ndarray, step: float) -> np.ndarray:
    n = window.shape[1]
    t = np.arange(n) * step
    out = np.empty(2)
    for k in range(2):
        slope, intercept, _ = ols_line(t, window[k])
        out[k] = slope * n * step + intercept
    return np.clip(out, -1.0, 1.0)


def compare_baseline(tracks, next_point_model=None, length: int = WINDOW_LENGTH) -> list[BaselineRow]:
    """Next-point MSE per track for several predictors.

    ``hold`` repeats the last point, ``linear`` fits a line to the window's
    points and extrapolates one step, ``linear_song`` uses a fit to the whole
    track, and ``lstm`` (when a network is given) is the trained next-point
    model.
    """
    rows = []
    for track in tracks:
        windows = make_windows(track, length)
        if not windows:
            raise ValueError(f"track {track.song_id!r} is shorter than {length + 1} points")
        targets = np.array([w.target.as_tuple() for w in windows])
        inputs = np.stack([w.inputs for w in windows])
        preds = {
            "hold": inputs[:, :, -1],
            "linear": np.array([_local_linear_next(w, track.step) for w in inputs]),
        }
        v_fit, a_fit = fit_linear(track)
        t_next = np.array([(w.start + length) * track.step for w in windows])
        preds["linear_song"] = np.stack([predict_linear(v_fit, t_next), predict_linear(a_fit, t_next)], axis=1)
        if next_point_model is not None:
            preds["lstm"] = np.clip(next_point_model.predict(inputs), -1.0, 1.0)
        mse = {name: tuple(float(x) for x in np.mean((p - targets) ** 2, axis=0))
               for name, p in preds.items()}
        rows.append(BaselineRow(track.song_id, mse))
    return rows


def write_comparison_csv(path_or_file, rows: list[BaselineRow]):
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["song_id", "channel", "predictor", "mse"])
        for row in rows:
            for predictor, values in row.mse.items():
                for channel, value in zip(CHANNELS, values):
                    writer.writerow([row.song_id, channel, predictor, f"{value:.6f}"])
    finally:
        if own:
            fh.close()
