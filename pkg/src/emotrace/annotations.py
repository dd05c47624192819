"""Emotion annotation tracks: EmoMusic import, canonical CSV, datasets, synthetic data."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .circumplex import EmotionPoint, clamp

log = logging.getLogger(__name__)

ANNOTATION_RATE_HZ = 2.0
DEFAULT_START_TIME = 15.0


class AnnotationError(ValueError):
    pass


class ScaleViolation(AnnotationError):
    pass


@dataclass
class AnnotationTrack:
    song_id: str
    points: list[EmotionPoint]
    start_time: float = DEFAULT_START_TIME
    rate: float = ANNOTATION_RATE_HZ
    stds: list[tuple[float, float]] | None = None

    def __post_init__(self):
        if not self.points:
            raise AnnotationError(f"track {self.song_id!r} has no points")
        if self.stds is not None:
            if len(self.stds) != len(self.points):
                raise AnnotationError(f"track {self.song_id!r}: stds length differs from points")
            if any(s < 0 for pair in self.stds for s in pair):
                raise AnnotationError(f"track {self.song_id!r}: negative standard deviation")

    def __len__(self):
        return len(self.points)

    @property
    def step(self) -> float:
        return 1.0 / self.rate

    def times(self) -> np.ndarray:
        """Absolute annotation times in seconds."""
        return self.start_time + np.arange(len(self.points)) * self.step

    def relative_times(self) -> np.ndarray:
        return np.arange(len(self.points)) * self.step

    def as_array(self) -> np.ndarray:
        """``(n, 2)`` array of (valence, arousal) rows."""
        return np.array([p.as_tuple() for p in self.points], dtype=np.float64)


@dataclass
class LabeledClip:
    song_id: str
    index: int
    features: np.ndarray
    target: EmotionPoint


@dataclass(frozen=True)
class SongDataset:
    songs: dict[str, list[LabeledClip]]
    train_ids: frozenset = frozenset()
    validation_ids: frozenset = frozenset()

    def __post_init__(self):
        if self.train_ids & self.validation_ids:
            raise AnnotationError("train and validation song sets overlap")

    def subset(self, ids) -> dict[str, list[LabeledClip]]:
        return {sid: self.songs[sid] for sid in sorted(ids)}

    @property
    def train(self):
        return self.subset(self.train_ids)

    @property
    def validation(self):
        return self.subset(self.validation_ids)


def _read_wide(path) -> tuple[list[str], dict[str, list[float]]]:
    rows: dict[str, list[float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise AnnotationError(f"{path}: empty file") from None
        if len(header) < 2:
            raise AnnotationError(f"{path}: need a song_id column and at least one value column")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            # some distributed files leave trailing cells blank on short songs
            while row and not row[-1].strip():
                row.pop()
            if len(row) > len(header):
                raise AnnotationError(f"{path}:{lineno}: more cells than header columns")
            song_id = row[0].strip()
            if song_id in rows:
                raise AnnotationError(f"{path}:{lineno}: duplicate song id {song_id!r}")
            try:
                rows[song_id] = [float(cell) for cell in row[1:]]
            except ValueError as exc:
                raise AnnotationError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
    return header, rows


def _check_scale(values: dict[str, list[float]], path, strict: bool, scale: float | None):
    worst = max((abs(x) for vals in values.values() for x in vals), default=0.0)
    if worst <= 1.0:
        return values
    if strict:
        raise ScaleViolation(f"{path}: value {worst} outside [-1, 1]")
    if scale is None or scale <= 0:
        raise ScaleViolation(f"{path}: value {worst} outside [-1, 1] and no positive scale given")
    return {k: [min(1.0, max(-1.0, x / scale)) for x in v] for k, v in values.items()}


def load_emomusic(arousal_csv, valence_csv, arousal_std_csv=None, valence_std_csv=None,
                  strict: bool = True, scale: float | None = None,
                  start_time: float = DEFAULT_START_TIME) -> list[AnnotationTrack]:
    """Load paired wide-format EmoMusic files into tracks.

    Each file has a header row and one row per song: the song id followed by
    values at 2 Hz starting at ``start_time``.  Songs must appear in both
    files with the same number of values.  With ``strict`` any value outside
    [-1, 1] raises :class:`ScaleViolation`; otherwise every value is divided
    by ``scale`` and clamped.
    """
    a_header, arousal = _read_wide(arousal_csv)
    v_header, valence = _read_wide(valence_csv)
    if len(a_header) != len(v_header):
        raise AnnotationError(
            f"column count mismatch: {len(a_header)} arousal vs {len(v_header)} valence")
    only = set(arousal) ^ set(valence)
    if only:
        raise AnnotationError(f"songs present in only one file: {sorted(only)}")
    arousal = _check_scale(arousal, arousal_csv, strict, scale)
    valence = _check_scale(valence, valence_csv, strict, scale)

    a_std = _read_wide(arousal_std_csv)[1] if arousal_std_csv else None
    v_std = _read_wide(valence_std_csv)[1] if valence_std_csv else None
    if (a_std is None) != (v_std is None):
        raise AnnotationError("standard deviation files must be given as a pair")

    tracks = []
    for song_id in arousal:
        a, v = arousal[song_id], valence[song_id]
        if len(a) != len(v):
            raise AnnotationError(f"song {song_id!r}: {len(a)} arousal vs {len(v)} valence values")
        if not a:
            raise AnnotationError(f"song {song_id!r}: no annotation values")
        stds = None
        if a_std is not None:
            sa, sv = a_std.get(song_id), v_std.get(song_id)
            if sa is None or sv is None or len(sa) != len(a) or len(sv) != len(a):
                raise AnnotationError(f"song {song_id!r}: standard deviations missing or misaligned")
            stds = list(zip(sv, sa))
        points = [EmotionPoint(vv, aa) for vv, aa in zip(v, a)]
        tracks.append(AnnotationTrack(song_id, points, start_time=start_time, stds=stds))
    return tracks


LONG_HEADER = ["song_id", "time_s", "valence", "arousal"]
LONG_STD_HEADER = LONG_HEADER + ["valence_std", "arousal_std"]


def write_long_csv(path, tracks: list[AnnotationTrack]):
    with_std = any(t.stds is not None for t in tracks)
    if with_std and not all(t.stds is not None for t in tracks):
        raise AnnotationError("either all tracks or none must carry standard deviations")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LONG_STD_HEADER if with_std else LONG_HEADER)
        for track in tracks:
            for i, (t, p) in enumerate(zip(track.times(), track.points)):
                row = [track.song_id, f"{t:.6f}", f"{p.valence:.6f}", f"{p.arousal:.6f}"]
                if with_std:
                    row += [f"{s:.6f}" for s in track.stds[i]]
                writer.writerow(row)


def read_long_csv(path, rate: float = ANNOTATION_RATE_HZ) -> list[AnnotationTrack]:
    grouped: dict[str, list[list[float]]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:4] != LONG_HEADER:
            raise AnnotationError(f"{path}: expected header starting {','.join(LONG_HEADER)}")
        with_std = reader.fieldnames == LONG_STD_HEADER
        for lineno, row in enumerate(reader, start=2):
            try:
                vals = [float(row["time_s"]), float(row["valence"]), float(row["arousal"])]
                if with_std:
                    vals += [float(row["valence_std"]), float(row["arousal_std"])]
            except (TypeError, ValueError) as exc:
                raise AnnotationError(f"{path}:{lineno}: bad row ({exc})") from None
            grouped[row["song_id"]].append(vals)
    tracks = []
    for song_id, rows in grouped.items():
        rows.sort(key=lambda r: r[0])
        points = [clamp(r[1], r[2]) for r in rows]
        stds = [(r[3], r[4]) for r in rows] if with_std else None
        tracks.append(AnnotationTrack(song_id, points, start_time=rows[0][0], rate=rate, stds=stds))
    return tracks


def join_clips(clips, track: AnnotationTrack) -> list[LabeledClip]:
    """Pair clip ``i`` of a song with annotation point ``i``.

    ``clips`` is a sequence of feature matrices (or MelSpectrogram objects)
    already aligned to the track's start time.  Surplus clips or points are
    dropped with a warning.
    """
    clips = list(clips)
    if not clips:
        raise AnnotationError(f"song {track.song_id!r}: no clips to join")
    if len(clips) != len(track.points):
        log.warning("song %s: %d clips vs %d annotation points; keeping %d",
                    track.song_id, len(clips), len(track.points),
                    min(len(clips), len(track.points)))
    out = []
    for i, (clip, point) in enumerate(zip(clips, track.points)):
        features = getattr(clip, "values", clip)
        out.append(LabeledClip(track.song_id, i, np.asarray(features, dtype=np.float64), point))
    return out


def split_ids(ids, validation_fraction: float, seed: int) -> tuple[list[str], list[str]]:
    ids = sorted(ids)
    if not 0 < validation_fraction < 1:
        raise AnnotationError("validation_fraction must lie in (0, 1)")
    if len(ids) < 2:
        raise AnnotationError("need at least two songs to split")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_val = min(len(ids) - 1, math.ceil(validation_fraction * len(ids)))
    val = sorted(ids[i] for i in order[:n_val])
    train = sorted(ids[i] for i in order[n_val:])
    return train, val


def split_by_song(dataset: SongDataset, validation_fraction: float = 0.2, seed: int = 0) -> SongDataset:
    train, val = split_ids(dataset.songs, validation_fraction, seed)
    return SongDataset(dataset.songs, frozenset(train), frozenset(val))


SYNTH_KINDS = ("constant", "linear", "sine", "piecewise")


def synth_tracks(n_songs: int, length: int, kind: str = "linear", noise_sigma: float = 0.0,
                 seed: int = 0, slope: float | None = None) -> list[AnnotationTrack]:
    """Generate clamped synthetic emotion trajectories at 2 Hz.

    ``slope`` (per second) fixes the rate of the linear family; by default
    each song draws its own slope so that it stays within the circumplex.
    """
    if kind not in SYNTH_KINDS:
        raise AnnotationError(f"unknown track kind {kind!r}; choose from {', '.join(SYNTH_KINDS)}")
    if n_songs < 1 or length < 11:
        raise AnnotationError("need n_songs >= 1 and length >= 11")
    rng = np.random.default_rng(seed)
    t = np.arange(length) / ANNOTATION_RATE_HZ
    span = t[-1]
    tracks = []
    for k in range(n_songs):
        start = rng.uniform(-0.8, 0.8, size=2)
        if kind == "constant":
            curve = np.tile(start, (length, 1))
        elif kind == "linear":
            if slope is None:
                end = rng.uniform(-0.8, 0.8, size=2)
                rate = (end - start) / span
            else:
                rate = np.array([slope, slope])
            curve = start + t[:, None] * rate
        elif kind == "sine":
            amp = rng.uniform(0.05, 0.3, size=2)
            period = rng.uniform(5.0, 20.0, size=2)
            phase = rng.uniform(0, 2 * np.pi, size=2)
            curve = start * 0.7 + amp * np.sin(2 * np.pi * t[:, None] / period + phase)
        else:
            n_seg = int(rng.integers(2, 5))
            cuts = np.sort(rng.choice(np.arange(1, length), size=n_seg - 1, replace=False))
            levels = rng.uniform(-0.8, 0.8, size=(n_seg, 2))
            curve = levels[np.searchsorted(cuts, np.arange(length), side="right")]
        if noise_sigma > 0:
            curve = curve + rng.normal(0.0, noise_sigma, size=curve.shape)
        curve = np.clip(curve, -1.0, 1.0)
        points = [EmotionPoint(float(v), float(a)) for v, a in curve]
        tracks.append(AnnotationTrack(f"{kind}_{k:04d}", points))
    return tracks
