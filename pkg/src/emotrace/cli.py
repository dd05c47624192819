"""Command-line entry point: ``emotrace <command> [flags]``.

Every command also accepts ``--config FILE`` holding ``key = value`` lines
whose keys are the command's flag names (dashes or underscores); explicit
flags win over the file.  Exit codes: 0 success, 1 I/O or data error,
2 numeric failure, 3 usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import annotations as ann
from . import baseline, dsp, models, nn, queue

log = logging.getLogger("emotrace")

EXIT_OK, EXIT_IO, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _batch_size(text: str):
    if text in ("song", "per-song"):
        return "song"
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("batch size must be >= 1")
    return value


def _add_dsp_flags(p):
    g = p.add_argument_group("feature extraction")
    g.add_argument("--fft-size", type=int, default=2048)
    g.add_argument("--hop-length", type=int, default=512)
    g.add_argument("--n-mels", type=int, default=128)
    g.add_argument("--clip-seconds", type=float, default=0.5)


def _add_data_flags(p, features: bool = True):
    g = p.add_argument_group("data")
    g.add_argument("--annotations", help="canonical long CSV (song_id,time_s,valence,arousal)")
    g.add_argument("--arousal-csv", help="wide EmoMusic arousal file")
    g.add_argument("--valence-csv", help="wide EmoMusic valence file")
    g.add_argument("--lenient-scale", type=float, default=None,
                   help="divide out-of-range wide CSV values by this factor instead of failing")
    g.add_argument("--synthetic", choices=ann.SYNTH_KINDS, help="use generated tracks instead of files")
    g.add_argument("--synthetic-songs", type=int, default=400)
    g.add_argument("--synthetic-length", type=int, default=60)
    g.add_argument("--synthetic-noise", type=float, default=0.01)
    if features:
        g.add_argument("--features", help="directory of <song_id>.melf files (emotion task)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emotrace", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("features", help="extract log-mel feature files from a WAV directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    _add_dsp_flags(p)

    p = sub.add_parser("train", help="train an emotion or next-point model")
    p.add_argument("--task", choices=models.TASKS, required=True)
    _add_data_flags(p)
    h = p.add_argument_group("hyperparameters (defaults follow the task)")
    h.add_argument("--learning-rate", type=float)
    h.add_argument("--hidden-size", type=int)
    h.add_argument("--n-modules", type=int)
    h.add_argument("--layers-per-module", type=int)
    h.add_argument("--dropout", type=float)
    h.add_argument("--max-epochs", type=int)
    h.add_argument("--batch-size", type=_batch_size, help="integer or 'song'")
    h.add_argument("--patience", type=int)
    h.add_argument("--min-delta", type=float)
    h.add_argument("--noise-sigma", type=float)
    h.add_argument("--grad-clip", type=float)
    h.add_argument("--validation-fraction", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", dest="out_dir", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", action="store_true")

    p = sub.add_parser("predict", help="predict emotion for clips or the next point of a history")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav")
    p.add_argument("--features-file")
    p.add_argument("--history")
    p.add_argument("--csv", action="store_true")

    p = sub.add_parser("baseline", help="compare hold, linear and LSTM next-point predictors")
    _add_data_flags(p, features=False)
    p.add_argument("--checkpoint", help="next-point checkpoint to include")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", action="store_true")

    p = sub.add_parser("queue", help="pick the next clips for an emotion history")
    p.add_argument("--history", required=True, help="CSV with valence,arousal columns, oldest first")
    p.add_argument("--library", required=True, help="candidate manifest CSV")
    p.add_argument("--checkpoint", help="next-point checkpoint (default: hold the last point)")
    p.add_argument("--emotion-checkpoint", help="emotion checkpoint for clip_id,path manifests")
    p.add_argument("--tolerance", type=float, default=0.1)
    p.add_argument("--k", type=int, default=4, help="opening window in annotation points")
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", action="store_true")

    p = sub.add_parser("gradcheck", help="compare backprop with central differences")
    p.add_argument("--input-size", type=int, default=4)
    p.add_argument("--hidden-size", type=int, default=8)
    p.add_argument("--n-modules", type=int, default=1)
    p.add_argument("--layers-per-module", type=int, default=2)
    p.add_argument("--timesteps", type=int, default=5)
    p.add_argument("--batch", type=int, default=3)
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", action="store_true")

    for p in sub.choices.values():
        p.add_argument("--config", help="key = value file; flags override its values")
    return parser


def read_config_file(path) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _option_actions(subparser) -> dict[str, argparse.Action]:
    """Map config keys (long flag names, underscored) to their actions."""
    out = {}
    for action in subparser._actions:
        for opt in action.option_strings:
            if opt.startswith("--") and opt not in ("--help", "--config"):
                out[opt[2:].replace("-", "_")] = action
    return out


def _find_config(argv, commands) -> tuple[str | None, str | None]:
    command = next((tok for tok in argv if tok in commands), None)
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return command, argv[i + 1]
        if tok.startswith("--config="):
            return command, tok.split("=", 1)[1]
    return command, None


def _apply_config(parser, argv) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    commands = parser._subparsers._group_actions[0].choices
    command, config_path = _find_config(argv, commands)
    if command is None or config_path is None:
        return parser.parse_args(argv)
    sub = commands[command]
    actions = _option_actions(sub)
    values = read_config_file(config_path)
    unknown = sorted(set(values) - set(actions))
    if unknown:
        valid = ", ".join(sorted(k.replace("_", "-") for k in actions))
        raise UsageError(f"unknown config keys {unknown}; valid keys: {valid}")
    defaults = {}
    for key, text in values.items():
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[action.dest] = text.lower() in ("1", "true", "yes", "on")
            continue
        try:
            value = action.type(text) if action.type else text
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"config key {key}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key}: {value!r} not in {sorted(action.choices)}")
        defaults[action.dest] = value
        # a required flag satisfied by the file must not trip argparse
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _dsp_config(args) -> dsp.DspConfig:
    return dsp.DspConfig(n_mels=args.n_mels, fft_size=args.fft_size,
                         hop_length=args.hop_length, clip_seconds=args.clip_seconds)


def cmd_features(args) -> int:
    config = _dsp_config(args)
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"input directory {in_dir} not found")
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    rows = []
    for wav in sorted(in_dir.glob("*.wav")):
        try:
            features = dsp.extract_song(dsp.load_wav(wav, config.sample_rate), config)
        except (OSError, ValueError) as exc:
            log.error("%s: %s", wav.name, exc)
            failures += 1
            continue
        dsp.write_features(out_dir / f"{wav.stem}.melf", features)
        rows.append((wav.stem, len(features)))
    with open(out_dir / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["song_id", "n_clips"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} feature files to {out_dir}")
    return EXIT_IO if failures else EXIT_OK


def _load_tracks(args) -> list[ann.AnnotationTrack]:
    if args.synthetic:
        return ann.synth_tracks(args.synthetic_songs, args.synthetic_length, args.synthetic,
                                args.synthetic_noise, seed=args.seed)
    if args.annotations:
        return ann.read_long_csv(args.annotations)
    if args.arousal_csv and args.valence_csv:
        return ann.load_emomusic(args.arousal_csv, args.valence_csv,
                                 strict=args.lenient_scale is None, scale=args.lenient_scale)
    raise UsageError("give --annotations, --arousal-csv/--valence-csv, or --synthetic")


def _load_task_data(args, task: str) -> dict:
    tracks = _load_tracks(args)
    if task == "next":
        data = models.tracks_to_arrays(tracks)
        if not data:
            raise ann.AnnotationError(f"no track has more than {models.WINDOW_LENGTH} points")
        return data
    if args.synthetic:
        return models.synth_emotion_data(tracks, seed=args.seed)
    if not args.features:
        raise UsageError("the emotion task needs --features (or --synthetic)")
    feature_dir = Path(args.features)
    songs = {}
    for track in tracks:
        path = feature_dir / f"{track.song_id}.melf"
        if not path.exists():
            log.warning("no features for song %s; skipped", track.song_id)
            continue
        songs[track.song_id] = ann.join_clips(dsp.read_features(path), track)
    data = models.clips_to_arrays(songs)
    if not data:
        raise ann.AnnotationError("no song has both features and annotations")
    return data


_FLAG_TO_CONFIG = {
    "learning_rate": "learning_rate", "hidden_size": "hidden_size", "n_modules": "n_modules",
    "layers_per_module": "layers_per_module", "dropout": "dropout_p", "max_epochs": "max_epochs",
    "patience": "early_stop_patience", "min_delta": "early_stop_min_delta",
    "noise_sigma": "noise_sigma", "grad_clip": "grad_clip",
    "validation_fraction": "validation_fraction",
}


def _train_config(args) -> models.TrainConfig:
    overrides = {cfg: getattr(args, flag) for flag, cfg in _FLAG_TO_CONFIG.items()
                 if getattr(args, flag) is not None}
    if args.batch_size is not None:
        overrides["batch_size"] = None if args.batch_size == "song" else args.batch_size
    overrides["seed"] = args.seed
    build = models.build_task1_default if args.task == "emotion" else models.build_task2_default
    return build(**overrides)[1]


def cmd_train(args) -> int:
    config = _train_config(args)
    data = _load_task_data(args, config.task)
    train_ids, val_ids = ann.split_ids(data, config.validation_fraction, config.seed)
    network = config.build_network(input_size=next(iter(data.values()))[0].shape[1])
    print("config:")
    for key, value in asdict(config).items():
        print(f"  {key} = {value}")
    print(f"songs: {len(train_ids)} train, {len(val_ids)} validation")
    try:
        network, report = models.train(network, {k: data[k] for k in train_ids},
                                       {k: data[k] for k in val_ids}, config)
    except models.Diverged as exc:
        raise NumericFailure(str(exc)) from exc
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(out_dir / "model.lstm", network, config.task)
    models.write_loss_csv(out_dir / "losses.csv", report)
    with open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["split", "mse", "rmse"])
        writer.writerow(["train", f"{report.final_train_mse:.4f}", f"{report.final_train_rmse:.4f}"])
        writer.writerow(["validation", f"{report.final_val_mse:.4f}", f"{report.final_val_rmse:.4f}"])
    print(report.summary())
    print(f"checkpoint: {out_dir / 'model.lstm'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    network, task = nn.load_checkpoint(args.checkpoint)
    data = _load_task_data(args, task)
    result = models.evaluate(network, data)
    if args.csv:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(["song_id", "mse", "rmse"])
        for sid, value in result.per_song.items():
            writer.writerow([sid, f"{value:.4f}", f"{np.sqrt(value):.4f}"])
        writer.writerow(["all", f"{result.mse:.4f}", f"{result.rmse:.4f}"])
    else:
        print(f"task {task}: {result.summary()}")
    return EXIT_OK


def cmd_predict(args) -> int:
    network, task = nn.load_checkpoint(args.checkpoint)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    if task == "emotion":
        if args.wav:
            features = dsp.extract_song(dsp.load_wav(args.wav))
        elif args.features_file:
            features = dsp.read_features(args.features_file)
        else:
            raise UsageError("emotion checkpoints need --wav or --features-file")
        writer.writerow(["clip", "valence", "arousal"])
        for i, mel in enumerate(features):
            p = models.predict_emotion(network, mel, n_frames=mel.shape[1])
            writer.writerow([i, f"{p.valence:.6f}", f"{p.arousal:.6f}"])
        return EXIT_OK
    if not args.history:
        raise UsageError("next-point checkpoints need --history")
    history = queue.read_history_csv(args.history)
    if history.shape[1] < models.WINDOW_LENGTH:
        raise UsageError(f"history needs at least {models.WINDOW_LENGTH} rows")
    p = models.predict_next(network, history[:, -models.WINDOW_LENGTH:])
    writer.writerow(["valence", "arousal"])
    writer.writerow([f"{p.valence:.6f}", f"{p.arousal:.6f}"])
    return EXIT_OK


def cmd_baseline(args) -> int:
    tracks = _load_tracks(args)
    network = None
    if args.checkpoint:
        network, task = nn.load_checkpoint(args.checkpoint)
        if task != "next":
            raise UsageError("baseline comparison needs a next-point checkpoint")
    rows = baseline.compare_baseline(tracks, network)
    if args.csv:
        baseline.write_comparison_csv(sys.stdout, rows)
        return EXIT_OK
    predictors = list(rows[0].mse)
    print("mean next-point MSE over %d tracks" % len(rows))
    for name in predictors:
        print(f"  {name:12s} {np.mean([r.combined(name) for r in rows]):.4f}")
    return EXIT_OK


def cmd_queue(args) -> int:
    history = queue.read_history_csv(args.history)
    emotion_net = None
    if args.emotion_checkpoint:
        emotion_net, task = nn.load_checkpoint(args.emotion_checkpoint)
        if task != "emotion":
            raise UsageError("--emotion-checkpoint must hold an emotion model")
    candidates = queue.load_library(args.library, emotion_net, args.k)
    predictor = queue.hold_predictor
    if args.checkpoint:
        predictor, task = nn.load_checkpoint(args.checkpoint)
        if task != "next":
            raise UsageError("--checkpoint must hold a next-point model")
    policy = queue.QueuePolicy(tolerance=args.tolerance, opening_window_k=args.k, seed=args.seed)
    trace = queue.run_queue(history, predictor, candidates, policy, args.steps)
    queue.write_trace_csv(sys.stdout, trace)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    network = nn.LstmNetwork.initialize(args.input_size, args.hidden_size,
                                        (args.layers_per_module,) * args.n_modules, 0.0, rng)
    x = rng.normal(size=(args.batch, args.input_size, args.timesteps))
    y = rng.uniform(-1, 1, size=(args.batch, nn.OUTPUT_SIZE))
    error = nn.gradient_check(network, x, y, args.fd_step)
    verdict = "PASS" if error < args.threshold else "FAIL"
    if args.csv:
        print("max_rel_error,threshold,result")
        print(f"{error:.3e},{args.threshold:.1e},{verdict}")
    else:
        print(f"max relative error {error:.3e} (threshold {args.threshold:.1e}): {verdict}")
    return EXIT_OK if verdict == "PASS" else EXIT_NUMERIC


COMMANDS = {
    "features": cmd_features, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
    "baseline": cmd_baseline, "queue": cmd_queue, "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"emotrace: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"emotrace: error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"emotrace: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"emotrace: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, dsp.DspError, ann.AnnotationError, nn.CheckpointError, queue.QueueError) as exc:
        print(f"emotrace: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (nn.ShapeError, ValueError) as exc:
        print(f"emotrace: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
