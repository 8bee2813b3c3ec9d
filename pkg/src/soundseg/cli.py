"""Command line: build-dataset, train, grid, separate, evaluate.

Exit codes: 0 success, 2 usage/config error, 3 data or format error,
4 numerical failure. ``SOUNDSEG_THREADS`` caps BLAS threads and the number of
grid configs trained in parallel.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from soundseg import FRAME_SIZE, HOP, WORKING_RATE
from soundseg.config import ExperimentConfig, grid_configs
from soundseg.dataset import compose_training_set, load_archive, patchify, save_archive, split_train_val
from soundseg.dsp import Waveform, drop_nyquist, magnitude_phase, resample, stft
from soundseg.errors import ConfigError, DataError, FormatError, NumericalError
from soundseg.evaluation import EvalScores, bss_eval_track, format_score, write_csv
from soundseg.nn.train import train
from soundseg.nn.weights import load_weights, save_weights
from soundseg.separate import SeparationModel, separate_track
from soundseg.wavio import read_wav, write_wav

log = logging.getLogger("soundseg")

__all__ = [
    "cmd_build_dataset",
    "cmd_train",
    "cmd_grid",
    "cmd_separate",
    "cmd_evaluate",
    "load_track",
    "evaluate_model_on_tracks",
    "evaluate_mixture_baseline",
    "main",
]

SCALER_LABELS = {"minmax": "Min/Max", "quantile": "Quantile"}
GRID_COLUMNS = ["sdr", "sir", "sar", "normalization", "scaler", "loss", "status"]


def _threads():
    value = os.environ.get("SOUNDSEG_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"SOUNDSEG_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"SOUNDSEG_THREADS must be a positive integer, got {value!r}")
    return n


def track_dirs(stems_dir):
    root = Path(stems_dir)
    if not root.is_dir():
        raise DataError(f"stems directory {root} does not exist")
    return sorted(p for p in root.iterdir() if p.is_dir())


def load_track(track_dir, sample_rate=WORKING_RATE):
    """Resampled ``(mixture, vocals)`` waveforms of one track, trimmed to equal length."""
    track_dir = Path(track_dir)
    missing = [str(track_dir / n) for n in ("mixture.wav", "vocals.wav") if not (track_dir / n).is_file()]
    if missing:
        raise DataError(f"track {track_dir.name}: missing stem file(s): {', '.join(missing)}")
    mix = resample(read_wav(track_dir / "mixture.wav"), sample_rate)
    voc = resample(read_wav(track_dir / "vocals.wav"), sample_rate)
    n = min(len(mix), len(voc))
    return Waveform(mix.samples[:n], sample_rate), Waveform(voc.samples[:n], sample_rate)


def _magnitude(w):
    return drop_nyquist(magnitude_phase(stft(w, FRAME_SIZE, HOP))[0]).astype(np.float32)


def cmd_build_dataset(stems_dir, out_path, seed=0, out=sys.stdout):
    """Turn ``stems_dir/<track>/{mixture,vocals}.wav`` into a patch archive."""
    tracks = []
    for d in track_dirs(stems_dir):
        try:
            mix, voc = load_track(d)
            mix_p, voc_p = patchify(_magnitude(mix)), patchify(_magnitude(voc))
        except (DataError, FormatError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            continue
        if len(mix_p) == 0:
            print(f"error: track {d.name}: shorter than one patch, skipped", file=sys.stderr)
            continue
        tracks.append((mix_p, voc_p))
    if not tracks:
        raise DataError(f"no usable tracks under {stems_dir}")
    archive = compose_training_set(tracks, seed)
    save_archive(archive, out_path)
    counts = archive.counts()
    print(
        f"{len(tracks)} tracks -> {len(archive)} pairs: "
        + ", ".join(f"{k} {v}" for k, v in counts.items()),
        file=out,
    )
    return archive


def _report_payload(config, report):
    body = report.to_dict()
    wall = body.pop("wall_time")
    return {
        "config": config.to_dict(),
        "train": body,
        "metadata": {"wall_time_seconds": wall, "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S")},
    }


def report_path(weights_path):
    return Path(weights_path).with_suffix(".json")


def cmd_train(archive, config, out_weights):
    """Train one configuration; writes the weights file and ``<weights>.json`` report."""
    if isinstance(config, (str, Path)):
        config = ExperimentConfig.from_json(Path(config).read_text())
    if isinstance(archive, (str, Path)):
        archive = load_archive(archive)
    train_set, val_set = split_train_val(archive, config.validation_fraction, config.seed)
    unet = config.unet_config()
    params, report = train(
        train_set,
        val_set,
        unet,
        config.normalization(),
        config.loss_kind(),
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=config.seed,
        learning_rate=config.learning_rate,
    )
    save_weights(params, out_weights, unet, config.to_dict())
    report_path(out_weights).write_text(json.dumps(_report_payload(config, report), indent=2, sort_keys=True))
    return params, report


def load_model(weights_path):
    params, unet, experiment = load_weights(weights_path)
    if experiment is None:
        raise FormatError(f"{weights_path}: weights carry no experiment config")
    config = ExperimentConfig.from_dict(experiment)
    if config.unet_config() != unet:
        raise FormatError(f"{weights_path}: stored experiment config disagrees with the network header")
    return SeparationModel(params, unet, config.normalization()), config


def _mean(values):
    with np.errstate(invalid="ignore"):
        return float(np.mean(values))


def _references(mix, voc, n):
    return voc.samples[:n], mix.samples[:n] - voc.samples[:n]


def _average(rows):
    return EvalScores(*(_mean(col) for col in zip(*rows)))


def evaluate_model_on_tracks(model, dirs, segment_seconds=1.0):
    """Mean over tracks of the per-track median (SDR, SIR, SAR) of the model's vocals.

    References are the resampled vocals and ``mixture - vocals``, trimmed to
    the separated length.
    """
    rows = []
    for d in dirs:
        mix, voc = load_track(d)
        result = separate_track(model, mix)
        ref_v, ref_a = _references(mix, voc, len(result.vocals))
        rows.append(bss_eval_track(result.vocals, ref_v, ref_a, WORKING_RATE, segment_seconds).median.as_tuple())
    return _average(rows)


def evaluate_mixture_baseline(dirs, segment_seconds=1.0):
    """Same aggregation as :func:`evaluate_model_on_tracks` with the mixture as the estimate."""
    rows = []
    for d in dirs:
        mix, voc = load_track(d)
        ref_v, ref_a = _references(mix, voc, len(mix))
        rows.append(bss_eval_track(mix.samples, ref_v, ref_a, WORKING_RATE, segment_seconds).median.as_tuple())
    return _average(rows)


def _train_and_score(archive_path, config, out_dir, heldout):
    weights = Path(out_dir) / f"{config.tag()}.sswt"
    archive = load_archive(archive_path)
    cmd_train(archive, config, weights)
    model, _ = load_model(weights)
    return evaluate_model_on_tracks(model, heldout)


def _grid_row(config, scores, status):
    return {
        "sdr": scores.sdr if scores else math.nan,
        "sir": scores.sir if scores else math.nan,
        "sar": scores.sar if scores else math.nan,
        "normalization": config.axis,
        "scaler": SCALER_LABELS[config.scaler],
        "loss": config.loss.upper(),
        "status": status,
    }


def _sdr_key(row):
    return -row["sdr"] if not math.isnan(row["sdr"]) else math.inf


def format_table(rows):
    lines = [f"{'SDR':>7} {'SIR':>7} {'SAR':>7}  {'Normalization':<13} {'Scaler':<8} Loss"]
    for r in rows:
        cells = [format_score(r[k]) if not math.isnan(r[k]) else "failed" for k in ("sdr", "sir", "sar")]
        cells = [c if c in ("inf", "-inf", "failed") else f"{float(c):.1f}" for c in cells]
        lines.append(f"{cells[0]:>7} {cells[1]:>7} {cells[2]:>7}  {r['normalization']:<13} {r['scaler']:<8} {r['loss']}")
    return "\n".join(lines) + "\n"


def cmd_grid(archive_path, heldout_dir, out_dir, seed=0, base=None, out=sys.stdout):
    """Train and score all 8 axis x scaler x loss configurations.

    Writes one weights file and report per config, ``results.csv`` and
    ``results.txt`` (sorted by SDR, descending) and ``summary.json`` holding the
    mixture-as-estimate baseline. A failing config yields a row marked failed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = base or ExperimentConfig()
    base = ExperimentConfig.from_dict({**base.to_dict(), "seed": seed})
    heldout = track_dirs(heldout_dir)
    if not heldout:
        raise DataError(f"no held-out tracks under {heldout_dir}")
    configs = grid_configs(base)
    workers = _threads() or 1

    rows = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_train_and_score, archive_path, c, out_dir, heldout) for c in configs]
            outcomes = []
            for f in futures:
                try:
                    outcomes.append((f.result(), "ok"))
                except Exception as exc:  # a failed config must not stop the grid
                    outcomes.append((None, f"failed: {exc}"))
    else:
        outcomes = []
        for c in configs:
            try:
                outcomes.append((_train_and_score(archive_path, c, out_dir, heldout), "ok"))
            except Exception as exc:
                log.error("config %s failed: %s", c.tag(), exc)
                outcomes.append((None, f"failed: {exc}"))
    for c, (scores, status) in zip(configs, outcomes):
        rows.append(_grid_row(c, scores, status))
    rows.sort(key=_sdr_key)

    with open(out_dir / "results.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=GRID_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: format_score(v) if isinstance(v, float) else v for k, v in r.items()})
    table = format_table(rows)
    (out_dir / "results.txt").write_text(table)

    baseline = evaluate_mixture_baseline(heldout)
    summary = {
        "base_config": base.to_dict(),
        "heldout_tracks": [d.name for d in heldout],
        "baseline_mixture": dict(zip(("sdr", "sir", "sar"), baseline.as_tuple())),
        "rows": rows,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    print(table, end="", file=out)
    return rows, baseline


def cmd_separate(weights, input_wav, vocals_out, accomp_out):
    model, _ = load_model(weights)
    result = separate_track(model, read_wav(input_wav))
    write_wav(vocals_out, result.vocals)
    write_wav(accomp_out, result.accompaniment)
    return result


def _load_at(path, rate):
    w = read_wav(path)
    return resample(w, rate) if w.sample_rate != rate else w


def cmd_evaluate(est_vocals, ref_vocals, ref_accomp, out_csv, segment_seconds=1.0, track_id=None):
    """Score an estimate WAV against reference WAVs (resampled to the estimate's rate)."""
    est = read_wav(est_vocals)
    voc = _load_at(ref_vocals, est.sample_rate)
    acc = _load_at(ref_accomp, est.sample_rate)
    lengths = (len(est), len(voc), len(acc))
    if max(lengths) - min(lengths) > HOP:
        raise DataError(f"durations differ by more than one hop ({HOP} samples): {lengths}")
    n = min(lengths)
    ev = bss_eval_track(est.samples[:n], voc.samples[:n], acc.samples[:n], est.sample_rate, segment_seconds)
    write_csv(out_csv, {track_id or Path(est_vocals).stem: ev})
    return ev


def build_parser():
    p = argparse.ArgumentParser(prog="soundseg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-dataset", help="stems directory -> patch archive")
    b.add_argument("--stems-dir", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--dataset", required=True)
    t.add_argument("--config", required=True, help="experiment config JSON")
    t.add_argument("--out", required=True, help="weights file; the report goes next to it as .json")
    t.add_argument("--seed", type=int, default=None, help="override the config seed")

    g = sub.add_parser("grid", help="train and evaluate all 8 configurations")
    g.add_argument("--dataset", required=True)
    g.add_argument("--stems-dir", required=True, help="held-out evaluation tracks")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config", default=None, help="base config JSON (epochs, batch size, network size)")

    s = sub.add_parser("separate", help="split a mixture WAV into vocals and accompaniment")
    s.add_argument("--weights", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--vocals", required=True)
    s.add_argument("--accompaniment", required=True)

    e = sub.add_parser("evaluate", help="SDR/SIR/SAR of a vocal estimate")
    e.add_argument("--input", required=True, help="estimated vocals WAV")
    e.add_argument("--vocals", required=True, help="reference vocals WAV")
    e.add_argument("--accompaniment", required=True, help="reference accompaniment WAV")
    e.add_argument("--out", required=True, help="CSV output")
    e.add_argument("--segment-seconds", type=float, default=1.0)
    return p


def _run(args):
    if args.command == "build-dataset":
        cmd_build_dataset(args.stems_dir, args.out, args.seed)
    elif args.command == "train":
        config = ExperimentConfig.from_json(Path(args.config).read_text())
        if args.seed is not None:
            config = ExperimentConfig.from_dict({**config.to_dict(), "seed": args.seed})
        _, report = cmd_train(args.dataset, config, args.out)
        print(f"selected epoch {report.selected_epoch}, validation loss {report.val_loss[report.selected_epoch]:.6f}")
    elif args.command == "grid":
        base = ExperimentConfig.from_json(Path(args.config).read_text()) if args.config else None
        cmd_grid(args.dataset, args.stems_dir, args.out_dir, args.seed, base)
    elif args.command == "separate":
        cmd_separate(args.weights, args.input, args.vocals, args.accompaniment)
    elif args.command == "evaluate":
        ev = cmd_evaluate(args.input, args.vocals, args.accompaniment, args.out, args.segment_seconds)
        print("median " + ",".join(map(format_score, ev.median.as_tuple())))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        threads = _threads()
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(threads):
                _run(args)
        else:
            _run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except (FormatError, DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
