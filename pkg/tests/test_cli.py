import csv
import json

import numpy as np
import pytest

from soundseg.cli import cmd_build_dataset, cmd_grid, cmd_train, main
from soundseg.config import ExperimentConfig, grid_configs
from soundseg.dataset import load_archive
from soundseg.dsp import Waveform
from soundseg.errors import ConfigError
from soundseg.synth import write_synthetic_stems
from soundseg.wavio import read_wav, write_wav

TINY = {"epochs": 1, "batch_size": 4, "depth": 1, "base_filters": 1}


@pytest.fixture(scope="module")
def stems(tmp_path_factory):
    root = tmp_path_factory.mktemp("stems")
    write_synthetic_stems(root, 2, duration=7.0, seed=0)
    return root


@pytest.fixture(scope="module")
def archive_path(stems, tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "a.sseg"
    cmd_build_dataset(stems, path, seed=0)
    return path


def test_config_round_trip_and_validation():
    c = ExperimentConfig(axis="time", scaler="quantile", loss="mse")
    assert ExperimentConfig.from_json(c.to_json()) == c
    assert c.tag() == "time_quantile_mse"
    with pytest.raises(ConfigError, match="scaler 'zscore'.*minmax, quantile"):
        ExperimentConfig(scaler="zscore")
    with pytest.raises(ConfigError, match="unknown config field"):
        ExperimentConfig.from_dict({"optimizer": "sgd"})
    with pytest.raises(ConfigError, match="depth"):
        ExperimentConfig(depth=10)


def test_grid_covers_all_combinations():
    tags = {c.tag() for c in grid_configs(ExperimentConfig(epochs=3))}
    assert len(tags) == 8
    assert all(c.epochs == 3 for c in grid_configs(ExperimentConfig(epochs=3)))


def test_build_dataset_counts(archive_path):
    # 7 s at 11025 Hz gives 298 frames, so two whole patches per track
    a = load_archive(archive_path)
    assert a.counts() == {"original": 4, "spliced": 2, "blackout": 2}


def test_build_dataset_is_byte_identical(stems, archive_path, tmp_path):
    cmd_build_dataset(stems, tmp_path / "b.sseg", seed=0)
    assert (tmp_path / "b.sseg").read_bytes() == archive_path.read_bytes()


def test_build_dataset_skips_broken_track(stems, tmp_path, capsys):
    root = tmp_path / "stems"
    root.mkdir()
    (root / "broken").mkdir()
    (root / "broken" / "mixture.wav").write_bytes(b"not a wav")
    for name in ("mixture.wav", "vocals.wav"):
        (root / "ok").mkdir(exist_ok=True)
        (root / "ok" / name).write_bytes((stems / "track_000" / name).read_bytes())
    a = cmd_build_dataset(root, tmp_path / "c.sseg", seed=0)
    assert a.counts()["original"] == 2
    assert "broken" in capsys.readouterr().err


def test_build_dataset_empty_dir_exit_code(tmp_path, capsys):
    assert main(["build-dataset", "--stems-dir", str(tmp_path), "--out", str(tmp_path / "x.sseg")]) == 3
    assert "no usable tracks" in capsys.readouterr().err


def test_invalid_scaler_exit_code(archive_path, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scaler": "zscore"}))
    code = main(["train", "--dataset", str(archive_path), "--config", str(cfg), "--out", str(tmp_path / "w.sswt")])
    assert code == 2
    assert "minmax, quantile" in capsys.readouterr().err


def test_bad_thread_setting(monkeypatch, tmp_path):
    monkeypatch.setenv("SOUNDSEG_THREADS", "many")
    assert main(["build-dataset", "--stems-dir", str(tmp_path), "--out", str(tmp_path / "x")]) == 2


def test_train_is_byte_identical(archive_path, tmp_path):
    config = ExperimentConfig.from_dict(TINY)
    cmd_train(archive_path, config, tmp_path / "a.sswt")
    cmd_train(archive_path, config, tmp_path / "b.sswt")
    assert (tmp_path / "a.sswt").read_bytes() == (tmp_path / "b.sswt").read_bytes()
    ra = json.loads((tmp_path / "a.json").read_text())
    rb = json.loads((tmp_path / "b.json").read_text())
    assert ra["train"] == rb["train"] and ra["config"] == rb["config"]
    assert ra["train"]["steps"] == 2


@pytest.fixture(scope="module")
def weights(archive_path, tmp_path_factory):
    path = tmp_path_factory.mktemp("w") / "m.sswt"
    assert main(["train", "--dataset", str(archive_path), "--config", _write_config(path.parent), "--out", str(path)]) == 0
    return path


def _write_config(d):
    p = d / "tiny.json"
    p.write_text(json.dumps(TINY))
    return str(p)


def test_separate_silent_input(weights, tmp_path):
    write_wav(tmp_path / "in.wav", Waveform(np.zeros(44100), 44100))
    args = ["separate", "--weights", str(weights), "--input", str(tmp_path / "in.wav")]
    args += ["--vocals", str(tmp_path / "v.wav"), "--accompaniment", str(tmp_path / "a.wav")]
    assert main(args) == 0
    v, a = read_wav(tmp_path / "v.wav"), read_wav(tmp_path / "a.wav")
    assert v.sample_rate == 11025
    assert len(v) == len(a) == (1 + (11025 - 1024) // 256 - 1) * 256 + 1024
    assert np.all(v.samples == 0) and np.all(a.samples == 0)


def test_separate_rejects_garbage(weights, tmp_path):
    (tmp_path / "in.wav").write_bytes(b"RIFF....WAVEjunk")
    args = ["separate", "--weights", str(weights), "--input", str(tmp_path / "in.wav")]
    args += ["--vocals", str(tmp_path / "v.wav"), "--accompaniment", str(tmp_path / "a.wav")]
    assert main(args) == 3


def test_evaluate_perfect_estimate(stems, tmp_path, capsys):
    track = stems / "track_000"
    args = ["evaluate", "--input", str(track / "vocals.wav"), "--vocals", str(track / "vocals.wav")]
    args += ["--accompaniment", str(track / "mixture.wav"), "--out", str(tmp_path / "s.csv")]
    assert main(args) == 0
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert len(rows) == 1 + 7 + 1
    assert rows[-1][2:5] == ["inf", "inf", "inf"]
    assert "median inf,inf,inf" in capsys.readouterr().out


def test_evaluate_length_mismatch(stems, tmp_path):
    write_wav(tmp_path / "short.wav", Waveform(np.zeros(1000), 44100))
    track = stems / "track_000"
    args = ["evaluate", "--input", str(tmp_path / "short.wav"), "--vocals", str(track / "vocals.wav")]
    args += ["--accompaniment", str(track / "mixture.wav"), "--out", str(tmp_path / "s.csv")]
    assert main(args) == 3


def test_grid_report_layout(archive_path, stems, tmp_path):
    rows, baseline = cmd_grid(archive_path, stems, tmp_path, seed=0, base=ExperimentConfig.from_dict(TINY))
    assert len(rows) == 8
    table = (tmp_path / "results.txt").read_text().splitlines()
    assert table[0].split() == ["SDR", "SIR", "SAR", "Normalization", "Scaler", "Loss"]
    assert len(table) == 9
    with open(tmp_path / "results.csv") as f:
        body = list(csv.DictReader(f))
    assert len(body) == 8 and all(r["status"] == "ok" for r in body)
    sdrs = [float(r["sdr"]) for r in body]
    assert sdrs == sorted(sdrs, reverse=True)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["baseline_mixture"]["sdr"] == pytest.approx(baseline.sdr)
    assert len(list(tmp_path.glob("*.sswt"))) == 8
