"""Synthetic stems for smoke tests and desk-scale experiments.

A "vocal" is a sinusoid whose pitch glides along a slow random melody; the
"accompaniment" is band-limited Gaussian noise at the same RMS, so the
mixture-as-estimate baseline scores close to 0 dB SDR.
"""

from pathlib import Path

import numpy as np
from scipy import signal

from soundseg.dsp import Waveform
from soundseg.wavio import write_wav

__all__ = ["synth_track", "write_synthetic_stems"]


def synth_track(rng, duration=30.0, sample_rate=44100, noise_band=(100.0, 4000.0)):
    """Return ``(mixture, vocals)`` waveforms."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    # pitch glides between random anchors every ~0.5-1.5 s, in log frequency
    n_knots = int(duration / 0.5) + 2
    knot_times = np.concatenate([[0.0], np.cumsum(rng.uniform(0.5, 1.5, n_knots))])
    knot_pitch = np.log2(rng.uniform(200.0, 1200.0, len(knot_times)))
    log_f = np.interp(t, knot_times, knot_pitch)
    freq = 2.0**log_f
    phase = 2 * np.pi * np.cumsum(freq) / sample_rate
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * t / rng.uniform(2.0, 5.0) + rng.uniform(0, 2 * np.pi))
    vocals = envelope * np.sin(phase)

    sos = signal.butter(6, noise_band, btype="bandpass", fs=sample_rate, output="sos")
    accomp = signal.sosfilt(sos, rng.standard_normal(n))
    accomp *= np.sqrt(np.mean(vocals**2) / np.mean(accomp**2))

    mixture = vocals + accomp
    gain = 0.8 / np.max(np.abs(mixture))
    return Waveform(mixture * gain, sample_rate), Waveform(vocals * gain, sample_rate)


def write_synthetic_stems(root, n_tracks, duration=30.0, sample_rate=44100, seed=0):
    """Write ``root/track_XXX/{mixture,vocals}.wav`` and return the track directories."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    dirs = []
    for i in range(n_tracks):
        d = root / f"track_{i:03d}"
        d.mkdir(parents=True, exist_ok=True)
        mixture, vocals = synth_track(rng, duration, sample_rate)
        write_wav(d / "mixture.wav", mixture)
        write_wav(d / "vocals.wav", vocals)
        dirs.append(d)
    return dirs
