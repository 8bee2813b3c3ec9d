"""Time-frequency front and back end.

Resampling, the periodic Hann window, a non-centered STFT, magnitude/phase
decomposition, Nyquist-row handling and weighted overlap-add iSTFT. All
transforms run in float64; callers downcast where storage matters.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from soundseg import FRAME_SIZE, HOP, WORKING_RATE

__all__ = [
    "Waveform",
    "ComplexSpectrogram",
    "to_mono",
    "resample",
    "hann_window",
    "stft",
    "istft",
    "magnitude_phase",
    "combine",
    "drop_nyquist",
    "restore_nyquist",
]

_ISTFT_FLOOR = 1e-12
_TAPS_PER_PHASE = 64


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains NaN or Inf samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class ComplexSpectrogram:
    """One-sided STFT bins laid out as (frequency, time)."""

    bins: np.ndarray
    frame_size: int = FRAME_SIZE
    hop: int = HOP
    sample_rate: int = WORKING_RATE

    def __post_init__(self):
        self.bins = np.asarray(self.bins)
        if self.bins.ndim != 2:
            raise ValueError(f"spectrogram must be 2-D, got shape {self.bins.shape}")
        if self.bins.shape[0] != self.frame_size // 2 + 1:
            raise ValueError(
                f"expected {self.frame_size // 2 + 1} frequency rows for frame "
                f"size {self.frame_size}, got {self.bins.shape[0]}"
            )

    @property
    def shape(self):
        return self.bins.shape


def to_mono(samples):
    """Average channels of a (n,) or (n, channels) array."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        return samples
    if samples.ndim != 2:
        raise ValueError(f"expected (n,) or (n, channels) samples, got {samples.shape}")
    return samples.mean(axis=1)


def _lowpass_taps(up, down):
    ratio = max(up, down)
    numtaps = _TAPS_PER_PHASE * ratio + 1
    # cutoff relative to the Nyquist of the upsampled rate
    return signal.firwin(numtaps, 0.95 / ratio, window=("kaiser", 8.6))


def resample(w, target_rate=WORKING_RATE):
    """Polyphase windowed-sinc rate conversion.

    The ratio ``target_rate / w.sample_rate`` is reduced to lowest terms and the
    signal is filtered by a Kaiser-windowed sinc with 64 taps per polyphase
    branch. Output length is ``ceil(len(w) * target / source)``.
    """
    if target_rate <= 0 or int(target_rate) != target_rate:
        raise ValueError(f"target_rate must be a positive integer, got {target_rate}")
    target_rate = int(target_rate)
    if len(w) == 0:
        return Waveform(np.zeros(0), target_rate)
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), target_rate)
    ratio = Fraction(target_rate, w.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    taps = _lowpass_taps(up, down)
    out = signal.resample_poly(w.samples, up, down, window=taps)
    return Waveform(out, target_rate)


def hann_window(n=FRAME_SIZE):
    """Periodic Hann window, ``0.5 * (1 - cos(2 pi k / n))``."""
    if int(n) != n or n < 2:
        raise ValueError(f"window length must be an integer >= 2, got {n}")
    k = np.arange(int(n))
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


def _frame_count(length, frame_size, hop):
    return 1 + (length - frame_size) // hop


def stft(w, frame_size=FRAME_SIZE, hop=HOP, window=None):
    """Non-centered STFT; frame ``t`` covers ``w[t*hop : t*hop + frame_size]``."""
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    sample_rate = w.sample_rate if isinstance(w, Waveform) else WORKING_RATE
    if window is None:
        window = hann_window(frame_size)
    window = np.asarray(window, dtype=np.float64)
    if len(window) != frame_size:
        raise ValueError(f"window length {len(window)} != frame size {frame_size}")
    if hop < 1:
        raise ValueError(f"hop must be >= 1, got {hop}")
    if len(samples) < frame_size:
        raise ValueError(
            f"signal of {len(samples)} samples is shorter than one frame ({frame_size})"
        )
    frames = np.lib.stride_tricks.sliding_window_view(samples, frame_size)[::hop]
    bins = np.fft.rfft(frames * window, axis=1).T
    return ComplexSpectrogram(np.ascontiguousarray(bins), frame_size, hop, sample_rate)


def istft(s, window=None):
    """Weighted overlap-add inverse of :func:`stft`.

    Each inverse-transformed frame is multiplied by the window and summed; the
    sum is divided by the overlapped squared window (floored at 1e-12). The
    result has ``(T - 1) * hop + frame_size`` samples.
    """
    frame_size, hop = s.frame_size, s.hop
    n_frames = s.bins.shape[1]
    if n_frames == 0:
        raise ValueError("cannot invert an empty spectrogram")
    if hop < 1 or hop > frame_size:
        raise ValueError(f"hop {hop} must lie in [1, frame_size={frame_size}]")
    if window is None:
        window = hann_window(frame_size)
    window = np.asarray(window, dtype=np.float64)
    if len(window) != frame_size:
        raise ValueError(f"window length {len(window)} != frame size {frame_size}")

    frames = np.fft.irfft(s.bins.T, n=frame_size, axis=1) * window
    length = (n_frames - 1) * hop + frame_size
    out = np.zeros(length)
    norm = np.zeros(length)
    wsq = window**2
    for t in range(n_frames):
        start = t * hop
        out[start : start + frame_size] += frames[t]
        norm[start : start + frame_size] += wsq
    return Waveform(out / np.maximum(norm, _ISTFT_FLOOR), s.sample_rate)


def magnitude_phase(s):
    """Split complex bins into magnitude and phase (atan2; zero bins get phase 0)."""
    bins = s.bins if isinstance(s, ComplexSpectrogram) else np.asarray(s)
    return np.abs(bins), np.angle(bins)


def combine(magnitude, phase):
    magnitude = np.asarray(magnitude)
    phase = np.asarray(phase)
    if magnitude.shape != phase.shape:
        raise ValueError(f"magnitude shape {magnitude.shape} != phase shape {phase.shape}")
    return magnitude * np.exp(1j * phase)


def drop_nyquist(m, frame_size=FRAME_SIZE):
    m = np.asarray(m)
    rows = frame_size // 2 + 1
    if m.ndim != 2 or m.shape[0] != rows:
        raise ValueError(f"expected {rows} frequency rows, got shape {m.shape}")
    return m[:-1]


def restore_nyquist(m, frame_size=FRAME_SIZE):
    m = np.asarray(m)
    rows = frame_size // 2
    if m.ndim != 2 or m.shape[0] != rows:
        raise ValueError(f"expected {rows} frequency rows, got shape {m.shape}")
    return np.concatenate([m, np.zeros((1, m.shape[1]), dtype=m.dtype)], axis=0)
