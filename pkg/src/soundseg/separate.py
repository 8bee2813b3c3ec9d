"""Inference: predict vocal magnitudes, mask the mixture, resynthesize both sources."""

from dataclasses import dataclass

import numpy as np

from soundseg import FRAME_SIZE, HOP, WORKING_RATE
from soundseg.dataset import denormalize, normalize
from soundseg.dsp import (
    ComplexSpectrogram,
    Waveform,
    combine,
    drop_nyquist,
    istft,
    magnitude_phase,
    resample,
    restore_nyquist,
    stft,
)
from soundseg.errors import NumericalError
from soundseg.nn.unet import unet_forward

__all__ = [
    "SeparationModel",
    "SeparationResult",
    "predict_full",
    "compute_mask",
    "invert_mask",
    "separate_track",
    "separate_with",
]

MASK_EPS = 1e-8


@dataclass
class SeparationModel:
    """An immutable trained snapshot: parameters, architecture and normalization."""

    params: dict
    config: object
    spec: object


@dataclass
class SeparationResult:
    vocals: Waveform
    accompaniment: Waveform
    mask: np.ndarray


def predict_full(model, mix_mag, batch_size=8):
    """Vocal magnitude estimate for a whole (F, T) mixture magnitude.

    The mixture is zero-padded in time to whole patches, each patch is
    normalized with its own statistics, passed through the network,
    denormalized with the same statistics, clamped at zero and trimmed back.
    """
    h, w, _ = model.config.input_shape
    mix_mag = np.asarray(mix_mag, dtype=np.float32)
    if mix_mag.ndim != 2 or mix_mag.shape[0] != h:
        raise ValueError(f"model expects {h} frequency rows, got grid of shape {mix_mag.shape}")
    t = mix_mag.shape[1]
    n = max(1, -(-t // w))
    padded = np.zeros((h, n * w), dtype=np.float32)
    padded[:, :t] = mix_mag
    patches = padded.reshape(h, n, w).transpose(1, 0, 2)
    x, params = normalize(patches, model.spec)
    pred = np.empty_like(x)
    for start in range(0, n, batch_size):
        pred[start : start + batch_size] = unet_forward(
            model.config, model.params, x[start : start + batch_size, :, :, None]
        )[..., 0]
    if not np.all(np.isfinite(pred)):
        raise NumericalError("network produced non-finite predictions")
    out = np.maximum(denormalize(pred, params), 0)
    return out.transpose(1, 0, 2).reshape(h, n * w)[:, :t]


def compute_mask(vocal_est, mix_mag):
    """Ratio mask ``vocal / (mix + 1e-8)`` clipped to [0, 1]."""
    vocal_est = np.asarray(vocal_est)
    mix_mag = np.asarray(mix_mag)
    if vocal_est.shape != mix_mag.shape:
        raise ValueError(f"vocal estimate {vocal_est.shape} and mixture {mix_mag.shape} differ in shape")
    return np.clip(vocal_est / (mix_mag + MASK_EPS), 0.0, 1.0)


def invert_mask(mask):
    mask = np.asarray(mask)
    if np.any(mask < 0) or np.any(mask > 1) or not np.all(np.isfinite(mask)):
        raise ValueError("mask values must lie in [0, 1]")
    return 1.0 - mask


def separate_with(mix, predict, use_mask=True, sample_rate=WORKING_RATE, frame_size=FRAME_SIZE, hop=HOP):
    """Run the separation pipeline with an arbitrary magnitude predictor.

    ``predict`` maps a (frame_size // 2, T) mixture magnitude to a vocal
    magnitude of the same shape. With ``use_mask`` the prediction becomes a
    ratio mask applied to the mixture; otherwise the raw prediction is the
    vocal magnitude and the accompaniment gets the non-negative remainder.
    """
    if mix.sample_rate != sample_rate:
        mix = resample(mix, sample_rate)
    if len(mix) < frame_size:
        raise ValueError(
            f"input has {len(mix)} samples at {sample_rate} Hz, shorter than one {frame_size}-sample frame"
        )
    spec = stft(mix, frame_size, hop)
    magnitude, phase = magnitude_phase(spec)
    mix_mag = drop_nyquist(magnitude, frame_size)
    estimate = np.asarray(predict(mix_mag), dtype=np.float64)
    if use_mask:
        mask = compute_mask(estimate, mix_mag)
        vocal_mag = mask * mix_mag
        # equals invert_mask(mask) * mix_mag, written so the two parts sum to the mix
        accomp_mag = mix_mag - vocal_mag
    else:
        vocal_mag = np.clip(estimate, 0, mix_mag)
        accomp_mag = mix_mag - vocal_mag
        mask = compute_mask(vocal_mag, mix_mag)

    def synth(mag):
        bins = combine(restore_nyquist(mag, frame_size), phase)
        return istft(ComplexSpectrogram(bins, frame_size, hop, sample_rate))

    return SeparationResult(synth(vocal_mag), synth(accomp_mag), mask)


def separate_track(model, mix, use_mask=True, sample_rate=WORKING_RATE):
    """Separate a mixture waveform into vocals and accompaniment with a trained model."""
    return separate_with(mix, lambda m: predict_full(model, m), use_mask, sample_rate)
