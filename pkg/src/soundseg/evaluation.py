"""Projection-based separation scores (SDR, SIR, SAR).

The estimate is split against the references with zero-lag orthogonal
projections: the target component is the projection onto the true source,
interference is the remaining part of the projection onto all references, and
artifacts are whatever lies outside their span. There are no noise references,
so the noise component is identically zero.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from soundseg.errors import UndefinedScoreError

__all__ = [
    "DecompositionComponents",
    "EvalScores",
    "TrackEvaluation",
    "decompose",
    "sdr",
    "sir",
    "sar",
    "score",
    "bss_eval_track",
    "write_csv",
    "format_score",
]

SILENCE_ENERGY = 1e-12
_DEPENDENCE_RCOND = 1e-10
_ROUNDOFF = 1e-12


@dataclass
class DecompositionComponents:
    s_target: np.ndarray
    e_interf: np.ndarray
    e_noise: np.ndarray
    e_artif: np.ndarray


@dataclass
class EvalScores:
    sdr: float
    sir: float
    sar: float

    def as_tuple(self):
        return self.sdr, self.sir, self.sar


def decompose(estimate, references, target_index):
    """Split ``estimate`` into target, interference, noise and artifact parts."""
    estimate = np.asarray(estimate, dtype=np.float64)
    refs = np.atleast_2d(np.asarray(references, dtype=np.float64))
    if estimate.ndim != 1 or len(estimate) < 2:
        raise ValueError(f"estimate must be a 1-D vector of length >= 2, got shape {estimate.shape}")
    if refs.shape[1] != len(estimate):
        raise ValueError(f"references have length {refs.shape[1]}, estimate {len(estimate)}")
    if not 0 <= target_index < len(refs):
        raise ValueError(f"target_index {target_index} out of range for {len(refs)} references")
    norms = np.linalg.norm(refs, axis=1)
    if np.any(norms == 0):
        raise ValueError(f"reference {int(np.argmin(norms))} has zero energy")
    if len(refs) > len(estimate):
        raise ValueError("more references than samples; references are linearly dependent")
    singular = np.linalg.svd(refs / norms[:, None], compute_uv=False)
    if singular[-1] < _DEPENDENCE_RCOND * singular[0]:
        raise ValueError("references are linearly dependent")

    target = refs[target_index]
    s_target = (estimate @ target) / (target @ target) * target
    q, _ = np.linalg.qr(refs.T)
    projection = q @ (q.T @ estimate)
    # components at round-off level are exact zeros, so perfect and
    # orthogonal cases score +inf or undefined rather than ~300 dB
    floor = _ROUNDOFF * np.linalg.norm(estimate)

    def snap(v):
        return np.zeros_like(v) if np.linalg.norm(v) <= floor else v

    return DecompositionComponents(
        s_target=snap(s_target),
        e_interf=snap(projection - s_target),
        e_noise=np.zeros_like(estimate),
        e_artif=snap(estimate - projection),
    )


def _ratio_db(num, den):
    num = float(num @ num)
    den = float(den @ den)
    if den == 0:
        return math.inf
    if num == 0:
        return -math.inf
    return 10.0 * math.log10(num / den)


def _require_target(c):
    if not np.any(c.s_target):
        raise UndefinedScoreError("target component has zero energy; score is undefined")


def sdr(c):
    _require_target(c)
    return _ratio_db(c.s_target, c.e_interf + c.e_noise + c.e_artif)


def sir(c):
    _require_target(c)
    return _ratio_db(c.s_target, c.e_interf)


def sar(c):
    _require_target(c)
    return _ratio_db(c.s_target + c.e_interf + c.e_noise, c.e_artif)


def score(c):
    return EvalScores(sdr(c), sir(c), sar(c))


@dataclass
class TrackEvaluation:
    """Per-segment scores plus median and mean aggregates."""

    segments: list = field(default_factory=list)
    median: EvalScores = None
    mean: EvalScores = None
    skipped: int = 0


def _aggregate(values, how):
    arr = np.asarray(values, dtype=np.float64)
    if how == "median":
        return float(np.median(arr))
    with np.errstate(invalid="ignore"):
        return float(np.mean(arr))


def bss_eval_track(est_vocal, ref_vocal, ref_accomp, sample_rate, segment_seconds=1.0):
    """Score a vocal estimate segment by segment against {vocal, accompaniment}.

    Signals are cut into non-overlapping segments of ``segment_seconds``; a
    trailing remainder shorter than a segment is dropped unless the signal is
    shorter than one segment, in which case it is scored whole. Segments where
    either reference is silent are skipped. A segment whose estimate has no
    component along the vocal reference scores ``-inf``.
    """
    est = np.asarray(getattr(est_vocal, "samples", est_vocal), dtype=np.float64)
    voc = np.asarray(getattr(ref_vocal, "samples", ref_vocal), dtype=np.float64)
    acc = np.asarray(getattr(ref_accomp, "samples", ref_accomp), dtype=np.float64)
    if not (len(est) == len(voc) == len(acc)):
        raise ValueError(f"length mismatch: estimate {len(est)}, vocals {len(voc)}, accompaniment {len(acc)}")
    if segment_seconds < 0.1:
        raise ValueError(f"segment_seconds must be >= 0.1, got {segment_seconds}")
    seg = int(round(segment_seconds * sample_rate))
    n_seg = len(est) // seg
    bounds = [(i * seg, (i + 1) * seg) for i in range(n_seg)] or [(0, len(est))]

    result = TrackEvaluation()
    for index, (a, b) in enumerate(bounds):
        v, m, e = voc[a:b], acc[a:b], est[a:b]
        if v @ v < SILENCE_ENERGY or m @ m < SILENCE_ENERGY:
            result.skipped += 1
            continue
        comps = decompose(e, np.stack([v, m]), 0)
        if not np.any(comps.s_target):
            scores = EvalScores(-math.inf, -math.inf, -math.inf)
        else:
            scores = score(comps)
        result.segments.append((index, scores))
    if not result.segments:
        raise UndefinedScoreError("every segment has a silent reference; nothing to score")
    cols = list(zip(*(s.as_tuple() for _, s in result.segments)))
    result.median = EvalScores(*(_aggregate(c, "median") for c in cols))
    result.mean = EvalScores(*(_aggregate(c, "mean") for c in cols))
    return result


def format_score(x):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.4f}"


CSV_HEADER = ["track_id", "segment_index", "sdr", "sir", "sar", "sdr_mean", "sir_mean", "sar_mean"]


def write_csv(path, evaluations):
    """Write ``{track_id: TrackEvaluation}`` as segment rows plus one summary row per track.

    The summary row has ``segment_index = "summary"``, medians in the sdr/sir/sar
    columns and means in the ``*_mean`` columns.
    """
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for track_id, ev in evaluations.items():
            for index, s in ev.segments:
                w.writerow([track_id, index, *map(format_score, s.as_tuple()), "", "", ""])
            w.writerow(
                [
                    track_id,
                    "summary",
                    *map(format_score, ev.median.as_tuple()),
                    *map(format_score, ev.mean.as_tuple()),
                ]
            )
