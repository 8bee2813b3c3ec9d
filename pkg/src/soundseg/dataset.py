"""Patch datasets: patching, augmentation, normalization and persistence.

Patches are (512, 128) magnitude grids, frequency by time. Stacks of patches
are plain ``(n, 512, 128)`` float32 arrays; mix and vocal stacks always travel
together and are indexed in lockstep.
"""

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from soundseg import FRAME_SIZE, HOP, PATCH_FREQ, PATCH_TIME, WORKING_RATE
from soundseg.errors import FormatError

__all__ = [
    "Provenance",
    "Scaler",
    "Axis",
    "NormalizationSpec",
    "NormalizationParams",
    "DatasetArchive",
    "patchify",
    "splice_augment",
    "blackout_augment",
    "blackout_count",
    "compose_training_set",
    "normalize",
    "denormalize",
    "split_train_val",
    "save_archive",
    "load_archive",
]

BLACKOUT_SIZE = 64
BLACKOUT_MAX_START = 64

ARCHIVE_MAGIC = b"SSEG"
ARCHIVE_VERSION = 1
_HEADER = struct.Struct("<4sIIIIQIII")


class Provenance(enum.IntEnum):
    ORIGINAL = 0
    SPLICED = 1
    BLACKOUT = 2


class Scaler(enum.Enum):
    MINMAX = "minmax"
    ROBUST = "quantile"


class Axis(enum.Enum):
    FREQUENCY = "frequency"
    TIME = "time"


@dataclass(frozen=True)
class NormalizationSpec:
    scaler: Scaler = Scaler.MINMAX
    axis: Axis = Axis.FREQUENCY

    def __post_init__(self):
        if not isinstance(self.scaler, Scaler):
            raise ValueError(f"scaler must be a Scaler, got {self.scaler!r}")
        if not isinstance(self.axis, Axis):
            raise ValueError(f"axis must be an Axis, got {self.axis!r}")


@dataclass
class NormalizationParams:
    """Per-slice statistics needed to undo :func:`normalize`.

    ``offset`` is the slice minimum (MinMax) or median (Robust); ``scale`` is
    ``max - min`` or the interquartile range. Arrays keep the reduced axis as a
    size-1 dimension so they broadcast against the normalized grid.
    ``degenerate`` marks slices with zero scale.
    """

    spec: NormalizationSpec
    offset: np.ndarray
    scale: np.ndarray
    degenerate: np.ndarray

    @property
    def minimum(self):
        return self.offset

    @property
    def maximum(self):
        return self.offset + self.scale

    @property
    def median(self):
        return self.offset

    @property
    def iqr(self):
        return self.scale


def _check_stack(a, name):
    a = np.asarray(a)
    if a.ndim != 3 or a.shape[1:] != (PATCH_FREQ, PATCH_TIME):
        raise ValueError(f"{name} must have shape (n, {PATCH_FREQ}, {PATCH_TIME}), got {a.shape}")
    return a


def patchify(m, patch_time=PATCH_TIME):
    """Cut a (512, T) grid into ``T // 128`` consecutive patches; the remainder is dropped."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != PATCH_FREQ:
        raise ValueError(f"expected ({PATCH_FREQ}, T) grid, got shape {m.shape}")
    n = m.shape[1] // patch_time
    if n == 0:
        return np.zeros((0, PATCH_FREQ, patch_time), dtype=m.dtype)
    return np.ascontiguousarray(
        m[:, : n * patch_time].reshape(PATCH_FREQ, n, patch_time).transpose(1, 0, 2)
    )


def splice_augment(patches):
    """Join the trailing half of each patch with the leading half of its successor.

    Returns ``n - 1`` patches; fewer than two inputs give an empty stack.
    """
    patches = np.asarray(patches)
    if patches.ndim != 3:
        raise ValueError(f"expected a (n, F, T) stack, got shape {patches.shape}")
    half = patches.shape[2] // 2
    if len(patches) < 2:
        return patches[:0].copy()
    return np.concatenate([patches[:-1, :, half:], patches[1:, :, :half]], axis=2)


def blackout_augment(mixes, vocals, rng):
    """Zero 64 consecutive time columns, at the same start, in each mix/vocal pair.

    Starts are drawn uniformly from ``{0, ..., 64}``. Returns the augmented
    copies and the starts used.
    """
    mixes = np.array(mixes, copy=True)
    vocals = np.array(vocals, copy=True)
    if mixes.shape != vocals.shape or mixes.ndim != 3:
        raise ValueError(f"mix stack {mixes.shape} and vocal stack {vocals.shape} must match")
    if mixes.shape[2] < BLACKOUT_MAX_START + BLACKOUT_SIZE:
        raise ValueError(f"patches need at least {BLACKOUT_MAX_START + BLACKOUT_SIZE} time columns")
    starts = rng.integers(0, BLACKOUT_MAX_START + 1, size=len(mixes))
    for i, start in enumerate(starts):
        mixes[i, :, start : start + BLACKOUT_SIZE] = 0
        vocals[i, :, start : start + BLACKOUT_SIZE] = 0
    return mixes, vocals, starts


def blackout_count(n_original, n_spliced):
    """Blackout pairs needed so they form ~20% of the final set."""
    return int(np.floor((n_original + n_spliced) / 4 + 0.5))


@dataclass
class DatasetArchive:
    mixes: np.ndarray
    vocals: np.ndarray
    tags: np.ndarray
    seed: int = 0
    sample_rate: int = WORKING_RATE
    frame_size: int = FRAME_SIZE
    hop: int = HOP
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.mixes = _check_stack(self.mixes, "mixes").astype(np.float32, copy=False)
        self.vocals = _check_stack(self.vocals, "vocals").astype(np.float32, copy=False)
        self.tags = np.asarray(self.tags, dtype=np.uint8)
        if not (len(self.mixes) == len(self.vocals) == len(self.tags)):
            raise ValueError(
                f"length mismatch: {len(self.mixes)} mixes, {len(self.vocals)} vocals, "
                f"{len(self.tags)} tags"
            )

    def __len__(self):
        return len(self.tags)

    def __eq__(self, other):
        if not isinstance(other, DatasetArchive):
            return NotImplemented
        return (
            (self.seed, self.sample_rate, self.frame_size, self.hop)
            == (other.seed, other.sample_rate, other.frame_size, other.hop)
            and np.array_equal(self.tags, other.tags)
            and np.array_equal(self.mixes, other.mixes)
            and np.array_equal(self.vocals, other.vocals)
        )

    def counts(self):
        return {p.name.lower(): int(np.sum(self.tags == p)) for p in Provenance}

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return DatasetArchive(
            self.mixes[indices],
            self.vocals[indices],
            self.tags[indices],
            self.seed,
            self.sample_rate,
            self.frame_size,
            self.hop,
        )


def compose_training_set(tracks, seed, sample_rate=WORKING_RATE, frame_size=FRAME_SIZE, hop=HOP):
    """Assemble originals, spliced and blackout pairs into a shuffled archive.

    ``tracks`` is a sequence of ``(mix_patches, vocal_patches)`` stacks, one per
    song; a single ``(mix_patches, vocal_patches)`` tuple of 3-D arrays is
    treated as one song. Splicing only joins neighbours within a song.
    Blackout pairs are sampled without replacement from the originals so they
    make up about a fifth of the total.
    """
    if len(tracks) == 2 and all(np.ndim(t) == 3 for t in tracks):
        tracks = [tracks]
    mixes, vocals, spliced_m, spliced_v = [], [], [], []
    for mix, vocal in tracks:
        mix = _check_stack(mix, "mix patches")
        vocal = _check_stack(vocal, "vocal patches")
        if mix.shape != vocal.shape:
            raise ValueError(f"mix {mix.shape} and vocal {vocal.shape} stacks differ")
        mixes.append(mix)
        vocals.append(vocal)
        spliced_m.append(splice_augment(mix))
        spliced_v.append(splice_augment(vocal))
    orig_m = np.concatenate(mixes) if mixes else np.zeros((0, PATCH_FREQ, PATCH_TIME))
    orig_v = np.concatenate(vocals) if vocals else orig_m
    n = len(orig_m)
    if n == 0:
        raise ValueError("cannot compose a training set from zero original pairs")
    spl_m = np.concatenate(spliced_m)
    spl_v = np.concatenate(spliced_v)

    rng = np.random.default_rng(seed)
    n_black = blackout_count(n, len(spl_m))
    pick = np.sort(rng.choice(n, size=n_black, replace=False))
    bl_m, bl_v, _ = blackout_augment(orig_m[pick], orig_v[pick], rng)

    all_m = np.concatenate([orig_m, spl_m, bl_m]).astype(np.float32)
    all_v = np.concatenate([orig_v, spl_v, bl_v]).astype(np.float32)
    tags = np.concatenate(
        [
            np.full(n, Provenance.ORIGINAL, np.uint8),
            np.full(len(spl_m), Provenance.SPLICED, np.uint8),
            np.full(n_black, Provenance.BLACKOUT, np.uint8),
        ]
    )
    order = rng.permutation(len(tags))
    archive = DatasetArchive(all_m[order], all_v[order], tags[order], seed, sample_rate, frame_size, hop)
    total = len(tags)
    archive.metadata = {
        "counts": archive.counts(),
        "ratios": {k: v / total for k, v in archive.counts().items()},
    }
    return archive


def _reduce_axis(axis):
    return -2 if axis is Axis.FREQUENCY else -1


def normalize(x, spec):
    """Scale each slice of ``x`` by statistics taken along ``spec.axis``.

    Works on a single (F, T) grid or any stack (..., F, T). Frequency-axis
    normalization computes one statistic per time column over the frequency
    rows; time-axis normalization computes one per frequency row over time.
    Slices with zero spread map to 0 and are flagged degenerate.
    """
    x = np.asarray(x)
    if x.ndim < 2:
        raise ValueError(f"expected at least a 2-D grid, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot normalize a grid containing NaN or Inf")
    ax = _reduce_axis(spec.axis)
    if spec.scaler is Scaler.MINMAX:
        offset = x.min(axis=ax, keepdims=True)
        scale = x.max(axis=ax, keepdims=True) - offset
    else:
        p25, offset, p75 = np.percentile(x, [25, 50, 75], axis=ax, keepdims=True, method="linear")
        scale = p75 - p25
    scale = scale.astype(x.dtype, copy=False)
    offset = offset.astype(x.dtype, copy=False)
    degenerate = scale == 0
    safe = np.where(degenerate, 1, scale)
    out = np.where(degenerate, 0, (x - offset) / safe).astype(x.dtype, copy=False)
    return out, NormalizationParams(spec, offset, scale, degenerate)


def apply_normalization(x, params):
    """Normalize ``x`` with statistics computed elsewhere (e.g. from the mix)."""
    x = np.asarray(x)
    _check_params(x, params)
    safe = np.where(params.degenerate, 1, params.scale)
    return np.where(params.degenerate, 0, (x - params.offset) / safe).astype(x.dtype, copy=False)


def _check_params(x, params):
    ax = _reduce_axis(params.spec.axis)
    expected = list(x.shape)
    expected[ax] = 1
    if list(params.offset.shape) != expected:
        raise ValueError(
            f"normalization params of shape {params.offset.shape} do not fit grid {x.shape}"
        )


def denormalize(x, params):
    """Invert :func:`normalize`; degenerate slices come back as their constant."""
    x = np.asarray(x)
    _check_params(x, params)
    out = x * params.scale + params.offset
    return np.where(params.degenerate, params.offset, out).astype(x.dtype, copy=False)


def split_train_val(archive, fraction=0.1, seed=0):
    """Seeded shuffle, then hold out ``round(fraction * n)`` pairs (at least one each side)."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(archive)
    if n < 2:
        raise ValueError(f"need at least 2 pairs to split, got {n}")
    n_val = int(np.floor(fraction * n + 0.5))
    n_val = min(max(n_val, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return archive.subset(np.sort(order[n_val:])), archive.subset(np.sort(order[:n_val]))


def archive_to_bytes(a):
    parts = [
        _HEADER.pack(
            ARCHIVE_MAGIC,
            ARCHIVE_VERSION,
            len(a),
            PATCH_FREQ,
            PATCH_TIME,
            a.seed,
            a.sample_rate,
            a.frame_size,
            a.hop,
        )
    ]
    mixes = a.mixes.astype("<f4", copy=False)
    vocals = a.vocals.astype("<f4", copy=False)
    for i in range(len(a)):
        parts.append(struct.pack("<B", int(a.tags[i])))
        parts.append(mixes[i].tobytes())
        parts.append(vocals[i].tobytes())
    return b"".join(parts)


def archive_from_bytes(data):
    if len(data) < _HEADER.size:
        raise FormatError(
            f"archive truncated: expected a {_HEADER.size}-byte header, got {len(data)} bytes",
            len(data),
        )
    magic, version, count, freq, time, seed, rate, frame, hop = _HEADER.unpack_from(data, 0)
    if magic != ARCHIVE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {ARCHIVE_MAGIC!r}", 0)
    if version != ARCHIVE_VERSION:
        raise FormatError(f"unsupported archive version {version}", 4)
    if (freq, time) != (PATCH_FREQ, PATCH_TIME):
        raise FormatError(f"unsupported patch shape ({freq}, {time})", 12)
    grid = freq * time * 4
    record = 1 + 2 * grid
    expected = _HEADER.size + count * record
    if len(data) != expected:
        raise FormatError(
            f"archive size mismatch: header promises {count} pairs "
            f"({expected} bytes), file has {len(data)} bytes",
            min(len(data), expected),
        )
    body = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size).reshape(count, record)
    tags = body[:, 0].copy()
    bad = np.flatnonzero(tags > max(Provenance))
    if len(bad):
        raise FormatError(f"unknown provenance tag {tags[bad[0]]}", _HEADER.size + bad[0] * record)
    mixes = body[:, 1 : 1 + grid].copy().view("<f4").reshape(count, freq, time)
    vocals = body[:, 1 + grid :].copy().view("<f4").reshape(count, freq, time)
    return DatasetArchive(mixes, vocals, tags, seed, rate, frame, hop)


def save_archive(a, path):
    with open(path, "wb") as f:
        f.write(archive_to_bytes(a))


def load_archive(path):
    with open(path, "rb") as f:
        return archive_from_bytes(f.read())
