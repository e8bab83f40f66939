# forward_models.py

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from constants import CENTER_FRACTION_X4, CENTER_FRACTION_X8, TASKS
from file_formats import read_pbm, write_pbm
from fourier import fft2_centered, fft2_centered_node, ifft2_centered
from tensor_core import ShapeError, mul

logger = logging.getLogger(__name__)

GEOMETRIES = ("superresolution", "dealiasing", "full", "custom")


class UnsupportedOperatorError(NotImplementedError):
    """Raised for forward operators that are declared but not implemented."""


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """
    Binary Cartesian k-space mask, stored centered (DC at (H/2, W/2)).

    Every column is either fully sampled or fully skipped.
    """
    values: np.ndarray
    acceleration_factor: float
    geometry: str = "custom"
    center_fraction: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {values.shape}")
        if not np.isin(values, (0.0, 1.0)).all():
            raise ValueError("mask entries must be 0 or 1")
        if not (values == values[:1]).all():
            raise ValueError("mask must be constant along the vertical axis (column mask)")
        if self.acceleration_factor <= 0:
            raise ValueError(f"acceleration factor must be positive, got {self.acceleration_factor}")
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"unknown mask geometry '{self.geometry}'")
        object.__setattr__(self, 'values', values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def columns(self):
        return np.flatnonzero(self.values[0])

    @property
    def sampled_fraction(self):
        return float(self.values[0].mean())


@dataclass(frozen=True, eq=False)
class MeasurementSimConfig:
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be non-negative, got {self.noise_std}")


def _column_mask(shape, columns):
    height, width = shape
    row = np.zeros(width)
    row[np.asarray(columns, dtype=np.intp)] = 1.0
    return np.tile(row, (height, 1))


def _center_band(width, n_columns):
    start = width // 2 - n_columns // 2
    return np.arange(start, start + n_columns)


def make_sr_mask(shape, af):
    """
    Superresolution mask: one contiguous band of width/af low-frequency columns around DC.
    """
    height, width = shape
    if af not in (1, 2, 4, 8):
        raise ValueError(f"superresolution acceleration must be 1, 2, 4 or 8, got {af}")
    if width % af:
        raise ValueError(f"width {width} is not divisible by acceleration {af}")
    values = _column_mask(shape, _center_band(width, width // af))
    geometry = "full" if af == 1 else "superresolution"
    return SamplingMask(values, float(af), geometry)


def make_dealiasing_mask(shape, af, center_fraction=None):
    """
    Dealiasing mask: every af-th column, phased so the DC column is always sampled,
    plus a contiguous band of round(center_fraction * width) columns at the center.

    :param center_fraction: Defaults to 0.08 for af 4 and 0.04 for af 8, 0 otherwise.
    """
    height, width = shape
    af = int(af)
    if af < 1:
        raise ValueError(f"acceleration must be >= 1, got {af}")
    if center_fraction is None:
        center_fraction = {4: CENTER_FRACTION_X4, 8: CENTER_FRACTION_X8}.get(af, 0.0)
    if not 0.0 <= center_fraction < 1.0:
        raise ValueError(f"center_fraction must lie in [0, 1), got {center_fraction}")
    # Phase the regular lines on the DC column
    lines = np.flatnonzero((np.arange(width) - width // 2) % af == 0)
    band = _center_band(width, int(round(center_fraction * width)))
    values = _column_mask(shape, np.union1d(lines, band))
    geometry = "full" if af == 1 else "dealiasing"
    return SamplingMask(values, float(af), geometry, center_fraction)


def make_random_mask(shape, af, center_fraction, seed):
    """
    Random Cartesian mask: a fully sampled center band plus columns drawn independently
    so that the expected sampled fraction is 1/af.
    """
    height, width = shape
    if af < 1:
        raise ValueError(f"acceleration must be >= 1, got {af}")
    if not 0.0 <= center_fraction < 1.0:
        raise ValueError(f"center_fraction must lie in [0, 1), got {center_fraction}")
    n_low = int(round(center_fraction * width))
    # Spread the remaining budget over the columns outside the band
    prob = (width / af - n_low) / max(width - n_low, 1)
    prob = min(max(prob, 0.0), 1.0)
    rng = np.random.default_rng(seed)
    drawn = np.flatnonzero(rng.random(width) < prob)
    values = _column_mask(shape, np.union1d(drawn, _center_band(width, n_low)))
    return SamplingMask(values, float(af), "custom", center_fraction)


def full_mask(shape):
    return SamplingMask(np.ones(shape), 1.0, "full")


def make_task_mask(task, shape):
    """Mask for one of the named tasks: sr4, dealias4, sr8, dealias8, full."""
    if task == "sr4":
        return make_sr_mask(shape, 4)
    if task == "sr8":
        return make_sr_mask(shape, 8)
    if task == "dealias4":
        return make_dealiasing_mask(shape, 4, CENTER_FRACTION_X4)
    if task == "dealias8":
        return make_dealiasing_mask(shape, 8, CENTER_FRACTION_X8)
    if task == "full":
        return full_mask(shape)
    raise ValueError(f"unknown task '{task}', expected one of {', '.join(TASKS)}")


def save_mask(mask, path):
    comments = [f"af={mask.acceleration_factor:g}",
                f"geometry={mask.geometry}",
                f"center_fraction={mask.center_fraction:g}"]
    write_pbm(path, mask.values.astype(np.uint8), comments)


def load_mask(path):
    bits, comments = read_pbm(path)
    meta = {}
    # Header comments carry the mask metadata as key=value
    for comment in comments:
        key, _, value = comment.partition('=')
        meta[key.strip()] = value.strip()
    # Older files without metadata: infer af from the sampled fraction
    af = float(meta.get('af', 1.0 / max(bits[0].mean(), 1e-12)))
    return SamplingMask(bits.astype(np.float64), af,
                        meta.get('geometry', 'custom'),
                        float(meta.get('center_fraction', 0.0)))


# Masked Fourier forward model

def _check_mask_shape(x_shape, mask):
    if tuple(x_shape) != mask.shape:
        raise ShapeError(f"image shape {tuple(x_shape)} does not match mask shape {mask.shape}")


def apply_masked_fourier(x, mask):
    """
    y = Φ⁻¹(S ⊙ Φx) for a real or complex (H, W) image.
    """
    x = np.asarray(x)
    _check_mask_shape(x.shape, mask)
    return ifft2_centered(mask.values * fft2_centered(x))


def masked_spectrum_node(x_planar, mask):
    """Graph op: S ⊙ Φx on a planar (2, H, W) image."""
    _check_mask_shape(x_planar.shape[1:], mask)
    return mul(fft2_centered_node(x_planar), np.stack([mask.values, mask.values]))


def simulate_measurement(x, mask, cfg=None):
    """
    y = F(x) + η with i.i.d. Gaussian η on the real and imaginary parts.

    :param x: Latent (H, W) image.
    :param mask: SamplingMask.
    :param cfg: MeasurementSimConfig; noise-free when omitted.
    """
    cfg = cfg or MeasurementSimConfig()
    y = apply_masked_fourier(x, mask)
    if cfg.noise_std > 0:
        rng = np.random.default_rng(cfg.seed)
        # Independent draws for the real and imaginary parts
        noise = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + cfg.noise_std * noise
    return y


# Catalog of simple linear operators

class OperatorKind(str, Enum):
    IDENTITY = "identity"
    INPAINTING_MASK = "inpainting_mask"
    GAUSSIAN_RANDOM = "gaussian_random"
    MASKED_FOURIER = "masked_fourier"
    RADON = "radon"


@dataclass(frozen=True, eq=False)
class LinearOperatorSpec:
    kind: OperatorKind
    observed: Optional[np.ndarray] = field(default=None, repr=False)  # inpainting: 1 = kept
    m: int = 0
    n: int = 0
    seed: int = 0
    sampling_mask: Optional[SamplingMask] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'kind', OperatorKind(self.kind))
        if self.kind is OperatorKind.GAUSSIAN_RANDOM:
            if not 1 <= self.m <= self.n:
                raise ValueError(f"gaussian_random needs 1 <= m <= n, got m={self.m}, n={self.n}")
        elif self.kind is OperatorKind.INPAINTING_MASK and self.observed is None:
            raise ValueError("inpainting_mask needs an 'observed' array")
        elif self.kind is OperatorKind.MASKED_FOURIER and self.sampling_mask is None:
            raise ValueError("masked_fourier needs a sampling_mask")

    def matrix(self):
        """Dense m x n matrix of a gaussian_random operator, entries N(0, 1) / sqrt(m)."""
        rng = np.random.default_rng(self.seed)
        return rng.standard_normal((self.m, self.n)) / np.sqrt(self.m)


def _check_vector(x, n):
    x = np.asarray(x).reshape(-1)
    if x.size != n:
        raise ShapeError(f"operator expects {n} entries, got {x.size}")
    return x


def apply_linear(op, x):
    kind = op.kind
    if kind is OperatorKind.IDENTITY:
        return np.array(x, copy=True)
    if kind is OperatorKind.INPAINTING_MASK:
        x = np.asarray(x)
        if x.shape != op.observed.shape:
            raise ShapeError(f"inpainting mask shape {op.observed.shape} does not match {x.shape}")
        return x * op.observed
    if kind is OperatorKind.GAUSSIAN_RANDOM:
        return op.matrix() @ _check_vector(x, op.n)
    if kind is OperatorKind.MASKED_FOURIER:
        return apply_masked_fourier(x, op.sampling_mask)
    raise UnsupportedOperatorError(f"unsupported operator: {kind.value}")


def adjoint(op, y):
    kind = op.kind
    if kind is OperatorKind.IDENTITY:
        return np.array(y, copy=True)
    if kind is OperatorKind.INPAINTING_MASK:
        y = np.asarray(y)
        if y.shape != op.observed.shape:
            raise ShapeError(f"inpainting mask shape {op.observed.shape} does not match {y.shape}")
        return y * op.observed
    if kind is OperatorKind.GAUSSIAN_RANDOM:
        return op.matrix().T @ _check_vector(y, op.m)
    if kind is OperatorKind.MASKED_FOURIER:
        # Orthogonal projection under an orthonormal transform: self-adjoint
        return apply_masked_fourier(y, op.sampling_mask)
    raise UnsupportedOperatorError(f"unsupported operator: {kind.value}")
