# data_eval.py

import csv
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import correlate2d

from constants import (
    MAX_ELLIPSES, MIN_ELLIPSES, MIN_PHANTOM_SIZE, PSNR_CAP,
    SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
)
from file_formats import FormatError, read_pgm, read_raw, write_pgm, write_raw
from forward_models import MeasurementSimConfig, simulate_measurement
from fourier import is_power_of_two
from tensor_core import ShapeError

logger = logging.getLogger(__name__)

PHANTOM_KINDS = ("ellipses", "shepp_logan_like")
TASK_TAGS = ("sr4", "dealias4", "sr8", "dealias8", "full")

# (intensity, semi-axis a, semi-axis b, x0, y0, angle in degrees)
SHEPP_LOGAN_TABLE = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0),
]


@dataclass(frozen=True)
class EvalRecord:
    task: str
    method: str
    psnr: float
    ssim: float
    path: Optional[str] = None

    def __post_init__(self):
        if not -1.0 <= self.ssim <= 1.0:
            raise ValueError(f"ssim must lie in [-1, 1], got {self.ssim}")


# Phantoms

def _ellipse(X, Y, a, b, x0, y0, angle):
    cos, sin = np.cos(angle), np.sin(angle)
    u = (X - x0) * cos + (Y - y0) * sin
    v = -(X - x0) * sin + (Y - y0) * cos
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def make_phantom(size, kind="ellipses", seed=0):
    """
    Synthetic piecewise-smooth test image with values in [0, 1].

    :param size: Power of two, at least 32.
    :param kind: 'ellipses' (5-12 random ellipses on a smooth field) or 'shepp_logan_like'
                 (the modified Shepp-Logan table with small seeded perturbations).
    :param seed: Deterministic seed.
    """
    if not is_power_of_two(size) or size < MIN_PHANTOM_SIZE:
        raise ValueError(f"phantom size must be a power of two >= {MIN_PHANTOM_SIZE}, got {size}")
    if kind not in PHANTOM_KINDS:
        raise ValueError(f"unknown phantom kind '{kind}', expected one of {', '.join(PHANTOM_KINDS)}")

    rng = np.random.default_rng(seed)
    axis = np.linspace(-1.0, 1.0, size)
    X, Y = np.meshgrid(axis, -axis)
    image = np.zeros((size, size))

    if kind == "ellipses":
        count = int(rng.integers(MIN_ELLIPSES, MAX_ELLIPSES + 1))
        # A large body first so the image is never empty
        image[_ellipse(X, Y, rng.uniform(0.7, 0.9), rng.uniform(0.7, 0.9),
                       rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                       rng.uniform(0, np.pi))] += rng.uniform(0.3, 0.5)
        for _ in range(count - 1):
            a, b = rng.uniform(0.08, 0.45, size=2)
            x0, y0 = rng.uniform(-0.55, 0.55, size=2)
            image[_ellipse(X, Y, a, b, x0, y0, rng.uniform(0, np.pi))] += rng.uniform(-0.25, 0.5)
        # Smooth multiplicative shading
        gx, gy = rng.uniform(-0.15, 0.15, size=2)
        image *= 1.0 + gx * X + gy * Y
    else:
        # Seeded jitter on every ellipse
        for intensity, a, b, x0, y0, angle in SHEPP_LOGAN_TABLE:
            dx, dy = rng.uniform(-0.01, 0.01, size=2)
            gain = 1.0 + rng.uniform(-0.1, 0.1)
            image[_ellipse(X, Y, a, b, x0 + dx, y0 + dy, np.radians(angle))] += intensity * gain

    return np.clip(image, 0.0, 1.0)


# Metrics

def _data_range(ref, data_range):
    if data_range is None:
        data_range = float(np.max(ref))
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    return data_range


def _check_pair(ref, test):
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ShapeError(f"image shapes differ: {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref, test, data_range=None):
    """
    Peak signal-to-noise ratio in dB, capped at 100 dB.

    :param data_range: Peak value; defaults to max(ref).
    """
    ref, test = _check_pair(ref, test)
    data_range = _data_range(ref, data_range)
    mse = np.mean((ref - test) ** 2)
    # Identical images
    if mse == 0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(data_range ** 2 / mse), PSNR_CAP))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    offsets = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(ref, test, data_range=None):
    """
    Mean structural similarity over all fully contained 11x11 Gaussian windows.
    """
    ref, test = _check_pair(ref, test)
    if ref.ndim != 2 or min(ref.shape) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs a 2-D image of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {ref.shape}")
    data_range = _data_range(ref, data_range)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    window = gaussian_window()

    def filt(image):
        return correlate2d(image, window, mode='valid')

    # Windowed first and second moments
    mu1 = filt(ref)
    mu2 = filt(test)
    sigma1_sq = filt(ref * ref) - mu1 ** 2
    sigma2_sq = filt(test * test) - mu2 ** 2
    sigma12 = filt(ref * test) - mu1 * mu2
    # Combined luminance and structure terms per window
    ssim_map = ((2 * mu1 * mu2 + c1) * (2 * sigma12 + c2)) / \
        ((mu1 ** 2 + mu2 ** 2 + c1) * (sigma1_sq + sigma2_sq + c2))
    return float(np.clip(ssim_map.mean(), -1.0, 1.0))


def evaluate(ref, test, data_range=None):
    """(psnr, ssim) of test against ref with a shared data range."""
    data_range = _data_range(np.asarray(ref), data_range)
    return psnr(ref, test, data_range), ssim(ref, test, data_range)


# Datasets

def build_dataset(n, size, mask, seed, kind="ellipses", noise_std=0.0):
    """
    Simulate n aligned (x, y) pairs; every item gets its own phantom and noise seeds.
    """
    if n < 1:
        raise ValueError(f"dataset size must be >= 1, got {n}")
    pairs = []
    # Independent phantom and noise streams per item
    for child in np.random.SeedSequence(seed).spawn(n):
        phantom_seed, noise_seed = (int(s) for s in child.generate_state(2))
        x = make_phantom(size, kind, phantom_seed)
        y = simulate_measurement(x, mask, MeasurementSimConfig(noise_std, noise_seed))
        pairs.append((x, y))
    return pairs


# Image files

def save_image(path, image):
    """Write by extension: .pgm (16-bit, clipped to [0, 1]) or .raw (float64)."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        write_pgm(path, image)
    elif ext == ".raw":
        write_raw(path, image)
    else:
        raise FormatError(f"unsupported image extension '{ext}' (use .pgm or .raw)")


def load_image(path):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        return read_pgm(path)
    if ext == ".raw":
        image = read_raw(path)
        if image.ndim != 2:
            raise FormatError(f"{path}: expected a single-plane image, got shape {image.shape}")
        return image
    raise FormatError(f"unsupported image extension '{ext}' (use .pgm or .raw)")


def write_eval_csv(records, path, columns=("task", "method", "psnr", "ssim"), append=False):
    """
    Write EvalRecords as CSV with a header row; appending to an existing file skips the header.
    """
    # Only write the header into a new or empty file
    exists = append and os.path.exists(path) and os.path.getsize(path) > 0
    with open(path, 'a' if append else 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        if not exists:
            writer.writerow(columns)
        for record in records:
            row = []
            for column in columns:
                value = getattr(record, column)
                row.append(f"{value:.6f}" if isinstance(value, float) else value)
            writer.writerow(row)
