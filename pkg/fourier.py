# fourier.py

import functools

import numpy as np

from tensor_core import ShapeError, concat, constant, graph_node


class TransformSizeError(ValueError):
    """Raised when a transform is asked for a size the radix-2 FFT cannot handle."""


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def _check_shape(shape):
    if len(shape) < 2:
        raise TransformSizeError(f"need at least 2 dimensions, got shape {shape}")
    h, w = shape[-2:]
    if not (is_power_of_two(h) and is_power_of_two(w)):
        raise TransformSizeError(f"height and width must be powers of two, got {h}x{w}")


@functools.lru_cache(maxsize=None)
def _bit_reversed_indices(n):
    bits = n.bit_length() - 1
    indices = np.arange(n)
    reversed_indices = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        reversed_indices |= ((indices >> b) & 1) << (bits - 1 - b)
    return reversed_indices


@functools.lru_cache(maxsize=None)
def _twiddles(size, sign):
    half = size // 2
    return np.exp(sign * 2j * np.pi * np.arange(half) / size)


def _fft_last_axis(a, sign):
    """
    Unnormalized radix-2 decimation-in-time FFT along the last axis.

    :param a: Complex array whose last dimension is a power of two.
    :param sign: -1 for the forward transform, +1 for the inverse.
    """
    n = a.shape[-1]
    # Inputs go in bit-reversed order so the butterflies can run in place
    out = np.ascontiguousarray(a[..., _bit_reversed_indices(n)], dtype=np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        # One row of blocks per butterfly group of this stage
        blocks = out.reshape(out.shape[:-1] + (n // size, size))
        odd = blocks[..., half:] * _twiddles(size, sign)
        even = blocks[..., :half].copy()
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2
    return out


def _fft2(a, sign):
    # Rows first, then columns; orthonormal scaling applied once at the end
    out = _fft_last_axis(a, sign)
    out = np.swapaxes(_fft_last_axis(np.swapaxes(out, -1, -2), sign), -1, -2)
    h, w = a.shape[-2:]
    return out / np.sqrt(h * w)


def fftshift(ks):
    """Move the zero-frequency bin from (0, 0) to (H // 2, W // 2)."""
    h, w = ks.shape[-2:]
    return np.roll(ks, (h // 2, w // 2), axis=(-2, -1))


def ifftshift(ks):
    """Inverse of fftshift; identical to it on even dimensions."""
    h, w = ks.shape[-2:]
    return np.roll(ks, (-(h // 2), -(w // 2)), axis=(-2, -1))


def fft2_centered(img):
    """
    Orthonormal 2-D DFT with the origin at the grid center in both domains.

    :param img: Real or complex array (..., H, W) with power-of-two H and W.
    :return: Complex spectrum, DC coefficient at (H / 2, W / 2).
    """
    img = np.asarray(img)
    _check_shape(img.shape)
    # Shift the origin to (0, 0), transform, then shift back
    return fftshift(_fft2(ifftshift(img), -1))


def ifft2_centered(ks):
    """Exact inverse (and adjoint) of fft2_centered."""
    ks = np.asarray(ks)
    _check_shape(ks.shape)
    return fftshift(_fft2(ifftshift(ks), +1))


def hermitian_partner(array):
    """
    Reflect a centered array through the DC bin: out[h, w] = array[(H - h) % H, (W - w) % W].

    For a real image x, fft2_centered(x) equals the conjugate of its own partner.
    """
    return np.roll(array[..., ::-1, ::-1], (1, 1), axis=(-2, -1))


# Complex images as 2-channel planar tensors (real, imag)

def to_planar(z):
    z = np.asarray(z)
    return np.stack([z.real, z.imag]).astype(np.float64)


def from_planar(planes):
    planes = np.asarray(planes)
    if planes.ndim != 3 or planes.shape[0] != 2:
        raise ShapeError(f"planar complex data must be (2, H, W), got {planes.shape}")
    return planes[0] + 1j * planes[1]


def real_to_complex(x):
    """Graph op: a 1-channel real image becomes a 2-channel planar complex image."""
    if x.ndim != 3 or x.shape[0] != 1:
        raise ShapeError(f"expected a (1, H, W) real image, got {x.shape}")
    return concat([x, constant(np.zeros(x.shape))])


def _planar_transform_node(t, forward, adjoint):
    if t.ndim != 3 or t.shape[0] != 2:
        raise ShapeError(f"transform node expects planar (2, H, W) input, got {t.shape}")
    out = to_planar(forward(from_planar(t.values)))

    def backward_fn(g):
        # Unitary map: the adjoint is the inverse
        return (to_planar(adjoint(from_planar(g))),)

    return graph_node(out, (t,), backward_fn)


def fft2_centered_node(t):
    """Differentiable Φ on a planar (2, H, W) DiffTensor."""
    return _planar_transform_node(t, fft2_centered, ifft2_centered)


def ifft2_centered_node(t):
    """Differentiable Φ⁻¹ on a planar (2, H, W) DiffTensor."""
    return _planar_transform_node(t, ifft2_centered, fft2_centered)
