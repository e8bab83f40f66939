# file_formats.py

from collections import OrderedDict

import numpy as np

from constants import PGM_MAXVAL

CHECKPOINT_MAGIC = "SSLRECON-CHECKPOINT 1"


class FormatError(ValueError):
    """Raised for malformed or truncated files."""


def read_exact(stream, n):
    """
    Read exactly n bytes from a binary stream.

    Raises FormatError if EOF is hit first.
    """
    data = b''
    while len(data) < n:
        chunk = stream.read(n - len(data))
        if not chunk:
            raise FormatError(f"unexpected end of file: wanted {n} bytes, got {len(data)}")
        data += chunk
    return data


def _read_line(stream):
    line = stream.readline()
    if not line:
        raise FormatError("unexpected end of file while reading header")
    return line.decode('ascii').rstrip('\n')


def _read_netpbm_tokens(stream, count):
    """Read whitespace-separated header tokens, skipping '#' comments."""
    tokens = []
    comments = []
    while len(tokens) < count:
        line = _read_line(stream)
        if line.startswith('#'):
            comments.append(line[1:].strip())
            continue
        tokens.extend(line.split())
    return tokens, comments


# 16-bit PGM (P5)

def write_pgm(path, image, maxval=PGM_MAXVAL):
    """
    Write a 2-D image with values in [0, 1] as binary PGM; values outside are clipped.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise FormatError(f"PGM images must be 2-D, got shape {image.shape}")
    # Big-endian samples when maxval needs two bytes
    levels = np.round(np.clip(image, 0.0, 1.0) * maxval)
    dtype = '>u2' if maxval > 255 else 'u1'
    with open(path, 'wb') as f:
        f.write(f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode('ascii'))
        f.write(levels.astype(dtype).tobytes())


def read_pgm(path):
    with open(path, 'rb') as f:
        magic = _read_line(f).strip()
        if magic != 'P5':
            raise FormatError(f"{path}: not a binary PGM (magic {magic!r})")
        tokens, _ = _read_netpbm_tokens(f, 3)
        width, height, maxval = (int(t) for t in tokens[:3])
        dtype = '>u2' if maxval > 255 else 'u1'
        itemsize = 2 if maxval > 255 else 1
        data = read_exact(f, width * height * itemsize)
    return np.frombuffer(data, dtype=dtype).reshape(height, width).astype(np.float64) / maxval


# Raw float64 with "H W" or "H W C" text header

def write_raw(path, array):
    """
    Write little-endian float64 planes after a one-line header.

    A 2-D array gets the header "H W"; a (C, H, W) stack gets "H W C".
    """
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 2:
        header = f"{array.shape[0]} {array.shape[1]}\n"
    elif array.ndim == 3:
        header = f"{array.shape[1]} {array.shape[2]} {array.shape[0]}\n"
    else:
        raise FormatError(f"raw arrays must be 2-D or 3-D, got shape {array.shape}")
    with open(path, 'wb') as f:
        f.write(header.encode('ascii'))
        # Planes are stored one after another
        f.write(np.ascontiguousarray(array).astype('<f8').tobytes())


def read_raw(path):
    with open(path, 'rb') as f:
        try:
            dims = [int(t) for t in _read_line(f).split()]
        except ValueError as e:
            raise FormatError(f"{path}: bad raw header: {e}")
        if len(dims) not in (2, 3):
            raise FormatError(f"{path}: raw header must be 'H W' or 'H W C'")
        height, width = dims[:2]
        planes = dims[2] if len(dims) == 3 else 1
        data = read_exact(f, height * width * planes * 8)
    array = np.frombuffer(data, dtype='<f8').astype(np.float64)
    if len(dims) == 3:
        return array.reshape(planes, height, width)
    return array.reshape(height, width)


# Plain PBM (P1)

def write_pbm(path, bits, comments=()):
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise FormatError(f"PBM bitmaps must be 2-D, got shape {bits.shape}")
    lines = ["P1"]
    lines.extend(f"# {c}" for c in comments)
    lines.append(f"{bits.shape[1]} {bits.shape[0]}")
    for row in bits.astype(np.uint8):
        lines.append(' '.join(str(int(v)) for v in row))
    with open(path, 'w') as f:
        f.write('\n'.join(lines) + '\n')


def read_pbm(path):
    """Return (bits, comments) from a plain PBM file."""
    with open(path, 'rb') as f:
        magic = _read_line(f).strip()
        if magic != 'P1':
            raise FormatError(f"{path}: not a plain PBM (magic {magic!r})")
        tokens, comments = _read_netpbm_tokens(f, 2)
        width, height = int(tokens[0]), int(tokens[1])
        # Pixels may already sit on the size line
        pixels = [t for t in tokens[2:]]
        for line in f.read().decode('ascii').splitlines():
            if line.startswith('#'):
                continue
            # P1 allows packed digits without separators
            pixels.extend(line.replace(' ', '').replace('\t', ''))
    if len(pixels) < width * height:
        raise FormatError(f"{path}: expected {width * height} pixels, found {len(pixels)}")
    bits = np.array([int(p) for p in pixels[:width * height]], dtype=np.uint8)
    return bits.reshape(height, width), comments


# Parameter checkpoints

def write_checkpoint(path, arrays, header_lines=()):
    """
    Store named float64 arrays: a text header listing names and shapes, then the raw data.

    :param arrays: Ordered mapping of name -> array.
    :param header_lines: Extra free-form lines written before the tensor list.
    """
    lines = [CHECKPOINT_MAGIC]
    lines.extend(header_lines)
    for name, array in arrays.items():
        if ' ' in name:
            raise FormatError(f"tensor name may not contain spaces: {name!r}")
        lines.append(f"tensor {name} {','.join(str(d) for d in array.shape)}")
    lines.append("end")
    with open(path, 'wb') as f:
        f.write(('\n'.join(lines) + '\n').encode('ascii'))
        for array in arrays.values():
            f.write(np.ascontiguousarray(array, dtype=np.float64).astype('<f8').tobytes())


def read_checkpoint(path):
    """Return (header_lines, OrderedDict of name -> array)."""
    with open(path, 'rb') as f:
        if _read_line(f) != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint file")
        header_lines = []
        shapes = OrderedDict()
        while True:
            line = _read_line(f)
            if line == "end":
                break
            if line.startswith("tensor "):
                _, name, dims = line.split(' ')
                shapes[name] = tuple(int(d) for d in dims.split(',') if d)
            else:
                header_lines.append(line)
        # Data follows the header in listing order
        arrays = OrderedDict()
        for name, shape in shapes.items():
            size = int(np.prod(shape)) if shape else 1
            data = read_exact(f, size * 8)
            arrays[name] = np.frombuffer(data, dtype='<f8').astype(np.float64).reshape(shape)
    return header_lines, arrays
