# prior_net.py

import logging
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from constants import BASE_CHANNELS, KERNEL_SIZE, LEAKY_SLOPE, SCALES
from file_formats import read_checkpoint, write_checkpoint
from fourier import to_planar
from tensor_core import (
    DiffTensor, NetParams, ShapeError, concat, constant, conv2d, instance_norm,
    leaky_relu, sigmoid, upsample_nearest,
)

logger = logging.getLogger(__name__)

INPUT_MODES = ("measurement", "meshgrid", "stacked")
INPUT_CHANNELS = {"measurement": 2, "meshgrid": 2, "stacked": 4}
OUTPUT_ACTIVATIONS = ("sigmoid", "linear")


@dataclass(frozen=True)
class NetConfig:
    scales: int = SCALES
    base_channels: int = BASE_CHANNELS
    kernel_size: int = KERNEL_SIZE
    leaky_slope: float = LEAKY_SLOPE
    input_mode: str = "stacked"
    seed: int = 0
    use_norm: bool = False
    in_channels: Optional[int] = None  # overrides the channel count implied by input_mode
    output_activation: str = "sigmoid"  # applied after the linear head; images live in [0, 1]

    def __post_init__(self):
        if self.scales < 1:
            raise ValueError(f"scales must be >= 1, got {self.scales}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if not 0.0 <= self.leaky_slope <= 1.0:
            raise ValueError(f"leaky_slope must lie in [0, 1], got {self.leaky_slope}")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {', '.join(INPUT_MODES)}, got '{self.input_mode}'")
        if self.in_channels is not None and self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {', '.join(OUTPUT_ACTIVATIONS)}, "
                             f"got '{self.output_activation}'")

    @property
    def input_channels(self):
        return self.in_channels if self.in_channels is not None else INPUT_CHANNELS[self.input_mode]

    def channels(self, level):
        return self.base_channels * 2 ** level


def build_network(cfg):
    """
    Create the parameters of a U-Net style encoder-decoder.

    Encoder: two convolutions at full resolution, then `scales` stages of a
    stride-2 convolution followed by a convolution, doubling the width each stage.
    Decoder: nearest-neighbour upsampling, a convolution, concatenation with the
    matching encoder output and a merging convolution. A 1x1 linear head gives one channel,
    squashed into (0, 1) by a sigmoid unless the config asks for the raw head output.
    Kernels are drawn from N(0, 2 / fan_in); biases start at zero.
    """
    rng = np.random.default_rng(cfg.seed)
    params = NetParams(config=cfg)
    k = cfg.kernel_size

    def add_conv(name, c_in, c_out, size):
        fan_in = c_in * size * size
        params.add(f"{name}.weight", rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, size, size)))
        params.add(f"{name}.bias", np.zeros(c_out))

    add_conv("enc0.conv1", cfg.input_channels, cfg.channels(0), k)
    add_conv("enc0.conv2", cfg.channels(0), cfg.channels(0), k)
    for level in range(1, cfg.scales + 1):
        add_conv(f"enc{level}.down", cfg.channels(level - 1), cfg.channels(level), k)
        add_conv(f"enc{level}.conv", cfg.channels(level), cfg.channels(level), k)
    for level in range(cfg.scales - 1, -1, -1):
        add_conv(f"dec{level}.up", cfg.channels(level + 1), cfg.channels(level), k)
        add_conv(f"dec{level}.merge", 2 * cfg.channels(level), cfg.channels(level), k)
    add_conv("head", cfg.channels(0), 1, 1)

    logger.debug("Built network with %d tensors, %d parameters", len(params), params.count())
    return params


def net_forward(params, input):
    """
    Run I_θ on a (C, H, W) input.

    :param params: NetParams from build_network (its config fixes the architecture).
    :param input: DiffTensor with the configured channel count; H and W divisible by 2**scales.
    :return: (1, H, W) DiffTensor, differentiable w.r.t. params and input.
    """
    cfg = params.config
    if input.ndim != 3 or input.shape[0] != cfg.input_channels:
        raise ShapeError(f"network expects ({cfg.input_channels}, H, W) input, got {input.shape}")
    factor = 2 ** cfg.scales
    if input.shape[1] % factor or input.shape[2] % factor:
        raise ShapeError(f"input size {input.shape[1:]} is not divisible by {factor}")
    pad = cfg.kernel_size // 2

    def block(name, x, stride=1):
        y = conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=stride, padding=pad)
        if cfg.use_norm:
            y = instance_norm(y)
        return leaky_relu(y, cfg.leaky_slope)

    # Encoder; every level's output is kept for the decoder
    h = block("enc0.conv1", input)
    h = block("enc0.conv2", h)
    skips = [h]
    for level in range(1, cfg.scales + 1):
        h = block(f"enc{level}.down", h, stride=2)
        h = block(f"enc{level}.conv", h)
        skips.append(h)

    # Decoder; upsampled features first, skip second
    for level in range(cfg.scales - 1, -1, -1):
        h = upsample_nearest(h, 2)
        h = block(f"dec{level}.up", h)
        h = concat([h, skips[level]])
        h = block(f"dec{level}.merge", h)

    out = conv2d(h, params["head.weight"], params["head.bias"])
    if cfg.output_activation == "sigmoid":
        out = sigmoid(out)
    return out


def meshgrid_input(shape):
    """Two coordinate ramps in [0, 1]: channel 0 varies down the rows, channel 1 across the columns."""
    height, width = shape
    rows = np.linspace(0.0, 1.0, height)[:, None] * np.ones((1, width))
    cols = np.ones((height, 1)) * np.linspace(0.0, 1.0, width)[None, :]
    return np.stack([rows, cols])


def make_input(mode, y=None, shape=None, seed=0, jitter=0.0):
    """
    Build the network input for one of the three input modes.

    :param mode: 'measurement' (real, imag of y), 'meshgrid' (coordinate ramps) or 'stacked' (both).
    :param y: Complex (H, W) measurement, or a planar (2, H, W) DiffTensor to keep the graph.
    :param shape: Spatial shape; taken from y when omitted.
    :param seed: Seed for the meshgrid jitter.
    :param jitter: Std of Gaussian noise added to the meshgrid channels.
    """
    if mode not in INPUT_MODES:
        raise ValueError(f"unknown input mode '{mode}'")
    if y is None and mode != "meshgrid":
        raise ValueError(f"input mode '{mode}' needs a measurement")

    if isinstance(y, DiffTensor):
        y_node = y
    elif y is not None:
        y_node = constant(to_planar(y))
    else:
        y_node = None
    if y_node is not None:
        if y_node.ndim != 3 or y_node.shape[0] != 2:
            raise ShapeError(f"measurement must be planar (2, H, W), got {y_node.shape}")
        if shape is not None and tuple(shape) != y_node.shape[1:]:
            raise ShapeError(f"shape {tuple(shape)} does not match measurement {y_node.shape[1:]}")
        shape = y_node.shape[1:]
    if shape is None:
        raise ValueError("meshgrid input needs a shape")
    if mode == "measurement":
        return y_node

    grid = meshgrid_input(shape)
    if jitter > 0:
        grid = grid + jitter * np.random.default_rng(seed).standard_normal(grid.shape)
    if mode == "meshgrid":
        return constant(grid, name="meshgrid")
    return concat([y_node, constant(grid, name="meshgrid")])


def save_checkpoint(params, path):
    cfg = asdict(params.config)
    header = ["config " + " ".join(f"{key}={value}" for key, value in cfg.items()),
              f"adam_steps {params.t}"]
    write_checkpoint(path, params.snapshot(), header)
    logger.info("Saved %d parameter tensors to %s", len(params), path)


def _parse_config(text):
    types = {f.name: f.type for f in fields(NetConfig)}
    values = {}
    for item in text.split():
        key, _, raw = item.partition('=')
        if key not in types:
            raise ValueError(f"unknown network config key '{key}' in checkpoint")
        if raw == "None":
            values[key] = None
        elif types[key] is bool:
            values[key] = raw == "True"
        elif types[key] in (int, Optional[int]):
            values[key] = int(raw)
        elif types[key] is float:
            values[key] = float(raw)
        else:
            values[key] = raw
    return NetConfig(**values)


def load_checkpoint(path):
    """Rebuild a frozen network from a checkpoint; optimizer state starts fresh."""
    header, arrays = read_checkpoint(path)
    cfg = None
    for line in header:
        if line.startswith("config"):
            cfg = _parse_config(line[len("config"):])
    if cfg is None:
        raise ValueError(f"{path}: checkpoint has no network config")
    params = build_network(cfg)
    if set(arrays) != set(params.names()):
        raise ValueError(f"{path}: checkpoint tensors do not match the configured network")
    params.load_values(arrays)
    return params
