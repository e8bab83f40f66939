# config.py

import logging
import os
from dataclasses import dataclass, fields, replace
from typing import Optional, get_type_hints

from constants import (
    BASE_CHANNELS, KERNEL_SIZE, LEAKY_SLOPE, LEARNING_RATE, LOG_EVERY, MAX_ITERS,
    OUTPUT_ROOT_ENV, PLATEAU_TOL, PLATEAU_WINDOW, SCALES, TV_ITERS, TV_WEIGHT,
)
from prior_net import NetConfig
from solvers import FitConfig, LossWeights, task_preset

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for unknown keys, unparsable values or a missing seed."""


@dataclass(frozen=True)
class RunConfig:
    seed: Optional[int] = None
    task: str = "sr4"
    method: str = "ssl"
    # loss weights; unset ones come from the task preset
    alpha: Optional[float] = None
    beta: Optional[float] = None
    gamma: Optional[float] = None
    # network
    scales: int = SCALES
    base_channels: int = BASE_CHANNELS
    kernel_size: int = KERNEL_SIZE
    leaky_slope: float = LEAKY_SLOPE
    input_mode: Optional[str] = None
    use_norm: bool = False
    output_activation: str = "sigmoid"
    # fitting
    max_iters: int = MAX_ITERS
    lr: float = LEARNING_RATE
    log_every: int = LOG_EVERY
    track_best: bool = True
    early_stop: bool = False
    plateau_window: int = PLATEAU_WINDOW
    plateau_tol: float = PLATEAU_TOL
    input_jitter: float = 0.0
    progress: bool = False
    # TV baseline
    tv_weight: float = TV_WEIGHT
    tv_iters: int = TV_ITERS
    # supervised-apply
    checkpoint: Optional[str] = None

    def loss_weights(self):
        return LossWeights(self.alpha, self.beta, self.gamma)

    def net_config(self):
        return NetConfig(scales=self.scales, base_channels=self.base_channels,
                         kernel_size=self.kernel_size, leaky_slope=self.leaky_slope,
                         input_mode=self.input_mode, seed=self.seed, use_norm=self.use_norm,
                         output_activation=self.output_activation)

    def fit_config(self):
        return FitConfig(max_iters=self.max_iters, lr=self.lr, seed=self.seed,
                         track_best=self.track_best, log_every=self.log_every,
                         early_stop=self.early_stop, plateau_window=self.plateau_window,
                         plateau_tol=self.plateau_tol, input_jitter=self.input_jitter, progress=self.progress)

    def echo(self):
        """Sorted `key = value` lines of every field."""
        return '\n'.join(f"{f.name} = {getattr(self, f.name)}" for f in sorted(fields(self), key=lambda f: f.name))


_TYPES = get_type_hints(RunConfig)


def parse_value(key, raw):
    """Convert a raw string to the type of the RunConfig field `key`."""
    if key not in _TYPES:
        raise ConfigError(f"unknown config key '{key}'")
    kind = _TYPES[key]
    raw = raw.strip()
    optional = kind in (Optional[int], Optional[float], Optional[str])
    if optional and raw in ("", "None", "none"):
        return None
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if kind in (int, Optional[int]):
            return int(raw)
        if kind in (float, Optional[float]):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for '{key}': {raw!r}")
    return raw


def read_config_file(path):
    """
    Parse `key = value` lines; blank lines and '#' comments are skipped.

    :return: dict of typed values
    """
    values = {}
    with open(path, 'r') as f:
        for number, line in enumerate(f, start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition('=')
            if not sep:
                raise ConfigError(f"{path}:{number}: expected 'key = value', got {line!r}")
            values[key.strip()] = parse_value(key.strip(), raw)
    return values


def resolve_config(path=None, overrides=None):
    """
    Merge a config file with flag overrides (flags win) and fill preset-driven fields.

    :param path: Optional config file.
    :param overrides: dict of field -> value; None values mean "not given".
    :return: RunConfig with every field resolved.
    """
    values = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key '{key}'")
        if value is not None:
            values[key] = value
    if values.get("seed") is None:
        raise ConfigError("a seed is required (set 'seed' in the config file or pass --seed)")

    try:
        cfg = RunConfig(**values)
        preset_weights, preset_mode = task_preset(cfg.task)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e))
    filled = {}
    for name, preset in zip(("alpha", "beta", "gamma"), preset_weights.as_tuple()):
        if getattr(cfg, name) is None:
            filled[name] = preset
    if cfg.input_mode is None:
        filled["input_mode"] = preset_mode
    cfg = replace(cfg, **filled)

    try:
        cfg.loss_weights()
        cfg.net_config()
        cfg.fit_config()
    except ValueError as e:
        raise ConfigError(str(e))
    logger.debug("Resolved configuration:\n%s", cfg.echo())
    return cfg


def output_path(path):
    """Re-root a relative output path under $SSLRECON_OUTPUT_ROOT and create its directory."""
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        path = os.path.join(root, path)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    return path
