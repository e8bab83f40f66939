# solvers.py

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from tqdm import tqdm

from constants import (
    LEARNING_RATE, LOG_EVERY, MAX_ITERS, PLATEAU_TOL, PLATEAU_WINDOW,
    TV_ITERS, TV_WEIGHT, WEIGHTS_X4, WEIGHTS_X8,
)
from data_eval import evaluate
from forward_models import apply_masked_fourier, masked_spectrum_node
from fourier import (
    fft2_centered, hermitian_partner, ifft2_centered, ifft2_centered_node,
    real_to_complex, to_planar,
)
from prior_net import NetConfig, build_network, make_input, net_forward
from tensor_core import (
    DiffTensor, ShapeError, adam_step, add, backward, constant, l1_norm, scale,
)

logger = logging.getLogger(__name__)

METHODS = ("ssl", "tv", "supervised-apply")


class DivergenceError(RuntimeError):
    """Raised when an optimization produces a non-finite loss."""


@dataclass(frozen=True)
class LossWeights:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError(f"loss weights must be non-negative, got {self.as_tuple()}")

    def as_tuple(self):
        return (self.alpha, self.beta, self.gamma)


# Task presets: x4 tasks use the measurement-aware input, x8 tasks the meshgrid
TASK_PRESETS = {
    "sr4": (WEIGHTS_X4, "stacked"),
    "dealias4": (WEIGHTS_X4, "stacked"),
    "sr8": (WEIGHTS_X8, "meshgrid"),
    "dealias8": (WEIGHTS_X8, "meshgrid"),
    "full": (WEIGHTS_X4, "stacked"),
}


def task_preset(task):
    """Return (LossWeights, input_mode) for a named task."""
    if task not in TASK_PRESETS:
        raise ValueError(f"unknown task '{task}', expected one of {', '.join(TASK_PRESETS)}")
    weights, mode = TASK_PRESETS[task]
    return LossWeights(*weights), mode


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = MAX_ITERS
    lr: float = LEARNING_RATE
    seed: int = 0
    input_mode: Optional[str] = None  # overrides NetConfig.input_mode when set
    track_best: bool = True
    log_every: int = LOG_EVERY
    early_stop: bool = False
    plateau_window: int = PLATEAU_WINDOW
    plateau_tol: float = PLATEAU_TOL
    batch_size: Optional[int] = None
    input_jitter: float = 0.0
    progress: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.log_every < 0:
            raise ValueError(f"log_every must be >= 0, got {self.log_every}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.plateau_window < 1:
            raise ValueError(f"plateau_window must be >= 1, got {self.plateau_window}")


@dataclass
class ReconReport:
    """
    Outcome of one reconstruction: loss trace, timing and optional quality metrics.
    """
    method: str
    iterations: int = 0
    final_loss: float = math.nan
    loss_trace: list = field(default_factory=list)
    wall_time: float = 0.0
    psnr: Optional[float] = None
    ssim: Optional[float] = None
    metrics_trace: dict = field(default_factory=dict)  # iteration -> (psnr, ssim)
    raw_trace: list = field(default_factory=list)
    stopped_early: bool = False

    def record(self, loss):
        self.loss_trace.append(float(loss))
        self.iterations = len(self.loss_trace)
        self.final_loss = float(loss)

    def score(self, ground_truth, estimate, data_range=None):
        self.psnr, self.ssim = evaluate(ground_truth, estimate, data_range)

    def write_csv(self, path):
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(("iteration", "loss", "psnr", "ssim"))
            for i, loss in enumerate(self.loss_trace, start=1):
                metrics = self.metrics_trace.get(i)
                if metrics:
                    writer.writerow((i, f"{loss:.10g}", f"{metrics[0]:.6f}", f"{metrics[1]:.6f}"))
                else:
                    writer.writerow((i, f"{loss:.10g}", "", ""))

    def summary(self, config_echo=None):
        lines = [f"method = {self.method}",
                 f"iterations = {self.iterations}",
                 f"final_loss = {self.final_loss:.10g}",
                 f"wall_time = {self.wall_time:.3f} s"]
        if self.stopped_early:
            lines.append("stopped_early = True")
        if self.psnr is not None:
            lines.append(f"psnr = {self.psnr:.4f} dB")
            lines.append(f"ssim = {self.ssim:.4f}")
        if config_echo:
            lines.append("")
            lines.append("# resolved configuration")
            lines.append(config_echo)
        return '\n'.join(lines) + '\n'

    def write_summary(self, path, config_echo=None):
        with open(path, 'w') as f:
            f.write(self.summary(config_echo))


def _check_measurement(y, mask):
    y = np.asarray(y, dtype=np.complex128)
    if y.shape != mask.shape:
        raise ShapeError(f"measurement shape {y.shape} does not match mask shape {mask.shape}")
    return y


def _as_image_tensor(x_hat):
    if isinstance(x_hat, DiffTensor):
        return x_hat
    x_hat = np.asarray(x_hat, dtype=np.float64)
    return constant(x_hat[None] if x_hat.ndim == 2 else x_hat)


def _iterations(count, progress, desc):
    iterator = range(1, count + 1)
    return tqdm(iterator, desc=desc) if progress else iterator


def _plateaued(trace, window, tol):
    if len(trace) <= window:
        return False
    old, new = trace[-1 - window], trace[-1]
    return abs(new - old) / max(abs(old), 1e-300) < tol


# Self-supervised objective

def ssl_loss_terms(y, x_hat, mask, params=None, input_mode=None, input_seed=0, input_jitter=0.0,
                   include=("data", "kspace", "cycle")):
    """
    Unweighted terms of the self-supervised loss as scalar DiffTensors.

    data:   ||y - ŷ||₁ with ŷ = F(x̂)
    kspace: ||Φy - S ⊙ Φx̂||₁
    cycle:  ||I_θ(y) - I_θ(ŷ)||₁, with I_θ(y) = x̂ and I_θ(ŷ) built with the same input mode

    Complex residuals count the absolute values of their real and imaginary parts.
    """
    y = _check_measurement(y, mask)
    x_hat = _as_image_tensor(x_hat)
    if x_hat.shape != (1,) + mask.shape:
        raise ShapeError(f"estimate shape {x_hat.shape} does not match mask shape {mask.shape}")

    spectrum = masked_spectrum_node(real_to_complex(x_hat), mask)
    y_hat = ifft2_centered_node(spectrum)
    terms = {}
    if "data" in include:
        terms["data"] = l1_norm(constant(to_planar(y)), y_hat)
    if "kspace" in include:
        terms["kspace"] = l1_norm(constant(to_planar(fft2_centered(y))), spectrum)
    if "cycle" in include:
        if params is None or input_mode is None:
            raise ValueError("the cycle term needs the network parameters and its input mode")
        if input_mode == "meshgrid":
            raise ValueError("cycle consistency is undefined for meshgrid-only input; set gamma to 0")
        x_cycle = net_forward(params, make_input(input_mode, y_hat, seed=input_seed, jitter=input_jitter))
        terms["cycle"] = l1_norm(x_hat, x_cycle)
    return terms


def ssl_loss(y, x_hat, mask, weights, params=None, input_mode=None, input_seed=0, input_jitter=0.0):
    """
    α||y - ŷ||₁ + β||Φy - S ⊙ Φx̂||₁ + γ||I_θ(y) - I_θ(ŷ)||₁.

    Terms with zero weight are not built; gamma = 0 skips the second network pass.
    All-zero weights give a zero loss that is still connected to x̂.
    """
    named = (("data", weights.alpha), ("kspace", weights.beta), ("cycle", weights.gamma))
    include = tuple(name for name, weight in named if weight > 0)
    if not include:
        terms = ssl_loss_terms(y, x_hat, mask, include=("data",))
        return scale(terms["data"], 0.0)
    terms = ssl_loss_terms(y, x_hat, mask, params, input_mode, input_seed, input_jitter, include)
    total = None
    for name, weight in named:
        if name not in terms:
            continue
        contribution = scale(terms[name], weight)
        total = contribution if total is None else add(total, contribution)
    return total


def ssl_fit(y, mask, net_cfg=None, weights=None, fit_cfg=None, ground_truth=None):
    """
    Fit a freshly initialized prior network to a single measurement.

    :param y: Complex (H, W) measurement.
    :param mask: SamplingMask the measurement was taken with.
    :param net_cfg: NetConfig; FitConfig.input_mode overrides its input mode when set.
    :param weights: LossWeights; defaults to the x4 preset.
    :param fit_cfg: FitConfig.
    :param ground_truth: Optional latent image; adds PSNR/SSIM to the report.
    :return: (x̂ as an (H, W) array, ReconReport)
    """
    net_cfg = net_cfg or NetConfig()
    fit_cfg = fit_cfg or FitConfig()
    weights = weights or LossWeights(*WEIGHTS_X4)
    if fit_cfg.input_mode is not None:
        net_cfg = replace(net_cfg, input_mode=fit_cfg.input_mode)
    mode = net_cfg.input_mode
    if weights.gamma > 0 and mode == "meshgrid":
        raise ValueError("cycle consistency is undefined for meshgrid-only input; set gamma to 0")
    y = _check_measurement(y, mask)

    # The input is fixed for the whole fit
    params = build_network(net_cfg)
    net_input = make_input(mode, y, y.shape, seed=fit_cfg.seed, jitter=fit_cfg.input_jitter)
    report = ReconReport("ssl")
    best_loss, best_estimate, estimate = math.inf, None, None
    start = time.perf_counter()
    logger.info("SSL fit: %d iterations, weights %s, input '%s'", fit_cfg.max_iters, weights.as_tuple(), mode)

    for it in _iterations(fit_cfg.max_iters, fit_cfg.progress, "SSL fit"):
        x_hat = net_forward(params, net_input)
        loss = ssl_loss(y, x_hat, mask, weights, params, mode, fit_cfg.seed, fit_cfg.input_jitter)
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(f"SSL loss became {value} at iteration {it}")
        report.record(value)
        # The loss belongs to the pre-step parameters, so this output is the one it scores
        estimate = x_hat.values[0]
        if value < best_loss:
            best_loss, best_estimate = value, estimate.copy()

        if fit_cfg.log_every and it % fit_cfg.log_every == 0:
            if ground_truth is not None:
                report.metrics_trace[it] = evaluate(ground_truth, estimate)
                logger.info("iter %d: loss %.6g, psnr %.2f dB", it, value, report.metrics_trace[it][0])
            else:
                logger.info("iter %d: loss %.6g", it, value)

        backward(loss)
        adam_step(params, lr=fit_cfg.lr)
        if fit_cfg.early_stop and _plateaued(report.loss_trace, fit_cfg.plateau_window, fit_cfg.plateau_tol):
            logger.info("Loss plateaued at iteration %d, stopping", it)
            report.stopped_early = True
            break

    result = best_estimate if fit_cfg.track_best else estimate.copy()
    report.wall_time = time.perf_counter() - start
    if ground_truth is not None:
        report.score(ground_truth, result)
    return result, report


# Supervised baseline

def supervised_loss(params, pairs, input_mode=None):
    """Mean over pairs of ||I_θ(y_i) - x_i||₁."""
    if not pairs:
        raise ValueError("supervised loss needs at least one pair")
    mode = input_mode or params.config.input_mode
    total = None
    for x, y in pairs:
        x_hat = net_forward(params, make_input(mode, y))
        term = l1_norm(x_hat, constant(np.asarray(x, dtype=np.float64)[None]))
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / len(pairs))


def supervised_train(pairs, net_cfg=None, fit_cfg=None):
    """
    Train I_θ on aligned (x, y) pairs by minimizing the mean L1 image error with Adam.

    Uses the whole set every step unless FitConfig.batch_size is smaller than it.
    Inputs are never jittered, so supervised_apply sees exactly the training input transform.
    :return: (trained NetParams, ReconReport)
    """
    if not pairs:
        raise ValueError("supervised training needs at least one (x, y) pair")
    shape = np.shape(pairs[0][0])
    for x, y in pairs:
        if np.shape(x) != shape or np.shape(y) != shape:
            raise ShapeError(f"all pairs must share the shape {shape}")
    net_cfg = net_cfg or NetConfig(input_mode="stacked")
    fit_cfg = fit_cfg or FitConfig()
    if fit_cfg.input_mode is not None:
        net_cfg = replace(net_cfg, input_mode=fit_cfg.input_mode)
    if net_cfg.input_mode == "meshgrid":
        raise ValueError("supervised training needs a measurement-dependent input mode")
    if fit_cfg.input_jitter > 0:
        raise ValueError("input jitter is only supported for self-supervised fits")

    params = build_network(net_cfg)
    rng = np.random.default_rng(fit_cfg.seed)
    full_batch = fit_cfg.batch_size is None or fit_cfg.batch_size >= len(pairs)
    order = []
    report = ReconReport("supervised")
    best_loss, best_values = math.inf, None
    start = time.perf_counter()
    logger.info("Supervised training on %d pairs for %d iterations", len(pairs), fit_cfg.max_iters)

    for it in _iterations(fit_cfg.max_iters, fit_cfg.progress, "Supervised"):
        if full_batch:
            batch = pairs
        else:
            # Refill with a fresh permutation once the queue runs short
            if len(order) < fit_cfg.batch_size:
                order.extend(rng.permutation(len(pairs)).tolist())
            batch = [pairs[i] for i in order[:fit_cfg.batch_size]]
            del order[:fit_cfg.batch_size]
        loss = supervised_loss(params, batch)
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(f"supervised loss became {value} at iteration {it}")
        report.record(value)
        # Minibatch losses are not comparable across steps
        if full_batch and fit_cfg.track_best and value < best_loss:
            best_loss, best_values = value, params.snapshot()
        if fit_cfg.log_every and it % fit_cfg.log_every == 0:
            logger.info("iter %d: mean L1 %.6g", it, value)
        backward(loss)
        adam_step(params, lr=fit_cfg.lr)

    if best_values is not None:
        params.load_values(best_values)
    report.wall_time = time.perf_counter() - start
    return params, report


def supervised_apply(params, y):
    """Run a trained network on one measurement; returns an (H, W) array."""
    net_input = make_input(params.config.input_mode, np.asarray(y, dtype=np.complex128))
    return net_forward(params, net_input).values[0].copy()


# Total-variation baseline

def gradient(x):
    """Forward differences with Neumann boundary (zero difference past the last sample)."""
    g = np.zeros((2,) + x.shape)
    g[0, :-1, :] = x[1:, :] - x[:-1, :]
    g[1, :, :-1] = x[:, 1:] - x[:, :-1]
    return g


def divergence(p):
    """Negative adjoint of gradient()."""
    d = np.zeros(p.shape[1:])
    d[:-1, :] += p[0, :-1, :]
    d[1:, :] -= p[0, :-1, :]
    d[:, :-1] += p[1, :, :-1]
    d[:, 1:] -= p[1, :, :-1]
    return d


def total_variation(x):
    g = gradient(np.asarray(x, dtype=np.float64))
    return float(np.sqrt(g[0] ** 2 + g[1] ** 2).sum())


def tv_objective(x, y, mask, tv_weight):
    residual = apply_masked_fourier(x, mask) - y
    return 0.5 * float(np.sum(np.abs(residual) ** 2)) + tv_weight * total_variation(x)


def tv_reconstruct(y, mask, tv_weight=TV_WEIGHT, iters=TV_ITERS, ground_truth=None, progress=False):
    """
    Approximately solve min_x ½||F(x) - y||² + tv_weight · TV(x) over real images.

    Primal-dual iterations with K = ∇ (||K||² ≤ 8, so τ = σ = 1/√8). The dual step projects
    onto the tv_weight-ball; the primal step is the exact proximal map of the data term,
    which is diagonal in k-space with eigenvalues (S(k) + S(-k)) / 2 for real images.
    The returned estimate is the best iterate seen; loss_trace holds its objective and
    raw_trace the objective of every iterate.
    """
    if tv_weight < 0:
        raise ValueError(f"tv_weight must be non-negative, got {tv_weight}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    y = _check_measurement(y, mask)

    tau = sigma = 1.0 / math.sqrt(8.0)
    # A real image sees each frequency and its mirror; their mask average is the effective weight
    seen = 0.5 * (mask.values + hermitian_partner(mask.values))
    back_projection = np.real(apply_masked_fourier(y, mask))
    rhs = tau * fft2_centered(back_projection)
    denominator = 1.0 + tau * seen

    x = back_projection.copy()
    x_bar = x.copy()
    p = np.zeros((2,) + x.shape)
    best_x, best_objective = x.copy(), tv_objective(x, y, mask, tv_weight)
    report = ReconReport("tv")
    start = time.perf_counter()

    for it in _iterations(iters, progress, "TV"):
        # Dual ascent, then projection onto the tv_weight-ball
        if tv_weight > 0:
            p = p + sigma * gradient(x_bar)
            norm = np.sqrt(p[0] ** 2 + p[1] ** 2)
            p = p / np.maximum(1.0, norm / tv_weight)
        # Primal prox of the data term, diagonal in k-space
        v = x + tau * divergence(p)
        x_new = np.real(ifft2_centered((fft2_centered(v) + rhs) / denominator))
        # Extrapolation
        x_bar = 2.0 * x_new - x
        x = x_new

        objective = tv_objective(x, y, mask, tv_weight)
        if not math.isfinite(objective):
            raise DivergenceError(f"TV objective became {objective} at iteration {it}")
        report.raw_trace.append(objective)
        if objective < best_objective:
            best_x, best_objective = x.copy(), objective
        report.record(best_objective)

    report.wall_time = time.perf_counter() - start
    if ground_truth is not None:
        report.score(ground_truth, best_x)
    logger.info("TV: weight %g, %d iterations, objective %.6g", tv_weight, iters, best_objective)
    return best_x, report


# Dispatch

def reconstruct(method, y, mask, task=None, weights=None, net_cfg=None, fit_cfg=None,
                tv_weight=TV_WEIGHT, tv_iters=TV_ITERS, params=None, ground_truth=None):
    """
    Run one reconstruction method.

    :param method: 'ssl', 'tv' or 'supervised-apply'.
    :param task: Optional task name; for 'ssl' it selects the preset weights and, when no
                 NetConfig is given, the preset input mode.
    :param params: Trained NetParams, required for 'supervised-apply'.
    """
    if method == "ssl":
        if task is not None:
            preset_weights, preset_mode = task_preset(task)
        else:
            preset_weights, preset_mode = LossWeights(*WEIGHTS_X4), "stacked"
        net_cfg = net_cfg or NetConfig(input_mode=preset_mode)
        return ssl_fit(y, mask, net_cfg, weights or preset_weights, fit_cfg, ground_truth)
    if method == "tv":
        return tv_reconstruct(y, mask, tv_weight, tv_iters, ground_truth)
    if method == "supervised-apply":
        if params is None:
            raise ValueError("supervised-apply needs trained network parameters")
        y = _check_measurement(y, mask)
        start = time.perf_counter()
        x_hat = supervised_apply(params, y)
        report = ReconReport("supervised-apply")
        report.final_loss = float(np.abs(to_planar(apply_masked_fourier(x_hat, mask) - y)).sum())
        report.wall_time = time.perf_counter() - start
        if ground_truth is not None:
            report.score(ground_truth, x_hat)
        return x_hat, report
    raise ValueError(f"unknown method '{method}', expected one of {', '.join(METHODS)}")
