# tensor_core.py

import itertools
import logging
from collections import OrderedDict

import numpy as np

from constants import LEARNING_RATE, ADAM_BETA1, ADAM_BETA2, ADAM_EPS

logger = logging.getLogger(__name__)

_node_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when operands do not have the shapes an operation needs."""


class GraphError(RuntimeError):
    """Raised for misuse of the graph: non-scalar roots, missing gradients."""


class DiffTensor:
    """
    A dense float64 array that remembers how it was computed.

    Image-like tensors are laid out (channels, height, width). Parameters
    (kernels, biases) may have any shape. Nodes created by an operation keep
    references to their parents only when some parent requires a gradient,
    so constant sub-expressions never enter the graph.
    """

    def __init__(self, values, requires_grad=False, name=None, parents=(), backward_fn=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.node_id = next(_node_ids)
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def __repr__(self):
        label = f", name={self.name}" if self.name else ""
        return f"DiffTensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def item(self):
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, grad):
        if grad.shape != self.values.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def constant(values, name=None):
    """Wrap an array as a graph leaf that never receives a gradient."""
    return DiffTensor(np.asarray(values, dtype=np.float64), requires_grad=False, name=name)


def graph_node(values, parents, backward_fn):
    """
    Create the result node of an operation.

    :param values: Forward result.
    :param parents: Operand tensors, in the order backward_fn returns their gradients.
    :param backward_fn: Maps the upstream gradient to a tuple of parent gradients (None = no gradient).
    """
    if any(p.requires_grad for p in parents):
        return DiffTensor(values, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return DiffTensor(values)


def _as_tensor(x):
    return x if isinstance(x, DiffTensor) else constant(x)


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def backward(loss):
    """
    Populate .grad on every leaf reachable from a scalar loss.

    Gradients of intermediate nodes are kept only for the duration of the pass.
    """
    if loss.values.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {loss.shape}")
    if not np.isfinite(loss.values).all():
        raise GraphError("backward called on a non-finite loss")
    if not loss.requires_grad:
        return

    # Iterative post-order walk; reversed, it visits every node after all of its consumers
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in visited:
            continue
        visited.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and parent.node_id not in visited:
                stack.append((parent, False))

    grads = {loss.node_id: np.ones_like(loss.values)}
    for node in reversed(order):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        # Leaves keep their gradient
        if node._backward_fn is None:
            node.accumulate_grad(g)
            continue
        for parent, parent_grad in zip(node._parents, node._backward_fn(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            # Sum contributions from every consumer before the parent is visited
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + parent_grad
            else:
                grads[parent.node_id] = parent_grad


# Elementwise arithmetic

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "add")
    return graph_node(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "sub")
    return graph_node(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "mul")
    av, bv = a.values, b.values
    return graph_node(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, factor):
    factor = float(factor)
    return graph_node(a.values * factor, (a,), lambda g: (g * factor,))


def sum_all(a):
    shape = a.shape
    return graph_node(np.sum(a.values), (a,), lambda g: (np.full(shape, float(g)),))


def concat(tensors, axis=0):
    """Join tensors along an axis (channels by default)."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    for t in tensors[1:]:
        rest_a = tensors[0].shape[:axis] + tensors[0].shape[axis + 1:]
        rest_b = t.shape[:axis] + t.shape[axis + 1:]
        if rest_a != rest_b:
            raise ShapeError(f"concat: incompatible shapes {tensors[0].shape} and {t.shape}")
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return graph_node(np.concatenate([t.values for t in tensors], axis=axis), tuple(tensors), backward_fn)


# Network building blocks

def conv2d(input, kernel, bias, stride=1, padding=0):
    """
    2-D cross-correlation of a (C, H, W) input with an (O, C, K, K) kernel.

    :param input: DiffTensor of shape (C, H, W).
    :param kernel: DiffTensor of shape (O, C, K, K).
    :param bias: DiffTensor of shape (O,).
    :param stride: Step between output samples, >= 1.
    :param padding: Zero padding added on every spatial border, >= 0.
    :return: DiffTensor of shape (O, floor((H + 2p - K) / s) + 1, floor((W + 2p - K) / s) + 1).
    """
    x, w, b = input.values, kernel.values, bias.values
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be (C, H, W), got {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d kernel must be (O, C, K, K), got {w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d kernel expects {w.shape[1]} input channels, input has {x.shape[0]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d bias must have shape ({w.shape[0]},), got {b.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")

    k = w.shape[2]
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
    if xp.shape[1] < k or xp.shape[2] < k:
        raise ShapeError(f"conv2d kernel {k}x{k} larger than padded input {xp.shape[1:]}")
    out_h = (xp.shape[1] - k) // stride + 1
    out_w = (xp.shape[2] - k) // stride + 1

    # (C, out_h, out_w, K, K) view of every receptive field
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    out = np.tensordot(w, windows, axes=([1, 2, 3], [0, 3, 4])) + b[:, None, None]

    def backward_fn(g):
        grad_w = np.tensordot(g, windows, axes=([1, 2], [1, 2]))
        grad_b = g.sum(axis=(1, 2))
        # Scatter each kernel tap back onto the padded input, then crop the padding
        grad_xp = np.zeros(xp.shape)
        for i in range(k):
            for j in range(k):
                grad_xp[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                    np.tensordot(w[:, :, i, j], g, axes=([0], [0]))
        grad_x = grad_xp[:, padding:padding + x.shape[1], padding:padding + x.shape[2]]
        return grad_x, grad_w, grad_b

    return graph_node(out, (input, kernel, bias), backward_fn)


def leaky_relu(input, slope):
    if not 0.0 <= slope <= 1.0:
        raise ValueError(f"leaky_relu slope must lie in [0, 1], got {slope}")
    x = input.values
    positive = x > 0
    local = np.where(positive, 1.0, slope)
    return graph_node(np.where(positive, x, slope * x), (input,), lambda g: (g * local,))


def sigmoid(input):
    # tanh form stays finite for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * input.values))
    local = out * (1.0 - out)
    return graph_node(out, (input,), lambda g: (g * local,))


def upsample_nearest(input, factor):
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    x = input.values
    if x.ndim != 3:
        raise ShapeError(f"upsample input must be (C, H, W), got {x.shape}")
    if factor == 1:
        return graph_node(x.copy(), (input,), lambda g: (g,))
    c, h, w = x.shape
    out = np.repeat(np.repeat(x, factor, axis=1), factor, axis=2)

    def backward_fn(g):
        return (g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)),)

    return graph_node(out, (input,), backward_fn)


def downsample_stride(input, factor):
    if factor < 1:
        raise ShapeError(f"downsample factor must be >= 1, got {factor}")
    x = input.values
    if x.ndim != 3:
        raise ShapeError(f"downsample input must be (C, H, W), got {x.shape}")
    if x.shape[1] % factor or x.shape[2] % factor:
        raise ShapeError(f"spatial dims {x.shape[1:]} are not divisible by {factor}")
    shape = x.shape

    def backward_fn(g):
        full = np.zeros(shape)
        full[:, ::factor, ::factor] = g
        return (full,)

    return graph_node(x[:, ::factor, ::factor].copy(), (input,), backward_fn)


def instance_norm(input, eps=1e-5):
    """Normalize each channel to zero mean and unit variance over its spatial extent."""
    x = input.values
    if x.ndim != 3:
        raise ShapeError(f"instance_norm input must be (C, H, W), got {x.shape}")
    # Statistics per channel
    n = x.shape[1] * x.shape[2]
    mean = x.mean(axis=(1, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt(x.var(axis=(1, 2), keepdims=True) + eps)
    x_hat = (x - mean) * inv_std

    def backward_fn(g):
        g_sum = g.sum(axis=(1, 2), keepdims=True)
        gx_sum = (g * x_hat).sum(axis=(1, 2), keepdims=True)
        return (inv_std / n * (n * g - g_sum - x_hat * gx_sum),)

    return graph_node(x_hat, (input,), backward_fn)


def l1_norm(a, b):
    """Sum of absolute differences; the subgradient at exact ties is 0."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "l1_norm")
    diff = a.values - b.values
    sign = np.sign(diff)
    return graph_node(np.abs(diff).sum(), (a, b), lambda g: (g * sign, -g * sign))


# Parameters and optimizer

class NetParams:
    """
    Ordered, named set of trainable tensors with Adam moment buffers.

    The optional config is whatever built the parameters (a NetConfig for the
    prior network); it travels with the parameters into checkpoints.
    """

    def __init__(self, config=None):
        self.config = config
        self.tensors = OrderedDict()
        self.m = {}
        self.v = {}
        self.t = 0

    def add(self, name, values):
        if name in self.tensors:
            raise KeyError(f"parameter '{name}' already exists")
        tensor = DiffTensor(np.asarray(values, dtype=np.float64), requires_grad=True, name=name)
        self.tensors[name] = tensor
        self.m[name] = np.zeros_like(tensor.values)
        self.v[name] = np.zeros_like(tensor.values)
        return tensor

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors.keys())

    def count(self):
        return sum(t.values.size for t in self.tensors.values())

    def zero_grad(self):
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def snapshot(self):
        return {name: t.values.copy() for name, t in self.tensors.items()}

    def load_values(self, values):
        for name, array in values.items():
            tensor = self.tensors[name]
            if array.shape != tensor.shape:
                raise ShapeError(f"parameter '{name}' expects {tensor.shape}, got {array.shape}")
            tensor.values = np.array(array, dtype=np.float64, copy=True)


def adam_step(params, lr=LEARNING_RATE, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """
    Apply one bias-corrected Adam update to every parameter and clear the gradients.

    :param params: NetParams whose gradients were populated by backward().
    """
    missing = [name for name, t in params.items() if t.grad is None]
    if missing:
        raise GraphError(f"no gradient for parameters: {', '.join(missing)}")

    params.t += 1
    # Bias corrections
    bc1 = 1.0 - beta1 ** params.t
    bc2 = 1.0 - beta2 ** params.t
    for name, tensor in params.items():
        g = tensor.grad
        m = params.m[name]
        v = params.v[name]
        # Moment buffers are updated in place
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        tensor.values = tensor.values - lr * m_hat / (np.sqrt(v_hat) + eps)
        tensor.grad = None
    return params
