"""Dense layer kernels with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` values in NCHW layout. Each layer kind has
a functional forward/backward pair operating on a :class:`LayerParams` and a
:class:`LayerSpec`; the :class:`Module` classes wrap those pairs, cache what
the backward pass needs and hold gradients. There is no autodiff tape: a
model's backward is the reverse of its forward, written out by hand.
"""
from __future__ import annotations

import copy
import enum
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import kernels
from .errors import ShapeError

DTYPE = np.float32
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


class LayerKind(str, enum.Enum):
    CONV2D = "Conv2d"
    BATCHNORM2D = "BatchNorm2d"
    RELU = "ReLU"
    SIGMOID = "Sigmoid"
    MAXPOOL2D = "MaxPool2d"
    ADAPTIVEAVGPOOL2D = "AdaptiveAvgPool2d"
    LINEAR = "Linear"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 1
    stride: int = 1
    padding: int = 0
    bias: bool = True
    output_size: tuple[int, int] = (1, 1)

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.kind in (LayerKind.CONV2D, LayerKind.MAXPOOL2D):
            if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
                raise ValueError(
                    f"{self.kind.value}: need kernel_size>=1, stride>=1, padding>=0, "
                    f"got k={self.kernel_size} s={self.stride} p={self.padding}"
                )
        if self.kind is LayerKind.MAXPOOL2D and 2 * self.padding > self.kernel_size:
            raise ValueError("MaxPool2d: padding must be at most half the kernel size")
        if self.kind in (LayerKind.CONV2D, LayerKind.LINEAR) and (
            self.in_channels < 1 or self.out_channels < 1
        ):
            raise ValueError(f"{self.kind.value}: channel/feature counts must be >= 1")
        if self.kind is LayerKind.BATCHNORM2D and self.in_channels < 1:
            raise ValueError("BatchNorm2d: num_features must be >= 1")
        if self.kind is LayerKind.ADAPTIVEAVGPOOL2D and tuple(self.output_size) != (1, 1):
            raise ValueError("AdaptiveAvgPool2d: only 1x1 output is supported")

    @classmethod
    def conv2d(cls, in_channels, out_channels, kernel_size, stride=1, padding=0, bias=True):
        return cls(LayerKind.CONV2D, in_channels, out_channels, kernel_size, stride, padding, bias)

    @classmethod
    def batchnorm2d(cls, num_features):
        return cls(LayerKind.BATCHNORM2D, in_channels=num_features, out_channels=num_features)

    @classmethod
    def maxpool2d(cls, kernel_size, stride=None, padding=0):
        return cls(LayerKind.MAXPOOL2D, kernel_size=kernel_size,
                   stride=kernel_size if stride is None else stride, padding=padding)

    @classmethod
    def linear(cls, in_features, out_features, bias=True):
        return cls(LayerKind.LINEAR, in_features, out_features, bias=bias)

    @property
    def num_features(self):
        return self.in_channels


class LayerParams:
    """Ordered name -> array map with a per-entry trainable flag."""

    def __init__(self):
        self._entries: OrderedDict[str, np.ndarray] = OrderedDict()
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._entries[name] = value
        self._trainable[name] = trainable

    def __getitem__(self, name):
        return self._entries[name]

    def __setitem__(self, name, value):
        if name not in self._entries:
            raise KeyError(f"unknown parameter {name!r}; use add() to create it")
        if value.shape != self._entries[name].shape:
            raise ShapeError(
                f"parameter {name!r}: shape {value.shape} != {self._entries[name].shape}"
            )
        self._entries[name] = value

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def is_trainable(self, name):
        return self._trainable[name]

    def trainable_items(self):
        return [(k, v) for k, v in self._entries.items() if self._trainable[k]]

    def num_trainable(self) -> int:
        return sum(v.size for _, v in self.trainable_items())


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _check_nchw(x, channels, what):
    if x.ndim != 4 or x.shape[1] != channels:
        raise ShapeError(f"{what}: input shape {tuple(x.shape)} incompatible with expected (N, {channels}, H, W)")


# -- convolution ---------------------------------------------------------------

def init_conv_params(spec: LayerSpec, rng: np.random.Generator, dtype=DTYPE) -> LayerParams:
    fan_in = spec.in_channels * spec.kernel_size**2
    p = LayerParams()
    w = rng.standard_normal((spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size))
    p.add("weight", (w * np.sqrt(2.0 / fan_in)).astype(dtype))
    if spec.bias:
        p.add("bias", np.zeros(spec.out_channels, dtype=dtype))
    return p


def _conv_forward(x, params, spec):
    _check_nchw(x, spec.in_channels, "conv2d")
    n, _, h, w = x.shape
    k, s, pad = spec.kernel_size, spec.stride, spec.padding
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ShapeError(f"conv2d: input {tuple(x.shape)} smaller than kernel {k}x{k} with padding {pad}")
    ho, wo = conv_output_size(h, k, s, pad), conv_output_size(w, k, s, pad)
    weight = params["weight"]
    if weight.shape != (spec.out_channels, spec.in_channels, k, k):
        raise ShapeError(f"conv2d: weight shape {weight.shape} does not match spec {spec}")
    cols = kernels.im2col(x, k, k, s, pad)
    out = cols @ weight.reshape(spec.out_channels, -1).T
    if spec.bias:
        out += params["bias"]
    out = out.reshape(n, ho, wo, spec.out_channels).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def conv2d_forward(x: np.ndarray, params: LayerParams, spec: LayerSpec) -> np.ndarray:
    """Cross-correlation plus bias, output ``(N, out_channels, H', W')``."""
    return _conv_forward(x, params, spec)[0]


def _conv_backward(x_shape, params, spec, grad_out, cols):
    k, s, pad = spec.kernel_size, spec.stride, spec.padding
    weight = params["weight"]
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, spec.out_channels)
    grads = {"weight": (g.T @ cols).reshape(weight.shape)}
    if spec.bias:
        grads["bias"] = g.sum(axis=0)
    dcols = g @ weight.reshape(spec.out_channels, -1)
    return kernels.col2im(dcols, x_shape, k, k, s, pad), grads


def conv2d_backward(x, params, spec, grad_out, cols=None):
    """Gradients of ``sum(grad_out * conv2d_forward(x))``.

    Returns ``(grad_x, {"weight": ..., "bias": ...})``. ``cols`` may carry the
    im2col matrix from the forward pass to avoid recomputing it.
    """
    _check_nchw(x, spec.in_channels, "conv2d_backward")
    k, s, pad = spec.kernel_size, spec.stride, spec.padding
    expected = (x.shape[0], spec.out_channels,
                conv_output_size(x.shape[2], k, s, pad), conv_output_size(x.shape[3], k, s, pad))
    if grad_out.shape != expected:
        raise ShapeError(f"conv2d_backward: grad_out shape {grad_out.shape} != output shape {expected}")
    if cols is None:
        cols = kernels.im2col(x, k, k, s, pad)
    return _conv_backward(x.shape, params, spec, grad_out, cols)


# -- batch norm ------------------------------------------------------------------

def init_batchnorm_params(spec: LayerSpec, dtype=DTYPE) -> LayerParams:
    c = spec.num_features
    p = LayerParams()
    p.add("weight", np.ones(c, dtype=dtype))
    p.add("bias", np.zeros(c, dtype=dtype))
    p.add("running_mean", np.zeros(c, dtype=dtype), trainable=False)
    p.add("running_var", np.ones(c, dtype=dtype), trainable=False)
    return p


def _bn_forward(x, params, spec, mode):
    _check_nchw(x, spec.num_features, "batchnorm2d")
    gamma = params["weight"][None, :, None, None]
    beta = params["bias"][None, :, None, None]
    if Mode(mode) is Mode.TRAIN:
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if x.shape[0] == 0 or count == 0:
            raise ShapeError("batchnorm2d: empty batch in train mode")
        mean = x.mean(axis=(0, 2, 3))
        centered = x - mean[None, :, None, None]
        var = (centered * centered).mean(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        x_hat = centered * inv_std[None, :, None, None]
        unbiased = var * (count / (count - 1)) if count > 1 else var
        dt = params["running_mean"].dtype
        params["running_mean"] = ((1 - BN_MOMENTUM) * params["running_mean"] + BN_MOMENTUM * mean).astype(dt)
        params["running_var"] = ((1 - BN_MOMENTUM) * params["running_var"] + BN_MOMENTUM * unbiased).astype(dt)
        cache = (Mode.TRAIN, x_hat, inv_std)
    else:
        inv_std = 1.0 / np.sqrt(params["running_var"] + BN_EPS)
        x_hat = (x - params["running_mean"][None, :, None, None]) * inv_std[None, :, None, None]
        cache = (Mode.EVAL, x_hat, inv_std)
    out = (gamma * x_hat + beta).astype(x.dtype, copy=False)
    return out, cache


def batchnorm2d(x: np.ndarray, params: LayerParams, spec: LayerSpec, mode: Mode) -> np.ndarray:
    """Train mode normalizes by batch statistics and updates the running
    statistics in ``params`` (momentum 0.1, unbiased variance); Eval mode uses
    the running statistics."""
    return _bn_forward(x, params, spec, mode)[0]


def batchnorm2d_backward(params, cache, grad_out):
    mode, x_hat, inv_std = cache
    gamma = params["weight"]
    grads = {
        "weight": (grad_out * x_hat).sum(axis=(0, 2, 3)),
        "bias": grad_out.sum(axis=(0, 2, 3)),
    }
    g_hat = grad_out * gamma[None, :, None, None]
    if mode is Mode.EVAL:
        return g_hat * inv_std[None, :, None, None], grads
    mean_g = g_hat.mean(axis=(0, 2, 3), keepdims=True)
    mean_gx = (g_hat * x_hat).mean(axis=(0, 2, 3), keepdims=True)
    grad_x = (g_hat - mean_g - x_hat * mean_gx) * inv_std[None, :, None, None]
    return grad_x.astype(grad_out.dtype, copy=False), grads


# -- activations -------------------------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    info = np.finfo(x.dtype)
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype, copy=False)
    # keep the open interval (0, 1) under saturation; 1 - eps lies >= 1 ulp below 1
    return np.clip(out, info.tiny, 1.0 - info.eps)


def activation(x, kind) -> np.ndarray:
    kind = LayerKind(kind)
    if kind is LayerKind.RELU:
        return np.maximum(x, 0)
    if kind is LayerKind.SIGMOID:
        return sigmoid(x)
    raise ValueError(f"not an activation: {kind}")


def activation_backward(out, grad_out, kind):
    """Backward given the forward *output* (enough for both kinds)."""
    kind = LayerKind(kind)
    if kind is LayerKind.RELU:
        return grad_out * (out > 0)
    if kind is LayerKind.SIGMOID:
        return grad_out * out * (1 - out)
    raise ValueError(f"not an activation: {kind}")


# -- pooling -----------------------------------------------------------------------

def pool(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError(f"pool: expected (N, C, H, W) with H, W >= 1, got {tuple(x.shape)}")
    if spec.kind is LayerKind.ADAPTIVEAVGPOOL2D:
        return x.mean(axis=(2, 3), keepdims=True)
    if spec.kind is LayerKind.MAXPOOL2D:
        return kernels.maxpool_forward(x, spec.kernel_size, spec.stride, spec.padding)[0]
    raise ValueError(f"not a pooling layer: {spec.kind}")


# -- linear ------------------------------------------------------------------------

def init_linear_params(spec: LayerSpec, rng: np.random.Generator, dtype=DTYPE) -> LayerParams:
    p = LayerParams()
    w = rng.standard_normal((spec.out_channels, spec.in_channels)) * np.sqrt(2.0 / spec.in_channels)
    p.add("weight", w.astype(dtype))
    if spec.bias:
        p.add("bias", np.zeros(spec.out_channels, dtype=dtype))
    return p


def linear(x: np.ndarray, params: LayerParams, spec: LayerSpec) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"linear: input shape {tuple(x.shape)} incompatible with (N, {spec.in_channels})")
    out = x @ params["weight"].T
    if spec.bias:
        out = out + params["bias"]
    return out


def linear_backward(x, params, spec, grad_out):
    if grad_out.shape != (x.shape[0], spec.out_channels):
        raise ShapeError(f"linear_backward: grad_out {grad_out.shape} != ({x.shape[0]}, {spec.out_channels})")
    grads = {"weight": grad_out.T @ x}
    if spec.bias:
        grads["bias"] = grad_out.sum(axis=0)
    return grad_out @ params["weight"], grads


# -- modules -----------------------------------------------------------------------

class Module:
    """A layer (or container) with a forward pass, a matching backward pass,
    parameters and gradients.

    Containers list their children in ``self.children``; leaves keep arrays in
    ``self.params`` and fill ``self.grads`` during backward.
    """

    def __init__(self):
        self.params = LayerParams()
        self.grads: dict[str, np.ndarray] = {}
        self.children: OrderedDict[str, Module] = OrderedDict()

    def forward(self, x, mode=Mode.EVAL):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def __call__(self, x, mode=Mode.EVAL):
        return self.forward(x, mode)

    def named_modules(self, prefix="") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.children.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_arrays(self, trainable_only=False):
        """Yield ``(qualified_name, module, key)`` for every stored array."""
        for mod_name, mod in self.named_modules():
            for key in mod.params:
                if trainable_only and not mod.params.is_trainable(key):
                    continue
                yield (f"{mod_name}.{key}" if mod_name else key), mod, key

    def state_dict(self) -> OrderedDict:
        return OrderedDict((name, mod.params[key]) for name, mod, key in self.named_arrays())

    def load_state_dict(self, state, strict=True):
        own = {name: (mod, key) for name, mod, key in self.named_arrays()}
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, value in state.items():
            mod, key = own[name]
            mod.params[key] = np.array(value, dtype=mod.params[key].dtype)

    def num_parameters(self, trainable_only=True) -> int:
        return sum(mod.params[key].size for _, mod, key in self.named_arrays(trainable_only))

    def zero_grad(self):
        for _, mod in self.named_modules():
            mod.grads = {}

    def astype(self, dtype):
        """Deep copy with every stored array cast to ``dtype``."""
        clone = copy.deepcopy(self)
        for _, mod, key in clone.named_arrays():
            mod.params._entries[key] = mod.params[key].astype(dtype)
        return clone


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, bias=True, rng=None):
        super().__init__()
        self.spec = LayerSpec.conv2d(in_channels, out_channels, kernel_size, stride, padding, bias)
        self.params = init_conv_params(self.spec, rng if rng is not None else np.random.default_rng(0))
        self._cache = None

    def forward(self, x, mode=Mode.EVAL):
        out, cols = _conv_forward(x, self.params, self.spec)
        self._cache = (x.shape, cols)
        return out

    def backward(self, grad_out):
        shape, cols = self._cache
        grad_x, self.grads = _conv_backward(shape, self.params, self.spec, grad_out, cols)
        self._cache = None
        return grad_x


class BatchNorm2d(Module):
    def __init__(self, num_features):
        super().__init__()
        self.spec = LayerSpec.batchnorm2d(num_features)
        self.params = init_batchnorm_params(self.spec)
        self._cache = None

    def forward(self, x, mode=Mode.EVAL):
        out, self._cache = _bn_forward(x, self.params, self.spec, mode)
        return out

    def backward(self, grad_out):
        grad_x, self.grads = batchnorm2d_backward(self.params, self._cache, grad_out)
        self._cache = None
        return grad_x


class _Activation(Module):
    kind: LayerKind

    def __init__(self):
        super().__init__()
        self.spec = LayerSpec(self.kind)
        self._out = None

    def forward(self, x, mode=Mode.EVAL):
        self._out = activation(x, self.kind)
        return self._out

    def backward(self, grad_out):
        grad = activation_backward(self._out, grad_out, self.kind)
        self._out = None
        return grad


class ReLU(_Activation):
    kind = LayerKind.RELU


class Sigmoid(_Activation):
    kind = LayerKind.SIGMOID


class MaxPool2d(Module):
    def __init__(self, kernel_size, stride=None, padding=0):
        super().__init__()
        self.spec = LayerSpec.maxpool2d(kernel_size, stride, padding)
        self._cache = None

    def forward(self, x, mode=Mode.EVAL):
        if x.ndim != 4:
            raise ShapeError(f"maxpool2d: expected (N, C, H, W), got {tuple(x.shape)}")
        out, arg = kernels.maxpool_forward(x, self.spec.kernel_size, self.spec.stride, self.spec.padding)
        self._cache = (x.shape, arg)
        return out

    def backward(self, grad_out):
        shape, arg = self._cache
        self._cache = None
        return kernels.maxpool_backward(grad_out, arg, shape)


class AdaptiveAvgPool2d(Module):
    """Global average pool to ``(N, C, 1, 1)``."""

    def __init__(self):
        super().__init__()
        self.spec = LayerSpec(LayerKind.ADAPTIVEAVGPOOL2D)
        self._shape = None

    def forward(self, x, mode=Mode.EVAL):
        self._shape = x.shape
        return pool(x, self.spec)

    def backward(self, grad_out):
        n, c, h, w = self._shape
        return np.broadcast_to(grad_out / (h * w), (n, c, h, w)).astype(grad_out.dtype)


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True, rng=None):
        super().__init__()
        self.spec = LayerSpec.linear(in_features, out_features, bias)
        self.params = init_linear_params(self.spec, rng if rng is not None else np.random.default_rng(0))
        self._x = None

    def forward(self, x, mode=Mode.EVAL):
        self._x = x
        return linear(x, self.params, self.spec)

    def backward(self, grad_out):
        grad_x, self.grads = linear_backward(self._x, self.params, self.spec, grad_out)
        self._x = None
        return grad_x


class Sequential(Module):
    def __init__(self, *named: tuple[str, Module]):
        super().__init__()
        for name, mod in named:
            self.children[name] = mod

    def forward(self, x, mode=Mode.EVAL):
        for mod in self.children.values():
            x = mod.forward(x, mode)
        return x

    def backward(self, grad_out):
        for mod in reversed(self.children.values()):
            grad_out = mod.backward(grad_out)
        return grad_out
