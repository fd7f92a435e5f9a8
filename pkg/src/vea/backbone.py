"""ResNet-18 and the Vision Eagle Attention variant.

The attention model gates three backbone feature maps with a learned map of the
same shape::

    x0 = stem(x);    x0 = x0 * vea1(x0)
    x1 = layer1(x0); x1 = x1 * vea2(x1)
    x2 = layer2(x1); x2 = x2 * vea3(x2)
    logits = fc(avgpool(layer4(layer3(x2))))

Each attention block is ``sigmoid(conv1x1(relu(conv3x3(x))))``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import (
    AdaptiveAvgPool2d,
    BatchNorm2d,
    Conv2d,
    Linear,
    MaxPool2d,
    Mode,
    Module,
    ReLU,
    Sequential,
    Sigmoid,
)

STAGE_WIDTHS = (64, 128, 256, 512)
STAGE_STRIDES = (1, 2, 2, 2)
TAP_POINTS = ("after_stem", "after_stage1", "after_stage2")
TAP_WIDTHS = (64, 64, 128)
MIN_INPUT_SIZE = 28


@dataclass(frozen=True)
class BasicBlockSpec:
    in_channels: int
    out_channels: int
    stride: int = 1

    @property
    def has_downsample(self) -> bool:
        return self.stride != 1 or self.in_channels != self.out_channels


@dataclass(frozen=True)
class VeaBlockSpec:
    in_channels: int
    hidden_channels: int
    gate_channels: int

    def validate(self, where="VEA block"):
        if self.hidden_channels < 1:
            raise ConfigError(f"{where}: hidden_channels must be >= 1, got {self.hidden_channels}")
        if self.gate_channels != self.in_channels:
            raise ConfigError(
                f"{where}: gate_channels ({self.gate_channels}) must equal in_channels "
                f"({self.in_channels}) for the element-wise product"
            )


def default_block_specs():
    return tuple(VeaBlockSpec(c, c, c) for c in TAP_WIDTHS)


@dataclass(frozen=True)
class VeaConfig:
    num_classes: int
    input_channels: int = 3
    block_specs: tuple[VeaBlockSpec, ...] = field(default_factory=default_block_specs)
    tap_points: tuple[str, ...] = TAP_POINTS
    bypass_gates: bool = False

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_channels != 3:
            raise ConfigError(f"input_channels must be 3, got {self.input_channels}")
        if tuple(self.tap_points) != TAP_POINTS:
            raise ConfigError(f"tap_points are fixed to {TAP_POINTS}, got {tuple(self.tap_points)}")
        if len(self.block_specs) != 3:
            raise ConfigError(f"exactly three attention blocks required, got {len(self.block_specs)}")
        for tap, width, spec in zip(TAP_POINTS, TAP_WIDTHS, self.block_specs):
            if spec.in_channels != width:
                raise ConfigError(
                    f"tap {tap}: block in_channels {spec.in_channels} != backbone width {width}"
                )
            spec.validate(where=f"tap {tap}")


class BasicBlock(Module):
    def __init__(self, spec: BasicBlockSpec, rng):
        super().__init__()
        self.spec = spec
        c = self.children
        c["conv1"] = Conv2d(spec.in_channels, spec.out_channels, 3, spec.stride, 1, bias=False, rng=rng)
        c["bn1"] = BatchNorm2d(spec.out_channels)
        c["relu1"] = ReLU()
        c["conv2"] = Conv2d(spec.out_channels, spec.out_channels, 3, 1, 1, bias=False, rng=rng)
        c["bn2"] = BatchNorm2d(spec.out_channels)
        if spec.has_downsample:
            c["downsample"] = Sequential(
                ("0", Conv2d(spec.in_channels, spec.out_channels, 1, spec.stride, 0, bias=False, rng=rng)),
                ("1", BatchNorm2d(spec.out_channels)),
            )
        c["relu2"] = ReLU()

    def forward(self, x, mode=Mode.EVAL):
        c = self.children
        out = c["conv1"](x, mode)
        out = c["relu1"](c["bn1"](out, mode), mode)
        out = c["bn2"](c["conv2"](out, mode), mode)
        shortcut = c["downsample"](x, mode) if "downsample" in c else x
        return c["relu2"](out + shortcut, mode)

    def backward(self, grad_out):
        c = self.children
        g = c["relu2"].backward(grad_out)
        g_short = c["downsample"].backward(g) if "downsample" in c else g
        g = c["bn2"].backward(g)
        g = c["conv2"].backward(g)
        g = c["relu1"].backward(g)
        g = c["bn1"].backward(g)
        return c["conv1"].backward(g) + g_short


class VeaBlock(Module):
    """Produces a gate in (0, 1) with the same shape as its input."""

    def __init__(self, spec: VeaBlockSpec, rng):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.children["conv_hidden"] = Conv2d(spec.in_channels, spec.hidden_channels, 3, 1, 1, rng=rng)
        self.children["relu"] = ReLU()
        self.children["conv_gate"] = Conv2d(spec.hidden_channels, spec.gate_channels, 1, 1, 0, rng=rng)
        self.children["sigmoid"] = Sigmoid()

    def forward(self, x, mode=Mode.EVAL):
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"VEA block: input shape {tuple(x.shape)} does not have {self.spec.in_channels} channels"
            )
        for mod in self.children.values():
            x = mod.forward(x, mode)
        return x

    def backward(self, grad_out):
        for mod in reversed(self.children.values()):
            grad_out = mod.backward(grad_out)
        return grad_out


def vea_block_forward(x: np.ndarray, block: VeaBlock) -> np.ndarray:
    return block.forward(x, Mode.EVAL)


def apply_attention(feat: np.ndarray, gate: np.ndarray) -> np.ndarray:
    if feat.shape != gate.shape:
        raise ShapeError(f"apply_attention: feature shape {feat.shape} != gate shape {gate.shape}")
    return feat * gate


def self_gate_backward(block: VeaBlock, feat, gate, grad_out):
    """Gradient of ``feat * block(feat)`` with respect to ``feat``.

    The feature map feeds both factors of the product, so the gradient has a
    direct term and a term through the block. ``block`` must still hold the
    forward cache for ``feat``.
    """
    return grad_out * gate + block.backward(grad_out * feat)


class SelfGated(Module):
    """``x * block(x)``: one attention tap as a standalone layer."""

    def __init__(self, block: VeaBlock):
        super().__init__()
        self.children["block"] = block
        self._cache = None

    def forward(self, x, mode=Mode.EVAL):
        gate = self.children["block"].forward(x, mode)
        self._cache = (x, gate)
        return apply_attention(x, gate)

    def backward(self, grad_out):
        feat, gate = self._cache
        return self_gate_backward(self.children["block"], feat, gate, grad_out)


def _stage(in_c, out_c, stride, rng):
    return Sequential(
        ("0", BasicBlock(BasicBlockSpec(in_c, out_c, stride), rng)),
        ("1", BasicBlock(BasicBlockSpec(out_c, out_c, 1), rng)),
    )


class ResNet18(Module):
    def __init__(self, num_classes: int, seed: int = 0):
        super().__init__()
        if num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
        self.num_classes = num_classes
        rng = np.random.default_rng(seed)
        c = self.children
        c["stem"] = Sequential(
            ("conv", Conv2d(3, 64, 7, 2, 3, bias=False, rng=rng)),
            ("bn", BatchNorm2d(64)),
            ("relu", ReLU()),
            ("maxpool", MaxPool2d(3, 2, 1)),
        )
        in_c = 64
        for i, (width, stride) in enumerate(zip(STAGE_WIDTHS, STAGE_STRIDES), start=1):
            c[f"layer{i}"] = _stage(in_c, width, stride, rng)
            in_c = width
        c["avgpool"] = AdaptiveAvgPool2d()
        c["fc"] = Linear(512, num_classes, rng=rng)
        self.stage_calls: Counter = Counter()
        self._pooled_shape = None

    def _run(self, name, x, mode):
        self.stage_calls[name] += 1
        return self.children[name].forward(x, mode)

    def _features(self, x, mode):
        x = self._run("stem", x, mode)
        for name in ("layer1", "layer2", "layer3", "layer4"):
            x = self._run(name, x, mode)
        return x

    def forward(self, x, mode=Mode.EVAL):
        check_input(x)
        feats = self._features(x, mode)
        pooled = self.children["avgpool"].forward(feats, mode)
        self._pooled_shape = pooled.shape
        return self.children["fc"].forward(pooled.reshape(pooled.shape[0], -1), mode)

    def backward(self, grad_logits):
        g = self.children["fc"].backward(grad_logits).reshape(self._pooled_shape)
        g = self.children["avgpool"].backward(g)
        return self._features_backward(g)

    def _features_backward(self, g):
        for name in ("layer4", "layer3", "layer2", "layer1", "stem"):
            g = self.children[name].backward(g)
        return g


class VeaResNet18(ResNet18):
    """ResNet-18 with attention gating after the stem, stage 1 and stage 2.

    Backbone parameter names match :class:`ResNet18`, so a plain ResNet-18
    state dict loads into the shared part with ``strict=False``.
    """

    def __init__(self, cfg: VeaConfig, seed: int = 0):
        cfg.validate()
        super().__init__(cfg.num_classes, seed)
        self.cfg = cfg
        rng = np.random.default_rng([seed, 1])
        for i, spec in enumerate(cfg.block_specs, start=1):
            self.children[f"vea{i}"] = VeaBlock(spec, rng)
        self._gate_cache = {}

    def _gate(self, idx, x, mode):
        if self.cfg.bypass_gates:
            self._gate_cache[idx] = None
            return x
        gate = self.children[f"vea{idx}"].forward(x, mode)
        self._gate_cache[idx] = (x, gate)
        return apply_attention(x, gate)

    def _gate_backward(self, idx, g):
        cached = self._gate_cache.pop(idx)
        if cached is None:
            return g
        feat, gate = cached
        return self_gate_backward(self.children[f"vea{idx}"], feat, gate, g)

    def _features(self, x, mode):
        x = self._gate(1, self._run("stem", x, mode), mode)
        x = self._gate(2, self._run("layer1", x, mode), mode)
        x = self._gate(3, self._run("layer2", x, mode), mode)
        x = self._run("layer3", x, mode)
        return self._run("layer4", x, mode)

    def _features_backward(self, g):
        c = self.children
        g = c["layer4"].backward(g)
        g = c["layer3"].backward(g)
        g = c["layer2"].backward(self._gate_backward(3, g))
        g = c["layer1"].backward(self._gate_backward(2, g))
        return c["stem"].backward(self._gate_backward(1, g))


def check_input(x):
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"model input must be (N, 3, H, W), got {tuple(x.shape)}")
    if x.shape[2] < MIN_INPUT_SIZE or x.shape[3] < MIN_INPUT_SIZE:
        raise ShapeError(
            f"input spatial size {x.shape[2]}x{x.shape[3]} is below the minimum "
            f"{MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}"
        )


def build_resnet18(num_classes: int, seed: int = 0) -> ResNet18:
    return ResNet18(num_classes, seed)


def build_vea_resnet18(cfg: VeaConfig, seed: int = 0) -> VeaResNet18:
    return VeaResNet18(cfg, seed)


def build_model(name: str, num_classes: int, seed: int = 0) -> ResNet18:
    if name == "resnet18":
        return build_resnet18(num_classes, seed)
    if name == "vea_resnet18":
        return build_vea_resnet18(VeaConfig(num_classes), seed)
    raise ConfigError(f"unknown model {name!r}; expected resnet18 or vea_resnet18")


def model_name(model) -> str:
    return "vea_resnet18" if isinstance(model, VeaResNet18) else "resnet18"


def model_config(model: ResNet18) -> dict:
    """JSON-ready description sufficient to rebuild the architecture."""
    cfg = {"model": model_name(model), "num_classes": model.num_classes}
    if isinstance(model, VeaResNet18):
        cfg["block_specs"] = [
            [s.in_channels, s.hidden_channels, s.gate_channels] for s in model.cfg.block_specs
        ]
        cfg["bypass_gates"] = model.cfg.bypass_gates
    return cfg


def model_from_config(cfg: dict, seed: int = 0) -> ResNet18:
    name = cfg.get("model")
    if name == "resnet18":
        return build_resnet18(int(cfg["num_classes"]), seed)
    if name == "vea_resnet18":
        specs = tuple(VeaBlockSpec(*map(int, s)) for s in cfg.get("block_specs", ()))
        vcfg = VeaConfig(
            int(cfg["num_classes"]),
            block_specs=specs or default_block_specs(),
            bypass_gates=bool(cfg.get("bypass_gates", False)),
        )
        return build_vea_resnet18(vcfg, seed)
    raise ConfigError(f"unknown model {name!r}; expected resnet18 or vea_resnet18")


def forward(model: ResNet18, batch: np.ndarray, mode: Mode = Mode.EVAL) -> np.ndarray:
    """Logits ``(N, num_classes)``; Eval mode uses running batch-norm statistics."""
    return model.forward(batch, Mode(mode))
