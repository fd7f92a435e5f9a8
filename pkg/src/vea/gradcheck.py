"""Central-difference verification of the hand-written backward passes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Mode, Module


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    checked: int
    worst: str = ""
    failure: str = ""

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.failure})" if self.failure else f" worst at {self.worst}"
        return f"{status} max_rel_err={self.max_rel_err:.3e} over {self.checked} elements{extra}"


def relative_error(analytic, numeric, floor=1e-6):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _loc(name, index, shape):
    return f"{name}{tuple(int(i) for i in np.unravel_index(index, shape))}"


def _pick(size, max_elements, rng):
    if size <= max_elements:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_elements, replace=False))


def grad_check(
    layer: Module,
    x: np.ndarray,
    eps: float = 1e-3,
    tol: float = 1e-3,
    *,
    mode: Mode = Mode.TRAIN,
    max_elements: int = 256,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare ``layer.backward`` to central differences.

    The scalar loss is ``sum(R * layer(x))`` with a fixed random ``R`` (a plain
    sum would make batch-norm input gradients identically zero). The layer and
    input are cast to float64 first so rounding does not swamp the
    ``O(eps**2)`` difference error. Every trainable parameter and the input are
    checked; tensors larger than ``max_elements`` (at least 64) are subsampled.
    """
    max_elements = max(64, max_elements)
    rng = np.random.default_rng(seed)
    layer = layer.astype(np.float64)
    x = np.array(x, dtype=np.float64)

    out = layer.forward(x, mode)
    if not np.all(np.isfinite(out)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(out))[0])
        return GradCheckReport(np.inf, False, 0, failure=f"non-finite forward output at {bad}")
    weights = rng.standard_normal(out.shape)
    layer.zero_grad()
    grad_x = layer.backward(weights)

    targets = [("input", x, grad_x)]
    for name, mod, key in layer.named_arrays(trainable_only=True):
        targets.append((name, mod.params[key], mod.grads.get(key)))

    def loss():
        return float(np.sum(layer.forward(x, mode) * weights))

    worst_err, worst_loc, checked = 0.0, "", 0
    for name, arr, analytic in targets:
        if analytic is None:
            return GradCheckReport(np.inf, False, checked, failure=f"no gradient for {name}")
        analytic = np.asarray(analytic, dtype=np.float64)
        if analytic.shape != arr.shape:
            return GradCheckReport(np.inf, False, checked,
                                   failure=f"gradient shape {analytic.shape} != {arr.shape} for {name}")
        if not np.all(np.isfinite(analytic)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(analytic))[0])
            return GradCheckReport(np.inf, False, checked, failure=f"non-finite gradient in {name} at {bad}")
        flat = arr.reshape(-1)  # view: perturbations write through to the layer
        for i in _pick(flat.size, max_elements, rng):
            orig = flat[i]
            flat[i] = orig + eps
            plus = loss()
            flat[i] = orig - eps
            minus = loss()
            flat[i] = orig
            numeric = (plus - minus) / (2 * eps)
            if not np.isfinite(numeric):
                loc = _loc(name, i, arr.shape)
                return GradCheckReport(np.inf, False, checked, failure=f"non-finite loss at {loc}")
            err = float(relative_error(analytic.reshape(-1)[i], numeric, floor))
            checked += 1
            if err > worst_err:
                worst_err, worst_loc = err, _loc(name, i, arr.shape)
    return GradCheckReport(worst_err, worst_err < tol, checked, worst=worst_loc)


class BiasedBackward(Module):
    """Wraps a layer and adds a constant to every gradient it reports.

    Used to confirm that :func:`grad_check` catches a wrong backward pass.
    """

    def __init__(self, inner: Module, offset: float = 0.1):
        super().__init__()
        self.children["inner"] = inner
        self.offset = offset

    def forward(self, x, mode=Mode.EVAL):
        return self.children["inner"].forward(x, mode)

    def backward(self, grad_out):
        inner = self.children["inner"]
        grad_x = inner.backward(grad_out) + self.offset
        inner.grads = {k: v + self.offset for k, v in inner.grads.items()}
        return grad_x
