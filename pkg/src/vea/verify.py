"""Built-in self-checks run by ``vea verify``.

Each suite returns ``(passed, detail)``. None touches the network or files.
"""
from __future__ import annotations

import numpy as np

from .backbone import (
    BasicBlock,
    BasicBlockSpec,
    SelfGated,
    VeaBlock,
    VeaBlockSpec,
    VeaConfig,
    build_resnet18,
    build_vea_resnet18,
)
from .gradcheck import BiasedBackward, grad_check
from .idx import IdxError, encode_idx, parse_idx
from .metrics import (
    ORACLE_MNIST_VEA_CONFUSION,
    ORACLE_MNIST_VEA_REPORTED,
    BinaryCounts,
    ConfusionMatrix,
    aggregate,
    binary_mcc,
    multiclass_mcc,
)
from .nn import AdaptiveAvgPool2d, BatchNorm2d, Conv2d, Linear, MaxPool2d, Mode, ReLU, Sigmoid
from .training import TrainConfig, lr_schedule

METRIC_TOL = 5e-4


def metrics_oracle():
    cm = ConfusionMatrix(ORACLE_MNIST_VEA_CONFUSION)
    rep = aggregate(cm)
    ok = rep.accuracy == 2916 / 3000
    for name, want in ORACLE_MNIST_VEA_REPORTED.items():
        ok &= abs(getattr(rep, name) - want) <= METRIC_TOL
    return ok, f"acc={rep.accuracy:.4f}, mcc={rep.mcc:.4f}"


def mcc_consistency(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        c = rng.integers(0, 500, size=(2, 2))
        # class 1 as positive: tp=c11, tn=c00, fp=c01, fn=c10
        b = BinaryCounts(int(c[1, 1]), int(c[0, 0]), int(c[0, 1]), int(c[1, 0]))
        worst = max(worst, abs(multiclass_mcc(ConfusionMatrix(c)) - binary_mcc(b)))
    return worst <= 1e-12, f"max |diff|={worst:.1e} over {n} matrices"


def _away_from_zero(rng, shape, margin=0.05):
    return rng.uniform(margin, 1.0, shape) * rng.choice([-1.0, 1.0], shape)


def gradcheck_cases(seed=0):
    """(name, layer, input, mode) for every layer kind and the attention block."""
    rng = np.random.default_rng(seed)
    return [
        ("Conv2d", Conv2d(2, 3, 3, 1, 1, rng=rng), rng.standard_normal((2, 2, 5, 5)), Mode.TRAIN),
        ("Conv2d-stride2", Conv2d(2, 3, 3, 2, 1, rng=rng), rng.standard_normal((2, 2, 6, 6)), Mode.TRAIN),
        ("BatchNorm2d-train", BatchNorm2d(3), rng.standard_normal((4, 3, 3, 3)), Mode.TRAIN),
        ("BatchNorm2d-eval", BatchNorm2d(3), rng.standard_normal((4, 3, 3, 3)), Mode.EVAL),
        ("ReLU", ReLU(), _away_from_zero(rng, (2, 3, 4, 4)), Mode.TRAIN),
        ("Sigmoid", Sigmoid(), rng.standard_normal((2, 3, 4, 4)), Mode.TRAIN),
        # distinct, well-separated values keep every window's maximum unique
        ("MaxPool2d", MaxPool2d(3, 2, 1), rng.permutation(2 * 3 * 6 * 6).reshape(2, 3, 6, 6) * 0.01, Mode.TRAIN),
        ("AdaptiveAvgPool2d", AdaptiveAvgPool2d(), rng.standard_normal((2, 3, 4, 4)), Mode.TRAIN),
        ("Linear", Linear(8, 5, rng=rng), rng.standard_normal((3, 8)), Mode.TRAIN),
        ("VeaBlock", VeaBlock(VeaBlockSpec(4, 5, 4), rng), rng.standard_normal((2, 4, 5, 5)), Mode.TRAIN),
        ("VeaBlock-self-gated", SelfGated(VeaBlock(VeaBlockSpec(4, 5, 4), rng)),
         rng.standard_normal((2, 4, 5, 5)), Mode.TRAIN),
        ("BasicBlock-downsample", BasicBlock(BasicBlockSpec(3, 4, 2), rng),
         rng.standard_normal((2, 3, 6, 6)), Mode.TRAIN),
    ]


def gradcheck_suite(eps=1e-3, tol=1e-3):
    failures = []
    for name, layer, x, mode in gradcheck_cases():
        rep = grad_check(layer, x, eps, tol, mode=mode)
        if not rep.passed:
            failures.append(f"{name}: {rep}")
    rng = np.random.default_rng(1)
    faulty = grad_check(BiasedBackward(Linear(8, 5, rng=rng), 0.1), rng.standard_normal((3, 8)), eps, tol)
    if faulty.passed:
        failures.append("injected +0.1 gradient fault was not detected")
    detail = "all layer kinds, fault injection caught" if not failures else "; ".join(failures)
    return not failures, detail


def bypass_equivalence(configs=((28, 10), (100, 6)), n_images=16, tol=1e-6, seed=0):
    worst = 0.0
    for size, k in configs:
        base = build_resnet18(k, seed=seed)
        vea = build_vea_resnet18(VeaConfig(k, bypass_gates=True), seed=seed + 1)
        vea.load_state_dict(base.state_dict(), strict=False)
        x = np.random.default_rng(seed).standard_normal((n_images, 3, size, size)).astype(np.float32)
        worst = max(worst, float(np.abs(base.forward(x) - vea.forward(x)).max()))
    return worst <= tol, f"max |diff|={worst:.1e}"


def idx_roundtrip(n=20, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        dims = tuple(int(d) for d in rng.integers(1, 5, size=rng.integers(1, 4)))
        arr = rng.integers(0, 256, size=dims, dtype=np.uint8)
        raw = encode_idx(arr)
        if encode_idx(parse_idx(raw)) != raw:
            return False, "round-trip mismatch"
        for pos in range(2):
            bad = bytearray(raw)
            bad[pos] = 0x5A
            try:
                parse_idx(bytes(bad))
            except IdxError:
                continue
            return False, f"corrupted magic byte {pos} accepted"
    return True, f"{n} files"


def schedule_oracle():
    a, b = TrainConfig(initial_lr=0.01), TrainConfig(initial_lr=0.1)
    got = [lr_schedule(e, a) for e in (0, 4, 8)] + [lr_schedule(e, b) for e in (0, 4)]
    want = [0.01, 0.005, 0.0025, 0.1, 0.05]
    ok = all(abs(g - w) <= 1e-15 for g, w in zip(got, want))
    return ok, ", ".join(f"{g:g}" for g in got)


SUITES = {
    "metrics-oracle": metrics_oracle,
    "mcc-consistency": mcc_consistency,
    "gradcheck": gradcheck_suite,
    "bypass-equivalence": bypass_equivalence,
    "idx-roundtrip": idx_roundtrip,
    "lr-schedule": schedule_oracle,
}


def run_all(out=print) -> bool:
    all_ok = True
    for name, fn in SUITES.items():
        ok, detail = fn()
        all_ok &= ok
        out(f"{name}: {'PASS' if ok else 'FAIL'} ({detail})")
    return all_ok
