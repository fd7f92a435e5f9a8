"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 16]

Shapes follow the ResNet-18 stem and first stage at 28x28 and 100x100 inputs,
plus one full model forward/backward per backend.
"""
import argparse
import timeit

import numpy as np

from vea import kernels
from vea.backbone import VeaConfig, build_vea_resnet18
from vea.nn import Mode


def cases(batch, rng):
    out = []
    for size in (28, 100):
        stem = rng.standard_normal((batch, 3, size, size)).astype(np.float32)
        s1 = (size + 1) // 2
        pooled = rng.standard_normal((batch, 64, s1, s1)).astype(np.float32)
        s2 = (s1 + 1) // 2
        feat = rng.standard_normal((batch, 64, s2, s2)).astype(np.float32)
        cols = kernels.im2col(feat, 3, 3, 1, 1)
        _, arg = kernels.maxpool_forward(pooled, 3, 2, 1)
        grad = rng.standard_normal((batch, 64, s2, s2)).astype(np.float32)
        out += [
            (f"im2col 7x7/2 stem {size}px", lambda x=stem: kernels.im2col(x, 7, 7, 2, 3)),
            (f"im2col 3x3 stage1 {size}px", lambda x=feat: kernels.im2col(x, 3, 3, 1, 1)),
            (f"col2im 3x3 stage1 {size}px", lambda c=cols, s=feat.shape: kernels.col2im(c, s, 3, 3, 1, 1)),
            (f"maxpool fwd {size}px", lambda x=pooled: kernels.maxpool_forward(x, 3, 2, 1)),
            (f"maxpool bwd {size}px", lambda g=grad, a=arg, s=pooled.shape: kernels.maxpool_backward(g, a, s)),
        ]
    model = build_vea_resnet18(VeaConfig(10))
    x = rng.standard_normal((batch, 3, 28, 28)).astype(np.float32)

    def step():
        out = model.forward(x, Mode.TRAIN)
        model.backward(np.ones_like(out))

    out.append(("model fwd+bwd 28px", step))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=16)
    args = ap.parse_args()

    backends = sorted(kernels.BACKENDS, reverse=True)  # python first
    if len(backends) < 2:
        print("compiled kernels not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    results = {}
    for name in backends:
        prev = kernels.set_backend(name)
        for label, fn in cases(args.batch, rng):
            fn()  # warm up
            results.setdefault(label, {})[name] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        kernels.set_backend(prev)

    width = max(map(len, results))
    print(f"{'case'.ljust(width)}  " + "  ".join(f"{b:>10}" for b in backends) + "  speedup")
    for label, times in results.items():
        cells = "  ".join(f"{times[b] * 1e3:8.2f}ms" for b in backends)
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label.ljust(width)}  {cells}  {speed:6.2f}x")


if __name__ == "__main__":
    main()
