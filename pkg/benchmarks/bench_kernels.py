"""Compiled vs pure-Python kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 64]

Times each kernel on CTN-sized inputs under both backends, then a conv2d
forward+backward and a full 64x64 CTN training step through the autograd ops.
"""

import argparse
import timeit

import numpy as np

from ctn import autograd as ag
from ctn import kernels
from ctn.model import CTN, ModelConfig, mse_density_loss


def kernel_cases(size, rng):
    x64 = rng.normal(size=(64, size, size))
    x256 = rng.normal(size=(256, size // 4, size // 4))
    cols = kernels.im2col(x64, 3, 1, 1)
    pooled, idx = kernels.maxpool2x2(x64)
    up_in = rng.normal(size=(128, size // 2, size // 2))
    up_grad = rng.normal(size=(128, size, size))
    return {
        f"im2col 64x{size}x{size} k3": lambda k: k.im2col(x64, 3, 1, 1),
        f"col2im 64x{size}x{size} k3": lambda k: k.col2im(cols, x64.shape, 3, 1, 1),
        f"maxpool 64x{size}x{size}": lambda k: k.maxpool2x2(x64),
        f"maxpool bwd 64x{size}x{size}": lambda k: k.maxpool2x2_backward(pooled, idx),
        f"upsample 128x{size // 2}x{size // 2}": lambda k: k.upsample2x(up_in),
        f"upsample bwd 128x{size}x{size}": lambda k: k.upsample2x_backward(up_grad),
        f"im2col 256x{size // 4}x{size // 4} k3": lambda k: k.im2col(x256, 3, 1, 1),
    }


def best(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def conv_step(size, rng):
    x = ag.Tensor(rng.normal(size=(64, size, size)), requires_grad=True)
    w = ag.Tensor(0.05 * rng.normal(size=(64, 64, 3, 3)), requires_grad=True)
    b = ag.Tensor(np.zeros(64), requires_grad=True)

    def run():
        x.grad = w.grad = b.grad = None
        ag.sum(ag.relu(ag.conv2d(x, w, b, 1, 1))).backward()

    return run


def ctn_step(rng):
    model = CTN(ModelConfig(height=64, width=64))
    image = ag.Tensor(rng.normal(size=(3, 64, 64)))
    target = ag.Tensor(np.abs(rng.normal(size=(64, 64))))

    def run():
        model.zero_grad()
        mse_density_loss(model(image), target).backward()

    return run


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--size", type=int, default=64, help="spatial size of the kernel inputs")
    args = parser.parse_args(argv)

    names = kernels.available_backends()
    if names != ["cython", "python"]:
        print(f"only {names} available; build the extension with `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    rows = []
    for label, case in kernel_cases(args.size, rng).items():
        rows.append((label, {n: best(lambda: case(kernels.load_backend(n)), args.repeat) for n in names}))

    steps = {f"conv2d fwd+bwd 64->64 {args.size}x{args.size}": conv_step(args.size, rng),
             "CTN fwd+bwd 64x64 (full widths)": ctn_step(rng)}
    previous = kernels.BACKEND
    for label, fn in steps.items():
        timings = {}
        for n in names:
            kernels.use_backend(n)
            timings[n] = best(fn, max(1, args.repeat // 2))
        rows.append((label, timings))
    kernels.use_backend(previous)

    width = max(len(r[0]) for r in rows)
    print(f"{'case'.ljust(width)}  " + "  ".join(f"{n:>10}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for label, t in rows:
        cells = "  ".join(f"{t[n] * 1e3:8.2f}ms" for n in names)
        ratio = f"  {t['python'] / t['cython']:9.2f}x" if len(names) == 2 else ""
        print(f"{label.ljust(width)}  {cells}{ratio}")


if __name__ == "__main__":
    main()
