"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeats 20] [--size 64]

Prints CSV: kernel, backend, size, best seconds, speedup over numpy. Also
checks that both backends agree before timing anything.
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from ielseg import kernels
from ielseg.autodiff import LossVariant
from ielseg.model import forward, init_params


def cases(size, rng):
    field = rng.standard_normal((4, size, size)).astype(np.float32)
    x = rng.standard_normal((4, 16, size, size)).astype(np.float32)
    cols = kernels.im2col3x3(x)
    mask = (rng.random((size, size)) < 0.4).astype(np.int32)
    params = init_params(0)
    image = rng.random((4, 3, size, size)).astype(np.float32)
    iel = LossVariant.iel_heat(0.1, 10)
    return {
        "laplacian": lambda: kernels.laplacian(field),
        "grad_mag_central": lambda: kernels.grad_mag_central(field),
        "im2col3x3": lambda: kernels.im2col3x3(x),
        "col2im3x3": lambda: kernels.col2im3x3(cols, size, size),
        "disc_count(r=10)": lambda: kernels.disc_count(mask, 10),
        "unet_forward+iel": lambda: forward(params, image, "train", iel),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args(argv)
    if "cython" not in kernels.BACKENDS:
        print("compiled backend not built; nothing to compare", file=sys.stderr)
        return 1
    names = ["python", "cython"]
    results = {}
    outputs = {}
    for name in names:
        prev = kernels.set_backend(name)
        try:
            for kernel, fn in cases(args.size, np.random.default_rng(0)).items():
                out = fn()
                outputs[(kernel, name)] = out.value if hasattr(out, "value") else out
                results[(kernel, name)] = min(timeit.repeat(fn, number=1, repeat=args.repeats))
        finally:
            kernels.set_backend(prev)
    for kernel in cases(8, np.random.default_rng(0)):
        a, b = outputs[(kernel, "python")], outputs[(kernel, "cython")]
        if not np.allclose(a, b, rtol=1e-5, atol=1e-5):
            print(f"backends disagree on {kernel}", file=sys.stderr)
            return 1
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["kernel", "backend", "size", "seconds", "speedup_vs_python"])
    for (kernel, name), sec in results.items():
        w.writerow([kernel, name, args.size, f"{sec:.6f}", f"{results[(kernel, 'python')] / sec:.2f}"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
