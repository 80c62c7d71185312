"""Compare the compiled and numpy backends of the hot kernels.

    python3 benchmarks/bench_kernels.py [--preset toy|paper] [--repeat 5]

Prints median wall time per call for the Joseph forward/adjoint projector and
the convolution patch gather/scatter, plus the maximum absolute difference
between the two backends' outputs.
"""
import argparse
import statistics
import time

import numpy as np

from petrecon import kernels
from petrecon.geometry import preset


def timed(fn, repeat):
    fn()
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts) * 1e3, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="toy", choices=("toy", "paper"))
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    found = kernels.backends()
    if "cython" not in found:
        print("compiled backend not built; only the numpy fallback is available")
    geo = preset(args.preset)
    n, p = geo.grid.n, geo.grid.pixel_mm
    theta = geo.sinogram.angles()
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    offsets = geo.sinogram.offsets()
    rng = np.random.default_rng(0)
    img = rng.random((n, n))
    sino = rng.random(geo.sinogram.shape)
    x = rng.random((8, 48, 48, 32)).astype(np.float32)
    ho, wo = 24, 24
    dcols = rng.random((8 * ho * wo, 9 * 32)).astype(np.float32)

    def cases(joseph, conv):
        def im2col():
            cols = np.empty((8 * ho * wo, 9 * 32), np.float32)
            conv.im2col(x, 2, cols)
            return cols

        def col2im():
            dx = np.zeros_like(x)
            conv.col2im(dcols, 2, dx)
            return dx

        return {
            "joseph forward": lambda: joseph.forward(img, cos_t, sin_t, offsets, p),
            "joseph adjoint": lambda: joseph.adjoint(sino, cos_t, sin_t, offsets, n, p),
            "im2col (8x48x48x32, stride 2)": im2col,
            "col2im (8x48x48x32, stride 2)": col2im,
        }

    results = {name: {k: timed(fn, args.repeat) for k, fn in cases(*mods).items()}
               for name, mods in found.items()}
    print(f"preset {args.preset}: image {n}x{n}, sinogram {geo.sinogram.shape[0]}x{geo.sinogram.shape[1]}")
    print(f"{'kernel':32s}" + "".join(f"{b:>12s}" for b in results) + "     speedup   max|diff|")
    for k in results["python"]:
        row = f"{k:32s}" + "".join(f"{results[b][k][0]:10.2f}ms" for b in results)
        if "cython" in results:
            speed = results["python"][k][0] / results["cython"][k][0]
            diff = np.max(np.abs(np.asarray(results["python"][k][1]) - np.asarray(results["cython"][k][1])))
            row += f"{speed:11.1f}x{diff:12.2e}"
        print(row)


if __name__ == "__main__":
    main()
