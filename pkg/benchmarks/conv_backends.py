"""Compare the two convolution backends on training-shaped workloads.

Run as `python3 benchmarks/conv_backends.py`.  Times the forward kernel
and the three backward kernels on the default model's shapes, first on
the numpy backend, then on numba (including a separate figure for its
one-off compile).  Numbers are per call, best of five repeats.
"""

import timeit

import numpy as np

from deeptfp import backend

SHAPES = (
    # (label, batch, c_in, c_out, height, width, kernel)
    ("branch input, 16x16 city", 32, 3, 8, 16, 16, 3),
    ("residual unit, 16x16 city", 32, 8, 8, 16, 16, 3),
    ("residual unit, 51x50 grid", 8, 8, 8, 51, 50, 3),
)


def time_call(fn, *args, number=20):
    best = min(timeit.repeat(lambda: fn(*args), number=number, repeat=5))
    return best / number * 1e3  # ms


def measure(name: str):
    backend.use(name)
    impl = backend.active()
    rows = []
    rng = np.random.default_rng(0)
    for label, n, c_in, c_out, h, w, k in SHAPES:
        x = rng.standard_normal((n, c_in, h, w))
        kernel = rng.standard_normal((c_out, c_in, k, k))
        bias = rng.standard_normal(c_out)
        g = rng.standard_normal((n, c_out, h, w))
        rows.append((label, {
            "forward": time_call(impl.conv2d_forward, x, kernel, bias),
            "grad input": time_call(impl.conv2d_backward_input, g, kernel),
            "grad kernel": time_call(impl.conv2d_backward_kernel, g, x, k),
            "grad bias": time_call(impl.conv2d_backward_bias, g),
        }))
    return rows


def main():
    print(f"numpy {np.__version__}, single process")
    results = {}
    for name in ("numpy", "numba"):
        try:
            if name == "numba":
                # First call compiles; report it apart from steady state.
                backend.use("numba")
                impl = backend.active()
                x = np.zeros((1, 1, 4, 4))
                k = np.zeros((1, 1, 3, 3))
                t0 = timeit.default_timer()
                impl.conv2d_forward(x, k, np.zeros(1))
                impl.conv2d_backward_input(np.zeros((1, 1, 4, 4)), k)
                impl.conv2d_backward_kernel(np.zeros((1, 1, 4, 4)), x, 3)
                impl.conv2d_backward_bias(np.zeros((1, 1, 4, 4)))
                print(f"numba warm-up (compile or cache load): "
                      f"{timeit.default_timer() - t0:.2f}s")
            results[name] = measure(name)
        except ImportError as exc:
            print(f"{name}: unavailable ({exc})")
    backend.use("auto")

    kernels = ("forward", "grad input", "grad kernel", "grad bias")
    for idx, (label, *_rest) in enumerate(SHAPES):
        print(f"\n{label}")
        print(f"  {'kernel':<12}" + "".join(f"{n:>12}" for n in results) +
              ("       ratio" if len(results) == 2 else ""))
        for kernel_name in kernels:
            cells = [results[n][idx][1][kernel_name] for n in results]
            line = f"  {kernel_name:<12}" + "".join(f"{v:>10.2f}ms" for v in cells)
            if len(cells) == 2 and cells[1] > 0:
                line += f"{cells[0] / cells[1]:>11.1f}x"
            print(line)


if __name__ == "__main__":
    main()
