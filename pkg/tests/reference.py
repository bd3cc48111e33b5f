"""Independent reference implementations the tests verify against.

Everything here is written for clarity, not speed: brute-force loops and
closed-form formulas only, no imports from the package under test.
"""

import numpy as np


def conv2d_direct(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Quadruple-loop direct summation, same zero padding, odd K."""
    c_in, h, w = x.shape
    c_out, _, kk, _ = kernel.shape
    r = (kk - 1) // 2
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for y in range(h):
            for z in range(w):
                acc = bias[o]
                for c in range(c_in):
                    for i in range(kk):
                        for j in range(kk):
                            yy = y + i - r
                            zz = z + j - r
                            if 0 <= yy < h and 0 <= zz < w:
                                acc += kernel[o, c, i, j] * x[c, yy, zz]
                out[o, y, z] = acc
    return out


def rmse_direct(actual, predicted) -> float:
    a = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    return float(np.sqrt(np.mean((p - a) ** 2)))


def ar_least_squares(series: np.ndarray, order: int):
    """Closed-form least-squares fit of y_t = c + sum_i theta_i * y_{t-i}.

    Returns (theta array of length `order`, intercept c).
    """
    y = np.asarray(series, dtype=float)
    rows = []
    targets = []
    for t in range(order, len(y)):
        rows.append([y[t - i] for i in range(1, order + 1)] + [1.0])
        targets.append(y[t])
    coef, *_ = np.linalg.lstsq(np.asarray(rows), np.asarray(targets), rcond=None)
    return coef[:-1], float(coef[-1])
