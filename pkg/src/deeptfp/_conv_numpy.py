"""Pure numpy conv2d kernels: the fallback backend.

Same zero padding, odd square kernels, float64 throughout.  All four entry
points take and return plain ndarrays; shape validation happens one level up
in the tensor layer.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def _pad(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * r, w + 2 * r), dtype=np.float64)
    out[:, :, r:r + h, r:r + w] = x
    return out


def conv2d_forward(x: np.ndarray, k: np.ndarray, b: np.ndarray) -> np.ndarray:
    """out[n,o,y,x] = b[o] + sum_{c,i,j} k[o,c,i,j] * padded[n,c,y+i,x+j]."""
    kk = k.shape[2]
    win = sliding_window_view(_pad(x, kk // 2), (kk, kk), axis=(2, 3))
    out = np.einsum("ncyxij,ocij->noyx", win, k, optimize=True)
    out += b.reshape(1, -1, 1, 1)
    return out


def conv2d_backward_input(g: np.ndarray, k: np.ndarray) -> np.ndarray:
    # Correlation of the upstream gradient with the spatially flipped kernel,
    # summed over output channels.
    kk = k.shape[2]
    win = sliding_window_view(_pad(g, kk // 2), (kk, kk), axis=(2, 3))
    return np.einsum("noyxij,ocij->ncyx", win, k[:, :, ::-1, ::-1], optimize=True)


def conv2d_backward_kernel(g: np.ndarray, x: np.ndarray, kk: int) -> np.ndarray:
    win = sliding_window_view(_pad(x, kk // 2), (kk, kk), axis=(2, 3))
    return np.einsum("noyx,ncyxij->ocij", g, win, optimize=True)


def conv2d_backward_bias(g: np.ndarray) -> np.ndarray:
    return g.sum(axis=(0, 2, 3))
