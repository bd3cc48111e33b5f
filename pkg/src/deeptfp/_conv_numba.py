"""Numba conv2d kernels: the accelerated backend.

Direct-summation loops compiled with @njit.  Single threaded on purpose:
every output element is written exactly once and the accumulation order is
fixed, so results are reproducible run to run.  cache=True keeps compiled
code across processes, which the CLI round-trip tests rely on.

Importing this module requires numba; backend.py guards the import.
"""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def conv2d_forward(x, k, b):
    n_b, c_in, h, w = x.shape
    c_out = k.shape[0]
    kk = k.shape[2]
    r = kk // 2
    out = np.empty((n_b, c_out, h, w), dtype=np.float64)
    for n in range(n_b):
        for o in range(c_out):
            for y in range(h):
                for z in range(w):
                    acc = b[o]
                    for c in range(c_in):
                        for i in range(kk):
                            yy = y + i - r
                            if yy < 0 or yy >= h:
                                continue
                            for j in range(kk):
                                zz = z + j - r
                                if 0 <= zz < w:
                                    acc += k[o, c, i, j] * x[n, c, yy, zz]
                    out[n, o, y, z] = acc
    return out


@njit(cache=True)
def conv2d_backward_input(g, k):
    n_b, c_out, h, w = g.shape
    c_in = k.shape[1]
    kk = k.shape[2]
    r = kk // 2
    out = np.zeros((n_b, c_in, h, w), dtype=np.float64)
    for n in range(n_b):
        for c in range(c_in):
            for y in range(h):
                for z in range(w):
                    acc = 0.0
                    for o in range(c_out):
                        for i in range(kk):
                            yy = y + i - r
                            if yy < 0 or yy >= h:
                                continue
                            for j in range(kk):
                                zz = z + j - r
                                if 0 <= zz < w:
                                    acc += k[o, c, kk - 1 - i, kk - 1 - j] * g[n, o, yy, zz]
                    out[n, c, y, z] = acc
    return out


@njit(cache=True)
def conv2d_backward_kernel(g, x, kk):
    n_b, c_out, h, w = g.shape
    c_in = x.shape[1]
    r = kk // 2
    out = np.zeros((c_out, c_in, kk, kk), dtype=np.float64)
    for o in range(c_out):
        for c in range(c_in):
            for i in range(kk):
                for j in range(kk):
                    acc = 0.0
                    for n in range(n_b):
                        for y in range(h):
                            yy = y + i - r
                            if yy < 0 or yy >= h:
                                continue
                            for z in range(w):
                                zz = z + j - r
                                if 0 <= zz < w:
                                    acc += g[n, o, y, z] * x[n, c, yy, zz]
                    out[o, c, i, j] = acc
    return out


@njit(cache=True)
def conv2d_backward_bias(g):
    n_b, c_out, h, w = g.shape
    out = np.zeros(c_out, dtype=np.float64)
    for n in range(n_b):
        for o in range(c_out):
            s = 0.0
            for y in range(h):
                for z in range(w):
                    s += g[n, o, y, z]
            out[o] += s
    return out
