"""Central finite-difference verification of backward passes."""

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor


def grad_check(f, at: Tensor, step: float = 1e-5) -> float:
    """Compare analytic and numeric gradients of a scalar function.

    f maps one Tensor to a scalar Tensor and must be deterministic.  The
    analytic gradient comes from one backward pass at `at`; the numeric
    one perturbs each coordinate by +-step and takes the centered
    difference (f(x + h) - f(x - h)) / 2h.

    Returns the maximum relative error over all coordinates, where the
    relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    A result below 1e-4 is the conventional pass mark.
    """
    if step <= 0.0:
        raise ValueError(f"grad_check: step must be positive, got {step}")
    probe = Tensor(at.data, requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ShapeError(
            f"grad_check: f must return a scalar, got shape {out.data.shape}")
    out.backward()
    analytic = probe.grad.reshape(-1)

    base = at.data.reshape(-1)
    numeric = np.empty_like(base)
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] = base[i] + step
        hi = f(Tensor(bumped.reshape(at.data.shape))).item()
        bumped[i] = base[i] - step
        lo = f(Tensor(bumped.reshape(at.data.shape))).item()
        numeric[i] = (hi - lo) / (2.0 * step)
    if not np.isfinite(numeric).all():
        raise NonFiniteError("grad_check: numeric estimate is not finite")

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
