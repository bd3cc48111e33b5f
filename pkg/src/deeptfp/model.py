"""The citywide prediction network.

Three branches with identical structure read the closeness, period and
trend windows.  Each branch is an input convolution lifting its window
frames to feature maps, a stack of residual units, and a linear output
convolution back down to one channel.  A residual unit is

    out = x + conv2(relu(conv1(x)))

so a unit with zero weights is the identity map and deepening a branch
with zeroed units never changes its output.

Branch outputs are fused per cell by learnable weight maps, one per
branch.  The fused grid is the network's raw estimate of the target
frame; an autoregressive head combines the last ar_order fused estimates
(computed from time-shifted windows, shared branch weights) into the
final prediction:

    prediction = intercept + sum_i coeff_i * fused_at(t + 1 - i)

With coeff_1 = 1 and the rest zero the head passes the newest fused
estimate straight through.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .series import Dataset, DataError, WindowConfig, windows_at
from .tensor import (ShapeError, Tensor, add, conv2d, mse_loss, mul, mul_map,
                     no_grad, relu, reshape)


@dataclass(frozen=True)
class DeepTfpConfig:
    rows: int
    cols: int
    windows: WindowConfig = field(default_factory=WindowConfig)
    feature_maps: int = 8
    residual_units: int = 2
    kernel_size: int = 3
    ar_order: int = 3

    def __post_init__(self):
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise DataError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.ar_order < 1:
            raise DataError(f"ar_order must be >= 1, got {self.ar_order}")
        if self.feature_maps < 1 or self.residual_units < 0:
            raise DataError("feature_maps must be >= 1 and residual_units >= 0")


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class ResidualUnit:
    """Two convolutions with a skip connection around them."""

    def __init__(self, feature_maps: int, kernel_size: int):
        f, k = feature_maps, kernel_size
        self.kernel1 = _zeros(f, f, k, k)
        self.bias1 = _zeros(f)
        self.kernel2 = _zeros(f, f, k, k)
        self.bias2 = _zeros(f)

    def forward(self, x: Tensor) -> Tensor:
        h = relu(conv2d(x, self.kernel1, self.bias1))
        return add(x, conv2d(h, self.kernel2, self.bias2))

    def parameters(self, prefix: str):
        yield f"{prefix}.kernel1", self.kernel1
        yield f"{prefix}.bias1", self.bias1
        yield f"{prefix}.kernel2", self.kernel2
        yield f"{prefix}.bias2", self.bias2


class Branch:
    """One window reader: input conv, residual stack, linear output conv."""

    def __init__(self, window_len: int, config: DeepTfpConfig):
        f, k = config.feature_maps, config.kernel_size
        self.window_len = window_len
        self.in_kernel = _zeros(f, window_len, k, k)
        self.in_bias = _zeros(f)
        self.units = [ResidualUnit(f, k) for _ in range(config.residual_units)]
        self.out_kernel = _zeros(1, f, k, k)
        self.out_bias = _zeros(1)

    def forward(self, x: Tensor) -> Tensor:
        """(N, window_len, H, W) window stack to an (N, H, W) grid.

        A single (window_len, H, W) instance is accepted and returns
        (H, W).  The output convolution is linear on purpose: fused
        estimates live on the normalized scale, which is signed.
        """
        single = x.data.ndim == 3
        if single:
            x = reshape(x, (1,) + x.data.shape)
        h = relu(conv2d(x, self.in_kernel, self.in_bias))
        for unit in self.units:
            h = unit.forward(h)
        out = conv2d(h, self.out_kernel, self.out_bias)
        n, _, rows, cols = out.data.shape
        return reshape(out, (rows, cols) if single else (n, rows, cols))

    def structure_digest(self) -> str:
        """Layer signature, excluding the window length.

        Window length is the shape of the data a branch is fed, not part
        of the network structure, so the three branches digest equally.
        """
        k = self.in_kernel.shape[-1]
        f = self.in_kernel.shape[0]
        return (f"in:conv{k}x{k}->{f}"
                f"|res:{len(self.units)}x[conv{k}x{k}->{f},conv{k}x{k}->{f}]"
                f"|out:conv{k}x{k}->1")

    def parameters(self, prefix: str):
        yield f"{prefix}.in.kernel", self.in_kernel
        yield f"{prefix}.in.bias", self.in_bias
        for i, unit in enumerate(self.units):
            yield from unit.parameters(f"{prefix}.unit{i}")
        yield f"{prefix}.out.kernel", self.out_kernel
        yield f"{prefix}.out.bias", self.out_bias


class Fusion:
    """Per-cell weighted sum of the three branch outputs."""

    def __init__(self, rows: int, cols: int):
        self.closeness_map = _zeros(rows, cols)
        self.period_map = _zeros(rows, cols)
        self.trend_map = _zeros(rows, cols)

    def forward(self, closeness: Tensor, period: Tensor, trend: Tensor) -> Tensor:
        out = add(mul_map(closeness, self.closeness_map),
                  mul_map(period, self.period_map))
        return add(out, mul_map(trend, self.trend_map))

    def parameters(self, prefix: str):
        yield f"{prefix}.closeness_map", self.closeness_map
        yield f"{prefix}.period_map", self.period_map
        yield f"{prefix}.trend_map", self.trend_map


class ARHead:
    """Order-n autoregression over fused estimates, scalar coefficients."""

    def __init__(self, order: int):
        self.order = order
        self.coeffs = [_zeros() for _ in range(order)]
        self.intercept = _zeros()

    def predict(self, history: list) -> Tensor:
        """history holds the last `order` fused grids, oldest first.

        coeff_i multiplies the estimate i - 1 steps back, so coeff_1
        pairs with the newest entry.
        """
        if len(history) != self.order:
            raise ShapeError(
                f"ar_predict: need {self.order} fused grids, got {len(history)}")
        out = None
        for i in range(1, self.order + 1):
            term = mul(history[self.order - i], self.coeffs[i - 1])
            out = term if out is None else add(out, term)
        return add(out, self.intercept)

    def parameters(self, prefix: str):
        for i, coeff in enumerate(self.coeffs, start=1):
            yield f"{prefix}.coeff{i}", coeff
        yield f"{prefix}.intercept", self.intercept


@dataclass
class ModelBatch:
    """Stacked inputs for a set of targets; index s holds the windows for
    time t - s, so s = 0 is the target's own lookback."""

    closeness: list   # per shift: (N, closeness_len, H, W)
    period: list
    trend: list
    target: np.ndarray  # (N, H, W)
    ts: np.ndarray


class DeepTfpModel:
    """Branches, fusion and AR head over a fixed grid."""

    kind = "deeptfp"

    def __init__(self, config: DeepTfpConfig):
        wc = config.windows
        self.config = config
        self.closeness_branch = Branch(wc.closeness_len, config)
        self.period_branch = Branch(wc.period_len, config)
        self.trend_branch = Branch(wc.trend_len, config)
        self.fusion = Fusion(config.rows, config.cols)
        self.head = ARHead(config.ar_order)

    def parameters(self) -> list:
        out = []
        out.extend(self.closeness_branch.parameters("closeness"))
        out.extend(self.period_branch.parameters("period"))
        out.extend(self.trend_branch.parameters("trend"))
        out.extend(self.fusion.parameters("fusion"))
        out.extend(self.head.parameters("head"))
        return out

    def init_parameters(self, seed: int) -> None:
        """Deterministic starting point: random input and first-unit
        convolutions (fan-in scaled uniform), zero biases, zero second
        unit convolutions (units start as identity), fusion maps at 1/3,
        AR head at passthrough (coeff_1 = 1, intercept 0)."""
        rng = np.random.default_rng(seed)

        def fill(t: Tensor):
            fan_in = int(np.prod(t.shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            t.assign_(rng.uniform(-bound, bound, size=t.shape))

        for branch in (self.closeness_branch, self.period_branch, self.trend_branch):
            fill(branch.in_kernel)
            for unit in branch.units:
                fill(unit.kernel1)
                unit.kernel2.assign_(np.zeros(unit.kernel2.shape))
            fill(branch.out_kernel)
        third = np.full((self.config.rows, self.config.cols), 1.0 / 3.0)
        self.fusion.closeness_map.assign_(third)
        self.fusion.period_map.assign_(third)
        self.fusion.trend_map.assign_(third)
        self.head.coeffs[0].assign_(np.array(1.0))

    def min_valid_t(self) -> int:
        # Shift ar_order - 1 must still have complete windows.
        return self.config.windows.first_valid_t() + self.config.ar_order - 1

    def make_batch(self, dataset: Dataset, ts) -> ModelBatch:
        wc = self.config.windows
        ts = np.asarray(ts, dtype=np.int64)
        if ts.min() < self.min_valid_t():
            raise DataError(
                f"target t={int(ts.min())} lacks history for "
                f"ar_order={self.config.ar_order} (first valid is {self.min_valid_t()})")
        closeness, period, trend = [], [], []
        for s in range(self.config.ar_order):
            windows = [windows_at(dataset.frames, int(t) - s, wc) for t in ts]
            closeness.append(np.stack([w[0] for w in windows]))
            period.append(np.stack([w[1] for w in windows]))
            trend.append(np.stack([w[2] for w in windows]))
        target = dataset.frames[ts - 1]
        return ModelBatch(closeness=closeness, period=period, trend=trend,
                          target=target, ts=ts)

    def fused_estimate(self, closeness: Tensor, period: Tensor, trend: Tensor) -> Tensor:
        return self.fusion.forward(self.closeness_branch.forward(closeness),
                                   self.period_branch.forward(period),
                                   self.trend_branch.forward(trend))

    def forward_batch(self, batch: ModelBatch) -> Tensor:
        """(N, H, W) predictions on the normalized scale."""
        newest_first = [
            self.fused_estimate(Tensor(batch.closeness[s]),
                                Tensor(batch.period[s]),
                                Tensor(batch.trend[s]))
            for s in range(self.config.ar_order)]
        return self.head.predict(list(reversed(newest_first)))

    def loss_on_batch(self, batch: ModelBatch) -> Tensor:
        return mse_loss(self.forward_batch(batch), Tensor(batch.target))

    def predict_frames(self, dataset: Dataset, ts) -> np.ndarray:
        """Normalized predictions for the given targets, no graph kept.

        Fused estimates are computed once per distinct time index even
        when consecutive targets share shifted windows.
        """
        ts = np.asarray(ts, dtype=np.int64)
        order = self.config.ar_order
        wc = self.config.windows
        needed = sorted({int(t) - s for t in ts for s in range(order)})
        fused = {}
        with no_grad():
            for start in range(0, len(needed), 256):
                chunk = needed[start:start + 256]
                windows = [windows_at(dataset.frames, u, wc) for u in chunk]
                grids = self.fused_estimate(
                    Tensor(np.stack([w[0] for w in windows])),
                    Tensor(np.stack([w[1] for w in windows])),
                    Tensor(np.stack([w[2] for w in windows]))).numpy()
                fused.update(zip(chunk, grids))
        coeffs = [c.item() for c in self.head.coeffs]
        intercept = self.head.intercept.item()
        out = np.empty((len(ts),) + dataset.grid_shape)
        for row, t in enumerate(ts):
            acc = np.full(dataset.grid_shape, intercept)
            for i in range(1, order + 1):
                acc += coeffs[i - 1] * fused[int(t) + 1 - i]
            out[row] = acc
        return out


def model_forward(model: DeepTfpModel, instance, frames: np.ndarray = None) -> Tensor:
    """Single-instance prediction as an (H, W) tensor.

    With ar_order == 1 the instance's own windows suffice.  Deeper AR
    orders need the normalized frame stack to derive the shifted windows,
    so `frames` is required then.
    """
    order = model.config.ar_order
    if order == 1:
        fused = model.fused_estimate(Tensor(instance.closeness),
                                     Tensor(instance.period),
                                     Tensor(instance.trend))
        return model.head.predict([fused])
    if frames is None:
        raise DataError(
            f"model_forward with ar_order={order} needs the frame stack "
            "to build shifted windows; pass frames=dataset.frames")
    if instance.t < model.min_valid_t():
        raise DataError(
            f"t={instance.t} lacks history for ar_order={order}; "
            f"earliest valid target is t={model.min_valid_t()}")
    wc = model.config.windows
    newest_first = []
    for s in range(order):
        c, p, q = windows_at(frames, instance.t - s, wc)
        newest_first.append(model.fused_estimate(Tensor(c), Tensor(p), Tensor(q)))
    return model.head.predict(list(reversed(newest_first)))
