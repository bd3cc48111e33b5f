"""Shared-weight LSTM baseline.

One standard gated cell is applied to every grid cell's count sequence
with the same parameters (input dimension 1), followed by a linear
readout of the final hidden state.  The lookback window is the last
closeness_len + period_len + trend_len consecutive frames, so the
baseline sees as many values per prediction as the convolutional model,
just without the daily and weekly striding or any spatial context.

Batches fold (instance, grid cell) into one row axis: every matrix op
runs over N * rows * cols independent sequences at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .series import Dataset, DataError, WindowConfig
from .tensor import (Tensor, add, add_bias, matmul, mse_loss, mul, no_grad,
                     reshape, sigmoid, tanh)

GATES = ("input", "forget", "output", "candidate")


@dataclass(frozen=True)
class LstmConfig:
    rows: int
    cols: int
    windows: WindowConfig = field(default_factory=WindowConfig)
    hidden: int = 16

    def __post_init__(self):
        if self.hidden < 1:
            raise DataError(f"hidden must be >= 1, got {self.hidden}")

    @property
    def window_len(self) -> int:
        wc = self.windows
        return wc.closeness_len + wc.period_len + wc.trend_len


@dataclass
class LstmBatch:
    windows: np.ndarray  # (N, window_len, H, W) consecutive frames
    target: np.ndarray   # (N, H, W)
    ts: np.ndarray


class LstmModel:
    kind = "lstm"

    def __init__(self, config: LstmConfig):
        self.config = config
        h = config.hidden
        self.w_x = {g: Tensor(np.zeros((1, h)), requires_grad=True) for g in GATES}
        self.w_h = {g: Tensor(np.zeros((h, h)), requires_grad=True) for g in GATES}
        self.b = {g: Tensor(np.zeros(h), requires_grad=True) for g in GATES}
        self.w_out = Tensor(np.zeros((h, 1)), requires_grad=True)
        self.b_out = Tensor(np.zeros(1), requires_grad=True)

    def parameters(self) -> list:
        out = []
        for g in GATES:
            out.append((f"{g}.w_x", self.w_x[g]))
            out.append((f"{g}.w_h", self.w_h[g]))
            out.append((f"{g}.bias", self.b[g]))
        out.append(("readout.w", self.w_out))
        out.append(("readout.bias", self.b_out))
        return out

    def init_parameters(self, seed: int) -> None:
        """Fan-in scaled uniform weights, zero biases except the forget
        gate's, which starts at 1.0 so early training does not flush the
        cell state."""
        rng = np.random.default_rng(seed)
        h = self.config.hidden
        for g in GATES:
            self.w_x[g].assign_(rng.uniform(-1.0, 1.0, size=(1, h)))
            bound = 1.0 / np.sqrt(h)
            self.w_h[g].assign_(rng.uniform(-bound, bound, size=(h, h)))
            self.b[g].assign_(np.full(h, 1.0) if g == "forget" else np.zeros(h))
        self.w_out.assign_(rng.uniform(-1.0 / np.sqrt(h), 1.0 / np.sqrt(h), size=(h, 1)))
        self.b_out.assign_(np.zeros(1))

    def step(self, h: Tensor, c: Tensor, x_t: Tensor):
        """One gated update; x_t is (B, 1), state tensors are (B, hidden)."""

        def gate(name):
            return add_bias(add(matmul(x_t, self.w_x[name]),
                                matmul(h, self.w_h[name])), self.b[name])

        i = sigmoid(gate("input"))
        f = sigmoid(gate("forget"))
        o = sigmoid(gate("output"))
        g = tanh(gate("candidate"))
        c_next = add(mul(f, c), mul(i, g))
        h_next = mul(o, tanh(c_next))
        return h_next, c_next

    def min_valid_t(self) -> int:
        return self.config.window_len + 1

    def make_batch(self, dataset: Dataset, ts) -> LstmBatch:
        ts = np.asarray(ts, dtype=np.int64)
        length = self.config.window_len
        if ts.min() <= length:
            raise DataError(f"target t={int(ts.min())} lacks {length} frames of history")
        windows = np.stack([dataset.frames[t - 1 - length:t - 1] for t in ts])
        return LstmBatch(windows=windows, target=dataset.frames[ts - 1], ts=ts)

    def forward_batch(self, batch: LstmBatch) -> Tensor:
        n, length, rows, cols = batch.windows.shape
        cells = rows * cols
        h = Tensor(np.zeros((n * cells, self.config.hidden)))
        c = Tensor(np.zeros((n * cells, self.config.hidden)))
        for step in range(length):
            x_t = Tensor(batch.windows[:, step].reshape(n * cells, 1))
            h, c = self.step(h, c, x_t)
        out = add_bias(matmul(h, self.w_out), self.b_out)
        return reshape(out, (n, rows, cols))

    def loss_on_batch(self, batch: LstmBatch) -> Tensor:
        return mse_loss(self.forward_batch(batch), Tensor(batch.target))

    def predict_frames(self, dataset: Dataset, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=np.int64)
        out = np.empty((len(ts),) + dataset.grid_shape)
        with no_grad():
            for start in range(0, len(ts), 64):
                chunk = ts[start:start + 64]
                batch = self.make_batch(dataset, chunk)
                out[start:start + len(chunk)] = self.forward_batch(batch).numpy()
        return out
