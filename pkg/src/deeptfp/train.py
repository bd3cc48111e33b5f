"""Mini-batch training over the shared model protocol.

Works for any model exposing parameters / init_parameters / min_valid_t /
make_batch / loss_on_batch / predict_frames.  Each epoch shuffles the
training targets into batches so every instance is visited exactly once,
clips the global gradient norm, steps the optimizer, and scores RMSE on
a held-out validation slice (the last tenth of the training range by
time, so validation always lies in the future of the updates).  Training
stops when validation RMSE has not improved for `patience` epochs, and
the best-scoring parameters are restored before returning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .series import Dataset, DataError
from .tensor import NonFiniteError


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"
    learning_rate: float = 0.01
    max_epochs: int = 200
    patience: int = 10
    batch_size: int = 32
    clip_norm: float = 5.0
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise DataError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.learning_rate <= 0.0:
            raise DataError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_epochs < 0 or self.patience < 1 or self.batch_size < 1:
            raise DataError("max_epochs must be >= 0, patience and batch_size >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise DataError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.clip_norm <= 0.0:
            raise DataError(f"clip_norm must be positive, got {self.clip_norm}")


@dataclass
class TrainReport:
    rows: list            # (epoch, train_loss, val_rmse), 1-based epochs
    best_epoch: int = 0   # 0 when no epoch ran
    best_val_rmse: float = math.nan

    def save_csv(self, path) -> None:
        lines = ["epoch,train_loss,val_rmse"]
        for epoch, loss, rmse in self.rows:
            lines.append(f"{epoch},{float(loss)!r},{float(rmse)!r}")
        Path(path).write_text("\n".join(lines) + "\n")


class _Sgd:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self):
        for _, p in self.params:
            p.assign_(p.data - self.lr * p.grad)


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(p.shape) for _, p in params]
        self.v = [np.zeros(p.shape) for _, p in params]
        self.t = 0

    def step(self):
        self.t += 1
        corr1 = 1.0 - self.beta1 ** self.t
        corr2 = 1.0 - self.beta2 ** self.t
        for i, (_, p) in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            step = self.lr * (self.m[i] / corr1) / (np.sqrt(self.v[i] / corr2) + self.eps)
            p.assign_(p.data - step)


def _clip_gradients(params, max_norm: float) -> None:
    total = 0.0
    for _, p in params:
        total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for _, p in params:
            p.grad *= scale


def _val_rmse(model, dataset: Dataset, val_ts: np.ndarray) -> float:
    pred = dataset.normalizer.inverse(model.predict_frames(dataset, val_ts))
    actual = dataset.normalizer.inverse(dataset.frames[val_ts - 1])
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def train(model, dataset: Dataset, config: TrainConfig, run_dir=None) -> TrainReport:
    """Fit the model in place and return the per-epoch report.

    With run_dir set, every epoch writes `epoch-<k>.ckpt` and the best
    validation score so far keeps `best.ckpt` current.
    """
    if any(inst.tag == "test" for inst in dataset.instances):
        raise TrainingError("dataset contains instances tagged 'test'; "
                            "refusing to fit on evaluation data")
    ts = np.array(sorted(inst.t for inst in dataset.instances
                         if inst.t >= model.min_valid_t()), dtype=np.int64)
    if len(ts) < 2:
        raise TrainingError(
            f"need at least 2 usable instances, found {len(ts)} "
            f"(earliest valid target is t={model.min_valid_t()})")
    n_val = max(1, int(round(config.val_fraction * len(ts))))
    if n_val >= len(ts):
        n_val = len(ts) - 1
    train_ts, val_ts = ts[:-n_val], ts[-n_val:]

    report = TrainReport(rows=[])
    if config.max_epochs == 0:
        return report

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)

    # Frozen tensors (requires_grad off) are carried by the model but
    # never stepped; swapping one in is how a submodule is pinned.
    params = [(name, p) for name, p in model.parameters() if p.requires_grad]
    opt_cls = _Sgd if config.optimizer == "sgd" else _Adam
    opt = opt_cls(params, config.learning_rate)
    rng = np.random.default_rng(config.seed)
    best = None
    since_best = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_ts))
        loss_sum = 0.0
        try:
            for start in range(0, len(order), config.batch_size):
                batch_ts = train_ts[order[start:start + config.batch_size]]
                batch = model.make_batch(dataset, batch_ts)
                loss = model.loss_on_batch(batch)
                loss.backward()
                _clip_gradients(params, config.clip_norm)
                opt.step()
                for _, p in params:
                    p.zero_grad()
                loss_sum += loss.item() * len(batch_ts)
            val = _val_rmse(model, dataset, val_ts)
        except NonFiniteError as exc:
            raise TrainingError(
                f"non-finite values in epoch {epoch}: {exc}; the learning "
                f"rate {config.learning_rate} is likely too high") from exc
        train_loss = loss_sum / len(train_ts)
        report.rows.append((epoch, train_loss, val))

        if run_dir is not None:
            save_checkpoint(run_dir / f"epoch-{epoch}.ckpt", model)
        if best is None or val < best[1]:
            best = (epoch, val, {name: p.data.copy() for name, p in params})
            since_best = 0
            if run_dir is not None:
                save_checkpoint(run_dir / "best.ckpt", model)
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    report.best_epoch, report.best_val_rmse = best[0], best[1]
    for name, p in params:
        p.assign_(best[2][name])
    return report
