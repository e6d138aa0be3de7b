"""Training and evaluation: L1 objective, Adam, decayed LR, early stopping,
deterministic seeding, and the named-tensor checkpoint format.

Seeding scheme: parameter init draws from rng((seed, 0)), the dropout
stream from rng((seed, 1)), and epoch e's batch shuffle from
rng((seed, 1 + e)). Same seed and config therefore reproduce every draw.
"""

from __future__ import annotations

import csv
import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import revin, tensor as T
from .config import RunConfig
from .data import DataError, split_ranges, window_iter
from .model import PRformer
from .tensor import ShapeMismatchError, Tensor


class DivergenceError(RuntimeError):
    """Loss left the reals; carries enough context to locate the step."""


class CheckpointError(DataError):
    pass


def mae_loss(y_hat, y):
    """Mean absolute error over every (horizon, channel[, batch]) element."""
    if y_hat.shape != y.shape:
        raise ShapeMismatchError("mae_loss", y_hat.shape, y.shape)
    return T.mean(T.abs_(T.sub(y_hat, y)))


@dataclass
class Metrics:
    mse: float
    mae: float
    per_horizon: list | None = None  # optional (mse, mae) per step ahead


class Adam:
    """Standard Adam with bias correction; lr is mutable between epochs."""

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.named_params:
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * (g * g)
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None


def clip_gradients(named_params, max_norm):
    """Scale all gradients so their global L2 norm is at most `max_norm`."""
    total = 0.0
    for _, p in named_params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = np.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        for _, p in named_params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


def lr_for_epoch(base_lr, decay, epoch):
    """Flat for the first three epochs, then exponential decay (1-based)."""
    return base_lr * decay ** max(0, epoch - 3)


@dataclass
class TrainState:
    model: PRformer
    optimizer: Adam
    epoch: int = 0
    best_val_mae: float = float("inf")
    patience_left: int = 0
    seed: int = 0


@dataclass
class TrainResult:
    model: PRformer
    history: list = field(default_factory=list)  # per-epoch dicts
    best_val_mae: float = float("inf")
    epochs_run: int = 0
    stopped_early: bool = False


def _snapshot(model):
    return [p.data.copy() for _, p in model.named_parameters()]


def _restore(model, snapshot):
    for (_, p), saved in zip(model.named_parameters(), snapshot):
        p.data[:] = saved


def _normalized_target(y, state, params):
    scaled = T.div(T.sub(y, state.mu), state.sigma)
    return T.add(T.mul(scaled, params.gamma), params.beta)


def _loss_for_batch(model, batch, config, dropout_rng):
    x = Tensor(batch.inputs)
    y = Tensor(batch.targets)
    y_raw, y_norm, state = model.forward_parts(x, training=True,
                                               dropout_rng=dropout_rng)
    if config.normalized_loss:
        return mae_loss(y_norm, _normalized_target(y, state, model.params.revin))
    return mae_loss(y_raw, y)


def train(config: RunConfig, table, progress=None) -> TrainResult:
    """Fit a model on `table` under `config`; returns the best-val model.

    Per epoch: shuffled train pass with Adam at the decayed LR, then an
    ordered validation pass on raw-scale MAE. Stops when validation fails to
    improve for `patience` epochs; the best-validation parameters are
    restored before returning.
    """
    config.validate()
    ranges = split_ranges(table.length, config.split_scheme, config.lookback,
                          config.pred_len, config.strict_split)
    train_range, val_range, _ = ranges
    model = PRformer(config, table.n_channels)
    optimizer = Adam(model.named_parameters(), config.lr)
    dropout_rng = np.random.default_rng((config.seed, 1))
    result = TrainResult(model=model)
    best = None
    patience_left = config.patience

    for epoch in range(1, config.max_epochs + 1):
        started = time.monotonic()
        optimizer.lr = lr_for_epoch(config.lr, config.lr_decay, epoch)
        loss_sum, n_batches = 0.0, 0
        for batch in window_iter(table.values, train_range, config.lookback,
                                 config.pred_len, config.batch_size,
                                 shuffle_seed=(config.seed, 1 + epoch)):
            loss = _loss_for_batch(model, batch, config, dropout_rng)
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss {value} at epoch {epoch}, batch {n_batches}, "
                    f"lr {optimizer.lr:.3e}")
            optimizer.zero_grad()
            T.backward(loss)
            if config.grad_clip is not None:
                clip_gradients(optimizer.named_params, config.grad_clip)
            optimizer.step()
            revin.clamp_gamma(model.params.revin)
            loss_sum += value
            n_batches += 1
        optimizer.zero_grad()

        val = evaluate(model, table.values, val_range, config)
        row = {"epoch": epoch, "lr": optimizer.lr,
               "train_mae": loss_sum / max(1, n_batches),
               "val_mae": val.mae, "val_mse": val.mse,
               "seconds": time.monotonic() - started}
        result.history.append(row)
        result.epochs_run = epoch
        if progress is not None:
            progress(row)

        if val.mae < result.best_val_mae:
            result.best_val_mae = val.mae
            best = _snapshot(model)
            patience_left = config.patience
        else:
            patience_left -= 1
            if patience_left == 0:
                result.stopped_early = True
                break

    if best is not None:
        _restore(model, best)
    return result


def evaluate(model, values, row_range, config, per_horizon=False) -> Metrics:
    """Raw-scale MSE/MAE over every window of `row_range`, in order."""
    horizon = config.pred_len
    sq_sum = np.zeros(horizon)
    abs_sum = np.zeros(horizon)
    count = 0
    with T.no_grad():
        for batch in window_iter(values, row_range, config.lookback, horizon,
                                 config.batch_size):
            pred = model.forward(Tensor(batch.inputs)).data
            err = (pred - batch.targets).astype(np.float64)
            sq_sum += (err ** 2).mean(axis=2).sum(axis=0)
            abs_sum += np.abs(err).mean(axis=2).sum(axis=0)
            count += len(batch.starts)
    if count == 0:
        raise DataError(f"no windows in range {row_range}")
    metrics = Metrics(mse=float(sq_sum.sum() / (horizon * count)),
                      mae=float(abs_sum.sum() / (horizon * count)))
    if per_horizon:
        metrics.per_horizon = [(float(s / count), float(a / count))
                               for s, a in zip(sq_sum, abs_sum)]
    return metrics


def predict_over_range(model, values, row_range, config):
    """Yield (starts, y_true, y_pred) per ordered batch; feeds the CSV writer."""
    with T.no_grad():
        for batch in window_iter(values, row_range, config.lookback,
                                 config.pred_len, config.batch_size):
            pred = model.forward(Tensor(batch.inputs)).data
            yield batch.starts, batch.targets, pred


def single_batch_overfit(config: RunConfig, inputs, targets, steps=500,
                         report_every=None):
    """Drive one fixed batch to near-zero MAE; returns the loss trace."""
    model = PRformer(config, inputs.shape[2])
    optimizer = Adam(model.named_parameters(), config.lr)
    x, y = Tensor(inputs), Tensor(targets)
    losses = []
    for step in range(steps):
        y_hat = model.forward(x)
        loss = mae_loss(y_hat, y)
        value = float(loss.data)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss at overfit step {step}")
        losses.append(value)
        optimizer.zero_grad()
        T.backward(loss)
        optimizer.step()
        revin.clamp_gamma(model.params.revin)
        if report_every and (step + 1) % report_every == 0:
            print(f"  step {step + 1}: mae {value:.5f}")
    return losses


# ---------------------------------------------------------------------------
# checkpoint archive: 4-byte little-endian manifest length, JSON manifest,
# then each parameter's raw little-endian buffer in manifest order

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model):
    entries = []
    payloads = []
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data.astype(p.data.dtype.newbyteorder("<")))
        entries.append({"name": name, "shape": list(p.data.shape),
                        "dtype": p.data.dtype.name})
        payloads.append(arr.tobytes())
    manifest = {"format_version": CHECKPOINT_VERSION,
                "config": model.config.to_dict(),
                "channels": model.channels,
                "params": entries}
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for payload in payloads:
            fh.write(payload)


def load_checkpoint(path):
    """Rebuild a model from an archive; every shape is validated."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    if len(raw) < 4:
        raise CheckpointError(f"{path}: truncated header")
    (length,) = struct.unpack("<I", raw[:4])
    if len(raw) < 4 + length:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[4:4 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: manifest is not valid JSON") from None
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version "
                              f"{manifest.get('format_version')!r}")
    config = RunConfig.from_dict(manifest["config"])
    model = PRformer(config, manifest["channels"])
    offset = 4 + length
    named = dict(model.named_parameters())
    seen = set()
    for entry in manifest["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        if name not in named:
            raise CheckpointError(f"{path}: unknown parameter {name!r}")
        p = named[name]
        if p.data.shape != shape:
            raise CheckpointError(f"{path}: shape mismatch for {name!r}: archive "
                                  f"{shape}, model {p.data.shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        chunk = raw[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        p.data[:] = np.frombuffer(chunk, dtype=dtype).reshape(shape)
        offset += nbytes
        seen.add(name)
    missing = set(named) - seen
    if missing:
        raise CheckpointError(f"{path}: archive missing parameters "
                              f"{sorted(missing)[:3]}...")
    return model


HISTORY_COLUMNS = ["epoch", "lr", "train_mae", "val_mae", "val_mse", "seconds"]


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in HISTORY_COLUMNS})
