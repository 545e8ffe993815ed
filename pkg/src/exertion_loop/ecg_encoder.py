"""CNN encoder for 3-second ECG windows.

Trained first as a low/medium/high activity classifier, then frozen with the
classification head removed so it maps each 390-sample window to 8 numbers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import physio_sim
from .errors import DataError, FrozenModelError, PreconditionError, ShapeError
from .nn import (
    Adam,
    AdaptiveAvgPool1d,
    BatchNorm1d,
    Conv1d,
    Flatten,
    Linear,
    MaxPool1d,
    Module,
    Swish,
    cross_entropy,
)

log = logging.getLogger(__name__)

WINDOW_LENGTH = 390  # 3 s at 130 Hz
EMBED_DIM = 8
CLASSES = ("low", "medium", "high")


class ConvNormPool(Module):
    """Three same-padded convolutions with a skip from the first to the third.

    conv1 -> norm -> swish -> conv2 -> norm -> swish -> conv3, then
    (conv1 + conv3) -> norm -> swish -> max-pool(2).
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 5,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = Conv1d(in_channels, out_channels, kernel_size, pad, rng, dtype)
        self.norm1 = BatchNorm1d(out_channels, dtype=dtype)
        self.act1 = Swish()
        self.conv2 = Conv1d(out_channels, out_channels, kernel_size, pad, rng, dtype)
        self.norm2 = BatchNorm1d(out_channels, dtype=dtype)
        self.act2 = Swish()
        self.conv3 = Conv1d(out_channels, out_channels, kernel_size, pad, rng, dtype)
        self.norm3 = BatchNorm1d(out_channels, dtype=dtype)
        self.act3 = Swish()
        self.pool = MaxPool1d(2)

    def children(self):
        return [(name, getattr(self, name)) for name in
                ("conv1", "norm1", "act1", "conv2", "norm2", "act2", "conv3", "norm3", "act3", "pool")]

    def forward(self, x):
        x1 = self.conv1(x)
        h = self.act1(self.norm1(x1))
        h = self.act2(self.norm2(self.conv2(h)))
        s = x1 + self.conv3(h)
        return self.pool(self.act3(self.norm3(s)))

    def backward(self, grad):
        self._check_trainable()
        gs = self.norm3.backward(self.act3.backward(self.pool.backward(grad)))
        gh = self.conv3.backward(gs)
        gh = self.conv2.backward(self.norm2.backward(self.act2.backward(gh)))
        gx1 = self.norm1.backward(self.act1.backward(gh)) + gs
        return self.conv1.backward(gx1)


class EncoderModel(Module):
    def __init__(self, channels=(256, 128, 64), kernel_size: int = 5, embed_dim: int = EMBED_DIM,
                 n_classes: int = len(CLASSES), seed: int = 0, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        widths = (1,) + tuple(channels)
        self.blocks = [ConvNormPool(widths[i], widths[i + 1], kernel_size, rng, dtype)
                       for i in range(len(channels))]
        self.avgpool = AdaptiveAvgPool1d(1)
        self.flatten = Flatten()
        self.fc = Linear(widths[-1], embed_dim, rng, dtype)
        self.head: Linear | None = Linear(embed_dim, n_classes, rng, dtype)
        self.dtype = dtype

    def children(self):
        kids = [(f"blocks.{i}", b) for i, b in enumerate(self.blocks)]
        kids += [("avgpool", self.avgpool), ("flatten", self.flatten), ("fc", self.fc)]
        if self.head is not None:
            kids.append(("head", self.head))
        return kids

    @property
    def has_head(self) -> bool:
        return self.head is not None

    def _prepare(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim == 2:
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != WINDOW_LENGTH:
            raise ShapeError(f"encoder expects windows of {WINDOW_LENGTH} samples, got shape {x.shape}")
        return x.astype(self.dtype, copy=False)

    def embed(self, x) -> np.ndarray:
        h = self._prepare(x)
        for block in self.blocks:
            h = block(h)
        return self.fc(self.flatten(self.avgpool(h)))

    def forward(self, x):
        z = self.embed(x)
        return self.head(z) if self.head is not None else z

    def backward(self, grad):
        self._check_trainable()
        if self.head is not None:
            grad = self.head.backward(grad)
        grad = self.avgpool.backward(self.flatten.backward(self.fc.backward(grad)))
        for block in reversed(self.blocks):
            grad = block.backward(grad)
        return grad


def standardize_windows(windows) -> np.ndarray:
    """Per-window zero mean / unit variance."""
    w = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    mean = w.mean(axis=1, keepdims=True)
    std = w.std(axis=1, keepdims=True)
    return (w - mean) / np.maximum(std, 1e-6)


@dataclass(frozen=True)
class EncoderTrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    epochs: int = 500
    samples: int = 303
    val_fraction: float = 0.2
    # training stops once running train accuracy has held this level for `patience` epochs
    stop_train_acc: float = 0.98
    patience: int = 3
    setpoints: tuple[float, float, float] = (0.3, 0.6, 0.9)
    seed: int = 0


def make_ecg_dataset(n_windows: int = 303, setpoints=(0.3, 0.6, 0.9), seed: int = 0,
                     human: physio_sim.HumanParams = physio_sim.HumanParams()) -> tuple[np.ndarray, np.ndarray]:
    """Labelled 3-second ECG windows from the simulated user at three effort levels.

    For each level the heart-rate model is driven at a constant effort demand
    (starting near its steady state) and the ECG is rendered continuously; the
    recording is then cut into consecutive windows.
    """
    rng = np.random.default_rng(seed)
    fs = physio_sim.ECG_FS
    counts = [n_windows // 3 + (1 if i < n_windows % 3 else 0) for i in range(3)]
    windows, labels = [], []
    for label, (setpoint, count) in enumerate(zip(setpoints, counts)):
        level = CLASSES[label]
        steady = human.baseline_hr + human.hr_gain * setpoint
        state = physio_sim.HumanState(heart_rate=steady + rng.normal(0, 5), baseline_hr=human.baseline_hr)
        phase = rng.random()
        t = 0.0
        for _ in range(count):
            hr_trace = np.empty(WINDOW_LENGTH)
            for k in range(30):  # 10 Hz heart-rate updates, 13 ECG samples each
                state = physio_sim.step_heart_rate(state, setpoint, 0.0, 0.1, human, rng)
                hr_trace[13 * k:13 * (k + 1)] = state.heart_rate
            windows.append(physio_sim.synthesize_ecg(hr_trace, level, fs, rng=rng, phase0=phase, t0=t))
            phase = physio_sim.ecg_phase_after(hr_trace, fs, phase)
            t += 3.0
            labels.append(label)
    return np.asarray(windows), np.asarray(labels)


def _split(n: int, val_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    return order[n_val:], order[:n_val]


def accuracy(model: EncoderModel, windows: np.ndarray, labels: np.ndarray, batch: int = 64) -> float:
    if len(labels) == 0:
        return float("nan")
    was_training = model.training
    model.eval()
    preds = np.concatenate([model.forward(windows[i:i + batch]).argmax(axis=1)
                            for i in range(0, len(windows), batch)])
    model.train(was_training)
    return float(np.mean(preds == labels))


def train_classifier(windows, labels, config: EncoderTrainConfig = EncoderTrainConfig(),
                     seed: int | None = None, model: EncoderModel | None = None):
    """Fit the encoder + head on labelled windows.

    Returns ``(model, metrics)`` where ``metrics`` has one dict per epoch with
    ``epoch``, ``train_loss``, ``train_acc`` (running, training mode) and
    ``val_acc`` (evaluation mode on the held-out split).
    """
    seed = config.seed if seed is None else seed
    x = standardize_windows(windows).astype(np.float32)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[1] != WINDOW_LENGTH:
        raise ShapeError(f"windows must have {WINDOW_LENGTH} samples, got {x.shape[1]}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = _split(len(y), config.val_fraction, rng)
    missing = sorted(set(range(len(CLASSES))) - set(y[train_idx].tolist()))
    if missing:
        raise DataError(f"classes missing from the training split: {[CLASSES[m] for m in missing]}")
    model = model if model is not None else EncoderModel(seed=seed)
    if model.frozen or not model.has_head:
        raise FrozenModelError("cannot train a frozen or stripped encoder")
    model.train()
    opt = Adam(list(model.named_parameters()), lr=config.lr, clip=None)
    metrics = []
    streak = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_idx)
        # batch norm needs >= 2 rows; fold a trailing singleton into the previous batch
        starts = list(range(0, len(order), config.batch_size))
        if len(starts) > 1 and len(order) - starts[-1] < 2:
            starts.pop()
        total_loss, correct = 0.0, 0
        for i, s in enumerate(starts):
            stop = starts[i + 1] if i + 1 < len(starts) else len(order)
            idx = order[s:stop]
            logits = model.forward(x[idx])
            loss, grad = cross_entropy(logits, y[idx])
            opt.zero_grad()
            model.backward(grad)
            opt.step()
            total_loss += loss * len(idx)
            correct += int(np.sum(logits.argmax(axis=1) == y[idx]))
        row = {
            "epoch": epoch,
            "train_loss": total_loss / len(order),
            "train_acc": correct / len(order),
            "val_acc": accuracy(model, x[val_idx], y[val_idx]),
        }
        metrics.append(row)
        log.info("encoder epoch %d loss %.4f train %.3f val %.3f", epoch,
                 row["train_loss"], row["train_acc"], row["val_acc"])
        streak = streak + 1 if row["train_acc"] >= config.stop_train_acc else 0
        if config.patience > 0 and streak >= config.patience:
            break
    model.eval()
    model.split = (train_idx, val_idx)
    return model, metrics


def freeze_and_strip(model: EncoderModel) -> EncoderModel:
    """Drop the classification head and freeze everything (idempotent)."""
    if model.frozen and model.head is None:
        return model
    model.head = None
    model.freeze()
    return model


def encode(model: EncoderModel, window) -> np.ndarray:
    """8-number embedding of one standardized 390-sample window (or a batch of them)."""
    if not model.frozen or model.has_head:
        raise PreconditionError("encode() needs a frozen, stripped encoder; call freeze_and_strip first")
    w = np.asarray(window)
    if w.shape[-1] != WINDOW_LENGTH:
        raise ShapeError(f"ECG window must have {WINDOW_LENGTH} samples, got shape {w.shape}")
    z = model.embed(standardize_windows(w).astype(model.dtype))
    return z[0] if w.ndim == 1 else z
