"""Mini-batch training, inference and checkpoint files."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import functional as F
from .ced import CedModel, CedSpec
from .optim import make_optimizer

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainConfig:
    lr: float = 0.005
    batch_size: int = 30
    bn_momentum: float = 0.2
    lr_halving_epochs: int = 20
    momentum: float = 0.9
    epochs: int = 100
    val_every: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "batch_size", "bn_momentum", "lr_halving_epochs", "epochs", "val_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TrainConfig.{name} must be positive")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        return self.lr * 0.5 ** ((epoch - 1) // self.lr_halving_epochs)


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mse: float = float("inf")
    best_state: list = field(default_factory=list)

    @property
    def train_curve(self) -> list[float]:
        return [h["train_mse"] for h in self.history]


def evaluate_mse(model: CedModel, x, y, batch_size: int = 16) -> float:
    total, n = 0.0, 0
    for start in range(0, len(x), batch_size):
        out = model.forward(x[start : start + batch_size], train=False)
        diff = out.astype(np.float64) - y[start : start + batch_size]
        total += float(np.sum(diff * diff))
        n += diff.size
    return total / n


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        if len(idx) >= 2:  # batch norm needs two samples
            yield np.sort(idx)


def train(model: CedModel, train_x, train_y, val_x, val_y, cfg: TrainConfig,
          on_epoch=None) -> TrainResult:
    """Optimize MSE on the training arrays; keep the state with the lowest validation MSE.

    Validation runs on epochs divisible by ``cfg.val_every`` (and on the last
    epoch if none is). Arrays are ``(N, 1, H, W)``.
    """
    if len(train_x) < 2:
        raise ValueError("need at least two training samples")
    if len(val_x) == 0:
        raise ValueError("empty validation split")
    train_x = np.asarray(train_x, model.dtype)
    train_y = np.asarray(train_y, model.dtype)
    val_x = np.asarray(val_x, model.dtype)
    val_y = np.asarray(val_y, model.dtype)
    for layer in model.layers:
        if hasattr(layer, "momentum"):
            layer.momentum = cfg.bn_momentum
    params = model.parameters()
    opt = make_optimizer(model.spec.optimizer, params, cfg.lr, cfg.momentum)
    result = TrainResult()
    val_epochs = {e for e in range(1, cfg.epochs + 1) if e % cfg.val_every == 0} or {cfg.epochs}
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = cfg.lr_at(epoch)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        sse, count = 0.0, 0
        for b, idx in enumerate(_batches(len(train_x), min(cfg.batch_size, len(train_x)), rng)):
            opt.zero_grad()
            out = model.forward(train_x[idx], train=True)
            loss, grad = F.mse_loss(out, train_y[idx])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}, lr {opt.lr}")
            model.backward(grad)
            opt.step()
            sse += loss * len(idx)
            count += len(idx)
        row = {"epoch": epoch, "train_mse": sse / count, "val_mse": None, "lr": opt.lr}
        if epoch in val_epochs:
            val = evaluate_mse(model, val_x, val_y)
            if not np.isfinite(val):
                raise NumericError(f"non-finite validation loss at epoch {epoch}, lr {opt.lr}")
            row["val_mse"] = val
            if val < result.best_val_mse:
                result.best_val_mse = val
                result.best_epoch = epoch
                result.best_state = model.copy_state()
        result.history.append(row)
        log.info("epoch %d train_mse %.6g val_mse %s lr %g", epoch, row["train_mse"], row["val_mse"], opt.lr)
        if on_epoch is not None:
            on_epoch(row)
    return result


def infer(model: CedModel, g_hat, batch_size: int = 16) -> np.ndarray:
    """Eval-mode forward pass on raw (unnormalized) precorrected sinograms.

    Accepts ``(A, R)``, ``(N, A, R)`` or ``(N, 1, A, R)``; returns ``(n, n)`` or ``(N, n, n)``.
    """
    x = np.asarray(g_hat, dtype=model.dtype)
    single = x.ndim == 2
    if single:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    outs = [model.forward(x[s : s + batch_size], train=False)[:, 0]
            for s in range(0, len(x), batch_size)]
    out = np.concatenate(outs)
    return out[0] if single else out


# --- files -----------------------------------------------------------------

def save_checkpoint(path, model: CedModel, **meta) -> Path:
    """Write ``<path>.bin`` (float32 little-endian blob) and ``<path>.json`` (header)."""
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    tensors, offset = [], 0
    with open(base.with_suffix(".bin"), "wb") as fh:
        for name, arr in model.state():
            data = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(data.tobytes())
            tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += data.size
    header = {
        "spec": model.spec.to_dict(),
        "input_hw": list(model.input_hw),
        "init_seed": model.seed,
        "blob": base.with_suffix(".bin").name,
        "tensors": tensors,
        **meta,
    }
    base.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return base.with_suffix(".bin")


def load_checkpoint(path) -> tuple[CedModel, dict]:
    base = Path(path)
    if base.suffix in (".bin", ".json"):
        base = base.with_suffix("")
    header = json.loads(base.with_suffix(".json").read_text())
    model = CedModel(CedSpec.from_dict(header["spec"]), tuple(header["input_hw"]), header["init_seed"])
    blob = np.fromfile(base.parent / header["blob"], dtype="<f4")
    state = []
    for t in header["tensors"]:
        size = int(np.prod(t["shape"])) if t["shape"] else 1
        state.append((t["name"], blob[t["offset"] : t["offset"] + size].reshape(t["shape"])))
    model.load_state(state)
    return model, header


def write_curves(path, history) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mse", "val_mse", "lr"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_mse"]),
                        "" if h["val_mse"] is None else repr(h["val_mse"]), repr(h["lr"])])


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
