"""Mini-batch Adam training and batched prediction."""
from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..dataset import N_GEOM, RATE, STRAIN, TIME, T_STEPS, ScalerParams
from ..errors import InvalidArgument, NumericFailure
from ..geometry import DesignParams
from .gru import SurrogateModel, forward, loss_and_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 150
    batch_size: int = 600
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    cosine: bool = False

    def __post_init__(self):
        if not self.lr >= 0:
            raise InvalidArgument("lr must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgument("epochs and batch_size must be >= 1")


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, lr):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


@dataclass
class TrainResult:
    model: SurrogateModel        # best-validation parameters
    last: SurrogateModel
    history: List[dict] = field(default_factory=list)
    aborted: bool = False


def evaluate(model, X, Y, batch=4096):
    if len(X) == 0:
        return float("nan")
    tot = 0.0
    for i in range(0, len(X), batch):
        tot += np.abs(forward(model, X[i:i + batch]) - Y[i:i + batch]).sum()
    return float(tot / Y.size)


def train(model: SurrogateModel, X_train, Y_train, X_val=None, Y_val=None,
          config: Optional[TrainConfig] = None, callback=None) -> TrainResult:
    """Train in place with MAE loss; returns the best-validation snapshot.

    Without validation data the best training-epoch snapshot is kept.
    """
    cfg = config or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), cfg)
    n = len(X_train)
    best = model.copy()
    best_score = math.inf
    history = []
    aborted = False
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = cfg.lr
        if cfg.cosine:
            lr = 0.5 * cfg.lr * (1 + math.cos(math.pi * (epoch - 1) / cfg.epochs))
        order = rng.permutation(n)
        tot, cnt = 0.0, 0
        for i in range(0, n, cfg.batch_size):
            idx = np.sort(order[i:i + cfg.batch_size])
            try:
                loss, grads = loss_and_grad(model, X_train[idx], Y_train[idx])
            except NumericFailure:
                loss = float("nan")
            if not math.isfinite(loss):
                aborted = True
                break
            opt.step(grads, lr)
            tot += loss * len(idx)
            cnt += len(idx)
        if aborted or not all(np.isfinite(p).all() for p in model.parameters()):
            aborted = True
            log.warning("non-finite loss in epoch %d; keeping last good checkpoint", epoch)
            break
        train_mae = tot / max(cnt, 1)
        val_mae = evaluate(model, X_val, Y_val) if X_val is not None and len(X_val) else float("nan")
        score = val_mae if math.isfinite(val_mae) else train_mae
        if score < best_score:
            best_score = score
            best = model.copy()
        row = {"epoch": epoch, "train_mae": train_mae, "val_mae": val_mae,
               "wall_s": time.perf_counter() - t0}
        history.append(row)
        if callback is not None:
            callback(row)
    return TrainResult(best, model, history, aborted)


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mae", "val_mae", "wall_s"])
        for r in history:
            w.writerow([r["epoch"], repr(r["train_mae"]), repr(r["val_mae"]), repr(r["wall_s"])])


def design_inputs(designs, rate, final_strain, T=T_STEPS):
    """Unscaled ``(N, T, 8)`` inputs: geometry constants, time, strain ramp, rate."""
    geo = np.array([d.as_vector() if isinstance(d, DesignParams) else np.asarray(d, dtype=float)
                    for d in designs], dtype=float).reshape(-1, N_GEOM)
    strain = np.linspace(0.0, final_strain, T)
    X = np.empty((len(geo), T, 8))
    X[:, :, :N_GEOM] = geo[:, None, :]
    X[:, :, TIME] = strain / rate
    X[:, :, STRAIN] = strain
    X[:, :, RATE] = rate
    return X


@dataclass
class Prediction:
    outputs: np.ndarray        # (N, T, 4) physical units
    extrapolated: np.ndarray   # (N,) bool


def predict(model: SurrogateModel, scaler: ScalerParams, designs, rate, final_strain,
            T=T_STEPS, batch=8192) -> Prediction:
    X = design_inputs(designs, rate, final_strain, T)
    flags = np.zeros(len(X), dtype=bool)
    if scaler.in_lo is not None:
        tol = 1e-9 * np.maximum(np.abs(scaler.in_hi - scaler.in_lo), 1.0)
        flags = ((X < scaler.in_lo - tol) | (X > scaler.in_hi + tol)).any(axis=(1, 2))
        if flags.any():
            warnings.warn(f"{int(flags.sum())} design(s) outside the training range", stacklevel=2)
    Xs = scaler.scale_inputs(X)
    out = np.empty((len(X), T, model.n_out))
    for i in range(0, len(X), batch):
        out[i:i + batch] = forward(model, Xs[i:i + batch])
    return Prediction(scaler.unscale_outputs(out), flags)
