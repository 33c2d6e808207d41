"""Adam/MSE training loop with periodic validation and best-checkpoint retention."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import TrainConfig
from ..errors import TrainingDivergedError
from ..nn import AdamState, Architecture, RISK_NET, adam_step, backprop, init_params, predict_batch

log = logging.getLogger(__name__)


@dataclass
class CurvePoint:
    step: int
    epoch: int
    train_avg_err: float
    val_avg_err: float


@dataclass
class TrainReport:
    curve: list[CurvePoint] = field(default_factory=list)
    epoch_val_errors: list[float] = field(default_factory=list)
    best_step: int = 0
    best_val_err: float = math.inf
    steps: int = 0

    def to_dict(self) -> dict:
        return {
            "best_step": self.best_step,
            "best_val_err": self.best_val_err,
            "steps": self.steps,
            "epoch_val_errors": self.epoch_val_errors,
        }


def _mse(params, x, y, arch) -> float:
    pred = predict_batch(params, x, arch).astype(np.float64)
    return float(np.mean((pred - y.astype(np.float64)) ** 2))


def _subsample(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    if n <= k:
        return np.arange(n)
    return np.sort(rng.choice(n, size=k, replace=False))


def fit(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    arch: Architecture = RISK_NET,
    cfg: TrainConfig = TrainConfig(),
    params: dict | None = None,
):
    """Train and return ``(best_params, final_params, report)``.

    A curve point is recorded at step 0 (untrained training error on a fixed
    training subsample) and after every ``val_every`` optimizer steps (mean
    batch loss since the previous point). Validation at those points uses a
    fixed subsample of the validation split; the full split is scored at the
    end of every epoch. The retained checkpoint has the lowest subsample
    validation error seen.
    """
    cfg.validate()
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("training and validation splits must be non-empty")
    if params is None:
        params = init_params(arch, cfg.init_seed)
    rng = np.random.default_rng(cfg.shuffle_seed)
    tr_sub = _subsample(len(x_train), cfg.val_subsample, rng)
    val_sub = _subsample(len(x_val), cfg.val_subsample, rng)
    xv, yv = x_val[val_sub], y_val[val_sub]

    report = TrainReport()
    best_val = _mse(params, xv, yv, arch)
    report.curve.append(CurvePoint(0, 0, _mse(params, x_train[tr_sub], y_train[tr_sub], arch), best_val))
    report.best_val_err = best_val
    best = params
    state = AdamState.zeros_like(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    step = 0
    window: list[float] = []
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.shuffle_seed, epoch]).permutation(len(x_train))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = backprop(params, x_train[idx], y_train[idx], arch)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch}, step {step + 1} (batch ids {idx.tolist()})"
                )
            params, state = adam_step(params, grads, state)
            step += 1
            window.append(loss)
            if step % cfg.val_every == 0:
                val = _mse(params, xv, yv, arch)
                report.curve.append(CurvePoint(step, epoch, float(np.mean(window)), val))
                window = []
                if val < report.best_val_err:
                    report.best_val_err, report.best_step, best = val, step, params
        full = _mse(params, x_val, y_val, arch)
        report.epoch_val_errors.append(full)
        log.info("epoch %d: step %d, full validation mse %.6f", epoch, step, full)
    report.steps = step
    return best, params, report


def write_curves(path, report: TrainReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "train_avg_err", "val_avg_err"])
        for p in report.curve:
            w.writerow([p.step, p.epoch, repr(p.train_avg_err), repr(p.val_avg_err)])


def read_curves(path) -> list[CurvePoint]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [CurvePoint(int(r["step"]), int(r["epoch"]), float(r["train_avg_err"]), float(r["val_avg_err"])) for r in rows]


def train(manifest, root, run_cfg, arch: Architecture = RISK_NET, out_dir=None):
    """Load the train/val splits of a built dataset and fit the network.

    With ``out_dir`` the curves are written to ``curves.csv`` there.
    """
    from .dataset import load_split

    d_max = run_cfg.sgm.d_max
    x_tr, y_tr, _ = load_split(root, manifest, "train", d_max)
    x_va, y_va, _ = load_split(root, manifest, "val", d_max)
    best, _, report = fit(x_tr, y_tr, x_va, y_va, arch, run_cfg.train)
    if out_dir is not None:
        write_curves(Path(out_dir) / "curves.csv", report)
    return best, report
