"""End-to-end run: build, split, train, evaluate, and write every artifact to one directory."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..config import RunConfig
from ..nn import RISK_NET, Architecture
from .dataset import DatasetManifest, build_dataset, load_split
from .evaluation import EvalReport, evaluate, evaluate_predictions
from .modelfile import save_model
from .training import TrainReport, fit, write_curves


def write_report(path, report: EvalReport, extra: dict | None = None) -> None:
    d = report.to_dict()
    if extra:
        d.update(extra)
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2)
        fh.write("\n")


def run_experiment(out_dir, cfg: RunConfig, arch: Architecture = RISK_NET, workers: int = 1):
    """Returns ``(manifest, train_report, eval_report, baseline_report)``.

    The baseline predicts the mean training label for every test sample.
    Layout: ``data/`` (dataset), ``model.bin``, ``curves.csv``, ``report.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "data"
    manifest = build_dataset(data, cfg, workers=workers)
    d_max = cfg.sgm.d_max
    x_tr, y_tr, _ = load_split(data, manifest, "train", d_max)
    x_va, y_va, _ = load_split(data, manifest, "val", d_max)
    best, _, train_report = fit(x_tr, y_tr, x_va, y_va, arch, cfg.train)
    del x_tr, x_va
    write_curves(out / "curves.csv", train_report)
    save_model(out / "model.bin", best, arch, float(d_max))
    x_te, y_te, _ = load_split(data, manifest, "test", d_max)
    thr = cfg.eval.threshold_headway
    report = evaluate(best, x_te, y_te, arch, thr)
    baseline = evaluate_predictions(np.full(y_te.shape, float(np.mean(y_tr))), y_te, thr)
    write_report(
        out / "report.json",
        report,
        {
            "best_step": train_report.best_step,
            "best_val_err": train_report.best_val_err,
            "baseline_mse": baseline.mse,
            "n_test": int(len(y_te)),
        },
    )
    return manifest, train_report, report, baseline


def load_experiment(out_dir) -> DatasetManifest:
    return DatasetManifest.read(Path(out_dir) / "data")


__all__ = ["run_experiment", "load_experiment", "write_report", "TrainReport"]
