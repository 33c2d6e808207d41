"""Dataset production: scene -> stereo pair -> QC -> disparity -> risk label -> files."""

from __future__ import annotations

import json
import logging
import math
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from ..config import RunConfig
from ..errors import MissingSampleError
from ..imageio import read_pfm, read_ppm, write_pfm, write_ppm
from ..render import render_stereo_scene
from ..rmc import risk_value
from ..scenario import generate_scene, scene_seed, write_trace
from ..stereo import INVALID, StereoPair, compute_disparity, validate_pair

log = logging.getLogger(__name__)

SPLIT_FRACTIONS = (0.70, 0.10, 0.20)
JITTER_ROWS = 6
EXCLUDED = "excluded"


@dataclass
class Sample:
    id: int
    left: str | None
    disparity: str | None
    risk: float | None
    time_headway: float | None  # None encodes an infinite headway
    scene_seed: int
    sim_time: float
    split: str | None = None
    qc: dict = field(default_factory=dict)
    reason: str | None = None

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "left": self.left,
            "disparity": self.disparity,
            "risk": self.risk,
            "time_headway": self.time_headway,
            "scene_seed": self.scene_seed,
            "sim_time": self.sim_time,
            "split": self.split,
            "qc": self.qc,
        }
        if self.reason is not None:
            d["reason"] = self.reason
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        return cls(
            id=int(d["id"]),
            left=d.get("left"),
            disparity=d.get("disparity"),
            risk=d.get("risk"),
            time_headway=d.get("time_headway"),
            scene_seed=int(d["scene_seed"]),
            sim_time=float(d["sim_time"]),
            split=d.get("split"),
            qc=d.get("qc", {}),
            reason=d.get("reason"),
        )

    @property
    def accepted(self) -> bool:
        return self.split != EXCLUDED and self.left is not None


@dataclass
class DatasetManifest:
    records: list[Sample]
    master_seed: int
    config_digest: str
    config: dict = field(default_factory=dict)

    @property
    def accepted(self) -> list[Sample]:
        return [r for r in self.records if r.accepted]

    @property
    def excluded(self) -> list[Sample]:
        return [r for r in self.records if not r.accepted]

    def split(self, name: str) -> list[Sample]:
        return [r for r in self.records if r.split == name]

    def write(self, root) -> None:
        root = Path(root)
        with open(root / "manifest.jsonl", "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_dict(), separators=(",", ":")) + "\n")
        meta = {
            "master_seed": self.master_seed,
            "config_digest": self.config_digest,
            "n_records": len(self.records),
            "n_excluded": len(self.excluded),
            "config": self.config,
        }
        with open(root / "dataset.json", "w") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")

    @classmethod
    def read(cls, root) -> "DatasetManifest":
        root = Path(root)
        with open(root / "dataset.json") as fh:
            meta = json.load(fh)
        with open(root / "manifest.jsonl") as fh:
            records = [Sample.from_dict(json.loads(line)) for line in fh if line.strip()]
        return cls(records=records, master_seed=meta["master_seed"], config_digest=meta["config_digest"], config=meta.get("config", {}))


def inject_vertical_jitter(img: np.ndarray, rows: int = JITTER_ROWS) -> np.ndarray:
    """Shift an image down by ``rows`` pixels, replicating the top row."""
    out = np.empty_like(img)
    out[rows:] = img[:-rows]
    out[:rows] = img[:1]
    return out


def make_sample(index: int, cfg: RunConfig, master_seed: int, jitter: bool = False):
    """Produce one record and its arrays without touching the file system.

    Returns ``(sample, scene, left_image, disparity)``; the arrays are None for
    pairs rejected by QC.
    """
    seed = scene_seed(master_seed, index)
    scene = generate_scene(seed, cfg.scenario)
    pair = render_stereo_scene(scene, cfg.rig)
    if jitter:
        pair = StereoPair(pair.left, inject_vertical_jitter(pair.right), pair.rig, pair.sim_time)
    qc = validate_pair(pair)
    qc_d = qc.to_dict()
    if not qc.accepted:
        reasons = []
        if qc.n_matches < 20:
            reasons.append(f"only {qc.n_matches} feature matches")
        if qc.mean_dx < 1.0:
            reasons.append(f"mean dx {qc.mean_dx:.3f} < 1 px")
        if qc.mean_dy_abs > 5.0:
            reasons.append(f"mean |dy| {qc.mean_dy_abs:.3f} > 5 px")
        sample = Sample(index, None, None, None, None, seed, scene.sim_time, EXCLUDED, qc_d, "; ".join(reasons))
        return sample, scene, None, None
    disp = compute_disparity(pair, cfg.sgm)
    label = risk_value(scene, cfg.grid)
    th = None if math.isinf(label.time_headway) else label.time_headway
    sample = Sample(
        id=index,
        left=f"left/{index:06d}.ppm",
        disparity=f"disparity/{index:06d}.pfm",
        risk=label.value,
        time_headway=th,
        scene_seed=seed,
        sim_time=scene.sim_time,
        qc=qc_d,
    )
    return sample, scene, pair.left, disp


def _make_sample_args(args):
    return make_sample(*args)


def split_dataset(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    """Assign accepted records to train/val/test (70/10/20) by a seeded permutation.

    Records are ordered by id before permuting, so the assignment does not
    depend on the order they are stored in.
    """
    accepted = sorted(manifest.accepted, key=lambda r: r.id)
    n = len(accepted)
    if n < 10:
        raise ValueError(f"need at least 10 accepted records to split, have {n}")
    n_train = int(math.floor(SPLIT_FRACTIONS[0] * n + 0.5))
    n_val = int(math.floor(SPLIT_FRACTIONS[1] * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    assign = {}
    for rank, k in enumerate(perm):
        assign[accepted[k].id] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    records = [replace(r, split=assign.get(r.id, r.split)) for r in manifest.records]
    return replace(manifest, records=records)


def build_dataset(
    out_dir,
    cfg: RunConfig,
    n_samples: int | None = None,
    master_seed: int | None = None,
    jitter_indices: Iterable[int] = (),
    workers: int = 1,
) -> DatasetManifest:
    """Generate, label and persist a dataset, then split it.

    On an I/O failure every file written so far is removed before re-raising.
    """
    n = cfg.dataset.n_samples if n_samples is None else n_samples
    seed = cfg.dataset.master_seed if master_seed is None else master_seed
    if n < 1:
        raise ValueError("n_samples must be >= 1")
    jitter = set(jitter_indices)
    out = Path(out_dir)
    created = not out.exists()
    written: list[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for sub in ("left", "disparity"):
            (out / sub).mkdir(exist_ok=True)
        jobs = [(i, cfg, seed, i in jitter) for i in range(n)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(_make_sample_args, jobs, chunksize=8)
                results = list(results)
        else:
            results = map(_make_sample_args, jobs)
        records, scenes = [], []
        for sample, scene, left, disp in results:
            records.append(sample)
            scenes.append(scene)
            if left is not None:
                p_left, p_disp = out / sample.left, out / sample.disparity
                write_ppm(p_left, left)
                written.append(p_left)
                write_pfm(p_disp, disp.astype(np.float32))
                written.append(p_disp)
            if (sample.id + 1) % 100 == 0:
                log.info("generated %d / %d samples", sample.id + 1, n)
        manifest = DatasetManifest(records=records, master_seed=seed, config_digest=cfg.generation_digest(), config=cfg.to_dict())
        if len(manifest.accepted) >= 10:
            manifest = split_dataset(manifest, cfg.dataset.split_seed)
        write_trace(out / "scenes.jsonl", scenes)
        written.append(out / "scenes.jsonl")
        manifest.write(out)
        written += [out / "manifest.jsonl", out / "dataset.json"]
    except OSError:
        log.error("I/O failure while building dataset in %s; removing partial output", out)
        for p in written:
            p.unlink(missing_ok=True)
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise
    return manifest


def load_sample_input(root, sample: Sample, d_max: int) -> np.ndarray:
    """Stack the left RGB image and disparity into a normalized (4, H, W) float32 tensor."""
    if not sample.accepted:
        raise MissingSampleError(f"sample {sample.id} was excluded by QC")
    root = Path(root)
    left = read_ppm(root / sample.left)
    disp = read_pfm(root / sample.disparity)
    return stack_input(left, disp, d_max)


def stack_input(left: np.ndarray, disp: np.ndarray, d_max: int) -> np.ndarray:
    if left.ndim != 3 or left.shape[2] != 3:
        raise ValueError(f"left image must be RGB, got shape {left.shape}")
    if disp.shape != left.shape[:2]:
        raise ValueError(f"disparity {disp.shape} does not match image {left.shape[:2]}")
    rgb = left.astype(np.float32).transpose(2, 0, 1) / 255.0
    d = np.where(disp == INVALID, 0.0, disp / float(d_max)).astype(np.float32)
    d = np.where(disp < 0, 0.0, d).astype(np.float32)
    return np.concatenate([rgb, d[None]], axis=0)


def load_split(root, manifest: DatasetManifest, split: str, d_max: int) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Inputs, labels and ids of one split, ordered by id."""
    recs = sorted(manifest.split(split), key=lambda r: r.id)
    if not recs:
        return np.zeros((0,), np.float32), np.zeros((0,), np.float32), []
    x = np.stack([load_sample_input(root, r, d_max) for r in recs])
    y = np.array([r.risk for r in recs], dtype=np.float32)
    return x, y, [r.id for r in recs]
