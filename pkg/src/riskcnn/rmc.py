"""Risk metric calculator: subject-centred grid map and reciprocal time headway.

The grid stores only the border cells of each footprint. The risk label is
the capped, normalized reciprocal of the time headway to the closest
forward vehicle, where the distance is counted in empty cells.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .errors import NotOnGridError
from .scenario import Scene, VehicleState, forward_targets, step_vehicle

RECIPROCAL_CAP = 20.0
DEFAULT_THRESHOLD_HEADWAY = 1.5
CRITICAL = "critical"
UNCRITICAL = "uncritical"
CURRENT = "current"
PREDICTED = "predicted"


@dataclass(frozen=True)
class GridConfig:
    cell_size: float = 0.25
    extent: float = 60.0
    prediction_horizon: float = 3.0

    def validate(self) -> None:
        if not self.cell_size > 0:
            raise ValueError("cell_size: must be positive")
        if not self.extent > 0:
            raise ValueError("extent: must be positive")
        ratio = self.extent / self.cell_size
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("extent: must be a multiple of cell_size")
        if not self.prediction_horizon > 0:
            raise ValueError("prediction_horizon: must be positive")

    @property
    def half_cells(self) -> int:
        return int(round(self.extent / self.cell_size))


@dataclass(frozen=True)
class GridMap:
    config: GridConfig
    occupied: dict = field(default_factory=dict)  # (i, j) -> (vehicle_id, kind)
    footprints: dict = field(default_factory=dict)  # vehicle_id -> (k, 2) int array of current cells

    def current_mask(self) -> np.ndarray:
        """Dense boolean occupancy of current cells, indexed [i + N, j + N]."""
        n = self.config.half_cells
        mask = np.zeros((2 * n, 2 * n), dtype=np.bool_)
        for (i, j), (_, kind) in self.occupied.items():
            if kind == CURRENT:
                mask[i + n, j + n] = True
        return mask


@dataclass(frozen=True)
class RiskLabel:
    value: float
    time_headway: float
    target_id: int | None = None


def to_frame(v: VehicleState, frame: VehicleState | None) -> VehicleState:
    """Express ``v`` in the frame of ``frame`` (origin at its centre, +x along heading)."""
    if frame is None:
        return v
    c, s = math.cos(frame.heading), math.sin(frame.heading)
    dx, dy = v.x - frame.x, v.y - frame.y
    return replace(v, x=c * dx + s * dy, y=-s * dx + c * dy, heading=v.heading - frame.heading)


def covered_cells(v: VehicleState, cell_size: float) -> tuple[np.ndarray, np.ndarray]:
    """Cells whose centre lies inside the footprint.

    Returns the bounding-box origin (i0, j0) and a boolean mask over the box.
    A footprint smaller than one cell still covers the cell holding its centre.
    """
    corners = v.corners()
    lo = np.floor(corners.min(axis=0) / cell_size).astype(int) - 1
    hi = np.floor(corners.max(axis=0) / cell_size).astype(int) + 1
    ii = np.arange(lo[0], hi[0] + 1)
    jj = np.arange(lo[1], hi[1] + 1)
    cx = (ii[:, None] + 0.5) * cell_size - v.x
    cy = (jj[None, :] + 0.5) * cell_size - v.y
    c, s = math.cos(v.heading), math.sin(v.heading)
    along = cx * c + cy * s
    across = -cx * s + cy * c
    eps = 1e-9
    mask = (np.abs(along) <= v.length / 2 + eps) & (np.abs(across) <= v.width / 2 + eps)
    if not mask.any():
        mask[int(math.floor(v.x / cell_size)) - lo[0], int(math.floor(v.y / cell_size)) - lo[1]] = True
    return lo, mask


def border_cells(v: VehicleState, cell_size: float) -> np.ndarray:
    """Covered cells with at least one uncovered 4-neighbour, as (k, 2) int array."""
    lo, mask = covered_cells(v, cell_size)
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    border = mask & ~interior
    idx = np.argwhere(border)
    return idx + lo


def _inside(cells: np.ndarray, cfg: GridConfig) -> np.ndarray:
    n = cfg.half_cells
    keep = np.all((cells >= -n) & (cells < n), axis=1)
    return cells[keep]


def predict_cells(v: VehicleState, cfg: GridConfig, frame: VehicleState | None = None) -> set:
    """Border cells swept over the prediction horizon under constant speed and turn.

    ``frame`` is the subject whose grid the cells belong to; ``None`` means
    ``v`` is already expressed in grid coordinates.
    """
    v = to_frame(v, frame)
    horizon = cfg.prediction_horizon
    # fastest footprint point: centre speed plus rotation of the far corner
    reach = v.speed + abs(v.yaw_rate) * math.hypot(v.length, v.width) / 2.0
    dt = 0.5 * cfg.cell_size / max(reach, cfg.cell_size / horizon)
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    cells: set = set()
    for k in range(n_steps + 1):
        t = min(k * dt, horizon)
        state = v if t == 0.0 else step_vehicle(v, t)
        for i, j in _inside(border_cells(state, cfg.cell_size), cfg):
            cells.add((int(i), int(j)))
    return cells


def rasterize_scene(scene: Scene, cfg: GridConfig, with_predictions: bool = False) -> GridMap:
    """Build the subject-centred grid map holding the border cells of every vehicle."""
    cfg.validate()
    occupied: dict = {}
    footprints: dict = {}
    frame = scene.subject
    for v in scene.vehicles:
        cells = _inside(border_cells(to_frame(v, frame), cfg.cell_size), cfg)
        if len(cells):
            footprints[v.id] = cells
        for i, j in cells:
            occupied.setdefault((int(i), int(j)), (v.id, CURRENT))
    if with_predictions:
        for v in scene.vehicles:
            for cell in sorted(predict_cells(v, cfg, frame)):
                occupied.setdefault(cell, (v.id, PREDICTED))
    return GridMap(config=cfg, occupied=occupied, footprints=footprints)


@numba.njit(cache=True)
def line_empty_count(x0, y0, x1, y1, occ, offset):
    """Empty cells strictly between two cells on their Bresenham line.

    The minor coordinate at major step i is round-half-up(i * minor / major).
    """
    dx = x1 - x0
    dy = y1 - y0
    adx = abs(dx)
    ady = abs(dy)
    sx = 1 if dx >= 0 else -1
    sy = 1 if dy >= 0 else -1
    n = max(adx, ady)
    empty = 0
    for i in range(1, n):
        if adx >= ady:
            x = x0 + sx * i
            y = y0 + sy * ((2 * i * ady + adx) // (2 * adx))
        else:
            y = y0 + sy * i
            x = x0 + sx * ((2 * i * adx + ady) // (2 * ady))
        if not occ[x + offset, y + offset]:
            empty += 1
    return empty


@numba.njit(cache=True)
def _min_gap(a, b, occ, offset):
    best = -1
    for p in range(a.shape[0]):
        for q in range(b.shape[0]):
            g = line_empty_count(a[p, 0], a[p, 1], b[q, 0], b[q, 1], occ, offset)
            if best < 0 or g < best:
                best = g
                if best == 0:
                    return 0
    return best


def cell_gap(grid: GridMap, subject_id: int, target_id: int, occupancy: np.ndarray | None = None) -> int:
    """Fewest empty cells on a straight line between any cell of the two vehicles."""
    for vid in (subject_id, target_id):
        if vid not in grid.footprints:
            raise NotOnGridError(f"vehicle not on grid: {vid}")
    occ = grid.current_mask() if occupancy is None else occupancy
    a = np.ascontiguousarray(grid.footprints[subject_id], dtype=np.int64)
    b = np.ascontiguousarray(grid.footprints[target_id], dtype=np.int64)
    return int(_min_gap(a, b, occ, grid.config.half_cells))


def time_headway(distance: float, subject_speed: float) -> float:
    if distance < 0:
        raise ValueError(f"distance must be >= 0, got {distance}")
    if subject_speed < 0:
        raise ValueError(f"subject speed must be >= 0, got {subject_speed}")
    if subject_speed == 0:
        return math.inf
    return distance / subject_speed


def risk_from_headway(th: float) -> float:
    """Normalized reciprocal headway, capped at ``RECIPROCAL_CAP``."""
    if math.isinf(th):
        return 0.0
    if th == 0.0:
        return 1.0
    return min(1.0 / th, RECIPROCAL_CAP) / RECIPROCAL_CAP


def risk_value(scene: Scene, cfg: GridConfig) -> RiskLabel:
    grid = rasterize_scene(scene, cfg)
    targets = [t for t in forward_targets(scene) if t in grid.footprints]
    if not targets:
        return RiskLabel(value=0.0, time_headway=math.inf, target_id=None)
    occ = grid.current_mask()
    sid = scene.subject.id
    gap, tid = min((cell_gap(grid, sid, t, occ), t) for t in targets)
    th = time_headway(gap * cfg.cell_size, scene.subject.speed)
    return RiskLabel(value=risk_from_headway(th), time_headway=th, target_id=tid)


def critical_value_threshold(threshold_headway: float = DEFAULT_THRESHOLD_HEADWAY) -> float:
    if threshold_headway <= 0:
        raise ValueError("threshold must be positive")
    return min(1.0 / threshold_headway, RECIPROCAL_CAP) / RECIPROCAL_CAP


def classify_value(value: float, threshold_headway: float = DEFAULT_THRESHOLD_HEADWAY) -> str:
    """Classify a normalized risk value; the boundary counts as critical."""
    return CRITICAL if value >= critical_value_threshold(threshold_headway) else UNCRITICAL


def classify(label: RiskLabel, threshold_headway: float = DEFAULT_THRESHOLD_HEADWAY) -> str:
    if threshold_headway <= 0:
        raise ValueError("threshold must be positive")
    if math.isinf(label.time_headway):
        return UNCRITICAL
    return CRITICAL if label.time_headway <= threshold_headway else UNCRITICAL


def write_grid_csv(grid: GridMap, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_x", "cell_y", "vehicle_id", "kind"])
        for (i, j), (vid, kind) in sorted(grid.occupied.items()):
            w.writerow([i, j, vid, kind])
