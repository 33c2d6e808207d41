"""Randomized straight-road traffic scenes and constant-turn propagation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .errors import OvercrowdedConfigError

SUBJECT_ID = 0
_MAX_PLACEMENT_TRIES = 200
_CLEARANCE = 0.5  # m, extra spacing kept between spawned footprints


def wrap_angle(a: float) -> float:
    """Normalize an angle to [-pi, pi)."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w < 0.0:
        w += 2.0 * math.pi
    w -= math.pi
    # fmod rounding can land exactly on +pi
    return -math.pi if w >= math.pi else w


@dataclass(frozen=True)
class VehicleState:
    id: int
    x: float
    y: float
    heading: float
    speed: float
    yaw_rate: float = 0.0
    length: float = 4.5
    width: float = 1.8
    color: tuple[int, int, int] = (200, 30, 30)

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError(f"vehicle {self.id}: negative speed {self.speed}")
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"vehicle {self.id}: non-positive footprint")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def corners(self) -> np.ndarray:
        """Footprint corners (4, 2), counter-clockwise from front-left."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.position

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "x": self.x,
            "y": self.y,
            "heading": self.heading,
            "speed": self.speed,
            "yaw_rate": self.yaw_rate,
            "length": self.length,
            "width": self.width,
            "color": list(self.color),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleState":
        return cls(
            id=int(d["id"]),
            x=float(d["x"]),
            y=float(d["y"]),
            heading=float(d["heading"]),
            speed=float(d["speed"]),
            yaw_rate=float(d.get("yaw_rate", 0.0)),
            length=float(d["length"]),
            width=float(d["width"]),
            color=tuple(int(c) for c in d.get("color", (200, 30, 30))),
        )


@dataclass(frozen=True)
class Scene:
    subject: VehicleState
    others: tuple[VehicleState, ...] = ()
    sim_time: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "others", tuple(self.others))
        if self.subject.id != SUBJECT_ID:
            raise ValueError("subject vehicle must have id 0")
        ids = [v.id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate vehicle ids: {ids}")

    @property
    def vehicles(self) -> tuple[VehicleState, ...]:
        return (self.subject,) + self.others

    def vehicle(self, vid: int) -> VehicleState:
        for v in self.vehicles:
            if v.id == vid:
                return v
        raise KeyError(vid)

    def to_dict(self) -> dict:
        return {
            "sim_time": self.sim_time,
            "seed": self.seed,
            "vehicles": [v.to_dict() for v in self.vehicles],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        vehicles = [VehicleState.from_dict(v) for v in d["vehicles"]]
        subject = [v for v in vehicles if v.id == SUBJECT_ID]
        if len(subject) != 1:
            raise ValueError("scene needs exactly one vehicle with id 0")
        return cls(
            subject=subject[0],
            others=tuple(v for v in vehicles if v.id != SUBJECT_ID),
            sim_time=float(d.get("sim_time", 0.0)),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def from_json(cls, s: str) -> "Scene":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class ScenarioConfig:
    """Traffic distribution of the synthetic road.

    The road is straight along world +x; lanes are centred on y and the
    subject always starts at x=0 heading along the road.
    """

    n_vehicles: tuple[int, int] = (0, 8)
    subject_speed: tuple[float, float] = (8.0, 14.0)
    other_speed: tuple[float, float] = (0.0, 14.0)
    n_lanes: int = 3
    lane_width: float = 3.5
    spawn_ahead: float = 120.0
    spawn_behind: float = 20.0
    max_yaw_rate: float = 0.05
    max_heading_jitter: float = 0.05
    vehicle_length: tuple[float, float] = (3.8, 5.0)
    vehicle_width: tuple[float, float] = (1.7, 2.0)
    subject_length: float = 4.5
    subject_width: float = 1.8
    # traffic ahead of the subject is kept inside the forward camera's view
    view_apex: float = 1.5
    view_half_angle: float = 0.41

    def validate(self) -> None:
        for name in ("n_vehicles", "subject_speed", "other_speed", "vehicle_length", "vehicle_width"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range [{lo}, {hi}]")
        if self.n_vehicles[0] < 0:
            raise ValueError("n_vehicles: negative count")
        if self.subject_speed[0] < 0 or self.other_speed[0] < 0:
            raise ValueError("subject_speed/other_speed: speeds must be non-negative")
        if self.vehicle_length[0] <= 0 or self.vehicle_width[0] <= 0:
            raise ValueError("vehicle_length/vehicle_width: dimensions must be positive")
        if self.subject_length <= 0 or self.subject_width <= 0:
            raise ValueError("subject_length/subject_width: dimensions must be positive")
        if self.n_lanes < 1 or self.lane_width <= 0:
            raise ValueError("n_lanes/lane_width: road needs at least one lane of positive width")
        if self.spawn_ahead <= 0 or self.spawn_behind < 0:
            raise ValueError("spawn_ahead/spawn_behind: spawn region must be non-empty")
        if self.max_yaw_rate < 0 or self.max_heading_jitter < 0:
            raise ValueError("max_yaw_rate/max_heading_jitter: must be >= 0")
        if not 0 < self.view_half_angle <= math.pi / 2:
            raise ValueError("view_half_angle: must lie in (0, pi/2]")
        slot = self.vehicle_length[1] + 2 * _CLEARANCE + 2 * self.max_heading_jitter * self.vehicle_width[1]
        per_lane = int((self.spawn_ahead + self.spawn_behind) // slot)
        if per_lane * self.n_lanes < self.n_vehicles[1] + 1:
            raise ValueError(
                f"n_vehicles: spawn region holds ~{per_lane * self.n_lanes} vehicles, "
                f"n_vehicles up to {self.n_vehicles[1]} requested"
            )

    def lane_centers(self) -> np.ndarray:
        return (np.arange(self.n_lanes) - (self.n_lanes - 1) / 2.0) * self.lane_width


def scene_seed(master_seed: int, index: int) -> int:
    """Derive an independent 64-bit seed for scene ``index``."""
    ss = np.random.SeedSequence([master_seed & 0xFFFFFFFFFFFFFFFF, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def footprints_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quads given as (4, 2) corners."""
    for poly in (a, b):
        edges = np.roll(poly, -1, axis=0) - poly
        for ex, ey in edges:
            axis = np.array([-ey, ex])
            pa, pb = a @ axis, b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def _inflate(v: VehicleState, margin: float) -> VehicleState:
    return replace(v, length=v.length + 2 * margin, width=v.width + 2 * margin)


def _in_view(subject: VehicleState, cand: VehicleState, cfg: ScenarioConfig) -> bool:
    """True unless ``cand`` is a forward vehicle reaching outside the view wedge.

    The wedge has its apex ``view_apex`` ahead of the subject centre; a
    half angle of pi/2 disables the rule.
    """
    if cfg.view_half_angle >= math.pi / 2:
        return True
    front = subject.x + subject.length / 2.0
    if cand.x - front <= 0.0:
        return True
    rel = cand.corners() - np.array([subject.x + cfg.view_apex, subject.y])
    ahead = rel[:, 0] > 0.0
    return bool(np.all(ahead) and np.all(np.abs(rel[:, 1]) <= rel[:, 0] * math.tan(cfg.view_half_angle)))


def generate_scene(seed: int, cfg: ScenarioConfig) -> Scene:
    """Draw a scene: subject in a random lane at x=0 plus non-overlapping traffic."""
    cfg.validate()
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    lanes = cfg.lane_centers()

    subject = VehicleState(
        id=SUBJECT_ID,
        x=0.0,
        y=float(lanes[rng.integers(cfg.n_lanes)]),
        heading=0.0,
        speed=float(rng.uniform(*cfg.subject_speed)),
        yaw_rate=float(rng.uniform(-cfg.max_yaw_rate, cfg.max_yaw_rate)),
        length=cfg.subject_length,
        width=cfg.subject_width,
        color=(180, 180, 190),
    )
    n = int(rng.integers(cfg.n_vehicles[0], cfg.n_vehicles[1] + 1))
    placed = [subject]
    hulls = [_inflate(subject, _CLEARANCE / 2).corners()]
    for vid in range(1, n + 1):
        for _ in range(_MAX_PLACEMENT_TRIES):
            cand = VehicleState(
                id=vid,
                x=float(rng.uniform(-cfg.spawn_behind, cfg.spawn_ahead)),
                y=float(lanes[rng.integers(cfg.n_lanes)]),
                heading=float(rng.uniform(-cfg.max_heading_jitter, cfg.max_heading_jitter)),
                speed=float(rng.uniform(*cfg.other_speed)),
                yaw_rate=float(rng.uniform(-cfg.max_yaw_rate, cfg.max_yaw_rate)),
                length=float(rng.uniform(*cfg.vehicle_length)),
                width=float(rng.uniform(*cfg.vehicle_width)),
                color=tuple(int(c) for c in rng.integers(40, 240, size=3)),
            )
            if not _in_view(subject, cand, cfg):
                continue
            hull = _inflate(cand, _CLEARANCE / 2).corners()
            if not any(footprints_overlap(hull, h) for h in hulls):
                placed.append(cand)
                hulls.append(hull)
                break
        else:
            raise OvercrowdedConfigError(
                f"overcrowded config: could not place vehicle {vid} of {n} "
                f"after {_MAX_PLACEMENT_TRIES} tries"
            )
    return Scene(subject=subject, others=tuple(placed[1:]), sim_time=0.0, seed=seed)


def step_vehicle(v: VehicleState, dt: float) -> VehicleState:
    """Advance one vehicle by ``dt`` under constant speed and turn rate.

    The arc is integrated in closed form, so composing steps is exact up to
    rounding.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    h0 = v.heading
    if v.yaw_rate == 0.0:
        dist = v.speed * dt
        x = v.x + dist * math.cos(h0)
        y = v.y + dist * math.sin(h0)
        h1 = h0
    else:
        h1 = h0 + v.yaw_rate * dt
        r = v.speed / v.yaw_rate
        x = v.x + r * (math.sin(h1) - math.sin(h0))
        y = v.y + r * (math.cos(h0) - math.cos(h1))
    return replace(v, x=x, y=y, heading=h1)


def advance_scene(scene: Scene, dt: float) -> Scene:
    return replace(
        scene,
        subject=step_vehicle(scene.subject, dt),
        others=tuple(step_vehicle(v, dt) for v in scene.others),
        sim_time=scene.sim_time + dt,
    )


def simulate(scene: Scene, dt: float, n_steps: int) -> list[Scene]:
    """Return ``n_steps`` successors of ``scene``; element k-1 is at t0 + k*dt."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    out = []
    cur = scene
    for k in range(1, n_steps + 1):
        cur = advance_scene(cur, dt)
        cur = replace(cur, sim_time=scene.sim_time + k * dt)
        out.append(cur)
    return out


def forward_targets(scene: Scene) -> list[int]:
    """Ids of vehicles whose centre lies strictly ahead of the subject's front edge."""
    s = scene.subject
    ux, uy = math.cos(s.heading), math.sin(s.heading)
    fx = s.x + ux * s.length / 2.0
    fy = s.y + uy * s.length / 2.0
    return [v.id for v in scene.others if (v.x - fx) * ux + (v.y - fy) * uy > 0.0]


def write_trace(path, scenes: Iterable[Scene]) -> None:
    with open(path, "w") as fh:
        for s in scenes:
            fh.write(s.to_json() + "\n")


def read_trace(path) -> list[Scene]:
    with open(path) as fh:
        return [Scene.from_json(line) for line in fh if line.strip()]
