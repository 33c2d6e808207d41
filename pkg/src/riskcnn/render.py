"""Ray-cast stereo renderer for synthetic road scenes.

Vehicles are textured boxes on a textured ground plane, seen through an
ideal pinhole camera mounted on the subject's hood. Depth is the camera-z
distance, so ground-truth disparity is exactly ``f * B / Z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scenario import Scene, VehicleState, simulate
from .stereo import INVALID, StereoPair

VEHICLE_HEIGHT = 1.5
SKY_TOP = np.array([120, 160, 215], dtype=np.float64)
SKY_HORIZON = np.array([200, 215, 235], dtype=np.float64)

# per-face brightness: rear, front, right, left, top
_FACE_SHADE = np.array([1.0, 1.0, 0.72, 0.72, 1.15])


@dataclass(frozen=True)
class CameraRig:
    focal_length: float = 230.0
    width: int = 200
    height: int = 66
    baseline: float = 0.16
    mount_forward: float = 1.5
    mount_height: float = 1.2
    horizon_row: float = 20.0
    frame_delay: float = 0.0

    def validate(self) -> None:
        if not self.baseline > 0:
            raise ValueError("baseline: must be positive")
        if not self.focal_length > 0:
            raise ValueError("focal_length: must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("width/height: image size must be positive")
        if self.mount_height <= 0:
            raise ValueError("mount_height: must be positive")
        if self.frame_delay < 0:
            raise ValueError("frame_delay: must be >= 0")

    @property
    def principal_point(self) -> tuple[float, float]:
        return self.width / 2.0, self.horizon_row


@dataclass(frozen=True)
class CameraPose:
    x: float
    y: float
    z: float
    yaw: float


def camera_pose(subject: VehicleState, rig: CameraRig, right: bool = False) -> CameraPose:
    """Pose of the left (or right) camera on the subject's hood."""
    c, s = math.cos(subject.heading), math.sin(subject.heading)
    x = subject.x + rig.mount_forward * c
    y = subject.y + rig.mount_forward * s
    if right:
        # camera +x axis points to the vehicle's right: (sin h, -cos h)
        x += rig.baseline * s
        y -= rig.baseline * c
    return CameraPose(x=x, y=y, z=rig.mount_height, yaw=subject.heading)


def _hash01(*coords: np.ndarray, salt: int = 0) -> np.ndarray:
    """Deterministic per-integer-lattice noise in [0, 1)."""
    with np.errstate(over="ignore"):
        h = np.full(np.broadcast(*coords).shape, np.uint64(salt) * np.uint64(0x9E3779B97F4A7C15))
        for k, c in enumerate(coords):
            ck = np.asarray(c, dtype=np.int64).astype(np.uint64)
            h ^= ck * np.uint64([0xC2B2AE3D27D4EB4F, 0x165667B19E3779F9, 0x27D4EB2F165667C5][k % 3])
            h = (h ^ (h >> np.uint64(31))) * np.uint64(0xBF58476D1CE4E5B9)
        h ^= h >> np.uint64(29)
        h *= np.uint64(0x94D049BB133111EB)
        h ^= h >> np.uint64(32)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _ground_color(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    fine = _hash01(np.floor(gx / 0.3), np.floor(gy / 0.3), salt=1)
    coarse = _hash01(np.floor(gx / 1.5), np.floor(gy / 1.5), salt=2)
    g = 70.0 + 70.0 * fine + 30.0 * coarse
    return np.stack([g, g * 0.97, g * 0.92], axis=-1)


def _rays(pose: CameraPose, rig: CameraRig):
    cx, cy = rig.principal_point
    v, u = np.mgrid[0 : rig.height, 0 : rig.width].astype(np.float64)
    xc = (u - cx) / rig.focal_length
    yc = (v - cy) / rig.focal_length
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    # world direction for camera-z = 1: forward + xc * right + yc * down
    dx = c + xc * s
    dy = s - xc * c
    dz = -yc
    return dx, dy, dz


def render_view(scene: Scene, pose: CameraPose, rig: CameraRig, exclude: Sequence[int] = (0,)):
    """Render one camera view.

    Returns ``(image, depth)``: an (H, W, 3) uint8 image and an (H, W) float
    depth map holding camera-z in metres, +inf where the ray sees sky.
    ``exclude`` lists vehicle ids that are not drawn (the camera's own car).
    """
    rig.validate()
    dx, dy, dz = _rays(pose, rig)
    shape = dx.shape
    depth = np.full(shape, np.inf)
    color = np.zeros(shape + (3,))

    ground = dz < 0
    t_ground = np.where(ground, pose.z / np.where(ground, -dz, 1.0), 0.0)
    depth = np.where(ground, t_ground, depth)
    gcol = _ground_color(pose.x + t_ground * dx, pose.y + t_ground * dy)
    color[ground] = gcol[ground]

    for veh in scene.vehicles:
        if veh.id in exclude:
            continue
        c, s = math.cos(veh.heading), math.sin(veh.heading)
        ox, oy = pose.x - veh.x, pose.y - veh.y
        # ray in box-local frame (a along heading, b to the left, z up)
        oa, ob, oz = c * ox + s * oy, -s * ox + c * oy, pose.z
        da, db = c * dx + s * dy, -s * dx + c * dy
        half = (veh.length / 2.0, veh.width / 2.0)
        t_near = np.full(shape, -np.inf)
        t_far = np.full(shape, np.inf)
        face = np.zeros(shape, dtype=np.int8)
        slabs = ((oa, da, -half[0], half[0], 0), (ob, db, -half[1], half[1], 2), (oz, dz, 0.0, VEHICLE_HEIGHT, 4))
        for o, d, lo, hi, base in slabs:
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / d
                t1 = (lo - o) * inv
                t2 = (hi - o) * inv
            parallel = d == 0
            inside = (o >= lo) & (o <= hi)
            enter = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
            leave = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
            # face ids: 0 rear(-a) 1 front(+a) 2 right(-b) 3 left(+b) 4 bottom/top
            f = np.where(t1 < t2, base, base + 1).astype(np.int8)
            if base == 4:
                f = np.full(shape, 4, dtype=np.int8)
            newer = enter > t_near
            face = np.where(newer, f, face)
            t_near = np.maximum(t_near, enter)
            t_far = np.minimum(t_far, leave)
        hit = (t_near <= t_far) & (t_near > 0) & (t_near < depth)
        if not hit.any():
            continue
        t = t_near[hit]
        pa, pb, pz = oa + t * da[hit], ob + t * db[hit], oz + t * dz[hit]
        fh = face[hit]
        su = np.where(fh <= 1, pb, pa)
        sv = np.where(fh == 4, pb, pz)
        tex = _hash01(np.floor(su / 0.12), np.floor(sv / 0.12), fh.astype(np.int64), salt=100 + veh.id)
        shade = _FACE_SHADE[fh]
        base_col = np.asarray(veh.color, dtype=np.float64)
        col = base_col[None, :] * (shade * (0.55 + 0.45 * tex))[:, None]
        color[hit] = col
        depth[hit] = t

    sky = np.isinf(depth)
    if sky.any():
        rows = np.broadcast_to(np.arange(rig.height)[:, None], shape)
        w = np.clip(rows / max(rig.horizon_row, 1.0), 0.0, 1.0)[..., None]
        sky_col = SKY_TOP * (1 - w) + SKY_HORIZON * w
        color[sky] = sky_col[sky]

    image = np.clip(np.rint(color), 0, 255).astype(np.uint8)
    return image, depth


def render_stereo(trace: Sequence[Scene], rig: CameraRig) -> StereoPair:
    """Left view from ``trace[0]``, right view from the sample ``frame_delay`` later."""
    rig.validate()
    if not trace:
        raise ValueError("empty scene trace")
    first = trace[0]
    later = first
    if rig.frame_delay > 0:
        want = first.sim_time + rig.frame_delay
        match = [s for s in trace[1:] if abs(s.sim_time - want) <= 1e-9]
        if not match:
            raise ValueError(f"trace has no sample at t={want:.6f} for the delayed right view")
        later = match[0]
    left, _ = render_view(first, camera_pose(first.subject, rig), rig)
    right, _ = render_view(later, camera_pose(later.subject, rig, right=True), rig)
    return StereoPair(left=left, right=right, rig=rig, sim_time=first.sim_time)


def render_stereo_scene(scene: Scene, rig: CameraRig) -> StereoPair:
    """Render a pair from a single scene, propagating it when the rig has a frame delay."""
    trace = [scene]
    if rig.frame_delay > 0:
        trace += simulate(scene, rig.frame_delay, 1)
    return render_stereo(trace, rig)


def ground_truth_disparity(scene: Scene, rig: CameraRig, occlusion_tol: float = 0.02) -> np.ndarray:
    """Analytic left-view disparity ``f * B / Z``.

    Sky reads 0. Pixels whose 3-D point is hidden or out of view in the
    simultaneous right image are set to ``INVALID``.
    """
    _, zl = render_view(scene, camera_pose(scene.subject, rig), rig)
    _, zr = render_view(scene, camera_pose(scene.subject, rig, right=True), rig)
    fb = rig.focal_length * rig.baseline
    finite = np.isfinite(zl)
    disp = np.zeros(zl.shape)
    disp[finite] = fb / zl[finite]

    h, w = zl.shape
    cols = np.arange(w)[None, :].astype(np.float64)
    ur = cols - disp
    lo = np.floor(ur).astype(int)
    hi = lo + 1
    rows = np.broadcast_to(np.arange(h)[:, None], zl.shape)
    visible = np.zeros(zl.shape, dtype=bool)
    for cand in (lo, hi):
        ok = (cand >= 0) & (cand < w)
        zc = zr[rows, np.clip(cand, 0, w - 1)]
        visible |= ok & (zc >= zl * (1.0 - occlusion_tol))
    invalid = finite & ((ur < -0.5) | ~visible)
    disp[invalid] = INVALID
    return disp.astype(np.float32)
