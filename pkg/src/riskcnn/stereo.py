"""Semi-global matching on census costs, plus a feature-based stereo pair check."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numba
import numpy as np
from scipy import ndimage

INVALID = -1

# (dx, dy) of the step from the previous path pixel to the current one
PATH_DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1))


@dataclass(frozen=True)
class StereoPair:
    left: np.ndarray
    right: np.ndarray
    rig: Any = None
    sim_time: float = 0.0

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise ValueError(f"stereo images differ in shape: {self.left.shape} vs {self.right.shape}")


@dataclass(frozen=True)
class SgmParams:
    d_max: int = 64
    window: int = 5
    p1: int = 6
    p2: int = 96
    lr_tolerance: int = 1

    def validate(self) -> None:
        if self.d_max < 1:
            raise ValueError("d_max: must be >= 1")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window: census window must be odd and >= 3")
        if self.window * self.window - 1 > 64:
            raise ValueError("window: census window too large for 64-bit codes")
        if not 0 < self.p1 < self.p2:
            raise ValueError("p1/p2: penalties must satisfy 0 < p1 < p2")
        if self.lr_tolerance < 0:
            raise ValueError("lr_tolerance: must be >= 0")

    @property
    def census_bits(self) -> int:
        return self.window * self.window - 1


def to_luma(img: np.ndarray) -> np.ndarray:
    """Integer luma (299 R + 587 G + 114 B) / 1000, rounded; grayscale passes through."""
    if img.ndim == 2:
        return img.astype(np.int32)
    rgb = img.astype(np.int64)
    return ((299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000).astype(np.int32)


def census_transform(gray: np.ndarray, window: int = 5) -> np.ndarray:
    """Census codes; bit k is set iff the k-th neighbour (row-major, centre skipped) is darker."""
    if window < 3 or window % 2 == 0:
        raise ValueError("census window must be odd and >= 3")
    if window * window - 1 > 64:
        raise ValueError("census window too large for 64-bit codes")
    r = window // 2
    h, w = gray.shape
    padded = np.pad(gray, r, mode="edge")
    codes = np.zeros((h, w), dtype=np.uint64)
    k = 0
    for dy in range(window):
        for dx in range(window):
            if dy == r and dx == r:
                continue
            darker = padded[dy : dy + h, dx : dx + w] < gray
            codes |= darker.astype(np.uint64) << np.uint64(k)
            k += 1
    return codes


def cost_volume(left_codes: np.ndarray, right_codes: np.ndarray, d_max: int, max_cost: int) -> np.ndarray:
    """Hamming cost C[y, x, d] between left (x) and right (x - d); off-image costs ``max_cost``."""
    if left_codes.shape != right_codes.shape:
        raise ValueError("census images differ in shape")
    h, w = left_codes.shape
    cv = np.full((h, w, d_max), max_cost, dtype=np.int32)
    for d in range(min(d_max, w)):
        cv[:, d:, d] = np.bitwise_count(left_codes[:, d:] ^ right_codes[:, : w - d])
    return cv


@numba.njit(cache=True)
def _aggregate_direction(cost, p1, p2, dx, dy, out):
    h, w, nd = cost.shape
    lr = np.empty((h, w, nd), dtype=np.int32)
    ys = range(h) if dy >= 0 else range(h - 1, -1, -1)
    for y in ys:
        xs = range(w) if dx >= 0 else range(w - 1, -1, -1)
        for x in xs:
            py = y - dy
            px = x - dx
            if py < 0 or py >= h or px < 0 or px >= w:
                for d in range(nd):
                    lr[y, x, d] = cost[y, x, d]
            else:
                prev_min = lr[py, px, 0]
                for d in range(1, nd):
                    if lr[py, px, d] < prev_min:
                        prev_min = lr[py, px, d]
                for d in range(nd):
                    best = lr[py, px, d]
                    if d > 0 and lr[py, px, d - 1] + p1 < best:
                        best = lr[py, px, d - 1] + p1
                    if d < nd - 1 and lr[py, px, d + 1] + p1 < best:
                        best = lr[py, px, d + 1] + p1
                    if prev_min + p2 < best:
                        best = prev_min + p2
                    lr[y, x, d] = cost[y, x, d] + best - prev_min
            for d in range(nd):
                out[y, x, d] += lr[y, x, d]


def aggregate_paths(cv: np.ndarray, params: SgmParams) -> np.ndarray:
    """Sum of the eight directional path costs."""
    params.validate()
    cost = np.ascontiguousarray(cv, dtype=np.int32)
    out = np.zeros(cost.shape, dtype=np.int32)
    for dx, dy in PATH_DIRECTIONS:
        _aggregate_direction(cost, params.p1, params.p2, dx, dy, out)
    return out


def select_disparity(aggregated: np.ndarray) -> np.ndarray:
    """Winner-takes-all; ties resolve to the smallest disparity."""
    return np.argmin(aggregated, axis=2).astype(np.int32)


def lr_consistency(disp_left: np.ndarray, disp_right: np.ndarray, tol: int) -> np.ndarray:
    """Invalidate left disparities that the right-referenced map does not confirm."""
    if disp_left.shape != disp_right.shape:
        raise ValueError("disparity maps differ in shape")
    h, w = disp_left.shape
    cols = np.arange(w)[None, :]
    xr = cols - disp_left
    ok = (disp_left >= 0) & (xr >= 0) & (xr < w)
    rows = np.broadcast_to(np.arange(h)[:, None], disp_left.shape)
    dr = disp_right[rows, np.clip(xr, 0, w - 1)]
    ok &= (dr >= 0) & (np.abs(disp_left - dr) <= tol)
    return np.where(ok, disp_left, INVALID).astype(np.int32)


def _wta_from_codes(cl: np.ndarray, cr: np.ndarray, params: SgmParams) -> np.ndarray:
    cv = cost_volume(cl, cr, params.d_max, params.census_bits)
    return select_disparity(aggregate_paths(cv, params))


def compute_disparity(pair: StereoPair, params: SgmParams = SgmParams()) -> np.ndarray:
    """Non-dense left disparity (int32, ``INVALID`` where rejected)."""
    params.validate()
    gl, gr = to_luma(pair.left), to_luma(pair.right)
    h, w = gl.shape
    if h < params.window or w < params.window:
        raise ValueError(f"image {w}x{h} smaller than census window {params.window}")
    cl = census_transform(gl, params.window)
    cr = census_transform(gr, params.window)
    disp_left = _wta_from_codes(cl, cr, params)
    # mirroring both views turns the right-referenced problem into a left-referenced one;
    # the bit permutation this causes is shared by both codes, so Hamming costs are unchanged
    disp_right = _wta_from_codes(cr[:, ::-1].copy(), cl[:, ::-1].copy(), params)[:, ::-1]
    return lr_consistency(disp_left, np.ascontiguousarray(disp_right), params.lr_tolerance)


# -- pair quality check ------------------------------------------------------

@dataclass(frozen=True)
class QcParams:
    n_corners: int = 200
    patch: int = 7
    search_dx: tuple[int, int] = (-4, 40)
    search_dy: int = 10
    min_zncc: float = 0.8
    min_matches: int = 20
    min_mean_dx: float = 1.0
    max_mean_dy: float = 5.0


@dataclass(frozen=True)
class QcReport:
    mean_dx: float
    mean_dy_abs: float
    n_matches: int
    verdict: str

    @property
    def accepted(self) -> bool:
        return self.verdict == "accept"

    def to_dict(self) -> dict:
        return {
            "mean_dx": self.mean_dx,
            "mean_dy_abs": self.mean_dy_abs,
            "n_matches": self.n_matches,
            "verdict": self.verdict,
        }


def harris_corners(gray: np.ndarray, n: int, margin: int, k: float = 0.04) -> np.ndarray:
    """Top-``n`` Harris corners as (row, col), strongest first, ties by position."""
    g = gray.astype(np.float64)
    ix = ndimage.sobel(g, axis=1, mode="nearest")
    iy = ndimage.sobel(g, axis=0, mode="nearest")
    sxx = ndimage.gaussian_filter(ix * ix, 1.0, mode="nearest")
    syy = ndimage.gaussian_filter(iy * iy, 1.0, mode="nearest")
    sxy = ndimage.gaussian_filter(ix * iy, 1.0, mode="nearest")
    resp = sxx * syy - sxy * sxy - k * (sxx + syy) ** 2
    peaks = (resp == ndimage.maximum_filter(resp, size=5, mode="nearest")) & (resp > 0)
    peaks[:margin, :] = False
    peaks[-margin:, :] = False
    peaks[:, :margin] = False
    peaks[:, -margin:] = False
    rows, cols = np.nonzero(peaks)
    order = np.lexsort((cols, rows, -resp[rows, cols]))[:n]
    return np.stack([rows[order], cols[order]], axis=1)


def _window_norms(img: np.ndarray, patch: int) -> np.ndarray:
    """Norm of the zero-mean patch centred at every pixel (0 near the border)."""
    half = patch // 2
    wins = np.lib.stride_tricks.sliding_window_view(img, (patch, patch))
    n = patch * patch
    s1 = wins.sum(axis=(2, 3))
    s2 = (wins * wins).sum(axis=(2, 3))
    var = np.maximum(s2 - s1 * s1 / n, 0.0)
    out = np.zeros(img.shape)
    out[half : img.shape[0] - half, half : img.shape[1] - half] = np.sqrt(var)
    return out


def _zncc_search(left, right, right_norms, r: int, c: int, q: QcParams):
    """Best ZNCC match of the patch at (r, c): (score, x_left - x_right, y_right - y_left)."""
    half = q.patch // 2
    h, w = right.shape
    tpl = left[r - half : r + half + 1, c - half : c + half + 1]
    tpl = tpl - tpl.mean()
    tn = np.sqrt((tpl * tpl).sum())
    if tn == 0:
        return None
    r_lo = max(r - q.search_dy, half)
    r_hi = min(r + q.search_dy, h - half - 1)
    c_lo = max(c - q.search_dx[1], half)
    c_hi = min(c - q.search_dx[0], w - half - 1)
    if r_lo > r_hi or c_lo > c_hi:
        return None
    region = right[r_lo - half : r_hi + half + 1, c_lo - half : c_hi + half + 1]
    wins = np.lib.stride_tricks.sliding_window_view(region, (q.patch, q.patch))
    # the template is zero-mean, so correlating raw windows equals correlating centred ones
    num = np.tensordot(wins, tpl, axes=([2, 3], [0, 1]))
    wn = right_norms[r_lo : r_hi + 1, c_lo : c_hi + 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        score = np.where(wn > 1e-9, num / (wn * tn), -2.0)
    # row-major argmax: smallest dy, then leftmost column, on ties
    i, j = np.unravel_index(int(np.argmax(score)), score.shape)
    return float(score[i, j]), c - (c_lo + j), (r_lo + i) - r


def validate_pair(pair: StereoPair, q: QcParams = QcParams()) -> QcReport:
    """Accept a pair only if features move horizontally by >= 1 px and barely vertically."""
    gl = to_luma(pair.left).astype(np.float64)
    gr = to_luma(pair.right).astype(np.float64)
    margin = q.patch // 2 + 1
    norms = _window_norms(gr, q.patch)
    dxs, dys = [], []
    for r, c in harris_corners(gl, q.n_corners, margin):
        m = _zncc_search(gl, gr, norms, int(r), int(c), q)
        if m is not None and m[0] >= q.min_zncc:
            dxs.append(m[1])
            dys.append(m[2])
    n = len(dxs)
    mean_dx = float(np.mean(dxs)) if n else 0.0
    mean_dy = float(np.mean(np.abs(dys))) if n else 0.0
    reject = n < q.min_matches or mean_dx < q.min_mean_dx or mean_dy > q.max_mean_dy
    return QcReport(mean_dx=mean_dx, mean_dy_abs=mean_dy, n_matches=n, verdict="reject" if reject else "accept")
