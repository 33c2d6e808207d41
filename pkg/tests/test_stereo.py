from functools import lru_cache

import numpy as np
import pytest

from riskcnn.render import CameraRig, ground_truth_disparity, render_stereo_scene
from riskcnn.scenario import Scene, ScenarioConfig, VehicleState, generate_scene
from riskcnn.stereo import (
    INVALID,
    PATH_DIRECTIONS,
    QcParams,
    SgmParams,
    StereoPair,
    aggregate_paths,
    census_transform,
    compute_disparity,
    cost_volume,
    lr_consistency,
    select_disparity,
    to_luma,
    validate_pair,
)
from riskcnn.pipeline.dataset import inject_vertical_jitter


def path_dp_oracle(cost: np.ndarray, p1: int, p2: int) -> np.ndarray:
    """Direct recursion over each of the eight paths, in plain Python integers."""
    h, w, nd = cost.shape
    total = np.zeros_like(cost, dtype=np.int64)
    for dx, dy in PATH_DIRECTIONS:

        @lru_cache(maxsize=None)
        def L(y, x):
            c = [int(v) for v in cost[y, x]]
            py, px = y - dy, x - dx
            if not (0 <= py < h and 0 <= px < w):
                return tuple(c)
            prev = L(py, px)
            m = min(prev)
            out = []
            for d in range(nd):
                cands = [prev[d], m + p2]
                if d > 0:
                    cands.append(prev[d - 1] + p1)
                if d < nd - 1:
                    cands.append(prev[d + 1] + p1)
                out.append(c[d] + min(cands) - m)
            return tuple(out)

        for y in range(h):
            for x in range(w):
                total[y, x] += L(y, x)
    return total


def textured(h, w, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(h, w)).astype(np.uint8)


def shifted_pair(k, h=40, w=90, seed=0):
    base = textured(h, w + k, seed)
    return StereoPair(base[:, :w], base[:, k : k + w])


# -- census ----------------------------------------------------------------------

def test_luma_rounding():
    img = np.array([[[255, 255, 255], [10, 20, 30], [1, 0, 0]]], dtype=np.uint8)
    assert to_luma(img).tolist() == [[255, 18, 0]]


def test_constant_image_census_zero():
    assert not census_transform(np.full((7, 9), 80)).any()


def test_census_bit_order():
    patch = np.array([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
    code = int(census_transform(patch, window=3)[1, 1])
    assert [(code >> k) & 1 for k in range(8)] == [1, 1, 1, 1, 0, 0, 0, 0]
    assert code < 2**8


def test_census_window_validation():
    with pytest.raises(ValueError):
        census_transform(np.zeros((5, 5)), window=4)


# -- cost volume -----------------------------------------------------------------

def test_identical_codes_zero_cost_at_d0():
    c = census_transform(textured(12, 15))
    assert not cost_volume(c, c, 4, 24)[:, :, 0].any()


def test_cost_volume_matches_popcount_oracle():
    cl = census_transform(textured(9, 13, 1))
    cr = census_transform(textured(9, 13, 2))
    cv = cost_volume(cl, cr, 6, 24)
    for y in range(9):
        for x in range(13):
            for d in range(6):
                expect = 24 if x - d < 0 else bin(int(cl[y, x]) ^ int(cr[y, x - d])).count("1")
                assert cv[y, x, d] == expect


def test_cost_volume_shift_argmin():
    pair = shifted_pair(3, 20, 40)
    cv = cost_volume(census_transform(pair.left), census_transform(pair.right), 8, 24)
    inner = cv[3:-3, 10:-3]
    # local extrema share all-zero / all-one codes, so d=3 is a minimizer but not always unique
    assert np.all(inner[:, :, 3] == 0)
    assert np.all(inner[:, :, 3] == inner.min(axis=2))
    assert np.mean(np.argmin(inner, axis=2) == 3) > 0.95


# -- aggregation -----------------------------------------------------------------

def test_single_pixel_aggregates_eight_times():
    cv = np.array([[[3, 1, 4, 1]]], dtype=np.int32)
    np.testing.assert_array_equal(aggregate_paths(cv, SgmParams(p1=2, p2=5)), 8 * cv)


def test_uniform_costs():
    cv = np.full((5, 6, 4), 7, dtype=np.int32)
    np.testing.assert_array_equal(aggregate_paths(cv, SgmParams()), 8 * cv)


def test_one_row_hand_costs_match_oracle():
    cv = np.array([[[0, 5, 9], [7, 0, 3], [2, 2, 8], [9, 1, 0], [4, 4, 4]]], dtype=np.int32)
    params = SgmParams(p1=2, p2=6)
    np.testing.assert_array_equal(aggregate_paths(cv, params), path_dp_oracle(cv, 2, 6))


@pytest.mark.parametrize("seed", range(10))
def test_aggregation_matches_dp_oracle(seed):
    rng = np.random.default_rng(seed)
    h, w, nd = rng.integers(1, 17), rng.integers(1, 17), rng.integers(1, 9)
    cv = rng.integers(0, 25, size=(h, w, nd)).astype(np.int32)
    p1 = int(rng.integers(1, 10))
    p2 = int(rng.integers(p1 + 1, 60))
    np.testing.assert_array_equal(aggregate_paths(cv, SgmParams(p1=p1, p2=p2)), path_dp_oracle(cv, p1, p2))


# -- winner takes all and consistency ---------------------------------------------

def test_wta_convex_and_ties():
    convex = np.array([[[(d - 4) ** 2 for d in range(9)]]])
    assert select_disparity(convex)[0, 0] == 4
    tie = np.array([[[5, 5, 1, 5, 5, 1, 5]]])
    assert select_disparity(tie)[0, 0] == 2


def test_wta_matches_exhaustive_argmin():
    rng = np.random.default_rng(4)
    vol = rng.integers(0, 6, size=(8, 9, 7))
    got = select_disparity(vol)
    for y in range(8):
        for x in range(9):
            col = vol[y, x].tolist()
            assert got[y, x] == col.index(min(col))


def test_lr_check_rules():
    z = np.zeros((3, 6), dtype=np.int32)
    assert np.all(lr_consistency(z, z, 1) == 0)
    dl = np.full((1, 10), 5, dtype=np.int32)
    dr = np.full((1, 10), 9, dtype=np.int32)
    out = lr_consistency(dl, dr, 1)
    assert np.all(out == INVALID)
    dr[0, 2] = 6
    assert lr_consistency(dl, dr, 1)[0, 7] == 5
    # lookups left of the image are invalid
    assert lr_consistency(dl, np.full_like(dl, 5), 1)[0, :5].tolist() == [INVALID] * 5


# -- full pipeline ----------------------------------------------------------------

def test_identical_textured_images_give_zero():
    img = textured(30, 50)
    d = compute_disparity(StereoPair(img, img), SgmParams(d_max=16))
    valid = d != INVALID
    assert valid.mean() > 0.9
    assert np.all(d[valid] == 0)


@pytest.mark.parametrize("k", [1, 4, 8, 13])
def test_shift_recovery(k):
    d = compute_disparity(shifted_pair(k), SgmParams(d_max=24))
    interior = d[3:-3, k + 3 : -3]
    valid = interior[interior != INVALID]
    assert valid.size > 0.5 * interior.size
    assert np.mean(valid == k) >= 0.95


def test_output_values_are_disparities_or_invalid():
    scene = generate_scene(2, ScenarioConfig())
    d = compute_disparity(render_stereo_scene(scene, CameraRig()))
    assert d.dtype == np.int32
    assert set(np.unique(d[d != INVALID])) <= set(range(64))
    assert np.all((d == INVALID) | (d >= 0))


def test_frontal_box_disparity():
    rig = CameraRig()
    box = VehicleState(id=1, x=rig.mount_forward + 8.0 + 2.0, y=0.0, heading=0.0, speed=0.0, length=4.0, width=3.0)
    scene = Scene(VehicleState(id=0, x=0.0, y=0.0, heading=0.0, speed=0.0), (box,))
    d = compute_disparity(render_stereo_scene(scene, rig))
    gt = ground_truth_disparity(scene, rig)
    on_box = np.isclose(gt, rig.focal_length * rig.baseline / 8.0) & (d != INVALID)
    assert on_box.sum() > 100
    assert np.all(np.abs(d[on_box] - round(4.6)) <= 1)


@pytest.mark.parametrize("seed", range(3))
def test_accuracy_vs_ground_truth(seed):
    rig = CameraRig()
    scene = generate_scene(seed, ScenarioConfig())
    d = compute_disparity(render_stereo_scene(scene, rig))
    gt = ground_truth_disparity(scene, rig)
    ok = (d != INVALID) & (gt > 0)
    assert np.mean(np.abs(d[ok] - gt[ok]) <= 1.0) >= 0.7


def test_textureless_pair_reports_invalid_fraction():
    img = np.full((20, 40), 120, dtype=np.uint8)
    d = compute_disparity(StereoPair(img, img), SgmParams(d_max=8))
    frac = float(np.mean(d == INVALID))
    assert 0.0 <= frac <= 1.0


def test_raising_p2_does_not_add_discontinuities():
    scene = generate_scene(3, ScenarioConfig())
    pair = render_stereo_scene(scene, CameraRig())

    def jumps(p2):
        d = compute_disparity(pair, SgmParams(p2=p2))
        a, b = d[:, 1:], d[:, :-1]
        both = (a != INVALID) & (b != INVALID)
        return int(np.sum(both & (np.abs(a - b) > 1)))

    counts = [jumps(p2) for p2 in (16, 48, 96, 200)]
    assert counts == sorted(counts, reverse=True)


def test_too_small_image_rejected():
    img = np.zeros((3, 30), dtype=np.uint8)
    with pytest.raises(ValueError, match="census window"):
        compute_disparity(StereoPair(img, img))


def test_params_validation():
    with pytest.raises(ValueError, match="^p1/p2"):
        SgmParams(p1=100, p2=96).validate()
    with pytest.raises(ValueError):
        StereoPair(np.zeros((4, 4)), np.zeros((4, 5)))


# -- quality check ----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_qc_accepts_rectified_rejects_jitter_and_identical(seed):
    pair = render_stereo_scene(generate_scene(seed, ScenarioConfig()), CameraRig())
    ok = validate_pair(pair)
    assert ok.accepted and ok.mean_dx >= 1.0 and ok.mean_dy_abs < 0.5
    jit = validate_pair(StereoPair(pair.left, inject_vertical_jitter(pair.right)))
    assert not jit.accepted and jit.mean_dy_abs > 5.0
    same = validate_pair(StereoPair(pair.left, pair.left))
    assert not same.accepted and same.mean_dx < 1.0


def test_qc_requires_enough_matches():
    img = np.full((66, 200, 3), 90, dtype=np.uint8)
    rep = validate_pair(StereoPair(img, img))
    assert rep.n_matches == 0 and rep.verdict == "reject"


def test_qc_report_dict():
    pair = shifted_pair(5, 66, 200)
    rep = validate_pair(pair, QcParams())
    assert set(rep.to_dict()) == {"mean_dx", "mean_dy_abs", "n_matches", "verdict"}
    assert rep.mean_dx == pytest.approx(5.0)
