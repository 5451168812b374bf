import numpy as np
import pytest

from polarfine.boundaries import (BoundaryPointSet, StrideInvalid,
                                  build_boundary_mask, extract_boundaries)
from polarfine.codec import BitMask, DimensionMismatch, EmptyMask
from polarfine.synth import SceneConfig, scene_for_index


def rect_mask(h, w, r0, r1, c0, c1):
    bits = np.zeros((h, w), dtype=bool)
    bits[r0:r1, c0:c1] = True
    return bits


def border_pixels_4conn(bits):
    """Foreground with a 4-neighbour outside (frame counts as outside)."""
    padded = np.pad(bits, 1)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return bits & ~interior


def test_single_pixel_loop():
    bits = np.zeros((5, 5), dtype=bool)
    bits[2, 3] = True
    bps = extract_boundaries([BitMask(bits)])
    assert bps.num_instances == 1
    assert len(bps.loops[0]) == 1
    assert np.array_equal(bps.loops[0][0], [[2, 3]])


def test_rectangle_border_complete_and_closed():
    bits = rect_mask(12, 12, 3, 9, 2, 10)
    bps = extract_boundaries([BitMask(bits)])
    loop = bps.loops[0][0]
    expected = border_pixels_4conn(bits)
    traced = np.zeros_like(bits)
    traced[loop[:, 0], loop[:, 1]] = True
    assert np.array_equal(traced, expected)
    # consecutive points stay 8-adjacent, and the loop closes
    diffs = np.abs(np.diff(np.vstack([loop, loop[:1]]), axis=0))
    assert diffs.max() == 1


def test_image_frame_counts_as_background():
    bits = np.ones((6, 6), dtype=bool)
    bps = extract_boundaries([BitMask(bits)])
    traced = np.zeros_like(bits)
    loop = bps.loops[0][0]
    traced[loop[:, 0], loop[:, 1]] = True
    assert np.array_equal(traced, border_pixels_4conn(bits))
    assert not traced[2:4, 2:4].any()


def test_hole_border_is_not_traced():
    bits = rect_mask(14, 14, 2, 12, 2, 12)
    bits[6:9, 6:9] = False
    bps = extract_boundaries([BitMask(bits)])
    assert len(bps.loops[0]) == 1
    loop = bps.loops[0][0]
    # no traced point on the hole's rim
    rim = {(5, 6), (6, 5), (9, 6), (6, 9)}
    assert not rim.intersection({(int(i), int(j)) for i, j in loop})


def test_split_instance_gets_two_loops():
    bits = rect_mask(10, 20, 2, 8, 1, 6) | rect_mask(10, 20, 2, 8, 12, 19)
    bps = extract_boundaries([BitMask(bits)])
    assert bps.num_instances == 1
    assert len(bps.loops[0]) == 2
    assert bps.instance_points(0).shape[1] == 2


def test_input_validation():
    with pytest.raises(EmptyMask):
        extract_boundaries([BitMask(np.zeros((4, 4), dtype=bool))])
    with pytest.raises(DimensionMismatch):
        extract_boundaries([BitMask(np.ones((4, 4), dtype=bool)),
                            BitMask(np.ones((5, 4), dtype=bool))])
    assert extract_boundaries([]).num_instances == 0


def test_boundary_mask_cells_exact():
    bits = rect_mask(16, 16, 4, 9, 5, 12)
    bps = extract_boundaries([BitMask(bits)])
    stride = 4
    got = build_boundary_mask(bps, stride, 16, 16)
    expected = {(int(i) // stride, int(j) // stride)
                for i, j in bps.all_points()}
    cells = {(int(i), int(j)) for i, j in np.argwhere(got.bits)}
    assert cells == expected
    assert got.bits.shape == (4, 4)


def test_boundary_mask_ceil_dimensions_and_stride_one():
    bits = rect_mask(10, 14, 0, 10, 0, 14)
    bps = extract_boundaries([BitMask(bits)])
    m3 = build_boundary_mask(bps, 3, 10, 14)
    assert m3.bits.shape == (4, 5)
    m1 = build_boundary_mask(bps, 1, 10, 14)
    traced = np.zeros_like(bits)
    pts = bps.all_points()
    traced[pts[:, 0], pts[:, 1]] = True
    assert np.array_equal(m1.bits, traced)
    with pytest.raises(StrideInvalid):
        build_boundary_mask(bps, 0, 10, 14)


def test_traced_points_cover_generated_scenes():
    """On clean synthetic instances the trace equals the 4-border exactly."""
    cfg = SceneConfig(height=48, width=48, max_instances=3)
    for idx in range(6):
        scene = scene_for_index(cfg, 100, idx)
        bps = extract_boundaries(scene.bitmasks)
        for i, mask in enumerate(scene.masks):
            pts = bps.instance_points(i)
            traced = np.zeros_like(mask)
            traced[pts[:, 0], pts[:, 1]] = True
            expected = border_pixels_4conn(mask)
            # traced points are all real border pixels of the instance
            assert mask[pts[:, 0], pts[:, 1]].all()
            assert np.array_equal(traced, expected)
