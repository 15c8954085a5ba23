import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fedreid.augment import (CORNERS, HORIZONTAL, VERTICAL, apply_plan, augment_pair, classify_patch,
                             common_augment, generate_mask, occlude, plan_occlusion, random_erase)
from fedreid.data import OcclusionPatch, generate_dataset, generate_patch_set
from fedreid.errors import ConfigurationError, ContractError


def _patch(h, w, value=0.5):
    return OcclusionPatch(np.full((3, h, w), value, np.float32), "test")


def _image(seed=0, h=64, w=32):
    return np.random.default_rng(seed).uniform(0, 1, (3, h, w)).astype(np.float32)


@pytest.mark.parametrize("h, w, want", [(40, 10, VERTICAL), (30, 10, HORIZONTAL), (10, 40, HORIZONTAL)])
def test_classify_patch(h, w, want):
    assert classify_patch(_patch(h, w)) == want


def test_horizontal_extreme_bottom_half():
    x = _image()
    out = occlude(x, _patch(10, 40), np.random.default_rng(0), extent=32, corner="bottom-left")
    assert np.all(out[:, :32] == x[:, :32])
    assert np.all(out[:, 32:] != x[:, 32:])


def test_vertical_extreme_right_quarter():
    x = _image()
    out = occlude(x, _patch(40, 10), np.random.default_rng(0), extent=8, corner="top-right")
    assert np.all(out[:, :, :24] == x[:, :, :24])
    assert np.all(out[:, :, 24:] != x[:, :, 24:])


def test_extent_outside_range_rejected():
    with pytest.raises(ContractError):
        occlude(_image(), _patch(10, 40), np.random.default_rng(0), extent=33)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([(64, 32), (32, 16), (48, 24)]))
def test_paste_region_oracle(seed, shape):
    """Inside the plan rectangle x' equals the resized patch; outside, x' = x."""
    rng = np.random.default_rng(seed)
    x = _image(seed % 97, *shape)
    p = generate_patch_set(30, seed=seed % 5)[seed % 30]
    plan = plan_occlusion(x.shape, p, rng)
    out = apply_plan(x, plan)
    H, W = shape
    for r in range(H):
        for c in range(W):
            inside = plan.rows.start <= r < plan.rows.stop and plan.cols.start <= c < plan.cols.stop
            want = plan.pixels[:, r - plan.top, c - plan.left] if inside else x[:, r, c]
            assert np.array_equal(out[:, r, c], want)
    if plan.orientation == HORIZONTAL:
        assert H // 4 <= plan.pixels.shape[1] <= H // 2 and plan.pixels.shape[2] == W
    else:
        assert W // 4 <= plan.pixels.shape[2] <= W // 2 and plan.pixels.shape[1] == H


def test_mask_identity_is_all_ones():
    x = _image()
    np.testing.assert_array_equal(generate_mask(x, x, HORIZONTAL), [1, 1, 1, 1])


def test_mask_bottom_24_rows():
    x = _image()
    x2 = x.copy()
    x2[:, 40:] = 1.0 - x2[:, 40:]
    np.testing.assert_array_equal(generate_mask(x, x2, HORIZONTAL), [1, 1, 1, 0])


def test_mask_three_quarter_boundary_is_strict():
    x = _image()
    x2 = x.copy()
    x2[:, 4:16] += 0.5  # exactly 12 of 16 rows of stripe 1
    np.testing.assert_array_equal(generate_mask(x, x2, HORIZONTAL), [1, 1, 1, 1])
    x2[:, 3] += 0.5
    np.testing.assert_array_equal(generate_mask(x, x2, HORIZONTAL), [0, 1, 1, 1])


def test_vertical_mask_ignores_difference():
    x = _image()
    x2 = x.copy()
    x2[:, :, :16] = 0.0
    np.testing.assert_array_equal(generate_mask(x, x2, VERTICAL), [1, 1, 1, 1])


def test_mask_errors():
    with pytest.raises(ContractError):
        generate_mask(_image(), _image(h=32), HORIZONTAL)
    with pytest.raises(ContractError):
        generate_mask(_image(), _image(), "diagonal")


@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("corner", CORNERS)
def test_full_stripe_cover_gives_k_zeros_at_end(k, corner):
    x = _image(1)
    out = occlude(x, _patch(10, 40), np.random.default_rng(0), extent=16 * k, corner=corner)
    mask = generate_mask(x, out, HORIZONTAL)
    want = [1, 1, 1, 1]
    for i in range(k):
        want[i if corner.startswith("top") else 3 - i] = 0
    np.testing.assert_array_equal(mask, want)


def test_mask_matches_oracle_on_random_pairs():
    patches = generate_patch_set(30, seed=2)
    rng = np.random.default_rng(4)
    x = generate_dataset(2, 2, seed=0)[0].image
    for _ in range(40):
        pair = augment_pair(x, patches, rng)
        assert pair.mask.tolist() == oracles.stripe_mask(x, pair.occluded, pair.orientation)
        # idempotent and pure
        np.testing.assert_array_equal(generate_mask(x, pair.occluded, pair.orientation), pair.mask)


def test_augment_pair_deterministic():
    patches = generate_patch_set(30, seed=0)
    x = _image()
    a = augment_pair(x, patches, np.random.default_rng(9))
    b = augment_pair(x, patches, np.random.default_rng(9))
    assert a.occluded.tobytes() == b.occluded.tobytes() and a.mask.tolist() == b.mask.tolist()


def test_both_orientations_and_zero_rule_over_1000_draws():
    patches = generate_patch_set(30, seed=0)
    rng = np.random.default_rng(0)
    x = _image()
    seen = {VERTICAL: 0, HORIZONTAL: 0}
    for _ in range(1000):
        pair = augment_pair(x, patches, rng)
        seen[pair.orientation] += 1
        if pair.orientation == VERTICAL:
            assert pair.mask.tolist() == [1, 1, 1, 1]
        assert pair.original is x and pair.occluded.shape == x.shape
        assert set(pair.mask.tolist()) <= {0.0, 1.0} and pair.mask.shape == (4,)
    assert seen[VERTICAL] >= 1 and seen[HORIZONTAL] >= 1


def test_empty_patch_set_rejected():
    with pytest.raises(ConfigurationError):
        augment_pair(_image(), [], np.random.default_rng(0))


def test_tiny_image_rejected():
    with pytest.raises(ContractError):
        occlude(_image(h=4, w=4), _patch(10, 40), np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_common_augment_stays_in_range(seed):
    out = common_augment(_image(seed % 7), np.random.default_rng(seed))
    assert out.shape == (3, 64, 32) and out.min() >= 0 and out.max() <= 1


def test_random_erase_changes_one_rectangle_or_nothing():
    x = _image()
    rng = np.random.default_rng(0)
    changed_any = False
    for _ in range(20):
        out = random_erase(x, rng)
        diff = (out != x).any(axis=0)
        if diff.any():
            changed_any = True
            rows, cols = np.flatnonzero(diff.any(1)), np.flatnonzero(diff.any(0))
            box = diff[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
            assert box.mean() > 0.9  # a filled rectangle (noise may coincide on a pixel)
    assert changed_any
