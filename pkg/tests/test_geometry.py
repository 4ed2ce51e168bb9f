import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from videoprnu.geometry import (
    BlockGeometry,
    CornerWarp,
    Homography,
    affine_about_center,
    corners_to_homography,
    decompose_fixed_vertex,
    inverse_warp,
    translation_homography,
    warped_corners,
)

GEOM = BlockGeometry(origin_xy=(70, 70), size=500)
SMALL = BlockGeometry(origin_xy=(20, 20), size=64)

warp_components = st.lists(
    st.integers(min_value=-7, max_value=7), min_size=8, max_size=8
).map(CornerWarp.from_components)


def svd_homography_oracle(src, dst):
    """Independent 4-point solve: nullspace of the 9-parameter DLT system."""
    a = []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    _, _, vt = np.linalg.svd(np.asarray(a))
    h = vt[-1].reshape(3, 3)
    return h / h[2, 2]


class TestCornersToHomography:
    def test_zero_warp_is_identity(self):
        h = corners_to_homography(CornerWarp(), GEOM)
        np.testing.assert_allclose(h.m, np.eye(3), atol=1e-12)

    def test_uniform_displacement_is_translation(self):
        warp = CornerWarp(a=(3, 2), b=(3, 2), c=(3, 2), d=(3, 2))
        h = corners_to_homography(warp, GEOM)
        expected = np.eye(3)
        expected[0, 2] = 3
        expected[1, 2] = 2
        np.testing.assert_allclose(h.m, expected, atol=1e-9)

    def test_single_corner_move_matches_svd_oracle(self):
        warp = CornerWarp(a=(4, 0))
        h = corners_to_homography(warp, GEOM)
        src = GEOM.corners()
        dst = warped_corners(warp, GEOM)
        assert np.max(np.abs(h.apply(src) - dst)) <= 1e-9
        oracle = svd_homography_oracle(src, dst)
        np.testing.assert_allclose(h.m, oracle, atol=1e-8)

    @settings(max_examples=50, deadline=None)
    @given(warp=warp_components)
    def test_corner_fidelity_property(self, warp):
        h = corners_to_homography(warp, GEOM)
        assert np.max(np.abs(h.apply(GEOM.corners()) - warped_corners(warp, GEOM))) <= 1e-9

    def test_degenerate_quadrilateral_rejected(self):
        geom = BlockGeometry(origin_xy=(0, 0), size=8)
        # corner A dragged past B collapses the top edge orientation
        with pytest.raises(ValueError):
            corners_to_homography(CornerWarp(a=(9, 0)), geom)


class TestHomography:
    def test_normalization_and_inverse(self):
        h = Homography(2.0 * np.array([[1.0, 0, 5], [0, 1, -3], [0, 0, 1]]))
        assert h.m[2, 2] == 1.0
        np.testing.assert_allclose(h.inverse().m @ h.m, np.eye(3), atol=1e-12)

    def test_singular_rejected(self):
        with pytest.raises(ValueError):
            Homography(np.zeros((3, 3)))

    def test_affine_about_center_fixes_center(self):
        a = affine_about_center((31.5, 31.5), rotation_deg=1.3, scale=1.01)
        np.testing.assert_allclose(a.apply(np.array([31.5, 31.5])), [31.5, 31.5], atol=1e-9)


class TestInverseWarp:
    def test_identity_returns_input(self, rng):
        pat = rng.standard_normal((128, 128))
        geom = BlockGeometry(origin_xy=(32, 32), size=64)
        out, valid = inverse_warp(pat, Homography(np.eye(3)), geom)
        assert valid.all()
        np.testing.assert_array_equal(out, pat[32:96, 32:96])

    def test_integer_translation_bit_exact(self, rng):
        pat = rng.standard_normal((128, 128))
        geom = BlockGeometry(origin_xy=(32, 32), size=64)
        h = translation_homography((5, -3))
        out, valid = inverse_warp(pat, h, geom)
        assert valid.all()
        np.testing.assert_array_equal(out, pat[32 + 3 : 96 + 3, 32 - 5 : 96 - 5])

    def test_out_of_bounds_zero_filled_and_masked(self, rng):
        pat = rng.standard_normal((64, 64))
        geom = BlockGeometry(origin_xy=(0, 0), size=64)
        out, valid = inverse_warp(pat, translation_homography((10, 0)), geom)
        assert not valid[:, :10].any()
        assert np.all(out[:, :10] == 0)
        assert valid[:, 10:].all()

    @settings(max_examples=20, deadline=None)
    @given(
        tx=st.integers(min_value=-6, max_value=6),
        ty=st.integers(min_value=-6, max_value=6),
    )
    def test_integer_translation_roundtrip_identity(self, tx, ty):
        pat = np.random.default_rng(9).standard_normal((96, 96))
        geom = BlockGeometry(origin_xy=(16, 16), size=64)
        h = translation_homography((tx, ty))
        fwd, _ = inverse_warp(pat, h, BlockGeometry(origin_xy=(0, 0), size=96))
        back, valid = inverse_warp(fwd, h.inverse(), geom)
        assert valid.all()
        np.testing.assert_array_equal(back, pat[16:80, 16:80])


class TestDecomposeFixedVertex:
    def test_uniform_translation(self):
        warp = CornerWarp(a=(7, 7), b=(7, 7), c=(7, 7), d=(7, 7))
        rel, shift = decompose_fixed_vertex(warp)
        assert rel.is_zero()
        assert shift == (7, 7)

    def test_componentwise_example(self):
        warp = CornerWarp(a=(2, 1), b=(-3, 4), c=(0, 0), d=(1, -2))
        rel, shift = decompose_fixed_vertex(warp)
        assert shift == (2, 1)
        assert rel.a == (0, 0)
        assert rel.b == (-5, 3)
        assert rel.c == (-2, -1)
        assert rel.d == (-1, -3)

    @settings(max_examples=100, deadline=None)
    @given(warp=warp_components)
    def test_composition_maps_corners_exactly(self, warp):
        rel, shift = decompose_fixed_vertex(warp)
        h_rel = corners_to_homography(rel, GEOM)
        composed = translation_homography(shift).compose(h_rel)
        target = warped_corners(warp, GEOM)
        np.testing.assert_allclose(composed.apply(GEOM.corners()), target, atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(warp=warp_components)
    def test_constrained_space_characterization(self, warp):
        rel, _ = decompose_fixed_vertex(warp)
        within = all(abs(v) <= 7 for v in rel.components)
        expected = all(
            abs(e[0] - warp.a[0]) <= 7 and abs(e[1] - warp.a[1]) <= 7
            for e in (warp.b, warp.c, warp.d)
        )
        assert within == expected


def test_corner_ordering_clockwise_from_top_left():
    corners = BlockGeometry(origin_xy=(10, 20), size=100).corners()
    np.testing.assert_array_equal(corners[0], [10, 20])     # A top-left
    np.testing.assert_array_equal(corners[1], [109, 20])    # B top-right
    np.testing.assert_array_equal(corners[2], [109, 119])   # C bottom-right
    np.testing.assert_array_equal(corners[3], [10, 119])    # D bottom-left
