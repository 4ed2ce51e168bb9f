import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from videoprnu.prnu import (
    Fingerprint,
    Frame,
    NoiseResidual,
    compute_pce,
    estimate_fingerprint,
    extract_noise,
    ncc_surface,
)
from videoprnu.synth import make_scene, make_sensor, render_frame


def brute_ncc(r, f, m):
    """Direct-definition oracle: centered embedding, circular lags."""
    r0 = r - r.mean()
    f0 = f - f.mean()
    h, w = f.shape
    ay, ax = (h - r.shape[0]) // 2, (w - r.shape[1]) // 2
    pad = np.zeros_like(f0)
    pad[ay : ay + r.shape[0], ax : ax + r.shape[1]] = r0
    out = np.zeros((2 * m + 1, 2 * m + 1))
    for i, dy in enumerate(range(-m, m + 1)):
        for j, dx in enumerate(range(-m, m + 1)):
            out[i, j] = np.sum(pad * np.roll(f0, (-dy, -dx), axis=(0, 1)))
    return out / (np.linalg.norm(r0) * np.linalg.norm(f0))


class TestNccSurface:
    def test_self_match_peak_at_origin(self, rng):
        r = rng.standard_normal((128, 128))
        res = compute_pce(r, r, max_shift=50)
        assert res.peak_xy == (0, 0)

    def test_circular_shift_equivariance(self, rng):
        base = rng.standard_normal((128, 128))
        # residual sampled at +(dx, dy) = (+13, -7) from the original
        shifted = np.roll(base, (7, -13), axis=(0, 1))
        res = compute_pce(shifted, base, max_shift=50)
        assert res.peak_xy == (13, -7)
        res0 = compute_pce(base, base, max_shift=50)
        assert np.isclose(res.pce, res0.pce, rtol=1e-9)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_brute_force_equal_size(self, seed):
        rng = np.random.default_rng(seed)
        r = rng.standard_normal((64, 64))
        f = rng.standard_normal((64, 64))
        surf = ncc_surface(r, f, max_shift=10)
        ref = brute_ncc(r, f, 10)
        assert np.abs(surf - ref).max() <= 1e-6 * np.abs(ref).max()

    def test_matches_brute_force_embedded(self, rng):
        r = rng.standard_normal((40, 40))
        f = rng.standard_normal((64, 64))
        surf = ncc_surface(r, f, max_shift=10)
        ref = brute_ncc(r, f, 10)
        assert np.abs(surf - ref).max() <= 1e-6 * np.abs(ref).max()

    def test_surface_counts_all_candidate_shifts(self, rng):
        r = rng.standard_normal((128, 128))
        surf = ncc_surface(r, r, max_shift=50)
        assert surf.shape == (101, 101)
        assert surf.size == 101 * 101 == 10201

    def test_zero_variance_errors(self):
        with pytest.raises(ValueError):
            ncc_surface(np.zeros((16, 16)), np.ones((16, 16)), 4)
        with pytest.raises(ValueError):
            ncc_surface(np.random.default_rng(0).standard_normal((16, 16)), np.ones((16, 16)), 4)

    def test_residual_must_fit(self, rng):
        with pytest.raises(ValueError):
            ncc_surface(rng.standard_normal((32, 32)), rng.standard_normal((16, 16)), 4)


class TestComputePce:
    def test_pce_identity_of_fields(self, rng):
        r = rng.standard_normal((64, 64))
        f = rng.standard_normal((64, 64))
        res = compute_pce(r, f, max_shift=10)
        assert res.pce == res.peak_corr**2 / res.energy
        assert res.energy > 0
        assert max(abs(v) for v in res.peak_xy) <= 10

    def test_scale_invariance_bitwise_for_dyadic_factors(self, rng):
        r = rng.standard_normal((64, 64))
        f = rng.standard_normal((64, 64))
        base = compute_pce(r, f, max_shift=10)
        scaled = compute_pce(4.0 * r, 0.25 * f, max_shift=10)
        assert scaled.pce == base.pce
        assert scaled.peak_xy == base.peak_xy

    def test_scale_invariance_general_factors(self, rng):
        r = rng.standard_normal((64, 64))
        f = rng.standard_normal((64, 64))
        base = compute_pce(r, f, max_shift=10)
        scaled = compute_pce(3.7 * r, 0.01 * f, max_shift=10)
        assert scaled.peak_xy == base.peak_xy
        assert np.isclose(scaled.pce, base.pce, rtol=1e-9)

    def test_matched_pce_above_threshold_is_frame_level_match(self, rng):
        # a PCE of 78 against the photo-grade threshold of 60 declares a match
        pce, threshold = 78.0, 60.0
        assert pce >= threshold

    def test_null_distribution_stays_under_threshold(self):
        # independent 500x500 pairs: spurious PCE must stay below 60
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(10_000 + seed)
            r = rng.standard_normal((500, 500))
            f = rng.standard_normal((500, 500))
            if compute_pce(r, f, max_shift=50).pce < 60:
                hits += 1
        assert hits >= 99

    def test_pinned_peak(self, rng):
        base = rng.standard_normal((64, 64))
        shifted = np.roll(base, (3, -5), axis=(0, 1))  # content from +(-5, 3)... sampled at (5, -3)
        free = compute_pce(shifted, base, max_shift=10)
        pinned = compute_pce(shifted, base, max_shift=10, peak_at=free.peak_xy)
        assert pinned.pce == free.pce
        off = compute_pce(shifted, base, max_shift=10, peak_at=(0, 0))
        assert off.pce < free.pce


@settings(max_examples=20, deadline=None)
@given(
    dx=st.integers(min_value=-8, max_value=8),
    dy=st.integers(min_value=-8, max_value=8),
    seed=st.integers(min_value=0, max_value=2**16),
)
def test_shift_equivariance_property(dx, dy, seed):
    base = np.random.default_rng(seed).standard_normal((48, 48))
    shifted = np.roll(base, (-dy, -dx), axis=(0, 1))
    res = compute_pce(shifted, base, max_shift=8)
    assert res.peak_xy == (dx, dy)


class TestExtractNoise:
    def test_constant_frame_flags_low_information(self):
        frame = Frame(pixels=np.full((64, 64), 128.0))
        res = extract_noise(frame)
        assert res.low_information
        assert np.all(res.values == 0)

    def test_zero_mean_invariant(self, rng):
        frame = Frame(pixels=128 + 13 * rng.standard_normal((96, 96)))
        res = extract_noise(frame)
        assert abs(res.values.mean()) <= 1e-6
        assert abs(res.values.mean(axis=0)).max() <= 1e-6
        assert abs(res.values.mean(axis=1)).max() <= 1e-6

    def test_residual_correlates_with_strong_pattern(self):
        sensor = make_sensor((128, 128), strength=0.15, seed=7)
        scene = make_scene((128, 128), seed=8)
        frame = render_frame(scene, sensor, noise_sigma=0.0, seed=9)
        res = extract_noise(frame)
        corr = np.corrcoef(res.values.ravel(), sensor.k.ravel())[0, 1]
        assert corr > 0.2

    def test_cross_pce_same_vs_different_sensor(self):
        sensor_a = make_sensor((256, 256), strength=0.1, seed=20)
        sensor_b = make_sensor((256, 256), strength=0.1, seed=21)
        frames = {}
        for name, sensor, scene_seed in [
            ("a1", sensor_a, 30),
            ("a2", sensor_a, 31),
            ("b1", sensor_b, 32),
        ]:
            scene = make_scene((256, 256), seed=scene_seed)
            frames[name] = extract_noise(render_frame(scene, sensor, 2.0, seed=scene_seed + 100))
        same = compute_pce(frames["a1"], frames["a2"].values, max_shift=10)
        diff = compute_pce(frames["a1"], frames["b1"].values, max_shift=10)
        assert same.pce > 60
        assert diff.pce < 60

    def test_invalid_strength(self):
        with pytest.raises(ValueError):
            extract_noise(Frame(pixels=np.zeros((32, 32))), denoise_strength=0.0)


class TestEstimateFingerprint:
    def test_single_residual_unit_frame_is_normalized_residual(self, rng):
        vals = rng.standard_normal((64, 64))
        vals -= vals.mean()
        vals -= vals.mean(axis=1, keepdims=True)
        vals -= vals.mean(axis=0, keepdims=True)
        res = NoiseResidual(values=vals)
        frame = Frame(pixels=np.ones((64, 64)))
        fp = estimate_fingerprint([res], [frame])
        expected = vals / vals.std()
        np.testing.assert_allclose(fp.values, expected.astype(np.float32), atol=2e-6)
        assert fp.n_sources == 1

    def test_zero_mean_and_unit_variance(self, rng):
        residuals, frames = [], []
        for i in range(4):
            residuals.append(NoiseResidual(values=rng.standard_normal((48, 48))))
            frames.append(Frame(pixels=100 + 20 * rng.random((48, 48))))
        fp = estimate_fingerprint(residuals, frames, camera_label="cam")
        assert abs(float(fp.values.mean())) <= 1e-6
        assert np.isclose(float(fp.values.std()), 1.0, atol=1e-5)
        assert fp.camera_label == "cam"

    def test_quality_improves_with_more_sources(self):
        k = make_sensor((96, 96), strength=1.0, seed=50).k

        def estimate_corr(m, seed):
            rng = np.random.default_rng(seed)
            residuals, frames = [], []
            for _ in range(m):
                intensity = 100 + 20 * rng.random((96, 96))
                noise = 3.0 * rng.standard_normal((96, 96))
                residuals.append(NoiseResidual(values=intensity * 0.05 * k + noise))
                frames.append(Frame(pixels=intensity))
            fp = estimate_fingerprint(residuals, frames)
            return np.corrcoef(fp.values.ravel(), k.ravel())[0, 1]

        # strict increase at the reference seed
        c1, c5, c20 = (estimate_corr(m, 0) for m in (1, 5, 20))
        assert c1 < c5 < c20
        # non-decreasing across seeds
        for seed in range(1, 10):
            a, b, c = (estimate_corr(m, seed) for m in (1, 5, 20))
            assert a <= b <= c

    def test_dimension_mismatch_errors(self, rng):
        r1 = NoiseResidual(values=rng.standard_normal((32, 32)))
        r2 = NoiseResidual(values=rng.standard_normal((16, 16)))
        f32 = Frame(pixels=np.ones((32, 32)))
        f16 = Frame(pixels=np.ones((16, 16)))
        with pytest.raises(ValueError):
            estimate_fingerprint([r1, r2], [f32, f16])
        with pytest.raises(ValueError):
            estimate_fingerprint([], [])


def test_fingerprint_stored_float32(rng):
    fp = Fingerprint(values=rng.standard_normal((8, 8)), n_sources=1)
    assert fp.values.dtype == np.float32
