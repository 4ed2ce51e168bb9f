import json

import numpy as np
import pytest

from videoprnu.geometry import BlockGeometry, CornerWarp
from videoprnu.prnu import Frame, compute_pce
from videoprnu.search import (
    ScoredTransform,
    SearchConfig,
    build_reference_window,
    hgs_search,
    shift_search,
    unwarp_block_values,
)
from videoprnu.synth import central_block_geometry, make_sensor, stabilize_frame

from conftest import sensor_fingerprint


def gt_signature(warp, shift):
    """Corner-target signature invariant across equivalent (warp, shift) pairs."""
    return tuple(w - s for w, s in zip(warp.components, shift * 4))


def make_warped_block(seed, block=48, size=160, shift_range=8, pinned=False, halfwidth=7):
    rng = np.random.default_rng(seed)
    sensor = make_sensor((size, size), strength=0.1, seed=seed)
    geom = central_block_geometry((size, size), block)
    comps = [int(v) for v in rng.integers(-halfwidth, halfwidth + 1, size=8)]
    if pinned:
        comps[0] = comps[1] = 0
    warp = CornerWarp.from_components(comps)
    shift = (
        int(rng.integers(-shift_range + halfwidth, shift_range - halfwidth + 1)),
        int(rng.integers(-shift_range + halfwidth, shift_range - halfwidth + 1)),
    )
    stab = stabilize_frame(Frame(pixels=sensor.k), warp, shift, geom)
    x0, y0 = geom.origin_xy
    blk = stab.pixels[y0 : y0 + block, x0 : x0 + block]
    return sensor, blk, geom, warp, shift


class TestSearchConfig:
    def test_defaults_match_paper_parameters(self):
        cfg = SearchConfig()
        assert cfg.level_steps == (4, 2, 1)
        assert cfg.candidates_per_level == (1, 5, 5)
        assert cfg.top_k == 5
        assert cfg.shift_range == 50
        assert cfg.window_halfwidth == 7

    def test_expected_evaluation_counts(self):
        assert SearchConfig().expected_evaluations() == 72171
        assert SearchConfig(variant="constrained").expected_evaluations() == 8019
        assert SearchConfig(
            level_steps=(2, 1), candidates_per_level=(1, 3)
        ).expected_evaluations() == 4 * 9**4

    def test_lattice_coverage(self):
        cfg = SearchConfig()
        reachable = {0}
        for s in cfg.level_steps:
            reachable = {r + o for r in reachable for o in (-s, 0, s)}
        assert reachable == set(range(-7, 8))

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(level_steps=(2, 4, 1)),
            dict(level_steps=()),
            dict(candidates_per_level=(2, 5, 5)),
            dict(candidates_per_level=(1, 5)),
            dict(top_k=0),
            dict(shift_range=0),
            dict(variant="diagonal"),
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ValueError):
            SearchConfig(**kwargs)


class TestHgsSearch:
    def test_unwarped_block_identity_ranks_first(self):
        sensor = make_sensor((160, 160), strength=0.1, seed=3)
        geom = central_block_geometry((160, 160), 48)
        x0, y0 = geom.origin_xy
        blk = sensor.k[y0 : y0 + 48, x0 : x0 + 48]
        cfg = SearchConfig(shift_range=8, dtype="float32")
        top, _ = hgs_search(blk, sensor_fingerprint(sensor).values, geom, cfg)
        assert top[0].warp.is_zero()
        assert top[0].shift == (0, 0)

    def test_recovers_ground_truth_equivalence(self):
        sensor, blk, geom, warp, shift = make_warped_block(seed=5)
        cfg = SearchConfig(shift_range=8, dtype="float32")
        top, trace = hgs_search(blk, sensor_fingerprint(sensor).values, geom, cfg)
        assert gt_signature(top[0].warp, top[0].shift) == gt_signature(warp, shift)
        assert trace.transforms_evaluated == 72171
        assert trace.unique_transforms <= trace.transforms_evaluated

    def test_constrained_recovers_pinned_ground_truth(self):
        sensor, blk, geom, warp, shift = make_warped_block(seed=6, pinned=True)
        cfg = SearchConfig(shift_range=8, variant="constrained", dtype="float32")
        top, trace = hgs_search(blk, sensor_fingerprint(sensor).values, geom, cfg)
        assert top[0].warp.components == warp.components
        assert top[0].shift == shift
        assert trace.transforms_evaluated == 8019

    def test_results_sorted_and_deterministic_across_workers(self):
        sensor, blk, geom, _, _ = make_warped_block(seed=7)
        ref = sensor_fingerprint(sensor).values
        runs = []
        for workers, chunk in [(1, 32), (2, 32), (1, 7)]:
            cfg = SearchConfig(
                shift_range=8, variant="constrained", dtype="float32",
                workers=workers, chunk_size=chunk,
            )
            top, _ = hgs_search(blk, ref, geom, cfg)
            runs.append([(t.warp.components, t.shift, t.pce, t.peak_corr) for t in top])
        assert runs[0] == runs[1] == runs[2]
        pces = [t[2] for t in runs[0]]
        assert pces == sorted(pces, reverse=True)

    def test_ranking_soundness_bitwise(self):
        sensor, blk, geom, _, _ = make_warped_block(seed=8)
        cfg = SearchConfig(shift_range=8, variant="constrained", dtype="float32")
        ref = sensor_fingerprint(sensor).values
        top, _ = hgs_search(blk, ref, geom, cfg)
        window = build_reference_window(ref, geom, cfg.shift_range, dtype=cfg.dtype)
        for t in top:
            und, valid = unwarp_block_values(blk.astype(np.float32), t.warp, geom)
            res = compute_pce(
                und,
                window,
                max_shift=cfg.shift_range,
                exclude_radius=cfg.pce_exclude_radius,
                mask=None if valid.all() else valid,
            )
            assert res.pce == t.pce
            assert res.peak_xy == t.shift

    def test_reference_too_small(self):
        sensor, blk, geom, _, _ = make_warped_block(seed=9)
        with pytest.raises(ValueError, match="reference too small"):
            hgs_search(blk, sensor.k[:60, :60], geom, SearchConfig(shift_range=8))

    def test_all_degenerate_block_errors(self):
        geom = BlockGeometry(origin_xy=(56, 56), size=48)
        ref = np.random.default_rng(0).standard_normal((160, 160))
        with pytest.raises(ValueError, match="degenerate"):
            hgs_search(np.zeros((48, 48)), ref, geom, SearchConfig(shift_range=8))

    def test_trace_json_export(self):
        sensor, blk, geom, _, _ = make_warped_block(seed=10)
        cfg = SearchConfig(shift_range=8, variant="constrained", dtype="float32")
        _, trace = hgs_search(blk, sensor_fingerprint(sensor).values, geom, cfg)
        payload = json.loads(trace.to_json())
        assert payload["transforms_evaluated"] == 8019
        assert len(payload["levels"]) == 3
        assert "timings" in payload
        assert "timings" not in json.loads(trace.to_json(include_timings=False))


class TestShiftSearch:
    def test_true_location_gives_zero_shift(self, rng):
        ref = rng.standard_normal((200, 200))
        block = ref[80:144, 60:124]
        shift, pce = shift_search(block, ref, nominal_origin_xy=(60, 80), shift_range=20)
        assert shift == (0, 0)
        assert pce > 60

    def test_offset_recovered_exactly(self, rng):
        ref = rng.standard_normal((360, 360))
        # block actually comes from nominal + (+21, -34)
        block = ref[120 - 34 : 184 - 34, 140 + 21 : 204 + 21]
        shift, _ = shift_search(block, ref, nominal_origin_xy=(140, 120), shift_range=50)
        assert shift == (21, -34)

    def test_scores_all_candidate_translations(self, rng):
        # a range of 50 scores exactly 101^2 translations
        assert (2 * 50 + 1) ** 2 == 10201


def test_scored_transform_serialization():
    t = ScoredTransform(
        warp=CornerWarp(a=(1, 2), b=(3, 4), c=(5, 6), d=(7, -1)),
        shift=(9, -9),
        pce=12.5,
        peak_corr=0.01,
    )
    d = t.to_dict()
    assert d["warp"] == [1, 2, 3, 4, 5, 6, 7, -1]
    assert d["shift"] == [9, -9]
