"""Command-line surface.

Commands: ``fingerprint build``, ``triage``, ``verify``, and ``synth``
(generate / oracle / sweep / roc).  Results are written as schema-versioned
JSON to stdout or the requested report path, never to stderr.  ``verify``
exits 0 on match, 1 on no-match, 2 on error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as vio
from .pipeline import PipelineConfig, build_report, report_json, verify_video
from .prnu import estimate_fingerprint, extract_noise
from .search import SearchConfig, hgs_search
from .synth import (
    LabeledRun,
    exhaustive_small_search,
    make_sensor,
    make_video,
    roc_experiment,
    sweep_validation_params,
)

EXIT_MATCH = 0
EXIT_NO_MATCH = 1
EXIT_ERROR = 2


def _emit(payload: dict, report_path=None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2)
    if report_path:
        Path(report_path).write_text(text + "\n")
    print(text)


def _error_payload(exc: Exception) -> dict:
    return {
        "schema_version": "1",
        "error": {"type": type(exc).__name__, "message": str(exc)},
    }


def _frame_source(args) -> vio.FrameSource:
    path = Path(args.frames)
    if path.is_dir():
        return vio.FrameSource(
            kind="image_sequence_dir", path=str(path), iframe_index_file=args.iframes
        )
    if args.raw_size is None:
        raise vio.ConfigError("file sources need --raw-size WxH (raw 8-bit luma stream)")
    try:
        w, h = (int(v) for v in args.raw_size.lower().split("x"))
    except ValueError as exc:
        raise vio.ConfigError("--raw-size must look like 1920x1080") from exc
    return vio.FrameSource(
        kind="raw_luma_stream", path=str(path), width=w, height=h, iframe_index_file=args.iframes
    )


def _load_pipeline_config(args) -> PipelineConfig:
    cfg = vio.load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "threads", None):
        cfg = replace(cfg, search=replace(cfg.search, workers=args.threads))
    return cfg


def _cmd_fingerprint_build(args) -> int:
    src = _frame_source(args)
    frames = vio.load_frames(src)
    if args.count:
        frames = vio.select_frames(frames, args.count, exclude_first_iframe=False)
    residuals = [extract_noise(f, denoise_strength=args.denoise) for f in frames]
    fp = estimate_fingerprint(residuals, frames, camera_label=args.label)
    vio.save_fingerprint(fp, args.out)
    _emit(
        {
            "schema_version": "1",
            "fingerprint": {
                "path": str(args.out),
                "width": fp.width,
                "height": fp.height,
                "n_sources": fp.n_sources,
                "label": fp.camera_label,
            },
        }
    )
    return EXIT_MATCH


def _cmd_triage(args) -> int:
    from .pipeline import stb_chk, stb_lite

    cfg = _load_pipeline_config(args)
    src = _frame_source(args)
    frames = vio.load_frames(src)
    frames = vio.select_frames(frames, max(cfg.n_frames, 6), exclude_first_iframe=True)
    ref = vio.load_fingerprint(args.ref)
    payload: dict = {"schema_version": "1"}
    if len(frames) < 6:
        payload["stb_chk"] = None
        stabilized = True
        payload["flags"] = ["short_video_stb_chk_skipped"]
    else:
        chk = stb_chk(frames, cfg)
        payload["stb_chk"] = {"pce": chk.pce, "stabilized": chk.stabilized}
        stabilized = chk.stabilized
    if not stabilized:
        payload["triage"] = "unstabilized"
    else:
        lite = stb_lite(frames, ref, cfg)
        payload["stb_lite"] = {
            "aggregate_pce": lite.aggregate_pce,
            "weakly_stabilized": lite.weakly_stabilized,
        }
        payload["triage"] = (
            "weakly_stabilized" if lite.weakly_stabilized else "strongly_stabilized"
        )
    _emit(payload, getattr(args, "report", None))
    return EXIT_MATCH


def _cmd_verify(args) -> int:
    cfg = _load_pipeline_config(args)
    src = _frame_source(args)
    frames = vio.load_frames(src)
    frames = vio.select_frames(frames, cfg.n_frames, exclude_first_iframe=True)
    ref = vio.load_fingerprint(args.ref)
    t0 = time.perf_counter()
    verdict = verify_video(frames, ref, cfg)
    timings = {"verify_seconds": time.perf_counter() - t0}
    report = build_report(verdict, cfg, timings=timings)
    text = report_json(report)
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)
    return EXIT_MATCH if verdict.decision == "match" else EXIT_NO_MATCH


def _cmd_synth_generate(args) -> int:
    from PIL import Image

    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    frame_size = args.frame_size
    block = args.block_size
    rng = np.random.default_rng(args.seed)
    manifest = []
    for v in range(args.videos):
        sensor = make_sensor((frame_size, frame_size), strength=args.strength, seed=int(rng.integers(2**31)))
        video = make_video(
            sensor,
            kind=args.kind,
            n_frames=args.frames,
            seed=int(rng.integers(2**31)),
            block_size=block,
            noise_sigma=args.noise_sigma,
            shift_max=args.shift_max,
        )
        vdir = out_root / f"video_{v:03d}"
        vdir.mkdir(exist_ok=True)
        for f in video.frames:
            arr = np.clip(np.rint(f.pixels), 0, 255).astype(np.uint8)
            Image.fromarray(arr, mode="L").save(vdir / f"frame_{f.frame_index:04d}.png")
        (vdir / "iframes.txt").write_text(
            "\n".join(str(f.frame_index) for f in video.frames if f.is_iframe) + "\n"
        )
        (vdir / "truth.json").write_text(video.truth.to_json() + "\n")
        residuals = [extract_noise(f) for f in video.frames]
        fp = estimate_fingerprint(residuals, video.frames, camera_label=f"synth_{v:03d}")
        ref = np.zeros(sensor.shape, dtype=np.float32)
        k = sensor.k / sensor.k.std()
        vio.save_fingerprint(
            type(fp)(values=k.astype(np.float32), n_sources=1, camera_label=f"synth_{v:03d}"),
            vdir / "reference.prnu",
        )
        manifest.append({"video": vdir.name, "kind": args.kind, "frames": args.frames})
    _emit({"schema_version": "1", "generated": manifest, "out": str(out_root)})
    return EXIT_MATCH


def _cmd_synth_oracle(args) -> int:
    from .synth import central_block_geometry

    sensor = make_sensor((args.frame_size, args.frame_size), strength=0.08, seed=args.seed)
    video = make_video(
        sensor,
        kind="strong",
        n_frames=1,
        seed=args.seed + 1,
        block_size=args.block_size,
        noise_sigma=0.0,
        warp_halfwidth=args.window,
        shift_max=2,
    )
    res = extract_noise(video.frames[0])
    from .pipeline import crop_center

    block, geom = crop_center(res.values, args.block_size)
    ref = sensor.k.astype(np.float32)
    cfg = SearchConfig(
        level_steps=(1,),
        candidates_per_level=(1,),
        shift_range=args.shift_range,
        variant="full",
    )
    top, trace = hgs_search(block, ref, geom, cfg)
    oracle = exhaustive_small_search(
        block, ref, geom, window=args.window, shift_range=args.shift_range
    )
    payload = {
        "schema_version": "1",
        "truth": json.loads(video.truth.to_json())["frames"][0],
        "hgs_top1": top[0].to_dict(),
        "oracle": oracle.to_dict(),
        "agree": top[0].warp.components == oracle.warp.components,
        "transforms_evaluated": trace.transforms_evaluated,
    }
    _emit(payload)
    return EXIT_MATCH


def _cmd_synth_sweep(args) -> int:
    data = json.loads(Path(args.runs).read_text())
    runs = [
        LabeledRun(pce=r["pce"], sub_pces=tuple(r["sub_pces"]), matched=bool(r["matched"]))
        for r in data["runs"]
    ]
    result = sweep_validation_params(runs)
    payload = {
        "schema_version": "1",
        "params": {
            "pce_vld": result.params.pce_vld,
            "n_sub": result.params.n_sub,
            "pce_sub": result.params.pce_sub,
        },
        "feasible": result.feasible,
        "matched_validated": result.matched_validated,
        "grid_points": result.grid_points,
    }
    _emit(payload, getattr(args, "out", None))
    return EXIT_MATCH


def _cmd_synth_roc(args) -> int:
    matched = json.loads(Path(args.matched).read_text())
    mismatched = json.loads(Path(args.mismatched).read_text())
    table = roc_experiment(matched, mismatched)
    if args.out and str(args.out).endswith(".csv"):
        table.to_csv(args.out)
        print(json.dumps({"schema_version": "1", "written": str(args.out)}, sort_keys=True))
    else:
        _emit(json.loads(table.to_json()), getattr(args, "out", None))
    return EXIT_MATCH


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="videoprnu", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    fp = sub.add_parser("fingerprint", help="fingerprint operations")
    fp_sub = fp.add_subparsers(dest="fp_command", required=True)
    b = fp_sub.add_parser("build", help="estimate and persist a camera fingerprint")
    b.add_argument("--frames", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--label", default="")
    b.add_argument("--count", type=int, default=0, help="frames to use (0 = all)")
    b.add_argument("--denoise", type=float, default=3.0)
    b.add_argument("--raw-size", default=None)
    b.add_argument("--iframes", default=None)
    b.set_defaults(func=_cmd_fingerprint_build)

    t = sub.add_parser("triage", help="stabilization triage against a reference")
    t.add_argument("--frames", required=True)
    t.add_argument("--ref", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--report", default=None)
    t.add_argument("--raw-size", default=None)
    t.add_argument("--iframes", default=None)
    t.add_argument("--threads", type=int, default=None)
    t.set_defaults(func=_cmd_triage)

    v = sub.add_parser("verify", help="full verification pipeline")
    v.add_argument("--frames", required=True)
    v.add_argument("--ref", required=True)
    v.add_argument("--config", default=None)
    v.add_argument("--report", default=None)
    v.add_argument("--raw-size", default=None)
    v.add_argument("--iframes", default=None)
    v.add_argument("--threads", type=int, default=None)
    v.set_defaults(func=_cmd_verify)

    s = sub.add_parser("synth", help="synthetic bench")
    s_sub = s.add_subparsers(dest="synth_command", required=True)

    g = s_sub.add_parser("generate", help="generate synthetic stabilized videos")
    g.add_argument("--out", required=True)
    g.add_argument("--kind", choices=["unstabilized", "weak", "strong"], default="strong")
    g.add_argument("--videos", type=int, default=1)
    g.add_argument("--frames", type=int, default=6)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frame-size", type=int, default=256)
    g.add_argument("--block-size", type=int, default=128)
    g.add_argument("--strength", type=float, default=0.08)
    g.add_argument("--noise-sigma", type=float, default=2.0)
    g.add_argument("--shift-max", type=int, default=8)
    g.set_defaults(func=_cmd_synth_generate)

    o = s_sub.add_parser("oracle", help="exhaustive-vs-HGS agreement check")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--window", type=int, default=1)
    o.add_argument("--frame-size", type=int, default=192)
    o.add_argument("--block-size", type=int, default=96)
    o.add_argument("--shift-range", type=int, default=8)
    o.set_defaults(func=_cmd_synth_oracle)

    w = s_sub.add_parser("sweep", help="validation-parameter sweep over labeled runs")
    w.add_argument("--runs", required=True)
    w.add_argument("--out", default=None)
    w.set_defaults(func=_cmd_synth_sweep)

    r = s_sub.add_parser("roc", help="ROC table from matched/mismatched score files")
    r.add_argument("--matched", required=True)
    r.add_argument("--mismatched", required=True)
    r.add_argument("--out", default=None)
    r.set_defaults(func=_cmd_synth_roc)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (vio.VideoPrnuError, ValueError, OSError) as exc:
        payload = _error_payload(exc)
        report = getattr(args, "report", None)
        try:
            _emit(payload, report)
        except OSError:
            print(json.dumps(payload, sort_keys=True))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
