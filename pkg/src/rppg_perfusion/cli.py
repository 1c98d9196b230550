"""Command-line entry point.

Exit codes: 0 success, 2 input error, 3 analysis error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__
from .core import AnalysisConfig
from .errors import AnalysisError, InputError
from .export import read_map, write_json, write_map, write_timeline_csv
from .pad import (
    classify_samples,
    extract_feature_table,
    read_feature_csv,
    svm_train,
    video_verdict,
    write_feature_csv,
)
from .render import plot_timeline, save_heatmap
from .scales import (
    MAP_NAMES,
    REGION_NAMES,
    analyze_global,
    analyze_local,
    analyze_regions,
    reperfusion_event,
)
from .svm import SvmModel
from .synth import SynthSpec, write_synthetic
from .video import downscale_mask, load_frame_sequence, load_landmarks, load_mask

log = logging.getLogger("rppg_perfusion")

EXIT_OK, EXIT_INPUT, EXIT_ANALYSIS = 0, 2, 3


def _load_config(path) -> AnalysisConfig:
    if path is None:
        return AnalysisConfig()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    return AnalysisConfig.from_dict(data)


def _external_hz(bpm):
    return None if bpm is None else bpm / 60.0


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _timeline_summary(timeline) -> dict:
    bpm = timeline.column("bpm")
    snr = timeline.column("snr_db")
    rho = timeline.column("rho_ref")
    return {
        "windows": len(timeline),
        "median_bpm": float(np.nanmedian(bpm)) if bpm.size else None,
        "mean_snr_db": float(np.nanmean(snr)) if np.isfinite(snr).any() else None,
        "mean_rho_ref": float(np.nanmean(rho)) if np.isfinite(rho).any() else None,
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_analyze_global(args) -> int:
    cfg = _load_config(args.config)
    seq = load_frame_sequence(args.input)
    roi = load_mask(args.roi, (seq.height, seq.width))
    ref = load_mask(args.ref, (seq.height, seq.width)) if args.ref else None
    roi_tl, ref_tl = analyze_global(
        seq, roi, ref, cfg, _external_hz(args.external_hr),
        register=args.register, skin_seg=args.skin_seg,
    )
    out = _out_dir(args.out)
    write_timeline_csv(out / "roi_timeline.csv", roi_tl.entries)
    summary = {"config": cfg.to_dict(), "fps": seq.fs, "frames": len(seq), "roi": _timeline_summary(roi_tl)}
    if ref_tl is not None:
        write_timeline_csv(out / "reference_timeline.csv", ref_tl.entries)
        summary["reference"] = _timeline_summary(ref_tl)
    t_event, pi_norm = reperfusion_event(roi_tl)
    t = roi_tl.column("t_start")
    summary["pi_peak_t_start"] = t_event
    summary["pi_normalized"] = pi_norm.tolist()
    plot_timeline(out / "pi_normalized.png", t, pi_norm, "normalized perfusion index")
    write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_analyze_regions(args) -> int:
    cfg = _load_config(args.config)
    seq = load_frame_sequence(args.input)
    landmarks = load_landmarks(args.landmarks)
    result = analyze_regions(seq, landmarks, cfg, register=args.register, skin_seg=args.skin_seg)
    out = _out_dir(args.out)
    for name in REGION_NAMES:
        write_timeline_csv(out / f"region_{name}.csv", result.timelines[name].entries)
    write_json(
        out / "summary.json",
        {
            "config": cfg.to_dict(),
            "reference_region": result.reference,
            "regions": {n: _timeline_summary(result.timelines[n]) for n in REGION_NAMES},
        },
    )
    return EXIT_OK


def cmd_analyze_local(args) -> int:
    cfg = _load_config(args.config)
    seq = load_frame_sequence(args.input)
    ref = load_mask(args.ref, (seq.height, seq.width)) if args.ref else None
    local = analyze_local(
        seq, ref, _external_hz(args.external_hr), cfg,
        target_px=args.target_px, workers=args.workers, register=args.register,
    )
    out = _out_dir(args.out)
    maps_dir = _out_dir(out / "maps")
    for i, ws in enumerate(local.windows):
        for name in MAP_NAMES:
            write_map(maps_dir / f"window_{i:04d}_{name}.map", ws.maps[name], name)
    contour = None
    if args.roi:
        roi = load_mask(args.roi, (seq.height, seq.width))
        contour = downscale_mask(roi, local.level)
    summary = {"config": cfg.to_dict(), "pyramid_level": local.level, "windows": len(local.windows)}
    if local.windows:
        summary["map_shape"] = [local.windows[0].height, local.windows[0].width]
        stack = {n: np.stack([w.maps[n] for w in local.windows]) for n in MAP_NAMES}
        summary["median_bpm"] = float(np.nanmedian(stack["bpm"])) if np.isfinite(stack["bpm"]).any() else None
        for name in MAP_NAMES:
            defined = np.isfinite(stack[name]).all(axis=0)
            mean_map = np.full(defined.shape, np.nan)
            mean_map[defined] = stack[name][:, defined].mean(axis=0)
            write_map(out / f"mean_{name}.map", mean_map, name)
            save_heatmap(out / f"mean_{name}.png", mean_map, contour_mask=contour, scale=args.scale)
    write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        data = json.loads(Path(args.spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read spec {args.spec}: {exc}") from exc
    if args.seed is not None:
        data["seed"] = args.seed
    spec = SynthSpec.from_dict(data)
    write_synthetic(spec, _out_dir(args.out), workers=args.workers)
    return EXIT_OK


def cmd_pad_features(args) -> int:
    cfg = _load_config(args.config)
    seq = load_frame_sequence(args.input)
    landmarks = load_landmarks(args.landmarks)
    samples = extract_feature_table(
        seq, landmarks, cfg, args.label, args.subject, args.video_id or "",
        register=args.register, skin_seg=args.skin_seg,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_feature_csv(out, samples)
    return EXIT_OK


def _model_paths(out) -> tuple[Path, Path]:
    out = Path(out)
    if out.suffix == ".json":
        out.parent.mkdir(parents=True, exist_ok=True)
        return out, out.with_name(out.stem + "_cv.json")
    out.mkdir(parents=True, exist_ok=True)
    return out / "model.json", out / "cv_report.json"


def cmd_pad_train(args) -> int:
    samples = read_feature_csv(args.features)
    model, report = svm_train(samples, folds=args.folds)
    model_path, report_path = _model_paths(args.out)
    model.save(model_path)
    write_json(report_path, {"samples": len(samples), "folds": args.folds, **report.to_dict()})
    print(f"mean CV accuracy {report.mean_accuracy:.4f} over {args.folds} folds")
    return EXIT_OK


def cmd_pad_classify(args) -> int:
    model = SvmModel.load(args.model)
    samples = read_feature_csv(args.features)
    labels, decision = classify_samples(model, samples)
    by_video = defaultdict(list)
    for s, lab in zip(samples, labels):
        by_video[s.video_id or s.subject_id].append(int(lab))
    verdicts = {k: video_verdict(v) for k, v in sorted(by_video.items())}
    lines = ["subject_id,region,window,label,decision"]
    for s, lab, dec in zip(samples, labels, decision):
        lines.append(f"{s.subject_id},{s.region},{s.window_index},{int(lab)},{dec:.12g}")
    if args.out:
        out = _out_dir(args.out)
        (out / "predictions.csv").write_text("\n".join(lines) + "\n")
        write_json(out / "verdicts.json", {"video_verdicts": verdicts, "attack_fraction": float(np.mean(labels))})
    else:
        print("\n".join(lines))
    for key, v in verdicts.items():
        log.info("%s: %s", key, "attack" if v else "no attack")
    return EXIT_OK


def cmd_render(args) -> int:
    matrix, name = read_map(args.input)
    contour = load_mask(args.contour, matrix.shape) if args.contour else None
    value_range = tuple(args.range) if args.range else None
    out = Path(args.out)
    if out.suffix.lower() != ".png":
        out = _out_dir(out) / f"{Path(args.input).stem}.png"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    save_heatmap(out, matrix, value_range=value_range, colormap=args.colormap,
                 contour_mask=contour, scale=args.scale)
    log.info("rendered %s map to %s", name, out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rppg-perfusion", description="Camera-based perfusion analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, roi=False, ref=False, landmarks=False):
        p.add_argument("--input", required=True, help="frame directory or raw stream")
        if roi:
            p.add_argument("--roi", required=roi == "required", help="ROI mask PNG")
        if ref:
            p.add_argument("--ref", help="reference region mask PNG")
            p.add_argument("--external-hr", type=float, metavar="BPM", help="heart rate from an external sensor")
        if landmarks:
            p.add_argument("--landmarks", required=True, help="68-point landmark CSV")
        p.add_argument("--config", help="analysis config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--register", action="store_true", help="compensate translational motion")
        p.add_argument("--seed", type=int, help="accepted for symmetry; the analysis is deterministic")

    p = sub.add_parser("analyze-global", help="metrics timeline of one ROI")
    common(p, roi="required", ref=True)
    p.add_argument("--skin-seg", action="store_true", help="restrict the ROI to skin-coloured pixels")
    p.set_defaults(func=cmd_analyze_global)

    p = sub.add_parser("analyze-regions", help="timelines of five facial regions")
    common(p, landmarks=True)
    p.add_argument("--skin-seg", action="store_true")
    p.set_defaults(func=cmd_analyze_regions)

    p = sub.add_parser("analyze-local", help="per-pixel perfusion maps")
    common(p, roi=True, ref=True)
    p.add_argument("--target-px", type=int, default=10000, help="pixel count the pyramid level aims for")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--scale", type=int, default=4, help="pixel replication factor for PNG maps")
    p.set_defaults(func=cmd_analyze_local)

    p = sub.add_parser("synth", help="generate a synthetic pulsatile video")
    p.add_argument("--spec", required=True, help="synthetic spec JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pad-features", help="per-region PAD feature table of one video")
    common(p, landmarks=True)
    p.add_argument("--skin-seg", action="store_true")
    p.add_argument("--label", type=int, choices=(0, 1), required=True, help="1 = attack")
    p.add_argument("--subject", required=True, help="subject identifier")
    p.add_argument("--video-id", help="video identifier used for the video verdict")
    p.set_defaults(func=cmd_pad_features)

    p = sub.add_parser("pad-train", help="train the attack classifier with subject-disjoint CV")
    p.add_argument("--features", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--out", required=True, help="model JSON path or output directory")
    p.set_defaults(func=cmd_pad_train)

    p = sub.add_parser("pad-classify", help="classify feature rows with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", help="output directory (default: print to stdout)")
    p.set_defaults(func=cmd_pad_classify)

    p = sub.add_parser("render", help="render a map file as a PNG heatmap")
    p.add_argument("--input", required=True, help=".map file")
    p.add_argument("--out", required=True, help="PNG path or output directory")
    p.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"), help="fixed colour range")
    p.add_argument("--colormap", default="bwr")
    p.add_argument("--contour", help="mask PNG whose outline is drawn over the map")
    p.add_argument("--scale", type=int, default=1)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AnalysisError as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
