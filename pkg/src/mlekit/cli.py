"""Command-line entry point: ``mlekit <subcommand> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 1 runtime failure.
All files are written below ``--out-dir``; identical inputs and seed give
identical bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- helpers


def _out(args, name: str) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _floats(text: str | None):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated number list, got {text!r}") from None


def _load_plane(path):
    from . import cubeio

    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".png":
        return cubeio.read_png16(p)
    if suffix == ".pgm":
        return cubeio.read_pgm16(p)
    planes, _ = cubeio.read_cube(p)
    return planes[0]


def _load_cube_meta(path):
    from . import cubeio

    planes, meta = cubeio.read_cube(path)
    meta = meta or {}
    if meta.get("mask_plane"):
        mask = planes[-1] > 0.5
        planes = planes[:-1]
    else:
        mask = None
    return planes, meta, mask


def _spectral_cube(path):
    from .imgcore import SpectralCube

    planes, meta, mask = _load_cube_meta(path)
    if "wavelengths_nm" not in meta:
        raise UsageError(f"{path} carries no wavelengths_nm metadata")
    return SpectralCube(planes, meta["wavelengths_nm"], mask), meta


def _round(v, nd=6):
    import numpy as np

    if isinstance(v, dict):
        return {k: _round(x, nd) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_round(x, nd) for x in v]
    if isinstance(v, (float, np.floating)):
        return round(float(v), nd)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _emit(args, summary: dict) -> None:
    summary = _round(summary)
    if args.format == "json":
        print(json.dumps(summary, sort_keys=True))
    else:
        for k in sorted(summary):
            print(f"{k}: {summary[k]}")
    _out(args, "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")


def _config(args) -> dict:
    if getattr(args, "config", None):
        try:
            return json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
    return {}


def _map_frames(args, fn, items):
    """Per-frame work, bounded by --threads; results keep input order."""
    if args.threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=args.threads) as ex:
        return list(ex.map(fn, items))


# ----------------------------------------------------------------- commands


def cmd_preprocess(args) -> dict:
    import numpy as np

    from . import cubeio
    from .imgcore import Field, gaussian_smooth, register_affine, subtract_dark, warp
    from .spectral import normalize_reflectance

    cfg = _config(args)
    raw, raw_meta, _ = _load_cube_meta(args.raw)
    white, white_meta, _ = _load_cube_meta(args.white)
    wls = raw_meta.get("wavelengths_nm")
    if wls is None:
        raise UsageError("raw cube lacks wavelengths_nm metadata")
    if white_meta.get("wavelengths_nm") not in (None, wls):
        raise UsageError("raw and white cubes cover different wavelengths")
    pw = _floats(args.pulse_widths) or raw_meta.get("pulse_widths_ms") or cfg.get("pulse_widths_ms")
    if pw is None:
        raise UsageError("pulse widths missing (flag, cube metadata or config)")
    pw_white = _floats(args.white_pulse_widths) or white_meta.get("pulse_widths_ms") or pw
    sigma = float(cfg.get("smooth_sigma", 0.5))
    ksize = int(cfg.get("smooth_kernel", 5))

    def prep(stack):
        out = []
        for p in stack:
            f = Field(np.clip(p, 0, 1))
            if args.dark:
                f = subtract_dark(f, Field(_load_plane(args.dark)))
            out.append(gaussian_smooth(f, ksize, sigma).pixels)
        return np.stack(out)

    raw_s, white_s = prep(raw), prep(white)
    registered = 0
    if args.register:
        ref_nm = float(cfg.get("reference_nm", 562.0))
        ref = int(np.argmin(np.abs(np.asarray(wls) - ref_nm)))
        for i in range(len(raw_s)):
            if i == ref:
                continue
            reg = register_affine(Field(raw_s[i]), Field(raw_s[ref]))
            raw_s[i] = warp(Field(raw_s[i]), reg.transform).pixels
            registered += int(reg.converged)
    cube = normalize_reflectance(raw_s, white_s, wls, pw, pw_white)
    cubeio.save_spectral_cube(_out(args, "reflectance.mlec"), cube)
    return {"command": "preprocess", "planes": len(wls), "valid_fraction": float(cube.mask.mean()),
            "registered": registered, "outputs": ["reflectance.mlec"]}


def cmd_sto2(args) -> dict:
    import numpy as np

    from . import cubeio
    from .spectral import load_extinction, square_roi, sto2_map

    cube, _ = _spectral_cube(args.cube)
    table = load_extinction(args.extinction)
    maps = sto2_map(cube, table, rescale=not args.no_rescale)
    planes = np.stack([maps.sto2, maps.thb_L, maps.offset, maps.mask.astype(float)])
    cubeio.write_cube(_out(args, "sto2.mlec"), planes,
                      {"kind": "chromophores", "planes": ["sto2", "thb", "offset", "mask"]})
    cubeio.write_rgb8(_out(args, "sto2.png"), cubeio.false_color(maps.sto2, 0.0, 1.0, maps.mask))
    vals = maps.sto2[maps.mask]
    out = {"command": "sto2", "valid_fraction": float(maps.mask.mean()),
           "sto2_mean": float(vals.mean()) if vals.size else None,
           "sto2_std": float(vals.std()) if vals.size else None, "outputs": ["sto2.mlec", "sto2.png"]}
    if args.roi:
        r, c, size = (int(v) for v in _floats(args.roi))
        sel = np.zeros(maps.mask.shape, bool)
        sel[square_roi(r, c, size)] = True
        v = maps.sto2[sel & maps.mask]
        out["roi_mean"] = float(v.mean()) if v.size else None
        out["roi_std"] = float(v.std()) if v.size else None
    return out


def cmd_lsci(args) -> dict:
    import numpy as np

    from . import cubeio
    from .imgcore import Field
    from .lsci import FlowMap, display_median, flow_from_contrast, rolling_average, speckle_contrast

    frames, _, _ = _load_cube_meta(args.frames)
    flows = _map_frames(args, lambda p: flow_from_contrast(speckle_contrast(Field(p), args.window)), list(frames))
    if args.color:
        colors, cmeta, _ = _load_cube_meta(args.color)
        if len(colors) != len(flows):
            raise UsageError("colour and speckle sequences differ in length")
        averaged = rolling_average(flows, [Field(c) for c in colors], window=args.temporal)
    elif args.temporal > 1:
        averaged = []
        for i in range(len(flows)):
            lo = max(0, min(i - args.temporal // 2, len(flows) - args.temporal))
            chunk = flows[lo : lo + args.temporal]
            mask = np.logical_and.reduce([f.mask for f in chunk])
            v = np.where(mask, np.mean([f.v for f in chunk], axis=0), 0.0)
            averaged.append(FlowMap(v, len(chunk), mask))
    else:
        averaged = flows
    v = np.stack([f.v for f in averaged])
    cubeio.write_cube(_out(args, "flow.mlec"), v, {"kind": "flow", "window": args.window, "temporal": args.temporal})
    outputs = ["flow.mlec", "flow.png"]
    if args.roi_a or args.roi_b:
        if not (args.roi_a and args.roi_b and args.color):
            raise UsageError("RMS contrast needs --roi-a, --roi-b and --color")
        _rms_curve(args, flows, [Field(c) for c in colors], _load_plane(args.roi_a) > 0.5,
                   _load_plane(args.roi_b) > 0.5)
        outputs.append("rms_vs_window.csv")
    shown = averaged[len(averaged) // 2]
    disp = display_median(shown.v) if args.median_display else shown.v
    lo, hi = (np.percentile(disp[shown.mask], [1, 99]) if shown.mask.any() else (0.0, 1.0))
    cubeio.write_rgb8(_out(args, "flow.png"), cubeio.false_color(disp, lo, hi, shown.mask))
    return {"command": "lsci", "frames": len(flows), "mean_flow": float(v.mean()),
            "dropped": int(sum(f.dropped for f in averaged)), "outputs": outputs}


def _rms_curve(args, flows, colors, roi_a, roi_b) -> None:
    """RMS contrast between two ROIs for centred windows of 1..--temporal frames."""
    from .lsci import register_to_reference, rms_contrast, temporal_average

    centre = len(flows) // 2
    regs = register_to_reference(colors, centre)
    lines = ["window,frames_used,rms_contrast"]
    for n in range(1, min(args.temporal, len(flows)) + 1):
        lo = max(0, min(centre - (n - 1) // 2, len(flows) - n))
        hi = lo + n
        avg = temporal_average(flows[lo:hi], colors[lo:hi], reference=centre - lo, registrations=regs[lo:hi])
        rms = rms_contrast(avg.v, roi_a & avg.mask, roi_b & avg.mask, avg.mask)
        lines.append(f"{n},{avg.frames_averaged},{rms:.6f}")
    _out(args, "rms_vs_window.csv").write_text("\n".join(lines) + "\n")


def cmd_pse(args) -> dict:
    import numpy as np

    from . import cubeio
    from .pse import LightRig, integrate_normals, highpass_normals, normals_to_rgb8, surface_pipeline

    src = Path(args.inp)
    images_path = src / "images.mlec" if src.is_dir() else src
    if not images_path.exists():
        raise UsageError(f"no directional images at {images_path}")
    images, _, _ = _load_cube_meta(images_path)
    rig_path = args.rig or (src / "rig.json" if src.is_dir() and (src / "rig.json").exists() else None)
    rig = LightRig.from_json(rig_path)
    sigma = None if args.no_highpass else args.sigma
    sf = surface_pipeline(list(images), rig, highpass_sigma=sigma, inpaint=not args.no_inpaint, method=args.solver)
    cubeio.write_cube(_out(args, "height.mlec"), sf.height, {"kind": "height", "highpass_sigma": sigma})
    cubeio.write_cube(_out(args, "normals.mlec"), np.moveaxis(sf.normal, -1, 0), {"kind": "normals"})
    cubeio.write_rgb8(_out(args, "normals.png"), normals_to_rgb8(sf.normal))
    out = {"command": "pse", "lights": len(rig.directions), "valid_fraction": float(sf.mask.mean()),
           "flagged": int(sf.flagged.sum()), "outputs": ["height.mlec", "normals.mlec", "normals.png"]}
    truth = src / "height_truth.mlec" if src.is_dir() else None
    if truth is not None and truth.exists():
        from .pse import SurfaceField, height_to_normals

        th, _, _ = _load_cube_meta(truth)
        ref = SurfaceField(np.ones_like(th[0]), height_to_normals(th[0]), np.ones(th[0].shape, bool))
        if sigma is not None:
            ref = highpass_normals(ref, sigma)
        ref = integrate_normals(ref, args.solver)
        out["height_mae_vs_truth"] = float(np.abs(ref.height - sf.height)[sf.mask].mean())
    return out


def _response_for(args, mode, cube):
    from .colorsim import load_response, nbi_response

    if args.response:
        return load_response(args.response)
    return nbi_response() if mode == "nbi" else load_response()


def cmd_render(args) -> dict:
    import numpy as np

    from . import cubeio
    from .colorsim import normalize_display, render_color, render_nbi

    cube, _ = _spectral_cube(args.cube)
    ref = None
    if args.reference:
        from PIL import Image

        with Image.open(args.reference) as im:
            ref = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    if args.mode == "nbi":
        rgb = render_nbi(cube, _response_for(args, "nbi", cube), reference=ref)
    else:
        if args.mode == "se" and not args.response:
            raise UsageError("render se needs --response (an optimize-se output)")
        rgb = render_color(cube, _response_for(args, args.mode, cube), reference=ref)
    shown = np.clip(normalize_display(rgb, "image_mean"), 0, 1)
    cubeio.write_cube(_out(args, f"{args.mode}.mlec"), np.moveaxis(rgb, -1, 0), {"kind": "rgb_linear"})
    cubeio.write_rgb8(_out(args, f"{args.mode}.png"), np.floor(shown * 255 + 0.5).astype(np.uint8))
    return {"command": "render", "mode": args.mode, "mean_rgb": rgb.reshape(-1, 3).mean(axis=0).tolist(),
            "outputs": [f"{args.mode}.mlec", f"{args.mode}.png"]}


def cmd_optimize_se(args) -> dict:
    import csv

    from .colorsim import load_response, optimize_se

    cube, _ = _spectral_cube(args.cube)
    normal = _load_plane(args.normal_mask) > 0.5
    lesion = _load_plane(args.lesion_mask) > 0.5
    init = load_response(args.response) if args.response else load_response()
    res = optimize_se(cube, normal, lesion, n_pixels=args.pixels, init=init, lr=args.lr, iters=args.iters,
                      seed=args.seed)
    res.response.to_csv(_out(args, "se_response.csv"))
    with open(_out(args, "trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "delta_e00"])
        for i, v in enumerate(res.trace):
            w.writerow([i, f"{v:.6f}"])
    if res.aborted:
        raise RuntimeError("objective became non-finite; trace written")
    return {"command": "optimize-se", "initial_de00": res.initial, "final_de00": float(res.trace[-1]),
            "iterations": len(res.trace) - 1, "outputs": ["se_response.csv", "trace.csv"]}


def cmd_acqsim(args) -> dict:
    from .acqsim import (
        LoopConfig,
        converged_from,
        hexdump,
        make_scene,
        packet_stream,
        run_acquisition_loop,
        simulate_sync_delay,
    )

    text = Path(args.config).read_text() if args.config else "{}"
    try:
        cfg = LoopConfig.from_json(text)
        if args.frames is not None:
            cfg.frames = args.frames
        if args.seed_given:
            cfg.seed = args.seed
        cfg.validate()
        make_scene(cfg.scene)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad loop config: {exc}") from None
    res = run_acquisition_loop(cfg)
    _out(args, "acq_log.csv").write_text(res.to_csv())
    _out(args, "config.json").write_text(cfg.to_json() + "\n")
    outputs = ["acq_log.csv", "config.json"]
    if args.hexdump:
        _out(args, "packets.hex").write_text(hexdump(packet_stream(res)) + "\n")
        outputs.append("packets.hex")
    conv = converged_from(res)
    return {
        "command": "acqsim",
        "frames": len(res.frames),
        "processed": len(res.processed),
        "dropped": sum(r.dropped for r in res.frames),
        "events": len(res.events),
        "converged_frame": conv,
        "converged_update": None if conv is None else res.update_index(conv),
        "sync_delay": simulate_sync_delay(cfg.buffer_depth, cfg.latency),
        "outputs": outputs,
    }


def cmd_synth(args) -> dict:

    from . import cubeio
    from .synthlab import PhantomSpec, generate

    params = json.loads(args.params) if args.params else {}
    spec = PhantomSpec(args.kind, args.seed, params)
    data = generate(spec)
    outputs = ["phantom.json"]
    _out(args, "phantom.json").write_text(spec.to_json() + "\n")
    if spec.kind == "speckle_flow":
        cubeio.write_cube(_out(args, "frames.mlec"), data["frames"], {"kind": "speckle"})
        cubeio.write_cube(_out(args, "channel_mask.mlec"), data["channel_mask"].astype(float), {"kind": "mask"})
        outputs += ["frames.mlec", "channel_mask.mlec"]
    elif spec.kind == "vessel_sequence":
        cubeio.write_cube(_out(args, "frames.mlec"), data["frames"], {"kind": "speckle"})
        cubeio.write_cube(_out(args, "color.mlec"), data["color"], {"kind": "white_light"})
        for name in ("vessel_mask", "background_mask"):
            cubeio.write_cube(_out(args, f"{name}.mlec"), data[name].astype(float), {"kind": "mask"})
        outputs += ["frames.mlec", "color.mlec", "vessel_mask.mlec", "background_mask.mlec"]
    elif spec.kind == "lambertian_surface":
        cubeio.write_cube(_out(args, "images.mlec"), data["images"], {"kind": "directional"})
        cubeio.write_cube(_out(args, "height_truth.mlec"), data["height"], {"kind": "height"})
        _out(args, "rig.json").write_text(data["rig"].to_json() + "\n")
        outputs += ["images.mlec", "height_truth.mlec", "rig.json"]
    elif spec.kind == "spectral_scene":
        cubeio.save_spectral_cube(_out(args, "cube.mlec"), data["cube"])
        cubeio.write_cube(_out(args, "sto2_truth.mlec"), data["sto2"], {"kind": "sto2"})
        outputs += ["cube.mlec", "sto2_truth.mlec"]
    else:
        cubeio.save_spectral_cube(_out(args, "cube.mlec"), data["cube"])
        rois = {k: [v[0].start, v[0].stop, v[1].start, v[1].stop] for k, v in data["rois"].items()}
        _out(args, "rois.json").write_text(json.dumps(rois, indent=2, sort_keys=True) + "\n")
        outputs += ["cube.mlec", "rois.json"]
    return {"command": "synth", "kind": spec.kind, "seed": spec.seed, "outputs": outputs}


def cmd_stats(args) -> dict:
    import csv

    import numpy as np

    from .statkit import ancova_interaction, compare_family, family_csv, read_long_table

    if args.ancova:
        with open(args.ancova, newline="") as fh:
            rows = list(csv.DictReader(fh))
        try:
            y = np.array([float(r["contrast"]) for r in rows])
            x = np.array([float(r["velocity"]) for r in rows])
            g = np.array([r["exposure"] for r in rows])
        except KeyError as exc:
            raise UsageError(f"ANCOVA table needs contrast,velocity,exposure columns ({exc})") from None
        r = ancova_interaction(y, x, g)
        return {"command": "stats", "ancova": {"F": r.f, "df_num": r.df_num, "df_den": r.df_den, "p": r.p,
                                               "r2": r.r2}}
    if not args.table:
        raise UsageError("stats needs --table or --ancova")
    table = read_long_table(args.table)
    baseline = args.baseline or args.family
    if baseline is None:
        raise UsageError("name the baseline group with --family or --baseline")
    if args.comparisons:
        comps = [c for c in args.comparisons.split(",") if c]
    else:
        prefix = baseline.split("_")[0] + "_"
        comps = sorted(g for g in table if g != baseline and not g.startswith(prefix))
    rows = compare_family(table, baseline, comps, seed=args.seed)
    name = f"{baseline}_family.csv"
    _out(args, name).write_text(family_csv(rows))
    return {"command": "stats", "baseline": baseline, "comparisons": comps,
            "p_adj": [r["p_adj"] for r in rows], "outputs": [name]}


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    from .synthlab import KINDS

    def global_options(default):
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=default, help="random seed (default 0)")
        g.add_argument("--threads", type=int, default=default, help="worker threads for per-frame work")
        g.add_argument("--out-dir", default=default, help="directory for all outputs (default ./mlekit_out)")
        g.add_argument("--format", choices=("text", "json"), default=default, help="summary format on stdout")
        g.add_argument("--config", default=default, help="JSON config file")
        return g

    # accepted before or after the subcommand; the subcommand copy must not
    # overwrite a value given before it
    common = global_options(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="mlekit", description="Multi-contrast endoscopy processing",
                                parents=[global_options(None)])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", parents=[common], help="raw + white cubes to reflectance")
    s.add_argument("--raw", required=True)
    s.add_argument("--white", required=True)
    s.add_argument("--dark")
    s.add_argument("--pulse-widths")
    s.add_argument("--white-pulse-widths")
    s.add_argument("--register", action="store_true")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("sto2", parents=[common], help="reflectance cube to oxygen saturation")
    s.add_argument("--cube", required=True)
    s.add_argument("--extinction")
    s.add_argument("--roi", help="row,col,size of a square summary region")
    s.add_argument("--no-rescale", action="store_true")
    s.set_defaults(func=cmd_sto2)

    s = sub.add_parser("lsci", parents=[common], help="speckle frames to flow contrast")
    s.add_argument("--frames", required=True)
    s.add_argument("--color", help="paired white-light frames for registered averaging")
    s.add_argument("--window", type=int, default=5)
    s.add_argument("--temporal", type=int, default=1)
    s.add_argument("--median-display", action="store_true", help="9x9 median on the PNG only")
    s.add_argument("--roi-a", help="mask file of the first RMS-contrast region")
    s.add_argument("--roi-b", help="mask file of the second RMS-contrast region")
    s.set_defaults(func=cmd_lsci)

    s = sub.add_parser("pse", parents=[common], help="directional images to normals and height")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--rig")
    s.add_argument("--sigma", type=float, default=150.0)
    s.add_argument("--no-highpass", action="store_true")
    s.add_argument("--no-inpaint", action="store_true")
    s.add_argument("--solver", choices=("dct", "multigrid"), default="dct")
    s.set_defaults(func=cmd_pse)

    s = sub.add_parser("render", parents=[common], help="render WLE / NBI / SE colour images")
    s.add_argument("mode", choices=("wle", "nbi", "se"))
    s.add_argument("--cube", required=True)
    s.add_argument("--response")
    s.add_argument("--reference", help="RGB image for linear colour balance")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("optimize-se", parents=[common], help="optimise spectral-enhancement camera weights")
    s.add_argument("--cube", required=True)
    s.add_argument("--normal-mask", required=True)
    s.add_argument("--lesion-mask", required=True)
    s.add_argument("--response")
    s.add_argument("--pixels", type=int, default=100)
    s.add_argument("--iters", type=int, default=60)
    s.add_argument("--lr", type=float, default=0.05)
    s.set_defaults(func=cmd_optimize_se)

    s = sub.add_parser("acqsim", parents=[common], help="simulate the acquisition / auto-exposure loop")
    s.add_argument("--frames", type=int)
    s.add_argument("--hexdump", action="store_true", help="also write the consumed packets as a hex dump")
    s.set_defaults(func=cmd_acqsim)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic phantom")
    s.add_argument("--kind", required=True, choices=KINDS)
    s.add_argument("--params", help="JSON object of generator parameters")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("stats", parents=[common], help="paired comparisons and ANCOVA")
    s.add_argument("--table", help="long CSV: sample_id,group,value")
    s.add_argument("--family", help="baseline group of a comparison family")
    s.add_argument("--baseline")
    s.add_argument("--comparisons", help="comma-separated groups (default: all outside the baseline prefix)")
    s.add_argument("--ancova", help="CSV with contrast,velocity,exposure columns")
    s.set_defaults(func=cmd_stats)
    return p


_DEFAULTS = {"seed": 0, "threads": 1, "out_dir": "mlekit_out", "format": "text", "config": None}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    args.seed_given = args.seed is not None
    for k, v in _DEFAULTS.items():
        if getattr(args, k, None) is None:
            setattr(args, k, v)
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_INVALID
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(args.threads))

    from .acqsim.protocol import MalformedPacketError
    from .cubeio import CubeFormatError
    from .imgcore import InvalidInputError
    from .spectral import ConfigurationError
    from .statkit import StatsInputError

    invalid = (UsageError, InvalidInputError, ConfigurationError, CubeFormatError, StatsInputError,
               MalformedPacketError, FileNotFoundError, json.JSONDecodeError)
    try:
        summary = args.func(args)
    except invalid as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _emit(args, summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
