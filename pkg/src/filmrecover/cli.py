"""Command-line front door: gen, dewarp, eval, fit, restore, radiomics, selftest.

Exit codes: 0 success, 2 usage or config error, 3 I/O error, 4 numerical failure.
Logs go to stderr; ``FILMRECOVER_VERBOSE`` (0, 1, 2) sets their level.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, fileio, mapops
from .analysis import evaluate, stats
from .analysis.radiomics import radiomics_vector
from .fitting import FitConfig, fit_warp_params, initial_values, render_maps
from .imagecore import ContractError, ImageGrid, MapField, Role, mask_field
from .quality import WindowSpec, ct_restore, estimate_flatfield
from .synthgen import ConfigError, WarpError, generate_dataset, load_sample, set_param
from .synthgen.dataset import resolve_config, sample_filename

logger = logging.getLogger("filmrecover")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
VERBOSITY_ENV = "FILMRECOVER_VERBOSE"


class UsageError(Exception):
    """Bad arguments or inputs; maps to exit code 2."""


class IOFailure(Exception):
    """Unwritable or unreadable locations; maps to exit code 3."""


def _setup_logging() -> None:
    level = {"0": logging.WARNING, "1": logging.INFO, "2": logging.DEBUG}.get(
        os.environ.get(VERBOSITY_ENV, "1"), logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    root = logging.getLogger("filmrecover")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def _load_json_arg(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        obj = fileio.read_json(path)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return obj


def _out_dir(path: str, create: bool = True) -> Path:
    out = Path(path)
    if not out.parent.is_dir():
        raise IOFailure(f"output parent directory does not exist: {out.parent}")
    if create:
        out.mkdir(exist_ok=True)
    elif not out.is_dir():
        raise IOFailure(f"output directory does not exist: {out}")
    return out


def _echo_config(out: Path, command: str, resolved: dict) -> None:
    # Output paths are left out so that reruns into different directories stay byte-identical.
    fileio.write_json(out / "run_config.json", {"command": command, "version": __version__, **resolved})


def _finite(obj, where: str):
    """Raise FloatingPointError on NaN anywhere in a JSON-bound report (inf is a legal sentinel)."""
    if isinstance(obj, float) and math.isnan(obj):
        raise FloatingPointError(f"non-finite value in {where}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _finite(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for k, v in enumerate(obj):
            _finite(v, f"{where}[{k}]")
    return obj


def _sample_indices(directory: Path, kind: str) -> list[int]:
    pat = re.compile(rf"^(\d{{4}})_{kind}\.")
    return sorted(int(m.group(1)) for p in directory.iterdir() if (m := pat.match(p.name)))


def _read_map(path: Path, role: Role, what: str) -> MapField:
    if not path.exists():
        raise UsageError(f"missing {what} map: {path}")
    try:
        field = fileio.read_fmap(path)
    except fileio.FormatError as exc:
        raise UsageError(str(exc)) from None
    if field.role is not role:
        raise UsageError(f"{path}: expected a {role.name} map, found {field.role.name}")
    return field


def _load_bundle(sample_dir: Path, index: int):
    if not sample_dir.is_dir():
        raise UsageError(f"sample directory not found: {sample_dir}")
    try:
        return load_sample(sample_dir, index)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    except fileio.FormatError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------- gen

def cmd_gen(args) -> dict:
    try:
        cfg = resolve_config(_load_json_arg(args.config))
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    out = _out_dir(args.out)
    _echo_config(out, "gen", {"seed": args.seed, "n": args.n, "config": cfg})
    t0 = time.perf_counter()
    manifest = generate_dataset(cfg, args.seed, args.n, out, jobs=args.jobs or os.cpu_count() or 1)
    logger.info("generated %d samples in %.1f s", args.n, time.perf_counter() - t0)
    return {"count": manifest["count"], "seed": args.seed, "out": str(out)}


# ---------------------------------------------------------------- dewarp

def cmd_dewarp(args) -> dict:
    sample = Path(args.sample)
    bundle = _load_bundle(sample, args.index)
    uv_path = Path(args.uv) if args.uv else sample / sample_filename(args.index, "uv")
    uv = _read_map(uv_path, Role.UV, "uv")
    df_path = Path(args.deform) if args.deform else sample / sample_filename(args.index, "deform")
    use_df = not args.no_merge and (args.deform is not None or df_path.exists())
    df = _read_map(df_path, Role.DEFORM, "deform") if use_df else None
    if uv.shape[:2] != (bundle.height, bundle.width):
        raise UsageError(f"uv map is {uv.height}x{uv.width}, photo is {bundle.height}x{bundle.width}")
    out = _out_dir(args.out)
    _echo_config(out, "dewarp", {"sample": str(sample), "index": args.index, "uv": str(uv_path),
                                 "deform": str(df_path) if use_df else None, "merge": not args.no_merge})

    mask = bundle.bgmask
    merged = uv
    if df is not None:
        merged = mapops.merge_uv(uv, mapops.deformation_to_uv(df, mask, bundle.width, bundle.height), mask)
    th, tw = bundle.texture.height, bundle.texture.width
    bmap = mapops.uv_to_backward(merged, mask, th, tw)
    photo = mapops.backward_sample(bundle.warped, bmap)
    fileio.write_png(out / "dewarped.png", photo)
    fileio.write_fmap(out / "backward.fmap", bmap.field)
    fileio.write_json(out / "backward.json", bmap.fractions())
    support = bmap.coverage != mapops.Coverage.EMPTY
    geo = mapops.backward_sample(ImageGrid(bundle.albedo.data), bmap).gray()
    p, s, m = evaluate.compare_on_support(geo, bundle.texture.gray(), support)
    report = {"psnr": p, "ssim": s, "ms_ssim": m, "psnr_photo": evaluate.psnr(photo.gray(), bundle.texture.gray(),
                                                                               mask=support),
              **bmap.fractions()}
    fileio.write_json(out / "report.json", _finite(report, "report"))
    logger.info("dewarped sample %d: PSNR %.2f dB, filled %.3f", args.index, p, report["filled_fraction"])
    return report


# ---------------------------------------------------------------- eval

def _pred_maps(pred: Path, index: int, shape) -> tuple[MapField, MapField | None]:
    uv = _read_map(pred / sample_filename(index, "uv"), Role.UV, "uv")
    df_path = pred / sample_filename(index, "deform")
    df = _read_map(df_path, Role.DEFORM, "deform") if df_path.exists() else None
    if uv.shape[:2] != tuple(shape):
        raise UsageError(f"prediction {index:04d} is {uv.height}x{uv.width}, expected {shape[0]}x{shape[1]}")
    return uv, df


def _aggregate(rows: list[dict], keys=("psnr", "ssim", "ms_ssim")) -> dict:
    return {k: {"mean": float(np.mean([r[k] for r in rows])), "median": float(np.median([r[k] for r in rows]))}
            for k in keys} if rows else {}


def cmd_eval(args) -> dict:
    pred, gt = Path(args.pred), Path(args.gt)
    for d in (pred, gt):
        if not d.is_dir():
            raise UsageError(f"directory not found: {d}")
    pred_ids, gt_ids = _sample_indices(pred, "uv"), _sample_indices(gt, "meta")
    if pred_ids != gt_ids:
        odd = sorted(set(pred_ids) ^ set(gt_ids))
        raise UsageError(f"sample ids differ between pred and gt: {', '.join(f'{i:04d}' for i in odd)}")
    if not pred_ids:
        raise UsageError("no samples to evaluate")
    out = _out_dir(args.out)
    _echo_config(out, "eval", {"pred": str(pred), "gt": str(gt), "deshift": args.deshift, "radius": args.radius})
    samples = []
    for i in pred_ids:
        bundle = _load_bundle(gt, i)
        uv, df = _pred_maps(pred, i, (bundle.height, bundle.width))
        rep = evaluate.evaluate_with_deshift(bundle, uv, df, deshift=args.deshift, radius=args.radius)
        # Prediction against the GT dewarp: identical maps give capped PSNR and SSIM 1.
        rec, _ = evaluate.dewarp(bundle, mapops.merge_uv(uv, _aux(bundle, df), bundle.bgmask))
        ref, bm = evaluate.dewarp(bundle, mapops.merge_uv(bundle.uv, _aux(bundle, bundle.deform), bundle.bgmask))
        vs = {"psnr": evaluate.psnr(rec, ref), "ssim": evaluate.ssim(rec, ref), "ms_ssim": evaluate.ms_ssim(rec, ref)}
        samples.append({"index": i, "vs_texture": rep.to_dict(), "vs_gt_dewarp": vs})
        logger.info("sample %04d: PSNR %.2f dB", i, rep.psnr)
    report = {
        "deshift": args.deshift,
        "n_samples": len(samples),
        "samples": samples,
        "aggregate": {
            "vs_texture": _aggregate([s["vs_texture"] for s in samples]),
            "vs_texture_deshifted": _aggregate([s["vs_texture"]["deshifted"] for s in samples
                                                if s["vs_texture"]["deshifted"]]),
            "vs_gt_dewarp": _aggregate([s["vs_gt_dewarp"] for s in samples]),
        },
    }
    fileio.write_json(out / "metrics.json", _finite(report, "metrics"))
    return report


def _aux(bundle, df: MapField | None) -> MapField:
    if df is None:
        return MapField(np.zeros((bundle.height, bundle.width, 2)), Role.UV,
                        np.zeros((bundle.height, bundle.width), bool))
    return mapops.deformation_to_uv(df, bundle.bgmask, bundle.width, bundle.height)


# ---------------------------------------------------------------- fit

def cmd_fit(args) -> dict:
    raw = _load_json_arg(args.config)
    init_spec = raw.pop("init", None)
    try:
        cfg = FitConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"fit config: {exc}") from None
    bundle = _load_bundle(Path(args.sample), args.index)
    names = list(cfg.free)
    try:
        truth = initial_values(bundle, names)
    except (KeyError, ValueError, IndexError) as exc:
        raise UsageError(f"unknown free parameter: {exc}") from None
    if init_spec is None:
        init = truth
    elif isinstance(init_spec, dict):
        unknown = set(init_spec) - set(names)
        if unknown:
            raise UsageError(f"init names parameters that are not free: {sorted(unknown)}")
        init = [float(init_spec.get(n, t)) for n, t in zip(names, truth)]
    else:
        raise UsageError("init must be an object mapping parameter names to values")
    out = _out_dir(args.out)
    _echo_config(out, "fit", {"sample": args.sample, "index": args.index,
                              "fit": {**cfg.__dict__, "init": dict(zip(names, init))}})
    t0 = time.perf_counter()
    try:
        result = fit_warp_params(bundle, cfg, init)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    params = bundle.params
    for n, v in zip(names, result.values):
        params = set_param(params, n, v)
    uv, _, mask = render_maps(params, bundle.height, bundle.width)
    bmap = mapops.uv_to_backward(uv, mask, bundle.texture.height, bundle.texture.width)
    fileio.write_png(out / "fitted_dewarp.png", mapops.backward_sample(bundle.warped, bmap))
    doc = {**result.to_dict(), "truth": dict(zip(names, truth)), "seconds": time.perf_counter() - t0}
    fileio.write_json(out / "fit_result.json", _finite(doc, "fit_result"))
    logger.info("fit %s: %s after %d evaluations", names, result.stop_reason, result.evaluations)
    return doc


# ---------------------------------------------------------------- restore

def cmd_restore(args) -> dict:
    src = Path(args.image)
    if not src.exists():
        raise UsageError(f"image not found: {src}")
    meta = _load_json_arg(args.meta)
    try:
        win = WindowSpec.from_meta(meta)
    except KeyError as exc:
        raise UsageError(f"{args.meta}: {exc.args[0]}") from None
    try:
        img = fileio.read_png(src)
    except OSError as exc:
        raise UsageError(f"{src}: unreadable image ({exc})") from None
    if args.mask:
        mask = _read_map(Path(args.mask), Role.MASK, "mask")
    else:
        mask = mask_field(np.ones((img.height, img.width), bool))
    out = _out_dir(args.out)
    _echo_config(out, "restore", {"image": str(src), "meta": args.meta, "mask": args.mask,
                                  "flatfield": args.flatfield, "window": win.to_dict()})
    if args.flatfield:
        _, img = estimate_flatfield(img, mask, args.flatfield)
    fileio.write_png(out / "deilluminated.png", img)
    hu = ct_restore(img, win)
    fileio.write_hu_raw(out / "restored_hu.raw", [hu], {"window": win.to_dict()})
    return {"window": win.to_dict(), "flatfield": args.flatfield, "hu_min": int(hu.min()), "hu_max": int(hu.max())}


# ---------------------------------------------------------------- radiomics

def _hu_records(directory: Path, levels: int) -> dict:
    if not directory.is_dir():
        raise UsageError(f"directory not found: {directory}")
    records = {}
    for path in sorted(directory.glob("*.raw")):
        try:
            _, slices = fileio.read_hu_raw(path)
        except fileio.FormatError as exc:
            raise UsageError(str(exc)) from None
        for k, s in enumerate(slices):
            records[f"{path.stem}:{k}"] = radiomics_vector(s, None, levels)
    return records


def cmd_radiomics(args) -> dict:
    pred = _hu_records(Path(args.pred), args.levels)
    gt = _hu_records(Path(args.gt), args.levels)
    if len(pred) < 2 or len(gt) < 2:
        raise UsageError(f"a paired t-test needs at least 2 samples per side (pred {len(pred)}, gt {len(gt)})")
    try:
        pt = stats.FeatureTable.from_records(pred, "PRED")
        gtt = stats.FeatureTable.from_records(gt, "GT")
        report = stats.significance_report(pt, gtt)
    except stats.TableMismatchError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args.out)
    _echo_config(out, "radiomics", {"pred": args.pred, "gt": args.gt, "levels": args.levels})
    fileio.atomic_write_bytes(out / "features_pred.csv", pt.to_csv().encode())
    fileio.atomic_write_bytes(out / "features_gt.csv", gtt.to_csv().encode())
    doc = report.to_dict()
    fileio.write_json(out / "significance.json", _finite(doc, "significance"))
    logger.info("%d features over %d samples; |t| below thresholds: %s", len(pt.names), report.n_samples,
                report.counts)
    return doc


# ---------------------------------------------------------------- selftest

def cmd_selftest(args) -> dict:
    from .selftest import SUITES, run_selftest

    if args.inject_failure and args.inject_failure not in SUITES:
        raise UsageError(f"unknown suite {args.inject_failure!r}; choose from {', '.join(SUITES)}")
    t0 = time.perf_counter()
    results = run_selftest(args.inject_failure)
    for r in results:
        print(f"{'PASS' if r['ok'] else 'FAIL'} {r['suite']} ({r['seconds']:.2f} s) {r['detail']}".rstrip(),
              file=sys.stderr)
    failed = [r["suite"] for r in results if not r["ok"]]
    return {"ok": not failed, "failed": failed, "suites": results, "seconds": time.perf_counter() - t0}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="filmrecover", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--json", action="store_true", help="print the machine-readable result to stdout")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate annotated warped-film samples")
    g.add_argument("--config", help="JSON overrides of the generator defaults")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=4)
    g.add_argument("--out", required=True)
    g.add_argument("--jobs", type=int, default=None, help="worker processes (default: logical cores)")

    d = sub.add_parser("dewarp", help="merge, invert and resample one sample")
    d.add_argument("sample", help="sample directory")
    d.add_argument("--index", type=int, default=0)
    d.add_argument("--uv", help="explicit UV map (default: the sample's own)")
    d.add_argument("--deform", help="explicit deformation map")
    d.add_argument("--no-merge", action="store_true", help="ignore the deformation map")
    d.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="score predicted maps against a generated dataset")
    e.add_argument("pred")
    e.add_argument("gt")
    e.add_argument("--deshift", choices=("map", "image", "none"), default="map")
    e.add_argument("--radius", type=int, default=4)
    e.add_argument("--out", required=True)

    f = sub.add_parser("fit", help="fit warp parameters to a sample's GT maps")
    f.add_argument("sample")
    f.add_argument("--index", type=int, default=0)
    f.add_argument("--config", required=True, help="fit config JSON (free, max_iters, ..., init)")
    f.add_argument("--out", required=True)

    r = sub.add_parser("restore", help="de-illuminate a dewarped image and map it back to HU")
    r.add_argument("image")
    r.add_argument("--meta", required=True, help="JSON carrying window {ww, wl}")
    r.add_argument("--mask", help="MASK map selecting film pixels (default: whole image)")
    r.add_argument("--flatfield", type=float, default=0.0, help="flat-field sigma in px; 0 disables")
    r.add_argument("--out", required=True)

    a = sub.add_parser("radiomics", help="feature tables and significance of pred vs GT HU volumes")
    a.add_argument("pred")
    a.add_argument("gt")
    a.add_argument("--levels", type=int, default=32)
    a.add_argument("--out", required=True)

    s = sub.add_parser("selftest", help="run the cross-module invariant suites")
    s.add_argument("--inject-failure", metavar="SUITE", help="force SUITE to fail (test hook)")
    return p


COMMANDS = {
    "gen": cmd_gen, "dewarp": cmd_dewarp, "eval": cmd_eval, "fit": cmd_fit,
    "restore": cmd_restore, "radiomics": cmd_radiomics, "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        result = COMMANDS[args.command](args)
    except (UsageError, ConfigError, ContractError, fileio.FormatError, WarpError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except (IOFailure, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_IO
    except (FloatingPointError, mapops.EmptyInputError) as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    if args.json:
        json.dump(result, sys.stdout, indent=2, sort_keys=True, default=str)
        sys.stdout.write("\n")
    if args.command == "selftest" and not result["ok"]:
        logger.error("failed suites: %s", ", ".join(result["failed"]))
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
