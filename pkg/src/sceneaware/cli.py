"""Command-line front end: ``sceneaware {ingest,fit,match,augment,synth,run}``.

Options may come from a JSON ``--config`` file, either at top level or in a
section named after the verb; flags given on the command line win. Logs go
to stderr, one-line ``key=value`` summaries to stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import acoustics, augment, matcher, scene
from .audio import write_audio

log = logging.getLogger("sceneaware")

DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    # ingest
    "catalog_root": None,
    "catalog_csv": "catalog.csv",
    # fit
    "observations": None,
    "scene_airs": None,
    "epsilon": scene.DEFAULT_EPSILON,
    "biased": False,
    "scene_json": "scene.json",
    # match
    "strategy": "scene-aware",
    "M": None,
    "selection": "selection.json",
    "histogram": None,
    "hist_cap": 1.0,
    "bin_width": 0.05,
    # augment
    "clean_root": None,
    "noise_root": None,
    "out_root": None,
    "snr_low": augment.DEFAULT_SNR_RANGE[0],
    "snr_high": augment.DEFAULT_SNR_RANGE[1],
    "no_noise": False,
    "bit_depth": "float32",
    "peak_normalize": False,
    "min_silence": 3.0,
    "frame": 0.025,
    "hop": 0.010,
    "threshold_db": -40.0,
    # synth
    "count": 10,
    "t60_low": 0.2,
    "t60_high": 1.5,
    "duration": None,
    "noise_floor": -90.0,
    "out_dir": None,
}


class UsageError(Exception):
    pass


def _summary(**fields):
    print(" ".join(f"{k}={v}" for k, v in fields.items()))
    sys.stdout.flush()


# how each option is spelled on the command line, for error messages
FLAGS = {
    "catalog_root": "ROOT",
    "catalog_csv": "--catalog",
    "scene_json": "--scene",
    "selection": "--selection",
    "clean_root": "--clean",
    "out_root": "--out",
    "out_dir": "--out",
    "M": "-M",
}


def _need(opts, *keys):
    missing = [k for k in keys if opts.get(k) in (None, "")]
    if missing:
        names = [FLAGS.get(k, "--" + k.replace("_", "-")) for k in missing]
        raise UsageError("missing required option(s): " + ", ".join(names))


# --------------------------------------------------------------------------


def cmd_ingest(opts) -> int:
    _need(opts, "catalog_root", "catalog_csv")
    cat = acoustics.build_catalog(opts["catalog_root"], opts["catalog_csv"], jobs=opts["jobs"])
    r = cat.report
    _summary(K=cat.K, files=r.n_files, cached=r.n_cached, skipped=len(r.skipped), csv=opts["catalog_csv"])
    for src, n in r.per_source(cat).items():
        _summary(source=src, count=n)
    for path, reason in r.skipped:
        log.warning("skipped %s (%s)", path, reason)
    return 0


def cmd_fit(opts) -> int:
    _need(opts, "scene_json")
    if opts.get("observations"):
        obs = scene.load_observations(opts["observations"])
    elif opts.get("scene_airs"):
        obs = scene.observations_from_airs(opts["scene_airs"])
    else:
        raise UsageError("fit needs --observations CSV or --scene-airs DIR")
    dist = scene.fit_gaussian(obs, epsilon=opts["epsilon"], unbiased=not opts["biased"])
    dist.save(opts["scene_json"])
    _summary(N=obs.N, source=obs.source, epsilon=dist.epsilon,
             mu="[" + ",".join(f"{m:.4f}" for m in dist.mu) + "]", json=opts["scene_json"])
    return 0


def cmd_match(opts) -> int:
    _need(opts, "catalog_csv", "M", "selection")
    catalog = acoustics.load_catalog(opts["catalog_csv"])
    M = int(opts["M"])
    if M > catalog.K:
        raise UsageError(f"cannot select M={M} distinct AIRs from a catalog of K={catalog.K}")
    seed = int(opts["seed"])
    strategy = opts["strategy"]
    epsilon = None
    if strategy == "uniform":
        low, high = scene.catalog_bounds(catalog)
        targets = scene.sample_uniform(low, high, M, seed)
    elif strategy == "scene-aware":
        _need(opts, "scene_json")
        dist = scene.SceneDistribution.load(opts["scene_json"])
        epsilon = dist.epsilon
        targets = scene.sample_gaussian(dist, M, seed)
    else:
        raise UsageError(f"match strategy must be scene-aware or uniform, got {strategy!r}")
    sel = matcher.select_subset(catalog, targets)
    manifest = sel.manifest(targets_seed=seed, epsilon=epsilon)
    manifest["strategy"] = strategy
    manifest["catalog"] = _relpath(opts["catalog_csv"], Path(opts["selection"]).parent)
    matcher.write_selection_manifest(manifest, opts["selection"])
    if opts.get("histogram"):
        matcher.write_histogram_csv(sel.histogram(opts["bin_width"], opts["hist_cap"]), opts["histogram"])
    _summary(M=M, K=catalog.K, total_cost=f"{sel.assignment.total_cost:.6f}",
             strategy=strategy, selection=opts["selection"])
    return 0


def _relpath(path, base) -> str:
    return Path(os.path.relpath(os.path.abspath(path), os.path.abspath(base))).as_posix()


def cmd_augment(opts) -> int:
    _need(opts, "clean_root", "out_root")
    if opts["strategy"] == "full-set":
        _need(opts, "catalog_csv")
        pool = list(acoustics.load_catalog(opts["catalog_csv"]))
        ref = None
    else:
        _need(opts, "selection")
        sel = matcher.read_selection_manifest(opts["selection"])
        cat_path = opts.get("catalog_csv")
        if sel.get("catalog"):
            cat_path = Path(opts["selection"]).parent / sel["catalog"]
        catalog = acoustics.load_catalog(cat_path)
        pool = [catalog.get(r["air_id"]) for r in sel["rows"]]
        ref = opts["selection"]
    snr_range = None if opts["no_noise"] else (float(opts["snr_low"]), float(opts["snr_high"]))
    noise_root = None if opts["no_noise"] else opts.get("noise_root")
    if noise_root is None:
        snr_range = None
    cfg = augment.SegmentationConfig(opts["min_silence"], opts["frame"], opts["hop"], opts["threshold_db"])
    m = augment.build_training_set(
        opts["clean_root"], pool, noise_root, opts["out_root"], int(opts["seed"]), cfg,
        snr_range=snr_range, bit_depth=opts["bit_depth"], peak_normalize=opts["peak_normalize"],
        selection_manifest_ref=ref, jobs=opts["jobs"],
    )
    s = m.summary
    _summary(recordings=s["recordings"], segments=s["segments"], dropped_silent=s["dropped_silent"],
             failures=s["failures"], pool=len(pool), manifest=Path(opts["out_root"]) / augment.MANIFEST_NAME)
    return 0


def cmd_synth(opts) -> int:
    _need(opts, "out_dir")
    lo, hi = float(opts["t60_low"]), float(opts["t60_high"])
    if not 0 < lo <= hi:
        raise UsageError(f"invalid T60 range [{lo}, {hi}]")
    count = int(opts["count"])
    duration = opts["duration"] or round(1.5 * hi + 0.1, 3)
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(int(opts["seed"]))
    width = len(str(max(count - 1, 0)))
    airs = []
    for k in range(count):
        t60 = rng.uniform(lo, hi, acoustics.N_BANDS)
        sub = int(rng.integers(2**62))
        air = acoustics.synth_air(t60, duration, opts["noise_floor"], seed=sub,
                                  air_id=f"synth_{k:0{width}d}")
        path = out / f"{air.id}.wav"
        write_audio(air.audio, path, "float32")
        airs.append(acoustics.Air(air.id, "synth", air.t60, None, str(path), acoustics._sha256(path)))
    acoustics.write_catalog_csv(acoustics.AirCatalog(tuple(airs)), out / "ground_truth.csv")
    _summary(count=count, duration=duration, out_dir=out, ground_truth=out / "ground_truth.csv")
    return 0


def cmd_run(opts) -> int:
    """ingest -> fit -> match -> augment with one option set."""
    strategy = opts["strategy"]
    steps = [cmd_ingest]
    if strategy == "scene-aware":
        steps.append(cmd_fit)
    if strategy != "full-set":
        steps.append(cmd_match)
    steps.append(cmd_augment)
    for step in steps:
        rc = step(opts)
        if rc:
            return rc
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "match": cmd_match,
    "augment": cmd_augment,
    "synth": cmd_synth,
    "run": cmd_run,
}


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; command-line flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("-v", "--verbose", action="store_true", default=None)

    p = argparse.ArgumentParser(prog="sceneaware", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, argument_default=None)

    ing = add("ingest", "label a directory of AIRs into a catalog CSV")
    ing.add_argument("catalog_root", nargs="?", metavar="ROOT")
    ing.add_argument("--out", dest="catalog_csv")

    fit = add("fit", "fit a scene T60 distribution")
    src = fit.add_mutually_exclusive_group()
    src.add_argument("--observations", help="CSV of T60 estimates")
    src.add_argument("--scene-airs", dest="scene_airs", help="directory of target-scene AIRs (oracle mode)")
    fit.add_argument("--epsilon", type=float)
    fit.add_argument("--biased", action="store_true", default=None)
    fit.add_argument("--out", dest="scene_json")

    mt = add("match", "sample targets and select matching AIRs")
    mt.add_argument("--catalog", dest="catalog_csv")
    mt.add_argument("--scene", dest="scene_json")
    mt.add_argument("--uniform", dest="strategy", action="store_const", const="uniform")
    mt.add_argument("-M", "--M", dest="M", type=int)
    mt.add_argument("--out", dest="selection")
    mt.add_argument("--hist", dest="histogram")
    mt.add_argument("--hist-cap", dest="hist_cap", type=float)
    mt.add_argument("--bin-width", dest="bin_width", type=float)

    def augment_flags(a):
        a.add_argument("--clean", dest="clean_root")
        a.add_argument("--noise", dest="noise_root")
        a.add_argument("--snr-low", dest="snr_low", type=float)
        a.add_argument("--snr-high", dest="snr_high", type=float)
        a.add_argument("--no-noise", dest="no_noise", action="store_true", default=None)
        a.add_argument("--bit-depth", dest="bit_depth", choices=("float32", "pcm16"))
        a.add_argument("--peak-normalize", dest="peak_normalize", action="store_true", default=None)
        a.add_argument("--min-silence", dest="min_silence", type=float)
        a.add_argument("--frame", type=float)
        a.add_argument("--hop", type=float)
        a.add_argument("--threshold-db", dest="threshold_db", type=float)

    au = add("augment", "build the reverberated training set")
    au.add_argument("--selection")
    au.add_argument("--full-set", dest="strategy", action="store_const", const="full-set")
    au.add_argument("--catalog", dest="catalog_csv")
    au.add_argument("--out", dest="out_root")
    augment_flags(au)

    sy = add("synth", "generate synthetic AIRs with known T60")
    sy.add_argument("--count", type=int)
    sy.add_argument("--t60-range", dest="t60_range", nargs=2, type=float, metavar=("LOW", "HIGH"))
    sy.add_argument("--duration", type=float)
    sy.add_argument("--noise-floor", dest="noise_floor", type=float)
    sy.add_argument("--out", dest="out_dir")

    run = add("run", "ingest, fit, match and augment in one go")
    run.add_argument("--strategy", choices=("scene-aware", "uniform", "full-set"))
    return p


def resolve_options(args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        base = Path(args.config).parent
        sections = {k: v for k, v in cfg.items() if k in COMMANDS and isinstance(v, dict)}
        flat = {k: v for k, v in cfg.items() if k not in sections}
        for layer in (flat, sections.get(args.command, {})):
            for k, v in layer.items():
                k = k.replace("-", "_")
                if isinstance(v, str) and (k.endswith(("_root", "_csv", "_json", "_dir"))
                                           or k in ("observations", "scene_airs", "selection", "histogram")):
                    v = str(base / v)
                opts[k] = v
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command"):
            opts[k] = v
    if opts.get("t60_range"):
        opts["t60_low"], opts["t60_high"] = opts["t60_range"]
    if args.command == "augment" and opts["strategy"] == "uniform":
        opts["strategy"] = "scene-aware"
    return opts


def _setup_logging(verbose) -> None:
    for h in [h for h in log.handlers if getattr(h, "_cli", False)]:
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler._cli = True
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO if verbose else logging.WARNING)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"sceneaware {args.command}: {exc}", file=sys.stderr)
        return 2
    except (acoustics.CatalogError, scene.ObservationError, scene.SamplingError,
            matcher.AssignmentError, ValueError, OSError) as exc:
        print(f"sceneaware {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
