"""Command-line pipeline: phantoms, simulation, reconstruction, training, evaluation, benchmarks.

All commands share one output workspace (``--out``)::

    phantoms/        activity and attenuation rasters
    dataset/         simulated records and manifest.json
    model/           checkpoint.bin/.json and curves.csv
    recon/<method>/  reconstructed images, viewables and rrmse.csv
    eval/, bench/    per-image and summary CSV reports

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import io
from .config import ConfigError, RunConfig, echo_config, load_config
from .geometry import GeometryError
from .metrics import BenchItem, EvalReport, MetricError, bench, rrmse
from .nn.functional import ShapeError
from .nn.training import NumericError, infer, load_checkpoint, save_checkpoint, train, write_curves
from .nn.ced import build_ced
from .phantoms import Phantom, make_phantoms
from .recon import ReconstructionError, fbp, osem
from .simulator import SimulationError, build_dataset, load_record, load_split

log = logging.getLogger("petrecon")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
METHODS = ("fbp", "osem", "deeppet")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --- workspace helpers ---------------------------------------------------------

def _phantom_dir(out: Path) -> Path:
    return out / "phantoms"


def _manifest(out: Path) -> Path:
    return out / "dataset" / "manifest.json"


def _default_checkpoint(out: Path) -> Path:
    return out / "model" / "checkpoint"


def save_phantoms(phantoms, out_dir: Path, preset_name: str) -> None:
    for ph in phantoms:
        stem = f"p{ph.phantom_id:05d}"
        io.write_raster(out_dir / f"{stem}_activity", ph.activity, phantom_id=ph.phantom_id,
                        kind="activity", units="Bq/cc (relative)", preset=preset_name)
        io.write_raster(out_dir / f"{stem}_mu", ph.mu_map, phantom_id=ph.phantom_id,
                        kind="mu_map", units="1/mm", preset=preset_name)


def load_phantoms(phantom_dir: Path, n: int) -> list[Phantom]:
    stems = sorted(p.name[: -len("_activity.json")] for p in phantom_dir.glob("*_activity.json"))
    if not stems:
        raise DataError(f"no phantoms found in {phantom_dir}")
    out = []
    for stem in stems:
        act, meta = io.read_raster(phantom_dir / f"{stem}_activity")
        mu, _ = io.read_raster(phantom_dir / f"{stem}_mu")
        if act.shape != (n, n) or mu.shape != (n, n):
            raise DataError(f"phantom {stem} has shape {act.shape}, preset expects {(n, n)}")
        out.append(Phantom(int(meta["phantom_id"]), act.astype(np.float64), mu.astype(np.float64)))
    return out


def _load_items(cfg: RunConfig, out: Path, split: str) -> list[BenchItem]:
    """Test records with every method input preloaded (timing excludes I/O)."""
    manifest_path = _manifest(out)
    if not manifest_path.exists():
        raise DataError(f"no dataset manifest at {manifest_path}")
    manifest = io.read_json(manifest_path)
    if manifest["geometry"] != cfg.geometry().to_dict():
        raise DataError("dataset geometry does not match the configured preset")
    entries = [e for e in manifest["records"] if e["split"] == split]
    if not entries:
        raise DataError(f"split {split!r} is empty")
    base = cfg.simulation.system_operator(cfg.geometry(), cfg.osem.model_psf_fwhm_mm)
    items = []
    for e in entries:
        r = load_record(manifest_path.parent, e)
        items.append(BenchItem(e["record_id"], e["counts"], r["truth"], {
            "precorrected": r["precorrected"],
            "total": r["total"],
            "gamma": r["scatter"] + r["randoms"],
            "opr": base.with_attenuation(r["atten"]),
        }))
    return items


def _methods(cfg: RunConfig, names, model=None) -> dict:
    geo = cfg.geometry()
    plain = cfg.simulation.system_operator(geo, 0.0)
    table = {
        "fbp": lambda it: fbp(it.inputs["precorrected"], plain, cfg.fbp),
        "osem": lambda it: osem(it.inputs["total"], it.inputs["gamma"], it.inputs["opr"], cfg.osem),
        "deeppet": lambda it: infer(model, it.inputs["precorrected"]).astype(np.float64),
    }
    return {name: table[name] for name in names}


def _open_model(cfg: RunConfig, checkpoint):
    if checkpoint is None:
        raise UsageError("method deeppet needs --checkpoint")
    path = Path(checkpoint)
    if path.suffix in (".bin", ".json"):
        path = path.with_suffix("")
    if not path.with_suffix(".json").exists():
        raise DataError(f"checkpoint {checkpoint} not found")
    model, _ = load_checkpoint(path)
    expect = cfg.geometry().sinogram.cropped_shape
    if tuple(model.input_hw) != tuple(expect):
        raise DataError(f"checkpoint expects sinograms {model.input_hw}, preset gives {expect}")
    if model.spec.output_size != cfg.geometry().grid.n:
        raise DataError("checkpoint output size does not match the image grid")
    return model


# --- commands ------------------------------------------------------------------

def cmd_phantom(cfg: RunConfig, args) -> None:
    count = cfg.phantom_count if args.count is None else args.count
    if count < 1:
        raise UsageError("phantom count must be >= 1")
    phantoms = make_phantoms(cfg.geometry().grid, count, cfg.seed)
    save_phantoms(phantoms, _phantom_dir(args.out), cfg.preset)
    log.info("wrote %d phantoms to %s", count, _phantom_dir(args.out))


def cmd_simulate(cfg: RunConfig, args) -> None:
    geo = cfg.geometry()
    phantoms = load_phantoms(_phantom_dir(args.out), geo.grid.n)
    manifest = build_dataset(phantoms, geo, args.out / "dataset", cfg.plan, cfg.simulation,
                             cfg.splits, cfg.seed)
    log.info("simulated %d records (%d discarded)", len(manifest["records"]), len(manifest["discarded"]))


def cmd_train(cfg: RunConfig, args) -> None:
    manifest = _manifest(args.out)
    if not manifest.exists():
        raise DataError(f"no dataset manifest at {manifest}")
    tx, ty, _ = load_split(manifest, "train")
    vx, vy, _ = load_split(manifest, "val")
    if len(tx) < 2 or len(vx) < 1:
        raise DataError("training needs at least two train and one validation record")
    model = build_ced(cfg.ced_spec(), tx.shape[2:], seed=cfg.seed)
    result = train(model, tx, ty, vx, vy, cfg.train)
    model.load_state(result.best_state)
    ckpt = Path(args.checkpoint) if args.checkpoint else _default_checkpoint(args.out)
    save_checkpoint(ckpt, model, epoch=result.best_epoch, val_mse=result.best_val_mse,
                    seed=cfg.seed, train_config=cfg.to_dict()["train"])
    write_curves(ckpt.parent / "curves.csv", result.history)
    log.info("best epoch %d, validation MSE %.6g", result.best_epoch, result.best_val_mse)


def cmd_recon(cfg: RunConfig, args) -> None:
    method = args.method
    if method not in METHODS:
        raise UsageError(f"--method must be one of {METHODS}")
    model = _open_model(cfg, args.checkpoint) if method == "deeppet" else None
    items = _load_items(cfg, args.out, args.split)
    fn = _methods(cfg, [method], model)[method]
    out_dir = args.out / "recon" / method
    rows = []
    for it in items:
        img = fn(it)
        if not np.all(np.isfinite(img)):
            raise NumericError(f"non-finite reconstruction for {it.image_id}")
        view = io.export_viewable(out_dir / it.image_id, img)
        io.write_raster(out_dir / it.image_id, img, method=method, record_id=it.image_id,
                        preset=cfg.preset, counts=it.counts, **view)
        rows.append({"method": method, "image_id": it.image_id, "counts": it.counts,
                     "rrmse": rrmse(img, it.truth), "time_ms": float("nan")})
    EvalReport(rows).write_csv(out_dir / "rrmse.csv")
    log.info("%s: %d images, mean rRMSE %.4f", method, len(rows), np.mean([r["rrmse"] for r in rows]))


def _report(cfg: RunConfig, args, repetitions: int, warmup: int) -> EvalReport:
    names = [args.method] if args.method else [m for m in METHODS
                                               if m != "deeppet" or args.checkpoint is not None]
    if args.method and args.method not in METHODS:
        raise UsageError(f"--method must be one of {METHODS}")
    model = _open_model(cfg, args.checkpoint) if "deeppet" in names else None
    items = _load_items(cfg, args.out, args.split)
    return bench(_methods(cfg, names, model), items, repetitions, warmup, cfg.bench.n_bins)


def cmd_eval(cfg: RunConfig, args) -> None:
    report = _report(cfg, args, repetitions=1, warmup=0)
    _write_report(report, args.out / "eval")


def cmd_bench(cfg: RunConfig, args) -> None:
    report = _report(cfg, args, cfg.bench.repetitions, cfg.bench.warmup)
    _write_report(report, args.out / "bench")
    summary = {s["method"]: s for s in report.summary()}
    if "deeppet" in summary and "osem" in summary:
        ratio = summary["osem"]["mean_time_ms"] / summary["deeppet"]["mean_time_ms"]
        log.info("network inference is %.1f times faster than OSEM", ratio)


def _write_report(report: EvalReport, out_dir: Path) -> None:
    report.write_csv(out_dir / "per_image.csv")
    report.write_summary_csv(out_dir / "summary.csv")
    report.write_binned_csv(out_dir / "binned.csv")
    for s in report.summary():
        log.info("%-8s rRMSE %.4f +- %.4f  %.2f ms/image", s["method"], s["mean_rrmse"],
                 s["std_rrmse"], s["mean_time_ms"])


COMMANDS = {
    "phantom": cmd_phantom,
    "simulate": cmd_simulate,
    "recon": cmd_recon,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--threads", type=int, help="BLAS thread limit")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded, reproducible execution")
    common.add_argument("--preset", choices=("paper", "toy"), help="geometry preset")
    common.add_argument("--method", help="fbp, osem or deeppet")
    common.add_argument("--checkpoint", help="network checkpoint (stem, .bin or .json)")
    common.add_argument("--out", type=Path, default=Path("petrecon_out"), help="workspace directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="petrecon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("phantom", parents=[common], help="generate phantom/attenuation pairs")
    p.add_argument("--count", type=int, help="number of phantoms")
    sub.add_parser("simulate", parents=[common], help="simulate noisy acquisitions")
    for name in ("recon", "eval", "bench"):
        p = sub.add_parser(name, parents=[common], help=f"{name} on a dataset split")
        p.add_argument("--split", default="test")
    p = sub.add_parser("train", parents=[common], help="train the encoder-decoder")
    p.add_argument("--epochs", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, preset=args.preset, threads=args.threads,
                          deterministic=args.deterministic or None)
        if cfg.deterministic:
            cfg.threads = 1
        if getattr(args, "epochs", None) is not None:
            cfg.train.epochs = args.epochs
        args.out = Path(args.out)
        echo_config(cfg, args.out)
        with threadpool_limits(limits=cfg.threads):
            COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, GeometryError, SimulationError, MetricError, ShapeError,
            ReconstructionError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
