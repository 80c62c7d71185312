"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line.

The end-to-end criteria (7-9) share one toy study run through the command-line
pipeline: 60 phantoms, at most 540 records, 40 training epochs, then a bench of
FBP, OSEM and the network on the test split.
"""
import csv
import json
import time

import numpy as np
import pytest

from oracles import dense_em, dense_system, numeric_grad, rel_error
from petrecon import io
from petrecon.cli import main
from petrecon.geometry import ImageGrid, SinogramGeometry
from petrecon.metrics import count_bins, is_nonincreasing, poisson_loglik, rrmse
from petrecon.nn import functional as F
from petrecon.nn.ced import PRESETS, CedModel, CedSpec, build_ced, ced_preset
from petrecon.phantoms import disc_phantom
from petrecon.projector import MatrixOperator, SystemOperator
from petrecon.recon import mlem_update
from petrecon.simulator import load_split


def test_criterion_01_adjoint_identity(criterion):
    t0 = time.perf_counter()
    opr = SystemOperator(ImageGrid(8, 16.0), SinogramGeometry(12, 11, 2.0))
    r = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        f, g = r.standard_normal((8, 8)), r.standard_normal((12, 11))
        af = opr.forward(f)
        worst = max(worst, abs(np.sum(af * g) - np.sum(f * opr.adjoint(g)))
                    / (np.linalg.norm(af) * np.linalg.norm(g)))
    secs = time.perf_counter() - t0
    criterion(1, worst <= 1e-10 and secs < 10,
              f"worst relative mismatch {worst:.2e} (<= 1e-10) over 100 pairs in {secs:.2f} s")


def test_criterion_02_dense_oracle(criterion):
    t0 = time.perf_counter()
    r = np.random.default_rng(2)
    worst = 0.0
    for n in range(2, 9):
        grid, geom = ImageGrid(n, 2.0 * n), SinogramGeometry(n + 3, n + 2, 1.7)
        opr = SystemOperator(grid, geom)
        mat = dense_system(grid, geom)
        scale = np.abs(mat).max()
        f, g = r.random(grid.shape), r.random(geom.shape)
        worst = max(worst,
                    np.abs(opr.forward(f).ravel() - mat @ f.ravel()).max() / scale,
                    np.abs(opr.adjoint(g).ravel() - mat.T @ g.ravel()).max() / scale)
        gamma = r.uniform(0.1, 0.5, geom.shape)
        counts = r.poisson(opr.forward(r.uniform(1, 5, grid.shape)) + gamma).astype(float)
        f0 = np.where(opr.support, 1.0, 0.0)
        f = f0
        for _ in range(3):
            f = mlem_update(f, counts, gamma, opr)
        ref = dense_em(mat, counts, gamma, f0, 3)
        worst = max(worst, np.abs(f - ref).max() / max(1.0, np.abs(ref).max()))
    secs = time.perf_counter() - t0
    criterion(2, worst <= 1e-12 and secs < 30,
              f"max deviation {worst:.2e} (<= 1e-12) on grids 2x2..8x8 in {secs:.2f} s")


def test_criterion_03_mlem_monotonicity(criterion):
    t0 = time.perf_counter()
    r = np.random.default_rng(3)
    worst_drop = 0.0
    for _ in range(20):
        mat = r.random((16, 9)) * (r.random((16, 9)) < 0.6)
        mat[:, mat.sum(axis=0) == 0] = 0.2
        opr = MatrixOperator(mat, (3, 3), (4, 4))
        gamma = r.uniform(0.1, 1.0, (4, 4))
        g = r.poisson(opr.forward(r.uniform(0, 10, (3, 3))) + gamma).astype(float)
        f = np.ones((3, 3))
        prev = poisson_loglik(f, g, gamma, opr)
        for _ in range(50):
            f = mlem_update(f, g, gamma, opr)
            cur = poisson_loglik(f, g, gamma, opr)
            worst_drop = max(worst_drop, (prev - cur) / abs(prev))
            prev = cur
    secs = time.perf_counter() - t0
    criterion(3, worst_drop <= 1e-9 and secs < 60,
              f"largest relative log-likelihood drop {worst_drop:.1e} (<= 1e-9), 20 systems x 50 updates")


def test_criterion_04_disc_projection(criterion):
    t0 = time.perf_counter()
    grid, geom = ImageGrid(128, 256.0), SinogramGeometry(36, 181, 1.0)
    radius = 80.0
    sino = SystemOperator(grid, geom).forward(disc_phantom(grid, radius))
    s = geom.offsets()
    inner = np.abs(s) <= radius - 3 * grid.pixel_mm
    chord = 2 * np.sqrt(radius**2 - s[inner] ** 2)
    err = np.max(np.abs(sino[:, inner] - chord) / chord)
    secs = time.perf_counter() - t0
    criterion(4, err <= 0.02 and secs < 5,
              f"max chord-profile error {100 * err:.2f}% (<= 2%) for |s| <= R - 3 px, PSF off")


def _grad_checks():
    r = np.random.default_rng(5)
    errs = {}
    x = r.standard_normal((2, 5, 5, 3))
    for stride in (1, 2):
        w, b = r.standard_normal((3, 3, 3, 4)), r.standard_normal(4)
        ho = F.conv_out_size(5, stride)
        proj = r.standard_normal((2, ho, ho, 4))
        loss = lambda: float(np.sum(F.conv2d_forward(x, w, b, stride)[0] * proj))  # noqa: E731
        dx, dw, db = F.conv2d_backward(proj, F.conv2d_forward(x, w, b, stride)[1])
        errs[f"conv s{stride}"] = max(rel_error(dx, numeric_grad(loss, x)),
                                      rel_error(dw, numeric_grad(loss, w)),
                                      rel_error(db, numeric_grad(loss, b)))
    gamma, beta = r.standard_normal(3), r.standard_normal(3)
    proj = r.standard_normal(x.shape)
    for train in (True, False):
        rm, rv = r.standard_normal(3), r.uniform(0.5, 2, 3)

        def loss():
            return float(np.sum(F.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), train=train)[0] * proj))

        dx, dg, db = F.batchnorm_backward(proj, F.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), train=train)[1])
        errs[f"batchnorm {'train' if train else 'eval'}"] = max(
            rel_error(dx, numeric_grad(loss, x)), rel_error(dg, numeric_grad(loss, gamma)),
            rel_error(db, numeric_grad(loss, beta)))
    xr = np.where(np.abs(x) < 0.01, 0.5, x)
    out, mask = F.relu_forward(xr)
    errs["relu"] = rel_error(F.relu_backward(proj, mask),
                             numeric_grad(lambda: float(np.sum(F.relu_forward(xr)[0] * proj)), xr))
    up = r.standard_normal((2, 7, 9, 3))
    _, cache = F.upsample_forward(x, 7, 9)
    errs["upsample"] = rel_error(F.upsample_backward(up, cache),
                                 numeric_grad(lambda: float(np.sum(F.upsample_forward(x, 7, 9)[0] * up)), x))
    y = r.standard_normal(x.shape)
    errs["mse"] = rel_error(F.mse_loss(x, y)[1], numeric_grad(lambda: F.mse_loss(x, y)[0], x, 1e-4))
    model = CedModel(CedSpec("tiny", 2, 1, 1, 2, 2, 1, output_size=6), (7, 6), seed=1, dtype=np.float64)
    xm, ym = r.random((3, 1, 7, 6)), r.random((3, 1, 6, 6))
    model.zero_grad()
    model.backward(F.mse_loss(model.forward(xm, train=True), ym)[1])
    mloss = lambda: F.mse_loss(model.forward(xm, train=True), ym)[0]  # noqa: E731
    errs["whole model"] = max(rel_error(p.grad, numeric_grad(mloss, p.value, 1e-5))
                              for p in model.parameters())
    return errs


def test_criterion_05_gradient_checks(criterion):
    t0 = time.perf_counter()
    errs = _grad_checks()
    secs = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = all(e < 1e-3 for e in errs.values()) and errs["mse"] < 1e-6 and secs < 120
    criterion(5, ok, f"{len(errs)} checks, worst {worst} at {errs[worst]:.1e} (< 1e-3); "
                     f"mse {errs['mse']:.1e} (< 1e-6); {secs:.1f} s")


def test_criterion_06_architecture_shapes(criterion):
    t0 = time.perf_counter()
    model = build_ced(ced_preset("deeppet"), (288, 269))
    out = model.forward(np.zeros((1, 1, 288, 269), np.float32))
    counts = {k: PRESETS[k].conv_count for k in ("m1", "m2", "m3", "m4", "m6", "m7", "deeppet")}
    secs = time.perf_counter() - t0
    ok = (model.bottleneck_shape == (1024, 18, 17) and out.shape == (1, 1, 128, 128)
          and len(model.conv_layers) == 31
          and counts == {"m1": 26, "m2": 29, "m3": 31, "m4": 31, "m6": 36, "m7": 36, "deeppet": 31}
          and secs < 10)
    criterion(6, ok, f"bottleneck {model.bottleneck_shape}, output {out.shape[2:]}x1, conv counts "
                     f"{'/'.join(str(counts[k]) for k in counts)}, {secs:.1f} s")


# --- end-to-end toy study ------------------------------------------------------

STUDY = {"preset": "toy", "seed": 7, "phantom_count": 60, "train": {"epochs": 40}}


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def study(tmp_path_factory):
    root = tmp_path_factory.mktemp("study")
    cfg = root / "study.json"
    cfg.write_text(json.dumps(STUDY))
    out = root / "ws"
    base = ["--config", str(cfg), "--out", str(out), "--deterministic"]
    t0 = time.perf_counter()
    for cmd in (["phantom"], ["simulate"], ["train"]):
        assert main(cmd + base) == 0
    ckpt = out / "model" / "checkpoint"
    train_secs = time.perf_counter() - t0
    t0 = time.perf_counter()
    assert main(["bench", "--checkpoint", str(ckpt)] + base) == 0
    bench_secs = time.perf_counter() - t0
    rows = _read_csv(out / "bench" / "per_image.csv")
    table = {}
    for r in rows:
        table.setdefault(r["method"], {})[r["image_id"]] = (float(r["counts"]), float(r["rrmse"]),
                                                             float(r["time_ms"]))
    manifest = io.read_json(out / "dataset" / "manifest.json")
    _, truths, entries = load_split(out / "dataset" / "manifest.json", "test")
    const = {e["record_id"]: rrmse(np.full(t[0].shape, t[0].mean()), t[0])
             for e, t in zip(entries, truths)}
    level = float(load_split(out / "dataset" / "manifest.json", "train")[1].mean())
    global_const = {e["record_id"]: rrmse(np.full(t[0].shape, level), t[0])
                    for e, t in zip(entries, truths)}
    curves = _read_csv(out / "model" / "curves.csv")
    return {"table": table, "const": const, "global_const": global_const,
            "manifest": manifest, "curves": curves,
            "train_secs": train_secs, "bench_secs": bench_secs, "out": out}


def _mean(study, method, key, ids=None):
    col = {"counts": 0, "rrmse": 1, "time_ms": 2}[key]
    vals = study["table"][method]
    ids = vals.keys() if ids is None else ids
    return float(np.mean([vals[i][col] for i in ids]))


def test_criterion_07_toy_training(study, criterion):
    n_phantoms = len(study["manifest"]["phantom_splits"])
    n_records = len(study["manifest"]["records"]) + len(study["manifest"]["discarded"])
    ids = list(study["table"]["deeppet"])
    net = _mean(study, "deeppet", "rrmse")
    const = float(np.mean([study["const"][i] for i in ids]))
    global_const = float(np.mean([study["global_const"][i] for i in ids]))
    counts = [study["table"]["deeppet"][i][0] for i in ids]
    top = [ids[k] for b in count_bins(counts, 4)[2:] for k in b]
    net_top, fbp_top = _mean(study, "deeppet", "rrmse", top), _mean(study, "fbp", "rrmse", top)
    ok_a = net < 0.8 * const
    ok_b = net_top < fbp_top
    ok = ok_a and ok_b and n_phantoms >= 60 and n_records <= 540 and study["train_secs"] <= 1800
    criterion(7, ok, f"network rRMSE {net:.3f} vs 0.8 x per-image-mean constant {0.8 * const:.3f} "
                     f"({'ok' if ok_a else 'no'}; training-mean constant {global_const:.2f}); "
                     f"top-two count bins network {net_top:.3f} vs FBP {fbp_top:.3f} ({'ok' if ok_b else 'no'}); "
                     f"{n_phantoms} phantoms, {n_records} records, pipeline {study['train_secs'] / 60:.1f} min")


def test_toy_loss_curve_trend(study):
    loss = [float(r["train_mse"]) for r in study["curves"]]
    assert np.mean(loss[10:20]) < np.mean(loss[:10])


def test_criterion_08_orderings(study, criterion):
    t_net, t_osem = _mean(study, "deeppet", "time_ms"), _mean(study, "osem", "time_ms")
    r_osem, r_fbp = _mean(study, "osem", "rrmse"), _mean(study, "fbp", "rrmse")
    ok = t_net < t_osem and r_osem < r_fbp and study["bench_secs"] < 600
    criterion(8, ok, f"time/image network {t_net:.1f} ms < OSEM {t_osem:.1f} ms "
                     f"(ratio {t_osem / t_net:.1f}x); rRMSE OSEM {r_osem:.3f} < FBP {r_fbp:.3f}; "
                     f"bench {study['bench_secs']:.0f} s")


def test_criterion_09_count_degradation(study, criterion):
    parts, ok = [], True
    for method in ("fbp", "osem", "deeppet"):
        ids = list(study["table"][method])
        counts = [study["table"][method][i][0] for i in ids]
        binned = [_mean(study, method, "rrmse", [ids[k] for k in b]) for b in count_bins(counts, 4)]
        good = is_nonincreasing(binned, max_inversions=1, rel_tol=0.05)
        ok &= good
        parts.append(f"{method} " + ">".join(f"{v:.3f}" for v in binned))
    criterion(9, ok, "binned rRMSE, low to high counts: " + "; ".join(parts))


# --- determinism -----------------------------------------------------------------

REDUCED = {
    "preset": "toy", "seed": 5, "phantom_count": 4,
    "plan": {"realizations": 3, "n_augmented": 1, "n_flipped": 1},
    "train": {"epochs": 2, "batch_size": 4, "val_every": 1},
}


def _run_reduced(root, name):
    cfg = root / "reduced.json"
    cfg.write_text(json.dumps(REDUCED))
    out = root / name
    base = ["--config", str(cfg), "--out", str(out), "--deterministic"]
    for cmd in (["phantom"], ["simulate"], ["train"], ["recon", "--method", "osem"],
                ["recon", "--method", "deeppet", "--checkpoint", str(out / "model" / "checkpoint")]):
        assert main(cmd + base) == 0
    return out


def test_criterion_10_determinism(tmp_path, criterion):
    a, b = _run_reduced(tmp_path, "a"), _run_reduced(tmp_path, "b")
    files = sorted(p.relative_to(a) for p in a.rglob("*")
                   if p.is_file() and p.suffix in (".f32", ".bin"))
    differ = [str(p) for p in files if (a / p).read_bytes() != (b / p).read_bytes()]
    groups = {k: sum(str(p).startswith(k) for p in files) for k in ("dataset", "model", "recon")}
    ok = not differ and all(groups.values())
    criterion(10, ok, f"{len(files)} rasters/checkpoints compared byte for byte "
                      f"({groups['dataset']} dataset, {groups['model']} model, {groups['recon']} recon); "
                      f"{len(differ)} differ")
