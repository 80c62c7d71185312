"""Acquisition simulation: attenuation, scatter, randoms, Poisson counting and precorrection.

Random numbers come from numpy's PCG64 bit generator. Every record gets its own
stream seeded by ``SeedSequence([master_seed, phantom_id, realization])`` so
records can be generated in any order and reproduce bit-exactly.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .geometry import (Augmentation, GeometryError, GeometryPreset, apply_augmentation,
                       crop_sinogram, draw_augmentation)
from .phantoms import Phantom
from .projector import SystemOperator, gaussian_blur

log = logging.getLogger(__name__)

COUNT_WINDOW = (1e5, 5e7)
POISSON_INVERSION_LIMIT = 30.0
# Counts per activity unit per mm. With 1e5-5e7 counts on the toy and paper
# grids this puts mean activities at about 0.1-10, a range in which SGD at the
# fixed learning rate trains without the output layer dying or diverging.
SENSITIVITY = 10.0


class SimulationError(ValueError):
    pass


@dataclass
class SimulationConfig:
    psf_fwhm_mm: float = 5.0
    scatter_fwhm_fraction: float = 0.4
    scatter_fraction: tuple[float, float] = (0.25, 0.05)  # normal mean, std
    randoms_fraction: tuple[float, float] = (0.20, 0.05)
    fraction_clip: tuple[float, float] = (0.05, 0.45)
    count_window: tuple[float, float] = COUNT_WINDOW
    # expected counts per unit activity per mm of path; sets the activity unit
    sensitivity: float = SENSITIVITY

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def system_operator(self, preset: GeometryPreset, psf_fwhm_mm: float | None = None) -> SystemOperator:
        """Operator in this configuration's activity unit; PSF defaults to the simulation blur."""
        psf = self.psf_fwhm_mm if psf_fwhm_mm is None else psf_fwhm_mm
        return SystemOperator(preset.grid, preset.sinogram, psf, sensitivity=self.sensitivity)


@dataclass
class NoiseLevelPlan:
    realizations: int = 9
    n_augmented: int = 3
    n_flipped: int = 1
    count_range: tuple[float, float] = (2e5, 2e7)

    def __post_init__(self):
        if not 0 <= self.n_flipped <= self.n_augmented <= self.realizations:
            raise SimulationError("need 0 <= flipped <= augmented <= realizations")
        lo, hi = self.count_range
        if not 0 < lo <= hi:
            raise SimulationError(f"bad count range {self.count_range}")

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseLevelPlan":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def draw(self, rng: np.random.Generator, n: int) -> list[tuple[float, Augmentation]]:
        """Target counts (log-uniform) and augmentation for each realization of one phantom."""
        lo, hi = self.count_range
        targets = np.exp(rng.uniform(np.log(lo), np.log(hi), size=self.realizations))
        augmented = rng.choice(self.realizations, size=self.n_augmented, replace=False)
        flipped = set(augmented[: self.n_flipped].tolist())
        entries = []
        for k in range(self.realizations):
            if k in augmented:
                aug = draw_augmentation(rng, n, flip=k in flipped)
            else:
                aug = Augmentation()
            entries.append((float(targets[k]), aug))
        return entries


@dataclass
class AcquisitionRecord:
    phantom_id: int
    realization: int
    ground_truth: np.ndarray
    mu_map: np.ndarray
    sino_trues: np.ndarray
    sino_scatter: np.ndarray
    sino_randoms: np.ndarray
    sino_total: np.ndarray
    atten_factors: np.ndarray
    total_counts: int
    target_counts: float
    scatter_fraction: float
    randoms_fraction: float
    seed: list = field(default_factory=list)
    augmentation: Augmentation = field(default_factory=Augmentation)
    discarded: bool = False

    @property
    def gamma(self) -> np.ndarray:
        return self.sino_scatter + self.sino_randoms

    @property
    def record_id(self) -> str:
        return f"p{self.phantom_id:05d}_r{self.realization:02d}"


def poisson_sample(mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Poisson draw: inversion for means below 30, rounded normal (clamped at 0) above.

    Uniforms for the small-mean entries are drawn first, then normals for the
    rest, both in C order, so the output depends only on ``mean`` and the stream.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if np.any(mean < 0) or not np.all(np.isfinite(mean)):
        raise SimulationError("Poisson means must be finite and >= 0")
    out = np.zeros(mean.shape)
    small = mean < POISSON_INVERSION_LIMIT
    lam = mean[small]
    u = rng.random(lam.shape)
    k = np.zeros(lam.shape)
    p = np.exp(-lam)
    cdf = p.copy()
    active = u > cdf
    while active.any():
        k[active] += 1
        p[active] *= lam[active] / k[active]
        cdf[active] += p[active]
        # cdf can stall one ulp short of 1 for u close to 1
        active &= (u > cdf) & (p > 0)
    out[small] = k
    lam = mean[~small]
    draw = np.rint(lam + np.sqrt(lam) * rng.standard_normal(lam.shape))
    out[~small] = np.maximum(draw, 0.0)
    return out


def attenuation_factors(mu_map: np.ndarray, opr: SystemOperator) -> np.ndarray:
    """Per-LOR survival probability ``exp(-line integral of mu)``."""
    mu_map = np.asarray(mu_map, dtype=np.float64)
    if np.any(mu_map < 0):
        raise SimulationError("attenuation map must be >= 0")
    return np.exp(-opr.geometric().forward(mu_map))


def simulate(truth: np.ndarray, mu_map: np.ndarray, target_counts: float,
             scatter_fraction: float, randoms_fraction: float, seed,
             opr: SystemOperator, scatter_fwhm_fraction: float = 0.4,
             count_window=COUNT_WINDOW, phantom_id: int = 0, realization: int = 0,
             augmentation: Augmentation | None = None) -> AcquisitionRecord:
    """Simulate one acquisition of ``truth`` with the blurring operator ``opr``.

    The expected total splits into trues, scatter and randoms in proportions
    ``(1 - sf - rf, sf, rf)`` of ``target_counts``. The returned ground truth is
    ``truth`` rescaled by the same factor as the trues, so ``trues = atten * A
    ground_truth`` holds exactly and the truth carries ``opr``'s activity unit.
    """
    truth = np.asarray(truth, dtype=np.float64)
    if np.any(truth < 0) or not truth.any():
        raise SimulationError("truth must be nonnegative and not all zero")
    sf, rf = float(scatter_fraction), float(randoms_fraction)
    if sf < 0 or rf < 0 or sf + rf >= 1:
        raise SimulationError(f"need sf, rf >= 0 and sf + rf < 1, got {sf}, {rf}")
    geom = opr.geom
    kept = geom.kept_mask()

    atten = attenuation_factors(mu_map, opr)
    shape = atten * opr.with_attenuation(None).forward(truth)
    if shape.sum() <= 0:
        raise SimulationError("truth projects to an empty sinogram")
    scale = (1.0 - sf - rf) * target_counts / shape.sum()
    trues = shape * scale

    if sf > 0:
        fwhm = scatter_fwhm_fraction * geom.n_kept * geom.radial_spacing_mm
        scatter = gaussian_blur(trues, fwhm, geom.radial_spacing_mm, axes=(1,), mode="constant")
        scatter *= kept
        scatter *= sf * target_counts / scatter.sum()
    else:
        scatter = np.zeros_like(trues)
    randoms = kept * (rf * target_counts / kept.sum())

    rng = np.random.Generator(np.random.PCG64(seed))
    total = poisson_sample(trues + scatter + randoms, rng)
    counts = int(total.sum())
    lo, hi = count_window
    seed_list = seed.entropy if isinstance(seed, np.random.SeedSequence) else seed
    return AcquisitionRecord(
        phantom_id=phantom_id, realization=realization,
        ground_truth=truth * scale, mu_map=np.asarray(mu_map, dtype=np.float64),
        sino_trues=trues, sino_scatter=scatter, sino_randoms=randoms, sino_total=total,
        atten_factors=atten, total_counts=counts, target_counts=float(target_counts),
        scatter_fraction=sf, randoms_fraction=rf, seed=seed_list,
        augmentation=augmentation or Augmentation(),
        discarded=not (lo <= counts <= hi),
    )


def precorrect_sinogram(g, gamma, atten, geom) -> np.ndarray:
    """``(g - gamma) / atten``, cropped; negative values are kept."""
    g = np.asarray(g, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    atten = np.asarray(atten, dtype=np.float64)
    kept = geom.kept_mask()
    if np.any(atten[kept] <= 0):
        raise GeometryError("attenuation factor is zero in a kept bin")
    safe = np.where(kept, atten, 1.0)
    return crop_sinogram((g - gamma) / safe, geom)


def precorrect(rec: AcquisitionRecord, geom, gamma_estimate: np.ndarray | None = None) -> np.ndarray:
    gamma = rec.gamma if gamma_estimate is None else gamma_estimate
    return precorrect_sinogram(rec.sino_total, gamma, rec.atten_factors, geom)


# --- dataset assembly ------------------------------------------------------

DEFAULT_SPLITS = (0.66, 0.14, 0.20)
SPLIT_NAMES = ("train", "val", "test")


def assign_splits(phantom_ids, fractions=DEFAULT_SPLITS, seed: int = 0) -> dict[int, str]:
    """Phantom-level split assignment, independent of the input order."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SimulationError(f"split fractions must sum to 1, got {fractions}")
    ids = sorted(set(int(p) for p in phantom_ids))
    if not ids:
        raise SimulationError("no phantoms to split")
    n = len(ids)
    n_test = int(round(fractions[2] * n))
    n_val = int(round(fractions[1] * n))
    if n >= 3:
        n_test, n_val = max(n_test, 1), max(n_val, 1)
    n_train = n - n_val - n_test
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x5B1])).permutation(n)
    labels = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    return {ids[i]: labels[rank] for rank, i in enumerate(order)}


def _draw_fraction(rng, mean_std, clip):
    return float(np.clip(rng.normal(*mean_std), *clip))


def simulate_phantom(ph: Phantom, preset: GeometryPreset, plan: NoiseLevelPlan,
                     cfg: SimulationConfig, seed: int, opr: SystemOperator | None = None):
    """All realizations of one phantom (discarded ones included, flagged)."""
    if opr is None:
        opr = cfg.system_operator(preset)
    support = preset.grid.support_mask()
    plan_rng = np.random.default_rng(np.random.SeedSequence([seed, ph.phantom_id]))
    records = []
    for k, (target, aug) in enumerate(plan.draw(plan_rng, preset.grid.n)):
        ss = np.random.SeedSequence([seed, ph.phantom_id, k])
        frac_rng = np.random.default_rng(ss.spawn(1)[0])
        sf = _draw_fraction(frac_rng, cfg.scatter_fraction, cfg.fraction_clip)
        rf = _draw_fraction(frac_rng, cfg.randoms_fraction, cfg.fraction_clip)
        act = apply_augmentation(ph.activity, aug, support)
        mu = apply_augmentation(ph.mu_map, aug, support)
        rec = simulate(act, mu, target, sf, rf, ss, opr, cfg.scatter_fwhm_fraction,
                       cfg.count_window, ph.phantom_id, k, aug)
        records.append(rec)
    return records


RASTERS = {
    "truth": ("ground_truth", "activity (sensitivity-calibrated)"),
    "mu": ("mu_map", "1/mm"),
    "total": ("sino_total", "counts"),
    "trues": ("sino_trues", "counts (expected)"),
    "scatter": ("sino_scatter", "counts (expected)"),
    "randoms": ("sino_randoms", "counts (expected)"),
    "atten": ("atten_factors", "survival probability"),
}


def save_record(rec: AcquisitionRecord, root: Path, split: str, preset: GeometryPreset) -> dict:
    """Write a record's rasters under ``root/records`` and return its manifest entry."""
    rid = rec.record_id
    rdir = Path(root) / "records" / rid
    rasters = {}
    for name, (attr, units) in RASTERS.items():
        arr = getattr(rec, attr)
        io.write_raster(rdir / name, arr, units=units)
        rasters[name] = {"file": f"records/{rid}/{name}.f32", "shape": list(arr.shape), "units": units}
    ghat = precorrect(rec, preset.sinogram)
    io.write_raster(rdir / "precorrected", ghat, units="counts / survival probability (cropped)")
    rasters["precorrected"] = {"file": f"records/{rid}/precorrected.f32",
                               "shape": list(ghat.shape), "units": "counts (precorrected)"}
    sidecar = {
        "record_id": rid,
        "phantom_id": rec.phantom_id,
        "realization": rec.realization,
        "split": split,
        "seed": rec.seed,
        "total_counts": rec.total_counts,
        "target_counts": rec.target_counts,
        "scatter_fraction": rec.scatter_fraction,
        "randoms_fraction": rec.randoms_fraction,
        "augmentation": asdict(rec.augmentation),
        "geometry": preset.to_dict(),
        "rasters": rasters,
    }
    io.write_json(rdir / "record.json", sidecar)
    return {"record_id": rid, "phantom_id": rec.phantom_id, "split": split,
            "counts": rec.total_counts, "sidecar": f"records/{rid}/record.json"}


def build_dataset(phantoms: list[Phantom], preset: GeometryPreset, root,
                  plan: NoiseLevelPlan | None = None, cfg: SimulationConfig | None = None,
                  splits=DEFAULT_SPLITS, seed: int = 0) -> dict:
    """Simulate every phantom per ``plan``, write records and ``root/manifest.json``."""
    plan = plan or NoiseLevelPlan()
    cfg = cfg or SimulationConfig()
    if len(phantoms) == 0:
        raise SimulationError("empty phantom source")
    if len(phantoms) < 3:
        raise SimulationError("need at least 3 phantoms for train/val/test splits")
    split_of = assign_splits([p.phantom_id for p in phantoms], splits, seed)
    root = Path(root)
    opr = cfg.system_operator(preset)
    entries, discarded = [], []
    for ph in sorted(phantoms, key=lambda p: p.phantom_id):
        for rec in simulate_phantom(ph, preset, plan, cfg, seed, opr):
            if rec.discarded:
                discarded.append({"record_id": rec.record_id, "counts": rec.total_counts})
                continue
            entries.append(save_record(rec, root, split_of[ph.phantom_id], preset))
    log.info("dataset: %d records kept, %d discarded", len(entries), len(discarded))
    manifest = {
        "geometry": preset.to_dict(),
        "plan": asdict(plan),
        "simulation": asdict(cfg),
        "seed": seed,
        "split_fractions": list(splits),
        "phantom_splits": {str(k): v for k, v in sorted(split_of.items())},
        "records": entries,
        "discarded": discarded,
    }
    io.write_json(root / "manifest.json", manifest)
    return manifest


def load_split(manifest_path, split: str):
    """Network inputs ``(N, 1, A, R)`` and targets ``(N, 1, n, n)`` (float32) plus entries."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    manifest = io.read_json(manifest_path)
    entries = [e for e in manifest["records"] if e["split"] == split]
    xs, ys = [], []
    for e in entries:
        side = io.read_json(root / e["sidecar"])
        r = side["rasters"]
        xs.append(io.read_f32(root / r["precorrected"]["file"], r["precorrected"]["shape"]))
        ys.append(io.read_f32(root / r["truth"]["file"], r["truth"]["shape"]))
    if not entries:
        return np.zeros((0, 1, 0, 0), np.float32), np.zeros((0, 1, 0, 0), np.float32), entries
    return np.stack(xs)[:, None], np.stack(ys)[:, None], entries


def load_record(root, entry) -> dict:
    """All rasters of one manifest entry as float64 arrays, keyed by raster name."""
    root = Path(root)
    side = io.read_json(root / entry["sidecar"])
    out = {name: io.read_f32(root / spec["file"], spec["shape"]).astype(np.float64)
           for name, spec in side["rasters"].items()}
    out["meta"] = side
    return out
