"""Image-quality metrics, the Poisson log-likelihood and the reconstruction timing harness."""
from __future__ import annotations

import csv
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


def mse(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {y.shape}")
    return float(np.mean(np.square(x - y)))


def rrmse(x, y_truth) -> float:
    """RMSE over the full grid divided by the mean of the truth."""
    ybar = float(np.mean(np.asarray(y_truth, dtype=np.float64)))
    if not ybar > 0:
        raise MetricError("rRMSE needs a truth image with positive mean")
    return float(np.sqrt(mse(x, y_truth)) / ybar)


def poisson_loglik(f, g, gamma, opr) -> float:
    """``sum_i g_i log(m_i) - m_i`` with ``m = A f + gamma`` (constant ``log g_i!`` dropped)."""
    mean = opr.forward(np.asarray(f, dtype=np.float64)) + gamma
    g = np.asarray(g, dtype=np.float64)
    hit = g > 0
    if np.any(mean[hit] <= 0):
        raise MetricError("nonpositive expected counts in a bin with recorded counts")
    return float(np.sum(g[hit] * np.log(mean[hit])) - np.sum(mean))


# --- benchmarking --------------------------------------------------------------

@dataclass
class BenchItem:
    """One test image: identifier, count level, truth and preloaded method inputs."""

    image_id: str
    counts: float
    truth: np.ndarray
    inputs: dict


Method = Callable[[BenchItem], np.ndarray]


def count_bins(counts, n_bins: int = 4) -> list[np.ndarray]:
    """Indices split into ``n_bins`` equally populated groups of rising count level."""
    counts = np.asarray(counts, dtype=np.float64)
    if n_bins < 1 or len(counts) < n_bins:
        raise MetricError(f"cannot form {n_bins} count bins from {len(counts)} images")
    order = np.argsort(counts, kind="stable")
    return [np.sort(b) for b in np.array_split(order, n_bins)]


def is_nonincreasing(values, max_inversions: int = 1, rel_tol: float = 0.05) -> bool:
    """True if ``values`` never rises, except for at most ``max_inversions`` small rises."""
    rises = [(b - a) / a for a, b in zip(values[:-1], values[1:]) if b > a]
    return len(rises) <= max_inversions and all(r <= rel_tol for r in rises)


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    n_bins: int = 4

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r["method"] for r in self.rows))

    def column(self, method: str, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows if r["method"] == method], dtype=np.float64)

    def summary(self) -> list[dict]:
        out = []
        for m in self.methods:
            rr, tt = self.column(m, "rrmse"), self.column(m, "time_ms")
            out.append({"method": m, "mean_rrmse": float(rr.mean()), "std_rrmse": float(rr.std()),
                        "mean_time_ms": float(tt.mean())})
        return out

    def binned(self) -> dict[str, list[dict]]:
        """Per method, mean rRMSE in each count bin (bins shared by all methods)."""
        table = {}
        for m in self.methods:
            counts, rr = self.column(m, "counts"), self.column(m, "rrmse")
            table[m] = [{"count_lo": float(counts[b].min()), "count_hi": float(counts[b].max()),
                         "mean_counts": float(counts[b].mean()), "n": int(len(b)),
                         "mean_rrmse": float(rr[b].mean())}
                        for b in count_bins(counts, min(self.n_bins, len(counts)))]
        return table

    def write_csv(self, path) -> None:
        _write(path, ["method", "image_id", "counts", "rrmse", "time_ms"], self.rows)

    def write_summary_csv(self, path) -> None:
        _write(path, ["method", "mean_rrmse", "std_rrmse", "mean_time_ms"], self.summary())

    def write_binned_csv(self, path) -> None:
        rows = [{"method": m, "bin": i, **b} for m, bins in self.binned().items()
                for i, b in enumerate(bins)]
        _write(path, ["method", "bin", "count_lo", "count_hi", "mean_counts", "n", "mean_rrmse"], rows)


def _write(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def bench(methods: Mapping[str, Method], items: Sequence[BenchItem], repetitions: int = 3,
          warmup: int = 1, n_bins: int = 4) -> EvalReport:
    """Run every method on every item; record rRMSE and median wall time per image.

    Inputs are loaded before timing, so file I/O is excluded. Methods run one
    after another in this process.
    """
    if not items:
        raise MetricError("no test images to benchmark")
    if repetitions < 1:
        raise MetricError("need at least one timed repetition")
    if len(items) < 10:
        log.warning("benchmark on only %d images", len(items))
    report = EvalReport(n_bins=n_bins)
    for name, fn in methods.items():
        for item in items:
            for _ in range(warmup):
                fn(item)
            times = []
            for _ in range(repetitions):
                t0 = time.perf_counter()
                img = fn(item)
                times.append(time.perf_counter() - t0)
            report.rows.append({"method": name, "image_id": item.image_id, "counts": float(item.counts),
                                "rrmse": rrmse(img, item.truth),
                                "time_ms": 1e3 * statistics.median(times)})
        log.info("bench %s done", name)
    return report
