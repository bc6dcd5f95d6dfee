"""Test accuracy and the subsample-averaged accuracy curve.

For a marginal classifier the accuracy of every ``k``-class subset of the
observed label set follows from the correct-label ranks alone: observation
``(i, j)`` is classified correctly in exactly ``C(R - 1, k - 1)`` of the
``C(k1 - 1, k - 1)`` subsets of size ``k`` that contain class ``i``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .ranks import RankHistogram, ScoreTable, compute_ranks, histogram

OBSERVED = "observed"
EXTRAPOLATED = "extrapolated"


@dataclass(frozen=True)
class CurvePoint:
    k: int
    value: float
    provenance: str


@dataclass(frozen=True)
class AccuracyCurve:
    """Accuracy estimates indexed by label-set size, each tagged with its origin."""

    points: tuple
    k1: int
    r: int

    def __post_init__(self):
        for p in self.points:
            if not 0.0 <= p.value <= 1.0:
                raise ValueError(f"accuracy {p.value} at k={p.k} outside [0, 1]")
            if p.k == 1 and p.value != 1.0:
                raise ValueError("accuracy at k=1 must be 1")

    def ks(self, provenance: str | None = None) -> np.ndarray:
        return np.array([p.k for p in self.points if provenance in (None, p.provenance)], dtype=int)

    def values(self, provenance: str | None = None) -> np.ndarray:
        return np.array([p.value for p in self.points if provenance in (None, p.provenance)])

    def get(self, k: int, provenance: str = OBSERVED) -> float:
        for p in self.points:
            if p.k == k and p.provenance == provenance:
                return p.value
        raise KeyError((k, provenance))

    def extended(self, points) -> "AccuracyCurve":
        return AccuracyCurve(tuple(self.points) + tuple(points), self.k1, self.r)


def test_accuracy(h: RankHistogram) -> float:
    """Fraction of rows where the correct class outranks every other class."""
    return float(h.counts[-1]) / h.total


# keep pytest from collecting the function above as a test
test_accuracy.__test__ = False


def subset_weights(k1: int, k) -> np.ndarray:
    """``C(rho-1, k-1) / C(k1-1, k-1)`` for ``rho = 1..k1``; shape ``(len(k), k1)``.

    Evaluated through log-gamma differences so nothing overflows for large k1.
    """
    ks = np.atleast_1d(np.asarray(k, dtype=np.int64))
    rho = np.arange(1, k1 + 1, dtype=np.int64)
    out = np.zeros((ks.size, k1))
    for row, kk in enumerate(ks):
        valid = rho >= kk
        rv = rho[valid].astype(float)
        logw = (gammaln(rv) - gammaln(rv - kk + 1)) - (gammaln(k1) - gammaln(k1 - kk + 1.0))
        out[row, valid] = np.exp(logw)
    return out


def ata_values(h: RankHistogram, ks) -> np.ndarray:
    """Average test accuracy over all size-k subsets, for each k in ``ks``."""
    ks = np.atleast_1d(np.asarray(ks, dtype=np.int64))
    if ks.size and (ks.min() < 2 or ks.max() > h.k1):
        raise ValueError(f"subset sizes must lie in [2, {h.k1}], got {ks.min()}..{ks.max()}")
    out = np.empty(ks.size)
    # chunked so the weight matrix stays small for large k1
    chunk = max(1, 2_000_000 // h.k1)
    counts = h.counts.astype(float)
    for start in range(0, ks.size, chunk):
        w = subset_weights(h.k1, ks[start:start + chunk])
        out[start:start + chunk] = w @ counts / h.total
    return np.clip(out, 0.0, 1.0)


def ata_curve(h: RankHistogram, ks=None) -> AccuracyCurve:
    """Observed accuracy curve; ``ks`` defaults to ``2..k1``."""
    ks = np.arange(2, h.k1 + 1) if ks is None else np.asarray(ks, dtype=int)
    vals = ata_values(h, ks)
    pts = tuple(CurvePoint(int(k), float(v), OBSERVED) for k, v in zip(ks, vals))
    return AccuracyCurve(pts, k1=h.k1, r=h.r)


def fresh_task_accuracy(st: ScoreTable, k2: int, seed) -> float:
    """Test accuracy of one uniformly drawn ``k2``-class sub-task."""
    if not 2 <= k2 <= st.k1:
        raise ValueError(f"k2 must lie in [2, {st.k1}], got {k2}")
    rng = np.random.default_rng(seed)
    subset = np.sort(rng.choice(st.k1, size=k2, replace=False))
    return test_accuracy(histogram(compute_ranks(st.restrict(subset))))


def write_curve(path, curve: AccuracyCurve, header_lines=()) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "accuracy", "provenance"])
        for p in curve.points:
            w.writerow([p.k, format_float(p.value), p.provenance])


def read_curve(path) -> AccuracyCurve:
    pts = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        for row in reader:
            pts.append(CurvePoint(int(row["k"]), float(row["accuracy"]), row["provenance"]))
    ks = [p.k for p in pts if p.provenance == OBSERVED]
    return AccuracyCurve(tuple(pts), k1=max(ks) if ks else 0, r=0)


def format_float(x: float) -> str:
    return f"{x:.12g}"
